//! Minimal RFC 4180 CSV writing and reading. Floats are printed with
//! the shortest round-trip representation, so outputs are byte-stable
//! for identical inputs.

use std::fmt::Write as _;

pub fn quote_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') || s.contains('\r') {
        let mut out = String::with_capacity(s.len() + 2);
        out.push('"');
        for ch in s.chars() {
            if ch == '"' {
                out.push('"');
            }
            out.push(ch);
        }
        out.push('"');
        out
    } else {
        s.to_string()
    }
}

pub struct CsvWriter {
    buf: String,
}

impl CsvWriter {
    pub fn new(header: &[&str]) -> Self {
        let mut w = CsvWriter { buf: String::new() };
        w.row_str(header);
        w
    }

    pub fn row_str(&mut self, fields: &[&str]) {
        let mut first = true;
        for f in fields {
            if !first {
                self.buf.push(',');
            }
            first = false;
            self.buf.push_str(&quote_field(f));
        }
        self.buf.push_str("\r\n");
    }

    pub fn row(&mut self, fields: &[CsvField]) {
        let strs: Vec<String> = fields.iter().map(|f| f.render()).collect();
        let refs: Vec<&str> = strs.iter().map(|s| s.as_str()).collect();
        self.row_str(&refs);
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

pub enum CsvField {
    Int(i64),
    UInt(u64),
    Float(f64),
    Str(String),
}

impl CsvField {
    fn render(&self) -> String {
        match self {
            CsvField::Int(v) => v.to_string(),
            CsvField::UInt(v) => v.to_string(),
            CsvField::Float(v) => {
                let mut s = String::new();
                write!(s, "{v}").unwrap();
                s
            }
            CsvField::Str(v) => v.clone(),
        }
    }
}

/// Parse a CSV with a header row into (header, rows of f64 columns).
pub fn parse_numeric_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), String> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| "empty csv".to_string())?
        .split(',')
        .map(|s| s.trim_matches('"').to_string())
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(header.len());
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .trim_matches('"')
                .parse()
                .map_err(|e| format!("row {}: {e}", k + 2))?;
            row.push(v);
        }
        if row.len() != header.len() {
            return Err(format!(
                "row {}: {} fields, expected {}",
                k + 2,
                row.len(),
                header.len()
            ));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// FNV-1a 64-bit content hash for artifact provenance.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoting_rules() {
        assert_eq!(quote_field("plain"), "plain");
        assert_eq!(quote_field("a,b"), "\"a,b\"");
        assert_eq!(quote_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    }

    #[test]
    fn float_round_trip() {
        let mut w = CsvWriter::new(&["x", "y"]);
        let v = 0.1 + 0.2;
        w.row(&[CsvField::Float(v), CsvField::Int(-3)]);
        let text = w.finish();
        let (_, rows) = parse_numeric_csv(&text).unwrap();
        assert_eq!(rows[0][0].to_bits(), v.to_bits());
        assert_eq!(rows[0][1], -3.0);
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), fnv1a(b"a"));
        assert_ne!(fnv1a(b"a"), fnv1a(b"b"));
    }
}
