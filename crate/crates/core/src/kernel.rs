//! Matern and Gaussian covariance families, anisotropic distances, and
//! dense covariance matrices / direct matrix-vector products.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bessel::{gamma, ln_bessel_k, ln_gamma};
use crate::error::{Error, Result};
use crate::par;
use crate::points::{euclidean, PointSet};

/// Default guard on dense covariance allocations (entry count).
pub const DEFAULT_DENSE_CAP: usize = 100_000_000;

/// Arguments below this are treated as the origin, where the covariance
/// is exactly one; avoids 0 * inf in the Matern prefactor.
const MATERN_ORIGIN_FLOOR: f64 = 1e-9;

/// Largest half-integer n for which the closed-form polynomial is used.
const HALF_INTEGER_MAX_N: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Matern,
    Gaussian,
}

/// Covariance specification. `rho` is the length scale; `nu` the Matern
/// smoothness. When `theta` is present the distance becomes
/// `r = ((x-y)^T diag(theta) (x-y))^(1/2)` and `rho` is ignored - the
/// two parameterizations are treated as mutually exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
}

impl KernelSpec {
    pub fn matern(nu: f64, rho: f64) -> Self {
        Self {
            family: KernelFamily::Matern,
            nu: Some(nu),
            rho,
            theta: None,
        }
    }

    pub fn gaussian(h: f64) -> Self {
        Self {
            family: KernelFamily::Gaussian,
            nu: None,
            rho: h,
            theta: None,
        }
    }

    pub fn with_theta(mut self, theta: Vec<f64>) -> Self {
        self.theta = Some(theta);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.family == KernelFamily::Matern {
            let nu = self.nu.ok_or(Error::InvalidParameter {
                name: "nu",
                reason: "matern requires a smoothness".into(),
            })?;
            if !(nu > 0.0) || !nu.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "nu",
                    reason: format!("must be positive and finite, got {nu}"),
                });
            }
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::InvalidParameter {
                name: "rho",
                reason: format!("must be positive and finite, got {}", self.rho),
            });
        }
        if let Some(theta) = &self.theta {
            if theta.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "theta",
                    reason: "all weights must be positive and finite".into(),
                });
            }
        }
        Ok(())
    }

    /// Distance between two points under this spec's metric. With
    /// anisotropic weights the scale lives in `theta`; the isotropic
    /// form divides by `rho` inside the covariance instead.
    #[inline]
    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        match &self.theta {
            Some(theta) => {
                let mut s = 0.0;
                for ((a, b), t) in x.iter().zip(y).zip(theta) {
                    let u = a - b;
                    s += t * u * u;
                }
                s.sqrt()
            }
            None => euclidean(x, y),
        }
    }

    /// Effective length scale applied to distances: 1 when anisotropic.
    #[inline]
    fn scale(&self) -> f64 {
        if self.theta.is_some() {
            1.0
        } else {
            self.rho
        }
    }

    pub fn prepare(&self) -> Result<PreparedKernel> {
        self.validate()?;
        Ok(PreparedKernel::new(self))
    }
}

/// Weighted Euclidean distance `((x-y)^T diag(theta) (x-y))^(1/2)`.
pub fn aniso_distance(x: &[f64], y: &[f64], theta: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len().max(theta.len()),
        });
    }
    if theta.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidParameter {
            name: "theta",
            reason: "weights must be positive".into(),
        });
    }
    let mut s = 0.0;
    for ((a, b), t) in x.iter().zip(y).zip(theta) {
        let u = a - b;
        s += t * u * u;
    }
    Ok(s.sqrt())
}

/// Matern covariance at distance `r >= 0`.
pub fn matern(r: f64, nu: f64, rho: f64) -> Result<f64> {
    if !r.is_finite() || r < 0.0 {
        return Err(Error::InvalidParameter {
            name: "r",
            reason: format!("distance must be finite and nonnegative, got {r}"),
        });
    }
    let spec = KernelSpec::matern(nu, rho);
    Ok(spec.prepare()?.eval(r))
}

/// Gaussian covariance `exp(-r^2 / (2 h^2))`.
pub fn gaussian(r: f64, h: f64) -> f64 {
    (-r * r / (2.0 * h * h)).exp()
}

enum MaternPath {
    /// nu = n + 1/2: exponential times a degree-n polynomial.
    HalfInteger { coeffs: Vec<f64>, lead: f64 },
    /// General order through ln K_nu.
    General { ln_pref: f64 },
}

/// A covariance spec with every order-dependent constant precomputed,
/// for tight evaluation loops.
pub struct PreparedKernel {
    family: KernelFamily,
    scale: f64,
    sqrt2nu: f64,
    nu: f64,
    path: Option<MaternPath>,
}

impl PreparedKernel {
    fn new(spec: &KernelSpec) -> Self {
        match spec.family {
            KernelFamily::Gaussian => PreparedKernel {
                family: KernelFamily::Gaussian,
                scale: spec.scale(),
                sqrt2nu: 0.0,
                nu: 0.0,
                path: None,
            },
            KernelFamily::Matern => {
                let nu = spec.nu.expect("validated");
                let half = nu - 0.5;
                let path = if half >= 0.0 && half.fract() == 0.0 && half <= HALF_INTEGER_MAX_N as f64
                {
                    let n = half as u32;
                    // phi(z) = exp(-z) * [Gamma(n+1)/Gamma(2n+1)] *
                    //          sum_{i=0..n} (n+i)!/(i!(n-i)!) (2z)^(n-i)
                    let lead = gamma(n as f64 + 1.0) / gamma(2.0 * n as f64 + 1.0);
                    let coeffs: Vec<f64> = (0..=n)
                        .map(|i| {
                            (ln_gamma((n + i) as f64 + 1.0)
                                - ln_gamma(i as f64 + 1.0)
                                - ln_gamma((n - i) as f64 + 1.0))
                            .exp()
                        })
                        .collect();
                    MaternPath::HalfInteger { coeffs, lead }
                } else {
                    MaternPath::General {
                        ln_pref: -ln_gamma(nu) - (nu - 1.0) * std::f64::consts::LN_2,
                    }
                };
                PreparedKernel {
                    family: KernelFamily::Matern,
                    scale: spec.scale(),
                    sqrt2nu: (2.0 * nu).sqrt(),
                    nu,
                    path: Some(path),
                }
            }
        }
    }

    /// Covariance value at (metric) distance r.
    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                let u = r / self.scale;
                (-0.5 * u * u).exp()
            }
            KernelFamily::Matern => {
                let z = self.sqrt2nu * r / self.scale;
                if z < MATERN_ORIGIN_FLOOR {
                    return 1.0;
                }
                match self.path.as_ref().expect("matern path") {
                    MaternPath::HalfInteger { coeffs, lead } => {
                        let two_z = 2.0 * z;
                        // poly = sum_i coeffs[i] (2z)^(n-i); coeffs[0]
                        // carries the highest power, so Horner runs in
                        // storage order.
                        let mut poly = 0.0;
                        for &c in coeffs.iter() {
                            poly = poly * two_z + c;
                        }
                        // Rounding can push the value a hair over 1 near
                        // the origin; the covariance never exceeds 1.
                        (lead * poly * (-z).exp()).min(1.0)
                    }
                    MaternPath::General { ln_pref } => {
                        let ln_phi = ln_pref + self.nu * z.ln() + ln_bessel_k(self.nu, z);
                        ln_phi.exp().min(1.0)
                    }
                }
            }
        }
    }
}

/// Force the general Bessel route even at half-integer orders; used to
/// cross-check the closed forms.
#[cfg(test)]
fn matern_general(r: f64, nu: f64, rho: f64) -> f64 {
    let z = (2.0 * nu).sqrt() * r / rho;
    if z < MATERN_ORIGIN_FLOOR {
        return 1.0;
    }
    let ln_pref = -ln_gamma(nu) - (nu - 1.0) * std::f64::consts::LN_2;
    (ln_pref + nu * z.ln() + ln_bessel_k(nu, z)).exp()
}

/// Dense covariance matrix between two point sets.
pub fn cov_matrix(pts_a: &PointSet, pts_b: &PointSet, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    cov_matrix_capped(pts_a, pts_b, spec, DEFAULT_DENSE_CAP)
}

pub fn cov_matrix_capped(
    pts_a: &PointSet,
    pts_b: &PointSet,
    spec: &KernelSpec,
    cap: usize,
) -> Result<DMatrix<f64>> {
    if pts_a.is_empty() || pts_b.is_empty() {
        return Err(Error::InvalidParameter {
            name: "points",
            reason: "point sets must be non-empty".into(),
        });
    }
    if pts_a.dim() != pts_b.dim() {
        return Err(Error::DimensionMismatch {
            expected: pts_a.dim(),
            got: pts_b.dim(),
        });
    }
    let (na, nb) = (pts_a.len(), pts_b.len());
    if na.saturating_mul(nb) > cap {
        return Err(Error::DenseCap {
            rows: na,
            cols: nb,
            cap,
        });
    }
    let kernel = spec.prepare()?;
    // Row-major fill, parallel over row blocks; entries depend only on
    // their own pair so the result is thread-count independent.
    let mut data = vec![0.0f64; na * nb];
    par::for_each_indexed_chunk(&mut data, nb, |start, slab| {
        let i = start / nb;
        let xi = pts_a.row(i);
        for (j, out) in slab.iter_mut().enumerate() {
            *out = kernel.eval(spec.distance(xi, pts_b.row(j)));
        }
    });
    Ok(DMatrix::from_row_slice(na, nb, &data))
}

/// Direct O(N^2) covariance matrix-vector product, no materialization.
pub fn cov_matvec(points: &PointSet, spec: &KernelSpec, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != points.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            got: v.len(),
        });
    }
    let kernel = spec.prepare()?;
    let idx: Vec<usize> = (0..points.len()).collect();
    Ok(par::map_collect(&idx, |&i| {
        let xi = points.row(i);
        let mut acc = 0.0;
        for (j, &vj) in v.iter().enumerate() {
            acc += kernel.eval(spec.distance(xi, points.row(j))) * vj;
        }
        acc
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::sample_points;
    use crate::field::Shape;

    #[test]
    fn matern_at_origin_is_one() {
        for nu in [0.4, 0.5, 1.0, 1.25, 2.5, 7.3] {
            for rho in [0.1, 1.0, 25.0] {
                assert_eq!(matern(0.0, nu, rho).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn matern_half_is_exponential() {
        for rho in [0.5, 1.0, 3.0] {
            let mut r = 1e-3;
            while r < 20.0 {
                let got = matern(r, 0.5, rho).unwrap();
                let want = (-r / rho).exp();
                assert!((got - want).abs() <= 1e-12 * want.abs() + 1e-300);
                r *= 2.3;
            }
        }
    }

    #[test]
    fn general_path_matches_half_integer_closed_forms() {
        for nu in [0.5, 1.5, 2.5] {
            let mut q = 1e-3;
            while q <= 50.0 {
                let r = q; // rho = 1
                let spec = KernelSpec::matern(nu, 1.0);
                let closed = spec.prepare().unwrap().eval(r);
                let general = matern_general(r, nu, 1.0);
                if closed > 1e-280 {
                    assert!(
                        (closed - general).abs() <= 1e-10 * closed.abs(),
                        "nu={nu} r={r}: closed={closed} general={general}"
                    );
                }
                q *= 1.9;
            }
        }
    }

    #[test]
    fn gaussian_limit_of_matern() {
        let r = 0.3;
        let g = gaussian(r, 1.0);
        let errs: Vec<f64> = [5.0, 10.0, 50.0]
            .iter()
            .map(|&nu| (matern(r, nu, 1.0).unwrap() - g).abs())
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        assert!(errs[2] < 2e-3);
    }

    #[test]
    fn matern_monotone_decreasing() {
        for (nu, rho) in [(0.5, 1.0), (1.0, 10.0), (1.25, 1.0), (2.7, 0.5)] {
            let k = KernelSpec::matern(nu, rho).prepare().unwrap();
            let mut prev = k.eval(0.0);
            assert_eq!(prev, 1.0);
            let mut r = 1e-4;
            while r < 40.0 {
                let v = k.eval(r);
                assert!(v <= prev + 1e-15, "nu={nu} rho={rho} r={r}");
                prev = v;
                r *= 1.4;
            }
            assert!(k.eval(400.0 * rho) < 1e-10);
        }
    }

    #[test]
    fn aniso_distance_cases() {
        assert_eq!(aniso_distance(&[1.0, 2.0], &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(aniso_distance(&[1.0, 0.0], &[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        let d = aniso_distance(&[1.0, 1.0], &[0.0, 0.0], &[4.0, 9.0]).unwrap();
        assert!((d - 13f64.sqrt()).abs() < 1e-15);
        assert!(aniso_distance(&[1.0], &[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matern(f64::NAN, 1.0, 1.0).is_err());
        assert!(matern(f64::INFINITY, 1.0, 1.0).is_err());
        assert!(matern(1.0, -1.0, 1.0).is_err());
        assert!(matern(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn cov_matrix_trivial_cases() {
        let single = PointSet::from_rows(&[vec![0.3, 0.7]]).unwrap();
        let spec = KernelSpec::matern(1.0, 1.0);
        let m = cov_matrix(&single, &single, &spec).unwrap();
        assert_eq!(m.nrows(), 1);
        assert_eq!(m[(0, 0)], 1.0);

        let twin = PointSet::from_rows(&[vec![0.3, 0.7], vec![0.3, 0.7]]).unwrap();
        let m = cov_matrix(&twin, &twin, &spec).unwrap();
        for v in m.iter() {
            assert_eq!(*v, 1.0);
        }
    }

    #[test]
    fn cov_matrix_is_psd_and_spd_on_distinct_points() {
        let pts = sample_points(Shape::Cube, 60, 3, 99).unwrap();
        for (nu, rho) in [(0.5, 1.0), (1.0, 10.0), (1.25, 1.0)] {
            let spec = KernelSpec::matern(nu, rho);
            let m = cov_matrix(&pts, &pts, &spec).unwrap();
            assert_eq!(m.transpose(), m);
            let eig = m.clone().symmetric_eigenvalues();
            let max = eig.iter().cloned().fold(f64::MIN, f64::max);
            let min = eig.iter().cloned().fold(f64::MAX, f64::min);
            assert!(min >= -1e-12 * max, "nu={nu} rho={rho} min={min}");
            assert!(
                nalgebra::Cholesky::new(m).is_some(),
                "nu={nu} rho={rho} should be SPD"
            );
        }
    }

    #[test]
    fn matvec_agrees_with_dense() {
        let pts = sample_points(Shape::Sphere, 500, 3, 5).unwrap();
        let spec = KernelSpec::matern(0.75, 0.5);
        let mut v = vec![0.0; 500];
        let mut s = 0.123f64;
        for x in v.iter_mut() {
            s = (s * 1103.515_245 + 12.345).fract();
            *x = s - 0.5;
        }
        let direct = cov_matvec(&pts, &spec, &v).unwrap();
        let dense = cov_matrix(&pts, &pts, &spec).unwrap();
        let dv = &dense * nalgebra::DVector::from_column_slice(&v);
        let num: f64 = direct
            .iter()
            .zip(dv.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(num / den <= 1e-12);
    }

    #[test]
    fn matvec_trivial() {
        let pts = sample_points(Shape::Cube, 8, 2, 1).unwrap();
        let spec = KernelSpec::matern(0.5, 1.0);
        let zero = cov_matvec(&pts, &spec, &vec![0.0; 8]).unwrap();
        assert!(zero.iter().all(|&x| x == 0.0));
        let one_pt = PointSet::from_rows(&[vec![0.1, 0.2]]).unwrap();
        let out = cov_matvec(&one_pt, &spec, &[3.5]).unwrap();
        assert_eq!(out, vec![3.5]);
    }

    #[test]
    fn dense_cap_guard() {
        let pts = sample_points(Shape::Cube, 101, 2, 3).unwrap();
        let spec = KernelSpec::matern(0.5, 1.0);
        assert!(matches!(
            cov_matrix_capped(&pts, &pts, &spec, 10_000),
            Err(Error::DenseCap { .. })
        ));
    }

    #[test]
    fn kernel_spec_json_round_trip() {
        let spec = KernelSpec::matern(1.25, 1.0);
        let s = serde_json::to_string(&spec).unwrap();
        assert_eq!(s, r#"{"family":"matern","nu":1.25,"rho":1.0}"#);
        let back: KernelSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, spec);
    }
}
