//! End-to-end pipeline: synthesize data, build the tree and basis,
//! assemble the sparse multi-level covariance, fit the Matern
//! parameters, and predict at held-out targets. Every artifact is
//! written with a content hash in the manifest; reruns with the same
//! config produce byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use mlkrig_core::basis::{build_basis, design_matrix_unchecked, BasisOptions};
use mlkrig_core::cov::{assemble_sparse_cw, CovSource};
use mlkrig_core::field::{sample_points, FieldSampler};
use mlkrig_core::index_set::build_index_set;
use mlkrig_core::io::{save_basis, save_matrix};
use mlkrig_core::kernel::KernelSpec;
use mlkrig_core::mle::{mle_fit, FitResult, LikelihoodContext, OptimizerConfig};
use mlkrig_core::points::PointSet;
use mlkrig_core::predict::{predict, recover_beta_with_cov, solve_gamma, DensePredictor};
use mlkrig_core::tree::build_tree;

use crate::config::PipelineConfig;
use crate::csvio::{fnv1a, CsvField, CsvWriter};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: PipelineConfig,
    /// artifact name -> (bytes, fnv1a hash, hex)
    pub artifacts: BTreeMap<String, ArtifactInfo>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactInfo {
    pub bytes: usize,
    pub fnv1a: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDocument {
    pub kernel: KernelSpec,
    pub fit: FitResult,
    pub level: i32,
    pub tau: f64,
    pub sparsity: f64,
    pub dim: usize,
    pub seed: u64,
    /// Full pipeline configuration, so prediction can rebuild the
    /// geometry from the fit document alone.
    pub config: PipelineConfig,
}

/// All pipeline artifacts as named byte buffers, in write order.
pub struct PipelineOutput {
    pub files: Vec<(String, Vec<u8>)>,
    pub fit: FitResult,
}

pub fn obs_csv(points: &PointSet, z: &[f64]) -> String {
    let d = points.dim();
    let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    header.push("z".into());
    let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut w = CsvWriter::new(&refs);
    for (i, row) in points.rows().enumerate() {
        let mut fields: Vec<CsvField> = row.iter().map(|&v| CsvField::Float(v)).collect();
        fields.push(CsvField::Float(z[i]));
        w.row(&fields);
    }
    w.finish()
}

pub fn targets_csv(points: &PointSet) -> String {
    let d = points.dim();
    let header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut w = CsvWriter::new(&refs);
    for row in points.rows() {
        let fields: Vec<CsvField> = row.iter().map(|&v| CsvField::Float(v)).collect();
        w.row(&fields);
    }
    w.finish()
}

/// Run the full pipeline in memory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput, mlkrig_core::Error> {
    let trend = build_index_set(cfg.index.kind, cfg.d, cfg.index.w)?;
    let opts = BasisOptions {
        accuracy_offset: cfg.basis.accuracy_offset,
        extended: cfg.basis.extended,
        allow_deficient_trend: cfg.basis.allow_deficient_trend,
    };
    let acc = mlkrig_core::basis::accuracy_set(&trend, opts)?;

    // Observations plus held-out targets from the same nested stream.
    let all = sample_points(cfg.shape, cfg.n + cfg.n_targets, cfg.d, cfg.seed)?;
    let obs_idx: Vec<usize> = (0..cfg.n).collect();
    let tgt_idx: Vec<usize> = (cfg.n..cfg.n + cfg.n_targets).collect();
    let points = all.subset(&obs_idx);
    let targets = all.subset(&tgt_idx);

    let beta = cfg
        .beta
        .clone()
        .unwrap_or_else(|| vec![0.0; trend.len()]);
    let sampler = FieldSampler::new(&points, &cfg.kernel, &beta, &trend)?;
    let z = sampler.sample(cfg.seed);

    let n0 = cfg.tree.n0.unwrap_or(2 * acc.len()).max(2);
    let tree = build_tree(&points, n0, cfg.tree.rule, cfg.seed)?;
    let basis = build_basis(&tree, &points, &trend, opts)?;

    let cw = assemble_sparse_cw(&basis, &tree, &points, &cfg.kernel, cfg.tau, cfg.level)?;

    // Estimation on the synthesized data.
    let ctx = LikelihoodContext::new(&basis, &tree, &points, cfg.tau, cfg.level);
    let ocfg = OptimizerConfig {
        nu0: cfg.optimizer.nu0,
        rho0: cfg.optimizer.rho0,
        tolerance: cfg.optimizer.tolerance,
        max_evaluations: cfg.optimizer.max_evaluations,
        ..Default::default()
    };
    let fit = mle_fit(&ctx, &z, &ocfg)?;
    let fitted = KernelSpec::matern(fit.nu, fit.rho);

    // Prediction at the held-out targets with the fitted parameters.
    let cov = CovSource::build(&points, &tree.permutation, &fitted)?;
    let sol = solve_gamma(&basis, &cov, &z, true, cfg.eps, 5000)?;
    let m = design_matrix_unchecked(&points, &trend);
    let beta_hat = recover_beta_with_cov(&sol.gamma, &z, &m, &basis, &cov)?;
    let dense_mse =
        (cfg.n * cfg.n <= mlkrig_core::kernel::DEFAULT_DENSE_CAP)
            .then(|| DensePredictor::new(&points, &fitted, &m))
            .transpose()?;
    let mut pred_header: Vec<String> = (0..cfg.d).map(|i| format!("x{i}")).collect();
    pred_header.push("zhat".into());
    pred_header.push("mse".into());
    let refs: Vec<&str> = pred_header.iter().map(|s| s.as_str()).collect();
    let mut pred = CsvWriter::new(&refs);
    for x0 in targets.rows() {
        let zhat = predict(x0, &beta_hat, &sol.gamma, &fitted, &points, &trend)?;
        let mut fields: Vec<CsvField> = x0.iter().map(|&v| CsvField::Float(v)).collect();
        fields.push(CsvField::Float(zhat));
        match &dense_mse {
            Some(p) => fields.push(CsvField::Float(p.mse(x0, &fitted, &points, &trend)?)),
            None => fields.push(CsvField::Str(String::new())),
        }
        pred.row(&fields);
    }

    let mut basis_bin = Vec::new();
    save_basis(&basis, &mut basis_bin)?;
    let mut cw_bin = Vec::new();
    save_matrix(&cw, &mut cw_bin)?;

    let fit_doc = FitDocument {
        kernel: fitted,
        fit: fit.clone(),
        level: cfg.level,
        tau: cfg.tau,
        sparsity: cw.sparsity(),
        dim: cw.dim,
        seed: cfg.seed,
        config: cfg.clone(),
    };

    let files: Vec<(String, Vec<u8>)> = vec![
        ("obs.csv".into(), obs_csv(&points, &z).into_bytes()),
        ("targets.csv".into(), targets_csv(&targets).into_bytes()),
        (
            "tree.json".into(),
            serde_json::to_vec_pretty(&tree.stats()).expect("serialize"),
        ),
        ("basis.bin".into(), basis_bin),
        ("cw.bin".into(), cw_bin),
        (
            "fit.json".into(),
            serde_json::to_vec_pretty(&fit_doc).expect("serialize"),
        ),
        ("pred.csv".into(), pred.finish().into_bytes()),
    ];
    Ok(PipelineOutput { files, fit })
}

/// Run and write everything (plus the manifest) under a directory.
pub fn run_pipeline_to_dir(
    cfg: &PipelineConfig,
    dir: &Path,
) -> Result<Manifest, mlkrig_core::Error> {
    let out = run_pipeline(cfg)?;
    fs::create_dir_all(dir)?;
    let mut artifacts = BTreeMap::new();
    for (name, bytes) in &out.files {
        fs::write(dir.join(name), bytes)?;
        artifacts.insert(
            name.clone(),
            ArtifactInfo {
                bytes: bytes.len(),
                fnv1a: format!("{:016x}", fnv1a(bytes)),
            },
        );
    }
    let manifest = Manifest {
        config: cfg.clone(),
        artifacts,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest).expect("serialize"),
    )?;
    Ok(manifest)
}
