//! Desk-scale benchmark harness: condition numbers, sparsity and
//! log-determinant accuracy, estimation statistics, and PCG iteration
//! behaviour, all emitted as CSV with a JSON sidecar. Wall-clock
//! columns are recorded for orientation and never asserted; pass
//! `timings = false` for byte-reproducible output.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use mlkrig_core::basis::{build_basis, BasisOptions};
use mlkrig_core::cov::{
    dense_condition_number, dense_cw, AssemblyPlan, CovSource,
};
use mlkrig_core::field::{sample_points, FieldSampler, Shape};
use mlkrig_core::index_set::{build_index_set, IndexSetKind};
use mlkrig_core::kernel::{cov_matrix, KernelSpec};
use mlkrig_core::mle::{mle_fit, FitStatus, LikelihoodContext, OptimizerConfig};
use mlkrig_core::par;
use mlkrig_core::predict::solve_gamma;
use mlkrig_core::sparse::{extreme_singular_values, CholPlan};
use mlkrig_core::tree::{build_tree, SplitRule};

use crate::csvio::{CsvField, CsvWriter};

fn secs(t: Instant, enabled: bool) -> f64 {
    if enabled {
        t.elapsed().as_secs_f64()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionBenchArgs {
    pub shape: Shape,
    pub n: usize,
    pub d: usize,
    pub nu: f64,
    pub rho: f64,
    pub rule: SplitRule,
    pub seed: u64,
    /// (kind, w) grid cells.
    pub grid: Vec<(IndexSetKind, u32)>,
}

/// Condition number of C and of the transformed C_W per grid cell.
pub fn bench_condition(args: &ConditionBenchArgs) -> Result<String, mlkrig_core::Error> {
    let pts = sample_points(args.shape, args.n, args.d, args.seed)?;
    let spec = KernelSpec::matern(args.nu, args.rho);
    let c = cov_matrix(&pts, &pts, &spec)?;
    let kappa_c = dense_condition_number(&c);
    let mut w = CsvWriter::new(&["kind", "w", "p", "kappa_c", "kappa_cw"]);
    for &(kind, lvl) in &args.grid {
        let trend = build_index_set(kind, args.d, lvl)?;
        let tree = build_tree(&pts, 2 * trend.len(), args.rule, args.seed)?;
        let basis = build_basis(
            &tree,
            &pts,
            &trend,
            BasisOptions {
                allow_deficient_trend: true,
                ..Default::default()
            },
        )?;
        let cw = dense_cw(&basis, &tree, &pts, &spec)?;
        let kappa_cw = dense_condition_number(&cw);
        w.row(&[
            CsvField::Str(format!("{kind:?}").to_lowercase()),
            CsvField::UInt(lvl as u64),
            CsvField::UInt(basis.p as u64),
            CsvField::Float(kappa_c),
            CsvField::Float(kappa_cw),
        ]);
    }
    Ok(w.finish())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparsityBenchArgs {
    pub shape: Shape,
    pub n: usize,
    pub d: usize,
    pub kind: IndexSetKind,
    pub w: u32,
    pub nu: f64,
    pub rho: f64,
    pub rule: SplitRule,
    pub seed: u64,
    pub level: i32,
    pub taus: Vec<f64>,
    pub allow_deficient_trend: bool,
    pub timings: bool,
}

/// Sparsity, conditioning, factor fill and log-det error per tau.
pub fn bench_sparsity(args: &SparsityBenchArgs) -> Result<String, mlkrig_core::Error> {
    let pts = sample_points(args.shape, args.n, args.d, args.seed)?;
    let spec = KernelSpec::matern(args.nu, args.rho);
    let trend = build_index_set(args.kind, args.d, args.w)?;
    let tree = build_tree(&pts, 2 * trend.len(), args.rule, args.seed)?;
    let t_ml0 = Instant::now();
    let basis = build_basis(
        &tree,
        &pts,
        &trend,
        BasisOptions {
            allow_deficient_trend: args.allow_deficient_trend,
            ..Default::default()
        },
    )?;
    let t_ml = secs(t_ml0, args.timings);
    // Dense oracle for the log determinant of the truncated block.
    let cw_dense = dense_cw(&basis, &tree, &pts, &spec)?;
    let dim = basis.rows_through_level(args.level);
    let dense_block = cw_dense.view((0, 0), (dim, dim)).into_owned();
    let dense_logdet = 2.0 * mlkrig_core::nalgebra::Cholesky::new(dense_block)
        .expect("dense block SPD")
        .l_dirty()
        .diagonal()
        .iter()
        .map(|x| x.ln())
        .sum::<f64>();

    let cov = CovSource::build(&pts, &tree.permutation, &spec)?;
    let mut w = CsvWriter::new(&[
        "n",
        "t",
        "level",
        "kappa",
        "size",
        "tau",
        "t_ml",
        "nnz_pct",
        "t_con",
        "nnz_g_pct",
        "t_chol",
        "logdet_rel_err",
    ]);
    for &tau in &args.taus {
        let t_con0 = Instant::now();
        let plan = AssemblyPlan::new(&basis, &tree, &pts, tau, args.level);
        let cwm = plan.assemble(&basis, &cov);
        let t_con = secs(t_con0, args.timings);
        let ext = extreme_singular_values(&cwm.mat);
        let kappa = ext.sigma_max / ext.sigma_min;
        let t_chol0 = Instant::now();
        // A tau truncating too hard leaves an indefinite matrix; the
        // row records NaN diagnostics instead of aborting the sweep.
        let factor = CholPlan::new(&cwm.mat, None).factor(&cwm.mat);
        let t_chol = secs(t_chol0, args.timings);
        let (nnz_g_pct, rel_err) = match &factor {
            Ok(chol) => (
                100.0 * chol.factor_nnz() as f64 / (cwm.dim as f64 * cwm.dim as f64),
                ((chol.log_det() - dense_logdet) / dense_logdet).abs(),
            ),
            Err(_) => (f64::NAN, f64::NAN),
        };
        w.row(&[
            CsvField::UInt(args.n as u64),
            CsvField::UInt(tree.t as u64),
            CsvField::Int(args.level as i64),
            CsvField::Float(if factor.is_ok() { kappa } else { f64::NAN }),
            CsvField::UInt(cwm.dim as u64),
            CsvField::Float(tau),
            CsvField::Float(t_ml),
            CsvField::Float(100.0 * cwm.sparsity()),
            CsvField::Float(t_con),
            CsvField::Float(nnz_g_pct),
            CsvField::Float(t_chol),
            CsvField::Float(rel_err),
        ]);
    }
    Ok(w.finish())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationBenchArgs {
    pub shape: Shape,
    pub n: usize,
    pub d: usize,
    pub kind: IndexSetKind,
    pub w: u32,
    pub true_nu: f64,
    pub true_rho: f64,
    pub rule: SplitRule,
    pub seed: u64,
    pub level: i32,
    pub tau: f64,
    pub replicates: usize,
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationStats {
    pub mean_bias_nu: f64,
    pub mean_bias_rho: f64,
    pub std_nu: f64,
    pub std_rho: f64,
    pub fits: Vec<(f64, f64)>,
    pub degenerate_std: bool,
}

/// Replicate fits and their bias/spread statistics.
pub fn bench_estimation_stats(
    args: &EstimationBenchArgs,
) -> Result<EstimationStats, mlkrig_core::Error> {
    let pts = sample_points(args.shape, args.n, args.d, args.seed)?;
    let trend = build_index_set(args.kind, args.d, args.w)?;
    let tree = build_tree(&pts, 2 * trend.len(), args.rule, args.seed)?;
    let basis = build_basis(&tree, &pts, &trend, BasisOptions::default())?;
    let truth = KernelSpec::matern(args.true_nu, args.true_rho);
    let sampler = FieldSampler::new(&pts, &truth, &vec![0.0; trend.len()], &trend)?;
    let ctx = LikelihoodContext::new(&basis, &tree, &pts, args.tau, args.level);

    let reps: Vec<usize> = (0..args.replicates).collect();
    let fits: Vec<Result<(f64, f64), String>> = par::map_collect(&reps, |&k| {
        let z = sampler.sample(FieldSampler::replicate_seed(args.seed, k + 1));
        match mle_fit(&ctx, &z, &args.optimizer) {
            Ok(fit) if fit.status != FitStatus::NonIdentifiable => Ok((fit.nu, fit.rho)),
            Ok(_) => Err("non-identifiable".into()),
            Err(e) => Err(e.to_string()),
        }
    });
    let good: Vec<(f64, f64)> = fits.iter().filter_map(|f| f.as_ref().ok().cloned()).collect();
    if good.is_empty() {
        return Err(mlkrig_core::Error::InfeasibleStart);
    }
    let m = good.len() as f64;
    let mean_nu = good.iter().map(|f| f.0).sum::<f64>() / m;
    let mean_rho = good.iter().map(|f| f.1).sum::<f64>() / m;
    let degenerate_std = good.len() < 2;
    let (std_nu, std_rho) = if degenerate_std {
        (0.0, 0.0)
    } else {
        (
            (good.iter().map(|f| (f.0 - mean_nu).powi(2)).sum::<f64>() / (m - 1.0)).sqrt(),
            (good.iter().map(|f| (f.1 - mean_rho).powi(2)).sum::<f64>() / (m - 1.0)).sqrt(),
        )
    };
    Ok(EstimationStats {
        mean_bias_nu: mean_nu - args.true_nu,
        mean_bias_rho: mean_rho - args.true_rho,
        std_nu,
        std_rho,
        fits: good,
        degenerate_std,
    })
}

pub fn bench_estimation(args: &EstimationBenchArgs) -> Result<String, mlkrig_core::Error> {
    let stats = bench_estimation_stats(args)?;
    let mut w = CsvWriter::new(&[
        "n",
        "w",
        "t",
        "level",
        "mean_bias_nu",
        "mean_bias_rho",
        "std_nu",
        "std_rho",
        "replicates",
        "degenerate_std",
    ]);
    let trend = build_index_set(args.kind, args.d, args.w)?;
    let pts = sample_points(args.shape, args.n, args.d, args.seed)?;
    let tree = build_tree(&pts, 2 * trend.len(), args.rule, args.seed)?;
    w.row(&[
        CsvField::UInt(args.n as u64),
        CsvField::UInt(args.w as u64),
        CsvField::UInt(tree.t as u64),
        CsvField::Int(args.level as i64),
        CsvField::Float(stats.mean_bias_nu),
        CsvField::Float(stats.mean_bias_rho),
        CsvField::Float(stats.std_nu),
        CsvField::Float(stats.std_rho),
        CsvField::UInt(stats.fits.len() as u64),
        CsvField::Str(stats.degenerate_std.to_string()),
    ]);
    Ok(w.finish())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionBenchArgs {
    pub shape: Shape,
    pub sizes: Vec<usize>,
    pub d: usize,
    pub kind: IndexSetKind,
    pub w: u32,
    pub nu: f64,
    pub rho: f64,
    pub rule: SplitRule,
    pub seed: u64,
    pub eps: f64,
    /// Compute kappa(C) densely up to this size.
    pub kappa_cap: usize,
    pub timings: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionBenchRow {
    pub n: usize,
    pub kappa_c: Option<f64>,
    pub itr: usize,
    pub itr_noprecond: usize,
    pub t_precond: f64,
    pub t_itr: f64,
    pub t_total: f64,
}

pub fn bench_prediction_rows(
    args: &PredictionBenchArgs,
) -> Result<Vec<PredictionBenchRow>, mlkrig_core::Error> {
    let spec = KernelSpec::matern(args.nu, args.rho);
    let trend = build_index_set(args.kind, args.d, args.w)?;
    let mut rows = Vec::new();
    for &n in &args.sizes {
        let pts = sample_points(args.shape, n, args.d, args.seed)?;
        let tree = build_tree(&pts, 2 * trend.len(), args.rule, args.seed)?;
        let basis = build_basis(&tree, &pts, &trend, BasisOptions::default())?;
        let sampler = FieldSampler::new(&pts, &spec, &vec![0.0; trend.len()], &trend)?;
        let z = sampler.sample(args.seed ^ 0xbeef);
        let kappa_c = if n <= args.kappa_cap {
            let c = cov_matrix(&pts, &pts, &spec)?;
            Some(dense_condition_number(&c))
        } else {
            None
        };
        let t_total0 = Instant::now();
        let t_pre0 = Instant::now();
        let cov = CovSource::build(&pts, &tree.permutation, &spec)?;
        let t_precond = secs(t_pre0, args.timings);
        let t_itr0 = Instant::now();
        let pre = solve_gamma(&basis, &cov, &z, true, args.eps, 20000)?;
        let t_itr = secs(t_itr0, args.timings);
        let unpre = solve_gamma(&basis, &cov, &z, false, args.eps, 20000)?;
        let t_total = secs(t_total0, args.timings);
        rows.push(PredictionBenchRow {
            n,
            kappa_c,
            itr: pre.iterations,
            itr_noprecond: unpre.iterations,
            t_precond,
            t_itr,
            t_total,
        });
    }
    Ok(rows)
}

pub fn bench_prediction(args: &PredictionBenchArgs) -> Result<String, mlkrig_core::Error> {
    let rows = bench_prediction_rows(args)?;
    let mut w = CsvWriter::new(&[
        "n",
        "kappa_c",
        "itr",
        "itr_noprecond",
        "t_precond",
        "t_itr",
        "t_total",
    ]);
    for r in rows {
        w.row(&[
            CsvField::UInt(r.n as u64),
            match r.kappa_c {
                Some(k) => CsvField::Float(k),
                None => CsvField::Str(String::new()),
            },
            CsvField::UInt(r.itr as u64),
            CsvField::UInt(r.itr_noprecond as u64),
            CsvField::Float(r.t_precond),
            CsvField::Float(r.t_itr),
            CsvField::Float(r.t_total),
        ]);
    }
    Ok(w.finish())
}

/// JSON sidecar payload for any bench CSV.
pub fn sidecar<T: Serialize>(args: &T, seed: u64) -> String {
    #[derive(Serialize)]
    struct Sidecar<'a, T> {
        seed: u64,
        args: &'a T,
    }
    serde_json::to_string_pretty(&Sidecar { seed, args }).expect("serialize")
}
