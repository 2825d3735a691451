use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mlkrig_cli::bench::{
    bench_condition, bench_estimation, bench_prediction, bench_sparsity, sidecar,
    ConditionBenchArgs, EstimationBenchArgs, PredictionBenchArgs, SparsityBenchArgs,
};
use mlkrig_cli::config::{parse_config, PipelineConfig};
use mlkrig_cli::csvio::{parse_numeric_csv, CsvField, CsvWriter};
use mlkrig_cli::exit_code_for;
use mlkrig_cli::pipeline::{obs_csv, run_pipeline_to_dir, FitDocument};
use mlkrig_core::basis::{build_basis, design_matrix_unchecked, BasisOptions};
use mlkrig_core::bounds::{
    inverse_perturbation_bound, matern_pair_bounds, matrix_error_bound, BoundReport, DecayRegime,
    MeasuredGaps,
};
use mlkrig_core::cov::{assemble_sparse_cw, dense_cw, spectral_norm, CovSource};
use mlkrig_core::field::{sample_field, sample_points, Shape};
use mlkrig_core::index_set::{build_index_set, IndexSetKind};
use mlkrig_core::io::{save_basis, save_matrix, to_matrix_market};
use mlkrig_core::kernel::KernelSpec;
use mlkrig_core::mle::{mle_fit, LikelihoodContext, OptimizerConfig};
use mlkrig_core::points::PointSet;
use mlkrig_core::predict::{predict, recover_beta_with_cov, solve_gamma, DensePredictor};
use mlkrig_core::sparse::extreme_singular_values;
use mlkrig_core::tree::build_tree;

#[derive(Parser)]
#[command(
    name = "mlkrig",
    about = "Multi-level kriging workbench: synthesis, estimation, prediction and benchmarks"
)]
struct Cli {
    /// Override the seed of any config or flag.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_parser = parse_shape)]
    shape: Shape,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    nu: f64,
    #[arg(long)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trend index set kind for the synthesis trend (with --w).
    #[arg(long, default_value = "td", value_parser = parse_kind)]
    index_kind: IndexSetKind,
    #[arg(long, default_value_t = 0)]
    w: u32,
    /// Comma-separated trend coefficients (defaults to zeros).
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic observations (csv: coordinates + z).
    Gen(GenArgs),
    /// Print index-set cardinality (optionally the indices).
    Indexset {
        #[arg(long, value_parser = parse_kind)]
        kind: IndexSetKind,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        w: u32,
        /// Print the indices themselves.
        #[arg(long)]
        print: bool,
        /// Write the set as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Build the partition tree and dump stats as JSON.
    Tree {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        stats: bool,
    },
    /// Build the multi-level basis and write the binary container.
    Basis {
        #[arg(long)]
        config: PathBuf,
    },
    /// Assemble the sparse multi-level covariance.
    Assemble {
        #[arg(long)]
        config: PathBuf,
        /// Also write a MatrixMarket text file.
        #[arg(long)]
        mtx: bool,
    },
    /// Fit Matern parameters on observations.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict at target locations from a fit document.
    Predict {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Geometry config; defaults to the copy in the fit document.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Include the dense-path mean squared error column.
        #[arg(long)]
        mse: bool,
    },
    /// Evaluate the a-posteriori bound machinery.
    Bounds {
        #[arg(long)]
        config: PathBuf,
        /// Also measure the truncation gap with a dense oracle.
        #[arg(long)]
        measure: bool,
    },
    /// Run the full pipeline from a config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Condition-number grid over (kind, w).
    BenchCondition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sparsity / log-det error over a tau sweep.
    BenchSparsity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replicate estimation statistics.
    BenchEstimation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// PCG iteration counts with and without the preconditioner.
    BenchPrediction {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_shape(s: &str) -> Result<Shape, String> {
    match s {
        "cube" => Ok(Shape::Cube),
        "sphere" => Ok(Shape::Sphere),
        _ => Err("shape must be cube or sphere".into()),
    }
}

fn parse_kind(s: &str) -> Result<IndexSetKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| "kind must be one of tp, td, sm, hc, extended_td, extended_sm, extended_hc".into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    #[cfg(feature = "parallel")]
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .ok();
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}

enum CliError {
    Config(String),
    Core(mlkrig_core::Error),
}

impl From<mlkrig_core::Error> for CliError {
    fn from(e: mlkrig_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(mlkrig_core::Error::Io(e))
    }
}

fn load_config(path: &PathBuf, seed_override: Option<u64>) -> Result<PipelineConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config(&text).map_err(CliError::Config)?;
    if let Some(s) = seed_override {
        cfg.seed = s;
    }
    Ok(cfg)
}

struct Built {
    points: PointSet,
    trend: mlkrig_core::index_set::MultiIndexSet,
    tree: mlkrig_core::tree::PartitionTree,
    basis: mlkrig_core::basis::MultiLevelBasis,
}

fn build_geometry(cfg: &PipelineConfig) -> Result<Built, CliError> {
    let trend = build_index_set(cfg.index.kind, cfg.d, cfg.index.w)?;
    let opts = BasisOptions {
        accuracy_offset: cfg.basis.accuracy_offset,
        extended: cfg.basis.extended,
        allow_deficient_trend: cfg.basis.allow_deficient_trend,
    };
    let acc = mlkrig_core::basis::accuracy_set(&trend, opts)?;
    let points = sample_points(cfg.shape, cfg.n, cfg.d, cfg.seed)?;
    let n0 = cfg.tree.n0.unwrap_or(2 * acc.len()).max(2);
    let tree = build_tree(&points, n0, cfg.tree.rule, cfg.seed)?;
    let basis = build_basis(&tree, &points, &trend, opts)?;
    Ok(Built {
        points,
        trend,
        tree,
        basis,
    })
}

fn geometry_from_observations(
    cfg: &PipelineConfig,
    points: PointSet,
) -> Result<Built, CliError> {
    let trend = build_index_set(cfg.index.kind, cfg.d, cfg.index.w)?;
    let opts = BasisOptions {
        accuracy_offset: cfg.basis.accuracy_offset,
        extended: cfg.basis.extended,
        allow_deficient_trend: cfg.basis.allow_deficient_trend,
    };
    let acc = mlkrig_core::basis::accuracy_set(&trend, opts)?;
    let n0 = cfg.tree.n0.unwrap_or(2 * acc.len()).max(2);
    let tree = build_tree(&points, n0, cfg.tree.rule, cfg.seed)?;
    let basis = build_basis(&tree, &points, &trend, opts)?;
    Ok(Built {
        points,
        trend,
        tree,
        basis,
    })
}

fn read_observations(path: &PathBuf, d: usize) -> Result<(PointSet, Vec<f64>), CliError> {
    let text = fs::read_to_string(path)?;
    let (_, rows) = parse_numeric_csv(&text).map_err(CliError::Config)?;
    let mut coords = Vec::new();
    let mut z = Vec::new();
    for row in &rows {
        if row.len() != d + 1 {
            return Err(CliError::Config(format!(
                "data: expected {} columns, got {}",
                d + 1,
                row.len()
            )));
        }
        coords.push(row[..d].to_vec());
        z.push(row[d]);
    }
    Ok((PointSet::from_rows(&coords).map_err(CliError::Core)?, z))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let out_dir = cli.out_dir.clone();
    fs::create_dir_all(&out_dir)?;
    match cli.command {
        Command::Gen(args) => {
            let seed = cli.seed.unwrap_or(args.seed);
            let pts = sample_points(args.shape, args.n, args.d, seed)?;
            let trend = build_index_set(args.index_kind, args.d, args.w)?;
            let beta = match &args.beta {
                Some(text) => text
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| CliError::Config(format!("beta: {e}")))?,
                None => vec![0.0; trend.len()],
            };
            let spec = KernelSpec::matern(args.nu, args.rho);
            let (z, diag) = sample_field(&pts, &spec, &beta, &trend, seed)?;
            if let Some(j) = diag.jitter {
                eprintln!("note: diagonal jitter {j:.3e} applied during sampling");
            }
            fs::write(out_dir.join(&args.out), obs_csv(&pts, &z))?;
            println!("wrote {} observations to {}", args.n, args.out.display());
        }
        Command::Indexset {
            kind,
            d,
            w,
            print,
            json,
        } => {
            let set = build_index_set(kind, d, w)?;
            println!("kind={kind:?} d={d} w={w} cardinality={}", set.len());
            if print {
                for p in &set.indices {
                    println!("{p:?}");
                }
            }
            if let Some(path) = json {
                fs::write(
                    out_dir.join(path),
                    serde_json::to_vec_pretty(&set).expect("serialize"),
                )?;
            }
        }
        Command::Tree { config, stats } => {
            let cfg = load_config(&config, cli.seed)?;
            let built = build_geometry(&cfg)?;
            let s = built.tree.stats();
            if stats {
                println!("{}", serde_json::to_string_pretty(&s).expect("serialize"));
            }
            fs::write(
                out_dir.join("tree.json"),
                serde_json::to_vec_pretty(&s).expect("serialize"),
            )?;
        }
        Command::Basis { config } => {
            let cfg = load_config(&config, cli.seed)?;
            let built = build_geometry(&cfg)?;
            let mut buf = Vec::new();
            save_basis(&built.basis, &mut buf)?;
            fs::write(out_dir.join("basis.bin"), &buf)?;
            println!(
                "basis: N={} p={} p~={} t={} detail rows={}",
                built.basis.n,
                built.basis.p,
                built.basis.p_tilde,
                built.basis.t,
                built.basis.n_detail()
            );
        }
        Command::Assemble { config, mtx } => {
            let cfg = load_config(&config, cli.seed)?;
            let built = build_geometry(&cfg)?;
            let cw = assemble_sparse_cw(
                &built.basis,
                &built.tree,
                &built.points,
                &cfg.kernel,
                cfg.tau,
                cfg.level,
            )?;
            let mut buf = Vec::new();
            save_matrix(&cw, &mut buf)?;
            fs::write(out_dir.join("cw.bin"), &buf)?;
            if mtx {
                fs::write(out_dir.join("cw.mtx"), to_matrix_market(&cw))?;
            }
            println!(
                "assembled dim={} nnz={} sparsity={:.3}%",
                cw.dim,
                cw.nnz(),
                100.0 * cw.sparsity()
            );
        }
        Command::Estimate { config, data, out } => {
            let cfg = load_config(&config, cli.seed)?;
            let (points, z) = read_observations(&data, cfg.d)?;
            let built = geometry_from_observations(&cfg, points)?;
            let ctx = LikelihoodContext::new(
                &built.basis,
                &built.tree,
                &built.points,
                cfg.tau,
                cfg.level,
            );
            let ocfg = OptimizerConfig {
                nu0: cfg.optimizer.nu0,
                rho0: cfg.optimizer.rho0,
                tolerance: cfg.optimizer.tolerance,
                max_evaluations: cfg.optimizer.max_evaluations,
                ..Default::default()
            };
            let fit = mle_fit(&ctx, &z, &ocfg)?;
            let doc = FitDocument {
                kernel: KernelSpec::matern(fit.nu, fit.rho),
                fit,
                level: cfg.level,
                tau: cfg.tau,
                sparsity: ctx.sparsity(),
                dim: ctx.dim(),
                seed: cfg.seed,
                config: cfg.clone(),
            };
            fs::write(
                out_dir.join(&out),
                serde_json::to_vec_pretty(&doc).expect("serialize"),
            )?;
            println!(
                "fit: nu={:.6} rho={:.6} evaluations={} status={:?}",
                doc.fit.nu, doc.fit.rho, doc.fit.evaluations, doc.fit.status
            );
        }
        Command::Predict {
            fit,
            data,
            targets,
            out,
            config,
            mse,
        } => {
            let doc: FitDocument = serde_json::from_slice(&fs::read(&fit)?)
                .map_err(|e| CliError::Config(format!("fit: {e}")))?;
            let cfg = match &config {
                Some(path) => load_config(path, cli.seed)?,
                None => doc.config.clone(),
            };
            let (points, z) = read_observations(&data, cfg.d)?;
            let built = geometry_from_observations(&cfg, points)?;
            let text = fs::read_to_string(&targets)?;
            let (_, t_rows) = parse_numeric_csv(&text).map_err(CliError::Config)?;
            let cov = CovSource::build(&built.points, &built.tree.permutation, &doc.kernel)?;
            let sol = solve_gamma(&built.basis, &cov, &z, true, cfg.eps, 20000)?;
            let m = design_matrix_unchecked(&built.points, &built.trend);
            let beta = recover_beta_with_cov(&sol.gamma, &z, &m, &built.basis, &cov)?;
            let dense = if mse {
                Some(DensePredictor::new(&built.points, &doc.kernel, &m)?)
            } else {
                None
            };
            let mut header: Vec<String> = (0..cfg.d).map(|i| format!("x{i}")).collect();
            header.push("zhat".into());
            if mse {
                header.push("mse".into());
            }
            let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
            let mut w = CsvWriter::new(&refs);
            for row in &t_rows {
                if row.len() != cfg.d {
                    return Err(CliError::Config(format!(
                        "targets: expected {} columns, got {}",
                        cfg.d,
                        row.len()
                    )));
                }
                let zhat = predict(
                    row,
                    &beta,
                    &sol.gamma,
                    &doc.kernel,
                    &built.points,
                    &built.trend,
                )?;
                let mut fields: Vec<CsvField> =
                    row.iter().map(|&v| CsvField::Float(v)).collect();
                fields.push(CsvField::Float(zhat));
                if let Some(p) = &dense {
                    fields.push(CsvField::Float(p.mse(
                        row,
                        &doc.kernel,
                        &built.points,
                        &built.trend,
                    )?));
                }
                w.row(&fields);
            }
            fs::write(out_dir.join(&out), w.finish())?;
            #[derive(serde::Serialize)]
            struct SolverDiagnostics<'a> {
                iterations: usize,
                residual: f64,
                residual_history: &'a [f64],
                preconditioned: bool,
            }
            fs::write(
                out_dir.join("solver.json"),
                serde_json::to_vec_pretty(&SolverDiagnostics {
                    iterations: sol.iterations,
                    residual: sol.residual,
                    residual_history: &sol.residual_history,
                    preconditioned: sol.preconditioned,
                })
                .expect("serialize"),
            )?;
            println!(
                "predicted {} targets in {} PCG iterations",
                t_rows.len(),
                sol.iterations
            );
        }
        Command::Bounds { config, measure } => {
            let cfg = load_config(&config, cli.seed)?;
            let report = bounds_report(&cfg, measure)?;
            let path = out_dir.join("bounds.json");
            fs::write(&path, serde_json::to_vec_pretty(&report).expect("serialize"))?;
            println!(
                "bound report: regime={:?} matrix bound={:.6e} -> {}",
                report.regime,
                report.matrix_bound,
                path.display()
            );
        }
        Command::Run { config } => {
            let cfg = load_config(&config, cli.seed)?;
            let manifest = run_pipeline_to_dir(&cfg, &out_dir)?;
            println!(
                "pipeline complete: {} artifacts in {}",
                manifest.artifacts.len(),
                out_dir.display()
            );
        }
        Command::BenchCondition { config, out } => {
            let text = fs::read_to_string(&config)?;
            let args: ConditionBenchArgs =
                serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
            let csv = bench_condition(&args)?;
            fs::write(out_dir.join(&out), &csv)?;
            fs::write(
                out_dir.join(format!("{}.json", out.display())),
                sidecar(&args, args.seed),
            )?;
        }
        Command::BenchSparsity { config, out } => {
            let text = fs::read_to_string(&config)?;
            let args: SparsityBenchArgs =
                serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
            let csv = bench_sparsity(&args)?;
            fs::write(out_dir.join(&out), &csv)?;
            fs::write(
                out_dir.join(format!("{}.json", out.display())),
                sidecar(&args, args.seed),
            )?;
        }
        Command::BenchEstimation { config, out } => {
            let text = fs::read_to_string(&config)?;
            let args: EstimationBenchArgs =
                serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
            let csv = bench_estimation(&args)?;
            fs::write(out_dir.join(&out), &csv)?;
            fs::write(
                out_dir.join(format!("{}.json", out.display())),
                sidecar(&args, args.seed),
            )?;
        }
        Command::BenchPrediction { config, out } => {
            let text = fs::read_to_string(&config)?;
            let args: PredictionBenchArgs =
                serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
            let csv = bench_prediction(&args)?;
            fs::write(out_dir.join(&out), &csv)?;
            fs::write(
                out_dir.join(format!("{}.json", out.display())),
                sidecar(&args, args.seed),
            )?;
        }
    }
    Ok(())
}

fn bounds_report(cfg: &PipelineConfig, measure: bool) -> Result<BoundReport, CliError> {
    let built = build_geometry(cfg)?;
    let t = built.tree.t;
    let w_plus_a = cfg.index.w + cfg.basis.accuracy_offset;
    let nu = cfg.kernel.nu.unwrap_or(0.5);
    let theta = cfg
        .kernel
        .theta
        .clone()
        .unwrap_or_else(|| vec![1.0; cfg.d]);
    let half = nu - 0.5;
    if half < 0.0 || half.fract().abs() > 1e-12 {
        return Err(CliError::Config(
            "bounds: the Matern extension bound needs a half-integer nu".into(),
        ));
    }
    let pairs = matern_pair_bounds(cfg.tau, t, cfg.level, cfg.d, nu, &theta, w_plus_a);
    let matrix_bound = matrix_error_bound(cfg.level, t, built.basis.p_tilde, &pairs);
    let regime = if w_plus_a as f64 > cfg.d as f64 / std::f64::consts::LN_2 {
        DecayRegime::SubExponential
    } else {
        DecayRegime::Algebraic
    };
    let measured = if measure && cfg.n <= 1500 {
        let dense = dense_cw(&built.basis, &built.tree, &built.points, &cfg.kernel)?;
        let sparse = assemble_sparse_cw(
            &built.basis,
            &built.tree,
            &built.points,
            &cfg.kernel,
            cfg.tau,
            cfg.level,
        )?;
        let dim = sparse.dim;
        let dense_block = dense.view((0, 0), (dim, dim)).into_owned();
        let (e_max, e_two) = mlkrig_core::cov::truncation_gap(&dense_block, &sparse);
        let ext = extreme_singular_values(&sparse.mat);
        // An indefinite truncation (nonpositive smallest Ritz value)
        // has no inverse-perturbation bound; report it out of regime.
        let ip = if ext.sigma_min > 0.0 {
            inverse_perturbation_bound(ext.sigma_min, ext.sigma_max, e_two)
        } else {
            mlkrig_core::bounds::InversePerturbationBound {
                bound: f64::INFINITY,
                in_regime: false,
            }
        };
        let gap = {
            let a = dense_block.clone().try_inverse();
            let b = sparse.to_dense().try_inverse();
            match (a, b) {
                (Some(a), Some(b)) => spectral_norm(&(a - b)),
                _ => f64::NAN,
            }
        };
        Some(MeasuredGaps {
            e_two_norm: e_two,
            e_max_norm: e_max,
            sigma_min: ext.sigma_min,
            sigma_max: ext.sigma_max,
            inverse_gap: gap,
            inverse_bound: ip.bound,
            in_regime: ip.in_regime,
        })
    } else {
        None
    };
    Ok(BoundReport {
        regime,
        d: cfg.d,
        w_plus_a,
        t,
        level_n: cfg.level,
        p_tilde: built.basis.p_tilde,
        tau: cfg.tau,
        pair_bounds: pairs,
        matrix_bound,
        measured,
    })
}
