//! Subcommand implementations.
//!
//! Each handler resolves its flags into a config echo, runs the library,
//! and hands a JSON result to the shared emitters. Flag and config-file
//! problems exit with code 2; failures while running (unreadable data
//! files, undecodable grids) exit with code 1.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use codedmm::apps::{
    als, gaussian_kernel, krr_pcg_trace, power_iteration, rff_preconditioner, synth_krr,
    synth_ratings, tall_skinny_svd, Executor, KrrProblem,
};
use codedmm::bounds::{
    alpha_counts, corollary_bound, enumerate_undecodable, locality_lower_bound,
    monte_carlo_decode_stats, sweep_undecodability, theorem1_bound, theorem2_bound,
};
use codedmm::code::CodeParams;
use codedmm::grid::{peel_plan, CellState, CodedProductGrid};
use codedmm::matrix::{
    matmul_reference, matvec_reference, norm2, read_cdm, read_text, rel_vec_distance,
    write_cdm, write_text, DenseMatrix,
};
use codedmm::sim::{
    run_coded_matmul, run_coded_matvec, run_speculative_matmul, run_speculative_matvec,
    RunReport, SimConfig, Strategy,
};

use crate::output::{envelope, print_csv, print_human, Format};

// ----------
// Errors and shared plumbing
// ----------

/// Usage errors exit 2, runtime errors exit 1; both print to stderr.
pub enum CliError {
    Usage(String),
    Runtime(String),
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn to_value(v: impl serde::Serialize) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(runtime)
}

/// u128 counts render as numbers when they fit u64 and as strings beyond.
fn count_json(v: u128) -> Value {
    u64::try_from(v)
        .map(Value::from)
        .unwrap_or_else(|_| Value::String(v.to_string()))
}

fn emit(
    command: &str,
    config: &Value,
    result: &Value,
    format: Format,
    csv: Option<(&str, &[String])>,
) -> Result<(), CliError> {
    match format {
        Format::Json => {
            let env = envelope(command, config, result);
            println!(
                "{}",
                serde_json::to_string_pretty(&env).expect("envelope serialization")
            );
            Ok(())
        }
        Format::Human => {
            print_human(command, config, result);
            Ok(())
        }
        Format::Csv => match csv {
            Some((header, rows)) => {
                print_csv(config, header, rows);
                Ok(())
            }
            None => Err(CliError::Usage(format!(
                "--format csv is not supported for `{command}`"
            ))),
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyFlag {
    Coded,
    Speculative,
}

impl From<StrategyFlag> for Strategy {
    fn from(f: StrategyFlag) -> Strategy {
        match f {
            StrategyFlag::Coded => Strategy::Coded,
            StrategyFlag::Speculative => Strategy::Speculative,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AppStrategyFlag {
    Reference,
    Coded,
    Speculative,
}

/// Loads the TOML config (or defaults), then applies flag overrides.
fn load_sim_config(
    path: Option<&PathBuf>,
    seed: Option<u64>,
    strategy: Option<StrategyFlag>,
) -> Result<SimConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
            SimConfig::from_toml_str(&text).map_err(usage)?
        }
        None => SimConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(s) = strategy {
        cfg.policy.strategy = s.into();
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

const DATA_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Input data never shares an RNG stream with the simulator's task clock.
fn random_matrix(rows: usize, cols: usize, seed: u64, tag: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DATA_SALT ^ tag);
    DenseMatrix::random_uniform(rows, cols, -1.0, 1.0, &mut rng)
}

fn load_matrix(path: &Path) -> Result<DenseMatrix, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| runtime(format!("cannot read {}: {e}", path.display())))?;
    let m = if bytes.starts_with(b"CDM1") {
        read_cdm(path)
    } else {
        read_text(path)
    };
    m.map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn load_vector(path: &Path) -> Result<Vec<f64>, CliError> {
    let m = load_matrix(path)?;
    if m.cols() == 1 || m.rows() == 1 {
        Ok(m.data().to_vec())
    } else {
        Err(runtime(format!(
            "{}: expected a single-row or single-column vector, got {}x{}",
            path.display(),
            m.rows(),
            m.cols()
        )))
    }
}

/// Binary CDM for a `.cdm` extension, whitespace text otherwise.
fn save_matrix(m: &DenseMatrix, path: &Path) -> Result<(), CliError> {
    let binary = path.extension().is_some_and(|e| e == "cdm");
    let res = if binary {
        write_cdm(m, path)
    } else {
        write_text(m, path)
    };
    res.map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

// ----------
// bounds
// ----------

#[derive(Args, Debug)]
pub struct BoundsArgs {
    /// Row-blocks per parity group on the A side.
    #[arg(long, default_value_t = 10)]
    pub la: usize,
    /// Row-blocks per parity group on the B side.
    #[arg(long, default_value_t = 10)]
    pub lb: usize,
    /// Per-worker straggling probability.
    #[arg(long, default_value_t = 0.02)]
    pub p: f64,
    /// Also evaluate the decoding-cost tail bound at R >= x.
    #[arg(long)]
    pub x: Option<usize>,
    /// Monte Carlo trials for empirical undecodability and read stats.
    #[arg(long)]
    pub trials: Option<u64>,
    /// Seed for the Monte Carlo trials.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sweep square codes over a half-open range "L_MIN..L_MAX" instead.
    #[arg(long)]
    pub sweep: Option<String>,
}

fn parse_range(spec: &str) -> Result<std::ops::Range<usize>, CliError> {
    let parts = spec
        .split_once("..")
        .ok_or_else(|| usage(format!("sweep range `{spec}` must look like 2..12")))?;
    let lo: usize = parts
        .0
        .parse()
        .map_err(|_| usage(format!("bad sweep start `{}`", parts.0)))?;
    let hi: usize = parts
        .1
        .parse()
        .map_err(|_| usage(format!("bad sweep end `{}`", parts.1)))?;
    if lo == 0 || hi <= lo {
        return Err(usage(format!(
            "sweep range `{spec}` must satisfy 1 <= L_MIN < L_MAX"
        )));
    }
    Ok(lo..hi)
}

pub fn bounds(args: &BoundsArgs, format: Format) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&args.p) {
        return Err(usage("p must lie in [0, 1)"));
    }
    let config = json!({
        "la": args.la,
        "lb": args.lb,
        "p": args.p,
        "x": args.x,
        "trials": args.trials,
        "seed": args.seed,
        "sweep": args.sweep,
    });

    if let Some(spec) = &args.sweep {
        let range = parse_range(spec)?;
        let rows = sweep_undecodability(args.p, range).map_err(usage)?;
        let result = json!({ "sweep": to_value(&rows)? });
        let csv_rows: Vec<String> = rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{}",
                    r.l,
                    r.n,
                    r.bound.map(|b| b.to_string()).unwrap_or_default(),
                    r.redundancy_over_total,
                    r.redundancy_over_systematic
                )
            })
            .collect();
        let header = "l,n,bound,redundancy_over_total,redundancy_over_systematic";
        return emit("bounds", &config, &result, format, Some((header, &csv_rows)));
    }

    let (la, lb, p) = (args.la, args.lb, args.p);
    let n = (la + 1) * (lb + 1);
    let k = la * lb;
    let alpha = alpha_counts(la, lb).map_err(usage)?;

    let theorem2 = if n < 8 {
        None
    } else if p == 0.0 {
        Some(0.0)
    } else {
        Some(theorem2_bound(la, lb, p).map_err(usage)?)
    };
    let theorem1 = match args.x {
        Some(x) if p > 0.0 => {
            let l = la.max(lb);
            let value = theorem1_bound(n, p, l, x as f64).map_err(usage)?;
            Some(json!({ "x": x, "value": value }))
        }
        Some(x) => Some(json!({ "x": x, "value": 0.0 })),
        None => None,
    };
    let corollary = if p > 0.0 {
        let eps = n as f64 * p;
        Some(json!({ "eps": eps, "value": corollary_bound(n, p, eps).map_err(usage)? }))
    } else {
        None
    };
    let locality = locality_lower_bound(k as u64, n as u64).map_err(usage)?;
    let parity = la + lb + 1;

    let mc = match args.trials {
        Some(trials) => {
            let stats = monte_carlo_decode_stats(la, lb, p, trials, args.seed).map_err(usage)?;
            Some(json!({
                "trials": stats.trials,
                "pr_undecodable": stats.pr_undecodable(),
                "mean_reads": stats.mean_reads(),
                "pr_reads_ge_x": args.x.map(|x| stats.pr_reads_ge(x)),
            }))
        }
        None => None,
    };

    let result = json!({
        "code": {
            "la": la,
            "lb": lb,
            "n": n,
            "k": k,
            "min_distance": 4,
            "locality": la.min(lb),
        },
        "alpha": {
            "alpha4": count_json(alpha.alpha4),
            "alpha5": count_json(alpha.alpha5),
            "alpha6_ub": count_json(alpha.alpha6_ub),
            "alpha7_ub": count_json(alpha.alpha7_ub),
        },
        "theorem2": theorem2,
        "theorem1": theorem1,
        "corollary": corollary,
        "locality_lower_bound": {
            "numerator": locality.numerator,
            "denominator": locality.denominator,
            "value": locality.value(),
        },
        "redundancy": {
            "over_total": parity as f64 / n as f64,
            "over_systematic": parity as f64 / k as f64,
        },
        "monte_carlo": mc,
    });

    let opt = |v: Option<String>| v.unwrap_or_default();
    let header = "la,lb,n,p,alpha4,alpha5,alpha6_ub,alpha7_ub,theorem2,theorem1_x,theorem1,\
                  corollary,locality_bound,redundancy_over_total,redundancy_over_systematic,\
                  mc_trials,mc_pr_undecodable,mc_mean_reads,mc_pr_reads_ge_x";
    let row = format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        la,
        lb,
        n,
        p,
        alpha.alpha4,
        alpha.alpha5,
        alpha.alpha6_ub,
        alpha.alpha7_ub,
        opt(result["theorem2"].as_f64().map(|v| v.to_string())),
        opt(args.x.map(|x| x.to_string())),
        opt(result["theorem1"]["value"].as_f64().map(|v| v.to_string())),
        opt(result["corollary"]["value"].as_f64().map(|v| v.to_string())),
        locality.value(),
        parity as f64 / n as f64,
        parity as f64 / k as f64,
        opt(args.trials.map(|t| t.to_string())),
        opt(result["monte_carlo"]["pr_undecodable"].as_f64().map(|v| v.to_string())),
        opt(result["monte_carlo"]["mean_reads"].as_f64().map(|v| v.to_string())),
        opt(result["monte_carlo"]["pr_reads_ge_x"].as_f64().map(|v| v.to_string())),
    );
    emit("bounds", &config, &result, format, Some((header, &[row])))
}

// ----------
// simulate
// ----------

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Overrides the strategy from the config file.
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyFlag>,
    /// TOML simulation config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed from the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 10)]
    pub la: usize,
    #[arg(long, default_value_t = 10)]
    pub lb: usize,
    #[arg(long, default_value_t = 20)]
    pub blocks_a: usize,
    #[arg(long, default_value_t = 20)]
    pub blocks_b: usize,
    /// Rows of the synthetic A operand.
    #[arg(long, default_value_t = 40)]
    pub rows_a: usize,
    /// Rows of the synthetic B operand.
    #[arg(long, default_value_t = 40)]
    pub rows_b: usize,
    /// Shared inner dimension of the synthetic operands.
    #[arg(long, default_value_t = 8)]
    pub cols: usize,
}

pub fn simulate(args: &SimulateArgs, format: Format) -> Result<(), CliError> {
    let cfg = load_sim_config(args.config.as_ref(), args.seed, args.strategy)?;
    let a = random_matrix(args.rows_a, args.cols, cfg.seed, 1);
    let b = random_matrix(args.rows_b, args.cols, cfg.seed, 2);

    let (c, report) = match cfg.policy.strategy {
        Strategy::Coded => {
            let params =
                CodeParams::new(args.la, args.lb, args.blocks_a, args.blocks_b).map_err(usage)?;
            run_coded_matmul(&a, &b, &params, &cfg).map_err(runtime)?
        }
        Strategy::Speculative => {
            run_speculative_matmul(&a, &b, args.blocks_a, args.blocks_b, &cfg).map_err(runtime)?
        }
    };
    let reference = matmul_reference(&a, &b).map_err(runtime)?;
    let rel_error = c.rel_frobenius_distance(&reference).map_err(runtime)?;

    let config = json!({
        "sim": to_value(&cfg)?,
        "la": args.la,
        "lb": args.lb,
        "blocks_a": args.blocks_a,
        "blocks_b": args.blocks_b,
        "rows_a": args.rows_a,
        "rows_b": args.rows_b,
        "cols": args.cols,
    });
    let result = json!({
        "report": to_value(&report)?,
        "rel_error": rel_error,
    });
    let rows = [report.to_csv_row()];
    emit(
        "simulate",
        &config,
        &result,
        format,
        Some((RunReport::csv_header(), &rows)),
    )
}

// ----------
// multiply
// ----------

#[derive(Args, Debug)]
pub struct MultiplyArgs {
    /// Left operand file (CDM binary or whitespace text).
    #[arg(long)]
    pub a: PathBuf,
    /// Right operand file; the product is A * B^T.
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub la: usize,
    #[arg(long, default_value_t = 2)]
    pub lb: usize,
    #[arg(long, default_value_t = 4)]
    pub blocks_a: usize,
    #[arg(long, default_value_t = 4)]
    pub blocks_b: usize,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyFlag>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the product here (`.cdm` for binary, anything else for text).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn multiply(args: &MultiplyArgs, format: Format) -> Result<(), CliError> {
    let cfg = load_sim_config(args.config.as_ref(), args.seed, args.strategy)?;
    let a = load_matrix(&args.a)?;
    let b = load_matrix(&args.b)?;

    let (c, report) = match cfg.policy.strategy {
        Strategy::Coded => {
            let params =
                CodeParams::new(args.la, args.lb, args.blocks_a, args.blocks_b).map_err(usage)?;
            run_coded_matmul(&a, &b, &params, &cfg).map_err(runtime)?
        }
        Strategy::Speculative => {
            run_speculative_matmul(&a, &b, args.blocks_a, args.blocks_b, &cfg).map_err(runtime)?
        }
    };
    let reference = matmul_reference(&a, &b).map_err(runtime)?;
    let rel_error = c.rel_frobenius_distance(&reference).map_err(runtime)?;
    if let Some(path) = &args.out {
        save_matrix(&c, path)?;
    }

    let config = json!({
        "a": args.a.display().to_string(),
        "b": args.b.display().to_string(),
        "la": args.la,
        "lb": args.lb,
        "blocks_a": args.blocks_a,
        "blocks_b": args.blocks_b,
        "out": args.out.as_ref().map(|p| p.display().to_string()),
        "sim": to_value(&cfg)?,
    });
    let result = json!({
        "rows": c.rows(),
        "cols": c.cols(),
        "frobenius_norm": c.frobenius_norm(),
        "rel_error": rel_error,
        "report": to_value(&report)?,
    });
    let rows = [report.to_csv_row()];
    emit(
        "multiply",
        &config,
        &result,
        format,
        Some((RunReport::csv_header(), &rows)),
    )
}

// ----------
// matvec
// ----------

#[derive(Args, Debug)]
pub struct MatvecArgs {
    /// Matrix file (CDM binary or whitespace text).
    #[arg(long)]
    pub a: PathBuf,
    /// Vector file, one row or one column.
    #[arg(long)]
    pub x: PathBuf,
    /// Systematic row-block count of the partition.
    #[arg(long, default_value_t = 4)]
    pub blocks: usize,
    /// Blocks per parity group.
    #[arg(long, default_value_t = 2)]
    pub l: usize,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyFlag>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the product vector here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn matvec(args: &MatvecArgs, format: Format) -> Result<(), CliError> {
    let cfg = load_sim_config(args.config.as_ref(), args.seed, args.strategy)?;
    let a = load_matrix(&args.a)?;
    let x = load_vector(&args.x)?;

    let (y, report) = match cfg.policy.strategy {
        Strategy::Coded => {
            run_coded_matvec(&a, &x, args.blocks, args.l, &cfg).map_err(runtime)?
        }
        Strategy::Speculative => {
            run_speculative_matvec(&a, &x, args.blocks, &cfg).map_err(runtime)?
        }
    };
    let reference = matvec_reference(&a, &x).map_err(runtime)?;
    let rel_error = rel_vec_distance(&y, &reference);
    if let Some(path) = &args.out {
        let m = DenseMatrix::new(y.len(), 1, y.clone()).map_err(runtime)?;
        save_matrix(&m, path)?;
    }

    let config = json!({
        "a": args.a.display().to_string(),
        "x": args.x.display().to_string(),
        "blocks": args.blocks,
        "l": args.l,
        "out": args.out.as_ref().map(|p| p.display().to_string()),
        "sim": to_value(&cfg)?,
    });
    let result = json!({
        "len": y.len(),
        "norm": norm2(&y),
        "rel_error": rel_error,
        "report": to_value(&report)?,
    });
    let rows = [report.to_csv_row()];
    emit(
        "matvec",
        &config,
        &result,
        format,
        Some((RunReport::csv_header(), &rows)),
    )
}

// ----------
// app
// ----------

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AppName {
    PowerIter,
    Krr,
    Als,
    Svd,
}

#[derive(Args, Debug)]
pub struct AppArgs {
    /// Which driver to run.
    #[arg(value_enum)]
    pub name: AppName,
    #[arg(long, value_enum, default_value_t = AppStrategyFlag::Reference)]
    pub strategy: AppStrategyFlag,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for both the synthetic data and the simulator.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Primary problem size: n for power-iter/krr, rows for svd, users for als.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Input dimension of the krr features.
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    /// Column count for svd.
    #[arg(long, default_value_t = 16)]
    pub cols: usize,
    /// Item count for als.
    #[arg(long, default_value_t = 64)]
    pub items: usize,
    /// Factor rank for als.
    #[arg(long, default_value_t = 8)]
    pub rank: usize,
    /// Iteration cap (power-iter: 200, als: 7).
    #[arg(long)]
    pub iters: Option<usize>,
    /// Stopping tolerance (power-iter: 1e-9, krr: 1e-3).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Ridge weight (krr: 0.01, als: 0.1).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Kernel width for krr.
    #[arg(long, default_value_t = 8.0)]
    pub sigma: f64,
    /// Random-feature count of the krr preconditioner; 0 disables it.
    #[arg(long, default_value_t = 256)]
    pub features: usize,
    /// Loss target that stops als early; 0 runs all iterations.
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    #[arg(long, default_value_t = 2)]
    pub la: usize,
    #[arg(long, default_value_t = 2)]
    pub lb: usize,
    #[arg(long, default_value_t = 8)]
    pub blocks_a: usize,
    #[arg(long, default_value_t = 4)]
    pub blocks_b: usize,
    /// Also write the JSON report to this path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn make_executor(args: &AppArgs, cfg: &SimConfig) -> Result<Executor, CliError> {
    match args.strategy {
        AppStrategyFlag::Reference => Ok(Executor::reference()),
        AppStrategyFlag::Coded => {
            let params =
                CodeParams::new(args.la, args.lb, args.blocks_a, args.blocks_b).map_err(usage)?;
            Executor::coded(params, cfg.clone()).map_err(usage)
        }
        AppStrategyFlag::Speculative => {
            Executor::speculative(args.blocks_a, args.blocks_b, cfg.clone()).map_err(usage)
        }
    }
}

fn sim_summary(exec: &Executor) -> Value {
    let times: Vec<f64> = exec.reports().iter().map(|r| r.t_total).collect();
    let total: f64 = times.iter().sum();
    json!({ "per_call": times, "total": total, "calls": exec.reports().len() })
}

fn app_name_str(name: AppName) -> &'static str {
    match name {
        AppName::PowerIter => "power-iter",
        AppName::Krr => "krr",
        AppName::Als => "als",
        AppName::Svd => "svd",
    }
}

pub fn app(args: &AppArgs, format: Format) -> Result<(), CliError> {
    let cfg = load_sim_config(args.config.as_ref(), args.seed, None)?;
    let data_seed = cfg.seed;
    let mut exec = make_executor(args, &cfg)?;

    let result = match args.name {
        AppName::PowerIter => {
            let n = args.size;
            // A Gram matrix keeps the top eigenvalue positive and separated;
            // a raw symmetric draw has lambda_max close to -lambda_min, which
            // power iteration cannot split.
            let g = random_matrix(n, n, data_seed, 11);
            let a = matmul_reference(&g, &g).map_err(runtime)?.scale(1.0 / n as f64);
            let iters = args.iters.unwrap_or(500);
            let tol = args.tol.unwrap_or(1e-9);
            let (lambda, v, used) =
                power_iteration(&a, iters, tol, &mut exec).map_err(runtime)?;
            let av = matvec_reference(&a, &v).map_err(runtime)?;
            let resid: f64 = av
                .iter()
                .zip(&v)
                .map(|(avi, vi)| (avi - lambda * vi).powi(2))
                .sum::<f64>()
                .sqrt();
            json!({
                "app": "power-iter",
                "eigenvalue": lambda,
                "iterations": used,
                "residual_2norm": resid,
                "sim": sim_summary(&exec),
            })
        }
        AppName::Krr => {
            let n = args.size;
            let (x, y) = synth_krr(n, args.d, data_seed);
            let kernel = gaussian_kernel(&x, args.sigma).map_err(usage)?;
            let lambda = args.lambda.unwrap_or(0.01);
            let m_inv = if args.features > 0 {
                Some(
                    rff_preconditioner(&x, args.sigma, args.features, lambda, data_seed)
                        .map_err(runtime)?,
                )
            } else {
                None
            };
            let tol = args.tol.unwrap_or(1e-3);
            let problem = KrrProblem::new(kernel, y.clone(), lambda, m_inv, tol).map_err(usage)?;
            let (coef, trace) = krr_pcg_trace(&problem, &mut exec).map_err(runtime)?;
            json!({
                "app": "krr",
                "iterations": trace.len(),
                "residuals": trace,
                "final_residual": trace.last().copied(),
                "coeff_norm": norm2(&coef),
                "sim": sim_summary(&exec),
            })
        }
        AppName::Als => {
            let r = synth_ratings(args.size, args.items, data_seed);
            let lambda = args.lambda.unwrap_or(0.1);
            let iters = args.iters.unwrap_or(7);
            let (h, w, trace) =
                als(&r, args.rank, lambda, args.eps, iters, data_seed, &mut exec)
                    .map_err(runtime)?;
            json!({
                "app": "als",
                "iterations": trace.len(),
                "loss_trace": trace,
                "final_loss": trace.last().copied(),
                "h_norm": h.frobenius_norm(),
                "w_norm": w.frobenius_norm(),
                "sim": sim_summary(&exec),
            })
        }
        AppName::Svd => {
            let a = random_matrix(args.size, args.cols, data_seed, 13);
            let (u, s, v) = tall_skinny_svd(&a, &mut exec).map_err(runtime)?;
            let mut us = u.clone();
            for i in 0..us.rows() {
                for j in 0..us.cols() {
                    us.set(i, j, us.get(i, j) * s[j]);
                }
            }
            let recon = matmul_reference(&us, &v).map_err(runtime)?;
            let recon_err = recon.rel_frobenius_distance(&a).map_err(runtime)?;
            let u_t = u.transpose();
            let gram_u = matmul_reference(&u_t, &u_t).map_err(runtime)?;
            let v_t = v.transpose();
            let gram_v = matmul_reference(&v_t, &v_t).map_err(runtime)?;
            let eye = DenseMatrix::identity(s.len());
            let u_orth = gram_u.sub(&eye).map_err(runtime)?.max_abs();
            let v_orth = gram_v.sub(&eye).map_err(runtime)?.max_abs();
            json!({
                "app": "svd",
                "singular_values": s,
                "recon_rel_error": recon_err,
                "u_orth_max_err": u_orth,
                "v_orth_max_err": v_orth,
                "sim": sim_summary(&exec),
            })
        }
    };

    let config = json!({
        "app": app_name_str(args.name),
        "strategy": match args.strategy {
            AppStrategyFlag::Reference => "reference",
            AppStrategyFlag::Coded => "coded",
            AppStrategyFlag::Speculative => "speculative",
        },
        "size": args.size,
        "d": args.d,
        "cols": args.cols,
        "items": args.items,
        "rank": args.rank,
        "iters": args.iters,
        "tol": args.tol,
        "lambda": args.lambda,
        "sigma": args.sigma,
        "features": args.features,
        "eps": args.eps,
        "la": args.la,
        "lb": args.lb,
        "blocks_a": args.blocks_a,
        "blocks_b": args.blocks_b,
        "sim": to_value(&cfg)?,
    });

    if let Some(path) = &args.out {
        let env = envelope("app", &config, &result);
        let text = serde_json::to_string_pretty(&env).expect("envelope serialization");
        std::fs::write(path, text + "\n")
            .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    emit("app", &config, &result, format, None)
}

// ----------
// enumerate
// ----------

#[derive(Args, Debug)]
pub struct EnumerateArgs {
    #[arg(long, default_value_t = 2)]
    pub la: usize,
    #[arg(long, default_value_t = 2)]
    pub lb: usize,
    /// Straggler-set size to enumerate.
    #[arg(long, default_value_t = 4)]
    pub s: usize,
}

pub fn enumerate(args: &EnumerateArgs, format: Format) -> Result<(), CliError> {
    let count = enumerate_undecodable(args.la, args.lb, args.s).map_err(usage)?;
    let alpha = alpha_counts(args.la, args.lb).map_err(usage)?;
    let (kind, value) = match args.s {
        0..=3 => ("exact", Some(0u128)),
        4 => ("exact", Some(alpha.alpha4)),
        5 => ("exact", Some(alpha.alpha5)),
        6 => ("upper_bound", Some(alpha.alpha6_ub)),
        7 => ("upper_bound", Some(alpha.alpha7_ub)),
        _ => ("none", None),
    };
    let consistent = match (kind, value) {
        ("exact", Some(v)) => count as u128 == v,
        ("upper_bound", Some(v)) => count as u128 <= v,
        _ => true,
    };

    let config = json!({ "la": args.la, "lb": args.lb, "s": args.s });
    let result = json!({
        "n": (args.la + 1) * (args.lb + 1),
        "count": count,
        "formula": { "kind": kind, "value": value.map(count_json) },
        "consistent": consistent,
    });
    let row = format!(
        "{},{},{},{},{},{}",
        args.la,
        args.lb,
        args.s,
        count,
        kind,
        value.map(|v| v.to_string()).unwrap_or_default()
    );
    emit(
        "enumerate",
        &config,
        &result,
        format,
        Some(("la,lb,s,count,formula_kind,formula_value", &[row])),
    )
}

// ----------
// decode
// ----------

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// Grid manifest JSON produced by the library or another run.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Include an ASCII rendering of the grid in the report.
    #[arg(long)]
    pub dump_grid: bool,
}

fn render_grid(grid: &CodedProductGrid) -> String {
    let p = grid.params;
    let mut out = String::new();
    for i in 0..p.coded_blocks_a() {
        if i > 0 && i % (p.la + 1) == 0 {
            out.push('\n');
        }
        let mut line = String::new();
        for j in 0..p.coded_blocks_b() {
            if j > 0 && j % (p.lb + 1) == 0 {
                line.push(' ');
            }
            line.push(match grid.cell(i, j).state {
                CellState::Present => '.',
                CellState::Missing => 'X',
                CellState::Recovered => 'o',
            });
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn decode(args: &DecodeArgs, format: Format) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.manifest)
        .map_err(|e| runtime(format!("cannot read {}: {e}", args.manifest.display())))?;
    let grid = CodedProductGrid::from_manifest_json(&text).map_err(runtime)?;
    let params = grid.params;

    let mut subgrids = Vec::new();
    let mut total_reads = 0usize;
    let mut all_decodable = true;
    let mut csv_rows = Vec::new();
    for ga in 0..params.groups_a() {
        for gb in 0..params.groups_b() {
            let missing = grid.subgrid_missing(ga, gb);
            let plan = peel_plan(params.la, params.lb, &missing).map_err(runtime)?;
            total_reads += plan.reads;
            all_decodable &= plan.is_complete();
            csv_rows.push(format!(
                "{},{},{},{},{},{}",
                ga,
                gb,
                missing.len(),
                plan.reads,
                plan.recovered.len(),
                plan.is_complete()
            ));
            subgrids.push(json!({
                "ga": ga,
                "gb": gb,
                "missing": missing,
                "complete": plan.is_complete(),
                "plan": to_value(&plan)?,
            }));
        }
    }

    let config = json!({
        "manifest": args.manifest.display().to_string(),
        "dump_grid": args.dump_grid,
    });
    let result = json!({
        "params": to_value(params)?,
        "subgrids": subgrids,
        "total_reads": total_reads,
        "all_decodable": all_decodable,
        "grid": args.dump_grid.then(|| render_grid(&grid)),
    });
    emit(
        "decode",
        &config,
        &result,
        format,
        Some(("ga,gb,missing,reads,recovered,complete", &csv_rows)),
    )?;
    if !all_decodable {
        return Err(runtime("grid is not decodable by peeling"));
    }
    Ok(())
}
