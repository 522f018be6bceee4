//! `aft` command line: `fit`, `simulate`, `verify`.
//!
//! Settings come from flags, then an optional flat TOML config file
//! (`--config`), then built-in defaults. The output directory falls back to
//! `$AFT_OUT_DIR`, then `./aft_out`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{read_csv, ClusteredDataset, CsvSchema};
use crate::error::{AftError, Result};
use crate::estimator::{EstimatorConfig, Variant};
use crate::pipeline::{fit_variant, VariantFit};
use crate::simulation::{full_grid, load_scenarios, quick_grid, run_scenario_with_pilot, write_tables, DEFAULT_PILOT};
use crate::variance::XiForm;
use crate::verify::{render_ledger, run_checks, VerifyOptions};
use crate::weights::{GrConfig, WeightScheme};

pub const OUT_DIR_ENV: &str = "AFT_OUT_DIR";
pub const DEFAULT_SEED: u64 = 20_261_014;

#[derive(Debug, Parser)]
#[command(name = "aft", version, about = "Weighted rank estimation for clustered censored AFT models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a CSV file and write a report.
    Fit(FitArgs),
    /// Run Monte Carlo scenarios and write summary tables.
    Simulate(SimulateArgs),
    /// Run the brute-force oracle and gradient checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat TOML file with defaults for any flag (keys use underscores).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub cluster_col: Option<String>,
    /// Column holding raw (not log) times.
    #[arg(long)]
    pub time_col: Option<String>,
    /// Column holding the event indicator (1 = event, 0 = censored).
    #[arg(long)]
    pub event_col: Option<String>,
    /// Comma-separated covariate column names.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    #[arg(long)]
    pub delimiter: Option<char>,
    /// gehan | weighted | robust
    #[arg(long)]
    pub variant: Option<String>,
    /// unit | inv-size | corr
    #[arg(long)]
    pub scheme: Option<String>,
    /// Use h ≡ 1 even for the robust variant.
    #[arg(long)]
    pub no_robust: bool,
    /// Report the nonsmooth minimizer instead of the smoothed root.
    #[arg(long)]
    pub nonsmooth: bool,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub c_quantile: Option<f64>,
    /// as-printed | martingale
    #[arg(long)]
    pub xi_form: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// TOML file with `[[scenario]]` tables.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// Acceptance grid, 200 replicates per cell.
    #[arg(long, conflicts_with = "full")]
    pub quick: bool,
    /// All 32 cells, 1000 replicates each (hours).
    #[arg(long)]
    pub full: bool,
    /// Override every scenario's replicate count.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Pilot sample size for censoring calibration.
    #[arg(long)]
    pub pilot: Option<usize>,
    #[arg(long)]
    pub xi_form: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Random datasets per oracle.
    #[arg(long)]
    pub datasets: Option<usize>,
}

/// Keys accepted in the `--config` file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub cluster_col: Option<String>,
    pub time_col: Option<String>,
    pub event_col: Option<String>,
    pub covariates: Option<Vec<String>>,
    pub delimiter: Option<char>,
    pub variant: Option<String>,
    pub scheme: Option<String>,
    pub no_robust: Option<bool>,
    pub nonsmooth: Option<bool>,
    pub alpha: Option<f64>,
    pub c_quantile: Option<f64>,
    pub xi_form: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub scenarios: Option<PathBuf>,
    pub reps: Option<usize>,
    pub pilot: Option<usize>,
    pub datasets: Option<usize>,
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| AftError::io(path, e))?;
    toml::from_str(&text).map_err(|e| AftError::Config(format!("{}: {e}", path.display())))
}

fn out_dir(flag: Option<PathBuf>, file: Option<PathBuf>) -> PathBuf {
    flag.or(file)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("aft_out"))
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(AftError::InvalidArgument("--threads must be >= 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| AftError::io(dir, e))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| AftError::io(path, e))
}

fn estimator_config(
    variant: Option<String>,
    scheme: Option<String>,
    alpha: Option<f64>,
    c_quantile: Option<f64>,
    xi_form: Option<String>,
) -> Result<EstimatorConfig> {
    let mut cfg = EstimatorConfig::default();
    if let Some(v) = variant {
        cfg.variant = v.parse()?;
    }
    if let Some(s) = scheme {
        cfg.scheme = s.parse()?;
    }
    let gr = GrConfig {
        alpha: alpha.unwrap_or(cfg.gr.alpha),
        c_quantile: c_quantile.unwrap_or(cfg.gr.c_quantile),
        c: None,
    };
    if !(gr.alpha > 0.0) {
        return Err(AftError::InvalidArgument("--alpha must be positive".into()));
    }
    if !(gr.c_quantile > 0.0 && gr.c_quantile < 1.0) {
        return Err(AftError::InvalidArgument("--c-quantile must lie in (0, 1)".into()));
    }
    cfg.gr = gr;
    if let Some(x) = xi_form {
        cfg.xi_form = x.parse()?;
    }
    Ok(cfg)
}

/// Settings for `fit` after merging flags over the config file.
#[derive(Debug, Clone)]
pub struct FitSettings {
    pub input: PathBuf,
    pub schema: CsvSchema,
    pub estimator: EstimatorConfig,
    pub robust: bool,
    pub out: PathBuf,
}

pub fn resolve_fit(args: FitArgs) -> Result<FitSettings> {
    let file = load_file_config(args.common.config.as_deref())?;
    configure_threads(args.common.threads.or(file.threads))?;
    let missing = |name: &str| AftError::InvalidArgument(format!("--{name} is required"));
    let input = args.input.or(file.input).ok_or_else(|| missing("input"))?;
    let cluster_col = args.cluster_col.or(file.cluster_col).ok_or_else(|| missing("cluster-col"))?;
    let time_col = args.time_col.or(file.time_col).ok_or_else(|| missing("time-col"))?;
    let event_col = args.event_col.or(file.event_col).ok_or_else(|| missing("event-col"))?;
    let covariates = args.covariates.or(file.covariates).ok_or_else(|| missing("covariates"))?;
    if covariates.is_empty() {
        return Err(missing("covariates"));
    }
    let mut schema = CsvSchema::new(cluster_col, time_col, event_col, covariates);
    if let Some(d) = args.delimiter.or(file.delimiter) {
        if !d.is_ascii() {
            return Err(AftError::InvalidArgument("--delimiter must be a single ASCII character".into()));
        }
        schema.delimiter = d as u8;
    }
    let mut estimator = estimator_config(
        args.variant.or(file.variant),
        args.scheme.or(file.scheme),
        args.alpha.or(file.alpha),
        args.c_quantile.or(file.c_quantile),
        args.xi_form.or(file.xi_form),
    )?;
    estimator.smoothed = !(args.nonsmooth || file.nonsmooth.unwrap_or(false));
    Ok(FitSettings {
        input,
        schema,
        estimator,
        robust: !(args.no_robust || file.no_robust.unwrap_or(false)),
        out: out_dir(args.common.out, file.out),
    })
}

fn variant_label(v: Variant, robust: bool) -> &'static str {
    match (v, robust) {
        (Variant::Gehan, _) => "gehan",
        (Variant::Weighted, _) | (Variant::WeightedRobust, false) => "weighted",
        (Variant::WeightedRobust, true) => "weighted_robust",
    }
}

#[derive(Serialize)]
struct FitJson<'a> {
    input: String,
    variant: &'a str,
    smoothed: bool,
    scheme: WeightScheme,
    xi_form: XiForm,
    n_clusters: usize,
    n_obs: usize,
    n_events: usize,
    covariates: &'a [String],
    beta: Vec<f64>,
    std_errors: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    gamma: Vec<Vec<f64>>,
    rho_bar: Option<f64>,
    converged: bool,
    outer_iterations: usize,
    newton_iterations: usize,
    score_norm: f64,
    objective: f64,
    gr_columns_used: Vec<String>,
    gr_columns_dropped: Vec<String>,
    gr_c: Option<f64>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Markdown report in the layout of a coefficient table: estimate with
/// `(SE)` underneath each coefficient name.
pub fn render_fit_report(data: &ClusteredDataset, settings: &FitSettings, res: &VariantFit) -> String {
    let cfg = &settings.estimator;
    let mut s = String::new();
    let _ = writeln!(s, "# AFT rank fit\n");
    let _ = writeln!(s, "input: {}", settings.input.display());
    let _ = writeln!(
        s,
        "clusters: {}, observations: {}, events: {} (censoring {:.1}%)",
        data.n_clusters(),
        data.n_obs(),
        data.n_events(),
        100.0 * (1.0 - data.n_events() as f64 / data.n_obs() as f64)
    );
    let _ = writeln!(
        s,
        "estimator: {} ({}), scheme {:?}, xi form {:?}\n",
        variant_label(cfg.variant, settings.robust),
        if cfg.smoothed { "smoothed" } else { "nonsmooth" },
        cfg.scheme,
        cfg.xi_form
    );
    let _ = writeln!(s, "| covariate | estimate | (SE) |");
    let _ = writeln!(s, "| --- | --- | --- |");
    for (j, name) in data.covariate_names().iter().enumerate() {
        let _ = writeln!(
            s,
            "| {name} | {:.4} | ({:.4}) |",
            res.fit.beta_hat.as_slice()[j],
            res.sandwich.std_errors[j]
        );
    }
    let _ = writeln!(s);
    if let Some(p) = &res.prepared {
        let _ = writeln!(s, "rho_bar: {:.4}", p.rho_bar);
    }
    let _ = writeln!(
        s,
        "converged: {}, outer iterations: {}, newton iterations: {}, |score|_inf: {:.3e}",
        res.smoothed.converged, res.smoothed.outer_iterations, res.smoothed.iterations, res.smoothed.score_norm
    );
    if !cfg.smoothed {
        let _ = writeln!(
            s,
            "nonsmooth search: {} iterations, converged {}, objective {:.6e}",
            res.fit.iterations, res.fit.converged, res.fit.objective
        );
    }
    if let Some(p) = &res.prepared {
        if cfg.variant == Variant::WeightedRobust && settings.robust {
            let names = data.covariate_names();
            let used: Vec<&str> = p.design.used_columns.iter().map(|&j| names[j].as_str()).collect();
            let dropped: Vec<&str> = p.design.dropped_columns.iter().map(|&j| names[j].as_str()).collect();
            let h = &res.fit.weight_set.h;
            let _ = writeln!(
                s,
                "GR weights: distance on [{}], dropped [{}], c = {:.4}, min h = {:.4}, mean h = {:.4}, downweighted {}",
                used.join(", "),
                dropped.join(", "),
                p.design.c,
                h.iter().copied().fold(f64::INFINITY, f64::min),
                h.iter().sum::<f64>() / h.len() as f64,
                h.iter().filter(|v| **v < 1.0).count()
            );
        }
    }
    s
}

fn render_h_csv(data: &ClusteredDataset, res: &VariantFit) -> String {
    let mut s = String::from("cluster,member,h\n");
    for i in 0..data.n_clusters() {
        for (k, a) in data.cluster_range(i).enumerate() {
            let _ = writeln!(s, "{},{},{}", data.cluster_ids()[i], k + 1, res.fit.weight_set.h[a]);
        }
    }
    s
}

pub fn cmd_fit(settings: &FitSettings) -> Result<String> {
    let data = read_csv(&settings.input, &settings.schema)?;
    let res = fit_variant(&data, &settings.estimator, settings.robust)?;
    let report = render_fit_report(&data, settings, &res);
    let names = data.covariate_names();
    let json = FitJson {
        input: settings.input.display().to_string(),
        variant: variant_label(settings.estimator.variant, settings.robust),
        smoothed: settings.estimator.smoothed,
        scheme: settings.estimator.scheme,
        xi_form: settings.estimator.xi_form,
        n_clusters: data.n_clusters(),
        n_obs: data.n_obs(),
        n_events: data.n_events(),
        covariates: names,
        beta: res.fit.beta_hat.as_slice().to_vec(),
        std_errors: res.sandwich.std_errors.iter().copied().collect(),
        sigma: rows(&res.sandwich.sigma_hat),
        gamma: res.smoothed.gamma.as_ref().map(rows).unwrap_or_default(),
        rho_bar: res.prepared.as_ref().map(|p| p.rho_bar),
        converged: res.smoothed.converged,
        outer_iterations: res.smoothed.outer_iterations,
        newton_iterations: res.smoothed.iterations,
        score_norm: res.smoothed.score_norm,
        objective: res.fit.objective,
        gr_columns_used: res.prepared.as_ref().map_or_else(Vec::new, |p| {
            p.design.used_columns.iter().map(|&j| names[j].clone()).collect()
        }),
        gr_columns_dropped: res.prepared.as_ref().map_or_else(Vec::new, |p| {
            p.design.dropped_columns.iter().map(|&j| names[j].clone()).collect()
        }),
        gr_c: res.prepared.as_ref().map(|p| p.design.c).filter(|c| c.is_finite()),
    };
    create_dir(&settings.out)?;
    write_file(&settings.out.join("fit_report.md"), &report)?;
    let body = serde_json::to_string_pretty(&json).map_err(|e| AftError::Numerical(format!("report: {e}")))?;
    write_file(&settings.out.join("fit_report.json"), &(body + "\n"))?;
    write_file(&settings.out.join("h_weights.csv"), &render_h_csv(&data, &res))?;
    Ok(report)
}

pub fn cmd_simulate(args: SimulateArgs) -> Result<String> {
    let file = load_file_config(args.common.config.as_deref())?;
    configure_threads(args.common.threads.or(file.threads))?;
    let seed = args.common.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    let scenarios_path = args.scenarios.or(file.scenarios);
    let mut scenarios = match (&scenarios_path, args.full) {
        (Some(path), false) if !args.quick => load_scenarios(path)?,
        (Some(_), _) => {
            return Err(AftError::InvalidArgument(
                "--scenarios cannot be combined with --quick or --full".into(),
            ))
        }
        (None, true) => full_grid(seed),
        (None, false) => quick_grid(seed),
    };
    if let Some(r) = args.reps.or(file.reps) {
        if r == 0 {
            return Err(AftError::InvalidArgument("--reps must be >= 1".into()));
        }
        scenarios.iter_mut().for_each(|s| s.replications = r);
    }
    let cfg = estimator_config(None, None, None, None, args.xi_form.or(file.xi_form))?;
    let pilot = args.pilot.or(file.pilot).unwrap_or(DEFAULT_PILOT);
    let mut results = Vec::with_capacity(scenarios.len());
    let mut log = String::new();
    for s in &scenarios {
        let r = run_scenario_with_pilot(s, &cfg, pilot)?;
        let _ = writeln!(
            log,
            "{}: {} replicates, {} failures{}, censoring {:.3}",
            s.name,
            r.completed,
            r.failures,
            if r.flagged { " (FLAGGED)" } else { "" },
            r.realized_censoring
        );
        results.push(r);
    }
    let dir = out_dir(args.common.out, file.out);
    for path in write_tables(&results, &dir)? {
        let _ = writeln!(log, "wrote {}", path.display());
    }
    Ok(log)
}

pub fn cmd_verify(args: VerifyArgs) -> Result<(String, bool)> {
    let file = load_file_config(args.common.config.as_deref())?;
    configure_threads(args.common.threads.or(file.threads))?;
    let opts = VerifyOptions {
        seed: args.common.seed.or(file.seed).unwrap_or(1),
        datasets: args.datasets.or(file.datasets).unwrap_or(50),
        ..Default::default()
    };
    let outcomes = run_checks(&opts);
    let ledger = render_ledger(&outcomes);
    let ok = outcomes.iter().all(|o| o.passed);
    let dir = out_dir(args.common.out, file.out);
    create_dir(&dir)?;
    write_file(&dir.join("verify_ledger.txt"), &ledger)?;
    Ok((ledger, ok))
}

/// Exit code for a verify run whose checks failed.
pub const VERIFY_FAILED: i32 = 3;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Fit(a) => resolve_fit(a).and_then(|s| cmd_fit(&s)).map(|r| (r, true)),
        Command::Simulate(a) => cmd_simulate(a).map(|r| (r, true)),
        Command::Verify(a) => cmd_verify(a),
    };
    match outcome {
        Ok((text, ok)) => {
            print!("{text}");
            if ok {
                0
            } else {
                VERIFY_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
