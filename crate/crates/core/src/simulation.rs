//! Monte Carlo harness: clustered AFT data with exchangeable errors,
//! uniform censoring calibrated to a target rate, optional covariate
//! contamination, and bias/MSE/variance summaries for the four estimators.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClusteredDataset, Observation};
use crate::error::{AftError, Result};
use crate::estimator::EstimatorConfig;
use crate::pipeline::{fit_all, ESTIMATOR_NAMES};
use crate::stats::{sample_mvn_exchangeable, sample_mvt_exchangeable, ExchangeableCorrelation, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorLaw {
    Mvn,
    Mvt3,
}

impl ErrorLaw {
    pub fn label(self) -> &'static str {
        match self {
            Self::Mvn => "mvn",
            Self::Mvt3 => "mvt3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Contamination {
    #[serde(rename = "none")]
    None,
    /// 5% of `X₂` values get an outlier of 5.
    #[serde(rename = "five_pct_plus5")]
    FivePctPlus5,
}

impl Contamination {
    pub fn label(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::FivePctPlus5 => "five_pct_plus5",
        }
    }
}

/// How a contaminated `X₂` enters the data. In every mode but
/// `ShiftBeforeResponse` the response comes from the clean design.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContaminationMode {
    /// Recorded `X₂` set to 5.
    #[default]
    ReplaceObserved,
    /// Recorded `X₂` shifted by 5.
    ShiftObserved,
    /// `X₂` shifted by 5 before the response is generated, so the model
    /// still holds for the contaminated rows.
    ShiftBeforeResponse,
}

pub const CONTAMINATION_PROB: f64 = 0.05;
pub const CONTAMINATION_SHIFT: f64 = 5.0;
pub const DEFAULT_PILOT: usize = 200_000;

fn default_size_min() -> usize {
    3
}
fn default_size_max() -> usize {
    10
}
fn default_beta() -> Vec<f64> {
    vec![1.2, 1.5]
}
fn default_contamination() -> Contamination {
    Contamination::None
}
fn default_reps() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationScenario {
    #[serde(default)]
    pub name: String,
    pub n_clusters: usize,
    #[serde(default = "default_size_min")]
    pub cluster_size_min: usize,
    #[serde(default = "default_size_max")]
    pub cluster_size_max: usize,
    #[serde(default = "default_beta")]
    pub beta_true: Vec<f64>,
    pub error_law: ErrorLaw,
    pub rho: f64,
    pub censoring_target: f64,
    #[serde(default = "default_contamination")]
    pub contamination: Contamination,
    #[serde(default)]
    pub contamination_mode: ContaminationMode,
    #[serde(default = "default_reps")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SimulationScenario {
    pub fn new(
        n_clusters: usize,
        error_law: ErrorLaw,
        rho: f64,
        censoring_target: f64,
        contamination: Contamination,
        replications: usize,
        seed: u64,
    ) -> Self {
        let mut s = Self {
            name: String::new(),
            n_clusters,
            cluster_size_min: 3,
            cluster_size_max: 10,
            beta_true: default_beta(),
            error_law,
            rho,
            censoring_target,
            contamination,
            contamination_mode: ContaminationMode::default(),
            replications,
            seed,
        };
        s.name = s.default_name();
        s
    }

    pub fn default_name(&self) -> String {
        format!(
            "N{}_{}_rho{}_c{}_{}",
            self.n_clusters,
            self.error_law.label(),
            self.rho,
            (self.censoring_target * 100.0).round(),
            self.contamination.label()
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AftError::Config(format!("scenario '{}': {m}", self.name)));
        if !(self.censoring_target > 0.0 && self.censoring_target < 1.0) {
            return bad("censoring_target must lie in (0, 1)");
        }
        if self.replications < 1 {
            return bad("replications must be >= 1");
        }
        if self.n_clusters < 2 {
            return bad("n_clusters must be >= 2");
        }
        if self.cluster_size_min < 1 || self.cluster_size_min > self.cluster_size_max {
            return bad("cluster size range is empty");
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1)");
        }
        if self.beta_true.len() != 2 {
            return bad("beta_true must have two entries (X1 cluster-level, X2 within-cluster)");
        }
        Ok(())
    }
}

/// A simulated dataset with the quantities that stay hidden from the fit.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub data: ClusteredDataset,
    pub true_log_times: Vec<f64>,
    pub contaminated: Vec<bool>,
}

struct Draw {
    x1: f64,
    x2_recorded: Vec<f64>,
    log_t: Vec<f64>,
    contaminated: Vec<bool>,
}

fn draw_cluster(s: &SimulationScenario, rng: &mut RngStream) -> Draw {
    let n_i = rng.random_range(s.cluster_size_min..=s.cluster_size_max);
    let x1 = rng.standard_normal();
    let x2: Vec<f64> = (0..n_i).map(|_| rng.standard_normal()).collect();
    let corr = ExchangeableCorrelation::new(s.rho, n_i).expect("validated rho");
    let eps = match s.error_law {
        ErrorLaw::Mvn => sample_mvn_exchangeable(&corr, rng),
        ErrorLaw::Mvt3 => sample_mvt_exchangeable(&corr, 3, rng).expect("df 3"),
    };
    let contaminated: Vec<bool> = (0..n_i)
        .map(|_| s.contamination == Contamination::FivePctPlus5 && rng.random::<f64>() < CONTAMINATION_PROB)
        .collect();
    let shifted = |k: usize| {
        if contaminated[k] {
            match s.contamination_mode {
                ContaminationMode::ShiftObserved | ContaminationMode::ShiftBeforeResponse => x2[k] + CONTAMINATION_SHIFT,
                ContaminationMode::ReplaceObserved => CONTAMINATION_SHIFT,
            }
        } else {
            x2[k]
        }
    };
    let x2_recorded: Vec<f64> = (0..n_i).map(shifted).collect();
    let log_t = (0..n_i)
        .map(|k| {
            let x2_model = match s.contamination_mode {
                ContaminationMode::ShiftBeforeResponse => x2_recorded[k],
                _ => x2[k],
            };
            s.beta_true[0] * x1 + s.beta_true[1] * x2_model + eps[k]
        })
        .collect();
    Draw {
        x1,
        x2_recorded,
        log_t,
        contaminated,
    }
}

/// One dataset under `scenario` with censoring `C ~ U(0, τ]`; `τ = ∞`
/// disables censoring.
pub fn generate_dataset(scenario: &SimulationScenario, tau: f64, rng: &mut RngStream) -> Result<GeneratedData> {
    scenario.validate()?;
    let mut clusters = Vec::with_capacity(scenario.n_clusters);
    let mut true_log_times = Vec::new();
    let mut contaminated = Vec::new();
    for _ in 0..scenario.n_clusters {
        let draw = draw_cluster(scenario, rng);
        let mut cluster = Vec::with_capacity(draw.log_t.len());
        for k in 0..draw.log_t.len() {
            let c = if tau.is_finite() { tau * rng.uniform_open0() } else { f64::INFINITY };
            let t = draw.log_t[k].exp();
            let observed = if t <= c { draw.log_t[k] } else { c.ln() };
            cluster.push(Observation::new(observed, t <= c, vec![draw.x1, draw.x2_recorded[k]]));
        }
        true_log_times.extend(draw.log_t);
        contaminated.extend(draw.contaminated);
        clusters.push(cluster);
    }
    if !clusters.iter().flatten().any(|o| o.event) {
        return Err(AftError::ZeroEvents);
    }
    Ok(GeneratedData {
        data: ClusteredDataset::from_clusters(clusters)?,
        true_log_times,
        contaminated,
    })
}

/// Censoring probability `P(C < T)` for `C ~ U(0, τ]`, averaged over pilot
/// failure times.
pub fn censoring_rate(pilot_times: &[f64], tau: f64) -> f64 {
    pilot_times.iter().map(|t| (t / tau).min(1.0)).sum::<f64>() / pilot_times.len() as f64
}

/// Pilot failure times (raw scale) drawn from the scenario's law.
pub fn pilot_times(scenario: &SimulationScenario, rng: &mut RngStream, n_pilot: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_pilot + scenario.cluster_size_max);
    while out.len() < n_pilot {
        out.extend(draw_cluster(scenario, rng).log_t.into_iter().map(f64::exp));
    }
    out.truncate(n_pilot);
    out
}

/// `τ` such that the pilot censoring rate hits the target.
///
/// The pilot sample is drawn once, so the rate is a deterministic,
/// nonincreasing function of `τ` and bisection on `log τ` converges.
pub fn calibrate_tau(scenario: &SimulationScenario, rng: &mut RngStream, n_pilot: usize) -> Result<f64> {
    scenario.validate()?;
    let times = pilot_times(scenario, rng, n_pilot.max(1));
    let target = scenario.censoring_target;
    let (mut lo, mut hi) = (-10.0f64, 10.0f64);
    while censoring_rate(&times, lo.exp()) < target {
        lo -= 10.0;
        assert!(lo > -1000.0, "censoring target unreachable");
    }
    while censoring_rate(&times, hi.exp()) > target {
        hi += 10.0;
        assert!(hi < 1000.0, "censoring target unreachable");
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if censoring_rate(&times, mid.exp()) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let tau = (0.5 * (lo + hi)).exp();
    let rate = censoring_rate(&times, tau);
    assert!((rate - target).abs() <= 0.005, "calibration missed: {rate} vs {target}");
    Ok(tau)
}

/// Stream index reserved for the τ pilot; replicates use `0..R`.
pub const PILOT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    /// Point estimates, one row per estimator in table order.
    pub betas: Vec<Vec<f64>>,
    /// `diag(Σ̂)/N` for the smoothed weighted robust estimator.
    pub ivar: Vec<f64>,
    pub censoring: f64,
    pub rho_bar: f64,
    pub outer_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub name: String,
    pub bias: Vec<f64>,
    pub mse: Vec<f64>,
    pub evar: Vec<f64>,
    /// Only the smoothed weighted robust estimator carries a model-based
    /// variance.
    pub ivar: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: SimulationScenario,
    pub tau: f64,
    pub completed: usize,
    pub failures: usize,
    /// More than 5% of replicates failed.
    pub flagged: bool,
    pub realized_censoring: f64,
    pub estimators: Vec<EstimatorSummary>,
    pub replicates: Vec<ReplicateRecord>,
}

impl ScenarioResult {
    pub fn estimator(&self, name: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.name == name)
    }
}

fn run_replicate(scenario: &SimulationScenario, config: &EstimatorConfig, tau: f64, index: usize) -> Result<ReplicateRecord> {
    let mut rng = RngStream::new(scenario.seed, index as u64);
    let generated = generate_dataset(scenario, tau, &mut rng)?;
    let data = &generated.data;
    let fits = fit_all(data, config)?;
    let n = data.n_clusters() as f64;
    Ok(ReplicateRecord {
        index,
        betas: fits.betas().iter().map(|b| b.iter().copied().collect()).collect(),
        ivar: fits.sandwich.sigma_hat.diagonal().iter().map(|v| v / n).collect(),
        censoring: 1.0 - data.n_events() as f64 / data.n_obs() as f64,
        rho_bar: fits.prepared.rho_bar,
        outer_iterations: fits.smoothed_weighted_robust.outer_iterations,
        converged: fits.smoothed_weighted_robust.converged,
    })
}

fn summarize(scenario: &SimulationScenario, records: &[ReplicateRecord]) -> Vec<EstimatorSummary> {
    let p = scenario.beta_true.len();
    let r = records.len() as f64;
    ESTIMATOR_NAMES
        .iter()
        .enumerate()
        .map(|(e, name)| {
            let mut bias = vec![f64::NAN; p];
            let mut mse = vec![f64::NAN; p];
            let mut evar = vec![f64::NAN; p];
            for j in 0..p {
                let vals: Vec<f64> = records.iter().map(|rec| rec.betas[e][j]).collect();
                if vals.is_empty() {
                    continue;
                }
                let mean = vals.iter().sum::<f64>() / r;
                let truth = scenario.beta_true[j];
                bias[j] = mean - truth;
                mse[j] = vals.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / r;
                evar[j] = if records.len() > 1 {
                    vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0)
                } else {
                    0.0
                };
            }
            let ivar = (*name == "smoothed_weighted_robust")
                .then(|| (0..p).map(|j| records.iter().map(|rec| rec.ivar[j]).sum::<f64>() / r).collect());
            EstimatorSummary {
                name: name.to_string(),
                bias,
                mse,
                evar,
                ivar,
            }
        })
        .collect()
}

/// Runs all replicates of a scenario. Replicate `k` draws from stream
/// `(seed, k)`, so the result does not depend on scheduling.
pub fn run_scenario(scenario: &SimulationScenario, config: &EstimatorConfig) -> Result<ScenarioResult> {
    run_scenario_with_pilot(scenario, config, DEFAULT_PILOT)
}

pub fn run_scenario_with_pilot(scenario: &SimulationScenario, config: &EstimatorConfig, n_pilot: usize) -> Result<ScenarioResult> {
    scenario.validate()?;
    let tau = calibrate_tau(scenario, &mut RngStream::new(scenario.seed, PILOT_STREAM), n_pilot)?;
    let outcomes: Vec<Result<ReplicateRecord>> = (0..scenario.replications)
        .into_par_iter()
        .map(|k| run_replicate(scenario, config, tau, k))
        .collect();
    let mut replicates = Vec::with_capacity(outcomes.len());
    let mut failures = 0;
    for outcome in outcomes {
        match outcome {
            Ok(rec) => replicates.push(rec),
            Err(_) => failures += 1,
        }
    }
    let realized_censoring = if replicates.is_empty() {
        f64::NAN
    } else {
        replicates.iter().map(|r| r.censoring).sum::<f64>() / replicates.len() as f64
    };
    Ok(ScenarioResult {
        scenario: scenario.clone(),
        tau,
        completed: replicates.len(),
        failures,
        flagged: failures as f64 > 0.05 * scenario.replications as f64,
        realized_censoring,
        estimators: summarize(scenario, &replicates),
        replicates,
    })
}

/// Acceptance grid at 200 replicates.
pub fn quick_grid(seed: u64) -> Vec<SimulationScenario> {
    use Contamination::*;
    use ErrorLaw::*;
    vec![
        SimulationScenario::new(50, Mvn, 0.5, 0.15, None, 200, seed),
        SimulationScenario::new(50, Mvn, 0.5, 0.15, FivePctPlus5, 200, seed.wrapping_add(1)),
        SimulationScenario::new(100, Mvn, 0.5, 0.15, None, 200, seed.wrapping_add(2)),
        SimulationScenario::new(100, Mvn, 0.8, 0.30, None, 200, seed.wrapping_add(3)),
    ]
}

/// Full 32-cell grid (N, error law, ρ, censoring, contamination) at 1000 replicates.
pub fn full_grid(seed: u64) -> Vec<SimulationScenario> {
    let mut out = Vec::with_capacity(32);
    let mut k = 0u64;
    for contamination in [Contamination::None, Contamination::FivePctPlus5] {
        for law in [ErrorLaw::Mvn, ErrorLaw::Mvt3] {
            for n in [50, 100] {
                for rho in [0.5, 0.8] {
                    for cens in [0.15, 0.30] {
                        out.push(SimulationScenario::new(n, law, rho, cens, contamination, 1000, seed.wrapping_add(k)));
                        k += 1;
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Deserialize)]
struct ScenarioFile {
    #[serde(default)]
    scenario: Vec<SimulationScenario>,
}

/// Parses `[[scenario]]` tables; unnamed scenarios get a descriptive name.
pub fn parse_scenarios(text: &str) -> Result<Vec<SimulationScenario>> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| AftError::Config(format!("scenario file: {e}")))?;
    let mut out = file.scenario;
    for s in &mut out {
        if s.name.is_empty() {
            s.name = s.default_name();
        }
        s.validate()?;
    }
    Ok(out)
}

pub fn load_scenarios(path: &Path) -> Result<Vec<SimulationScenario>> {
    let text = std::fs::read_to_string(path).map_err(|e| AftError::io(path, e))?;
    parse_scenarios(&text)
}

const SCENARIO_COLUMNS: &str = "scenario,n_clusters,error_law,rho,censoring,contamination,coef";

fn scenario_prefix(s: &SimulationScenario, coef: usize) -> String {
    format!(
        "{},{},{},{},{},{},beta{}",
        s.name,
        s.n_clusters,
        s.error_law.label(),
        s.rho,
        s.censoring_target,
        s.contamination.label(),
        coef + 1
    )
}

/// Bias and MSE per estimator, one row per scenario and coefficient.
pub fn render_bias_mse_csv(results: &[ScenarioResult]) -> String {
    let mut out = String::from(SCENARIO_COLUMNS);
    for name in ESTIMATOR_NAMES {
        let _ = write!(out, ",{name}_bias,{name}_mse");
    }
    out.push('\n');
    for r in results {
        for j in 0..r.scenario.beta_true.len() {
            out.push_str(&scenario_prefix(&r.scenario, j));
            for e in &r.estimators {
                let _ = write!(out, ",{},{}", e.bias[j], e.mse[j]);
            }
            out.push('\n');
        }
    }
    out
}

/// `Evar` for every estimator and `Ivar` for the smoothed robust one.
pub fn render_variance_csv(results: &[ScenarioResult]) -> String {
    let mut out = String::from(SCENARIO_COLUMNS);
    for name in ESTIMATOR_NAMES {
        let _ = write!(out, ",{name}_evar");
    }
    out.push_str(",smoothed_weighted_robust_ivar\n");
    for r in results {
        for j in 0..r.scenario.beta_true.len() {
            out.push_str(&scenario_prefix(&r.scenario, j));
            for e in &r.estimators {
                let _ = write!(out, ",{}", e.evar[j]);
            }
            let ivar = r.estimator("smoothed_weighted_robust").and_then(|e| e.ivar.as_ref()).map_or(f64::NAN, |v| v[j]);
            let _ = writeln!(out, ",{ivar}");
        }
    }
    out
}

fn md_row(cells: &[String]) -> String {
    format!("| {} |\n", cells.join(" | "))
}

fn md_header(cols: &[&str]) -> String {
    let mut s = md_row(&cols.iter().map(|c| c.to_string()).collect::<Vec<_>>());
    s.push_str(&md_row(&cols.iter().map(|_| "---".to_string()).collect::<Vec<_>>()));
    s
}

pub fn render_bias_mse_markdown(results: &[ScenarioResult]) -> String {
    let mut cols = vec!["scenario", "coef"];
    let mut names = Vec::new();
    for name in ESTIMATOR_NAMES {
        names.push(format!("{name} bias"));
        names.push(format!("{name} MSE"));
    }
    cols.extend(names.iter().map(String::as_str));
    let mut out = md_header(&cols);
    for r in results {
        for j in 0..r.scenario.beta_true.len() {
            let mut cells = vec![r.scenario.name.clone(), format!("beta{}", j + 1)];
            for e in &r.estimators {
                cells.push(format!("{:.4}", e.bias[j]));
                cells.push(format!("{:.4}", e.mse[j]));
            }
            out.push_str(&md_row(&cells));
        }
    }
    out
}

pub fn render_variance_markdown(results: &[ScenarioResult]) -> String {
    let mut out = md_header(&["scenario", "coef", "Evar", "Ivar", "Ivar/Evar", "censoring", "failures"]);
    for r in results {
        let Some(e) = r.estimator("smoothed_weighted_robust") else {
            continue;
        };
        for j in 0..r.scenario.beta_true.len() {
            let ivar = e.ivar.as_ref().map_or(f64::NAN, |v| v[j]);
            out.push_str(&md_row(&[
                r.scenario.name.clone(),
                format!("beta{}", j + 1),
                format!("{:.4}", e.evar[j]),
                format!("{:.4}", ivar),
                format!("{:.3}", ivar / e.evar[j]),
                format!("{:.3}", r.realized_censoring),
                r.failures.to_string(),
            ]));
        }
    }
    out
}

/// Per-replicate estimates in long format (plot-ready).
pub fn render_replicates_csv(results: &[ScenarioResult]) -> String {
    let mut out = String::from("scenario,replicate,estimator,beta1,beta2\n");
    for r in results {
        for rec in &r.replicates {
            for (e, name) in ESTIMATOR_NAMES.iter().enumerate() {
                let b = &rec.betas[e];
                let _ = writeln!(out, "{},{},{},{},{}", r.scenario.name, rec.index, name, b[0], b[1]);
            }
        }
    }
    out
}

#[derive(Serialize)]
struct SummaryEntry<'a> {
    scenario: &'a SimulationScenario,
    tau: f64,
    completed: usize,
    failures: usize,
    flagged: bool,
    realized_censoring: f64,
    median_outer_iterations: f64,
    estimators: &'a [EstimatorSummary],
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn render_summary_json(results: &[ScenarioResult]) -> String {
    let entries: Vec<SummaryEntry> = results
        .iter()
        .map(|r| SummaryEntry {
            scenario: &r.scenario,
            tau: r.tau,
            completed: r.completed,
            failures: r.failures,
            flagged: r.flagged,
            realized_censoring: r.realized_censoring,
            median_outer_iterations: median(r.replicates.iter().map(|x| x.outer_iterations as f64).collect()),
            estimators: &r.estimators,
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&entries).expect("summary serializes");
    s.push('\n');
    s
}

/// Rendered tables keyed by file name.
pub fn emit_tables(results: &[ScenarioResult]) -> Vec<(&'static str, String)> {
    vec![
        ("bias_mse.csv", render_bias_mse_csv(results)),
        ("bias_mse.md", render_bias_mse_markdown(results)),
        ("variance.csv", render_variance_csv(results)),
        ("variance.md", render_variance_markdown(results)),
        ("replicates.csv", render_replicates_csv(results)),
        ("summary.json", render_summary_json(results)),
    ]
}

pub fn write_tables(results: &[ScenarioResult], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| AftError::io(dir, e))?;
    let mut written = Vec::new();
    for (name, body) in emit_tables(results) {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| AftError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
