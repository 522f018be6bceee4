//! Weighted Gehan-type estimating functions and their induced-smoothing
//! counterparts, plus the solvers that turn them into coefficient estimates.
//!
//! Every pair sum runs over ordered pairs `(a, b)` of flattened observations
//! with `a` an event, weight `w_a w_b` where `w = ω_i h_ik`, covariate
//! difference `d = X_a − X_b` and residual gap `u = e_b − e_a`. The
//! nonsmooth indicator is `I(e_a ≤ e_b)`; the smoothed one is
//! `Φ(√N u / r)` with `r² = dᵀ Γ² d`. All sums carry the `N⁻²` factor.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{residual_vector, ClusteredDataset, Parameters};
use crate::error::{AftError, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::stats::{std_normal_cdf, std_normal_pdf};
use crate::variance::XiForm;
use crate::weights::{GrConfig, WeightScheme, WeightSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `ω ≡ 1`, `h ≡ 1`.
    Gehan,
    /// Cluster weights only, `h ≡ 1`.
    Weighted,
    /// Cluster weights and GR covariate weights.
    WeightedRobust,
}

impl std::str::FromStr for Variant {
    type Err = AftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gehan" => Ok(Self::Gehan),
            "weighted" => Ok(Self::Weighted),
            "robust" | "weighted_robust" => Ok(Self::WeightedRobust),
            other => Err(AftError::InvalidArgument(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub variant: Variant,
    pub smoothed: bool,
    pub scheme: WeightScheme,
    pub gr: GrConfig,
    /// Newton stops once `‖S̃‖∞` is at most this.
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub max_halvings: usize,
    pub neldermead: NelderMeadOptions,
    /// Initial `Γ²`; identity when `None`.
    pub gamma_init: Option<DMatrix<f64>>,
    pub outer_beta_tol: f64,
    pub outer_gamma_tol: f64,
    pub max_outer_iters: usize,
    pub xi_form: XiForm,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            variant: Variant::WeightedRobust,
            smoothed: true,
            scheme: WeightScheme::CorrelationAdjusted,
            gr: GrConfig::default(),
            newton_tol: 1e-8,
            max_newton_iters: 100,
            max_halvings: 30,
            neldermead: NelderMeadOptions::default(),
            gamma_init: None,
            outer_beta_tol: 1e-6,
            outer_gamma_tol: 1e-4,
            max_outer_iters: 25,
            xi_form: XiForm::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self, p: usize) -> Result<()> {
        let positive = [
            self.newton_tol,
            self.neldermead.ftol,
            self.outer_beta_tol,
            self.outer_gamma_tol,
        ];
        if positive.iter().any(|t| !(*t > 0.0)) {
            return Err(AftError::InvalidArgument("tolerances must be positive".into()));
        }
        if let Some(g) = &self.gamma_init {
            if g.shape() != (p, p) || g.clone().cholesky().is_none() {
                return Err(AftError::InvalidArgument(format!(
                    "gamma_init must be a symmetric positive definite {p}x{p} matrix"
                )));
            }
        }
        Ok(())
    }

    pub fn initial_gamma(&self, p: usize) -> DMatrix<f64> {
        self.gamma_init.clone().unwrap_or_else(|| DMatrix::identity(p, p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Newton,
    NelderMead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta_hat: Parameters,
    /// Smoothing matrix `Γ²` (smoothed fits only).
    pub gamma: Option<DMatrix<f64>>,
    /// `‖S̃‖∞` for smoothed fits, `‖S‖∞` for nonsmooth ones.
    pub score_norm: f64,
    pub objective: f64,
    pub iterations: usize,
    /// Γ-update rounds; 0 for a fixed-Γ solve.
    pub outer_iterations: usize,
    pub converged: bool,
    pub method: FitMethod,
    pub weight_set: WeightSet,
}

fn check_beta(data: &ClusteredDataset, beta: &[f64]) {
    assert_eq!(beta.len(), data.p(), "coefficient length must equal p");
}

fn check_weights(data: &ClusteredDataset, weights: &WeightSet) {
    assert_eq!(weights.omega.len(), data.n_clusters(), "omega not aligned with dataset");
    assert_eq!(weights.h.len(), data.n_obs(), "h not aligned with dataset");
}

#[inline]
fn diff_into(data: &ClusteredDataset, a: usize, b: usize, out: &mut [f64]) {
    for ((o, xa), xb) in out.iter_mut().zip(data.covariates(a)).zip(data.covariates(b)) {
        *o = xa - xb;
    }
}

/// Nonsmooth weighted score `S_ωh(β)`, by direct enumeration of pairs.
pub fn score_nonsmooth(data: &ClusteredDataset, weights: &WeightSet, beta: &[f64]) -> DVector<f64> {
    check_beta(data, beta);
    check_weights(data, weights);
    let p = data.p();
    let w = weights.observation_weights(data);
    let e = residual_vector(data, beta);
    let mut total = vec![0.0; p];
    let mut row = vec![0.0; p];
    let mut d = vec![0.0; p];
    for a in (0..data.n_obs()).filter(|&a| data.events()[a]) {
        row.iter_mut().for_each(|v| *v = 0.0);
        for b in 0..data.n_obs() {
            if e[a] <= e[b] {
                diff_into(data, a, b, &mut d);
                for (r, dj) in row.iter_mut().zip(&d) {
                    *r += w[b] * dj;
                }
            }
        }
        for (t, r) in total.iter_mut().zip(&row) {
            *t += w[a] * r;
        }
    }
    let scale = norm_factor(data);
    DVector::from_iterator(p, total.into_iter().map(|v| v * scale))
}

/// Nonsmooth weighted objective `L_ωh(β)`, by direct enumeration of pairs.
pub fn objective_nonsmooth(data: &ClusteredDataset, weights: &WeightSet, beta: &[f64]) -> f64 {
    check_beta(data, beta);
    check_weights(data, weights);
    let w = weights.observation_weights(data);
    let e = residual_vector(data, beta);
    let mut total = 0.0;
    for a in (0..data.n_obs()).filter(|&a| data.events()[a]) {
        let mut row = 0.0;
        for b in 0..data.n_obs() {
            let u = e[b] - e[a];
            if u > 0.0 {
                row += w[b] * u;
            }
        }
        total += w[a] * row;
    }
    total * norm_factor(data)
}

fn norm_factor(data: &ClusteredDataset) -> f64 {
    let n = data.n_clusters() as f64;
    1.0 / (n * n)
}

/// Suffix sums over observations sorted by residual, per tie group.
struct SortedRisk {
    /// Observation indices in ascending residual order.
    order: Vec<usize>,
    /// `order[group_start[g]..group_start[g+1]]` share one residual value.
    group_start: Vec<usize>,
}

impl SortedRisk {
    fn new(e: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..e.len()).collect();
        order.sort_by(|&a, &b| e[a].total_cmp(&e[b]));
        let mut group_start = vec![0];
        for k in 1..order.len() {
            if e[order[k]] != e[order[k - 1]] {
                group_start.push(k);
            }
        }
        group_start.push(order.len());
        Self { order, group_start }
    }

    fn groups_descending(&self) -> impl Iterator<Item = &[usize]> {
        self.group_start
            .windows(2)
            .rev()
            .map(move |w| &self.order[w[0]..w[1]])
    }
}

/// `S_ωh(β)` in `O(M log M)` via sorted suffix sums; agrees with
/// [`score_nonsmooth`] up to summation order.
pub fn score_nonsmooth_sorted(data: &ClusteredDataset, weights: &WeightSet, beta: &[f64]) -> DVector<f64> {
    check_beta(data, beta);
    check_weights(data, weights);
    let p = data.p();
    let w = weights.observation_weights(data);
    let e = residual_vector(data, beta);
    let risk = SortedRisk::new(&e);
    let mut w_sum = 0.0;
    let mut wx_sum = vec![0.0; p];
    let mut total = vec![0.0; p];
    for group in risk.groups_descending() {
        for &b in group {
            w_sum += w[b];
            for (s, x) in wx_sum.iter_mut().zip(data.covariates(b)) {
                *s += w[b] * x;
            }
        }
        for &a in group.iter().filter(|&&a| data.events()[a]) {
            for ((t, x), s) in total.iter_mut().zip(data.covariates(a)).zip(&wx_sum) {
                *t += w[a] * (x * w_sum - s);
            }
        }
    }
    let scale = norm_factor(data);
    DVector::from_iterator(p, total.into_iter().map(|v| v * scale))
}

/// `L_ωh(β)` in `O(M log M)`; see [`score_nonsmooth_sorted`].
pub fn objective_nonsmooth_sorted(data: &ClusteredDataset, weights: &WeightSet, beta: &[f64]) -> f64 {
    let w = weights.observation_weights(data);
    objective_sorted_with(data, &w, beta)
}

fn objective_sorted_with(data: &ClusteredDataset, w: &[f64], beta: &[f64]) -> f64 {
    let e = residual_vector(data, beta);
    let risk = SortedRisk::new(&e);
    // sums over strictly larger residuals
    let mut w_sum = 0.0;
    let mut we_sum = 0.0;
    let mut total = 0.0;
    for group in risk.groups_descending() {
        for &a in group.iter().filter(|&&a| data.events()[a]) {
            total += w[a] * (we_sum - e[a] * w_sum);
        }
        for &b in group {
            w_sum += w[b];
            we_sum += w[b] * e[b];
        }
    }
    total * norm_factor(data)
}

/// Beyond this `|z|`, `Φ(z)` is 1 to working precision on the upper side
/// and below `1e-17` on the lower side, so such pairs skip the special
/// functions.
const FAR_Z: f64 = 8.5;

/// Pair table for the smoothed functions at a fixed `Γ²`.
///
/// Stores `√N / r_ab` for every event-led pair, 0 where `r_ab = 0`, so each
/// β evaluation only recomputes residuals.
pub struct SmoothedSystem<'a> {
    data: &'a ClusteredDataset,
    w: Vec<f64>,
    events: Vec<usize>,
    inv_scale: Vec<f64>,
    gamma: DMatrix<f64>,
}

impl<'a> SmoothedSystem<'a> {
    pub fn new(data: &'a ClusteredDataset, weights: &WeightSet, gamma: &DMatrix<f64>) -> Self {
        check_weights(data, weights);
        let p = data.p();
        assert_eq!(gamma.shape(), (p, p), "gamma must be p x p");
        let m = data.n_obs();
        let sqrt_n = (data.n_clusters() as f64).sqrt();
        let events: Vec<usize> = (0..m).filter(|&a| data.events()[a]).collect();
        let mut inv_scale = Vec::with_capacity(events.len() * m);
        let mut d = vec![0.0; p];
        for &a in &events {
            for b in 0..m {
                diff_into(data, a, b, &mut d);
                let mut r2 = 0.0;
                for j in 0..p {
                    let mut gd = 0.0;
                    for k in 0..p {
                        gd += gamma[(j, k)] * d[k];
                    }
                    r2 += d[j] * gd;
                }
                inv_scale.push(if r2 > 0.0 { sqrt_n / r2.sqrt() } else { 0.0 });
            }
        }
        Self {
            data,
            w: weights.observation_weights(data),
            events,
            inv_scale,
            gamma: gamma.clone(),
        }
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn data(&self) -> &ClusteredDataset {
        self.data
    }

    /// `S̃(β)`.
    pub fn score(&self, beta: &[f64]) -> DVector<f64> {
        self.evaluate(beta, false).0
    }

    /// `S̃(β)` and `D̃(β) = ∂S̃/∂βᵀ` in one pass.
    pub fn score_and_jacobian(&self, beta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let (s, j) = self.evaluate(beta, true);
        (s, j.expect("jacobian requested"))
    }

    pub fn jacobian(&self, beta: &[f64]) -> DMatrix<f64> {
        self.score_and_jacobian(beta).1
    }

    fn evaluate(&self, beta: &[f64], with_jacobian: bool) -> (DVector<f64>, Option<DMatrix<f64>>) {
        check_beta(self.data, beta);
        let data = self.data;
        let p = data.p();
        let m = data.n_obs();
        let e = residual_vector(data, beta);
        let mut score = vec![0.0; p];
        let mut jac = vec![0.0; p * p];
        let mut row_s = vec![0.0; p];
        let mut row_j = vec![0.0; p * p];
        let mut d = vec![0.0; p];
        for (slot, &a) in self.events.iter().enumerate() {
            row_s.iter_mut().for_each(|v| *v = 0.0);
            if with_jacobian {
                row_j.iter_mut().for_each(|v| *v = 0.0);
            }
            let scales = &self.inv_scale[slot * m..(slot + 1) * m];
            for (b, &k) in scales.iter().enumerate() {
                if k == 0.0 {
                    continue;
                }
                let z = (e[b] - e[a]) * k;
                if z < -FAR_Z {
                    continue;
                }
                diff_into(data, a, b, &mut d);
                if z > FAR_Z {
                    for (r, dj) in row_s.iter_mut().zip(&d) {
                        *r += self.w[b] * dj;
                    }
                    continue;
                }
                let cw = self.w[b] * std_normal_cdf(z);
                for (r, dj) in row_s.iter_mut().zip(&d) {
                    *r += cw * dj;
                }
                if with_jacobian {
                    let jw = self.w[b] * std_normal_pdf(z) * k;
                    if jw != 0.0 {
                        for i in 0..p {
                            let di = jw * d[i];
                            for j in 0..p {
                                row_j[i * p + j] += di * d[j];
                            }
                        }
                    }
                }
            }
            for (t, r) in score.iter_mut().zip(&row_s) {
                *t += self.w[a] * r;
            }
            if with_jacobian {
                for (t, r) in jac.iter_mut().zip(&row_j) {
                    *t += self.w[a] * r;
                }
            }
        }
        let scale = norm_factor(data);
        let s = DVector::from_iterator(p, score.into_iter().map(|v| v * scale));
        let j = with_jacobian.then(|| {
            let mat = DMatrix::from_row_iterator(p, p, jac.into_iter().map(|v| v * scale));
            (&mat + mat.transpose()) * 0.5
        });
        (s, j)
    }

    /// `L̃(β)`.
    pub fn objective(&self, beta: &[f64]) -> f64 {
        check_beta(self.data, beta);
        let data = self.data;
        let m = data.n_obs();
        let e = residual_vector(data, beta);
        let mut total = 0.0;
        for (slot, &a) in self.events.iter().enumerate() {
            let scales = &self.inv_scale[slot * m..(slot + 1) * m];
            let mut row = 0.0;
            for (b, &k) in scales.iter().enumerate() {
                let u = e[b] - e[a];
                let term = if k == 0.0 {
                    u.max(0.0)
                } else {
                    let z = u * k;
                    if z > FAR_Z {
                        u
                    } else if z < -FAR_Z {
                        0.0
                    } else {
                        u * std_normal_cdf(z) + std_normal_pdf(z) / k
                    }
                };
                row += self.w[b] * term;
            }
            total += self.w[a] * row;
        }
        total * norm_factor(data)
    }
}

/// Induced-smoothed score `S̃_ωh(β)` for smoothing matrix `Γ²`.
pub fn score_smoothed(data: &ClusteredDataset, weights: &WeightSet, beta: &[f64], gamma: &DMatrix<f64>) -> DVector<f64> {
    SmoothedSystem::new(data, weights, gamma).score(beta)
}

/// Induced-smoothed objective `L̃_ωh(β)`; its gradient is `S̃_ωh`.
pub fn objective_smoothed(data: &ClusteredDataset, weights: &WeightSet, beta: &[f64], gamma: &DMatrix<f64>) -> f64 {
    SmoothedSystem::new(data, weights, gamma).objective(beta)
}

/// `D̃_ωh(β) = ∂S̃_ωh/∂βᵀ`, including the `√N` that differentiation of the
/// smoothed indicator produces.
pub fn jacobian_smoothed(data: &ClusteredDataset, weights: &WeightSet, beta: &[f64], gamma: &DMatrix<f64>) -> DMatrix<f64> {
    SmoothedSystem::new(data, weights, gamma).jacobian(beta)
}

/// Least squares of log time on `[1, X]` over event rows; the intercept is
/// dropped. Falls back to zero when the events cannot identify the slopes.
pub fn initial_beta(data: &ClusteredDataset) -> DVector<f64> {
    let p = data.p();
    let rows: Vec<usize> = (0..data.n_obs()).filter(|&a| data.events()[a]).collect();
    if rows.len() <= p {
        return DVector::zeros(p);
    }
    let x = DMatrix::from_fn(rows.len(), p + 1, |r, c| {
        if c == 0 {
            1.0
        } else {
            data.covariates(rows[r])[c - 1]
        }
    });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&a| data.log_times()[a]));
    let svd = x.svd(true, true);
    let max_sv = svd.singular_values.max();
    match svd.solve(&y, 1e-10 * max_sv.max(f64::MIN_POSITIVE)) {
        Ok(coef) if coef.iter().all(|c| c.is_finite()) && svd.rank(1e-10 * max_sv) == p + 1 => {
            coef.rows(1, p).into_owned()
        }
        _ => DVector::zeros(p),
    }
}

pub(crate) fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `J δ = rhs` for symmetric PSD `J`, adding a ridge `λI` when `J`
/// is not safely positive definite.
pub(crate) fn solve_ridged(jac: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let trace = jac.trace();
    if !(trace.is_finite() && trace > 0.0) {
        return Err(AftError::SingularJacobian(format!("trace {trace}")));
    }
    let min_eig = SymmetricEigen::new(jac.clone()).eigenvalues.min();
    let threshold = 1e-10 * trace;
    if min_eig >= threshold {
        if let Some(chol) = jac.clone().cholesky() {
            return Ok(chol.solve(rhs));
        }
    }
    let mut ridge = (threshold - min_eig).max(0.0) + 1e-6 * trace;
    for _ in 0..20 {
        let shifted = jac + DMatrix::identity(jac.nrows(), jac.ncols()) * ridge;
        if let Some(chol) = shifted.cholesky() {
            let sol = chol.solve(rhs);
            if sol.iter().all(|v| v.is_finite()) {
                return Ok(sol);
            }
        }
        ridge *= 10.0;
    }
    Err(AftError::SingularJacobian("ridge failed to regularize".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub beta: DVector<f64>,
    pub score_norm: f64,
    /// `D̃` at the returned `beta`.
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped Newton on `S̃(β) = 0` with step halving on `‖S̃‖∞`.
pub fn newton_solve(system: &SmoothedSystem<'_>, start: &DVector<f64>, config: &EstimatorConfig) -> Result<NewtonOutcome> {
    let mut beta = start.clone();
    let (mut score, mut jac) = system.score_and_jacobian(beta.as_slice());
    let mut norm = inf_norm(&score);
    let mut iterations = 0;
    while iterations < config.max_newton_iters && norm > config.newton_tol {
        iterations += 1;
        let step = solve_ridged(&jac, &(-&score))?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let cand = &beta + &step * t;
            let cand_score = system.score(cand.as_slice());
            if inf_norm(&cand_score) < norm {
                accepted = Some(cand);
                break;
            }
            t *= 0.5;
        }
        let Some(cand) = accepted else {
            break;
        };
        beta = cand;
        (score, jac) = system.score_and_jacobian(beta.as_slice());
        norm = inf_norm(&score);
    }
    Ok(NewtonOutcome {
        converged: norm <= config.newton_tol,
        beta,
        score_norm: norm,
        jacobian: jac,
        iterations,
    })
}

/// Solves with the requested variant of the estimating function.
///
/// Smoothed: Newton on `S̃ = 0` at the configured `Γ²` from [`initial_beta`].
/// Nonsmooth: Nelder–Mead on `L_ωh` from [`initial_beta`].
pub fn fit(data: &ClusteredDataset, config: &EstimatorConfig, weights: &WeightSet) -> Result<FitResult> {
    config.validate(data.p())?;
    let start = initial_beta(data);
    if !config.smoothed {
        return fit_nonsmooth_from(data, config, weights, &start);
    }
    let gamma = config.initial_gamma(data.p());
    let system = SmoothedSystem::new(data, weights, &gamma);
    let newton = newton_solve(&system, &start, config)?;
    let objective = system.objective(newton.beta.as_slice());
    Ok(FitResult {
        beta_hat: Parameters::from_vector(newton.beta)?,
        gamma: Some(gamma),
        score_norm: newton.score_norm,
        objective,
        iterations: newton.iterations,
        outer_iterations: 0,
        converged: newton.converged,
        method: FitMethod::Newton,
        weight_set: weights.clone(),
    })
}

/// Nelder–Mead on `L_ωh` from a given start.
pub fn fit_nonsmooth_from(
    data: &ClusteredDataset,
    config: &EstimatorConfig,
    weights: &WeightSet,
    start: &DVector<f64>,
) -> Result<FitResult> {
    let w = weights.observation_weights(data);
    let result = nelder_mead(|b| objective_sorted_with(data, &w, b), start.as_slice(), &config.neldermead);
    let score = score_nonsmooth_sorted(data, weights, &result.x);
    Ok(FitResult {
        beta_hat: Parameters::new(result.x)?,
        gamma: None,
        score_norm: inf_norm(&score),
        objective: result.value,
        iterations: result.iterations,
        outer_iterations: 0,
        converged: result.converged,
        method: FitMethod::NelderMead,
        weight_set: weights.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use crate::stats::RngStream;

    fn random_dataset(rng: &mut RngStream, n: usize, max_size: usize, p: usize) -> ClusteredDataset {
        use rand::Rng;
        let clusters: Vec<Vec<Observation>> = (0..n)
            .map(|_| {
                let size = rng.random_range(1..=max_size);
                (0..size)
                    .map(|_| {
                        let x: Vec<f64> = (0..p).map(|_| rng.standard_normal()).collect();
                        let y = x.iter().sum::<f64>() + rng.standard_normal();
                        Observation::new(y, rng.random::<f64>() < 0.7, x)
                    })
                    .collect()
            })
            .collect();
        let mut raw = crate::data::RawDataset::from_clusters(clusters);
        if !raw.clusters.iter().flatten().any(|o| o.event) {
            raw.clusters[0][0].event = true;
        }
        crate::data::validate_dataset(raw).unwrap()
    }

    fn random_weights(rng: &mut RngStream, data: &ClusteredDataset) -> WeightSet {
        use rand::Rng;
        WeightSet {
            omega: (0..data.n_clusters()).map(|_| rng.random_range(0.2..1.0)).collect(),
            h: (0..data.n_obs()).map(|_| rng.random_range(0.1..=1.0)).collect(),
            rho_bar: 0.3,
            scheme: WeightScheme::CorrelationAdjusted,
        }
    }

    #[test]
    fn two_singletons_hand_expanded() {
        let data = ClusteredDataset::from_clusters(vec![
            vec![Observation::new(0.0, true, vec![1.0, 2.0])],
            vec![Observation::new(1.0, true, vec![-1.0, 0.5])],
        ])
        .unwrap();
        let w = WeightSet::unit(&data);
        // e1 = 0 < e2 = 1 at β = 0: only pair (1,2) fires.
        let s = score_nonsmooth(&data, &w, &[0.0, 0.0]);
        assert_eq!(s.as_slice(), &[2.0 / 4.0, 1.5 / 4.0]);
        let fast = score_nonsmooth_sorted(&data, &w, &[0.0, 0.0]);
        assert_eq!(fast, s);
    }

    #[test]
    fn sorted_paths_match_direct() {
        let mut rng = RngStream::new(1, 1);
        for _ in 0..30 {
            let data = random_dataset(&mut rng, 8, 4, 2);
            let unit = WeightSet::unit(&data);
            let weighted = random_weights(&mut rng, &data);
            let beta = [rng.standard_normal(), rng.standard_normal()];
            for w in [&unit, &weighted] {
                let a = score_nonsmooth(&data, w, &beta);
                let b = score_nonsmooth_sorted(&data, w, &beta);
                assert!((&a - &b).abs().max() <= 1e-12 * (1.0 + a.abs().max()));
                let la = objective_nonsmooth(&data, w, &beta);
                let lb = objective_nonsmooth_sorted(&data, w, &beta);
                assert!((la - lb).abs() <= 1e-12 * (1.0 + la.abs()));
            }
        }
    }

    #[test]
    fn ties_use_le_convention() {
        let data = ClusteredDataset::from_clusters(vec![
            vec![Observation::new(1.0, true, vec![1.0])],
            vec![Observation::new(1.0, true, vec![3.0])],
        ])
        .unwrap();
        let w = WeightSet::unit(&data);
        // β = 0 gives tied residuals; both ordered pairs fire and cancel.
        assert_eq!(score_nonsmooth(&data, &w, &[0.0])[0], 0.0);
        assert_eq!(objective_nonsmooth(&data, &w, &[0.0]), 0.0);
        let data = ClusteredDataset::from_clusters(vec![
            vec![Observation::new(1.0, true, vec![1.0])],
            vec![Observation::new(1.0, false, vec![3.0])],
        ])
        .unwrap();
        assert_eq!(score_nonsmooth(&data, &w, &[0.0])[0], (1.0 - 3.0) / 4.0);
        assert_eq!(score_nonsmooth_sorted(&data, &w, &[0.0])[0], (1.0 - 3.0) / 4.0);
    }

    #[test]
    fn censored_only_objectives_vanish() {
        let data = ClusteredDataset::from_clusters(vec![
            vec![Observation::new(1.0, true, vec![0.0]), Observation::new(0.5, false, vec![1.0])],
            vec![Observation::new(0.2, false, vec![3.0])],
        ])
        .unwrap();
        let w = WeightSet::unit(&data);
        // the single event has the largest residual at β = 0
        assert_eq!(objective_nonsmooth(&data, &w, &[0.0]), 0.0);
        let g = DMatrix::identity(1, 1);
        let s = score_smoothed(&data, &w, &[0.0], &g);
        assert!(s[0].is_finite());
    }

    #[test]
    fn phi_half_at_tied_residuals() {
        let data = ClusteredDataset::from_clusters(vec![
            vec![Observation::new(0.0, true, vec![2.0])],
            vec![Observation::new(0.0, false, vec![1.0])],
        ])
        .unwrap();
        let w = WeightSet::unit(&data);
        let s = score_smoothed(&data, &w, &[0.0], &DMatrix::identity(1, 1));
        assert!((s[0] - 0.25 * (2.0 - 1.0) * 0.5).abs() < 1e-15);
    }

    #[test]
    fn smoothed_limit_recovers_nonsmooth() {
        let mut rng = RngStream::new(9, 2);
        let tiny = DMatrix::identity(2, 2) * 1e-8;
        for _ in 0..10 {
            let data = random_dataset(&mut rng, 10, 3, 2);
            let w = random_weights(&mut rng, &data);
            let beta = [0.3, -0.2];
            let s = score_smoothed(&data, &w, &beta, &tiny);
            let s0 = score_nonsmooth(&data, &w, &beta);
            assert!((&s - &s0).abs().max() < 1e-6);
            let l = objective_smoothed(&data, &w, &beta, &tiny);
            let l0 = objective_nonsmooth(&data, &w, &beta);
            assert!((l - l0).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_covariates_give_zero_jacobian() {
        let data = ClusteredDataset::from_clusters(vec![
            vec![Observation::new(0.1, true, vec![1.0, 1.0]), Observation::new(0.3, true, vec![1.0, 1.0])],
            vec![Observation::new(-0.2, true, vec![1.0, 1.0])],
        ])
        .unwrap();
        let w = WeightSet::unit(&data);
        let j = jacobian_smoothed(&data, &w, &[0.0, 0.0], &DMatrix::identity(2, 2));
        assert_eq!(j, DMatrix::zeros(2, 2));
    }

    #[test]
    fn jacobian_symmetric_psd() {
        let mut rng = RngStream::new(3, 3);
        for _ in 0..10 {
            let data = random_dataset(&mut rng, 12, 4, 2);
            let w = random_weights(&mut rng, &data);
            let j = jacobian_smoothed(&data, &w, &[0.5, 0.1], &DMatrix::identity(2, 2));
            assert!((&j - j.transpose()).abs().max() < 1e-12);
            assert!(SymmetricEigen::new(j).eigenvalues.min() >= -1e-10);
        }
    }

    #[test]
    fn score_monotone_along_lines() {
        let mut rng = RngStream::new(77, 0);
        for _ in 0..20 {
            let data = random_dataset(&mut rng, 10, 3, 2);
            let w = WeightSet::unit(&data);
            let base = [rng.standard_normal(), rng.standard_normal()];
            let u = [rng.standard_normal(), rng.standard_normal()];
            let mut prev = f64::NEG_INFINITY;
            for k in 0..40 {
                let t = -3.0 + 0.15 * k as f64;
                let b = [base[0] + t * u[0], base[1] + t * u[1]];
                let s = score_nonsmooth(&data, &w, &b);
                let proj = s[0] * u[0] + s[1] * u[1];
                assert!(prev <= proj + 1e-10);
                prev = proj;
            }
        }
    }

    #[test]
    fn omega_scaling_scales_score() {
        let mut rng = RngStream::new(12, 0);
        let data = random_dataset(&mut rng, 10, 3, 2);
        let w = random_weights(&mut rng, &data);
        let mut scaled = w.clone();
        scaled.omega.iter_mut().for_each(|o| *o *= 3.0);
        let beta = [0.2, 0.4];
        let a = score_nonsmooth(&data, &w, &beta) * 9.0;
        let b = score_nonsmooth(&data, &scaled, &beta);
        assert!((&a - &b).abs().max() < 1e-12);
        let cfg = EstimatorConfig::default();
        let fa = fit(&data, &cfg, &w).unwrap();
        let fb = fit(&data, &cfg, &scaled).unwrap();
        assert!((fa.beta_hat.vector() - fb.beta_hat.vector()).abs().max() < 1e-7);
    }

    #[test]
    fn initial_beta_recovers_exact_line() {
        let clusters: Vec<Vec<Observation>> = (0..6)
            .map(|i| {
                let x = i as f64;
                vec![Observation::new(3.0 + 2.0 * x - 0.5 * x * x, true, vec![x, x * x])]
            })
            .collect();
        let data = ClusteredDataset::from_clusters(clusters).unwrap();
        let b = initial_beta(&data);
        assert!((b[0] - 2.0).abs() < 1e-10 && (b[1] + 0.5).abs() < 1e-10);
    }

    #[test]
    fn ridge_handles_singular_jacobian() {
        let j = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let rhs = DVector::from_vec(vec![1.0, 1.0]);
        let step = solve_ridged(&j, &rhs).unwrap();
        assert!(step.iter().all(|v| v.is_finite()));
        assert!(solve_ridged(&DMatrix::zeros(2, 2), &rhs).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = EstimatorConfig::default();
        assert!(cfg.validate(2).is_ok());
        cfg.newton_tol = 0.0;
        assert!(cfg.validate(2).is_err());
        let cfg = EstimatorConfig {
            gamma_init: Some(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])),
            ..Default::default()
        };
        assert!(cfg.validate(2).is_err());
    }
}
