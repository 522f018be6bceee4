//! Sandwich covariance for the smoothed estimator and the iteration that
//! updates the smoothing matrix from it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{residual_vector, ClusteredDataset, Parameters};
use crate::error::{AftError, Result};
use crate::estimator::{initial_beta, newton_solve, EstimatorConfig, FitMethod, FitResult, SmoothedSystem};
use crate::weights::{floor_eigenvalues, WeightSet};

/// Placement of the cluster weight `ω_j` in `ξ̂`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiForm {
    /// `ω_j` multiplies both the pair term and the compensator term.
    #[default]
    AsPrinted,
    /// `ω_j` multiplies only the pair term; the compensator is summed with
    /// unit weight, as a counting-process expansion of the score gives.
    Martingale,
}

impl std::str::FromStr for XiForm {
    type Err = AftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-printed" | "as_printed" => Ok(Self::AsPrinted),
            "martingale" => Ok(Self::Martingale),
            other => Err(AftError::InvalidArgument(format!("unknown xi form '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichResult {
    pub v_hat: DMatrix<f64>,
    pub d_matrix: DMatrix<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub std_errors: DVector<f64>,
}

/// `z` for target observation `target` and pivot `pivot`: weighted risk-set
/// mean covariate difference over `{r : e_r ≥ e_pivot}`, divided by the
/// unweighted risk-set size.
pub fn z_term(data: &ClusteredDataset, weights: &WeightSet, beta: &[f64], target: usize, pivot: usize) -> DVector<f64> {
    let p = data.p();
    let w = weights.observation_weights(data);
    let e = residual_vector(data, beta);
    let xa = data.covariates(target);
    let mut num = DVector::zeros(p);
    let mut count = 0usize;
    for r in 0..data.n_obs() {
        if e[r] >= e[pivot] {
            count += 1;
            for (j, xr) in data.covariates(r).iter().enumerate() {
                num[j] += w[r] * (xa[j] - xr);
            }
        }
    }
    assert!(count > 0, "risk set contains its pivot");
    num / count as f64
}

/// `ξ̂_a(β)` for every observation, as an `M × p` matrix.
///
/// Uses sorted prefix sums: both terms reduce to `X_a · A − B` with `A`, `B`
/// accumulated over the residual order, so the cost is `O(M log M + M p)`.
pub fn xi_terms(data: &ClusteredDataset, weights: &WeightSet, beta: &[f64], form: XiForm) -> DMatrix<f64> {
    assert_eq!(beta.len(), data.p());
    let p = data.p();
    let m = data.n_obs();
    let n = data.n_clusters() as f64;
    let w = weights.observation_weights(data);
    let e = residual_vector(data, beta);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| e[a].total_cmp(&e[b]));
    let mut groups = vec![0];
    for k in 1..m {
        if e[order[k]] != e[order[k - 1]] {
            groups.push(k);
        }
    }
    groups.push(m);
    let n_groups = groups.len() - 1;

    // Risk-set sums including ties (≥) and strictly above (>), per group.
    let mut ge_w = vec![0.0; n_groups];
    let mut ge_wx = vec![vec![0.0; p]; n_groups];
    let mut ge_count = vec![0usize; n_groups];
    let mut gt_w = vec![0.0; n_groups];
    let mut gt_wx = vec![vec![0.0; p]; n_groups];
    let (mut acc_w, mut acc_wx, mut acc_c) = (0.0, vec![0.0; p], 0usize);
    for g in (0..n_groups).rev() {
        gt_w[g] = acc_w;
        gt_wx[g].clone_from(&acc_wx);
        for &r in &order[groups[g]..groups[g + 1]] {
            acc_w += w[r];
            acc_c += 1;
            for (s, x) in acc_wx.iter_mut().zip(data.covariates(r)) {
                *s += w[r] * x;
            }
        }
        ge_w[g] = acc_w;
        ge_wx[g].clone_from(&acc_wx);
        ge_count[g] = acc_c;
    }

    let mut xi = DMatrix::zeros(m, p);
    // Compensator prefix sums over event pivots with e_b ≤ current group.
    let mut cum_a = 0.0;
    let mut cum_b = vec![0.0; p];
    for g in 0..n_groups {
        let members = &order[groups[g]..groups[g + 1]];
        for &b in members.iter().filter(|&&b| data.events()[b]) {
            let c = match form {
                XiForm::AsPrinted => weights.omega[data.cluster_of(b)],
                XiForm::Martingale => 1.0,
            };
            let cnt = ge_count[g] as f64;
            cum_a += c * ge_w[g] / cnt;
            for (s, v) in cum_b.iter_mut().zip(&ge_wx[g]) {
                *s += c * v / cnt;
            }
        }
        for &a in members {
            let xa = data.covariates(a);
            let delta = if data.events()[a] { 1.0 } else { 0.0 };
            for j in 0..p {
                let first = delta * (xa[j] * gt_w[g] - gt_wx[g][j]);
                let second = xa[j] * cum_a - cum_b[j];
                xi[(a, j)] = (first - second) / n;
            }
        }
    }
    xi
}

/// Cluster-summed contribution `Σ_k h_ik ξ̂_ik` for each cluster.
fn cluster_scores(data: &ClusteredDataset, weights: &WeightSet, xi: &DMatrix<f64>) -> Vec<DVector<f64>> {
    (0..data.n_clusters())
        .map(|i| {
            let mut g = DVector::zeros(data.p());
            for a in data.cluster_range(i) {
                g += xi.row(a).transpose() * weights.h[a];
            }
            g
        })
        .collect()
}

/// Middle matrix `V̂ = N⁻¹ Σ_i ω_i² (Σ_k h_ik ξ̂_ik)(Σ_l h_il ξ̂_il)ᵀ`,
/// symmetrized and floored at zero.
pub fn v_hat(data: &ClusteredDataset, weights: &WeightSet, beta: &[f64], form: XiForm) -> DMatrix<f64> {
    let xi = xi_terms(data, weights, beta, form);
    v_hat_from_xi(data, weights, &xi)
}

pub fn v_hat_from_xi(data: &ClusteredDataset, weights: &WeightSet, xi: &DMatrix<f64>) -> DMatrix<f64> {
    let p = data.p();
    let mut v = DMatrix::zeros(p, p);
    for (i, g) in cluster_scores(data, weights, xi).iter().enumerate() {
        let om = weights.omega[i];
        v += g * g.transpose() * (om * om);
    }
    v /= data.n_clusters() as f64;
    let v = (&v + v.transpose()) * 0.5;
    clip_negative(&v)
}

fn clip_negative(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.min() >= 0.0 {
        return m.clone();
    }
    let vals = eig.eigenvalues.map(|l| l.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

/// `Σ̂ = D̃⁻¹ V̂ D̃⁻¹` at `beta` with smoothing matrix `gamma`.
pub fn sandwich_at(
    data: &ClusteredDataset,
    weights: &WeightSet,
    beta: &[f64],
    gamma: &DMatrix<f64>,
    form: XiForm,
) -> Result<SandwichResult> {
    let d = SmoothedSystem::new(data, weights, gamma).jacobian(beta);
    let v = v_hat(data, weights, beta, form);
    assemble(data, d, v)
}

fn assemble(data: &ClusteredDataset, d: DMatrix<f64>, v: DMatrix<f64>) -> Result<SandwichResult> {
    let trace = d.trace();
    if !(trace.is_finite() && trace > 0.0) {
        return Err(AftError::SingularJacobian(format!("jacobian trace {trace}")));
    }
    let eig = SymmetricEigen::new(d.clone());
    if eig.eigenvalues.min() <= 1e-12 * trace {
        return Err(AftError::SingularJacobian(format!(
            "jacobian eigenvalue {:e} relative to trace {trace:e}",
            eig.eigenvalues.min()
        )));
    }
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l)) * eig.eigenvectors.transpose();
    let s = &inv * &v * &inv;
    let sigma = (&s + s.transpose()) * 0.5;
    let n = data.n_clusters() as f64;
    let se = DVector::from_iterator(sigma.nrows(), sigma.diagonal().iter().map(|x| (x.max(0.0) / n).sqrt()));
    if se.iter().any(|x| !x.is_finite()) {
        return Err(AftError::Numerical("non-finite standard error".into()));
    }
    Ok(SandwichResult {
        v_hat: v,
        d_matrix: d,
        sigma_hat: sigma,
        std_errors: se,
    })
}

/// Sandwich covariance for a smoothed fit, at its `β̂` and `Γ²`.
pub fn sandwich(data: &ClusteredDataset, weights: &WeightSet, fit: &FitResult, form: XiForm) -> Result<SandwichResult> {
    let gamma = fit
        .gamma
        .as_ref()
        .ok_or_else(|| AftError::InvalidArgument("sandwich requires a smoothed fit".into()))?;
    sandwich_at(data, weights, fit.beta_hat.as_slice(), gamma, form)
}

/// Floors `Γ²` eigenvalues at `1e-8·trace/p`.
pub fn floor_gamma(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    floor_eigenvalues(sigma, 1e-8)
}

/// Alternates Newton solves of `S̃(β; Γ) = 0` with `Γ² ← D̃⁻¹ V̂ D̃⁻¹`.
pub fn iterate_fit(data: &ClusteredDataset, config: &EstimatorConfig, weights: &WeightSet) -> Result<(FitResult, SandwichResult)> {
    config.validate(data.p())?;
    let mut gamma = config.initial_gamma(data.p());
    let mut beta = initial_beta(data);
    let mut total_newton = 0;
    let mut outer = 0;
    let mut converged = false;
    let mut newton_ok = false;
    let mut last: Option<(DVector<f64>, f64, SandwichResult, DMatrix<f64>)> = None;
    while outer < config.max_outer_iters {
        outer += 1;
        let system = SmoothedSystem::new(data, weights, &gamma);
        let newton = newton_solve(&system, &beta, config)?;
        total_newton += newton.iterations;
        newton_ok = newton.converged;
        let v = v_hat(data, weights, newton.beta.as_slice(), config.xi_form);
        let sw = assemble(data, newton.jacobian.clone(), v)?;
        let beta_change = if outer == 1 {
            f64::INFINITY
        } else {
            (&newton.beta - &beta).abs().max()
        };
        let sigma_trace = sw.sigma_hat.trace();
        let next_gamma = if sigma_trace > 0.0 && sigma_trace.is_finite() {
            floor_gamma(&sw.sigma_hat)
        } else {
            gamma.clone()
        };
        let gamma_change = (&next_gamma - &gamma).abs().max();
        beta = newton.beta.clone();
        let done = beta_change <= config.outer_beta_tol && gamma_change <= config.outer_gamma_tol;
        last = Some((newton.beta, newton.score_norm, sw, gamma));
        if done {
            converged = true;
            break;
        }
        gamma = next_gamma;
    }
    let (beta, score_norm, sw, used_gamma) = last.expect("at least one outer iteration");
    let objective = SmoothedSystem::new(data, weights, &used_gamma).objective(beta.as_slice());
    let fit = FitResult {
        beta_hat: Parameters::from_vector(beta)?,
        gamma: Some(used_gamma),
        score_norm,
        objective,
        iterations: total_newton,
        outer_iterations: outer,
        converged: converged && newton_ok,
        method: FitMethod::Newton,
        weight_set: weights.clone(),
    };
    Ok((fit, sw))
}
