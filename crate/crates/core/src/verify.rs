//! Self-check suite behind `aft verify`: brute-force enumerations of the
//! estimating functions and variance terms written directly from their
//! quadruple-sum definitions, finite-difference gradient checks, and
//! special-function accuracy checks.
//!
//! The oracles take `Φ` as a parameter so a perturbed normal CDF can be
//! injected to confirm the suite notices.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::{ClusteredDataset, Observation};
use crate::estimator::{
    objective_nonsmooth, objective_nonsmooth_sorted, score_nonsmooth, score_nonsmooth_sorted, SmoothedSystem,
};
use crate::stats::{chisq_quantile, std_normal_cdf, std_normal_pdf, RngStream};
use crate::variance::{v_hat_from_xi, xi_terms, z_term, XiForm};
use crate::weights::{WeightScheme, WeightSet};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Worst discrepancy observed.
    pub worst: f64,
    pub tolerance: f64,
}

pub struct VerifyOptions {
    pub seed: u64,
    /// Random datasets per oracle check.
    pub datasets: usize,
    /// Normal CDF used by the oracles.
    pub phi: fn(f64) -> f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            datasets: 50,
            phi: std_normal_cdf,
        }
    }
}

/// Indices of a flattened observation in cluster form.
struct Indexed<'a> {
    data: &'a ClusteredDataset,
}

impl Indexed<'_> {
    fn n(&self) -> usize {
        self.data.n_clusters()
    }
    fn size(&self, i: usize) -> usize {
        self.data.cluster_range(i).len()
    }
    fn flat(&self, i: usize, k: usize) -> usize {
        self.data.cluster_range(i).start + k
    }
    fn x(&self, i: usize, k: usize) -> &[f64] {
        self.data.covariates(self.flat(i, k))
    }
    fn delta(&self, i: usize, k: usize) -> f64 {
        if self.data.events()[self.flat(i, k)] {
            1.0
        } else {
            0.0
        }
    }
    fn e(&self, beta: &[f64], i: usize, k: usize) -> f64 {
        let x = self.x(i, k);
        self.data.log_times()[self.flat(i, k)] - x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Visits every `(i, k, j, l)` quadruple.
fn quad(ix: &Indexed<'_>, mut f: impl FnMut(usize, usize, usize, usize)) {
    for i in 0..ix.n() {
        for j in 0..ix.n() {
            for k in 0..ix.size(i) {
                for l in 0..ix.size(j) {
                    f(i, k, j, l);
                }
            }
        }
    }
}

/// `N⁻² ΣΣΣΣ ω_i ω_j h_ik h_jl Δ_ik (X_ik − X_jl) I(e_ik ≤ e_jl)`.
pub fn oracle_score(data: &ClusteredDataset, ws: &WeightSet, beta: &[f64]) -> DVector<f64> {
    let ix = Indexed { data };
    let mut s = DVector::zeros(data.p());
    quad(&ix, |i, k, j, l| {
        if ix.e(beta, i, k) <= ix.e(beta, j, l) {
            let w = ws.omega[i] * ws.omega[j] * ws.h[ix.flat(i, k)] * ws.h[ix.flat(j, l)] * ix.delta(i, k);
            for q in 0..data.p() {
                s[q] += w * (ix.x(i, k)[q] - ix.x(j, l)[q]);
            }
        }
    });
    s / (ix.n() as f64).powi(2)
}

/// `N⁻² ΣΣΣΣ ω_i ω_j h_ik h_jl Δ_ik (e_ik − e_jl)⁻`.
pub fn oracle_objective(data: &ClusteredDataset, ws: &WeightSet, beta: &[f64]) -> f64 {
    let ix = Indexed { data };
    let mut total = 0.0;
    quad(&ix, |i, k, j, l| {
        let neg = (ix.e(beta, j, l) - ix.e(beta, i, k)).max(0.0);
        total += ws.omega[i] * ws.omega[j] * ws.h[ix.flat(i, k)] * ws.h[ix.flat(j, l)] * ix.delta(i, k) * neg;
    });
    total / (ix.n() as f64).powi(2)
}

fn r_ikjl(ix: &Indexed<'_>, gamma: &DMatrix<f64>, i: usize, k: usize, j: usize, l: usize) -> f64 {
    let d = DVector::from_iterator(gamma.nrows(), ix.x(i, k).iter().zip(ix.x(j, l)).map(|(a, b)| a - b));
    (d.transpose() * gamma * &d)[0].max(0.0).sqrt()
}

/// Smoothed score with the supplied `Φ`.
pub fn oracle_smoothed_score(
    data: &ClusteredDataset,
    ws: &WeightSet,
    beta: &[f64],
    gamma: &DMatrix<f64>,
    phi: fn(f64) -> f64,
) -> DVector<f64> {
    let ix = Indexed { data };
    let sqrt_n = (ix.n() as f64).sqrt();
    let mut s = DVector::zeros(data.p());
    quad(&ix, |i, k, j, l| {
        let r = r_ikjl(&ix, gamma, i, k, j, l);
        if r == 0.0 {
            return;
        }
        let z = sqrt_n * (ix.e(beta, j, l) - ix.e(beta, i, k)) / r;
        let w = ws.omega[i] * ws.omega[j] * ws.h[ix.flat(i, k)] * ws.h[ix.flat(j, l)] * ix.delta(i, k) * phi(z);
        for q in 0..data.p() {
            s[q] += w * (ix.x(i, k)[q] - ix.x(j, l)[q]);
        }
    });
    s / (ix.n() as f64).powi(2)
}

/// Smoothed objective: `u Φ(u/s) + s φ(u/s)` per pair with `s = r/√N`.
pub fn oracle_smoothed_objective(
    data: &ClusteredDataset,
    ws: &WeightSet,
    beta: &[f64],
    gamma: &DMatrix<f64>,
    phi: fn(f64) -> f64,
) -> f64 {
    let ix = Indexed { data };
    let sqrt_n = (ix.n() as f64).sqrt();
    let mut total = 0.0;
    quad(&ix, |i, k, j, l| {
        let u = ix.e(beta, j, l) - ix.e(beta, i, k);
        let s = r_ikjl(&ix, gamma, i, k, j, l) / sqrt_n;
        let term = if s == 0.0 {
            u.max(0.0)
        } else {
            u * phi(u / s) + s * std_normal_pdf(u / s)
        };
        total += ws.omega[i] * ws.omega[j] * ws.h[ix.flat(i, k)] * ws.h[ix.flat(j, l)] * ix.delta(i, k) * term;
    });
    total / (ix.n() as f64).powi(2)
}

/// `D̃ = N⁻² ΣΣΣΣ w Δ d dᵀ φ(z) √N / r`.
pub fn oracle_jacobian(data: &ClusteredDataset, ws: &WeightSet, beta: &[f64], gamma: &DMatrix<f64>) -> DMatrix<f64> {
    let ix = Indexed { data };
    let p = data.p();
    let sqrt_n = (ix.n() as f64).sqrt();
    let mut jac = DMatrix::zeros(p, p);
    quad(&ix, |i, k, j, l| {
        let r = r_ikjl(&ix, gamma, i, k, j, l);
        if r == 0.0 {
            return;
        }
        let z = sqrt_n * (ix.e(beta, j, l) - ix.e(beta, i, k)) / r;
        let d = DVector::from_iterator(p, ix.x(i, k).iter().zip(ix.x(j, l)).map(|(a, b)| a - b));
        let w = ws.omega[i] * ws.omega[j] * ws.h[ix.flat(i, k)] * ws.h[ix.flat(j, l)] * ix.delta(i, k);
        jac += &d * d.transpose() * (w * std_normal_pdf(z) * sqrt_n / r);
    });
    jac / (ix.n() as f64).powi(2)
}

/// `z` for target `(i, k)`, pivot `(j, f)`, written with cluster indices.
pub fn oracle_z(data: &ClusteredDataset, ws: &WeightSet, beta: &[f64], target: (usize, usize), pivot: (usize, usize)) -> DVector<f64> {
    let ix = Indexed { data };
    let (i, k) = target;
    let (j, f) = pivot;
    let e_jf = ix.e(beta, j, f);
    let mut num = DVector::zeros(data.p());
    let mut den = 0.0;
    for r in 0..ix.n() {
        for s in 0..ix.size(r) {
            if ix.e(beta, r, s) >= e_jf {
                den += 1.0;
                for q in 0..data.p() {
                    num[q] += ws.omega[r] * ws.h[ix.flat(r, s)] * (ix.x(i, k)[q] - ix.x(r, s)[q]);
                }
            }
        }
    }
    num / den
}

/// `ξ̂_ik` for every observation by direct enumeration over `(j, f)`.
pub fn oracle_xi(data: &ClusteredDataset, ws: &WeightSet, beta: &[f64], form: XiForm) -> DMatrix<f64> {
    let ix = Indexed { data };
    let n = ix.n() as f64;
    let mut out = DMatrix::zeros(data.n_obs(), data.p());
    for i in 0..ix.n() {
        for k in 0..ix.size(i) {
            let row = ix.flat(i, k);
            for j in 0..ix.n() {
                for f in 0..ix.size(j) {
                    let lead = ix.e(beta, i, k) < ix.e(beta, j, f);
                    let trail = ix.e(beta, i, k) >= ix.e(beta, j, f);
                    let comp_w = match form {
                        XiForm::AsPrinted => ws.omega[j],
                        XiForm::Martingale => 1.0,
                    };
                    let z = oracle_z(data, ws, beta, (i, k), (j, f));
                    for q in 0..data.p() {
                        let mut t = 0.0;
                        if lead {
                            t += ws.omega[j] * ix.delta(i, k) / n * ws.h[ix.flat(j, f)] * (ix.x(i, k)[q] - ix.x(j, f)[q]);
                        }
                        if trail {
                            t -= comp_w * ix.delta(j, f) / n * z[q];
                        }
                        out[(row, q)] += t;
                    }
                }
            }
        }
    }
    out
}

/// `V̂ = N⁻¹ Σ_i Σ_k Σ_l ω_i² h_ik h_il ξ̂_ik ξ̂_ilᵀ`.
pub fn oracle_v(data: &ClusteredDataset, ws: &WeightSet, xi: &DMatrix<f64>) -> DMatrix<f64> {
    let ix = Indexed { data };
    let p = data.p();
    let mut v = DMatrix::zeros(p, p);
    for i in 0..ix.n() {
        for k in 0..ix.size(i) {
            for l in 0..ix.size(i) {
                let a = xi.row(ix.flat(i, k)).transpose();
                let b = xi.row(ix.flat(i, l)).transpose();
                v += a * b.transpose() * (ws.omega[i].powi(2) * ws.h[ix.flat(i, k)] * ws.h[ix.flat(i, l)]);
            }
        }
    }
    v / ix.n() as f64
}

/// Small random clustered dataset with ties in the design and response.
pub fn random_small_dataset(rng: &mut RngStream, max_obs: usize, p: usize) -> ClusteredDataset {
    loop {
        let mut clusters = Vec::new();
        let mut total = 0;
        let target = rng.random_range(3..=max_obs);
        while total < target {
            let size = rng.random_range(1..=3).min(target - total);
            let cluster: Vec<Observation> = (0..size)
                .map(|_| {
                    let x: Vec<f64> = (0..p)
                        .map(|_| if rng.random::<f64>() < 0.2 { 1.0 } else { rng.standard_normal() })
                        .collect();
                    let y = if rng.random::<f64>() < 0.1 { 0.5 } else { rng.standard_normal() };
                    Observation::new(y, rng.random::<f64>() < 0.7, x)
                })
                .collect();
            total += size;
            clusters.push(cluster);
        }
        if clusters.len() >= 2 {
            if let Ok(d) = ClusteredDataset::from_clusters(clusters) {
                return d;
            }
        }
    }
}

pub fn random_weight_set(rng: &mut RngStream, data: &ClusteredDataset) -> WeightSet {
    WeightSet {
        omega: (0..data.n_clusters()).map(|_| rng.random_range(0.2..1.0)).collect(),
        h: (0..data.n_obs()).map(|_| rng.random_range(0.1..=1.0)).collect(),
        rho_bar: 0.5,
        scheme: WeightScheme::CorrelationAdjusted,
    }
}

pub fn random_gamma(rng: &mut RngStream, p: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| rng.standard_normal());
    &a * a.transpose() + DMatrix::identity(p, p) * 0.2
}

fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).abs().max() / b.abs().max().max(1e-12)
}

fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max() / b.abs().max().max(1e-12)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

struct Tracker {
    outcomes: Vec<CheckOutcome>,
}

impl Tracker {
    fn record(&mut self, name: &str, worst: f64, tolerance: f64) {
        self.outcomes.push(CheckOutcome {
            name: name.to_string(),
            passed: worst.is_finite() && worst <= tolerance,
            worst,
            tolerance,
        });
    }
}

/// 15-point Gauss–Legendre rule on [−1, 1]: the centre node, then the
/// positive half of the symmetric pairs.
const GL_NODES: [(f64, f64); 8] = [
    (0.0, 0.202_578_241_925_561_27),
    (0.201_194_093_997_434_52, 0.198_431_485_327_111_58),
    (0.394_151_347_077_563_37, 0.186_161_000_015_562_2),
    (0.570_972_172_608_538_85, 0.166_269_205_816_993_93),
    (0.724_417_731_360_170_05, 0.139_570_677_926_154_31),
    (0.848_206_583_410_427_2, 0.107_159_220_467_171_94),
    (0.937_273_392_400_705_9, 0.070_366_047_488_108_12),
    (0.987_992_518_020_485_4, 0.030_753_241_996_117_27),
];

/// `Φ(x)` by composite Gauss–Legendre integration of the density.
fn phi_by_quadrature(x: f64) -> f64 {
    let panels = 64;
    let h = x / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let mid = (k as f64 + 0.5) * h;
        let half = 0.5 * h;
        for (idx, &(t, w)) in GL_NODES.iter().enumerate() {
            if idx == 0 {
                total += w * half * std_normal_pdf(mid);
            } else {
                total += w * half * (std_normal_pdf(mid + half * t) + std_normal_pdf(mid - half * t));
            }
        }
    }
    0.5 + total
}

/// Runs every check and returns the ledger.
pub fn run_checks(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    let mut t = Tracker { outcomes: Vec::new() };
    let phi = opts.phi;

    let worst_phi = (-60..=60)
        .map(|k| k as f64 * 0.1)
        .map(|x| (phi(x) - phi_by_quadrature(x)).abs())
        .fold(0.0, f64::max);
    t.record("normal cdf vs quadrature of density", worst_phi, 1e-12);

    // χ²₂ quantile is −2 ln(1 − p); χ²₄ solves (1 + q/2) e^{−q/2} = 1 − p
    let mut worst_chi: f64 = 0.0;
    for k in 1..100 {
        let prob = k as f64 / 100.0;
        let q2 = chisq_quantile(prob, 2).unwrap_or(f64::NAN);
        worst_chi = worst_chi.max((q2 + 2.0 * (1.0 - prob).ln()).abs());
        let q4 = chisq_quantile(prob, 4).unwrap_or(f64::NAN);
        worst_chi = worst_chi.max(((1.0 + q4 / 2.0) * (-q4 / 2.0).exp() - (1.0 - prob)).abs());
    }
    t.record("chi-square quantile closed forms (df 2, 4)", worst_chi, 1e-9);

    let mut rng = RngStream::new(opts.seed, 0);
    let mut worst = [0.0f64; 10];
    let (mut worst_grad, mut worst_jac) = (0.0f64, 0.0f64);
    for _ in 0..opts.datasets {
        let p = rng.random_range(1..=3);
        let data = random_small_dataset(&mut rng, 8, p);
        let unit = WeightSet::unit(&data);
        let ws = random_weight_set(&mut rng, &data);
        let gamma = random_gamma(&mut rng, p);
        let beta: Vec<f64> = (0..p).map(|_| 0.5 * rng.standard_normal()).collect();

        let sg = oracle_score(&data, &unit, &beta);
        worst[0] = worst[0]
            .max(rel_err_vec(&score_nonsmooth(&data, &unit, &beta), &sg))
            .max(rel_err_vec(&score_nonsmooth_sorted(&data, &unit, &beta), &sg));
        let lg = oracle_objective(&data, &unit, &beta);
        worst[1] = worst[1]
            .max(rel_err(objective_nonsmooth(&data, &unit, &beta), lg))
            .max(rel_err(objective_nonsmooth_sorted(&data, &unit, &beta), lg));
        let sw = oracle_score(&data, &ws, &beta);
        worst[2] = worst[2]
            .max(rel_err_vec(&score_nonsmooth(&data, &ws, &beta), &sw))
            .max(rel_err_vec(&score_nonsmooth_sorted(&data, &ws, &beta), &sw));
        let lw = oracle_objective(&data, &ws, &beta);
        worst[3] = worst[3]
            .max(rel_err(objective_nonsmooth(&data, &ws, &beta), lw))
            .max(rel_err(objective_nonsmooth_sorted(&data, &ws, &beta), lw));

        let sys = SmoothedSystem::new(&data, &ws, &gamma);
        let (s_lib, d_lib) = sys.score_and_jacobian(&beta);
        worst[4] = worst[4].max(rel_err_vec(&s_lib, &oracle_smoothed_score(&data, &ws, &beta, &gamma, phi)));
        worst[5] = worst[5].max(rel_err(sys.objective(&beta), oracle_smoothed_objective(&data, &ws, &beta, &gamma, phi)));
        worst[6] = worst[6].max(rel_err_mat(&d_lib, &oracle_jacobian(&data, &ws, &beta, &gamma)));

        for form in [XiForm::AsPrinted, XiForm::Martingale] {
            let xi_lib = xi_terms(&data, &ws, &beta, form);
            let xi_ref = oracle_xi(&data, &ws, &beta, form);
            worst[7] = worst[7].max(rel_err_mat(&xi_lib, &xi_ref));
            let v_ref = oracle_v(&data, &ws, &xi_ref);
            worst[9] = worst[9].max(rel_err_mat(&v_hat_from_xi(&data, &ws, &xi_lib), &v_ref));
        }
        let m = data.n_obs();
        let (a, b) = (rng.random_range(0..m), rng.random_range(0..m));
        let to_pair = |f: usize| {
            let i = data.cluster_of(f);
            (i, f - data.cluster_range(i).start)
        };
        let z_ref = oracle_z(&data, &ws, &beta, to_pair(a), to_pair(b));
        worst[8] = worst[8].max(rel_err_vec(&z_term(&data, &ws, &beta, a, b), &z_ref));

        // ∇L̃ = S̃ and ∂S̃/∂β = D̃ by central differences
        let step = 1e-5;
        let scale = s_lib.abs().max().max(1e-3);
        let jscale = d_lib.abs().max().max(1e-3);
        for q in 0..p {
            let mut hi = beta.clone();
            let mut lo = beta.clone();
            hi[q] += step;
            lo[q] -= step;
            let grad = (sys.objective(&hi) - sys.objective(&lo)) / (2.0 * step);
            worst_grad = worst_grad.max((grad - s_lib[q]).abs() / scale);
            let col = (sys.score(&hi) - sys.score(&lo)) / (2.0 * step);
            worst_jac = worst_jac.max((col - d_lib.column(q)).abs().max() / jscale);
        }
    }
    let names = [
        "S_G brute force",
        "L_G brute force",
        "S_wh brute force",
        "L_wh brute force",
        "smoothed score brute force",
        "smoothed objective brute force",
        "smoothed jacobian brute force",
        "xi brute force",
        "z brute force",
        "V brute force",
    ];
    for (name, w) in names.iter().zip(worst.iter()) {
        t.record(name, *w, 1e-10);
    }
    t.record("gradient of smoothed objective = smoothed score", worst_grad, 1e-5);
    t.record("derivative of smoothed score = smoothed jacobian", worst_jac, 1e-5);
    t.outcomes
}

pub fn render_ledger(outcomes: &[CheckOutcome]) -> String {
    let mut s = String::new();
    for o in outcomes {
        s.push_str(&format!(
            "{} {:<52} worst {:.3e} (tol {:.0e})\n",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.worst,
            o.tolerance
        ));
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    s.push_str(&format!("{} checks, {} failed\n", outcomes.len(), failed));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let out = run_checks(&VerifyOptions {
            datasets: 10,
            ..Default::default()
        });
        assert!(out.iter().all(|o| o.passed), "{}", render_ledger(&out));
    }

    fn perturbed_phi(x: f64) -> f64 {
        std_normal_cdf(x) + 1e-6 * std_normal_pdf(x)
    }

    #[test]
    fn perturbed_phi_fails() {
        let out = run_checks(&VerifyOptions {
            datasets: 5,
            phi: perturbed_phi,
            ..Default::default()
        });
        let failed: Vec<_> = out.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
        assert!(failed.contains(&"normal cdf vs quadrature of density"));
        assert!(failed.contains(&"smoothed score brute force"));
    }
}
