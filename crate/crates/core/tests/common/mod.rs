#![allow(dead_code)]

// Brute-force reference computations written against flat observation
// indices with plain vectors, independent of the library's kernels.

use aft_core::data::{ClusteredDataset, Observation};
use aft_core::stats::RngStream;
use aft_core::weights::{WeightScheme, WeightSet};
use rand::Rng;

pub fn phi_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn phi_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub struct Flat {
    pub n: usize,
    pub p: usize,
    pub y: Vec<f64>,
    pub delta: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub cluster: Vec<usize>,
    pub omega: Vec<f64>,
    pub h: Vec<f64>,
}

impl Flat {
    pub fn new(data: &ClusteredDataset, ws: &WeightSet) -> Self {
        let m = data.n_obs();
        Flat {
            n: data.n_clusters(),
            p: data.p(),
            y: data.log_times().to_vec(),
            delta: data.events().iter().map(|&d| if d { 1.0 } else { 0.0 }).collect(),
            x: (0..m).map(|a| data.covariates(a).to_vec()).collect(),
            cluster: (0..m).map(|a| data.cluster_of(a)).collect(),
            omega: ws.omega.clone(),
            h: ws.h.clone(),
        }
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn resid(&self, beta: &[f64], a: usize) -> f64 {
        self.y[a] - self.x[a].iter().zip(beta).map(|(x, b)| x * b).sum::<f64>()
    }

    fn w(&self, a: usize) -> f64 {
        self.omega[self.cluster[a]] * self.h[a]
    }

    fn diff(&self, a: usize, b: usize) -> Vec<f64> {
        (0..self.p).map(|q| self.x[a][q] - self.x[b][q]).collect()
    }

    fn quad_form(g: &[Vec<f64>], d: &[f64]) -> f64 {
        let mut s = 0.0;
        for (r, row) in g.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                s += d[r] * v * d[c];
            }
        }
        s
    }

    fn nn(&self) -> f64 {
        (self.n * self.n) as f64
    }

    pub fn score(&self, beta: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.p];
        for a in 0..self.m() {
            for b in 0..self.m() {
                if self.resid(beta, a) <= self.resid(beta, b) {
                    let c = self.w(a) * self.w(b) * self.delta[a];
                    for (q, d) in self.diff(a, b).into_iter().enumerate() {
                        s[q] += c * d;
                    }
                }
            }
        }
        s.iter().map(|v| v / self.nn()).collect()
    }

    pub fn objective(&self, beta: &[f64]) -> f64 {
        let mut t = 0.0;
        for a in 0..self.m() {
            for b in 0..self.m() {
                let gap = self.resid(beta, b) - self.resid(beta, a);
                if gap > 0.0 {
                    t += self.w(a) * self.w(b) * self.delta[a] * gap;
                }
            }
        }
        t / self.nn()
    }

    pub fn smoothed_score(&self, beta: &[f64], g: &[Vec<f64>]) -> Vec<f64> {
        let root_n = (self.n as f64).sqrt();
        let mut s = vec![0.0; self.p];
        for a in 0..self.m() {
            for b in 0..self.m() {
                let d = self.diff(a, b);
                let r = Self::quad_form(g, &d).sqrt();
                if r == 0.0 {
                    continue;
                }
                let u = self.resid(beta, b) - self.resid(beta, a);
                let c = self.w(a) * self.w(b) * self.delta[a] * phi_cdf(root_n * u / r);
                for q in 0..self.p {
                    s[q] += c * d[q];
                }
            }
        }
        s.iter().map(|v| v / self.nn()).collect()
    }

    pub fn smoothed_objective(&self, beta: &[f64], g: &[Vec<f64>]) -> f64 {
        let root_n = (self.n as f64).sqrt();
        let mut t = 0.0;
        for a in 0..self.m() {
            for b in 0..self.m() {
                let u = self.resid(beta, b) - self.resid(beta, a);
                let sd = Self::quad_form(g, &self.diff(a, b)).sqrt() / root_n;
                let term = if sd == 0.0 {
                    u.max(0.0)
                } else {
                    u * phi_cdf(u / sd) + sd * phi_pdf(u / sd)
                };
                t += self.w(a) * self.w(b) * self.delta[a] * term;
            }
        }
        t / self.nn()
    }

    pub fn jacobian(&self, beta: &[f64], g: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let root_n = (self.n as f64).sqrt();
        let mut j = vec![vec![0.0; self.p]; self.p];
        for a in 0..self.m() {
            for b in 0..self.m() {
                let d = self.diff(a, b);
                let r = Self::quad_form(g, &d).sqrt();
                if r == 0.0 {
                    continue;
                }
                let u = self.resid(beta, b) - self.resid(beta, a);
                let c = self.w(a) * self.w(b) * self.delta[a] * phi_pdf(root_n * u / r) * root_n / r;
                for q in 0..self.p {
                    for s in 0..self.p {
                        j[q][s] += c * d[q] * d[s];
                    }
                }
            }
        }
        j.iter().map(|row| row.iter().map(|v| v / self.nn()).collect()).collect()
    }

    /// Weighted mean covariate difference over the at-risk set of `pivot`.
    pub fn z(&self, beta: &[f64], target: usize, pivot: usize) -> Vec<f64> {
        let at = self.resid(beta, pivot);
        let mut num = vec![0.0; self.p];
        let mut count = 0usize;
        for c in 0..self.m() {
            if self.resid(beta, c) >= at {
                count += 1;
                for q in 0..self.p {
                    num[q] += self.w(c) * (self.x[target][q] - self.x[c][q]);
                }
            }
        }
        num.iter().map(|v| v / count as f64).collect()
    }

    /// Rows of `ξ̂`; `martingale` drops the `ω_j` factor on the compensator.
    pub fn xi(&self, beta: &[f64], martingale: bool) -> Vec<Vec<f64>> {
        let n = self.n as f64;
        let mut out = vec![vec![0.0; self.p]; self.m()];
        for a in 0..self.m() {
            let ea = self.resid(beta, a);
            for b in 0..self.m() {
                let eb = self.resid(beta, b);
                let ob = self.omega[self.cluster[b]];
                if ea < eb {
                    for q in 0..self.p {
                        out[a][q] += ob * self.h[b] * self.delta[a] * (self.x[a][q] - self.x[b][q]) / n;
                    }
                } else {
                    let z = self.z(beta, a, b);
                    let cw = if martingale { 1.0 } else { ob };
                    for q in 0..self.p {
                        out[a][q] -= cw * self.delta[b] * z[q] / n;
                    }
                }
            }
        }
        out
    }

    pub fn v(&self, xi: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut g = vec![vec![0.0; self.p]; self.n];
        for a in 0..self.m() {
            for q in 0..self.p {
                g[self.cluster[a]][q] += self.h[a] * xi[a][q];
            }
        }
        let mut v = vec![vec![0.0; self.p]; self.p];
        for (i, gi) in g.iter().enumerate() {
            let o2 = self.omega[i] * self.omega[i];
            for q in 0..self.p {
                for s in 0..self.p {
                    v[q][s] += o2 * gi[q] * gi[s];
                }
            }
        }
        v.iter().map(|row| row.iter().map(|x| x / self.n as f64).collect()).collect()
    }
}

/// Random dataset with `M ≤ max_obs`, some tied covariates and responses.
pub fn random_dataset(rng: &mut RngStream, max_obs: usize, p: usize) -> ClusteredDataset {
    loop {
        let m = rng.random_range(4..=max_obs);
        let mut clusters: Vec<Vec<Observation>> = Vec::new();
        let mut left = m;
        while left > 0 {
            let size = rng.random_range(1..=4).min(left);
            left -= size;
            clusters.push(
                (0..size)
                    .map(|_| {
                        let x = (0..p)
                            .map(|_| if rng.random_bool(0.25) { 0.0 } else { rng.standard_normal() })
                            .collect();
                        let y = if rng.random_bool(0.15) { 1.0 } else { rng.standard_normal() };
                        Observation::new(y, rng.random_bool(0.65), x)
                    })
                    .collect(),
            );
        }
        if let Ok(d) = ClusteredDataset::from_clusters(clusters) {
            return d;
        }
    }
}

pub fn random_weights(rng: &mut RngStream, data: &ClusteredDataset) -> WeightSet {
    WeightSet {
        omega: (0..data.n_clusters()).map(|_| rng.random_range(0.3..1.5)).collect(),
        h: (0..data.n_obs()).map(|_| rng.random_range(0.05..=1.0)).collect(),
        rho_bar: 0.3,
        scheme: WeightScheme::CorrelationAdjusted,
    }
}

/// `A Aᵀ + 0.1 I` for a random `A`.
pub fn random_gamma(rng: &mut RngStream, p: usize) -> Vec<Vec<f64>> {
    let a: Vec<Vec<f64>> = (0..p).map(|_| (0..p).map(|_| rng.standard_normal()).collect()).collect();
    (0..p)
        .map(|r| {
            (0..p)
                .map(|c| (0..p).map(|k| a[r][k] * a[c][k]).sum::<f64>() + if r == c { 0.1 } else { 0.0 })
                .collect()
        })
        .collect()
}

pub fn to_matrix(rows: &[Vec<f64>]) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(rows.len(), rows.first().map_or(0, Vec::len), |r, c| rows[r][c])
}

pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    got.iter().zip(want).fold(0.0f64, |m, (g, w)| m.max((g - w).abs())) / scale
}
