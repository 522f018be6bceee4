//! Cluster correlation weights `ω_i` and robust covariate (GR) weights `h_ik`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{ClusteredDataset, Residuals};
use crate::error::{AftError, Result};
use crate::stats::{chisq_quantile, midranks};

/// Normal-consistency factor for the median absolute deviation.
pub const MAD_SCALE: f64 = 1.4826;

/// Upper clamp applied to the estimated average correlation.
pub const RHO_BAR_MAX: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    Unit,
    InverseSize,
    #[default]
    CorrelationAdjusted,
}

impl std::str::FromStr for WeightScheme {
    type Err = AftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(Self::Unit),
            "inv-size" | "inverse_size" => Ok(Self::InverseSize),
            "corr" | "correlation_adjusted" => Ok(Self::CorrelationAdjusted),
            other => Err(AftError::InvalidArgument(format!("unknown weight scheme '{other}'"))),
        }
    }
}

/// Weights aligned with a dataset: `omega` per cluster, `h` per observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub omega: Vec<f64>,
    pub h: Vec<f64>,
    pub rho_bar: f64,
    pub scheme: WeightScheme,
}

impl WeightSet {
    /// `ω ≡ 1, h ≡ 1`: the classical Gehan weighting.
    pub fn unit(data: &ClusteredDataset) -> Self {
        Self {
            omega: vec![1.0; data.n_clusters()],
            h: vec![1.0; data.n_obs()],
            rho_bar: 0.0,
            scheme: WeightScheme::Unit,
        }
    }

    pub fn new(data: &ClusteredDataset, omega: Vec<f64>, h: Vec<f64>, rho_bar: f64, scheme: WeightScheme) -> Result<Self> {
        if omega.len() != data.n_clusters() {
            return Err(AftError::LengthMismatch { expected: data.n_clusters(), found: omega.len() });
        }
        if h.len() != data.n_obs() {
            return Err(AftError::LengthMismatch { expected: data.n_obs(), found: h.len() });
        }
        if omega.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(AftError::InvalidArgument("cluster weights must be positive".into()));
        }
        if h.iter().any(|&w| !(w > 0.0 && w <= 1.0)) {
            return Err(AftError::InvalidArgument("GR weights must lie in (0, 1]".into()));
        }
        Ok(Self { omega, h, rho_bar, scheme })
    }

    /// Per-observation product weight `ω_i · h_ik`.
    pub fn observation_weights(&self, data: &ClusteredDataset) -> Vec<f64> {
        self.h
            .iter()
            .enumerate()
            .map(|(a, h)| self.omega[data.cluster_of(a)] * h)
            .collect()
    }
}

/// Rank-based moment estimator of the average within-cluster correlation.
///
/// Midranks are taken over all `M` pooled residuals and centred at
/// `(M+1)/2`. Returns 0 when every cluster is a singleton.
pub fn estimate_rho_bar(data: &ClusteredDataset, residuals: &Residuals) -> f64 {
    let ranks = midranks(&residuals.e);
    let center = (data.n_obs() as f64 + 1.0) / 2.0;
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for i in 0..data.n_clusters() {
        let range = data.cluster_range(i);
        let n_i = range.len() as f64;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for a in range {
            let dev = ranks[a] - center;
            sum += dev;
            sum_sq += dev * dev;
        }
        // Σ_{j≠l} d_j d_l = (Σ d)² − Σ d²
        numerator += sum * sum - sum_sq;
        denominator += (n_i - 1.0) * sum_sq;
    }
    if denominator == 0.0 {
        return 0.0;
    }
    numerator / denominator
}

/// Cluster weights under `scheme`; `rho_bar` is clamped to `[0, 0.99]`.
pub fn omega_weights(data: &ClusteredDataset, rho_bar: f64, scheme: WeightScheme) -> Vec<f64> {
    let rho = clamp_rho_bar(rho_bar);
    data.cluster_sizes()
        .into_iter()
        .map(|n| match scheme {
            WeightScheme::Unit => 1.0,
            WeightScheme::InverseSize => 1.0 / n as f64,
            WeightScheme::CorrelationAdjusted => 1.0 / (1.0 + (n as f64 - 1.0) * rho),
        })
        .collect()
}

pub fn clamp_rho_bar(rho_bar: f64) -> f64 {
    if rho_bar.is_nan() {
        0.0
    } else {
        rho_bar.clamp(0.0, RHO_BAR_MAX)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScatterMethod {
    /// Orthogonalized Gnanadesikan–Kettenring with MAD scales.
    Ogk,
}

/// Robust location and dispersion of a design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustScatter {
    pub center: DVector<f64>,
    pub scatter: DMatrix<f64>,
    pub method: ScatterMethod,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Raw (unscaled) median absolute deviation around the median.
pub fn mad(values: &[f64]) -> f64 {
    let med = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    median(&dev)
}

fn robust_sd(values: &[f64]) -> f64 {
    MAD_SCALE * mad(values)
}

fn is_degenerate_scale(scale: f64, location: f64) -> bool {
    !(scale > 1e-12 * (1.0 + location.abs()))
}

/// Deterministic OGK estimate.
///
/// Center is the coordinatewise median. Scatter: each column standardized
/// by its MAD scale, pairwise covariances from the GK identity
/// `(σ(y_j+y_k)² − σ(y_j−y_k)²)/4`, re-estimated variances along the
/// eigenvectors of that matrix, mapped back to the original scale.
/// Eigenvalues are floored at `1e-8 · trace / p`.
pub fn robust_scatter(design: &DMatrix<f64>) -> Result<RobustScatter> {
    let (m, p) = design.shape();
    if m <= p {
        return Err(AftError::TooFewObservations { m, p });
    }
    let columns: Vec<Vec<f64>> = (0..p).map(|j| design.column(j).iter().copied().collect()).collect();
    let center = DVector::from_iterator(p, columns.iter().map(|c| median(c)));
    let mut scales = Vec::with_capacity(p);
    for (j, col) in columns.iter().enumerate() {
        let s = robust_sd(col);
        if is_degenerate_scale(s, center[j]) {
            return Err(AftError::DegenerateColumn { column: j + 1 });
        }
        scales.push(s);
    }
    let standardized: Vec<Vec<f64>> = columns
        .iter()
        .enumerate()
        .map(|(j, c)| c.iter().map(|v| (v - center[j]) / scales[j]).collect())
        .collect();

    let mut gk = DMatrix::<f64>::identity(p, p);
    for j in 0..p {
        for k in (j + 1)..p {
            let plus: Vec<f64> = standardized[j].iter().zip(&standardized[k]).map(|(a, b)| a + b).collect();
            let minus: Vec<f64> = standardized[j].iter().zip(&standardized[k]).map(|(a, b)| a - b).collect();
            let cov = (robust_sd(&plus).powi(2) - robust_sd(&minus).powi(2)) / 4.0;
            gk[(j, k)] = cov;
            gk[(k, j)] = cov;
        }
    }
    let eig = SymmetricEigen::new(gk);
    let vectors = eig.eigenvectors;
    let mut projected_var = DVector::zeros(p);
    for q in 0..p {
        let z: Vec<f64> = (0..m)
            .map(|row| (0..p).map(|j| standardized[j][row] * vectors[(j, q)]).sum())
            .collect();
        projected_var[q] = robust_sd(&z).powi(2);
    }
    let scaled = DMatrix::from_diagonal(&DVector::from_vec(scales));
    let inner = &vectors * DMatrix::from_diagonal(&projected_var) * vectors.transpose();
    let scatter = floor_eigenvalues(&(&scaled * inner * &scaled), 1e-8);
    Ok(RobustScatter {
        center,
        scatter,
        method: ScatterMethod::Ogk,
    })
}

/// Symmetrizes and raises eigenvalues below `rel · trace / p` to that floor.
pub fn floor_eigenvalues(matrix: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let p = matrix.nrows();
    let sym = (matrix + matrix.transpose()) * 0.5;
    let floor = (rel * sym.trace() / p as f64).max(0.0);
    let eig = SymmetricEigen::new(sym);
    let values = eig.eigenvalues.map(|v| v.max(floor));
    let v = eig.eigenvectors;
    let out = &v * DMatrix::from_diagonal(&values) * v.transpose();
    (&out + out.transpose()) * 0.5
}

/// Classical (unbiased) sample covariance, for comparisons.
pub fn sample_covariance(design: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, p) = design.shape();
    let mean = design.row_mean();
    let mut cov = DMatrix::zeros(p, p);
    for r in 0..m {
        let d = design.row(r) - &mean;
        cov += d.transpose() * d;
    }
    cov / (m as f64 - 1.0)
}

/// Squared Mahalanobis distances of every row of `design`.
pub fn mahalanobis_sq(design: &DMatrix<f64>, scatter: &RobustScatter) -> Result<Vec<f64>> {
    let chol = scatter
        .scatter
        .clone()
        .cholesky()
        .ok_or_else(|| AftError::Numerical("robust scatter is not positive definite".into()))?;
    Ok((0..design.nrows())
        .map(|r| {
            let d: DVector<f64> = design.row(r).transpose() - &scatter.center;
            let sol = chol.solve(&d);
            d.dot(&sol).max(0.0)
        })
        .collect())
}

/// GR weight for one squared distance: `min{1, (c/d²)^{α/2}}`, 1 at `d² = 0`.
#[inline]
pub fn gr_weight(d_sq: f64, alpha: f64, c: f64) -> f64 {
    if d_sq <= c {
        1.0
    } else {
        (c / d_sq).powf(alpha / 2.0).min(1.0)
    }
}

pub fn gr_weights(design: &DMatrix<f64>, scatter: &RobustScatter, alpha: f64, c: f64) -> Result<Vec<f64>> {
    Ok(mahalanobis_sq(design, scatter)?
        .into_iter()
        .map(|d| gr_weight(d, alpha, c))
        .collect())
}

/// Tuning for the GR weights. `c` defaults to the `c_quantile` chi-square
/// quantile with as many degrees of freedom as columns used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrConfig {
    pub alpha: f64,
    pub c_quantile: f64,
    pub c: Option<f64>,
}

impl Default for GrConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            c_quantile: 0.95,
            c: None,
        }
    }
}

/// GR weights for a dataset plus which covariate columns entered the distance.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignWeights {
    pub h: Vec<f64>,
    /// 0-based columns used for the Mahalanobis distance.
    pub used_columns: Vec<usize>,
    /// 0-based columns dropped because their MAD is zero.
    pub dropped_columns: Vec<usize>,
    pub c: f64,
}

pub fn design_matrix(data: &ClusteredDataset) -> DMatrix<f64> {
    DMatrix::from_row_slice(data.n_obs(), data.p(), data.design())
}

/// GR weights on the dataset's design; columns with zero MAD (binary
/// indicators with a majority level, constants) are excluded from the
/// distance instead of failing. All columns dropped gives `h ≡ 1`.
pub fn design_gr_weights(data: &ClusteredDataset, config: &GrConfig) -> Result<DesignWeights> {
    let full = design_matrix(data);
    let (mut used, mut dropped) = (Vec::new(), Vec::new());
    for j in 0..data.p() {
        let col: Vec<f64> = full.column(j).iter().copied().collect();
        if is_degenerate_scale(robust_sd(&col), median(&col)) {
            dropped.push(j);
        } else {
            used.push(j);
        }
    }
    if used.is_empty() {
        return Ok(DesignWeights {
            h: vec![1.0; data.n_obs()],
            used_columns: used,
            dropped_columns: dropped,
            c: f64::NAN,
        });
    }
    let sub = full.select_columns(&used);
    let c = match config.c {
        Some(c) => c,
        None => chisq_quantile(config.c_quantile, used.len() as u32)?,
    };
    let scatter = robust_scatter(&sub)?;
    let h = gr_weights(&sub, &scatter, config.alpha, c)?;
    Ok(DesignWeights {
        h,
        used_columns: used,
        dropped_columns: dropped,
        c,
    })
}
