//! Two-stage fitting: a preliminary Gehan fit supplies the residuals for
//! `ρ̄`, then the weighted estimators are solved with those weights.

use nalgebra::DVector;

use crate::data::{compute_residuals, ClusteredDataset};
use crate::error::Result;
use crate::estimator::{fit, fit_nonsmooth_from, EstimatorConfig, FitResult, Variant};
use crate::variance::{iterate_fit, sandwich_at, SandwichResult};
use crate::weights::{design_gr_weights, estimate_rho_bar, omega_weights, DesignWeights, WeightScheme, WeightSet};

/// Weights derived from a preliminary fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedWeights {
    pub preliminary: FitResult,
    /// Unclamped moment estimate; `ω` uses the clamped value.
    pub rho_bar: f64,
    pub omega: Vec<f64>,
    pub design: DesignWeights,
}

impl PreparedWeights {
    pub fn weight_set(&self, variant: Variant, scheme: WeightScheme, robust: bool, data: &ClusteredDataset) -> WeightSet {
        match variant {
            Variant::Gehan => WeightSet::unit(data),
            Variant::Weighted | Variant::WeightedRobust => WeightSet {
                omega: self.omega.clone(),
                h: if robust && variant == Variant::WeightedRobust {
                    self.design.h.clone()
                } else {
                    vec![1.0; data.n_obs()]
                },
                rho_bar: self.rho_bar,
                scheme,
            },
        }
    }
}

fn gehan_config(config: &EstimatorConfig) -> EstimatorConfig {
    EstimatorConfig {
        variant: Variant::Gehan,
        smoothed: false,
        scheme: WeightScheme::Unit,
        ..config.clone()
    }
}

/// Preliminary nonsmooth Gehan fit, `ρ̄` from its residuals, `ω` under the
/// configured scheme and GR weights from the design.
pub fn prepare_weights(data: &ClusteredDataset, config: &EstimatorConfig) -> Result<PreparedWeights> {
    let preliminary = fit(data, &gehan_config(config), &WeightSet::unit(data))?;
    let residuals = compute_residuals(data, &preliminary.beta_hat)?;
    let rho_bar = estimate_rho_bar(data, &residuals);
    let omega = omega_weights(data, rho_bar, config.scheme);
    let design = design_gr_weights(data, &config.gr)?;
    Ok(PreparedWeights {
        preliminary,
        rho_bar,
        omega,
        design,
    })
}

/// One estimator with its sandwich covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantFit {
    pub fit: FitResult,
    /// Smoothed companion fit whose `Γ²` and covariance back the SEs.
    pub smoothed: FitResult,
    pub sandwich: SandwichResult,
    pub prepared: Option<PreparedWeights>,
}

/// Fits `config.variant`. The smoothed fit always runs (it carries the
/// covariance); when `config.smoothed` is false the reported point
/// estimate is the nonsmooth minimizer and the sandwich is re-evaluated
/// there with the converged `Γ²`.
pub fn fit_variant(data: &ClusteredDataset, config: &EstimatorConfig, robust: bool) -> Result<VariantFit> {
    let (weights, prepared) = match config.variant {
        Variant::Gehan => (WeightSet::unit(data), None),
        variant => {
            let prepared = prepare_weights(data, config)?;
            (prepared.weight_set(variant, config.scheme, robust, data), Some(prepared))
        }
    };
    let (smoothed, sw) = iterate_fit(data, config, &weights)?;
    if config.smoothed {
        return Ok(VariantFit {
            fit: smoothed.clone(),
            smoothed,
            sandwich: sw,
            prepared,
        });
    }
    let nonsmooth = fit_nonsmooth_from(data, config, &weights, smoothed.beta_hat.vector())?;
    let gamma = smoothed.gamma.clone().expect("smoothed fit carries gamma");
    let sandwich = sandwich_at(data, &weights, nonsmooth.beta_hat.as_slice(), &gamma, config.xi_form)?;
    Ok(VariantFit {
        fit: nonsmooth,
        smoothed,
        sandwich,
        prepared,
    })
}

/// The four estimators compared in the simulation tables.
#[derive(Debug, Clone, PartialEq)]
pub struct AllFits {
    pub gehan: FitResult,
    pub weighted: FitResult,
    pub weighted_robust: FitResult,
    pub smoothed_weighted_robust: FitResult,
    pub sandwich: SandwichResult,
    pub prepared: PreparedWeights,
}

impl AllFits {
    /// Point estimates in table order.
    pub fn betas(&self) -> [&DVector<f64>; 4] {
        [
            self.gehan.beta_hat.vector(),
            self.weighted.beta_hat.vector(),
            self.weighted_robust.beta_hat.vector(),
            self.smoothed_weighted_robust.beta_hat.vector(),
        ]
    }
}

pub const ESTIMATOR_NAMES: [&str; 4] = ["gehan", "weighted", "weighted_robust", "smoothed_weighted_robust"];

/// Gehan, weighted (`h ≡ 1`), weighted robust and smoothed weighted robust.
pub fn fit_all(data: &ClusteredDataset, config: &EstimatorConfig) -> Result<AllFits> {
    let prepared = prepare_weights(data, config)?;
    let gehan = prepared.preliminary.clone();
    let nonsmooth = EstimatorConfig {
        smoothed: false,
        ..config.clone()
    };
    let weighted_ws = prepared.weight_set(Variant::Weighted, config.scheme, true, data);
    let weighted = fit(data, &nonsmooth, &weighted_ws)?;
    let robust_ws = prepared.weight_set(Variant::WeightedRobust, config.scheme, true, data);
    let (smoothed, sandwich) = iterate_fit(data, config, &robust_ws)?;
    let weighted_robust = fit_nonsmooth_from(data, &nonsmooth, &robust_ws, smoothed.beta_hat.vector())?;
    Ok(AllFits {
        gehan,
        weighted,
        weighted_robust,
        smoothed_weighted_robust: smoothed,
        sandwich,
        prepared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use crate::stats::RngStream;
    use rand::Rng;

    fn dataset(seed: u64) -> ClusteredDataset {
        let mut rng = RngStream::new(seed, 0);
        let clusters = (0..40)
            .map(|_| {
                let x1 = rng.standard_normal();
                let shared = rng.standard_normal();
                (0..rng.random_range(2..=5))
                    .map(|_| {
                        let x2 = rng.standard_normal();
                        let t = 1.2 * x1 + 1.5 * x2 + 0.7 * shared + 0.7 * rng.standard_normal();
                        let c = rng.random_range(-1.0..4.0);
                        Observation::new(t.min(c), t <= c, vec![x1, x2])
                    })
                    .collect()
            })
            .collect();
        ClusteredDataset::from_clusters(clusters).unwrap()
    }

    #[test]
    fn rho_bar_from_preliminary_residuals() {
        let data = dataset(1);
        let cfg = EstimatorConfig::default();
        let prep = prepare_weights(&data, &cfg).unwrap();
        let res = compute_residuals(&data, &prep.preliminary.beta_hat).unwrap();
        assert_eq!(prep.rho_bar, estimate_rho_bar(&data, &res));
        assert!(prep.rho_bar > 0.0);
        assert_eq!(prep.omega, omega_weights(&data, prep.rho_bar, cfg.scheme));
    }

    #[test]
    fn gehan_equals_unit_weighted_without_robust() {
        let data = dataset(2);
        let cfg = EstimatorConfig {
            variant: Variant::Gehan,
            ..Default::default()
        };
        let a = fit_variant(&data, &cfg, true).unwrap();
        let cfg = EstimatorConfig {
            variant: Variant::Weighted,
            scheme: WeightScheme::Unit,
            ..Default::default()
        };
        let b = fit_variant(&data, &cfg, false).unwrap();
        assert_eq!(a.fit.beta_hat, b.fit.beta_hat);
    }

    #[test]
    fn fit_all_recovers_coefficients() {
        let data = dataset(3);
        let all = fit_all(&data, &EstimatorConfig::default()).unwrap();
        for b in all.betas() {
            assert!((b[0] - 1.2).abs() < 0.5 && (b[1] - 1.5).abs() < 0.5, "{b}");
        }
        assert!(all.smoothed_weighted_robust.converged);
    }
}
