//! Statistical primitives: normal density and distribution function,
//! chi-square quantiles, midranks, exchangeable normal / t sampling and the
//! seeded random stream every simulation draws from.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{AftError, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function, `0.5 * erfc(-x / sqrt 2)`.
///
/// `erfc` keeps full relative precision in the lower tail, so there is no
/// cancellation for large negative `x`. Infinite inputs map to 0 and 1.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Regularized lower incomplete gamma `P(a, x)`.
///
/// Series expansion below `x < a + 1`, Lentz continued fraction for the
/// upper tail otherwise.
pub fn regularized_lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let log_prefactor = a * x.ln() - x - libm::lgamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum.ln() + log_prefactor).exp().min(1.0)
    } else {
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-17 {
                break;
            }
        }
        (1.0 - (h.ln() + log_prefactor).exp()).max(0.0)
    }
}

/// Chi-square distribution function with `df` degrees of freedom.
pub fn chisq_cdf(x: f64, df: u32) -> f64 {
    regularized_lower_gamma(0.5 * df as f64, 0.5 * x)
}

/// Quantile of the chi-square distribution, by bisection on [`chisq_cdf`].
pub fn chisq_quantile(prob: f64, df: u32) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(AftError::InvalidArgument(format!(
            "chi-square probability {prob} outside (0, 1)"
        )));
    }
    if df < 1 {
        return Err(AftError::InvalidArgument(
            "chi-square degrees of freedom must be >= 1".into(),
        ));
    }
    let mut lo = 0.0_f64;
    let mut hi = df as f64 + 10.0 * (2.0 * df as f64).sqrt() + 10.0;
    while chisq_cdf(hi, df) < prob {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if chisq_cdf(mid, df) < prob {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Ranks `1..=M` with ties sharing the average of the positions they cover.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = 0.5 * ((start + 1 + end) as f64);
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

/// Exchangeable correlation matrix: unit diagonal, `rho` everywhere else.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExchangeableCorrelation {
    rho: f64,
    dim: usize,
}

impl ExchangeableCorrelation {
    /// Accepts `rho` in `[0, 1)`, where the matrix is positive definite for
    /// every dimension and the one-factor construction applies.
    pub fn new(rho: f64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(AftError::InvalidArgument(
                "correlation dimension must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&rho) {
            return Err(AftError::InvalidArgument(format!(
                "exchangeable rho {rho} outside [0, 1)"
            )));
        }
        Ok(Self { rho, dim })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.dim, self.dim, |r, c| {
            if r == c {
                1.0
            } else {
                self.rho
            }
        })
    }
}

/// Seeded, stream-addressable generator (ChaCha8).
///
/// The same `(seed, stream)` pair always yields the same sequence, on every
/// platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.sample(StandardNormal)
    }

    /// Uniform draw on the half-open interval (0, 1].
    pub fn uniform_open0(&mut self) -> f64 {
        1.0 - self.random::<f64>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// One draw from `N(0, Σ(ρ))` via `z_k = √ρ·u + √(1−ρ)·v_k`.
pub fn sample_mvn_exchangeable(corr: &ExchangeableCorrelation, rng: &mut RngStream) -> Vec<f64> {
    let shared = corr.rho.sqrt() * rng.standard_normal();
    let own = (1.0 - corr.rho).sqrt();
    (0..corr.dim)
        .map(|_| shared + own * rng.standard_normal())
        .collect()
}

/// One draw from the multivariate t with exchangeable scale matrix: an
/// exchangeable normal vector divided by `√(w/df)`, `w ~ χ²_df` shared
/// across the vector.
pub fn sample_mvt_exchangeable(
    corr: &ExchangeableCorrelation,
    df: u32,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if df < 1 {
        return Err(AftError::InvalidArgument(
            "t degrees of freedom must be >= 1".into(),
        ));
    }
    let mut draw = sample_mvn_exchangeable(corr, rng);
    let chi = ChiSquared::new(df as f64)
        .map_err(|e| AftError::InvalidArgument(format!("chi-square({df}): {e}")))?;
    let w: f64 = chi.sample(rng);
    let scale = (w / df as f64).sqrt().recip();
    for z in &mut draw {
        *z *= scale;
    }
    Ok(draw)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Gauss-Legendre (8 points) on [0, x] plus 1/2.
    fn cdf_by_quadrature(x: f64) -> f64 {
        const NODES: [f64; 4] = [
            0.183_434_642_495_649_8,
            0.525_532_409_916_329,
            0.796_666_477_413_626_7,
            0.960_289_856_497_536_3,
        ];
        const WEIGHTS: [f64; 4] = [
            0.362_683_783_378_362,
            0.313_706_645_877_887_3,
            0.222_381_034_453_374_5,
            0.101_228_536_290_376_3,
        ];
        let panels = 400;
        let h = x / panels as f64;
        let mut total = 0.0;
        for k in 0..panels {
            let mid = (k as f64 + 0.5) * h;
            for (n, w) in NODES.iter().zip(WEIGHTS) {
                let a = mid + 0.5 * h * n;
                let b = mid - 0.5 * h * n;
                let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
                total += 0.5 * h * w * (f(a) + f(b));
            }
        }
        0.5 + total
    }

    #[test]
    fn cdf_known_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert!((std_normal_cdf(1.96) - 0.975_002_104_9).abs() < 1e-10);
        assert_eq!(std_normal_cdf(f64::INFINITY), 1.0);
        assert_eq!(std_normal_cdf(f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn cdf_matches_quadrature() {
        for &x in &[-6.0, -3.3, -1.0, -0.25, 0.4, 1.0, 1.96, 2.5, 4.0, 7.5] {
            let q = cdf_by_quadrature(x);
            assert!((std_normal_cdf(x) - q).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn cdf_symmetry_and_monotone() {
        let mut rng = RngStream::new(7, 0);
        for _ in 0..100 {
            let x = 8.0 * (rng.random::<f64>() - 0.5);
            assert!((std_normal_cdf(-x) - (1.0 - std_normal_cdf(x))).abs() < 1e-15);
        }
        let mut prev = 0.0;
        for i in 0..1_000_000 {
            let x = -10.0 + 20.0 * i as f64 / 1e6;
            let v = std_normal_cdf(x);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn pdf_values() {
        assert!((std_normal_pdf(0.0) - 0.398_942_280_4).abs() < 1e-10);
        let direct = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((std_normal_pdf(1.0) - direct).abs() < 1e-16);
        assert!((std_normal_pdf(1.0) - 0.241_970_724_5).abs() < 1e-10);
        assert_eq!(std_normal_pdf(1.7), std_normal_pdf(-1.7));
    }

    /// Closed-form chi-square CDF for even df: 1 - exp(-x/2) Σ_{k<df/2} (x/2)^k / k!.
    fn even_df_cdf(x: f64, df: u32) -> f64 {
        let half = x / 2.0;
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 0..df / 2 {
            if k > 0 {
                term *= half / k as f64;
            }
            sum += term;
        }
        1.0 - (-half).exp() * sum
    }

    #[test]
    fn chisq_quantile_values() {
        let q2 = chisq_quantile(0.95, 2).unwrap();
        assert!((q2 - 5.991_464_547).abs() < 1e-8);
        assert!((even_df_cdf(q2, 2) - 0.95).abs() < 1e-12);
        let med = chisq_quantile(0.5, 2).unwrap();
        assert!((med - 2.0 * std::f64::consts::LN_2).abs() < 1e-10);
        let q6 = chisq_quantile(0.95, 6).unwrap();
        assert!((q6 - 12.591_587_24).abs() < 1e-7);
        assert!((even_df_cdf(q6, 6) - 0.95).abs() < 1e-12);
    }

    #[test]
    fn chisq_odd_df_against_erf() {
        // df = 1: P = erf(sqrt(x/2)).
        for &x in &[0.01, 0.5, 1.0, 3.841_458_820_694_124, 10.0] {
            let oracle = libm::erf((x / 2.0_f64).sqrt());
            assert!((chisq_cdf(x, 1) - oracle).abs() < 1e-13, "x={x}");
        }
    }

    #[test]
    fn chisq_quantile_inverts_cdf() {
        for df in 1..=10 {
            for k in 1..=99 {
                let p = k as f64 / 100.0;
                let q = chisq_quantile(p, df).unwrap();
                assert!((chisq_cdf(q, df) - p).abs() < 1e-9, "p={p}, df={df}");
            }
        }
    }

    #[test]
    fn chisq_quantile_rejects_bad_input() {
        assert!(chisq_quantile(0.0, 2).is_err());
        assert!(chisq_quantile(1.0, 2).is_err());
        assert!(chisq_quantile(0.5, 0).is_err());
    }

    #[test]
    fn midrank_conventions() {
        assert_eq!(midranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
        assert_eq!(midranks(&[1.0, 1.0, 2.0]), vec![1.5, 1.5, 3.0]);
        let mut rng = RngStream::new(11, 3);
        let v: Vec<f64> = (0..200).map(|_| rng.random_range(0..20) as f64).collect();
        let m = v.len() as f64;
        assert!((midranks(&v).iter().sum::<f64>() - m * (m + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn streams_reproducible_and_distinct() {
        let a: Vec<u64> = {
            let mut r = RngStream::new(42, 5);
            (0..10).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = RngStream::new(42, 5);
            (0..10).map(|_| r.next_u64()).collect()
        };
        let c: Vec<u64> = {
            let mut r = RngStream::new(42, 6);
            (0..10).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn correlation_constructor_bounds() {
        assert!(ExchangeableCorrelation::new(0.5, 4).is_ok());
        assert!(ExchangeableCorrelation::new(1.0, 4).is_err());
        assert!(ExchangeableCorrelation::new(-0.1, 4).is_err());
        assert!(ExchangeableCorrelation::new(0.5, 0).is_err());
        let m = ExchangeableCorrelation::new(0.3, 3).unwrap().matrix();
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(1, 2)], 0.3);
    }

    #[test]
    fn rho_zero_gives_independent_draws() {
        let corr = ExchangeableCorrelation::new(0.0, 3).unwrap();
        let mut a = RngStream::new(1, 0);
        let mut b = RngStream::new(1, 0);
        let draw = sample_mvn_exchangeable(&corr, &mut a);
        let _shared = b.standard_normal();
        let manual: Vec<f64> = (0..3).map(|_| b.standard_normal()).collect();
        assert_eq!(draw, manual);
    }

    fn moments(draws: &[Vec<f64>]) -> (f64, f64) {
        let n = draws.len() as f64;
        let var0 = draws.iter().map(|d| d[0] * d[0]).sum::<f64>() / n;
        let cov01 = draws.iter().map(|d| d[0] * d[1]).sum::<f64>() / n;
        let var1 = draws.iter().map(|d| d[1] * d[1]).sum::<f64>() / n;
        (var0, cov01 / (var0 * var1).sqrt())
    }

    #[test]
    fn mvn_moments() {
        let corr = ExchangeableCorrelation::new(0.5, 5).unwrap();
        let mut rng = RngStream::new(2024, 1);
        let draws: Vec<Vec<f64>> = (0..200_000)
            .map(|_| sample_mvn_exchangeable(&corr, &mut rng))
            .collect();
        let (var, cor) = moments(&draws);
        assert!((var - 1.0).abs() < 0.01, "var={var}");
        assert!((cor - 0.5).abs() < 0.01, "cor={cor}");
    }

    #[test]
    fn mvt_moments() {
        let corr = ExchangeableCorrelation::new(0.5, 3).unwrap();
        let mut rng = RngStream::new(99, 2);
        let draws: Vec<Vec<f64>> = (0..200_000)
            .map(|_| sample_mvt_exchangeable(&corr, 3, &mut rng).unwrap())
            .collect();
        let (var, _) = moments(&draws);
        assert!((var - 3.0).abs() < 0.3, "var={var}");

        let mut rng = RngStream::new(99, 3);
        let draws: Vec<Vec<f64>> = (0..200_000)
            .map(|_| sample_mvt_exchangeable(&corr, 1_000_000, &mut rng).unwrap())
            .collect();
        let (var, cor) = moments(&draws);
        assert!((var - 1.0).abs() < 0.01, "var={var}");
        assert!((cor - 0.5).abs() < 0.01, "cor={cor}");
    }

    #[test]
    fn mvt_rank_correlation_positive() {
        let corr = ExchangeableCorrelation::new(0.8, 4).unwrap();
        let mut rng = RngStream::new(5, 5);
        let draws: Vec<Vec<f64>> = (0..200_000)
            .map(|_| sample_mvt_exchangeable(&corr, 3, &mut rng).unwrap())
            .collect();
        let a: Vec<f64> = draws.iter().map(|d| d[0]).collect();
        let b: Vec<f64> = draws.iter().map(|d| d[3]).collect();
        let (ra, rb) = (midranks(&a), midranks(&b));
        let n = ra.len() as f64;
        let mean = (n + 1.0) / 2.0;
        let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - mean) * (y - mean)).sum();
        assert!(cov > 0.0);
        assert!(sample_mvt_exchangeable(&corr, 0, &mut rng).is_err());
    }
}
