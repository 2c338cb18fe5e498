//! Differencing-order estimation, swap-test ACF/PACF with thresholded lag
//! selection, and classical ACF/PACF for validation.
//!
//! Lag similarities are computed on batches of aligned pairs: for lag `k`
//! the aligned segments `y[k..]` and `y[..N−k]` are cut into blocks of
//! `batch` values and each block pair goes through one swap test. The signed,
//! phase-corrected block cosines are recombined with the block norms,
//! `ρ_k = Σ ‖u‖‖v‖·cos_corr / √(Σ‖u‖² · Σ‖v‖²)`, which is the lagged
//! correlation when the swap test is exact. With `batch = 1` every block is a
//! scalar and its cosine is ±1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, QarimaError, Result};
use crate::optimizer::{minimize, OptProblem};
use crate::series::{center, difference, mean, std_dev};
use crate::swaptest::{classical_cosine, norm, phase_corrected_cosine, signed_scaled_dot, signed_swap_cosine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    #[default]
    Static,
    Percentile,
    Std,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    pub mode: ThresholdMode,
    /// Z score for the static band `z/√N`.
    pub z: f64,
    /// Percentile of |values| in (0, 100).
    pub percentile_q: f64,
    /// `mean(|v|) + std_multiplier·std(|v|)`.
    pub std_multiplier: f64,
    /// Fallback band starts at `fallback_ratio·τ`.
    pub fallback_ratio: f64,
    pub enable_fallback: bool,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            mode: ThresholdMode::Static,
            z: 1.96,
            percentile_q: 90.0,
            std_multiplier: 1.0,
            fallback_ratio: 0.5,
            enable_fallback: true,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fallback_ratio > 0.0 && self.fallback_ratio < 1.0) {
            return Err(QarimaError::Config(format!("fallback_ratio {} not in (0, 1)", self.fallback_ratio)));
        }
        if !(self.percentile_q > 0.0 && self.percentile_q < 100.0) {
            return Err(QarimaError::Config(format!("percentile_q {} not in (0, 100)", self.percentile_q)));
        }
        if !(self.z > 0.0) || !self.std_multiplier.is_finite() {
            return Err(QarimaError::Config("threshold z must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagDiagnostics {
    /// `values[k − 1]` belongs to lag `k`.
    pub values: Vec<f64>,
    pub significant: Vec<usize>,
    pub fallback: Vec<usize>,
    pub tau: f64,
    pub tau_fallback: f64,
}

impl LagDiagnostics {
    /// Significant and fallback lags, ascending.
    pub fn selected(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.significant.iter().chain(&self.fallback).copied().collect();
        all.sort_unstable();
        all
    }
}

/// numpy-style linear-interpolation percentile.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Threshold `values` (lag 1 first) for a series of length `n`.
pub fn apply_thresholds(values: &[f64], n: usize, cfg: &ThresholdConfig) -> Result<LagDiagnostics> {
    cfg.validate()?;
    let mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let tau = match cfg.mode {
        ThresholdMode::Static => cfg.z / (n as f64).sqrt(),
        ThresholdMode::Percentile => percentile(&mags, cfg.percentile_q),
        ThresholdMode::Std => mean(&mags) + cfg.std_multiplier * std_dev(&mags),
    };
    let tau_fallback = cfg.fallback_ratio * tau;
    let significant = (0..mags.len()).filter(|&i| mags[i] >= tau).map(|i| i + 1).collect();
    let fallback = if cfg.enable_fallback {
        (0..mags.len()).filter(|&i| mags[i] >= tau_fallback && mags[i] < tau).map(|i| i + 1).collect()
    } else {
        Vec::new()
    };
    Ok(LagDiagnostics { values: values.to_vec(), significant, fallback, tau, tau_fallback })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LagConfig {
    pub max_lag: usize,
    pub shots: u64,
    pub seed: u64,
    pub omega: f64,
    pub batch: usize,
    pub center: bool,
    pub thresholds: ThresholdConfig,
}

impl Default for LagConfig {
    fn default() -> Self {
        Self { max_lag: 20, shots: 0, seed: 0, omega: 1.0, batch: 8, center: true, thresholds: ThresholdConfig::default() }
    }
}

fn pair_seed(seed: u64, lag: usize, block: usize) -> u64 {
    seed ^ ((lag as u64) << 40) ^ (block as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Batched swap-test correlation between aligned slices `u` and `v`.
fn projected_correlation(u: &[f64], v: &[f64], batch: usize, omega: f64, shots: u64, seed: u64) -> Result<f64> {
    let mut num = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for (b, (cu, cv)) in u.chunks(batch).zip(v.chunks(batch)).enumerate() {
        let nu = norm(cu);
        let nv = norm(cv);
        uu += nu * nu;
        vv += nv * nv;
        if nu == 0.0 || nv == 0.0 {
            continue;
        }
        let cs = signed_swap_cosine(cu, cv, shots, seed.wrapping_add(b as u64))?;
        let corr = phase_corrected_cosine(classical_cosine(cu, cv), cs, omega).cos_corr;
        num += nu * nv * corr;
    }
    if uu == 0.0 || vv == 0.0 {
        return Ok(0.0);
    }
    Ok((num / (uu * vv).sqrt()).clamp(-1.0, 1.0))
}

fn check_lags(n: usize, k_max: usize, batch: usize) -> Result<()> {
    if k_max == 0 {
        return invalid("max_lag must be >= 1");
    }
    if k_max >= n {
        return invalid(format!("max_lag {k_max} must be below series length {n}"));
    }
    if batch == 0 {
        return Err(QarimaError::Config("batch must be >= 1".into()));
    }
    Ok(())
}

/// Swap-test autocorrelation at lags 1..=K.
pub fn qacf(y: &[f64], cfg: &LagConfig) -> Result<LagDiagnostics> {
    let n = y.len();
    check_lags(n, cfg.max_lag, cfg.batch)?;
    let ys = if cfg.center { center(y) } else { y.to_vec() };
    let vals: Vec<Result<f64>> = crate::par::map_range(cfg.max_lag, |i| {
        let k = i + 1;
        if n <= k + 1 {
            return Ok(0.0);
        }
        projected_correlation(&ys[k..], &ys[..n - k], cfg.batch, cfg.omega, cfg.shots, pair_seed(cfg.seed, k, 0))
    });
    let values = vals.into_iter().collect::<Result<Vec<_>>>()?;
    apply_thresholds(&values, n, &cfg.thresholds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PacfMode {
    /// Remove the intermediate lags from both sides by least squares before
    /// the projection.
    #[default]
    Partialled,
    /// Mean of per-pair scalar swap projections, without partialling.
    Literal,
}

/// Residuals of `target` after least squares on an intercept plus `cols`.
fn residualize(target: &[f64], cols: &[Vec<f64>]) -> Vec<f64> {
    let rows = target.len();
    let p = cols.len() + 1;
    let x = nalgebra::DMatrix::from_fn(rows, p, |r, c| if c == 0 { 1.0 } else { cols[c - 1][r] });
    let yv = nalgebra::DVector::from_column_slice(target);
    let beta = x.clone().svd(true, true).solve(&yv, 1e-12).unwrap_or_else(|_| nalgebra::DVector::zeros(p));
    (yv - x * beta).iter().copied().collect()
}

/// Swap-test partial autocorrelation at lags 1..=K.
pub fn qpacf(y: &[f64], cfg: &LagConfig, mode: PacfMode) -> Result<LagDiagnostics> {
    let n = y.len();
    check_lags(n, cfg.max_lag, cfg.batch)?;
    let ys = if cfg.center { center(y) } else { y.to_vec() };
    let vals: Vec<Result<f64>> = crate::par::map_range(cfg.max_lag, |i| {
        let k = i + 1;
        if n <= k + 1 {
            return Ok(0.0);
        }
        let seed = pair_seed(cfg.seed, k, 1);
        match mode {
            PacfMode::Literal => {
                let mut s = 0.0;
                for t in k..n {
                    let c = signed_swap_cosine(&[ys[t]], &[ys[t - k]], cfg.shots, seed.wrapping_add(t as u64))?;
                    s += c;
                }
                Ok((s / (n - k) as f64).clamp(-1.0, 1.0))
            }
            PacfMode::Partialled => {
                let u: Vec<f64> = ys[k..].to_vec();
                let v: Vec<f64> = ys[..n - k].to_vec();
                if k == 1 || n - k <= k + 1 {
                    return projected_correlation(&u, &v, cfg.batch, cfg.omega, cfg.shots, seed);
                }
                let mids: Vec<Vec<f64>> = (1..k).map(|j| (k..n).map(|t| ys[t - j]).collect()).collect();
                let ru = residualize(&u, &mids);
                let rv = residualize(&v, &mids);
                projected_correlation(&ru, &rv, cfg.batch, cfg.omega, cfg.shots, seed)
            }
        }
    });
    let values = vals.into_iter().collect::<Result<Vec<_>>>()?;
    apply_thresholds(&values, n, &cfg.thresholds)
}

/// Sample ACF and Durbin–Levinson PACF at lags 1..=K.
pub fn classical_acf_pacf(y: &[f64], k_max: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = y.len();
    if k_max >= n {
        return invalid(format!("max lag {k_max} must be below series length {n}"));
    }
    let m = mean(y);
    let c0: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
    let acf: Vec<f64> = (1..=k_max)
        .map(|k| {
            if c0 == 0.0 {
                return 0.0;
            }
            (k..n).map(|t| (y[t] - m) * (y[t - k] - m)).sum::<f64>() / c0
        })
        .collect();
    let mut pacf = Vec::with_capacity(k_max);
    let mut phi: Vec<f64> = Vec::new();
    let mut v: f64 = 1.0;
    for k in 1..=k_max {
        let r = |j: usize| if j == 0 { 1.0 } else { acf[j - 1] };
        let num = r(k) - (1..k).map(|j| phi[j - 1] * r(k - j)).sum::<f64>();
        let a = if v.abs() < 1e-300 { 0.0 } else { num / v };
        let mut next = vec![0.0; k];
        for j in 1..k {
            next[j - 1] = phi[j - 1] - a * phi[k - j - 1];
        }
        next[k - 1] = a;
        v *= 1.0 - a * a;
        phi = next;
        pacf.push(a);
    }
    Ok((acf, pacf))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossMetric {
    #[default]
    Mse,
    Mae,
}

impl LossMetric {
    pub fn apply(self, err: f64) -> f64 {
        match self {
            LossMetric::Mse => err * err,
            LossMetric::Mae => err.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DOrderConfig {
    pub d_max: usize,
    /// Lag distance of the regressor.
    pub p: usize,
    /// Stability threshold ε; the `γ ≈ 0` test uses `|γ| < 10·ε`.
    pub epsilon: f64,
    /// Number of trailing γ values checked for stability.
    pub patience: usize,
    /// Objective evaluations per level.
    pub max_iter: usize,
    pub loss: LossMetric,
    pub seed: u64,
    pub shots: u64,
}

impl Default for DOrderConfig {
    fn default() -> Self {
        Self { d_max: 2, p: 1, epsilon: 0.015, patience: 3, max_iter: 200, loss: LossMetric::Mse, seed: 0, shots: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DLevel {
    pub d: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub loss: f64,
    pub evals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DOrderResult {
    pub d_star: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub metrics_log: Vec<DLevel>,
    pub converged_early: bool,
    /// True when no level met the γ test and `d_star` fell back to 0.
    pub fallback: bool,
}

/// Fit `target ≈ α + γ·x` through the swap-test projection of `[1, x_t]`
/// onto `[α, γ]`. Both series are scaled by a common factor first so the
/// optimizer works at unit scale; α and the loss are mapped back.
fn fit_level(d: usize, x: &[f64], target: &[f64], cfg: &DOrderConfig) -> Result<DLevel> {
    let scale = {
        let s = std_dev(x).max(std_dev(target));
        if s > 0.0 { s } else { mean(x).abs().max(1.0) }
    };
    let xs: Vec<f64> = x.iter().map(|v| v / scale).collect();
    let ts: Vec<f64> = target.iter().map(|v| v / scale).collect();
    let shots = cfg.shots;
    let seed = cfg.seed;
    let loss_metric = cfg.loss;
    let loss = |ab: &[f64]| -> f64 {
        let errs = crate::par::map_range(xs.len(), |t| {
            let pred = signed_scaled_dot(&[1.0, xs[t]], &[ab[0], ab[1]], shots, seed.wrapping_add(t as u64))
                .unwrap_or(f64::NAN);
            loss_metric.apply(ts[t] - pred)
        });
        errs.iter().sum::<f64>() / errs.len() as f64
    };
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(d as u64));
    let x0 = vec![rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
    let res = minimize(&OptProblem::new(loss, x0).max_evals(cfg.max_iter.max(4)), cfg.seed.wrapping_add(d as u64))?;
    let back = match cfg.loss {
        LossMetric::Mse => scale * scale,
        LossMetric::Mae => scale,
    };
    Ok(DLevel { d, alpha: res.x_star[0] * scale, gamma: res.x_star[1], loss: res.f_star * back, evals: res.evals_used })
}

/// Select the differencing order by Dickey–Fuller style regressions at each
/// level: level 0 regresses `y_t` on `y_{t−p}`, level `d >= 1` regresses
/// `Del_d` on the lagged `Del_{d−1}`. The chosen level has the smallest loss
/// among those with `|γ| < 10·ε`; ties go to smaller `d`.
pub fn estimate_d(y: &[f64], cfg: &DOrderConfig) -> Result<DOrderResult> {
    if cfg.d_max == 0 {
        return Err(QarimaError::Config("d_max must be >= 1".into()));
    }
    if cfg.p == 0 {
        return Err(QarimaError::Config("p must be >= 1".into()));
    }
    if y.len() <= cfg.d_max + cfg.p + 2 {
        return invalid(format!("insufficient data: {} observations for d_max = {}", y.len(), cfg.d_max));
    }
    let p = cfg.p;
    let mut log: Vec<DLevel> = Vec::new();
    let mut converged_early = false;
    for d in 0..=cfg.d_max {
        let prev = difference(y, d.saturating_sub(1));
        let cur = difference(y, d);
        if cur.len() <= p + 1 {
            break;
        }
        if d >= 1 && cur.iter().all(|v| *v == 0.0) {
            // exact fit by the zero predictor; no further differencing helps
            log.push(DLevel { d, alpha: 0.0, gamma: 0.0, loss: 0.0, evals: 0 });
            break;
        }
        let (x, target): (Vec<f64>, Vec<f64>) = if d == 0 {
            ((p..cur.len()).map(|t| cur[t - p]).collect(), cur[p..].to_vec())
        } else {
            // Del_d[i] = Del_{d-1}[i+1] − Del_{d-1}[i]
            ((p - 1..cur.len()).map(|i| prev[i + 1 - p]).collect(), cur[p - 1..].to_vec())
        };
        log.push(fit_level(d, &x, &target, cfg)?);
        if log.len() >= cfg.patience.max(1) && cfg.patience > 0 {
            let tail = &log[log.len() - cfg.patience..];
            let hi = tail.iter().map(|l| l.gamma).fold(f64::NEG_INFINITY, f64::max);
            let lo = tail.iter().map(|l| l.gamma).fold(f64::INFINITY, f64::min);
            if hi - lo < cfg.epsilon && d < cfg.d_max {
                converged_early = true;
                break;
            }
        }
    }
    let tol = 10.0 * cfg.epsilon;
    let pick = log
        .iter()
        .filter(|l| l.gamma.abs() < tol)
        .min_by(|a, b| a.loss.total_cmp(&b.loss).then(a.d.cmp(&b.d)));
    let (chosen, fallback) = match pick {
        Some(l) => (l.clone(), false),
        None => (log[0].clone(), true),
    };
    Ok(DOrderResult {
        d_star: chosen.d,
        alpha: chosen.alpha,
        gamma: chosen.gamma,
        metrics_log: log,
        converged_early,
        fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{synth_ar1, synth_random_walk, synth_white_noise};

    #[test]
    fn static_threshold() {
        let d = apply_thresholds(&[0.5, 0.05], 400, &ThresholdConfig::default()).unwrap();
        assert_eq!(d.tau, 1.96 / 20.0);
        assert!((d.tau - 0.098).abs() < 1e-15);
        assert_eq!(d.significant, vec![1]);
        assert_eq!(d.fallback, vec![2]);
    }

    #[test]
    fn percentile_threshold() {
        let vals: Vec<f64> = (1..=20).map(|i| i as f64 / 40.0).collect();
        let cfg = ThresholdConfig { mode: ThresholdMode::Percentile, percentile_q: 90.0, enable_fallback: false, ..Default::default() };
        let d = apply_thresholds(&vals, 100, &cfg).unwrap();
        assert_eq!(d.significant, vec![19, 20]);
    }

    #[test]
    fn fallback_band() {
        let cfg = ThresholdConfig { fallback_ratio: 0.5, ..Default::default() };
        // τ = 0.2 when N = (1.96 / 0.2)²
        let n = ((1.96f64 / 0.2).powi(2)).round() as usize;
        let d = apply_thresholds(&[0.30, 0.12, 0.05], n, &cfg).unwrap();
        assert!((d.tau - 0.2).abs() < 1e-3);
        assert_eq!(d.significant, vec![1]);
        assert_eq!(d.fallback, vec![2]);
        let off = apply_thresholds(&[0.30, 0.12], n, &ThresholdConfig { enable_fallback: false, ..cfg }).unwrap();
        assert!(off.fallback.is_empty());
    }

    #[test]
    fn constant_series_lags() {
        let y = vec![3.0; 30];
        let cfg = LagConfig { max_lag: 5, center: false, ..Default::default() };
        let a = qacf(&y, &cfg).unwrap();
        assert!(a.values.iter().all(|v| (v - 1.0).abs() < 1e-9));
        let p = qpacf(&y, &cfg, PacfMode::Literal).unwrap();
        assert!(p.values.iter().all(|v| (v - 1.0).abs() < 1e-9));
        assert_eq!(p.significant, vec![1, 2, 3, 4, 5]);
        assert!(qacf(&y, &LagConfig { max_lag: 30, ..cfg }).is_err());
    }

    #[test]
    fn short_lags_are_zero() {
        let y = [1.0, 2.0, 0.5, 3.0];
        let d = qacf(&y, &LagConfig { max_lag: 3, ..Default::default() }).unwrap();
        assert_eq!(d.values[2], 0.0);
    }

    #[test]
    fn classical_oracles() {
        let (acf, _) = classical_acf_pacf(&[1.0, 2.0, 3.0], 1).unwrap();
        assert!(acf[0].is_finite());
        let y = synth_ar1(0.8, 2000, 1.0, 11).unwrap().values;
        let (_, pacf) = classical_acf_pacf(&y, 5).unwrap();
        assert!((pacf[0] - 0.8).abs() < 0.05);
        assert!(pacf[1..].iter().all(|v| v.abs() < 0.1));
        let w = synth_white_noise(5000, 1.0, 2).unwrap().values;
        let (acf, _) = classical_acf_pacf(&w, 10).unwrap();
        let inside = acf.iter().filter(|v| v.abs() < 3.0 / (5000f64).sqrt()).count();
        assert!(inside >= 9);
    }

    #[test]
    fn d_order_examples() {
        let cfg = DOrderConfig::default();
        let wn = synth_white_noise(300, 1.0, 5).unwrap().values;
        assert_eq!(estimate_d(&wn, &cfg).unwrap().d_star, 0);
        let rw = synth_random_walk(300, 1.0, 5).unwrap().values;
        assert_eq!(estimate_d(&rw, &cfg).unwrap().d_star, 1);
        let c = estimate_d(&[4.0; 40], &cfg).unwrap();
        assert_eq!(c.d_star, 1);
        assert_eq!(c.metrics_log[1].loss, 0.0);
        assert!(estimate_d(&[1.0, 2.0, 3.0], &cfg).is_err());
    }
}
