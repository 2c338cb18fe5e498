//! Swap-test MA loss, MA order selection and training on AR residuals,
//! ARMA assembly and forecasting.
//!
//! The MA stage models the AR residual stream `r_t`. Its regressors are the
//! lagged innovations of a long AR fit on `r_t` (the first stage of
//! Hannan–Rissanen), so that the least-squares warm start is the usual
//! two-stage conditional estimate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::armodel::{clipped_entropy, least_squares, refine, row_terms, LossWeights, VqcConfig};
use crate::error::{invalid, QarimaError, Result};
use crate::series::{difference, invert_difference};
use crate::swaptest::{dot, norm};

/// Lagged regressors `E` and aligned targets for one MA order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaDesign {
    pub q: usize,
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

/// Residual stream plus the innovations used as MA regressors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaInputs {
    pub residuals: Vec<f64>,
    pub innovations: Vec<f64>,
    /// Order of the long AR used for the innovations.
    pub long_order: usize,
}

/// `min(⌈√n⌉, n/4)` but at least `q_max + 1`.
pub fn long_ar_order(n: usize, q_max: usize) -> usize {
    let m = ((n as f64).sqrt().ceil() as usize).min(n / 4);
    m.max(q_max + 1)
}

impl MaInputs {
    pub fn new(residuals: &[f64], q_max: usize) -> Result<Self> {
        let n = residuals.len();
        let m = long_ar_order(n, q_max);
        if n < 2 * m + q_max + 2 {
            return invalid(format!("insufficient data: {n} residuals for MA order {q_max}"));
        }
        let rows: Vec<Vec<f64>> = (m..n).map(|t| (1..=m).map(|i| residuals[t - i]).collect()).collect();
        let phi = least_squares(&rows, &residuals[m..])?.coef;
        let mut innovations = vec![0.0; n];
        for t in m..n {
            innovations[t] = residuals[t] - dot(&rows[t - m], &phi);
        }
        Ok(Self { residuals: residuals.to_vec(), innovations, long_order: m })
    }

    /// Rows `t >= start` with `E_t = [e_{t−1}, …, e_{t−q}]`.
    pub fn design(&self, q: usize, start: usize) -> Result<MaDesign> {
        if q == 0 {
            return invalid("MA order must be >= 1");
        }
        let start = start.max(self.long_order + q);
        if start >= self.residuals.len() {
            return invalid(format!("insufficient data for MA order {q}"));
        }
        let rows = (start..self.residuals.len()).map(|t| (1..=q).map(|j| self.innovations[t - j]).collect()).collect();
        Ok(MaDesign { q, rows, targets: self.residuals[start..].to_vec() })
    }
}

/// Swap-test MA loss over the rows of `e`.
pub fn ma_loss(theta: &[f64], e: &[Vec<f64>], y: &[f64], w: &LossWeights, cfg: &VqcConfig) -> Result<f64> {
    if e.len() != y.len() {
        return invalid(format!("{} residual windows for {} targets", e.len(), y.len()));
    }
    if let Some(r) = e.iter().find(|r| r.len() != theta.len()) {
        return invalid(format!("window length {} != q = {}", r.len(), theta.len()));
    }
    let rows = crate::par::map_range(e.len(), |t| -> Result<f64> {
        let r = row_terms(&e[t], theta, w.omega, cfg, t)?;
        let pred = r.scale * r.cos_corr;
        let mut l = (y[t] - pred).powi(2);
        if w.lambda_cos != 0.0 {
            l += w.lambda_cos * (r.cos_dot - r.cos_corr).powi(2);
        }
        if w.lambda_ent != 0.0 {
            l += w.lambda_ent * clipped_entropy(r.cos_swap * r.cos_swap)?;
        }
        Ok(l)
    });
    let mut total = 0.0;
    for r in rows {
        total += r?;
    }
    Ok(total + w.lambda_l2 * dot(theta, theta))
}

fn tau_for(w: &LossWeights, q: usize) -> f64 {
    w.tau_norm.unwrap_or((q as f64).sqrt())
}

fn project_ball(v: &mut [f64], tau: f64) {
    let n = norm(v);
    if n > tau {
        let s = tau / n;
        v.iter_mut().for_each(|x| *x *= s);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaOrderResult {
    pub q_star: usize,
    /// `(q, loss)` ascending in q, all on a common sample.
    pub losses: Vec<(usize, f64)>,
}

/// Per-order losses from seeded `N(0, I)` starts refined under the norm
/// ball. The smallest q whose loss is within `rel_tol` of the minimum wins;
/// `rel_tol = 0` is a plain argmin.
pub fn ma_order_estimate(
    inputs: &MaInputs,
    q_min: usize,
    q_max: usize,
    w: &LossWeights,
    cfg: &VqcConfig,
    rel_tol: f64,
) -> Result<MaOrderResult> {
    if q_min == 0 || q_min > q_max {
        return Err(QarimaError::Config(format!("empty MA order range [{q_min}, {q_max}]")));
    }
    let start = inputs.long_order + q_max;
    let qs: Vec<usize> = (q_min..=q_max).collect();
    let losses = crate::par::map_slice(&qs, |&q| -> Result<(usize, f64)> {
        let d = inputs.design(q, start)?;
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(q as u64));
        let mut init: Vec<f64> = (0..q).map(|_| rng.sample(StandardNormal)).collect();
        let tau = tau_for(w, q);
        project_ball(&mut init, tau);
        let (mut th, _, _) = refine(&init, |t| ma_loss(t, &d.rows, &d.targets, w, cfg), cfg, cfg.seed.wrapping_add(q as u64), Some(tau))?;
        project_ball(&mut th, tau);
        Ok((q, ma_loss(&th, &d.rows, &d.targets, w, cfg)?))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let best = losses.iter().map(|l| l.1).fold(f64::INFINITY, f64::min);
    let q_star = losses
        .iter()
        .find(|l| l.1 <= best + rel_tol * best.abs())
        .map(|l| l.0)
        .unwrap_or(q_min);
    Ok(MaOrderResult { q_star, losses })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MAFit {
    pub q: usize,
    pub theta: Vec<f64>,
    pub init: Vec<f64>,
    pub loss: f64,
    pub sigma_ma: f64,
    /// Least squares was ill-conditioned and the start was drawn from U(−1, 1).
    pub uniform_init: bool,
    /// All regressors were zero; θ is zero.
    pub degenerate: bool,
}

/// Clip entries into [−1, 1].
pub fn clip_init(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.clamp(-1.0, 1.0)).collect()
}

/// `√(mean((y − Eθ)²))`.
pub fn ma_sigma(theta: &[f64], d: &MaDesign) -> f64 {
    let s: f64 = d.rows.iter().zip(&d.targets).map(|(r, y)| (y - dot(r, theta)).powi(2)).sum();
    (s / d.targets.len() as f64).sqrt()
}

pub fn vqc_ma_train(inputs: &MaInputs, q: usize, w: &LossWeights, cfg: &VqcConfig) -> Result<MAFit> {
    let d = inputs.design(q, 0)?;
    let tau = tau_for(w, q);
    if d.rows.iter().all(|r| r.iter().all(|v| *v == 0.0)) {
        let theta = vec![0.0; q];
        return Ok(MAFit {
            q,
            loss: ma_loss(&theta, &d.rows, &d.targets, w, cfg)?,
            sigma_ma: ma_sigma(&theta, &d),
            init: theta.clone(),
            theta,
            uniform_init: false,
            degenerate: true,
        });
    }
    let ls = least_squares(&d.rows, &d.targets)?;
    let uniform_init = ls.ridge;
    let mut init = if uniform_init {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x4D41);
        (0..q).map(|_| rng.random_range(-1.0..1.0)).collect()
    } else {
        clip_init(&ls.coef)
    };
    project_ball(&mut init, tau);
    let obj = |t: &[f64]| ma_loss(t, &d.rows, &d.targets, w, cfg);
    let (mut theta, _, _) = refine(&init, obj, cfg, cfg.seed.wrapping_add(500 + q as u64), Some(tau))?;
    project_ball(&mut theta, tau);
    Ok(MAFit {
        q,
        loss: obj(&theta)?,
        sigma_ma: ma_sigma(&theta, &d),
        init,
        theta,
        uniform_init,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaModel {
    pub label: String,
    pub p: usize,
    pub d: usize,
    pub q: usize,
    /// Constant term on the differenced scale.
    pub intercept: f64,
    pub b: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma_ar: f64,
    pub sigma_ma: f64,
}

impl ArmaModel {
    pub fn pdq(&self) -> String {
        format!("({}, {}, {})", self.p, self.d, self.q)
    }
}

/// One AR model feeding the MA stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArComponent {
    pub b: Vec<f64>,
    pub residuals: Vec<f64>,
    pub sigma_ar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaConfig {
    pub q_min: usize,
    pub q_max: usize,
    pub order_rel_tol: f64,
}

impl Default for MaConfig {
    fn default() -> Self {
        Self { q_min: 1, q_max: 3, order_rel_tol: 0.01 }
    }
}

/// Fit an MA component to each AR model. `level_mean` is the mean removed
/// from the differenced series before the AR fit. Models whose residuals are
/// too short are skipped with a warning.
pub fn arma_finalize(
    ar: &[ArComponent],
    d: usize,
    level_mean: f64,
    ma: &MaConfig,
    w: &LossWeights,
    cfg: &VqcConfig,
) -> Result<Vec<ArmaModel>> {
    let rows = crate::par::map_slice(ar, |c| -> Result<Option<ArmaModel>> {
        let inputs = match MaInputs::new(&c.residuals, ma.q_max) {
            Ok(i) => i,
            Err(e) => {
                log::warn!("skipping MA stage for AR({}): {e}", c.b.len());
                return Ok(None);
            }
        };
        let order = ma_order_estimate(&inputs, ma.q_min, ma.q_max, w, cfg, ma.order_rel_tol)?;
        let fit = vqc_ma_train(&inputs, order.q_star, w, cfg)?;
        let p = c.b.len();
        Ok(Some(ArmaModel {
            label: format!("Quantum ({}, {}, {})", p, d, fit.q),
            p,
            d,
            q: fit.q,
            intercept: level_mean * (1.0 - c.b.iter().sum::<f64>()),
            b: c.b.clone(),
            theta: fit.theta,
            sigma_ar: c.sigma_ar,
            sigma_ma: fit.sigma_ma,
        }))
    });
    Ok(rows.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMode {
    /// Each step conditions on the observed values up to the previous step.
    #[default]
    RollingOneStep,
    /// Predictions are fed back as inputs.
    Recursive,
}

/// Forecasts for `y[origin..origin + horizon]` on the original scale.
/// Rolling mode needs those observations in `y`; recursive mode only reads
/// `y[..origin]`. Innovations start at zero.
pub fn forecast(model: &ArmaModel, y: &[f64], origin: usize, horizon: usize, mode: ForecastMode) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(QarimaError::Config("forecast horizon must be >= 1".into()));
    }
    let (p, d) = (model.b.len(), model.d);
    if origin <= p + d || origin > y.len() {
        return invalid(format!("forecast origin {origin} outside ({}, {}]", p + d, y.len()));
    }
    let end = match mode {
        ForecastMode::RollingOneStep => {
            if origin + horizon > y.len() {
                return invalid("rolling forecasts need observations across the horizon");
            }
            origin + horizon
        }
        ForecastMode::Recursive => origin,
    };
    let z = difference(&y[..end], d);
    let split = origin - d;
    let total = split + horizon;
    let mut zz = vec![0.0; total];
    let mut eps = vec![0.0; total];
    let mut pred = vec![0.0; total];
    for i in 0..total {
        let mut v = model.intercept;
        for (j, bj) in model.b.iter().enumerate() {
            if i > j {
                v += bj * zz[i - j - 1];
            }
        }
        for (j, tj) in model.theta.iter().enumerate() {
            if i > j {
                v += tj * eps[i - j - 1];
            }
        }
        pred[i] = v;
        let observed = i < split || mode == ForecastMode::RollingOneStep;
        if observed {
            zz[i] = z[i];
            eps[i] = if i >= p { z[i] - v } else { 0.0 };
        } else {
            zz[i] = v;
        }
    }
    match mode {
        ForecastMode::RollingOneStep => (0..horizon)
            .map(|h| {
                let t = origin + h;
                Ok(invert_difference(&[pred[split + h]], &y[t - d..t], d)?[0])
            })
            .collect(),
        ForecastMode::Recursive => invert_difference(&pred[split..], &y[origin - d..origin], d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::synth_arma;

    fn model(b: Vec<f64>, theta: Vec<f64>, d: usize) -> ArmaModel {
        ArmaModel { label: "m".into(), p: b.len(), d, q: theta.len(), intercept: 0.0, b, theta, sigma_ar: 0.0, sigma_ma: 0.0 }
    }

    #[test]
    fn forecast_examples() {
        let y = [0.3, -1.0, 0.7, 2.0];
        let f = forecast(&model(vec![0.5], vec![], 0), &y, 4, 4, ForecastMode::Recursive).unwrap();
        let want = [1.0, 0.5, 0.25, 0.125];
        assert!(f.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12));
        let z = forecast(&model(vec![0.0], vec![0.0], 0), &y, 2, 2, ForecastMode::RollingOneStep).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
        let c = forecast(&model(vec![0.0], vec![0.0], 1), &y, 3, 3, ForecastMode::Recursive).unwrap();
        assert_eq!(c, vec![0.7; 3]);
        let r = forecast(&model(vec![0.0], vec![], 1), &y, 3, 1, ForecastMode::RollingOneStep).unwrap();
        assert_eq!(r, vec![0.7]);
        assert!(forecast(&model(vec![0.0], vec![], 0), &y, 2, 0, ForecastMode::Recursive).is_err());
    }

    #[test]
    fn ma_loss_examples() {
        let e = vec![vec![0.5, -0.2], vec![1.0, 0.3], vec![-0.4, 0.8]];
        let y = [0.2, -0.1, 0.9];
        let w = LossWeights::default();
        let cfg = VqcConfig::default();
        let zero = ma_loss(&[0.0, 0.0], &e, &y, &w, &cfg).unwrap();
        assert!((zero - (0.04 + 0.01 + 0.81)).abs() < 1e-15);
        let th = [0.6, -0.3];
        let sse: f64 = e.iter().zip(&y).map(|(r, t)| (t - dot(r, &th)).powi(2)).sum();
        assert!((ma_loss(&th, &e, &y, &w, &cfg).unwrap() - sse).abs() < 1e-12);
    }

    #[test]
    fn clip_and_ball() {
        assert_eq!(clip_init(&[1.7, -0.2]), vec![1.0, -0.2]);
        let r = synth_arma(&[], &[0.6], 600, 1.0, 8).unwrap().values;
        let inputs = MaInputs::new(&r, 3).unwrap();
        let w = LossWeights { tau_norm: Some(0.001), ..Default::default() };
        let fit = vqc_ma_train(&inputs, 1, &w, &VqcConfig::default()).unwrap();
        assert!(norm(&fit.theta) <= 0.001 + 1e-12);
    }

    #[test]
    fn singleton_range() {
        let r = synth_arma(&[], &[0.6], 400, 1.0, 2).unwrap().values;
        let inputs = MaInputs::new(&r, 2).unwrap();
        let o = ma_order_estimate(&inputs, 2, 2, &LossWeights::default(), &VqcConfig::default(), 0.01).unwrap();
        assert_eq!(o.q_star, 2);
        assert!(ma_order_estimate(&inputs, 3, 2, &LossWeights::default(), &VqcConfig::default(), 0.01).is_err());
    }
}
