//! Forecast metrics, Diebold–Mariano tests, a classical ARIMA comparator and
//! the rolling out-of-sample protocol.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::armodel::least_squares;
use crate::error::{invalid, QarimaError, Result};
use crate::mamodel::{forecast, long_ar_order, ArmaModel, ForecastMode};
use crate::series::difference;
use crate::swaptest::dot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub n: usize,
    pub mse: f64,
    /// Fraction, not percent.
    pub mape: f64,
    pub mae: f64,
    /// Points left out of MAPE because the actual was zero.
    pub mape_excluded: usize,
}

pub fn metrics(label: &str, actual: &[f64], forecast: &[f64]) -> Result<MetricReport> {
    if actual.len() != forecast.len() || actual.is_empty() {
        return invalid(format!("metric inputs of length {} and {}", actual.len(), forecast.len()));
    }
    let n = actual.len();
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut ape = 0.0;
    let mut used = 0usize;
    for (a, f) in actual.iter().zip(forecast) {
        let e = a - f;
        se += e * e;
        ae += e.abs();
        if *a != 0.0 {
            ape += (e / a).abs();
            used += 1;
        }
    }
    Ok(MetricReport {
        label: label.to_string(),
        n,
        mse: se / n as f64,
        mape: if used > 0 { ape / used as f64 } else { f64::NAN },
        mae: ae / n as f64,
        mape_excluded: n - used,
    })
}

/// `(ΔMSE, ΔMAPE)`, positive when the quantum model is better.
pub fn delta_metrics(classical: &MetricReport, quantum: &MetricReport) -> Result<(f64, f64)> {
    if classical.n != quantum.n {
        return invalid(format!("reports cover {} and {} points", classical.n, quantum.n));
    }
    Ok((classical.mse - quantum.mse, classical.mape - quantum.mape))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LossKind {
    #[default]
    #[serde(rename = "MSE")]
    Mse,
    #[serde(rename = "MAE")]
    Mae,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "MSE",
            LossKind::Mae => "MAE",
        }
    }

    pub fn loss(self, e: f64) -> f64 {
        match self {
            LossKind::Mse => e * e,
            LossKind::Mae => e.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DMResult {
    pub quantum_pdq: String,
    pub blocks_used: usize,
    pub loss_kind: LossKind,
    pub dm_stat: f64,
    pub p_value: f64,
    pub classical_mean_loss: f64,
    pub quantum_mean_loss: f64,
    pub delta_mean_loss: f64,
    /// Zero long-run variance of the differential.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DmOptions {
    pub horizon: usize,
    pub harvey: bool,
}

impl Default for DmOptions {
    fn default() -> Self {
        Self { horizon: 1, harvey: false }
    }
}

/// DM test on `d_t = L(e_classical) − L(e_quantum)`; positive statistics
/// favour the quantum model.
pub fn dm_test(e_classical: &[f64], e_quantum: &[f64], loss: LossKind, opts: DmOptions) -> Result<DMResult> {
    let n = e_classical.len();
    if n != e_quantum.len() {
        return invalid(format!("error sequences of length {n} and {}", e_quantum.len()));
    }
    if n < 10 {
        return invalid(format!("insufficient sample for a DM test: n = {n} < 10"));
    }
    if e_classical.iter().chain(e_quantum).any(|v| !v.is_finite()) {
        return Err(QarimaError::Numerical("non-finite forecast error".into()));
    }
    if opts.horizon == 0 || opts.horizon >= n {
        return Err(QarimaError::Config(format!("DM horizon {} invalid for n = {n}", opts.horizon)));
    }
    let lc: Vec<f64> = e_classical.iter().map(|e| loss.loss(*e)).collect();
    let lq: Vec<f64> = e_quantum.iter().map(|e| loss.loss(*e)).collect();
    let d: Vec<f64> = lc.iter().zip(&lq).map(|(a, b)| a - b).collect();
    let nf = n as f64;
    let mc = lc.iter().sum::<f64>() / nf;
    let mq = lq.iter().sum::<f64>() / nf;
    let md = d.iter().sum::<f64>() / nf;
    let gamma = |k: usize| (k..n).map(|t| (d[t] - md) * (d[t - k] - md)).sum::<f64>() / nf;
    let g0 = gamma(0);
    let mut lrv = g0 + 2.0 * (1..opts.horizon).map(gamma).sum::<f64>();
    if lrv <= 0.0 {
        lrv = g0;
    }
    let base = DMResult {
        quantum_pdq: String::new(),
        blocks_used: 1,
        loss_kind: loss,
        dm_stat: 0.0,
        p_value: 1.0,
        classical_mean_loss: mc,
        quantum_mean_loss: mq,
        delta_mean_loss: mc - mq,
        degenerate: false,
    };
    if !(lrv > 0.0) {
        let (stat, p) = if md == 0.0 { (0.0, 1.0) } else { (md.signum() * f64::INFINITY, 0.0) };
        return Ok(DMResult { dm_stat: stat, p_value: p, degenerate: true, ..base });
    }
    let mut stat = md / (lrv / nf).sqrt();
    let p_value = if opts.harvey {
        let h = opts.horizon as f64;
        stat *= ((nf + 1.0 - 2.0 * h + h * (h - 1.0) / nf) / nf).sqrt();
        let t = StudentsT::new(0.0, 1.0, nf - 1.0).map_err(|e| QarimaError::Numerical(e.to_string()))?;
        2.0 * t.sf(stat.abs())
    } else {
        let z = Normal::standard();
        2.0 * z.sf(stat.abs())
    };
    Ok(DMResult { dm_stat: stat, p_value: p_value.clamp(0.0, 1.0), ..base })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalArima {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub intercept: f64,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub aic: f64,
    pub sse: f64,
    pub n: usize,
    /// `ols` or `hannan_rissanen`.
    pub method: String,
    /// All AR roots outside the unit circle.
    pub stationary: bool,
}

impl ClassicalArima {
    pub fn to_model(&self, sigma: f64) -> ArmaModel {
        ArmaModel {
            label: format!("Classical ({}, {}, {})", self.p, self.d, self.q),
            p: self.p,
            d: self.d,
            q: self.q,
            intercept: self.intercept,
            b: self.ar.clone(),
            theta: self.ma.clone(),
            sigma_ar: sigma,
            sigma_ma: sigma,
        }
    }

    pub fn sigma(&self) -> f64 {
        (self.sse / self.n as f64).sqrt()
    }
}

/// Companion-matrix test: every root of `1 − Σ b_i z^i` lies outside the
/// unit circle.
pub fn ar_stationary(b: &[f64]) -> bool {
    let p = b.len();
    if p == 0 {
        return true;
    }
    let c = DMatrix::from_fn(p, p, |r, col| if r == 0 { b[col] } else if r == col + 1 { 1.0 } else { 0.0 });
    c.complex_eigenvalues().iter().all(|l| l.norm() < 1.0)
}

/// Fit `(p, d, q)` on rows `t >= start` of the differenced series (start is
/// raised to the order's own minimum).
fn fit_on(z: &[f64], p: usize, q: usize, q_long: usize, start: usize, d: usize) -> Result<ClassicalArima> {
    let n = z.len();
    let mut e = vec![0.0; n];
    let mut first = p;
    if q > 0 {
        let m = long_ar_order(n, q_long);
        let rows: Vec<Vec<f64>> = (m..n).map(|t| std::iter::once(1.0).chain((1..=m).map(|i| z[t - i])).collect()).collect();
        let phi = least_squares(&rows, &z[m..])?.coef;
        for t in m..n {
            e[t] = z[t] - dot(&rows[t - m], &phi);
        }
        first = m + p.max(q);
    }
    let start = start.max(first);
    if start + p + q + 2 > n {
        return invalid(format!("insufficient data for ARIMA({p}, {d}, {q})"));
    }
    let rows: Vec<Vec<f64>> = (start..n)
        .map(|t| {
            std::iter::once(1.0)
                .chain((1..=p).map(|i| z[t - i]))
                .chain((1..=q).map(|j| e[t - j]))
                .collect()
        })
        .collect();
    let ls = least_squares(&rows, &z[start..])?;
    let sse: f64 = rows.iter().zip(&z[start..]).map(|(r, y)| (y - dot(r, &ls.coef)).powi(2)).sum();
    let nr = rows.len() as f64;
    let aic = nr * (sse / nr).max(f64::MIN_POSITIVE).ln() + 2.0 * (p + q + 1) as f64;
    let ar = ls.coef[1..=p].to_vec();
    Ok(ClassicalArima {
        p,
        d,
        q,
        intercept: ls.coef[0],
        stationary: ar_stationary(&ar),
        ar,
        ma: ls.coef[p + 1..].to_vec(),
        aic,
        sse,
        n: rows.len(),
        method: if q > 0 { "hannan_rissanen" } else { "ols" }.into(),
    })
}

/// Fit a fixed order on its maximal sample.
pub fn classical_fit_order(y: &[f64], p: usize, d: usize, q: usize) -> Result<ClassicalArima> {
    let z = difference(y, d);
    fit_on(&z, p, q, q, 0, d)
}

/// AIC grid over `p <= p_max`, `q <= q_max` on a common sample; the winner
/// is refitted on its maximal sample. Ties prefer fewer parameters, then
/// smaller p.
pub fn classical_fit(y: &[f64], d: usize, p_max: usize, q_max: usize) -> Result<ClassicalArima> {
    if y.len() <= p_max + q_max + d + 10 {
        return invalid(format!("insufficient data: {} observations for the ARIMA grid", y.len()));
    }
    let z = difference(y, d);
    let common = if q_max > 0 { long_ar_order(z.len(), q_max) + p_max.max(q_max) } else { p_max };
    let grid: Vec<(usize, usize)> = (0..=p_max).flat_map(|p| (0..=q_max).map(move |q| (p, q))).collect();
    let fits = crate::par::map_slice(&grid, |&(p, q)| fit_on(&z, p, q, q_max, common, d));
    let mut errs = Vec::new();
    let mut best: Option<ClassicalArima> = None;
    for f in fits {
        match f {
            Ok(f) => {
                let better = match &best {
                    None => true,
                    Some(b) => (f.aic, f.p + f.q, f.p) < (b.aic, b.p + b.q, b.p),
                };
                if better {
                    best = Some(f);
                }
            }
            Err(e) => errs.push(e.to_string()),
        }
    }
    let best = best.ok_or_else(|| QarimaError::Numerical(format!("all ARIMA fits failed: {}", errs.join("; "))))?;
    fit_on(&z, best.p, best.q, best.q, 0, d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Protocol {
    pub mode: ForecastMode,
    /// Refit the classical comparator at every origin (rolling mode only).
    pub refit_classical: bool,
    pub losses: Vec<LossKind>,
    pub dm: DmOptions,
    pub alpha: f64,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            mode: ForecastMode::RollingOneStep,
            refit_classical: false,
            losses: vec![LossKind::Mse, LossKind::Mae],
            dm: DmOptions::default(),
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub label: String,
    pub pdq: String,
    pub forecast: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub split: usize,
    pub actual: Vec<f64>,
    pub classical: ForecastRecord,
    pub models: Vec<ForecastRecord>,
    /// Classical first, then models in input order.
    pub reports: Vec<MetricReport>,
    pub dm: Vec<DMResult>,
    /// `(label, reliably outperforms)` per model.
    pub outperforms: Vec<(String, bool)>,
    pub warnings: Vec<String>,
}

/// Better MSE and MAPE than the comparator, and a DM test significant at
/// `alpha` in the quantum model's favour under at least one loss.
pub fn reliably_outperforms(classical: &MetricReport, quantum: &MetricReport, dms: &[&DMResult], alpha: f64) -> bool {
    let Ok((dmse, dmape)) = delta_metrics(classical, quantum) else { return false };
    dmse > 0.0 && dmape > 0.0 && dms.iter().any(|r| r.p_value <= alpha && r.dm_stat > 0.0)
}

fn refit_forecasts(y: &[f64], split: usize, c: &ClassicalArima) -> Result<Vec<f64>> {
    let out = crate::par::map_range(y.len() - split, |h| -> Result<f64> {
        let t = split + h;
        let fit = classical_fit_order(&y[..t], c.p, c.d, c.q)?;
        Ok(forecast(&fit.to_model(fit.sigma()), &y[..t + 1], t, 1, ForecastMode::RollingOneStep)?[0])
    });
    out.into_iter().collect()
}

/// Forecast `y[split..]` with every model and the comparator, then report
/// metrics and DM tests per model and loss.
pub fn rolling_evaluate(y: &[f64], split: usize, models: &[ArmaModel], classical: &ClassicalArima, proto: &Protocol) -> Result<Evaluation> {
    if split == 0 || split >= y.len() {
        return invalid(format!("split {split} outside (0, {})", y.len()));
    }
    let h = y.len() - split;
    let actual = y[split..].to_vec();
    let cmodel = classical.to_model(classical.sigma());
    let cf = if proto.refit_classical && proto.mode == ForecastMode::RollingOneStep {
        refit_forecasts(y, split, classical)?
    } else {
        forecast(&cmodel, y, split, h, proto.mode)?
    };
    let classical_rec = ForecastRecord { label: cmodel.label.clone(), pdq: cmodel.pdq(), forecast: cf };
    let recs = crate::par::map_slice(models, |m| -> Result<ForecastRecord> {
        Ok(ForecastRecord { label: m.label.clone(), pdq: m.pdq(), forecast: forecast(m, y, split, h, proto.mode)? })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    score_forecasts(split, actual, classical_rec, recs, proto)
}

/// Metrics, DM tests and the outperformance rule for stored forecasts of
/// `actual` (the observations from `split` on).
pub fn score_forecasts(
    split: usize,
    actual: Vec<f64>,
    classical_rec: ForecastRecord,
    recs: Vec<ForecastRecord>,
    proto: &Protocol,
) -> Result<Evaluation> {
    let h = actual.len();
    let mut reports = vec![metrics(&classical_rec.label, &actual, &classical_rec.forecast)?];
    for r in &recs {
        reports.push(metrics(&r.label, &actual, &r.forecast)?);
    }
    let mut warnings = Vec::new();
    let mut dm = Vec::new();
    let err = |f: &[f64]| -> Vec<f64> { actual.iter().zip(f).map(|(a, b)| a - b).collect() };
    let ec = err(&classical_rec.forecast);
    if h < 10 {
        let msg = format!("OOS window of {h} points is below 10; DM tests skipped");
        log::warn!("{msg}");
        warnings.push(msg);
    } else {
        for loss in &proto.losses {
            for r in &recs {
                let mut res = dm_test(&ec, &err(&r.forecast), *loss, proto.dm)?;
                res.quantum_pdq = r.pdq.clone();
                dm.push(res);
            }
        }
    }
    let outperforms = recs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let rows: Vec<&DMResult> = dm.iter().filter(|d| d.quantum_pdq == r.pdq).collect();
            (r.label.clone(), reliably_outperforms(&reports[0], &reports[i + 1], &rows, proto.alpha))
        })
        .collect();
    Ok(Evaluation { split, actual, classical: classical_rec, models: recs, reports, dm, outperforms, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{synth_ar1, synth_white_noise};

    #[test]
    fn metric_examples() {
        let m = metrics("x", &[2.0, 2.0], &[1.0, 3.0]).unwrap();
        assert_eq!((m.mse, m.mape, m.mae), (1.0, 0.5, 1.0));
        let z = metrics("x", &[0.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((z.mape, z.mape_excluded), (0.0, 1));
        assert!(metrics("x", &[1.0], &[]).is_err());
        let c = MetricReport { label: "c".into(), n: 8, mse: 78.372, mape: 0.0, mae: 0.0, mape_excluded: 0 };
        let q = MetricReport { mse: 10.026, ..c.clone() };
        assert!((delta_metrics(&c, &q).unwrap().0 - 68.346).abs() < 1e-9);
    }

    #[test]
    fn dm_degenerate_and_antisymmetric() {
        let e: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let r = dm_test(&e, &e, LossKind::Mse, DmOptions::default()).unwrap();
        assert!(r.degenerate && r.dm_stat == 0.0 && r.p_value == 1.0);
        let f: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).cos()).collect();
        let a = dm_test(&e, &f, LossKind::Mae, DmOptions { horizon: 3, harvey: false }).unwrap();
        let b = dm_test(&f, &e, LossKind::Mae, DmOptions { horizon: 3, harvey: false }).unwrap();
        assert_eq!(a.dm_stat, -b.dm_stat);
        assert_eq!(a.p_value, b.p_value);
        assert!(dm_test(&e[..9], &f[..9], LossKind::Mse, DmOptions::default()).is_err());
    }

    #[test]
    fn classical_grid() {
        let ar = synth_ar1(0.8, 500, 1.0, 21).unwrap().values;
        let f = classical_fit(&ar, 0, 3, 2).unwrap();
        assert!((1..=2).contains(&f.p) && f.q <= 1, "{f:?}");
        assert!(f.stationary);
        let wn = synth_white_noise(500, 1.0, 4).unwrap().values;
        let f = classical_fit(&wn, 0, 3, 2).unwrap();
        assert_eq!((f.p, f.q), (0, 0));
        let c = classical_fit(&[5.0; 40], 1, 2, 1).unwrap();
        assert_eq!((c.p, c.d, c.q), (0, 1, 0));
        assert_eq!(c.sse, 0.0);
        assert!(!ar_stationary(&[1.2]));
    }

    #[test]
    fn short_window_skips_dm() {
        let y = synth_ar1(0.5, 60, 1.0, 1).unwrap().values;
        let c = classical_fit_order(&y[..52], 1, 0, 0).unwrap();
        let ev = rolling_evaluate(&y, 52, &[c.to_model(1.0)], &c, &Protocol::default()).unwrap();
        assert!(ev.dm.is_empty() && !ev.warnings.is_empty());
        assert_eq!(ev.reports.len(), 2);
        assert!(!ev.outperforms[0].1);
    }
}
