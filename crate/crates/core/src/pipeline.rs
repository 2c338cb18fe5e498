//! Run configuration, stage orchestration with an on-disk cache, the run
//! manifest and report files.
//!
//! Stage order: ingest, differencing order, QACF/QPACF, candidate orders,
//! VQC-AR, weak-lag refinement, residuals, MA, ARMA table, rolling
//! evaluation with DM tests, reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::armodel::{
    progressive_weak_refine, residual_eval, vqc_ar_estimate, weak_lag_refine, ArEstimate, LossWeights,
    VqcConfig, WeakFit, WeakStep,
};
use crate::diagnostics::{estimate_d, qacf, qpacf, DOrderConfig, DOrderResult, LagConfig, LagDiagnostics, PacfMode, ThresholdConfig};
use crate::error::{QarimaError, Result};
use crate::eval::{classical_fit, classical_fit_order, rolling_evaluate, score_forecasts, ClassicalArima, Evaluation, ForecastRecord, LossKind, Protocol};
use crate::mamodel::{arma_finalize, ArComponent, ArmaModel, MaConfig};
use crate::series::{difference, load_csv, mean, Column};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// CSV file; relative paths resolve against the config file's directory.
    pub path: PathBuf,
    /// Header name or 0-based index.
    pub column: Column,
    /// Training length; the rest is the out-of-sample window.
    pub train: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { path: PathBuf::new(), column: Column::Index(0), train: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Base seed; stage seeds derive from it.
    pub seed: u64,
    /// Measurement shots for every swap test; 0 is analytic.
    pub shots: u64,
    pub out: PathBuf,
    pub cache: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 0, shots: 0, out: PathBuf::from("out"), cache: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LagSection {
    pub max_lag: usize,
    pub batch: usize,
    pub omega: f64,
    pub center: bool,
    pub pacf_mode: PacfMode,
}

impl Default for LagSection {
    fn default() -> Self {
        let l = LagConfig::default();
        Self { max_lag: l.max_lag, batch: l.batch, omega: l.omega, center: l.center, pacf_mode: PacfMode::Partialled }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArSection {
    /// Candidate orders above this are dropped.
    pub max_p: usize,
    pub weak_count: usize,
    pub tau_stop: f64,
    /// Remove the mean of the differenced series before AR fitting.
    pub demean: bool,
}

impl Default for ArSection {
    fn default() -> Self {
        Self { max_p: 10, weak_count: 2, tau_stop: 0.0, demean: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassicalSection {
    /// Fixed `[p, d, q]`; when absent an AIC grid at the estimated d is used.
    pub order: Option<[usize; 3]>,
    pub p_max: usize,
    pub q_max: usize,
}

impl Default for ClassicalSection {
    fn default() -> Self {
        Self { order: None, p_max: 5, q_max: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub run: RunSection,
    pub d_order: DOrderConfig,
    pub lags: LagSection,
    pub thresholds: ThresholdConfig,
    pub ar: ArSection,
    pub loss: LossWeights,
    pub vqc: VqcConfig,
    pub ma: MaConfig,
    pub classical: ClassicalSection,
    pub eval: Protocol,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Parse a config file, resolving a relative data path against its
    /// directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| QarimaError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.data.path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.data.path = dir.join(&cfg.data.path);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.path.as_os_str().is_empty() {
            return Err(QarimaError::Config("data.path is required".into()));
        }
        self.thresholds.validate()?;
        self.loss.validate()?;
        self.vqc.validate()?;
        if self.lags.max_lag == 0 || self.lags.batch == 0 {
            return Err(QarimaError::Config("lags.max_lag and lags.batch must be >= 1".into()));
        }
        if self.ma.q_min == 0 || self.ma.q_min > self.ma.q_max {
            return Err(QarimaError::Config("need 1 <= ma.q_min <= ma.q_max".into()));
        }
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            return Err(QarimaError::Config("eval.alpha must be in (0, 1)".into()));
        }
        Ok(())
    }

    /// Stage configs with seeds and shots taken from `[run]`.
    pub fn d_order_config(&self) -> DOrderConfig {
        DOrderConfig { seed: self.run.seed, shots: self.run.shots, ..self.d_order.clone() }
    }

    pub fn lag_config(&self, max_lag: usize) -> LagConfig {
        LagConfig {
            max_lag,
            shots: self.run.shots,
            seed: self.run.seed.wrapping_add(1),
            omega: self.lags.omega,
            batch: self.lags.batch,
            center: self.lags.center,
            thresholds: self.thresholds.clone(),
        }
    }

    pub fn vqc_config(&self) -> VqcConfig {
        VqcConfig { seed: self.run.seed.wrapping_add(2), shots: self.run.shots, ..self.vqc.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsStage {
    pub d_order: DOrderResult,
    pub qacf: LagDiagnostics,
    pub qpacf: LagDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArStage {
    pub candidates: Vec<usize>,
    pub level_mean: f64,
    pub estimate: ArEstimate,
    pub weak: Option<WeakFit>,
    pub progressive: Vec<WeakStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub series_len: usize,
    pub stages: Vec<StageRecord>,
    pub diagnostics: Option<DiagnosticsStage>,
    pub ar: Option<ArStage>,
    pub arma: Option<Vec<ArmaModel>>,
    pub classical: Option<ClassicalArima>,
    pub evaluation: Option<Evaluation>,
    pub error: Option<String>,
}

/// Selected QPACF lags capped at `max_p`; `[1]` when none survive.
pub fn candidate_orders(qpacf: &LagDiagnostics, max_p: usize) -> Vec<usize> {
    let c: Vec<usize> = qpacf.selected().into_iter().filter(|&p| p <= max_p).collect();
    if c.is_empty() { vec![1] } else { c }
}

/// SHA-256 over the config (minus output settings) and the data bytes.
pub fn config_hash(cfg: &RunConfig, data: &[u8]) -> Result<String> {
    let mut keyed = cfg.clone();
    keyed.run.out = PathBuf::new();
    keyed.run.cache = false;
    keyed.data.path = PathBuf::new();
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&keyed)?);
    h.update(data);
    Ok(hex::encode(h.finalize()))
}

struct Runner {
    cache_dir: Option<PathBuf>,
    stages: Vec<StageRecord>,
}

impl Runner {
    fn stage<T, F>(&mut self, name: &str, f: F) -> Result<T>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T>,
    {
        let start = Instant::now();
        let file = self.cache_dir.as_ref().map(|d| d.join(format!("{name}.json")));
        if let Some(path) = &file {
            if let Ok(text) = fs::read_to_string(path) {
                if let Ok(v) = serde_json::from_str(&text) {
                    log::info!("stage {name}: cached");
                    self.stages.push(StageRecord { name: name.into(), seconds: start.elapsed().as_secs_f64(), cached: true });
                    return Ok(v);
                }
            }
        }
        let v = f()?;
        if let Some(path) = &file {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, serde_json::to_vec(&v)?)?;
        }
        log::info!("stage {name}: {:.2}s", start.elapsed().as_secs_f64());
        self.stages.push(StageRecord { name: name.into(), seconds: start.elapsed().as_secs_f64(), cached: false });
        Ok(v)
    }
}

fn diagnostics_stage(cfg: &RunConfig, train: &[f64]) -> Result<DiagnosticsStage> {
    let d_order = estimate_d(train, &cfg.d_order_config())?;
    let z = difference(train, d_order.d_star);
    let k = cfg.lags.max_lag.min(z.len().saturating_sub(1));
    let lc = cfg.lag_config(k);
    Ok(DiagnosticsStage { qacf: qacf(&z, &lc)?, qpacf: qpacf(&z, &lc, cfg.lags.pacf_mode)?, d_order })
}

fn ar_stage(cfg: &RunConfig, train: &[f64], diag: &DiagnosticsStage) -> Result<ArStage> {
    let z = difference(train, diag.d_order.d_star);
    let level_mean = if cfg.ar.demean { mean(&z) } else { 0.0 };
    let zc: Vec<f64> = z.iter().map(|v| v - level_mean).collect();
    let candidates = candidate_orders(&diag.qpacf, cfg.ar.max_p.min(zc.len() / 4).max(1));
    let vqc = cfg.vqc_config();
    let estimate = vqc_ar_estimate(&zc, &candidates, &vqc, &cfg.loss)?;
    let best = estimate.best().clone();
    let mut weak = None;
    let mut progressive = Vec::new();
    if cfg.ar.weak_count > 0 && estimate.fits.len() > 1 {
        let w = weak_lag_refine(&zc, best.p, &best.b, &estimate.fits, cfg.ar.weak_count, &vqc, &cfg.loss)?;
        if !w.weak_init.is_empty() {
            progressive = progressive_weak_refine(&zc, best.p, &best.b, &w.weak_init, &vqc, &cfg.loss, cfg.ar.tau_stop)?;
        }
        weak = Some(w);
    }
    Ok(ArStage { candidates, level_mean, estimate, weak, progressive })
}

/// AR coefficient vectors entering the MA stage: every candidate fit, then
/// progressive and weak extensions whose order is new, ascending in p.
pub fn ar_models(stage: &ArStage) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = stage.estimate.fits.iter().map(|f| f.b.clone()).collect();
    let extra = stage.progressive.iter().map(|s| s.b.clone()).chain(stage.weak.iter().map(|w| w.b_full.clone()));
    for b in extra {
        if !out.iter().any(|o| o.len() == b.len()) {
            out.push(b);
        }
    }
    out.sort_by_key(|b| b.len());
    out
}

fn arma_stage(cfg: &RunConfig, train: &[f64], d: usize, ar: &ArStage) -> Result<Vec<ArmaModel>> {
    let z = difference(train, d);
    let zc: Vec<f64> = z.iter().map(|v| v - ar.level_mean).collect();
    let coefs = ar_models(ar);
    let comps: Vec<ArComponent> = residual_eval(&zc, &coefs)?
        .into_iter()
        .zip(coefs)
        .map(|(r, b)| ArComponent { b, sigma_ar: r.std, residuals: r.residuals })
        .collect();
    arma_finalize(&comps, d, ar.level_mean, &cfg.ma, &cfg.loss, &cfg.vqc_config())
}

fn classical_stage(cfg: &RunConfig, train: &[f64], d: usize) -> Result<ClassicalArima> {
    match cfg.classical.order {
        Some([p, cd, q]) => classical_fit_order(train, p, cd, q),
        None => classical_fit(train, d, cfg.classical.p_max, cfg.classical.q_max),
    }
}

struct Loaded {
    y: Vec<f64>,
    hash: String,
}

fn load(cfg: &RunConfig) -> Result<Loaded> {
    cfg.validate()?;
    let bytes = fs::read(&cfg.data.path).map_err(|e| QarimaError::Data(format!("{}: {e}", cfg.data.path.display())))?;
    let series = load_csv(&cfg.data.path, &cfg.data.column)?;
    let n = series.len();
    if cfg.data.train < 20 || cfg.data.train >= n {
        return Err(QarimaError::Config(format!("data.train = {} must be in [20, {n})", cfg.data.train)));
    }
    Ok(Loaded { hash: config_hash(cfg, &bytes)?, y: series.values })
}

fn new_manifest(cfg: &RunConfig, l: &Loaded) -> RunManifest {
    RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        config_hash: l.hash.clone(),
        series_len: l.y.len(),
        stages: Vec::new(),
        diagnostics: None,
        ar: None,
        arma: None,
        classical: None,
        evaluation: None,
        error: None,
    }
}

fn write_manifest(m: &RunManifest, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("manifest.json"), serde_json::to_vec_pretty(m)?)?;
    Ok(())
}

fn execute(cfg: &RunConfig, l: &Loaded, m: &mut RunManifest, full: bool) -> Result<()> {
    let out = &cfg.run.out;
    let mut runner = Runner { cache_dir: cfg.run.cache.then(|| out.join("cache").join(&l.hash)), stages: Vec::new() };
    let train = &l.y[..cfg.data.train];
    let res = (|| -> Result<()> {
        let diag: DiagnosticsStage = runner.stage("diagnostics", || diagnostics_stage(cfg, train))?;
        let d = diag.d_order.d_star;
        m.diagnostics = Some(diag.clone());
        if !full {
            return Ok(());
        }
        let ar: ArStage = runner.stage("ar", || ar_stage(cfg, train, &diag))?;
        m.ar = Some(ar.clone());
        let arma: Vec<ArmaModel> = runner.stage("arma", || arma_stage(cfg, train, d, &ar))?;
        m.arma = Some(arma.clone());
        let classical: ClassicalArima = runner.stage("classical", || classical_stage(cfg, train, d))?;
        m.classical = Some(classical.clone());
        let ev: Evaluation = runner.stage("evaluation", || rolling_evaluate(&l.y, cfg.data.train, &arma, &classical, &cfg.eval))?;
        m.evaluation = Some(ev);
        Ok(())
    })();
    m.stages = runner.stages;
    res
}

fn run_stages(cfg: &RunConfig, full: bool) -> Result<RunManifest> {
    let l = load(cfg)?;
    let mut m = new_manifest(cfg, &l);
    let res = execute(cfg, &l, &mut m, full);
    if let Err(e) = res {
        m.error = Some(e.to_string());
        write_manifest(&m, &cfg.run.out)?;
        return Err(e);
    }
    write_manifest(&m, &cfg.run.out)?;
    if full {
        emit_reports(&m, &cfg.run.out)?;
        emit_plot_data(&m, &cfg.run.out)?;
    } else {
        emit_diagnostics(&m, &cfg.run.out)?;
    }
    Ok(m)
}

/// Run every stage and write the manifest and reports under `run.out`.
/// Ingestion failures write nothing; later failures leave a manifest with
/// the partial results and the error.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunManifest> {
    run_stages(cfg, true)
}

/// Differencing order and lag diagnostics only.
pub fn run_diagnostics(cfg: &RunConfig) -> Result<RunManifest> {
    run_stages(cfg, false)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<RunManifest> {
    let text = fs::read_to_string(path.as_ref())?;
    Ok(serde_json::from_str(&text)?)
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn joined(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(";")
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

fn lag_rows(d: &LagDiagnostics) -> Vec<Vec<String>> {
    d.values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let lag = i + 1;
            vec![
                lag.to_string(),
                num(*v),
                d.significant.contains(&lag).to_string(),
                d.fallback.contains(&lag).to_string(),
                num(d.tau),
            ]
        })
        .collect()
}

const LAG_HEADER: [&str; 5] = ["lag", "value", "significant", "fallback", "tau"];
const DM_HEADER: [&str; 8] =
    ["Quantum pdq", "blocks_used", "loss", "DM_stat", "p_value", "classical_mean_loss", "quantum_mean_loss", "delta_mean_loss"];

fn emit_diagnostics(m: &RunManifest, out: &Path) -> Result<Vec<PathBuf>> {
    let diag = m.diagnostics.as_ref().ok_or_else(|| QarimaError::InvalidInput("manifest is missing stages: diagnostics".into()))?;
    fs::create_dir_all(out)?;
    let d_rows: Vec<Vec<String>> = diag
        .d_order
        .metrics_log
        .iter()
        .map(|l| vec![l.d.to_string(), num(l.alpha), num(l.gamma), num(l.loss), (l.d == diag.d_order.d_star).to_string()])
        .collect();
    Ok(vec![
        write_csv(&out.join("d_order.csv"), &["d", "alpha", "gamma", "loss", "selected"], &d_rows)?,
        write_csv(&out.join("qacf.csv"), &LAG_HEADER, &lag_rows(&diag.qacf))?,
        write_csv(&out.join("qpacf.csv"), &LAG_HEADER, &lag_rows(&diag.qpacf))?,
    ])
}

/// Metrics rows in `Model, N, MSE, MAPE` layout.
pub fn metrics_rows(ev: &Evaluation) -> Vec<Vec<String>> {
    ev.reports.iter().map(|r| vec![r.label.clone(), r.n.to_string(), num(r.mse), num(r.mape)]).collect()
}

fn dm_rows(ev: &Evaluation, loss: LossKind) -> Vec<Vec<String>> {
    ev.dm
        .iter()
        .filter(|d| d.loss_kind == loss)
        .map(|d| {
            vec![
                d.quantum_pdq.clone(),
                d.blocks_used.to_string(),
                loss.name().to_string(),
                num(d.dm_stat),
                num(d.p_value),
                num(d.classical_mean_loss),
                num(d.quantum_mean_loss),
                num(d.delta_mean_loss),
            ]
        })
        .collect()
}

/// Metrics and DM tables for an evaluation.
pub fn emit_evaluation(ev: &Evaluation, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    Ok(vec![
        write_csv(&out.join("metrics.csv"), &["Model", "N", "MSE", "MAPE"], &metrics_rows(ev))?,
        write_csv(&out.join("dm_mse.csv"), &DM_HEADER, &dm_rows(ev, LossKind::Mse))?,
        write_csv(&out.join("dm_mae.csv"), &DM_HEADER, &dm_rows(ev, LossKind::Mae))?,
    ])
}

fn missing(m: &RunManifest) -> Vec<&'static str> {
    let mut v = Vec::new();
    if m.diagnostics.is_none() {
        v.push("diagnostics");
    }
    if m.ar.is_none() {
        v.push("ar");
    }
    if m.arma.is_none() {
        v.push("arma");
    }
    if m.classical.is_none() {
        v.push("classical");
    }
    if m.evaluation.is_none() {
        v.push("evaluation");
    }
    v
}

fn require_complete(m: &RunManifest) -> Result<()> {
    let miss = missing(m);
    if miss.is_empty() {
        Ok(())
    } else {
        Err(QarimaError::InvalidInput(format!("manifest is missing stages: {}", miss.join(", "))))
    }
}

/// Report CSVs for a complete manifest.
pub fn emit_reports(m: &RunManifest, out: &Path) -> Result<Vec<PathBuf>> {
    require_complete(m)?;
    let (ar, arma, ev) = (m.ar.as_ref().unwrap(), m.arma.as_ref().unwrap(), m.evaluation.as_ref().unwrap());
    let mut files = emit_diagnostics(m, out)?;
    files.extend(emit_evaluation(ev, out)?);
    let ar_rows: Vec<Vec<String>> = ar
        .estimate
        .fits
        .iter()
        .map(|f| vec![f.p.to_string(), num(f.loss), joined(&f.b), num(f.residual_mean), num(f.residual_std)])
        .collect();
    files.push(write_csv(&out.join("ar_summary.csv"), &["p", "loss", "coefficients", "mu", "sigma"], &ar_rows)?);
    let mut weak_rows: Vec<Vec<String>> = Vec::new();
    if let Some(w) = &ar.weak {
        weak_rows.push(vec!["weak".into(), w.p_prime.to_string(), joined(&w.b_full), num(w.loss)]);
    }
    for s in &ar.progressive {
        weak_rows.push(vec!["progressive".into(), s.p.to_string(), joined(&s.b), num(s.loss)]);
    }
    files.push(write_csv(&out.join("weak_lags.csv"), &["kind", "p", "coefficients", "loss"], &weak_rows)?);
    let arma_rows: Vec<Vec<String>> = arma
        .iter()
        .map(|a| {
            vec![a.p.to_string(), a.d.to_string(), a.q.to_string(), joined(&a.b), joined(&a.theta), num(a.sigma_ar), num(a.sigma_ma)]
        })
        .collect();
    files.push(write_csv(&out.join("arma_models.csv"), &["p", "d", "q", "b", "theta", "sigma_ar", "sigma_ma"], &arma_rows)?);
    let mut header = vec!["t".to_string(), "actual".to_string(), ev.classical.label.clone()];
    header.extend(ev.models.iter().map(|r| r.label.clone()));
    let fc_rows: Vec<Vec<String>> = (0..ev.actual.len())
        .map(|i| {
            let mut r = vec![(ev.split + i).to_string(), num(ev.actual[i]), num(ev.classical.forecast[i])];
            r.extend(ev.models.iter().map(|m| num(m.forecast[i])));
            r
        })
        .collect();
    let hdr: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    files.push(write_csv(&out.join("forecasts.csv"), &hdr, &fc_rows)?);
    Ok(files)
}

/// Bar-chart series: per-model metrics with deltas and the DM p-values with
/// `−log10(p)` against the α reference.
pub fn emit_plot_data(m: &RunManifest, out: &Path) -> Result<Vec<PathBuf>> {
    require_complete(m)?;
    let ev = m.evaluation.as_ref().unwrap();
    plot_files(ev, m.config.eval.alpha, out)
}

fn plot_files(ev: &Evaluation, alpha: f64, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let c = &ev.reports[0];
    let rows: Vec<Vec<String>> = ev.reports[1..]
        .iter()
        .zip(&ev.outperforms)
        .map(|(r, (_, ok))| {
            vec![r.label.clone(), num(r.mse), num(r.mape), num(r.mae), num(c.mse - r.mse), num(c.mape - r.mape), ok.to_string()]
        })
        .collect();
    let dm: Vec<Vec<String>> = ev
        .dm
        .iter()
        .map(|d| {
            vec![
                d.quantum_pdq.clone(),
                d.loss_kind.name().to_string(),
                num(d.p_value),
                num(neg_log10(d.p_value)),
                num(alpha),
                num(neg_log10(alpha)),
            ]
        })
        .collect();
    Ok(vec![
        write_csv(
            &out.join("plot_metrics.csv"),
            &["Model", "MSE", "MAPE", "MAE", "delta_MSE", "delta_MAPE", "reliably_outperforms"],
            &rows,
        )?,
        write_csv(&out.join("plot_dm.csv"), &["Quantum pdq", "loss", "p_value", "neg_log10_p", "alpha", "neg_log10_alpha"], &dm)?,
    ])
}

pub fn neg_log10(p: f64) -> f64 {
    -p.log10()
}

/// Score a `forecasts.csv` written by a run (columns `t, actual,
/// classical, models…`) and write the metrics, DM and plot tables.
pub fn evaluate_stored(forecasts: &Path, proto: &Protocol, out: &Path) -> Result<Evaluation> {
    let mut rdr = csv::Reader::from_path(forecasts)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    if header.len() < 3 || header[1] != "actual" {
        return Err(QarimaError::Data("forecast table needs columns t, actual, classical[, models…]".into()));
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    let mut split = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (j, c) in cols.iter_mut().enumerate() {
            let cell = rec.get(j).unwrap_or("");
            let v: f64 = cell.trim().parse().map_err(|_| QarimaError::Data(format!("row {}: bad value {cell:?}", i + 1)))?;
            c.push(v);
        }
        if split.is_none() {
            split = Some(cols[0][0] as usize);
        }
    }
    let pdq = |label: &str| label.find('(').map(|i| label[i..].to_string()).unwrap_or_else(|| label.to_string());
    let rec = |j: usize| ForecastRecord { label: header[j].clone(), pdq: pdq(&header[j]), forecast: cols[j].clone() };
    let models = (3..header.len()).map(rec).collect();
    let ev = score_forecasts(split.unwrap_or(0), cols[1].clone(), rec(2), models, proto)?;
    emit_evaluation(&ev, out)?;
    plot_files(&ev, proto.alpha, out)?;
    Ok(ev)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_document() {
        let cfg = RunConfig::from_toml("[data]\npath = \"x.csv\"\ntrain = 50\n").unwrap();
        assert_eq!(cfg.thresholds.z, 1.96);
        assert_eq!(cfg.d_order.d_max, 2);
        assert!(RunConfig::from_toml("[bogus]\n").is_err());
        assert!(RunConfig::from_toml("[data]\nfoo = 1\n").is_err());
    }

    #[test]
    fn neg_log_of_alpha() {
        assert!((neg_log10(0.05) - 1.3010299956639813).abs() < 1e-15);
    }
}
