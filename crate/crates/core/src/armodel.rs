//! Swap-test AR loss, OLS-initialised VQC refinement over candidate orders,
//! weak-lag extension and residual evaluation.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, QarimaError, Result};
use crate::optimizer::{minimize, OptProblem};
use crate::qsim::{expectation_x, expectation_z, Gate, QuantumState};
use crate::series::{build_delay_matrix, mean, std_dev, DelayMatrix};
use crate::swaptest::{binary_entropy, dot, norm, phase_corrected_cosine, signed_swap_cosine};

/// Coefficient vectors shorter than this are treated as zero.
pub const DEGENERATE_NORM: f64 = 1e-10;
const P0_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_cos: f64,
    pub lambda_ent: f64,
    pub lambda_l2: f64,
    /// Phase weight ω; 1 recovers the classical angle.
    pub omega: f64,
    pub lambda_dev: f64,
    pub lambda_mag: f64,
    /// Derive `lambda_dev` and `lambda_mag` from the baseline loss.
    pub adaptive_penalties: bool,
    /// MA coefficient norm bound; `None` means `√q`.
    pub tau_norm: Option<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cos: 0.0,
            lambda_ent: 0.0,
            lambda_l2: 0.0,
            omega: 1.0,
            lambda_dev: 0.0,
            lambda_mag: 0.0,
            adaptive_penalties: true,
            tau_norm: None,
        }
    }
}

impl LossWeights {
    /// `(λ_dev, λ_mag)` for a baseline loss.
    pub fn weak_penalties(&self, l_base: f64) -> (f64, f64) {
        if self.adaptive_penalties {
            (1e-3 * l_base, 5e-4 * l_base)
        } else {
            (self.lambda_dev, self.lambda_mag)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [self.lambda_cos, self.lambda_ent, self.lambda_l2, self.lambda_dev, self.lambda_mag];
        if nonneg.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || !self.omega.is_finite() {
            return Err(QarimaError::Config("loss weights must be finite and non-negative".into()));
        }
        if let Some(t) = self.tau_norm {
            if !(t > 0.0) {
                return Err(QarimaError::Config(format!("tau_norm {t} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CoeffMap {
    /// Optimizer parameters are the coefficients.
    #[default]
    Identity,
    /// Coefficients are the Bloch polar angles of an Ry + CNOT-ladder circuit.
    BlochAngle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VqcConfig {
    pub reps: usize,
    pub coeff_map: CoeffMap,
    /// 0 means analytic.
    pub shots: u64,
    pub seed: u64,
    /// Std of Gaussian noise added to the swap cosine.
    pub noise_std: f64,
    /// Objective evaluation budget per optimisation (T_max).
    pub max_iter: usize,
    pub rho_begin: f64,
    pub rho_end: f64,
}

impl Default for VqcConfig {
    fn default() -> Self {
        Self {
            reps: 2,
            coeff_map: CoeffMap::Identity,
            shots: 0,
            seed: 0,
            noise_std: 0.0,
            max_iter: 200,
            rho_begin: 0.1,
            rho_end: 1e-6,
        }
    }
}

impl VqcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(QarimaError::Config("vqc reps must be >= 1".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(QarimaError::Config("noise_std must be non-negative".into()));
        }
        if !(self.rho_end > 0.0 && self.rho_end < self.rho_begin) {
            return Err(QarimaError::Config("need 0 < rho_end < rho_begin".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ARFit {
    pub p: usize,
    pub b: Vec<f64>,
    pub init: Vec<f64>,
    pub loss: f64,
    pub residual_mean: f64,
    pub residual_std: f64,
    pub residuals: Vec<f64>,
    pub ridge: bool,
    pub evals: usize,
}

pub(crate) fn row_seed(seed: u64, row: usize) -> u64 {
    seed ^ (row as u64).wrapping_add(1).wrapping_mul(0xD134_2543_DE82_EF95)
}

/// Per-row swap quantities shared by the AR and MA losses.
pub(crate) struct RowTerms {
    pub cos_dot: f64,
    pub cos_swap: f64,
    pub cos_corr: f64,
    pub scale: f64,
}

pub(crate) fn row_terms(x: &[f64], coef: &[f64], omega: f64, cfg: &VqcConfig, row: usize) -> Result<RowTerms> {
    let nx = norm(x);
    let nb = norm(coef);
    if nb < DEGENERATE_NORM || nx == 0.0 {
        return Ok(RowTerms { cos_dot: 0.0, cos_swap: 0.0, cos_corr: 0.0, scale: 0.0 });
    }
    let cos_dot = (dot(x, coef) / (nx * nb)).clamp(-1.0, 1.0);
    let seed = row_seed(cfg.seed, row);
    let mut cos_swap = signed_swap_cosine(x, coef, cfg.shots, seed)?;
    if cfg.noise_std > 0.0 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x6E6F_6973_65);
        let n = Normal::new(0.0, cfg.noise_std).map_err(|e| QarimaError::Config(e.to_string()))?;
        cos_swap = (cos_swap + n.sample(&mut rng)).clamp(-1.0, 1.0);
    }
    let cos_corr = phase_corrected_cosine(cos_dot, cos_swap, omega).cos_corr;
    Ok(RowTerms { cos_dot, cos_swap, cos_corr, scale: nx * nb })
}

pub(crate) fn clipped_entropy(p0: f64) -> Result<f64> {
    binary_entropy(p0.clamp(P0_CLIP, 1.0 - P0_CLIP))
}

/// Swap-test AR loss summed over the rows of `x`.
pub fn ar_loss(x: &DelayMatrix, b: &[f64], w: &LossWeights, cfg: &VqcConfig) -> Result<f64> {
    if b.len() != x.p {
        return invalid(format!("coefficient length {} != p = {}", b.len(), x.p));
    }
    let rows = crate::par::map_range(x.rows(), |t| -> Result<f64> {
        let r = row_terms(&x.regressors[t], b, w.omega, cfg, t)?;
        let pred = r.scale * r.cos_corr;
        let mut l = (x.targets[t] - pred).powi(2);
        if w.lambda_cos != 0.0 {
            l += w.lambda_cos * (r.cos_dot - r.cos_swap).powi(2);
        }
        if w.lambda_ent != 0.0 {
            l += w.lambda_ent * clipped_entropy(1.0 - r.cos_swap * r.cos_swap)?;
        }
        Ok(l)
    });
    let mut total = 0.0;
    for r in rows {
        total += r?;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeastSquares {
    pub coef: Vec<f64>,
    pub ridge: bool,
}

/// Normal-equation least squares, falling back to a 1e-8 ridge when the
/// Gram matrix is singular.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Result<LeastSquares> {
    let n = rows.len();
    if n == 0 || n != y.len() {
        return invalid(format!("least squares needs matching non-empty rows ({} vs {})", n, y.len()));
    }
    let p = rows[0].len();
    let x = DMatrix::from_fn(n, p, |r, c| rows[r][c]);
    let yv = DVector::from_column_slice(y);
    let gram = x.transpose() * &x;
    let rhs = x.transpose() * yv;
    let max_diag = gram.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let solved = if max_diag > 0.0 {
        gram.clone().cholesky().and_then(|c| {
            let d = c.l().diagonal();
            let lo = d.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
            let hi = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            (lo / hi > 1e-7).then(|| c.solve(&rhs))
        })
    } else {
        None
    };
    match solved {
        Some(b) => Ok(LeastSquares { coef: b.iter().copied().collect(), ridge: false }),
        None => {
            let reg = gram + DMatrix::identity(p, p) * 1e-8;
            let b = reg
                .cholesky()
                .map(|c| c.solve(&rhs))
                .ok_or_else(|| QarimaError::Numerical("ridge system not positive definite".into()))?;
            Ok(LeastSquares { coef: b.iter().copied().collect(), ridge: true })
        }
    }
}

pub fn ols_init(x: &DelayMatrix) -> Result<LeastSquares> {
    least_squares(&x.regressors, &x.targets)
}

/// Coefficients read from the Ry + CNOT-ladder circuit: layer 0 holds one
/// angle per qubit, each of the `reps` further layers applies Ry angles then
/// a CNOT chain. `b_i = atan2(⟨X_i⟩, ⟨Z_i⟩)`.
pub fn bloch_coefficients(params: &[f64], k: usize, reps: usize) -> Result<Vec<f64>> {
    if params.len() != k * (reps + 1) {
        return invalid(format!("expected {} circuit angles, got {}", k * (reps + 1), params.len()));
    }
    let mut st = QuantumState::zero(k)?;
    for (i, a) in params[..k].iter().enumerate() {
        st.apply(&Gate::ry(i, *a))?;
    }
    for l in 1..=reps {
        for i in 0..k {
            st.apply(&Gate::ry(i, params[l * k + i]))?;
        }
        for i in 0..k.saturating_sub(1) {
            st.apply(&Gate::cnot(i, i + 1))?;
        }
    }
    (0..k).map(|i| Ok(expectation_x(&st, i)?.atan2(expectation_z(&st, i)?))).collect()
}

fn map_params(params: &[f64], k: usize, cfg: &VqcConfig) -> Result<Vec<f64>> {
    match cfg.coeff_map {
        CoeffMap::Identity => Ok(params.to_vec()),
        CoeffMap::BlochAngle => bloch_coefficients(params, k, cfg.reps),
    }
}

/// Minimise `objective(b)` over the circuit parameters starting from `init`.
/// Returns `(b, objective(b), evals)`; never worse than `init`.
pub(crate) fn refine<F>(init: &[f64], objective: F, cfg: &VqcConfig, seed: u64, ball: Option<f64>) -> Result<(Vec<f64>, f64, usize)>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let k = init.len();
    let f0 = objective(init)?;
    if cfg.max_iter == 0 {
        return Ok((init.to_vec(), f0, 1));
    }
    let x0 = match cfg.coeff_map {
        CoeffMap::Identity => init.to_vec(),
        CoeffMap::BlochAngle => {
            let mut v = init.to_vec();
            v.resize(k * (cfg.reps + 1), 0.0);
            v
        }
    };
    let err = std::cell::RefCell::new(None);
    let f = |params: &[f64]| -> f64 {
        match map_params(params, k, cfg).and_then(|b| objective(&b)) {
            Ok(v) => v,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        }
    };
    let n = x0.len();
    let mut prob = OptProblem::new(f, x0).rho(cfg.rho_begin, cfg.rho_end).max_evals(cfg.max_iter.max(n + 2));
    if let Some(tau) = ball {
        if cfg.coeff_map == CoeffMap::Identity {
            prob = prob.norm_ball(tau);
        }
    }
    let res = minimize(&prob, seed);
    if let Some(e) = err.borrow_mut().take() {
        return Err(e);
    }
    let res = res?;
    let b = map_params(&res.x_star, k, cfg)?;
    let fb = objective(&b)?;
    if fb <= f0 || !f0.is_finite() {
        Ok((b, fb, res.evals_used + 1))
    } else {
        Ok((init.to_vec(), f0, res.evals_used + 1))
    }
}

/// Classical one-step residuals `y_t − x_tᵀb`.
pub fn ar_residuals(x: &DelayMatrix, b: &[f64]) -> Vec<f64> {
    let degenerate = norm(b) < DEGENERATE_NORM;
    x.regressors
        .iter()
        .zip(&x.targets)
        .map(|(r, y)| if degenerate { *y } else { y - dot(r, b) })
        .collect()
}

fn fit_order(y: &[f64], p: usize, cfg: &VqcConfig, w: &LossWeights) -> Result<ARFit> {
    let x = build_delay_matrix(y, p)?;
    let ols = ols_init(&x)?;
    let (b, loss, evals) = refine(&ols.coef, |b| ar_loss(&x, b, w, cfg), cfg, cfg.seed.wrapping_add(p as u64), None)?;
    let residuals = ar_residuals(&x, &b);
    Ok(ARFit {
        p,
        init: ols.coef,
        loss,
        residual_mean: mean(&residuals),
        residual_std: std_dev(&residuals),
        residuals,
        b,
        ridge: ols.ridge,
        evals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArEstimate {
    pub p_star: usize,
    /// One fit per candidate, ascending in p.
    pub fits: Vec<ARFit>,
}

impl ArEstimate {
    pub fn best(&self) -> &ARFit {
        self.fits.iter().find(|f| f.p == self.p_star).expect("p_star is one of the fits")
    }
}

/// Fit every candidate order and keep the lowest loss; ties go to smaller p.
pub fn vqc_ar_estimate(y: &[f64], candidates: &[usize], cfg: &VqcConfig, w: &LossWeights) -> Result<ArEstimate> {
    if candidates.is_empty() {
        return Err(QarimaError::Config("empty AR candidate set".into()));
    }
    cfg.validate()?;
    w.validate()?;
    let mut ps = candidates.to_vec();
    ps.sort_unstable();
    ps.dedup();
    if let Some(&p) = ps.iter().find(|&&p| p == 0 || p >= y.len()) {
        return invalid(format!("AR order {p} invalid for series of length {}", y.len()));
    }
    let fits = crate::par::map_slice(&ps, |&p| fit_order(y, p, cfg, w)).into_iter().collect::<Result<Vec<_>>>()?;
    let best = fits
        .iter()
        .min_by(|a, b| a.loss.total_cmp(&b.loss).then(a.p.cmp(&b.p)))
        .expect("non-empty");
    Ok(ArEstimate { p_star: best.p, fits })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakFit {
    pub p_prime: usize,
    pub b_full: Vec<f64>,
    pub weak_init: Vec<f64>,
    pub loss: f64,
    /// Requested weak count could not be met from the summary.
    pub reduced: bool,
}

/// Magnitudes from non-winning fits that do not already occur in `|b_star|`,
/// ascending.
pub fn weak_candidates(b_star: &[f64], p_star: usize, summary: &[ARFit]) -> Vec<f64> {
    let anchors: Vec<f64> = b_star.iter().map(|v| v.abs()).collect();
    let mut pool: Vec<f64> = summary
        .iter()
        .filter(|f| f.p != p_star)
        .flat_map(|f| f.b.iter().map(|v| v.abs()))
        .filter(|m| !anchors.iter().any(|a| (a - m).abs() <= 1e-9 * a.max(*m).max(1e-300)))
        .collect();
    pool.sort_by(f64::total_cmp);
    pool.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(b.abs()));
    pool
}

fn weak_objective(
    x: &DelayMatrix,
    anchors: &[f64],
    weak: &[f64],
    init: &[f64],
    lam: (f64, f64),
    w: &LossWeights,
    cfg: &VqcConfig,
) -> Result<f64> {
    let mut full = anchors.to_vec();
    full.extend_from_slice(weak);
    let dev: f64 = weak.iter().zip(init).map(|(a, b)| (a - b).powi(2)).sum();
    let mag: f64 = weak.iter().map(|v| v.abs()).sum();
    Ok(ar_loss(x, &full, w, cfg)? + lam.0 * dev + lam.1 * mag)
}

fn refine_weak(y: &[f64], anchors: &[f64], init: &[f64], lam: (f64, f64), cfg: &VqcConfig, w: &LossWeights) -> Result<(Vec<f64>, f64)> {
    let p = anchors.len() + init.len();
    let x = build_delay_matrix(y, p)?;
    let (weak, loss, _) = refine(
        init,
        |v| weak_objective(&x, anchors, v, init, lam, w, cfg),
        cfg,
        cfg.seed.wrapping_add(1000 + p as u64),
        None,
    )?;
    let mut full = anchors.to_vec();
    full.extend_from_slice(&weak);
    Ok((full, loss))
}

/// Extend the anchor fit by `k` weak lags initialised from the smallest
/// unused magnitudes in the summary; only the weak block is optimised.
pub fn weak_lag_refine(
    y: &[f64],
    p_star: usize,
    b_star: &[f64],
    summary: &[ARFit],
    k: usize,
    cfg: &VqcConfig,
    w: &LossWeights,
) -> Result<WeakFit> {
    if k == 0 {
        return Err(QarimaError::Config("weak count must be >= 1".into()));
    }
    if b_star.len() != p_star {
        return invalid("anchor length must equal p_star");
    }
    let pool = weak_candidates(b_star, p_star, summary);
    let k_used = k.min(pool.len());
    let reduced = k_used < k;
    if reduced {
        log::warn!("only {k_used} weak-lag candidates available, requested {k}");
    }
    if k_used == 0 {
        let x = build_delay_matrix(y, p_star)?;
        return Ok(WeakFit {
            p_prime: p_star,
            b_full: b_star.to_vec(),
            weak_init: Vec::new(),
            loss: ar_loss(&x, b_star, w, cfg)?,
            reduced,
        });
    }
    let init = pool[..k_used].to_vec();
    if p_star + k_used >= y.len() {
        return invalid("series too short for the extended order");
    }
    let l_base = summary.iter().map(|f| f.loss).fold(f64::INFINITY, f64::min);
    let lam = w.weak_penalties(l_base);
    let (b_full, loss) = refine_weak(y, b_star, &init, lam, cfg, w)?;
    Ok(WeakFit { p_prime: p_star + k_used, b_full, weak_init: init, loss, reduced })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakStep {
    pub p: usize,
    pub b: Vec<f64>,
    pub loss: f64,
}

/// Add weak lags one at a time, stopping once `L_weak − L_base > tau_stop`.
pub fn progressive_weak_refine(
    y: &[f64],
    p_star: usize,
    b_anchor: &[f64],
    weak_inits: &[f64],
    cfg: &VqcConfig,
    w: &LossWeights,
    tau_stop: f64,
) -> Result<Vec<WeakStep>> {
    if b_anchor.len() != p_star {
        return invalid("anchor length must equal p_star");
    }
    let l_base = ar_loss(&build_delay_matrix(y, p_star)?, b_anchor, w, cfg)?;
    let lam = w.weak_penalties(l_base);
    let mut steps = Vec::new();
    for j in 1..=weak_inits.len() {
        if p_star + j >= y.len() {
            break;
        }
        let (b, loss) = refine_weak(y, b_anchor, &weak_inits[..j], lam, cfg, w)?;
        steps.push(WeakStep { p: p_star + j, b, loss });
        if loss - l_base > tau_stop {
            break;
        }
    }
    Ok(steps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub p: usize,
    pub residuals: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Classical projection residuals for each coefficient vector.
pub fn residual_eval(y: &[f64], coefs: &[Vec<f64>]) -> Result<Vec<ResidualSummary>> {
    coefs
        .iter()
        .map(|b| {
            let x = build_delay_matrix(y, b.len())?;
            let residuals = ar_residuals(&x, b);
            Ok(ResidualSummary { p: b.len(), mean: mean(&residuals), std: std_dev(&residuals), residuals })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{synth_ar1, synth_arma};

    fn sse(x: &DelayMatrix, b: &[f64]) -> f64 {
        ar_residuals(x, b).iter().map(|e| e * e).sum()
    }

    #[test]
    fn omega_one_is_sse() {
        let y = synth_ar1(0.6, 80, 1.0, 3).unwrap().values;
        let x = build_delay_matrix(&y, 2).unwrap();
        let b = [0.4, -0.1];
        let l = ar_loss(&x, &b, &LossWeights::default(), &VqcConfig::default()).unwrap();
        assert!((l - sse(&x, &b)).abs() < 1e-9 * sse(&x, &b).max(1.0));
        let tiny = ar_loss(&x, &[1e-12, 0.0], &LossWeights { lambda_ent: 1.0, ..Default::default() }, &VqcConfig::default()).unwrap();
        assert!(tiny.is_finite());
        assert!(ar_loss(&x, &[0.1], &LossWeights::default(), &VqcConfig::default()).is_err());
    }

    #[test]
    fn ols_examples() {
        let mut y = vec![1.0];
        for _ in 0..30 {
            y.push(0.5 * y.last().unwrap());
        }
        let b = ols_init(&build_delay_matrix(&y, 1).unwrap()).unwrap();
        assert!((b.coef[0] - 0.5).abs() < 1e-12 && !b.ridge);
        let z = ols_init(&build_delay_matrix(&[0.0; 10], 2).unwrap()).unwrap();
        assert!(z.ridge && z.coef.iter().all(|v| *v == 0.0));
        let y = synth_arma(&[0.5, -0.3], &[], 2000, 1.0, 9).unwrap().values;
        let b = ols_init(&build_delay_matrix(&y, 2).unwrap()).unwrap().coef;
        assert!((b[0] - 0.5).abs() < 0.05 && (b[1] + 0.3).abs() < 0.05);
    }

    #[test]
    fn zero_budget_passthrough() {
        let y = synth_ar1(0.7, 200, 1.0, 4).unwrap().values;
        let cfg = VqcConfig { max_iter: 0, ..Default::default() };
        let est = vqc_ar_estimate(&y, &[1], &cfg, &LossWeights::default()).unwrap();
        assert_eq!(est.fits[0].b, est.fits[0].init);
        assert!(vqc_ar_estimate(&y, &[], &cfg, &LossWeights::default()).is_err());
    }

    #[test]
    fn bloch_single_qubit_is_angle() {
        let b = bloch_coefficients(&[0.3, 0.2, 0.1], 1, 2).unwrap();
        assert!((b[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn adaptive_penalties() {
        let (d, m) = LossWeights::default().weak_penalties(200.0);
        assert_eq!(d, 1e-3 * 200.0);
        assert_eq!(m, 5e-4 * 200.0);
        assert!((d - 0.2).abs() < 1e-15 && (m - 0.1).abs() < 1e-15);
    }

    #[test]
    fn residual_degenerate() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let r = residual_eval(&y, &[vec![0.0]]).unwrap();
        assert_eq!(r[0].residuals, vec![2.0, 3.0, 4.0]);
    }
}
