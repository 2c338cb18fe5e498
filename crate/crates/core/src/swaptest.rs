//! Swap-test primitives built on [`crate::qsim`].
//!
//! Two cosine circuits are available. [`CosineCircuit::Mirrored`] (the
//! default) loads the interleaved register ψ twice, flips the selector qubit
//! of the second copy so its x and θ halves trade places, and runs a register
//! swap test between the copies. The overlap of the two copies is exactly the
//! cosine between `x` and `θ`, so `√(2·p0 − 1) = |cos(x, θ)|`.
//! [`CosineCircuit::Literal`] swaps the single φ qubit against the lowest ψ
//! qubit. It is kept for comparison only; its `p0` does not track the cosine.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, QarimaError, Result};
use crate::qsim::{init_amplitudes_mut, Gate, QuantumState};

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPair {
    pub phi: [f64; 2],
    pub psi: Vec<f64>,
    pub source_norms: (f64, f64),
    /// Set when either input had zero norm and the default states were used.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CosineCircuit {
    #[default]
    Mirrored,
    Literal,
}

/// Which probability identity turns the scaled-dot circuit into an overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DotVariant {
    /// X then H on the control, `P = 1 − 2·p0 + p1`.
    #[default]
    Verbatim,
    /// H on the control, `P = 2·p0 − 1`.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwapEstimate {
    /// Unsigned swap cosine in [0, 1].
    pub cosine: f64,
    pub p0: f64,
    /// Binary entropy of `p0`, in bits.
    pub entropy: f64,
    pub shots: u64,
    pub seed: u64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseCorrection {
    pub cos_corr: f64,
    pub theta_dot: f64,
    pub theta_swap: f64,
    pub delta: f64,
    pub theta_corr: f64,
}

fn check_pair(x: &[f64], theta: &[f64]) -> Result<()> {
    if x.len() != theta.len() {
        return invalid(format!("length mismatch: {} vs {}", x.len(), theta.len()));
    }
    if x.is_empty() {
        return invalid("empty vectors");
    }
    if x.iter().chain(theta).any(|v| !v.is_finite()) {
        return invalid("non-finite input to swap test");
    }
    Ok(())
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Classical cosine; 0 when either vector is zero.
pub fn classical_cosine(x: &[f64], theta: &[f64]) -> f64 {
    let nx = norm(x);
    let nt = norm(theta);
    if nx == 0.0 || nt == 0.0 {
        return 0.0;
    }
    (dot(x, theta) / (nx * nt)).clamp(-1.0, 1.0)
}

pub fn prep_swaptest(x: &[f64], theta: &[f64]) -> Result<PreparedPair> {
    check_pair(x, theta)?;
    let nx = norm(x);
    let nt = norm(theta);
    if nx == 0.0 || nt == 0.0 {
        return Ok(PreparedPair {
            phi: [1.0, 0.0],
            psi: vec![1.0, 0.0],
            source_norms: (nx, nt),
            degenerate: true,
        });
    }
    let z = (nx * nx + nt * nt).sqrt();
    let s = std::f64::consts::SQRT_2;
    let mut psi = Vec::with_capacity(2 * x.len());
    for (a, b) in x.iter().zip(theta) {
        psi.push(a / (nx * s));
        psi.push(b / (nt * s));
    }
    Ok(PreparedPair { phi: [nx / z, -nt / z], psi, source_norms: (nx, nt), degenerate: false })
}

/// Zero-pad to the next power of two (at least 2) and renormalise away
/// rounding drift.
fn pad_pow2(v: &[f64]) -> Vec<f64> {
    let len = v.len().max(2).next_power_of_two();
    let mut out = vec![0.0; len];
    out[..v.len()].copy_from_slice(v);
    let n = norm(&out);
    if n > 0.0 {
        out.iter_mut().for_each(|a| *a /= n);
    }
    out
}

fn qubits_for(len: usize) -> usize {
    len.trailing_zeros() as usize
}

/// Run H·CSWAP·H (optionally with a leading X on the control) between two
/// registers loaded with `a` and `b`, returning the exact control `p0`.
/// `flip_b` applies X to the lowest qubit of register B after loading.
fn register_swap_p0(a: &[f64], b: &[f64], flip_b: bool, x_first: bool) -> Result<f64> {
    let k = qubits_for(a.len());
    let reg_a: Vec<usize> = (1..=k).collect();
    let reg_b: Vec<usize> = (k + 1..=2 * k).collect();
    let mut st = QuantumState::zero(2 * k + 1)?;
    init_amplitudes_mut(a, &reg_a, &mut st)?;
    init_amplitudes_mut(b, &reg_b, &mut st)?;
    if flip_b {
        st.apply(&Gate::x(reg_b[0]))?;
    }
    if x_first {
        st.apply(&Gate::x(0))?;
    }
    st.apply(&Gate::h(0))?;
    for i in 0..k {
        st.apply(&Gate::cswap(0, reg_a[i], reg_b[i]))?;
    }
    st.apply(&Gate::h(0))?;
    st.prob_zero(0)
}

fn literal_p0(pair: &PreparedPair) -> Result<f64> {
    let psi = pad_pow2(&pair.psi);
    let k = qubits_for(psi.len());
    let reg_psi: Vec<usize> = (2..2 + k).collect();
    let mut st = QuantumState::zero(k + 2)?;
    init_amplitudes_mut(&pair.phi, &[1], &mut st)?;
    init_amplitudes_mut(&psi, &reg_psi, &mut st)?;
    st.apply(&Gate::h(0))?;
    st.apply(&Gate::cswap(0, 1, 2))?;
    st.apply(&Gate::h(0))?;
    st.prob_zero(0)
}

/// Exact control-qubit `p0` of the chosen cosine circuit.
pub fn cosine_circuit_p0(pair: &PreparedPair, circuit: CosineCircuit) -> Result<f64> {
    match circuit {
        CosineCircuit::Mirrored => {
            let psi = pad_pow2(&pair.psi);
            register_swap_p0(&psi, &psi, true, false)
        }
        CosineCircuit::Literal => literal_p0(pair),
    }
}

/// `√max(2·p0 − 1, 0)`. Values within a few ulps of zero are treated as
/// zero so that rounding in the amplitudes does not surface as a ~1e-8 cosine.
pub fn cosine_from_p0(p0: f64) -> f64 {
    let c2 = 2.0 * p0 - 1.0;
    if c2 <= 8.0 * f64::EPSILON {
        return 0.0;
    }
    c2.min(1.0).sqrt()
}

pub fn cosine_projection(x: &[f64], theta: &[f64], shots: u64, seed: u64) -> Result<SwapEstimate> {
    cosine_projection_with(x, theta, CosineCircuit::Mirrored, shots, seed)
}

pub fn cosine_projection_with(
    x: &[f64],
    theta: &[f64],
    circuit: CosineCircuit,
    shots: u64,
    seed: u64,
) -> Result<SwapEstimate> {
    let pair = prep_swaptest(x, theta)?;
    let exact = cosine_circuit_p0(&pair, circuit)?;
    let p0 = crate::qsim::sample_p0(exact, shots, seed)?;
    Ok(SwapEstimate {
        cosine: if pair.degenerate { 0.0 } else { cosine_from_p0(p0) },
        p0,
        entropy: binary_entropy(p0)?,
        shots,
        seed,
        degenerate: pair.degenerate,
    })
}

/// Swap cosine carrying the sign of the classical dot product.
pub fn signed_swap_cosine(x: &[f64], theta: &[f64], shots: u64, seed: u64) -> Result<f64> {
    let est = cosine_projection(x, theta, shots, seed)?;
    Ok(if dot(x, theta) < 0.0 { -est.cosine } else { est.cosine })
}

/// Overlap probability of the scaled-dot circuit from its control marginals.
pub fn pswap_from_probs(p0: f64, p1: f64, variant: DotVariant) -> f64 {
    match variant {
        DotVariant::Verbatim => 1.0 - 2.0 * p0 + p1,
        DotVariant::Standard => 2.0 * p0 - 1.0,
    }
}

pub fn scaled_dot(x: &[f64], theta: &[f64], shots: u64, seed: u64) -> Result<f64> {
    scaled_dot_with(x, theta, DotVariant::Verbatim, shots, seed)
}

/// `‖x‖·‖θ‖·√max(P_swap, 0)` from a register swap test between the
/// normalised inputs.
pub fn scaled_dot_with(x: &[f64], theta: &[f64], variant: DotVariant, shots: u64, seed: u64) -> Result<f64> {
    check_pair(x, theta)?;
    let nx = norm(x);
    let nt = norm(theta);
    if nx == 0.0 || nt == 0.0 {
        return Ok(0.0);
    }
    let a = pad_pow2(&x.iter().map(|v| v / nx).collect::<Vec<_>>());
    let b = pad_pow2(&theta.iter().map(|v| v / nt).collect::<Vec<_>>());
    let exact = register_swap_p0(&a, &b, false, variant == DotVariant::Verbatim)?;
    let p0 = crate::qsim::sample_p0(exact, shots, seed)?;
    let p = pswap_from_probs(p0, 1.0 - p0, variant);
    Ok(nx * nt * p.max(0.0).sqrt())
}

/// Standard-identity scaled dot with the classical sign attached, so that in
/// analytic mode it equals `x·θ`.
pub fn signed_scaled_dot(x: &[f64], theta: &[f64], shots: u64, seed: u64) -> Result<f64> {
    let v = scaled_dot_with(x, theta, DotVariant::Standard, shots, seed)?;
    Ok(if dot(x, theta) < 0.0 { -v } else { v })
}

pub fn phase_corrected_cosine(cos_dot: f64, cos_swap: f64, omega: f64) -> PhaseCorrection {
    let theta_dot = cos_dot.clamp(-1.0, 1.0).acos();
    let theta_swap = cos_swap.clamp(-1.0, 1.0).acos();
    let delta = theta_dot - theta_swap;
    let theta_corr = theta_swap + omega * delta;
    PhaseCorrection { cos_corr: theta_corr.cos(), theta_dot, theta_swap, delta, theta_corr }
}

/// Binary entropy in bits with `0·log 0 = 0`.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(-1e-12..=1.0 + 1e-12).contains(&p) || p.is_nan() {
        return Err(QarimaError::InvalidInput(format!("entropy argument {p} outside [0, 1]")));
    }
    let p = p.clamp(0.0, 1.0);
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    Ok((term(p) + term(1.0 - p)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn prep_examples() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let p = prep_swaptest(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        close(p.phi[0], h, 1e-12);
        close(p.phi[1], -h, 1e-12);
        assert_eq!(p.psi.len(), 4);
        close(p.psi[0], h, 1e-12);
        close(p.psi[1], h, 1e-12);

        let d = prep_swaptest(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.phi, [1.0, 0.0]);
        assert_eq!(d.psi, vec![1.0, 0.0]);

        let p = prep_swaptest(&[3.0, 4.0], &[1.0, 0.0]).unwrap();
        let z = 26f64.sqrt();
        close(p.phi[0], 5.0 / z, 1e-12);
        close(p.phi[1], -1.0 / z, 1e-12);
        for (a, b) in p.psi.iter().zip([0.6, 1.0, 0.8, 0.0]) {
            close(*a, b * h, 1e-12);
        }
        assert!(prep_swaptest(&[1.0], &[1.0, 2.0]).is_err());
        assert!(prep_swaptest(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn cosine_examples() {
        let e = cosine_projection(&[0.3, -1.2, 2.0], &[0.3, -1.2, 2.0], 0, 0).unwrap();
        close(e.cosine, 1.0, 1e-9);
        let o = cosine_projection(&[1.0, 0.0], &[0.0, 1.0], 0, 0).unwrap();
        close(o.p0, 0.5, 1e-12);
        close(o.cosine, 0.0, 1e-9);
        let z = cosine_projection(&[0.0, 0.0], &[1.0, 1.0], 0, 0).unwrap();
        assert!(z.degenerate);
        assert_eq!(z.cosine, 0.0);
        let c = cosine_projection(&[1.0, 1.0], &[1.0, 0.0], 0, 0).unwrap();
        close(c.cosine, std::f64::consts::FRAC_1_SQRT_2, 1e-9);
        close(signed_swap_cosine(&[1.0, 1.0], &[-1.0, 0.0], 0, 0).unwrap(), -c.cosine, 1e-15);
    }

    #[test]
    fn scaled_dot_examples() {
        assert_eq!(scaled_dot(&[0.0, 0.0], &[5.0, 5.0], 0, 0).unwrap(), 0.0);
        // Verbatim identity with identical inputs: p0 = 0, p1 = 1, P = 2.
        close(scaled_dot(&[2.0, 0.0], &[2.0, 0.0], 0, 0).unwrap(), 4.0 * 2f64.sqrt(), 1e-12);
        assert_eq!(pswap_from_probs(1.0, 0.0, DotVariant::Verbatim), -1.0);
        close(signed_scaled_dot(&[1.0, 2.0], &[3.0, -4.0], 0, 0).unwrap(), -5.0, 1e-9);
        close(scaled_dot_with(&[1.0, 2.0], &[3.0, 4.0], DotVariant::Standard, 0, 0).unwrap(), 11.0, 1e-9);
    }

    #[test]
    fn phase_examples() {
        close(phase_corrected_cosine(0.3, -0.4, 0.0).cos_corr, -0.4, 1e-12);
        close(phase_corrected_cosine(0.3, -0.4, 1.0).cos_corr, 0.3, 1e-12);
        close(phase_corrected_cosine(2.0, -3.0, 0.0).cos_corr, -1.0, 1e-12);
        let pc = phase_corrected_cosine(1.0, 0.0, 0.5);
        close(pc.theta_corr, std::f64::consts::FRAC_PI_4, 1e-12);
        close(pc.cos_corr, std::f64::consts::FRAC_1_SQRT_2, 1e-12);
    }

    #[test]
    fn entropy_examples() {
        close(binary_entropy(0.5).unwrap(), 1.0, 1e-15);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        close(binary_entropy(0.25).unwrap(), 0.811_278_124_459_132_8, 1e-12);
        assert!(binary_entropy(1.5).is_err());
    }
}
