//! Minimal statevector simulator.
//!
//! Qubit 0 is the least-significant bit of the basis index. Shot sampling
//! draws a binomial count from a `ChaCha20Rng` seeded with `seed_from_u64`,
//! so shot-mode results are reproducible across platforms.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    num_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl QuantumState {
    /// `|0…0⟩` on `num_qubits` qubits.
    pub fn zero(num_qubits: usize) -> Result<Self> {
        if num_qubits == 0 || num_qubits > 26 {
            return invalid(format!("unsupported qubit count {num_qubits}"));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << num_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(Self { num_qubits, amplitudes })
    }

    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return invalid(format!("amplitude count {len} is not a power of two >= 2"));
        }
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOL {
            return invalid(format!("state norm {norm} is not 1"));
        }
        Ok(Self { num_qubits: len.trailing_zeros() as usize, amplitudes })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Probability that `qubit` reads 0.
    pub fn prob_zero(&self, qubit: usize) -> Result<f64> {
        self.check_qubit(qubit)?;
        let mask = 1usize << qubit;
        let p0: f64 = self
            .amplitudes
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask == 0)
            .map(|(_, a)| a.norm_sqr())
            .sum();
        Ok(p0.clamp(0.0, 1.0))
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.num_qubits {
            return invalid(format!("qubit {q} out of range for {} qubits", self.num_qubits));
        }
        Ok(())
    }

    /// Apply a gate in place.
    pub fn apply(&mut self, gate: &Gate) -> Result<()> {
        gate.validate(self.num_qubits)?;
        let amps = &mut self.amplitudes;
        match gate.kind {
            GateKind::H => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                single_qubit(amps, gate.qubits[0], |a, b| ((a + b) * s, (a - b) * s));
            }
            GateKind::X => single_qubit(amps, gate.qubits[0], |a, b| (b, a)),
            GateKind::Ry => {
                let (sn, cs) = (gate.angle / 2.0).sin_cos();
                single_qubit(amps, gate.qubits[0], |a, b| (a * cs - b * sn, a * sn + b * cs));
            }
            GateKind::Cnot => {
                let c = 1usize << gate.qubits[0];
                let t = 1usize << gate.qubits[1];
                for i in 0..amps.len() {
                    if i & c != 0 && i & t == 0 {
                        amps.swap(i, i | t);
                    }
                }
            }
            GateKind::Cswap => {
                let c = 1usize << gate.qubits[0];
                let a = 1usize << gate.qubits[1];
                let b = 1usize << gate.qubits[2];
                for i in 0..amps.len() {
                    if i & c != 0 && i & a != 0 && i & b == 0 {
                        amps.swap(i, (i & !a) | b);
                    }
                }
            }
        }
        Ok(())
    }
}

fn single_qubit<F>(amps: &mut [Complex64], q: usize, f: F)
where
    F: Fn(Complex64, Complex64) -> (Complex64, Complex64),
{
    let m = 1usize << q;
    for i in 0..amps.len() {
        if i & m == 0 {
            let (a, b) = f(amps[i], amps[i | m]);
            amps[i] = a;
            amps[i | m] = b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateKind {
    H,
    X,
    Ry,
    Cnot,
    Cswap,
}

impl GateKind {
    pub fn arity(self) -> usize {
        match self {
            GateKind::H | GateKind::X | GateKind::Ry => 1,
            GateKind::Cnot => 2,
            GateKind::Cswap => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub kind: GateKind,
    /// Rotation angle in radians; ignored except for `Ry`.
    pub angle: f64,
    /// Control first, then targets.
    pub qubits: Vec<usize>,
}

impl Gate {
    pub fn h(q: usize) -> Self {
        Self { kind: GateKind::H, angle: 0.0, qubits: vec![q] }
    }
    pub fn x(q: usize) -> Self {
        Self { kind: GateKind::X, angle: 0.0, qubits: vec![q] }
    }
    pub fn ry(q: usize, angle: f64) -> Self {
        Self { kind: GateKind::Ry, angle, qubits: vec![q] }
    }
    pub fn cnot(control: usize, target: usize) -> Self {
        Self { kind: GateKind::Cnot, angle: 0.0, qubits: vec![control, target] }
    }
    pub fn cswap(control: usize, a: usize, b: usize) -> Self {
        Self { kind: GateKind::Cswap, angle: 0.0, qubits: vec![control, a, b] }
    }

    fn validate(&self, num_qubits: usize) -> Result<()> {
        if self.qubits.len() != self.kind.arity() {
            return invalid(format!("{:?} expects {} qubits", self.kind, self.kind.arity()));
        }
        for (i, &q) in self.qubits.iter().enumerate() {
            if q >= num_qubits {
                return invalid(format!("qubit {q} out of range for {num_qubits} qubits"));
            }
            if self.qubits[..i].contains(&q) {
                return invalid(format!("repeated qubit {q} in {:?}", self.kind));
            }
        }
        if self.kind == GateKind::Ry && !self.angle.is_finite() {
            return invalid("non-finite rotation angle");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementResult {
    pub p0: f64,
    pub p1: f64,
    /// 0 means analytic.
    pub shots: u64,
    pub seed: u64,
}

/// Load real `values` into `targets`, which must currently be `|0…0⟩`.
/// `targets[0]` is the least-significant bit of the value index.
pub fn init_amplitudes(values: &[f64], targets: &[usize], state: &QuantumState) -> Result<QuantumState> {
    let mut out = state.clone();
    init_amplitudes_mut(values, targets, &mut out)?;
    Ok(out)
}

pub fn init_amplitudes_mut(values: &[f64], targets: &[usize], state: &mut QuantumState) -> Result<()> {
    if values.len() != 1usize << targets.len() {
        return invalid(format!(
            "{} values cannot fill {} qubits",
            values.len(),
            targets.len()
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return invalid("non-finite amplitude");
    }
    let norm: f64 = values.iter().map(|v| v * v).sum();
    if (norm - 1.0).abs() > NORM_TOL {
        return invalid(format!("amplitude vector has squared norm {norm}, expected 1"));
    }
    let mut mask = 0usize;
    for (i, &q) in targets.iter().enumerate() {
        state.check_qubit(q)?;
        if targets[..i].contains(&q) {
            return invalid(format!("repeated target qubit {q}"));
        }
        mask |= 1 << q;
    }
    let amps = &mut state.amplitudes;
    if amps.iter().enumerate().any(|(i, a)| i & mask != 0 && a.norm_sqr() > 1e-24) {
        return invalid("target qubits are not in |0...0>");
    }
    for base in 0..amps.len() {
        if base & mask != 0 {
            continue;
        }
        let a0 = amps[base];
        if a0.norm_sqr() == 0.0 {
            continue;
        }
        for (j, &v) in values.iter().enumerate() {
            let mut idx = base;
            for (bit, &q) in targets.iter().enumerate() {
                if j >> bit & 1 == 1 {
                    idx |= 1 << q;
                }
            }
            amps[idx] = a0 * v;
        }
    }
    Ok(())
}

pub fn apply_gate(state: &QuantumState, gate: &Gate) -> Result<QuantumState> {
    let mut out = state.clone();
    out.apply(gate)?;
    Ok(out)
}

/// Measure `qubit` in the Z basis. `shots == 0` returns exact marginals.
pub fn measure_qubit(state: &QuantumState, qubit: usize, shots: u64, seed: u64) -> Result<MeasurementResult> {
    let exact = state.prob_zero(qubit)?;
    let p0 = sample_p0(exact, shots, seed)?;
    Ok(MeasurementResult { p0, p1: 1.0 - p0, shots, seed })
}

/// Empirical frequency of outcome 0 given its exact probability.
pub fn sample_p0(exact_p0: f64, shots: u64, seed: u64) -> Result<f64> {
    if shots == 0 {
        return Ok(exact_p0);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let bin = Binomial::new(shots, exact_p0.clamp(0.0, 1.0))
        .map_err(|e| crate::error::QarimaError::Numerical(e.to_string()))?;
    Ok(bin.sample(&mut rng) as f64 / shots as f64)
}

pub fn expectation_z(state: &QuantumState, qubit: usize) -> Result<f64> {
    let p0 = state.prob_zero(qubit)?;
    Ok((2.0 * p0 - 1.0).clamp(-1.0, 1.0))
}

/// ⟨X⟩ on one qubit, i.e. 2·Re Σ conj(a_i0)·a_i1.
pub fn expectation_x(state: &QuantumState, qubit: usize) -> Result<f64> {
    state.check_qubit(qubit)?;
    let m = 1usize << qubit;
    let amps = state.amplitudes();
    let mut acc = 0.0;
    for i in 0..amps.len() {
        if i & m == 0 {
            acc += (amps[i].conj() * amps[i | m]).re;
        }
    }
    Ok((2.0 * acc).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn init_basic() {
        let s = QuantumState::zero(1).unwrap();
        let s1 = init_amplitudes(&[1.0, 0.0], &[0], &s).unwrap();
        assert_eq!(s1, s);
        let s2 = init_amplitudes(&[0.6, 0.8], &[0], &s).unwrap();
        assert!((measure_qubit(&s2, 0, 0, 0).unwrap().p0 - 0.36).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s3 = init_amplitudes(&[h, h], &[0], &s).unwrap();
        assert!((s3.prob_zero(0).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn init_errors() {
        let s = QuantumState::zero(2).unwrap();
        assert!(init_amplitudes(&[1.0, 1.0], &[0], &s).is_err());
        assert!(init_amplitudes(&[1.0, 0.0, 0.0], &[0], &s).is_err());
        let busy = apply_gate(&s, &Gate::x(0)).unwrap();
        assert!(init_amplitudes(&[0.0, 1.0], &[0], &busy).is_err());
        assert!(init_amplitudes(&[0.0, 1.0], &[1], &busy).is_ok());
    }

    #[test]
    fn gates() {
        let s = QuantumState::zero(1).unwrap();
        let r = apply_gate(&s, &Gate::ry(0, PI)).unwrap();
        assert!((r.amplitudes()[1].re - 1.0).abs() < 1e-12);
        let e = apply_gate(&s, &Gate::ry(0, PI / 2.0)).unwrap();
        assert!(expectation_z(&e, 0).unwrap().abs() < 1e-12);
        assert!((expectation_x(&e, 0).unwrap() - 1.0).abs() < 1e-12);
        let one = apply_gate(&s, &Gate::x(0)).unwrap();
        assert_eq!(expectation_z(&one, 0).unwrap(), -1.0);
        assert_eq!(expectation_z(&s, 0).unwrap(), 1.0);

        let s3 = init_amplitudes(&[0.0, 0.6, 0.0, 0.8], &[1, 2], &QuantumState::zero(3).unwrap()).unwrap();
        let sw = apply_gate(&s3, &Gate::cswap(0, 1, 2)).unwrap();
        assert_eq!(sw, s3);
        let hh = apply_gate(&apply_gate(&s3, &Gate::h(1)).unwrap(), &Gate::h(1)).unwrap();
        for (a, b) in hh.amplitudes().iter().zip(s3.amplitudes()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn bad_gates() {
        let mut s = QuantumState::zero(2).unwrap();
        assert!(s.apply(&Gate::h(2)).is_err());
        assert!(s.apply(&Gate::cnot(1, 1)).is_err());
        assert!(s.apply(&Gate { kind: GateKind::H, angle: 0.0, qubits: vec![0, 1] }).is_err());
    }

    #[test]
    fn shots() {
        let s = apply_gate(&QuantumState::zero(1).unwrap(), &Gate::h(0)).unwrap();
        let m = measure_qubit(&s, 0, 4096, 7).unwrap();
        assert!((m.p0 - 0.5).abs() < 0.03);
        assert!((m.p0 + m.p1 - 1.0).abs() < 1e-12);
        assert_eq!(m, measure_qubit(&s, 0, 4096, 7).unwrap());
        assert!((measure_qubit(&s, 0, 0, 1).unwrap().p0 - 0.5).abs() < 1e-15);
    }
}
