use proptest::prelude::*;
use qarima::eval::{dm_test, metrics, DmOptions, LossKind};
use qarima::qsim::{init_amplitudes, Gate, QuantumState};
use qarima::series::{difference, invert_difference};

fn gate(n: usize) -> impl Strategy<Value = Gate> {
    (0..5usize, 0..n, 0..n, 0..n, -7.0..7.0f64).prop_filter_map("distinct qubits", move |(k, a, b, c, t)| match k {
        0 => Some(Gate::h(a)),
        1 => Some(Gate::x(a)),
        2 => Some(Gate::ry(a, t)),
        3 if a != b => Some(Gate::cnot(a, b)),
        4 if a != b && b != c && a != c => Some(Gate::cswap(a, b, c)),
        _ => None,
    })
}

proptest! {
    #[test]
    fn circuits_preserve_norm(
        vals in prop::collection::vec(-5.0..5.0f64, 4),
        gates in prop::collection::vec(gate(4), 1..40),
    ) {
        prop_assume!(vals.iter().any(|v| v.abs() > 1e-6));
        let n = vals.iter().map(|v| v * v).sum::<f64>().sqrt();
        let vals: Vec<f64> = vals.iter().map(|v| v / n).collect();
        let mut st = init_amplitudes(&vals, &[0, 1], &QuantumState::zero(4).unwrap()).unwrap();
        for g in &gates {
            st.apply(g).unwrap();
        }
        prop_assert!((st.norm_sqr() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dm_is_antisymmetric(
        a in prop::collection::vec(-3.0..3.0f64, 12..60),
        shift in -1.0..1.0f64,
        h in 1usize..4,
    ) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v * 0.7 + shift + (i as f64).sin()).collect();
        let opts = DmOptions { horizon: h, harvey: true };
        for loss in [LossKind::Mse, LossKind::Mae] {
            let f = dm_test(&a, &b, loss, opts).unwrap();
            let g = dm_test(&b, &a, loss, opts).unwrap();
            prop_assert_eq!(f.dm_stat, -g.dm_stat);
            prop_assert_eq!(f.p_value, g.p_value);
        }
    }

    #[test]
    fn mape_is_scale_free(
        actual in prop::collection::vec(0.5..50.0f64, 1..40),
        noise in prop::collection::vec(-1.0..1.0f64, 40),
        k in 0.01..100.0f64,
    ) {
        let fc: Vec<f64> = actual.iter().zip(&noise).map(|(a, e)| a + e).collect();
        let m1 = metrics("a", &actual, &fc).unwrap();
        let sa: Vec<f64> = actual.iter().map(|v| v * k).collect();
        let sf: Vec<f64> = fc.iter().map(|v| v * k).collect();
        let m2 = metrics("a", &sa, &sf).unwrap();
        prop_assert!((m1.mape - m2.mape).abs() <= 1e-9 * m1.mape.max(1.0));
    }

    #[test]
    fn undifferencing_round_trips(
        y in prop::collection::vec(-100.0..100.0f64, 8..60),
        d in 0usize..3,
        k in 0usize..4,
    ) {
        let z = difference(&y, d);
        let back = invert_difference(&z[k..], &y[..k + d], d).unwrap();
        for (u, v) in back.iter().zip(&y[k + d..]) {
            prop_assert!((u - v).abs() < 1e-8 * v.abs().max(1.0));
        }
    }
}
