use odelab::hypotheses::stubble_det_pair;
use odelab::kernels::kernel_supnorms;
use odelab::kernels::{KernelKind, KernelSpec};
use odelab::region::BoxRegion;
use odelab::smoothness::*;

/// Central fourth-order Richardson estimate of the k-th derivative.
fn richardson(f: &dyn Fn(f64) -> f64, x: f64, k: usize, h: f64) -> f64 {
    let central = |h: f64| -> f64 {
        let mut acc = 0.0;
        let mut c = 1.0;
        for j in 0..=k {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * c * f(x + (k as f64 / 2.0 - j as f64) * h);
            c = c * (k - j) as f64 / (j + 1) as f64;
        }
        acc / h.powi(k as i32)
    };
    let (a, b, c) = (central(h), central(h / 2.0), central(h / 4.0));
    let ab = (4.0 * b - a) / 3.0;
    let bc = (4.0 * c - b) / 3.0;
    (16.0 * bc - ab) / 15.0
}

#[test]
fn chain_remainder_derivatives_match_finite_differences() {
    for beta in [1.5, 2.5] {
        let cls = SmoothnessClass::new(beta, vec![1.0; strict_floor(beta) + 1], 1.0, 1, 1).unwrap();
        let p = stubble_det_pair(beta, 1, &cls, 0.05, &[0.5]).unwrap();
        let cr = p.remainder;
        let (l, r, z) = (cr.params.l, cr.params.r, cr.params.z);
        // f1 minus its constant part, so differences are not swamped by rounding of 2/3.
        let dev = |y: f64| 2.0 / 3.0 * l * r.powf(beta) * periodic_kernel_derivative((cr.g_inv(y) - z) / r, 1);
        // Away from the symmetric center, where some orders cross zero and relative errors are meaningless.
        for &u in &[0.2, 0.35, 0.43, 0.61, 0.7, 0.8] {
            let y = cr.g(z + u * r);
            for k in 1..=4 {
                let exact = cr.field_derivative(y, k).unwrap();
                let fd = richardson(&dev, y, k, 0.02 * r);
                assert!((exact - fd).abs() <= 1e-5 * exact.abs(), "beta={beta} u={u} k={k}: {exact} vs {fd}");
            }
        }
    }
}

#[test]
fn inverse_derivative_first_order() {
    let cr = chain_remainder_field(PeriodicBumpParams { beta: 2.0, l: 0.05, r: 0.5, z: 0.1 }, 1.0).unwrap();
    let y = 0.37;
    let h = 1e-5;
    let fd = (cr.g_inv(y + h) - cr.g_inv(y - h)) / (2.0 * h);
    assert!((cr.inverse_derivative(y, 1).unwrap() - fd).abs() < 1e-8);
}

#[test]
fn g_inverse_round_trip_and_flow_period() {
    let cr = chain_remainder_field(PeriodicBumpParams { beta: 2.0, l: 0.05, r: 0.5, z: 0.1 }, 1.0).unwrap();
    for i in 0..100 {
        let x = -1.0 + 0.031 * i as f64;
        assert!((cr.g(cr.g_inv(x)) - x).abs() < 1e-12);
        // One period of g^{-1} takes time r / ((2/3) L_0).
        assert!((cr.flow(x, 0.75) - (x + 0.5)).abs() < 1e-12);
    }
}

#[test]
fn slope_condition_enforced() {
    let bad = PeriodicBumpParams { beta: 2.0, l: 10.0, r: 0.5, z: 0.0 };
    assert!(matches!(chain_remainder_field(bad, 1.0), Err(odelab::error::Error::SlopeOutOfRange { .. })));
}

#[test]
fn partitions_of_three() {
    let ps = enumerate_partitions(3).unwrap();
    assert_eq!(ps.len(), 5);
    assert!(enumerate_partitions(9).is_err());
}

#[test]
fn periodic_slope_constants() {
    assert!((periodic_slope_sup() - 2.0 * 0.7984297518335995).abs() < 1e-12);
    assert!((periodic_slope_argmax() - (1.0 - 3f64.powf(-0.25)) / 2.0).abs() < 1e-15);
}

#[test]
fn class_validation() {
    assert!(SmoothnessClass::new(2.0, vec![1.0], 1.0, 1, 1).is_err());
    assert!(SmoothnessClass::new(0.5, vec![1.0], 1.0, 1, 1).is_err());
    assert!(SmoothnessClass::new(2.5, vec![1.0, 1.0, 1.0], 1.0, 2, 2).is_ok());
}

#[test]
fn sine_is_in_its_class_and_scaled_sine_is_not() {
    let region = BoxRegion::new(vec![0.0], vec![6.3]).unwrap();
    let f = |x: &[f64], out: &mut [f64]| out[0] = x[0].sin();
    let cls = SmoothnessClass::new(2.0, vec![1.0, 1.0], 1.0, 1, 1).unwrap();
    assert!(certify_field(&f, 1, 1, &cls, &region, &CertifyOptions::default()).pass);
    let g = |x: &[f64], out: &mut [f64]| out[0] = 1.2 * x[0].sin();
    assert!(!certify_field(&g, 1, 1, &cls, &region, &CertifyOptions::default()).pass);
}

#[test]
fn bump_supnorms_scale_with_alpha() {
    let a = kernel_supnorms(&KernelSpec::new(2.0, 1.0, KernelKind::Bump, 2).unwrap());
    let b = kernel_supnorms(&KernelSpec::new(2.0, 0.25, KernelKind::Bump, 2).unwrap());
    for (x, y) in a.iter().zip(&b) {
        assert!((0.25 * x - y).abs() <= 1e-9 * x);
    }
    assert!((a[0] - (-1f64).exp()).abs() < 1e-12);
}
