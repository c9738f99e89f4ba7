use odelab::flow::{flow_at, integrate};
use odelab::geometry::halton_points;
use odelab::hypotheses::*;
use odelab::region::BoxRegion;
use odelab::smoothness::{certify_membership, strict_floor, SmoothnessClass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn class(beta: f64, d: usize) -> SmoothnessClass {
    SmoothnessClass::new(beta, vec![1.0; strict_floor(beta) + 1], 1.0, d, d).unwrap()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn stubble_det_coincides_on_the_lattice() {
    let p = stubble_det_pair(2.0, 1, &class(2.0, 1), 0.05, &[0.5]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let x = [rng.random::<f64>() * 3.0 - 1.0];
        assert!(p.flow_gap(&x, 0.0) <= 1e-15);
        for i in -5..=5 {
            assert!(p.flow_gap(&x, i as f64 * 0.05) <= 1e-9);
        }
    }
    assert!(p.pair.separation_at_x0() >= p.pair.claimed_separation * (1.0 - 1e-9));
    assert!((p.c_beta - (2.0f64 / 3.0).powi(3) * 2.0 * 0.7984297518335995).abs() < 1e-12);
}

#[test]
fn stubble_det_rejects_large_step() {
    assert!(matches!(
        stubble_det_pair(2.0, 1, &class(2.0, 1), 1.6, &[0.5]),
        Err(odelab::error::Error::DeltaTooLarge { .. })
    ));
}

#[test]
fn falsifier_examples() {
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let p = stubble_det_pair(2.0, 1, &class(2.0, 1), 0.05, &[0.5]).unwrap();
    assert!(irrational_timestep_falsifier(&p, 0.05, 0.05) <= 1e-9);
    assert!(irrational_timestep_falsifier(&p, 0.05, 0.1) <= 1e-9);
    assert!(irrational_timestep_falsifier(&p, 0.05, golden * 0.05) > 0.0);
    // Default falsifier construction: beta = 1.5, L_0 = 1, dt = 1.
    let q = stubble_det_pair(1.5, 1, &class(1.5, 1), 1.0, &[0.5]).unwrap();
    assert!(irrational_timestep_falsifier(&q, 1.0, golden) > 1e-4);
}

#[test]
fn stubble_det_lp_separation_regression() {
    // Measured once with 2e5-node midpoint quadrature; to first order c_{beta,1} = (2/3)^(beta+1) 2/e.
    let frozen = [(1.5, 1.0, 0.266997605), (1.5, 2.0, 0.328442965), (2.5, 1.0, 0.177998403), (2.5, 2.0, 0.218961977)];
    for (beta, pw, c) in frozen {
        let p = stubble_det_pair(beta, 1, &class(beta, 1), 0.05, &[0.5]).unwrap();
        let sep = p.lp_separation(pw, 200_000);
        assert!(sep >= c * (1.0 - 1e-6) * p.l * 0.05f64.powf(beta), "beta={beta} p={pw}");
        if pw == 1.0 {
            let first_order = (2.0f64 / 3.0).powf(beta + 1.0) * 2.0 * (-1.0f64).exp();
            assert!((c - first_order).abs() < 1e-3 * first_order);
        }
    }
}

#[test]
fn stubble_family_support_and_additivity() {
    let fam = stubble_prob_family(2.0, 2, &class(2.0, 2)).unwrap();
    let z = [0.4, 0.5];
    let r = 0.2;
    let f = fam.alternative(&z, r);
    let f0 = fam.null();
    for x in halton_points(&BoxRegion::new(vec![-0.5, -0.5], vec![1.5, 1.5]).unwrap(), 10_000) {
        if dist(&x, &z) >= r {
            assert_eq!(f.eval(&x), f0.eval(&x));
        }
    }
    let centers = vec![vec![0.2, 0.2], vec![0.6, 0.2], vec![0.2, 0.7]];
    let comb = fam.combined(&centers, r);
    for x in halton_points(&BoxRegion::unit_cube(2), 2000) {
        let mut want = f0.eval(&x);
        for c in &centers {
            let fz = fam.alternative(c, r).eval(&x);
            for i in 0..2 {
                want[i] += fz[i] - f0.eval(&x)[i];
            }
        }
        assert_eq!(comb.eval(&x), want);
    }
}

#[test]
fn stubble_family_flow_facts() {
    let fam = stubble_prob_family(2.0, 2, &class(2.0, 2)).unwrap();
    let z = [0.5, 0.5];
    let r = 0.2;
    let f = fam.alternative(&z, r);
    // Outside the ball the field vanishes, so the state never moves.
    let x = [0.5, 0.75];
    let traj = integrate(&f, &x, 1.0, 1e-10).unwrap();
    assert_eq!(flow_at(&traj, 1.0).unwrap(), x.to_vec());
    let t_max = 0.3;
    let mut worst = 0.0f64;
    for x0 in [[0.5, 0.5], [0.45, 0.55], [0.6, 0.45]] {
        let traj = integrate(&f, &x0, t_max, 1e-10).unwrap();
        for i in 0..=30 {
            worst = worst.max(dist(&flow_at(&traj, t_max * i as f64 / 30.0).unwrap(), &x0));
        }
    }
    assert!(worst <= fam.psi_bound(r, t_max));
}

#[test]
fn snake_family_returns_to_null() {
    let fam = snake_prob_family(2.0, 2, &class(2.0, 2)).unwrap();
    let z = [0.5, 0.5];
    let r = 0.25;
    let f = fam.alternative(&z, r);
    for k in -3..=3 {
        let x = [-0.5, 0.5 + 0.25 * k as f64 * r];
        let horizon = 2.0;
        let traj = integrate(&f, &x, horizon, 1e-11).unwrap();
        let end = flow_at(&traj, horizon).unwrap();
        assert!((end[1] - x[1]).abs() <= 1e-8, "k={k}");
        let mut inside = 0.0f64;
        for i in 0..=400 {
            let t = horizon * i as f64 / 400.0;
            inside = inside.max((flow_at(&traj, t).unwrap()[1] - x[1]).abs());
        }
        assert!(inside <= fam.psi_bound(r, horizon));
    }
    assert!(matches!(snake_prob_family(2.0, 1, &class(2.0, 1)), Err(odelab::error::Error::DimensionTooSmall(1))));
}

#[test]
fn snake_det_grid_and_coincidence() {
    let p = snake_det_pair(2.0, 2, &class(2.0, 2), 0.1, &[0.5, 0.5]).unwrap();
    assert_eq!(p.m, 9);
    assert_eq!(p.initial_conditions.len(), 9);
    let amp = p.pair.claimed_separation;
    assert!((p.pair.separation_at_x0() - amp).abs() <= 1e-15);
    for (x, t) in p.initial_conditions.iter().zip(&p.times) {
        let traj = integrate(&p.pair.f1, x, *t, 1e-10).unwrap();
        for i in 0..=100 {
            let s = t * i as f64 / 100.0;
            let u = flow_at(&traj, s).unwrap();
            assert!(dist(&u, &p.pair.f0.closed_form(x, s).unwrap()) <= 1e-8);
        }
    }
    assert!(snake_det_pair(2.0, 2, &class(2.0, 2), 0.9, &[0.5, 0.5]).is_err());
}

#[test]
fn spiral_schedule() {
    let s = spiral_build(1).unwrap();
    assert!((s.total_time - 12.42477796076938).abs() < 1e-12);
    assert!((s.schedule[1] - 11.42477796076938).abs() < 1e-12);
    let s4 = spiral_build(4).unwrap();
    assert_eq!(s4.total_time, 1.0 + (2.0 + 3.0 * std::f64::consts::PI) * 4.0);
    assert_eq!(s4.schedule[0], 0.0);
    assert!(s4.schedule.windows(2).all(|w| w[1] > w[0]));
    assert!(spiral_build(0).is_err() && spiral_build(65).is_err());
    let rep = spiral_verify(&s4, 1e-10).unwrap();
    assert!(rep.pass);
    assert_eq!(rep.hits[0].error, 0.0);
}

#[test]
fn constructions_certify() {
    let cls = class(2.0, 2);
    let fam = snake_prob_family(2.0, 2, &cls).unwrap();
    let z = [0.5, 0.5];
    assert!(certify_membership(&fam.alternative(&z, 0.3), &cls, &fam.region(&z, 0.3)).pass);
    let p = snake_det_pair(2.0, 2, &cls, 0.1, &[0.5, 0.5]).unwrap();
    let (a, b) = p.pair.certify();
    assert!(a.pass && b.pass);
}
