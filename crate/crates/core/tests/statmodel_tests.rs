use odelab::flow::ModelFunction;
use odelab::hypotheses::{stubble_det_pair, stubble_prob_family};
use odelab::smoothness::SmoothnessClass;
use odelab::statmodel::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn one_point_scheme(sigma2: f64) -> ObservationScheme {
    ObservationScheme::new(SchemeKind::Stubble, vec![vec![0.0]], vec![vec![1.0]], NoiseLaw::isotropic(1, sigma2).unwrap()).unwrap()
}

#[test]
fn gaussian_kl_examples() {
    let id = NoiseLaw::isotropic(2, 1.0).unwrap();
    assert_eq!(gaussian_kl(&[0.3, 0.1], &[0.3, 0.1], &id).unwrap(), 0.0);
    assert!((gaussian_kl(&[1.0, 0.0], &[0.0, 0.0], &id).unwrap() - 0.5).abs() < 1e-15);
    let a = NoiseLaw::diagonal(&[1.0, 4.0]).unwrap();
    let kl = gaussian_kl(&[0.0, 1.0], &[0.0, 0.0], &a).unwrap();
    assert!((kl - 0.125).abs() < 1e-15);
    assert!(kl <= a.c_noise() * 1.0);
    assert_eq!(a.c_noise(), 0.5);
    assert!(NoiseLaw::gaussian(vec![vec![1.0, 1.0], vec![1.0, 1.0]]).is_err());
}

#[test]
fn gaussian_kl_matches_sampled_log_likelihood_ratio() {
    // E_{P1} log(p1/p0) for a unit shift under identity covariance, 10^6 draws.
    let id = NoiseLaw::isotropic(2, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 1_000_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let e = id.sample(&mut rng);
        let y = [1.0 + e[0], e[1]];
        acc += 0.5 * ((y[0]).powi(2) - (y[0] - 1.0).powi(2));
    }
    let est = acc / n as f64;
    assert!((est - 0.5).abs() < 0.01, "{est}");
}

#[test]
fn cover_constant_cases() {
    let noise = NoiseLaw::isotropic(1, 1.0).unwrap();
    let same = ObservationScheme::new(SchemeKind::Stubble, vec![vec![0.5], vec![0.5]], vec![vec![1.0], vec![1.0]], noise.clone()).unwrap();
    let c = check_cover(&same, 4.0);
    assert!(!c.pass && c.smallest.is_infinite());
    assert!(check_cover(&one_point_scheme(1.0), 4.0).pass);
    let grid = build_stubble_scheme(10, 2, 0.1, NoiseLaw::isotropic(2, 1.0).unwrap()).unwrap();
    assert!(check_cover(&grid, 16.0).pass);
    assert!(check_cover_time(&grid, 3.0).pass);
    let twin = ObservationScheme::new(SchemeKind::Stubble, vec![vec![0.5]], vec![vec![0.5, 0.5, 1.0]], noise).unwrap();
    assert!(!check_cover_time(&twin, 3.0).pass);
    assert!(check_cover_time(&one_point_scheme(1.0), 3.0).pass);
}

#[test]
fn scheme_kl_cases() {
    let sch = build_stubble_scheme(4, 3, 0.05, NoiseLaw::isotropic(1, 1e-4).unwrap()).unwrap();
    let f0 = ModelFunction::zero(1);
    assert_eq!(scheme_kl(&f0, &f0, &sch).unwrap(), 0.0);
    let cls = SmoothnessClass::new(2.0, vec![1.0; 2], 1.0, 1, 1).unwrap();
    let p = stubble_det_pair(2.0, 1, &cls, 0.05, &[0.5]).unwrap();
    let obs = build_stubble_scheme(10, 8, 0.05, NoiseLaw::isotropic(1, 1e-4).unwrap()).unwrap();
    assert!(scheme_kl(&p.pair.f0, &p.pair.f1, &obs).unwrap() <= 1e-12);
    let shift = ModelFunction::constant(vec![0.01], "shift");
    let kl = scheme_kl(&f0, &shift, &sch).unwrap();
    assert!(kl > 0.0);
}

#[test]
fn stubble_kl_at_master_radius() {
    let cls = SmoothnessClass::new(2.0, vec![1.0; 2], 1.0, 2, 2).unwrap();
    let fam = stubble_prob_family(2.0, 2, &cls).unwrap();
    let sch = build_stubble_scheme(19, 3, 0.1, NoiseLaw::isotropic(2, 1e-4).unwrap()).unwrap();
    let inst = stubble_master(sch, fam).unwrap();
    let r = inst.radius(RadiusVariant::Pointwise).unwrap();
    for z in inst.z_candidates(8) {
        let kl = scheme_kl(&inst.family.null(), &inst.family.alternative(&z, r), &inst.scheme).unwrap();
        assert!(kl <= 0.5 + 1e-3, "{kl}");
    }
    let pc = inst.psi_chi_measure(r, 16).unwrap();
    assert!(pc.psi <= inst.family.psi_bound(r, inst.scheme.t_max()));
    assert!(pc.chi as f64 <= 16.0 * r * r * inst.scheme.m() as f64 * inst.scheme.n_max() as f64);
}

#[test]
fn master_radius_examples() {
    let r = master_radius(8.0, 0.5, 4.0, RadiusVariant::Pointwise, 1).unwrap();
    assert!((r - 8f64.powf(-0.25)).abs() < 1e-15);
    assert!(master_radius(16.0, 0.5, 4.0, RadiusVariant::Pointwise, 1).unwrap() < r);
    assert!(master_radius(1.0, 0.5, 4.0, RadiusVariant::Sup, 1).is_err());
    assert!(master_radius(10.0, 0.5, 4.0, RadiusVariant::Sup, 1).is_ok());
    assert!((master_radius(8.0, 0.5, 4.0, RadiusVariant::Lp, 1).unwrap() - 144f64.powf(-0.25)).abs() < 1e-15);
    assert!(choose_master_radius(8.0, 0.5, 4.0, RadiusVariant::Pointwise, 1, 0.6, 1.0).is_err());
    assert!(choose_master_radius(8.0, 0.5, 4.0, RadiusVariant::Pointwise, 1, 0.1, 0.5).is_err());
    assert!(choose_master_radius(8.0, 0.5, 4.0, RadiusVariant::Pointwise, 1, 0.1, 1.0).is_ok());
}

#[test]
fn lecam_and_fano_boundaries() {
    let a = lecam_two_point(0.0);
    assert_eq!((a.certificate, a.gaussian_error), (0.25, 0.5));
    let b = lecam_two_point(0.5);
    assert_eq!(b.certificate, 0.25);
    assert!((b.gaussian_error - 0.3085375387259869).abs() < 1e-12);
    assert_eq!(lecam_two_point(10.0).certificate, 0.0);
    assert!(fano_many_point(&[0.0, 0.0], 2).unwrap().pass);
    let m = 7;
    let t = (m as f64).ln() / 3.0;
    assert!(fano_many_point(&[t, t, t], m).unwrap().pass);
    assert!(!fano_many_point(&[(m as f64).ln()], m).unwrap().pass);
    assert!(fano_many_point(&[0.1], 1).is_err());
}

#[test]
fn monte_carlo_cases() {
    let sch = one_point_scheme(1.0);
    let f0 = ModelFunction::zero(1);
    let same = monte_carlo_two_point(&f0, &f0, &sch, 2000, 1).unwrap();
    assert_eq!(same.error, 0.5);
    let f1 = ModelFunction::constant(vec![1.0], "unit");
    let mc = monte_carlo_two_point(&f0, &f1, &sch, 20_000, 5).unwrap();
    assert!((mc.kl - 0.5).abs() < 1e-12);
    assert!(mc.within(3.0), "{mc:?}");
    assert!(mc.error >= 0.25 - 3.0 * mc.std_error);
    assert_eq!(mc, monte_carlo_two_point(&f0, &f1, &sch, 20_000, 5).unwrap());
}

#[test]
fn rate_examples() {
    let spec = RateSpec { beta: 1.0, d: 2, n: Some(1e6), ..Default::default() };
    // n^(-2 beta/(2(beta+1)+d)) = (10^6)^(-1/3).
    assert!((rate_eval(&spec, RateId::StubbleOnlyn).unwrap() - 0.01).abs() < 1e-15);
    assert!(matches!(rate_eval(&spec, RateId::StubbleNice), Err(odelab::error::Error::MissingField("delta_t"))));
    for (n, beta, d) in [(1e3, 1.0, 1), (1e5, 2.0, 2), (1e7, 2.5, 3)] {
        let dt = balancing_delta(n, beta, d);
        let a = (n * dt * dt).powf(-2.0 * beta / (2.0 * beta + d as f64));
        let b = dt.powf(2.0 * beta);
        assert!((a - b).abs() <= 1e-12 * b);
        let s = RateSpec { beta, d, n: Some(n), delta_t: Some(dt), ..Default::default() };
        let only = rate_eval(&s, RateId::StubbleOnlyn).unwrap();
        assert!((b - only).abs() <= 1e-12 * only);
        let nice = rate_eval(&s, RateId::SnakeCombinedNice).unwrap();
        assert!((nice - only).abs() <= 1e-12 * only);
    }
    assert!((expectation_reduction(0.25, 0.1, 2.0) - 0.0025).abs() < 1e-18);
    assert_eq!(expectation_reduction(0.0, 0.1, 2.0), 0.0);
    assert!(expectation_reduction(0.25, 0.1, 2.0) < expectation_reduction(0.25, 0.1, 1.0));
}
