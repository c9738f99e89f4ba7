//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary so the lines always print.

use std::f64::consts::PI;
use std::fs;
use std::process::Command;
use std::time::Instant;

use odelab::cli::snake_tubes;
use odelab::flow::{self, integrate};
use odelab::geometry::tube_cover_check;
use odelab::hypotheses::*;
use odelab::kernels::{r_max, KernelKind, KernelSpec};
use odelab::region::BoxRegion;
use odelab::smoothness::*;
use odelab::statmodel::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn class(beta: f64, d: usize) -> SmoothnessClass {
    SmoothnessClass::new(beta, vec![1.0; strict_floor(beta) + 1], 1.0, d, d).unwrap()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

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

fn periodic_coincidence() -> Check {
    const FLOW_TOL: f64 = 1e-9;
    // Separation and claim are the same closed form evaluated along two routes.
    const SEP_REL: f64 = 1e-9;
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for beta in [1.5, 2.5] {
        let p = stubble_det_pair(beta, 1, &class(beta, 1), 0.05, &[0.5]).map_err(|e| e.to_string())?;
        for _ in 0..50 {
            let x = [rng.random::<f64>() * 3.0 - 1.0];
            for i in -5..=5 {
                worst = worst.max(p.flow_gap(&x, i as f64 * 0.05));
            }
        }
        let sep = p.pair.separation_at_x0();
        let claim = p.c_beta * p.l * 1f64.powf(beta + 1.0) * 0.05f64.powf(beta);
        ensure(sep >= claim * (1.0 - SEP_REL), || format!("beta={beta}: separation {sep} < claim {claim}"))?;
    }
    ensure(worst <= FLOW_TOL, || format!("flow gap {worst} > {FLOW_TOL}"))?;
    Ok(format!("max flow gap {worst:.2e}"))
}

fn snake_identical_trajectories() -> Check {
    const TRAJ_TOL: f64 = 1e-8;
    let p = snake_det_pair(2.0, 2, &class(2.0, 2), 0.1, &[0.5, 0.5]).map_err(|e| e.to_string())?;
    ensure(p.m == 9, || format!("m = {}", p.m))?;
    let mut worst = 0.0f64;
    for (x, t) in p.initial_conditions.iter().zip(&p.times) {
        let traj = integrate(&p.pair.f1, x, *t, 1e-10).map_err(|e| e.to_string())?;
        let mut times: Vec<f64> = traj.nodes.iter().map(|n| n.t).collect();
        times.extend((0..=1000).map(|i| t * i as f64 / 1000.0));
        for s in times {
            let u = flow::flow_at(&traj, s).map_err(|e| e.to_string())?;
            let v = p.pair.f0.closed_form(x, s).ok_or("null flow has no closed form")?;
            worst = worst.max(u.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
        }
    }
    ensure(worst <= TRAJ_TOL, || format!("trajectory gap {worst} > {TRAJ_TOL}"))?;
    let dom = BoxRegion::unit_cube(2);
    let full = tube_cover_check(&dom, &snake_tubes(&p, 0.1).map_err(|e| e.to_string())?, 0.1, 10_000);
    let half = tube_cover_check(&dom, &snake_tubes(&p, 0.05).map_err(|e| e.to_string())?, 0.05, 10_000);
    ensure(full.pass, || format!("cover fails at delta: worst radius {}", full.worst_radius))?;
    ensure(!half.pass, || "cover passes at delta/2".into())?;
    Ok(format!("m = 9, max gap {worst:.2e}, {} uncovered at delta/2", half.uncovered))
}

fn spiral() -> Check {
    const LIP_SLACK: f64 = 1e-9;
    const SUP_TOL: f64 = 1e-9;
    let s = spiral_build(4).map_err(|e| e.to_string())?;
    let t = 1.0 + (2.0 + 3.0 * PI) * 4.0;
    ensure(s.total_time == t, || format!("T = {} != {t}", s.total_time))?;
    let rep = spiral_verify(&s, 1e-10).map_err(|e| e.to_string())?;
    let worst_hit = rep.hits.iter().map(|h| h.error).fold(0.0, f64::max);
    ensure(rep.hits.len() == 5, || format!("{} hits", rep.hits.len()))?;
    ensure(worst_hit <= 1e-6 * t, || format!("hit error {worst_hit}"))?;
    let lip_bound = (1.0 + 20.0 * 0.0625f64).sqrt() + LIP_SLACK;
    ensure(rep.lipschitz_measured <= lip_bound, || format!("Lipschitz {} > {lip_bound}", rep.lipschitz_measured))?;
    let sup = (1.0 + 4.0 * 0.0625f64).sqrt();
    ensure((rep.sup_norm_measured - sup).abs() <= SUP_TOL, || format!("sup {} vs {sup}", rep.sup_norm_measured))?;
    Ok(format!("max hit error {worst_hit:.2e}, Lipschitz {:.4}", rep.lipschitz_measured))
}

fn envelope_and_kl(inst: &MasterInstance, label: &str) -> Result<String, String> {
    const KL_BOUND: f64 = 0.5 + 1e-3;
    let (lo, hi) = (inst.family.rho_minus, inst.family.rho_plus);
    for i in 0..20 {
        let r = lo * (hi / lo).powf(i as f64 / 20.0);
        let pc = inst.psi_chi_measure(r, 64).map_err(|e| e.to_string())?;
        ensure(pc.product() <= pc.envelope, || format!("{label}: psi^2 chi = {} > {} at r = {r}", pc.product(), pc.envelope))?;
    }
    let rn = inst.radius(RadiusVariant::Pointwise).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for z in inst.z_candidates(8) {
        worst = worst.max(scheme_kl(&inst.family.null(), &inst.family.alternative(&z, rn), &inst.scheme).map_err(|e| e.to_string())?);
    }
    ensure(worst <= KL_BOUND, || format!("{label}: KL {worst} at r_n = {rn}"))?;
    Ok(format!("{label} KL {worst:.3e} at r_n {rn:.4}"))
}

fn master_envelope() -> Check {
    let cls = class(2.0, 2);
    let st = stubble_master(
        build_stubble_scheme(19, 3, 0.1, NoiseLaw::isotropic(2, 1e-4).unwrap()).map_err(|e| e.to_string())?,
        stubble_prob_family(2.0, 2, &cls).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    ensure(st.scheme.m() == 400 && st.scheme.n_max() == 3 && (st.scheme.t_max() - 0.3).abs() < 1e-12, || "stubble scheme shape".into())?;
    let a = envelope_and_kl(&st, "stubble")?;
    let fam = snake_prob_family(2.0, 2, &cls).map_err(|e| e.to_string())?;
    let sch = build_snake_scheme(0.1, fam.drift, 0.05, NoiseLaw::isotropic(2, 1e-6).unwrap()).map_err(|e| e.to_string())?;
    let sn = snake_master(sch, fam).map_err(|e| e.to_string())?;
    let b = envelope_and_kl(&sn, "snake")?;
    Ok(format!("{a}; {b}"))
}

fn lecam_teeth() -> Check {
    const EXACT_TOL: f64 = 1e-5;
    let sch = ObservationScheme::new(SchemeKind::Stubble, vec![vec![0.0]], vec![vec![1.0]], NoiseLaw::isotropic(1, 1.0).unwrap())
        .map_err(|e| e.to_string())?;
    let f0 = flow::ModelFunction::zero(1);
    let f1 = flow::ModelFunction::constant(vec![1.0], "unit-shift");
    let kl = scheme_kl(&f0, &f1, &sch).map_err(|e| e.to_string())?;
    ensure((kl - 0.5).abs() < 1e-12, || format!("KL {kl}"))?;
    let lc = lecam_two_point(kl);
    ensure((lc.gaussian_error - 0.30854).abs() <= EXACT_TOL, || format!("exact error {}", lc.gaussian_error))?;
    let mc = monte_carlo_two_point(&f0, &f1, &sch, 100_000, 2024).map_err(|e| e.to_string())?;
    ensure(mc.within(3.0), || format!("MC {} vs {} (SE {})", mc.error, mc.exact, mc.std_error))?;
    ensure(lc.certificate == 0.25 && mc.error >= lc.certificate - 3.0 * mc.std_error, || "certificate violated".into())?;
    Ok(format!("exact {:.6}, MC {:.5} +- {:.5}", lc.gaussian_error, mc.error, mc.std_error))
}

fn noise_constant() -> Check {
    const EQ_TOL: f64 = 1e-12;
    let a = NoiseLaw::diagonal(&[1.0, 4.0]).map_err(|e| e.to_string())?;
    let c = a.c_noise();
    ensure(c == 0.5, || format!("C_noise {c}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let v = [rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0];
        let kl = gaussian_kl(&v, &[0.0, 0.0], &a).map_err(|e| e.to_string())?;
        let bound = c * (v[0] * v[0] + v[1] * v[1]);
        ensure(kl <= bound * (1.0 + EQ_TOL), || format!("KL {kl} > {bound}"))?;
        let e = [v[0], 0.0];
        let kl_e = gaussian_kl(&e, &[0.0, 0.0], &a).map_err(|e| e.to_string())?;
        let b_e = c * v[0] * v[0];
        ensure((kl_e - b_e).abs() <= EQ_TOL * b_e.max(1e-300), || format!("eigen direction {kl_e} vs {b_e}"))?;
    }
    Ok("20 shifts bounded, equality along e_1".into())
}

fn cover_constants() -> Check {
    let mut out = Vec::new();
    for (d, k) in [(1usize, 399usize), (2, 19)] {
        let sch = build_stubble_scheme(k, 3, 0.1, NoiseLaw::isotropic(d, 1.0).unwrap()).map_err(|e| e.to_string())?;
        let c = check_cover(&sch, 4f64.powi(d as i32));
        ensure(c.pass, || format!("d={d}: C_cvr {} > {}", c.smallest, c.declared))?;
        let t = check_cover_time(&sch, 3.0);
        ensure(t.pass, || format!("d={d}: C_cvrtm {} > 3", t.smallest))?;
        out.push(format!("d={d} C_cvr {:.3} C_cvrtm {:.3}", c.smallest, t.smallest));
    }
    Ok(out.join(", "))
}

fn rate_algebra() -> Check {
    const REL: f64 = 1e-12;
    let mut worst = 0.0f64;
    let mut count = 0;
    for n in [1e3, 1e5, 1e7] {
        for (beta, d) in [(1.0, 1usize), (1.5, 2), (2.0, 3), (3.0, 2)] {
            let dt = balancing_delta(n, beta, d);
            let noise = (n * dt * dt).powf(-2.0 * beta / (2.0 * beta + d as f64));
            let step = dt.powf(2.0 * beta);
            let spec = RateSpec { beta, d, n: Some(n), ..Default::default() };
            let only = rate_eval(&spec, RateId::StubbleOnlyn).map_err(|e| e.to_string())?;
            let nice = rate_eval(&spec, RateId::SnakeCombinedNice).map_err(|e| e.to_string())?;
            worst = worst.max((noise - step).abs() / step).max((only - nice).abs() / only);
            count += 1;
        }
    }
    ensure(count == 12 && worst <= REL, || format!("relative mismatch {worst}"))?;
    Ok(format!("12 points, max relative mismatch {worst:.1e}"))
}

fn faa_di_bruno_oracles() -> Check {
    const REL: f64 = 1e-5;
    let exp = |x: f64| x.exp();
    let fs: Vec<Deriv> = vec![&exp, &exp, &exp, &exp, &exp];
    let g0 = |x: f64| x.sin();
    let g1 = |x: f64| x.cos();
    let g2 = |x: f64| -x.sin();
    let g3 = |x: f64| -x.cos();
    let gs: Vec<Deriv> = vec![&g0, &g1, &g2, &g3, &g0];
    let comp = |x: f64| x.sin().exp();
    let mut worst = 0.0f64;
    for &x in &[-1.3, -0.4, 0.7, 1.9] {
        for k in 1..=4 {
            let v = faa_di_bruno(&fs, &gs, k, x).map_err(|e| e.to_string())?;
            let fd = richardson(&comp, x, k, 0.05);
            worst = worst.max((v - fd).abs() / v.abs());
        }
    }
    for beta in [1.5, 2.5] {
        let p = stubble_det_pair(beta, 1, &class(beta, 1), 0.05, &[0.5]).map_err(|e| e.to_string())?;
        let cr = p.remainder;
        let (l, r, z) = (cr.params.l, cr.params.r, cr.params.z);
        let dev = |y: f64| 2.0 / 3.0 * l * r.powf(beta) * periodic_kernel_derivative((cr.g_inv(y) - z) / r, 1);
        // Points away from the symmetric center, where some orders pass through zero.
        for &u in &[0.2, 0.35, 0.43, 0.61, 0.7, 0.8] {
            let y = cr.g(z + u * r);
            for k in 1..=4 {
                let exact = cr.field_derivative(y, k).map_err(|e| e.to_string())?;
                let fd = richardson(&dev, y, k, 0.02 * r);
                worst = worst.max((exact - fd).abs() / exact.abs());
            }
        }
    }
    ensure(worst <= REL, || format!("relative FD mismatch {worst}"))?;
    let bell = [1usize, 1, 2, 5, 15, 52, 203];
    for k in 1..=6 {
        let n = enumerate_partitions(k).map_err(|e| e.to_string())?.len();
        ensure(n == bell[k], || format!("{n} partitions of {k}"))?;
    }
    Ok(format!("max relative mismatch {worst:.1e}, Bell numbers to 6"))
}

fn smoothness_certification() -> Check {
    let mut n = 0;
    let fail = |name: &str, rep: &MembershipReport| format!("{name} fails: min margin {}", rep.min_margin());
    for beta in [1.5, 2.0, 2.5] {
        let cls = class(beta, 1);
        let p = stubble_det_pair(beta, 1, &cls, 0.05, &[0.5]).map_err(|e| e.to_string())?;
        let (a, b) = p.pair.certify();
        ensure(a.pass, || fail(&format!("stubble-det f0 beta={beta}"), &a))?;
        ensure(b.pass, || fail(&format!("stubble-det f1 beta={beta}"), &b))?;
        n += 2;
    }
    let cls2 = class(2.0, 2);
    let p = snake_det_pair(2.0, 2, &cls2, 0.1, &[0.5, 0.5]).map_err(|e| e.to_string())?;
    let (a, b) = p.pair.certify();
    ensure(a.pass && b.pass, || fail("snake-det", if a.pass { &b } else { &a }))?;
    n += 2;
    let z = [0.5, 0.5];
    for fam in [stubble_prob_family(2.0, 2, &cls2), snake_prob_family(2.0, 2, &cls2)] {
        let fam = fam.map_err(|e| e.to_string())?;
        for r in [fam.rho_plus, 0.5 * fam.rho_plus] {
            let rep = certify_membership(&fam.alternative(&z, r), &cls2, &fam.region(&z, r));
            ensure(rep.pass, || fail(&format!("{:?} r={r}", fam.kind), &rep))?;
            n += 1;
        }
    }
    let s = spiral_build(4).map_err(|e| e.to_string())?;
    let lip = SmoothnessClass::new(1.0, vec![s.sup_norm_claim()], s.lipschitz_claim(), 2, 2).map_err(|e| e.to_string())?;
    let rep = certify_membership(&s.field(), &lip, &BoxRegion::new(vec![-3.0, -4.0], vec![4.0, 3.0]).unwrap());
    ensure(rep.pass, || fail("spiral", &rep))?;
    n += 1;
    // Counterexample: the bump scaled to four times its certified radius.
    let cls1 = class(2.0, 1);
    let k = KernelSpec::calibrated(2.0, KernelKind::Bump, 1).map_err(|e| e.to_string())?;
    let rm = r_max(2.0, &cls1.l, cls1.l_beta, &k, 0.0).map_err(|e| e.to_string())?;
    let r = 4.0 * rm;
    let f = flow::ModelFunction::new(1, "bump-4rmax", move |x, out| out[0] = r * r * k.eval_scaled(x, &[0.0], r));
    let bad = certify_membership(&f, &cls1, &BoxRegion::around(&[0.0], 1.05 * r));
    ensure(!bad.pass, || "4 r_max counterexample passes".into())?;
    Ok(format!("{n} constructions certified, 4 r_max fails (margin {:.3})", bad.min_margin()))
}

fn cli_determinism() -> Check {
    let bin = env!("CARGO_BIN_EXE_odelab");
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = root.path().join("exp.json");
    fs::write(&spec, r#"{"experiment": {"trials": 2000}}"#).map_err(|e| e.to_string())?;
    let spec = spec.to_string_lossy().into_owned();
    let runs: Vec<Vec<&str>> = vec![
        vec!["verify", "--kind", "stubble-det", "--suite", "coincidence"],
        vec!["verify", "--kind", "snake-det", "--suite", "coincidence"],
        vec!["verify", "--kind", "snake-det", "--suite", "tube-cover"],
        vec!["verify", "--kind", "spiral", "--suite", "spiral"],
        vec!["verify", "--kind", "stubble-det", "--suite", "smoothness"],
        vec!["verify", "--kind", "snake-prob", "--suite", "smoothness"],
        vec!["verify", "--kind", "snake-prob", "--suite", "symmetry"],
        vec!["verify", "--kind", "snake-prob", "--suite", "gronwall"],
        vec!["verify", "--kind", "stubble-prob", "--suite", "assumptions"],
        vec!["verify", "--kind", "snake-prob", "--suite", "assumptions"],
        vec!["construct", "--kind", "spiral"],
        vec!["construct", "--kind", "snake-det"],
        vec!["rates"],
        vec!["experiment", "--config", &spec, "--kind", "stubble-det"],
        vec!["experiment", "--config", &spec, "--kind", "stubble-prob"],
    ];
    for (i, args) in runs.iter().enumerate() {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let dir = root.path().join(format!("run{i}-{rep}"));
            let o = Command::new(bin).args(args).args(["--seed", "7", "--out"]).arg(&dir).output().map_err(|e| e.to_string())?;
            ensure(o.status.code() == Some(0), || format!("{args:?} exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)))?;
            let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
                .map_err(|e| e.to_string())?
                .map(|e| {
                    let e = e.unwrap();
                    (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
                })
                .collect();
            files.sort();
            outputs.push(files);
        }
        ensure(!outputs[0].is_empty() && outputs[0] == outputs[1], || format!("{args:?} differs between runs"))?;
    }
    Ok(format!("{} command lines byte-identical across runs", runs.len()))
}

fn main() {
    let criteria: [(&str, Option<f64>, fn() -> Check); 11] = [
        ("periodic coincidence", Some(5.0), periodic_coincidence),
        ("snake identical trajectories", Some(30.0), snake_identical_trajectories),
        ("spiral schedule", Some(20.0), spiral),
        ("master envelope", Some(60.0), master_envelope),
        ("Le Cam teeth", Some(30.0), lecam_teeth),
        ("noise constant", None, noise_constant),
        ("cover constants", None, cover_constants),
        ("rate algebra", None, rate_algebra),
        ("Faa di Bruno", None, faa_di_bruno_oracles),
        ("smoothness certification", Some(60.0), smoothness_certification),
        ("CLI determinism", None, cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let res = f();
        let secs = start.elapsed().as_secs_f64();
        let res = match (res, budget) {
            (Ok(_), Some(b)) if secs >= *b => Err(format!("took {secs:.2} s, budget {b} s")),
            (r, _) => r,
        };
        match res {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} ({secs:.2} s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {why} ({secs:.2} s)", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 11 criteria passed");
}
