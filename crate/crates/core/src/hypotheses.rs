//! Adversarial model-function pairs and families for the stubble and snake models.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{self, IntegrateOptions, ModelFunction, PulseDriftField};
use crate::geometry::halton_points;
use crate::kernels::{self, KernelKind, KernelSpec};
use crate::region::BoxRegion;
use crate::smoothness::{
    self, chain_remainder_field, periodic_kernel, periodic_slope_argmax, periodic_slope_sup, CertifyOptions,
    ChainRemainder, MembershipReport, PeriodicBumpParams, SmoothnessClass,
};

/// Where the two flows of a pair must agree.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Coincidence {
    /// `U(f0, x, i dt) = U(f1, x, i dt)` for all `x` and integers `i`.
    TimeLattice { delta_t: f64 },
    /// `U(f0, x_j, t) = U(f1, x_j, t)` for the listed initial conditions and all `t`.
    InitialConditions { points: Vec<Vec<f64>>, times: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct HypothesisPair {
    pub f0: ModelFunction,
    pub f1: ModelFunction,
    pub x0: Vec<f64>,
    pub claimed_separation: f64,
    pub coincidence: Coincidence,
    pub class: SmoothnessClass,
    /// Box on which membership of `f1` is certified.
    pub region: BoxRegion,
}

impl HypothesisPair {
    pub fn separation_at_x0(&self) -> f64 {
        flow::dist(&self.f0.eval(&self.x0), &self.f1.eval(&self.x0))
    }

    pub fn certify(&self) -> (MembershipReport, MembershipReport) {
        (
            smoothness::certify_membership(&self.f0, &self.class, &self.region),
            smoothness::certify_membership(&self.f1, &self.class, &self.region),
        )
    }
}

/// Periodic pair of the stubble model with coinciding flows on a time lattice.
#[derive(Debug, Clone)]
pub struct StubbleDetPair {
    pub pair: HypothesisPair,
    pub remainder: ChainRemainder,
    pub l: f64,
    pub r: f64,
    pub z: f64,
    pub c_beta: f64,
    pub delta_t: f64,
}

fn stubble_det_region(x0: &[f64], z: f64, r: f64) -> BoxRegion {
    let mut lo: Vec<f64> = x0.iter().map(|v| v - r).collect();
    let mut hi: Vec<f64> = x0.iter().map(|v| v + r).collect();
    lo[0] = z - r;
    hi[0] = z + 2.0 * r;
    BoxRegion { lo, hi }
}

/// `f0 = (2/3) L_0 e_1` and `f1 = (2/3) L_0 g'(g^{-1}(x_1)) e_1` with `r = (2/3) L_0 dt`.
///
/// `L` is pushed up by the measured certification margin until that margin is within 0.5% of
/// one or the slope condition binds; the field certifies in `class` with zero slack. `z` puts
/// `x0` at the steepest point.
pub fn stubble_det_pair(
    beta: f64,
    d: usize,
    class: &SmoothnessClass,
    delta_t: f64,
    x0: &[f64],
) -> Result<StubbleDetPair> {
    if class.beta != beta || class.dim_in != d || class.dim_out != d || x0.len() != d {
        return Err(Error::InvalidParameter("class, dimension and x0 must agree".into()));
    }
    let l0 = class.l[0];
    let max_dt = 1.5 / l0;
    if !(delta_t > 0.0) || delta_t > max_dt {
        return Err(Error::DeltaTooLarge { delta: delta_t, max: max_dt });
    }
    let r = 2.0 / 3.0 * l0 * delta_t;
    let ystar = periodic_slope_argmax();
    let build = |l: f64| -> Result<ChainRemainder> {
        let z = x0[0] - r * ystar - l * r.powf(beta + 1.0) * periodic_kernel(ystar);
        chain_remainder_field(PeriodicBumpParams { beta, l, r, z }, l0)
    };
    let strict = CertifyOptions { slack: 0.0, ..CertifyOptions::default() };
    let test = |l: f64| -> Result<MembershipReport> {
        let cr = build(l)?;
        let region = stubble_det_region(x0, cr.params.z, r);
        Ok(smoothness::certify_membership_with(&cr.model(d), class, &region, &strict))
    };

    // The binding constraints scale almost linearly in L, so iterate L <- L * margin.
    let l_slope = 0.5 * (1.0 - 1e-12) / (r.powf(beta) * periodic_slope_sup());
    let mut l = l_slope;
    let mut best: Option<f64> = None;
    for _ in 0..12 {
        let rep = test(l)?;
        let margin = rep.min_margin();
        if rep.pass {
            best = Some(best.map_or(l, |b: f64| b.max(l)));
            if l >= l_slope || margin <= 1.005 {
                break;
            }
        }
        l = (l * margin * 0.999).min(l_slope);
    }
    let l = best.ok_or_else(|| Error::InvalidParameter("no admissible amplitude L found".into()))?;
    let remainder = build(l)?;
    let z = remainder.params.z;
    let c_beta = (2.0 / 3.0f64).powf(beta + 1.0) * periodic_slope_sup();
    let mut v = vec![0.0; d];
    v[0] = 2.0 / 3.0 * l0;
    let f0 = ModelFunction::constant(v, "stubble-det-null");
    let f1 = remainder.model(d);
    let pair = HypothesisPair {
        f0,
        f1,
        x0: x0.to_vec(),
        claimed_separation: c_beta * l * l0.powf(beta + 1.0) * delta_t.powf(beta),
        coincidence: Coincidence::TimeLattice { delta_t },
        class: class.clone(),
        region: stubble_det_region(x0, z, r),
    };
    Ok(StubbleDetPair { pair, remainder, l, r, z, c_beta, delta_t })
}

impl StubbleDetPair {
    fn flows(&self, x: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
        let u0 = self.pair.f0.closed_form(x, t).expect("constant field has a flow");
        let u1 = self.pair.f1.closed_form(x, t).expect("chain remainder has a flow");
        (u0, u1)
    }

    /// `|U(f0, x, t) - U(f1, x, t)|` from the closed-form flows.
    pub fn flow_gap(&self, x: &[f64], t: f64) -> f64 {
        let (a, b) = self.flows(x, t);
        flow::dist(&a, &b)
    }

    /// `(int_0^1 |f0 - f1|^p)^(1/p)` by the midpoint rule.
    pub fn lp_separation(&self, p: f64, nodes: usize) -> f64 {
        let d = self.pair.x0.len();
        let mut acc = 0.0;
        let mut x = self.pair.x0.clone();
        for i in 0..nodes {
            x[0] = (i as f64 + 0.5) / nodes as f64;
            let diff = flow::dist(&self.pair.f0.eval(&x), &self.pair.f1.eval(&x));
            acc += diff.powf(p);
        }
        let _ = d;
        (acc / nodes as f64).powf(1.0 / p)
    }
}

/// Max over 100 initial conditions spread over one period of `|U(f0,x,t2) - U(f1,x,t2)|`.
pub fn irrational_timestep_falsifier(pair: &StubbleDetPair, t1: f64, t2: f64) -> f64 {
    let _ = t1;
    let n = 100;
    let mut worst = 0.0f64;
    let mut x = pair.pair.x0.clone();
    for i in 0..n {
        x[0] = pair.z + pair.r * i as f64 / n as f64;
        worst = worst.max(pair.flow_gap(&x, t2));
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    /// `f0 = 0`, alternatives `L_beta r^beta h_bump((x - z)/r) e_1`.
    StubbleBump,
    /// `f0 = L_0 e_1`, alternatives add `L_beta r^beta h_pulse((x - z)/r) e_2`.
    SnakePulse,
}

/// Null field plus alternatives indexed by center `z` and radius `r`.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisFamily {
    pub kind: FamilyKind,
    pub beta: f64,
    pub d: usize,
    pub class: SmoothnessClass,
    pub kernel: KernelSpec,
    pub drift: f64,
    pub r_max: f64,
    pub rho_minus: f64,
    pub rho_plus: f64,
}

impl HypothesisFamily {
    pub fn with_rho_minus(mut self, rho: f64) -> Self {
        self.rho_minus = rho;
        self
    }

    pub fn null(&self) -> ModelFunction {
        let mut v = vec![0.0; self.d];
        v[0] = self.drift;
        ModelFunction::constant(v, "family-null")
    }

    fn axis(&self) -> usize {
        match self.kind {
            FamilyKind::StubbleBump => 0,
            FamilyKind::SnakePulse => 1,
        }
    }

    pub fn amplitude(&self, r: f64) -> f64 {
        self.class.l_beta * r.powf(self.beta)
    }

    /// `f_{z,r}`.
    pub fn alternative(&self, z: &[f64], r: f64) -> ModelFunction {
        self.combined(&[z.to_vec()], r)
    }

    /// `f0 + sum_j (f_{z_j,r} - f0)`; supports are disjoint for `2r`-separated centers.
    pub fn combined(&self, centers: &[Vec<f64>], r: f64) -> ModelFunction {
        let d = self.d;
        let drift = self.drift;
        let axis = self.axis();
        let amp = self.amplitude(r);
        let kernel = self.kernel;
        let centers = centers.to_vec();
        let lip = amp / r * kernels::kernel_supnorms(&kernel)[1];
        ModelFunction::new(d, format!("{:?}-alternative", self.kind), move |x, out| {
            out.iter_mut().for_each(|o| *o = 0.0);
            out[0] = drift;
            for z in &centers {
                out[axis] += amp * kernel.eval_scaled(x, z, r);
            }
        })
        .with_lipschitz(lip)
    }

    pub fn pulse_field(&self, z: &[f64], r: f64) -> Result<PulseDriftField> {
        PulseDriftField::new(self.kernel, self.drift, self.class.l_beta, r, z.to_vec())
    }

    /// Analytic upper bound on the observed displacement.
    ///
    /// Stubble: `|h| L_beta T_max r^beta`. Snake: `2 |K~| |K~'| L_beta L_0^-1 r^(beta+1)`.
    pub fn psi_bound(&self, r: f64, t_max: f64) -> f64 {
        match self.kind {
            FamilyKind::StubbleBump => self.kernel_sup() * self.class.l_beta * t_max * r.powf(self.beta),
            FamilyKind::SnakePulse => self.snake_c_beta() * self.class.l_beta / self.drift * r.powf(self.beta + 1.0),
        }
    }

    pub fn kernel_sup(&self) -> f64 {
        match self.kind {
            FamilyKind::StubbleBump => self.kernel.alpha * (-1.0f64).exp(),
            FamilyKind::SnakePulse => kernels::kernel_supnorms(&self.kernel)[0],
        }
    }

    /// `|K~|_inf * 2 |K~'|_inf` for the pulse factors.
    pub fn snake_c_beta(&self) -> f64 {
        let a = self.kernel.alpha;
        let k0 = a * (-1.0f64).exp();
        let k1 = a * kernels::standard_kernel_derivative(kernels::kernel_slope_argmax(), 1).abs();
        k0 * 2.0 * k1
    }

    /// Certification box around `z` for radius `r`.
    pub fn region(&self, z: &[f64], r: f64) -> BoxRegion {
        BoxRegion::around(z, 1.05 * r)
    }
}

fn family_common(beta: f64, d: usize, class: &SmoothnessClass, kind: KernelKind) -> Result<(KernelSpec, f64)> {
    if class.beta != beta || class.dim_in != d || class.dim_out != d {
        return Err(Error::InvalidParameter("class must match beta and dimension".into()));
    }
    let kernel = KernelSpec::calibrated(beta, kind, d)?;
    let r_max = kernels::r_max(beta, &class.l, class.l_beta, &kernel, 0.0)?;
    if r_max < 1e-3 {
        return Err(Error::ClassTooTight { r_max });
    }
    Ok((kernel, r_max))
}

/// Bump family of the stubble model; `rho_minus` is left at 0 for the caller to set.
pub fn stubble_prob_family(beta: f64, d: usize, class: &SmoothnessClass) -> Result<HypothesisFamily> {
    let (kernel, r_max) = family_common(beta, d, class, KernelKind::Bump)?;
    Ok(HypothesisFamily {
        kind: FamilyKind::StubbleBump,
        beta,
        d,
        class: class.clone(),
        kernel,
        drift: 0.0,
        r_max,
        rho_minus: 0.0,
        rho_plus: r_max.min(0.5),
    })
}

/// Pulse family of the snake model with drift `L_0`.
pub fn snake_prob_family(beta: f64, d: usize, class: &SmoothnessClass) -> Result<HypothesisFamily> {
    if d < 2 {
        return Err(Error::DimensionTooSmall(d));
    }
    let (kernel, r_max) = family_common(beta, d, class, KernelKind::Pulse)?;
    Ok(HypothesisFamily {
        kind: FamilyKind::SnakePulse,
        beta,
        d,
        class: class.clone(),
        kernel,
        drift: class.l[0],
        r_max,
        rho_minus: 0.0,
        rho_plus: r_max.min(0.5),
    })
}

/// Bump lattice of the snake model, invisible from a grid of straight trajectories.
#[derive(Debug, Clone)]
pub struct SnakeDetPair {
    pub pair: HypothesisPair,
    pub initial_conditions: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub r: f64,
    pub z: Vec<f64>,
    pub m: usize,
    pub drift: f64,
    pub delta: f64,
    pub delta_max: f64,
    pub kernel: KernelSpec,
}

/// `f0 = (L_0/2) e_1`, `f1 = f0 + sum_k L_beta r^beta h_bump((x - z - 2rk)/r) e_1`, `r = delta/sqrt(d)`.
///
/// The drift is `L_0/2` so that the first component of `f1` stays below `L_0`; trajectories
/// run for `T_j = 2/L_0` and cross the unit cube.
pub fn snake_det_pair(beta: f64, d: usize, class: &SmoothnessClass, delta: f64, x0: &[f64]) -> Result<SnakeDetPair> {
    if d < 2 {
        return Err(Error::DimensionTooSmall(d));
    }
    if class.beta != beta || class.dim_in != d || class.dim_out != d || x0.len() != d {
        return Err(Error::InvalidParameter("class, dimension and x0 must agree".into()));
    }
    let kernel = KernelSpec::calibrated(beta, KernelKind::Bump, d)?;
    let drift = class.l[0] / 2.0;
    let rm = kernels::r_max(beta, &class.l, class.l_beta, &kernel, drift)?;
    let sd = (d as f64).sqrt();
    let delta_max = (sd * rm).min(sd / 2.0);
    if !(delta > 0.0) || delta > delta_max {
        return Err(Error::DeltaTooLarge { delta, max: delta_max });
    }
    let r = delta / sd;
    let z = x0.to_vec();
    let o: Vec<f64> = z.iter().map(|v| v / (2.0 * r) - (v / (2.0 * r)).floor()).collect();
    let m0 = (1.0 / (2.0 * r)).ceil() as usize;
    let m = (m0 + 1).pow((d - 1) as u32);
    let mut ics = Vec::with_capacity(m);
    for idx in 0..m {
        let mut rem = idx;
        let mut p = vec![0.0; d];
        for i in 1..d {
            let k = (rem % (m0 + 1)) as f64;
            rem /= m0 + 1;
            p[i] = 2.0 * r * (o[i] - 0.5 + k);
        }
        ics.push(p);
    }
    for p in &ics {
        let gap: f64 = (1..d)
            .map(|i| {
                let c = z[i] + 2.0 * r * ((p[i] - z[i]) / (2.0 * r)).round();
                (p[i] - c).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        if gap < r * (1.0 - 1e-9) {
            return Err(Error::InvalidParameter(format!("initial condition {p:?} meets a bump support")));
        }
    }
    let amp = class.l_beta * r.powf(beta);
    let zc = z.clone();
    let f1 = ModelFunction::new(d, "snake-det-lattice", move |x, out| {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut n2 = 0.0;
        for i in 0..x.len() {
            let c = zc[i] + 2.0 * r * ((x[i] - zc[i]) / (2.0 * r)).round();
            let w = (x[i] - c) / r;
            n2 += w * w;
        }
        out[0] = drift + if n2 < 1.0 { amp * kernel.alpha * (-1.0 / (1.0 - n2)).exp() } else { 0.0 };
    });
    let mut v = vec![0.0; d];
    v[0] = drift;
    let f0 = ModelFunction::constant(v, "snake-det-null");
    let times = vec![1.0 / drift; m];
    let pair = HypothesisPair {
        f0,
        f1,
        x0: x0.to_vec(),
        claimed_separation: amp * kernel.alpha * (-1.0f64).exp(),
        coincidence: Coincidence::InitialConditions { points: ics.clone(), times: times.clone() },
        class: class.clone(),
        region: BoxRegion::around(&z, 3.0 * r),
    };
    Ok(SnakeDetPair { pair, initial_conditions: ics, times, r, z, m, drift, delta, delta_max, kernel })
}

/// Single-trajectory spiral in `R^2` visiting `(t, k/K)` for every `k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpiralConstruction {
    pub k: usize,
    pub delta: f64,
    pub schedule: Vec<f64>,
    pub total_time: f64,
}

pub fn spiral_build(k: usize) -> Result<SpiralConstruction> {
    if !(1..=64).contains(&k) {
        return Err(Error::InvalidParameter(format!("spiral needs 1 <= K <= 64, got {k}")));
    }
    let kf = k as f64;
    let mut schedule = vec![0.0];
    let mut s = 0.0;
    for j in 0..k {
        let jf = j as f64;
        s += 2.0 + PI * (2.0 + jf / kf + (jf + 1.0) / kf);
        schedule.push(s);
    }
    Ok(SpiralConstruction { k, delta: 1.0 / kf, schedule, total_time: 1.0 + (2.0 + 3.0 * PI) * kf })
}

fn rotate_normalized(v: [f64; 2]) -> [f64; 2] {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if n == 0.0 {
        return [0.0, 0.0];
    }
    let s = n.min(1.0) / n;
    [s * v[1], -s * v[0]]
}

impl SpiralConstruction {
    pub fn eval(&self, x: &[f64]) -> [f64; 2] {
        spiral_eval(self.delta, x)
    }

    pub fn field(&self) -> ModelFunction {
        let delta = self.delta;
        ModelFunction::new(2, "spiral", move |x, out| {
            let v = spiral_eval(delta, x);
            out[0] = v[0];
            out[1] = v[1];
        })
        .with_lipschitz(self.lipschitz_claim())
    }

    pub fn sup_norm_claim(&self) -> f64 {
        (1.0 + 4.0 * self.delta * self.delta).sqrt()
    }

    pub fn lipschitz_claim(&self) -> f64 {
        (1.0 + 20.0 * self.delta * self.delta).sqrt()
    }
}

fn spiral_eval(delta: f64, x: &[f64]) -> [f64; 2] {
    let (x1, x2) = (x[0], x[1]);
    if (0.0..=1.0).contains(&x1) {
        if x2 >= -1.0 {
            [(x2 + 1.0).min(1.0), 0.0]
        } else {
            let s = (-1.0 - x2).min(1.0);
            let h = -4.0 * delta * (0.5 - (x1 - 0.5).abs());
            [-s, s * h]
        }
    } else if x1 < 0.0 {
        rotate_normalized([x1, x2 + 1.0])
    } else {
        rotate_normalized([x1 - 1.0, x2 + 1.0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpiralHit {
    pub k: usize,
    pub time: f64,
    pub state: Vec<f64>,
    pub target: Vec<f64>,
    pub error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpiralReport {
    pub total_time: f64,
    pub tol_geo: f64,
    pub hits: Vec<SpiralHit>,
    pub exits: Vec<SpiralHit>,
    pub sup_norm_measured: f64,
    pub sup_norm_claim: f64,
    pub lipschitz_measured: f64,
    pub lipschitz_claim: f64,
    pub pass: bool,
}

/// Integrates the spiral from `(0, 0)` and checks the schedule, sup-norm and Lipschitz claims.
pub fn spiral_verify(spec: &SpiralConstruction, tol: f64) -> Result<SpiralReport> {
    let f = spec.field();
    let opts = IntegrateOptions::new(tol).max_step(1e-3);
    let traj = flow::integrate_with(&f, &[0.0, 0.0], spec.total_time, &opts)?;
    let tol_geo = 1e-6 * spec.total_time;
    let kf = spec.k as f64;
    let mut hits = Vec::new();
    let mut exits = Vec::new();
    for (k, s) in spec.schedule.iter().enumerate() {
        let state = flow::flow_at(&traj, *s)?;
        let target = vec![0.0, k as f64 / kf];
        let error = flow::dist(&state, &target);
        hits.push(SpiralHit { k, time: *s, state, target, error, pass: error <= tol_geo });
        let t1 = s + 1.0;
        if t1 <= spec.total_time + 1e-12 {
            let state = flow::flow_at(&traj, t1.min(spec.total_time))?;
            let target = vec![1.0, k as f64 / kf];
            let error = flow::dist(&state, &target);
            exits.push(SpiralHit { k, time: t1, state, target, error, pass: error <= tol_geo });
        }
    }
    let region = BoxRegion::new(vec![-4.0, -5.0], vec![5.0, 4.0])?;
    let mut sup = 0.0f64;
    let mut candidates = halton_points(&region, 10_000);
    candidates.push(vec![0.5, -1.0 - 2.0]);
    for p in &candidates {
        let v = spec.eval(p);
        sup = sup.max((v[0] * v[0] + v[1] * v[1]).sqrt());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5B1A);
    let mut lip = 0.0f64;
    for i in 0..100_000 {
        let x: Vec<f64> = (0..2).map(|j| region.lo[j] + rng.random::<f64>() * region.side(j)).collect();
        let y: Vec<f64> = if i % 2 == 0 {
            (0..2).map(|j| region.lo[j] + rng.random::<f64>() * region.side(j)).collect()
        } else {
            let s = (1e-6f64.ln() + rng.random::<f64>() * (-1e-6f64.ln())).exp();
            let th = rng.random::<f64>() * 2.0 * PI;
            vec![x[0] + s * th.cos(), x[1] + s * th.sin()]
        };
        let sep = flow::dist(&x, &y);
        if sep == 0.0 {
            continue;
        }
        let (a, b) = (spec.eval(&x), spec.eval(&y));
        let q = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() / sep;
        lip = lip.max(q);
    }
    let sup_ok = (sup - spec.sup_norm_claim()).abs() <= 1e-9;
    let lip_ok = lip <= spec.lipschitz_claim() + 1e-9;
    let pass = hits.iter().chain(&exits).all(|h| h.pass) && sup_ok && lip_ok;
    Ok(SpiralReport {
        total_time: spec.total_time,
        tol_geo,
        hits,
        exits,
        sup_norm_measured: sup,
        sup_norm_claim: spec.sup_norm_claim(),
        lipschitz_measured: lip,
        lipschitz_claim: spec.lipschitz_claim(),
        pass,
    })
}
