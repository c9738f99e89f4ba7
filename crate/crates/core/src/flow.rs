//! Vector fields, adaptive flows with dense output, and closed-form flows.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{self, KernelKind, KernelSpec};

pub type FieldFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
pub type FlowFn = dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync;

/// An evaluatable vector field `R^d -> R^d`, optionally with a known flow.
#[derive(Clone)]
pub struct ModelFunction {
    pub dim: usize,
    eval: Arc<FieldFn>,
    pub lipschitz_hint: Option<f64>,
    closed_form_flow: Option<Arc<FlowFn>>,
    pub tag: String,
}

impl fmt::Debug for ModelFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelFunction")
            .field("dim", &self.dim)
            .field("tag", &self.tag)
            .field("lipschitz_hint", &self.lipschitz_hint)
            .field("closed_form_flow", &self.closed_form_flow.is_some())
            .finish()
    }
}

impl ModelFunction {
    pub fn new<F>(dim: usize, tag: impl Into<String>, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self { dim, eval: Arc::new(f), lipschitz_hint: None, closed_form_flow: None, tag: tag.into() }
    }

    pub fn with_flow<F>(mut self, flow: F) -> Self
    where
        F: Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static,
    {
        self.closed_form_flow = Some(Arc::new(flow));
        self
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz_hint = Some(l);
        self
    }

    /// Constant field `x -> v`; its flow is `x + t v`.
    pub fn constant(v: Vec<f64>, tag: impl Into<String>) -> Self {
        let d = v.len();
        let w = v.clone();
        Self::new(d, tag, move |_, out| out.copy_from_slice(&v))
            .with_flow(move |x, t| x.iter().zip(&w).map(|(a, b)| a + t * b).collect())
            .with_lipschitz(0.0)
    }

    pub fn zero(d: usize) -> Self {
        Self::constant(vec![0.0; d], "zero")
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.eval)(x, out)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.eval)(x, &mut out);
        out
    }

    pub fn has_closed_form(&self) -> bool {
        self.closed_form_flow.is_some()
    }

    pub fn closed_form(&self, x: &[f64], t: f64) -> Option<Vec<f64>> {
        self.closed_form_flow.as_ref().map(|g| g(x, t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Node {
    pub t: f64,
    pub x: Vec<f64>,
    pub dx: Vec<f64>,
}

/// Dense-output solution of `u' = f(u)`, `u(0) = initial`, on `[0, t_end]` or `[t_end, 0]`.
///
/// Nodes are stored in increasing time regardless of the integration direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub initial: Vec<f64>,
    pub t_end: f64,
    pub nodes: Vec<Node>,
    pub tol: f64,
}

impl Trajectory {
    pub fn t_min(&self) -> f64 {
        self.nodes[0].t
    }

    pub fn t_max(&self) -> f64 {
        self.nodes[self.nodes.len() - 1].t
    }

    pub fn dim(&self) -> usize {
        self.initial.len()
    }

    fn bracket(&self, t: f64) -> Result<usize> {
        let (lo, hi) = (self.t_min(), self.t_max());
        let slack = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
        if !(t >= lo - slack && t <= hi + slack) {
            return Err(Error::OutOfSpan { t, lo, hi });
        }
        let i = self.nodes.partition_point(|n| n.t <= t);
        Ok(i.clamp(1, self.nodes.len().max(2) - 1))
    }

    /// Hermite interpolation of state and velocity at `t`.
    pub fn state_and_velocity(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.nodes.len() == 1 {
            let n = &self.nodes[0];
            if (t - n.t).abs() <= 1e-12 {
                return Ok((n.x.clone(), n.dx.clone()));
            }
            return Err(Error::OutOfSpan { t, lo: n.t, hi: n.t });
        }
        let i = self.bracket(t)?;
        let (a, b) = (&self.nodes[i - 1], &self.nodes[i]);
        if t == a.t {
            return Ok((a.x.clone(), a.dx.clone()));
        }
        if t == b.t {
            return Ok((b.x.clone(), b.dx.clone()));
        }
        let h = b.t - a.t;
        let s = ((t - a.t) / h).clamp(0.0, 1.0);
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let d00 = 6.0 * s2 - 6.0 * s;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d11 = 3.0 * s2 - 2.0 * s;
        let mut x = vec![0.0; a.x.len()];
        let mut v = vec![0.0; a.x.len()];
        for k in 0..x.len() {
            x[k] = h00 * a.x[k] + h10 * h * a.dx[k] + h01 * b.x[k] + h11 * h * b.dx[k];
            v[k] = d00 * (a.x[k] - b.x[k]) / h + d10 * a.dx[k] + d11 * b.dx[k];
        }
        Ok((x, v))
    }
}

/// Dense-output query `U(f, x, t)`.
pub fn flow_at(traj: &Trajectory, t: f64) -> Result<Vec<f64>> {
    traj.state_and_velocity(t).map(|(x, _)| x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub tol: f64,
    /// Upper bound on the absolute step length.
    pub max_step: Option<f64>,
    pub max_steps: usize,
}

impl IntegrateOptions {
    pub fn new(tol: f64) -> Self {
        Self { tol, max_step: None, max_steps: 10_000_000 }
    }

    pub fn max_step(mut self, h: f64) -> Self {
        self.max_step = Some(h);
        self
    }
}

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive Dormand-Prince 5(4) integration from `x0` over `[0, t_end]` (or `[t_end, 0]`).
pub fn integrate(f: &ModelFunction, x0: &[f64], t_end: f64, tol: f64) -> Result<Trajectory> {
    integrate_with(f, x0, t_end, &IntegrateOptions::new(tol))
}

pub fn integrate_with(f: &ModelFunction, x0: &[f64], t_end: f64, opts: &IntegrateOptions) -> Result<Trajectory> {
    let tol = opts.tol;
    if !(1e-13..=1e-3).contains(&tol) {
        return Err(Error::InvalidTolerance(tol));
    }
    if x0.len() != f.dim {
        return Err(Error::InvalidParameter(format!("state has dim {} but field has dim {}", x0.len(), f.dim)));
    }
    if !t_end.is_finite() {
        return Err(Error::InvalidParameter("non-finite integration horizon".into()));
    }
    let d = f.dim;
    let dir = if t_end < 0.0 { -1.0 } else { 1.0 };
    let span = t_end.abs();
    let hmax = opts.max_step.unwrap_or(f64::INFINITY).min(span.max(f64::MIN_POSITIVE));

    let mut x = x0.to_vec();
    let mut fx = f.eval(x0);
    let mut nodes = vec![Node { t: 0.0, x: x.clone(), dx: fx.clone() }];
    if span == 0.0 {
        return Ok(Trajectory { initial: x0.to_vec(), t_end, nodes, tol });
    }

    let scale = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let mut h = {
        let d0 = scale(&x).max(1.0);
        let d1 = scale(&fx);
        let h0 = if d1 < 1e-10 { hmax } else { 0.01 * d0 / d1 * tol.powf(0.2) * 10.0 };
        h0.min(hmax).max(1e-10 * span.max(1.0))
    };

    let mut k = vec![vec![0.0; d]; 7];
    let mut tmp = vec![0.0; d];
    let mut xnew = vec![0.0; d];
    let mut t = 0.0f64;
    let mut steps = 0usize;
    while t < span {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::StepsizeUnderflow { t: dir * t, h });
        }
        let last = t + h >= span * (1.0 - 1e-15);
        if last {
            h = span - t;
        }
        let hs = dir * h;
        k[0].copy_from_slice(&fx);
        for s in 1..7 {
            for i in 0..d {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += A[s][j] * kj[i];
                }
                tmp[i] = x[i] + hs * acc;
            }
            f.eval_into(&tmp, &mut k[s]);
            if s == 6 {
                xnew.copy_from_slice(&tmp);
            }
        }
        let mut err = 0.0f64;
        for i in 0..d {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += E[j] * kj[i];
            }
            let sc = tol * x[i].abs().max(xnew[i].abs()).max(1.0);
            err = err.max((hs * e).abs() / sc);
        }
        if !err.is_finite() || xnew.iter().chain(&k[6]).any(|v| !v.is_finite()) {
            err = 1e10;
        }
        if err <= 1.0 {
            t = if last { span } else { t + h };
            x.copy_from_slice(&xnew);
            fx.copy_from_slice(&k[6]);
            nodes.push(Node { t: dir * t, x: x.clone(), dx: fx.clone() });
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = (h * fac).min(hmax);
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::StepsizeUnderflow { t: dir * t, h });
            }
        }
    }
    if dir < 0.0 {
        nodes.reverse();
    }
    Ok(Trajectory { initial: x0.to_vec(), t_end, nodes, tol })
}

/// Residual `|U(f, U(f,x,s), t) - U(f, x, s+t)|` computed by integration.
pub fn flow_semigroup_check(f: &ModelFunction, x: &[f64], s: f64, t: f64, tol: f64) -> Result<f64> {
    let mid = flow_at(&integrate(f, x, s, tol)?, s)?;
    let two_step = flow_at(&integrate(f, &mid, t, tol)?, t)?;
    let one_step = flow_at(&integrate(f, x, s + t, tol)?, s + t)?;
    Ok(dist(&two_step, &one_step))
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// `f(x) = b e_1 + L_beta r^beta h_pulse((x - z)/r) e_2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PulseDriftField {
    pub kernel: KernelSpec,
    pub drift: f64,
    pub l_beta: f64,
    pub r: f64,
    pub z: Vec<f64>,
}

impl PulseDriftField {
    pub fn new(kernel: KernelSpec, drift: f64, l_beta: f64, r: f64, z: Vec<f64>) -> Result<Self> {
        if kernel.kind != KernelKind::Pulse {
            return Err(Error::InvalidParameter("pulse drift field needs a pulse kernel".into()));
        }
        if kernel.dim < 2 {
            return Err(Error::DimensionTooSmall(kernel.dim));
        }
        if z.len() != kernel.dim || !(r > 0.0) || !(drift > 0.0) || l_beta < 0.0 {
            return Err(Error::InvalidParameter("pulse drift field needs b > 0, r > 0, L_beta >= 0".into()));
        }
        Ok(Self { kernel, drift, l_beta, r, z })
    }

    pub fn amplitude(&self) -> f64 {
        self.l_beta * self.r.powf(self.kernel.beta)
    }

    pub fn model(&self) -> ModelFunction {
        let me = self.clone();
        let d = self.kernel.dim;
        let amp = self.amplitude();
        let lip = amp / self.r * kernels::kernel_supnorms(&self.kernel)[1];
        ModelFunction::new(d, "pulse-drift", move |x, out| {
            out.iter_mut().for_each(|o| *o = 0.0);
            out[0] = me.drift;
            out[1] = amp * me.kernel.eval_scaled(x, &me.z, me.r);
        })
        .with_lipschitz(lip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GronwallReport {
    pub measured: f64,
    pub bound_a: f64,
    pub bound_b: f64,
}

/// Distance of two trajectories of a pulse drift field at time `t`, with the additive and
/// exponential Gronwall bounds (`c = 1`, constants `4|h|` and `2|Dh|`).
pub fn gronwall_pair_bound(field: &PulseDriftField, x1: &[f64], x2: &[f64], t: f64) -> Result<GronwallReport> {
    let sup = kernels::kernel_supnorms(&field.kernel);
    let (h0, h1) = (sup[0], sup[1]);
    let f = field.model();
    let tol = 1e-10;
    let u1 = flow_at(&integrate(&f, x1, t, tol)?, t)?;
    let u2 = flow_at(&integrate(&f, x2, t, tol)?, t)?;
    let gap = dist(x1, x2);
    let beta = field.kernel.beta;
    let bound_a = gap + 4.0 * h0 * field.l_beta / field.drift * field.r.powf(beta + 1.0);
    let bound_b = gap * (2.0 * h1 * field.l_beta / field.drift * field.r.powf(beta)).exp();
    Ok(GronwallReport { measured: dist(&u1, &u2), bound_a, bound_b })
}
