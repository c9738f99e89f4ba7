//! Hoelder classes, numerical membership certificates, and Faa di Bruno derivatives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::ModelFunction;
use crate::kernels::{kernel_slope_argmax, standard_kernel, standard_kernel_derivative};
use crate::region::BoxRegion;

/// Largest integer strictly smaller than `beta`.
pub fn strict_floor(beta: f64) -> usize {
    let f = beta.floor();
    let ell = if f == beta { f - 1.0 } else { f };
    ell.max(0.0) as usize
}

/// `Sigma^{d_in -> d_out}(beta; L_0..L_ell, L_beta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessClass {
    pub beta: f64,
    pub ell: usize,
    pub l: Vec<f64>,
    pub l_beta: f64,
    pub dim_in: usize,
    pub dim_out: usize,
}

impl SmoothnessClass {
    /// `beta = 1` is the Lipschitz class with `ell = 0`.
    pub fn new(beta: f64, l: Vec<f64>, l_beta: f64, dim_in: usize, dim_out: usize) -> Result<Self> {
        if !(beta >= 1.0) || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!("beta must be at least 1, got {beta}")));
        }
        let ell = strict_floor(beta);
        if l.len() != ell + 1 {
            return Err(Error::InvalidParameter(format!(
                "beta={beta} needs {} constants L_0..L_{ell}, got {}",
                ell + 1,
                l.len()
            )));
        }
        if l.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || !(l_beta > 0.0) || !l_beta.is_finite() {
            return Err(Error::InvalidParameter("class constants must be positive and finite".into()));
        }
        if dim_in == 0 || dim_out == 0 {
            return Err(Error::InvalidParameter("class dimensions must be positive".into()));
        }
        Ok(Self { beta, ell, l, l_beta, dim_in, dim_out })
    }

    /// All constants equal to `c`.
    pub fn uniform(beta: f64, c: f64, dim_in: usize, dim_out: usize) -> Result<Self> {
        let ell = strict_floor(beta);
        Self::new(beta, vec![c; ell + 1], c, dim_in, dim_out)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut c = self.clone();
        c.l.iter_mut().for_each(|v| *v *= factor);
        c.l_beta *= factor;
        c
    }
}

/// A set partition of `{1..k}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Partition {
    pub blocks: Vec<Vec<usize>>,
}

pub const MAX_PARTITION_ORDER: usize = 8;

/// All set partitions of `{1..k}` via restricted growth strings.
pub fn enumerate_partitions(k: usize) -> Result<Vec<Partition>> {
    if k > MAX_PARTITION_ORDER {
        return Err(Error::TooLarge(k));
    }
    if k == 0 {
        return Ok(vec![Partition { blocks: vec![] }]);
    }
    let mut out = Vec::new();
    let mut a = vec![0usize; k];
    loop {
        let nb = a.iter().max().copied().unwrap_or(0) + 1;
        let mut blocks = vec![Vec::new(); nb];
        for (i, b) in a.iter().enumerate() {
            blocks[*b].push(i + 1);
        }
        out.push(Partition { blocks });
        // next restricted growth string
        let mut i = k - 1;
        loop {
            if i == 0 {
                return Ok(out);
            }
            let prefix_max = a[..i].iter().max().copied().unwrap_or(0);
            if a[i] <= prefix_max {
                a[i] += 1;
                for v in a.iter_mut().skip(i + 1) {
                    *v = 0;
                }
                break;
            }
            i -= 1;
        }
    }
}

pub type Deriv<'a> = &'a dyn Fn(f64) -> f64;

/// `(f o g)^(k)(x) = sum_B f^(#B)(g(x)) prod_{b in B} g^(#b)(x)`.
///
/// `f_derivs[i]` and `g_derivs[i]` are the `i`-th derivatives, index 0 the function itself.
pub fn faa_di_bruno(f_derivs: &[Deriv<'_>], g_derivs: &[Deriv<'_>], k: usize, x: f64) -> Result<f64> {
    if k > MAX_PARTITION_ORDER {
        return Err(Error::TooLarge(k));
    }
    if f_derivs.len() <= k || g_derivs.len() <= k {
        return Err(Error::InvalidParameter(format!("need derivatives up to order {k}")));
    }
    if k == 0 {
        return Ok(f_derivs[0](g_derivs[0](x)));
    }
    let gx = g_derivs[0](x);
    let gd: Vec<f64> = (0..=k).map(|i| g_derivs[i](x)).collect();
    let fd: Vec<f64> = (0..=k).map(|i| f_derivs[i](gx)).collect();
    let mut acc = 0.0;
    for p in enumerate_partitions(k)? {
        let mut term = fd[p.blocks.len()];
        for b in &p.blocks {
            term *= gd[b.len()];
        }
        acc += term;
    }
    Ok(acc)
}

/// Tuning of the finite-difference certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub grid_points: usize,
    pub holder_pairs: usize,
    pub directions: usize,
    pub slack: f64,
    pub seed: u64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self { grid_points: 10_000, holder_pairs: 100_000, directions: 16, slack: 0.05, seed: 0x5EED }
    }
}

type VecFn<'a> = &'a dyn Fn(&[f64], &mut [f64]);

struct Probe<'a> {
    f: VecFn<'a>,
    din: usize,
    dout: usize,
    h: f64,
}

fn binom(n: usize, k: usize) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

impl Probe<'_> {
    /// Central difference `h^-k sum_j (-1)^j C(k,j) f(x + (k/2 - j) h v)` for every component.
    fn dir_deriv(&self, x: &[f64], v: &[f64], k: usize, out: &mut [f64], buf: &mut [f64], pt: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        if k == 0 {
            (self.f)(x, out);
            return;
        }
        for j in 0..=k {
            let off = (k as f64 / 2.0 - j as f64) * self.h;
            for i in 0..self.din {
                pt[i] = x[i] + off * v[i];
            }
            (self.f)(pt, buf);
            let c = if j % 2 == 0 { binom(k, j) } else { -binom(k, j) };
            for (o, b) in out.iter_mut().zip(buf.iter()) {
                *o += c * b;
            }
        }
        let s = self.h.powi(k as i32);
        out.iter_mut().for_each(|o| *o /= s);
    }

    fn scalar(&self, x: &[f64], v: &[f64], k: usize, comp: usize) -> f64 {
        let mut out = vec![0.0; self.dout];
        let mut buf = vec![0.0; self.dout];
        let mut pt = vec![0.0; self.din];
        self.dir_deriv(x, v, k, &mut out, &mut buf, &mut pt);
        out[comp]
    }
}

fn fd_step(region: &BoxRegion) -> f64 {
    let side = (0..region.dim()).map(|i| region.side(i)).fold(f64::INFINITY, f64::min);
    1e-4 * side / 2.0
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|a| *a /= n);
    }
}

/// Unit directions probing the operator norm of symmetric multilinear forms.
fn direction_set(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    if d == 1 {
        return vec![vec![1.0]];
    }
    if d == 2 {
        let n = n.max(2);
        return (0..n)
            .map(|i| {
                let th = std::f64::consts::PI * i as f64 / n as f64;
                vec![th.cos(), th.sin()]
            })
            .collect();
    }
    let mut dirs = Vec::new();
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        dirs.push(e);
    }
    let mut diag = vec![1.0; d];
    normalize(&mut diag);
    dirs.push(diag);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1EC);
    while dirs.len() < n.max(d + 1) {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        normalize(&mut v);
        dirs.push(v);
    }
    dirs
}

fn grid_points(region: &BoxRegion, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = region.dim();
    let per = ((n as f64).powf(1.0 / d as f64).ceil() as usize).max(2);
    let spacing: Vec<f64> = (0..d).map(|i| region.side(i) / (per - 1) as f64).collect();
    let total = per.pow(d as u32);
    let mut pts = Vec::with_capacity(total);
    for idx in 0..total {
        let mut r = idx;
        let mut p = vec![0.0; d];
        for i in 0..d {
            p[i] = region.lo[i] + (r % per) as f64 * spacing[i];
            r /= per;
        }
        pts.push(p);
    }
    (pts, spacing)
}

fn rotate_dir(v: &[f64], axis: usize, angle: f64) -> Vec<f64> {
    // rotation in the plane spanned by v and e_axis (or e_0/e_1 in d = 2)
    let d = v.len();
    if d == 1 {
        return v.to_vec();
    }
    let mut e = vec![0.0; d];
    e[axis % d] = 1.0;
    let dot: f64 = v.iter().zip(&e).map(|(a, b)| a * b).sum();
    let mut w: Vec<f64> = e.iter().zip(v).map(|(a, b)| a - dot * b).collect();
    let n = w.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n < 1e-12 {
        return v.to_vec();
    }
    w.iter_mut().for_each(|a| *a /= n);
    let (c, s) = (angle.cos(), angle.sin());
    v.iter().zip(&w).map(|(a, b)| c * a + s * b).collect()
}

/// Pattern search maximizing `score(x, v)` from a starting point.
fn refine_point(
    score: &dyn Fn(&[f64], &[f64]) -> f64,
    x0: &[f64],
    v0: &[f64],
    step0: &[f64],
    best0: f64,
) -> f64 {
    let d = x0.len();
    let mut x = x0.to_vec();
    let mut v = v0.to_vec();
    let mut best = best0;
    let mut step: Vec<f64> = step0.to_vec();
    let mut ang = 0.2;
    for _ in 0..60 {
        let mut improved = false;
        for i in 0..d {
            for sgn in [-1.0, 1.0] {
                let mut y = x.clone();
                y[i] += sgn * step[i];
                let s = score(&y, &v);
                if s > best {
                    best = s;
                    x = y;
                    improved = true;
                }
            }
        }
        if d > 1 {
            for axis in 0..d {
                for sgn in [-1.0, 1.0] {
                    let w = rotate_dir(&v, axis, sgn * ang);
                    let s = score(&x, &w);
                    if s > best {
                        best = s;
                        v = w;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step.iter_mut().for_each(|s| *s *= 0.5);
            ang *= 0.5;
            if step.iter().all(|s| *s < 1e-7 * step0[0].abs().max(1e-300)) {
                break;
            }
        }
    }
    best
}

/// Sup over the region of `|D^k f|` in operator norm, for every output component.
fn supnorms_all(probe: &Probe<'_>, k: usize, region: &BoxRegion, opts: &CertifyOptions) -> Vec<f64> {
    let (pts, spacing) = grid_points(region, opts.grid_points);
    let dirs = direction_set(probe.din, opts.directions, opts.seed);
    let dout = probe.dout;
    let mut best = vec![(0.0f64, 0usize, 0usize); dout];
    let mut out = vec![0.0; dout];
    let mut buf = vec![0.0; dout];
    let mut pt = vec![0.0; probe.din];
    let dir_list: &[Vec<f64>] = if k == 0 { &dirs[..1] } else { &dirs };
    for (pi, p) in pts.iter().enumerate() {
        for (di, v) in dir_list.iter().enumerate() {
            probe.dir_deriv(p, v, k, &mut out, &mut buf, &mut pt);
            for c in 0..dout {
                let a = out[c].abs();
                if a > best[c].0 {
                    best[c] = (a, pi, di);
                }
            }
        }
    }
    (0..dout)
        .map(|c| {
            let (b, pi, di) = best[c];
            if b == 0.0 {
                return 0.0;
            }
            let score = |x: &[f64], v: &[f64]| probe.scalar(x, v, k, c).abs();
            let scored = if k == 0 {
                let v0 = dir_list[0].clone();
                refine_point(&|x, _| score(x, &v0), &pts[pi], &dir_list[0], &spacing, b)
            } else {
                refine_point(&score, &pts[pi], &dir_list[di], &spacing, b)
            };
            scored.max(b)
        })
        .collect()
}

/// Estimated `sup_x |D^k f(x)|` (operator norm) over `region`.
pub fn derivative_supnorm(f: &dyn Fn(&[f64]) -> f64, k: usize, region: &BoxRegion) -> f64 {
    derivative_supnorm_with(f, k, region, &CertifyOptions::default())
}

pub fn derivative_supnorm_with(f: &dyn Fn(&[f64]) -> f64, k: usize, region: &BoxRegion, opts: &CertifyOptions) -> f64 {
    let g = |x: &[f64], out: &mut [f64]| out[0] = f(x);
    let probe = Probe { f: &g, din: region.dim(), dout: 1, h: fd_step(region) };
    supnorms_all(&probe, k, region, opts)[0]
}

/// Sup of `|D^ell f(x) - D^ell f(y)| / |x - y|^a` over sampled pairs, per component.
fn holder_all(probe: &Probe<'_>, ell: usize, a: f64, region: &BoxRegion, opts: &CertifyOptions) -> Vec<f64> {
    let d = probe.din;
    let dout = probe.dout;
    let side = (0..d).map(|i| region.side(i)).fold(f64::INFINITY, f64::min);
    let (smin, smax) = (1e-4 * side, region.diameter());
    let (lmin, lmax) = (smin.ln(), smax.ln());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let base_dirs = direction_set(d, 4, opts.seed);
    let mut best = vec![(0.0f64, Vec::new(), Vec::new(), 0.0f64, Vec::new()); dout];
    let mut ox = vec![0.0; dout];
    let mut oy = vec![0.0; dout];
    let mut buf = vec![0.0; dout];
    let mut pt = vec![0.0; d];
    for _ in 0..opts.holder_pairs {
        let x: Vec<f64> = (0..d).map(|i| region.lo[i] + rng.random::<f64>() * region.side(i)).collect();
        let mut u: Vec<f64> = if d == 1 {
            vec![1.0]
        } else {
            (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
        };
        normalize(&mut u);
        let s = (lmin + rng.random::<f64>() * (lmax - lmin)).exp();
        let y: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + s * b).collect();
        let denom = s.powf(a);
        let mut probe_dirs: Vec<&Vec<f64>> = base_dirs.iter().collect();
        if d > 1 {
            probe_dirs.push(&u);
        }
        for v in probe_dirs {
            probe.dir_deriv(&x, v, ell, &mut ox, &mut buf, &mut pt);
            probe.dir_deriv(&y, v, ell, &mut oy, &mut buf, &mut pt);
            for c in 0..dout {
                let q = (ox[c] - oy[c]).abs() / denom;
                if q > best[c].0 {
                    best[c] = (q, x.clone(), u.clone(), s, v.clone());
                }
            }
        }
    }
    (0..dout)
        .map(|c| {
            let (b, x, u, s, v) = best[c].clone();
            if b == 0.0 {
                return 0.0;
            }
            // refine over (x, log s) with u and v fixed, then over v
            let quot = |x: &[f64], ls: f64, v: &[f64]| {
                let s = ls.exp();
                let y: Vec<f64> = x.iter().zip(&u).map(|(p, q)| p + s * q).collect();
                (probe.scalar(x, v, ell, c) - probe.scalar(&y, v, ell, c)).abs() / s.powf(a)
            };
            let mut xs = x.clone();
            xs.push(s.ln());
            let mut step: Vec<f64> = (0..d).map(|i| 0.01 * region.side(i)).collect();
            step.push(0.3);
            let score = |p: &[f64], w: &[f64]| {
                let ls = p[d].clamp(lmin, lmax);
                quot(&p[..d], ls, w)
            };
            let r = refine_point(&score, &xs, &v, &step, b);
            r.max(b)
        })
        .collect()
}

/// Raw measurements for one component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentMeasure {
    pub sup_norms: Vec<f64>,
    pub holder_quotient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldMeasure {
    pub components: Vec<ComponentMeasure>,
}

/// `|D^k f_j|` for `k = 0..=ell` and the `(beta - ell)`-Hoelder quotient of `D^ell f_j`.
pub fn measure_field(f: VecFn<'_>, din: usize, dout: usize, beta: f64, region: &BoxRegion, opts: &CertifyOptions) -> FieldMeasure {
    let ell = strict_floor(beta);
    let probe = Probe { f, din, dout, h: fd_step(region) };
    let sups: Vec<Vec<f64>> = (0..=ell).map(|k| supnorms_all(&probe, k, region, opts)).collect();
    let hold = holder_all(&probe, ell, beta - ell as f64, region, opts);
    FieldMeasure {
        components: (0..dout)
            .map(|c| ComponentMeasure { sup_norms: sups.iter().map(|s| s[c]).collect(), holder_quotient: hold[c] })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentReport {
    pub component: usize,
    pub sup_norms: Vec<f64>,
    pub bounds: Vec<f64>,
    pub derivative_pass: Vec<bool>,
    pub holder_quotient: f64,
    pub holder_bound: f64,
    pub holder_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MembershipReport {
    pub pass: bool,
    pub slack: f64,
    pub components: Vec<ComponentReport>,
}

impl MembershipReport {
    /// Smallest ratio bound / measured over all constraints (infinite when all measured are 0).
    pub fn min_margin(&self) -> f64 {
        let mut m = f64::INFINITY;
        for c in &self.components {
            for (s, b) in c.sup_norms.iter().zip(&c.bounds) {
                if *s > 0.0 {
                    m = m.min(b / s);
                }
            }
            if c.holder_quotient > 0.0 {
                m = m.min(c.holder_bound / c.holder_quotient);
            }
        }
        m
    }
}

pub fn judge(m: &FieldMeasure, cls: &SmoothnessClass, slack: f64) -> MembershipReport {
    let mut pass = true;
    let components = m
        .components
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let derivative_pass: Vec<bool> =
                c.sup_norms.iter().zip(&cls.l).map(|(s, l)| *s <= l * (1.0 + slack)).collect();
            let holder_pass = c.holder_quotient <= cls.l_beta * (1.0 + slack);
            pass &= holder_pass && derivative_pass.iter().all(|p| *p);
            ComponentReport {
                component: j,
                sup_norms: c.sup_norms.clone(),
                bounds: cls.l.clone(),
                derivative_pass,
                holder_quotient: c.holder_quotient,
                holder_bound: cls.l_beta,
                holder_pass,
            }
        })
        .collect();
    MembershipReport { pass, slack, components }
}

pub fn certify_field(
    f: VecFn<'_>,
    din: usize,
    dout: usize,
    cls: &SmoothnessClass,
    region: &BoxRegion,
    opts: &CertifyOptions,
) -> MembershipReport {
    let m = measure_field(f, din, dout, cls.beta, region, opts);
    judge(&m, cls, opts.slack)
}

/// Per-component check of `|D^k f_j| <= L_k` and the Hoelder bound on `D^ell f_j`.
pub fn certify_membership(f: &ModelFunction, cls: &SmoothnessClass, region: &BoxRegion) -> MembershipReport {
    certify_membership_with(f, cls, region, &CertifyOptions::default())
}

pub fn certify_membership_with(
    f: &ModelFunction,
    cls: &SmoothnessClass,
    region: &BoxRegion,
    opts: &CertifyOptions,
) -> MembershipReport {
    let g = |x: &[f64], out: &mut [f64]| f.eval_into(x, out);
    certify_field(&g, f.dim, f.dim, cls, region, opts)
}

/// Periodicized kernel `K_per(y) = K(2(y - floor y) - 1)`; support `(0, 1)` mod 1.
pub fn periodic_kernel(y: f64) -> f64 {
    standard_kernel(2.0 * (y - y.floor()) - 1.0)
}

pub fn periodic_kernel_derivative(y: f64, k: usize) -> f64 {
    2f64.powi(k as i32) * standard_kernel_derivative(2.0 * (y - y.floor()) - 1.0, k)
}

/// `|K_per'|_inf`, attained at `y* = (1 - 3^{-1/4})/2`.
pub fn periodic_slope_sup() -> f64 {
    periodic_kernel_derivative(periodic_slope_argmax(), 1).abs()
}

pub fn periodic_slope_argmax() -> f64 {
    (1.0 - kernel_slope_argmax()) / 2.0
}

/// Parameters of `g(x) = x + L r^(beta+1) K_per((x - z)/r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicBumpParams {
    pub beta: f64,
    pub l: f64,
    pub r: f64,
    pub z: f64,
}

/// `f_1(x) = (2/3) L_0 g'(g^{-1}(x))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainRemainder {
    pub params: PeriodicBumpParams,
    pub l0: f64,
    /// `L r^(beta+1) |K_per|_inf`, the largest displacement `g(x) - x`.
    pub max_displacement: f64,
}

impl ChainRemainder {
    pub fn g(&self, x: f64) -> f64 {
        let p = &self.params;
        x + p.l * p.r.powf(p.beta + 1.0) * periodic_kernel((x - p.z) / p.r)
    }

    pub fn g_prime(&self, x: f64) -> f64 {
        let p = &self.params;
        1.0 + p.l * p.r.powf(p.beta) * periodic_kernel_derivative((x - p.z) / p.r, 1)
    }

    /// Safeguarded Newton on the bracket `[y - A, y]`.
    pub fn g_inv(&self, y: f64) -> f64 {
        let (mut lo, mut hi) = (y - self.max_displacement, y);
        if self.max_displacement == 0.0 {
            return y;
        }
        let mut x = y - 0.5 * self.max_displacement;
        for _ in 0..200 {
            let r = self.g(x) - y;
            if r.abs() <= 2.0 * f64::EPSILON * y.abs().max(1.0) {
                return x;
            }
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let newton = x - r / self.g_prime(x);
            x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo <= 4.0 * f64::EPSILON * y.abs().max(1.0) {
                return x;
            }
        }
        x
    }

    /// `g^(k)(x)` for `k >= 1`.
    pub fn g_derivative(&self, x: f64, k: usize) -> f64 {
        let p = &self.params;
        let base = p.l * p.r.powf(p.beta + 1.0 - k as f64) * periodic_kernel_derivative((x - p.z) / p.r, k);
        if k == 1 {
            1.0 + base
        } else {
            base
        }
    }

    /// `(g^{-1})^(k)(y)` for `k = 1..=4` from the inverse-function rule.
    pub fn inverse_derivative(&self, y: f64, k: usize) -> Result<f64> {
        let x = self.g_inv(y);
        let g1 = self.g_derivative(x, 1);
        let g2 = self.g_derivative(x, 2);
        let g3 = self.g_derivative(x, 3);
        let g4 = self.g_derivative(x, 4);
        match k {
            0 => Ok(x),
            1 => Ok(1.0 / g1),
            2 => Ok(-g2 / g1.powi(3)),
            3 => Ok((3.0 * g2 * g2 - g1 * g3) / g1.powi(5)),
            4 => Ok((-15.0 * g2.powi(3) + 10.0 * g1 * g2 * g3 - g1 * g1 * g4) / g1.powi(7)),
            _ => Err(Error::TooLarge(k)),
        }
    }

    /// `k`-th derivative of the field by Faa di Bruno on `(2/3) L_0 g' o g^{-1}`, `k <= 4`.
    pub fn field_derivative(&self, y: f64, k: usize) -> Result<f64> {
        if k == 0 {
            return Ok(self.value(y));
        }
        if k > 4 {
            return Err(Error::TooLarge(k));
        }
        let c = 2.0 / 3.0 * self.l0;
        let outer: Vec<Box<dyn Fn(f64) -> f64 + '_>> =
            (0..=k).map(|j| Box::new(move |u: f64| c * self.g_derivative(u, j + 1)) as Box<dyn Fn(f64) -> f64>).collect();
        let inner_vals: Vec<f64> = (0..=k).map(|j| self.inverse_derivative(y, j)).collect::<Result<_>>()?;
        let inner: Vec<Box<dyn Fn(f64) -> f64 + '_>> = inner_vals
            .iter()
            .map(|v| {
                let v = *v;
                Box::new(move |_: f64| v) as Box<dyn Fn(f64) -> f64>
            })
            .collect();
        let o: Vec<Deriv<'_>> = outer.iter().map(|b| b.as_ref() as Deriv<'_>).collect();
        let i: Vec<Deriv<'_>> = inner.iter().map(|b| b.as_ref() as Deriv<'_>).collect();
        faa_di_bruno(&o, &i, k, y)
    }

    /// Scalar field value `(2/3) L_0 g'(g^{-1}(x))`.
    pub fn value(&self, x: f64) -> f64 {
        2.0 / 3.0 * self.l0 * self.g_prime(self.g_inv(x))
    }

    /// Closed-form flow `g(g^{-1}(x) + (2/3) L_0 t)`.
    pub fn flow(&self, x: f64, t: f64) -> f64 {
        self.g(self.g_inv(x) + 2.0 / 3.0 * self.l0 * t)
    }

    /// Field in `R^d` acting on coordinate 1.
    pub fn model(&self, d: usize) -> ModelFunction {
        let me = *self;
        let mf = *self;
        ModelFunction::new(d, "chain-remainder", move |x, out| {
            out.iter_mut().for_each(|o| *o = 0.0);
            out[0] = me.value(x[0]);
        })
        .with_flow(move |x, t| {
            let mut y = x.to_vec();
            y[0] = mf.flow(x[0], t);
            y
        })
    }
}

/// Builds the chain-remainder field; requires `L r^beta |K_per'| <= 1/2`.
pub fn chain_remainder_field(params: PeriodicBumpParams, l0: f64) -> Result<ChainRemainder> {
    if !(params.r > 0.0) || params.l < 0.0 || !(l0 > 0.0) || !(params.beta > 1.0) {
        return Err(Error::InvalidParameter("chain remainder needs r > 0, L >= 0, L_0 > 0, beta > 1".into()));
    }
    let slope = params.l * params.r.powf(params.beta) * periodic_slope_sup();
    if slope > 0.5 {
        return Err(Error::SlopeOutOfRange { slope });
    }
    let max_displacement = params.l * params.r.powf(params.beta + 1.0) * (-1.0f64).exp();
    Ok(ChainRemainder { params, l0, max_displacement })
}
