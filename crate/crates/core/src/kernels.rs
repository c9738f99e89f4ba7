//! The standard compactly supported kernel and the bump/pulse reference functions.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::region::BoxRegion;
use crate::smoothness::{self, strict_floor, CertifyOptions, SmoothnessClass};

/// `exp(-1/(1-w^2))` on `(-1, 1)`, zero elsewhere.
pub fn standard_kernel(w: f64) -> f64 {
    if w.abs() < 1.0 {
        let q = 1.0 - w * w;
        (-1.0 / q).exp()
    } else {
        0.0
    }
}

/// Exact `k`-th derivative of the standard kernel.
///
/// Uses `K^(k)(w) = K(w) P_k(w) / (1-w^2)^(2k)` with
/// `P_{k+1} = -2w P_k + (1-w^2)^2 P_k' + 4k w (1-w^2) P_k`.
pub fn standard_kernel_derivative(w: f64, k: usize) -> f64 {
    if w.abs() >= 1.0 {
        return 0.0;
    }
    let q = 1.0 - w * w;
    let base = (-1.0 / q).exp();
    if base == 0.0 {
        return 0.0;
    }
    let p = kernel_polynomial(k);
    let mut val = 0.0;
    for c in p.iter().rev() {
        val = val * w + c;
    }
    base * val / q.powi(2 * k as i32)
}

fn kernel_polynomial(k: usize) -> Vec<f64> {
    static CACHE: OnceLock<Mutex<Vec<Vec<f64>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(vec![vec![1.0]]));
    let mut polys = cache.lock().expect("kernel polynomial cache");
    while polys.len() <= k {
        let j = polys.len() - 1;
        let p = &polys[j];
        let mut next = vec![0.0; p.len() + 3];
        // -2w P
        for (i, c) in p.iter().enumerate() {
            next[i + 1] -= 2.0 * c;
        }
        // (1 - 2w^2 + w^4) P'
        for i in 1..p.len() {
            let dc = i as f64 * p[i];
            next[i - 1] += dc;
            next[i + 1] -= 2.0 * dc;
            next[i + 3] += dc;
        }
        // 4j (w - w^3) P
        let f = 4.0 * j as f64;
        for (i, c) in p.iter().enumerate() {
            next[i + 1] += f * c;
            next[i + 3] -= f * c;
        }
        while next.len() > 1 && next[next.len() - 1] == 0.0 {
            next.pop();
        }
        polys.push(next);
    }
    polys[k].clone()
}

/// Location of the maximum of `|K'|` on `(0, 1)`, from `3 w^4 = 1`.
pub fn kernel_slope_argmax() -> f64 {
    3f64.powf(-0.25)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Bump,
    Pulse,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Bump => "bump",
            KernelKind::Pulse => "pulse",
        }
    }

    /// Power of `alpha` in the induced function.
    fn alpha_power(self) -> i32 {
        match self {
            KernelKind::Bump => 1,
            KernelKind::Pulse => 2,
        }
    }
}

/// `h_bump(x) = alpha K(|x|)` or `h_pulse(x) = alpha K(|x|) * alpha K'(x_1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub beta: f64,
    pub alpha: f64,
    pub kind: KernelKind,
    pub dim: usize,
}

impl KernelSpec {
    pub fn new(beta: f64, alpha: f64, kind: KernelKind, dim: usize) -> Result<Self> {
        if !(beta > 1.0) || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!("beta must exceed 1, got {beta}")));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        Ok(Self { beta, alpha, kind, dim })
    }

    /// Kernel with `alpha` from [`calibrate_alpha`].
    pub fn calibrated(beta: f64, kind: KernelKind, dim: usize) -> Result<Self> {
        let alpha = calibrate_alpha(beta, dim, kind)?;
        Self::new(beta, alpha, kind, dim)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let n2: f64 = x.iter().map(|v| v * v).sum();
        self.from_parts(n2, x[0])
    }

    /// `h((x - z)/r)` without materializing the rescaled point.
    pub fn eval_scaled(&self, x: &[f64], z: &[f64], r: f64) -> f64 {
        let mut n2 = 0.0;
        for i in 0..x.len() {
            let w = (x[i] - z[i]) / r;
            n2 += w * w;
        }
        self.from_parts(n2, (x[0] - z[0]) / r)
    }

    fn from_parts(&self, n2: f64, first: f64) -> f64 {
        if n2 >= 1.0 {
            return 0.0;
        }
        let radial = self.alpha * (-1.0 / (1.0 - n2)).exp();
        match self.kind {
            KernelKind::Bump => radial,
            KernelKind::Pulse => radial * self.alpha * standard_kernel_derivative(first, 1),
        }
    }

    /// Box slightly larger than the closed unit ball.
    pub fn region(&self) -> BoxRegion {
        BoxRegion::around(&vec![0.0; self.dim], 1.05)
    }
}

pub fn bump_eval(spec: &KernelSpec, x: &[f64]) -> f64 {
    debug_assert_eq!(spec.kind, KernelKind::Bump);
    spec.eval(x)
}

pub fn pulse_eval(spec: &KernelSpec, x: &[f64]) -> f64 {
    debug_assert_eq!(spec.kind, KernelKind::Pulse);
    spec.eval(x)
}

type CalKey = (u64, usize, KernelKind);

fn calibration_cache() -> &'static Mutex<HashMap<CalKey, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<CalKey, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn supnorm_cache() -> &'static Mutex<HashMap<(u64, u64, usize, KernelKind), Vec<f64>>> {
    static CACHE: OnceLock<Mutex<HashMap<(u64, u64, usize, KernelKind), Vec<f64>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Largest `alpha = 2^-k` whose induced function certifies in `Sigma(beta, 1)`.
///
/// Derivative sups and the Hoelder quotient are measured once at `alpha = 1`; they scale
/// exactly with `alpha` (bump) or `alpha^2` (pulse). The chosen value is then re-certified.
pub fn calibrate_alpha(beta: f64, dim: usize, kind: KernelKind) -> Result<f64> {
    let key = (beta.to_bits(), dim, kind);
    if let Some(a) = calibration_cache().lock().expect("calibration cache").get(&key) {
        return Ok(*a);
    }
    let unit = KernelSpec::new(beta, 1.0, kind, dim)?;
    let cls = SmoothnessClass::uniform(beta, 1.0, dim, 1)?;
    let opts = CertifyOptions::default();
    let region = unit.region();
    let f = move |x: &[f64], out: &mut [f64]| out[0] = unit.eval(x);
    let m = smoothness::measure_field(&f, dim, 1, beta, &region, &opts);
    let worst = m.components[0].sup_norms.iter().copied().fold(m.components[0].holder_quotient, f64::max);
    let p = kind.alpha_power();
    let mut chosen = None;
    for k in 0..=60 {
        let a = 2f64.powi(-k);
        if a.powi(p) * worst <= 1.0 {
            chosen = Some(a);
            break;
        }
    }
    let fail = || Error::CalibrationFailed { beta, dim, kind: kind.name().into() };
    let alpha = chosen.ok_or_else(fail)?;
    let spec = KernelSpec::new(beta, alpha, kind, dim)?;
    let g = move |x: &[f64], out: &mut [f64]| out[0] = spec.eval(x);
    let report = smoothness::certify_field(&g, dim, 1, &cls, &region, &opts);
    if !report.pass {
        return Err(fail());
    }
    calibration_cache().lock().expect("calibration cache").insert(key, alpha);
    Ok(alpha)
}

/// Measured `|D^k h|_inf` for `k = 0..=ell`.
pub fn kernel_supnorms(spec: &KernelSpec) -> Vec<f64> {
    let key = (spec.beta.to_bits(), spec.alpha.to_bits(), spec.dim, spec.kind);
    if let Some(v) = supnorm_cache().lock().expect("supnorm cache").get(&key) {
        return v.clone();
    }
    let ell = strict_floor(spec.beta);
    let s = *spec;
    let f = move |x: &[f64]| s.eval(x);
    let region = spec.region();
    let opts = CertifyOptions::default();
    let v: Vec<f64> = (0..=ell).map(|k| smoothness::derivative_supnorm_with(&f, k, &region, &opts)).collect();
    supnorm_cache().lock().expect("supnorm cache").insert(key, v.clone());
    v
}

/// `min_k ((L_k - |b| [k=0]) / (L_beta |D^k h|))^(1/(beta-k))` over `k = 0..=ell`.
pub fn r_max(beta: f64, l: &[f64], l_beta: f64, kernel: &KernelSpec, b: f64) -> Result<f64> {
    let ell = strict_floor(beta);
    if l.len() != ell + 1 {
        return Err(Error::InvalidParameter(format!("expected {} constants L_0..L_ell, got {}", ell + 1, l.len())));
    }
    if l.iter().any(|v| !(*v > 0.0)) || !(l_beta > 0.0) {
        return Err(Error::InvalidParameter("class constants must be positive".into()));
    }
    if b.abs() >= l[0] {
        return Err(Error::InvalidOffset { b, l0: l[0] });
    }
    let sup = kernel_supnorms(kernel);
    let mut r = f64::INFINITY;
    for k in 0..=ell {
        let num = l[k] - if k == 0 { b.abs() } else { 0.0 };
        if sup[k] > 0.0 {
            r = r.min((num / (l_beta * sup[k])).powf(1.0 / (beta - k as f64)));
        }
    }
    Ok(r)
}
