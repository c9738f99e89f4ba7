//! Observation schemes, Gaussian noise, assumption checks and the reduction machinery.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::flow::{self, ModelFunction};
use crate::geometry::halton_points;
use crate::hypotheses::{FamilyKind, HypothesisFamily};
use crate::region::BoxRegion;

/// Integration tolerance for every flow evaluated on a scheme.
pub const SCHEME_TOL: f64 = 1e-10;
/// Observation means closer than this in every coordinate count as equal in the likelihood-ratio test.
pub const COINCIDENCE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
}

/// Centered Gaussian with covariance `A`.
#[derive(Debug, Clone, Serialize)]
pub struct NoiseLaw {
    pub kind: NoiseKind,
    pub covariance: Vec<Vec<f64>>,
    pub lambda_min: f64,
    #[serde(skip)]
    precision: DMatrix<f64>,
    #[serde(skip)]
    chol: DMatrix<f64>,
}

impl PartialEq for NoiseLaw {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.covariance == other.covariance
    }
}

impl NoiseLaw {
    pub fn gaussian(covariance: Vec<Vec<f64>>) -> Result<Self> {
        let d = covariance.len();
        if d == 0 || covariance.iter().any(|row| row.len() != d) {
            return Err(Error::InvalidParameter("covariance must be a non-empty square matrix".into()));
        }
        let a = DMatrix::from_fn(d, d, |i, j| covariance[i][j]);
        if (0..d).any(|i| (0..d).any(|j| (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * a[(i, j)].abs().max(1.0))) {
            return Err(Error::SingularCovariance);
        }
        let lambda_min = a.clone().symmetric_eigenvalues().min();
        if !(lambda_min > 0.0) {
            return Err(Error::SingularCovariance);
        }
        let chol = a.clone().cholesky().ok_or(Error::SingularCovariance)?;
        let precision = chol.inverse();
        Ok(Self { kind: NoiseKind::Gaussian, covariance, lambda_min, precision, chol: chol.l() })
    }

    pub fn isotropic(d: usize, sigma2: f64) -> Result<Self> {
        Self::gaussian((0..d).map(|i| (0..d).map(|j| if i == j { sigma2 } else { 0.0 }).collect()).collect())
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let d = diag.len();
        Self::gaussian((0..d).map(|i| (0..d).map(|j| if i == j { diag[i] } else { 0.0 }).collect()).collect())
    }

    pub fn dim(&self) -> usize {
        self.covariance.len()
    }

    /// `1 / (2 lambda_min)`.
    pub fn c_noise(&self) -> f64 {
        0.5 / self.lambda_min
    }

    /// `A^{-1} v`.
    pub fn whiten(&self, v: &[f64]) -> Vec<f64> {
        (&self.precision * DVector::from_column_slice(v)).iter().copied().collect()
    }

    /// `v^T A^{-1} v / 2`.
    pub fn kl_of_shift(&self, v: &[f64]) -> f64 {
        let w = self.whiten(v);
        0.5 * v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Draws `L g` with `A = L L^T` and standard normal `g`.
    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        (&self.chol * DVector::from_vec(g)).iter().copied().collect()
    }
}

pub fn gaussian_kl(v1: &[f64], v2: &[f64], noise: &NoiseLaw) -> Result<f64> {
    if v1.len() != noise.dim() || v2.len() != noise.dim() {
        return Err(Error::InvalidParameter("mean vectors must match the noise dimension".into()));
    }
    let diff: Vec<f64> = v1.iter().zip(v2).map(|(a, b)| a - b).collect();
    Ok(noise.kl_of_shift(&diff))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Stubble,
    Snake,
}

/// Trajectories `x_j` observed at `t_{j,1} <= ... <= t_{j,n_j} = T_j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservationScheme {
    pub kind: SchemeKind,
    pub dim: usize,
    pub initial_conditions: Vec<Vec<f64>>,
    pub times: Vec<Vec<f64>>,
    pub noise: NoiseLaw,
    /// Equidistant step, when the scheme has one.
    pub delta_t: Option<f64>,
    /// Spacing of the initial-condition grid, when it is a grid.
    pub spacing: Option<f64>,
}

impl ObservationScheme {
    pub fn new(kind: SchemeKind, initial_conditions: Vec<Vec<f64>>, times: Vec<Vec<f64>>, noise: NoiseLaw) -> Result<Self> {
        let dim = noise.dim();
        if initial_conditions.is_empty() || initial_conditions.len() != times.len() {
            return Err(Error::InvalidParameter("need one time grid per initial condition".into()));
        }
        if initial_conditions.iter().any(|x| x.len() != dim) {
            return Err(Error::InvalidParameter("initial conditions must match the noise dimension".into()));
        }
        for ts in &times {
            if ts.is_empty() || ts[0] < 0.0 || ts.windows(2).any(|w| w[1] < w[0]) || ts.iter().any(|t| !t.is_finite()) {
                return Err(Error::InvalidParameter("observation times must be finite, nonnegative and sorted".into()));
            }
        }
        Ok(Self { kind, dim, initial_conditions, times, noise, delta_t: None, spacing: None })
    }

    pub fn m(&self) -> usize {
        self.initial_conditions.len()
    }

    pub fn n(&self) -> usize {
        self.times.iter().map(Vec::len).sum()
    }

    pub fn n_max(&self) -> usize {
        self.times.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn horizon(&self, j: usize) -> f64 {
        *self.times[j].last().expect("non-empty time grid")
    }

    pub fn t_max(&self) -> f64 {
        (0..self.m()).map(|j| self.horizon(j)).fold(0.0, f64::max)
    }

    pub fn t_sigma(&self) -> f64 {
        (0..self.m()).map(|j| self.horizon(j)).sum()
    }
}

/// `(K+1)^d` grid points of `[0,1]^d`, each observed at `i dt`, `i = 1..=n_per`.
pub fn build_stubble_scheme(k_grid: usize, n_per: usize, dt: f64, noise: NoiseLaw) -> Result<ObservationScheme> {
    if k_grid == 0 || n_per == 0 || !(dt > 0.0) {
        return Err(Error::InvalidParameter("need K_grid >= 1, n_per >= 1 and dt > 0".into()));
    }
    let d = noise.dim();
    let side = k_grid + 1;
    let m = side.pow(d as u32);
    let mut ics = Vec::with_capacity(m);
    for idx in 0..m {
        let mut rem = idx;
        let x: Vec<f64> = (0..d)
            .map(|_| {
                let k = rem % side;
                rem /= side;
                k as f64 / k_grid as f64
            })
            .collect();
        ics.push(x);
    }
    let ts: Vec<f64> = (1..=n_per).map(|i| i as f64 * dt).collect();
    let mut s = ObservationScheme::new(SchemeKind::Stubble, ics, vec![ts; m], noise)?;
    s.delta_t = Some(dt);
    s.spacing = Some(1.0 / k_grid as f64);
    Ok(s)
}

/// Straight snake trajectories for the drift `L_0 e_1`.
///
/// Starts at `x_1 = -2` with the other coordinates on a grid of `[-2, 3]^(d-1)` with spacing
/// `delta / sqrt(d-1)`; each runs for `5 / L_0` and is observed every `dt`.
pub fn build_snake_scheme(delta: f64, l0: f64, dt: f64, noise: NoiseLaw) -> Result<ObservationScheme> {
    let d = noise.dim();
    if d < 2 {
        return Err(Error::DimensionTooSmall(d));
    }
    if !(delta > 0.0) || !(l0 > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidParameter("need delta, L_0 and dt positive".into()));
    }
    let s = delta / ((d - 1) as f64).sqrt();
    let per = (5.0 / s + 1e-9).floor() as usize + 1;
    let m = per.pow((d - 1) as u32);
    let horizon = 5.0 / l0;
    let n_per = (horizon / dt).round().max(1.0) as usize;
    let ts: Vec<f64> = (1..=n_per).map(|i| if i == n_per { horizon } else { i as f64 * dt }).collect();
    let mut ics = Vec::with_capacity(m);
    for idx in 0..m {
        let mut rem = idx;
        let mut x = vec![-2.0; d];
        for xi in x.iter_mut().skip(1) {
            *xi = -2.0 + s * (rem % per) as f64;
            rem /= per;
        }
        ics.push(x);
    }
    let mut sch = ObservationScheme::new(SchemeKind::Snake, ics, vec![ts; m], noise)?;
    sch.delta_t = Some(dt);
    sch.spacing = Some(s);
    Ok(sch)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantCheck {
    pub pass: bool,
    pub declared: f64,
    pub smallest: f64,
}

fn cover_ratio_at(center: &[f64], pts: &[Vec<f64>], d: usize) -> f64 {
    let m = pts.len();
    let mut dist: Vec<f64> = pts.iter().map(|p| flow::dist(p, center)).collect();
    dist.sort_by(f64::total_cmp);
    let mut worst = 0.0f64;
    let mut i = 0;
    while i < m {
        let mut j = i;
        while j + 1 < m && dist[j + 1] == dist[i] {
            j += 1;
        }
        let count = j + 1;
        if count >= 2 {
            let ratio = if dist[i] == 0.0 { f64::INFINITY } else { count as f64 / (m as f64 * dist[i].powi(d as i32)) };
            worst = worst.max(ratio);
        }
        i = j + 1;
    }
    worst
}

/// Smallest `C_cvr` with `#{j : x_j in B(z,r)}/m <= max(1/m, C_cvr r^d)` over the candidate centers.
///
/// Candidates are the initial conditions, midpoints to their nearest neighbours, and a Halton net
/// of their bounding box. For each center the sup over `r` is exact.
pub fn check_cover(scheme: &ObservationScheme, declared: f64) -> ConstantCheck {
    let pts = &scheme.initial_conditions;
    let d = scheme.dim;
    if pts.len() < 2 {
        return ConstantCheck { pass: true, declared, smallest: 0.0 };
    }
    let mut centers: Vec<Vec<f64>> = pts.clone();
    for p in pts {
        let mut near: Vec<(f64, usize)> = pts.iter().enumerate().map(|(k, q)| (flow::dist(p, q), k)).collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, k) in near.iter().skip(1).take(2 * d) {
            centers.push(p.iter().zip(&pts[*k]).map(|(a, b)| 0.5 * (a + b)).collect());
        }
    }
    let lo: Vec<f64> = (0..d).map(|i| pts.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..d).map(|i| pts.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max)).collect();
    if lo.iter().zip(&hi).all(|(a, b)| b > a) {
        centers.extend(halton_points(&BoxRegion { lo, hi }, 1024));
    }
    let smallest = centers.par_iter().map(|c| cover_ratio_at(c, pts, d)).reduce(|| 0.0, f64::max);
    ConstantCheck { pass: smallest <= declared, declared, smallest }
}

/// Smallest `C_cvrtm` with `#{i : t_{j,i} in [a,b]} <= max(1, C (b-a) n / T_sigma)` per trajectory.
pub fn check_cover_time(scheme: &ObservationScheme, declared: f64) -> ConstantCheck {
    let rate = scheme.n() as f64 / scheme.t_sigma();
    let mut smallest = 0.0f64;
    for ts in &scheme.times {
        for i in 0..ts.len() {
            for k in i + 1..ts.len() {
                let count = (k - i + 1) as f64;
                let len = ts[k] - ts[i];
                let c = if len == 0.0 { f64::INFINITY } else { count / (len * rate) };
                smallest = smallest.max(c);
            }
        }
    }
    ConstantCheck { pass: smallest <= declared, declared, smallest }
}

/// Observation means `U(f, x_j, t_{j,i})` for every trajectory.
pub fn observation_means(f: &ModelFunction, scheme: &ObservationScheme) -> Result<Vec<Vec<Vec<f64>>>> {
    (0..scheme.m())
        .into_par_iter()
        .map(|j| trajectory_means(f, &scheme.initial_conditions[j], &scheme.times[j]))
        .collect()
}

fn trajectory_means(f: &ModelFunction, x: &[f64], ts: &[f64]) -> Result<Vec<Vec<f64>>> {
    if f.has_closed_form() {
        return Ok(ts.iter().map(|t| f.closed_form(x, *t).expect("closed form")).collect());
    }
    let horizon = *ts.last().expect("non-empty time grid");
    let traj = flow::integrate(f, x, horizon, SCHEME_TOL)?;
    ts.iter().map(|t| flow::flow_at(&traj, *t)).collect()
}

/// `sum_k KL(N(u_k(f1), A), N(u_k(f0), A))`.
pub fn scheme_kl(f0: &ModelFunction, f1: &ModelFunction, scheme: &ObservationScheme) -> Result<f64> {
    let a = observation_means(f0, scheme)?;
    let b = observation_means(f1, scheme)?;
    let mut total = 0.0;
    for (ta, tb) in a.iter().zip(&b) {
        for (u, v) in ta.iter().zip(tb) {
            total += gaussian_kl(u, v, &scheme.noise)?;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadiusVariant {
    Pointwise,
    Sup,
    Lp,
}

/// Parameters `psi^2 chi <= a_n r^gamma` of the generic lower bound for one scheme and family.
#[derive(Debug, Clone, Serialize)]
pub struct MasterInstance {
    pub scheme: ObservationScheme,
    pub family: HypothesisFamily,
    pub a_n: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub c_pack: f64,
    pub c_noise: f64,
    pub domain: BoxRegion,
}

/// Stubble instance with `a_n = |h|^2 C_cvr m n_max T_max^2 L_beta^2`, `C_cvr = 4^d`.
pub fn stubble_master(scheme: ObservationScheme, family: HypothesisFamily) -> Result<MasterInstance> {
    if family.kind != FamilyKind::StubbleBump || family.d != scheme.dim {
        return Err(Error::InvalidParameter("stubble instance needs a stubble family of matching dimension".into()));
    }
    let d = scheme.dim as f64;
    let c_cvr = 4f64.powf(d);
    let h = family.kernel_sup();
    let tm = scheme.t_max();
    let m = scheme.m() as f64;
    let a_n = h * h * c_cvr * m * scheme.n_max() as f64 * tm * tm * family.class.l_beta.powi(2);
    let rho_minus = (c_cvr * m).powf(-1.0 / d);
    let gamma = 2.0 * family.beta + d;
    let zeta = family.beta;
    let c_noise = scheme.noise.c_noise();
    Ok(MasterInstance {
        family: family.with_rho_minus(rho_minus),
        a_n,
        gamma,
        zeta,
        c_pack: 4f64.powf(-d),
        c_noise,
        domain: BoxRegion::unit_cube(scheme.dim),
        scheme,
    })
}

/// Snake instance for a scheme from [`build_snake_scheme`].
///
/// With grid spacing `s` and step `dt`, `chi <= (2r/s + 1)^(d-1) (2r/(L_0 dt) + 1)` which is at most
/// `3^d r^d / (s^(d-1) L_0 dt)` once `r >= max(s, L_0 dt)`; so
/// `a_n = c_beta^2 L_beta^2 3^d / (L_0^3 dt s^(d-1))` and `gamma = 2(beta+1) + d`.
pub fn snake_master(scheme: ObservationScheme, family: HypothesisFamily) -> Result<MasterInstance> {
    if family.kind != FamilyKind::SnakePulse || family.d != scheme.dim {
        return Err(Error::InvalidParameter("snake instance needs a snake family of matching dimension".into()));
    }
    let s = scheme.spacing.ok_or(Error::MissingField("spacing"))?;
    let dt = scheme.delta_t.ok_or(Error::MissingField("delta_t"))?;
    let d = scheme.dim as f64;
    let l0 = family.drift;
    let cb = family.snake_c_beta();
    let a_n = cb * cb * family.class.l_beta.powi(2) * 3f64.powf(d) / (l0.powi(3) * dt * s.powf(d - 1.0));
    let rho_minus = s.max(l0 * dt);
    let gamma = 2.0 * (family.beta + 1.0) + d;
    let zeta = family.beta + 1.0;
    let c_noise = scheme.noise.c_noise();
    Ok(MasterInstance {
        family: family.with_rho_minus(rho_minus),
        a_n,
        gamma,
        zeta,
        c_pack: 4f64.powf(-d),
        c_noise,
        domain: BoxRegion::unit_cube(scheme.dim),
        scheme,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiChi {
    pub r: f64,
    pub psi: f64,
    pub chi: usize,
    pub psi_z: Vec<f64>,
    pub chi_z: Vec<f64>,
    pub envelope: f64,
}

impl PsiChi {
    pub fn product(&self) -> f64 {
        self.psi * self.psi * self.chi as f64
    }
}

impl MasterInstance {
    /// Sampled centers plus alignment candidates: an initial condition near the middle, the
    /// midpoint between two grid neighbours and, for snakes, an observation location.
    pub fn z_candidates(&self, z_samples: usize) -> Vec<Vec<f64>> {
        let mut zs = halton_points(&self.domain, z_samples);
        let mid = vec![0.5; self.scheme.dim];
        let inside: Vec<&Vec<f64>> = match self.scheme.kind {
            SchemeKind::Stubble => self.scheme.initial_conditions.iter().collect(),
            SchemeKind::Snake => Vec::new(),
        };
        if let Some(c) = inside.iter().min_by(|a, b| flow::dist(a, &mid).total_cmp(&flow::dist(b, &mid))) {
            zs.push((*c).clone());
            if let Some(s) = self.scheme.spacing {
                let mut m2 = (*c).clone();
                for v in m2.iter_mut() {
                    *v += 0.5 * s;
                }
                zs.push(m2);
            }
        }
        if self.scheme.kind == SchemeKind::Snake {
            let s = self.scheme.spacing.unwrap_or(0.0);
            let dt = self.scheme.delta_t.unwrap_or(0.0);
            let x2 = -2.0 + s * ((2.5 / s.max(1e-300)).round());
            let x1 = -2.0 + self.family.drift * dt * ((2.5 / (self.family.drift * dt).max(1e-300)).round());
            let mut z = mid.clone();
            z[0] = x1;
            z[1] = x2;
            zs.push(z.clone());
            z[1] = x2 + 0.5 * s;
            zs.push(z);
        }
        zs
    }

    /// Empirical `sup_z sup_k |u_k(z,r) - u_k(0)|` and `sup_z #{k : q_k in B(z,r)}`.
    pub fn psi_chi_measure(&self, r: f64, z_samples: usize) -> Result<PsiChi> {
        let zs = self.z_candidates(z_samples);
        let per: Vec<(f64, usize)> = zs.par_iter().map(|z| self.psi_chi_at(z, r)).collect::<Result<_>>()?;
        let mut psi = 0.0f64;
        let mut chi = 0usize;
        let (mut psi_z, mut chi_z) = (zs[0].clone(), zs[0].clone());
        for (z, (p, c)) in zs.iter().zip(&per) {
            if *p > psi {
                psi = *p;
                psi_z = z.clone();
            }
            if *c > chi {
                chi = *c;
                chi_z = z.clone();
            }
        }
        Ok(PsiChi { r, psi, chi, psi_z, chi_z, envelope: self.a_n * r.powf(self.gamma) })
    }

    fn psi_chi_at(&self, z: &[f64], r: f64) -> Result<(f64, usize)> {
        let f1 = self.family.alternative(z, r);
        let f0 = self.family.null();
        let mut psi = 0.0f64;
        let mut chi = 0usize;
        for (x, ts) in self.scheme.initial_conditions.iter().zip(&self.scheme.times) {
            // Trajectories that never come within r of z are unaffected by the perturbation.
            let reach: f64 = match self.family.kind {
                FamilyKind::StubbleBump => flow::dist(x, z),
                FamilyKind::SnakePulse => x.iter().zip(z).skip(1).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(),
            };
            if reach > r {
                continue;
            }
            let u1 = trajectory_means(&f1, x, ts)?;
            let u0 = trajectory_means(&f0, x, ts)?;
            for (a, b) in u1.iter().zip(&u0) {
                psi = psi.max(flow::dist(a, b));
                let q = match self.family.kind {
                    FamilyKind::StubbleBump => x.as_slice(),
                    FamilyKind::SnakePulse => a.as_slice(),
                };
                if flow::dist(q, z) <= r {
                    chi += 1;
                }
            }
        }
        Ok((psi, chi))
    }

    pub fn radius(&self, variant: RadiusVariant) -> Result<f64> {
        choose_master_radius(self.a_n, self.c_noise, self.gamma, variant, self.scheme.dim, self.family.rho_minus, self.family.rho_plus)
    }
}

/// `r_n` of the generic bound: `(2 C a_n)^(-1/gamma)`, `(C_KL log(a_n)/a_n)^(1/gamma)` with
/// `C_KL = d_q / (12 gamma C)`, or `(36 C a_n)^(-1/gamma)`; checked against `[rho_minus, rho_plus)`.
pub fn choose_master_radius(
    a_n: f64,
    c_noise: f64,
    gamma: f64,
    variant: RadiusVariant,
    d_q: usize,
    rho_minus: f64,
    rho_plus: f64,
) -> Result<f64> {
    let r = master_radius(a_n, c_noise, gamma, variant, d_q)?;
    if r < rho_minus {
        return Err(Error::RadiusOutOfRange { r, lo: rho_minus, hi: rho_plus, reason: "below rho_minus: too few observations".into() });
    }
    if r >= rho_plus {
        return Err(Error::RadiusOutOfRange { r, lo: rho_minus, hi: rho_plus, reason: "at or above rho_plus: a_n too small".into() });
    }
    Ok(r)
}

/// The radius formula alone, without the range check.
pub fn master_radius(a_n: f64, c_noise: f64, gamma: f64, variant: RadiusVariant, d_q: usize) -> Result<f64> {
    if !(a_n > 0.0) || !(c_noise > 0.0) || !(gamma > 0.0) {
        return Err(Error::InvalidParameter("a_n, C_noise and gamma must be positive".into()));
    }
    match variant {
        RadiusVariant::Pointwise => Ok((2.0 * c_noise * a_n).powf(-1.0 / gamma)),
        RadiusVariant::Lp => Ok((36.0 * c_noise * a_n).powf(-1.0 / gamma)),
        RadiusVariant::Sup => {
            if a_n <= 1.0 {
                return Err(Error::RadiusOutOfRange { r: f64::NAN, lo: 0.0, hi: 0.0, reason: format!("sup variant needs a_n > 1, got {a_n}") });
            }
            let c_kl = d_q as f64 / (12.0 * gamma * c_noise);
            Ok((c_kl * a_n.ln() / a_n).powf(1.0 / gamma))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeCam {
    pub kl: f64,
    pub certificate: f64,
    pub gaussian_error: f64,
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Certificate `1/4` when `kl <= 1/2`, else `0`; plus the Gaussian test error `Phi(-sqrt(kl/2))`.
pub fn lecam_two_point(kl: f64) -> LeCam {
    let kl = kl.max(0.0);
    LeCam { kl, certificate: if kl <= 0.5 { 0.25 } else { 0.0 }, gaussian_error: standard_normal_cdf(-(kl / 2.0).sqrt()) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fano {
    pub pass: bool,
    pub mean_kl: f64,
    pub threshold: f64,
    pub certificate: f64,
}

pub fn fano_many_point(kls: &[f64], m: usize) -> Result<Fano> {
    if m < 2 || kls.is_empty() {
        return Err(Error::InvalidParameter("need M >= 2 and at least one KL value".into()));
    }
    let mean_kl = kls.iter().sum::<f64>() / kls.len() as f64;
    let threshold = (m as f64).ln() / 3.0;
    let pass = mean_kl <= threshold;
    Ok(Fano { pass, mean_kl, threshold, certificate: if pass { 0.25 } else { 0.0 } })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarlo {
    pub trials: usize,
    pub error: f64,
    pub std_error: f64,
    pub kl: f64,
    pub exact: f64,
}

impl MonteCarlo {
    pub fn within(&self, k: f64) -> bool {
        (self.error - self.exact).abs() <= k * self.std_error.max(1e-300) || self.error == self.exact
    }
}

/// Empirical error of the likelihood-ratio test between the observation laws of `f0` and `f1`.
///
/// Each trial draws one sample under each hypothesis; the per-trial error is the mean of the two
/// misclassification indicators, ties going to `f0`. Trial `i` uses stream `i` of a ChaCha8
/// generator seeded with `seed`, so the result does not depend on the worker count.
pub fn monte_carlo_two_point(
    f0: &ModelFunction,
    f1: &ModelFunction,
    scheme: &ObservationScheme,
    trials: usize,
    seed: u64,
) -> Result<MonteCarlo> {
    if trials == 0 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    let a = observation_means(f0, scheme)?;
    let b = observation_means(f1, scheme)?;
    // Observations with equal means do not enter the log-likelihood ratio; integration error
    // alone must not make a coinciding pair distinguishable.
    let mut shifts: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut d2 = 0.0;
    for (ta, tb) in a.iter().zip(&b) {
        for (u, v) in ta.iter().zip(tb) {
            let delta: Vec<f64> = v.iter().zip(u).map(|(p, q)| p - q).collect();
            if delta.iter().any(|x| x.abs() > COINCIDENCE_TOL) {
                let w = scheme.noise.whiten(&delta);
                d2 += delta.iter().zip(&w).map(|(p, q)| p * q).sum::<f64>();
                shifts.push((delta, w));
            }
        }
    }
    let kl = 0.5 * d2;
    let noise = &scheme.noise;
    let errors: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            // S = sum_k w_k^T (y_k - (u0 + u1)/2); decide f1 iff S > 0.
            let (mut s0, mut s1) = (-0.5 * d2, 0.5 * d2);
            for (_, w) in &shifts {
                let e0 = noise.sample(&mut rng);
                let e1 = noise.sample(&mut rng);
                s0 += w.iter().zip(&e0).map(|(p, q)| p * q).sum::<f64>();
                s1 += w.iter().zip(&e1).map(|(p, q)| p * q).sum::<f64>();
            }
            let err0 = if s0 > 0.0 { 1.0 } else { 0.0 };
            let err1 = if s1 > 0.0 { 0.0 } else { 1.0 };
            0.5 * (err0 + err1)
        })
        .collect();
    let n = trials as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(MonteCarlo { trials, error: mean, std_error: (var / n).sqrt(), kl, exact: standard_normal_cdf(-(kl / 2.0).sqrt()) })
}

/// Parameter bundle for the rate formulas; absent fields are reported when a formula needs them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpec {
    pub beta: f64,
    pub d: usize,
    #[serde(default)]
    pub n: Option<f64>,
    #[serde(default)]
    pub m: Option<f64>,
    #[serde(default)]
    pub n_max: Option<f64>,
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default)]
    pub t_sigma: Option<f64>,
    #[serde(default)]
    pub delta_t: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateId {
    StubbleProb,
    StubbleProbSup,
    StubbleNice,
    StubbleOnlyn,
    SnakeProb,
    SnakeProbSup,
    SnakeCombined,
    SnakeCombinedNice,
    Regression,
    RegressionSup,
}

impl RateId {
    pub const ALL: [RateId; 10] = [
        RateId::StubbleProb,
        RateId::StubbleProbSup,
        RateId::StubbleNice,
        RateId::StubbleOnlyn,
        RateId::SnakeProb,
        RateId::SnakeProbSup,
        RateId::SnakeCombined,
        RateId::SnakeCombinedNice,
        RateId::Regression,
        RateId::RegressionSup,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RateId::StubbleProb => "stubble-prob",
            RateId::StubbleProbSup => "stubble-prob-sup",
            RateId::StubbleNice => "stubble-nice",
            RateId::StubbleOnlyn => "stubble-onlyn",
            RateId::SnakeProb => "snake-prob",
            RateId::SnakeProbSup => "snake-prob-sup",
            RateId::SnakeCombined => "snake-combined",
            RateId::SnakeCombinedNice => "snake-combined-nice",
            RateId::Regression => "regression",
            RateId::RegressionSup => "regression-sup",
        }
    }
}

fn need(v: Option<f64>, name: &'static str) -> Result<f64> {
    v.ok_or(Error::MissingField(name))
}

/// `(x / log x)` guarded for `x <= e`.
fn log_adjusted(x: f64) -> f64 {
    if x > std::f64::consts::E {
        x / x.ln()
    } else {
        x
    }
}

/// Step `n^(-1/(2(beta+1)+d))` at which both stubble terms balance.
pub fn balancing_delta(n: f64, beta: f64, d: usize) -> f64 {
    n.powf(-1.0 / (2.0 * (beta + 1.0) + d as f64))
}

pub fn rate_eval(spec: &RateSpec, which: RateId) -> Result<f64> {
    let b = spec.beta;
    let d = spec.d as f64;
    let g_reg = 2.0 * b + d;
    let g_ode = 2.0 * (b + 1.0) + d;
    let v = match which {
        RateId::StubbleProb | RateId::StubbleProbSup => {
            let x = need(spec.m, "m")? * need(spec.n_max, "n_max")? * need(spec.t_max, "t_max")?.powi(2);
            let x = if which == RateId::StubbleProbSup { log_adjusted(x) } else { x };
            x.powf(-b / g_reg)
        }
        RateId::StubbleNice => {
            let n = need(spec.n, "n")?;
            let dt = need(spec.delta_t, "delta_t")?;
            (n * dt * dt).powf(-2.0 * b / g_reg) + dt.powf(2.0 * b)
        }
        RateId::StubbleOnlyn => need(spec.n, "n")?.powf(-2.0 * b / g_ode),
        RateId::SnakeProb | RateId::SnakeProbSup => {
            let x = need(spec.delta, "delta")?.powf(-(d - 1.0)) * need(spec.n, "n")? / need(spec.t_sigma, "t_sigma")?;
            let x = if which == RateId::SnakeProbSup { log_adjusted(x) } else { x };
            x.powf(-b / g_ode)
        }
        RateId::SnakeCombined => {
            let delta = need(spec.delta, "delta")?;
            let x = delta.powf(-(d - 1.0)) * need(spec.n, "n")? / need(spec.t_sigma, "t_sigma")?;
            delta.powf(2.0 * b) + x.powf(-2.0 * b / g_ode)
        }
        RateId::SnakeCombinedNice => {
            // delta = n^(-1/g) and T_sigma = delta^-(d-1) make both terms equal; the bound is their common value.
            let n = need(spec.n, "n")?;
            let delta = balancing_delta(n, b, spec.d);
            let t_sigma = delta.powf(-(d - 1.0));
            let x = delta.powf(-(d - 1.0)) * n / t_sigma;
            delta.powf(2.0 * b).max(x.powf(-2.0 * b / g_ode))
        }
        RateId::Regression | RateId::RegressionSup => {
            let n = need(spec.n, "n")?;
            let s = need(spec.s, "s")?;
            let x = if which == RateId::RegressionSup { log_adjusted(n) } else { n };
            x.powf(-(b - s) / g_reg)
        }
    };
    Ok(v)
}

/// `E nu(d(theta_hat, theta)) >= p nu(s)` with `nu(s) = s^exponent`.
pub fn expectation_reduction(prob_bound: f64, s: f64, exponent: f64) -> f64 {
    prob_bound * s.powf(exponent)
}
