//! Tubes around trajectories, covering checks, packings and binary codes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::Trajectory;
use crate::region::BoxRegion;

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `index` in `base`.
pub fn halton(mut index: u64, base: u32) -> f64 {
    let b = base as f64;
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= b;
        r += f * (index % base as u64) as f64;
        index /= base as u64;
    }
    r
}

/// Halton points 1..=n mapped into `region`.
pub fn halton_points(region: &BoxRegion, n: usize) -> Vec<Vec<f64>> {
    let d = region.dim();
    assert!(d <= PRIMES.len(), "Halton sampler supports up to {} dimensions", PRIMES.len());
    (1..=n as u64)
        .map(|i| {
            let u: Vec<f64> = (0..d).map(|j| halton(i, PRIMES[j])).collect();
            region.from_unit(&u)
        })
        .collect()
}

pub const DEFAULT_TIME_GRID: usize = 2048;

/// Trajectory sampled on a uniform time grid; samples with vanishing velocity are inactive.
#[derive(Debug, Clone)]
pub struct TubeSamples {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub active: Vec<bool>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TubeSpec {
    pub trajectory: Trajectory,
    pub radius: f64,
    samples: TubeSamples,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sample_trajectory(traj: &Trajectory, grid: usize) -> Result<TubeSamples> {
    let grid = grid.max(2);
    let (a, b) = (traj.t_min(), traj.t_max());
    let d = traj.dim();
    let mut s = TubeSamples {
        t: Vec::with_capacity(grid + 1),
        x: Vec::with_capacity(grid + 1),
        v: Vec::with_capacity(grid + 1),
        active: Vec::with_capacity(grid + 1),
        lo: vec![f64::INFINITY; d],
        hi: vec![f64::NEG_INFINITY; d],
    };
    for i in 0..=grid {
        let t = if i == grid { b } else { a + (b - a) * i as f64 / grid as f64 };
        let (x, v) = traj.state_and_velocity(t)?;
        for j in 0..d {
            s.lo[j] = s.lo[j].min(x[j]);
            s.hi[j] = s.hi[j].max(x[j]);
        }
        s.t.push(t);
        s.x.push(x);
        s.v.push(v);
    }
    let vmax = s.v.iter().map(|v| dot(v, v).sqrt()).fold(0.0, f64::max);
    let floor = 1e-10 * vmax;
    s.active = s.v.iter().map(|v| vmax > 0.0 && dot(v, v).sqrt() > floor).collect();
    Ok(s)
}

impl TubeSpec {
    pub fn new(trajectory: Trajectory, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidParameter(format!("tube radius must be positive, got {radius}")));
        }
        let samples = sample_trajectory(&trajectory, DEFAULT_TIME_GRID)?;
        Ok(Self { trajectory, radius, samples })
    }

    pub fn samples(&self) -> &TubeSamples {
        &self.samples
    }

    fn is_empty(&self) -> bool {
        !self.samples.active.iter().any(|a| *a)
    }

    /// Bounding box of the sampled trajectory grown by `pad`, contains `x`?
    fn near(&self, x: &[f64], pad: f64) -> bool {
        x.iter().enumerate().all(|(j, v)| *v >= self.samples.lo[j] - pad && *v <= self.samples.hi[j] + pad)
    }

    /// `min ||x - u(t)||` over times where `x - u(t)` is orthogonal to `u'(t)`.
    ///
    /// `None` when `x` lies in no orthogonal slice at all.
    pub fn slice_radius(&self, x: &[f64]) -> Option<f64> {
        let s = &self.samples;
        let phi = |xt: &[f64], vt: &[f64]| -> f64 { xt.iter().zip(x).zip(vt).map(|((u, p), v)| (p - u) * v).sum() };
        let mut best: Option<f64> = None;
        let mut take = |r: f64| best = Some(best.map_or(r, |b: f64| b.min(r)));
        let mut prev: Option<(usize, f64)> = None;
        for i in 0..s.t.len() {
            if !s.active[i] {
                prev = None;
                continue;
            }
            let p = phi(&s.x[i], &s.v[i]);
            if p == 0.0 {
                take(crate::flow::dist(x, &s.x[i]));
            }
            if let Some((j, pj)) = prev {
                if pj * p < 0.0 {
                    let (mut a, mut b, mut fa) = (s.t[j], s.t[i], pj);
                    for _ in 0..40 {
                        let mid = 0.5 * (a + b);
                        let Ok((xm, vm)) = self.trajectory.state_and_velocity(mid) else { break };
                        let fm = phi(&xm, &vm);
                        if fm == 0.0 {
                            a = mid;
                            b = mid;
                            break;
                        }
                        if (fm < 0.0) == (fa < 0.0) {
                            a = mid;
                            fa = fm;
                        } else {
                            b = mid;
                        }
                    }
                    if let Ok((xm, _)) = self.trajectory.state_and_velocity(0.5 * (a + b)) {
                        take(crate::flow::dist(x, &xm));
                    }
                }
            }
            prev = Some((i, p));
        }
        best
    }
}

/// Distance from `x` to the disc through `u` orthogonal to `v` with radius `delta`.
fn disc_distance(x: &[f64], u: &[f64], v: &[f64], delta: f64) -> f64 {
    let vn = dot(v, v).sqrt();
    let w: Vec<f64> = x.iter().zip(u).map(|(a, b)| a - b).collect();
    let a = dot(&w, v) / vn;
    let perp2 = (dot(&w, &w) - a * a).max(0.0);
    let excess = (perp2.sqrt() - delta).max(0.0);
    (a * a + excess * excess).sqrt()
}

/// Euclidean distance from `x` to the tube, minimized over `grid` sample times and refined once.
pub fn point_tube_distance(x: &[f64], tube: &TubeSpec, grid: usize) -> Result<f64> {
    let s = if grid == DEFAULT_TIME_GRID { tube.samples.clone() } else { sample_trajectory(&tube.trajectory, grid)? };
    if !s.active.iter().any(|a| *a) {
        return Err(Error::EmptyTube);
    }
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for i in 0..s.t.len() {
        if s.active[i] {
            let dd = disc_distance(x, &s.x[i], &s.v[i], tube.radius);
            if dd < best {
                best = dd;
                arg = i;
            }
        }
    }
    let lo = s.t[arg.saturating_sub(1)];
    let hi = s.t[(arg + 1).min(s.t.len() - 1)];
    let vmax = s.v.iter().map(|v| dot(v, v).sqrt()).fold(0.0, f64::max);
    let at = |t: f64| -> Result<f64> {
        let (u, v) = tube.trajectory.state_and_velocity(t)?;
        Ok(if dot(&v, &v).sqrt() > 1e-10 * vmax { disc_distance(x, &u, &v, tube.radius) } else { f64::INFINITY })
    };
    // Golden-section search on the bracket around the best sample.
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (at(c)?, at(d)?);
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = at(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = at(d)?;
        }
        if b - a <= 1e-15 * (1.0 + b.abs()) {
            break;
        }
    }
    best = best.min(fc).min(fd);
    Ok(best)
}

/// Smallest uniform radius whose tubes contain every sampled point of `domain`.
pub fn tube_distance(domain: &BoxRegion, tubes: &[TubeSpec], sample: usize) -> Result<f64> {
    if tubes.is_empty() || tubes.iter().all(|t| t.is_empty()) {
        return Err(Error::EmptyTube);
    }
    let pts = halton_points(domain, sample);
    let worst = pts
        .par_iter()
        .map(|p| tubes.iter().filter_map(|t| t.slice_radius(p)).fold(f64::INFINITY, f64::min))
        .reduce(|| 0.0, f64::max);
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverCheck {
    pub pass: bool,
    pub delta: f64,
    pub sample: usize,
    pub uncovered: usize,
    pub worst_point: Option<Vec<f64>>,
    pub worst_radius: f64,
}

/// Orthogonal-slice membership of every Halton point of `domain` in some tube of radius `delta`.
pub fn tube_cover_check(domain: &BoxRegion, tubes: &[TubeSpec], delta: f64, sample: usize) -> CoverCheck {
    let pts = halton_points(domain, sample);
    let radii: Vec<f64> = pts
        .par_iter()
        .map(|p| {
            let covered = tubes.iter().any(|t| t.near(p, delta) && t.slice_radius(p).is_some_and(|r| r <= delta));
            if covered {
                0.0
            } else {
                tubes.iter().filter_map(|t| t.slice_radius(p)).fold(f64::INFINITY, f64::min)
            }
        })
        .collect();
    let mut uncovered = 0;
    let mut worst: Option<usize> = None;
    for (i, r) in radii.iter().enumerate() {
        if *r > 0.0 {
            uncovered += 1;
            if worst.is_none_or(|w| *r > radii[w]) {
                worst = Some(i);
            }
        }
    }
    CoverCheck {
        pass: uncovered == 0,
        delta,
        sample,
        uncovered,
        worst_point: worst.map(|i| pts[i].clone()),
        worst_radius: worst.map_or(0.0, |i| radii[i]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Packing {
    pub count: usize,
    pub centers: Vec<Vec<f64>>,
}

/// Axis-aligned grid packing with `prod floor(side/(2r))` disjoint `r`-balls.
pub fn packing_number(domain: &BoxRegion, r: f64) -> Result<Packing> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidParameter(format!("packing radius must be positive, got {r}")));
    }
    if r > domain.diameter() {
        return Err(Error::RadiusTooLarge { r });
    }
    let d = domain.dim();
    let per: Vec<usize> = (0..d).map(|i| (domain.side(i) / (2.0 * r)).floor() as usize).collect();
    let count: usize = per.iter().product();
    let mut centers = Vec::with_capacity(count.min(1 << 20));
    if count > 0 && count <= 1 << 20 {
        for idx in 0..count {
            let mut rem = idx;
            let c: Vec<f64> = (0..d)
                .map(|i| {
                    let k = rem % per[i];
                    rem /= per[i];
                    domain.lo[i] + r * (2 * k + 1) as f64
                })
                .collect();
            centers.push(c);
        }
    }
    Ok(Packing { count, centers })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BinaryCode {
    pub length: usize,
    pub words: Vec<u64>,
    pub min_distance: usize,
}

impl BinaryCode {
    /// Minimum pairwise Hamming distance by direct scan.
    pub fn measured_distance(&self) -> usize {
        let mut m = self.length;
        for i in 0..self.words.len() {
            for j in i + 1..self.words.len() {
                m = m.min((self.words[i] ^ self.words[j]).count_ones() as usize);
            }
        }
        m
    }

    pub fn verify(&self) -> bool {
        let mask = if self.length == 64 { u64::MAX } else { (1u64 << self.length) - 1 };
        self.words.contains(&0)
            && self.words.iter().all(|w| w & !mask == 0)
            && self.measured_distance() >= self.min_distance
    }

    pub fn bits(&self, i: usize) -> Vec<bool> {
        (0..self.length).map(|b| self.words[i] >> b & 1 == 1).collect()
    }
}

/// Code of length `eta` with at least `2^ceil(eta/8)` words at pairwise distance `ceil(eta/8)`.
pub fn varshamov_gilbert(eta: usize, seed: u64) -> Result<BinaryCode> {
    if !(8..=64).contains(&eta) {
        return Err(Error::InvalidParameter(format!("code length must lie in 8..=64, got {eta}")));
    }
    let dist = eta.div_ceil(8);
    let want = 1usize << dist;
    let far = |words: &[u64], c: u64| words.iter().all(|w| ((w ^ c).count_ones() as usize) >= dist);
    let mut words = vec![0u64];
    if eta <= 20 {
        for c in 1..(1u64 << eta) {
            if words.len() >= want {
                break;
            }
            if far(&words, c) {
                words.push(c);
            }
        }
    } else {
        let mask = if eta == 64 { u64::MAX } else { (1u64 << eta) - 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tries = 0;
        while words.len() < want && tries < 1_000_000 {
            let c = rng.random::<u64>() & mask;
            if far(&words, c) {
                words.push(c);
            }
            tries += 1;
        }
    }
    if words.len() < want {
        return Err(Error::SearchFailed { eta });
    }
    Ok(BinaryCode { length: eta, words, min_distance: dist })
}
