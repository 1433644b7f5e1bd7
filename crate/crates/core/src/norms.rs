//! Parabolic metric, Hölder seminorms, the negative norm, modelledness, and log-log fits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, PhysicalField, SpectralField};
use crate::heat::{Component, ModelFamily};
use crate::rng::{Purpose, SeedSpec};
use crate::semigroup::mollify;
use crate::stats::linear_fit;

#[inline]
fn per(d: f64) -> f64 {
    let d = d.abs().rem_euclid(1.0);
    d.min(1.0 - d)
}

/// `d(x,y) = |x1 - y1| + sqrt|x2 - y2|` with periodic wrap in both coordinates.
pub fn parabolic_distance(x: (f64, f64), y: (f64, f64)) -> f64 {
    per(x.0 - y.0) + per(x.1 - y.1).sqrt()
}

/// Distance for an integer offset on the grid.
#[inline]
pub fn offset_distance(grid: &GridSpec, d1: i64, d2: i64) -> f64 {
    per(d1 as f64 * grid.h1()) + per(d2 as f64 * grid.h2()).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HolderParams {
    pub pair_budget: usize,
    pub base_point_stride: usize,
    pub seed: u64,
}

impl Default for HolderParams {
    fn default() -> Self {
        HolderParams {
            pair_budget: 20_000,
            base_point_stride: 4,
            seed: 0x5eed,
        }
    }
}

fn wrap(i: usize, d: i64, n: usize) -> usize {
    (i as i64 + d).rem_euclid(n as i64) as usize
}

/// Largest `|u(x) - u(y)| / d(x,y)^α` over all nearest-neighbour pairs and, per dyadic
/// scale, `pair_budget` stratified random pairs.
pub fn holder_seminorm(u: &PhysicalField, alpha: f64, params: &HolderParams) -> f64 {
    let g = *u.grid();
    let (n1, n2) = (g.n1(), g.n2());
    let vals = u.values();
    let quotient = |idx: usize, d1: i64, d2: i64| -> f64 {
        if d1 == 0 && d2 == 0 {
            return 0.0;
        }
        let (i1, i2) = g.split(idx);
        let j = g.index(wrap(i1, d1, n1), wrap(i2, d2, n2));
        (vals[idx] - vals[j]).abs() / offset_distance(&g, d1, d2).powf(alpha)
    };
    let nn = (0..g.len())
        .into_par_iter()
        .map(|idx| quotient(idx, 1, 0).max(quotient(idx, 0, 1)))
        .reduce(|| 0.0, f64::max);
    let levels: Vec<u32> = (0..)
        .take_while(|&l| {
            let r = 0.5f64.powi(l as i32 + 1);
            r * n1 as f64 >= 1.0 || r * r * n2 as f64 >= 1.0
        })
        .collect();
    let sampled = levels
        .par_iter()
        .map(|&l| {
            let r = 0.5f64.powi(l as i32 + 1);
            let m1 = (r * n1 as f64).floor() as i64;
            let m2 = (r * r * n2 as f64).floor() as i64;
            let mut st = SeedSpec::new(params.seed, l as u64, Purpose::HolderPairs).stream(0);
            let mut best = 0.0f64;
            for _ in 0..params.pair_budget {
                let idx = st.below(g.len());
                let d1 = st.below(2 * m1 as usize + 1) as i64 - m1;
                let d2 = st.below(2 * m2 as usize + 1) as i64 - m2;
                best = best.max(quotient(idx, d1, d2));
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    nn.max(sampled)
}

/// Per-scale values `(T^{1/4})^{2-α} ‖f_T‖` for each `T` in `t_list`.
pub fn negative_norm_profile(f: &SpectralField, alpha: f64, t_list: &[f64]) -> Vec<(f64, f64)> {
    t_list
        .par_iter()
        .map(|&t| {
            let sup = mollify(f, t).inverse().max_abs();
            (t, t.powf(0.25).powf(2.0 - alpha) * sup)
        })
        .collect()
}

/// `max_T (T^{1/4})^{2-α} ‖f_T‖` over the given scales.
pub fn negative_norm(f: &SpectralField, alpha: f64, t_list: &[f64]) -> f64 {
    negative_norm_profile(f, alpha, t_list)
        .into_iter()
        .fold(0.0, |m, (_, v)| m.max(v))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallResidual {
    pub base: usize,
    pub radius: f64,
    pub points: usize,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct ModellednessResult {
    pub m: f64,
    pub nu: PhysicalField,
    pub table: Vec<BallResidual>,
}

/// Integer offsets of the parabolic ball of radius `r`, one representative per lattice point.
pub fn ball_offsets(grid: &GridSpec, r: f64) -> Vec<(i64, i64)> {
    let (n1, n2) = (grid.n1() as i64, grid.n2() as i64);
    let m1 = ((r * n1 as f64).floor() as i64).min(n1 / 2);
    let m2 = ((r * r * n2 as f64).floor() as i64).min(n2 / 2);
    let mut out = Vec::new();
    for d1 in -m1..=m1 {
        if d1 == -n1 / 2 && m1 == n1 / 2 {
            continue;
        }
        for d2 in -m2..=m2 {
            if d2 == -n2 / 2 && m2 == n2 / 2 {
                continue;
            }
            if offset_distance(grid, d1, d2) <= r * (1.0 + 1e-12) {
                out.push((d1, d2));
            }
        }
    }
    out
}

/// Minimax affine fit `c + ν t`: returns `ν` and `min_{c,ν} max |w - c - ν t|`.
///
/// Only the extreme `w` per distinct `t` matter; the sup residual is convex and piecewise
/// linear in `ν`, so a golden-section search on a bracket that must contain the optimum
/// converges to round-off.
fn affine_fit(ts: &[f64], ws: &[f64]) -> Option<(f64, f64)> {
    let mut cols: Vec<(f64, f64, f64)> = Vec::new();
    let mut order: Vec<usize> = (0..ts.len()).collect();
    order.sort_by(|&a, &b| ts[a].total_cmp(&ts[b]));
    for i in order {
        match cols.last_mut() {
            Some(c) if c.0 == ts[i] => {
                c.1 = c.1.max(ws[i]);
                c.2 = c.2.min(ws[i]);
            }
            _ => cols.push((ts[i], ws[i], ws[i])),
        }
    }
    if cols.len() < 2 {
        return None;
    }
    let spread = |nu: f64| -> f64 {
        let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
        for &(t, h, l) in &cols {
            hi = hi.max(h - nu * t);
            lo = lo.min(l - nu * t);
        }
        0.5 * (hi - lo)
    };
    let w_hi = cols.iter().fold(f64::NEG_INFINITY, |m, c| m.max(c.1));
    let w_lo = cols.iter().fold(f64::INFINITY, |m, c| m.min(c.2));
    let t_range = cols[cols.len() - 1].0 - cols[0].0;
    // spread(ν) ≥ |ν| t_range/2 - (w_hi - w_lo)/2 and spread(0) ≤ (w_hi - w_lo)/2
    let bound = 2.0 * (w_hi - w_lo) / t_range + f64::MIN_POSITIVE;
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (-bound, bound);
    let (mut x1, mut x2) = (b - r * (b - a), a + r * (b - a));
    let (mut f1, mut f2) = (spread(x1), spread(x2));
    for _ in 0..120 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = spread(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = spread(x2);
        }
    }
    let nu = 0.5 * (a + b);
    Some((nu, spread(nu)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModellednessParams {
    /// Base points every `stride` cells in x1 and every `stride · n2/n1` cells in x2.
    pub base_point_stride: usize,
    pub r_max: f64,
    pub min_points_nu: usize,
}

impl Default for ModellednessParams {
    fn default() -> Self {
        ModellednessParams {
            base_point_stride: 4,
            r_max: 0.5,
            min_points_nu: 25,
        }
    }
}

impl ModellednessParams {
    pub fn strides(&self, grid: &GridSpec) -> (usize, usize) {
        let s1 = self.base_point_stride.max(1);
        let s2 = (s1 * grid.n2() / grid.n1()).max(1);
        (s1, s2)
    }
}

/// Dyadic radii `r_max, r_max/2, ...` whose balls contain at least three points.
pub fn dyadic_radii(grid: &GridSpec, r_max: f64) -> Vec<(f64, Vec<(i64, i64)>)> {
    let mut out = Vec::new();
    let mut r = r_max;
    loop {
        let offs = ball_offsets(grid, r);
        if offs.len() < 3 {
            break;
        }
        out.push((r, offs));
        r *= 0.5;
    }
    out
}

/// Modelledness constant in ball form:
/// `max_{x0,R} R^{-2α} inf_ℓ sup_{B_R(x0)} |u - σ(x0) v(·, a(x0)) - ℓ|` with `ℓ` affine in x1.
pub fn modelledness(
    u: &PhysicalField,
    family: &ModelFamily,
    a: &PhysicalField,
    sigma: &PhysicalField,
    alpha: f64,
    params: &ModellednessParams,
) -> Result<ModellednessResult> {
    let g = *u.grid();
    g.ensure_same(family.grid())?;
    g.ensure_same(a.grid())?;
    g.ensure_same(sigma.grid())?;
    let (lo, hi) = family.ellipticity.bounds();
    if let Some(i) = a
        .values()
        .iter()
        .position(|&x| !(x >= lo - 1e-12 && x <= hi + 1e-12))
    {
        return Err(Error::OutOfRange {
            lo,
            hi,
            count: a.values().iter().filter(|&&x| x < lo || x > hi).count(),
            first: i,
            value: a.values()[i],
        });
    }
    let radii = dyadic_radii(&g, params.r_max);
    if radii.is_empty() {
        return Err(Error::Invalid("grid too coarse for any ball".into()));
    }
    let (s1, s2) = params.strides(&g);
    let bases: Vec<usize> = (0..g.n1())
        .step_by(s1)
        .flat_map(|i1| (0..g.n2()).step_by(s2).map(move |i2| g.index(i1, i2)))
        .collect();
    let nodes: Vec<&[f64]> = family
        .nodes()
        .iter()
        .map(|n| n.physical(Component::V).values())
        .collect();
    let (n1, n2) = (g.n1(), g.n2());
    let uv = u.values();
    let per_base: Vec<(Vec<BallResidual>, f64)> = bases
        .par_iter()
        .map(|&base| {
            let (b1, b2) = g.split(base);
            let a0 = a.values()[base].clamp(lo, hi);
            let s0 = sigma.values()[base];
            let w8 = family.chebyshev().basis(a0);
            let mut rows = Vec::with_capacity(radii.len());
            let mut nu = f64::NAN;
            // radii run from large to small, so the last qualifying one wins
            for (r, offs) in &radii {
                let mut ts = Vec::with_capacity(offs.len());
                let mut ws = Vec::with_capacity(offs.len());
                for &(d1, d2) in offs {
                    let j = g.index(wrap(b1, d1, n1), wrap(b2, d2, n2));
                    let model: f64 = w8.iter().zip(&nodes).map(|(w, f)| w * f[j]).sum();
                    ts.push(d1 as f64 * g.h1());
                    ws.push(uv[j] - s0 * model);
                }
                let Some((slope, res)) = affine_fit(&ts, &ws) else {
                    continue;
                };
                if offs.len() >= params.min_points_nu {
                    nu = slope;
                }
                rows.push(BallResidual {
                    base,
                    radius: *r,
                    points: offs.len(),
                    value: res / r.powf(2.0 * alpha),
                });
            }
            (rows, nu)
        })
        .collect();
    let m = per_base
        .iter()
        .flat_map(|(rows, _)| rows.iter().map(|r| r.value))
        .fold(0.0, f64::max);
    let mut nu_vals = vec![0.0; g.len()];
    let nb2 = n2.div_ceil(s2);
    for (idx, v) in nu_vals.iter_mut().enumerate() {
        let (i1, i2) = g.split(idx);
        let k = (i1 / s1) * nb2 + i2 / s2;
        let val = per_base[k].1;
        *v = if val.is_finite() { val } else { 0.0 };
    }
    Ok(ModellednessResult {
        m,
        nu: PhysicalField::new(g, nu_vals)?,
        table: per_base.into_iter().flat_map(|(r, _)| r).collect(),
    })
}

/// Result of a log-log regression of a statistic against `T^{1/4}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub statistic: String,
    pub alpha_prime: Option<f64>,
    pub slope: f64,
    #[serde(skip)]
    pub intercept: f64,
    #[serde(skip)]
    pub r2: f64,
    #[serde(rename = "target")]
    pub target_slope: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(rename = "points")]
    pub samples: Vec<(f64, f64)>,
}

impl ScalingReport {
    pub fn named(mut self, statistic: &str, alpha_prime: Option<f64>) -> Self {
        self.statistic = statistic.to_string();
        self.alpha_prime = alpha_prime;
        self
    }
}

/// Fit `log(value)` against `log(T^{1/4})`; passes when `|slope - target| <= tolerance`.
pub fn scaling_fit(samples: &[(f64, f64)], target_slope: f64, tolerance: f64) -> Result<ScalingReport> {
    if samples.len() < 4 {
        return Err(Error::Invalid(format!(
            "scaling fit needs at least 4 samples, got {}",
            samples.len()
        )));
    }
    if let Some(&(t, v)) = samples.iter().find(|(t, v)| !(*v > 0.0) || !(*t > 0.0)) {
        return Err(Error::Invalid(format!(
            "scaling fit needs positive values, got ({t}, {v})"
        )));
    }
    let xs: Vec<f64> = samples.iter().map(|(t, _)| 0.25 * t.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|(_, v)| v.ln()).collect();
    let (slope, intercept, r2) = linear_fit(&xs, &ys);
    Ok(ScalingReport {
        statistic: String::new(),
        alpha_prime: None,
        slope,
        intercept,
        r2,
        target_slope,
        tolerance,
        pass: (slope - target_slope).abs() <= tolerance,
        samples: samples.to_vec(),
    })
}
