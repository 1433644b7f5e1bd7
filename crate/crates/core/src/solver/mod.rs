//! Picard iteration for the mollified, renormalized quasilinear equation
//! `∂₂u = P[a(u)∂₁²u + σ(u)f_ε − σ′(u)σ(u)c1(a(u)) − a′(u)σ(u)²c2(a(u))]`,
//! ε-continuation and amplitude calibration.

pub mod classical;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    d1_squared, d2, dealias_two_thirds, drop_x2_nyquist, project_mean_zero, PhysicalField, SpectralField,
};
use crate::heat::{build_family, solve_heat};
use crate::noise::mollify_noise;
use crate::norms::{holder_seminorm, modelledness, negative_norm, HolderParams, ModellednessParams};
use crate::products::RenormTable;
use crate::semigroup::mollify;

/// Closed-form scalar profile with derivatives up to third order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    /// `offset + scale·tanh(u)`.
    Tanh { offset: f64, scale: f64 },
    Constant { value: f64 },
}

impl Profile {
    /// `n`-th derivative for `n ≤ 3`.
    pub fn derivative(&self, n: u32, u: f64) -> f64 {
        match *self {
            Profile::Constant { value } => {
                if n == 0 {
                    value
                } else {
                    0.0
                }
            }
            Profile::Tanh { offset, scale } => {
                let t = u.tanh();
                let s = 1.0 - t * t;
                scale
                    * match n {
                        0 => return offset + scale * t,
                        1 => s,
                        2 => -2.0 * t * s,
                        3 => -2.0 * s * (1.0 - 3.0 * t * t),
                        _ => panic!("derivative order {n} not provided"),
                    }
            }
        }
    }

    pub fn value(&self, u: f64) -> f64 {
        self.derivative(0, u)
    }

    /// Limits at `-∞` and `+∞`; both profiles are monotone, so these bound the range.
    fn tails(&self) -> (f64, f64) {
        match *self {
            Profile::Constant { value } => (value, value),
            Profile::Tanh { offset, scale } => (offset - scale, offset + scale),
        }
    }
}

/// Coefficient `a` and multiplier `σ` of the equation together with the ellipticity constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityPair {
    pub a: Profile,
    pub sigma: Profile,
    pub lambda: f64,
}

impl Default for NonlinearityPair {
    /// `a = 3/4 + tanh/4`, `σ = (1 + tanh)/2`, `λ = 1/2`.
    fn default() -> Self {
        NonlinearityPair {
            a: Profile::Tanh {
                offset: 0.75,
                scale: 0.25,
            },
            sigma: Profile::Tanh {
                offset: 0.5,
                scale: 0.5,
            },
            lambda: 0.5,
        }
    }
}

impl NonlinearityPair {
    /// Constant coefficient `a0`, `σ ≡ sigma`.
    pub fn linear(a0: f64, sigma: f64) -> Self {
        NonlinearityPair {
            a: Profile::Constant { value: a0 },
            sigma: Profile::Constant { value: sigma },
            lambda: a0.min(1.0),
        }
    }

    /// Dense check of `a ∈ [λ,1]`, `σ ∈ [-1,1]` and derivative bounds `1/λ` on `[-10, 10]`,
    /// plus the limits at infinity.
    pub fn validate(&self) -> Result<()> {
        let l = self.lambda;
        if !(l > 0.0 && l <= 1.0) {
            return Err(Error::Lambda(l));
        }
        let bad = |what: &str, u: f64, v: f64| Err(Error::Invalid(format!("{what} = {v} at u = {u}")));
        let in_a = |v: f64| v >= l - 1e-15 && v <= 1.0 + 1e-15;
        let in_s = |v: f64| (-1.0 - 1e-15..=1.0 + 1e-15).contains(&v);
        let (a_lo, a_hi) = self.a.tails();
        if !in_a(a_lo) || !in_a(a_hi) {
            return bad("a tail", f64::INFINITY, if in_a(a_lo) { a_hi } else { a_lo });
        }
        let (s_lo, s_hi) = self.sigma.tails();
        if !in_s(s_lo) || !in_s(s_hi) {
            return bad("sigma tail", f64::INFINITY, if in_s(s_lo) { s_hi } else { s_lo });
        }
        const N: usize = 20_000;
        for i in 0..=N {
            let u = -10.0 + 20.0 * i as f64 / N as f64;
            let a = self.a.value(u);
            if !in_a(a) {
                return bad("a", u, a);
            }
            let s = self.sigma.value(u);
            if !in_s(s) {
                return bad("sigma", u, s);
            }
            for n in 1..=3 {
                for (name, p) in [("a", &self.a), ("sigma", &self.sigma)] {
                    let d = p.derivative(n, u);
                    if d.abs() > 1.0 / l + 1e-12 {
                        return bad(&format!("{name} derivative {n}"), u, d);
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum A0Policy {
    /// Spatial mean of `a(u)`, recomputed every iteration.
    MeanOfA,
    /// `a(0)`.
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveParams {
    pub eta: f64,
    pub a0_star_policy: A0Policy,
    pub damping: f64,
    pub tol_fixed_point: f64,
    pub max_iters: usize,
    pub dealias: bool,
    /// Hölder exponent used by the diagnostics.
    pub alpha: f64,
    /// Chebyshev nodes of the model family used for the modelledness constant.
    pub family_nodes: usize,
    pub diagnostics: bool,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams {
            eta: 1.0,
            a0_star_policy: A0Policy::MeanOfA,
            damping: 1.0,
            tol_fixed_point: 1e-10,
            max_iters: 200,
            dealias: false,
            alpha: 0.7,
            family_nodes: 9,
            diagnostics: true,
        }
    }
}

impl SolveParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Invalid(m));
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return fail(format!("eta must be finite and non-negative (got {})", self.eta));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return fail(format!("damping must lie in (0,1] (got {})", self.damping));
        }
        if !(self.tol_fixed_point > 0.0) {
            return fail(format!("tol_fixed_point must be positive (got {})", self.tol_fixed_point));
        }
        if self.max_iters == 0 {
            return fail("max_iters must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha must lie in (0,1) (got {})", self.alpha));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub iter: usize,
    /// `‖u⁺ − u‖∞`.
    pub delta: f64,
    /// Undamped fixed-point residual `‖ũ − u‖∞`.
    pub fixed_point_residual: f64,
    pub theta: f64,
    pub a0_star: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub holder_alpha: f64,
    pub modelledness_m: f64,
    pub residual_norm: f64,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub u: PhysicalField,
    pub iterates: Vec<Iterate>,
    pub diagnostics: Option<Diagnostics>,
    pub converged: bool,
    /// Largest ratio of successive `‖Δu‖∞` above round-off.
    pub contraction_ratio: f64,
    pub eta: f64,
    pub eps: f64,
}

/// JSON record persisted next to the solution snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub eta: f64,
    pub eps: f64,
    pub iters: usize,
    pub converged: bool,
    pub contraction_ratio: f64,
    pub holder_alpha: Option<f64>,
    #[serde(rename = "M")]
    pub m: Option<f64>,
    pub residual: Option<f64>,
}

impl SolveResult {
    pub fn iters(&self) -> usize {
        self.iterates.len()
    }

    pub fn summary(&self) -> SolveSummary {
        SolveSummary {
            eta: self.eta,
            eps: self.eps,
            iters: self.iters(),
            converged: self.converged,
            contraction_ratio: self.contraction_ratio,
            holder_alpha: self.diagnostics.map(|d| d.holder_alpha),
            m: self.diagnostics.map(|d| d.modelledness_m),
            residual: self.diagnostics.map(|d| d.residual_norm),
        }
    }
}

/// `(a(u) − shift)∂₁²u + σ(u)f − σ′σ c1(a) − a′σ² c2(a)` pointwise.
fn bracket(
    u: &PhysicalField,
    d1sq_u: &PhysicalField,
    f_phys: &PhysicalField,
    consts: &RenormTable,
    nl: &NonlinearityPair,
    shift: f64,
) -> Result<PhysicalField> {
    let renorm = !consts.is_zero();
    let mut out = Vec::with_capacity(u.values().len());
    for ((&x, &w), &f) in u.values().iter().zip(d1sq_u.values()).zip(f_phys.values()) {
        let a = nl.a.value(x);
        if !(a >= nl.lambda - 1e-12 && a <= 1.0 + 1e-12) {
            return Err(Error::Ellipticity {
                value: a,
                lo: nl.lambda,
                hi: 1.0,
            });
        }
        let s = nl.sigma.value(x);
        let mut b = (a - shift) * w + s * f;
        if renorm {
            let (c1, c2) = consts.eval(a);
            b -= nl.sigma.derivative(1, x) * s * c1 + nl.a.derivative(1, x) * s * s * c2;
        }
        out.push(b);
    }
    PhysicalField::new(*u.grid(), out)
}

fn a0_star(u: &PhysicalField, nl: &NonlinearityPair, policy: A0Policy) -> f64 {
    match policy {
        A0Policy::Fixed => nl.a.value(0.0),
        A0Policy::MeanOfA => u.map(|x| nl.a.value(x)).mean(),
    }
}

/// Undamped map `u ↦ ũ` and the base coefficient it used.
fn picard_map(
    u: &PhysicalField,
    f_phys: &PhysicalField,
    consts: &RenormTable,
    nl: &NonlinearityPair,
    params: &SolveParams,
) -> Result<(PhysicalField, f64)> {
    let a0 = a0_star(u, nl, params.a0_star_policy);
    let d1sq = d1_squared(&u.forward()).inverse();
    let mut rhs = bracket(u, &d1sq, f_phys, consts, nl, a0)?.forward();
    if params.dealias {
        rhs = dealias_two_thirds(&rhs);
    }
    Ok((solve_heat(&rhs, a0).inverse(), a0))
}

/// One damped Picard step `u⁺ = (1−θ)u + θũ` with `θ = params.damping`.
pub fn picard_step(
    u: &PhysicalField,
    f_eps: &SpectralField,
    consts: &RenormTable,
    nl: &NonlinearityPair,
    params: &SolveParams,
) -> Result<PhysicalField> {
    u.grid().ensure_same(f_eps.grid())?;
    let (next, _) = picard_map(u, &f_eps.inverse(), consts, nl, params)?;
    let th = params.damping;
    Ok(u.zip_map(&next, |a, b| (1.0 - th) * a + th * b))
}

/// `max_T (T^{1/4})^{2−2α} ‖(∂₂u − P[a(u)∂₁²u + σ(u)f − renorm])_T‖∞`, using the same
/// discrete projections as the iteration.
pub fn residual(
    u: &PhysicalField,
    f_eps: &SpectralField,
    consts: &RenormTable,
    nl: &NonlinearityPair,
    t_list: &[f64],
    alpha: f64,
    dealias: bool,
) -> Result<f64> {
    u.grid().ensure_same(f_eps.grid())?;
    let uh = u.forward();
    let d1sq = d1_squared(&uh).inverse();
    let mut b = bracket(u, &d1sq, &f_eps.inverse(), consts, nl, 0.0)?.forward();
    if dealias {
        b = dealias_two_thirds(&b);
    }
    let r = drop_x2_nyquist(&d2(&uh).sub(&project_mean_zero(&b)));
    Ok(t_list
        .iter()
        .map(|&t| t.powf(0.25).powf(2.0 - 2.0 * alpha) * mollify(&r, t).inverse().max_abs())
        .fold(0.0, f64::max))
}

/// Amplitude `η` with `negative_norm(η f_ε, α) = target`.
pub fn calibrate_eta(f_eps: &SpectralField, alpha: f64, target: f64, t_list: &[f64]) -> Result<f64> {
    let n0 = negative_norm(f_eps, alpha, t_list);
    if !(n0 > 0.0 && n0.is_finite()) {
        return Err(Error::Invalid(format!("cannot calibrate against negative norm {n0}")));
    }
    Ok(target / n0)
}

/// `η·f_ε` as seen by the iteration.
pub fn scaled_forcing(f: &SpectralField, eps: f64, eta: f64) -> SpectralField {
    mollify_noise(f, eps).scale(eta)
}

pub fn solve_quasilinear(
    f: &SpectralField,
    eps: f64,
    consts: &RenormTable,
    nl: &NonlinearityPair,
    params: &SolveParams,
) -> Result<SolveResult> {
    solve_from(PhysicalField::zeros(*f.grid()), f, eps, consts, nl, params)
}

/// Picard iteration from `u0`. `consts` are the constants of the unit-amplitude forcing;
/// they are rescaled by `η²`.
pub fn solve_from(
    u0: PhysicalField,
    f: &SpectralField,
    eps: f64,
    consts: &RenormTable,
    nl: &NonlinearityPair,
    params: &SolveParams,
) -> Result<SolveResult> {
    params.validate()?;
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("eps must be positive (got {eps})")));
    }
    u0.grid().ensure_same(f.grid())?;
    let f_eps = scaled_forcing(f, eps, params.eta);
    let consts = consts.amplitude_scaled(params.eta);
    let f_phys = f_eps.inverse();

    let mut u = u0;
    let mut theta = params.damping;
    let mut iterates = Vec::new();
    let mut increases = 0;
    let mut non_contracting = 0;
    let mut ratio_max: f64 = 0.0;
    let mut converged = false;
    for iter in 1..=params.max_iters {
        let (next, a0) = picard_map(&u, &f_phys, &consts, nl, params)?;
        let fp = next.zip_map(&u, |a, b| a - b).max_abs();
        let damped = u.zip_map(&next, |a, b| (1.0 - theta) * a + theta * b);
        let delta = theta * fp;
        let floor = 1e-12 * (1.0 + damped.max_abs());
        if let Some(prev) = iterates.last().map(|it: &Iterate| it.delta) {
            if prev > floor && delta > floor {
                let ratio = delta / prev;
                ratio_max = ratio_max.max(ratio);
                non_contracting = if ratio >= 1.0 { non_contracting + 1 } else { 0 };
                if ratio > 1.0 {
                    increases += 1;
                }
            }
        }
        iterates.push(Iterate {
            iter,
            delta,
            fixed_point_residual: fp,
            theta,
            a0_star: a0,
        });
        u = damped;
        if !delta.is_finite() {
            break;
        }
        if delta <= params.tol_fixed_point {
            converged = true;
            break;
        }
        if non_contracting >= 5 {
            break;
        }
        if increases >= 2 && theta > 0.5 {
            theta = 0.5;
        }
    }

    let diagnostics = if params.diagnostics && u.values().iter().all(|v| v.is_finite()) {
        Some(diagnose(&u, &f_eps, &consts, nl, params)?)
    } else {
        None
    };
    Ok(SolveResult {
        u,
        iterates,
        diagnostics,
        converged,
        contraction_ratio: ratio_max,
        eta: params.eta,
        eps,
    })
}

fn diagnose(
    u: &PhysicalField,
    f_eps: &SpectralField,
    consts: &RenormTable,
    nl: &NonlinearityPair,
    params: &SolveParams,
) -> Result<Diagnostics> {
    let g = *u.grid();
    let holder_alpha = holder_seminorm(u, params.alpha, &HolderParams::default());
    let family = build_family(f_eps, nl.lambda, params.family_nodes)?;
    let a = u.map(|x| nl.a.value(x));
    let s = u.map(|x| nl.sigma.value(x));
    let m = modelledness(u, &family, &a, &s, params.alpha, &ModellednessParams::default())?.m;
    let residual_norm = residual(u, f_eps, consts, nl, &g.dyadic_scales(), params.alpha, params.dealias)?;
    Ok(Diagnostics {
        holder_alpha,
        modelledness_m: m,
        residual_norm,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CauchyRow {
    pub eps: f64,
    pub eps_next: f64,
    pub sup_diff: f64,
    pub holder_diff: f64,
}

#[derive(Clone, Debug)]
pub struct Continuation {
    pub results: Vec<SolveResult>,
    pub table: Vec<CauchyRow>,
    /// Longest run of consecutive strictly decreasing `sup_diff` increments.
    pub decreasing_run: usize,
    /// `decreasing_run ≥ 3`.
    pub decreasing: bool,
    /// ε of the first non-converged solve, which ends the sweep.
    pub aborted_at: Option<f64>,
}

/// Warm-started solves along decreasing `eps_list`; `consts_for(ε)` supplies the
/// unit-amplitude constants at each ε.
pub fn eps_continuation(
    f: &SpectralField,
    eps_list: &[f64],
    consts_for: &dyn Fn(f64) -> Result<RenormTable>,
    nl: &NonlinearityPair,
    params: &SolveParams,
    alpha_prime: f64,
) -> Result<Continuation> {
    let g = *f.grid();
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Invalid("eps_list must be strictly decreasing".into()));
    }
    if let Some(&e) = eps_list.iter().find(|&&e| e < g.t_min() * (1.0 - 1e-12)) {
        return Err(Error::Invalid(format!(
            "eps {e} below the grid cutoff scale {}",
            g.t_min()
        )));
    }
    let mut results: Vec<SolveResult> = Vec::new();
    let mut table = Vec::new();
    let mut aborted_at = None;
    for &eps in eps_list {
        let u0 = results
            .last()
            .map_or_else(|| PhysicalField::zeros(g), |r| r.u.clone());
        let r = solve_from(u0, f, eps, &consts_for(eps)?, nl, params)?;
        if let Some(prev) = results.last() {
            let d = &r.u - &prev.u;
            table.push(CauchyRow {
                eps: prev.eps,
                eps_next: eps,
                sup_diff: d.max_abs(),
                holder_diff: holder_seminorm(&d, alpha_prime, &HolderParams::default()),
            });
        }
        let ok = r.converged;
        results.push(r);
        if !ok {
            aborted_at = Some(eps);
            break;
        }
    }
    let decreasing_run = longest_decreasing_run(&table.iter().map(|r| r.sup_diff).collect::<Vec<_>>());
    Ok(Continuation {
        results,
        table,
        decreasing_run,
        decreasing: decreasing_run >= 3,
        aborted_at,
    })
}

/// Length (in elements) of the longest strictly decreasing stretch.
pub fn longest_decreasing_run(xs: &[f64]) -> usize {
    let mut best = xs.len().min(1);
    let mut cur = best;
    for w in xs.windows(2) {
        cur = if w[1] < w[0] { cur + 1 } else { 1 };
        best = best.max(cur);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::noise::{sample_noise, CovarianceSpec};
    use crate::rng::SeedSpec;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn grid(n1: usize, n2: usize) -> GridSpec {
        GridSpec::new(n1, n2).unwrap()
    }

    fn noise(g: GridSpec, seed: u64) -> SpectralField {
        let spec = CovarianceSpec::product(0.4, 0.0, 0.7).unwrap();
        sample_noise(&spec, &g, SeedSpec::noise(seed, 0))
    }

    #[test]
    fn default_pair_satisfies_assumptions() {
        NonlinearityPair::default().validate().unwrap();
        NonlinearityPair::linear(0.8, 1.0).validate().unwrap();
        let bad_range = NonlinearityPair {
            a: Profile::Tanh {
                offset: 0.5,
                scale: 0.5,
            },
            ..Default::default()
        };
        assert!(bad_range.validate().is_err());
        let bad_sigma = NonlinearityPair {
            sigma: Profile::Tanh {
                offset: 0.0,
                scale: 1.5,
            },
            ..Default::default()
        };
        assert!(bad_sigma.validate().is_err());
    }

    #[test]
    fn tanh_derivatives_match_differences() {
        let p = Profile::Tanh {
            offset: 0.1,
            scale: 0.7,
        };
        let h = 1e-5;
        for &u in &[-2.0, -0.3, 0.0, 0.4, 1.7] {
            for n in 1..=3 {
                let fd = (p.derivative(n - 1, u + h) - p.derivative(n - 1, u - h)) / (2.0 * h);
                assert!((fd - p.derivative(n, u)).abs() < 1e-8, "n={n} u={u}");
            }
        }
    }

    #[test]
    fn params_validation() {
        assert!(SolveParams::default().validate().is_ok());
        for p in [
            SolveParams {
                damping: 0.0,
                ..Default::default()
            },
            SolveParams {
                tol_fixed_point: 0.0,
                ..Default::default()
            },
            SolveParams {
                eta: -1.0,
                ..Default::default()
            },
        ] {
            assert!(p.validate().is_err());
        }
    }

    #[test]
    fn zero_forcing_is_a_fixed_point() {
        let g = grid(16, 16);
        let u = PhysicalField::zeros(g);
        let next = picard_step(
            &u,
            &SpectralField::zeros(g),
            &RenormTable::zero(),
            &NonlinearityPair::default(),
            &SolveParams::default(),
        )
        .unwrap();
        assert_eq!(next.max_abs(), 0.0);
    }

    #[test]
    fn linear_step_is_heat_solve() {
        let g = grid(32, 32);
        let f = mollify_noise(&noise(g, 3), 1e-3);
        let nl = NonlinearityPair::linear(0.7, 1.0);
        let next = picard_step(
            &PhysicalField::zeros(g),
            &f,
            &RenormTable::zero(),
            &nl,
            &SolveParams {
                a0_star_policy: A0Policy::Fixed,
                ..Default::default()
            },
        )
        .unwrap();
        let direct = solve_heat(&f, 0.7).inverse();
        assert!((&next - &direct).max_abs() < 1e-14);
        let r = residual(&direct, &f, &RenormTable::zero(), &nl, &g.dyadic_scales(), 0.7, false).unwrap();
        assert!(r <= 1e-10, "{r}");
    }

    #[test]
    fn residual_linear_in_perturbation() {
        let g = grid(32, 32);
        let f = mollify_noise(&noise(g, 4), 1e-3);
        let nl = NonlinearityPair::linear(0.7, 1.0);
        let u = solve_heat(&f, 0.7).inverse();
        let ts = [1e-4, 1e-3, 1e-2];
        let res = |d: f64| {
            let p = &u + &PhysicalField::from_fn(g, |x1, _| d * (2.0 * std::f64::consts::PI * x1).cos());
            residual(&p, &f, &RenormTable::zero(), &nl, &ts, 0.7, false).unwrap()
        };
        let (r1, r2) = (res(1e-3), res(2e-3));
        assert!(r1 > 1e-6);
        assert!((r2 / r1 - 2.0).abs() < 1e-6, "{}", r2 / r1);
    }

    #[test]
    fn eta_zero_converges_immediately() {
        let g = grid(16, 16);
        let r = solve_quasilinear(
            &noise(g, 1),
            1e-3,
            &RenormTable::constant(0.3, -0.2),
            &NonlinearityPair::default(),
            &SolveParams {
                eta: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.converged);
        assert_eq!(r.iters(), 1);
        assert_eq!(r.u.max_abs(), 0.0);
    }

    #[test]
    fn nonlinear_solve_converges_with_small_residual() {
        let g = grid(32, 32);
        let f = noise(g, 2);
        let eps = 4.0 * g.t_min();
        let fe = mollify_noise(&f, eps);
        let eta = calibrate_eta(&fe, 0.7, 0.05, &g.dyadic_scales()).unwrap();
        let consts = RenormTable::diagonal(
            &CovarianceSpec::product(0.4, 0.0, 0.7).unwrap(),
            &g,
            eps,
            (0.5, 1.0),
            6,
        )
        .unwrap();
        let params = SolveParams {
            eta,
            tol_fixed_point: 1e-12,
            ..Default::default()
        };
        let r = solve_quasilinear(&f, eps, &consts, &NonlinearityPair::default(), &params).unwrap();
        assert!(r.converged, "{:?}", r.iterates.last());
        assert!(r.contraction_ratio < 0.5, "{}", r.contraction_ratio);
        assert!(r.u.mean().abs() < 1e-14);
        let d = r.diagnostics.unwrap();
        assert!(d.residual_norm <= 100.0 * params.tol_fixed_point, "{}", d.residual_norm);
        assert!(d.holder_alpha > 0.0 && d.modelledness_m > 0.0);
        // the same scheme with the pointwise step reproduces the fixed point
        let step = picard_step(
            &r.u,
            &scaled_forcing(&f, eps, eta),
            &consts.amplitude_scaled(eta),
            &NonlinearityPair::default(),
            &params,
        )
        .unwrap();
        assert!((&step - &r.u).max_abs() < 1e-11);
    }

    #[test]
    fn decreasing_runs() {
        assert_eq!(longest_decreasing_run(&[]), 0);
        assert_eq!(longest_decreasing_run(&[1.0]), 1);
        assert_eq!(longest_decreasing_run(&[3.0, 4.0, 3.0, 2.0, 1.0, 1.0]), 4);
        assert_eq!(longest_decreasing_run(&[1.0, 1.0, 1.0]), 1);
    }

    #[test]
    fn ellipticity_violation_is_an_error() {
        let g = grid(16, 16);
        let nl = NonlinearityPair {
            a: Profile::Constant { value: 0.2 },
            ..Default::default()
        };
        let e = picard_step(
            &PhysicalField::zeros(g),
            &SpectralField::zeros(g),
            &RenormTable::zero(),
            &nl,
            &SolveParams::default(),
        );
        assert!(matches!(e, Err(Error::Ellipticity { .. })));
    }

    #[test]
    fn smooth_continuation_differences_shrink() {
        let g = grid(32, 1024);
        let f = SpectralField::single_mode(g, 1, 1, Complex64::new(0.5, 0.2));
        let eps: Vec<f64> = (12..16).map(|j| 0.5f64.powi(j)).collect();
        let c = eps_continuation(
            &f,
            &eps,
            &|_| Ok(RenormTable::zero()),
            &NonlinearityPair::default(),
            &SolveParams {
                diagnostics: false,
                tol_fixed_point: 1e-13,
                ..Default::default()
            },
            0.5,
        )
        .unwrap();
        assert!(c.aborted_at.is_none() && c.decreasing, "{:?}", c.table);
        for w in c.table.windows(2) {
            let q = w[1].sup_diff / w[0].sup_diff;
            assert!(q > 0.4 && q < 0.65, "{q}");
        }
        assert!(eps_continuation(&f, &[1e-3, 2e-3], &|_| Ok(RenormTable::zero()), &NonlinearityPair::default(), &SolveParams::default(), 0.5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn iterates_stay_mean_free(seed in 0u64..1000, eta in 0.0f64..0.5) {
            let g = grid(16, 16);
            let f = noise(g, seed);
            let params = SolveParams { eta, max_iters: 3, diagnostics: false, ..Default::default() };
            let r = solve_quasilinear(&f, 1e-2, &RenormTable::constant(0.1, -0.1), &NonlinearityPair::default(), &params).unwrap();
            prop_assert!(r.u.mean().abs() < 1e-14);
        }
    }
}
