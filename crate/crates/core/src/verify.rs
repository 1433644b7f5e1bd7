//! Monte Carlo moment and scaling studies over independent noise samples.
//!
//! Slope fits use the stationary pointwise second moment at `x = 0`; sup-over-grid
//! statistics only enter boundedness verdicts.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{forward, GridSpec, PhysicalField, SpectralField};
use crate::heat::{a0_derivative, solve_heat};
use crate::noise::{mollify_noise, sample_noise, CovarianceSpec};
use crate::norms::{scaling_fit, ScalingReport};
use crate::products::{lattice_sum, pairing_constant, renorm_c1, renorm_c2, Pairing};
use crate::rng::SeedSpec;
use crate::semigroup::mollify;
use crate::stats::{linear_fit, pairwise_sum, MeanSd};

/// Slope tolerance for statistics linear in the noise.
pub const LINEAR_TOLERANCE: f64 = 0.1;

/// Scales entering the slope of a boundedness report.
pub const BOUND_FIT_POINTS: usize = 4;
/// Slope tolerance for second-chaos statistics.
pub const CHAOS_TOLERANCE: f64 = 0.15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub spec: CovarianceSpec,
    pub grid: GridSpec,
    pub seed: u64,
    pub n_samples: usize,
    pub t_list: Vec<f64>,
    /// Closed range of `T` used by slope fits; `None` uses every scale in `t_list`.
    #[serde(default)]
    pub fit_window: Option<(f64, f64)>,
    pub eps_list: Vec<f64>,
    pub a0_list: Vec<f64>,
    pub a0p_list: Vec<f64>,
    pub p_list: Vec<u32>,
    pub alpha_prime: f64,
    /// Whether to compute sup-over-grid statistics (one inverse transform per sample,
    /// scale and probe).
    #[serde(default = "yes")]
    pub sup_statistics: bool,
}

fn yes() -> bool {
    true
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if !(self.alpha_prime < self.spec.alpha) {
            return bad(format!(
                "alpha_prime {} must be below alpha {}",
                self.alpha_prime, self.spec.alpha
            ));
        }
        if self.n_samples < 16 {
            return bad(format!("n_samples must be at least 16, got {}", self.n_samples));
        }
        for (name, empty) in [
            ("t_list", self.t_list.is_empty()),
            ("eps_list", self.eps_list.is_empty()),
            ("a0_list", self.a0_list.is_empty()),
            ("a0p_list", self.a0p_list.is_empty()),
            ("p_list", self.p_list.is_empty()),
        ] {
            if empty {
                return bad(format!("{name} must be nonempty"));
            }
        }
        if let Some(t) = self.t_list.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
            return bad(format!("T = {t} outside (0, 1]"));
        }
        if let Some(e) = self.eps_list.iter().find(|&&e| !(e >= 0.0)) {
            return bad(format!("eps = {e} must be nonnegative"));
        }
        if let Some(p) = self.p_list.iter().find(|&&p| p == 0) {
            return bad(format!("moment order {p} must be positive"));
        }
        Ok(())
    }

    fn in_window(&self, t: f64) -> bool {
        match self.fit_window {
            Some((lo, hi)) => t >= lo * (1.0 - 1e-12) && t <= hi * (1.0 + 1e-12),
            None => true,
        }
    }

    /// The smallest regularization in the plan.
    pub fn eps_min(&self) -> f64 {
        self.eps_list.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    fn noise(&self, i: usize) -> SpectralField {
        sample_noise(&self.spec, &self.grid, SeedSpec::noise(self.seed, i as u64))
    }
}

/// One NDJSON line: moment estimate of a statistic at one parameter point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRecord {
    pub statistic: String,
    #[serde(rename = "T")]
    pub t: f64,
    pub eps: Option<f64>,
    pub a0: Option<f64>,
    pub a0p: Option<f64>,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
    pub seed: u64,
}

/// Boundedness verdict: the measured constant and whether the profile stays bounded as
/// `T` decreases (log-log slope against `T^{1/4}` over the smallest scales of the fit
/// window not below `-tolerance`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub statistic: String,
    pub constant: f64,
    pub profile_slope: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub points: Vec<(f64, f64)>,
}

impl BoundReport {
    /// `window` restricts the slope to scales clear of the cutoff and the period; the
    /// constant is taken over every point.
    pub fn from_profile(
        statistic: &str,
        points: Vec<(f64, f64)>,
        tolerance: f64,
        window: Option<(f64, f64)>,
    ) -> Self {
        let constant = points.iter().fold(0.0f64, |m, p| m.max(p.1));
        let inside = |t: f64| window.is_none_or(|(lo, hi)| t >= lo * (1.0 - 1e-12) && t <= hi * (1.0 + 1e-12));
        let mut usable: Vec<&(f64, f64)> = points.iter().filter(|p| p.1 > 0.0 && inside(p.0)).collect();
        // trend as T decreases: the smallest scales only
        usable.sort_by(|a, b| a.0.total_cmp(&b.0));
        usable.truncate(BOUND_FIT_POINTS);
        let profile_slope = if usable.len() >= 2 {
            let xs: Vec<f64> = usable.iter().map(|p| 0.25 * p.0.ln()).collect();
            let ys: Vec<f64> = usable.iter().map(|p| p.1.ln()).collect();
            linear_fit(&xs, &ys).0
        } else {
            0.0
        };
        BoundReport {
            statistic: statistic.to_string(),
            constant,
            profile_slope,
            tolerance,
            pass: constant.is_finite() && profile_slope >= -tolerance,
            points,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub fit: Option<ScalingReport>,
    pub bounds: Vec<BoundReport>,
    pub records: Vec<MomentRecord>,
}

impl SuiteResult {
    pub fn pass(&self) -> bool {
        self.fit.as_ref().is_none_or(|f| f.pass) && self.bounds.iter().all(|b| b.pass)
    }

    /// NDJSON lines of the per-point records.
    pub fn ndjson(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Separable mollifier factors `exp(-T k1⁴)` per row and `exp(-T k2²)` per column.
struct ScaleFactors {
    rows: Vec<f64>,
    cols: Vec<f64>,
}

impl ScaleFactors {
    fn new(grid: &GridSpec, t: f64) -> Self {
        ScaleFactors {
            rows: grid.k1_table().iter().map(|k| (-t * k.powi(4)).exp()).collect(),
            cols: grid.k2_table().iter().map(|k| (-t * k * k).exp()).collect(),
        }
    }

    /// `g_T(0) = Σ_k Re ĝ(k) e^{-T(k1⁴+k2²)}`.
    fn origin(&self, g: &SpectralField) -> f64 {
        let n2 = self.cols.len();
        let rows: Vec<f64> = g
            .coeffs()
            .chunks(n2)
            .zip(&self.rows)
            .map(|(row, &r)| {
                if r == 0.0 {
                    return 0.0;
                }
                let s: Vec<f64> = row.iter().zip(&self.cols).map(|(c, w)| c.re * w).collect();
                r * pairwise_sum(&s)
            })
            .collect();
        pairwise_sum(&rows)
    }
}

fn moment(xs: &[f64], p: u32) -> f64 {
    let v: Vec<f64> = xs.iter().map(|x| x.abs().powi(p as i32)).collect();
    (pairwise_sum(&v) / v.len() as f64).powf(1.0 / p as f64)
}

/// Record of per-sample spatial mean squares; by stationarity their average estimates the
/// pointwise second moment.
fn mean_square_record(
    plan: &ExperimentPlan,
    statistic: &str,
    t: f64,
    point: (Option<f64>, Option<f64>, Option<f64>),
    ms: &[f64],
) -> MomentRecord {
    let m = MeanSd::of(ms);
    MomentRecord {
        statistic: statistic.to_string(),
        t,
        eps: point.0,
        a0: point.1,
        a0p: point.2,
        mean: m.mean,
        sd: m.sd,
        n: m.n,
        seed: plan.seed,
    }
}

fn fit_rms(
    plan: &ExperimentPlan,
    rms: &[(f64, f64)],
    target: f64,
    tol: f64,
    name: &str,
) -> Result<ScalingReport> {
    let pts: Vec<(f64, f64)> = rms.iter().cloned().filter(|p| plan.in_window(p.0)).collect();
    Ok(scaling_fit(&pts, target, tol)?.named(name, Some(plan.alpha_prime)))
}

/// Scaling of `f_T`: the pointwise rms against the target `α - 2`, and the sup statistic
/// `max_T (T^{1/4})^{2-α'} ⟨‖f_T‖^p⟩^{1/p}` per `p` as boundedness reports.
pub fn verify_noise_scaling(plan: &ExperimentPlan) -> Result<SuiteResult> {
    plan.validate()?;
    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..plan.n_samples)
        .into_par_iter()
        .map(|i| {
            let f = plan.noise(i);
            let point = plan.t_list.iter().map(|&t| mollify(&f, t).power()).collect();
            let sup = if plan.sup_statistics {
                plan.t_list.iter().map(|&t| mollify(&f, t).inverse().max_abs()).collect()
            } else {
                Vec::new()
            };
            (point, sup)
        })
        .collect();
    noise_suite(plan, &per_sample, "noise")
}

fn noise_suite(
    plan: &ExperimentPlan,
    per_sample: &[(Vec<f64>, Vec<f64>)],
    name: &str,
) -> Result<SuiteResult> {
    let alpha = plan.spec.alpha;
    let mut res = SuiteResult::default();
    let mut rms = Vec::new();
    for (it, &t) in plan.t_list.iter().enumerate() {
        let ms: Vec<f64> = per_sample.iter().map(|s| s.0[it]).collect();
        let rec = mean_square_record(plan, &format!("{name}_pointwise_m2"), t, (None, None, None), &ms);
        rms.push((t, rec.mean.sqrt()));
        res.records.push(rec);
    }
    res.fit = Some(fit_rms(plan, &rms, alpha - 2.0, LINEAR_TOLERANCE, &format!("{name}_pointwise_rms"))?);
    if plan.sup_statistics {
        for &p in &plan.p_list {
            let profile: Vec<(f64, f64)> = plan
                .t_list
                .iter()
                .enumerate()
                .map(|(it, &t)| {
                    let xs: Vec<f64> = per_sample.iter().map(|s| s.1[it]).collect();
                    (t, t.powf(0.25).powf(2.0 - plan.alpha_prime) * moment(&xs, p))
                })
                .collect();
            res.bounds.push(BoundReport::from_profile(
                &format!("{name}_sup_p{p}"),
                profile,
                LINEAR_TOLERANCE,
                plan.fit_window,
            ));
        }
    }
    Ok(res)
}

/// `max_{ε,T} (T^{1/4})^{2-α'+κ} (ε^{1/4})^{-κ} ⟨‖(f_ε)_T - f_T‖^p⟩^{1/p}`, reported per `p`
/// with its `T`-profile (maximum over `ε` at each `T`).
pub fn verify_eps_difference(plan: &ExperimentPlan, kappa: f64) -> Result<SuiteResult> {
    plan.validate()?;
    if !(0.0..=4.0).contains(&kappa) {
        return Err(Error::Invalid(format!("kappa {kappa} outside [0, 4]")));
    }
    let eps: Vec<f64> = plan.eps_list.iter().cloned().filter(|&e| e > 0.0).collect();
    let (ne, nt) = (eps.len(), plan.t_list.len());
    // samples[i][ie * nt + it] = ‖(f_ε)_T - f_T‖
    let samples: Vec<Vec<f64>> = (0..plan.n_samples)
        .into_par_iter()
        .map(|i| {
            let f = plan.noise(i);
            let mut out = Vec::with_capacity(ne * nt);
            for &e in &eps {
                for &t in &plan.t_list {
                    let d = mollify(&mollify_noise(&f, e), t).sub(&mollify(&f, t));
                    out.push(d.inverse().max_abs());
                }
            }
            out
        })
        .collect();
    let mut res = SuiteResult::default();
    for (ie, &e) in eps.iter().enumerate() {
        for (it, &t) in plan.t_list.iter().enumerate() {
            let xs: Vec<f64> = samples.iter().map(|s| s[ie * nt + it]).collect();
            let m = MeanSd::of(&xs);
            res.records.push(MomentRecord {
                statistic: "eps_difference_sup".into(),
                t,
                eps: Some(e),
                a0: None,
                a0p: None,
                mean: m.mean,
                sd: m.sd,
                n: m.n,
                seed: plan.seed,
            });
        }
    }
    for &p in &plan.p_list {
        let profile = plan
            .t_list
            .iter()
            .enumerate()
            .map(|(it, &t)| {
                let best = eps.iter().enumerate().fold(0.0f64, |m, (ie, &e)| {
                    let xs: Vec<f64> = samples.iter().map(|s| s[ie * nt + it]).collect();
                    let w = t.powf(0.25).powf(2.0 - plan.alpha_prime + kappa) * e.powf(0.25).powf(-kappa);
                    m.max(w * moment(&xs, p))
                });
                (t, best)
            })
            .collect();
        res.bounds.push(BoundReport::from_profile(
            &format!("eps_difference_p{p}_kappa{kappa}"),
            profile,
            LINEAR_TOLERANCE,
            plan.fit_window,
        ));
    }
    Ok(res)
}

/// Per-sample fields entering one commutator probe.
struct ProbeFields {
    /// `∂ⁿv(·, a₀)` in physical space.
    g: PhysicalField,
    /// The second factor, spectral.
    h: SpectralField,
    /// Coefficients of the plain product `g·h`.
    prod: SpectralField,
}

fn model(f: &SpectralField, a0: f64, n: u32) -> Result<SpectralField> {
    if n == 0 {
        Ok(solve_heat(f, a0))
    } else {
        a0_derivative(f, a0, n)
    }
}

fn probe_fields(
    f_eps: &SpectralField,
    pairing: Pairing,
    (a0, n): (f64, u32),
    (a0p, np): (f64, u32),
) -> Result<ProbeFields> {
    let g = model(f_eps, a0, n)?.inverse();
    let h = match pairing {
        Pairing::Vf => f_eps.clone(),
        Pairing::VD2v => crate::grid::d1_squared(&model(f_eps, a0p, np)?),
    };
    let prod = forward(&(&g * &h.inverse()));
    Ok(ProbeFields { g, h, prod })
}

impl ProbeFields {
    /// `g·h_T - (g·h - c)_T` on the grid.
    fn commutator(&self, t: f64, c: f64) -> PhysicalField {
        let ht = mollify(&self.h, t).inverse();
        let pt = mollify(&self.prod, t).inverse();
        let vals = self
            .g
            .values()
            .iter()
            .zip(ht.values())
            .zip(pt.values())
            .map(|((g, h), p)| g * h - p + c)
            .collect();
        PhysicalField::new(*self.g.grid(), vals).expect("finite commutator values")
    }
}

/// Parameter probes of a commutator study: `(a₀, a₀')` pairs.
fn probes(plan: &ExperimentPlan, pairing: Pairing) -> Vec<(f64, f64)> {
    match pairing {
        Pairing::Vf => plan.a0_list.iter().map(|&a| (a, f64::NAN)).collect(),
        Pairing::VD2v => plan
            .a0_list
            .iter()
            .flat_map(|&a| plan.a0p_list.iter().map(move |&b| (a, b)))
            .collect(),
    }
}

fn opt(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Pointwise and sup moments of the renormalized commutator
/// `[∂ⁿv_ε(·,a₀), (·)_T] ◇ h_ε` at `ε = min(eps_list)`, with `h = f` or `∂₁²∂ⁿ'v(·,a₀')`.
///
/// The slope is fitted at the first probe against `2α - 2`; the sup statistic
/// `(T^{1/4})^{2-2α'} ⟨‖·‖^p⟩^{1/p}`, maximized over probes, is a boundedness report.
pub fn verify_commutator_scaling(
    plan: &ExperimentPlan,
    pairing: Pairing,
    n: u32,
    np: u32,
) -> Result<SuiteResult> {
    plan.validate()?;
    if n > 2 || np > 2 {
        return Err(Error::Invalid(format!("derivative orders ({n}, {np}) must be at most 2")));
    }
    let eps = plan.eps_min();
    let probes = probes(plan, pairing);
    let consts: Vec<f64> = probes
        .iter()
        .map(|&(a, b)| pairing_constant(&plan.spec, &plan.grid, eps, pairing, (a, n), (b, np)))
        .collect();
    let nt = plan.t_list.len();
    // per sample: [probe][T] spatial mean squares, then [probe][T] sup values
    let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..plan.n_samples)
        .into_par_iter()
        .map(|i| -> Result<(Vec<f64>, Vec<f64>)> {
            let f_eps = mollify_noise(&plan.noise(i), eps);
            let mut ms = Vec::with_capacity(probes.len() * nt);
            let mut sup = Vec::with_capacity(probes.len() * nt);
            for (&(a, b), &c) in probes.iter().zip(&consts) {
                let pf = probe_fields(&f_eps, pairing, (a, n), (b, np))?;
                for &t in &plan.t_list {
                    let x = pf.commutator(t, c);
                    ms.push(x.mean_square());
                    sup.push(x.max_abs());
                }
            }
            Ok((ms, sup))
        })
        .collect::<Result<_>>()?;
    let name = match pairing {
        Pairing::Vf => format!("commutator_vf_n{n}"),
        Pairing::VD2v => format!("commutator_v_d2v_n{n}_{np}"),
    };
    let mut res = SuiteResult::default();
    let mut rms_first = Vec::new();
    for (ip, &(a, b)) in probes.iter().enumerate() {
        for (it, &t) in plan.t_list.iter().enumerate() {
            let xs: Vec<f64> = samples.iter().map(|s| s.0[ip * nt + it]).collect();
            let rec = mean_square_record(
                plan,
                &format!("{name}_pointwise_m2"),
                t,
                (Some(eps), Some(a), opt(b)),
                &xs,
            );
            if ip == 0 {
                rms_first.push((t, rec.mean.sqrt()));
            }
            res.records.push(rec);
        }
    }
    let alpha = plan.spec.alpha;
    res.fit = Some(fit_rms(plan, &rms_first, 2.0 * alpha - 2.0, CHAOS_TOLERANCE, &format!("{name}_pointwise_rms"))?);
    if plan.sup_statistics {
        for &p in &plan.p_list {
            let profile = plan
                .t_list
                .iter()
                .enumerate()
                .map(|(it, &t)| {
                    let w = t.powf(0.25).powf(2.0 - 2.0 * plan.alpha_prime);
                    let best = (0..probes.len()).fold(0.0f64, |m, ip| {
                        let xs: Vec<f64> = samples.iter().map(|s| s.1[ip * nt + it]).collect();
                        m.max(w * moment(&xs, p))
                    });
                    (t, best)
                })
                .collect();
            res.bounds.push(BoundReport::from_profile(
                &format!("{name}_sup_over_probes_p{p}"),
                profile,
                CHAOS_TOLERANCE,
                plan.fit_window,
            ));
        }
    }
    Ok(res)
}

/// Cauchy study in `ε` of the renormalized commutator at the first probe, on the scales
/// of the fit window.
///
/// `fit` regresses `rms(X_ε - X_{ε_ref})` at the smallest window scale against `ε^{1/4}`
/// (target slope `κ`, tolerance `0.8`, i.e. `κ/4 ± 0.2` per unit of `log ε`); `bounds`
/// holds the weighted statistic `(T^{1/4})^{2-2α'+κ} (ε^{1/4})^{-κ} rms(X_ε - X_{ε_ref})`
/// and the Cauchy increments `rms(X_ε - X_{ε/2})`, which must decrease.
pub fn verify_eps_convergence(plan: &ExperimentPlan, pairing: Pairing, kappa: f64) -> Result<SuiteResult> {
    plan.validate()?;
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::Invalid(format!("kappa {kappa} outside (0, 1]")));
    }
    let mut eps = plan.eps_list.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    let ne = eps.len();
    if ne < 2 {
        return Err(Error::Invalid("eps convergence needs at least two eps values".into()));
    }
    let (a0, a0p) = probes(plan, pairing)[0];
    let ts: Vec<f64> = plan.t_list.iter().cloned().filter(|&t| plan.in_window(t)).collect();
    let nt = ts.len();
    let consts: Vec<f64> = eps
        .iter()
        .map(|&e| pairing_constant(&plan.spec, &plan.grid, e, pairing, (a0, 0), (a0p, 0)))
        .collect();
    // per sample: [ε][T] mean square of X_ε - X_ref, then [ε][T] of X_ε - X_{next ε}
    let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..plan.n_samples)
        .into_par_iter()
        .map(|i| -> Result<(Vec<f64>, Vec<f64>)> {
            let f = plan.noise(i);
            let fields = |ie: usize| -> Result<Vec<PhysicalField>> {
                let pf = probe_fields(&mollify_noise(&f, eps[ie]), pairing, (a0, 0), (a0p, 0))?;
                Ok(ts.iter().map(|&t| pf.commutator(t, consts[ie])).collect())
            };
            let diff_ms = |x: &[PhysicalField], y: &[PhysicalField]| -> Vec<f64> {
                x.iter().zip(y).map(|(p, q)| (p - q).mean_square()).collect()
            };
            let reference = fields(ne - 1)?;
            let mut to_ref = Vec::with_capacity(ne * nt);
            let mut inc = Vec::with_capacity(ne * nt);
            let mut prev = fields(0)?;
            for ie in 0..ne {
                to_ref.extend(diff_ms(&prev, &reference));
                if ie + 1 < ne {
                    let next = if ie + 1 == ne - 1 { reference.clone() } else { fields(ie + 1)? };
                    inc.extend(diff_ms(&prev, &next));
                    prev = next;
                }
            }
            Ok((to_ref, inc))
        })
        .collect::<Result<_>>()?;
    let rms = |which: usize, ie: usize, it: usize| -> f64 {
        let xs: Vec<f64> = samples
            .iter()
            .map(|s| if which == 0 { s.0[ie * nt + it] } else { s.1[ie * nt + it] })
            .collect();
        (pairwise_sum(&xs) / xs.len() as f64).sqrt()
    };
    let name = match pairing {
        Pairing::Vf => "eps_convergence_vf",
        Pairing::VD2v => "eps_convergence_v_d2v",
    };
    let mut res = SuiteResult::default();
    for (ie, &e) in eps.iter().enumerate() {
        for (it, &t) in ts.iter().enumerate() {
            let ms: Vec<f64> = samples.iter().map(|s| s.0[ie * nt + it]).collect();
            res.records.push(mean_square_record(
                plan,
                &format!("{name}_diff_to_ref_m2"),
                t,
                (Some(e), Some(a0), opt(a0p)),
                &ms,
            ));
        }
    }
    if nt == 0 {
        return Err(Error::Invalid("no scale of t_list lies in the fit window".into()));
    }
    let it_fit = (0..nt).min_by(|&a, &b| ts[a].total_cmp(&ts[b])).expect("nonempty");
    let to_ref: Vec<(f64, f64)> = (0..ne - 1).map(|ie| (eps[ie], rms(0, ie, it_fit))).collect();
    if to_ref.len() >= 4 {
        res.fit = Some(scaling_fit(&to_ref, kappa, 0.8)?.named(name, Some(plan.alpha_prime)));
    }
    let profile: Vec<(f64, f64)> = ts
        .iter()
        .enumerate()
        .map(|(it, &t)| {
            let best = (0..ne - 1).fold(0.0f64, |m, ie| {
                let w = t.powf(0.25).powf(2.0 - 2.0 * plan.alpha_prime + kappa) * eps[ie].powf(0.25).powf(-kappa);
                m.max(w * rms(0, ie, it))
            });
            (t, best)
        })
        .collect();
    res.bounds.push(BoundReport::from_profile(&format!("{name}_weighted"), profile, CHAOS_TOLERANCE, None));
    let increments: Vec<(f64, f64)> = (0..ne - 1).map(|ie| (eps[ie], rms(1, ie, it_fit))).collect();
    let decreasing = increments.windows(2).all(|w| w[1].1 < w[0].1);
    res.bounds.push(BoundReport {
        statistic: format!("{name}_increments"),
        constant: increments.first().map_or(0.0, |p| p.1),
        profile_slope: f64::NAN,
        tolerance: 0.0,
        pass: decreasing,
        points: increments,
    });
    Ok(res)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converges,
    Diverges,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub eps: Vec<f64>,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    /// `|c1(ε_i) - c1(ε_{i+1})|`.
    pub increments: Vec<f64>,
    pub verdict: Verdict,
    /// Number of trailing strictly decreasing increments.
    pub decreasing_run: usize,
}

/// Verdict from Cauchy increments of `c1` over `ε` sorted in decreasing order:
/// converges when the last three or more increments decrease strictly, diverges when `c1`
/// increases strictly with non-decreasing increments.
pub fn renorm_limit_study(
    spec: &CovarianceSpec,
    lattice: &GridSpec,
    eps_list: &[f64],
    a0: f64,
    a0p: f64,
) -> Result<ConvergenceReport> {
    if eps_list.len() < 4 {
        return Err(Error::Invalid("renorm_limit_study needs at least 4 eps values".into()));
    }
    let mut eps = eps_list.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    let (c1, c2): (Vec<f64>, Vec<f64>) = eps
        .par_iter()
        .map(|&e| (renorm_c1(spec, e, a0, lattice), renorm_c2(spec, e, a0, a0p, lattice)))
        .unzip();
    let increments: Vec<f64> = c1.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let decreasing_run = increments
        .windows(2)
        .rev()
        .take_while(|w| w[1] < w[0])
        .count()
        + 1;
    let increasing = c1.windows(2).all(|w| w[1] > w[0]);
    let growing_steps = increments.windows(2).all(|w| w[1] >= w[0]);
    let verdict = if increasing && growing_steps {
        Verdict::Diverges
    } else if decreasing_run >= 3 {
        Verdict::Converges
    } else {
        Verdict::Inconclusive
    };
    Ok(ConvergenceReport {
        eps,
        c1,
        c2,
        increments,
        verdict,
        decreasing_run,
    })
}

/// `⟨|f̂(k)|²⟩`-weighted lattice mass, the variance of the field at a point.
pub fn pointwise_variance(spec: &CovarianceSpec, grid: &GridSpec, t: f64) -> f64 {
    lattice_sum(grid, |k1, k2| {
        crate::noise::covariance_at(spec, k1, k2) * (-2.0 * t * (k1.powi(4) + k2 * k2)).exp()
    })
}

/// Monte Carlo estimates of `⟨v_ε(0,a₀) f_ε(0)⟩` and `⟨v_ε(0,a₀) ∂₁²v_ε(0,a₀')⟩` against
/// `c1` and `c2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectationCheck {
    pub eps: f64,
    pub c1: f64,
    pub c1_mc: MeanSd,
    pub c2: f64,
    pub c2_mc: MeanSd,
}

impl ExpectationCheck {
    /// Largest deviation in standard errors.
    pub fn z_max(&self) -> f64 {
        let z = |c: f64, m: &MeanSd| {
            let se = m.std_error();
            if se == 0.0 {
                if (m.mean - c).abs() <= 1e-300 { 0.0 } else { f64::INFINITY }
            } else {
                (m.mean - c).abs() / se
            }
        };
        z(self.c1, &self.c1_mc).max(z(self.c2, &self.c2_mc))
    }
}

pub fn mc_expectation_check(
    spec: &CovarianceSpec,
    grid: &GridSpec,
    seed: u64,
    n_samples: usize,
    eps: f64,
    a0: f64,
    a0p: f64,
) -> ExpectationCheck {
    let fac = ScaleFactors::new(grid, 0.0);
    let vals: Vec<(f64, f64)> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let f = mollify_noise(&sample_noise(spec, grid, SeedSpec::noise(seed, i as u64)), eps);
            let v = fac.origin(&solve_heat(&f, a0));
            let d2v = fac.origin(&crate::grid::d1_squared(&solve_heat(&f, a0p)));
            (v * fac.origin(&f), v * d2v)
        })
        .collect();
    let (x1, x2): (Vec<f64>, Vec<f64>) = vals.into_iter().unzip();
    ExpectationCheck {
        eps,
        c1: renorm_c1(spec, eps, a0, grid),
        c1_mc: MeanSd::of(&x1),
        c2: renorm_c2(spec, eps, a0, a0p, grid),
        c2_mc: MeanSd::of(&x2),
    }
}

/// Value of a spectral field at a point of the grid without a full transform.
pub fn value_at_node(f: &SpectralField, i1: usize, i2: usize) -> f64 {
    let g = f.grid();
    let (x1, x2) = g.point(i1, i2);
    let ph1: Vec<Complex64> = g.k1_table().iter().map(|k| Complex64::from_polar(1.0, k * x1)).collect();
    let ph2: Vec<Complex64> = g.k2_table().iter().map(|k| Complex64::from_polar(1.0, k * x2)).collect();
    let rows: Vec<f64> = f
        .coeffs()
        .chunks(g.n2())
        .zip(&ph1)
        .map(|(row, p1)| {
            let s: Vec<f64> = row.iter().zip(&ph2).map(|(c, p2)| (c * p1 * p2).re).collect();
            pairwise_sum(&s)
        })
        .collect();
    pairwise_sum(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(grid: GridSpec, n: usize) -> ExperimentPlan {
        ExperimentPlan {
            spec: CovarianceSpec::product(0.4, 0.0, 0.7).unwrap(),
            grid,
            seed: 7,
            n_samples: n,
            t_list: grid.dyadic_scales(),
            fit_window: None,
            eps_list: vec![grid.t_min()],
            a0_list: vec![0.6],
            a0p_list: vec![0.9],
            p_list: vec![2],
            alpha_prime: 0.6,
            sup_statistics: true,
        }
    }

    #[test]
    fn plan_validation() {
        let g = GridSpec::new(16, 16).unwrap();
        let mut p = plan(g, 16);
        assert!(p.validate().is_ok());
        p.alpha_prime = 0.7;
        assert!(p.validate().is_err());
        let mut p = plan(g, 15);
        assert!(p.validate().is_err());
        p.n_samples = 16;
        p.p_list.clear();
        assert!(p.validate().is_err());
    }

    #[test]
    fn origin_value_matches_transform() {
        let g = GridSpec::new(16, 32).unwrap();
        let p = plan(g, 16);
        let f = p.noise(3);
        for t in [0.0, 1e-3, 0.1] {
            let direct = mollify(&f, t).inverse().values()[0];
            assert!((ScaleFactors::new(&g, t).origin(&f) - direct).abs() < 1e-12);
        }
        let full = f.inverse();
        assert!((value_at_node(&f, 5, 7) - full.at(5, 7)).abs() < 1e-12);
    }

    #[test]
    fn reproducible() {
        let g = GridSpec::new(16, 64).unwrap();
        let p = plan(g, 16);
        let a = verify_noise_scaling(&p).unwrap();
        let b = verify_noise_scaling(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.ndjson().unwrap().lines().count(), p.t_list.len());
        let rec: serde_json::Value = serde_json::from_str(a.ndjson().unwrap().lines().next().unwrap()).unwrap();
        for k in ["statistic", "T", "eps", "a0", "a0p", "mean", "sd", "n", "seed"] {
            assert!(rec.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn eps_zero_difference_vanishes() {
        let g = GridSpec::new(16, 16).unwrap();
        let mut p = plan(g, 16);
        p.eps_list = vec![0.0];
        let r = verify_eps_difference(&p, 1.0).unwrap();
        assert!(r.bounds.iter().all(|b| b.constant == 0.0));
        assert!(r.records.is_empty());
    }

    #[test]
    fn single_mode_noise_slope() {
        // deterministic mode at k = (2π j, 0): rms of f_T is √2 exp(-T k⁴)
        let g = GridSpec::new(64, 64).unwrap();
        let j = 1.0;
        let k = 2.0 * std::f64::consts::PI * j;
        let ts: Vec<f64> = (14..20).map(|e| 0.5f64.powi(e)).collect();
        let f = SpectralField::single_mode(g, j as i64, 0, Complex64::new(1.0, 0.0));
        let per: Vec<(Vec<f64>, Vec<f64>)> = (0..16)
            .map(|_| (ts.iter().map(|&t| mollify(&f, t).power()).collect(), vec![]))
            .collect();
        let mut p = plan(g, 16);
        p.t_list = ts.clone();
        p.sup_statistics = false;
        let r = noise_suite(&p, &per, "mode").unwrap();
        let pts: Vec<(f64, f64)> = ts.iter().map(|&t| (t, 2.0 * (-t * k.powi(4)).exp())).collect();
        let want = scaling_fit(&pts, 0.0, 1.0).unwrap().slope;
        assert!((r.fit.unwrap().slope - want).abs() < 1e-10);
    }

    #[test]
    fn limit_study_verdicts() {
        let lat = GridSpec::new(64, 4096).unwrap();
        let eps: Vec<f64> = (13..=20).map(|j| 0.5f64.powi(j)).collect();
        let conv = renorm_limit_study(&CovarianceSpec::product(1.5, 0.0, 0.7).unwrap(), &lat, &eps, 0.75, 0.75).unwrap();
        assert_eq!(conv.verdict, Verdict::Converges);
        let div = renorm_limit_study(&CovarianceSpec::product(0.4, 0.0, 0.7).unwrap(), &lat, &eps, 0.75, 0.75).unwrap();
        assert_eq!(div.verdict, Verdict::Diverges, "{div:?}");
        let white = renorm_limit_study(&CovarianceSpec::spatial_only(0.0, 0.7).unwrap(), &lat, &eps, 0.75, 0.75).unwrap();
        assert_eq!(white.verdict, Verdict::Converges);
    }

    #[test]
    fn expectation_check_small_grid() {
        let g = GridSpec::new(16, 32).unwrap();
        let s = CovarianceSpec::product(0.4, 0.0, 0.7).unwrap();
        let chk = mc_expectation_check(&s, &g, 3, 2000, 1e-4, 0.6, 0.9);
        assert!(chk.z_max() < 5.0, "{chk:?}");
    }
}
