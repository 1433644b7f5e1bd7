//! Independent classical solve of the smooth equation
//! `∂₂u = a(u)∂₁²u + σ(u)f − g1σ′σ − g2a′σ² − μ` by exponential time differencing (ETDRK4)
//! in x2, spectral in x1. Periodicity in x2 is enforced by repeating laps over `[0, 1)`:
//! `μ` absorbs the drift of the mean and the initial state is recentred to zero space-time mean.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{scaled_forcing, NonlinearityPair, SolveResult};
use crate::error::{Error, Result};
use crate::grid::{freq_of_index, GridSpec, PhysicalField, SpectralField};
use crate::products::is_band_limited;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassicalParams {
    /// Time steps per x2 grid cell.
    pub substeps: usize,
    pub max_laps: usize,
    pub lap_tol: f64,
    /// Contour points for the ETDRK4 coefficients.
    pub contour_points: usize,
}

impl Default for ClassicalParams {
    fn default() -> Self {
        ClassicalParams {
            substeps: 4,
            max_laps: 60,
            lap_tol: 1e-13,
            contour_points: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalReport {
    pub max_discrepancy: f64,
    pub picard_max: f64,
    pub classical_max: f64,
    pub laps: usize,
    /// Change of the lap map at the last lap.
    pub lap_change: f64,
    pub mu: f64,
    pub picard_converged: bool,
}

#[derive(Clone, Debug)]
pub struct ClassicalSolution {
    pub u: PhysicalField,
    pub laps: usize,
    pub lap_change: f64,
    pub mu: f64,
}

struct Line {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    k1sq: Vec<f64>,
}

impl Line {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let k1sq = (0..n)
            .map(|i| {
                let k = 2.0 * PI * freq_of_index(i, n) as f64;
                k * k
            })
            .collect();
        Line {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            k1sq,
        }
    }

    fn to_phys(&self, c: &[Complex64]) -> Vec<f64> {
        let mut buf = c.to_vec();
        self.inv.process(&mut buf);
        buf.into_iter().map(|z| z.re).collect()
    }

    fn to_spec(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        let s = 1.0 / self.n as f64;
        buf.iter_mut().for_each(|z| *z *= s);
        buf
    }
}

/// Non-zero modes of a band-limited forcing, grouped for evaluation at arbitrary x2.
struct Forcing {
    modes: Vec<(usize, f64, Complex64)>,
}

impl Forcing {
    fn new(f: &SpectralField) -> Self {
        let g = f.grid();
        let modes = f
            .coeffs()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.norm() > 0.0)
            .map(|(idx, &c)| {
                let (i1, _) = g.split(idx);
                let (_, k2) = g.wavenumber(idx);
                (i1, k2, c)
            })
            .collect();
        Forcing { modes }
    }

    /// x1-coefficients of `f(·, t)`.
    fn line(&self, n1: usize, t: f64) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); n1];
        for &(i1, k2, c) in &self.modes {
            out[i1] += c * Complex64::from_polar(1.0, k2 * t);
        }
        out
    }
}

struct Etd {
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
}

impl Etd {
    /// Coefficients for `v' = Lv + N` with diagonal `L`, averaged over a contour around `hL`.
    fn new(l: &[f64], h: f64, m: usize) -> Self {
        let roots: Vec<Complex64> = (1..=m)
            .map(|j| Complex64::from_polar(1.0, PI * (j as f64 - 0.5) / m as f64))
            .collect();
        let mean = |z: f64, g: &dyn Fn(Complex64) -> Complex64| -> f64 {
            roots.iter().map(|&r| g(r + z)).sum::<Complex64>().re / m as f64
        };
        let mut s = Etd {
            e: vec![],
            e2: vec![],
            q: vec![],
            f1: vec![],
            f2: vec![],
            f3: vec![],
        };
        for &lj in l {
            let z = h * lj;
            s.e.push(z.exp());
            s.e2.push((z / 2.0).exp());
            s.q.push(h * mean(z, &|r| ((r / 2.0).exp() - 1.0) / r));
            s.f1.push(h * mean(z, &|r| (-4.0 - r + r.exp() * (4.0 - 3.0 * r + r * r)) / r.powi(3)));
            s.f2.push(h * mean(z, &|r| (2.0 + r + r.exp() * (r - 2.0)) / r.powi(3)));
            s.f3.push(h * mean(z, &|r| (-4.0 - 3.0 * r - r * r + r.exp() * (4.0 - r)) / r.powi(3)));
        }
        s
    }
}

struct Rhs<'a> {
    line: &'a Line,
    forcing: &'a Forcing,
    nl: &'a NonlinearityPair,
    a_lin: f64,
    g1: f64,
    g2: f64,
}

impl Rhs<'_> {
    fn eval(&self, v: &[Complex64], t: f64, mu: f64) -> Vec<Complex64> {
        let line = self.line;
        let u = line.to_phys(v);
        let d1sq: Vec<Complex64> = v.iter().zip(&line.k1sq).map(|(c, k)| -c * k).collect();
        let w = line.to_phys(&d1sq);
        let f = line.to_phys(&self.forcing.line(line.n, t));
        let (a, s) = (&self.nl.a, &self.nl.sigma);
        let b: Vec<f64> = (0..line.n)
            .map(|i| {
                let x = u[i];
                let sv = s.value(x);
                (a.value(x) - self.a_lin) * w[i] + sv * f[i]
                    - self.g1 * s.derivative(1, x) * sv
                    - self.g2 * a.derivative(1, x) * sv * sv
            })
            .collect();
        let mut out = line.to_spec(&b);
        out[0] -= mu;
        out
    }
}

/// Space-time periodic mean-free solution on `grid` for a band-limited forcing `f`.
pub fn classical_solve(
    grid: GridSpec,
    f: &SpectralField,
    g1: f64,
    g2: f64,
    nl: &NonlinearityPair,
    params: &ClassicalParams,
) -> Result<ClassicalSolution> {
    grid.ensure_same(f.grid())?;
    if !is_band_limited(f) {
        return Err(Error::Invalid("classical solve needs a band-limited forcing".into()));
    }
    let (n1, n2) = (grid.n1(), grid.n2());
    let line = Line::new(n1);
    let forcing = Forcing::new(f);
    let a_lin = nl.a.value(0.0);
    let steps = n2 * params.substeps.max(1);
    let h = 1.0 / steps as f64;
    let l: Vec<f64> = line.k1sq.iter().map(|k| -a_lin * k).collect();
    let etd = Etd::new(&l, h, params.contour_points.max(8));
    let rhs = Rhs {
        line: &line,
        forcing: &forcing,
        nl,
        a_lin,
        g1,
        g2,
    };

    let zero = Complex64::new(0.0, 0.0);
    let mut v0 = vec![zero; n1];
    let mut mu = 0.0;
    let mut lap_change = f64::INFINITY;
    let mut record = vec![0.0; grid.len()];
    let mut laps = 0;
    while laps < params.max_laps {
        laps += 1;
        let mut v = v0.clone();
        for step in 0..steps {
            if step % params.substeps.max(1) == 0 {
                let i2 = step / params.substeps.max(1);
                for (i1, x) in line.to_phys(&v).into_iter().enumerate() {
                    record[grid.index(i1, i2)] = x;
                }
            }
            let t = step as f64 * h;
            let nu = rhs.eval(&v, t, mu);
            let a: Vec<Complex64> = (0..n1).map(|j| v[j] * etd.e2[j] + nu[j] * etd.q[j]).collect();
            let na = rhs.eval(&a, t + h / 2.0, mu);
            let b: Vec<Complex64> = (0..n1).map(|j| v[j] * etd.e2[j] + na[j] * etd.q[j]).collect();
            let nb = rhs.eval(&b, t + h / 2.0, mu);
            let c: Vec<Complex64> = (0..n1)
                .map(|j| a[j] * etd.e2[j] + (nb[j] * 2.0 - nu[j]) * etd.q[j])
                .collect();
            let nc = rhs.eval(&c, t + h, mu);
            v = (0..n1)
                .map(|j| {
                    v[j] * etd.e[j] + nu[j] * etd.f1[j] + (na[j] + nb[j]) * (2.0 * etd.f2[j]) + nc[j] * etd.f3[j]
                })
                .collect();
        }
        let drift = v[0].re - v0[0].re;
        let shift = record.iter().sum::<f64>() / record.len() as f64;
        v[0] -= shift;
        lap_change = v
            .iter()
            .zip(&v0)
            .map(|(a, b)| (a - b).norm())
            .fold(drift.abs(), f64::max);
        mu += drift;
        record.iter_mut().for_each(|x| *x -= shift);
        v0 = v;
        if lap_change <= params.lap_tol {
            break;
        }
    }
    Ok(ClassicalSolution {
        u: PhysicalField::new(grid, record)?,
        laps,
        lap_change,
        mu,
    })
}

/// Max-norm distance between a Picard solution computed with constant tables
/// `RenormTable::constant(g1, g2)` and the classical solve of the same equation.
/// `g1`, `g2` refer to the unit-amplitude forcing, as passed to the Picard solve.
pub fn classical_check(
    result: &SolveResult,
    f_smooth: &SpectralField,
    g1: f64,
    g2: f64,
    nl: &NonlinearityPair,
    params: &ClassicalParams,
) -> Result<ClassicalReport> {
    let grid = *result.u.grid();
    let f = scaled_forcing(f_smooth, result.eps, result.eta);
    let s2 = result.eta * result.eta;
    let c = classical_solve(grid, &f, g1 * s2, g2 * s2, nl, params)?;
    Ok(ClassicalReport {
        max_discrepancy: (&c.u - &result.u).max_abs(),
        picard_max: result.u.max_abs(),
        classical_max: c.u.max_abs(),
        laps: c.laps,
        lap_change: c.lap_change,
        mu: c.mu,
        picard_converged: result.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heat::solve_heat;
    use crate::products::RenormTable;
    use crate::solver::{solve_quasilinear, SolveParams};

    fn smooth_forcing(g: GridSpec) -> SpectralField {
        let mut f = SpectralField::zeros(g);
        for &(j1, j2, re, im) in &[(1, 0, 0.4, 0.1), (0, 1, -0.2, 0.3), (1, -1, 0.25, -0.15), (2, 1, 0.1, 0.05)] {
            f = f.add(&SpectralField::single_mode(g, j1, j2, Complex64::new(re, im)));
        }
        f
    }

    #[test]
    fn zero_data_gives_zero() {
        let g = GridSpec::new(16, 16).unwrap();
        let c = classical_solve(g, &SpectralField::zeros(g), 0.0, 0.0, &NonlinearityPair::default(), &Default::default()).unwrap();
        assert_eq!(c.u.max_abs(), 0.0);
    }

    #[test]
    fn linear_case_matches_heat_solve() {
        let g = GridSpec::new(16, 32).unwrap();
        let f = smooth_forcing(g);
        let nl = NonlinearityPair::linear(0.75, 1.0);
        let c = classical_solve(g, &f, 0.0, 0.0, &nl, &Default::default()).unwrap();
        let exact = solve_heat(&f, 0.75).inverse();
        assert!((&c.u - &exact).max_abs() < 1e-8, "{}", (&c.u - &exact).max_abs());
    }

    #[test]
    fn rough_forcing_rejected() {
        let g = GridSpec::new(16, 16).unwrap();
        let f = SpectralField::single_mode(g, 7, 0, Complex64::new(1.0, 0.0));
        assert!(classical_solve(g, &f, 0.0, 0.0, &NonlinearityPair::default(), &Default::default()).is_err());
    }

    #[test]
    fn nonlinear_agreement() {
        let g = GridSpec::new(16, 32).unwrap();
        let f = smooth_forcing(g);
        let nl = NonlinearityPair::default();
        for (g1, g2) in [(0.0, 0.0), (0.3, -0.2)] {
            let params = SolveParams {
                tol_fixed_point: 1e-13,
                diagnostics: false,
                ..Default::default()
            };
            let r = solve_quasilinear(&f, 1e-6, &RenormTable::constant(g1, g2), &nl, &params).unwrap();
            let rep = classical_check(&r, &f, g1, g2, &nl, &Default::default()).unwrap();
            assert!(rep.picard_converged);
            assert!(rep.max_discrepancy <= 1e-6, "{rep:?}");
        }
    }
}
