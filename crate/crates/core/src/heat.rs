//! Constant-coefficient solves `(∂₂ - a₀∂₁²)v = Pf`, exact `a₀`-derivatives, and the
//! evaluation operator `E` on a Chebyshev family of models.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{d1_squared, d2, drop_x2_nyquist, project_mean_zero, PhysicalField, SpectralField};

/// Periodic Green symbol of `∂₂ - a₀∂₁²` for modes `e^{ik·x}`: `1/(a₀k1² + ik2)`,
/// zero at `k = 0`.
#[inline]
pub fn green_multiplier(k1: f64, k2: f64, a0: f64) -> Complex64 {
    if k1 == 0.0 && k2 == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let re = a0 * k1 * k1;
    let d = re * re + k2 * k2;
    Complex64::new(re / d, -k2 / d)
}

/// Symbol of `∂ⁿ/∂a₀ⁿ` applied to the data: `(-1)ⁿ n! k1^{2n} Ĝⁿ⁺¹`.
#[inline]
pub fn a0_derivative_multiplier(k1: f64, k2: f64, a0: f64, n: u32) -> Complex64 {
    let g = green_multiplier(k1, k2, a0);
    let fact: f64 = (1..=n).map(f64::from).product();
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    g.powu(n + 1) * (sign * fact * k1.powi(2 * n as i32))
}

/// Mean-free periodic solution of `(∂₂ - a₀∂₁²)v = Pf`.
///
/// The x2-Nyquist column is dropped: `∂₂` has no real representation there.
pub fn solve_heat(f: &SpectralField, a0: f64) -> SpectralField {
    solver_input(f).apply(|k1, k2| green_multiplier(k1, k2, a0))
}

fn solver_input(f: &SpectralField) -> SpectralField {
    drop_x2_nyquist(&project_mean_zero(f))
}

/// Exact `∂ⁿv/∂a₀ⁿ` for the model driven by `f`.
pub fn a0_derivative(f: &SpectralField, a0: f64, n: u32) -> Result<SpectralField> {
    if !(1..=2).contains(&n) {
        return Err(Error::Invalid(format!("a0 derivative order {n} not in {{1,2}}")));
    }
    Ok(solver_input(f).apply(|k1, k2| a0_derivative_multiplier(k1, k2, a0, n)))
}

/// `(∂₂ - a₀∂₁²)v` evaluated spectrally.
pub fn heat_operator(v: &SpectralField, a0: f64) -> SpectralField {
    d2(v).sub(&d1_squared(v).scale(a0))
}

/// Admissible range of base coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipticityBox {
    pub lambda: f64,
    pub range: BoxRange,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxRange {
    /// `[λ, 1]`
    Stochastic,
    /// `[λ, 1/λ]`
    Deterministic,
}

impl EllipticityBox {
    pub fn new(lambda: f64, range: BoxRange) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::Lambda(lambda));
        }
        Ok(EllipticityBox { lambda, range })
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self.range {
            BoxRange::Stochastic => (self.lambda, 1.0),
            BoxRange::Deterministic => (self.lambda, 1.0 / self.lambda),
        }
    }

    pub fn check(&self, a0: f64) -> Result<f64> {
        let (lo, hi) = self.bounds();
        if a0 < lo - 1e-12 || a0 > hi + 1e-12 {
            return Err(Error::OutOfRange {
                lo,
                hi,
                count: 1,
                first: 0,
                value: a0,
            });
        }
        Ok(a0)
    }
}

/// Barycentric Lagrange interpolation on Chebyshev points of the second kind.
#[derive(Clone, Debug, PartialEq)]
pub struct Chebyshev {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Chebyshev {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::TooFewNodes(n));
        }
        let m = (n - 1) as f64;
        let nodes = (0..n)
            .map(|j| {
                let c = (std::f64::consts::PI * j as f64 / m).cos();
                0.5 * (lo + hi) - 0.5 * (hi - lo) * c
            })
            .collect();
        let weights = (0..n)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == n - 1 {
                    0.5 * s
                } else {
                    s
                }
            })
            .collect();
        Ok(Chebyshev { nodes, weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Lagrange basis values `ℓ_j(x)`.
    pub fn basis(&self, x: f64) -> Vec<f64> {
        if let Some(j) = self.nodes.iter().position(|&t| t == x) {
            let mut b = vec![0.0; self.nodes.len()];
            b[j] = 1.0;
            return b;
        }
        let raw: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w / (x - t))
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|r| r / s).collect()
    }

    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        self.basis(x).iter().zip(values).map(|(b, v)| b * v).sum()
    }
}

/// Stored components of a model family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    V,
    DvDa0,
    D2vDa02,
    D1sqV,
}

#[derive(Clone, Debug)]
pub struct NodeFields {
    pub a0: f64,
    pub v: SpectralField,
    pub dv: SpectralField,
    pub d2v: SpectralField,
    pub d1sq_v: SpectralField,
    physical: [PhysicalField; 4],
}

impl NodeFields {
    pub fn spectral(&self, c: Component) -> &SpectralField {
        match c {
            Component::V => &self.v,
            Component::DvDa0 => &self.dv,
            Component::D2vDa02 => &self.d2v,
            Component::D1sqV => &self.d1sq_v,
        }
    }

    pub fn physical(&self, c: Component) -> &PhysicalField {
        &self.physical[c as usize]
    }
}

/// `v(·,a₀)` and its derivatives at Chebyshev nodes in `a₀`.
#[derive(Clone, Debug)]
pub struct ModelFamily {
    pub ellipticity: EllipticityBox,
    cheb: Chebyshev,
    nodes: Vec<NodeFields>,
}

impl ModelFamily {
    pub fn nodes(&self) -> &[NodeFields] {
        &self.nodes
    }

    pub fn a0_nodes(&self) -> &[f64] {
        self.cheb.nodes()
    }

    pub fn chebyshev(&self) -> &Chebyshev {
        &self.cheb
    }

    pub fn grid(&self) -> &crate::grid::GridSpec {
        self.nodes[0].v.grid()
    }

    /// A family whose every field is zero.
    pub fn zero(grid: crate::grid::GridSpec, lambda: f64, n_nodes: usize) -> Result<Self> {
        build_family(&SpectralField::zeros(grid), lambda, n_nodes)
    }

    /// Values of component `c` at a single base coefficient, at the given flat indices.
    pub fn component_at(&self, c: Component, a0: f64, indices: &[usize]) -> Vec<f64> {
        let b = self.cheb.basis(a0);
        indices
            .iter()
            .map(|&i| {
                b.iter()
                    .zip(&self.nodes)
                    .map(|(w, n)| w * n.physical(c).values()[i])
                    .sum()
            })
            .collect()
    }

    /// The operator `E`: component `c` evaluated at `(x, a(x))`.
    pub fn evaluate_e(&self, c: Component, a: &PhysicalField) -> Result<PhysicalField> {
        self.grid().ensure_same(a.grid())?;
        let (lo, hi) = self.ellipticity.bounds();
        let bad: Vec<usize> = a
            .values()
            .iter()
            .enumerate()
            .filter(|(_, &x)| !(x >= lo - 1e-12 && x <= hi + 1e-12))
            .map(|(i, _)| i)
            .collect();
        if let Some(&first) = bad.first() {
            return Err(Error::OutOfRange {
                lo,
                hi,
                count: bad.len(),
                first,
                value: a.values()[first],
            });
        }
        let fields: Vec<&[f64]> = self.nodes.iter().map(|n| n.physical(c).values()).collect();
        let values = a
            .values()
            .par_iter()
            .enumerate()
            .map(|(i, &x)| {
                let x = x.clamp(lo, hi);
                self.cheb
                    .basis(x)
                    .iter()
                    .zip(&fields)
                    .map(|(b, f)| b * f[i])
                    .sum()
            })
            .collect();
        PhysicalField::new(*a.grid(), values)
    }
}

fn node_fields(f: &SpectralField, a0: f64) -> NodeFields {
    let pf = solver_input(f);
    let v = pf.apply(|k1, k2| green_multiplier(k1, k2, a0));
    let dv = pf.apply(|k1, k2| a0_derivative_multiplier(k1, k2, a0, 1));
    let d2v = pf.apply(|k1, k2| a0_derivative_multiplier(k1, k2, a0, 2));
    let d1sq_v = d1_squared(&v);
    let physical = [v.inverse(), dv.inverse(), d2v.inverse(), d1sq_v.inverse()];
    NodeFields {
        a0,
        v,
        dv,
        d2v,
        d1sq_v,
        physical,
    }
}

/// Models on `n_nodes` Chebyshev points of `[λ, 1]`.
pub fn build_family(f: &SpectralField, lambda: f64, n_nodes: usize) -> Result<ModelFamily> {
    build_family_in(f, EllipticityBox::new(lambda, BoxRange::Stochastic)?, n_nodes)
}

pub fn build_family_in(f: &SpectralField, ellipticity: EllipticityBox, n_nodes: usize) -> Result<ModelFamily> {
    let (lo, hi) = ellipticity.bounds();
    let cheb = Chebyshev::new(lo, hi, n_nodes)?;
    let nodes = cheb
        .nodes()
        .par_iter()
        .map(|&a0| node_fields(f, a0))
        .collect();
    Ok(ModelFamily {
        ellipticity,
        cheb,
        nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{forward, GridSpec};
    use crate::noise::{sample_noise, CovarianceSpec};
    use crate::rng::SeedSpec;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid() -> GridSpec {
        GridSpec::new(32, 32).unwrap()
    }

    fn noise(i: u64) -> SpectralField {
        let s = CovarianceSpec::product(0.4, 0.0, 0.7).unwrap();
        sample_noise(&s, &grid(), SeedSpec::noise(5, i))
    }

    fn rel_l2(a: &SpectralField, b: &SpectralField) -> f64 {
        a.sub(b).power().sqrt() / b.power().sqrt().max(1e-300)
    }

    #[test]
    fn green_values() {
        assert_eq!(green_multiplier(0.0, 0.0, 0.7), Complex64::new(0.0, 0.0));
        let k = 2.0 * PI;
        let g = green_multiplier(k, 0.0, 1.0);
        assert!((g.re - 1.0 / (4.0 * PI * PI)).abs() < 1e-16 && g.im == 0.0);
        let g = green_multiplier(0.0, k, 0.6);
        assert!(g.re == 0.0 && (g.im + 1.0 / (2.0 * PI)).abs() < 1e-16);
    }

    #[test]
    fn cosine_solve_and_derivative() {
        let g = grid();
        let f = forward(&PhysicalField::from_fn(g, |x1, _| (2.0 * PI * x1).cos()));
        let v = solve_heat(&f, 1.0).inverse();
        let want = PhysicalField::from_fn(g, |x1, _| (2.0 * PI * x1).cos() / (4.0 * PI * PI));
        assert!((&v - &want).max_abs() < 1e-15);
        let dv = a0_derivative(&f, 1.0, 1).unwrap().inverse();
        let want = PhysicalField::from_fn(g, |x1, _| -(2.0 * PI * x1).cos() / (4.0 * PI * PI));
        assert!((&dv - &want).max_abs() < 1e-15);
        assert!(a0_derivative(&f, 1.0, 3).is_err());
    }

    #[test]
    fn residual_and_derivative_identities() {
        let f = noise(0);
        for a0 in [0.5, 0.8, 1.0] {
            let v = solve_heat(&f, a0);
            assert!(rel_l2(&heat_operator(&v, a0), &project_mean_zero(&f)) < 1e-12);
            let delta = 1e-3;
            let fd = solve_heat(&f, a0 + delta)
                .sub(&solve_heat(&f, a0 - delta))
                .scale(0.5 / delta);
            let dv = a0_derivative(&f, a0, 1).unwrap();
            assert!(rel_l2(&fd, &dv) < 1e-5);
            let d2v = a0_derivative(&f, a0, 2).unwrap();
            let lhs = heat_operator(&d2v, a0);
            let rhs = d1_squared(&dv).scale(2.0);
            assert!(rel_l2(&lhs, &rhs) < 1e-12);
        }
    }

    #[test]
    fn family_nodes_and_interpolation() {
        let f = noise(1);
        let fam = build_family(&f, 0.5, 9).unwrap();
        assert_eq!(fam.nodes().len(), 9);
        assert!(fam.a0_nodes().iter().all(|&a| (0.5..=1.0).contains(&a)));
        for n in fam.nodes() {
            assert!(rel_l2(&heat_operator(&n.v, n.a0), &project_mean_zero(&f)) < 1e-12);
            assert_eq!(n.v.coeff(0, 0), Complex64::new(0.0, 0.0));
        }
        // k2 = 0 modes carry 1/a0, whose pole at 0 limits nine nodes to ~1e-7
        for (n, tol) in [(9, 5e-7), (12, 1e-8)] {
            let fam = build_family(&f, 0.5, n).unwrap();
            for w in fam.a0_nodes().windows(2) {
                let mid = 0.5 * (w[0] + w[1]);
                let direct = solve_heat(&f, mid).inverse();
                let a = PhysicalField::constant(*f.grid(), mid);
                let e = fam.evaluate_e(Component::V, &a).unwrap();
                assert!((&e - &direct).max_abs() < tol * direct.max_abs());
            }
        }
        assert!(matches!(build_family(&f, 1.5, 9), Err(Error::Lambda(_))));
        assert!(matches!(build_family(&f, 0.5, 2), Err(Error::TooFewNodes(2))));
    }

    #[test]
    fn evaluation_operator() {
        let g = grid();
        let f = noise(2);
        let fam = build_family(&f, 0.5, 9).unwrap();
        let node = fam.a0_nodes()[2];
        let e = fam
            .evaluate_e(Component::V, &PhysicalField::constant(g, node))
            .unwrap();
        assert_eq!(&e, fam.nodes()[2].physical(Component::V));

        let a = PhysicalField::from_fn(g, |x1, x2| 0.75 + 0.2 * (2.0 * PI * (x1 + 2.0 * x2)).sin());
        let e = fam.evaluate_e(Component::D1sqV, &a).unwrap();
        let mut st = SeedSpec::noise(1, 0).with_purpose(crate::rng::Purpose::Probe).stream(0);
        for _ in 0..16 {
            let idx = st.below(g.len());
            let direct = d1_squared(&solve_heat(&f, a.values()[idx])).inverse();
            let want = direct.values()[idx];
            let scale = direct.max_abs();
            assert!((e.values()[idx] - want).abs() < 1e-6 * scale);
        }
        let bad = PhysicalField::from_fn(g, |x1, _| if x1 > 0.5 { 0.2 } else { 0.7 });
        match fam.evaluate_e(Component::V, &bad) {
            Err(Error::OutOfRange { count, .. }) => assert_eq!(count, g.len() / 2 - g.n2()),
            other => panic!("unexpected {other:?}"),
        }
        let zero = ModelFamily::zero(g, 0.5, 5).unwrap();
        assert_eq!(zero.evaluate_e(Component::V, &a).unwrap().max_abs(), 0.0);
    }

    proptest! {
        #[test]
        fn green_symbol_is_bounded(k1 in -500.0f64..500.0, k2 in -500.0f64..500.0, a0 in 0.5f64..1.0) {
            prop_assume!(k1.abs() + k2.abs() > 1e-3);
            let g = green_multiplier(k1, k2, a0).norm() * (a0 * k1 * k1 + k2.abs());
            prop_assert!(g >= std::f64::consts::FRAC_1_SQRT_2 - 1e-12);
            prop_assert!(g <= std::f64::consts::SQRT_2 + 1e-12);
        }

        #[test]
        fn barycentric_reproduces_polynomials(c in proptest::collection::vec(-1.0f64..1.0, 5), x in 0.5f64..1.0) {
            let ch = Chebyshev::new(0.5, 1.0, 9).unwrap();
            let p = |t: f64| c.iter().rev().fold(0.0, |acc, &ci| acc * t + ci);
            let vals: Vec<f64> = ch.nodes().iter().map(|&t| p(t)).collect();
            prop_assert!((ch.interpolate(&vals, x) - p(x)).abs() < 1e-12);
        }
    }
}
