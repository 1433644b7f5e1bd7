//! Stationary periodic Gaussian forcing and its regularization.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{freq_of_index, index_of_freq, GridSpec, SpectralField};
use crate::rng::{zigzag, SeedSpec};

/// A power spectrum `Ĉ(k)` on the lattice `2πZ²`.
pub trait Spectrum: Sync {
    fn covariance(&self, k1: f64, k2: f64) -> f64;
}

impl<F: Fn(f64, f64) -> f64 + Sync> Spectrum for F {
    fn covariance(&self, k1: f64, k2: f64) -> f64 {
        self(k1, k2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceForm {
    Product,
    SpatialOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", deny_unknown_fields)]
pub struct CovarianceSpec {
    pub form: CovarianceForm,
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    form: CovarianceForm,
    lambda1: f64,
    #[serde(default)]
    lambda2: f64,
    alpha: f64,
}

impl TryFrom<RawSpec> for CovarianceSpec {
    type Error = Error;
    fn try_from(r: RawSpec) -> Result<Self> {
        CovarianceSpec::new(r.form, r.lambda1, r.lambda2, r.alpha)
    }
}

impl CovarianceSpec {
    /// Validated constructor; rejects triples outside the admissible region.
    pub fn new(form: CovarianceForm, lambda1: f64, lambda2: f64, alpha: f64) -> Result<Self> {
        let spec = CovarianceSpec {
            form,
            lambda1,
            lambda2,
            alpha,
        };
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Inadmissible(format!("alpha {alpha} not in (0,1)")));
        }
        if !lambda1.is_finite() || !lambda2.is_finite() {
            return Err(Error::Inadmissible("non-finite exponent".into()));
        }
        let a = alpha;
        match form {
            CovarianceForm::Product => {
                if lambda1 + lambda2 < -1.0 + 2.0 * a {
                    return Err(Error::Inadmissible(format!(
                        "lambda1 + lambda2 = {} < 2 alpha - 1 = {}",
                        lambda1 + lambda2,
                        2.0 * a - 1.0
                    )));
                }
                if lambda1 <= -3.0 + 2.0 * a {
                    return Err(Error::Inadmissible(format!(
                        "lambda1 = {lambda1} <= 2 alpha - 3"
                    )));
                }
                if lambda2 <= -2.0 + 2.0 * a {
                    return Err(Error::Inadmissible(format!(
                        "lambda2 = {lambda2} <= 2 alpha - 2"
                    )));
                }
            }
            CovarianceForm::SpatialOnly => {
                if lambda1 <= -3.0 + 2.0 * a {
                    return Err(Error::Inadmissible(format!(
                        "lambda1 = {lambda1} <= 2 alpha - 3"
                    )));
                }
            }
        }
        Ok(spec)
    }

    pub fn product(lambda1: f64, lambda2: f64, alpha: f64) -> Result<Self> {
        Self::new(CovarianceForm::Product, lambda1, lambda2, alpha)
    }

    pub fn spatial_only(lambda1: f64, alpha: f64) -> Result<Self> {
        Self::new(CovarianceForm::SpatialOnly, lambda1, 0.0, alpha)
    }

    /// Whether the renormalization constants stay bounded as the regularization is removed.
    pub fn satisfies_a2(&self) -> bool {
        match self.form {
            CovarianceForm::Product => {
                self.lambda1 + self.lambda2 > 1.0 && self.lambda1 > -1.0 && self.lambda2 > -2.0
            }
            CovarianceForm::SpatialOnly => self.lambda1 > -1.0,
        }
    }
}

impl Spectrum for CovarianceSpec {
    fn covariance(&self, k1: f64, k2: f64) -> f64 {
        covariance_at(self, k1, k2)
    }
}

pub fn covariance_at(spec: &CovarianceSpec, k1: f64, k2: f64) -> f64 {
    if k1 == 0.0 && k2 == 0.0 {
        return 0.0;
    }
    match spec.form {
        CovarianceForm::Product => {
            (1.0 + k1.abs()).powf(-spec.lambda1) * (1.0 + k2.abs()).powf(-spec.lambda2 / 2.0)
        }
        CovarianceForm::SpatialOnly => {
            if k2 == 0.0 {
                (1.0 + k1.abs()).powf(-spec.lambda1)
            } else {
                0.0
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ModeClass {
    Canonical,
    SelfConjugate,
    Partner,
}

fn classify(j1: i64, j2: i64, n1: usize, n2: usize) -> ModeClass {
    let h1 = n1 as i64 / 2;
    let h2 = n2 as i64 / 2;
    let self1 = j1 == 0 || j1 == -h1;
    let self2 = j2 == 0 || j2 == -h2;
    if self1 && self2 {
        ModeClass::SelfConjugate
    } else if (j1 > 0) || (self1 && j2 > 0) {
        ModeClass::Canonical
    } else {
        ModeClass::Partner
    }
}

/// Draw `f̂(k) = sqrt(Ĉ(k)) Z_k` with `Z_{-k} = conj(Z_k)` and `<|Z_k|²> = 1`.
///
/// The x2-Nyquist column `j2 = -n2/2` is left empty; see [`in_noise_support`].
///
/// Row `j1` reads its normals from block `zigzag(j1)` in zigzag order of `j2`, so a
/// coarse grid sees the same low modes as a finer one with the same seed.
pub fn sample_noise<S: Spectrum + ?Sized>(spec: &S, grid: &GridSpec, seed: SeedSpec) -> SpectralField {
    let (n1, n2) = (grid.n1(), grid.n2());
    let draw_row = |j1: i64| -> Vec<(f64, f64)> {
        let mut st = seed.stream(zigzag(j1));
        let mut z = vec![(0.0, 0.0); n2];
        for m in 0..n2 as u64 {
            let j2 = if m % 2 == 0 { (m / 2) as i64 } else { -(((m + 1) / 2) as i64) };
            z[index_of_freq(j2, n2)] = st.normal_pair();
        }
        z
    };
    let rows: Vec<(usize, Vec<(f64, f64)>)> = (0..n1)
        .into_par_iter()
        .filter_map(|i1| {
            let j1 = freq_of_index(i1, n1);
            (j1 >= 0 || j1 == -(n1 as i64) / 2).then(|| (i1, draw_row(j1)))
        })
        .collect();
    let mut zrows: Vec<Option<Vec<(f64, f64)>>> = vec![None; n1];
    for (i1, r) in rows {
        zrows[i1] = Some(r);
    }
    let k1 = grid.k1_table();
    let k2 = grid.k2_table();
    let mut coeffs = vec![Complex64::new(0.0, 0.0); grid.len()];
    let s2 = std::f64::consts::FRAC_1_SQRT_2;
    for i1 in 0..n1 {
        let j1 = freq_of_index(i1, n1);
        for i2 in 0..n2 {
            let j2 = freq_of_index(i2, n2);
            let amp = if j2 == -(n2 as i64) / 2 {
                0.0
            } else {
                spec.covariance(k1[i1], k2[i2]).sqrt()
            };
            let idx = grid.index(i1, i2);
            coeffs[idx] = match classify(j1, j2, n1, n2) {
                ModeClass::SelfConjugate => {
                    let g = zrows[i1].as_ref().expect("self-conjugate row drawn")[i2];
                    Complex64::new(amp * g.0, 0.0)
                }
                ModeClass::Canonical => {
                    let g = zrows[i1].as_ref().expect("canonical row drawn")[i2];
                    Complex64::new(g.0, g.1) * (amp * s2)
                }
                ModeClass::Partner => {
                    let p = grid.neg_index(idx);
                    let (p1, p2) = grid.split(p);
                    let g = zrows[p1].as_ref().expect("partner row drawn")[p2];
                    Complex64::new(g.0, -g.1) * (amp * s2)
                }
            };
        }
    }
    SpectralField::new(*grid, coeffs).expect("grid-sized coefficient array")
}

/// Modes that carry noise: everything except the x2-Nyquist column, where `∂₂` has no
/// real representation.
pub fn in_noise_support(grid: &GridSpec, idx: usize) -> bool {
    !crate::grid::on_x2_nyquist(grid, idx)
}

/// Default regularizing kernel `exp(-ε(k1⁴ + k2²))`, the semigroup kernel at `T = ε`.
pub fn mollifier_hat(eps: f64, k1: f64, k2: f64) -> f64 {
    (-eps * (k1.powi(4) + k2 * k2)).exp()
}

/// Noise regularization kernels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Mollifier {
    Semigroup,
    /// `exp(-(c1 ε^{1/2} k1² + c2 ε k2²))`, a Gaussian with the same parabolic scaling.
    GaussianProduct { c1: f64, c2: f64 },
}

impl Mollifier {
    pub fn hat(&self, eps: f64, k1: f64, k2: f64) -> f64 {
        match *self {
            Mollifier::Semigroup => mollifier_hat(eps, k1, k2),
            Mollifier::GaussianProduct { c1, c2 } => {
                (-(c1 * eps.sqrt() * k1 * k1 + c2 * eps * k2 * k2)).exp()
            }
        }
    }
}

/// `f_ε = f ∗ ψ'_ε` for the default kernel.
pub fn mollify_noise(f: &SpectralField, eps: f64) -> SpectralField {
    if eps == 0.0 {
        return f.clone();
    }
    f.scale_by(|k1, k2| mollifier_hat(eps, k1, k2))
}

pub fn mollify_noise_with(f: &SpectralField, eps: f64, kernel: Mollifier) -> SpectralField {
    if eps == 0.0 {
        return f.clone();
    }
    f.scale_by(|k1, k2| kernel.hat(eps, k1, k2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use std::f64::consts::PI;

    fn spec() -> CovarianceSpec {
        CovarianceSpec::product(0.4, 0.0, 0.7).unwrap()
    }

    #[test]
    fn covariance_values() {
        let s = spec();
        assert_eq!(covariance_at(&s, 0.0, 0.0), 0.0);
        let v = covariance_at(&s, 2.0 * PI, 0.0);
        assert!((v - (1.0 + 2.0 * PI).powf(-0.4)).abs() < 1e-15);
        let so = CovarianceSpec::spatial_only(0.4, 0.7).unwrap();
        assert_eq!(covariance_at(&so, 2.0 * PI, 2.0 * PI), 0.0);
        assert!(covariance_at(&so, 2.0 * PI, 0.0) > 0.0);
    }

    #[test]
    fn admissibility() {
        assert!(CovarianceSpec::product(0.3, 0.0, 0.7).is_err());
        assert!(CovarianceSpec::product(1.5, 0.0, 0.7).unwrap().satisfies_a2());
        assert!(!spec().satisfies_a2());
        assert!(CovarianceSpec::product(0.4, 0.0, 1.2).is_err());
        assert!(CovarianceSpec::spatial_only(0.0, 0.7).unwrap().satisfies_a2());
        assert!(CovarianceSpec::spatial_only(-1.7, 0.7).is_err());
        let j: CovarianceSpec =
            serde_json::from_str(r#"{"form":"product","lambda1":0.4,"lambda2":0.0,"alpha":0.7}"#)
                .unwrap();
        assert_eq!(j, spec());
        assert!(serde_json::from_str::<CovarianceSpec>(
            r#"{"form":"product","lambda1":0.4,"lambda2":0.0,"alpha":0.7,"beta":1}"#
        )
        .is_err());
        assert!(serde_json::from_str::<CovarianceSpec>(
            r#"{"form":"product","lambda1":0.1,"lambda2":0.0,"alpha":0.7}"#
        )
        .is_err());
    }

    #[test]
    fn samples_are_hermitian_mean_free_and_reproducible() {
        let g = GridSpec::new(16, 12).unwrap();
        let a = sample_noise(&spec(), &g, SeedSpec::noise(9, 2));
        let b = sample_noise(&spec(), &g, SeedSpec::noise(9, 2));
        assert_eq!(a, b);
        assert_eq!(a.hermitian_defect(), 0.0);
        assert_eq!(a.coeff(0, 0), Complex64::new(0.0, 0.0));
        assert!(a.inverse().mean().abs() < 1e-14);
        let c = sample_noise(&spec(), &g, SeedSpec::noise(9, 3));
        assert_ne!(a, c);
    }

    #[test]
    fn coarse_and_fine_grids_share_low_modes() {
        let s = spec();
        let coarse = sample_noise(&s, &GridSpec::new(16, 16).unwrap(), SeedSpec::noise(4, 0));
        let fine = sample_noise(&s, &GridSpec::new(32, 32).unwrap(), SeedSpec::noise(4, 0));
        for j1 in -5..=5 {
            for j2 in -5..=5 {
                assert_eq!(coarse.coeff(j1, j2), fine.coeff(j1, j2));
            }
        }
    }

    #[test]
    fn second_moments_match_spectrum() {
        let s = spec();
        let g = GridSpec::new(8, 8).unwrap();
        let n = 2000;
        let probes = [(1i64, 0i64), (1, 2), (0, 3), (-4, 1), (-4, 0), (2, 3)];
        let samples: Vec<SpectralField> = (0..n)
            .map(|i| sample_noise(&s, &g, SeedSpec::noise(11, i)))
            .collect();
        for &(j1, j2) in &probes {
            let c = covariance_at(&s, 2.0 * PI * j1 as f64, 2.0 * PI * j2 as f64);
            let xs: Vec<f64> = samples.iter().map(|f| f.coeff(j1, j2).norm_sqr()).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            assert!((m - c).abs() < 5.0 * sd / (n as f64).sqrt(), "{j1},{j2}: {m} vs {c}");
            // <f(k) f(-l)> for l != k
            let ys: Vec<Complex64> = samples
                .iter()
                .map(|f| f.coeff(j1, j2) * f.coeff(-1, -1))
                .collect();
            let my = ys.iter().sum::<Complex64>() / n as f64;
            let sdy = (ys.iter().map(|y| (y - my).norm_sqr()).sum::<f64>() / (n - 1) as f64).sqrt();
            if (j1, j2) != (1, 1) {
                assert!(my.norm() < 5.0 * sdy / (n as f64).sqrt());
            }
        }
    }

    #[test]
    fn mollifier_kernel() {
        assert_eq!(mollifier_hat(0.3, 0.0, 0.0), 1.0);
        assert!((mollifier_hat(1e-14, 5.0, 5.0) - 1.0).abs() < 1e-10);
        assert!((mollifier_hat(1.0, 1.0, 1.0) - (-2.0f64).exp()).abs() < 1e-16);
        let g = GridSpec::new(16, 16).unwrap();
        let f = sample_noise(&spec(), &g, SeedSpec::noise(1, 0));
        assert_eq!(mollify_noise(&f, 0.0), f);
        let one = SpectralField::single_mode(g, 1, 1, Complex64::new(1.0, 0.0));
        let m = mollify_noise(&one, 0.01);
        let k = 2.0 * PI;
        assert!((m.coeff(1, 1).re - (-0.01 * (k.powi(4) + k * k)).exp()).abs() < 1e-15);
        let gp = Mollifier::GaussianProduct { c1: 1.0, c2: 1.0 };
        assert_eq!(gp.hat(0.5, 0.0, 0.0), 1.0);
    }
}
