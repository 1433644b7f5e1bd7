//! The mollification family `(·)_T` with symbol `exp(-T(k1⁴ + k2²))`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, SpectralField};

#[inline]
pub fn symbol(t: f64, k1: f64, k2: f64) -> f64 {
    (-t * (k1 * k1 * k1 * k1 + k2 * k2)).exp()
}

/// A mollification scale the grid resolves.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct MollifierScale(f64);

impl MollifierScale {
    pub fn new(t: f64, grid: &GridSpec) -> Result<Self> {
        if !(t > 0.0) || !grid.resolves(t) {
            return Err(Error::Invalid(format!(
                "scale T = {t:e} outside ({:e}, 1] for grid {grid}",
                grid.t_min()
            )));
        }
        Ok(MollifierScale(t))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn x1_width(self) -> f64 {
        self.0.powf(0.25)
    }
}

/// Warning text for a scale below the grid resolution, if any.
pub fn scale_warning(grid: &GridSpec, t: f64) -> Option<String> {
    (!grid.resolves(t)).then(|| {
        format!(
            "T = {t:e} is outside the resolvable range ({:e}, 1] of grid {grid}",
            grid.t_min()
        )
    })
}

/// `f_T`. Scales below the grid resolution are computed anyway; see [`scale_warning`].
pub fn mollify(f: &SpectralField, t: f64) -> SpectralField {
    if t == 0.0 {
        return f.clone();
    }
    f.scale_by(|k1, k2| symbol(t, k1, k2))
}

/// `[x1, (·)_T] f`, the convolution with `x1 ψ_T`, symbol `-4iT k1³ exp(-T(k1⁴+k2²))`.
pub fn x1_commutator(f: &SpectralField, t: f64) -> SpectralField {
    f.apply(|k1, k2| Complex64::new(0.0, -4.0 * t * k1 * k1 * k1 * symbol(t, k1, k2)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X1,
    X2,
}

pub mod kernel {
    //! Physical-space values of the mollifier `ψ_T(x) = φ_T(x1) g_T(x2)` on the plane.

    use std::f64::consts::PI;

    const S_MAX: f64 = 4.5;
    const S_STEPS: usize = 2304;

    /// `∂^j φ_1(z)` where `φ_1` has transform `exp(-k⁴)`, by trapezoidal quadrature of
    /// an even, entire integrand.
    pub fn phi1_derivative(j: u32, z: f64) -> f64 {
        let ds = S_MAX / S_STEPS as f64;
        let term = |s: f64| {
            let osc = match j % 4 {
                0 => (s * z).cos(),
                1 => -(s * z).sin(),
                2 => -(s * z).cos(),
                _ => (s * z).sin(),
            };
            s.powi(j as i32) * osc * (-s.powi(4)).exp()
        };
        let mut acc = 0.5 * term(0.0);
        for i in 1..=S_STEPS {
            acc += term(i as f64 * ds);
        }
        acc * ds / PI
    }

    /// `∂^j φ_T(z) = T^{-(j+1)/4} ∂^j φ_1(z T^{-1/4})`.
    pub fn phi_derivative(j: u32, t: f64, z: f64) -> f64 {
        let w = t.powf(0.25);
        phi1_derivative(j, z / w) / w.powi(j as i32 + 1)
    }

    fn hermite(j: u32, y: f64) -> f64 {
        match j {
            0 => 1.0,
            1 => 2.0 * y,
            2 => 4.0 * y * y - 2.0,
            3 => 8.0 * y.powi(3) - 12.0 * y,
            4 => 16.0 * y.powi(4) - 48.0 * y * y + 12.0,
            _ => {
                let (mut a, mut b) = (4.0 * y * y - 2.0, 8.0 * y.powi(3) - 12.0 * y);
                for n in 3..j {
                    let c = 2.0 * y * b - 2.0 * n as f64 * a;
                    a = b;
                    b = c;
                }
                b
            }
        }
    }

    /// `∂^j g_T(x)` for the heat kernel with transform `exp(-T k²)`.
    pub fn heat_derivative(j: u32, t: f64, x: f64) -> f64 {
        let s = (4.0 * t).sqrt();
        let y = x / s;
        let g = (-y * y).exp() / (PI * 4.0 * t).sqrt();
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        sign * hermite(j, y) * g / s.powi(j as i32)
    }
}

/// `∫_{R²} |∂^order_axis ψ_T(x)| d(0,x)^moment_alpha dx`, `d(0,x) = |x1| + sqrt|x2|`.
pub fn kernel_moment(axis: Axis, order: u32, moment_alpha: f64, t: f64) -> Result<f64> {
    if order > 4 {
        return Err(Error::Invalid(format!("derivative order {order} > 4")));
    }
    if !(moment_alpha >= 0.0) || !(t > 0.0) {
        return Err(Error::Invalid("need moment_alpha >= 0 and T > 0".into()));
    }
    let (j1, j2) = match axis {
        Axis::X1 => (order, 0),
        Axis::X2 => (0, order),
    };
    let n = 1600usize;
    let l1 = 30.0 * t.powf(0.25);
    let l2 = 14.0 * t.sqrt();
    let h1 = 2.0 * l1 / n as f64;
    let h2 = 2.0 * l2 / n as f64;
    let xs1: Vec<f64> = (0..=n).map(|i| -l1 + i as f64 * h1).collect();
    let xs2: Vec<f64> = (0..=n).map(|i| -l2 + i as f64 * h2).collect();
    let a: Vec<f64> = xs1
        .iter()
        .map(|&x| kernel::phi_derivative(j1, t, x).abs())
        .collect();
    let b: Vec<f64> = xs2
        .iter()
        .map(|&x| kernel::heat_derivative(j2, t, x).abs())
        .collect();
    let sq: Vec<f64> = xs2.iter().map(|x| x.abs().sqrt()).collect();
    let w = |i: usize| if i == 0 || i == n { 0.5 } else { 1.0 };
    let mut total = 0.0;
    for (i, (&x1, &ai)) in xs1.iter().zip(&a).enumerate() {
        let mut row = 0.0;
        for (k, (&bk, &sk)) in b.iter().zip(&sq).enumerate() {
            let d = x1.abs() + sk;
            let m = if moment_alpha == 0.0 { 1.0 } else { d.powf(moment_alpha) };
            row += w(k) * bk * m;
        }
        total += w(i) * ai * row;
    }
    Ok(total * h1 * h2)
}
