//! Periodic grid on the unit torus, Fourier-series transforms and field containers.
//!
//! Fields are stored row-major with `x1` as the slow index: value `(i1, i2)` lives at
//! `i1 * n2 + i2`. Spectral coefficients use the same layout in FFT order, so index
//! `i` carries the integer frequency `i` for `i < n/2` and `i - n` otherwise.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::ops::{Add, Mul, Sub};
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use once_cell::sync::Lazy;
use rustfft::{Fft, FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SNAPSHOT_MAGIC: &[u8; 4] = b"RPF1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct GridSpec {
    n1: usize,
    n2: usize,
}

#[derive(Deserialize)]
struct RawGrid {
    n1: usize,
    n2: usize,
}

impl TryFrom<RawGrid> for GridSpec {
    type Error = Error;
    fn try_from(raw: RawGrid) -> Result<Self> {
        GridSpec::new(raw.n1, raw.n2)
    }
}

/// Integer frequency carried by storage index `i` on an axis of length `n`.
#[inline]
pub fn freq_of_index(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Storage index of integer frequency `j` (taken modulo `n`).
#[inline]
pub fn index_of_freq(j: i64, n: usize) -> usize {
    j.rem_euclid(n as i64) as usize
}

impl GridSpec {
    pub fn new(n1: usize, n2: usize) -> Result<Self> {
        if n1 % 2 != 0 || n2 % 2 != 0 || n1 < 8 || n2 < 8 {
            return Err(Error::OddGrid { n1, n2 });
        }
        Ok(GridSpec { n1, n2 })
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h1(&self) -> f64 {
        1.0 / self.n1 as f64
    }

    pub fn h2(&self) -> f64 {
        1.0 / self.n2 as f64
    }

    #[inline]
    pub fn index(&self, i1: usize, i2: usize) -> usize {
        i1 * self.n2 + i2
    }

    #[inline]
    pub fn split(&self, idx: usize) -> (usize, usize) {
        (idx / self.n2, idx % self.n2)
    }

    pub fn point(&self, i1: usize, i2: usize) -> (f64, f64) {
        (i1 as f64 * self.h1(), i2 as f64 * self.h2())
    }

    /// Integer frequency pair of a storage index.
    pub fn freq(&self, idx: usize) -> (i64, i64) {
        let (i1, i2) = self.split(idx);
        (freq_of_index(i1, self.n1), freq_of_index(i2, self.n2))
    }

    /// Wavenumber `k = 2π j` of a storage index.
    pub fn wavenumber(&self, idx: usize) -> (f64, f64) {
        let (j1, j2) = self.freq(idx);
        (2.0 * PI * j1 as f64, 2.0 * PI * j2 as f64)
    }

    pub fn k1_table(&self) -> Vec<f64> {
        (0..self.n1)
            .map(|i| 2.0 * PI * freq_of_index(i, self.n1) as f64)
            .collect()
    }

    pub fn k2_table(&self) -> Vec<f64> {
        (0..self.n2)
            .map(|i| 2.0 * PI * freq_of_index(i, self.n2) as f64)
            .collect()
    }

    /// Storage index of `-k` for the mode stored at `idx`.
    #[inline]
    pub fn neg_index(&self, idx: usize) -> usize {
        let (i1, i2) = self.split(idx);
        let m1 = (self.n1 - i1) % self.n1;
        let m2 = (self.n2 - i2) % self.n2;
        self.index(m1, m2)
    }

    /// Smallest mollification scale the grid resolves: `16 max(h1^4, h2^2)`.
    pub fn t_min(&self) -> f64 {
        16.0 * self.h1().powi(4).max(self.h2().powi(2))
    }

    pub fn resolves(&self, t: f64) -> bool {
        t >= self.t_min() * (1.0 - 1e-12) && t <= 1.0
    }

    /// Dyadic scales `2^-j`, `j = 0..=j_max`, with `2^-j_max >= t_min`.
    pub fn dyadic_scales(&self) -> Vec<f64> {
        let tmin = self.t_min();
        (0..64)
            .map(|j| 0.5f64.powi(j))
            .take_while(|&t| t >= tmin * (1.0 - 1e-12))
            .collect()
    }

    pub fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch {
                left: self.to_string(),
                right: other.to_string(),
            });
        }
        Ok(())
    }
}

impl std::fmt::Display for GridSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.n1, self.n2)
    }
}

impl std::str::FromStr for GridSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Invalid(format!("grid must look like N1xN2, got {s:?}")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Invalid(format!("bad grid size {t:?}")))
        };
        GridSpec::new(parse(a)?, parse(b)?)
    }
}

pub fn make_grid(n1: usize, n2: usize) -> Result<GridSpec> {
    GridSpec::new(n1, n2)
}

static PLANS: Lazy<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

fn plan(n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    let mut cache = PLANS.lock().expect("fft plan cache poisoned");
    cache
        .entry((n, forward))
        .or_insert_with(|| {
            let dir = if forward {
                FftDirection::Forward
            } else {
                FftDirection::Inverse
            };
            FftPlanner::new().plan_fft(n, dir)
        })
        .clone()
}

fn transpose(src: &[Complex64], rows: usize, cols: usize, dst: &mut [Complex64]) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Unnormalized 2-D transform in place (x2 rows, then x1 columns).
fn fft2(grid: &GridSpec, data: &mut [Complex64], forward: bool) {
    let (n1, n2) = (grid.n1, grid.n2);
    plan(n2, forward).process(data);
    let mut t = vec![Complex64::new(0.0, 0.0); data.len()];
    transpose(data, n1, n2, &mut t);
    plan(n1, forward).process(&mut t);
    transpose(&t, n2, n1, data);
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalField {
    grid: GridSpec,
    values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    grid: GridSpec,
    coeffs: Vec<Complex64>,
}

impl PhysicalField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Invalid(format!(
                "expected {} values for grid {grid}, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite value at index {i}")));
        }
        Ok(PhysicalField { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        PhysicalField {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        PhysicalField {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|idx| {
                let (i1, i2) = grid.split(idx);
                let (x1, x2) = grid.point(i1, i2);
                f(x1, x2)
            })
            .collect();
        PhysicalField { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i1: usize, i2: usize) -> f64 {
        self.values[self.grid.index(i1, i2)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        PhysicalField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        PhysicalField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn mean_square(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64
    }

    pub fn forward(&self) -> SpectralField {
        forward(self)
    }
}

impl Add for &PhysicalField {
    type Output = PhysicalField;
    fn add(self, rhs: Self) -> PhysicalField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &PhysicalField {
    type Output = PhysicalField;
    fn sub(self, rhs: Self) -> PhysicalField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul for &PhysicalField {
    type Output = PhysicalField;
    fn mul(self, rhs: Self) -> PhysicalField {
        self.zip_map(rhs, |a, b| a * b)
    }
}

impl SpectralField {
    pub fn new(grid: GridSpec, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::Invalid(format!(
                "expected {} coefficients for grid {grid}, got {}",
                grid.len(),
                coeffs.len()
            )));
        }
        Ok(SpectralField { grid, coeffs })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        SpectralField {
            grid,
            coeffs: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    /// Field with the given amplitude at integer frequency `(j1, j2)` and the
    /// conjugate amplitude at `-(j1, j2)`.
    pub fn single_mode(grid: GridSpec, j1: i64, j2: i64, amp: Complex64) -> Self {
        let mut s = Self::zeros(grid);
        let a = grid.index(index_of_freq(j1, grid.n1), index_of_freq(j2, grid.n2));
        let b = grid.neg_index(a);
        s.coeffs[a] += amp;
        if b != a {
            s.coeffs[b] += amp.conj();
        } else {
            s.coeffs[a] = Complex64::new(s.coeffs[a].re, 0.0);
        }
        s
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn coeff(&self, j1: i64, j2: i64) -> Complex64 {
        self.coeffs[self.grid.index(
            index_of_freq(j1, self.grid.n1),
            index_of_freq(j2, self.grid.n2),
        )]
    }

    /// Multiply mode-wise by a real symbol `m(k1, k2)`.
    pub fn scale_by(&self, m: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let k1 = self.grid.k1_table();
        let k2 = self.grid.k2_table();
        let n2 = self.grid.n2;
        let coeffs = self
            .coeffs
            .chunks(n2)
            .zip(&k1)
            .flat_map(|(row, &a)| row.iter().zip(&k2).map(move |(c, &b)| (c, a, b)))
            .map(|(c, a, b)| c * m(a, b))
            .collect();
        SpectralField {
            grid: self.grid,
            coeffs,
        }
    }

    /// Multiply mode-wise by a complex symbol and restore Hermitian symmetry.
    pub fn apply(&self, m: impl Fn(f64, f64) -> Complex64 + Sync) -> Self {
        let k1 = self.grid.k1_table();
        let k2 = self.grid.k2_table();
        let n2 = self.grid.n2;
        let coeffs = self
            .coeffs
            .chunks(n2)
            .zip(&k1)
            .flat_map(|(row, &a)| row.iter().zip(&k2).map(move |(c, &b)| (c, a, b)))
            .map(|(c, a, b)| c * m(a, b))
            .collect();
        let mut out = SpectralField {
            grid: self.grid,
            coeffs,
        };
        out.symmetrize_nyquist();
        out
    }

    /// Restore `c(-k) = conj c(k)` on the Nyquist lines, where a symbol evaluated at
    /// the negative frequency need not be conjugate-symmetric.
    pub fn symmetrize_nyquist(&mut self) {
        let (n1, n2) = (self.grid.n1, self.grid.n2);
        let g = self.grid;
        let fix = |idx: usize, coeffs: &mut [Complex64]| {
            let m = g.neg_index(idx);
            if m == idx {
                coeffs[idx] = Complex64::new(coeffs[idx].re, 0.0);
            } else if idx < m {
                let avg = 0.5 * (coeffs[idx] + coeffs[m].conj());
                coeffs[idx] = avg;
                coeffs[m] = avg.conj();
            }
        };
        for i2 in 0..n2 {
            fix(g.index(n1 / 2, i2), &mut self.coeffs);
        }
        for i1 in 0..n1 {
            fix(g.index(i1, n2 / 2), &mut self.coeffs);
        }
    }

    /// Largest `|c(-k) - conj c(k)|` relative to the largest coefficient.
    pub fn hermitian_defect(&self) -> f64 {
        let scale = self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.norm()));
        if scale == 0.0 {
            return 0.0;
        }
        let worst = (0..self.coeffs.len()).fold(0.0f64, |m, idx| {
            let n = self.grid.neg_index(idx);
            m.max((self.coeffs[n] - self.coeffs[idx].conj()).norm())
        });
        worst / scale
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        SpectralField {
            grid: self.grid,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        SpectralField {
            grid: self.grid,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        SpectralField {
            grid: self.grid,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    /// Point value of the trigonometric polynomial at the origin.
    pub fn value_at_origin(&self) -> f64 {
        self.coeffs.iter().map(|c| c.re).sum()
    }

    /// Point value at an arbitrary `(x1, x2)`, by direct summation.
    pub fn value_at(&self, x1: f64, x2: f64) -> f64 {
        (0..self.coeffs.len())
            .map(|idx| {
                let (k1, k2) = self.grid.wavenumber(idx);
                let ph = k1 * x1 + k2 * x2;
                self.coeffs[idx].re * ph.cos() - self.coeffs[idx].im * ph.sin()
            })
            .sum()
    }

    /// `sum_k |c(k)|^2`, the spatial mean square of the real field.
    pub fn power(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn inverse(&self) -> PhysicalField {
        inverse(self)
    }
}

/// Fourier-series coefficients of a physical field: `c(k) = N^-1 sum_x u(x) e^{-ik.x}`.
pub fn forward(field: &PhysicalField) -> SpectralField {
    let grid = field.grid;
    let mut data: Vec<Complex64> = field
        .values
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    fft2(&grid, &mut data, true);
    let norm = 1.0 / grid.len() as f64;
    data.iter_mut().for_each(|c| *c *= norm);
    let mut s = SpectralField { grid, coeffs: data };
    s.symmetrize_nyquist();
    s
}

/// Synthesis `u(x) = sum_k c(k) e^{ik.x}`, keeping the real part.
pub fn inverse(field: &SpectralField) -> PhysicalField {
    let grid = field.grid;
    let mut data = field.coeffs.clone();
    fft2(&grid, &mut data, false);
    PhysicalField {
        grid,
        values: data.into_iter().map(|c| c.re).collect(),
    }
}

/// The projection `P` onto space-time mean-zero functions.
pub fn project_mean_zero(field: &SpectralField) -> SpectralField {
    let mut out = field.clone();
    out.coeffs[0] = Complex64::new(0.0, 0.0);
    out
}

/// `∂₁²` as the symbol `-k1²`.
pub fn d1_squared(field: &SpectralField) -> SpectralField {
    field.scale_by(|k1, _| -k1 * k1)
}

/// `∂₂` as the symbol `i k2`.
pub fn d2(field: &SpectralField) -> SpectralField {
    field.apply(|_, k2| Complex64::new(0.0, k2))
}

/// Zero the x2-Nyquist column `j2 = -n2/2`.
pub fn drop_x2_nyquist(field: &SpectralField) -> SpectralField {
    let g = field.grid;
    let mut out = field.clone();
    for i1 in 0..g.n1 {
        out.coeffs[g.index(i1, g.n2 / 2)] = Complex64::new(0.0, 0.0);
    }
    out
}

/// Whether a mode lies on the x2-Nyquist column.
pub fn on_x2_nyquist(grid: &GridSpec, idx: usize) -> bool {
    grid.split(idx).1 == grid.n2 / 2
}

/// Zero every mode outside the central two thirds of each axis.
pub fn dealias_two_thirds(field: &SpectralField) -> SpectralField {
    let g = field.grid;
    let (c1, c2) = (g.n1 as i64 / 3, g.n2 as i64 / 3);
    let mut out = field.clone();
    for (idx, c) in out.coeffs.iter_mut().enumerate() {
        let (j1, j2) = g.freq(idx);
        if j1.abs() > c1 || j2.abs() > c2 {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    out
}

/// Which representation a snapshot holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnapshotKind {
    Physical = 0,
    Spectral = 1,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Snapshot {
    Physical(PhysicalField),
    Spectral(SpectralField),
}

fn write_header<W: Write>(w: &mut W, grid: &GridSpec, kind: SnapshotKind) -> Result<()> {
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&(grid.n1 as u64).to_le_bytes())?;
    w.write_all(&(grid.n2 as u64).to_le_bytes())?;
    w.write_all(&[kind as u8])?;
    Ok(())
}

/// Binary snapshot: `"RPF1"`, `n1: u64`, `n2: u64`, `kind: u8`, then little-endian
/// doubles (row-major values, or interleaved re/im coefficients).
pub fn write_physical<W: Write>(w: &mut W, field: &PhysicalField) -> Result<()> {
    write_header(w, &field.grid, SnapshotKind::Physical)?;
    for v in &field.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_spectral<W: Write>(w: &mut W, field: &SpectralField) -> Result<()> {
    write_header(w, &field.grid, SnapshotKind::Spectral)?;
    for c in &field.coeffs {
        w.write_all(&c.re.to_le_bytes())?;
        w.write_all(&c.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_snapshot<R: Read>(r: &mut R) -> Result<Snapshot> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Snapshot(format!("bad magic {magic:?}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n1 = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let n2 = u64::from_le_bytes(b8) as usize;
    let grid = GridSpec::new(n1, n2)?;
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let mut next = || -> Result<f64> {
        r.read_exact(&mut b8)?;
        Ok(f64::from_le_bytes(b8))
    };
    match kind[0] {
        0 => {
            let values = (0..grid.len()).map(|_| next()).collect::<Result<_>>()?;
            Ok(Snapshot::Physical(PhysicalField::new(grid, values)?))
        }
        1 => {
            let coeffs = (0..grid.len())
                .map(|_| Ok(Complex64::new(next()?, next()?)))
                .collect::<Result<_>>()?;
            Ok(Snapshot::Spectral(SpectralField::new(grid, coeffs)?))
        }
        k => Err(Error::Snapshot(format!("unknown kind byte {k}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn g8() -> GridSpec {
        GridSpec::new(8, 8).unwrap()
    }

    #[test]
    fn lattice_of_small_grid() {
        let g = g8();
        let j: Vec<i64> = (0..8).map(|i| freq_of_index(i, 8)).collect();
        let mut sorted = j.clone();
        sorted.sort();
        assert_eq!(sorted, (-4..4).collect::<Vec<_>>());
        for idx in 0..g.len() {
            let (j1, j2) = g.freq(idx);
            assert_eq!(g.index(index_of_freq(j1, 8), index_of_freq(j2, 8)), idx);
        }
        assert_eq!(GridSpec::new(128, 128).unwrap().len(), 16384);
    }

    #[test]
    fn rejects_odd_and_tiny() {
        let e = GridSpec::new(7, 8).unwrap_err();
        assert!(e.to_string().contains("grid sizes must be even"));
        assert!(GridSpec::new(6, 8).is_err());
        assert!("16x32".parse::<GridSpec>().is_ok());
        assert!("16by32".parse::<GridSpec>().is_err());
    }

    #[test]
    fn constant_and_cosine_modes() {
        let g = GridSpec::new(16, 8).unwrap();
        let one = forward(&PhysicalField::constant(g, 1.0));
        assert_abs_diff_eq!(one.coeff(0, 0).re, 1.0, epsilon = 1e-15);
        assert!(one.coeffs()[1..].iter().all(|c| c.norm() < 1e-15));
        let c = forward(&PhysicalField::from_fn(g, |x1, _| (2.0 * PI * x1).cos()));
        assert_abs_diff_eq!(c.coeff(1, 0).re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.coeff(-1, 0).re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.power(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn projection_and_second_derivative() {
        let g = GridSpec::new(16, 16).unwrap();
        let mut s = SpectralField::single_mode(g, 2, 1, Complex64::new(1.0, 0.0));
        s.coeffs_mut()[0] = Complex64::new(3.0, 0.0);
        let p = project_mean_zero(&s);
        assert_eq!(p.coeff(0, 0), Complex64::new(0.0, 0.0));
        assert_eq!(p.coeff(2, 1), Complex64::new(1.0, 0.0));
        assert_eq!(project_mean_zero(&p), p);
        assert!(project_mean_zero(&forward(&PhysicalField::constant(g, 4.0)))
            .inverse()
            .max_abs()
            < 1e-15);

        let c = forward(&PhysicalField::from_fn(g, |x1, _| (2.0 * PI * x1).cos()));
        let d = d1_squared(&c).inverse();
        let want = PhysicalField::from_fn(g, |x1, _| -4.0 * PI * PI * (2.0 * PI * x1).cos());
        assert!((&d - &want).max_abs() < 1e-12);
        let c2 = forward(&PhysicalField::from_fn(g, |_, x2| (2.0 * PI * x2).cos()));
        assert!(d1_squared(&c2).inverse().max_abs() < 1e-14);
        assert!(d1_squared(&forward(&PhysicalField::constant(g, 2.0)))
            .inverse()
            .max_abs()
            < 1e-14);
    }

    #[test]
    fn snapshot_round_trip() {
        let g = GridSpec::new(8, 10).unwrap();
        let u = PhysicalField::from_fn(g, |x1, x2| (x1 * 3.0).sin() + x2);
        let mut buf = Vec::new();
        write_physical(&mut buf, &u).unwrap();
        assert_eq!(&buf[..4], b"RPF1");
        assert_eq!(buf.len(), 4 + 8 + 8 + 1 + 8 * 80);
        assert_eq!(read_snapshot(&mut buf.as_slice()).unwrap(), Snapshot::Physical(u.clone()));
        let s = forward(&u);
        let mut buf = Vec::new();
        write_spectral(&mut buf, &s).unwrap();
        assert_eq!(buf.len(), 21 + 16 * 80);
        assert_eq!(read_snapshot(&mut buf.as_slice()).unwrap(), Snapshot::Spectral(s));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_snapshot(&mut bad.as_slice()).is_err());
    }

    #[test]
    fn dyadic_scales_stop_at_resolution() {
        let g = GridSpec::new(64, 64).unwrap();
        let ts = g.dyadic_scales();
        assert_eq!(ts.first(), Some(&1.0));
        assert_eq!(*ts.last().unwrap(), 16.0 / 4096.0);
        assert!(ts.iter().all(|&t| g.resolves(t)));
    }

    fn grid_strategy() -> impl Strategy<Value = GridSpec> {
        (4usize..12, 4usize..12).prop_map(|(a, b)| GridSpec::new(2 * a, 2 * b).unwrap())
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(g in grid_strategy(), seed in any::<u64>()) {
            let mut s = seed;
            let vals = (0..g.len())
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect();
            let u = PhysicalField::new(g, vals).unwrap();
            let f = forward(&u);
            prop_assert!(f.hermitian_defect() < 1e-12);
            let back = inverse(&f);
            let err = (&back - &u).max_abs() / u.max_abs();
            prop_assert!(err < 1e-12);
        }

        #[test]
        fn projection_is_idempotent_and_commutes(g in grid_strategy(), j1 in -3i64..3, j2 in -3i64..3, a in -2.0f64..2.0) {
            let mut s = SpectralField::single_mode(g, j1, j2, Complex64::new(a, 0.5 * a));
            s.coeffs_mut()[0] += Complex64::new(1.5, 0.0);
            let p = project_mean_zero(&s);
            prop_assert_eq!(project_mean_zero(&p), p.clone());
            prop_assert_eq!(d1_squared(&p), project_mean_zero(&d1_squared(&s)));
        }
    }
}
