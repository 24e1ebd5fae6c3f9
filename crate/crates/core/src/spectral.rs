//! Band-limited vector fields on the torus `[0, 2π)`.
//!
//! A [`SpectralField`] stores, for each of its `n` components, the Fourier
//! coefficients `c_k` of `u(x) = Σ_k c_k e_k(x)` in the orthonormal basis
//! `e_k(x) = (2π)^{-1/2} e^{ikx}`, `|k| ≤ K`. Only `k ≥ 0` is stored; the
//! negative modes are the complex conjugates, so every field is real-valued by
//! construction.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::io::Write;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// `(2π)^{-1/2}`, the value of `e_0`.
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
/// `(2π)^{1/2}`.
pub const SQRT_2PI: f64 = 2.506_628_274_631_000_2;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    kmax: usize,
    ncomp: usize,
    // component-major, modes 0..=kmax
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(kmax: usize, ncomp: usize) -> Self {
        assert!(ncomp > 0, "a field needs at least one component");
        Self { kmax, ncomp, coeffs: vec![Complex64::new(0.0, 0.0); ncomp * (kmax + 1)] }
    }

    /// Builds a field from the non-negative half spectrum, laid out component
    /// by component (`ncomp * (kmax + 1)` entries). The imaginary part of the
    /// mean mode is discarded.
    pub fn from_half_spectrum(kmax: usize, ncomp: usize, mut coeffs: Vec<Complex64>) -> Result<Self> {
        if ncomp == 0 || coeffs.len() != ncomp * (kmax + 1) {
            return Err(Error::Dimension { expected: ncomp * (kmax + 1), got: coeffs.len() });
        }
        for c in 0..ncomp {
            coeffs[c * (kmax + 1)].im = 0.0;
        }
        Ok(Self { kmax, ncomp, coeffs })
    }

    /// Spatially constant field with the given value in each component.
    pub fn constant(kmax: usize, values: &[f64]) -> Self {
        let mut u = Self::zeros(kmax, values.len());
        for (c, v) in values.iter().enumerate() {
            u.coeffs[c * (kmax + 1)] = Complex64::new(v * SQRT_2PI, 0.0);
        }
        u
    }

    pub fn kmax(&self) -> usize {
        self.kmax
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    /// Coefficient of mode `k ∈ [-K, K]` in component `c`; zero outside the band.
    pub fn coeff(&self, c: usize, k: i64) -> Complex64 {
        let ka = k.unsigned_abs() as usize;
        if ka > self.kmax {
            return Complex64::new(0.0, 0.0);
        }
        let z = self.coeffs[c * (self.kmax + 1) + ka];
        if k < 0 {
            z.conj()
        } else {
            z
        }
    }

    /// Sets mode `k ≥ 0` (and implicitly `-k`). For `k = 0` only the real part is kept.
    pub fn set_mode(&mut self, c: usize, k: usize, z: Complex64) {
        let z = if k == 0 { Complex64::new(z.re, 0.0) } else { z };
        self.coeffs[c * (self.kmax + 1) + k] = z;
    }

    /// Non-negative half spectrum of component `c`.
    pub fn component(&self, c: usize) -> &[Complex64] {
        &self.coeffs[c * (self.kmax + 1)..(c + 1) * (self.kmax + 1)]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [Complex64] {
        let k1 = self.kmax + 1;
        &mut self.coeffs[c * k1..(c + 1) * k1]
    }

    pub fn half_spectrum(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Applies a Fourier multiplier given on `k ≥ 0`. The multiplier on `-k`
    /// is taken to be the conjugate, which holds for every real operator.
    /// The mean-mode multiplier must be real; its imaginary part is dropped.
    pub fn multiplied(&self, symbol: impl Fn(usize) -> Complex64) -> Self {
        let mut out = self.clone();
        out.multiply_in_place(symbol);
        out
    }

    pub fn multiply_in_place(&mut self, symbol: impl Fn(usize) -> Complex64) {
        let k1 = self.kmax + 1;
        let table: Vec<Complex64> = (0..k1).map(&symbol).collect();
        for chunk in self.coeffs.chunks_mut(k1) {
            for (z, m) in chunk.iter_mut().zip(&table) {
                *z *= m;
            }
            chunk[0].im = 0.0;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|z| *z *= a);
        out
    }

    /// `self += a * other`, with matching shapes.
    pub fn axpy(&mut self, a: f64, other: &SpectralField) {
        self.assert_same_shape(other);
        for (z, w) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *z += w * a;
        }
    }

    /// Returns the field with max mode `kmax`, truncating or zero-padding.
    pub fn with_kmax(&self, kmax: usize) -> Self {
        let mut out = Self::zeros(kmax, self.ncomp);
        let keep = kmax.min(self.kmax) + 1;
        for c in 0..self.ncomp {
            out.component_mut(c)[..keep].copy_from_slice(&self.component(c)[..keep]);
        }
        out
    }

    /// L² inner product `∫ u·v dx` over the torus.
    pub fn l2_inner(&self, other: &SpectralField) -> f64 {
        self.assert_same_shape(other);
        let k1 = self.kmax + 1;
        let mut acc = 0.0;
        for (i, (a, b)) in self.coeffs.iter().zip(&other.coeffs).enumerate() {
            let w = if i % k1 == 0 { 1.0 } else { 2.0 };
            acc += w * (a.conj() * b).re;
        }
        acc
    }

    /// Largest coefficient modulus, used as a field magnitude scale.
    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    fn assert_same_shape(&self, other: &SpectralField) {
        assert!(
            self.kmax == other.kmax && self.ncomp == other.ncomp,
            "shape mismatch: (K={}, n={}) vs (K={}, n={})",
            self.kmax,
            self.ncomp,
            other.kmax,
            other.ncomp
        );
    }
}

impl Add for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(1.0, rhs);
        out
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(-1.0, rhs);
        out
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;
    fn mul(self, rhs: f64) -> SpectralField {
        self.scaled(rhs)
    }
}

/// Real samples at `x_j = 2πj/M`, component-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    m: usize,
    ncomp: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(m: usize, ncomp: usize, values: Vec<f64>) -> Result<Self> {
        if m == 0 || ncomp == 0 || values.len() != m * ncomp {
            return Err(Error::Dimension { expected: m * ncomp, got: values.len() });
        }
        Ok(Self { m, ncomp, values })
    }

    /// Samples `f(x)` (one closure per component) on `M` grid points.
    pub fn sample(m: usize, funcs: &[&dyn Fn(f64) -> f64]) -> Result<Self> {
        let values = funcs
            .iter()
            .flat_map(|f| (0..m).map(move |j| f(grid_point(j, m))))
            .collect();
        Self::new(m, funcs.len(), values)
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    pub fn component(&self, c: usize) -> &[f64] {
        &self.values[c * self.m..(c + 1) * self.m]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.values[c * self.m..(c + 1) * self.m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn x(&self, j: usize) -> f64 {
        grid_point(j, self.m)
    }

    /// Writes `x,comp0[,comp1,...]` CSV with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "x")?;
        for c in 0..self.ncomp {
            write!(w, ",comp{c}")?;
        }
        writeln!(w)?;
        for j in 0..self.m {
            write!(w, "{:.16e}", self.x(j))?;
            for c in 0..self.ncomp {
                write!(w, ",{:.16e}", self.values[c * self.m + j])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn grid_point(j: usize, m: usize) -> f64 {
    2.0 * PI * j as f64 / m as f64
}

/// Smallest odd integer `≥ x`.
pub fn smallest_odd_at_least(x: f64) -> usize {
    let n = x.ceil().max(1.0) as usize;
    if n.is_multiple_of(2) {
        n + 1
    } else {
        n
    }
}

/// Grid size used for pseudospectral products: smallest odd `≥ pad·(2K+1)`.
pub fn padded_size(kmax: usize, pad: f64) -> usize {
    smallest_odd_at_least(pad * (2 * kmax + 1) as f64)
}

/// Grid size used by [`sup_norm`]: smallest odd `≥ 4(2K+1)`.
pub fn oversampled_size(kmax: usize) -> usize {
    smallest_odd_at_least(4.0 * (2 * kmax + 1) as f64)
}

/// Evaluates `u` on the odd grid of size `M ≥ 2K+1`.
pub fn to_grid(u: &SpectralField, m: usize) -> Result<GridField> {
    if m.is_multiple_of(2) {
        return Err(Error::Resolution(format!("grid size {m} must be odd")));
    }
    sample_uniform(u, m)
}

/// Like [`to_grid`] but accepts even `M` as well. Evaluation only; an even
/// grid has no inverse on the full band.
pub fn sample_uniform(u: &SpectralField, m: usize) -> Result<GridField> {
    if m < 2 * u.kmax + 1 {
        return Err(Error::Resolution(format!(
            "grid size {m} below 2K+1 = {}",
            2 * u.kmax + 1
        )));
    }
    let scale = u.max_abs_coeff();
    let mut values = Vec::with_capacity(m * u.ncomp);
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(m));
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for c in 0..u.ncomp {
        buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        let half = u.component(c);
        buf[0] = half[0];
        for k in 1..=u.kmax {
            buf[k] = half[k];
            buf[m - k] = half[k].conj();
        }
        fft.process(&mut buf);
        let residue = buf.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        if residue > 1e-10 * (scale * (2 * u.kmax + 1) as f64).max(f64::MIN_POSITIVE) {
            return Err(Error::Resolution(format!("imaginary residue {residue:e} on grid")));
        }
        values.extend(buf.iter().map(|z| z.re * INV_SQRT_2PI));
    }
    GridField::new(m, u.ncomp, values)
}

/// Reference O(K·M) evaluation of the trigonometric sum.
pub fn to_grid_direct(u: &SpectralField, m: usize) -> GridField {
    let mut values = Vec::with_capacity(m * u.ncomp);
    for c in 0..u.ncomp {
        let half = u.component(c);
        for j in 0..m {
            let x = grid_point(j, m);
            let mut s = half[0].re;
            for (k, z) in half.iter().enumerate().skip(1) {
                let e = Complex64::from_polar(1.0, k as f64 * x);
                s += 2.0 * (z * e).re;
            }
            values.push(s * INV_SQRT_2PI);
        }
    }
    GridField { m, ncomp: u.ncomp, values }
}

/// Fourier coefficients `|k| ≤ K` of the trigonometric interpolant of `g`.
/// With `M > 2K+1` the modes above `K` are discarded.
pub fn from_grid(g: &GridField, kmax: usize) -> Result<SpectralField> {
    let m = g.m;
    if m.is_multiple_of(2) {
        return Err(Error::Resolution(format!("grid size {m} must be odd")));
    }
    if m < 2 * kmax + 1 {
        return Err(Error::Resolution(format!("grid size {m} below 2K+1 = {}", 2 * kmax + 1)));
    }
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(m));
    let norm = SQRT_2PI / m as f64;
    let mut out = SpectralField::zeros(kmax, g.ncomp);
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for c in 0..g.ncomp {
        for (z, v) in buf.iter_mut().zip(g.component(c)) {
            *z = Complex64::new(*v, 0.0);
        }
        fft.process(&mut buf);
        let dst = out.component_mut(c);
        for k in 0..=kmax {
            dst[k] = buf[k] * norm;
        }
        dst[0].im = 0.0;
    }
    Ok(out)
}

/// `Π_N`: keeps `|k| ≤ N`.
pub fn project(u: &SpectralField, n: usize) -> SpectralField {
    u.multiplied(|k| if k <= n { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) })
}

/// Keeps `lo < |k| ≤ hi`, i.e. `Π_hi − Π_lo` for real cut-offs.
pub fn band_project(u: &SpectralField, lo: f64, hi: f64) -> SpectralField {
    u.multiplied(|k| {
        let k = k as f64;
        if k > lo && k <= hi {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// `(Σ_k |c_k|² (1+k²)^s)^{1/2}` over all components.
pub fn sobolev_norm(u: &SpectralField, s: f64) -> f64 {
    let mut acc = 0.0;
    for c in 0..u.ncomp {
        for (k, z) in u.component(c).iter().enumerate() {
            let w = if k == 0 { 1.0 } else { 2.0 };
            acc += w * z.norm_sqr() * (1.0 + (k * k) as f64).powf(s);
        }
    }
    acc.sqrt()
}

/// Approximate `L∞` norm: maximum over a 4x oversampled grid.
pub fn sup_norm(u: &SpectralField) -> f64 {
    let g = to_grid(u, oversampled_size(u.kmax)).expect("oversampled grid is always admissible");
    g.values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(kmax: usize, ncomp: usize, seed: u64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..ncomp * (kmax + 1))
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        SpectralField::from_half_spectrum(kmax, ncomp, coeffs).unwrap()
    }

    fn max_diff(a: &SpectralField, b: &SpectralField) -> f64 {
        a.half_spectrum()
            .iter()
            .zip(b.half_spectrum())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_field_on_grid() {
        let u = SpectralField::constant(3, &[1.7]);
        let g = to_grid(&u, 7).unwrap();
        assert!(g.values().iter().all(|v| (v - 1.7).abs() < 1e-14));
    }

    #[test]
    fn conjugate_pair_gives_cosine() {
        let mut u = SpectralField::zeros(1, 1);
        u.set_mode(0, 1, Complex64::new(1.0, 0.0));
        let g = to_grid(&u, 5).unwrap();
        for j in 0..5 {
            let expect = 2.0 * INV_SQRT_2PI * (2.0 * PI * j as f64 / 5.0).cos();
            assert!((g.component(0)[j] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn grid_size_checks() {
        let u = SpectralField::zeros(4, 1);
        assert!(matches!(to_grid(&u, 10), Err(Error::Resolution(_))));
        assert!(matches!(to_grid(&u, 7), Err(Error::Resolution(_))));
        assert!(to_grid(&u, 9).is_ok());
        assert!(sample_uniform(&u, 10).is_ok());
    }

    #[test]
    fn constant_grid_to_mean_mode() {
        let g = GridField::new(9, 1, vec![0.3; 9]).unwrap();
        let u = from_grid(&g, 4).unwrap();
        assert!((u.coeff(0, 0).re - 0.3 * SQRT_2PI).abs() < 1e-14);
        for k in 1..=4 {
            assert!(u.coeff(0, k).norm() < 1e-14);
        }
    }

    #[test]
    fn sine_coefficients() {
        // sin x = (e^{ix} - e^{-ix}) / 2i, so c_{±1} = ∓ i sqrt(π/2).
        let g = GridField::sample(17, &[&|x: f64| x.sin()]).unwrap();
        let u = from_grid(&g, 8).unwrap();
        let c1 = Complex64::new(0.0, -(PI / 2.0).sqrt());
        assert!((u.coeff(0, 1) - c1).norm() < 1e-12);
        assert!((u.coeff(0, -1) - c1.conj()).norm() < 1e-12);
        for k in 2..=8 {
            assert!(u.coeff(0, k).norm() < 1e-12);
        }
        assert!(u.coeff(0, 0).norm() < 1e-12);
    }

    #[test]
    fn round_trip_large_band() {
        for &k in &[1usize, 17, 512] {
            let u = random_field(k, 2, k as u64);
            let back = from_grid(&to_grid(&u, 2 * k + 1).unwrap(), k).unwrap();
            assert!(max_diff(&u, &back) < 1e-12, "K={k}");
        }
    }

    #[test]
    fn fft_path_matches_direct_sum() {
        let u = random_field(20, 2, 5);
        for m in [41, 83, 129] {
            let a = to_grid(&u, m).unwrap();
            let b = to_grid_direct(&u, m);
            let d = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(d < 1e-12, "M={m}: {d}");
        }
    }

    #[test]
    fn low_pass_from_finer_grid() {
        let u = random_field(5, 1, 9);
        let g = to_grid(&u, 31).unwrap();
        let v = from_grid(&g, 3).unwrap();
        assert!(max_diff(&project(&u, 3).with_kmax(3), &v) < 1e-13);
    }

    #[test]
    fn projections() {
        let u = random_field(6, 1, 1);
        assert_eq!(project(&u, 6), u);
        let p0 = project(&u, 0);
        assert_eq!(p0.coeff(0, 0), u.coeff(0, 0));
        assert!((1..=6).all(|k| p0.coeff(0, k).norm() == 0.0));
        let b = band_project(&u, 3.0, 3.0);
        assert_eq!(b.max_abs_coeff(), 0.0);
        let b = band_project(&u, 1.5, 4.0);
        assert_eq!(b.coeff(0, 2), u.coeff(0, 2));
        assert_eq!(b.coeff(0, 4), u.coeff(0, 4));
        assert_eq!(b.coeff(0, 1).norm(), 0.0);
        assert_eq!(b.coeff(0, 5).norm(), 0.0);
    }

    #[test]
    fn sobolev_single_mode() {
        let mut u = SpectralField::zeros(3, 1);
        u.set_mode(0, 1, Complex64::from_polar(1.0, 0.7));
        for s in [-1.5, 0.0, 0.75, 2.0] {
            let expect = 2f64.sqrt() * 2f64.powf(s / 2.0);
            assert!((sobolev_norm(&u, s) - expect).abs() < 1e-14);
        }
        assert_eq!(sobolev_norm(&SpectralField::zeros(3, 2), 0.3), 0.0);
    }

    #[test]
    fn parseval_against_trapezoid() {
        let u = random_field(12, 2, 3);
        let m = 101;
        let g = to_grid(&u, m).unwrap();
        let quad: f64 = g.values().iter().map(|v| v * v).sum::<f64>() * 2.0 * PI / m as f64;
        assert!((sobolev_norm(&u, 0.0) - quad.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn sup_norm_examples() {
        assert!((sup_norm(&SpectralField::constant(4, &[-2.5])) - 2.5).abs() < 1e-14);
        let g = GridField::sample(17, &[&|x: f64| x.sin()]).unwrap();
        let u = from_grid(&g, 8).unwrap();
        // grid spacing 2π/69 bounds the sampling deficit by 1 − cos(π/69)
        let s = sup_norm(&u);
        assert!(s <= 1.0 + 1e-12 && s > (PI / 69.0).cos() - 1e-12, "{s}");
    }

    #[test]
    fn sup_norm_dense_sampling() {
        // Smooth bump exp(cos x) truncated to K = 10.
        let g = GridField::sample(21, &[&|x: f64| (2.0 * x.cos()).exp() - x.sin()]).unwrap();
        let u = from_grid(&g, 10).unwrap();
        let dense = to_grid_direct(&u, 100_001);
        let brute = dense.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((sup_norm(&u) - brute).abs() < 1e-4 * brute);
    }

    #[test]
    fn csv_dump_format() {
        let g = GridField::new(3, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let mut out = Vec::new();
        g.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x,comp0,comp1"));
        let row: Vec<f64> = lines.nth(1).unwrap().split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(row, vec![2.0 * PI / 3.0, 1.0, 4.0]);
    }

    proptest! {
        #[test]
        fn projection_idempotent_and_self_adjoint(seed in 0u64..1000, n in 0usize..12) {
            let u = random_field(11, 2, seed);
            let v = random_field(11, 2, seed + 7919);
            let pu = project(&u, n);
            prop_assert_eq!(project(&pu, n), pu.clone());
            let lhs = pu.l2_inner(&v);
            let rhs = u.l2_inner(&project(&v, n));
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn grid_round_trip_preserves_reality(seed in 0u64..1000, k in 1usize..40) {
            let u = random_field(k, 1, seed);
            let g = to_grid(&u, 2 * k + 1).unwrap();
            let back = from_grid(&g, k).unwrap();
            prop_assert!(max_diff(&u, &back) < 1e-12);
            prop_assert_eq!(back.coeff(0, 0).im, 0.0);
        }
    }
}
