//! Quadratic functionals of shift differences, quadratic variation,
//! negative-Sobolev distances and log-log rate fits, plus the Monte-Carlo
//! ensembles built on them.
//!
//! Shifts are exact Fourier multipliers and every quotient is taken in the
//! undivided form `(u(· + εy) − u)`, so atoms at `y = 0` contribute nothing.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::correction::{lambda_eps, lambda_eps_y, open_range};
use crate::error::{Error, Result};
use crate::integrator::{mean_stderr, thread_pool};
use crate::noise::{derive_stream, psi_sigma, psi_tilde_sigma, CoupledStationaryPair, ModeGaussianDraw};
use crate::nonlin::PolynomialMap;
use crate::schemes::{shift_difference, Scheme};
use crate::spectral::{from_grid, padded_size, sample_uniform, sobolev_norm, sup_norm, to_grid, GridField, SpectralField, SQRT_2PI};

/// `Θ_ε(u) = Σ_i |w_i| ‖(u(· + εy_i) − u)/ε‖²_{L²}`.
pub fn theta_eps(u: &SpectralField, scheme: &Scheme, eps: f64) -> f64 {
    scheme
        .mu()
        .atoms()
        .iter()
        .map(|a| {
            let d = shift_difference(u, eps * a.y);
            a.w.abs() * d.l2_inner(&d) / (eps * eps)
        })
        .sum()
}

/// An `n × n` matrix of scalar fields, stored as one field with `n²`
/// components in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct XiMatrixField {
    n: usize,
    field: SpectralField,
    pub eps: f64,
    pub scheme: String,
}

impl XiMatrixField {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kmax(&self) -> usize {
        self.field.kmax()
    }

    pub fn entry(&self, i: usize, j: usize) -> &[Complex64] {
        self.field.component(i * self.n + j)
    }

    pub fn as_field(&self) -> &SpectralField {
        &self.field
    }

    /// Row-major spatial means `(2π)^{-1} ∫ A_ij`.
    pub fn spatial_mean(&self) -> Vec<f64> {
        (0..self.n * self.n).map(|c| self.field.component(c)[0].re / SQRT_2PI).collect()
    }
}

/// `Σ_i w_i (2ε)^{-1} (u(· + εy_i) − u) ⊗ (u(· + εy_i) − u)` formed on a
/// `pad`-padded grid and kept up to band `2K`, where the product is exact.
pub fn xi_weighted(u: &SpectralField, eps: f64, atoms: &[(f64, f64)], pad: f64) -> Result<SpectralField> {
    let n = u.ncomp();
    let kout = 2 * u.kmax();
    let m = padded_size(kout, pad / 2.0).max(padded_size(u.kmax(), pad));
    let mut acc = vec![0.0; n * n * m];
    for &(y, w) in atoms {
        if y == 0.0 || w == 0.0 {
            continue;
        }
        let g = to_grid(&shift_difference(u, eps * y), m)?;
        let scale = w / (2.0 * eps);
        for i in 0..n {
            for j in 0..n {
                let (gi, gj) = (g.component(i), g.component(j));
                let dst = &mut acc[(i * n + j) * m..(i * n + j + 1) * m];
                for ((d, a), b) in dst.iter_mut().zip(gi).zip(gj) {
                    *d += scale * a * b;
                }
            }
        }
    }
    from_grid(&GridField::new(m, n * n, acc)?, kout)
}

/// `Ξ_ε(u)` for the scheme's measure on a pad-2 grid.
pub fn xi_eps(u: &SpectralField, scheme: &Scheme, eps: f64) -> Result<XiMatrixField> {
    check_eps(eps)?;
    let atoms: Vec<(f64, f64)> = scheme.mu().atoms().iter().map(|a| (a.y, a.w)).collect();
    Ok(XiMatrixField { n: u.ncomp(), field: xi_weighted(u, eps, &atoms, 2.0)?, eps, scheme: scheme.name().to_string() })
}

/// The unweighted single-atom tensor `Ξ_ε^y(u)`.
pub fn xi_eps_atom(u: &SpectralField, eps: f64, y: f64) -> Result<XiMatrixField> {
    check_eps(eps)?;
    Ok(XiMatrixField { n: u.ncomp(), field: xi_weighted(u, eps, &[(y, 1.0)], 2.0)?, eps, scheme: format!("atom {y}") })
}

/// Spatial mean of `Σ w_i Ξ_ε^{y_i}(u)` by Parseval, without a grid.
pub fn xi_mean_exact(u: &SpectralField, eps: f64, atoms: &[(f64, f64)]) -> Vec<f64> {
    let n = u.ncomp();
    let mut out = vec![0.0; n * n];
    for &(y, w) in atoms {
        let d = shift_difference(u, eps * y);
        for i in 0..n {
            for j in 0..n {
                let (di, dj) = (d.component(i), d.component(j));
                let mut s = (di[0] * dj[0].conj()).re;
                for k in 1..di.len() {
                    s += 2.0 * (di[k] * dj[k].conj()).re;
                }
                out[i * n + j] += w * s / (2.0 * eps * 2.0 * PI);
            }
        }
    }
    out
}

/// `D_ε G(u) − ∇G(u)·D_ε u` and the second-order term `D²G(u) : Ξ_ε(u)`,
/// both on band `2K`. They agree exactly when `G` is quadratic.
pub fn chain_rule_sides(g: &PolynomialMap, u: &SpectralField, scheme: &Scheme, eps: f64) -> Result<(SpectralField, SpectralField)> {
    let n = g.n();
    if g.degree() > 2 {
        return Err(Error::InvalidArgument(format!("chain-rule identity needs degree ≤ 2, got {}", g.degree())));
    }
    let k2 = 2 * u.kmax();
    let lifted = u.with_kmax(k2);
    let gu = g.apply_pointwise(&lifted, 1.0)?;
    let lhs_a = scheme.apply_d_eps(&gu, eps)?;
    let du = scheme.apply_d_eps(&lifted, eps)?;
    let lhs_b = g.jacobian().apply_bilinear(&lifted, &du, 1.0)?;
    let lhs = &lhs_a - &lhs_b;

    let xi = xi_eps(u, scheme, eps)?;
    let jac = g.jacobian();
    let origin = vec![0.0; n];
    let mut rhs = SpectralField::zeros(k2, n);
    for i in 0..n {
        for j in 0..n {
            for l in 0..n {
                let h = jac.entry(i, j).derivative(l).eval(&origin);
                if h == 0.0 {
                    continue;
                }
                let src = xi.entry(j, l);
                for (d, s) in rhs.component_mut(i).iter_mut().zip(src) {
                    *d += h * s;
                }
            }
        }
    }
    Ok((lhs, rhs))
}

/// Per-component `Σ_j |u(x_{j+1}) − u(x_j)|²` over the uniform periodic grid of size `M`.
pub fn quadratic_variation(u: &SpectralField, m: usize) -> Result<Vec<f64>> {
    let g = sample_uniform(u, m)?;
    Ok((0..u.ncomp())
        .map(|c| {
            let v = g.component(c);
            (0..m).map(|j| (v[(j + 1) % m] - v[j]).powi(2)).sum()
        })
        .collect())
}

/// `E` of [`quadratic_variation`] for one component of the stationary `ψ`
/// truncated at `K`: `(M/2π) Σ_{|k|≤K} (2 − 2cos(2πk/M)) / (2(1+νk²))`.
pub fn expected_qv(nu: f64, kmax: usize, m: usize) -> f64 {
    let h = 2.0 * PI / m as f64;
    let s: f64 = (1..=kmax).map(|k| (1.0 - (h * k as f64).cos()) / (1.0 + nu * (k * k) as f64)).sum();
    m as f64 / (2.0 * PI) * 2.0 * s
}

/// The `K → ∞` limit of [`expected_qv`], `(M/π) Σ_{k≥1} (1 − cos kh)/(1+νk²)`
/// with the series in closed form `(π/2aν)[coth(aπ) − cosh(a(π−h))/sinh(aπ)]`,
/// `a = ν^{-1/2}`, `h = 2π/M`.
pub fn expected_qv_untruncated(nu: f64, m: usize) -> f64 {
    let a = nu.sqrt().recip();
    let h = 2.0 * PI / m as f64;
    // Σ_{k≥1} (1 − cos kh)/(1 + νk²) = (1/ν) Σ (1 − cos kh)/(a² + k²)
    let e = (-2.0 * a * PI).exp();
    let coth = (1.0 + e) / (1.0 - e);
    let ratio = ((-a * h).exp() + (-a * (2.0 * PI - h)).exp()) / (1.0 - e);
    let s = PI / (2.0 * a * nu) * (coth - ratio);
    m as f64 / (2.0 * PI) * 2.0 * s
}

/// Frobenius aggregate of the entrywise `H^{−α}` norms of `c·I − A`.
pub fn negative_sobolev_distance(a: &XiMatrixField, c: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.5) {
        return Err(Error::InvalidArgument(format!("α must exceed 1/2, got {alpha}")));
    }
    let n = a.n();
    let mut target = SpectralField::zeros(a.kmax(), n * n);
    for i in 0..n {
        target.set_mode(i * n + i, 0, Complex64::new(c * SQRT_2PI, 0.0));
    }
    Ok(sobolev_norm(&(&target - a.as_field()), -alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
}

/// Least-squares line through `(log ε, log err)`.
pub fn rate_fit(eps: &[f64], errors: &[f64]) -> Result<RateFit> {
    if eps.len() != errors.len() || eps.len() < 3 {
        return Err(Error::InvalidArgument(format!("need ≥ 3 matched points, got {} and {}", eps.len(), errors.len())));
    }
    if eps.iter().chain(errors).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("rate fit needs positive finite values".into()));
    }
    let xs: Vec<f64> = eps.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("rate fit needs distinct ε".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(RateFit { slope, intercept, residual: (ss / n).sqrt() })
}

/// One row of an estimator table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorRow {
    pub eps: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

impl EstimatorRow {
    pub fn from_samples(eps: f64, xs: &[f64]) -> Self {
        let (mean, stderr) = mean_stderr(xs);
        Self { eps, mean, stderr, n_samples: xs.len() }
    }
}

pub fn write_estimator_csv<W: Write>(rows: &[EstimatorRow], mut w: W) -> Result<()> {
    writeln!(w, "eps,mean,stderr,n_samples")?;
    for r in rows {
        writeln!(w, "{:.16e},{:.16e},{:.16e},{}", r.eps, r.mean, r.stderr, r.n_samples)?;
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("ε must be positive, got {eps}")))
    }
}

/// Smallest `K` holding every mode of the band `ε^{−γ} < k < ε^{−χ}` on which
/// `ψ̃` is not identically zero.
pub fn chaos_band_kmax(scheme: &Scheme, eps: f64, gamma: f64, chi: f64) -> usize {
    open_range(eps.powf(-gamma), eps.powf(-chi))
        .filter(|&k| {
            let t = eps * k as f64;
            scheme.diffusion(t).is_finite() && scheme.filter(t) != 0.0
        })
        .max()
        .unwrap_or(1)
}

/// Band-limited `ψ̃^{γ,χ}` for one sample, drawn from `(seed, sample, "chaos")`.
#[allow(clippy::too_many_arguments)]
pub fn chaos_sample(scheme: &Scheme, eps: f64, gamma: f64, chi: f64, nu: f64, ncomp: usize, seed: u64, sample: u64) -> SpectralField {
    let kmax = chaos_band_kmax(scheme, eps, gamma, chi);
    let band = open_range(eps.powf(-gamma), eps.powf(-chi));
    let draw = ModeGaussianDraw::sample(kmax, ncomp, &mut derive_stream(seed, sample, "chaos"));
    draw.scaled(|k| if band.contains(&k) { psi_tilde_sigma(scheme, eps, nu, k) } else { 0.0 })
}

/// Parameters shared by the chaos ensembles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChaosParams {
    pub gamma: f64,
    pub chi: f64,
    pub nu: f64,
    pub ncomp: usize,
    pub samples: usize,
    pub seed: u64,
}

/// Ensemble statistics of the spatial mean of `Ξ_ε^y(ψ̃^{γ,χ})` for one atom.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XiAtomStats {
    pub y: f64,
    pub lambda_eps_y: f64,
    /// Row-major `n × n`.
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl XiAtomStats {
    /// Largest `|mean − target|/stderr` over the entries, target `Λ_ε^y` on the diagonal and 0 off it.
    pub fn max_z(&self) -> f64 {
        let n = (self.mean.len() as f64).sqrt() as usize;
        (0..n * n)
            .map(|c| {
                let target = if c / n == c % n { self.lambda_eps_y } else { 0.0 };
                (self.mean[c] - target).abs() / self.stderr[c].max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max)
    }
}

/// Per-atom Monte-Carlo check of `E Ξ_ε^y(ψ̃^{γ,χ}) = Λ_ε^y · I`.
pub fn xi_atom_ensemble(scheme: &Scheme, eps: f64, p: &ChaosParams, workers: usize) -> Result<Vec<XiAtomStats>> {
    let pool = thread_pool(workers)?;
    let atoms: Vec<f64> = scheme.mu().atoms().iter().map(|a| a.y).filter(|&y| y != 0.0).collect();
    let means: Vec<Vec<Vec<f64>>> = pool.install(|| {
        (0..p.samples as u64)
            .into_par_iter()
            .map(|s| -> Result<Vec<Vec<f64>>> {
                let u = chaos_sample(scheme, eps, p.gamma, p.chi, p.nu, p.ncomp, p.seed, s);
                atoms.iter().map(|&y| Ok(xi_eps_atom(&u, eps, y)?.spatial_mean())).collect()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let nn = p.ncomp * p.ncomp;
    atoms
        .iter()
        .enumerate()
        .map(|(ai, &y)| {
            let mut mean = Vec::with_capacity(nn);
            let mut stderr = Vec::with_capacity(nn);
            for c in 0..nn {
                let xs: Vec<f64> = means.iter().map(|m| m[ai][c]).collect();
                let (m, se) = mean_stderr(&xs);
                mean.push(m);
                stderr.push(se);
            }
            Ok(XiAtomStats { y, lambda_eps_y: lambda_eps_y(scheme, eps, p.gamma, p.chi, p.nu, y)?.value, mean, stderr })
        })
        .collect()
}

/// `E ‖Λ_ε I − Ξ_ε(ψ̃^{γ,χ})‖_{−α}` over the ensemble.
pub fn negative_sobolev_ensemble(scheme: &Scheme, eps: f64, alpha: f64, p: &ChaosParams, workers: usize) -> Result<EstimatorRow> {
    let pool = thread_pool(workers)?;
    let lam = lambda_eps(scheme, eps, p.gamma, p.chi, p.nu)?;
    let xs = pool.install(|| {
        (0..p.samples as u64)
            .into_par_iter()
            .map(|s| {
                let u = chaos_sample(scheme, eps, p.gamma, p.chi, p.nu, p.ncomp, p.seed, s);
                negative_sobolev_distance(&xi_eps(&u, scheme, eps)?, lam, alpha)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    Ok(EstimatorRow::from_samples(eps, &xs))
}

/// `E Θ_ε(ψ̃)` with the modes `k ≤ ε^{−γ}` removed, `ψ̃` truncated at `K`.
pub fn theta_ensemble(scheme: &Scheme, eps: f64, kmax: usize, p: &ChaosParams, workers: usize) -> Result<EstimatorRow> {
    let pool = thread_pool(workers)?;
    let lo = eps.powf(-p.gamma);
    let xs: Vec<f64> = pool.install(|| {
        (0..p.samples as u64)
            .into_par_iter()
            .map(|s| {
                let draw = ModeGaussianDraw::sample(kmax, p.ncomp, &mut derive_stream(p.seed, s, "theta"));
                let u = draw.scaled(|k| if k as f64 > lo { psi_tilde_sigma(scheme, eps, p.nu, k) } else { 0.0 });
                theta_eps(&u, scheme, eps)
            })
            .collect()
    });
    Ok(EstimatorRow::from_samples(eps, &xs))
}

/// `E ‖ψ̃(0) − ψ(0)‖_{L∞}` for the coupled pair truncated at `K`.
pub fn psi_gap_ensemble(scheme: &Scheme, eps: f64, nu: f64, kmax: usize, samples: usize, seed: u64, workers: usize) -> Result<EstimatorRow> {
    let pool = thread_pool(workers)?;
    let xs: Vec<f64> = pool.install(|| {
        (0..samples as u64)
            .into_par_iter()
            .map(|s| {
                let draw = ModeGaussianDraw::sample(kmax, 1, &mut derive_stream(seed, s, "initial"));
                let pair = CoupledStationaryPair::from_draw(&draw, scheme, eps, nu);
                sup_norm(&(&pair.psi_tilde - &pair.psi))
            })
            .collect()
    });
    Ok(EstimatorRow::from_samples(eps, &xs))
}

/// Quadratic variation of stationary `ψ` samples (one component) on `M` points.
pub fn qv_ensemble(nu: f64, kmax: usize, m: usize, samples: usize, seed: u64, workers: usize) -> Result<Vec<f64>> {
    let pool = thread_pool(workers)?;
    pool.install(|| {
        (0..samples as u64)
            .into_par_iter()
            .map(|s| {
                let draw = ModeGaussianDraw::sample(kmax, 1, &mut derive_stream(seed, s, "qv"));
                Ok(quadratic_variation(&draw.scaled(|k| psi_sigma(nu, k)), m)?[0])
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schemes::apply_hat_d;
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

    fn single_mode(kmax: usize, k: usize) -> SpectralField {
        let mut u = SpectralField::zeros(kmax, 1);
        u.set_mode(0, k, Complex64::new(1.0, 0.0));
        u
    }

    #[test]
    fn theta_examples() {
        let fwd = Scheme::identity(1.0, 0.0).unwrap();
        assert_eq!(theta_eps(&SpectralField::constant(6, &[3.0]), &fwd, 0.1), 0.0);
        let (k, eps) = (3usize, 0.2);
        let expect = 2.0 * (2.0 - 2.0 * (k as f64 * eps).cos()) / (eps * eps);
        assert!((theta_eps(&single_mode(5, k), &fwd, eps) - expect).abs() < 1e-12);
    }

    #[test]
    fn undivided_form_matches_hat_d() {
        let u = random_field(10, 2, 1);
        for &(eps, y) in &[(0.1, 1.0), (0.05, -2.0), (0.3, 0.5)] {
            let d = apply_hat_d(&u, eps * y).unwrap();
            let a = y * y * d.l2_inner(&d);
            let s = shift_difference(&u, eps * y);
            let b = s.l2_inner(&s) / (eps * eps);
            assert!((a - b).abs() < 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn xi_constant_is_zero() {
        let s = Scheme::finite_difference(2.0, 1.0).unwrap();
        let xi = xi_eps(&SpectralField::constant(4, &[1.0, -2.0]), &s, 0.1).unwrap();
        assert!(xi.as_field().max_abs_coeff() < 1e-14);
    }

    #[test]
    fn xi_is_symmetric() {
        let s = Scheme::identity(1.0, 0.0).unwrap();
        let xi = xi_eps(&random_field(6, 3, 2), &s, 0.2).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let d = xi.entry(i, j).iter().zip(xi.entry(j, i)).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                assert!(d < 1e-13);
            }
        }
    }

    #[test]
    fn xi_mean_grid_matches_parseval() {
        let s = Scheme::finite_difference(1.0, 2.0).unwrap();
        let atoms: Vec<(f64, f64)> = s.mu().atoms().iter().map(|a| (a.y, a.w)).collect();
        for kmax in 1..=8 {
            let u = random_field(kmax, 2, kmax as u64);
            let grid = xi_eps(&u, &s, 0.15).unwrap().spatial_mean();
            let exact = xi_mean_exact(&u, 0.15, &atoms);
            for (a, b) in grid.iter().zip(&exact) {
                assert!((a - b).abs() < 1e-10, "K={kmax}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn xi_single_mode_hand_computation() {
        // u = 2cos(kx)/√(2π): (u(·+s) − u)² has mean (2 − 2cos ks)/π
        let (k, eps) = (2usize, 0.3);
        let u = single_mode(4, k);
        for (y, w) in [(1.0, 0.5), (-1.0, -0.5)] {
            let xi = xi_eps_atom(&u, eps, y).unwrap();
            let hand = (2.0 - 2.0 * (k as f64 * eps * y).cos()) / PI / (2.0 * eps);
            assert!((xi.spatial_mean()[0] - hand).abs() < 1e-12);
            let _ = w;
        }
        // symmetric measure: the two atoms' means are equal, weights opposite, total zero
        let sym = Scheme::identity(1.0, 1.0).unwrap();
        assert!(xi_eps(&u, &sym, eps).unwrap().spatial_mean()[0].abs() < 1e-14);
    }

    #[test]
    fn chain_rule_identity_burgers() {
        let s = Scheme::finite_difference(1.0, 0.0).unwrap();
        let u = random_field(12, 1, 5);
        let (lhs, rhs) = chain_rule_sides(&PolynomialMap::burgers(), &u, &s, 0.1).unwrap();
        assert!((&lhs - &rhs).max_abs_coeff() < 1e-10);
    }

    #[test]
    fn chain_rule_identity_coupled_quadratic() {
        let g = PolynomialMap::parse(&["u1*u2 + 0.5*u1^2 - u2", "2*u2^2 - 3*u1*u2 + u1"]).unwrap();
        let s = Scheme::galerkin(2.0, 1.0).unwrap();
        let u = random_field(8, 2, 6);
        let (lhs, rhs) = chain_rule_sides(&g, &u, &s, 0.05).unwrap();
        assert!((&lhs - &rhs).max_abs_coeff() < 1e-10);
        let cubic = PolynomialMap::parse(&["u1^3", "u2"]).unwrap();
        assert!(chain_rule_sides(&cubic, &u, &s, 0.05).is_err());
    }

    #[test]
    fn qv_constant_is_zero() {
        let qv = quadratic_variation(&SpectralField::constant(5, &[1.5]), 11).unwrap();
        assert!(qv[0].abs() < 1e-24);
    }

    #[test]
    fn expected_qv_small_case_by_hand() {
        // K = 1, M = 3: (3/2π)·(2 − 2cos(2π/3))/(1 + ν)
        let nu = 2.0;
        let hand = 3.0 / (2.0 * PI) * 3.0 / (1.0 + nu);
        assert!((expected_qv(nu, 1, 3) - hand).abs() < 1e-14);
    }

    #[test]
    fn untruncated_qv_is_the_limit() {
        for &(nu, m) in &[(1.0, 64usize), (0.5, 200), (3.0, 31)] {
            let lim = expected_qv_untruncated(nu, m);
            let partial = expected_qv(nu, 400_000, m);
            assert!((lim - partial).abs() < 1e-4 * lim, "{lim} vs {partial}");
        }
        let lim = expected_qv_untruncated(1.0, 1 << 16);
        assert!((lim - PI).abs() < 1e-3);
    }

    #[test]
    fn qv_monte_carlo_matches_expectation() {
        let (nu, kmax, m, n) = (1.0, 512, 2048, 200);
        let xs = qv_ensemble(nu, kmax, m, n, 9, 4).unwrap();
        let row = EstimatorRow::from_samples(0.0, &xs);
        let expect = expected_qv(nu, kmax, m);
        assert!((row.mean - expect).abs() < 5.0 * row.stderr, "{} ± {} vs {expect}", row.mean, row.stderr);
    }

    #[test]
    fn negative_sobolev_examples() {
        let s = Scheme::identity(1.0, 0.0).unwrap();
        let mut xi = xi_eps(&SpectralField::constant(3, &[0.0, 0.0]), &s, 0.1).unwrap();
        assert_eq!(negative_sobolev_distance(&xi, 0.0, 0.75).unwrap(), 0.0);
        let c = 0.4;
        for i in 0..2 {
            xi.field.set_mode(i * 2 + i, 0, Complex64::new(c * SQRT_2PI, 0.0));
        }
        assert!(negative_sobolev_distance(&xi, c, 0.75).unwrap() < 1e-15);
        let delta = 0.01;
        let d = negative_sobolev_distance(&xi, c + delta, 0.75).unwrap();
        assert!((d - delta * SQRT_2PI * 2f64.sqrt()).abs() < 1e-14);
        assert!(negative_sobolev_distance(&xi, c, 0.5).is_err());
    }

    #[test]
    fn rate_fit_examples() {
        let eps = [0.1, 0.05, 0.025, 0.0125];
        let r = rate_fit(&eps, &eps).unwrap();
        assert!((r.slope - 1.0).abs() < 1e-12 && r.residual < 1e-12);
        let half: Vec<f64> = eps.iter().map(|e| 3.0 * e.sqrt()).collect();
        assert!((rate_fit(&eps, &half).unwrap().slope - 0.5).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eps: Vec<f64> = (0..8).map(|i| 0.2 * 0.5f64.powi(i)).collect();
        let noisy: Vec<f64> = eps.iter().map(|e| e.sqrt() * (1.0 + 0.05 * rng.random_range(-1.0..1.0))).collect();
        let s = rate_fit(&eps, &noisy).unwrap().slope;
        assert!((0.4..=0.6).contains(&s));
        assert!(rate_fit(&eps[..2], &noisy[..2]).is_err());
        assert!(rate_fit(&[0.1, 0.1, 0.1], &[1.0, 2.0, 3.0]).is_err());
        assert!(rate_fit(&[0.1, 0.2, 0.3], &[1.0, 0.0, 3.0]).is_err());
    }

    #[test]
    fn xi_expectation_small_band() {
        let s = Scheme::finite_difference(1.0, 0.0).unwrap();
        let p = ChaosParams { gamma: 1.0 / 3.0, chi: 1.5, nu: 1.0, ncomp: 2, samples: 400, seed: 17 };
        let stats = xi_atom_ensemble(&s, 0.1, &p, 4).unwrap();
        assert_eq!(stats.len(), 1);
        assert!(stats[0].max_z() < 5.0, "{:?}", stats[0]);
    }

    #[test]
    fn theta_slope_near_minus_one() {
        let s = Scheme::finite_difference(1.0, 0.0).unwrap();
        let p = ChaosParams { gamma: 1.0 / 3.0, chi: 1.5, nu: 1.0, ncomp: 1, samples: 40, seed: 4 };
        let eps = [0.1, 0.05, 0.025, 0.0125];
        let rows: Vec<EstimatorRow> = eps.iter().map(|&e| theta_ensemble(&s, e, 400, &p, 4).unwrap()).collect();
        let fit = rate_fit(&eps, &rows.iter().map(|r| r.mean).collect::<Vec<_>>()).unwrap();
        assert!((-1.2..=-0.8).contains(&fit.slope), "{fit:?}");
    }

    #[test]
    fn ensembles_are_worker_independent() {
        let s = Scheme::finite_difference(1.0, 0.0).unwrap();
        let a = psi_gap_ensemble(&s, 0.1, 1.0, 64, 12, 1, 1).unwrap();
        let b = psi_gap_ensemble(&s, 0.1, 1.0, 64, 12, 1, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn estimator_csv_layout() {
        let mut buf = Vec::new();
        write_estimator_csv(&[EstimatorRow { eps: 0.5, mean: 1.0, stderr: 0.1, n_samples: 3 }], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("eps,mean,stderr,n_samples\n5.0000000000000000e-1,"));
        assert!(text.trim_end().ends_with(",3"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn chain_rule_holds_on_random_fields(seed in 0u64..1000, kmax in 1usize..10, eps in 0.01f64..0.5) {
            let s = Scheme::identity(1.0, 0.0).unwrap();
            let u = random_field(kmax, 1, seed);
            let (lhs, rhs) = chain_rule_sides(&PolynomialMap::burgers(), &u, &s, eps).unwrap();
            prop_assert!((&lhs - &rhs).max_abs_coeff() < 1e-10 * (1.0 + rhs.max_abs_coeff()));
        }

        #[test]
        fn theta_nonnegative(seed in 0u64..1000, eps in 0.01f64..1.0) {
            let s = Scheme::finite_difference(2.0, 1.0).unwrap();
            prop_assert!(theta_eps(&random_field(6, 2, seed), &s, eps) >= 0.0);
        }
    }
}
