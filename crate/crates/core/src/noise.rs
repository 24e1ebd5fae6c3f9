//! Gaussian mode draws, coupled stationary convolutions and Wiener increments.
//!
//! Every stochastic object is built from standard normals drawn mode by mode
//! in a fixed order, so a stream seeded by [`derive_stream`] fully determines
//! the result independent of threading.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::schemes::Scheme;
use crate::spectral::SpectralField;

/// Deterministic per-(replicate, purpose) random stream.
pub type Stream = ChaCha8Rng;

/// Derives an independent stream from `(seed, replicate, purpose)` by hashing
/// the triple into a ChaCha key.
pub fn derive_stream(seed: u64, replicate: u64, purpose: &str) -> Stream {
    let mut hasher = Sha256::new();
    hasher.update(b"itocorr-stream-v1");
    hasher.update(seed.to_le_bytes());
    hasher.update(replicate.to_le_bytes());
    hasher.update((purpose.len() as u64).to_le_bytes());
    hasher.update(purpose.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(key)
}

/// Complex standard normals `ζ_k`, `k = 0..=K`, per component: `E|ζ_k|² = 1`,
/// `ζ_0` real. Negative modes are the conjugates.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeGaussianDraw {
    field: SpectralField,
}

impl ModeGaussianDraw {
    pub fn sample<R: Rng + ?Sized>(kmax: usize, ncomp: usize, rng: &mut R) -> Self {
        let mut field = SpectralField::zeros(kmax, ncomp);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        for c in 0..ncomp {
            let comp = field.component_mut(c);
            let z0: f64 = rng.sample(StandardNormal);
            comp[0] = Complex64::new(z0, 0.0);
            for z in comp.iter_mut().skip(1) {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                *z = Complex64::new(a * r, b * r);
            }
        }
        Self { field }
    }

    pub fn kmax(&self) -> usize {
        self.field.kmax()
    }

    pub fn ncomp(&self) -> usize {
        self.field.ncomp()
    }

    /// The draw scaled mode by mode by real standard deviations `σ(k)`.
    pub fn scaled(&self, sigma: impl Fn(usize) -> f64) -> SpectralField {
        self.field.multiplied(|k| Complex64::new(sigma(k), 0.0))
    }

    pub fn as_field(&self) -> &SpectralField {
        &self.field
    }
}

/// Stationary standard deviation of mode `k` for `ψ`: `(2(1+νk²))^{-1/2}`.
pub fn psi_sigma(nu: f64, k: usize) -> f64 {
    let kf = k as f64;
    (2.0 * (1.0 + nu * kf * kf)).sqrt().recip()
}

/// Stationary standard deviation of mode `k` for `ψ̃`:
/// `h(εk) (2(1+νk² f(εk)))^{-1/2}`, zero where `f = +∞`.
pub fn psi_tilde_sigma(scheme: &Scheme, eps: f64, nu: f64, k: usize) -> f64 {
    let t = eps * k as f64;
    let f = scheme.diffusion(t);
    if f.is_infinite() {
        return 0.0;
    }
    let kf = k as f64;
    scheme.filter(t) * (2.0 * (1.0 + nu * kf * kf * f)).sqrt().recip()
}

/// `ψ(0)` and `ψ̃(0)` built from one shared draw.
#[derive(Debug, Clone)]
pub struct CoupledStationaryPair {
    pub psi: SpectralField,
    pub psi_tilde: SpectralField,
}

impl CoupledStationaryPair {
    pub fn from_draw(draw: &ModeGaussianDraw, scheme: &Scheme, eps: f64, nu: f64) -> Self {
        Self {
            psi: draw.scaled(|k| psi_sigma(nu, k)),
            psi_tilde: draw.scaled(|k| psi_tilde_sigma(scheme, eps, nu, k)),
        }
    }
}

pub fn sample_stationary_pair<R: Rng + ?Sized>(
    scheme: &Scheme,
    eps: f64,
    nu: f64,
    kmax: usize,
    ncomp: usize,
    rng: &mut R,
) -> Result<CoupledStationaryPair> {
    if kmax < 1 || !(nu > 0.0) || !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("need K ≥ 1, ν > 0, ε > 0 (K={kmax}, ν={nu}, ε={eps})")));
    }
    let draw = ModeGaussianDraw::sample(kmax, ncomp, rng);
    Ok(CoupledStationaryPair::from_draw(&draw, scheme, eps, nu))
}

/// Cylindrical Wiener increment over `Δt`: `E|ΔW_k|² = Δt` on every mode.
pub fn wiener_increment<R: Rng + ?Sized>(kmax: usize, ncomp: usize, dt: f64, rng: &mut R) -> Result<SpectralField> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("Δt must be positive, got {dt}")));
    }
    let s = dt.sqrt();
    Ok(ModeGaussianDraw::sample(kmax, ncomp, rng).scaled(|_| s))
}

/// `Σ_k n (σ̃_k − σ_k)²` over `|k| ≤ K`: the mean square `L²` distance of the
/// coupled pair.
pub fn coupled_l2_gap(scheme: &Scheme, eps: f64, nu: f64, kmax: usize, ncomp: usize) -> f64 {
    let mut acc = 0.0;
    for k in 0..=kmax {
        let d = psi_tilde_sigma(scheme, eps, nu, k) - psi_sigma(nu, k);
        acc += if k == 0 { 1.0 } else { 2.0 } * d * d;
    }
    acc * ncomp as f64
}

/// Wiener increments on a step `Δt` that refine a coarser path.
///
/// Increments over `2^refine · Δt` come from the `"noise"` stream and are
/// split dyadically by Brownian bridges drawn from the `"bridge"` stream. Runs
/// with `(Δt, r)` and `(Δt/2, r+1)` therefore see the same Brownian path, and
/// `refine = 0` reproduces [`wiener_increment`] on the `"noise"` stream.
pub struct BrownianPath {
    kmax: usize,
    ncomp: usize,
    dt: f64,
    refine: u32,
    noise: Stream,
    bridge: Stream,
    pending: std::collections::VecDeque<SpectralField>,
}

impl BrownianPath {
    pub fn new(kmax: usize, ncomp: usize, dt: f64, refine: u32, seed: u64, replicate: u64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("Δt must be positive, got {dt}")));
        }
        Ok(Self {
            kmax,
            ncomp,
            dt,
            refine,
            noise: derive_stream(seed, replicate, "noise"),
            bridge: derive_stream(seed, replicate, "bridge"),
            pending: Default::default(),
        })
    }

    pub fn next_increment(&mut self) -> Result<SpectralField> {
        if let Some(w) = self.pending.pop_front() {
            return Ok(w);
        }
        let coarse = self.dt * f64::from(1u32 << self.refine);
        let mut leaves = vec![wiener_increment(self.kmax, self.ncomp, coarse, &mut self.noise)?];
        for level in 0..self.refine {
            let half_sd = 0.5 * (coarse / f64::from(1u32 << level)).sqrt();
            leaves = leaves
                .into_iter()
                .flat_map(|w| {
                    let mut left = ModeGaussianDraw::sample(self.kmax, self.ncomp, &mut self.bridge).scaled(|_| half_sd);
                    left.axpy(0.5, &w);
                    let mut right = w;
                    right.axpy(-1.0, &left);
                    [left, right]
                })
                .collect();
        }
        self.pending.extend(leaves);
        Ok(self.pending.pop_front().expect("at least one leaf"))
    }
}
