//! Coupled exponential-Euler stepping of the discretized equation and of the
//! (corrected or uncorrected) limit equation.
//!
//! Per Fourier mode, with `λ_k` the linear rate and `N` the nonlinearity,
//!
//! ```text
//! û_k ← e^{−λ_kΔt} û_k + φ₁(−λ_kΔt) Δt N̂_k + s_k m_k ΔW_k,   φ₁(z) = (e^z − 1)/z
//! ```
//!
//! with `s_k = ((1 − e^{−2λ_kΔt})/(2λ_kΔt))^{1/2}`, so each step adds exactly
//! the Ornstein–Uhlenbeck variance of the mode while still consuming one
//! Gaussian per mode.
//!
//! * limit variants: `λ_k = νk²`, `m_k = 1`, `N = F̃(u) + ∂_x G(u)` in
//!   conservative form (`F̃ = F − ΛΔG` or `F`);
//! * approximate variant: `λ_k = νk² f(εk)`, `m_k = h(εk)`,
//!   `N = F(u) + ∇G(u)·D_ε u`; modes with `f = +∞` are held at zero.
//!
//! All runs of one replicate regenerate the same increment stream, so they
//! are driven by identical `ΔW`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::correction::{corrected_drift, lambda_closed_form, lambda_quadrature};
use crate::error::{Error, Result};
use crate::noise::{derive_stream, BrownianPath, CoupledStationaryPair, ModeGaussianDraw};
use crate::nonlin::{CompiledJacobian, CompiledMap, PolynomialMap};
use crate::schemes::{spectral_derivative, Scheme};
use crate::spectral::{from_grid, padded_size, sobolev_norm, sup_norm, to_grid, GridField, SpectralField};

/// Default estimator exponents.
pub const DEFAULT_ALPHA: f64 = 0.75;
pub const DEFAULT_GAMMA: f64 = 1.0 / 3.0;
pub const DEFAULT_CHI: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    Quadrature,
    ClosedForm,
    Explicit(f64),
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Approximate,
    LimitCorrected,
    LimitUncorrected,
}

/// Finitely many Fourier modes `(component, k, coefficient)`, so smooth.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InitialData {
    pub modes: Vec<(usize, usize, (f64, f64))>,
}

impl InitialData {
    /// Parses `comp:k:re:im; comp:k:re:im`. An empty string is `v0 = 0`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut modes = Vec::new();
        for entry in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let parts: Vec<&str> = entry.split(':').map(str::trim).collect();
            let bad = || Error::Parse { line: 0, msg: format!("bad initial mode `{entry}`, expected comp:k:re:im") };
            if parts.len() != 4 {
                return Err(bad());
            }
            let c = parts[0].parse().map_err(|_| bad())?;
            let k = parts[1].parse().map_err(|_| bad())?;
            let re = parts[2].parse().map_err(|_| bad())?;
            let im = parts[3].parse().map_err(|_| bad())?;
            modes.push((c, k, (re, im)));
        }
        Ok(Self { modes })
    }

    pub fn to_field(&self, kmax: usize, ncomp: usize) -> Result<SpectralField> {
        let mut u = SpectralField::zeros(kmax, ncomp);
        for &(c, k, (re, im)) in &self.modes {
            if c >= ncomp || k > kmax {
                return Err(Error::InvalidArgument(format!("initial mode ({c}, {k}) outside n={ncomp}, K={kmax}")));
            }
            u.set_mode(c, k, Complex64::new(re, im));
        }
        Ok(u)
    }
}

impl std::fmt::Display for InitialData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.modes.iter().map(|(c, k, (re, im))| format!("{c}:{k}:{re}:{im}")).collect();
        write!(f, "{}", parts.join("; "))
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub nu: f64,
    pub n: usize,
    pub kmax: usize,
    pub pad: f64,
    pub dt: f64,
    pub t_end: f64,
    pub eps: f64,
    pub scheme: Scheme,
    pub f: PolynomialMap,
    pub g: PolynomialMap,
    pub lambda_mode: LambdaMode,
    pub v0: InitialData,
    pub seed: u64,
    pub variant: Variant,
    /// Number of recording intervals on `[0, T]`.
    pub records: usize,
    /// Sobolev exponent of the `H^α` error.
    pub alpha: f64,
    /// Tolerance for `Λ` by quadrature.
    pub tol: f64,
    /// Noise is drawn on steps `2^noise_refine · Δt` and bridged down to `Δt`.
    pub noise_refine: u32,
}

impl SimConfig {
    /// Scalar Burgers (`F = 0`, `G = u²/2`, `ν = 1`) with the forward
    /// difference `μ = δ_1 − δ_0` and `f = h = 1`; `K = 128`, `Δt = 2.5e−4`, `T = 0.5`.
    pub fn burgers_default() -> Self {
        Self {
            nu: 1.0,
            n: 1,
            kmax: 128,
            pad: 2.0,
            dt: 2.5e-4,
            t_end: 0.5,
            eps: 0.125,
            scheme: Scheme::identity(1.0, 0.0).expect("builtin scheme"),
            f: PolynomialMap::zero(1),
            g: PolynomialMap::burgers(),
            lambda_mode: LambdaMode::Quadrature,
            // v0 = 0.5 sin x
            v0: InitialData { modes: vec![(0, 1, (0.0, -0.5 * (std::f64::consts::PI / 2.0).sqrt()))] },
            seed: 20_110_301,
            variant: Variant::Approximate,
            records: 10,
            alpha: DEFAULT_ALPHA,
            tol: 1e-10,
            noise_refine: 0,
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.nu > 0.0) {
            return bad(format!("ν must be positive, got {}", self.nu));
        }
        if !(self.dt > 0.0) || !(self.t_end >= self.dt) {
            return bad(format!("need Δt > 0 and T ≥ Δt (Δt={}, T={})", self.dt, self.t_end));
        }
        let ratio = self.t_end / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return bad(format!("T/Δt = {ratio} is not an integer"));
        }
        if !self.steps().is_multiple_of(1usize << self.noise_refine) {
            return bad(format!("{} steps are not a multiple of the noise block 2^{}", self.steps(), self.noise_refine));
        }
        if self.records == 0 || !self.steps().is_multiple_of(self.records) {
            return bad(format!("{} steps are not divisible into {} records", self.steps(), self.records));
        }
        if self.f.n() != self.n || self.g.n() != self.n {
            return Err(Error::Dimension { expected: self.n, got: self.f.n().min(self.g.n()) });
        }
        if self.kmax == 0 {
            return bad("K must be at least 1".into());
        }
        if !(self.pad >= 1.0) {
            return bad(format!("padding ratio must be ≥ 1, got {}", self.pad));
        }
        if !(self.eps > 0.0) {
            return bad(format!("ε must be positive, got {}", self.eps));
        }
        self.v0.to_field(self.kmax, self.n).map(|_| ())
    }

    pub fn resolve_lambda(&self) -> Result<f64> {
        match self.lambda_mode {
            LambdaMode::Zero => Ok(0.0),
            LambdaMode::Explicit(v) => Ok(v),
            LambdaMode::Quadrature => Ok(lambda_quadrature(&self.scheme, self.nu, self.tol)?.value),
            LambdaMode::ClosedForm => {
                let (kind, a, b) = self.scheme.as_builtin().ok_or_else(|| {
                    Error::InvalidArgument(format!("no closed form for scheme `{}`", self.scheme.name()))
                })?;
                Ok(lambda_closed_form(kind, a, b, self.nu)?.value)
            }
        }
    }
}

enum Nonlinearity {
    Conservative { drift: CompiledMap, flux: CompiledMap },
    Gradient { drift: CompiledMap, jac: CompiledJacobian, scheme: Box<Scheme>, eps: f64 },
}

/// One exponential-Euler step map for a fixed variant and `ε`.
pub struct Stepper {
    kmax: usize,
    ncomp: usize,
    pad_m: usize,
    decay: Vec<f64>,
    phi_dt: Vec<f64>,
    noise: Vec<f64>,
    nonlin: Nonlinearity,
}

impl Stepper {
    pub fn new(cfg: &SimConfig, variant: Variant, eps: f64, lambda: f64) -> Result<Self> {
        let kmax = cfg.kmax;
        let mut decay = Vec::with_capacity(kmax + 1);
        let mut phi_dt = Vec::with_capacity(kmax + 1);
        let mut noise = Vec::with_capacity(kmax + 1);
        for k in 0..=kmax {
            let k2 = (k * k) as f64;
            let (rate, m) = match variant {
                Variant::Approximate => {
                    let t = eps * k as f64;
                    (cfg.nu * k2 * cfg.scheme.diffusion(t), cfg.scheme.filter(t))
                }
                _ => (cfg.nu * k2, 1.0),
            };
            if rate.is_infinite() {
                decay.push(0.0);
                phi_dt.push(0.0);
                noise.push(0.0);
            } else {
                let e = (-rate * cfg.dt).exp();
                decay.push(e);
                // φ₁(−λΔt)Δt = (1 − e^{−λΔt})/λ
                phi_dt.push(if rate == 0.0 { cfg.dt } else { -(-rate * cfg.dt).exp_m1() / rate });
                let x = 2.0 * rate * cfg.dt;
                noise.push(if x == 0.0 { m } else { m * (-(-x).exp_m1() / x).sqrt() });
            }
        }
        let nonlin = match variant {
            Variant::Approximate => Nonlinearity::Gradient {
                drift: cfg.f.compile(),
                jac: CompiledJacobian::new(&cfg.g.jacobian()),
                scheme: Box::new(cfg.scheme.clone()),
                eps,
            },
            Variant::LimitCorrected => Nonlinearity::Conservative {
                drift: corrected_drift(&cfg.f, &cfg.g, lambda)?.compile(),
                flux: cfg.g.compile(),
            },
            Variant::LimitUncorrected => Nonlinearity::Conservative { drift: cfg.f.compile(), flux: cfg.g.compile() },
        };
        Ok(Self { kmax, ncomp: cfg.n, pad_m: padded_size(kmax, cfg.pad), decay, phi_dt, noise, nonlin })
    }

    /// Evaluates the nonlinearity `N(u)` on the padded grid.
    pub fn nonlinearity(&self, u: &SpectralField) -> Result<SpectralField> {
        let m = self.pad_m;
        let n = self.ncomp;
        match &self.nonlin {
            Nonlinearity::Conservative { drift, flux } => {
                let gu = to_grid(u, m)?;
                let fu = drift.eval_grid(&gu, None, None);
                let gflux = flux.eval_grid(&gu, None, None);
                let mut both = Vec::with_capacity(2 * n * m);
                both.extend_from_slice(fu.values());
                both.extend_from_slice(gflux.values());
                let spec = from_grid(&GridField::new(m, 2 * n, both)?, self.kmax)?;
                let mut out = SpectralField::zeros(self.kmax, n);
                for c in 0..n {
                    let (fpart, gpart) = (spec.component(c), spec.component(n + c));
                    for (k, z) in out.component_mut(c).iter_mut().enumerate() {
                        *z = fpart[k] + Complex64::new(0.0, k as f64) * gpart[k];
                    }
                }
                Ok(out)
            }
            Nonlinearity::Gradient { drift, jac, scheme, eps } => {
                let du = scheme.apply_d_eps(u, *eps)?;
                let gu = to_grid(u, m)?;
                let gdu = to_grid(&du, m)?;
                let out = drift.eval_grid(&gu, Some(jac), Some(&gdu));
                from_grid(&out, self.kmax)
            }
        }
    }

    /// One step with increment `dw`; `t_last` is reported on blow-up.
    pub fn step(&self, u: &SpectralField, dw: &SpectralField, t_last: f64) -> Result<SpectralField> {
        let nl = self.nonlinearity(u)?;
        let mut out = SpectralField::zeros(self.kmax, self.ncomp);
        for c in 0..self.ncomp {
            let (uc, nc, wc) = (u.component(c), nl.component(c), dw.component(c));
            for (k, z) in out.component_mut(c).iter_mut().enumerate() {
                *z = uc[k] * self.decay[k] + nc[k] * self.phi_dt[k] + wc[k] * self.noise[k];
            }
        }
        if !out.is_finite() {
            return Err(Error::BlowUp { t_last });
        }
        Ok(out)
    }
}

/// `(u_ε(0), ū(0)) = (v0 + ψ̃(0), v0 + ψ(0))`.
pub fn initial_conditions(cfg: &SimConfig, pair: &CoupledStationaryPair) -> Result<(SpectralField, SpectralField)> {
    let v0 = cfg.v0.to_field(cfg.kmax, cfg.n)?;
    Ok((&v0 + &pair.psi_tilde, &v0 + &pair.psi))
}

/// Snapshots of one run at the recording times.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<SpectralField>,
}

/// Runs one variant from `u0`, driven by the replicate's [`BrownianPath`].
pub fn simulate(cfg: &SimConfig, variant: Variant, eps: f64, lambda: f64, u0: SpectralField, replicate: u64) -> Result<Trajectory> {
    let stepper = Stepper::new(cfg, variant, eps, lambda)?;
    let mut path = BrownianPath::new(cfg.kmax, cfg.n, cfg.dt, cfg.noise_refine, cfg.seed, replicate)?;
    let steps = cfg.steps();
    let every = steps / cfg.records;
    let mut u = u0;
    let mut times = vec![0.0];
    let mut snapshots = vec![u.clone()];
    for i in 1..=steps {
        let dw = path.next_increment()?;
        u = stepper.step(&u, &dw, (i - 1) as f64 * cfg.dt)?;
        if i % every == 0 {
            times.push(i as f64 * cfg.dt);
            snapshots.push(u.clone());
        }
    }
    Ok(Trajectory { times, snapshots })
}

/// Error series of one approximate run against the two limit runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub eps: f64,
    pub replicate: u64,
    pub times: Vec<f64>,
    pub sup_err_corrected: Vec<f64>,
    pub sup_err_uncorrected: Vec<f64>,
    pub halpha_err_corrected: Vec<f64>,
    pub halpha_err_uncorrected: Vec<f64>,
    /// Last valid time if any of the three runs produced non-finite values.
    pub blowup: Option<f64>,
}

/// Ensemble mean and standard error per recording time for one `ε`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub eps: f64,
    pub times: Vec<f64>,
    pub mean: [Vec<f64>; 4],
    pub stderr: [Vec<f64>; 4],
    pub n_used: usize,
    pub n_blowup: usize,
}

impl EnsembleSummary {
    pub const COLUMNS: [&'static str; 4] =
        ["sup_err_corrected", "sup_err_uncorrected", "halpha_err_corrected", "halpha_err_uncorrected"];

    fn from_records(eps: f64, records: &[&TrajectoryRecord]) -> Self {
        let used: Vec<&&TrajectoryRecord> = records.iter().filter(|r| r.blowup.is_none()).collect();
        let times = used.first().map(|r| r.times.clone()).unwrap_or_default();
        let nt = times.len();
        let column = |r: &TrajectoryRecord, j: usize| -> Vec<f64> {
            match j {
                0 => r.sup_err_corrected.clone(),
                1 => r.sup_err_uncorrected.clone(),
                2 => r.halpha_err_corrected.clone(),
                _ => r.halpha_err_uncorrected.clone(),
            }
        };
        let mut mean: [Vec<f64>; 4] = Default::default();
        let mut stderr: [Vec<f64>; 4] = Default::default();
        for j in 0..4 {
            let cols: Vec<Vec<f64>> = used.iter().map(|r| column(r, j)).collect();
            for t in 0..nt {
                let xs: Vec<f64> = cols.iter().map(|c| c[t]).collect();
                let (m, se) = mean_stderr(&xs);
                mean[j].push(m);
                stderr[j].push(se);
            }
        }
        Self { eps, times, mean, stderr, n_used: used.len(), n_blowup: records.len() - used.len() }
    }

    /// Ensemble means per recording time under the header
    /// `t,sup_err_corrected,sup_err_uncorrected,halpha_err_corrected,halpha_err_uncorrected`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,{}", Self::COLUMNS.join(","))?;
        for (i, t) in self.times.iter().enumerate() {
            write!(w, "{t:.16e}")?;
            for col in &self.mean {
                write!(w, ",{:.16e}", col[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Same layout with the standard errors.
    pub fn write_stderr_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,{}", Self::COLUMNS.join(","))?;
        for (i, t) in self.times.iter().enumerate() {
            write!(w, "{t:.16e}")?;
            for col in &self.stderr {
                write!(w, ",{:.16e}", col[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Index of the recording time closest to `t`.
    pub fn time_index(&self, t: f64) -> usize {
        self.times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, (v / n as f64).sqrt())
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub lambda: f64,
    pub records: Vec<TrajectoryRecord>,
    pub summaries: Vec<EnsembleSummary>,
}

impl EnsembleResult {
    pub fn blowup_fraction(&self) -> f64 {
        let mut reps: Vec<u64> = self.records.iter().map(|r| r.replicate).collect();
        reps.sort_unstable();
        reps.dedup();
        let bad: std::collections::BTreeSet<u64> =
            self.records.iter().filter(|r| r.blowup.is_some()).map(|r| r.replicate).collect();
        if reps.is_empty() {
            0.0
        } else {
            bad.len() as f64 / reps.len() as f64
        }
    }
}

/// A pool of `workers` threads (at least one).
pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

type LimitRuns = (std::result::Result<Trajectory, f64>, std::result::Result<Trajectory, f64>);

/// Runs the coupled experiment for every `ε` and replicate on `workers` threads.
/// Results are ordered by `(ε index, replicate)` regardless of scheduling.
pub fn run_coupled(cfg: &SimConfig, eps_list: &[f64], replicates: usize, workers: usize) -> Result<EnsembleResult> {
    cfg.validate()?;
    if eps_list.is_empty() || replicates == 0 {
        return Err(Error::InvalidArgument("need at least one ε and one replicate".into()));
    }
    let lambda = cfg.resolve_lambda()?;
    let pool = thread_pool(workers)?;

    let draws: Vec<ModeGaussianDraw> = (0..replicates as u64)
        .map(|r| ModeGaussianDraw::sample(cfg.kmax, cfg.n, &mut derive_stream(cfg.seed, r, "initial")))
        .collect();
    let v0 = cfg.v0.to_field(cfg.kmax, cfg.n)?;

    let blow = |e: Error| match e {
        Error::BlowUp { t_last } => Ok(t_last),
        other => Err(other),
    };

    let limits: Vec<LimitRuns> = pool.install(|| {
        (0..replicates)
            .into_par_iter()
            .map(|r| -> Result<LimitRuns> {
                let psi = draws[r].scaled(|k| crate::noise::psi_sigma(cfg.nu, k));
                let ubar0 = &v0 + &psi;
                let run = |variant| match simulate(cfg, variant, cfg.eps, lambda, ubar0.clone(), r as u64) {
                    Ok(t) => Ok(Ok(t)),
                    Err(e) => blow(e).map(Err),
                };
                Ok((run(Variant::LimitCorrected)?, run(Variant::LimitUncorrected)?))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let tasks: Vec<(usize, usize)> = (0..eps_list.len()).flat_map(|e| (0..replicates).map(move |r| (e, r))).collect();
    let records: Vec<TrajectoryRecord> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(ei, r)| -> Result<TrajectoryRecord> {
                let eps = eps_list[ei];
                let pair = CoupledStationaryPair::from_draw(&draws[r], &cfg.scheme, eps, cfg.nu);
                let (ueps0, _) = initial_conditions(cfg, &pair)?;
                let approx = match simulate(cfg, Variant::Approximate, eps, lambda, ueps0, r as u64) {
                    Ok(t) => Ok(t),
                    Err(e) => Err(blow(e)?),
                };
                let mut rec = TrajectoryRecord {
                    eps,
                    replicate: r as u64,
                    times: Vec::new(),
                    sup_err_corrected: Vec::new(),
                    sup_err_uncorrected: Vec::new(),
                    halpha_err_corrected: Vec::new(),
                    halpha_err_uncorrected: Vec::new(),
                    blowup: None,
                };
                match (&approx, &limits[r].0, &limits[r].1) {
                    (Ok(a), Ok(c), Ok(u)) => {
                        rec.times = a.times.clone();
                        for i in 0..a.times.len() {
                            let dc = &a.snapshots[i] - &c.snapshots[i];
                            let du = &a.snapshots[i] - &u.snapshots[i];
                            rec.sup_err_corrected.push(sup_norm(&dc));
                            rec.sup_err_uncorrected.push(sup_norm(&du));
                            rec.halpha_err_corrected.push(sobolev_norm(&dc, cfg.alpha));
                            rec.halpha_err_uncorrected.push(sobolev_norm(&du, cfg.alpha));
                        }
                    }
                    _ => {
                        let t = [approx.as_ref().err(), limits[r].0.as_ref().err(), limits[r].1.as_ref().err()]
                            .into_iter()
                            .flatten()
                            .fold(f64::INFINITY, |m, &t| m.min(t));
                        rec.blowup = Some(t);
                    }
                }
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let summaries = eps_list
        .iter()
        .enumerate()
        .map(|(ei, &eps)| {
            let recs: Vec<&TrajectoryRecord> = records[ei * replicates..(ei + 1) * replicates].iter().collect();
            EnsembleSummary::from_records(eps, &recs)
        })
        .collect();
    Ok(EnsembleResult { lambda, records, summaries })
}

/// `∂_x G(u)` and `∇G(u)·∂_x u` by pseudospectral evaluation, for comparing
/// the conservative and gradient forms.
pub fn conservative_and_gradient_forms(g: &PolynomialMap, u: &SpectralField, pad: f64) -> Result<(SpectralField, SpectralField)> {
    let cons = spectral_derivative(&g.apply_pointwise(u, pad)?);
    let grad = g.jacobian().apply_bilinear(u, &spectral_derivative(u), pad)?;
    Ok((cons, grad))
}
