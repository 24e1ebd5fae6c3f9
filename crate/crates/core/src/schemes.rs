//! Translation-invariant discretizations described by a triple `(f, h, μ)`.
//!
//! * `f` is the diffusion symbol: `Δ_ε` acts on mode `k` as `-k² f(ε|k|)`.
//!   `f = +∞` marks modes removed from the dynamics.
//! * `h` is the noise filter: `Q_ε` acts on mode `k` as `h(ε|k|)`.
//! * `μ` is a finite atomic signed measure generating the discrete
//!   derivative `D_ε u(x) = ε⁻¹ Σ_i w_i u(x + ε y_i)`.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::SpectralField;

/// Piecewise-linear symbol through `(t_i, v_i)` with a fixed value beyond
/// the last knot. Values may be `+∞`; on a segment touching an infinite knot
/// the symbol is `+∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedSymbol {
    knots: Vec<(f64, f64)>,
    extrapolation: f64,
}

impl TabulatedSymbol {
    pub fn new(knots: Vec<(f64, f64)>, extrapolation: f64) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidArgument("table needs at least one knot".into()));
        }
        if knots[0].0 != 0.0 {
            return Err(Error::InvalidArgument("table must start at t = 0".into()));
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidArgument("table abscissae must increase".into()));
        }
        Ok(Self { knots, extrapolation })
    }

    /// Reads a table file: `t value` pairs (comma or whitespace separated),
    /// `#` comments, and one `extrapolate <value>` line. `inf` is accepted.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut knots = Vec::new();
        let mut extrapolation = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> =
                line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
            let err = |msg: &str| Error::Parse { line: i + 1, msg: msg.to_string() };
            if parts[0] == "extrapolate" {
                let v = parts.get(1).ok_or_else(|| err("missing extrapolation value"))?;
                extrapolation = Some(parse_real(v).ok_or_else(|| err("bad extrapolation value"))?);
                continue;
            }
            if parts.len() != 2 {
                return Err(err("expected `t value`"));
            }
            let t = parse_real(parts[0]).ok_or_else(|| err("bad abscissa"))?;
            let v = parse_real(parts[1]).ok_or_else(|| err("bad value"))?;
            knots.push((t, v));
        }
        let extrapolation = extrapolation.ok_or(Error::Parse { line: 0, msg: "missing `extrapolate` line".into() })?;
        Self::new(knots, extrapolation)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let last = self.knots[self.knots.len() - 1];
        if t > last.0 {
            return self.extrapolation;
        }
        if t == last.0 {
            return last.1;
        }
        let i = self.knots.partition_point(|&(x, _)| x <= t) - 1;
        let (t0, v0) = self.knots[i];
        let (t1, v1) = self.knots[i + 1];
        if v0.is_infinite() || v1.is_infinite() {
            return f64::INFINITY;
        }
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        self.knots.iter().map(|k| k.0).collect()
    }

    pub fn last_knot(&self) -> f64 {
        self.knots[self.knots.len() - 1].0
    }

    pub fn extrapolation(&self) -> f64 {
        self.extrapolation
    }
}

pub(crate) fn parse_real(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" | "+inf" | "infinity" => Some(f64::INFINITY),
        other => other.parse().ok(),
    }
}

/// User-supplied pure symbol. `constant_beyond = Some(T)` declares the
/// symbol constant on `[T, ∞)`, which the `Λ` quadrature needs for its tail.
#[derive(Clone)]
pub struct CustomSymbol {
    pub label: String,
    pub func: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub constant_beyond: Option<f64>,
}

impl fmt::Debug for CustomSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomSymbol({})", self.label)
    }
}

#[derive(Debug, Clone)]
pub enum DiffusionSymbol {
    /// `f ≡ 1`.
    Identity,
    /// Three-point Laplacian: `4 sin²(t/2)/t²` on `[0, π)`, `+∞` beyond.
    FiniteDifference,
    /// `1` on `[0, π)`, `+∞` beyond.
    Galerkin,
    Table(TabulatedSymbol),
    Custom(CustomSymbol),
}

impl DiffusionSymbol {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::FiniteDifference => {
                if t >= PI {
                    f64::INFINITY
                } else if t < 1e-4 {
                    // series avoids the 0/0
                    1.0 - t * t / 12.0 + t.powi(4) / 360.0
                } else {
                    let s = (0.5 * t).sin();
                    4.0 * s * s / (t * t)
                }
            }
            Self::Galerkin => {
                if t >= PI {
                    f64::INFINITY
                } else {
                    1.0
                }
            }
            Self::Table(tab) => tab.eval(t),
            Self::Custom(c) => (c.func)(t),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Identity => "identity".into(),
            Self::FiniteDifference => "finite_difference".into(),
            Self::Galerkin => "galerkin".into(),
            Self::Table(_) => "table".into(),
            Self::Custom(c) => c.label.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum NoiseFilter {
    /// `h ≡ 1`.
    One,
    /// `h = 1_{[0,π)}`.
    IndicatorPi,
    Table(TabulatedSymbol),
    Custom(CustomSymbol),
}

impl NoiseFilter {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::One => 1.0,
            Self::IndicatorPi => {
                if t < PI {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Table(tab) => tab.eval(t),
            Self::Custom(c) => (c.func)(t),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::One => "one".into(),
            Self::IndicatorPi => "indicator_pi".into(),
            Self::Table(_) => "table".into(),
            Self::Custom(c) => c.label.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom {
    pub y: f64,
    pub w: f64,
}

/// Finite atomic signed measure `Σ_i w_i δ_{y_i}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measure {
    atoms: Vec<Atom>,
}

impl Measure {
    pub fn new(atoms: Vec<Atom>) -> Self {
        Self { atoms }
    }

    /// `(δ_a − δ_{−b})/(a+b)`.
    pub fn asymmetric(a: f64, b: f64) -> Result<Self> {
        if a < 0.0 || b < 0.0 || a + b <= 0.0 {
            return Err(Error::InvalidArgument(format!("need a, b ≥ 0 and a + b > 0, got a={a}, b={b}")));
        }
        let w = 1.0 / (a + b);
        Ok(Self { atoms: vec![Atom { y: a, w }, Atom { y: -b, w: -w }] })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.w).sum()
    }

    pub fn first_moment(&self) -> f64 {
        self.atoms.iter().map(|a| a.w * a.y).sum()
    }

    pub fn abs_moment(&self, p: i32) -> f64 {
        self.atoms.iter().map(|a| a.w.abs() * a.y.abs().powi(p)).sum()
    }

    /// `∫ e^{iκy} μ(dy)`.
    pub fn fourier(&self, kappa: f64) -> Complex64 {
        self.atoms.iter().map(|a| Complex64::from_polar(a.w, kappa * a.y)).sum()
    }

    /// Recovers `(a, b)` when the measure has the form `(δ_a − δ_{−b})/(a+b)`.
    pub fn as_asymmetric_pair(&self) -> Option<(f64, f64)> {
        let mut pos = None;
        let mut neg = None;
        for at in &self.atoms {
            if at.w > 0.0 && pos.is_none() {
                pos = Some(*at);
            } else if at.w < 0.0 && neg.is_none() {
                neg = Some(*at);
            } else {
                return None;
            }
        }
        let (p, n) = (pos?, neg?);
        let (a, b) = (p.y, -n.y);
        if a < 0.0 || b < 0.0 || a + b <= 0.0 {
            return None;
        }
        let w = 1.0 / (a + b);
        if (p.w - w).abs() < 1e-12 * w && (n.w + w).abs() < 1e-12 * w {
            Some((a, b))
        } else {
            None
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.atoms.iter().map(|a| format!("({},{})", a.y, a.w)).collect();
        write!(f, "{}", parts.join(";"))
    }
}

/// Unvalidated scheme description.
#[derive(Debug, Clone)]
pub struct SchemeSpec {
    pub name: String,
    pub f: DiffusionSymbol,
    pub h: NoiseFilter,
    pub mu: Measure,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub measured: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub scheme: String,
    pub checks: Vec<Check>,
    /// Sampled total variation of `h²/f`; informational only.
    pub sampled_variation_h2_over_f: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let mark = if c.passed { "ok  " } else { "FAIL" };
            writeln!(f, "  [{mark}] {:<24} measured={:e} {}", c.name, c.measured, c.detail)?;
        }
        write!(f, "  sampled variation of h^2/f: {:e}", self.sampled_variation_h2_over_f)
    }
}

const MOMENT_TOL: f64 = 1e-12;
const SLOPE_TOL: f64 = 1e-4;

fn log_grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(move |i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
}

/// Second-order one-sided difference at 0, exact for quadratics.
fn slope_at_zero(g: &dyn Fn(f64) -> f64, step: f64) -> f64 {
    (-3.0 * g(0.0) + 4.0 * g(step) - g(2.0 * step)) / (2.0 * step)
}

impl SchemeSpec {
    pub fn validate(&self) -> ValidationReport {
        let mut checks = Vec::new();
        let mut push = |name, passed, measured, detail: String| checks.push(Check { name, passed, measured, detail });

        let mass = self.mu.total_mass();
        push("mu_total_mass", mass.abs() < MOMENT_TOL, mass, "requires μ(R) = 0".into());
        let m1 = self.mu.first_moment();
        push("mu_first_moment", (m1 - 1.0).abs() < MOMENT_TOL, m1, "requires ∫ y μ(dy) = 1".into());
        let m4 = self.mu.abs_moment(4);
        let finite_atoms = self.mu.atoms.iter().all(|a| a.y.is_finite() && a.w.is_finite());
        push("mu_fourth_moment", m4.is_finite() && finite_atoms && !self.mu.atoms.is_empty(), m4, "∫ |y|⁴ |μ|(dy) < ∞".into());

        let f = |t: f64| self.f.eval(t);
        let h = |t: f64| self.h.eval(t);
        let f0 = f(0.0);
        push("f_at_zero", (f0 - 1.0).abs() < 1e-12, f0, "requires f(0) = 1".into());
        let df = [1e-3, 1e-4].map(|s| slope_at_zero(&f, s));
        let worst = df[0].abs().max(df[1].abs());
        push("f_slope_at_zero", worst < SLOPE_TOL, worst, format!("steps 1e-3, 1e-4: {:?}", df));

        let mut min_f = f64::INFINITY;
        let mut f_nan = false;
        for t in log_grid(1e-6, 1e3, 4000) {
            let v = f(t);
            f_nan |= v.is_nan();
            if v.is_finite() {
                min_f = min_f.min(v);
            }
        }
        let q_ok = self.q > 0.0 && self.q <= 1.0 && !f_nan && min_f >= self.q * (1.0 - 1e-12);
        push("f_lower_bound", q_ok, min_f, format!("claimed q = {}", self.q));

        let h0 = h(0.0);
        push("h_at_zero", (h0 - 1.0).abs() < 1e-12, h0, "requires h(0) = 1".into());
        let dh = [1e-3, 1e-4].map(|s| slope_at_zero(&h, s));
        let worst = dh[0].abs().max(dh[1].abs());
        push("h_slope_at_zero", worst < SLOPE_TOL, worst, format!("steps 1e-3, 1e-4: {:?}", dh));

        let mut h_sup: f64 = 0.0;
        let mut leak: f64 = 0.0;
        let mut variation = 0.0;
        let mut prev: Option<f64> = None;
        let samples: Vec<f64> = std::iter::once(0.0).chain(log_grid(1e-6, 1e3, 4000)).collect();
        for &t in &samples {
            let hv = h(t);
            h_sup = h_sup.max(hv.abs());
            let fv = f(t);
            if fv.is_infinite() {
                leak = leak.max(hv.abs());
            }
            let r = if fv.is_infinite() { 0.0 } else { hv * hv / fv };
            if let Some(p) = prev {
                variation += (r - p).abs();
            }
            prev = Some(r);
        }
        push("h_bounded", h_sup.is_finite(), h_sup, "sup |h| on sample grid".into());
        push("h_zero_where_f_infinite", leak == 0.0, leak, "max |h| where f = +∞".into());
        push(
            "h2_over_f_variation",
            variation.is_finite(),
            variation,
            "sampled only; bounded variation is not proven".into(),
        );

        ValidationReport { scheme: self.name.clone(), checks, sampled_variation_h2_over_f: variation }
    }

    pub fn build(self) -> Result<Scheme> {
        let report = self.validate();
        if report.passed() {
            Ok(Scheme { spec: self, report })
        } else {
            Err(Error::InvalidScheme(Box::new(report)))
        }
    }
}

/// A scheme that passed validation. Only obtainable through [`SchemeSpec::build`].
#[derive(Debug, Clone)]
pub struct Scheme {
    spec: SchemeSpec,
    report: ValidationReport,
}

/// Builtin scheme families with closed-form correction constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    Identity,
    FiniteDifference,
    Galerkin,
}

impl Scheme {
    /// `f = h = 1`, `μ = (δ_a − δ_{−b})/(a+b)`.
    pub fn identity(a: f64, b: f64) -> Result<Self> {
        Self::builtin(Builtin::Identity, a, b)
    }

    pub fn finite_difference(a: f64, b: f64) -> Result<Self> {
        Self::builtin(Builtin::FiniteDifference, a, b)
    }

    pub fn galerkin(a: f64, b: f64) -> Result<Self> {
        Self::builtin(Builtin::Galerkin, a, b)
    }

    pub fn builtin(kind: Builtin, a: f64, b: f64) -> Result<Self> {
        let (name, f, h, q) = match kind {
            Builtin::Identity => ("identity", DiffusionSymbol::Identity, NoiseFilter::One, 1.0),
            // min of 4 sin²(t/2)/t² on [0, π) is 4/π²
            Builtin::FiniteDifference => {
                ("finite_difference", DiffusionSymbol::FiniteDifference, NoiseFilter::IndicatorPi, 4.0 / (PI * PI))
            }
            Builtin::Galerkin => ("galerkin", DiffusionSymbol::Galerkin, NoiseFilter::IndicatorPi, 1.0),
        };
        SchemeSpec { name: format!("{name}(a={a},b={b})"), f, h, mu: Measure::asymmetric(a, b)?, q }.build()
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn spec(&self) -> &SchemeSpec {
        &self.spec
    }

    pub fn report(&self) -> &ValidationReport {
        &self.report
    }

    pub fn mu(&self) -> &Measure {
        &self.spec.mu
    }

    pub fn diffusion(&self, t: f64) -> f64 {
        self.spec.f.eval(t)
    }

    pub fn filter(&self, t: f64) -> f64 {
        self.spec.h.eval(t)
    }

    /// The builtin family and `(a, b)` if this scheme is one of them.
    pub fn as_builtin(&self) -> Option<(Builtin, f64, f64)> {
        let kind = match (&self.spec.f, &self.spec.h) {
            (DiffusionSymbol::Identity, NoiseFilter::One) => Builtin::Identity,
            (DiffusionSymbol::FiniteDifference, NoiseFilter::IndicatorPi) => Builtin::FiniteDifference,
            (DiffusionSymbol::Galerkin, NoiseFilter::IndicatorPi) => Builtin::Galerkin,
            _ => return None,
        };
        let (a, b) = self.spec.mu.as_asymmetric_pair()?;
        Some((kind, a, b))
    }

    /// `iκ g(κ) = ∫ e^{iκy} μ(dy)`.
    pub fn derivative_symbol(&self, kappa: f64) -> Complex64 {
        self.spec.mu.fourier(kappa)
    }

    /// `D_ε`: mode `k` times `ε⁻¹ Σ_i w_i e^{ikεy_i}`.
    pub fn apply_d_eps(&self, u: &SpectralField, eps: f64) -> Result<SpectralField> {
        check_eps(eps)?;
        Ok(u.multiplied(|k| self.derivative_symbol(eps * k as f64) / eps))
    }

    /// `Δ_ε`: mode `k` times `-k² f(ε|k|)`. Fails on an active mode with `f = +∞`.
    pub fn apply_delta_eps(&self, u: &SpectralField, eps: f64) -> Result<SpectralField> {
        check_eps(eps)?;
        for k in 1..=u.kmax() {
            if self.diffusion(eps * k as f64).is_infinite() && (0..u.ncomp()).any(|c| u.coeff(c, k as i64).norm() != 0.0) {
                return Err(Error::InfiniteSymbol { k });
            }
        }
        Ok(u.multiplied(|k| {
            if k == 0 {
                return Complex64::new(0.0, 0.0);
            }
            let f = self.diffusion(eps * k as f64);
            if f.is_infinite() {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(-((k * k) as f64) * f, 0.0)
            }
        }))
    }

    /// `Q_ε`: mode `k` times `h(ε|k|)`.
    pub fn apply_q_eps(&self, u: &SpectralField, eps: f64) -> Result<SpectralField> {
        check_eps(eps)?;
        Ok(u.multiplied(|k| Complex64::new(self.filter(eps * k as f64), 0.0)))
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("ε must be positive, got {eps}")))
    }
}

/// `Ď_δ u = (u(· + δ) − u)/δ`.
pub fn apply_hat_d(u: &SpectralField, delta: f64) -> Result<SpectralField> {
    if delta == 0.0 || !delta.is_finite() {
        return Err(Error::InvalidArgument("Ď_δ needs δ ≠ 0".into()));
    }
    Ok(u.multiplied(|k| (Complex64::from_polar(1.0, k as f64 * delta) - 1.0) / delta))
}

/// Undivided shift difference `u(· + s) − u`; well defined at `s = 0`.
pub fn shift_difference(u: &SpectralField, s: f64) -> SpectralField {
    u.multiplied(|k| Complex64::from_polar(1.0, k as f64 * s) - 1.0)
}

/// Exact spectral derivative `∂_x`.
pub fn spectral_derivative(u: &SpectralField) -> SpectralField {
    u.multiplied(|k| Complex64::new(0.0, k as f64))
}
