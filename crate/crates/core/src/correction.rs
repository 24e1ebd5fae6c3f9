//! The correction constant `Λ` that the limit equation picks up as the extra
//! drift `−Λ ΔG(u)`.
//!
//! ```text
//! Λ = 1/(2πν) Σ_i w_i I(y_i),   I(y) = ∫_0^∞ (1 − cos(yt)) h²(t) / (t² f(t)) dt
//! ```
//!
//! [`lambda_quadrature`] evaluates this numerically for any validated scheme
//! whose symbols are eventually constant; [`lambda_closed_form`] gives the
//! exact values for the builtin families; [`lambda_eps_y`] / [`lambda_eps`]
//! are the finite-`ε` mode sums that the second-chaos expectation produces.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nonlin::PolynomialMap;
use crate::quadrature::{integrate_panels, panel_points, si, Integral};
use crate::schemes::{Builtin, DiffusionSymbol, NoiseFilter, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMethod {
    Quadrature,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaResult {
    pub value: f64,
    pub abs_error_estimate: f64,
    pub method: LambdaMethod,
    pub scheme: String,
    pub nu: f64,
}

const MAX_PANELS: usize = 20_000;

/// Where `h²/f` becomes constant, and that constant.
fn tail_structure(scheme: &Scheme) -> Result<(Vec<f64>, f64, f64)> {
    let spec = scheme.spec();
    let mut breaks = Vec::new();
    // (point beyond which the symbol is constant, constant value)
    let (f_from, f_inf) = match &spec.f {
        DiffusionSymbol::Identity => (0.0, 1.0),
        DiffusionSymbol::FiniteDifference | DiffusionSymbol::Galerkin => {
            breaks.push(PI);
            (PI, f64::INFINITY)
        }
        DiffusionSymbol::Table(t) => {
            breaks.extend(t.breakpoints());
            (t.last_knot(), t.extrapolation())
        }
        DiffusionSymbol::Custom(c) => {
            let t = c.constant_beyond.ok_or_else(|| unsupported_tail(&c.label))?;
            breaks.push(t);
            (t, (c.func)(t))
        }
    };
    let (h_from, h_inf) = match &spec.h {
        NoiseFilter::One => (0.0, 1.0),
        NoiseFilter::IndicatorPi => {
            breaks.push(PI);
            (PI, 0.0)
        }
        NoiseFilter::Table(t) => {
            breaks.extend(t.breakpoints());
            (t.last_knot(), t.extrapolation())
        }
        NoiseFilter::Custom(c) => {
            let t = c.constant_beyond.ok_or_else(|| unsupported_tail(&c.label))?;
            breaks.push(t);
            (t, (c.func)(t))
        }
    };
    let t_end = f_from.max(h_from);
    let c_tail = if f_inf.is_infinite() || h_inf == 0.0 { 0.0 } else { h_inf * h_inf / f_inf };
    breaks.retain(|&b| b > 0.0 && b < t_end);
    Ok((breaks, t_end, c_tail))
}

fn unsupported_tail(label: &str) -> Error {
    Error::InvalidArgument(format!(
        "symbol `{label}` does not declare where it becomes constant; the Λ tail cannot be bounded"
    ))
}

/// `∫_T^∞ (1 − cos(yt))/t² dt = (1 − cos(yT))/T + |y| (π/2 − Si(|y|T))`.
pub fn oscillatory_tail(y: f64, t: f64) -> f64 {
    let a = y.abs();
    (1.0 - (y * t).cos()) / t + a * (0.5 * PI - si(a * t))
}

/// `I(y) = ∫_0^∞ (1 − cos(yt)) h²(t)/(t² f(t)) dt` by adaptive quadrature.
pub fn atom_integral(scheme: &Scheme, y: f64, tol: f64) -> Result<Integral> {
    if y == 0.0 {
        return Ok(Integral { value: 0.0, abs_error: 0.0 });
    }
    let (breaks, t_end, c_tail) = tail_structure(scheme)?;
    // with an everywhere-constant symbol pick any finite split point
    let t_end = if t_end == 0.0 { 1.0 } else { t_end };
    let integrand = |t: f64| {
        if t == 0.0 {
            return 0.5 * y * y;
        }
        let f = scheme.diffusion(t);
        if f.is_infinite() {
            return 0.0;
        }
        let h = scheme.filter(t);
        let s = (0.5 * y * t).sin();
        2.0 * s * s * h * h / (t * t * f)
    };
    // panel edges at symbol breakpoints, refined to half an oscillation period
    let mut edges = vec![0.0];
    edges.extend(breaks);
    edges.push(t_end);
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let width = PI / y.abs();
    let mut points = vec![0.0];
    for w in edges.windows(2) {
        points.extend(panel_points(w[0], w[1], width).into_iter().skip(1));
    }
    let body = integrate_panels(&integrand, &points, tol, MAX_PANELS)?;
    let tail = if c_tail == 0.0 { 0.0 } else { c_tail * oscillatory_tail(y, t_end) };
    Ok(Integral { value: body.value + tail, abs_error: body.abs_error + 1e-15 * tail.abs() })
}

/// `Λ` by quadrature, with `abs_error_estimate ≤ tol` on success.
pub fn lambda_quadrature(scheme: &Scheme, nu: f64, tol: f64) -> Result<LambdaResult> {
    check_nu(nu)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let atoms = scheme.mu().atoms();
    let norm = 1.0 / (2.0 * PI * nu);
    let mut value = 0.0;
    let mut err = 0.0;
    for atom in atoms {
        if atom.w == 0.0 {
            continue;
        }
        let atom_tol = tol / (norm * atom.w.abs() * atoms.len() as f64);
        let integral = atom_integral(scheme, atom.y, atom_tol).map_err(|e| match e {
            Error::Quadrature { partial, estimate, .. } => Error::Quadrature {
                partial: norm * atom.w * partial,
                estimate: norm * atom.w.abs() * estimate,
                tol,
            },
            other => other,
        })?;
        value += atom.w * integral.value;
        err += atom.w.abs() * integral.abs_error;
    }
    Ok(LambdaResult {
        value: norm * value,
        abs_error_estimate: norm * err,
        method: LambdaMethod::Quadrature,
        scheme: scheme.name().to_string(),
        nu,
    })
}

/// Exact `Λ` for `μ = (δ_a − δ_{−b})/(a+b)`:
/// identity and finite-difference (integer `a`, `b`): `(a−b)/(4ν(a+b))`;
/// Galerkin: `[cos πa + πa Si(πa) − cos πb − πb Si(πb)] / (2π²ν(a+b))`.
pub fn lambda_closed_form(kind: Builtin, a: f64, b: f64, nu: f64) -> Result<LambdaResult> {
    check_nu(nu)?;
    if a < 0.0 || b < 0.0 || !(a + b > 0.0) {
        return Err(Error::InvalidArgument(format!("need a, b ≥ 0 with a + b > 0, got a={a}, b={b}")));
    }
    let value = match kind {
        Builtin::Identity => (a - b) / (4.0 * nu * (a + b)),
        Builtin::FiniteDifference => {
            if a.fract() != 0.0 || b.fract() != 0.0 {
                return Err(Error::InvalidArgument(
                    "finite-difference closed form requires grid-aligned (integer) a, b".into(),
                ));
            }
            (a - b) / (4.0 * nu * (a + b))
        }
        Builtin::Galerkin => {
            let part = |x: f64| (PI * x).cos() + PI * x * si(PI * x);
            (part(a) - part(b)) / (2.0 * PI * PI * nu * (a + b))
        }
    };
    let name = match kind {
        Builtin::Identity => "identity",
        Builtin::FiniteDifference => "finite_difference",
        Builtin::Galerkin => "galerkin",
    };
    Ok(LambdaResult {
        value,
        abs_error_estimate: 0.0,
        method: LambdaMethod::ClosedForm,
        scheme: format!("{name}(a={a},b={b})"),
        nu,
    })
}

fn check_nu(nu: f64) -> Result<()> {
    if nu > 0.0 && nu.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("ν must be positive, got {nu}")))
    }
}

/// A finite mode sum, flagged when its index range was empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSum {
    pub value: f64,
    pub empty_range: bool,
}

/// `Σ_{k ∈ range} (1 − cos(εky)) h²(εk) / (2πε(1 + νk² f(εk)))` over integer `k ≥ 1`.
pub fn lambda_mode_sum(scheme: &Scheme, eps: f64, nu: f64, y: f64, ks: impl Iterator<Item = usize>) -> BandSum {
    let mut value = 0.0;
    let mut empty = true;
    for k in ks {
        empty = false;
        let t = eps * k as f64;
        let f = scheme.diffusion(t);
        if f.is_infinite() {
            continue;
        }
        let h = scheme.filter(t);
        let kf = k as f64;
        value += (1.0 - (t * y).cos()) * h * h / (2.0 * PI * eps * (1.0 + nu * kf * kf * f));
    }
    BandSum { value, empty_range: empty }
}

/// Integers `k` with `lo < k < hi`.
pub fn open_range(lo: f64, hi: f64) -> std::ops::Range<usize> {
    let first = (lo.floor() + 1.0).max(1.0) as usize;
    let last = hi.ceil() - 1.0;
    let end = if last < first as f64 { first } else { last as usize + 1 };
    first..end
}

fn check_band(eps: f64, gamma: f64, chi: f64, nu: f64) -> Result<()> {
    check_nu(nu)?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("ε must lie in (0, 1), got {eps}")));
    }
    if !(gamma > 0.0 && gamma < chi) {
        return Err(Error::InvalidArgument(format!("need 0 < γ < χ, got γ={gamma}, χ={chi}")));
    }
    Ok(())
}

/// `Λ_ε^y`: the mode sum over `ε^{−γ} < k < ε^{−χ}`.
pub fn lambda_eps_y(scheme: &Scheme, eps: f64, gamma: f64, chi: f64, nu: f64, y: f64) -> Result<BandSum> {
    check_band(eps, gamma, chi, nu)?;
    let range = open_range(eps.powf(-gamma), eps.powf(-chi));
    Ok(lambda_mode_sum(scheme, eps, nu, y, range))
}

/// `Λ_ε = Σ_i w_i Λ_ε^{y_i}`.
pub fn lambda_eps(scheme: &Scheme, eps: f64, gamma: f64, chi: f64, nu: f64) -> Result<f64> {
    let mut total = 0.0;
    for atom in scheme.mu().atoms() {
        total += atom.w * lambda_eps_y(scheme, eps, gamma, chi, nu, atom.y)?.value;
    }
    Ok(total)
}

/// `F̃ = F − Λ ΔG`.
pub fn corrected_drift(f: &PolynomialMap, g: &PolynomialMap, lambda: f64) -> Result<PolynomialMap> {
    if f.n() != g.n() {
        return Err(Error::Dimension { expected: f.n(), got: g.n() });
    }
    Ok(f.sub_scaled(lambda, &g.laplacian()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlin::Polynomial;
    use crate::quadrature::integrate;
    use crate::schemes::{Atom, Measure, SchemeSpec, TabulatedSymbol};

    #[test]
    fn identity_quarter() {
        let s = Scheme::identity(1.0, 0.0).unwrap();
        let r = lambda_quadrature(&s, 1.0, 1e-10).unwrap();
        assert!((r.value - 0.25).abs() < 1e-9, "{}", r.value);
        assert!(r.abs_error_estimate <= 1e-10);
        assert_eq!(r.method, LambdaMethod::Quadrature);
    }

    #[test]
    fn symmetric_measure_vanishes() {
        for s in [Scheme::identity(1.0, 1.0), Scheme::galerkin(2.0, 2.0), Scheme::finite_difference(1.0, 1.0)] {
            let r = lambda_quadrature(&s.unwrap(), 0.7, 1e-10).unwrap();
            assert!(r.value.abs() <= 1e-10);
        }
        assert!(lambda_closed_form(Builtin::Galerkin, 1.5, 1.5, 1.0).unwrap().value.abs() < 1e-15);
    }

    #[test]
    fn galerkin_quadrature_matches_si_formula() {
        let s = Scheme::galerkin(1.0, 0.0).unwrap();
        let q = lambda_quadrature(&s, 1.0, 1e-10).unwrap();
        let c = lambda_closed_form(Builtin::Galerkin, 1.0, 0.0, 1.0).unwrap();
        assert!((q.value - c.value).abs() < 1e-6);
    }

    #[test]
    fn closed_form_examples() {
        let r = lambda_closed_form(Builtin::Identity, 2.0, 1.0, 1.0).unwrap();
        assert!((r.value - 1.0 / 12.0).abs() < 1e-16);
        assert!(lambda_closed_form(Builtin::Identity, 0.0, 0.0, 1.0).is_err());
        assert!(lambda_closed_form(Builtin::FiniteDifference, 0.5, 0.0, 1.0).is_err());
        assert!(lambda_closed_form(Builtin::Identity, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn antisymmetry_and_viscosity_scaling() {
        let ab = [(1.0, 0.0), (2.0, 1.0), (3.0, 1.0), (0.0, 2.0)];
        for kind in [Builtin::Identity, Builtin::FiniteDifference, Builtin::Galerkin] {
            for &(a, b) in &ab {
                for nu in [0.25, 1.0, 4.0] {
                    let s = Scheme::builtin(kind, a, b).unwrap();
                    let r = Scheme::builtin(kind, b, a).unwrap();
                    let qs = lambda_quadrature(&s, nu, 1e-11).unwrap().value;
                    let qr = lambda_quadrature(&r, nu, 1e-11).unwrap().value;
                    assert!((qs + qr).abs() < 1e-10, "{kind:?} a={a} b={b}");
                    let cs = lambda_closed_form(kind, a, b, nu).unwrap().value;
                    let cr = lambda_closed_form(kind, b, a, nu).unwrap().value;
                    assert!((cs + cr).abs() < 1e-14);
                }
            }
        }
        let s = Scheme::galerkin(2.0, 1.0).unwrap();
        let base = lambda_quadrature(&s, 1.0, 1e-12).unwrap().value;
        for nu in [0.5, 2.0] {
            let v = lambda_quadrature(&s, nu, 1e-12).unwrap().value;
            assert!((v * nu / base - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn tabulated_symbols_use_breakpoints() {
        // Galerkin expressed through tables gives the same constant.
        let f = TabulatedSymbol::parse("0 1\n3.141592653589793 1\nextrapolate inf\n").unwrap();
        let h = TabulatedSymbol::parse("0 1\n3.141592653589793 1\nextrapolate 0\n").unwrap();
        let spec = SchemeSpec {
            name: "tab".into(),
            f: DiffusionSymbol::Table(f),
            h: NoiseFilter::Table(h),
            mu: Measure::asymmetric(1.0, 0.0).unwrap(),
            q: 1.0,
        };
        let s = spec.build().unwrap();
        let q = lambda_quadrature(&s, 1.0, 1e-10).unwrap().value;
        let c = lambda_closed_form(Builtin::Galerkin, 1.0, 0.0, 1.0).unwrap().value;
        assert!((q - c).abs() < 1e-8);
    }

    #[test]
    fn oscillatory_tail_against_quadrature() {
        for &(y, t) in &[(1.0, 3.0), (2.5, 1.0), (-0.7, 5.0)] {
            let far = 400.0;
            let body = integrate_panels(
                &|s: f64| (1.0 - (y * s).cos()) / (s * s),
                &panel_points(t, far, 0.5),
                1e-13,
                20000,
            )
            .unwrap()
            .value;
            let expect = body + oscillatory_tail(y, far);
            assert!((oscillatory_tail(y, t) - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn lambda_eps_y_examples() {
        let s = Scheme::identity(1.0, 0.0).unwrap();
        assert_eq!(lambda_eps_y(&s, 0.01, 1.0 / 3.0, 1.5, 1.0, 0.0).unwrap().value, 0.0);
        let v = lambda_eps_y(&s, 1e-3, 1.0 / 3.0, 1.5, 1.0, 1.0).unwrap();
        assert!((v.value - 0.25).abs() <= 0.02, "{}", v.value);
        assert!(!v.empty_range);
        // γ, χ so close that no integer lies between the cut-offs
        let e = lambda_eps_y(&s, 0.5, 1.0, 1.1, 1.0, 1.0).unwrap();
        assert!(e.empty_range);
        assert_eq!(e.value, 0.0);
        assert!(lambda_eps_y(&s, 0.5, 1.0, 0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn galerkin_sum_truncates_at_pi_over_eps() {
        let g = Scheme::galerkin(1.0, 0.0).unwrap();
        let eps = 0.01;
        let full = lambda_eps_y(&g, eps, 0.3, 1.5, 1.0, 1.0).unwrap().value;
        let cut = lambda_mode_sum(&g, eps, 1.0, 1.0, open_range(eps.powf(-0.3), PI / eps));
        assert!((full - cut.value).abs() < 1e-15);
    }

    #[test]
    fn lambda_eps_limits() {
        let sym = Scheme::identity(1.0, 1.0).unwrap();
        assert_eq!(lambda_eps(&sym, 0.01, 1.0 / 3.0, 1.5, 1.0).unwrap(), 0.0);
        let quad = lambda_quadrature(&Scheme::identity(1.0, 0.0).unwrap(), 1.0, 1e-10).unwrap().value;
        for s in [Scheme::identity(1.0, 0.0).unwrap(), Scheme::finite_difference(1.0, 0.0).unwrap()] {
            let v = lambda_eps(&s, 1e-3, 1.0 / 3.0, 1.5, 1.0).unwrap();
            assert!((v - quad).abs() <= 0.02, "{} {v}", s.name());
        }
    }

    #[test]
    fn band_sum_monotone_in_chi() {
        for s in [Scheme::identity(1.0, 0.0), Scheme::finite_difference(2.0, 1.0), Scheme::galerkin(1.0, 0.0)] {
            let s = s.unwrap();
            let mut prev = 0.0;
            for chi in [0.6, 0.9, 1.2, 1.5, 2.0] {
                let v = lambda_eps_y(&s, 0.01, 0.5, chi, 1.0, 1.0).unwrap().value;
                assert!(v >= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn corrected_drift_examples() {
        let f = PolynomialMap::zero(1);
        let g = PolynomialMap::burgers();
        let ft = corrected_drift(&f, &g, 0.25).unwrap();
        assert_eq!(ft.component(0), &Polynomial::constant(1, -0.25));
        assert_eq!(corrected_drift(&g, &g, 0.0).unwrap(), g);
        let lin = PolynomialMap::parse(&["2*u1 - u2", "u1"]).unwrap();
        let f2 = PolynomialMap::parse(&["u1*u2", "1"]).unwrap();
        assert_eq!(corrected_drift(&f2, &lin, 3.0).unwrap(), f2);
    }

    #[test]
    fn custom_symbol_without_tail_rejected() {
        use crate::schemes::CustomSymbol;
        use std::sync::Arc;
        let spec = SchemeSpec {
            name: "c".into(),
            f: DiffusionSymbol::Custom(CustomSymbol { label: "one".into(), func: Arc::new(|_| 1.0), constant_beyond: None }),
            h: NoiseFilter::One,
            mu: Measure::new(vec![Atom { y: 1.0, w: 1.0 }, Atom { y: 0.0, w: -1.0 }]),
            q: 1.0,
        };
        let s = spec.build().unwrap();
        assert!(matches!(lambda_quadrature(&s, 1.0, 1e-8), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn finite_difference_integrand_oracle() {
        // ∫_0^π (1 − cos(mt)) / (4 sin²(t/2)) dt = mπ/2 for integer m
        for m in 1..=4 {
            let mf = m as f64;
            let q = integrate(&|t: f64| {
                if t == 0.0 {
                    0.5 * mf * mf
                } else {
                    (1.0 - (mf * t).cos()) / (4.0 * (0.5 * t).sin().powi(2))
                }
            }, 0.0, PI, 1e-12)
            .unwrap();
            assert!((q.value - mf * PI / 2.0).abs() < 1e-10);
        }
    }
}
