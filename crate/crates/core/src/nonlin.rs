//! Polynomial nonlinearities `R^n → R^n` with exact symbolic derivatives.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{from_grid, padded_size, to_grid, GridField, SpectralField};

/// Multivariate polynomial in `u1..un`, stored as exponent tuple → coefficient.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Self { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    /// `c · u_var^power`.
    pub fn monomial(nvars: usize, c: f64, exps: &[u32]) -> Self {
        assert_eq!(exps.len(), nvars);
        let mut p = Self::zero(nvars);
        p.add_term(exps.to_vec(), c);
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], f64)> {
        self.terms.iter().map(|(e, c)| (e.as_slice(), *c))
    }

    fn add_term(&mut self, exps: Vec<u32>, c: f64) {
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(exps).or_insert(0.0);
        *entry += c;
        if *entry == 0.0 {
            self.terms.retain(|_, v| *v != 0.0);
        }
    }

    pub fn eval(&self, v: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(v).map(|(&p, &x)| x.powi(p as i32)).product::<f64>())
            .sum()
    }

    /// `∂/∂u_var`.
    pub fn derivative(&self, var: usize) -> Self {
        let mut out = Self::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[var] > 0 {
                let mut e2 = e.clone();
                e2[var] -= 1;
                out.add_term(e2, c * e[var] as f64);
            }
        }
        out
    }

    /// `Σ_j ∂²/∂u_j²`.
    pub fn laplacian(&self) -> Self {
        let mut out = Self::zero(self.nvars);
        for j in 0..self.nvars {
            out = out.add(&self.derivative(j).derivative(j));
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), *c);
        }
        out
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = Self::zero(self.nvars);
        for (e, c) in &self.terms {
            out.add_term(e.clone(), c * a);
        }
        out
    }

    /// Parses `0.5*u1^2 - u1*u2 + 3`.
    pub fn parse(text: &str, nvars: usize) -> Result<Self> {
        let perr = |msg: String| Error::Parse { line: 0, msg };
        let mut p = Self::zero(nvars);
        let cleaned: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        if cleaned.is_empty() {
            return Err(perr("empty polynomial".into()));
        }
        // split into signed terms, ignoring signs inside exponents like 1e-3
        let mut terms = Vec::new();
        let mut start = 0;
        let bytes = cleaned.as_bytes();
        for i in 1..bytes.len() {
            let ch = bytes[i];
            let prev = bytes[i - 1];
            if (ch == b'+' || ch == b'-') && !matches!(prev, b'e' | b'E' | b'*' | b'^' | b'+' | b'-') {
                terms.push(&cleaned[start..i]);
                start = i;
            }
        }
        terms.push(&cleaned[start..]);
        for term in terms {
            let (sign, body) = match term.as_bytes()[0] {
                b'-' => (-1.0, &term[1..]),
                b'+' => (1.0, &term[1..]),
                _ => (1.0, term),
            };
            if body.is_empty() {
                return Err(perr(format!("dangling sign in `{text}`")));
            }
            let mut coef = sign;
            let mut exps = vec![0u32; nvars];
            for factor in body.split('*') {
                if let Some(var) = factor.strip_prefix('u') {
                    let (idx, pow) = match var.split_once('^') {
                        Some((i, p)) => (i, p.parse::<u32>().map_err(|_| perr(format!("bad exponent in `{factor}`")))?),
                        None => (var, 1),
                    };
                    let idx: usize = idx.parse().map_err(|_| perr(format!("bad variable `{factor}`")))?;
                    if idx == 0 || idx > nvars {
                        return Err(perr(format!("variable u{idx} out of range 1..={nvars}")));
                    }
                    exps[idx - 1] += pow;
                } else {
                    let c: f64 = factor.parse().map_err(|_| perr(format!("bad factor `{factor}`")))?;
                    coef *= c;
                }
            }
            p.add_term(exps, coef);
        }
        Ok(p)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (e, c) in &self.terms {
            let (sign, mag) = if *c < 0.0 { ("-", -c) } else { ("+", *c) };
            if first {
                if sign == "-" {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            first = false;
            write!(f, "{mag}")?;
            for (j, &p) in e.iter().enumerate() {
                match p {
                    0 => {}
                    1 => write!(f, "*u{}", j + 1)?,
                    _ => write!(f, "*u{}^{}", j + 1, p)?,
                }
            }
        }
        Ok(())
    }
}

/// `P: R^n → R^n`, one polynomial per component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolynomialMap {
    components: Vec<Polynomial>,
}

/// `n × n` matrix of polynomials, row `i` = gradient of component `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    rows: Vec<Vec<Polynomial>>,
}

impl Jacobian {
    pub fn entry(&self, i: usize, j: usize) -> &Polynomial {
        &self.rows[i][j]
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }
}

impl PolynomialMap {
    pub fn new(components: Vec<Polynomial>) -> Result<Self> {
        let n = components.len();
        if n == 0 {
            return Err(Error::InvalidArgument("polynomial map needs a component".into()));
        }
        for p in &components {
            if p.nvars != n {
                return Err(Error::Dimension { expected: n, got: p.nvars });
            }
            if p.terms.values().any(|c| !c.is_finite()) {
                return Err(Error::InvalidArgument("non-finite coefficient".into()));
            }
        }
        Ok(Self { components })
    }

    pub fn zero(n: usize) -> Self {
        Self { components: vec![Polynomial::zero(n); n] }
    }

    /// Scalar Burgers flux `G(u) = u²/2`.
    pub fn burgers() -> Self {
        Self { components: vec![Polynomial::monomial(1, 0.5, &[2])] }
    }

    /// Parses one `coef*u1^a*u2^b + ...` expression per component.
    pub fn parse(exprs: &[&str]) -> Result<Self> {
        let n = exprs.len();
        Self::new(exprs.iter().map(|e| Polynomial::parse(e, n)).collect::<Result<_>>()?)
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, i: usize) -> &Polynomial {
        &self.components[i]
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(Polynomial::is_zero)
    }

    pub fn degree(&self) -> u32 {
        self.components.iter().map(Polynomial::degree).max().unwrap_or(0)
    }

    pub fn evaluate(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n(), "dimension mismatch");
        self.components.iter().map(|p| p.eval(v)).collect()
    }

    pub fn jacobian(&self) -> Jacobian {
        let n = self.n();
        Jacobian { rows: self.components.iter().map(|p| (0..n).map(|j| p.derivative(j)).collect()).collect() }
    }

    pub fn laplacian(&self) -> Self {
        Self { components: self.components.iter().map(Polynomial::laplacian).collect() }
    }

    pub fn sub_scaled(&self, a: f64, other: &Self) -> Self {
        assert_eq!(self.n(), other.n());
        Self { components: self.components.iter().zip(&other.components).map(|(p, q)| p.add(&q.scaled(-a))).collect() }
    }

    /// Pseudospectral `P(u)`, truncated to the band of `u`.
    pub fn apply_pointwise(&self, u: &SpectralField, pad: f64) -> Result<SpectralField> {
        self.apply_pointwise_to(u, pad, u.kmax())
    }

    /// Pseudospectral `P(u)` on a grid of size `padded_size(max(K, K_out), pad)`,
    /// truncated to `K_out`.
    pub fn apply_pointwise_to(&self, u: &SpectralField, pad: f64, kout: usize) -> Result<SpectralField> {
        self.check_dim(u)?;
        check_pad(pad)?;
        let m = padded_size(u.kmax().max(kout), pad);
        let g = to_grid(u, m)?;
        let out = self.compile().eval_grid(&g, None, None);
        from_grid(&out, kout)
    }

    pub fn compile(&self) -> CompiledMap {
        CompiledMap::new(self)
    }

    fn check_dim(&self, u: &SpectralField) -> Result<()> {
        if u.ncomp() != self.n() {
            return Err(Error::Dimension { expected: self.n(), got: u.ncomp() });
        }
        Ok(())
    }
}

impl fmt::Display for PolynomialMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.components.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "P{} = {}", i + 1, p)?;
        }
        Ok(())
    }
}

impl Jacobian {
    /// Pseudospectral `∇G(u(x))·w(x)`, truncated to the band of `u`.
    pub fn apply_bilinear(&self, u: &SpectralField, w: &SpectralField, pad: f64) -> Result<SpectralField> {
        if u.ncomp() != self.n() || w.ncomp() != self.n() {
            return Err(Error::Dimension { expected: self.n(), got: u.ncomp().min(w.ncomp()) });
        }
        check_pad(pad)?;
        let kmax = u.kmax().max(w.kmax());
        let m = padded_size(kmax, pad);
        let gu = to_grid(u, m)?;
        let gw = to_grid(w, m)?;
        let compiled = CompiledJacobian::new(self);
        let mut out = GridField::new(m, self.n(), vec![0.0; m * self.n()])?;
        compiled.accumulate(&gu, &gw, &mut out);
        from_grid(&out, u.kmax())
    }
}

fn check_pad(pad: f64) -> Result<()> {
    if pad >= 1.0 && pad.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("padding ratio must be ≥ 1, got {pad}")))
    }
}

#[derive(Debug, Clone)]
struct FlatPoly {
    // (coefficient, [(var, power)])
    terms: Vec<(f64, Vec<(usize, i32)>)>,
}

impl FlatPoly {
    fn new(p: &Polynomial) -> Self {
        let terms = p
            .terms()
            .map(|(e, c)| {
                let factors = e.iter().enumerate().filter(|(_, &p)| p > 0).map(|(j, &p)| (j, p as i32)).collect();
                (c, factors)
            })
            .collect();
        Self { terms }
    }

    #[inline]
    fn eval(&self, v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (c, factors) in &self.terms {
            let mut t = *c;
            for &(j, p) in factors {
                t *= if p == 1 { v[j] } else { v[j].powi(p) };
            }
            acc += t;
        }
        acc
    }
}

/// Flattened form of a [`PolynomialMap`] for repeated grid evaluation.
#[derive(Debug, Clone)]
pub struct CompiledMap {
    comps: Vec<FlatPoly>,
}

impl CompiledMap {
    pub fn new(p: &PolynomialMap) -> Self {
        Self { comps: p.components.iter().map(FlatPoly::new).collect() }
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(|p| p.terms.is_empty())
    }

    /// Pointwise `P(u(x_j))`, optionally plus `J(u(x_j))·w(x_j)`.
    pub fn eval_grid(&self, u: &GridField, jac: Option<&CompiledJacobian>, w: Option<&GridField>) -> GridField {
        let n = self.comps.len();
        let m = u.len();
        let mut out = GridField::new(m, n, vec![0.0; m * n]).expect("shape");
        let mut v = vec![0.0; n];
        for j in 0..m {
            for (c, slot) in v.iter_mut().enumerate() {
                *slot = u.component(c)[j];
            }
            for (c, p) in self.comps.iter().enumerate() {
                out.component_mut(c)[j] = p.eval(&v);
            }
        }
        if let (Some(jac), Some(w)) = (jac, w) {
            jac.accumulate(u, w, &mut out);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CompiledJacobian {
    rows: Vec<Vec<FlatPoly>>,
}

impl CompiledJacobian {
    pub fn new(j: &Jacobian) -> Self {
        Self { rows: j.rows.iter().map(|r| r.iter().map(FlatPoly::new).collect()).collect() }
    }

    /// `out(x_j) += J(u(x_j))·w(x_j)`.
    pub fn accumulate(&self, u: &GridField, w: &GridField, out: &mut GridField) {
        let n = self.rows.len();
        let m = u.len();
        let mut v = vec![0.0; n];
        for j in 0..m {
            for (c, slot) in v.iter_mut().enumerate() {
                *slot = u.component(c)[j];
            }
            for (i, row) in self.rows.iter().enumerate() {
                let mut acc = 0.0;
                for (c, p) in row.iter().enumerate() {
                    if !p.terms.is_empty() {
                        acc += p.eval(&v) * w.component(c)[j];
                    }
                }
                out.component_mut(i)[j] += acc;
            }
        }
    }
}
