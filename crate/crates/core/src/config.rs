//! Plain-text `key = value` files: scheme descriptions and run configurations.
//!
//! Scheme file keys: `name`, `f = identity|finite_difference|galerkin|table:<path>`,
//! `h = one|indicator_pi|table:<path>`, `mu = (y1,w1);(y2,w2);...`, `q = <real>`.
//! Table paths are relative to the file that names them.
//!
//! Run configuration sections: `[scheme]` (either `file = <path>` or the
//! scheme keys inline), `[model]`, `[time]`, `[experiment]`, `[output]`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::{InitialData, LambdaMode, SimConfig, Variant, DEFAULT_ALPHA};
use crate::nonlin::PolynomialMap;
use crate::schemes::{parse_real, Atom, DiffusionSymbol, Measure, NoiseFilter, SchemeSpec, TabulatedSymbol};

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// Sections of `key = value` pairs; keys before any header land in `""`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValueFile {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

impl KeyValueFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
        let mut current = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or(Error::Parse { line: i + 1, msg: "unterminated section header".into() })?;
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(Error::Parse { line: i + 1, msg: format!("expected `key = value`, got `{line}`") })?;
            let key = k.trim().to_string();
            let section = sections.entry(current.clone()).or_default();
            if section.contains_key(&key) {
                return Err(Error::Parse { line: i + 1, msg: format!("duplicate key `{key}`") });
            }
            section.insert(key, Entry { value: v.trim().to_string(), line: i + 1 });
        }
        Ok(Self { sections })
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(|e| e.value.as_str())
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    fn line(&self, section: &str, key: &str) -> usize {
        self.sections.get(section).and_then(|s| s.get(key)).map_or(0, |e| e.line)
    }

    fn parse_with<T>(&self, section: &str, key: &str, f: impl FnOnce(&str) -> Option<T>) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => f(v).map(Some).ok_or_else(|| Error::Parse {
                line: self.line(section, key),
                msg: format!("bad value `{v}` for [{section}] {key}"),
            }),
        }
    }

    fn real(&self, section: &str, key: &str) -> Result<Option<f64>> {
        self.parse_with(section, key, parse_real)
    }

    fn integer<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        self.parse_with(section, key, |v| v.parse().ok())
    }

    fn unknown_keys(&self, section: &str, allowed: &[&str]) -> Result<()> {
        if let Some(s) = self.sections.get(section) {
            for (k, e) in s {
                if !allowed.contains(&k.as_str()) {
                    return Err(Error::Parse { line: e.line, msg: format!("unknown key `{k}` in [{section}]") });
                }
            }
        }
        Ok(())
    }
}

const SCHEME_KEYS: [&str; 5] = ["name", "f", "h", "mu", "q"];

/// `(y1,w1);(y2,w2);...`
pub fn parse_measure(text: &str) -> Result<Measure> {
    let mut atoms = Vec::new();
    for part in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = || Error::Parse { line: 0, msg: format!("bad atom `{part}`, expected (y,w)") };
        let inner = part.strip_prefix('(').and_then(|p| p.strip_suffix(')')).ok_or_else(bad)?;
        let (y, w) = inner.split_once(',').ok_or_else(bad)?;
        atoms.push(Atom { y: parse_real(y).ok_or_else(bad)?, w: parse_real(w).ok_or_else(bad)? });
    }
    if atoms.is_empty() {
        return Err(Error::Parse { line: 0, msg: "measure has no atoms".into() });
    }
    Ok(Measure::new(atoms))
}

fn table(path: &str, base: &Path) -> Result<TabulatedSymbol> {
    TabulatedSymbol::from_file(&base.join(path.trim()))
}

fn scheme_from_section(kv: &KeyValueFile, section: &str, base: &Path) -> Result<SchemeSpec> {
    let missing = |k: &str| Error::Parse { line: 0, msg: format!("missing `{k}` in scheme description") };
    let at = |k: &str, e: Error| match e {
        Error::Parse { msg, .. } => Error::Parse { line: kv.line(section, k), msg },
        other => other,
    };
    let f_text = kv.get(section, "f").ok_or_else(|| missing("f"))?;
    let f = match f_text {
        "identity" => DiffusionSymbol::Identity,
        "finite_difference" => DiffusionSymbol::FiniteDifference,
        "galerkin" => DiffusionSymbol::Galerkin,
        other => match other.strip_prefix("table:") {
            Some(p) => DiffusionSymbol::Table(table(p, base)?),
            None => return Err(at("f", Error::Parse { line: 0, msg: format!("unknown diffusion symbol `{other}`") })),
        },
    };
    let h_text = kv.get(section, "h").ok_or_else(|| missing("h"))?;
    let h = match h_text {
        "one" => NoiseFilter::One,
        "indicator_pi" => NoiseFilter::IndicatorPi,
        other => match other.strip_prefix("table:") {
            Some(p) => NoiseFilter::Table(table(p, base)?),
            None => return Err(at("h", Error::Parse { line: 0, msg: format!("unknown noise filter `{other}`") })),
        },
    };
    let mu = parse_measure(kv.get(section, "mu").ok_or_else(|| missing("mu"))?).map_err(|e| at("mu", e))?;
    let q = kv.real(section, "q")?.ok_or_else(|| missing("q"))?;
    let name = kv.get(section, "name").unwrap_or("custom").to_string();
    Ok(SchemeSpec { name, f, h, mu, q })
}

/// Parses a scheme description; tables resolve against `base`.
pub fn parse_scheme(text: &str, base: &Path) -> Result<SchemeSpec> {
    let kv = KeyValueFile::parse(text)?;
    kv.unknown_keys("", &SCHEME_KEYS)?;
    scheme_from_section(&kv, "", base)
}

pub fn load_scheme(path: &Path) -> Result<SchemeSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_scheme(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Experiment-level settings that accompany a [`SimConfig`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSettings {
    pub eps: Vec<f64>,
    pub replicates: usize,
    pub out_dir: Option<PathBuf>,
}

pub fn parse_lambda_mode(text: &str) -> Result<LambdaMode> {
    match text {
        "quadrature" => Ok(LambdaMode::Quadrature),
        "closed_form" => Ok(LambdaMode::ClosedForm),
        "zero" => Ok(LambdaMode::Zero),
        other => parse_real(other)
            .filter(|v| v.is_finite())
            .map(LambdaMode::Explicit)
            .ok_or_else(|| Error::Parse { line: 0, msg: format!("Λ mode must be quadrature, closed_form, zero or a number, got `{other}`") }),
    }
}

pub fn parse_real_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_real(s).ok_or_else(|| Error::Parse { line: 0, msg: format!("bad number `{s}`") }))
        .collect()
}

/// Parses a run configuration. Missing keys take the values of
/// [`SimConfig::burgers_default`].
pub fn parse_run_config(text: &str, base: &Path) -> Result<(SimConfig, ExperimentSettings)> {
    let kv = KeyValueFile::parse(text)?;
    for s in kv.sections.keys() {
        if !["scheme", "model", "time", "experiment", "output"].contains(&s.as_str()) {
            return Err(Error::Parse { line: 0, msg: format!("unknown section [{s}]") });
        }
    }
    kv.unknown_keys("scheme", &["file", "name", "f", "h", "mu", "q"])?;
    kv.unknown_keys("model", &["nu", "n", "F", "G", "kmax", "pad", "lambda", "v0", "tol", "variant"])?;
    kv.unknown_keys("time", &["dt", "T", "records", "noise_refine"])?;
    kv.unknown_keys("experiment", &["eps", "replicates", "seed"])?;
    kv.unknown_keys("output", &["dir", "alpha"])?;

    let mut cfg = SimConfig::burgers_default();
    if kv.has_section("scheme") {
        let spec = match kv.get("scheme", "file") {
            Some(p) => load_scheme(&base.join(p))?,
            None => scheme_from_section(&kv, "scheme", base)?,
        };
        cfg.scheme = spec.build()?;
    }
    if let Some(v) = kv.real("model", "nu")? {
        cfg.nu = v;
    }
    if let Some(v) = kv.integer("model", "n")? {
        cfg.n = v;
    }
    let poly = |key: &str, cfg_n: usize| -> Result<Option<PolynomialMap>> {
        match kv.get("model", key) {
            None => Ok(None),
            Some(t) => {
                let parts: Vec<&str> = t.split(';').map(str::trim).collect();
                let map = PolynomialMap::parse(&parts).map_err(|e| match e {
                    Error::Parse { msg, .. } => Error::Parse { line: kv.line("model", key), msg },
                    other => other,
                })?;
                if map.n() != cfg_n {
                    return Err(Error::Dimension { expected: cfg_n, got: map.n() });
                }
                Ok(Some(map))
            }
        }
    };
    cfg.f = poly("F", cfg.n)?.unwrap_or_else(|| PolynomialMap::zero(cfg.n));
    cfg.g = match poly("G", cfg.n)? {
        Some(g) => g,
        None if cfg.n == 1 => PolynomialMap::burgers(),
        None => PolynomialMap::zero(cfg.n),
    };
    if let Some(v) = kv.integer("model", "kmax")? {
        cfg.kmax = v;
    }
    if let Some(v) = kv.real("model", "pad")? {
        cfg.pad = v;
    }
    if let Some(v) = kv.get("model", "lambda") {
        cfg.lambda_mode = parse_lambda_mode(v)?;
    }
    if let Some(v) = kv.get("model", "v0") {
        cfg.v0 = InitialData::parse(v)?;
    } else if cfg.n != 1 {
        cfg.v0 = InitialData::default();
    }
    if let Some(v) = kv.real("model", "tol")? {
        cfg.tol = v;
    }
    if let Some(v) = kv.get("model", "variant") {
        cfg.variant = match v {
            "approximate" => Variant::Approximate,
            "limit_corrected" => Variant::LimitCorrected,
            "limit_uncorrected" => Variant::LimitUncorrected,
            other => return Err(Error::Parse { line: kv.line("model", "variant"), msg: format!("unknown variant `{other}`") }),
        };
    }
    if let Some(v) = kv.real("time", "dt")? {
        cfg.dt = v;
    }
    if let Some(v) = kv.real("time", "T")? {
        cfg.t_end = v;
    }
    if let Some(v) = kv.integer("time", "records")? {
        cfg.records = v;
    }
    if let Some(v) = kv.integer::<u32>("time", "noise_refine")? {
        cfg.noise_refine = v;
    }
    if let Some(v) = kv.integer("experiment", "seed")? {
        cfg.seed = v;
    }
    cfg.alpha = kv.real("output", "alpha")?.unwrap_or(DEFAULT_ALPHA);

    let eps = match kv.get("experiment", "eps") {
        Some(t) => parse_real_list(t)?,
        None => vec![cfg.eps],
    };
    if let Some(&first) = eps.first() {
        cfg.eps = first;
    }
    let settings = ExperimentSettings {
        eps,
        replicates: kv.integer("experiment", "replicates")?.unwrap_or(1),
        out_dir: kv.get("output", "dir").map(PathBuf::from),
    };
    cfg.validate()?;
    Ok((cfg, settings))
}

pub fn load_run_config(path: &Path) -> Result<(SimConfig, ExperimentSettings)> {
    let text = std::fs::read_to_string(path)?;
    parse_run_config(&text, path.parent().unwrap_or(Path::new(".")))
}
