//! `key = value` experiment configuration with `#` comments.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("duplicate key {key:?} on lines {first} and {second}")]
    Duplicate { key: String, first: usize, second: usize },
    #[error("line {line}: {key} expects {expected}, got {value:?}")]
    Type { line: usize, key: String, expected: &'static str, value: String },
    #[error("missing {0}")]
    Missing(&'static str),
    #[error("{key}: {msg}")]
    Invalid { key: &'static str, msg: String },
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Int,
    Float,
    Bool,
    Str,
    FloatList,
    /// Float or the literal `auto`.
    OptFloat,
    /// Integer or the literal `auto`.
    OptInt,
}

impl Kind {
    fn expected(self) -> &'static str {
        match self {
            Kind::Int => "a nonnegative integer",
            Kind::Float => "a number",
            Kind::Bool => "true or false",
            Kind::Str => "a string",
            Kind::FloatList => "a comma-separated list of numbers",
            Kind::OptFloat => "a number or auto",
            Kind::OptInt => "a nonnegative integer or auto",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Int(u64),
    Float(f64),
    Bool(bool),
    Str(String),
    List(Vec<f64>),
    Auto,
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v:?}"),
            Value::Bool(v) => write!(f, "{v}"),
            Value::Str(v) => f.write_str(v),
            Value::List(v) => {
                let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
                f.write_str(&parts.join(","))
            }
            Value::Auto => f.write_str("auto"),
        }
    }
}

/// `(key, kind, default)`; a missing default marks a required key.
const KEYS: &[(&str, Kind, Option<&str>)] = &[
    ("allow_flagged", Kind::Bool, Some("false")),
    ("boundary.csv", Kind::Str, Some("")),
    ("boundary.kind", Kind::Str, Some("zero")),
    ("boundary.value", Kind::FloatList, Some("0")),
    ("domain.center", Kind::FloatList, Some("0.5,0.5")),
    ("domain.csv", Kind::Str, Some("")),
    ("domain.kind", Kind::Str, Some("cylinder")),
    ("domain.margin", Kind::Float, Some("0.1")),
    ("domain.r0", Kind::Float, Some("0.25")),
    ("domain.r1", Kind::Float, Some("0.4")),
    ("exact.center", Kind::FloatList, Some("0.5,0.5")),
    ("exact.kind", Kind::Str, Some("none")),
    ("exact.r0", Kind::Float, Some("0.35")),
    ("exact.t0", Kind::Float, Some("0.1")),
    ("field.components", Kind::Int, Some("1")),
    ("grid.cells", Kind::Int, Some("32")),
    ("grid.dim", Kind::Int, Some("2")),
    ("grid.hi", Kind::Float, Some("1")),
    ("grid.lo", Kind::Float, Some("0")),
    ("initial.csv", Kind::Str, Some("")),
    ("initial.kind", Kind::Str, Some("zero")),
    ("initial.value", Kind::FloatList, Some("0")),
    ("integrand.coefficient_csv", Kind::Str, Some("")),
    ("integrand.eps_reg", Kind::OptFloat, Some("auto")),
    ("integrand.g_csv", Kind::Str, Some("")),
    ("integrand.kind", Kind::Str, Some("p_dirichlet")),
    ("integrand.lambda", Kind::Float, Some("0")),
    ("integrand.nu", Kind::OptFloat, Some("auto")),
    ("integrand.p", Kind::Float, Some("2")),
    ("output.every_k", Kind::OptInt, Some("auto")),
    ("scheme.T", Kind::Float, Some("0.05")),
    ("scheme.ell", Kind::Int, None),
    ("scheme.q", Kind::Float, Some("1")),
    ("seed", Kind::Int, Some("0")),
    ("solver.max_iters", Kind::Int, Some("20000")),
    ("solver.tol_obj", Kind::Float, Some("1e-10")),
    ("solver.tol_step", Kind::Float, Some("1e-9")),
    ("verify.competitors", Kind::Int, Some("100")),
    ("verify.dissipation", Kind::Bool, Some("true")),
    ("verify.energy", Kind::Bool, Some("true")),
    ("verify.epsilon", Kind::Float, Some("0.25")),
    ("verify.h_list", Kind::FloatList, Some("4,8,16")),
    ("verify.ibp_k", Kind::Int, Some("1")),
    ("verify.initial", Kind::Bool, Some("true")),
    ("verify.k_sigma_cells", Kind::Float, Some("4")),
    ("verify.landes_h", Kind::OptFloat, Some("auto")),
    ("verify.lemma_samples", Kind::Int, Some("10000")),
    ("verify.max_relative_error", Kind::OptFloat, Some("auto")),
    ("verify.mollifier", Kind::Bool, Some("true")),
    ("verify.mollify_cells", Kind::Float, Some("2.5")),
    ("verify.parabolic", Kind::Bool, Some("true")),
    ("verify.self_check_samples", Kind::Int, Some("2000")),
    ("verify.sigma_cells", Kind::FloatList, Some("2,4")),
    ("verify.variational", Kind::Bool, Some("true")),
];

fn parse_value(kind: Kind, raw: &str) -> Option<Value> {
    let num = |s: &str| s.trim().parse::<f64>().ok().filter(|x| x.is_finite());
    match kind {
        Kind::Int => raw.parse().ok().map(Value::Int),
        Kind::Float => num(raw).map(Value::Float),
        Kind::Bool => raw.parse().ok().map(Value::Bool),
        Kind::Str => Some(Value::Str(raw.to_string())),
        Kind::FloatList => raw
            .split(',')
            .map(num)
            .collect::<Option<Vec<_>>>()
            .filter(|v| !v.is_empty())
            .map(Value::List),
        Kind::OptFloat if raw == "auto" => Some(Value::Auto),
        Kind::OptFloat => num(raw).map(Value::Float),
        Kind::OptInt if raw == "auto" => Some(Value::Auto),
        Kind::OptInt => raw.parse().ok().map(Value::Int),
    }
}

/// Parsed configuration: every known key with defaults filled.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    values: BTreeMap<&'static str, Value>,
    /// Directory that relative CSV paths resolve against.
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn parse_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut seen: BTreeMap<&'static str, (usize, Value)> = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(p) => &raw_line[..p],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                msg: "expected `key = value`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let &(name, kind, _) = KEYS.iter().find(|k| k.0 == key).ok_or_else(|| ConfigError::UnknownKey {
                line: line_no,
                key: key.to_string(),
            })?;
            if let Some((first, _)) = seen.get(name) {
                return Err(ConfigError::Duplicate {
                    key: name.to_string(),
                    first: *first,
                    second: line_no,
                });
            }
            let v = parse_value(kind, value).ok_or_else(|| ConfigError::Type {
                line: line_no,
                key: name.to_string(),
                expected: kind.expected(),
                value: value.to_string(),
            })?;
            seen.insert(name, (line_no, v));
        }
        let mut values = BTreeMap::new();
        for &(name, kind, default) in KEYS {
            let v = match seen.remove(name) {
                Some((_, v)) => v,
                None => {
                    let d = default.ok_or(ConfigError::Missing(name))?;
                    parse_value(kind, d).expect("default parses")
                }
            };
            values.insert(name, v);
        }
        let cfg = ExperimentConfig {
            values,
            base_dir: base_dir.to_path_buf(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse_str(&text, &base)
    }

    /// Overrides one key from its textual form, as if written in the file.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), ConfigError> {
        let &(name, kind, _) = KEYS.iter().find(|k| k.0 == key).ok_or_else(|| ConfigError::UnknownKey {
            line: 0,
            key: key.to_string(),
        })?;
        let v = parse_value(kind, raw).ok_or_else(|| ConfigError::Type {
            line: 0,
            key: name.to_string(),
            expected: kind.expected(),
            value: raw.to_string(),
        })?;
        self.values.insert(name, v);
        self.validate()
    }

    /// Sorted `key = value` lines of every key, defaults included.
    pub fn canonical_echo(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    fn get(&self, key: &'static str) -> &Value {
        self.values.get(key).expect("known key")
    }

    pub fn int(&self, key: &'static str) -> usize {
        match self.get(key) {
            Value::Int(v) => *v as usize,
            other => panic!("{key} is not an integer: {other:?}"),
        }
    }

    pub fn float(&self, key: &'static str) -> f64 {
        match self.get(key) {
            Value::Float(v) => *v,
            other => panic!("{key} is not a number: {other:?}"),
        }
    }

    pub fn boolean(&self, key: &'static str) -> bool {
        match self.get(key) {
            Value::Bool(v) => *v,
            other => panic!("{key} is not a boolean: {other:?}"),
        }
    }

    pub fn string(&self, key: &'static str) -> &str {
        match self.get(key) {
            Value::Str(v) => v,
            other => panic!("{key} is not a string: {other:?}"),
        }
    }

    pub fn list(&self, key: &'static str) -> &[f64] {
        match self.get(key) {
            Value::List(v) => v,
            other => panic!("{key} is not a list: {other:?}"),
        }
    }

    pub fn opt_float(&self, key: &'static str) -> Option<f64> {
        match self.get(key) {
            Value::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn opt_int(&self, key: &'static str) -> Option<usize> {
        match self.get(key) {
            Value::Int(v) => Some(*v as usize),
            _ => None,
        }
    }

    /// Resolves a path key against the config directory; empty means unset.
    pub fn path(&self, key: &'static str) -> Option<PathBuf> {
        let s = self.string(key);
        if s.is_empty() {
            None
        } else {
            Some(self.base_dir.join(s))
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key, msg: &str| Err(ConfigError::Invalid { key, msg: msg.into() });
        let one_of = |key: &'static str, options: &[&str]| {
            let v = self.string(key);
            if options.contains(&v) {
                Ok(())
            } else {
                Err(ConfigError::Invalid {
                    key,
                    msg: format!("{v:?} is not one of {}", options.join(", ")),
                })
            }
        };
        one_of("domain.kind", &["cylinder", "expanding_ball", "expanding_rectangle", "barenblatt_hull", "csv"])?;
        one_of("integrand.kind", &["p_dirichlet", "lower_order", "coefficient"])?;
        one_of("initial.kind", &["zero", "constant", "exact", "csv"])?;
        one_of("boundary.kind", &["zero", "constant", "csv"])?;
        one_of("exact.kind", &["none", "heat", "barenblatt_pme", "barenblatt_plaplace"])?;
        if self.int("scheme.ell") == 0 {
            return invalid("scheme.ell", "must be at least 1");
        }
        if !(self.float("scheme.T") > 0.0) {
            return invalid("scheme.T", "must be positive");
        }
        if !(self.float("scheme.q") > 0.0) {
            return invalid("scheme.q", "must be positive");
        }
        if !(self.float("integrand.p") > 1.0) {
            return invalid("integrand.p", "must exceed 1");
        }
        if !matches!(self.int("grid.dim"), 1 | 2) {
            return invalid("grid.dim", "must be 1 or 2");
        }
        if self.int("grid.cells") == 0 {
            return invalid("grid.cells", "must be at least 1");
        }
        if !(self.float("grid.hi") > self.float("grid.lo")) {
            return invalid("grid.hi", "must exceed grid.lo");
        }
        if self.int("field.components") == 0 {
            return invalid("field.components", "must be at least 1");
        }
        if self.opt_int("output.every_k") == Some(0) {
            return invalid("output.every_k", "must be at least 1");
        }
        for key in ["domain.center", "exact.center"] {
            if self.list(key).len() < self.int("grid.dim") {
                return invalid(key, "needs one coordinate per dimension");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::parse_str(text, Path::new("."))
    }

    #[test]
    fn empty_file_names_the_required_key() {
        let err = parse("").unwrap_err();
        assert_eq!(err.to_string(), "missing scheme.ell");
    }

    #[test]
    fn duplicate_key_names_both_lines() {
        let err = parse("scheme.ell = 4\n# c\nscheme.ell = 8\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::Duplicate {
                key: "scheme.ell".into(),
                first: 1,
                second: 3
            }
        );
        assert!(err.to_string().contains("lines 1 and 3"));
    }

    #[test]
    fn unknown_and_mistyped_keys_cite_lines() {
        let e = parse("scheme.ell = 4\nscheme.bogus = 1\n").unwrap_err();
        assert!(e.to_string().starts_with("line 2: unknown key"));
        let e = parse("\nscheme.ell = four\n").unwrap_err();
        assert!(e.to_string().starts_with("line 2: scheme.ell expects"));
        let e = parse("scheme.ell 4\n").unwrap_err();
        assert!(matches!(e, ConfigError::Syntax { line: 1, .. }));
    }

    #[test]
    fn comments_and_overrides() {
        let mut c = parse("scheme.ell = 4 # steps\nscheme.q = 0.5\n").unwrap();
        assert_eq!(c.int("scheme.ell"), 4);
        assert_eq!(c.float("scheme.q"), 0.5);
        assert_eq!(c.opt_int("output.every_k"), None);
        c.set("seed", "7").unwrap();
        assert_eq!(c.int("seed"), 7);
        assert!(c.set("domain.kind", "torus").is_err());
    }

    #[test]
    fn echo_reparses_to_the_same_config() {
        let c = parse("scheme.ell = 3\nverify.h_list = 2, 4\nintegrand.eps_reg = 1e-6\n").unwrap();
        let again = parse(&c.canonical_echo()).unwrap();
        assert_eq!(c, again);
    }
}
