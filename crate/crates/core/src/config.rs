//! Experiment configuration and its flat, sectioned key–value text format.
//!
//! ```text
//! # comment
//! [experiment]
//! kind = benchmark
//! master_seed = 7
//!
//! [benchmark]
//! doe_sizes = [20, 200]
//! lengthscale = 0.25
//! ```
//!
//! Values are integers, floats, `true`/`false`, bare words, `"quoted
//! strings"` or `[comma, separated, lists]` of those. Sections map to
//! structs, keys to fields; unknown sections or keys are errors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use crate::bench::analog::AnalogConfig;
use crate::bounds::ConstantSource;
use crate::error::{Error, Result};
use crate::kernels::KernelFamily;
use crate::report::fmt17;
use crate::uq::Method;

fn perr(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// A parsed document: section → key → value, plus the line of every key.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub sections: Map<String, Value>,
    pub lines: BTreeMap<String, usize>,
}

fn is_bare(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '/'))
}

fn parse_scalar(line: usize, tok: &str) -> Result<Value> {
    let tok = tok.trim();
    if tok.is_empty() {
        return Err(perr(line, "missing value"));
    }
    if let Some(rest) = tok.strip_prefix('"') {
        let inner = rest
            .strip_suffix('"')
            .ok_or_else(|| perr(line, "unterminated string"))?;
        return unescape(line, inner).map(Value::String);
    }
    match tok {
        "true" => return Ok(Value::Bool(true)),
        "false" => return Ok(Value::Bool(false)),
        _ => {}
    }
    let numeric_start = tok.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+' || c == '.');
    if numeric_start {
        if !tok.contains(['.', 'e', 'E']) {
            if let Ok(v) = tok.parse::<u64>() {
                return Ok(Value::Number(v.into()));
            }
            if let Ok(v) = tok.parse::<i64>() {
                return Ok(Value::Number(v.into()));
            }
        }
        if let Ok(v) = tok.parse::<f64>() {
            return Number::from_f64(v)
                .map(Value::Number)
                .ok_or_else(|| perr(line, format!("'{tok}' is not a finite number")));
        }
    }
    if is_bare(tok) {
        return Ok(Value::String(tok.to_string()));
    }
    Err(perr(line, format!("cannot parse value '{tok}' (quote strings with spaces or symbols)")))
}

fn unescape(line: usize, s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some('"') => out.push('"'),
                Some('\\') => out.push('\\'),
                Some('n') => out.push('\n'),
                other => return Err(perr(line, format!("bad escape '\\{}'", other.map_or(String::new(), String::from)))),
            },
            '"' => return Err(perr(line, "unescaped quote inside string")),
            c => out.push(c),
        }
    }
    Ok(out)
}

fn split_list(line: usize, inner: &str) -> Result<Vec<String>> {
    let mut items = Vec::new();
    let mut cur = String::new();
    let mut in_str = false;
    let mut esc = false;
    for c in inner.chars() {
        if in_str {
            cur.push(c);
            if esc {
                esc = false;
            } else if c == '\\' {
                esc = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        match c {
            '"' => {
                in_str = true;
                cur.push(c);
            }
            ',' => items.push(std::mem::take(&mut cur)),
            '[' | ']' => return Err(perr(line, "nested lists are not supported")),
            c => cur.push(c),
        }
    }
    if in_str {
        return Err(perr(line, "unterminated string in list"));
    }
    if !cur.trim().is_empty() || !items.is_empty() {
        items.push(cur);
    }
    Ok(items)
}

fn parse_value(line: usize, raw: &str) -> Result<Value> {
    let raw = raw.trim();
    if let Some(rest) = raw.strip_prefix('[') {
        let inner = rest
            .strip_suffix(']')
            .ok_or_else(|| perr(line, "list is missing its closing ']'"))?;
        let items = split_list(line, inner)?;
        return items
            .iter()
            .map(|t| parse_scalar(line, t))
            .collect::<Result<Vec<_>>>()
            .map(Value::Array);
    }
    parse_scalar(line, raw)
}

/// Strip a trailing `# comment` that is not inside a string.
fn strip_comment(l: &str) -> &str {
    let mut in_str = false;
    let mut esc = false;
    for (i, c) in l.char_indices() {
        if in_str {
            if esc {
                esc = false;
            } else if c == '\\' {
                esc = true;
            } else if c == '"' {
                in_str = false;
            }
        } else if c == '"' {
            in_str = true;
        } else if c == '#' {
            return &l[..i];
        }
    }
    l
}

pub fn parse_document(text: &str) -> Result<Document> {
    let mut sections = Map::new();
    let mut lines = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let l = strip_comment(raw).trim();
        if l.is_empty() {
            continue;
        }
        if let Some(rest) = l.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| perr(n, "section header is missing its closing ']'"))?
                .trim();
            if !is_bare(name) {
                return Err(perr(n, format!("invalid section name '{name}'")));
            }
            if sections.contains_key(name) {
                return Err(perr(n, format!("duplicate section [{name}]")));
            }
            sections.insert(name.to_string(), Value::Object(Map::new()));
            lines.insert(name.to_string(), n);
            current = Some(name.to_string());
            continue;
        }
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| perr(n, "expected 'key = value' or '[section]'"))?;
        let k = k.trim();
        if !is_bare(k) {
            return Err(perr(n, format!("invalid key '{k}'")));
        }
        let sec = current
            .as_ref()
            .ok_or_else(|| perr(n, format!("key '{k}' appears before any [section]")))?;
        let value = parse_value(n, v)?;
        let obj = sections[sec].as_object_mut().expect("sections are objects");
        if obj.contains_key(k) {
            return Err(perr(n, format!("duplicate key '{k}' in [{sec}]")));
        }
        obj.insert(k.to_string(), value);
        lines.insert(format!("{sec}.{k}"), n);
    }
    Ok(Document { sections, lines })
}

fn write_scalar(v: &Value) -> Result<String> {
    Ok(match v {
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                u.to_string()
            } else if let Some(i) = n.as_i64() {
                i.to_string()
            } else {
                fmt17(n.as_f64().expect("finite number"))
            }
        }
        Value::String(s) => {
            let reparsed = parse_scalar(0, s).ok();
            if is_bare(s) && reparsed == Some(Value::String(s.clone())) {
                s.clone()
            } else {
                format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n"))
            }
        }
        other => return Err(Error::Config(format!("value {other} cannot be written as a scalar"))),
    })
}

/// Inverse of `parse_document` for a two-level object; `null` fields are omitted.
pub fn write_document(root: &Value) -> Result<String> {
    let sections = root
        .as_object()
        .ok_or_else(|| Error::Config("document root must be an object".into()))?;
    let mut out = String::new();
    for (name, body) in sections {
        let obj = body
            .as_object()
            .ok_or_else(|| Error::Config(format!("section '{name}' must be an object")))?;
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&format!("[{name}]\n"));
        for (k, v) in obj {
            let text = match v {
                Value::Null => continue,
                Value::Array(items) => {
                    let parts = items.iter().map(write_scalar).collect::<Result<Vec<_>>>()?;
                    format!("[{}]", parts.join(", "))
                }
                v => write_scalar(v)?,
            };
            out.push_str(&format!("{k} = {text}\n"));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Benchmark,
    Uq,
    CycleUq,
    Sobol,
    Bounds,
    Slopes,
    Velocity,
    Modal,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Benchmark,
        ExperimentKind::Uq,
        ExperimentKind::CycleUq,
        ExperimentKind::Sobol,
        ExperimentKind::Bounds,
        ExperimentKind::Slopes,
        ExperimentKind::Velocity,
        ExperimentKind::Modal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Benchmark => "benchmark",
            ExperimentKind::Uq => "uq",
            ExperimentKind::CycleUq => "cycle-uq",
            ExperimentKind::Sobol => "sobol",
            ExperimentKind::Bounds => "bounds",
            ExperimentKind::Slopes => "slopes",
            ExperimentKind::Velocity => "velocity",
            ExperimentKind::Modal => "modal",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            ExperimentKind::Benchmark => "analytical benchmark: fixed point, contraction, GP fits, M2/M3 ensembles and tests",
            ExperimentKind::Uq => "Monte Carlo ensembles on the benchmark for each DOE size and method",
            ExperimentKind::CycleUq => "Method-3 cycle UQ on the synthetic multi-step analog",
            ExperimentKind::Sobol => "Saltelli plan and Sobol indices (analog, additive or Ishigami model)",
            ExperimentKind::Bounds => "variance and deviation bounds with empirical coverage on the benchmark",
            ExperimentKind::Slopes => "posterior-variance decay slope over a design ladder",
            ExperimentKind::Velocity => "parabolic velocity-profile uncertainty propagation",
            ExperimentKind::Modal => "modal projection of noisy deformation measurements",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

fn default_output_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub doe_sizes: Vec<usize>,
    pub doe_seed: u64,
    pub family: KernelFamily,
    pub lengthscale: f64,
    pub variance: f64,
    pub nugget: f64,
    pub u0: f64,
    pub tolerance: f64,
    pub max_iter: usize,
    pub contraction_grid: usize,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        let s = crate::bench::BenchmarkSettings::default();
        Self {
            doe_sizes: vec![20, 200],
            doe_seed: s.doe_seed,
            family: s.family,
            lengthscale: s.lengthscale,
            variance: s.variance,
            nugget: s.nugget,
            u0: s.u0,
            tolerance: s.tolerance,
            max_iter: s.max_iter,
            contraction_grid: 1001,
        }
    }
}

impl BenchmarkSection {
    pub fn settings(&self, doe_size: usize) -> crate::bench::BenchmarkSettings {
        crate::bench::BenchmarkSettings {
            doe_size,
            doe_seed: self.doe_seed,
            family: self.family,
            lengthscale: self.lengthscale,
            variance: self.variance,
            nugget: self.nugget,
            u0: self.u0,
            tolerance: self.tolerance,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UqSection {
    pub replications: usize,
    pub methods: Vec<Method>,
    /// Extra seeded repetitions of the M2/M3 Welch comparison (0 disables).
    pub agreement_repeats: usize,
}

impl Default for UqSection {
    fn default() -> Self {
        Self {
            replications: 500,
            methods: vec![Method::TrajectoryConditioned, Method::MeanPathOffsets],
            agreement_repeats: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSection {
    pub beta: f64,
    pub l_h: f64,
    pub coverage_replications: usize,
    pub radius_scale: f64,
    pub constants: ConstantSource,
    /// Used when `constants = user_supplied`.
    pub constant: f64,
    pub h0: f64,
    pub probe_resolution: usize,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            beta: 0.05,
            l_h: 1.0,
            coverage_replications: 500,
            radius_scale: 1.0,
            constants: ConstantSource::CalibratedOnCoarsest,
            constant: 1.0,
            h0: 1.0,
            probe_resolution: 1001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlopesSection {
    pub family: KernelFamily,
    pub lengthscale: f64,
    pub variance: f64,
    pub sizes: Vec<usize>,
    pub nugget: f64,
    pub probe_resolution: usize,
}

impl Default for SlopesSection {
    fn default() -> Self {
        Self {
            family: KernelFamily::Matern52,
            lengthscale: 0.25,
            variance: 1.0,
            sizes: vec![10, 20, 40, 80],
            nugget: 1e-12,
            probe_resolution: 1001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SobolModel {
    Analog,
    Additive,
    Ishigami,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SobolSection {
    pub model: SobolModel,
    pub n_s: usize,
    /// Bootstrap resamples for standard errors (0 disables).
    pub bootstrap: usize,
}

impl Default for SobolSection {
    fn default() -> Self {
        Self {
            model: SobolModel::Analog,
            n_s: 1000,
            bootstrap: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Inlet,
    Outlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VelocitySection {
    pub profile: ProfileKind,
    pub length: f64,
    pub samples: usize,
    pub points: usize,
}

impl Default for VelocitySection {
    fn default() -> Self {
        Self {
            profile: ProfileKind::Inlet,
            length: 1.0,
            samples: 20_000,
            points: 21,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModalSection {
    pub draws: usize,
    pub sigma: f64,
    pub nodes: usize,
    pub modes: usize,
    pub field_points: usize,
}

impl Default for ModalSection {
    fn default() -> Self {
        Self {
            draws: 100_000,
            sigma: crate::bench::modal::MEASUREMENT_SIGMA,
            nodes: crate::bench::modal::DEFAULT_NODES,
            modes: crate::bench::modal::DEFAULT_MODES,
            field_points: 41,
        }
    }
}

/// A complete experiment description; every section but `[experiment]` is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub benchmark: BenchmarkSection,
    #[serde(default)]
    pub uq: UqSection,
    #[serde(default)]
    pub bounds: BoundsSection,
    #[serde(default)]
    pub slopes: SlopesSection,
    #[serde(default)]
    pub sobol: SobolSection,
    #[serde(default)]
    pub analog: AnalogConfig,
    #[serde(default)]
    pub velocity: VelocitySection,
    #[serde(default)]
    pub modal: ModalSection,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, master_seed: u64) -> Self {
        Self {
            experiment: ExperimentSection {
                kind,
                master_seed,
                output_dir: default_output_dir(),
            },
            benchmark: Default::default(),
            uq: Default::default(),
            bounds: Default::default(),
            slopes: Default::default(),
            sobol: Default::default(),
            analog: Default::default(),
            velocity: Default::default(),
            modal: Default::default(),
        }
    }

    /// Range and consistency checks; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: &str| Err(Error::Config(format!("{name}: {msg}")));
        let b = &self.benchmark;
        if b.doe_sizes.is_empty() || b.doe_sizes.iter().any(|&n| n < 3) {
            return field("benchmark.doe_sizes", "needs at least one size, each >= 3");
        }
        for (name, v) in [
            ("benchmark.lengthscale", b.lengthscale),
            ("benchmark.variance", b.variance),
            ("benchmark.tolerance", b.tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return field(name, "must be finite and > 0");
            }
        }
        if !(b.nugget >= 0.0) {
            return field("benchmark.nugget", "must be >= 0");
        }
        if !(0.0..=1.0).contains(&b.u0) {
            return field("benchmark.u0", "must lie in [0, 1]");
        }
        if b.max_iter == 0 {
            return field("benchmark.max_iter", "must be >= 1");
        }
        if b.contraction_grid < 2 {
            return field("benchmark.contraction_grid", "must be >= 2");
        }
        if self.uq.replications < 2 {
            return field("uq.replications", "must be >= 2");
        }
        if self.uq.methods.is_empty() {
            return field("uq.methods", "needs at least one method");
        }
        let bd = &self.bounds;
        if !(bd.beta > 0.0 && bd.beta < 1.0) {
            return field("bounds.beta", "must lie in (0, 1)");
        }
        if !(bd.l_h >= 0.0 && bd.l_h.is_finite()) {
            return field("bounds.l_h", "must be finite and >= 0");
        }
        if bd.coverage_replications < 1 {
            return field("bounds.coverage_replications", "must be >= 1");
        }
        if !(bd.radius_scale > 0.0 && bd.radius_scale.is_finite()) {
            return field("bounds.radius_scale", "must be finite and > 0");
        }
        if !(bd.constant >= 0.0 && bd.constant.is_finite()) {
            return field("bounds.constant", "must be finite and >= 0");
        }
        if !(bd.h0 > 0.0 && bd.h0.is_finite()) {
            return field("bounds.h0", "must be finite and > 0");
        }
        if bd.probe_resolution < 2 {
            return field("bounds.probe_resolution", "must be >= 2");
        }
        let s = &self.slopes;
        if s.sizes.iter().any(|&n| n == 0) {
            return field("slopes.sizes", "sizes must be >= 1");
        }
        if !(s.lengthscale > 0.0 && s.lengthscale.is_finite()) {
            return field("slopes.lengthscale", "must be finite and > 0");
        }
        if !(s.variance > 0.0 && s.variance.is_finite()) {
            return field("slopes.variance", "must be finite and > 0");
        }
        if !(s.nugget >= 0.0) {
            return field("slopes.nugget", "must be >= 0");
        }
        if s.probe_resolution < 2 {
            return field("slopes.probe_resolution", "must be >= 2");
        }
        if self.sobol.n_s < 2 {
            return field("sobol.n_s", "must be >= 2");
        }
        self.analog.validate()?;
        let v = &self.velocity;
        if v.samples < 2 {
            return field("velocity.samples", "must be >= 2");
        }
        if v.points < 2 {
            return field("velocity.points", "must be >= 2");
        }
        if !(v.length > 0.0 && v.length.is_finite()) {
            return field("velocity.length", "must be finite and > 0");
        }
        let m = &self.modal;
        if m.draws < 2 {
            return field("modal.draws", "must be >= 2");
        }
        if !(m.sigma > 0.0 && m.sigma.is_finite()) {
            return field("modal.sigma", "must be finite and > 0");
        }
        if m.modes == 0 || m.nodes < m.modes {
            return field("modal.modes", "need 1 <= modes <= nodes");
        }
        if m.field_points < 2 {
            return field("modal.field_points", "must be >= 2");
        }
        Ok(())
    }
}

/// Parse a config; syntax errors carry line numbers, type and missing-field
/// errors name the field (and its line when it is present).
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let doc = parse_document(text)?;
    let value = Value::Object(doc.sections);
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        match doc.lines.get(&path) {
            Some(&line) => perr(line, format!("field '{path}': {inner}")),
            None if path == "." => Error::Config(inner),
            None => Error::Config(format!("field '{path}': {inner}")),
        }
    })
}

/// Fully resolved config text; `parse_config(&write_config(c)) == c`.
pub fn write_config(cfg: &ExperimentConfig) -> Result<String> {
    let v = serde_json::to_value(cfg).map_err(|e| Error::Config(e.to_string()))?;
    write_document(&v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = parse_config("[experiment]\nkind = benchmark\nmaster_seed = 3\n").unwrap();
        assert_eq!(c, ExperimentConfig::new(ExperimentKind::Benchmark, 3));
        c.validate().unwrap();
    }

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::new(ExperimentKind::CycleUq, 11);
        c.benchmark.lengthscale = 0.1 + 0.2;
        c.experiment.output_dir = "out dir/#1".into();
        c.analog.flow_box = (4.25, 5.75);
        let text = write_config(&c).unwrap();
        assert_eq!(parse_config(&text).unwrap(), c);
    }

    #[test]
    fn missing_field_is_named() {
        let e = parse_config("[experiment]\nkind = uq\n").unwrap_err();
        assert!(e.to_string().contains("master_seed"), "{e}");
        let e = parse_config("[benchmark]\nu0 = 0.5\n").unwrap_err();
        assert!(e.to_string().contains("experiment"), "{e}");
    }

    #[test]
    fn errors_carry_lines() {
        let e = parse_config("[experiment]\nkind = uq\nmaster_seed = 1\n[uq]\nreplications = many\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 5, .. }), "{e}");
        let e = parse_config("[experiment]\nkind uq\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        let e = parse_config("[experiment]\nkind = uq\nmaster_seed = 1\nbogus = 2\n").unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = parse_config("[experiment]\nkind = uq\nkind = uq\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn validation_names_field() {
        let mut c = ExperimentConfig::new(ExperimentKind::Uq, 0);
        c.uq.replications = 1;
        assert!(c.validate().unwrap_err().to_string().contains("uq.replications"));
    }

    #[test]
    fn values_and_comments() {
        let d = parse_document("[a]\nx = [1, -2, 3.5, \"a,b\", w] # c\ny = \"q#\\\"\"\n").unwrap();
        let a = &d.sections["a"];
        assert_eq!(a["x"], serde_json::json!([1, -2, 3.5, "a,b", "w"]));
        assert_eq!(a["y"], serde_json::json!("q#\""));
        assert!(parse_document("x = 1").is_err());
        assert!(parse_document("[a]\nx = 1e999").is_err());
        assert!(parse_document("[a]\nx = [[1]]").is_err());
    }
}
