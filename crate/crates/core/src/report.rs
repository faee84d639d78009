//! JSON report writing with 17 significant digits, and report comparison.

use std::collections::BTreeMap;
use std::io;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;

use crate::error::{Error, Result};

/// A float with 17 significant digits; parses back to the same value.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Pretty JSON formatter that writes every float with 17 significant digits.
struct Fmt17<'a>(PrettyFormatter<'a>);

impl Formatter for Fmt17<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        w.write_all(fmt17(v).as_bytes())
    }
    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, v as f64)
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serialize to pretty JSON with 17-digit floats (non-finite floats become `null`).
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Fmt17(PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Io(format!("report serialization failed: {e}")))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

/// Tolerances for `compare`: a numeric pair matches when
/// `|a − b| ≤ abs + rel · max(|a|, |b|)`. `fields` overrides `abs` for any
/// path starting with the given prefix (longest prefix wins).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tolerances {
    pub abs: f64,
    pub rel: f64,
    pub fields: BTreeMap<String, f64>,
    /// Object keys skipped everywhere (e.g. timings).
    pub ignore: Vec<String>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            abs: 0.0,
            rel: 0.0,
            fields: BTreeMap::new(),
            ignore: vec!["timing".into(), "timestamp".into(), "wall_time_s".into()],
        }
    }
}

impl Tolerances {
    fn abs_for(&self, path: &str) -> f64 {
        self.fields
            .iter()
            .filter(|(p, _)| path.starts_with(p.as_str()))
            .max_by_key(|(p, _)| p.len())
            .map_or(self.abs, |(_, t)| *t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diff {
    pub path: String,
    pub a: Value,
    pub b: Value,
    /// `|a − b|` for numeric pairs, `None` for structural or text differences.
    pub abs_diff: Option<f64>,
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub kind: String,
    pub numbers_compared: usize,
    pub max_abs_diff: f64,
    /// Every differing leaf, whether or not it is within tolerance.
    pub diffs: Vec<Diff>,
    pub failures: usize,
}

impl Comparison {
    pub fn is_identical(&self) -> bool {
        self.diffs.is_empty()
    }

    pub fn passes(&self) -> bool {
        self.failures == 0
    }
}

fn walk(path: &str, a: &Value, b: &Value, tol: &Tolerances, out: &mut Comparison) {
    match (a, b) {
        (Value::Object(ma), Value::Object(mb)) => {
            let keys: std::collections::BTreeSet<&String> = ma.keys().chain(mb.keys()).collect();
            for k in keys {
                if tol.ignore.iter().any(|i| i == k) {
                    continue;
                }
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match (ma.get(k), mb.get(k)) {
                    (Some(x), Some(y)) => walk(&p, x, y, tol, out),
                    (x, y) => push(out, p, x.cloned().unwrap_or(Value::Null), y.cloned().unwrap_or(Value::Null), None, false),
                }
            }
        }
        (Value::Array(xa), Value::Array(xb)) => {
            if xa.len() != xb.len() {
                push(out, format!("{path}.len"), xa.len().into(), xb.len().into(), None, false);
                return;
            }
            for (i, (x, y)) in xa.iter().zip(xb).enumerate() {
                walk(&format!("{path}[{i}]"), x, y, tol, out);
            }
        }
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap_or(f64::NAN), y.as_f64().unwrap_or(f64::NAN));
            out.numbers_compared += 1;
            if x == y {
                return;
            }
            let d = (x - y).abs();
            out.max_abs_diff = out.max_abs_diff.max(d);
            let ok = d <= tol.abs_for(path) + tol.rel * x.abs().max(y.abs());
            push(out, path.to_string(), a.clone(), b.clone(), Some(d), ok);
        }
        (x, y) if x == y => {}
        (x, y) => push(out, path.to_string(), x.clone(), y.clone(), None, false),
    }
}

fn push(out: &mut Comparison, path: String, a: Value, b: Value, abs_diff: Option<f64>, ok: bool) {
    if !ok {
        out.failures += 1;
    }
    out.diffs.push(Diff {
        path,
        a,
        b,
        abs_diff,
        within_tolerance: ok,
    });
}

/// Field-wise comparison of two reports of the same `kind`.
pub fn compare(a: &Value, b: &Value, tol: &Tolerances) -> Result<Comparison> {
    let kind = |v: &Value| v.get("kind").and_then(Value::as_str).map(str::to_string);
    let (ka, kb) = (kind(a), kind(b));
    let Some(k) = ka.clone() else {
        return Err(Error::Config("first report has no 'kind'".into()));
    };
    if ka != kb {
        return Err(Error::Config(format!(
            "report kinds differ: {} vs {}",
            k,
            kb.unwrap_or_else(|| "<none>".into())
        )));
    }
    let mut out = Comparison {
        kind: k,
        numbers_compared: 0,
        max_abs_diff: 0.0,
        diffs: Vec::new(),
        failures: 0,
    };
    walk("", a, b, tol, &mut out);
    Ok(out)
}

/// Parse two report texts and compare them.
pub fn compare_text(a: &str, b: &str, tol: &Tolerances) -> Result<Comparison> {
    let pa: Value = serde_json::from_str(a).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("first report: {e}"),
    })?;
    let pb: Value = serde_json::from_str(b).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("second report: {e}"),
    })?;
    compare(&pa, &pb, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn floats_have_17_digits_and_round_trip() {
        let v = json!({"x": 0.1, "n": 3, "bad": f64::NAN, "list": [1e-300, -2.5]});
        let s = to_json(&v).unwrap();
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        assert!(s.contains("\"n\": 3"));
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["x"].as_f64().unwrap(), 0.1);
        assert_eq!(back["list"][0].as_f64().unwrap(), 1e-300);
        assert!(back["bad"].is_null());
    }

    #[test]
    fn compare_identical_and_tolerant() {
        let a = json!({"kind": "uq", "m": [1.0, 2.0], "timing": 5.0});
        let b = json!({"kind": "uq", "m": [1.0, 2.0 + 1e-9], "timing": 9.0});
        assert!(compare(&a, &a, &Tolerances::default()).unwrap().is_identical());
        let strict = compare(&a, &b, &Tolerances::default()).unwrap();
        assert_eq!(strict.failures, 1);
        assert_eq!(strict.diffs[0].path, "m[1]");
        let loose = Tolerances {
            fields: [("m".to_string(), 1e-6)].into(),
            ..Default::default()
        };
        let c = compare(&a, &b, &loose).unwrap();
        assert!(c.passes() && !c.is_identical());
    }

    #[test]
    fn compare_rejects_kind_mismatch() {
        let a = json!({"kind": "uq"});
        let b = json!({"kind": "sobol"});
        assert!(matches!(compare(&a, &b, &Tolerances::default()), Err(Error::Config(_))));
        let c = json!({"kind": "uq", "x": [1]});
        let d = json!({"kind": "uq", "x": [1, 2], "y": "s"});
        assert_eq!(compare(&c, &d, &Tolerances::default()).unwrap().failures, 2);
    }
}
