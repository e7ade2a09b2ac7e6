//! Run reports: a nested JSON document with stable key order, or flat CSV
//! rows of `(metric, value, tolerance)`. Floats are written with 17
//! significant digits so reports round-trip exactly.

use std::collections::BTreeMap;
use std::io;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// A reported number and the tolerance it was validated under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    #[serde(serialize_with = "ser_extended", deserialize_with = "de_extended")]
    pub value: f64,
    #[serde(serialize_with = "ser_extended", deserialize_with = "de_extended")]
    pub tolerance: f64,
}

impl Metric {
    pub fn new(value: f64, tolerance: f64) -> Self {
        Self { value, tolerance }
    }

    /// Exact quantity (counts, flags, configuration echoes).
    pub fn exact(value: f64) -> Self {
        Self::new(value, 0.0)
    }

    /// Bit-level equality, treating every NaN as equal.
    fn same(&self, other: &Self) -> bool {
        let eq = |a: f64, b: f64| a == b || (a.is_nan() && b.is_nan());
        eq(self.value, other.value) && eq(self.tolerance, other.tolerance)
    }
}

fn ser_extended<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn de_extended<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    struct Extended;
    impl Visitor<'_> for Extended {
        type Value = f64;
        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
        }
        fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<f64, E> {
            Ok(v)
        }
        fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<f64, E> {
            Ok(v as f64)
        }
        fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<f64, E> {
            Ok(v as f64)
        }
        fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::custom(format!("unexpected string {other:?}"))),
            }
        }
    }
    d.deserialize_any(Extended)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub passed: bool,
    pub exit_code: i32,
    /// Echo of the configuration that produced the report.
    pub config: serde_json::Value,
    /// Named groups of metrics, e.g. `growth`, `certificate`, `constant`.
    pub sections: BTreeMap<String, BTreeMap<String, Metric>>,
    pub checks: Vec<Check>,
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
    /// Plot data and exported instances, keyed by name.
    #[serde(default)]
    pub data: BTreeMap<String, serde_json::Value>,
}

impl PartialEq for RunReport {
    fn eq(&self, other: &Self) -> bool {
        let sections_eq = self.sections.len() == other.sections.len()
            && self.sections.iter().zip(&other.sections).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.len() == b.len()
                    && a.iter().zip(b).all(|((na, ma), (nb, mb))| na == nb && ma.same(mb))
            });
        self.tool == other.tool
            && self.version == other.version
            && self.command == other.command
            && self.seed == other.seed
            && self.passed == other.passed
            && self.exit_code == other.exit_code
            && self.config == other.config
            && sections_eq
            && self.checks == other.checks
            && self.violations == other.violations
            && self.warnings == other.warnings
            && self.data == other.data
    }
}

impl RunReport {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            passed: true,
            exit_code: 0,
            config: serde_json::Value::Null,
            ..Self::default()
        }
    }

    pub fn metric(&mut self, section: &str, name: &str, metric: Metric) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(name.to_string(), metric);
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.passed &= passed;
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    /// Number of scalar metrics, i.e. CSV data rows.
    pub fn metric_count(&self) -> usize {
        self.sections.values().map(BTreeMap::len).sum()
    }
}

/// JSON formatter writing every finite float as `{:.16e}`.
struct FixedDigits(serde_json::ser::PrettyFormatter<'static>);

impl serde_json::ser::Formatter for FixedDigits {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }
    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
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

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown format {other:?} (json|csv)")),
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_number(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn emit_report(report: &RunReport, format: Format) -> Result<Vec<u8>> {
    match format {
        Format::Json => {
            let mut out = Vec::new();
            let fmt = FixedDigits(serde_json::ser::PrettyFormatter::with_indent(b"  "));
            let mut ser = serde_json::Serializer::with_formatter(&mut out, fmt);
            report.serialize(&mut ser)?;
            out.push(b'\n');
            Ok(out)
        }
        Format::Csv => {
            let mut out = String::from("metric,value,tolerance\n");
            for (section, metrics) in &report.sections {
                for (name, m) in metrics {
                    out.push_str(&format!(
                        "{},{},{}\n",
                        csv_field(&format!("{section}.{name}")),
                        csv_number(m.value),
                        csv_number(m.tolerance)
                    ));
                }
            }
            Ok(out.into_bytes())
        }
    }
}

pub fn parse_report(bytes: &[u8]) -> Result<RunReport> {
    Ok(serde_json::from_slice(bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunReport {
        let mut r = RunReport::new("selftest", 42);
        r.config = serde_json::json!({"kind": "graph", "size": 5, "decay": 0.1});
        r.metric("constant", "exact_p2", Metric::new(0.5, 1e-9));
        r.metric("constant", "third", Metric::new(1.0 / 3.0, 1e-12));
        r.metric("constant", "unbounded", Metric::exact(f64::INFINITY));
        r.metric("growth", "lambda0", Metric::new(std::f64::consts::PI * 1e-300, 0.0));
        r.check("rows", true, "max deviation 1e-16");
        r.violations.push("none, really".into());
        r.data.insert("witness".into(), serde_json::json!([0.25, -0.5]));
        r
    }

    #[test]
    fn json_round_trip() {
        let r = sample();
        let bytes = emit_report(&r, Format::Json).unwrap();
        assert_eq!(parse_report(&bytes).unwrap(), r);
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains("3.3333333333333331e-1"));
        assert!(text.contains("\"inf\""));
    }

    #[test]
    fn csv_rows_match_metrics() {
        let r = sample();
        let text = String::from_utf8(emit_report(&r, Format::Csv).unwrap()).unwrap();
        assert_eq!(text.lines().count(), r.metric_count() + 1);
        assert!(text.contains("constant.exact_p2,5.0000000000000000e-1,1.0000000000000001e-9"));
    }

    #[test]
    fn emission_is_deterministic() {
        let a = emit_report(&sample(), Format::Json).unwrap();
        let b = emit_report(&sample(), Format::Json).unwrap();
        assert_eq!(a, b);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn any_metric_round_trips(v in proptest::num::f64::ANY, t in proptest::num::f64::POSITIVE) {
                let mut r = RunReport::new("x", 1);
                r.metric("s", "m", Metric::new(v, t));
                let back = parse_report(&emit_report(&r, Format::Json).unwrap()).unwrap();
                prop_assert_eq!(back, r);
            }
        }
    }
}
