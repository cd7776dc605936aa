//! JSON-lines trace files: a header object, then one trial record per line.

use std::fmt;
use std::io::{self, Write};

use boss_core::subsample::QnRule;
use boss_core::{Trace, TrialRecord};
use serde::{Deserialize, Serialize};

pub const SCHEMA: &str = "boss-trace/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: String,
    pub seed: u64,
    pub policy: String,
    pub params: RunParams,
    /// Present for synthetic bandit runs; lets `report` compute regret.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<InstanceInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub max_budget: f64,
    pub min_budget: f64,
    pub eta: f64,
    pub gamma: f64,
    pub beta: f64,
    pub qn_rule: QnRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceInfo {
    pub means: Vec<f64>,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFileError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for TraceFileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for TraceFileError {}

pub fn write_trace<W: Write>(mut out: W, header: &TraceHeader, trace: &Trace) -> io::Result<()> {
    writeln!(out, "{}", serde_json::to_string(header)?)?;
    for r in &trace.records {
        writeln!(out, "{}", serde_json::to_string(r)?)?;
    }
    out.flush()
}

pub fn read_trace(text: &str) -> Result<(TraceHeader, Trace), TraceFileError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (i, first) = lines.next().ok_or(TraceFileError { line: 1, message: "empty trace file".into() })?;
    let header: TraceHeader =
        serde_json::from_str(first).map_err(|e| TraceFileError { line: i + 1, message: format!("bad header: {e}") })?;
    if header.schema != SCHEMA {
        return Err(TraceFileError {
            line: i + 1,
            message: format!("unsupported schema `{}` (expected `{SCHEMA}`)", header.schema),
        });
    }
    let mut trace = Trace::new(header.seed);
    for (i, l) in lines {
        let r: TrialRecord = serde_json::from_str(l).map_err(|e| TraceFileError { line: i + 1, message: e.to_string() })?;
        trace.records.push(r);
    }
    Ok((header, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use boss_core::{ConfigId, Configuration, ParamValue};

    fn header() -> TraceHeader {
        TraceHeader {
            schema: SCHEMA.into(),
            seed: 7,
            policy: "ss".into(),
            params: RunParams {
                max_budget: 27.0,
                min_budget: 1.0,
                eta: 3.0,
                gamma: 0.25,
                beta: 1.0,
                qn_rule: QnRule::SqrtLog,
            },
            instance: Some(InstanceInfo { means: vec![0.0, 0.5], sigma: 1.0 }),
            run: Some(3),
        }
    }

    #[test]
    fn round_trip() {
        let mut trace = Trace::new(7);
        for (i, loss) in [0.1f64 / 3.0, f64::INFINITY, -1e-300, 0.30000000000000004].into_iter().enumerate() {
            trace.records.push(TrialRecord {
                seq: i as u64,
                policy: "ss".into(),
                bracket: if i % 2 == 0 { None } else { Some(2) },
                round: i as u32,
                config_id: ConfigId(i),
                config: Configuration::default()
                    .with("arm", ParamValue::Int(i as i64))
                    .with("lr", ParamValue::Real(1.0 / 7.0))
                    .with("opt", ParamValue::Choice("adam".into())),
                budget: 3f64.powi(i as i32),
                loss,
                failed: loss.is_infinite(),
                wall_time: 0.1 * i as f64,
            });
        }
        let mut buf = Vec::new();
        write_trace(&mut buf, &header(), &trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        let (h, back) = read_trace(&text).unwrap();
        assert_eq!(h, header());
        assert_eq!(back, trace);
        for (a, b) in back.records.iter().zip(&trace.records) {
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        }
    }

    #[test]
    fn bad_lines_are_located() {
        let mut buf = Vec::new();
        write_trace(&mut buf, &header(), &Trace::new(7)).unwrap();
        let text = String::from_utf8(buf).unwrap() + "\n{\"seq\": 0}\n";
        assert_eq!(read_trace(&text).unwrap_err().line, 3);
        assert_eq!(read_trace("").unwrap_err().line, 1);
        assert!(read_trace("{\"schema\": \"other\"}").is_err());
    }
}
