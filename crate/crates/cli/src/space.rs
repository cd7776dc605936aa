//! Search-space files.
//!
//! ```toml
//! [objective]
//! command = "python3 train.py"
//! direction = "minimize"   # or "maximize"; optional
//! timeout = 600            # seconds; optional
//!
//! [[param]]
//! name = "lr"
//! kind = "log_continuous"
//! lower = 1e-5
//! upper = 0.1
//!
//! [[param]]
//! name = "optimizer"
//! kind = "categorical"
//! choices = ["sgd", "adam"]
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use boss_core::{ConfigSpace, ParamSpec};
use serde::Deserialize;
use toml::{Spanned, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Minimize,
    Maximize,
}

impl Direction {
    /// Converts an objective value to a loss.
    pub fn to_loss(self, value: f64) -> f64 {
        match self {
            Direction::Minimize => value,
            Direction::Maximize => -value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSpec {
    pub command: String,
    pub direction: Direction,
    pub timeout: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceFile {
    pub space: ConfigSpace,
    pub objective: Option<ObjectiveSpec>,
}

/// A problem in a space file, located by 1-based line.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for SpaceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for SpaceError {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default)]
    param: Vec<Spanned<RawParam>>,
    objective: Option<Spanned<RawObjective>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParam {
    name: Spanned<String>,
    kind: Spanned<String>,
    lower: Option<Spanned<Value>>,
    upper: Option<Spanned<Value>>,
    choices: Option<Spanned<Vec<String>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObjective {
    command: String,
    #[serde(default)]
    direction: Direction,
    timeout: Option<Spanned<f64>>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

pub fn parse_space_file(text: &str) -> Result<SpaceFile, SpaceError> {
    let err = |offset: usize, message: String| SpaceError { line: line_of(text, offset), message };
    let raw: RawFile = toml::from_str(text)
        .map_err(|e| err(e.span().map_or(0, |s| s.start), e.message().trim().to_string()))?;

    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut params = Vec::with_capacity(raw.param.len());
    for p in &raw.param {
        let p = p.get_ref();
        let name = p.name.get_ref().clone();
        let name_at = p.name.span().start;
        if let Some(&first) = seen.get(&name) {
            return Err(err(name_at, format!("duplicate parameter name `{name}` (first defined on line {first})")));
        }
        seen.insert(name.clone(), line_of(text, name_at));

        let spec = param_spec(p).map_err(|(at, msg)| err(at, format!("parameter `{name}`: {msg}")))?;
        // Validate each parameter alone so errors point at its own line.
        ConfigSpace::new(vec![spec.clone()]).map_err(|e| err(p.kind.span().start, e.to_string()))?;
        params.push(spec);
    }
    let space = ConfigSpace::new(params).map_err(|e| err(0, e.to_string()))?;

    let objective = match raw.objective {
        None => None,
        Some(o) => {
            let at = o.span().start;
            let o = o.into_inner();
            if o.command.trim().is_empty() {
                return Err(err(at, "objective command is empty".into()));
            }
            let timeout = match o.timeout {
                None => None,
                Some(t) => {
                    let secs = *t.get_ref();
                    if !(secs > 0.0 && secs.is_finite()) {
                        return Err(err(t.span().start, format!("timeout must be a positive number of seconds, got {secs}")));
                    }
                    Some(Duration::from_secs_f64(secs))
                }
            };
            Some(ObjectiveSpec { command: o.command, direction: o.direction, timeout })
        }
    };
    Ok(SpaceFile { space, objective })
}

type Located<T> = Result<T, (usize, String)>;

fn real(v: &Spanned<Value>, field: &str) -> Located<f64> {
    match v.get_ref() {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        other => Err((v.span().start, format!("`{field}` must be a number, got {}", other.type_str()))),
    }
}

fn int(v: &Spanned<Value>, field: &str) -> Located<i64> {
    match v.get_ref() {
        Value::Integer(i) => Ok(*i),
        other => Err((v.span().start, format!("`{field}` must be an integer, got {}", other.type_str()))),
    }
}

fn param_spec(p: &RawParam) -> Located<ParamSpec> {
    let name = p.name.get_ref().clone();
    let kind = p.kind.get_ref().as_str();
    let kind_at = p.kind.span().start;
    let bounds = || match (&p.lower, &p.upper) {
        (Some(lo), Some(hi)) => Ok((lo, hi)),
        _ => Err((kind_at, format!("kind `{kind}` needs `lower` and `upper`"))),
    };
    let no_choices = || match &p.choices {
        Some(c) => Err((c.span().start, format!("kind `{kind}` does not take `choices`"))),
        None => Ok(()),
    };
    match kind {
        "continuous" | "log_continuous" => {
            no_choices()?;
            let (lo, hi) = bounds()?;
            let (lo, hi) = (real(lo, "lower")?, real(hi, "upper")?);
            Ok(if kind == "continuous" {
                ParamSpec::continuous(name, lo, hi)
            } else {
                ParamSpec::log_continuous(name, lo, hi)
            })
        }
        "integer" => {
            no_choices()?;
            let (lo, hi) = bounds()?;
            Ok(ParamSpec::integer(name, int(lo, "lower")?, int(hi, "upper")?))
        }
        "categorical" => {
            if let Some(b) = p.lower.as_ref().or(p.upper.as_ref()) {
                return Err((b.span().start, "kind `categorical` takes `choices`, not bounds".into()));
            }
            let choices = p.choices.as_ref().ok_or((kind_at, "kind `categorical` needs `choices`".to_string()))?;
            Ok(ParamSpec::categorical(name, choices.get_ref().iter().cloned()))
        }
        other => Err((
            kind_at,
            format!("unknown kind `{other}` (expected continuous, log_continuous, integer or categorical)"),
        )),
    }
}
