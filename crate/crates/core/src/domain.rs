//! Search spaces, configurations, per-arm observation histories and the
//! append-only trial trace shared by every policy.
//!
//! Losses are minimized everywhere. Observations taken at different budgets
//! are pooled into a single history per arm; budgets are kept alongside for
//! reporting but never weight the window means.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, EvalError, Result};

/// The value domain of one hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamKind {
    Continuous { lower: f64, upper: f64 },
    /// Sampled uniformly in log-space; `lower` must be positive.
    LogContinuous { lower: f64, upper: f64 },
    Integer { lower: i64, upper: i64 },
    Categorical { choices: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn continuous(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        ParamSpec { name: name.into(), kind: ParamKind::Continuous { lower, upper } }
    }

    pub fn log_continuous(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        ParamSpec { name: name.into(), kind: ParamKind::LogContinuous { lower, upper } }
    }

    pub fn integer(name: impl Into<String>, lower: i64, upper: i64) -> Self {
        ParamSpec { name: name.into(), kind: ParamKind::Integer { lower, upper } }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        choices: impl IntoIterator<Item = S>,
    ) -> Self {
        ParamSpec {
            name: name.into(),
            kind: ParamKind::Categorical { choices: choices.into_iter().map(Into::into).collect() },
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpace(format!("parameter `{}`: {msg}", self.name)));
        match &self.kind {
            ParamKind::Continuous { lower, upper } => {
                if !(lower.is_finite() && upper.is_finite()) {
                    return bad("bounds must be finite".into());
                }
                if lower >= upper {
                    return bad(format!("lower ({lower}) must be < upper ({upper})"));
                }
            }
            ParamKind::LogContinuous { lower, upper } => {
                if !(lower.is_finite() && upper.is_finite()) {
                    return bad("bounds must be finite".into());
                }
                if *lower <= 0.0 {
                    return bad(format!("log-scale lower bound must be > 0, got {lower}"));
                }
                if lower >= upper {
                    return bad(format!("lower ({lower}) must be < upper ({upper})"));
                }
            }
            ParamKind::Integer { lower, upper } => {
                if lower >= upper {
                    return bad(format!("lower ({lower}) must be < upper ({upper})"));
                }
            }
            ParamKind::Categorical { choices } => {
                let mut seen = std::collections::BTreeSet::new();
                for c in choices {
                    if !seen.insert(c.as_str()) {
                        return bad(format!("duplicate choice `{c}`"));
                    }
                }
                if seen.len() < 2 {
                    return bad("categorical parameters need at least 2 choices".into());
                }
            }
        }
        Ok(())
    }

    fn contains(&self, value: &ParamValue) -> bool {
        match (&self.kind, value) {
            (ParamKind::Continuous { lower, upper }, ParamValue::Real(v))
            | (ParamKind::LogContinuous { lower, upper }, ParamValue::Real(v)) => {
                *lower <= *v && *v <= *upper
            }
            (ParamKind::Integer { lower, upper }, ParamValue::Int(v)) => lower <= v && v <= upper,
            (ParamKind::Categorical { choices }, ParamValue::Choice(c)) => choices.contains(c),
            _ => false,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamValue {
        match &self.kind {
            ParamKind::Continuous { lower, upper } => {
                ParamValue::Real(lower + (upper - lower) * rng.random::<f64>())
            }
            ParamKind::LogContinuous { lower, upper } => {
                let (lo, hi) = (lower.ln(), upper.ln());
                let v = (lo + (hi - lo) * rng.random::<f64>()).exp();
                ParamValue::Real(v.clamp(*lower, *upper))
            }
            ParamKind::Integer { lower, upper } => {
                let (lo, hi) = (*lower as f64, *upper as f64);
                // f64::round is half-away-from-zero.
                let v = (lo + (hi - lo) * rng.random::<f64>()).round() as i64;
                ParamValue::Int(v.clamp(*lower, *upper))
            }
            ParamKind::Categorical { choices } => {
                ParamValue::Choice(choices[rng.random_range(0..choices.len())].clone())
            }
        }
    }
}

/// An ordered list of uniquely named parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ParamSpec>", into = "Vec<ParamSpec>")]
pub struct ConfigSpace {
    params: Vec<ParamSpec>,
}

impl ConfigSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::InvalidSpace("space has no parameters".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for p in &params {
            p.validate()?;
            if !names.insert(p.name.as_str()) {
                return Err(Error::InvalidSpace(format!("duplicate parameter name `{}`", p.name)));
            }
        }
        Ok(ConfigSpace { params })
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    /// Draws every parameter independently and uniformly over its domain.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let values = self.params.iter().map(|p| (p.name.clone(), p.sample(rng))).collect();
        Configuration { values }
    }

    /// Checks that `config` assigns an in-domain value to exactly this space's parameters.
    pub fn validate(&self, config: &Configuration) -> Result<()> {
        if config.values.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "configuration has {} values, space has {} parameters",
                config.values.len(),
                self.params.len()
            )));
        }
        for p in &self.params {
            match config.values.get(&p.name) {
                None => {
                    return Err(Error::InvalidArgument(format!("missing parameter `{}`", p.name)))
                }
                Some(v) if !p.contains(v) => {
                    return Err(Error::OutOfBounds(format!(
                        "value {v} of `{}` is outside its domain",
                        p.name
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

impl TryFrom<Vec<ParamSpec>> for ConfigSpace {
    type Error = Error;

    fn try_from(params: Vec<ParamSpec>) -> Result<Self> {
        ConfigSpace::new(params)
    }
}

impl From<ConfigSpace> for Vec<ParamSpec> {
    fn from(space: ConfigSpace) -> Self {
        space.params
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Choice(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Real(v) => Some(*v),
            ParamValue::Choice(_) => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Real(v) => write!(f, "{v}"),
            ParamValue::Choice(c) => write!(f, "{c}"),
        }
    }
}

/// One point of a search space, keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration {
    pub values: BTreeMap<String, ParamValue>,
}

impl Configuration {
    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.values.get(name)
    }

    pub fn with(mut self, name: impl Into<String>, value: ParamValue) -> Self {
        self.values.insert(name.into(), value);
        self
    }
}

/// Identifier of a configuration within one run. Also the last-resort tie-breaker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfigId(pub usize);

impl fmt::Display for ConfigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Observation history of a single arm.
///
/// Append-only. Prefix sums are maintained so window means cost O(1);
/// infinite (failed) losses are counted separately so a window containing
/// one evaluates to `+inf` instead of `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmState {
    config_id: ConfigId,
    losses: Vec<f64>,
    budgets: Vec<f64>,
    finite_prefix: Vec<f64>,
    inf_prefix: Vec<usize>,
}

impl ArmState {
    pub fn new(config_id: ConfigId) -> Self {
        ArmState {
            config_id,
            losses: Vec::new(),
            budgets: Vec::new(),
            finite_prefix: vec![0.0],
            inf_prefix: vec![0],
        }
    }

    /// Builds an arm from a loss sequence, all observed at budget 1.
    pub fn from_losses(config_id: ConfigId, losses: &[f64]) -> Result<Self> {
        let mut arm = ArmState::new(config_id);
        for &l in losses {
            arm.record_observation(l, 1.0)?;
        }
        Ok(arm)
    }

    pub fn config_id(&self) -> ConfigId {
        self.config_id
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn budgets(&self) -> &[f64] {
        &self.budgets
    }

    /// Number of evaluations `n_k`.
    pub fn n(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn record_observation(&mut self, loss: f64, budget: f64) -> Result<()> {
        if !(budget > 0.0 && budget.is_finite()) {
            return Err(Error::InvalidArgument(format!("budget must be positive, got {budget}")));
        }
        if loss.is_nan() || loss == f64::NEG_INFINITY {
            return Err(Error::InvalidArgument(format!("loss must be finite or +inf, got {loss}")));
        }
        let last = *self.finite_prefix.last().expect("prefix starts at 0");
        let last_inf = *self.inf_prefix.last().expect("prefix starts at 0");
        if loss.is_finite() {
            self.finite_prefix.push(last + loss);
            self.inf_prefix.push(last_inf);
        } else {
            self.finite_prefix.push(last);
            self.inf_prefix.push(last_inf + 1);
        }
        self.losses.push(loss);
        self.budgets.push(budget);
        Ok(())
    }

    /// Mean of losses `l..=u`, 1-based inclusive.
    pub fn window_mean(&self, l: usize, u: usize) -> Result<f64> {
        if l == 0 || l > u || u > self.n() {
            return Err(Error::OutOfBounds(format!(
                "window [{l}, {u}] is not within [1, {}]",
                self.n()
            )));
        }
        Ok(self.window_mean0(l - 1, u - l + 1))
    }

    /// Mean of `len` losses starting at 0-based `start`. Caller guarantees the range.
    pub(crate) fn window_mean0(&self, start: usize, len: usize) -> f64 {
        let end = start + len;
        if self.inf_prefix[end] > self.inf_prefix[start] {
            return f64::INFINITY;
        }
        (self.finite_prefix[end] - self.finite_prefix[start]) / len as f64
    }

    /// Mean of the whole history; `+inf` when empty.
    pub fn mean(&self) -> f64 {
        if self.is_empty() {
            f64::INFINITY
        } else {
            self.window_mean0(0, self.n())
        }
    }
}

/// One evaluation issued by a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seq: u64,
    pub policy: String,
    pub bracket: Option<u32>,
    pub round: u32,
    pub config_id: ConfigId,
    pub config: Configuration,
    pub budget: f64,
    /// `null` in serialized form when the evaluation failed.
    #[serde(with = "loss_serde")]
    pub loss: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
    /// Completion time on the run's clock, in seconds. Sequential policies use
    /// a logical clock that advances by each evaluation's budget.
    pub wall_time: f64,
}

mod loss_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(loss: &f64, s: S) -> Result<S::Ok, S::Error> {
        if loss.is_finite() {
            s.serialize_f64(*loss)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Append-only log of evaluations in issue order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TrialRecord>,
    pub rng_seed: u64,
}

impl Trace {
    pub fn new(rng_seed: u64) -> Self {
        Trace { records: Vec::new(), rng_seed }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_budget(&self) -> f64 {
        self.records.iter().map(|r| r.budget).sum()
    }

    /// Record with the lowest loss among those observed at the largest budget.
    /// Earlier records win ties.
    pub fn best_at_max_budget(&self) -> Option<&TrialRecord> {
        let max_budget = self.records.iter().map(|r| r.budget).fold(f64::NEG_INFINITY, f64::max);
        self.records
            .iter()
            .filter(|r| r.budget >= max_budget * (1.0 - 1e-12))
            .fold(None, |best: Option<&TrialRecord>, r| match best {
                Some(b) if b.loss <= r.loss => Some(b),
                _ => Some(r),
            })
    }
}

/// A black-box loss to minimize, evaluated at a given budget.
pub trait Objective {
    fn evaluate(&mut self, config: &Configuration, budget: f64) -> std::result::Result<f64, EvalError>;
}

impl<F> Objective for F
where
    F: FnMut(&Configuration, f64) -> std::result::Result<f64, EvalError>,
{
    fn evaluate(&mut self, config: &Configuration, budget: f64) -> std::result::Result<f64, EvalError> {
        self(config, budget)
    }
}

/// Runs `objective`, mapping errors and NaN to a failed `+inf` loss.
pub(crate) fn evaluate_or_fail<O: Objective + ?Sized>(
    objective: &mut O,
    config: &Configuration,
    budget: f64,
) -> (f64, bool) {
    match objective.evaluate(config, budget) {
        Ok(v) if v.is_nan() || v == f64::NEG_INFINITY => (f64::INFINITY, true),
        Ok(v) => (v, false),
        Err(_) => (f64::INFINITY, true),
    }
}

/// Progress notifications emitted while a policy runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    BracketOpened { s: u32, num_configs: usize, min_budget: f64 },
    TrialStarted { config_id: ConfigId, bracket: Option<u32>, round: u32, budget: f64 },
    TrialFinished { record: TrialRecord },
    ModelRefit { observations: usize, budget: f64 },
}

pub trait EventSink {
    fn emit(&mut self, event: &Event);
}

impl<F: FnMut(&Event)> EventSink for F {
    fn emit(&mut self, event: &Event) {
        self(event)
    }
}

/// Discards every event.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoEvents;

impl EventSink for NoEvents {
    fn emit(&mut self, _: &Event) {}
}

/// Appends records for a sequential policy run, numbering them and advancing
/// a logical clock by each evaluation's budget.
pub(crate) struct TraceWriter<'a> {
    pub trace: &'a mut Trace,
    pub policy: &'a str,
    clock: f64,
    sink: Option<&'a mut dyn EventSink>,
}

impl<'a> TraceWriter<'a> {
    pub fn new(trace: &'a mut Trace, policy: &'a str) -> Self {
        let clock = trace.records.last().map_or(0.0, |r| r.wall_time);
        TraceWriter { trace, policy, clock, sink: None }
    }

    pub fn with_sink(trace: &'a mut Trace, policy: &'a str, sink: &'a mut dyn EventSink) -> Self {
        TraceWriter { sink: Some(sink), ..TraceWriter::new(trace, policy) }
    }

    pub fn emit(&mut self, event: &Event) {
        if let Some(sink) = self.sink.as_mut() {
            sink.emit(event);
        }
    }

    /// Evaluates `config` and appends the record; returns the loss.
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate<O: Objective + ?Sized>(
        &mut self,
        objective: &mut O,
        bracket: Option<u32>,
        round: u32,
        config_id: ConfigId,
        config: &Configuration,
        budget: f64,
    ) -> f64 {
        self.emit(&Event::TrialStarted { config_id, bracket, round, budget });
        let (loss, failed) = evaluate_or_fail(objective, config, budget);
        self.clock += budget;
        let seq = self.trace.records.len() as u64;
        let record = TrialRecord {
            seq,
            policy: self.policy.to_string(),
            bracket,
            round,
            config_id,
            config: config.clone(),
            budget,
            loss,
            failed,
            wall_time: self.clock,
        };
        if self.sink.is_some() {
            self.emit(&Event::TrialFinished { record: record.clone() });
        }
        self.trace.records.push(record);
        loss
    }
}
