//! Sub-sampling evaluation of a fixed pool of configurations.
//!
//! A less-evaluated arm `k` *has potential* against the leader `ζ` (the arm
//! with the most observations) when `n_k < n_ζ` and either it is still under
//! the exploration threshold `q_n`, or its full-history mean is no worse than
//! the mean of some length-`n_k` window of the leader's history. Each round
//! evaluates every challenger with potential, or the leader alone if there
//! are none.
//!
//! The modified variant (MSS) folds the same comparison into a sortable
//! criterion `V_k` and evaluates a halving-style shrinking prefix of the
//! ranking, which makes it usable by asynchronous schedulers.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::domain::{ArmState, ConfigId, Configuration, Objective, Trace, TraceWriter};
use crate::error::{Error, Result};
use crate::num::{floor_log, floor_tol};

/// Exploration threshold `q_n` as a function of the total evaluation count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QnRule {
    /// `sqrt(ln n)`.
    #[default]
    SqrtLog,
    /// A constant threshold, mostly useful in tests.
    Fixed(f64),
}

impl QnRule {
    /// Threshold at a real-valued count `n >= 1`.
    pub fn at(self, n: f64) -> f64 {
        match self {
            QnRule::SqrtLog => n.ln().max(0.0).sqrt(),
            QnRule::Fixed(q) => q,
        }
    }

    pub fn threshold(self, n: u64) -> Result<f64> {
        if n == 0 {
            return Err(Error::InvalidArgument("q_n is undefined for n = 0".into()));
        }
        Ok(self.at(n as f64))
    }
}

/// `q_n = sqrt(ln n)`.
pub fn threshold_qn(n: u64) -> Result<f64> {
    QnRule::SqrtLog.threshold(n)
}

/// Budget used by SS round `r >= 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BudgetSchedule {
    /// `eta^r * b`, so the first adaptive round jumps straight to `eta^2 * b`.
    #[default]
    Literal,
    /// `eta^(r-1) * b`.
    Smooth,
}

/// How long an SS run lasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RoundLimit {
    /// Rounds `2..=floor(log_eta(R/b))`.
    #[default]
    Budget,
    /// Rounds `2..=n`. Budgets beyond `R` are capped at `R`.
    Rounds(u64),
    /// Stop after exactly this many evaluations (possibly mid-round).
    /// Budgets beyond `R` are capped at `R`.
    Pulls(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsParams {
    pub eta: f64,
    pub min_budget: f64,
    pub max_budget: f64,
    pub qn_rule: QnRule,
    /// Weight of the under-exploration bonus in the MSS criterion.
    pub beta: f64,
    pub schedule: BudgetSchedule,
    pub limit: RoundLimit,
}

impl Default for SsParams {
    fn default() -> Self {
        SsParams {
            eta: 3.0,
            min_budget: 1.0,
            max_budget: 27.0,
            qn_rule: QnRule::SqrtLog,
            beta: 1.0,
            schedule: BudgetSchedule::Literal,
            limit: RoundLimit::Budget,
        }
    }
}

impl SsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 1.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("eta must be > 1, got {}", self.eta)));
        }
        if !(self.min_budget > 0.0 && self.min_budget <= self.max_budget) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < min_budget <= max_budget, got {} and {}",
                self.min_budget, self.max_budget
            )));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }

    /// Last round index of an SS run under [`RoundLimit::Budget`].
    pub fn last_round(&self) -> u32 {
        floor_log(self.max_budget / self.min_budget, self.eta)
    }

    /// Budget of SS round `r` (`r = 1` is the initial sweep at `b`).
    pub fn round_budget(&self, r: u32) -> f64 {
        if r <= 1 {
            return self.min_budget;
        }
        let exp = match self.schedule {
            BudgetSchedule::Literal => r,
            BudgetSchedule::Smooth => r - 1,
        };
        let b = self.min_budget * self.eta.powi(exp.min(i32::MAX as u32) as i32);
        b.min(self.max_budget)
    }
}

/// Largest mean over the length-`len` windows of `arm`. `len` must be in `1..=n`.
pub(crate) fn max_window_mean(arm: &ArmState, len: usize) -> f64 {
    (0..=arm.n() - len).map(|start| arm.window_mean0(start, len)).fold(f64::NEG_INFINITY, f64::max)
}

fn nonempty(arm: &ArmState, idx: usize) -> Result<()> {
    if arm.is_empty() {
        Err(Error::EmptyHistory(idx))
    } else {
        Ok(())
    }
}

/// Whether `challenger` has more potential than `leader` at threshold `qn`.
pub fn has_potential(challenger: &ArmState, leader: &ArmState, qn: f64) -> Result<bool> {
    nonempty(challenger, challenger.config_id().0)?;
    nonempty(leader, leader.config_id().0)?;
    Ok(potential_with(challenger, leader, qn, max_window_mean))
}

fn potential_with(
    challenger: &ArmState,
    leader: &ArmState,
    qn: f64,
    mut window_max: impl FnMut(&ArmState, usize) -> f64,
) -> bool {
    let nk = challenger.n();
    if nk >= leader.n() {
        return false;
    }
    if (nk as f64) < qn {
        return true;
    }
    let window = window_max(leader, nk);
    // Window means come from prefix-sum differences; absorb their rounding so
    // exact ties still count.
    challenger.mean() <= window + 1e-12 * (1.0 + window.abs())
}

/// Index of the arm with the most observations; ties go to the lower mean,
/// then to the smaller config id.
pub fn select_leader(arms: &[ArmState]) -> Result<usize> {
    if arms.is_empty() {
        return Err(Error::InvalidArgument("cannot select a leader among zero arms".into()));
    }
    for (i, a) in arms.iter().enumerate() {
        nonempty(a, i)?;
    }
    Ok(leader_index(arms))
}

fn leader_index(arms: &[ArmState]) -> usize {
    let mut best = 0;
    for (i, a) in arms.iter().enumerate().skip(1) {
        let b = &arms[best];
        let better = match a.n().cmp(&b.n()) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => match a.mean().partial_cmp(&b.mean()) {
                Some(std::cmp::Ordering::Less) => true,
                Some(std::cmp::Ordering::Greater) => false,
                _ => a.config_id() < b.config_id(),
            },
        };
        if better {
            best = i;
        }
    }
    best
}

/// Arms to evaluate next: every non-leader with potential, or the leader alone.
pub fn ss_round(arms: &[ArmState], qn: f64) -> Result<Vec<usize>> {
    let leader = select_leader(arms)?;
    let chosen: Vec<usize> = (0..arms.len())
        .filter(|&k| k != leader)
        .filter(|&k| potential_with(&arms[k], &arms[leader], qn, max_window_mean))
        .collect();
    Ok(if chosen.is_empty() { vec![leader] } else { chosen })
}

/// `V_k = mean(k) - max_j window_j(leader) - beta * max(0, qn - n_k)`.
pub fn mss_criterion(k: &ArmState, leader: &ArmState, qn: f64, beta: f64) -> Result<f64> {
    nonempty(k, k.config_id().0)?;
    nonempty(leader, leader.config_id().0)?;
    if k.n() > leader.n() {
        return Err(Error::InvalidArgument(format!(
            "arm has {} observations, more than the leader's {}",
            k.n(),
            leader.n()
        )));
    }
    Ok(criterion_with(k, leader, qn, beta, max_window_mean))
}

fn criterion_with(
    k: &ArmState,
    leader: &ArmState,
    qn: f64,
    beta: f64,
    mut window_max: impl FnMut(&ArmState, usize) -> f64,
) -> f64 {
    let nk = k.n() as f64;
    let bonus = if beta == 0.0 { 0.0 } else { beta * (qn - nk).max(0.0) };
    let diff = k.mean() - window_max(leader, k.n());
    // inf - inf: a failed arm compared with a failed leader window.
    let diff = if diff.is_nan() { f64::INFINITY } else { diff };
    diff - bonus
}

/// Caches the running maximum of the leader's window means for each window
/// length, so a round costs O(K) once the leader settles.
#[derive(Debug, Default, Clone)]
struct WindowCache {
    leader: Option<ConfigId>,
    by_len: HashMap<usize, (f64, usize)>,
}

impl WindowCache {
    fn max_window(&mut self, leader: &ArmState, len: usize) -> f64 {
        if self.leader != Some(leader.config_id()) {
            self.leader = Some(leader.config_id());
            self.by_len.clear();
        }
        let (max, next) = self.by_len.entry(len).or_insert((f64::NEG_INFINITY, 0));
        let last_start = leader.n() - len;
        while *next <= last_start {
            *max = max.max(leader.window_mean0(*next, len));
            *next += 1;
        }
        *max
    }
}

/// Stateful sub-sampling over a pool; the runners below drive it.
#[derive(Debug, Clone)]
pub struct SubSampler {
    arms: Vec<ArmState>,
    cache: WindowCache,
    total: u64,
}

impl SubSampler {
    pub fn new(ids: impl IntoIterator<Item = ConfigId>) -> Self {
        SubSampler {
            arms: ids.into_iter().map(ArmState::new).collect(),
            cache: WindowCache::default(),
            total: 0,
        }
    }

    pub fn arms(&self) -> &[ArmState] {
        &self.arms
    }

    pub fn total_evaluations(&self) -> u64 {
        self.total
    }

    pub fn record(&mut self, idx: usize, loss: f64, budget: f64) -> Result<()> {
        self.arms[idx].record_observation(loss, budget)?;
        self.total += 1;
        Ok(())
    }

    pub fn leader(&self) -> Result<usize> {
        select_leader(&self.arms)
    }

    /// Same result as [`ss_round`] with `qn` taken from the current total.
    pub fn plan_round(&mut self, qn_rule: QnRule) -> Result<Vec<usize>> {
        let leader = select_leader(&self.arms)?;
        let qn = qn_rule.threshold(self.total)?;
        let (arms, cache) = (&self.arms, &mut self.cache);
        let chosen: Vec<usize> = (0..arms.len())
            .filter(|&k| k != leader)
            .filter(|&k| potential_with(&arms[k], &arms[leader], qn, |l, n| cache.max_window(l, n)))
            .collect();
        Ok(if chosen.is_empty() { vec![leader] } else { chosen })
    }

    /// `V_k` for every arm against the current leader.
    pub fn criteria(&mut self, qn_rule: QnRule, beta: f64) -> Result<Vec<f64>> {
        let leader = select_leader(&self.arms)?;
        let qn = qn_rule.threshold(self.total)?;
        let (arms, cache) = (&self.arms, &mut self.cache);
        Ok(arms
            .iter()
            .map(|k| criterion_with(k, &arms[leader], qn, beta, |l, n| cache.max_window(l, n)))
            .collect())
    }
}

/// Result of an SS or MSS run over a fixed pool.
#[derive(Debug, Clone)]
pub struct PoolOutcome {
    pub trace: Trace,
    pub arms: Vec<ArmState>,
    /// Index into the pool of the returned configuration: the arm with the
    /// most observations, ties to the lower mean.
    pub best: usize,
}

fn check_pool(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 configurations, got {n}")));
    }
    Ok(())
}

fn ids(n: usize) -> Vec<ConfigId> {
    (0..n).map(ConfigId).collect()
}

/// Sub-sampling over `configs` (ids `0..K`).
pub fn ss_run<O: Objective + ?Sized>(
    configs: &[Configuration],
    params: &SsParams,
    objective: &mut O,
) -> Result<PoolOutcome> {
    let mut trace = Trace::new(0);
    let mut writer = TraceWriter::new(&mut trace, "ss");
    let (arms, best) = ss_run_into(&mut writer, None, &ids(configs.len()), configs, params, objective)?;
    Ok(PoolOutcome { trace, arms, best })
}

pub(crate) fn ss_run_into<O: Objective + ?Sized>(
    writer: &mut TraceWriter<'_>,
    bracket: Option<u32>,
    ids: &[ConfigId],
    configs: &[Configuration],
    params: &SsParams,
    objective: &mut O,
) -> Result<(Vec<ArmState>, usize)> {
    check_pool(configs.len())?;
    params.validate()?;
    let pull_cap = match params.limit {
        RoundLimit::Pulls(n) => n,
        _ => u64::MAX,
    };
    let last_round = match params.limit {
        RoundLimit::Budget => params.last_round() as u64,
        RoundLimit::Rounds(n) => n,
        RoundLimit::Pulls(_) => u64::MAX,
    };

    let mut ss = SubSampler::new(ids.iter().copied());
    for (k, config) in configs.iter().enumerate() {
        if ss.total >= pull_cap {
            break;
        }
        let b = params.min_budget;
        let loss = writer.evaluate(objective, bracket, 1, ids[k], config, b);
        ss.record(k, loss, b)?;
    }

    let mut r: u64 = 2;
    while r <= last_round && ss.total < pull_cap && ss.arms.iter().all(|a| !a.is_empty()) {
        let budget = params.round_budget(r.min(u32::MAX as u64) as u32);
        let chosen = ss.plan_round(params.qn_rule)?;
        for k in chosen {
            if ss.total >= pull_cap {
                break;
            }
            let round = r.min(u32::MAX as u64) as u32;
            let loss = writer.evaluate(objective, bracket, round, ids[k], &configs[k], budget);
            ss.record(k, loss, budget)?;
        }
        r += 1;
    }
    let best = leader_index(&ss.arms);
    Ok((ss.arms, best))
}

/// Round sizes and budgets of an MSS run: `K_r = floor(K eta^-r)`, `b_r = b eta^r`.
pub fn mss_rounds(num_configs: usize, min_budget: f64, eta: f64) -> Vec<(usize, f64)> {
    let s = floor_log(num_configs as f64, eta);
    (0..=s)
        .map(|r| {
            let k = floor_tol(num_configs as f64 * eta.powi(-(r as i32)));
            (k.max(1), min_budget * eta.powi(r as i32))
        })
        .collect()
}

/// Modified sub-sampling over `configs` (ids `0..K`), starting at `min_budget`.
pub fn mss_run<O: Objective + ?Sized>(
    configs: &[Configuration],
    min_budget: f64,
    params: &SsParams,
    objective: &mut O,
) -> Result<PoolOutcome> {
    let mut trace = Trace::new(0);
    let mut writer = TraceWriter::new(&mut trace, "mss");
    let (arms, best) =
        mss_run_into(&mut writer, None, &ids(configs.len()), configs, min_budget, params, objective)?;
    Ok(PoolOutcome { trace, arms, best })
}

pub(crate) fn mss_run_into<O: Objective + ?Sized>(
    writer: &mut TraceWriter<'_>,
    bracket: Option<u32>,
    ids: &[ConfigId],
    configs: &[Configuration],
    min_budget: f64,
    params: &SsParams,
    objective: &mut O,
) -> Result<(Vec<ArmState>, usize)> {
    if !(min_budget > 0.0) {
        return Err(Error::InvalidArgument(format!("min_budget must be > 0, got {min_budget}")));
    }
    let rounds = mss_rounds(configs.len(), min_budget, params.eta);
    mss_run_rounds_into(writer, bracket, ids, configs, &rounds, params, objective)
}

/// MSS over explicit `(K_r, b_r)` rounds, such as a HyperBand bracket's.
pub(crate) fn mss_run_rounds_into<O: Objective + ?Sized>(
    writer: &mut TraceWriter<'_>,
    bracket: Option<u32>,
    ids: &[ConfigId],
    configs: &[Configuration],
    rounds: &[(usize, f64)],
    params: &SsParams,
    objective: &mut O,
) -> Result<(Vec<ArmState>, usize)> {
    check_pool(configs.len())?;
    params.validate()?;
    let mut ss = SubSampler::new(ids.iter().copied());
    let mut criteria = vec![0.0; configs.len()];
    for (r, &(k_r, b_r)) in rounds.iter().enumerate() {
        for k in mss_order(&criteria, ids).into_iter().take(k_r) {
            let loss = writer.evaluate(objective, bracket, r as u32, ids[k], &configs[k], b_r);
            ss.record(k, loss, b_r)?;
        }
        if ss.arms.iter().all(|a| !a.is_empty()) {
            criteria = ss.criteria(params.qn_rule, params.beta)?;
        }
    }
    let best = leader_index(&ss.arms);
    Ok((ss.arms, best))
}

/// Pool indices sorted by ascending criterion, ties to the smaller config id.
pub(crate) fn mss_order(criteria: &[f64], ids: &[ConfigId]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..criteria.len()).collect();
    order.sort_by(|&a, &b| criteria[a].total_cmp(&criteria[b]).then(ids[a].cmp(&ids[b])));
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ParamValue;
    use crate::error::EvalError;
    use proptest::prelude::*;

    fn arm(id: usize, losses: &[f64]) -> ArmState {
        ArmState::from_losses(ConfigId(id), losses).unwrap()
    }

    /// Independent O(n^2) oracle: direct sums over every window.
    fn potential_oracle(ch: &[f64], ld: &[f64], qn: f64) -> bool {
        let (nk, nl) = (ch.len(), ld.len());
        if nk >= nl {
            return false;
        }
        if (nk as f64) < qn {
            return true;
        }
        let m: f64 = ch.iter().sum::<f64>() / nk as f64;
        (0..=nl - nk).any(|j| m <= ld[j..j + nk].iter().sum::<f64>() / nk as f64 + 1e-12)
    }

    fn pool(n: usize) -> Vec<Configuration> {
        (0..n).map(|k| Configuration::default().with("arm", ParamValue::Int(k as i64))).collect()
    }

    fn arm_of(c: &Configuration) -> usize {
        match c.get("arm") {
            Some(ParamValue::Int(k)) => *k as usize,
            _ => unreachable!(),
        }
    }

    #[test]
    fn qn_values() {
        assert_eq!(threshold_qn(1).unwrap(), 0.0);
        assert!((QnRule::SqrtLog.at(std::f64::consts::E) - 1.0).abs() < 1e-15);
        assert!((QnRule::SqrtLog.at(std::f64::consts::E.powi(4)) - 2.0).abs() < 1e-15);
        assert!(threshold_qn(0).is_err());
        let mut prev = 0.0;
        for n in 1..1000 {
            let q = threshold_qn(n).unwrap();
            assert!(q >= prev);
            prev = q;
        }
    }

    #[test]
    fn potential_examples() {
        let leader = arm(1, &[0.50, 0.40, 0.30]);
        assert!(has_potential(&arm(0, &[0.9]), &leader, 2.0).unwrap());
        assert!(has_potential(&arm(0, &[0.35]), &leader, 1.0).unwrap());
        assert!(!has_potential(&arm(0, &[0.60]), &leader, 1.0).unwrap());
        // never when the challenger has as many observations
        assert!(!has_potential(&arm(0, &[0.0, 0.0, 0.0]), &leader, 10.0).unwrap());
        assert!(matches!(
            has_potential(&ArmState::new(ConfigId(0)), &leader, 1.0),
            Err(Error::EmptyHistory(_))
        ));
    }

    #[test]
    fn leader_examples() {
        let counts = [arm(0, &[0.1, 0.1, 0.1]), arm(1, &[0.0, 0.0]), arm(2, &[0.0])];
        assert_eq!(select_leader(&counts).unwrap(), 0);
        let means = [arm(0, &[0.4, 0.4]), arm(1, &[0.3, 0.3])];
        assert_eq!(select_leader(&means).unwrap(), 1);
        let tied = [arm(0, &[0.4, 0.4]), arm(1, &[0.4, 0.4])];
        assert_eq!(select_leader(&tied).unwrap(), 0);
        let tied_rev = [arm(5, &[0.4, 0.4]), arm(2, &[0.4, 0.4])];
        assert_eq!(select_leader(&tied_rev).unwrap(), 1);
        assert!(select_leader(&[]).is_err());
    }

    #[test]
    fn round_examples() {
        let leader = arm(0, &[0.5, 0.4, 0.3]);
        assert_eq!(ss_round(&[leader.clone(), arm(1, &[0.35])], 1.0).unwrap(), vec![1]);
        assert_eq!(ss_round(&[leader.clone(), arm(1, &[0.9])], 1.0).unwrap(), vec![0]);
        // two challengers: 0.45 <= window 0.5 and (0.3+0.3)/2 <= (0.5+0.4)/2
        let arms = [arm(0, &[0.45]), leader, arm(2, &[0.3, 0.3]), arm(3, &[0.8])];
        assert_eq!(ss_round(&arms, 1.0).unwrap(), vec![0, 2]);
    }

    #[test]
    fn criterion_examples() {
        let leader = arm(1, &[0.3, 0.2, 0.4]);
        let v = mss_criterion(&arm(0, &[0.5]), &leader, 2.0, 1.0).unwrap();
        assert!((v - (-0.9)).abs() < 1e-12);
        assert!(mss_criterion(&leader, &leader, 3.0, 1.0).unwrap().abs() < 1e-15);
        let self_v = mss_criterion(&leader, &leader, 5.0, 2.0).unwrap();
        assert!((self_v - (-4.0)).abs() < 1e-12);
        assert_eq!(mss_criterion(&arm(0, &[0.5]), &arm(1, &[0.5]), 0.0, 0.0).unwrap(), 0.0);
        assert!(mss_criterion(&leader, &arm(0, &[0.5]), 1.0, 1.0).is_err());
    }

    #[test]
    fn ss_run_without_extra_rounds() {
        let params = SsParams { max_budget: 1.0, ..SsParams::default() };
        let mut obj = |_: &Configuration, _: f64| -> std::result::Result<f64, EvalError> { Ok(0.5) };
        let out = ss_run(&pool(2), &params, &mut obj).unwrap();
        assert_eq!(out.trace.len(), 2);
        assert!(out.trace.records.iter().all(|r| r.budget == 1.0));
    }

    #[test]
    fn ss_run_literal_budgets() {
        let params = SsParams::default();
        let mut obj = |c: &Configuration, _: f64| -> std::result::Result<f64, EvalError> {
            Ok(0.1 * (arm_of(c) + 1) as f64)
        };
        let out = ss_run(&pool(3), &params, &mut obj).unwrap();
        let rounds: Vec<(u32, f64)> = out.trace.records.iter().map(|r| (r.round, r.budget)).collect();
        assert!(rounds.contains(&(2, 9.0)));
        assert!(rounds.contains(&(3, 27.0)));
        assert!(rounds.iter().all(|&(r, b)| (r == 1 && b == 1.0) || (r == 2 && b == 9.0) || (r == 3 && b == 27.0)));
        // Hand simulation: after round 1 all counts tie and config 0 has the
        // lowest mean, so it leads; q_3 = sqrt(ln 3) ~ 1.05 > 1 but n_k = n_ζ,
        // so round 2 evaluates the leader alone. Round 3: q_4 ~ 1.18 > 1 = n_k,
        // so both challengers are explored.
        let order: Vec<(u32, usize)> =
            out.trace.records.iter().map(|r| (r.round, r.config_id.0)).collect();
        assert_eq!(order, vec![(1, 0), (1, 1), (1, 2), (2, 0), (3, 1), (3, 2)]);
        assert_eq!(out.best, 0);

        let again = ss_run(&pool(3), &params, &mut obj).unwrap();
        assert_eq!(again.trace, out.trace);
    }

    #[test]
    fn smooth_schedule_uses_eta_to_the_r_minus_one() {
        let params = SsParams { schedule: BudgetSchedule::Smooth, ..SsParams::default() };
        assert_eq!(params.round_budget(2), 3.0);
        assert_eq!(params.round_budget(3), 9.0);
        let literal = SsParams::default();
        assert_eq!(literal.round_budget(2), 9.0);
        assert_eq!(literal.last_round(), 3);
    }

    #[test]
    fn failed_evaluations_are_recorded() {
        let params = SsParams::default();
        let mut obj = |c: &Configuration, _: f64| -> std::result::Result<f64, EvalError> {
            if arm_of(c) == 1 {
                Err(EvalError::new("boom"))
            } else {
                Ok(0.3)
            }
        };
        let out = ss_run(&pool(2), &params, &mut obj).unwrap();
        let failed: Vec<_> = out.trace.records.iter().filter(|r| r.failed).collect();
        assert!(!failed.is_empty());
        assert!(failed.iter().all(|r| r.loss == f64::INFINITY && r.config_id == ConfigId(1)));
        assert_eq!(out.best, 0);
    }

    #[test]
    fn pull_limit_truncates() {
        let params = SsParams { limit: RoundLimit::Pulls(50), max_budget: 1.0, ..SsParams::default() };
        let mut obj = |c: &Configuration, _: f64| -> std::result::Result<f64, EvalError> {
            Ok(arm_of(c) as f64)
        };
        let out = ss_run(&pool(4), &params, &mut obj).unwrap();
        assert_eq!(out.trace.len(), 50);
    }

    #[test]
    fn mss_round_sizes() {
        assert_eq!(mss_rounds(27, 1.0, 3.0), vec![(27, 1.0), (9, 3.0), (3, 9.0), (1, 27.0)]);
        assert_eq!(mss_rounds(2, 1.0, 3.0), vec![(2, 1.0)]);
        let mut obj = |c: &Configuration, b: f64| -> std::result::Result<f64, EvalError> {
            Ok(arm_of(c) as f64 / 27.0 + 0.0 * b)
        };
        let out = mss_run(&pool(27), 1.0, &SsParams::default(), &mut obj).unwrap();
        let per_round: Vec<usize> = (0..4)
            .map(|r| out.trace.records.iter().filter(|t| t.round == r).count())
            .collect();
        assert_eq!(per_round, vec![27, 9, 3, 1]);
        let out2 = mss_run(&pool(2), 1.0, &SsParams::default(), &mut obj).unwrap();
        assert_eq!(out2.trace.len(), 2);
    }

    #[test]
    fn mss_large_beta_prefers_least_evaluated() {
        let arms = vec![
            arm(0, &[0.1, 0.1, 0.1, 0.1]),
            arm(1, &[0.9, 0.9]),
            arm(2, &[0.5]),
            arm(3, &[0.05, 0.05, 0.05]),
        ];
        let leader = select_leader(&arms).unwrap();
        let qn = 10.0;
        let v: Vec<f64> =
            arms.iter().map(|k| mss_criterion(k, &arms[leader], qn, 1e6).unwrap()).collect();
        let order = mss_order(&v, &arms.iter().map(|a| a.config_id()).collect::<Vec<_>>());
        let counts: Vec<usize> = order.iter().map(|&i| arms[i].n()).collect();
        assert_eq!(counts, vec![1, 2, 3, 4]);
    }

    fn small_history() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((0u8..20).prop_map(|v| v as f64 / 20.0), 1..=8)
    }

    proptest! {
        #[test]
        fn potential_matches_oracle(ch in small_history(), ld in small_history(), qn in 0.0f64..4.0) {
            let got = has_potential(&arm(0, &ch), &arm(1, &ld), qn).unwrap();
            prop_assert_eq!(got, potential_oracle(&ch, &ld, qn));
        }

        #[test]
        fn potential_is_antisymmetric(a in small_history(), b in small_history(), qn in 0.0f64..4.0) {
            let (x, y) = (arm(0, &a), arm(1, &b));
            prop_assert!(!(has_potential(&x, &y, qn).unwrap() && has_potential(&y, &x, qn).unwrap()));
        }

        #[test]
        fn truncating_leader_never_adds_windows(ch in small_history(), ld in small_history(), cut in 0usize..8) {
            prop_assume!(ch.len() < ld.len());
            let keep = (ld.len() - cut.min(ld.len() - ch.len())).max(ch.len() + 1);
            let full = potential_oracle(&ch, &ld, 0.0);
            let short = has_potential(&arm(0, &ch), &arm(1, &ld[..keep]), 0.0).unwrap();
            prop_assert!(!short || full);
        }

        #[test]
        fn criterion_sign_matches_case_b(ch in small_history(), ld in small_history()) {
            prop_assume!(ch.len() <= ld.len());
            let nk = ch.len() as f64;
            let v = mss_criterion(&arm(0, &ch), &arm(1, &ld), nk, 0.0).unwrap();
            prop_assume!(v.abs() > 1e-9);
            let m: f64 = ch.iter().sum::<f64>() / nk;
            let case_b = (0..=ld.len() - ch.len())
                .any(|j| m <= ld[j..j + ch.len()].iter().sum::<f64>() / nk);
            prop_assert_eq!(v <= 0.0, case_b);
        }

        #[test]
        fn cached_round_matches_pure_round(
            hists in prop::collection::vec(small_history(), 2..6),
            extra in prop::collection::vec((0usize..6, 0u8..20), 0..30),
        ) {
            let ids: Vec<ConfigId> = (0..hists.len()).map(ConfigId).collect();
            let mut ss = SubSampler::new(ids);
            for (k, h) in hists.iter().enumerate() {
                for &l in h {
                    ss.record(k, l, 1.0).unwrap();
                }
            }
            for (k, v) in extra {
                let k = k % hists.len();
                let qn = QnRule::SqrtLog.threshold(ss.total_evaluations()).unwrap();
                let pure = ss_round(ss.arms(), qn).unwrap();
                prop_assert_eq!(ss.plan_round(QnRule::SqrtLog).unwrap(), pure);
                ss.record(k, v as f64 / 20.0, 1.0).unwrap();
            }
        }
    }
}
