//! Model-based multi-fidelity loops: BOSS (TPE around sub-sampling), BOHB
//! (TPE around successive halving) and an asynchronous parallel BOSS.
//!
//! Brackets follow the HyperBand parameterization. Sequential runs use a
//! logical clock; the parallel run takes its clock from the worker pool.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    evaluate_or_fail, ArmState, ConfigId, ConfigSpace, Configuration, Event, EventSink, Objective, Trace,
    TraceWriter, TrialRecord,
};
use crate::error::{Error, EvalError, Result};
use crate::halving::{sh_run_into, BracketPlan};
use crate::num::{ceil_tol, floor_log};
use crate::subsample::{
    mss_criterion, mss_run_rounds_into, select_leader, ss_run_into, BudgetSchedule, QnRule, RoundLimit, SsParams,
};
use crate::surrogate::{
    constant_liar_augment, min_fit_points, tpe_fit, tpe_fit_budget_conditioned, tpe_propose, Dataset, Observation,
    TpeModel, DEFAULT_CANDIDATES, DEFAULT_GAMMA,
};

/// HyperBand brackets `s = s_max..=0` with `s_max = floor(log_eta(R / r_min))`,
/// `K = ceil((s_max + 1) eta^s / (s + 1))` and `b = R eta^-s`.
///
/// With `r_min = 1` this is exactly [`crate::halving::hb_schedule`].
pub fn bracket_plans(max_budget: f64, min_budget: f64, eta: f64) -> Result<Vec<BracketPlan>> {
    if !(eta > 1.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!("eta must be > 1, got {eta}")));
    }
    if !(min_budget > 0.0 && max_budget >= min_budget && max_budget.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < min budget <= max budget, got {min_budget} and {max_budget}"
        )));
    }
    let s_max = floor_log(max_budget / min_budget, eta);
    Ok((0..=s_max)
        .rev()
        .map(|s| {
            let k = ceil_tol((s_max + 1) as f64 * eta.powi(s as i32) / (s + 1) as f64);
            BracketPlan::new(s, k, max_budget * eta.powi(-(s as i32)), eta)
        })
        .collect())
}

/// The evaluator run inside each BOSS bracket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerPolicy {
    #[default]
    Ss,
    Mss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BossOptions {
    pub max_budget: f64,
    pub min_budget: f64,
    pub eta: f64,
    pub gamma: f64,
    pub n_candidates: usize,
    /// Passes over the bracket schedule.
    pub iterations: usize,
    pub seed: u64,
    pub qn_rule: QnRule,
    pub beta: f64,
    pub schedule: BudgetSchedule,
    pub inner: InnerPolicy,
}

impl Default for BossOptions {
    fn default() -> Self {
        BossOptions {
            max_budget: 27.0,
            min_budget: 1.0,
            eta: 3.0,
            gamma: DEFAULT_GAMMA,
            n_candidates: DEFAULT_CANDIDATES,
            iterations: 1,
            seed: 0,
            qn_rule: QnRule::SqrtLog,
            beta: 1.0,
            schedule: BudgetSchedule::Literal,
            inner: InnerPolicy::Ss,
        }
    }
}

impl BossOptions {
    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must be in (0, 1), got {}", self.gamma)));
        }
        if self.n_candidates == 0 {
            return Err(Error::InvalidArgument("need at least one candidate".into()));
        }
        Ok(())
    }

    fn ss_params(&self, plan: &BracketPlan) -> SsParams {
        SsParams {
            eta: self.eta,
            min_budget: plan.min_budget,
            max_budget: self.max_budget,
            qn_rule: self.qn_rule,
            beta: self.beta,
            schedule: self.schedule,
            limit: RoundLimit::Budget,
        }
    }
}

/// Result of a model-based tuning run.
#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub trace: Trace,
    /// Every configuration sampled, indexed by `ConfigId`.
    pub configs: Vec<Configuration>,
    /// Lowest loss observed at the largest budget.
    pub best: Option<TrialRecord>,
}

fn observations(trace: &Trace) -> Vec<Observation> {
    trace
        .records
        .iter()
        .map(|r| Observation { config: r.config.clone(), loss: r.loss, budget: r.budget })
        .collect()
}

/// Uniform sampling until a TPE model can be fitted, then TPE proposals.
struct Acquisition<'a> {
    space: &'a ConfigSpace,
    gamma: f64,
    n_candidates: usize,
    rng: ChaCha8Rng,
    model: Option<TpeModel>,
}

impl<'a> Acquisition<'a> {
    fn sample(&mut self) -> Configuration {
        match &self.model {
            Some(m) => tpe_propose(m, self.n_candidates, &mut self.rng),
            None => self.space.sample_uniform(&mut self.rng),
        }
    }

    fn refit(&mut self, obs: &[Observation]) -> Result<Option<Event>> {
        match tpe_fit_budget_conditioned(obs, self.gamma, self.space) {
            Ok(m) => {
                let event = Event::ModelRefit {
                    observations: m.good_losses.len() + m.bad_losses.len(),
                    budget: m.budget,
                };
                self.model = Some(m);
                Ok(Some(event))
            }
            Err(Error::InsufficientData { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

fn model_based_run<O, F>(
    policy: &str,
    space: &ConfigSpace,
    opts: &BossOptions,
    objective: &mut O,
    sink: &mut dyn EventSink,
    mut inner: F,
) -> Result<TuneOutcome>
where
    O: Objective + ?Sized,
    F: FnMut(&mut TraceWriter<'_>, &BracketPlan, &[ConfigId], &[Configuration], &mut O) -> Result<()>,
{
    opts.validate()?;
    let plans = bracket_plans(opts.max_budget, opts.min_budget, opts.eta)?;
    let mut acq = Acquisition {
        space,
        gamma: opts.gamma,
        n_candidates: opts.n_candidates,
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
        model: None,
    };
    let mut trace = Trace::new(opts.seed);
    let mut configs: Vec<Configuration> = Vec::new();
    {
        let mut w = TraceWriter::with_sink(&mut trace, policy, sink);
        for _ in 0..opts.iterations {
            for plan in &plans {
                w.emit(&Event::BracketOpened { s: plan.s, num_configs: plan.num_configs, min_budget: plan.min_budget });
                let pool: Vec<Configuration> = (0..plan.num_configs).map(|_| acq.sample()).collect();
                let ids: Vec<ConfigId> = (configs.len()..configs.len() + pool.len()).map(ConfigId).collect();
                configs.extend(pool.iter().cloned());
                inner(&mut w, plan, &ids, &pool, objective)?;
                if let Some(e) = acq.refit(&observations(w.trace))? {
                    w.emit(&e);
                }
            }
        }
    }
    let best = trace.best_at_max_budget().cloned();
    Ok(TuneOutcome { trace, configs, best })
}

/// Evaluates a pool too small to sub-sample once at the bracket's budget.
fn evaluate_once<O: Objective + ?Sized>(
    w: &mut TraceWriter<'_>,
    plan: &BracketPlan,
    ids: &[ConfigId],
    pool: &[Configuration],
    objective: &mut O,
) {
    for (id, c) in ids.iter().zip(pool) {
        w.evaluate(objective, Some(plan.s), 0, *id, c, plan.min_budget);
    }
}

/// BOSS: per bracket, sample `K` configurations from the acquisition, run
/// SS (or MSS) on them, then refit the TPE model on everything seen so far.
pub fn boss_run<O: Objective + ?Sized>(
    space: &ConfigSpace,
    opts: &BossOptions,
    objective: &mut O,
    sink: &mut dyn EventSink,
) -> Result<TuneOutcome> {
    model_based_run("boss", space, opts, objective, sink, |w, plan, ids, pool, obj| {
        if pool.len() < 2 {
            evaluate_once(w, plan, ids, pool, obj);
            return Ok(());
        }
        let params = opts.ss_params(plan);
        match opts.inner {
            InnerPolicy::Ss => ss_run_into(w, Some(plan.s), ids, pool, &params, obj).map(|_| ()),
            InnerPolicy::Mss => {
                mss_run_rounds_into(w, Some(plan.s), ids, pool, &plan.rounds, &params, obj).map(|_| ())
            }
        }
    })
}

/// BOHB: as [`boss_run`] with successive halving inside each bracket.
pub fn bohb_run<O: Objective + ?Sized>(
    space: &ConfigSpace,
    opts: &BossOptions,
    objective: &mut O,
    sink: &mut dyn EventSink,
) -> Result<TuneOutcome> {
    model_based_run("bohb", space, opts, objective, sink, |w, plan, ids, pool, obj| {
        sh_run_into(w, Some(plan.s), plan, ids, pool, obj).map(|_| ())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelOptions {
    pub max_budget: f64,
    pub min_budget: f64,
    pub eta: f64,
    /// No task starts once the pool clock reaches this.
    pub max_duration: f64,
    pub gamma: f64,
    pub n_candidates: usize,
    pub qn_rule: QnRule,
    pub beta: f64,
    pub seed: u64,
    /// Stop opening brackets after this many.
    pub max_brackets: Option<usize>,
}

impl Default for ParallelOptions {
    fn default() -> Self {
        ParallelOptions {
            max_budget: 27.0,
            min_budget: 1.0,
            eta: 3.0,
            max_duration: f64::INFINITY,
            gamma: DEFAULT_GAMMA,
            n_candidates: DEFAULT_CANDIDATES,
            qn_rule: QnRule::SqrtLog,
            beta: 1.0,
            seed: 0,
            max_brackets: None,
        }
    }
}

/// One evaluation handed to a worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub config_id: ConfigId,
    pub config: Configuration,
    pub bracket: u32,
    pub round: u32,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub task: Task,
    pub loss: f64,
    pub failed: bool,
    pub finished_at: f64,
}

/// The serialized state machine behind parallel BOSS.
#[derive(Debug, Clone)]
pub struct SchedulerState {
    space: ConfigSpace,
    opts: ParallelOptions,
    plans: Vec<BracketPlan>,
    rng: ChaCha8Rng,
    brackets_opened: usize,
    plan: Option<BracketPlan>,
    r: u32,
    bracket_ids: Vec<ConfigId>,
    round_counts: Vec<usize>,
    configs: Vec<Configuration>,
    scheduled: BTreeSet<(ConfigId, u32)>,
    completed: BTreeMap<(ConfigId, u32), f64>,
    in_flight: BTreeMap<(ConfigId, u32), Configuration>,
    arms: Vec<ArmState>,
    observations: Vec<Observation>,
    events: Vec<Event>,
}

impl SchedulerState {
    pub fn new(space: ConfigSpace, opts: ParallelOptions) -> Result<Self> {
        if !(opts.gamma > 0.0 && opts.gamma < 1.0) || opts.n_candidates == 0 {
            return Err(Error::InvalidArgument("gamma must be in (0, 1) and candidates >= 1".into()));
        }
        if !(opts.max_duration >= 0.0) {
            return Err(Error::InvalidArgument("max duration must be >= 0".into()));
        }
        let plans = bracket_plans(opts.max_budget, opts.min_budget, opts.eta)?;
        Ok(SchedulerState {
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
            space,
            opts,
            plans,
            brackets_opened: 0,
            plan: None,
            r: 0,
            bracket_ids: Vec::new(),
            round_counts: Vec::new(),
            configs: Vec::new(),
            scheduled: BTreeSet::new(),
            completed: BTreeMap::new(),
            in_flight: BTreeMap::new(),
            arms: Vec::new(),
            observations: Vec::new(),
            events: Vec::new(),
        })
    }

    pub fn current_bracket(&self) -> Option<u32> {
        self.plan.as_ref().map(|p| p.s)
    }

    pub fn current_round(&self) -> u32 {
        self.r
    }

    pub fn bracket_plan(&self) -> Option<&BracketPlan> {
        self.plan.as_ref()
    }

    pub fn bracket_configs(&self) -> &[ConfigId] {
        &self.bracket_ids
    }

    pub fn configs(&self) -> &[Configuration] {
        &self.configs
    }

    pub fn brackets_opened(&self) -> usize {
        self.brackets_opened
    }

    pub fn is_scheduled(&self, id: ConfigId, round: u32) -> bool {
        self.scheduled.contains(&(id, round))
    }

    pub fn completed(&self) -> &BTreeMap<(ConfigId, u32), f64> {
        &self.completed
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    fn round_full(&self, r: u32) -> bool {
        let plan = self.plan.as_ref().expect("bracket open");
        self.round_counts[r as usize] >= plan.rounds[r as usize].0
    }

    fn bracket_full(&self) -> bool {
        match &self.plan {
            None => true,
            Some(p) => self.r == p.s && self.round_full(self.r),
        }
    }

    fn may_open_bracket(&self) -> bool {
        self.opts.max_brackets.is_none_or(|m| self.brackets_opened < m)
    }

    /// Whether some (configuration, round) pair could still be scheduled.
    pub fn has_unscheduled_work(&self) -> bool {
        !self.bracket_full() || self.may_open_bracket()
    }

    /// Drains events produced since the last call.
    pub fn take_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    fn fit_dataset(&self) -> Option<Dataset> {
        let need = min_fit_points(&self.space);
        let mut budgets: Vec<f64> = self.observations.iter().map(|o| o.budget).collect();
        budgets.sort_by(|a, b| b.total_cmp(a));
        budgets.dedup();
        budgets.into_iter().find_map(|b| {
            let mut d = Dataset::new(b);
            for o in self.observations.iter().filter(|o| o.budget == b) {
                d.push(o.config.clone(), o.loss);
            }
            (d.len() >= need).then_some(d)
        })
    }

    /// Samples a bracket's configurations. Once a model is fittable, each
    /// draw refits with the in-flight and already drawn configurations
    /// inserted at the mean observed loss.
    fn sample_bracket(&mut self, k: usize) -> Result<Vec<Configuration>> {
        let Some(base) = self.fit_dataset() else {
            return Ok((0..k).map(|_| self.space.sample_uniform(&mut self.rng)).collect());
        };
        self.events.push(Event::ModelRefit { observations: base.len(), budget: base.budget_tag });
        let liar = base.mean_loss().unwrap_or(0.0);
        let mut pending: Vec<Configuration> = self.in_flight.values().cloned().collect();
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let data = constant_liar_augment(&base, &pending, liar);
            let model = tpe_fit(&data, self.opts.gamma, &self.space)?;
            let c = tpe_propose(&model, self.opts.n_candidates, &mut self.rng);
            pending.push(c.clone());
            out.push(c);
        }
        Ok(out)
    }

    fn open_bracket(&mut self) -> Result<()> {
        let plan = self.plans[self.brackets_opened % self.plans.len()].clone();
        self.brackets_opened += 1;
        self.events.push(Event::BracketOpened { s: plan.s, num_configs: plan.num_configs, min_budget: plan.min_budget });
        let pool = self.sample_bracket(plan.num_configs)?;
        let start = self.configs.len();
        self.bracket_ids = (start..start + pool.len()).map(ConfigId).collect();
        self.arms.extend(self.bracket_ids.iter().map(|&id| ArmState::new(id)));
        self.configs.extend(pool);
        self.round_counts = vec![0; plan.rounds.len()];
        self.r = 0;
        self.plan = Some(plan);
        Ok(())
    }

    /// `V_k` against the bracket leader, from completed observations only.
    /// Unobserved arms get `-inf`.
    fn criteria(&self, candidates: &[ConfigId]) -> Result<Vec<f64>> {
        let observed: Vec<ArmState> =
            self.bracket_ids.iter().map(|id| self.arms[id.0].clone()).filter(|a| !a.is_empty()).collect();
        let leader = &observed[select_leader(&observed)?];
        let total: usize = observed.iter().map(ArmState::n).sum();
        let qn = self.opts.qn_rule.threshold(total as u64)?;
        candidates
            .iter()
            .map(|id| {
                let arm = &self.arms[id.0];
                if arm.is_empty() {
                    Ok(f64::NEG_INFINITY)
                } else {
                    mss_criterion(arm, leader, qn, self.opts.beta)
                }
            })
            .collect()
    }

    /// The next task: the current round if it has open slots, else the next
    /// round of the bracket, else the first round of a new bracket. `None`
    /// only when the bracket limit is reached.
    pub fn next_task(&mut self) -> Result<Option<Task>> {
        if self.bracket_full() {
            if !self.may_open_bracket() {
                return Ok(None);
            }
            self.open_bracket()?;
        }
        while self.round_full(self.r) {
            self.r += 1;
        }
        let r = self.r;
        let candidates: Vec<ConfigId> =
            self.bracket_ids.iter().copied().filter(|&id| !self.scheduled.contains(&(id, r))).collect();
        let has_record = self.bracket_ids.iter().any(|id| !self.arms[id.0].is_empty());
        let pick = if has_record {
            let v = self.criteria(&candidates)?;
            (0..candidates.len())
                .min_by(|&a, &b| v[a].total_cmp(&v[b]).then(candidates[a].cmp(&candidates[b])))
                .expect("an open round has candidates")
        } else {
            self.rng.random_range(0..candidates.len())
        };
        let id = candidates[pick];
        let plan = self.plan.as_ref().expect("bracket open");
        let task = Task {
            config_id: id,
            config: self.configs[id.0].clone(),
            bracket: plan.s,
            round: r,
            budget: plan.rounds[r as usize].1,
        };
        self.scheduled.insert((id, r));
        self.round_counts[r as usize] += 1;
        self.in_flight.insert((id, r), task.config.clone());
        Ok(Some(task))
    }

    /// Applies a finished evaluation; results may arrive in any order.
    pub fn complete(&mut self, task: &Task, loss: f64) -> Result<()> {
        let key = (task.config_id, task.round);
        if self.in_flight.remove(&key).is_none() {
            return Err(Error::InvalidArgument(format!("{} round {} is not in flight", task.config_id, task.round)));
        }
        self.completed.insert(key, loss);
        self.arms[task.config_id.0].record_observation(loss, task.budget)?;
        self.observations.push(Observation { config: task.config.clone(), loss, budget: task.budget });
        Ok(())
    }
}

/// Free-function form of [`SchedulerState::next_task`].
pub fn parallel_next_task(state: &mut SchedulerState) -> Result<Option<Task>> {
    state.next_task()
}

/// Executes tasks concurrently and reports them as they finish.
pub trait WorkerPool {
    fn workers(&self) -> usize;
    fn idle(&self) -> usize;
    /// Seconds since the pool started, real or simulated.
    fn now(&self) -> f64;
    fn submit(&mut self, task: Task);
    /// Waits for the earliest running task; `None` when nothing runs.
    fn next_completion(&mut self) -> Option<Completion>;
}

/// Discrete-event simulation: tasks are evaluated on submission and finish
/// after `duration(budget)` simulated seconds. Ties finish in submission order.
pub struct SimulatedPool<O, D = fn(f64) -> f64> {
    workers: usize,
    objective: O,
    duration: D,
    clock: f64,
    seq: u64,
    running: Vec<(f64, u64, Completion)>,
}

fn budget_as_seconds(b: f64) -> f64 {
    b
}

fn no_time(_: f64) -> f64 {
    0.0
}

impl<O: Objective> SimulatedPool<O> {
    /// Each task takes `budget` seconds.
    pub fn new(workers: usize, objective: O) -> Self {
        Self::with_duration(workers, objective, budget_as_seconds)
    }

    /// Every task finishes instantly.
    pub fn instant(workers: usize, objective: O) -> Self {
        Self::with_duration(workers, objective, no_time)
    }
}

impl<O: Objective, D: Fn(f64) -> f64> SimulatedPool<O, D> {
    pub fn with_duration(workers: usize, objective: O, duration: D) -> Self {
        SimulatedPool { workers, objective, duration, clock: 0.0, seq: 0, running: Vec::new() }
    }
}

impl<O: Objective, D: Fn(f64) -> f64> WorkerPool for SimulatedPool<O, D> {
    fn workers(&self) -> usize {
        self.workers
    }

    fn idle(&self) -> usize {
        self.workers - self.running.len()
    }

    fn now(&self) -> f64 {
        self.clock
    }

    fn submit(&mut self, task: Task) {
        let (loss, failed) = evaluate_or_fail(&mut self.objective, &task.config, task.budget);
        let finished_at = self.clock + (self.duration)(task.budget);
        self.running.push((finished_at, self.seq, Completion { task, loss, failed, finished_at }));
        self.seq += 1;
    }

    fn next_completion(&mut self) -> Option<Completion> {
        let i = (0..self.running.len())
            .min_by(|&a, &b| self.running[a].0.total_cmp(&self.running[b].0).then(self.running[a].1.cmp(&self.running[b].1)))?;
        let (t, _, c) = self.running.swap_remove(i);
        self.clock = self.clock.max(t);
        Some(c)
    }
}

/// A thread-safe objective for [`ThreadPool`].
pub type SharedObjective = Arc<dyn Fn(&Configuration, f64) -> std::result::Result<f64, EvalError> + Send + Sync>;

/// Runs every task on its own OS thread, at most `workers` at a time.
pub struct ThreadPool {
    workers: usize,
    objective: SharedObjective,
    start: Instant,
    running: usize,
    tx: mpsc::Sender<Completion>,
    rx: mpsc::Receiver<Completion>,
}

impl ThreadPool {
    pub fn new(workers: usize, objective: SharedObjective) -> Self {
        let (tx, rx) = mpsc::channel();
        ThreadPool { workers, objective, start: Instant::now(), running: 0, tx, rx }
    }
}

impl WorkerPool for ThreadPool {
    fn workers(&self) -> usize {
        self.workers
    }

    fn idle(&self) -> usize {
        self.workers - self.running
    }

    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn submit(&mut self, task: Task) {
        let objective = Arc::clone(&self.objective);
        let tx = self.tx.clone();
        let start = self.start;
        self.running += 1;
        std::thread::spawn(move || {
            let mut f = |c: &Configuration, b: f64| objective(c, b);
            let (loss, failed) = evaluate_or_fail(&mut f, &task.config, task.budget);
            let finished_at = start.elapsed().as_secs_f64();
            // The receiver lives as long as the pool; a send error means the
            // run was abandoned.
            let _ = tx.send(Completion { task, loss, failed, finished_at });
        });
    }

    fn next_completion(&mut self) -> Option<Completion> {
        if self.running == 0 {
            return None;
        }
        let c = self.rx.recv().ok()?;
        self.running -= 1;
        Some(c)
    }
}

#[derive(Debug, Clone)]
pub struct ParallelOutcome {
    pub trace: Trace,
    pub configs: Vec<Configuration>,
    pub best: Option<TrialRecord>,
    pub brackets_opened: usize,
    /// Dispatch steps that left a worker idle although work was schedulable.
    pub idle_with_pending_work: usize,
}

/// Parallel BOSS: keep every worker busy with [`SchedulerState::next_task`]
/// until the clock reaches `max_duration`, then let running tasks finish.
pub fn parallel_boss_run(
    space: &ConfigSpace,
    opts: &ParallelOptions,
    pool: &mut dyn WorkerPool,
    sink: &mut dyn EventSink,
) -> Result<ParallelOutcome> {
    if pool.workers() == 0 {
        return Err(Error::InvalidArgument("need at least one worker".into()));
    }
    if opts.max_duration.is_infinite() && opts.max_brackets.is_none() {
        return Err(Error::InvalidArgument("set a finite duration or a bracket limit".into()));
    }
    let mut state = SchedulerState::new(space.clone(), opts.clone())?;
    let mut trace = Trace::new(opts.seed);
    let mut idle_with_pending_work = 0;
    loop {
        while pool.idle() > 0 && pool.now() < opts.max_duration {
            let Some(task) = state.next_task()? else { break };
            for e in state.take_events() {
                sink.emit(&e);
            }
            sink.emit(&Event::TrialStarted {
                config_id: task.config_id,
                bracket: Some(task.bracket),
                round: task.round,
                budget: task.budget,
            });
            pool.submit(task);
        }
        if pool.idle() > 0 && pool.now() < opts.max_duration && state.has_unscheduled_work() {
            idle_with_pending_work += 1;
        }
        let Some(done) = pool.next_completion() else { break };
        state.complete(&done.task, done.loss)?;
        let record = TrialRecord {
            seq: trace.records.len() as u64,
            policy: "parallel-boss".into(),
            bracket: Some(done.task.bracket),
            round: done.task.round,
            config_id: done.task.config_id,
            config: done.task.config,
            budget: done.task.budget,
            loss: done.loss,
            failed: done.failed,
            wall_time: done.finished_at,
        };
        sink.emit(&Event::TrialFinished { record: record.clone() });
        trace.records.push(record);
    }
    let best = trace.best_at_max_budget().cloned();
    Ok(ParallelOutcome {
        trace,
        configs: state.configs,
        best,
        brackets_opened: state.brackets_opened,
        idle_with_pending_work,
    })
}
