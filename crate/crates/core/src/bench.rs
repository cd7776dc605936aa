//! Synthetic Gaussian-arm experiments.
//!
//! Arm `k` returns `N(mu_k, sigma^2)` noise; evaluating it at budget `b`
//! returns the mean of `b` draws. Regret is measured against
//! `mu_* = min_k mu_k`, both in realized form (average regret over observed
//! losses) and in expectation form (cumulative regret over pulled means).

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::domain::{ConfigSpace, Configuration, ParamSpec, ParamValue, Trace, TraceWriter};
use crate::error::{Error, EvalError, Result};
use crate::halving::{sh_run_into, sh_schedule};
use crate::subsample::{mss_run_into, ss_run_into, RoundLimit, SsParams};

/// Name of the single integer parameter selecting the arm.
pub const ARM_PARAM: &str = "arm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBanditInstance {
    pub means: Vec<f64>,
    pub sigma: f64,
    pub rng_seed: u64,
}

impl GaussianBanditInstance {
    /// `K` arms with `mu_k = k / K`.
    pub fn new(num_arms: usize, sigma: f64, rng_seed: u64) -> Result<Self> {
        let means = (0..num_arms).map(|k| k as f64 / num_arms as f64).collect();
        Self::with_means(means, sigma, rng_seed)
    }

    pub fn with_means(means: Vec<f64>, sigma: f64, rng_seed: u64) -> Result<Self> {
        if means.len() < 2 {
            return Err(Error::InvalidArgument("a bandit instance needs at least 2 arms".into()));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
        }
        let inst = GaussianBanditInstance { means, sigma, rng_seed };
        let best = inst.mu_star();
        if inst.means.iter().filter(|&&m| m == best).count() > 1 {
            return Err(Error::DegenerateInstance("the minimal mean is not unique".into()));
        }
        Ok(inst)
    }

    pub fn num_arms(&self) -> usize {
        self.means.len()
    }

    pub fn mu_star(&self) -> f64 {
        self.means.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn best_arm(&self) -> usize {
        (0..self.means.len()).min_by(|&a, &b| self.means[a].total_cmp(&self.means[b])).unwrap_or(0)
    }

    pub fn space(&self) -> ConfigSpace {
        ConfigSpace::new(vec![ParamSpec::integer(ARM_PARAM, 0, self.num_arms() as i64 - 1)])
            .expect("instance has at least 2 arms")
    }

    /// One configuration per arm, in arm order.
    pub fn configs(&self) -> Vec<Configuration> {
        (0..self.num_arms()).map(arm_config).collect()
    }

    /// An objective drawing from this instance with its own seeded generator.
    pub fn objective(&self) -> GaussianObjective<'_> {
        GaussianObjective { inst: self, rng: ChaCha8Rng::seed_from_u64(self.rng_seed) }
    }
}

pub fn arm_config(k: usize) -> Configuration {
    Configuration::default().with(ARM_PARAM, ParamValue::Int(k as i64))
}

pub fn arm_of(config: &Configuration) -> Option<usize> {
    match config.get(ARM_PARAM)? {
        ParamValue::Int(k) if *k >= 0 => Some(*k as usize),
        _ => None,
    }
}

/// Mean of `budget` draws from arm `k`.
///
/// Sampled through its exact law `N(mu_k, sigma^2 / budget)` with one normal
/// draw, so large budgets cost nothing.
pub fn arm_pull<R: Rng + ?Sized>(
    inst: &GaussianBanditInstance,
    k: usize,
    budget: u64,
    rng: &mut R,
) -> Result<f64> {
    if budget < 1 {
        return Err(Error::InvalidArgument("budget must be at least 1".into()));
    }
    let mu = *inst
        .means
        .get(k)
        .ok_or_else(|| Error::OutOfBounds(format!("arm {k} of {}", inst.num_arms())))?;
    let z: f64 = rng.sample(StandardNormal);
    Ok(mu + inst.sigma / (budget as f64).sqrt() * z)
}

pub struct GaussianObjective<'a> {
    inst: &'a GaussianBanditInstance,
    rng: ChaCha8Rng,
}

impl crate::domain::Objective for GaussianObjective<'_> {
    fn evaluate(&mut self, config: &Configuration, budget: f64) -> std::result::Result<f64, EvalError> {
        let k = arm_of(config).ok_or_else(|| EvalError::new("configuration has no arm index"))?;
        let b = budget.round().max(1.0) as u64;
        arm_pull(self.inst, k, b, &mut self.rng).map_err(|e| EvalError::new(e.to_string()))
    }
}

fn trace_arms(trace: &Trace) -> Result<Vec<usize>> {
    trace
        .records
        .iter()
        .map(|r| arm_of(&r.config).ok_or_else(|| Error::InvalidArgument(format!("record {} has no arm", r.seq))))
        .collect()
}

/// Running `(1/i) sum_{t<=i} (y_t - mu_*)` over observed losses.
pub fn average_regret(trace: &Trace, inst: &GaussianBanditInstance) -> Vec<f64> {
    let mu_star = inst.mu_star();
    let mut sum = 0.0;
    trace
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            sum += r.loss - mu_star;
            sum / (i + 1) as f64
        })
        .collect()
}

/// Running `sum_t (mu_{pi_t} - mu_*)` over pulled arms.
pub fn cumulative_regret(trace: &Trace, inst: &GaussianBanditInstance) -> Result<Vec<f64>> {
    let mu_star = inst.mu_star();
    let mut sum = 0.0;
    trace_arms(trace)?
        .into_iter()
        .map(|k| {
            let mu = inst.means.get(k).ok_or_else(|| Error::OutOfBounds(format!("arm {k}")))?;
            sum += mu - mu_star;
            Ok(sum)
        })
        .collect()
}

/// Policies runnable on a fixed pool of Gaussian arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolPolicy {
    Ss,
    Mss,
    Sh,
}

impl PoolPolicy {
    pub fn label(self) -> &'static str {
        match self {
            PoolPolicy::Ss => "ss",
            PoolPolicy::Mss => "mss",
            PoolPolicy::Sh => "sh",
        }
    }
}

impl std::str::FromStr for PoolPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ss" => Ok(PoolPolicy::Ss),
            "mss" => Ok(PoolPolicy::Mss),
            "sh" => Ok(PoolPolicy::Sh),
            other => Err(Error::InvalidArgument(format!("unknown pool policy `{other}`"))),
        }
    }
}

/// Settings shared by the synthetic experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchParams {
    /// `eta`, `b`, `R`, `q_n` and the SS run length.
    pub ss: SsParams,
    /// Base seed; run `i` uses `seed + i`.
    pub seed: u64,
}

/// SS rounds used by the synthetic experiments. The adaptive loop is run far
/// past `floor(log_eta(R/b))` so the policy has time to separate arms whose
/// means are `1/K` apart; budgets stay capped at `R`.
pub const BENCH_SS_ROUNDS: u64 = 10_000;

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams {
            ss: SsParams { limit: RoundLimit::Rounds(BENCH_SS_ROUNDS), ..SsParams::default() },
            seed: 0,
        }
    }
}

/// Outcome of one policy run on a bandit instance.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub trace: Trace,
    pub best_arm: usize,
}

/// Runs `policy` once over all arms of `inst`.
pub fn run_policy(policy: PoolPolicy, inst: &GaussianBanditInstance, params: &SsParams) -> Result<RunResult> {
    let configs = inst.configs();
    let ids: Vec<_> = (0..configs.len()).map(crate::domain::ConfigId).collect();
    let mut objective = inst.objective();
    let mut trace = Trace::new(inst.rng_seed);
    let best = {
        let mut writer = TraceWriter::new(&mut trace, policy.label());
        match policy {
            PoolPolicy::Ss => ss_run_into(&mut writer, None, &ids, &configs, params, &mut objective)?.1,
            PoolPolicy::Mss => {
                mss_run_into(&mut writer, None, &ids, &configs, params.min_budget, params, &mut objective)?.1
            }
            PoolPolicy::Sh => {
                let plan = sh_schedule(configs.len(), params.min_budget, params.eta)?;
                sh_run_into(&mut writer, None, &plan, &ids, &configs, &mut objective)?
            }
        }
    };
    Ok(RunResult { trace, best_arm: best })
}

/// Fraction of `runs` in which `policy` returns the true best arm of the
/// default `K`-arm instance.
pub fn accuracy_experiment(
    policy: PoolPolicy,
    num_arms: usize,
    sigma: f64,
    runs: usize,
    params: &BenchParams,
) -> Result<f64> {
    if runs == 0 {
        return Err(Error::InvalidArgument("runs must be >= 1".into()));
    }
    let mut hits = 0usize;
    for i in 0..runs {
        let inst = GaussianBanditInstance::new(num_arms, sigma, params.seed.wrapping_add(i as u64))?;
        if run_policy(policy, &inst, &params.ss)?.best_arm == inst.best_arm() {
            hits += 1;
        }
    }
    Ok(hits as f64 / runs as f64)
}

/// Per-policy summary of repeated runs on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretReport {
    pub policy: PoolPolicy,
    pub runs: usize,
    /// Mean over runs of the average-regret series, aligned on evaluation index.
    /// Step `i` averages over the runs that reached it.
    pub per_step_average_regret: Vec<f64>,
    pub min_average_regret: Vec<f64>,
    pub max_average_regret: Vec<f64>,
    /// Mean over runs of the cumulative-regret series.
    pub cumulative_regret: Vec<f64>,
    /// Mean pull count per arm.
    pub pulls_per_arm: Vec<f64>,
    /// Per run: did the policy return the best arm?
    pub best_arm_correct: Vec<bool>,
    /// Per run: last value of the average-regret series.
    pub final_average_regret: Vec<f64>,
    /// Per run, per step rows for CSV export.
    pub rows: Vec<RegretRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretRow {
    pub policy: String,
    pub run: usize,
    pub step: usize,
    pub budget_spent: f64,
    pub avg_regret: f64,
    pub cum_regret: f64,
}

/// Regret rows for one trace, `step` counted from 1.
pub fn regret_rows(trace: &Trace, inst: &GaussianBanditInstance, policy: &str, run: usize) -> Result<Vec<RegretRow>> {
    let avg = average_regret(trace, inst);
    let cum = cumulative_regret(trace, inst)?;
    let mut spent = 0.0;
    Ok(trace
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            spent += r.budget;
            RegretRow {
                policy: policy.to_string(),
                run,
                step: i + 1,
                budget_spent: spent,
                avg_regret: avg[i],
                cum_regret: cum[i],
            }
        })
        .collect())
}

/// Runs each policy `runs` times on fresh draws of `inst` (seed `params.seed + run`).
pub fn regret_curve_experiment(
    policies: &[PoolPolicy],
    inst: &GaussianBanditInstance,
    runs: usize,
    params: &BenchParams,
) -> Result<Vec<RegretReport>> {
    if runs == 0 {
        return Err(Error::InvalidArgument("runs must be >= 1".into()));
    }
    policies
        .iter()
        .map(|&policy| {
            let mut avg_series = Vec::with_capacity(runs);
            let mut cum_series = Vec::with_capacity(runs);
            let mut pulls = vec![0.0; inst.num_arms()];
            let mut correct = Vec::with_capacity(runs);
            let mut rows = Vec::new();
            for run in 0..runs {
                let seeded = GaussianBanditInstance {
                    rng_seed: params.seed.wrapping_add(run as u64),
                    ..inst.clone()
                };
                let result = run_policy(policy, &seeded, &params.ss)?;
                for k in trace_arms(&result.trace)? {
                    pulls[k] += 1.0 / runs as f64;
                }
                correct.push(result.best_arm == inst.best_arm());
                rows.extend(regret_rows(&result.trace, &seeded, policy.label(), run)?);
                avg_series.push(average_regret(&result.trace, &seeded));
                cum_series.push(cumulative_regret(&result.trace, &seeded)?);
            }
            let (mean, min, max) = envelope(&avg_series);
            let (cum_mean, _, _) = envelope(&cum_series);
            Ok(RegretReport {
                policy,
                runs,
                per_step_average_regret: mean,
                min_average_regret: min,
                max_average_regret: max,
                cumulative_regret: cum_mean,
                pulls_per_arm: pulls,
                best_arm_correct: correct,
                final_average_regret: avg_series.iter().map(|s| *s.last().unwrap_or(&0.0)).collect(),
                rows,
            })
        })
        .collect()
}

/// Pointwise mean/min/max over series of possibly different lengths.
fn envelope(series: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let len = series.iter().map(Vec::len).max().unwrap_or(0);
    let mut mean = Vec::with_capacity(len);
    let mut min = Vec::with_capacity(len);
    let mut max = Vec::with_capacity(len);
    for i in 0..len {
        let vals: Vec<f64> = series.iter().filter_map(|s| s.get(i).copied()).collect();
        mean.push(vals.iter().sum::<f64>() / vals.len() as f64);
        min.push(vals.iter().copied().fold(f64::INFINITY, f64::min));
        max.push(vals.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    (mean, min, max)
}

pub const CSV_HEADER: &str = "policy,run,step,budget_spent,avg_regret,cum_regret";

pub fn write_regret_csv<W: Write>(mut out: W, rows: &[RegretRow]) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.policy, r.run, r.step, r.budget_spent, r.avg_regret, r.cum_regret)?;
    }
    Ok(())
}

/// One-sided paired t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTTest {
    pub t: f64,
    pub df: f64,
    /// `P(T >= t)` under the null: small when `xs` tends to exceed `ys`.
    pub p_value: f64,
}

/// Paired t-test of `H1: mean(xs - ys) > 0`.
pub fn paired_t_test_one_sided(xs: &[f64], ys: &[f64]) -> Result<PairedTTest> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!("series lengths differ: {} vs {}", xs.len(), ys.len())));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::InvalidArgument("a paired t-test needs at least 2 pairs".into()));
    }
    let d: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::DegenerateTest("differences have zero variance".into()));
    }
    let t = mean / (var / n as f64).sqrt();
    let df = (n - 1) as f64;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(PairedTTest { t, df, p_value: dist.sf(t) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ConfigId, TrialRecord};

    fn trace_of(pulls: &[(usize, f64)]) -> Trace {
        let mut trace = Trace::new(0);
        for (i, &(k, loss)) in pulls.iter().enumerate() {
            trace.records.push(TrialRecord {
                seq: i as u64,
                policy: "test".into(),
                bracket: None,
                round: 1,
                config_id: ConfigId(k),
                config: arm_config(k),
                budget: 1.0,
                loss,
                failed: false,
                wall_time: i as f64,
            });
        }
        trace
    }

    #[test]
    fn pulls_without_noise_return_the_mean() {
        let inst = GaussianBanditInstance::with_means(vec![0.25, 0.5], 0.0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(arm_pull(&inst, 1, 3, &mut rng).unwrap(), 0.5);
        assert!(arm_pull(&inst, 1, 0, &mut rng).is_err());
        assert!(arm_pull(&inst, 2, 1, &mut rng).is_err());
    }

    #[test]
    fn pulls_are_reproducible() {
        let inst = GaussianBanditInstance::with_means(vec![0.0, 1.0], 1.0, 1).unwrap();
        let a = arm_pull(&inst, 0, 1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = arm_pull(&inst, 0, 1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pull_law_matches_variance_of_mean() {
        let inst = GaussianBanditInstance::with_means(vec![0.0, 1.0], 1.0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| arm_pull(&inst, 0, 4, &mut rng).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // stderr of the mean: sqrt(0.25 / n); of the variance: 0.25 * sqrt(2 / (n - 1))
        assert!(mean.abs() <= 3.0 * (0.25 / n as f64).sqrt());
        assert!((var - 0.25).abs() <= 3.0 * 0.25 * (2.0 / (n - 1) as f64).sqrt());
    }

    #[test]
    fn instance_validation() {
        assert!(GaussianBanditInstance::with_means(vec![0.0, 0.0, 1.0], 1.0, 0).is_err());
        assert!(GaussianBanditInstance::with_means(vec![0.0], 1.0, 0).is_err());
        let inst = GaussianBanditInstance::new(4, 1.0, 0).unwrap();
        assert_eq!(inst.means, vec![0.0, 0.25, 0.5, 0.75]);
        assert_eq!(inst.best_arm(), 0);
    }

    #[test]
    fn average_regret_examples() {
        let inst = GaussianBanditInstance::with_means(vec![0.1, 0.6], 1.0, 0).unwrap();
        let avg = average_regret(&trace_of(&[(1, 0.5), (0, 0.3)]), &inst);
        assert!((avg[0] - 0.4).abs() < 1e-15 && (avg[1] - 0.3).abs() < 1e-15);
        let zeros = average_regret(&trace_of(&[(0, 0.1), (0, 0.1), (0, 0.1)]), &inst);
        assert!(zeros.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn average_regret_three_arm_hand_computed() {
        // mu_* = 0; losses 0.9, 0.2, 0.4, 0.1 -> running sums .9, 1.1, 1.5, 1.6
        let inst = GaussianBanditInstance::with_means(vec![0.0, 0.3, 0.6], 1.0, 0).unwrap();
        let avg = average_regret(&trace_of(&[(2, 0.9), (0, 0.2), (1, 0.4), (0, 0.1)]), &inst);
        let expect = [0.9, 0.55, 0.5, 0.4];
        for (a, e) in avg.iter().zip(expect) {
            assert!((a - e).abs() < 1e-12, "{avg:?}");
        }
    }

    #[test]
    fn cumulative_regret_examples() {
        let inst = GaussianBanditInstance::with_means(vec![0.0, 0.5], 1.0, 0).unwrap();
        assert_eq!(cumulative_regret(&trace_of(&[(0, 9.0), (0, -3.0)]), &inst).unwrap(), vec![0.0, 0.0]);
        assert_eq!(cumulative_regret(&trace_of(&[(1, 0.0), (0, 0.0)]), &inst).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn t_test_examples() {
        let xs = [0.1, 0.2, 0.3];
        let t = paired_t_test_one_sided(&xs, &[0.0, 0.0, 0.0]).unwrap();
        assert!((t.t - 3.464_101_615_137_754).abs() < 1e-9);
        assert_eq!(t.df, 2.0);
        // df = 2 closed form: P(T >= t) = 1/2 - t / (2 sqrt(t^2 + 2))
        let oracle = 0.5 - t.t / (2.0 * (t.t * t.t + 2.0).sqrt());
        assert!((t.p_value - oracle).abs() < 1e-9);
        assert!((t.p_value - 0.0371).abs() < 1e-4);

        assert!(matches!(paired_t_test_one_sided(&xs, &xs), Err(Error::DegenerateTest(_))));
        let sym = paired_t_test_one_sided(&[1.0, -1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(sym.t, 0.0);
        assert!((sym.p_value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_run_envelope_collapses() {
        let inst = GaussianBanditInstance::new(9, 0.5, 3).unwrap();
        let params = BenchParams { ss: SsParams { limit: RoundLimit::Rounds(20), ..SsParams::default() }, seed: 3 };
        let reports = regret_curve_experiment(&[PoolPolicy::Ss], &inst, 1, &params).unwrap();
        let r = &reports[0];
        assert_eq!(r.per_step_average_regret, r.min_average_regret);
        assert_eq!(r.per_step_average_regret, r.max_average_regret);
        assert!(r.cumulative_regret.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn csv_layout() {
        let inst = GaussianBanditInstance::with_means(vec![0.0, 0.5], 1.0, 0).unwrap();
        let rows = regret_rows(&trace_of(&[(1, 0.5)]), &inst, "ss", 0).unwrap();
        let mut buf = Vec::new();
        write_regret_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "policy,run,step,budget_spent,avg_regret,cum_regret\nss,0,1,1,0.5,0.5\n");
    }
}
