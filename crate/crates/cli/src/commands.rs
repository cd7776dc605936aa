use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use boss_core::bench::{
    regret_rows, run_policy, write_regret_csv, GaussianBanditInstance, PoolPolicy, BENCH_SS_ROUNDS,
};
use boss_core::halving::{hb_run, sh_run};
use boss_core::orchestrator::{
    bohb_run, boss_run, bracket_plans, parallel_boss_run, BossOptions, InnerPolicy, ParallelOptions,
    SharedObjective, ThreadPool,
};
use boss_core::subsample::{mss_run, ss_run, BudgetSchedule, QnRule, RoundLimit, SsParams};
use boss_core::surrogate::{DEFAULT_CANDIDATES, DEFAULT_GAMMA};
use boss_core::theory::{kl_divergence, rate_function, regret_lower_bound, ss_regret_upper_bound, ExpFamily};
use boss_core::{ConfigId, Configuration, Event, EventSink, NoEvents, Trace};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::external::run_external_objective;
use crate::space::parse_space_file;
use crate::tracefile::{read_trace, write_trace, InstanceInfo, RunParams, TraceHeader, SCHEMA};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "boss", version, about = "Multi-fidelity hyperparameter search and bandit experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tune an external objective over a search space.
    Tune(TuneArgs),
    /// Run policies on synthetic Gaussian arms and write regret curves.
    Bench(BenchArgs),
    /// Regret constants and rate functions of an arm instance.
    Bounds(BoundsArgs),
    /// Recompute the regret CSV of a bandit trace file.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TunePolicy {
    Ss,
    Mss,
    Sh,
    Hb,
    Bohb,
    Boss,
    ParallelBoss,
}

impl TunePolicy {
    fn label(self) -> &'static str {
        match self {
            TunePolicy::Ss => "ss",
            TunePolicy::Mss => "mss",
            TunePolicy::Sh => "sh",
            TunePolicy::Hb => "hb",
            TunePolicy::Bohb => "bohb",
            TunePolicy::Boss => "boss",
            TunePolicy::ParallelBoss => "parallel-boss",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Inner {
    Ss,
    Mss,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long, value_enum)]
    pub policy: TunePolicy,
    /// Search-space file (TOML).
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long = "max-budget", default_value_t = 27.0)]
    pub max_budget: f64,
    #[arg(long = "min-budget", default_value_t = 1.0)]
    pub min_budget: f64,
    #[arg(long, default_value_t = 3.0)]
    pub eta: f64,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Concurrent objective processes (parallel-boss only).
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Wall-clock seconds after which no new evaluation starts (parallel-boss only).
    #[arg(long = "max-duration")]
    pub max_duration: Option<f64>,
    /// Passes over the bracket schedule (bohb, boss, parallel-boss without --max-duration).
    #[arg(long, default_value_t = 1)]
    pub iterations: usize,
    /// Pool size for ss, mss and sh.
    #[arg(long, default_value_t = 27)]
    pub configs: usize,
    /// Candidates drawn per model-based proposal.
    #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
    pub candidates: usize,
    /// Evaluator inside BOSS brackets.
    #[arg(long, value_enum, default_value = "ss")]
    pub inner: Inner,
    /// Per-evaluation timeout in seconds; overrides the space file.
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long, env = "BOSS_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Trace file (JSON lines).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print scheduler events to stderr as JSON lines.
    #[arg(long)]
    pub events: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated list of ss, mss, sh.
    #[arg(long, value_delimiter = ',', default_value = "ss")]
    pub policy: Vec<PoolPolicy>,
    #[arg(long, default_value_t = 27)]
    pub arms: usize,
    /// Arm means; overrides `mu_k = k / K`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub means: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 50)]
    pub runs: usize,
    /// Run `i` uses seed `seed + i`.
    #[arg(long, env = "BOSS_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "max-budget", default_value_t = 27.0)]
    pub max_budget: f64,
    #[arg(long = "min-budget", default_value_t = 1.0)]
    pub min_budget: f64,
    #[arg(long, default_value_t = 3.0)]
    pub eta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Adaptive rounds of ss and mss pools.
    #[arg(long, default_value_t = BENCH_SS_ROUNDS)]
    pub rounds: u64,
    /// Regret CSV; written to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory receiving one trace file per policy and run.
    #[arg(long)]
    pub traces: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Gaussian,
    Bernoulli,
    Poisson,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Arm means, comma separated.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub means: Vec<f64>,
    /// Shared standard deviation (gaussian only).
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub family: Family,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Trace file written by `bench --traces` or `tune --out`.
    #[arg(long)]
    pub trace: PathBuf,
    /// Arm means, when the trace header has none.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub means: Option<Vec<f64>>,
    /// Run index in the CSV; defaults to the header's.
    #[arg(long)]
    pub run: Option<usize>,
    /// Regret CSV; written to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Tune(a) => tune(&a),
        Command::Bench(a) => bench(&a),
        Command::Bounds(a) => bounds(&a),
        Command::Report(a) => report(&a),
    }
}

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn tune(a: &TuneArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.space).map_err(|e| io_err(&a.space, e))?;
    let file = parse_space_file(&text).map_err(|e| CliError::Usage(format!("{}: {e}", a.space.display())))?;
    let spec = file
        .objective
        .ok_or_else(|| CliError::Usage(format!("{}: no [objective] section", a.space.display())))?;
    let timeout = match a.timeout {
        Some(t) if t > 0.0 && t.is_finite() => Some(Duration::from_secs_f64(t)),
        Some(t) => return Err(CliError::Usage(format!("--timeout must be positive, got {t}"))),
        None => spec.timeout,
    };
    if a.workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let space = file.space;
    let (command, direction) = (spec.command, spec.direction);
    let shared: SharedObjective =
        Arc::new(move |c: &Configuration, b: f64| run_external_objective(&command, c, b, timeout).map(|v| direction.to_loss(v)));
    let mut objective = {
        let shared = Arc::clone(&shared);
        move |c: &Configuration, b: f64| shared(c, b)
    };
    let mut sink: Box<dyn EventSink> = if a.events {
        Box::new(|e: &Event| eprintln!("{}", serde_json::to_string(e).unwrap_or_default()))
    } else {
        Box::new(NoEvents)
    };

    let ss_params = SsParams {
        eta: a.eta,
        min_budget: a.min_budget,
        max_budget: a.max_budget,
        qn_rule: QnRule::SqrtLog,
        beta: a.beta,
        schedule: BudgetSchedule::Literal,
        limit: RoundLimit::Budget,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let pool = |rng: &mut ChaCha8Rng| -> Vec<Configuration> {
        (0..a.configs).map(|_| space.sample_uniform(rng)).collect()
    };

    // The returned configuration and the loss it is reported with.
    let (mut trace, best): (Trace, Option<(ConfigId, f64)>) = match a.policy {
        TunePolicy::Ss | TunePolicy::Mss => {
            let configs = pool(&mut rng);
            let out = if a.policy == TunePolicy::Ss {
                ss_run(&configs, &ss_params, &mut objective)?
            } else {
                mss_run(&configs, a.min_budget, &ss_params, &mut objective)?
            };
            let arm = &out.arms[out.best];
            (out.trace, Some((arm.config_id(), arm.mean())))
        }
        TunePolicy::Sh => {
            let configs = pool(&mut rng);
            let out = sh_run(&configs, a.min_budget, a.eta, &mut objective)?;
            let id = ConfigId(out.best);
            let last = out.trace.records.iter().rev().find(|r| r.config_id == id).map_or(f64::INFINITY, |r| r.loss);
            (out.trace, Some((id, last)))
        }
        TunePolicy::Hb => {
            // HyperBand over R / r_min with budgets scaled back by r_min.
            let r_min = a.min_budget;
            if !(r_min > 0.0) {
                return Err(CliError::Usage(format!("--min-budget must be > 0, got {r_min}")));
            }
            let mut scaled = |c: &Configuration, b: f64| objective(c, b * r_min);
            let mut out = hb_run(a.max_budget / r_min, a.eta, || space.sample_uniform(&mut rng), &mut scaled)?;
            for r in &mut out.trace.records {
                r.budget *= r_min;
                r.wall_time *= r_min;
            }
            let best = out.trace.best_at_max_budget().map(|r| (r.config_id, r.loss));
            (out.trace, best)
        }
        TunePolicy::Bohb | TunePolicy::Boss => {
            let opts = BossOptions {
                max_budget: a.max_budget,
                min_budget: a.min_budget,
                eta: a.eta,
                gamma: a.gamma,
                n_candidates: a.candidates,
                iterations: a.iterations,
                seed: a.seed,
                qn_rule: QnRule::SqrtLog,
                beta: a.beta,
                schedule: BudgetSchedule::Literal,
                inner: match a.inner {
                    Inner::Ss => InnerPolicy::Ss,
                    Inner::Mss => InnerPolicy::Mss,
                },
            };
            let out = if a.policy == TunePolicy::Boss {
                boss_run(&space, &opts, &mut objective, &mut *sink)?
            } else {
                bohb_run(&space, &opts, &mut objective, &mut *sink)?
            };
            let best = out.best.map(|r| (r.config_id, r.loss));
            (out.trace, best)
        }
        TunePolicy::ParallelBoss => {
            let max_brackets = match a.max_duration {
                Some(_) => None,
                None => Some(a.iterations * bracket_plans(a.max_budget, a.min_budget, a.eta)?.len()),
            };
            let opts = ParallelOptions {
                max_budget: a.max_budget,
                min_budget: a.min_budget,
                eta: a.eta,
                max_duration: a.max_duration.unwrap_or(f64::INFINITY),
                gamma: a.gamma,
                n_candidates: a.candidates,
                qn_rule: QnRule::SqrtLog,
                beta: a.beta,
                seed: a.seed,
                max_brackets,
            };
            let mut workers = ThreadPool::new(a.workers, Arc::clone(&shared));
            let out = parallel_boss_run(&space, &opts, &mut workers, &mut *sink)?;
            let best = out.best.map(|r| (r.config_id, r.loss));
            (out.trace, best)
        }
    };
    trace.rng_seed = a.seed;

    if let Some(path) = &a.out {
        let header = TraceHeader {
            schema: SCHEMA.into(),
            seed: a.seed,
            policy: a.policy.label().into(),
            params: RunParams {
                max_budget: a.max_budget,
                min_budget: a.min_budget,
                eta: a.eta,
                gamma: a.gamma,
                beta: a.beta,
                qn_rule: QnRule::SqrtLog,
            },
            instance: None,
            run: None,
        };
        write_trace(create(path)?, &header, &trace).map_err(|e| io_err(path, e))?;
    }

    let failed = trace.records.iter().filter(|r| r.failed).count();
    println!(
        "{}: {} evaluations ({} failed), total budget {}",
        a.policy.label(),
        trace.len(),
        failed,
        trace.total_budget()
    );
    if failed == trace.len() {
        return Err(CliError::Evaluation("no evaluation succeeded".into()));
    }
    if let Some((id, loss)) = best {
        let config = trace.records.iter().find(|r| r.config_id == id).map(|r| &r.config);
        println!("best configuration {}: loss {}", id.0, direction.to_loss(loss));
        if let Some(c) = config {
            println!("{}", serde_json::to_string(c).unwrap_or_default());
        }
    }
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<(), CliError> {
    if a.runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    let base = match &a.means {
        Some(m) => GaussianBanditInstance::with_means(m.clone(), a.sigma, a.seed)?,
        None => GaussianBanditInstance::new(a.arms, a.sigma, a.seed)?,
    };
    let params = SsParams {
        eta: a.eta,
        min_budget: a.min_budget,
        max_budget: a.max_budget,
        qn_rule: QnRule::SqrtLog,
        beta: a.beta,
        schedule: BudgetSchedule::Literal,
        limit: RoundLimit::Rounds(a.rounds),
    };
    params.validate()?;
    if let Some(dir) = &a.traces {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &policy in &a.policy {
        let (mut hits, mut final_regret) = (0usize, 0.0);
        for run in 0..a.runs {
            let inst = GaussianBanditInstance { rng_seed: a.seed.wrapping_add(run as u64), ..base.clone() };
            let result = run_policy(policy, &inst, &params)?;
            hits += (result.best_arm == inst.best_arm()) as usize;
            let run_rows = regret_rows(&result.trace, &inst, policy.label(), run)?;
            final_regret += run_rows.last().map_or(0.0, |r| r.avg_regret) / a.runs as f64;
            rows.extend(run_rows);
            if let Some(dir) = &a.traces {
                let header = TraceHeader {
                    schema: SCHEMA.into(),
                    seed: inst.rng_seed,
                    policy: policy.label().into(),
                    params: RunParams {
                        max_budget: a.max_budget,
                        min_budget: a.min_budget,
                        eta: a.eta,
                        gamma: DEFAULT_GAMMA,
                        beta: a.beta,
                        qn_rule: QnRule::SqrtLog,
                    },
                    instance: Some(InstanceInfo { means: inst.means.clone(), sigma: inst.sigma }),
                    run: Some(run),
                };
                let path = dir.join(format!("{}-{run}.jsonl", policy.label()));
                write_trace(create(&path)?, &header, &result.trace).map_err(|e| io_err(&path, e))?;
            }
        }
        summary.push(format!(
            "{}: accuracy {:.2} ({hits}/{} runs), mean final average regret {:.4}",
            policy.label(),
            hits as f64 / a.runs as f64,
            a.runs,
            final_regret
        ));
    }

    match &a.out {
        Some(path) => {
            write_regret_csv(create(path)?, &rows).map_err(|e| io_err(path, e))?;
            for line in &summary {
                println!("{line}");
            }
        }
        None => {
            write_regret_csv(BufWriter::new(io::stdout().lock()), &rows)
                .map_err(|e| CliError::Usage(format!("stdout: {e}")))?;
            for line in &summary {
                eprintln!("{line}");
            }
        }
    }
    Ok(())
}

fn bounds(a: &BoundsArgs) -> Result<(), CliError> {
    let fams = a
        .means
        .iter()
        .map(|&m| match a.family {
            Family::Gaussian => ExpFamily::gaussian(m, a.sigma),
            Family::Bernoulli => ExpFamily::bernoulli(m),
            Family::Poisson => ExpFamily::poisson(m),
        })
        .collect::<Result<Vec<_>, _>>()?;
    if fams.len() < 2 {
        return Err(CliError::Usage("--means needs at least two arms".into()));
    }
    let lower = regret_lower_bound(&fams)?;
    let upper = ss_regret_upper_bound(&fams)?;
    let star = (0..fams.len()).min_by(|&i, &j| a.means[i].total_cmp(&a.means[j])).expect("two arms");

    let mut out = io::stdout().lock();
    let w = |out: &mut io::StdoutLock, s: String| writeln!(out, "{s}").map_err(|e| CliError::Usage(format!("stdout: {e}")));
    w(&mut out, format!("lower bound: {lower:.10}"))?;
    w(&mut out, format!("ss upper bound: {upper:.10}"))?;
    w(&mut out, "arm,mean,gap,kl_to_best,rate_at_mean".into())?;
    for (k, f) in fams.iter().enumerate() {
        let kl = kl_divergence(f, &fams[star])?;
        let rate = rate_function(a.means[k], &fams[star])?;
        w(&mut out, format!("{k},{},{},{kl},{rate}", a.means[k], a.means[k] - a.means[star]))?;
    }
    Ok(())
}

fn report(a: &ReportArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.trace).map_err(|e| io_err(&a.trace, e))?;
    let (header, trace) = read_trace(&text).map_err(|e| CliError::Usage(format!("{}: {e}", a.trace.display())))?;
    let (means, sigma) = match (&a.means, &header.instance) {
        (Some(m), _) => (m.clone(), header.instance.as_ref().map_or(0.0, |i| i.sigma)),
        (None, Some(i)) => (i.means.clone(), i.sigma),
        (None, None) => {
            return Err(CliError::Usage(format!(
                "{}: the trace has no arm means; pass --means",
                a.trace.display()
            )))
        }
    };
    let inst = GaussianBanditInstance::with_means(means, sigma, header.seed)?;
    if trace.is_empty() {
        return Err(CliError::Usage(format!("{}: the trace has no records", a.trace.display())));
    }
    let run = a.run.or(header.run).unwrap_or(0);
    let rows = regret_rows(&trace, &inst, &header.policy, run)?;
    match &a.out {
        Some(path) => write_regret_csv(create(path)?, &rows).map_err(|e| io_err(path, e)),
        None => write_regret_csv(BufWriter::new(io::stdout().lock()), &rows)
            .map_err(|e| CliError::Usage(format!("stdout: {e}"))),
    }
}
