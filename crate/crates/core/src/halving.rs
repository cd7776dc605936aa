//! Successive halving and HyperBand.

use serde::{Deserialize, Serialize};

use crate::domain::{ConfigId, Configuration, Objective, Trace, TraceWriter};
use crate::error::{Error, Result};
use crate::num::{ceil_tol, floor_log, floor_tol};

/// One successive-halving bracket: `rounds[r] = (K_r, b_r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketPlan {
    pub s: u32,
    pub num_configs: usize,
    pub min_budget: f64,
    pub rounds: Vec<(usize, f64)>,
}

impl BracketPlan {
    /// Rounds `r = 0..=s` with `K_r = floor(K eta^-r)` and `b_r = b eta^r`.
    pub fn new(s: u32, num_configs: usize, min_budget: f64, eta: f64) -> Self {
        let rounds = (0..=s)
            .map(|r| {
                let k = floor_tol(num_configs as f64 * eta.powi(-(r as i32))).max(1);
                (k, min_budget * eta.powi(r as i32))
            })
            .collect();
        BracketPlan { s, num_configs, min_budget, rounds }
    }

    /// `K * b * s`, the nominal bracket budget used by the classic formulation.
    pub fn nominal_budget(&self) -> f64 {
        self.num_configs as f64 * self.min_budget * self.s as f64
    }

    /// What the rounds actually spend: `sum_r K_r b_r`.
    pub fn total_cost(&self) -> f64 {
        self.rounds.iter().map(|&(k, b)| k as f64 * b).sum()
    }

    pub fn evaluations(&self) -> usize {
        self.rounds.iter().map(|&(k, _)| k).sum()
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 1.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("eta must be > 1, got {eta}")))
    }
}

/// Successive-halving schedule for `num_configs` configurations, `s = floor(log_eta K)`.
pub fn sh_schedule(num_configs: usize, min_budget: f64, eta: f64) -> Result<BracketPlan> {
    if num_configs == 0 {
        return Err(Error::InvalidArgument("successive halving needs K >= 1".into()));
    }
    check_eta(eta)?;
    if !(min_budget > 0.0) {
        return Err(Error::InvalidArgument(format!("min budget must be > 0, got {min_budget}")));
    }
    let s = floor_log(num_configs as f64, eta);
    Ok(BracketPlan::new(s, num_configs, min_budget, eta))
}

/// HyperBand brackets `s = s_max..=0` for maximum budget `R`:
/// `K = ceil(B eta^s / (R (s+1)))`, `b = R eta^-s`, with `B = (s_max + 1) R`.
pub fn hb_schedule(max_budget: f64, eta: f64) -> Result<Vec<BracketPlan>> {
    check_eta(eta)?;
    if !(max_budget >= 1.0 && max_budget.is_finite()) {
        return Err(Error::InvalidArgument(format!("max budget must be >= 1, got {max_budget}")));
    }
    let s_max = floor_log(max_budget, eta);
    let total = (s_max + 1) as f64 * max_budget;
    Ok((0..=s_max)
        .rev()
        .map(|s| {
            let k = ceil_tol(total * eta.powi(s as i32) / (max_budget * (s + 1) as f64));
            let b = max_budget * eta.powi(-(s as i32));
            BracketPlan::new(s, k, b, eta)
        })
        .collect())
}

/// Result of a halving run over one pool.
#[derive(Debug, Clone)]
pub struct ShOutcome {
    pub trace: Trace,
    /// Index into the pool of the last survivor.
    pub best: usize,
}

/// Successive halving over `configs` (ids `0..K`).
pub fn sh_run<O: Objective + ?Sized>(
    configs: &[Configuration],
    min_budget: f64,
    eta: f64,
    objective: &mut O,
) -> Result<ShOutcome> {
    let plan = sh_schedule(configs.len(), min_budget, eta)?;
    let ids: Vec<ConfigId> = (0..configs.len()).map(ConfigId).collect();
    let mut trace = Trace::new(0);
    let mut writer = TraceWriter::new(&mut trace, "sh");
    let best = sh_run_into(&mut writer, None, &plan, &ids, configs, objective)?;
    Ok(ShOutcome { trace, best })
}

/// Runs `plan` over the pool; returns the index of the surviving configuration.
///
/// Only the current round's loss is compared. After round `r` the
/// `K_{r+1}` lowest losses survive, ties to the smaller config id.
pub(crate) fn sh_run_into<O: Objective + ?Sized>(
    writer: &mut TraceWriter<'_>,
    bracket: Option<u32>,
    plan: &BracketPlan,
    ids: &[ConfigId],
    configs: &[Configuration],
    objective: &mut O,
) -> Result<usize> {
    if configs.len() != plan.num_configs || ids.len() != configs.len() {
        return Err(Error::InvalidArgument(format!(
            "plan expects {} configurations, got {}",
            plan.num_configs,
            configs.len()
        )));
    }
    let mut alive: Vec<usize> = (0..configs.len()).collect();
    for (r, &(_, budget)) in plan.rounds.iter().enumerate() {
        let mut scored: Vec<(f64, usize)> = alive
            .iter()
            .map(|&k| (writer.evaluate(objective, bracket, r as u32, ids[k], &configs[k], budget), k))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(ids[a.1].cmp(&ids[b.1])));
        let keep = plan.rounds.get(r + 1).map_or(1, |&(k, _)| k);
        alive = scored.into_iter().take(keep.max(1)).map(|(_, k)| k).collect();
    }
    Ok(alive[0])
}

/// Result of a HyperBand run.
#[derive(Debug, Clone)]
pub struct HbOutcome {
    pub trace: Trace,
    /// Every configuration sampled, indexed by `ConfigId`.
    pub configs: Vec<Configuration>,
    /// Lowest loss observed at the maximum budget.
    pub best: Option<ConfigId>,
}

/// HyperBand: one pass over [`hb_schedule`], sampling fresh configurations for each bracket.
pub fn hb_run<O, S>(max_budget: f64, eta: f64, mut sampler: S, objective: &mut O) -> Result<HbOutcome>
where
    O: Objective + ?Sized,
    S: FnMut() -> Configuration,
{
    let brackets = hb_schedule(max_budget, eta)?;
    let mut trace = Trace::new(0);
    let mut all = Vec::new();
    {
        let mut writer = TraceWriter::new(&mut trace, "hb");
        for plan in &brackets {
            let start = all.len();
            let configs: Vec<Configuration> = (0..plan.num_configs).map(|_| sampler()).collect();
            let ids: Vec<ConfigId> = (start..start + configs.len()).map(ConfigId).collect();
            sh_run_into(&mut writer, Some(plan.s), plan, &ids, &configs, objective)?;
            all.extend(configs);
        }
    }
    let best = trace.best_at_max_budget().map(|r| r.config_id);
    Ok(HbOutcome { trace, configs: all, best })
}
