//! Tree-structured Parzen estimator.
//!
//! Observations are split at the `γ`-quantile of their losses into a good set
//! and a bad set; `ℓ` and `g` are product kernel densities fitted on each.
//! Proposals maximize `ℓ(x) / g(x)` over candidates drawn from `ℓ`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::domain::{ConfigSpace, Configuration, ParamKind, ParamValue};
use crate::error::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 0.25;
pub const DEFAULT_CANDIDATES: usize = 24;

/// Losses observed at one fidelity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub points: Vec<(Configuration, f64)>,
    pub budget_tag: f64,
}

impl Dataset {
    pub fn new(budget_tag: f64) -> Self {
        Dataset { points: Vec::new(), budget_tag }
    }

    pub fn push(&mut self, config: Configuration, loss: f64) {
        self.points.push((config, loss));
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mean of the finite losses, the default constant-liar value.
    pub fn mean_loss(&self) -> Option<f64> {
        let finite: Vec<f64> = self.points.iter().map(|p| p.1).filter(|l| l.is_finite()).collect();
        (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64)
    }
}

/// One evaluation at any fidelity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub config: Configuration,
    pub loss: f64,
    pub budget: f64,
}

pub type Split = (Vec<(Configuration, f64)>, Vec<(Configuration, f64)>, f64);

/// Puts the `max(1, ⌈γn⌉)` lowest losses in the good set, keeping at least one
/// point in the bad set. Ties keep insertion order.
pub fn split_observations(data: &Dataset, gamma: f64) -> Result<Split> {
    let n = data.len();
    if n < 2 {
        return Err(Error::InsufficientData { have: n, need: 2 });
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("gamma must be in (0, 1), got {gamma}")));
    }
    let m = ((gamma * n as f64).ceil() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| data.points[a].1.total_cmp(&data.points[b].1));
    let good: Vec<_> = order[..m].iter().map(|&i| data.points[i].clone()).collect();
    let bad: Vec<_> = order[m..].iter().map(|&i| data.points[i].clone()).collect();
    let alpha = good.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    Ok((good, bad, alpha))
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Kernel {
    /// Truncated Gaussian mixture on `[lower, upper]`, in log-space when `log`.
    Real { centers: Vec<f64>, bandwidth: f64, lower: f64, upper: f64, log: bool },
    /// The mixture on `[lower - 0.5, upper + 0.5]`, integrated over unit cells.
    Integer { centers: Vec<f64>, bandwidth: f64, lower: i64, upper: i64 },
    Categorical { choices: Vec<String>, probs: Vec<f64> },
}

/// Weight of the uniform component mixed into every numeric kernel, which
/// keeps densities strictly positive far from the data.
const UNIFORM_FLOOR: f64 = 1e-3;

fn mixture_mass(centers: &[f64], h: f64, lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    centers
        .iter()
        .map(|&c| {
            let z = std_normal_cdf((hi - c) / h) - std_normal_cdf((lo - c) / h);
            (std_normal_cdf((b - c) / h) - std_normal_cdf((a - c) / h)) / z
        })
        .sum::<f64>()
        / centers.len() as f64
}

fn sample_truncated<R: Rng + ?Sized>(centers: &[f64], h: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    if rng.random::<f64>() < UNIFORM_FLOOR {
        return lo + (hi - lo) * rng.random::<f64>();
    }
    let c = centers[rng.random_range(0..centers.len())];
    // Centres lie inside the bounds, so each attempt succeeds with
    // probability at least one half.
    for _ in 0..64 {
        let x = c + h * rng.sample::<f64, _>(StandardNormal);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
    c
}

impl Kernel {
    fn pdf(&self, v: &ParamValue) -> Option<f64> {
        match (self, v) {
            (Kernel::Real { centers, bandwidth, lower, upper, log }, v) => {
                let x = v.as_f64()?;
                let (t, jac) = if *log { (x.ln(), 1.0 / x) } else { (x, 1.0) };
                let h = *bandwidth;
                let p = centers
                    .iter()
                    .map(|&c| {
                        let z = std_normal_cdf((upper - c) / h) - std_normal_cdf((lower - c) / h);
                        std_normal_pdf((t - c) / h) / (h * z)
                    })
                    .sum::<f64>()
                    / centers.len() as f64;
                let p = (1.0 - UNIFORM_FLOOR) * p + UNIFORM_FLOOR / (upper - lower);
                Some(p * jac)
            }
            (Kernel::Integer { centers, bandwidth, lower, upper }, ParamValue::Int(k)) => {
                let (lo, hi) = (*lower as f64 - 0.5, *upper as f64 + 0.5);
                let k = *k as f64;
                let p = mixture_mass(centers, *bandwidth, lo, hi, k - 0.5, k + 0.5);
                Some((1.0 - UNIFORM_FLOOR) * p + UNIFORM_FLOOR / (hi - lo))
            }
            (Kernel::Categorical { choices, probs }, ParamValue::Choice(c)) => {
                choices.iter().position(|x| x == c).map(|i| probs[i])
            }
            _ => None,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamValue {
        match self {
            Kernel::Real { centers, bandwidth, lower, upper, log } => {
                let t = sample_truncated(centers, *bandwidth, *lower, *upper, rng);
                if *log {
                    ParamValue::Real(t.exp().clamp(lower.exp(), upper.exp()))
                } else {
                    ParamValue::Real(t)
                }
            }
            Kernel::Integer { centers, bandwidth, lower, upper } => {
                let (lo, hi) = (*lower as f64 - 0.5, *upper as f64 + 0.5);
                let x = sample_truncated(centers, *bandwidth, lo, hi, rng);
                ParamValue::Int((x.round() as i64).clamp(*lower, *upper))
            }
            Kernel::Categorical { choices, probs } => {
                let mut u = rng.random::<f64>();
                for (c, p) in choices.iter().zip(probs) {
                    if u < *p {
                        return ParamValue::Choice(c.clone());
                    }
                    u -= p;
                }
                ParamValue::Choice(choices.last().expect("nonempty").clone())
            }
        }
    }
}

/// A product of independent per-parameter kernel densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    kernels: Vec<(String, Kernel)>,
    n_points: usize,
}

impl Density {
    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let values: BTreeMap<_, _> = self.kernels.iter().map(|(n, k)| (n.clone(), k.sample(rng))).collect();
        Configuration { values }
    }

    fn log_pdf_unchecked(&self, x: &Configuration) -> Result<f64> {
        let mut total = 0.0;
        for (name, k) in &self.kernels {
            let v = x.get(name).ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))?;
            let p = k
                .pdf(v)
                .ok_or_else(|| Error::InvalidArgument(format!("value {v} does not fit `{name}`")))?;
            total += p.ln();
        }
        Ok(total)
    }
}

fn scott_bandwidth(xs: &[f64], dim: usize, range: f64) -> f64 {
    let n = xs.len() as f64;
    let sd = if xs.len() < 2 {
        0.0
    } else {
        let m = xs.iter().sum::<f64>() / n;
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (n.powf(-1.0 / (dim as f64 + 4.0)) * sd).max(0.01 * range)
}

/// Fits a product kernel density to `points`.
///
/// Continuous parameters get truncated Gaussian kernels (log-space for
/// log-continuous ones), integers a Gaussian integrated over unit cells, and
/// categoricals add-one smoothed frequencies. Bandwidths follow Scott's rule,
/// floored at 1% of the parameter range. Numeric kernels carry a 0.1% uniform
/// component.
pub fn kde_fit(points: &[Configuration], space: &ConfigSpace) -> Result<Density> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("cannot fit a density to no points".into()));
    }
    for p in points {
        space.validate(p)?;
    }
    let dim = space.dim();
    let kernels = space
        .params()
        .iter()
        .map(|spec| {
            let vals = || points.iter().map(|p| p.get(&spec.name).expect("validated"));
            let kernel = match &spec.kind {
                ParamKind::Continuous { lower, upper } => {
                    let centers: Vec<f64> = vals().map(|v| v.as_f64().expect("validated")).collect();
                    let bandwidth = scott_bandwidth(&centers, dim, upper - lower);
                    Kernel::Real { centers, bandwidth, lower: *lower, upper: *upper, log: false }
                }
                ParamKind::LogContinuous { lower, upper } => {
                    let centers: Vec<f64> = vals().map(|v| v.as_f64().expect("validated").ln()).collect();
                    let (lo, hi) = (lower.ln(), upper.ln());
                    let bandwidth = scott_bandwidth(&centers, dim, hi - lo);
                    Kernel::Real { centers, bandwidth, lower: lo, upper: hi, log: true }
                }
                ParamKind::Integer { lower, upper } => {
                    let centers: Vec<f64> = vals().map(|v| v.as_f64().expect("validated")).collect();
                    let bandwidth = scott_bandwidth(&centers, dim, (upper - lower + 1) as f64);
                    Kernel::Integer { centers, bandwidth, lower: *lower, upper: *upper }
                }
                ParamKind::Categorical { choices } => {
                    let mut counts = vec![1.0; choices.len()];
                    for v in vals() {
                        if let ParamValue::Choice(c) = v {
                            counts[choices.iter().position(|x| x == c).expect("validated")] += 1.0;
                        }
                    }
                    let total: f64 = counts.iter().sum();
                    Kernel::Categorical { choices: choices.clone(), probs: counts.iter().map(|c| c / total).collect() }
                }
            };
            (spec.name.clone(), kernel)
        })
        .collect();
    Ok(Density { kernels, n_points: points.len() })
}

/// Evaluates a fitted density at `x`. Log-continuous parameters are measured
/// in their natural units, so the Jacobian `1/x` is included.
pub fn density_pdf(density: &Density, x: &Configuration, space: &ConfigSpace) -> Result<f64> {
    space.validate(x)?;
    Ok(density.log_pdf_unchecked(x)?.exp())
}

/// Fitted good/bad densities with their split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpeModel {
    pub good_density: Density,
    pub bad_density: Density,
    pub alpha: f64,
    pub gamma: f64,
    pub space: ConfigSpace,
    pub good_losses: Vec<f64>,
    pub bad_losses: Vec<f64>,
    pub budget: f64,
}

/// Observations needed before a model replaces uniform sampling.
pub fn min_fit_points(space: &ConfigSpace) -> usize {
    space.dim() + 2
}

pub fn tpe_fit(data: &Dataset, gamma: f64, space: &ConfigSpace) -> Result<TpeModel> {
    let need = min_fit_points(space);
    if data.len() < need {
        return Err(Error::InsufficientData { have: data.len(), need });
    }
    let (good, bad, alpha) = split_observations(data, gamma)?;
    let fit = |set: &[(Configuration, f64)]| {
        let pts: Vec<Configuration> = set.iter().map(|p| p.0.clone()).collect();
        kde_fit(&pts, space)
    };
    Ok(TpeModel {
        good_density: fit(&good)?,
        bad_density: fit(&bad)?,
        alpha,
        gamma,
        space: space.clone(),
        good_losses: good.iter().map(|p| p.1).collect(),
        bad_losses: bad.iter().map(|p| p.1).collect(),
        budget: data.budget_tag,
    })
}

/// Fits on the largest budget with at least [`min_fit_points`] observations.
pub fn tpe_fit_budget_conditioned(observations: &[Observation], gamma: f64, space: &ConfigSpace) -> Result<TpeModel> {
    let need = min_fit_points(space);
    let mut budgets: Vec<f64> = observations.iter().map(|o| o.budget).collect();
    budgets.sort_by(|a, b| b.total_cmp(a));
    budgets.dedup();
    for b in budgets {
        let mut data = Dataset::new(b);
        for o in observations.iter().filter(|o| o.budget == b) {
            data.push(o.config.clone(), o.loss);
        }
        if data.len() >= need {
            return tpe_fit(&data, gamma, space);
        }
    }
    Err(Error::InsufficientData { have: observations.len(), need })
}

impl TpeModel {
    /// `ln ℓ(x) - ln g(x)`.
    pub fn log_ratio(&self, x: &Configuration) -> Result<f64> {
        self.space.validate(x)?;
        Ok(self.good_density.log_pdf_unchecked(x)? - self.bad_density.log_pdf_unchecked(x)?)
    }

    /// Index of the candidate with the largest `ℓ/g`; the first wins ties.
    pub fn best_candidate(&self, candidates: &[Configuration]) -> Result<usize> {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, c) in candidates.iter().enumerate() {
            let r = self.log_ratio(c)?;
            if r > best.1 {
                best = (i, r);
            }
        }
        if candidates.is_empty() {
            return Err(Error::InvalidArgument("no candidates".into()));
        }
        Ok(best.0)
    }
}

/// Draws `n_candidates` points from `ℓ` and returns the one maximizing `ℓ/g`.
pub fn tpe_propose<R: Rng + ?Sized>(model: &TpeModel, n_candidates: usize, rng: &mut R) -> Configuration {
    let candidates: Vec<Configuration> = (0..n_candidates.max(1)).map(|_| model.good_density.sample(rng)).collect();
    let i = model.best_candidate(&candidates).expect("samples lie in the space");
    candidates.into_iter().nth(i).expect("index in range")
}

/// Monte-Carlo mean of `max(α - y, 0)` over samples of `y`.
pub fn ei_from_samples(alpha: f64, ys: &[f64]) -> f64 {
    if ys.is_empty() {
        return 0.0;
    }
    ys.iter().map(|y| (alpha - y).max(0.0)).sum::<f64>() / ys.len() as f64
}

/// Expected improvement below `α` under the model's `p(y|x)`.
///
/// `y` is drawn from the good set's losses with probability proportional to
/// `γ ℓ(x)`, and from the bad set's losses with weight `(1 - γ) g(x)`.
pub fn ei_value<R: Rng + ?Sized>(model: &TpeModel, x: &Configuration, n_mc: usize, rng: &mut R) -> Result<f64> {
    let lr = model.log_ratio(x)?;
    // γℓ / (γℓ + (1-γ)g), computed from the log ratio to avoid underflow.
    let w = 1.0 / (1.0 + (((1.0 - model.gamma) / model.gamma).ln() - lr).exp());
    let mut ys = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let set = if rng.random::<f64>() < w { &model.good_losses } else { &model.bad_losses };
        ys.push(set[rng.random_range(0..set.len())]);
    }
    Ok(ei_from_samples(model.alpha, &ys))
}

/// Appends `(c, liar)` for every pending configuration.
pub fn constant_liar_augment(data: &Dataset, pending: &[Configuration], liar: f64) -> Dataset {
    let mut out = data.clone();
    out.points.extend(pending.iter().map(|c| (c.clone(), liar)));
    out
}
