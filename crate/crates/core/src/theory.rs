//! One-parameter exponential families `f(y) = exp((θy - g(θ)) / φ) h(y, φ)`
//! and the asymptotic regret constants built on them.
//!
//! The mean is `μ = g'(θ)` and `b = (g')⁻¹` maps a mean back to its natural
//! parameter. The large-deviation rate function of arm `k` is
//! `I_k(a) = [(b(a) - θ_k) a - (g(b(a)) - g(θ_k))] / φ_k`, the maximum over
//! `t` of `J_k(t) = [(t - θ_k) a - (g(t) - g(θ_k))] / φ_k`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-partition function of a user-supplied family.
pub trait LogPartition: Send + Sync {
    fn g(&self, theta: f64) -> f64;
    fn g_prime(&self, theta: f64) -> f64;
    fn g_second(&self, theta: f64) -> f64;
    /// `(g')⁻¹(mu)`, when available in closed form. `None` selects the
    /// numeric maximization of `J`.
    fn inverse_link(&self, _mu: f64) -> Option<f64> {
        None
    }
    fn in_mean_domain(&self, mu: f64) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyTag {
    GaussianKnownVariance,
    Bernoulli,
    Poisson,
    Custom,
}

#[derive(Clone)]
enum Partition {
    Gaussian,
    Bernoulli,
    Poisson,
    Custom(Arc<dyn LogPartition>),
}

/// An exponential-family arm distribution. The base measure `h` is implied by
/// the tag and never evaluated.
#[derive(Clone)]
pub struct ExpFamily {
    pub theta: f64,
    pub phi: f64,
    partition: Partition,
}

impl fmt::Debug for ExpFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExpFamily")
            .field("tag", &self.tag())
            .field("theta", &self.theta)
            .field("phi", &self.phi)
            .finish()
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ExpFamily {
    /// `N(mu, sigma²)` with known variance: `θ = μ`, `φ = σ²`, `g(θ) = θ²/2`.
    pub fn gaussian(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite() && mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("need finite mu and sigma > 0, got {mu}, {sigma}")));
        }
        Ok(ExpFamily { theta: mu, phi: sigma * sigma, partition: Partition::Gaussian })
    }

    /// `Bernoulli(p)`: `θ = logit p`, `g(θ) = ln(1 + e^θ)`.
    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!("Bernoulli p must be in (0, 1), got {p}")));
        }
        Ok(ExpFamily { theta: (p / (1.0 - p)).ln(), phi: 1.0, partition: Partition::Bernoulli })
    }

    /// `Poisson(λ)`: `θ = ln λ`, `g(θ) = e^θ`.
    pub fn poisson(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("Poisson rate must be > 0, got {lambda}")));
        }
        Ok(ExpFamily { theta: lambda.ln(), phi: 1.0, partition: Partition::Poisson })
    }

    pub fn custom(theta: f64, phi: f64, partition: Arc<dyn LogPartition>) -> Result<Self> {
        if !(phi > 0.0) {
            return Err(Error::InvalidArgument(format!("dispersion must be > 0, got {phi}")));
        }
        if !(partition.g_second(theta) > 0.0) {
            return Err(Error::InvalidArgument("g'' must be positive at theta".into()));
        }
        Ok(ExpFamily { theta, phi, partition: Partition::Custom(partition) })
    }

    pub fn tag(&self) -> FamilyTag {
        match self.partition {
            Partition::Gaussian => FamilyTag::GaussianKnownVariance,
            Partition::Bernoulli => FamilyTag::Bernoulli,
            Partition::Poisson => FamilyTag::Poisson,
            Partition::Custom(_) => FamilyTag::Custom,
        }
    }

    pub fn g(&self, theta: f64) -> f64 {
        match &self.partition {
            Partition::Gaussian => theta * theta / 2.0,
            Partition::Bernoulli => softplus(theta),
            Partition::Poisson => theta.exp(),
            Partition::Custom(p) => p.g(theta),
        }
    }

    pub fn g_prime(&self, theta: f64) -> f64 {
        match &self.partition {
            Partition::Gaussian => theta,
            Partition::Bernoulli => sigmoid(theta),
            Partition::Poisson => theta.exp(),
            Partition::Custom(p) => p.g_prime(theta),
        }
    }

    pub fn g_second(&self, theta: f64) -> f64 {
        match &self.partition {
            Partition::Gaussian => 1.0,
            Partition::Bernoulli => {
                let s = sigmoid(theta);
                s * (1.0 - s)
            }
            Partition::Poisson => theta.exp(),
            Partition::Custom(p) => p.g_second(theta),
        }
    }

    pub fn mean(&self) -> f64 {
        self.g_prime(self.theta)
    }

    pub fn variance(&self) -> f64 {
        self.phi * self.g_second(self.theta)
    }

    pub fn in_mean_domain(&self, mu: f64) -> bool {
        match &self.partition {
            Partition::Gaussian => mu.is_finite(),
            Partition::Bernoulli => mu > 0.0 && mu < 1.0,
            Partition::Poisson => mu > 0.0 && mu.is_finite(),
            Partition::Custom(p) => p.in_mean_domain(mu),
        }
    }

    fn closed_inverse_link(&self, mu: f64) -> Option<f64> {
        match &self.partition {
            Partition::Gaussian => Some(mu),
            Partition::Bernoulli => Some((mu / (1.0 - mu)).ln()),
            Partition::Poisson => Some(mu.ln()),
            Partition::Custom(p) => p.inverse_link(mu),
        }
    }

    /// `b(mu) = (g')⁻¹(mu)`.
    pub fn inverse_link(&self, mu: f64) -> Result<f64> {
        if !self.in_mean_domain(mu) {
            return Err(Error::InvalidArgument(format!("{mu} is outside the mean domain")));
        }
        match self.closed_inverse_link(mu) {
            Some(t) => Ok(t),
            // g' is increasing, so bisect on [θ - 50, θ + 50].
            None => Ok(bisect_increasing(|t| self.g_prime(t) - mu, self.theta - 50.0, self.theta + 50.0)),
        }
    }

    /// `J(t) = [(t - θ) a - (g(t) - g(θ))] / φ`.
    pub fn chernoff_exponent(&self, t: f64, a: f64) -> f64 {
        ((t - self.theta) * a - (self.g(t) - self.g(self.theta))) / self.phi
    }
}

fn bisect_increasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Maximizes a concave `f` on `[lo, hi]` by golden-section search.
pub(crate) fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// KL divergence between equal-variance Gaussians: `(mu1 - mu2)² / (2σ²)`.
pub fn gaussian_kl(mu1: f64, mu2: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
    }
    Ok((mu1 - mu2).powi(2) / (2.0 * sigma * sigma))
}

/// `KL(f || g)` between two members of the same family.
///
/// Shipped families use their textbook closed forms; custom families use the
/// natural-parameter form, which assumes a shared dispersion.
pub fn kl_divergence(f: &ExpFamily, g: &ExpFamily) -> Result<f64> {
    if f.tag() != g.tag() {
        return Err(Error::InvalidArgument(format!("cannot compare {:?} with {:?}", f.tag(), g.tag())));
    }
    let (mf, mg) = (f.mean(), g.mean());
    Ok(match f.tag() {
        FamilyTag::GaussianKnownVariance => {
            let (vf, vg) = (f.phi, g.phi);
            0.5 * ((vg / vf).ln() + (vf + (mf - mg).powi(2)) / vg - 1.0)
        }
        FamilyTag::Bernoulli => {
            mf * (mf / mg).ln() + (1.0 - mf) * ((1.0 - mf) / (1.0 - mg)).ln()
        }
        FamilyTag::Poisson => mf * (mf / mg).ln() - mf + mg,
        FamilyTag::Custom => {
            if (f.phi - g.phi).abs() > 1e-12 * f.phi {
                return Err(Error::InvalidArgument("custom families must share the dispersion".into()));
            }
            ((f.theta - g.theta) * mf - (f.g(f.theta) - f.g(g.theta))) / f.phi
        }
    })
}

/// `I(a) = J(b(a))`; zero exactly at the family mean.
pub fn rate_function(a: f64, fam: &ExpFamily) -> Result<f64> {
    if !fam.in_mean_domain(a) {
        return Err(Error::InvalidArgument(format!("{a} is outside the mean domain")));
    }
    match fam.closed_inverse_link(a) {
        Some(t) => Ok(fam.chernoff_exponent(t, a).max(0.0)),
        None => rate_function_numeric(a, fam),
    }
}

/// `sup_t J(t)` by golden-section search over `t ∈ [θ - 50, θ + 50]`.
pub fn rate_function_numeric(a: f64, fam: &ExpFamily) -> Result<f64> {
    if !fam.in_mean_domain(a) {
        return Err(Error::InvalidArgument(format!("{a} is outside the mean domain")));
    }
    let (_, v) = golden_section_max(|t| fam.chernoff_exponent(t, a), fam.theta - 50.0, fam.theta + 50.0);
    Ok(v.max(0.0))
}

/// `exp(-j I(a))`, bounding `P(mean of j draws >= a)` for `a` above the mean
/// and `P(... <= a)` below it.
pub fn chernoff_tail_bound(fam: &ExpFamily, a: f64, j: u64) -> Result<f64> {
    if j == 0 {
        return Err(Error::InvalidArgument("j must be >= 1".into()));
    }
    Ok((-(j as f64) * rate_function(a, fam)?).exp())
}

fn best_arm(fams: &[ExpFamily]) -> Result<Option<usize>> {
    if fams.is_empty() {
        return Err(Error::InvalidArgument("no arms".into()));
    }
    let means: Vec<f64> = fams.iter().map(ExpFamily::mean).collect();
    let best = (0..means.len()).min_by(|&a, &b| means[a].total_cmp(&means[b])).expect("nonempty");
    if means.iter().filter(|&&m| m == means[best]).count() > 1 {
        return Err(Error::DegenerateInstance("the minimal mean is not unique".into()));
    }
    Ok(Some(best))
}

/// `Σ_{k: μ_k > μ_*} (μ_k - μ_*) / KL(f_k, f_*)`, the asymptotic lower bound
/// on `R_N / log N` for uniformly good policies.
pub fn regret_lower_bound(fams: &[ExpFamily]) -> Result<f64> {
    let Some(star) = best_arm(fams)? else { return Ok(0.0) };
    let mu_star = fams[star].mean();
    fams.iter()
        .enumerate()
        .filter(|&(k, _)| k != star)
        .map(|(_, f)| Ok((f.mean() - mu_star) / kl_divergence(f, &fams[star])?))
        .sum()
}

/// The sub-sampling regret constant
/// `Σ (μ_k - μ_*) φ_* / [(b(μ_k) - b(μ_*)) μ_k - (g(b(μ_k)) - g(b(μ_*)))]`.
pub fn ss_regret_upper_bound(fams: &[ExpFamily]) -> Result<f64> {
    let Some(star) = best_arm(fams)? else { return Ok(0.0) };
    let f_star = &fams[star];
    let mu_star = f_star.mean();
    let b_star = f_star.inverse_link(mu_star)?;
    fams.iter()
        .enumerate()
        .filter(|&(k, _)| k != star)
        .map(|(_, f)| {
            let mu_k = f.mean();
            let b_k = f_star.inverse_link(mu_k)?;
            let denom = (b_k - b_star) * mu_k - (f_star.g(b_k) - f_star.g(b_star));
            Ok((mu_k - mu_star) * f_star.phi / denom)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_examples() {
        assert_eq!(gaussian_kl(0.5, 0.5, 1.0).unwrap(), 0.0);
        assert_eq!(gaussian_kl(0.5, 0.0, 1.0).unwrap(), 0.125);
        assert_eq!(gaussian_kl(1.0, 0.0, 0.5).unwrap(), 2.0);
        assert!(gaussian_kl(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn rate_examples() {
        let g = ExpFamily::gaussian(0.0, 1.0).unwrap();
        assert_eq!(rate_function(0.0, &g).unwrap(), 0.0);
        assert!((rate_function(0.5, &g).unwrap() - 0.125).abs() < 1e-15);
        let b = ExpFamily::bernoulli(0.5).unwrap();
        let expect = 0.9 * (0.9f64 / 0.5).ln() + 0.1 * (0.1f64 / 0.5).ln();
        assert!((rate_function(0.9, &b).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.368_064).abs() < 1e-6);
        assert!((rate_function_numeric(0.9, &b).unwrap() - expect).abs() < 1e-10);
        assert!(rate_function(1.0, &b).is_err());
        assert!(rate_function(-1.0, &ExpFamily::poisson(2.0).unwrap()).is_err());
    }

    #[test]
    fn gaussian_rate_is_kl() {
        for &(mu, sigma, a) in &[(0.0, 1.0, 0.3), (1.0, 0.5, -0.2), (-2.0, 3.0, 4.0)] {
            let f = ExpFamily::gaussian(mu, sigma).unwrap();
            assert_eq!(rate_function(a, &f).unwrap(), gaussian_kl(a, mu, sigma).unwrap());
        }
    }

    #[test]
    fn rate_is_convex_and_vanishes_only_at_mean() {
        for fam in [
            ExpFamily::gaussian(0.2, 0.7).unwrap(),
            ExpFamily::bernoulli(0.3).unwrap(),
            ExpFamily::poisson(2.0).unwrap(),
        ] {
            let mu = fam.mean();
            assert!(rate_function(mu, &fam).unwrap().abs() < 1e-15);
            let h = 1e-3;
            for i in 1..40 {
                let a = mu + (i as f64 - 20.0) * 0.01;
                if !fam.in_mean_domain(a - h) || (a - mu).abs() < 1e-9 {
                    continue;
                }
                let i0 = rate_function(a, &fam).unwrap();
                assert!(i0 > 0.0);
                let second = (rate_function(a + h, &fam).unwrap() - 2.0 * i0
                    + rate_function(a - h, &fam).unwrap())
                    / (h * h);
                assert!(second > 0.0, "{fam:?} at {a}");
            }
        }
    }

    #[test]
    fn chernoff_examples() {
        let g = ExpFamily::gaussian(0.0, 1.0).unwrap();
        assert_eq!(chernoff_tail_bound(&g, 0.0, 5).unwrap(), 1.0);
        assert!((chernoff_tail_bound(&g, 0.5, 10).unwrap() - (-1.25f64).exp()).abs() < 1e-15);
        assert!(((-1.25f64).exp() - 0.286_505).abs() < 1e-6);
        assert!(chernoff_tail_bound(&g, 0.5, 0).is_err());
    }

    #[test]
    fn bound_examples() {
        let two = [ExpFamily::gaussian(0.0, 1.0).unwrap(), ExpFamily::gaussian(0.5, 1.0).unwrap()];
        assert!((regret_lower_bound(&two).unwrap() - 4.0).abs() < 1e-12);
        assert!((ss_regret_upper_bound(&two).unwrap() - 4.0).abs() < 1e-12);
        let three = [
            ExpFamily::gaussian(0.0, 1.0).unwrap(),
            ExpFamily::gaussian(0.5, 1.0).unwrap(),
            ExpFamily::gaussian(1.0, 1.0).unwrap(),
        ];
        assert!((regret_lower_bound(&three).unwrap() - 6.0).abs() < 1e-12);
        let one = [ExpFamily::gaussian(0.0, 1.0).unwrap()];
        assert_eq!(regret_lower_bound(&one).unwrap(), 0.0);
        assert_eq!(ss_regret_upper_bound(&one).unwrap(), 0.0);

        let bern = [ExpFamily::bernoulli(0.1).unwrap(), ExpFamily::bernoulli(0.5).unwrap()];
        let kl = 0.5 * (0.5f64 / 0.1).ln() + 0.5 * (0.5f64 / 0.9).ln();
        assert!((kl - 0.510_826).abs() < 1e-6);
        assert!((ss_regret_upper_bound(&bern).unwrap() - 0.4 / kl).abs() < 1e-10);
        assert!((regret_lower_bound(&bern).unwrap() - 0.783_05).abs() < 1e-5);

        let tied = [ExpFamily::gaussian(0.0, 1.0).unwrap(), ExpFamily::gaussian(0.0, 1.0).unwrap()];
        assert!(matches!(regret_lower_bound(&tied), Err(Error::DegenerateInstance(_))));
        assert!(matches!(ss_regret_upper_bound(&tied), Err(Error::DegenerateInstance(_))));
    }

    #[test]
    fn one_parameter_families_attain_the_lower_bound() {
        let sets = vec![
            vec![ExpFamily::bernoulli(0.2).unwrap(), ExpFamily::bernoulli(0.35).unwrap(), ExpFamily::bernoulli(0.9).unwrap()],
            vec![ExpFamily::poisson(1.0).unwrap(), ExpFamily::poisson(1.5).unwrap(), ExpFamily::poisson(4.0).unwrap()],
        ];
        for fams in sets {
            let lo = regret_lower_bound(&fams).unwrap();
            let hi = ss_regret_upper_bound(&fams).unwrap();
            assert!((lo - hi).abs() < 1e-10, "{lo} vs {hi}");
        }
    }

    struct Poissonish;

    impl LogPartition for Poissonish {
        fn g(&self, t: f64) -> f64 {
            t.exp()
        }
        fn g_prime(&self, t: f64) -> f64 {
            t.exp()
        }
        fn g_second(&self, t: f64) -> f64 {
            t.exp()
        }
        fn in_mean_domain(&self, mu: f64) -> bool {
            mu > 0.0
        }
    }

    #[test]
    fn custom_family_uses_numeric_fallbacks() {
        let custom = ExpFamily::custom(2f64.ln(), 1.0, Arc::new(Poissonish)).unwrap();
        let poisson = ExpFamily::poisson(2.0).unwrap();
        for a in [0.5, 1.0, 3.0, 6.0] {
            let c = rate_function(a, &custom).unwrap();
            let p = rate_function(a, &poisson).unwrap();
            assert!((c - p).abs() < 1e-9, "{a}: {c} vs {p}");
        }
        assert!((custom.inverse_link(3.0).unwrap() - 3f64.ln()).abs() < 1e-12);
        let fams = [custom.clone(), ExpFamily::custom(5f64.ln(), 1.0, Arc::new(Poissonish)).unwrap()];
        let lo = regret_lower_bound(&fams).unwrap();
        let hi = ss_regret_upper_bound(&fams).unwrap();
        assert!((lo - hi).abs() < 1e-9);
    }
}
