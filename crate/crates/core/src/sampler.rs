//! Hyperparameter generation: Dirichlet draws and simplex grids for mixing
//! weights, and acceptance–rejection over decision vectors for stacking
//! weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyperfit::{fit_stacking, CombiningRule, LinearRule, StackingOptions, StackingRule};
use crate::rule_algebra::{ConditionMatrix, DecisionVector};

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check_concentration(concentration: &[f64; 3]) -> Result<()> {
    if concentration.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "Dirichlet concentration must be positive, got {concentration:?}"
        )));
    }
    Ok(())
}

/// One Dirichlet draw from an existing generator.
///
/// Gamma variates are drawn in log space, `ln G(a) = ln G(a+1) + ln(U)/a`,
/// so tiny concentrations do not underflow to an all-zero vector.
pub fn dirichlet_draw<R: Rng + ?Sized>(rng: &mut R, concentration: &[f64; 3]) -> Result<LinearRule> {
    check_concentration(concentration)?;
    let mut logs = [0.0f64; 3];
    for (l, &a) in logs.iter_mut().zip(concentration) {
        let gamma = Gamma::new(a + 1.0, 1.0)
            .map_err(|e| Error::InvalidArgument(format!("gamma({a}): {e}")))?;
        let g: f64 = gamma.sample(rng);
        let u: f64 = rng.random::<f64>();
        // random() is in [0, 1); map to (0, 1].
        *l = g.ln() + (1.0 - u).ln() / a;
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w = logs.map(|l| (l - max).exp());
    let total: f64 = w.iter().sum();
    let mut alpha = w.map(|x| x / total);
    // Put the rounding remainder on the largest entry so Σα = 1 closely.
    let imax = (0..3).max_by(|&i, &j| alpha[i].total_cmp(&alpha[j])).unwrap_or(0);
    let rest: f64 = (0..3).filter(|&i| i != imax).map(|i| alpha[i]).sum();
    alpha[imax] = 1.0 - rest;
    LinearRule::new(alpha)
}

/// Dirichlet draw, deterministic for a fixed seed.
pub fn sample_dirichlet(seed: u64, concentration: [f64; 3]) -> Result<LinearRule> {
    dirichlet_draw(&mut rng_from_seed(seed), &concentration)
}

/// Every mixing rule whose weights are multiples of `step`.
pub fn simplex_grid(step: f64) -> Result<Vec<LinearRule>> {
    if !(step.is_finite() && step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidArgument(format!("grid step must be in (0, 1], got {step}")));
    }
    let m = (1.0 / step).round();
    if (m * step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("grid step {step} does not divide 1")));
    }
    let m = m as usize;
    let mut out = Vec::with_capacity((m + 1) * (m + 2) / 2);
    for i in 0..=m {
        for j in 0..=(m - i) {
            let k = m - i - j;
            let mf = m as f64;
            out.push(LinearRule::new([i as f64 / mf, j as f64 / mf, k as f64 / mf])?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledRule {
    pub rule_number: u8,
    pub decision: DecisionVector,
    pub rule: StackingRule,
    /// Mean squared residual over the eight conditions.
    pub residual: f64,
    /// `‖d − d̂‖₂²`, the quantity compared against `η²/8`.
    pub squared_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRule {
    pub rule_number: u8,
    pub decision: DecisionVector,
    pub residual: f64,
    pub squared_error: f64,
}

/// Stacking rules that reproduce their decision vector, sorted by rule number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledRuleSet {
    pub eta: f64,
    pub options: StackingOptions,
    pub accepted_count: usize,
    pub entries: Vec<SampledRule>,
    pub rejected: Vec<RejectedRule>,
}

impl SampledRuleSet {
    pub fn acceptance_threshold(&self) -> f64 {
        self.eta * self.eta / 8.0
    }

    pub fn rule_numbers(&self) -> Vec<u8> {
        self.entries.iter().map(|e| e.rule_number).collect()
    }

    pub fn get(&self, rule_number: u8) -> Option<&SampledRule> {
        self.entries
            .binary_search_by_key(&rule_number, |e| e.rule_number)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn rules(&self) -> Vec<CombiningRule> {
        self.entries.iter().map(|e| CombiningRule::Stacking(e.rule)).collect()
    }

    /// Keeps only the listed rule numbers.
    pub fn restricted_to(&self, numbers: &[u8]) -> SampledRuleSet {
        let entries: Vec<SampledRule> = self
            .entries
            .iter()
            .filter(|e| numbers.contains(&e.rule_number))
            .cloned()
            .collect();
        SampledRuleSet {
            eta: self.eta,
            options: self.options,
            accepted_count: entries.len(),
            entries,
            rejected: Vec::new(),
        }
    }
}

enum Outcome {
    Accepted(SampledRule),
    Rejected(RejectedRule),
}

/// Fits every decision vector with number below `n_rules` and keeps those
/// with `‖d − σ([Rᵀ,1]β)‖₂² ≤ η²/8`.
///
/// Each rule is visited exactly once; rules that cannot be fitted are
/// listed as rejected instead of being retried.
pub fn rejection_sample_stacking(n_rules: usize, eta: f64, opts: &StackingOptions) -> Result<SampledRuleSet> {
    if n_rules > 256 {
        return Err(Error::InvalidArgument(format!("at most 256 rules exist, asked for {n_rules}")));
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::InvalidArgument(format!("eta must be positive, got {eta}")));
    }
    let r = ConditionMatrix::canonical();
    let threshold = eta * eta / 8.0;
    let outcomes: Vec<Outcome> = (0..n_rules)
        .into_par_iter()
        .map(|n| {
            let d = DecisionVector::from_rule(n as u8);
            let fit = fit_stacking(&r, &d, opts)?;
            let squared_error = fit.residual * 8.0;
            let rule = match fit.coefficients {
                CombiningRule::Stacking(s) => s,
                CombiningRule::Linear(_) => unreachable!("stacking fit returns a stacking rule"),
            };
            Ok(if squared_error <= threshold {
                Outcome::Accepted(SampledRule {
                    rule_number: n as u8,
                    decision: d,
                    rule,
                    residual: fit.residual,
                    squared_error,
                })
            } else {
                Outcome::Rejected(RejectedRule {
                    rule_number: n as u8,
                    decision: d,
                    residual: fit.residual,
                    squared_error,
                })
            })
        })
        .collect::<Result<_>>()?;

    let mut entries = Vec::new();
    let mut rejected = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Accepted(a) => entries.push(a),
            Outcome::Rejected(r) => rejected.push(r),
        }
    }
    Ok(SampledRuleSet {
        eta,
        options: *opts,
        accepted_count: entries.len(),
        entries,
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dirichlet_on_simplex() {
        for seed in 0..200 {
            let a = sample_dirichlet(seed, [1.0, 1.0, 1.0]).unwrap().alpha();
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn dirichlet_deterministic_per_seed() {
        assert_eq!(sample_dirichlet(7, [2.0, 1.0, 1.0]).unwrap(), sample_dirichlet(7, [2.0, 1.0, 1.0]).unwrap());
        assert_ne!(sample_dirichlet(7, [2.0, 1.0, 1.0]).unwrap(), sample_dirichlet(8, [2.0, 1.0, 1.0]).unwrap());
    }

    #[test]
    fn dirichlet_concentration_limit() {
        let a = sample_dirichlet(3, [1e6, 2e-6, 2e-6]).unwrap().alpha();
        assert!((a[0] - 1.0).abs() < 1e-6, "{a:?}");
        let tiny = sample_dirichlet(3, [1e-3, 1e-3, 1e-3]).unwrap().alpha();
        assert!((tiny.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_mean() {
        let mut rng = rng_from_seed(11);
        let n = 100_000;
        let mut mean = [0.0; 3];
        for _ in 0..n {
            let a = dirichlet_draw(&mut rng, &[2.0, 1.0, 1.0]).unwrap().alpha();
            for i in 0..3 {
                mean[i] += a[i] / n as f64;
            }
        }
        for (m, e) in mean.iter().zip([0.5, 0.25, 0.25]) {
            assert!((m - e).abs() < 0.01, "{mean:?}");
        }
    }

    #[test]
    fn dirichlet_rejects_bad_concentration() {
        assert!(sample_dirichlet(0, [1.0, 0.0, 1.0]).is_err());
        assert!(sample_dirichlet(0, [1.0, f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn simplex_grid_counts() {
        assert_eq!(simplex_grid(0.1).unwrap().len(), 66);
        assert_eq!(simplex_grid(0.5).unwrap().len(), 6);
        let ones = simplex_grid(1.0).unwrap();
        assert_eq!(ones.len(), 3);
        for i in 0..3 {
            assert!(ones.contains(&LinearRule::one_hot(i)));
        }
        assert!(simplex_grid(0.3).is_err());
        assert!(simplex_grid(0.0).is_err());
    }

    #[test]
    fn simplex_grid_contents() {
        let g = simplex_grid(0.1).unwrap();
        for i in 0..3 {
            assert!(g.contains(&LinearRule::one_hot(i)));
        }
        assert!(g.iter().any(|r| r.alpha() == [0.3, 0.3, 0.4]));
        assert!(g.iter().any(|r| r.alpha() == [0.5, 0.5, 0.0]));
        for r in &g {
            assert!(r.is_on_simplex());
        }
    }

    #[test]
    fn rejection_sampler_small_run() {
        let set = rejection_sample_stacking(64, 0.5, &StackingOptions::default()).unwrap();
        assert_eq!(set.accepted_count, set.entries.len());
        assert_eq!(set.entries.len() + set.rejected.len(), 64);
        assert!(set.get(63).is_some() && set.get(31).is_some());
        let numbers = set.rule_numbers();
        assert!(numbers.windows(2).all(|w| w[0] < w[1]));
        for e in &set.entries {
            assert!(e.squared_error <= set.acceptance_threshold());
        }
        assert!(rejection_sample_stacking(257, 0.5, &StackingOptions::default()).is_err());
        assert!(rejection_sample_stacking(8, 0.0, &StackingOptions::default()).is_err());
    }

    #[test]
    fn rejection_sampler_independent_of_thread_count() {
        let opts = StackingOptions { learning_rate: 1.0, max_iters: 500 };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| rejection_sample_stacking(256, 0.5, &opts)).unwrap();
        let b = four.install(|| rejection_sample_stacking(256, 0.5, &opts)).unwrap();
        assert_eq!(a, b);
    }
}
