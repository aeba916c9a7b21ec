//! Fitting combining-rule hyperparameters to decision vectors.
//!
//! Linear mixture weights come from the normal equations of `Rᵀ·x = d`;
//! sigmoid stacking weights come from gradient descent on the summed binary
//! cross-entropy of `σ([Rᵀ, 1]·β)` against `d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rule_algebra::{ConditionMatrix, DecisionVector, N_CONDITIONS, N_MODALITIES};

/// Tolerance for the simplex constraints on mixing weights.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Mixing weights for (T2W, DWI_hb, ADC).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct LinearRule {
    alpha: [f64; N_MODALITIES],
}

impl LinearRule {
    /// Weights must be non-negative and sum to one (both within 1e-9).
    pub fn new(alpha: [f64; N_MODALITIES]) -> Result<Self> {
        let rule = Self { alpha };
        rule.validate()?;
        Ok(rule)
    }

    /// Divides by the L1 norm. Signs are kept, so the result is only on the
    /// simplex when every weight is non-negative.
    pub fn l1_normalized(weights: [f64; N_MODALITIES]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidRule(format!("non-finite weights {weights:?}")));
        }
        let norm: f64 = weights.iter().map(|w| w.abs()).sum();
        if norm == 0.0 {
            return Err(Error::InvalidRule("all-zero weights cannot be normalized".into()));
        }
        Ok(Self {
            alpha: weights.map(|w| w / norm),
        })
    }

    pub fn uniform() -> Self {
        Self {
            alpha: [1.0 / 3.0; N_MODALITIES],
        }
    }

    pub fn one_hot(modality: usize) -> Self {
        let mut alpha = [0.0; N_MODALITIES];
        alpha[modality] = 1.0;
        Self { alpha }
    }

    pub fn alpha(&self) -> [f64; N_MODALITIES] {
        self.alpha
    }

    pub fn is_on_simplex(&self) -> bool {
        self.validate().is_ok()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.iter().any(|a| !a.is_finite() || *a < -SIMPLEX_TOL) {
            return Err(Error::InvalidRule(format!(
                "mixing weights must be finite and non-negative, got {:?}",
                self.alpha
            )));
        }
        let sum: f64 = self.alpha.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidRule(format!(
                "mixing weights must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

impl TryFrom<[f64; 3]> for LinearRule {
    type Error = Error;

    fn try_from(alpha: [f64; 3]) -> Result<Self> {
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidRule(format!("non-finite weights {alpha:?}")));
        }
        // Signed fits are representable; simplex membership is checked where
        // a rule is applied to volumes.
        Ok(Self { alpha })
    }
}

impl From<LinearRule> for [f64; 3] {
    fn from(rule: LinearRule) -> Self {
        rule.alpha
    }
}

/// Stacking weights ordered `[β₁, β₂, β₃, β₀]`, bias last.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct StackingRule {
    beta: [f64; 4],
}

impl StackingRule {
    pub fn new(beta: [f64; 4]) -> Result<Self> {
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidRule(format!("non-finite stacking weights {beta:?}")));
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> [f64; 4] {
        self.beta
    }

    pub fn weights(&self) -> [f64; N_MODALITIES] {
        [self.beta[0], self.beta[1], self.beta[2]]
    }

    pub fn bias(&self) -> f64 {
        self.beta[3]
    }

    /// Pre-sigmoid activation for one voxel or condition.
    #[inline]
    pub fn logit(&self, y: [f64; N_MODALITIES]) -> f64 {
        self.beta[0] * y[0] + self.beta[1] * y[1] + self.beta[2] * y[2] + self.beta[3]
    }
}

impl TryFrom<[f64; 4]> for StackingRule {
    type Error = Error;

    fn try_from(beta: [f64; 4]) -> Result<Self> {
        Self::new(beta)
    }
}

impl From<StackingRule> for [f64; 4] {
    fn from(rule: StackingRule) -> Self {
        rule.beta
    }
}

/// Either kind of combining rule. JSON form is `{"linear": [a1, a2, a3]}`
/// or `{"stacking": [b1, b2, b3, b0]}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombiningRule {
    Linear(LinearRule),
    Stacking(StackingRule),
}

impl CombiningRule {
    pub fn kind(&self) -> &'static str {
        match self {
            CombiningRule::Linear(_) => "linear",
            CombiningRule::Stacking(_) => "stacking",
        }
    }

    /// Parameters in serialization order.
    pub fn params(&self) -> Vec<f64> {
        match self {
            CombiningRule::Linear(r) => r.alpha().to_vec(),
            CombiningRule::Stacking(r) => r.beta().to_vec(),
        }
    }
}

impl From<LinearRule> for CombiningRule {
    fn from(r: LinearRule) -> Self {
        CombiningRule::Linear(r)
    }
}

impl From<StackingRule> for CombiningRule {
    fn from(r: StackingRule) -> Self {
        CombiningRule::Stacking(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub rule_number: u8,
    pub decision: DecisionVector,
    pub coefficients: CombiningRule,
    /// Least-squares solution before L1 normalization (linear fits only).
    pub unnormalized_coefficients: Option<[f64; 3]>,
    /// Mean squared residual over the eight conditions.
    pub residual: f64,
    /// t-statistics against α⁰ = 0 (linear fits with non-constant `d`).
    pub t_stats: Option<[f64; 3]>,
    pub odds_ratios: Option<[f64; 4]>,
    pub iterations_used: Option<usize>,
    /// Constant decision vector; coefficients fall back to defaults.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackingOptions {
    pub learning_rate: f64,
    pub max_iters: usize,
}

impl Default for StackingOptions {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            max_iters: 10_000,
        }
    }
}

impl StackingOptions {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

type Mat3 = [[f64; 3]; 3];

fn gram(r: &ConditionMatrix) -> Mat3 {
    let mut rrt = [[0.0; 3]; 3];
    for k in 0..N_CONDITIONS {
        let c = r.column_f64(k);
        for i in 0..3 {
            for j in 0..3 {
                rrt[i][j] += c[i] * c[j];
            }
        }
    }
    rrt
}

fn right_hand_side(r: &ConditionMatrix, d: &DecisionVector) -> [f64; 3] {
    let d = d.as_f64();
    let mut rd = [0.0; 3];
    for (k, dk) in d.iter().enumerate() {
        let c = r.column_f64(k);
        for i in 0..3 {
            rd[i] += c[i] * dk;
        }
    }
    rd
}

/// Inverse by Gauss–Jordan elimination with partial pivoting.
fn invert3(m: &Mat3) -> Result<Mat3> {
    let mut a = *m;
    let mut inv = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let scale = m.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap_or(col);
        if a[pivot][col].abs() <= 1e-12 * scale.max(1.0) {
            return Err(Error::Numerical("RRᵀ is singular".into()));
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        for j in 0..3 {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for row in 0..3 {
            if row != col {
                let f = a[row][col];
                for j in 0..3 {
                    a[row][j] -= f * a[col][j];
                    inv[row][j] -= f * inv[col][j];
                }
            }
        }
    }
    Ok(inv)
}

fn mat_vec(m: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

/// `(RRᵀ)⁻¹` for the given condition matrix.
pub fn normal_matrix_inverse(r: &ConditionMatrix) -> Result<Mat3> {
    invert3(&gram(r))
}

/// Unbiased sample variance (divisor K−1).
fn decision_variance(d: &DecisionVector) -> f64 {
    let v = d.as_f64();
    let mean = v.iter().sum::<f64>() / N_CONDITIONS as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (N_CONDITIONS - 1) as f64
}

#[inline]
pub(crate) fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

pub fn predict_linear_weights(r: &ConditionMatrix, weights: &[f64; 3]) -> [f64; N_CONDITIONS] {
    std::array::from_fn(|k| {
        let c = r.column_f64(k);
        c[0] * weights[0] + c[1] * weights[1] + c[2] * weights[2]
    })
}

pub fn predict_stacking(r: &ConditionMatrix, rule: &StackingRule) -> [f64; N_CONDITIONS] {
    std::array::from_fn(|k| sigmoid(rule.logit(r.column_f64(k))))
}

/// Per-condition predicted probability (or linear score) under a rule.
pub fn predict_decisions(r: &ConditionMatrix, rule: &CombiningRule) -> [f64; N_CONDITIONS] {
    match rule {
        CombiningRule::Linear(l) => predict_linear_weights(r, &l.alpha()),
        CombiningRule::Stacking(s) => predict_stacking(r, s),
    }
}

fn mean_squared(d: &[f64; N_CONDITIONS], pred: &[f64; N_CONDITIONS]) -> f64 {
    d.iter()
        .zip(pred)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / N_CONDITIONS as f64
}

/// Least-squares mixing weights `x = (RRᵀ)⁻¹Rd`, normalized to `x/‖x‖₁`.
///
/// The residual is measured on the unnormalized solution. Constant decision
/// vectors, and those whose solution is zero, are flagged as degenerate with
/// uniform weights; constant ones also get no t-statistics.
pub fn fit_linear(r: &ConditionMatrix, d: &DecisionVector) -> Result<FitReport> {
    let inv = normal_matrix_inverse(r)?;
    let rd = right_hand_side(r, d);
    let x = mat_vec(&inv, &rd);
    let pred = predict_linear_weights(r, &x);
    let residual = mean_squared(&d.as_f64(), &pred);

    // Constant decisions, or decisions with no linear component at all.
    let degenerate = d.is_constant() || x.iter().all(|v| v.abs() < 1e-12);
    let alpha = if degenerate {
        LinearRule::uniform()
    } else {
        LinearRule::l1_normalized(x)?
    };

    let mut report = FitReport {
        rule_number: d.rule_number(),
        decision: *d,
        coefficients: CombiningRule::Linear(alpha),
        unnormalized_coefficients: Some(x),
        residual,
        t_stats: None,
        odds_ratios: None,
        iterations_used: None,
        degenerate,
    };
    if !d.is_constant() {
        report.t_stats = Some(t_statistics_with(&inv, &x, d, 0.0)?);
    }
    Ok(report)
}

fn t_statistics_with(inv: &Mat3, x: &[f64; 3], d: &DecisionVector, alpha0: f64) -> Result<[f64; 3]> {
    let var = decision_variance(d);
    if var == 0.0 {
        return Err(Error::Numerical(
            "t-statistics are undefined for constant decisions".into(),
        ));
    }
    Ok(std::array::from_fn(|t| {
        let se = (var * inv[t][t]).sqrt();
        (x[t] - alpha0) / se
    }))
}

/// `T_τ = (x_τ − α⁰) / sqrt(σ²_d · [(RRᵀ)⁻¹]_ττ)` on the unnormalized
/// coefficients of a linear fit against the canonical condition matrix.
pub fn t_statistics(report: &FitReport, d: &DecisionVector, alpha0: f64) -> Result<[f64; 3]> {
    let x = report.unnormalized_coefficients.ok_or_else(|| {
        Error::InvalidArgument("t-statistics need a linear fit report".into())
    })?;
    let inv = normal_matrix_inverse(&ConditionMatrix::canonical())?;
    t_statistics_with(&inv, &x, d, alpha0)
}

/// Summed binary cross-entropy for logits `a` against targets `d`.
fn bce_sum(logits: &[f64; N_CONDITIONS], d: &[f64; N_CONDITIONS]) -> f64 {
    logits
        .iter()
        .zip(d)
        .map(|(&a, &y)| a.max(0.0) - a * y + (-a.abs()).exp().ln_1p())
        .sum()
}

/// Gradient descent on the summed cross-entropy from β = 0.
pub fn fit_stacking(
    r: &ConditionMatrix,
    d: &DecisionVector,
    opts: &StackingOptions,
) -> Result<FitReport> {
    opts.validate()?;
    let target = d.as_f64();
    let design: [[f64; 4]; N_CONDITIONS] = std::array::from_fn(|k| {
        let c = r.column_f64(k);
        [c[0], c[1], c[2], 1.0]
    });

    let mut beta = [0.0f64; 4];
    let mut iterations = 0;
    for it in 0..opts.max_iters {
        let logits: [f64; N_CONDITIONS] = std::array::from_fn(|k| {
            design[k].iter().zip(&beta).map(|(x, b)| x * b).sum()
        });
        let loss = bce_sum(&logits, &target);
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: it, loss });
        }
        let mut grad = [0.0f64; 4];
        for k in 0..N_CONDITIONS {
            let err = sigmoid(logits[k]) - target[k];
            for (g, x) in grad.iter_mut().zip(&design[k]) {
                *g += err * x;
            }
        }
        for (b, g) in beta.iter_mut().zip(&grad) {
            *b -= opts.learning_rate * g;
        }
        iterations = it + 1;
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Divergence {
                iteration: it,
                loss: f64::NAN,
            });
        }
    }

    let rule = StackingRule::new(beta)?;
    let pred = predict_stacking(r, &rule);
    Ok(FitReport {
        rule_number: d.rule_number(),
        decision: *d,
        coefficients: CombiningRule::Stacking(rule),
        unnormalized_coefficients: None,
        residual: mean_squared(&target, &pred),
        t_stats: None,
        odds_ratios: Some(odds_ratios(&rule)),
        iterations_used: Some(iterations),
        degenerate: d.is_constant(),
    })
}

/// Element-wise `e^β`.
pub fn odds_ratios(rule: &StackingRule) -> [f64; 4] {
    rule.beta().map(f64::exp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rule_algebra::{decision_from_number, pirads_decisions, Zone};
    use proptest::prelude::*;

    fn canon() -> ConditionMatrix {
        ConditionMatrix::canonical()
    }

    fn linear(n: i64) -> FitReport {
        fit_linear(&canon(), &decision_from_number(n).unwrap()).unwrap()
    }

    fn alpha_of(report: &FitReport) -> [f64; 3] {
        match report.coefficients {
            CombiningRule::Linear(l) => l.alpha(),
            _ => panic!("expected linear"),
        }
    }

    fn beta_of(report: &FitReport) -> [f64; 4] {
        match report.coefficients {
            CombiningRule::Stacking(s) => s.beta(),
            _ => panic!("expected stacking"),
        }
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn normal_inverse_matches_closed_form() {
        // (RRᵀ)⁻¹ = ½(I − J/4) for the canonical matrix.
        let inv = normal_matrix_inverse(&canon()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = 0.5 * (f64::from(u8::from(i == j)) - 0.25);
                assert!((inv[i][j] - expected).abs() < 1e-12, "{i},{j}");
            }
        }
    }

    #[test]
    fn linear_fit_whole_gland() {
        let r = linear(63);
        assert!(close(&alpha_of(&r), &[5.0 / 11.0, 5.0 / 11.0, 1.0 / 11.0], 1e-12));
        assert!(close(&r.unnormalized_coefficients.unwrap(), &[0.625, 0.625, 0.125], 1e-12));
        assert!((r.residual - 0.078125).abs() < 1e-12);
        assert!(!r.degenerate);
    }

    #[test]
    fn linear_fit_transition_and_peripheral() {
        let tz = linear(31);
        assert!(close(&alpha_of(&tz), &[0.6, 0.2, 0.2], 1e-12));
        assert!((tz.residual - 0.0625).abs() < 1e-12);
        let pz = linear(119);
        assert!(close(&alpha_of(&pz), &[1.0 / 11.0, 5.0 / 11.0, 5.0 / 11.0], 1e-12));
        assert!((pz.residual - 0.078125).abs() < 1e-12);
    }

    #[test]
    fn linear_fit_zero_decision_is_degenerate() {
        let r = linear(0);
        assert!(r.degenerate);
        assert_eq!(alpha_of(&r), [1.0 / 3.0; 3]);
        assert_eq!(r.unnormalized_coefficients.unwrap(), [0.0; 3]);
        assert!(r.t_stats.is_none());
        let all = linear(255);
        assert!(all.degenerate);
        assert!(t_statistics(&all, &all.decision, 0.0).is_err());
    }

    #[test]
    fn only_all_negative_condition_has_zero_solution() {
        let zero: Vec<i64> = (1..255).filter(|&n| linear(n).degenerate).collect();
        assert_eq!(zero, vec![128]);
        let r = linear(128);
        assert_eq!(alpha_of(&r), [1.0 / 3.0; 3]);
        assert_eq!(r.t_stats.unwrap(), [0.0; 3]);
    }

    #[test]
    fn t_statistics_table_rows() {
        let wg = linear(63);
        let t = t_statistics(&wg, &wg.decision, 0.0).unwrap();
        assert!(close(&t, &[2.2048, 2.2048, 0.4410], 1e-4), "{t:?}");
        assert_eq!(wg.t_stats.unwrap(), t);
        let tz = linear(31);
        let t = t_statistics(&tz, &tz.decision, 0.0).unwrap();
        assert!(close(&t, &[2.3664, 0.7888, 0.7888], 1e-4), "{t:?}");
        let pz = linear(119);
        let t = t_statistics(&pz, &pz.decision, 0.0).unwrap();
        assert!(close(&t, &[0.4410, 2.2047, 2.2047], 1e-3), "{t:?}");
    }

    #[test]
    fn t_statistics_against_equal_contribution() {
        let tz = linear(31);
        let t0 = t_statistics(&tz, &tz.decision, 0.0).unwrap();
        let t3 = t_statistics(&tz, &tz.decision, 1.0 / 3.0).unwrap();
        for i in 0..3 {
            assert!(t3[i] < t0[i]);
        }
    }

    #[test]
    fn t_statistic_ranking_follows_coefficients() {
        for n in 1..255 {
            let r = linear(n);
            if r.degenerate {
                continue;
            }
            let x = r.unnormalized_coefficients.unwrap();
            let t = r.t_stats.unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    if x[i].abs() > x[j].abs() + 1e-12 {
                        assert!(t[i].abs() > t[j].abs(), "rule {n}");
                    }
                }
            }
        }
    }

    #[test]
    fn linear_fit_norm_is_one() {
        for n in (1..255).filter(|&n| !linear(n).degenerate) {
            let a = alpha_of(&linear(n));
            let l1: f64 = a.iter().map(|v| v.abs()).sum();
            assert!((l1 - 1.0).abs() < 1e-12, "rule {n}");
        }
    }

    fn thresholded(pred: &[f64; 8]) -> [u8; 8] {
        pred.map(|p| u8::from(p > 0.5))
    }

    #[test]
    fn stacking_fit_whole_gland() {
        let d = pirads_decisions(Zone::WG).unwrap();
        let r = fit_stacking(&canon(), &d, &StackingOptions::default()).unwrap();
        let beta = beta_of(&r);
        assert!(beta[0] > 1.0 && beta[1] > 1.0 && beta[2].abs() < 1.0 && beta[3] < -1.0);
        let s = StackingRule::new(beta).unwrap();
        assert_eq!(thresholded(&predict_stacking(&canon(), &s)), d.as_u8());
        assert!(r.residual <= 1e-5);
        assert_eq!(r.iterations_used, Some(10_000));
    }

    #[test]
    fn stacking_fit_transition_zone() {
        let d = pirads_decisions(Zone::TZ).unwrap();
        let r = fit_stacking(&canon(), &d, &StackingOptions::default()).unwrap();
        let beta = beta_of(&r);
        assert!(beta[0] > beta[1] && beta[1] > 1.0 && beta[3] < -1.0);
        assert!((beta[1] - beta[2]).abs() < 1e-9);
        let s = StackingRule::new(beta).unwrap();
        assert_eq!(thresholded(&predict_stacking(&canon(), &s)), d.as_u8());
    }

    #[test]
    fn stacking_fit_parity_is_not_reproduced() {
        let d = decision_from_number(105).unwrap();
        assert_eq!(d.as_u8(), [0, 1, 1, 0, 1, 0, 0, 1]);
        let r = fit_stacking(&canon(), &d, &StackingOptions::default()).unwrap();
        assert!(r.residual > 0.03125);
        let s = StackingRule::new(beta_of(&r)).unwrap();
        assert_ne!(thresholded(&predict_stacking(&canon(), &s)), d.as_u8());
    }

    #[test]
    fn stacking_options_validated() {
        let d = decision_from_number(63).unwrap();
        let bad = StackingOptions { learning_rate: 0.0, max_iters: 10 };
        assert!(fit_stacking(&canon(), &d, &bad).is_err());
        let bad = StackingOptions { learning_rate: 1.0, max_iters: 0 };
        assert!(fit_stacking(&canon(), &d, &bad).is_err());
    }

    #[test]
    fn stacking_divergence_is_reported() {
        let d = decision_from_number(63).unwrap();
        let wild = StackingOptions { learning_rate: 1e308, max_iters: 50 };
        assert!(matches!(
            fit_stacking(&canon(), &d, &wild),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn odds_ratio_values() {
        let rule = StackingRule::new([18.17, 0.0, -0.20, -8.53]).unwrap();
        let or = odds_ratios(&rule);
        assert!((or[0] / 7.78e7 - 1.0).abs() < 1e-3);
        assert_eq!(or[1], 1.0);
        assert!((or[2] - (-0.2f64).exp()).abs() < 1e-15);
        assert!((or[3] / 1.97e-4 - 1.0).abs() < 5e-3);
    }

    #[test]
    fn predictions() {
        let r = canon();
        let onehot = CombiningRule::Linear(LinearRule::one_hot(0));
        assert_eq!(predict_decisions(&r, &onehot), r.row(0).map(|b| f64::from(u8::from(b))));
        let p = predict_linear_weights(&r, &[0.75, 0.25, 0.25]);
        assert!(close(&p, &[0.0, 0.25, 0.25, 0.5, 0.75, 1.0, 1.0, 1.25], 1e-15));
        let wg = CombiningRule::Stacking(StackingRule::new([18.17, 18.17, -0.20, -8.53]).unwrap());
        assert_eq!(thresholded(&predict_decisions(&r, &wg)), [0, 0, 1, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn linear_rule_validation() {
        assert!(LinearRule::new([0.5, 0.5, 0.0]).is_ok());
        assert!(LinearRule::new([0.5, 0.6, 0.0]).is_err());
        assert!(LinearRule::new([1.2, -0.2, 0.0]).is_err());
        assert!(LinearRule::new([f64::NAN, 0.5, 0.5]).is_err());
        assert!(LinearRule::l1_normalized([0.0; 3]).is_err());
        assert!(StackingRule::new([f64::INFINITY, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn fit_report_json_round_trip() {
        let r = linear(31);
        let json = serde_json::to_string(&r).unwrap();
        let back: FitReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        let d = decision_from_number(63).unwrap();
        let s = fit_stacking(&canon(), &d, &StackingOptions::default()).unwrap();
        let back: FitReport = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn combining_rule_json_shape() {
        let r: CombiningRule = serde_json::from_str(r#"{"linear":[0.6,0.2,0.2]}"#).unwrap();
        assert_eq!(r, CombiningRule::Linear(LinearRule::new([0.6, 0.2, 0.2]).unwrap()));
        let s: CombiningRule = serde_json::from_str(r#"{"stacking":[1,2,3,-4]}"#).unwrap();
        assert_eq!(s.params(), vec![1.0, 2.0, 3.0, -4.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn sigmoid_threshold_matches_logit_sign(
            b in prop::array::uniform4(-20.0f64..20.0)
        ) {
            let rule = StackingRule::new(b).unwrap();
            let r = canon();
            let p = predict_stacking(&r, &rule);
            for k in 0..8 {
                let logit = rule.logit(r.column_f64(k));
                prop_assert_eq!(p[k] > 0.5, logit > 0.0);
            }
        }
    }
}
