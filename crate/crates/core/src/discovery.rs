//! Rule comparison and discovery over a dataset of cases: grid search over
//! mixing weights, search over sampled stacking rules, modality availability
//! analysis and Monte-Carlo uncertainty under a rule distribution.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combiner::{binarize, binarize_labeled, combine, BinarizeConfig};
use crate::error::{Error, Result};
use crate::hyperfit::{CombiningRule, LinearRule};
use crate::metrics::{dice, evaluate, evaluate_labeled, label_components, ComponentLabels, MetricsConfig, MetricsReport};
use crate::rule_algebra::{DecisionVector, Zone};
use crate::sampler::{dirichlet_draw, rng_from_seed, simplex_grid, SampledRuleSet};
use crate::volume::{validate_aligned, Dims, Grid, LabelVolume, Modality, ProbabilityVolume, Spacing};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.66,
            validation: 0.17,
            test: 0.17,
        }
    }
}

/// FNV-1a of the id, mixed with the seed through splitmix64.
pub fn case_hash(case_id: &str, seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in case_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h ^ splitmix64(seed))
}

pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Patient-level split: cases are ordered by seeded hash of their id and
/// cut at the rounded ratio boundaries, so counts are within one of the
/// requested proportions.
pub fn assign_splits(case_ids: &[String], seed: u64, ratios: &SplitRatios) -> Result<Vec<Split>> {
    let total = ratios.train + ratios.validation + ratios.test;
    if [ratios.train, ratios.validation, ratios.test].iter().any(|r| *r < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split ratios must be non-negative and sum to 1: {ratios:?}")));
    }
    let n = case_ids.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        case_hash(&case_ids[a], seed)
            .cmp(&case_hash(&case_ids[b], seed))
            .then_with(|| case_ids[a].cmp(&case_ids[b]))
    });
    let n_val = (n as f64 * ratios.validation).round() as usize;
    let n_test = ((n as f64 * ratios.test).round() as usize).min(n - n_val);
    let n_train = n - n_val - n_test;
    let mut splits = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    Ok(splits)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ZoneMasks {
    pub tz: Option<LabelVolume>,
    pub pz: Option<LabelVolume>,
}

/// One subject: three modality probability maps, ground truth and optional
/// zone masks, all on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub case_id: String,
    pub modalities: [ProbabilityVolume; 3],
    pub truth: LabelVolume,
    pub zones: ZoneMasks,
}

impl CaseRecord {
    pub fn new(
        case_id: impl Into<String>,
        modalities: [ProbabilityVolume; 3],
        truth: LabelVolume,
        zones: ZoneMasks,
    ) -> Result<Self> {
        let case_id = case_id.into();
        let mut grids: Vec<&dyn Grid> = vec![&modalities[0], &modalities[1], &modalities[2], &truth];
        if let Some(z) = &zones.tz {
            grids.push(z);
        }
        if let Some(z) = &zones.pz {
            grids.push(z);
        }
        validate_aligned(&grids).map_err(|e| e.in_case(&case_id))?;
        Ok(Self {
            case_id,
            modalities,
            truth,
            zones,
        })
    }

    pub fn modality_refs(&self) -> [&ProbabilityVolume; 3] {
        [&self.modalities[0], &self.modalities[1], &self.modalities[2]]
    }

    pub fn dims(&self) -> Dims {
        self.truth.dims()
    }

    pub fn spacing(&self) -> Spacing {
        self.truth.spacing()
    }

    fn zone_mask(&self, zone: Zone) -> Result<Option<&LabelVolume>> {
        let mask = match zone {
            Zone::WG | Zone::Custom => return Ok(None),
            Zone::TZ => self.zones.tz.as_ref(),
            Zone::PZ => self.zones.pz.as_ref(),
        };
        mask.map(Some)
            .ok_or_else(|| Error::InvalidArgument(format!("no {zone} mask")).in_case(&self.case_id))
    }
}

/// How each case is binarized and scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub binarize: BinarizeConfig,
    pub metrics: MetricsConfig,
    /// WG scores the whole volume; TZ/PZ restrict to the case's zone mask.
    pub zone: Zone,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            binarize: BinarizeConfig::default(),
            metrics: MetricsConfig::default(),
            zone: Zone::WG,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub metrics: MetricsReport,
}

/// A rule together with its identity for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub rule: CombiningRule,
    pub rule_number: Option<u8>,
    pub decision: Option<DecisionVector>,
}

impl RuleSpec {
    pub fn linear(rule: LinearRule) -> Self {
        Self {
            rule: CombiningRule::Linear(rule),
            rule_number: None,
            decision: None,
        }
    }

    fn tie_break(&self, other: &RuleSpec) -> Ordering {
        match (self.rule_number, other.rule_number) {
            (Some(a), Some(b)) if a != b => a.cmp(&b),
            _ => {
                let (a, b) = (self.rule.params(), other.rule.params());
                a.iter()
                    .zip(&b)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(Ordering::Equal)
            }
        }
    }
}

impl From<CombiningRule> for RuleSpec {
    fn from(rule: CombiningRule) -> Self {
        Self {
            rule,
            rule_number: None,
            decision: None,
        }
    }
}

/// Dataset-level aggregate for one rule. Undefined per-case metrics are
/// left out of the corresponding mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleRow {
    pub rule: RuleSpec,
    pub n_cases: usize,
    pub mean_dsc: f64,
    pub sd_dsc: f64,
    pub mean_hd95_mm: Option<f64>,
    pub sd_hd95_mm: Option<f64>,
    pub mean_recall: Option<f64>,
    pub mean_precision: Option<f64>,
}

fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, sd))
}

fn aggregate(rule: RuleSpec, mut results: Vec<CaseResult>) -> RuleRow {
    // Fixed reduction order regardless of dataset order.
    results.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let dsc: Vec<f64> = results.iter().map(|r| r.metrics.dsc).collect();
    let hd: Vec<f64> = results.iter().filter_map(|r| r.metrics.hd95_mm).collect();
    let rec: Vec<f64> = results.iter().filter_map(|r| r.metrics.recall_gt).collect();
    let prec: Vec<f64> = results.iter().filter_map(|r| r.metrics.precision_pred).collect();
    let (mean_dsc, sd_dsc) = mean_sd(&dsc).unwrap_or((f64::NAN, f64::NAN));
    let hd_stats = mean_sd(&hd);
    RuleRow {
        rule,
        n_cases: results.len(),
        mean_dsc,
        sd_dsc,
        mean_hd95_mm: hd_stats.map(|s| s.0),
        sd_hd95_mm: hd_stats.map(|s| s.1),
        mean_recall: mean_sd(&rec).map(|s| s.0),
        mean_precision: mean_sd(&prec).map(|s| s.0),
    }
}

/// Combines, binarizes and scores every case under one rule.
pub fn evaluate_rule_cases(dataset: &[CaseRecord], rule: &CombiningRule, config: &EvalConfig) -> Result<Vec<CaseResult>> {
    let truth_labels = truth_labellings(dataset, config);
    evaluate_prepared(dataset, &truth_labels, rule, config)
}

/// Truth labellings reusable across rules; only for whole-volume scoring
/// where binarization and metrics share a connectivity.
fn truth_labellings(dataset: &[CaseRecord], config: &EvalConfig) -> Vec<Option<ComponentLabels>> {
    let reusable = matches!(config.zone, Zone::WG | Zone::Custom)
        && config.binarize.connectivity == config.metrics.connectivity;
    dataset
        .iter()
        .map(|c| reusable.then(|| label_components(&c.truth, config.metrics.connectivity)))
        .collect()
}

fn evaluate_prepared(
    dataset: &[CaseRecord],
    truth_labels: &[Option<ComponentLabels>],
    rule: &CombiningRule,
    config: &EvalConfig,
) -> Result<Vec<CaseResult>> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    dataset
        .iter()
        .zip(truth_labels)
        .map(|(case, labels)| {
            let run = || -> Result<CaseResult> {
                let combined = combine(&case.modality_refs(), rule)?;
                let metrics = match labels {
                    Some(g) => {
                        let (mask, p) = binarize_labeled(&combined, &config.binarize)?;
                        evaluate_labeled(&mask, &p, &case.truth, g, &config.metrics)?
                    }
                    None => {
                        let mask = binarize(&combined, &config.binarize)?;
                        evaluate(&mask, &case.truth, case.zone_mask(config.zone)?, &config.metrics)?
                    }
                };
                Ok(CaseResult {
                    case_id: case.case_id.clone(),
                    metrics,
                })
            };
            run().map_err(|e| match e {
                e @ Error::Case { .. } => e,
                e => e.in_case(&case.case_id),
            })
        })
        .collect()
}

pub fn evaluate_rule(dataset: &[CaseRecord], rule: impl Into<RuleSpec>, config: &EvalConfig) -> Result<RuleRow> {
    let spec = rule.into();
    let results = evaluate_rule_cases(dataset, &spec.rule, config)?;
    Ok(aggregate(spec, results))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankBy {
    Dsc,
    Hd95,
    Recall,
    Precision,
}

impl FromStr for RankBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dsc" => Ok(RankBy::Dsc),
            "hd95" => Ok(RankBy::Hd95),
            "recall" => Ok(RankBy::Recall),
            "precision" => Ok(RankBy::Precision),
            _ => Err(Error::InvalidArgument(format!("unknown ranking metric {s:?}"))),
        }
    }
}

impl RankBy {
    /// Larger is better; undefined values rank last.
    fn key(&self, row: &RuleRow) -> f64 {
        let v = match self {
            RankBy::Dsc => Some(row.mean_dsc),
            RankBy::Hd95 => row.mean_hd95_mm.map(|h| -h),
            RankBy::Recall => row.mean_recall,
            RankBy::Precision => row.mean_precision,
        };
        v.filter(|x| !x.is_nan()).unwrap_or(f64::NEG_INFINITY)
    }
}

/// Descending by key, then ascending HD95, then lexicographic rule.
pub fn rank_rows(rows: &mut [RuleRow], rank_by: RankBy) {
    rows.sort_by(|a, b| {
        rank_by
            .key(b)
            .total_cmp(&rank_by.key(a))
            .then_with(|| {
                let ha = a.mean_hd95_mm.unwrap_or(f64::INFINITY);
                let hb = b.mean_hd95_mm.unwrap_or(f64::INFINITY);
                ha.total_cmp(&hb)
            })
            .then_with(|| a.rule.tie_break(&b.rule))
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub kind: String,
    pub split: Option<Split>,
    pub rank_by: RankBy,
    pub rows: Vec<RuleRow>,
}

impl GridSearchResult {
    pub fn top(&self, k: usize) -> &[RuleRow] {
        &self.rows[..k.min(self.rows.len())]
    }

    /// Zero-based rank of the first row whose rule equals `rule`.
    pub fn rank_of(&self, rule: &CombiningRule) -> Option<usize> {
        self.rows.iter().position(|r| rule_eq(&r.rule.rule, rule))
    }

    /// `(α₁, α₂, mean DSC)` triples for a triangle heatmap with
    /// `α₃ = 1 − α₁ − α₂`. Empty for stacking searches.
    pub fn heatmap(&self) -> Vec<(f64, f64, f64)> {
        let mut cells: Vec<(f64, f64, f64)> = self
            .rows
            .iter()
            .filter_map(|r| match r.rule.rule {
                CombiningRule::Linear(l) => {
                    let a = l.alpha();
                    Some((a[0], a[1], r.mean_dsc))
                }
                CombiningRule::Stacking(_) => None,
            })
            .collect();
        cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        cells
    }
}

fn rule_eq(a: &CombiningRule, b: &CombiningRule) -> bool {
    let (pa, pb) = (a.params(), b.params());
    a.kind() == b.kind() && pa.iter().zip(&pb).all(|(x, y)| (x - y).abs() < 1e-9)
}

fn search(dataset: &[CaseRecord], specs: Vec<RuleSpec>, rank_by: RankBy, config: &EvalConfig) -> Result<Vec<RuleRow>> {
    let truth_labels = truth_labellings(dataset, config);
    let mut rows: Vec<RuleRow> = specs
        .into_par_iter()
        .map(|spec| Ok(aggregate(spec, evaluate_prepared(dataset, &truth_labels, &spec.rule, config)?)))
        .collect::<Result<_>>()?;
    rank_rows(&mut rows, rank_by);
    Ok(rows)
}

/// Evaluates every mixing rule on the simplex grid with the given step.
pub fn grid_search_linear(
    dataset: &[CaseRecord],
    step: f64,
    rank_by: RankBy,
    config: &EvalConfig,
    split: Option<Split>,
) -> Result<GridSearchResult> {
    let specs = simplex_grid(step)?.into_iter().map(RuleSpec::linear).collect();
    Ok(GridSearchResult {
        kind: "linear".into(),
        split,
        rank_by,
        rows: search(dataset, specs, rank_by, config)?,
    })
}

/// Evaluates every accepted stacking rule of a sampled set.
pub fn grid_search_stacking(
    dataset: &[CaseRecord],
    rules: &SampledRuleSet,
    rank_by: RankBy,
    config: &EvalConfig,
    split: Option<Split>,
) -> Result<GridSearchResult> {
    if rules.entries.is_empty() {
        return Err(Error::InvalidArgument("no stacking rules to search".into()));
    }
    let specs = rules
        .entries
        .iter()
        .map(|e| RuleSpec {
            rule: CombiningRule::Stacking(e.rule),
            rule_number: Some(e.rule_number),
            decision: Some(e.decision),
        })
        .collect();
    Ok(GridSearchResult {
        kind: "stacking".into(),
        split,
        rank_by,
        rows: search(dataset, specs, rank_by, config)?,
    })
}

/// Re-evaluates the given rows' rules on another dataset (e.g. the test split).
pub fn reevaluate(
    dataset: &[CaseRecord],
    rows: &[RuleRow],
    rank_by: RankBy,
    config: &EvalConfig,
    split: Option<Split>,
    kind: &str,
) -> Result<GridSearchResult> {
    let specs = rows.iter().map(|r| r.rule).collect();
    Ok(GridSearchResult {
        kind: kind.into(),
        split,
        rank_by,
        rows: search(dataset, specs, rank_by, config)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityRow {
    pub modalities: Vec<Modality>,
    pub row: RuleRow,
    pub delta_dsc: f64,
    pub delta_hd95_mm: Option<f64>,
    pub delta_recall: Option<f64>,
    pub delta_precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityTable {
    pub base: RuleRow,
    pub rows: Vec<AvailabilityRow>,
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

/// Scores each non-empty modality subset with equal weights over the
/// subset and reports differences to `base_rule`.
pub fn availability_analysis(dataset: &[CaseRecord], base_rule: &LinearRule, config: &EvalConfig) -> Result<AvailabilityTable> {
    base_rule.validate()?;
    let base = evaluate_rule(dataset, RuleSpec::linear(*base_rule), config)?;
    let subsets: [&[usize]; 7] = [&[0], &[1], &[2], &[0, 1], &[0, 2], &[1, 2], &[0, 1, 2]];
    let rows = subsets
        .iter()
        .map(|subset| {
            let rule = if subset.len() == 3 {
                LinearRule::uniform()
            } else {
                let mut alpha = [0.0; 3];
                for &i in subset.iter() {
                    alpha[i] = 1.0 / subset.len() as f64;
                }
                LinearRule::new(alpha)?
            };
            let row = evaluate_rule(dataset, RuleSpec::linear(rule), config)?;
            Ok(AvailabilityRow {
                modalities: subset.iter().map(|&i| Modality::INPUTS[i]).collect(),
                delta_dsc: row.mean_dsc - base.mean_dsc,
                delta_hd95_mm: diff(row.mean_hd95_mm, base.mean_hd95_mm),
                delta_recall: diff(row.mean_recall, base.mean_recall),
                delta_precision: diff(row.mean_precision, base.mean_precision),
                row,
            })
        })
        .collect::<Result<_>>()?;
    Ok(AvailabilityTable { base, rows })
}

/// Distribution that Monte-Carlo rules are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleDistribution {
    /// Mixing weights from a Dirichlet distribution.
    Dirichlet { concentration: [f64; 3] },
    /// Uniform over a finite rule list. Draws cycle through seeded
    /// permutations of the list, so every rule appears equally often
    /// whenever `n_draws` is a multiple of the list length.
    Uniform { rules: Vec<CombiningRule> },
}

impl RuleDistribution {
    pub fn point_mass(rule: CombiningRule) -> Self {
        RuleDistribution::Uniform { rules: vec![rule] }
    }

    pub fn from_sampled(set: &SampledRuleSet) -> Self {
        RuleDistribution::Uniform { rules: set.rules() }
    }

    pub fn draw(&self, n_draws: usize, seed: u64) -> Result<Vec<CombiningRule>> {
        let mut rng = rng_from_seed(seed);
        match self {
            RuleDistribution::Dirichlet { concentration } => (0..n_draws)
                .map(|_| dirichlet_draw(&mut rng, concentration).map(CombiningRule::Linear))
                .collect(),
            RuleDistribution::Uniform { rules } => {
                if rules.is_empty() {
                    return Err(Error::InvalidArgument("empty rule distribution".into()));
                }
                let mut out = Vec::with_capacity(n_draws);
                let mut order: Vec<usize> = (0..rules.len()).collect();
                while out.len() < n_draws {
                    order.shuffle(&mut rng);
                    out.extend(order.iter().take(n_draws - out.len()).map(|&i| rules[i]));
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCaseSummary {
    pub case_id: String,
    pub mean_voxel_variance: f64,
    pub max_voxel_variance: f64,
    pub dsc_mean: f64,
    /// Population variance of DSC across draws.
    pub dsc_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McCase {
    pub summary: McCaseSummary,
    /// Population variance of the combined probability per voxel.
    pub voxel_variance: Vec<f64>,
    pub dims: Dims,
    pub spacing: Spacing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub n_draws: usize,
    pub seed: u64,
    pub rules: Vec<CombiningRule>,
    pub cases: Vec<McCase>,
}

impl McResult {
    pub fn summaries(&self) -> Vec<McCaseSummary> {
        self.cases.iter().map(|c| c.summary.clone()).collect()
    }
}

/// Draws `n_draws` rules once and, for every case, accumulates the voxel-wise
/// variance of the combined map and the variance of DSC across draws.
pub fn monte_carlo_uncertainty(
    dataset: &[CaseRecord],
    distribution: &RuleDistribution,
    n_draws: usize,
    seed: u64,
    config: &EvalConfig,
) -> Result<McResult> {
    if n_draws < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 draws, got {n_draws}")));
    }
    let rules = distribution.draw(n_draws, seed)?;
    let cases = dataset
        .par_iter()
        .map(|case| mc_case(case, &rules, config).map_err(|e| e.in_case(&case.case_id)))
        .collect::<Result<Vec<_>>>()?;
    Ok(McResult {
        n_draws,
        seed,
        rules,
        cases,
    })
}

fn mc_case(case: &CaseRecord, rules: &[CombiningRule], config: &EvalConfig) -> Result<McCase> {
    let n = case.dims().len();
    let mut mean = vec![0.0f64; n];
    let mut m2 = vec![0.0f64; n];
    let mut dscs = Vec::with_capacity(rules.len());
    let zone = case.zone_mask(config.zone)?;
    let truth = match zone {
        Some(z) => case.truth.intersect(z)?,
        None => case.truth.clone(),
    };
    for (k, rule) in rules.iter().enumerate() {
        let z = combine(&case.modality_refs(), rule)?;
        let count = (k + 1) as f64;
        for ((m, s), &v) in mean.iter_mut().zip(m2.iter_mut()).zip(z.values()) {
            let delta = v - *m;
            *m += delta / count;
            *s += delta * (v - *m);
        }
        let mut mask = binarize(&z, &config.binarize)?;
        if let Some(zm) = zone {
            mask = mask.intersect(zm)?;
        }
        dscs.push(dice(&mask, &truth)?.value);
    }
    let draws = rules.len() as f64;
    let voxel_variance: Vec<f64> = m2.into_iter().map(|s| s / draws).collect();
    let dsc_mean = dscs.iter().sum::<f64>() / draws;
    let dsc_variance = dscs.iter().map(|d| (d - dsc_mean).powi(2)).sum::<f64>() / draws;
    Ok(McCase {
        summary: McCaseSummary {
            case_id: case.case_id.clone(),
            mean_voxel_variance: voxel_variance.iter().sum::<f64>() / n as f64,
            max_voxel_variance: voxel_variance.iter().copied().fold(0.0, f64::max),
            dsc_mean,
            dsc_variance,
        },
        voxel_variance,
        dims: case.dims(),
        spacing: case.spacing(),
    })
}
