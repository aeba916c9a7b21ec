//! Python bindings: rule fitting, sampling, volumes, combining, metrics,
//! phantom generation and grid search.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use rulefuse_core::combiner::{self, BinarizeConfig};
use rulefuse_core::discovery::{self, EvalConfig, RankBy, Split};
use rulefuse_core::hyperfit::{self, StackingOptions};
use rulefuse_core::metrics::{self, MetricsConfig};
use rulefuse_core::phantom::{self, PhantomSpec};
use rulefuse_core::rule_algebra::{decision_from_number, pirads_decisions};
use rulefuse_core::{io, sampler, CombiningRule, ConditionMatrix, Dims, Error, Grid, Modality, Spacing, Zone};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn stacking_options(lr: f64, iters: usize) -> StackingOptions {
    StackingOptions {
        learning_rate: lr,
        max_iters: iters,
    }
}

/// Mixing weights on the probability simplex.
#[pyclass(frozen, skip_from_py_object, module = "rulefuse")]
#[derive(Clone)]
pub struct LinearRule(rulefuse_core::LinearRule);

#[pymethods]
impl LinearRule {
    #[new]
    fn new(alpha: [f64; 3]) -> PyResult<Self> {
        Ok(Self(rulefuse_core::LinearRule::new(alpha).map_err(err)?))
    }

    #[getter]
    fn alpha(&self) -> [f64; 3] {
        self.0.alpha()
    }

    fn __repr__(&self) -> String {
        format!("LinearRule({:?})", self.0.alpha())
    }
}

/// Logistic stacking weights `[β1, β2, β3, β0]`.
#[pyclass(frozen, skip_from_py_object, module = "rulefuse")]
#[derive(Clone)]
pub struct StackingRule(rulefuse_core::StackingRule);

#[pymethods]
impl StackingRule {
    #[new]
    fn new(beta: [f64; 4]) -> PyResult<Self> {
        Ok(Self(rulefuse_core::StackingRule::new(beta).map_err(err)?))
    }

    #[getter]
    fn beta(&self) -> [f64; 4] {
        self.0.beta()
    }

    fn odds_ratios(&self) -> [f64; 4] {
        hyperfit::odds_ratios(&self.0)
    }

    fn __repr__(&self) -> String {
        format!("StackingRule({:?})", self.0.beta())
    }
}

fn rule_from(obj: &Bound<'_, PyAny>) -> PyResult<CombiningRule> {
    if let Ok(r) = obj.cast::<LinearRule>() {
        return Ok(CombiningRule::Linear(r.get().0));
    }
    if let Ok(r) = obj.cast::<StackingRule>() {
        return Ok(CombiningRule::Stacking(r.get().0));
    }
    Err(PyValueError::new_err("expected a LinearRule or StackingRule"))
}

#[pyclass(frozen, module = "rulefuse")]
pub struct FitReport(rulefuse_core::FitReport);

#[pymethods]
impl FitReport {
    #[getter]
    fn rule_number(&self) -> u8 {
        self.0.rule_number
    }

    #[getter]
    fn decision(&self) -> [u8; 8] {
        self.0.decision.as_u8()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.coefficients.kind()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.0.coefficients.params()
    }

    #[getter]
    fn residual(&self) -> f64 {
        self.0.residual
    }

    #[getter]
    fn t_stats(&self) -> Option<[f64; 3]> {
        self.0.t_stats
    }

    #[getter]
    fn odds_ratios(&self) -> Option<[f64; 4]> {
        self.0.odds_ratios
    }

    #[getter]
    fn degenerate(&self) -> bool {
        self.0.degenerate
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0)
    }

    fn __repr__(&self) -> String {
        format!(
            "FitReport(rule={}, {}={:?}, residual={:e})",
            self.0.rule_number,
            self.0.coefficients.kind(),
            self.0.coefficients.params(),
            self.0.residual
        )
    }
}

#[pyclass(frozen, module = "rulefuse")]
pub struct SampledRuleSet(sampler::SampledRuleSet);

#[pymethods]
impl SampledRuleSet {
    #[getter]
    fn accepted_count(&self) -> usize {
        self.0.accepted_count
    }

    #[getter]
    fn rule_numbers(&self) -> Vec<u8> {
        self.0.rule_numbers()
    }

    fn rule(&self, rule_number: u8) -> Option<StackingRule> {
        self.0.get(rule_number).map(|e| StackingRule(e.rule))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_rule_set(path, &self.0).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        io::load_rule_set(path).map(Self).map_err(err)
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0)
    }

    fn __len__(&self) -> usize {
        self.0.entries.len()
    }
}

/// Per-voxel probabilities in [0, 1], x varying fastest.
#[pyclass(frozen, module = "rulefuse")]
pub struct ProbabilityVolume(rulefuse_core::ProbabilityVolume);

#[pymethods]
impl ProbabilityVolume {
    #[new]
    #[pyo3(signature = (values, dims, spacing = (1.0, 1.0, 1.0)))]
    fn new(values: Vec<f64>, dims: (usize, usize, usize), spacing: (f64, f64, f64)) -> PyResult<Self> {
        let dims = Dims::new(dims.0, dims.1, dims.2);
        let spacing = Spacing([spacing.0, spacing.1, spacing.2]);
        rulefuse_core::ProbabilityVolume::new(dims, spacing, Modality::Combined, values)
            .map(Self)
            .map_err(err)
    }

    /// Loads a native sidecar volume or a `.nii` file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        io::load_any(path).and_then(|v| v.into_probability()).map(Self).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_probability(path, &self.0).map_err(err)
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.0.dims().as_array()
    }

    #[getter]
    fn spacing(&self) -> [f64; 3] {
        self.0.spacing().0
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.values().len()
    }
}

#[pyclass(frozen, module = "rulefuse")]
pub struct LabelVolume(rulefuse_core::LabelVolume);

#[pymethods]
impl LabelVolume {
    #[new]
    #[pyo3(signature = (values, dims, spacing = (1.0, 1.0, 1.0)))]
    fn new(values: Vec<bool>, dims: (usize, usize, usize), spacing: (f64, f64, f64)) -> PyResult<Self> {
        let dims = Dims::new(dims.0, dims.1, dims.2);
        let spacing = Spacing([spacing.0, spacing.1, spacing.2]);
        rulefuse_core::LabelVolume::new(dims, spacing, values).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        io::load_any(path).and_then(|v| v.into_label()).map(Self).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_label(path, &self.0).map_err(err)
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.0.dims().as_array()
    }

    #[getter]
    fn spacing(&self) -> [f64; 3] {
        self.0.spacing().0
    }

    #[getter]
    fn values(&self) -> Vec<bool> {
        self.0.values().to_vec()
    }

    fn count(&self) -> usize {
        self.0.count()
    }

    fn __len__(&self) -> usize {
        self.0.values().len()
    }
}

/// PI-RADS rule number for "tz", "pz" or "wg".
#[pyfunction]
fn pirads_rule(zone: &str) -> PyResult<u8> {
    let zone: Zone = parse(zone)?;
    Ok(pirads_decisions(zone).map_err(err)?.rule_number())
}

#[pyfunction]
fn fit_linear(rule_number: i64) -> PyResult<FitReport> {
    let d = decision_from_number(rule_number).map_err(err)?;
    hyperfit::fit_linear(&ConditionMatrix::canonical(), &d).map(FitReport).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (rule_number, lr = 1.0, iters = 10_000))]
fn fit_stacking(rule_number: i64, lr: f64, iters: usize) -> PyResult<FitReport> {
    let d = decision_from_number(rule_number).map_err(err)?;
    hyperfit::fit_stacking(&ConditionMatrix::canonical(), &d, &stacking_options(lr, iters))
        .map(FitReport)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (n_rules = 256, eta = 0.5, lr = 1.0, iters = 10_000))]
fn rejection_sample(py: Python<'_>, n_rules: usize, eta: f64, lr: f64, iters: usize) -> PyResult<SampledRuleSet> {
    let opts = stacking_options(lr, iters);
    py.detach(|| sampler::rejection_sample_stacking(n_rules, eta, &opts))
        .map(SampledRuleSet)
        .map_err(err)
}

/// Mixing weights on the simplex grid with the given step.
#[pyfunction]
#[pyo3(signature = (step = 0.1))]
fn simplex_grid(step: f64) -> PyResult<Vec<LinearRule>> {
    Ok(sampler::simplex_grid(step).map_err(err)?.into_iter().map(LinearRule).collect())
}

#[pyfunction]
fn combine(
    t2w: &ProbabilityVolume,
    dwi_hb: &ProbabilityVolume,
    adc: &ProbabilityVolume,
    rule: &Bound<'_, PyAny>,
) -> PyResult<ProbabilityVolume> {
    let rule = rule_from(rule)?;
    combiner::combine(&[&t2w.0, &dwi_hb.0, &adc.0], &rule).map(ProbabilityVolume).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (volume, threshold = 0.5, min_region = 27))]
fn binarize(volume: &ProbabilityVolume, threshold: f64, min_region: usize) -> PyResult<LabelVolume> {
    let cfg = BinarizeConfig {
        threshold,
        min_region_voxels: min_region,
        ..BinarizeConfig::default()
    };
    combiner::binarize(&volume.0, &cfg).map(LabelVolume).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (pred, truth, zone_mask = None, s_gt = 0.1, s_pred = 0.1))]
fn evaluate(
    py: Python<'_>,
    pred: &LabelVolume,
    truth: &LabelVolume,
    zone_mask: Option<&LabelVolume>,
    s_gt: f64,
    s_pred: f64,
) -> PyResult<Py<PyAny>> {
    let cfg = MetricsConfig {
        s_gt,
        s_pred,
        ..MetricsConfig::default()
    };
    let report = metrics::evaluate(&pred.0, &truth.0, zone_mask.map(|z| &z.0), &cfg).map_err(err)?;
    to_py(py, &report)
}

/// Writes a synthetic dataset and returns the path of its manifest.
#[pyfunction]
#[pyo3(signature = (out_dir, n_cases, seed = 0, spec_json = None))]
fn generate_phantom(
    py: Python<'_>,
    out_dir: PathBuf,
    n_cases: usize,
    seed: u64,
    spec_json: Option<&str>,
) -> PyResult<PathBuf> {
    let spec: PhantomSpec = match spec_json {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => PhantomSpec::default(),
    };
    py.detach(|| phantom::generate_dataset(seed, n_cases, &spec, &Default::default(), &out_dir))
        .map_err(err)?;
    Ok(out_dir.join("manifest.json"))
}

/// Ranks every simplex-grid rule on one split of a dataset manifest.
#[pyfunction]
#[pyo3(signature = (manifest, step = 0.1, split = "validation", rank_by = "dsc", zone = "wg"))]
fn grid_search(
    py: Python<'_>,
    manifest: PathBuf,
    step: f64,
    split: &str,
    rank_by: &str,
    zone: &str,
) -> PyResult<Py<PyAny>> {
    let split: Option<Split> = if split == "all" { None } else { Some(parse(split)?) };
    let rank_by: RankBy = parse(rank_by)?;
    let config = EvalConfig {
        zone: parse(zone)?,
        ..EvalConfig::default()
    };
    let result = py
        .detach(|| {
            let cases = io::load_dataset(&manifest, split)?;
            discovery::grid_search_linear(&cases, step, rank_by, &config, split)
        })
        .map_err(err)?;
    to_py(py, &result)
}

#[pymodule]
fn rulefuse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<LinearRule>()?;
    m.add_class::<StackingRule>()?;
    m.add_class::<FitReport>()?;
    m.add_class::<SampledRuleSet>()?;
    m.add_class::<ProbabilityVolume>()?;
    m.add_class::<LabelVolume>()?;
    m.add_function(wrap_pyfunction!(pirads_rule, m)?)?;
    m.add_function(wrap_pyfunction!(fit_linear, m)?)?;
    m.add_function(wrap_pyfunction!(fit_stacking, m)?)?;
    m.add_function(wrap_pyfunction!(rejection_sample, m)?)?;
    m.add_function(wrap_pyfunction!(simplex_grid, m)?)?;
    m.add_function(wrap_pyfunction!(combine, m)?)?;
    m.add_function(wrap_pyfunction!(binarize, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(generate_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(grid_search, m)?)?;
    Ok(())
}
