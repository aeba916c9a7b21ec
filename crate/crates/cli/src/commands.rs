use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rulefuse_core::combiner::{binarize, combine, BinarizeConfig};
use rulefuse_core::discovery::{
    availability_analysis, evaluate_rule_cases, grid_search_linear, grid_search_stacking, reevaluate, CaseRecord,
    EvalConfig, GridSearchResult, RankBy, RuleDistribution, RuleSpec, Split,
};
use rulefuse_core::hyperfit::{fit_linear, fit_stacking, StackingOptions};
use rulefuse_core::io::{
    csv_bytes, load_any, load_dataset, load_rule_set, save_label, save_probability, write_report, Heatmap, ReportFormat, Tabular,
};
use rulefuse_core::metrics::evaluate;
use rulefuse_core::phantom::{generate_dataset, PhantomSpec};
use rulefuse_core::rule_algebra::{decision_from_number, pirads_decisions};
use rulefuse_core::sampler::rejection_sample_stacking;
use rulefuse_core::{discovery, CombiningRule, ConditionMatrix, FitReport, LinearRule, ProbabilityVolume, StackingRule, Zone};

use crate::cli::*;

/// Usage problems exit with 1, everything that goes wrong with data or
/// files exits with 2.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(rulefuse_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl From<rulefuse_core::Error> for CliError {
    fn from(e: rulefuse_core::Error) -> Self {
        CliError::Data(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(rulefuse_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Defaults loaded from `--config`; command-line flags take precedence.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub eval: EvalConfig,
    pub stacking: StackingOptions,
    pub eta: f64,
    pub phantom: PhantomSpec,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            eval: EvalConfig::default(),
            stacking: StackingOptions::default(),
            eta: 0.5,
            phantom: PhantomSpec::default(),
        }
    }
}

/// What goes into the `config` field of every JSON report.
#[derive(Debug, Serialize)]
struct Echo<'a, P: Serialize> {
    command: &'static str,
    seed: u64,
    params: &'a P,
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| usage(format!("cannot set up {} threads: {e}", cli.threads)))?;
    }
    let config = match &cli.config {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            serde_json::from_slice(&bytes).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => Config::default(),
    };
    let seed = cli.seed;
    match cli.command {
        Command::Fit(a) => fit(a, &config, seed),
        Command::Sample(a) => sample(a, &config, seed),
        Command::Combine(a) => combine_cmd(a, &config, seed),
        Command::Evaluate(a) => evaluate_cmd(a, &config, seed),
        Command::Search(a) => search(a, &config, seed),
        Command::McUncertainty(a) => mc(a, &config, seed),
        Command::Phantom(a) => phantom(a, &config, seed),
    }
}

fn report<P, T>(command: &'static str, seed: u64, params: &P, result: &T, json: &Path, csv: Option<&Path>) -> Result<()>
where
    P: Serialize,
    T: Serialize + Tabular,
{
    let echo = Echo { command, seed, params };
    write_report(result, &echo, ReportFormat::Json, json)?;
    if let Some(csv) = csv {
        write_report(result, &echo, ReportFormat::Csv, csv)?;
    }
    Ok(())
}

fn zone(z: ZoneArg) -> Zone {
    match z {
        ZoneArg::Wg => Zone::WG,
        ZoneArg::Tz => Zone::TZ,
        ZoneArg::Pz => Zone::PZ,
    }
}

fn split(s: SplitArg) -> Option<Split> {
    match s {
        SplitArg::Train => Some(Split::Train),
        SplitArg::Validation => Some(Split::Validation),
        SplitArg::Test => Some(Split::Test),
        SplitArg::All => None,
    }
}

fn rank_by(r: RankArg) -> RankBy {
    match r {
        RankArg::Dsc => RankBy::Dsc,
        RankArg::Hd95 => RankBy::Hd95,
        RankArg::Recall => RankBy::Recall,
        RankArg::Precision => RankBy::Precision,
    }
}

fn stacking_options(args: &StackingArgs, config: &Config) -> StackingOptions {
    StackingOptions {
        learning_rate: args.lr.unwrap_or(config.stacking.learning_rate),
        max_iters: args.iters.unwrap_or(config.stacking.max_iters),
    }
}

/// Inline JSON or a path to a JSON file. Bare arrays of three are mixing
/// weights, arrays of four are stacking weights `[β1, β2, β3, β0]`.
pub fn parse_rule(text: &str) -> Result<CombiningRule> {
    let source = if Path::new(text).is_file() {
        fs::read_to_string(text).map_err(|e| io_error(Path::new(text), e))?
    } else {
        text.to_string()
    };
    let value: serde_json::Value =
        serde_json::from_str(&source).map_err(|e| usage(format!("rule {text:?} is neither a file nor JSON: {e}")))?;
    let rule = match &value {
        serde_json::Value::Array(items) => {
            let nums: Vec<f64> = items
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| usage(format!("rule {text:?} must hold numbers"))))
                .collect::<Result<_>>()?;
            match nums.len() {
                3 => CombiningRule::Linear(LinearRule::new([nums[0], nums[1], nums[2]])?),
                4 => CombiningRule::Stacking(StackingRule::new([nums[0], nums[1], nums[2], nums[3]])?),
                n => return Err(usage(format!("rule {text:?} has {n} values, expected 3 or 4"))),
            }
        }
        _ => serde_json::from_value(value).map_err(|e| usage(format!("rule {text:?}: {e}")))?,
    };
    if let CombiningRule::Linear(l) = &rule {
        l.validate()?;
    }
    Ok(rule)
}

#[derive(Serialize)]
struct FitParams {
    rules: Vec<u8>,
    kind: &'static str,
    stacking: StackingOptions,
}

fn fit(a: FitArgs, config: &Config, seed: u64) -> Result<()> {
    let mut decisions = Vec::new();
    for z in &a.zones {
        decisions.push(pirads_decisions(zone(*z))?);
    }
    for &n in &a.rules {
        decisions.push(decision_from_number(n).map_err(|e| usage(e.to_string()))?);
    }
    if decisions.is_empty() {
        decisions = [Zone::WG, Zone::TZ, Zone::PZ]
            .iter()
            .map(|z| pirads_decisions(*z))
            .collect::<std::result::Result<_, _>>()?;
    }
    let opts = stacking_options(&a.stacking, config);
    let r = ConditionMatrix::canonical();
    let mut reports: Vec<FitReport> = Vec::new();
    for d in &decisions {
        if matches!(a.kind, FitKind::Linear | FitKind::Both) {
            reports.push(fit_linear(&r, d)?);
        }
        if matches!(a.kind, FitKind::Stacking | FitKind::Both) {
            reports.push(fit_stacking(&r, d, &opts)?);
        }
    }
    for (f, d) in reports.iter().zip(decisions.iter().flat_map(|d| {
        std::iter::repeat_n(d, if a.kind == FitKind::Both { 2 } else { 1 })
    })) {
        println!("{}", table_row(f, d.zone()));
    }
    let params = FitParams {
        rules: decisions.iter().map(|d| d.rule_number()).collect(),
        kind: match a.kind {
            FitKind::Linear => "linear",
            FitKind::Stacking => "stacking",
            FitKind::Both => "both",
        },
        stacking: opts,
    };
    report("fit", seed, &params, &reports, &a.out, a.csv.as_deref())
}

fn fmt_vec(v: &[f64], digits: usize) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.digits$}")).collect();
    format!("[{}]", parts.join(", "))
}

fn table_row(f: &FitReport, zone: Zone) -> String {
    let d: String = f.decision.as_u8().iter().map(|b| b.to_string()).collect();
    let extra = match (&f.t_stats, &f.odds_ratios) {
        (Some(t), _) => format!("t = {}", fmt_vec(t, 4)),
        (None, Some(o)) => {
            let parts: Vec<String> = o.iter().map(|x| format!("{x:.2e}")).collect();
            format!("e^β = [{}]", parts.join(", "))
        }
        _ => String::new(),
    };
    format!(
        "{zone:<6} | {d} | {:>3} | {:<8} | {} | {:.2e} | {extra}",
        f.rule_number,
        f.coefficients.kind(),
        fmt_vec(&f.coefficients.params(), 4),
        f.residual
    )
}

#[derive(Serialize)]
struct SampleParams {
    n_rules: usize,
    eta: f64,
    stacking: StackingOptions,
}

fn sample(a: SampleArgs, config: &Config, seed: u64) -> Result<()> {
    let opts = stacking_options(&a.stacking, config);
    let eta = a.eta.unwrap_or(config.eta);
    if a.n_rules > 256 {
        return Err(usage(format!("--n-rules must be at most 256, got {}", a.n_rules)));
    }
    let set = rejection_sample_stacking(a.n_rules, eta, &opts)?;
    println!("accepted {} of {} decision vectors (eta = {eta})", set.accepted_count, a.n_rules);
    let params = SampleParams {
        n_rules: a.n_rules,
        eta,
        stacking: opts,
    };
    report("sample", seed, &params, &set, &a.out, a.csv.as_deref())
}

fn combine_cmd(a: CombineArgs, config: &Config, _seed: u64) -> Result<()> {
    let rule = parse_rule(&a.rule)?;
    let load = |p: &Path, m: rulefuse_core::Modality| -> Result<ProbabilityVolume> {
        Ok(load_any(p)?.into_probability()?.with_modality(m))
    };
    use rulefuse_core::Modality;
    let vols = [load(&a.t2w, Modality::T2W)?, load(&a.dwi, Modality::DwiHb)?, load(&a.adc, Modality::ADC)?];
    let combined = combine(&[&vols[0], &vols[1], &vols[2]], &rule)?;
    let cfg = BinarizeConfig {
        threshold: a.threshold.unwrap_or(config.eval.binarize.threshold),
        min_region_voxels: a.min_region.unwrap_or(config.eval.binarize.min_region_voxels),
        connectivity: config.eval.binarize.connectivity,
    };
    let mask = binarize(&combined, &cfg)?;
    save_label(&a.out, &mask)?;
    if let Some(p) = &a.probability_out {
        save_probability(p, &combined)?;
    }
    println!("{} positive voxels", mask.count());
    Ok(())
}

fn eval_config(config: &Config, z: Option<ZoneArg>, lesion: Option<&LesionArgs>) -> EvalConfig {
    let mut cfg = config.eval;
    if let Some(z) = z {
        cfg.zone = zone(z);
    }
    if let Some(l) = lesion {
        cfg.metrics.s_gt = l.s_gt.unwrap_or(cfg.metrics.s_gt);
        cfg.metrics.s_pred = l.s_pred.unwrap_or(cfg.metrics.s_pred);
    }
    cfg
}

fn dataset(manifest: &Path, s: SplitArg) -> Result<Vec<CaseRecord>> {
    let cases = load_dataset(manifest, split(s))?;
    if cases.is_empty() {
        return Err(CliError::Data(rulefuse_core::Error::InvalidArgument(format!(
            "{}: no cases in split {s:?}",
            manifest.display()
        ))));
    }
    Ok(cases)
}

#[derive(Serialize)]
struct EvaluateParams {
    eval: EvalConfig,
    split: Option<Split>,
    rule: Option<CombiningRule>,
}

fn evaluate_cmd(a: EvaluateArgs, config: &Config, seed: u64) -> Result<()> {
    let cfg = eval_config(config, a.zone, Some(&a.lesion));
    if let (Some(pred), Some(truth)) = (&a.pred, &a.truth) {
        let pred = load_any(pred)?.into_label()?;
        let truth = load_any(truth)?.into_label()?;
        let zone_mask = a.zone_mask.as_ref().map(|p| load_any(p)?.into_label()).transpose()?;
        let metrics = evaluate(&pred, &truth, zone_mask.as_ref(), &cfg.metrics)?;
        let results = vec![discovery::CaseResult {
            case_id: "pair".into(),
            metrics,
        }];
        let params = EvaluateParams {
            eval: cfg,
            split: None,
            rule: None,
        };
        return report("evaluate", seed, &params, &results, &a.out, a.csv.as_deref());
    }
    let manifest = a.manifest.as_ref().ok_or_else(|| usage("--manifest or --pred/--truth is required"))?;
    let cases = dataset(manifest, a.split)?;
    if let Some(base) = &a.availability {
        let CombiningRule::Linear(base) = parse_rule(base)? else {
            return Err(usage("--availability needs a linear base rule"));
        };
        let table = availability_analysis(&cases, &base, &cfg)?;
        let params = EvaluateParams {
            eval: cfg,
            split: split(a.split),
            rule: Some(CombiningRule::Linear(base)),
        };
        return report("evaluate", seed, &params, &table, &a.out, a.csv.as_deref());
    }
    let rule = parse_rule(a.rule.as_deref().ok_or_else(|| usage("--rule is required with --manifest"))?)?;
    let results = evaluate_rule_cases(&cases, &rule, &cfg)?;
    #[derive(Serialize)]
    struct Out {
        aggregate: discovery::RuleRow,
        cases: Vec<discovery::CaseResult>,
    }
    impl Tabular for Out {
        fn header(&self) -> Vec<&'static str> {
            self.cases.header()
        }
        fn rows(&self) -> Vec<Vec<String>> {
            self.cases.rows()
        }
    }
    let aggregate = discovery::evaluate_rule(&cases, RuleSpec::from(rule), &cfg)?;
    let params = EvaluateParams {
        eval: cfg,
        split: split(a.split),
        rule: Some(rule),
    };
    println!("mean DSC {:.4} over {} cases", aggregate.mean_dsc, aggregate.n_cases);
    report("evaluate", seed, &params, &Out { aggregate, cases: results }, &a.out, a.csv.as_deref())
}

#[derive(Serialize)]
struct SearchParams {
    kind: &'static str,
    step: Option<f64>,
    rank_by: RankBy,
    split: Option<Split>,
    test_split: Option<Split>,
    top_k: usize,
    eval: EvalConfig,
}

/// Top-k slice of a search for the summary table.
struct Top<'a>(&'a GridSearchResult, usize);

impl Tabular for Top<'_> {
    fn header(&self) -> Vec<&'static str> {
        self.0.header()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.0.rows().into_iter().take(self.1).collect()
    }
}

fn write_csv<T: Tabular>(path: PathBuf, table: &T) -> Result<()> {
    let bytes = csv_bytes(table)?;
    fs::write(&path, bytes).map_err(|e| io_error(&path, e))

}

fn search(a: SearchArgs, config: &Config, seed: u64) -> Result<()> {
    let cfg = eval_config(config, a.zone, None);
    let rank = rank_by(a.rank_by);
    let cases = dataset(&a.manifest, a.split)?;
    let result = match a.kind {
        SearchKind::Linear => grid_search_linear(&cases, a.step, rank, &cfg, split(a.split))?,
        SearchKind::Stacking => {
            let path = a.rules.as_ref().ok_or_else(|| usage("--rules is required for stacking searches"))?;
            let set = load_rule_set(path)?;
            grid_search_stacking(&cases, &set, rank, &cfg, split(a.split))?
        }
    };
    let kind = match a.kind {
        SearchKind::Linear => "linear",
        SearchKind::Stacking => "stacking",
    };
    let params = SearchParams {
        kind,
        step: (a.kind == SearchKind::Linear).then_some(a.step),
        rank_by: rank,
        split: split(a.split),
        test_split: a.test_split.and_then(split),
        top_k: a.top_k,
        eval: cfg,
    };
    fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e))?;
    report("search", seed, &params, &result, &a.out.join("search.json"), Some(&a.out.join("search.csv")))?;
    write_csv(a.out.join("top.csv"), &Top(&result, a.top_k))?;
    if a.kind == SearchKind::Linear {
        write_csv(a.out.join("heatmap.csv"), &Heatmap(&result))?;
    }
    for (i, row) in result.top(a.top_k).iter().enumerate() {
        println!("{:>2}. {} DSC {:.4}", i + 1, fmt_vec(&row.rule.rule.params(), 2), row.mean_dsc);
    }
    if let Some(ts) = a.test_split {
        let held_out = dataset(&a.manifest, ts)?;
        let top: Vec<_> = result.top(a.top_k).to_vec();
        let test = reevaluate(&held_out, &top, rank, &cfg, split(ts), kind)?;
        report("search", seed, &params, &test, &a.out.join("test.json"), Some(&a.out.join("test.csv")))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct McParams {
    distribution: RuleDistribution,
    draws: usize,
    split: Option<Split>,
    eval: EvalConfig,
}

fn mc(a: McArgs, config: &Config, seed: u64) -> Result<()> {
    let cfg = eval_config(config, a.zone, None);
    let distribution = match (&a.dirichlet, &a.rules, &a.rule) {
        (Some(c), None, None) if c.len() != 3 => {
            return Err(usage(format!("--dirichlet needs 3 values, got {}", c.len())))
        }
        (Some(c), None, None) => RuleDistribution::Dirichlet {
            concentration: [c[0], c[1], c[2]],
        },
        (None, Some(p), None) => RuleDistribution::from_sampled(&load_rule_set(p)?),
        (None, None, Some(r)) => RuleDistribution::point_mass(parse_rule(r)?),
        _ => return Err(usage("exactly one of --dirichlet, --rules or --rule is required")),
    };
    if a.draws < 2 {
        return Err(usage(format!("--draws must be at least 2, got {}", a.draws)));
    }
    let cases = dataset(&a.manifest, a.split)?;
    fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e))?;
    let result = discovery::monte_carlo_uncertainty(&cases, &distribution, a.draws, seed, &cfg)?;
    if a.volumes {
        for c in &result.cases {
            let v = ProbabilityVolume::new(c.dims, c.spacing, rulefuse_core::Modality::Combined, c.voxel_variance.clone())?;
            save_probability(a.out.join(format!("{}_variance.json", c.summary.case_id)), &v)?;
        }
    }
    let params = McParams {
        distribution,
        draws: a.draws,
        split: split(a.split),
        eval: cfg,
    };
    let summaries = result.summaries();
    report("mc-uncertainty", seed, &params, &summaries, &a.out.join("mc.json"), Some(&a.out.join("mc.csv")))
}

fn phantom(a: PhantomArgs, config: &Config, seed: u64) -> Result<()> {
    let spec: PhantomSpec = match &a.spec {
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            serde_json::from_slice(&bytes).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => config.phantom.clone(),
    };
    if a.n_cases == 0 {
        return Err(usage("--n-cases must be at least 1"));
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let manifest = generate_dataset(seed, a.n_cases, &spec, &Default::default(), &a.out)?;
    println!("wrote {} cases to {}", manifest.cases.len(), a.out.display());
    Ok(())
}
