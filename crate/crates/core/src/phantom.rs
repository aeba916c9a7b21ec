//! Synthetic multi-modality cases with controllable per-modality
//! informativeness and optional planted mixing rules.
//!
//! Truth is a union of separated ellipsoids. Modality `k` is
//! `clip(fₖ·s + (1 − fₖ)·n + ε)` where `s = (truth + blur(truth))/2` keeps
//! the truth exactly recoverable at threshold 0.5, `n` is a blurred and
//! stretched uniform field and `ε` is white Gaussian noise.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combiner::{binarize, combine_linear, BinarizeConfig};
use crate::discovery::{assign_splits, splitmix64, CaseRecord, SplitRatios, ZoneMasks};
use crate::error::{Error, Result};
use crate::hyperfit::LinearRule;
use crate::io::{save_label, save_probability, write_json, DatasetManifest, ManifestCase};
use crate::sampler::rng_from_seed;
use crate::volume::{Dims, LabelVolume, Modality, ProbabilityVolume, Spacing};

pub const MIN_EXTENT: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub n_lesions: usize,
    /// Ellipsoid semi-axis range in voxels.
    pub radius_range: [f64; 2],
    pub fidelity: [f64; 3],
    pub noise_sd: f64,
    pub blur_half_width: usize,
    pub planted_rule: Option<LinearRule>,
    /// Used to binarize the planted-rule mixture into truth.
    pub binarize: BinarizeConfig,
    pub zone_masks: bool,
    /// Placement attempts per lesion before giving up.
    pub max_attempts: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [48, 48, 48],
            spacing_mm: [1.0; 3],
            n_lesions: 3,
            radius_range: [2.0, 9.0],
            fidelity: [1.0; 3],
            noise_sd: 0.1,
            blur_half_width: 2,
            planted_rule: None,
            binarize: BinarizeConfig::default(),
            zone_masks: false,
            max_attempts: 1000,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&n| n < MIN_EXTENT) {
            return Err(Error::InvalidArgument(format!("phantom dims must be at least {MIN_EXTENT}³, got {:?}", self.dims)));
        }
        let [lo, hi] = self.radius_range;
        if !(lo >= 2.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("radius range must satisfy 2 ≤ min ≤ max, got {:?}", self.radius_range)));
        }
        if self.fidelity.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::InvalidArgument(format!("fidelity must lie in [0, 1], got {:?}", self.fidelity)));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise sd must be non-negative, got {}", self.noise_sd)));
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidArgument("max_attempts must be positive".into()));
        }
        if let Some(rule) = &self.planted_rule {
            rule.validate()?;
        }
        Ok(())
    }

    fn grid(&self) -> (Dims, Spacing) {
        (Dims::new(self.dims[0], self.dims[1], self.dims[2]), Spacing(self.spacing_mm))
    }
}

/// Triangular weights `h+1−|k|` applied along each axis, renormalized over
/// the taps that fall inside the grid.
pub fn triangular_blur(values: &[f64], dims: Dims, half_width: usize) -> Vec<f64> {
    if half_width == 0 {
        return values.to_vec();
    }
    let h = half_width as i64;
    let kernel: Vec<f64> = (-h..=h).map(|k| (h + 1 - k.abs()) as f64).collect();
    let [nx, ny, nz] = dims.as_array();
    let strides = [1, nx, nx * ny];
    let extents = [nx, ny, nz];
    let mut cur = values.to_vec();
    let mut next = vec![0.0; cur.len()];
    for axis in 0..3 {
        let (stride, n) = (strides[axis], extents[axis] as i64);
        for (i, out) in next.iter_mut().enumerate() {
            let pos = ((i / stride) % extents[axis]) as i64;
            let (mut acc, mut norm) = (0.0, 0.0);
            for (k, w) in kernel.iter().enumerate() {
                let p = pos + k as i64 - h;
                if (0..n).contains(&p) {
                    acc += w * cur[(i as i64 + (p - pos) * stride as i64) as usize];
                    norm += w;
                }
            }
            *out = acc / norm;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

struct Ellipsoid {
    center: [i64; 3],
    axes: [f64; 3],
}

impl Ellipsoid {
    fn voxels(&self, dims: Dims) -> Vec<usize> {
        let mut out = Vec::new();
        let r = self.axes.map(|a| a.floor() as i64);
        for dz in -r[2]..=r[2] {
            for dy in -r[1]..=r[1] {
                for dx in -r[0]..=r[0] {
                    let q = (dx as f64 / self.axes[0]).powi(2)
                        + (dy as f64 / self.axes[1]).powi(2)
                        + (dz as f64 / self.axes[2]).powi(2);
                    if q <= 1.0 {
                        let [x, y, z] = [self.center[0] + dx, self.center[1] + dy, self.center[2] + dz];
                        out.push(dims.index(x as usize, y as usize, z as usize));
                    }
                }
            }
        }
        out
    }
}

/// Places `n` ellipsoids with at least one free voxel between any two, so
/// they form separate components under every connectivity.
fn place_lesions<R: Rng>(rng: &mut R, spec: &PhantomSpec, dims: Dims) -> Result<Vec<bool>> {
    let mut truth = vec![false; dims.len()];
    let mut blocked = vec![false; dims.len()];
    let extents = dims.as_array();
    let [lo, hi] = spec.radius_range;
    for _ in 0..spec.n_lesions {
        let mut placed = false;
        for _ in 0..spec.max_attempts {
            let axes = [0; 3].map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo });
            let mut center = [0i64; 3];
            let mut fits = true;
            for a in 0..3 {
                let r = axes[a].floor() as i64;
                let (min, max) = (r + 1, extents[a] as i64 - r - 2);
                if min > max {
                    fits = false;
                    break;
                }
                center[a] = rng.random_range(min..=max);
            }
            if !fits {
                continue;
            }
            let voxels = Ellipsoid { center, axes }.voxels(dims);
            if voxels.iter().any(|&i| blocked[i]) {
                continue;
            }
            for &i in &voxels {
                truth[i] = true;
                let [x, y, z] = dims.coords(i);
                for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let p = [x as i64 + dx, y as i64 + dy, z as i64 + dz];
                            if p.iter().zip(&extents).all(|(&c, &n)| c >= 0 && c < n as i64) {
                                blocked[dims.index(p[0] as usize, p[1] as usize, p[2] as usize)] = true;
                            }
                        }
                    }
                }
            }
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::InfeasiblePacking {
                attempts: spec.max_attempts,
            });
        }
    }
    Ok(truth)
}

fn distractor_field<R: Rng>(rng: &mut R, dims: Dims, half_width: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..dims.len()).map(|_| rng.random::<f64>()).collect();
    let blurred = triangular_blur(&raw, dims, half_width.max(1));
    let (min, max) = blurred
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = max - min;
    blurred
        .into_iter()
        .map(|v| if span > 0.0 { (v - min) / span } else { 0.5 })
        .collect()
}

/// Central box in x and y as TZ, the rest of the grid as PZ.
fn zone_boxes(dims: Dims, spacing: Spacing) -> Result<ZoneMasks> {
    let tz: Vec<bool> = (0..dims.len())
        .map(|i| {
            let [x, y, _] = dims.coords(i);
            (dims.nx / 4..dims.nx - dims.nx / 4).contains(&x) && (dims.ny / 4..dims.ny - dims.ny / 4).contains(&y)
        })
        .collect();
    let pz = tz.iter().map(|v| !v).collect();
    Ok(ZoneMasks {
        tz: Some(LabelVolume::new(dims, spacing, tz)?),
        pz: Some(LabelVolume::new(dims, spacing, pz)?),
    })
}

/// One case, fully determined by `seed` and `spec`. Map values are rounded
/// to f32 so a saved and reloaded case is identical to the in-memory one.
pub fn generate_case(seed: u64, spec: &PhantomSpec, case_id: &str) -> Result<CaseRecord> {
    spec.validate()?;
    let (dims, spacing) = spec.grid();
    let mut rng = rng_from_seed(seed);
    let truth = place_lesions(&mut rng, spec, dims)?;
    let truth_f: Vec<f64> = truth.iter().map(|&t| f64::from(u8::from(t))).collect();
    let blurred = triangular_blur(&truth_f, dims, spec.blur_half_width);
    let signal: Vec<f64> = truth_f.iter().zip(&blurred).map(|(t, b)| (t + b) / 2.0).collect();
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut maps = Vec::with_capacity(3);
    for (k, &f) in spec.fidelity.iter().enumerate() {
        // Independent stream per modality, untouched by lesion placement.
        let mut rng = rng_from_seed(splitmix64(seed ^ splitmix64(k as u64 + 1)));
        let field = distractor_field(&mut rng, dims, spec.blur_half_width);
        let values: Vec<f64> = signal
            .iter()
            .zip(&field)
            .map(|(&s, &n)| {
                let eps = if spec.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                f64::from((f * s + (1.0 - f) * n + eps).clamp(0.0, 1.0) as f32)
            })
            .collect();
        maps.push(ProbabilityVolume::new(dims, spacing, Modality::INPUTS[k], values)?);
    }
    let modalities: [ProbabilityVolume; 3] = maps.try_into().expect("three modalities");
    let truth = match &spec.planted_rule {
        Some(rule) => {
            let mixed = combine_linear(&[&modalities[0], &modalities[1], &modalities[2]], rule)?;
            binarize(&mixed, &spec.binarize)?
        }
        None => LabelVolume::new(dims, spacing, truth)?,
    };
    let zones = if spec.zone_masks { zone_boxes(dims, spacing)? } else { ZoneMasks::default() };
    CaseRecord::new(case_id, modalities, truth, zones)
}

pub fn case_id(index: usize) -> String {
    format!("case_{index:04}")
}

pub fn case_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(index as u64))
}

/// `n_cases` cases with ids `case_0000…`, generated in parallel.
pub fn generate_cases(seed: u64, n_cases: usize, spec: &PhantomSpec) -> Result<Vec<CaseRecord>> {
    if n_cases == 0 {
        return Err(Error::InvalidArgument("n_cases must be at least 1".into()));
    }
    spec.validate()?;
    (0..n_cases)
        .into_par_iter()
        .map(|i| {
            let id = case_id(i);
            generate_case(case_seed(seed, i), spec, &id).map_err(|e| e.in_case(&id))
        })
        .collect()
}

/// Writes every case under `out_dir/<case_id>/` and a `manifest.json` with
/// hash-assigned splits.
pub fn generate_dataset(
    seed: u64,
    n_cases: usize,
    spec: &PhantomSpec,
    ratios: &SplitRatios,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let cases = generate_cases(seed, n_cases, spec)?;
    let ids: Vec<String> = cases.iter().map(|c| c.case_id.clone()).collect();
    let splits = assign_splits(&ids, seed, ratios)?;
    let mut entries = Vec::with_capacity(n_cases);
    for (case, split) in cases.iter().zip(splits) {
        let rel = |name: &str| Path::new(&case.case_id).join(format!("{name}.json"));
        for (m, name) in case.modalities.iter().zip(["t2w", "dwi_hb", "adc"]) {
            save_probability(out_dir.join(rel(name)), m)?;
        }
        save_label(out_dir.join(rel("truth")), &case.truth)?;
        if let Some(z) = &case.zones.tz {
            save_label(out_dir.join(rel("tz")), z)?;
        }
        if let Some(z) = &case.zones.pz {
            save_label(out_dir.join(rel("pz")), z)?;
        }
        entries.push(ManifestCase {
            case_id: case.case_id.clone(),
            split: Some(split),
            t2w: rel("t2w"),
            dwi_hb: rel("dwi_hb"),
            adc: rel("adc"),
            truth: rel("truth"),
            tz: case.zones.tz.as_ref().map(|_| rel("tz")),
            pz: case.zones.pz.as_ref().map(|_| rel("pz")),
        });
    }
    let manifest = DatasetManifest {
        split_seed: seed,
        ratios: *ratios,
        cases: entries,
    };
    write_json(out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combiner::BinarizeConfig;
    use crate::discovery::{evaluate_rule, EvalConfig, RuleSpec, Split};
    use crate::io::load_dataset;
    use crate::metrics::{connected_components, dice};

    fn small() -> PhantomSpec {
        PhantomSpec {
            dims: [20, 20, 20],
            radius_range: [2.0, 4.0],
            n_lesions: 2,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn blur_preserves_mass_in_interior() {
        let dims = Dims::cube(16);
        let flat = vec![0.3; dims.len()];
        assert!(triangular_blur(&flat, dims, 3).iter().all(|v| (v - 0.3).abs() < 1e-12));
        let mut v = vec![0.0; dims.len()];
        v[dims.index(8, 8, 8)] = 1.0;
        let b = triangular_blur(&v, dims, 2);
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((b[dims.index(8, 8, 8)] - (3.0f64 / 9.0).powi(3)).abs() < 1e-12);
    }

    #[test]
    fn exact_modalities_threshold_to_truth() {
        let spec = PhantomSpec { noise_sd: 0.0, ..small() };
        let case = generate_case(5, &spec, "c").unwrap();
        let cfg = BinarizeConfig { min_region_voxels: 1, ..BinarizeConfig::default() };
        for m in &case.modalities {
            let mask = binarize(m, &cfg).unwrap();
            assert_eq!(mask, case.truth);
        }
        let lesions = connected_components(&case.truth, crate::volume::Connectivity::TwentySix);
        assert_eq!(lesions.len(), 2);
    }

    #[test]
    fn one_hot_rules_score_one_without_noise() {
        let spec = PhantomSpec { noise_sd: 0.0, ..small() };
        let cases = generate_cases(3, 3, &spec).unwrap();
        for k in 0..3 {
            let row = evaluate_rule(&cases, RuleSpec::linear(LinearRule::one_hot(k)), &EvalConfig::default()).unwrap();
            assert_eq!(row.mean_dsc, 1.0);
        }
    }

    #[test]
    fn zero_fidelity_modality_ignores_truth() {
        let spec = PhantomSpec {
            noise_sd: 0.0,
            fidelity: [1.0, 1.0, 0.0],
            ..small()
        };
        let a = generate_case(11, &spec, "a").unwrap();
        let b = generate_case(11, &PhantomSpec { n_lesions: 0, ..spec }, "a").unwrap();
        assert_eq!(a.modalities[2], b.modalities[2]);
        assert_ne!(a.modalities[0], b.modalities[0]);
    }

    #[test]
    fn planted_truth_is_the_mixture() {
        let rule = LinearRule::new([0.5, 0.5, 0.0]).unwrap();
        let spec = PhantomSpec {
            planted_rule: Some(rule),
            fidelity: [0.8, 0.8, 0.0],
            ..small()
        };
        let case = generate_case(2, &spec, "p").unwrap();
        let mixed = combine_linear(&case.modality_refs(), &rule).unwrap();
        let mask = binarize(&mixed, &BinarizeConfig::default()).unwrap();
        assert_eq!(dice(&mask, &case.truth).unwrap().value, 1.0);
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate_case(9, &small(), "x").unwrap(), generate_case(9, &small(), "x").unwrap());
        assert_ne!(generate_case(9, &small(), "x").unwrap(), generate_case(10, &small(), "x").unwrap());
    }

    #[test]
    fn rejects_small_grids_and_crowding() {
        assert!(generate_case(1, &PhantomSpec { dims: [15, 16, 16], ..small() }, "x").is_err());
        let crowded = PhantomSpec {
            n_lesions: 200,
            radius_range: [4.0, 4.0],
            max_attempts: 20,
            ..small()
        };
        assert!(matches!(generate_case(1, &crowded, "x"), Err(Error::InfeasiblePacking { attempts: 20 })));
    }

    #[test]
    fn dataset_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PhantomSpec { zone_masks: true, ..small() };
        let manifest = generate_dataset(4, 10, &spec, &SplitRatios::default(), dir.path()).unwrap();
        assert_eq!(manifest.cases.len(), 10);
        let loaded = load_dataset(dir.path().join("manifest.json"), None).unwrap();
        assert_eq!(loaded, generate_cases(4, 10, &spec).unwrap());
        let n: usize = [Split::Train, Split::Validation, Split::Test]
            .iter()
            .map(|s| load_dataset(dir.path().join("manifest.json"), Some(*s)).unwrap().len())
            .sum();
        assert_eq!(n, 10);
        let again = tempfile::tempdir().unwrap();
        generate_dataset(4, 10, &spec, &SplitRatios::default(), again.path()).unwrap();
        for c in &manifest.cases {
            let a = std::fs::read(dir.path().join(&c.t2w).with_extension("raw")).unwrap();
            let b = std::fs::read(again.path().join(&c.t2w).with_extension("raw")).unwrap();
            assert_eq!(a, b);
        }
    }
}
