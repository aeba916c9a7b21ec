//! Voxel-wise application of combining rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyperfit::{sigmoid, CombiningRule, LinearRule, StackingRule};
use crate::metrics::{label_components, ComponentLabels};
use crate::volume::{validate_aligned, Connectivity, Grid, LabelVolume, Modality, ProbabilityVolume};

/// Probability threshold, small-region size and connectivity used to turn
/// a probability map into a mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinarizeConfig {
    pub threshold: f64,
    pub min_region_voxels: usize,
    pub connectivity: Connectivity,
}

impl Default for BinarizeConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            min_region_voxels: 27,
            connectivity: Connectivity::TwentySix,
        }
    }
}

/// Modality volumes in (T2W, DWI_hb, ADC) order.
pub type ModalityVolumes<'a> = [&'a ProbabilityVolume; 3];

fn aligned(volumes: &ModalityVolumes<'_>) -> Result<()> {
    validate_aligned(&[volumes[0] as &dyn Grid, volumes[1], volumes[2]])
}

/// `Σ_τ w_τ·Y^τ` per voxel for arbitrary weights, without range checks.
pub fn mix_linear(volumes: &ModalityVolumes<'_>, weights: [f64; 3]) -> Result<Vec<f64>> {
    aligned(volumes)?;
    let [a, b, c] = volumes.map(|v| v.values());
    Ok(a.iter()
        .zip(b)
        .zip(c)
        .map(|((x, y), z)| weights[0] * x + weights[1] * y + weights[2] * z)
        .collect())
}

/// Weighted sum of the three modality maps under a simplex rule.
pub fn combine_linear(volumes: &ModalityVolumes<'_>, rule: &LinearRule) -> Result<ProbabilityVolume> {
    rule.validate()?;
    // Rounding can push a convex combination a few ulps past 1.
    let values = mix_linear(volumes, rule.alpha())?
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    ProbabilityVolume::new(volumes[0].dims(), volumes[0].spacing(), Modality::Combined, values)
}

/// Pre-sigmoid stacking activations.
pub fn stacking_logits(volumes: &ModalityVolumes<'_>, rule: &StackingRule) -> Result<Vec<f64>> {
    aligned(volumes)?;
    let [a, b, c] = volumes.map(|v| v.values());
    Ok(a.iter()
        .zip(b)
        .zip(c)
        .map(|((&x, &y), &z)| rule.logit([x, y, z]))
        .collect())
}

/// `σ(Σ_τ β_τ·Y^τ + β₀)` per voxel.
pub fn combine_stacking(volumes: &ModalityVolumes<'_>, rule: &StackingRule) -> Result<ProbabilityVolume> {
    let values = stacking_logits(volumes, rule)?.into_iter().map(sigmoid).collect();
    ProbabilityVolume::new(volumes[0].dims(), volumes[0].spacing(), Modality::Combined, values)
}

pub fn combine(volumes: &ModalityVolumes<'_>, rule: &CombiningRule) -> Result<ProbabilityVolume> {
    match rule {
        CombiningRule::Linear(l) => combine_linear(volumes, l),
        CombiningRule::Stacking(s) => combine_stacking(volumes, s),
    }
}

/// Majority vote: positive where at least two of the three masks are.
pub fn combine_vote(masks: [&LabelVolume; 3]) -> Result<LabelVolume> {
    validate_aligned(&[masks[0] as &dyn Grid, masks[1], masks[2]])?;
    let [a, b, c] = masks.map(|m| m.values());
    let values = a
        .iter()
        .zip(b)
        .zip(c)
        .map(|((&x, &y), &z)| u8::from(x) + u8::from(y) + u8::from(z) >= 2)
        .collect();
    LabelVolume::new(masks[0].dims(), masks[0].spacing(), values)
}

/// Drops connected components smaller than `min_voxels`.
pub fn remove_small_regions(mask: &mut LabelVolume, min_voxels: usize, connectivity: Connectivity) {
    if min_voxels <= 1 {
        return;
    }
    let mut cl = label_components(mask, connectivity);
    drop_small(mask, &mut cl, min_voxels);
}

/// Removes small components from both the mask and its labelling, keeping
/// the surviving labels in their original order.
fn drop_small(mask: &mut LabelVolume, cl: &mut ComponentLabels, min_voxels: usize) {
    let mut remap = vec![0u32; cl.sizes.len() + 1];
    let mut sizes = Vec::with_capacity(cl.sizes.len());
    for (k, &size) in cl.sizes.iter().enumerate() {
        if size >= min_voxels {
            sizes.push(size);
            remap[k + 1] = sizes.len() as u32;
        }
    }
    if sizes.len() == cl.sizes.len() {
        return;
    }
    for (v, l) in mask.values_mut().iter_mut().zip(cl.labels.iter_mut()) {
        if *l > 0 {
            *l = remap[*l as usize];
            *v = *l > 0;
        }
    }
    cl.sizes = sizes;
}

/// Thresholds (strictly greater than) and removes small regions.
pub fn binarize(vol: &ProbabilityVolume, config: &BinarizeConfig) -> Result<LabelVolume> {
    Ok(binarize_labeled(vol, config)?.0)
}

/// [`binarize`] that also returns the component labelling of the result
/// under `config.connectivity`.
pub fn binarize_labeled(vol: &ProbabilityVolume, config: &BinarizeConfig) -> Result<(LabelVolume, ComponentLabels)> {
    if !(config.threshold > 0.0 && config.threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in (0, 1), got {}",
            config.threshold
        )));
    }
    let values = vol.values().iter().map(|&v| v > config.threshold).collect();
    let mut mask = LabelVolume::new(vol.dims(), vol.spacing(), values)?;
    let mut cl = label_components(&mask, config.connectivity);
    drop_small(&mut mask, &mut cl, config.min_region_voxels);
    Ok((mask, cl))
}

/// Clipping applied to predictions before taking logarithms.
pub const LOSS_EPS: f64 = 1e-7;

/// Terms of the cross-entropy plus soft-Dice objective, signs as written:
/// `total = Σ[t·log y + (1−t)·log(1−y)] − 2Σ(y·t)/(Σy + Σt)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub cross_entropy: f64,
    pub soft_dice: f64,
    pub total: f64,
}

pub fn eval_loss(pred: &ProbabilityVolume, truth: &LabelVolume) -> Result<LossTerms> {
    validate_aligned(&[pred as &dyn Grid, truth])?;
    let (mut ce, mut yt, mut sy, mut st) = (0.0, 0.0, 0.0, 0.0);
    for (&y, &t) in pred.values().iter().zip(truth.values()) {
        let y = y.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
        let t = if t { 1.0 } else { 0.0 };
        ce += t * y.ln() + (1.0 - t) * (1.0 - y).ln();
        yt += y * t;
        sy += y;
        st += t;
    }
    let soft_dice = -2.0 * yt / (sy + st);
    Ok(LossTerms {
        cross_entropy: ce,
        soft_dice,
        total: ce + soft_dice,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Dims, Spacing};
    use proptest::prelude::*;

    fn voxel(v: f64, m: Modality) -> ProbabilityVolume {
        ProbabilityVolume::new(Dims::new(1, 1, 1), Spacing::default(), m, vec![v]).unwrap()
    }

    fn triple(a: f64, b: f64, c: f64) -> [ProbabilityVolume; 3] {
        [voxel(a, Modality::T2W), voxel(b, Modality::DwiHb), voxel(c, Modality::ADC)]
    }

    fn refs(v: &[ProbabilityVolume; 3]) -> ModalityVolumes<'_> {
        [&v[0], &v[1], &v[2]]
    }

    #[test]
    fn linear_examples() {
        let v = triple(0.9, 0.6, 0.3);
        let out = combine_linear(&refs(&v), &LinearRule::uniform()).unwrap();
        assert!((out.values()[0] - 0.6).abs() < 1e-12);
        let v = triple(1.0, 0.5, 0.0);
        let out = combine_linear(&refs(&v), &LinearRule::new([0.6, 0.2, 0.2]).unwrap()).unwrap();
        assert!((out.values()[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn one_hot_linear_is_projection() {
        let dims = Dims::new(4, 3, 2);
        let vals: Vec<f64> = (0..dims.len()).map(|i| (i as f64 * 0.37).fract()).collect();
        let t2w = ProbabilityVolume::new(dims, Spacing::default(), Modality::T2W, vals.clone()).unwrap();
        let dwi = ProbabilityVolume::filled(dims, Spacing::default(), Modality::DwiHb, 0.3).unwrap();
        let adc = ProbabilityVolume::filled(dims, Spacing::default(), Modality::ADC, 0.9).unwrap();
        let out = combine_linear(&[&t2w, &dwi, &adc], &LinearRule::one_hot(0)).unwrap();
        assert_eq!(out.values(), &vals[..]);
    }

    #[test]
    fn linear_rejects_off_simplex_and_misaligned() {
        let v = triple(0.1, 0.2, 0.3);
        let bad: LinearRule = serde_json::from_str("[0.5,0.6,0.0]").unwrap();
        assert!(combine_linear(&refs(&v), &bad).is_err());
        let big = ProbabilityVolume::filled(Dims::cube(2), Spacing::default(), Modality::ADC, 0.2).unwrap();
        assert!(combine_linear(&[&v[0], &v[1], &big], &LinearRule::uniform()).is_err());
    }

    #[test]
    fn stacking_examples() {
        let v = triple(0.3, 0.8, 0.1);
        let out = combine_stacking(&refs(&v), &StackingRule::new([0.0; 4]).unwrap()).unwrap();
        assert_eq!(out.values()[0], 0.5);
        let v = triple(1.0, 1.0, 1.0);
        let wg = StackingRule::new([18.17, 18.17, -0.20, -8.53]).unwrap();
        let out = combine_stacking(&refs(&v), &wg).unwrap();
        assert!(out.values()[0] > 1.0 - 1e-10);
        let v = triple(0.5, 0.77, 0.12);
        let out = combine_stacking(&refs(&v), &StackingRule::new([4.0, 0.0, 0.0, -2.0]).unwrap()).unwrap();
        assert_eq!(out.values()[0], 0.5);
    }

    fn label(v: bool) -> LabelVolume {
        LabelVolume::new(Dims::new(1, 1, 1), Spacing::default(), vec![v]).unwrap()
    }

    #[test]
    fn vote_examples() {
        let (t, f) = (label(true), label(false));
        assert!(combine_vote([&t, &t, &f]).unwrap().values()[0]);
        assert!(!combine_vote([&f, &f, &t]).unwrap().values()[0]);
        let mut m = LabelVolume::empty(Dims::cube(4), Spacing::default()).unwrap();
        m.set(1, 2, 3, true);
        m.set(0, 0, 0, true);
        assert_eq!(combine_vote([&m, &m, &m]).unwrap(), m);
    }

    fn block(n: usize, side: usize, v: f64) -> ProbabilityVolume {
        let dims = Dims::cube(n);
        let mut vals = vec![0.1; dims.len()];
        for z in 0..side {
            for y in 0..side {
                for x in 0..side {
                    vals[dims.index(x + 2, y + 2, z + 2)] = v;
                }
            }
        }
        ProbabilityVolume::new(dims, Spacing::default(), Modality::Combined, vals).unwrap()
    }

    #[test]
    fn binarize_examples() {
        let cfg = BinarizeConfig::default();
        let flat = ProbabilityVolume::filled(Dims::cube(8), Spacing::default(), Modality::Combined, 0.4).unwrap();
        assert!(binarize(&flat, &cfg).unwrap().is_empty_mask());
        assert_eq!(binarize(&block(10, 3, 0.9), &cfg).unwrap().count(), 27);
        assert_eq!(binarize(&block(10, 2, 0.9), &cfg).unwrap().count(), 0);
        assert_eq!(binarize(&block(10, 2, 0.5), &BinarizeConfig { min_region_voxels: 1, ..cfg }).unwrap().count(), 0);
        assert!(binarize(&flat, &BinarizeConfig { threshold: 1.0, ..cfg }).is_err());
    }

    #[test]
    fn loss_perfect_prediction() {
        let mut t = LabelVolume::empty(Dims::cube(4), Spacing::default()).unwrap();
        t.set(1, 1, 1, true);
        t.set(2, 1, 1, true);
        let p = t.to_probability(Modality::Combined);
        let l = eval_loss(&p, &t).unwrap();
        assert!(l.cross_entropy.abs() < 1e-5);
        // Clipping leaves at most ε per voxel of slack in the sums.
        assert!((l.soft_dice + 1.0).abs() < 2.0 * 64.0 * LOSS_EPS);
        assert_eq!(l.total, l.cross_entropy + l.soft_dice);
    }

    #[test]
    fn loss_uniform_half() {
        let dims = Dims::new(4, 2, 1);
        let t = LabelVolume::new(dims, Spacing::default(), (0..8).map(|i| i % 2 == 0).collect()).unwrap();
        let p = ProbabilityVolume::filled(dims, Spacing::default(), Modality::Combined, 0.5).unwrap();
        let l = eval_loss(&p, &t).unwrap();
        assert!((l.cross_entropy - 8.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((l.soft_dice + 2.0 * 2.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn loss_empty_truth() {
        let t = LabelVolume::empty(Dims::cube(3), Spacing::default()).unwrap();
        let p = ProbabilityVolume::filled(Dims::cube(3), Spacing::default(), Modality::Combined, 0.0).unwrap();
        let l = eval_loss(&p, &t).unwrap();
        assert!(l.soft_dice.abs() < 1e-12);
        assert!(l.cross_entropy.abs() < 1e-4);
    }

    fn arb_volumes(n: usize) -> impl Strategy<Value = [Vec<f64>; 3]> {
        prop::array::uniform3(prop::collection::vec(0.0f64..=1.0, n))
    }

    fn build(vals: &[Vec<f64>; 3], dims: Dims) -> [ProbabilityVolume; 3] {
        std::array::from_fn(|i| {
            ProbabilityVolume::new(dims, Spacing::default(), Modality::INPUTS[i], vals[i].clone()).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn mixing_is_linear(
            vals in arb_volumes(27),
            a in prop::array::uniform3(-2.0f64..2.0),
            b in prop::array::uniform3(-2.0f64..2.0),
        ) {
            let v = build(&vals, Dims::cube(3));
            let r = refs(&v);
            let za = mix_linear(&r, a).unwrap();
            let zb = mix_linear(&r, b).unwrap();
            let zab = mix_linear(&r, [a[0] + b[0], a[1] + b[1], a[2] + b[2]]).unwrap();
            for i in 0..za.len() {
                prop_assert!((za[i] + zb[i] - zab[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn zero_weight_ignores_modality(
            vals in arb_volumes(27),
            noise in prop::collection::vec(0.0f64..=1.0, 27),
            w in 0.0f64..=1.0,
        ) {
            let v = build(&vals, Dims::cube(3));
            let rule = LinearRule::new([w, 1.0 - w, 0.0]).unwrap();
            let base = combine_linear(&refs(&v), &rule).unwrap();
            let adc = ProbabilityVolume::new(Dims::cube(3), Spacing::default(), Modality::ADC, noise).unwrap();
            let perturbed = combine_linear(&[&v[0], &v[1], &adc], &rule).unwrap();
            prop_assert_eq!(base.values(), perturbed.values());
        }

        #[test]
        fn stacking_threshold_matches_logit_sign(
            vals in arb_volumes(64),
            beta in prop::array::uniform4(-10.0f64..10.0),
        ) {
            let v = build(&vals, Dims::cube(4));
            let rule = StackingRule::new(beta).unwrap();
            let cfg = BinarizeConfig { min_region_voxels: 3, ..BinarizeConfig::default() };
            let mask = binarize(&combine_stacking(&refs(&v), &rule).unwrap(), &cfg).unwrap();
            let logits = stacking_logits(&refs(&v), &rule).unwrap();
            let mut direct = LabelVolume::new(
                Dims::cube(4), Spacing::default(), logits.iter().map(|&a| a > 0.0).collect()
            ).unwrap();
            remove_small_regions(&mut direct, 3, Connectivity::TwentySix);
            prop_assert_eq!(mask, direct);
        }

        #[test]
        fn binarize_labels_match_fresh_labelling(
            vals in prop::collection::vec(0.0f64..=1.0, 216),
            min_region in 1usize..6,
        ) {
            let v = ProbabilityVolume::new(Dims::cube(6), Spacing::default(), Modality::Combined, vals).unwrap();
            let cfg = BinarizeConfig { min_region_voxels: min_region, ..BinarizeConfig::default() };
            let (mask, labels) = binarize_labeled(&v, &cfg).unwrap();
            prop_assert_eq!(&mask, &binarize(&v, &cfg).unwrap());
            prop_assert_eq!(labels, label_components(&mask, cfg.connectivity));
        }

        #[test]
        fn vote_equals_thresholded_mean(
            bits in prop::array::uniform3(prop::collection::vec(any::<bool>(), 27)),
        ) {
            let dims = Dims::cube(3);
            let masks: [LabelVolume; 3] =
                std::array::from_fn(|i| LabelVolume::new(dims, Spacing::default(), bits[i].clone()).unwrap());
            let vote = combine_vote([&masks[0], &masks[1], &masks[2]]).unwrap();
            let probs: [ProbabilityVolume; 3] =
                std::array::from_fn(|i| masks[i].to_probability(Modality::INPUTS[i]));
            let mean = combine_linear(&refs(&probs), &LinearRule::uniform()).unwrap();
            let cfg = BinarizeConfig { min_region_voxels: 1, ..BinarizeConfig::default() };
            prop_assert_eq!(binarize(&mean, &cfg).unwrap(), vote);
        }
    }
}
