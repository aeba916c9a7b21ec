//! Voxel-level and lesion-level scores of a predicted mask against truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{validate_aligned, Connectivity, Dims, Grid, LabelVolume, Lesion, LesionSet, Spacing};

/// Lesion-level overlap thresholds and component connectivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub s_gt: f64,
    pub s_pred: f64,
    pub connectivity: Connectivity,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            s_gt: 0.1,
            s_pred: 0.1,
            connectivity: Connectivity::TwentySix,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        check_overlap_threshold("s_gt", self.s_gt)?;
        check_overlap_threshold("s_pred", self.s_pred)
    }
}

fn check_overlap_threshold(name: &str, s: f64) -> Result<()> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::InvalidArgument(format!("{name} must lie in (0, 1], got {s}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiceScore {
    pub value: f64,
    /// Both masks empty; `value` is then 1.0 by convention.
    pub both_empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dsc: f64,
    pub dsc_both_empty: bool,
    /// `None` when either mask is empty.
    pub hd95_mm: Option<f64>,
    /// `None` without ground-truth lesions.
    pub recall_gt: Option<f64>,
    /// `None` without predicted lesions.
    pub precision_pred: Option<f64>,
    pub n_gt_lesions: usize,
    pub n_pred_lesions: usize,
    pub s_gt: f64,
    pub s_pred: f64,
}

/// Component labelling of a mask: label 0 is background, components are
/// numbered from 1 in raster order of their first voxel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabels {
    pub labels: Vec<u32>,
    pub sizes: Vec<usize>,
}

impl ComponentLabels {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }
}

/// Flood-fill labelling with an explicit stack.
pub fn label_components(mask: &LabelVolume, connectivity: Connectivity) -> ComponentLabels {
    let dims = mask.dims();
    let (nx, ny, nz) = (dims.nx as i64, dims.ny as i64, dims.nz as i64);
    let offsets = connectivity.offsets();
    let deltas: Vec<isize> = offsets
        .iter()
        .map(|[dx, dy, dz]| (dx + nx * (dy + ny * dz)) as isize)
        .collect();
    let values = mask.values();
    let mut labels = vec![0u32; values.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();

    for start in 0..values.len() {
        if !values[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let [x, y, z] = dims.coords(i).map(|c| c as i64);
            let interior = x > 0 && y > 0 && z > 0 && x + 1 < nx && y + 1 < ny && z + 1 < nz;
            if interior {
                for &d in &deltas {
                    let j = (i as isize + d) as usize;
                    if values[j] && labels[j] == 0 {
                        labels[j] = label;
                        stack.push(j);
                    }
                }
                continue;
            }
            for [dx, dy, dz] in &offsets {
                let (xx, yy, zz) = (x + dx, y + dy, z + dz);
                if xx < 0 || yy < 0 || zz < 0 || xx >= nx || yy >= ny || zz >= nz {
                    continue;
                }
                let j = dims.index(xx as usize, yy as usize, zz as usize);
                if values[j] && labels[j] == 0 {
                    labels[j] = label;
                    stack.push(j);
                }
            }
        }
        sizes.push(size);
    }
    ComponentLabels { labels, sizes }
}

/// Disjoint maximal connected regions of `mask`.
pub fn connected_components(mask: &LabelVolume, connectivity: Connectivity) -> LesionSet {
    let cl = label_components(mask, connectivity);
    let mut voxels: Vec<Vec<usize>> = cl.sizes.iter().map(|&n| Vec::with_capacity(n)).collect();
    for (i, &l) in cl.labels.iter().enumerate() {
        if l > 0 {
            voxels[l as usize - 1].push(i);
        }
    }
    let voxel_mm3 = mask.spacing().voxel_volume();
    let components = voxels
        .into_iter()
        .enumerate()
        .map(|(id, voxels)| Lesion {
            id: id + 1,
            volume_mm3: voxels.len() as f64 * voxel_mm3,
            voxels,
        })
        .collect();
    LesionSet {
        components,
        connectivity,
    }
}

/// `2|P∩G| / (|P|+|G|)`.
pub fn dice(pred: &LabelVolume, truth: &LabelVolume) -> Result<DiceScore> {
    validate_aligned(&[pred as &dyn Grid, truth])?;
    let (mut p, mut g, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.values().iter().zip(truth.values()) {
        p += usize::from(a);
        g += usize::from(b);
        both += usize::from(a && b);
    }
    if p + g == 0 {
        return Ok(DiceScore {
            value: 1.0,
            both_empty: true,
        });
    }
    Ok(DiceScore {
        value: 2.0 * both as f64 / (p + g) as f64,
        both_empty: false,
    })
}

/// Positive voxels with at least one face neighbour that is negative or
/// outside the grid.
pub fn boundary_voxels(mask: &LabelVolume) -> Vec<usize> {
    let dims = mask.dims();
    let v = mask.values();
    let mut out = Vec::new();
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let i = dims.index(x, y, z);
                if !v[i] {
                    continue;
                }
                let interior = x > 0
                    && y > 0
                    && z > 0
                    && x + 1 < dims.nx
                    && y + 1 < dims.ny
                    && z + 1 < dims.nz
                    && v[i - 1]
                    && v[i + 1]
                    && v[i - dims.nx]
                    && v[i + dims.nx]
                    && v[i - dims.nx * dims.ny]
                    && v[i + dims.nx * dims.ny];
                if !interior {
                    out.push(i);
                }
            }
        }
    }
    out
}

/// Lower envelope of parabolas along one line: `out[p] = min_q f[q] + w·(p−q)²`.
fn envelope_1d(f: &[f64], w: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            let Some(&last) = v.last() else {
                v.push(q);
                z.push(f64::NEG_INFINITY);
                break;
            };
            let lf = last as f64;
            let s = ((f[q] + w * qf * qf) - (f[last] + w * lf * lf)) / (2.0 * w * (qf - lf));
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
                continue;
            }
            v.push(q);
            z.push(s);
            break;
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        let pf = p as f64;
        while k + 1 < v.len() && z[k + 1] < pf {
            k += 1;
        }
        let d = pf - v[k] as f64;
        *o = f[v[k]] + w * d * d;
    }
}

/// Squared Euclidean distance (mm²) from every voxel to the nearest site.
/// Infinite everywhere when there are no sites.
pub fn squared_distance_field(dims: Dims, spacing: Spacing, sites: &[usize]) -> Vec<f64> {
    let mut field = vec![f64::INFINITY; dims.len()];
    for &s in sites {
        field[s] = 0.0;
    }
    let extents = dims.as_array();
    let strides = [1, dims.nx, dims.nx * dims.ny];
    let (mut v, mut z) = (Vec::new(), Vec::new());
    for axis in 0..3 {
        let n = extents[axis];
        let w = spacing.0[axis] * spacing.0[axis];
        let mut line = vec![0.0; n];
        let mut out = vec![0.0; n];
        let (a, b) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for j in 0..extents[b] {
            for i in 0..extents[a] {
                let base = i * strides[a] + j * strides[b];
                for (t, l) in line.iter_mut().enumerate() {
                    *l = field[base + t * strides[axis]];
                }
                envelope_1d(&line, w, &mut out, &mut v, &mut z);
                for (t, o) in out.iter().enumerate() {
                    field[base + t * strides[axis]] = *o;
                }
            }
        }
    }
    field
}

/// Euclidean distance (mm) from each query voxel to the nearest site. The
/// transform runs on the bounding box of sites and queries only, which is
/// exact because every site lies inside it.
fn distances_to(dims: Dims, spacing: Spacing, sites: &[usize], queries: &[usize]) -> Vec<f64> {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for &i in sites.iter().chain(queries) {
        let c = dims.coords(i);
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let sub = Dims::new(hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1);
    let local = |i: usize| {
        let [x, y, z] = dims.coords(i);
        sub.index(x - lo[0], y - lo[1], z - lo[2])
    };
    let local_sites: Vec<usize> = sites.iter().map(|&i| local(i)).collect();
    let field = squared_distance_field(sub, spacing, &local_sites);
    queries.iter().map(|&i| field[local(i)].sqrt()).collect()
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 95th percentile of the pooled boundary-to-boundary distances in mm.
/// `None` if either mask is empty.
pub fn hd95(pred: &LabelVolume, truth: &LabelVolume) -> Result<Option<f64>> {
    validate_aligned(&[pred as &dyn Grid, truth])?;
    let bp = boundary_voxels(pred);
    let bg = boundary_voxels(truth);
    if bp.is_empty() || bg.is_empty() {
        return Ok(None);
    }
    let (dims, spacing) = (pred.dims(), pred.spacing());
    let mut pooled = distances_to(dims, spacing, &bg, &bp);
    pooled.extend(distances_to(dims, spacing, &bp, &bg));
    pooled.sort_by(f64::total_cmp);
    Ok(Some(percentile(&pooled, 0.95)))
}

/// Pairwise intersection sizes `|A_a ∩ B_b|` between two labellings.
fn pairwise_overlaps(a: &ComponentLabels, b: &ComponentLabels) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0usize; b.count()]; a.count()];
    for (&la, &lb) in a.labels.iter().zip(&b.labels) {
        if la > 0 && lb > 0 {
            m[la as usize - 1][lb as usize - 1] += 1;
        }
    }
    m
}

fn hit_rate(sizes: &[usize], overlaps: &[Vec<usize>], s: f64) -> Option<f64> {
    if sizes.is_empty() {
        return None;
    }
    let hits = sizes
        .iter()
        .zip(overlaps)
        .filter(|(&size, row)| {
            let score: f64 = row.iter().map(|&o| o as f64 / size as f64).sum();
            score > s
        })
        .count();
    Some(hits as f64 / sizes.len() as f64)
}

/// Fraction of ground-truth lesions whose summed overlap with all predicted
/// components exceeds `s_gt`.
pub fn lesion_recall_gt(
    pred: &LabelVolume,
    truth: &LabelVolume,
    s_gt: f64,
    connectivity: Connectivity,
) -> Result<Option<f64>> {
    validate_aligned(&[pred as &dyn Grid, truth])?;
    check_overlap_threshold("s_gt", s_gt)?;
    let g = label_components(truth, connectivity);
    let p = label_components(pred, connectivity);
    Ok(hit_rate(&g.sizes, &pairwise_overlaps(&g, &p), s_gt))
}

/// Fraction of predicted lesions whose summed overlap with all ground-truth
/// components exceeds `s_pred`.
pub fn lesion_precision_pred(
    pred: &LabelVolume,
    truth: &LabelVolume,
    s_pred: f64,
    connectivity: Connectivity,
) -> Result<Option<f64>> {
    validate_aligned(&[pred as &dyn Grid, truth])?;
    check_overlap_threshold("s_pred", s_pred)?;
    let g = label_components(truth, connectivity);
    let p = label_components(pred, connectivity);
    Ok(hit_rate(&p.sizes, &pairwise_overlaps(&p, &g), s_pred))
}

/// All metrics for one prediction–truth pair. A zone mask, when given, is
/// intersected with both volumes first.
pub fn evaluate(
    pred: &LabelVolume,
    truth: &LabelVolume,
    zone: Option<&LabelVolume>,
    config: &MetricsConfig,
) -> Result<MetricsReport> {
    config.validate()?;
    validate_aligned(&[pred as &dyn Grid, truth])?;
    let (pred, truth) = match zone {
        Some(z) => (pred.intersect(z)?, truth.intersect(z)?),
        None => (pred.clone(), truth.clone()),
    };
    let g = label_components(&truth, config.connectivity);
    let p = label_components(&pred, config.connectivity);
    evaluate_labeled(&pred, &p, &truth, &g, config)
}

/// [`evaluate`] without a zone, reusing component labellings computed
/// earlier with `config.connectivity`.
pub fn evaluate_labeled(
    pred: &LabelVolume,
    pred_labels: &ComponentLabels,
    truth: &LabelVolume,
    truth_labels: &ComponentLabels,
    config: &MetricsConfig,
) -> Result<MetricsReport> {
    config.validate()?;
    let d = dice(pred, truth)?;
    let hd = hd95(pred, truth)?;
    let (p, g) = (pred_labels, truth_labels);
    let gp = pairwise_overlaps(g, p);
    let pg = pairwise_overlaps(p, g);
    Ok(MetricsReport {
        dsc: d.value,
        dsc_both_empty: d.both_empty,
        hd95_mm: hd,
        recall_gt: hit_rate(&g.sizes, &gp, config.s_gt),
        precision_pred: hit_rate(&p.sizes, &pg, config.s_pred),
        n_gt_lesions: g.count(),
        n_pred_lesions: p.count(),
        s_gt: config.s_gt,
        s_pred: config.s_pred,
    })
}
