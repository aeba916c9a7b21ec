//! File formats: raw little-endian volumes with a JSON sidecar, read-only
//! NIfTI-1, dataset manifests and JSON/CSV reports.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::discovery::{
    assign_splits, AvailabilityTable, CaseRecord, CaseResult, GridSearchResult, McCaseSummary, RuleRow, Split,
    SplitRatios, ZoneMasks,
};
use crate::error::{Error, Result};
use crate::hyperfit::{CombiningRule, FitReport};
use crate::sampler::SampledRuleSet;
use crate::volume::{Dims, Grid, LabelVolume, Modality, ProbabilityVolume, Spacing};

pub const ORDER_X_FASTEST: &str = "x-fastest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "f32le")]
    F32Le,
    #[serde(rename = "u8")]
    U8,
}

impl DType {
    pub fn size(&self) -> usize {
        match self {
            DType::F32Le => 4,
            DType::U8 => 1,
        }
    }
}

/// JSON sidecar describing a `.raw` payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub dtype: DType,
    /// Modality name for probability maps, `"label"` for masks.
    pub modality: String,
    pub order: String,
    /// Payload file name relative to the sidecar. Defaults to the sidecar
    /// name with a `.raw` extension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Probability(ProbabilityVolume),
    Label(LabelVolume),
}

impl Volume {
    pub fn into_probability(self) -> Result<ProbabilityVolume> {
        match self {
            Volume::Probability(v) => Ok(v),
            Volume::Label(_) => Err(Error::InvalidVolume("expected a probability volume, found a label volume".into())),
        }
    }

    pub fn into_label(self) -> Result<LabelVolume> {
        match self {
            Volume::Label(v) => Ok(v),
            Volume::Probability(_) => Err(Error::InvalidVolume("expected a label volume, found a probability volume".into())),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn payload_path(sidecar: &Path, header: &VolumeHeader) -> PathBuf {
    match &header.payload {
        Some(name) => sidecar.with_file_name(name),
        None => sidecar.with_extension("raw"),
    }
}

/// Sidecar path for a volume path given with or without `.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "json") {
        path.to_path_buf()
    } else {
        path.with_extension("json")
    }
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let sidecar = sidecar_path(path.as_ref());
    let header: VolumeHeader = serde_json::from_slice(&read(&sidecar)?)
        .map_err(|e| Error::InvalidVolume(format!("{}: {e}", sidecar.display())))?;
    if header.order != ORDER_X_FASTEST {
        return Err(Error::UnsupportedFormat(format!("voxel order {:?}", header.order)));
    }
    let dims = Dims::new(header.dims[0], header.dims[1], header.dims[2]);
    let spacing = Spacing(header.spacing_mm);
    let raw_path = payload_path(&sidecar, &header);
    let bytes = read(&raw_path)?;
    let expected = dims.len() * header.dtype.size();
    if bytes.len() != expected {
        return Err(Error::PayloadLength {
            path: raw_path,
            expected,
            actual: bytes.len(),
        });
    }
    let context = |e: Error| Error::InvalidVolume(format!("{}: {e}", raw_path.display()));
    match header.dtype {
        DType::F32Le => {
            let modality: Modality = header.modality.parse().map_err(context)?;
            let values = bytes
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            Ok(Volume::Probability(ProbabilityVolume::new(dims, spacing, modality, values).map_err(context)?))
        }
        DType::U8 => {
            let values = bytes
                .iter()
                .enumerate()
                .map(|(i, &b)| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    _ => Err(Error::InvalidVolume(format!("label {b} at voxel {i} is not 0 or 1"))),
                })
                .collect::<Result<Vec<bool>>>()
                .map_err(context)?;
            Ok(Volume::Label(LabelVolume::new(dims, spacing, values).map_err(context)?))
        }
    }
}

fn header_for(grid: &dyn Grid, dtype: DType, modality: &str, sidecar: &Path) -> VolumeHeader {
    VolumeHeader {
        dims: grid.dims().as_array(),
        spacing_mm: grid.spacing().0,
        dtype,
        modality: modality.to_string(),
        order: ORDER_X_FASTEST.to_string(),
        payload: sidecar
            .with_extension("raw")
            .file_name()
            .map(|n| n.to_string_lossy().into_owned()),
    }
}

fn save(sidecar: &Path, header: &VolumeHeader, payload: &[u8]) -> Result<()> {
    write(&payload_path(sidecar, header), payload)?;
    write(sidecar, &json_bytes(header)?)
}

/// Writes `<stem>.json` and `<stem>.raw`. Values are stored as f32.
pub fn save_probability(path: impl AsRef<Path>, vol: &ProbabilityVolume) -> Result<()> {
    let sidecar = sidecar_path(path.as_ref());
    let header = header_for(vol, DType::F32Le, vol.modality().as_str(), &sidecar);
    let payload: Vec<u8> = vol.values().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    save(&sidecar, &header, &payload)
}

pub fn save_label(path: impl AsRef<Path>, vol: &LabelVolume) -> Result<()> {
    let sidecar = sidecar_path(path.as_ref());
    let header = header_for(vol, DType::U8, "label", &sidecar);
    let payload: Vec<u8> = vol.values().iter().map(|&v| u8::from(v)).collect();
    save(&sidecar, &header, &payload)
}

pub fn save_volume(path: impl AsRef<Path>, vol: &Volume) -> Result<()> {
    match vol {
        Volume::Probability(v) => save_probability(path, v),
        Volume::Label(v) => save_label(path, v),
    }
}

const NIFTI_HEADER_LEN: usize = 348;

struct Reader<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Reader<'_> {
    fn i16(&self, at: usize) -> i16 {
        let b = [self.bytes[at], self.bytes[at + 1]];
        if self.big_endian {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        }
    }

    fn i32(&self, at: usize) -> i32 {
        let b = [self.bytes[at], self.bytes[at + 1], self.bytes[at + 2], self.bytes[at + 3]];
        if self.big_endian {
            i32::from_be_bytes(b)
        } else {
            i32::from_le_bytes(b)
        }
    }

    fn f32(&self, at: usize) -> f32 {
        f32::from_bits(self.i32(at) as u32)
    }
}

/// Reads an uncompressed single-file NIfTI-1 volume of float32 or uint8
/// voxels. uint8 images holding only 0 and 1 without scaling load as label
/// volumes, everything else as probability volumes of modality `combined`.
pub fn load_nifti1(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = read(path)?;
    let fail = |msg: String| Error::UnsupportedFormat(format!("{}: {msg}", path.display()));
    if bytes.starts_with(&[0x1f, 0x8b]) {
        return Err(fail("gzip-compressed NIfTI is not supported".into()));
    }
    if bytes.len() < NIFTI_HEADER_LEN {
        return Err(fail(format!("{} bytes is shorter than the 348-byte header", bytes.len())));
    }
    let le = i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let be = i32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let big_endian = match (le, be) {
        (348, _) => false,
        (_, 348) => true,
        _ => return Err(fail(format!("sizeof_hdr is {le}, expected 348"))),
    };
    let r = Reader { bytes: &bytes, big_endian };
    if &bytes[344..348] != b"n+1\0" {
        return Err(fail(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[344..348]))));
    }
    let dim: Vec<i16> = (0..8).map(|i| r.i16(40 + 2 * i)).collect();
    if !(3..=7).contains(&dim[0]) || dim[4..=dim[0] as usize].iter().any(|&d| d != 1) {
        return Err(fail(format!("only 3D images are supported, dim = {dim:?}")));
    }
    if dim[1..4].iter().any(|&d| d <= 0) {
        return Err(fail(format!("non-positive extent in dim = {dim:?}")));
    }
    let dims = Dims::new(dim[1] as usize, dim[2] as usize, dim[3] as usize);
    let datatype = r.i16(70);
    let size = match datatype {
        2 => 1,
        16 => 4,
        other => return Err(fail(format!("datatype {other} (only uint8 = 2 and float32 = 16)"))),
    };
    let pixdim: Vec<f64> = (1..4).map(|i| f64::from(r.f32(76 + 4 * i))).collect();
    let spacing = Spacing([pixdim[0].abs(), pixdim[1].abs(), pixdim[2].abs()]);
    let vox_offset = r.f32(108);
    if vox_offset.is_nan() || vox_offset < NIFTI_HEADER_LEN as f32 || vox_offset.fract() != 0.0 {
        return Err(fail(format!("vox_offset {vox_offset}")));
    }
    let offset = vox_offset as usize;
    let expected = dims.len() * size;
    let available = bytes.len().saturating_sub(offset);
    if available < expected {
        return Err(Error::PayloadLength {
            path: path.to_path_buf(),
            expected: offset + expected,
            actual: bytes.len(),
        });
    }
    let data = &bytes[offset..offset + expected];
    let slope = r.f32(112);
    let inter = r.f32(116);
    let scaled = slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0);
    let raw: Vec<f64> = match datatype {
        2 => data.iter().map(|&b| f64::from(b)).collect(),
        _ => data
            .chunks_exact(4)
            .map(|c| f64::from(r_f32(c, big_endian)))
            .collect(),
    };
    if datatype == 2 && !scaled && raw.iter().all(|&v| v == 0.0 || v == 1.0) {
        let values = raw.iter().map(|&v| v == 1.0).collect();
        return Ok(Volume::Label(LabelVolume::new(dims, spacing, values)?));
    }
    let values = if scaled {
        let (s, b) = (f64::from(slope), f64::from(inter));
        raw.into_iter().map(|v| v * s + b).collect()
    } else {
        raw
    };
    Ok(Volume::Probability(ProbabilityVolume::new(dims, spacing, Modality::Combined, values)?))
}

fn r_f32(c: &[u8], big_endian: bool) -> f32 {
    let b = [c[0], c[1], c[2], c[3]];
    if big_endian {
        f32::from_be_bytes(b)
    } else {
        f32::from_le_bytes(b)
    }
}

/// Loads either format, chosen by extension (`.nii` for NIfTI-1).
pub fn load_any(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let name = path.to_string_lossy();
    if name.ends_with(".nii") || name.ends_with(".nii.gz") {
        load_nifti1(path)
    } else {
        load_volume(path)
    }
}

/// One case of a dataset manifest. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCase {
    pub case_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    pub t2w: PathBuf,
    pub dwi_hb: PathBuf,
    pub adc: PathBuf,
    pub truth: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tz: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pz: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Seed used when a case has no explicit split.
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default)]
    pub ratios: SplitRatios,
    pub cases: Vec<ManifestCase>,
}

impl DatasetManifest {
    /// Explicit splits where present, otherwise the hash assignment.
    pub fn splits(&self) -> Result<Vec<Split>> {
        let ids: Vec<String> = self.cases.iter().map(|c| c.case_id.clone()).collect();
        let hashed = assign_splits(&ids, self.split_seed, &self.ratios)?;
        Ok(self.cases.iter().zip(hashed).map(|(c, h)| c.split.unwrap_or(h)).collect())
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    read_json(path)
}

fn load_case(base: &Path, entry: &ManifestCase) -> Result<CaseRecord> {
    let run = || -> Result<CaseRecord> {
        let prob = |p: &Path, m: Modality| -> Result<ProbabilityVolume> {
            Ok(load_any(base.join(p))?.into_probability()?.with_modality(m))
        };
        let label = |p: &Path| -> Result<LabelVolume> { load_any(base.join(p))?.into_label() };
        let modalities = [
            prob(&entry.t2w, Modality::T2W)?,
            prob(&entry.dwi_hb, Modality::DwiHb)?,
            prob(&entry.adc, Modality::ADC)?,
        ];
        let zones = ZoneMasks {
            tz: entry.tz.as_deref().map(label).transpose()?,
            pz: entry.pz.as_deref().map(label).transpose()?,
        };
        CaseRecord::new(entry.case_id.clone(), modalities, label(&entry.truth)?, zones)
    };
    run().map_err(|e| match e {
        e @ Error::Case { .. } => e,
        e => e.in_case(&entry.case_id),
    })
}

/// Loads the cases of a manifest, optionally only those of one split.
/// Cases are returned in manifest order.
pub fn load_dataset(path: impl AsRef<Path>, split: Option<Split>) -> Result<Vec<CaseRecord>> {
    let path = path.as_ref();
    let manifest = load_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let splits = manifest.splits()?;
    manifest
        .cases
        .iter()
        .zip(splits)
        .filter(|(_, s)| split.is_none_or(|want| *s == want))
        .map(|(c, _)| load_case(base, c))
        .collect()
}

pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    write(path.as_ref(), &json_bytes(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    serde_json::from_slice(&read(path)?).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

pub fn save_rule_set(path: impl AsRef<Path>, set: &SampledRuleSet) -> Result<()> {
    write_json(path, set)
}

/// Reads a bare rule set or a `sample` report wrapping one.
pub fn load_rule_set(path: impl AsRef<Path>) -> Result<SampledRuleSet> {
    let path = path.as_ref();
    let mut value: serde_json::Value = read_json(path)?;
    if let Some(result) = value.get_mut("result") {
        value = result.take();
    }
    serde_json::from_value(value).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

/// Six significant digits, shortest form.
pub fn fmt_sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().unwrap_or(x);
    let mag = rounded.abs();
    if rounded == 0.0 {
        "0".to_string()
    } else if !(1e-4..1e9).contains(&mag) {
        format!("{rounded:e}")
    } else {
        rounded.to_string()
    }
}

fn opt6(x: Option<f64>) -> String {
    x.map(fmt_sig6).unwrap_or_default()
}

fn params6(p: &[f64]) -> String {
    p.iter().map(|v| fmt_sig6(*v)).collect::<Vec<_>>().join(";")
}

/// Flat table view of a result for CSV output.
pub trait Tabular {
    fn header(&self) -> Vec<&'static str>;
    fn rows(&self) -> Vec<Vec<String>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::InvalidArgument(format!("unknown report format {s:?}"))),
        }
    }
}

/// JSON report body: tool identity, the configuration that produced the
/// result and the result itself.
#[derive(Debug, Serialize)]
pub struct Envelope<'a, C: Serialize, T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: &'a C,
    pub result: &'a T,
}

pub fn csv_bytes<T: Tabular + ?Sized>(result: &T) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(result.header())?;
    for row in result.rows() {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))
}

/// JSON keeps full float precision (lossless round trip) and echoes
/// `config`; CSV rounds to six significant digits.
pub fn write_report<C, T>(result: &T, config: &C, format: ReportFormat, path: impl AsRef<Path>) -> Result<()>
where
    C: Serialize,
    T: Serialize + Tabular,
{
    let bytes = match format {
        ReportFormat::Json => json_bytes(&Envelope {
            tool: "rulefuse",
            version: env!("CARGO_PKG_VERSION"),
            config,
            result,
        })?,
        ReportFormat::Csv => csv_bytes(result)?,
    };
    write(path.as_ref(), &bytes)
}

fn rule_cells(row: &RuleRow) -> Vec<String> {
    let (kind, params) = (row.rule.rule.kind(), row.rule.rule.params());
    let (a, b) = match row.rule.rule {
        CombiningRule::Linear(l) => (fmt_sig6(l.alpha()[0]), fmt_sig6(l.alpha()[1])),
        CombiningRule::Stacking(_) => (String::new(), String::new()),
    };
    vec![
        kind.to_string(),
        row.rule.rule_number.map(|n| n.to_string()).unwrap_or_default(),
        row.rule.decision.map(|d| d.to_string()).unwrap_or_default(),
        params6(&params),
        a,
        b,
        row.n_cases.to_string(),
        fmt_sig6(row.mean_dsc),
        fmt_sig6(row.sd_dsc),
        opt6(row.mean_hd95_mm),
        opt6(row.sd_hd95_mm),
        opt6(row.mean_recall),
        opt6(row.mean_precision),
    ]
}

const RULE_HEADER: [&str; 13] = [
    "kind",
    "rule_number",
    "decision",
    "params",
    "alpha1",
    "alpha2",
    "n_cases",
    "mean_dsc",
    "sd_dsc",
    "mean_hd95_mm",
    "sd_hd95_mm",
    "mean_recall",
    "mean_precision",
];

impl Tabular for GridSearchResult {
    fn header(&self) -> Vec<&'static str> {
        let mut h = vec!["rank", "split"];
        h.extend(RULE_HEADER);
        h
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut row = vec![(i + 1).to_string(), self.split.map(|s| s.to_string()).unwrap_or_default()];
                row.extend(rule_cells(r));
                row
            })
            .collect()
    }
}

impl Tabular for RuleRow {
    fn header(&self) -> Vec<&'static str> {
        RULE_HEADER.to_vec()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        vec![rule_cells(self)]
    }
}

/// Triangle heatmap of a linear grid search: `alpha1, alpha2, alpha3, mean_dsc`.
pub struct Heatmap<'a>(pub &'a GridSearchResult);

impl Tabular for Heatmap<'_> {
    fn header(&self) -> Vec<&'static str> {
        vec!["alpha1", "alpha2", "alpha3", "mean_dsc"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.0
            .heatmap()
            .into_iter()
            .map(|(a1, a2, m)| vec![fmt_sig6(a1), fmt_sig6(a2), fmt_sig6((1.0 - a1 - a2).max(0.0)), fmt_sig6(m)])
            .collect()
    }
}

impl Tabular for [FitReport] {
    fn header(&self) -> Vec<&'static str> {
        vec!["rule_number", "decision", "kind", "params", "unnormalized", "residual", "t_stats", "odds_ratios", "degenerate"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.iter()
            .map(|f| {
                vec![
                    f.rule_number.to_string(),
                    f.decision.to_string(),
                    f.coefficients.kind().to_string(),
                    params6(&f.coefficients.params()),
                    f.unnormalized_coefficients.map(|x| params6(&x)).unwrap_or_default(),
                    fmt_sig6(f.residual),
                    f.t_stats.map(|x| params6(&x)).unwrap_or_default(),
                    f.odds_ratios.map(|x| params6(&x)).unwrap_or_default(),
                    f.degenerate.to_string(),
                ]
            })
            .collect()
    }
}

impl Tabular for Vec<FitReport> {
    fn header(&self) -> Vec<&'static str> {
        self.as_slice().header()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.as_slice().rows()
    }
}

impl Tabular for SampledRuleSet {
    fn header(&self) -> Vec<&'static str> {
        vec!["rule_number", "decision", "accepted", "beta1", "beta2", "beta3", "beta0", "residual", "squared_error"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut rows: Vec<(u8, Vec<String>)> = self
            .entries
            .iter()
            .map(|e| {
                let b = e.rule.beta();
                (
                    e.rule_number,
                    vec![
                        e.rule_number.to_string(),
                        e.decision.to_string(),
                        "true".into(),
                        fmt_sig6(b[0]),
                        fmt_sig6(b[1]),
                        fmt_sig6(b[2]),
                        fmt_sig6(b[3]),
                        fmt_sig6(e.residual),
                        fmt_sig6(e.squared_error),
                    ],
                )
            })
            .chain(self.rejected.iter().map(|r| {
                (
                    r.rule_number,
                    vec![
                        r.rule_number.to_string(),
                        r.decision.to_string(),
                        "false".into(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        fmt_sig6(r.residual),
                        fmt_sig6(r.squared_error),
                    ],
                )
            }))
            .collect();
        rows.sort_by_key(|r| r.0);
        rows.into_iter().map(|r| r.1).collect()
    }
}

impl Tabular for AvailabilityTable {
    fn header(&self) -> Vec<&'static str> {
        let mut h = vec!["modalities"];
        h.extend(RULE_HEADER);
        h.extend(["delta_dsc", "delta_hd95_mm", "delta_recall", "delta_precision"]);
        h
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut out = Vec::with_capacity(self.rows.len() + 1);
        let mut base = vec!["base".to_string()];
        base.extend(rule_cells(&self.base));
        base.extend(["0", "0", "0", "0"].map(String::from));
        out.push(base);
        for r in &self.rows {
            let names: Vec<&str> = r.modalities.iter().map(|m| m.as_str()).collect();
            let mut row = vec![names.join("+")];
            row.extend(rule_cells(&r.row));
            row.extend([fmt_sig6(r.delta_dsc), opt6(r.delta_hd95_mm), opt6(r.delta_recall), opt6(r.delta_precision)]);
            out.push(row);
        }
        out
    }
}

impl Tabular for Vec<McCaseSummary> {
    fn header(&self) -> Vec<&'static str> {
        vec!["case_id", "mean_voxel_variance", "max_voxel_variance", "dsc_mean", "dsc_variance"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.iter()
            .map(|c| {
                vec![
                    c.case_id.clone(),
                    fmt_sig6(c.mean_voxel_variance),
                    fmt_sig6(c.max_voxel_variance),
                    fmt_sig6(c.dsc_mean),
                    fmt_sig6(c.dsc_variance),
                ]
            })
            .collect()
    }
}

impl Tabular for Vec<CaseResult> {
    fn header(&self) -> Vec<&'static str> {
        vec!["case_id", "dsc", "hd95_mm", "recall_gt", "precision_pred", "n_gt_lesions", "n_pred_lesions"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.iter()
            .map(|c| {
                let m = &c.metrics;
                vec![
                    c.case_id.clone(),
                    fmt_sig6(m.dsc),
                    opt6(m.hd95_mm),
                    opt6(m.recall_gt),
                    opt6(m.precision_pred),
                    m.n_gt_lesions.to_string(),
                    m.n_pred_lesions.to_string(),
                ]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperfit::fit_linear;
    use crate::rule_algebra::{ConditionMatrix, DecisionVector};

    #[test]
    fn uniform_probability_volume() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.json");
        let v = ProbabilityVolume::filled(Dims::cube(2), Spacing::default(), Modality::T2W, 0.5).unwrap();
        save_probability(&path, &v).unwrap();
        assert_eq!(fs::read(dir.path().join("half.raw")).unwrap().len(), 32);
        let back = load_volume(&path).unwrap().into_probability().unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn truncated_payload_reports_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.json");
        let v = ProbabilityVolume::filled(Dims::cube(2), Spacing::default(), Modality::ADC, 0.25).unwrap();
        save_probability(&path, &v).unwrap();
        let raw = dir.path().join("v.raw");
        let bytes = fs::read(&raw).unwrap();
        fs::write(&raw, &bytes[..30]).unwrap();
        let err = load_volume(&path).unwrap_err();
        assert!(matches!(err, Error::PayloadLength { expected: 32, actual: 30, .. }), "{err}");
        let msg = err.to_string();
        assert!(msg.contains("32") && msg.contains("30"), "{msg}");
    }

    #[test]
    fn u8_payload_is_label_volume() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut m = LabelVolume::empty(Dims::new(3, 2, 2), Spacing([0.5, 0.5, 3.0])).unwrap();
        m.set(1, 1, 1, true);
        save_label(&path, &m).unwrap();
        let back = load_volume(&path).unwrap().into_label().unwrap();
        assert_eq!(back, m);
        fs::write(dir.path().join("m.raw"), [0u8, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]).unwrap();
        assert!(load_volume(&path).is_err());
    }

    #[test]
    fn bad_dtype_and_out_of_range_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        fs::write(&path, r#"{"dims":[1,1,1],"spacing_mm":[1,1,1],"dtype":"f64le","modality":"T2W","order":"x-fastest"}"#).unwrap();
        fs::write(dir.path().join("x.raw"), [0u8; 8]).unwrap();
        assert!(load_volume(&path).is_err());
        fs::write(&path, r#"{"dims":[1,1,1],"spacing_mm":[1,1,1],"dtype":"f32le","modality":"T2W","order":"x-fastest"}"#).unwrap();
        fs::write(dir.path().join("x.raw"), 1.5f32.to_le_bytes()).unwrap();
        assert!(load_volume(&path).is_err());
    }

    #[test]
    fn payload_bytes_survive_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        let values: Vec<f64> = (0..27).map(|i| f64::from(i as f32 / 26.0)).collect();
        let v = ProbabilityVolume::new(Dims::cube(3), Spacing::default(), Modality::DwiHb, values).unwrap();
        save_probability(&a, &v).unwrap();
        let loaded = load_volume(&a).unwrap();
        save_volume(&b, &loaded).unwrap();
        assert_eq!(fs::read(dir.path().join("a.raw")).unwrap(), fs::read(dir.path().join("b.raw")).unwrap());
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(fmt_sig6(0.454545454), "0.454545");
        assert_eq!(fmt_sig6(1.0), "1");
        assert_eq!(fmt_sig6(123456789.0), "123457000");
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(2.0907123e-8), "2.09071e-8");
        assert_eq!(fmt_sig6(4.0434123e12), "4.04341e12");
        assert_eq!(fmt_sig6(-2.2047619), "-2.20476");
    }

    #[test]
    fn fit_report_json_is_lossless() {
        let r = ConditionMatrix::canonical();
        let f = fit_linear(&r, &DecisionVector::from_number(31).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fit.json");
        write_json(&p, &f).unwrap();
        let back: FitReport = read_json(&p).unwrap();
        assert_eq!(back, f);
        let csv = String::from_utf8(csv_bytes(&vec![f]).unwrap()).unwrap();
        assert!(csv.starts_with("rule_number,decision,kind"));
    }
}
