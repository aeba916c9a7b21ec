//! Voxel grids shared by the combiner, metrics, I/O and phantom modules.
//!
//! Voxels are linearized x-fastest: `i = x + nx·(y + ny·z)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub fn cube(n: usize) -> Self {
        Self::new(n, n, n)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.nx;
        let y = (i / self.nx) % self.ny;
        let z = i / (self.nx * self.ny);
        [x, y, z]
    }

    fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::InvalidVolume(format!(
                "dimensions must be positive, got {}x{}x{}",
                self.nx, self.ny, self.nz
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Voxel size in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing(pub [f64; 3]);

impl Spacing {
    pub fn isotropic(mm: f64) -> Self {
        Self([mm; 3])
    }

    pub fn voxel_volume(&self) -> f64 {
        self.0[0] * self.0[1] * self.0[2]
    }

    fn validate(&self) -> Result<()> {
        if self.0.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidVolume(format!(
                "spacing must be positive, got {:?}",
                self.0
            )));
        }
        Ok(())
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Self::isotropic(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    T2W,
    #[serde(rename = "DWI_hb")]
    DwiHb,
    ADC,
    #[serde(rename = "combined")]
    Combined,
}

impl Modality {
    pub const INPUTS: [Modality; 3] = [Modality::T2W, Modality::DwiHb, Modality::ADC];

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::T2W => "T2W",
            Modality::DwiHb => "DWI_hb",
            Modality::ADC => "ADC",
            Modality::Combined => "combined",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T2W" => Ok(Modality::T2W),
            "DWI_hb" => Ok(Modality::DwiHb),
            "ADC" => Ok(Modality::ADC),
            "combined" => Ok(Modality::Combined),
            _ => Err(Error::InvalidArgument(format!("unknown modality {s:?}"))),
        }
    }
}

/// Neighbourhood used for component analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    /// Face neighbours.
    Six,
    /// Face and edge neighbours.
    Eighteen,
    /// Face, edge and corner neighbours.
    #[default]
    TwentySix,
}

impl Connectivity {
    /// Neighbour offsets as (dx, dy, dz).
    pub fn offsets(&self) -> Vec<[i64; 3]> {
        let max_nonzero = match self {
            Connectivity::Six => 1,
            Connectivity::Eighteen => 2,
            Connectivity::TwentySix => 3,
        };
        let mut out = Vec::new();
        for dz in -1..=1i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let nonzero = [dx, dy, dz].iter().filter(|v| **v != 0).count();
                    if nonzero > 0 && nonzero <= max_nonzero {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            _ => Err(Error::InvalidArgument(format!(
                "connectivity must be 6, 18 or 26, got {n}"
            ))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }
}

/// Anything laid out on a voxel grid.
pub trait Grid {
    fn dims(&self) -> Dims;
    fn spacing(&self) -> Spacing;
    fn describe(&self) -> String;
}

/// Per-voxel class probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    dims: Dims,
    spacing: Spacing,
    modality: Modality,
    values: Vec<f64>,
}

impl ProbabilityVolume {
    /// Rejects values outside `[0, 1]`; nothing is clamped.
    pub fn new(dims: Dims, spacing: Spacing, modality: Modality, values: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        spacing.validate()?;
        if values.len() != dims.len() {
            return Err(Error::InvalidVolume(format!(
                "{} values for a {dims} grid",
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidVolume(format!(
                "probability {v} at voxel {i} is outside [0, 1]"
            )));
        }
        Ok(Self {
            dims,
            spacing,
            modality,
            values,
        })
    }

    pub fn filled(dims: Dims, spacing: Spacing, modality: Modality, value: f64) -> Result<Self> {
        Self::new(dims, spacing, modality, vec![value; dims.len()])
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.dims.index(x, y, z)]
    }
}

impl Grid for ProbabilityVolume {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn spacing(&self) -> Spacing {
        self.spacing
    }

    fn describe(&self) -> String {
        format!("{} probabilities", self.modality)
    }
}

/// Binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    dims: Dims,
    spacing: Spacing,
    values: Vec<bool>,
}

impl LabelVolume {
    pub fn new(dims: Dims, spacing: Spacing, values: Vec<bool>) -> Result<Self> {
        dims.validate()?;
        spacing.validate()?;
        if values.len() != dims.len() {
            return Err(Error::InvalidVolume(format!(
                "{} labels for a {dims} grid",
                values.len()
            )));
        }
        Ok(Self {
            dims,
            spacing,
            values,
        })
    }

    pub fn empty(dims: Dims, spacing: Spacing) -> Result<Self> {
        Self::new(dims, spacing, vec![false; dims.len()])
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [bool] {
        &mut self.values
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.values[self.dims.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.dims.index(x, y, z);
        self.values[i] = v;
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        !self.values.iter().any(|&v| v)
    }

    /// Voxel-wise AND with another aligned mask.
    pub fn intersect(&self, other: &LabelVolume) -> Result<LabelVolume> {
        validate_aligned(&[self as &dyn Grid, other])?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| *a && *b)
            .collect();
        LabelVolume::new(self.dims, self.spacing, values)
    }

    /// Mask as 0/1 probabilities.
    pub fn to_probability(&self, modality: Modality) -> ProbabilityVolume {
        ProbabilityVolume {
            dims: self.dims,
            spacing: self.spacing,
            modality,
            values: self.values.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

impl Grid for LabelVolume {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn spacing(&self) -> Spacing {
        self.spacing
    }

    fn describe(&self) -> String {
        "label mask".into()
    }
}

/// One connected region of a mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub id: usize,
    /// Linear voxel indices in ascending order.
    pub voxels: Vec<usize>,
    pub volume_mm3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionSet {
    pub components: Vec<Lesion>,
    pub connectivity: Connectivity,
}

impl LesionSet {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Checks that every volume shares the first one's dimensions and spacing.
pub fn validate_aligned(volumes: &[&dyn Grid]) -> Result<()> {
    let first = volumes
        .first()
        .ok_or_else(|| Error::InvalidArgument("no volumes to align".into()))?;
    let (dims, spacing) = (first.dims().as_array(), first.spacing().0);
    for (index, v) in volumes.iter().enumerate().skip(1) {
        let (d, s) = (v.dims().as_array(), v.spacing().0);
        for (axis, name) in ['x', 'y', 'z'].into_iter().enumerate() {
            if d[axis] != dims[axis] {
                return Err(Error::Misaligned {
                    index,
                    name: v.describe(),
                    what: "dimension",
                    axis: name,
                    expected: dims[axis] as f64,
                    found: d[axis] as f64,
                });
            }
        }
        for (axis, name) in ['x', 'y', 'z'].into_iter().enumerate() {
            if s[axis] != spacing[axis] {
                return Err(Error::Misaligned {
                    index,
                    name: v.describe(),
                    what: "spacing",
                    axis: name,
                    expected: spacing[axis],
                    found: s[axis],
                });
            }
        }
    }
    Ok(())
}
