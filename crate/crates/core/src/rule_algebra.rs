//! Condition vectors, decision vectors and rule numbers.
//!
//! A combining rule over three binary modality findings is a truth table
//! with eight rows. The rows (conditions) are the columns of a 3×8
//! condition matrix; the outputs form an 8-entry decision vector whose
//! MSB-first value is the rule number.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const N_MODALITIES: usize = 3;
pub const N_CONDITIONS: usize = 8;

/// Prostate zone a decision vector applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Zone {
    /// Whole gland.
    WG,
    /// Transition zone.
    TZ,
    /// Peripheral zone.
    PZ,
    Custom,
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Zone::WG => "WG",
            Zone::TZ => "TZ",
            Zone::PZ => "PZ",
            Zone::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl FromStr for Zone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "WG" => Ok(Zone::WG),
            "TZ" => Ok(Zone::TZ),
            "PZ" => Ok(Zone::PZ),
            "CUSTOM" => Ok(Zone::Custom),
            _ => Err(Error::InvalidArgument(format!("unknown zone {s:?}"))),
        }
    }
}

/// 3×8 Boolean matrix whose columns are the eight condition vectors.
///
/// Row 0 is T2W, row 1 DWI_hb, row 2 ADC.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConditionMatrix {
    columns: [[bool; N_MODALITIES]; N_CONDITIONS],
}

impl ConditionMatrix {
    /// Column `k` holds the bits of `k` with the T2W row as most significant.
    pub fn canonical() -> Self {
        let mut columns = [[false; N_MODALITIES]; N_CONDITIONS];
        for (k, col) in columns.iter_mut().enumerate() {
            for (row, bit) in col.iter_mut().enumerate() {
                *bit = (k >> (N_MODALITIES - 1 - row)) & 1 == 1;
            }
        }
        Self { columns }
    }

    /// Builds a matrix from explicit columns; every Boolean triple must
    /// appear exactly once.
    pub fn from_columns(columns: [[bool; N_MODALITIES]; N_CONDITIONS]) -> Result<Self> {
        let mut seen = [false; N_CONDITIONS];
        for col in &columns {
            let code = col
                .iter()
                .fold(0usize, |acc, &b| (acc << 1) | usize::from(b));
            if seen[code] {
                return Err(Error::InvalidArgument(format!(
                    "condition {col:?} appears more than once"
                )));
            }
            seen[code] = true;
        }
        Ok(Self { columns })
    }

    pub fn column(&self, k: usize) -> [bool; N_MODALITIES] {
        self.columns[k]
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.columns[col][row]
    }

    pub fn row(&self, row: usize) -> [bool; N_CONDITIONS] {
        std::array::from_fn(|k| self.columns[k][row])
    }

    /// Column `k` as reals.
    pub fn column_f64(&self, k: usize) -> [f64; N_MODALITIES] {
        self.columns[k].map(|b| if b { 1.0 } else { 0.0 })
    }
}

impl Default for ConditionMatrix {
    fn default() -> Self {
        Self::canonical()
    }
}

impl fmt::Display for ConditionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in 0..N_MODALITIES {
            if row > 0 {
                f.write_str("; ")?;
            }
            for bit in self.row(row) {
                f.write_str(if bit { "1" } else { "0" })?;
            }
        }
        Ok(())
    }
}

/// Combined outcome for each of the eight conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DecisionVector {
    bits: [bool; N_CONDITIONS],
    zone: Zone,
}

impl DecisionVector {
    pub fn new(bits: [bool; N_CONDITIONS], zone: Zone) -> Self {
        Self { bits, zone }
    }

    pub fn from_bits(bits: [u8; N_CONDITIONS]) -> Result<Self> {
        let mut out = [false; N_CONDITIONS];
        for (o, &b) in out.iter_mut().zip(bits.iter()) {
            *o = match b {
                0 => false,
                1 => true,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "decision entries must be 0 or 1, got {other}"
                    )))
                }
            };
        }
        Ok(Self::new(out, Zone::Custom))
    }

    /// Inverse of [`DecisionVector::rule_number`].
    pub fn from_number(n: i64) -> Result<Self> {
        if !(0..=255).contains(&n) {
            return Err(Error::RuleNumberOutOfRange(n));
        }
        Ok(Self::from_rule(n as u8))
    }

    pub fn from_rule(n: u8) -> Self {
        let bits = std::array::from_fn(|k| (n >> (N_CONDITIONS - 1 - k)) & 1 == 1);
        Self::new(bits, Zone::Custom)
    }

    /// d₁ is the most significant bit.
    pub fn rule_number(&self) -> u8 {
        self.bits
            .iter()
            .fold(0u8, |acc, &b| (acc << 1) | u8::from(b))
    }

    pub fn bits(&self) -> [bool; N_CONDITIONS] {
        self.bits
    }

    pub fn as_u8(&self) -> [u8; N_CONDITIONS] {
        self.bits.map(u8::from)
    }

    pub fn as_f64(&self) -> [f64; N_CONDITIONS] {
        self.bits.map(|b| if b { 1.0 } else { 0.0 })
    }

    pub fn zone(&self) -> Zone {
        self.zone
    }

    pub fn with_zone(mut self, zone: Zone) -> Self {
        self.zone = zone;
        self
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// All-zero or all-one decisions.
    pub fn is_constant(&self) -> bool {
        let ones = self.count_ones();
        ones == 0 || ones == N_CONDITIONS
    }
}

impl fmt::Display for DecisionVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (k, b) in self.bits.iter().enumerate() {
            if k > 0 {
                f.write_str(" ")?;
            }
            f.write_str(if *b { "1" } else { "0" })?;
        }
        f.write_str("]")
    }
}

impl Serialize for DecisionVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.as_u8().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DecisionVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let bits = <[u8; N_CONDITIONS]>::deserialize(deserializer)?;
        DecisionVector::from_bits(bits).map_err(serde::de::Error::custom)
    }
}

pub fn canonical_condition_matrix() -> ConditionMatrix {
    ConditionMatrix::canonical()
}

pub fn rule_number(d: &DecisionVector) -> u8 {
    d.rule_number()
}

pub fn decision_from_number(n: i64) -> Result<DecisionVector> {
    DecisionVector::from_number(n)
}

/// Binary PI-RADS decisions (score ≥ 3 counts as positive).
///
/// TZ: T2W decides, and a T2W-negative lesion is upgraded only when both
/// DWI_hb and ADC are positive. PZ: either diffusion modality decides.
/// WG: T2W or DWI_hb.
pub fn pirads_decisions(zone: Zone) -> Result<DecisionVector> {
    let matrix = ConditionMatrix::canonical();
    let rule: fn([bool; 3]) -> bool = match zone {
        Zone::TZ => |[t2w, dwi, adc]| t2w || (dwi && adc),
        Zone::PZ => |[_, dwi, adc]| dwi || adc,
        Zone::WG => |[t2w, dwi, _]| t2w || dwi,
        Zone::Custom => {
            return Err(Error::InvalidArgument(
                "PI-RADS decisions are defined for WG, TZ and PZ only".into(),
            ))
        }
    };
    let bits = std::array::from_fn(|k| rule(matrix.column(k)));
    Ok(DecisionVector::new(bits, zone))
}
