//! Decision rules for combining per-modality voxel probability maps.
//!
//! The crate covers the full loop: encoding Boolean combining rules over
//! three imaging modalities (T2W, high-b DWI, ADC), fitting linear mixture
//! weights and sigmoid stacking weights to them, enumerating every fittable
//! stacking rule, applying rules voxel-wise, and scoring the resulting masks
//! at voxel and lesion level. Synthetic phantoms stand in for clinical data.

pub mod combiner;
pub mod discovery;
pub mod error;
pub mod hyperfit;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod rule_algebra;
pub mod sampler;
pub mod volume;

pub use error::{Error, Result};
pub use hyperfit::{CombiningRule, FitReport, LinearRule, StackingRule};
pub use rule_algebra::{ConditionMatrix, DecisionVector, Zone};
pub use volume::{Connectivity, Dims, Grid, LabelVolume, Modality, ProbabilityVolume, Spacing};
