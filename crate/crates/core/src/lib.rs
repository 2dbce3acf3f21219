//! Zonal prostate segmentation from multiparametric MRI and MR elastography
//! maps: synthetic phantoms, preprocessing and elastic augmentation, a Dense
//! U-net with its own reverse-mode gradient engine, training under the
//! individual-model and unified-model regimes, segmentation metrics and zonal
//! ROI tabulation.

pub mod error;
pub mod eval;
pub mod exec;
pub mod filter;
pub mod io;
pub mod nn;
pub mod phantom;
pub mod prep;
pub mod rng;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use exec::Exec;
pub use rng::RngState;
pub use volume::{validate_combo, CaseRecord, InputCombo, MapKind, MaskSet, Split, TieRule, VolumeGrid, Zone};
