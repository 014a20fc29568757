//! Synthetic correlated diffusion imaging (CDIs) for tumour delineation.
//!
//! The pipeline fits a per-voxel mono-exponential decay to multi-b-value
//! DWI, synthesizes signals at a configured set of b-values, mixes them
//! through an exponent-weighted product, and scores tumour-vs-healthy
//! separation by voxel-level AUC. The exponents can be tuned with a
//! box-constrained Nelder-Mead search that maximizes that AUC.
//!
//! Module map:
//! - [`volume`], [`io`]: array containers and the JSON + raw bundle format
//! - [`phantom`]: seeded synthetic phantoms with ground-truth masks
//! - [`preprocess`]: slice selection, resizing, breast masks
//! - [`diffusion`]: ADC fitting and signal synthesis
//! - [`mixing`]: the CDIs mixing function
//! - [`roc`]: ROC / AUC
//! - [`optimizer`]: bounded Nelder-Mead
//! - [`pipeline`]: cases, the AUC objective, tuning and modality comparison

pub mod diffusion;
pub mod error;
pub mod io;
pub mod mixing;
pub mod optimizer;
pub mod phantom;
pub mod pipeline;
pub mod preprocess;
pub mod roc;
pub mod volume;

pub use diffusion::{fit_adc, synthesize_signals, AdcFitResult};
pub use error::{Error, Result};
pub use io::{read_volume, write_volume};
pub use mixing::{compute_cdis, mix, MixingConfig};
pub use optimizer::{
    nelder_mead, try_nelder_mead, Bounds, NmConfig, NmOutcome, NmTrace, Termination,
};
pub use phantom::{generate_phantom, Phantom, PhantomSpec};
pub use pipeline::{Aggregation, CaseRecord, ComparisonReport, PreparedCase};
pub use roc::{auc, auc_bruteforce, delineation_auc, roc_curve, RocResult};
pub use volume::{BValueList, DwiVolume, MaskVolume, ScalarVolume, Shape3, Unit, Volume};
