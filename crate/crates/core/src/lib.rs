//! Post-hoc out-of-distribution detection in the activation subspaces of a
//! linear classification head.
//!
//! The head `W` (classes × features) is factorized with an SVD. Right singular
//! directions with large singular values span the *decisive* subspace, the
//! remaining directions plus the nullspace of `W` span the *insignificant*
//! subspace. Two scores are built on top of that split:
//!
//! * an insignificant score: average top-N cosine similarity of the
//!   insignificant component against a bank of training activations, and
//! * a decisive score: the energy (logsumexp) of logits recomputed from the
//!   shaped decisive component.
//!
//! The fused ActSub score is `insignificant^lambda * decisive`.
//!
//! All scores follow the "higher means more in-distribution" convention.

pub mod bank;
pub mod detector;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod scoring;
pub mod shaping;
pub mod store;
pub mod subspace;
pub mod synth;

pub use bank::{ActivationBank, BankMeta};
pub use detector::{
    calibrate, Calibrated, Detector, DetectorParts, SArrowComponent, ValidationSplit,
};
pub use error::{Error, FormatError, Result};
pub use eval::{auroc, fpr_at_tpr, EvalResult};
pub use linalg::{Mat, SvdResult};
pub use scoring::{ScoreConfig, ScoreMethod, ScoreReport};
pub use shaping::{ShapingConfig, ShapingMethod};
pub use store::config::{BasisKind, RunConfig, Setting};
pub use subspace::{BasisStrategy, HeadFactorization, SubspaceSplit, WeightHead};
pub use synth::{ShiftMode, SynthSpec, World};
