//! Edge-feature dataset construction and incremental linear classifiers for
//! textureless object recognition.
//!
//! The pipeline renders (or ingests) object scenes, crops them, balances the
//! classes with augmentation, derives fifteen edge-feature variants, trains
//! four online linear models on each and compares them in a grid report.

pub mod augment;
pub mod config;
pub mod datasets;
pub mod edges;
pub mod error;
pub mod eval;
pub mod features;
pub mod imaging;
pub mod ingest;
pub mod learn;
pub mod pipeline;
pub mod seed;

pub use augment::{AugKind, AugOp, AugOpSpec, AugmentConfig, BalancePlan};
pub use config::ExperimentConfig;
pub use datasets::{enumerate_variants, Detector, HedSource, VariantId, VariantParams, VariantSpec};
pub use edges::{EdgeMask, EdgeParams};
pub use error::{Error, Result};
pub use eval::{GridReport, MetricsReport, SplitPlan};
pub use imaging::{Image, Kernel, Plane};
pub use ingest::{BBox, Manifest, Provenance, SampleRecord};
pub use learn::{Checkpoint, FeatureVector, Hyper, ModelKind, ModelState, ScalerState};
pub use pipeline::{Pipeline, Selection};
