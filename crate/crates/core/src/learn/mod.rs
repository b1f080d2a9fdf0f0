//! Streaming feature standardisation and one-vs-rest online linear
//! classifiers (logistic SGD, perceptron, passive-aggressive I and II).

mod model;
mod scaler;

pub use model::{Checkpoint, FeatureVector, Hyper, ModelKind, ModelState};
pub use scaler::ScalerState;

use crate::error::Result;

/// Batch form of [`ScalerState::update`] over feature vectors.
pub fn scaler_update(state: &mut ScalerState, batch: &[FeatureVector]) -> Result<()> {
    state.update(batch.iter().map(|f| f.values.as_slice()))
}

pub fn scaler_transform(state: &ScalerState, x: &FeatureVector) -> Result<FeatureVector> {
    Ok(FeatureVector::new(state.transform(&x.values)?, x.label))
}
