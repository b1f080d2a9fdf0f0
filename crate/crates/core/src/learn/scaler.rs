use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Running per-feature count, mean and sum of squared deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl ScalerState {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Population variance per feature.
    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.dim()];
        }
        let n = self.count as f64;
        self.m2.iter().map(|m| (m / n).max(0.0)).collect()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "feature vector has length {}, scaler expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Welford update with a single observation.
    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        self.check(x)?;
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *mean;
            *mean += delta / n;
            *m2 += delta * (v - *mean);
        }
        Ok(())
    }

    /// Chan et al. pairwise merge of two partial states.
    pub fn merge(&mut self, other: &ScalerState) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(Error::invalid(format!(
                "cannot merge scaler of dim {} into dim {}",
                other.dim(),
                self.dim()
            )));
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.dim() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
        Ok(())
    }

    /// Folds a batch in: batch statistics are accumulated separately and
    /// then merged, so the result does not depend on how the stream was cut.
    pub fn update<'a>(&mut self, batch: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
        let mut part = ScalerState::new(self.dim());
        for x in batch {
            part.push(x)?;
        }
        self.merge(&part)
    }

    /// `(x - mean) / sigma`; zero-variance features map to 0.
    pub fn transform_into(&self, x: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if self.count == 0 {
            return Err(Error::NotFitted("scaler"));
        }
        self.check(x)?;
        let n = self.count as f64;
        out.clear();
        out.extend(x.iter().zip(&self.mean).zip(&self.m2).map(|((&v, &mu), &m2)| {
            let sd = (m2 / n).max(0.0).sqrt();
            if sd > 0.0 {
                (v - mu) / sd
            } else {
                0.0
            }
        }));
        Ok(())
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(x.len());
        self.transform_into(x, &mut out)?;
        Ok(out)
    }
}
