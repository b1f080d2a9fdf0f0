use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ScalerState;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Logistic loss, fixed learning rate, L2 shrinkage.
    SgdLogistic,
    Perceptron,
    /// Passive-aggressive, hinge loss, clipped step (PA-I).
    PaHinge,
    /// Passive-aggressive, squared hinge loss, softened step (PA-II).
    PaSquaredHinge,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::SgdLogistic,
        ModelKind::Perceptron,
        ModelKind::PaHinge,
        ModelKind::PaSquaredHinge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SgdLogistic => "sgd_logistic",
            ModelKind::Perceptron => "perceptron",
            ModelKind::PaHinge => "pa_hinge",
            ModelKind::PaSquaredHinge => "pa_squared_hinge",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown model kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    /// Learning rate for `sgd_logistic`.
    pub eta0: f64,
    /// L2 strength for `sgd_logistic`.
    pub alpha: f64,
    /// Aggressiveness `C` for the passive-aggressive models.
    pub c_agg: f64,
    pub fit_intercept: bool,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            eta0: 0.01,
            alpha: 1e-4,
            c_agg: 1.0,
            fit_intercept: true,
        }
    }
}

/// A labelled real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub label: usize,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, label: usize) -> Self {
        Self { values, label }
    }
}

/// One-vs-rest linear model: one weight row and bias per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub kind: ModelKind,
    pub classes: usize,
    pub dim: usize,
    pub hyper: Hyper,
    /// Row-major `classes x dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Number of per-class weight updates actually applied.
    pub steps: u64,
    pub fitted: bool,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ModelState {
    pub fn new(kind: ModelKind, classes: usize, dim: usize, hyper: Hyper) -> Result<Self> {
        if classes < 2 || dim == 0 {
            return Err(Error::invalid(format!(
                "model needs >= 2 classes and a positive dimension, got {classes} x {dim}"
            )));
        }
        if !(hyper.eta0 > 0.0 && hyper.alpha >= 0.0 && hyper.c_agg > 0.0) {
            return Err(Error::invalid(format!("bad hyperparameters {hyper:?}")));
        }
        Ok(Self {
            kind,
            classes,
            dim,
            hyper,
            weights: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
            steps: 0,
            fitted: false,
        })
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.dim..(class + 1) * self.dim]
    }

    pub fn score(&self, class: usize, x: &[f64]) -> f64 {
        dot(self.row(class), x) + self.bias[class]
    }

    /// One online step on a single standardized sample.
    pub fn update_one(&mut self, x: &[f64], label: usize) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::invalid(format!(
                "feature vector has length {}, model expects {}",
                x.len(),
                self.dim
            )));
        }
        if label >= self.classes {
            return Err(Error::invalid(format!("label {label} >= {} classes", self.classes)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        let sq_norm = dot(x, x);
        let h = self.hyper;
        for c in 0..self.classes {
            let y = if c == label { 1.0 } else { -1.0 };
            let s = self.score(c, x);
            let d = self.dim;
            let w = &mut self.weights[c * d..(c + 1) * d];
            // Signed step applied to both w and b.
            let step = match self.kind {
                ModelKind::SgdLogistic => {
                    let shrink = 1.0 - h.eta0 * h.alpha;
                    w.iter_mut().for_each(|v| *v *= shrink);
                    // -d/ds log(1 + exp(-y s)) = y * (1 - sigmoid(y s))
                    h.eta0 * y * (1.0 - sigmoid(y * s))
                }
                ModelKind::Perceptron => {
                    if s * y <= 0.0 {
                        y
                    } else {
                        0.0
                    }
                }
                ModelKind::PaHinge | ModelKind::PaSquaredHinge => {
                    let loss = (1.0 - y * s).max(0.0);
                    if loss == 0.0 {
                        0.0
                    } else {
                        let tau = if self.kind == ModelKind::PaHinge {
                            if sq_norm > 0.0 {
                                h.c_agg.min(loss / sq_norm)
                            } else {
                                h.c_agg
                            }
                        } else {
                            loss / (sq_norm + 1.0 / (2.0 * h.c_agg))
                        };
                        tau * y
                    }
                }
            };
            if step != 0.0 {
                axpy(step, x, w);
                if h.fit_intercept {
                    self.bias[c] += step;
                }
                self.steps += 1;
            }
        }
        self.fitted = true;
        Ok(())
    }

    /// One pass over the batch in order.
    pub fn partial_fit(&mut self, batch: &[FeatureVector]) -> Result<()> {
        batch
            .iter()
            .try_for_each(|fv| self.update_one(&fv.values, fv.label))
    }

    /// Argmax of the per-class scores; ties go to the lowest class id.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        if !self.fitted {
            return Err(Error::NotFitted("model"));
        }
        if x.len() != self.dim {
            return Err(Error::invalid(format!(
                "feature vector has length {}, model expects {}",
                x.len(),
                self.dim
            )));
        }
        let mut best = (0, f64::NEG_INFINITY);
        for c in 0..self.classes {
            let s = self.score(c, x);
            if s > best.1 {
                best = (c, s);
            }
        }
        Ok(best.0)
    }
}

const CHECKPOINT_FORMAT: &str = "edgeforge-model";
const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON container for a trained model and its scaler. Floats are
/// written in shortest round-trip form, so reloaded scores are bit-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelState,
    pub scaler: ScalerState,
}

impl Checkpoint {
    pub fn new(model: ModelState, scaler: ScalerState) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model,
            scaler,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        let m = &ck.model;
        if m.weights.len() != m.classes * m.dim || m.bias.len() != m.classes || ck.scaler.dim() != m.dim {
            return Err(Error::invalid(format!("{}: inconsistent checkpoint shapes", path.display())));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_bias() -> Hyper {
        Hyper {
            fit_intercept: false,
            ..Hyper::default()
        }
    }

    #[test]
    fn pa_hinge_hand_step() {
        let mut m = ModelState::new(ModelKind::PaHinge, 2, 2, no_bias()).unwrap();
        m.update_one(&[1.0, 0.0], 1).unwrap();
        // Class 1 (y=+1): loss 1, tau 1, w = (1, 0). Class 0 (y=-1): w = (-1, 0).
        assert_eq!(m.row(1), &[1.0, 0.0]);
        assert_eq!(m.row(0), &[-1.0, 0.0]);
        assert_eq!(m.predict(&[1.0, 0.0]).unwrap(), 1);
    }

    #[test]
    fn pa_passive_case_is_a_no_op() {
        for kind in [ModelKind::PaHinge, ModelKind::PaSquaredHinge] {
            let mut m = ModelState::new(kind, 2, 2, Hyper::default()).unwrap();
            m.update_one(&[3.0, 0.0], 1).unwrap();
            m.update_one(&[-3.0, 0.5], 0).unwrap();
            let before = m.clone();
            let x = [10.0, 0.0];
            assert!(m.score(1, &x) >= 1.0 && -m.score(0, &x) >= 1.0);
            m.update_one(&x, 1).unwrap();
            assert_eq!(m, before);
        }
    }

    #[test]
    fn perceptron_tie_counts_as_mistake() {
        let mut m = ModelState::new(ModelKind::Perceptron, 2, 2, Hyper::default()).unwrap();
        m.update_one(&[1.0, -1.0], 1).unwrap();
        assert_eq!(m.row(1), &[1.0, -1.0]);
        assert_eq!(m.bias[1], 1.0);
        // Class 0 also had score 0 with y = -1.
        assert_eq!(m.row(0), &[-1.0, 1.0]);
        assert_eq!(m.bias[0], -1.0);
    }

    #[test]
    fn predict_rules() {
        let mut m = ModelState::new(ModelKind::SgdLogistic, 3, 2, Hyper::default()).unwrap();
        assert!(matches!(m.predict(&[0.0, 0.0]), Err(Error::NotFitted(_))));
        m.fitted = true;
        assert_eq!(m.predict(&[5.0, -1.0]).unwrap(), 0);
        m.weights = vec![0.1, 0.0, 0.3, 0.0, 0.2, 0.0];
        let x = [1.0, 0.0];
        let p = m.predict(&x).unwrap();
        assert_eq!(p, 1);
        let mut scaled = m.clone();
        scaled.weights.iter_mut().for_each(|w| *w *= 7.5);
        scaled.bias.iter_mut().for_each(|b| *b *= 7.5);
        assert_eq!(scaled.predict(&x).unwrap(), p);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut m = ModelState::new(ModelKind::PaHinge, 2, 2, Hyper::default()).unwrap();
        assert!(m.update_one(&[f64::NAN, 0.0], 0).is_err());
        assert!(m.update_one(&[1.0], 0).is_err());
        assert!(m.update_one(&[1.0, 0.0], 2).is_err());
        assert!(ModelState::new(ModelKind::PaHinge, 1, 2, Hyper::default()).is_err());
        assert!("svm".parse::<ModelKind>().is_err());
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = ModelState::new(ModelKind::SgdLogistic, 3, 4, Hyper::default()).unwrap();
        let mut s = ScalerState::new(4);
        for i in 0..30 {
            let x: Vec<f64> = (0..4).map(|j| ((i * 7 + j * 3) % 11) as f64 / 3.7 - 1.1).collect();
            s.push(&x).unwrap();
            m.update_one(&x, i % 3).unwrap();
        }
        let path = dir.path().join("m/ck.json");
        Checkpoint::new(m.clone(), s.clone()).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.model, m);
        assert_eq!(back.scaler, s);
        let x = [0.3, -1.7, 2.2, 1e-3];
        for c in 0..3 {
            assert_eq!(back.model.score(c, &x).to_bits(), m.score(c, &x).to_bits());
        }
        fs::write(&path, "{\"format\":\"other\"}").unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
