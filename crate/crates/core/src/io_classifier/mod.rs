//! Indoor/outdoor classifiers over sensor windows.
//!
//! Three model kinds share one training loop: logistic regression, a dense
//! network with tanh hidden layers, and a stacked LSTM. All end in a single
//! sigmoid unit trained with binary cross-entropy and Adam.

mod adam;
mod layers;
mod network;
mod persist;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Error, Result};
use crate::sensor_data::{IoLabel, SensorSession, FEATURE_COUNT};
use crate::transition::IoSeries;
use crate::windowing::{
    fit_scaler, make_windows, validate_window_size, FeatureScaler, Window, DEFAULT_WINDOW,
};

use adam::Adam;
use layers::sigmoid;
use network::{layout, Network};

pub use network::Tensor;
pub use persist::{load_model, read_model, save_model, write_model, MODEL_FORMAT, MODEL_VERSION};

/// Probabilities are kept this far from 0 and 1.
pub const PROB_EPS: f64 = 1e-12;

/// Samples of one batch are split into this many fixed slices for parallel
/// gradient accumulation, so results do not depend on the thread count.
const GRAD_SLICES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Feedforward,
    Recurrent,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [
        ModelKind::Logistic,
        ModelKind::Feedforward,
        ModelKind::Recurrent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Feedforward => "feedforward",
            ModelKind::Recurrent => "recurrent",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logistic" => Ok(ModelKind::Logistic),
            "feedforward" | "dense" => Ok(ModelKind::Feedforward),
            "recurrent" | "lstm" => Ok(ModelKind::Recurrent),
            other => Err(invalid_param(
                "model_kind",
                format!("unknown kind `{other}`"),
            )),
        }
    }
}

/// Architecture and initialization seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Readings per window.
    pub window: usize,
    /// Hidden layer widths: dense units for the feedforward kind, LSTM units
    /// per stacked layer for the recurrent kind, empty for logistic.
    pub layer_sizes: Vec<usize>,
    pub dropout: f64,
    pub seed: u64,
}

impl ModelSpec {
    pub fn logistic() -> Self {
        Self {
            kind: ModelKind::Logistic,
            window: DEFAULT_WINDOW,
            layer_sizes: Vec::new(),
            dropout: 0.0,
            seed: 0,
        }
    }

    /// FC30 - FC18 - FC2 - sigmoid.
    pub fn feedforward() -> Self {
        Self {
            kind: ModelKind::Feedforward,
            layer_sizes: vec![30, 18, 2],
            ..Self::logistic()
        }
    }

    /// LSTM50 - dropout - LSTM50 - dropout - LSTM2 - sigmoid.
    pub fn recurrent() -> Self {
        Self {
            kind: ModelKind::Recurrent,
            layer_sizes: vec![50, 50, 2],
            dropout: 0.2,
            ..Self::logistic()
        }
    }

    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Logistic => Self::logistic(),
            ModelKind::Feedforward => Self::feedforward(),
            ModelKind::Recurrent => Self::recurrent(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        validate_window_size(self.window)?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid_param(
                "dropout",
                format!("must lie in [0, 1), got {}", self.dropout),
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(invalid_param(
                "layer_sizes",
                "layers need at least one unit",
            ));
        }
        match self.kind {
            ModelKind::Logistic if !self.layer_sizes.is_empty() => Err(invalid_param(
                "layer_sizes",
                "logistic regression has no hidden layers",
            )),
            ModelKind::Recurrent if self.layer_sizes.is_empty() => Err(invalid_param(
                "layer_sizes",
                "recurrent model needs at least one layer",
            )),
            _ => Ok(()),
        }
    }
}

/// Optimizer and schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 24,
            batch_size: 128,
            learning_rate: 0.006,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid_param(
                "learning_rate",
                format!("must be positive, got {}", self.learning_rate),
            ));
        }
        if self.batch_size == 0 {
            return Err(invalid_param("batch_size", "must be at least 1"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid_param(name, format!("must lie in [0, 1), got {b}")));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(invalid_param(
                "epsilon",
                format!("must be positive, got {}", self.epsilon),
            ));
        }
        Ok(())
    }
}

/// Loss and accuracy over the training set after one epoch, dropout off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// A fitted classifier together with the scaler its inputs need.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    network: Network,
    scaler: FeatureScaler,
    history: Vec<EpochStats>,
}

impl TrainedModel {
    /// Fresh weights for `spec`, as training would start from them.
    pub fn initialize(spec: &ModelSpec, scaler: FeatureScaler) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        Ok(Self {
            network: Network::init(spec, &mut rng),
            scaler,
            history: Vec::new(),
        })
    }

    pub(crate) fn from_parts(
        spec: ModelSpec,
        params: Vec<Tensor>,
        scaler: FeatureScaler,
        history: Vec<EpochStats>,
    ) -> Self {
        Self {
            network: Network { spec, params },
            scaler,
            history,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.network.spec
    }

    pub fn scaler(&self) -> &FeatureScaler {
        &self.scaler
    }

    pub fn history(&self) -> &[EpochStats] {
        &self.history
    }

    pub fn parameters(&self) -> &[Tensor] {
        &self.network.params
    }

    pub fn parameter_count(&self) -> usize {
        self.network.param_count()
    }

    fn scaled_flat(&self, window: &Window) -> Vec<f64> {
        window
            .features
            .iter()
            .flat_map(|r| self.scaler.transform_row(r))
            .collect()
    }

    fn check_window(&self, window: &Window) -> Result<()> {
        if window.len() != self.spec().window {
            return Err(Error::InvalidInput(format!(
                "window has {} readings, model expects {}",
                window.len(),
                self.spec().window
            )));
        }
        Ok(())
    }

    /// Indoor probability of an unscaled window.
    pub fn predict_proba(&self, window: &Window) -> Result<f64> {
        self.check_window(window)?;
        Ok(clamp_prob(sigmoid(
            self.network.logit(&self.scaled_flat(window)),
        )))
    }

    pub fn predict_label(&self, window: &Window) -> Result<IoLabel> {
        Ok(if self.predict_proba(window)? >= 0.5 {
            IoLabel::Indoor
        } else {
            IoLabel::Outdoor
        })
    }

    pub fn predict_probas(&self, windows: &[Window]) -> Result<Vec<f64>> {
        windows.par_iter().map(|w| self.predict_proba(w)).collect()
    }

    /// Fraction of labeled windows classified correctly.
    pub fn accuracy(&self, windows: &[Window]) -> Result<f64> {
        let y = labels_of(windows)?;
        let p = self.predict_probas(windows)?;
        Ok(accuracy_of(&y, &p))
    }

    /// Mean BCE over labeled windows.
    pub fn loss(&self, windows: &[Window]) -> Result<f64> {
        let y = labels_of(windows)?;
        bce_loss(&y, &self.predict_probas(windows)?)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn accuracy_of(y: &[f64], p: &[f64]) -> f64 {
    let hits = y
        .iter()
        .zip(p)
        .filter(|(&y, &p)| (p >= 0.5) == (y >= 0.5))
        .count();
    hits as f64 / y.len() as f64
}

fn labels_of(windows: &[Window]) -> Result<Vec<f64>> {
    if windows.is_empty() {
        return Err(Error::Empty("no windows".into()));
    }
    windows
        .iter()
        .enumerate()
        .map(|(i, w)| {
            w.label
                .map(|l| l.bit() as f64)
                .ok_or_else(|| Error::InvalidInput(format!("window {i} has no label")))
        })
        .collect()
}

/// Mean binary cross-entropy; predictions are clamped away from 0 and 1.
pub fn bce_loss(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::InvalidInput(format!(
            "{} labels but {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::Empty("empty batch".into()));
    }
    let total: f64 = y
        .iter()
        .zip(y_hat)
        .map(|(&y, &p)| {
            let p = clamp_prob(p);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok((total / y.len() as f64).max(0.0))
}

/// Anything that turns a session into a per-reading indoor series.
pub trait IoPredictor: Sync {
    fn predict_series(&self, session: &SensorSession) -> Result<IoSeries>;
}

impl IoPredictor for TrainedModel {
    fn predict_series(&self, session: &SensorSession) -> Result<IoSeries> {
        predict_series(self, session)
    }
}

/// Uses the session's own labels; handy for evaluating the downstream stages
/// in isolation.
#[derive(Debug, Clone, Copy, Default)]
pub struct LabelPredictor;

impl IoPredictor for LabelPredictor {
    fn predict_series(&self, session: &SensorSession) -> Result<IoSeries> {
        session
            .labels()
            .map(|l| IoSeries::from_labels(&l))
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "session `{}` is not fully labeled",
                    session.session_id
                ))
            })
    }
}

/// One binary prediction per reading. The first and last `(d - 1) / 2`
/// readings, which no window is centered on, copy the nearest prediction.
pub fn predict_series(model: &TrainedModel, session: &SensorSession) -> Result<IoSeries> {
    let d = model.spec().window;
    let windows = make_windows(session, d)?;
    let bits: Vec<u8> = model
        .predict_probas(&windows)?
        .into_iter()
        .map(|p| u8::from(p >= 0.5))
        .collect();
    let half = (d - 1) / 2;
    let mut out = Vec::with_capacity(session.len());
    out.extend(std::iter::repeat_n(bits[0], half));
    out.extend_from_slice(&bits);
    out.extend(std::iter::repeat_n(bits[bits.len() - 1], half));
    IoSeries::new(out)
}

/// Fits a scaler on `windows`, then trains `spec` on the scaled windows.
///
/// Every epoch visits the windows in a fresh seeded order; the history holds
/// the loss and accuracy on the training set after each epoch.
pub fn train(windows: &[Window], spec: &ModelSpec, cfg: &TrainConfig) -> Result<TrainedModel> {
    spec.validate()?;
    cfg.validate()?;
    let y = labels_of(windows)?;
    if let Some(w) = windows.iter().find(|w| w.len() != spec.window) {
        return Err(Error::InvalidInput(format!(
            "window of {} readings, spec expects {}",
            w.len(),
            spec.window
        )));
    }
    let scaler = fit_scaler(windows)?;
    let mut model = TrainedModel::initialize(spec, scaler)?;
    let xs: Vec<Vec<f64>> = windows.iter().map(|w| model.scaled_flat(w)).collect();

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    dropout_rng.set_stream(2);
    let mut adam = Adam::new(
        &model.network.params,
        cfg.learning_rate,
        cfg.beta1,
        cfg.beta2,
        cfg.epsilon,
    );
    let mut order: Vec<usize> = (0..xs.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            let seeds: Vec<u64> = batch.iter().map(|_| dropout_rng.gen()).collect();
            let grads = batch_gradient(&model.network, &xs, &y, batch, &seeds, spec.dropout > 0.0);
            if grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged {
                    epoch,
                    reason: "non-finite gradient".into(),
                });
            }
            adam.step(&mut model.network.params, &grads);
            if model
                .network
                .params
                .iter()
                .flat_map(|t| &t.data)
                .any(|v| !v.is_finite())
            {
                return Err(Error::TrainingDiverged {
                    epoch,
                    reason: "non-finite parameter after update".into(),
                });
            }
        }
        let p: Vec<f64> = xs
            .par_iter()
            .map(|x| sigmoid(model.network.logit(x)))
            .collect();
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged {
                epoch,
                reason: "non-finite prediction".into(),
            });
        }
        let loss = bce_loss(&y, &p)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                reason: "non-finite loss".into(),
            });
        }
        model.history.push(EpochStats {
            epoch,
            loss,
            accuracy: accuracy_of(&y, &p),
        });
    }
    Ok(model)
}

/// Mean gradient over `batch`, summed slice by slice in a fixed order.
fn batch_gradient(
    net: &Network,
    xs: &[Vec<f64>],
    y: &[f64],
    batch: &[usize],
    seeds: &[u64],
    dropout: bool,
) -> Vec<Vec<f64>> {
    let slice_len = batch.len().div_ceil(GRAD_SLICES).max(1);
    let partials: Vec<Vec<Vec<f64>>> = batch
        .par_chunks(slice_len)
        .zip(seeds.par_chunks(slice_len))
        .map(|(idx, seeds)| {
            let mut g = net.zeros_like();
            for (&i, &s) in idx.iter().zip(seeds) {
                if dropout {
                    let mut rng = ChaCha8Rng::seed_from_u64(s);
                    net.accumulate(&xs[i], y[i], Some(&mut rng), &mut g);
                } else {
                    net.accumulate::<ChaCha8Rng>(&xs[i], y[i], None, &mut g);
                }
            }
            g
        })
        .collect();
    let mut total = net.zeros_like();
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
    }
    let scale = 1.0 / batch.len() as f64;
    total.iter_mut().flatten().for_each(|g| *g *= scale);
    total
}

/// Compares backpropagated gradients of the mean BCE with central finite
/// differences (step 1e-5) on a random model and batch, dropout off.
///
/// Returns the largest `|a - fd| / (|a| + |fd| + 1e-12)` over all parameters.
pub fn gradient_check(spec: &ModelSpec) -> Result<f64> {
    Ok(gradient_pairs(spec, 1)?
        .into_iter()
        .map(|(a, fd)| (a - fd).abs() / (a.abs() + fd.abs() + 1e-12))
        .fold(0.0, f64::max))
}

/// `(analytic, finite difference)` for every `stride`-th parameter.
pub(crate) fn gradient_pairs(spec: &ModelSpec, stride: usize) -> Result<Vec<(f64, f64)>> {
    const STEP: f64 = 1e-5;
    const BATCH: usize = 3;
    spec.validate()?;
    let spec = ModelSpec {
        dropout: 0.0,
        ..spec.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut net = Network::init(&spec, &mut rng);
    let dim = spec.window * FEATURE_COUNT;
    let xs: Vec<Vec<f64>> = (0..BATCH)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let y: Vec<f64> = (0..BATCH).map(|i| (i % 2) as f64).collect();

    let mut analytic = net.zeros_like();
    for (x, &t) in xs.iter().zip(&y) {
        net.accumulate::<ChaCha8Rng>(x, t, None, &mut analytic);
    }
    analytic
        .iter_mut()
        .flatten()
        .for_each(|g| *g /= BATCH as f64);

    let loss = |net: &Network| -> f64 {
        let p: Vec<f64> = xs.iter().map(|x| sigmoid(net.logit(x))).collect();
        bce_loss(&y, &p).expect("batch is well formed")
    };

    let mut pairs = Vec::new();
    let mut flat = 0usize;
    for k in 0..net.params.len() {
        for j in 0..net.params[k].data.len() {
            flat += 1;
            if !(flat - 1).is_multiple_of(stride.max(1)) {
                continue;
            }
            let orig = net.params[k].data[j];
            net.params[k].data[j] = orig + STEP;
            let up = loss(&net);
            net.params[k].data[j] = orig - STEP;
            let down = loss(&net);
            net.params[k].data[j] = orig;
            pairs.push((analytic[k][j], (up - down) / (2.0 * STEP)));
        }
    }
    Ok(pairs)
}

/// Checks that a parameter list fits `spec` exactly.
pub(crate) fn check_layout(spec: &ModelSpec, params: &[Tensor]) -> Result<()> {
    let expected = layout(spec);
    if expected.len() != params.len() {
        return Err(Error::Corrupt(format!(
            "expected {} parameter tensors, found {}",
            expected.len(),
            params.len()
        )));
    }
    for ((name, shape), t) in expected.iter().zip(params) {
        if &t.name != name || &t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
            return Err(Error::Corrupt(format!(
                "tensor `{}` {:?} does not match expected `{name}` {shape:?}",
                t.name, t.shape
            )));
        }
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Corrupt(format!(
                "tensor `{name}` holds non-finite values"
            )));
        }
    }
    Ok(())
}
