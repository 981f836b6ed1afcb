//! Fixed-size feature windows labeled by their middle reading.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Error, Result};
use crate::sensor_data::{IoLabel, SensorSession, FEATURE_COUNT};

pub const DEFAULT_WINDOW: usize = 3;

/// `d` consecutive readings; the target is the label of the middle one.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// `d` rows of (P, GV, GH, GS, rssi, M), oldest first.
    pub features: Vec<[f64; FEATURE_COUNT]>,
    pub label: Option<IoLabel>,
    /// Index of the middle reading in the source session.
    pub center_index: usize,
    pub session_id: Arc<str>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Row-major flattening, `d * 6` values.
    pub fn flat(&self) -> Vec<f64> {
        self.features.iter().flatten().copied().collect()
    }
}

pub fn validate_window_size(d: usize) -> Result<()> {
    if d == 0 || d.is_multiple_of(2) {
        return Err(invalid_param(
            "window",
            format!("must be odd and at least 1, got {d}"),
        ));
    }
    Ok(())
}

/// Slides a window of `d` readings over the session.
///
/// Window `i` covers readings `[i, i + d)` and is centered on `i + (d - 1) / 2`,
/// so the first prediction lags the session start by `(d - 1) / 2` samples.
pub fn make_windows(session: &SensorSession, d: usize) -> Result<Vec<Window>> {
    validate_window_size(d)?;
    if session.len() < d {
        return Err(Error::Empty(format!(
            "session of {} readings is shorter than the window ({d})",
            session.len()
        )));
    }
    let id: Arc<str> = Arc::from(session.session_id.as_str());
    let half = (d - 1) / 2;
    let readings = session.readings();
    Ok(readings
        .windows(d)
        .enumerate()
        .map(|(i, slice)| Window {
            features: slice.iter().map(|r| r.features()).collect(),
            label: readings[i + half].indoor_label,
            center_index: i + half,
            session_id: id.clone(),
        })
        .collect())
}

/// Per-feature standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: [f64; FEATURE_COUNT],
    pub std: [f64; FEATURE_COUNT],
}

impl FeatureScaler {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; FEATURE_COUNT],
            std: [1.0; FEATURE_COUNT],
        }
    }

    pub fn transform_row(&self, row: &[f64; FEATURE_COUNT]) -> [f64; FEATURE_COUNT] {
        std::array::from_fn(|k| (row[k] - self.mean[k]) / self.std[k])
    }

    pub fn transform(&self, window: &Window) -> Window {
        Window {
            features: window
                .features
                .iter()
                .map(|r| self.transform_row(r))
                .collect(),
            ..window.clone()
        }
    }
}

/// Fits mean and population standard deviation of each feature over every
/// row of every window. Zero-variance features get a unit deviation.
pub fn fit_scaler(windows: &[Window]) -> Result<FeatureScaler> {
    let rows: Vec<&[f64; FEATURE_COUNT]> = windows.iter().flat_map(|w| w.features.iter()).collect();
    if rows.is_empty() {
        return Err(Error::Empty("cannot fit a scaler on no windows".into()));
    }
    let n = rows.len() as f64;
    let mut mean = [0.0; FEATURE_COUNT];
    for row in &rows {
        for k in 0..FEATURE_COUNT {
            mean[k] += row[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; FEATURE_COUNT];
    for row in &rows {
        for k in 0..FEATURE_COUNT {
            let d = row[k] - mean[k];
            var[k] += d * d;
        }
    }
    let std = var.map(|v| {
        let s = (v / n).sqrt();
        if s > 0.0 && s.is_finite() {
            s
        } else {
            1.0
        }
    });
    Ok(FeatureScaler { mean, std })
}

pub fn apply_scaler(scaler: &FeatureScaler, windows: &[Window]) -> Vec<Window> {
    windows.iter().map(|w| scaler.transform(w)).collect()
}

/// Splits windows into train and validation sets by whole session, so that
/// all windows of a recording land on the same side.
///
/// With a single session there is nothing to split by, and the windows are
/// cut in order instead.
pub fn split_train_val(
    windows: &[Window],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<Window>, Vec<Window>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid_param(
            "fraction",
            format!("must lie in (0, 1), got {fraction}"),
        ));
    }
    if windows.len() < 2 {
        return Err(Error::Empty("need at least 2 windows to split".into()));
    }

    let mut sessions: Vec<Arc<str>> = Vec::new();
    let mut seen = HashSet::new();
    for w in windows {
        if seen.insert(w.session_id.clone()) {
            sessions.push(w.session_id.clone());
        }
    }

    if sessions.len() < 2 {
        let cut = split_point(windows.len(), fraction);
        return Ok((windows[..cut].to_vec(), windows[cut..].to_vec()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sessions.shuffle(&mut rng);
    let cut = split_point(sessions.len(), fraction);
    let train_ids: HashSet<&str> = sessions[..cut].iter().map(|s| &**s).collect();
    let (train, val) = windows
        .iter()
        .cloned()
        .partition(|w| train_ids.contains(&*w.session_id));
    Ok((train, val))
}

fn split_point(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}
