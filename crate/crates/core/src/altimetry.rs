//! Relative height from barometric pressure.
//!
//! Heights use the international barometric formula
//! `h = 44330 * (1 - (p1 / p0)^(1 / 5.255))`, with `p0` taken as the lowest
//! (smoothed) pressure around the last building entry.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Error, Result};
use crate::sensor_data::SensorSession;

/// Scale height of the barometric formula, meters.
pub const FORMULA_SCALE_M: f64 = 44330.0;
/// Exponent denominator of the barometric formula.
pub const FORMULA_EXPONENT: f64 = 5.255;

pub const DEFAULT_REFERENCE_RADIUS: usize = 15;
pub const DEFAULT_SMOOTHING_RADIUS: usize = 30;
pub const DEFAULT_CURRENT_WINDOW: usize = 60;
/// Largest distance to the nearest weather sample that still counts as covered.
pub const MAX_WEATHER_GAP_S: i64 = 120;

/// Height of `p1` above the level where pressure is `p0`. Positive on ascent.
pub fn pressure_to_height(p0: f64, p1: f64) -> Result<f64> {
    if !(p0 > 0.0 && p1 > 0.0 && p0.is_finite() && p1.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "pressures must be positive and finite, got p0={p0} p1={p1}"
        )));
    }
    Ok(FORMULA_SCALE_M * (1.0 - (p1 / p0).powf(1.0 / FORMULA_EXPONENT)))
}

/// Inverse of [`pressure_to_height`]: the pressure `height` meters above `p0`.
pub fn height_to_pressure(p0: f64, height: f64) -> f64 {
    p0 * (1.0 - height / FORMULA_SCALE_M).powf(FORMULA_EXPONENT)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AltimetryConfig {
    /// Half-width, in samples, of the window searched for the reference minimum.
    pub reference_radius: usize,
    /// Half-width of the centered moving average applied before the minimum
    /// search. Zero uses raw readings.
    pub smoothing_radius: usize,
    /// Number of trailing readings averaged into the current pressure.
    pub current_window: usize,
}

impl Default for AltimetryConfig {
    fn default() -> Self {
        Self {
            reference_radius: DEFAULT_REFERENCE_RADIUS,
            smoothing_radius: DEFAULT_SMOOTHING_RADIUS,
            current_window: DEFAULT_CURRENT_WINDOW,
        }
    }
}

impl AltimetryConfig {
    /// Raw minimum over the window and the last reading as current pressure.
    pub fn unsmoothed(reference_radius: usize) -> Self {
        Self {
            reference_radius,
            smoothing_radius: 0,
            current_window: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.current_window == 0 {
            return Err(invalid_param("current_window", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightEstimate {
    pub p0: f64,
    pub p1: f64,
    pub m_delta: f64,
    pub entry_index: usize,
}

/// Lowest pressure within `window_radius` samples of `entry_index`, clipped to the series.
pub fn select_reference_pressure_in(
    pressures: &[f64],
    entry_index: usize,
    window_radius: usize,
) -> Result<f64> {
    if entry_index >= pressures.len() {
        return Err(Error::InvalidInput(format!(
            "entry index {entry_index} outside series of length {}",
            pressures.len()
        )));
    }
    let lo = entry_index.saturating_sub(window_radius);
    let hi = (entry_index + window_radius).min(pressures.len() - 1);
    Ok(pressures[lo..=hi]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min))
}

pub fn select_reference_pressure(
    session: &SensorSession,
    entry_index: usize,
    window_radius: usize,
) -> Result<f64> {
    select_reference_pressure_in(&session.pressures(), entry_index, window_radius)
}

/// Centered moving average with the window clipped at the series ends.
pub fn smooth(values: &[f64], radius: usize) -> Vec<f64> {
    if radius == 0 {
        return values.to_vec();
    }
    let mut prefix = Vec::with_capacity(values.len() + 1);
    prefix.push(0.0);
    for v in values {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius + 1).min(values.len());
            let mean = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
            // prefix sums can drift by an ulp on constant input
            if values[lo..hi].iter().all(|&v| v == values[i]) {
                values[i]
            } else {
                mean
            }
        })
        .collect()
}

/// Mean of the last `window` readings.
pub fn current_pressure(pressures: &[f64], window: usize) -> Result<f64> {
    if pressures.is_empty() {
        return Err(Error::Empty("no pressure readings".into()));
    }
    let tail = &pressures[pressures.len().saturating_sub(window.max(1))..];
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Relative height of the final reading above the building entry at `entry_index`.
pub fn estimate_height(
    pressures: &[f64],
    entry_index: usize,
    cfg: &AltimetryConfig,
) -> Result<HeightEstimate> {
    cfg.validate()?;
    let smoothed = smooth(pressures, cfg.smoothing_radius);
    let p0 = select_reference_pressure_in(&smoothed, entry_index, cfg.reference_radius)?;
    let p1 = current_pressure(pressures, cfg.current_window)?;
    Ok(HeightEstimate {
        p0,
        p1,
        m_delta: pressure_to_height(p0, p1)?,
        entry_index,
    })
}

/// Station pressure samples used to remove weather drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherSeries {
    samples: Vec<(i64, f64)>,
}

impl WeatherSeries {
    pub fn new(samples: Vec<(i64, f64)>) -> Result<Self> {
        if let Some(i) = samples.windows(2).position(|w| w[1].0 < w[0].0) {
            return Err(Error::Ordering { row: i + 1 });
        }
        if let Some(i) = samples.iter().position(|s| !(s.1 > 0.0 && s.1.is_finite())) {
            return Err(Error::Row {
                row: i,
                reason: format!("station pressure must be positive, got {}", samples[i].1),
            });
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(i64, f64)] {
        &self.samples
    }

    /// Two columns, `unix_timestamp,pressure_hpa`, with an optional header row.
    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(source);
        let mut samples = Vec::new();
        for (row, record) in r.records().enumerate() {
            let record = record?;
            if record.len() < 2 {
                return Err(Error::Row {
                    row,
                    reason: "expected unix_timestamp,pressure_hpa".into(),
                });
            }
            let (ts, p) = (record[0].parse::<i64>(), record[1].parse::<f64>());
            match (ts, p) {
                (Ok(ts), Ok(p)) => samples.push((ts, p)),
                _ if row == 0 => continue,
                _ => {
                    return Err(Error::Row {
                        row,
                        reason: format!("cannot parse `{},{}`", &record[0], &record[1]),
                    })
                }
            }
        }
        Self::new(samples)
    }

    /// Pressure of the sample nearest to `timestamp`, with its distance in seconds.
    pub fn nearest(&self, timestamp: i64) -> Option<(f64, i64)> {
        if self.samples.is_empty() {
            return None;
        }
        let i = self.samples.partition_point(|s| s.0 < timestamp);
        let candidates = [i.checked_sub(1), (i < self.samples.len()).then_some(i)];
        candidates
            .into_iter()
            .flatten()
            .map(|j| (self.samples[j].1, (self.samples[j].0 - timestamp).abs()))
            .min_by_key(|&(_, gap)| gap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftCorrection {
    /// `p_i + |w_i - w_0|`; only undoes falling station pressure.
    #[default]
    Absolute,
    /// `p_i + (w_0 - w_i)`; undoes drift in either direction.
    Signed,
}

/// Removes weather drift from device pressures, referencing everything to
/// the station reading at the first sample.
///
/// `device` timestamps must share the weather series' time base.
pub fn weather_adjust(
    device: &[(i64, f64)],
    weather: &WeatherSeries,
    mode: DriftCorrection,
) -> Result<Vec<f64>> {
    let lookup = |ts: i64| -> Result<f64> {
        match weather.nearest(ts) {
            Some((w, gap)) if gap <= MAX_WEATHER_GAP_S => Ok(w),
            Some((_, gap)) => Err(Error::Coverage { timestamp: ts, gap }),
            None => Err(Error::Coverage {
                timestamp: ts,
                gap: i64::MAX,
            }),
        }
    };
    let Some(&(t0, _)) = device.first() else {
        return Ok(Vec::new());
    };
    let w0 = lookup(t0)?;
    device
        .iter()
        .map(|&(ts, p)| {
            let w = lookup(ts)?;
            Ok(match mode {
                DriftCorrection::Absolute => (w - w0).abs() + p,
                DriftCorrection::Signed => p + (w0 - w),
            })
        })
        .collect()
}

/// [`weather_adjust`] for a session whose timestamp 0 is `start_unix`.
pub fn weather_adjust_session(
    session: &SensorSession,
    weather: &WeatherSeries,
    start_unix: i64,
    mode: DriftCorrection,
) -> Result<Vec<f64>> {
    let device: Vec<(i64, f64)> = session
        .readings()
        .iter()
        .map(|r| (start_unix + r.timestamp, r.pressure))
        .collect();
    weather_adjust(&device, weather, mode)
}
