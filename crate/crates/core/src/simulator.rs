//! Synthetic building visits with ground truth.
//!
//! A trial walks outdoors at ground level, enters, waits in the lobby, rides
//! up to a target floor and dwells there. GPS-derived signals keep their
//! outdoor character for a sampled lag after the physical entry, while
//! pressure, RSSI and the magnetometer react immediately.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::altimetry::height_to_pressure;
use crate::error::{invalid_param, Error, Result};
use crate::floor::{BuildingType, FloorLevel, DEFAULT_CLUSTER_RADIUS};
use crate::sensor_data::{IoLabel, SensorReading, SensorSession, NO_FIX};
use crate::transition::Direction;

/// Upper bound on any GPS lag.
pub const MAX_LAG_S: u32 = 60;

/// Floor spacing of one building. `floor_gaps[i]` separates floor `i + 1`
/// from floor `i + 2`; floor 1 is the entrance level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingProfile {
    pub name: String,
    pub floor_gaps: Vec<f64>,
    pub building_type: BuildingType,
    /// Floor height used for this building's heuristic. Defaults to the
    /// least-squares slope of floor height over floor index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor_height: Option<f64>,
}

impl BuildingProfile {
    pub fn new(
        name: impl Into<String>,
        floor_gaps: Vec<f64>,
        building_type: BuildingType,
    ) -> Result<Self> {
        let p = Self {
            name: name.into(),
            floor_gaps,
            building_type,
            floor_height: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// `floors` levels, all `gap` apart.
    pub fn uniform(
        name: impl Into<String>,
        floors: usize,
        gap: f64,
        building_type: BuildingType,
    ) -> Result<Self> {
        Self::new(name, vec![gap; floors.saturating_sub(1)], building_type)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((i, g)) = self
            .floor_gaps
            .iter()
            .enumerate()
            .find(|(_, g)| !(g.is_finite() && **g > DEFAULT_CLUSTER_RADIUS))
        {
            return Err(invalid_param(
                "floor_gaps",
                format!("gap {i} is {g} m, must exceed {DEFAULT_CLUSTER_RADIUS} m"),
            ));
        }
        if let Some(h) = self.floor_height {
            if !(h.is_finite() && h > 0.0) {
                return Err(invalid_param(
                    "floor_height",
                    format!("must be positive, got {h}"),
                ));
            }
        }
        Ok(())
    }

    pub fn floors(&self) -> u32 {
        self.floor_gaps.len() as u32 + 1
    }

    /// Height of `floor` above the entrance.
    pub fn height_of(&self, floor: u32) -> Result<f64> {
        if floor == 0 || floor > self.floors() {
            return Err(invalid_param(
                "target_floor",
                format!("must lie in 1..={}, got {floor}", self.floors()),
            ));
        }
        Ok(self.floor_gaps[..floor as usize - 1].iter().sum())
    }

    pub fn heights(&self) -> Vec<f64> {
        (1..=self.floors())
            .map(|f| self.height_of(f).expect("floor in range"))
            .collect()
    }

    /// Per-building floor height for the heuristic resolver.
    pub fn conditional_m_hat(&self) -> f64 {
        if let Some(h) = self.floor_height {
            return h;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (k, h) in self.heights().into_iter().enumerate() {
            num += k as f64 * h;
            den += (k * k) as f64;
        }
        if den == 0.0 {
            3.63
        } else {
            num / den
        }
    }

    pub fn rockefeller() -> Self {
        let mut gaps = vec![5.6];
        gaps.extend(std::iter::repeat_n(3.95, 15));
        Self::new("10 Rockefeller Plz", gaps, BuildingType::Office).expect("valid preset")
    }

    pub fn uris() -> Self {
        let mut gaps = vec![5.0, 3.65, 3.65];
        gaps.extend(std::iter::repeat_n(3.5, 8));
        Self::new("Uris Hall", gaps, BuildingType::Office).expect("valid preset")
    }

    pub fn mudd() -> Self {
        Self::uniform("Mudd", 19, 3.85, BuildingType::Office).expect("valid preset")
    }

    pub fn noco() -> Self {
        Self::uniform("Noco", 14, 3.75, BuildingType::Office).expect("valid preset")
    }

    pub fn social_work() -> Self {
        Self::uniform("Social Work", 13, 4.3, BuildingType::Office).expect("valid preset")
    }

    /// The five surveyed buildings with their trial counts.
    pub fn survey() -> Vec<(Self, usize)> {
        vec![
            (Self::rockefeller(), 10),
            (Self::uris(), 14),
            (Self::mudd(), 10),
            (Self::noco(), 10),
            (Self::social_work(), 19),
        ]
    }
}

/// Mean and standard deviation of one signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub sd: f64,
}

impl Gaussian {
    pub const fn new(mean: f64, sd: f64) -> Self {
        Self { mean, sd }
    }

    fn sample<R: Rng>(&self, rng: &mut R, scale: f64) -> f64 {
        let sd = self.sd * scale;
        if sd > 0.0 {
            Normal::new(self.mean, sd).expect("finite sd").sample(rng)
        } else {
            self.mean
        }
    }
}

/// Signal distributions while GPS, radio and compass see one environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Signature {
    pub gps_vertical: Gaussian,
    pub gps_horizontal: Gaussian,
    pub gps_speed: Gaussian,
    /// Chance a reading reports no speed fix.
    pub no_fix: f64,
    pub rssi: Gaussian,
    pub magnet: Gaussian,
}

impl Signature {
    pub fn outdoor() -> Self {
        Self {
            gps_vertical: Gaussian::new(8.0, 3.0),
            gps_horizontal: Gaussian::new(10.0, 4.0),
            gps_speed: Gaussian::new(1.3, 0.4),
            no_fix: 0.03,
            rssi: Gaussian::new(-78.0, 4.0),
            magnet: Gaussian::new(1015.0, 3.0),
        }
    }

    pub fn indoor() -> Self {
        Self {
            gps_vertical: Gaussian::new(60.0, 15.0),
            gps_horizontal: Gaussian::new(70.0, 25.0),
            gps_speed: Gaussian::new(0.3, 0.2),
            no_fix: 0.7,
            rssi: Gaussian::new(-86.0, 4.0),
            magnet: Gaussian::new(1021.0, 6.0),
        }
    }

    /// No-fix probability at a given noise scale: the nominal rate at 1, the
    /// nearest certainty at 0.
    fn no_fix_at(&self, scale: f64) -> f64 {
        let certain = if self.no_fix >= 0.5 { 1.0 } else { 0.0 };
        (certain + (self.no_fix - certain) * scale).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub seed: u64,
    /// Gaussian pressure noise, hPa.
    pub pressure_noise_sigma: f64,
    /// Multiplier on every signal spread; 0 makes signatures deterministic.
    pub signal_noise: f64,
    /// GPS lag after entering, seconds, inclusive range.
    pub gps_lag: (u32, u32),
    /// GPS recovery after leaving, seconds, inclusive range.
    pub exit_lag: (u32, u32),
    pub baseline_pressure: f64,
    /// Half-width of the uniform per-trial offset on the baseline, hPa.
    pub baseline_jitter: f64,
    /// Vertical speed in m/s.
    pub ascent_rate: f64,
    /// Linear pressure drift, hPa per hour.
    pub weather_drift: Option<f64>,
    pub outdoor_seconds: (u32, u32),
    pub lobby_seconds: (u32, u32),
    pub dwell_seconds: u32,
    /// Walk back out after dwelling.
    pub end_outdoors: bool,
    pub start_timestamp: i64,
    pub outdoor: Signature,
    pub indoor: Signature,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            pressure_noise_sigma: 0.05,
            signal_noise: 1.0,
            gps_lag: (0, 20),
            exit_lag: (0, 3),
            baseline_pressure: 1013.25,
            baseline_jitter: 8.0,
            ascent_rate: 1.0,
            weather_drift: None,
            outdoor_seconds: (60, 90),
            lobby_seconds: (75, 90),
            dwell_seconds: 90,
            end_outdoors: false,
            start_timestamp: 0,
            outdoor: Signature::outdoor(),
            indoor: Signature::indoor(),
        }
    }
}

impl SimConfig {
    /// No sensor noise, no lag, no baseline jitter.
    pub fn noiseless() -> Self {
        Self {
            pressure_noise_sigma: 0.0,
            signal_noise: 0.0,
            gps_lag: (0, 0),
            exit_lag: (0, 0),
            baseline_jitter: 0.0,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pressure_noise_sigma >= 0.0 && self.pressure_noise_sigma.is_finite()) {
            return Err(invalid_param(
                "pressure_noise_sigma",
                format!("must be non-negative, got {}", self.pressure_noise_sigma),
            ));
        }
        if !(self.signal_noise >= 0.0 && self.signal_noise <= 1.0) {
            return Err(invalid_param(
                "signal_noise",
                format!("must lie in [0, 1], got {}", self.signal_noise),
            ));
        }
        for (name, (lo, hi)) in [("gps_lag", self.gps_lag), ("exit_lag", self.exit_lag)] {
            if lo > hi || hi > MAX_LAG_S {
                return Err(invalid_param(
                    name,
                    format!("range {lo}..={hi} must be ordered and within 0..={MAX_LAG_S}"),
                ));
            }
        }
        for (name, (lo, hi)) in [
            ("outdoor_seconds", self.outdoor_seconds),
            ("lobby_seconds", self.lobby_seconds),
        ] {
            if lo > hi || lo == 0 {
                return Err(invalid_param(
                    name,
                    format!("range {lo}..={hi} must be ordered and positive"),
                ));
            }
        }
        if self.dwell_seconds == 0 {
            return Err(invalid_param("dwell_seconds", "must be positive"));
        }
        if !(self.ascent_rate > 0.0 && self.ascent_rate.is_finite()) {
            return Err(invalid_param(
                "ascent_rate",
                format!("must be positive, got {}", self.ascent_rate),
            ));
        }
        if !(self.baseline_pressure > 0.0
            && self.baseline_jitter >= 0.0
            && self.baseline_jitter < self.baseline_pressure)
        {
            return Err(invalid_param(
                "baseline_pressure",
                "baseline must be positive and exceed its jitter",
            ));
        }
        if self.weather_drift.is_some_and(|d| !d.is_finite()) {
            return Err(invalid_param("weather_drift", "must be finite"));
        }
        for (name, s) in [("outdoor", &self.outdoor), ("indoor", &self.indoor)] {
            if !(0.0..=1.0).contains(&s.no_fix) {
                return Err(invalid_param(
                    if name == "outdoor" {
                        "outdoor.no_fix"
                    } else {
                        "indoor.no_fix"
                    },
                    "must lie in [0, 1]",
                ));
            }
        }
        Ok(())
    }
}

/// An IO boundary crossing as generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueTransition {
    /// First reading on the new side.
    pub index: usize,
    pub direction: Direction,
    pub gps_lag: u32,
    /// First reading whose GPS signals follow the new side.
    pub gps_change_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub session_id: String,
    pub building: Option<String>,
    pub building_type: Option<BuildingType>,
    pub labels: Vec<IoLabel>,
    pub transitions: Vec<TrueTransition>,
    /// Floor reached inside, before any exit.
    pub target_floor: Option<u32>,
    /// Where the session ends.
    pub final_floor: FloorLevel,
    /// Height of the target floor above the entrance.
    pub m_delta: Option<f64>,
    /// Noise-free pressure at the entrance.
    pub entry_pressure: Option<f64>,
    /// Noise-free height of every reading.
    pub heights: Vec<f64>,
}

impl GroundTruth {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}

/// Independent, reproducible seed for the `i`-th item generated from `base`.
pub fn derive_seed(base: u64, i: u64) -> u64 {
    let mut z = base.wrapping_add(i.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn uniform_u32<R: Rng>(rng: &mut R, (lo, hi): (u32, u32)) -> u32 {
    rng.gen_range(lo..=hi)
}

/// Builds readings second by second from the true states.
struct Recorder<'a> {
    cfg: &'a SimConfig,
    rng: ChaCha8Rng,
    baseline: f64,
    readings: Vec<SensorReading>,
    labels: Vec<IoLabel>,
    heights: Vec<f64>,
    pressure_noise: Option<Normal<f64>>,
}

impl<'a> Recorder<'a> {
    fn new(cfg: &'a SimConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let baseline = if cfg.baseline_jitter > 0.0 {
            cfg.baseline_pressure + rng.gen_range(-cfg.baseline_jitter..=cfg.baseline_jitter)
        } else {
            cfg.baseline_pressure
        };
        Self {
            cfg,
            rng,
            baseline,
            readings: Vec::new(),
            labels: Vec::new(),
            heights: Vec::new(),
            pressure_noise: (cfg.pressure_noise_sigma > 0.0)
                .then(|| Normal::new(0.0, cfg.pressure_noise_sigma).expect("finite sigma")),
        }
    }

    fn true_pressure(&self, t: usize, height: f64) -> f64 {
        let drift = self.cfg.weather_drift.unwrap_or(0.0) * t as f64 / 3600.0;
        height_to_pressure(self.baseline, height) + drift
    }

    /// One reading: `state` drives RSSI and the magnetometer, `gps_state`
    /// drives the GPS accuracies and speed.
    fn push(&mut self, state: IoLabel, gps_state: IoLabel, height: f64) -> Result<()> {
        let t = self.readings.len();
        let s = self.cfg.signal_noise;
        let gps = match gps_state {
            IoLabel::Outdoor => self.cfg.outdoor,
            IoLabel::Indoor => self.cfg.indoor,
        };
        let env = match state {
            IoLabel::Outdoor => self.cfg.outdoor,
            IoLabel::Indoor => self.cfg.indoor,
        };
        let rng = &mut self.rng;
        let gv = gps.gps_vertical.sample(rng, s).max(1.0);
        let gh = gps.gps_horizontal.sample(rng, s).max(1.0);
        let speed = if rng.gen::<f64>() < gps.no_fix_at(s) {
            NO_FIX
        } else {
            gps.gps_speed.sample(rng, s).abs()
        };
        let rssi = env.rssi.sample(rng, s);
        let total = env.magnet.sample(rng, s).max(1.0);
        let dir: [f64; 3] = UnitSphere.sample(rng);
        let magnet = dir.map(|c| c * total);
        let noise = self.pressure_noise.map_or(0.0, |n| n.sample(&mut self.rng));
        let pressure = self.true_pressure(t, height) + noise;
        let reading = SensorReading::from_components(
            self.cfg.start_timestamp + t as i64,
            pressure,
            gv,
            gh,
            speed,
            rssi,
            magnet,
            Some(state),
        )?;
        self.readings.push(reading);
        self.labels.push(state);
        self.heights.push(height);
        Ok(())
    }

    fn len(&self) -> usize {
        self.readings.len()
    }
}

/// Schedules a crossing into `to` at the current position, returning the
/// transition record and the number of lagged GPS readings still to come.
fn crossing<R: Rng>(rng: &mut R, at: usize, to: IoLabel, cfg: &SimConfig) -> TrueTransition {
    let (direction, range) = match to {
        IoLabel::Indoor => (Direction::IntoBuilding, cfg.gps_lag),
        IoLabel::Outdoor => (Direction::OutOfBuilding, cfg.exit_lag),
    };
    let lag = uniform_u32(rng, range);
    TrueTransition {
        index: at,
        direction,
        gps_lag: lag,
        gps_change_index: at + lag as usize,
    }
}

/// Side the GPS signals report at `t`: that of the latest crossing whose lag
/// has elapsed, else the starting side.
fn gps_side(t: usize, transitions: &[TrueTransition], initial: IoLabel) -> IoLabel {
    transitions
        .iter()
        .rev()
        .find(|tr| t >= tr.gps_change_index)
        .map_or(initial, |tr| match tr.direction {
            Direction::IntoBuilding => IoLabel::Indoor,
            Direction::OutOfBuilding => IoLabel::Outdoor,
        })
}

/// A single visit to `target_floor` of `profile`.
pub fn simulate_trial(
    profile: &BuildingProfile,
    target_floor: u32,
    cfg: &SimConfig,
) -> Result<(SensorSession, GroundTruth)> {
    profile.validate()?;
    cfg.validate()?;
    let target_height = profile.height_of(target_floor)?;
    let mut rec = Recorder::new(cfg);

    let outdoor = uniform_u32(&mut rec.rng, cfg.outdoor_seconds);
    for _ in 0..outdoor {
        rec.push(IoLabel::Outdoor, IoLabel::Outdoor, 0.0)?;
    }

    let entry = {
        let at = rec.len();
        crossing(&mut rec.rng, at, IoLabel::Indoor, cfg)
    };
    let mut transitions = vec![entry];
    let gps_state =
        |t: usize, transitions: &[TrueTransition]| gps_side(t, transitions, IoLabel::Outdoor);

    let lobby = uniform_u32(&mut rec.rng, cfg.lobby_seconds);
    for _ in 0..lobby {
        let g = gps_state(rec.len(), &transitions);
        rec.push(IoLabel::Indoor, g, 0.0)?;
    }
    let ride = (target_height / cfg.ascent_rate).ceil() as usize;
    for k in 1..=ride {
        let h = (k as f64 * cfg.ascent_rate).min(target_height);
        let g = gps_state(rec.len(), &transitions);
        rec.push(IoLabel::Indoor, g, h)?;
    }
    for _ in 0..cfg.dwell_seconds {
        let g = gps_state(rec.len(), &transitions);
        rec.push(IoLabel::Indoor, g, target_height)?;
    }

    let mut final_floor = FloorLevel::Level(target_floor as i32);
    if cfg.end_outdoors {
        for k in (0..ride).rev() {
            let h = (k as f64 * cfg.ascent_rate).min(target_height);
            let g = gps_state(rec.len(), &transitions);
            rec.push(IoLabel::Indoor, g, h)?;
        }
        let lobby_out = uniform_u32(&mut rec.rng, (10, 20));
        for _ in 0..lobby_out {
            let g = gps_state(rec.len(), &transitions);
            rec.push(IoLabel::Indoor, g, 0.0)?;
        }
        let exit = {
            let at = rec.len();
            crossing(&mut rec.rng, at, IoLabel::Outdoor, cfg)
        };
        transitions.push(exit);
        let after = uniform_u32(&mut rec.rng, cfg.outdoor_seconds);
        for _ in 0..after {
            let g = gps_state(rec.len(), &transitions);
            rec.push(IoLabel::Outdoor, g, 0.0)?;
        }
        final_floor = FloorLevel::Outdoors;
    }

    let entry_pressure = rec.true_pressure(entry.index, 0.0);
    let session_id = format!("{}-f{target_floor}-{:016x}", slug(&profile.name), cfg.seed);
    let session =
        SensorSession::new(session_id.clone(), rec.readings)?.with_metadata(profile.name.clone());
    let truth = GroundTruth {
        session_id,
        building: Some(profile.name.clone()),
        building_type: Some(profile.building_type),
        labels: rec.labels,
        transitions,
        target_floor: Some(target_floor),
        final_floor,
        m_delta: Some(target_height),
        entry_pressure: Some(entry_pressure),
        heights: rec.heights,
    };
    Ok((session, truth))
}

fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect();
    s.split('-')
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("-")
}

/// Visits to `floors` in order, each with its own derived seed.
pub fn simulate_visits(
    profile: &BuildingProfile,
    floors: &[u32],
    cfg: &SimConfig,
) -> Result<Vec<(SensorSession, GroundTruth)>> {
    floors
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            simulate_trial(
                profile,
                f,
                &cfg.clone().with_seed(derive_seed(cfg.seed, i as u64)),
            )
        })
        .collect()
}

/// Labeled walks that alternate between outdoors and indoors at ground level,
/// for training the IO classifier.
pub fn simulate_io_dataset(n_sessions: usize, cfg: &SimConfig) -> Result<Vec<SensorSession>> {
    simulate_io_dataset_with_truth(n_sessions, cfg).map(|v| v.into_iter().map(|(s, _)| s).collect())
}

pub fn simulate_io_dataset_with_truth(
    n_sessions: usize,
    cfg: &SimConfig,
) -> Result<Vec<(SensorSession, GroundTruth)>> {
    if n_sessions == 0 {
        return Err(invalid_param("n_sessions", "must be at least 1"));
    }
    cfg.validate()?;
    (0..n_sessions)
        .map(|i| {
            let cfg = cfg.clone().with_seed(derive_seed(cfg.seed, i as u64));
            io_walk(&cfg, i)
        })
        .collect()
}

fn io_walk(cfg: &SimConfig, i: usize) -> Result<(SensorSession, GroundTruth)> {
    let mut rec = Recorder::new(cfg);
    let segments = rec.rng.gen_range(3..=4);
    let initial = if rec.rng.gen_bool(0.5) {
        IoLabel::Indoor
    } else {
        IoLabel::Outdoor
    };
    let mut state = initial;
    let mut transitions: Vec<TrueTransition> = Vec::new();
    for seg in 0..segments {
        if seg > 0 {
            state = match state {
                IoLabel::Indoor => IoLabel::Outdoor,
                IoLabel::Outdoor => IoLabel::Indoor,
            };
            let tr = {
                let at = rec.len();
                crossing(&mut rec.rng, at, state, cfg)
            };
            transitions.push(tr);
        }
        let len = rec.rng.gen_range(30..=50);
        for _ in 0..len {
            let g = gps_side(rec.len(), &transitions, initial);
            rec.push(state, g, 0.0)?;
        }
    }
    let session_id = format!("io-{i:03}-{:016x}", cfg.seed);
    let final_floor = match state {
        IoLabel::Outdoor => FloorLevel::Outdoors,
        IoLabel::Indoor => FloorLevel::Level(1),
    };
    let session = SensorSession::new(session_id.clone(), rec.readings)?;
    let truth = GroundTruth {
        session_id,
        building: None,
        building_type: None,
        labels: rec.labels,
        transitions,
        target_floor: None,
        final_floor,
        m_delta: None,
        entry_pressure: None,
        heights: rec.heights,
    };
    Ok((session, truth))
}

/// Writes `<id>.csv` and `<id>.truth.json` into `dir`.
pub fn write_trial(
    dir: impl AsRef<Path>,
    session: &SensorSession,
    truth: &GroundTruth,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    crate::sensor_data::write_session_file(
        session,
        dir.join(format!("{}.csv", session.session_id)),
    )?;
    truth.write_json(dir.join(format!("{}.truth.json", session.session_id)))
}

/// Reads the sidecar written by [`write_trial`] for a session CSV path.
pub fn truth_path_for(session_csv: impl AsRef<Path>) -> Result<std::path::PathBuf> {
    let p = session_csv.as_ref();
    let stem = p
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidInput(format!("bad session path {}", p.display())))?;
    Ok(p.with_file_name(format!("{stem}.truth.json")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::altimetry::pressure_to_height;

    #[test]
    fn ground_floor_noiseless() {
        let (s, truth) =
            simulate_trial(&BuildingProfile::uris(), 1, &SimConfig::noiseless()).unwrap();
        assert_eq!(truth.m_delta, Some(0.0));
        let entry = truth.transitions[0].index;
        let p: Vec<f64> = s.readings()[entry..].iter().map(|r| r.pressure).collect();
        assert!(p.iter().all(|&v| v == p[0]));
        assert_eq!(truth.final_floor, FloorLevel::Level(1));
    }

    #[test]
    fn uris_third_floor_height() {
        let (s, truth) =
            simulate_trial(&BuildingProfile::uris(), 3, &SimConfig::noiseless()).unwrap();
        assert!((truth.m_delta.unwrap() - 8.65).abs() < 1e-12);
        let last = s.readings().last().unwrap().pressure;
        let h = pressure_to_height(truth.entry_pressure.unwrap(), last).unwrap();
        assert!((h - 8.65).abs() < 1e-9, "{h}");
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let cfg = SimConfig::default().with_seed(11);
        let a = simulate_trial(&BuildingProfile::mudd(), 7, &cfg).unwrap();
        let b = simulate_trial(&BuildingProfile::mudd(), 7, &cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate_trial(&BuildingProfile::mudd(), 7, &cfg.clone().with_seed(12)).unwrap();
        assert_ne!(a.0, c.0);
        let d1 = simulate_io_dataset(2, &cfg).unwrap();
        let d2 = simulate_io_dataset(2, &cfg.with_seed(99)).unwrap();
        assert_ne!(d1, d2);
    }

    #[test]
    fn invalid_target_floor() {
        let p = BuildingProfile::uris();
        assert!(simulate_trial(&p, 0, &SimConfig::default()).is_err());
        assert!(simulate_trial(&p, 13, &SimConfig::default()).is_err());
        assert!(simulate_trial(&p, 12, &SimConfig::default()).is_ok());
    }

    #[test]
    fn lag_delays_gps_only() {
        let cfg = SimConfig {
            pressure_noise_sigma: 0.0,
            signal_noise: 0.0,
            gps_lag: (12, 12),
            ..SimConfig::default()
        };
        let (s, truth) = simulate_trial(&BuildingProfile::noco(), 4, &cfg).unwrap();
        let tr = truth.transitions[0];
        assert_eq!(tr.gps_change_index - tr.index, 12);
        let r = s.readings();
        // First reading with indoor GPS accuracy.
        let gps_change = r
            .iter()
            .position(|x| x.gps_vertical_accuracy > 30.0)
            .unwrap();
        assert_eq!(gps_change, tr.gps_change_index);
        assert_eq!(r[tr.index].indoor_label, Some(IoLabel::Indoor));
        assert_eq!(r[tr.index - 1].indoor_label, Some(IoLabel::Outdoor));
        assert!(r[tr.index].rssi < -80.0);
    }

    #[test]
    fn ending_outdoors() {
        let cfg = SimConfig {
            end_outdoors: true,
            ..SimConfig::default()
        };
        let (s, truth) = simulate_trial(&BuildingProfile::uris(), 5, &cfg).unwrap();
        assert_eq!(truth.final_floor, FloorLevel::Outdoors);
        assert_eq!(truth.transitions.len(), 2);
        assert_eq!(
            s.readings().last().unwrap().indoor_label,
            Some(IoLabel::Outdoor)
        );
    }

    #[test]
    fn io_dataset_scale_and_balance() {
        let data = simulate_io_dataset(35, &SimConfig::default()).unwrap();
        let n: usize = data.iter().map(|s| s.len()).sum();
        assert!((4000..=6000).contains(&n), "{n}");
        let indoor = data
            .iter()
            .flat_map(|s| s.labels().unwrap())
            .filter(|&l| l == IoLabel::Indoor)
            .count();
        let frac = indoor as f64 / n as f64;
        assert!((0.3..=0.7).contains(&frac), "{frac}");
    }

    #[test]
    fn profile_validation() {
        assert!(BuildingProfile::new("x", vec![3.0, 1.2], BuildingType::Office).is_err());
        assert!(BuildingProfile::new("x", vec![3.0, f64::NAN], BuildingType::Office).is_err());
        assert_eq!(
            BuildingProfile::survey()
                .iter()
                .map(|(_, n)| n)
                .sum::<usize>(),
            63
        );
        let u = BuildingProfile::uniform("u", 10, 3.5, BuildingType::Unknown).unwrap();
        assert!((u.conditional_m_hat() - 3.5).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig {
            gps_lag: (0, 61),
            ..SimConfig::default()
        }
        .validate()
        .is_err());
        assert!(SimConfig {
            pressure_noise_sigma: -0.1,
            ..SimConfig::default()
        }
        .validate()
        .is_err());
        assert!(SimConfig::noiseless().validate().is_ok());
    }

    #[test]
    fn seeds_differ() {
        assert_ne!(derive_seed(0, 0), derive_seed(0, 1));
        assert_ne!(derive_seed(0, 0), derive_seed(1, 0));
    }
}
