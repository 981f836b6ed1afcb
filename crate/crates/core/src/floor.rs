//! Floor resolution from relative height, and the end-to-end prediction pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::altimetry::{estimate_height, AltimetryConfig, HeightEstimate};
use crate::error::{invalid_param, Error, Result};
use crate::io_classifier::IoPredictor;
use crate::sensor_data::{IoLabel, SensorSession};
use crate::transition::{
    detect_transitions, last_entry, suppress_short_runs, Direction, IoSeries, MaskPair,
    TransitionSet, DEFAULT_MASK_LEN,
};

/// Offsets closer than this are grouped into one floor, and a height must
/// lie within it of a cluster to resolve to that cluster.
pub const DEFAULT_CLUSTER_RADIUS: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildingType {
    Residential,
    Office,
    #[default]
    Unknown,
}

impl FromStr for BuildingType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residential" => Ok(BuildingType::Residential),
            "office" => Ok(BuildingType::Office),
            "unknown" => Ok(BuildingType::Unknown),
            other => Err(Error::InvalidInput(format!(
                "unknown building type `{other}`"
            ))),
        }
    }
}

/// Typical floor-to-floor heights by building type, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildingHeuristics {
    pub residential: f64,
    pub office: f64,
    pub unknown: f64,
}

impl Default for BuildingHeuristics {
    fn default() -> Self {
        Self {
            residential: 3.24,
            office: 4.02,
            unknown: 3.63,
        }
    }
}

impl BuildingHeuristics {
    /// Same floor height for every building type.
    pub fn flat(m_hat: f64) -> Self {
        Self {
            residential: m_hat,
            office: m_hat,
            unknown: m_hat,
        }
    }

    pub fn m_hat(&self, building: BuildingType) -> f64 {
        match building {
            BuildingType::Residential => self.residential,
            BuildingType::Office => self.office,
            BuildingType::Unknown => self.unknown,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("m_hat.residential", self.residential),
            ("m_hat.office", self.office),
            ("m_hat.unknown", self.unknown),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid_param(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// A floor level counted from the entrance (level 1). Levels below 1 are
/// basements: level 0 is B1, level -1 is B2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FloorLevel {
    Outdoors,
    Level(i32),
}

impl FloorLevel {
    pub fn level(self) -> Option<i32> {
        match self {
            FloorLevel::Outdoors => None,
            FloorLevel::Level(l) => Some(l),
        }
    }
}

impl fmt::Display for FloorLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            FloorLevel::Outdoors => f.write_str("outdoors"),
            FloorLevel::Level(l) if l >= 1 => write!(f, "{l}"),
            FloorLevel::Level(l) => write!(f, "B{}", 1 - l),
        }
    }
}

impl FromStr for FloorLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "outdoors" {
            return Ok(FloorLevel::Outdoors);
        }
        let bad = || Error::InvalidInput(format!("cannot parse floor `{s}`"));
        if let Some(b) = s.strip_prefix('B') {
            let depth: i32 = b.parse().map_err(|_| bad())?;
            if depth < 1 {
                return Err(bad());
            }
            return Ok(FloorLevel::Level(1 - depth));
        }
        match s.parse::<i32>() {
            Ok(l) if l >= 1 => Ok(FloorLevel::Level(l)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for FloorLevel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            FloorLevel::Level(l) if l >= 1 => serializer.serialize_i32(l),
            other => serializer.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for FloorLevel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i32),
            Str(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Int(l) if l >= 1 => Ok(FloorLevel::Level(l)),
            Raw::Int(l) => Err(serde::de::Error::custom(format!(
                "floor {l} must be at least 1; basements are written B1, B2"
            ))),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cluster,
    Heuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorPrediction {
    pub floor: FloorLevel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_index: Option<usize>,
}

impl FloorPrediction {
    pub fn outdoors() -> Self {
        Self {
            floor: FloorLevel::Outdoors,
            method: None,
            m_delta: None,
            cluster_index: None,
        }
    }

    pub fn is_outdoors(&self) -> bool {
        self.floor == FloorLevel::Outdoors
    }
}

/// Heights of repeated visits grouped into floors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorClusterModel {
    pub building: Option<String>,
    /// Every observed offset, ascending.
    offsets: Vec<f64>,
    representatives: Vec<f64>,
    counts: Vec<usize>,
}

impl FloorClusterModel {
    pub fn is_empty(&self) -> bool {
        self.representatives.is_empty()
    }

    pub fn len(&self) -> usize {
        self.representatives.len()
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn representatives(&self) -> &[f64] {
        &self.representatives
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn with_building(mut self, building: impl Into<String>) -> Self {
        self.building = Some(building.into());
        self
    }

    /// Distances between consecutive cluster representatives.
    pub fn interfloor_distances(&self) -> Vec<f64> {
        self.representatives
            .windows(2)
            .map(|w| w[1] - w[0])
            .collect()
    }

    /// Rebuilds the model with additional visits.
    pub fn extended(&self, more: &[f64], radius: f64) -> Result<Self> {
        let mut all = self.offsets.clone();
        all.extend_from_slice(more);
        Ok(cluster_heights_with_radius(&all, radius)?.with_tag(self.building.clone()))
    }

    fn with_tag(mut self, building: Option<String>) -> Self {
        self.building = building;
        self
    }

    /// Checks the invariants of a model read from disk.
    pub fn validate(&self) -> Result<()> {
        let corrupt = |m: &str| Err(Error::Corrupt(format!("cluster model: {m}")));
        if self.representatives.len() != self.counts.len() {
            return corrupt("representatives and counts differ in length");
        }
        if self.counts.iter().sum::<usize>() != self.offsets.len() {
            return corrupt("counts do not add up to the number of offsets");
        }
        if self.representatives.windows(2).any(|w| w[1] <= w[0])
            || self.offsets.windows(2).any(|w| w[1] < w[0])
        {
            return corrupt("values are not sorted");
        }
        if self
            .offsets
            .iter()
            .chain(&self.representatives)
            .any(|v| !v.is_finite())
        {
            return corrupt("non-finite value");
        }
        Ok(())
    }
}

pub fn cluster_heights(offsets: &[f64]) -> Result<FloorClusterModel> {
    cluster_heights_with_radius(offsets, DEFAULT_CLUSTER_RADIUS)
}

/// Single-linkage grouping of sorted offsets: a new cluster starts wherever
/// the gap to the previous offset exceeds `radius`. Each cluster is
/// represented by the mean of its members.
pub fn cluster_heights_with_radius(offsets: &[f64], radius: f64) -> Result<FloorClusterModel> {
    if let Some(v) = offsets.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite height offset {v}")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(invalid_param(
            "cluster_radius",
            format!("must be positive, got {radius}"),
        ));
    }
    let mut sorted = offsets.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mut representatives = Vec::new();
    let mut counts = Vec::new();
    let mut start = 0;
    for i in 1..=sorted.len() {
        if i == sorted.len() || sorted[i] - sorted[i - 1] > radius {
            let members = &sorted[start..i];
            representatives.push(members.iter().sum::<f64>() / members.len() as f64);
            counts.push(members.len());
            start = i;
        }
    }
    if sorted.is_empty() {
        representatives.clear();
        counts.clear();
    }
    Ok(FloorClusterModel {
        building: None,
        offsets: sorted,
        representatives,
        counts,
    })
}

fn round_half_up(x: f64) -> i32 {
    (x + 0.5).floor() as i32
}

pub fn resolve_floor_heuristic(
    m_delta: f64,
    building: BuildingType,
    heuristics: &BuildingHeuristics,
) -> FloorPrediction {
    let m_hat = heuristics.m_hat(building);
    FloorPrediction {
        floor: FloorLevel::Level(round_half_up(m_delta / m_hat) + 1),
        method: Some(Method::Heuristic),
        m_delta: Some(m_delta),
        cluster_index: None,
    }
}

/// Picks the cluster nearest to `m_delta`. Floors are counted from the
/// entrance cluster (the one within `radius` of 0 m, or a virtual one at 0 m
/// when no visit was recorded there). Heights with no cluster within
/// `radius` fall back to the heuristic.
pub fn resolve_floor_cluster(
    m_delta: f64,
    model: &FloorClusterModel,
    radius: f64,
    building: BuildingType,
    heuristics: &BuildingHeuristics,
) -> FloorPrediction {
    let reps = model.representatives();
    let has_entry = reps.iter().any(|r| r.abs() <= radius);
    // (height, cluster index), with a virtual entrance at 0 m when none was observed
    let mut levels: Vec<(f64, Option<usize>)> = reps.iter().copied().zip((0..).map(Some)).collect();
    if !has_entry {
        let at = levels.partition_point(|(r, _)| *r < 0.0);
        levels.insert(at, (0.0, None));
    }
    let entry = levels
        .iter()
        .enumerate()
        .filter(|(_, (r, _))| r.abs() <= radius)
        .min_by(|a, b| a.1 .0.abs().total_cmp(&b.1 .0.abs()))
        .map(|(i, _)| i)
        .expect("an entrance level always exists");
    let nearest = levels
        .iter()
        .enumerate()
        .map(|(i, (r, _))| (i, (r - m_delta).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1));

    match nearest {
        Some((i, dist)) if dist <= radius => FloorPrediction {
            floor: FloorLevel::Level(i as i32 - entry as i32 + 1),
            method: Some(Method::Cluster),
            m_delta: Some(m_delta),
            cluster_index: levels[i].1,
        },
        _ => resolve_floor_heuristic(m_delta, building, heuristics),
    }
}

/// Detector and altimetry settings for [`predict_floor`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub masks: MaskPair,
    pub merge_gap: usize,
    pub altimetry: AltimetryConfig,
    pub cluster_radius: f64,
    /// Classifier runs shorter than this are absorbed before detection.
    pub min_run: usize,
}

/// Default for [`PipelineConfig::min_run`]: half the mask length.
pub const DEFAULT_MIN_RUN: usize = DEFAULT_MASK_LEN / 2;

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            masks: MaskPair::default(),
            merge_gap: DEFAULT_MASK_LEN,
            altimetry: AltimetryConfig::default(),
            cluster_radius: DEFAULT_CLUSTER_RADIUS,
            min_run: DEFAULT_MIN_RUN,
        }
    }
}

/// Everything the pipeline computed on the way to a prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineTrace {
    /// Classifier output.
    pub series: IoSeries,
    /// Output after short-run suppression, as fed to the detector.
    pub cleaned: IoSeries,
    pub transitions: TransitionSet,
    pub height: Option<HeightEstimate>,
    pub prediction: FloorPrediction,
}

/// Classify, find the last building entry, estimate the height above it,
/// then resolve a floor through the cluster model or the heuristic.
pub fn predict_floor(
    session: &SensorSession,
    predictor: &dyn IoPredictor,
    cluster_model: Option<&FloorClusterModel>,
    heuristics: &BuildingHeuristics,
    building: BuildingType,
    config: &PipelineConfig,
) -> Result<FloorPrediction> {
    trace_floor(
        session,
        predictor,
        cluster_model,
        heuristics,
        building,
        config,
    )
    .map(|t| t.prediction)
}

pub fn trace_floor(
    session: &SensorSession,
    predictor: &dyn IoPredictor,
    cluster_model: Option<&FloorClusterModel>,
    heuristics: &BuildingHeuristics,
    building: BuildingType,
    config: &PipelineConfig,
) -> Result<PipelineTrace> {
    session.ensure_non_empty()?;
    let series = predictor.predict_series(session)?;
    let cleaned = suppress_short_runs(&series, config.min_run);
    let transitions = detect_transitions(&cleaned, &config.masks, config.merge_gap)?;
    let ended_outdoors = cleaned.last() == Some(IoLabel::Outdoor);

    let entry = match last_entry(&transitions) {
        Some(t) if t.direction == Direction::IntoBuilding && !ended_outdoors => t,
        None if !ended_outdoors => return Err(Error::NoEntryObserved),
        _ => {
            return Ok(PipelineTrace {
                series,
                cleaned,
                transitions,
                height: None,
                prediction: FloorPrediction::outdoors(),
            })
        }
    };

    let height = estimate_height(&session.pressures(), entry.index, &config.altimetry)?;
    let prediction = match cluster_model.filter(|m| !m.is_empty()) {
        Some(model) => resolve_floor_cluster(
            height.m_delta,
            model,
            config.cluster_radius,
            building,
            heuristics,
        ),
        None => resolve_floor_heuristic(height.m_delta, building, heuristics),
    };
    Ok(PipelineTrace {
        series,
        cleaned,
        transitions,
        height: Some(height),
        prediction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(reps: &[f64]) -> FloorClusterModel {
        cluster_heights(reps).unwrap()
    }

    #[test]
    fn clusters_by_gap() {
        assert!(cluster_heights(&[]).unwrap().is_empty());
        let m = cluster_heights(&[8.9, 0.3, 5.2, 0.1, 5.4]).unwrap();
        assert_eq!(m.counts(), &[2, 2, 1]);
        let expected = [0.2, 5.3, 8.9];
        for (r, e) in m.representatives().iter().zip(expected) {
            assert!((r - e).abs() < 1e-12, "{r} vs {e}");
        }
        assert_eq!(m.offsets(), &[0.1, 0.3, 5.2, 5.4, 8.9]);
        assert!(cluster_heights(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn single_linkage_chains() {
        let m = cluster_heights(&[0.0, 1.4, 2.8, 4.2]).unwrap();
        assert_eq!(m.len(), 1);
        let m = cluster_heights(&[0.0, 1.5, 3.01]).unwrap();
        assert_eq!(m.counts(), &[2, 1]);
    }

    #[test]
    fn cluster_resolution() {
        let h = BuildingHeuristics::default();
        let r = |m: f64, reps: &[f64]| {
            resolve_floor_cluster(
                m,
                &model(reps),
                DEFAULT_CLUSTER_RADIUS,
                BuildingType::Unknown,
                &h,
            )
        };

        let p = r(0.1, &[0.0, 5.0]);
        assert_eq!(p.floor, FloorLevel::Level(1));
        assert_eq!(p.method, Some(Method::Cluster));
        assert_eq!(p.cluster_index, Some(0));

        assert_eq!(r(5.3, &[0.0, 5.0, 8.7]).floor, FloorLevel::Level(2));

        let p = r(3.0, &[0.0, 8.0]);
        assert_eq!(p.method, Some(Method::Heuristic));
        assert_eq!(p.floor, FloorLevel::Level(2));
    }

    #[test]
    fn virtual_entry_cluster_anchors_levels() {
        let h = BuildingHeuristics::default();
        let m = model(&[3.5, 7.0]);
        let r = |x: f64| {
            resolve_floor_cluster(x, &m, DEFAULT_CLUSTER_RADIUS, BuildingType::Unknown, &h)
        };
        assert_eq!(r(3.4).floor, FloorLevel::Level(2));
        assert_eq!(r(7.2).floor, FloorLevel::Level(3));
        let p = r(0.2);
        assert_eq!(p.floor, FloorLevel::Level(1));
        assert_eq!(p.cluster_index, None);
    }

    #[test]
    fn basement_clusters_count_down_from_entry() {
        let h = BuildingHeuristics::default();
        let m = model(&[-7.0, -3.5, 0.0, 3.5]);
        let r = |x: f64| {
            resolve_floor_cluster(x, &m, DEFAULT_CLUSTER_RADIUS, BuildingType::Unknown, &h).floor
        };
        assert_eq!(r(-3.4), FloorLevel::Level(0));
        assert_eq!(r(-7.1), FloorLevel::Level(-1));
        assert_eq!(r(3.6), FloorLevel::Level(2));
        let no_entry = model(&[-3.5, 3.5]);
        let r = |x: f64| {
            resolve_floor_cluster(
                x,
                &no_entry,
                DEFAULT_CLUSTER_RADIUS,
                BuildingType::Unknown,
                &h,
            )
            .floor
        };
        assert_eq!(r(-3.4), FloorLevel::Level(0));
        assert_eq!(r(0.1), FloorLevel::Level(1));
        assert_eq!(r(3.4), FloorLevel::Level(2));
    }

    #[test]
    fn heuristic_examples() {
        let h = BuildingHeuristics::default();
        assert_eq!(
            resolve_floor_heuristic(0.0, BuildingType::Office, &h).floor,
            FloorLevel::Level(1)
        );
        assert_eq!(
            resolve_floor_heuristic(8.04, BuildingType::Office, &h).floor,
            FloorLevel::Level(3)
        );
        assert_eq!(
            resolve_floor_heuristic(3.63, BuildingType::Unknown, &h).floor,
            FloorLevel::Level(2)
        );
        assert_eq!(
            resolve_floor_heuristic(3.24, BuildingType::Residential, &h).floor,
            FloorLevel::Level(2)
        );
        let b1 = resolve_floor_heuristic(-3.63, BuildingType::Unknown, &h);
        assert_eq!(b1.floor, FloorLevel::Level(0));
        assert_eq!(b1.floor.to_string(), "B1");
        assert_eq!(
            resolve_floor_heuristic(-7.3, BuildingType::Unknown, &h)
                .floor
                .to_string(),
            "B2"
        );
    }

    #[test]
    fn floor_json_forms() {
        let p = resolve_floor_heuristic(8.04, BuildingType::Office, &BuildingHeuristics::default());
        let json = serde_json::to_string(&p).unwrap();
        assert!(
            json.starts_with(r#"{"floor":3,"method":"heuristic","m_delta":8.04"#),
            "{json}"
        );
        assert_eq!(
            serde_json::to_string(&FloorPrediction::outdoors()).unwrap(),
            r#"{"floor":"outdoors"}"#
        );
        let back: FloorPrediction = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        let b2: FloorLevel = serde_json::from_str(r#""B2""#).unwrap();
        assert_eq!(b2, FloorLevel::Level(-1));
        assert!(serde_json::from_str::<FloorLevel>("0").is_err());
    }

    #[test]
    fn cluster_model_validation() {
        let m = model(&[0.0, 3.6, 7.1]);
        assert!(m.validate().is_ok());
        let json = serde_json::to_string(&m).unwrap();
        let broken = json.replace("[1,1,1]", "[1,1]");
        let parsed: FloorClusterModel = serde_json::from_str(&broken).unwrap();
        assert!(parsed.validate().is_err());
        let grown = m.extended(&[3.7], DEFAULT_CLUSTER_RADIUS).unwrap();
        assert_eq!(grown.counts(), &[1, 2, 1]);
        assert_eq!(m.interfloor_distances().len(), 2);
    }
}
