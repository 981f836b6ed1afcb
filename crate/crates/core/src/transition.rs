//! Indoor/outdoor transition detection over a binary prediction series.
//!
//! Two step masks are slid across the series. A window position is flagged
//! when its Jaccard similarity to either mask reaches the threshold and one
//! mask strictly dominates the other; the dominant mask gives the direction.
//! Flagged positions with the same direction that lie within `merge_gap` of
//! each other form a group, and each group reports its middle position,
//! shifted by half a mask so the index lands on the 0/1 boundary.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Error, Result};
use crate::sensor_data::IoLabel;

pub const DEFAULT_MASK_LEN: usize = 10;
pub const DEFAULT_THRESHOLD: f64 = 0.4;

/// Per-timestep binary indoor (1) / outdoor (0) predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoSeries(Vec<u8>);

impl IoSeries {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if let Some(i) = values.iter().position(|&v| v > 1) {
            return Err(Error::InvalidInput(format!(
                "io series value at {i} is {}, expected 0 or 1",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn from_labels(labels: &[IoLabel]) -> Self {
        Self(labels.iter().map(|l| l.bit()).collect())
    }

    pub fn values(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> Option<IoLabel> {
        self.0.last().and_then(|&b| IoLabel::from_bit(b))
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["index", "indoor"])?;
        for (i, v) in self.0.iter().enumerate() {
            w.write_record([i.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the `indoor` column of a CSV written by [`IoSeries::write_csv`].
    pub fn read_csv<R: std::io::Read>(source: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(source);
        let col = r
            .headers()?
            .iter()
            .position(|h| h == "indoor")
            .ok_or_else(|| Error::Schema("missing required column `indoor`".into()))?;
        let mut values = Vec::new();
        for (row, record) in r.records().enumerate() {
            let record = record?;
            let cell = record.get(col).unwrap_or("");
            let v = cell.parse::<u8>().map_err(|_| Error::Row {
                row,
                reason: format!("cannot parse `{cell}` as 0/1"),
            })?;
            values.push(v);
        }
        Self::new(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    IntoBuilding,
    OutOfBuilding,
}

impl Direction {
    pub fn flipped(self) -> Self {
        match self {
            Direction::IntoBuilding => Direction::OutOfBuilding,
            Direction::OutOfBuilding => Direction::IntoBuilding,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::IntoBuilding => "into_building",
            Direction::OutOfBuilding => "out_of_building",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "into_building" => Ok(Direction::IntoBuilding),
            "out_of_building" => Ok(Direction::OutOfBuilding),
            other => Err(Error::InvalidInput(format!("unknown direction `{other}`"))),
        }
    }
}

/// The two step masks and the similarity threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPair {
    v1: Vec<u8>,
    v2: Vec<u8>,
    threshold: f64,
}

impl Default for MaskPair {
    fn default() -> Self {
        Self::step(DEFAULT_MASK_LEN, DEFAULT_THRESHOLD).expect("default masks are valid")
    }
}

impl MaskPair {
    /// Arbitrary masks. Each must be a step, i.e. hold more ones in one half
    /// than in the other, so that it encodes a direction.
    pub fn new(v1: Vec<u8>, v2: Vec<u8>, threshold: f64) -> Result<Self> {
        if v1.len() != v2.len() || v1.is_empty() {
            return Err(invalid_param(
                "masks",
                format!(
                    "lengths must match and be non-zero ({} vs {})",
                    v1.len(),
                    v2.len()
                ),
            ));
        }
        if v1.iter().chain(&v2).any(|&b| b > 1) {
            return Err(invalid_param("masks", "mask entries must be 0 or 1"));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(invalid_param(
                "jaccard_threshold",
                format!("must lie in (0, 1), got {threshold}"),
            ));
        }
        if orientation(&v1).is_none() || orientation(&v2).is_none() {
            return Err(invalid_param(
                "masks",
                "each mask must be a step with unequal halves",
            ));
        }
        Ok(Self { v1, v2, threshold })
    }

    /// `v1` = ones then zeros (leaving), `v2` = zeros then ones (entering).
    pub fn step(len: usize, threshold: f64) -> Result<Self> {
        if len < 2 || !len.is_multiple_of(2) {
            return Err(invalid_param(
                "mask_len",
                format!("must be even and at least 2, got {len}"),
            ));
        }
        let half = len / 2;
        let v1 = (0..len).map(|i| u8::from(i < half)).collect();
        let v2 = (0..len).map(|i| u8::from(i >= half)).collect();
        Self::new(v1, v2, threshold)
    }

    pub fn len(&self) -> usize {
        self.v1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v1.is_empty()
    }

    pub fn v1(&self) -> &[u8] {
        &self.v1
    }

    pub fn v2(&self) -> &[u8] {
        &self.v2
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn swapped(&self) -> Self {
        Self {
            v1: self.v2.clone(),
            v2: self.v1.clone(),
            threshold: self.threshold,
        }
    }
}

/// Direction a step mask encodes: ones at the back mean entering.
fn orientation(mask: &[u8]) -> Option<Direction> {
    let half = mask.len() / 2;
    let front: usize = mask[..half].iter().map(|&b| b as usize).sum();
    let back: usize = mask[mask.len() - half..].iter().map(|&b| b as usize).sum();
    match front.cmp(&back) {
        std::cmp::Ordering::Less => Some(Direction::IntoBuilding),
        std::cmp::Ordering::Greater => Some(Direction::OutOfBuilding),
        std::cmp::Ordering::Equal => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub index: usize,
    pub direction: Direction,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionSet {
    pub transitions: Vec<Transition>,
}

impl TransitionSet {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["index", "direction"])?;
        for t in &self.transitions {
            w.write_record([t.index.to_string(), t.direction.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Jaccard similarity of two binary vectors viewed as sets of one-positions.
/// Two empty sets have similarity 0.
pub fn jaccard(s: &[u8], v: &[u8]) -> Result<f64> {
    if s.len() != v.len() {
        return Err(Error::InvalidInput(format!(
            "jaccard of vectors of length {} and {}",
            s.len(),
            v.len()
        )));
    }
    Ok(jaccard_unchecked(s, v))
}

fn jaccard_unchecked(s: &[u8], v: &[u8]) -> f64 {
    let mut inter = 0u32;
    let mut ones_s = 0u32;
    let mut ones_v = 0u32;
    for (&a, &b) in s.iter().zip(v) {
        ones_s += a as u32;
        ones_v += b as u32;
        inter += (a & b) as u32;
    }
    let union = ones_s + ones_v - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// One row of the detector's debug dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JaccardRow {
    pub window: usize,
    pub j1: f64,
    pub j2: f64,
    pub flagged: Option<Direction>,
}

/// Similarities of every full window position against both masks.
pub fn jaccard_trace(t: &IoSeries, masks: &MaskPair) -> Result<Vec<JaccardRow>> {
    let m = masks.len();
    if t.len() < m {
        return Err(Error::Empty(format!(
            "series of length {} is shorter than the mask ({m})",
            t.len()
        )));
    }
    let dir1 = orientation(&masks.v1).expect("validated mask");
    let dir2 = orientation(&masks.v2).expect("validated mask");
    Ok(t.values()
        .windows(m)
        .enumerate()
        .map(|(window, s)| {
            let j1 = jaccard_unchecked(s, &masks.v1);
            let j2 = jaccard_unchecked(s, &masks.v2);
            let hit = j1 >= masks.threshold || j2 >= masks.threshold;
            let flagged = if !hit || j1 == j2 {
                None
            } else if j1 > j2 {
                Some(dir1)
            } else {
                Some(dir2)
            };
            JaccardRow {
                window,
                j1,
                j2,
                flagged,
            }
        })
        .collect())
}

pub fn write_jaccard_trace<W: Write>(rows: &[JaccardRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["window", "j1", "j2", "flagged"])?;
    for r in rows {
        w.write_record([
            r.window.to_string(),
            r.j1.to_string(),
            r.j2.to_string(),
            r.flagged.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn detect_transitions(
    t: &IoSeries,
    masks: &MaskPair,
    merge_gap: usize,
) -> Result<TransitionSet> {
    let flagged: Vec<(usize, Direction)> = jaccard_trace(t, masks)?
        .into_iter()
        .filter_map(|r| r.flagged.map(|d| (r.window, d)))
        .collect();

    let offset = masks.len() / 2;
    let mut transitions = Vec::new();
    let mut group: Vec<usize> = Vec::new();
    let mut group_dir = None;
    let mut flush = |group: &mut Vec<usize>, dir: Option<Direction>| {
        if let (Some(direction), false) = (dir, group.is_empty()) {
            let middle = group[(group.len() - 1) / 2];
            transitions.push(Transition {
                index: middle + offset,
                direction,
            });
        }
        group.clear();
    };
    for (start, dir) in flagged {
        let continues = match (group.last(), group_dir) {
            (Some(&prev), Some(d)) => d == dir && start - prev <= merge_gap,
            _ => false,
        };
        if !continues {
            flush(&mut group, group_dir);
            group_dir = Some(dir);
        }
        group.push(start);
    }
    flush(&mut group, group_dir);
    Ok(TransitionSet { transitions })
}

/// The most recent transition, whichever its direction.
pub fn last_entry(b: &TransitionSet) -> Option<Transition> {
    b.transitions.last().copied()
}

/// Absorbs runs shorter than `min_run` into their neighbours, shortest (then
/// leftmost) first, until every run is long enough or one run remains.
/// `min_run <= 1` leaves the series unchanged.
pub fn suppress_short_runs(t: &IoSeries, min_run: usize) -> IoSeries {
    let mut runs: Vec<(u8, usize)> = Vec::new();
    for &v in t.values() {
        match runs.last_mut() {
            Some((last, n)) if *last == v => *n += 1,
            _ => runs.push((v, 1)),
        }
    }
    while runs.len() > 1 {
        let Some((i, _)) = runs
            .iter()
            .enumerate()
            .filter(|(_, r)| r.1 < min_run)
            .min_by_key(|(_, r)| r.1)
        else {
            break;
        };
        let n = runs[i].1;
        runs.remove(i);
        if i > 0 && i < runs.len() {
            let next = runs.remove(i).1;
            runs[i - 1].1 += n + next;
        } else if i > 0 {
            runs[i - 1].1 += n;
        } else {
            runs[0].1 += n;
        }
    }
    IoSeries(
        runs.into_iter()
            .flat_map(|(v, n)| std::iter::repeat_n(v, n))
            .collect(),
    )
}
