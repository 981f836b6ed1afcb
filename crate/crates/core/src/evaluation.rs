//! Scoring floor predictions against simulated ground truth.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floor::{
    trace_floor, BuildingHeuristics, BuildingType, FloorClusterModel, FloorLevel, PipelineConfig,
};
use crate::io_classifier::IoPredictor;
use crate::sensor_data::SensorSession;
use crate::simulator::GroundTruth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub session_id: String,
    pub building: Option<String>,
    pub true_floor: FloorLevel,
    pub predicted_floor: FloorLevel,
    /// Floors between truth and prediction; `None` when exactly one of them
    /// is outdoors.
    pub error: Option<u32>,
    pub m_delta: Option<f64>,
    pub true_m_delta: Option<f64>,
}

impl TrialOutcome {
    pub fn new(
        session_id: impl Into<String>,
        building: Option<String>,
        true_floor: FloorLevel,
        predicted_floor: FloorLevel,
    ) -> Self {
        let error = match (true_floor.level(), predicted_floor.level()) {
            (Some(a), Some(b)) => Some(a.abs_diff(b)),
            (None, None) => Some(0),
            _ => None,
        };
        Self {
            session_id: session_id.into(),
            building,
            true_floor,
            predicted_floor,
            error,
            m_delta: None,
            true_m_delta: None,
        }
    }
}

/// Exact / off-by-one / worse breakdown over a set of trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub trials: Vec<TrialOutcome>,
    pub exact: f64,
    pub within_one: f64,
    pub beyond_one: f64,
    /// Per-reading agreement of the IO series with the labels, where known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier_accuracy: Option<f64>,
}

impl EvaluationReport {
    pub fn from_outcomes(
        trials: Vec<TrialOutcome>,
        classifier_accuracy: Option<f64>,
    ) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::Empty("no trials to evaluate".into()));
        }
        let n = trials.len() as f64;
        let count = |f: &dyn Fn(Option<u32>) -> bool| {
            trials.iter().filter(|t| f(t.error)).count() as f64 / n
        };
        let exact = count(&|e| e == Some(0));
        let within_one = count(&|e| e == Some(1));
        let beyond_one = count(&|e| e.is_none_or(|e| e > 1));
        Ok(Self {
            trials,
            exact,
            within_one,
            beyond_one,
            classifier_accuracy,
        })
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// One row per trial.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "session_id",
            "building",
            "true_floor",
            "predicted_floor",
            "error",
            "m_delta",
            "true_m_delta",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.12}")).unwrap_or_default();
        for t in &self.trials {
            w.write_record([
                t.session_id.clone(),
                t.building.clone().unwrap_or_default(),
                t.true_floor.to_string(),
                t.predicted_floor.to_string(),
                t.error.map(|e| e.to_string()).unwrap_or_default(),
                opt(t.m_delta),
                opt(t.true_m_delta),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How one trial's height is turned into a floor.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    pub heuristics: BuildingHeuristics,
    pub building_type: BuildingType,
    pub cluster_model: Option<FloorClusterModel>,
}

impl Resolution {
    pub fn heuristic(heuristics: BuildingHeuristics, building_type: BuildingType) -> Self {
        Self {
            heuristics,
            building_type,
            cluster_model: None,
        }
    }
}

/// Runs the pipeline on every trial in parallel and scores it. `resolve`
/// picks the floor model for a trial from its ground truth.
pub fn evaluate_trials<F>(
    trials: &[(SensorSession, GroundTruth)],
    predictor: &dyn IoPredictor,
    resolve: F,
    config: &PipelineConfig,
) -> Result<EvaluationReport>
where
    F: Fn(&GroundTruth) -> Resolution + Sync,
{
    let results: Vec<(TrialOutcome, usize, usize)> = trials
        .par_iter()
        .map(|(session, truth)| {
            let r = resolve(truth);
            let trace = trace_floor(
                session,
                predictor,
                r.cluster_model.as_ref(),
                &r.heuristics,
                r.building_type,
                config,
            )?;
            let agree = trace
                .series
                .values()
                .iter()
                .zip(&truth.labels)
                .filter(|(&p, l)| p == l.bit())
                .count();
            let mut outcome = TrialOutcome::new(
                session.session_id.clone(),
                truth.building.clone(),
                truth.final_floor,
                trace.prediction.floor,
            );
            outcome.m_delta = trace.height.map(|h| h.m_delta);
            outcome.true_m_delta = truth.m_delta;
            Ok((outcome, agree, truth.labels.len()))
        })
        .collect::<Result<_>>()?;
    let (agree, total) = results.iter().fold((0, 0), |(a, t), r| (a + r.1, t + r.2));
    let accuracy = (total > 0).then(|| agree as f64 / total as f64);
    EvaluationReport::from_outcomes(results.into_iter().map(|r| r.0).collect(), accuracy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions_partition() {
        let o = |t: i32, p: FloorLevel| TrialOutcome::new("s", None, FloorLevel::Level(t), p);
        let report = EvaluationReport::from_outcomes(
            vec![
                o(3, FloorLevel::Level(3)),
                o(3, FloorLevel::Level(4)),
                o(3, FloorLevel::Level(1)),
                o(3, FloorLevel::Outdoors),
                TrialOutcome::new("s", None, FloorLevel::Outdoors, FloorLevel::Outdoors),
            ],
            None,
        )
        .unwrap();
        assert_eq!(report.exact, 0.4);
        assert_eq!(report.within_one, 0.2);
        assert_eq!(report.beyond_one, 0.4);
        assert!((report.exact + report.within_one + report.beyond_one - 1.0).abs() < 1e-9);
        assert!(EvaluationReport::from_outcomes(vec![], None).is_err());
    }

    #[test]
    fn basement_distance() {
        let t = TrialOutcome::new("s", None, FloorLevel::Level(0), FloorLevel::Level(2));
        assert_eq!(t.error, Some(2));
    }

    #[test]
    fn csv_has_a_row_per_trial() {
        let report = EvaluationReport::from_outcomes(
            vec![TrialOutcome::new(
                "a",
                Some("b".into()),
                FloorLevel::Level(2),
                FloorLevel::Level(2),
            )],
            Some(0.9),
        )
        .unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with("a,b,2,2,0"));
    }
}
