//! Floor-level estimation from smartphone sensor logs.
//!
//! The pipeline classifies each reading as indoor or outdoor from a short
//! window of sensor features, finds the last building entrance in that
//! series, converts the pressure change since the entrance into a height and
//! maps the height to a floor, either through clusters of heights seen on
//! earlier visits or through a per-building-type floor height.

pub mod altimetry;
pub mod error;
pub mod evaluation;
pub mod floor;
pub mod io_classifier;
pub mod sensor_data;
pub mod simulator;
pub mod transition;
pub mod windowing;

pub use error::{Error, Result};
pub use floor::{
    predict_floor, BuildingHeuristics, BuildingType, FloorClusterModel, FloorLevel,
    FloorPrediction, PipelineConfig,
};
pub use io_classifier::{IoPredictor, ModelKind, ModelSpec, TrainConfig, TrainedModel};
pub use sensor_data::{IoLabel, SensorReading, SensorSession};
pub use transition::{Direction, IoSeries, MaskPair, Transition, TransitionSet};
pub use windowing::{FeatureScaler, Window};
