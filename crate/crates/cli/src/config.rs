//! Run configuration: a flat TOML file, overridden by `FLOORLEVEL_*`
//! environment variables, overridden in turn by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use floorlevel::altimetry::AltimetryConfig;
use floorlevel::simulator::SimConfig;
use floorlevel::{BuildingHeuristics, MaskPair, ModelKind, ModelSpec, PipelineConfig, TrainConfig};

pub const ENV_PREFIX: &str = "FLOORLEVEL_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub pressure_unit: String,

    pub window: usize,
    pub model_kind: String,
    /// Hidden widths; the kind's default when absent.
    pub layer_sizes: Option<Vec<usize>>,
    pub dropout: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Share of sessions held out for a validation score; 0 trains on all.
    pub validation_fraction: f64,

    pub mask_len: usize,
    pub threshold: f64,
    pub merge_gap: usize,
    pub min_run: usize,
    pub reference_radius: usize,
    pub smoothing_radius: usize,
    pub current_window: usize,
    pub cluster_radius: f64,
    pub m_hat_residential: f64,
    pub m_hat_office: f64,
    pub m_hat_unknown: f64,

    pub pressure_noise_sigma: f64,
    pub noiseless: bool,
    pub end_outdoors: bool,

    pub model: Option<PathBuf>,
    pub cluster_model: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pipeline = PipelineConfig::default();
        let heuristics = BuildingHeuristics::default();
        let train = TrainConfig::default();
        Self {
            seed: 0,
            pressure_unit: "hPa".into(),
            window: floorlevel::windowing::DEFAULT_WINDOW,
            model_kind: ModelKind::Feedforward.to_string(),
            layer_sizes: None,
            dropout: None,
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            beta1: train.beta1,
            beta2: train.beta2,
            epsilon: train.epsilon,
            validation_fraction: 0.0,
            mask_len: pipeline.masks.len(),
            threshold: pipeline.masks.threshold(),
            merge_gap: pipeline.merge_gap,
            min_run: pipeline.min_run,
            reference_radius: pipeline.altimetry.reference_radius,
            smoothing_radius: pipeline.altimetry.smoothing_radius,
            current_window: pipeline.altimetry.current_window,
            cluster_radius: pipeline.cluster_radius,
            m_hat_residential: heuristics.residential,
            m_hat_office: heuristics.office,
            m_hat_unknown: heuristics.unknown,
            pressure_noise_sigma: SimConfig::default().pressure_noise_sigma,
            noiseless: false,
            end_outdoors: false,
            model: None,
            cluster_model: None,
        }
    }
}

/// Reads an environment value as a TOML value, falling back to a plain string.
fn env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    pub fn load(
        path: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config {}", p.display()))?;
                toml::from_str::<toml::Table>(&text)
                    .with_context(|| format!("invalid config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for (key, value) in env {
            if let Some(name) = key.strip_prefix(ENV_PREFIX) {
                table.insert(name.to_ascii_lowercase(), env_value(&value));
            }
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .context("invalid configuration")?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("epsilon", self.epsilon),
            ("cluster_radius", self.cluster_radius),
            ("m_hat_residential", self.m_hat_residential),
            ("m_hat_office", self.m_hat_office),
            ("m_hat_unknown", self.m_hat_unknown),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                bail!("invalid parameter `{name}`: must be positive, got {v}");
            }
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            bail!(
                "invalid parameter `validation_fraction`: must lie in [0, 1), got {}",
                self.validation_fraction
            );
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            bail!(
                "invalid parameter `threshold`: must lie in (0, 1], got {}",
                self.threshold
            );
        }
        if !(self.pressure_noise_sigma >= 0.0 && self.pressure_noise_sigma.is_finite()) {
            bail!(
                "invalid parameter `pressure_noise_sigma`: must be non-negative, got {}",
                self.pressure_noise_sigma
            );
        }
        if self.merge_gap == 0 {
            bail!("invalid parameter `merge_gap`: must be at least 1");
        }
        self.pressure_unit()?;
        self.train_config().validate()?;
        self.model_spec()?.validate()?;
        self.pipeline()?;
        Ok(())
    }

    pub fn pressure_unit(&self) -> Result<floorlevel::sensor_data::PressureUnit> {
        self.pressure_unit
            .parse()
            .map_err(|e| anyhow::anyhow!("invalid parameter `pressure_unit`: {e}"))
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        Ok(self.model_kind.parse()?)
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let mut spec = ModelSpec::for_kind(self.model_kind()?).with_seed(self.seed);
        spec.window = self.window;
        if let Some(sizes) = &self.layer_sizes {
            spec.layer_sizes = sizes.clone();
        }
        if let Some(d) = self.dropout {
            spec.dropout = d;
        }
        Ok(spec)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        let altimetry = AltimetryConfig {
            reference_radius: self.reference_radius,
            smoothing_radius: self.smoothing_radius,
            current_window: self.current_window,
        };
        altimetry.validate()?;
        Ok(PipelineConfig {
            masks: MaskPair::step(self.mask_len, self.threshold)?,
            merge_gap: self.merge_gap,
            altimetry,
            cluster_radius: self.cluster_radius,
            min_run: self.min_run,
        })
    }

    pub fn heuristics(&self) -> BuildingHeuristics {
        BuildingHeuristics {
            residential: self.m_hat_residential,
            office: self.m_hat_office,
            unknown: self.m_hat_unknown,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let base = if self.noiseless {
            SimConfig::noiseless()
        } else {
            SimConfig {
                pressure_noise_sigma: self.pressure_noise_sigma,
                ..SimConfig::default()
            }
        };
        SimConfig {
            end_outdoors: self.end_outdoors,
            ..base
        }
        .with_seed(self.seed)
    }
}
