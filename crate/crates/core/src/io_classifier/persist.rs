//! JSON model container.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{check_layout, EpochStats, ModelSpec, Tensor, TrainedModel};
use crate::error::{Error, Result};
use crate::windowing::FeatureScaler;

pub const MODEL_FORMAT: &str = "floorlevel-io-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    spec: ModelSpec,
    scaler: FeatureScaler,
    history: Vec<EpochStats>,
    parameters: Vec<Tensor>,
}

pub fn write_model<W: Write>(model: &TrainedModel, sink: W) -> Result<()> {
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        spec: model.spec().clone(),
        scaler: model.scaler().clone(),
        history: model.history().to_vec(),
        parameters: model.parameters().to_vec(),
    };
    serde_json::to_writer(sink, &file)?;
    Ok(())
}

pub fn read_model<R: Read>(mut source: R) -> Result<TrainedModel> {
    let mut text = String::new();
    source
        .read_to_string(&mut text)
        .map_err(|e| Error::Corrupt(format!("model file is not readable text: {e}")))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Corrupt(format!("model file is not valid JSON: {e}")))?;
    if value.get("format").and_then(Value::as_str) != Some(MODEL_FORMAT) {
        return Err(Error::Corrupt(format!("not a `{MODEL_FORMAT}` file")));
    }
    let version = value
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Corrupt("missing model version".into()))?;
    if version != u64::from(MODEL_VERSION) {
        return Err(Error::Version {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: MODEL_VERSION,
        });
    }
    let file: ModelFile =
        serde_json::from_value(value).map_err(|e| Error::Corrupt(format!("model file: {e}")))?;
    file.spec
        .validate()
        .map_err(|e| Error::Corrupt(format!("model spec: {e}")))?;
    check_layout(&file.spec, &file.parameters)?;
    if file.scaler.std.iter().any(|s| !(s.is_finite() && *s > 0.0))
        || file.scaler.mean.iter().any(|m| !m.is_finite())
    {
        return Err(Error::Corrupt("scaler holds invalid statistics".into()));
    }
    Ok(TrainedModel::from_parts(
        file.spec,
        file.parameters,
        file.scaler,
        file.history,
    ))
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_model(model, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    read_model(std::io::BufReader::new(fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io_classifier::{train, TrainConfig};
    use crate::sensor_data::{IoLabel, FEATURE_COUNT};
    use crate::windowing::Window;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_windows(n: usize, seed: u64) -> Vec<Window> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| Window {
                features: (0..3)
                    .map(|_| {
                        std::array::from_fn::<f64, FEATURE_COUNT, _>(|_| {
                            rng.gen_range(-50.0..1050.0)
                        })
                    })
                    .collect(),
                label: IoLabel::from_bit((i % 2) as u8),
                center_index: i,
                session_id: Arc::from("r"),
            })
            .collect()
    }

    fn round_trip(spec: ModelSpec) {
        let data = random_windows(100, 1);
        let model = train(
            &data,
            &spec,
            &TrainConfig {
                epochs: 2,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, model);
        for w in random_windows(100, 2) {
            assert_eq!(
                back.predict_proba(&w).unwrap().to_bits(),
                model.predict_proba(&w).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn logistic_round_trip() {
        round_trip(ModelSpec::logistic());
    }

    #[test]
    fn recurrent_round_trip() {
        round_trip(ModelSpec::recurrent());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let data = random_windows(10, 3);
        let model = train(
            &data,
            &ModelSpec::logistic(),
            &TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        buf.truncate(buf.len() / 2);
        assert!(matches!(read_model(&buf[..]), Err(Error::Corrupt(_))));
    }

    #[test]
    fn version_mismatch() {
        let data = random_windows(10, 3);
        let model = train(
            &data,
            &ModelSpec::logistic(),
            &TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        let text = String::from_utf8(buf)
            .unwrap()
            .replace("\"version\":1", "\"version\":7");
        assert!(matches!(
            read_model(text.as_bytes()),
            Err(Error::Version {
                found: 7,
                expected: 1
            })
        ));
    }

    #[test]
    fn tampered_shape_is_corrupt() {
        let data = random_windows(10, 3);
        let model = train(
            &data,
            &ModelSpec::logistic(),
            &TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        let text = String::from_utf8(buf)
            .unwrap()
            .replace("\"shape\":[1,18]", "\"shape\":[1,17]");
        assert!(matches!(
            read_model(text.as_bytes()),
            Err(Error::Corrupt(_))
        ));
        assert!(matches!(
            read_model(&b"{\"format\":\"other\"}"[..]),
            Err(Error::Corrupt(_))
        ));
    }
}
