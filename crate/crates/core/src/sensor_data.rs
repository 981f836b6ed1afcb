//! Sensor sample schema and the session CSV format.
//!
//! A session CSV carries one row per 1 Hz sample. Columns are located by
//! header name, so their order is free:
//!
//! ```text
//! timestamp,rssi,gps_vertical_acc,gps_horizontal_acc,gps_speed,magnet_x,magnet_y,magnet_z,pressure,indoor
//! ```
//!
//! The three magnetometer components may be replaced by a single
//! `magnet_total` column. `indoor` is optional; an empty cell means the
//! sample is unlabeled. A GPS accuracy or speed of `-1` means "no fix".

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of features fed to the classifier per timestep.
pub const FEATURE_COUNT: usize = 6;

/// Feature names in the order produced by [`SensorReading::features`].
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "pressure",
    "gps_vertical_acc",
    "gps_horizontal_acc",
    "gps_speed",
    "rssi",
    "magnet_total",
];

/// Sensor value reported when the GPS has no fix.
pub const NO_FIX: f64 = -1.0;

/// Gaps between consecutive samples longer than this are reported.
pub const MAX_EXPECTED_GAP: i64 = 2;

/// Total magnetic field strength from the three magnetometer axes.
pub fn magnet_total(x: f64, y: f64, z: f64) -> Result<f64> {
    if !(x.is_finite() && y.is_finite() && z.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite magnetometer reading ({x}, {y}, {z})"
        )));
    }
    Ok((x * x + y * y + z * z).sqrt())
}

/// Unit of the pressure column in an input file. Sessions always store hPa.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PressureUnit {
    #[default]
    #[serde(rename = "hPa", alias = "hpa")]
    HectoPascal,
    #[serde(rename = "kPa", alias = "kpa")]
    KiloPascal,
}

impl PressureUnit {
    pub fn to_hpa(self, value: f64) -> f64 {
        match self {
            PressureUnit::HectoPascal => value,
            PressureUnit::KiloPascal => value * 10.0,
        }
    }
}

impl FromStr for PressureUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hpa" => Ok(PressureUnit::HectoPascal),
            "kpa" => Ok(PressureUnit::KiloPascal),
            other => Err(Error::InvalidInput(format!(
                "unknown pressure unit `{other}` (expected hPa or kPa)"
            ))),
        }
    }
}

/// Indoor/outdoor ground-truth label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IoLabel {
    Outdoor = 0,
    Indoor = 1,
}

impl IoLabel {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(IoLabel::Outdoor),
            1 => Some(IoLabel::Indoor),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }
}

/// One 1 Hz sample of the monitored signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    /// Seconds since session start.
    pub timestamp: i64,
    /// Barometric pressure in hPa.
    pub pressure: f64,
    pub gps_vertical_accuracy: f64,
    pub gps_horizontal_accuracy: f64,
    /// m/s, or [`NO_FIX`].
    pub gps_speed: f64,
    /// dBm.
    pub rssi: f64,
    /// Magnetometer axes in microtesla, when the source provided them.
    pub magnet: Option<[f64; 3]>,
    pub magnet_total: f64,
    pub indoor_label: Option<IoLabel>,
}

impl SensorReading {
    /// Builds a reading from the three magnetometer components, deriving the total.
    #[allow(clippy::too_many_arguments)]
    pub fn from_components(
        timestamp: i64,
        pressure: f64,
        gps_vertical_accuracy: f64,
        gps_horizontal_accuracy: f64,
        gps_speed: f64,
        rssi: f64,
        magnet: [f64; 3],
        indoor_label: Option<IoLabel>,
    ) -> Result<Self> {
        let total = magnet_total(magnet[0], magnet[1], magnet[2])?;
        Ok(Self {
            timestamp,
            pressure,
            gps_vertical_accuracy,
            gps_horizontal_accuracy,
            gps_speed,
            rssi,
            magnet: Some(magnet),
            magnet_total: total,
            indoor_label,
        })
    }

    /// The six classifier features: P, GV, GH, GS, rssi, M.
    pub fn features(&self) -> [f64; FEATURE_COUNT] {
        [
            self.pressure,
            self.gps_vertical_accuracy,
            self.gps_horizontal_accuracy,
            self.gps_speed,
            self.rssi,
            self.magnet_total,
        ]
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let values = [
            self.pressure,
            self.gps_vertical_accuracy,
            self.gps_horizontal_accuracy,
            self.gps_speed,
            self.rssi,
            self.magnet_total,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err("non-finite sensor value".into());
        }
        if self.pressure <= 0.0 {
            return Err(format!("pressure must be positive, got {}", self.pressure));
        }
        if self.gps_speed != NO_FIX && self.gps_speed < 0.0 {
            return Err(format!(
                "gps_speed must be -1 or non-negative, got {}",
                self.gps_speed
            ));
        }
        if let Some([x, y, z]) = self.magnet {
            let total = magnet_total(x, y, z).map_err(|e| e.to_string())?;
            if total != self.magnet_total {
                return Err(format!(
                    "magnet_total {} disagrees with components ({total})",
                    self.magnet_total
                ));
            }
        }
        Ok(())
    }
}

/// An ordered, validated sequence of readings from one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSession {
    pub session_id: String,
    pub metadata: Option<String>,
    readings: Vec<SensorReading>,
}

impl SensorSession {
    /// Validates reading invariants and timestamp ordering.
    pub fn new(session_id: impl Into<String>, readings: Vec<SensorReading>) -> Result<Self> {
        for (row, r) in readings.iter().enumerate() {
            r.validate().map_err(|reason| Error::Row { row, reason })?;
        }
        if let Some(row) = readings
            .windows(2)
            .position(|w| w[1].timestamp <= w[0].timestamp)
        {
            return Err(Error::Ordering { row: row + 1 });
        }
        Ok(Self {
            session_id: session_id.into(),
            metadata: None,
            readings,
        })
    }

    pub fn with_metadata(mut self, metadata: impl Into<String>) -> Self {
        self.metadata = Some(metadata.into());
        self
    }

    pub fn readings(&self) -> &[SensorReading] {
        &self.readings
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn pressures(&self) -> Vec<f64> {
        self.readings.iter().map(|r| r.pressure).collect()
    }

    /// Ground-truth labels, if every reading carries one.
    pub fn labels(&self) -> Option<Vec<IoLabel>> {
        self.readings.iter().map(|r| r.indoor_label).collect()
    }

    pub(crate) fn ensure_non_empty(&self) -> Result<()> {
        if self.readings.is_empty() {
            return Err(Error::Empty(format!(
                "session `{}` has no readings",
                self.session_id
            )));
        }
        Ok(())
    }
}

/// Non-fatal findings from parsing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseReport {
    /// `(row, seconds)` for every gap longer than [`MAX_EXPECTED_GAP`].
    pub gaps: Vec<(usize, i64)>,
}

const COL_TIMESTAMP: &str = "timestamp";
const COL_RSSI: &str = "rssi";
const COL_GV: &str = "gps_vertical_acc";
const COL_GH: &str = "gps_horizontal_acc";
const COL_GS: &str = "gps_speed";
const COL_MX: &str = "magnet_x";
const COL_MY: &str = "magnet_y";
const COL_MZ: &str = "magnet_z";
const COL_MTOTAL: &str = "magnet_total";
const COL_PRESSURE: &str = "pressure";
const COL_INDOOR: &str = "indoor";

pub fn parse_session<R: Read>(source: R, unit: PressureUnit) -> Result<SensorSession> {
    parse_session_with_report(source, unit).map(|(s, _)| s)
}

pub fn parse_session_with_report<R: Read>(
    source: R,
    unit: PressureUnit,
) -> Result<(SensorSession, ParseReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Schema("missing header row".into()));
    }
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let require = |name: &'static str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("missing required column `{name}`")))
    };

    let ts = require(COL_TIMESTAMP)?;
    let rssi = require(COL_RSSI)?;
    let gv = require(COL_GV)?;
    let gh = require(COL_GH)?;
    let gs = require(COL_GS)?;
    let pressure = require(COL_PRESSURE)?;
    let components = match (index.get(COL_MX), index.get(COL_MY), index.get(COL_MZ)) {
        (Some(&x), Some(&y), Some(&z)) => Some([x, y, z]),
        _ => None,
    };
    let total = index.get(COL_MTOTAL).copied();
    if components.is_none() && total.is_none() {
        return Err(Error::Schema(format!(
            "missing required column `{COL_MX}` (or `{COL_MTOTAL}`)"
        )));
    }
    let indoor = index.get(COL_INDOOR).copied();

    let mut readings = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let field = |col: usize| record.get(col).unwrap_or("");
        let number = |col: usize| -> Result<f64> {
            let cell = field(col);
            cell.parse::<f64>().map_err(|_| Error::Row {
                row,
                reason: format!(
                    "column `{}`: cannot parse `{cell}` as a number",
                    &headers[col]
                ),
            })
        };

        let timestamp = number(ts)?;
        if timestamp.fract() != 0.0 {
            return Err(Error::Row {
                row,
                reason: format!("timestamp `{timestamp}` is not a whole second"),
            });
        }
        let magnet = match components {
            Some([x, y, z]) if !field(x).is_empty() || total.is_none() => {
                Some([number(x)?, number(y)?, number(z)?])
            }
            _ => None,
        };
        let magnet_total_value = match (magnet, total) {
            (Some([x, y, z]), _) => magnet_total(x, y, z).map_err(|e| Error::Row {
                row,
                reason: e.to_string(),
            })?,
            (None, Some(col)) => number(col)?,
            (None, None) => unreachable!("schema check guarantees a magnetometer column"),
        };
        let label = match indoor.map(field) {
            None | Some("") => None,
            Some("0") => Some(IoLabel::Outdoor),
            Some("1") => Some(IoLabel::Indoor),
            Some(other) => {
                return Err(Error::Row {
                    row,
                    reason: format!("indoor label must be 0, 1 or empty, got `{other}`"),
                })
            }
        };
        readings.push(SensorReading {
            timestamp: timestamp as i64,
            pressure: unit.to_hpa(number(pressure)?),
            gps_vertical_accuracy: number(gv)?,
            gps_horizontal_accuracy: number(gh)?,
            gps_speed: number(gs)?,
            rssi: number(rssi)?,
            magnet,
            magnet_total: magnet_total_value,
            indoor_label: label,
        });
    }
    if readings.is_empty() {
        return Err(Error::Schema("no data rows".into()));
    }

    let report = ParseReport {
        gaps: readings
            .windows(2)
            .enumerate()
            .filter_map(|(i, w)| {
                let gap = w[1].timestamp - w[0].timestamp;
                (gap > MAX_EXPECTED_GAP).then_some((i + 1, gap))
            })
            .collect(),
    };
    Ok((SensorSession::new("", readings)?, report))
}

/// Writes a session in the canonical column order. Pressure is written in hPa.
pub fn write_session<W: Write>(session: &SensorSession, sink: W) -> Result<()> {
    let with_components = session.readings.iter().all(|r| r.magnet.is_some());
    let mut writer = csv::Writer::from_writer(sink);
    let mut header = vec![COL_TIMESTAMP, COL_RSSI, COL_GV, COL_GH, COL_GS];
    if with_components {
        header.extend([COL_MX, COL_MY, COL_MZ]);
    } else {
        header.extend([COL_MX, COL_MY, COL_MZ, COL_MTOTAL]);
    }
    header.extend([COL_PRESSURE, COL_INDOOR]);
    writer.write_record(&header)?;

    for r in &session.readings {
        let mut row = vec![
            r.timestamp.to_string(),
            r.rssi.to_string(),
            r.gps_vertical_accuracy.to_string(),
            r.gps_horizontal_accuracy.to_string(),
            r.gps_speed.to_string(),
        ];
        match r.magnet {
            Some(m) => row.extend(m.iter().map(f64::to_string)),
            None => row.extend(std::iter::repeat_n(String::new(), 3)),
        }
        if !with_components {
            row.push(r.magnet_total.to_string());
        }
        row.push(r.pressure.to_string());
        row.push(
            r.indoor_label
                .map(|l| l.bit().to_string())
                .unwrap_or_default(),
        );
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a session file, using the file stem as the session id.
pub fn read_session_file(path: impl AsRef<Path>, unit: PressureUnit) -> Result<SensorSession> {
    let path = path.as_ref();
    let mut session = parse_session(File::open(path)?, unit)?;
    session.session_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(session)
}

pub fn write_session_file(session: &SensorSession, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    write_session(session, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "timestamp,rssi,gps_vertical_acc,gps_horizontal_acc,gps_speed,magnet_total,pressure,indoor\n\
                          1,-82,76.05,1414,-1,1015.3,100.7,0\n\
                          2,-82,48,30,0.36,1019.4,100.3,1\n\
                          3,-82,48,30,0.36,1019.4,100.2,1\n";

    #[test]
    fn magnet_total_simple_cases() {
        assert_eq!(magnet_total(0.0, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(magnet_total(3.0, 4.0, 12.0).unwrap(), 13.0);
        assert!(magnet_total(f64::NAN, 0.0, 0.0).is_err());
        assert!(magnet_total(f64::INFINITY, 0.0, 0.0).is_err());
    }

    #[test]
    fn parses_sample_table_row() {
        let session = parse_session(SAMPLE.as_bytes(), PressureUnit::HectoPascal).unwrap();
        assert_eq!(session.len(), 3);
        let r = &session.readings()[1];
        assert_eq!(r.timestamp, 2);
        assert_eq!(r.rssi, -82.0);
        assert_eq!(r.gps_vertical_accuracy, 48.0);
        assert_eq!(r.gps_horizontal_accuracy, 30.0);
        assert_eq!(r.gps_speed, 0.36);
        assert_eq!(r.magnet_total, 1019.4);
        assert_eq!(r.pressure, 100.3);
        assert_eq!(r.indoor_label, Some(IoLabel::Indoor));
        assert_eq!(r.magnet, None);
    }

    #[test]
    fn kpa_input_is_scaled_to_hpa() {
        let session = parse_session(SAMPLE.as_bytes(), PressureUnit::KiloPascal).unwrap();
        assert_eq!(session.readings()[0].pressure, 1007.0);
    }

    #[test]
    fn empty_file_is_a_schema_error() {
        assert!(matches!(
            parse_session("".as_bytes(), PressureUnit::HectoPascal),
            Err(Error::Schema(_))
        ));
        let header_only =
            "timestamp,rssi,gps_vertical_acc,gps_horizontal_acc,gps_speed,magnet_total,pressure\n";
        assert!(matches!(
            parse_session(header_only.as_bytes(), PressureUnit::HectoPascal),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn missing_column_is_named() {
        let csv =
            "timestamp,rssi,gps_vertical_acc,gps_speed,magnet_total,pressure\n1,-80,5,1,50,1000\n";
        match parse_session(csv.as_bytes(), PressureUnit::HectoPascal) {
            Err(Error::Schema(msg)) => assert!(msg.contains("gps_horizontal_acc"), "{msg}"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn non_monotonic_timestamps_report_first_offender() {
        let csv =
            "timestamp,rssi,gps_vertical_acc,gps_horizontal_acc,gps_speed,magnet_total,pressure\n\
                   1,-80,5,5,1,50,1000\n2,-80,5,5,1,50,1000\n2,-80,5,5,1,50,1000\n";
        assert!(matches!(
            parse_session(csv.as_bytes(), PressureUnit::HectoPascal),
            Err(Error::Ordering { row: 2 })
        ));
    }

    #[test]
    fn unparseable_field_is_rejected() {
        let csv = "timestamp,rssi,gps_vertical_acc,gps_horizontal_acc,gps_speed,magnet_total,pressure\n1,-80,five,5,1,50,1000\n";
        assert!(matches!(
            parse_session(csv.as_bytes(), PressureUnit::HectoPascal),
            Err(Error::Row { row: 0, .. })
        ));
    }

    #[test]
    fn shuffled_columns_parse_identically() {
        let shuffled = "indoor,pressure,timestamp,magnet_total,gps_speed,rssi,gps_horizontal_acc,gps_vertical_acc\n\
                        0,100.7,1,1015.3,-1,-82,1414,76.05\n\
                        1,100.3,2,1019.4,0.36,-82,30,48\n\
                        1,100.2,3,1019.4,0.36,-82,30,48\n";
        let a = parse_session(SAMPLE.as_bytes(), PressureUnit::HectoPascal).unwrap();
        let b = parse_session(shuffled.as_bytes(), PressureUnit::HectoPascal).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn components_derive_total() {
        let csv = "timestamp,rssi,gps_vertical_acc,gps_horizontal_acc,gps_speed,magnet_x,magnet_y,magnet_z,pressure,indoor\n\
                   0,-80,5,5,1,3,4,12,1000,\n";
        let s = parse_session(csv.as_bytes(), PressureUnit::HectoPascal).unwrap();
        assert_eq!(s.readings()[0].magnet_total, 13.0);
        assert_eq!(s.readings()[0].indoor_label, None);
    }

    #[test]
    fn gaps_are_reported() {
        let csv =
            "timestamp,rssi,gps_vertical_acc,gps_horizontal_acc,gps_speed,magnet_total,pressure\n\
                   0,-80,5,5,1,50,1000\n1,-80,5,5,1,50,1000\n5,-80,5,5,1,50,1000\n";
        let (_, report) =
            parse_session_with_report(csv.as_bytes(), PressureUnit::HectoPascal).unwrap();
        assert_eq!(report.gaps, vec![(2, 4)]);
    }

    #[test]
    fn session_rejects_invalid_readings() {
        let mut r =
            SensorReading::from_components(0, 1000.0, 5.0, 5.0, 1.0, -80.0, [1.0, 2.0, 2.0], None)
                .unwrap();
        r.gps_speed = -0.5;
        assert!(SensorSession::new("x", vec![r.clone()]).is_err());
        r.gps_speed = NO_FIX;
        r.pressure = 0.0;
        assert!(SensorSession::new("x", vec![r]).is_err());
    }

    #[test]
    fn unlabeled_round_trip() {
        let readings = (0..3)
            .map(|t| {
                SensorReading::from_components(
                    t,
                    1000.5 - t as f64 * 0.1,
                    5.0,
                    7.5,
                    NO_FIX,
                    -81.0,
                    [20.0, -3.5, 41.25],
                    None,
                )
                .unwrap()
            })
            .collect();
        let session = SensorSession::new("", readings).unwrap();
        let mut buf = Vec::new();
        write_session(&session, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(','));
        let back = parse_session(buf.as_slice(), PressureUnit::HectoPascal).unwrap();
        assert_eq!(back, session);
        assert!(back.labels().is_none());
    }

    #[test]
    fn total_only_round_trip() {
        let session = parse_session(SAMPLE.as_bytes(), PressureUnit::HectoPascal).unwrap();
        let mut buf = Vec::new();
        write_session(&session, &mut buf).unwrap();
        assert_eq!(
            parse_session(buf.as_slice(), PressureUnit::HectoPascal).unwrap(),
            session
        );
    }
}
