//! `floorlevel`: simulate sensor logs, train indoor/outdoor classifiers and
//! predict floor levels from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use floorlevel::sensor_data::PressureUnit;
use floorlevel::BuildingType;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "floorlevel",
    version,
    about = "Floor-level estimation from smartphone sensor logs"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Unit of the pressure column in input files (hPa or kPa).
    #[arg(long, global = true)]
    pressure_unit: Option<PressureUnit>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate sessions with ground-truth sidecars.
    Simulate {
        /// Building profile as JSON.
        #[arg(long, conflicts_with = "building")]
        profile: Option<PathBuf>,
        /// Built-in profile: rockefeller, uris, mudd, noco, social-work, or survey for all five.
        #[arg(long)]
        building: Option<String>,
        /// Number of sessions. Defaults to the survey trial counts for `survey`.
        #[arg(long)]
        n: Option<usize>,
        /// Visit this floor every time instead of a random one.
        #[arg(long)]
        floor: Option<u32>,
        /// Ground-level indoor/outdoor walks for classifier training.
        #[arg(long, conflicts_with_all = ["profile", "building", "floor"])]
        io: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier on every labeled session CSV in a directory.
    Train {
        data_dir: PathBuf,
        /// logistic, feedforward or recurrent.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the per-reading indoor/outdoor series of a session.
    Classify {
        session: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find transitions in an indoor/outdoor series.
    Detect {
        series: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the similarity of every window to both masks.
        #[arg(long)]
        jaccard: Option<PathBuf>,
    },
    /// Predict the floor a session ends on.
    Predict {
        session: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        cluster_model: Option<PathBuf>,
        #[arg(long, default_value = "unknown")]
        building_type: BuildingType,
    },
    /// Cluster the heights of repeated visits to one building.
    Cluster {
        sessions_dir: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        building: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions on simulated trials.
    Evaluate {
        trials_dir: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        cluster_model: Option<PathBuf>,
        /// Use this building type for every trial instead of the recorded one.
        #[arg(long)]
        building_type: Option<BuildingType>,
        /// Take each building's floor height from the profiles saved by `simulate`.
        #[arg(long, conflicts_with = "cluster_model")]
        per_building: bool,
        /// Report JSON; the per-trial CSV goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), std::env::vars())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(unit) = cli.pressure_unit {
        cfg.pressure_unit = match unit {
            PressureUnit::HectoPascal => "hPa".into(),
            PressureUnit::KiloPascal => "kPa".into(),
        };
    }
    if let Command::Train {
        kind: Some(kind), ..
    } = &cli.command
    {
        cfg.model_kind = kind.clone();
    }
    let (model, cluster_model) = match &cli.command {
        Command::Classify { model, .. } | Command::Cluster { model, .. } => (model.clone(), None),
        Command::Predict {
            model,
            cluster_model,
            ..
        }
        | Command::Evaluate {
            model,
            cluster_model,
            ..
        } => (model.clone(), cluster_model.clone()),
        _ => (None, None),
    };
    if model.is_some() {
        cfg.model = model;
    }
    if cluster_model.is_some() {
        cfg.cluster_model = cluster_model;
    }
    cfg.validate()?;
    commands::dispatch(cli.command, &cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error_code(&e))
        }
    }
}

/// 2 when training diverged, 1 for every other failure.
fn error_code(e: &anyhow::Error) -> u8 {
    let diverged = e.chain().any(|c| {
        matches!(
            c.downcast_ref::<floorlevel::Error>(),
            Some(floorlevel::Error::TrainingDiverged { .. })
        )
    });
    if diverged {
        2
    } else {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn divergence_has_its_own_code() {
        let diverged: anyhow::Result<()> = Err(floorlevel::Error::TrainingDiverged {
            epoch: 3,
            reason: "non-finite loss".into(),
        }
        .into());
        assert_eq!(error_code(&diverged.context("training").unwrap_err()), 2);
        let other: anyhow::Error = floorlevel::Error::NoEntryObserved.into();
        assert_eq!(error_code(&other), 1);
        assert_eq!(error_code(&anyhow::anyhow!("bad path")), 1);
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "floorlevel",
            "--seed",
            "7",
            "predict",
            "s.csv",
            "--building-type",
            "office",
        ])
        .unwrap();
        assert_eq!(cli.seed, Some(7));
        assert!(matches!(
            cli.command,
            Command::Predict {
                building_type: BuildingType::Office,
                ..
            }
        ));
        assert!(Cli::try_parse_from([
            "floorlevel",
            "predict",
            "s.csv",
            "--building-type",
            "castle"
        ])
        .is_err());
    }
}
