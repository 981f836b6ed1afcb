use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use floorlevel::evaluation::{evaluate_trials, Resolution};
use floorlevel::floor::{cluster_heights_with_radius, trace_floor};
use floorlevel::io_classifier::{load_model, save_model, train, LabelPredictor};
use floorlevel::sensor_data::read_session_file;
use floorlevel::simulator::{
    derive_seed, simulate_io_dataset_with_truth, simulate_trial, truth_path_for, write_trial,
    BuildingProfile, GroundTruth,
};
use floorlevel::transition::{
    detect_transitions, jaccard_trace, suppress_short_runs, write_jaccard_trace,
};
use floorlevel::windowing::{make_windows, split_train_val};
use floorlevel::{
    BuildingHeuristics, BuildingType, FloorClusterModel, IoPredictor, IoSeries, SensorSession,
};

use crate::config::RunConfig;
use crate::Command;

/// Exit status for a valid prediction of "outdoors".
const EXIT_OUTDOORS: u8 = 3;
const PROFILE_SUFFIX: &str = ".building.json";

pub fn dispatch(command: Command, cfg: &RunConfig) -> Result<ExitCode> {
    match command {
        Command::Simulate {
            profile,
            building,
            n,
            floor,
            io,
            out,
        } => simulate(
            profile.as_deref(),
            building.as_deref(),
            n,
            floor,
            io,
            &out,
            cfg,
        ),
        Command::Train { data_dir, out, .. } => train_cmd(&data_dir, &out, cfg),
        Command::Classify { session, out, .. } => classify(&session, out.as_deref(), cfg),
        Command::Detect {
            series,
            out,
            jaccard,
        } => detect(&series, out.as_deref(), jaccard.as_deref(), cfg),
        Command::Predict {
            session,
            building_type,
            ..
        } => predict(&session, building_type, cfg),
        Command::Cluster {
            sessions_dir,
            building,
            out,
            ..
        } => cluster(&sessions_dir, building, &out, cfg),
        Command::Evaluate {
            trials_dir,
            building_type,
            per_building,
            out,
            ..
        } => evaluate(&trials_dir, building_type, per_building, &out, cfg),
    }
}

fn preset(name: &str) -> Result<BuildingProfile> {
    Ok(match name.to_ascii_lowercase().replace('_', "-").as_str() {
        "rockefeller" => BuildingProfile::rockefeller(),
        "uris" => BuildingProfile::uris(),
        "mudd" => BuildingProfile::mudd(),
        "noco" => BuildingProfile::noco(),
        "social-work" => BuildingProfile::social_work(),
        other => bail!("unknown building `{other}` (expected rockefeller, uris, mudd, noco, social-work or survey)"),
    })
}

fn slug(name: &str) -> String {
    name.to_ascii_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("-")
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut w = BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    );
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn print_json(value: &serde_json::Value) {
    println!("{value}");
}

/// Session CSVs in `dir`, sorted by name.
fn session_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot read directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "csv"));
    files.sort();
    if files.is_empty() {
        bail!("no session CSV files in {}", dir.display());
    }
    Ok(files)
}

fn read_sessions(files: &[PathBuf], cfg: &RunConfig) -> Result<Vec<SensorSession>> {
    let unit = cfg.pressure_unit()?;
    files
        .par_iter()
        .map(|p| {
            read_session_file(p, unit)
                .with_context(|| format!("cannot load session {}", p.display()))
        })
        .collect()
}

/// The trained model from the config, or the session's own labels when none is given.
fn predictor(cfg: &RunConfig) -> Result<Box<dyn IoPredictor>> {
    match &cfg.model {
        Some(p) => {
            Ok(Box::new(load_model(p).with_context(|| {
                format!("cannot load model {}", p.display())
            })?))
        }
        None => Ok(Box::new(LabelPredictor)),
    }
}

fn cluster_model(cfg: &RunConfig) -> Result<Option<FloorClusterModel>> {
    let Some(p) = &cfg.cluster_model else {
        return Ok(None);
    };
    let text = fs::read_to_string(p)
        .with_context(|| format!("cannot read cluster model {}", p.display()))?;
    let model: FloorClusterModel = serde_json::from_str(&text)
        .with_context(|| format!("invalid cluster model {}", p.display()))?;
    model
        .validate()
        .with_context(|| format!("invalid cluster model {}", p.display()))?;
    Ok(Some(model))
}

fn simulate(
    profile: Option<&Path>,
    building: Option<&str>,
    n: Option<usize>,
    floor: Option<u32>,
    io: bool,
    out: &Path,
    cfg: &RunConfig,
) -> Result<ExitCode> {
    if n == Some(0) {
        bail!("invalid parameter `n`: must be at least 1");
    }
    let sim = cfg.sim_config();
    sim.validate()?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;

    let trials: Vec<(SensorSession, GroundTruth)> = if io {
        simulate_io_dataset_with_truth(n.context("`--n` is required with `--io`")?, &sim)?
    } else {
        let plan: Vec<(BuildingProfile, usize)> = match (profile, building) {
            (Some(p), _) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("cannot read profile {}", p.display()))?;
                let profile: BuildingProfile = serde_json::from_str(&text)
                    .with_context(|| format!("invalid profile {}", p.display()))?;
                profile.validate()?;
                vec![(profile, n.context("`--n` is required")?)]
            }
            (None, Some(b)) if b.eq_ignore_ascii_case("survey") => match n {
                Some(_) => bail!("`--n` cannot be combined with `--building survey`"),
                None => BuildingProfile::survey(),
            },
            (None, Some(b)) => vec![(preset(b)?, n.context("`--n` is required")?)],
            (None, None) => bail!("one of `--profile`, `--building` or `--io` is required"),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut jobs = Vec::new();
        for (b, (profile, count)) in plan.iter().enumerate() {
            write_json(
                &out.join(format!("{}{PROFILE_SUFFIX}", slug(&profile.name))),
                profile,
            )?;
            let base = derive_seed(cfg.seed, b as u64);
            for i in 0..*count {
                let f = floor.unwrap_or_else(|| rng.gen_range(1..=profile.floors()));
                jobs.push((b, f, derive_seed(base, i as u64)));
            }
        }
        jobs.par_iter()
            .map(|&(b, f, seed)| simulate_trial(&plan[b].0, f, &sim.clone().with_seed(seed)))
            .collect::<floorlevel::Result<_>>()?
    };
    trials
        .par_iter()
        .try_for_each(|(s, t)| write_trial(out, s, t))?;
    print_json(&json!({ "sessions": trials.len(), "out": out.display().to_string() }));
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(data_dir: &Path, out: &Path, cfg: &RunConfig) -> Result<ExitCode> {
    let sessions = read_sessions(&session_files(data_dir)?, cfg)?;
    let mut windows = Vec::new();
    for s in &sessions {
        windows.extend(
            make_windows(s, cfg.window).with_context(|| format!("session {}", s.session_id))?,
        );
    }
    let (train_set, val_set) = if cfg.validation_fraction > 0.0 {
        split_train_val(&windows, 1.0 - cfg.validation_fraction, cfg.seed)?
    } else {
        (windows, Vec::new())
    };
    let spec = cfg.model_spec()?;
    let model = train(&train_set, &spec, &cfg.train_config())?;
    save_model(&model, out).with_context(|| format!("cannot write model {}", out.display()))?;

    let history_path = out.with_extension("history.csv");
    let mut w = BufWriter::new(File::create(&history_path)?);
    writeln!(w, "epoch,loss,accuracy")?;
    for e in model.history() {
        writeln!(w, "{},{},{}", e.epoch, e.loss, e.accuracy)?;
    }
    w.flush()?;

    let last = model.history().last();
    let val_accuracy = if val_set.is_empty() {
        None
    } else {
        Some(model.accuracy(&val_set)?)
    };
    print_json(&json!({
        "model": out.display().to_string(),
        "history": history_path.display().to_string(),
        "kind": spec.kind.as_str(),
        "parameters": model.parameter_count(),
        "train_windows": train_set.len(),
        "train_loss": last.map(|e| e.loss),
        "train_accuracy": last.map(|e| e.accuracy),
        "validation_windows": val_set.len(),
        "validation_accuracy": val_accuracy,
    }));
    Ok(ExitCode::SUCCESS)
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn classify(session: &Path, out: Option<&Path>, cfg: &RunConfig) -> Result<ExitCode> {
    let s = read_sessions(&[session.to_path_buf()], cfg)?.remove(0);
    let series = predictor(cfg)?.predict_series(&s)?;
    series.write_csv(sink(out)?)?;
    Ok(ExitCode::SUCCESS)
}

fn detect(
    series: &Path,
    out: Option<&Path>,
    jaccard: Option<&Path>,
    cfg: &RunConfig,
) -> Result<ExitCode> {
    let file = File::open(series).with_context(|| format!("cannot open {}", series.display()))?;
    let raw =
        IoSeries::read_csv(file).with_context(|| format!("invalid series {}", series.display()))?;
    let pipeline = cfg.pipeline()?;
    let cleaned = suppress_short_runs(&raw, pipeline.min_run);
    let found = detect_transitions(&cleaned, &pipeline.masks, pipeline.merge_gap)?;
    if let Some(p) = jaccard {
        write_jaccard_trace(&jaccard_trace(&cleaned, &pipeline.masks)?, sink(Some(p))?)?;
    }
    found.write_csv(sink(out)?)?;
    Ok(ExitCode::SUCCESS)
}

fn predict(session: &Path, building: BuildingType, cfg: &RunConfig) -> Result<ExitCode> {
    let s = read_sessions(&[session.to_path_buf()], cfg)?.remove(0);
    let model = predictor(cfg)?;
    let clusters = cluster_model(cfg)?;
    let trace = trace_floor(
        &s,
        model.as_ref(),
        clusters.as_ref(),
        &cfg.heuristics(),
        building,
        &cfg.pipeline()?,
    )?;
    println!("{}", serde_json::to_string(&trace.prediction)?);
    Ok(if trace.prediction.is_outdoors() {
        ExitCode::from(EXIT_OUTDOORS)
    } else {
        ExitCode::SUCCESS
    })
}

fn cluster(dir: &Path, building: Option<String>, out: &Path, cfg: &RunConfig) -> Result<ExitCode> {
    let files = session_files(dir)?;
    let sessions = read_sessions(&files, cfg)?;
    let model = predictor(cfg)?;
    let pipeline = cfg.pipeline()?;
    let heuristics = cfg.heuristics();
    let heights: Vec<Option<f64>> = sessions
        .par_iter()
        .zip(&files)
        .map(|(s, p)| {
            let trace = trace_floor(
                s,
                model.as_ref(),
                None,
                &heuristics,
                BuildingType::Unknown,
                &pipeline,
            )
            .with_context(|| format!("session {}", p.display()))?;
            Ok(trace.height.map(|h| h.m_delta))
        })
        .collect::<Result<_>>()?;
    let offsets: Vec<f64> = heights.iter().flatten().copied().collect();
    if offsets.is_empty() {
        bail!("no session in {} ends indoors", dir.display());
    }
    let mut clusters = cluster_heights_with_radius(&offsets, cfg.cluster_radius)?;
    if let Some(b) = building {
        clusters = clusters.with_building(b);
    }
    write_json(out, &clusters)?;
    print_json(&json!({
        "sessions": sessions.len(),
        "skipped_outdoors": heights.len() - offsets.len(),
        "clusters": clusters.len(),
        "representatives": clusters.representatives(),
        "interfloor_distances": clusters.interfloor_distances(),
    }));
    Ok(ExitCode::SUCCESS)
}

/// Per-building floor heights from the profiles `simulate` wrote into `dir`.
fn profile_heights(dir: &Path) -> Result<HashMap<String, f64>> {
    let mut out = HashMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with(PROFILE_SUFFIX))
        {
            let profile: BuildingProfile = serde_json::from_str(&fs::read_to_string(&path)?)
                .with_context(|| format!("invalid profile {}", path.display()))?;
            profile.validate()?;
            out.insert(profile.name.clone(), profile.conditional_m_hat());
        }
    }
    if out.is_empty() {
        bail!("no `*{PROFILE_SUFFIX}` profiles in {}", dir.display());
    }
    Ok(out)
}

fn evaluate(
    dir: &Path,
    building_type: Option<BuildingType>,
    per_building: bool,
    out: &Path,
    cfg: &RunConfig,
) -> Result<ExitCode> {
    let files = session_files(dir)?;
    let sessions = read_sessions(&files, cfg)?;
    let trials: Vec<(SensorSession, GroundTruth)> = sessions
        .into_iter()
        .zip(&files)
        .map(|(s, p)| {
            let tp = truth_path_for(p)?;
            let truth = GroundTruth::read_json(&tp)
                .with_context(|| format!("cannot load ground truth {}", tp.display()))?;
            Ok((s, truth))
        })
        .collect::<Result<_>>()?;
    let heights = if per_building {
        Some(profile_heights(dir)?)
    } else {
        None
    };
    if let Some(h) = &heights {
        if let Some(t) = trials
            .iter()
            .find(|(_, t)| t.building.as_ref().is_none_or(|b| !h.contains_key(b)))
        {
            return Err(anyhow!(
                "trial {} has no saved building profile",
                t.1.session_id
            ));
        }
    }
    let clusters = cluster_model(cfg)?;
    let model = predictor(cfg)?;
    let heuristics = cfg.heuristics();
    let resolve = |t: &GroundTruth| {
        let kind = building_type.or(t.building_type).unwrap_or_default();
        let h = match (&heights, &t.building) {
            (Some(map), Some(b)) => BuildingHeuristics::flat(map[b]),
            _ => heuristics,
        };
        Resolution {
            heuristics: h,
            building_type: kind,
            cluster_model: clusters.clone(),
        }
    };
    let report = evaluate_trials(&trials, model.as_ref(), resolve, &cfg.pipeline()?)?;
    write_json(out, &report)?;
    let csv_path = out.with_extension("csv");
    let mut w = BufWriter::new(File::create(&csv_path)?);
    report.write_csv(&mut w)?;
    w.flush()?;
    print_json(&json!({
        "trials": report.len(),
        "exact": report.exact,
        "within_one": report.within_one,
        "beyond_one": report.beyond_one,
        "classifier_accuracy": report.classifier_accuracy,
        "report": out.display().to_string(),
        "csv": csv_path.display().to_string(),
    }));
    Ok(ExitCode::SUCCESS)
}
