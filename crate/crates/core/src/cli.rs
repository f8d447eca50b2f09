//! Command-line entry point: `generate | project | train | eval |
//! predict`. Exit codes: 0 success, 1 usage error, 2 data error,
//! 3 numeric failure.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data::{load_cloud, load_image_ppm, subset_fraction, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::evaluation::{
    accuracy_curve, classification_accuracy, perplexity_report, save_curves_csv,
    threshold_accuracy, Target,
};
use crate::models::{ModelInput, ModelKind};
use crate::pointcloud::{pcm_project, random_downsample, save_depthmap_pgm};
use crate::training::{
    assign_splits, prepare_manifest, save_history_csv, train, Checkpoint, PreparedSample,
};

const USAGE: &str = "driveflow — driving-policy learning from images and point clouds

USAGE:
    driveflow <COMMAND> [OPTIONS]

COMMANDS:
    generate   Write a synthetic dataset and its manifest
    project    Project a point cloud to a 16-bit depth-map PGM
    train      Train a model on a manifest and save the best checkpoint
    eval       Evaluate a checkpoint: accuracies, curves, perplexity
    predict    Run one prediction from an image (and optional cloud)

GLOBAL OPTIONS (all commands):
    --config PATH   Config file ([section] / key = value); the
                    DRIVEFLOW_CONFIG env var is the fallback
    --seed N        Override run.seed
    --set K=V       Override any config key, e.g. --set train.epochs=10
    --help          Show help for a command
";

const GENERATE_USAGE: &str = "driveflow generate --out DIR [--config PATH] [--seed N] [--set K=V]...

Writes images/, clouds/, and manifest.csv under DIR per the [scene] config.";

const PROJECT_USAGE: &str = "driveflow project --cloud FILE --out FILE.pgm [--config PATH] [--set K=V]...

Projects a cloud (ASCII or PCB1 binary) to a 16-bit PGM range image per
the [projection] config.";

const TRAIN_USAGE: &str = "driveflow train --manifest FILE --checkpoint OUT [--history OUT.csv]
               [--model io|pcm|pn] [--epochs N] [--resplit]
               [--config PATH] [--seed N] [--set K=V]...

Trains on the manifest's train split, tracks validation MAEs per epoch,
and saves the best checkpoint under the dual-tolerance rule. --resplit
re-tags records by the configured split fractions first.";

const EVAL_USAGE: &str = "driveflow eval --checkpoint FILE --manifest FILE [--split train|val|test]
              [--curves OUT.csv] [--report OUT.txt]
              [--config PATH] [--set K=V]...

Prints key=value metrics (threshold accuracy at the reporting threshold,
perplexity, classification accuracy) and writes accuracy curves as CSV.";

const PREDICT_USAGE: &str = "driveflow predict --checkpoint FILE --image FILE.ppm [--cloud FILE]
                 [--config PATH] [--set K=V]...

Prints the predicted angle (radians and degrees) and speed (normalized
and km/h).";

/// Parsed common options plus leftover command-specific flags.
struct ParsedArgs {
    config: RunConfig,
    flags: Vec<(String, String)>,
}

fn parse_args(args: &[String], usage: &str) -> Result<Option<ParsedArgs>> {
    let mut config_path: Option<PathBuf> =
        std::env::var_os("DRIVEFLOW_CONFIG").map(PathBuf::from);
    let mut seed: Option<u64> = None;
    let mut sets: Vec<(String, String)> = Vec::new();
    let mut flags: Vec<(String, String)> = Vec::new();

    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let take_value = |i: &mut usize| -> Result<String> {
            *i += 1;
            args.get(*i)
                .cloned()
                .ok_or_else(|| Error::Usage(format!("{arg} needs a value\n\n{usage}")))
        };
        match arg.as_str() {
            "--help" | "-h" => {
                println!("{usage}");
                return Ok(None);
            }
            "--config" => config_path = Some(PathBuf::from(take_value(&mut i)?)),
            "--seed" => {
                let v = take_value(&mut i)?;
                seed = Some(v.parse().map_err(|_| {
                    Error::Usage(format!("--seed expects an integer, got '{v}'"))
                })?);
            }
            "--set" => {
                let v = take_value(&mut i)?;
                let (k, val) = v.split_once('=').ok_or_else(|| {
                    Error::Usage(format!("--set expects KEY=VALUE, got '{v}'"))
                })?;
                sets.push((k.trim().to_string(), val.trim().to_string()));
            }
            flag if flag.starts_with("--") => {
                let v = take_value(&mut i)?;
                flags.push((flag.to_string(), v));
            }
            other => {
                return Err(Error::Usage(format!(
                    "unexpected argument '{other}'\n\n{usage}"
                )));
            }
        }
        i += 1;
    }

    // Precedence: defaults < config file < --set/--seed flags.
    let mut config = RunConfig::default();
    if let Some(path) = config_path {
        config.apply_file(&path)?;
    }
    for (k, v) in &sets {
        config
            .set_key(k, v)
            .map_err(|e| Error::Usage(e.to_string()))?;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(Some(ParsedArgs { config, flags }))
}

fn flag_value(flags: &[(String, String)], name: &str) -> Option<String> {
    flags
        .iter()
        .rev()
        .find(|(k, _)| k == name)
        .map(|(_, v)| v.clone())
}

fn require_flag(flags: &[(String, String)], name: &str, usage: &str) -> Result<String> {
    flag_value(flags, name)
        .ok_or_else(|| Error::Usage(format!("missing required {name}\n\n{usage}")))
}

fn reject_unknown_flags(flags: &[(String, String)], known: &[&str], usage: &str) -> Result<()> {
    for (k, _) in flags {
        if !known.contains(&k.as_str()) {
            return Err(Error::Usage(format!("unknown option '{k}'\n\n{usage}")));
        }
    }
    Ok(())
}

/// Entry point used by the binary; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(args: &[String]) -> Result<()> {
    let Some(command) = args.first() else {
        println!("{USAGE}");
        return Err(Error::Usage("no command given".into()));
    };
    let rest = &args[1..];
    match command.as_str() {
        "generate" => cmd_generate(rest),
        "project" => cmd_project(rest),
        "train" => cmd_train(rest),
        "eval" => cmd_eval(rest),
        "predict" => cmd_predict(rest),
        "--help" | "-h" | "help" => {
            println!("{USAGE}");
            Ok(())
        }
        other => Err(Error::Usage(format!(
            "unknown command '{other}'\n\n{USAGE}"
        ))),
    }
}

fn cmd_generate(args: &[String]) -> Result<()> {
    let Some(parsed) = parse_args(args, GENERATE_USAGE)? else {
        return Ok(());
    };
    reject_unknown_flags(&parsed.flags, &["--out"], GENERATE_USAGE)?;
    let out = require_flag(&parsed.flags, "--out", GENERATE_USAGE)?;
    let out_dir = PathBuf::from(out);
    let manifest = crate::data::generate_dataset(&parsed.config.scene, parsed.config.seed, &out_dir)?;
    println!("{}", out_dir.join("manifest.csv").display());
    println!(
        "generated {} records (train {}, val {}, test {})",
        manifest.records.len(),
        manifest.records_for(Split::Train).len(),
        manifest.records_for(Split::Val).len(),
        manifest.records_for(Split::Test).len(),
    );
    Ok(())
}

fn cmd_project(args: &[String]) -> Result<()> {
    let Some(parsed) = parse_args(args, PROJECT_USAGE)? else {
        return Ok(());
    };
    reject_unknown_flags(&parsed.flags, &["--cloud", "--out"], PROJECT_USAGE)?;
    let cloud_path = require_flag(&parsed.flags, "--cloud", PROJECT_USAGE)?;
    let out = require_flag(&parsed.flags, "--out", PROJECT_USAGE)?;
    let cloud = load_cloud(Path::new(&cloud_path))?;
    let dm = pcm_project(&cloud, &parsed.config.projection)?;
    save_depthmap_pgm(&dm, &parsed.config.projection, Path::new(&out))?;
    let valid = dm.valid.iter().filter(|&&v| v).count();
    println!("{out}");
    println!(
        "projected {} points onto {}x{} ({} valid pixels)",
        cloud.len(),
        dm.width,
        dm.height,
        valid
    );
    Ok(())
}

/// Loads a manifest and applies the configured fraction filter.
fn load_manifest_with_fraction(path: &Path, cfg: &RunConfig) -> Result<(DatasetManifest, PathBuf)> {
    let manifest = DatasetManifest::load(path)?;
    let dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let manifest = if cfg.data.fraction < 1.0 {
        subset_fraction(&manifest, cfg.data.fraction, cfg.data.fraction_mode, cfg.seed)?
    } else {
        manifest
    };
    Ok((manifest, dir))
}

fn cmd_train(args: &[String]) -> Result<()> {
    let Some(mut parsed) = parse_args(args, TRAIN_USAGE)? else {
        return Ok(());
    };
    // Convenience aliases for the common overrides.
    if let Some(kind) = flag_value(&parsed.flags, "--model") {
        parsed
            .config
            .set_key("model.kind", &kind)
            .map_err(|e| Error::Usage(e.to_string()))?;
    }
    if let Some(epochs) = flag_value(&parsed.flags, "--epochs") {
        parsed
            .config
            .set_key("train.epochs", &epochs)
            .map_err(|e| Error::Usage(e.to_string()))?;
    }
    let mut flags = parsed.flags.clone();
    flags.retain(|(k, _)| k != "--model" && k != "--epochs");
    reject_unknown_flags(
        &flags,
        &["--manifest", "--checkpoint", "--history", "--resplit"],
        TRAIN_USAGE,
    )?;
    let manifest_path = require_flag(&flags, "--manifest", TRAIN_USAGE)?;
    let checkpoint_path = require_flag(&flags, "--checkpoint", TRAIN_USAGE)?;
    let history_path = flag_value(&flags, "--history");
    let resplit = flag_value(&flags, "--resplit");

    let cfg = parsed.config;
    let (mut manifest, dir) = load_manifest_with_fraction(Path::new(&manifest_path), &cfg)?;
    if matches!(resplit.as_deref(), Some("true") | Some("1")) {
        manifest = assign_splits(&manifest, cfg.train.split, cfg.seed)?;
    }

    let mut model = cfg.build_model()?;
    let data = prepare_manifest(&manifest, &dir, &model.spec, cfg.seed)?;
    if data.train.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no train-split records in {manifest_path}"
        )));
    }
    let train_cfg = cfg.train_config();
    let outcome = train(&mut model, &data, &train_cfg)?;

    outcome.best.save(Path::new(&checkpoint_path))?;
    if let Some(h) = &history_path {
        save_history_csv(&outcome.history, Path::new(h))?;
    }
    let best = &outcome.best;
    let qualified = best.val_angle_mae < train_cfg.angle_tolerance_rad
        && best.val_speed_mae < train_cfg.speed_tolerance;
    println!("{checkpoint_path}");
    println!(
        "best checkpoint: epoch {} val_angle_mae {:.6} val_speed_mae {:.6} qualified {}",
        best.epoch, best.val_angle_mae, best.val_speed_mae, qualified
    );
    Ok(())
}

/// (angle_rad, speed_norm) pairs for one prediction or truth record.
type BehaviorPairs = Vec<(f64, f64)>;

/// Predictions and truths for a prepared split.
fn predictions_for(
    model: &crate::models::Model,
    samples: &[PreparedSample],
) -> Result<(BehaviorPairs, BehaviorPairs)> {
    let mut preds = Vec::with_capacity(samples.len());
    let mut truths = Vec::with_capacity(samples.len());
    for s in samples {
        let p = model.predict(&s.input)?;
        preds.push((p.angle_rad, p.speed_norm));
        truths.push((s.angle_rad, s.speed_norm));
    }
    Ok((preds, truths))
}

fn cmd_eval(args: &[String]) -> Result<()> {
    let Some(parsed) = parse_args(args, EVAL_USAGE)? else {
        return Ok(());
    };
    reject_unknown_flags(
        &parsed.flags,
        &["--checkpoint", "--manifest", "--split", "--curves", "--report"],
        EVAL_USAGE,
    )?;
    let checkpoint_path = require_flag(&parsed.flags, "--checkpoint", EVAL_USAGE)?;
    let manifest_path = require_flag(&parsed.flags, "--manifest", EVAL_USAGE)?;
    let split: Split = flag_value(&parsed.flags, "--split")
        .unwrap_or_else(|| "test".into())
        .parse()
        .map_err(|e: Error| Error::Usage(e.to_string()))?;
    let curves_path = flag_value(&parsed.flags, "--curves");
    let report_path = flag_value(&parsed.flags, "--report");

    let cfg = parsed.config;
    let ckpt = Checkpoint::load(Path::new(&checkpoint_path))?;
    let model = ckpt.to_model();
    let (manifest, dir) = load_manifest_with_fraction(Path::new(&manifest_path), &cfg)?;
    let data = prepare_manifest(&manifest, &dir, &model.spec, cfg.seed)?;
    let samples = data.for_split(split);
    if samples.is_empty() {
        return Err(Error::EmptyInput(format!("split '{split}' is empty")));
    }
    let (preds, truths) = predictions_for(&model, samples)?;

    // Reporting units: degrees for angle, km/h for speed.
    let max_speed = model.spec.pipeline.max_speed_kmh;
    let angle_pred_deg: Vec<f64> = preds.iter().map(|p| p.0.to_degrees()).collect();
    let angle_truth_deg: Vec<f64> = truths.iter().map(|t| t.0.to_degrees()).collect();
    let speed_pred_kmh: Vec<f64> = preds.iter().map(|p| p.1 * max_speed).collect();
    let speed_truth_kmh: Vec<f64> = truths.iter().map(|t| t.1 * max_speed).collect();

    let tol = cfg.eval.report_threshold;
    let angle_acc = threshold_accuracy(&angle_pred_deg, &angle_truth_deg, tol)?;
    let speed_acc = threshold_accuracy(&speed_pred_kmh, &speed_truth_kmh, tol)?;

    let angle_curve = accuracy_curve(
        &angle_pred_deg,
        &angle_truth_deg,
        &cfg.eval.angle_thresholds_deg,
        Target::Angle,
    )?;
    let speed_curve = accuracy_curve(
        &speed_pred_kmh,
        &speed_truth_kmh,
        &cfg.eval.speed_thresholds_kmh,
        Target::Speed,
    )?;

    // Perplexity in model units: radians and normalized speed.
    let ap: Vec<f64> = preds.iter().map(|p| p.0).collect();
    let at: Vec<f64> = truths.iter().map(|t| t.0).collect();
    let sp: Vec<f64> = preds.iter().map(|p| p.1).collect();
    let st: Vec<f64> = truths.iter().map(|t| t.1).collect();
    let perp = perplexity_report(&ap, &at, &sp, &st, cfg.eval.sigma_angle, cfg.eval.sigma_speed)?;

    let class_acc =
        classification_accuracy(&preds, &truths, cfg.eval.angle_cut_rad, cfg.eval.stop_cut)?;

    let mut report = String::new();
    report.push_str(&format!("model={}\n", model.spec.kind));
    report.push_str(&format!("split={split}\n"));
    report.push_str(&format!("count={}\n", samples.len()));
    report.push_str(&format!("report_threshold={tol}\n"));
    report.push_str(&format!("angle_accuracy_at_threshold={angle_acc}\n"));
    report.push_str(&format!("speed_accuracy_at_threshold={speed_acc}\n"));
    report.push_str(&format!("perplexity_angle={}\n", perp.angle_perplexity));
    report.push_str(&format!("perplexity_speed={}\n", perp.speed_perplexity));
    report.push_str(&format!("perplexity_combined={}\n", perp.combined));
    report.push_str(&format!("perplexity_sigma_angle={}\n", perp.sigma_angle));
    report.push_str(&format!("perplexity_sigma_speed={}\n", perp.sigma_speed));
    report.push_str(&format!("classification_accuracy={class_acc}\n"));
    print!("{report}");
    if let Some(p) = &report_path {
        std::fs::write(p, &report).map_err(|e| Error::io(p.clone(), e))?;
    }
    if let Some(p) = &curves_path {
        save_curves_csv(
            &[angle_curve, speed_curve],
            &model.spec.kind.to_string(),
            Path::new(p),
        )?;
    }
    Ok(())
}

fn cmd_predict(args: &[String]) -> Result<()> {
    let Some(parsed) = parse_args(args, PREDICT_USAGE)? else {
        return Ok(());
    };
    reject_unknown_flags(
        &parsed.flags,
        &["--checkpoint", "--image", "--cloud"],
        PREDICT_USAGE,
    )?;
    let checkpoint_path = require_flag(&parsed.flags, "--checkpoint", PREDICT_USAGE)?;
    let image_path = require_flag(&parsed.flags, "--image", PREDICT_USAGE)?;
    let cloud_path = flag_value(&parsed.flags, "--cloud");

    let cfg = parsed.config;
    let ckpt = Checkpoint::load(Path::new(&checkpoint_path))?;
    let model = ckpt.to_model();
    let spec = &model.spec;

    // Predict takes inputs exactly as the checkpoint expects them; the
    // train/eval pipeline is where resizing happens.
    let image = load_image_ppm(Path::new(&image_path))?;
    let want = spec.image.in_shape;
    if image.shape() != want {
        return Err(Error::Dimension {
            context: format!(
                "predict image (expected {}x{}x{})",
                want[0], want[1], want[2]
            ),
            lhs: image.shape().to_vec(),
            rhs: want.to_vec(),
        });
    }

    let needs_cloud = spec.kind != ModelKind::Io;
    if spec.kind == ModelKind::Io && cloud_path.is_some() {
        eprintln!("warning: io checkpoint ignores --cloud");
    }
    if needs_cloud && cloud_path.is_none() {
        return Err(Error::Usage(format!(
            "{} checkpoint requires --cloud\n\n{PREDICT_USAGE}",
            spec.kind
        )));
    }

    let mut depth = None;
    let mut cloud_tensor = None;
    if needs_cloud {
        let cloud = load_cloud(Path::new(cloud_path.as_ref().unwrap()))?;
        match spec.kind {
            ModelKind::Pcm => {
                let proj = spec.pipeline.projection.unwrap_or_default();
                let dm = pcm_project(&cloud, &proj)?;
                depth = Some(crate::pointcloud::depthmap_to_tensor(&dm, &proj));
            }
            ModelKind::Pn => {
                let fixed = random_downsample(&cloud, spec.pipeline.num_points, cfg.seed)?;
                cloud_tensor = Some(fixed.to_tensor(spec.pipeline.cloud_scale_m)?);
            }
            ModelKind::Io => unreachable!(),
        }
    }

    let pred = model.predict(&ModelInput {
        image,
        depth,
        cloud: cloud_tensor,
    })?;
    let speed_kmh = pred.speed_norm * spec.pipeline.max_speed_kmh;
    println!("angle_rad={}", pred.angle_rad);
    println!("angle_deg={}", pred.angle_rad.to_degrees());
    println!("speed_norm={}", pred.speed_norm);
    println!("speed_kmh={speed_kmh}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(parts: &[&str]) -> Vec<String> {
        parts.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn no_command_is_usage_error() {
        assert_eq!(run(&[]), 1);
    }

    #[test]
    fn unknown_command_is_usage_error() {
        assert_eq!(run(&args(&["drive"])), 1);
    }

    #[test]
    fn unknown_model_kind_is_usage_error() {
        assert_eq!(
            run(&args(&[
                "train",
                "--manifest",
                "nope.csv",
                "--checkpoint",
                "out.ckpt",
                "--model",
                "resnet",
            ])),
            1
        );
    }

    #[test]
    fn help_exits_zero_for_all_commands() {
        assert_eq!(run(&args(&["--help"])), 0);
        for cmd in ["generate", "project", "train", "eval", "predict"] {
            assert_eq!(run(&args(&[cmd, "--help"])), 0, "help for {cmd}");
        }
    }

    #[test]
    fn missing_required_flag_is_usage_error() {
        assert_eq!(run(&args(&["generate"])), 1);
        assert_eq!(run(&args(&["project", "--cloud", "x.pcb"])), 1);
    }

    #[test]
    fn missing_manifest_file_is_data_error() {
        assert_eq!(
            run(&args(&[
                "train",
                "--manifest",
                "/nonexistent/manifest.csv",
                "--checkpoint",
                "/tmp/out.ckpt",
            ])),
            2
        );
    }

    #[test]
    fn bad_set_key_is_usage_error() {
        assert_eq!(
            run(&args(&["generate", "--out", "/tmp/x", "--set", "nope=1"])),
            1
        );
    }
}
