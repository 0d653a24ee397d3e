//! The classify → mine → fine-tune → enhance → reclassify protocol, preceded
//! by day-domain pretraining and CycleGAN training.

mod batching;
mod config;
mod stages;

pub use batching::{build_pair_set, stratified_batches};
pub use config::{OptimSettings, OptimizerConfig, PipelineConfig};
pub use stages::{
    batch_count, classify, encoder_objective, enhance, finetune, initial_classification,
    mine_error_set, pretrain, train_cyclegan, EncoderBatch, EncoderLoss, LossCurves, NightSample,
};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::classes::{Domain, WeatherClass};
use crate::data::{load_manifest, load_split, read_ppm, write_ppm, LabeledImage, Split};
use crate::error::{Error, Result};
use crate::losses::ErrorSet;
use crate::metrics::{
    diff_reports, render_class_table, render_diff, render_lighting_table, MetricsReport,
};
use crate::models::ModelBundle;
use crate::tensor::Tensor;

pub const STAGE_ORDER: [&str; 7] = [
    "pretrain",
    "initial_classify",
    "mine",
    "train_cyclegan",
    "finetune",
    "enhance",
    "reclassify",
];

pub const CHECKPOINT_FILE: &str = "checkpoint.nsck";
pub const METRICS_FILE: &str = "metrics.json";
pub const LOSSES_FILE: &str = "losses.csv";
pub const ENHANCED_SUFFIX: &str = ".enhanced.ppm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage_name: String,
    /// Relative to the run directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics_path: Option<PathBuf>,
    pub wall_time_seconds: f64,
    pub loss_curves: LossCurves,
    pub input_snapshot: u64,
    pub output_snapshot: u64,
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub run_dir: PathBuf,
    pub stages: Vec<StageResult>,
    /// Test-set report before fine-tuning and enhancement.
    pub before: MetricsReport,
    /// Test-set report after fine-tuning, with night images enhanced.
    pub after: MetricsReport,
    pub error_set: ErrorSet,
    pub bundle: ModelBundle,
}

impl PipelineOutcome {
    pub fn stage(&self, name: &str) -> Option<&StageResult> {
        self.stages.iter().find(|s| s.stage_name == name)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_loss_csv(path: &Path, curves: &LossCurves) -> Result<()> {
    let names: Vec<&String> = curves.keys().collect();
    let epochs = curves.values().map(Vec::len).max().unwrap_or(0);
    let mut out = String::from("epoch");
    for n in &names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for e in 0..epochs {
        let _ = write!(out, "{}", e + 1);
        for n in &names {
            match curves[*n].get(e) {
                Some(v) => {
                    let _ = write!(out, ",{v}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    write_text(path, &out)
}

fn write_predictions(
    path: &Path,
    records: &[&LabeledImage],
    predictions: &[WeatherClass],
    root: &Path,
) -> Result<()> {
    let mut out = String::from("path,domain,label,prediction\n");
    for (r, p) in records.iter().zip(predictions) {
        let rel = r.path.strip_prefix(root).unwrap_or(&r.path);
        let _ = writeln!(out, "{},{},{},{}", rel.display(), r.domain, r.class, p);
    }
    write_text(path, &out)
}

pub fn enhanced_path(original: &Path) -> PathBuf {
    let stem = original
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    original.with_file_name(format!("{stem}{ENHANCED_SUFFIX}"))
}

struct StageRunner<'r> {
    run_dir: &'r Path,
    results: Vec<StageResult>,
}

impl StageRunner<'_> {
    fn dir(&self, stage: &str) -> Result<PathBuf> {
        let d = self.run_dir.join(stage);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    /// Runs `body` for the next stage, wrapping failures with the stage name.
    fn run<T>(
        &mut self,
        stage: &'static str,
        bundle: &mut ModelBundle,
        body: impl FnOnce(&mut ModelBundle, &Path) -> Result<(T, LossCurves, Option<PathBuf>)>,
    ) -> Result<T> {
        debug_assert_eq!(STAGE_ORDER[self.results.len()], stage);
        info!("stage {stage}");
        let wrap = |e: Error| Error::Stage {
            stage: stage.to_string(),
            source: Box::new(e),
        };
        let start = Instant::now();
        let input_snapshot = bundle.snapshot_id();
        if let Some(prev) = self.results.last() {
            debug_assert_eq!(prev.output_snapshot, input_snapshot);
        }
        let dir = self.dir(stage).map_err(wrap)?;
        let (value, loss_curves, metrics_path) = body(bundle, &dir).map_err(wrap)?;
        self.results.push(StageResult {
            stage_name: stage.to_string(),
            metrics_path,
            wall_time_seconds: start.elapsed().as_secs_f64(),
            loss_curves,
            input_snapshot,
            output_snapshot: bundle.snapshot_id(),
        });
        Ok(value)
    }
}

/// Runs every stage on the dataset behind `manifest_path`, writing stage
/// outputs under `run_dir/<stage>/`.
pub fn run_pipeline(
    config: &PipelineConfig,
    manifest_path: &Path,
    run_dir: &Path,
) -> Result<PipelineOutcome> {
    config.validate()?;
    let manifest = load_manifest(manifest_path)?;
    let size = config.model.image_size;
    let train = load_split(&manifest, Split::Train, size)?;
    let test = load_split(&manifest, Split::Test, size)?;
    let val = load_split(&manifest, Split::Val, size)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data(
            "manifest needs nonempty train and test splits".into(),
        ));
    }
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    write_text(&run_dir.join("config.json"), &config.to_json()?)?;

    let train_refs: Vec<&LabeledImage> = train.iter().collect();
    let test_refs: Vec<&LabeledImage> = test.iter().collect();
    let val_refs: Vec<&LabeledImage> = val.iter().collect();
    let day_train: Vec<&LabeledImage> = train.iter().filter(|x| x.domain == Domain::Day).collect();

    let mut bundle = ModelBundle::new(&config.model, &config.gan, config.seed)?;
    let mut runner = StageRunner {
        run_dir,
        results: Vec::new(),
    };

    runner.run("pretrain", &mut bundle, |b, dir| {
        let curves = pretrain(b, &day_train, config)?;
        write_loss_csv(&dir.join(LOSSES_FILE), &curves)?;
        b.save(&dir.join(CHECKPOINT_FILE))?;
        Ok(((), curves, None))
    })?;

    let (before, train_predictions) = runner.run("initial_classify", &mut bundle, |b, dir| {
        let (preds, report) = initial_classification(b, &test_refs)?;
        write_text(&dir.join(METRICS_FILE), &report.to_json()?)?;
        write_predictions(
            &dir.join("predictions.csv"),
            &test_refs,
            &preds,
            &manifest.root,
        )?;
        let (train_preds, _) = initial_classification(b, &train_refs)?;
        Ok((
            (report, train_preds),
            LossCurves::new(),
            Some(PathBuf::from("initial_classify").join(METRICS_FILE)),
        ))
    })?;

    let error_set = runner.run("mine", &mut bundle, |b, dir| {
        let labels: Vec<WeatherClass> = train.iter().map(|x| x.class).collect();
        let set = mine_error_set(&train_predictions, &labels, b.snapshot_id())?;
        write_text(
            &dir.join("error_set.json"),
            &serde_json::to_string_pretty(&set)?,
        )?;
        info!(
            "error set: {} of {} training images",
            set.len(),
            train.len()
        );
        Ok((set, LossCurves::new(), None))
    })?;

    runner.run("train_cyclegan", &mut bundle, |b, dir| {
        let night: Vec<NightSample<'_>> = train
            .iter()
            .enumerate()
            .filter(|(_, x)| x.domain == Domain::Night)
            .map(|(i, x)| NightSample {
                image: &x.image,
                error_label: error_set.contains(i).then_some(x.class),
            })
            .collect();
        let day: Vec<&Tensor> = day_train.iter().map(|x| &x.image).collect();
        let curves = train_cyclegan(b, &night, &day, config)?;
        write_loss_csv(&dir.join(LOSSES_FILE), &curves)?;
        b.save(&dir.join(CHECKPOINT_FILE))?;
        Ok(((), curves, None))
    })?;

    runner.run("finetune", &mut bundle, |b, dir| {
        let curves = finetune(b, &train_refs, &error_set, config)?;
        write_loss_csv(&dir.join(LOSSES_FILE), &curves)?;
        b.save(&dir.join(CHECKPOINT_FILE))?;
        let metrics_path = if val_refs.is_empty() {
            None
        } else {
            let (_, report) = initial_classification(b, &val_refs)?;
            write_text(&dir.join(METRICS_FILE), &report.to_json()?)?;
            Some(PathBuf::from("finetune").join(METRICS_FILE))
        };
        Ok(((), curves, metrics_path))
    })?;

    let enhanced = runner.run("enhance", &mut bundle, |b, dir| {
        let out = enhance(b, &test_refs)?;
        let mut listing = String::from("original,enhanced,seed\n");
        let mut stored = Vec::with_capacity(out.len());
        for (record, image) in test.iter().zip(out) {
            if record.domain == Domain::Night {
                let path = enhanced_path(&record.path);
                write_ppm(&image, &path)?;
                let rel = |p: &Path| {
                    p.strip_prefix(&manifest.root)
                        .unwrap_or(p)
                        .display()
                        .to_string()
                };
                let _ = writeln!(
                    listing,
                    "{},{},{}",
                    rel(&record.path),
                    rel(&path),
                    record.seed
                );
                // reclassify sees exactly what was persisted
                stored.push(read_ppm(&path)?);
            } else {
                stored.push(image);
            }
        }
        write_text(&dir.join("enhanced.csv"), &listing)?;
        Ok((stored, LossCurves::new(), None))
    })?;

    let after = runner.run("reclassify", &mut bundle, |b, dir| {
        let images: Vec<&Tensor> = enhanced.iter().collect();
        let (preds, report) = classify(b, &test_refs, &images)?;
        write_text(&dir.join(METRICS_FILE), &report.to_json()?)?;
        write_predictions(
            &dir.join("predictions.csv"),
            &test_refs,
            &preds,
            &manifest.root,
        )?;
        Ok((
            report,
            LossCurves::new(),
            Some(PathBuf::from("reclassify").join(METRICS_FILE)),
        ))
    })?;

    let diff = diff_reports(&before, &after)?;
    let rows = [("Base", &before), ("Fine-tuned + CycleGAN", &after)];
    let report = format!(
        "{}\n\n{}\n\n{}",
        render_lighting_table(&rows),
        render_class_table(&rows),
        render_diff(&diff)
    );
    write_text(&run_dir.join("report.md"), &report)?;
    write_text(
        &run_dir.join("stages.json"),
        &serde_json::to_string_pretty(&runner.results)?,
    )?;

    Ok(PipelineOutcome {
        run_dir: run_dir.to_path_buf(),
        stages: runner.results,
        before,
        after,
        error_set,
        bundle,
    })
}
