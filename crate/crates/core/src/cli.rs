//! Command-line entry points.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::data::{
    generate_dataset, load_manifest, load_split, read_ppm, write_ppm, LabeledImage, Split,
};
use crate::error::{Error, Result};
use crate::metrics::{diff_reports, render_diff, render_report, MetricsReport, ReportFormat};
use crate::models::{Direction, ModelBundle};
use crate::pipeline::{classify, enhanced_path, run_pipeline, PipelineConfig, ENHANCED_SUFFIX};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "weatherclass",
    version,
    about = "Night-robust weather classification on synthetic traffic scenes"
)]
struct Cli {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Markdown,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Markdown => ReportFormat::Markdown,
            Format::Json => ReportFormat::Json,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic dataset and its manifest.
    GenData {
        /// Output directory.
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Run the full pipeline.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Parent of the run directory.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Run directory name; defaults to `seed-<seed>`.
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Translate every PPM in a directory with the night-to-day generator.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Zero-shot metrics of a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Replace night images by their `.enhanced.ppm` versions.
        #[arg(long)]
        enhanced: bool,
        #[arg(long, value_enum, default_value = "markdown")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render stored metrics.json files, or diff two of them.
    Report {
        files: Vec<PathBuf>,
        /// Compare BEFORE and AFTER.
        #[arg(long, num_args = 2, value_names = ["BEFORE", "AFTER"])]
        diff: Option<Vec<PathBuf>>,
        #[arg(long, value_enum, default_value = "markdown")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn load_bundle(config: &PipelineConfig, checkpoint: &Path) -> Result<ModelBundle> {
    let mut bundle = ModelBundle::new(&config.model, &config.gan, config.seed)?;
    bundle.load(checkpoint)?;
    Ok(bundle)
}

fn read_report(path: &Path) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    MetricsReport::from_json(&text)
}

fn emit(text: &str, out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn label_of(path: &Path) -> String {
    path.parent()
        .and_then(Path::file_name)
        .or_else(|| path.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::GenData { out } => {
            let manifest = generate_dataset(&config.data, out, config.seed)?;
            writeln!(
                stdout,
                "wrote {} images and {}",
                config.data.total(),
                manifest.display()
            )
            .map_err(|e| Error::io("<stdout>", e))?;
        }
        Command::Train {
            manifest,
            out,
            run_id,
        } => {
            let run_id = run_id
                .clone()
                .unwrap_or_else(|| format!("seed-{}", config.seed));
            let outcome = run_pipeline(&config, manifest, &out.join(run_id))?;
            let report = std::fs::read_to_string(outcome.run_dir.join("report.md"))
                .map_err(|e| Error::io(outcome.run_dir.join("report.md"), e))?;
            emit(&report, None, stdout)?;
        }
        Command::Enhance { checkpoint, input } => {
            let bundle = load_bundle(&config, checkpoint)?;
            let mut count = 0;
            let mut entries: Vec<PathBuf> = std::fs::read_dir(input)
                .map_err(|e| Error::io(input, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    let name = p.to_string_lossy();
                    name.ends_with(".ppm") && !name.ends_with(ENHANCED_SUFFIX)
                })
                .collect();
            entries.sort();
            for path in entries {
                let image = read_ppm(&path)?;
                write_ppm(
                    &bundle.translate(Direction::NightToDay, &image)?,
                    &enhanced_path(&path),
                )?;
                count += 1;
            }
            writeln!(stdout, "enhanced {count} images").map_err(|e| Error::io("<stdout>", e))?;
        }
        Command::Eval {
            checkpoint,
            manifest,
            split,
            enhanced,
            format,
            out,
        } => {
            let bundle = load_bundle(&config, checkpoint)?;
            let manifest = load_manifest(manifest)?;
            let records = load_split(&manifest, (*split).into(), config.model.image_size)?;
            let refs: Vec<&LabeledImage> = records.iter().collect();
            let images = records
                .iter()
                .map(|r| {
                    if *enhanced && r.domain == crate::classes::Domain::Night {
                        read_ppm(&enhanced_path(&r.path))
                    } else {
                        Ok(r.image.clone())
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let (_, report) = classify(&bundle, &refs, &images.iter().collect::<Vec<_>>())?;
            let label = checkpoint.display().to_string();
            emit(
                &render_report(&report, &label, (*format).into())?,
                out.as_deref(),
                stdout,
            )?;
        }
        Command::Report {
            files,
            diff,
            format,
            out,
        } => {
            let mut text = String::new();
            if let Some(pair) = diff {
                let diff = diff_reports(&read_report(&pair[0])?, &read_report(&pair[1])?)?;
                text = match format {
                    Format::Markdown => render_diff(&diff),
                    Format::Json => serde_json::to_string_pretty(&diff)?,
                };
            }
            for f in files {
                let report = read_report(f)?;
                text.push_str(&render_report(&report, &label_of(f), (*format).into())?);
            }
            if diff.is_none() && files.is_empty() {
                return Err(Error::Input(
                    "report: give metrics files or --diff BEFORE AFTER".into(),
                ));
            }
            emit(&text, out.as_deref(), stdout)?;
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name) and runs the command.
pub fn dispatch<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(rendered.as_bytes());
            return code;
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_RUNTIME
        }
    }
}
