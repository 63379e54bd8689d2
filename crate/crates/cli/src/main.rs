//! `bridgekd`: data generation, teacher/student training, translation and
//! evaluation for the Brownian-bridge self-training workflow.
//!
//! Every subcommand reads the same JSON pipeline config and writes only under
//! its output directory. On failure a single line
//! `error[<category>]: <message>` goes to stderr and the exit code is 1.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bridgekd::config::{load_config, parse_config, Phase, PipelineConfig};
use bridgekd::io::{create_dir, export_png, load_checkpoint, read_imgf, save_checkpoint, write_imgf, write_json};
use bridgekd::metrics::{evaluate_pairs, render_table, SsimConfig};
use bridgekd::phantom::{build_dataset, DatasetManifest, Role};
use bridgekd::train::{generate_pseudo_labels, run_self_training, train_model, translate, PSNR_PEAK, SSIM_RANGE};

#[derive(Parser)]
#[command(
    name = "bridgekd",
    version,
    about = "Brownian-bridge CBCT-to-CT translation with self-training"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON pipeline config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate phantoms and CBCT-like images into `<out>/data`.
    GenData,
    /// Train the teacher on the paired split.
    TrainTeacher,
    /// Translate every unpaired CBCT with the teacher.
    PseudoLabel {
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Train the student from teacher weights on paired plus pseudo-labelled data.
    TrainStudent {
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Run the whole workflow: data, teacher, pseudo-labels, student, evaluation.
    SelfTrain,
    /// Translate a single IMGF image through a checkpoint.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output path; `.png` and `.pgm` write previews, anything else IMGF.
        #[arg(long)]
        output: PathBuf,
    },
    /// Score predictions against ground truth, matched by file name.
    Evaluate {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        truth_dir: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn resolve_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path)?,
        None => parse_config("{}")?,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &common.out_dir {
        cfg.out_dir = dir.clone();
    }
    create_dir(&cfg.out_dir)?;
    Ok(cfg)
}

fn gen_data(cfg: &PipelineConfig) -> Result<DatasetManifest> {
    let m = build_dataset(
        cfg.n_paired,
        cfg.n_unpaired,
        cfg.n_test,
        cfg.image_size,
        &cfg.degradation,
        cfg.seed,
        &cfg.data_dir(),
    )?;
    tracing::info!(items = m.items.len(), dir = %cfg.data_dir().display(), "dataset written");
    Ok(m)
}

fn extension_is(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.common)?;
    let out = cfg.out_dir.clone();
    let teacher_path = |p: &Option<PathBuf>| p.clone().unwrap_or_else(|| out.join("teacher.bbkd"));
    match cli.command {
        Command::GenData => {
            gen_data(&cfg)?;
        }
        Command::TrainTeacher => {
            let manifest = DatasetManifest::load(&cfg.manifest_path())?;
            let (params, record) = train_model(&manifest, &[Role::Paired], &cfg.train_config(Phase::Teacher), None)?;
            save_checkpoint(&params, &out.join("teacher.bbkd"))?;
            write_json(&record, &out.join("teacher_record.json"))?;
        }
        Command::PseudoLabel { teacher } => {
            let manifest = DatasetManifest::load(&cfg.manifest_path())?;
            let params = load_checkpoint(&teacher_path(&teacher))?;
            let tc = cfg.train_config(Phase::Teacher);
            let updated = generate_pseudo_labels(&params, &manifest, &tc, &out.join("pseudo"))?;
            updated.save(&out.join("manifest_pseudo.json"))?;
        }
        Command::TrainStudent { teacher } => {
            let manifest = DatasetManifest::load(&out.join("manifest_pseudo.json"))?;
            let init = load_checkpoint(&teacher_path(&teacher))?;
            let (params, record) = train_model(
                &manifest,
                &[Role::Paired, Role::PseudoLabeled],
                &cfg.train_config(Phase::Student),
                Some(&init),
            )?;
            save_checkpoint(&params, &out.join("student.bbkd"))?;
            write_json(&record, &out.join("student_record.json"))?;
        }
        Command::SelfTrain => {
            let manifest = gen_data(&cfg)?;
            let outcome = run_self_training(
                &manifest,
                &cfg.train_config(Phase::Teacher),
                &cfg.train_config(Phase::Student),
                &out,
            )?;
            print!("{}", render_table(&outcome.summary.reports));
        }
        Command::Translate {
            checkpoint,
            input,
            output,
        } => {
            let params = load_checkpoint(&checkpoint)?;
            let q = read_imgf(&input)?;
            let p = translate(&params, &q, cfg.steps, cfg.stride, cfg.seed)?;
            if extension_is(&output, "png") || extension_is(&output, "pgm") {
                export_png(&p, &output)?;
            } else {
                write_imgf(&p, &output)?;
            }
        }
        Command::Evaluate {
            pred_dir,
            truth_dir,
            output,
        } => {
            let report = evaluate_dirs(&pred_dir, &truth_dir)?;
            print!("{}", render_table(std::slice::from_ref(&report)));
            write_json(&report, &output.unwrap_or_else(|| out.join("report.json")))?;
        }
    }
    Ok(())
}

fn imgf_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if extension_is(&path, "imgf") {
            let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            files.insert(name, path);
        }
    }
    Ok(files)
}

fn evaluate_dirs(pred_dir: &Path, truth_dir: &Path) -> Result<bridgekd::metrics::MetricsReport> {
    let preds = imgf_files(pred_dir)?;
    let truths = imgf_files(truth_dir)?;
    let mut ids = Vec::new();
    let (mut p, mut t) = (Vec::new(), Vec::new());
    for (name, path) in &preds {
        let Some(truth) = truths.get(name) else {
            bail!(bridgekd::Error::Dataset(format!("no ground truth for {name}")));
        };
        p.push(read_imgf(path)?);
        t.push(read_imgf(truth)?);
        ids.push(name.trim_end_matches(".imgf").to_string());
    }
    let report = evaluate_pairs(&p, &t, &ids, PSNR_PEAK, &SsimConfig::with_range(SSIM_RANGE))?;
    Ok(report.labelled(truth_dir.display().to_string(), pred_dir.display().to_string()))
}

fn category(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<bridgekd::Error>())
        .map(bridgekd::Error::category)
        .unwrap_or_else(|| {
            if err.downcast_ref::<std::io::Error>().is_some() {
                "io"
            } else {
                "internal"
            }
        })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .without_time()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let msg = format!("{err:#}").replace('\n', " ");
            eprintln!("error[{}]: {msg}", category(&err));
            ExitCode::FAILURE
        }
    }
}
