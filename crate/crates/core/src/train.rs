//! Teacher → pseudo-label → student self-training.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, OptimizerState};
use crate::bridge::{make_schedule, make_training_pair, sample_translation, BridgeSchedule};
use crate::denoiser::{init_params, loss_and_gradients, predict_x0, DenoiserConfig, DenoiserParams};
use crate::error::{Error, Result};
use crate::io::{create_dir, encode_checkpoint, write_imgf, write_json};
use crate::metrics::{evaluate_pairs, render_table, MetricsReport, SsimConfig};
use crate::phantom::{DatasetManifest, ManifestItem, Role};
use crate::rng::{derive_path, stream};
use crate::tensor::Tensor;

/// PSNR peak on the normalised `[-1, 1]` scale.
pub const PSNR_PEAK: f64 = 1.0;
/// SSIM dynamic range on the normalised scale.
pub const SSIM_RANGE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(rename = "T")]
    pub steps: usize,
    pub stride: usize,
    /// Logging interval; every step's loss is recorded regardless.
    pub eval_every: usize,
    pub denoiser: DenoiserConfig,
    pub manifest: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            train_steps: 2000,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
            steps: 50,
            stride: 1,
            eval_every: 100,
            denoiser: DenoiserConfig::default(),
            manifest: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be finite and > 0"));
        }
        if self.steps < 2 {
            return Err(Error::config("T", "T must be >= 2"));
        }
        if self.stride == 0 || !self.steps.is_multiple_of(self.stride) {
            return Err(Error::config("stride", "stride must divide T"));
        }
        self.denoiser.validate()
    }

    fn schedule(&self) -> Result<BridgeSchedule> {
        make_schedule(self.steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub config: TrainConfig,
    pub roles: Vec<Role>,
    pub n_train_pairs: usize,
    pub losses: Vec<LossPoint>,
    /// FNV-1a hash of the final checkpoint bytes.
    pub checkpoint_id: String,
    /// Kept out of the serialised record so that reruns stay byte-identical.
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl TrainingRecord {
    /// Mean loss over the first and last `window` recorded steps.
    pub fn moving_average_ends(&self, window: usize) -> Option<(f64, f64)> {
        let n = self.losses.len();
        if window == 0 || n < window {
            return None;
        }
        let avg = |s: &[LossPoint]| s.iter().map(|p| p.loss).sum::<f64>() / s.len() as f64;
        Some((avg(&self.losses[..window]), avg(&self.losses[n - window..])))
    }
}

pub fn checkpoint_id(params: &DenoiserParams) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in encode_checkpoint(params) {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn load_pairs(manifest: &DatasetManifest, roles: &[Role]) -> Result<Vec<(Tensor, Tensor)>> {
    let items: Vec<&ManifestItem> = manifest.items.iter().filter(|i| roles.contains(&i.role)).collect();
    items.par_iter().map(|i| manifest.load_pair(i)).collect()
}

/// Adam-optimised `P0` regression on training pairs drawn uniformly with
/// replacement from the items whose role is in `roles`.
///
/// Each batch element uses its own random stream derived from
/// `(seed, step, slot)`, and gradients are summed in slot order, so the result
/// does not depend on how rayon schedules the batch.
pub fn train_model(
    manifest: &DatasetManifest,
    roles: &[Role],
    cfg: &TrainConfig,
    init: Option<&DenoiserParams>,
) -> Result<(DenoiserParams, TrainingRecord)> {
    cfg.validate()?;
    let start = Instant::now();
    let pairs = load_pairs(manifest, roles)?;
    if pairs.is_empty() {
        return Err(Error::Dataset(format!("no training pairs with roles {roles:?}")));
    }
    let sched = cfg.schedule()?;
    let mut params = match init {
        Some(p) => {
            if *p.config() != cfg.denoiser {
                return Err(Error::config(
                    "denoiser",
                    "initial parameters use a different architecture",
                ));
            }
            p.clone()
        }
        None => init_params(&cfg.denoiser, derive_path(cfg.seed, &[0]))?,
    };
    let adam = AdamConfig::with_lr(cfg.learning_rate);
    let mut state = OptimizerState::default();
    let mut losses = Vec::with_capacity(cfg.train_steps);
    let mut picker = stream(derive_path(cfg.seed, &[1]));

    for step in 0..cfg.train_steps {
        let picks: Vec<usize> = (0..cfg.batch_size)
            .map(|_| picker.random_range(0..pairs.len()))
            .collect();
        let results = picks
            .par_iter()
            .enumerate()
            .map(|(slot, &idx)| {
                let mut rng = stream(derive_path(cfg.seed, &[2, step as u64, slot as u64]));
                let (cbct, ct) = &pairs[idx];
                let pair = make_training_pair(ct, cbct, &sched, &mut rng)?;
                loss_and_gradients(&params, &pair.noisy, pair.t, &pair.target)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged { step },
                other => other,
            })?;

        let scale = 1.0 / cfg.batch_size as f64;
        let mut iter = results.into_iter();
        let (mut loss, mut grads) = iter.next().expect("batch_size >= 1");
        for (l, g) in iter {
            loss += l;
            for (name, t) in g {
                let acc = grads.get_mut(&name).expect("same parameter set");
                acc.axpy(1.0, &t);
            }
        }
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        for g in grads.values_mut() {
            *g = g.map(|v| v * scale);
        }
        adam_step(params.tensors_mut(), &grads, &mut state, &adam)?;
        losses.push(LossPoint { step, loss });
        if (step + 1) % cfg.eval_every == 0 {
            tracing::info!(step = step + 1, loss, "training");
        }
    }

    let record = TrainingRecord {
        config: cfg.clone(),
        roles: roles.to_vec(),
        n_train_pairs: pairs.len(),
        losses,
        checkpoint_id: checkpoint_id(&params),
        wall_clock: start.elapsed(),
    };
    Ok((params, record))
}

/// Runs the reverse chain from `q` and clamps the result to `[-1, 1]`.
pub fn translate(params: &DenoiserParams, q: &Tensor, steps: usize, stride: usize, seed: u64) -> Result<Tensor> {
    let sched = make_schedule(steps)?;
    let mut rng = stream(seed);
    let out = sample_translation(q, |x, t| predict_x0(params, x, t), &sched, &mut rng, stride)?;
    Ok(out.map(|v| v.clamp(-1.0, 1.0)))
}

/// Translates every unpaired CBCT with the teacher, writes the results as
/// IMGF under `out_dir` and returns a manifest with the matching
/// `pseudo-labeled` items (replacing any previous ones).
pub fn generate_pseudo_labels(
    teacher: &DenoiserParams,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    create_dir(out_dir)?;
    let sources: Vec<&ManifestItem> = manifest.items_with_role(Role::Unpaired).collect();
    let entries = sources
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let q = manifest.load_cbct(item)?;
            let label = translate(
                teacher,
                &q,
                cfg.steps,
                cfg.stride,
                derive_path(cfg.seed, &[3, i as u64]),
            )?;
            let id = format!("pseudo-{i:04}");
            let path = out_dir.join(format!("{id}.imgf"));
            write_imgf(&label, &path)?;
            Ok((
                id,
                item.phantom_seed,
                manifest.relative_to_root(&path),
                item.cbct.clone(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut updated = manifest.clone();
    updated.set_pseudo_labels(entries);
    Ok(updated)
}

/// Translates every test CBCT and scores it against its CT. With
/// `params = None` the raw CBCT is scored (the input baseline).
pub fn evaluate_model(
    params: Option<&DenoiserParams>,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    model: &str,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let items: Vec<&ManifestItem> = manifest.items_with_role(Role::Test).collect();
    let scored = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let (cbct, ct) = manifest.load_pair(item)?;
            let pred = match params {
                Some(p) => translate(p, &cbct, cfg.steps, cfg.stride, derive_path(cfg.seed, &[4, i as u64]))?,
                None => cbct,
            };
            Ok((pred, ct, item.id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut preds, mut truths, mut ids) = (Vec::new(), Vec::new(), Vec::new());
    for (p, t, id) in scored {
        preds.push(p);
        truths.push(t);
        ids.push(id);
    }
    Ok(evaluate_pairs(&preds, &truths, &ids, PSNR_PEAK, &SsimConfig::with_range(SSIM_RANGE))?.labelled("test", model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainingSummary {
    pub n_paired: usize,
    pub n_pseudo: usize,
    pub n_test: usize,
    pub teacher: TrainingRecord,
    pub student: TrainingRecord,
    /// Input, Teacher, Student, in that order.
    pub reports: Vec<MetricsReport>,
}

#[derive(Debug)]
pub struct SelfTrainingOutcome {
    pub teacher: DenoiserParams,
    pub student: DenoiserParams,
    pub summary: SelfTrainingSummary,
}

fn phase<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Phase {
        phase: name,
        source: Box::new(e),
    })
}

/// The full protocol: teacher on real pairs, one pseudo-labelling pass over
/// the unpaired CBCTs, a student initialised from the teacher and trained on
/// real plus pseudo pairs, then Input/Teacher/Student scores on the test set.
///
/// Writes `teacher.bbkd`, `student.bbkd`, `pseudo/`, `manifest_pseudo.json`,
/// `summary.json`, `report.txt` and `timing.json` under `out_dir`. Everything
/// except `timing.json` is identical across reruns with the same inputs.
pub fn run_self_training(
    manifest: &DatasetManifest,
    teacher_cfg: &TrainConfig,
    student_cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<SelfTrainingOutcome> {
    phase("setup", create_dir(out_dir))?;
    for role in [Role::Paired, Role::Unpaired, Role::Test] {
        if manifest.items_with_role(role).next().is_none() {
            return phase(
                "setup",
                Err(Error::Dataset(format!("manifest has no {} items", role.as_str()))),
            );
        }
    }

    tracing::info!("phase 1: teacher");
    let (teacher, teacher_record) = phase("teacher", train_model(manifest, &[Role::Paired], teacher_cfg, None))?;
    phase(
        "teacher",
        crate::io::save_checkpoint(&teacher, &out_dir.join("teacher.bbkd")),
    )?;

    tracing::info!("phase 2: pseudo-labels");
    let pseudo = phase(
        "pseudo-label",
        generate_pseudo_labels(&teacher, manifest, teacher_cfg, &out_dir.join("pseudo")),
    )?;
    phase("pseudo-label", pseudo.save(&out_dir.join("manifest_pseudo.json")))?;

    tracing::info!("phase 3: student");
    let (student, student_record) = phase(
        "student",
        train_model(
            &pseudo,
            &[Role::Paired, Role::PseudoLabeled],
            student_cfg,
            Some(&teacher),
        ),
    )?;
    phase(
        "student",
        crate::io::save_checkpoint(&student, &out_dir.join("student.bbkd")),
    )?;

    tracing::info!("phase 4: evaluation");
    let reports = phase(
        "evaluate",
        (|| {
            Ok(vec![
                evaluate_model(None, manifest, teacher_cfg, "Input")?,
                evaluate_model(Some(&teacher), manifest, teacher_cfg, "Teacher")?,
                evaluate_model(Some(&student), manifest, student_cfg, "Student")?,
            ])
        })(),
    )?;

    let summary = SelfTrainingSummary {
        n_paired: manifest.n_paired,
        n_pseudo: pseudo.n_pseudo,
        n_test: manifest.n_test,
        teacher: teacher_record,
        student: student_record,
        reports,
    };
    phase("report", write_summary(&summary, out_dir))?;
    Ok(SelfTrainingOutcome {
        teacher,
        student,
        summary,
    })
}

fn write_summary(summary: &SelfTrainingSummary, out_dir: &Path) -> Result<()> {
    write_json(summary, &out_dir.join("summary.json"))?;
    let table = render_table(&summary.reports);
    std::fs::write(out_dir.join("report.txt"), &table)
        .map_err(|e| Error::io(format!("writing {}", out_dir.join("report.txt").display()), e))?;
    let timing = serde_json::json!({
        "teacher_seconds": summary.teacher.wall_clock.as_secs_f64(),
        "student_seconds": summary.student.wall_clock.as_secs_f64(),
    });
    write_json(&timing, &out_dir.join("timing.json"))
}
