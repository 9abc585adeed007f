//! Command implementations behind the `viewpose` executable. Each command
//! takes a resolved [`RunConfig`], writes it next to its outputs, and
//! returns what it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, Task};
use crate::data::{generate_synthetic, load_manifest, write_manifest, MultiViewDataset, SequenceSample};
use crate::downstream::{load_encoder, train_downstream, DownstreamModel, EncoderInit, EpochLog, TrainMode};
use crate::error::{Error, Result};
use crate::eval::{
    accuracy, cross_view_invariance, equivariance_residual, spearman_rank_correlation, uniform_shifts, EvalReport,
    Protocol,
};
use crate::image::Image;
use crate::model::Autoencoder;
use crate::rng;
use crate::trainer::{sweep_latent_size, train_with_progress, SweepReport, TrainOutcome};

pub const HEAD_CHECKPOINT: &str = "head.ckpt";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const SWEEP_FILE: &str = "sweep.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

/// Loads a dataset directory, or renders the configured synthetic set in
/// memory when no directory is given.
pub fn load_or_generate(config: &RunConfig, data: Option<&Path>) -> Result<MultiViewDataset> {
    match data {
        Some(dir) => load_manifest(dir),
        None => generate_synthetic(&config.data.scene_spec(config.seed)?, config.data.sequences, config.data.frames),
    }
}

fn prepare_out(config: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(Error::io(out))?;
    config.write_resolved(out)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(Error::io(path))
}

/// Renders the synthetic set to `out`. A non-empty `out` is an error unless
/// `force` is set, in which case its contents are replaced.
pub fn cmd_generate(config: &RunConfig, out: &Path, force: bool) -> Result<PathBuf> {
    let occupied = out.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false);
    if occupied {
        if !force {
            return Err(Error::invalid(format!("{} exists and is not empty; pass --force to overwrite", out.display())));
        }
        fs::remove_dir_all(out).map_err(Error::io(out))?;
    }
    let dataset = generate_synthetic(&config.data.scene_spec(config.seed)?, config.data.sequences, config.data.frames)?;
    let manifest = write_manifest(&dataset, out)?;
    config.write_resolved(out)?;
    Ok(manifest)
}

/// Pretext training on the configured pretext views.
pub fn cmd_train_pretext(
    config: &RunConfig,
    data: Option<&Path>,
    out: &Path,
    resume: Option<&Path>,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<TrainOutcome> {
    let dataset = load_or_generate(config, data)?.select_views(&config.data.pretext_views)?;
    prepare_out(config, out)?;
    let items = dataset.len() * dataset.view_pairs().len() * config.pretext.tuples_per_scene;
    let per_epoch = items.div_ceil(config.pretext.batch_size) as u64;
    let (mut sum, mut count) = (0.0, 0u64);
    train_with_progress(&dataset, &config.model, &config.pretext, out, resume, &mut |m| {
        sum += m.losses.total;
        count += 1;
        if m.step % per_epoch.max(1) == 0 {
            on_epoch(m.epoch, sum / count as f64);
            (sum, count) = (0.0, 0);
        }
    })
}

/// Training and held-out samples under the configured protocol. CV trains
/// on `train_views` and tests on `test_views` of every scene; CS trains on
/// every view of subjects not in `test_subjects` and tests on the rest.
pub fn protocol_split(config: &RunConfig, dataset: &MultiViewDataset) -> Result<(Vec<SequenceSample>, Vec<SequenceSample>)> {
    match config.eval.protocol {
        Protocol::CrossView => {
            Ok((dataset.sequence_samples(&config.eval.train_views)?, dataset.sequence_samples(&config.eval.test_views)?))
        }
        Protocol::CrossSubject => {
            let held = &config.eval.test_subjects;
            let all: Vec<usize> = (0..dataset.views_per_scene).collect();
            let train = dataset.filter(|s| !held.contains(&s.subject_id)).sequence_samples(&all)?;
            let test = dataset.filter(|s| held.contains(&s.subject_id)).sequence_samples(&all)?;
            Ok((train, test))
        }
    }
}

/// One line of `history.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    #[serde(flatten)]
    pub log: EpochLog,
    pub report: Option<EvalReport>,
}

/// Trains a downstream head. Frozen and fine-tune modes need `encoder`.
/// Each epoch's validation accuracy is written to `history.jsonl`.
pub fn cmd_train_downstream(
    config: &RunConfig,
    data: Option<&Path>,
    encoder: Option<&Path>,
    out: &Path,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<(PathBuf, Vec<HistoryRecord>)> {
    let loaded = match (config.downstream.mode, encoder) {
        (TrainMode::Scratch, _) => None,
        (_, Some(path)) => Some(load_encoder(path)?),
        (_, None) => return Err(Error::invalid("frozen and fine-tune modes need --encoder")),
    };
    let init = match &loaded {
        Some((model, hash)) => EncoderInit::Pretrained { model, hash: hash.clone() },
        None => EncoderInit::Random(config.model.clone()),
    };
    let dataset = load_or_generate(config, data)?;
    let (train, val) = protocol_split(config, &dataset)?;
    prepare_out(config, out)?;
    let mut history = Vec::new();
    let mut report_err = None;
    let run = train_downstream(&train, Some(&val), &init, &config.downstream, &mut |log| {
        let report = log.val_accuracy.map(|a| EvalReport::new("accuracy", a, val.len(), config.eval.protocol));
        let report = match report.transpose() {
            Ok(r) => r,
            Err(e) => {
                report_err.get_or_insert(e);
                None
            }
        };
        history.push(HistoryRecord { log: *log, report });
        on_epoch(log);
    })?;
    if let Some(e) = report_err {
        return Err(e);
    }
    let lines: String = history.iter().map(|h| serde_json::to_string(h).expect("serializable") + "\n").collect();
    let path = out.join(HISTORY_FILE);
    fs::write(&path, lines).map_err(Error::io(&path))?;
    let head = out.join(HEAD_CHECKPOINT);
    run.model.save(&head)?;
    Ok((head, history))
}

/// Accuracy (classification) or SRC (scoring) of a trained head on the
/// protocol's held-out split, broken down per action.
pub fn evaluate_head(config: &RunConfig, model: &DownstreamModel, test: &[SequenceSample]) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::invalid("the held-out split is empty"));
    }
    let mut actions: Vec<String> = test.iter().filter_map(|s| s.action.clone()).collect();
    actions.sort();
    actions.dedup();
    let protocol = config.eval.protocol;
    let report = match config.task() {
        Task::Classify => {
            let pred = model.predict(test)?;
            let labels: Vec<usize> = test.iter().map(|s| s.label).collect();
            let mut r = EvalReport::new("accuracy", accuracy(&pred, &labels)?, test.len(), protocol)?;
            for a in &actions {
                let idx: Vec<usize> = (0..test.len()).filter(|&i| test[i].action.as_ref() == Some(a)).collect();
                let p: Vec<usize> = idx.iter().map(|&i| pred[i]).collect();
                let l: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                r.breakdown.push((a.clone(), accuracy(&p, &l)?));
            }
            r
        }
        Task::Score => {
            let scores = test
                .iter()
                .map(|s| model.score_sequence(&s.frames.iter().map(|f| &**f).collect::<Vec<&Image>>()))
                .collect::<Result<Vec<f64>>>()?;
            let truth: Vec<f64> = test.iter().map(|s| s.label as f64).collect();
            let mut r = EvalReport::new("src", spearman_rank_correlation(&scores, &truth)?, test.len(), protocol)?;
            for a in &actions {
                let idx: Vec<usize> = (0..test.len()).filter(|&i| test[i].action.as_ref() == Some(a)).collect();
                let p: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
                let t: Vec<f64> = idx.iter().map(|&i| truth[i]).collect();
                // An action whose held-out grades are all equal has no
                // defined correlation and is left out of the breakdown.
                match spearman_rank_correlation(&p, &t) {
                    Ok(v) => r.breakdown.push((a.clone(), v)),
                    Err(Error::UndefinedCorrelation(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            r
        }
    };
    Ok(report)
}

/// Invariance diagnostics of a pretext model over every frame of `dataset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub cross_view_invariance: f64,
    pub equivariance_residual: f64,
    pub frames: usize,
}

pub fn diagnostics(config: &RunConfig, model: &Autoencoder<f32>, dataset: &MultiViewDataset) -> Result<Diagnostics> {
    let inv = cross_view_invariance(model, dataset)?;
    let mut shifts = uniform_shifts(dataset.resolution, rng::stream(config.seed, "diagnose-shifts"));
    let eq = equivariance_residual(model, dataset, &mut shifts)?;
    let frames = dataset.sequences.iter().map(|s| s.frame_count() * s.views.len()).sum();
    Ok(Diagnostics { cross_view_invariance: inv, equivariance_residual: eq, frames })
}

/// Evaluates a head on the protocol's held-out split. With `diagnostics`
/// set, the pretext checkpoint in `encoder` is also measured on the
/// held-out scenes.
pub fn cmd_eval(
    config: &RunConfig,
    data: Option<&Path>,
    head: &Path,
    encoder: Option<&Path>,
    out: &Path,
) -> Result<EvalReport> {
    let model = DownstreamModel::load(head)?;
    let dataset = load_or_generate(config, data)?;
    let (_, test) = protocol_split(config, &dataset)?;
    let mut report = evaluate_head(config, &model, &test)?;
    if config.eval.diagnostics {
        let path = encoder.ok_or_else(|| Error::invalid("--diagnostics needs the pretext checkpoint via --encoder"))?;
        let ae = Checkpoint::<f32>::load(path)?.model;
        let held = match config.eval.protocol {
            Protocol::CrossView => dataset.clone(),
            Protocol::CrossSubject => dataset.filter(|s| config.eval.test_subjects.contains(&s.subject_id)),
        };
        let d = diagnostics(config, &ae, &held)?;
        report.diagnostics.insert("cross_view_invariance".into(), d.cross_view_invariance);
        report.diagnostics.insert("equivariance_residual".into(), d.equivariance_residual);
    }
    prepare_out(config, out)?;
    write_json(&out.join(REPORT_FILE), &report)?;
    let txt = out.join("report.txt");
    fs::write(&txt, report.table()).map_err(Error::io(&txt))?;
    Ok(report)
}

/// Latent-size sweep over `sweep.sizes` on the pretext views.
pub fn cmd_sweep(config: &RunConfig, data: Option<&Path>, out: &Path) -> Result<SweepReport> {
    let dataset = load_or_generate(config, data)?.select_views(&config.data.pretext_views)?.materialized()?;
    prepare_out(config, out)?;
    let report = sweep_latent_size(&dataset, &config.model, &config.pretext, &config.sweep.sizes, config.sweep.folds, out)?;
    write_json(&out.join(SWEEP_FILE), &report)?;
    let txt = out.join("sweep.txt");
    fs::write(&txt, report.table()).map_err(Error::io(&txt))?;
    Ok(report)
}

/// Invariance and equivariance diagnostics of a pretext checkpoint on
/// every configured view.
pub fn cmd_diagnose(config: &RunConfig, data: Option<&Path>, checkpoint: &Path, out: &Path) -> Result<Diagnostics> {
    let model = Checkpoint::<f32>::load(checkpoint)?.model;
    let dataset = load_or_generate(config, data)?;
    let d = diagnostics(config, &model, &dataset)?;
    prepare_out(config, out)?;
    write_json(&out.join(DIAGNOSTICS_FILE), &d)?;
    Ok(d)
}
