//! Metrics and invariance diagnostics.

use std::collections::BTreeMap;
use std::fmt;

use autodiff::Scalar;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::MultiViewDataset;
use crate::error::{Error, Result};
use crate::geometry::{apply_viewpoint, pixel_shift_to_feature_shift, shift_view_specific, CanonicalPose, ShiftVector, Viewpoint};
use crate::image::{Image, BACKGROUND};
use crate::model::Autoencoder;

/// Fraction of exact matches.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::invalid(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::invalid("accuracy of an empty sample"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn spearman_rank_correlation(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::UndefinedCorrelation(format!("{} predictions for {} targets", predicted.len(), truth.len())));
    }
    if predicted.len() < 2 {
        return Err(Error::UndefinedCorrelation("need at least two samples".into()));
    }
    if predicted.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::UndefinedCorrelation("non-finite score".into()));
    }
    let (a, b) = (average_ranks(predicted), average_ranks(truth));
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(&b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("one side has zero rank variance".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Anything that maps images to canonical poses and viewpoints.
pub trait PoseModel {
    fn resolution(&self) -> usize;
    fn canonical_poses(&self, images: &[&Image]) -> Result<Vec<CanonicalPose>>;
    fn viewpoints(&self, images: &[&Image]) -> Result<Vec<Viewpoint>>;
}

impl<T: Scalar> PoseModel for Autoencoder<T> {
    fn resolution(&self) -> usize {
        self.config().resolution
    }

    fn canonical_poses(&self, images: &[&Image]) -> Result<Vec<CanonicalPose>> {
        self.encode_poses(images)
    }

    fn viewpoints(&self, images: &[&Image]) -> Result<Vec<Viewpoint>> {
        self.encode_viewpoints(images)
    }
}

const EVAL_BATCH: usize = 32;

fn pose_mse(a: &nalgebra::Matrix3xX<f64>, b: &nalgebra::Matrix3xX<f64>) -> f64 {
    (a - b).norm_squared() / a.len() as f64
}

/// Mean over simultaneous frame pairs of `MSE(P^v, P^w)` between canonical
/// poses, over every view pair. Lower is more view-invariant.
pub fn cross_view_invariance(model: &dyn PoseModel, dataset: &MultiViewDataset) -> Result<f64> {
    let mut pairs = Vec::new();
    for s in &dataset.sequences {
        for (v, w) in dataset.view_pairs() {
            for (a, b) in s.views[v].iter().zip(&s.views[w]) {
                pairs.push((a, b));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::invalid("cross-view invariance of an empty dataset"));
    }
    let mut sum = 0.0;
    for chunk in pairs.chunks(EVAL_BATCH) {
        let loaded = chunk.iter().map(|(a, b)| Ok((a.load()?, b.load()?))).collect::<Result<Vec<_>>>()?;
        let mut ims: Vec<&Image> = loaded.iter().map(|(a, _)| &**a).collect();
        ims.extend(loaded.iter().map(|(_, b)| &**b));
        let poses = model.canonical_poses(&ims)?;
        let n = chunk.len();
        for i in 0..n {
            sum += pose_mse(poses[i].coords(), poses[n + i].coords());
        }
    }
    Ok(sum / pairs.len() as f64)
}

/// Draws shifts uniformly in `[-W/4, W/4] x [-H/4, H/4]`.
pub fn uniform_shifts<R: Rng>(resolution: usize, mut rng: R) -> impl FnMut() -> ShiftVector {
    let b = (resolution / 4) as i32;
    move || ShiftVector::new(rng.random_range(-b..=b), rng.random_range(-b..=b))
}

/// Mean `MSE(P⊛(I) + Δ, P⊛(I shifted))` over every frame of every view.
///
/// Both view-specific poses use the rotation estimated from the original
/// image; each keeps its own translation, as in the training loss.
pub fn equivariance_residual(
    model: &dyn PoseModel,
    dataset: &MultiViewDataset,
    shifts: &mut dyn FnMut() -> ShiftVector,
) -> Result<f64> {
    let frames: Vec<_> = dataset.sequences.iter().flat_map(|s| s.views.iter().flatten()).collect();
    if frames.is_empty() {
        return Err(Error::invalid("equivariance residual of an empty dataset"));
    }
    let res = model.resolution();
    let mut sum = 0.0;
    for chunk in frames.chunks(EVAL_BATCH) {
        let originals = chunk.iter().map(|f| f.load()).collect::<Result<Vec<_>>>()?;
        let cs: Vec<ShiftVector> = (0..chunk.len()).map(|_| shifts()).collect();
        let shifted: Vec<Image> = originals.iter().zip(&cs).map(|(im, c)| im.shifted(c.dx, c.dy, BACKGROUND)).collect();
        let mut ims: Vec<&Image> = originals.iter().map(|a| &**a).collect();
        ims.extend(shifted.iter());
        let poses = model.canonical_poses(&ims)?;
        let views = model.viewpoints(&ims)?;
        let n = chunk.len();
        for i in 0..n {
            let own = apply_viewpoint(&poses[i], &views[i])?;
            let moved = shift_view_specific(&own, pixel_shift_to_feature_shift(cs[i], res, res)?)?;
            let aug_view = Viewpoint::new(views[i].rotation, views[n + i].translation)?;
            let aug = apply_viewpoint(&poses[n + i], &aug_view)?;
            sum += pose_mse(moved.coords(), aug.coords());
        }
    }
    Ok(sum / frames.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "CV")]
    CrossView,
    #[serde(rename = "CS")]
    CrossSubject,
}

impl Protocol {
    pub fn tag(self) -> &'static str {
        match self {
            Protocol::CrossView => "CV",
            Protocol::CrossSubject => "CS",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cv" => Ok(Protocol::CrossView),
            "cs" => Ok(Protocol::CrossSubject),
            _ => Err(Error::invalid(format!("unknown protocol {s:?}, expected cv or cs"))),
        }
    }
}

/// One evaluated metric with its per-action breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    pub samples: usize,
    pub protocol: Protocol,
    /// Per-action values in row order; the overall value is listed last as
    /// `Average` by [`EvalReport::table`].
    pub breakdown: Vec<(String, f64)>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub diagnostics: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn new(metric: impl Into<String>, value: f64, samples: usize, protocol: Protocol) -> Result<Self> {
        let metric = metric.into();
        if samples == 0 {
            return Err(Error::invalid("an evaluation report needs at least one sample"));
        }
        let range = if metric == "accuracy" { 0.0..=1.0 } else { -1.0..=1.0 };
        if !range.contains(&value) {
            return Err(Error::invalid(format!("{metric} value {value} out of range")));
        }
        Ok(Self { metric, value, samples, protocol, breakdown: Vec::new(), diagnostics: BTreeMap::new() })
    }

    /// One header row of action names plus `Average`, one row of values.
    pub fn table(&self) -> String {
        let mut head = format!("{:<10}", self.protocol.tag());
        let mut row = format!("{:<10}", self.metric);
        for (name, v) in &self.breakdown {
            head.push_str(&format!(" | {name:>8}"));
            row.push_str(&format!(" | {v:>8.4}"));
        }
        head.push_str(&format!(" | {:>8}", "Average"));
        row.push_str(&format!(" | {:>8.4}", self.value));
        let mut out = format!("{head}\n{row}\n");
        for (k, v) in &self.diagnostics {
            out.push_str(&format!("{k}: {v:.6}\n"));
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table())
    }
}
