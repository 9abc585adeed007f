//! Multi-view datasets, training tuples and sequence sampling.

mod manifest;
mod sampling;
pub mod synthetic;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub use manifest::{load_manifest, write_manifest, MANIFEST_FILE, MANIFEST_VERSION};
pub use sampling::{clip_split_16, make_training_tuple, subsample_16, TrainingTuple, CLIP_LEN};
pub use synthetic::{generate_synthetic, Labeling, MotionClass, Skeleton, SyntheticSceneSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    RgbMap,
    DepthMask,
    Synthetic,
}

/// One frame, either decoded in memory or an image file read on demand.
#[derive(Clone, Debug, PartialEq)]
pub enum Frame {
    Memory(Arc<Image>),
    File { path: PathBuf, resolution: usize },
}

impl Frame {
    pub fn load(&self) -> Result<Arc<Image>> {
        match self {
            Frame::Memory(im) => Ok(im.clone()),
            Frame::File { path, resolution } => Ok(Arc::new(manifest::read_image(path, *resolution)?)),
        }
    }
}

/// Simultaneous recordings of one scene from every camera.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub subject_id: String,
    pub label: Option<usize>,
    /// Movement type for per-action breakdowns.
    pub action: Option<String>,
    /// `views[v][k]` is frame `k` seen by camera `v`.
    pub views: Vec<Vec<Frame>>,
}

impl Scene {
    pub fn frame_count(&self) -> usize {
        self.views.first().map_or(0, Vec::len)
    }
}

/// Two simultaneous views of one scene.
#[derive(Clone, Copy, Debug)]
pub struct SequencePair<'a> {
    pub view_v: &'a [Frame],
    pub view_w: &'a [Frame],
    pub scene_id: &'a str,
    pub subject_id: &'a str,
    pub label: Option<usize>,
}

impl SequencePair<'_> {
    pub fn len(&self) -> usize {
        self.view_v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.view_v.is_empty()
    }
}

/// One single-view sequence with a label, the unit of downstream training.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub frames: Vec<Arc<Image>>,
    pub label: usize,
    pub subject_id: String,
    pub action: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewDataset {
    pub sequences: Vec<Scene>,
    pub views_per_scene: usize,
    pub resolution: usize,
    pub modality: Modality,
    pub view_names: Vec<String>,
}

impl MultiViewDataset {
    /// Checks pairing and, for in-memory frames, resolution.
    pub fn new(sequences: Vec<Scene>, resolution: usize, modality: Modality, view_names: Vec<String>) -> Result<Self> {
        let views_per_scene = view_names.len();
        if views_per_scene < 2 {
            return Err(Error::invalid("a multi-view dataset needs at least two views"));
        }
        for s in &sequences {
            if s.views.len() != views_per_scene {
                return Err(Error::Load {
                    context: format!("sequence {}", s.scene_id),
                    message: format!("{} views, dataset declares {views_per_scene}", s.views.len()),
                });
            }
            let n = s.frame_count();
            if n == 0 || s.views.iter().any(|v| v.len() != n) {
                let lens: Vec<_> = s.views.iter().map(Vec::len).collect();
                return Err(Error::Load {
                    context: format!("sequence {}", s.scene_id),
                    message: format!("views must have equal, nonzero frame counts, got {lens:?}"),
                });
            }
            for f in s.views.iter().flatten() {
                if let Frame::Memory(im) = f {
                    if im.width() != resolution || im.height() != resolution {
                        return Err(Error::Load {
                            context: format!("sequence {}", s.scene_id),
                            message: format!("{}x{} frame in a {resolution}x{resolution} dataset", im.width(), im.height()),
                        });
                    }
                }
            }
        }
        Ok(Self { sequences, views_per_scene, resolution, modality, view_names })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn pair(&self, scene: usize, v: usize, w: usize) -> Result<SequencePair<'_>> {
        let s = self
            .sequences
            .get(scene)
            .ok_or_else(|| Error::invalid(format!("scene index {scene} out of {}", self.len())))?;
        if v >= self.views_per_scene || w >= self.views_per_scene || v == w {
            return Err(Error::invalid(format!("bad view pair ({v}, {w}) of {}", self.views_per_scene)));
        }
        Ok(SequencePair {
            view_v: &s.views[v],
            view_w: &s.views[w],
            scene_id: &s.scene_id,
            subject_id: &s.subject_id,
            label: s.label,
        })
    }

    /// All unordered view pairs `(v, w)` with `v < w`.
    pub fn view_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.views_per_scene;
        (0..n).flat_map(|v| (v + 1..n).map(move |w| (v, w))).collect()
    }

    /// Loads every file-backed frame into memory.
    pub fn materialized(&self) -> Result<Self> {
        let mut out = self.clone();
        for s in &mut out.sequences {
            for f in s.views.iter_mut().flatten() {
                if matches!(f, Frame::File { .. }) {
                    *f = Frame::Memory(f.load()?);
                }
            }
        }
        Ok(out)
    }

    /// Keeps only the listed views, in the given order.
    pub fn select_views(&self, views: &[usize]) -> Result<Self> {
        if let Some(&bad) = views.iter().find(|&&v| v >= self.views_per_scene) {
            return Err(Error::invalid(format!("view {bad} out of {}", self.views_per_scene)));
        }
        let sequences = self
            .sequences
            .iter()
            .map(|s| Scene { views: views.iter().map(|&v| s.views[v].clone()).collect(), ..s.clone() })
            .collect();
        Ok(Self {
            sequences,
            views_per_scene: views.len(),
            view_names: views.iter().map(|&v| self.view_names[v].clone()).collect(),
            ..self.clone()
        })
    }

    /// Keeps the scenes for which `keep` returns true.
    pub fn filter(&self, keep: impl Fn(&Scene) -> bool) -> Self {
        Self { sequences: self.sequences.iter().filter(|s| keep(s)).cloned().collect(), ..self.clone() }
    }

    pub fn view_index(&self, name: &str) -> Result<usize> {
        self.view_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::invalid(format!("no view named {name:?} in {:?}", self.view_names)))
    }

    /// Sorted distinct subject ids.
    pub fn subjects(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sequences.iter().map(|s| s.subject_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// One labeled sample per (scene, view) for the listed views.
    pub fn sequence_samples(&self, views: &[usize]) -> Result<Vec<SequenceSample>> {
        let mut out = Vec::new();
        for s in &self.sequences {
            let label = s.label.ok_or_else(|| Error::Load {
                context: format!("sequence {}", s.scene_id),
                message: "downstream tasks need labeled sequences".into(),
            })?;
            for &v in views {
                let frames = s
                    .views
                    .get(v)
                    .ok_or_else(|| Error::invalid(format!("view {v} out of {}", self.views_per_scene)))?
                    .iter()
                    .map(Frame::load)
                    .collect::<Result<Vec<_>>>()?;
                out.push(SequenceSample {
                    frames,
                    label,
                    subject_id: s.subject_id.clone(),
                    action: s.action.clone(),
                });
            }
        }
        Ok(out)
    }
}
