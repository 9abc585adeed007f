//! Dataset manifests: one JSON file plus per-frame PNG images.
//!
//! ```json
//! {
//!   "version": "viewpose-manifest-v1",
//!   "modality": "synthetic",
//!   "resolution": 64,
//!   "views_per_scene": 2,
//!   "view_names": ["az000", "az090"],
//!   "sequences": [
//!     { "scene_id": "s0000", "subject_id": "p000", "label": 0, "action": "wave",
//!       "views": [["frames/s0000/az000/0000.png", "..."], ["..."]] }
//!   ]
//! }
//! ```
//!
//! Paths are relative to the manifest's directory. RGB frames are 8-bit
//! PNGs; depth masks may be 8- or 16-bit grayscale, mapped linearly to
//! `[-1, 1]` and replicated over three channels.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, ImageReader};
use serde::{Deserialize, Serialize};

use super::{Frame, Modality, MultiViewDataset, Scene};
use crate::error::{Error, Result};
use crate::image::Image;

pub const MANIFEST_VERSION: &str = "viewpose-manifest-v1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    version: String,
    modality: Modality,
    resolution: usize,
    views_per_scene: usize,
    view_names: Vec<String>,
    sequences: Vec<ManifestSequence>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestSequence {
    scene_id: String,
    subject_id: String,
    label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    action: Option<String>,
    views: Vec<Vec<String>>,
}

fn load_err(context: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Load { context: context.into(), message: message.into() }
}

/// Decodes a PNG frame and checks it is `resolution` square.
pub(crate) fn read_image(path: &Path, resolution: usize) -> Result<Image> {
    let ctx = || path.display().to_string();
    let decoded = ImageReader::open(path)
        .map_err(Error::io(path))?
        .decode()
        .map_err(|e| load_err(ctx(), e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if w != resolution || h != resolution {
        return Err(load_err(ctx(), format!("{w}x{h} frame, expected {resolution}x{resolution}")));
    }
    match decoded.color() {
        ColorType::L16 | ColorType::La16 => Image::from_gray16(w, h, decoded.into_luma16().as_raw()),
        ColorType::L8 | ColorType::La8 => {
            let gray = decoded.into_luma8();
            let rgb: Vec<u8> = gray.as_raw().iter().flat_map(|&g| [g, g, g]).collect();
            Image::from_rgb8(w, h, &rgb)
        }
        _ => Image::from_rgb8(w, h, decoded.into_rgb8().as_raw()),
    }
}

/// Writes every frame as PNG and the manifest to `dir`; returns the
/// manifest path. Frames of depth-mask datasets are stored as 16-bit gray.
pub fn write_manifest(dataset: &MultiViewDataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut sequences = Vec::with_capacity(dataset.len());
    for s in &dataset.sequences {
        let mut views = Vec::with_capacity(s.views.len());
        for (v, frames) in s.views.iter().enumerate() {
            let rel_dir = PathBuf::from("frames").join(&s.scene_id).join(&dataset.view_names[v]);
            fs::create_dir_all(dir.join(&rel_dir)).map_err(Error::io(dir.join(&rel_dir)))?;
            let mut paths = Vec::with_capacity(frames.len());
            for (k, f) in frames.iter().enumerate() {
                let rel = rel_dir.join(format!("{k:04}.png"));
                let im = f.load()?;
                let (w, h) = (im.width() as u32, im.height() as u32);
                let target = dir.join(&rel);
                let saved = if dataset.modality == Modality::DepthMask {
                    let plane = &im.data()[..(w * h) as usize];
                    let gray: Vec<u16> =
                        plane.iter().map(|&v| (((v as f64 + 1.0) * 32767.5).round()).clamp(0.0, 65535.0) as u16).collect();
                    image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w, h, gray)
                        .expect("buffer size")
                        .save(&target)
                } else {
                    image::RgbImage::from_raw(w, h, im.to_rgb8()).expect("buffer size").save(&target)
                };
                saved.map_err(|e| load_err(target.display().to_string(), e.to_string()))?;
                paths.push(rel.to_string_lossy().replace('\\', "/"));
            }
            views.push(paths);
        }
        sequences.push(ManifestSequence {
            scene_id: s.scene_id.clone(),
            subject_id: s.subject_id.clone(),
            label: s.label,
            action: s.action.clone(),
            views,
        });
    }
    let manifest = ManifestFile {
        version: MANIFEST_VERSION.into(),
        modality: dataset.modality,
        resolution: dataset.resolution,
        views_per_scene: dataset.views_per_scene,
        view_names: dataset.view_names.clone(),
        sequences,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(Error::io(&path))?;
    Ok(path)
}

/// Parses a manifest (or a directory holding `manifest.json`) and verifies
/// pairing, file presence and frame resolution. Pixels are read lazily.
pub fn load_manifest(path: &Path) -> Result<MultiViewDataset> {
    let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    let m: ManifestFile =
        serde_json::from_str(&text).map_err(|e| load_err(path.display().to_string(), e.to_string()))?;
    if m.version != MANIFEST_VERSION {
        return Err(load_err(
            path.display().to_string(),
            format!("unsupported version {:?}, expected {MANIFEST_VERSION:?}", m.version),
        ));
    }
    if m.views_per_scene != m.view_names.len() {
        return Err(load_err(
            path.display().to_string(),
            format!("views_per_scene {} but {} view names", m.views_per_scene, m.view_names.len()),
        ));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut scenes = Vec::with_capacity(m.sequences.len());
    for s in m.sequences {
        let ctx = format!("sequence {}", s.scene_id);
        let lens: Vec<usize> = s.views.iter().map(Vec::len).collect();
        if s.views.len() != m.views_per_scene {
            return Err(load_err(ctx, format!("{} views, manifest declares {}", s.views.len(), m.views_per_scene)));
        }
        if lens.iter().any(|&l| l != lens[0]) {
            return Err(load_err(ctx, format!("views have unequal frame counts {lens:?}")));
        }
        let mut views = Vec::with_capacity(s.views.len());
        for rels in &s.views {
            let mut frames = Vec::with_capacity(rels.len());
            for rel in rels {
                let file = base.join(rel);
                let (w, h) = image::image_dimensions(&file)
                    .map_err(|e| load_err(ctx.clone(), format!("frame {}: {e}", file.display())))?;
                if (w as usize, h as usize) != (m.resolution, m.resolution) {
                    return Err(load_err(
                        ctx.clone(),
                        format!("frame {} is {w}x{h}, expected {r}x{r}", file.display(), r = m.resolution),
                    ));
                }
                frames.push(Frame::File { path: file, resolution: m.resolution });
            }
            views.push(frames);
        }
        scenes.push(Scene { scene_id: s.scene_id, subject_id: s.subject_id, label: s.label, action: s.action, views });
    }
    MultiViewDataset::new(scenes, m.resolution, m.modality, m.view_names)
}
