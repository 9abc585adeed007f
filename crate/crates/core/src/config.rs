//! Run configuration: one TOML file, environment overrides, command-line
//! overrides, and a resolved copy written next to every run's outputs.
//!
//! Environment variables prefixed `VIEWPOSE_` override keys; nested keys
//! are joined with a double underscore, so `VIEWPOSE_PRETEXT__EPOCHS=2`
//! sets `pretext.epochs`. Values are parsed as TOML literals and fall back
//! to plain strings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Labeling, MotionClass, SyntheticSceneSpec};
use crate::downstream::HeadConfig;
use crate::error::{Error, Result};
use crate::eval::Protocol;
use crate::model::{LayerWidths, ModelConfig};
use crate::trainer::PretextConfig;

pub const ENV_PREFIX: &str = "VIEWPOSE_";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

/// Camera azimuths used when only a view count is given.
pub const DEFAULT_AZIMUTHS: [f64; 8] = [0.0, 90.0, 45.0, 135.0, 180.0, 270.0, 225.0, 315.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub sequences: usize,
    pub frames: usize,
    /// Number of cameras, taken from the front of [`DEFAULT_AZIMUTHS`]
    /// unless `azimuths_deg` is set.
    pub views: usize,
    pub azimuths_deg: Option<Vec<f64>>,
    pub resolution: usize,
    pub subjects: usize,
    pub motion_classes: Vec<MotionClass>,
    pub labeling: Labeling,
    /// Views used for pretext training.
    pub pretext_views: Vec<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            sequences: 200,
            frames: 16,
            views: 3,
            azimuths_deg: None,
            resolution: 64,
            subjects: 10,
            motion_classes: MotionClass::ALL.to_vec(),
            labeling: Labeling::MotionClass,
            pretext_views: vec![0, 1],
        }
    }
}

impl DataConfig {
    pub fn azimuths(&self) -> Result<Vec<f64>> {
        match &self.azimuths_deg {
            Some(a) => Ok(a.clone()),
            None if self.views <= DEFAULT_AZIMUTHS.len() => Ok(DEFAULT_AZIMUTHS[..self.views].to_vec()),
            None => Err(Error::Config(format!(
                "{} views requested; set data.azimuths_deg for more than {}",
                self.views,
                DEFAULT_AZIMUTHS.len()
            ))),
        }
    }

    pub fn scene_spec(&self, seed: u64) -> Result<SyntheticSceneSpec> {
        Ok(SyntheticSceneSpec {
            motion_classes: self.motion_classes.clone(),
            labeling: self.labeling.clone(),
            azimuths_deg: self.azimuths()?,
            resolution: self.resolution,
            subjects: self.subjects,
            seed,
            ..SyntheticSceneSpec::default()
        })
    }
}

/// Downstream task kind, fixed by the labeling of the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Action classification, reported as accuracy.
    Classify,
    /// Quality scoring, reported as Spearman's rank correlation.
    Score,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub protocol: Protocol,
    /// Views seen in downstream training.
    pub train_views: Vec<usize>,
    /// Held-out views for the cross-view protocol.
    pub test_views: Vec<usize>,
    /// Held-out subject ids for the cross-subject protocol.
    pub test_subjects: Vec<String>,
    pub diagnostics: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::CrossView,
            train_views: vec![0, 1],
            test_views: vec![2],
            test_subjects: vec!["p008".into(), "p009".into()],
            diagnostics: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    pub folds: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { sizes: vec![40, 70, 100, 130, 160, 190], folds: 1 }
    }
}

/// Everything a run needs. Section seeds are overwritten by the root seed
/// during [`RunConfig::resolve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub pretext: PretextConfig,
    pub downstream: HeadConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            model: ModelConfig { n_features: 16, resolution: 64, dropout_rate: 0.5, widths: LayerWidths::scaled(8) },
            pretext: PretextConfig::default(),
            downstream: HeadConfig { hidden: 128, ..HeadConfig::default() },
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (or the defaults) and applies `VIEWPOSE_*` overrides
    /// from `env`.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(Error::io(p))?;
                text.parse::<toml::Table>().map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let mut overrides: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        overrides.sort();
        for (key, raw) in overrides {
            let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(str::to_ascii_lowercase).collect();
            set_path(&mut value, &path, parse_literal(&raw)).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        }
        let config: RunConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn task(&self) -> Task {
        match self.data.labeling {
            Labeling::MotionClass => Task::Classify,
            Labeling::Graded { .. } => Task::Score,
        }
    }

    /// Propagates the root seed and the label count, then checks every
    /// section.
    pub fn resolve(mut self) -> Result<Self> {
        self.pretext.seed = self.seed;
        self.downstream.seed = self.seed;
        self.downstream.n_classes = match self.data.labeling {
            Labeling::MotionClass => self.data.motion_classes.len(),
            Labeling::Graded { levels } => levels,
        };
        if self.model.resolution != self.data.resolution {
            return Err(Error::Config(format!(
                "model.resolution {} differs from data.resolution {}",
                self.model.resolution, self.data.resolution
            )));
        }
        self.model.validate()?;
        self.pretext.validate()?;
        self.downstream.validate()?;
        self.data.scene_spec(self.seed)?.validate()?;
        let views = self.data.azimuths()?.len();
        for v in self.data.pretext_views.iter().chain(&self.eval.train_views).chain(&self.eval.test_views) {
            if *v >= views {
                return Err(Error::Config(format!("view index {v} out of {views} configured views")));
            }
        }
        if self.data.pretext_views.len() < 2 {
            return Err(Error::Config("pretext training needs at least two views".into()));
        }
        if self.data.sequences == 0 || self.data.frames == 0 {
            return Err(Error::Config("need at least one sequence and one frame".into()));
        }
        if self.sweep.sizes.is_empty() || self.sweep.folds == 0 {
            return Err(Error::Config("sweep needs at least one size and one fold".into()));
        }
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Writes the resolved configuration into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        fs::write(&path, self.to_toml()).map_err(Error::io(&path))?;
        Ok(path)
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> std::result::Result<(), String> {
    let (last, parents) = path.split_last().ok_or("empty key")?;
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| format!("{p} is not a table"))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_and_round_trip() {
        let c = RunConfig::default().resolve().unwrap();
        let text = c.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn env_overrides_nested_keys() {
        let env = [
            ("VIEWPOSE_SEED".to_string(), "7".to_string()),
            ("VIEWPOSE_PRETEXT__EPOCHS".to_string(), "3".to_string()),
            ("VIEWPOSE_EVAL__PROTOCOL".to_string(), "CS".to_string()),
            ("OTHER".to_string(), "x".to_string()),
        ];
        let c = RunConfig::load(None, env).unwrap().resolve().unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.pretext.seed, 7);
        assert_eq!(c.pretext.epochs, 3);
        assert_eq!(c.eval.protocol, Protocol::CrossSubject);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let env = [("VIEWPOSE_PRETEXT__EPOCS".to_string(), "3".to_string())];
        assert!(RunConfig::load(None, env).is_err());
    }

    #[test]
    fn view_count_picks_default_azimuths() {
        let d = DataConfig { views: 3, ..Default::default() };
        assert_eq!(d.azimuths().unwrap(), vec![0.0, 90.0, 45.0]);
    }
}
