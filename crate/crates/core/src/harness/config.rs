use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datakit::PhantomParams;
use crate::error::{Error, Result};
use crate::segmenter::{TrainConfig, UNetConfig};
use crate::translator::{Direction, TranslatorConfig};

/// Synthesized data: `n` labelled modality-A slices form the real set, and
/// `translation_pool` further scenes rendered in modality B feed the
/// translator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSource {
    pub n: usize,
    #[serde(default)]
    pub translation_pool: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: PhantomParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslatorStage {
    #[serde(default)]
    pub config: TranslatorConfig,
    #[serde(default)]
    pub pretrained: Option<PathBuf>,
    /// Labelled slices of the other domain. Defaults to the phantom pool.
    #[serde(default)]
    pub source_manifest: Option<PathBuf>,
    /// Direction that maps the source domain onto the real one.
    #[serde(default = "default_direction")]
    pub direction: Direction,
}

fn default_direction() -> Direction {
    Direction::BToA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub ratio: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { ratio: 0.8, seed: 0 }
    }
}

/// One reproducible T vs T_DF experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub real_manifest: Option<PathBuf>,
    /// Ready-made deepfakes; skips the translator stage.
    #[serde(default)]
    pub fake_manifest: Option<PathBuf>,
    #[serde(default)]
    pub phantom: Option<PhantomSource>,
    #[serde(default)]
    pub translator: Option<TranslatorStage>,
    #[serde(default)]
    pub unet: UNetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub fidelity_floor: Option<f64>,
    #[serde(default)]
    pub deepfake_limit: Option<usize>,
    /// Validation samples rendered as overlays per run.
    #[serde(default = "default_overlays")]
    pub overlay_count: usize,
}

fn default_overlays() -> usize {
    4
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    /// Reads a config file; relative paths are taken from the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            Error::validation(format!(
                "{}: schema violation at `{}`: {}",
                path.display(),
                e.path(),
                e.inner()
            ))
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        resolve(base, &mut cfg.output_dir);
        for p in [
            &mut cfg.real_manifest,
            &mut cfg.fake_manifest,
            &mut cfg.unet.pretrained_encoder,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
        if let Some(t) = &mut cfg.translator {
            for p in [&mut t.pretrained, &mut t.source_manifest].into_iter().flatten() {
                resolve(base, p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.real_manifest, &self.phantom) {
            (None, None) => return Err(Error::validation("config needs `real_manifest` or `phantom`")),
            (Some(_), Some(_)) => return Err(Error::validation("`real_manifest` and `phantom` are exclusive")),
            _ => {}
        }
        let mut paths: Vec<&PathBuf> = [&self.real_manifest, &self.fake_manifest, &self.unet.pretrained_encoder]
            .into_iter()
            .flatten()
            .collect();
        if let Some(t) = &self.translator {
            paths.extend([&t.pretrained, &t.source_manifest].into_iter().flatten());
            t.config.validate()?;
            if t.source_manifest.is_none() && self.phantom.as_ref().is_none_or(|p| p.translation_pool == 0) {
                return Err(Error::validation(
                    "translator stage needs `source_manifest` or a phantom `translation_pool`",
                ));
            }
        }
        if let Some(missing) = paths.into_iter().find(|p| !p.exists()) {
            return Err(Error::validation(format!("path does not exist: {}", missing.display())));
        }
        if let Some(p) = &self.phantom {
            if p.n == 0 {
                return Err(Error::validation("phantom.n must be positive"));
            }
            p.params.validate()?;
        }
        if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
            return Err(Error::validation("split.ratio must lie in (0, 1)"));
        }
        self.unet.validate()?;
        self.train.validate()
    }
}
