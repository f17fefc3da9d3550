//! Dataset manifests: JSON lists of slice files with split labels.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};

use dfseg_nn::Scalar;
use serde::{Deserialize, Serialize};

use super::imageio;
use super::preprocess::{preprocess_mask, preprocess_slice};
use crate::error::{Error, Result};
use crate::{Image, Mask};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    #[serde(rename = "MR")]
    Mr,
    #[serde(rename = "CT")]
    Ct,
    #[serde(rename = "FAKE")]
    Fake,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Mr => "MR",
            Domain::Ct => "CT",
            Domain::Fake => "FAKE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// Translation fidelity recorded for generated samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    pub mse: f64,
    pub ssim: f64,
}

/// One manifest row. Paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRef {
    pub id: String,
    pub image_path: PathBuf,
    pub mask_path: Option<PathBuf>,
    pub domain: Domain,
    pub source: String,
    pub split: Option<Split>,
    pub fidelity: Option<Fidelity>,
}

/// A slice with pixels loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSample<T> {
    pub id: String,
    pub image: Image<T>,
    pub mask: Option<Mask>,
    pub domain: Domain,
    pub source: String,
    pub split: Option<Split>,
}

impl<T: Scalar> SliceSample<T> {
    /// The mask, or an all-background mask of the image's shape.
    pub fn mask_or_empty(&self) -> Mask {
        self.mask
            .clone()
            .unwrap_or_else(|| Mask::from_elem(self.image.dim(), false))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    pub samples: Vec<SampleRef>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    version: u32,
    samples: Vec<EntryFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryFile {
    id: String,
    image_path: String,
    mask_path: Option<String>,
    domain: Domain,
    source: String,
    split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ssim: Option<f64>,
}

impl DatasetManifest {
    pub fn new(samples: Vec<SampleRef>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.id.as_str()).collect()
    }

    /// Per-source tally.
    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for s in &self.samples {
            *out.entry(s.source.clone()).or_insert(0) += 1;
        }
        out
    }

    pub fn domain_counts(&self) -> BTreeMap<Domain, usize> {
        let mut out = BTreeMap::new();
        for s in &self.samples {
            *out.entry(s.domain).or_insert(0) += 1;
        }
        out
    }

    /// Samples carrying the given split label, in manifest order.
    pub fn subset(&self, split: Split) -> DatasetManifest {
        DatasetManifest::new(
            self.samples
                .iter()
                .filter(|s| s.split == Some(split))
                .cloned()
                .collect(),
        )
    }

    pub fn has_splits(&self) -> bool {
        self.samples.iter().any(|s| s.split.is_some())
    }

    /// Checks id uniqueness and that split labels are all-or-nothing.
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::validation(format!(
                "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        let mut seen = HashSet::new();
        for (i, s) in self.samples.iter().enumerate() {
            if s.id.is_empty() {
                return Err(Error::validation(format!("samples[{i}].id: empty id")));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::validation(format!("samples[{i}].id: duplicate id `{}`", s.id)));
            }
        }
        let labelled = self.samples.iter().filter(|s| s.split.is_some()).count();
        if labelled != 0 && labelled != self.samples.len() {
            return Err(Error::validation(format!(
                "split labels must cover all samples or none ({labelled} of {} labelled)",
                self.samples.len()
            )));
        }
        Ok(())
    }

    /// Loads a single sample, resizing to `size × size` when given and
    /// min-max normalizing the image.
    pub fn load_sample<T: Scalar>(&self, index: usize, size: Option<usize>) -> Result<SliceSample<T>> {
        let s = &self.samples[index];
        let raw = imageio::read_intensity::<T>(&s.image_path)?;
        let mask = match &s.mask_path {
            Some(p) => {
                let m = imageio::read_mask(p)?;
                if m.dim() != raw.dim() {
                    return Err(Error::validation(format!(
                        "sample `{}`: mask is {:?} but image is {:?}",
                        s.id,
                        m.dim(),
                        raw.dim()
                    )));
                }
                Some(preprocess_mask(&m, size))
            }
            None => None,
        };
        Ok(SliceSample {
            id: s.id.clone(),
            image: preprocess_slice(&raw, size),
            mask,
            domain: s.domain,
            source: s.source.clone(),
            split: s.split,
        })
    }

    pub fn load_all<T: Scalar>(&self, size: Option<usize>) -> Result<Vec<SliceSample<T>>> {
        (0..self.len()).map(|i| self.load_sample(i, size)).collect()
    }

    pub fn to_json(&self, base: &Path) -> String {
        let file = ManifestFile {
            version: self.version,
            samples: self
                .samples
                .iter()
                .map(|s| EntryFile {
                    id: s.id.clone(),
                    image_path: relative_to(&s.image_path, base),
                    mask_path: s.mask_path.as_deref().map(|p| relative_to(p, base)),
                    domain: s.domain,
                    source: s.source.clone(),
                    split: s.split,
                    mse: s.fidelity.map(|f| f.mse),
                    ssim: s.fidelity.map(|f| f.ssim),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("manifest serializes") + "\n"
    }

    /// Writes the manifest with paths relative to its own directory where
    /// possible.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        if !base.as_os_str().is_empty() {
            fs::create_dir_all(base).map_err(|e| Error::io(base, e))?;
        }
        fs::write(path, self.to_json(base)).map_err(|e| Error::io(path, e))
    }
}

/// Reads and validates a manifest, checking that every referenced file
/// exists.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let file: ManifestFile = serde_path_to_error::deserialize(de).map_err(|e| {
        Error::validation(format!(
            "{}: schema violation at `{}`: {}",
            path.display(),
            e.path(),
            e.inner()
        ))
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    let resolve = |p: &str| {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let samples = file
        .samples
        .into_iter()
        .map(|e| {
            let fidelity = match (e.mse, e.ssim) {
                (Some(mse), Some(ssim)) => Some(Fidelity { mse, ssim }),
                _ => None,
            };
            SampleRef {
                image_path: resolve(&e.image_path),
                mask_path: e.mask_path.as_deref().map(resolve),
                id: e.id,
                domain: e.domain,
                source: e.source,
                split: e.split,
                fidelity,
            }
        })
        .collect();
    let manifest = DatasetManifest {
        version: file.version,
        samples,
    };
    manifest.validate()?;
    for s in &manifest.samples {
        for p in std::iter::once(&s.image_path).chain(s.mask_path.as_ref()) {
            if !p.is_file() {
                return Err(Error::Load {
                    path: p.clone(),
                    reason: format!("referenced by sample `{}` does not exist", s.id),
                });
            }
        }
    }
    Ok(manifest)
}

fn absolute(p: &Path) -> PathBuf {
    let abs = if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir()
            .map(|d| d.join(p))
            .unwrap_or_else(|_| p.to_path_buf())
    };
    let mut out = PathBuf::new();
    for c in abs.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

/// `path` relative to `base` when it lies under it; absolute otherwise.
fn relative_to(path: &Path, base: &Path) -> String {
    let (p, b) = (absolute(path), absolute(base));
    match p.strip_prefix(&b) {
        Ok(rel) => rel.to_string_lossy().into_owned(),
        Err(_) => p.to_string_lossy().into_owned(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn write_sample(dir: &Path, id: &str) -> SampleRef {
        let img: Image<f64> = Array2::from_shape_fn((4, 4), |(y, x)| (y * 4 + x) as f64 / 15.0);
        let p = dir.join(format!("{id}.png"));
        imageio::write_gray16(&p, &img).unwrap();
        SampleRef {
            id: id.into(),
            image_path: p,
            mask_path: None,
            domain: Domain::Mr,
            source: "unit".into(),
            split: None,
            fidelity: None,
        }
    }

    #[test]
    fn empty_manifest_has_zero_counts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        fs::write(&p, r#"{"version": 1, "samples": []}"#).unwrap();
        let m = load_manifest(&p).unwrap();
        assert!(m.is_empty());
        assert!(m.counts().is_empty());
    }

    #[test]
    fn missing_image_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        fs::write(
            &p,
            r#"{"version":1,"samples":[{"id":"a","image_path":"gone.png","mask_path":null,"domain":"MR","source":"x","split":null}]}"#,
        )
        .unwrap();
        let err = load_manifest(&p).unwrap_err();
        assert!(err.to_string().contains("gone.png"), "{err}");
        assert!(err.is_validation());
    }

    #[test]
    fn schema_violation_reports_field_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        fs::write(
            &p,
            r#"{"version":1,"samples":[{"id":"a","image_path":"a.png","mask_path":null,"domain":"PET","source":"x","split":null}]}"#,
        )
        .unwrap();
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("samples[0].domain"), "{err}");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_sample(dir.path(), "a");
        let m = DatasetManifest::new(vec![a.clone(), a]);
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert!(load_manifest(&p).unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn save_then_load_preserves_order_and_ids() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<_> = ["c", "a", "b"].iter().map(|id| write_sample(dir.path(), id)).collect();
        let m = DatasetManifest::new(samples);
        let p = dir.path().join("sub").join("m.json");
        m.save(&p).unwrap();
        let back = load_manifest(&p).unwrap();
        assert_eq!(back.ids(), vec!["c", "a", "b"]);
        assert_eq!(back.counts()["unit"], 3);
        let s: SliceSample<f32> = back.load_sample(1, Some(8)).unwrap();
        assert_eq!(s.image.dim(), (8, 8));
    }

    #[test]
    fn paths_inside_manifest_dir_are_written_relative() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(vec![write_sample(dir.path(), "a")]);
        let json = m.to_json(dir.path());
        assert!(json.contains(r#""image_path": "a.png""#), "{json}");
    }

    #[test]
    fn partial_split_labels_are_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = write_sample(dir.path(), "a");
        a.split = Some(Split::Train);
        let b = write_sample(dir.path(), "b");
        assert!(DatasetManifest::new(vec![a, b]).validate().is_err());
    }
}
