use std::fs;
use std::path::{Path, PathBuf};

use dfseg_nn::Scalar;
use serde::Serialize;

use super::fidelity::fidelity_metrics;
use super::model::{CycleGanBundle, Direction};
use crate::datakit::imageio::{write_gray16, write_mask};
use crate::datakit::{DatasetManifest, Domain, Fidelity, SampleRef};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeepfakeOptions {
    /// Drop translations whose SSIM to their source is below this value.
    pub fidelity_floor: Option<f64>,
    /// Stop after this many samples have been emitted.
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeepfakeSummary {
    /// The emitted samples, all with domain `FAKE`.
    #[serde(skip)]
    pub manifest: DatasetManifest,
    pub manifest_path: PathBuf,
    pub fidelity_csv: PathBuf,
    pub emitted: usize,
    /// Ids dropped by the fidelity floor.
    pub dropped: Vec<String>,
    /// `(source id, reason)` for samples that could not be produced.
    pub failures: Vec<(String, String)>,
}

pub const FAKE_PREFIX: &str = "FAKE_";
pub const FAKE_SOURCE: &str = "deepfake";

/// Translates every source sample, writes `FAKE_<id>.png` (plus
/// `FAKE_<id>_mask.png` when the source has a mask, which the fake
/// inherits unchanged), `fidelity.csv` and `manifest.json` into `out_dir`.
/// Per-sample failures are collected instead of aborting the run.
pub fn generate_deepfake_set<T: Scalar>(
    bundle: &CycleGanBundle<T>,
    source: &DatasetManifest,
    direction: Direction,
    options: &DeepfakeOptions,
    out_dir: &Path,
) -> Result<DeepfakeSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let size = bundle.config.image_size;
    let mut samples = Vec::new();
    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    let mut failures = Vec::new();
    for i in 0..source.len() {
        if options.limit.is_some_and(|l| samples.len() >= l) {
            break;
        }
        let src_id = source.samples[i].id.clone();
        let result = (|| -> Result<Option<SampleRef>> {
            let sample = source.load_sample::<T>(i, Some(size))?;
            let fake = bundle.translate(&sample.image, direction)?;
            let fid = fidelity_metrics(&sample.image, &fake)?;
            if options.fidelity_floor.is_some_and(|f| fid.ssim < f) {
                return Ok(None);
            }
            let id = format!("{FAKE_PREFIX}{}", sample.id);
            let image_path = out_dir.join(format!("{id}.png"));
            write_gray16(&image_path, &fake)?;
            let mask_path = match &sample.mask {
                Some(m) => {
                    let p = out_dir.join(format!("{id}_mask.png"));
                    write_mask(&p, m)?;
                    Some(p)
                }
                None => None,
            };
            Ok(Some(SampleRef {
                id,
                image_path,
                mask_path,
                domain: Domain::Fake,
                source: FAKE_SOURCE.into(),
                split: None,
                fidelity: Some(Fidelity {
                    mse: fid.mse,
                    ssim: fid.ssim,
                }),
            }))
        })();
        match result {
            Ok(Some(s)) => {
                let f = s.fidelity.expect("set above");
                rows.push((s.id.clone(), f.mse, f.ssim));
                samples.push(s);
            }
            Ok(None) => dropped.push(src_id),
            Err(e) => {
                log::warn!("deepfake for `{src_id}` failed: {e}");
                failures.push((src_id, e.to_string()));
            }
        }
    }
    let fidelity_csv = out_dir.join("fidelity.csv");
    let mut w = csv::Writer::from_path(&fidelity_csv)
        .map_err(|e| Error::Runtime(format!("{}: {e}", fidelity_csv.display())))?;
    w.write_record(["id", "mse", "ssim"])
        .map_err(|e| Error::Runtime(e.to_string()))?;
    for (id, m, s) in &rows {
        w.write_record([id.as_str(), &m.to_string(), &s.to_string()])
            .map_err(|e| Error::Runtime(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&fidelity_csv, e))?;
    let manifest = DatasetManifest::new(samples);
    let manifest_path = out_dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    Ok(DeepfakeSummary {
        emitted: manifest.len(),
        manifest,
        manifest_path,
        fidelity_csv,
        dropped,
        failures,
    })
}
