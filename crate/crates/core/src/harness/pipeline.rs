use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::report::{render_report, Environment, ExperimentReport, HistorySummary, ReportFormat, RunBlock};
use crate::datakit::{
    generate_phantom_scenes, load_manifest, merge_with_deepfakes, split_dataset, DatasetManifest, SliceSample, Split,
};
use crate::error::{Error, Result};
use crate::evalkit::{aggregate, evaluate_pair, overlay, write_metrics_csv, MetricRecord};
use crate::segmenter::{build_unet, train_segmenter, write_history_csv, SegModelBundle};
use crate::translator::{build_cyclegan, generate_deepfake_set, train_translator, DeepfakeOptions};
use crate::{Image, Scalar};

/// Element type of pipeline runs.
pub type Elem = f32;

pub const LOCK_FILE: &str = ".dfseg.lock";

/// Holds the output directory for the lifetime of a run.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Runtime(format!(
                "{} is in use by another run (remove {} if that run is gone)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn stage<R>(name: &'static str, f: impl FnOnce() -> Result<R>) -> Result<R> {
    log::info!("stage `{name}`");
    f().map_err(|e| e.in_stage(name))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepfakeStats {
    pub manifest: PathBuf,
    pub emitted: usize,
    pub dropped: usize,
    pub failures: Vec<(String, String)>,
}

/// Metrics of a model's thresholded predictions on labelled samples.
pub fn evaluate_model<T: Scalar>(
    bundle: &SegModelBundle<T>,
    samples: &[SliceSample<T>],
    batch: usize,
) -> Result<Vec<MetricRecord<f64>>> {
    let images: Vec<&Image<T>> = samples.iter().map(|s| &s.image).collect();
    let preds = bundle.predict_masks(&images, bundle.config.out_threshold, batch)?;
    samples
        .iter()
        .zip(&preds)
        .map(|(s, p)| evaluate_pair(&s.id, &s.mask_or_empty(), p))
        .collect()
}

struct Arm<'a> {
    name: &'static str,
    tag: &'static str,
    dataset: &'a DatasetManifest,
    train: Vec<SliceSample<Elem>>,
}

fn run_arm(config: &ExperimentConfig, arm: Arm, val: &[SliceSample<Elem>]) -> Result<RunBlock> {
    let out = &config.output_dir;
    let bundle = build_unet::<Elem>(&config.unet)?;
    let (bundle, _) = train_segmenter(bundle, &arm.train, val, &config.train)?;
    let ckpt = out.join("checkpoints").join(arm.tag);
    bundle.save(&ckpt.join("final"), config.train.seed)?;
    if let Some(best) = bundle.best_model() {
        best.save(&ckpt.join("best"), config.train.seed)?;
    }
    let history_csv = out.join(format!("history_{}.csv", arm.tag));
    write_history_csv(&history_csv, &bundle.history)?;

    let records = evaluate_model(&bundle, val, config.train.batch)?;
    let metrics_csv = out.join(format!("metrics_{}.csv", arm.tag));
    write_metrics_csv(&metrics_csv, &records)?;
    let aggregates = aggregate(&records)?;

    let overlay_dir = out.join("overlays").join(arm.tag);
    fs::create_dir_all(&overlay_dir).map_err(|e| Error::io(&overlay_dir, e))?;
    let mut overlays = Vec::new();
    let shown: Vec<&SliceSample<Elem>> = val.iter().take(config.overlay_count).collect();
    let images: Vec<&Image<Elem>> = shown.iter().map(|s| &s.image).collect();
    let preds = bundle.predict_masks(&images, config.unet.out_threshold, config.train.batch)?;
    for (s, p) in shown.iter().zip(&preds) {
        let path = overlay_dir.join(format!("{}.png", s.id));
        overlay(&s.mask_or_empty(), p, &s.image)?
            .save(&path)
            .map_err(|e| Error::Runtime(format!("{}: {e}", path.display())))?;
        overlays.push(path);
    }

    let last = bundle.history.last();
    let history = HistorySummary {
        epochs: bundle.history.len(),
        final_train_loss: last.map_or(f64::NAN, |h| h.train_loss),
        final_val_loss: last.map_or(f64::NAN, |h| h.val_loss),
        final_val_dsc: last.map_or(f64::NAN, |h| h.val_dsc),
        best_epoch: bundle.best.as_ref().map(|b| b.epoch),
        best_val_dsc: bundle.best.as_ref().map(|b| b.val_dsc),
    };
    let settings = serde_json::json!({ "unet": config.unet, "train": config.train });
    let train_ids: Vec<&str> = arm.train.iter().map(|s| s.id.as_str()).collect();
    Ok(RunBlock {
        name: arm.name.into(),
        tallies: tallies(arm.dataset),
        n_train: arm.train.len(),
        n_val: val.len(),
        history,
        aggregates,
        metrics_csv,
        history_csv,
        overlays,
        checkpoint: ckpt.join("final"),
        config_hash: sha256_hex(settings.to_string().as_bytes()),
        training_set_hash: sha256_hex(train_ids.join("\n").as_bytes()),
        validation_ids: val.iter().map(|s| s.id.clone()).collect(),
    })
}

/// Real data plus, when configured, the labelled pool the translator maps
/// from.
fn prepare_data(config: &ExperimentConfig) -> Result<(DatasetManifest, Option<DatasetManifest>)> {
    if let Some(p) = &config.phantom {
        let data = config.output_dir.join("data");
        let real = generate_phantom_scenes(0..p.n, &p.params, p.seed, &data.join("phantom"))?.modality_a;
        let pool = if p.translation_pool > 0 {
            let range = p.n..p.n + p.translation_pool;
            Some(generate_phantom_scenes(range, &p.params, p.seed, &data.join("pool"))?.modality_b)
        } else {
            None
        };
        return Ok((real, pool));
    }
    let path = config.real_manifest.as_ref().expect("validated");
    let real = load_manifest(path)?;
    if real.is_empty() {
        return Err(Error::EmptyDataset(format!("{}", path.display())));
    }
    Ok((real, None))
}

/// The full T vs T_DF comparison. Artifacts land in `config.output_dir`:
/// `report.{md,csv,json}`, `metrics_T.csv`, `metrics_TDF.csv`,
/// `history_*.csv`, `overlays/`, `checkpoints/`, `manifests/` and, when
/// generated, `data/` and `deepfakes/`.
pub fn run_comparison(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let _lock = RunLock::acquire(out)?;
    let manifests = out.join("manifests");
    let size = config.unet.input_size;

    let (real, pool) = stage("data", || prepare_data(config))?;
    let real = stage("split", || {
        let m = if real.has_splits() {
            real.validate()?;
            real
        } else {
            split_dataset(&real, config.split.ratio, config.split.seed)?
        };
        if m.subset(Split::Val).is_empty() || m.subset(Split::Train).is_empty() {
            return Err(Error::EmptyDataset("train or validation split is empty".into()));
        }
        m.save(&manifests.join("real.json"))?;
        Ok(m)
    })?;

    let mut deepfakes = None;
    let fakes: Option<DatasetManifest> = if let Some(path) = &config.fake_manifest {
        Some(stage("deepfakes", || load_manifest(path))?)
    } else if let Some(t) = &config.translator {
        let summary = stage("translator", || {
            let source = match &t.source_manifest {
                Some(p) => load_manifest(p)?,
                None => pool.clone().expect("validated"),
            };
            let n = t.config.image_size;
            let domain_a: Vec<Image<Elem>> = real
                .subset(Split::Train)
                .load_all::<Elem>(Some(n))?
                .into_iter()
                .map(|s| s.image)
                .collect();
            let domain_b: Vec<Image<Elem>> = source.load_all::<Elem>(Some(n))?.into_iter().map(|s| s.image).collect();
            let bundle = build_cyclegan::<Elem>(&t.config, t.pretrained.as_deref())?;
            let (bundle, _) = train_translator(bundle, &domain_a, &domain_b, &t.config)?;
            bundle.save(&out.join("checkpoints").join("cyclegan"))?;
            let opts = DeepfakeOptions {
                fidelity_floor: config.fidelity_floor,
                limit: config.deepfake_limit,
            };
            generate_deepfake_set(&bundle, &source, t.direction, &opts, &out.join("deepfakes"))
        })?;
        deepfakes = Some(DeepfakeStats {
            manifest: summary.manifest_path.clone(),
            emitted: summary.emitted,
            dropped: summary.dropped.len(),
            failures: summary.failures.clone(),
        });
        Some(summary.manifest)
    } else {
        None
    };

    let val = stage("load", || real.subset(Split::Val).load_all::<Elem>(Some(size)))?;
    let t = stage("train_T", || {
        let train = real.subset(Split::Train).load_all::<Elem>(Some(size))?;
        run_arm(
            config,
            Arm {
                name: "T",
                tag: "T",
                dataset: &real,
                train,
            },
            &val,
        )
    })?;

    let (t_df, t_df_absent) = match fakes {
        None => (None, Some("no deepfake source configured".to_string())),
        Some(f) if f.is_empty() => (None, Some("the deepfake set is empty".to_string())),
        Some(f) => {
            let block = stage("train_TDF", || {
                f.save(&manifests.join("fake.json"))?;
                let merged = merge_with_deepfakes(&real, &f)?;
                merged.save(&manifests.join("merged.json"))?;
                let train = merged.subset(Split::Train).load_all::<Elem>(Some(size))?;
                run_arm(
                    config,
                    Arm {
                        name: "T_DF",
                        tag: "TDF",
                        dataset: &merged,
                        train,
                    },
                    &val,
                )
            })?;
            (Some(block), None)
        }
    };

    let report = ExperimentReport {
        t,
        t_df,
        t_df_absent,
        deepfakes,
        environment: Environment {
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.train.seed,
            split_seed: config.split.seed,
            config_hash: sha256_hex(serde_json::to_string(config).expect("config serializes").as_bytes()),
            dtype: <Elem as dfseg_nn::Scalar>::DTYPE.name().into(),
        },
    };
    stage("report", || {
        report.save_json(&out.join("report.json"))?;
        render_report(&report, ReportFormat::Markdown, out)?;
        render_report(&report, ReportFormat::Csv, out)?;
        Ok(())
    })?;
    Ok(report)
}

/// Image counts per source for a manifest, plus `total`.
pub fn tallies(m: &DatasetManifest) -> BTreeMap<String, usize> {
    let mut t = m.counts();
    t.insert("total".into(), m.len());
    t
}
