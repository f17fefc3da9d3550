//! Command-line front end. Exit codes: 0 success, 1 validation error
//! (including bad usage), 2 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use crate::datakit::{generate_phantom_dataset, load_manifest, split_dataset, DatasetManifest, PhantomParams, Split};
use crate::error::{Error, Result};
use crate::evalkit::{aggregate, write_metrics_csv, AggregateRow};
use crate::harness::{
    evaluate_model, render_report, run_comparison, Elem, ExperimentConfig, ExperimentReport, ReportFormat,
};
use crate::segmenter::{build_unet, train_segmenter, write_history_csv, SegModelBundle, TrainConfig, UNetConfig};
use crate::translator::{
    build_cyclegan, generate_deepfake_set, train_translator, CycleGanBundle, DeepfakeOptions, Direction,
    TranslatorConfig,
};
use crate::Image;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "dfseg",
    version,
    about = "Deepfake slice augmentation for lesion segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a two-modality phantom dataset.
    Phantom(PhantomArgs),
    /// Fine-tune the translator and generate deepfakes.
    Translate(TranslateArgs),
    /// Train the segmenter on a manifest.
    Train(TrainArgs),
    /// Metrics of a segmenter checkpoint on a manifest.
    Evaluate(EvaluateArgs),
    /// Full T vs T_DF comparison from a config file.
    Compare(CompareArgs),
    /// Re-render the tables of a finished comparison.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct PhantomArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "phantom")]
    out: PathBuf,
    /// Canvas side; lesion sizes scale with it.
    #[arg(long, default_value_t = 256)]
    size: usize,
    /// JSON file with full phantom parameters; overrides --size.
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TranslateArgs {
    /// Manifest of the target (real) domain A.
    #[arg(long)]
    domain_a: PathBuf,
    /// Manifest of domain B.
    #[arg(long)]
    domain_b: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Translator config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parameter file or checkpoint to start from.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    /// Skip training and use this translator checkpoint.
    #[arg(long, conflicts_with = "pretrained")]
    checkpoint: Option<PathBuf>,
    /// `b2a` turns labelled B slices into fakes for domain A.
    #[arg(long, default_value = "b2a", value_parser = parse_direction)]
    direction: Direction,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    fidelity_floor: Option<f64>,
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// U-Net config JSON.
    #[arg(long)]
    unet_config: Option<PathBuf>,
    /// Training config JSON.
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    size: Option<usize>,
    /// Used when the manifest has no split column.
    #[arg(long, default_value_t = 0.8)]
    split_ratio: f64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitSel {
    Train,
    Val,
    All,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitSel::All)]
    split: SplitSel,
    /// Per-sample metrics CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 8)]
    batch: usize,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatSel {
    Markdown,
    Csv,
    Both,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Output directory of a `compare` run.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatSel::Both)]
    format: FormatSel,
}

fn parse_direction(s: &str) -> std::result::Result<Direction, String> {
    Direction::parse(s).ok_or_else(|| format!("unknown direction `{s}` (use a2b or b2a)"))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        Error::validation(format!(
            "{}: schema violation at `{}`: {}",
            path.display(),
            e.path(),
            e.inner()
        ))
    })
}

fn print_aggregates(rows: &[AggregateRow]) {
    println!(
        "{:<8} {:>10} {:>10} {:>5} {:>9}",
        "metric", "mean", "std", "n", "excluded"
    );
    for r in rows {
        println!(
            "{:<8} {:>10.4} {:>10.4} {:>5} {:>9}",
            r.metric, r.mean, r.std, r.n, r.excluded
        );
    }
}

fn phantom(a: PhantomArgs) -> Result<()> {
    let params = match &a.params {
        Some(p) => read_json::<PhantomParams>(p)?,
        None => PhantomParams::with_canvas(a.size),
    };
    let set = generate_phantom_dataset(a.n, &params, a.seed, &a.out)?;
    println!(
        "wrote {} scenes to {} (manifest_a.json: {}, manifest_b.json: {})",
        a.n,
        a.out.display(),
        set.modality_a.len(),
        set.modality_b.len()
    );
    Ok(())
}

fn images(m: &DatasetManifest, size: usize) -> Result<Vec<Image<Elem>>> {
    Ok(m.load_all::<Elem>(Some(size))?.into_iter().map(|s| s.image).collect())
}

fn translate(a: TranslateArgs) -> Result<()> {
    let domain_a = load_manifest(&a.domain_a)?;
    let domain_b = load_manifest(&a.domain_b)?;
    let bundle = if let Some(dir) = &a.checkpoint {
        CycleGanBundle::<Elem>::load(dir)?
    } else {
        let mut config = match &a.config {
            Some(p) => read_json::<TranslatorConfig>(p)?,
            None => TranslatorConfig::default(),
        };
        if let Some(e) = a.epochs {
            config.epochs = e;
        }
        if let Some(s) = a.seed {
            config.seed = s;
        }
        config.validate()?;
        let n = config.image_size;
        let bundle = build_cyclegan::<Elem>(&config, a.pretrained.as_deref())?;
        let (bundle, history) = train_translator(bundle, &images(&domain_a, n)?, &images(&domain_b, n)?, &config)?;
        if let Some(last) = history.last() {
            println!(
                "epoch {}: cyc {:.4} adv_G {:.4} adv_F {:.4}",
                last.epoch, last.cyc, last.adv_g, last.adv_f
            );
        }
        bundle.save(&a.out.join("checkpoint"))?;
        bundle
    };
    let source = match a.direction {
        Direction::BToA => &domain_b,
        Direction::AToB => &domain_a,
    };
    let opts = DeepfakeOptions {
        fidelity_floor: a.fidelity_floor,
        limit: a.limit,
    };
    let summary = generate_deepfake_set(&bundle, source, a.direction, &opts, &a.out.join("deepfakes"))?;
    println!(
        "emitted {} deepfakes ({} below the fidelity floor, {} failed) -> {}",
        summary.emitted,
        summary.dropped.len(),
        summary.failures.len(),
        summary.manifest_path.display()
    );
    for (id, why) in &summary.failures {
        log::warn!("{id}: {why}");
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut unet = match &a.unet_config {
        Some(p) => read_json::<UNetConfig>(p)?,
        None => UNetConfig::default(),
    };
    let mut tc = match &a.train_config {
        Some(p) => read_json::<TrainConfig>(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.size {
        unet.input_size = s;
    }
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    if let Some(s) = a.seed {
        tc.seed = s;
        unet.seed = s;
    }
    unet.validate()?;
    tc.validate()?;
    let mut manifest = load_manifest(&a.manifest)?;
    if !manifest.has_splits() {
        manifest = split_dataset(&manifest, a.split_ratio, a.split_seed)?;
        manifest.save(&a.out.join("manifest.json"))?;
    }
    let size = unet.input_size;
    let train = manifest.subset(Split::Train).load_all::<Elem>(Some(size))?;
    let val = manifest.subset(Split::Val).load_all::<Elem>(Some(size))?;
    let bundle = build_unet::<Elem>(&unet)?;
    let (bundle, history) = train_segmenter(bundle, &train, &val, &tc)?;
    bundle.save(&a.out.join("final"), tc.seed)?;
    if let Some(best) = bundle.best_model() {
        best.save(&a.out.join("best"), tc.seed)?;
    }
    write_history_csv(&a.out.join("history.csv"), &history)?;
    if let Some(h) = history.last() {
        println!(
            "epoch {}: train loss {:.4} val loss {:.4} val DSC {:.4}",
            h.epoch, h.train_loss, h.val_loss, h.val_dsc
        );
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut bundle = SegModelBundle::<Elem>::load(&a.checkpoint)?;
    if let Some(t) = a.threshold {
        bundle.config.out_threshold = t;
    }
    let manifest = load_manifest(&a.manifest)?;
    let manifest = match a.split {
        SplitSel::All => manifest,
        SplitSel::Train => manifest.subset(Split::Train),
        SplitSel::Val => manifest.subset(Split::Val),
    };
    if manifest.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} has no samples in the selected split",
            a.manifest.display()
        )));
    }
    let n = bundle.config.input_size;
    let samples = manifest.load_all::<Elem>(None)?;
    if let Some(s) = samples.iter().find(|s| s.image.dim() != (n, n)) {
        let (h, w) = s.image.dim();
        return Err(Error::validation(format!(
            "size mismatch: checkpoint expects {n}x{n} inputs, sample `{}` is {h}x{w}",
            s.id
        )));
    }
    let records = evaluate_model(&bundle, &samples, a.batch)?;
    if let Some(out) = &a.out {
        write_metrics_csv(out, &records)?;
    }
    print_aggregates(&aggregate(&records)?);
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let config = ExperimentConfig::load(&a.config)?;
    let report = run_comparison(&config)?;
    for run in report.runs() {
        println!("{}: {}", run.name, crate::harness::table_cells(run));
    }
    if let Some(why) = &report.t_df_absent {
        println!("T_DF: absent ({why})");
    }
    println!("report: {}", config.output_dir.join("report.md").display());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let report = ExperimentReport::load_json(&a.dir.join("report.json"))?;
    let formats: &[ReportFormat] = match a.format {
        FormatSel::Markdown => &[ReportFormat::Markdown],
        FormatSel::Csv => &[ReportFormat::Csv],
        FormatSel::Both => &[ReportFormat::Markdown, ReportFormat::Csv],
    };
    for &f in formats {
        println!("{}", render_report(&report, f, &a.dir)?.display());
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Phantom(a) => phantom(a),
        Command::Translate(a) => translate(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Compare(a) => compare(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
