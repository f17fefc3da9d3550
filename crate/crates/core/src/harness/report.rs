//! Experiment report model and its markdown / CSV renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::AggregateRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySummary {
    pub epochs: usize,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    pub final_val_dsc: f64,
    pub best_epoch: Option<usize>,
    pub best_val_dsc: Option<f64>,
}

/// One training arm (`T` or `T_DF`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunBlock {
    pub name: String,
    /// Images per source in this arm's dataset, plus `total`.
    pub tallies: BTreeMap<String, usize>,
    pub n_train: usize,
    pub n_val: usize,
    pub history: HistorySummary,
    pub aggregates: Vec<AggregateRow>,
    pub metrics_csv: PathBuf,
    pub history_csv: PathBuf,
    pub overlays: Vec<PathBuf>,
    pub checkpoint: PathBuf,
    /// SHA-256 of the model, optimizer and seed settings.
    pub config_hash: String,
    /// SHA-256 of the training sample id list.
    pub training_set_hash: String,
    pub validation_ids: Vec<String>,
}

impl RunBlock {
    pub fn aggregate(&self, metric: &str) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|r| r.metric == metric)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub version: String,
    pub seed: u64,
    pub split_seed: u64,
    pub config_hash: String,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub t: RunBlock,
    pub t_df: Option<RunBlock>,
    /// Why `t_df` is missing, when it is.
    pub t_df_absent: Option<String>,
    #[serde(default)]
    pub deepfakes: Option<super::pipeline::DeepfakeStats>,
    pub environment: Environment,
}

impl ExperimentReport {
    pub fn runs(&self) -> Vec<&RunBlock> {
        std::iter::once(&self.t).chain(self.t_df.as_ref()).collect()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes") + "\n";
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// Report columns with their decimal places.
pub const TABLE_COLUMNS: [(&str, &str, usize); 4] =
    [("DSC", "dsc", 2), ("JSC", "jsc", 2), ("MAD", "mad", 3), ("HD", "hd", 2)];

/// Published results of the original study on clinical data, shown for
/// side-by-side reading only.
pub const PUBLISHED_REFERENCE: [(&str, [(f64, f64); 4]); 2] = [
    ("T", [(0.53, 0.28), (0.41, 0.26), (0.084, 0.088), (0.27, 0.08)]),
    ("T_DF", [(0.59, 0.26), (0.46, 0.25), (0.061, 0.056), (0.25, 0.05)]),
];

pub fn format_cell(mean: f64, std: f64, decimals: usize) -> String {
    if mean.is_nan() {
        return "n/a".into();
    }
    format!("{mean:.decimals$} ± {std:.decimals$}")
}

/// `DSC | JSC | MAD | HD` cells for one run, pipe separated.
pub fn table_cells(run: &RunBlock) -> String {
    TABLE_COLUMNS
        .iter()
        .map(|&(_, key, d)| match run.aggregate(key) {
            Some(r) if !r.absent => format_cell(r.mean, r.std, d),
            _ => "n/a".into(),
        })
        .collect::<Vec<_>>()
        .join(" | ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
}

pub fn render_markdown(report: &ExperimentReport, base: &Path) -> String {
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    let mut s = String::new();
    let _ = writeln!(s, "# Segmentation with and without deepfake augmentation\n");
    let _ = writeln!(s, "| Run | DSC | JSC | MAD | HD | Train | Val |");
    let _ = writeln!(s, "|---|---|---|---|---|---|---|");
    for run in report.runs() {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} |",
            run.name,
            table_cells(run),
            run.n_train,
            run.n_val
        );
    }
    if let Some(why) = &report.t_df_absent {
        let _ = writeln!(s, "\nT_DF: absent ({why}).");
    }
    let _ = writeln!(
        s,
        "\nMAD and HD are normalized by the image diagonal. Distance columns exclude samples where a mask is empty."
    );
    for run in report.runs() {
        let _ = writeln!(s, "\n## {}\n", run.name);
        let tallies: Vec<String> = run.tallies.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        let _ = writeln!(s, "- images: {}", tallies.join(", "));
        let h = &run.history;
        let _ = writeln!(
            s,
            "- training: {} epochs, final train loss {:.4}, final val loss {:.4}, final val DSC {:.4}",
            h.epochs, h.final_train_loss, h.final_val_loss, h.final_val_dsc
        );
        if let (Some(e), Some(d)) = (h.best_epoch, h.best_val_dsc) {
            let _ = writeln!(s, "- best val DSC {d:.4} at epoch {e}");
        }
        let _ = writeln!(s, "- per-sample metrics: [{0}]({0})", rel(&run.metrics_csv));
        let _ = writeln!(s, "- checkpoint: `{}`", rel(&run.checkpoint));
        for o in &run.overlays {
            let name = o
                .file_stem()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let _ = writeln!(s, "\n![{} {name}]({})", run.name, rel(o));
        }
    }
    let _ = writeln!(
        s,
        "\n## Published reference values\n\nReported by the original study on four clinical datasets at full scale. \
         They are listed for comparison and are not expected outputs of this run.\n"
    );
    let _ = writeln!(s, "| Run | DSC | JSC | MAD | HD |");
    let _ = writeln!(s, "|---|---|---|---|---|");
    for (name, cells) in PUBLISHED_REFERENCE {
        let row: Vec<String> = cells
            .iter()
            .zip(TABLE_COLUMNS)
            .map(|(&(m, sd), (_, _, d))| format_cell(m, sd, d))
            .collect();
        let _ = writeln!(s, "| {name} | {} |", row.join(" | "));
    }
    let e = &report.environment;
    let _ = writeln!(
        s,
        "\nseed {} · split seed {} · config {} · {} · dfseg {}",
        e.seed, e.split_seed, e.config_hash, e.dtype, e.version
    );
    s
}

/// Machine-readable columns, in order.
pub const CSV_COLUMNS: [&str; 15] = [
    "run",
    "n_train",
    "n_val",
    "dsc_mean",
    "dsc_std",
    "jsc_mean",
    "jsc_std",
    "mad_mean",
    "mad_std",
    "hd_mean",
    "hd_std",
    "mad_px_mean",
    "mad_px_std",
    "hd_px_mean",
    "hd_px_std",
];

/// One parsed row of `report.csv`. Cells are `(mean, std)` keyed by metric.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportCsvRow {
    pub run: String,
    pub n_train: usize,
    pub n_val: usize,
    pub cells: BTreeMap<String, (f64, f64)>,
}

pub fn render_csv(report: &ExperimentReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    for run in report.runs() {
        let mut rec = vec![run.name.clone(), run.n_train.to_string(), run.n_val.to_string()];
        for m in ["dsc", "jsc", "mad", "hd", "mad_px", "hd_px"] {
            let (mean, std) = run.aggregate(m).map_or((f64::NAN, f64::NAN), |r| (r.mean, r.std));
            // Display for f64 is the shortest string that parses back exactly
            rec.push(mean.to_string());
            rec.push(std.to_string());
        }
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportCsvRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| Error::validation(e.to_string()))?.clone();
    if headers.iter().ne(CSV_COLUMNS) {
        return Err(Error::validation("report.csv columns do not match"));
    }
    let bad = |what: &str| Error::validation(format!("report.csv: bad {what}"));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::validation(e.to_string()))?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(CSV_COLUMNS[i]));
        let mut cells = BTreeMap::new();
        for (k, m) in ["dsc", "jsc", "mad", "hd", "mad_px", "hd_px"].iter().enumerate() {
            cells.insert(m.to_string(), (num(3 + 2 * k)?, num(4 + 2 * k)?));
        }
        rows.push(ReportCsvRow {
            run: rec[0].to_string(),
            n_train: rec[1].parse().map_err(|_| bad("n_train"))?,
            n_val: rec[2].parse().map_err(|_| bad("n_val"))?,
            cells,
        });
    }
    Ok(rows)
}

/// Writes `report.md` or `report.csv` into `dir` and returns its path.
pub fn render_report(report: &ExperimentReport, format: ReportFormat, dir: &Path) -> Result<PathBuf> {
    let (name, text) = match format {
        ReportFormat::Markdown => ("report.md", render_markdown(report, dir)),
        ReportFormat::Csv => ("report.csv", render_csv(report)),
    };
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
