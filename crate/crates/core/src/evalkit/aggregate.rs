use dfseg_nn::Scalar;
use serde::{Deserialize, Serialize};

use super::records::MetricRecord;
use super::surface::DegenerateFlag;
use crate::error::{Error, Result};

/// Metric names in report column order. `mad` and `hd` are the
/// diagonal-normalized distances.
pub const METRICS: [&str; 6] = ["dsc", "jsc", "mad", "hd", "mad_px", "hd_px"];

/// Mean and population standard deviation of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    /// Records left out because of a degenerate surface flag.
    pub excluded: usize,
    /// No record contributed.
    pub absent: bool,
}

/// `(mean, sqrt(mean squared deviation))`.
pub fn mean_std<T: Scalar>(values: &[T]) -> (T, T) {
    if values.is_empty() {
        return (T::nan(), T::nan());
    }
    let n = T::from_usize(values.len()).unwrap();
    let mean = values.iter().copied().sum::<T>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, var.sqrt())
}

/// One row per entry of [`METRICS`]. Distance rows skip records flagged
/// degenerate and report how many were skipped.
pub fn aggregate<T: Scalar>(records: &[MetricRecord<T>]) -> Result<Vec<AggregateRow>> {
    if records.is_empty() {
        return Err(Error::validation("cannot aggregate an empty record list"));
    }
    let regular: Vec<&MetricRecord<T>> = records.iter().filter(|r| r.flag == DegenerateFlag::None).collect();
    let excluded = records.len() - regular.len();
    let row = |metric: &str, values: Vec<T>, excluded: usize| {
        let (mean, std) = mean_std(&values);
        AggregateRow {
            metric: metric.to_string(),
            mean: mean.to_f64().unwrap_or(f64::NAN),
            std: std.to_f64().unwrap_or(f64::NAN),
            n: values.len(),
            excluded,
            absent: values.is_empty(),
        }
    };
    Ok(vec![
        row("dsc", records.iter().map(|r| r.dsc).collect(), 0),
        row("jsc", records.iter().map(|r| r.jsc).collect(), 0),
        row("mad", regular.iter().map(|r| r.mad_norm).collect(), excluded),
        row("hd", regular.iter().map(|r| r.hd_norm).collect(), excluded),
        row("mad_px", regular.iter().map(|r| r.mad_px).collect(), excluded),
        row("hd_px", regular.iter().map(|r| r.hd_px).collect(), excluded),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(dsc: f64, flag: DegenerateFlag) -> MetricRecord<f64> {
        MetricRecord {
            sample_id: "s".into(),
            dsc,
            jsc: dsc / (2.0 - dsc),
            mad_px: 1.0,
            hd_px: 2.0,
            mad_norm: 0.1,
            hd_norm: 0.2,
            flag,
        }
    }

    #[test]
    fn population_std() {
        let rows = aggregate(&[rec(0.5, DegenerateFlag::None), rec(0.7, DegenerateFlag::None)]).unwrap();
        assert!((rows[0].mean - 0.6).abs() < 1e-12);
        assert!((rows[0].std - 0.1).abs() < 1e-12);
        assert_eq!(rows[0].n, 2);
    }

    #[test]
    fn single_record_has_zero_std() {
        let rows = aggregate(&[rec(0.9, DegenerateFlag::None)]).unwrap();
        assert!(rows.iter().all(|r| r.std == 0.0));
    }

    #[test]
    fn all_degenerate_marks_distance_rows_absent() {
        let rows = aggregate(&[rec(1.0, DegenerateFlag::BothEmpty), rec(1.0, DegenerateFlag::BothEmpty)]).unwrap();
        for r in rows
            .iter()
            .filter(|r| r.metric.contains("mad") || r.metric.contains("hd"))
        {
            assert!(r.absent);
            assert_eq!(r.n, 0);
            assert_eq!(r.excluded, 2);
        }
        assert!(!rows[0].absent);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(aggregate::<f64>(&[]).is_err());
    }
}
