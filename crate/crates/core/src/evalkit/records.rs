use std::path::Path;

use dfseg_nn::Scalar;
use serde::{Deserialize, Serialize};

use super::overlap::{dsc, jsc};
use super::surface::{surface_metrics, DegenerateFlag};
use crate::error::{Error, Result};
use crate::Mask;

/// Metrics of one predicted mask against its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord<T> {
    pub sample_id: String,
    pub dsc: T,
    pub jsc: T,
    pub mad_px: T,
    pub hd_px: T,
    pub mad_norm: T,
    pub hd_norm: T,
    pub flag: DegenerateFlag,
}

pub fn evaluate_pair<T: Scalar>(sample_id: &str, gt: &Mask, pred: &Mask) -> Result<MetricRecord<T>> {
    let surf = surface_metrics::<T>(gt, pred)?;
    Ok(MetricRecord {
        sample_id: sample_id.to_string(),
        dsc: dsc(gt, pred)?,
        jsc: jsc(gt, pred)?,
        mad_px: surf.mad.px,
        hd_px: surf.hausdorff.px,
        mad_norm: surf.mad.norm,
        hd_norm: surf.hausdorff.norm,
        flag: surf.hausdorff.flag,
    })
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    sample_id: String,
    dsc: f64,
    jsc: f64,
    mad_px: f64,
    hd_px: f64,
    mad_norm: f64,
    hd_norm: f64,
    flag: String,
}

/// Per-sample metrics CSV:
/// `sample_id,dsc,jsc,mad_px,hd_px,mad_norm,hd_norm,flag`.
pub fn write_metrics_csv<T: Scalar>(path: &Path, records: &[MetricRecord<T>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Runtime(format!("{}: {e}", path.display())))?;
    let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
    for r in records {
        w.serialize(CsvRow {
            sample_id: r.sample_id.clone(),
            dsc: f(r.dsc),
            jsc: f(r.jsc),
            mad_px: f(r.mad_px),
            hd_px: f(r.hd_px),
            mad_norm: f(r.mad_norm),
            hd_norm: f(r.hd_norm),
            flag: r.flag.as_str().to_string(),
        })
        .map_err(|e| Error::Runtime(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv<T: Scalar>(path: &Path) -> Result<Vec<MetricRecord<T>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    r.deserialize::<CsvRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::Load {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
            let flag = DegenerateFlag::parse(&row.flag)
                .ok_or_else(|| Error::validation(format!("unknown flag `{}`", row.flag)))?;
            Ok(MetricRecord {
                sample_id: row.sample_id,
                dsc: T::lit(row.dsc),
                jsc: T::lit(row.jsc),
                mad_px: T::lit(row.mad_px),
                hd_px: T::lit(row.hd_px),
                mad_norm: T::lit(row.mad_norm),
                hd_norm: T::lit(row.hd_norm),
                flag,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let gt = Mask::from_shape_fn((8, 8), |(y, x)| y < 4 && x < 4);
        let pred = Mask::from_shape_fn((8, 8), |(y, x)| y < 5 && x > 1 && x < 6);
        let recs = vec![
            evaluate_pair::<f64>("a", &gt, &pred).unwrap(),
            evaluate_pair::<f64>("b", &gt, &Mask::from_elem((8, 8), false)).unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics_csv(&p, &recs).unwrap();
        assert_eq!(read_metrics_csv::<f64>(&p).unwrap(), recs);
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("sample_id,dsc,jsc,mad_px,hd_px,mad_norm,hd_norm,flag"));
    }

    #[test]
    fn record_invariants_hold() {
        let gt = Mask::from_shape_fn((16, 16), |(y, x)| (y as i32 - 7).pow(2) + (x as i32 - 7).pow(2) < 20);
        let pred = Mask::from_shape_fn((16, 16), |(y, x)| (y as i32 - 9).pow(2) + (x as i32 - 8).pow(2) < 14);
        let r = evaluate_pair::<f64>("x", &gt, &pred).unwrap();
        assert!(r.jsc <= r.dsc);
        assert!(r.mad_px <= r.hd_px);
        assert_eq!(r.flag, DegenerateFlag::None);
    }
}
