use dfseg_nn::Scalar;

use crate::error::{Error, Result};
use crate::Mask;

pub(crate) fn check_shapes(a: &Mask, b: &Mask) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::validation(format!(
            "mask shapes differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Pixel counts of the confusion matrix, with `a` as ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

pub fn confusion(gt: &Mask, pred: &Mask) -> Result<Confusion> {
    check_shapes(gt, pred)?;
    let mut c = Confusion::default();
    for (&g, &p) in gt.iter().zip(pred.iter()) {
        match (g, p) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Dice similarity `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dsc<T: Scalar>(a: &Mask, b: &Mask) -> Result<T> {
    let c = confusion(a, b)?;
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        return Ok(T::one());
    }
    Ok(T::from_usize(2 * c.tp).unwrap() / T::from_usize(denom).unwrap())
}

/// Jaccard similarity `|A∩B| / |A∪B|`; two empty masks score 1.
pub fn jsc<T: Scalar>(a: &Mask, b: &Mask) -> Result<T> {
    let c = confusion(a, b)?;
    let union = c.tp + c.fp + c.fn_;
    if union == 0 {
        return Ok(T::one());
    }
    Ok(T::from_usize(c.tp).unwrap() / T::from_usize(union).unwrap())
}
