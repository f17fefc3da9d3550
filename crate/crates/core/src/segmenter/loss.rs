use dfseg_nn::{Graph, Scalar, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Image;

/// `1 − (2·Σ(p·t) + ε) / (Σp + Σt + ε)` over one image.
pub fn dice_loss<T: Scalar>(pred: &Image<T>, target: &Image<T>, epsilon: f64) -> Result<T> {
    if pred.dim() != target.dim() {
        return Err(Error::validation(format!(
            "dice_loss shapes differ: {:?} vs {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let eps = T::lit(epsilon);
    let inter: T = pred.iter().zip(target.iter()).map(|(&p, &t)| p * t).sum();
    let sp: T = pred.iter().copied().sum();
    let st: T = target.iter().copied().sum();
    Ok(T::one() - (T::lit(2.0) * inter + eps) / (sp + st + eps))
}

/// How [`dice_loss_var`] reduces over a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiceReduction {
    /// One Dice ratio over every pixel of the batch.
    #[default]
    Batch,
    /// One ratio per sample, averaged.
    PerSample,
}

/// Dice loss of an `[N, ...]` prediction batch against its targets.
pub fn dice_loss_var<T: Scalar>(
    g: &mut Graph<T>,
    pred: Var,
    target: Var,
    epsilon: f64,
    reduction: DiceReduction,
) -> Result<Var> {
    let reduce = |g: &mut Graph<T>, v: Var| match reduction {
        DiceReduction::Batch => g.sum(v),
        DiceReduction::PerSample => g.sum_per_sample(v),
    };
    let pt = g.mul(pred, target)?;
    let inter = reduce(g, pt);
    let num = g.mul_scalar(inter, 2.0);
    let num = g.add_scalar(num, epsilon);
    let sp = reduce(g, pred);
    let st = reduce(g, target);
    let den = g.add(sp, st)?;
    let den = g.add_scalar(den, epsilon);
    let ratio = g.div(num, den)?;
    let m = g.mean(ratio);
    let neg = g.mul_scalar(m, -1.0);
    Ok(g.add_scalar(neg, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use dfseg_nn::Tensor;
    use ndarray::array;

    #[test]
    fn perfect_prediction_is_zero() {
        let t = array![[1.0f64, 0.0], [0.0, 1.0]];
        assert_eq!(dice_loss(&t, &t, 1.0).unwrap(), 0.0);
        assert_eq!(dice_loss(&t, &t, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn empty_pair_is_rescued_by_epsilon() {
        let z = Image::<f64>::zeros((3, 3));
        assert_eq!(dice_loss(&z, &z, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_pair_fixture() {
        let p = array![[1.0f64, 0.0]];
        let t = array![[0.0f64, 1.0]];
        assert!((dice_loss(&p, &t, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn graph_version_matches_plain_loss() {
        let a = array![[0.2f64, 0.9], [0.4, 0.1]];
        let ta = array![[0.0f64, 1.0], [1.0, 0.0]];
        let b = array![[0.7f64, 0.3], [0.5, 0.5]];
        let tb = array![[1.0f64, 1.0], [0.0, 0.0]];
        let want = 0.5 * (dice_loss(&a, &ta, 1.0).unwrap() + dice_loss(&b, &tb, 1.0).unwrap());
        let mut g = Graph::<f64>::new();
        let flat = |x: &Image<f64>, y: &Image<f64>| x.iter().chain(y.iter()).copied().collect::<Vec<_>>();
        let p = g.param(Tensor::new(vec![2, 1, 2, 2], flat(&a, &b)).unwrap());
        let t = g.input(Tensor::new(vec![2, 1, 2, 2], flat(&ta, &tb)).unwrap());
        let l = dice_loss_var(&mut g, p, t, 1.0, DiceReduction::PerSample).unwrap();
        assert!((g.value(l).item() - want).abs() < 1e-15);
        let all = |x: &Image<f64>, y: &Image<f64>| {
            Image::from_shape_vec((1, 8), x.iter().chain(y.iter()).copied().collect()).unwrap()
        };
        let pooled = dice_loss(&all(&a, &b), &all(&ta, &tb), 1.0).unwrap();
        let l = dice_loss_var(&mut g, p, t, 1.0, DiceReduction::Batch).unwrap();
        assert!((g.value(l).item() - pooled).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_errors() {
        assert!(dice_loss(&Image::<f64>::zeros((2, 2)), &Image::zeros((2, 3)), 1.0).is_err());
    }
}
