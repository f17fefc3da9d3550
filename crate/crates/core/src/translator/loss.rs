use dfseg_nn::{Graph, Scalar, Var};
use serde::{Deserialize, Serialize};

use super::config::AdversarialVariant;
use crate::error::{Error, Result};
use crate::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Discriminator,
    Generator,
}

fn mean<T: Scalar>(it: impl Iterator<Item = T>) -> T {
    let (sum, n) = it.fold((T::zero(), 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        T::zero()
    } else {
        sum / T::from_usize(n).unwrap()
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    // log(1 + e^x) without overflow
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Adversarial loss on discriminator outputs (logits for the
/// cross-entropy variant). `d_real` is ignored on the generator side.
///
/// Least squares: discriminator `mean((r − 1)²) + mean(f²)`, generator
/// `mean((f − 1)²)`. Cross entropy: discriminator
/// `mean(softplus(−r)) + mean(softplus(f))`, generator `mean(softplus(−f))`.
pub fn adversarial_loss<T: Scalar>(d_real: &[T], d_fake: &[T], side: Side, variant: AdversarialVariant) -> T {
    let one = T::one();
    match (variant, side) {
        (AdversarialVariant::LeastSquares, Side::Discriminator) => {
            mean(d_real.iter().map(|&r| (r - one) * (r - one))) + mean(d_fake.iter().map(|&f| f * f))
        }
        (AdversarialVariant::LeastSquares, Side::Generator) => mean(d_fake.iter().map(|&f| (f - one) * (f - one))),
        (AdversarialVariant::CrossEntropy, Side::Discriminator) => {
            mean(d_real.iter().map(|&r| softplus(-r))) + mean(d_fake.iter().map(|&f| softplus(f)))
        }
        (AdversarialVariant::CrossEntropy, Side::Generator) => mean(d_fake.iter().map(|&f| softplus(-f))),
    }
}

fn target_term<T: Scalar>(g: &mut Graph<T>, d: Var, real: bool, variant: AdversarialVariant) -> Var {
    match variant {
        AdversarialVariant::LeastSquares => {
            let shifted = if real { g.add_scalar(d, -1.0) } else { d };
            let sq = g.square(shifted);
            g.mean(sq)
        }
        AdversarialVariant::CrossEntropy => {
            let z = if real { g.mul_scalar(d, -1.0) } else { d };
            let sp = g.softplus(z);
            g.mean(sp)
        }
    }
}

/// Graph form of [`adversarial_loss`]. `d_real` is required on the
/// discriminator side.
pub fn adversarial_loss_var<T: Scalar>(
    g: &mut Graph<T>,
    d_real: Option<Var>,
    d_fake: Var,
    side: Side,
    variant: AdversarialVariant,
) -> Result<Var> {
    match side {
        Side::Generator => Ok(target_term(g, d_fake, true, variant)),
        Side::Discriminator => {
            let r = d_real.ok_or_else(|| Error::validation("discriminator loss needs real predictions"))?;
            let lr = target_term(g, r, true, variant);
            let lf = target_term(g, d_fake, false, variant);
            Ok(g.add(lr, lf)?)
        }
    }
}

fn l1<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    if a.dim() != b.dim() {
        return Err(Error::validation(format!(
            "shapes differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(mean(a.iter().zip(b.iter()).map(|(&p, &q)| (p - q).abs())))
}

/// `mean|x_rec − x| + mean|y_rec − y|`, unweighted.
pub fn cycle_consistency_loss<T: Scalar>(x: &Image<T>, x_rec: &Image<T>, y: &Image<T>, y_rec: &Image<T>) -> Result<T> {
    Ok(l1(x, x_rec)? + l1(y, y_rec)?)
}

/// `mean|a − b|` in the graph.
pub fn l1_var<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}
