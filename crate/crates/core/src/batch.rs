//! Conversions between 2-D images and NCHW tensors.

use dfseg_nn::{Scalar, Tensor};

use crate::error::{Error, Result};
use crate::{Image, Mask};

/// Stacks equally sized images into `[N, 1, H, W]`.
pub fn stack_images<T: Scalar>(images: &[&Image<T>]) -> Result<Tensor<T>> {
    let Some(first) = images.first() else {
        return Err(Error::validation("empty batch"));
    };
    let (h, w) = first.dim();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for im in images {
        if im.dim() != (h, w) {
            return Err(Error::validation(format!(
                "batch mixes {:?} and {:?} images",
                (h, w),
                im.dim()
            )));
        }
        data.extend(im.iter().copied());
    }
    Ok(Tensor::new(vec![images.len(), 1, h, w], data)?)
}

pub fn stack_masks<T: Scalar>(masks: &[&Mask]) -> Result<Tensor<T>> {
    let images: Vec<Image<T>> = masks
        .iter()
        .map(|m| m.mapv(|b| if b { T::one() } else { T::zero() }))
        .collect();
    stack_images(&images.iter().collect::<Vec<_>>())
}

/// Splits `[N, 1, H, W]` back into images.
pub fn unstack<T: Scalar>(t: &Tensor<T>) -> Vec<Image<T>> {
    let (n, _, h, w) = t.dims4();
    t.data()
        .chunks(h * w)
        .take(n)
        .map(|c| Image::from_shape_vec((h, w), c.to_vec()).expect("h*w chunk"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn stack_then_unstack() {
        let a = array![[1.0f64, 2.0], [3.0, 4.0]];
        let b = array![[5.0f64, 6.0], [7.0, 8.0]];
        let t = stack_images(&[&a, &b]).unwrap();
        assert_eq!(t.shape(), &[2, 1, 2, 2]);
        assert_eq!(unstack(&t), vec![a, b]);
    }
}
