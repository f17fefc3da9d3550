use dfseg_nn::Scalar;
use image::{Rgb, RgbImage};

use super::overlap::check_shapes;
use crate::error::{Error, Result};
use crate::{Image, Mask};

pub const TRUE_POSITIVE: Rgb<u8> = Rgb([128, 128, 128]);
pub const FALSE_NEGATIVE: Rgb<u8> = Rgb([0, 255, 0]);
pub const FALSE_POSITIVE: Rgb<u8> = Rgb([255, 0, 0]);

/// Colours each pixel by its confusion class: true positive gray, false
/// negative green, false positive red. True negatives show the image.
pub fn overlay<T: Scalar>(gt: &Mask, pred: &Mask, image: &Image<T>) -> Result<RgbImage> {
    check_shapes(gt, pred)?;
    if image.dim() != gt.dim() {
        return Err(Error::validation(format!(
            "image {:?} does not match mask {:?}",
            image.dim(),
            gt.dim()
        )));
    }
    let (h, w) = gt.dim();
    let scale = T::lit(255.0);
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = [y as usize, x as usize];
        match (gt[p], pred[p]) {
            (true, true) => TRUE_POSITIVE,
            (true, false) => FALSE_NEGATIVE,
            (false, true) => FALSE_POSITIVE,
            (false, false) => {
                let v = (image[p].max(T::zero()).min(T::one()) * scale)
                    .round()
                    .to_u8()
                    .unwrap_or(0);
                Rgb([v, v, v])
            }
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gt_equal_pred_has_no_red_or_green() {
        let m = array![[true, false], [false, true]];
        let img = array![[0.2f64, 0.4], [0.6, 0.8]];
        let o = overlay(&m, &m, &img).unwrap();
        assert!(o.pixels().all(|p| *p != FALSE_NEGATIVE && *p != FALSE_POSITIVE));
    }

    #[test]
    fn empty_masks_show_plain_image() {
        let e = Mask::from_elem((2, 2), false);
        let img = array![[0.0f32, 1.0], [0.5, 0.25]];
        let o = overlay(&e, &e, &img).unwrap();
        assert_eq!(o.get_pixel(1, 0), &Rgb([255, 255, 255]));
        assert_eq!(o.get_pixel(0, 1), &Rgb([128, 128, 128]));
        assert_eq!(o.get_pixel(1, 1), &Rgb([64, 64, 64]));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = Mask::from_elem((2, 2), false);
        let img = Image::<f64>::zeros((3, 2));
        assert!(overlay(&a, &a, &img).is_err());
    }
}
