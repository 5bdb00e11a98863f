use crate::error::{Error, Result};
use crate::image::Image;

/// Reported in place of +∞ for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// `10·log10(1/MSE)` over every pixel and channel, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Contract(format!(
            "psnr of {}×{}×{} and {}×{}×{} images",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Mean angle in degrees between two normal maps over pixels where both
/// coverage images exceed ½ and both normals are nonzero. `None` if no pixel
/// qualifies.
pub fn mean_angular_error_deg(pred: &Image, pred_alpha: &Image, target: &Image, target_mask: &Image) -> Result<Option<f64>> {
    for (name, img, c) in [("pred", pred, 3), ("pred_alpha", pred_alpha, 1), ("target", target, 3), ("target_mask", target_mask, 1)] {
        img.expect_shape(name, target.width, target.height, c)?;
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in 0..target.pixel_count() {
        if pred_alpha.data[p] <= 0.5 || target_mask.data[p] <= 0.5 {
            continue;
        }
        let a = nalgebra::Vector3::from_column_slice(&pred.data[3 * p..3 * p + 3]);
        let b = nalgebra::Vector3::from_column_slice(&target.data[3 * p..3 * p + 3]);
        let (na, nb) = (a.norm(), b.norm());
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        sum += (a.dot(&b) / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees();
        count += 1;
    }
    Ok((count > 0).then(|| sum / count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let a = Image::filled(4, 3, 3, 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = Image::new(4, 3, 3);
        assert!((psnr(&a, &b).unwrap() - 6.020_599_913_279_624).abs() < 1e-12);
        let c = Image::filled(4, 3, 3, 0.3);
        assert_eq!(psnr(&a, &c).unwrap(), psnr(&c, &a).unwrap());
        assert!(psnr(&a, &Image::new(3, 4, 3)).is_err());
    }

    #[test]
    fn angular_error_of_perpendicular_normals() {
        let mut p = Image::new(2, 1, 3);
        let mut t = Image::new(2, 1, 3);
        p.data[..3].copy_from_slice(&[0.0, 0.0, -0.8]);
        t.data[..3].copy_from_slice(&[1.0, 0.0, 0.0]);
        p.data[3..].copy_from_slice(&[0.0, 0.0, -1.0]);
        t.data[3..].copy_from_slice(&[0.0, 0.0, -0.5]);
        let ones = Image::filled(2, 1, 1, 1.0);
        let e = mean_angular_error_deg(&p, &ones, &t, &ones).unwrap().unwrap();
        assert!((e - 45.0).abs() < 1e-12);
        let zeros = Image::new(2, 1, 1);
        assert_eq!(mean_angular_error_deg(&p, &zeros, &t, &ones).unwrap(), None);
    }
}
