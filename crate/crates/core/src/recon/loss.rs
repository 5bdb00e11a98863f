use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::image::Image;
use crate::render::{CloudGradients, RenderOutput};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_m: f64,
    pub lambda_n: f64,
    pub lambda_tv: f64,
    pub lambda_ar: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_m: 0.1,
            lambda_n: 0.05,
            lambda_tv: 1.0,
            lambda_ar: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, f64); 4] {
        [
            ("lambda_m", self.lambda_m),
            ("lambda_n", self.lambda_n),
            ("lambda_tv", self.lambda_tv),
            ("lambda_ar", self.lambda_ar),
        ]
    }
}

/// Individual loss components of one iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub color: f64,
    pub mask: f64,
    pub normal: f64,
    pub tv: f64,
    pub ar: f64,
}

/// `L_color + λ_m L_mask + λ_n L_normal + λ_tv L_tv + λ_ar L_ar`.
pub fn total_loss(
    l_color: f64,
    l_mask: f64,
    l_normal: f64,
    l_tv: f64,
    l_ar: f64,
    w: &LossWeights,
) -> Result<f64> {
    for (name, v) in [
        ("L_color", l_color),
        ("L_mask", l_mask),
        ("L_normal", l_normal),
        ("L_tv", l_tv),
        ("L_ar", l_ar),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidState(format!("{name} = {v}")));
        }
    }
    Ok(l_color + w.lambda_m * l_mask + w.lambda_n * l_normal + w.lambda_tv * l_tv + w.lambda_ar * l_ar)
}

impl LossTerms {
    pub fn total(&self, w: &LossWeights) -> Result<f64> {
        total_loss(self.color, self.mask, self.normal, self.tv, self.ar, w)
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_shapes(out: &RenderOutput, rgb: &Image, mask: &Image, normal: &Image) -> Result<()> {
    let (w, h) = (out.rgb.width, out.rgb.height);
    rgb.expect_shape("target rgb", w, h, 3)?;
    mask.expect_shape("target mask", w, h, 1)?;
    normal.expect_shape("target normal", w, h, 3)
}

/// `(L_color, L_mask, L_normal)`: mean absolute errors, the normal term taken
/// only over pixels whose target mask exceeds 0.5.
pub fn photometric_losses(
    out: &RenderOutput,
    target_rgb: &Image,
    target_mask: &Image,
    target_normal: &Image,
) -> Result<(f64, f64, f64)> {
    check_shapes(out, target_rgb, target_mask, target_normal)?;
    let color = l1(&out.rgb.data, &target_rgb.data) / out.rgb.data.len() as f64;
    let mask = l1(&out.alpha.data, &target_mask.data) / out.alpha.data.len() as f64;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, &m) in target_mask.data.iter().enumerate() {
        if m > 0.5 {
            sum += l1(&out.normal.data[3 * p..3 * p + 3], &target_normal.data[3 * p..3 * p + 3]);
            count += 3;
        }
    }
    let normal = if count == 0 { 0.0 } else { sum / count as f64 };
    Ok((color, mask, normal))
}

/// Upstream image gradients of `L_color + λ_m L_mask + λ_n L_normal`.
pub fn photometric_grads(
    out: &RenderOutput,
    target_rgb: &Image,
    target_mask: &Image,
    target_normal: &Image,
    w: &LossWeights,
) -> Result<(Image, Image, Image)> {
    check_shapes(out, target_rgb, target_mask, target_normal)?;
    let (wd, ht) = (out.rgb.width, out.rgb.height);
    let mut g_rgb = Image::new(wd, ht, 3);
    let scale = 1.0 / out.rgb.data.len() as f64;
    for (g, (a, b)) in g_rgb.data.iter_mut().zip(out.rgb.data.iter().zip(&target_rgb.data)) {
        *g = scale * sign(a - b);
    }
    let mut g_alpha = Image::new(wd, ht, 1);
    let scale = w.lambda_m / out.alpha.data.len() as f64;
    for (g, (a, b)) in g_alpha.data.iter_mut().zip(out.alpha.data.iter().zip(&target_mask.data)) {
        *g = scale * sign(a - b);
    }
    let mut g_normal = Image::new(wd, ht, 3);
    let inside = target_mask.data.iter().filter(|&&m| m > 0.5).count();
    if inside > 0 && w.lambda_n > 0.0 {
        let scale = w.lambda_n / (3 * inside) as f64;
        for (p, &m) in target_mask.data.iter().enumerate() {
            if m > 0.5 {
                for c in 0..3 {
                    let k = 3 * p + c;
                    g_normal.data[k] = scale * sign(out.normal.data[k] - target_normal.data[k]);
                }
            }
        }
    }
    Ok((g_rgb, g_alpha, g_normal))
}

/// Largest-to-smallest axis ratio of one Gaussian, with the axes achieving it.
fn scale_ratio(ls: &[f64; 3]) -> (f64, usize, usize) {
    let (mut hi, mut lo) = (0, 0);
    for a in 1..3 {
        if ls[a] > ls[hi] {
            hi = a;
        }
        if ls[a] < ls[lo] {
            lo = a;
        }
    }
    ((ls[hi] - ls[lo]).exp(), hi, lo)
}

/// Mean over Gaussians of `max(ratio, threshold) - threshold`, where ratio is
/// the largest over the smallest scale.
pub fn anisotropy_loss(cloud: &GaussianCloud, ratio_threshold: f64) -> f64 {
    if cloud.is_empty() {
        return 0.0;
    }
    let sum: f64 = cloud
        .log_scales
        .iter()
        .map(|ls| (scale_ratio(ls).0 - ratio_threshold).max(0.0))
        .sum();
    sum / cloud.len() as f64
}

/// Adds `weight · ∂anisotropy_loss/∂log_scales` into `grads`.
pub fn anisotropy_backward(
    cloud: &GaussianCloud,
    ratio_threshold: f64,
    weight: f64,
    grads: &mut CloudGradients,
) {
    if cloud.is_empty() || weight == 0.0 {
        return;
    }
    let scale = weight / cloud.len() as f64;
    for (i, ls) in cloud.log_scales.iter().enumerate() {
        let (ratio, hi, lo) = scale_ratio(ls);
        if ratio > ratio_threshold {
            grads.log_scales[i][hi] += scale * ratio;
            grads.log_scales[i][lo] -= scale * ratio;
        }
    }
}

/// Fraction of Gaussians whose scale ratio exceeds `ratio_threshold`.
pub fn spiky_fraction(cloud: &GaussianCloud, ratio_threshold: f64) -> f64 {
    if cloud.is_empty() {
        return 0.0;
    }
    let n = cloud.log_scales.iter().filter(|ls| scale_ratio(ls).0 > ratio_threshold).count();
    n as f64 / cloud.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::smooth_scene;
    use crate::gaussian::Gaussian;
    use crate::render::render;
    use proptest::prelude::*;

    #[test]
    fn default_weights_sum() {
        let w = LossWeights::default();
        assert!((total_loss(1.0, 1.0, 1.0, 1.0, 1.0, &w).unwrap() - 2.151).abs() < 1e-12);
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, 0.0, &w).unwrap(), 0.0);
        assert_eq!(total_loss(0.3, 0.0, 0.0, 0.0, 0.0, &w).unwrap(), 0.3);
    }

    #[test]
    fn nan_term_is_named() {
        let err = total_loss(0.1, 0.2, f64::NAN, 0.0, 0.0, &LossWeights::default()).unwrap_err();
        assert!(matches!(&err, Error::InvalidState(m) if m.contains("L_normal")));
    }

    fn output(size: usize) -> RenderOutput {
        let (cloud, cam, settings) = smooth_scene(1, 3, size);
        render(&cloud, &cam, &settings).unwrap()
    }

    #[test]
    fn self_targets_are_zero() {
        let out = output(12);
        let (c, m, n) = photometric_losses(&out, &out.rgb, &out.alpha, &out.normal).unwrap();
        assert_eq!((c, m, n), (0.0, 0.0, 0.0));
    }

    #[test]
    fn constant_color_difference() {
        let mut out = output(8);
        out.rgb.data.fill(0.0);
        let target = Image::filled(8, 8, 3, 0.5);
        let (c, _, _) = photometric_losses(&out, &target, &out.alpha.clone(), &out.normal.clone()).unwrap();
        assert_eq!(c, 0.5);
    }

    #[test]
    fn exact_quarter_mask() {
        let mut out = output(8);
        let mut mask = Image::new(8, 8, 1);
        for y in 0..4 {
            for x in 0..4 {
                mask.pixel_mut(x, y)[0] = 1.0;
            }
        }
        out.alpha = mask.clone();
        let (_, m, _) = photometric_losses(&out, &out.rgb.clone(), &mask, &out.normal.clone()).unwrap();
        assert_eq!(m, 0.0);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let out = output(8);
        let small = Image::new(4, 4, 3);
        assert!(matches!(
            photometric_losses(&out, &small, &out.alpha, &out.normal),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn grads_match_loss_differences() {
        let out = output(10);
        let w = LossWeights::default();
        let tr = Image::filled(10, 10, 3, 0.37);
        let mut tm = Image::new(10, 10, 1);
        for (k, v) in tm.data.iter_mut().enumerate() {
            *v = if k % 3 == 0 { 0.9 } else { 0.2 };
        }
        let tn = Image::filled(10, 10, 3, -0.2);
        let (gr, ga, gn) = photometric_grads(&out, &tr, &tm, &tn, &w).unwrap();
        let eval = |o: &RenderOutput| {
            let (c, m, n) = photometric_losses(o, &tr, &tm, &tn).unwrap();
            c + w.lambda_m * m + w.lambda_n * n
        };
        let h = 1e-7;
        for (k, g) in [(0usize, &gr), (1, &ga), (2, &gn)] {
            for idx in [0, 5, 17, 29] {
                let mut o = out.clone();
                let img = match k {
                    0 => &mut o.rgb,
                    1 => &mut o.alpha,
                    _ => &mut o.normal,
                };
                img.data[idx] += h;
                let plus = eval(&o);
                let img = match k {
                    0 => &mut o.rgb,
                    1 => &mut o.alpha,
                    _ => &mut o.normal,
                };
                img.data[idx] -= 2.0 * h;
                let minus = eval(&o);
                let numeric = (plus - minus) / (2.0 * h);
                assert!((numeric - g.data[idx]).abs() < 1e-6, "{k}/{idx}: {numeric} vs {}", g.data[idx]);
            }
        }
    }

    fn cloud_with_scales(scales: &[[f64; 3]]) -> GaussianCloud {
        let mut c = GaussianCloud::new(0).unwrap();
        for s in scales {
            c.push(Gaussian {
                mean: [0.0; 3],
                rotation: [1.0, 0.0, 0.0, 0.0],
                log_scale: [s[0].ln(), s[1].ln(), s[2].ln()],
                opacity_logit: 0.0,
                sh: vec![0.0; 3],
            })
            .unwrap();
        }
        c
    }

    #[test]
    fn anisotropy_examples() {
        assert_eq!(anisotropy_loss(&cloud_with_scales(&[[0.1; 3], [2.0; 3]]), 5.0), 0.0);
        let c = cloud_with_scales(&[[7.0, 1.0, 1.0], [1.0; 3], [0.5, 0.4, 0.3]]);
        assert!((anisotropy_loss(&c, 5.0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((spiky_fraction(&c, 5.0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn anisotropy_gradient_matches_fd() {
        let c = cloud_with_scales(&[[7.0, 1.0, 1.5], [0.2, 3.0, 0.4], [1.0; 3]]);
        let mut g = CloudGradients::zeros_like(&c);
        anisotropy_backward(&c, 5.0, 1.0, &mut g);
        let h = 1e-6;
        for i in 0..3 {
            for a in 0..3 {
                let mut p = c.clone();
                p.log_scales[i][a] += h;
                let plus = anisotropy_loss(&p, 5.0);
                p.log_scales[i][a] -= 2.0 * h;
                let minus = anisotropy_loss(&p, 5.0);
                let numeric = (plus - minus) / (2.0 * h);
                assert!((numeric - g.log_scales[i][a]).abs() < 1e-6 * numeric.abs().max(1.0));
            }
        }
    }

    proptest! {
        #[test]
        fn total_matches_independent_arithmetic(
            c in 0.0f64..10.0, m in 0.0f64..10.0, n in 0.0f64..10.0, tv in 0.0f64..10.0, ar in 0.0f64..10.0
        ) {
            let want = c + 0.1 * m + 0.05 * n + 1.0 * tv + 0.001 * ar;
            let got = total_loss(c, m, n, tv, ar, &LossWeights::default()).unwrap();
            prop_assert!((got - want).abs() <= 1e-12 * want.max(1.0));
        }

        #[test]
        fn anisotropy_is_scale_invariant(a in 0.01f64..5.0, b in 0.01f64..5.0, c in 0.01f64..5.0, k in 0.1f64..10.0) {
            let base = anisotropy_loss(&cloud_with_scales(&[[a, b, c]]), 5.0);
            let scaled = anisotropy_loss(&cloud_with_scales(&[[k * a, k * b, k * c]]), 5.0);
            prop_assert!((base - scaled).abs() <= 1e-9 * base.max(1.0));
        }
    }
}
