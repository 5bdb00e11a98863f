use super::{DeformationField, FieldGradients};

/// Calls `f(a, b)` for every pair of axis-adjacent cells (same feature channel)
/// across all planes and resolutions, with flat parameter indices.
fn for_each_pair(field: &DeformationField, mut f: impl FnMut(usize, usize)) {
    let nf = field.config.features;
    for (ri, &res) in field.config.resolutions.iter().enumerate() {
        for &base in &field.layout.planes[ri] {
            for j in 0..res {
                for i in 0..res {
                    let cell = base + (j * res + i) * nf;
                    for c in 0..nf {
                        if i + 1 < res {
                            f(cell + c, cell + nf + c);
                        }
                        if j + 1 < res {
                            f(cell + c, cell + res * nf + c);
                        }
                    }
                }
            }
        }
    }
}

fn term_count(field: &DeformationField) -> usize {
    let nf = field.config.features;
    field
        .config
        .resolutions
        .iter()
        .map(|&r| 6 * 2 * r * (r - 1) * nf)
        .sum()
}

/// Mean squared difference between axis-adjacent grid cells, over every plane,
/// resolution and feature channel.
pub fn tv_loss(field: &DeformationField) -> f64 {
    let p = &field.params;
    let mut sum = 0.0;
    for_each_pair(field, |a, b| {
        let d = p[a] - p[b];
        sum += d * d;
    });
    sum / term_count(field) as f64
}

/// Adds `weight · ∂tv_loss/∂grid` into `grads`.
pub fn tv_backward(field: &DeformationField, weight: f64, grads: &mut FieldGradients) {
    let p = &field.params;
    let scale = 2.0 * weight / term_count(field) as f64;
    let g = &mut grads.values;
    for_each_pair(field, |a, b| {
        let d = scale * (p[a] - p[b]);
        g[a] += d;
        g[b] -= d;
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::FieldConfig;
    use proptest::prelude::*;

    fn field(res: usize, features: usize, seed: u64) -> DeformationField {
        let cfg = FieldConfig {
            resolutions: vec![res, res + 1],
            features,
            hidden: 3,
            ..FieldConfig::default()
        };
        DeformationField::new(&cfg, seed).unwrap()
    }

    #[test]
    fn constant_grid_is_zero() {
        let mut f = field(4, 2, 0);
        f.grids_mut().fill(0.7);
        assert_eq!(tv_loss(&f), 0.0);
    }

    #[test]
    fn two_by_two_example() {
        let cfg = FieldConfig {
            resolutions: vec![2],
            features: 1,
            hidden: 3,
            ..FieldConfig::default()
        };
        let mut f = DeformationField::new(&cfg, 0).unwrap();
        f.grids_mut().fill(1.0);
        // rows [0,1],[0,1]: two horizontal differences of 1, two vertical of 0
        f.plane_mut(0, 0).copy_from_slice(&[0.0, 1.0, 0.0, 1.0]);
        let plane_sum = 2.0;
        assert_eq!(plane_sum / 4.0, 0.5);
        assert!((tv_loss(&f) - plane_sum / 24.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut f = field(3, 2, 4);
        for (k, v) in f.grids_mut().iter_mut().enumerate() {
            *v = ((k * 37) % 11) as f64 * 0.1;
        }
        let mut g = FieldGradients::zeros_like(&f);
        tv_backward(&f, 1.0, &mut g);
        let h = 1e-5;
        for p in 0..f.layout.grid_len {
            let orig = f.param(p);
            f.set_param(p, orig + h);
            let plus = tv_loss(&f);
            f.set_param(p, orig - h);
            let minus = tv_loss(&f);
            f.set_param(p, orig);
            let numeric = (plus - minus) / (2.0 * h);
            let a = g.param(p);
            let err = (a - numeric).abs();
            assert!(err <= 1e-4 * a.abs().max(numeric.abs()) || err < 1e-10, "{p}: {a} vs {numeric}");
        }
        assert!(g.mlp().iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn homogeneous_of_degree_two(seed in 0u64..1000, k in -3.0f64..3.0) {
            let f = field(3, 2, seed);
            let mut scaled = f.clone();
            for v in scaled.grids_mut() {
                *v *= k;
            }
            let want = k * k * tv_loss(&f);
            prop_assert!((tv_loss(&scaled) - want).abs() <= 1e-12 * want.abs().max(1e-300) + 1e-18);
        }
    }
}
