use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

/// First and second moments for one parameter group.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Rebuilds the moments after the parameter rows (of `stride` scalars each)
    /// were rearranged: row `k` takes the moments of `sources[k]`, or zeros
    /// for freshly created rows.
    pub fn remap_rows(&mut self, sources: &[Option<usize>], stride: usize) {
        let remap = |old: &[f64]| {
            let mut out = vec![0.0; sources.len() * stride];
            for (k, src) in sources.iter().enumerate() {
                if let Some(s) = src {
                    out[k * stride..(k + 1) * stride].copy_from_slice(&old[s * stride..(s + 1) * stride]);
                }
            }
            out
        };
        self.m = remap(&self.m);
        self.v = remap(&self.v);
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::Contract(format!(
            "adam_step: {} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    state.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![0.3, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1).unwrap();
        assert_eq!(p, vec![0.3, -2.0]);
    }

    #[test]
    fn first_step_by_hand() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 0.1).unwrap();
        // m̂ = v̂ = 1
        assert!((p[0] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = vec![1.0, 2.0, 3.0];
            let mut s = AdamState::new(3);
            for k in 0..50 {
                let g: Vec<f64> = p.iter().map(|x| (x * 1.7 + k as f64).sin()).collect();
                adam_step(&mut p, &g, &mut s, 0.01).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::new(2);
        assert!(adam_step(&mut [0.0; 3], &[0.0; 3], &mut s, 0.1).is_err());
    }

    #[test]
    fn remap_keeps_sources_and_zeroes_new_rows() {
        let mut s = AdamState {
            m: vec![1.0, 2.0, 3.0, 4.0],
            v: vec![5.0, 6.0, 7.0, 8.0],
            step: 3,
        };
        s.remap_rows(&[Some(1), None, Some(0)], 2);
        assert_eq!(s.m, vec![3.0, 4.0, 0.0, 0.0, 1.0, 2.0]);
        assert_eq!(s.v, vec![7.0, 8.0, 0.0, 0.0, 5.0, 6.0]);
    }
}
