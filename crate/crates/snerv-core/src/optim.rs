//! Adam with bias correction and a cosine learning-rate schedule.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-parameter-tensor Adam state (first/second moment estimates and
/// the running per-element maximum of the bias-corrected second moment).
#[derive(Clone, Debug)]
struct Moments<S> {
    m: Vec<S>,
    v: Vec<S>,
    vmax: Vec<S>,
}

/// Adam optimizer (AMSGrad variant) over a list of flat parameter
/// tensors.
///
/// The update for each element is
///
/// ```text
/// m <- b1 m + (1-b1) g        mhat = m / (1 - b1^t)
/// v <- b2 v + (1-b2) g^2      vhat = max(vmax, v / (1 - b2^t))
/// theta <- theta - lr * mhat / (sqrt(vhat) + eps)
/// ```
///
/// with the step counter `t` shared across all tensors and `vmax` the
/// running maximum of the bias-corrected second moment. The monotone
/// `vmax` keeps per-element step sizes from re-inflating after a
/// coordinate goes quiet, which removes slow loss oscillations when a
/// short clip is replayed in a fixed order every epoch. The momentum
/// constant is likewise kept small because with batch-1 training on a
/// dozen frames the momentum memory spans the whole data cycle, and
/// values near 0.9 visibly resonate with it (loss bursts mid-run).
pub struct Adam<S> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    state: Vec<Moments<S>>,
}

impl<S: Scalar> Adam<S> {
    /// `sizes[i]` is the element count of the i-th parameter tensor.
    pub fn new(sizes: &[usize]) -> Self {
        Adam {
            beta1: 0.3,
            beta2: 0.99,
            eps: 1e-8,
            step: 0,
            state: sizes
                .iter()
                .map(|&n| Moments {
                    m: vec![S::ZERO; n],
                    v: vec![S::ZERO; n],
                    vmax: vec![S::ZERO; n],
                })
                .collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update. `params[i]` and `grads[i]` must have the length
    /// declared at construction; entries with an empty gradient (length
    /// 0) are skipped, which lets callers freeze a tensor cheaply.
    pub fn step(&mut self, lr: f64, params: &mut [&mut [S]], grads: &[Vec<S>]) -> Result<()> {
        if params.len() != self.state.len() || grads.len() != self.state.len() {
            return Err(Error::config(format!(
                "optimizer drives {} tensors, got {} params / {} grads",
                self.state.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let b1 = S::from_f64(self.beta1);
        let b2 = S::from_f64(self.beta2);
        let one_m_b1 = S::from_f64(1.0 - self.beta1);
        let one_m_b2 = S::from_f64(1.0 - self.beta2);
        let inv_bc1 = S::from_f64(1.0 / bc1);
        let inv_bc2 = S::from_f64(1.0 / bc2);
        let eps = S::from_f64(self.eps);
        let lr_s = S::from_f64(lr);

        for ((theta, g), st) in params.iter_mut().zip(grads).zip(&mut self.state) {
            if g.is_empty() {
                continue;
            }
            if theta.len() != st.m.len() || g.len() != st.m.len() {
                return Err(Error::config(format!(
                    "optimizer state has {} elements, got {} params / {} grads",
                    st.m.len(),
                    theta.len(),
                    g.len()
                )));
            }
            for i in 0..theta.len() {
                let gi = g[i];
                st.m[i] = b1 * st.m[i] + one_m_b1 * gi;
                st.v[i] = b2 * st.v[i] + one_m_b2 * gi * gi;
                let mhat = st.m[i] * inv_bc1;
                let vhat = st.v[i] * inv_bc2;
                theta[i] -= lr_s * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Cosine decay from `lr_max` to zero over `total_steps`, with an
/// optional linear warmup over the first `warmup_steps`.
///
/// `step` counts from 0 (the schedule value used for the first update).
pub fn cosine_lr(step: u64, total_steps: u64, lr_max: f64, warmup_steps: u64) -> f64 {
    if total_steps == 0 {
        return lr_max;
    }
    if warmup_steps > 0 && step < warmup_steps {
        return lr_max * (step + 1) as f64 / warmup_steps as f64;
    }
    let done = (step - warmup_steps) as f64;
    let span = (total_steps.saturating_sub(warmup_steps)).max(1) as f64;
    let frac = (done / span).min(1.0);
    0.5 * lr_max * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_minus_lr() {
        // With g = 1 everywhere, bias-corrected mhat = 1 and vhat = 1,
        // so the first update is -lr / (1 + eps) ~= -lr.
        let mut opt = Adam::<f64>::new(&[2]);
        let mut p = vec![0.5, -0.25];
        let g = vec![vec![1.0, 1.0]];
        opt.step(0.001, &mut [&mut p], &g).unwrap();
        assert!((p[0] - (0.5 - 0.001)).abs() < 1e-9);
        assert!((p[1] - (-0.25 - 0.001)).abs() < 1e-9);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // Minimize (x - 3)^2; gradient 2(x-3).
        let mut opt = Adam::<f64>::new(&[1]);
        let mut p = vec![0.0];
        for _ in 0..4000 {
            let g = vec![vec![2.0 * (p[0] - 3.0)]];
            opt.step(0.01, &mut [&mut p], &g).unwrap();
        }
        assert!((p[0] - 3.0).abs() < 1e-3, "got {}", p[0]);
    }

    #[test]
    fn empty_grad_freezes_tensor() {
        let mut opt = Adam::<f64>::new(&[1, 1]);
        let mut a = vec![1.0];
        let mut b = vec![1.0];
        let g = vec![vec![1.0], vec![]];
        opt.step(0.1, &mut [&mut a, &mut b], &g).unwrap();
        assert!(a[0] < 1.0);
        assert_eq!(b[0], 1.0);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let mut opt = Adam::<f64>::new(&[2]);
        let mut p = vec![0.0];
        let g = vec![vec![1.0]];
        assert!(opt.step(0.1, &mut [&mut p], &g).is_err());
    }

    #[test]
    fn cosine_schedule_endpoints_and_midpoint() {
        let lr = 2e-3;
        assert!((cosine_lr(0, 100, lr, 0) - lr).abs() < 1e-12);
        // Midpoint of the cosine is lr/2.
        assert!((cosine_lr(50, 100, lr, 0) - lr / 2.0).abs() < 1e-9);
        // Final step is close to zero, and past-the-end clamps at zero.
        assert!(cosine_lr(100, 100, lr, 0) < 1e-15);
        assert!(cosine_lr(500, 100, lr, 0) < 1e-15);
    }

    #[test]
    fn warmup_ramps_linearly_then_decays() {
        let lr = 1e-2;
        assert!((cosine_lr(0, 100, lr, 10) - lr * 0.1).abs() < 1e-12);
        assert!((cosine_lr(4, 100, lr, 10) - lr * 0.5).abs() < 1e-12);
        assert!((cosine_lr(9, 100, lr, 10) - lr).abs() < 1e-12);
        // After warmup the cosine starts at lr.
        assert!((cosine_lr(10, 100, lr, 10) - lr).abs() < 1e-12);
        assert!(cosine_lr(100, 100, lr, 10) < 1e-15);
    }
}
