use ndarray::{Array2, Zip};

use super::{global_norm, AutodiffError, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub step: u64,
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Array2<T>>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Array2::zeros(p.dim()), Array2::zeros(p.dim())))
            .unzip();
        Self { step: 0, m, v }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<T: Real>(
    params: &mut [&mut Array2<T>],
    grads: &[Array2<T>],
    state: &mut AdamState<T>,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "adam_step",
            lhs: (params.len(), 0),
            rhs: (grads.len(), state.m.len()),
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.dim() != g.dim() || p.dim() != m.dim() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam_step",
                lhs: p.dim(),
                rhs: g.dim(),
            });
        }
    }
    state.step += 1;
    let c = |x: f64| T::from_f64(x).unwrap();
    let (b1, b2) = (c(config.beta1), c(config.beta2));
    let bias1 = c(1.0 - config.beta1.powi(state.step as i32));
    let bias2 = c(1.0 - config.beta2.powi(state.step as i32));
    let (lr, eps) = (c(config.lr), c(config.eps));

    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        Zip::from(&mut **p)
            .and(g)
            .and(m)
            .and(v)
            .for_each(|p, &g, m, v| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
    Ok(())
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Array2<T>], max_norm: T) -> T {
    let norm = global_norm(grads.iter());
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|x| x * s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = array![[1.0f64, -2.0, 3.0]];
        let before = p.clone();
        let mut st = AdamState::new([&p]);
        for _ in 0..5 {
            adam_step(&mut [&mut p], &[Array2::zeros((1, 3))], &mut st, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_each_coordinate_by_lr() {
        let mut p = array![[0.0f64, 0.0, 0.0]];
        let mut st = AdamState::new([&p]);
        let cfg = AdamConfig::default();
        adam_step(&mut [&mut p], &[array![[0.3, -7.0, 1e-3]]], &mut st, &cfg).unwrap();
        for (&x, sign) in p.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((x - sign * cfg.lr).abs() < 1e-7, "{x}");
        }
    }

    #[test]
    fn quadratic_norm_decreases() {
        // f(x) = ½‖x‖², ∇f = x
        let mut x = array![[1.0f64, 1.0]];
        let mut st = AdamState::new([&x]);
        let cfg = AdamConfig::default();
        let mut prev = global_norm([&x]);
        for _ in 0..100 {
            let g = x.clone();
            adam_step(&mut [&mut x], &[g], &mut st, &cfg).unwrap();
            let n = global_norm([&x]);
            assert!(n < prev);
            prev = n;
        }
    }

    #[test]
    fn mismatched_shapes_error() {
        let mut p = array![[1.0f64, 2.0]];
        let mut st = AdamState::new([&p]);
        let r = adam_step(&mut [&mut p], &[array![[1.0]]], &mut st, &AdamConfig::default());
        assert!(matches!(r, Err(AutodiffError::ShapeMismatch { .. })));
    }

    #[test]
    fn clipping_caps_joint_norm() {
        let mut gs = vec![array![[3.0f64]], array![[4.0]]];
        let n = clip_global_norm(&mut gs, 1.0);
        assert_eq!(n, 5.0);
        assert!((global_norm(gs.iter()) - 1.0).abs() < 1e-12);
        let mut small = vec![array![[0.1f64]]];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0][[0, 0]], 0.1);
    }
}
