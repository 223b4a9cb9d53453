//! AdamW, the cosine learning-rate schedule and global-norm clipping.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// First and second moments per parameter plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Self {
            m: store.zeros_like(),
            v: store.zeros_like(),
            step: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay:
/// `theta <- theta * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adamw_step<T: Real>(
    store: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    lr: f64,
    hp: &AdamW,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::shape(
            "adamw",
            format!(
                "{} params, {} grads, {} moments",
                store.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (id, g) in store.ids().zip(grads) {
        if g.shape() != store.get(id).shape() {
            return Err(Error::shape(
                "adamw",
                format!(
                    "gradient {:?} for parameter {} {:?}",
                    g.shape(),
                    store.name(id),
                    store.get(id).shape()
                ),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGrad {
                param: store.name(id).to_string(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(hp.beta1), T::of(hp.beta2));
    let c1 = T::of(1.0 - hp.beta1.powi(t));
    let c2 = T::of(1.0 - hp.beta2.powi(t));
    let decay = T::of(1.0 - lr * hp.weight_decay);
    let (lr, eps) = (T::of(lr), T::of(hp.eps));
    for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for ((p, &gj), (mj, vj)) in store
            .get_mut(id)
            .data_mut()
            .iter_mut()
            .zip(g)
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mj = b1 * *mj + (T::one() - b1) * gj;
            *vj = b2 * *vj + (T::one() - b2) * gj * gj;
            let m_hat = *mj / c1;
            let v_hat = *vj / c2;
            *p = *p * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Cosine annealing from `lr0` at epoch 0 to `lr_min` at `epochs`.
pub fn cosine_lr(epoch: usize, epochs: usize, lr0: f64, lr_min: f64) -> Result<f64> {
    if epochs == 0 || epoch > epochs {
        return Err(Error::Config(format!(
            "epoch {epoch} outside schedule of {epochs} epochs"
        )));
    }
    let w = 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos());
    // Written as a convex combination so both endpoints are exact.
    Ok(w * lr0 + (1.0 - w) * lr_min)
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> Result<f64> {
    let norm = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v.f64().powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite {
            op: "clip_grad_norm",
        });
    }
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * s;
            }
        }
    }
    Ok(norm)
}

pub fn global_norm<T: Real>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .map(|g| g.data().iter().map(|v| v.f64().powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add(
            "w",
            Tensor::new(vec![values.len()], values.to_vec()).unwrap(),
        );
        s
    }

    #[test]
    fn zero_gradient_is_pure_decay() {
        let mut s = store(&[1.0, -2.0, 0.5]);
        let before = s.get(s.ids().next().unwrap()).clone();
        let mut st = OptimizerState::new(&s);
        let zeros = s.zeros_like();
        adamw_step(&mut s, &zeros, &mut st, 0.1, &AdamW::default()).unwrap();
        let after = s.get(s.ids().next().unwrap());
        for (a, b) in after.data().iter().zip(before.data()) {
            assert_eq!(*a, b * 0.995);
        }
    }

    #[test]
    fn first_step_closed_form() {
        let mut s = store(&[0.3]);
        let mut st = OptimizerState::new(&s);
        let hp = AdamW {
            weight_decay: 0.0,
            ..Default::default()
        };
        let g = vec![Tensor::new(vec![1], vec![1.0]).unwrap()];
        adamw_step(&mut s, &g, &mut st, 0.01, &hp).unwrap();
        // m_hat = v_hat = 1 after bias correction.
        let expect = 0.3 - 0.01 * 1.0 / (1.0 + 1e-8);
        assert!((s.get(s.ids().next().unwrap()).data()[0] - expect).abs() < 1e-15);
    }

    /// Textbook Adam, written independently over plain vectors.
    fn reference_adam(theta: &mut [f64], grads: &[Vec<f64>], lr: f64) {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut m = vec![0.0; theta.len()];
        let mut v = vec![0.0; theta.len()];
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / (1.0 - b1.powi(t));
                let vh = v[i] / (1.0 - b2.powi(t));
                theta[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }

    #[test]
    fn no_decay_matches_reference_adam() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let init: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
        let grads: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..5).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let mut s = store(&init);
        let mut st = OptimizerState::new(&s);
        let hp = AdamW {
            weight_decay: 0.0,
            ..Default::default()
        };
        for g in &grads {
            let g = vec![Tensor::new(vec![5], g.clone()).unwrap()];
            adamw_step(&mut s, &g, &mut st, 3e-3, &hp).unwrap();
        }
        let mut theta = init;
        reference_adam(&mut theta, &grads, 3e-3);
        for (a, b) in s.get(s.ids().next().unwrap()).data().iter().zip(&theta) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(st.step, 10);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut s = store(&[1.0]);
        let mut st = OptimizerState::new(&s);
        let g = vec![Tensor::new(vec![1], vec![f64::NAN]).unwrap()];
        let err = adamw_step(&mut s, &g, &mut st, 0.1, &AdamW::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGrad { ref param } if param == "w"));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(cosine_lr(0, 100, 3e-4, 1e-6).unwrap(), 3e-4);
        assert_eq!(cosine_lr(100, 100, 3e-4, 1e-6).unwrap(), 1e-6);
        assert!((cosine_lr(50, 100, 3e-4, 1e-6).unwrap() - 1.505e-4).abs() < 1e-18);
        assert!(cosine_lr(101, 100, 3e-4, 1e-6).is_err());
        let lrs: Vec<f64> = (0..=100)
            .map(|e| cosine_lr(e, 100, 3e-4, 1e-6).unwrap())
            .collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn clipping_examples() {
        let mut small = vec![Tensor::new(vec![2], vec![0.3, 0.4]).unwrap()];
        assert_eq!(clip_grad_norm(&mut small, 1.0).unwrap(), 0.5);
        assert_eq!(small[0].data(), [0.3, 0.4]);
        let mut g: Vec<Tensor<f64>> = vec![
            Tensor::new(vec![1], vec![3.0]).unwrap(),
            Tensor::new(vec![1], vec![4.0]).unwrap(),
        ];
        assert_eq!(clip_grad_norm(&mut g, 1.0).unwrap(), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[1].data()[0] - 0.8).abs() < 1e-15);
        let mut bad = vec![Tensor::new(vec![1], vec![f64::INFINITY]).unwrap()];
        assert!(clip_grad_norm(&mut bad, 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn clipped_norm_bounded_and_idempotent(seed in any::<u64>(), scale in 0.01f64..100.0) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mut g: Vec<Tensor<f64>> = (0..3)
                .map(|k| Tensor::from_fn(vec![k + 2], |_| scale * r.random_range(-1.0..1.0)))
                .collect();
            clip_grad_norm(&mut g, 1.0).unwrap();
            prop_assert!(global_norm(&g) <= 1.0 + 1e-9);
            let once = g.clone();
            clip_grad_norm(&mut g, 1.0).unwrap();
            for (a, b) in g.iter().zip(&once) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    prop_assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
                }
            }
        }

        #[test]
        fn zero_grad_decay_factor(seed in any::<u64>(), lr in 1e-5f64..0.5, wd in 0.0f64..0.5) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let init: Vec<f64> = (0..4).map(|_| r.random_range(-5.0..5.0)).collect();
            let mut s = store(&init);
            let mut st = OptimizerState::new(&s);
            let zeros = s.zeros_like();
            let hp = AdamW { weight_decay: wd, ..Default::default() };
            adamw_step(&mut s, &zeros, &mut st, lr, &hp).unwrap();
            for (a, b) in s.get(s.ids().next().unwrap()).data().iter().zip(&init) {
                prop_assert_eq!(*a, b * (1.0 - lr * wd));
            }
        }

        #[test]
        fn cosine_is_monotone(epochs in 1usize..500) {
            let mut last = f64::INFINITY;
            for e in 0..=epochs {
                let lr = cosine_lr(e, epochs, 3e-4, 1e-6).unwrap();
                prop_assert!(lr <= last);
                last = lr;
            }
        }
    }
}
