use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{ensure, Result};

/// `(1/n) sum (y - yhat)^2 + lambda ||theta||^2` over the penalized entries of
/// `store` (biases, normalization terms and buffers are not penalized).
pub fn mse_loss_regularized(y: &[f64], yhat: &[f64], store: &ParamStore, lambda: f64) -> Result<f64> {
    ensure!(lambda >= 0.0, InvalidArgument, "lambda must be non-negative");
    ensure!(!y.is_empty() && y.len() == yhat.len(), Dimension, "{} targets vs {} estimates", y.len(), yhat.len());
    let mse = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64;
    Ok(mse + lambda * store.l2_norm_sq())
}

/// Mean squared error node between a prediction and a target of equal shape.
pub fn mse_node(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean(sq)?)
}

fn check_grad(grad: &[f64]) -> Result<()> {
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(crate::Error::Divergence(format!("non-finite gradient entry {i}")));
    }
    Ok(())
}

/// `theta <- theta - lr * grad`.
pub fn sgd_step(theta: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    ensure!(lr > 0.0, InvalidArgument, "learning rate must be positive");
    ensure!(theta.len() == grad.len(), Dimension, "{} parameters vs {} gradients", theta.len(), grad.len());
    check_grad(grad)?;
    theta.iter_mut().zip(grad).for_each(|(t, g)| *t -= lr * g);
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates; `t` counts completed steps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// Bias-corrected Adam update.
pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64, p: AdamParams) -> Result<()> {
    ensure!(lr > 0.0, InvalidArgument, "learning rate must be positive");
    ensure!(
        theta.len() == grad.len() && state.m.len() == theta.len() && state.v.len() == theta.len(),
        Dimension,
        "Adam state does not match {} parameters",
        theta.len()
    );
    check_grad(grad)?;
    state.t += 1;
    let c1 = 1.0 - p.beta1.powi(state.t as i32);
    let c2 = 1.0 - p.beta2.powi(state.t as i32);
    for i in 0..theta.len() {
        let g = grad[i];
        state.m[i] = p.beta1 * state.m[i] + (1.0 - p.beta1) * g;
        state.v[i] = p.beta2 * state.v[i] + (1.0 - p.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + p.eps);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer state for every trainable array of one store.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    adam: AdamParams,
    states: Vec<AdamState>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, store: &ParamStore) -> Result<Self> {
        ensure!(lr > 0.0 && lr.is_finite(), InvalidArgument, "learning rate must be positive");
        let states = match kind {
            OptimizerKind::Adam => store.ids().map(|id| AdamState::new(store.value(id).len())).collect(),
            OptimizerKind::Sgd => Vec::new(),
        };
        Ok(Self {
            kind,
            lr,
            adam: AdamParams::default(),
            states,
        })
    }

    /// Applies the stored gradients to every trainable array.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            if !store.is_trainable(id) {
                continue;
            }
            let grad = store.grad(id).data().to_vec();
            let theta = store.value_mut(id).data_mut();
            match self.kind {
                OptimizerKind::Sgd => sgd_step(theta, &grad, self.lr)?,
                OptimizerKind::Adam => adam_step(theta, &grad, &mut self.states[k], self.lr, self.adam)?,
            }
        }
        Ok(())
    }
}

/// Rescales gradients whose global norm exceeds `max_norm`; returns the
/// norm before clipping when it was applied.
pub fn clip_global_norm(store: &mut ParamStore, max_norm: f64) -> Option<f64> {
    let norm = store.grad_norm();
    (norm > max_norm).then(|| {
        store.scale_grads(max_norm / norm);
        norm
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check_params, ParamKind, Tensor};

    #[test]
    fn loss_examples() {
        let s = ParamStore::new();
        assert_eq!(mse_loss_regularized(&[1.0, 2.0], &[1.0, 2.0], &s, 0.0).unwrap(), 0.0);
        assert_eq!(mse_loss_regularized(&[1.0], &[0.0], &s, 0.0).unwrap(), 1.0);
        let mut w = ParamStore::new();
        w.add("layer0.W", ParamKind::Weight, Tensor::vector(vec![2.0, 0.0]).unwrap());
        w.add("layer0.b", ParamKind::Bias, Tensor::vector(vec![5.0]).unwrap());
        assert_eq!(mse_loss_regularized(&[3.0], &[3.0], &w, 1.0).unwrap(), 4.0);
        assert!(mse_loss_regularized(&[1.0], &[1.0, 2.0], &s, 0.0).is_err());
    }

    #[test]
    fn sgd_examples() {
        let mut t = [1.0];
        sgd_step(&mut t, &[0.5], 0.1).unwrap();
        assert!((t[0] - 0.95).abs() < 1e-15);
        sgd_step(&mut t, &[0.0], 0.1).unwrap();
        assert!((t[0] - 0.95).abs() < 1e-15);
        let (mut a, mut b) = ([0.3, -1.0], [0.3, -1.0]);
        sgd_step(&mut a, &[2.0, 4.0], 0.2).unwrap();
        sgd_step(&mut b, &[2.0, 4.0], 0.1).unwrap();
        sgd_step(&mut b, &[2.0, 4.0], 0.1).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
        assert!(sgd_step(&mut a, &[f64::NAN, 0.0], 0.1).is_err());
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut t = [1.0];
        let mut s = AdamState::new(1);
        adam_step(&mut t, &[1.0], &mut s, 0.001, AdamParams::default()).unwrap();
        assert!((1.0 - t[0] - 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adam_zero_gradient_is_still() {
        let mut t = [0.7, -2.0];
        let mut s = AdamState::new(2);
        for _ in 0..5 {
            adam_step(&mut t, &[0.0, 0.0], &mut s, 0.01, AdamParams::default()).unwrap();
        }
        assert_eq!(t, [0.7, -2.0]);
    }

    #[test]
    fn adam_first_step_scale_free() {
        let (mut a, mut b) = ([0.0], [0.0]);
        adam_step(&mut a, &[1.0], &mut AdamState::new(1), 0.01, AdamParams::default()).unwrap();
        adam_step(&mut b, &[10.0], &mut AdamState::new(1), 0.01, AdamParams::default()).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-9);
        assert!(adam_step(&mut a, &[f64::INFINITY], &mut AdamState::new(1), 0.01, AdamParams::default()).is_err());
    }

    #[test]
    fn one_step_descends_on_bowl() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut s = ParamStore::new();
            let id = s.add("layer0.W", ParamKind::Weight, Tensor::vector(vec![1.5, -0.5, 2.0]).unwrap());
            let loss = |s: &ParamStore| s.value(id).sum_squares();
            let before = loss(&s);
            let g: Vec<f64> = s.value(id).data().iter().map(|v| 2.0 * v).collect();
            s.grad_mut(id).data_mut().copy_from_slice(&g);
            Optimizer::new(kind, 1e-3, &s).unwrap().step(&mut s).unwrap();
            assert!(loss(&s) < before, "{kind:?}");
        }
    }

    #[test]
    fn l2_gradient_matches_finite_differences() {
        let mut s = ParamStore::new();
        s.add("layer0.W", ParamKind::Weight, Tensor::matrix(2, 2, vec![0.3, -0.7, 1.1, 0.2]).unwrap());
        s.add("layer0.F", ParamKind::FoldedWeight, Tensor::matrix(2, 1, vec![0.4, 9.0]).unwrap());
        let lambda = 0.37;
        let mut analytic = s.clone();
        analytic.zero_grad();
        analytic.add_l2_grad(lambda);
        let ids: Vec<_> = s.ids().collect();
        let eps = 1e-6;
        for &id in &ids {
            for i in 0..s.value(id).len() {
                let mut up = s.clone();
                up.value_mut(id).data_mut()[i] += eps;
                let mut down = s.clone();
                down.value_mut(id).data_mut()[i] -= eps;
                let numeric = lambda * (up.l2_norm_sq() - down.l2_norm_sq()) / (2.0 * eps);
                assert!((analytic.grad(id).data()[i] - numeric).abs() < 1e-8);
            }
        }
        // the objective through the tape agrees as well
        let err = finite_diff_check_params(
            &s,
            |tape: &mut Tape, store: &ParamStore| -> Result<Var> {
                let w = tape.param(store, ids[0]);
                Ok(tape.sum_squares(w)?)
            },
            1e-6,
            1,
        )
        .unwrap();
        assert!(err < 1e-8);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut s = ParamStore::new();
        let id = s.add("layer0.W", ParamKind::Weight, Tensor::vector(vec![0.0, 0.0]).unwrap());
        s.grad_mut(id).data_mut().copy_from_slice(&[3.0, 4.0]);
        assert_eq!(clip_global_norm(&mut s, 10.0), None);
        assert_eq!(clip_global_norm(&mut s, 1.0), Some(5.0));
        assert!((s.grad_norm() - 1.0).abs() < 1e-15);
    }
}
