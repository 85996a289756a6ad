//! Central-difference gradient verification.

use super::{AdError, ParamStore, Tape, Tensor, Var};

fn check_eps(eps: f64) -> Result<(), AdError> {
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(AdError::Invalid(format!("finite-difference eps {eps} outside [1e-7, 1e-4]")));
    }
    Ok(())
}

fn scalar_of(tape: &Tape, out: Var) -> Result<f64, AdError> {
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(AdError::Invalid(format!("expected scalar output, got shape {:?}", v.shape())));
    }
    Ok(v.data()[0])
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Max over entries of `|analytic - central| / max(1, |analytic|)` for the
/// scalar function `f` at `point`.
pub fn finite_diff_check<E, F>(f: F, point: &Tensor, eps: f64) -> Result<f64, E>
where
    E: From<AdError>,
    F: Fn(&mut Tape, Var) -> Result<Var, E>,
{
    check_eps(eps)?;
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone(), true);
    let out = f(&mut tape, x)?;
    scalar_of(&tape, out)?;
    tape.backward_scalar(out)?;
    let analytic = tape.grad(x).cloned().unwrap_or_else(|| Tensor::zeros(point.shape()));

    let eval = |p: Tensor| -> Result<f64, E> {
        let mut t = Tape::new();
        let x = t.leaf(p, false);
        let out = f(&mut t, x)?;
        Ok(scalar_of(&t, out)?)
    };
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += eps;
        let mut minus = point.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(rel_err(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Same measure over every trainable entry of a parameter store.
///
/// `f` builds the scalar objective from the store's parameters; it must be a
/// deterministic function of the parameter values. When `stride > 1` only
/// every `stride`-th entry of each array is perturbed.
pub fn finite_diff_check_params<E, F>(store: &ParamStore, f: F, eps: f64, stride: usize) -> Result<f64, E>
where
    E: From<AdError>,
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, E>,
{
    check_eps(eps)?;
    let mut base = store.clone();
    base.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, &base)?;
    scalar_of(&tape, out)?;
    tape.backward_scalar(out)?;
    tape.accumulate_into(&mut base);

    let eval = |s: &ParamStore| -> Result<f64, E> {
        let mut t = Tape::new();
        let out = f(&mut t, s)?;
        Ok(scalar_of(&t, out)?)
    };
    let mut worst = 0.0f64;
    let mut probe = base.clone();
    for id in base.ids().filter(|&id| base.is_trainable(id)) {
        for i in (0..base.value(id).len()).step_by(stride.max(1)) {
            let orig = base.value(id).data()[i];
            probe.value_mut(id).data_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(rel_err(base.grad(id).data()[i], numeric));
        }
    }
    Ok(worst)
}
