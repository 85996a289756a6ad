use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{finite_diff_check_params, ParamStore, Tape, Tensor, Var};

fn cell(store: &mut ParamStore, kind: CellKind, d: usize, h: usize) -> RecurrentCell {
    RecurrentCell::new(store, "layer0", kind, d, h, &mut ChaCha8Rng::seed_from_u64(7))
}

fn zeroed(kind: CellKind, d: usize, h: usize) -> (ParamStore, RecurrentCell) {
    let mut s = ParamStore::new();
    let c = cell(&mut s, kind, d, h);
    c.zero_params(&mut s);
    (s, c)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
}

#[test]
fn ernn_zero_params_gives_zero() {
    let (s, c) = zeroed(CellKind::Ernn, 3, 2);
    assert_eq!(ernn_step(&c, &s, &[0.4, -0.2], &[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn ernn_half_preactivation() {
    let (mut s, c) = zeroed(CellKind::Ernn, 2, 3);
    s.value_mut(c.bias).fill(0.5);
    let h = ernn_step(&c, &s, &[0.9, -0.9, 0.1], &[5.0, -5.0]).unwrap();
    assert!(close(&h, &[0.46212; 3], 1e-5));
}

#[test]
fn ernn_saturation_stays_in_range() {
    let (mut s, c) = zeroed(CellKind::Ernn, 1, 2);
    s.set(c.recurrent_weights, Tensor::matrix(2, 2, vec![50.0, 0.0, 0.0, 50.0]).unwrap()).unwrap();
    let h = ernn_step(&c, &s, &[0.99, -0.99], &[0.0]).unwrap();
    assert!(h.iter().all(|v| v.abs() <= 1.0 && v.abs() > 0.99));
}

#[test]
fn ernn_dimension_errors() {
    let (s, c) = zeroed(CellKind::Ernn, 2, 2);
    assert!(ernn_step(&c, &s, &[0.0], &[1.0, 2.0]).is_err());
    assert!(ernn_step(&c, &s, &[0.0, 0.0], &[1.0]).is_err());
}

#[test]
fn lstm_zero_params() {
    let (s, c) = zeroed(CellKind::Lstm, 2, 2);
    let (h, cs) = lstm_step(&c, &s, &[0.0, 0.0], &[0.0, 0.0], &[1.0, -1.0]).unwrap();
    assert_eq!((h, cs), (vec![0.0, 0.0], vec![0.0, 0.0]));
}

#[test]
fn lstm_unit_cell_halves() {
    let (s, c) = zeroed(CellKind::Lstm, 1, 1);
    let (h, cs) = lstm_step(&c, &s, &[0.0], &[1.0], &[0.3]).unwrap();
    assert!((cs[0] - 0.5).abs() < 1e-12);
    assert!((h[0] - 0.23106).abs() < 1e-5);
}

#[test]
fn lstm_saturated_gates_preserve_memory() {
    let (mut s, c) = zeroed(CellKind::Lstm, 1, 2);
    c.set_gate_bias(&mut s, Gate::Forget, 20.0).unwrap();
    c.set_gate_bias(&mut s, Gate::Input, -20.0).unwrap();
    let (_, cs) = lstm_step(&c, &s, &[0.1, 0.2], &[0.7, -0.4], &[1.0]).unwrap();
    assert!(close(&cs, &[0.7, -0.4], 1e-6));
}

#[test]
fn lstm_forget_bias_starts_at_one() {
    let mut s = ParamStore::new();
    let c = cell(&mut s, CellKind::Lstm, 2, 3);
    let b = s.value(c.bias).data();
    assert_eq!(&b[3..6], &[1.0; 3]);
    assert!(b[..3].iter().chain(&b[6..]).all(|&v| v == 0.0));
}

#[test]
fn lstm_memory_over_hundred_steps() {
    let mut s = ParamStore::new();
    let c = cell(&mut s, CellKind::Lstm, 2, 3);
    c.set_gate_bias(&mut s, Gate::Forget, 40.0).unwrap();
    c.set_gate_bias(&mut s, Gate::Input, -40.0).unwrap();
    let c0 = vec![0.5, -0.25, 0.8];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut h, mut cs) = (vec![0.0; 3], c0.clone());
    for _ in 0..100 {
        let x = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
        (h, cs) = lstm_step(&c, &s, &h, &cs, &x).unwrap();
    }
    let drift = cs.iter().zip(&c0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(drift < 1e-6, "drift {drift}");
}

#[test]
fn gru_zero_params_halves_state() {
    let (s, c) = zeroed(CellKind::Gru, 2, 2);
    assert_eq!(gru_step(&c, &s, &[0.8, -0.4], &[3.0, 1.0]).unwrap(), vec![0.4, -0.2]);
}

#[test]
fn gru_saturated_update_keeps_state() {
    let (mut s, c) = zeroed(CellKind::Gru, 1, 2);
    c.set_gate_bias(&mut s, Gate::Update, 20.0).unwrap();
    s.value_mut(c.input_weights).fill(0.3);
    let h = gru_step(&c, &s, &[0.6, -0.1], &[2.0]).unwrap();
    assert!(close(&h, &[0.6, -0.1], 1e-6));
}

#[test]
fn gru_zero_state_zero_input() {
    let (s, c) = zeroed(CellKind::Gru, 2, 2);
    assert_eq!(gru_step(&c, &s, &[0.0, 0.0], &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn wrong_kind_rejected() {
    let (s, c) = zeroed(CellKind::Gru, 1, 1);
    assert!(ernn_step(&c, &s, &[0.0], &[0.0]).is_err());
    assert!(c.set_gate_bias(&mut s.clone(), Gate::Forget, 1.0).is_err());
}

#[test]
fn unroll_zero_ernn() {
    let mut s = ParamStore::new();
    let stack = StackedRnn::new(&mut s, "", 2, &[(CellKind::Ernn, 3)], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    stack.cells[0].zero_params(&mut s);
    let seq = vec![vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.1, 0.1]];
    let hs = stack.unroll_values(&s, &seq, None).unwrap();
    assert!(hs[0].iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn unroll_stacks_layer_outputs() {
    let mut s = ParamStore::new();
    let layers = [(CellKind::Lstm, 3), (CellKind::Gru, 2)];
    let stack = StackedRnn::new(&mut s, "", 2, &layers, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let seq: Vec<Vec<f64>> = (0..4).map(|t| vec![t as f64 * 0.3, 1.0 - t as f64 * 0.2]).collect();
    let hs = stack.unroll_values(&s, &seq, None).unwrap();
    let mut h = vec![0.0; 2];
    for t in 0..seq.len() {
        h = gru_step(&stack.cells[1], &s, &h, &hs[0][t]).unwrap();
        assert!(close(&h, &hs[1][t], 1e-14));
    }
}

#[test]
fn unroll_gru_halving_from_one() {
    let mut s = ParamStore::new();
    let stack = StackedRnn::new(&mut s, "", 1, &[(CellKind::Gru, 1)], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    stack.cells[0].zero_params(&mut s);
    let seq = vec![vec![0.0]; 3];
    let hs = stack.unroll_values(&s, &seq, Some(&[vec![1.0]])).unwrap();
    assert!((hs[0][2][0] - 0.125).abs() < 1e-15);
}

#[test]
fn unroll_empty_sequence_rejected() {
    let mut s = ParamStore::new();
    let stack = StackedRnn::new(&mut s, "", 1, &[(CellKind::Ernn, 1)], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(stack.unroll_values(&s, &[], None).is_err());
}

#[test]
fn unroll_is_deterministic() {
    let mut s = ParamStore::new();
    let stack = StackedRnn::new(&mut s, "", 1, &[(CellKind::Lstm, 4)], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let seq: Vec<Vec<f64>> = (0..6).map(|t| vec![(t as f64).sin()]).collect();
    assert_eq!(stack.unroll_values(&s, &seq, None).unwrap(), stack.unroll_values(&s, &seq, None).unwrap());
}

#[test]
fn readout_examples() {
    let mut s = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let head = ReadoutHead::new(&mut s, "head", 2, 1, &mut rng);
    s.value_mut(head.dense.weight).fill(0.0);
    assert_eq!(readout(&[0.3, 0.7], &head, &s, 1).unwrap(), vec![0.0]);
    s.set(head.dense.weight, Tensor::matrix(3, 1, vec![1.0, 1.0, 0.0]).unwrap()).unwrap();
    assert!((readout(&[0.3, 0.7], &head, &s, 1).unwrap()[0] - 1.0).abs() < 1e-15);

    let mimo = ReadoutHead::new(&mut s, "mimo", 2, 4, &mut rng);
    assert_eq!(readout(&[0.3, 0.7], &mimo, &s, 4).unwrap().len(), 4);
    assert!(readout(&[0.3, 0.7], &mimo, &s, 1).is_err());
}

fn unroll_objective<'a>(
    stack: &'a StackedRnn,
    head: &'a ReadoutHead,
    seq: &Tensor,
    truncate_at: Option<usize>,
) -> impl Fn(&mut Tape, &ParamStore) -> crate::Result<Var> + 'a {
    let seq = seq.clone();
    move |tape: &mut Tape, store: &ParamStore| {
        let x = tape.constant(seq.clone());
        let steps = seq.shape()[1];
        let inputs = (0..steps)
            .map(|t| {
                let xt = tape.time_slice(x, t, 1)?;
                Ok(tape.reshape(xt, &[seq.shape()[0], seq.shape()[2]])?)
            })
            .collect::<crate::Result<Vec<_>>>()?;
        let bound = stack.bind(tape, store);
        let un = stack.unroll(tape, &bound, &inputs, None, truncate_at)?;
        let y = head.forward(tape, store, un.top())?;
        Ok(tape.sum_squares(y)?)
    }
}

fn random_seq(rng: &mut impl Rng, b: usize, t: usize, d: usize) -> Tensor {
    Tensor::new(vec![b, t, d], (0..b * t * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn every_cell_passes_finite_diff_through_five_steps() {
    for kind in [CellKind::Ernn, CellKind::Lstm, CellKind::Gru] {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = ParamStore::new();
        let stack = StackedRnn::new(&mut s, "", 2, &[(kind, 3), (kind, 2)], &mut rng).unwrap();
        let head = ReadoutHead::new(&mut s, "head", 2, 2, &mut rng);
        let seq = random_seq(&mut rng, 2, 5, 2);
        let err = finite_diff_check_params(&s, unroll_objective(&stack, &head, &seq, None), 1e-6, 1).unwrap();
        assert!(err < 1e-4, "{kind:?}: {err}");
    }
}

#[test]
fn one_parameter_set_per_layer() {
    let mut s = ParamStore::new();
    let layers = [(CellKind::Gru, 3), (CellKind::Lstm, 2)];
    let stack = StackedRnn::new(&mut s, "", 1, &layers, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut tape = Tape::new();
    let bound = stack.bind(&mut tape, &s);
    let inputs: Vec<Var> = (0..7).map(|_| tape.constant(Tensor::zeros(&[1, 1]))).collect();
    stack.unroll(&mut tape, &bound, &inputs, None, None).unwrap();
    assert_eq!(tape.bound_params(), 4 + 3);
    assert_eq!(s.len(), 7);
}

#[test]
fn shared_gradient_is_sum_over_steps() {
    let (mut s, c) = zeroed(CellKind::Ernn, 1, 1);
    let (u, w, b) = (0.7, -0.4, 0.2);
    s.set(c.input_weights, Tensor::matrix(1, 1, vec![u]).unwrap()).unwrap();
    s.set(c.recurrent_weights, Tensor::matrix(1, 1, vec![w]).unwrap()).unwrap();
    s.set(c.bias, Tensor::vector(vec![b]).unwrap()).unwrap();
    let (x1, x2) = (0.5, -1.5);

    let mut tape = Tape::new();
    let bound = c.bind(&mut tape, &s);
    let h0 = c.zero_state(&mut tape, 1);
    let i1 = tape.constant(Tensor::matrix(1, 1, vec![x1]).unwrap());
    let i2 = tape.constant(Tensor::matrix(1, 1, vec![x2]).unwrap());
    let s1 = c.step(&mut tape, &bound, h0, i1).unwrap();
    let s2 = c.step(&mut tape, &bound, s1, i2).unwrap();
    let out = tape.sum(s2.h).unwrap();
    tape.backward_scalar(out).unwrap();
    s.zero_grad();
    tape.accumulate_into(&mut s);

    let h1 = (u * x1 + b).tanh();
    let h2 = (w * h1 + u * x2 + b).tanh();
    let (g2, g1) = (1.0 - h2 * h2, 1.0 - h1 * h1);
    // step 2 contributes directly, step 1 through w
    let du = g2 * x2 + g2 * w * g1 * x1;
    let db = g2 + g2 * w * g1;
    let dw = g2 * h1;
    assert!((s.grad(c.input_weights).data()[0] - du).abs() < 1e-14);
    assert!((s.grad(c.bias).data()[0] - db).abs() < 1e-14);
    assert!((s.grad(c.recurrent_weights).data()[0] - dw).abs() < 1e-14);
}

fn grads_of(store: &ParamStore, f: impl Fn(&mut Tape, &ParamStore) -> crate::Result<Var>) -> Vec<f64> {
    let mut s = store.clone();
    s.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, &s).unwrap();
    tape.backward_scalar(out).unwrap();
    tape.accumulate_into(&mut s);
    s.ids().flat_map(|id| s.grad(id).data().to_vec()).collect()
}

#[test]
fn epoch_wise_tbptt_is_full_bptt() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = ParamStore::new();
    let stack = StackedRnn::new(&mut s, "", 1, &[(CellKind::Lstm, 3)], &mut rng).unwrap();
    let head = ReadoutHead::new(&mut s, "head", 3, 1, &mut rng);
    let seq = random_seq(&mut rng, 2, 6, 1);
    let tb = Tbptt::epoch_wise(6);
    assert_eq!(tb.truncation_point(6), None);
    let full = grads_of(&s, unroll_objective(&stack, &head, &seq, None));
    let tbptt = grads_of(&s, unroll_objective(&stack, &head, &seq, tb.truncation_point(6)));
    assert_eq!(full, tbptt);
}

#[test]
fn one_step_truncation_drops_longer_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut s = ParamStore::new();
    let stack = StackedRnn::new(&mut s, "", 1, &[(CellKind::Ernn, 2)], &mut rng).unwrap();
    let head = ReadoutHead::new(&mut s, "head", 2, 1, &mut rng);
    let seq = random_seq(&mut rng, 1, 3, 1);
    let tb = Tbptt {
        backward_steps: 1,
        forward_steps: 3,
    };
    assert_eq!(tb.truncation_point(3), Some(2));
    let full = grads_of(&s, unroll_objective(&stack, &head, &seq, None));
    let cut = grads_of(&s, unroll_objective(&stack, &head, &seq, Some(2)));
    assert!(full.iter().zip(&cut).any(|(a, b)| (a - b).abs() > 1e-6));

    // oracle: the last step alone, fed the step-2 state as a constant
    let h2 = stack.unroll_values(&s, &[vec![seq.data()[0]], vec![seq.data()[1]]], None).unwrap()[0][1].clone();
    let last_x = seq.data()[2];
    let oracle = grads_of(&s, |tape: &mut Tape, store: &ParamStore| {
        let bound = stack.bind(tape, store);
        let h = tape.constant(Tensor::matrix(1, 2, h2.clone())?);
        let x = tape.constant(Tensor::matrix(1, 1, vec![last_x])?);
        let st = stack.cells[0].step(tape, &bound[0], CellState { h, c: None }, x)?;
        let y = head.forward(tape, store, st.h)?;
        Ok(tape.sum_squares(y)?)
    });
    assert!(close(&cut, &oracle, 1e-14));
}

#[test]
fn tbptt_range_checked() {
    assert!(Tbptt { backward_steps: 0, forward_steps: 1 }.validate(5).is_err());
    assert!(Tbptt { backward_steps: 6, forward_steps: 1 }.validate(5).is_err());
    assert!(Tbptt { backward_steps: 2, forward_steps: 0 }.validate(5).is_err());
    assert!(Tbptt { backward_steps: 5, forward_steps: 5 }.validate(5).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gru_state_is_convex_combination(seed in 0u64..10_000, scale in 0.1f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let c = RecurrentCell::new(&mut s, "g", CellKind::Gru, 3, 4, &mut rng);
        let ids: Vec<_> = s.ids().collect();
        for id in ids {
            s.value_mut(id).data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
        }
        let h_prev: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let h = gru_step(&c, &s, &h_prev, &x).unwrap();

        // candidate recomputed independently from the raw arrays
        let u_w = s.value(c.input_weights).data();
        let w_w = s.value(c.recurrent_weights).data();
        let wc = s.value(c.candidate_weights.unwrap()).data();
        let b = s.value(c.bias).data();
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let pre = |blk: usize, j: usize| (0..3).map(|i| x[i] * u_w[i * 12 + blk * 4 + j]).sum::<f64>() + b[blk * 4 + j];
        let r: Vec<f64> = (0..4).map(|j| sig(pre(1, j) + (0..4).map(|i| h_prev[i] * w_w[i * 8 + 4 + j]).sum::<f64>())).collect();
        for j in 0..4 {
            let cand = (pre(2, j) + (0..4).map(|i| r[i] * h_prev[i] * wc[i * 4 + j]).sum::<f64>()).tanh();
            let (lo, hi) = (h_prev[j].min(cand), h_prev[j].max(cand));
            prop_assert!(h[j] >= lo - 1e-12 && h[j] <= hi + 1e-12);
        }
    }

    #[test]
    fn gates_stay_open_interval(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let c = RecurrentCell::new(&mut s, "l", CellKind::Lstm, 2, 3, &mut rng);
        let h_prev: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c_prev: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (h, cs) = lstm_step(&c, &s, &h_prev, &c_prev, &x).unwrap();
        // |h| = |o tanh(c)| < |tanh(c)|
        for j in 0..3 {
            prop_assert!(h[j].abs() < cs[j].tanh().abs() + 1e-15);
        }
    }
}
