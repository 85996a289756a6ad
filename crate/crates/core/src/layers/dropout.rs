use rand::Rng;

use super::{ForwardCtx, Mode};
use crate::autodiff::{Tape, Var};
use crate::error::{ensure, Result};

/// Inverted dropout: in training each entry is zeroed with probability `p`
/// and survivors are scaled by `1 / (1 - p)`; at inference it is the identity.
pub fn dropout(tape: &mut Tape, x: Var, p: f64, ctx: &mut ForwardCtx) -> Result<Var> {
    ensure!((0.0..1.0).contains(&p), InvalidArgument, "dropout rate {p} outside [0, 1)");
    if p == 0.0 || ctx.mode == Mode::Infer {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - p);
    let n = tape.value(x).len();
    let mask = (0..n).map(|_| if ctx.rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
    Ok(tape.mul_const(x, mask)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(x: &[f64], p: f64, ctx: &mut ForwardCtx) -> Vec<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::vector(x.to_vec()).unwrap());
        let y = dropout(&mut tape, v, p, ctx).unwrap();
        tape.value(y).data().to_vec()
    }

    #[test]
    fn zero_rate_and_inference_are_identity() {
        assert_eq!(run(&[1.0, 2.0], 0.0, &mut ForwardCtx::train(1)), vec![1.0, 2.0]);
        assert_eq!(run(&[1.0, 2.0], 0.5, &mut ForwardCtx::infer()), vec![1.0, 2.0]);
    }

    #[test]
    fn rate_out_of_range() {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::scalar(1.0));
        assert!(dropout(&mut tape, v, 1.0, &mut ForwardCtx::train(0)).is_err());
        assert!(dropout(&mut tape, v, -0.1, &mut ForwardCtx::train(0)).is_err());
    }

    #[test]
    fn seeded_mask_replays() {
        // Replay the draws: an entry is dropped when its uniform draw is < p.
        let seed = 11;
        let mut replay = ChaCha8Rng::seed_from_u64(seed);
        let expect: Vec<f64> = (0..2)
            .map(|_| if replay.gen::<f64>() < 0.5 { 0.0 } else { 4.0 })
            .collect();
        let got = run(&[2.0, 2.0], 0.5, &mut ForwardCtx::train(seed));
        assert_eq!(got, expect);
        // Find a seed whose mask is [keep, drop] and check the [4, 0] case.
        let seed = (0..1000u64)
            .find(|&s| {
                let mut r = ChaCha8Rng::seed_from_u64(s);
                r.gen::<f64>() >= 0.5 && r.gen::<f64>() < 0.5
            })
            .unwrap();
        assert_eq!(run(&[2.0, 2.0], 0.5, &mut ForwardCtx::train(seed)), vec![4.0, 0.0]);
    }

    #[test]
    fn expectation_is_preserved() {
        let n = 100_000;
        let x = vec![1.5; n];
        let y = run(&x, 0.3, &mut ForwardCtx::train(5));
        let mean = y.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.5).abs() / 1.5 < 0.02, "{mean}");
    }
}
