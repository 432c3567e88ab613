//! Dense row-major tensors with a reverse-mode tape.
//!
//! All model and loss arithmetic goes through [`Tape`] so the same code path
//! serves training, inference and gradient verification. `Tape<f64>` is the
//! shadow mode used only to check gradients tightly.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_coords};
pub use tape::{Tape, Var};
pub use tensor::{Scalar, Tensor};

/// Normalisation epsilon used by every RMS norm in the crate.
pub const NORM_EPS: f64 = 1e-6;

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::error::Error;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_value() {
        let mut tape = Tape::<f64>::new();
        let id = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let x = tape.constant(t(&[2, 2], &[3., -1., 0.5, 8.]));
        let y = tape.matmul(id, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));

        let a = tape.constant(t(&[1, 2], &[1., 2.]));
        let b = tape.constant(t(&[2, 1], &[3., 4.]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[11.]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3, 2], &[0., 0., 1000., 1000., 0., 3f64.ln()]));
        let y = tape.softmax_rows(x).unwrap();
        let v = tape.value(y).data();
        assert_eq!(&v[0..4], &[0.5, 0.5, 0.5, 0.5]);
        assert!((v[4] - 0.25).abs() < 1e-12);
        assert!((v[5] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_zeroes_disallowed() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2, 3], &[1., 2., 3., 1., 2., 3.]));
        let y = tape
            .masked_softmax_rows(x, &[true, false, false, true, true, false])
            .unwrap();
        let v = tape.value(y).data();
        assert_eq!(&v[0..3], &[1.0, 0.0, 0.0]);
        assert_eq!(v[5], 0.0);
        assert!((v[3] + v[4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rmsnorm_examples() {
        let mut tape = Tape::<f64>::new();
        let ones = tape.constant(Tensor::ones(&[2]));
        let zeros = tape.constant(Tensor::zeros(&[2]));
        let z = tape.constant(Tensor::zeros(&[1, 2]));
        let y = tape.rmsnorm(z, ones, 1e-6).unwrap();
        assert_eq!(tape.value(y).data(), &[0., 0.]);

        let x = tape.constant(t(&[1, 2], &[3., 4.]));
        let y = tape.rmsnorm(x, ones, 1e-12).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] - 0.848528).abs() < 1e-5 && (v[1] - 1.131371).abs() < 1e-5);

        let y = tape.rmsnorm(x, zeros, 1e-6).unwrap();
        assert_eq!(tape.value(y).data(), &[0., 0.]);
        assert!(tape.rmsnorm(x, ones, 0.0).is_err());
    }

    #[test]
    fn backward_examples() {
        let mut tape = Tape::<f32>::new();
        let w = tape.param(Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
        let s = tape.sum(w).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::<f32>::new();
        let w = tape.param(Tensor::new(vec![1], vec![2.0]).unwrap());
        let sq = tape.mul(w, w).unwrap();
        let s = tape.sum(sq).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_second_call() {
        let mut tape = Tape::<f32>::new();
        let w = tape.param(Tensor::ones(&[2]));
        assert!(matches!(tape.backward(w), Err(Error::Contract(_))));
        let s = tape.sum(w).unwrap();
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Contract(_))));
        assert_eq!(tape.grad(w).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f32>::new();
        let c = tape.constant(Tensor::ones(&[2]));
        let w = tape.param(Tensor::ones(&[2]));
        let p = tape.mul(c, w).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(c).is_none());
        assert!(tape.grad(w).is_some());
    }

    /// Two-layer network exercising every primitive the model uses.
    fn two_layer(tape: &mut Tape<f64>, x: Var, w1: &Tensor<f64>, w2: &Tensor<f64>) -> crate::Result<Var> {
        let w1 = tape.constant(w1.clone());
        let w2 = tape.constant(w2.clone());
        let gain = tape.constant(Tensor::full(&[4], 1.3));
        let h = tape.matmul_t(x, w1)?;
        let h = tape.quick_gelu(h)?;
        let h = tape.rmsnorm(h, gain, NORM_EPS)?;
        let scores = tape.matmul_t(h, h)?;
        let p = tape.masked_softmax_rows(scores, &[true, false, false, true, true, false, true, true, true])?;
        let mix = tape.matmul(p, h)?;
        let o = tape.matmul(mix, w2)?;
        let a = tape.block(o, 0..2, 0..2)?;
        let b = tape.block(o, 1..3, 1..3)?;
        let c = tape.concat_cols(&[a, b])?;
        let n = tape.normalize_rows(c)?;
        let m = tape.mean_rows(n)?;
        let lse = tape.logsumexp_rows(o)?;
        let ls = tape.log_softmax_rows(m)?;
        let g = tape.gather(o, &[0, 4, 4])?;
        let stacked = tape.concat_rows(&[m, ls])?;
        let parts = [tape.sum(lse)?, tape.sum(stacked)?, tape.sum(g)?];
        let s01 = tape.add(parts[0], parts[1])?;
        let s = tape.sub(s01, parts[2])?;
        tape.scale(s, 0.7)
    }

    #[test]
    fn random_two_layer_net_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w1 = Tensor::<f64>::randn(&[4, 5], 0.5, &mut rng);
        let w2 = Tensor::<f64>::randn(&[4, 3], 0.5, &mut rng);
        let x = Tensor::<f64>::randn(&[3, 5], 1.0, &mut rng);
        let err = grad_check(|t, v| two_layer(t, v, &w1, &w2), &x, 1e-3).unwrap();
        assert!(err < 1e-3, "relative error {err}");

        // f32 with the same step stays within the looser bound.
        let x32: Tensor<f32> = x.cast();
        let (w1, w2) = (w1.clone(), w2.clone());
        let err32 = grad_check(
            |t: &mut Tape<f32>, v| {
                let w1 = t.constant(w1.cast());
                let w2 = t.constant(w2.cast());
                let h = t.matmul_t(v, w1)?;
                let h = t.quick_gelu(h)?;
                let o = t.matmul(h, w2)?;
                let l = t.logsumexp_rows(o)?;
                t.sum(l)
            },
            &x32,
            1e-3,
        )
        .unwrap();
        assert!(err32 < 1e-3, "f32 relative error {err32}");
    }

    #[test]
    fn gather_rows_accumulates_repeated_ids() {
        let mut tape = Tape::<f64>::new();
        let table = tape.param(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
        let g = tape.gather_rows(table, &[2, 0, 2]).unwrap();
        assert_eq!(tape.value(g).data(), &[5., 6., 1., 2., 5., 6.]);
        let s = tape.sum(g).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(table).unwrap().data(), &[1., 1., 0., 0., 2., 2.]);
        let mut tape = Tape::<f64>::new();
        let table = tape.param(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
        assert!(matches!(tape.gather_rows(table, &[3]), Err(Error::Vocab { .. })));
    }

    #[test]
    fn normalize_zero_row_is_degenerate() {
        let mut tape = Tape::<f32>::new();
        let z = tape.constant(Tensor::zeros(&[1, 3]));
        assert!(matches!(tape.normalize_rows(z), Err(Error::DegenerateEmbedding(_))));
    }

    #[test]
    fn identical_inputs_give_bitwise_identical_outputs() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut tape = Tape::<f32>::new();
            let a = tape.param(Tensor::randn(&[7, 9], 1.0, &mut rng));
            let b = tape.constant(Tensor::randn(&[9, 4], 1.0, &mut rng));
            let c = tape.matmul(a, b).unwrap();
            let d = tape.softmax_rows(c).unwrap();
            let s = tape.sum(d).unwrap();
            tape.backward(s).unwrap();
            (tape.value(d).clone(), tape.grad(a).unwrap())
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(row in proptest::collection::vec(-1e4f32..1e4f32, 1..40)) {
            let n = row.len();
            let mut tape = Tape::<f32>::new();
            let x = tape.constant(Tensor::new(vec![1, n], row).unwrap());
            let y = tape.softmax_rows(x).unwrap();
            let s: f64 = tape.value(y).data().iter().map(|&v| v as f64).sum();
            prop_assert!((s - 1.0).abs() <= 1e-6, "sum {}", s);
        }
    }
}
