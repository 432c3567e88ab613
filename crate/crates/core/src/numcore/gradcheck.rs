use super::tape::{Tape, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Evaluates `f` on a fresh tape with `x` as the only trainable leaf.
fn evaluate<T, F>(f: &F, x: &Tensor<T>, with_grad: bool) -> Result<(T, Option<Tensor<T>>)>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), with_grad);
    let out = f(&mut tape, xv)?;
    let value = tape.value(out).item()?;
    if !with_grad {
        return Ok((value, None));
    }
    tape.backward(out)?;
    let grad = tape.grad(xv).unwrap_or_else(|| Tensor::zeros(x.shape()));
    Ok((value, Some(grad)))
}

/// Max over coordinates of `|analytic - numeric| / max(1, |numeric|)`, the
/// numeric derivative taken with a five-point central stencil.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, step: T) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..x.numel()).collect();
    grad_check_coords(f, x, step, &all)
}

/// [`grad_check`] restricted to the listed flat coordinates of `x`.
pub fn grad_check_coords<T, F>(f: F, x: &Tensor<T>, step: T, coords: &[usize]) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    if step <= T::zero() {
        return Err(Error::contract("grad_check step must be positive"));
    }
    let (v1, g1) = evaluate(&f, x, true)?;
    let (v2, g2) = evaluate(&f, x, true)?;
    if !v1.to_bits_eq(v2) || g1 != g2 {
        return Err(Error::NonDeterministic(
            "repeated evaluation at the same point differs".into(),
        ));
    }
    let analytic = g1.expect("gradient requested");
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for &i in coords {
        if i >= x.numel() {
            return Err(Error::shape(format!("coordinate {i} outside tensor")));
        }
        let orig = x.data()[i];
        let mut at = |k: f64| -> Result<(f64, f64)> {
            probe.data_mut()[i] = orig + T::of(k * step.as_f64());
            let taken = probe.data()[i].as_f64() - orig.as_f64();
            Ok((evaluate(&f, &probe, false)?.0.as_f64(), taken))
        };
        // fourth-order central stencil on the offsets actually representable in T
        let (p1, h1) = at(1.0)?;
        let (m1, g1) = at(-1.0)?;
        let (p2, h2) = at(2.0)?;
        let (m2, g2) = at(-2.0)?;
        probe.data_mut()[i] = orig;
        let d1 = (p1 - m1) / (h1 - g1);
        let d2 = (p2 - m2) / (h2 - g2);
        let numeric = (4.0 * d1 - d2) / 3.0;
        let err = (analytic.data()[i].as_f64() - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

trait BitsEq {
    fn to_bits_eq(self, other: Self) -> bool;
}

impl<T: Scalar> BitsEq for T {
    fn to_bits_eq(self, other: Self) -> bool {
        self.as_f64().to_bits() == other.as_f64().to_bits()
    }
}
