use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Compares [`Tape::backward`] against central differences of `f` at `x`.
///
/// `f` records a scalar objective of its argument on a fresh tape. Each
/// coordinate is perturbed by `±eps`; the step actually realised in f32 is
/// used as the divisor and the perturbed objectives are evaluated on
/// [`Tape::precise`] tapes, so the difference quotient is free of f32
/// rounding and `eps` can sit well below the kinks of piecewise-linear
/// ops. Returns the largest `|a - b| / max(|a|, |b|, 1e-8)` over all
/// coordinates.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f32) -> Result<f32>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let input = tape.leaf(x.clone(), true);
    let loss = f(&mut tape, input)?;
    tape.backward(loss)?;
    let analytic = match tape.grad(input) {
        Some(g) => g.data().to_vec(),
        None => vec![0.0; x.numel()],
    };

    let eval = |point: Tensor| -> Result<f64> {
        let mut tape = Tape::precise();
        let v = tape.leaf(point, false);
        let out = f(&mut tape, v)?;
        tape.scalar(out)
    };

    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus.data_mut()[i] += eps;
        minus.data_mut()[i] -= eps;
        let step = f64::from(plus.data()[i]) - f64::from(minus.data()[i]);
        let numeric = (eval(plus)? - eval(minus)?) / step;
        let a = f64::from(a);
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst as f32)
}
