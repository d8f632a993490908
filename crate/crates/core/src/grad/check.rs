use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the tape gradient of `f` at `x` with central differences.
///
/// `f` receives a fresh tape and the leaf holding `x`, and must return a
/// scalar. The result is the largest `|analytic - numeric| / max(1, |analytic|)`
/// over the coordinates of `x`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(t);
        let out = f(&mut tape, v)?;
        let vals = tape.value(out);
        if vals.len() != 1 {
            return Err(Error::NonScalarLoss(tape.shape(out).to_vec()));
        }
        Ok(vals[0])
    };

    let mut tape = Tape::new();
    let leaf = tape.leaf(&x.clone().requiring_grad());
    let out = f(&mut tape, leaf)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<f64> = grads.get(leaf).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        if !a.is_finite() || !numeric.is_finite() {
            return Err(Error::NonFinite(format!("coordinate {i}: analytic {a}, numeric {numeric}")));
        }
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
