//! Layer building blocks on top of the tape.

use super::tape::{Result, Tape, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `x * w + b` for `x: N x in`, `w: in x out`, `b: 1 x out`.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

/// Row-wise layer normalization followed by a per-feature affine map.
///
/// A constant row normalizes to zeros: the variance is 0 and `eps` keeps the
/// inverse standard deviation finite.
pub fn layer_norm(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let y = normalize_rows(tape, x)?;
    let y = tape.mul_row(y, gain)?;
    tape.add_row(y, bias)
}

/// The pre-affine part of [`layer_norm`].
pub fn normalize_rows(tape: &mut Tape, x: Var) -> Result<Var> {
    let c = tape.shape(x)[1] as f64;
    let s = tape.sum_cols(x)?;
    let neg_mean = tape.scale(s, -1.0 / c)?;
    let centered = tape.add_col(x, neg_mean)?;
    let sq = tape.square(centered)?;
    let ss = tape.sum_cols(sq)?;
    let var = tape.scale(ss, 1.0 / c)?;
    let var = tape.add_scalar(var, LAYER_NORM_EPS)?;
    let inv_std = tape.pow(var, -0.5)?;
    tape.mul_col(centered, inv_std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn constant_row_normalizes_to_zero() {
        let mut t = Tape::new();
        let x = t.var(Tensor::row(vec![5.0; 4]));
        let y = normalize_rows(&mut t, x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0; 4]);
        let s = t.sum(y).unwrap();
        let g = t.grad(s, &[x], false).unwrap()[0];
        assert!(t.value(g).is_finite());
    }

    #[test]
    fn normalized_rows_have_zero_mean_unit_variance() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 6.0, -3.0, 0.5, 0.0]));
        let y = normalize_rows(&mut t, x).unwrap();
        for row in t.value(y).data().chunks(3) {
            let m: f64 = row.iter().sum::<f64>() / 3.0;
            let v: f64 = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }
}
