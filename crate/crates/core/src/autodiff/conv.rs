//! 3D convolution kernels over `[B, C, D, H, W]` arrays.
//!
//! All three kernels unfold the input into a tap matrix and reduce to one
//! matrix product. Each is bilinear in its two operands, which is what lets
//! the tape differentiate them again.

use super::tape::ConvSpec;
use super::tensor::{matmul, Tensor};

pub(crate) fn output_shape(x: &[usize], w: &[usize], spec: ConvSpec) -> Result<Vec<usize>, String> {
    if x.len() != 5 || w.len() != 5 {
        return Err(format!("expected rank-5 input and kernel, got {x:?} and {w:?}"));
    }
    if x[1] != w[1] {
        return Err(format!("input has {} channels, kernel expects {}", x[1], w[1]));
    }
    let k = w[2];
    if w[3] != k || w[4] != k {
        return Err(format!("kernel must be cubic, got {w:?}"));
    }
    if spec.stride == 0 {
        return Err("stride must be positive".into());
    }
    let mut out = vec![x[0], w[0]];
    for &e in &x[2..] {
        let padded = e + 2 * spec.pad;
        if padded < k {
            return Err(format!("extent {e} with padding {} is smaller than kernel {k}", spec.pad));
        }
        out.push((padded - k) / spec.stride + 1);
    }
    Ok(out)
}

/// Sizes of one convolution.
struct Dims {
    batch: usize,
    ci: usize,
    co: usize,
    k: usize,
    x: [usize; 3],
    y: [usize; 3],
}

impl Dims {
    fn new(x: &[usize], w: &[usize], y: &[usize]) -> Self {
        Self {
            batch: x[0],
            ci: x[1],
            co: w[0],
            k: w[2],
            x: [x[2], x[3], x[4]],
            y: [y[2], y[3], y[4]],
        }
    }

    fn y_sp(&self) -> usize {
        self.y.iter().product()
    }

    /// Rows of the unfolded input.
    fn taps(&self) -> usize {
        self.ci * self.k * self.k * self.k
    }

    /// Columns of the unfolded input.
    fn cols(&self) -> usize {
        self.batch * self.y_sp()
    }
}

/// Calls `f(col_index, x_index)` for every in-bounds entry of the unfolded input.
///
/// The unfolded input is `taps x (batch * output voxels)`, row-major.
#[inline(always)]
fn for_each_unfolded(d: &Dims, spec: ConvSpec, mut f: impl FnMut(usize, usize)) {
    let (s, p) = (spec.stride as isize, spec.pad as isize);
    let [xd, xh, xw] = d.x;
    let [od, oh, ow] = d.y;
    let (x_sp, y_sp, cols, k) = (xd * xh * xw, d.y_sp(), d.cols(), d.k);
    for ci in 0..d.ci {
        for kd in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    let row = ((ci * k + kd) * k + kh) * k + kw;
                    for b in 0..d.batch {
                        let x_base = (b * d.ci + ci) * x_sp;
                        let c_base = row * cols + b * y_sp;
                        for zo in 0..od {
                            let zi = zo as isize * s + kd as isize - p;
                            if zi < 0 || zi >= xd as isize {
                                continue;
                            }
                            for yo in 0..oh {
                                let yi = yo as isize * s + kh as isize - p;
                                if yi < 0 || yi >= xh as isize {
                                    continue;
                                }
                                let x_row = x_base + (zi as usize * xh + yi as usize) * xw;
                                let c_row = c_base + (zo * oh + yo) * ow;
                                for xo in 0..ow {
                                    let xi = xo as isize * s + kw as isize - p;
                                    if xi < 0 || xi >= xw as isize {
                                        continue;
                                    }
                                    f(c_row + xo, x_row + xi as usize);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn unfold(x: &Tensor, d: &Dims, spec: ConvSpec) -> Tensor {
    let mut col = vec![0.0; d.taps() * d.cols()];
    let xd = x.data();
    for_each_unfolded(d, spec, |c, i| col[c] = xd[i]);
    Tensor::new(vec![d.taps(), d.cols()], col)
}

/// `[B, C, S]` to `[C, B * S]`.
fn channels_first(t: &[f64], batch: usize, c: usize, sp: usize) -> Tensor {
    let mut out = vec![0.0; t.len()];
    for b in 0..batch {
        for ch in 0..c {
            let src = &t[(b * c + ch) * sp..(b * c + ch + 1) * sp];
            out[ch * batch * sp + b * sp..ch * batch * sp + (b + 1) * sp].copy_from_slice(src);
        }
    }
    Tensor::new(vec![c, batch * sp], out)
}

/// `[C, B * S]` to `[B, C, S]`.
fn batch_first(t: &[f64], batch: usize, c: usize, sp: usize) -> Vec<f64> {
    let mut out = vec![0.0; t.len()];
    for ch in 0..c {
        for b in 0..batch {
            let src = &t[ch * batch * sp + b * sp..ch * batch * sp + (b + 1) * sp];
            out[(b * c + ch) * sp..(b * c + ch + 1) * sp].copy_from_slice(src);
        }
    }
    out
}

pub(crate) fn forward(x: &Tensor, w: &Tensor, y_shape: &[usize], spec: ConvSpec) -> Tensor {
    let d = Dims::new(x.shape(), w.shape(), y_shape);
    let col = unfold(x, &d, spec);
    let wm = w.reshaped(&[d.co, d.taps()]);
    let y = matmul(&wm, &col, false, false);
    Tensor::new(y_shape.to_vec(), batch_first(y.data(), d.batch, d.co, d.y_sp()))
}

pub(crate) fn input_grad(g: &Tensor, w: &Tensor, x_shape: &[usize], spec: ConvSpec) -> Tensor {
    let d = Dims::new(x_shape, w.shape(), g.shape());
    let gm = channels_first(g.data(), d.batch, d.co, d.y_sp());
    let wm = w.reshaped(&[d.co, d.taps()]);
    let col = matmul(&wm, &gm, true, false);
    let cd = col.data();
    let mut dx = vec![0.0; x_shape.iter().product()];
    for_each_unfolded(&d, spec, |c, i| dx[i] += cd[c]);
    Tensor::new(x_shape.to_vec(), dx)
}

pub(crate) fn weight_grad(x: &Tensor, g: &Tensor, w_shape: &[usize], spec: ConvSpec) -> Tensor {
    let d = Dims::new(x.shape(), w_shape, g.shape());
    let col = unfold(x, &d, spec);
    let gm = channels_first(g.data(), d.batch, d.co, d.y_sp());
    matmul(&gm, &col, false, true).reshaped(w_shape)
}

pub(crate) fn avg_pool2(x: &Tensor) -> Tensor {
    let s = x.shape();
    let (bc, d, h, w) = (s[0] * s[1], s[2], s[3], s[4]);
    let (d2, h2, w2) = (d / 2, h / 2, w / 2);
    let src = x.data();
    let mut out = vec![0.0; bc * d2 * h2 * w2];
    for c in 0..bc {
        for z in 0..d {
            for y in 0..h {
                for xx in 0..w {
                    let o = ((c * d2 + z / 2) * h2 + y / 2) * w2 + xx / 2;
                    out[o] += src[((c * d + z) * h + y) * w + xx] * 0.125;
                }
            }
        }
    }
    Tensor::new(vec![s[0], s[1], d2, h2, w2], out)
}

pub(crate) fn avg_pool2_adjoint(g: &Tensor) -> Tensor {
    let s = g.shape();
    let (bc, d2, h2, w2) = (s[0] * s[1], s[2], s[3], s[4]);
    let (d, h, w) = (d2 * 2, h2 * 2, w2 * 2);
    let src = g.data();
    let mut out = vec![0.0; bc * d * h * w];
    for c in 0..bc {
        for z in 0..d {
            for y in 0..h {
                for xx in 0..w {
                    let o = ((c * d2 + z / 2) * h2 + y / 2) * w2 + xx / 2;
                    out[((c * d + z) * h + y) * w + xx] = src[o] * 0.125;
                }
            }
        }
    }
    Tensor::new(vec![s[0], s[1], d, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_two_kernel_four_halves_resolution() {
        let spec = ConvSpec { stride: 2, pad: 1 };
        for r in [2usize, 4, 8, 16, 64] {
            let out = output_shape(&[1, 1, r, r, r], &[3, 1, 4, 4, 4], spec).unwrap();
            assert_eq!(out, vec![1, 3, r / 2, r / 2, r / 2]);
        }
    }

    #[test]
    fn identity_kernel_copies_input() {
        let spec = ConvSpec { stride: 1, pad: 0 };
        let x = Tensor::new(vec![1, 1, 2, 2, 2], (0..8).map(|v| v as f64).collect());
        let w = Tensor::new(vec![1, 1, 1, 1, 1], vec![1.0]);
        let y = forward(&x, &w, &[1, 1, 2, 2, 2], spec);
        assert_eq!(y, x);
    }

    #[test]
    fn pool_adjoint_pairing() {
        // <pool(x), g> == <x, pool^T(g)>
        let x = Tensor::new(vec![1, 2, 2, 2, 4], (0..32).map(|v| (v as f64).sin()).collect());
        let g = Tensor::new(vec![1, 2, 1, 1, 2], vec![0.3, -1.0, 2.0, 0.5]);
        let lhs: f64 = avg_pool2(&x).data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(avg_pool2_adjoint(&g).data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
