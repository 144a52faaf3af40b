//! Forward and backward kernels shared by the tape and the no-grad
//! inference path.
//!
//! Determinism contract: every kernel computes each output element as its own
//! fixed-order reduction, and parallelism (see [`crate::par`]) only ever
//! splits work across those independent elements. Parallel and sequential
//! execution therefore agree bit for bit.

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{pairwise_sum, Scalar, Tensor};

fn dim_err2(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dim(format!("{op}: shapes {a:?} and {b:?}"))
}

/// `[m,k] x [k,n] -> [m,n]`.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (ash, bsh) = (a.shape(), b.shape());
    if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
        return Err(dim_err2("matmul", ash, bsh));
    }
    let (m, k, n) = (ash[0], ash[1], bsh[1]);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![S::zero(); m * n];
    par::fill_chunks(&mut out, n.max(1), |i, row| {
        let arow = &ad[i * k..(i + 1) * k];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &bd[kk * n..(kk + 1) * n];
            for (o, &bkj) in row.iter_mut().zip(brow) {
                *o = *o + aik * bkj;
            }
        }
    });
    Tensor::from_vec(vec![m, n], out)
}

/// `[k,m]` view of an `[m,k]` tensor.
pub fn transpose2<S: Scalar>(a: &Tensor<S>) -> Result<Tensor<S>> {
    let sh = a.shape();
    if sh.len() != 2 {
        return Err(Error::dim(format!("transpose2: shape {sh:?}")));
    }
    let (m, k) = (sh[0], sh[1]);
    let ad = a.data();
    let mut out = vec![S::zero(); m * k];
    for i in 0..m {
        for j in 0..k {
            out[j * m + i] = ad[i * k + j];
        }
    }
    Tensor::from_vec(vec![k, m], out)
}

/// Gradients of `matmul` with respect to both operands.
pub fn matmul_backward<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    grad: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let da = matmul(grad, &transpose2(b)?)?;
    let db = matmul(&transpose2(a)?, grad)?;
    Ok((da, db))
}

/// Output spatial extent of a convolution along one axis.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::contract("conv2d: stride must be >= 1"));
    }
    let padded = input + 2 * padding;
    if kernel == 0 || kernel > padded {
        return Err(Error::contract(format!(
            "conv2d: kernel extent {kernel} exceeds padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Cross-correlation of `[N,C,H,W]` with `[F,C,kh,kw]`, zero padding.
pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    let (ish, ksh) = (input.shape(), kernel.shape());
    if ish.len() != 4 || ksh.len() != 4 || ish[1] != ksh[1] {
        return Err(dim_err2("conv2d", ish, ksh));
    }
    let (n, c, h, w) = (ish[0], ish[1], ish[2], ish[3]);
    let (f, kh, kw) = (ksh[0], ksh[2], ksh[3]);
    let oh = conv_out_extent(h, kh, stride, padding)?;
    let ow = conv_out_extent(w, kw, stride, padding)?;
    let (id, kd) = (input.data(), kernel.data());
    let mut out = vec![S::zero(); n * f * oh * ow];
    // One chunk per (sample, filter) output plane.
    par::fill_chunks(&mut out, oh * ow, |plane, oplane| {
        let (ni, fi) = (plane / f, plane % f);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = S::zero();
                for ci in 0..c {
                    let ibase = ((ni * c + ci) * h) * w;
                    let kbase = ((fi * c + ci) * kh) * kw;
                    for ky in 0..kh {
                        let y = (oy * stride + ky) as isize - padding as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let x = (ox * stride + kx) as isize - padding as isize;
                            if x < 0 || x >= w as isize {
                                continue;
                            }
                            acc = acc
                                + id[ibase + y as usize * w + x as usize]
                                    * kd[kbase + ky * kw + kx];
                        }
                    }
                }
                oplane[oy * ow + ox] = acc;
            }
        }
    });
    Tensor::from_vec(vec![n, f, oh, ow], out)
}

/// Gradients of `conv2d` with respect to input and kernel.
pub fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    grad: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let (ish, ksh, gsh) = (input.shape(), kernel.shape(), grad.shape());
    let (n, c, h, w) = (ish[0], ish[1], ish[2], ish[3]);
    let (f, kh, kw) = (ksh[0], ksh[2], ksh[3]);
    let (oh, ow) = (gsh[2], gsh[3]);
    let (id, kd, gd) = (input.data(), kernel.data(), grad.data());

    // d(input): for each input cell, gather contributions from every output
    // position whose receptive field covers it. Gather form keeps writes
    // disjoint, so planes can be computed independently.
    let mut dinput = vec![S::zero(); id.len()];
    par::fill_chunks(&mut dinput, h * w, |plane, dplane| {
        let (ni, ci) = (plane / c, plane % c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = S::zero();
                for fi in 0..f {
                    let gbase = ((ni * f + fi) * oh) * ow;
                    let kbase = ((fi * c + ci) * kh) * kw;
                    for ky in 0..kh {
                        let ypos = y as isize + padding as isize - ky as isize;
                        if ypos < 0 || ypos % stride as isize != 0 {
                            continue;
                        }
                        let oy = (ypos / stride as isize) as usize;
                        if oy >= oh {
                            continue;
                        }
                        for kx in 0..kw {
                            let xpos = x as isize + padding as isize - kx as isize;
                            if xpos < 0 || xpos % stride as isize != 0 {
                                continue;
                            }
                            let ox = (xpos / stride as isize) as usize;
                            if ox >= ow {
                                continue;
                            }
                            acc = acc + gd[gbase + oy * ow + ox] * kd[kbase + ky * kw + kx];
                        }
                    }
                }
                dplane[y * w + x] = acc;
            }
        }
    });

    // d(kernel): each kernel element owns one fixed-order reduction over the
    // batch and output positions.
    let mut dkernel = vec![S::zero(); kd.len()];
    par::fill_chunks(&mut dkernel, c * kh * kw, |fi, dk| {
        for ci in 0..c {
            for ky in 0..kh {
                for kx in 0..kw {
                    let mut acc = S::zero();
                    for ni in 0..n {
                        let gbase = ((ni * f + fi) * oh) * ow;
                        let ibase = ((ni * c + ci) * h) * w;
                        for oy in 0..oh {
                            let y = (oy * stride + ky) as isize - padding as isize;
                            if y < 0 || y >= h as isize {
                                continue;
                            }
                            for ox in 0..ow {
                                let x = (ox * stride + kx) as isize - padding as isize;
                                if x < 0 || x >= w as isize {
                                    continue;
                                }
                                acc = acc
                                    + gd[gbase + oy * ow + ox]
                                        * id[ibase + y as usize * w + x as usize];
                            }
                        }
                    }
                    dk[(ci * kh + ky) * kw + kx] = acc;
                }
            }
        }
    });

    Ok((
        Tensor::from_vec(ish.to_vec(), dinput)?,
        Tensor::from_vec(ksh.to_vec(), dkernel)?,
    ))
}

fn axis_lanes(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::contract(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer: usize = shape[..axis].iter().product();
    let k = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    Ok((outer, k, inner))
}

/// Log-softmax along `axis`, computed with max subtraction so that large
/// logits cannot overflow: `z - max - ln(sum(exp(z - max)))`.
pub fn log_softmax<S: Scalar>(z: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
    let (_, k, inner) = axis_lanes(z.shape(), axis)?;
    let zd = z.data();
    let mut out = vec![S::zero(); zd.len()];
    par::fill_chunks(&mut out, k * inner, |o, chunk| {
        let base = o * k * inner;
        for i in 0..inner {
            let mut m = S::neg_infinity();
            for j in 0..k {
                m = m.max(zd[base + j * inner + i]);
            }
            let mut sum = S::zero();
            for j in 0..k {
                sum = sum + (zd[base + j * inner + i] - m).exp();
            }
            let lse = sum.ln();
            for j in 0..k {
                chunk[j * inner + i] = zd[base + j * inner + i] - m - lse;
            }
        }
    });
    Tensor::from_vec(z.shape().to_vec(), out)
}

/// Gradient of `log_softmax`: `g - softmax * sum(g)` per lane, with the
/// softmax recovered as `exp(output)`.
pub fn log_softmax_backward<S: Scalar>(
    output: &Tensor<S>,
    grad: &Tensor<S>,
    axis: usize,
) -> Result<Tensor<S>> {
    let (_, k, inner) = axis_lanes(output.shape(), axis)?;
    let (od, gd) = (output.data(), grad.data());
    let mut out = vec![S::zero(); od.len()];
    par::fill_chunks(&mut out, k * inner, |o, chunk| {
        let base = o * k * inner;
        for i in 0..inner {
            let mut gsum = S::zero();
            for j in 0..k {
                gsum = gsum + gd[base + j * inner + i];
            }
            for j in 0..k {
                let idx = base + j * inner + i;
                chunk[j * inner + i] = gd[idx] - od[idx].exp() * gsum;
            }
        }
    });
    Tensor::from_vec(output.shape().to_vec(), out)
}

/// Softmax along `axis` (probability rows; no tape involvement).
pub fn softmax<S: Scalar>(z: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
    Ok(log_softmax(z, axis)?.map(|v| v.exp()))
}

pub fn relu<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    a.map(|v| if v > S::zero() { v } else { S::zero() })
}

pub fn relu_backward<S: Scalar>(input: &Tensor<S>, grad: &Tensor<S>) -> Tensor<S> {
    let data: Vec<S> = input
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&x, &g)| if x > S::zero() { g } else { S::zero() })
        .collect();
    Tensor::from_vec(input.shape().to_vec(), data).expect("same shape")
}

fn zip_same_shape<S: Scalar>(
    op: &str,
    a: &Tensor<S>,
    b: &Tensor<S>,
    f: impl Fn(S, S) -> S,
) -> Result<Tensor<S>> {
    if a.shape() != b.shape() {
        return Err(dim_err2(op, a.shape(), b.shape()));
    }
    let data: Vec<S> = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape().to_vec(), data)
}

pub fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    zip_same_shape("add", a, b, |x, y| x + y)
}

pub fn sub<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    zip_same_shape("sub", a, b, |x, y| x - y)
}

pub fn mul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    zip_same_shape("mul", a, b, |x, y| x * y)
}

pub fn scale<S: Scalar>(a: &Tensor<S>, c: S) -> Tensor<S> {
    a.map(|v| v * c)
}

/// Adds a rank-1 bias along `axis` of `a` (e.g. per-class bias on `[N,K]`,
/// per-filter bias on `[N,F,H,W]`).
pub fn bias_add<S: Scalar>(a: &Tensor<S>, bias: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
    let (_, k, inner) = axis_lanes(a.shape(), axis)?;
    if bias.shape() != [k] {
        return Err(dim_err2("bias_add", a.shape(), bias.shape()));
    }
    let (ad, bd) = (a.data(), bias.data());
    let mut out = vec![S::zero(); ad.len()];
    par::fill_chunks(&mut out, k * inner, |o, chunk| {
        let base = o * k * inner;
        for j in 0..k {
            for i in 0..inner {
                chunk[j * inner + i] = ad[base + j * inner + i] + bd[j];
            }
        }
    });
    Tensor::from_vec(a.shape().to_vec(), out)
}

/// Bias gradient for [`bias_add`]: reduce `grad` over all axes but `axis`.
pub fn bias_add_backward_bias<S: Scalar>(grad: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
    let (outer, k, inner) = axis_lanes(grad.shape(), axis)?;
    let gd = grad.data();
    let data = par::map_range(k, |j| {
        let mut acc = S::zero();
        for o in 0..outer {
            let base = o * k * inner + j * inner;
            for i in 0..inner {
                acc = acc + gd[base + i];
            }
        }
        acc
    });
    Tensor::from_vec(vec![k], data)
}

/// Picks `a[b, idx[b]]` from a `[N,K]` tensor, producing `[N]`. Used to pull
/// per-sample log-probabilities without materializing one-hot targets.
pub fn gather_rows<S: Scalar>(a: &Tensor<S>, idx: &[usize]) -> Result<Tensor<S>> {
    let sh = a.shape();
    if sh.len() != 2 || sh[0] != idx.len() {
        return Err(Error::dim(format!(
            "gather_rows: tensor {sh:?}, {} indices",
            idx.len()
        )));
    }
    let k = sh[1];
    let ad = a.data();
    let mut out = Vec::with_capacity(idx.len());
    for (b, &j) in idx.iter().enumerate() {
        if j >= k {
            return Err(Error::contract(format!(
                "gather_rows: index {j} out of range for {k} classes (row {b})"
            )));
        }
        out.push(ad[b * k + j]);
    }
    Tensor::from_vec(vec![idx.len()], out)
}

/// Scatter counterpart of [`gather_rows`].
pub fn gather_rows_backward<S: Scalar>(
    shape: &[usize],
    idx: &[usize],
    grad: &Tensor<S>,
) -> Result<Tensor<S>> {
    let k = shape[1];
    let mut out = vec![S::zero(); shape[0] * k];
    for (b, &j) in idx.iter().enumerate() {
        out[b * k + j] = grad.data()[b];
    }
    Tensor::from_vec(shape.to_vec(), out)
}

/// 2x2 max pooling with stride 2 on `[N,C,H,W]`; odd trailing rows/columns
/// are dropped. Also returns the flat input index of each selected maximum
/// (first occurrence wins on ties) for the backward pass.
pub fn max_pool2<S: Scalar>(a: &Tensor<S>) -> Result<(Tensor<S>, Vec<usize>)> {
    let sh = a.shape();
    if sh.len() != 4 || sh[2] < 2 || sh[3] < 2 {
        return Err(Error::dim(format!("max_pool2: shape {sh:?}")));
    }
    let (n, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    let (oh, ow) = (h / 2, w / 2);
    let ad = a.data();
    let mut out = vec![S::zero(); n * c * oh * ow];
    let mut arg = vec![0usize; n * c * oh * ow];
    // Single-threaded double fill keeps out/arg in lockstep; pooling is cheap.
    for plane in 0..n * c {
        let ibase = plane * h * w;
        let obase = plane * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = ibase + (2 * oy) * w + 2 * ox;
                let mut best = ad[best_idx];
                for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                    let idx = ibase + (2 * oy + dy) * w + 2 * ox + dx;
                    if ad[idx] > best {
                        best = ad[idx];
                        best_idx = idx;
                    }
                }
                out[obase + oy * ow + ox] = best;
                arg[obase + oy * ow + ox] = best_idx;
            }
        }
    }
    Ok((Tensor::from_vec(vec![n, c, oh, ow], out)?, arg))
}

pub fn max_pool2_backward<S: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad: &Tensor<S>,
) -> Result<Tensor<S>> {
    let numel: usize = input_shape.iter().product();
    let mut out = vec![S::zero(); numel];
    for (g, &idx) in grad.data().iter().zip(argmax) {
        out[idx] = out[idx] + *g;
    }
    Tensor::from_vec(input_shape.to_vec(), out)
}

/// Full reduction to a rank-0 tensor using balanced pairwise summation
/// (see [`pairwise_sum`] for why the tree shape matters).
pub fn sum_all<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    Tensor::scalar(pairwise_sum(a.data()))
}

pub fn mean_all<S: Scalar>(a: &Tensor<S>) -> Result<Tensor<S>> {
    if a.numel() == 0 {
        return Err(Error::contract("mean of empty tensor"));
    }
    let n = S::from_usize(a.numel()).unwrap();
    Ok(Tensor::scalar(pairwise_sum(a.data()) / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_case() {
        // [[1,2],[3,4]] x [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_inner_dim_mismatch_names_both_shapes() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 2], &[0.0; 4]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn conv2d_identity_kernel() {
        // 1x1 kernel of value 1 reproduces the input.
        let x = t(&[1, 1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let k = t(&[1, 1, 1, 1], &[1.0]);
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 3]);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv2d_output_extent_follows_floor_formula() {
        // H=5, kh=3, pad=1, stride=2 -> floor((5+2-3)/2)+1 = 3
        let x = Tensor::<f64>::zeros(&[1, 1, 5, 5]);
        let k = Tensor::<f64>::zeros(&[2, 1, 3, 3]);
        let y = conv2d(&x, &k, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 2, 3, 3]);
    }

    #[test]
    fn conv2d_hand_sum() {
        // 2x2 all-ones kernel over a 3x3 ramp, no padding:
        // windows sum to [[0+1+3+4],[1+2+4+5],[3+4+6+7],[4+5+7+8]]
        let x = t(&[1, 1, 3, 3], &(0..9).map(f64::from).collect::<Vec<_>>());
        let k = t(&[1, 1, 2, 2], &[1.0; 4]);
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.data(), &[8.0, 12.0, 20.0, 24.0]);
    }

    #[test]
    fn conv2d_kernel_larger_than_padded_input_errors() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let k = Tensor::<f64>::zeros(&[1, 1, 5, 5]);
        assert!(conv2d(&x, &k, 1, 1).is_err());
    }

    #[test]
    fn log_softmax_rows_are_normalized() {
        let z = t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0]);
        let ls = log_softmax(&z, 1).unwrap();
        for row in ls.data().chunks(3) {
            let total: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_is_shift_invariant_under_max_subtraction() {
        // Large offsets must not overflow.
        let z = t(&[1, 3], &[1000.0, 1001.0, 1002.0]);
        let ls = log_softmax(&z, 1).unwrap();
        let z0 = t(&[1, 3], &[0.0, 1.0, 2.0]);
        let ls0 = log_softmax(&z0, 1).unwrap();
        for (a, b) in ls.data().iter().zip(ls0.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gather_rows_picks_and_validates() {
        let a = t(&[2, 3], &[10.0, 11.0, 12.0, 20.0, 21.0, 22.0]);
        let g = gather_rows(&a, &[2, 0]).unwrap();
        assert_eq!(g.data(), &[12.0, 20.0]);
        assert!(gather_rows(&a, &[3, 0]).is_err());
    }

    #[test]
    fn max_pool2_takes_first_max_on_ties() {
        let x = t(&[1, 1, 2, 2], &[5.0, 5.0, 1.0, 0.0]);
        let (y, arg) = max_pool2(&x).unwrap();
        assert_eq!(y.data(), &[5.0]);
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn max_pool2_drops_odd_edges() {
        let x = t(
            &[1, 1, 3, 3],
            &[1.0, 2.0, 9.0, 3.0, 4.0, 9.0, 9.0, 9.0, 9.0],
        );
        let (y, _) = max_pool2(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn bias_add_broadcasts_along_axis() {
        let a = t(&[2, 2], &[0.0, 0.0, 1.0, 1.0]);
        let bias = t(&[2], &[10.0, 20.0]);
        let y = bias_add(&a, &bias, 1).unwrap();
        assert_eq!(y.data(), &[10.0, 20.0, 11.0, 21.0]);
        let db = bias_add_backward_bias(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), 1).unwrap();
        assert_eq!(db.data(), &[4.0, 6.0]);
    }

    #[test]
    fn elementwise_ops_require_equal_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 2]);
        let b = Tensor::<f64>::zeros(&[4]);
        assert!(add(&a, &b).is_err());
        assert!(sub(&a, &b).is_err());
        assert!(mul(&a, &b).is_err());
    }

    #[test]
    fn sum_and_mean_reduce_to_rank0() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(sum_all(&a).item().unwrap(), 10.0);
        assert_eq!(mean_all(&a).unwrap().item().unwrap(), 2.5);
        assert_eq!(sum_all(&a).shape(), &[] as &[usize]);
    }
}
