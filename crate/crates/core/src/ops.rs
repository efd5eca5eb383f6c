//! Forward and backward kernels shared by the taped and tape-free backends.
//!
//! Every forward kernel is a pure function of its inputs. Backward kernels
//! take the upstream gradient `g` of the output and return the
//! contribution to each differentiable input.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// Broadcasting is limited to `b` matching a trailing suffix of `a`'s
/// shape; `b` is then repeated over `a`'s leading axes.
fn check_broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
        return Err(shape_err(op, a, b));
    }
    Ok(())
}

/// Sums `g` over the repeated leading blocks down to `inner` elements.
fn reduce_leading(g: &[f64], inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; inner];
    for block in g.chunks_exact(inner) {
        for (o, v) in out.iter_mut().zip(block) {
            *o += v;
        }
    }
    out
}

// ---------------------------------------------------------------- matmul

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2().map_err(|_| shape_err("matmul", a, b))?;
    let (k2, n) = b.dims2().map_err(|_| shape_err("matmul", a, b))?;
    if k != k2 {
        return Err(shape_err("matmul", a, b));
    }
    let mut out = vec![0.0; m * n];
    matmul_into(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `out[m×n] += a[m×k] · b[k×n]`
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
}

/// Returns `(g·bᵀ, aᵀ·g)`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let (ad, bd) = (a.data(), b.data());
    let mut ga = vec![0.0; m * k];
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &bd[p * n..(p + 1) * n];
            ga[i * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    let mut gb = vec![0.0; k * n];
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = ad[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let gb_row = &mut gb[p * n..(p + 1) * n];
            for (o, &gv) in gb_row.iter_mut().zip(g_row) {
                *o += a_ip * gv;
            }
        }
    }
    (ga, gb)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = a.dims2()?;
    Ok(Tensor::from_parts(
        vec![n, m],
        transpose_data(a.data(), m, n),
    ))
}

pub(crate) fn transpose_data(d: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    out
}

// ------------------------------------------------------------ elementwise

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary("sub", a, b, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary("mul", a, b, |x, y| x * y)
}

fn binary(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    check_broadcast(op, a, b)?;
    let inner = b.numel();
    let mut out = Vec::with_capacity(a.numel());
    for block in a.data().chunks_exact(inner) {
        out.extend(block.iter().zip(b.data()).map(|(&x, &y)| f(x, y)));
    }
    Ok(Tensor::from_parts(a.shape().to_vec(), out))
}

pub fn add_backward(b: &Tensor, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (g.to_vec(), reduce_leading(g, b.numel()))
}

pub fn sub_backward(b: &Tensor, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let gb = reduce_leading(g, b.numel())
        .into_iter()
        .map(|v| -v)
        .collect();
    (g.to_vec(), gb)
}

pub fn mul_backward(a: &Tensor, b: &Tensor, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let inner = b.numel();
    let mut ga = Vec::with_capacity(g.len());
    let mut gb = vec![0.0; inner];
    for (gblk, ablk) in g.chunks_exact(inner).zip(a.data().chunks_exact(inner)) {
        for k in 0..inner {
            ga.push(gblk[k] * b.data()[k]);
            gb[k] += gblk[k] * ablk[k];
        }
    }
    (ga, gb)
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|v| v * c).collect())
}

/// Divides every entry of `a` by the scalar tensor `s`.
pub fn div_scalar(a: &Tensor, s: &Tensor) -> Result<Tensor> {
    if s.numel() != 1 {
        return Err(shape_err("div_scalar", a, s));
    }
    let d = s.data()[0];
    Ok(Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().map(|v| v / d).collect(),
    ))
}

pub fn div_scalar_backward(a: &Tensor, s: &Tensor, g: &[f64]) -> (Vec<f64>, f64) {
    let d = s.data()[0];
    let ga = g.iter().map(|v| v / d).collect();
    let gs = -g.iter().zip(a.data()).map(|(gv, av)| gv * av).sum::<f64>() / (d * d);
    (ga, gs)
}

pub fn sum(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data().iter().sum())
}

pub fn clamp(a: &Tensor, lo: f64, hi: f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().map(|&v| clamp_value(v, lo, hi)).collect(),
    )
}

/// `min(hi, max(lo, v))`; `hi` may be `+∞`.
#[inline]
pub fn clamp_value(v: f64, lo: f64, hi: f64) -> f64 {
    let v = if v < lo { lo } else { v };
    if v > hi {
        hi
    } else {
        v
    }
}

pub fn clamp_backward(a: &Tensor, lo: f64, hi: f64, g: &[f64]) -> Vec<f64> {
    a.data()
        .iter()
        .zip(g)
        .map(|(&v, &gv)| if v >= lo && v <= hi { gv } else { 0.0 })
        .collect()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

pub fn gelu(a: &Tensor) -> Tensor {
    let out = a
        .data()
        .iter()
        .map(|&x| 0.5 * x * (1.0 + math::tanh(GELU_C * (x + 0.044715 * x * x * x))))
        .collect();
    Tensor::from_parts(a.shape().to_vec(), out)
}

pub fn gelu_backward(a: &Tensor, g: &[f64]) -> Vec<f64> {
    a.data()
        .iter()
        .zip(g)
        .map(|(&x, &gv)| {
            let u = GELU_C * (x + 0.044715 * x * x * x);
            let t = math::tanh(u);
            let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
            gv * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
        })
        .collect()
}

// --------------------------------------------------------------- softmax

pub fn log_softmax(a: &Tensor) -> Result<Tensor> {
    if a.shape().is_empty() {
        return Err(Error::Contract(
            "log_softmax needs at least one axis".into(),
        ));
    }
    let v = a.last_dim();
    let mut out = Vec::with_capacity(a.numel());
    for row in a.data().chunks_exact(v) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = math::ln(row.iter().map(|&x| math::exp(x - max)).sum::<f64>());
        out.extend(row.iter().map(|&x| x - max - lse));
    }
    Ok(Tensor::from_parts(a.shape().to_vec(), out))
}

/// Uses the forward output `y`: `gx = g − softmax(x)·Σg`.
pub fn log_softmax_backward(y: &Tensor, g: &[f64]) -> Vec<f64> {
    let v = y.last_dim();
    let mut out = Vec::with_capacity(g.len());
    for (yr, gr) in y.data().chunks_exact(v).zip(g.chunks_exact(v)) {
        let gs: f64 = gr.iter().sum();
        out.extend(yr.iter().zip(gr).map(|(&yv, &gv)| gv - math::exp(yv) * gs));
    }
    out
}

/// Row-wise softmax over a matrix where `allowed[r*cols + c]` selects the
/// entries that participate. Disallowed entries are exactly zero; a row
/// with nothing allowed is all zeros.
pub fn masked_softmax(a: &Tensor, allowed: &[bool]) -> Result<Tensor> {
    let (_, cols) = a.dims2()?;
    if allowed.len() != a.numel() {
        return Err(Error::Shape {
            op: "masked_softmax",
            left: a.shape().to_vec(),
            right: vec![allowed.len()],
        });
    }
    let mut out = vec![0.0; a.numel()];
    for ((row, mask), o) in a
        .data()
        .chunks_exact(cols)
        .zip(allowed.chunks_exact(cols))
        .zip(out.chunks_exact_mut(cols))
    {
        let max = row
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&x, _)| x)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut total = 0.0;
        for c in 0..cols {
            if mask[c] {
                let e = math::exp(row[c] - max);
                o[c] = e;
                total += e;
            }
        }
        for v in o.iter_mut() {
            *v /= total;
        }
    }
    Ok(Tensor::from_parts(a.shape().to_vec(), out))
}

pub fn softmax_backward(y: &Tensor, g: &[f64]) -> Vec<f64> {
    let v = y.last_dim();
    let mut out = Vec::with_capacity(g.len());
    for (yr, gr) in y.data().chunks_exact(v).zip(g.chunks_exact(v)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        out.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
    }
    out
}

// ------------------------------------------------------------ layer norm

/// Per-row statistics saved for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub fn layer_norm(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    let d = x.last_dim();
    if gain.shape() != [d] || bias.shape() != [d] {
        return Err(shape_err("layer_norm", x, gain));
    }
    let rows = x.numel() / d;
    let mut out = Vec::with_capacity(x.numel());
    let mut normalized = Vec::with_capacity(x.numel());
    let mut inv_std = Vec::with_capacity(rows);
    for row in x.data().chunks_exact(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / math::sqrt(var + eps);
        inv_std.push(r);
        for (k, &v) in row.iter().enumerate() {
            let xh = (v - mean) * r;
            normalized.push(xh);
            out.push(xh * gain.data()[k] + bias.data()[k]);
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), out),
        LayerNormCache {
            normalized,
            inv_std,
        },
    ))
}

/// Returns `(gx, ggain, gbias)`.
pub fn layer_norm_backward(
    gain: &Tensor,
    cache: &LayerNormCache,
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = gain.numel();
    let mut gx = Vec::with_capacity(g.len());
    let mut ggain = vec![0.0; d];
    let mut gbias = vec![0.0; d];
    for ((gr, xh), &r) in g
        .chunks_exact(d)
        .zip(cache.normalized.chunks_exact(d))
        .zip(&cache.inv_std)
    {
        let mut mean_gy = 0.0;
        let mut mean_gy_xh = 0.0;
        for k in 0..d {
            let gy = gr[k] * gain.data()[k];
            mean_gy += gy;
            mean_gy_xh += gy * xh[k];
            ggain[k] += gr[k] * xh[k];
            gbias[k] += gr[k];
        }
        mean_gy /= d as f64;
        mean_gy_xh /= d as f64;
        for k in 0..d {
            let gy = gr[k] * gain.data()[k];
            gx.push(r * (gy - mean_gy - xh[k] * mean_gy_xh));
        }
    }
    (gx, ggain, gbias)
}

// ------------------------------------------------------- gather / scatter

/// Rows of `table` selected by `indices`.
pub fn embedding(table: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let (v, d) = table.dims2()?;
    if indices.is_empty() {
        return Err(Error::Contract("embedding lookup with no indices".into()));
    }
    let mut out = Vec::with_capacity(indices.len() * d);
    for &i in indices {
        if i >= v {
            return Err(Error::Vocab { id: i, vocab: v });
        }
        out.extend_from_slice(table.row(i));
    }
    Ok(Tensor::from_parts(vec![indices.len(), d], out))
}

pub fn embedding_backward(table: &Tensor, indices: &[usize], g: &[f64]) -> Vec<f64> {
    let d = table.last_dim();
    let mut gt = vec![0.0; table.numel()];
    for (&i, gr) in indices.iter().zip(g.chunks_exact(d)) {
        for (o, v) in gt[i * d..(i + 1) * d].iter_mut().zip(gr) {
            *o += v;
        }
    }
    gt
}

/// `out[r] = a[r, idx[r]]`.
pub fn gather_cols(a: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let (rows, cols) = a.dims2()?;
    if idx.len() != rows {
        return Err(Error::Shape {
            op: "gather_cols",
            left: a.shape().to_vec(),
            right: vec![idx.len()],
        });
    }
    let mut out = Vec::with_capacity(rows);
    for (r, &c) in idx.iter().enumerate() {
        if c >= cols {
            return Err(Error::Vocab { id: c, vocab: cols });
        }
        out.push(a.data()[r * cols + c]);
    }
    Ok(Tensor::from_parts(vec![rows], out))
}

pub fn gather_cols_backward(a: &Tensor, idx: &[usize], g: &[f64]) -> Vec<f64> {
    let cols = a.last_dim();
    let mut ga = vec![0.0; a.numel()];
    for (r, &c) in idx.iter().enumerate() {
        ga[r * cols + c] += g[r];
    }
    ga
}

// ----------------------------------------------------- slicing / joining

pub fn slice_cols(a: &Tensor, start: usize, width: usize) -> Result<Tensor> {
    let (rows, cols) = a.dims2()?;
    if width == 0 || start + width > cols {
        return Err(Error::Contract(format!(
            "column slice {start}..{} out of range for {cols} columns",
            start + width
        )));
    }
    let mut out = Vec::with_capacity(rows * width);
    for row in a.data().chunks_exact(cols) {
        out.extend_from_slice(&row[start..start + width]);
    }
    Ok(Tensor::from_parts(vec![rows, width], out))
}

pub fn slice_cols_backward(a: &Tensor, start: usize, width: usize, g: &[f64]) -> Vec<f64> {
    let cols = a.last_dim();
    let mut ga = vec![0.0; a.numel()];
    for (ga_row, gr) in ga.chunks_exact_mut(cols).zip(g.chunks_exact(width)) {
        ga_row[start..start + width].copy_from_slice(gr);
    }
    ga
}

pub fn slice_rows(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (rows, cols) = a.dims2()?;
    if len == 0 || start + len > rows {
        return Err(Error::Contract(format!(
            "row slice {start}..{} out of range for {rows} rows",
            start + len
        )));
    }
    Ok(Tensor::from_parts(
        vec![len, cols],
        a.data()[start * cols..(start + len) * cols].to_vec(),
    ))
}

pub fn slice_rows_backward(a: &Tensor, start: usize, g: &[f64]) -> Vec<f64> {
    let cols = a.last_dim();
    let mut ga = vec![0.0; a.numel()];
    ga[start * cols..start * cols + g.len()].copy_from_slice(g);
    ga
}

pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
    let (rows, _) = first.dims2()?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (r, c) = p.dims2()?;
        if r != rows {
            return Err(shape_err("concat_cols", first, p));
        }
        widths.push(c);
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (p, &w) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
    }
    Ok(Tensor::from_parts(vec![rows, total], out))
}

/// Splits the upstream gradient back into per-part column blocks.
pub fn concat_cols_backward(widths: &[usize], g: &[f64]) -> Vec<Vec<f64>> {
    let total: usize = widths.iter().sum();
    let rows = g.len() / total;
    let mut out: Vec<Vec<f64>> = widths
        .iter()
        .map(|w| Vec::with_capacity(w * rows))
        .collect();
    for gr in g.chunks_exact(total) {
        let mut off = 0;
        for (o, &w) in out.iter_mut().zip(widths) {
            o.extend_from_slice(&gr[off..off + w]);
            off += w;
        }
    }
    out
}

pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
    let (_, cols) = first.dims2()?;
    let mut rows = 0;
    let mut out = Vec::new();
    for p in parts {
        let (r, c) = p.dims2()?;
        if c != cols {
            return Err(shape_err("concat_rows", first, p));
        }
        rows += r;
        out.extend_from_slice(p.data());
    }
    Ok(Tensor::from_parts(vec![rows, cols], out))
}

// --------------------------------------------------------- window pooling

/// Shrinking-window mean over the positions where `mask` is set.
///
/// For each masked position `j` the result is the mean of `x[k]` over
/// `|k − j| ≤ (window − 1)/2` with `mask[k]` set; unmasked positions are 0.
pub fn window_mean(x: &[f64], window: usize, mask: &[bool]) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Config(format!(
            "pooling window must be odd and >= 1, got {window}"
        )));
    }
    if mask.len() != x.len() {
        return Err(Error::Contract(format!(
            "pooling mask length {} != sequence length {}",
            mask.len(),
            x.len()
        )));
    }
    let half = (window - 1) / 2;
    let n = x.len();
    let mut out = vec![0.0; n];
    for j in 0..n {
        if !mask[j] {
            continue;
        }
        let lo = j.saturating_sub(half);
        let hi = (j + half).min(n - 1);
        let mut total = 0.0;
        let mut count = 0usize;
        for k in lo..=hi {
            if mask[k] {
                total += x[k];
                count += 1;
            }
        }
        out[j] = total / count as f64;
    }
    Ok(out)
}

pub fn window_mean_backward(window: usize, mask: &[bool], g: &[f64]) -> Vec<f64> {
    let half = (window - 1) / 2;
    let n = g.len();
    let mut gx = vec![0.0; n];
    for j in 0..n {
        if !mask[j] {
            continue;
        }
        let lo = j.saturating_sub(half);
        let hi = (j + half).min(n - 1);
        let count = (lo..=hi).filter(|&k| mask[k]).count() as f64;
        for k in lo..=hi {
            if mask[k] {
                gx[k] += g[j] / count;
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(r, c, d.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_orthogonal() {
        let a = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matmul(&a, &Tensor::eye(2)).unwrap().data(), a.data());
        let r = matmul(&m(1, 2, &[1.0, 0.0]), &m(2, 1, &[0.0, 1.0])).unwrap();
        assert_eq!(r.shape(), [1, 1]);
        assert_eq!(r.data(), [0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&m(2, 3, &[0.0; 6]), &m(2, 3, &[0.0; 6])).unwrap_err();
        match err {
            Error::Shape { op, left, right } => {
                assert_eq!(op, "matmul");
                assert_eq!(left, [2, 3]);
                assert_eq!(right, [2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log_softmax_uniform_and_shifted() {
        let y = log_softmax(&Tensor::vector(vec![0.0; 4])).unwrap();
        for v in y.data() {
            assert!((v + 4f64.ln()).abs() < 1e-15);
        }
        let y = log_softmax(&Tensor::vector(vec![1000.0, 0.0])).unwrap();
        assert!(y.data()[0].abs() < 1e-300);
        assert!((y.data()[1] + 1000.0).abs() < 1e-12);
        assert!(y.is_finite());
    }

    #[test]
    fn broadcast_only_over_leading_axes() {
        let a = m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::vector(vec![10.0, 20.0, 30.0]);
        assert_eq!(
            add(&a, &b).unwrap().data(),
            [11.0, 22.0, 33.0, 14.0, 25.0, 36.0]
        );
        let bad = Tensor::vector(vec![1.0, 2.0]);
        assert!(add(&a, &bad).is_err());
        // trailing match only: a [2,3] with b [2,1] is not a suffix
        assert!(mul(&a, &m(2, 1, &[1.0, 2.0])).is_err());
    }

    #[test]
    fn masked_softmax_zeroes_disallowed() {
        let a = m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mask = [true, false, false, false, false, false];
        let y = masked_softmax(&a, &mask).unwrap();
        assert_eq!(y.data(), [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn window_mean_shrinks_at_edges() {
        let all = [true; 3];
        let p = window_mean(&[1.0, 5.0, 1.0], 3, &all).unwrap();
        assert_eq!(p, [3.0, 7.0 / 3.0, 3.0]);
        assert!(window_mean(&[1.0, 2.0], 2, &[true; 2]).is_err());
        let masked = window_mean(&[9.0, 1.0, 5.0, 1.0], 3, &[false, true, true, true]).unwrap();
        assert_eq!(masked, [0.0, 3.0, 7.0 / 3.0, 3.0]);
    }
}
