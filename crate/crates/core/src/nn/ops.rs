use alloc::format;

use crate::error::{Error, Result};
use crate::math;

/// Epsilon inside the layer-norm variance square root.
pub const LAYERNORM_EPS: f64 = 1e-5;

fn check(cond: bool, what: impl FnOnce() -> alloc::string::String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Shape(what()))
    }
}

/// Same-length 1-D cross-correlation with zero padding `(k - 1) / 2` and no
/// bias: `out[i] = Σ_j kernel[j] · input[i + j − pad]`.
pub fn conv1d_forward(input: &[f64], kernel: &[f64], out: &mut [f64]) -> Result<()> {
    let n = input.len();
    let k = kernel.len();
    check(k % 2 == 1 && k <= 2 * n + 1, || format!("kernel length {k} for input {n}"))?;
    check(out.len() == n, || format!("conv output length {} != {n}", out.len()))?;
    let pad = (k - 1) / 2;
    out.iter_mut().for_each(|o| *o = 0.0);
    for (j, &kj) in kernel.iter().enumerate() {
        // valid output range: 0 <= i + j - pad < n
        let lo = pad.saturating_sub(j);
        let hi = (n + pad).saturating_sub(j).min(n);
        if lo >= hi {
            continue;
        }
        let src = &input[lo + j - pad..hi + j - pad];
        for (o, &x) in out[lo..hi].iter_mut().zip(src) {
            *o += kj * x;
        }
    }
    Ok(())
}

/// Backward of [`conv1d_forward`]. Accumulates into `d_kernel`; overwrites
/// `d_input` when given.
pub fn conv1d_backward(
    input: &[f64],
    kernel: &[f64],
    d_out: &[f64],
    d_input: Option<&mut [f64]>,
    d_kernel: &mut [f64],
) -> Result<()> {
    let n = input.len();
    let k = kernel.len();
    check(k % 2 == 1 && d_out.len() == n && d_kernel.len() == k, || {
        format!("conv backward shapes: input {n}, kernel {k}, d_out {}", d_out.len())
    })?;
    let pad = (k - 1) / 2;
    for (j, dk) in d_kernel.iter_mut().enumerate() {
        let lo = pad.saturating_sub(j);
        let hi = (n + pad).saturating_sub(j).min(n);
        if lo >= hi {
            continue;
        }
        let src = &input[lo + j - pad..hi + j - pad];
        *dk += d_out[lo..hi].iter().zip(src).map(|(g, x)| g * x).sum::<f64>();
    }
    if let Some(dx) = d_input {
        check(dx.len() == n, || format!("d_input length {} != {n}", dx.len()))?;
        dx.iter_mut().for_each(|v| *v = 0.0);
        for (j, &kj) in kernel.iter().enumerate() {
            let lo = pad.saturating_sub(j);
            let hi = (n + pad).saturating_sub(j).min(n);
            if lo >= hi {
                continue;
            }
            for (g, d) in d_out[lo..hi].iter().zip(&mut dx[lo + j - pad..hi + j - pad]) {
                *d += kj * g;
            }
        }
    }
    Ok(())
}

/// Saved statistics of a layer-norm forward pass.
#[derive(Debug, Clone, Default)]
pub struct LayerNormCache {
    pub inv_std: f64,
    pub x_hat: alloc::vec::Vec<f64>,
}

/// `(x − mean) / sqrt(var + ε) · gain + bias` over the whole vector.
pub fn layernorm_forward(
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    out: &mut [f64],
    cache: &mut LayerNormCache,
) -> Result<()> {
    let n = x.len();
    check(n >= 2 && gain.len() == n && bias.len() == n && out.len() == n, || {
        format!("layernorm shapes: x {n}, gain {}, bias {}", gain.len(), bias.len())
    })?;
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let inv_std = 1.0 / math::sqrt(var + LAYERNORM_EPS);
    cache.inv_std = inv_std;
    cache.x_hat.clear();
    cache.x_hat.extend(x.iter().map(|v| (v - mean) * inv_std));
    for (i, o) in out.iter_mut().enumerate() {
        *o = cache.x_hat[i] * gain[i] + bias[i];
    }
    Ok(())
}

/// Backward of [`layernorm_forward`]. Accumulates gain/bias gradients;
/// overwrites `d_x` when given.
pub fn layernorm_backward(
    d_out: &[f64],
    gain: &[f64],
    cache: &LayerNormCache,
    d_x: Option<&mut [f64]>,
    d_gain: &mut [f64],
    d_bias: &mut [f64],
) -> Result<()> {
    let n = d_out.len();
    check(gain.len() == n && cache.x_hat.len() == n && d_gain.len() == n && d_bias.len() == n, || {
        format!("layernorm backward length {n}")
    })?;
    for i in 0..n {
        d_gain[i] += d_out[i] * cache.x_hat[i];
        d_bias[i] += d_out[i];
    }
    if let Some(dx) = d_x {
        check(dx.len() == n, || format!("d_x length {} != {n}", dx.len()))?;
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for i in 0..n {
            let g = d_out[i] * gain[i];
            sum_g += g;
            sum_gx += g * cache.x_hat[i];
        }
        let nf = n as f64;
        for i in 0..n {
            let g = d_out[i] * gain[i];
            dx[i] = cache.inv_std * (g - sum_g / nf - cache.x_hat[i] * sum_gx / nf);
        }
    }
    Ok(())
}

pub fn relu_forward(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zero the gradient where the forward output was not positive.
pub fn relu_backward(output: &[f64], d: &mut [f64]) {
    for (g, &y) in d.iter_mut().zip(output) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Output length of a valid (unpadded) average pool.
pub fn avgpool_len(n: usize, kernel: usize, stride: usize) -> usize {
    if n < kernel {
        0
    } else {
        (n - kernel) / stride + 1
    }
}

pub fn avgpool_forward(x: &[f64], kernel: usize, stride: usize, out: &mut [f64]) -> Result<()> {
    let m = avgpool_len(x.len(), kernel, stride);
    check(m > 0 && out.len() == m, || {
        format!("avgpool of {} with kernel {kernel} stride {stride} into {}", x.len(), out.len())
    })?;
    let inv = 1.0 / kernel as f64;
    for (o, v) in out.iter_mut().enumerate() {
        *v = x[o * stride..o * stride + kernel].iter().sum::<f64>() * inv;
    }
    Ok(())
}

/// Overwrites `d_x`.
pub fn avgpool_backward(d_out: &[f64], kernel: usize, stride: usize, d_x: &mut [f64]) -> Result<()> {
    let m = avgpool_len(d_x.len(), kernel, stride);
    check(d_out.len() == m, || format!("avgpool backward: d_out {} != {m}", d_out.len()))?;
    d_x.iter_mut().for_each(|v| *v = 0.0);
    let inv = 1.0 / kernel as f64;
    for (o, &g) in d_out.iter().enumerate() {
        for d in &mut d_x[o * stride..o * stride + kernel] {
            *d += g * inv;
        }
    }
    Ok(())
}

/// `out = W·x + b` with `W` row-major `[out.len(), x.len()]`.
pub fn affine_forward(x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) -> Result<()> {
    let (n_in, n_out) = (x.len(), out.len());
    check(w.len() == n_in * n_out && b.len() == n_out, || {
        format!("affine: W {} for {n_out}x{n_in}, b {}", w.len(), b.len())
    })?;
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * n_in..(r + 1) * n_in];
        *o = b[r] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
    }
    Ok(())
}

/// Accumulates `d_w`, `d_b`; overwrites `d_x` when given.
pub fn affine_backward(
    x: &[f64],
    w: &[f64],
    d_out: &[f64],
    d_x: Option<&mut [f64]>,
    d_w: &mut [f64],
    d_b: &mut [f64],
) -> Result<()> {
    let (n_in, n_out) = (x.len(), d_out.len());
    check(w.len() == n_in * n_out && d_w.len() == w.len() && d_b.len() == n_out, || {
        format!("affine backward: W {} for {n_out}x{n_in}", w.len())
    })?;
    for (r, &g) in d_out.iter().enumerate() {
        d_b[r] += g;
        if g == 0.0 {
            continue;
        }
        for (dw, &xv) in d_w[r * n_in..(r + 1) * n_in].iter_mut().zip(x) {
            *dw += g * xv;
        }
    }
    if let Some(dx) = d_x {
        check(dx.len() == n_in, || format!("d_x length {} != {n_in}", dx.len()))?;
        dx.iter_mut().for_each(|v| *v = 0.0);
        for (r, &g) in d_out.iter().enumerate() {
            for (d, &wv) in dx.iter_mut().zip(&w[r * n_in..(r + 1) * n_in]) {
                *d += g * wv;
            }
        }
    }
    Ok(())
}

/// Softmax over entries with `mask[i]`; masked entries get exactly 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool], out: &mut [f64]) -> Result<()> {
    check(logits.len() == mask.len() && out.len() == mask.len(), || {
        format!("softmax shapes: {} logits, {} mask", logits.len(), mask.len())
    })?;
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptyAttentionSet);
    }
    let mut sum = 0.0;
    for i in 0..logits.len() {
        out[i] = if mask[i] { math::exp(logits[i] - max) } else { 0.0 };
        sum += out[i];
    }
    let inv = 1.0 / sum;
    out.iter_mut().for_each(|p| *p *= inv);
    Ok(())
}

/// `d_logits[i] = p[i] · (d_p[i] − Σ_j p[j] d_p[j])`; overwrites `d_logits`.
pub fn masked_softmax_backward(probs: &[f64], d_probs: &[f64], d_logits: &mut [f64]) {
    let dot: f64 = probs.iter().zip(d_probs).map(|(p, g)| p * g).sum();
    for i in 0..probs.len() {
        d_logits[i] = probs[i] * (d_probs[i] - dot);
    }
}

/// Mean absolute error.
pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check(!pred.is_empty() && pred.len() == target.len(), || {
        format!("mae lengths {} and {}", pred.len(), target.len())
    })?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Subgradient of [`mae`] w.r.t. one prediction; zero on ties.
#[inline]
pub fn mae_grad(pred: f64, target: f64, n: usize) -> f64 {
    let d = pred - target;
    if d > 0.0 {
        1.0 / n as f64
    } else if d < 0.0 {
        -1.0 / n as f64
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_diff_check;
    use crate::rng;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::Rng;

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, &[n as u64]);
        (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
    }

    /// Naive double loop over explicitly padded input.
    fn naive_conv(x: &[f64], k: &[f64]) -> Vec<f64> {
        let pad = (k.len() - 1) / 2;
        let mut padded = vec![0.0; x.len() + 2 * pad];
        padded[pad..pad + x.len()].copy_from_slice(x);
        (0..x.len())
            .map(|i| (0..k.len()).map(|j| k[j] * padded[i + j]).sum())
            .collect()
    }

    #[test]
    fn conv_identity_kernel() {
        let x = random_vec(145, 1);
        let mut k = vec![0.0; 49];
        k[24] = 1.0;
        let mut out = vec![0.0; 145];
        conv1d_forward(&x, &k, &mut out).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn conv_constant() {
        let mut out = vec![0.0; 145];
        conv1d_forward(&[1.0; 145], &[1.0; 49], &mut out).unwrap();
        assert_eq!(out[72], 49.0);
        assert_eq!(out[0], 25.0);
    }

    #[test]
    fn conv_matches_naive() {
        for seed in 0..20 {
            let x = random_vec(145, seed);
            let k = random_vec(49, seed + 100);
            let mut out = vec![0.0; 145];
            conv1d_forward(&x, &k, &mut out).unwrap();
            for (a, b) in out.iter().zip(naive_conv(&x, &k)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_shape_errors() {
        let mut out = vec![0.0; 10];
        assert!(conv1d_forward(&[0.0; 10], &[0.0; 4], &mut out).is_err());
        assert!(conv1d_forward(&[0.0; 10], &[0.0; 3], &mut out[..9]).is_err());
    }

    #[test]
    fn conv_backward_matches_fd() {
        let x = random_vec(30, 3);
        let k = random_vec(9, 4);
        let w = random_vec(30, 5);
        let loss = |x: &[f64], k: &[f64]| {
            let mut o = vec![0.0; 30];
            conv1d_forward(x, k, &mut o).unwrap();
            o.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut dk = vec![0.0; 9];
        let mut dx = vec![0.0; 30];
        conv1d_backward(&x, &k, &w, Some(&mut dx), &mut dk).unwrap();
        assert!(finite_diff_check(|p| loss(&x, p), &k, &dk, 1e-5, None) < 1e-6);
        assert!(finite_diff_check(|p| loss(p, &k), &x, &dx, 1e-5, None) < 1e-6);
    }

    #[test]
    fn layernorm_cases() {
        let mut out = vec![0.0; 5];
        let mut cache = LayerNormCache::default();
        layernorm_forward(&[3.0; 5], &[1.0; 5], &[0.0; 5], &mut out, &mut cache).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));

        let mut out = vec![0.0; 2];
        layernorm_forward(&[-1.0, 1.0], &[1.0; 2], &[0.0; 2], &mut out, &mut cache).unwrap();
        let s = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((out[0] + s).abs() < 1e-15 && (out[1] - s).abs() < 1e-15);
        assert!((out[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn layernorm_backward_matches_fd() {
        let n = 17;
        let x = random_vec(n, 7);
        let gain = random_vec(n, 8);
        let bias = random_vec(n, 9);
        let w = random_vec(n, 10);
        let f = |x: &[f64], g: &[f64], b: &[f64]| {
            let mut o = vec![0.0; n];
            let mut c = LayerNormCache::default();
            layernorm_forward(x, g, b, &mut o, &mut c).unwrap();
            o.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut o = vec![0.0; n];
        let mut c = LayerNormCache::default();
        layernorm_forward(&x, &gain, &bias, &mut o, &mut c).unwrap();
        let (mut dx, mut dg, mut db) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        layernorm_backward(&w, &gain, &c, Some(&mut dx), &mut dg, &mut db).unwrap();
        assert!(finite_diff_check(|p| f(p, &gain, &bias), &x, &dx, 1e-5, None) < 1e-6);
        assert!(finite_diff_check(|p| f(&x, p, &bias), &gain, &dg, 1e-5, None) < 1e-6);
        assert!(finite_diff_check(|p| f(&x, &gain, p), &bias, &db, 1e-5, None) < 1e-6);
    }

    #[test]
    fn avgpool_cases() {
        assert_eq!(avgpool_len(145, 7, 6), 24);
        let mut out = vec![0.0; 24];
        avgpool_forward(&[2.5; 145], 7, 6, &mut out).unwrap();
        assert!(out.iter().all(|&v| (v - 2.5).abs() < 1e-15));
        let x = random_vec(145, 11);
        avgpool_forward(&x, 7, 6, &mut out).unwrap();
        for (o, v) in out.iter().enumerate() {
            let naive: f64 = (0..7).map(|j| x[o * 6 + j]).sum::<f64>() / 7.0;
            assert!((v - naive).abs() < 1e-12);
        }
        assert!(avgpool_forward(&x[..100], 7, 6, &mut out).is_err());
    }

    #[test]
    fn avgpool_backward_matches_fd() {
        let x = random_vec(145, 12);
        let w = random_vec(24, 13);
        let f = |x: &[f64]| {
            let mut o = vec![0.0; 24];
            avgpool_forward(x, 7, 6, &mut o).unwrap();
            o.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut dx = vec![0.0; 145];
        avgpool_backward(&w, 7, 6, &mut dx).unwrap();
        assert!(finite_diff_check(f, &x, &dx, 1e-5, None) < 1e-6);
    }

    #[test]
    fn affine_backward_matches_fd() {
        let x = random_vec(6, 14);
        let wt = random_vec(18, 15);
        let b = random_vec(3, 16);
        let up = random_vec(3, 17);
        let f = |x: &[f64], w: &[f64], b: &[f64]| {
            let mut o = vec![0.0; 3];
            affine_forward(x, w, b, &mut o).unwrap();
            o.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
        };
        let (mut dx, mut dw, mut db) = (vec![0.0; 6], vec![0.0; 18], vec![0.0; 3]);
        affine_backward(&x, &wt, &up, Some(&mut dx), &mut dw, &mut db).unwrap();
        assert!(finite_diff_check(|p| f(p, &wt, &b), &x, &dx, 1e-5, None) < 1e-6);
        assert!(finite_diff_check(|p| f(&x, p, &b), &wt, &dw, 1e-5, None) < 1e-6);
        assert!(finite_diff_check(|p| f(&x, &wt, p), &b, &db, 1e-5, None) < 1e-6);
    }

    #[test]
    fn relu_backward_gates() {
        let mut x = vec![-1.0, 0.0, 2.0];
        relu_forward(&mut x);
        assert_eq!(x, vec![0.0, 0.0, 2.0]);
        let mut g = vec![1.0, 1.0, 1.0];
        relu_backward(&x, &mut g);
        assert_eq!(g, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_single_survivor_and_empty() {
        let mut out = vec![0.0; 4];
        masked_softmax(&[5.0, -3.0, 100.0, 1.0], &[false, true, false, false], &mut out).unwrap();
        assert_eq!(out, vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(
            masked_softmax(&[1.0, 2.0], &[false, false], &mut out[..2]),
            Err(Error::EmptyAttentionSet)
        );
    }

    #[test]
    fn softmax_normalizes_random_masked_vectors() {
        let mut r = rng::stream(99, &[]);
        for _ in 0..1000 {
            let n = r.gen_range(1..300);
            let logits: Vec<f64> = (0..n).map(|_| r.gen_range(-30.0..30.0)).collect();
            let mut mask: Vec<bool> = (0..n).map(|_| r.gen_bool(0.6)).collect();
            mask[r.gen_range(0..n)] = true;
            let mut p = vec![0.0; n];
            masked_softmax(&logits, &mask, &mut p).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (pi, &m) in p.iter().zip(&mask) {
                if !m {
                    assert_eq!(*pi, 0.0);
                } else {
                    assert!(*pi >= 0.0);
                }
            }
        }
    }

    #[test]
    fn softmax_backward_matches_fd() {
        let logits = random_vec(8, 20);
        let mask = [true, false, true, true, false, true, true, true];
        let up = random_vec(8, 21);
        let f = |l: &[f64]| {
            let mut p = vec![0.0; 8];
            masked_softmax(l, &mask, &mut p).unwrap();
            p.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut p = vec![0.0; 8];
        masked_softmax(&logits, &mask, &mut p).unwrap();
        let mut dl = vec![0.0; 8];
        masked_softmax_backward(&p, &up, &mut dl);
        assert!(finite_diff_check(f, &logits, &dl, 1e-5, None) < 1e-6);
        assert_eq!(dl[1], 0.0);
    }

    #[test]
    fn mae_cases() {
        assert_eq!(mae(&[3.0], &[5.0]).unwrap(), 2.0);
        assert_eq!(mae_grad(3.0, 5.0, 1), -1.0);
        assert_eq!(mae_grad(5.0, 5.0, 1), 0.0);
        assert!(mae(&[], &[]).is_err());
    }
}
