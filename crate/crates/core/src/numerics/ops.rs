//! Value-level tensor functions shared by the graph and by code that needs no gradients.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Default epsilon in cosine denominators.
pub const COSINE_EPS: f64 = 1e-8;

/// Softmax along the last axis with max-subtraction.
pub fn softmax(x: &Tensor) -> Tensor {
    let c = x.cols();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(c) {
        softmax_in_place(row);
    }
    Tensor::new(x.shape(), out).expect("shape preserved")
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

pub(crate) fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Mean over the length axis of an `L x D` sequence.
pub fn mean_pool(h: &Tensor) -> Result<Tensor> {
    if h.rank() != 2 {
        return Err(Error::Contract(format!(
            "mean_pool expects rank 2, got {:?}",
            h.shape()
        )));
    }
    let (l, d) = (h.shape()[0], h.shape()[1]);
    if l == 0 {
        return Err(Error::EmptySequence("mean_pool"));
    }
    let mut out = vec![0.0; d];
    for i in 0..l {
        for (o, v) in out.iter_mut().zip(h.row(i)) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= l as f64;
    }
    Ok(Tensor::vector(out))
}

/// `u.v / (|u||v| + eps)`; zero when either vector is all zeros.
pub fn cosine_sim(u: &[f64], v: &[f64], eps: f64) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine_sim", &[u.len()], &[v.len()]));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(dot / (nu * nv + eps))
}

/// Descending comparison with index tie-break; NaN sorts last.
fn desc_then_index(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b]
        .partial_cmp(&scores[a])
        .unwrap_or_else(|| scores[a].is_nan().cmp(&scores[b].is_nan()))
        .then(a.cmp(&b))
}

/// Indices of the `k` largest scores, descending; equal scores keep the smaller index first.
pub fn topk_indices(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > scores.len() {
        return Err(Error::Budget {
            k,
            len: scores.len(),
        });
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k < scores.len() && k > 0 {
        idx.select_nth_unstable_by(k - 1, |&a, &b| desc_then_index(scores, a, b));
    }
    idx.truncate(k);
    idx.sort_by(|&a, &b| desc_then_index(scores, a, b));
    Ok(idx)
}

/// Row-wise layer normalisation with biased variance.
pub fn layer_norm(h: &Tensor, gain: &[f64], bias: &[f64], eps: f64) -> Result<Tensor> {
    let d = h.cols();
    if gain.len() != d || bias.len() != d {
        return Err(Error::shape("layer_norm", h.shape(), &[gain.len(), bias.len()]));
    }
    let mut out = h.data().to_vec();
    for row in out.chunks_mut(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gain[j] + bias[j];
        }
    }
    Tensor::new(h.shape(), out)
}

/// Fixed sinusoidal position table of shape `len x dim`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(len * dim);
    for pos in 0..len {
        for j in 0..dim {
            let pair = (j / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            data.push(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(&[len, dim], data).expect("shape matches")
}
