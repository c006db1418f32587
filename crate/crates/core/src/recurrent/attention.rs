//! Attention over the top recurrent layer's output sequence.
//!
//! Alignment scores are bilinear against the final state: `e_j = h_nᵀ W_a h_j
//! + b_a·h_j`. The weights `α = softmax(e)` form the context `c = Σ α_j h_j`
//! and the attended vector is `c ∘ h_n`, optionally passed through `tanh`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{dot, gemv_acc, gemv_t_acc, softmax_in_place, Matrix, Vector};

use super::cell::glorot;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub w_a: Matrix,
    pub b_a: Vector,
}

impl AttentionParams {
    pub fn zeros(width: usize) -> Self {
        AttentionParams {
            w_a: Matrix::zeros(width, width),
            b_a: Vector::zeros(width),
        }
    }

    pub fn glorot(width: usize, rng: &mut impl Rng) -> Self {
        AttentionParams {
            w_a: glorot(width, width, rng),
            b_a: Vector::zeros(width),
        }
    }

    pub fn width(&self) -> usize {
        self.b_a.len()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct AttentionCache {
    query: Vec<f64>,
    alpha: Vec<f64>,
    context: Vec<f64>,
    pub(crate) out: Vec<f64>,
    tanh: bool,
}

pub(crate) fn attend_forward(p: &AttentionParams, hs: &[Vec<f64>], tanh: bool) -> AttentionCache {
    let hn = hs.last().expect("nonempty sequence");
    // q = W_aᵀ h_n + b_a so that e_j = q·h_j
    let mut query = p.b_a.as_slice().to_vec();
    gemv_t_acc(&mut query, &p.w_a, hn);
    let mut alpha: Vec<f64> = hs.iter().map(|h| dot(&query, h)).collect();
    softmax_in_place(&mut alpha);
    let mut context = vec![0.0; hn.len()];
    for (a, h) in alpha.iter().zip(hs) {
        for (c, v) in context.iter_mut().zip(h) {
            *c += a * v;
        }
    }
    let out = context
        .iter()
        .zip(hn)
        .map(|(c, h)| if tanh { (c * h).tanh() } else { c * h })
        .collect();
    AttentionCache {
        query,
        alpha,
        context,
        out,
        tanh,
    }
}

/// Accumulates into `grad` and `dhs` (one row per sequence position).
pub(crate) fn attend_backward(
    p: &AttentionParams,
    hs: &[Vec<f64>],
    cache: &AttentionCache,
    dout: &[f64],
    grad: &mut AttentionParams,
    dhs: &mut [Vec<f64>],
) {
    let n = hs.len();
    let hn = &hs[n - 1];
    let w = hn.len();
    let dpre: Vec<f64> = if cache.tanh {
        dout.iter().zip(&cache.out).map(|(d, o)| d * (1.0 - o * o)).collect()
    } else {
        dout.to_vec()
    };
    let dcontext: Vec<f64> = dpre.iter().zip(hn).map(|(d, h)| d * h).collect();
    let mut dhn: Vec<f64> = dpre.iter().zip(&cache.context).map(|(d, c)| d * c).collect();

    let dalpha: Vec<f64> = hs.iter().map(|h| dot(&dcontext, h)).collect();
    let mean: f64 = cache.alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
    let mut dquery = vec![0.0; w];
    for j in 0..n {
        let a = cache.alpha[j];
        let de = a * (dalpha[j] - mean);
        for k in 0..w {
            dhs[j][k] += a * dcontext[k] + de * cache.query[k];
            dquery[k] += de * hs[j][k];
        }
    }
    // q = W_aᵀ h_n + b_a
    grad.w_a.add_outer(hn, &dquery, 1.0);
    for (g, d) in grad.b_a.iter_mut().zip(&dquery) {
        *g += d;
    }
    gemv_acc(&mut dhn, &p.w_a, &dquery);
    for (acc, d) in dhs[n - 1].iter_mut().zip(&dhn) {
        *acc += d;
    }
}

fn check(h_seq: &[Vector], p: &AttentionParams) -> Result<Vec<Vec<f64>>> {
    if h_seq.is_empty() {
        return Err(Error::Empty("attention input sequence"));
    }
    let w = p.width();
    if p.w_a.shape() != (w, w) {
        return Err(Error::shape("attend", "W_a", format!("{w}x{w}"), format!("{:?}", p.w_a.shape())));
    }
    h_seq
        .iter()
        .map(|h| {
            if h.len() != w {
                Err(Error::shape("attend", "h_j", w, h.len()))
            } else {
                Ok(h.as_slice().to_vec())
            }
        })
        .collect()
}

/// Attention weights `α_{n,·}` over the sequence.
pub fn attention_weights(h_seq: &[Vector], p: &AttentionParams) -> Result<Vector> {
    let hs = check(h_seq, p)?;
    Ok(Vector::from(attend_forward(p, &hs, false).alpha))
}

/// Attended output `c ∘ h_n` (or `tanh(c ∘ h_n)`).
pub fn attend(h_seq: &[Vector], p: &AttentionParams, tanh: bool) -> Result<Vector> {
    let hs = check(h_seq, p)?;
    Ok(Vector::from(attend_forward(p, &hs, tanh).out))
}
