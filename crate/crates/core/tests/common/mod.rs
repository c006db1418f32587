//! Test-only oracles: a per-scalar loop implementation of the cell, attention
//! and head equations, and a central finite-difference gradient checker.
//! Nothing here calls the library's math; parameters are read by name.

#![allow(dead_code)]

use std::collections::HashMap;

use alertnet::numerics::Vector;
use alertnet::preprocess::Label;
use alertnet::recurrent::{CellKind, ModelConfig, RecurrentModel, Variant};
use alertnet::training::bce_loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Mat = Vec<Vec<f64>>;

struct Named {
    t: HashMap<String, ((usize, usize), Vec<f64>)>,
}

impl Named {
    fn of(model: &RecurrentModel) -> Self {
        Named {
            t: model
                .params
                .tensors()
                .into_iter()
                .map(|t| (t.name, (t.shape, t.data.to_vec())))
                .collect(),
        }
    }

    fn mat(&self, name: &str) -> Mat {
        let ((r, c), d) = self.t.get(name).unwrap_or_else(|| panic!("missing tensor {name}"));
        (0..*r).map(|i| (0..*c).map(|j| d[i * c + j]).collect()).collect()
    }

    fn vec(&self, name: &str) -> Vec<f64> {
        self.t[name].1.clone()
    }
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `Σ_j W[i][j] x[j] + Σ_j U[i][j] h[j] + b[i]`, one scalar at a time.
fn gate(w: &Mat, x: &[f64], u: &Mat, h: &[f64], b: &[f64], i: usize) -> f64 {
    let mut acc = b[i];
    for j in 0..x.len() {
        acc += w[i][j] * x[j];
    }
    for j in 0..h.len() {
        acc += u[i][j] * h[j];
    }
    acc
}

fn naive_gru_step(p: &Named, pre: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
    let g = |n: &str| (p.mat(&format!("{pre}.W_{n}")), p.mat(&format!("{pre}.U_{n}")), p.vec(&format!("{pre}.b_{n}")));
    let (wz, uz, bz) = g("z");
    let (wr, ur, br) = g("r");
    let (wh, uh, bh) = g("h");
    let t = h.len();
    let mut z = vec![0.0; t];
    let mut r = vec![0.0; t];
    for i in 0..t {
        z[i] = sig(gate(&wz, x, &uz, h, &bz, i));
        r[i] = sig(gate(&wr, x, &ur, h, &br, i));
    }
    let mut rh = vec![0.0; t];
    for i in 0..t {
        rh[i] = r[i] * h[i];
    }
    let mut out = vec![0.0; t];
    for i in 0..t {
        let y = gate(&wh, x, &uh, &rh, &bh, i).tanh();
        out[i] = (1.0 - z[i]) * h[i] + z[i] * y;
    }
    out
}

fn naive_lstm_step(p: &Named, pre: &str, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let g = |n: &str| (p.mat(&format!("{pre}.W_{n}")), p.mat(&format!("{pre}.U_{n}")), p.vec(&format!("{pre}.b_{n}")));
    let (wf, uf, bf) = g("f");
    let (wi, ui, bi) = g("i");
    let (wo, uo, bo) = g("o");
    let (wz, uz, bz) = g("z");
    let t = h.len();
    let mut hn = vec![0.0; t];
    let mut cn = vec![0.0; t];
    for k in 0..t {
        let f = sig(gate(&wf, x, &uf, h, &bf, k));
        let i = sig(gate(&wi, x, &ui, h, &bi, k));
        let o = sig(gate(&wo, x, &uo, h, &bo, k));
        let y = gate(&wz, x, &uz, h, &bz, k).tanh();
        cn[k] = f * c[k] + i * y;
        hn[k] = o * cn[k].tanh();
    }
    (hn, cn)
}

fn naive_direction(p: &Named, pre: &str, kind: CellKind, units: usize, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut h = vec![0.0; units];
    let mut c = vec![0.0; units];
    let mut out = Vec::new();
    for x in xs {
        match kind {
            CellKind::Gru => h = naive_gru_step(p, pre, x, &h),
            CellKind::Lstm => {
                let (h2, c2) = naive_lstm_step(p, pre, x, &h, &c);
                h = h2;
                c = c2;
            }
        }
        out.push(h.clone());
    }
    out
}

/// Full-model score computed with scalar loops only.
pub fn naive_score(model: &RecurrentModel, xs: &[Vec<f64>]) -> f64 {
    let p = Named::of(model);
    let cfg: &ModelConfig = model.config();
    let mut seq: Vec<Vec<f64>> = xs.to_vec();
    let mut last_final = Vec::new();
    for (li, spec) in cfg.layers.iter().enumerate() {
        let fwd = naive_direction(&p, &format!("layer{li}.fwd"), spec.cell, spec.units, &seq);
        let n = seq.len();
        if spec.bidirectional {
            let rev: Vec<Vec<f64>> = seq.iter().rev().cloned().collect();
            let mut bwd = naive_direction(&p, &format!("layer{li}.bwd"), spec.cell, spec.units, &rev);
            let bwd_final = bwd[n - 1].clone();
            bwd.reverse();
            last_final = [fwd[n - 1].clone(), bwd_final].concat();
            seq = (0..n).map(|t| [fwd[t].clone(), bwd[t].clone()].concat()).collect();
        } else {
            last_final = fwd[n - 1].clone();
            seq = fwd;
        }
    }
    let rep = if cfg.attention {
        let w = p.mat("attention.W_a");
        let b = p.vec("attention.b_a");
        let n = seq.len();
        let hn = &seq[n - 1];
        let width = hn.len();
        let mut e = vec![0.0; n];
        for j in 0..n {
            let mut s = 0.0;
            for a in 0..width {
                for bb in 0..width {
                    s += hn[a] * w[a][bb] * seq[j][bb];
                }
                s += b[a] * seq[j][a];
            }
            e[j] = s;
        }
        let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = e.iter().map(|v| (v - m).exp()).sum();
        let mut ctx = vec![0.0; width];
        for j in 0..n {
            let a = (e[j] - m).exp() / z;
            for k in 0..width {
                ctx[k] += a * seq[j][k];
            }
        }
        (0..width)
            .map(|k| {
                let v = ctx[k] * hn[k];
                if cfg.attention_tanh {
                    v.tanh()
                } else {
                    v
                }
            })
            .collect()
    } else {
        last_final
    };
    let hw = p.vec("head.w");
    let hb = p.vec("head.b")[0];
    let mut logit = hb;
    for k in 0..rep.len() {
        logit += hw[k] * rep[k];
    }
    sig(logit)
}

pub fn random_seq(rng: &mut impl Rng, len: usize, dim: usize) -> Vec<Vector> {
    (0..len)
        .map(|_| Vector::from((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()))
        .collect()
}

/// Random small model for a variant: `units` per layer, `input_dim` inputs,
/// biases randomized too so no gate sits at an exact symmetric point.
pub fn random_model(variant: Variant, input_dim: usize, units: usize, seed: u64) -> RecurrentModel {
    let mut cfg = variant.config(input_dim, 1.0);
    for l in &mut cfg.layers {
        l.units = units;
    }
    let mut m = RecurrentModel::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for s in m.params.slices_mut() {
        for v in s.iter_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
    m
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const FD_STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-4;

/// Central differences of the loss for every parameter; returns the worst
/// relative error against `analytic` (flattened in tensor order).
pub fn finite_difference_worst(
    model: &RecurrentModel,
    xs: &[Vector],
    label: Label,
    weight: f64,
    analytic: &[f64],
) -> (f64, String) {
    let mut m = model.clone();
    let names: Vec<(String, usize)> = m.params.tensors().iter().map(|t| (t.name.clone(), t.data.len())).collect();
    let loss = |m: &RecurrentModel| bce_loss(m.forward(xs).unwrap(), label, weight);
    let mut worst = (0.0, String::new());
    let mut flat = 0;
    for (ti, (name, len)) in names.iter().enumerate() {
        for k in 0..*len {
            let orig = m.params.slices_mut()[ti][k];
            m.params.slices_mut()[ti][k] = orig + FD_STEP;
            let up = loss(&m);
            m.params.slices_mut()[ti][k] = orig - FD_STEP;
            let down = loss(&m);
            m.params.slices_mut()[ti][k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let e = rel_err(analytic[flat], numeric, REL_FLOOR);
            if e > worst.0 {
                worst = (e, format!("{name}[{k}] analytic={} numeric={numeric}", analytic[flat]));
            }
            flat += 1;
        }
    }
    worst
}
