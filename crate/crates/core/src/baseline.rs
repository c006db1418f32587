//! Bag-of-words reference model: TF-IDF weighting, a latent semantic analysis
//! projection and L2-regularized logistic regression.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, sigmoid_scalar, Matrix, Vector};
use crate::preprocess::Label;

/// Sparse vector with strictly increasing indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseVector {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, v)| v * dense[i]).sum()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] = v;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TfidfModel {
    terms: BTreeMap<String, usize>,
    df: Vec<usize>,
    idf: Vec<f64>,
    n_docs: usize,
}

impl TfidfModel {
    /// Fits document frequencies over tokenized documents. Terms are indexed
    /// in lexicographic order.
    pub fn fit<D: AsRef<[S]>, S: AsRef<str>>(docs: &[D]) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Empty("tf-idf fit corpus"));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in docs {
            let mut seen: Vec<&str> = doc.as_ref().iter().map(AsRef::as_ref).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *counts.entry(t).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::Empty("tf-idf vocabulary"));
        }
        let n = docs.len();
        let terms = counts.keys().enumerate().map(|(i, t)| (t.to_string(), i)).collect();
        let df: Vec<usize> = counts.values().copied().collect();
        let idf = df.iter().map(|&d| smoothed_idf(n, d)).collect();
        Ok(TfidfModel { terms, df, idf, n_docs: n })
    }

    /// Rebuilds a fitted model from its term list, document frequencies and document count.
    pub fn from_parts(terms: Vec<String>, df: Vec<usize>, n_docs: usize) -> Result<Self> {
        if terms.is_empty() || terms.len() != df.len() {
            return Err(Error::Format("tf-idf term and frequency lists differ or are empty".into()));
        }
        if !terms.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Format("tf-idf terms must be sorted and unique".into()));
        }
        if df.iter().any(|&d| d == 0 || d > n_docs) {
            return Err(Error::Format("document frequency out of range".into()));
        }
        let idf = df.iter().map(|&d| smoothed_idf(n_docs, d)).collect();
        let terms = terms.into_iter().enumerate().map(|(i, t)| (t, i)).collect();
        Ok(TfidfModel { terms, df, idf, n_docs })
    }

    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn document_frequencies(&self) -> &[usize] {
        &self.df
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.keys().map(String::as_str)
    }

    pub fn index(&self, term: &str) -> Option<usize> {
        self.terms.get(term).copied()
    }

    /// Raw counts times idf, L2-normalized. Unseen terms are dropped; a
    /// document with no known terms maps to the zero vector.
    pub fn transform<S: AsRef<str>>(&self, doc: &[S]) -> SparseVector {
        let mut tf: BTreeMap<usize, f64> = BTreeMap::new();
        for t in doc {
            if let Some(&i) = self.terms.get(t.as_ref()) {
                *tf.entry(i).or_default() += 1.0;
            }
        }
        let mut v = SparseVector {
            indices: tf.keys().copied().collect(),
            values: tf.iter().map(|(&i, c)| c * self.idf[i]).collect(),
        };
        let n = v.norm();
        if n > 0.0 {
            v.values.iter_mut().for_each(|x| *x /= n);
        }
        v
    }
}

fn smoothed_idf(n: usize, df: usize) -> f64 {
    ((1.0 + n as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// Rank-k projection onto the top right singular subspace of a document–term matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LsaProjection {
    /// `k × d`; row `i` is the `i`-th right singular vector.
    basis: Matrix,
    singular_values: Vec<f64>,
}

const LSA_OVERSAMPLE: usize = 8;
const LSA_MAX_ITERS: usize = 3000;
const LSA_RITZ_EVERY: usize = 5;
const LSA_TOL: f64 = 1e-11;
/// Eigenvalues of `AᵀA` below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-12;

impl LsaProjection {
    /// Orthogonal (block power) iteration on `AᵀA` with Gram–Schmidt
    /// re-orthonormalization and a Rayleigh–Ritz step, from a fixed seed.
    pub fn fit(rows: &[SparseVector], dim: usize, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("LSA rank must be at least 1"));
        }
        let bound = dim.min(rows.len());
        if k > bound {
            return Err(Error::invalid(format!(
                "LSA rank {k} exceeds min(vocabulary, documents) = {bound}"
            )));
        }
        let gram = |v: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; dim];
            for r in rows {
                let s = r.dot_dense(v);
                if s != 0.0 {
                    for (&i, &x) in r.indices.iter().zip(&r.values) {
                        out[i] += s * x;
                    }
                }
            }
            out
        };
        let m = (k + LSA_OVERSAMPLE).min(bound);
        let mut rng = ChaCha8Rng::seed_from_u64(0x15a);
        let mut q: Vec<Vec<f64>> = (0..m).map(|_| random_unit(dim, &mut rng)).collect();
        orthonormalize(&mut q, &mut rng);

        let mut ritz: (Vec<f64>, Vec<Vec<f64>>) = (Vec::new(), Vec::new());
        for it in 1..=LSA_MAX_ITERS {
            let mut z: Vec<Vec<f64>> = q.iter().map(|v| gram(v)).collect();
            orthonormalize(&mut z, &mut rng);
            q = z;
            if it % LSA_RITZ_EVERY == 0 || it == LSA_MAX_ITERS {
                let gq: Vec<Vec<f64>> = q.iter().map(|v| gram(v)).collect();
                ritz = rayleigh_ritz(&q, &gq);
                let top = ritz.0[0].max(0.0);
                if top == 0.0 {
                    break;
                }
                let converged = (0..k).all(|i| {
                    let v = &ritz.1[i];
                    let gv = gram(v);
                    let r: f64 = gv.iter().zip(v).map(|(a, b)| (a - ritz.0[i] * b).powi(2)).sum::<f64>().sqrt();
                    r <= LSA_TOL * top
                });
                // Ritz vectors make a better starting block than q itself.
                q = ritz.1.clone();
                if converged {
                    break;
                }
            }
        }
        let (values, vectors) = ritz;
        let top = values.first().copied().unwrap_or(0.0).max(0.0);
        if top == 0.0 || values[k - 1] <= RANK_TOL * top {
            return Err(Error::invalid(format!(
                "LSA rank {k} exceeds the numerical rank of the document-term matrix"
            )));
        }
        let singular_values: Vec<f64> = values[..k].iter().map(|l| l.sqrt()).collect();
        let mut data = Vec::with_capacity(k * dim);
        for mut v in vectors.into_iter().take(k) {
            let lead = v
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |best, (i, x)| if x.abs() > best.1.abs() { (i, *x) } else { best });
            if lead.1 < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            data.extend(v);
        }
        Ok(LsaProjection {
            basis: Matrix::from_vec(k, dim, data)?,
            singular_values,
        })
    }

    pub fn from_basis(basis: Matrix, singular_values: Vec<f64>) -> Result<Self> {
        if singular_values.len() != basis.rows() {
            return Err(Error::Format("singular value count differs from basis rows".into()));
        }
        Ok(LsaProjection { basis, singular_values })
    }

    pub fn rank(&self) -> usize {
        self.basis.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.basis.cols()
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn project(&self, x: &SparseVector) -> Vector {
        Vector::from((0..self.rank()).map(|i| x.dot_dense(self.basis.row(i))).collect::<Vec<_>>())
    }

    pub fn project_dense(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("lsa_project", "x", self.input_dim(), x.len()));
        }
        Ok(Vector::from((0..self.rank()).map(|i| dot(self.basis.row(i), x)).collect::<Vec<_>>()))
    }

    /// Maps `k` coordinates back into term space.
    pub fn project_back(&self, v: &[f64]) -> Result<Vector> {
        if v.len() != self.rank() {
            return Err(Error::shape("lsa_project_back", "v", self.rank(), v.len()));
        }
        let mut out = vec![0.0; self.input_dim()];
        for (i, &c) in v.iter().enumerate() {
            for (o, b) in out.iter_mut().zip(self.basis.row(i)) {
                *o += c * b;
            }
        }
        Ok(Vector::from(out))
    }
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Modified Gram–Schmidt, run twice. Columns that vanish are replaced by
/// fresh random directions.
fn orthonormalize(vs: &mut [Vec<f64>], rng: &mut ChaCha8Rng) {
    for i in 0..vs.len() {
        loop {
            let scale = vs[i].iter().map(|x| x * x).sum::<f64>().sqrt();
            let (head, tail) = vs.split_at_mut(i);
            let v = &mut tail[0];
            for _ in 0..2 {
                for u in head.iter() {
                    let p = dot(v, u);
                    for (a, b) in v.iter_mut().zip(u) {
                        *a -= p * b;
                    }
                }
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if scale > 0.0 && n > 1e-10 * scale {
                v.iter_mut().for_each(|x| *x /= n);
                break;
            }
            *v = random_unit(v.len(), rng);
        }
    }
}

/// Eigenpairs of `QᵀGQ` lifted back through `Q`, sorted by eigenvalue descending.
fn rayleigh_ritz(q: &[Vec<f64>], gq: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = q.len();
    let mut b = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i..m {
            let v = 0.5 * (dot(&q[i], &gq[j]) + dot(&q[j], &gq[i]));
            b[i][j] = v;
            b[j][i] = v;
        }
    }
    let (vals, vecs) = jacobi_eigen(b);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &c| vals[c].total_cmp(&vals[a]));
    let dim = q[0].len();
    let values = order.iter().map(|&i| vals[i]).collect();
    let vectors = order
        .iter()
        .map(|&c| {
            let mut v = vec![0.0; dim];
            for (r, qr) in q.iter().enumerate() {
                let w = vecs[r][c];
                for (o, x) in v.iter_mut().zip(qr) {
                    *o += w * x;
                }
            }
            v
        })
        .collect();
    (values, vectors)
}

/// Cyclic Jacobi for a small symmetric matrix. Returns eigenvalues and the
/// eigenvector matrix (eigenvectors in columns).
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        let diag: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    /// Strength of the `λ/2 ‖w‖²` penalty; the intercept is not penalized.
    pub l2: f64,
    pub tolerance: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub alert_weight: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            l2: 1e-4,
            tolerance: 1e-6,
            max_iters: 20_000,
            seed: 1,
            alert_weight: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vector,
    pub intercept: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticFit {
    pub model: LogisticModel,
    pub loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn zeros(dim: usize) -> Self {
        LogisticModel {
            weights: Vector::zeros(dim),
            intercept: 0.0,
        }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid_scalar(dot(&self.weights, x) + self.intercept)
    }

    /// Gradient descent with Armijo backtracking on the weighted mean
    /// log-loss plus the L2 penalty, from a seeded small random start.
    pub fn fit(xs: &[Vector], labels: &[Label], cfg: &LogisticConfig) -> Result<LogisticFit> {
        if xs.is_empty() {
            return Err(Error::Empty("logistic training set"));
        }
        if xs.len() != labels.len() {
            return Err(Error::shape("logistic_fit", "labels", xs.len(), labels.len()));
        }
        crate::training::check_both_classes(labels, |l| *l)?;
        let d = xs[0].len();
        if let Some(bad) = xs.iter().find(|x| x.len() != d) {
            return Err(Error::shape("logistic_fit", "x", d, bad.len()));
        }
        if !(cfg.l2 >= 0.0) || !(cfg.alert_weight > 0.0) || !(cfg.tolerance > 0.0) {
            return Err(Error::invalid("l2 must be non-negative, alert weight and tolerance positive"));
        }
        let weights: Vec<f64> = labels
            .iter()
            .map(|l| if *l == Label::Alert { cfg.alert_weight } else { 1.0 })
            .collect();
        let total: f64 = weights.iter().sum();
        let objective = |theta: &[f64]| -> (f64, Vec<f64>) {
            let (w, b) = theta.split_at(d);
            let mut loss = 0.0;
            let mut grad = vec![0.0; d + 1];
            for ((x, l), wt) in xs.iter().zip(labels).zip(&weights) {
                let z = dot(w, x) + b[0];
                let y = l.target();
                // log(1 + e^z) − y z, computed stably
                loss += wt * (softplus(z) - y * z);
                let r = wt * (sigmoid_scalar(z) - y);
                for (g, xi) in grad[..d].iter_mut().zip(x.iter()) {
                    *g += r * xi;
                }
                grad[d] += r;
            }
            loss /= total;
            grad.iter_mut().for_each(|g| *g /= total);
            loss += 0.5 * cfg.l2 * dot(w, w);
            for (g, wi) in grad[..d].iter_mut().zip(w) {
                *g += cfg.l2 * wi;
            }
            (loss, grad)
        };

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut theta: Vec<f64> = (0..=d).map(|_| rng.gen_range(-0.01..0.01)).collect();
        let (mut f, mut g) = objective(&theta);
        let mut step = 1.0;
        let mut iterations = 0;
        while iterations < cfg.max_iters {
            let gn2 = dot(&g, &g);
            if gn2.sqrt() < cfg.tolerance {
                break;
            }
            iterations += 1;
            step *= 2.0;
            loop {
                let cand: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - step * gi).collect();
                let (fc, gc) = objective(&cand);
                if fc <= f - 0.5 * step * gn2 || step < 1e-20 {
                    theta = cand;
                    f = fc;
                    g = gc;
                    break;
                }
                step *= 0.5;
            }
        }
        let grad_norm = dot(&g, &g).sqrt();
        let intercept = theta.pop().unwrap_or(0.0);
        Ok(LogisticFit {
            model: LogisticModel {
                weights: Vector::from(theta),
                intercept,
            },
            loss: f,
            grad_norm,
            iterations,
        })
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub rank: usize,
    pub logistic: LogisticConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            rank: 50,
            logistic: LogisticConfig::default(),
        }
    }
}

/// TF-IDF → LSA → logistic regression.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineModel {
    pub tfidf: TfidfModel,
    pub lsa: LsaProjection,
    pub logistic: LogisticModel,
}

impl BaselineModel {
    /// Fits the pipeline. The rank is reduced to the matrix's rank bound when
    /// the requested one is larger.
    pub fn fit<D: AsRef<[S]>, S: AsRef<str>>(docs: &[D], labels: &[Label], cfg: &BaselineConfig) -> Result<Self> {
        if docs.len() != labels.len() {
            return Err(Error::shape("baseline_fit", "labels", docs.len(), labels.len()));
        }
        crate::training::check_both_classes(labels, |l| *l)?;
        let tfidf = TfidfModel::fit(docs)?;
        let rows: Vec<SparseVector> = docs.iter().map(|d| tfidf.transform(d.as_ref())).collect();
        let rank = cfg.rank.min(tfidf.dim()).min(rows.len());
        let lsa = LsaProjection::fit(&rows, tfidf.dim(), rank)?;
        let xs: Vec<Vector> = rows.iter().map(|r| lsa.project(r)).collect();
        let logistic = LogisticModel::fit(&xs, labels, &cfg.logistic)?.model;
        Ok(BaselineModel { tfidf, lsa, logistic })
    }

    pub fn score<S: AsRef<str>>(&self, doc: &[S]) -> f64 {
        self.logistic.score(&self.lsa.project(&self.tfidf.transform(doc)))
    }
}
