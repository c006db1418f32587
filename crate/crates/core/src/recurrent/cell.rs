//! GRU and LSTM cells: parameter blocks, single steps, and their reverse-mode
//! counterparts used by backpropagation through time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gemv_acc, gemv_t_acc, sigmoid_scalar, Matrix, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    pub fn label(self) -> &'static str {
        match self {
            CellKind::Gru => "GRU",
            CellKind::Lstm => "LSTM",
        }
    }
}

/// One gate's `W x + U h + b` parameters: `W` is units×input, `U` units×units.
#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vector,
}

impl Gate {
    fn zeros(input: usize, units: usize) -> Self {
        Gate {
            w: Matrix::zeros(units, input),
            u: Matrix::zeros(units, units),
            b: Vector::zeros(units),
        }
    }

    fn glorot(input: usize, units: usize, rng: &mut impl Rng) -> Self {
        Gate {
            w: glorot(units, input, rng),
            u: glorot(units, units, rng),
            b: Vector::zeros(units),
        }
    }

    fn units(&self) -> usize {
        self.b.len()
    }

    /// Pre-activation `W x + U h + b`.
    fn pre(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut out = self.b.as_slice().to_vec();
        gemv_acc(&mut out, &self.w, x);
        gemv_acc(&mut out, &self.u, h);
        out
    }

    /// Accumulates parameter gradients for upstream `da`, and `Wᵀda`, `Uᵀda`
    /// into `dx`, `dh`.
    fn backward(&self, x: &[f64], h: &[f64], da: &[f64], grad: &mut Gate, dx: &mut [f64], dh: &mut [f64]) {
        grad.w.add_outer(da, x, 1.0);
        grad.u.add_outer(da, h, 1.0);
        for (g, d) in grad.b.iter_mut().zip(da) {
            *g += d;
        }
        gemv_t_acc(dx, &self.w, da);
        gemv_t_acc(dh, &self.u, da);
    }

    fn check(&self, op: &'static str, x: &Vector, h: &Vector) -> Result<()> {
        if x.len() != self.w.cols() {
            return Err(Error::shape(op, "x_t", self.w.cols(), x.len()));
        }
        if h.len() != self.units() {
            return Err(Error::shape(op, "h_prev", self.units(), h.len()));
        }
        Ok(())
    }

    fn tensors(&self) -> [(&Matrix, &'static str); 2] {
        [(&self.w, "W"), (&self.u, "U")]
    }
}

pub(crate) fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = Matrix::zeros(rows, cols);
    for v in m.as_mut_slice() {
        *v = rng.gen_range(-r..r);
    }
    m
}

/// Update gate `z`, reset gate `r`, candidate `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub update: Gate,
    pub reset: Gate,
    pub candidate: Gate,
}

/// Forget, input, output gates and the candidate `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub forget: Gate,
    pub input: Gate,
    pub output: Gate,
    pub candidate: Gate,
}

impl GruParams {
    pub fn zeros(input: usize, units: usize) -> Self {
        GruParams {
            update: Gate::zeros(input, units),
            reset: Gate::zeros(input, units),
            candidate: Gate::zeros(input, units),
        }
    }

    fn gates(&self) -> [(&'static str, &Gate); 3] {
        [("z", &self.update), ("r", &self.reset), ("h", &self.candidate)]
    }

    fn gates_mut(&mut self) -> [&mut Gate; 3] {
        [&mut self.update, &mut self.reset, &mut self.candidate]
    }
}

impl LstmParams {
    pub fn zeros(input: usize, units: usize) -> Self {
        LstmParams {
            forget: Gate::zeros(input, units),
            input: Gate::zeros(input, units),
            output: Gate::zeros(input, units),
            candidate: Gate::zeros(input, units),
        }
    }

    fn gates(&self) -> [(&'static str, &Gate); 4] {
        [
            ("f", &self.forget),
            ("i", &self.input),
            ("o", &self.output),
            ("z", &self.candidate),
        ]
    }

    fn gates_mut(&mut self) -> [&mut Gate; 4] {
        [&mut self.forget, &mut self.input, &mut self.output, &mut self.candidate]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellParams {
    Gru(GruParams),
    Lstm(LstmParams),
}

impl CellParams {
    pub fn zeros(kind: CellKind, input: usize, units: usize) -> Self {
        match kind {
            CellKind::Gru => CellParams::Gru(GruParams::zeros(input, units)),
            CellKind::Lstm => CellParams::Lstm(LstmParams::zeros(input, units)),
        }
    }

    pub fn glorot(kind: CellKind, input: usize, units: usize, rng: &mut impl Rng) -> Self {
        match kind {
            CellKind::Gru => CellParams::Gru(GruParams {
                update: Gate::glorot(input, units, rng),
                reset: Gate::glorot(input, units, rng),
                candidate: Gate::glorot(input, units, rng),
            }),
            CellKind::Lstm => CellParams::Lstm(LstmParams {
                forget: Gate::glorot(input, units, rng),
                input: Gate::glorot(input, units, rng),
                output: Gate::glorot(input, units, rng),
                candidate: Gate::glorot(input, units, rng),
            }),
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Gru(_) => CellKind::Gru,
            CellParams::Lstm(_) => CellKind::Lstm,
        }
    }

    pub fn units(&self) -> usize {
        match self {
            CellParams::Gru(p) => p.update.units(),
            CellParams::Lstm(p) => p.forget.units(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            CellParams::Gru(p) => p.update.w.cols(),
            CellParams::Lstm(p) => p.forget.w.cols(),
        }
    }

    /// Named tensors in a fixed order: per gate `W`, `U`, `b`.
    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, (usize, usize), &'a [f64])) {
        let mut visit_gate = |name: &str, g: &'a Gate| {
            for (m, which) in g.tensors() {
                f(format!("{prefix}.{which}_{name}"), m.shape(), m.as_slice());
            }
            f(format!("{prefix}.b_{name}"), (g.b.len(), 1), g.b.as_slice());
        };
        match self {
            CellParams::Gru(p) => p.gates().into_iter().for_each(|(n, g)| visit_gate(n, g)),
            CellParams::Lstm(p) => p.gates().into_iter().for_each(|(n, g)| visit_gate(n, g)),
        }
    }

    pub(crate) fn slices_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        let gates: Vec<&'a mut Gate> = match self {
            CellParams::Gru(p) => p.gates_mut().into_iter().collect(),
            CellParams::Lstm(p) => p.gates_mut().into_iter().collect(),
        };
        for g in gates {
            out.push(g.w.as_mut_slice());
            out.push(g.u.as_mut_slice());
            out.push(g.b.as_mut_slice());
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct GruCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    rh: Vec<f64>,
    y: Vec<f64>,
    pub(crate) h: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct LstmCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    f: Vec<f64>,
    i: Vec<f64>,
    o: Vec<f64>,
    y: Vec<f64>,
    tanh_c: Vec<f64>,
    pub(crate) c: Vec<f64>,
    pub(crate) h: Vec<f64>,
}

pub(crate) fn gru_forward(p: &GruParams, x: &[f64], h_prev: &[f64]) -> GruCache {
    let z: Vec<f64> = p.update.pre(x, h_prev).into_iter().map(sigmoid_scalar).collect();
    let r: Vec<f64> = p.reset.pre(x, h_prev).into_iter().map(sigmoid_scalar).collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let y: Vec<f64> = p.candidate.pre(x, &rh).into_iter().map(f64::tanh).collect();
    let h = (0..z.len())
        .map(|k| (1.0 - z[k]) * h_prev[k] + z[k] * y[k])
        .collect();
    GruCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        z,
        r,
        rh,
        y,
        h,
    }
}

/// Reverse of [`gru_forward`]. `dh` is the total gradient reaching `h_t`.
pub(crate) fn gru_backward(
    p: &GruParams,
    cache: &GruCache,
    dh: &[f64],
    grad: &mut GruParams,
    dx: &mut [f64],
    dh_prev: &mut [f64],
) {
    let n = dh.len();
    let mut da_z = vec![0.0; n];
    let mut da_y = vec![0.0; n];
    for k in 0..n {
        let (z, y, hp) = (cache.z[k], cache.y[k], cache.h_prev[k]);
        dh_prev[k] += dh[k] * (1.0 - z);
        da_z[k] = dh[k] * (y - hp) * z * (1.0 - z);
        da_y[k] = dh[k] * z * (1.0 - y * y);
    }
    // candidate consumes r∘h_prev
    let mut d_rh = vec![0.0; n];
    p.candidate.backward(&cache.x, &cache.rh, &da_y, &mut grad.candidate, dx, &mut d_rh);
    let mut da_r = vec![0.0; n];
    for k in 0..n {
        dh_prev[k] += d_rh[k] * cache.r[k];
        let r = cache.r[k];
        da_r[k] = d_rh[k] * cache.h_prev[k] * r * (1.0 - r);
    }
    p.update.backward(&cache.x, &cache.h_prev, &da_z, &mut grad.update, dx, dh_prev);
    p.reset.backward(&cache.x, &cache.h_prev, &da_r, &mut grad.reset, dx, dh_prev);
}

pub(crate) fn lstm_forward(p: &LstmParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmCache {
    let f: Vec<f64> = p.forget.pre(x, h_prev).into_iter().map(sigmoid_scalar).collect();
    let i: Vec<f64> = p.input.pre(x, h_prev).into_iter().map(sigmoid_scalar).collect();
    let o: Vec<f64> = p.output.pre(x, h_prev).into_iter().map(sigmoid_scalar).collect();
    let y: Vec<f64> = p.candidate.pre(x, h_prev).into_iter().map(f64::tanh).collect();
    let c: Vec<f64> = (0..f.len()).map(|k| f[k] * c_prev[k] + i[k] * y[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h = o.iter().zip(&tanh_c).map(|(a, b)| a * b).collect();
    LstmCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        f,
        i,
        o,
        y,
        tanh_c,
        c,
        h,
    }
}

/// Reverse of [`lstm_forward`]. `dh`/`dc` are the total gradients reaching
/// `h_t`/`c_t`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_backward(
    p: &LstmParams,
    cache: &LstmCache,
    dh: &[f64],
    dc: &[f64],
    grad: &mut LstmParams,
    dx: &mut [f64],
    dh_prev: &mut [f64],
    dc_prev: &mut [f64],
) {
    let n = dh.len();
    let mut da_f = vec![0.0; n];
    let mut da_i = vec![0.0; n];
    let mut da_o = vec![0.0; n];
    let mut da_y = vec![0.0; n];
    for k in 0..n {
        let (f, i, o, y, tc) = (cache.f[k], cache.i[k], cache.o[k], cache.y[k], cache.tanh_c[k]);
        let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
        da_o[k] = dh[k] * tc * o * (1.0 - o);
        da_f[k] = dct * cache.c_prev[k] * f * (1.0 - f);
        da_i[k] = dct * y * i * (1.0 - i);
        da_y[k] = dct * i * (1.0 - y * y);
        dc_prev[k] += dct * f;
    }
    let (x, hp) = (&cache.x, &cache.h_prev);
    p.forget.backward(x, hp, &da_f, &mut grad.forget, dx, dh_prev);
    p.input.backward(x, hp, &da_i, &mut grad.input, dx, dh_prev);
    p.output.backward(x, hp, &da_o, &mut grad.output, dx, dh_prev);
    p.candidate.backward(x, hp, &da_y, &mut grad.candidate, dx, dh_prev);
}

/// One GRU step: `h_t = (1−z)∘h_{t−1} + z∘y`.
pub fn gru_step(x: &Vector, h_prev: &Vector, p: &GruParams) -> Result<Vector> {
    for g in [&p.update, &p.reset, &p.candidate] {
        g.check("gru_step", x, h_prev)?;
    }
    Ok(Vector::from(gru_forward(p, x, h_prev).h))
}

/// One LSTM step, returning `(h_t, c_t)`.
pub fn lstm_step(x: &Vector, h_prev: &Vector, c_prev: &Vector, p: &LstmParams) -> Result<(Vector, Vector)> {
    for g in [&p.forget, &p.input, &p.output, &p.candidate] {
        g.check("lstm_step", x, h_prev)?;
    }
    if c_prev.len() != p.forget.units() {
        return Err(Error::shape("lstm_step", "c_prev", p.forget.units(), c_prev.len()));
    }
    let cache = lstm_forward(p, x, h_prev, c_prev);
    Ok((Vector::from(cache.h), Vector::from(cache.c)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> Vector {
        Vector::from(x)
    }

    #[test]
    fn gru_zero_params_closed_form() {
        let p = GruParams::zeros(2, 1);
        let h = gru_step(&v(&[0.3, -0.7]), &v(&[0.4]), &p).unwrap();
        assert!((h[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn gru_update_gate_saturation() {
        let mut p = GruParams::zeros(2, 2);
        p.candidate.b = v(&[0.3, -1.2]);
        p.update.b = v(&[40.0, 40.0]);
        let h = gru_step(&v(&[1.0, 2.0]), &v(&[0.9, -0.9]), &p).unwrap();
        assert!((h[0] - 0.3f64.tanh()).abs() < 1e-8);
        assert!((h[1] - (-1.2f64).tanh()).abs() < 1e-8);

        p.update.b = v(&[-40.0, -40.0]);
        p.candidate.w = Matrix::from_rows(&[vec![1.0, 1.0], vec![-2.0, 0.5]]).unwrap();
        let h = gru_step(&v(&[1.0, 2.0]), &v(&[0.9, -0.9]), &p).unwrap();
        assert!((h[0] - 0.9).abs() < 1e-8 && (h[1] + 0.9).abs() < 1e-8);
    }

    #[test]
    fn lstm_zero_params_closed_form() {
        let p = LstmParams::zeros(1, 1);
        let (h, c) = lstm_step(&v(&[0.5]), &v(&[0.0]), &v(&[1.0]), &p).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-15);
        assert!((h[0] - 0.2311).abs() < 1e-4);
        assert!((h[0] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn lstm_gate_saturation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let CellParams::Lstm(mut p) = CellParams::glorot(CellKind::Lstm, 3, 2, &mut rng) else {
            unreachable!()
        };
        p.forget.b = v(&[20.0, 20.0]);
        p.input.b = v(&[-20.0, -20.0]);
        let c_prev = v(&[0.7, -1.3]);
        let x = v(&[0.1, 0.2, -0.1]);
        let (_, c) = lstm_step(&x, &v(&[0.05, -0.05]), &c_prev, &p).unwrap();
        assert!((c[0] - 0.7).abs() < 1e-8 && (c[1] + 1.3).abs() < 1e-8);

        p.output.b = v(&[-60.0, -60.0]);
        let (h, _) = lstm_step(&x, &v(&[0.05, -0.05]), &c_prev, &p).unwrap();
        assert!(h.iter().all(|x| x.abs() < 1e-8));
    }

    #[test]
    fn step_shape_errors() {
        let p = GruParams::zeros(2, 3);
        assert!(matches!(
            gru_step(&v(&[1.0]), &Vector::zeros(3), &p),
            Err(Error::Shape { operand: "x_t", .. })
        ));
        assert!(matches!(
            gru_step(&v(&[1.0, 2.0]), &Vector::zeros(2), &p),
            Err(Error::Shape { operand: "h_prev", .. })
        ));
        let p = LstmParams::zeros(2, 3);
        assert!(matches!(
            lstm_step(&v(&[1.0, 2.0]), &Vector::zeros(3), &Vector::zeros(1), &p),
            Err(Error::Shape { operand: "c_prev", .. })
        ));
    }

    #[test]
    fn gru_output_is_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let CellParams::Gru(p) = CellParams::glorot(CellKind::Gru, 4, 5, &mut rng) else {
                unreachable!()
            };
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let hp: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c = gru_forward(&p, &x, &hp);
            for k in 0..5 {
                assert!(c.z[k] > 0.0 && c.z[k] < 1.0 && c.r[k] > 0.0 && c.r[k] < 1.0);
                let (lo, hi) = (hp[k].min(c.y[k]), hp[k].max(c.y[k]));
                assert!(c.h[k] >= lo - 1e-15 && c.h[k] <= hi + 1e-15);
            }
        }
    }
}
