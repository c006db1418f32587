//! Recurrent model zoo: GRU/LSTM layers, bidirectional and stacked
//! composition, attention, and a dense sigmoid head producing a score in [0, 1].

mod attention;
mod cell;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, sigmoid_scalar, Vector};

pub use attention::{attend, attention_weights, AttentionParams};
pub(crate) use attention::{attend_backward, attend_forward, AttentionCache};
pub use cell::{gru_step, lstm_step, CellKind, CellParams, Gate, GruParams, LstmParams};
pub(crate) use cell::{gru_backward, gru_forward, lstm_backward, lstm_forward, GruCache, LstmCache};

/// Recurrent units in the flat presets; stacking and bidirectionality each halve it.
pub const BASE_UNITS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub cell: CellKind,
    pub units: usize,
    pub bidirectional: bool,
    pub return_sequences: bool,
}

impl LayerSpec {
    pub fn output_width(&self) -> usize {
        self.units * if self.bidirectional { 2 } else { 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub attention: bool,
    /// Wrap the attended vector in `tanh`.
    #[serde(default)]
    pub attention_tanh: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim must be positive"));
        }
        let Some(last) = self.layers.last() else {
            return Err(Error::invalid("model needs at least one recurrent layer"));
        };
        if self.layers.iter().any(|l| l.units == 0) {
            return Err(Error::invalid("layer units must be positive"));
        }
        if self.layers[..self.layers.len() - 1].iter().any(|l| !l.return_sequences) {
            return Err(Error::invalid("every layer below the top must return sequences"));
        }
        if last.return_sequences != self.attention {
            return Err(Error::invalid(
                "top layer must return sequences exactly when attention is enabled",
            ));
        }
        Ok(())
    }

    /// Width of the vector fed to the output head.
    pub fn head_width(&self) -> usize {
        self.layers.last().map(LayerSpec::output_width).unwrap_or(0)
    }

    fn layer_input(&self, idx: usize) -> usize {
        if idx == 0 {
            self.input_dim
        } else {
            self.layers[idx - 1].output_width()
        }
    }
}

/// One of the sixteen named architectures: cell × stacked × bidirectional × attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub cell: CellKind,
    pub stacked: bool,
    pub bidirectional: bool,
    pub attention: bool,
}

impl Variant {
    pub fn all() -> Vec<Variant> {
        let mut out = Vec::with_capacity(16);
        for cell in [CellKind::Gru, CellKind::Lstm] {
            for attention in [false, true] {
                for bidirectional in [false, true] {
                    for stacked in [false, true] {
                        out.push(Variant {
                            cell,
                            stacked,
                            bidirectional,
                            attention,
                        });
                    }
                }
            }
        }
        out
    }

    /// Preset name, e.g. `bidirectional-stacked-lstm-attention`.
    pub fn name(&self) -> String {
        let mut parts = Vec::new();
        if self.bidirectional {
            parts.push("bidirectional");
        }
        if self.stacked {
            parts.push("stacked");
        }
        parts.push(match self.cell {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        });
        if self.attention {
            parts.push("attention");
        }
        parts.join("-")
    }

    /// Human-readable name, e.g. "Bidirectional Stacked LSTM with Attention".
    pub fn display_name(&self) -> String {
        let mut s = String::new();
        if self.bidirectional {
            s.push_str("Bidirectional ");
        }
        if self.stacked {
            s.push_str("Stacked ");
        }
        s.push_str(self.cell.label());
        if self.attention {
            s.push_str(" with Attention");
        }
        s
    }

    pub fn units_per_layer(&self, width_scale: f64) -> usize {
        let mut units = BASE_UNITS;
        if self.stacked {
            units /= 2;
        }
        if self.bidirectional {
            units /= 2;
        }
        ((units as f64 * width_scale).round() as usize).max(1)
    }

    /// Unit counts as printed in a results table: `(512)`, `(128,128)`.
    pub fn configuration(&self, width_scale: f64) -> String {
        let u = self.units_per_layer(width_scale);
        if self.stacked {
            format!("({u},{u})")
        } else {
            format!("({u})")
        }
    }

    pub fn config(&self, input_dim: usize, width_scale: f64) -> ModelConfig {
        let units = self.units_per_layer(width_scale);
        let depth = if self.stacked { 2 } else { 1 };
        let layers = (0..depth)
            .map(|i| LayerSpec {
                cell: self.cell,
                units,
                bidirectional: self.bidirectional,
                return_sequences: i + 1 < depth || self.attention,
            })
            .collect();
        ModelConfig {
            input_dim,
            layers,
            attention: self.attention,
            attention_tanh: false,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::all().into_iter().find(|v| v.name() == s).ok_or_else(|| Error::UnknownPreset {
            name: s.to_string(),
            valid: Variant::all().iter().map(Variant::name).collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub forward: CellParams,
    pub backward: Option<CellParams>,
}

/// All trainable tensors of a recurrent model. Also used, zero-filled, as the
/// gradient and optimizer-moment containers.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
    pub attention: Option<AttentionParams>,
    pub head_w: Vector,
    pub head_b: Vector,
}

/// Name, shape and values of one parameter tensor.
#[derive(Clone, Debug)]
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: (usize, usize),
    pub data: &'a [f64],
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        Self::build(config, CellParams::zeros, AttentionParams::zeros)
    }

    /// Glorot-uniform weights, zero biases, deterministic in `seed`.
    pub fn glorot(config: &ModelConfig, seed: u64) -> Self {
        let rng = std::cell::RefCell::new(ChaCha8Rng::seed_from_u64(seed));
        let mut p = Self::build(
            config,
            |kind, input, units| CellParams::glorot(kind, input, units, &mut *rng.borrow_mut()),
            |w| AttentionParams::glorot(w, &mut *rng.borrow_mut()),
        );
        let w = cell::glorot(1, config.head_width(), &mut *rng.borrow_mut());
        p.head_w = Vector::from(w.as_slice());
        p
    }

    fn build(
        config: &ModelConfig,
        mut cell: impl FnMut(CellKind, usize, usize) -> CellParams,
        attn: impl FnOnce(usize) -> AttentionParams,
    ) -> Self {
        let layers = config
            .layers
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let input = config.layer_input(i);
                LayerParams {
                    forward: cell(spec.cell, input, spec.units),
                    backward: spec.bidirectional.then(|| cell(spec.cell, input, spec.units)),
                }
            })
            .collect();
        let attention = config.attention.then(|| attn(config.head_width()));
        ModelParams {
            layers,
            attention,
            head_w: Vector::zeros(config.head_width()),
            head_b: Vector::zeros(1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.slices_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    /// Every tensor in declaration order: layers bottom-up (forward then
    /// backward direction), attention, head.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        {
            let mut push = |name: String, shape: (usize, usize), data| out.push(TensorRef { name, shape, data });
            for (i, layer) in self.layers.iter().enumerate() {
                layer.forward.visit(&format!("layer{i}.fwd"), &mut push);
                if let Some(b) = &layer.backward {
                    b.visit(&format!("layer{i}.bwd"), &mut push);
                }
            }
        }
        if let Some(a) = &self.attention {
            out.push(TensorRef {
                name: "attention.W_a".into(),
                shape: a.w_a.shape(),
                data: a.w_a.as_slice(),
            });
            out.push(TensorRef {
                name: "attention.b_a".into(),
                shape: (a.b_a.len(), 1),
                data: a.b_a.as_slice(),
            });
        }
        out.push(TensorRef {
            name: "head.w".into(),
            shape: (1, self.head_w.len()),
            data: self.head_w.as_slice(),
        });
        out.push(TensorRef {
            name: "head.b".into(),
            shape: (1, 1),
            data: self.head_b.as_slice(),
        });
        out
    }

    /// Mutable views in the same order as [`ModelParams::tensors`].
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            layer.forward.slices_mut(&mut out);
            if let Some(b) = &mut layer.backward {
                b.slices_mut(&mut out);
            }
        }
        if let Some(a) = &mut self.attention {
            out.push(a.w_a.as_mut_slice());
            out.push(a.b_a.as_mut_slice());
        }
        out.push(self.head_w.as_mut_slice());
        out.push(self.head_b.as_mut_slice());
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Flattened copy of every value in tensor order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    /// Overwrites every value from a flat buffer in tensor order.
    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if values.len() != expected {
            return Err(Error::shape("ModelParams::assign_flat", "values", expected, values.len()));
        }
        let mut offset = 0;
        for s in self.slices_mut() {
            let n = s.len();
            s.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub(crate) enum StepCache {
    Gru(GruCache),
    Lstm(LstmCache),
}

impl StepCache {
    fn h(&self) -> &[f64] {
        match self {
            StepCache::Gru(c) => &c.h,
            StepCache::Lstm(c) => &c.h,
        }
    }
}

/// Steps in processing order (reversed for the backward direction).
#[derive(Clone, Debug)]
pub(crate) struct DirectionTrace {
    pub(crate) steps: Vec<StepCache>,
}

#[derive(Clone, Debug)]
pub(crate) struct LayerTrace {
    pub(crate) inputs: Vec<Vec<f64>>,
    pub(crate) forward: DirectionTrace,
    pub(crate) backward: Option<DirectionTrace>,
    /// Per-position outputs in input order (`[fwd ; bwd]` when bidirectional).
    pub(crate) outputs: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub(crate) struct Trace {
    pub(crate) layers: Vec<LayerTrace>,
    pub(crate) attention: Option<AttentionCache>,
    pub(crate) representation: Vec<f64>,
    pub(crate) score: f64,
}

pub(crate) fn run_direction(cell: &CellParams, xs: &[Vec<f64>], reverse: bool) -> DirectionTrace {
    let units = cell.units();
    let mut h = vec![0.0; units];
    let mut c = vec![0.0; units];
    let mut steps = Vec::with_capacity(xs.len());
    let order: Box<dyn Iterator<Item = &Vec<f64>>> = if reverse {
        Box::new(xs.iter().rev())
    } else {
        Box::new(xs.iter())
    };
    for x in order {
        let step = match cell {
            CellParams::Gru(p) => {
                let cache = gru_forward(p, x, &h);
                h.clone_from(&cache.h);
                StepCache::Gru(cache)
            }
            CellParams::Lstm(p) => {
                let cache = lstm_forward(p, x, &h, &c);
                h.clone_from(&cache.h);
                c.clone_from(&cache.c);
                StepCache::Lstm(cache)
            }
        };
        steps.push(step);
    }
    DirectionTrace { steps }
}

impl DirectionTrace {
    /// Outputs re-ordered to input positions.
    fn outputs(&self, reverse: bool) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.steps.iter().map(StepCache::h).collect();
        if reverse {
            out.reverse();
        }
        out
    }
}

fn run_layer_trace(layer: &LayerParams, xs: Vec<Vec<f64>>) -> LayerTrace {
    let forward = run_direction(&layer.forward, &xs, false);
    let backward = layer.backward.as_ref().map(|b| run_direction(b, &xs, true));
    let fo = forward.outputs(false);
    let outputs = match &backward {
        None => fo.into_iter().map(<[f64]>::to_vec).collect(),
        Some(bt) => fo
            .into_iter()
            .zip(bt.outputs(true))
            .map(|(f, b)| [f, b].concat())
            .collect(),
    };
    LayerTrace {
        inputs: xs,
        forward,
        backward,
        outputs,
    }
}

/// Runs one direction of a layer over a sequence; outputs are in input order.
pub fn run_layer(seq: &[Vector], cell: &CellParams, direction: Direction) -> Result<Vec<Vector>> {
    if seq.is_empty() {
        return Err(Error::Empty("recurrent layer input sequence"));
    }
    let xs = check_inputs("run_layer", seq, cell.input_dim())?;
    let reverse = direction == Direction::Backward;
    let trace = run_direction(cell, &xs, reverse);
    Ok(trace.outputs(reverse).into_iter().map(Vector::from).collect())
}

/// Per-position `[forward ; backward]` concatenation.
pub fn bidirectional(seq: &[Vector], fwd: &CellParams, bwd: &CellParams) -> Result<Vec<Vector>> {
    if fwd.units() != bwd.units() {
        return Err(Error::shape("bidirectional", "bwd_cell units", fwd.units(), bwd.units()));
    }
    let f = run_layer(seq, fwd, Direction::Forward)?;
    let b = run_layer(seq, bwd, Direction::Backward)?;
    Ok(f.iter().zip(&b).map(|(x, y)| x.concat(y)).collect())
}

fn check_inputs(op: &'static str, seq: &[Vector], dim: usize) -> Result<Vec<Vec<f64>>> {
    seq.iter()
        .map(|x| {
            if x.len() != dim {
                Err(Error::shape(op, "x_t", dim, x.len()))
            } else {
                Ok(x.as_slice().to_vec())
            }
        })
        .collect()
}

/// A configured recurrent classifier with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentModel {
    config: ModelConfig,
    pub params: ModelParams,
}

impl RecurrentModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::glorot(&config, seed);
        Ok(RecurrentModel { config, params })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::zeros(&config);
        Ok(RecurrentModel { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let expected = ModelParams::zeros(&config);
        let shapes = |p: &ModelParams| p.tensors().iter().map(|t| (t.name.clone(), t.shape)).collect::<Vec<_>>();
        if shapes(&expected) != shapes(&params) {
            return Err(Error::invalid("parameter shapes do not match the model configuration"));
        }
        Ok(RecurrentModel { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub(crate) fn trace(&self, seq: &[Vec<f64>]) -> Trace {
        debug_assert!(!seq.is_empty());
        let mut layers: Vec<LayerTrace> = Vec::with_capacity(self.params.layers.len());
        for lp in &self.params.layers {
            let input = match layers.last() {
                None => seq.to_vec(),
                Some(prev) => prev.outputs.clone(),
            };
            layers.push(run_layer_trace(lp, input));
        }
        let top = layers.last().expect("validated: at least one layer");
        let (attention, representation) = match &self.params.attention {
            Some(ap) => {
                let cache = attend_forward(ap, &top.outputs, self.config.attention_tanh);
                let rep = cache.out.clone();
                (Some(cache), rep)
            }
            None => (None, final_state(top)),
        };
        let logit = dot(&self.params.head_w, &representation) + self.params.head_b[0];
        Trace {
            layers,
            attention,
            representation,
            score: sigmoid_scalar(logit),
        }
    }

    /// Score in [0, 1]. An empty sequence scores 0.
    pub fn forward(&self, seq: &[Vector]) -> Result<f64> {
        if seq.is_empty() {
            return Ok(0.0);
        }
        let xs = check_inputs("forward", seq, self.config.input_dim)?;
        Ok(self.trace(&xs).score)
    }

    /// Like [`forward`](Self::forward) but skips positions whose mask is false.
    pub fn forward_masked(&self, seq: &[Vector], mask: &[bool]) -> Result<f64> {
        if mask.len() != seq.len() {
            return Err(Error::shape("forward_masked", "mask", seq.len(), mask.len()));
        }
        let kept: Vec<Vector> = seq
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(x, _)| x.clone())
            .collect();
        self.forward(&kept)
    }

    /// The vector the head sees: final state, or the attended vector.
    pub fn representation(&self, seq: &[Vector]) -> Result<Vector> {
        if seq.is_empty() {
            return Err(Error::Empty("sequence"));
        }
        let xs = check_inputs("representation", seq, self.config.input_dim)?;
        Ok(Vector::from(self.trace(&xs).representation))
    }
}

/// Final state of a layer that does not return sequences: `h_n` for the
/// forward direction, and for the backward direction its state after
/// consuming the whole reversed sequence (position 1).
fn final_state(top: &LayerTrace) -> Vec<f64> {
    let f = top.forward.steps.last().expect("nonempty").h();
    match &top.backward {
        None => f.to_vec(),
        Some(b) => [f, b.steps.last().expect("nonempty").h()].concat(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from(x)
    }

    fn seq(n: usize, d: usize, seed: u64) -> Vec<Vector> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Vector::from((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())).collect()
    }

    #[test]
    fn sixteen_distinct_presets() {
        let all = Variant::all();
        assert_eq!(all.len(), 16);
        let mut names: Vec<_> = all.iter().map(Variant::name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 16);
        assert!(names.contains(&"stacked-lstm-attention".to_string()));
        for v in all {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!(matches!("cnn".parse::<Variant>(), Err(Error::UnknownPreset { .. })));
    }

    #[test]
    fn preset_widths_follow_halving_rule() {
        let flat: Variant = "gru".parse().unwrap();
        assert_eq!(flat.configuration(1.0), "(512)");
        let st: Variant = "stacked-lstm-attention".parse().unwrap();
        assert_eq!(st.configuration(1.0), "(256,256)");
        let c = st.config(200, 1.0);
        assert_eq!(c.layers.len(), 2);
        assert!(c.attention && c.layers.iter().all(|l| l.units == 256));
        let bi: Variant = "bidirectional-gru".parse().unwrap();
        assert_eq!(bi.configuration(1.0), "(256)");
        let bsa: Variant = "bidirectional-stacked-lstm-attention".parse().unwrap();
        assert_eq!(bsa.display_name(), "Bidirectional Stacked LSTM with Attention");
        let cfg = bsa.config(200, 1.0);
        assert_eq!(cfg.layers.iter().map(|l| l.units).collect::<Vec<_>>(), [128, 128]);
        assert_eq!(cfg.head_width(), 256);
        let m = RecurrentModel::zeros(cfg).unwrap();
        let head = m.params.tensors().into_iter().find(|t| t.name == "head.w").unwrap();
        assert_eq!(head.shape, (1, 256));
        let attn = m.params.attention.as_ref().unwrap();
        assert_eq!(attn.w_a.shape(), (256, 256));
        assert_eq!(bsa.configuration(1.0 / 16.0), "(8,8)");
    }

    #[test]
    fn config_validation() {
        let mut c = Variant {
            cell: CellKind::Gru,
            stacked: true,
            bidirectional: false,
            attention: false,
        }
        .config(3, 1.0 / 64.0);
        assert!(c.validate().is_ok());
        c.layers[0].return_sequences = false;
        assert!(c.validate().is_err());
        c.layers.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_head_scores_one_half() {
        for variant in Variant::all() {
            let mut m = RecurrentModel::new(variant.config(3, 4.0 / 512.0), 7).unwrap();
            m.params.head_w.iter_mut().for_each(|w| *w = 0.0);
            assert_eq!(m.forward(&seq(4, 3, 1)).unwrap(), 0.5, "{variant}");
        }
    }

    #[test]
    fn empty_sequence_scores_zero() {
        let m = RecurrentModel::new("lstm".parse::<Variant>().unwrap().config(3, 0.01), 1).unwrap();
        assert_eq!(m.forward(&[]).unwrap(), 0.0);
    }

    #[test]
    fn run_layer_base_case_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cell = CellParams::glorot(CellKind::Gru, 2, 3, &mut rng);
        let x = v(&[0.2, -0.4]);
        let out = run_layer(&[x.clone()], &cell, Direction::Forward).unwrap();
        let CellParams::Gru(p) = &cell else { unreachable!() };
        assert_eq!(out[0], gru_step(&x, &Vector::zeros(3), p).unwrap());
        assert!(matches!(run_layer(&[], &cell, Direction::Forward), Err(Error::Empty(_))));
    }

    #[test]
    fn backward_direction_is_reversed_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cell = CellParams::glorot(CellKind::Lstm, 2, 3, &mut rng);
        let xs = seq(2, 2, 4);
        let rev: Vec<Vector> = xs.iter().rev().cloned().collect();
        let fwd_rev = run_layer(&rev, &cell, Direction::Forward).unwrap();
        let bwd = run_layer(&xs, &cell, Direction::Backward).unwrap();
        assert_eq!(bwd[0], fwd_rev[1]);
        assert_eq!(bwd[1], fwd_rev[0]);
    }

    #[test]
    fn zero_params_give_zero_outputs() {
        let cell = CellParams::zeros(CellKind::Gru, 2, 3);
        let out = run_layer(&seq(3, 2, 1), &cell, Direction::Forward).unwrap();
        assert!(out.iter().all(|h| h.iter().all(|&x| x == 0.0)));
        let b = bidirectional(&seq(3, 2, 1), &cell, &CellParams::zeros(CellKind::Gru, 2, 3)).unwrap();
        assert!(b.iter().all(|h| h.len() == 6 && h.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn bidirectional_palindrome_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cell = CellParams::glorot(CellKind::Gru, 2, 3, &mut rng);
        let a = v(&[0.3, 0.1]);
        let b = v(&[-0.5, 0.8]);
        let pal = vec![a.clone(), b, a];
        let out = bidirectional(&pal, &cell, &cell).unwrap();
        let n = out.len();
        for k in 0..n {
            let (f, bw) = out[k].split_at(3);
            let (f2, bw2) = out[n - 1 - k].split_at(3);
            assert_eq!(f, bw2);
            assert_eq!(bw, f2);
        }
    }

    #[test]
    fn bidirectional_length_one_and_unit_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = CellParams::glorot(CellKind::Gru, 2, 3, &mut rng);
        let b = CellParams::glorot(CellKind::Gru, 2, 3, &mut rng);
        let x = v(&[1.0, -1.0]);
        let out = bidirectional(&[x.clone()], &f, &b).unwrap();
        let (CellParams::Gru(pf), CellParams::Gru(pb)) = (&f, &b) else { unreachable!() };
        let want = gru_step(&x, &Vector::zeros(3), pf).unwrap().concat(&gru_step(&x, &Vector::zeros(3), pb).unwrap());
        assert_eq!(out[0], want);
        let other = CellParams::zeros(CellKind::Gru, 2, 4);
        assert!(bidirectional(&[x], &f, &other).is_err());
    }

    #[test]
    fn masked_padding_does_not_change_score() {
        for variant in Variant::all() {
            let m = RecurrentModel::new(variant.config(3, 4.0 / 512.0), 3).unwrap();
            let xs = seq(5, 3, 8);
            let base = m.forward(&xs).unwrap();
            let mut padded = xs.clone();
            padded.extend(std::iter::repeat_n(Vector::zeros(3), 4));
            let mask: Vec<bool> = (0..padded.len()).map(|i| i < xs.len()).collect();
            let got = m.forward_masked(&padded, &mask).unwrap();
            assert!((got - base).abs() <= 1e-10, "{variant}");
        }
    }

    #[test]
    fn flat_roundtrip() {
        let m = RecurrentModel::new("bidirectional-stacked-gru-attention".parse::<Variant>().unwrap().config(3, 0.01), 5)
            .unwrap();
        let flat = m.params.flatten();
        let mut z = m.params.zeros_like();
        z.assign_flat(&flat).unwrap();
        assert_eq!(z, m.params);
        assert_eq!(flat.len(), m.params.param_count());
    }
}
