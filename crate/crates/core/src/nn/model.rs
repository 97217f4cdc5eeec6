use rand::{Rng, RngCore};

use super::cell::{cell_backward, cell_step_cached, CellCache, CellState, ConvLstmCellParams, GATE_NAMES};
use super::conv::matmul_bias;
use super::{NetworkConfig, Scalar};
use crate::error::{Error, Result};

pub type LayerParams<T> = ConvLstmCellParams<T>;

/// All trainable tensors: one fused ConvLSTM cell per layer plus the
/// 1×1 decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub layers: Vec<LayerParams<T>>,
    /// `[out_channels × last_hidden]`.
    pub dec_weight: Vec<T>,
    pub dec_bias: Vec<T>,
}

/// Gradients share the parameter layout.
pub type Gradients<T> = Params<T>;

impl<T: Scalar> Params<T> {
    pub fn zeros(config: &NetworkConfig) -> Self {
        let (kh, kw) = config.kernel;
        let mut layers = Vec::with_capacity(config.hidden_dims.len());
        let mut cin = config.input_channels;
        for &d in &config.hidden_dims {
            layers.push(LayerParams::zeros(cin, d, kh, kw));
            cin = d;
        }
        Params {
            layers,
            dec_weight: vec![T::ZERO; config.output_channels * cin],
            dec_bias: vec![T::ZERO; config.output_channels],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Params {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams::zeros(l.in_channels, l.hidden, l.kh, l.kw))
                .collect(),
            dec_weight: vec![T::ZERO; self.dec_weight.len()],
            dec_bias: vec![T::ZERO; self.dec_bias.len()],
        }
    }

    /// Flat buffers in a fixed order (layer weight, layer bias, ..., decoder).
    pub fn buffers(&self) -> Vec<&[T]> {
        let mut v: Vec<&[T]> = Vec::with_capacity(2 * self.layers.len() + 2);
        for l in &self.layers {
            v.push(&l.weight);
            v.push(&l.bias);
        }
        v.push(&self.dec_weight);
        v.push(&self.dec_bias);
        v
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [T]> {
        let mut v: Vec<&mut [T]> = Vec::with_capacity(2 * self.layers.len() + 2);
        for l in &mut self.layers {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        v.push(&mut self.dec_weight);
        v.push(&mut self.dec_bias);
        v
    }

    pub fn len(&self) -> usize {
        self.buffers().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.buffers_mut().into_iter().zip(other.buffers()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
        }
    }

    pub fn scale(&mut self, s: T) {
        for b in self.buffers_mut() {
            b.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.buffers().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64(x.to_f64())).collect::<Vec<U>>();
        Params {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLstmCellParams {
                    in_channels: l.in_channels,
                    hidden: l.hidden,
                    kh: l.kh,
                    kw: l.kw,
                    weight: conv(&l.weight),
                    bias: conv(&l.bias),
                })
                .collect(),
            dec_weight: conv(&self.dec_weight),
            dec_bias: conv(&self.dec_bias),
        }
    }

    /// Named tensors with their logical dims, sorted by name. Gate kernels
    /// are reported separately (`layer{l}.w_f`, `layer{l}.b_f`, ...).
    pub fn named(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out = Vec::new();
        for (li, l) in self.layers.iter().enumerate() {
            for (g, name) in GATE_NAMES.iter().enumerate() {
                out.push((
                    format!("layer{li}.w_{name}"),
                    vec![l.hidden, l.in_channels + l.hidden, l.kh, l.kw],
                    l.gate_weight(g),
                ));
                out.push((format!("layer{li}.b_{name}"), vec![l.hidden], l.gate_bias(g)));
            }
        }
        let last = self.layers.last().map(|l| l.hidden).unwrap_or(0);
        out.push((
            "decoder.weight".into(),
            vec![self.dec_bias.len(), last, 1, 1],
            &self.dec_weight[..],
        ));
        out.push(("decoder.bias".into(), vec![self.dec_bias.len()], &self.dec_bias[..]));
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Mutable slot for a name produced by [`Params::named`].
    pub fn named_mut(&mut self, name: &str) -> Option<&mut [T]> {
        if name == "decoder.weight" {
            return Some(&mut self.dec_weight);
        }
        if name == "decoder.bias" {
            return Some(&mut self.dec_bias);
        }
        let rest = name.strip_prefix("layer")?;
        let (idx, tail) = rest.split_once('.')?;
        let layer = self.layers.get_mut(idx.parse::<usize>().ok()?)?;
        let (kind, gate) = tail.split_once('_')?;
        let g = GATE_NAMES.iter().position(|n| *n == gate)?;
        match kind {
            "w" => Some(layer.gate_weight_mut(g)),
            "b" => Some(layer.gate_bias_mut(g)),
            _ => None,
        }
    }
}

/// Network configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: NetworkConfig,
    pub params: Params<T>,
}

/// Everything one recorded step needs for backpropagation.
#[derive(Debug, Clone)]
struct StepRecord<T> {
    feedback: Option<usize>,
    layers: Vec<CellCache<T>>,
    /// Inverted-dropout multipliers applied to the hidden grid passed from
    /// layer `l` to `l + 1`.
    masks: Vec<Option<Vec<T>>>,
    h_last: Vec<T>,
    out: Vec<T>,
}

/// Recording of a sequence of forward steps starting from zero state.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    height: usize,
    width: usize,
    states: Vec<CellState<T>>,
    steps: Vec<StepRecord<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn states(&self) -> &[CellState<T>] {
        &self.states
    }

    /// Output of recorded step `i`.
    pub fn output(&self, i: usize) -> &[T] {
        &self.steps[i].out
    }
}

struct StepOutput<T> {
    out: Vec<T>,
    states: Vec<CellState<T>>,
    record: Option<StepRecord<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let params = Params::zeros(&config);
        Ok(Model { config, params })
    }

    /// Glorot-uniform gate and decoder weights, zero biases except the
    /// forget gate at 1.
    pub fn init(config: NetworkConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        for l in &mut model.params.layers {
            let fan_in = (l.in_channels + l.hidden) * l.kh * l.kw;
            let fan_out = l.hidden * l.kh * l.kw;
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            l.weight
                .iter_mut()
                .for_each(|w| *w = T::from_f64(rng.gen_range(-bound..bound)));
            l.gate_bias_mut(0).fill(T::ONE);
        }
        let last = model.params.layers.last().unwrap().hidden;
        let out = model.config.output_channels;
        let bound = (6.0 / (last + out) as f64).sqrt();
        model
            .params
            .dec_weight
            .iter_mut()
            .for_each(|w| *w = T::from_f64(rng.gen_range(-bound..bound)));
        Ok(model)
    }

    pub fn zero_states(&self, height: usize, width: usize) -> Vec<CellState<T>> {
        self.config
            .hidden_dims
            .iter()
            .map(|&d| CellState::zeros(d, height, width))
            .collect()
    }

    fn step_impl(
        &self,
        frame: &[T],
        height: usize,
        width: usize,
        states: &[CellState<T>],
        mut dropout: Option<&mut dyn RngCore>,
        record: bool,
    ) -> Result<StepOutput<T>> {
        let hw = height * width;
        if frame.len() != self.config.input_channels * hw {
            return Err(Error::Shape(format!(
                "frame has {} values, expected {} channels of {height}x{width}",
                frame.len(),
                self.config.input_channels
            )));
        }
        if states.len() != self.params.layers.len() {
            return Err(Error::Shape(format!(
                "{} states for {} layers",
                states.len(),
                self.params.layers.len()
            )));
        }
        let p = self.config.dropout_p;
        let n_layers = self.params.layers.len();
        let mut new_states = Vec::with_capacity(n_layers);
        let mut caches = Vec::with_capacity(if record { n_layers } else { 0 });
        let mut masks = Vec::with_capacity(n_layers.saturating_sub(1));
        let mut input: Vec<T> = frame.to_vec();
        for (l, (lp, st)) in self.params.layers.iter().zip(states).enumerate() {
            if st.height != height || st.width != width {
                return Err(Error::Shape("state grid differs from frame grid".into()));
            }
            let (ns, cache) = cell_step_cached(&input, st, lp)?;
            if l + 1 < n_layers {
                input = ns.h.clone();
                let mask = match dropout.as_deref_mut() {
                    Some(rng) if p > 0.0 => {
                        let keep = T::from_f64(1.0 / (1.0 - p));
                        let m: Vec<T> = (0..input.len())
                            .map(|_| if rng.gen::<f64>() < p { T::ZERO } else { keep })
                            .collect();
                        input.iter_mut().zip(&m).for_each(|(x, k)| *x *= *k);
                        Some(m)
                    }
                    _ => None,
                };
                masks.push(mask);
            }
            if record {
                caches.push(cache);
            }
            new_states.push(ns);
        }

        let last = new_states.last().unwrap();
        let oc = self.config.output_channels;
        let mut out = matmul_bias(&self.params.dec_weight, &self.params.dec_bias, &last.h, oc, last.hidden, hw);
        out.iter_mut().for_each(|v| *v = v.sigmoid());

        let record = record.then(|| StepRecord {
            feedback: None,
            layers: caches,
            masks,
            h_last: last.h.clone(),
            out: out.clone(),
        });
        Ok(StepOutput {
            out,
            states: new_states,
            record,
        })
    }

    /// Runs the stack on one input frame. `dropout` enables inter-layer
    /// dropout (training only).
    pub fn forward_step(
        &self,
        frame: &[T],
        height: usize,
        width: usize,
        states: &[CellState<T>],
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<(Vec<T>, Vec<CellState<T>>)> {
        let s = self.step_impl(frame, height, width, states, dropout, false)?;
        Ok((s.out, s.states))
    }

    /// Starts a recording from zero state.
    pub fn tape(&self, height: usize, width: usize) -> Tape<T> {
        Tape {
            height,
            width,
            states: self.zero_states(height, width),
            steps: Vec::new(),
        }
    }

    /// Forward step that is appended to `tape`. `feedback` names the earlier
    /// step whose output fills the leading `output_channels` of `frame`, so
    /// gradients flow back through the autoregressive loop.
    pub fn record_step(
        &self,
        tape: &mut Tape<T>,
        frame: &[T],
        feedback: Option<usize>,
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<Vec<T>> {
        if let Some(f) = feedback {
            if f >= tape.steps.len() {
                return Err(Error::invalid(format!(
                    "feedback from step {f}, only {} recorded",
                    tape.steps.len()
                )));
            }
        }
        let s = self.step_impl(frame, tape.height, tape.width, &tape.states, dropout, true)?;
        let mut rec = s.record.unwrap();
        rec.feedback = feedback;
        tape.states = s.states;
        tape.steps.push(rec);
        Ok(s.out)
    }

    /// Reverse-mode gradients of a scalar loss whose derivative w.r.t. the
    /// output of recorded step `i` is `out_grads[i]` (`None` = no direct
    /// dependence).
    pub fn backward(&self, tape: &Tape<T>, out_grads: &[Option<Vec<T>>]) -> Result<Gradients<T>> {
        if tape.steps.is_empty() {
            return Err(Error::NoRecordedForward);
        }
        if out_grads.len() != tape.steps.len() {
            return Err(Error::LengthMismatch {
                what: "output gradients",
                expected: tape.steps.len(),
                found: out_grads.len(),
            });
        }
        let (height, width) = (tape.height, tape.width);
        let hw = height * width;
        let oc = self.config.output_channels;
        let n_layers = self.params.layers.len();
        let last_d = self.params.layers[n_layers - 1].hidden;

        let mut grads = self.params.zeros_like();
        let mut d_out: Vec<Vec<T>> = out_grads
            .iter()
            .map(|g| match g {
                Some(v) => v.clone(),
                None => vec![T::ZERO; oc * hw],
            })
            .collect();
        if d_out.iter().any(|g| g.len() != oc * hw) {
            return Err(Error::Shape("output gradient size".into()));
        }
        let mut dh_next: Vec<Vec<T>> = self.params.layers.iter().map(|l| vec![T::ZERO; l.hidden * hw]).collect();
        let mut dc_next = dh_next.clone();

        for t in (0..tape.steps.len()).rev() {
            let rec = &tape.steps[t];
            // decoder: out = σ(Wd·H + bd)
            let dpre: Vec<T> = d_out[t]
                .iter()
                .zip(&rec.out)
                .map(|(g, o)| *g * *o * (T::ONE - *o))
                .collect();
            for r in 0..oc {
                let mut s = T::ZERO;
                for v in &dpre[r * hw..(r + 1) * hw] {
                    s += *v;
                }
                grads.dec_bias[r] += s;
            }
            T::gemm(oc, hw, last_d, T::ONE, &dpre, hw as isize, 1, &rec.h_last, 1, hw as isize, T::ONE, &mut grads.dec_weight, last_d as isize, 1);
            let mut dh_above = vec![T::ZERO; last_d * hw];
            T::gemm(last_d, oc, hw, T::ONE, &self.params.dec_weight, 1, last_d as isize, &dpre, hw as isize, 1, T::ZERO, &mut dh_above, hw as isize, 1);

            for l in (0..n_layers).rev() {
                let lp = &self.params.layers[l];
                let mut dh = dh_above;
                dh.iter_mut().zip(&dh_next[l]).for_each(|(a, b)| *a += *b);
                let (dz, dc_prev) = cell_backward(lp, &rec.layers[l], height, width, &dh, &dc_next[l], &mut grads.layers[l]);
                let split = lp.in_channels * hw;
                dh_next[l] = dz[split..].to_vec();
                dc_next[l] = dc_prev;
                let mut dx = dz;
                dx.truncate(split);
                if l > 0 {
                    if let Some(mask) = &rec.masks[l - 1] {
                        dx.iter_mut().zip(mask).for_each(|(a, m)| *a *= *m);
                    }
                    dh_above = dx;
                } else {
                    if let Some(src) = rec.feedback {
                        d_out[src]
                            .iter_mut()
                            .zip(&dx[..oc * hw])
                            .for_each(|(a, b)| *a += *b);
                    }
                    dh_above = Vec::new();
                }
            }
        }
        Ok(grads)
    }
}
