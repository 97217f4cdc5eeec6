//! Context warmup and autoregressive rollout.
//!
//! At rollout step `t` the network sees `[Ŷ_{t-1}, windx_t, windy_t, depth]`.
//! `Ŷ_0` is the RGB part of the last context frame. With teacher forcing the
//! true previous frame replaces the prediction at a per-step probability.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clips::{Clip, CONTEXT_LEN, HORIZON};
use crate::encode::{ChannelFrame, Planes, RGB_CHANNELS};
use crate::error::{Error, Result};
use crate::nn::{CellState, Model, Scalar, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub horizon: usize,
    pub teacher_forcing_p: f64,
    pub rng_seed: u64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            horizon: HORIZON,
            teacher_forcing_p: 0.0,
            rng_seed: 0,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing_p) {
            return Err(Error::invalid("teacher_forcing_p outside [0, 1]"));
        }
        Ok(())
    }
}

/// Which rollout steps consume ground truth instead of the previous
/// prediction. Step 0 always reads `Ŷ_0` and is never substituted.
pub fn substitution_pattern(horizon: usize, p: f64, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pattern = vec![false; horizon];
    if p > 0.0 {
        for slot in pattern.iter_mut().skip(1) {
            *slot = rng.gen::<f64>() < p;
        }
    }
    pattern
}

fn to_scalar<T: Scalar>(v: &[f32]) -> Vec<T> {
    v.iter().map(|&x| T::from_f32(x)).collect()
}

/// `[prev_rgb, wind, bathymetry]` along channels.
pub fn assemble_input<T: Scalar>(prev_rgb: &[T], wind: &Planes, bathymetry: &Planes) -> Vec<T> {
    let mut x = Vec::with_capacity(prev_rgb.len() + wind.data.len() + bathymetry.data.len());
    x.extend_from_slice(prev_rgb);
    x.extend(wind.data.iter().map(|&v| T::from_f32(v)));
    x.extend(bathymetry.data.iter().map(|&v| T::from_f32(v)));
    x
}

/// One network step, either plain or recorded.
trait Stepper<T> {
    fn step(&mut self, input: &[T], feedback: Option<usize>) -> Result<Vec<T>>;
}

struct Plain<'m, T> {
    model: &'m Model<T>,
    height: usize,
    width: usize,
    states: Vec<CellState<T>>,
}

impl<T: Scalar> Stepper<T> for Plain<'_, T> {
    fn step(&mut self, input: &[T], _feedback: Option<usize>) -> Result<Vec<T>> {
        let (out, states) = self
            .model
            .forward_step(input, self.height, self.width, &self.states, None)?;
        self.states = states;
        Ok(out)
    }
}

struct Recorder<'a, 'r, T> {
    model: &'a Model<T>,
    tape: &'a mut Tape<T>,
    dropout: Option<&'r mut dyn RngCore>,
    /// Tape index of rollout step 0.
    offset: usize,
}

impl<T: Scalar> Stepper<T> for Recorder<'_, '_, T> {
    fn step(&mut self, input: &[T], feedback: Option<usize>) -> Result<Vec<T>> {
        let fb = feedback.map(|t| self.offset + t);
        let rng = self.dropout.as_mut().map(|r| &mut **r as &mut dyn RngCore);
        self.model.record_step(self.tape, input, fb, rng)
    }
}

fn warmup_with<T: Scalar>(stepper: &mut impl Stepper<T>, context: &[ChannelFrame]) -> Result<Vec<T>> {
    if context.len() != CONTEXT_LEN {
        return Err(Error::Shape(format!(
            "context has {} frames, expected {CONTEXT_LEN}",
            context.len()
        )));
    }
    for frame in context {
        stepper.step(&to_scalar(&frame.data), None)?;
    }
    Ok(to_scalar(&context[CONTEXT_LEN - 1].rgb().data))
}

fn rollout_with<T: Scalar>(
    stepper: &mut impl Stepper<T>,
    y0: Vec<T>,
    future_wind: &[Planes],
    bathymetry: &Planes,
    pattern: &[bool],
    targets: Option<&[Planes]>,
) -> Result<Vec<Vec<T>>> {
    let horizon = pattern.len();
    if future_wind.len() != horizon {
        return Err(Error::LengthMismatch {
            what: "future wind",
            expected: horizon,
            found: future_wind.len(),
        });
    }
    let mut preds: Vec<Vec<T>> = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let (prev, feedback) = if t == 0 {
            (y0.clone(), None)
        } else if pattern[t] {
            let truth = targets.ok_or_else(|| Error::invalid("teacher forcing needs targets"))?;
            (to_scalar(&truth[t - 1].data), None)
        } else {
            (preds[t - 1].clone(), Some(t - 1))
        };
        let x = assemble_input(&prev, &future_wind[t], bathymetry);
        preds.push(stepper.step(&x, feedback)?);
    }
    Ok(preds)
}

fn check_targets(cfg: &RolloutConfig, targets: Option<&[Planes]>) -> Result<()> {
    cfg.validate()?;
    match targets {
        None if cfg.teacher_forcing_p > 0.0 => Err(Error::invalid(
            "teacher forcing requested without targets",
        )),
        Some(t) if t.len() < cfg.horizon => Err(Error::LengthMismatch {
            what: "targets",
            expected: cfg.horizon,
            found: t.len(),
        }),
        _ => Ok(()),
    }
}

/// Runs the six context frames through the network from zero state.
/// Returns the states and `Ŷ_0`.
pub fn warmup<T: Scalar>(model: &Model<T>, context: &[ChannelFrame]) -> Result<(Vec<CellState<T>>, Vec<T>)> {
    let first = context
        .first()
        .ok_or_else(|| Error::Shape("empty context".into()))?;
    let mut stepper = Plain {
        model,
        height: first.height,
        width: first.width,
        states: model.zero_states(first.height, first.width),
    };
    let y0 = warmup_with(&mut stepper, context)?;
    Ok((stepper.states, y0))
}

/// Autoregressive rollout from warmed-up `states`. Dropout is always off.
pub fn rollout<T: Scalar>(
    model: &Model<T>,
    states: Vec<CellState<T>>,
    y0: Vec<T>,
    future_wind: &[Planes],
    bathymetry: &Planes,
    cfg: &RolloutConfig,
    targets: Option<&[Planes]>,
) -> Result<Vec<Vec<T>>> {
    check_targets(cfg, targets)?;
    let pattern = substitution_pattern(cfg.horizon, cfg.teacher_forcing_p, cfg.rng_seed);
    let mut stepper = Plain {
        model,
        height: bathymetry.height,
        width: bathymetry.width,
        states,
    };
    rollout_with(&mut stepper, y0, future_wind, bathymetry, &pattern, targets)
}

/// Pure (no teacher forcing) forecast for a clip, as RGB planes.
pub fn forecast_clip(model: &Model<f32>, clip: &Clip) -> Result<Vec<Planes>> {
    let (states, y0) = warmup(model, &clip.context)?;
    let cfg = RolloutConfig::default();
    let preds = rollout(model, states, y0, &clip.future_wind, &clip.bathymetry, &cfg, None)?;
    preds
        .into_iter()
        .map(|p| Planes::new(RGB_CHANNELS, clip.height(), clip.width(), p))
        .collect()
}

/// Persistence baseline: the last context frame repeated.
pub fn persistence(clip: &Clip) -> Vec<Planes> {
    let last = clip.context[CONTEXT_LEN - 1].rgb();
    vec![last; clip.target.len()]
}

/// A recorded warmup + rollout over one clip, ready for backpropagation.
pub struct ClipRecording<T> {
    pub tape: Tape<T>,
    /// Tape index of each rollout prediction.
    pub prediction_steps: Vec<usize>,
    pub predictions: Vec<Vec<T>>,
}

/// Records warmup and rollout on a fresh tape. Teacher forcing follows
/// `cfg`; `dropout` enables training-time dropout.
pub fn record_clip<T: Scalar>(
    model: &Model<T>,
    clip: &Clip,
    cfg: &RolloutConfig,
    dropout: Option<&mut dyn RngCore>,
) -> Result<ClipRecording<T>> {
    check_targets(cfg, Some(&clip.target))?;
    let pattern = substitution_pattern(cfg.horizon, cfg.teacher_forcing_p, cfg.rng_seed);
    let mut tape = model.tape(clip.height(), clip.width());
    let mut rec = Recorder {
        model,
        tape: &mut tape,
        dropout,
        offset: CONTEXT_LEN,
    };
    let y0 = warmup_with(&mut rec, &clip.context)?;
    let predictions = rollout_with(
        &mut rec,
        y0,
        &clip.future_wind[..cfg.horizon],
        &clip.bathymetry,
        &pattern,
        Some(&clip.target),
    )?;
    Ok(ClipRecording {
        tape,
        prediction_steps: (CONTEXT_LEN..CONTEXT_LEN + cfg.horizon).collect(),
        predictions,
    })
}
