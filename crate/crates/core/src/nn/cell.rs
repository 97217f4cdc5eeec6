use super::conv::{col2im, im2col, matmul_bias, ConvKernel};
use super::Scalar;
use crate::error::{Error, Result};

/// Gate order inside the fused weight matrix.
pub const GATE_NAMES: [&str; 4] = ["f", "i", "c", "o"];

/// The four gate kernels of one ConvLSTM cell, stored fused as one
/// `[4D × (C + D)·kh·kw]` matrix in forget/input/candidate/output order.
/// Each gate reads the channel concatenation `[x, H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmCellParams<T> {
    pub in_channels: usize,
    pub hidden: usize,
    pub kh: usize,
    pub kw: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvLstmCellParams<T> {
    pub fn zeros(in_channels: usize, hidden: usize, kh: usize, kw: usize) -> Self {
        ConvLstmCellParams {
            in_channels,
            hidden,
            kh,
            kw,
            weight: vec![T::ZERO; 4 * hidden * (in_channels + hidden) * kh * kw],
            bias: vec![T::ZERO; 4 * hidden],
        }
    }

    /// Width of one gate's weight block row (`(C + D)·kh·kw`).
    pub fn fan_in(&self) -> usize {
        (self.in_channels + self.hidden) * self.kh * self.kw
    }

    pub fn gate_weight(&self, gate: usize) -> &[T] {
        let n = self.hidden * self.fan_in();
        &self.weight[gate * n..(gate + 1) * n]
    }

    pub fn gate_weight_mut(&mut self, gate: usize) -> &mut [T] {
        let n = self.hidden * self.fan_in();
        &mut self.weight[gate * n..(gate + 1) * n]
    }

    pub fn gate_bias(&self, gate: usize) -> &[T] {
        &self.bias[gate * self.hidden..(gate + 1) * self.hidden]
    }

    pub fn gate_bias_mut(&mut self, gate: usize) -> &mut [T] {
        &mut self.bias[gate * self.hidden..(gate + 1) * self.hidden]
    }

    /// Standalone kernel for one gate.
    pub fn gate_kernel(&self, gate: usize) -> ConvKernel<T> {
        ConvKernel {
            out_channels: self.hidden,
            in_channels: self.in_channels + self.hidden,
            kh: self.kh,
            kw: self.kw,
            weights: self.gate_weight(gate).to_vec(),
            bias: self.gate_bias(gate).to_vec(),
        }
    }
}

/// Hidden and cell grids, `[D × h × w]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState<T> {
    pub hidden: usize,
    pub height: usize,
    pub width: usize,
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> CellState<T> {
    pub fn zeros(hidden: usize, height: usize, width: usize) -> Self {
        let n = hidden * height * width;
        CellState {
            hidden,
            height,
            width,
            h: vec![T::ZERO; n],
            c: vec![T::ZERO; n],
        }
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct CellCache<T> {
    /// `[x, H_prev]` channel concatenation.
    pub z: Vec<T>,
    /// Post-activation gates `F, I, C̃, O`, each `[D × h × w]`.
    pub gates: Vec<T>,
    pub c_prev: Vec<T>,
    pub tanh_c: Vec<T>,
}

fn check_shapes<T: Scalar>(x: &[T], state: &CellState<T>, p: &ConvLstmCellParams<T>) -> Result<()> {
    let hw = state.height * state.width;
    if state.hidden != p.hidden || state.h.len() != p.hidden * hw || state.c.len() != p.hidden * hw {
        return Err(Error::Shape(format!(
            "state has {} hidden channels, cell expects {}",
            state.hidden, p.hidden
        )));
    }
    if x.len() != p.in_channels * hw {
        return Err(Error::Shape(format!(
            "cell input has {} values, expected {} channels of {}x{}",
            x.len(),
            p.in_channels,
            state.height,
            state.width
        )));
    }
    Ok(())
}

/// One ConvLSTM update.
pub fn cell_step<T: Scalar>(x: &[T], state: &CellState<T>, params: &ConvLstmCellParams<T>) -> Result<CellState<T>> {
    cell_step_cached(x, state, params).map(|(s, _)| s)
}

/// [`cell_step`] that also returns the activations needed for gradients.
pub fn cell_step_cached<T: Scalar>(
    x: &[T],
    state: &CellState<T>,
    params: &ConvLstmCellParams<T>,
) -> Result<(CellState<T>, CellCache<T>)> {
    check_shapes(x, state, params)?;
    let (height, width, d) = (state.height, state.width, params.hidden);
    let hw = height * width;
    let n = d * hw;

    let mut z = Vec::with_capacity(x.len() + state.h.len());
    z.extend_from_slice(x);
    z.extend_from_slice(&state.h);
    let cin = params.in_channels + d;
    let mut gates = if params.kh == 1 && params.kw == 1 {
        matmul_bias(&params.weight, &params.bias, &z, 4 * d, cin, hw)
    } else {
        let cols = im2col(&z, cin, height, width, params.kh, params.kw);
        matmul_bias(&params.weight, &params.bias, &cols, 4 * d, params.fan_in(), hw)
    };

    let (fi, rest) = gates.split_at_mut(2 * n);
    fi.iter_mut().for_each(|v| *v = v.sigmoid());
    let (cand, o) = rest.split_at_mut(n);
    cand.iter_mut().for_each(|v| *v = v.tanh());
    o.iter_mut().for_each(|v| *v = v.sigmoid());

    let mut c_new = vec![T::ZERO; n];
    let mut tanh_c = vec![T::ZERO; n];
    let mut h_new = vec![T::ZERO; n];
    for e in 0..n {
        let (f, i, g, o) = (gates[e], gates[n + e], gates[2 * n + e], gates[3 * n + e]);
        let c = f * state.c[e] + i * g;
        let tc = c.tanh();
        c_new[e] = c;
        tanh_c[e] = tc;
        h_new[e] = o * tc;
    }
    debug_assert!(h_new.iter().all(|v| v.is_finite() && *v >= -T::ONE && *v <= T::ONE));

    Ok((
        CellState {
            hidden: d,
            height,
            width,
            h: h_new,
            c: c_new,
        },
        CellCache {
            z,
            gates,
            c_prev: state.c.clone(),
            tanh_c,
        },
    ))
}

/// Backward through one cell step.
///
/// `dh`/`dc` are the loss gradients w.r.t. the step's outputs `H'`/`C'`.
/// Accumulates parameter gradients into `grad` and returns
/// `(d[x, H_prev], dC_prev)`.
pub(crate) fn cell_backward<T: Scalar>(
    params: &ConvLstmCellParams<T>,
    cache: &CellCache<T>,
    height: usize,
    width: usize,
    dh: &[T],
    dc: &[T],
    grad: &mut ConvLstmCellParams<T>,
) -> (Vec<T>, Vec<T>) {
    let d = params.hidden;
    let hw = height * width;
    let n = d * hw;
    let g = &cache.gates;

    // pre-activation gate gradients in fused order
    let mut dgate = vec![T::ZERO; 4 * n];
    let mut dc_prev = vec![T::ZERO; n];
    for e in 0..n {
        let (f, i, cand, o) = (g[e], g[n + e], g[2 * n + e], g[3 * n + e]);
        let tc = cache.tanh_c[e];
        let do_ = dh[e] * tc;
        let dct = dc[e] + dh[e] * o * (T::ONE - tc * tc);
        let df = dct * cache.c_prev[e];
        let di = dct * cand;
        let dcand = dct * i;
        dc_prev[e] = dct * f;
        dgate[e] = df * f * (T::ONE - f);
        dgate[n + e] = di * i * (T::ONE - i);
        dgate[2 * n + e] = dcand * (T::ONE - cand * cand);
        dgate[3 * n + e] = do_ * o * (T::ONE - o);
    }

    for r in 0..4 * d {
        let mut s = T::ZERO;
        for v in &dgate[r * hw..(r + 1) * hw] {
            s += *v;
        }
        grad.bias[r] += s;
    }

    let cin = params.in_channels + d;
    let one_by_one = params.kh == 1 && params.kw == 1;
    let k = params.fan_in();
    let cols_owned;
    let cols: &[T] = if one_by_one {
        &cache.z
    } else {
        cols_owned = im2col(&cache.z, cin, height, width, params.kh, params.kw);
        &cols_owned
    };
    // dW += dG · colsᵀ
    T::gemm(4 * d, hw, k, T::ONE, &dgate, hw as isize, 1, cols, 1, hw as isize, T::ONE, &mut grad.weight, k as isize, 1);
    // dcols = Wᵀ · dG
    let mut dcols = vec![T::ZERO; k * hw];
    T::gemm(k, 4 * d, hw, T::ONE, &params.weight, 1, k as isize, &dgate, hw as isize, 1, T::ZERO, &mut dcols, hw as isize, 1);
    let dz = if one_by_one {
        dcols
    } else {
        let mut dz = vec![T::ZERO; cin * hw];
        col2im(&dcols, cin, height, width, params.kh, params.kw, &mut dz);
        dz
    };
    (dz, dc_prev)
}
