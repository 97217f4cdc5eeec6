use super::Scalar;
use crate::error::{Error, Result};

/// Dense 2-D kernel `[out × in × kh × kw]` with per-output bias and
/// resolution-preserving zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<T> {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvKernel<T> {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kh: usize,
        kw: usize,
        weights: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        if kh.is_multiple_of(2) || kw.is_multiple_of(2) {
            return Err(Error::invalid("kernel sizes must be odd"));
        }
        if weights.len() != out_channels * in_channels * kh * kw || bias.len() != out_channels {
            return Err(Error::Shape("kernel weight/bias length".into()));
        }
        Ok(ConvKernel {
            out_channels,
            in_channels,
            kh,
            kw,
            weights,
            bias,
        })
    }

    pub fn padding(&self) -> (usize, usize) {
        ((self.kh - 1) / 2, (self.kw - 1) / 2)
    }
}

/// Unfolds `input` (`[c × h × w]`) into patch columns `[c·kh·kw × h·w]`,
/// zero outside the image.
pub fn im2col<T: Scalar>(input: &[T], c: usize, h: usize, w: usize, kh: usize, kw: usize) -> Vec<T> {
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let hw = h * w;
    let mut cols = vec![T::ZERO; c * kh * kw * hw];
    for ch in 0..c {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for m in 0..kh {
            for n in 0..kw {
                let row = &mut cols[((ch * kh + m) * kw + n) * hw..][..hw];
                for i in 0..h {
                    let si = i as isize + m as isize - ph as isize;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let src = &plane[si as usize * w..][..w];
                    let dst = &mut row[i * w..][..w];
                    let shift = n as isize - pw as isize;
                    let (j0, j1) = ((-shift).max(0) as usize, (w as isize - shift).min(w as isize) as usize);
                    for j in j0..j1 {
                        dst[j] = src[(j as isize + shift) as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates column gradients into `out`.
pub fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, kh: usize, kw: usize, out: &mut [T]) {
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut out[ch * hw..(ch + 1) * hw];
        for m in 0..kh {
            for n in 0..kw {
                let row = &cols[((ch * kh + m) * kw + n) * hw..][..hw];
                for i in 0..h {
                    let si = i as isize + m as isize - ph as isize;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[si as usize * w..][..w];
                    let src = &row[i * w..][..w];
                    let shift = n as isize - pw as isize;
                    let (j0, j1) = ((-shift).max(0) as usize, (w as isize - shift).min(w as isize) as usize);
                    for j in j0..j1 {
                        dst[(j as isize + shift) as usize] += src[j];
                    }
                }
            }
        }
    }
}

/// `out ← W·cols + bias` with `W` as `[rows × k]` and cols as `[k × hw]`.
pub(crate) fn matmul_bias<T: Scalar>(w: &[T], bias: &[T], cols: &[T], rows: usize, k: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; rows * hw];
    for (r, b) in bias.iter().enumerate() {
        out[r * hw..(r + 1) * hw].fill(*b);
    }
    T::gemm(rows, k, hw, T::ONE, w, k as isize, 1, cols, hw as isize, 1, T::ONE, &mut out, hw as isize, 1);
    out
}

/// Same-padded cross-correlation of `input` (`[in × h × w]`).
pub fn conv2d<T: Scalar>(input: &[T], h: usize, w: usize, kernel: &ConvKernel<T>) -> Result<Vec<T>> {
    if input.len() != kernel.in_channels * h * w {
        return Err(Error::Shape(format!(
            "conv2d input has {} values, kernel expects {} channels of {h}x{w}",
            input.len(),
            kernel.in_channels
        )));
    }
    let k = kernel.in_channels * kernel.kh * kernel.kw;
    let out = if kernel.kh == 1 && kernel.kw == 1 {
        matmul_bias(&kernel.weights, &kernel.bias, input, kernel.out_channels, k, h * w)
    } else {
        let cols = im2col(input, kernel.in_channels, h, w, kernel.kh, kernel.kw);
        matmul_bias(&kernel.weights, &kernel.bias, &cols, kernel.out_channels, k, h * w)
    };
    Ok(out)
}
