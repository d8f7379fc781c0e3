use super::{Kernel, Tensor, TensorError};

/// Largest `f64` strictly below one.
const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

/// Zero-padded "same" 2-D convolution (cross-correlation) with per-channel bias.
///
/// Evaluated as an im2col matrix product: each output pixel is one row of
/// gathered `kh×kw×in` taps multiplied by the `[kh·kw·in, out]` weight matrix.
pub fn conv2d(input: &Tensor, kernel: &Kernel) -> Result<Tensor, TensorError> {
    check_conv(input, kernel)?;
    let (h, w) = (input.height(), input.width());
    let co = kernel.out_channels();
    let taps = kernel.kh() * kernel.kw() * kernel.in_channels();
    let cols = im2col(input, kernel.kh(), kernel.kw());
    let mut out = Tensor::zeros(h, w, co);
    let dst = out.data_mut();
    for row in dst.chunks_exact_mut(co) {
        row.copy_from_slice(kernel.bias());
    }
    let pixels = h * w;
    // SAFETY: every slice covers exactly the `rows×cols` extents and strides passed.
    unsafe {
        matrixmultiply::dgemm(
            pixels,
            taps,
            co,
            1.0,
            cols.as_ptr(),
            taps as isize,
            1,
            kernel.weights().as_ptr(),
            co as isize,
            1,
            1.0,
            dst.as_mut_ptr(),
            co as isize,
            1,
        );
    }
    out.finite("conv2d")
}

/// Gradients of a convolution with respect to its input and its kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Kernel,
}

/// Reverse pass of [`conv2d`] given the upstream gradient `grad_out`.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Kernel,
    grad_out: &Tensor,
) -> Result<ConvGrads, TensorError> {
    check_conv(input, kernel)?;
    let (h, w) = (input.height(), input.width());
    let (kh, kw, co) = (kernel.kh(), kernel.kw(), kernel.out_channels());
    grad_out.expect_shape(super::Shape::new(h, w, co))?;
    let taps = kh * kw * kernel.in_channels();
    let pixels = h * w;
    let g = grad_out.data();
    let cols = im2col(input, kh, kw);

    let mut grad_kernel = kernel.zeros_like();
    for row in g.chunks_exact(co) {
        for (b, &u) in grad_kernel.bias.iter_mut().zip(row) {
            *b += u;
        }
    }
    let mut grad_cols = vec![0.0; pixels * taps];
    // SAFETY: as in `conv2d`; the first product reads `cols` transposed
    // (`taps×pixels`), the second reads the weights transposed (`out×taps`).
    unsafe {
        matrixmultiply::dgemm(
            taps,
            pixels,
            co,
            1.0,
            cols.as_ptr(),
            1,
            taps as isize,
            g.as_ptr(),
            co as isize,
            1,
            0.0,
            grad_kernel.weights.as_mut_ptr(),
            co as isize,
            1,
        );
        matrixmultiply::dgemm(
            pixels,
            co,
            taps,
            1.0,
            g.as_ptr(),
            co as isize,
            1,
            kernel.weights().as_ptr(),
            1,
            co as isize,
            0.0,
            grad_cols.as_mut_ptr(),
            taps as isize,
            1,
        );
    }
    if !grad_kernel.params().all(f64::is_finite) {
        return Err(TensorError::NonFinite("conv2d_backward"));
    }
    let grad_input = col2im(&grad_cols, input.shape(), kh, kw);
    Ok(ConvGrads {
        input: grad_input.finite("conv2d_backward")?,
        kernel: grad_kernel,
    })
}

/// Gathers the zero-padded `kh×kw` neighbourhood of every pixel into one row.
fn im2col(input: &Tensor, kh: usize, kw: usize) -> Vec<f64> {
    let (h, w, ci) = (input.height(), input.width(), input.channels());
    let (ph, pw) = (kh / 2, kw / 2);
    let taps = kh * kw * ci;
    let src = input.data();
    let mut cols = vec![0.0; h * w * taps];
    for y in 0..h {
        for x in 0..w {
            let row = &mut cols[(y * w + x) * taps..][..taps];
            for ky in 0..kh {
                let Some(iy) = (y + ky).checked_sub(ph).filter(|&iy| iy < h) else {
                    continue;
                };
                for kx in 0..kw {
                    let Some(ix) = (x + kx).checked_sub(pw).filter(|&ix| ix < w) else {
                        continue;
                    };
                    row[(ky * kw + kx) * ci..][..ci]
                        .copy_from_slice(&src[(iy * w + ix) * ci..][..ci]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds each row back onto the pixels it was gathered from.
fn col2im(cols: &[f64], shape: super::Shape, kh: usize, kw: usize) -> Tensor {
    let (h, w, ci) = (shape.height, shape.width, shape.channels);
    let (ph, pw) = (kh / 2, kw / 2);
    let taps = kh * kw * ci;
    let mut out = Tensor::zeros(h, w, ci);
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let row = &cols[(y * w + x) * taps..][..taps];
            for ky in 0..kh {
                let Some(iy) = (y + ky).checked_sub(ph).filter(|&iy| iy < h) else {
                    continue;
                };
                for kx in 0..kw {
                    let Some(ix) = (x + kx).checked_sub(pw).filter(|&ix| ix < w) else {
                        continue;
                    };
                    let pixel = &mut dst[(iy * w + ix) * ci..][..ci];
                    for (d, &v) in pixel.iter_mut().zip(&row[(ky * kw + kx) * ci..][..ci]) {
                        *d += v;
                    }
                }
            }
        }
    }
    out
}

fn check_conv(input: &Tensor, kernel: &Kernel) -> Result<(), TensorError> {
    if kernel.kh() % 2 == 0 || kernel.kw() % 2 == 0 {
        return Err(TensorError::EvenKernel {
            kh: kernel.kh(),
            kw: kernel.kw(),
        });
    }
    if kernel.in_channels() != input.channels() {
        return Err(TensorError::ChannelMismatch {
            kernel: kernel.in_channels(),
            input: input.channels(),
        });
    }
    Ok(())
}

/// Elementwise `x` for `x >= 0`, `slope * x` otherwise. A slope of zero is plain ReLU.
pub fn leaky_relu(input: &Tensor, slope: f64) -> Result<Tensor, TensorError> {
    if slope < 0.0 {
        return Err(TensorError::NegativeSlope(slope));
    }
    input
        .map(|v| if v >= 0.0 { v } else { slope * v })
        .finite("leaky_relu")
}

/// Logistic function, evaluated without overflow and kept strictly inside `(0, 1)`.
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, ONE_BELOW)
}

/// `ln(sigmoid(x))` without forming the sigmoid first.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Mean of the elementwise product, `Σ aᵢbᵢ / n`.
pub fn inner_product(a: &Tensor, b: &Tensor) -> Result<f64, TensorError> {
    a.expect_shape(b.shape())?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    let v = sum / a.len() as f64;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TensorError::NonFinite("inner_product"))
    }
}
