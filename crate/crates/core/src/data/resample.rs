use crate::tensor::Tensor;

/// Keys cubic-convolution parameter.
pub const KEYS_A: f64 = -0.5;

/// Keys cubic kernel with `a = -0.5`.
pub fn cubic_kernel(t: f64) -> f64 {
    let a = KEYS_A;
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Four source indices (edge-clamped) and weights for each output position
/// along one axis. Output pixel centres map to `(i + 0.5)·in/out − 0.5`.
#[derive(Clone, Debug)]
struct AxisTaps {
    /// Index of the sample at `floor(src)`, used as the reference value.
    anchor: Vec<usize>,
    index: Vec<[usize; 4]>,
    weight: Vec<[f64; 4]>,
}

impl AxisTaps {
    fn new(len_in: usize, len_out: usize) -> Self {
        let scale = len_in as f64 / len_out as f64;
        let last = len_in as isize - 1;
        let clamp = |i: isize| i.clamp(0, last) as usize;
        let mut taps = Self {
            anchor: Vec::with_capacity(len_out),
            index: Vec::with_capacity(len_out),
            weight: Vec::with_capacity(len_out),
        };
        for i in 0..len_out {
            let src = (i as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let frac = src - base;
            let base = base as isize;
            taps.anchor.push(clamp(base));
            taps.index
                .push([clamp(base - 1), clamp(base), clamp(base + 1), clamp(base + 2)]);
            taps.weight.push([
                cubic_kernel(1.0 + frac),
                cubic_kernel(frac),
                cubic_kernel(1.0 - frac),
                cubic_kernel(2.0 - frac),
            ]);
        }
        taps
    }

    /// `v[anchor] + Σ wₖ·(v[iₖ] − v[anchor])`: equal to `Σ wₖ·v[iₖ]` because
    /// the weights sum to one, and reproduces constants bit-exactly.
    #[inline]
    fn apply(&self, i: usize, sample: impl Fn(usize) -> f64) -> f64 {
        let r = sample(self.anchor[i]);
        let mut acc = 0.0;
        for (&j, &w) in self.index[i].iter().zip(&self.weight[i]) {
            acc += w * (sample(j) - r);
        }
        r + acc
    }
}

/// Separable bicubic resize (width pass, then height pass) with edge clamping.
/// Used both for degradation and for producing the interpolated initial state.
pub fn bicubic_resample(t: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    assert!(out_h >= 1 && out_w >= 1, "output dimensions must be positive");
    let (h, w, c) = (t.height(), t.width(), t.channels());
    let cols = AxisTaps::new(w, out_w);
    let rows = AxisTaps::new(h, out_h);
    let wide = Tensor::from_fn(h, out_w, c, |y, x, ch| cols.apply(x, |j| t.get(y, j, ch)));
    Tensor::from_fn(out_h, out_w, c, |y, x, ch| rows.apply(y, |j| wide.get(j, x, ch)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_interpolates() {
        assert_eq!(cubic_kernel(0.0), 1.0);
        for t in [1.0, -1.0, 2.0, -2.0, 2.5] {
            assert_eq!(cubic_kernel(t), 0.0);
        }
        for frac in [0.0, 0.125, 0.3, 0.5, 0.875] {
            let s: f64 = [1.0 + frac, frac, 1.0 - frac, 2.0 - frac].iter().map(|&t| cubic_kernel(t)).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn constants_survive_any_resize() {
        let t = Tensor::filled(12, 8, 2, 0.3137254901960784);
        for (h, w) in [(3, 2), (48, 32), (12, 8), (5, 17)] {
            let r = bicubic_resample(&t, h, w);
            assert!(r.data().iter().all(|&v| v == 0.3137254901960784));
        }
    }

    #[test]
    fn identity_resize_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = Tensor::from_fn(7, 9, 3, |_, _, _| rng.random_range(0.0..1.0));
        assert_eq!(bicubic_resample(&t, 7, 9), t);
    }

    #[test]
    fn ramp_downsample_matches_expanded_weights() {
        // f(y, x) = 0.1 + 0.05x + 0.02y on 8×8. Downsampling by 4 places the
        // output centres at source 1.5 and 5.5, with weights
        // w(1.5), w(0.5), w(0.5), w(1.5) = -1/16, 9/16, 9/16, -1/16 on taps base-1..base+2.
        let f = |y: usize, x: usize| 0.1 + 0.05 * x as f64 + 0.02 * y as f64;
        let t = Tensor::from_fn(8, 8, 1, |y, x, _| f(y, x));
        let w = [-0.0625, 0.5625, 0.5625, -0.0625];
        let expected = |oy: usize, ox: usize| {
            let mut acc = 0.0;
            for (i, wy) in w.iter().enumerate() {
                for (j, wx) in w.iter().enumerate() {
                    acc += wy * wx * f(4 * oy + i, 4 * ox + j);
                }
            }
            acc
        };
        let r = bicubic_resample(&t, 2, 2);
        for oy in 0..2 {
            for ox in 0..2 {
                let e = expected(oy, ox);
                assert!((r.get(oy, ox, 0) - e).abs() < 1e-14, "{} vs {e}", r.get(oy, ox, 0));
                // Cubic convolution reproduces linear functions: value at (4oy+1.5, 4ox+1.5).
                let exact = 0.1 + 0.05 * (4.0 * ox as f64 + 1.5) + 0.02 * (4.0 * oy as f64 + 1.5);
                assert!((e - exact).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn resample_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::from_fn(16, 16, 1, |_, _, _| rng.random_range(0.0..1.0));
        let y = Tensor::from_fn(16, 16, 1, |_, _, _| rng.random_range(0.0..1.0));
        let (a, b) = (0.7, -1.3);
        let mix = x.zip_with(&y, |p, q| a * p + b * q).unwrap();
        let lhs = bicubic_resample(&mix, 4, 4);
        let rhs = bicubic_resample(&x, 4, 4)
            .zip_with(&bicubic_resample(&y, 4, 4), |p, q| a * p + b * q)
            .unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            assert!((l - r).abs() <= 1e-12 * r.abs().max(1.0));
        }
    }
}
