//! Primitive operators: 3D convolution, ReLU and the sub-pixel shuffle,
//! each with a hand-derived backward pass.
//!
//! Convolution is cross-correlation (no kernel flip) with zero padding and
//! stride 1. Kernels are cubic with odd extent; padding `(k-1)/2` preserves
//! spatial extents ("same"), padding 0 shrinks each extent by `k-1`
//! ("valid"). Every forward/backward execution reports itself to the
//! thread-current ledger so schedules can be compared by operator count.

use crate::error::{CoreError, CoreResult};
use crate::ledger::MemoryLedger;
use crate::tensor::{idx4, Element, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Weights and bias of one convolution layer.
///
/// `weights` has shape `(C_out, C_in, k, k, k)`, `bias` has shape `(C_out)`.
/// Stride is fixed at 1.
#[derive(Debug, Clone)]
pub struct ConvKernel<T: Element> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub padding: usize,
}

impl<T: Element> ConvKernel<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>, padding: usize) -> CoreResult<Self> {
        let shape = weights.shape();
        if shape.len() != 5 {
            return Err(CoreError::RankMismatch {
                op: "ConvKernel",
                expected: 5,
                got: shape.len(),
            });
        }
        let k = shape[2];
        if shape[3] != k || shape[4] != k {
            return Err(CoreError::InvalidSpec(format!(
                "convolution kernel must be cubic, got {shape:?}"
            )));
        }
        if k % 2 == 0 {
            return Err(CoreError::InvalidSpec(format!(
                "kernel extent must be odd, got {k}"
            )));
        }
        if bias.shape() != [shape[0]] {
            return Err(CoreError::ShapeMismatch {
                op: "ConvKernel bias",
                left: bias.shape().to_vec(),
                right: vec![shape[0]],
            });
        }
        Ok(Self {
            weights,
            bias,
            padding,
        })
    }

    /// He-initialized kernel: weights ~ N(0, 2 / fan_in), zero bias.
    /// Values are drawn in f64 so the parameter stream is the same for both
    /// precisions given the same generator state.
    pub fn he_init(
        c_out: usize,
        c_in: usize,
        k: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> CoreResult<Self> {
        let fan_in = c_in * k * k * k;
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let n = c_out * c_in * k * k * k;
        let data: Vec<T> = (0..n).map(|_| T::from_f64(normal.sample(rng))).collect();
        let weights = Tensor::from_vec(vec![c_out, c_in, k, k, k], data)?.into_parameter();
        let bias = Tensor::zeros([c_out]).into_parameter();
        Self::new(weights, bias, padding)
    }

    /// All-zero kernel (used for expand convolutions so fresh blocks start
    /// as exact identities).
    pub fn zero_init(c_out: usize, c_in: usize, k: usize, padding: usize) -> CoreResult<Self> {
        let weights = Tensor::zeros([c_out, c_in, k, k, k]).into_parameter();
        let bias = Tensor::zeros([c_out]).into_parameter();
        Self::new(weights, bias, padding)
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel_extent(&self) -> usize {
        self.weights.shape()[2]
    }

    /// Output spatial extent for one input extent, or an error when the
    /// result would be non-positive.
    pub fn out_extent(&self, input_extent: usize) -> CoreResult<usize> {
        let k = self.kernel_extent();
        let grown = input_extent + 2 * self.padding;
        if grown < k {
            return Err(CoreError::ConvUnderflow {
                input_extent,
                kernel_extent: k,
                padding: self.padding,
            });
        }
        Ok(grown - k + 1)
    }

    /// Elements held by weights plus bias.
    pub fn elements(&self) -> usize {
        self.weights.elements() + self.bias.elements()
    }
}

/// Gradients of [`conv3d_forward`] with respect to input, weights and bias.
#[derive(Debug)]
pub struct ConvGrads<T: Element> {
    pub grad_input: Tensor<T>,
    pub grad_weights: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

// Output positions o where the input index o + tap - padding stays in
// [0, in_extent); returns an empty range when no position is valid.
#[inline]
fn tap_range(out_extent: usize, in_extent: usize, tap: usize, padding: usize) -> (usize, usize) {
    let start = padding.saturating_sub(tap);
    let end = (in_extent + padding - tap).min(out_extent);
    (start.min(end), end)
}

/// Cross-correlation with zero padding and stride 1.
/// Output shape: `(C_out, X-k+1+2p, Y-k+1+2p, Z-k+1+2p)`.
pub fn conv3d_forward<T: Element>(x: &Tensor<T>, kernel: &ConvKernel<T>) -> CoreResult<Tensor<T>> {
    let in_shape = x.shape4("conv3d_forward")?;
    if in_shape[0] != kernel.in_channels() {
        return Err(CoreError::ChannelMismatch {
            op: "conv3d_forward",
            expected: kernel.in_channels(),
            got: in_shape[0],
        });
    }
    let co_n = kernel.out_channels();
    let ci_n = kernel.in_channels();
    let k = kernel.kernel_extent();
    let p = kernel.padding;
    let out_shape = [
        co_n,
        kernel.out_extent(in_shape[1])?,
        kernel.out_extent(in_shape[2])?,
        kernel.out_extent(in_shape[3])?,
    ];

    let mut out = Tensor::zeros(out_shape.to_vec());
    let xd = x.data();
    let wd = kernel.weights.data();
    let bd = kernel.bias.data();
    let od = out.data_mut();

    let out_plane = out_shape[1] * out_shape[2] * out_shape[3];
    for co in 0..co_n {
        od[co * out_plane..(co + 1) * out_plane].fill(bd[co]);
    }

    for co in 0..co_n {
        for ci in 0..ci_n {
            for kx in 0..k {
                let (ox0, ox1) = tap_range(out_shape[1], in_shape[1], kx, p);
                for ky in 0..k {
                    let (oy0, oy1) = tap_range(out_shape[2], in_shape[2], ky, p);
                    for kz in 0..k {
                        let (oz0, oz1) = tap_range(out_shape[3], in_shape[3], kz, p);
                        if oz0 >= oz1 {
                            continue;
                        }
                        let w = wd[(((co * ci_n + ci) * k + kx) * k + ky) * k + kz];
                        let len = oz1 - oz0;
                        for ox in ox0..ox1 {
                            let ix = ox + kx - p;
                            for oy in oy0..oy1 {
                                let iy = oy + ky - p;
                                let ob = idx4(&out_shape, co, ox, oy, oz0);
                                let ib = idx4(&in_shape, ci, ix, iy, oz0 + kz - p);
                                let orow = &mut od[ob..ob + len];
                                let irow = &xd[ib..ib + len];
                                for t in 0..len {
                                    orow[t] = orow[t] + w * irow[t];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    MemoryLedger::current().record_fwd_op();
    Ok(out)
}

/// Exact gradients of [`conv3d_forward`].
/// `grad_out` must have the forward output shape for `(x, kernel)`.
pub fn conv3d_backward<T: Element>(
    x: &Tensor<T>,
    kernel: &ConvKernel<T>,
    grad_out: &Tensor<T>,
) -> CoreResult<ConvGrads<T>> {
    let in_shape = x.shape4("conv3d_backward")?;
    if in_shape[0] != kernel.in_channels() {
        return Err(CoreError::ChannelMismatch {
            op: "conv3d_backward",
            expected: kernel.in_channels(),
            got: in_shape[0],
        });
    }
    let co_n = kernel.out_channels();
    let ci_n = kernel.in_channels();
    let k = kernel.kernel_extent();
    let p = kernel.padding;
    let out_shape = [
        co_n,
        kernel.out_extent(in_shape[1])?,
        kernel.out_extent(in_shape[2])?,
        kernel.out_extent(in_shape[3])?,
    ];
    let go_shape = grad_out.shape4("conv3d_backward grad_out")?;
    if go_shape != out_shape {
        return Err(CoreError::ShapeMismatch {
            op: "conv3d_backward grad_out",
            left: go_shape.to_vec(),
            right: out_shape.to_vec(),
        });
    }

    let xd = x.data();
    let wd = kernel.weights.data();
    let gd = grad_out.data();

    let mut grad_bias = Tensor::<T>::zeros([co_n]).into_parameter();
    {
        let gb = grad_bias.data_mut();
        let out_plane = out_shape[1] * out_shape[2] * out_shape[3];
        for co in 0..co_n {
            let mut acc = T::zero();
            for &g in &gd[co * out_plane..(co + 1) * out_plane] {
                acc = acc + g;
            }
            gb[co] = acc;
        }
    }

    let mut grad_weights = Tensor::<T>::zeros(vec![co_n, ci_n, k, k, k]).into_parameter();
    {
        let gw = grad_weights.data_mut();
        for co in 0..co_n {
            for ci in 0..ci_n {
                for kx in 0..k {
                    let (ox0, ox1) = tap_range(out_shape[1], in_shape[1], kx, p);
                    for ky in 0..k {
                        let (oy0, oy1) = tap_range(out_shape[2], in_shape[2], ky, p);
                        for kz in 0..k {
                            let (oz0, oz1) = tap_range(out_shape[3], in_shape[3], kz, p);
                            if oz0 >= oz1 {
                                continue;
                            }
                            let len = oz1 - oz0;
                            let mut acc = T::zero();
                            for ox in ox0..ox1 {
                                let ix = ox + kx - p;
                                for oy in oy0..oy1 {
                                    let iy = oy + ky - p;
                                    let gb = idx4(&out_shape, co, ox, oy, oz0);
                                    let ib = idx4(&in_shape, ci, ix, iy, oz0 + kz - p);
                                    let grow = &gd[gb..gb + len];
                                    let irow = &xd[ib..ib + len];
                                    for t in 0..len {
                                        acc = acc + grow[t] * irow[t];
                                    }
                                }
                            }
                            gw[(((co * ci_n + ci) * k + kx) * k + ky) * k + kz] = acc;
                        }
                    }
                }
            }
        }
    }

    let mut grad_input = Tensor::<T>::zeros(in_shape.to_vec());
    {
        let gx = grad_input.data_mut();
        for co in 0..co_n {
            for ci in 0..ci_n {
                for kx in 0..k {
                    let (ox0, ox1) = tap_range(out_shape[1], in_shape[1], kx, p);
                    for ky in 0..k {
                        let (oy0, oy1) = tap_range(out_shape[2], in_shape[2], ky, p);
                        for kz in 0..k {
                            let (oz0, oz1) = tap_range(out_shape[3], in_shape[3], kz, p);
                            if oz0 >= oz1 {
                                continue;
                            }
                            let w = wd[(((co * ci_n + ci) * k + kx) * k + ky) * k + kz];
                            let len = oz1 - oz0;
                            for ox in ox0..ox1 {
                                let ix = ox + kx - p;
                                for oy in oy0..oy1 {
                                    let iy = oy + ky - p;
                                    let gb = idx4(&out_shape, co, ox, oy, oz0);
                                    let ib = idx4(&in_shape, ci, ix, iy, oz0 + kz - p);
                                    let grow = &gd[gb..gb + len];
                                    let xrow = &mut gx[ib..ib + len];
                                    for t in 0..len {
                                        xrow[t] = xrow[t] + w * grow[t];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    MemoryLedger::current().record_bwd_op();
    Ok(ConvGrads {
        grad_input,
        grad_weights,
        grad_bias,
    })
}

/// `max(x, 0)` elementwise.
pub fn relu_forward<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let data: Vec<T> = x
        .data()
        .iter()
        .map(|&v| if v > T::zero() { v } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape().to_vec(), data).expect("shape preserved")
}

/// Masks `grad_out` where the forward input was `<= 0` (subgradient at 0
/// is 0).
pub fn relu_backward<T: Element>(x: &Tensor<T>, grad_out: &Tensor<T>) -> CoreResult<Tensor<T>> {
    if x.shape() != grad_out.shape() {
        return Err(CoreError::ShapeMismatch {
            op: "relu_backward",
            left: x.shape().to_vec(),
            right: grad_out.shape().to_vec(),
        });
    }
    let data: Vec<T> = x
        .data()
        .iter()
        .zip(grad_out.data().iter())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape().to_vec(), data)
}

/// Sub-pixel shuffle from low- to high-resolution space:
/// `(r³C, X, Y, Z) -> (C, rX, rY, rZ)` with
/// `out[c, x, y, z] = in[c·r³ + (x%r)·r² + (y%r)·r + (z%r), x/r, y/r, z/r]`.
pub fn shuffle<T: Element>(x: &Tensor<T>, rate: usize) -> CoreResult<Tensor<T>> {
    let in_shape = x.shape4("shuffle")?;
    if rate == 0 {
        return Err(CoreError::InvalidSpec("upsampling rate must be >= 1".into()));
    }
    let r3 = rate * rate * rate;
    if in_shape[0] % r3 != 0 {
        return Err(CoreError::IndivisibleChannels {
            channels: in_shape[0],
            rate,
        });
    }
    let out_shape = [
        in_shape[0] / r3,
        in_shape[1] * rate,
        in_shape[2] * rate,
        in_shape[3] * rate,
    ];
    let mut out = Tensor::zeros(out_shape.to_vec());
    let od = out.data_mut();
    let id = x.data();
    for c in 0..out_shape[0] {
        for ox in 0..out_shape[1] {
            for oy in 0..out_shape[2] {
                for oz in 0..out_shape[3] {
                    let cc = c * r3 + (ox % rate) * rate * rate + (oy % rate) * rate + (oz % rate);
                    od[idx4(&out_shape, c, ox, oy, oz)] =
                        id[idx4(&in_shape, cc, ox / rate, oy / rate, oz / rate)];
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`shuffle`]: `(C, rX, rY, rZ) -> (r³C, X, Y, Z)`.
///
/// The shuffle is an index permutation, so the backward pass of `shuffle`
/// is `inverse_shuffle` applied to the upstream gradient, and vice versa.
pub fn inverse_shuffle<T: Element>(y: &Tensor<T>, rate: usize) -> CoreResult<Tensor<T>> {
    let in_shape = y.shape4("inverse_shuffle")?;
    if rate == 0 {
        return Err(CoreError::InvalidSpec("upsampling rate must be >= 1".into()));
    }
    for d in 1..4 {
        if in_shape[d] % rate != 0 {
            return Err(CoreError::IndivisibleExtent {
                extent: in_shape[d],
                rate,
            });
        }
    }
    let r3 = rate * rate * rate;
    let out_shape = [
        in_shape[0] * r3,
        in_shape[1] / rate,
        in_shape[2] / rate,
        in_shape[3] / rate,
    ];
    let mut out = Tensor::zeros(out_shape.to_vec());
    let od = out.data_mut();
    let id = y.data();
    for c in 0..in_shape[0] {
        for x in 0..out_shape[1] {
            for y_ in 0..out_shape[2] {
                for z in 0..out_shape[3] {
                    for dx in 0..rate {
                        for dy in 0..rate {
                            for dz in 0..rate {
                                let cc = c * r3 + dx * rate * rate + dy * rate + dz;
                                od[idx4(&out_shape, cc, x, y_, z)] = id[idx4(
                                    &in_shape,
                                    c,
                                    x * rate + dx,
                                    y_ * rate + dy,
                                    z * rate + dz,
                                )];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testsupport::{finite_diff_gradient, max_rel_error, random_tensor, uniform_vec};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    // Direct six-nested-loop cross-correlation, independent of the
    // production tap-scatter loop structure.
    fn conv_oracle(x: &Tensor<f64>, kernel: &ConvKernel<f64>) -> Tensor<f64> {
        let [ci_n, ix_n, iy_n, iz_n] = x.shape4("oracle").unwrap();
        let co_n = kernel.out_channels();
        let k = kernel.kernel_extent();
        let p = kernel.padding as isize;
        let ox_n = ix_n + 2 * kernel.padding - k + 1;
        let oy_n = iy_n + 2 * kernel.padding - k + 1;
        let oz_n = iz_n + 2 * kernel.padding - k + 1;
        let in_shape = [ci_n, ix_n, iy_n, iz_n];
        let out_shape = [co_n, ox_n, oy_n, oz_n];
        let mut out = vec![0.0; co_n * ox_n * oy_n * oz_n];
        for co in 0..co_n {
            for ox in 0..ox_n {
                for oy in 0..oy_n {
                    for oz in 0..oz_n {
                        let mut acc = kernel.bias.data()[co];
                        for ci in 0..ci_n {
                            for kx in 0..k {
                                for ky in 0..k {
                                    for kz in 0..k {
                                        let ix = ox as isize + kx as isize - p;
                                        let iy = oy as isize + ky as isize - p;
                                        let iz = oz as isize + kz as isize - p;
                                        if ix < 0
                                            || iy < 0
                                            || iz < 0
                                            || ix >= ix_n as isize
                                            || iy >= iy_n as isize
                                            || iz >= iz_n as isize
                                        {
                                            continue;
                                        }
                                        let w = kernel.weights.data()
                                            [(((co * ci_n + ci) * k + kx) * k + ky) * k + kz];
                                        acc += w
                                            * x.data()[idx4(
                                                &in_shape,
                                                ci,
                                                ix as usize,
                                                iy as usize,
                                                iz as usize,
                                            )];
                                    }
                                }
                            }
                        }
                        out[idx4(&out_shape, co, ox, oy, oz)] = acc;
                    }
                }
            }
        }
        Tensor::from_vec(out_shape.to_vec(), out).unwrap()
    }

    fn kernel_from(
        c_out: usize,
        c_in: usize,
        k: usize,
        padding: usize,
        w: Vec<f64>,
        b: Vec<f64>,
    ) -> ConvKernel<f64> {
        ConvKernel::new(
            Tensor::from_vec(vec![c_out, c_in, k, k, k], w).unwrap(),
            Tensor::from_vec(vec![c_out], b).unwrap(),
            padding,
        )
        .unwrap()
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let x = random_tensor::<f64>(&[1, 4, 4, 4], 7, -1.0, 1.0);
        let kernel = kernel_from(1, 1, 1, 0, vec![1.0], vec![0.0]);
        let y = conv3d_forward(&x, &kernel).unwrap();
        assert!(y.bitwise_eq(&x));
    }

    #[test]
    fn all_ones_valid_conv_sums_27() {
        let x = Tensor::<f64>::filled([1, 3, 3, 3], 1.0);
        let kernel = kernel_from(1, 1, 3, 0, vec![1.0; 27], vec![0.0]);
        let y = conv3d_forward(&x, &kernel).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data()[0], 27.0);
    }

    #[test]
    fn forward_matches_direct_summation_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let x = random_tensor::<f64>(&[3, 4, 4, 4], 21, -1.0, 1.0);
        let kernel = ConvKernel::<f64>::he_init(2, 3, 3, 1, &mut rng).unwrap();
        let got = conv3d_forward(&x, &kernel).unwrap();
        let want = conv_oracle(&x, &kernel);
        assert_eq!(got.shape(), &[2, 4, 4, 4]);
        assert!(
            max_rel_error(got.data(), want.data()) <= 1e-12,
            "rel error {}",
            max_rel_error(got.data(), want.data())
        );
    }

    #[test]
    fn rejects_channel_mismatch_and_underflow() {
        let x = Tensor::<f64>::zeros([2, 3, 3, 3]);
        let kernel = kernel_from(1, 1, 1, 0, vec![1.0], vec![0.0]);
        assert!(matches!(
            conv3d_forward(&x, &kernel),
            Err(CoreError::ChannelMismatch { .. })
        ));
        let x = Tensor::<f64>::zeros([1, 2, 2, 2]);
        let kernel = kernel_from(1, 1, 3, 0, vec![1.0; 27], vec![0.0]);
        assert!(matches!(
            conv3d_forward(&x, &kernel),
            Err(CoreError::ConvUnderflow { .. })
        ));
    }

    #[test]
    fn backward_zero_grad_out_gives_zero_grads() {
        let x = random_tensor::<f64>(&[2, 3, 3, 3], 3, -1.0, 1.0);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let kernel = ConvKernel::<f64>::he_init(2, 2, 3, 1, &mut rng).unwrap();
        let grad_out = Tensor::<f64>::zeros([2, 3, 3, 3]);
        let g = conv3d_backward(&x, &kernel, &grad_out).unwrap();
        assert_eq!(g.grad_input.max_abs(), 0.0);
        assert_eq!(g.grad_weights.max_abs(), 0.0);
        assert_eq!(g.grad_bias.max_abs(), 0.0);
    }

    #[test]
    fn backward_1x1_kernel_is_scalar_chain_rule() {
        let w = 2.5;
        let x = random_tensor::<f64>(&[1, 3, 3, 3], 13, -1.0, 1.0);
        let kernel = kernel_from(1, 1, 1, 0, vec![w], vec![0.0]);
        let grad_out = random_tensor::<f64>(&[1, 3, 3, 3], 14, -1.0, 1.0);
        let g = conv3d_backward(&x, &kernel, &grad_out).unwrap();
        let expected = grad_out.scale(w);
        assert!(g.grad_input.bitwise_eq(&expected));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(40);
        let x = random_tensor::<f64>(&[2, 3, 3, 3], 41, -1.0, 1.0);
        let kernel = ConvKernel::<f64>::he_init(2, 2, 3, 1, &mut rng).unwrap();
        let cot = random_tensor::<f64>(&[2, 3, 3, 3], 42, -1.0, 1.0);

        let g = conv3d_backward(&x, &kernel, &cot).unwrap();

        // Objective: sum(cot * conv(x, w, b)) as a function of (x, w, b).
        let nx = x.elements();
        let nw = kernel.weights.elements();
        let mut theta: Vec<f64> = x.data().to_vec();
        theta.extend_from_slice(kernel.weights.data());
        theta.extend_from_slice(kernel.bias.data());
        let padding = kernel.padding;
        let mut objective = |t: &[f64]| -> f64 {
            let x = Tensor::from_vec(vec![2, 3, 3, 3], t[..nx].to_vec()).unwrap();
            let kern = kernel_from(2, 2, 3, padding, t[nx..nx + nw].to_vec(), t[nx + nw..].to_vec());
            let y = conv3d_forward(&x, &kern).unwrap();
            y.data()
                .iter()
                .zip(cot.data().iter())
                .map(|(a, b)| a * b)
                .sum()
        };
        let fd = finite_diff_gradient(&mut objective, &theta, 1e-5);

        let mut analytic: Vec<f64> = g.grad_input.data().to_vec();
        analytic.extend_from_slice(g.grad_weights.data());
        analytic.extend_from_slice(g.grad_bias.data());
        let err = max_rel_error(&analytic, &fd);
        assert!(err <= 1e-6, "finite-difference mismatch: {err}");
    }

    #[test]
    fn relu_basic_and_mask() {
        let x = Tensor::from_vec(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let g = Tensor::from_vec(vec![3], vec![5.0, 5.0, 5.0]).unwrap();
        let gx = relu_backward(&x, &g).unwrap();
        assert_eq!(gx.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn relu_backward_matches_finite_differences_away_from_zero() {
        // Inputs bounded away from the kink.
        let raw = uniform_vec(77, 64, 1e-3, 1.0);
        let signs = uniform_vec(78, 64, -1.0, 1.0);
        let data: Vec<f64> = raw
            .iter()
            .zip(&signs)
            .map(|(&m, &s)| if s < 0.0 { -m } else { m })
            .collect();
        let x = Tensor::from_vec(vec![4, 4, 4], data).unwrap();
        let cot = random_tensor::<f64>(&[4, 4, 4], 79, -1.0, 1.0);
        let analytic = relu_backward(&x, &cot).unwrap();
        let mut objective = |t: &[f64]| -> f64 {
            let x = Tensor::from_vec(vec![4, 4, 4], t.to_vec()).unwrap();
            relu_forward(&x)
                .data()
                .iter()
                .zip(cot.data().iter())
                .map(|(a, b)| a * b)
                .sum()
        };
        let fd = finite_diff_gradient(&mut objective, x.data(), 1e-5);
        let err = max_rel_error(analytic.data(), &fd);
        assert!(err <= 1e-6, "relu fd mismatch: {err}");
    }

    #[test]
    fn shuffle_rate_one_is_identity() {
        let x = random_tensor::<f64>(&[4, 3, 3, 3], 100, -1.0, 1.0);
        assert!(shuffle(&x, 1).unwrap().bitwise_eq(&x));
        assert!(inverse_shuffle(&x, 1).unwrap().bitwise_eq(&x));
    }

    #[test]
    fn shuffle_shape_mapping() {
        let x = Tensor::<f32>::zeros([48, 7, 7, 7]);
        let y = shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[6, 14, 14, 14]);
        let back = inverse_shuffle(&y, 2).unwrap();
        assert_eq!(back.shape(), &[48, 7, 7, 7]);
    }

    #[test]
    fn shuffle_index_convention_single_voxel() {
        // (8,1,1,1), r=2: out[0, x, y, z] = in[4x + 2y + z, 0, 0, 0].
        let data: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let x = Tensor::from_vec(vec![8, 1, 1, 1], data).unwrap();
        let y = shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        let shape = [1, 2, 2, 2];
        for xx in 0..2 {
            for yy in 0..2 {
                for zz in 0..2 {
                    assert_eq!(
                        y.data()[idx4(&shape, 0, xx, yy, zz)],
                        (4 * xx + 2 * yy + zz) as f64
                    );
                }
            }
        }
    }

    #[test]
    fn shuffle_rejects_indivisible() {
        let x = Tensor::<f64>::zeros([6, 2, 2, 2]);
        assert!(matches!(
            shuffle(&x, 2),
            Err(CoreError::IndivisibleChannels { .. })
        ));
        let y = Tensor::<f64>::zeros([6, 3, 2, 2]);
        assert!(matches!(
            inverse_shuffle(&y, 2),
            Err(CoreError::IndivisibleExtent { .. })
        ));
    }

    proptest! {
        #[test]
        fn shuffle_roundtrips_and_preserves_values(c in 1usize..3, s in 1usize..4, seed in 0u64..500) {
            let rate = 2;
            let shape = [c * rate * rate * rate, s, s, s];
            let x = random_tensor::<f64>(&shape, seed, -1.0, 1.0);
            let y = shuffle(&x, rate).unwrap();
            let back = inverse_shuffle(&y, rate).unwrap();
            prop_assert!(back.bitwise_eq(&x));
            // Opposite order.
            let z = inverse_shuffle(&x, 1).unwrap();
            prop_assert!(shuffle(&z, 1).unwrap().bitwise_eq(&x));
            // Permutations preserve the multiset of values.
            let mut a: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
            let mut b: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn same_padding_preserves_and_valid_shrinks(s in 3usize..6, k in prop::sample::select(vec![1usize, 3])) {
            let x = Tensor::<f64>::zeros([1, s, s, s]);
            let mut rng = ChaCha12Rng::seed_from_u64(9);
            let same = ConvKernel::<f64>::he_init(1, 1, k, (k - 1) / 2, &mut rng).unwrap();
            let y = conv3d_forward(&x, &same).unwrap();
            prop_assert_eq!(y.shape(), &[1, s, s, s]);
            let valid = ConvKernel::<f64>::he_init(1, 1, k, 0, &mut rng).unwrap();
            let y = conv3d_forward(&x, &valid).unwrap();
            prop_assert_eq!(y.shape(), &[1, s - k + 1, s - k + 1, s - k + 1]);
        }
    }
}
