use rand::Rng;

use super::{init, Layer, Param};
use crate::error::{Error, Result};
use crate::tensor::{axpy, dot, Scalar, Tensor};

/// Geometry of a stride-1 cross-correlation layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Square kernel with the padding that preserves spatial extent.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize, has_bias: bool) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            pad_h: kernel.saturating_sub(1) / 2,
            pad_w: kernel.saturating_sub(1) / 2,
            has_bias,
        }
    }

    pub fn stride(&self) -> usize {
        1
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    pub fn num_params(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_h * self.kernel_w
            + if self.has_bias { self.out_channels } else { 0 }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn fan_out(&self) -> usize {
        self.out_channels * self.kernel_h * self.kernel_w
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArgument(format!("conv with zero channels: {self:?}")));
        }
        for (k, p, axis) in [(self.kernel_h, self.pad_h, "height"), (self.kernel_w, self.pad_w, "width")] {
            if k % 2 == 0 {
                return Err(Error::InvalidArgument(format!(
                    "conv kernel {axis} must be odd, got {k}"
                )));
            }
            if p != (k - 1) / 2 {
                return Err(Error::InvalidArgument(format!(
                    "conv padding along {axis} must be {} for kernel {k}, got {p}",
                    (k - 1) / 2
                )));
            }
        }
        Ok(())
    }
}

/// Unfolds `input` (`c × h × w`) into `out`, laid out as
/// `(c · kh · kw) × (h · w)` rows. Positions outside the image read zero.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col<T: Scalar>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    out: &mut [T],
) {
    let hw = h * w;
    debug_assert_eq!(out.len(), c * kh * kw * hw);
    for ch in 0..c {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for i in 0..kh {
            for j in 0..kw {
                let row = ((ch * kh + i) * kw + j) * hw;
                let dst = &mut out[row..row + hw];
                // Output column range whose source x lies inside [0, w).
                let x_lo = pw.saturating_sub(j).min(w);
                let x_hi = (w + pw).saturating_sub(j).min(w).max(x_lo);
                for y in 0..h {
                    let line = &mut dst[y * w..(y + 1) * w];
                    let sy = y + i;
                    if sy < ph || sy - ph >= h {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[(sy - ph) * w..(sy - ph + 1) * w];
                    line[..x_lo].fill(T::zero());
                    line[x_hi..].fill(T::zero());
                    if x_hi > x_lo {
                        let sx_lo = x_lo + j - pw;
                        line[x_lo..x_hi].copy_from_slice(&src[sx_lo..sx_lo + (x_hi - x_lo)]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `col` back into `grad` (accumulating).
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_add<T: Scalar>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    grad: &mut [T],
) {
    let hw = h * w;
    debug_assert_eq!(col.len(), c * kh * kw * hw);
    for ch in 0..c {
        let plane = &mut grad[ch * hw..(ch + 1) * hw];
        for i in 0..kh {
            for j in 0..kw {
                let row = ((ch * kh + i) * kw + j) * hw;
                let src = &col[row..row + hw];
                let x_lo = pw.saturating_sub(j).min(w);
                let x_hi = (w + pw).saturating_sub(j).min(w).max(x_lo);
                if x_hi == x_lo {
                    continue;
                }
                for y in 0..h {
                    let sy = y + i;
                    if sy < ph || sy - ph >= h {
                        continue;
                    }
                    let dst = &mut plane[(sy - ph) * w..(sy - ph + 1) * w];
                    let sx_lo = x_lo + j - pw;
                    for (d, &s) in dst[sx_lo..sx_lo + (x_hi - x_lo)]
                        .iter_mut()
                        .zip(&src[y * w + x_lo..y * w + x_hi])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Convolutions with at most this many output channels skip im2col: a GEMM
/// with so few rows is bound by the unfolded buffer, not by arithmetic.
const DIRECT_MAX_OUT: usize = 4;

/// Overlap of kernel tap `(i, j)` with the image: output rows `ys` and
/// columns `xs` read source pixels starting at `(sy, sx)`.
struct Tap {
    ys: std::ops::Range<usize>,
    xs: std::ops::Range<usize>,
    sy: usize,
    sx: usize,
}

/// Calls `f(o, c, weight index, tap)` for every tap with a non-empty overlap.
fn for_each_tap(spec: &ConvSpec, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize, &Tap)) {
    let (kh, kw, ph, pw) = (spec.kernel_h, spec.kernel_w, spec.pad_h, spec.pad_w);
    let mut taps = Vec::with_capacity(kh * kw);
    for i in 0..kh {
        for j in 0..kw {
            let y_lo = ph.saturating_sub(i).min(h);
            let y_hi = (h + ph).saturating_sub(i).min(h);
            let x_lo = pw.saturating_sub(j).min(w);
            let x_hi = (w + pw).saturating_sub(j).min(w);
            if y_hi > y_lo && x_hi > x_lo {
                let t = Tap { ys: y_lo..y_hi, xs: x_lo..x_hi, sy: y_lo + i - ph, sx: x_lo + j - pw };
                taps.push((i * kw + j, t));
            }
        }
    }
    for o in 0..spec.out_channels {
        for c in 0..spec.in_channels {
            let base = (o * spec.in_channels + c) * kh * kw;
            for (k, t) in &taps {
                f(o, c, base + k, t);
            }
        }
    }
}

fn direct_forward<T: Scalar>(input: &[T], spec: &ConvSpec, h: usize, w: usize, weights: &[T], out: &mut [T]) {
    let hw = h * w;
    for_each_tap(spec, h, w, |o, c, wi, t| {
        let n = t.xs.len();
        for (r, y) in t.ys.clone().enumerate() {
            let src = c * hw + (t.sy + r) * w + t.sx;
            let dst = o * hw + y * w + t.xs.start;
            axpy(weights[wi], &input[src..src + n], &mut out[dst..dst + n]);
        }
    });
}

#[allow(clippy::too_many_arguments)]
fn direct_backward<T: Scalar>(
    grad_out: &[T],
    input: &[T],
    spec: &ConvSpec,
    h: usize,
    w: usize,
    weights: &[T],
    grad_weights: &mut [T],
    grad_in: &mut [T],
) {
    let hw = h * w;
    for_each_tap(spec, h, w, |o, c, wi, t| {
        let n = t.xs.len();
        let mut acc = T::zero();
        for (r, y) in t.ys.clone().enumerate() {
            let src = c * hw + (t.sy + r) * w + t.sx;
            let g = o * hw + y * w + t.xs.start;
            acc += dot(&grad_out[g..g + n], &input[src..src + n]);
            axpy(weights[wi], &grad_out[g..g + n], &mut grad_in[src..src + n]);
        }
        grad_weights[wi] += acc;
    });
}

fn check_conv_args<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<(usize, usize)> {
    spec.validate()?;
    weights.expect_shape("conv weights", &spec.weight_shape())?;
    if input.shape().len() != 3 {
        return Err(Error::shape("conv input (rank)", 3, input.shape().len()));
    }
    if input.shape()[0] != spec.in_channels {
        return Err(Error::shape(
            "conv input (dimension 0, channels)",
            spec.in_channels,
            input.shape()[0],
        ));
    }
    match (spec.has_bias, bias) {
        (true, Some(b)) => b.expect_shape("conv bias", &[spec.out_channels])?,
        (false, None) => {}
        (true, None) => return Err(Error::InvalidArgument("conv spec expects a bias".into())),
        (false, Some(_)) => {
            return Err(Error::InvalidArgument("conv spec declares no bias".into()))
        }
    }
    Ok((input.shape()[1], input.shape()[2]))
}

/// `out[o,y,x] = bias[o] + Σ input[c, y+i−pad, x+j−pad] · weights[o,c,i,j]`,
/// zero-padded, spatial extent preserved.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (h, w) = check_conv_args(input, spec, weights, bias)?;
    let hw = h * w;
    if spec.out_channels <= DIRECT_MAX_OUT {
        let mut out = Tensor::zeros(&[spec.out_channels, h, w]);
        if let Some(b) = bias {
            for (o, &bv) in b.data().iter().enumerate() {
                out.channel_mut(o).fill(bv);
            }
        }
        direct_forward(input.data(), spec, h, w, weights.data(), out.data_mut());
        return Ok(out);
    }
    let k = spec.fan_in();
    let mut col = vec![T::zero(); k * hw];
    im2col(
        input.data(),
        spec.in_channels,
        h,
        w,
        spec.kernel_h,
        spec.kernel_w,
        spec.pad_h,
        spec.pad_w,
        &mut col,
    );
    let mut out = Tensor::zeros(&[spec.out_channels, h, w]);
    if let Some(b) = bias {
        for (o, &bv) in b.data().iter().enumerate() {
            out.channel_mut(o).fill(bv);
        }
    }
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    T::gemm(
        spec.out_channels,
        k,
        hw,
        weights.data(),
        false,
        &col,
        false,
        beta,
        out.data_mut(),
    );
    Ok(out)
}

/// Returns the input gradient and accumulates into `grad_weights` / `grad_bias`.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    spec: &ConvSpec,
    weights: &Tensor<T>,
    grad_weights: &mut Tensor<T>,
    grad_bias: Option<&mut Tensor<T>>,
) -> Result<Tensor<T>> {
    let mut spec_no_bias = *spec;
    spec_no_bias.has_bias = false;
    let (h, w) = check_conv_args(input, &spec_no_bias, weights, None)?;
    match (&grad_bias, spec.has_bias) {
        (Some(gb), true) => gb.expect_shape("conv bias gradient", &[spec.out_channels])?,
        (None, false) => {}
        _ => return Err(Error::InvalidArgument("conv bias gradient does not match spec".into())),
    }
    grad_out.expect_shape("conv grad_out", &[spec.out_channels, h, w])?;
    grad_weights.expect_shape("conv weight gradient", &spec.weight_shape())?;
    let hw = h * w;
    if let Some(gb) = grad_bias {
        for o in 0..spec.out_channels {
            gb.data_mut()[o] += grad_out.channel(o).iter().copied().sum::<T>();
        }
    }
    if spec.out_channels <= DIRECT_MAX_OUT {
        let mut grad_in = Tensor::zeros(input.shape());
        direct_backward(
            grad_out.data(),
            input.data(),
            spec,
            h,
            w,
            weights.data(),
            grad_weights.data_mut(),
            grad_in.data_mut(),
        );
        return Ok(grad_in);
    }
    let k = spec.fan_in();
    let mut col = vec![T::zero(); k * hw];
    im2col(
        input.data(),
        spec.in_channels,
        h,
        w,
        spec.kernel_h,
        spec.kernel_w,
        spec.pad_h,
        spec.pad_w,
        &mut col,
    );
    T::gemm(
        spec.out_channels,
        hw,
        k,
        grad_out.data(),
        false,
        &col,
        true,
        T::one(),
        grad_weights.data_mut(),
    );
    T::gemm(
        k,
        spec.out_channels,
        hw,
        weights.data(),
        true,
        grad_out.data(),
        false,
        T::zero(),
        &mut col,
    );
    let mut grad_in = Tensor::zeros(input.shape());
    col2im_add(
        &col,
        spec.in_channels,
        h,
        w,
        spec.kernel_h,
        spec.kernel_w,
        spec.pad_h,
        spec.pad_w,
        grad_in.data_mut(),
    );
    Ok(grad_in)
}

/// Same-padded convolution layer owning its weights and bias.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    spec: ConvSpec,
    weight: Param<T>,
    bias: Option<Param<T>>,
    inputs: Vec<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// Zero-initialised layer.
    pub fn new(name: &str, spec: ConvSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Conv2d {
            spec,
            weight: Param::new(format!("{name}.weight"), Tensor::zeros(&spec.weight_shape())),
            bias: spec
                .has_bias
                .then(|| Param::new(format!("{name}.bias"), Tensor::zeros(&[spec.out_channels]))),
            inputs: Vec::new(),
        })
    }

    /// Xavier-uniform weights, zero bias.
    pub fn xavier<R: Rng + ?Sized>(name: &str, spec: ConvSpec, rng: &mut R) -> Result<Self> {
        let mut layer = Self::new(name, spec)?;
        layer.weight.value = init::xavier_uniform(&spec, rng);
        Ok(layer)
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn weight(&self) -> &Param<T> {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Param<T> {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> Option<&mut Param<T>> {
        self.bias.as_mut()
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = conv2d_forward(
            input,
            &self.spec,
            &self.weight.value,
            self.bias.as_ref().map(|b| &b.value),
        )?;
        self.inputs.push(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.inputs.pop().ok_or(Error::NoCache("conv2d"))?;
        conv2d_backward(
            grad_out,
            &input,
            &self.spec,
            &self.weight.value,
            &mut self.weight.grad,
            self.bias.as_mut().map(|b| &mut b.grad),
        )
    }

    fn params(&self) -> Vec<&Param<T>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }

    fn clear_cache(&mut self) {
        self.inputs.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{gradcheck_layer, GradCheckConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop evaluation of the zero-padded correlation.
    fn naive_conv(input: &Tensor<f64>, weights: &Tensor<f64>, bias: Option<&[f64]>) -> Tensor<f64> {
        let [c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
        let [o, _, kh, kw] = [
            weights.shape()[0],
            weights.shape()[1],
            weights.shape()[2],
            weights.shape()[3],
        ];
        let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
        Tensor::from_fn(&[o, h, w], |idx| {
            let (oc, y, x) = (idx[0], idx[1] as isize, idx[2] as isize);
            let mut acc = bias.map_or(0.0, |b| b[oc]);
            for ic in 0..c {
                for i in 0..kh {
                    for j in 0..kw {
                        let sy = y + i as isize - ph as isize;
                        let sx = x + j as isize - pw as isize;
                        if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                            acc += input.get(&[ic, sy as usize, sx as usize])
                                * weights.get(&[oc, ic, i, j]);
                        }
                    }
                }
            }
            acc
        })
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let spec = ConvSpec::same(1, 1, 1, false);
        let w = Tensor::full(&[1, 1, 1, 1], 1.0f32);
        let x = Tensor::from_vec(&[1, 2, 3], vec![1.0, -2.0, 3.0, 4.5, 0.0, 7.0]).unwrap();
        assert_eq!(conv2d_forward(&x, &spec, &w, None).unwrap(), x);
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let spec = ConvSpec::same(1, 1, 3, false);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0f64);
        let x = Tensor::full(&[1, 3, 3], 1.0f64);
        let y = conv2d_forward(&x, &spec, &w, None).unwrap();
        assert_eq!(y.get(&[0, 1, 1]), 9.0);
        assert_eq!(y.get(&[0, 0, 0]), 4.0);
        assert_eq!(y.get(&[0, 0, 1]), 6.0);
    }

    #[test]
    fn same_padding_preserves_extent() {
        let spec = ConvSpec::same(16, 64, 7, true);
        let w = Tensor::zeros(&spec.weight_shape());
        let b = Tensor::zeros(&[64]);
        let x = Tensor::<f32>::zeros(&[16, 32, 32]);
        let y = conv2d_forward(&x, &spec, &w, Some(&b)).unwrap();
        assert_eq!(y.shape(), &[64, 32, 32]);
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (c, o, k, h, w) in [(2, 3, 3, 5, 5), (3, 2, 5, 4, 7), (1, 1, 7, 3, 3), (4, 2, 1, 6, 2), (3, 6, 3, 5, 4), (2, 5, 7, 4, 4)] {
            let spec = ConvSpec::same(c, o, k, true);
            let x = random(&[c, h, w], &mut rng);
            let wt = random(&spec.weight_shape(), &mut rng);
            let b = random(&[o], &mut rng);
            let fast = conv2d_forward(&x, &spec, &wt, Some(&b)).unwrap();
            let slow = naive_conv(&x, &wt, Some(b.data()));
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-12, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch_with_diagnostic() {
        let spec = ConvSpec::same(3, 2, 3, false);
        let w = Tensor::<f32>::zeros(&spec.weight_shape());
        let x = Tensor::zeros(&[2, 4, 4]);
        let err = conv2d_forward(&x, &spec, &w, None).unwrap_err();
        assert!(err.to_string().contains("channels"), "{err}");
        let bad_w = Tensor::<f32>::zeros(&[2, 3, 3, 5]);
        let err = conv2d_forward(&Tensor::zeros(&[3, 4, 4]), &spec, &bad_w, None).unwrap_err();
        assert!(err.to_string().contains("dimension 3"), "{err}");
    }

    #[test]
    fn rejects_even_kernel() {
        let mut spec = ConvSpec::same(1, 1, 4, false);
        spec.pad_h = 1;
        spec.pad_w = 1;
        assert!(Conv2d::<f32>::new("c", spec).is_err());
    }

    #[test]
    fn backward_before_forward_is_rejected() {
        let mut conv = Conv2d::<f32>::new("c", ConvSpec::same(1, 1, 3, true)).unwrap();
        let err = conv.backward(&Tensor::zeros(&[1, 4, 4])).unwrap_err();
        assert!(matches!(err, Error::NoCache(_)));
    }

    #[test]
    fn zero_grad_out_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::<f64>::xavier("c", ConvSpec::same(2, 3, 3, true), &mut rng).unwrap();
        let x = random(&[2, 5, 5], &mut rng);
        conv.forward(&x).unwrap();
        let gi = conv.backward(&Tensor::zeros(&[3, 5, 5])).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        assert!(conv.params().iter().all(|p| p.grad.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn identity_conv_passes_gradient_through() {
        let mut conv = Conv2d::<f64>::new("c", ConvSpec::same(1, 1, 1, false)).unwrap();
        conv.weight_mut().value.fill(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[1, 4, 3], &mut rng);
        let g = random(&[1, 4, 3], &mut rng);
        conv.forward(&x).unwrap();
        assert_eq!(conv.backward(&g).unwrap(), g);
    }

    #[test]
    fn gradients_accumulate_across_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut conv = Conv2d::<f64>::xavier("c", ConvSpec::same(1, 2, 3, true), &mut rng).unwrap();
        let x = random(&[1, 4, 4], &mut rng);
        let g = random(&[2, 4, 4], &mut rng);
        conv.forward(&x).unwrap();
        conv.backward(&g).unwrap();
        let once = conv.params()[0].grad.clone();
        conv.forward(&x).unwrap();
        conv.backward(&g).unwrap();
        let twice = &conv.params()[0].grad;
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradcheck_random_conv() {
        // Three output channels take the direct path, six the unfolded GEMM.
        for (o, seed) in [(3, 5), (6, 6)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut conv = Conv2d::<f64>::xavier("c", ConvSpec::same(2, o, 3, true), &mut rng).unwrap();
            for b in conv.bias_mut().unwrap().value.data_mut() {
                *b = rng.gen_range(-0.5..0.5);
            }
            let x = random(&[2, 5, 5], &mut rng);
            let report = gradcheck_layer(&mut conv, &x, &GradCheckConfig::default(), 11);
            assert!(report.max_rel_error <= 1e-6, "{report}");
        }
    }

    #[test]
    fn direct_and_unfolded_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let spec = ConvSpec::same(3, 2, 5, false);
        let x = random(&[3, 6, 5], &mut rng);
        let wt = random(&spec.weight_shape(), &mut rng);
        let g = random(&[2, 6, 5], &mut rng);
        let mut gw = Tensor::zeros(&spec.weight_shape());
        let gi = conv2d_backward(&g, &x, &spec, &wt, &mut gw, None).unwrap();
        // Same product through the GEMM path: pad the output channels with
        // zero filters so the channel count exceeds the direct threshold.
        let wide = ConvSpec::same(3, 2 + DIRECT_MAX_OUT, 5, false);
        let mut wt_wide = Tensor::zeros(&wide.weight_shape());
        wt_wide.data_mut()[..wt.len()].copy_from_slice(wt.data());
        let mut g_wide = Tensor::zeros(&[2 + DIRECT_MAX_OUT, 6, 5]);
        g_wide.data_mut()[..g.len()].copy_from_slice(g.data());
        let mut gw_wide = Tensor::zeros(&wide.weight_shape());
        let gi_wide = conv2d_backward(&g_wide, &x, &wide, &wt_wide, &mut gw_wide, None).unwrap();
        for (a, b) in gi.data().iter().zip(gi_wide.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in gw.data().iter().zip(&gw_wide.data()[..gw.len()]) {
            assert!((a - b).abs() < 1e-12);
        }
        let out = conv2d_forward(&x, &spec, &wt, None).unwrap();
        let out_wide = conv2d_forward(&x, &wide, &wt_wide, None).unwrap();
        for (a, b) in out.data().iter().zip(out_wide.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn linear_in_input(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = ConvSpec::same(2, 2, 3, false);
            let w = random(&spec.weight_shape(), &mut rng);
            let x = random(&[2, 6, 5], &mut rng);
            let y = random(&[2, 6, 5], &mut rng);
            let combo = x.zip_map(&y, |u, v| a * u + b * v);
            let lhs = conv2d_forward(&combo, &spec, &w, None).unwrap();
            let cx = conv2d_forward(&x, &spec, &w, None).unwrap();
            let cy = conv2d_forward(&y, &spec, &w, None).unwrap();
            for i in 0..lhs.len() {
                let rhs = a * cx.data()[i] + b * cy.data()[i];
                prop_assert!((lhs.data()[i] - rhs).abs() < 1e-12);
            }
        }

        #[test]
        fn translation_equivariant_on_interior(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (h, w, k) = (9usize, 10usize, 3usize);
            let spec = ConvSpec::same(1, 2, k, false);
            let wt = random(&spec.weight_shape(), &mut rng);
            let x = random(&[1, h, w], &mut rng);
            // shifted[y, x] = x[y, x - 1]
            let shifted = Tensor::from_fn(&[1, h, w], |i| if i[2] == 0 { 0.0 } else { x.get(&[0, i[1], i[2] - 1]) });
            let a = conv2d_forward(&x, &spec, &wt, None).unwrap();
            let b = conv2d_forward(&shifted, &spec, &wt, None).unwrap();
            let r = k / 2;
            for o in 0..2 {
                for y in r..h - r {
                    for xx in (r + 1)..w - r {
                        prop_assert!((b.get(&[o, y, xx]) - a.get(&[o, y, xx - 1])).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
