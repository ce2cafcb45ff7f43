use super::FlowField;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-output-pixel source coordinates `(x_s, y_s)` in input pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceGrid<T> {
    pub xs: Vec<T>,
    pub ys: Vec<T>,
    pub height: usize,
    pub width: usize,
}

/// `x_s = x_o + t_x(x_o, y_o)`, `y_s = y_o + t_y(x_o, y_o)`: the per-pixel
/// transform `[[1, 0, t_x], [0, 1, t_y]]` applied to `(x_o, y_o, 1)`.
pub fn grid_generate<T: Scalar>(flow: &FlowField<T>) -> SourceGrid<T> {
    let (h, w) = (flow.height(), flow.width());
    let mut xs = Vec::with_capacity(h * w);
    let mut ys = Vec::with_capacity(h * w);
    for y in 0..h {
        let yo = T::from_usize(y).expect("grid index");
        for x in 0..w {
            let xo = T::from_usize(x).expect("grid index");
            let i = y * w + x;
            xs.push(xo + flow.tx()[i]);
            ys.push(yo + flow.ty()[i]);
        }
    }
    SourceGrid {
        xs,
        ys,
        height: h,
        width: w,
    }
}

/// The transform has unit Jacobian in `(t_x, t_y)`, so coordinate gradients
/// pass through unchanged.
pub fn grid_generate_backward<T: Scalar>(grad_xs: &[T], grad_ys: &[T], height: usize, width: usize) -> Result<FlowField<T>> {
    if grad_xs.len() != height * width || grad_ys.len() != height * width {
        return Err(Error::shape("grid gradient", height * width, grad_xs.len().max(grad_ys.len())));
    }
    let mut data = Vec::with_capacity(2 * height * width);
    data.extend_from_slice(grad_xs);
    data.extend_from_slice(grad_ys);
    FlowField::new(Tensor::from_vec(&[2, height, width], data)?)
}

/// Neighbour indices and interpolation weights along one axis after clamping
/// the coordinate into `[0, n−1]`. `inside` is false when clamping moved it.
struct Axis<T> {
    lo: usize,
    hi: usize,
    frac: T,
    inside: bool,
}

fn axis<T: Scalar>(coord: T, n: usize) -> Axis<T> {
    let max = T::from_usize(n - 1).expect("extent");
    let inside = coord >= T::zero() && coord <= max;
    let c = coord.max(T::zero()).min(max);
    let lo = c.floor().to_usize().unwrap_or(0).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    Axis {
        lo,
        hi,
        frac: c - T::from_usize(lo).expect("index"),
        inside,
    }
}

fn check_sample_args<T: Scalar>(input: &Tensor<T>, grid: &SourceGrid<T>) -> Result<(usize, usize, usize)> {
    let s = input.shape();
    if s.len() != 3 {
        return Err(Error::shape("sampler input (rank)", 3, s.len()));
    }
    if grid.xs.len() != grid.height * grid.width || grid.ys.len() != grid.xs.len() {
        return Err(Error::shape("sampler grid", grid.height * grid.width, grid.xs.len()));
    }
    Ok((s[0], s[1], s[2]))
}

/// Bilinear interpolation of every channel of `input` at the grid
/// coordinates, clamped to the image (border replication). The output has the
/// grid's extent.
pub fn bilinear_sample<T: Scalar>(input: &Tensor<T>, grid: &SourceGrid<T>) -> Result<Tensor<T>> {
    let (c, h, w) = check_sample_args(input, grid)?;
    let n = grid.height * grid.width;
    let mut out = Tensor::zeros(&[c, grid.height, grid.width]);
    let one = T::one();
    for p in 0..n {
        let ax = axis(grid.xs[p], w);
        let ay = axis(grid.ys[p], h);
        for ch in 0..c {
            let img = input.channel(ch);
            let top = (one - ax.frac) * img[ay.lo * w + ax.lo] + ax.frac * img[ay.lo * w + ax.hi];
            let bottom = (one - ax.frac) * img[ay.hi * w + ax.lo] + ax.frac * img[ay.hi * w + ax.hi];
            out.data_mut()[ch * n + p] = (one - ay.frac) * top + ay.frac * bottom;
        }
    }
    Ok(out)
}

/// Gradients of the sampler with respect to its input image and to the
/// source coordinates. Coordinates moved by clamping have zero gradient.
pub fn bilinear_sample_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    grid: &SourceGrid<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let (c, h, w) = check_sample_args(input, grid)?;
    grad_out.expect_shape("sampler grad_out", &[c, grid.height, grid.width])?;
    let n = grid.height * grid.width;
    let mut grad_in = Tensor::zeros(input.shape());
    let mut gxs = vec![T::zero(); n];
    let mut gys = vec![T::zero(); n];
    let one = T::one();
    for p in 0..n {
        let ax = axis(grid.xs[p], w);
        let ay = axis(grid.ys[p], h);
        let (i00, i01, i10, i11) = (
            ay.lo * w + ax.lo,
            ay.lo * w + ax.hi,
            ay.hi * w + ax.lo,
            ay.hi * w + ax.hi,
        );
        let (mut dx, mut dy) = (T::zero(), T::zero());
        for ch in 0..c {
            let g = grad_out.data()[ch * n + p];
            let img = input.channel(ch);
            {
                let gi = grad_in.channel_mut(ch);
                gi[i00] += g * (one - ax.frac) * (one - ay.frac);
                gi[i01] += g * ax.frac * (one - ay.frac);
                gi[i10] += g * (one - ax.frac) * ay.frac;
                gi[i11] += g * ax.frac * ay.frac;
            }
            dx += g * ((one - ay.frac) * (img[i01] - img[i00]) + ay.frac * (img[i11] - img[i10]));
            dy += g * ((one - ax.frac) * (img[i10] - img[i00]) + ax.frac * (img[i11] - img[i01]));
        }
        if ax.inside {
            gxs[p] = dx;
        }
        if ay.inside {
            gys[p] = dy;
        }
    }
    Ok((grad_in, gxs, gys))
}

#[derive(Clone, Debug)]
struct WarpCache<T> {
    input: Tensor<T>,
    grid: SourceGrid<T>,
}

/// Grid generator followed by the bilinear sampler, differentiable in both the
/// warped features and the flow.
#[derive(Clone, Debug, Default)]
pub struct Warp<T> {
    caches: Vec<WarpCache<T>>,
}

impl<T: Scalar> Warp<T> {
    pub fn new() -> Self {
        Warp { caches: Vec::new() }
    }

    pub fn forward(&mut self, input: &Tensor<T>, flow: &FlowField<T>) -> Result<Tensor<T>> {
        let s = input.shape();
        if s.len() != 3 || s[1] != flow.height() || s[2] != flow.width() {
            return Err(Error::shape(
                "warp input vs flow",
                [flow.height(), flow.width()],
                s,
            ));
        }
        let grid = grid_generate(flow);
        let out = bilinear_sample(input, &grid)?;
        self.caches.push(WarpCache {
            input: input.clone(),
            grid,
        });
        Ok(out)
    }

    /// Returns `(grad_input, grad_flow)`.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let cache = self.caches.pop().ok_or(Error::NoCache("warp"))?;
        let (gi, gx, gy) = bilinear_sample_backward(grad_out, &cache.input, &cache.grid)?;
        let gf = grid_generate_backward(&gx, &gy, cache.grid.height, cache.grid.width)?;
        Ok((gi, gf.into_tensor()))
    }

    pub fn clear_cache(&mut self) {
        self.caches.clear();
    }
}

fn check_pair<T: Scalar>(frame: &Tensor<T>, next: &Tensor<T>, flow: &FlowField<T>) -> Result<()> {
    frame.same_shape(next, "warp_error frame pair")?;
    let s = frame.shape();
    if s.len() != 3 || s[1] != flow.height() || s[2] != flow.width() {
        return Err(Error::shape("warp_error flow", [flow.height(), flow.width()], s));
    }
    Ok(())
}

/// Mean absolute difference between `next` and `frame` warped by `flow`.
pub fn warp_error<T: Scalar>(frame: &Tensor<T>, next: &Tensor<T>, flow: &FlowField<T>) -> Result<f64> {
    warp_error_interior(frame, next, flow, 0)
}

/// As [`warp_error`] but ignoring a border band of `margin` pixels.
pub fn warp_error_interior<T: Scalar>(
    frame: &Tensor<T>,
    next: &Tensor<T>,
    flow: &FlowField<T>,
    margin: usize,
) -> Result<f64> {
    check_pair(frame, next, flow)?;
    let warped = bilinear_sample(frame, &grid_generate(flow))?;
    let (c, h, w) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
    if 2 * margin >= h || 2 * margin >= w {
        return Err(Error::InvalidArgument(format!("margin {margin} leaves no interior in {h}×{w}")));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        for y in margin..h - margin {
            for x in margin..w - margin {
                let i = (ch * h + y) * w + x;
                total += (warped.data()[i] - next.data()[i]).abs().to_f64().unwrap_or(f64::NAN);
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{gradcheck, Checkable, GradCheckConfig};
    use crate::nn::init;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_flow_grid_is_identity() {
        let grid = grid_generate(&FlowField::<f32>::zeros(3, 4));
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(grid.xs[y * 4 + x], x as f32);
                assert_eq!(grid.ys[y * 4 + x], y as f32);
            }
        }
    }

    #[test]
    fn grid_substitution() {
        let flow = FlowField::from_fn(10, 10, |x, y| if (x, y) == (5, 7) { (2.0f64, -1.0) } else { (0.0, 0.0) });
        let grid = grid_generate(&flow);
        assert_eq!((grid.xs[7 * 10 + 5], grid.ys[7 * 10 + 5]), (7.0, 6.0));
    }

    #[test]
    fn grid_backward_is_unit() {
        let gx = vec![1.0f64, 2.0, 3.0, 4.0];
        let gy = vec![-1.0f64, -2.0, -3.0, -4.0];
        let f = grid_generate_backward(&gx, &gy, 2, 2).unwrap();
        assert_eq!(f.tx(), &gx[..]);
        assert_eq!(f.ty(), &gy[..]);
    }

    #[test]
    fn half_pixel_sample() {
        let img = Tensor::from_vec(&[1, 1, 2], vec![4.0f64, 6.0]).unwrap();
        let grid = SourceGrid {
            xs: vec![0.5],
            ys: vec![0.0],
            height: 1,
            width: 1,
        };
        assert_eq!(bilinear_sample(&img, &grid).unwrap().data(), &[5.0]);
    }

    #[test]
    fn integer_shift_moves_image_left() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img: Tensor<f32> = init::uniform(&[2, 6, 7], 0.0, 1.0, &mut rng);
        let flow = FlowField::constant(1.0, 0.0, 6, 7);
        let out = bilinear_sample(&img, &grid_generate(&flow)).unwrap();
        for c in 0..2 {
            for y in 0..6 {
                for x in 0..6 {
                    assert_eq!(out.get(&[c, y, x]), img.get(&[c, y, x + 1]));
                }
                // Last column replicates the border.
                assert_eq!(out.get(&[c, y, 6]), img.get(&[c, y, 6]));
            }
        }
    }

    #[test]
    fn out_of_bounds_clamps_and_has_zero_coordinate_gradient() {
        let img = Tensor::from_fn(&[1, 3, 3], |i| (i[1] * 3 + i[2]) as f64);
        let grid = SourceGrid {
            xs: vec![-2.0, 5.0],
            ys: vec![1.0, 1.0],
            height: 1,
            width: 2,
        };
        let out = bilinear_sample(&img, &grid).unwrap();
        assert_eq!(out.data(), &[3.0, 5.0]);
        let (_, gx, _) = bilinear_sample_backward(&Tensor::full(&[1, 1, 2], 1.0), &img, &grid).unwrap();
        assert_eq!(gx, vec![0.0, 0.0]);
    }

    #[test]
    fn warp_error_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img: Tensor<f64> = init::uniform(&[1, 8, 8], 0.0, 1.0, &mut rng);
        assert_eq!(warp_error(&img, &img, &FlowField::zeros(8, 8)).unwrap(), 0.0);
        // next[x] = img[x + 1]
        let next = Tensor::from_fn(&[1, 8, 8], |i| img.get(&[0, i[1], (i[2] + 1).min(7)]));
        let e = warp_error_interior(&img, &next, &FlowField::constant(1.0, 0.0, 8, 8), 1).unwrap();
        assert_eq!(e, 0.0);
        assert!(warp_error(&img, &Tensor::zeros(&[1, 8, 9]), &FlowField::zeros(8, 8)).is_err());
    }

    /// Probe over the warp with loss `Σ r ⊙ S(input, GG(flow))`.
    struct WarpCheck {
        input: Tensor<f64>,
        flow: Tensor<f64>,
        r: Tensor<f64>,
    }

    impl Checkable for WarpCheck {
        fn tensor_names(&self) -> Vec<String> {
            vec!["input".into(), "flow".into()]
        }
        fn tensor_mut(&mut self, i: usize) -> &mut Tensor<f64> {
            if i == 0 {
                &mut self.input
            } else {
                &mut self.flow
            }
        }
        fn loss(&mut self) -> Result<f64> {
            let mut warp = Warp::new();
            let out = warp.forward(&self.input, &FlowField::new(self.flow.clone())?)?;
            Ok(out.data().iter().zip(self.r.data()).map(|(a, b)| a * b).sum())
        }
        fn gradients(&mut self) -> Result<Vec<Tensor<f64>>> {
            let mut warp = Warp::new();
            warp.forward(&self.input, &FlowField::new(self.flow.clone())?)?;
            let (gi, gf) = warp.backward(&self.r)?;
            Ok(vec![gi, gf])
        }
    }

    fn away_from_integers(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        // Fractional parts in [0.1, 0.9] keep every coordinate ≥ 1e-3 from the kink set.
        Tensor::from_fn(shape, |_| rng.gen_range(-2..2) as f64 + rng.gen_range(0.1..0.9))
    }

    #[test]
    fn gradcheck_values_and_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (h, w) = (7, 8);
        // Interior pixels only displaced, so no coordinate leaves the image.
        let mut flow = away_from_integers(&mut rng, &[2, h, w]);
        for y in 0..h {
            for x in 0..w {
                let (tx, ty) = (flow.get(&[0, y, x]), flow.get(&[1, y, x]));
                let fx = (x as f64 + tx).clamp(0.2, w as f64 - 1.2) - x as f64;
                let fy = (y as f64 + ty).clamp(0.2, h as f64 - 1.2) - y as f64;
                let fx = if (x as f64 + fx).fract() < 0.05 { fx + 0.1 } else { fx };
                let fy = if (y as f64 + fy).fract() < 0.05 { fy + 0.1 } else { fy };
                flow.set(&[0, y, x], fx);
                flow.set(&[1, y, x], fy);
            }
        }
        let mut check = WarpCheck {
            input: init::uniform(&[3, h, w], -1.0, 1.0, &mut rng),
            flow,
            r: init::uniform(&[3, h, w], -1.0, 1.0, &mut rng),
        };
        let report = gradcheck(&mut check, &GradCheckConfig::default());
        assert!(report.max_rel_error <= 1e-5, "{report}");
    }

    proptest! {
        #[test]
        fn zero_flow_is_bit_exact_identity(vals in proptest::collection::vec(-10.0f32..10.0, 3 * 5 * 4)) {
            let img = Tensor::from_vec(&[3, 5, 4], vals).unwrap();
            let out = bilinear_sample(&img, &grid_generate(&FlowField::zeros(5, 4))).unwrap();
            prop_assert_eq!(out, img);
        }
    }
}
