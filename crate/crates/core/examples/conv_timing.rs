//! Forward/backward wall time of representative convolution shapes.

use std::time::Instant;
use vidpred::nn::{conv2d_backward, conv2d_forward, ConvSpec};
use vidpred::Tensor;

fn main() {
    for (c, o, k, hw) in [(80usize, 256usize, 7usize, 32usize), (64, 2, 15, 32), (2, 2, 15, 32), (1, 16, 7, 64), (16, 1, 7, 64)] {
        let spec = ConvSpec::same(c, o, k, false);
        let x = Tensor::<f32>::full(&[c, hw, hw], 0.1);
        let wt = Tensor::<f32>::full(&spec.weight_shape(), 0.01);
        let g = Tensor::<f32>::full(&[o, hw, hw], 0.01);
        let mut gw = Tensor::<f32>::zeros(&spec.weight_shape());
        let t = Instant::now();
        for _ in 0..5 { conv2d_forward(&x, &spec, &wt, None).unwrap(); }
        let f = t.elapsed().as_secs_f64() / 5.0;
        let t = Instant::now();
        for _ in 0..5 { conv2d_backward(&g, &x, &spec, &wt, &mut gw, None).unwrap(); }
        let b = t.elapsed().as_secs_f64() / 5.0;
        println!("c{c} o{o} k{k} {hw}: fwd {:.2} ms bwd {:.2} ms", f * 1e3, b * 1e3);
    }
}
