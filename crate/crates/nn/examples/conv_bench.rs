//! Times one conv3d forward and backward pass at a few layer sizes.

use std::time::Instant;

use shapeflow_nn::{Tape, Tensor};

fn main() {
    let sizes = [
        (8, 16, [40, 20, 20]),
        (16, 16, [40, 20, 20]),
        (32, 16, [40, 20, 20]),
        (32, 32, [20, 10, 10]),
    ];
    for (c, f, [d, h, w]) in sizes {
        let vol = d * h * w;
        let x = Tensor::<f32>::new(
            vec![1, c, d, h, w],
            (0..c * vol).map(|i| (i as f32 * 0.01).sin()).collect(),
        )
        .unwrap();
        let k = Tensor::<f32>::new(
            vec![f, c, 3, 3, 3],
            (0..f * c * 27).map(|i| (i as f32 * 0.1).cos() * 0.1).collect(),
        )
        .unwrap();
        let reps = 5;
        let t0 = Instant::now();
        for _ in 0..reps {
            let mut tape = Tape::new();
            let xv = tape.param(x.clone());
            let wv = tape.param(k.clone());
            let bv = tape.param(Tensor::zeros(&[f]));
            let y = tape.conv3d(xv, wv, bv).unwrap();
            let cot = Tensor::full(tape.value(y).shape(), 1.0f32);
            tape.backward_with(y, cot).unwrap();
        }
        let secs = t0.elapsed().as_secs_f64() / reps as f64;
        let flops = 3.0 * 2.0 * 27.0 * (c * f * vol) as f64;
        println!(
            "{c}->{f} {d}x{h}x{w}: {:.1} ms, {:.1} GFLOP/s",
            secs * 1e3,
            flops / secs / 1e9
        );
    }
}
