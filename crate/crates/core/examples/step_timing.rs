//! Times forward/backward passes of a preset on random data.
//!
//! cargo run --release -p plaincnn --example step_timing -- mnist 256 5

use std::time::Instant;

use plaincnn::nn::{build_preset, init_parameters, loss_and_gradients, Parameters, Preset};
use plaincnn::{Rng, Tensor};

fn main() -> plaincnn::Result<()> {
    let mut args = std::env::args().skip(1);
    let preset: Preset = args.next().as_deref().unwrap_or("mnist").parse()?;
    let batch: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(preset.batch_size());
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);

    let spec = build_preset(preset, preset.default_paradigm())?;
    let params: Parameters<f32> = init_parameters(&spec, &mut Rng::new(0));
    let [c, h, w] = spec.input_shape();
    let mut rng = Rng::new(1);
    let x = Tensor::from_vec(
        &[batch, c, h, w],
        (0..batch * c * h * w).map(|_| rng.uniform() as f32).collect(),
    )?;
    let labels: Vec<usize> = (0..batch).map(|i| i % spec.classes()).collect();

    for step in 0..steps {
        let t = Instant::now();
        let out = loss_and_gradients(&spec, &params, &x, &labels, &mut rng)?;
        println!(
            "step {step}: loss {:.4} in {:.3}s",
            out.loss,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
