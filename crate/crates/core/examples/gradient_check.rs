//! Compares reverse-mode parameter gradients of a small static-edge and
//! attention model against central finite differences.
//!
//! cargo run --release --example gradient_check

use netdyn::model::{Model, ModelConfig, OdeKind};
use netdyn::tensor::Tensor;
use rand::{Rng, SeedableRng};

fn main() -> netdyn::error::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut random = |rows: usize, cols: usize| {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(0.0..2.0)).collect())
    };
    let obs = random(5, 5)?;
    let targets: Vec<Tensor> = (0..3).map(|_| random(5, 1)).collect::<Result<_, _>>()?;
    for ode_type in [OdeKind::StaticEdge, OdeKind::AttentionEdge] {
        let cfg = ModelConfig {
            latent_dim: 4,
            t_obs: 5,
            ode_type,
            ..Default::default()
        };
        let mut model = Model::new(cfg, 1)?;
        let (loss, grads) = model.loss_and_grad(&obs, &targets, 0.1)?;
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..grads.len() {
            for e in 0..grads[k].len() {
                let orig = model.params().tensors()[k].data()[e];
                model.params_mut().tensors_mut()[k].data_mut()[e] = orig + h;
                let up = model.loss(&obs, &targets, 0.1)?;
                model.params_mut().tensors_mut()[k].data_mut()[e] = orig - h;
                let down = model.loss(&obs, &targets, 0.1)?;
                model.params_mut().tensors_mut()[k].data_mut()[e] = orig;
                let fd = (up - down) / (2.0 * h);
                let g = grads[k].data()[e];
                worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-4));
            }
        }
        println!(
            "{:<10} {} parameters, loss {loss:.6}, max relative gradient error {worst:.2e}",
            ode_type.model_name(),
            model.n_parameters()
        );
    }
    Ok(())
}
