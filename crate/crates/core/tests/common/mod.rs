#![allow(dead_code)]

use netdyn::tensor::{Tape, Tensor, Var};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Worst relative error between reverse-mode gradients of `build` and
/// central differences with step `h`, over every entry of every input.
///
/// `build` records a scalar on the tape from the registered inputs.
pub fn gradient_check(
    inputs: &[Tensor],
    h: f64,
    floor: f64,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
) -> f64 {
    let eval = |xs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).item().unwrap()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    let mut xs = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let g = grads.get_or_zeros(*v);
        for e in 0..xs[k].len() {
            let orig = xs[k].data()[e];
            xs[k].data_mut()[e] = orig + h;
            let up = eval(&xs);
            xs[k].data_mut()[e] = orig - h;
            let down = eval(&xs);
            xs[k].data_mut()[e] = orig;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(g.data()[e], fd, floor));
        }
    }
    worst
}
