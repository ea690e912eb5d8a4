//! Times one SGD step and one inference pass on a batch of 64 patches.
//!
//! `cargo run --release -p cgni-core --features parallel --example step_timing [patch]`

use std::time::Instant;

use cgni_core::{HpfSelector, ModelConfig, Network, Shape, Tensor, TrainConfig, Trainer};

const BATCH: usize = 64;
const REPEATS: u32 = 10;

fn main() {
    let patch: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(64);
    let net = Network::<f32>::new(ModelConfig::with_input_size(HpfSelector::Hpf3, patch), 0).unwrap();
    let mut trainer = Trainer::new(net, TrainConfig::default()).unwrap();
    let data = (0..BATCH * patch * patch).map(|i| ((i * 7919) % 255) as f32).collect();
    let x = Tensor::from_vec(Shape::new(BATCH, 1, patch, patch), data).unwrap();
    let labels: Vec<usize> = (0..BATCH).map(|i| i % 2).collect();

    trainer.step(&x, &labels).unwrap();
    let start = Instant::now();
    for _ in 0..REPEATS {
        trainer.step(&x, &labels).unwrap();
    }
    println!("train step: {:?}", start.elapsed() / REPEATS);

    let start = Instant::now();
    for _ in 0..REPEATS {
        trainer.network().logits(&x).unwrap();
    }
    println!("inference:  {:?}", start.elapsed() / REPEATS);
}
