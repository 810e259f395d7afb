//! Trains toy models with and without residual augmentation and prints the
//! ablation table.
//!
//! `cargo run --release --example ablation -- [steps] [seed...]`

use std::time::Instant;

use innsteg::evaluation::{run_ablation, ABLATION_WITHOUT_RA, ABLATION_WITH_RA};
use innsteg::synth::synthetic_dataset;
use innsteg::training::{TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1000);
    let mut seeds: Vec<u64> = args.map(|s| s.parse()).collect::<Result<_, _>>()?;
    if seeds.is_empty() {
        seeds.push(0);
    }

    let mut data_rng = ChaCha8Rng::seed_from_u64(1);
    let train = synthetic_dataset(200, 40, &mut data_rng);
    let test = synthetic_dataset(100, 32, &mut data_rng);

    for seed in seeds {
        let mut models = Vec::with_capacity(2);
        for ra in [true, false] {
            let cfg = TrainConfig {
                epochs: usize::MAX,
                max_steps: Some(steps),
                residual_augmentation: ra,
                seed,
                ..TrainConfig::toy()
            };
            let mut trainer = Trainer::new(cfg)?;
            let start = Instant::now();
            while trainer.step < steps {
                trainer.run_epoch(&train)?;
            }
            eprintln!("seed {seed} ra={ra}: {steps} steps in {:.0}s", start.elapsed().as_secs_f64());
            models.push(trainer.model);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let report = run_ablation(&models[0], &models[1], &test[..50], &test[50..], 25.0, &mut rng)?;
        println!("seed {seed} ({ABLATION_WITH_RA} vs {ABLATION_WITHOUT_RA})");
        print!("{}", report.table());
    }
    Ok(())
}
