//! Trains the two-stream model on an in-memory synthetic corpus and prints the evaluation log.
//!
//! `cargo run --release --example train_sync -- [loss] [steps] [seed]`

use avsync::corpus::{generate_synthetic, SyntheticSpec};
use avsync::features::{extract_clip_features, MfccConfig, PreprocessOptions};
use avsync::training::{LossKind, TrainConfig, Trainer};

fn main() -> avsync::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let loss = LossKind::parse(args.first().map_or("multinomial", String::as_str))?;
    let steps = args.get(1).map_or(Ok(1000), |s| s.parse()).expect("steps");
    let seed = args.get(2).map_or(Ok(0), |s| s.parse()).expect("seed");

    let clips = generate_synthetic(&SyntheticSpec::default())?
        .iter()
        .map(|s| extract_clip_features(&s.clip, &MfccConfig::default(), &PreprocessOptions::default()))
        .collect::<avsync::Result<Vec<_>>>()?;
    let config = TrainConfig {
        loss,
        steps,
        seed,
        sampler: avsync::sampling::SamplerConfig {
            seed,
            ..Default::default()
        },
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config, clips)?;
    let started = std::time::Instant::now();
    trainer.run_until(steps, None)?;
    for e in &trainer.log().evals {
        println!(
            "step={} sync_shift1={:.3} shift1_shift2={:.3} shift2_het={:.3} val_loss={:.4}",
            e.step, e.rates.sync_shift1, e.rates.shift1_shift2, e.rates.shift2_het, e.val_loss
        );
    }
    println!("steps_to_0.9={:?}", trainer.log().steps_to_threshold(0.9));
    println!("seconds={:.1}", started.elapsed().as_secs_f64());
    Ok(())
}
