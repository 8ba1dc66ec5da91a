//! Trains the three losses on one synthetic corpus over several seeds and compares
//! steps-to-threshold (first evaluation with sync-vs-near-shift ordering ≥ 0.9) and held-out
//! diarization F1.
//!
//! `cargo run --release --example compare_losses -- [steps] [seeds] [layers]`

use avsync::corpus::{generate_synthetic, SyntheticSpec};
use avsync::diarization::{diarize, f1, DEFAULT_SMOOTHING};
use avsync::features::{extract_clip_features, FeatureClip, MfccConfig, PreprocessOptions};
use avsync::sampling::SamplerConfig;
use avsync::training::{LossKind, TrainConfig, Trainer};

fn held_out_f1(trainer: &Trainer) -> avsync::Result<f64> {
    let clips = trainer.val_corpus().clips();
    let mut total = 0.0;
    for clip in clips {
        let result = diarize(trainer.model(), clip, trainer.config().sampler.width, DEFAULT_SMOOTHING)?;
        total += f1(clip.labels.as_deref().unwrap_or_default(), &result.labels)?;
    }
    Ok(total / clips.len() as f64)
}

fn main() -> avsync::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let steps = args.first().copied().unwrap_or(2000);
    let seeds = args.get(1).copied().unwrap_or(5);
    let layers = args.get(2).copied().unwrap_or(3) as usize;

    let clips: Vec<FeatureClip> = generate_synthetic(&SyntheticSpec::default())?
        .iter()
        .map(|s| extract_clip_features(&s.clip, &MfccConfig::default(), &PreprocessOptions::default()))
        .collect::<avsync::Result<_>>()?;

    for loss in [LossKind::Multinomial, LossKind::Triplet, LossKind::Contrastive] {
        for seed in 0..seeds {
            let config = TrainConfig {
                loss,
                steps,
                layers,
                seed,
                sampler: SamplerConfig { seed, ..SamplerConfig::default() },
                ..TrainConfig::default()
            };
            let started = std::time::Instant::now();
            let mut trainer = Trainer::new(config, clips.clone())?;
            trainer.run_until(steps, None)?;
            let last = trainer.log().evals.last().expect("final evaluation");
            println!(
                "loss={} seed={seed} steps_to_threshold={} final_sync_shift1={:.3} f1={:.3} seconds={:.1}",
                loss.name(),
                trainer.log().steps_to_threshold(0.9).map_or("none".into(), |s| s.to_string()),
                last.rates.sync_shift1,
                held_out_f1(&trainer)?,
                started.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
