//! Trains a small model briefly, then diarizes a held-out clip and scores it.
//!
//! `cargo run --release --example diarize -- [steps]`

use avsync::diarization::{der, diarize, f1, DEFAULT_SMOOTHING};
use avsync::corpus::{generate_synthetic, SyntheticSpec};
use avsync::features::{extract_clip_features, MfccConfig, PreprocessOptions};
use avsync::training::{TrainConfig, Trainer};

fn main() -> avsync::Result<()> {
    let steps = std::env::args().nth(1).map_or(600, |a| a.parse().expect("step count"));
    let spec = SyntheticSpec {
        n_clips: 60,
        ..SyntheticSpec::default()
    };
    let clips = generate_synthetic(&spec)?
        .iter()
        .map(|s| extract_clip_features(&s.clip, &MfccConfig::default(), &PreprocessOptions::default()))
        .collect::<avsync::Result<Vec<_>>>()?;
    let config = TrainConfig {
        steps,
        layers: 3,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config, clips)?;
    trainer.run_until(steps, None)?;

    let clip = &trainer.val_corpus().clips()[0];
    let result = diarize(trainer.model(), clip, trainer.config().sampler.width, DEFAULT_SMOOTHING)?;
    let reference = clip.labels.as_deref().unwrap_or_default();
    println!("clip {}: {} frames, {} tracks", clip.id, result.labels.len(), result.raw.tracks());
    println!("DER {:.1}%  F1 {:.1}%", 100.0 * der(reference, &result.labels)?, 100.0 * f1(reference, &result.labels)?);
    let strip = |l: &[usize]| l.iter().step_by(5).map(|t| char::from(b'0' + *t as u8)).collect::<String>();
    println!("reference  {}", strip(reference));
    println!("hypothesis {}", strip(&result.labels));
    Ok(())
}
