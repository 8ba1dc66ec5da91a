//! Draws one batch per loss layout from a small corpus and shows the labels involved.
//!
//! `cargo run --release --example pair_sampling`

use avsync::corpus::{generate_synthetic, SyntheticSpec};
use avsync::features::{extract_clip_features, MfccConfig, PreprocessOptions};
use avsync::sampling::{sample_batch, Batch, BatchMode, Corpus, SamplerConfig};

fn main() -> avsync::Result<()> {
    let spec = SyntheticSpec {
        n_clips: 6,
        clip_seconds: 4.0,
        ..SyntheticSpec::default()
    };
    let clips = generate_synthetic(&spec)?
        .iter()
        .map(|s| extract_clip_features(&s.clip, &MfccConfig::default(), &PreprocessOptions::default()))
        .collect::<avsync::Result<Vec<_>>>()?;
    let corpus = Corpus::new(clips)?;
    let config = SamplerConfig::default();

    for mode in [BatchMode::Contrastive, BatchMode::Triplet, BatchMode::Multinomial] {
        match sample_batch(&corpus, &config, 4, mode, 0)? {
            Batch::Contrastive(pairs) => {
                for p in &pairs {
                    println!("contrastive {:?} synchronized={} {:?}", p.pair.segment, p.synchronized, p.pair.label);
                }
            }
            Batch::Triplet(triplets) => {
                for t in &triplets {
                    println!("triplet clip {} start {}: positive {:?}, negative {:?}", t.segment.clip, t.segment.start, t.positive.label, t.negative.label);
                }
            }
            Batch::Multinomial(anchors) => {
                for a in &anchors {
                    println!(
                        "multinomial clip {} track {} start {}: {} shifted audios, heterologous from anchors {:?}",
                        a.segment.clip,
                        a.segment.track,
                        a.segment.start,
                        a.shifted.len(),
                        a.heterologous
                    );
                }
            }
        }
    }
    Ok(())
}
