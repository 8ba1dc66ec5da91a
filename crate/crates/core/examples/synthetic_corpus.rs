//! Generates a small synthetic corpus, prints a summary per clip and writes it to disk.
//!
//! `cargo run --release --example synthetic_corpus -- [out_dir]`

use avsync::corpus::{generate_synthetic, write_synthetic_corpus, SyntheticSpec};

fn main() -> avsync::Result<()> {
    let spec = SyntheticSpec {
        n_clips: 4,
        clip_seconds: 4.0,
        ..SyntheticSpec::default()
    };
    for s in generate_synthetic(&spec)? {
        let labels = s.clip.labels.as_deref().unwrap_or_default();
        let turns = 1 + labels.windows(2).filter(|w| w[0] != w[1]).count();
        println!(
            "{}: {} frames at {} fps, {} tracks, {} audio samples at {} Hz, speaker turns: {turns}",
            s.clip.id,
            s.clip.frame_count(),
            s.clip.video_fps,
            s.clip.tracks.len(),
            s.clip.audio.samples.len(),
            s.clip.audio.sample_rate
        );
    }
    if let Some(out) = std::env::args().nth(1) {
        let dirs = write_synthetic_corpus(&spec, std::path::Path::new(&out))?;
        println!("wrote {} clip directories under {out}", dirs.len());
    }
    Ok(())
}
