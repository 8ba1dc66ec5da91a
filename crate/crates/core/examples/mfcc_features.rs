//! MFCCs of a synthetic two-tone waveform: the 13 coefficients at 100 frames per second.
//!
//! `cargo run --release --example mfcc_features`

use avsync::features::{mfcc, MfccConfig};

fn main() -> avsync::Result<()> {
    let rate = 16_000;
    // Half a second of 300 Hz followed by half a second of 1200 Hz.
    let wave: Vec<f64> = (0..rate)
        .map(|n| {
            let t = n as f64 / rate as f64;
            let f = if t < 0.5 { 300.0 } else { 1200.0 };
            0.5 * (2.0 * std::f64::consts::PI * f * t).sin()
        })
        .collect();
    let out = mfcc(&wave, rate, &MfccConfig::default())?;
    println!("{} frames x {} coefficients at {} Hz", out.frames.rows(), out.frames.cols(), out.rate);
    for r in [10, 40, 60, 90] {
        let row: Vec<String> = out.frames.row(r).iter().take(6).map(|c| format!("{c:8.3}")).collect();
        println!("frame {r:3}: {} ...", row.join(" "));
    }
    Ok(())
}
