//! Evaluates the three objectives on small hand-built embeddings.
//!
//! `cargo run --release --example losses`

use avsync::losses::{
    contrastive_loss, dynamic_triplet_loss, multinomial_loss, AnchorTerms, ContrastiveConfig, MultinomialConfig,
    TripletConfig,
};
use avsync::numeric::Matrix;
use avsync::sampling::PairLabel;

fn main() -> avsync::Result<()> {
    let (value, grads) = contrastive_loss(&[(0.2, true), (0.5, false), (1.5, false)], &ContrastiveConfig::default())?;
    println!("contrastive: {value:.4}, dL/dd = {grads:?}");

    let tri = dynamic_triplet_loss(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 0.5], &TripletConfig { alpha: 0.5 })?;
    println!("triplet: {:.4}, dL/danchor = {:?}", tri.value, tri.d_anchor);

    // One anchor at the origin; audio rows get farther from it as the offset grows.
    let shifts: Vec<i32> = (-10..=10).filter(|&j| j != 0).collect();
    let mut rows = vec![vec![0.1, 0.0]];
    rows.extend(shifts.iter().map(|&j| vec![0.3 * j.abs() as f64, 0.0]));
    rows.push(vec![0.0, 4.0]);
    let audio = Matrix::from_rows(&rows)?;
    let video = Matrix::zeros(1, 2);
    let mut audios = vec![(PairLabel::Synchronized, 0)];
    audios.extend(shifts.iter().enumerate().map(|(k, &j)| (PairLabel::Shifted(j), k + 1)));
    audios.push((PairLabel::Heterologous { source_clip: 1 }, rows.len() - 1));
    let anchors = [AnchorTerms { video: 0, audios }];
    for soft_hinge in [false, true] {
        let cfg = MultinomialConfig { soft_hinge, ..MultinomialConfig::default() };
        let out = multinomial_loss(&video, &audio, &anchors, &cfg)?;
        println!("multinomial (soft_hinge={soft_hinge}): {:.4}, dL/dvideo = {:?}", out.value, out.d_video.row(0));
    }
    Ok(())
}
