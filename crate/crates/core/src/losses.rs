//! Contrastive, dynamic triplet and multinomial (clustered LogSumExp) objectives over
//! embeddings, each returning its value and gradients with respect to every embedding row.

use crate::error::{Error, Result};
use crate::numeric::{logsumexp, softmax, Matrix};
use crate::sampling::PairLabel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveConfig {
    pub alpha: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig { alpha: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletConfig {
    pub alpha: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig { alpha: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultinomialConfig {
    pub m1: u32,
    pub m2: u32,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    /// Squared l2 when set, plain l2 otherwise.
    pub squared_distance: bool,
    /// Each group term becomes `log(1 + Σ exp(α − D))`, a smooth hinge that vanishes once the
    /// group is beyond its margin. Off gives the plain LogSumExp, which is unbounded below.
    pub soft_hinge: bool,
}

impl Default for MultinomialConfig {
    fn default() -> Self {
        MultinomialConfig {
            m1: 5,
            m2: 10,
            alpha1: 1.0,
            alpha2: 2.0,
            alpha3: 10.0,
            squared_distance: true,
            soft_hinge: false,
        }
    }
}

fn check_margin(name: &str, alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be a positive finite margin, got {alpha}")))
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        check_margin("alpha", self.alpha)
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        check_margin("alpha", self.alpha)
    }
}

impl MultinomialConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0 < self.m1 && self.m1 < self.m2) {
            return Err(Error::config(format!("need 0 < m1 < m2, got m1={} m2={}", self.m1, self.m2)));
        }
        check_margin("alpha1", self.alpha1)?;
        check_margin("alpha2", self.alpha2)?;
        check_margin("alpha3", self.alpha3)
    }

    /// Near shifts, far shifts and heterologous audio, with their margins.
    pub fn cluster_spec(&self) -> ClusterSpec {
        ClusterSpec {
            clusters: vec![
                Cluster {
                    members: LabelSet::Shifts { above: 0, up_to: self.m1 },
                    margin: self.alpha1,
                },
                Cluster {
                    members: LabelSet::Shifts { above: self.m1, up_to: self.m2 },
                    margin: self.alpha2,
                },
                Cluster {
                    members: LabelSet::Heterologous,
                    margin: self.alpha3,
                },
            ],
            squared_distance: self.squared_distance,
            soft_hinge: self.soft_hinge,
        }
    }
}

/// Value plus `∂L/∂(video row)` and `∂L/∂(audio row)` for every embedding supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub d_video: Matrix,
    pub d_audio: Matrix,
}

fn check_same_dim(video: &Matrix, audio: &Matrix) -> Result<()> {
    if video.cols() != audio.cols() {
        return Err(Error::DimensionMismatch {
            expected: video.cols(),
            actual: audio.cols(),
        });
    }
    Ok(())
}

/// `D(v, a)` and `∂D/∂v` (`∂D/∂a` is its negation). Plain l2 has gradient 0 at `v = a`.
fn distance_and_grad(v: &[f64], a: &[f64], squared: bool) -> (f64, Vec<f64>) {
    let diff: Vec<f64> = v.iter().zip(a).map(|(x, y)| x - y).collect();
    let sq: f64 = diff.iter().map(|d| d * d).sum();
    if squared {
        (sq, diff.into_iter().map(|d| 2.0 * d).collect())
    } else {
        let d = sq.sqrt();
        let g = if d > 0.0 {
            diff.into_iter().map(|x| x / d).collect()
        } else {
            vec![0.0; v.len()]
        };
        (d, g)
    }
}

fn accumulate(m: &mut Matrix, row: usize, g: &[f64], weight: f64) {
    m.row_mut(row).iter_mut().zip(g).for_each(|(o, v)| *o += weight * v);
}

/// `1/(2N) Σ y·d² + (1 − y)·max(α − d, 0)²` over `(d, y)` pairs, with `∂L/∂dₙ`.
pub fn contrastive_loss(pairs: &[(f64, bool)], cfg: &ContrastiveConfig) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Empty("contrastive pairs"));
    }
    if let Some((d, _)) = pairs.iter().find(|(d, _)| !(*d >= 0.0) || !d.is_finite()) {
        return Err(Error::arg(format!("distance {d} is not a finite non-negative value")));
    }
    let n = pairs.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(pairs.len());
    for &(d, y) in pairs {
        if y {
            value += d * d;
            grads.push(d / n);
        } else {
            let gap = (cfg.alpha - d).max(0.0);
            value += gap * gap;
            grads.push(-gap / n);
        }
    }
    Ok((value / (2.0 * n), grads))
}

/// Row `i` of `video` paired with row `i` of `audio`; `synchronized[i]` is the label `y`.
pub fn contrastive_embedding_loss(
    video: &Matrix,
    audio: &Matrix,
    synchronized: &[bool],
    cfg: &ContrastiveConfig,
) -> Result<LossOutput> {
    check_same_dim(video, audio)?;
    if video.rows() != audio.rows() || video.rows() != synchronized.len() {
        return Err(Error::DimensionMismatch {
            expected: video.rows(),
            actual: audio.rows().min(synchronized.len()),
        });
    }
    let per_row: Vec<(f64, Vec<f64>)> = (0..video.rows())
        .map(|i| distance_and_grad(video.row(i), audio.row(i), false))
        .collect();
    let pairs: Vec<(f64, bool)> = per_row.iter().map(|(d, _)| *d).zip(synchronized.iter().copied()).collect();
    let (value, dd) = contrastive_loss(&pairs, cfg)?;
    let mut d_video = Matrix::zeros(video.rows(), video.cols());
    let mut d_audio = Matrix::zeros(audio.rows(), audio.cols());
    for (i, ((_, g), w)) in per_row.iter().zip(&dd).enumerate() {
        accumulate(&mut d_video, i, g, *w);
        accumulate(&mut d_audio, i, g, -*w);
    }
    Ok(LossOutput { value, d_video, d_audio })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletOutput {
    pub value: f64,
    pub d_anchor: Vec<f64>,
    pub d_positive: Vec<f64>,
    pub d_negative: Vec<f64>,
}

/// `[‖v − p‖² − ‖v − n‖² + α]₊`
pub fn dynamic_triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], cfg: &TripletConfig) -> Result<TripletOutput> {
    cfg.validate()?;
    if anchor.len() != positive.len() || anchor.len() != negative.len() {
        return Err(Error::DimensionMismatch {
            expected: anchor.len(),
            actual: if positive.len() != anchor.len() { positive.len() } else { negative.len() },
        });
    }
    let (dp, gp) = distance_and_grad(anchor, positive, true);
    let (dn, gn) = distance_and_grad(anchor, negative, true);
    let hinge = dp - dn + cfg.alpha;
    let dim = anchor.len();
    if hinge <= 0.0 {
        return Ok(TripletOutput {
            value: 0.0,
            d_anchor: vec![0.0; dim],
            d_positive: vec![0.0; dim],
            d_negative: vec![0.0; dim],
        });
    }
    Ok(TripletOutput {
        value: hinge,
        d_anchor: gp.iter().zip(&gn).map(|(a, b)| a - b).collect(),
        d_positive: gp.iter().map(|g| -g).collect(),
        d_negative: gn,
    })
}

/// Sum of [`dynamic_triplet_loss`] over rows; `audio` stacks the positives (rows `0..N`)
/// above the negatives (rows `N..2N`).
pub fn triplet_embedding_loss(video: &Matrix, audio: &Matrix, cfg: &TripletConfig) -> Result<LossOutput> {
    check_same_dim(video, audio)?;
    let n = video.rows();
    if audio.rows() != 2 * n {
        return Err(Error::DimensionMismatch {
            expected: 2 * n,
            actual: audio.rows(),
        });
    }
    let mut value = 0.0;
    let mut d_video = Matrix::zeros(n, video.cols());
    let mut d_audio = Matrix::zeros(2 * n, audio.cols());
    for i in 0..n {
        let t = dynamic_triplet_loss(video.row(i), audio.row(i), audio.row(n + i), cfg)?;
        value += t.value;
        accumulate(&mut d_video, i, &t.d_anchor, 1.0);
        accumulate(&mut d_audio, i, &t.d_positive, 1.0);
        accumulate(&mut d_audio, n + i, &t.d_negative, 1.0);
    }
    Ok(LossOutput { value, d_video, d_audio })
}

/// One anchor's terms: its video row and the audio rows it is compared with.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTerms {
    pub video: usize,
    pub audios: Vec<(PairLabel, usize)>,
}

fn check_anchor(a: &AnchorTerms, video: &Matrix, audio: &Matrix) -> Result<usize> {
    if a.video >= video.rows() {
        return Err(Error::arg(format!("video row {} out of range", a.video)));
    }
    if let Some((_, r)) = a.audios.iter().find(|(_, r)| *r >= audio.rows()) {
        return Err(Error::arg(format!("audio row {r} out of range")));
    }
    let mut sync = a.audios.iter().enumerate().filter(|(_, (l, _))| *l == PairLabel::Synchronized);
    match (sync.next(), sync.next()) {
        (Some((i, _)), None) => Ok(i),
        _ => Err(Error::arg("each anchor needs exactly one synchronized audio")),
    }
}

/// Adds `LSE(α − D)` over `members` (with an extra zero argument under `soft_hinge`) to the
/// embedding grads and returns its value.
#[allow(clippy::too_many_arguments)]
fn lse_term(
    video: &Matrix,
    audio: &Matrix,
    anchor: &AnchorTerms,
    members: &[usize],
    margin: f64,
    (squared, soft_hinge): (bool, bool),
    d_video: &mut Matrix,
    d_audio: &mut Matrix,
) -> Result<f64> {
    let v = video.row(anchor.video);
    let terms: Vec<(f64, Vec<f64>)> = members
        .iter()
        .map(|&k| distance_and_grad(v, audio.row(anchor.audios[k].1), squared))
        .collect();
    let mut args: Vec<f64> = terms.iter().map(|(d, _)| margin - d).collect();
    if soft_hinge {
        args.push(0.0);
    }
    let value = logsumexp(&args)?;
    let weights = softmax(&args)?;
    for ((&k, (_, g)), w) in members.iter().zip(&terms).zip(&weights) {
        accumulate(d_video, anchor.video, g, -w);
        accumulate(d_audio, anchor.audios[k].1, g, *w);
    }
    Ok(value)
}

fn positive_term(video: &Matrix, audio: &Matrix, anchor: &AnchorTerms, sync: usize, squared: bool, d_video: &mut Matrix, d_audio: &mut Matrix) -> f64 {
    let row = anchor.audios[sync].1;
    let (d, g) = distance_and_grad(video.row(anchor.video), audio.row(row), squared);
    accumulate(d_video, anchor.video, &g, 1.0);
    accumulate(d_audio, row, &g, -1.0);
    d
}

/// `Σₙ D(pos) + LSE(α₁ − D(near shifts)) + LSE(α₂ − D(far shifts)) + LSE(α₃ − D(heterologous))`.
///
/// Near shifts are `0 < |j| ≤ m1`, far shifts `m1 < |j| ≤ m2`. Every group must be non-empty
/// and every negative must fall in one.
pub fn multinomial_loss(video: &Matrix, audio: &Matrix, anchors: &[AnchorTerms], cfg: &MultinomialConfig) -> Result<LossOutput> {
    cfg.validate()?;
    check_same_dim(video, audio)?;
    if anchors.is_empty() {
        return Err(Error::Empty("anchors"));
    }
    let mut d_video = Matrix::zeros(video.rows(), video.cols());
    let mut d_audio = Matrix::zeros(audio.rows(), audio.cols());
    let mut value = 0.0;
    for a in anchors {
        let sync = check_anchor(a, video, audio)?;
        let (mut near, mut far, mut het) = (Vec::new(), Vec::new(), Vec::new());
        for (k, (label, _)) in a.audios.iter().enumerate() {
            match *label {
                PairLabel::Synchronized => {}
                PairLabel::Shifted(j) if j != 0 && j.unsigned_abs() <= cfg.m1 => near.push(k),
                PairLabel::Shifted(j) if j.unsigned_abs() > cfg.m1 && j.unsigned_abs() <= cfg.m2 => far.push(k),
                PairLabel::Shifted(j) => {
                    return Err(Error::arg(format!("shift {j} falls in no group (m2 = {})", cfg.m2)))
                }
                PairLabel::Heterologous { .. } => het.push(k),
            }
        }
        for (name, g) in [("near-shift", &near), ("far-shift", &far), ("heterologous", &het)] {
            if g.is_empty() {
                return Err(Error::arg(format!("anchor has an empty {name} group")));
            }
        }
        let s = (cfg.squared_distance, cfg.soft_hinge);
        let mut term = positive_term(video, audio, a, sync, s.0, &mut d_video, &mut d_audio);
        term += lse_term(video, audio, a, &near, cfg.alpha1, s, &mut d_video, &mut d_audio)?;
        term += lse_term(video, audio, a, &far, cfg.alpha2, s, &mut d_video, &mut d_audio)?;
        term += lse_term(video, audio, a, &het, cfg.alpha3, s, &mut d_video, &mut d_audio)?;
        value += term;
    }
    Ok(LossOutput { value, d_video, d_audio })
}

/// Which negative labels a cluster holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelSet {
    /// Shifts with `above < |j| ≤ up_to`.
    Shifts { above: u32, up_to: u32 },
    Heterologous,
    /// Every negative label.
    AnyNegative,
}

impl LabelSet {
    pub fn contains(&self, label: &PairLabel) -> bool {
        match (*self, *label) {
            (_, PairLabel::Synchronized) => false,
            (LabelSet::AnyNegative, _) => true,
            (LabelSet::Shifts { above, up_to }, PairLabel::Shifted(j)) => {
                let m = j.unsigned_abs();
                above < m && m <= up_to
            }
            (LabelSet::Heterologous, PairLabel::Heterologous { .. }) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cluster {
    pub members: LabelSet,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub clusters: Vec<Cluster>,
    pub squared_distance: bool,
    pub soft_hinge: bool,
}

/// `Σₙ D(pos) + Σₖ LSE(αₖ − D(cluster k))` for an arbitrary disjoint cover of the negatives.
pub fn clustered_loss(video: &Matrix, audio: &Matrix, anchors: &[AnchorTerms], spec: &ClusterSpec) -> Result<LossOutput> {
    check_same_dim(video, audio)?;
    if spec.clusters.is_empty() {
        return Err(Error::config("cluster spec has no clusters"));
    }
    for (i, c) in spec.clusters.iter().enumerate() {
        check_margin(&format!("cluster {i} margin"), c.margin)?;
    }
    if anchors.is_empty() {
        return Err(Error::Empty("anchors"));
    }
    let mut d_video = Matrix::zeros(video.rows(), video.cols());
    let mut d_audio = Matrix::zeros(audio.rows(), audio.cols());
    let mut value = 0.0;
    for a in anchors {
        let sync = check_anchor(a, video, audio)?;
        let mut members = vec![Vec::new(); spec.clusters.len()];
        for (k, (label, _)) in a.audios.iter().enumerate() {
            if !label.is_negative() {
                continue;
            }
            let hits: Vec<usize> = (0..spec.clusters.len()).filter(|&c| spec.clusters[c].members.contains(label)).collect();
            match hits.as_slice() {
                [c] => members[*c].push(k),
                [] => return Err(Error::arg(format!("{label:?} is in no cluster"))),
                _ => return Err(Error::arg(format!("{label:?} is in more than one cluster"))),
            }
        }
        if let Some(c) = members.iter().position(Vec::is_empty) {
            return Err(Error::arg(format!("cluster {c} is empty for an anchor")));
        }
        let s = (spec.squared_distance, spec.soft_hinge);
        let mut term = positive_term(video, audio, a, sync, s.0, &mut d_video, &mut d_audio);
        for (c, m) in spec.clusters.iter().zip(&members) {
            term += lse_term(video, audio, a, m, c.margin, s, &mut d_video, &mut d_audio)?;
        }
        value += term;
    }
    Ok(LossOutput { value, d_video, d_audio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sq(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn contrastive_hand_cases() {
        let c = |alpha| ContrastiveConfig { alpha };
        assert_eq!(contrastive_loss(&[(0.0, true)], &c(1.0)).unwrap().0, 0.0);
        assert_eq!(contrastive_loss(&[(2.0, true)], &c(1.0)).unwrap().0, 2.0);
        assert_eq!(contrastive_loss(&[(1.0, false)], &c(3.0)).unwrap().0, 2.0);
        let (v, g) = contrastive_loss(&[(2.0, false)], &c(1.0)).unwrap();
        assert_eq!((v, g[0]), (0.0, 0.0));
        let (_, g) = contrastive_loss(&[(2.0, true), (1.0, false)], &c(3.0)).unwrap();
        assert_eq!(g, vec![1.0, -1.0]);
    }

    #[test]
    fn contrastive_rejects_bad_input() {
        let cfg = ContrastiveConfig::default();
        assert!(contrastive_loss(&[], &cfg).is_err());
        assert!(contrastive_loss(&[(-1.0, true)], &cfg).is_err());
        assert!(contrastive_loss(&[(1.0, true)], &ContrastiveConfig { alpha: 0.0 }).is_err());
    }

    /// Embeddings along one axis with the requested squared distances from the origin anchor.
    fn triplet_at(dp2: f64, dn2: f64, alpha: f64) -> TripletOutput {
        dynamic_triplet_loss(&[0.0, 0.0], &[dp2.sqrt(), 0.0], &[0.0, dn2.sqrt()], &TripletConfig { alpha }).unwrap()
    }

    #[test]
    fn triplet_hand_cases() {
        let inactive = triplet_at(0.5, 1.2, 0.5);
        assert_eq!(inactive.value, 0.0);
        assert!(inactive.d_anchor.iter().chain(&inactive.d_positive).all(|&g| g == 0.0));
        assert!(close(triplet_at(1.0, 0.25, 0.5).value, 1.25, 1e-12));

        let a = [0.3, -0.4, 1.0];
        let p = [1.0, 0.5, -0.2];
        let t = dynamic_triplet_loss(&a, &p, &p, &TripletConfig { alpha: 0.2 }).unwrap();
        assert!(close(t.value, 0.2, 1e-12));
        for (x, y) in t.d_positive.iter().zip(&t.d_negative) {
            assert!((x + y).abs() < 1e-15);
        }
        assert!(t.d_anchor.iter().all(|&g| g.abs() < 1e-15));
    }

    #[test]
    fn triplet_dimension_mismatch() {
        assert!(dynamic_triplet_loss(&[0.0], &[0.0, 1.0], &[1.0], &TripletConfig::default()).is_err());
    }

    /// One video row, one audio row per label, all at squared distance `c` from the anchor
    /// when `spread` is false.
    fn layout(rng: &mut ChaCha8Rng, n_anchors: usize, n_het: usize, dim: usize, spread: bool) -> (Matrix, Matrix, Vec<AnchorTerms>) {
        let mut labels = vec![PairLabel::Synchronized];
        labels.extend((-10..=10).filter(|&j| j != 0).map(PairLabel::Shifted));
        labels.extend((0..n_het).map(|h| PairLabel::Heterologous { source_clip: 100 + h }));
        let video = Matrix::new(n_anchors, dim, (0..n_anchors * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let rows = n_anchors * labels.len();
        let audio_data = (0..rows * dim)
            .map(|i| {
                let r = i / dim;
                let base = video.get(r / labels.len(), i % dim);
                if spread {
                    rng.random_range(-1.5..1.5)
                } else if i % dim == 0 {
                    base + 0.7
                } else {
                    base
                }
            })
            .collect();
        let audio = Matrix::new(rows, dim, audio_data).unwrap();
        let anchors = (0..n_anchors)
            .map(|n| AnchorTerms {
                video: n,
                audios: labels.iter().enumerate().map(|(k, l)| (*l, n * labels.len() + k)).collect(),
            })
            .collect();
        (video, audio, anchors)
    }

    #[test]
    fn multinomial_constant_distance_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (video, audio, anchors) = layout(&mut rng, 3, 15, 4, false);
        let cfg = MultinomialConfig::default();
        let out = multinomial_loss(&video, &audio, &anchors, &cfg).unwrap();
        let c: f64 = 0.49;
        let per = c + (1.0 - c + 10f64.ln()) + (2.0 - c + 10f64.ln()) + (10.0 - c + 15f64.ln());
        assert!(close(out.value, 3.0 * per, 1e-12), "{} vs {}", out.value, 3.0 * per);
    }

    #[test]
    fn multinomial_single_element_groups_degenerate() {
        let video = Matrix::new(1, 2, vec![0.0, 0.0]).unwrap();
        let audio = Matrix::new(4, 2, vec![0.5, 0.0, 1.0, 0.0, 0.0, 2.0, 3.0, 0.0]).unwrap();
        let anchors = [AnchorTerms {
            video: 0,
            audios: vec![
                (PairLabel::Synchronized, 0),
                (PairLabel::Shifted(-2), 1),
                (PairLabel::Shifted(7), 2),
                (PairLabel::Heterologous { source_clip: 1 }, 3),
            ],
        }];
        let out = multinomial_loss(&video, &audio, &anchors, &MultinomialConfig::default()).unwrap();
        let expected = 0.25 + (1.0 - 1.0) + (2.0 - 4.0) + (10.0 - 9.0);
        assert_eq!(out.value, expected);
    }

    /// No max-trick, no shared code with the loss under test.
    fn naive_multinomial(video: &Matrix, audio: &Matrix, anchors: &[AnchorTerms], cfg: &MultinomialConfig) -> f64 {
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
            if cfg.squared_distance { s } else { s.sqrt() }
        };
        anchors
            .iter()
            .map(|a| {
                let v = video.row(a.video);
                let mut pos = 0.0;
                let mut sums = [0.0; 3];
                for (label, r) in &a.audios {
                    let d = dist(v, audio.row(*r));
                    match label {
                        PairLabel::Synchronized => pos = d,
                        PairLabel::Shifted(j) if j.unsigned_abs() <= cfg.m1 => sums[0] += (cfg.alpha1 - d).exp(),
                        PairLabel::Shifted(_) => sums[1] += (cfg.alpha2 - d).exp(),
                        PairLabel::Heterologous { .. } => sums[2] += (cfg.alpha3 - d).exp(),
                    }
                }
                let extra = if cfg.soft_hinge { 1.0 } else { 0.0 };
                pos + sums.iter().map(|s| (s + extra).ln()).sum::<f64>()
            })
            .sum()
    }

    #[test]
    fn multinomial_matches_naive_oracle() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (video, audio, anchors) = layout(&mut rng, 2, 1, 5, true);
            for (squared, soft_hinge) in [(true, false), (false, false), (true, true), (false, true)] {
                let cfg = MultinomialConfig { squared_distance: squared, soft_hinge, ..Default::default() };
                let got = multinomial_loss(&video, &audio, &anchors, &cfg).unwrap().value;
                let want = naive_multinomial(&video, &audio, &anchors, &cfg);
                assert!((got - want).abs() <= 1e-9 * (1.0 + want.abs()), "{got} vs {want}");
            }
        }
    }

    #[test]
    fn clustered_equals_multinomial_bitwise() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (video, audio, anchors) = layout(&mut rng, 3, 2, 4, true);
            for soft_hinge in [false, true] {
                let cfg = MultinomialConfig { soft_hinge, ..Default::default() };
                let a = multinomial_loss(&video, &audio, &anchors, &cfg).unwrap();
                let b = clustered_loss(&video, &audio, &anchors, &cfg.cluster_spec()).unwrap();
                assert_eq!(a.value.to_bits(), b.value.to_bits());
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn single_cluster_is_positive_plus_one_lse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (video, audio, anchors) = layout(&mut rng, 2, 3, 3, true);
        let spec = ClusterSpec {
            clusters: vec![Cluster { members: LabelSet::AnyNegative, margin: 1.5 }],
            squared_distance: true,
            soft_hinge: false,
        };
        let got = clustered_loss(&video, &audio, &anchors, &spec).unwrap().value;
        let want: f64 = anchors
            .iter()
            .map(|a| {
                let v = video.row(a.video);
                let d = |r: usize| sq(v, audio.row(r));
                let pos = d(a.audios[0].1);
                let negs: f64 = a.audios[1..].iter().map(|(_, r)| (1.5 - d(*r)).exp()).sum();
                pos + negs.ln()
            })
            .sum();
        assert!(close(got, want, 1e-12));
    }

    #[test]
    fn cluster_spec_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (video, audio, anchors) = layout(&mut rng, 1, 2, 3, true);
        let uncovered = ClusterSpec {
            clusters: vec![Cluster { members: LabelSet::Heterologous, margin: 1.0 }],
            squared_distance: true,
            soft_hinge: false,
        };
        assert!(clustered_loss(&video, &audio, &anchors, &uncovered).is_err());
        let doubled = ClusterSpec {
            clusters: vec![
                Cluster { members: LabelSet::AnyNegative, margin: 1.0 },
                Cluster { members: LabelSet::Heterologous, margin: 1.0 },
            ],
            squared_distance: true,
            soft_hinge: false,
        };
        assert!(clustered_loss(&video, &audio, &anchors, &doubled).is_err());
        let empty = ClusterSpec {
            clusters: vec![
                Cluster { members: LabelSet::AnyNegative, margin: 1.0 },
                Cluster { members: LabelSet::Shifts { above: 20, up_to: 30 }, margin: 1.0 },
            ],
            squared_distance: true,
            soft_hinge: false,
        };
        assert!(clustered_loss(&video, &audio, &anchors, &empty).is_err());
    }

    #[test]
    fn multinomial_missing_group_is_an_error() {
        let video = Matrix::new(1, 1, vec![0.0]).unwrap();
        let audio = Matrix::new(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        let anchors = [AnchorTerms {
            video: 0,
            audios: vec![
                (PairLabel::Synchronized, 0),
                (PairLabel::Shifted(1), 1),
                (PairLabel::Heterologous { source_clip: 2 }, 2),
            ],
        }];
        assert!(multinomial_loss(&video, &audio, &anchors, &MultinomialConfig::default()).is_err());
    }

    #[test]
    fn multinomial_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (video, audio, anchors) = layout(&mut rng, 2, 2, 3, true);
        for (squared, soft_hinge) in [(true, false), (false, false), (true, true), (false, true)] {
            let cfg = MultinomialConfig { squared_distance: squared, soft_hinge, ..Default::default() };
            let out = multinomial_loss(&video, &audio, &anchors, &cfg).unwrap();
            let h = 1e-6;
            for idx in 0..video.data().len() {
                let mut p = video.clone();
                p.data_mut()[idx] += h;
                let mut m = video.clone();
                m.data_mut()[idx] -= h;
                let fd = (multinomial_loss(&p, &audio, &anchors, &cfg).unwrap().value
                    - multinomial_loss(&m, &audio, &anchors, &cfg).unwrap().value)
                    / (2.0 * h);
                assert!(close(out.d_video.data()[idx], fd, 1e-5), "video {idx}: {} vs {fd}", out.d_video.data()[idx]);
            }
            for idx in (0..audio.data().len()).step_by(7) {
                let mut p = audio.clone();
                p.data_mut()[idx] += h;
                let mut m = audio.clone();
                m.data_mut()[idx] -= h;
                let fd = (multinomial_loss(&video, &p, &anchors, &cfg).unwrap().value
                    - multinomial_loss(&video, &m, &anchors, &cfg).unwrap().value)
                    / (2.0 * h);
                assert!(close(out.d_audio.data()[idx], fd, 1e-5), "audio {idx}");
            }
        }
    }

    #[test]
    fn contrastive_and_triplet_embedding_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut r = |n: usize, m: usize| Matrix::new(n, m, (0..n * m).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let video = r(4, 3);
        let audio2 = r(8, 3);
        let audio = Matrix::new(4, 3, audio2.data()[..12].to_vec()).unwrap();
        let labels = [true, false, true, false];
        let ccfg = ContrastiveConfig { alpha: 1.7 };
        let tcfg = TripletConfig { alpha: 0.9 };
        let h = 1e-6;
        let c = contrastive_embedding_loss(&video, &audio, &labels, &ccfg).unwrap();
        let t = triplet_embedding_loss(&video, &audio2, &tcfg).unwrap();
        for idx in 0..12 {
            let bump = |m: &Matrix, d: f64| {
                let mut x = m.clone();
                x.data_mut()[idx] += d;
                x
            };
            let fd_c = (contrastive_embedding_loss(&bump(&video, h), &audio, &labels, &ccfg).unwrap().value
                - contrastive_embedding_loss(&bump(&video, -h), &audio, &labels, &ccfg).unwrap().value)
                / (2.0 * h);
            assert!(close(c.d_video.data()[idx], fd_c, 1e-5));
            let fd_c = (contrastive_embedding_loss(&video, &bump(&audio, h), &labels, &ccfg).unwrap().value
                - contrastive_embedding_loss(&video, &bump(&audio, -h), &labels, &ccfg).unwrap().value)
                / (2.0 * h);
            assert!(close(c.d_audio.data()[idx], fd_c, 1e-5));
            let fd_t = (triplet_embedding_loss(&bump(&video, h), &audio2, &tcfg).unwrap().value
                - triplet_embedding_loss(&bump(&video, -h), &audio2, &tcfg).unwrap().value)
                / (2.0 * h);
            assert!(close(t.d_video.data()[idx], fd_t, 1e-5));
        }
    }

    /// Toy anchors whose shifted audio is the video input corrupted in proportion to `|j|`;
    /// heterologous audio is another anchor's input.
    fn toy_anchor_inputs(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> (Matrix, Matrix, Vec<AnchorTerms>) {
        use rand_distr::{Distribution, StandardNormal};
        let mut g = || -> f64 { StandardNormal.sample(&mut *rng) };
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| g()).collect()).collect();
        let mut audio_rows = Vec::new();
        let mut anchors = Vec::new();
        for (i, x) in xs.iter().enumerate() {
            let mut audios = vec![(PairLabel::Synchronized, audio_rows.len())];
            audio_rows.push(x.iter().map(|v| v + 0.01 * g()).collect::<Vec<f64>>());
            for j in (-10i32..=10).filter(|&j| j != 0) {
                audios.push((PairLabel::Shifted(j), audio_rows.len()));
                let sigma = 0.06 * j.abs() as f64;
                audio_rows.push(x.iter().map(|v| v + sigma * g()).collect());
            }
            anchors.push((i, audios));
        }
        let anchors = anchors
            .into_iter()
            .map(|(i, mut audios)| {
                for m in (0..n).filter(|&m| m != i) {
                    audios.push((PairLabel::Heterologous { source_clip: m }, m * 21));
                }
                AnchorTerms { video: i, audios }
            })
            .collect();
        let flat = |rows: &[Vec<f64>]| Matrix::new(rows.len(), dim, rows.concat()).unwrap();
        (flat(&xs), flat(&audio_rows), anchors)
    }

    fn ordering_rate(ev: &Matrix, ea: &Matrix, anchors: &[AnchorTerms]) -> f64 {
        let ok = anchors
            .iter()
            .filter(|a| {
                let v = ev.row(a.video);
                let d = |pred: &dyn Fn(&PairLabel) -> bool| {
                    a.audios
                        .iter()
                        .filter(|(l, _)| pred(l))
                        .map(|(_, r)| sq(v, ea.row(*r)))
                        .fold(f64::INFINITY, f64::min)
                };
                let sync = d(&|l| *l == PairLabel::Synchronized);
                let near = d(&|l| matches!(l, PairLabel::Shifted(j) if j.abs() <= 5));
                let far = d(&|l| matches!(l, PairLabel::Shifted(j) if j.abs() > 5));
                let het = d(&|l| matches!(l, PairLabel::Heterologous { .. }));
                sync < near && near < far && far < het
            })
            .count();
        ok as f64 / anchors.len() as f64
    }

    /// Two linear encoders trained only through the multinomial loss learn to map matching
    /// inputs together, giving sync < near shifts < far shifts < heterologous on fresh anchors.
    /// Returns the ordering rate on held-out anchors before and after training, or `None` after
    /// training if the loss stopped being finite.
    fn train_toy_encoders(soft_hinge: bool, steps: usize) -> (f64, Option<f64>) {
        let dim = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut w_v = Matrix::new(dim, dim, (0..dim * dim).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
        let mut w_a = Matrix::new(dim, dim, (0..dim * dim).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
        let cfg = MultinomialConfig { soft_hinge, ..Default::default() };
        let (xv, xa, test) = toy_anchor_inputs(&mut rng, 100, dim);
        let before = ordering_rate(&xv.matmul(&w_v).unwrap(), &xa.matmul(&w_a).unwrap(), &test);
        for _ in 0..steps {
            let (bv, ba, anchors) = toy_anchor_inputs(&mut rng, 8, dim);
            let Ok(out) = multinomial_loss(&bv.matmul(&w_v).unwrap(), &ba.matmul(&w_a).unwrap(), &anchors, &cfg) else {
                return (before, None);
            };
            let gv = bv.transposed_matmul(&out.d_video).unwrap();
            let ga = ba.transposed_matmul(&out.d_audio).unwrap();
            w_v.data_mut().iter_mut().zip(gv.data()).for_each(|(w, g)| *w -= 0.1 / 8.0 * g);
            w_a.data_mut().iter_mut().zip(ga.data()).for_each(|(w, g)| *w -= 0.1 / 8.0 * g);
        }
        let after = ordering_rate(&xv.matmul(&w_v).unwrap(), &xa.matmul(&w_a).unwrap(), &test);
        (before, Some(after))
    }

    /// Two linear encoders trained only through the soft-hinge multinomial loss map matching
    /// inputs together: sync < near shifts < far shifts < heterologous on held-out anchors.
    #[test]
    fn optimizing_multinomial_orders_the_groups() {
        let (before, after) = train_toy_encoders(true, 1000);
        assert!(before < 0.5, "untrained rate {before}");
        let after = after.expect("soft-hinge loss stays finite");
        assert!(after >= 0.95, "trained rate {after}");
    }

    /// The plain LogSumExp form rewards inflating every distance, so the same run runs away.
    #[test]
    fn plain_logsumexp_training_runs_away() {
        let (_, after) = train_toy_encoders(false, 2000);
        assert_eq!(after, None);
    }

    proptest! {
        #[test]
        fn contrastive_is_non_negative_and_zero_iff_satisfied(
            ds in prop::collection::vec((0.0f64..5.0, any::<bool>()), 1..20),
            alpha in 0.1f64..4.0,
        ) {
            let (v, _) = contrastive_loss(&ds, &ContrastiveConfig { alpha }).unwrap();
            prop_assert!(v >= 0.0);
            let satisfied = ds.iter().all(|&(d, y)| if y { d == 0.0 } else { d >= alpha });
            prop_assert_eq!(v == 0.0, satisfied);
        }

        #[test]
        fn triplet_monotone_in_distances(dp in 0.0f64..4.0, dn in 0.0f64..4.0, bump in 0.0f64..2.0, alpha in 0.1f64..2.0) {
            let base = triplet_at(dp, dn, alpha).value;
            prop_assert!(base >= 0.0);
            prop_assert!(triplet_at(dp + bump, dn, alpha).value >= base - 1e-12);
            prop_assert!(triplet_at(dp, dn + bump, alpha).value <= base + 1e-12);
        }

        #[test]
        fn multinomial_invariant_to_group_order(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (video, audio, mut anchors) = layout(&mut rng, 2, 3, 3, true);
            let cfg = MultinomialConfig::default();
            let before = multinomial_loss(&video, &audio, &anchors, &cfg).unwrap().value;
            for a in anchors.iter_mut() {
                use rand::seq::SliceRandom;
                a.audios.shuffle(&mut rng);
            }
            let after = multinomial_loss(&video, &audio, &anchors, &cfg).unwrap().value;
            prop_assert!((before - after).abs() <= 1e-10 * (1.0 + before.abs()));
        }

        #[test]
        fn raising_any_margin_raises_the_loss(seed in any::<u64>(), which in 0usize..3, bump in 0.01f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (video, audio, anchors) = layout(&mut rng, 2, 2, 3, true);
            let cfg = MultinomialConfig::default();
            let mut raised = cfg;
            match which {
                0 => raised.alpha1 += bump,
                1 => raised.alpha2 += bump,
                _ => raised.alpha3 += bump,
            }
            let base = multinomial_loss(&video, &audio, &anchors, &cfg).unwrap().value;
            let up = multinomial_loss(&video, &audio, &anchors, &raised).unwrap().value;
            prop_assert!(up > base);
        }
    }
}
