//! How well a frozen model orders synchronized, near-shift, far-shift and heterologous audio.

use crate::encoders::TwoStreamModel;
use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::sampling::{Batch, PairLabel};
use crate::training::batch::{assemble, Targets};

/// Distances from one video anchor to its audio candidates, split by group.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorDistances {
    pub synchronized: f64,
    /// Shifts with `0 < |j| ≤ m1`.
    pub near: Vec<f64>,
    /// Shifts with `m1 < |j| ≤ m2`.
    pub far: Vec<f64>,
    pub heterologous: Vec<f64>,
}

impl AnchorDistances {
    pub fn group(synchronized: f64, labelled: &[(PairLabel, f64)], m1: u32, m2: u32) -> Self {
        let mut d = AnchorDistances {
            synchronized,
            near: Vec::new(),
            far: Vec::new(),
            heterologous: Vec::new(),
        };
        for &(label, dist) in labelled {
            match label {
                PairLabel::Shifted(j) if j.unsigned_abs() <= m1 => d.near.push(dist),
                PairLabel::Shifted(j) if j.unsigned_abs() <= m2 => d.far.push(dist),
                PairLabel::Heterologous { .. } => d.heterologous.push(dist),
                _ => {}
            }
        }
        d
    }
}

/// Fraction of anchors satisfying each strict inequality between group minima.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderingRates {
    pub sync_shift1: f64,
    pub shift1_shift2: f64,
    pub shift2_het: f64,
}

fn min(v: &[f64]) -> Option<f64> {
    v.iter().copied().reduce(f64::min)
}

/// Relations whose groups are empty for every anchor come out as NaN.
pub fn ordering_rates(anchors: &[AnchorDistances]) -> OrderingRates {
    let rate = |pairs: Vec<Option<(f64, f64)>>| {
        let present: Vec<(f64, f64)> = pairs.into_iter().flatten().collect();
        present.iter().filter(|(a, b)| a < b).count() as f64 / present.len() as f64
    };
    OrderingRates {
        sync_shift1: rate(anchors.iter().map(|a| Some((a.synchronized, min(&a.near)?))).collect()),
        shift1_shift2: rate(anchors.iter().map(|a| Some((min(&a.near)?, min(&a.far)?))).collect()),
        shift2_het: rate(anchors.iter().map(|a| Some((min(&a.far)?, min(&a.heterologous)?))).collect()),
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distances for every anchor of multinomial-mode batches.
pub fn anchor_distances(model: &TwoStreamModel, batches: &[Batch], m1: u32, m2: u32) -> Result<Vec<AnchorDistances>> {
    let mut out = Vec::new();
    for batch in batches {
        let inputs = assemble(batch)?;
        let Targets::Multinomial(terms) = &inputs.targets else {
            return Err(Error::arg("ordering evaluation needs multinomial batches"));
        };
        let ev = model.encode_video(&inputs.video)?;
        let ea = model.encode_audio(&inputs.audio)?;
        out.extend(terms.iter().map(|t| anchor_from(&ev, &ea, t.video, &t.audios, m1, m2)));
    }
    Ok(out)
}

fn anchor_from(ev: &Matrix, ea: &Matrix, video: usize, audios: &[(PairLabel, usize)], m1: u32, m2: u32) -> AnchorDistances {
    let v = ev.row(video);
    let labelled: Vec<(PairLabel, f64)> = audios.iter().map(|&(l, r)| (l, sq_dist(v, ea.row(r)))).collect();
    let sync = labelled
        .iter()
        .find(|(l, _)| *l == PairLabel::Synchronized)
        .map_or(f64::NAN, |&(_, d)| d);
    AnchorDistances::group(sync, &labelled, m1, m2)
}

pub fn evaluate_ordering(model: &TwoStreamModel, batches: &[Batch], m1: u32, m2: u32) -> Result<OrderingRates> {
    let anchors = anchor_distances(model, batches, m1, m2)?;
    if anchors.is_empty() {
        return Err(Error::Empty("evaluation anchors"));
    }
    Ok(ordering_rates(&anchors))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchor(s: f64, near: &[f64], far: &[f64], het: &[f64]) -> AnchorDistances {
        AnchorDistances {
            synchronized: s,
            near: near.to_vec(),
            far: far.to_vec(),
            heterologous: het.to_vec(),
        }
    }

    #[test]
    fn constructed_rule_scores_one() {
        let a = vec![anchor(0.1, &[0.5, 0.4], &[0.9, 1.0], &[3.0, 2.0]); 4];
        let r = ordering_rates(&a);
        assert_eq!((r.sync_shift1, r.shift1_shift2, r.shift2_het), (1.0, 1.0, 1.0));
    }

    #[test]
    fn uses_group_minima_and_strict_inequality() {
        let a = [
            anchor(0.5, &[0.4, 2.0], &[1.0], &[5.0]),
            anchor(0.5, &[0.5], &[0.1, 3.0], &[0.1]),
        ];
        let r = ordering_rates(&a);
        assert_eq!(r.sync_shift1, 0.0);
        assert_eq!(r.shift1_shift2, 0.5);
        assert_eq!(r.shift2_het, 0.5);
    }

    #[test]
    fn grouping_by_shift_magnitude() {
        let labelled = [
            (PairLabel::Shifted(-5), 1.0),
            (PairLabel::Shifted(6), 2.0),
            (PairLabel::Shifted(10), 3.0),
            (PairLabel::Shifted(11), 4.0),
            (PairLabel::Heterologous { source_clip: 3 }, 5.0),
        ];
        let d = AnchorDistances::group(0.0, &labelled, 5, 10);
        assert_eq!(d.near, vec![1.0]);
        assert_eq!(d.far, vec![2.0, 3.0]);
        assert_eq!(d.heterologous, vec![5.0]);
    }

    #[test]
    fn missing_group_is_nan() {
        let r = ordering_rates(&[anchor(0.0, &[1.0], &[], &[2.0])]);
        assert!(r.shift1_shift2.is_nan() && r.shift2_het.is_nan());
        assert_eq!(r.sync_shift1, 1.0);
    }
}
