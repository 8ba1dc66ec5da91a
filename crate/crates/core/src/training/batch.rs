//! Turning sampled batches into encoder inputs, and the per-batch loss with parameter gradients.

use crate::encoders::{Gradients, TwoStreamModel};
use crate::error::{Error, Result};
use crate::losses::{
    contrastive_embedding_loss, multinomial_loss, triplet_embedding_loss, AnchorTerms, LossOutput,
};
use crate::numeric::Matrix;
use crate::sampling::{Batch, PairLabel};
use crate::training::config::{LossKind, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// `y` per row pair.
    Contrastive(Vec<bool>),
    /// Audio rows `0..N` are positives, `N..2N` negatives.
    Triplet,
    Multinomial(Vec<AnchorTerms>),
}

/// Stacked encoder inputs for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInputs {
    pub video: Matrix,
    pub audio: Matrix,
    pub targets: Targets,
}

fn stack(rows: Vec<&[f64]>) -> Result<Matrix> {
    let cols = rows.first().map(|r| r.len()).ok_or(Error::Empty("batch rows"))?;
    let n = rows.len();
    Matrix::new(n, cols, rows.concat())
}

pub fn assemble(batch: &Batch) -> Result<BatchInputs> {
    match batch {
        Batch::Contrastive(pairs) => Ok(BatchInputs {
            video: stack(pairs.iter().map(|p| p.pair.video.as_slice()).collect())?,
            audio: stack(pairs.iter().map(|p| p.pair.audio.as_slice()).collect())?,
            targets: Targets::Contrastive(pairs.iter().map(|p| p.synchronized).collect()),
        }),
        Batch::Triplet(ts) => {
            let mut audio: Vec<&[f64]> = ts.iter().map(|t| t.positive.audio.as_slice()).collect();
            audio.extend(ts.iter().map(|t| t.negative.audio.as_slice()));
            Ok(BatchInputs {
                video: stack(ts.iter().map(|t| t.video.as_slice()).collect())?,
                audio: stack(audio)?,
                targets: Targets::Triplet,
            })
        }
        Batch::Multinomial(anchors) => {
            let per = 1 + anchors.first().map_or(0, |a| a.shifted.len());
            let mut audio: Vec<&[f64]> = Vec::with_capacity(anchors.len() * per);
            let mut terms = Vec::with_capacity(anchors.len());
            for (n, a) in anchors.iter().enumerate() {
                if a.shifted.len() + 1 != per {
                    return Err(Error::arg("anchors carry different shift sets"));
                }
                audio.push(&a.synchronized);
                audio.extend(a.shifted.iter().map(|(_, x)| x.as_slice()));
                let mut audios = vec![(PairLabel::Synchronized, n * per)];
                audios.extend(a.shifted.iter().enumerate().map(|(k, (j, _))| (PairLabel::Shifted(*j), n * per + 1 + k)));
                audios.extend(a.heterologous.iter().map(|&m| {
                    (
                        PairLabel::Heterologous {
                            source_clip: anchors[m].segment.clip,
                        },
                        m * per,
                    )
                }));
                terms.push(AnchorTerms { video: n, audios });
            }
            Ok(BatchInputs {
                video: stack(anchors.iter().map(|a| a.video.as_slice()).collect())?,
                audio: stack(audio)?,
                targets: Targets::Multinomial(terms),
            })
        }
    }
}

/// Loss on embeddings as the trainer optimizes it: the triplet and multinomial sums are divided
/// by the number of anchors; the contrastive loss already averages.
pub fn embedding_loss(video: &Matrix, audio: &Matrix, targets: &Targets, config: &TrainConfig) -> Result<LossOutput> {
    let (mut out, n) = match (config.loss, targets) {
        (LossKind::Contrastive, Targets::Contrastive(y)) => {
            return contrastive_embedding_loss(video, audio, y, &config.contrastive);
        }
        (LossKind::Triplet, Targets::Triplet) => (triplet_embedding_loss(video, audio, &config.triplet)?, video.rows()),
        (LossKind::Multinomial, Targets::Multinomial(terms)) => {
            (multinomial_loss(video, audio, terms, &config.multinomial)?, terms.len())
        }
        _ => return Err(Error::arg("batch layout does not match the configured loss")),
    };
    let scale = 1.0 / n as f64;
    out.value *= scale;
    out.d_video.data_mut().iter_mut().for_each(|g| *g *= scale);
    out.d_audio.data_mut().iter_mut().for_each(|g| *g *= scale);
    Ok(out)
}

/// Forward, loss and backward for one batch.
pub fn loss_and_gradients(model: &TwoStreamModel, inputs: &BatchInputs, config: &TrainConfig) -> Result<(f64, Gradients)> {
    let caches = model.forward(&inputs.video, &inputs.audio)?;
    let out = embedding_loss(caches.0.output(), caches.1.output(), &inputs.targets, config)?;
    let grads = model.backward(&caches, &out.d_video, &out.d_audio)?;
    Ok((out.value, grads))
}

/// Loss value only.
pub fn batch_loss(model: &TwoStreamModel, inputs: &BatchInputs, config: &TrainConfig) -> Result<f64> {
    let ev = model.encode_video(&inputs.video)?;
    let ea = model.encode_audio(&inputs.audio)?;
    Ok(embedding_loss(&ev, &ea, &inputs.targets, config)?.value)
}

/// Stable 64-bit FNV-1a.
pub fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    bytes.into_iter().fold(0xcbf29ce484222325, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

/// Identifies a batch by its anchor segments, for diagnostics.
pub fn fingerprint(batch: &Batch) -> u64 {
    fnv1a(batch.segments().iter().flat_map(|s| {
        [s.clip as u64, s.track as u64, s.start as u64]
            .into_iter()
            .flat_map(u64::to_le_bytes)
    }))
}
