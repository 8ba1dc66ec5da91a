//! End-to-end finite-difference checks of parameter gradients: random small encoders, a random
//! batch in each loss's layout, and central differences on randomly chosen parameters.
//!
//! Central differences are wrong across a kink, so a coordinate is only checked when every
//! ReLU and every hinge is in the same state at `θ − ε`, `θ` and `θ + ε`; otherwise another
//! coordinate is drawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::encoders::{init_model, MlpSpec, TwoStreamModel};
use crate::error::{Error, Result};
use crate::losses::AnchorTerms;
use crate::numeric::{check_partials, GradCheckOptions, GradCheckReport, Matrix};
use crate::sampling::PairLabel;
use crate::training::batch::{embedding_loss, loss_and_gradients, BatchInputs, Targets};
use crate::training::config::{LossKind, TrainConfig};

const VIDEO_INPUT: usize = 6;
const AUDIO_INPUT: usize = 10;
const HIDDEN: usize = 8;
const LAYERS: usize = 3;
const EMBEDDING: usize = 4;
const ANCHORS: usize = 3;
/// Redraws allowed per checked coordinate before a trial is declared degenerate.
const MAX_REDRAWS: usize = 200;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub coords_per_trial: usize,
    pub seed: u64,
    pub options: GradCheckOptions,
    /// Multinomial loss variant under test.
    pub soft_hinge: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            trials: 50,
            coords_per_trial: 12,
            seed: 0,
            options: GradCheckOptions::default(),
            soft_hinge: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialReport {
    pub trial: usize,
    pub report: GradCheckReport,
    /// Coordinates redrawn because they sat next to a kink.
    pub redrawn: usize,
}

impl TrialReport {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::new(rows, cols, data).expect("shape")
}

fn loss_config(kind: LossKind, soft_hinge: bool) -> TrainConfig {
    let mut c = TrainConfig {
        loss: kind,
        ..TrainConfig::default()
    };
    // Margins comparable to random embedding distances keep a fair share of hinges active.
    c.contrastive.alpha = 2.0;
    c.triplet.alpha = 2.0;
    c.multinomial.soft_hinge = soft_hinge;
    c
}

fn random_inputs(kind: LossKind, config: &TrainConfig, rng: &mut ChaCha8Rng) -> BatchInputs {
    match kind {
        LossKind::Contrastive => BatchInputs {
            video: gaussian(rng, 2 * ANCHORS, VIDEO_INPUT),
            audio: gaussian(rng, 2 * ANCHORS, AUDIO_INPUT),
            targets: Targets::Contrastive((0..2 * ANCHORS).map(|i| i % 2 == 0).collect()),
        },
        LossKind::Triplet => BatchInputs {
            video: gaussian(rng, ANCHORS, VIDEO_INPUT),
            audio: gaussian(rng, 2 * ANCHORS, AUDIO_INPUT),
            targets: Targets::Triplet,
        },
        LossKind::Multinomial => {
            let shifts = config.sampler.shifts();
            let per = 1 + shifts.len();
            let terms = (0..ANCHORS)
                .map(|n| {
                    let mut audios = vec![(PairLabel::Synchronized, n * per)];
                    audios.extend(shifts.iter().enumerate().map(|(k, &j)| (PairLabel::Shifted(j), n * per + 1 + k)));
                    audios.extend(
                        (0..ANCHORS)
                            .filter(|&m| m != n)
                            .map(|m| (PairLabel::Heterologous { source_clip: m }, m * per)),
                    );
                    AnchorTerms { video: n, audios }
                })
                .collect();
            BatchInputs {
                video: gaussian(rng, ANCHORS, VIDEO_INPUT),
                audio: gaussian(rng, ANCHORS * per, AUDIO_INPUT),
                targets: Targets::Multinomial(terms),
            }
        }
    }
}

fn random_model(rng: &mut ChaCha8Rng) -> Result<TwoStreamModel> {
    let mut model = init_model(
        MlpSpec::uniform(VIDEO_INPUT, HIDDEN, LAYERS, EMBEDDING, rng.random()),
        MlpSpec::uniform(AUDIO_INPUT, HIDDEN, LAYERS, EMBEDDING, rng.random()),
    )?;
    // Non-zero biases so every parameter block is exercised.
    let params: Vec<f64> = model
        .params()
        .iter()
        .map(|p| p + 0.3 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    model.set_params(&params)?;
    Ok(model)
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// ReLU activity plus the state of every loss hinge.
fn kink_state(model: &TwoStreamModel, inputs: &BatchInputs, config: &TrainConfig) -> Result<Vec<bool>> {
    let (cv, ca) = model.forward(&inputs.video, &inputs.audio)?;
    let mut state = cv.relu_pattern();
    state.extend(ca.relu_pattern());
    let (ev, ea) = (cv.output(), ca.output());
    match &inputs.targets {
        Targets::Contrastive(y) => state.extend(
            y.iter()
                .enumerate()
                .filter(|(_, synchronized)| !**synchronized)
                .map(|(n, _)| sq(ev.row(n), ea.row(n)).sqrt() < config.contrastive.alpha),
        ),
        Targets::Triplet => {
            let n = ev.rows();
            state.extend((0..n).map(|i| {
                sq(ev.row(i), ea.row(i)) - sq(ev.row(i), ea.row(n + i)) + config.triplet.alpha > 0.0
            }));
        }
        // Both multinomial forms are smooth in the distances.
        Targets::Multinomial(_) => {}
    }
    Ok(state)
}

fn with_param(model: &TwoStreamModel, base: &[f64], index: usize, delta: f64) -> Result<TwoStreamModel> {
    let mut m = model.clone();
    let mut p = base.to_vec();
    p[index] += delta;
    m.set_params(&p)?;
    Ok(m)
}

pub fn check_trial(kind: LossKind, cfg: &GradCheckConfig, trial: usize) -> Result<TrialReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(trial as u64);
    let config = loss_config(kind, cfg.soft_hinge);
    let model = random_model(&mut rng)?;
    let inputs = random_inputs(kind, &config, &mut rng);
    let (_, grads) = loss_and_gradients(&model, &inputs, &config)?;
    let analytic_all = grads.flat();
    let base = model.params();
    let base_state = kink_state(&model, &inputs, &config)?;
    let eps = cfg.options.eps;

    let mut coords = Vec::with_capacity(cfg.coords_per_trial);
    let mut redrawn = 0;
    while coords.len() < cfg.coords_per_trial {
        if redrawn > MAX_REDRAWS * cfg.coords_per_trial {
            return Err(Error::NonFinite(format!("trial {trial}: no kink-free coordinates")));
        }
        let i = rng.random_range(0..base.len());
        let smooth = [eps, -eps].iter().try_fold(true, |ok, &h| -> Result<bool> {
            Ok(ok && kink_state(&with_param(&model, &base, i, h)?, &inputs, &config)? == base_state)
        })?;
        if smooth && !coords.contains(&i) {
            coords.push(i);
        } else {
            redrawn += 1;
        }
    }
    let analytic: Vec<f64> = coords.iter().map(|&i| analytic_all[i]).collect();
    let objective = |i: usize, h: f64| -> f64 {
        let run = || -> Result<f64> {
            let m = with_param(&model, &base, i, h)?;
            let ev = m.encode_video(&inputs.video)?;
            let ea = m.encode_audio(&inputs.audio)?;
            Ok(embedding_loss(&ev, &ea, &inputs.targets, &config)?.value)
        };
        run().unwrap_or(f64::NAN)
    };
    let report = check_partials(objective, &coords, &analytic, &cfg.options)?;
    Ok(TrialReport { trial, report, redrawn })
}

/// Runs `cfg.trials` independent trials for one loss.
pub fn run_gradcheck(kind: LossKind, cfg: &GradCheckConfig) -> Result<Vec<TrialReport>> {
    (0..cfg.trials).map(|t| check_trial(kind, cfg, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_loss_passes_a_few_trials() {
        let cfg = GradCheckConfig {
            trials: 4,
            ..GradCheckConfig::default()
        };
        for kind in [LossKind::Contrastive, LossKind::Triplet, LossKind::Multinomial] {
            for r in run_gradcheck(kind, &cfg).unwrap() {
                assert!(r.passed(), "{kind:?} trial {}: {:?}", r.trial, r.report.failures().collect::<Vec<_>>());
            }
        }
        let plain = GradCheckConfig {
            soft_hinge: false,
            ..cfg
        };
        assert!(run_gradcheck(LossKind::Multinomial, &plain).unwrap().iter().all(TrialReport::passed));
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let cfg = GradCheckConfig::default();
        let config = loss_config(LossKind::Multinomial, true);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = random_model(&mut rng).unwrap();
        let inputs = random_inputs(LossKind::Multinomial, &config, &mut rng);
        let (_, grads) = loss_and_gradients(&model, &inputs, &config).unwrap();
        let base = model.params();
        let flat = grads.flat();
        let i = (0..flat.len()).max_by(|&a, &b| flat[a].abs().total_cmp(&flat[b].abs())).unwrap();
        let f = |j: usize, h: f64| {
            let m = with_param(&model, &base, j, h).unwrap();
            let ev = m.encode_video(&inputs.video).unwrap();
            let ea = m.encode_audio(&inputs.audio).unwrap();
            embedding_loss(&ev, &ea, &inputs.targets, &config).unwrap().value
        };
        let report = check_partials(f, &[i], &[flat[i] * 1.01], &cfg.options).unwrap();
        assert!(!report.passed());
    }
}
