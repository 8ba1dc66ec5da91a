//! Acceptance suite: one `criterion N: PASS|FAIL ...` line per criterion, written straight to
//! stdout so it is visible without `--nocapture`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use avsync::corpus::{generate_synthetic, SyntheticSpec};
use avsync::diarization::{der, diarize, f1, DEFAULT_SMOOTHING};
use avsync::features::{extract_clip_features, FeatureClip, MfccConfig, PreprocessOptions};
use avsync::losses::{
    clustered_loss, contrastive_loss, dynamic_triplet_loss, multinomial_loss, AnchorTerms, Cluster, ClusterSpec,
    ContrastiveConfig, LabelSet, MultinomialConfig, TripletConfig,
};
use avsync::numeric::{logsumexp, Matrix};
use avsync::sampling::{PairLabel, SamplerConfig};
use avsync::training::{run_gradcheck, GradCheckConfig, LossKind, TrainConfig, Trainer};

const THRESHOLD: f64 = 0.9;

fn report(criterion: u32, passed: bool, detail: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {criterion}: {verdict} {detail}").unwrap();
    out.flush().unwrap();
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

// ---------------------------------------------------------------------------------------------
// Shared training setup

fn feature_corpus() -> &'static Vec<FeatureClip> {
    static CLIPS: OnceLock<Vec<FeatureClip>> = OnceLock::new();
    CLIPS.get_or_init(|| {
        let spec = SyntheticSpec::default();
        assert_eq!((spec.n_clips, spec.n_speakers_per_clip, spec.seed), (200, 3, 42));
        assert!(!spec.render_pixels);
        generate_synthetic(&spec)
            .unwrap()
            .iter()
            .map(|s| extract_clip_features(&s.clip, &MfccConfig::default(), &PreprocessOptions::default()))
            .collect::<avsync::Result<_>>()
            .unwrap()
    })
}

/// Default hyperparameters with a 3-layer encoder pair so the run fits a CPU budget.
fn learning_config(loss: LossKind, seed: u64, out_dir: PathBuf) -> TrainConfig {
    TrainConfig {
        loss,
        layers: 3,
        seed,
        sampler: SamplerConfig { seed, ..SamplerConfig::default() },
        out_dir,
        record_wall_time: false,
        ..TrainConfig::default()
    }
}

struct RunSummary {
    final_sync_shift1: f64,
    steps_to_threshold: Option<u64>,
    f1: f64,
    der: f64,
    elapsed: Duration,
}

fn train_and_score(config: TrainConfig, persist: bool) -> RunSummary {
    let started = Instant::now();
    let mut trainer = Trainer::new(config, feature_corpus().clone()).unwrap();
    let out = trainer.config().out_dir.clone();
    let total = trainer.total_steps();
    trainer.run_until(total, persist.then_some(out.as_path())).unwrap();
    let elapsed = started.elapsed();
    let val = trainer.val_corpus().clips();
    let (mut f1_sum, mut der_sum) = (0.0, 0.0);
    for clip in val {
        let result = diarize(trainer.model(), clip, trainer.config().sampler.width, DEFAULT_SMOOTHING).unwrap();
        let reference = clip.labels.as_deref().expect("synthetic clips carry labels");
        f1_sum += f1(reference, &result.labels).unwrap();
        der_sum += der(reference, &result.labels).unwrap();
    }
    RunSummary {
        final_sync_shift1: trainer.log().evals.last().unwrap().rates.sync_shift1,
        steps_to_threshold: trainer.log().steps_to_threshold(THRESHOLD),
        f1: f1_sum / val.len() as f64,
        der: der_sum / val.len() as f64,
        elapsed,
    }
}

struct ReferenceRun {
    _dir: tempfile::TempDir,
    out: PathBuf,
    summary: RunSummary,
}

fn reference_run() -> &'static ReferenceRun {
    static RUN: OnceLock<ReferenceRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let summary = train_and_score(learning_config(LossKind::Multinomial, 0, out.clone()), true);
        ReferenceRun { _dir: dir, out, summary }
    })
}

fn fmt_steps(s: Option<u64>) -> String {
    s.map_or("none".into(), |s| s.to_string())
}

// ---------------------------------------------------------------------------------------------

#[test]
fn criterion_1_gradient_checks() {
    let started = Instant::now();
    let mut parts = Vec::new();
    let mut passed = true;
    let cases = [
        ("contrastive", LossKind::Contrastive, true),
        ("triplet", LossKind::Triplet, true),
        ("multinomial", LossKind::Multinomial, true),
        ("multinomial-plain", LossKind::Multinomial, false),
    ];
    for (name, kind, soft_hinge) in cases {
        let cfg = GradCheckConfig { soft_hinge, ..GradCheckConfig::default() };
        assert_eq!(cfg.trials, 50);
        assert_eq!(cfg.options.rtol, 1e-4);
        let trials = run_gradcheck(kind, &cfg).unwrap();
        let ok = trials.iter().filter(|t| t.passed()).count();
        let worst = trials.iter().map(|t| t.report.max_rel_error()).fold(0.0, f64::max);
        passed &= ok == trials.len();
        parts.push(format!("{name}={ok}/{} (max_rel {worst:.1e})", trials.len()));
    }
    let seconds = started.elapsed().as_secs_f64();
    passed &= seconds < 120.0;
    report(1, passed, &format!("{} in {seconds:.2}s", parts.join(", ")));
    assert!(passed);
}

/// Naive `Σₙ D(pos) + Σ_groups log Σ exp(α − D)` with no max shift.
fn naive_multinomial(video: &Matrix, audio: &Matrix, anchors: &[AnchorTerms], cfg: &MultinomialConfig) -> f64 {
    let mut total = 0.0;
    for a in anchors {
        let v = video.row(a.video);
        let mut sums = [0.0; 3];
        for (label, row) in &a.audios {
            let d = sq_dist(v, audio.row(*row));
            match label {
                PairLabel::Synchronized => total += d,
                PairLabel::Shifted(j) if j.unsigned_abs() <= cfg.m1 => sums[0] += (cfg.alpha1 - d).exp(),
                PairLabel::Shifted(_) => sums[1] += (cfg.alpha2 - d).exp(),
                PairLabel::Heterologous { .. } => sums[2] += (cfg.alpha3 - d).exp(),
            }
        }
        total += sums.iter().map(|s| s.ln()).sum::<f64>();
    }
    total
}

/// Anchor `n` uses audio rows `n·per ..`: sync, shifts `-T..T`, then `n_het` heterologous rows.
fn random_anchors(anchors: usize, t: i32, n_het: usize) -> (Vec<AnchorTerms>, usize) {
    let per = 1 + 2 * t as usize + n_het;
    let terms = (0..anchors)
        .map(|n| {
            let base = n * per;
            let mut audios = vec![(PairLabel::Synchronized, base)];
            audios.extend((-t..=t).filter(|&j| j != 0).enumerate().map(|(k, j)| (PairLabel::Shifted(j), base + 1 + k)));
            audios.extend((0..n_het).map(|h| (PairLabel::Heterologous { source_clip: 1000 + h }, base + 1 + 2 * t as usize + h)));
            AnchorTerms { video: n, audios }
        })
        .collect();
    (terms, anchors * per)
}

#[test]
fn criterion_2_loss_oracles() {
    let tol = 1e-9;
    let mut checks: Vec<(&str, bool)> = Vec::new();

    let con = |pairs: &[(f64, bool)], alpha: f64| contrastive_loss(pairs, &ContrastiveConfig { alpha }).unwrap().0;
    checks.push(("contrastive sync d=0", close(con(&[(0.0, true)], 1.0), 0.0, tol)));
    checks.push(("contrastive sync d=2", close(con(&[(2.0, true)], 1.0), 2.0, tol)));
    checks.push(("contrastive neg a=3 d=1", close(con(&[(1.0, false)], 3.0), 2.0, tol)));
    checks.push(("contrastive neg a=1 d=2", close(con(&[(2.0, false)], 1.0), 0.0, tol)));

    // Anchor at the origin; positive/negative on an axis give the wanted squared distances.
    let tri = |dp: f64, dn: f64, alpha: f64| {
        dynamic_triplet_loss(&[0.0], &[dp.sqrt()], &[dn.sqrt()], &TripletConfig { alpha }).unwrap()
    };
    checks.push(("triplet inactive", close(tri(0.5, 1.2, 0.5).value, 0.0, tol)));
    checks.push(("triplet active", close(tri(1.0, 0.25, 0.5).value, 1.25, tol)));
    let same = dynamic_triplet_loss(&[0.3, -0.2], &[1.0, 0.5], &[1.0, 0.5], &TripletConfig { alpha: 0.2 }).unwrap();
    let cancel = same.d_positive.iter().zip(&same.d_negative).all(|(p, n)| close(p + n, 0.0, tol));
    checks.push(("triplet equal audios", close(same.value, 0.2, tol) && cancel));

    let cfg = MultinomialConfig::default();
    // Constant distance c: every audio sits at distance sqrt(c) from its anchor.
    let c: f64 = 3.0;
    let (terms, rows) = random_anchors(2, 10, 15);
    let video = Matrix::zeros(2, 2);
    let audio = Matrix::new(rows, 2, (0..rows).flat_map(|_| [c.sqrt(), 0.0]).collect()).unwrap();
    let per_anchor = c + (cfg.alpha1 - c + 10f64.ln()) + (cfg.alpha2 - c + 10f64.ln()) + (cfg.alpha3 - c + 15f64.ln());
    let value = multinomial_loss(&video, &audio, &terms, &cfg).unwrap().value;
    checks.push(("multinomial constant distances", close(value, 2.0 * per_anchor, tol)));

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let single = AnchorTerms {
        video: 0,
        audios: vec![
            (PairLabel::Synchronized, 0),
            (PairLabel::Shifted(2), 1),
            (PairLabel::Shifted(-7), 2),
            (PairLabel::Heterologous { source_clip: 1 }, 3),
        ],
    };
    let (v1, a1) = (gaussian(&mut rng, 1, 4), gaussian(&mut rng, 4, 4));
    let d: Vec<f64> = (0..4).map(|r| sq_dist(v1.row(0), a1.row(r))).collect();
    let expected = d[0] + (cfg.alpha1 - d[1]) + (cfg.alpha2 - d[2]) + (cfg.alpha3 - d[3]);
    let value = multinomial_loss(&v1, &a1, &[single], &cfg).unwrap().value;
    checks.push(("multinomial single negatives", close(value, expected, tol)));

    let (terms, rows) = random_anchors(2, 10, 3);
    let (v2, a2) = (gaussian(&mut rng, 2, 6), gaussian(&mut rng, rows, 6));
    let value = multinomial_loss(&v2, &a2, &terms, &cfg).unwrap().value;
    checks.push(("multinomial naive oracle", close(value, naive_multinomial(&v2, &a2, &terms, &cfg), tol)));

    let one = ClusterSpec {
        clusters: vec![Cluster { members: LabelSet::AnyNegative, margin: 1.5 }],
        squared_distance: true,
        soft_hinge: false,
    };
    let direct: f64 = terms
        .iter()
        .map(|a| {
            let v = v2.row(a.video);
            let pos = sq_dist(v, a2.row(a.audios[0].1));
            let args: Vec<f64> = a.audios[1..].iter().map(|(_, r)| 1.5 - sq_dist(v, a2.row(*r))).collect();
            pos + logsumexp(&args).unwrap()
        })
        .sum();
    let value = clustered_loss(&v2, &a2, &terms, &one).unwrap().value;
    checks.push(("clustered single cluster", close(value, direct, tol)));

    let mut identical = 0;
    for _ in 0..100 {
        let anchors = rng.random_range(1..5);
        let dim = rng.random_range(2..9);
        let (terms, rows) = random_anchors(anchors, 10, rng.random_range(1..6));
        let video = gaussian(&mut rng, anchors, dim);
        let audio = gaussian(&mut rng, rows, dim);
        let mut batch_ok = true;
        for soft_hinge in [false, true] {
            let cfg = MultinomialConfig { soft_hinge, ..MultinomialConfig::default() };
            let m = multinomial_loss(&video, &audio, &terms, &cfg).unwrap();
            let k = clustered_loss(&video, &audio, &terms, &cfg.cluster_spec()).unwrap();
            batch_ok &= m.value.to_bits() == k.value.to_bits()
                && m.d_video.data().iter().zip(k.d_video.data()).all(|(a, b)| a.to_bits() == b.to_bits())
                && m.d_audio.data().iter().zip(k.d_audio.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        }
        identical += batch_ok as usize;
    }
    checks.push(("clustered == multinomial bitwise", identical == 100));

    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let passed = failed.is_empty();
    let detail = if passed {
        format!("{} hand cases within 1e-9, clustered == multinomial on {identical}/100 random batches", checks.len() - 1)
    } else {
        format!("failed: {}", failed.join("; "))
    };
    report(2, passed, &detail);
    assert!(passed);
}

#[test]
fn criterion_3_logsumexp_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = 0;
    let mut large = 0;
    for i in 0..1000 {
        let n = rng.random_range(1..40);
        let scale = if i % 4 == 0 { 1e6 } else { 10f64.powi(rng.random_range(-3..4)) };
        large += (scale == 1e6) as usize;
        let v: Vec<f64> = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let lse = logsumexp(&v).unwrap();
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let rel = |x: f64| 1e-9 * x.abs().max(1.0);
        let bounds = lse.is_finite() && lse >= max - rel(max) && lse <= max + (n as f64).ln() + rel(max);
        let c = scale * rng.sample::<f64, _>(StandardNormal);
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let lse_shifted = logsumexp(&shifted).unwrap();
        let invariant = close(lse_shifted, lse + c, 1e-9 * lse_shifted.abs().max(lse.abs()).max(1.0));
        failures += (!(bounds && invariant)) as usize;
    }
    let passed = failures == 0;
    report(3, passed, &format!("{}/1000 vectors satisfy bounds and shift invariance ({large} at magnitude 1e6)", 1000 - failures));
    assert!(passed);
}

#[test]
fn criterion_4_end_to_end_learning() {
    let run = reference_run();
    let s = &run.summary;
    let passed =
        s.final_sync_shift1 >= 0.90 && s.f1 >= 0.85 && s.der <= 0.15 && s.elapsed < Duration::from_secs(15 * 60);
    report(
        4,
        passed,
        &format!(
            "sync<shift1 rate {:.3} (>= 0.90), held-out F1 {:.3} (>= 0.85), DER {:.3} (<= 0.15), training {:.1}s",
            s.final_sync_shift1,
            s.f1,
            s.der,
            s.elapsed.as_secs_f64()
        ),
    );
    assert!(passed);
}

fn median_steps(mut steps: Vec<Option<u64>>) -> Option<u64> {
    steps.sort_by_key(|s| s.unwrap_or(u64::MAX));
    steps[steps.len() / 2]
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

#[test]
fn criterion_5_multinomial_converges_fastest() {
    let scratch = tempfile::tempdir().unwrap();
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for loss in [LossKind::Multinomial, LossKind::Triplet, LossKind::Contrastive] {
        let runs: Vec<RunSummary> = (0..5)
            .map(|seed| train_and_score(learning_config(loss, seed, scratch.path().join("unused")), false))
            .collect();
        let steps: Vec<Option<u64>> = runs.iter().map(|r| r.steps_to_threshold).collect();
        let f1s: Vec<f64> = runs.iter().map(|r| r.f1).collect();
        lines.push(format!(
            "{}: steps [{}] median {}, F1 [{}] median {:.3}",
            loss.name(),
            steps.iter().map(|s| fmt_steps(*s)).collect::<Vec<_>>().join(" "),
            fmt_steps(median_steps(steps.clone())),
            f1s.iter().map(|f| format!("{f:.3}")).collect::<Vec<_>>().join(" "),
            median(f1s.clone())
        ));
        rows.push((median_steps(steps), median(f1s)));
    }
    let key = |s: Option<u64>| s.unwrap_or(u64::MAX);
    let (mul, tri, con) = (rows[0], rows[1], rows[2]);
    let passed = key(mul.0) < key(tri.0) && key(mul.0) < key(con.0);
    let secondary = format!(
        "triplet <= contrastive steps: {}, multinomial >= triplet F1: {}",
        key(tri.0) <= key(con.0),
        mul.1 >= tri.1
    );
    report(5, passed, &format!("{}; {secondary}", lines.join("; ")));
    assert!(passed);
}

#[test]
fn criterion_6_metric_oracles() {
    let mut checks = vec![
        der(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap() == 0.0,
        der(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap() == 0.25,
        der(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap() == 1.0,
        f1(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap() == 1.0,
        f1(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap() == (2.0 / 3.0 + 0.0) / 2.0,
        // Track names are scored as given, with no relabelling.
        f1(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap() == 0.0,
    ];
    let hand = checks.len();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let n = rng.random_range(1..300);
        let k = rng.random_range(1..5);
        let reference: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let hypothesis: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let accuracy = reference.iter().zip(&hypothesis).filter(|(r, h)| r == h).count() as f64 / n as f64;
        checks.push(close(der(&reference, &hypothesis).unwrap() + accuracy, 1.0, 1e-12));
    }
    let hand_ok = checks[..hand].iter().filter(|&&c| c).count();
    let random_ok = checks[hand..].iter().filter(|&&c| c).count();
    let passed = hand_ok == hand && random_ok == 100;
    report(6, passed, &format!("{hand_ok}/{hand} hand cases exact, der + accuracy = 1 on {random_ok}/100 random pairs"));
    assert!(passed);
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_7_determinism() {
    // The second run reuses the same output path so the two configs are identical.
    let out = &reference_run().out;
    let snapshot = out.with_file_name("first_run");
    std::fs::rename(out, &snapshot).unwrap();
    train_and_score(learning_config(LossKind::Multinomial, 0, out.clone()), true);

    let (a, b) = (files_under(&snapshot), files_under(out));
    let differing: Vec<String> = a
        .iter()
        .filter(|rel| std::fs::read(snapshot.join(rel)).ok() != std::fs::read(out.join(rel)).ok())
        .map(|rel| rel.display().to_string())
        .collect();
    let has = |name: &str| a.iter().any(|p| p.to_string_lossy().contains(name));
    let passed = a == b && differing.is_empty() && has("train_log") && has("eval_log") && has("checkpoint");
    let detail = if passed {
        format!("{} files byte-identical across two runs ({})", a.len(), a.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))
    } else {
        format!("file sets equal: {}, differing: [{}]", a == b, differing.join(", "))
    };
    report(7, passed, &detail);
    assert!(passed);
}
