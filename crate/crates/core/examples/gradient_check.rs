//! Finite-difference checks of the end-to-end parameter gradients for every loss.
//!
//! `cargo run --release --example gradient_check -- [trials]`

use avsync::training::{run_gradcheck, GradCheckConfig, LossKind};

fn main() -> avsync::Result<()> {
    let trials = std::env::args().nth(1).map_or(50, |a| a.parse().expect("trial count"));
    for kind in [LossKind::Contrastive, LossKind::Triplet, LossKind::Multinomial] {
        let cfg = GradCheckConfig { trials, ..GradCheckConfig::default() };
        let reports = run_gradcheck(kind, &cfg)?;
        let passed = reports.iter().filter(|r| r.passed()).count();
        let worst = reports.iter().map(|r| r.report.max_rel_error()).fold(0.0, f64::max);
        let redrawn: usize = reports.iter().map(|r| r.redrawn).sum();
        println!("{:12} {passed}/{trials} passed, max relative error {worst:.2e}, {redrawn} coordinates redrawn near kinks", kind.name());
    }
    Ok(())
}
