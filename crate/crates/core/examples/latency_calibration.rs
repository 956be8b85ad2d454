//! The calibrated 1/2/4-node latency figure, optionally refitting the speed factors.
//!
//! `cargo run --release --example latency_calibration -- [--fit]`

use edgepar::sim::{calibration_model, CalibratedScenario, Calibration};

fn main() -> edgepar::Result<()> {
    let cal = if std::env::args().any(|a| a == "--fit") {
        let c = Calibration::fit()?;
        println!("fitted factors: child {:.7}, shared {:.7}", c.child, c.shared);
        c
    } else {
        Calibration::fitted()
    };
    let model = calibration_model();
    let base = CalibratedScenario::build(&model, 1, &cal)?.timing()?;
    for n in [1, 2, 4] {
        let s = CalibratedScenario::build(&model, n, &cal)?;
        let t = s.timing()?;
        println!("{n} node(s): {t:>8.3} s, speedup {:.3}x, plan {:?}", base / t, s.plan.ranges());
    }
    Ok(())
}
