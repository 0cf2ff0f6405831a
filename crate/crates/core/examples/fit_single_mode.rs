//! Initialise one mode from the delay profile and refine it by maximum
//! likelihood.
//!
//! cargo run --release --example fit_single_mode

use dmc::estimator::estimate_single_mode;
use dmc::{fim, sample_observation, DmcModel, LmOptions, ModeParams};

fn main() -> dmc::Result<()> {
    let truth = DmcModel::new(vec![ModeParams::new(1.0, 25.0, 0.3)?], 0.01, 128)?;
    let obs = sample_observation(&truth, 32, 11)?;
    let (fit, report) = estimate_single_mode(&obs, &LmOptions::default())?;

    let m = fit.modes()[0];
    println!(
        "delta1 {:.4}  delta2 {:.3}  delta3 {:.5}  alpha0 {:.5}",
        m.delta1(),
        m.delta2(),
        m.delta3(),
        fit.alpha0()
    );
    println!(
        "{} iterations, {:?}, nll {:.3} -> {:.3}",
        report.iterations,
        report.termination_reason,
        report.nll_trace[0],
        report.nll_trace[report.nll_trace.len() - 1]
    );

    // delay standard deviation bound at the truth
    let j = fim(&dmc::likelihood::reparam_pack(&truth), 128, 32)?;
    let inv = j.try_inverse().ok_or(dmc::DmcError::SingularFim)?;
    println!("sqrt CRB(delta3) {:.2e}, error {:.2e}", inv[(2, 2)].sqrt(), (m.delta3() - 0.3).abs());
    Ok(())
}
