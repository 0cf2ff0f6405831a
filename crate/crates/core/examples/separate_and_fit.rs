//! Let a trained network count and separate the modes of a residual, then
//! fit them jointly.
//!
//! cargo run --release --example separate_and_fit -- [CHECKPOINT_DIR]

use dmc::nn::{load_net, predict};
use dmc::{estimate_multimode, sample_observation, DmcModel, ModeParams};

fn main() -> dmc::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "crates/core/artifacts/desk/checkpoint".into());
    let net = load_net(&dir)?;
    let truth = DmcModel::new(vec![ModeParams::new(60.0, 40.0, 0.1)?, ModeParams::new(30.0, 60.0, 0.5)?], 1.0, 512)?;
    let obs = sample_observation(&truth, 32, 3)?;

    let p = predict(&net, &obs)?;
    println!("predicted order {} (logits {:.2?})", p.order, p.logits);
    let (fit, report) = estimate_multimode(&obs, &p.separations, p.order)?;
    for (k, m) in fit.modes().iter().enumerate() {
        println!("mode {k}: delta1 {:.2}  delta2 {:.2}  delta3 {:.4}", m.delta1(), m.delta2(), m.delta3());
    }
    println!("alpha0 {:.4}, {} iterations", fit.alpha0(), report.iterations);
    Ok(())
}
