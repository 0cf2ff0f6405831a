//! Build a two-mode covariance, draw snapshots from it and compare the
//! measured delay profile with the expected one.
//!
//! cargo run --release --example covariance

use dmc::{build_full_covariance, expected_pdp, preprocess, sample_observation, DmcModel, ModeParams};

fn main() -> dmc::Result<()> {
    let modes = vec![ModeParams::new(2.0, 40.0, 0.1)?, ModeParams::new(0.5, 80.0, 0.55)?];
    let model = DmcModel::new(modes, 0.01, 128)?;
    let r = build_full_covariance(&model)?;
    println!("n_f {}  trace {:.3}  toeplitz {}", r.dim(), r.trace(), r.is_toeplitz());

    let obs = sample_observation(&model, 200, 1)?;
    let (measured, expected) = (preprocess(&obs), expected_pdp(&model));
    for i in (0..128).step_by(8) {
        println!("{:4} {:10.4} {:10.4}", i, measured.values()[i], expected.values()[i]);
    }
    Ok(())
}
