//! Desk-scale autoencoder training: 20k steps of batch 64 on streamed
//! synthetic data. Interrupting and rerunning continues from the last
//! checkpoint.
//!
//! cargo run --release --example train_desk -- [OUT_DIR] [STEPS]

use dmc::nn::{train_to_dir, GenConfig, NetConfig, TrainOptions};

fn main() -> dmc::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "crates/core/artifacts/desk".into());
    let steps = args.next().map_or(20_000, |s| s.parse().expect("STEPS must be an integer"));
    let opts = TrainOptions { steps, checkpoint_every: 500, ..TrainOptions::default() };
    let start = std::time::Instant::now();
    let trainer = train_to_dir(&out, NetConfig::desk(), GenConfig::default(), opts, 2024)?;
    println!(
        "{} steps, held-out order accuracy {:.3}, {:.0?}",
        trainer.step_count(),
        trainer.validation_accuracy()?,
        start.elapsed()
    );
    Ok(())
}
