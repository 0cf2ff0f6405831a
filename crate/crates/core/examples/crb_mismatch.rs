//! Delay bound of a path between two DMC modes when the estimator assumes
//! one mode versus two, as the second mode grows.
//!
//! cargo run --release --example crb_mismatch -- [CONFIG.json]

use dmc::crb::{records_to_csv, run_mismatch_experiment, MismatchConfig};

fn main() -> dmc::Result<()> {
    let cfg: MismatchConfig = match std::env::args().nth(1) {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => MismatchConfig::default(),
    };
    let start = std::time::Instant::now();
    let records = run_mismatch_experiment(&cfg)?;
    print!("{}", records_to_csv(&records));
    let (first, last) = (&records[0], &records[records.len() - 1]);
    println!(
        "ratio top/bottom: one mode {:.2}, two modes {:.2} ({:.0?})",
        last.crb_one_mode / first.crb_one_mode,
        last.crb_two_mode / first.crb_two_mode,
        start.elapsed()
    );
    Ok(())
}
