//! Runs an experiment from a configuration file without writing artifacts.
//!
//!     cargo run --release --example run_config -- examples/configs/mean.toml 50

use ewfluct::harness::{compute, parse_config};

fn main() -> ewfluct::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/mean.toml").into());
    let mut cfg = parse_config(&std::fs::read_to_string(&path)?)?;
    if let Some(r) = args.next() {
        cfg.statistics.replicas = r.parse().expect("replica count");
    }
    println!("config hash {}", cfg.hash());
    let report = compute(&cfg)?;
    print!("{}", report.summary());
    Ok(())
}
