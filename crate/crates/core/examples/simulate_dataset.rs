//! Generates the default simulated dataset and writes it to a directory.
//!
//! ```text
//! cargo run --release --example simulate_dataset -- [out_dir] [seed]
//! ```

use std::path::PathBuf;

use rfid_activity::sim::{generate_dataset, write_dataset, Scenario};

fn main() -> rfid_activity::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "sim_data".into()));
    let seed: u64 = args.next().map_or(42, |s| s.parse().expect("seed"));

    let scenario = Scenario::default_scenario();
    let dataset = generate_dataset(&scenario, seed)?;
    write_dataset(&dataset, &out)?;

    let readings: usize = dataset.traces.iter().map(|t| t.readings.len()).sum();
    println!(
        "{} traces, {} subjects, {readings} readings -> {}",
        dataset.traces.len(),
        dataset.num_subjects(),
        out.display()
    );
    for name in dataset.activities.names() {
        let n: usize = dataset
            .traces
            .iter()
            .filter(|t| &t.activity == name)
            .map(|t| t.readings.len())
            .sum();
        println!("  {name:<16} {n} readings");
    }
    Ok(())
}
