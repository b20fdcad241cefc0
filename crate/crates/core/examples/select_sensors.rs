//! Searches for the smallest antenna and body-part set that keeps
//! cross-validated accuracy above a threshold.
//!
//! ```text
//! cargo run --release --example select_sensors -- [scenario.toml] [rho]
//! ```

use std::path::PathBuf;

use rfid_activity::eval::build_instances;
use rfid_activity::model::PipelineConfig;
use rfid_activity::select::{select_min, Granularity};
use rfid_activity::sim::{generate_dataset, Scenario};
use rfid_activity::svm::TrainParams;

fn main() -> rfid_activity::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().map_or_else(
        || PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/planted.toml"),
        PathBuf::from,
    );
    let rho: f64 = args.next().map_or(0.9, |s| s.parse().expect("rho"));

    let scenario = Scenario::load(&path)?;
    let dataset = generate_dataset(&scenario, 42)?;
    let set = build_instances(&dataset, &PipelineConfig::default())?;
    println!("{} windows, {} classes", set.len(), set.activities.len());

    let result = select_min(
        &set,
        rho,
        Granularity::Part,
        5,
        42,
        &TrainParams::default(),
        |a, p, n| eprintln!("level ({a}, {p}) done, {n} subsets evaluated"),
    )?;
    match result.level {
        Some((a, p)) => println!("smallest level reaching {rho}: {a} antennas, {p} parts"),
        None => println!("no subset reaches {rho}"),
    }
    print!("{}", result.report(&set.layout));
    if let Some((spec, acc)) = &result.best {
        println!("best seen: {spec} at {acc:.4}");
    }
    Ok(())
}
