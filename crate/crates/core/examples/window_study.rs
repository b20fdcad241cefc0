//! Accuracy against window length, with and without data completion.
//!
//! ```text
//! cargo run --release --example window_study -- [windows...]
//! ```

use rfid_activity::eval::{ablate_completion, write_ablation_csv};
use rfid_activity::model::PipelineConfig;
use rfid_activity::sim::{generate_dataset, Scenario};
use rfid_activity::svm::TrainParams;

fn main() -> rfid_activity::Result<()> {
    let mut windows: Vec<f64> = std::env::args().skip(1).map(|s| s.parse().expect("window")).collect();
    if windows.is_empty() {
        windows = vec![1.0, 2.0, 5.0, 10.0, 20.0];
    }
    let dataset = generate_dataset(&Scenario::default_scenario(), 42)?;
    let rows = ablate_completion(
        &dataset,
        &windows,
        &PipelineConfig::default(),
        10,
        42,
        &TrainParams::default(),
    )?;
    write_ablation_csv(std::io::stdout(), &rows)?;
    for r in &rows {
        println!(
            "L = {:>4} s  completion gain {:+.1} points",
            r.window_len_s,
            100.0 * r.delta()
        );
    }
    Ok(())
}
