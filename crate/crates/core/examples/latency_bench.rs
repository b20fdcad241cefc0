//! Measures per-window processing time (completion, features, prediction)
//! of a model trained at L = 1 s.
//!
//! ```text
//! cargo run --release --example latency_bench -- [windows]
//! ```

use std::time::Duration;

use rfid_activity::eval::{bench_latency, build_instances};
use rfid_activity::model::PipelineConfig;
use rfid_activity::sim::{generate_dataset, Scenario};
use rfid_activity::svm::TrainParams;

fn main() -> rfid_activity::Result<()> {
    let windows: usize = std::env::args().nth(1).map_or(200, |s| s.parse().expect("windows"));
    let config = PipelineConfig::default().with_window(1.0);
    let mut scenario = Scenario::default_scenario();
    scenario.instances_per_class = 2;
    let dataset = generate_dataset(&scenario, 42)?;
    let model = build_instances(&dataset, &config)?.train_all(&TrainParams::default())?;

    let fresh = generate_dataset(&scenario, 43)?;
    let per_trace = (scenario.duration_s / config.window_len_s).ceil() as usize;
    let traces = &fresh.traces[..windows.div_ceil(per_trace).min(fresh.traces.len())];
    let report = bench_latency(&model, &dataset.layout, traces, &config, Duration::ZERO)?;
    println!("{}", report.summary());
    Ok(())
}
