//! Ten-fold cross-validation of the default simulated dataset, with and
//! without data completion.
//!
//! ```text
//! cargo run --release --example cross_validate -- [seed] [window_s]
//! ```

use std::time::Instant;

use rfid_activity::eval::{build_instances, kfold_cv};
use rfid_activity::model::PipelineConfig;
use rfid_activity::sim::{generate_dataset, Scenario};
use rfid_activity::svm::TrainParams;

fn main() -> rfid_activity::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(42, |s| s.parse().expect("seed"));
    let window: f64 = args.next().map_or(5.0, |s| s.parse().expect("window"));

    let t0 = Instant::now();
    let dataset = generate_dataset(&Scenario::default_scenario(), seed)?;
    println!("simulated {} traces in {:.1?}", dataset.traces.len(), t0.elapsed());

    for completion in [true, false] {
        let config = PipelineConfig {
            completion,
            history_span_s: 20f64.max(window),
            ..PipelineConfig::default().with_window(window)
        };
        let t0 = Instant::now();
        let set = build_instances(&dataset, &config)?;
        let built = t0.elapsed();
        let report = kfold_cv(&set, 10, seed, &TrainParams::default())?;
        println!(
            "completion={completion:<5} windows={} accuracy={:.4} (features {built:.1?}, total {:.1?})",
            set.len(),
            report.accuracy,
            t0.elapsed()
        );
        for (c, name) in set.activities.names().iter().enumerate() {
            let (p, r) = report.confusion.precision_recall(c);
            println!("  {name:<16} precision={p:.3} recall={r:.3}");
        }
    }
    Ok(())
}
