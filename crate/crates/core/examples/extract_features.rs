//! Extracts the per-window feature vectors of a few simulated traces and
//! writes them as CSV.
//!
//! ```text
//! cargo run --release --example extract_features -- [out.csv]
//! ```

use std::fs::File;
use std::io::BufWriter;

use rfid_activity::eval::featurize_trace;
use rfid_activity::features::{write_feature_csv, FeatureExtractor, FeatureRow, FeatureVector};
use rfid_activity::model::PipelineConfig;
use rfid_activity::sim::{generate_dataset, Scenario};

fn main() -> rfid_activity::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "features.csv".into());
    let mut scenario = Scenario::default_scenario();
    scenario.instances_per_class = 1;
    scenario.subjects.count = 1;
    let dataset = generate_dataset(&scenario, 42)?;
    let config = PipelineConfig::default();
    let extractor = FeatureExtractor::new(&dataset.layout, &config);
    let index = extractor.index();
    println!(
        "{} temporal + {} tag pairs + {} antenna pairs = {} features",
        index.temporal_len(),
        index.tag_pairs(),
        index.antenna_pairs(),
        extractor.dim()
    );

    let mut rows = Vec::new();
    for trace in &dataset.traces {
        for (_, values) in featurize_trace(&trace.readings, &dataset.layout, &config, &extractor)? {
            rows.push(FeatureRow {
                label: trace.activity.clone(),
                subject: trace.subject,
                features: FeatureVector {
                    values,
                    layout_fingerprint: extractor.fingerprint(),
                },
            });
        }
    }
    write_feature_csv(BufWriter::new(File::create(&out)?), &rows)?;
    println!("{} windows -> {out}", rows.len());
    Ok(())
}
