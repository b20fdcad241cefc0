//! Trains the multiclass SVM on simulated data, saves it, loads it back and
//! classifies windows of fresh traces.
//!
//! ```text
//! cargo run --release --example train_and_predict -- [model.bin]
//! ```

use rfid_activity::eval::{build_instances, featurize_trace, ConfusionCounts};
use rfid_activity::features::FeatureExtractor;
use rfid_activity::model::PipelineConfig;
use rfid_activity::sim::{generate_dataset, Scenario};
use rfid_activity::svm::{load_model, save_model, TrainParams};

fn main() -> rfid_activity::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "model.bin".into());
    let scenario = Scenario::default_scenario();
    let config = PipelineConfig::default();

    let train = generate_dataset(&scenario, 42)?;
    let set = build_instances(&train, &config)?;
    let model = set.train_all(&TrainParams::default())?;
    println!(
        "trained on {} windows: {} support vectors, gamma {:.3e}",
        set.len(),
        model.support_vectors.len(),
        model.gamma
    );
    save_model(&model, path.as_ref())?;
    let model = load_model(path.as_ref())?;

    // different seed: new subjects and new traces
    let test = generate_dataset(&scenario, 1042)?;
    let extractor = FeatureExtractor::new(&test.layout, &config);
    let mut confusion = ConfusionCounts::new(test.activities.len());
    for trace in &test.traces {
        let truth = test.activities.lookup(&trace.activity)?.id;
        for (_, values) in featurize_trace(&trace.readings, &test.layout, &config, &extractor)? {
            let p = model.predict(&values, extractor.fingerprint())?;
            confusion.record(truth, p.label.id);
        }
    }
    println!("accuracy on unseen subjects: {:.4}", confusion.accuracy());
    confusion.write_csv(std::io::stdout(), &test.activities)?;
    Ok(())
}
