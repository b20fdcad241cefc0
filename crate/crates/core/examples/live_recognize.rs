//! Replays a simulated reading stream through the online recognizer: a
//! reader thread produces readings, the main thread segments, completes
//! and classifies each window as soon as it closes.
//!
//! ```text
//! cargo run --release --example live_recognize
//! ```

use std::io::{BufRead, BufReader};
use std::sync::mpsc;
use std::thread;

use rfid_activity::eval::build_instances;
use rfid_activity::features::FeatureExtractor;
use rfid_activity::model::PipelineConfig;
use rfid_activity::sim::{generate_dataset, Scenario};
use rfid_activity::stream::{format_reading, parse_reading, Completer, Segmenter};
use rfid_activity::svm::TrainParams;

fn main() -> rfid_activity::Result<()> {
    let config = PipelineConfig::default();
    let mut scenario = Scenario::default_scenario();
    scenario.instances_per_class = 4;
    let train = generate_dataset(&scenario, 42)?;
    let model = build_instances(&train, &config)?.train_all(&TrainParams::default())?;
    let layout = train.layout.clone();

    // a session of three activities back to back, 20 s each
    scenario.instances_per_class = 1;
    scenario.subjects.count = 1;
    let session = generate_dataset(&scenario, 99)?;
    let mut text = String::new();
    for (k, name) in ["sitting", "walking", "vacuuming"].iter().enumerate() {
        let trace = session.traces.iter().find(|t| &t.activity == name).expect("activity");
        for r in trace.readings.iter().filter(|r| r.timestamp_ms < 20_000) {
            let mut r = *r;
            r.timestamp_ms += k as i64 * 20_000;
            text.push_str(&format_reading(&r, None));
            text.push('\n');
        }
    }

    let (tx, rx) = mpsc::channel::<String>();
    let reader = thread::spawn(move || {
        for line in BufReader::new(text.as_bytes()).lines() {
            if tx.send(line.expect("in-memory read")).is_err() {
                break;
            }
        }
    });

    let extractor = FeatureExtractor::new(&layout, &config);
    let mut segmenter = Segmenter::new(config.window_len_ms());
    let mut completer = Completer::new(&config);
    let mut classify = |seg| -> rfid_activity::Result<()> {
        let seg = completer.process(seg, &layout);
        let fv = extractor.extract(&seg)?;
        let p = model.predict(&fv.values, fv.layout_fingerprint)?;
        println!(
            "{:>6} ms  {:<16} votes {}",
            seg.window_end_ms(),
            p.label.name,
            p.top_votes()
        );
        Ok(())
    };
    for (n, line) in rx.iter().enumerate() {
        let record = parse_reading(&line, n + 1, &layout)?;
        for seg in segmenter.push(record.reading)? {
            classify(seg)?;
        }
    }
    if let Some(seg) = segmenter.finish() {
        classify(seg)?;
    }
    reader.join().expect("reader thread");
    Ok(())
}
