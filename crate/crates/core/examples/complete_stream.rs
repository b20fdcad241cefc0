//! Segments one simulated trace into windows and shows how completion
//! fills in antennas the reader did not visit during each window.
//!
//! ```text
//! cargo run --release --example complete_stream -- [window_s]
//! ```

use rfid_activity::model::{DataSegment, PipelineConfig};
use rfid_activity::sim::{generate_dataset, Scenario};
use rfid_activity::stream::{count_matrix, segment_stream, Completer};

fn main() -> rfid_activity::Result<()> {
    let window: f64 = std::env::args().nth(1).map_or(1.0, |s| s.parse().expect("window"));
    let mut scenario = Scenario::default_scenario();
    scenario.instances_per_class = 1;
    scenario.subjects.count = 1;
    let dataset = generate_dataset(&scenario, 7)?;
    let trace = &dataset.traces[2];
    let layout = &dataset.layout;
    let config = PipelineConfig::default().with_window(window);

    let antennas_seen = |seg: &DataSegment| {
        let counts = count_matrix(seg, layout);
        (0..layout.num_antennas())
            .filter(|&a| (0..layout.num_tags()).any(|t| counts.get(a, t) > 0))
            .count()
    };

    println!("{} trace, L = {window} s", trace.activity);
    println!("window_start_ms,readings,antennas,completed_readings,completed_antennas,merged");
    let mut completer = Completer::new(&config);
    for raw in segment_stream(&trace.readings, config.window_len_ms())?
        .into_iter()
        .take(15)
    {
        let (n, a) = (raw.readings.len(), antennas_seen(&raw));
        let seg = completer.process(raw, layout);
        println!(
            "{},{n},{a},{},{},{}",
            seg.window_start_ms,
            seg.readings.len(),
            antennas_seen(&seg),
            seg.completed_from.len()
        );
    }
    Ok(())
}
