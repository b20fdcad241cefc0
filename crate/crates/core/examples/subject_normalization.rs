//! Leave-one-subject-out accuracy with raw RSS and with per-subject z-score
//! normalization.
//!
//! ```text
//! cargo run --release --example subject_normalization -- [seed]
//! ```

use rfid_activity::eval::loso_normalization;
use rfid_activity::model::PipelineConfig;
use rfid_activity::sim::{generate_dataset, Scenario};
use rfid_activity::svm::TrainParams;

fn main() -> rfid_activity::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(42, |s| s.parse().expect("seed"));
    let scenario = Scenario::default_scenario();
    let dataset = generate_dataset(&scenario, seed)?;
    for s in 0..dataset.num_subjects() {
        let p = scenario.subject_params(s, seed);
        println!(
            "subject {s}: offset {:+.2} dB, motion x{:.2}, absorption x{:.3}",
            p.offset_db, p.motion_scale, p.absorption
        );
    }
    let (plain, norm) = loso_normalization(&dataset, &PipelineConfig::default(), &TrainParams::default())?;
    println!("held-out subject   raw     normalized");
    for ((s, a), (_, b)) in plain.per_subject.iter().zip(&norm.per_subject) {
        println!("{s:>16}   {a:.4}  {b:.4}");
    }
    println!("{:>16}   {:.4}  {:.4}", "mean", plain.mean, norm.mean);
    Ok(())
}
