//! Writes the three synthetic corpora (added tone, dropped band, transient
//! click) and prints the ground truth of the first anomalies.
//!
//! cargo run --release --example synth

mod common;

use diffad::dataset::{read_truth, scan_dataset, AnomalyKind, Split};

fn main() -> diffad::Result<()> {
    for kind in [
        AnomalyKind::AddedTone,
        AnomalyKind::DroppedBand,
        AnomalyKind::TransientClick,
    ] {
        let root = common::corpus(kind)?;
        let clips = scan_dataset(&root)?;
        let train = clips.iter().filter(|c| c.split == Split::Train).count();
        println!("{kind}: {} clips ({train} train) in {}", clips.len(), root.display());
        for t in read_truth(root.join("anomaly_truth.csv"))?.iter().take(3) {
            println!(
                "  {}: {:.0}-{:.0} Hz, {:.2}-{:.2} s",
                t.clip_id, t.freq_lo, t.freq_hi, t.start_s, t.end_s
            );
        }
    }
    Ok(())
}
