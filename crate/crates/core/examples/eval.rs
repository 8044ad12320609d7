//! Detection metrics on hand-made scores, under both domain conventions, and
//! the harmonic mean of a reference per-machine table.
//!
//! cargo run --release --example eval

use diffad::dataset::{Domain, Label};
use diffad::eval::{auc, evaluate, hmean, pauc, AucConvention, ScoreRecord};

fn main() -> diffad::Result<()> {
    println!("auc({{0.1, 0.4}} vs {{0.3, 0.5}}) = {}", auc(&[0.1, 0.4], &[0.3, 0.5])?);
    let normals: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    println!(
        "pauc(p = 0.1) against the top normal only = {}",
        pauc(&normals, &[0.95, 1.05], 0.1)?
    );

    let mut records = vec![];
    for (i, (domain, label, score)) in [
        (Domain::Source, Label::Normal, 0.10),
        (Domain::Source, Label::Normal, 0.20),
        (Domain::Source, Label::Anomaly, 0.60),
        (Domain::Target, Label::Normal, 0.45),
        (Domain::Target, Label::Normal, 0.30),
        (Domain::Target, Label::Anomaly, 0.40),
    ]
    .into_iter()
    .enumerate()
    {
        records.push(ScoreRecord {
            clip_id: format!("clip{i}"),
            machine_type: "fan".into(),
            section: "00".into(),
            domain,
            label,
            score,
        });
    }
    for convention in [AucConvention::DomainPure, AucConvention::Mixed] {
        print!("{}", evaluate(&records, 0.1, convention)?.table());
    }

    // (sAUC, tAUC, pAUC) per machine type, percent
    let table = [
        [83.68, 70.40, 54.58],
        [84.10, 59.38, 69.05],
        [61.38, 64.98, 57.16],
        [91.98, 61.01, 61.68],
        [67.78, 56.74, 53.21],
        [63.74, 56.30, 52.47],
        [55.78, 49.54, 49.37],
    ];
    let values: Vec<f64> = table.iter().flatten().map(|v| v / 100.0).collect();
    println!("hmean of the 21 per-machine values: {:.2}", 100.0 * hmean(&values)?);
    Ok(())
}
