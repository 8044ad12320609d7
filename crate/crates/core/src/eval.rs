//! Detection metrics: Mann-Whitney AUC, partial AUC, source/target splits and
//! the harmonic-mean summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Domain, Label};
use crate::error::{Error, Result};

pub const DEFAULT_PAUC_P: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub clip_id: String,
    pub machine_type: String,
    pub section: String,
    pub domain: Domain,
    pub label: Label,
    pub score: f64,
}

/// Which anomalies a domain AUC compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucConvention {
    /// Domain normals vs anomalies of the same domain.
    #[default]
    DomainPure,
    /// Domain normals vs anomalies of every domain.
    Mixed,
}

fn check_scores(normal: &[f64], anomaly: &[f64]) -> Result<()> {
    if normal.is_empty() || anomaly.is_empty() {
        return Err(Error::Empty(
            "AUC needs at least one normal and one anomalous score".into(),
        ));
    }
    if normal.iter().chain(anomaly).any(|s| s.is_nan()) {
        return Err(Error::Config("NaN score".into()));
    }
    Ok(())
}

/// Sum over anomalies of (#normals below + 0.5 * #normals tied); `sorted` ascending.
fn pair_wins(sorted: &[f64], anomaly: &[f64]) -> f64 {
    anomaly
        .iter()
        .map(|&a| {
            let below = sorted.partition_point(|&n| n < a);
            let not_above = sorted.partition_point(|&n| n <= a);
            below as f64 + 0.5 * (not_above - below) as f64
        })
        .sum()
}

/// Fraction of (normal, anomaly) pairs ranked correctly, ties counted half.
pub fn auc(normal: &[f64], anomaly: &[f64]) -> Result<f64> {
    check_scores(normal, anomaly)?;
    let mut sorted = normal.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(pair_wins(&sorted, anomaly) / (normal.len() * anomaly.len()) as f64)
}

/// Number of normals kept for partial AUC: ceil(p * N), guarding against
/// products like 0.1 * 30 = 3.0000000000000004.
pub fn pauc_normal_count(p: f64, n: usize) -> usize {
    (((p * n as f64) - 1e-9).ceil() as usize).clamp(1, n)
}

/// AUC restricted to false-positive rates in [0, p]: anomalies are compared
/// against the ceil(p * N) highest-scoring normals only.
pub fn pauc(normal: &[f64], anomaly: &[f64], p: f64) -> Result<f64> {
    check_scores(normal, anomaly)?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("pAUC p must be in (0, 1], got {p}")));
    }
    let mut sorted = normal.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = pauc_normal_count(p, sorted.len());
    let top = &sorted[sorted.len() - m..];
    Ok(pair_wins(top, anomaly) / (m * anomaly.len()) as f64)
}

/// Harmonic mean; zero if any input is zero.
pub fn hmean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("harmonic mean of nothing".into()));
    }
    if values.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Config("harmonic mean needs non-negative inputs".into()));
    }
    if values.contains(&0.0) {
        return Ok(0.0);
    }
    Ok(values.len() as f64 / values.iter().map(|v| 1.0 / v).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineMetrics {
    pub machine_type: String,
    /// All normals vs all anomalies.
    pub auc: f64,
    pub s_auc: Option<f64>,
    pub t_auc: Option<f64>,
    pub pauc: f64,
    pub n_source_normal: usize,
    pub n_source_anomaly: usize,
    pub n_target_normal: usize,
    pub n_target_anomaly: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub machines: Vec<MachineMetrics>,
    /// Harmonic mean over every available sAUC, tAUC and pAUC value.
    pub hmean: f64,
    /// Machines left out, with the reason.
    pub excluded: Vec<(String, String)>,
    pub p: f64,
    pub convention: AucConvention,
}

/// Per-machine metrics and their harmonic mean. Records with unknown labels
/// are ignored; machines lacking normals or anomalies are excluded with a
/// warning. A domain AUC is omitted when its cell is empty.
pub fn evaluate(records: &[ScoreRecord], p: f64, convention: AucConvention) -> Result<MetricReport> {
    let mut by_machine: BTreeMap<&str, Vec<&ScoreRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.label != Label::Unknown) {
        by_machine.entry(&r.machine_type).or_default().push(r);
    }
    let mut machines = Vec::new();
    let mut excluded = Vec::new();
    for (machine, recs) in by_machine {
        let pick = |domain: Option<Domain>, label: Label| -> Vec<f64> {
            recs.iter()
                .filter(|r| r.label == label && domain.is_none_or(|d| r.domain == d))
                .map(|r| r.score)
                .collect()
        };
        let (normals, anomalies) = (pick(None, Label::Normal), pick(None, Label::Anomaly));
        if normals.is_empty() || anomalies.is_empty() {
            let reason = "needs at least one normal and one anomalous clip".to_string();
            log::warn!("{machine}: excluded from evaluation ({reason})");
            excluded.push((machine.to_string(), reason));
            continue;
        }
        let domain_auc = |d: Domain| -> Result<Option<f64>> {
            let n = pick(Some(d), Label::Normal);
            let a = match convention {
                AucConvention::DomainPure => pick(Some(d), Label::Anomaly),
                AucConvention::Mixed => anomalies.clone(),
            };
            if n.is_empty() || a.is_empty() {
                log::warn!("{machine}: no {d} cell; {d} AUC omitted");
                return Ok(None);
            }
            auc(&n, &a).map(Some)
        };
        machines.push(MachineMetrics {
            machine_type: machine.to_string(),
            auc: auc(&normals, &anomalies)?,
            s_auc: domain_auc(Domain::Source)?,
            t_auc: domain_auc(Domain::Target)?,
            pauc: pauc(&normals, &anomalies, p)?,
            n_source_normal: pick(Some(Domain::Source), Label::Normal).len(),
            n_source_anomaly: pick(Some(Domain::Source), Label::Anomaly).len(),
            n_target_normal: pick(Some(Domain::Target), Label::Normal).len(),
            n_target_anomaly: pick(Some(Domain::Target), Label::Anomaly).len(),
        });
    }
    if machines.is_empty() {
        return Err(Error::Empty(
            "no machine has both normal and anomalous test clips".into(),
        ));
    }
    let values: Vec<f64> = machines
        .iter()
        .flat_map(|m| [m.s_auc, m.t_auc, Some(m.pauc)])
        .flatten()
        .collect();
    Ok(MetricReport {
        hmean: hmean(&values)?,
        machines,
        excluded,
        p,
        convention,
    })
}

impl MetricReport {
    /// Fixed-width table for terminal output (percentages).
    pub fn table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:>8} {:>8} {:>8} {:>8}",
            "machine", "AUC", "sAUC", "tAUC", "pAUC"
        );
        for m in &self.machines {
            let _ = writeln!(
                s,
                "{:<16} {:>8} {:>8} {:>8} {:>8}",
                m.machine_type,
                pct(Some(m.auc)),
                pct(m.s_auc),
                pct(m.t_auc),
                pct(Some(m.pauc))
            );
        }
        let _ = writeln!(
            s,
            "hmean {:.2}  (p = {}, {:?})",
            100.0 * self.hmean,
            self.p,
            self.convention
        );
        for (m, why) in &self.excluded {
            let _ = writeln!(s, "excluded {m}: {why}");
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        for m in &self.machines {
            w.serialize(m)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        assert_eq!(auc(&[0.1, 0.4], &[0.3, 0.5]).unwrap(), 0.75);
        assert_eq!(auc(&[1.0, 1.0], &[1.0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.0, 0.1], &[0.5, 0.6]).unwrap(), 1.0);
        let normals: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(pauc(&normals, &[0.95, 1.05], 0.1).unwrap(), 0.5);
        assert!((hmean(&[0.5, 1.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(hmean(&[0.7; 5]).unwrap(), 0.7);
    }

    #[test]
    fn normal_count_guard() {
        assert_eq!(pauc_normal_count(0.1, 30), 3);
        assert_eq!(pauc_normal_count(0.1, 10), 1);
        assert_eq!(pauc_normal_count(0.1, 11), 2);
        assert_eq!(pauc_normal_count(0.1, 3), 1);
        assert_eq!(pauc_normal_count(1.0, 7), 7);
    }

    #[test]
    fn errors() {
        assert!(auc(&[], &[1.0]).is_err());
        assert!(pauc(&[1.0], &[1.0], 0.0).is_err());
        assert!(pauc(&[1.0], &[1.0], 1.5).is_err());
        assert!(hmean(&[]).is_err());
    }

    fn rec(machine: &str, domain: Domain, label: Label, score: f64) -> ScoreRecord {
        ScoreRecord {
            clip_id: format!("{machine}-{score}"),
            machine_type: machine.into(),
            section: "00".into(),
            domain,
            label,
            score,
        }
    }

    #[test]
    fn domain_conventions() {
        use Domain::*;
        use Label::*;
        let records = vec![
            rec("fan", Source, Normal, 0.1),
            rec("fan", Source, Anomaly, 0.9),
            rec("fan", Target, Normal, 0.5),
            rec("fan", Target, Anomaly, 0.4),
            rec("pump", Source, Normal, 0.2),
        ];
        let pure = evaluate(&records, 0.1, AucConvention::DomainPure).unwrap();
        assert_eq!(pure.machines.len(), 1);
        assert_eq!(pure.excluded.len(), 1);
        let fan = &pure.machines[0];
        assert_eq!((fan.s_auc, fan.t_auc), (Some(1.0), Some(0.0)));
        assert_eq!(pure.hmean, 0.0);
        let mixed = evaluate(&records, 0.1, AucConvention::Mixed).unwrap();
        assert_eq!(mixed.machines[0].s_auc, Some(1.0));
        assert_eq!(mixed.machines[0].t_auc, Some(0.5));
    }
}
