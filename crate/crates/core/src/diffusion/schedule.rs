use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Ddpm,
    Ddim,
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerKind::Ddpm => "ddpm",
            SamplerKind::Ddim => "ddim",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    /// Number of forward steps T.
    pub total_steps: usize,
    /// Partial-diffusion depth used at inference.
    pub reverse_start: usize,
    pub schedule: ScheduleKind,
    /// DDIM timestep stride.
    pub ddim_interval: usize,
    pub sampler: SamplerKind,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            total_steps: 1000,
            reverse_start: 280,
            schedule: ScheduleKind::Sigmoid,
            ddim_interval: 4,
            sampler: SamplerKind::Ddim,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("diffusion: {m}")));
        if self.total_steps < 2 {
            return bad("total_steps must be at least 2");
        }
        if self.reverse_start == 0 || self.reverse_start > self.total_steps {
            return bad("reverse_start must be in [1, total_steps]");
        }
        if self.ddim_interval == 0 || self.ddim_interval > self.reverse_start {
            return bad("ddim_interval must be in [1, reverse_start]");
        }
        Ok(())
    }
}

const LINEAR_BETA_START: f64 = 1e-4;
const LINEAR_BETA_END: f64 = 1e-2;
const SIGMOID_START: f64 = -3.0;
const SIGMOID_END: f64 = 3.0;
const SIGMOID_TAU: f64 = 1.0;
const BETA_MIN: f64 = 1e-5;
const BETA_MAX: f64 = 0.999;

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Normalized sigmoid signal level at continuous time `u` in [0, 1]:
/// exactly 1 at u = 0 and exactly 0 at u = 1.
pub fn sigmoid_alpha_bar(u: f64) -> f64 {
    let v = |u: f64| logistic(-(SIGMOID_START + u * (SIGMOID_END - SIGMOID_START)) / SIGMOID_TAU);
    let (v0, v1) = (v(0.0), v(1.0));
    (v(u) - v1) / (v0 - v1)
}

/// Per-timestep coefficient tables, indexed 0..=T. Index 0 is the clean
/// sample: beta[0] = 0 and alpha_bar[0] = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub beta_tilde: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(cfg: &DiffusionConfig) -> Result<Self> {
        cfg.validate()?;
        let t_max = cfg.total_steps;
        let mut beta = vec![0.0; t_max + 1];
        match cfg.schedule {
            ScheduleKind::Linear => {
                for (t, b) in beta.iter_mut().enumerate().skip(1) {
                    let frac = (t - 1) as f64 / (t_max - 1) as f64;
                    *b = LINEAR_BETA_START * (1.0 - frac) + LINEAR_BETA_END * frac;
                }
            }
            ScheduleKind::Sigmoid => {
                for (t, b) in beta.iter_mut().enumerate().skip(1) {
                    let prev = sigmoid_alpha_bar((t - 1) as f64 / t_max as f64);
                    let cur = sigmoid_alpha_bar(t as f64 / t_max as f64);
                    *b = (1.0 - cur / prev).clamp(BETA_MIN, BETA_MAX);
                }
            }
        }
        Ok(Self::from_betas(beta))
    }

    /// Builds the derived tables from `beta[1..]`; `beta[0]` is ignored.
    pub fn from_betas(mut beta: Vec<f64>) -> Self {
        beta[0] = 0.0;
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for &a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let beta_tilde = (0..beta.len())
            .map(|t| {
                if t == 0 {
                    0.0
                } else {
                    (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t]
                }
            })
            .collect();
        Self {
            beta,
            alpha,
            alpha_bar,
            beta_tilde,
        }
    }

    /// T, the largest valid timestep.
    pub fn total_steps(&self) -> usize {
        self.beta.len() - 1
    }

    /// CSV text with one row per timestep.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,beta,alpha,alpha_bar,beta_tilde\n");
        for t in 0..self.beta.len() {
            out.push_str(&format!(
                "{t},{:e},{:e},{:e},{:e}\n",
                self.beta[t], self.alpha[t], self.alpha_bar[t], self.beta_tilde[t]
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(kind: ScheduleKind) -> NoiseSchedule {
        NoiseSchedule::new(&DiffusionConfig {
            schedule: kind,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn linear_endpoints() {
        let s = sched(ScheduleKind::Linear);
        assert_eq!(s.beta[1], 1e-4);
        assert_eq!(s.beta[1000], 1e-2);
        assert_eq!(s.alpha_bar[0], 1.0);
        assert_eq!(s.beta.len(), 1001);
    }

    #[test]
    fn sigmoid_endpoints_are_exact() {
        assert_eq!(sigmoid_alpha_bar(0.0), 1.0);
        assert_eq!(sigmoid_alpha_bar(1.0), 0.0);
        let s = sched(ScheduleKind::Sigmoid);
        assert!((s.alpha_bar[1] - 1.0).abs() < 1e-3);
        // last step is clamped
        assert_eq!(s.beta[1000], 0.999);
    }

    #[test]
    fn both_schedules_decrease_and_bound_posterior_variance() {
        for kind in [ScheduleKind::Linear, ScheduleKind::Sigmoid] {
            let s = sched(kind);
            for t in 1..=1000 {
                assert!(s.beta[t] > 0.0 && s.beta[t] < 1.0);
                assert!(s.alpha_bar[t] < s.alpha_bar[t - 1], "{kind:?} t={t}");
                assert!(s.beta_tilde[t] >= 0.0 && s.beta_tilde[t] <= s.beta[t]);
            }
        }
    }

    #[test]
    fn config_validation() {
        let bad = DiffusionConfig {
            reverse_start: 1001,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DiffusionConfig {
            ddim_interval: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DiffusionConfig {
            reverse_start: 3,
            ddim_interval: 4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let s = sched(ScheduleKind::Linear);
        let csv = s.to_csv();
        assert_eq!(csv.lines().count(), 1002);
        assert!(csv.starts_with("t,beta,alpha,alpha_bar,beta_tilde"));
    }
}
