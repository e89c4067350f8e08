//! Binary accuracy, mean absolute error and root mean squared error of
//! predicted fields.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use topo_core::dataset::FieldKind;

use crate::error::{Result, SurrogateError};

/// Class of a field value: density and Von Mises split at 0.5, the signed
/// principal stress by sign (tension positive).
pub fn binarize(kind: FieldKind, v: f32) -> bool {
    v >= threshold(kind)
}

pub fn threshold(kind: FieldKind) -> f32 {
    match kind {
        FieldKind::Density | FieldKind::VonMises => 0.5,
        FieldKind::Tension => 0.0,
    }
}

pub fn threshold_rule(kind: FieldKind) -> &'static str {
    match kind {
        FieldKind::Density | FieldKind::VonMises => ">= 0.5",
        FieldKind::Tension => "sign (>= 0)",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldMetrics {
    /// Percent of elements in the same class.
    pub ba: f64,
    pub mae: f64,
    pub rmse: f64,
}

impl FieldMetrics {
    /// Metrics of one predicted field against its ground truth.
    pub fn of_sample(kind: FieldKind, pred: &[f32], truth: &[f32]) -> Result<Self> {
        if pred.len() != truth.len() || pred.is_empty() {
            return Err(SurrogateError::invalid(format!(
                "field lengths {} and {} differ or are zero",
                pred.len(),
                truth.len()
            )));
        }
        let n = pred.len() as f64;
        let mut hits = 0usize;
        let (mut abs, mut sq) = (0.0, 0.0);
        for (p, t) in pred.iter().zip(truth) {
            hits += usize::from(binarize(kind, *p) == binarize(kind, *t));
            let d = (*p as f64) - (*t as f64);
            abs += d.abs();
            sq += d * d;
        }
        Ok(FieldMetrics {
            ba: 100.0 * hits as f64 / n,
            mae: abs / n,
            rmse: (sq / n).sqrt(),
        })
    }

    /// Average over samples.
    pub fn mean(samples: &[FieldMetrics]) -> Result<Self> {
        if samples.is_empty() {
            return Err(SurrogateError::invalid("no samples to average"));
        }
        let n = samples.len() as f64;
        Ok(FieldMetrics {
            ba: samples.iter().map(|m| m.ba).sum::<f64>() / n,
            mae: samples.iter().map(|m| m.mae).sum::<f64>() / n,
            rmse: samples.iter().map(|m| m.rmse).sum::<f64>() / n,
        })
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Ba => self.ba,
            Metric::Mae => self.mae,
            Metric::Rmse => self.rmse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Ba,
    Mae,
    Rmse,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Ba, Metric::Mae, Metric::Rmse];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ba => "ba",
            Metric::Mae => "mae",
            Metric::Rmse => "rmse",
        }
    }
}

/// Sample-averaged metrics per field kind.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub samples: usize,
    pub fields: Vec<(FieldKind, FieldMetrics)>,
}

impl MetricsReport {
    pub fn get(&self, kind: FieldKind) -> Option<&FieldMetrics> {
        self.fields.iter().find(|(k, _)| *k == kind).map(|(_, m)| m)
    }

    /// Human-readable table: one row per metric, one column per field.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<8}", "metric");
        for (k, _) in &self.fields {
            let _ = write!(s, "{:>12}", k.name());
        }
        s.push('\n');
        for metric in Metric::ALL {
            let _ = write!(s, "{:<8}", metric.name().to_uppercase());
            for (_, m) in &self.fields {
                let cell = match metric {
                    Metric::Ba => format!("{:.2}%", m.ba),
                    other => format!("{:.3}", m.get(other)),
                };
                let _ = write!(s, "{cell:>12}");
            }
            s.push('\n');
        }
        let _ = write!(s, "averaged over {} samples; BA classes:", self.samples);
        for (k, _) in &self.fields {
            let _ = write!(s, " {} {}", k.name(), threshold_rule(*k));
        }
        s.push('\n');
        s
    }

    /// Machine-readable lines `<field> <metric> <value>`.
    pub fn lines(&self) -> String {
        let mut s = String::new();
        for (k, m) in &self.fields {
            for metric in Metric::ALL {
                let _ = writeln!(s, "{} {} {:.6}", k.name(), metric.name(), m.get(metric));
            }
        }
        let _ = writeln!(s, "all samples {}", self.samples);
        s
    }
}
