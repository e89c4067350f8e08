//! Architecture-variant and dataset-size experiments.

use std::fmt::Write as _;

use topo_core::dataset::{Dataset, FieldKind};
use topo_core::problems::FamilyConfig;
use topo_nn::Variant;

use crate::error::{Result, SurrogateError};
use crate::metrics::{FieldMetrics, Metric, MetricsReport};
use crate::pipeline::{encode_dataset, train_autoencoder, train_regressor, FieldModels, PipelineConfig};
use crate::set::SurrogateSet;

/// Dataset sizes swept at full scale.
pub const PAPER_SIZES: [usize; 5] = [500, 1000, 1500, 2000, 2500];

#[derive(Debug, Clone, PartialEq)]
pub struct StudyCell {
    pub ae: Variant,
    pub fc: Variant,
    pub metrics: FieldMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureStudy {
    pub kind: FieldKind,
    pub cells: Vec<StudyCell>,
}

impl ArchitectureStudy {
    pub fn cell(&self, ae: Variant, fc: Variant) -> Option<&StudyCell> {
        self.cells.iter().find(|c| c.ae == ae && c.fc == fc)
    }

    /// Relative change of one metric against the reference pair, in percent.
    pub fn delta(&self, ae: Variant, fc: Variant, metric: Metric) -> Option<f64> {
        let r = self.cell(Variant::Reference, Variant::Reference)?.metrics.get(metric);
        let v = self.cell(ae, fc)?.metrics.get(metric);
        (r != 0.0).then(|| 100.0 * (v - r) / r)
    }

    /// Metric grid followed by the percent deltas.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} field, autoencoder x regressor variants", self.kind.name());
        let _ = writeln!(
            s,
            "{:<10}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}",
            "pair", "BA", "MAE", "RMSE", "dBA%", "dMAE%", "dRMSE%"
        );
        for c in &self.cells {
            let name = format!("AE{}FC{}", c.ae.suffix(), c.fc.suffix());
            let d = |m| {
                self.delta(c.ae, c.fc, m)
                    .map_or("n/a".to_string(), |v| format!("{v:+.1}"))
            };
            let _ = writeln!(
                s,
                "{name:<10}{:>10.2}{:>10.4}{:>10.4}{:>10}{:>10}{:>10}",
                c.metrics.ba,
                c.metrics.mae,
                c.metrics.rmse,
                d(Metric::Ba),
                d(Metric::Mae),
                d(Metric::Rmse)
            );
        }
        s
    }
}

/// Trains every autoencoder variant, then every regressor variant on the
/// latent codes of the autoencoder it is paired with, and evaluates each
/// pair on `test`.
pub fn run_architecture_study(
    config: &FamilyConfig,
    train: &Dataset,
    test: &Dataset,
    kind: FieldKind,
    base: &PipelineConfig,
    variants: &[Variant],
) -> Result<ArchitectureStudy> {
    if variants.is_empty() {
        return Err(SurrogateError::invalid("no variants requested"));
    }
    let mut cells = Vec::new();
    for &ae_v in variants {
        let mut cfg = base.clone();
        let ae_cfg = ae_v.apply_ae(base.autoencoder_config(&config.grid, kind));
        cfg.encoder_channels = ae_cfg.encoder_channels;
        let autoencoder = train_autoencoder(train, kind, &cfg)?;
        let latent = encode_dataset(train, &[(kind, &autoencoder.model)])?;
        for &fc_v in variants {
            let mut fc_cfg = cfg.clone();
            fc_cfg.fc_hidden = fc_v.apply_hidden(&base.fc_hidden);
            let mut regressor = train_regressor(&latent, kind, train.header.family, &fc_cfg)?;
            if let Some(h) = autoencoder.meta.tags.get("geometry_hash") {
                regressor.meta.tags.insert("geometry_hash".into(), h.clone());
            }
            let set = SurrogateSet::new(
                config.clone(),
                [(
                    kind,
                    FieldModels {
                        autoencoder: autoencoder.clone(),
                        regressor,
                    },
                )],
            )?;
            let report = set.evaluate(test, 1)?;
            cells.push(StudyCell {
                ae: ae_v,
                fc: fc_v,
                metrics: report.fields[0].1,
            });
        }
    }
    Ok(ArchitectureStudy { kind, cells })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeStudy {
    pub rows: Vec<(usize, MetricsReport)>,
}

impl SizeStudy {
    pub fn table(&self) -> String {
        let mut s = String::new();
        for (n, report) in &self.rows {
            let _ = writeln!(s, "training samples {n}");
            s.push_str(&report.table());
        }
        s
    }

    pub fn lines(&self) -> String {
        let mut s = String::new();
        for (n, report) in &self.rows {
            for line in report.lines().lines() {
                let _ = writeln!(s, "size={n} {line}");
            }
        }
        s
    }
}

/// Retrains on nested prefixes of `train` (every larger subset contains the
/// smaller ones) and evaluates on the fixed `test` set. Sizes above the
/// available record count are skipped.
pub fn run_dataset_size_study(
    config: &FamilyConfig,
    train: &Dataset,
    test: &Dataset,
    kinds: &[FieldKind],
    base: &PipelineConfig,
    sizes: &[usize],
) -> Result<SizeStudy> {
    let mut sizes: Vec<usize> = sizes.iter().copied().filter(|&n| n > 0 && n <= train.len()).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.is_empty() {
        return Err(SurrogateError::invalid(format!(
            "no requested size fits the {} available records",
            train.len()
        )));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for n in sizes {
        let subset = train.take(n);
        let fields = crate::pipeline::train_fields(&subset, kinds, base, 1)?;
        let set = SurrogateSet::new(config.clone(), fields)?;
        rows.push((n, set.evaluate(test, 1)?));
    }
    Ok(SizeStudy { rows })
}
