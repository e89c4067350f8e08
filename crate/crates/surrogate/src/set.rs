//! Trained surrogates of one problem family: storage, single-shot
//! prediction and evaluation against a test dataset.

use std::collections::BTreeMap;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};
use topo_core::dataset::{hex, Dataset, FieldKind};
use topo_core::problems::{mirror_full_bridge, Family, FamilyConfig, ParamVector};
use topo_core::stress::combined_field;
use topo_nn::{load_bundle, save_bundle, Tensor};

use crate::error::{Result, SurrogateError};
use crate::metrics::{FieldMetrics, MetricsReport};
use crate::pipeline::{
    field_shape, finish_field, initial_models, normalize_params, params_tensor, FieldModels, PipelineConfig,
    INFER_CHUNK,
};

pub const CONFIG_FILE: &str = "family.toml";

/// Per field kind: autoencoder plus regressor, with the family config they
/// were trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateSet {
    config: FamilyConfig,
    fields: BTreeMap<FieldKind, FieldModels>,
    fingerprint: String,
}

/// How out-of-box parameters are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundsMode {
    Strict,
    /// Predict anyway and report a warning.
    Explore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedField {
    pub kind: FieldKind,
    /// Grid extents of `values`, x fastest.
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub fields: Vec<PredictedField>,
    pub warnings: Vec<String>,
}

impl Prediction {
    pub fn get(&self, kind: FieldKind) -> Option<&PredictedField> {
        self.fields.iter().find(|f| f.kind == kind)
    }

    pub fn total_latency(&self) -> Duration {
        self.fields.iter().map(|f| f.latency).sum()
    }
}

impl SurrogateSet {
    pub fn new(config: FamilyConfig, fields: impl IntoIterator<Item = (FieldKind, FieldModels)>) -> Result<Self> {
        let mut set = SurrogateSet {
            config,
            fields: fields.into_iter().collect(),
            fingerprint: String::new(),
        };
        set.validate()?;
        set.fingerprint = set.compute_fingerprint()?;
        Ok(set)
    }

    /// Untrained models for every kind in `kinds`; useful for timing and
    /// interface tests.
    pub fn initialized(config: FamilyConfig, kinds: &[FieldKind], cfg: &PipelineConfig) -> Result<Self> {
        let fields = kinds
            .iter()
            .map(|&k| Ok((k, initial_models(&config, k, cfg)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(config, fields)
    }

    pub fn config(&self) -> &FamilyConfig {
        &self.config
    }

    pub fn family(&self) -> Family {
        self.config.family
    }

    pub fn kinds(&self) -> Vec<FieldKind> {
        self.fields.keys().copied().collect()
    }

    pub fn field(&self, kind: FieldKind) -> Option<&FieldModels> {
        self.fields.get(&kind)
    }

    /// Short digest of the family config and all model bundles.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn grid_dims(&self) -> [usize; 3] {
        self.config.dims3()
    }

    fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.fields.is_empty() {
            return Err(SurrogateError::MissingModel("surrogate set has no field models".into()));
        }
        let hash = hex(&self.config.geometry_hash());
        let sample = field_shape(self.family(), self.grid_dims());
        for (kind, fm) in &self.fields {
            let ae = &fm.autoencoder.model;
            let fc = &fm.regressor.model;
            let latent = ae
                .latent_size()
                .ok_or_else(|| SurrogateError::invalid(format!("{} autoencoder has no latent layer", kind.name())))?;
            if ae.input_dims() != sample || ae.output_dims() != sample {
                return Err(SurrogateError::GeometryMismatch(format!(
                    "{} autoencoder maps {:?} to {:?}, grid needs {:?}",
                    kind.name(),
                    ae.input_dims(),
                    ae.output_dims(),
                    sample
                )));
            }
            if fc.output_dims() != [latent] {
                return Err(SurrogateError::invalid(format!(
                    "{} regressor outputs {:?}, autoencoder latent size is {latent}",
                    kind.name(),
                    fc.output_dims()
                )));
            }
            if fc.input_dims() != [self.family().n_par()] {
                return Err(SurrogateError::invalid(format!(
                    "{} regressor takes {:?} inputs, {} has {} parameters",
                    kind.name(),
                    fc.input_dims(),
                    self.family(),
                    self.family().n_par()
                )));
            }
            for (role, b) in [("autoencoder", &fm.autoencoder), ("regressor", &fm.regressor)] {
                if let Some(h) = b.meta.tags.get("geometry_hash") {
                    if *h != hash {
                        return Err(SurrogateError::GeometryMismatch(format!(
                            "{} {role} was trained for geometry {h}, family config has {hash}",
                            kind.name()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn compute_fingerprint(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.config.to_toml().as_bytes());
        for (kind, fm) in &self.fields {
            h.update(kind.name().as_bytes());
            h.update(fm.autoencoder.to_bytes()?);
            h.update(fm.regressor.to_bytes()?);
        }
        Ok(hex(&h.finalize()[..8]))
    }

    /// Writes `family.toml` and `<field>.ae.topn` / `<field>.fc.topn` per
    /// field kind into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.config.save(&dir.join(CONFIG_FILE))?;
        for (kind, fm) in &self.fields {
            save_bundle(dir.join(format!("{}.ae.topn", kind.name())), &fm.autoencoder)?;
            save_bundle(dir.join(format!("{}.fc.topn", kind.name())), &fm.regressor)?;
        }
        Ok(())
    }

    /// Loads every field kind whose two bundle files exist in `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let cfg_path = dir.join(CONFIG_FILE);
        if !cfg_path.is_file() {
            return Err(SurrogateError::MissingModel(format!(
                "{} not found",
                cfg_path.display()
            )));
        }
        let config = FamilyConfig::load(&cfg_path)?;
        let mut fields = Vec::new();
        for kind in FieldKind::ALL {
            let ae = dir.join(format!("{}.ae.topn", kind.name()));
            let fc = dir.join(format!("{}.fc.topn", kind.name()));
            match (ae.is_file(), fc.is_file()) {
                (true, true) => fields.push((
                    kind,
                    FieldModels {
                        autoencoder: load_bundle(&ae)?,
                        regressor: load_bundle(&fc)?,
                    },
                )),
                (false, false) => {}
                _ => {
                    return Err(SurrogateError::MissingModel(format!(
                        "{} needs both {} and {}",
                        kind.name(),
                        ae.display(),
                        fc.display()
                    )))
                }
            }
        }
        Self::new(config, fields)
    }

    /// Refuses datasets generated for a different geometry.
    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        let expected = self.config.geometry_hash();
        if ds.header.geometry_hash != expected {
            return Err(SurrogateError::GeometryMismatch(format!(
                "dataset was generated for geometry {}, models for {}",
                hex(&ds.header.geometry_hash),
                hex(&expected)
            )));
        }
        Ok(())
    }

    /// Checks a parameter vector; in explore mode out-of-box values become
    /// warnings. A wrong length is always an error.
    pub fn check_params(&self, params: &[f64], mode: BoundsMode) -> Result<Vec<String>> {
        let family = self.family();
        if params.len() != family.n_par() {
            return Err(SurrogateError::invalid(format!(
                "{family} expects {} parameters, got {}",
                family.n_par(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(SurrogateError::invalid("parameters must be finite"));
        }
        let msg = match ParamVector::new(family, params.to_vec()).validate() {
            Ok(()) => return Ok(Vec::new()),
            Err(topo_core::Error::InvalidArgument(m)) => m,
            Err(e) => e.to_string(),
        };
        match mode {
            BoundsMode::Strict => Err(SurrogateError::InvalidArgument(msg)),
            BoundsMode::Explore => {
                log::warn!("{msg}");
                Ok(vec![msg])
            }
        }
    }

    /// Single-shot prediction `decode(regress(p))` for each requested kind,
    /// timed per field.
    pub fn predict(&self, params: &[f64], kinds: &[FieldKind], mode: BoundsMode) -> Result<Prediction> {
        if kinds.is_empty() {
            return Err(SurrogateError::invalid("no field kinds requested"));
        }
        let warnings = self.check_params(params, mode)?;
        let p: Vec<f32> = params.iter().map(|&v| v as f32).collect();
        let x = Tensor::new(vec![1, p.len()], normalize_params(self.family(), &p)?)?;
        let dims = self.config.grid.clone();
        let mut fields = Vec::with_capacity(kinds.len());
        for &kind in kinds {
            let fm = self
                .fields
                .get(&kind)
                .ok_or_else(|| SurrogateError::MissingModel(format!("no {} models loaded", kind.name())))?;
            let t = Instant::now();
            let code = fm.regressor.model.forward(&x)?;
            let mut values = fm.autoencoder.model.decode(&code)?.into_data();
            finish_field(kind, &mut values);
            fields.push(PredictedField {
                kind,
                dims: dims.clone(),
                values,
                latency: t.elapsed(),
            });
        }
        Ok(Prediction { fields, warnings })
    }

    /// Predicted fields of every record for one kind, in record order.
    pub fn predict_batch(&self, params: &[Vec<f32>], kind: FieldKind) -> Result<Vec<Vec<f32>>> {
        let fm = self
            .fields
            .get(&kind)
            .ok_or_else(|| SurrogateError::MissingModel(format!("no {} models loaded", kind.name())))?;
        let x = params_tensor(self.family(), params)?;
        let mut out = Vec::with_capacity(params.len());
        for start in (0..x.batch()).step_by(INFER_CHUNK) {
            let idx: Vec<usize> = (start..(start + INFER_CHUNK).min(x.batch())).collect();
            let code = fm.regressor.model.forward(&x.gather(&idx))?;
            let y = fm.autoencoder.model.decode(&code)?;
            for b in 0..y.batch() {
                let mut v = y.sample(b).to_vec();
                finish_field(kind, &mut v);
                out.push(v);
            }
        }
        Ok(out)
    }

    /// Sample-averaged metrics of every kind present in both the set and
    /// the dataset. Samples are split over `workers` threads and reduced in
    /// record order.
    pub fn evaluate(&self, test: &Dataset, workers: usize) -> Result<MetricsReport> {
        self.check_dataset(test)?;
        if test.is_empty() {
            return Err(SurrogateError::invalid("test set is empty"));
        }
        let kinds: Vec<FieldKind> = self.kinds().into_iter().filter(|k| test.header.has(*k)).collect();
        if kinds.is_empty() {
            return Err(SurrogateError::invalid("test set shares no field kind with the models"));
        }
        let workers = workers.clamp(1, test.len());
        let chunk = test.len().div_ceil(workers);
        let mut fields = Vec::with_capacity(kinds.len());
        for kind in kinds {
            let eval = |records: &[topo_core::dataset::Record]| -> Result<Vec<FieldMetrics>> {
                let params: Vec<Vec<f32>> = records.iter().map(|r| r.params.clone()).collect();
                let preds = self.predict_batch(&params, kind)?;
                preds
                    .iter()
                    .zip(records)
                    .map(|(p, r)| {
                        let truth = r
                            .field(kind)
                            .ok_or_else(|| SurrogateError::invalid(format!("record without {} field", kind.name())))?;
                        FieldMetrics::of_sample(kind, p, truth)
                    })
                    .collect()
            };
            let per: Vec<FieldMetrics> = if workers == 1 {
                eval(&test.records)?
            } else {
                let parts: Vec<Result<Vec<FieldMetrics>>> = thread::scope(|s| {
                    let handles: Vec<_> = test.records.chunks(chunk).map(|c| s.spawn(move || eval(c))).collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("evaluation thread panicked"))
                        .collect()
                });
                let mut all = Vec::with_capacity(test.len());
                for p in parts {
                    all.extend(p?);
                }
                all
            };
            fields.push((kind, FieldMetrics::mean(&per)?));
        }
        Ok(MetricsReport {
            samples: test.len(),
            fields,
        })
    }
}

/// Element-wise product of a predicted density and a predicted stress field.
pub fn combined_prediction(density: &PredictedField, stress: &PredictedField) -> Result<Vec<f32>> {
    if density.kind != FieldKind::Density || stress.kind == FieldKind::Density {
        return Err(SurrogateError::invalid(
            "combined field needs a density and a stress prediction",
        ));
    }
    let x: Vec<f64> = density.values.iter().map(|&v| v as f64).collect();
    let s: Vec<f64> = stress.values.iter().map(|&v| v as f64).collect();
    Ok(combined_field(&x, &s)?.into_iter().map(|v| v as f32).collect())
}

/// Full bridge from a half-bridge field, doubling the z extent.
pub fn mirror_field(values: &[f32], dims: &[usize]) -> Result<(Vec<usize>, Vec<f32>)> {
    let d: [usize; 3] = dims
        .try_into()
        .map_err(|_| SurrogateError::invalid("mirroring needs a 3D field"))?;
    let full = mirror_full_bridge(values, d)?;
    Ok((vec![d[0], d[1], 2 * d[2]], full))
}
