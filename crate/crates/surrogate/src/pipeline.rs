//! Training stages: one autoencoder per field kind, its latent dataset, and
//! the regressor from design parameters to latent codes.

use std::thread;

use serde::{Deserialize, Serialize};
use topo_core::dataset::{Dataset, FieldKind, LatentDataset};
use topo_core::problems::{Family, FamilyConfig};
use topo_nn::spec::FC_HIDDEN;
use topo_nn::train::predict_batched;
use topo_nn::{
    regressor, train, Activation, AutoencoderConfig, LossKind, LrSchedule, Model, ModelBundle, Tensor, TrainConfig,
    LATENT_SIZE,
};

use crate::error::{Result, SurrogateError};
use crate::metrics::FieldMetrics;

/// Samples per forward pass during batched inference.
pub const INFER_CHUNK: usize = 32;

/// Reconstruction loss per field kind: binary cross-entropy for density,
/// mean squared error for both stress fields.
pub fn loss_for(kind: FieldKind) -> LossKind {
    match kind {
        FieldKind::Density => LossKind::Bce,
        FieldKind::VonMises | FieldKind::Tension => LossKind::Mse,
    }
}

/// Output activation per field kind. The signed field has no activation and
/// is clipped to [-1, 1] after prediction.
pub fn head_for(kind: FieldKind) -> Activation {
    match kind {
        FieldKind::Density | FieldKind::VonMises => Activation::Sigmoid,
        FieldKind::Tension => Activation::None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub encoder_channels: Vec<usize>,
    pub deep_channels: usize,
    pub latent: usize,
    pub fc_hidden: Vec<usize>,
    pub ae_train: TrainConfig,
    pub fc_train: TrainConfig,
}

impl PipelineConfig {
    /// Full-size architectures and training schedule.
    pub fn reference(seed: u64) -> Self {
        PipelineConfig {
            encoder_channels: vec![128, 64, 32],
            deep_channels: 32,
            latent: LATENT_SIZE,
            fc_hidden: vec![FC_HIDDEN, FC_HIDDEN],
            ae_train: TrainConfig::autoencoder(seed),
            fc_train: TrainConfig::regressor(seed.wrapping_add(1)),
        }
    }

    /// Reduced-depth autoencoder for single-core runs on reduced grids.
    pub fn desk(seed: u64) -> Self {
        PipelineConfig {
            encoder_channels: vec![8, 16],
            deep_channels: 16,
            latent: LATENT_SIZE,
            fc_hidden: vec![FC_HIDDEN, FC_HIDDEN],
            ae_train: TrainConfig {
                batch_size: 16,
                learning_rate: 2e-3,
                schedule: LrSchedule::Linear,
                max_epochs: 120,
                // Small desk sets give few batches per epoch, so the validation
                // loss plateaus while batch-norm statistics settle; stopping
                // there keeps a degenerate model.
                patience: 120,
                val_fraction: 0.2,
                seed,
            },
            fc_train: TrainConfig {
                batch_size: 16,
                learning_rate: 1e-3,
                schedule: LrSchedule::Linear,
                max_epochs: 400,
                patience: 60,
                val_fraction: 0.2,
                seed: seed.wrapping_add(1),
            },
        }
    }

    pub fn autoencoder_config(&self, grid: &[usize], kind: FieldKind) -> AutoencoderConfig {
        AutoencoderConfig {
            grid: grid.to_vec(),
            encoder_channels: self.encoder_channels.clone(),
            deep_channels: self.deep_channels,
            latent: self.latent,
            head: head_for(kind),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ae_train.validate()?;
        self.fc_train.validate()?;
        if self.latent == 0 || self.encoder_channels.is_empty() {
            return Err(SurrogateError::invalid(
                "latent size and encoder channels must be nonempty",
            ));
        }
        Ok(())
    }
}

/// Spatial rank of the field tensors of a family.
pub fn spatial_rank(family: Family) -> usize {
    match family {
        Family::Mbb => 2,
        Family::Bridge => 3,
    }
}

/// Per-sample tensor shape `[nx, ny, (nz,) 1]`.
pub fn field_shape(family: Family, dims: [usize; 3]) -> Vec<usize> {
    let mut s = dims[..spatial_rank(family)].to_vec();
    s.push(1);
    s
}

fn dataset_dims(ds: &Dataset) -> [usize; 3] {
    ds.header.dims.map(|d| d as usize)
}

/// Stacks one field of every record. Element order inside a sample is
/// `x + nx·(y + ny·z)`, which is also the tensor's memory order.
pub fn field_tensor(ds: &Dataset, kind: FieldKind) -> Result<Tensor<f32>> {
    if !ds.header.has(kind) {
        return Err(SurrogateError::invalid(format!("dataset has no {} field", kind.name())));
    }
    if ds.is_empty() {
        return Err(SurrogateError::invalid("dataset is empty"));
    }
    let shape = field_shape(ds.header.family, dataset_dims(ds));
    let fields: Vec<&[f32]> = ds
        .records
        .iter()
        .map(|r| {
            r.field(kind)
                .ok_or_else(|| SurrogateError::invalid(format!("record without {} field", kind.name())))
        })
        .collect::<Result<_>>()?;
    Ok(Tensor::from_samples(&shape, fields)?)
}

/// Maps parameters onto [0, 1] by the family box.
pub fn normalize_params(family: Family, params: &[f32]) -> Result<Vec<f32>> {
    let bounds = family.bounds();
    if params.len() != bounds.len() {
        return Err(SurrogateError::invalid(format!(
            "{family} expects {} parameters, got {}",
            bounds.len(),
            params.len()
        )));
    }
    Ok(params
        .iter()
        .zip(bounds)
        .map(|(&v, &(lo, hi))| ((v as f64 - lo) / (hi - lo)) as f32)
        .collect())
}

pub fn params_tensor(family: Family, params: &[Vec<f32>]) -> Result<Tensor<f32>> {
    let rows: Vec<Vec<f32>> = params
        .iter()
        .map(|p| normalize_params(family, p))
        .collect::<Result<_>>()?;
    Ok(Tensor::from_samples(
        &[family.n_par()],
        rows.iter().map(|r| r.as_slice()),
    )?)
}

/// Clips the signed field into its admissible range; other kinds pass.
pub fn finish_field(kind: FieldKind, values: &mut [f32]) {
    if kind == FieldKind::Tension {
        for v in values {
            *v = v.clamp(-1.0, 1.0);
        }
    }
}

/// Density classification accuracy and errors of `ae` reconstructing every
/// record, averaged over records.
pub fn reconstruction_metrics(ae: &Model<f32>, ds: &Dataset, kind: FieldKind) -> Result<FieldMetrics> {
    let x = field_tensor(ds, kind)?;
    let mut y = predict_batched(ae, &x, INFER_CHUNK)?;
    finish_field(kind, y.data_mut());
    let per: Vec<FieldMetrics> = (0..x.batch())
        .map(|b| FieldMetrics::of_sample(kind, y.sample(b), x.sample(b)))
        .collect::<Result<_>>()?;
    FieldMetrics::mean(&per)
}

/// `decode(encode(x))` of every record, one sample at a time.
pub fn reconstruct(ae: &Model<f32>, ds: &Dataset, kind: FieldKind) -> Result<Vec<Vec<f32>>> {
    let latent = encode_dataset(ds, &[(kind, ae)])?;
    let codes = latent.codes_for(kind).expect("codes of the encoded kind");
    codes
        .iter()
        .map(|c| {
            let h = Tensor::new(vec![1, c.len()], c.clone())?;
            let mut v = ae.decode(&h)?.into_data();
            finish_field(kind, &mut v);
            Ok(v)
        })
        .collect()
}

fn tag_bundle(bundle: &mut ModelBundle, ds: &Dataset, kind: FieldKind, role: &str) {
    let tags = &mut bundle.meta.tags;
    tags.insert("field".into(), kind.name().into());
    tags.insert("role".into(), role.into());
    tags.insert("family".into(), ds.header.family.name().into());
    tags.insert(
        "geometry_hash".into(),
        topo_core::dataset::hex(&ds.header.geometry_hash),
    );
}

/// Trains the autoencoder of one field kind. The bundle records the
/// reconstruction metrics over all given records as `train_ba`,
/// `train_mae` and `train_rmse`.
pub fn train_autoencoder(ds: &Dataset, kind: FieldKind, cfg: &PipelineConfig) -> Result<ModelBundle> {
    cfg.validate()?;
    let x = field_tensor(ds, kind)?;
    let grid = &dataset_dims(ds)[..spatial_rank(ds.header.family)];
    let spec = cfg.autoencoder_config(grid, kind).build()?;
    let model = Model::new(spec, cfg.ae_train.seed)?;
    let mut bundle = train(model, &x, &x, loss_for(kind), &cfg.ae_train)?;
    let m = reconstruction_metrics(&bundle.model, ds, kind)?;
    tag_bundle(&mut bundle, ds, kind, "autoencoder");
    bundle.meta.metrics.insert("train_ba".into(), m.ba);
    bundle.meta.metrics.insert("train_mae".into(), m.mae);
    bundle.meta.metrics.insert("train_rmse".into(), m.rmse);
    log::info!(
        "{} autoencoder: {} epochs, train BA {:.2}%",
        kind.name(),
        bundle.meta.epochs_run,
        m.ba
    );
    Ok(bundle)
}

/// Latent codes of one or more field kinds for every record.
pub fn encode_dataset(ds: &Dataset, encoders: &[(FieldKind, &Model<f32>)]) -> Result<LatentDataset> {
    let latent_size = match encoders.first() {
        Some((_, m)) => m
            .latent_size()
            .ok_or_else(|| SurrogateError::invalid("model has no latent layer"))?,
        None => return Err(SurrogateError::invalid("no encoders given")),
    };
    let mut codes = Vec::with_capacity(encoders.len());
    for (kind, ae) in encoders {
        if ae.latent_size() != Some(latent_size) {
            return Err(SurrogateError::invalid("encoders disagree on latent size"));
        }
        let x = field_tensor(ds, *kind)?;
        let mut rows = Vec::with_capacity(x.batch());
        for start in (0..x.batch()).step_by(INFER_CHUNK) {
            let idx: Vec<usize> = (start..(start + INFER_CHUNK).min(x.batch())).collect();
            let h = ae.encode(&x.gather(&idx))?;
            rows.extend((0..h.batch()).map(|b| h.sample(b).to_vec()));
        }
        codes.push((*kind, rows));
    }
    let latent = LatentDataset {
        latent_size,
        params: ds.records.iter().map(|r| r.params.clone()).collect(),
        codes,
    };
    latent.validate()?;
    Ok(latent)
}

/// Trains the parameter-to-latent regressor of one field kind with a mean
/// squared error on the codes.
pub fn train_regressor(
    latent: &LatentDataset,
    kind: FieldKind,
    family: Family,
    cfg: &PipelineConfig,
) -> Result<ModelBundle> {
    cfg.validate()?;
    let codes = latent
        .codes_for(kind)
        .ok_or_else(|| SurrogateError::invalid(format!("latent dataset has no {} codes", kind.name())))?;
    if codes.is_empty() {
        return Err(SurrogateError::invalid("latent dataset is empty"));
    }
    let x = params_tensor(family, &latent.params)?;
    let y = Tensor::from_samples(&[latent.latent_size], codes.iter().map(|c| c.as_slice()))?;
    let spec = regressor(family.n_par(), &cfg.fc_hidden, latent.latent_size)?;
    let model = Model::new(spec, cfg.fc_train.seed)?;
    let mut bundle = train(model, &x, &y, LossKind::Mse, &cfg.fc_train)?;
    let tags = &mut bundle.meta.tags;
    tags.insert("field".into(), kind.name().into());
    tags.insert("role".into(), "regressor".into());
    tags.insert("family".into(), family.name().into());
    log::info!(
        "{} regressor: {} epochs, best validation loss epoch {}",
        kind.name(),
        bundle.meta.epochs_run,
        bundle.meta.best_epoch
    );
    Ok(bundle)
}

/// Autoencoder and regressor of one field kind.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldModels {
    pub autoencoder: ModelBundle,
    pub regressor: ModelBundle,
}

/// Freshly initialized models of one field kind for `config`, as training
/// would start from them.
pub fn initial_models(config: &FamilyConfig, kind: FieldKind, cfg: &PipelineConfig) -> Result<FieldModels> {
    let ae_spec = cfg.autoencoder_config(&config.grid, kind).build()?;
    let fc_spec = regressor(config.family.n_par(), &cfg.fc_hidden, cfg.latent)?;
    let hash = topo_core::dataset::hex(&config.geometry_hash());
    let mut autoencoder = ModelBundle::new(Model::new(ae_spec, cfg.ae_train.seed)?);
    let mut regressor = ModelBundle::new(Model::new(fc_spec, cfg.fc_train.seed)?);
    for (b, role) in [(&mut autoencoder, "autoencoder"), (&mut regressor, "regressor")] {
        let tags = &mut b.meta.tags;
        tags.insert("field".into(), kind.name().into());
        tags.insert("role".into(), role.into());
        tags.insert("family".into(), config.family.name().into());
        tags.insert("geometry_hash".into(), hash.clone());
    }
    Ok(FieldModels { autoencoder, regressor })
}

/// Both stages for one field kind, trained in sequence.
pub fn train_field(ds: &Dataset, kind: FieldKind, cfg: &PipelineConfig) -> Result<FieldModels> {
    let autoencoder = train_autoencoder(ds, kind, cfg)?;
    let latent = encode_dataset(ds, &[(kind, &autoencoder.model)])?;
    let mut regressor = train_regressor(&latent, kind, ds.header.family, cfg)?;
    regressor.meta.tags.insert(
        "geometry_hash".into(),
        topo_core::dataset::hex(&ds.header.geometry_hash),
    );
    Ok(FieldModels { autoencoder, regressor })
}

/// Trains every requested field kind, up to `workers` kinds at a time.
/// Results are returned in the order of `kinds`.
pub fn train_fields(
    ds: &Dataset,
    kinds: &[FieldKind],
    cfg: &PipelineConfig,
    workers: usize,
) -> Result<Vec<(FieldKind, FieldModels)>> {
    let workers = workers.max(1);
    let mut out = Vec::with_capacity(kinds.len());
    for group in kinds.chunks(workers) {
        let results: Vec<Result<FieldModels>> = if group.len() == 1 {
            vec![train_field(ds, group[0], cfg)]
        } else {
            thread::scope(|s| {
                let handles: Vec<_> = group
                    .iter()
                    .map(|&k| s.spawn(move || train_field(ds, k, cfg)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("training thread panicked"))
                    .collect()
            })
        };
        for (k, r) in group.iter().zip(results) {
            out.push((*k, r?));
        }
    }
    Ok(out)
}

/// Checks that the dataset was generated for `cfg`.
pub fn check_geometry(ds: &Dataset, cfg: &FamilyConfig) -> Result<()> {
    let expected = cfg.geometry_hash();
    if ds.header.geometry_hash != expected {
        return Err(SurrogateError::GeometryMismatch(format!(
            "dataset hash {} but family config hash {}",
            topo_core::dataset::hex(&ds.header.geometry_hash),
            topo_core::dataset::hex(&expected)
        )));
    }
    Ok(())
}
