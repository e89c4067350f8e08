//! JSON request and response types of the prediction service, and the
//! transport-independent handlers behind them.

use std::fmt;

use serde::{Deserialize, Serialize};
use topo_core::dataset::FieldKind;
use topo_core::problems::Family;
use topo_surrogate::{combined_prediction, mirror_field, BoundsMode, SurrogateError, SurrogateSet};

/// Field names accepted in a request.
pub const FIELD_NAMES: [&str; 5] = ["density", "vm", "tc", "combined_vm", "combined_tc"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub family: String,
    pub params: Vec<f64>,
    pub fields: Vec<String>,
    /// Bridge only: return the full bridge mirrored across z = 0.
    #[serde(default)]
    pub mirror: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldOutput {
    pub field: String,
    /// Grid extents, x fastest in `values`.
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub family: String,
    /// Fingerprint of the loaded models.
    pub model: String,
    pub fields: Vec<FieldOutput>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaResponse {
    pub family: String,
    pub param_names: Vec<String>,
    /// Closed `[lo, hi]` box per parameter, in request order.
    pub bounds: Vec<[f64; 2]>,
    pub grid: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mirrored_grid: Option<Vec<usize>>,
    /// Field names this service can return.
    pub fields: Vec<String>,
    pub model: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    BadRequest,
    Unprocessable,
}

impl Status {
    pub fn code(self) -> u16 {
        match self {
            Status::BadRequest => 400,
            Status::Unprocessable => 422,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: Status,
    pub message: String,
}

impl ApiError {
    fn bad(message: impl Into<String>) -> Self {
        ApiError {
            status: Status::BadRequest,
            message: message.into(),
        }
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        ApiError {
            status: Status::Unprocessable,
            message: message.into(),
        }
    }
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.status.code(), self.message)
    }
}

impl From<SurrogateError> for ApiError {
    fn from(e: SurrogateError) -> Self {
        match e {
            SurrogateError::InvalidArgument(m) => ApiError::unprocessable(m),
            other => ApiError::unprocessable(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Requested {
    Single(FieldKind),
    Combined(FieldKind),
}

impl Requested {
    fn parse(name: &str) -> Option<Self> {
        match name {
            "combined_vm" => Some(Requested::Combined(FieldKind::VonMises)),
            "combined_tc" => Some(Requested::Combined(FieldKind::Tension)),
            "density" | "vm" | "tc" => FieldKind::parse(name).map(Requested::Single),
            _ => None,
        }
    }

    fn needs(self) -> &'static [FieldKind] {
        match self {
            Requested::Single(FieldKind::Density) => &[FieldKind::Density],
            Requested::Single(FieldKind::VonMises) => &[FieldKind::VonMises],
            Requested::Single(FieldKind::Tension) => &[FieldKind::Tension],
            Requested::Combined(FieldKind::Tension) => &[FieldKind::Density, FieldKind::Tension],
            Requested::Combined(_) => &[FieldKind::Density, FieldKind::VonMises],
        }
    }
}

/// Parses and answers a `/predict` body.
pub fn handle_predict(set: &SurrogateSet, body: &[u8]) -> Result<PredictResponse, ApiError> {
    let req: PredictRequest =
        serde_json::from_slice(body).map_err(|e| ApiError::bad(format!("malformed request body: {e}")))?;
    predict(set, &req, BoundsMode::Strict)
}

/// Answers a parsed request. Status 400 marks a request that cannot be
/// understood, 422 one that is well formed but not satisfiable.
pub fn predict(set: &SurrogateSet, req: &PredictRequest, mode: BoundsMode) -> Result<PredictResponse, ApiError> {
    let family: Family = req.family.parse().map_err(|_| {
        ApiError::bad(format!(
            "family: unknown family '{}' (expected mbb or bridge)",
            req.family
        ))
    })?;
    if req.fields.is_empty() {
        return Err(ApiError::bad("fields: at least one field must be requested"));
    }
    let mut requested: Vec<(String, Requested)> = Vec::new();
    for name in &req.fields {
        let r = Requested::parse(name).ok_or_else(|| {
            ApiError::bad(format!(
                "fields: unknown field '{name}' (expected one of {})",
                FIELD_NAMES.join(", ")
            ))
        })?;
        if !requested.iter().any(|(n, _)| n == name) {
            requested.push((name.clone(), r));
        }
    }
    if family != set.family() {
        return Err(ApiError::unprocessable(format!(
            "family: this service holds {} models, not {family}",
            set.family()
        )));
    }
    if req.mirror && family != Family::Bridge {
        return Err(ApiError::unprocessable("mirror: only bridge fields can be mirrored"));
    }
    set.check_params(&req.params, mode)
        .map_err(|e| ApiError::unprocessable(format!("params: {}", plain(e))))?;
    let mut kinds: Vec<FieldKind> = Vec::new();
    for (_, r) in &requested {
        for k in r.needs() {
            if !kinds.contains(k) {
                kinds.push(*k);
            }
        }
    }
    if let Some(k) = kinds.iter().find(|k| set.field(**k).is_none()) {
        return Err(ApiError::unprocessable(format!(
            "fields: no {} models are loaded",
            k.name()
        )));
    }
    let pred = set.predict(&req.params, &kinds, mode)?;
    let mut fields = Vec::with_capacity(requested.len());
    for (name, r) in requested {
        let (dims, values, latency) = match r {
            Requested::Single(k) => {
                let f = pred.get(k).expect("predicted kind");
                (f.dims.clone(), f.values.clone(), f.latency)
            }
            Requested::Combined(k) => {
                let x = pred.get(FieldKind::Density).expect("predicted density");
                let s = pred.get(k).expect("predicted stress");
                (x.dims.clone(), combined_prediction(x, s)?, x.latency + s.latency)
            }
        };
        let (dims, values) = if req.mirror {
            mirror_field(&values, &dims)?
        } else {
            (dims, values)
        };
        fields.push(FieldOutput {
            field: name,
            dims,
            values,
            latency_ms: latency.as_secs_f64() * 1e3,
        });
    }
    Ok(PredictResponse {
        family: family.name().to_string(),
        model: set.fingerprint().to_string(),
        fields,
        warnings: pred.warnings,
    })
}

fn plain(e: SurrogateError) -> String {
    match e {
        SurrogateError::InvalidArgument(m) => m,
        other => other.to_string(),
    }
}

pub fn meta(set: &SurrogateSet) -> MetaResponse {
    let family = set.family();
    let grid = set.config().grid.clone();
    let mirrored_grid = (family == Family::Bridge).then(|| vec![grid[0], grid[1], 2 * grid[2]]);
    let kinds = set.kinds();
    let mut fields: Vec<String> = kinds.iter().map(|k| k.name().to_string()).collect();
    if kinds.contains(&FieldKind::Density) {
        for (k, name) in [
            (FieldKind::VonMises, "combined_vm"),
            (FieldKind::Tension, "combined_tc"),
        ] {
            if kinds.contains(&k) {
                fields.push(name.to_string());
            }
        }
    }
    MetaResponse {
        family: family.name().to_string(),
        param_names: family.param_names().iter().map(|s| s.to_string()).collect(),
        bounds: family.bounds().iter().map(|&(lo, hi)| [lo, hi]).collect(),
        grid,
        mirrored_grid,
        fields,
        model: set.fingerprint().to_string(),
    }
}
