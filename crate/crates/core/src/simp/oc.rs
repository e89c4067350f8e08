use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimality-criteria update parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcSettings {
    pub volfrac: f64,
    pub move_limit: f64,
    /// Damping exponent applied to `B_e`.
    pub eta: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    /// Stop once `(hi − lo)/(hi + lo)` falls below this and the volume is met.
    pub lambda_rel_tol: f64,
    /// Admissible `|V(x)/V0 − f|` at the bisection root.
    pub volume_tol: f64,
}

impl Default for OcSettings {
    fn default() -> Self {
        OcSettings {
            volfrac: 0.5,
            move_limit: 0.2,
            eta: 0.5,
            lambda_lo: 1e-9,
            lambda_hi: 1e9,
            lambda_rel_tol: 1e-3,
            volume_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcStep {
    pub x_new: Vec<f64>,
    pub lambda: f64,
    pub volume: f64,
    pub bisections: usize,
}

/// Heuristic update of a single density for a trial multiplier.
#[inline]
pub fn oc_candidate(x: f64, dc: f64, dv: f64, lambda: f64, move_limit: f64, eta: f64) -> f64 {
    let b = (-dc / (lambda * dv)).max(0.0);
    let trial = x * b.powf(eta);
    let lower = (x - move_limit).max(0.0);
    let upper = (x + move_limit).min(1.0);
    if trial <= lower {
        lower
    } else if trial >= upper {
        upper
    } else {
        trial
    }
}

fn candidate_field(x: &[f64], dc: &[f64], dv: &[f64], lambda: f64, s: &OcSettings) -> Vec<f64> {
    x.iter()
        .zip(dc)
        .zip(dv)
        .map(|((&xe, &dce), &dve)| oc_candidate(xe, dce, dve, lambda, s.move_limit, s.eta))
        .collect()
}

/// OC update with the plain volume measure `mean(x_new)`.
pub fn oc_update(x: &[f64], dc: &[f64], dv: &[f64], settings: &OcSettings) -> Result<OcStep> {
    oc_update_with(x, dc, dv, settings, |xn| xn.iter().sum::<f64>() / xn.len() as f64)
}

/// OC update with a caller-supplied volume measure.
///
/// `volume` receives the candidate field and must be non-increasing in
/// the multiplier; it is where density filtering and passive-element
/// pinning enter the constraint. The multiplier is bisected on a
/// logarithmic scale.
pub fn oc_update_with<F>(x: &[f64], dc: &[f64], dv: &[f64], settings: &OcSettings, volume: F) -> Result<OcStep>
where
    F: Fn(&[f64]) -> f64,
{
    let f = settings.volfrac;
    let mut lo = settings.lambda_lo;
    let mut hi = settings.lambda_hi;
    let vol_lo = volume(&candidate_field(x, dc, dv, lo, settings));
    let vol_hi = volume(&candidate_field(x, dc, dv, hi, settings));
    if vol_lo < f - settings.volume_tol || vol_hi > f + settings.volume_tol {
        let (dmin, dmax) = min_max(dc);
        let (xmin, xmax) = min_max(x);
        return Err(Error::OptimizerFailure {
            iteration: 0,
            message: format!(
                "bisection cannot bracket volume {f}: V(λ={lo:e})={vol_lo:.6}, V(λ={hi:e})={vol_hi:.6}; \
                 x∈[{xmin:.4}, {xmax:.4}], dc∈[{dmin:.4e}, {dmax:.4e}]"
            ),
        });
    }
    let mut bisections = 0;
    loop {
        let mid = (lo * hi).sqrt();
        let candidate = candidate_field(x, dc, dv, mid, settings);
        let vol = volume(&candidate);
        bisections += 1;
        let width = (hi - lo) / (hi + lo);
        if (width < settings.lambda_rel_tol && (vol - f).abs() <= settings.volume_tol)
            || width < 1e-15
            || bisections > 500
        {
            return Ok(OcStep {
                x_new: candidate,
                lambda: mid,
                volume: vol,
                bisections,
            });
        }
        if vol > f {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}
