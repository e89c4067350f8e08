use rand::distributions::Open01;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Family, ParamVector};
use crate::error::{Error, Result};

/// Latin hypercube design: `n` points, one per stratum along every axis,
/// jittered uniformly inside the stratum (never on a stratum edge).
pub fn latin_hypercube(n: usize, bounds: &[(f64, f64)], seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    if let Some((lo, hi)) = bounds
        .iter()
        .find(|(lo, hi)| !(lo < hi && lo.is_finite() && hi.is_finite()))
    {
        return Err(Error::invalid(format!("degenerate bounds [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![vec![0.0; bounds.len()]; n];
    for (axis, &(lo, hi)) in bounds.iter().enumerate() {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        for (point, &s) in points.iter_mut().zip(&strata) {
            let u: f64 = rng.sample(Open01);
            point[axis] = lo + (s as f64 + u) / n as f64 * (hi - lo);
        }
    }
    Ok(points)
}

/// Latin hypercube over the parameter box of `family`.
pub fn sample_params(family: Family, n: usize, seed: u64) -> Result<Vec<ParamVector>> {
    Ok(latin_hypercube(n, family.bounds(), seed)?
        .into_iter()
        .map(|v| ParamVector::new(family, v))
        .collect())
}
