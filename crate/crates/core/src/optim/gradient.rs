use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objective::Objective;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    /// `(f(x + h e_i) - f(x - h e_i)) / 2h` per coordinate: `2n` evaluations.
    CentralFd,
    /// Simultaneous perturbation along one random ±1 direction: 2 evaluations.
    Spsa,
}

impl std::str::FromStr for GradientMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "central_fd" => Ok(Self::CentralFd),
            "spsa" => Ok(Self::Spsa),
            other => Err(Error::InvalidParameter(format!(
                "unknown gradient method {other:?} (expected central_fd or spsa)"
            ))),
        }
    }
}

impl std::fmt::Display for GradientMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::CentralFd => "central_fd",
            Self::Spsa => "spsa",
        })
    }
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("objective at {what}")))
    }
}

/// Numerical gradient of `objective` at `theta`. `seed` drives the SPSA
/// direction and is ignored by central differences.
pub fn estimate_gradient(
    objective: &dyn Objective,
    theta: &[f64],
    method: GradientMethod,
    step: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "fd step {step} must be positive"
        )));
    }
    if theta.len() != objective.dim() {
        return Err(Error::LengthMismatch {
            expected: objective.dim(),
            got: theta.len(),
        });
    }
    match method {
        GradientMethod::CentralFd => (0..theta.len())
            .into_par_iter()
            .map(|i| {
                let mut probe = theta.to_vec();
                probe[i] = theta[i] + step;
                let plus = finite(objective.value(&probe)?, "perturbed point")?;
                probe[i] = theta[i] - step;
                let minus = finite(objective.value(&probe)?, "perturbed point")?;
                Ok((plus - minus) / (2.0 * step))
            })
            .collect(),
        GradientMethod::Spsa => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let delta: Vec<f64> = (0..theta.len())
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let shifted = |sign: f64| -> Vec<f64> {
                theta
                    .iter()
                    .zip(&delta)
                    .map(|(t, d)| t + sign * step * d)
                    .collect()
            };
            let (plus, minus) = rayon::join(
                || objective.value(&shifted(1.0)),
                || objective.value(&shifted(-1.0)),
            );
            let diff = finite(plus?, "perturbed point")? - finite(minus?, "perturbed point")?;
            Ok(delta.iter().map(|d| diff / (2.0 * step * d)).collect())
        }
    }
}
