//! Surface-mounted PMSM, two-phase αβ frame, unsaturated and non-salient.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::ModelError;

/// PMSM parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PmsmParams {
    /// Stator inductance [H].
    pub l_s: f64,
    /// Permanent-magnet flux [V·s].
    pub lambda_m: f64,
    /// Pole pairs.
    pub n_p: u32,
    /// Stator resistance [Ω].
    pub r_s: f64,
    /// Rotor inertia [kg·m²].
    pub j: f64,
}

impl PmsmParams {
    /// Desk-scale machine used by the open-loop scenario.
    pub fn default_desk() -> Self {
        Self {
            l_s: 5.0e-3,
            lambda_m: 0.1,
            n_p: 3,
            r_s: 0.5,
            j: 1.0e-3,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.l_s > 0.0 && self.lambda_m > 0.0 && self.n_p > 0 && self.r_s > 0.0 && self.j > 0.0
        {
            Ok(())
        } else {
            Err(ModelError::InvalidParameter(
                "PMSM parameters must be strictly positive",
            ))
        }
    }

    /// Magnet flux linkage `μ(q) = λ_m (cos n_p q, sin n_p q)`.
    pub fn magnet_flux(&self, q: f64) -> Vector2<f64> {
        let a = self.n_p as f64 * q;
        self.lambda_m * Vector2::new(a.cos(), a.sin())
    }

    /// `dμ/dq`.
    pub fn magnet_flux_dq(&self, q: f64) -> Vector2<f64> {
        let np = self.n_p as f64;
        let a = np * q;
        self.lambda_m * np * Vector2::new(-a.sin(), a.cos())
    }
}
