//! Electromechanical plant models in port-Hamiltonian form.
//!
//! Both concrete plants have two magnetic ports and one mechanical port. The
//! electrical state is the flux-linkage vector `λ ∈ R²`, the mechanical state
//! the coordinate `q` and momentum `p`, and the dynamics are
//!
//! ```text
//! λ̇ = −R_eff · i + B · u          i = ∇_λ H_E(λ, q)
//! q̇ =  k_J · ∇_p H_M              ṗ = −k_J · ∇_q H_E − R_M · ∇_p H_M + F_L
//! ```
//!
//! where `k_J` is the mechanical interconnection gain (1 for the PMSM, the
//! pivot distance `D` for the MagLev bench) and `R_eff` the electrical
//! dissipation matrix as it appears in the flux equation.

mod maglev;
mod pmsm;

pub use maglev::{maglev_controller, reference_qd, ControllerResistance, MaglevControllerParams,
    MaglevParams};
pub use pmsm::PmsmParams;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regression::ConstraintConstants;

/// Port counts of a plant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    /// Number of magnetic ports.
    pub n_e: usize,
    /// Number of mechanical ports.
    pub n_m: usize,
    /// Number of external voltage sources (`m ≤ n_e`).
    pub m: usize,
}

impl Dims {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_e == 0 || self.n_m == 0 || self.m == 0 {
            return Err(ModelError::InvalidParameter("port counts must be positive"));
        }
        if self.m > self.n_e {
            return Err(ModelError::InvalidParameter(
                "more voltage sources than magnetic ports",
            ));
        }
        Ok(())
    }
}

/// Plant state: flux linkages, mechanical coordinate and momentum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantState {
    /// Flux-linkage vector [V·s].
    pub lambda: Vector2<f64>,
    /// Mechanical coordinate [m or rad].
    pub q: f64,
    /// Mechanical momentum.
    pub p: f64,
}

impl PlantState {
    pub fn new(lambda: Vector2<f64>, q: f64, p: f64) -> Self {
        Self { lambda, q, p }
    }

    pub fn is_finite(&self) -> bool {
        self.lambda.iter().all(|v| v.is_finite()) && self.q.is_finite() && self.p.is_finite()
    }
}

/// Time derivative of a [`PlantState`].
#[derive(Clone, Copy, Debug)]
pub struct PlantStateDot {
    pub lambda_dot: Vector2<f64>,
    pub q_dot: f64,
    pub p_dot: f64,
}

/// One piecewise-constant bias segment, active from `t_from` until the next
/// segment's switch time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasSegment {
    /// Segment start time [s].
    pub t_from: f64,
    /// Current measurement offset [A].
    pub delta_i: [f64; 2],
    /// Voltage measurement offset [V].
    pub delta_u: [f64; 2],
}

/// Piecewise-constant measurement bias schedule.
///
/// `i_m = i + δ_i(t)`, `u_m = u + δ_u(t)`; segments are left-closed, so a
/// switch at `t_s` means the new offsets apply for `t ≥ t_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementBias {
    segments: Vec<BiasSegment>,
}

impl MeasurementBias {
    /// Bias-free channel.
    pub fn zero() -> Self {
        Self::constant(Vector2::zeros(), Vector2::zeros())
    }

    /// Single constant bias, active from `t = 0`.
    pub fn constant(delta_i: Vector2<f64>, delta_u: Vector2<f64>) -> Self {
        Self {
            segments: vec![BiasSegment {
                t_from: 0.0,
                delta_i: delta_i.into(),
                delta_u: delta_u.into(),
            }],
        }
    }

    pub fn from_segments(segments: Vec<BiasSegment>) -> Result<Self, ModelError> {
        if segments.is_empty() {
            return Err(ModelError::InvalidParameter("empty bias schedule"));
        }
        if !segments.windows(2).all(|w| w[0].t_from < w[1].t_from) {
            return Err(ModelError::InvalidParameter(
                "bias switch times must be strictly increasing",
            ));
        }
        Ok(Self { segments })
    }

    /// Append a switch to new offsets at time `t_s`.
    pub fn with_switch(
        mut self,
        t_s: f64,
        delta_i: Vector2<f64>,
        delta_u: Vector2<f64>,
    ) -> Result<Self, ModelError> {
        self.segments.push(BiasSegment {
            t_from: t_s,
            delta_i: delta_i.into(),
            delta_u: delta_u.into(),
        });
        Self::from_segments(self.segments)
    }

    /// Active offsets at time `t`.
    pub fn at(&self, t: f64) -> (Vector2<f64>, Vector2<f64>) {
        let seg = self
            .segments
            .iter()
            .rev()
            .find(|s| t >= s.t_from)
            .unwrap_or(&self.segments[0]);
        (Vector2::from(seg.delta_i), Vector2::from(seg.delta_u))
    }

    /// Scale every offset by `s` (bias sweeps).
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            segments: self
                .segments
                .iter()
                .map(|seg| BiasSegment {
                    t_from: seg.t_from,
                    delta_i: [seg.delta_i[0] * s, seg.delta_i[1] * s],
                    delta_u: [seg.delta_u[0] * s, seg.delta_u[1] * s],
                })
                .collect(),
        }
    }

    pub fn segments(&self) -> &[BiasSegment] {
        &self.segments
    }
}

/// Apply the measurement channel: `(i_m, u_m) = (i + δ_i(t), u + δ_u(t))`.
pub fn measure(
    i: Vector2<f64>,
    u: Vector2<f64>,
    bias: &MeasurementBias,
    t: f64,
) -> (Vector2<f64>, Vector2<f64>) {
    let (di, du) = bias.at(t);
    (i + di, u + du)
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    /// MagLev air gap closed (`|q| ≥ g`): the inductance degenerates.
    #[error("air gap violated: |q| = {q:.3e} ≥ g = {g:.3e}")]
    GapViolation { q: f64, g: f64 },
}

/// A concrete plant definition: dissipation, input matrix, energy gradients
/// and the constants of its algebraic flux/current constraint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    Pmsm(PmsmParams),
    Maglev(MaglevParams),
}

impl ModelSpec {
    pub fn dims(&self) -> Dims {
        Dims { n_e: 2, n_m: 1, m: 2 }
    }

    /// Electrical dissipation matrix as it appears in the flux equation.
    pub fn r_eff(&self) -> Matrix2<f64> {
        match self {
            ModelSpec::Pmsm(p) => Matrix2::from_diagonal_element(p.r_s),
            ModelSpec::Maglev(p) => {
                Matrix2::from_diagonal(&Vector2::new(p.r / (p.n * p.c1), p.r / (p.n * p.c2)))
            }
        }
    }

    /// Input matrix of the electrical ports (identity for both plants).
    pub fn b(&self) -> Matrix2<f64> {
        Matrix2::identity()
    }

    /// Mechanical friction coefficient (defaults to zero for both plants).
    pub fn r_m(&self) -> f64 {
        0.0
    }

    /// Constants of the algebraic constraint `w(λ, i) = 0` satisfied by the
    /// plant's constitutive relation.
    pub fn constraint(&self) -> ConstraintConstants {
        match self {
            ModelSpec::Pmsm(p) => ConstraintConstants::pmsm(p),
            ModelSpec::Maglev(p) => ConstraintConstants::maglev(p),
        }
    }

    /// Mechanical interconnection gain `k_J`.
    fn mech_gain(&self) -> f64 {
        match self {
            ModelSpec::Pmsm(_) => 1.0,
            ModelSpec::Maglev(p) => p.d,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelSpec::Pmsm(p) => p.validate(),
            ModelSpec::Maglev(p) => p.validate(),
        }
    }

    /// Domain check; the MagLev gap must stay open.
    pub fn in_domain(&self, state: &PlantState) -> Result<(), ModelError> {
        match self {
            ModelSpec::Pmsm(_) => Ok(()),
            ModelSpec::Maglev(p) => {
                if state.q.abs() >= p.g {
                    Err(ModelError::GapViolation { q: state.q, g: p.g })
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Constitutive current `i = ∇_λ H_E(λ, q)`.
    pub fn constitutive_current(
        &self,
        lambda: Vector2<f64>,
        q: f64,
    ) -> Result<Vector2<f64>, ModelError> {
        match self {
            ModelSpec::Pmsm(p) => Ok((lambda - p.magnet_flux(q)) / p.l_s),
            ModelSpec::Maglev(p) => {
                if q.abs() >= p.g {
                    return Err(ModelError::GapViolation { q, g: p.g });
                }
                Ok(Vector2::new(
                    (p.g - q) * lambda[0] / p.k1,
                    (p.g + q) * lambda[1] / p.k2,
                ))
            }
        }
    }

    /// Inverse map of the constitutive relation: the flux `λ = L(q)·i + μ(q)`
    /// produced by current `i` at coordinate `q`.
    pub fn flux_from_current(&self, i: Vector2<f64>, q: f64) -> Vector2<f64> {
        match self {
            ModelSpec::Pmsm(p) => p.l_s * i + p.magnet_flux(q),
            ModelSpec::Maglev(p) => Vector2::new(
                p.k1 * i[0] / (p.g - q),
                p.k2 * i[1] / (p.g + q),
            ),
        }
    }

    /// Magnetic energy `H_E(λ, q)`.
    pub fn electrical_energy(&self, lambda: Vector2<f64>, q: f64) -> f64 {
        match self {
            ModelSpec::Pmsm(p) => {
                let e = lambda - p.magnet_flux(q);
                e.norm_squared() / (2.0 * p.l_s)
            }
            ModelSpec::Maglev(p) => {
                0.5 * ((p.g - q) * lambda[0] * lambda[0] / p.k1
                    + (p.g + q) * lambda[1] * lambda[1] / p.k2)
            }
        }
    }

    /// `∇_q H_E(λ, q)`; the force of electrical origin is its negative.
    pub fn grad_q_electrical(&self, lambda: Vector2<f64>, q: f64) -> f64 {
        match self {
            ModelSpec::Pmsm(p) => {
                // ∂H_E/∂q = −iᵀ μ'(q)
                let i = (lambda - p.magnet_flux(q)) / p.l_s;
                -i.dot(&p.magnet_flux_dq(q))
            }
            ModelSpec::Maglev(p) => {
                0.5 * (lambda[1] * lambda[1] / p.k2 - lambda[0] * lambda[0] / p.k1)
            }
        }
    }

    /// Total energy `H = H_E + H_M` with `H_M = p²/(2J)`.
    pub fn total_energy(&self, state: &PlantState) -> f64 {
        self.electrical_energy(state.lambda, state.q) + state.p * state.p / (2.0 * self.inertia())
    }

    pub fn inertia(&self) -> f64 {
        match self {
            ModelSpec::Pmsm(p) => p.j,
            ModelSpec::Maglev(p) => p.j,
        }
    }

    /// Port-Hamiltonian dynamics under supply voltages `u` and load force `f_l`.
    pub fn ph_dynamics(
        &self,
        state: &PlantState,
        u: Vector2<f64>,
        f_l: f64,
    ) -> Result<PlantStateDot, ModelError> {
        self.in_domain(state)?;
        let i = self.constitutive_current(state.lambda, state.q)?;
        let k_j = self.mech_gain();
        let dp_h = state.p / self.inertia();
        Ok(PlantStateDot {
            lambda_dot: -self.r_eff() * i + self.b() * u,
            q_dot: k_j * dp_h,
            p_dot: -k_j * self.grad_q_electrical(state.lambda, state.q) - self.r_m() * dp_h + f_l,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pmsm() -> ModelSpec {
        ModelSpec::Pmsm(PmsmParams::default_desk())
    }

    fn maglev() -> ModelSpec {
        ModelSpec::Maglev(MaglevParams::paper_bench())
    }

    #[test]
    fn dims_validation() {
        assert!(Dims { n_e: 2, n_m: 1, m: 2 }.validate().is_ok());
        assert!(Dims { n_e: 2, n_m: 1, m: 3 }.validate().is_err());
        assert!(Dims { n_e: 0, n_m: 1, m: 0 }.validate().is_err());
    }

    #[test]
    fn pmsm_rest_state_flux_decay() {
        // λ = 0, p = 0, u = 0 at q = 0: i = −(λ_m/L_s)·e₁ and λ̇ = −R_s·i.
        let m = pmsm();
        let p = PmsmParams::default_desk();
        let st = PlantState::new(Vector2::zeros(), 0.0, 0.0);
        let dot = m.ph_dynamics(&st, Vector2::zeros(), 0.0).unwrap();
        assert_relative_eq!(dot.lambda_dot[0], p.r_s * p.lambda_m / p.l_s, max_relative = 1e-14);
        assert_relative_eq!(dot.lambda_dot[1], 0.0);
    }

    #[test]
    fn equilibrium_state_has_zero_derivatives() {
        // i = 0, p = 0, u = 0: every derivative vanishes.
        let m = pmsm();
        let p = PmsmParams::default_desk();
        let st = PlantState::new(p.magnet_flux(0.3), 0.3, 0.0);
        let dot = m.ph_dynamics(&st, Vector2::zeros(), 0.0).unwrap();
        assert!(dot.lambda_dot.norm() < 1e-18);
        assert_eq!(dot.q_dot, 0.0);
        assert!(dot.p_dot.abs() < 1e-18);
    }

    #[test]
    fn maglev_flux_decay_matches_effective_resistance() {
        // λ = L(q)·i, u = 0: λ̇_k = −R/(N c_k) · i_k.
        let m = maglev();
        let p = MaglevParams::paper_bench();
        let i = Vector2::new(0.7, -0.4);
        let q = 1.0e-4;
        let lambda = m.flux_from_current(i, q);
        let st = PlantState::new(lambda, q, 0.0);
        let dot = m.ph_dynamics(&st, Vector2::zeros(), 0.0).unwrap();
        assert_relative_eq!(dot.lambda_dot[0], -p.r / (p.n * p.c1) * i[0], max_relative = 1e-13);
        assert_relative_eq!(dot.lambda_dot[1], -p.r / (p.n * p.c2) * i[1], max_relative = 1e-13);
    }

    #[test]
    fn constitutive_current_examples() {
        let m = pmsm();
        let p = PmsmParams::default_desk();
        // Magnet-aligned flux gives zero current.
        let i = m.constitutive_current(p.magnet_flux(0.7), 0.7).unwrap();
        assert!(i.norm() < 1e-16);
        // λ = (λ_m + L_s, 0) at q = 0 gives i = (1, 0) A.
        let i = m
            .constitutive_current(Vector2::new(p.lambda_m + p.l_s, 0.0), 0.0)
            .unwrap();
        assert_relative_eq!(i[0], 1.0, max_relative = 1e-13);
        assert_relative_eq!(i[1], 0.0);
    }

    #[test]
    fn constitutive_round_trip_maglev() {
        let m = maglev();
        let i0 = Vector2::new(0.31, 0.87);
        let q = -2.0e-4;
        let i = m.constitutive_current(m.flux_from_current(i0, q), q).unwrap();
        assert_relative_eq!(i[0], i0[0], max_relative = 1e-14);
        assert_relative_eq!(i[1], i0[1], max_relative = 1e-14);
    }

    #[test]
    fn gap_closure_is_an_error() {
        let m = maglev();
        let g = MaglevParams::paper_bench().g;
        let st = PlantState::new(Vector2::new(1e-5, 1e-5), g, 0.0);
        assert!(matches!(
            m.ph_dynamics(&st, Vector2::zeros(), 0.0),
            Err(ModelError::GapViolation { .. })
        ));
        assert!(m.constitutive_current(Vector2::zeros(), 2.0 * g).is_err());
    }

    #[test]
    fn electrical_force_matches_finite_difference() {
        // −∇_q H_E against a central difference of H_E in q.
        for (m, q, lam) in [
            (pmsm(), 0.4_f64, Vector2::new(0.11, -0.05)),
            (maglev(), 5.0e-5, Vector2::new(2.4e-5, -1.1e-5)),
        ] {
            let h = 1e-7 * (1.0 + q.abs());
            let fd = (m.electrical_energy(lam, q + h) - m.electrical_energy(lam, q - h)) / (2.0 * h);
            let analytic = m.grad_q_electrical(lam, q);
            assert_relative_eq!(analytic, fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn bias_schedule_switching() {
        let b = MeasurementBias::constant(Vector2::new(-0.003, 0.0025), Vector2::zeros())
            .with_switch(50.0, Vector2::new(0.001, 0.0008), Vector2::new(0.002, 0.0002))
            .unwrap();
        let (di, du) = b.at(10.0);
        assert_eq!(di, Vector2::new(-0.003, 0.0025));
        assert_eq!(du, Vector2::zeros());
        let (di, du) = b.at(50.0);
        assert_eq!(di, Vector2::new(0.001, 0.0008));
        assert_eq!(du, Vector2::new(0.002, 0.0002));

        let (i_m, u_m) = measure(
            Vector2::new(1.0, 2.0),
            Vector2::new(0.5, -0.5),
            &b,
            10.0,
        );
        assert_eq!(i_m, Vector2::new(0.997, 2.0025));
        assert_eq!(u_m, Vector2::new(0.5, -0.5));
    }

    #[test]
    fn bias_schedule_rejects_nonincreasing_switches() {
        let r = MeasurementBias::constant(Vector2::zeros(), Vector2::zeros())
            .with_switch(10.0, Vector2::zeros(), Vector2::zeros())
            .unwrap()
            .with_switch(10.0, Vector2::zeros(), Vector2::zeros());
        assert!(r.is_err());
    }

    #[test]
    fn energy_dissipates_without_input() {
        // dH/dt = −iᵀ R_eff i ≤ 0 along unforced trajectories.
        let m = maglev();
        let st = PlantState::new(Vector2::new(3.0e-5, -1.5e-5), 4.0e-5, 1.0e-3);
        let dot = m.ph_dynamics(&st, Vector2::zeros(), 0.0).unwrap();
        let i = m.constitutive_current(st.lambda, st.q).unwrap();
        // Chain rule: dH/dt = ∇_λHᵀλ̇ + ∇_qH q̇ + ∇_pH ṗ.
        let dh = i.dot(&dot.lambda_dot)
            + m.grad_q_electrical(st.lambda, st.q) * dot.q_dot
            + st.p / m.inertia() * dot.p_dot;
        let expected = -(i.dot(&(m.r_eff() * i)));
        assert_relative_eq!(dh, expected, max_relative = 1e-10);
        assert!(dh <= 0.0);
    }
}
