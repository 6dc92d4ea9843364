//! 2-DOF magnetic levitation bench: a pivoting beam between two
//! electromagnets, `q = D·Θ` the displacement at the actuator.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{ModelError, PlantState};

/// MagLev plant parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaglevParams {
    /// Beam inertia [kg·m²].
    pub j: f64,
    /// Inductance constant of coil 1 [H·m].
    pub k1: f64,
    /// Inductance constant of coil 2 [H·m].
    pub k2: f64,
    /// Coil resistance [Ω].
    pub r: f64,
    /// Turns count.
    pub n: f64,
    /// Scaling constant of coil 1.
    pub c1: f64,
    /// Scaling constant of coil 2.
    pub c2: f64,
    /// Nominal air gap [m].
    pub g: f64,
    /// Pivot-to-actuator distance [m].
    pub d: f64,
}

impl MaglevParams {
    /// The benchmark rig's plant constants.
    pub fn paper_bench() -> Self {
        Self {
            j: 9.67e-2,
            k1: 2.2e-8,
            k2: 2.2e-8,
            r: 1.6,
            n: 321.0,
            c1: 293.5,
            c2: 293.5,
            g: 3.3e-4,
            d: 0.145,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all_pos = [
            self.j, self.k1, self.k2, self.r, self.n, self.c1, self.c2, self.g, self.d,
        ]
        .iter()
        .all(|v| *v > 0.0);
        if all_pos {
            Ok(())
        } else {
            Err(ModelError::InvalidParameter(
                "MagLev parameters must be strictly positive",
            ))
        }
    }
}

/// Which resistance enters the controller's flux-dissipation compensation
/// term.
///
/// The plant's flux equation dissipates through `R/(N c_k)`; compensating
/// with the bare coil resistance `R` turns that term into strong positive
/// flux feedback and the loop collapses within a millisecond (kept available
/// as [`ControllerResistance::BareR`] for demonstration). The default
/// compensates exactly what the plant dissipates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerResistance {
    /// `R/(N c_k)` — consistent with the plant's flux equation.
    #[default]
    Effective,
    /// Bare `R` as printed in the source controller.
    BareR,
}

/// Full-state feedback controller parameters for the MagLev bench.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaglevControllerParams {
    /// Energy-shaping gain (> 0).
    pub alpha: f64,
    /// Energy-shaping gain (< 0).
    pub beta: f64,
    /// Damping-injection gain (> 0).
    pub r_a: f64,
    /// Gain on the shaped coordinate `z̃₂` (> 0).
    pub k_g: f64,
    /// Flux setpoint of coil 2 [V·s].
    pub lambda2_star: f64,
    /// Position setpoint [m].
    pub q_star: f64,
    /// Momentum setpoint (0 at rest).
    pub p_star: f64,
    /// Resistance entering the dissipation-compensation term.
    pub resistance: ControllerResistance,
}

impl MaglevControllerParams {
    /// Tuning used by the bench scenario.
    pub fn paper_bench() -> Self {
        Self {
            alpha: 10.0,
            beta: -10.0,
            r_a: 1.0e-2,
            k_g: 300.0,
            lambda2_star: 2.0e-5,
            q_star: 0.0,
            p_star: 0.0,
            resistance: ControllerResistance::Effective,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.alpha > 0.0 && self.beta < 0.0 && self.r_a > 0.0 && self.k_g > 0.0 {
            Ok(())
        } else {
            Err(ModelError::InvalidParameter(
                "require alpha > 0, beta < 0, r_a > 0, k_g > 0",
            ))
        }
    }

    /// Coil-1 flux setpoint implied by force balance:
    /// `λ₁* = sqrt(k₁c₂/(k₂c₁))·λ₂*`.
    pub fn lambda1_star(&self, plant: &MaglevParams) -> f64 {
        (plant.k1 * plant.c2 / (plant.k2 * plant.c1)).sqrt() * self.lambda2_star
    }
}

/// Time-varying position reference [m]:
/// `q_d(t) = 1e−5·(6 sin 10t + 4 sin 20t + 6 sin 15t)`.
pub fn reference_qd(t: f64) -> f64 {
    1.0e-5 * (6.0 * (10.0 * t).sin() + 4.0 * (20.0 * t).sin() + 6.0 * (15.0 * t).sin())
}

/// Static full-state feedback for the MagLev bench.
///
/// The reference enters by replacing `q*` with `q* + q_d` in the shaped
/// coordinate `z̃₂`; the flux setpoints stay fixed.
pub fn maglev_controller(
    ctl: &MaglevControllerParams,
    plant: &MaglevParams,
    state: &PlantState,
    q_d: f64,
) -> Vector2<f64> {
    let MaglevParams { j, k1, k2, r, n, c1, c2, g, d, .. } = *plant;
    let lam1s = ctl.lambda1_star(plant);
    let lam2s = ctl.lambda2_star;
    let (l1, l2) = (state.lambda[0], state.lambda[1]);
    let (q, p) = (state.q, state.p);

    let z2 = d / (2.0 * ctl.alpha) * (l1 - lam1s)
        + d / (2.0 * ctl.beta) * (l2 - lam2s)
        + d * (q - ctl.q_star - q_d)
        + ctl.r_a / d * (p - ctl.p_star);

    let (r_comp1, r_comp2) = match ctl.resistance {
        ControllerResistance::Effective => (r / (n * c1), r / (n * c2)),
        ControllerResistance::BareR => (r, r),
    };

    let u1 = r_comp1 * (g - q) / k1 * l1
        - r * d / (ctl.alpha * c1) * (c1 * l1 * l1 / (2.0 * k1) - c2 * lam2s * lam2s / (2.0 * k2))
        - (r * d / (2.0 * ctl.alpha * c1) + n * ctl.alpha * ctl.r_a / d) * ctl.k_g * z2
        - n * ctl.alpha / j * p;

    let u2 = r_comp2 * (g + q) / k2 * l2
        + r * d / (ctl.beta * c2) * (c2 * l2 * l2 / (2.0 * k2) - c2 * lam2s * lam2s / (2.0 * k2))
        - (r * d / (2.0 * ctl.beta * c2) + n * ctl.beta * ctl.r_a / d) * ctl.k_g * z2
        - n * ctl.beta / j * p;

    Vector2::new(u1, u2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn setpoint_state(ctl: &MaglevControllerParams, plant: &MaglevParams) -> PlantState {
        PlantState::new(
            Vector2::new(ctl.lambda1_star(plant), ctl.lambda2_star),
            ctl.q_star,
            0.0,
        )
    }

    #[test]
    fn reference_examples() {
        assert_eq!(reference_qd(0.0), 0.0);
        // t = π/10: sin π = 0, sin 2π = 0, sin 1.5π = −1.
        assert_relative_eq!(
            reference_qd(std::f64::consts::PI / 10.0),
            -6.0e-5,
            max_relative = 1e-12
        );
        // amplitude bound stays inside the air gap
        let g = MaglevParams::paper_bench().g;
        for k in 0..20000 {
            let qd = reference_qd(k as f64 * 5e-3);
            assert!(qd.abs() <= 1.6e-4 && qd.abs() < g);
        }
    }

    #[test]
    fn setpoint_is_an_equilibrium_of_the_closed_loop() {
        // At the setpoint z̃₂ = 0 and the energy bracket vanishes, so
        // u_k = R/(N c_k)·i_k* and the flux derivative is zero.
        let plant = MaglevParams::paper_bench();
        let ctl = MaglevControllerParams::paper_bench();
        let st = setpoint_state(&ctl, &plant);
        let u = maglev_controller(&ctl, &plant, &st, 0.0);
        let expected_u1 =
            plant.r / (plant.n * plant.c1) * (plant.g - ctl.q_star) / plant.k1 * ctl.lambda1_star(&plant);
        assert_relative_eq!(u[0], expected_u1, max_relative = 1e-12);

        let m = super::super::ModelSpec::Maglev(plant);
        let dot = m.ph_dynamics(&st, u, 0.0).unwrap();
        assert!(dot.lambda_dot.norm() < 1e-18, "lambda_dot = {:?}", dot.lambda_dot);
        assert_eq!(dot.q_dot, 0.0);
        assert!(dot.p_dot.abs() < 1e-25);
    }

    #[test]
    fn momentum_perturbation_enters_linearly() {
        let plant = MaglevParams::paper_bench();
        let ctl = MaglevControllerParams::paper_bench();
        let st0 = setpoint_state(&ctl, &plant);
        let mut st = st0;
        let dp = 1.7e-3;
        st.p += dp;
        let du = maglev_controller(&ctl, &plant, &st, 0.0)
            - maglev_controller(&ctl, &plant, &st0, 0.0);
        // Δu_k = −(N α_k / J) p − z̃₂-channel contribution (R_a/D) p.
        let z2_p = ctl.r_a / plant.d * dp;
        let k_1 = plant.r * plant.d / (2.0 * ctl.alpha * plant.c1)
            + plant.n * ctl.alpha * ctl.r_a / plant.d;
        let k_2 = plant.r * plant.d / (2.0 * ctl.beta * plant.c2)
            + plant.n * ctl.beta * ctl.r_a / plant.d;
        assert_relative_eq!(
            du[0],
            -k_1 * ctl.k_g * z2_p - plant.n * ctl.alpha / plant.j * dp,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            du[1],
            -k_2 * ctl.k_g * z2_p - plant.n * ctl.beta / plant.j * dp,
            max_relative = 1e-12
        );
    }

    #[test]
    fn lambda1_star_force_balance() {
        let plant = MaglevParams::paper_bench();
        let ctl = MaglevControllerParams::paper_bench();
        let st = setpoint_state(&ctl, &plant);
        let m = super::super::ModelSpec::Maglev(plant);
        // equal magnetic pull on both sides
        assert!(m.grad_q_electrical(st.lambda, st.q).abs() < 1e-30);
    }
}
