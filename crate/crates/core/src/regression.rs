//! Algebraic flux/current constraint and the filtered linear regression
//! built on it.
//!
//! For the admissible plant class there are constant `Q₁, Q₂, Q₃ ∈ R²ˣ²`,
//! `C ∈ R²`, `d ∈ R` with
//!
//! ```text
//! w(λ, i) := λᵀQ₁λ + λᵀQ₂ i + iᵀQ₃ i + Cᵀi + d = 0
//! ```
//!
//! along every trajectory. Evaluating `w` at the measured current
//! `i = i_m − δ_i`, differentiating, and passing the result through the
//! nine-filter bank below yields the regression
//!
//! ```text
//! λ̇ = −R_eff·i_m + B·u_m + θ_m
//! y  = Φ_λᵀ λ + Φ_θᵀ θ + ε_t
//! ```
//!
//! with known signals `y, Φ_λ, Φ_θ`, unknown constants `θ_m, θ`, and an
//! exponentially decaying `ε_t` from the filter initial conditions.
//!
//! Two slips in the printed source formulas are corrected here, both
//! re-derived from the swapping-lemma chain and confirmed numerically
//! (the regression residual vanishes only with these forms):
//! `Φ_λ = 2ξ₂ + ν·y_a − νξ₄` (not `y_a`), and
//! `θ_ya = −Q₂δ_i`, `θ_yb = (−2Q₃δ_i ; δ_iᵀQ₃δ_i − Cᵀδ_i)` (opposite signs).

use nalgebra::{Matrix2, SVector, Vector2, Vector3};

use crate::models::{MaglevParams, PmsmParams};

/// Number of unknown parameters in the full regression (`3·n_E + 2`).
pub const N_THETA: usize = 8;
/// Stacked regressor length (`4·n_E + 2`).
pub const N_PSI: usize = 10;
/// Reduced stacked length when the `y_b` path is structurally absent.
pub const N_PSI_REDUCED: usize = 7;

/// Constants of the quadratic constraint `w(λ, i) = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintConstants {
    pub q1: Matrix2<f64>,
    pub q2: Matrix2<f64>,
    pub q3: Matrix2<f64>,
    pub c: Vector2<f64>,
    pub d: f64,
}

impl ConstraintConstants {
    /// PMSM: `0 = |λ|² − 2L_s λᵀi + L_s²|i|² − λ_m²`.
    pub fn pmsm(p: &PmsmParams) -> Self {
        Self {
            q1: Matrix2::identity(),
            q2: Matrix2::from_diagonal_element(-2.0 * p.l_s),
            q3: Matrix2::from_diagonal_element(p.l_s * p.l_s),
            c: Vector2::zeros(),
            d: -p.lambda_m * p.lambda_m,
        }
    }

    /// MagLev: `0 = 2gλ₁λ₂ − k₁i₁λ₂ − k₂i₂λ₁`.
    pub fn maglev(p: &MaglevParams) -> Self {
        Self {
            q1: Matrix2::new(0.0, p.g, p.g, 0.0),
            q2: Matrix2::new(0.0, -p.k2, -p.k1, 0.0),
            q3: Matrix2::zeros(),
            c: Vector2::zeros(),
            d: 0.0,
        }
    }

    /// True when the `y_b`/`y_c` path carries nothing (`Q₃ = 0`, `C = 0`):
    /// `ξ₃`, `ξ₈` can be dropped and `Φ_θ`'s third block is structurally
    /// zero.
    pub fn reduced_form_active(&self) -> bool {
        self.q3 == Matrix2::zeros() && self.c == Vector2::zeros()
    }
}

/// `w(λ, i) = λᵀQ₁λ + λᵀQ₂ i + iᵀQ₃ i + Cᵀi + d`.
pub fn eval_w(cc: &ConstraintConstants, lambda: Vector2<f64>, i: Vector2<f64>) -> f64 {
    lambda.dot(&(cc.q1 * lambda))
        + lambda.dot(&(cc.q2 * i))
        + i.dot(&(cc.q3 * i))
        + cc.c.dot(&i)
        + cc.d
}

/// Known functions of the measured signals feeding the filter bank.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KnownSignals {
    /// `y_m = −R_eff·i_m + B·u_m` (the measurable part of `λ̇`).
    pub y_m: Vector2<f64>,
    /// `y_a = Q₂·i_m`.
    pub y_a: Vector2<f64>,
    /// `y_b = (i_m ; 1)`.
    pub y_b: Vector3<f64>,
    /// `y_c = i_mᵀQ₃ i_m + Cᵀi_m`.
    pub y_c: f64,
}

pub fn known_signals(
    cc: &ConstraintConstants,
    i_m: Vector2<f64>,
    u_m: Vector2<f64>,
    r_eff: &Matrix2<f64>,
    b: &Matrix2<f64>,
) -> KnownSignals {
    KnownSignals {
        y_m: -r_eff * i_m + b * u_m,
        y_a: cc.q2 * i_m,
        y_b: Vector3::new(i_m[0], i_m[1], 1.0),
        y_c: i_m.dot(&(cc.q3 * i_m)) + cc.c.dot(&i_m),
    }
}

/// State of the nine first-order filters (all poles at `−ν`).
///
/// In the reduced form `ξ₃` and `ξ₈` stay identically zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterBankState {
    pub xi1: Vector2<f64>,
    pub xi2: Vector2<f64>,
    pub xi3: Vector3<f64>,
    pub xi4: Vector2<f64>,
    pub xi5: f64,
    pub xi6: Vector2<f64>,
    pub xi7: Vector2<f64>,
    pub xi8: Vector3<f64>,
    pub xi9: f64,
    /// Filter constant [1/s], > 0.
    pub nu: f64,
}

/// Time derivative of a [`FilterBankState`] (same layout, `nu` unused).
pub type FilterBankDot = FilterBankState;

impl FilterBankState {
    pub fn zero(nu: f64) -> Self {
        Self {
            xi1: Vector2::zeros(),
            xi2: Vector2::zeros(),
            xi3: Vector3::zeros(),
            xi4: Vector2::zeros(),
            xi5: 0.0,
            xi6: Vector2::zeros(),
            xi7: Vector2::zeros(),
            xi8: Vector3::zeros(),
            xi9: 0.0,
            nu,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.xi1.iter().all(|v| v.is_finite())
            && self.xi2.iter().all(|v| v.is_finite())
            && self.xi3.iter().all(|v| v.is_finite())
            && self.xi4.iter().all(|v| v.is_finite())
            && self.xi5.is_finite()
            && self.xi6.iter().all(|v| v.is_finite())
            && self.xi7.iter().all(|v| v.is_finite())
            && self.xi8.iter().all(|v| v.is_finite())
            && self.xi9.is_finite()
    }
}

/// Right-hand sides of the filter bank.
///
/// ```text
/// ξ̇₁ = −νξ₁ + ν y_m            ξ̇₆ = −νξ₆ + νξ₄ − ξ₂
/// ξ̇₂ = −νξ₂ + 2νQ₁y_m − ν²y_a  ξ̇₇ = −νξ₇ + νξ₁
/// ξ̇₃ = −νξ₃ + ν y_b            ξ̇₈ = −νξ₈ + ν(y_b − ξ₃)
/// ξ̇₄ = −νξ₄ + ξ₂ + 2Q₁y_m      ξ̇₉ = −νξ₉ + νξ₅ − ν²y_c + y_mᵀ(νξ₄ − ξ₂)
/// ξ̇₅ = −νξ₅ + y_mᵀξ₂ + ν²y_c
/// ```
///
/// With `reduced = true` the `ξ₃`/`ξ₈` rows are dropped (their derivatives
/// are zero) and `y_b`, `y_c` are not consumed.
pub fn filter_derivatives(
    fb: &FilterBankState,
    q1: &Matrix2<f64>,
    sig: &KnownSignals,
    reduced: bool,
) -> FilterBankDot {
    let nu = fb.nu;
    let q1ym = q1 * sig.y_m;
    let nu_xi4_m_xi2 = nu * fb.xi4 - fb.xi2;
    let (dxi3, dxi8, yc) = if reduced {
        (Vector3::zeros(), Vector3::zeros(), 0.0)
    } else {
        (
            -nu * fb.xi3 + nu * sig.y_b,
            -nu * fb.xi8 + nu * (sig.y_b - fb.xi3),
            sig.y_c,
        )
    };
    FilterBankState {
        xi1: -nu * fb.xi1 + nu * sig.y_m,
        xi2: -nu * fb.xi2 + 2.0 * nu * q1ym - nu * nu * sig.y_a,
        xi3: dxi3,
        xi4: -nu * fb.xi4 + fb.xi2 + 2.0 * q1ym,
        xi5: -nu * fb.xi5 + sig.y_m.dot(&fb.xi2) + nu * nu * yc,
        xi6: -nu * fb.xi6 + nu_xi4_m_xi2,
        xi7: -nu * fb.xi7 + nu * fb.xi1,
        xi8: dxi8,
        xi9: -nu * fb.xi9 + nu * fb.xi5 - nu * nu * yc + sig.y_m.dot(&nu_xi4_m_xi2),
        nu,
    }
}

/// One regression sample `(y, Φ_λ, Φ_θ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegressionSample {
    pub y: f64,
    pub phi_lambda: Vector2<f64>,
    /// Ordered `(2ξ₆ ; ξ₁−ξ₇ ; ν(y_b−ξ₃−ξ₈) ; 1)`; the third block is
    /// structurally zero in the reduced form.
    pub phi_theta: SVector<f64, N_THETA>,
}

impl RegressionSample {
    /// Full stacked regressor `Ψ = (Φ_λ ; Φ_θ)`.
    pub fn psi(&self) -> SVector<f64, N_PSI> {
        let mut out = SVector::<f64, N_PSI>::zeros();
        out.fixed_rows_mut::<2>(0).copy_from(&self.phi_lambda);
        out.fixed_rows_mut::<N_THETA>(2).copy_from(&self.phi_theta);
        out
    }

    /// Reduced stacking `(Φ_λ ; 2ξ₆ ; ξ₁−ξ₇ ; 1)`, the order the adaptive
    /// observer's diagonal gain refers to.
    pub fn psi_reduced(&self) -> SVector<f64, N_PSI_REDUCED> {
        SVector::<f64, N_PSI_REDUCED>::from([
            self.phi_lambda[0],
            self.phi_lambda[1],
            self.phi_theta[0],
            self.phi_theta[1],
            self.phi_theta[2],
            self.phi_theta[3],
            self.phi_theta[7],
        ])
    }

    /// `Φ_θᵀ θ` for a full 8-vector θ.
    pub fn predict(&self, lambda: &Vector2<f64>, theta: &SVector<f64, N_THETA>) -> f64 {
        self.phi_lambda.dot(lambda) + self.phi_theta.dot(theta)
    }
}

/// Assemble `(y, Φ_λ, Φ_θ)` from the filter state:
///
/// ```text
/// y   = ξ₅ − ν y_c − ξ₉
/// Φ_λ = 2ξ₂ + ν y_a − νξ₄
/// Φ_θ = (2ξ₆ ; ξ₁ − ξ₇ ; ν(y_b − ξ₃ − ξ₈) ; 1)
/// ```
pub fn regression_sample(
    fb: &FilterBankState,
    sig: &KnownSignals,
    reduced: bool,
) -> RegressionSample {
    let nu = fb.nu;
    let (y, third) = if reduced {
        (fb.xi5 - fb.xi9, Vector3::zeros())
    } else {
        (
            fb.xi5 - nu * sig.y_c - fb.xi9,
            nu * (sig.y_b - fb.xi3 - fb.xi8),
        )
    };
    let phi_lambda = 2.0 * fb.xi2 + nu * sig.y_a - nu * fb.xi4;
    let x17 = fb.xi1 - fb.xi7;
    let phi_theta = SVector::<f64, N_THETA>::from([
        2.0 * fb.xi6[0],
        2.0 * fb.xi6[1],
        x17[0],
        x17[1],
        third[0],
        third[1],
        third[2],
        1.0,
    ]);
    RegressionSample { y, phi_lambda, phi_theta }
}

/// The constant parameter vectors the regression is linear in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrueParameters {
    /// `θ_m = R_eff·δ_i − B·δ_u` (the offset in the measurable `λ̇`).
    pub theta_m: Vector2<f64>,
    /// `θ_ya = −Q₂·δ_i`.
    pub theta_ya: Vector2<f64>,
    /// `θ_yb = (−2Q₃·δ_i ; δ_iᵀQ₃δ_i − Cᵀδ_i)`.
    pub theta_yb: Vector3<f64>,
    /// Stacked `θ = (θ_m ; θ_ya ; θ_yb ; (2/ν)·θ_mᵀQ₁θ_m)`.
    pub theta: SVector<f64, N_THETA>,
}

impl TrueParameters {
    /// Reduced parameter stacking `(θ_m ; θ_ya ; scalar)`.
    pub fn theta_reduced(&self) -> SVector<f64, 5> {
        SVector::<f64, 5>::from([
            self.theta[0], self.theta[1], self.theta[2], self.theta[3], self.theta[7],
        ])
    }
}

pub fn true_parameters(
    cc: &ConstraintConstants,
    r_eff: &Matrix2<f64>,
    b: &Matrix2<f64>,
    delta_i: Vector2<f64>,
    delta_u: Vector2<f64>,
    nu: f64,
) -> TrueParameters {
    let theta_m = r_eff * delta_i - b * delta_u;
    let theta_ya = -(cc.q2 * delta_i);
    let q3di = cc.q3 * delta_i;
    let theta_yb = Vector3::new(
        -2.0 * q3di[0],
        -2.0 * q3di[1],
        delta_i.dot(&q3di) - cc.c.dot(&delta_i),
    );
    let scalar = 2.0 / nu * theta_m.dot(&(cc.q1 * theta_m));
    let theta = SVector::<f64, N_THETA>::from([
        theta_m[0],
        theta_m[1],
        theta_ya[0],
        theta_ya[1],
        theta_yb[0],
        theta_yb[1],
        theta_yb[2],
        scalar,
    ]);
    TrueParameters { theta_m, theta_ya, theta_yb, theta }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;
    use approx::assert_relative_eq;

    fn pmsm_cc() -> (PmsmParams, ConstraintConstants) {
        let p = PmsmParams::default_desk();
        let cc = ConstraintConstants::pmsm(&p);
        (p, cc)
    }

    fn maglev_cc() -> (MaglevParams, ConstraintConstants) {
        let p = MaglevParams::paper_bench();
        let cc = ConstraintConstants::maglev(&p);
        (p, cc)
    }

    #[test]
    fn w_examples_pmsm() {
        let (p, cc) = pmsm_cc();
        // magnet-aligned flux, zero current
        assert_eq!(eval_w(&cc, Vector2::new(p.lambda_m, 0.0), Vector2::zeros()), 0.0);
        // constant term
        assert_eq!(
            eval_w(&cc, Vector2::zeros(), Vector2::zeros()),
            -p.lambda_m * p.lambda_m
        );
    }

    #[test]
    fn w_vanishes_on_constitutive_pairs_maglev() {
        let (p, cc) = maglev_cc();
        let model = ModelSpec::Maglev(p);
        for k in 0..1000 {
            let s = k as f64;
            let q = 0.9 * p.g * (0.002 * s).sin();
            let i = Vector2::new((0.1 * s).cos(), (0.07 * s + 0.4).sin());
            let lam = model.flux_from_current(i, q);
            let w = eval_w(&cc, lam, i);
            assert!(
                w.abs() <= 1e-12 * (1.0 + lam.norm_squared()),
                "w = {w:.3e} at k = {k}"
            );
        }
    }

    #[test]
    fn known_signal_examples() {
        let (p, cc) = pmsm_cc();
        let r_eff = Matrix2::from_diagonal_element(p.r_s);
        let b = Matrix2::identity();
        // all-zero inputs
        let s = known_signals(&cc, Vector2::zeros(), Vector2::zeros(), &r_eff, &b);
        assert_eq!(s.y_m, Vector2::zeros());
        assert_eq!(s.y_a, Vector2::zeros());
        assert_eq!(s.y_b, Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(s.y_c, 0.0);
        // unit current
        let s = known_signals(&cc, Vector2::new(1.0, 0.0), Vector2::zeros(), &r_eff, &b);
        assert_relative_eq!(s.y_a[0], -2.0 * p.l_s);
        assert_eq!(s.y_a[1], 0.0);
        assert_relative_eq!(s.y_c, p.l_s * p.l_s);

        let (p, cc) = maglev_cc();
        let model = ModelSpec::Maglev(p);
        let i_m = Vector2::new(0.8, -0.2);
        let s = known_signals(&cc, i_m, Vector2::zeros(), &model.r_eff(), &b);
        assert_relative_eq!(s.y_a[0], -p.k2 * i_m[1]);
        assert_relative_eq!(s.y_a[1], -p.k1 * i_m[0]);
        assert_eq!(s.y_c, 0.0);
    }

    #[test]
    fn filter_zero_fixed_point_and_step_response() {
        let (_, cc) = maglev_cc();
        let fb = FilterBankState::zero(50.0);
        let zero = KnownSignals {
            y_m: Vector2::zeros(),
            y_a: Vector2::zeros(),
            y_b: Vector3::new(0.0, 0.0, 1.0),
            y_c: 0.0,
        };
        // y_b's constant 1 drives xi3/xi8 only
        let dot = filter_derivatives(&fb, &cc.q1, &zero, false);
        assert_eq!(dot.xi1, Vector2::zeros());
        assert_eq!(dot.xi2, Vector2::zeros());
        assert_eq!(dot.xi3, Vector3::new(0.0, 0.0, 50.0));
        assert_eq!(dot.xi5, 0.0);
        assert_eq!(dot.xi9, 0.0);

        // constant y_m step response of ξ₁: ξ₁(t) = c·(1 − e^{−νt})
        let nu = 50.0;
        let c = Vector2::new(0.3, -0.1);
        let sig = KnownSignals { y_m: c, ..zero };
        let mut fb = FilterBankState::zero(nu);
        let h = 1e-5;
        let steps = 20_000; // 0.2 s
        for _ in 0..steps {
            // RK4 on the xi1 row alone is exact enough here
            let k1 = filter_derivatives(&fb, &cc.q1, &sig, true).xi1;
            let mut f2 = fb; f2.xi1 += 0.5 * h * k1;
            let k2 = filter_derivatives(&f2, &cc.q1, &sig, true).xi1;
            let mut f3 = fb; f3.xi1 += 0.5 * h * k2;
            let k3 = filter_derivatives(&f3, &cc.q1, &sig, true).xi1;
            let mut f4 = fb; f4.xi1 += h * k3;
            let k4 = filter_derivatives(&f4, &cc.q1, &sig, true).xi1;
            fb.xi1 += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        let t = steps as f64 * h;
        let expected = c * (1.0 - (-nu * t).exp());
        assert_relative_eq!(fb.xi1[0], expected[0], max_relative = 1e-9);
        assert_relative_eq!(fb.xi1[1], expected[1], max_relative = 1e-9);
    }

    #[test]
    fn filter_steady_state_under_constant_inputs() {
        // Setting the derivatives to zero: ξ₂ = 2Q₁y_m − νy_a and
        // ξ₄ = (ξ₂ + 2Q₁y_m)/ν.
        let (_, cc) = maglev_cc();
        let nu = 50.0;
        let sig = KnownSignals {
            y_m: Vector2::new(0.2, -0.5),
            y_a: Vector2::new(0.01, 0.03),
            y_b: Vector3::new(1.0, -1.0, 1.0),
            y_c: 0.0,
        };
        let xi2 = 2.0 * cc.q1 * sig.y_m - nu * sig.y_a;
        let xi4 = (xi2 + 2.0 * cc.q1 * sig.y_m) / nu;
        let mut fb = FilterBankState::zero(nu);
        fb.xi2 = xi2;
        fb.xi4 = xi4;
        let dot = filter_derivatives(&fb, &cc.q1, &sig, true);
        assert!(dot.xi2.norm() < 1e-12);
        assert!(dot.xi4.norm() < 1e-12);
    }

    #[test]
    fn sample_zero_state() {
        let (_, cc) = maglev_cc();
        let fb = FilterBankState::zero(50.0);
        let zero = KnownSignals {
            y_m: Vector2::zeros(),
            y_a: Vector2::zeros(),
            y_b: Vector3::new(0.0, 0.0, 1.0),
            y_c: 0.0,
        };
        let s = regression_sample(&fb, &zero, false);
        assert_eq!(s.y, 0.0);
        assert_eq!(s.phi_lambda, Vector2::zeros());
        // all zero except the y_b block's constant slot and the trailing 1
        assert_eq!(s.phi_theta[6], 50.0); // ν(y_b3 − 0 − 0)
        assert_eq!(s.phi_theta[7], 1.0);
        assert_eq!(s.psi().len(), N_PSI);
        let _ = cc;
    }

    #[test]
    fn reduced_stacking_layout() {
        let mut fb = FilterBankState::zero(50.0);
        fb.xi6 = Vector2::new(1.0, 2.0);
        fb.xi1 = Vector2::new(3.0, 4.0);
        fb.xi2 = Vector2::new(0.5, 0.0);
        let sig = KnownSignals {
            y_m: Vector2::zeros(),
            y_a: Vector2::new(0.1, 0.2),
            y_b: Vector3::new(9.0, 9.0, 1.0),
            y_c: 7.0,
        };
        let s = regression_sample(&fb, &sig, true);
        let psi = s.psi_reduced();
        assert_eq!(psi[2], 2.0); // 2ξ₆₁
        assert_eq!(psi[4], 3.0); // (ξ₁−ξ₇)₁
        assert_eq!(psi[6], 1.0);
        // reduced form ignores y_b/y_c entirely
        assert_eq!(s.phi_theta[4], 0.0);
        assert_eq!(s.phi_theta[5], 0.0);
        assert_eq!(s.phi_theta[6], 0.0);
    }

    #[test]
    fn true_parameter_examples() {
        let (p, cc) = maglev_cc();
        let model = ModelSpec::Maglev(p);
        // zero bias → zero θ
        let tp = true_parameters(&cc, &model.r_eff(), &model.b(), Vector2::zeros(), Vector2::zeros(), 50.0);
        assert_eq!(tp.theta, SVector::<f64, 8>::zeros());

        // the bench's first bias segment
        let di = Vector2::new(-0.003, 0.0025);
        let tp = true_parameters(&cc, &model.r_eff(), &model.b(), di, Vector2::zeros(), 50.0);
        // θ_ya = −Q₂δ_i = (k₂δ_i2, k₁δ_i1)
        assert_relative_eq!(tp.theta_ya[0], p.k2 * di[1], max_relative = 1e-12);
        assert_relative_eq!(tp.theta_ya[1], p.k1 * di[0], max_relative = 1e-12);
        assert_relative_eq!(tp.theta_ya[0], 5.5e-11, max_relative = 1e-10);
        assert_relative_eq!(tp.theta_ya[1], -6.6e-11, max_relative = 1e-10);
        // θ_m = R_eff·δ_i with δ_u = 0
        assert_relative_eq!(tp.theta_m[0], p.r / (p.n * p.c1) * di[0], max_relative = 1e-12);
        assert_relative_eq!(tp.theta_m[1], p.r / (p.n * p.c2) * di[1], max_relative = 1e-12);
        // MagLev has no y_b block
        assert_eq!(tp.theta_yb, Vector3::zeros());
    }

    #[test]
    fn reduced_form_flags() {
        let (_, cc) = maglev_cc();
        assert!(cc.reduced_form_active());
        let (_, cc) = pmsm_cc();
        assert!(!cc.reduced_form_active());
        // Q3 = 0 but C ≠ 0 still feeds y_c
        let cc = ConstraintConstants {
            q3: Matrix2::zeros(),
            c: Vector2::new(1.0, 0.0),
            ..cc
        };
        assert!(!cc.reduced_form_active());
    }
}
