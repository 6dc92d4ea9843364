//! The coupled plant + filter + observer ODE and its fixed-step integrator.

use nalgebra::{Matrix2, SVector, Vector2, Vector3};

use crate::models::{
    maglev_controller, reference_qd, MeasurementBias, ModelSpec, PlantState,
};
use crate::observers::{
    adaptive_observer_derivative_full, adaptive_observer_derivative_reduced, AdaptiveGains,
};
use crate::regression::{
    filter_derivatives, known_signals, regression_sample, ConstraintConstants, FilterBankState,
    KnownSignals, RegressionSample, TrueParameters, N_PSI, N_PSI_REDUCED, N_THETA,
};

use super::{DriveConfig, Scenario, SimError};

/// Offsets of the state blocks inside the flat ODE vector.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub n: usize,
    pub filters: usize,
    pub n_filters: usize,
    pub robust: Option<usize>,
    pub adaptive: Option<usize>,
    pub n_theta_hat: usize,
    pub pebo: Option<usize>,
    pub xcheck_robust: Option<usize>,
    pub xcheck_adaptive: Option<usize>,
    pub reduced: bool,
}

impl Layout {
    fn build(scn: &Scenario, reduced: bool) -> Self {
        let n_filters = if reduced { 12 } else { 18 };
        let mut n = 4 + n_filters;
        let mut at = |len: usize, on: bool| {
            if on {
                let ofs = n;
                n += len;
                Some(ofs)
            } else {
                None
            }
        };
        let n_theta_hat = if reduced { 5 } else { N_THETA };
        let robust = at(2, scn.observers.robust.is_some());
        let adaptive = at(2 + n_theta_hat, scn.observers.adaptive.is_some());
        let pebo = at(2, scn.observers.pebo);
        let xcheck_robust = at(2, scn.cross_check && scn.observers.robust.is_some());
        let n_psi = if reduced { N_PSI_REDUCED } else { N_PSI };
        let xcheck_adaptive = at(n_psi, scn.cross_check && scn.observers.adaptive.is_some());
        Layout {
            n,
            filters: 4,
            n_filters,
            robust,
            adaptive,
            n_theta_hat,
            pebo,
            xcheck_robust,
            xcheck_adaptive,
            reduced,
        }
    }

    /// Human-readable name of the block containing state index `idx`.
    pub fn component_name(&self, idx: usize) -> &'static str {
        let in_block = |ofs: Option<usize>, len: usize| {
            ofs.is_some_and(|o| idx >= o && idx < o + len)
        };
        if idx < 4 {
            return ["plant.lambda", "plant.lambda", "plant.q", "plant.p"][idx];
        }
        if idx < 4 + self.n_filters {
            return "filters.xi";
        }
        if in_block(self.robust, 2) {
            return "observer.robust.lambda_hat";
        }
        if let Some(o) = self.adaptive {
            if idx >= o && idx < o + 2 {
                return "observer.adaptive.lambda_hat";
            }
            if idx >= o + 2 && idx < o + 2 + self.n_theta_hat {
                return "observer.adaptive.theta_hat";
            }
        }
        if in_block(self.pebo, 2) {
            return "observer.pebo.xi";
        }
        "cross_check"
    }
}

/// Signals shared by every block's derivative at one evaluation point.
pub struct StageSignals {
    pub i: Vector2<f64>,
    pub u: Vector2<f64>,
    pub i_m: Vector2<f64>,
    pub u_m: Vector2<f64>,
    pub sig: KnownSignals,
    pub sample: RegressionSample,
    pub filters: FilterBankState,
}

/// The coupled deterministic system built from a scenario.
pub struct CoupledSystem {
    pub model: ModelSpec,
    pub cc: ConstraintConstants,
    pub layout: Layout,
    pub bias: MeasurementBias,
    pub nu: f64,
    drive: DriveConfig,
    gamma_r: Option<Matrix2<f64>>,
    adaptive: Option<AdaptiveGains>,
    lambda_hat0: Vector2<f64>,
    /// `(t_from, parameters)` per bias segment, for residual/error columns.
    pub theta_segments: Vec<(f64, TrueParameters)>,
    r_eff: Matrix2<f64>,
    b: Matrix2<f64>,
    fast: Option<FastMaglev>,
}

/// Precomputed coefficients for the fused scalar derivative of the
/// most-simulated configuration (MagLev, reduced filters, adaptive observer
/// only). State dimension 4 + 12 + 7 = 23.
struct FastMaglev {
    // plant
    k1: f64,
    k2: f64,
    g: f64,
    d_over_j: f64,
    half_d: f64,
    reff1: f64,
    reff2: f64,
    // controller u_k = a_k·(g∓q)·λ_k − b_k·(energy bracket) − c_k·z2 − e_k·p
    ca1: f64,
    ca2: f64,
    cb1: f64,
    cb2: f64,
    cc1: f64,
    cc2: f64,
    ce1: f64,
    ce2: f64,
    // z2 coefficients
    z_l1: f64,
    z_l2: f64,
    z_q: f64,
    z_p: f64,
    lam1s: f64,
    lam2s: f64,
    q_star: f64,
    p_star: f64,
    half_c1_over_k1: f64,
    half_c2_over_k2: f64,
    bracket_ref: f64,
    nu: f64,
    gains: [f64; 7],
}

impl FastMaglev {
    fn build(scn: &Scenario) -> Option<Self> {
        let (plant, ctl) = match (&scn.model, &scn.controller) {
            (super::ModelConfig::Maglev(p), Some(c)) => (p, c),
            _ => return None,
        };
        if scn.observers.robust.is_some() || scn.observers.pebo || scn.cross_check {
            return None;
        }
        let gains = match &scn.observers.adaptive {
            Some(g) if g.len() == 7 => {
                let mut a = [0.0; 7];
                for (k, v) in g.iter().enumerate() {
                    a[k] = v * scn.gain_scale;
                }
                a
            }
            _ => return None,
        };
        if !matches!(ctl.resistance, crate::models::ControllerResistance::Effective) {
            return None;
        }
        let (r, n, d, j) = (plant.r, plant.n, plant.d, plant.j);
        let (c1, c2) = (plant.c1, plant.c2);
        Some(FastMaglev {
            k1: plant.k1,
            k2: plant.k2,
            g: plant.g,
            d_over_j: d / j,
            half_d: 0.5 * d,
            reff1: r / (n * c1),
            reff2: r / (n * c2),
            ca1: r / (n * c1) / plant.k1,
            ca2: r / (n * c2) / plant.k2,
            cb1: r * d / (ctl.alpha * c1),
            cb2: r * d / (ctl.beta * c2),
            cc1: (r * d / (2.0 * ctl.alpha * c1) + n * ctl.alpha * ctl.r_a / d) * ctl.k_g,
            cc2: (r * d / (2.0 * ctl.beta * c2) + n * ctl.beta * ctl.r_a / d) * ctl.k_g,
            ce1: n * ctl.alpha / j,
            ce2: n * ctl.beta / j,
            z_l1: d / (2.0 * ctl.alpha),
            z_l2: d / (2.0 * ctl.beta),
            z_q: d,
            z_p: ctl.r_a / d,
            lam1s: ctl.lambda1_star(plant),
            lam2s: ctl.lambda2_star,
            q_star: ctl.q_star,
            p_star: ctl.p_star,
            half_c1_over_k1: c1 / (2.0 * plant.k1),
            half_c2_over_k2: c2 / (2.0 * plant.k2),
            bracket_ref: c2 * ctl.lambda2_star * ctl.lambda2_star / (2.0 * plant.k2),
            nu: scn.nu,
            gains,
        })
    }
}

impl CoupledSystem {
    pub fn new(scn: &Scenario) -> Result<Self, SimError> {
        scn.validate()?;
        let model = scn.model_spec();
        let cc = model.constraint();
        let reduced = cc.reduced_form_active();
        let layout = Layout::build(scn, reduced);
        let gamma_r = scn
            .observers
            .robust
            .map(|g| Matrix2::from_diagonal_element(g * scn.gain_scale));
        let adaptive = match &scn.observers.adaptive {
            None => None,
            Some(gains) => {
                let g = AdaptiveGains::try_from_diag(gains, reduced)?;
                Some(g.scaled(scn.gain_scale))
            }
        };
        let theta_segments = scn
            .bias
            .segments()
            .iter()
            .map(|seg| {
                (
                    seg.t_from,
                    crate::regression::true_parameters(
                        &cc,
                        &model.r_eff(),
                        &model.b(),
                        Vector2::from(seg.delta_i),
                        Vector2::from(seg.delta_u),
                        scn.nu,
                    ),
                )
            })
            .collect();
        Ok(Self {
            r_eff: model.r_eff(),
            b: model.b(),
            model,
            cc,
            layout,
            bias: scn.bias.clone(),
            nu: scn.nu,
            drive: scn.drive_config(),
            gamma_r,
            adaptive,
            lambda_hat0: Vector2::from(scn.observers.lambda_hat0),
            theta_segments,
            fast: FastMaglev::build(scn),
        })
    }

    pub fn reduced(&self) -> bool {
        self.layout.reduced
    }

    /// Robust observer gain as a matrix (gain scale applied), when enabled.
    pub fn gamma_r_matrix(&self) -> Option<Matrix2<f64>> {
        self.gamma_r
    }

    /// True parameter vector active at time `t`.
    pub fn theta_true(&self, t: f64) -> &TrueParameters {
        self.theta_segments
            .iter()
            .rev()
            .find(|(t0, _)| t >= *t0)
            .map(|(_, tp)| tp)
            .unwrap_or(&self.theta_segments[0].1)
    }

    pub fn initial_state(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.layout.n];
        let st0 = self.initial_plant_state();
        x[0] = st0.lambda[0];
        x[1] = st0.lambda[1];
        x[2] = st0.q;
        x[3] = st0.p;
        if let Some(o) = self.layout.robust {
            x[o] = self.lambda_hat0[0];
            x[o + 1] = self.lambda_hat0[1];
        }
        if let Some(o) = self.layout.adaptive {
            x[o] = self.lambda_hat0[0];
            x[o + 1] = self.lambda_hat0[1];
        }
        // PEBO integrator starts at zero; its constant is calibrated below.
        if let Some(o) = self.layout.xcheck_robust {
            // χ = λ − λ̂ at t = 0
            x[o] = st0.lambda[0] - self.lambda_hat0[0];
            x[o + 1] = st0.lambda[1] - self.lambda_hat0[1];
        }
        if let Some(o) = self.layout.xcheck_adaptive {
            // χ = (λ̂ − λ ; θ̂ − θ) at t = 0
            x[o] = self.lambda_hat0[0] - st0.lambda[0];
            x[o + 1] = self.lambda_hat0[1] - st0.lambda[1];
            let tp = self.theta_true(0.0);
            if self.layout.reduced {
                let th = tp.theta_reduced();
                for k in 0..5 {
                    x[o + 2 + k] = -th[k];
                }
            } else {
                for k in 0..N_THETA {
                    x[o + 2 + k] = -tp.theta[k];
                }
            }
        }
        x
    }

    pub fn initial_plant_state(&self) -> PlantState {
        match (&self.model, &self.drive) {
            (ModelSpec::Maglev(p), DriveConfig::MaglevController(ctl)) => {
                let lam = Vector2::new(ctl.lambda1_star(p), ctl.lambda2_star);
                PlantState::new(lam, ctl.q_star, 0.0)
            }
            (ModelSpec::Pmsm(p), _) => PlantState::new(p.magnet_flux(0.0), 0.0, 0.0),
            (ModelSpec::Maglev(_), _) => PlantState::new(Vector2::zeros(), 0.0, 0.0),
        }
    }

    /// PEBO integration constant calibrated at the initial state.
    pub fn pebo_theta0(&self) -> Vector2<f64> {
        self.initial_plant_state().lambda
    }

    fn supply_voltage(&self, t: f64, state: &PlantState, qd: Option<f64>) -> Vector2<f64> {
        match &self.drive {
            DriveConfig::MaglevController(ctl) => {
                let plant = match &self.model {
                    ModelSpec::Maglev(p) => p,
                    _ => unreachable!("controller drive requires the MagLev model"),
                };
                maglev_controller(ctl, plant, state, qd.unwrap_or_else(|| reference_qd(t)))
            }
            DriveConfig::TwoPhaseSine { amplitude, omega } => {
                let a = omega * t;
                Vector2::new(amplitude * a.cos(), amplitude * a.sin())
            }
        }
    }

    fn unpack_filters(&self, x: &[f64]) -> FilterBankState {
        let f = &x[self.layout.filters..self.layout.filters + self.layout.n_filters];
        if self.layout.reduced {
            FilterBankState {
                xi1: Vector2::new(f[0], f[1]),
                xi2: Vector2::new(f[2], f[3]),
                xi3: Vector3::zeros(),
                xi4: Vector2::new(f[4], f[5]),
                xi5: f[6],
                xi6: Vector2::new(f[7], f[8]),
                xi7: Vector2::new(f[9], f[10]),
                xi8: Vector3::zeros(),
                xi9: f[11],
                nu: self.nu,
            }
        } else {
            FilterBankState {
                xi1: Vector2::new(f[0], f[1]),
                xi2: Vector2::new(f[2], f[3]),
                xi3: Vector3::new(f[4], f[5], f[6]),
                xi4: Vector2::new(f[7], f[8]),
                xi5: f[9],
                xi6: Vector2::new(f[10], f[11]),
                xi7: Vector2::new(f[12], f[13]),
                xi8: Vector3::new(f[14], f[15], f[16]),
                xi9: f[17],
                nu: self.nu,
            }
        }
    }

    fn pack_filter_dot(&self, dot: &FilterBankState, dx: &mut [f64]) {
        let f = &mut dx[self.layout.filters..self.layout.filters + self.layout.n_filters];
        if self.layout.reduced {
            f[0] = dot.xi1[0];
            f[1] = dot.xi1[1];
            f[2] = dot.xi2[0];
            f[3] = dot.xi2[1];
            f[4] = dot.xi4[0];
            f[5] = dot.xi4[1];
            f[6] = dot.xi5;
            f[7] = dot.xi6[0];
            f[8] = dot.xi6[1];
            f[9] = dot.xi7[0];
            f[10] = dot.xi7[1];
            f[11] = dot.xi9;
        } else {
            f[0] = dot.xi1[0];
            f[1] = dot.xi1[1];
            f[2] = dot.xi2[0];
            f[3] = dot.xi2[1];
            f[4] = dot.xi3[0];
            f[5] = dot.xi3[1];
            f[6] = dot.xi3[2];
            f[7] = dot.xi4[0];
            f[8] = dot.xi4[1];
            f[9] = dot.xi5;
            f[10] = dot.xi6[0];
            f[11] = dot.xi6[1];
            f[12] = dot.xi7[0];
            f[13] = dot.xi7[1];
            f[14] = dot.xi8[0];
            f[15] = dot.xi8[1];
            f[16] = dot.xi8[2];
            f[17] = dot.xi9;
        }
    }

    /// Measured signals, known signals and the regression sample at `(t, x)`.
    pub fn stage_signals(&self, t: f64, x: &[f64]) -> StageSignals {
        self.stage_signals_qd(t, x, None)
    }

    fn stage_signals_qd(&self, t: f64, x: &[f64], qd: Option<f64>) -> StageSignals {
        let state = PlantState::new(Vector2::new(x[0], x[1]), x[2], x[3]);
        let i = self.current_unchecked(&state);
        let u = self.supply_voltage(t, &state, qd);
        let (di, du) = self.bias.at(t);
        let i_m = i + di;
        let u_m = u + du;
        let sig = known_signals(&self.cc, i_m, u_m, &self.r_eff, &self.b);
        let filters = self.unpack_filters(x);
        let sample = regression_sample(&filters, &sig, self.layout.reduced);
        StageSignals { i, u, i_m, u_m, sig, sample, filters }
    }

    /// Fused scalar right-hand side for the reduced MagLev + adaptive
    /// configuration. Must stay algebraically identical to the general path
    /// (pinned by a test).
    ///
    /// State: `[λ(2), q, p, ξ1(2), ξ2(2), ξ4(2), ξ5, ξ6(2), ξ7(2), ξ9,
    ///          λ̂(2), θ̂(5)]`.
    fn derivative_fast(
        fp: &FastMaglev,
        x: &[f64],
        dx: &mut [f64],
        qd: f64,
        di: Vector2<f64>,
        du: Vector2<f64>,
    ) {
        let x: &[f64; 23] = x.try_into().expect("fast layout");
        let dx: &mut [f64; 23] = dx.try_into().expect("fast layout");
        let (l1, l2, q, p) = (x[0], x[1], x[2], x[3]);
        let nu = fp.nu;

        let i1 = (fp.g - q) * l1 / fp.k1;
        let i2 = (fp.g + q) * l2 / fp.k2;

        let z2 = fp.z_l1 * (l1 - fp.lam1s)
            + fp.z_l2 * (l2 - fp.lam2s)
            + fp.z_q * (q - fp.q_star - qd)
            + fp.z_p * (p - fp.p_star);
        let u1 = fp.ca1 * (fp.g - q) * l1
            - fp.cb1 * (fp.half_c1_over_k1 * l1 * l1 - fp.bracket_ref)
            - fp.cc1 * z2
            - fp.ce1 * p;
        let u2 = fp.ca2 * (fp.g + q) * l2
            + fp.cb2 * (fp.half_c2_over_k2 * l2 * l2 - fp.bracket_ref)
            - fp.cc2 * z2
            - fp.ce2 * p;

        dx[0] = -fp.reff1 * i1 + u1;
        dx[1] = -fp.reff2 * i2 + u2;
        dx[2] = fp.d_over_j * p;
        dx[3] = fp.half_d * (l1 * l1 / fp.k1 - l2 * l2 / fp.k2);

        let im1 = i1 + di[0];
        let im2 = i2 + di[1];
        let ym1 = -fp.reff1 * im1 + u1 + du[0];
        let ym2 = -fp.reff2 * im2 + u2 + du[1];
        // Q1 = [[0, g], [g, 0]], Q2 = [[0, -k2], [-k1, 0]]
        let q1ym1 = fp.g * ym2;
        let q1ym2 = fp.g * ym1;
        let ya1 = -fp.k2 * im2;
        let ya2 = -fp.k1 * im1;

        let (xi1_1, xi1_2) = (x[4], x[5]);
        let (xi2_1, xi2_2) = (x[6], x[7]);
        let (xi4_1, xi4_2) = (x[8], x[9]);
        let xi5 = x[10];
        let (xi6_1, xi6_2) = (x[11], x[12]);
        let (xi7_1, xi7_2) = (x[13], x[14]);
        let xi9 = x[15];

        let nx4m2_1 = nu * xi4_1 - xi2_1;
        let nx4m2_2 = nu * xi4_2 - xi2_2;

        dx[4] = -nu * xi1_1 + nu * ym1;
        dx[5] = -nu * xi1_2 + nu * ym2;
        dx[6] = -nu * xi2_1 + 2.0 * nu * q1ym1 - nu * nu * ya1;
        dx[7] = -nu * xi2_2 + 2.0 * nu * q1ym2 - nu * nu * ya2;
        dx[8] = -nu * xi4_1 + xi2_1 + 2.0 * q1ym1;
        dx[9] = -nu * xi4_2 + xi2_2 + 2.0 * q1ym2;
        dx[10] = -nu * xi5 + ym1 * xi2_1 + ym2 * xi2_2;
        dx[11] = -nu * xi6_1 + nx4m2_1;
        dx[12] = -nu * xi6_2 + nx4m2_2;
        dx[13] = -nu * xi7_1 + nu * xi1_1;
        dx[14] = -nu * xi7_2 + nu * xi1_2;
        dx[15] = -nu * xi9 + nu * xi5 + ym1 * nx4m2_1 + ym2 * nx4m2_2;

        // regression sample
        let y = xi5 - xi9;
        let phil1 = 2.0 * xi2_1 + nu * ya1 - nu * xi4_1;
        let phil2 = 2.0 * xi2_2 + nu * ya2 - nu * xi4_2;
        let p3 = 2.0 * xi6_1;
        let p4 = 2.0 * xi6_2;
        let p5 = xi1_1 - xi7_1;
        let p6 = xi1_2 - xi7_2;

        // adaptive observer, diagonal gains over (Φ_λ ; 2ξ₆ ; ξ₁−ξ₇ ; 1)
        let (lh1, lh2) = (x[16], x[17]);
        let th = [x[18], x[19], x[20], x[21], x[22]];
        let e = y
            - phil1 * lh1
            - phil2 * lh2
            - p3 * th[0]
            - p4 * th[1]
            - p5 * th[2]
            - p6 * th[3]
            - th[4];
        let g = &fp.gains;
        dx[16] = ym1 + th[0] + g[0] * phil1 * e;
        dx[17] = ym2 + th[1] + g[1] * phil2 * e;
        dx[18] = g[2] * p3 * e;
        dx[19] = g[3] * p4 * e;
        dx[20] = g[4] * p5 * e;
        dx[21] = g[5] * p6 * e;
        dx[22] = g[6] * e;
    }

    /// Constitutive current without the domain check (non-finite values are
    /// caught after the step).
    fn current_unchecked(&self, state: &PlantState) -> Vector2<f64> {
        match &self.model {
            ModelSpec::Pmsm(p) => (state.lambda - p.magnet_flux(state.q)) / p.l_s,
            ModelSpec::Maglev(p) => Vector2::new(
                (p.g - state.q) * state.lambda[0] / p.k1,
                (p.g + state.q) * state.lambda[1] / p.k2,
            ),
        }
    }

    /// Right-hand side of the coupled ODE.
    pub fn derivative(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        self.derivative_qd(t, x, dx, None);
    }

    fn derivative_qd(&self, t: f64, x: &[f64], dx: &mut [f64], qd: Option<f64>) {
        if let Some(fp) = &self.fast {
            let qd = qd.unwrap_or_else(|| reference_qd(t));
            let (di, du) = self.bias.at(t);
            return Self::derivative_fast(fp, x, dx, qd, di, du);
        }
        let s = self.stage_signals_qd(t, x, qd);
        let state = PlantState::new(Vector2::new(x[0], x[1]), x[2], x[3]);

        // plant
        let lam_dot = -self.r_eff * s.i + self.b * s.u;
        let k_j = match &self.model {
            ModelSpec::Pmsm(_) => 1.0,
            ModelSpec::Maglev(p) => p.d,
        };
        dx[0] = lam_dot[0];
        dx[1] = lam_dot[1];
        dx[2] = k_j * state.p / self.model.inertia();
        dx[3] = -k_j * self.model.grad_q_electrical(state.lambda, state.q);

        // filter bank
        let fdot = filter_derivatives(&s.filters, &self.cc.q1, &s.sig, self.layout.reduced);
        self.pack_filter_dot(&fdot, dx);

        // robust observer
        if let Some(o) = self.layout.robust {
            let gamma = self.gamma_r.as_ref().unwrap();
            let lam_hat = Vector2::new(x[o], x[o + 1]);
            let d = crate::observers::robust_observer_derivative(
                &lam_hat, s.i_m, s.u_m, &s.sample, &self.r_eff, &self.b, gamma,
            );
            dx[o] = d[0];
            dx[o + 1] = d[1];
        }

        // adaptive observer
        if let Some(o) = self.layout.adaptive {
            let lam_hat = Vector2::new(x[o], x[o + 1]);
            match self.adaptive.as_ref().unwrap() {
                AdaptiveGains::Reduced(g) => {
                    let th = SVector::<f64, 5>::from_row_slice(&x[o + 2..o + 7]);
                    let (ld, td) = adaptive_observer_derivative_reduced(
                        &lam_hat, &th, s.i_m, s.u_m, &s.sample, &self.r_eff, &self.b, g,
                    );
                    dx[o] = ld[0];
                    dx[o + 1] = ld[1];
                    dx[o + 2..o + 7].copy_from_slice(td.as_slice());
                }
                AdaptiveGains::Full(g) => {
                    let th = SVector::<f64, N_THETA>::from_row_slice(&x[o + 2..o + 2 + N_THETA]);
                    let (ld, td) = adaptive_observer_derivative_full(
                        &lam_hat, &th, s.i_m, s.u_m, &s.sample, &self.r_eff, &self.b, g,
                    );
                    dx[o] = ld[0];
                    dx[o + 1] = ld[1];
                    dx[o + 2..o + 2 + N_THETA].copy_from_slice(td.as_slice());
                }
            }
        }

        // open-loop integration baseline
        if let Some(o) = self.layout.pebo {
            dx[o] = s.sig.y_m[0];
            dx[o + 1] = s.sig.y_m[1];
        }

        // error-equation cross-checks, forced by the actual regression
        // residual carried by the main path
        if self.layout.xcheck_robust.is_some() || self.layout.xcheck_adaptive.is_some() {
            let tp = self.theta_true(t);
            let r_true = s.sample.y
                - s.sample.phi_lambda.dot(&state.lambda)
                - s.sample.phi_theta.dot(&tp.theta);

            if let Some(o) = self.layout.xcheck_robust {
                // χ̇ = −ΓΦ_λΦ_λᵀχ + θ_m − ΓΦ_λ(Φ_θᵀθ + r)
                let gamma = self.gamma_r.as_ref().unwrap();
                let chi = Vector2::new(x[o], x[o + 1]);
                let gphi = gamma * s.sample.phi_lambda;
                let d = -gphi * s.sample.phi_lambda.dot(&chi) + tp.theta_m
                    - gphi * (s.sample.phi_theta.dot(&tp.theta) + r_true);
                dx[o] = d[0];
                dx[o + 1] = d[1];
            }
            if let Some(o) = self.layout.xcheck_adaptive {
                // χ̇ = −Γ_a Ψ Ψᵀχ + G_a χ + Γ_a Ψ r
                match self.adaptive.as_ref().unwrap() {
                    AdaptiveGains::Reduced(g) => {
                        let chi = SVector::<f64, N_PSI_REDUCED>::from_row_slice(
                            &x[o..o + N_PSI_REDUCED],
                        );
                        let psi = s.sample.psi_reduced();
                        let e = -psi.dot(&chi) + r_true;
                        for k in 0..N_PSI_REDUCED {
                            dx[o + k] = g[k] * psi[k] * e;
                        }
                        // G_a χ: the λ̃ rows pick up θ̃_m
                        dx[o] += chi[2];
                        dx[o + 1] += chi[3];
                    }
                    AdaptiveGains::Full(g) => {
                        let chi = SVector::<f64, N_PSI>::from_row_slice(&x[o..o + N_PSI]);
                        let psi = s.sample.psi();
                        let e = -psi.dot(&chi) + r_true;
                        for k in 0..N_PSI {
                            dx[o + k] = g[k] * psi[k] * e;
                        }
                        dx[o] += chi[2];
                        dx[o + 1] += chi[3];
                    }
                }
            }
        }
    }
}

/// Incremental evaluation of the position reference's three sinusoids on the
/// half-step grid, by complex rotation with periodic resynchronization.
///
/// Saves repeated `sin` calls in the hot loop; the recurrence is resynced to
/// the exact values every 2²⁰ half-steps, keeping the drift many orders
/// below the integrator's own truncation error.
pub struct QdOscillator {
    h_half: f64,
    t0: f64,
    k_half: u64,
    rot: [(f64, f64); 3],
    s: [f64; 3],
    c: [f64; 3],
}

const QD_FREQS: [f64; 3] = [10.0, 20.0, 15.0];
const QD_AMPS: [f64; 3] = [6.0e-5, 4.0e-5, 6.0e-5];

impl QdOscillator {
    pub fn new(h: f64, t: f64) -> Self {
        let h_half = 0.5 * h;
        let mut osc = Self {
            h_half,
            t0: t,
            k_half: 0,
            rot: QD_FREQS.map(|w| ((w * h_half).cos(), (w * h_half).sin())),
            s: [0.0; 3],
            c: [0.0; 3],
        };
        osc.sync();
        osc
    }

    fn sync(&mut self) {
        let t = self.t0 + self.k_half as f64 * self.h_half;
        for (k, w) in QD_FREQS.iter().enumerate() {
            let (s, c) = (w * t).sin_cos();
            self.s[k] = s;
            self.c[k] = c;
        }
    }

    fn advance_half(&mut self) {
        for k in 0..3 {
            let (cr, sr) = self.rot[k];
            let (s, c) = (self.s[k], self.c[k]);
            self.s[k] = s * cr + c * sr;
            self.c[k] = c * cr - s * sr;
        }
        self.k_half += 1;
        if self.k_half % (1 << 20) == 0 {
            self.sync();
        }
    }

    pub fn value(&self) -> f64 {
        QD_AMPS[0] * self.s[0] + QD_AMPS[1] * self.s[1] + QD_AMPS[2] * self.s[2]
    }
}

impl CoupledSystem {
    /// One RK4 step driven by the oscillator-cached reference (the hot path
    /// used by `run`). Advances the oscillator by two half-steps.
    pub fn step_with_oscillator(
        &self,
        t: f64,
        h: f64,
        x: &mut [f64],
        scr: &mut Rk4Scratch,
        osc: &mut Option<QdOscillator>,
    ) {
        let n = x.len();
        let qd0 = osc.as_ref().map(|o| o.value());
        self.derivative_qd(t, x, &mut scr.k1, qd0);
        if let Some(o) = osc.as_mut() {
            o.advance_half();
        }
        let qd_mid = osc.as_ref().map(|o| o.value());
        for j in 0..n {
            scr.tmp[j] = x[j] + 0.5 * h * scr.k1[j];
        }
        self.derivative_qd(t + 0.5 * h, &scr.tmp, &mut scr.k2, qd_mid);
        for j in 0..n {
            scr.tmp[j] = x[j] + 0.5 * h * scr.k2[j];
        }
        self.derivative_qd(t + 0.5 * h, &scr.tmp, &mut scr.k3, qd_mid);
        if let Some(o) = osc.as_mut() {
            o.advance_half();
        }
        let qd_end = osc.as_ref().map(|o| o.value());
        for j in 0..n {
            scr.tmp[j] = x[j] + h * scr.k3[j];
        }
        self.derivative_qd(t + h, &scr.tmp, &mut scr.k4, qd_end);
        for j in 0..n {
            x[j] += h / 6.0 * (scr.k1[j] + 2.0 * scr.k2[j] + 2.0 * scr.k3[j] + scr.k4[j]);
        }
    }
}

/// Scratch buffers for the classical fourth-order step.
pub struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    pub fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

/// One classical RK4 step of size `h` for an arbitrary right-hand side.
pub fn rk4_step<F: Fn(f64, &[f64], &mut [f64])>(
    f: F,
    t: f64,
    h: f64,
    x: &mut [f64],
    scr: &mut Rk4Scratch,
) {
    let n = x.len();
    f(t, x, &mut scr.k1);
    for j in 0..n {
        scr.tmp[j] = x[j] + 0.5 * h * scr.k1[j];
    }
    f(t + 0.5 * h, &scr.tmp, &mut scr.k2);
    for j in 0..n {
        scr.tmp[j] = x[j] + 0.5 * h * scr.k2[j];
    }
    f(t + 0.5 * h, &scr.tmp, &mut scr.k3);
    for j in 0..n {
        scr.tmp[j] = x[j] + h * scr.k3[j];
    }
    f(t + h, &scr.tmp, &mut scr.k4);
    for j in 0..n {
        x[j] += h / 6.0 * (scr.k1[j] + 2.0 * scr.k2[j] + 2.0 * scr.k3[j] + scr.k4[j]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fast_path_matches_general_path() {
        let mut scn = super::super::Scenario::maglev_paper();
        scn.observers.robust = None;
        let sys_fast = CoupledSystem::new(&scn).unwrap();
        assert!(sys_fast.fast.is_some(), "fast path not engaged");
        // robust observer present disables the fused path; reuse it as the
        // reference implementation by stripping its extra block
        let mut scn_ref = scn.clone();
        scn_ref.observers.robust = Some(1.0); // arbitrary: forces general path
        let sys_ref = CoupledSystem::new(&scn_ref).unwrap();
        assert!(sys_ref.fast.is_none());

        let mut rng = 0xfeed_u64;
        let mut draw = || crate::util::unit_interval(&mut rng);
        for trial in 0..200 {
            let mut x = vec![0.0; 23];
            x[0] = 3.0e-5 * draw();
            x[1] = 3.0e-5 * draw();
            x[2] = 2.0e-4 * draw();
            x[3] = 1.0e-2 * draw();
            for v in x.iter_mut().skip(4).take(12) {
                *v = 1.0e-6 * draw();
            }
            x[16] = 3.0e-5 * draw();
            x[17] = 3.0e-5 * draw();
            for v in x.iter_mut().skip(18) {
                *v = 1.0e-7 * draw();
            }
            // reference state embeds a robust block between filters and the
            // adaptive block
            let mut x_ref = x.clone();
            x_ref.splice(16..16, [0.0, 0.0]);
            let t = 17.3 * draw().abs();
            let mut dx = vec![0.0; 23];
            let mut dx_ref = vec![0.0; 25];
            sys_fast.derivative(t, &x, &mut dx);
            sys_ref.derivative(t, &x_ref, &mut dx_ref);
            let mut dx_ref_stripped = dx_ref.clone();
            dx_ref_stripped.drain(16..18);
            for (k, (a, b)) in dx.iter().zip(&dx_ref_stripped).enumerate() {
                let tol = 1e-12 * (1.0 + a.abs().max(b.abs()));
                assert!(
                    (a - b).abs() <= tol,
                    "trial {trial} component {k}: fast {a:e} vs general {b:e}"
                );
            }
        }
    }

    #[test]
    fn oscillator_tracks_reference() {
        let h = 3.7e-6;
        let mut osc = QdOscillator::new(h, 0.0);
        for k in 0..200_000u64 {
            let t = k as f64 * 0.5 * h;
            let exact = reference_qd(t);
            assert!(
                (osc.value() - exact).abs() <= 1e-12,
                "k={k}: {} vs {}",
                osc.value(),
                exact
            );
            osc.advance_half();
        }
    }

    #[test]
    fn rk4_scalar_decay_accuracy() {
        // One h = 0.1 step of ẋ = −x lands on e^{−0.1} within 1e−7.
        let mut x = vec![1.0];
        let mut scr = Rk4Scratch::new(1);
        rk4_step(|_, x, dx| dx[0] = -x[0], 0.0, 0.1, &mut x, &mut scr);
        assert_relative_eq!(x[0], (-0.1_f64).exp(), epsilon = 1e-7);
    }

    #[test]
    fn rk4_fourth_order_on_linear_system() {
        // Global error on ẋ = −x over [0, 1] shrinks ~16× when h halves.
        let err = |h: f64| {
            let mut x = vec![1.0];
            let mut scr = Rk4Scratch::new(1);
            let n = (1.0 / h).round() as usize;
            for k in 0..n {
                rk4_step(|_, x, dx| dx[0] = -x[0], k as f64 * h, h, &mut x, &mut scr);
            }
            (x[0] - (-1.0_f64).exp()).abs()
        };
        let r = err(0.02) / err(0.01);
        assert!((r - 16.0).abs() < 3.0, "order ratio {r}");
    }
}
