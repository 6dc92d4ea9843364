//! Deterministic fixed-step simulation of plant + controller + measurement
//! + filter bank + observers, with trace recording and summary metrics.

mod system;
mod trace;

pub use system::{rk4_step, CoupledSystem, Layout, QdOscillator, Rk4Scratch, StageSignals};
pub use trace::{scenario_from_metadata, write_metadata, write_summary, Trace, COLUMN_NAMES,
    N_COLUMNS};

use nalgebra::{DMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{
    MaglevControllerParams, MaglevParams, MeasurementBias, ModelError, ModelSpec, PmsmParams,
};
use crate::observers::{pe_estimate, prop1_bound, ObserverError, PeEstimate, Prop1Bound};
use crate::regression::{eval_w, N_THETA};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Observer(#[from] ObserverError),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("non-finite state in {component} at t = {t:.6}")]
    NonFinite { component: &'static str, t: f64 },
    #[error("air gap violated at t = {t:.6}: |q| = {q:.3e} ≥ g = {g:.3e}")]
    Gap { t: f64, q: f64, g: f64 },
}

/// Two-phase sinusoidal open-loop supply `u(t) = A·(cos ωt, sin ωt)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoPhaseSine {
    /// Amplitude [V].
    pub amplitude: f64,
    /// Electrical angular frequency [rad/s].
    pub omega: f64,
}

/// Model selection plus parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelConfig {
    Pmsm(PmsmParams),
    Maglev(MaglevParams),
}

/// Observer selection with gains. Any subset may run concurrently; they do
/// not feed back into the plant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    /// Robust observer gain `Γ_r` (scalar, applied as `Γ_r·I`).
    #[serde(default)]
    pub robust: Option<f64>,
    /// Adaptive observer diagonal gains in stacked order (7 entries in the
    /// reduced form, 10 in the full form).
    #[serde(default)]
    pub adaptive: Option<Vec<f64>>,
    /// Open-loop integration baseline.
    #[serde(default)]
    pub pebo: bool,
    /// Initial flux estimate shared by the closed-loop observers [V·s].
    #[serde(default)]
    pub lambda_hat0: [f64; 2],
}

impl ObserverConfig {
    pub fn none() -> Self {
        Self { robust: None, adaptive: None, pebo: false, lambda_hat0: [0.0, 0.0] }
    }
}

pub(crate) enum DriveConfig {
    MaglevController(MaglevControllerParams),
    TwoPhaseSine { amplitude: f64, omega: f64 },
}

fn default_decimation() -> usize {
    1
}
fn default_gain_scale() -> f64 {
    1.0
}
fn default_pe_window() -> f64 {
    1.0
}

/// Full description of one deterministic simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub model: ModelConfig,
    /// Full-state feedback (MagLev only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<MaglevControllerParams>,
    /// Open-loop voltage program (PMSM only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drive: Option<TwoPhaseSine>,
    pub bias: MeasurementBias,
    pub observers: ObserverConfig,
    /// Filter constant ν [1/s].
    pub nu: f64,
    /// Integration step h [s].
    pub step: f64,
    /// Horizon T_end [s].
    pub horizon: f64,
    /// Trace stores every `decimation`-th step.
    #[serde(default = "default_decimation")]
    pub decimation: usize,
    /// When set, deterministically perturbs the initial plant state
    /// (flux components by up to ±1%, the coordinate by up to ±1% of its
    /// domain scale).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Multiplies every observer gain (CLI `--gain-scale`).
    #[serde(default = "default_gain_scale")]
    pub gain_scale: f64,
    /// Integrate the closed-form error equations alongside the observers
    /// (validation runs; requires the true bias parameters).
    #[serde(default)]
    pub cross_check: bool,
    /// Excitation-certificate window [s].
    #[serde(default = "default_pe_window")]
    pub pe_window: f64,
}

impl Scenario {
    pub fn model_spec(&self) -> ModelSpec {
        match &self.model {
            ModelConfig::Pmsm(p) => ModelSpec::Pmsm(*p),
            ModelConfig::Maglev(p) => ModelSpec::Maglev(*p),
        }
    }

    pub(crate) fn drive_config(&self) -> DriveConfig {
        match &self.model {
            ModelConfig::Maglev(_) => {
                DriveConfig::MaglevController(self.controller.expect("validated"))
            }
            ModelConfig::Pmsm(_) => {
                let d = self.drive.expect("validated");
                DriveConfig::TwoPhaseSine { amplitude: d.amplitude, omega: d.omega }
            }
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidScenario(m.to_string()));
        if !(self.step > 0.0) {
            return bad("step must be positive");
        }
        if !(self.horizon > self.step) {
            return bad("horizon must exceed the step");
        }
        if self.decimation == 0 {
            return bad("decimation must be at least 1");
        }
        if !(self.nu > 0.0) {
            return bad("nu must be positive");
        }
        if !(self.gain_scale > 0.0) {
            return bad("gain_scale must be positive");
        }
        if !(self.pe_window > 0.0) {
            return bad("pe_window must be positive");
        }
        self.model_spec().validate()?;
        match &self.model {
            ModelConfig::Maglev(_) => {
                match &self.controller {
                    None => return bad("the MagLev model needs a [controller] section"),
                    Some(c) => c.validate()?,
                }
                if self.drive.is_some() {
                    return bad("[drive] applies to the PMSM model only");
                }
            }
            ModelConfig::Pmsm(_) => {
                if self.drive.is_none() {
                    return bad("the PMSM model needs a [drive] section");
                }
                if self.controller.is_some() {
                    return bad("[controller] applies to the MagLev model only");
                }
            }
        }
        if let Some(g) = self.observers.robust {
            if !(g > 0.0) {
                return bad("robust gain must be positive");
            }
        }
        if let Some(gains) = &self.observers.adaptive {
            let reduced = self.model_spec().constraint().reduced_form_active();
            crate::observers::AdaptiveGains::try_from_diag(gains, reduced)?;
        }
        Ok(())
    }

    /// The MagLev bench scenario: plant/controller constants, ν = 50,
    /// Γ = 1e4, the published 7-entry adaptive diagonal and the two-segment
    /// bias schedule switching at t = 50 s.
    ///
    /// The default step resolves the stiffest transient the published
    /// adaptive gains produce (the filter-bank re-excitation at the bias
    /// switch); robust-only studies run fine at `step = 1e-5`.
    pub fn maglev_paper() -> Self {
        Scenario {
            name: "maglev-paper".to_string(),
            model: ModelConfig::Maglev(MaglevParams::paper_bench()),
            controller: Some(MaglevControllerParams::paper_bench()),
            drive: None,
            bias: MeasurementBias::constant(
                Vector2::new(-0.003, 0.0025),
                Vector2::zeros(),
            )
            .with_switch(
                50.0,
                Vector2::new(0.001, 0.0008),
                Vector2::new(0.002, 0.0002),
            )
            .expect("static schedule"),
            observers: ObserverConfig {
                robust: Some(1.0e4),
                adaptive: Some(vec![1e20, 1e20, 1e20, 1e20, 2e13, 2e13, 20.0]),
                pebo: false,
                lambda_hat0: [0.0, 0.0],
            },
            nu: 50.0,
            step: 4.0e-8,
            horizon: 100.0,
            decimation: 25_000,
            seed: None,
            gain_scale: 1.0,
            cross_check: false,
            pe_window: 1.0,
        }
    }

    /// Open-loop PMSM scenario: two-phase sinusoidal supply, constant
    /// measurement biases, full-form filter bank.
    pub fn pmsm_openloop() -> Self {
        Scenario {
            name: "pmsm-openloop".to_string(),
            model: ModelConfig::Pmsm(PmsmParams::default_desk()),
            controller: None,
            drive: Some(TwoPhaseSine {
                amplitude: 2.0,
                omega: 2.0 * std::f64::consts::PI * 10.0,
            }),
            bias: MeasurementBias::constant(
                Vector2::new(0.05, -0.03),
                Vector2::new(0.10, -0.05),
            ),
            observers: ObserverConfig::none(),
            nu: 50.0,
            step: 1.0e-5,
            horizon: 10.0,
            decimation: 100,
            seed: None,
            gain_scale: 1.0,
            cross_check: false,
            pe_window: 1.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Run
// ---------------------------------------------------------------------------

/// Excitation and envelope report for the robust observer.
#[derive(Clone, Debug)]
pub enum Prop1Summary {
    /// The envelope constants are undefined (for example `α = 0`).
    Undefined(String),
    Checked {
        bound: Prop1Bound,
        /// Samples violating `|λ̃(t)| ≤ m_r e^{−ρ_r t}|λ̃(0)| + ℓ`.
        violations: usize,
    },
}

/// Metrics computed after a run.
#[derive(Clone, Debug, Default)]
pub struct Summary {
    pub steps: u64,
    /// `‖λ‖∞` over the stored trace.
    pub lambda_sup: f64,
    pub robust_final_err: Option<f64>,
    pub robust_max_err: Option<f64>,
    pub adaptive_final_err: Option<f64>,
    pub adaptive_max_err: Option<f64>,
    pub theta_final_err: Option<f64>,
    pub theta_max_err: Option<f64>,
    pub pebo_final_err: Option<f64>,
    pub w_resid_max: f64,
    /// Largest |y − Φ_λᵀλ − Φ_θᵀθ| over `t ≥ 25/ν` (past the filter
    /// transient).
    pub regr_resid_max: f64,
    /// RMS of `y` over the same window.
    pub rms_y: f64,
    pub pe_phi_lambda: Option<PeEstimate>,
    pub pe_psi: Option<PeEstimate>,
    pub prop1: Option<Prop1Summary>,
}

impl Summary {
    /// Key-value pairs for the summary file.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vec![
            ("steps".into(), self.steps.to_string()),
            ("lambda_sup".into(), format!("{}", self.lambda_sup)),
            ("w_resid_max".into(), format!("{}", self.w_resid_max)),
            ("regr_resid_max".into(), format!("{}", self.regr_resid_max)),
            ("rms_y".into(), format!("{}", self.rms_y)),
        ];
        let mut opt = |k: &str, v: &Option<f64>| {
            if let Some(v) = v {
                out.push((k.into(), format!("{v}")));
            }
        };
        opt("robust_final_err", &self.robust_final_err);
        opt("robust_max_err", &self.robust_max_err);
        opt("adaptive_final_err", &self.adaptive_final_err);
        opt("adaptive_max_err", &self.adaptive_max_err);
        opt("theta_final_err", &self.theta_final_err);
        opt("theta_max_err", &self.theta_max_err);
        opt("pebo_final_err", &self.pebo_final_err);
        if let Some(pe) = &self.pe_phi_lambda {
            out.push(("pe_phil_window".into(), format!("{}", pe.window)));
            out.push(("pe_phil_alpha".into(), format!("{}", pe.alpha)));
            out.push(("pe_phil_sup".into(), format!("{}", pe.sup_norm)));
        }
        if let Some(pe) = &self.pe_psi {
            out.push(("pe_psi_window".into(), format!("{}", pe.window)));
            out.push(("pe_psi_alpha".into(), format!("{}", pe.alpha)));
            out.push(("pe_psi_sup".into(), format!("{}", pe.sup_norm)));
        }
        match &self.prop1 {
            None => {}
            Some(Prop1Summary::Undefined(why)) => {
                out.push(("prop1_envelope".into(), format!("undefined: {why}")));
            }
            Some(Prop1Summary::Checked { bound, violations }) => {
                out.push(("prop1_eta".into(), format!("{}", bound.eta)));
                out.push(("prop1_m_r".into(), format!("{}", bound.m_r)));
                out.push(("prop1_rho_r".into(), format!("{}", bound.rho_r)));
                out.push(("prop1_ell".into(), format!("{}", bound.ell)));
                out.push(("prop1_b_sup".into(), format!("{}", bound.b_sup)));
                out.push(("prop1_envelope_violations".into(), violations.to_string()));
                out.push(("prop1_envelope_ok".into(), (*violations == 0).to_string()));
            }
        }
        out
    }
}

/// A finished run: decimated trace plus summary metrics.
pub struct RunOutput {
    pub trace: Trace,
    pub summary: Summary,
}

use crate::util::unit_interval;

/// Run a scenario to completion.
///
/// Deterministic: identical scenarios produce bit-identical traces.
pub fn run(scn: &Scenario) -> Result<RunOutput, SimError> {
    let sys = CoupledSystem::new(scn)?;
    let mut x = sys.initial_state();
    if let Some(seed) = scn.seed {
        let mut rng = seed;
        let q_scale = match &sys.model {
            ModelSpec::Maglev(p) => p.g,
            ModelSpec::Pmsm(_) => 1.0,
        };
        x[0] *= 1.0 + 0.01 * unit_interval(&mut rng);
        x[1] *= 1.0 + 0.01 * unit_interval(&mut rng);
        x[2] += 0.01 * q_scale * unit_interval(&mut rng);
    }
    let h = scn.step;
    let n_steps = (scn.horizon / h).round() as u64;
    let mut scratch = Rk4Scratch::new(x.len());
    let cap = (n_steps / scn.decimation as u64 + 2) as usize;
    let mut trace = Trace::with_capacity(h * scn.decimation as f64, cap);

    let pebo_theta0 = sys.pebo_theta0();
    let gap = match &sys.model {
        ModelSpec::Maglev(p) => Some(p.g),
        ModelSpec::Pmsm(_) => None,
    };

    let mut osc = match &sys.model {
        ModelSpec::Maglev(_) => Some(system::QdOscillator::new(h, 0.0)),
        ModelSpec::Pmsm(_) => None,
    };
    // sanity checks run on a short stride; NaNs persist until inspected
    const CHECK_STRIDE: u64 = 64;
    for k in 0..=n_steps {
        let t = k as f64 * h;
        if k % scn.decimation as u64 == 0 || k == n_steps {
            trace.push(record_row(&sys, t, &x, pebo_theta0));
        }
        if k == n_steps {
            break;
        }
        sys.step_with_oscillator(t, h, &mut x, &mut scratch, &mut osc);
        if (k + 1) % CHECK_STRIDE == 0 || k + 1 == n_steps {
            for (idx, v) in x.iter().enumerate() {
                if !v.is_finite() {
                    return Err(SimError::NonFinite {
                        component: sys.layout.component_name(idx),
                        t: t + h,
                    });
                }
            }
            if let Some(g) = gap {
                if x[2].abs() >= g {
                    return Err(SimError::Gap { t: t + h, q: x[2], g });
                }
            }
        }
    }

    let summary = summarize(scn, &sys, &trace, n_steps);
    Ok(RunOutput { trace, summary })
}

/// Assemble one trace row (absent blocks become NaN).
fn record_row(sys: &CoupledSystem, t: f64, x: &[f64], pebo_theta0: Vector2<f64>) -> [f64; N_COLUMNS] {
    let mut row = [f64::NAN; N_COLUMNS];
    let s = sys.stage_signals(t, x);
    let lambda = Vector2::new(x[0], x[1]);
    row[0] = t;
    row[1..5].copy_from_slice(&x[0..4]);
    row[5] = s.i[0];
    row[6] = s.i[1];
    row[7] = s.u[0];
    row[8] = s.u[1];
    row[9] = s.i_m[0];
    row[10] = s.i_m[1];
    row[11] = s.u_m[0];
    row[12] = s.u_m[1];
    // filters in full layout (xi3/xi8 are zero in the reduced form)
    let f = &s.filters;
    let xi = [
        f.xi1[0], f.xi1[1], f.xi2[0], f.xi2[1], f.xi3[0], f.xi3[1], f.xi3[2], f.xi4[0], f.xi4[1],
        f.xi5, f.xi6[0], f.xi6[1], f.xi7[0], f.xi7[1], f.xi8[0], f.xi8[1], f.xi8[2], f.xi9,
    ];
    row[13..31].copy_from_slice(&xi);
    row[31] = s.sample.y;
    row[32] = s.sample.phi_lambda[0];
    row[33] = s.sample.phi_lambda[1];
    row[34..42].copy_from_slice(s.sample.phi_theta.as_slice());

    let tp = sys.theta_true(t);
    if let Some(o) = sys.layout.robust {
        row[42] = x[o];
        row[43] = x[o + 1];
        row[56] = (Vector2::new(x[o], x[o + 1]) - lambda).norm();
    }
    if let Some(o) = sys.layout.adaptive {
        row[44] = x[o];
        row[45] = x[o + 1];
        let mut th_full = [0.0; N_THETA];
        if sys.layout.reduced {
            th_full[0] = x[o + 2];
            th_full[1] = x[o + 3];
            th_full[2] = x[o + 4];
            th_full[3] = x[o + 5];
            th_full[7] = x[o + 6];
        } else {
            th_full.copy_from_slice(&x[o + 2..o + 2 + N_THETA]);
        }
        row[46..54].copy_from_slice(&th_full);
        row[57] = (Vector2::new(x[o], x[o + 1]) - lambda).norm();
        let th_err: f64 = th_full
            .iter()
            .zip(tp.theta.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        row[58] = th_err.sqrt();
    }
    if let Some(o) = sys.layout.pebo {
        let est = Vector2::new(x[o], x[o + 1]) + pebo_theta0;
        row[54] = est[0];
        row[55] = est[1];
    }
    row[59] = eval_w(&sys.cc, lambda, s.i);
    row[60] = s.sample.y - s.sample.phi_lambda.dot(&lambda) - s.sample.phi_theta.dot(&tp.theta);
    if let Some(o) = sys.layout.xcheck_robust {
        row[61] = x[o];
        row[62] = x[o + 1];
    }
    if let Some(o) = sys.layout.xcheck_adaptive {
        if sys.layout.reduced {
            // slots (λ̃₁ λ̃₂ θ̃m₁ θ̃m₂ θ̃ya₁ θ̃ya₂ 0 0 0 θ̃sc)
            row[63..69].copy_from_slice(&x[o..o + 6]);
            row[69] = 0.0;
            row[70] = 0.0;
            row[71] = 0.0;
            row[72] = x[o + 6];
        } else {
            row[63..73].copy_from_slice(&x[o..o + 10]);
        }
    }
    row
}

fn summarize(scn: &Scenario, sys: &CoupledSystem, trace: &Trace, steps: u64) -> Summary {
    let mut sm = Summary { steps, ..Summary::default() };
    let rows = trace.rows();
    if rows.is_empty() {
        return sm;
    }
    let col = |name: &str| Trace::column_index(name).unwrap();
    let (i_t, i_l1, i_l2) = (col("t"), col("lambda1"), col("lambda2"));
    let (i_er, i_ea, i_eth) = (col("err_robust"), col("err_adaptive"), col("err_theta"));
    let (i_w, i_r, i_y) = (col("w_resid"), col("regr_resid"), col("y"));

    sm.lambda_sup = rows
        .iter()
        .map(|r| (r[i_l1] * r[i_l1] + r[i_l2] * r[i_l2]).sqrt())
        .fold(0.0, f64::max);
    sm.w_resid_max = rows.iter().map(|r| r[i_w].abs()).fold(0.0, f64::max);

    let burn_in = 25.0 / scn.nu;
    let late: Vec<&[f64; N_COLUMNS]> = rows.iter().filter(|r| r[i_t] >= burn_in).collect();
    if !late.is_empty() {
        sm.regr_resid_max = late.iter().map(|r| r[i_r].abs()).fold(0.0, f64::max);
        sm.rms_y =
            (late.iter().map(|r| r[i_y] * r[i_y]).sum::<f64>() / late.len() as f64).sqrt();
    }

    let last = rows.last().unwrap();
    if sys.layout.robust.is_some() {
        sm.robust_final_err = Some(last[i_er]);
        sm.robust_max_err = Some(rows.iter().map(|r| r[i_er]).fold(0.0, f64::max));
    }
    if sys.layout.adaptive.is_some() {
        sm.adaptive_final_err = Some(last[i_ea]);
        sm.adaptive_max_err = Some(rows.iter().map(|r| r[i_ea]).fold(0.0, f64::max));
        sm.theta_final_err = Some(last[i_eth]);
        sm.theta_max_err = Some(rows.iter().map(|r| r[i_eth]).fold(0.0, f64::max));
    }
    if sys.layout.pebo.is_some() {
        let (i_p1, i_p2) = (col("lamhat_pebo1"), col("lamhat_pebo2"));
        let e = Vector2::new(last[i_p1] - last[i_l1], last[i_p2] - last[i_l2]);
        sm.pebo_final_err = Some(e.norm());
    }

    // excitation certificates over the stored (decimated) regressors
    let dt = trace.dt;
    if rows.len() > 2 && (rows.len() - 1) as f64 * dt > scn.pe_window {
        let phil = trace_matrix(trace, &["phil1", "phil2"]);
        sm.pe_phi_lambda = pe_estimate(&phil, dt, scn.pe_window).ok();
        let psi_cols: Vec<&str> = if sys.reduced() {
            vec!["phil1", "phil2", "phith1", "phith2", "phith3", "phith4", "phith8"]
        } else {
            vec![
                "phil1", "phil2", "phith1", "phith2", "phith3", "phith4", "phith5", "phith6",
                "phith7", "phith8",
            ]
        };
        let psi = trace_matrix(trace, &psi_cols);
        sm.pe_psi = pe_estimate(&psi, dt, scn.pe_window).ok();
    }

    // envelope verdict for the robust observer
    if let (Some(pe), Some(gamma)) = (&sm.pe_phi_lambda, scn.observers.robust) {
        let gamma_m = nalgebra::Matrix2::from_diagonal_element(gamma * scn.gain_scale);
        let b_sup = b_sup_from_trace(sys, trace);
        sm.prop1 = Some(match prop1_bound(pe, &gamma_m, b_sup) {
            Err(e) => Prop1Summary::Undefined(e.to_string()),
            Ok(bound) => {
                let err0 = rows[0][i_er];
                let violations = rows
                    .iter()
                    .filter(|r| r[i_er] > bound.m_r * (-bound.rho_r * r[i_t]).exp() * err0 + bound.ell)
                    .count();
                Prop1Summary::Checked { bound, violations }
            }
        });
    }
    sm
}

fn trace_matrix(trace: &Trace, names: &[&str]) -> DMatrix<f64> {
    let idx: Vec<usize> = names.iter().map(|n| Trace::column_index(n).unwrap()).collect();
    let rows = trace.rows();
    let mut m = DMatrix::<f64>::zeros(rows.len(), idx.len());
    for (r, row) in rows.iter().enumerate() {
        for (c, i) in idx.iter().enumerate() {
            m[(r, c)] = row[*i];
        }
    }
    m
}

/// `sup_t |θ_m − Γ Φ_λ Φ_θᵀ θ|` from the stored trace and the known true
/// parameters (a validation-context quantity).
pub fn b_sup_from_trace(sys: &CoupledSystem, trace: &Trace) -> f64 {
    let col = |n: &str| Trace::column_index(n).unwrap();
    let (i_t, i_p1, i_p2) = (col("t"), col("phil1"), col("phil2"));
    let ith0 = col("phith1");
    let gamma = sys_gamma(sys);
    trace
        .rows()
        .iter()
        .map(|r| {
            let tp = sys.theta_true(r[i_t]);
            let phil = Vector2::new(r[i_p1], r[i_p2]);
            let phith = SVector::<f64, N_THETA>::from_row_slice(&r[ith0..ith0 + N_THETA]);
            (tp.theta_m - gamma * phil * phith.dot(&tp.theta)).norm()
        })
        .fold(0.0, f64::max)
}

fn sys_gamma(sys: &CoupledSystem) -> nalgebra::Matrix2<f64> {
    sys.gamma_r_matrix().unwrap_or_else(nalgebra::Matrix2::zeros)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_presets_validate() {
        Scenario::maglev_paper().validate().unwrap();
        Scenario::pmsm_openloop().validate().unwrap();
    }

    #[test]
    fn scenario_toml_round_trip() {
        for scn in [Scenario::maglev_paper(), Scenario::pmsm_openloop()] {
            let text = toml::to_string_pretty(&scn).unwrap();
            let back: Scenario = toml::from_str(&text).unwrap();
            assert_eq!(scn, back);
        }
    }

    #[test]
    fn scenario_unknown_keys_rejected() {
        let mut text = toml::to_string_pretty(&Scenario::pmsm_openloop()).unwrap();
        text.push_str("\nbogus_key = 1\n");
        assert!(toml::from_str::<Scenario>(&text).is_err());
    }

    #[test]
    fn metadata_round_trip() {
        let scn = Scenario::maglev_paper();
        let mut buf = Vec::new();
        write_metadata(&mut buf, &scn).unwrap();
        let parsed = scenario_from_metadata(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(scn, parsed);
    }

    #[test]
    fn mismatched_drive_and_model_rejected() {
        let mut scn = Scenario::pmsm_openloop();
        scn.controller = Some(crate::models::MaglevControllerParams::paper_bench());
        assert!(scn.validate().is_err());
        let mut scn = Scenario::maglev_paper();
        scn.controller = None;
        assert!(scn.validate().is_err());
    }

    #[test]
    fn sweep_requires_robust_observer_and_scales() {
        let mut scn = Scenario::pmsm_openloop();
        scn.observers.robust = None;
        assert!(bias_sweep(&scn, &[1.0]).is_err());
        scn.observers.robust = Some(1.0);
        assert!(bias_sweep(&scn, &[]).is_err());
    }

    #[test]
    fn short_runs_are_deterministic() {
        let mut scn = Scenario::pmsm_openloop();
        scn.horizon = 0.05;
        scn.decimation = 10;
        let a = run(&scn).unwrap();
        let b = run(&scn).unwrap();
        assert_eq!(a.trace.rows().len(), b.trace.rows().len());
        for (ra, rb) in a.trace.rows().iter().zip(b.trace.rows()) {
            for (va, vb) in ra.iter().zip(rb) {
                assert!(va == vb || (va.is_nan() && vb.is_nan()));
            }
        }
    }

    #[test]
    fn equilibrium_state_is_preserved() {
        // Zero-input PMSM at the magnet-aligned flux stays put.
        let mut scn = Scenario::pmsm_openloop();
        scn.drive = Some(TwoPhaseSine { amplitude: 0.0, omega: 1.0 });
        scn.bias = MeasurementBias::zero();
        scn.horizon = 0.01;
        scn.decimation = 100;
        let out = run(&scn).unwrap();
        let rows = out.trace.rows();
        let first = rows.first().unwrap();
        let last = rows.last().unwrap();
        for k in 1..5 {
            assert!(
                (first[k] - last[k]).abs() <= 1e-15 * (1.0 + first[k].abs()),
                "state column {k} moved: {} -> {}",
                first[k],
                last[k]
            );
        }
    }

    #[test]
    fn seed_perturbs_initial_state_deterministically() {
        let mut scn = Scenario::pmsm_openloop();
        scn.horizon = 0.01;
        scn.seed = Some(7);
        let a = run(&scn).unwrap();
        let b = run(&scn).unwrap();
        assert_eq!(a.trace.rows()[0][1], b.trace.rows()[0][1]);
        scn.seed = Some(8);
        let c = run(&scn).unwrap();
        assert_ne!(a.trace.rows()[0][1], c.trace.rows()[0][1]);
    }
}

// ---------------------------------------------------------------------------
// Bias sweep
// ---------------------------------------------------------------------------

/// One row of a bias sweep.
#[derive(Clone, Copy, Debug)]
pub struct SweepPoint {
    pub scale: f64,
    /// Mean robust flux error over the last 10% of the horizon.
    pub steady_err: f64,
    pub max_err: f64,
}

/// Re-run the scenario with the bias schedule scaled by each factor and
/// report the steady-state robust observer error.
pub fn bias_sweep(scn: &Scenario, scales: &[f64]) -> Result<Vec<SweepPoint>, SimError> {
    if scn.observers.robust.is_none() {
        return Err(SimError::InvalidScenario(
            "sweep requires the robust observer".to_string(),
        ));
    }
    if scales.is_empty() {
        return Err(SimError::InvalidScenario("empty scale list".to_string()));
    }
    let mut out = Vec::with_capacity(scales.len());
    for &s in scales {
        let mut scn_s = scn.clone();
        scn_s.bias = scn.bias.scaled(s);
        let res = run(&scn_s)?;
        let rows = res.trace.rows();
        let i_t = Trace::column_index("t").unwrap();
        let i_er = Trace::column_index("err_robust").unwrap();
        let t_from = scn.horizon * 0.9;
        let tail: Vec<f64> = rows
            .iter()
            .filter(|r| r[i_t] >= t_from)
            .map(|r| r[i_er])
            .collect();
        let steady = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
        out.push(SweepPoint {
            scale: s,
            steady_err: steady,
            max_err: res.summary.robust_max_err.unwrap_or(f64::NAN),
        });
    }
    Ok(out)
}
