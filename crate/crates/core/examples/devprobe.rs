// Scratch development probe (not part of the deliverable surface).
use std::time::Instant;

use fluxobs::checks;
use fluxobs::sim::{self, CoupledSystem, Scenario};

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "regression".into());
    match which.as_str() {
        "regression" => {
            let t0 = Instant::now();
            for r in checks::regression_suite().unwrap() {
                println!("{} {} — {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            println!("regression suite took {:?}", t0.elapsed());
        }
        "criterion2" => {
            let mut scn = checks::identity_run(true, 10.0, 1e-5, 100);
            scn.name = "c2".into();
            let t0 = Instant::now();
            let res = sim::run(&scn).unwrap();
            println!("run took {:?}", t0.elapsed());
            for t_from in [0.1, 0.3, 0.5, 1.0, 2.0] {
                let (max_r, rms_y) = checks::regression_residual_stats(&res.trace, t_from);
                println!(
                    "  t>={t_from}: max|r| = {max_r:.3e}, rms_y = {rms_y:.3e}, ratio = {:.3e}",
                    max_r / rms_y
                );
            }
        }
        "observers" => {
            let t0 = Instant::now();
            for r in checks::observers_suite().unwrap() {
                println!("{} {} — {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            println!("observers suite took {:?}", t0.elapsed());
        }
        "bounds" => {
            for r in checks::bounds_suite().unwrap() {
                println!("{} {} — {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
        }
        "richardson" => {
            let r = checks::richardson_ratio(2e-4, 1.0).unwrap();
            println!("richardson ratio = {r:.2}");
        }
        "adaptive" => {
            // short cold-start adaptive run at the preset step
            let horizon: f64 = std::env::args()
                .nth(2)
                .and_then(|s| s.parse().ok())
                .unwrap_or(3.0);
            let kg: f64 = std::env::args()
                .nth(3)
                .and_then(|s| s.parse().ok())
                .unwrap_or(300.0);
            let lam2s: f64 = std::env::args()
                .nth(4)
                .and_then(|s| s.parse().ok())
                .unwrap_or(2.0e-5);
            let step: f64 = std::env::args()
                .nth(5)
                .and_then(|s| s.parse().ok())
                .unwrap_or(5.0e-8);
            let mut scn = Scenario::maglev_paper();
            scn.horizon = horizon;
            scn.observers.robust = None;
            scn.decimation = 10_000;
            scn.step = step;
            scn.controller.as_mut().unwrap().k_g = kg;
            scn.controller.as_mut().unwrap().lambda2_star = lam2s;
            let t0 = Instant::now();
            match sim::run(&scn) {
                Ok(res) => {
                    let dt = t0.elapsed();
                    println!(
                        "3 s at h={}: {:?} ({:.1} ns/step), steps = {}",
                        scn.step,
                        dt,
                        dt.as_nanos() as f64 / res.summary.steps as f64,
                        res.summary.steps
                    );
                    println!(
                        "  err_ad final {:.3e} max {:.3e}; theta final {:.3e} max {:.3e}",
                        res.summary.adaptive_final_err.unwrap(),
                        res.summary.adaptive_max_err.unwrap(),
                        res.summary.theta_final_err.unwrap(),
                        res.summary.theta_max_err.unwrap()
                    );
                    println!(
                        "  pe_psi alpha {:?}",
                        res.summary.pe_psi.as_ref().map(|p| p.alpha)
                    );
                    let t = res.trace.column("t").unwrap();
                    let ea = res.trace.column("err_adaptive").unwrap();
                    let eth = res.trace.column("err_theta").unwrap();
                    let n = t.len();
                    for k in (0..n).step_by((n / 14).max(1)) {
                        println!("    t={:6.2} err_ad={:.3e} err_th={:.3e}", t[k], ea[k], eth[k]);
                    }
                    // final theta_hat vs truth componentwise
                    let sys = CoupledSystem::new(&scn).unwrap();
                    let tp = sys.theta_true(t[n - 1]);
                    let last = res.trace.rows().last().unwrap();
                    let ith = fluxobs::sim::Trace::column_index("thhat1").unwrap();
                    for k in 0..8 {
                        println!(
                            "    theta[{k}]: hat {:+.4e}  true {:+.4e}",
                            last[ith + k],
                            tp.theta[k]
                        );
                    }
                }
                Err(e) => println!("FAILED: {e}"),
            }
        }
        "adaptive_1e5" => {
            // the published gains at h = 1e-5: expected to go non-finite at
            // the bias switch; run a shortened switch variant
            let mut scn = Scenario::maglev_paper();
            scn.step = 1e-5;
            scn.horizon = 6.0;
            scn.observers.robust = None;
            scn.decimation = 1000;
            match sim::run(&scn) {
                Ok(res) => println!(
                    "survived: err_ad final {:.3e}",
                    res.summary.adaptive_final_err.unwrap()
                ),
                Err(e) => println!("expected failure: {e}"),
            }
        }
        "xcheck_adaptive" => {
            let mut scn = Scenario::maglev_paper();
            scn.horizon = 2.0;
            scn.observers.robust = None;
            scn.cross_check = true;
            scn.decimation = 10_000;
            let sys = CoupledSystem::new(&scn).unwrap();
            let res = sim::run(&scn).unwrap();
            let cc = checks::cross_check_report(&sys, &res.trace, 0.1);
            println!("adaptive xcheck rel = {:?}", cc.adaptive_rel);
        }
        other => eprintln!("unknown probe '{other}'"),
    }
}
