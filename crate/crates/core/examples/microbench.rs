// quick micro-bench of derivative cost breakdown
use std::time::Instant;
use fluxobs::sim::{CoupledSystem, ObserverConfig, Rk4Scratch, Scenario};

fn bench(label: &str, scn: &Scenario, warm_to: f64) {
    let sys = CoupledSystem::new(scn).unwrap();
    let mut x = sys.initial_state();
    let mut scr = Rk4Scratch::new(x.len());
    let mut osc = Some(fluxobs::sim::QdOscillator::new(scn.step, 0.0));
    let h = scn.step;
    // warm the state past the startup transient
    let warm_steps = (warm_to / h) as u64;
    for k in 0..warm_steps {
        sys.step_with_oscillator(k as f64 * h, h, &mut x, &mut scr, &mut osc);
    }
    let n = 3_000_000u64;
    let t0 = Instant::now();
    for k in warm_steps..warm_steps + n {
        sys.step_with_oscillator(k as f64 * h, h, &mut x, &mut scr, &mut osc);
    }
    let el = t0.elapsed();
    println!(
        "{label}: {:.1} ns/step (dim {})",
        el.as_nanos() as f64 / n as f64,
        x.len()
    );
    std::hint::black_box(&x);
}

fn main() {
    let mut scn = Scenario::maglev_paper();
    scn.observers.robust = None;
    bench("maglev adaptive, cold", &scn, 0.0);
    bench("maglev adaptive, warm 0.3 s", &scn, 0.3);
    let mut scn2 = scn.clone();
    scn2.observers = ObserverConfig::none();
    bench("maglev filters only, warm 0.3 s", &scn2, 0.3);
    let mut scn3 = scn.clone();
    scn3.observers.adaptive = None;
    scn3.observers.robust = Some(5e17);
    bench("maglev robust, warm 0.3 s", &scn3, 0.3);
}
