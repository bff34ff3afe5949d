//! Task-2 barrier configuration under sampled output uncertainty.

use barrier_iqc::analysis::{prepare, AnalysisConfig};
use barrier_iqc::simulate::{closed_loop_simulate, random_initial_states, ClosedLoop, ControlLaw, Uncertainty};

fn main() {
    let mut cfg = AnalysisConfig::second_order_example();
    cfg.b = 0.25;
    cfg.r = 0.001;
    let prep = prepare(&cfg).unwrap();
    let cl = ClosedLoop { plant: &cfg.plant, kappa: cfg.kappa, observer: &prep.observer, problem: &prep.problem, law: ControlLaw::Barrier };
    for (i, x0) in random_initial_states(2, 20, 1.0, 0).iter().enumerate() {
        let delta = Uncertainty::sample(cfg.b, i as u64);
        let t = closed_loop_simulate(&cl, Some(delta), x0, 500).unwrap();
        println!("{i:2} pole {:+.3} gain {:+.3}: max |x| {:.3} final |x| {:.2e}", delta.pole, delta.gain, t.max_state_norm(), t.final_state_norm());
    }
}
