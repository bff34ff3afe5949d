//! Output gain 2.9: barrier MPC against the exact constrained QP.

use barrier_iqc::analysis::{prepare, AnalysisConfig};
use barrier_iqc::simulate::{closed_loop_simulate, random_initial_states, ClosedLoop, ControlLaw};

fn main() {
    let mut cfg = AnalysisConfig::second_order_example();
    cfg.kappa = 2.9;
    let prep = prepare(&cfg).unwrap();
    for law in [ControlLaw::Barrier, ControlLaw::ConstrainedQp, ControlLaw::Unconstrained] {
        let cl = ClosedLoop { plant: &cfg.plant, kappa: cfg.kappa, observer: &prep.observer, problem: &prep.problem, law };
        for x0 in random_initial_states(2, 4, 1.0, 7) {
            match closed_loop_simulate(&cl, None, &x0, 500) {
                Ok(t) => println!("{law:?}: max |x| {:.3e} final |x| {:.3e} tail |y| {:.3e}", t.max_state_norm(), t.final_state_norm(), t.tail_output_peak(100)),
                Err(e) => println!("{law:?}: {e}"),
            }
        }
    }
}
