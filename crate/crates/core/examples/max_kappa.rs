//! Maximum output gain per multiplier class for the second-order example.

use std::time::Instant;

use barrier_iqc::analysis::{bisect_margin, AnalysisConfig, BisectOptions, ControllerKind, MarginTarget};
use barrier_iqc::kyp::InteriorPoint;
use barrier_iqc::multipliers::{MultiplierClass, MultiplierSpec};

fn main() {
    let base = AnalysisConfig::second_order_example();
    let backend = InteriorPoint::default();
    let opts = BisectOptions::for_target(MarginTarget::MaxKappa);
    let cells = [
        ("general", ControllerKind::Barrier, MultiplierSpec::static_sector()),
        ("zf N=10", ControllerKind::Barrier, MultiplierSpec::symmetric(MultiplierClass::ZfSiso, 10).unwrap()),
        ("czf N=0", ControllerKind::Barrier, MultiplierSpec::symmetric(MultiplierClass::CzfDiagonal, 0).unwrap()),
        ("czf N=1", ControllerKind::Barrier, MultiplierSpec::symmetric(MultiplierClass::CzfDiagonal, 1).unwrap()),
        ("czf N=10", ControllerKind::Barrier, MultiplierSpec::symmetric(MultiplierClass::CzfDiagonal, 10).unwrap()),
        ("nominal czf N=1", ControllerKind::Nominal, MultiplierSpec::symmetric(MultiplierClass::CzfDiagonal, 1).unwrap()),
        ("nominal czf N=10", ControllerKind::Nominal, MultiplierSpec::symmetric(MultiplierClass::CzfDiagonal, 10).unwrap()),
    ];
    for (name, controller, spec) in cells {
        let mut cfg = base.clone();
        cfg.controller = controller;
        cfg.multiplier = spec;
        let t = Instant::now();
        match bisect_margin(&cfg, MarginTarget::MaxKappa, &opts, &backend) {
            Ok(res) => println!("{name:>18}: kappa_max = {:.4} ({} probes, {:.1}s)", res.value, res.trace.len(), t.elapsed().as_secs_f64()),
            Err(e) => println!("{name:>18}: {e}"),
        }
    }
}
