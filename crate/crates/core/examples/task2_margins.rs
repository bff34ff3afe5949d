//! Minimum input weight at b = 0.25 and maximum uncertainty bound at r = 0.1.

use std::time::Instant;

use barrier_iqc::analysis::{bisect_margin, AnalysisConfig, BisectOptions, ControllerKind, MarginTarget};
use barrier_iqc::kyp::InteriorPoint;
use barrier_iqc::multipliers::{MultiplierClass, MultiplierSpec};

fn main() {
    let backend = InteriorPoint::default();
    let spec = |c, n| MultiplierSpec::symmetric(c, n).unwrap();
    let cells = [
        ("general", MultiplierSpec::static_sector()),
        ("zf N=1", spec(MultiplierClass::ZfSiso, 1)),
        ("zf N=10", spec(MultiplierClass::ZfSiso, 10)),
        ("czf N=0", spec(MultiplierClass::CzfDiagonal, 0)),
        ("czf N=10", spec(MultiplierClass::CzfDiagonal, 10)),
        ("czf N=20", spec(MultiplierClass::CzfDiagonal, 20)),
    ];
    for (target, fixed) in [(MarginTarget::MinR, 0.25), (MarginTarget::MaxB, 0.1)] {
        println!("== {:?}", target);
        for controller in [ControllerKind::Nominal, ControllerKind::Barrier] {
            for (name, spec) in cells {
                let mut cfg = AnalysisConfig::second_order_example();
                match target {
                    MarginTarget::MinR => cfg.b = fixed,
                    _ => cfg.r = fixed,
                }
                cfg.controller = controller;
                cfg.multiplier = spec;
                let t = Instant::now();
                let opts = BisectOptions::for_target(target);
                match bisect_margin(&cfg, target, &opts, &backend) {
                    Ok(res) => println!("{controller:?} {name:>10}: {:.4} ({} probes, {:.1}s)", res.value, res.trace.len(), t.elapsed().as_secs_f64()),
                    Err(e) => println!("{controller:?} {name:>10}: {e} ({:.1}s)", t.elapsed().as_secs_f64()),
                }
            }
        }
    }
}
