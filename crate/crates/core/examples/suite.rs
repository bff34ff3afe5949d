//! Runs the property battery; an optional argument inflates `m`.

use barrier_iqc::properties::{run_suite, SuiteOptions};

fn main() {
    let inflation = std::env::args().nth(1).map_or(1.0, |s| s.parse().expect("numeric inflation factor"));
    let report = run_suite(&SuiteOptions { m_inflation: inflation, ..SuiteOptions::default() });
    print!("{}", report.to_text());
}
