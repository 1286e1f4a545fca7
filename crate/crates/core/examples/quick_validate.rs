//! The fast acceptance criteria, plus the equivalence checks on a handful
//! of random geometries. `dfsim validate` runs the full suite.

use dataflow_sim::harness::validate::{amdahl, equivalence_and_invariants, noc_ids, padding, zero_fractions};
use dataflow_sim::harness::{Config, ValidateOptions};

fn main() {
    let opts = ValidateOptions {
        random_layers: 4,
        ..ValidateOptions::default()
    };
    let (eq, inv) = equivalence_and_invariants(&Config::default(), &opts);
    for o in [padding(), zero_fractions(), noc_ids(), eq, inv, amdahl()] {
        println!("{}", o.line());
    }
}
