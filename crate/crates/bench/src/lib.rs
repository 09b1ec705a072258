//! Shared fixtures for the benchmarks.

use dggn::diagram::DiagramAnnotation;
use dggn::synth::{generate, Family, SynthSpec};

/// Deterministic synthetic diagrams of one family.
pub fn fixture(family: Family, count: usize) -> Vec<DiagramAnnotation> {
    generate(
        &SynthSpec {
            family,
            seed: 17,
            ..SynthSpec::default()
        },
        count,
    )
    .expect("default synthetic spec is feasible")
}
