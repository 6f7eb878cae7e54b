//! Fixtures shared by the benchmarks.

use sourcebias::{synthesize, Dataset, SynthConfig};

/// Default synthetic corpus with `queries` queries.
pub fn corpus(queries: usize) -> Dataset {
    let cfg = SynthConfig {
        num_queries: queries,
        ..SynthConfig::default()
    };
    synthesize(&cfg).expect("default synth config is valid").dataset
}
