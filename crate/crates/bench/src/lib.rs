//! Shared inputs for the stage benchmarks.

use gpll_core::data::{generate_synthetic, GeneratorConfig};
use gpll_core::graph::{build_dual_graph, link_tuples, GraphBuildConfig};
use gpll_core::{DualBipartiteGraph, GpllDataset};

/// The synthetic benchmark dataset used by the acceptance run.
pub fn dataset(seed: u64) -> GpllDataset {
    generate_synthetic(&GeneratorConfig {
        separation: 1.1,
        noise: 0.5,
        seed,
        ..GeneratorConfig::default()
    })
    .expect("default generator config is valid")
}

pub fn graph(ds: &GpllDataset) -> DualBipartiteGraph {
    build_dual_graph(ds, &GraphBuildConfig::default())
}

/// Link tuples of `ds`, the points clustered during graph construction.
pub fn tuples(ds: &GpllDataset) -> Vec<Vec<f64>> {
    link_tuples(ds).into_iter().map(|t| t.2).collect()
}
