//! Synthetic graph generators used for benchmarks and tests.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::rng_for;

/// Planted-partition graph with its block assignment.
#[derive(Debug, Clone)]
pub struct PlantedGraph {
    pub graph: Graph,
    pub blocks: Vec<usize>,
}

/// Stochastic block model: nodes are laid out block by block; a pair is an
/// edge with probability `p_in` inside a block and `p_out` across blocks.
pub fn stochastic_block_model(
    block_sizes: &[usize],
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> Result<PlantedGraph> {
    for p in [p_in, p_out] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("edge probability {p} outside [0, 1]")));
        }
    }
    let blocks: Vec<usize> = block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect();
    let n = blocks.len();
    let mut rng = rng_for(seed, "sbm");
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if blocks[i] == blocks[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Ok(PlantedGraph {
        graph: Graph::new(n, edges)?,
        blocks,
    })
}

pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Graph> {
    stochastic_block_model(&[n], p, p, seed).map(|pg| pg.graph)
}
