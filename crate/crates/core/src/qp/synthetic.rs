//! Random allocation instances for benchmarking the block solver against a
//! single full solve.

use rand::Rng as _;

use super::{AllocVar, AllocationProblem};
use crate::graph::NodeId;
use crate::rng::{self, Purpose};

/// `n` producer/consumer pairs drawn with replacement from a pool of `pool`
/// members on each side (repeated pairs become separate variables). Targets
/// `h_i ~ U[0, n/100]`, baselines `p ~ U[0, 1]`, boxes `[0.1p, 10p]` and
/// consumer sums within `[0.2, 5]` times their baseline sum.
pub fn benchmark_instance(n: usize, pool: usize, seed: u64) -> AllocationProblem {
    let mut rng = rng::stream(seed, Purpose::Synthetic, n as u64);
    let pairs: Vec<(usize, usize, f64)> = (0..n)
        .map(|_| {
            let i = rng.random_range(0..pool);
            let j = rng.random_range(0..pool);
            let p: f64 = rng.random();
            (i, j, p)
        })
        .collect();

    let mut producer_index = vec![usize::MAX; pool];
    let mut consumer_index = vec![usize::MAX; pool];
    let (mut producers, mut consumers) = (Vec::new(), Vec::new());
    for &(i, j, _) in &pairs {
        if producer_index[i] == usize::MAX {
            producer_index[i] = 0;
        }
        if consumer_index[j] == usize::MAX {
            consumer_index[j] = 0;
        }
    }
    for k in 0..pool {
        if producer_index[k] != usize::MAX {
            producer_index[k] = producers.len();
            producers.push(NodeId(k as u32));
        }
        if consumer_index[k] != usize::MAX {
            consumer_index[k] = consumers.len();
            consumers.push(NodeId(k as u32));
        }
    }
    let targets: Vec<f64> = producers.iter().map(|_| rng.random::<f64>() * n as f64 / 100.0).collect();

    let mut base_sum = vec![0.0; consumers.len()];
    let vars: Vec<AllocVar> = pairs
        .iter()
        .map(|&(i, j, p)| {
            base_sum[consumer_index[j]] += p;
            AllocVar {
                producer: producer_index[i],
                consumer: consumer_index[j],
                coef: 1.0,
                lower: 0.1 * p,
                upper: 10.0 * p,
                init: p,
                edge: None,
            }
        })
        .collect();
    AllocationProblem {
        producers,
        targets,
        consumers,
        consumer_bounds: base_sum.iter().map(|s| (0.2 * s, 5.0 * s)).collect(),
        vars,
    }
}
