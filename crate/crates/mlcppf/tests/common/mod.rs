//! Shared fixtures: random problem instances for oracle-based tests.

use mlcppf::core::{build_mask, AreaCatalog, FlowTensor, ObservationMask, Period, ViewSet};
use mlcppf::neighborhood::{build_indicator, NeighborModel, SimilarityModel};
use mlcppf::solver::{ModelState, Problem};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct RandomInstance {
    pub catalog: AreaCatalog,
    pub flows: FlowTensor,
    pub views: ViewSet,
    pub mask: ObservationMask,
    pub nbr: NeighborModel,
    pub lambda: f64,
    pub problem: Problem,
    pub state: ModelState,
}

/// Build a random but valid instance: at least one target area, a k-NN
/// pattern derived from a random similarity, non-negative flows, and a
/// generic (C, W) state to probe gradients away from stationary points.
pub fn random_instance(
    n: usize,
    days: usize,
    n_views: usize,
    lambda: f64,
    seed: u64,
) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_targets = (n / 4).max(1);
    let mut known = vec![true; n];
    // Spread targets deterministically but seed-dependently.
    for t in 0..n_targets {
        known[(rng.gen_range(0..n) + t) % n] = false;
    }
    if known.iter().filter(|&&b| b).count() < 3 {
        known = vec![true; n];
        known[0] = false;
    }
    let ids = (0..n).map(|i| format!("A{i:03}")).collect();
    let coords = (0..n)
        .map(|_| (rng.gen_range(-34.0..-33.8), rng.gen_range(151.0..151.3)))
        .collect();
    let catalog = AreaCatalog::new(ids, coords, known);
    let mask = build_mask(&catalog);

    let s = DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 } else { rng.gen_range(0.0..2.0) });
    let sim = SimilarityModel {
        geo_dist: DMatrix::zeros(n, n),
        feat_dist: DMatrix::zeros(n, n),
        s,
    };
    let k = 2.min(catalog.known_count() - 1).max(1);
    let nbr = build_indicator(&sim, &catalog, k).expect("valid k");

    let matrices: Vec<DMatrix<f64>> =
        (0..days).map(|_| DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.0..20.0))).collect();
    let flows = FlowTensor::new(Period::MorningRush, matrices);

    let views = if n_views == 0 {
        ViewSet::empty()
    } else {
        let names = (0..n_views).map(|v| format!("v{v}")).collect();
        let mats = (0..n_views)
            .map(|_| {
                let cols = rng.gen_range(2..5);
                DMatrix::from_fn(n, cols, |_, _| rng.gen_range(-3.0..3.0))
            })
            .collect();
        ViewSet::new(names, mats)
    };

    let problem =
        Problem::new(flows.clone(), nbr.clone(), &views, mask.clone(), lambda).expect("valid");
    let w0 = DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.0..2.0));
    let mut state = problem.initial_state(&w0).expect("initial state");
    // Nudge C off the pseudo-inverse solution so gradients are generic.
    let c_jitter = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.3..0.3));
    state.c += c_jitter;

    RandomInstance { catalog, flows, views, mask, nbr, lambda, problem, state }
}
