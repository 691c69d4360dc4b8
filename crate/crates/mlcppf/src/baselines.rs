//! Reference predictors: latent-similarity k-nearest-neighbor averaging
//! and non-negative matrix factorization over the flow matrix
//! concatenated with the statistical views.

use crate::core::{AreaCatalog, ObservationMask, ViewSet};
use crate::error::{Error, Result};
use crate::neighborhood::SimilarityModel;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A baseline's prediction at unobserved entries; observed positions are
/// zero and all values are non-negative.
#[derive(Debug, Clone)]
pub struct BaselinePrediction {
    pub method: &'static str,
    pub prediction: DMatrix<f64>,
}

/// Pick the k most similar known areas to `i` (self excluded, ties to the
/// lower index).
fn top_k_known(
    sim: &SimilarityModel,
    known: &[bool],
    i: usize,
    k: usize,
) -> Vec<usize> {
    let n = known.len();
    let mut cand: Vec<usize> = (0..n).filter(|&j| known[j] && j != i).collect();
    cand.sort_by(|&a, &b| {
        sim.s[(i, b)].partial_cmp(&sim.s[(i, a)]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    cand.truncate(k);
    cand
}

/// Latent-similarity k-NN: a target row is estimated as the entry-wise
/// mean of the k most similar known areas' observed rows; target columns
/// analogously from the column side. The doubly-unobserved target block
/// averages the two estimates.
pub fn ls_knn_predict(
    f_d: &DMatrix<f64>,
    sim: &SimilarityModel,
    catalog: &AreaCatalog,
    mask: &ObservationMask,
    k: usize,
) -> Result<BaselinePrediction> {
    let n = catalog.n();
    let known = catalog.known();
    let known_count = catalog.known_count();
    if k == 0 || k > known_count.saturating_sub(1) {
        return Err(Error::NeighborhoodTooLarge { k, known: known_count });
    }
    let observed = f_d.component_mul(&mask.y);

    let mut row_side = DMatrix::zeros(n, n);
    let mut col_side = DMatrix::zeros(n, n);
    for i in 0..n {
        if known[i] {
            continue;
        }
        let nbrs = top_k_known(sim, known, i, k);
        let inv_k = 1.0 / nbrs.len() as f64;
        for &j in &nbrs {
            for c in 0..n {
                row_side[(i, c)] += observed[(j, c)] * inv_k;
            }
            for r in 0..n {
                col_side[(r, i)] += observed[(r, j)] * inv_k;
            }
        }
    }

    let prediction = DMatrix::from_fn(n, n, |i, j| {
        match (known[i], known[j]) {
            (true, true) => 0.0,
            (false, true) => row_side[(i, j)],
            (true, false) => col_side[(i, j)],
            (false, false) => 0.5 * (row_side[(i, j)] + col_side[(i, j)]),
        }
    });
    Ok(BaselinePrediction { method: "lsknn", prediction })
}

/// Options for the NMF baseline.
#[derive(Debug, Clone, Copy)]
pub struct NmfOptions {
    pub rank: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for NmfOptions {
    fn default() -> Self {
        NmfOptions { rank: 20, iters: 500, seed: 0 }
    }
}

/// Outcome of the masked factorization, including the per-iteration
/// objective (weighted squared reconstruction error) and the per-column
/// shifts applied to make view features non-negative.
#[derive(Debug, Clone)]
pub struct NmfFit {
    pub prediction: BaselinePrediction,
    pub objective: Vec<f64>,
    pub view_column_offsets: Vec<f64>,
}

/// NMF on the concatenation [F_D | X_1 | ... | X_V] with unobserved flow
/// entries masked out of the objective (weighted multiplicative updates).
/// Negative view entries are shifted per-column to non-negative with the
/// offsets recorded. The prediction is U V restricted to unobserved flow
/// entries.
pub fn nmf_predict(
    f_d: &DMatrix<f64>,
    views: &ViewSet,
    mask: &ObservationMask,
    opts: &NmfOptions,
) -> Result<NmfFit> {
    let n = f_d.nrows();
    if opts.rank == 0 {
        return Err(Error::InvalidArgument("NMF rank must be >= 1".into()));
    }
    let total_cols = n + views.total_cols();

    // Assemble the concatenated matrix and its weight mask.
    let mut m = DMatrix::zeros(n, total_cols);
    let mut weight = DMatrix::zeros(n, total_cols);
    for j in 0..n {
        for i in 0..n {
            m[(i, j)] = f_d[(i, j)] * mask.y[(i, j)];
            weight[(i, j)] = mask.y[(i, j)];
        }
    }
    let mut offsets = Vec::new();
    let mut col = n;
    for x in &views.views {
        if x.nrows() != n {
            return Err(Error::Dimension(format!(
                "view has {} rows, expected {n}",
                x.nrows()
            )));
        }
        for c in 0..x.ncols() {
            let min = x.column(c).min();
            let offset = if min < 0.0 { -min } else { 0.0 };
            offsets.push(offset);
            for i in 0..n {
                m[(i, col)] = x[(i, c)] + offset;
                weight[(i, col)] = 1.0;
            }
            col += 1;
        }
    }

    // Positive random initialization keeps the multiplicative updates in
    // the non-negative orthant.
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut u = DMatrix::from_fn(n, opts.rank, |_, _| rng.gen_range(0.1..1.0));
    let mut v = DMatrix::from_fn(opts.rank, total_cols, |_, _| rng.gen_range(0.1..1.0));

    let wm = weight.component_mul(&m);
    let objective_at = |u: &DMatrix<f64>, v: &DMatrix<f64>| {
        let r = u * v;
        let mut acc = 0.0;
        for j in 0..total_cols {
            for i in 0..n {
                let d = m[(i, j)] - r[(i, j)];
                acc += weight[(i, j)] * d * d;
            }
        }
        acc
    };

    let mut objective = Vec::with_capacity(opts.iters + 1);
    objective.push(objective_at(&u, &v));
    const GUARD: f64 = 1e-12;
    for _ in 0..opts.iters {
        // U <- U (*) ((W (*) M) V^T) / ((W (*) (U V)) V^T)
        let wr = weight.component_mul(&(&u * &v));
        let num = &wm * v.transpose();
        let den = &wr * v.transpose();
        u.zip_zip_apply(&num, &den, |uv, nv, dv| *uv *= nv / dv.max(GUARD));
        // V <- V (*) (U^T (W (*) M)) / (U^T (W (*) (U V)))
        let wr = weight.component_mul(&(&u * &v));
        let num = u.transpose() * &wm;
        let den = u.transpose() * &wr;
        v.zip_zip_apply(&num, &den, |vv, nv, dv| *vv *= nv / dv.max(GUARD));
        objective.push(objective_at(&u, &v));
    }

    let recon = &u * &v;
    let prediction = DMatrix::from_fn(n, n, |i, j| {
        if mask.y[(i, j)] == 0.0 {
            recon[(i, j)].max(0.0)
        } else {
            0.0
        }
    });

    Ok(NmfFit {
        prediction: BaselinePrediction { method: "nmf", prediction },
        objective,
        view_column_offsets: offsets,
    })
}
