//! Metrics and the masking-based experiment protocols: per-period method
//! comparison, missing-ratio sweeps, and (k, lambda) parameter grids.

use crate::baselines::{ls_knn_predict, nmf_predict, NmfOptions};
use crate::core::{AreaCatalog, FlowTensor, Period, SolverConfig, ViewSet, build_mask};
use crate::datagen::{derive_seed, SyntheticCity};
use crate::error::{Error, Result};
use crate::neighborhood::{build_indicator, geo_distances, similarity, similarity_geo_only,
    feature_distances};
use crate::solver::fit_two_sided;
use crate::targetsim::reassign;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Prediction methods the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    MlcPpf,
    LsKnn,
    Nmf,
}

impl Method {
    pub fn token(self) -> &'static str {
        match self {
            Method::MlcPpf => "mlc",
            Method::LsKnn => "lsknn",
            Method::Nmf => "nmf",
        }
    }

    pub fn from_token(s: &str) -> Option<Method> {
        match s {
            "mlc" => Some(Method::MlcPpf),
            "lsknn" => Some(Method::LsKnn),
            "nmf" => Some(Method::Nmf),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Ground-truth dataset handed to the harness: every area observed.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub catalog: AreaCatalog,
    pub flows: Vec<FlowTensor>,
    pub views: ViewSet,
}

impl Dataset {
    pub fn flows_for(&self, period: Period) -> Option<&FlowTensor> {
        self.flows.iter().find(|f| f.period == period)
    }

    pub fn periods(&self) -> Vec<Period> {
        self.flows.iter().map(|f| f.period).collect()
    }
}

impl From<SyntheticCity> for Dataset {
    fn from(city: SyntheticCity) -> Dataset {
        Dataset { catalog: city.catalog, flows: city.flows, views: city.views }
    }
}

/// Mean absolute error over the selected entries.
pub fn mae(pred: &DMatrix<f64>, truth: &DMatrix<f64>, entries: &[(usize, usize)]) -> Result<f64> {
    if entries.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let total: f64 =
        entries.iter().map(|&(i, j)| (truth[(i, j)] - pred[(i, j)]).abs()).sum();
    Ok(total / entries.len() as f64)
}

/// Root-mean-square error normalized by the ground-truth range over the
/// selected entries, as a percentage.
pub fn nrmse(pred: &DMatrix<f64>, truth: &DMatrix<f64>, entries: &[(usize, usize)]) -> Result<f64> {
    if entries.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sq = 0.0;
    for &(i, j) in entries {
        let t = truth[(i, j)];
        min = min.min(t);
        max = max.max(t);
        let d = t - pred[(i, j)];
        sq += d * d;
    }
    let nval = max - min;
    if nval <= 0.0 {
        return Err(Error::ZeroRange);
    }
    Ok(100.0 / nval * (sq / entries.len() as f64).sqrt())
}

/// Entries scored in an experiment: the union of target rows and target
/// columns, optionally without the doubly-unobserved target block.
pub fn evaluation_entries(
    catalog: &AreaCatalog,
    include_target_block: bool,
) -> Vec<(usize, usize)> {
    let n = catalog.n();
    let known = catalog.known();
    let mut entries = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let unobserved = !known[i] || !known[j];
            if !unobserved {
                continue;
            }
            if !include_target_block && !known[i] && !known[j] {
                continue;
            }
            entries.push((i, j));
        }
    }
    entries
}

/// Harness configuration shared across repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub solver: SolverConfig,
    /// Neighborhood size of the LS-KNN baseline.
    pub lsknn_k: usize,
    pub nmf_rank: usize,
    pub nmf_iters: usize,
    pub repetitions: usize,
    /// Score the target x target block too (both endpoints unobserved).
    pub include_target_block: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            solver: SolverConfig::default(),
            lsknn_k: 4,
            nmf_rank: 20,
            nmf_iters: 500,
            repetitions: 20,
            include_target_block: true,
        }
    }
}

/// One repetition's scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepEval {
    pub seed: u64,
    pub mae: f64,
    pub nrmse: f64,
}

/// Aggregated scores for one (method, period, ratio) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub method: Method,
    pub period: Period,
    pub ratio: f64,
    pub reps: Vec<RepEval>,
    /// Arithmetic mean over repetitions.
    pub mae: f64,
    pub nrmse: f64,
}

/// Sample `count` distinct target areas with the repetition RNG.
fn sample_targets(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.gen_range(0..=i));
    }
    let mut targets = idx[..count].to_vec();
    targets.sort_unstable();
    targets
}

struct RepOutcome {
    seed: u64,
    per_method: Vec<(Method, f64, f64)>,
}

/// Evaluate every method on one sampled target set.
fn run_repetition(
    dataset: &Dataset,
    period: Period,
    ratio: f64,
    rep: usize,
    methods: &[Method],
    cfg: &ExperimentConfig,
) -> Result<RepOutcome> {
    let n = dataset.catalog.n();
    let rep_seed = derive_seed(cfg.solver.seed, &[period as u64, ratio.to_bits(), rep as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);

    let count = ((ratio * n as f64).round() as usize).clamp(1, n - 2);
    let targets = sample_targets(n, count, &mut rng);
    let known_count = n - count;
    let needed = cfg.solver.k.max(if methods.contains(&Method::LsKnn) { cfg.lsknn_k } else { 0 });
    if known_count <= needed {
        return Err(Error::NeighborhoodTooLarge { k: needed, known: known_count });
    }

    let catalog = dataset.catalog.with_targets(&targets);
    let truth = dataset
        .flows_for(period)
        .ok_or_else(|| Error::InvalidArgument(format!("no flows for period {period}")))?;
    let geo = geo_distances(&catalog);
    let (training, _plan) = reassign(truth, &catalog, &geo)?;
    let mask = build_mask(&catalog);
    let sim = if dataset.views.is_empty() {
        similarity_geo_only(&geo)?
    } else {
        let feat = feature_distances(&dataset.views)?;
        similarity(&geo, &feat)?
    };
    let entries = evaluation_entries(&catalog, cfg.include_target_block);
    let truth_d = truth.last_day();

    let mut per_method = Vec::with_capacity(methods.len());
    for &method in methods {
        let prediction = match method {
            Method::MlcPpf => {
                let nbr = build_indicator(&sim, &catalog, cfg.solver.k)?;
                let two = fit_two_sided(&training, &nbr, &sim.s, &dataset.views, &mask, &cfg.solver)
                    .map_err(|e| {
                        Error::InvalidArgument(format!(
                            "mlc fit failed (period {period}, ratio {ratio}, seed {rep_seed}): {e}"
                        ))
                    })?;
                two.prediction
            }
            Method::LsKnn => {
                ls_knn_predict(training.last_day(), &sim, &catalog, &mask, cfg.lsknn_k)?.prediction
            }
            Method::Nmf => {
                let opts = NmfOptions {
                    rank: cfg.nmf_rank,
                    iters: cfg.nmf_iters,
                    seed: derive_seed(rep_seed, &[0x4E4D46]),
                };
                nmf_predict(training.last_day(), &dataset.views, &mask, &opts)?
                    .prediction
                    .prediction
            }
        };
        let m = mae(&prediction, truth_d, &entries)?;
        let r = nrmse(&prediction, truth_d, &entries)?;
        per_method.push((method, m, r));
    }
    Ok(RepOutcome { seed: rep_seed, per_method })
}

/// Run the full experiment grid. Repetitions execute in parallel; results
/// are keyed (method, period, ratio) and ordered deterministically.
pub fn run_experiment(
    dataset: &Dataset,
    methods: &[Method],
    periods: &[Period],
    ratios: &[f64],
    cfg: &ExperimentConfig,
) -> Result<Vec<EvalResult>> {
    if methods.is_empty() || periods.is_empty() || ratios.is_empty() {
        return Err(Error::InvalidArgument("methods, periods and ratios must be non-empty".into()));
    }
    for &r in ratios {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::InvalidArgument(format!("ratio must lie in (0, 1), got {r}")));
        }
    }
    if cfg.repetitions == 0 {
        return Err(Error::InvalidArgument("need at least one repetition".into()));
    }

    let mut jobs = Vec::new();
    for &period in periods {
        for &ratio in ratios {
            for rep in 0..cfg.repetitions {
                jobs.push((period, ratio, rep));
            }
        }
    }
    let outcomes: Vec<(Period, f64, RepOutcome)> = jobs
        .par_iter()
        .map(|&(period, ratio, rep)| {
            run_repetition(dataset, period, ratio, rep, methods, cfg)
                .map(|o| (period, ratio, o))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut results = Vec::new();
    for &period in periods {
        for &ratio in ratios {
            for &method in methods {
                let reps: Vec<RepEval> = outcomes
                    .iter()
                    .filter(|(p, r, _)| *p == period && *r == ratio)
                    .map(|(_, _, o)| {
                        let (_, m, n) = o
                            .per_method
                            .iter()
                            .find(|(mth, _, _)| *mth == method)
                            .expect("method evaluated");
                        RepEval { seed: o.seed, mae: *m, nrmse: *n }
                    })
                    .collect();
                let mean_mae = reps.iter().map(|r| r.mae).sum::<f64>() / reps.len() as f64;
                let mean_nrmse = reps.iter().map(|r| r.nrmse).sum::<f64>() / reps.len() as f64;
                results.push(EvalResult {
                    method,
                    period,
                    ratio,
                    reps,
                    mae: mean_mae,
                    nrmse: mean_nrmse,
                });
            }
        }
    }
    Ok(results)
}

/// One cell of the (k, lambda) sensitivity grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub k: usize,
    pub lambda: f64,
    pub mae: f64,
    pub nrmse: f64,
}

/// Evaluate the solver over the Cartesian product of the two grids at a
/// fixed 20% target ratio, emitting plot-ready rows.
pub fn sweep_parameters(
    dataset: &Dataset,
    k_grid: &[usize],
    lambda_grid: &[f64],
    period: Period,
    cfg: &ExperimentConfig,
) -> Result<Vec<SweepCell>> {
    if k_grid.is_empty() || lambda_grid.is_empty() {
        return Err(Error::InvalidArgument("parameter grids must be non-empty".into()));
    }
    const SWEEP_RATIO: f64 = 0.2;
    let mut cells = Vec::with_capacity(k_grid.len() * lambda_grid.len());
    for &k in k_grid {
        for &lambda in lambda_grid {
            let cell_cfg = ExperimentConfig {
                solver: SolverConfig { k, lambda, ..cfg.solver.clone() },
                ..cfg.clone()
            };
            let results = run_experiment(
                dataset,
                &[Method::MlcPpf],
                &[period],
                &[SWEEP_RATIO],
                &cell_cfg,
            )?;
            let r = &results[0];
            cells.push(SweepCell { k, lambda, mae: r.mae, nrmse: r.nrmse });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mae_perfect_prediction_is_zero() {
        let t = DMatrix::from_row_slice(1, 2, &[10.0, 20.0]);
        let entries = vec![(0, 0), (0, 1)];
        assert_eq!(mae(&t, &t, &entries).unwrap(), 0.0);
    }

    #[test]
    fn mae_hand_arithmetic() {
        let truth = DMatrix::from_row_slice(1, 2, &[10.0, 20.0]);
        let pred = DMatrix::from_row_slice(1, 2, &[12.0, 16.0]);
        let entries = vec![(0, 0), (0, 1)];
        assert_eq!(mae(&pred, &truth, &entries).unwrap(), 3.0);
    }

    #[test]
    fn mae_shifts_by_constant_offset() {
        let truth = DMatrix::from_row_slice(1, 3, &[10.0, 20.0, 30.0]);
        let pred = DMatrix::from_row_slice(1, 3, &[11.0, 22.0, 33.0]);
        let entries = vec![(0, 0), (0, 1), (0, 2)];
        let base = mae(&pred, &truth, &entries).unwrap();
        let shifted = pred.map(|v| v + 5.0);
        // All residuals stay positive, so the MAE grows by exactly 5.
        assert_relative_eq!(mae(&shifted, &truth, &entries).unwrap(), base + 5.0, epsilon = 1e-12);
    }

    #[test]
    fn mae_rejects_empty_entry_set() {
        let t = DMatrix::zeros(2, 2);
        assert!(matches!(mae(&t, &t, &[]), Err(Error::EmptyEvaluation)));
    }

    #[test]
    fn nrmse_hand_arithmetic() {
        let truth = DMatrix::from_row_slice(1, 2, &[0.0, 100.0]);
        let pred = DMatrix::from_row_slice(1, 2, &[10.0, 90.0]);
        let entries = vec![(0, 0), (0, 1)];
        // RMSE = 10, nval = 100 -> 10 percent.
        assert_relative_eq!(nrmse(&pred, &truth, &entries).unwrap(), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn nrmse_scale_invariant() {
        let truth = DMatrix::from_row_slice(1, 3, &[5.0, 50.0, 20.0]);
        let pred = DMatrix::from_row_slice(1, 3, &[7.0, 45.0, 26.0]);
        let entries = vec![(0, 0), (0, 1), (0, 2)];
        let a = nrmse(&pred, &truth, &entries).unwrap();
        let b = nrmse(&pred.map(|v| 2.0 * v), &truth.map(|v| 2.0 * v), &entries).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn nrmse_rejects_constant_truth() {
        let truth = DMatrix::from_element(1, 2, 5.0);
        let pred = DMatrix::zeros(1, 2);
        assert!(matches!(
            nrmse(&pred, &truth, &[(0, 0), (0, 1)]),
            Err(Error::ZeroRange)
        ));
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let truth = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let pred = DMatrix::from_row_slice(2, 2, &[1.5, 1.0, 3.5, 5.0]);
        let fwd = vec![(0, 0), (0, 1), (1, 0), (1, 1)];
        let rev: Vec<_> = fwd.iter().rev().copied().collect();
        assert_relative_eq!(
            mae(&pred, &truth, &fwd).unwrap(),
            mae(&pred, &truth, &rev).unwrap(),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            nrmse(&pred, &truth, &fwd).unwrap(),
            nrmse(&pred, &truth, &rev).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn evaluation_entries_cover_target_cross_only() {
        let ids = (0..4).map(|i| format!("A{i}")).collect();
        let coords = vec![(-33.8, 151.0); 4];
        let catalog = AreaCatalog::new(ids, coords, vec![true, false, true, true]);
        let with_block = evaluation_entries(&catalog, true);
        // Row 1 (4 entries) + column 1 (4 entries) - the (1,1) duplicate.
        assert_eq!(with_block.len(), 7);
        let without_block = evaluation_entries(&catalog, false);
        assert_eq!(without_block.len(), 6);
        assert!(!without_block.contains(&(1, 1)));
        for &(i, j) in &with_block {
            assert!(i == 1 || j == 1);
        }
    }

    #[test]
    fn run_experiment_rejects_degenerate_ratio() {
        let ids = (0..6).map(|i| format!("A{i}")).collect();
        let coords = (0..6).map(|i| (-33.8, 151.0 + 0.01 * i as f64)).collect();
        let catalog = AreaCatalog::new(ids, coords, vec![true; 6]);
        let flows = FlowTensor::new(Period::MorningRush, vec![DMatrix::from_element(6, 6, 1.0)]);
        let dataset = Dataset { catalog, flows: vec![flows], views: ViewSet::empty() };
        let cfg = ExperimentConfig::default();
        assert!(run_experiment(&dataset, &[Method::LsKnn], &[Period::MorningRush], &[0.0], &cfg)
            .is_err());
        assert!(run_experiment(&dataset, &[Method::LsKnn], &[Period::MorningRush], &[1.0], &cfg)
            .is_err());
    }
}
