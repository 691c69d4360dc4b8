//! Domain data model shared by all modules: areas, flows, masks, views,
//! and solver configuration.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Time period a flow tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Period {
    MorningRush,
    AfternoonRush,
    NonRush,
}

impl Period {
    /// All periods in canonical order.
    pub const ALL: [Period; 3] = [Period::MorningRush, Period::AfternoonRush, Period::NonRush];

    /// Short token used in file names and CSV output.
    pub fn token(self) -> &'static str {
        match self {
            Period::MorningRush => "morning",
            Period::AfternoonRush => "afternoon",
            Period::NonRush => "nonrush",
        }
    }

    /// Parse a token produced by [`Period::token`].
    pub fn from_token(s: &str) -> Option<Period> {
        match s {
            "morning" => Some(Period::MorningRush),
            "afternoon" => Some(Period::AfternoonRush),
            "nonrush" => Some(Period::NonRush),
            _ => None,
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// The set of city areas: identifiers, coordinates, and which areas have
/// an operating station (known) versus which are prediction targets.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaCatalog {
    ids: Vec<String>,
    coords: Vec<(f64, f64)>,
    known: Vec<bool>,
}

impl AreaCatalog {
    /// Build a catalog. `coords` are (latitude, longitude) in degrees.
    pub fn new(ids: Vec<String>, coords: Vec<(f64, f64)>, known: Vec<bool>) -> Self {
        assert_eq!(ids.len(), coords.len(), "ids/coords length mismatch");
        assert_eq!(ids.len(), known.len(), "ids/known length mismatch");
        Self { ids, coords, known }
    }

    /// Number of areas.
    pub fn n(&self) -> usize {
        self.ids.len()
    }

    /// Area identifiers, in index order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// (latitude, longitude) pairs in degrees.
    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    /// Per-area known flags.
    pub fn known(&self) -> &[bool] {
        &self.known
    }

    /// Indices of known areas, ascending.
    pub fn known_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.known[i]).collect()
    }

    /// Indices of target areas, ascending.
    pub fn target_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.known[i]).collect()
    }

    /// Number of known areas.
    pub fn known_count(&self) -> usize {
        self.known.iter().filter(|&&b| b).count()
    }

    /// Copy of this catalog with the given areas re-labelled as targets
    /// and all others known.
    pub fn with_targets(&self, targets: &[usize]) -> AreaCatalog {
        let mut known = vec![true; self.n()];
        for &t in targets {
            known[t] = false;
        }
        AreaCatalog { ids: self.ids.clone(), coords: self.coords.clone(), known }
    }
}

/// A stack of daily n x n origin-destination matrices for one time period.
/// Entries are real-valued so that iterative fill-in can store fractional
/// predictions; ingestion coerces integer counts to reals.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTensor {
    pub period: Period,
    pub matrices: Vec<DMatrix<f64>>,
}

impl FlowTensor {
    pub fn new(period: Period, matrices: Vec<DMatrix<f64>>) -> Self {
        Self { period, matrices }
    }

    /// Number of days D.
    pub fn days(&self) -> usize {
        self.matrices.len()
    }

    /// Area count, taken from the first day (0 when empty).
    pub fn n(&self) -> usize {
        self.matrices.first().map_or(0, |m| m.nrows())
    }

    /// The day-D matrix (the prediction day).
    pub fn last_day(&self) -> &DMatrix<f64> {
        self.matrices.last().expect("flow tensor has no days")
    }

    /// Tensor with every daily matrix transposed, for the arrival-side pass.
    pub fn transposed(&self) -> FlowTensor {
        FlowTensor {
            period: self.period,
            matrices: self.matrices.iter().map(|m| m.transpose()).collect(),
        }
    }
}

/// Indicator of observed entries: `y[(i, j)] = 1` iff both area i and
/// area j are known. Rows and columns of target areas are entirely zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMask {
    pub y: DMatrix<f64>,
}

impl ObservationMask {
    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.y[(i, j)] != 0.0
    }

    /// Mask for the transposed problem. Knownness is symmetric so this
    /// equals the original, but the transpose is taken for generality.
    pub fn transposed(&self) -> ObservationMask {
        ObservationMask { y: self.y.transpose() }
    }
}

/// Y(i, j) = known(i) AND known(j).
pub fn build_mask(catalog: &AreaCatalog) -> ObservationMask {
    let n = catalog.n();
    let known = catalog.known();
    let y = DMatrix::from_fn(n, n, |i, j| if known[i] && known[j] { 1.0 } else { 0.0 });
    ObservationMask { y }
}

/// Multi-view area feature matrices. Each view has one row per area; an
/// empty view set disables the cross-domain guidance term.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ViewSet {
    pub names: Vec<String>,
    pub views: Vec<DMatrix<f64>>,
}

impl ViewSet {
    pub fn new(names: Vec<String>, views: Vec<DMatrix<f64>>) -> Self {
        assert_eq!(names.len(), views.len(), "names/views length mismatch");
        Self { names, views }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Number of views V.
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// Total feature column count across views.
    pub fn total_cols(&self) -> usize {
        self.views.iter().map(|v| v.ncols()).sum()
    }
}

/// Solver hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Neighborhood size for the indicator matrix H.
    pub k: usize,
    /// Cross-domain guidance weight.
    pub lambda: f64,
    /// Normalized-gradient step size.
    pub alpha: f64,
    /// Maximum number of iterations.
    pub max_iters: usize,
    /// Relative-loss stopping tolerance.
    pub epsilon: f64,
    /// Base RNG seed for anything stochastic downstream.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            k: 2,
            lambda: 1e-1,
            alpha: 1e-2,
            max_iters: 5000,
            epsilon: 1e-4,
            seed: 0,
        }
    }
}

/// One invariant violation found by [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    TooFewAreas { n: usize },
    DuplicateId { id: String },
    NoKnownArea,
    NonFiniteCoordinate { area: usize },
    FlowDimension { day: usize, rows: usize, cols: usize, expected: usize },
    NegativeFlow { day: usize, row: usize, col: usize, value: f64 },
    NonFiniteFlow { day: usize, row: usize, col: usize },
    ViewRowCount { view: usize, rows: usize, expected: usize },
    NonFiniteView { view: usize, row: usize, col: usize },
    NeighborhoodTooLarge { k: usize, known: usize },
    NonFiniteConfig { field: &'static str },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewAreas { n } => write!(f, "need at least 2 areas, got {n}"),
            Violation::DuplicateId { id } => write!(f, "duplicate area id {id:?}"),
            Violation::NoKnownArea => write!(f, "no known areas in catalog"),
            Violation::NonFiniteCoordinate { area } => {
                write!(f, "area {area} has a non-finite coordinate")
            }
            Violation::FlowDimension { day, rows, cols, expected } => write!(
                f,
                "day {day} flow matrix is {rows}x{cols}, expected {expected}x{expected}"
            ),
            Violation::NegativeFlow { day, row, col, value } => {
                write!(f, "negative flow {value} at day {day} entry ({row}, {col})")
            }
            Violation::NonFiniteFlow { day, row, col } => {
                write!(f, "non-finite flow at day {day} entry ({row}, {col})")
            }
            Violation::ViewRowCount { view, rows, expected } => {
                write!(f, "view {view} has {rows} rows, expected {expected}")
            }
            Violation::NonFiniteView { view, row, col } => {
                write!(f, "non-finite feature in view {view} at ({row}, {col})")
            }
            Violation::NeighborhoodTooLarge { k, known } => {
                write!(f, "k = {k} but only {known} known areas (need k < {known})")
            }
            Violation::NonFiniteConfig { field } => {
                write!(f, "solver config field {field} is not finite")
            }
        }
    }
}

/// Outcome of [`validate`]: empty iff every invariant holds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "- {v}")?;
        }
        Ok(())
    }
}

/// Check every dataset invariant and list each violation found. Callers
/// decide whether to abort. Pass the solver config to also check that k
/// fits the known-area pool.
pub fn validate(
    catalog: &AreaCatalog,
    flows: &FlowTensor,
    views: &ViewSet,
    cfg: Option<&SolverConfig>,
) -> ValidationReport {
    let mut violations = Vec::new();
    let n = catalog.n();

    if n < 2 {
        violations.push(Violation::TooFewAreas { n });
    }
    let mut seen = std::collections::HashSet::new();
    for id in catalog.ids() {
        if !seen.insert(id.as_str()) {
            violations.push(Violation::DuplicateId { id: id.clone() });
        }
    }
    if catalog.known_count() == 0 {
        violations.push(Violation::NoKnownArea);
    }
    for (i, &(lat, lon)) in catalog.coords().iter().enumerate() {
        if !lat.is_finite() || !lon.is_finite() {
            violations.push(Violation::NonFiniteCoordinate { area: i });
        }
    }

    for (d, m) in flows.matrices.iter().enumerate() {
        if m.nrows() != n || m.ncols() != n {
            violations.push(Violation::FlowDimension {
                day: d,
                rows: m.nrows(),
                cols: m.ncols(),
                expected: n,
            });
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                let v = m[(i, j)];
                if !v.is_finite() {
                    violations.push(Violation::NonFiniteFlow { day: d, row: i, col: j });
                } else if v < 0.0 {
                    violations.push(Violation::NegativeFlow { day: d, row: i, col: j, value: v });
                }
            }
        }
    }

    for (v_idx, x) in views.views.iter().enumerate() {
        if x.nrows() != n {
            violations.push(Violation::ViewRowCount { view: v_idx, rows: x.nrows(), expected: n });
            continue;
        }
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                if !x[(i, j)].is_finite() {
                    violations.push(Violation::NonFiniteView { view: v_idx, row: i, col: j });
                }
            }
        }
    }

    if let Some(cfg) = cfg {
        let known = catalog.known_count();
        if cfg.k >= known {
            violations.push(Violation::NeighborhoodTooLarge { k: cfg.k, known });
        }
        for (field, value) in
            [("lambda", cfg.lambda), ("alpha", cfg.alpha), ("epsilon", cfg.epsilon)]
        {
            if !value.is_finite() {
                violations.push(Violation::NonFiniteConfig { field });
            }
        }
    }

    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_catalog(n: usize, targets: &[usize]) -> AreaCatalog {
        let ids = (0..n).map(|i| format!("A{i:03}")).collect();
        let coords = (0..n).map(|i| (-33.8 - 0.01 * i as f64, 151.0 + 0.01 * i as f64)).collect();
        let mut known = vec![true; n];
        for &t in targets {
            known[t] = false;
        }
        AreaCatalog::new(ids, coords, known)
    }

    #[test]
    fn validate_accepts_consistent_dataset() {
        let catalog = small_catalog(5, &[]);
        let flows =
            FlowTensor::new(Period::MorningRush, vec![DMatrix::from_element(5, 5, 1.0); 2]);
        let report = validate(&catalog, &flows, &ViewSet::empty(), None);
        assert!(report.is_empty(), "unexpected violations: {report}");
    }

    #[test]
    fn validate_reports_negative_flow() {
        let catalog = small_catalog(5, &[]);
        let mut m = DMatrix::from_element(5, 5, 1.0);
        m[(2, 3)] = -3.0;
        let flows = FlowTensor::new(Period::MorningRush, vec![m]);
        let report = validate(&catalog, &flows, &ViewSet::empty(), None);
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(
            report.violations[0],
            Violation::NegativeFlow { day: 0, row: 2, col: 3, .. }
        ));
    }

    #[test]
    fn validate_reports_view_dimension_mismatch() {
        let catalog = small_catalog(5, &[]);
        let flows = FlowTensor::new(Period::MorningRush, vec![DMatrix::zeros(5, 5)]);
        let views = ViewSet::new(vec!["econ".into()], vec![DMatrix::zeros(4, 3)]);
        let report = validate(&catalog, &flows, &views, None);
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(
            report.violations[0],
            Violation::ViewRowCount { view: 0, rows: 4, expected: 5 }
        ));
    }

    #[test]
    fn validate_reports_oversized_k() {
        let catalog = small_catalog(5, &[3, 4]);
        let flows = FlowTensor::new(Period::MorningRush, vec![DMatrix::zeros(5, 5)]);
        let cfg = SolverConfig { k: 3, ..SolverConfig::default() };
        let report = validate(&catalog, &flows, &ViewSet::empty(), Some(&cfg));
        assert_eq!(
            report.violations,
            vec![Violation::NeighborhoodTooLarge { k: 3, known: 3 }]
        );
    }

    #[test]
    fn validate_is_pure() {
        let catalog = small_catalog(3, &[1]);
        let mut m = DMatrix::zeros(3, 3);
        m[(0, 1)] = f64::NAN;
        let flows = FlowTensor::new(Period::NonRush, vec![m]);
        let a = validate(&catalog, &flows, &ViewSet::empty(), None);
        let b = validate(&catalog, &flows, &ViewSet::empty(), None);
        assert_eq!(a.violations, b.violations);
    }

    #[test]
    fn build_mask_all_known_is_all_ones() {
        let catalog = small_catalog(3, &[]);
        let mask = build_mask(&catalog);
        assert!(mask.y.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn build_mask_zeroes_target_row_and_column() {
        let catalog = small_catalog(3, &[1]);
        let mask = build_mask(&catalog);
        for i in 0..3 {
            assert_eq!(mask.y[(1, i)], 0.0);
            assert_eq!(mask.y[(i, 1)], 0.0);
        }
        for &(i, j) in &[(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(mask.y[(i, j)], 1.0);
        }
    }

    #[test]
    fn build_mask_counts_match_target_list() {
        // 117 areas, 20% marked target: every target row/col zeroed, rest intact.
        let n = 117;
        let targets: Vec<usize> = (0..n).step_by(5).collect(); // 24 targets
        let catalog = small_catalog(n, &targets);
        let mask = build_mask(&catalog);
        let is_target = |i: usize| targets.contains(&i);
        let mut zero_rows = 0;
        for i in 0..n {
            let all_zero = (0..n).all(|j| mask.y[(i, j)] == 0.0);
            if all_zero {
                zero_rows += 1;
            }
            for j in 0..n {
                let expected = if is_target(i) || is_target(j) { 0.0 } else { 1.0 };
                assert_eq!(mask.y[(i, j)], expected, "mismatch at ({i}, {j})");
            }
        }
        assert_eq!(zero_rows, targets.len());
    }

    #[test]
    fn mask_pattern_is_symmetric() {
        let catalog = small_catalog(6, &[0, 4]);
        let mask = build_mask(&catalog);
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(mask.y[(i, j)], mask.y[(j, i)]);
            }
        }
    }
}
