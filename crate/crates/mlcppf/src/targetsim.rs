//! Training-data construction that simulates target areas: each target's
//! departure flows are folded into its closest known area, and arrivals
//! mirror the rule on the column side, so both fitting passes see a
//! consistent ground truth.

use crate::core::{AreaCatalog, FlowTensor};
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// How target flows were folded into known areas.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReassignmentPlan {
    /// Target area indices, ascending.
    pub targets: Vec<usize>,
    /// For each target (same order), the closest known area that absorbed
    /// its flows.
    pub receivers: Vec<usize>,
}

impl ReassignmentPlan {
    /// Map every area to itself (known) or to its receiver (target).
    pub fn area_map(&self, n: usize) -> Vec<usize> {
        let mut map: Vec<usize> = (0..n).collect();
        for (t, r) in self.targets.iter().zip(&self.receivers) {
            map[*t] = *r;
        }
        map
    }
}

/// Fold every target area's departures into its closest known area's row
/// and its arrivals into the same area's column (minimal geographic
/// distance, ties to the lower index). Equivalent to re-labelling each
/// trip endpoint at a target with its receiver, so total flow is
/// conserved and target rows and columns end up zero.
pub fn reassign(
    flows: &FlowTensor,
    catalog: &AreaCatalog,
    geo: &DMatrix<f64>,
) -> Result<(FlowTensor, ReassignmentPlan)> {
    let n = catalog.n();
    if geo.nrows() != n || geo.ncols() != n {
        return Err(Error::Dimension(format!(
            "geo distance matrix is {}x{}, expected {n}x{n}",
            geo.nrows(),
            geo.ncols()
        )));
    }
    let known = catalog.known_indices();
    if known.is_empty() {
        return Err(Error::InvalidArgument("reassignment needs at least one known area".into()));
    }
    let targets = catalog.target_indices();
    let receivers: Vec<usize> = targets
        .iter()
        .map(|&t| {
            known
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    geo[(t, a)]
                        .partial_cmp(&geo[(t, b)])
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.cmp(&b))
                })
                .expect("known set is non-empty")
        })
        .collect();
    let plan = ReassignmentPlan { targets, receivers };
    let map = plan.area_map(n);

    let matrices = flows
        .matrices
        .iter()
        .map(|f| {
            let mut out = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    out[(map[i], map[j])] += f[(i, j)];
                }
            }
            out
        })
        .collect();

    Ok((FlowTensor::new(flows.period, matrices), plan))
}
