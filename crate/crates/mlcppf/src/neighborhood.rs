//! Area similarities, k-nearest known-neighbor selection, and the
//! indicator matrix H with its initial weight matrix.
//!
//! The similarity of area j to area i combines two row-normalized
//! distances (geographic and feature-space):
//!
//! ```text
//! s(i, j) = 2 - geo(i, j) / max(geo(i, :)) - feat(i, j) / max(feat(i, :))
//! ```
//!
//! Both terms normalize per row, so S is not symmetric in general. With
//! no views available the feature term is dropped and the range shrinks
//! from [0, 2] to [0, 1].

use crate::core::{AreaCatalog, ViewSet};
use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Earth radius in kilometers for great-circle distances.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Pairwise distances and the combined similarity matrix.
#[derive(Debug, Clone)]
pub struct SimilarityModel {
    /// Great-circle distances in km; symmetric, zero diagonal.
    pub geo_dist: DMatrix<f64>,
    /// Euclidean distances over standardized features; symmetric, zero
    /// diagonal. Zero-sized (0 x 0) when no views were supplied.
    pub feat_dist: DMatrix<f64>,
    /// Combined similarity; rows normalized independently.
    pub s: DMatrix<f64>,
}

/// Neighbor selection derived from a [`SimilarityModel`]: for every area,
/// the k most similar known areas (self excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborModel {
    pub k: usize,
    /// Indicator matrix: `h[(i, j)] = 1` iff j is one of i's k nearest
    /// known neighbors. Every row sums to k; the diagonal is zero.
    pub h: DMatrix<f64>,
    /// Per-area neighbor indices, sorted by descending similarity with
    /// ties broken by lower area index.
    pub neighbors: Vec<Vec<usize>>,
}

fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Pairwise great-circle distances between all areas, in kilometers.
pub fn geo_distances(catalog: &AreaCatalog) -> DMatrix<f64> {
    let n = catalog.n();
    let coords = catalog.coords();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = haversine_km(coords[i], coords[j]);
            d[(i, j)] = dist;
            d[(j, i)] = dist;
        }
    }
    d
}

/// Per-column z-scores over all areas, views concatenated column-wise.
/// Columns with zero spread carry no information and standardize to zero.
fn standardized_features(views: &ViewSet) -> DMatrix<f64> {
    let n = views.views[0].nrows();
    let total = views.total_cols();
    let mut out = DMatrix::zeros(n, total);
    let mut col_off = 0;
    for x in &views.views {
        for c in 0..x.ncols() {
            let col = x.column(c);
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            for r in 0..n {
                out[(r, col_off)] = if sd > 1e-12 { (x[(r, c)] - mean) / sd } else { 0.0 };
            }
            col_off += 1;
        }
    }
    out
}

/// Euclidean distances between z-score-standardized concatenated view
/// rows. Requires at least one view; with none, callers fall back to a
/// geo-only similarity (see [`similarity_geo_only`]).
pub fn feature_distances(views: &ViewSet) -> Result<DMatrix<f64>> {
    if views.is_empty() {
        return Err(Error::InvalidArgument(
            "feature_distances needs at least one view; use the geo-only fallback".into(),
        ));
    }
    let z = standardized_features(views);
    let n = z.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = (z.row(i) - z.row(j)).norm();
            d[(i, j)] = dist;
            d[(j, i)] = dist;
        }
    }
    Ok(d)
}

fn row_max(m: &DMatrix<f64>, i: usize) -> f64 {
    m.row(i).iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
}

/// Combine geographic and feature distances into the similarity matrix.
/// Errors when a row of either matrix is entirely zero (normalization
/// undefined).
pub fn similarity(geo: &DMatrix<f64>, feat: &DMatrix<f64>) -> Result<SimilarityModel> {
    let n = geo.nrows();
    if feat.nrows() != n || feat.ncols() != n || geo.ncols() != n {
        return Err(Error::Dimension(format!(
            "similarity inputs must both be {n}x{n}, got geo {}x{} and feat {}x{}",
            geo.nrows(),
            geo.ncols(),
            feat.nrows(),
            feat.ncols()
        )));
    }
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        let gmax = row_max(geo, i);
        if gmax <= 0.0 {
            return Err(Error::ZeroDistanceRow { metric: "geographic", row: i });
        }
        let fmax = row_max(feat, i);
        if fmax <= 0.0 {
            return Err(Error::ZeroDistanceRow { metric: "feature", row: i });
        }
        for j in 0..n {
            s[(i, j)] = 2.0 - geo[(i, j)] / gmax - feat[(i, j)] / fmax;
        }
    }
    Ok(SimilarityModel { geo_dist: geo.clone(), feat_dist: feat.clone(), s })
}

/// Geo-only similarity for datasets without views: s(i, j) = 1 - geo(i, j)
/// / max(geo(i, :)), range [0, 1].
pub fn similarity_geo_only(geo: &DMatrix<f64>) -> Result<SimilarityModel> {
    let n = geo.nrows();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        let gmax = row_max(geo, i);
        if gmax <= 0.0 {
            return Err(Error::ZeroDistanceRow { metric: "geographic", row: i });
        }
        for j in 0..n {
            s[(i, j)] = 1.0 - geo[(i, j)] / gmax;
        }
    }
    Ok(SimilarityModel { geo_dist: geo.clone(), feat_dist: DMatrix::zeros(0, 0), s })
}

/// Build similarity from a catalog and its views, choosing the combined or
/// geo-only form depending on whether any views exist.
pub fn similarity_for(catalog: &AreaCatalog, views: &ViewSet) -> Result<SimilarityModel> {
    let geo = geo_distances(catalog);
    if views.is_empty() {
        similarity_geo_only(&geo)
    } else {
        let feat = feature_distances(views)?;
        similarity(&geo, &feat)
    }
}

/// Select each area's k most similar known neighbors (self excluded, ties
/// broken by lower index) and build the indicator matrix H.
pub fn build_indicator(
    sim: &SimilarityModel,
    catalog: &AreaCatalog,
    k: usize,
) -> Result<NeighborModel> {
    let n = catalog.n();
    let known = catalog.known();
    let known_count = catalog.known_count();
    if k == 0 || k >= known_count {
        return Err(Error::NeighborhoodTooLarge { k, known: known_count });
    }
    let mut h = DMatrix::zeros(n, n);
    let mut neighbors = Vec::with_capacity(n);
    for i in 0..n {
        let mut candidates: Vec<usize> =
            (0..n).filter(|&j| known[j] && j != i).collect();
        // Descending similarity; equal similarities fall back to index order.
        candidates.sort_by(|&a, &b| {
            sim.s[(i, b)]
                .partial_cmp(&sim.s[(i, a)])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        candidates.truncate(k);
        for &j in &candidates {
            h[(i, j)] = 1.0;
        }
        neighbors.push(candidates);
    }
    Ok(NeighborModel { k, h, neighbors })
}

/// Initial adaptive-weight matrix: W is seeded with the similarity values.
/// Entries off the H pattern never influence the model (it only appears as
/// H entry-wise W) but are kept as similarity values for determinism.
pub fn init_weight(sim: &SimilarityModel, _nbr: &NeighborModel) -> DMatrix<f64> {
    sim.s.clone()
}
