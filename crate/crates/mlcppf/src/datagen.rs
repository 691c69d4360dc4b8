//! Synthetic-city generation: gravity-model OD flows over region-typed
//! areas with multi-view statistical features, plus a planted
//! zero-residual instance used as a solver oracle.

use crate::core::{AreaCatalog, FlowTensor, ObservationMask, Period, ViewSet, build_mask};
use crate::error::{Error, Result};
use crate::neighborhood::{NeighborModel, geo_distances};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

/// Functional region types areas are assigned to.
pub const REGION_NAMES: [&str; 4] = ["residential", "business", "industrial", "recreational"];

/// Parameters of the synthetic city.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Number of areas.
    pub n: usize,
    /// Number of functional region types (2..=4).
    pub regions: usize,
    /// (lat_min, lat_max, lon_min, lon_max) bounding box in degrees.
    pub bbox: (f64, f64, f64, f64),
    /// Days per time period.
    pub days: usize,
    /// Day-to-day noise level; 0 produces identical noiseless days,
    /// anything positive draws Poisson counts around the gravity means
    /// with a per-day intensity factor of spread `noise * 0.05`.
    pub noise: f64,
    /// Gravity decay exponent.
    pub gravity_exponent: f64,
    /// Overall flow scale multiplier.
    pub flow_scale: f64,
    /// Feature dimension of each statistical view.
    pub view_dims: Vec<usize>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 117,
            regions: 4,
            // Roughly a 28 x 28 km metropolitan box.
            bbox: (-34.00, -33.75, 151.00, 151.30),
            days: 14,
            noise: 1.0,
            gravity_exponent: 2.0,
            flow_scale: 60.0,
            view_dims: vec![43, 44, 50, 97],
            seed: 0,
        }
    }
}

/// A complete generated dataset: one flow tensor per time period.
#[derive(Debug, Clone)]
pub struct SyntheticCity {
    pub catalog: AreaCatalog,
    pub flows: Vec<FlowTensor>,
    pub views: ViewSet,
    /// Region type index per area.
    pub region_of: Vec<usize>,
}

impl SyntheticCity {
    pub fn flows_for(&self, period: Period) -> &FlowTensor {
        self.flows.iter().find(|f| f.period == period).expect("all periods generated")
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Derive an independent stream seed from a base seed and a few tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(base ^ 0xA076_1D64_78BD_642F);
    for &t in tags {
        s = splitmix64(s ^ t);
    }
    s
}

/// Per-period departure and attraction masses, by region type. Business
/// areas attract the morning rush and emit the afternoon rush while
/// residential areas do the opposite; off-peak is flatter.
fn region_masses(period: Period, region: usize) -> (f64, f64) {
    // (origin mass, destination mass)
    match period {
        Period::MorningRush => [(10.0, 1.5), (2.0, 10.0), (3.0, 6.0), (1.5, 2.0)][region % 4],
        Period::AfternoonRush => [(2.0, 9.0), (9.5, 2.0), (5.0, 3.0), (2.5, 4.0)][region % 4],
        Period::NonRush => [(4.0, 4.0), (4.5, 5.0), (3.5, 3.5), (5.0, 4.5)][region % 4],
    }
}

/// Generate the synthetic city: areas uniform in the box, regions
/// spatially clustered around random centers, gravity-model flows with
/// optional Poisson day noise, and prototype-plus-noise feature views.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCity> {
    if spec.n < 4 {
        return Err(Error::InvalidArgument(format!("need n >= 4 areas, got {}", spec.n)));
    }
    if !(2..=4).contains(&spec.regions) {
        return Err(Error::InvalidArgument(format!(
            "region count must be in 2..=4, got {}",
            spec.regions
        )));
    }
    if spec.noise < 0.0 || spec.days == 0 {
        return Err(Error::InvalidArgument("need noise >= 0 and days >= 1".into()));
    }
    let (lat0, lat1, lon0, lon1) = spec.bbox;

    // Area placement.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[1]));
    let coords: Vec<(f64, f64)> =
        (0..spec.n).map(|_| (rng.gen_range(lat0..lat1), rng.gen_range(lon0..lon1))).collect();
    let ids: Vec<String> = (0..spec.n).map(|i| format!("A{i:03}")).collect();
    let catalog = AreaCatalog::new(ids, coords.clone(), vec![true; spec.n]);

    // Region assignment: nearest of `regions` random centers.
    let centers: Vec<(f64, f64)> = (0..spec.regions)
        .map(|_| (rng.gen_range(lat0..lat1), rng.gen_range(lon0..lon1)))
        .collect();
    let region_of: Vec<usize> = coords
        .iter()
        .map(|&(la, lo)| {
            (0..spec.regions)
                .min_by(|&a, &b| {
                    let da = (la - centers[a].0).powi(2) + (lo - centers[a].1).powi(2);
                    let db = (la - centers[b].0).powi(2) + (lo - centers[b].1).powi(2);
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap()
        })
        .collect();

    // Statistical views: one prototype row per region and view, plus
    // Gaussian jitter at a tenth of the prototype scale so that feature
    // distance tracks region type.
    let proto_scale = 10.0;
    let mut view_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[2]));
    let jitter = Normal::new(0.0, 0.1 * proto_scale).expect("valid std");
    let mut views = Vec::new();
    let mut names = Vec::new();
    for (v_idx, &dim) in spec.view_dims.iter().enumerate() {
        let prototypes: Vec<Vec<f64>> = (0..spec.regions)
            .map(|_| (0..dim).map(|_| view_rng.gen_range(0.0..proto_scale)).collect())
            .collect();
        let x = DMatrix::from_fn(spec.n, dim, |i, j| {
            prototypes[region_of[i]][j] + jitter.sample(&mut view_rng)
        });
        views.push(x);
        names.push(format!("view{v_idx}"));
    }
    let views = ViewSet::new(names, views);

    // Gravity-model flows per period and day.
    let geo = geo_distances(&catalog);
    let mut flows = Vec::new();
    for (p_idx, period) in Period::ALL.iter().enumerate() {
        let base = DMatrix::from_fn(spec.n, spec.n, |i, j| {
            let (om, _) = region_masses(*period, region_of[i]);
            let (_, dm) = region_masses(*period, region_of[j]);
            spec.flow_scale * om * dm / (1.0 + geo[(i, j)]).powf(spec.gravity_exponent)
        });
        let mut day_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[3, p_idx as u64]));
        let matrices: Vec<DMatrix<f64>> = (0..spec.days)
            .map(|_| {
                if spec.noise == 0.0 {
                    base.clone()
                } else {
                    let day_factor =
                        (1.0 + spec.noise * 0.05 * day_rng.sample::<f64, _>(rand_distr::StandardNormal))
                            .max(0.05);
                    base.map(|mean| {
                        let lam = mean * day_factor;
                        if lam <= 0.0 {
                            0.0
                        } else {
                            Poisson::new(lam).expect("positive rate").sample(&mut day_rng)
                        }
                    })
                }
            })
            .collect();
        flows.push(FlowTensor::new(*period, matrices));
    }

    Ok(SyntheticCity { catalog, flows, views, region_of })
}

/// A dataset whose flows satisfy F_d = (H (*) W*) F_d C* up to floating-
/// point rounding, so the solver's global optimum sits at loss ~ 0.
#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub catalog: AreaCatalog,
    pub flows: FlowTensor,
    pub views: ViewSet,
    pub mask: ObservationMask,
    pub nbr: NeighborModel,
    pub w_star: DMatrix<f64>,
    pub c_star: DMatrix<f64>,
}

/// Construct the planted instance: a positive rank-one flow profile built
/// from the Perron vector of the neighbor-weight operator, with a dense
/// correlation matrix fixed to leave that profile invariant.
pub fn planted_instance(n: usize, k: usize, seed: u64) -> Result<PlantedInstance> {
    if n < 4 || n > 12 {
        return Err(Error::InvalidArgument(format!("planted instance needs 4 <= n <= 12, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xB0B]));

    // Hold out roughly a fifth of the areas as targets.
    let target_count = (n / 5).max(1);
    let known_count = n - target_count;
    if k >= known_count {
        return Err(Error::NeighborhoodTooLarge { k, known: known_count });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        indices.swap(i, rng.gen_range(0..=i));
    }
    let targets: Vec<usize> = indices[..target_count].to_vec();
    let known: Vec<usize> = {
        let mut v = indices[target_count..].to_vec();
        v.sort_unstable();
        v
    };

    let ids = (0..n).map(|i| format!("A{i:03}")).collect();
    let coords = (0..n)
        .map(|_| (rng.gen_range(-34.0..-33.8), rng.gen_range(151.0..151.2)))
        .collect();
    let mut known_flags = vec![true; n];
    for &t in &targets {
        known_flags[t] = false;
    }
    let catalog = AreaCatalog::new(ids, coords, known_flags);
    let mask = build_mask(&catalog);

    // Neighbor pattern: known areas form a cycle (keeps the weight
    // operator irreducible on the known block) padded with random known
    // neighbors; target rows pick k random known areas.
    let mut neighbors: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut cand: Vec<usize> = known.iter().copied().filter(|&j| j != i).collect();
        for c in (1..cand.len()).rev() {
            cand.swap(c, rng.gen_range(0..=c));
        }
        let mut picks: Vec<usize> = Vec::with_capacity(k);
        if let Some(pos) = known.iter().position(|&j| j == i) {
            // Successor in the known cycle.
            let succ = known[(pos + 1) % known.len()];
            picks.push(succ);
        }
        for j in cand {
            if picks.len() == k {
                break;
            }
            if !picks.contains(&j) {
                picks.push(j);
            }
        }
        picks.sort_unstable();
        for &j in &picks {
            h[(i, j)] = 1.0;
        }
        neighbors.push(picks);
    }
    let nbr = NeighborModel { k, h, neighbors };

    // Positive weights on the pattern; zero elsewhere.
    let mut w_star = DMatrix::zeros(n, n);
    for i in 0..n {
        for &j in &nbr.neighbors[i] {
            w_star[(i, j)] = rng.gen_range(0.5..1.5);
        }
    }

    // Perron pair of G = H (*) W* by power iteration; G is non-negative
    // with an irreducible known block, so u > 0 on the known support.
    let g = nbr.h.component_mul(&w_star);
    let mut u = DMatrix::from_element(n, 1, 1.0);
    let mut rho = 0.0;
    for _ in 0..20_000 {
        let gu = &g * &u;
        let norm = gu.norm();
        if norm == 0.0 {
            return Err(Error::InvalidArgument(
                "degenerate planted weights: zero spectral radius".into(),
            ));
        }
        let next = gu / norm;
        let delta = (&next - &u).norm();
        u = next;
        rho = norm;
        if delta < 1e-15 {
            break;
        }
    }

    // Correlation matrix with left eigenpair (1/rho, w_vec): start from
    // I/rho and add a random perturbation projected away from w_vec.
    let w_vec = DMatrix::from_fn(n, 1, |_, _| rng.gen_range(1.0..2.0));
    let proj = DMatrix::identity(n, n) - &w_vec * w_vec.transpose() / w_vec.norm_squared();
    let z = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.5..0.5) / n as f64);
    let c_star = DMatrix::identity(n, n) / rho + proj * z;

    // Rank-one daily flows F_d = s_d * u w^T, rescaled to a mean flow of
    // about 40 passengers.
    let profile = &u * w_vec.transpose();
    let mean = profile.sum() / (n * n) as f64;
    let scale = 40.0 / mean;
    let day_factors = [0.85, 1.0, 1.2];
    let matrices: Vec<DMatrix<f64>> =
        day_factors.iter().map(|s| &profile * (scale * s)).collect();
    let flows = FlowTensor::new(Period::MorningRush, matrices);

    Ok(PlantedInstance {
        catalog,
        flows,
        views: ViewSet::empty(),
        mask,
        nbr,
        w_star,
        c_star,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::validate;

    #[test]
    fn generate_is_deterministic() {
        let spec = SyntheticSpec { n: 12, days: 2, ..SyntheticSpec::default() };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.catalog, b.catalog);
        assert_eq!(a.views.views, b.views.views);
        for (fa, fb) in a.flows.iter().zip(&b.flows) {
            assert_eq!(fa.matrices, fb.matrices);
        }
    }

    #[test]
    fn zero_noise_days_are_identical() {
        let spec = SyntheticSpec { n: 10, days: 2, noise: 0.0, ..SyntheticSpec::default() };
        let city = generate(&spec).unwrap();
        for flows in &city.flows {
            assert_eq!(flows.matrices[0], flows.matrices[1]);
        }
    }

    #[test]
    fn generated_dataset_passes_validation() {
        let spec = SyntheticSpec { n: 15, days: 3, ..SyntheticSpec::default() };
        let city = generate(&spec).unwrap();
        for flows in &city.flows {
            let report = validate(&city.catalog, flows, &city.views, None);
            assert!(report.is_empty(), "violations: {report}");
        }
    }

    #[test]
    fn morning_rush_residential_rows_feed_business_areas() {
        // gravity_exponent 0 removes distance decay, isolating the
        // region mass profile this test inspects.
        let spec = SyntheticSpec {
            n: 40,
            days: 1,
            noise: 0.0,
            seed: 3,
            gravity_exponent: 0.0,
            ..SyntheticSpec::default()
        };
        let city = generate(&spec).unwrap();
        let morning = city.flows_for(Period::MorningRush);
        let f = &morning.matrices[0];
        let residential: Vec<usize> =
            (0..spec.n).filter(|&i| city.region_of[i] == 0).collect();
        let business: Vec<usize> = (0..spec.n).filter(|&i| city.region_of[i] == 1).collect();
        if residential.is_empty() || business.is_empty() {
            panic!("seed produced an empty region; pick another seed");
        }
        // Into-business flow per origin area: residential origins dominate
        // business origins, matching the morning mass profile.
        let mean_into_business = |origins: &[usize]| {
            let mut total = 0.0;
            for &i in origins {
                for &j in &business {
                    total += f[(i, j)];
                }
            }
            total / origins.len() as f64
        };
        assert!(
            mean_into_business(&residential) > mean_into_business(&business),
            "residential departures should dominate morning inflow to business areas"
        );
    }

    #[test]
    fn gravity_decay_is_monotone_within_region_pairs() {
        let spec =
            SyntheticSpec { n: 30, days: 1, noise: 0.0, seed: 9, ..SyntheticSpec::default() };
        let city = generate(&spec).unwrap();
        let geo = geo_distances(&city.catalog);
        let f = &city.flows_for(Period::NonRush).matrices[0];
        // For fixed (origin region, destination region), noiseless flows
        // decrease with distance.
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        for i in 0..spec.n {
            for j in 0..spec.n {
                if city.region_of[i] == 0 && city.region_of[j] == 1 && i != j {
                    pairs.push((geo[(i, j)], f[(i, j)]));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in pairs.windows(2) {
            assert!(
                w[1].1 <= w[0].1 + 1e-9,
                "flow should not increase with distance: {:?} -> {:?}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn planted_instance_has_near_zero_residual_at_star() {
        let inst = planted_instance(10, 2, 42).unwrap();
        let g = inst.nbr.h.component_mul(&inst.w_star);
        for f in &inst.flows.matrices {
            let residual = f - &g * f * &inst.c_star;
            let rel = residual.norm() / f.norm();
            assert!(rel < 1e-12, "planted residual {rel} too large");
        }
    }

    #[test]
    fn planted_flows_are_non_negative() {
        let inst = planted_instance(10, 2, 42).unwrap();
        for f in &inst.flows.matrices {
            assert!(f.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn planted_rejects_oversized_k() {
        assert!(planted_instance(5, 4, 1).is_err());
    }
}
