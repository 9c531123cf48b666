//! The three hash families behind one interface: bucketized hash
//! h(s) = floor((f(s) + b) / W), epicenter geometry and per-dimension
//! bucket-landing probabilities.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::rw::{self, RandomWalkTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HashFamilyKind {
    /// Raw hash is a sum of per-dimension walk positions; distances are L1.
    RandomWalk,
    /// Cauchy projection; distances are L1.
    CauchyProjection,
    /// Gaussian projection; distances are L2.
    GaussianProjection,
}

impl HashFamilyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            HashFamilyKind::RandomWalk => "rw",
            HashFamilyKind::CauchyProjection => "cp",
            HashFamilyKind::GaussianProjection => "gp",
        }
    }
}

/// Raw hash backing of one function vector.
#[derive(Debug, Clone)]
pub enum RawHashParams {
    /// Shared walk table plus the hash-table slot this vector occupies in it.
    Walk {
        table: Arc<RandomWalkTable>,
        table_idx: usize,
    },
    /// Row-major M x m projection matrix.
    Projections(Vec<f64>),
}

/// The M hash functions of one hash table.
#[derive(Debug, Clone)]
pub struct LshFunctionVector {
    pub kind: HashFamilyKind,
    pub dim: usize,
    pub fns: usize,
    pub w: f64,
    pub offsets: Vec<f64>,
    pub raw: RawHashParams,
    pub seed: u64,
}

/// Bucket identifier: the M floored hash values.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BucketKey(pub Vec<i64>);

/// Distances from the epicenter to the two faces of the epicenter cube,
/// per hash-function dimension.
#[derive(Debug, Clone)]
pub struct EpicenterGeometry {
    pub w: f64,
    x_minus: Vec<f64>,
}

impl EpicenterGeometry {
    pub fn new(w: f64, x_minus: Vec<f64>) -> Self {
        Self { w, x_minus }
    }

    pub fn fns(&self) -> usize {
        self.x_minus.len()
    }

    /// Distance to the face crossed when delta_i = -1.
    pub fn x_minus1(&self, i: usize) -> f64 {
        self.x_minus[i]
    }

    /// Distance to the face crossed when delta_i = +1; the two sum to W.
    pub fn x_plus1(&self, i: usize) -> f64 {
        self.w - self.x_minus[i]
    }

    /// Face distance for a single perturbation entry; zero at delta = 0.
    pub fn face(&self, i: usize, delta: i8) -> f64 {
        match delta {
            -1 => self.x_minus1(i),
            0 => 0.0,
            1 => self.x_plus1(i),
            _ => panic!("delta out of range"),
        }
    }
}

fn family_sub_seed(seed: u64, stream: u64) -> u64 {
    rw::walk_sub_seed(seed, stream as usize, 0x5eed, 0)
}

/// Samples offsets (and projection entries for the dense families) for one
/// function vector, deterministically under the seed.
pub fn sample_family(
    kind: HashFamilyKind,
    dim: usize,
    fns: usize,
    w: f64,
    seed: u64,
    walk: Option<(Arc<RandomWalkTable>, usize)>,
) -> Result<LshFunctionVector> {
    if fns == 0 || dim == 0 || !(w > 0.0) {
        return Err(Error::InvalidParameter(
            "need fns >= 1, dim >= 1, w > 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(family_sub_seed(seed, 0));
    let offsets: Vec<f64> = (0..fns).map(|_| rng.random_range(0.0..w)).collect();
    let raw = match kind {
        HashFamilyKind::RandomWalk => {
            if w.fract() != 0.0 || (w as u64) % 2 != 0 {
                return Err(Error::InvalidBucketWidth(w as i64));
            }
            let (table, table_idx) = walk.ok_or_else(|| {
                Error::InvalidParameter("random-walk family requires a walk table".into())
            })?;
            RawHashParams::Walk { table, table_idx }
        }
        HashFamilyKind::CauchyProjection => {
            let mut proj_rng = ChaCha8Rng::seed_from_u64(family_sub_seed(seed, 1));
            let eta = (0..fns * dim)
                .map(|_| {
                    let u: f64 = proj_rng.random::<f64>();
                    (std::f64::consts::PI * (u - 0.5)).tan()
                })
                .collect();
            RawHashParams::Projections(eta)
        }
        HashFamilyKind::GaussianProjection => {
            let mut proj_rng = ChaCha8Rng::seed_from_u64(family_sub_seed(seed, 1));
            let eta = (0..fns * dim)
                .map(|_| {
                    // Box-Muller on two fresh uniforms
                    let u1: f64 = proj_rng.random::<f64>();
                    let u2: f64 = proj_rng.random::<f64>();
                    (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect();
            RawHashParams::Projections(eta)
        }
    };
    Ok(LshFunctionVector {
        kind,
        dim,
        fns,
        w,
        offsets,
        raw,
        seed,
    })
}

impl LshFunctionVector {
    /// Raw hash value f_i(s) of function `i`.
    pub fn raw_value(&self, i: usize, point: &[u32]) -> Result<f64> {
        if point.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: point.len(),
            });
        }
        match &self.raw {
            RawHashParams::Walk { table, table_idx } => {
                Ok(rw::raw_hash(table, *table_idx, i, point)? as f64)
            }
            RawHashParams::Projections(eta) => {
                let row = &eta[i * self.dim..(i + 1) * self.dim];
                Ok(row.iter().zip(point).map(|(&e, &s)| e * s as f64).sum())
            }
        }
    }

    /// Shifted raw hash values f_i(s) + b_i for all i.
    pub fn shifted_raw(&self, point: &[u32]) -> Result<Vec<f64>> {
        (0..self.fns)
            .map(|i| Ok(self.raw_value(i, point)? + self.offsets[i]))
            .collect()
    }
}

/// Bucket key of a point: per-function floor of the shifted raw hash over W.
pub fn hash_point(fv: &LshFunctionVector, point: &[u32]) -> Result<BucketKey> {
    let shifted = fv.shifted_raw(point)?;
    Ok(BucketKey(
        shifted.iter().map(|v| (v / fv.w).floor() as i64).collect(),
    ))
}

/// Epicenter geometry of a query: per function, the fractional position of
/// the shifted raw hash inside its bucket, scaled back to width units.
pub fn epicenter_geometry(fv: &LshFunctionVector, q: &[u32]) -> Result<EpicenterGeometry> {
    let shifted = fv.shifted_raw(q)?;
    let x_minus = shifted
        .iter()
        .map(|v| {
            let frac = v / fv.w - (v / fv.w).floor();
            frac * fv.w
        })
        .collect();
    Ok(EpicenterGeometry::new(fv.w, x_minus))
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Probability that h_i(s) - h_i(q) = delta for a point at distance `d`
/// from the query, given the epicenter geometry of dimension i.
///
/// Intervals are half-open to match the floor bucketing: delta = +1 covers
/// [x(+1), x(+1)+W), delta = 0 covers [-x(-1), x(+1)), delta = -1 covers
/// [-x(-1)-W, -x(-1)).
pub fn per_dim_landing_prob(
    kind: HashFamilyKind,
    x_minus1: f64,
    x_plus1: f64,
    w: f64,
    delta: i8,
    d: f64,
) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::InvalidParameter("distance must be positive".into()));
    }
    let (lo, hi) = match delta {
        1 => (x_plus1, x_plus1 + w),
        0 => (-x_minus1, x_plus1),
        -1 => (-x_minus1 - w, -x_minus1),
        _ => {
            return Err(Error::InvalidParameter(format!(
                "delta {delta} outside {{-1, 0, +1}}"
            )))
        }
    };
    match kind {
        HashFamilyKind::RandomWalk => {
            if d.fract() != 0.0 || (d as u64) % 2 != 0 {
                return Err(Error::OddWalkDistance(d as i64));
            }
            rw::interval_probability(d as u64, lo, hi)
        }
        HashFamilyKind::GaussianProjection => Ok(normal_cdf(hi / d) - normal_cdf(lo / d)),
        HashFamilyKind::CauchyProjection => {
            Ok(((hi / d).atan() - (lo / d).atan()) / std::f64::consts::PI)
        }
    }
}

/// Success probability of the bucket at perturbation `delta_vec`: the product
/// of the per-dimension landing probabilities (the hash functions are
/// mutually independent).
pub fn bucket_success_prob(
    kind: HashFamilyKind,
    geometry: &EpicenterGeometry,
    delta_vec: &[i8],
    d: f64,
) -> Result<f64> {
    if delta_vec.len() != geometry.fns() {
        return Err(Error::DimensionMismatch {
            expected: geometry.fns(),
            got: delta_vec.len(),
        });
    }
    let mut p = 1.0;
    for (i, &delta) in delta_vec.iter().enumerate() {
        p *= per_dim_landing_prob(
            kind,
            geometry.x_minus1(i),
            geometry.x_plus1(i),
            geometry.w,
            delta,
            d,
        )?;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rw::{build_walk_table, collision_probability};

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_family(HashFamilyKind::CauchyProjection, 8, 4, 20.0, 7, None).unwrap();
        let b = sample_family(HashFamilyKind::CauchyProjection, 8, 4, 20.0, 7, None).unwrap();
        assert_eq!(a.offsets, b.offsets);
        match (&a.raw, &b.raw) {
            (RawHashParams::Projections(x), RawHashParams::Projections(y)) => assert_eq!(x, y),
            _ => unreachable!(),
        }
    }

    #[test]
    fn rw_family_rejects_odd_width() {
        let table = Arc::new(build_walk_table(&[10], 2, 1, 1).unwrap());
        assert!(sample_family(
            HashFamilyKind::RandomWalk,
            1,
            2,
            7.0,
            1,
            Some((table, 0))
        )
        .is_err());
    }

    #[test]
    fn gaussian_entry_moments() {
        let fv = sample_family(HashFamilyKind::GaussianProjection, 1000, 1000, 4.0, 3, None)
            .unwrap();
        let eta = match &fv.raw {
            RawHashParams::Projections(e) => e,
            _ => unreachable!(),
        };
        let n = eta.len() as f64;
        let mean: f64 = eta.iter().sum::<f64>() / n;
        let var: f64 = eta.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn cauchy_entry_quartiles() {
        let fv =
            sample_family(HashFamilyKind::CauchyProjection, 1000, 1000, 20.0, 5, None).unwrap();
        let mut eta = match fv.raw {
            RawHashParams::Projections(e) => e,
            _ => unreachable!(),
        };
        eta.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = eta.len();
        let median = eta[n / 2];
        let iqr = eta[3 * n / 4] - eta[n / 4];
        assert!(median.abs() < 0.01, "median {median}");
        assert!((iqr - 2.0).abs() < 0.04, "iqr {iqr}");
    }

    #[test]
    fn hash_point_trivial_cases() {
        let table = Arc::new(build_walk_table(&[10, 10], 3, 1, 8).unwrap());
        let fv = sample_family(HashFamilyKind::RandomWalk, 2, 3, 8.0, 8, Some((table, 0)))
            .unwrap();
        let k1 = hash_point(&fv, &[4, 6]).unwrap();
        let k2 = hash_point(&fv, &[4, 6]).unwrap();
        assert_eq!(k1, k2);
        // shifted raw value inside [0, W) floors to zero
        let shifted = fv.shifted_raw(&[0, 0]).unwrap();
        let key = hash_point(&fv, &[0, 0]).unwrap();
        for (v, &h) in shifted.iter().zip(&key.0) {
            if (0.0..fv.w).contains(v) {
                assert_eq!(h, 0);
            }
        }
    }

    #[test]
    fn rw_hash_collision_rate_matches_p() {
        // 1-D points at distance d under 1e5 fresh functions
        let n = 100_000usize;
        let table = Arc::new(build_walk_table(&[6], n, 1, 31).unwrap());
        let fv = sample_family(HashFamilyKind::RandomWalk, 1, n, 8.0, 31, Some((table, 0)))
            .unwrap();
        for (s, t, d) in [([6u32], [4u32], 2u64), ([6], [0], 6)] {
            let ks = hash_point(&fv, &s).unwrap();
            let kt = hash_point(&fv, &t).unwrap();
            let hits = ks.0.iter().zip(&kt.0).filter(|(a, b)| a == b).count();
            let rate = hits as f64 / n as f64;
            let exact = collision_probability(d, 8).unwrap();
            assert!((rate - exact).abs() < 0.005, "d={d}: {rate} vs {exact}");
        }
    }

    #[test]
    fn geometry_faces_sum_to_width() {
        use rand::Rng;
        let table = Arc::new(build_walk_table(&[100, 100, 100], 4, 1, 12).unwrap());
        let fv = sample_family(HashFamilyKind::RandomWalk, 3, 4, 8.0, 12, Some((table, 0)))
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            let q: Vec<u32> = (0..3).map(|_| rng.random_range(0..50u32) * 2).collect();
            let g = epicenter_geometry(&fv, &q).unwrap();
            for i in 0..4 {
                let (a, b) = (g.x_minus1(i), g.x_plus1(i));
                assert!((a + b - 8.0).abs() < 1e-9);
                assert!((0.0..=8.0).contains(&a));
            }
        }
    }

    #[test]
    fn geometry_boundary_case() {
        // shifted raw value an exact multiple of W
        let g = EpicenterGeometry::new(10.0, vec![0.0]);
        assert_eq!(g.x_minus1(0), 0.0);
        assert_eq!(g.x_plus1(0), 10.0);
    }

    #[test]
    fn toy_geometry_is_consistent() {
        let g = EpicenterGeometry::new(10.0, vec![1.47, 5.38]);
        assert!((g.x_plus1(0) - 8.53).abs() < 1e-12);
        assert!((g.x_plus1(1) - 4.62).abs() < 1e-12);
    }

    #[test]
    fn landing_probs_total_one() {
        for kind in [
            HashFamilyKind::RandomWalk,
            HashFamilyKind::CauchyProjection,
            HashFamilyKind::GaussianProjection,
        ] {
            let (w, d) = match kind {
                HashFamilyKind::RandomWalk => (8.0, 6.0),
                _ => (20.0, 6.5),
            };
            let xm = 3.25_f64.min(w - 0.5);
            let xp = w - xm;
            let mut total = 0.0;
            for delta in [-1i8, 0, 1] {
                total += per_dim_landing_prob(kind, xm, xp, w, delta, d).unwrap();
            }
            // both tails past +-1
            let tail_hi = match kind {
                HashFamilyKind::RandomWalk => {
                    rw::interval_probability(d as u64, xp + w, f64::INFINITY).unwrap()
                        + rw::interval_probability(d as u64, f64::NEG_INFINITY, -xm - w).unwrap()
                }
                HashFamilyKind::GaussianProjection => {
                    (1.0 - normal_cdf((xp + w) / d)) + normal_cdf((-xm - w) / d)
                }
                HashFamilyKind::CauchyProjection => {
                    (0.5 - ((xp + w) / d).atan() / std::f64::consts::PI)
                        + (0.5 + ((-xm - w) / d).atan() / std::f64::consts::PI)
                }
            };
            assert!((total + tail_hi - 1.0).abs() < 1e-10, "{kind:?}");
        }
    }

    #[test]
    fn gaussian_symmetric_geometry() {
        let w = 10.0;
        let p_plus =
            per_dim_landing_prob(HashFamilyKind::GaussianProjection, w / 2.0, w / 2.0, w, 1, 3.0)
                .unwrap();
        let p_minus =
            per_dim_landing_prob(HashFamilyKind::GaussianProjection, w / 2.0, w / 2.0, w, -1, 3.0)
                .unwrap();
        assert!((p_plus - p_minus).abs() < 1e-14);
    }

    #[test]
    fn rw_delta_zero_enumerates_pmf_terms() {
        let p = per_dim_landing_prob(HashFamilyKind::RandomWalk, 4.0, 4.0, 8.0, 0, 6.0).unwrap();
        let expect: f64 = [-4i64, -2, 0, 2]
            .iter()
            .map(|&l| rw::walk_pmf(6, l).unwrap())
            .sum();
        assert!((p - expect).abs() < 1e-14);
    }

    #[test]
    fn gaussian_plus_one_integrand_bracket() {
        // integral over [x, x+W] bounded by W times the endpoint densities
        let (w, d, xp) = (10.0, 4.0, 3.0);
        let p =
            per_dim_landing_prob(HashFamilyKind::GaussianProjection, w - xp, xp, w, 1, d).unwrap();
        let phi = |x: f64| (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let hi = w * phi(xp / d) / d;
        let lo = w * phi((xp + w) / d) / d;
        assert!(p <= hi && p >= lo, "{lo} <= {p} <= {hi}");
    }

    #[test]
    fn epicenter_success_averages_to_collision_prob_power() {
        use rand::Rng;
        let (w, d, m_fns) = (8.0, 6.0, 3usize);
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let mut acc = 0.0;
        let n = 100_000;
        for _ in 0..n {
            let xm: Vec<f64> = (0..m_fns).map(|_| rng.random_range(0.0..w)).collect();
            let g = EpicenterGeometry::new(w, xm);
            acc += bucket_success_prob(HashFamilyKind::RandomWalk, &g, &[0, 0, 0], d).unwrap();
        }
        let mean = acc / n as f64;
        let expect = collision_probability(6, 8).unwrap().powi(m_fns as i32);
        assert!((mean - expect).abs() / expect < 0.01, "{mean} vs {expect}");
    }

    #[test]
    fn two_dim_neighborhood_mass_matches_monte_carlo() {
        use rand::Rng;
        let (w, d) = (8.0, 6u64);
        let g = EpicenterGeometry::new(w, vec![2.5, 6.0]);
        let mut analytic = 0.0;
        for a in [-1i8, 0, 1] {
            for b in [-1i8, 0, 1] {
                analytic +=
                    bucket_success_prob(HashFamilyKind::RandomWalk, &g, &[a, b], d as f64).unwrap();
            }
        }
        // direct simulation: per hash dimension an independent d-step walk
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let mut hits = 0usize;
        for _ in 0..n {
            let mut ok = true;
            for i in 0..2 {
                let mut y = 0i64;
                for _ in 0..d {
                    y += if rng.random::<bool>() { 1 } else { -1 };
                }
                let v = y as f64;
                let within = v >= -g.x_minus1(i) - w && v < g.x_plus1(i) + w;
                if !within {
                    ok = false;
                    break;
                }
            }
            if ok {
                hits += 1;
            }
        }
        let est = hits as f64 / n as f64;
        assert!((analytic - est).abs() < 0.005, "{analytic} vs {est}");
    }
}
