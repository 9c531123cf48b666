//! Dataset model, L1 distance, the shift/scale/round normalization pipeline
//! and the exact brute-force kNN oracle used as ground truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default scale cap: the largest even value representable in two bytes.
pub const DEFAULT_SCALE_CAP: u32 = (1 << 16) - 2;

/// Real-valued input points, row-major.
#[derive(Debug, Clone)]
pub struct RawDataset {
    coords: Vec<f64>,
    n: usize,
    m: usize,
}

impl RawDataset {
    pub fn new(coords: Vec<f64>, m: usize) -> Result<Self> {
        if m == 0 || coords.is_empty() || coords.len() % m != 0 {
            return Err(Error::EmptyDataset);
        }
        for (i, &v) in coords.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteCoordinate {
                    point: i / m,
                    dim: i % m,
                });
            }
        }
        let n = coords.len() / m;
        Ok(Self { coords, n, m })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let m = points.first().map(|p| p.len()).unwrap_or(0);
        for p in points {
            if p.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: p.len(),
                });
            }
        }
        Self::new(points.concat(), m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.m..(i + 1) * self.m]
    }
}

/// Per-dimension shift plus the integer scale that maps raw reals to
/// nonnegative even integers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub shift: Vec<f64>,
    pub scale: u32,
}

impl NormalizationParams {
    /// Applies shift, scale and round-to-even to a single point.
    pub fn apply(&self, q: &[f64]) -> Result<Vec<u32>> {
        if q.len() != self.shift.len() {
            return Err(Error::DimensionMismatch {
                expected: self.shift.len(),
                got: q.len(),
            });
        }
        q.iter()
            .zip(&self.shift)
            .enumerate()
            .map(|(dim, (&v, &a))| {
                if !v.is_finite() {
                    return Err(Error::NonFiniteCoordinate { point: 0, dim });
                }
                Ok(round_to_even((v + a) * self.scale as f64))
            })
            .collect()
    }
}

/// Rounds to the nearest even integer; exact ties round up.
///
/// Halving, rounding half away from zero and doubling gives exactly that on
/// nonnegative input: v/2 sits exactly on x.5 only when v is an odd integer,
/// and `f64::round` takes x.5 up for positive x.
pub fn round_to_even(v: f64) -> u32 {
    let r = (v.max(0.0) / 2.0).round() * 2.0;
    r as u32
}

/// Points with nonnegative even-integer coordinates plus the parameters that
/// produced them.
#[derive(Debug, Clone)]
pub struct NormalizedDataset {
    coords: Vec<u32>,
    n: usize,
    m: usize,
    pub params: NormalizationParams,
    /// Per-dimension maxima, rounded up to even.
    pub universe_caps: Vec<u32>,
    /// Max over `universe_caps`.
    pub universe: u32,
}

impl NormalizedDataset {
    pub fn from_parts(coords: Vec<u32>, m: usize, params: NormalizationParams) -> Result<Self> {
        if m == 0 || coords.is_empty() || coords.len() % m != 0 {
            return Err(Error::EmptyDataset);
        }
        let n = coords.len() / m;
        let mut universe_caps = vec![0u32; m];
        for row in coords.chunks_exact(m) {
            for (cap, &v) in universe_caps.iter_mut().zip(row) {
                *cap = (*cap).max(v);
            }
        }
        // caps stay even because every stored coordinate is even
        let universe = universe_caps.iter().copied().max().unwrap_or(0);
        Ok(Self {
            coords,
            n,
            m,
            params,
            universe_caps,
            universe,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn point(&self, i: usize) -> &[u32] {
        &self.coords[i * self.m..(i + 1) * self.m]
    }

    pub fn coords(&self) -> &[u32] {
        &self.coords
    }
}

/// One answer of a kNN query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Neighbor {
    pub point_id: usize,
    pub distance: u64,
}

/// Exact L1 distance between two equal-dimension vectors.
pub fn l1_distance(u: &[u32], v: &[u32]) -> Result<u64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    Ok(l1_distance_unchecked(u, v))
}

#[inline]
pub(crate) fn l1_distance_unchecked(u: &[u32], v: &[u32]) -> u64 {
    u.iter()
        .zip(v)
        .map(|(&a, &b)| (a as i64 - b as i64).unsigned_abs())
        .sum()
}

/// Normalizes a raw dataset to nonnegative even integers.
///
/// The shift makes every coordinate nonnegative per dimension; the scale is
/// the largest even integer keeping the maximum scaled coordinate at or below
/// `scale_cap` (callers may force a specific positive scale instead); each
/// scalar is then rounded to the nearest even integer, ties up.
pub fn normalize(
    raw: &RawDataset,
    scale_cap: u32,
    forced_scale: Option<u32>,
) -> Result<NormalizedDataset> {
    let m = raw.dim();
    let mut shift = vec![0.0f64; m];
    for i in 0..raw.n() {
        for (a, &v) in shift.iter_mut().zip(raw.point(i)) {
            *a = a.max(-v);
        }
    }
    let mut max_shifted = 0.0f64;
    for i in 0..raw.n() {
        for (a, &v) in shift.iter().zip(raw.point(i)) {
            max_shifted = max_shifted.max(v + a);
        }
    }
    let scale = match forced_scale {
        Some(c) => {
            if c == 0 {
                return Err(Error::InvalidParameter("scale must be positive".into()));
            }
            c
        }
        None if max_shifted == 0.0 => scale_cap & !1,
        None => {
            let c = ((scale_cap as f64 / max_shifted).floor() as u64) & !1;
            if c == 0 {
                return Err(Error::ScaleOverflow {
                    cap: scale_cap,
                    max_coord: max_shifted,
                });
            }
            c.min(u32::MAX as u64 & !1) as u32
        }
    };
    let params = NormalizationParams { shift, scale };
    let mut coords = Vec::with_capacity(raw.n() * m);
    for i in 0..raw.n() {
        for (dim, (&v, &a)) in raw.point(i).iter().zip(&params.shift).enumerate() {
            let _ = dim;
            coords.push(round_to_even((v + a) * scale as f64));
        }
    }
    NormalizedDataset::from_parts(coords, m, params)
}

/// Exact k nearest neighbors by full scan, sorted by (distance, point id).
///
/// Parallelized over points; the final sort makes the output independent of
/// worker count.
pub fn brute_force_knn(data: &NormalizedDataset, q: &[u32], k: usize) -> Result<Vec<Neighbor>> {
    if q.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: q.len(),
        });
    }
    if k == 0 || k > data.n() {
        return Err(Error::KTooLarge { k, n: data.n() });
    }
    let m = data.dim();
    let mut all: Vec<Neighbor> = data
        .coords()
        .par_chunks_exact(m)
        .enumerate()
        .map(|(id, p)| Neighbor {
            point_id: id,
            distance: l1_distance_unchecked(p, q),
        })
        .collect();
    all.sort_unstable_by_key(|nb| (nb.distance, nb.point_id));
    all.truncate(k);
    Ok(all)
}
