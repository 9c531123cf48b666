//! Random-walk machinery: precomputed walk tables, the raw hash, the exact
//! end-position distribution of a d-step walk and the collision probability
//! of the bucketized hash.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest universe cap whose walk positions fit a signed 16-bit entry.
pub const MAX_UNIVERSE_CAP: u32 = (1 << 15) - 1;

/// Above this step count the exact binomial row is replaced by a Gaussian
/// approximation with continuity correction inside [`interval_probability`].
pub const EXACT_PMF_CROSSOVER: u64 = 512;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for the walk of (table, function, dimension).
///
/// Chained splitmix64 over the master seed and the three indices; every walk
/// gets an independent stream and rebuilding with the same master seed
/// reproduces the table bit for bit.
pub fn walk_sub_seed(seed: u64, table: usize, func: usize, dim: usize) -> u64 {
    let mut s = splitmix64(seed);
    for x in [table as u64, func as u64, dim as u64] {
        s = splitmix64(s ^ x.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
    s
}

/// Prefix sums of i.i.d. +-1 step sequences, one walk per
/// (table, function, dimension), sampled at even step counts.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomWalkTable {
    pub seed: u64,
    pub tables: usize,
    pub fns_per_table: usize,
    pub dim: usize,
    pub caps: Vec<u32>,
    /// entry offsets per walk, length tables * fns_per_table * dim + 1
    offsets: Vec<usize>,
    /// tau(2), tau(4), ..., tau(U_i) per walk, concatenated
    entries: Vec<i16>,
}

fn walk_prefix_sums(sub_seed: u64, cap: u32) -> Vec<i16> {
    let half = (cap / 2) as usize;
    let mut out = Vec::with_capacity(half);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed);
    let mut word = 0u64;
    let mut bits = 0u32;
    let mut pos: i32 = 0;
    for t in 1..=cap {
        if bits == 0 {
            word = rng.next_u64();
            bits = 64;
        }
        pos += if word & 1 == 1 { 1 } else { -1 };
        word >>= 1;
        bits -= 1;
        if t % 2 == 0 {
            out.push(pos as i16);
        }
    }
    out
}

/// Builds the full walk table for an index of `tables` hash tables with
/// `fns_per_table` functions each over a `caps.len()`-dimensional universe.
pub fn build_walk_table(
    caps: &[u32],
    fns_per_table: usize,
    tables: usize,
    seed: u64,
) -> Result<RandomWalkTable> {
    for (dim, &cap) in caps.iter().enumerate() {
        if cap % 2 != 0 || cap > MAX_UNIVERSE_CAP {
            return Err(Error::UniverseCapOutOfRange { dim, cap });
        }
    }
    let dim = caps.len();
    let walks = tables * fns_per_table * dim;
    let mut offsets = Vec::with_capacity(walks + 1);
    offsets.push(0usize);
    for w in 0..walks {
        let cap = caps[w % dim];
        offsets.push(offsets[w] + (cap / 2) as usize);
    }
    let entries: Vec<i16> = (0..walks)
        .into_par_iter()
        .map(|w| {
            let d = w % dim;
            let f = (w / dim) % fns_per_table;
            let t = w / (dim * fns_per_table);
            walk_prefix_sums(walk_sub_seed(seed, t, f, d), caps[d])
        })
        .flatten()
        .collect();
    Ok(RandomWalkTable {
        seed,
        tables,
        fns_per_table,
        dim,
        caps: caps.to_vec(),
        offsets,
        entries,
    })
}

impl RandomWalkTable {
    fn walk(&self, table: usize, func: usize, dim: usize) -> &[i16] {
        let w = (table * self.fns_per_table + func) * self.dim + dim;
        &self.entries[self.offsets[w]..self.offsets[w + 1]]
    }

    /// tau value of one walk at even step count `t`, with tau(0) = 0.
    pub fn position(&self, table: usize, func: usize, dim: usize, t: u32) -> Result<i64> {
        if t == 0 {
            return Ok(0);
        }
        let cap = self.caps[dim];
        if t % 2 != 0 || t > cap {
            return Err(Error::CoordinateOutOfUniverse {
                dim,
                value: t,
                cap,
            });
        }
        Ok(self.walk(table, func, dim)[(t / 2 - 1) as usize] as i64)
    }

    pub fn entries(&self) -> &[i16] {
        &self.entries
    }

    pub(crate) fn from_entries(
        seed: u64,
        tables: usize,
        fns_per_table: usize,
        caps: Vec<u32>,
        entries: Vec<i16>,
    ) -> Result<Self> {
        let dim = caps.len();
        let walks = tables * fns_per_table * dim;
        let mut offsets = Vec::with_capacity(walks + 1);
        offsets.push(0usize);
        for w in 0..walks {
            offsets.push(offsets[w] + (caps[w % dim] / 2) as usize);
        }
        if *offsets.last().unwrap() != entries.len() {
            return Err(Error::Corrupted("walk table entry count mismatch".into()));
        }
        Ok(Self {
            seed,
            tables,
            fns_per_table,
            dim,
            caps,
            offsets,
            entries,
        })
    }
}

/// Raw hash of one function: the sum of per-dimension walk positions at the
/// point's coordinates.
pub fn raw_hash(
    table: &RandomWalkTable,
    table_idx: usize,
    fn_idx: usize,
    point: &[u32],
) -> Result<i64> {
    if point.len() != table.dim {
        return Err(Error::DimensionMismatch {
            expected: table.dim,
            got: point.len(),
        });
    }
    let mut acc = 0i64;
    for (dim, &s) in point.iter().enumerate() {
        acc += table.position(table_idx, fn_idx, dim, s)?;
    }
    Ok(acc)
}

/// Exact pmf of the end position of a `d`-step walk over even `l`.
#[derive(Debug, Clone)]
pub struct WalkDistribution {
    pub d: u64,
    /// probabilities at l = -d, -d+2, ..., d
    pmf: Vec<f64>,
}

impl WalkDistribution {
    pub fn new(d: u64) -> Result<Self> {
        if d % 2 != 0 {
            return Err(Error::OddWalkDistance(d as i64));
        }
        let half = (d / 2) as usize;
        let mut pmf = vec![0.0; 2 * half + 1];
        // central term C(d, d/2) / 2^d as a running product that stays in range
        let mut center = 1.0f64;
        for k in 1..=half {
            center *= (half + k) as f64 / (4 * k) as f64;
        }
        pmf[half] = center;
        // outward via the binomial ratio
        let mut cur = center;
        for step in 0..half {
            let j = half + step; // C(d, j+1) = C(d, j) * (d - j) / (j + 1)
            cur *= (d as f64 - j as f64) / (j as f64 + 1.0);
            pmf[half + step + 1] = cur;
            pmf[half - step - 1] = cur;
        }
        Ok(Self { d, pmf })
    }

    /// Pr[Y_d = l]; zero off the even lattice.
    pub fn prob(&self, l: i64) -> f64 {
        if l % 2 != 0 || l.unsigned_abs() > self.d {
            return 0.0;
        }
        self.pmf[((l + self.d as i64) / 2) as usize]
    }

    /// Pr[|Y_d| <= t] for integer t >= 0.
    pub fn abs_cdf(&self, t: u64) -> f64 {
        let t = t.min(self.d) as i64;
        let mut acc = 0.0;
        let mut l = -(t - t % 2);
        while l <= t {
            acc += self.prob(l);
            l += 2;
        }
        acc
    }

    pub fn support_sum(&self) -> f64 {
        self.pmf.iter().sum()
    }
}

/// Pr[Y_d = l] for a `d`-step walk.
pub fn walk_pmf(d: u64, l: i64) -> Result<f64> {
    Ok(WalkDistribution::new(d)?.prob(l))
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Pr[lo <= Y_d < hi], summing the pmf over even l in the half-open interval.
///
/// Exact for d up to [`EXACT_PMF_CROSSOVER`]; beyond that a zero-mean Gaussian
/// with variance d and continuity correction stands in, matching the
/// large-step limit of the walk.
pub fn interval_probability(d: u64, lo: f64, hi: f64) -> Result<f64> {
    if d % 2 != 0 {
        return Err(Error::OddWalkDistance(d as i64));
    }
    if lo >= hi {
        return Ok(0.0);
    }
    // smallest even integer >= lo and largest even integer < hi
    let start = 2.0 * (lo / 2.0).ceil();
    let mut end = 2.0 * (hi / 2.0).floor();
    if end >= hi {
        end -= 2.0;
    }
    if end < start {
        return Ok(0.0);
    }
    if d <= EXACT_PMF_CROSSOVER {
        let dist = WalkDistribution::new(d)?;
        let lo_l = (start.max(-(d as f64))) as i64;
        let hi_l = (end.min(d as f64)) as i64;
        let mut acc = 0.0;
        let mut l = lo_l;
        while l <= hi_l {
            acc += dist.prob(l);
            l += 2;
        }
        Ok(acc)
    } else {
        let sigma = (d as f64).sqrt();
        Ok(normal_cdf((end + 1.0) / sigma) - normal_cdf((start - 1.0) / sigma))
    }
}

fn check_even_width(w: u64) -> Result<()> {
    if w < 2 || w % 2 != 0 {
        return Err(Error::InvalidBucketWidth(w as i64));
    }
    Ok(())
}

/// Collision probability p(d) of the bucketized hash at L1 distance d:
/// the convolution of the uniform offset with the walk distribution.
pub fn collision_probability(d: u64, w: u64) -> Result<f64> {
    check_even_width(w)?;
    let dist = WalkDistribution::new(d)?;
    let mut acc = 0.0;
    let mut l = -(w as i64);
    while l <= w as i64 {
        acc += (1.0 - l.abs() as f64 / w as f64) * dist.prob(l);
        l += 1;
    }
    Ok(acc)
}

/// p(d) via the equivalent summation (1/W) sum_t Pr[|Y_d| <= t].
pub fn collision_probability_appendix(d: u64, w: u64) -> Result<f64> {
    check_even_width(w)?;
    let dist = WalkDistribution::new(d)?;
    let mut acc = 0.0;
    for t in 0..w {
        acc += dist.abs_cdf(t);
    }
    Ok(acc / w as f64)
}
