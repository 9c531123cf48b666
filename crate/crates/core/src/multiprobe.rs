//! Probing-sequence generation: best-first enumeration of additive-cost
//! subsets, per-query optimal sequencing, and the universal precomputed
//! template instantiated by sorting a query's face distances.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{bucket_success_prob, per_dim_landing_prob, EpicenterGeometry, HashFamilyKind};

/// Per-dimension bucket offset relative to the epicenter bucket.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PerturbationVector(pub Vec<i8>);

impl PerturbationVector {
    pub fn zero(fns: usize) -> Self {
        Self(vec![0; fns])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&d| d == 0)
    }
}

/// Ordered buckets to probe; the first entry is always the epicenter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbingSequence(pub Vec<PerturbationVector>);

/// Query-independent probing order over rank indices into the sorted face
/// distances z_1 <= ... <= z_2M.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub fns: usize,
    pub w: f64,
    /// 0-based rank subsets, in non-decreasing expected-cost order.
    pub subsets: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
struct HeapNode {
    sum: f64,
    ranks: Vec<usize>,
}

impl Eq for HeapNode {}

impl Ord for HeapNode {
    fn cmp(&self, other: &Self) -> Ordering {
        // finite sums; lexicographic ranks break ties for reproducibility
        self.sum
            .partial_cmp(&other.sum)
            .unwrap()
            .then_with(|| self.ranks.cmp(&other.ranks))
    }
}

impl PartialOrd for HeapNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn subset_sum(costs: &[f64], ranks: &[usize]) -> f64 {
    ranks.iter().map(|&r| costs[r]).sum()
}

fn is_valid(ranks: &[usize], complement: &[usize]) -> bool {
    ranks
        .iter()
        .all(|&r| !ranks.contains(&complement[r]))
}

/// Emits the empty subset followed by the `t` smallest-sum valid subsets of
/// the sorted cost set, in non-decreasing sum order.
///
/// Best-first search over shift (bump the max rank) and expand (append the
/// next rank) moves; a subset is valid when it holds no complementary rank
/// pair, i.e. never both faces of one hash dimension.
pub fn additive_cost_heap(costs: &[f64], complement: &[usize], t: usize) -> Result<Vec<Vec<usize>>> {
    let n = costs.len();
    if complement.len() != n {
        return Err(Error::InvalidParameter(
            "complement map length must match costs".into(),
        ));
    }
    if costs.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter("costs must be sorted ascending".into()));
    }
    for (r, &c) in complement.iter().enumerate() {
        if c >= n || c == r || complement[c] != r {
            return Err(Error::InvalidParameter("complement map is not an involution".into()));
        }
    }
    let mut out: Vec<Vec<usize>> = vec![Vec::new()];
    if n == 0 {
        return Ok(out);
    }
    let mut heap: BinaryHeap<std::cmp::Reverse<HeapNode>> = BinaryHeap::new();
    heap.push(std::cmp::Reverse(HeapNode {
        sum: costs[0],
        ranks: vec![0],
    }));
    while out.len() <= t {
        let Some(std::cmp::Reverse(node)) = heap.pop() else {
            break;
        };
        let max = *node.ranks.last().unwrap();
        if max + 1 < n {
            let mut shifted = node.ranks.clone();
            *shifted.last_mut().unwrap() = max + 1;
            heap.push(std::cmp::Reverse(HeapNode {
                sum: subset_sum(costs, &shifted),
                ranks: shifted,
            }));
            let mut expanded = node.ranks.clone();
            expanded.push(max + 1);
            heap.push(std::cmp::Reverse(HeapNode {
                sum: subset_sum(costs, &expanded),
                ranks: expanded,
            }));
        }
        if is_valid(&node.ranks, complement) {
            out.push(node.ranks);
        }
    }
    Ok(out)
}

/// A face of the epicenter cube: hash dimension plus crossing direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Face {
    dim: usize,
    sign: i8,
}

/// Sorts faces by cost and returns (costs, face per rank, complement map).
fn ranked_faces(
    cost_of: impl Fn(usize, i8) -> f64,
    tie_of: impl Fn(usize, i8) -> f64,
    fns: usize,
) -> (Vec<f64>, Vec<Face>, Vec<usize>) {
    let mut faces: Vec<(f64, f64, Face)> = Vec::with_capacity(2 * fns);
    for dim in 0..fns {
        for sign in [-1i8, 1] {
            faces.push((cost_of(dim, sign), tie_of(dim, sign), Face { dim, sign }));
        }
    }
    faces.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.partial_cmp(&b.1).unwrap())
            .then(a.2.dim.cmp(&b.2.dim))
            .then(a.2.sign.cmp(&b.2.sign))
    });
    let costs: Vec<f64> = faces.iter().map(|f| f.0).collect();
    let ranks: Vec<Face> = faces.iter().map(|f| f.2).collect();
    let mut complement = vec![0usize; 2 * fns];
    for (r, f) in ranks.iter().enumerate() {
        let partner = ranks
            .iter()
            .position(|g| g.dim == f.dim && g.sign == -f.sign)
            .unwrap();
        complement[r] = partner;
    }
    (costs, ranks, complement)
}

fn subsets_to_sequence(subsets: &[Vec<usize>], ranks: &[Face], fns: usize) -> ProbingSequence {
    let vectors = subsets
        .iter()
        .map(|subset| {
            let mut delta = PerturbationVector::zero(fns);
            for &r in subset {
                delta.0[ranks[r].dim] = ranks[r].sign;
            }
            delta
        })
        .collect();
    ProbingSequence(vectors)
}

/// Top-(T+1) probing sequence for a query geometry, epicenter first.
///
/// For the random-walk and Gaussian families the ranking key is the subset
/// sum of squared face distances; for the Cauchy family it is the exact
/// per-dimension log-probability cost relative to the epicenter.
pub fn optimal_sequence(
    kind: HashFamilyKind,
    geometry: &EpicenterGeometry,
    d: f64,
    t: usize,
) -> Result<ProbingSequence> {
    let fns = geometry.fns();
    let (costs, ranks, complement) = match kind {
        HashFamilyKind::RandomWalk | HashFamilyKind::GaussianProjection => ranked_faces(
            |dim, sign| geometry.face(dim, sign).powi(2),
            |dim, sign| geometry.face(dim, sign),
            fns,
        ),
        HashFamilyKind::CauchyProjection => {
            let mut log_p = vec![[0.0f64; 3]; fns];
            for (dim, row) in log_p.iter_mut().enumerate() {
                for (slot, delta) in [(0usize, -1i8), (1, 0), (2, 1)] {
                    row[slot] = per_dim_landing_prob(
                        kind,
                        geometry.x_minus1(dim),
                        geometry.x_plus1(dim),
                        geometry.w,
                        delta,
                        d,
                    )?
                    .ln();
                }
            }
            ranked_faces(
                |dim, sign| log_p[dim][1] - log_p[dim][(sign + 1) as usize],
                |dim, sign| geometry.face(dim, sign),
                fns,
            )
        }
    };
    let subsets = additive_cost_heap(&costs, &complement, t)?;
    Ok(subsets_to_sequence(&subsets, &ranks, fns))
}

/// Expected squared value of the j-th smallest of 2M face distances
/// (order statistics of M uniform draws on [0, W] mirrored around W/2),
/// 1-based j.
pub fn expected_rank_sq(j: usize, fns: usize, w: f64) -> f64 {
    let m = fns as f64;
    let jf = j as f64;
    if j <= fns {
        jf * (jf + 1.0) / (4.0 * (m + 1.0) * (m + 2.0)) * w * w
    } else {
        let k = 2.0 * m + 1.0 - jf;
        (1.0 - k / (m + 1.0) + k * (k + 1.0) / (4.0 * (m + 1.0) * (m + 2.0))) * w * w
    }
}

/// Builds the universal probing template of length `t` by running the heap
/// on the expected squared rank distances.
pub fn build_template(fns: usize, w: f64, t: usize) -> Result<Template> {
    if fns == 0 || t == 0 {
        return Err(Error::InvalidParameter("need fns >= 1 and t >= 1".into()));
    }
    let costs: Vec<f64> = (1..=2 * fns).map(|j| expected_rank_sq(j, fns, w)).collect();
    let complement: Vec<usize> = (0..2 * fns).map(|r| 2 * fns - 1 - r).collect();
    let mut subsets = additive_cost_heap(&costs, &complement, t)?;
    subsets.remove(0); // templates store only the non-empty subsets
    Ok(Template { fns, w, subsets })
}

/// Instantiates the template for one query by sorting its actual face
/// distances; ties break by dimension index, then the -1 face first.
pub fn instantiate(template: &Template, geometry: &EpicenterGeometry) -> Result<ProbingSequence> {
    if template.fns != geometry.fns() {
        return Err(Error::DimensionMismatch {
            expected: template.fns,
            got: geometry.fns(),
        });
    }
    let fns = template.fns;
    let mut faces: Vec<(f64, usize, i8)> = Vec::with_capacity(2 * fns);
    for dim in 0..fns {
        for sign in [-1i8, 1] {
            faces.push((geometry.face(dim, sign), dim, sign));
        }
    }
    faces.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let ranks: Vec<Face> = faces
        .iter()
        .map(|&(_, dim, sign)| Face { dim, sign })
        .collect();
    let mut vectors = vec![PerturbationVector::zero(fns)];
    for subset in &template.subsets {
        let mut delta = PerturbationVector::zero(fns);
        for &r in subset {
            delta.0[ranks[r].dim] = ranks[r].sign;
        }
        vectors.push(delta);
    }
    Ok(ProbingSequence(vectors))
}

/// Total success probability of a probing sequence, epicenter included.
pub fn total_success_prob(
    kind: HashFamilyKind,
    geometry: &EpicenterGeometry,
    d: f64,
    sequence: &ProbingSequence,
) -> Result<f64> {
    let mut total = 0.0;
    for delta in &sequence.0 {
        total += bucket_success_prob(kind, geometry, &delta.0, d)?;
    }
    Ok(total)
}

#[cfg(test)]
pub(crate) mod test_oracle {
    /// Exhaustive enumeration of all valid subsets sorted by
    /// (sum, lexicographic ranks) — the independent check for the heap.
    pub fn brute_force_subsets(costs: &[f64], complement: &[usize]) -> Vec<Vec<usize>> {
        let n = costs.len();
        let mut all: Vec<(f64, Vec<usize>)> = vec![(0.0, Vec::new())];
        for mask in 1u32..(1 << n) {
            let ranks: Vec<usize> = (0..n).filter(|&r| mask & (1 << r) != 0).collect();
            if ranks.iter().any(|&r| ranks.contains(&complement[r])) {
                continue;
            }
            let sum = ranks.iter().map(|&r| costs[r]).sum();
            all.push((sum, ranks));
        }
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        all.into_iter().map(|(_, r)| r).collect()
    }
}
