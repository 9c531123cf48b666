//! k-NN query pipeline: per-table probing sequence, candidate collection
//! with dedup, exact L1 re-rank, and the recall / overall-ratio metrics.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{l1_distance, Neighbor};
use crate::error::{Error, Result};
use crate::family::{epicenter_geometry, BucketKey, HashFamilyKind};
use crate::index::{probe_bucket, HashIndex};
use crate::multiprobe::{instantiate, optimal_sequence, Template};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceMode {
    /// Epicenter bucket only, one probe per table.
    Single,
    /// Per-query best-first sequence from the additive-cost heap.
    Optimal,
    /// Precomputed template instantiated by sorting face distances.
    Template,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryParams {
    pub k: usize,
    /// Extra buckets probed per table beyond the epicenter; ignored in
    /// single mode.
    pub t: usize,
    pub mode: SequenceMode,
    pub max_candidates: Option<usize>,
    /// Representative point-to-query distance used to rank buckets for the
    /// optimal mode's exact Cauchy costs; squared-distance costs ignore it.
    pub probe_distance: f64,
}

impl Default for QueryParams {
    fn default() -> Self {
        Self {
            k: 50,
            t: 100,
            mode: SequenceMode::Optimal,
            max_candidates: None,
            probe_distance: 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QueryStats {
    pub buckets_probed: usize,
    pub candidates_examined: usize,
    pub dedup_hits: usize,
    pub elapsed_micros: u64,
    /// Fewer than k neighbors were found.
    pub short_result: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    /// Ascending by (distance, id); at most k entries, exact L1 distances.
    pub neighbors: Vec<Neighbor>,
    pub stats: QueryStats,
}

/// k nearest neighbors of a raw real-valued query.
///
/// The query is normalized with the dataset's stored parameters, each
/// table's probing sequence is generated per `params.mode`, candidates are
/// deduplicated across all probes, and survivors are re-ranked by exact L1.
pub fn knn_query(
    index: &HashIndex,
    q_raw: &[f64],
    params: &QueryParams,
    template: Option<&Template>,
) -> Result<QueryResult> {
    let start = Instant::now();
    if params.k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    let q = index.data.params.apply(q_raw)?;
    if index.config.kind == HashFamilyKind::RandomWalk {
        for (dim, (&v, &cap)) in q.iter().zip(&index.data.universe_caps).enumerate() {
            if v > cap {
                return Err(Error::CoordinateOutOfUniverse { dim, value: v, cap });
            }
        }
    }
    let t = match params.mode {
        SequenceMode::Single => 0,
        _ => params.t,
    };
    let mut visited = vec![false; index.data.n()];
    let mut stats = QueryStats::default();
    let mut candidates: Vec<u32> = Vec::new();
    'tables: for (table_idx, fv) in index.functions.iter().enumerate() {
        let geometry = epicenter_geometry(fv, &q)?;
        let shifted = fv.shifted_raw(&q)?;
        let epicenter: Vec<i64> = shifted.iter().map(|v| (v / fv.w).floor() as i64).collect();
        let sequence = match params.mode {
            SequenceMode::Single => {
                crate::multiprobe::ProbingSequence(vec![crate::multiprobe::PerturbationVector::zero(
                    fv.fns,
                )])
            }
            SequenceMode::Optimal => {
                optimal_sequence(index.config.kind, &geometry, params.probe_distance, t)?
            }
            SequenceMode::Template => {
                let template = template.ok_or_else(|| {
                    Error::InvalidParameter("template mode requires a template".into())
                })?;
                instantiate(template, &geometry)?
            }
        };
        for delta in &sequence.0 {
            let key = BucketKey(
                epicenter
                    .iter()
                    .zip(&delta.0)
                    .map(|(&e, &d)| e + d as i64)
                    .collect(),
            );
            stats.buckets_probed += 1;
            for &id in probe_bucket(index, table_idx, &key) {
                if visited[id as usize] {
                    stats.dedup_hits += 1;
                    continue;
                }
                visited[id as usize] = true;
                candidates.push(id);
                if let Some(cap) = params.max_candidates {
                    if candidates.len() >= cap {
                        break 'tables;
                    }
                }
            }
        }
    }
    stats.candidates_examined = candidates.len();
    let mut neighbors: Vec<Neighbor> = candidates
        .iter()
        .map(|&id| {
            Ok(Neighbor {
                point_id: id as usize,
                distance: l1_distance(&q, index.data.point(id as usize))?,
            })
        })
        .collect::<Result<_>>()?;
    neighbors.sort_unstable_by_key(|nb| (nb.distance, nb.point_id));
    neighbors.truncate(params.k);
    stats.short_result = neighbors.len() < params.k;
    stats.elapsed_micros = start.elapsed().as_micros() as u64;
    Ok(QueryResult { neighbors, stats })
}

/// Fraction of returned ids present in the oracle list.
pub fn recall(result: &[Neighbor], truth: &[Neighbor]) -> f64 {
    if result.is_empty() {
        return 0.0;
    }
    let hits = result
        .iter()
        .filter(|nb| truth.iter().any(|t| t.point_id == nb.point_id))
        .count();
    hits as f64 / result.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioStats {
    pub ratio: f64,
    /// Positions skipped because the true distance was 0 and ours was not.
    pub excluded_terms: usize,
    /// Result had fewer entries than the oracle list.
    pub short_result: bool,
}

/// Mean positionwise distance ratio against the exact k-NN, both lists
/// sorted ascending. A zero true distance contributes 1 when matched by a
/// zero returned distance and is excluded otherwise.
pub fn overall_ratio(result: &[Neighbor], truth: &[Neighbor]) -> RatioStats {
    let mut sum = 0.0;
    let mut terms = 0usize;
    let mut excluded = 0usize;
    for (r, t) in result.iter().zip(truth) {
        if t.distance == 0 {
            if r.distance == 0 {
                sum += 1.0;
                terms += 1;
            } else {
                excluded += 1;
            }
        } else {
            sum += r.distance as f64 / t.distance as f64;
            terms += 1;
        }
    }
    RatioStats {
        ratio: if terms > 0 { sum / terms as f64 } else { 1.0 },
        excluded_terms: excluded,
        short_result: result.len() < truth.len(),
    }
}
