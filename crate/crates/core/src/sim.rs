//! Monte Carlo estimation of multi-probe success probabilities over random
//! query geometries, hash-table-count arithmetic, and LSH quality (rho).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{per_dim_landing_prob, EpicenterGeometry, HashFamilyKind};
use crate::multiprobe::{build_template, instantiate, optimal_sequence, total_success_prob};
use crate::rw::{self, walk_sub_seed};

pub const SIM_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceSource {
    Optimal,
    Template,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub kind: HashFamilyKind,
    pub fns: usize,
    pub w: f64,
    /// Point-to-query distances; must be even integers for the random-walk
    /// family.
    pub distances: Vec<f64>,
    pub t_values: Vec<usize>,
    pub runs: usize,
    pub seed: u64,
    pub mode: SequenceSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationCell {
    pub d: f64,
    pub t: usize,
    /// Mean total success probability over the sampled geometries.
    pub estimate: f64,
    pub std_error: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub schema_version: u32,
    pub spec: SimulationSpec,
    pub cells: Vec<SimulationCell>,
}

/// Per run, samples a geometry x_i(-1) ~ Uniform(0, W) i.i.d., builds the
/// probing sequence per mode, and evaluates the total success probability
/// analytically; only the geometry is random. Runs average per cell.
pub fn simulate_success_prob(spec: &SimulationSpec) -> Result<SimulationReport> {
    if spec.runs == 0 {
        return Err(Error::InvalidParameter("runs must be >= 1".into()));
    }
    if spec.fns == 0 || !(spec.w > 0.0) {
        return Err(Error::InvalidParameter("need fns >= 1 and w > 0".into()));
    }
    if spec.kind == HashFamilyKind::RandomWalk {
        for &d in &spec.distances {
            if d.fract() != 0.0 || (d as u64) % 2 != 0 {
                return Err(Error::OddWalkDistance(d as i64));
            }
        }
    }
    let t_max = spec.t_values.iter().copied().max().unwrap_or(0);
    let template = match spec.mode {
        SequenceSource::Template => Some(build_template(spec.fns, spec.w, t_max.max(1))?),
        SequenceSource::Optimal => None,
    };
    let mut cells = Vec::new();
    for &d in &spec.distances {
        // per-run sums of P_T for each requested T, accumulated in parallel
        let sums: Result<Vec<Vec<f64>>> = (0..spec.runs)
            .into_par_iter()
            .map(|run| {
                let sub = walk_sub_seed(spec.seed, run, d.to_bits() as usize, 0);
                let mut rng = ChaCha8Rng::seed_from_u64(sub);
                let xm: Vec<f64> = (0..spec.fns).map(|_| rng.random_range(0.0..spec.w)).collect();
                let geometry = EpicenterGeometry::new(spec.w, xm);
                let sequence = match spec.mode {
                    SequenceSource::Optimal => optimal_sequence(spec.kind, &geometry, d, t_max)?,
                    SequenceSource::Template => {
                        instantiate(template.as_ref().unwrap(), &geometry)?
                    }
                };
                // prefix sums over the sequence give every P_T at once
                let mut prefix = Vec::with_capacity(sequence.0.len());
                let mut acc = 0.0;
                for delta in &sequence.0 {
                    acc += crate::family::bucket_success_prob(spec.kind, &geometry, &delta.0, d)?;
                    prefix.push(acc);
                }
                Ok(spec
                    .t_values
                    .iter()
                    .map(|&t| {
                        let idx = t.min(prefix.len() - 1);
                        prefix[idx]
                    })
                    .collect())
            })
            .collect();
        let sums = sums?;
        for (ti, &t) in spec.t_values.iter().enumerate() {
            let values: Vec<f64> = sums.iter().map(|row| row[ti]).collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            cells.push(SimulationCell {
                d,
                t,
                estimate: mean,
                std_error: (var / n).sqrt(),
                runs: spec.runs,
            });
        }
    }
    Ok(SimulationReport {
        schema_version: SIM_SCHEMA_VERSION,
        spec: spec.clone(),
        cells,
    })
}

/// Smallest table count L with 1 - (1 - p)^L >= target.
pub fn tables_needed(p: f64, target: f64) -> Result<u64> {
    if !(0.0..1.0).contains(&target) || target <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "target {target} outside (0, 1)"
        )));
    }
    if p >= 1.0 {
        return Ok(1);
    }
    if p <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "success probability {p} must be positive"
        )));
    }
    let l = ((1.0 - target).ln() / (1.0 - p).ln()).ceil() as u64;
    // ceil can overshoot by one ulp; settle by direct evaluation
    let ok = |l: u64| 1.0 - (1.0 - p).powi(l as i32) >= target;
    let mut l = l.max(1);
    while l > 1 && ok(l - 1) {
        l -= 1;
    }
    while !ok(l) {
        l += 1;
    }
    Ok(l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityParams {
    pub r1: f64,
    pub r2: f64,
    pub p1: f64,
    pub p2: f64,
    pub rho: f64,
    /// "exact" for closed forms, "quadrature" otherwise.
    pub method: String,
}

/// Geometry-averaged collision probability of the Cauchy family at distance
/// d: closed form (2/pi) atan(W/d) - ln(1 + (W/d)^2) / (pi W / d).
pub fn cauchy_collision_probability(d: f64, w: f64) -> f64 {
    let r = w / d;
    2.0 / std::f64::consts::PI * r.atan() - (1.0 + r * r).ln() / (std::f64::consts::PI * r)
}

/// Geometry-averaged delta = 0 landing probability of the Gaussian family,
/// by quadrature over the offset position.
fn gaussian_collision_probability(d: f64, w: f64) -> f64 {
    let steps = 20_000usize;
    let mut acc = 0.0;
    for i in 0..steps {
        let x = (i as f64 + 0.5) / steps as f64 * w;
        acc += per_dim_landing_prob(HashFamilyKind::GaussianProjection, x, w - x, w, 0, d).unwrap();
    }
    acc / steps as f64
}

/// p1, p2 and rho = log(1/p1)/log(1/p2) for one family at radii r1 < r2.
pub fn quality(kind: HashFamilyKind, w: f64, r1: f64, r2: f64) -> Result<QualityParams> {
    if r1 > r2 {
        return Err(Error::InvalidParameter("need r1 <= r2".into()));
    }
    let p_of = |d: f64| -> Result<(f64, &'static str)> {
        match kind {
            HashFamilyKind::RandomWalk => {
                if d.fract() != 0.0 || (d as u64) % 2 != 0 {
                    return Err(Error::OddWalkDistance(d as i64));
                }
                Ok((rw::collision_probability(d as u64, w as u64)?, "exact"))
            }
            HashFamilyKind::CauchyProjection => Ok((cauchy_collision_probability(d, w), "exact")),
            HashFamilyKind::GaussianProjection => {
                Ok((gaussian_collision_probability(d, w), "quadrature"))
            }
        }
    };
    let (p1, method) = p_of(r1)?;
    let (p2, _) = p_of(r2)?;
    if !(p1 > 0.0 && p1 < 1.0 && p2 > 0.0 && p2 < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "collision probabilities outside (0, 1): p1 = {p1}, p2 = {p2}"
        )));
    }
    Ok(QualityParams {
        r1,
        r2,
        p1,
        p2,
        rho: (1.0 / p1).ln() / (1.0 / p2).ln(),
        method: method.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rw_spec(mode: SequenceSource, runs: usize) -> SimulationSpec {
        SimulationSpec {
            kind: HashFamilyKind::RandomWalk,
            fns: 10,
            w: 8.0,
            distances: vec![6.0],
            t_values: vec![30],
            runs,
            seed: 2024,
            mode,
        }
    }

    #[test]
    fn simulation_is_deterministic_under_seed() {
        let spec = rw_spec(SequenceSource::Optimal, 50);
        let a = simulate_success_prob(&spec).unwrap();
        let b = simulate_success_prob(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn estimates_stay_in_unit_interval() {
        let report = simulate_success_prob(&rw_spec(SequenceSource::Template, 100)).unwrap();
        for cell in &report.cells {
            assert!((0.0..=1.0).contains(&cell.estimate));
            assert!(cell.std_error >= 0.0);
        }
    }

    #[test]
    fn monotone_in_t_and_distance() {
        let spec = SimulationSpec {
            distances: vec![6.0, 12.0],
            t_values: vec![0, 30, 100],
            runs: 200,
            ..rw_spec(SequenceSource::Optimal, 200)
        };
        let report = simulate_success_prob(&spec).unwrap();
        let get = |d: f64, t: usize| {
            report
                .cells
                .iter()
                .find(|c| c.d == d && c.t == t)
                .unwrap()
                .estimate
        };
        assert!(get(6.0, 30) >= get(6.0, 0));
        assert!(get(6.0, 100) >= get(6.0, 30));
        assert!(get(6.0, 100) >= get(12.0, 100));
    }

    #[test]
    fn rejects_odd_rw_distance() {
        let mut spec = rw_spec(SequenceSource::Optimal, 10);
        spec.distances = vec![7.0];
        assert!(simulate_success_prob(&spec).is_err());
    }

    #[test]
    fn t_zero_matches_single_probe_average() {
        // E[P_0] over geometry is p(d)^M
        let spec = SimulationSpec {
            fns: 3,
            distances: vec![6.0],
            t_values: vec![0],
            runs: 30_000,
            ..rw_spec(SequenceSource::Optimal, 0)
        };
        let report = simulate_success_prob(&spec).unwrap();
        let p = rw::collision_probability(6, 8).unwrap();
        let want = p.powi(3);
        let got = report.cells[0].estimate;
        assert!((got - want).abs() < 0.004, "got {got}, want {want}");
    }

    #[test]
    fn tables_needed_known_values() {
        assert_eq!(tables_needed(0.57, 0.99).unwrap(), 6);
        assert_eq!(tables_needed(0.999999, 0.99).unwrap(), 1);
        // direct evaluation of ceil(ln 0.01 / ln 0.9732)
        assert_eq!(tables_needed(0.0268, 0.99).unwrap(), 170);
        assert!(tables_needed(0.0, 0.5).is_err());
        assert!(tables_needed(0.5, 1.5).is_err());
    }

    #[test]
    fn tables_needed_is_minimal() {
        for &(p, target) in &[(0.1, 0.9), (0.57, 0.99), (0.0268, 0.99), (0.9, 0.999)] {
            let l = tables_needed(p, target).unwrap();
            assert!(1.0 - (1.0 - p).powi(l as i32) >= target);
            if l > 1 {
                assert!(1.0 - (1.0 - p).powi(l as i32 - 1) < target);
            }
        }
    }

    #[test]
    fn cauchy_closed_form_hand_value() {
        // W = 20, d = 6
        let p = cauchy_collision_probability(6.0, 20.0);
        assert!((p - 0.5762).abs() < 0.0005, "{p}");
    }

    #[test]
    fn quality_equal_radii_gives_rho_one() {
        let q = quality(HashFamilyKind::RandomWalk, 8.0, 6.0, 6.0).unwrap();
        assert!((q.rho - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_walk_rho_slightly_worse_than_cauchy() {
        let rw_q = quality(HashFamilyKind::RandomWalk, 8.0, 6.0, 12.0).unwrap();
        let cp_q = quality(HashFamilyKind::CauchyProjection, 20.0, 6.0, 12.0).unwrap();
        assert!(rw_q.rho > cp_q.rho);
        assert!(rw_q.rho < 1.0 && cp_q.rho < 1.0);
    }

    #[test]
    fn rho_invariant_under_log_base() {
        let q = quality(HashFamilyKind::CauchyProjection, 20.0, 6.0, 12.0).unwrap();
        let base10 = (1.0 / q.p1).log10() / (1.0 / q.p2).log10();
        assert!((q.rho - base10).abs() < 1e-12);
    }
}
