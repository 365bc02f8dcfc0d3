//! Two walks in one environment: close encounters and cone renewals.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::env::{compute_backbone, generate_environment, BackboneField, EnvironmentWindow};
use crate::error::{Error, Result};
use crate::geometry::{LatticeGeometry, Point, Site};
use crate::seed::{self, stream};
use crate::stats;
use crate::walk::{sample_path, sample_with, UniformKernel, WalkPath};

/// Two paths over a common time range with their sup-norm distances.
#[derive(Clone, Debug, PartialEq)]
pub struct PairTrace {
    pub first: WalkPath,
    pub second: WalkPath,
    pub distances: Vec<i64>,
}

impl PairTrace {
    pub fn new(first: WalkPath, second: WalkPath) -> Result<Self> {
        if first.start.n != second.start.n || first.steps() != second.steps() {
            return Err(Error::invalid("paths must share a time range"));
        }
        let distances = first.positions.iter().zip(&second.positions).map(|(a, b)| a.dist(b)).collect();
        Ok(PairTrace { first, second, distances })
    }

    pub fn steps(&self) -> usize {
        self.first.steps()
    }
}

/// Two conditionally independent paths in the same environment; the
/// second is drawn after the first from the same generator.
pub fn sample_pair<R: Rng + ?Sized>(
    backbone: &BackboneField,
    env: &EnvironmentWindow,
    start: Site,
    other: Site,
    n: u64,
    rng: &mut R,
) -> Result<PairTrace> {
    let a = sample_path(backbone, env, start, n, rng)?;
    let b = sample_path(backbone, env, other, n, rng)?;
    PairTrace::new(a, b)
}

/// As [`sample_pair`] with a generator per walk.
pub fn sample_pair_with<R: Rng + ?Sized, S: Rng + ?Sized>(
    backbone: &BackboneField,
    env: &EnvironmentWindow,
    start: Site,
    other: Site,
    n: u64,
    rng_first: &mut R,
    rng_second: &mut S,
) -> Result<PairTrace> {
    let a = sample_path(backbone, env, start, n, rng_first)?;
    let b = sample_path(backbone, env, other, n, rng_second)?;
    PairTrace::new(a, b)
}

/// `#{1 <= i <= N : ||X_i - X'_i|| < r}`.
pub fn encounter_count(trace: &PairTrace, big_n: u64, r: u64) -> Result<u64> {
    if (trace.steps() as u64) < big_n {
        return Err(Error::invalid("trace shorter than N"));
    }
    Ok(trace.distances[1..=big_n as usize].iter().filter(|&&d| (d as u64) < r).count() as u64)
}

/// Default encounter radius `ceil(ln(N)^2)`.
pub fn encounter_radius(big_n: u64) -> u64 {
    stats::log_squared_ceil(big_n)
}

/// Cone-renewal times of a path (or a pair) and the gaps between them.
/// A time `t` counts when `(X_t, t)` is on the backbone and every earlier
/// position lies in the backward speed-one cone of `(X_t, t)`.
#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RenewalSurrogate {
    /// Absolute times, strictly increasing.
    pub times: Vec<i64>,
    pub gaps: Vec<u64>,
    pub max_gap: u64,
}

impl RenewalSurrogate {
    fn from_times(times: Vec<i64>) -> Self {
        let gaps: Vec<u64> = times.windows(2).map(|w| (w[1] - w[0]) as u64).collect();
        let max_gap = gaps.iter().copied().max().unwrap_or(0);
        RenewalSurrogate { times, gaps, max_gap }
    }

    /// True when every gap is at most `r`.
    pub fn gaps_within(&self, r: u64) -> bool {
        self.max_gap <= r
    }
}

fn in_past_cone(path: &WalkPath, k: usize) -> bool {
    let x = path.at(k);
    (0..k).all(|s| path.at(s).dist(&x) <= (k - s) as i64)
}

fn renewal_flags(path: &WalkPath, on_backbone: &mut dyn FnMut(&Site) -> Result<bool>) -> Result<Vec<bool>> {
    // For speed-one paths the cone condition always holds.
    let speed_one = path.is_speed_one();
    (0..=path.steps())
        .map(|k| Ok(on_backbone(&path.site(k))? && (speed_one || in_past_cone(path, k))))
        .collect()
}

/// Renewal times of one path against an arbitrary backbone indicator.
pub fn cone_renewals_by(path: &WalkPath, mut on_backbone: impl FnMut(&Site) -> Result<bool>) -> Result<RenewalSurrogate> {
    let flags = renewal_flags(path, &mut on_backbone)?;
    let times = flags.iter().enumerate().filter(|(_, &f)| f).map(|(k, _)| path.start.n + k as i64).collect();
    Ok(RenewalSurrogate::from_times(times))
}

pub fn cone_renewal_gaps(path: &WalkPath, backbone: &BackboneField) -> Result<RenewalSurrogate> {
    cone_renewals_by(path, |s| backbone.xi(s))
}

/// Times at which both walks renew.
pub fn joint_renewals_by(trace: &PairTrace, mut on_backbone: impl FnMut(&Site) -> Result<bool>) -> Result<RenewalSurrogate> {
    let a = renewal_flags(&trace.first, &mut on_backbone)?;
    let b = renewal_flags(&trace.second, &mut on_backbone)?;
    let times = a
        .iter()
        .zip(&b)
        .enumerate()
        .filter(|(_, (x, y))| **x && **y)
        .map(|(k, _)| trace.first.start.n + k as i64)
        .collect();
    Ok(RenewalSurrogate::from_times(times))
}

pub fn joint_cone_renewal_gaps(trace: &PairTrace, backbone: &BackboneField) -> Result<RenewalSurrogate> {
    joint_renewals_by(trace, |s| backbone.xi(s))
}

/// Least-squares fit of `ln P(gap > k)` against `k`, over the `k` with at
/// least `min_count` exceedances.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GapTailFit {
    pub ks: Vec<u64>,
    pub log_tail: Vec<f64>,
    pub slope: f64,
    /// `ln P(gap > k)` never increases along `ks`.
    pub monotone: bool,
}

pub fn gap_tail_fit(gaps: &[u64], min_count: u64) -> Option<GapTailFit> {
    if gaps.is_empty() {
        return None;
    }
    let total = gaps.len() as f64;
    let max = gaps.iter().copied().max().unwrap();
    let mut ks = Vec::new();
    let mut log_tail = Vec::new();
    for k in 0..max {
        let c = gaps.iter().filter(|&&g| g > k).count() as u64;
        if c < min_count {
            break;
        }
        ks.push(k);
        log_tail.push(libm::log(c as f64 / total));
    }
    let xs: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    let fit = stats::least_squares(&xs, &log_tail)?;
    let monotone = log_tail.windows(2).all(|w| w[1] <= w[0]);
    Some(GapTailFit { ks, log_tail, slope: fit.slope, monotone })
}

/// Parameters of the close-encounter experiment. Each replica draws one
/// environment and one pair per start offset; the first walk starts at
/// `(o, 0)`, the second at `(offset, 0)`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncounterSpec {
    pub d: usize,
    pub p: f64,
    pub big_n: u64,
    pub radius: u64,
    pub offsets: Vec<Point>,
    pub margin: i64,
}

impl EncounterSpec {
    /// Offsets `0`, `ceil(ln^2 N) e_1` and `ceil(sqrt N) e_1`.
    pub fn new(d: usize, p: f64, big_n: u64, margin: i64) -> Self {
        let r = encounter_radius(big_n);
        let root = stats::robust_ceil(libm::sqrt(big_n as f64)) as i64;
        let mut near = Point::ORIGIN;
        near.0[0] = r as i64;
        let mut far = Point::ORIGIN;
        far.0[0] = root;
        let offsets = vec![Point::ORIGIN, near, far];
        EncounterSpec { d, p, big_n, radius: r, offsets, margin }
    }

    pub fn geometry(&self) -> Result<LatticeGeometry> {
        let reach = self.offsets.iter().map(Point::norm).max().unwrap_or(0);
        LatticeGeometry::new(self.d, reach + self.big_n as i64 + 1 + self.margin, 0, self.big_n as i64 + self.margin)
    }

    fn degenerate(&self) -> bool {
        self.p <= 0.0 || self.p >= 1.0
    }
}

/// Outcome of one encounter replica, per start offset.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncounterReplica {
    pub index: u64,
    pub seed: u64,
    pub counts: Vec<u64>,
    /// Joint cone-renewal summary per offset.
    pub renewals: Vec<u64>,
    pub max_gaps: Vec<u64>,
    pub gaps_within_radius: Vec<bool>,
    /// Individual renewal gaps of the first walk of the first pair.
    pub first_gaps: Vec<u64>,
}

pub fn encounter_replica_seed(master: u64, index: u64) -> u64 {
    seed::derive_seed(master, index, stream::PAIR)
}

/// Runs one replica. For `p` in {0, 1} the walks use the
/// environment-free kernel, which is their exact law there.
pub fn encounter_replica(spec: &EncounterSpec, master: u64, index: u64) -> Result<EncounterReplica> {
    let env_seed = encounter_replica_seed(master, index);
    let mut rng = seed::rng_from_seed(seed::derive_seed(master, index, stream::WALK));
    let mut out = EncounterReplica {
        index,
        seed: env_seed,
        counts: Vec::new(),
        renewals: Vec::new(),
        max_gaps: Vec::new(),
        gaps_within_radius: Vec::new(),
        first_gaps: Vec::new(),
    };
    let n = spec.big_n;
    let record = |out: &mut EncounterReplica, trace: &PairTrace, joint: RenewalSurrogate, single: RenewalSurrogate| -> Result<()> {
        out.counts.push(encounter_count(trace, n, spec.radius)?);
        out.renewals.push(joint.times.len() as u64);
        out.max_gaps.push(joint.max_gap);
        out.gaps_within_radius.push(joint.gaps_within(spec.radius) && !joint.times.is_empty());
        if out.first_gaps.is_empty() {
            out.first_gaps = single.gaps;
        }
        Ok(())
    };
    if spec.degenerate() {
        let kernel = UniformKernel::new(spec.d);
        let open = spec.p >= 1.0;
        for off in &spec.offsets {
            let a = sample_with(&kernel, Site::origin(), n, &mut rng)?;
            let b = sample_with(&kernel, Site::new(*off, 0), n, &mut rng)?;
            let trace = PairTrace::new(a, b)?;
            let joint = joint_renewals_by(&trace, |_| Ok(open))?;
            let single = cone_renewals_by(&trace.first, |_| Ok(open))?;
            record(&mut out, &trace, joint, single)?;
        }
        return Ok(out);
    }
    let g = spec.geometry()?;
    let env = generate_environment(g, spec.p, env_seed)?;
    let bb = compute_backbone(&env, g.t_max())?.with_safety_margin(spec.margin);
    for off in &spec.offsets {
        let trace = sample_pair(&bb, &env, Site::origin(), Site::new(*off, 0), n, &mut rng)?;
        let joint = joint_cone_renewal_gaps(&trace, &bb)?;
        let single = cone_renewal_gaps(&trace.first, &bb)?;
        record(&mut out, &trace, joint, single)?;
    }
    Ok(out)
}

/// Empirical `P(count > N^{1/2 + eps})` for one start offset.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExceedanceRow {
    pub offset: Point,
    pub eps: f64,
    pub threshold: f64,
    pub exceeded: u64,
    pub replicas: u64,
    pub fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_count: f64,
    pub count_stderr: f64,
}

pub fn encounter_threshold(big_n: u64, eps: f64) -> f64 {
    libm::pow(big_n as f64, 0.5 + eps)
}

/// Aggregates replicas into one row per (offset, eps).
pub fn exceedance_table(spec: &EncounterSpec, eps_values: &[f64], replicas: &[EncounterReplica]) -> Vec<ExceedanceRow> {
    let mut rows = Vec::new();
    for (j, off) in spec.offsets.iter().enumerate() {
        let counts: Vec<f64> = replicas.iter().map(|r| r.counts[j] as f64).collect();
        for &eps in eps_values {
            let threshold = encounter_threshold(spec.big_n, eps);
            let exceeded = counts.iter().filter(|&&c| c > threshold).count() as u64;
            let total = counts.len() as u64;
            let (ci_low, ci_high) = stats::wilson_interval(exceeded, total, stats::Z95);
            rows.push(ExceedanceRow {
                offset: *off,
                eps,
                threshold,
                exceeded,
                replicas: total,
                fraction: if total == 0 { f64::NAN } else { exceeded as f64 / total as f64 },
                ci_low,
                ci_high,
                mean_count: stats::mean(&counts),
                count_stderr: stats::std_error(&counts),
            });
        }
    }
    rows
}

/// Serial encounter experiment with the default start offsets.
pub fn encounter_tail_experiment(d: usize, p: f64, big_n: u64, eps: f64, replicas: u64, seed: u64) -> Result<Vec<ExceedanceRow>> {
    if replicas < 100 {
        return Err(Error::invalid("encounter experiment needs at least 100 replicas"));
    }
    let spec = EncounterSpec::new(d, p, big_n, crate::DEFAULT_SAFETY_MARGIN);
    let reps = (0..replicas).map(|i| encounter_replica(&spec, seed, i)).collect::<Result<Vec<_>>>()?;
    Ok(exceedance_table(&spec, &[eps], &reps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(xs: &[i64]) -> WalkPath {
        WalkPath { start: Site::origin(), positions: xs.iter().map(|&x| Point::x(x)).collect() }
    }

    #[test]
    fn counts_and_radius() {
        let a = path(&[0, 1, 2, 3, 4]);
        let same = PairTrace::new(a.clone(), a.clone()).unwrap();
        assert_eq!(encounter_count(&same, 4, 1).unwrap(), 4);
        let far = PairTrace::new(a.clone(), path(&[5, 6, 7, 8, 9])).unwrap();
        assert_eq!(encounter_count(&far, 4, 5).unwrap(), 0);
        assert_eq!(encounter_count(&far, 4, 6).unwrap(), 4);
        assert!(encounter_count(&far, 5, 6).is_err());
        assert_eq!(encounter_radius(10_000), 85);
    }

    #[test]
    fn renewals_on_full_cluster() {
        for xs in [[0, 0, 0, 0], [0, 1, 2, 3]] {
            let r = cone_renewals_by(&path(&xs), |_| Ok(true)).unwrap();
            assert_eq!(r.times, alloc::vec![0, 1, 2, 3]);
            assert!(r.gaps.iter().all(|&g| g == 1));
        }
    }

    #[test]
    fn cone_condition_for_fast_paths() {
        let p = path(&[0, 2, 2, 2]);
        let r = cone_renewals_by(&p, |_| Ok(true)).unwrap();
        assert_eq!(r.times, alloc::vec![0, 2, 3]);
    }

    #[test]
    fn gap_tail_of_geometric_gaps() {
        let mut gaps = Vec::new();
        for k in 1..=8u64 {
            gaps.extend(core::iter::repeat(k).take(1 << (9 - k)));
        }
        let fit = gap_tail_fit(&gaps, 2).unwrap();
        assert!(fit.monotone && fit.slope < -0.5);
    }

    #[test]
    fn default_offsets() {
        let s = EncounterSpec::new(1, 0.7, 10_000, 50);
        assert_eq!(s.offsets, alloc::vec![Point::ORIGIN, Point::x(85), Point::x(100)]);
    }
}
