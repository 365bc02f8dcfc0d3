//! Finite-size checks of annealed smoothness and displacement bounds.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{Point, Site};
use crate::llt::partition_boxes;
use crate::pmf::{AveragedLaw, SpatialPmf};
use crate::stats::{self, LinearFit};
use crate::walk::{AnnealedSpec, LawFamily};

/// The four sup-differences of the annealed law.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Difference {
    /// `|P^{(o,0)}(X_n = x) - P^{(e_1,0)}(X_n = x)|`
    StartSpace,
    /// `|P^{(o,0)}(X_n = x) - P^{(o,1)}(X_n = x)|`
    StartTime,
    /// `|P^{(o,0)}(X_n = x) - P^{(o,0)}(X_n = x + e_1)|`
    TargetSpace,
    /// `|P^{(o,0)}(X_n = x) - P^{(o,0)}(X_{n-1} = x)|`
    TargetTime,
}

impl Difference {
    pub const ALL: [Difference; 4] = [Difference::StartSpace, Difference::StartTime, Difference::TargetSpace, Difference::TargetTime];

    pub fn name(&self) -> &'static str {
        match self {
            Difference::StartSpace => "start_space",
            Difference::StartTime => "start_time",
            Difference::TargetSpace => "target_space",
            Difference::TargetTime => "target_time",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DifferenceSeries {
    pub kind: Difference,
    pub sups: Vec<f64>,
    /// Combined standard error at the maximizing site.
    pub stderrs: Vec<f64>,
    /// Fit of `ln sup` on `ln n`; absent when any point is noise dominated
    /// or fewer than five points are available.
    pub fit: Option<LinearFit>,
    pub noise_dominated: bool,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DerivativeReport {
    pub n_grid: Vec<u64>,
    /// `sup_x P^{(o,0)}(X_n = x)` per grid point.
    pub law_sup: Vec<f64>,
    pub law_fit: Option<LinearFit>,
    pub series: Vec<DifferenceSeries>,
}

impl DifferenceSeries {
    /// Builds a series, flagging it as noise dominated when some standard
    /// error exceeds half its sup; such series are not fitted.
    pub fn from_points(kind: Difference, n_grid: &[u64], sups: Vec<f64>, stderrs: Vec<f64>) -> Self {
        let noise_dominated = sups.iter().zip(&stderrs).any(|(&v, &se)| se > 0.5 * v);
        let fit = if noise_dominated { None } else { log_log_fit(n_grid, &sups) };
        DifferenceSeries { kind, sups, stderrs, fit, noise_dominated }
    }
}

impl DerivativeReport {
    pub fn series(&self, kind: Difference) -> &DifferenceSeries {
        self.series.iter().find(|s| s.kind == kind).unwrap()
    }
}

/// Step counts a family must provide for [`derivative_estimates`].
pub fn required_steps(n_grid: &[u64]) -> Vec<u64> {
    let mut out: Vec<u64> = n_grid.iter().flat_map(|&n| [n - 1, n]).collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn sup_difference(a: &AveragedLaw, b: &AveragedLaw, shift_b: Point) -> (f64, f64) {
    let region = a.pmf.region.union(&b.pmf.region.translate(-shift_b));
    let mut best = (0.0, 0.0);
    for x in region.points() {
        let y = x + shift_b;
        let diff = libm::fabs(a.get(&x) - b.get(&y));
        if diff > best.0 {
            let (sa, sb) = (a.stderr_at(&x), b.stderr_at(&y));
            let se = libm::sqrt(sa * sa + sb * sb);
            best = (diff, se);
        }
    }
    best
}

/// Least-squares fit of `log value` against `log n`; needs at least five
/// points, all values positive.
pub fn log_log_fit(n_grid: &[u64], values: &[f64]) -> Option<LinearFit> {
    if n_grid.len() < 5 || values.iter().any(|&v| v.is_nan() || v <= 0.0) {
        return None;
    }
    let xs: Vec<f64> = n_grid.iter().map(|&n| libm::log(n as f64)).collect();
    let ys: Vec<f64> = values.iter().map(|&v| libm::log(v)).collect();
    stats::least_squares(&xs, &ys)
}

/// Sup-differences and law sups over `n_grid` (increasing, all `>= 1`),
/// with log-log slope fits.
pub fn derivative_estimates(family: &dyn LawFamily, n_grid: &[u64]) -> Result<DerivativeReport> {
    if n_grid.is_empty() || n_grid[0] == 0 || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("n grid must be positive and strictly increasing"));
    }
    let e1 = Point::unit(0);
    let mut law_sup = Vec::with_capacity(n_grid.len());
    let mut raw: [Vec<(f64, f64)>; 4] = Default::default();
    for &n in n_grid {
        let t = n as i64;
        let base = family.law_from(&Site::origin(), t)?;
        let prev = family.law_from(&Site::origin(), t - 1)?;
        law_sup.push(base.pmf.mass.iter().copied().fold(0.0, f64::max));
        let start_space = family.law_from(&Site::new(e1, 0), t)?;
        let start_time = family.law_from(&Site::new(Point::ORIGIN, 1), t)?;
        raw[0].push(sup_difference(&base, &start_space, Point::ORIGIN));
        raw[1].push(sup_difference(&base, &start_time, Point::ORIGIN));
        raw[2].push(sup_difference(&base, &base, e1));
        let mut prev_same_time = prev.clone();
        prev_same_time.pmf.time = t;
        raw[3].push(sup_difference(&base, &prev_same_time, Point::ORIGIN));
    }
    let series = Difference::ALL
        .iter()
        .zip(raw)
        .map(|(&kind, pts)| {
            let sups: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let stderrs: Vec<f64> = pts.iter().map(|p| p.1).collect();
            DifferenceSeries::from_points(kind, n_grid, sups, stderrs)
        })
        .collect();
    let law_fit = log_log_fit(n_grid, &law_sup);
    Ok(DerivativeReport { n_grid: n_grid.to_vec(), law_sup, law_fit, series })
}

/// `sum_Delta sum_{x in Delta} max_{y in Delta} [P(y) - P(x)]` over the
/// anchored partition with the given box side.
pub fn partition_smoothness_with_side(law: &SpatialPmf, side: i64) -> Result<f64> {
    let partition = partition_boxes(law.dim(), side)?;
    let Some(support) = law.support() else { return Ok(0.0) };
    let mut terms = Vec::new();
    for b in partition.boxes_meeting(&support) {
        let vals: Vec<f64> = b.points().map(|x| law.get(&x)).collect();
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        terms.extend(vals.iter().map(|v| max - v));
    }
    Ok(stats::sum(terms))
}

/// Box side `floor(n^eps)` used by [`partition_smoothness`].
pub fn smoothness_side(n: u64, eps: f64) -> i64 {
    stats::robust_floor(libm::pow(n as f64, eps)) as i64
}

/// Smoothness sum with box side `floor(n^eps)`, `n` the law's step count.
pub fn partition_smoothness(law: &SpatialPmf, eps: f64) -> Result<f64> {
    let n = (law.time - law.anchor.n) as u64;
    let side = smoothness_side(n, eps);
    if side < 1 {
        return Err(Error::invalid("floor(n^eps) < 1"));
    }
    partition_smoothness_with_side(law, side)
}

/// Radius `sqrt(n) ln(N)^3` of the displacement tail.
pub fn tail_radius(n: u64, big_n: u64) -> f64 {
    let l = libm::log(big_n as f64);
    libm::sqrt(n as f64) * l * l * l
}

/// Mass of `law` at sup-distance at least `radius` from its anchor.
pub fn tail_mass(law: &SpatialPmf, radius: f64) -> f64 {
    stats::sum(law.iter().filter(|(x, _)| x.dist(&law.anchor.x) as f64 >= radius).map(|(_, m)| m))
}

/// Quenched displacement tails of one replica, per `n` of the grid.
pub fn displacement_replica(d: usize, p: f64, n_grid: &[u64], big_n: u64, env_seed: u64, margin: i64) -> Result<Vec<f64>> {
    let spec = AnnealedSpec { d, p, start: Site::origin(), steps: n_grid.to_vec(), margin };
    let laws = spec.replica(env_seed)?;
    Ok(laws.iter().zip(n_grid).map(|(l, &n)| tail_mass(l, tail_radius(n, big_n))).collect())
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DisplacementRow {
    pub n: u64,
    pub big_n: u64,
    pub radius: f64,
    pub annealed_tail: f64,
    pub stderr: f64,
    pub h_threshold: f64,
    /// Fraction of environments whose quenched tail is at most the
    /// threshold.
    pub h_frequency: f64,
    pub replicas: u64,
}

/// Aggregates per-replica tails (`tails[r][i]` for `n_grid[i]`). The H
/// threshold defaults to the square root of the annealed tail.
pub fn displacement_table(n_grid: &[u64], big_n: u64, tails: &[Vec<f64>], threshold: Option<f64>) -> Vec<DisplacementRow> {
    n_grid
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let col: Vec<f64> = tails.iter().map(|t| t[i]).collect();
            let annealed_tail = stats::mean(&col);
            let h_threshold = threshold.unwrap_or_else(|| libm::sqrt(annealed_tail));
            let held = col.iter().filter(|&&v| v <= h_threshold).count();
            DisplacementRow {
                n,
                big_n,
                radius: tail_radius(n, big_n),
                annealed_tail,
                stderr: if col.len() > 1 { stats::std_error(&col) } else { 0.0 },
                h_threshold,
                h_frequency: held as f64 / col.len() as f64,
                replicas: col.len() as u64,
            }
        })
        .collect()
}

/// Serial displacement experiment.
pub fn displacement_tail(d: usize, p: f64, n_grid: &[u64], big_n: u64, replicas: u64, seed: u64) -> Result<Vec<DisplacementRow>> {
    if replicas == 0 {
        return Err(Error::invalid("replicas must be positive"));
    }
    let tails = (0..replicas)
        .map(|r| displacement_replica(d, p, n_grid, big_n, crate::walk::annealed_replica_seed(seed, r), crate::DEFAULT_SAFETY_MARGIN))
        .collect::<Result<Vec<_>>>()?;
    Ok(displacement_table(n_grid, big_n, &tails, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxRegion;
    use crate::walk::{analytic_law, AnalyticFamily};

    #[test]
    fn analytic_shift_identities() {
        let r = derivative_estimates(&AnalyticFamily { d: 1 }, &[4, 8, 16, 32, 64]).unwrap();
        let (a, b) = (r.series(Difference::StartSpace), r.series(Difference::TargetSpace));
        for (x, y) in a.sups.iter().zip(&b.sups) {
            assert!((x - y).abs() < 1e-12);
        }
        let (a, b) = (r.series(Difference::StartTime), r.series(Difference::TargetTime));
        for (x, y) in a.sups.iter().zip(&b.sups) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(r.series.iter().all(|s| !s.noise_dominated && s.fit.is_some()));
    }

    #[test]
    fn smoothness_degenerate_cases() {
        let law = analytic_law(1, Site::origin(), 20);
        assert_eq!(partition_smoothness_with_side(&law, 1).unwrap(), 0.0);
        let flat = SpatialPmf { time: 4, anchor: Site::origin(), region: BoxRegion::new(1, Point::x(0), Point::x(3)), mass: alloc::vec![0.25; 4] };
        assert_eq!(partition_smoothness_with_side(&flat, 4).unwrap(), 0.0);
        assert!(partition_smoothness(&law, 0.0).is_ok());
        assert_eq!(smoothness_side(1024, 0.1), 2);
    }

    #[test]
    fn tail_beyond_reach_is_zero() {
        let law = analytic_law(1, Site::origin(), 100);
        assert_eq!(tail_mass(&law, tail_radius(100, 100)), 0.0);
        assert!(tail_mass(&law, 10.0) > 0.0);
        let rows = displacement_tail(1, 1.0, &[100], 100, 2, 1).unwrap();
        assert_eq!(rows[0].annealed_tail, 0.0);
        assert_eq!(rows[0].h_frequency, 1.0);
    }
}
