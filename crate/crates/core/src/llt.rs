//! Quenched local limit statistics: hybrid slice measures, L1 distances,
//! space-time convolution, the normalizer `Z`, and quenched/annealed box
//! comparison events.

use alloc::format;
use alloc::vec::Vec;

use crate::density::{phi_field, DensityField};
use crate::env::{BackboneField, EnvironmentWindow};
use crate::error::{Error, Result};
use crate::geometry::{BoxRegion, LatticeGeometry, Point, Site};
use crate::pmf::SpatialPmf;
use crate::stats;
use crate::walk::{push_forward, quenched_law, quenched_slices, LawFamily, QuenchedKernel};

/// Tiling of `Z^d` by cubes `prod_i [k_i l, (k_i + 1) l)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoxPartition {
    pub d: usize,
    pub side: i64,
}

pub fn partition_boxes(d: usize, side: i64) -> Result<BoxPartition> {
    if side < 1 {
        return Err(Error::invalid("box side must be at least 1"));
    }
    if d == 0 || d > crate::MAX_DIM {
        return Err(Error::invalid("dimension out of range"));
    }
    Ok(BoxPartition { d, side })
}

impl BoxPartition {
    /// Cell index `floor(x / side)` per axis.
    pub fn cell_of(&self, x: &Point) -> Point {
        let mut c = Point::ORIGIN;
        for i in 0..self.d {
            c.0[i] = x.0[i].div_euclid(self.side);
        }
        c
    }

    pub fn cell_box(&self, cell: &Point) -> BoxRegion {
        let mut lo = Point::ORIGIN;
        for i in 0..self.d {
            lo.0[i] = cell.0[i] * self.side;
        }
        BoxRegion::cube(self.d, lo, self.side)
    }

    /// The box `Delta_x` containing `x`.
    pub fn box_of(&self, x: &Point) -> BoxRegion {
        self.cell_box(&self.cell_of(x))
    }

    /// Smallest union of boxes covering `region`.
    pub fn cover(&self, region: &BoxRegion) -> BoxRegion {
        self.box_of(&region.lo).union(&self.box_of(&region.hi))
    }

    /// Boxes meeting `region`, first axis fastest.
    pub fn boxes_meeting(&self, region: &BoxRegion) -> Vec<BoxRegion> {
        let cells = BoxRegion::new(self.d, self.cell_of(&region.lo), self.cell_of(&region.hi));
        cells.points().map(|c| self.cell_box(&c)).collect()
    }
}

/// The three slice measures comparing annealed-times-density, quenched,
/// and box-smoothed quenched laws, all stored on one box.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HybridMeasureSet {
    pub time: i64,
    pub ann_pre: SpatialPmf,
    pub que: SpatialPmf,
    pub box_pre: SpatialPmf,
    pub z: f64,
    /// Boxes whose density sum vanished; their quenched mass is spread
    /// uniformly.
    pub degenerate_boxes: usize,
}

/// `Z = sum_x annealed(x) phi(x) / sum_x annealed(x)`.
pub fn z_normalizer(annealed: &SpatialPmf, phi: &DensityField) -> Result<f64> {
    if annealed.time != phi.time {
        return Err(Error::SliceMismatch(annealed.time, phi.time));
    }
    let mut terms = Vec::new();
    let mut masses = Vec::new();
    for (x, m) in annealed.iter() {
        if m != 0.0 {
            let v = phi.get(&x).ok_or_else(|| Error::structural("density field does not cover the annealed support"))?;
            terms.push(m * v);
            masses.push(m);
        }
    }
    let total = stats::sum(masses);
    if total <= 0.0 {
        return Ok(0.0);
    }
    Ok(stats::sum(terms) / total)
}

/// Builds the hybrid measures from precomputed slice laws.
pub fn hybrid_from_laws(
    quenched: &SpatialPmf,
    annealed: &SpatialPmf,
    phi: &DensityField,
    partition: &BoxPartition,
) -> Result<HybridMeasureSet> {
    let t = quenched.time;
    for other in [annealed.time, phi.time] {
        if other != t {
            return Err(Error::SliceMismatch(other, t));
        }
    }
    let region = partition.cover(&quenched.region.union(&annealed.region));
    if !phi.region.contains_box(&region) {
        return Err(Error::structural("density field does not cover the box cover of the law supports"));
    }
    let que = quenched.embed(region)?;
    let ann = annealed.embed(region)?;
    let phi_at = |x: &Point| phi.get(x).unwrap();
    let z = z_normalizer(&ann, phi)?;
    if z.is_nan() || z <= 0.0 {
        return Err(Error::structural("normalizer Z vanishes"));
    }
    let mut ann_pre = ann.clone();
    for (i, x) in region.points().enumerate() {
        ann_pre.mass[i] = ann.mass[i] * phi_at(&x) / z;
    }
    let mut box_pre = SpatialPmf::zeros(t, quenched.anchor, region);
    let mut degenerate_boxes = 0;
    for b in partition.boxes_meeting(&region) {
        let q = que.mass_in(&b);
        let s = phi.sum_over(&b).unwrap();
        if s == 0.0 {
            degenerate_boxes += 1;
        }
        for x in b.points() {
            let i = region.index_of(&x).unwrap();
            box_pre.mass[i] = if s == 0.0 { q / b.len() as f64 } else { q * phi_at(&x) / s };
        }
    }
    Ok(HybridMeasureSet { time: t, ann_pre, que, box_pre, z, degenerate_boxes })
}

/// Hybrid measures at time `n` for the walk from `(o, 0)`.
pub fn hybrid_measures(
    backbone: &BackboneField,
    env: &EnvironmentWindow,
    n: u64,
    side: i64,
    phi: &DensityField,
    annealed: &SpatialPmf,
) -> Result<HybridMeasureSet> {
    let q = quenched_law(backbone, env, Site::origin(), n)?;
    hybrid_from_laws(&q, annealed, phi, &partition_boxes(env.geometry().dim(), side)?)
}

/// `sum_x |a(x) - b(x)|` over the union of the stored boxes.
pub fn l1_distance(a: &SpatialPmf, b: &SpatialPmf) -> Result<f64> {
    if a.time != b.time {
        return Err(Error::SliceMismatch(a.time, b.time));
    }
    let region = a.region.union(&b.region);
    Ok(stats::sum(region.points().map(|x| libm::fabs(a.get(&x) - b.get(&x)))))
}

/// Space-time convolution of `nu` with the `k`-step quenched laws started
/// from each site of its slice.
pub fn convolve(backbone: &BackboneField, env: &EnvironmentWindow, nu: &SpatialPmf, k: u64) -> Result<SpatialPmf> {
    push_forward(&QuenchedKernel::new(env, backbone)?, nu, k)
}

/// The quenched local limit statistic and its normalized variant.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LltReport {
    pub n: u64,
    pub depth: u64,
    /// `sum_x |P_omega(X_n = x) - P(X_n = x) phi(x, n)|`.
    pub statistic: f64,
    /// Same sum with `phi / Z` in place of `phi`.
    pub normalized: f64,
    pub z: f64,
}

pub fn llt_from_laws(quenched: &SpatialPmf, annealed: &SpatialPmf, phi: &DensityField) -> Result<LltReport> {
    if quenched.time != annealed.time {
        return Err(Error::SliceMismatch(annealed.time, quenched.time));
    }
    let z = z_normalizer(annealed, phi)?;
    let region = quenched.region.union(&annealed.region);
    let mut raw = Vec::with_capacity(region.len());
    let mut norm = Vec::with_capacity(region.len());
    for x in region.points() {
        let q = quenched.get(&x);
        let a = annealed.get(&x);
        let f = if a == 0.0 { 0.0 } else { phi.get(&x).ok_or_else(|| Error::structural("density field does not cover the annealed support"))? };
        raw.push(libm::fabs(q - a * f));
        norm.push(libm::fabs(q - a * f / z));
    }
    Ok(LltReport {
        n: (quenched.time - quenched.anchor.n) as u64,
        depth: phi.depth,
        statistic: stats::sum(raw),
        normalized: stats::sum(norm),
        z,
    })
}

/// Window for the local limit statistics at time `n` with density depth
/// `depth`, boxes of side `side`, a convolution lag `k`, and a safety
/// margin applied in time and space.
pub fn llt_geometry(d: usize, n: u64, depth: u64, side: i64, k: u64, margin: i64) -> Result<LatticeGeometry> {
    let n = n as i64;
    let t_min = 0.min(n - k as i64 - depth as i64);
    LatticeGeometry::new(d, n + side + depth as i64 + 1 + margin, t_min, n + margin)
}

/// Local limit statistic at time `n` for the walk from `(o, 0)`.
pub fn llt_statistic(backbone: &BackboneField, env: &EnvironmentWindow, n: u64, depth: u64, family: &dyn LawFamily) -> Result<LltReport> {
    let q = quenched_law(backbone, env, Site::origin(), n)?;
    let a = family.law_from(&Site::origin(), n as i64)?;
    let phi = phi_field(backbone, env, n as i64, q.region.union(&a.pmf.region), depth)?;
    llt_from_laws(&q, &a.pmf, &phi)
}

/// Distances of the three-step comparison chain at time `n`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LChainReport {
    pub n: u64,
    pub k: u64,
    pub side: i64,
    pub depth: u64,
    /// `|ann_pre - ann_pre * que|`.
    pub l1: f64,
    /// `|ann_pre * que - box_pre * que|`.
    pub l2: f64,
    /// `|box_pre * que - que * que|`.
    pub l3: f64,
    /// `|que * que - que|`; zero up to round-off.
    pub markov_residual: f64,
    pub z: f64,
    pub llt: LltReport,
    /// `markov_residual + l1 + l2 + l3 + |1 - z|`, an upper bound for
    /// `llt.statistic`.
    pub closure_bound: f64,
    pub degenerate_boxes: usize,
}

/// `k = ceil(n^eps)` and `l = ceil(n^delta)`, validating
/// `0 < 2 delta < eps < 1/4`.
pub fn chain_scales(n: u64, eps: f64, delta: f64) -> Result<(u64, i64)> {
    if !(delta > 0.0 && 2.0 * delta < eps && eps < 0.25) {
        return Err(Error::invalid("need 0 < 2 delta < eps < 1/4"));
    }
    let nf = n as f64;
    let k = stats::robust_ceil(libm::pow(nf, eps)) as u64;
    let side = stats::robust_ceil(libm::pow(nf, delta)) as i64;
    if k > n {
        return Err(Error::invalid("lag k exceeds n"));
    }
    Ok((k, side.max(1)))
}

pub fn l_chain(
    backbone: &BackboneField,
    env: &EnvironmentWindow,
    n: u64,
    eps: f64,
    delta: f64,
    depth: u64,
    family: &dyn LawFamily,
) -> Result<LChainReport> {
    let (k, side) = chain_scales(n, eps, delta)?;
    let d = env.geometry().dim();
    let partition = partition_boxes(d, side)?;
    let o = Site::origin();
    let slices = quenched_slices(backbone, env, o, &[n - k, n])?;
    let (q0, q1) = (&slices[0], &slices[1]);
    let a0 = family.law_from(&o, (n - k) as i64)?.pmf;
    let a1 = family.law_from(&o, n as i64)?.pmf;
    let phi0 = phi_field(backbone, env, (n - k) as i64, partition.cover(&q0.region.union(&a0.region)), depth)?;
    let phi1 = phi_field(backbone, env, n as i64, partition.cover(&q1.region.union(&a1.region)), depth)?;
    let h0 = hybrid_from_laws(q0, &a0, &phi0, &partition)?;
    let h1 = hybrid_from_laws(q1, &a1, &phi1, &partition)?;
    let ann_conv = convolve(backbone, env, &h0.ann_pre, k)?;
    let box_conv = convolve(backbone, env, &h0.box_pre, k)?;
    let que_conv = convolve(backbone, env, &h0.que, k)?;
    let l1 = l1_distance(&h1.ann_pre, &ann_conv)?;
    let l2 = l1_distance(&ann_conv, &box_conv)?;
    let l3 = l1_distance(&box_conv, &que_conv)?;
    let markov_residual = l1_distance(&que_conv, q1)?;
    let llt = llt_from_laws(q1, &a1, &phi1)?;
    let closure_bound = markov_residual + l1 + l2 + l3 + libm::fabs(1.0 - h1.z);
    Ok(LChainReport {
        n,
        k,
        side,
        depth,
        l1,
        l2,
        l3,
        markov_residual,
        z: h1.z,
        llt,
        closure_bound,
        degenerate_boxes: h0.degenerate_boxes + h1.degenerate_boxes,
    })
}

/// Which quenched/annealed box comparison to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BoxEventKind {
    /// Discrepancy at every `M` of the grid, threshold `N^{d(theta-1)/2}`.
    G1,
    /// Quenched box mass at every `M` of the grid, threshold
    /// `log^h(N) N^{-d(1-theta)/2}`; `None` uses the smallest `h` that holds.
    G2 { h: Option<u32> },
    /// Discrepancy at time `N`, threshold `N^{-d(1-theta)/2 - 3 theta/20}`.
    G4,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoxEventReport {
    pub kind: BoxEventKind,
    pub start: Site,
    pub big_n: u64,
    pub theta: f64,
    pub side: i64,
    /// Times at which boxes were compared.
    pub times: Vec<i64>,
    pub boxes_scanned: usize,
    /// Largest discrepancy (G1, G4) or quenched box mass (G2).
    pub max_value: f64,
    pub threshold: f64,
    pub holds: bool,
    /// Smallest integer `h` for which the G2 bound holds.
    pub min_h: Option<u32>,
    /// The start is off the backbone; the G4 event is then implied.
    pub off_backbone: bool,
}

impl BoxEventReport {
    pub fn holds_or_off_backbone(&self) -> bool {
        self.holds || self.off_backbone
    }
}

/// Box side `ceil(N^{theta/2})`.
pub fn theta_box_side(big_n: u64, theta: f64) -> i64 {
    (stats::robust_ceil(libm::pow(big_n as f64, theta / 2.0)) as i64).max(1)
}

/// Eight equally spaced times in `[2N/5, N]`, rounded to integers.
pub fn g1_time_grid(big_n: u64) -> Vec<i64> {
    let lo = 2.0 * big_n as f64 / 5.0;
    let hi = big_n as f64;
    let mut out: Vec<i64> = (0..8).map(|i| libm::round(lo + i as f64 * (hi - lo) / 7.0) as i64).collect();
    out.dedup();
    out
}

/// Half-width `sqrt(N) log^3 N` of the spatial window of admissible boxes.
pub fn box_window_radius(big_n: u64) -> f64 {
    let l = libm::log(big_n as f64);
    libm::sqrt(big_n as f64) * l * l * l
}

/// Window for box events from `start` up to time `N`.
pub fn box_event_geometry(d: usize, start: &Site, big_n: u64, margin: i64) -> Result<LatticeGeometry> {
    let steps = big_n as i64 - start.n;
    LatticeGeometry::new(d, start.x.norm() + steps + 1 + margin, start.n, big_n as i64 + margin)
}

pub fn box_comparison_event(
    backbone: &BackboneField,
    env: &EnvironmentWindow,
    start: Site,
    big_n: u64,
    theta: f64,
    kind: BoxEventKind,
    family: &dyn LawFamily,
) -> Result<BoxEventReport> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::invalid("theta out of (0,1]"));
    }
    if big_n < 2 {
        return Err(Error::invalid("N must be at least 2"));
    }
    let d = env.geometry().dim();
    let nf = big_n as f64;
    let start_radius = box_window_radius(big_n) / 24.0;
    if start.n < 0 || 3 * start.n > big_n as i64 || start.x.norm() as f64 > start_radius {
        return Err(Error::invalid(format!("start {start} outside the admissible start window for N = {big_n}")));
    }
    let side = theta_box_side(big_n, theta);
    let partition = partition_boxes(d, side)?;
    let times = match kind {
        BoxEventKind::G4 => alloc::vec![big_n as i64],
        _ => g1_time_grid(big_n),
    };
    let steps: Vec<u64> = times.iter().map(|&t| (t - start.n) as u64).collect();
    let laws = quenched_slices(backbone, env, start, &steps)?;
    let r = libm::floor(box_window_radius(big_n)) as i64;
    let window = BoxRegion::centered(d, Point::ORIGIN, r);
    let mut max_value = 0.0f64;
    let mut boxes_scanned = 0;
    for (q, &t) in laws.iter().zip(&times) {
        let a = family.law_from(&start, t)?.pmf;
        let Some(scan) = q.region.union(&a.region).intersect(&window) else { continue };
        for b in partition.boxes_meeting(&scan) {
            boxes_scanned += 1;
            let qm = q.mass_in(&b);
            let v = match kind {
                BoxEventKind::G2 { .. } => qm,
                _ => libm::fabs(qm - a.mass_in(&b)),
            };
            max_value = max_value.max(v);
        }
    }
    let df = d as f64;
    let base = libm::pow(nf, -df * (1.0 - theta) / 2.0);
    let log_n = libm::log(nf);
    let (threshold, min_h) = match kind {
        BoxEventKind::G1 => (libm::pow(nf, df * (theta - 1.0) / 2.0), None),
        BoxEventKind::G4 => (base * libm::pow(nf, -3.0 * theta / 20.0), None),
        BoxEventKind::G2 { h } => {
            let mut min_h = 0u32;
            while max_value > libm::pow(log_n, min_h as f64) * base && min_h < 256 {
                min_h += 1;
            }
            let used = h.unwrap_or(min_h);
            (libm::pow(log_n, used as f64) * base, Some(min_h))
        }
    };
    let off_backbone = !backbone.xi(&start)?;
    Ok(BoxEventReport {
        kind,
        start,
        big_n,
        theta,
        side,
        times,
        boxes_scanned,
        max_value,
        threshold,
        holds: max_value <= threshold,
        min_h,
        off_backbone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::uniform_phi_field;
    use crate::env::{compute_backbone, generate_environment};
    use crate::walk::{analytic_law, AnalyticFamily};

    fn window(p: f64, seed: u64, n: u64, depth: u64, side: i64, k: u64) -> (EnvironmentWindow, BackboneField) {
        let g = llt_geometry(1, n, depth, side, k, 10).unwrap();
        let env = generate_environment(g, p, seed).unwrap();
        let bb = compute_backbone(&env, g.t_max()).unwrap().with_safety_margin(10);
        (env, bb)
    }

    #[test]
    fn partition_anchoring() {
        let p = partition_boxes(1, 3).unwrap();
        assert_eq!(p.box_of(&Point::x(4)), BoxRegion::new(1, Point::x(3), Point::x(5)));
        assert_eq!(p.box_of(&Point::x(-1)), BoxRegion::new(1, Point::x(-3), Point::x(-1)));
        let unit = partition_boxes(2, 1).unwrap();
        let x = Point::new(&[5, -7]);
        assert_eq!(unit.box_of(&x), BoxRegion::centered(2, x, 0));
        assert!(partition_boxes(1, 0).is_err());
    }

    #[test]
    fn l1_basics() {
        let a = SpatialPmf::point_mass(1, Site::new(Point::x(0), 3));
        let b = SpatialPmf::point_mass(1, Site::new(Point::x(2), 3));
        assert_eq!(l1_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(l1_distance(&a, &b).unwrap(), 2.0);
        let c = SpatialPmf::point_mass(1, Site::new(Point::x(2), 4));
        assert!(matches!(l1_distance(&a, &c), Err(Error::SliceMismatch(3, 4))));
    }

    #[test]
    fn full_cluster_hybrids() {
        let (env, bb) = window(1.0, 1, 20, 10, 3, 0);
        let a = analytic_law(1, Site::origin(), 20);
        let phi = phi_field(&bb, &env, 20, BoxRegion::centered(1, Point::ORIGIN, 23), 10).unwrap();
        let h = hybrid_measures(&bb, &env, 20, 3, &phi, &a).unwrap();
        assert_eq!(h.z, 1.0);
        assert_eq!(h.ann_pre, a.embed(h.ann_pre.region).unwrap());
        let unit = hybrid_measures(&bb, &env, 20, 1, &phi, &a).unwrap();
        assert_eq!(unit.box_pre, unit.que);
        let r = llt_statistic(&bb, &env, 20, 10, &AnalyticFamily { d: 1 }).unwrap();
        assert_eq!(r.statistic, 0.0);
    }

    #[test]
    fn degenerate_box_spreads_uniformly() {
        let q = analytic_law(1, Site::origin(), 2);
        let mut phi = uniform_phi_field(2, BoxRegion::centered(1, Point::ORIGIN, 5), 0);
        for x in -3..=-1 {
            phi.phi[(x + 5) as usize] = 0.0;
        }
        let part = partition_boxes(1, 3).unwrap();
        let h = hybrid_from_laws(&q, &q, &phi, &part).unwrap();
        assert_eq!(h.degenerate_boxes, 1);
        let b = part.box_of(&Point::x(-1));
        let per = q.mass_in(&b) / 3.0;
        for x in b.points() {
            assert!((h.box_pre.get(&x) - per).abs() < 1e-15);
        }
        assert!((h.box_pre.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chain_closure_bounds_statistic() {
        let (k, side) = chain_scales(60, 0.2, 0.05).unwrap();
        let (env, bb) = window(0.7, 3, 60, 30, side, k);
        let fam = AnalyticFamily { d: 1 };
        let r = l_chain(&bb, &env, 60, 0.2, 0.05, 30, &fam).unwrap();
        assert!(r.markov_residual < 1e-10);
        assert!(r.llt.statistic <= r.closure_bound + 1e-6);
        assert!(chain_scales(60, 0.3, 0.05).is_err());
        assert!(chain_scales(60, 0.2, 0.1).is_err());
    }

    #[test]
    fn g1_grid_spacing() {
        assert_eq!(g1_time_grid(70), alloc::vec![28, 34, 40, 46, 52, 58, 64, 70]);
        assert_eq!(theta_box_side(400, 1.0), 20);
        assert_eq!(theta_box_side(400, 0.9), 15);
    }

    #[test]
    fn box_events_vanish_at_full_cluster() {
        let start = Site::origin();
        let g = box_event_geometry(1, &start, 100, 10).unwrap();
        let env = generate_environment(g, 1.0, 0).unwrap();
        let bb = compute_backbone(&env, g.t_max()).unwrap().with_safety_margin(10);
        let fam = AnalyticFamily { d: 1 };
        for kind in [BoxEventKind::G1, BoxEventKind::G4] {
            let r = box_comparison_event(&bb, &env, start, 100, 0.9, kind, &fam).unwrap();
            assert_eq!(r.max_value, 0.0);
            assert!(r.holds);
        }
        let r = box_comparison_event(&bb, &env, start, 100, 1.0, BoxEventKind::G4, &fam).unwrap();
        assert!((r.threshold - libm::pow(100.0, -0.15)).abs() < 1e-15);
        let r = box_comparison_event(&bb, &env, start, 100, 0.9, BoxEventKind::G2 { h: None }, &fam).unwrap();
        assert!(r.holds && r.min_h.is_some());
    }
}
