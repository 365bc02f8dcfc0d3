//! The quenched walk: local kernel, path sampling, exact forward laws and
//! Monte Carlo means of them.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::env::{compute_backbone, generate_environment, BackboneField, EnvironmentView, EnvironmentWindow};
use crate::error::{Error, Result};
use crate::geometry::{BoxRegion, LatticeGeometry, Neighborhood, Point, Site};
use crate::pmf::{AveragedLaw, LawAccumulator, SpatialPmf};
use crate::seed;

/// Allowed successors of a site as a bit mask over [`Neighborhood`]
/// indices. Every kernel of the model is uniform on its successor set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Successors {
    pub mask: u128,
    pub count: u32,
}

impl Successors {
    fn all(len: usize) -> Self {
        let mask = if len == 128 { u128::MAX } else { (1u128 << len) - 1 };
        Successors { mask, count: len as u32 }
    }

    /// Index of the `r`-th successor in increasing index order.
    fn nth(&self, mut r: u32) -> usize {
        let mut m = self.mask;
        loop {
            let k = m.trailing_zeros() as usize;
            if r == 0 {
                return k;
            }
            r -= 1;
            m &= m - 1;
        }
    }
}

/// Source of one-step transition kernels.
pub trait KernelSource {
    fn neighborhood(&self) -> &Neighborhood;

    fn successors(&self, site: &Site) -> Result<Successors>;

    fn dim(&self) -> usize {
        self.neighborhood().dim()
    }
}

/// The quenched kernel of a fixed environment: uniform over backbone
/// successors on the backbone, uniform over all `3^d` neighbours off it.
#[derive(Clone, Debug)]
pub struct QuenchedKernel<'a> {
    env: &'a EnvironmentWindow,
    backbone: &'a BackboneField,
    nb: Neighborhood,
}

impl<'a> QuenchedKernel<'a> {
    pub fn new(env: &'a EnvironmentWindow, backbone: &'a BackboneField) -> Result<Self> {
        if env.geometry() != backbone.geometry() {
            return Err(Error::invalid("environment and backbone geometries differ"));
        }
        Ok(QuenchedKernel { env, backbone, nb: Neighborhood::new(env.geometry().dim()) })
    }

    pub fn env(&self) -> &'a EnvironmentWindow {
        self.env
    }

    pub fn backbone(&self) -> &'a BackboneField {
        self.backbone
    }

    fn check_site(&self, site: &Site) -> Result<()> {
        let g = self.env.geometry();
        let last = self.backbone.last_step_time();
        if site.n < g.t_min() || site.n > last {
            return Err(Error::TimeOutOfRange { time: site.n, lo: g.t_min(), hi: last });
        }
        let l = g.half_width();
        if !g.contains_point(&site.x) || site.x.coords(g.dim()).iter().any(|c| c.abs() + 1 > l) {
            return Err(Error::structural(format!("neighbourhood of {site} leaves the window")));
        }
        Ok(())
    }
}

impl KernelSource for QuenchedKernel<'_> {
    fn neighborhood(&self) -> &Neighborhood {
        &self.nb
    }

    #[inline]
    fn successors(&self, site: &Site) -> Result<Successors> {
        self.check_site(site)?;
        if !self.backbone.xi_unchecked(site) {
            return Ok(Successors::all(self.nb.len()));
        }
        let mut mask = 0u128;
        let mut count = 0;
        for (k, z) in self.nb.offsets().iter().enumerate() {
            if self.backbone.xi_unchecked(&site.shifted(*z, 1)) {
                mask |= 1 << k;
                count += 1;
            }
        }
        debug_assert!(count > 0, "backbone site without backbone successor");
        Ok(Successors { mask, count })
    }
}

/// Environment-free uniform kernel over `{z : ||z|| <= 1}`; the walk's
/// kernel when `p` is 0 or 1.
#[derive(Clone, Debug)]
pub struct UniformKernel {
    nb: Neighborhood,
}

impl UniformKernel {
    pub fn new(d: usize) -> Self {
        UniformKernel { nb: Neighborhood::new(d) }
    }
}

impl KernelSource for UniformKernel {
    fn neighborhood(&self) -> &Neighborhood {
        &self.nb
    }

    fn successors(&self, _site: &Site) -> Result<Successors> {
        Ok(Successors::all(self.nb.len()))
    }
}

/// One-step transition probabilities out of a site.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalKernel {
    pub site: Site,
    /// Weight per displacement, indexed as in [`Neighborhood`].
    pub weights: Vec<f64>,
}

impl LocalKernel {
    fn from_successors(site: Site, nb: &Neighborhood, s: Successors) -> Self {
        let w = 1.0 / s.count as f64;
        let weights = (0..nb.len()).map(|k| if s.mask >> k & 1 == 1 { w } else { 0.0 }).collect();
        LocalKernel { site, weights }
    }

    pub fn weight(&self, z: &Point) -> f64 {
        let d = self.dim();
        Neighborhood::new(d).index_of(z).map_or(0.0, |k| self.weights[k])
    }

    pub fn dim(&self) -> usize {
        let mut d = 0;
        while 3usize.pow(d as u32) < self.weights.len() {
            d += 1;
        }
        d
    }

    pub fn total(&self) -> f64 {
        crate::stats::sum(self.weights.iter().copied())
    }
}

/// Transition law of the walk out of `site`.
pub fn step_distribution(backbone: &BackboneField, env: &EnvironmentWindow, site: &Site) -> Result<LocalKernel> {
    let k = QuenchedKernel::new(env, backbone)?;
    let s = k.successors(site)?;
    Ok(LocalKernel::from_successors(*site, &k.nb, s))
}

/// The environment-chain kernel `g(y; omega)` read through a view:
/// `xi_1(y) / sum_z xi_1(z)` when `omega(o, 0) = 1` and the sum is positive,
/// uniform `3^{-d}` otherwise. The returned kernel's site is the view's
/// offset in base coordinates.
pub fn g_kernel(view: &EnvironmentView<'_>) -> Result<LocalKernel> {
    let bb = view.backbone().ok_or_else(|| Error::invalid("view carries no backbone field"))?;
    let d = view.env().geometry().dim();
    let nb = Neighborhood::new(d);
    let origin = view.to_base(&Site::origin());
    if origin.n > bb.last_step_time() {
        return Err(Error::TimeOutOfRange { time: origin.n, lo: view.env().geometry().t_min(), hi: bb.last_step_time() });
    }
    let open = view.is_open(&Site::origin())?;
    let xi1 = nb
        .offsets()
        .iter()
        .map(|z| view.xi(&Site::new(*z, 1)))
        .collect::<Result<Vec<bool>>>()?;
    let total = xi1.iter().filter(|&&b| b).count();
    let weights = if open && total > 0 {
        xi1.iter().map(|&b| if b { 1.0 / total as f64 } else { 0.0 }).collect()
    } else {
        alloc::vec![1.0 / nb.len() as f64; nb.len()]
    };
    Ok(LocalKernel { site: origin, weights })
}

/// One step of the environment seen from the particle: draw `Y` from
/// [`g_kernel`] and return the view shifted by `(Y, 1)`.
pub fn environment_chain_step<'a, R: Rng + ?Sized>(view: &EnvironmentView<'a>, rng: &mut R) -> Result<EnvironmentView<'a>> {
    let kernel = g_kernel(view)?;
    let nb = Neighborhood::new(view.env().geometry().dim());
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut pick = None;
    for (k, &w) in kernel.weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            pick = Some(k);
            if u < acc {
                break;
            }
        }
    }
    let k = pick.ok_or_else(|| Error::structural("empty kernel"))?;
    Ok(view.shift(nb.offsets()[k], 1))
}

/// A walk trajectory `X_m, X_{m+1}, ...` started at `start = (X_m, m)`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WalkPath {
    pub start: Site,
    pub positions: Vec<Point>,
}

impl WalkPath {
    pub fn steps(&self) -> usize {
        self.positions.len() - 1
    }

    /// Position after `k` steps, i.e. at absolute time `start.n + k`.
    pub fn at(&self, k: usize) -> Point {
        self.positions[k]
    }

    pub fn site(&self, k: usize) -> Site {
        Site::new(self.positions[k], self.start.n + k as i64)
    }

    pub fn end(&self) -> Point {
        *self.positions.last().unwrap()
    }

    pub fn is_speed_one(&self) -> bool {
        self.positions.windows(2).all(|w| w[0].dist(&w[1]) <= 1)
    }
}

fn check_cone(env: &EnvironmentWindow, backbone: &BackboneField, start: &Site, steps: u64) -> Result<()> {
    let g = env.geometry();
    if !g.contains(start) {
        return Err(Error::OutOfRange(*start));
    }
    let reach = start.x.norm() + steps as i64;
    if steps > 0 && reach > g.half_width() {
        return Err(Error::structural(format!(
            "cone containment: half_width {} < |start| + steps = {reach}",
            g.half_width()
        )));
    }
    let end = start.n + steps as i64;
    if steps > 0 && end - 1 > backbone.last_step_time() {
        return Err(Error::structural(format!(
            "walk end time {end} exceeds horizon {} minus safety margin {}",
            backbone.horizon(),
            backbone.safety_margin()
        )));
    }
    Ok(())
}

/// Draws a path of `steps` steps from `start` under the quenched law.
pub fn sample_path<R: Rng + ?Sized>(
    backbone: &BackboneField,
    env: &EnvironmentWindow,
    start: Site,
    steps: u64,
    rng: &mut R,
) -> Result<WalkPath> {
    check_cone(env, backbone, &start, steps)?;
    let kernel = QuenchedKernel::new(env, backbone)?;
    sample_with(&kernel, start, steps, rng)
}

pub(crate) fn sample_with<K: KernelSource, R: Rng + ?Sized>(kernel: &K, start: Site, steps: u64, rng: &mut R) -> Result<WalkPath> {
    let mut positions = Vec::with_capacity(steps as usize + 1);
    positions.push(start.x);
    let mut cur = start;
    for _ in 0..steps {
        let s = kernel.successors(&cur)?;
        let r = if s.count == 1 { 0 } else { rng.gen_range(0..s.count) };
        let z = kernel.neighborhood().offsets()[s.nth(r)];
        cur = cur.shifted(z, 1);
        positions.push(cur.x);
    }
    Ok(WalkPath { start, positions })
}

/// One transfer-matrix step: pushes `cur` forward and keeps the mass that
/// lands in `target`. Sites without mass are skipped.
fn push_step<K: KernelSource>(kernel: &K, cur: &SpatialPmf, target: BoxRegion) -> Result<SpatialPmf> {
    let mut next = SpatialPmf::zeros(cur.time + 1, cur.anchor, target);
    let offsets = kernel.neighborhood().offsets();
    for (i, &m) in cur.mass.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let y = cur.region.point_at(i);
        let s = kernel.successors(&Site::new(y, cur.time))?;
        let w = m / s.count as f64;
        let mut mask = s.mask;
        while mask != 0 {
            let k = mask.trailing_zeros() as usize;
            mask &= mask - 1;
            if let Some(j) = target.index_of(&(y + offsets[k])) {
                next.mass[j] += w;
            }
        }
    }
    Ok(next)
}

/// Pushes `init` forward `steps` steps, growing the box by one per step so
/// no mass is lost.
pub fn push_forward<K: KernelSource>(kernel: &K, init: &SpatialPmf, steps: u64) -> Result<SpatialPmf> {
    let mut cur = init.clone();
    for _ in 0..steps {
        let target = cur.region.expand(1);
        cur = push_step(kernel, &cur, target)?;
    }
    Ok(cur)
}

/// Pushes `init` forward with the target box shrinking by one per step, so
/// that after `steps` steps only `final_region` is kept. `init` must be
/// stored on `final_region` expanded by `steps`.
pub fn push_into<K: KernelSource>(kernel: &K, init: &SpatialPmf, steps: u64, final_region: BoxRegion) -> Result<SpatialPmf> {
    if init.region != final_region.expand(steps as i64) {
        return Err(Error::invalid("initial box must be the final box expanded by the step count"));
    }
    let mut cur = init.clone();
    for j in 1..=steps {
        cur = push_step(kernel, &cur, final_region.expand((steps - j) as i64))?;
    }
    Ok(cur)
}

/// Records the pushed law at each requested step count (any order) during
/// one forward pass.
pub fn push_forward_slices<K: KernelSource>(kernel: &K, init: &SpatialPmf, steps: &[u64]) -> Result<Vec<SpatialPmf>> {
    let mut order: Vec<usize> = (0..steps.len()).collect();
    order.sort_by_key(|&i| steps[i]);
    let mut out: Vec<Option<SpatialPmf>> = alloc::vec![None; steps.len()];
    let mut cur = init.clone();
    let mut done = 0u64;
    for i in order {
        cur = push_forward(kernel, &cur, steps[i] - done)?;
        done = steps[i];
        out[i] = Some(cur.clone());
    }
    Ok(out.into_iter().map(Option::unwrap).collect())
}

/// Exact quenched law of `X_{m+n}` for the walk started at `start = (x, m)`.
pub fn quenched_law(backbone: &BackboneField, env: &EnvironmentWindow, start: Site, n: u64) -> Result<SpatialPmf> {
    check_cone(env, backbone, &start, n)?;
    let kernel = QuenchedKernel::new(env, backbone)?;
    push_forward(&kernel, &SpatialPmf::point_mass(env.geometry().dim(), start), n)
}

/// Quenched laws after each of `steps` from `start` in one pass.
pub fn quenched_slices(backbone: &BackboneField, env: &EnvironmentWindow, start: Site, steps: &[u64]) -> Result<Vec<SpatialPmf>> {
    let max = steps.iter().copied().max().unwrap_or(0);
    check_cone(env, backbone, &start, max)?;
    let kernel = QuenchedKernel::new(env, backbone)?;
    push_forward_slices(&kernel, &SpatialPmf::point_mass(env.geometry().dim(), start), steps)
}

/// The environment-free law: `n`-fold convolution of the uniform law on
/// `{z : ||z|| <= 1}`, computed by the same transfer-matrix code as the
/// quenched law.
pub fn analytic_law(d: usize, start: Site, n: u64) -> SpatialPmf {
    push_forward(&UniformKernel::new(d), &SpatialPmf::point_mass(d, start), n).expect("uniform kernel never fails")
}

/// Window used for one annealed replica reaching `max_steps` from `start`.
pub fn annealed_geometry(d: usize, start: &Site, max_steps: u64, margin: i64) -> Result<LatticeGeometry> {
    LatticeGeometry::new(
        d,
        (start.x.norm() + max_steps as i64 + 1).max(1),
        start.n,
        start.n + max_steps as i64 + margin,
    )
}

/// Parameters of a Monte Carlo annealed estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnealedSpec {
    pub d: usize,
    pub p: f64,
    pub start: Site,
    /// Step counts at which the law is recorded.
    pub steps: Vec<u64>,
    pub margin: i64,
}

impl AnnealedSpec {
    pub fn max_steps(&self) -> u64 {
        self.steps.iter().copied().max().unwrap_or(0)
    }

    /// Exact quenched laws of one replica environment.
    pub fn replica(&self, env_seed: u64) -> Result<Vec<SpatialPmf>> {
        let g = annealed_geometry(self.d, &self.start, self.max_steps(), self.margin)?;
        let env = generate_environment(g, self.p, env_seed)?;
        let bb = compute_backbone(&env, g.t_max())?.with_safety_margin(self.margin);
        quenched_slices(&bb, &env, self.start, &self.steps)
    }

    /// Accumulators for each recorded slice.
    pub fn accumulators(&self) -> Vec<LawAccumulator> {
        self.steps
            .iter()
            .map(|&k| {
                LawAccumulator::new(self.start.n + k as i64, self.start, BoxRegion::centered(self.d, self.start.x, k as i64))
            })
            .collect()
    }
}

/// Seed of annealed replica `r`.
pub fn annealed_replica_seed(master: u64, r: u64) -> u64 {
    seed::derive_seed(master, r, seed::stream::ANNEALED)
}

/// Means of exact quenched laws over `replicas` environments, one
/// [`AveragedLaw`] per entry of `spec.steps`. Replicas are added in index
/// order.
pub fn annealed_laws(spec: &AnnealedSpec, replicas: u64, seed: u64) -> Result<Vec<AveragedLaw>> {
    if replicas < 2 {
        return Err(Error::invalid("annealed estimates need at least 2 replicas"));
    }
    let mut acc = spec.accumulators();
    for r in 0..replicas {
        let laws = spec.replica(annealed_replica_seed(seed, r))?;
        for (a, l) in acc.iter_mut().zip(&laws) {
            a.add(l)?;
        }
    }
    Ok(acc.into_iter().map(LawAccumulator::finish).collect())
}

/// Monte Carlo annealed law of `X_{m+n}` from `start`.
pub fn annealed_law(d: usize, p: f64, start: Site, n: u64, replicas: u64, seed: u64) -> Result<AveragedLaw> {
    let spec = AnnealedSpec { d, p, start, steps: alloc::vec![n], margin: crate::DEFAULT_SAFETY_MARGIN };
    Ok(annealed_laws(&spec, replicas, seed)?.remove(0))
}

/// A family of annealed laws indexed by step count, usable from any start
/// by space-time translation invariance.
pub trait LawFamily {
    fn dim(&self) -> usize;

    /// Law after `steps` steps from `(o, 0)`.
    fn origin_law(&self, steps: u64) -> Result<AveragedLaw>;

    /// Law of the walk started at `start`, read at absolute time `time`.
    fn law_from(&self, start: &Site, time: i64) -> Result<AveragedLaw> {
        if time < start.n {
            return Err(Error::invalid("target time precedes start"));
        }
        let mut law = self.origin_law((time - start.n) as u64)?;
        law.pmf = law.pmf.translate(start.x);
        law.pmf.time = time;
        law.pmf.anchor = *start;
        Ok(law)
    }

    /// True when standard errors are identically zero.
    fn is_exact(&self) -> bool {
        false
    }
}

/// Exact environment-free law (valid for `p` in {0, 1}).
#[derive(Clone, Debug)]
pub struct AnalyticFamily {
    pub d: usize,
}

impl LawFamily for AnalyticFamily {
    fn dim(&self) -> usize {
        self.d
    }

    fn origin_law(&self, steps: u64) -> Result<AveragedLaw> {
        self.law_from(&Site::origin(), steps as i64)
    }

    /// Computed directly from `start` by the transfer-matrix pass.
    fn law_from(&self, start: &Site, time: i64) -> Result<AveragedLaw> {
        if time < start.n {
            return Err(Error::invalid("target time precedes start"));
        }
        let pmf = analytic_law(self.d, *start, (time - start.n) as u64);
        let stderr = alloc::vec![0.0; pmf.mass.len()];
        Ok(AveragedLaw { pmf, replicas: 0, stderr })
    }

    fn is_exact(&self) -> bool {
        true
    }
}

/// Monte Carlo annealed laws from the origin at a fixed set of step counts.
#[derive(Clone, Debug, Default)]
pub struct MonteCarloFamily {
    pub d: usize,
    pub laws: BTreeMap<u64, AveragedLaw>,
}

impl MonteCarloFamily {
    pub fn new(d: usize, steps: &[u64], laws: Vec<AveragedLaw>) -> Self {
        MonteCarloFamily { d, laws: steps.iter().copied().zip(laws).collect() }
    }

    /// Runs [`annealed_laws`] from the origin.
    pub fn estimate(d: usize, p: f64, steps: &[u64], replicas: u64, seed: u64, margin: i64) -> Result<Self> {
        let spec = AnnealedSpec { d, p, start: Site::origin(), steps: steps.to_vec(), margin };
        Ok(Self::new(d, steps, annealed_laws(&spec, replicas, seed)?))
    }
}

impl LawFamily for MonteCarloFamily {
    fn dim(&self) -> usize {
        self.d
    }

    fn origin_law(&self, steps: u64) -> Result<AveragedLaw> {
        self.laws
            .get(&steps)
            .cloned()
            .ok_or_else(|| Error::InsufficientData(format!("no annealed law recorded at {steps} steps")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvironmentWindow;

    fn env_1d(l: i64, t: i64, p: f64, seed: u64) -> (EnvironmentWindow, BackboneField) {
        let g = LatticeGeometry::new(1, l, 0, t).unwrap();
        let env = generate_environment(g, p, seed).unwrap();
        let bb = compute_backbone(&env, t).unwrap();
        (env, bb)
    }

    #[test]
    fn off_backbone_kernel_is_uniform() {
        let g = LatticeGeometry::new(1, 3, 0, 3).unwrap();
        let env = EnvironmentWindow::from_fn(g, |s| s.x.0[0] != 0).unwrap();
        let bb = compute_backbone(&env, 3).unwrap();
        let k = step_distribution(&bb, &env, &Site::origin()).unwrap();
        assert_eq!(k.weights, alloc::vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn two_open_successors_share_mass() {
        let g = LatticeGeometry::new(1, 3, 0, 2).unwrap();
        // Successors of the origin at time 1: -1 and +1 open, 0 closed.
        let env = EnvironmentWindow::from_fn(g, |s| !(s.n == 1 && s.x.0[0] == 0)).unwrap();
        let bb = compute_backbone(&env, 2).unwrap();
        let k = step_distribution(&bb, &env, &Site::origin()).unwrap();
        assert_eq!(k.weights, alloc::vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn full_cluster_kernel_is_uniform() {
        let g = LatticeGeometry::new(2, 3, 0, 3).unwrap();
        let env = generate_environment(g, 1.0, 0).unwrap();
        let bb = compute_backbone(&env, 3).unwrap();
        let k = step_distribution(&bb, &env, &Site::origin()).unwrap();
        assert!(k.weights.iter().all(|&w| w == 1.0 / 9.0));
        let gk = g_kernel(&EnvironmentView::new(&env, &bb)).unwrap();
        assert_eq!(gk, k);
    }

    #[test]
    fn g_kernel_closed_origin_is_uniform() {
        let g = LatticeGeometry::new(1, 3, 0, 3).unwrap();
        let env = EnvironmentWindow::from_fn(g, |s| s.n != 0).unwrap();
        let bb = compute_backbone(&env, 3).unwrap();
        let k = g_kernel(&EnvironmentView::new(&env, &bb)).unwrap();
        assert_eq!(k.weights, alloc::vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn kernel_range_errors() {
        let (env, bb) = env_1d(3, 5, 0.7, 1);
        assert!(step_distribution(&bb, &env, &Site::new(Point::x(3), 0)).is_err());
        assert!(step_distribution(&bb, &env, &Site::new(Point::ORIGIN, 5)).is_err());
        let bb = bb.with_safety_margin(2);
        assert!(step_distribution(&bb, &env, &Site::new(Point::ORIGIN, 3)).is_err());
        assert!(step_distribution(&bb, &env, &Site::new(Point::ORIGIN, 2)).is_ok());
    }

    #[test]
    fn zero_steps_is_point_mass() {
        let (env, bb) = env_1d(5, 10, 0.7, 2);
        let law = quenched_law(&bb, &env, Site::new(Point::x(1), 2), 0).unwrap();
        assert_eq!(law.mass, alloc::vec![1.0]);
        assert_eq!(law.time, 2);
        let path = sample_path(&bb, &env, Site::origin(), 0, &mut seed::rng_from_seed(1)).unwrap();
        assert_eq!(path.positions, alloc::vec![Point::ORIGIN]);
    }

    #[test]
    fn full_cluster_one_step() {
        let (env, bb) = env_1d(5, 10, 1.0, 2);
        let law = quenched_law(&bb, &env, Site::origin(), 1).unwrap();
        assert_eq!(law.mass, alloc::vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn quenched_law_equals_analytic_at_extremes() {
        for p in [0.0, 1.0] {
            let (env, bb) = env_1d(40, 45, p, 3);
            let q = quenched_law(&bb, &env, Site::origin(), 30).unwrap();
            let a = analytic_law(1, Site::origin(), 30);
            assert_eq!(q, a);
        }
    }

    #[test]
    fn cone_violation_is_structural() {
        let (env, bb) = env_1d(5, 20, 0.8, 4);
        assert!(matches!(quenched_law(&bb, &env, Site::origin(), 6), Err(Error::Structural(_))));
        let bb = bb.with_safety_margin(18);
        assert!(matches!(quenched_law(&bb, &env, Site::origin(), 3), Err(Error::Structural(_))));
    }

    #[test]
    fn annealed_extremes_have_zero_stderr() {
        for p in [0.0, 1.0] {
            let law = annealed_law(1, p, Site::origin(), 12, 4, 7).unwrap();
            let exact = analytic_law(1, Site::origin(), 12);
            assert_eq!(law.pmf.mass, exact.mass);
            assert!(law.stderr.iter().all(|&s| s == 0.0));
        }
        assert!(annealed_law(1, 0.5, Site::origin(), 3, 1, 7).is_err());
    }

    #[test]
    fn slices_match_separate_passes() {
        let (env, bb) = env_1d(30, 40, 0.7, 5);
        let s = quenched_slices(&bb, &env, Site::origin(), &[12, 3, 20]).unwrap();
        assert_eq!(s[0], quenched_law(&bb, &env, Site::origin(), 12).unwrap());
        assert_eq!(s[1], quenched_law(&bb, &env, Site::origin(), 3).unwrap());
        assert_eq!(s[2], quenched_law(&bb, &env, Site::origin(), 20).unwrap());
    }

    #[test]
    fn analytic_family_translation() {
        let fam = AnalyticFamily { d: 1 };
        let a = fam.law_from(&Site::new(Point::x(2), 1), 6).unwrap();
        let b = fam.origin_law(5).unwrap();
        for x in -5..=5 {
            assert_eq!(a.pmf.get(&Point::x(x + 2)), b.pmf.get(&Point::x(x)));
        }
    }
}
