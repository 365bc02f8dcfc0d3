//! Depth-N estimates of the invariant density of the environment seen from
//! the walk, and box averages of it.
//!
//! `phi_N(x, n) = sum_y P^{(y, n-N)}(X_n = x)`: total mass arriving at
//! `(x, n)` when every site of the time `n - N` slice starts with mass 1.
//! Its mean over i.i.d. environments is exactly 1, and it is harmonic for
//! the quenched kernel in the sense of [`check_harmonicity`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::env::{BackboneField, EnvironmentWindow};
use crate::error::{Error, Result};
use crate::geometry::{BoxRegion, Point, Site};
use crate::pmf::SpatialPmf;
use crate::stats;
use crate::walk::{push_into, KernelSource, QuenchedKernel};

/// Depth-N density values on a region of one time slice.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DensityField {
    pub time: i64,
    pub region: BoxRegion,
    pub depth: u64,
    pub phi: Vec<f64>,
}

impl DensityField {
    pub fn constant(time: i64, region: BoxRegion, depth: u64, value: f64) -> Self {
        DensityField { time, region, depth, phi: vec![value; region.len()] }
    }

    pub fn get(&self, x: &Point) -> Option<f64> {
        self.region.index_of(x).map(|i| self.phi[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (Point, f64)> + '_ {
        self.phi.iter().enumerate().map(move |(i, &v)| (self.region.point_at(i), v))
    }

    /// Sum of `phi` over `b`; `None` if `b` is not covered.
    pub fn sum_over(&self, b: &BoxRegion) -> Option<f64> {
        if !self.region.contains_box(b) {
            return None;
        }
        Some(stats::sum(b.points().map(|x| self.phi[self.region.index_of(&x).unwrap()])))
    }
}

fn check_backward_cone(backbone: &BackboneField, n: i64, region: &BoxRegion, depth: u64) -> Result<()> {
    let g = backbone.geometry();
    if g.dim() != region.d {
        return Err(Error::invalid("region dimension differs from the window"));
    }
    if depth == 0 {
        return Ok(());
    }
    let base = n - depth as i64;
    if base < g.t_min() {
        return Err(Error::structural(format!(
            "backward cone of depth {depth} at time {n} starts at {base}, before window start {}",
            g.t_min()
        )));
    }
    if n - 1 > backbone.last_step_time() {
        return Err(Error::structural(format!(
            "slice {n} exceeds horizon {} minus safety margin {}",
            backbone.horizon(),
            backbone.safety_margin()
        )));
    }
    let reach = region.max_norm() + depth as i64;
    if reach + 1 > g.half_width() {
        return Err(Error::structural(format!(
            "half_width {} < region reach + depth + 1 = {}",
            g.half_width(),
            reach + 1
        )));
    }
    Ok(())
}

fn field_with<K: KernelSource>(kernel: &K, n: i64, region: BoxRegion, depth: u64) -> Result<DensityField> {
    if depth == 0 {
        return Ok(DensityField::constant(n, region, 0, 1.0));
    }
    let start = region.expand(depth as i64);
    let base = Site::new(Point::ORIGIN, n - depth as i64);
    let mut init = SpatialPmf::zeros(base.n, base, start);
    init.mass.iter_mut().for_each(|m| *m = 1.0);
    let out = push_into(kernel, &init, depth, region)?;
    Ok(DensityField { time: n, region, depth, phi: out.mass })
}

/// `phi_N` on every site of `region` at time `n`, from one adjoint pass.
/// Depth 0 gives the constant 1.
pub fn phi_field(backbone: &BackboneField, env: &EnvironmentWindow, n: i64, region: BoxRegion, depth: u64) -> Result<DensityField> {
    check_backward_cone(backbone, n, &region, depth)?;
    let kernel = QuenchedKernel::new(env, backbone)?;
    if uniform_in_cone(&kernel, n, &region, depth)? {
        return Ok(DensityField::constant(n, region, depth, 1.0));
    }
    field_with(&kernel, n, region, depth)
}

/// Every site that can reach `region` within `depth` steps has the uniform
/// kernel, so `phi_N` is exactly 1 there.
fn uniform_in_cone<K: KernelSource>(kernel: &K, n: i64, region: &BoxRegion, depth: u64) -> Result<bool> {
    let full = kernel.neighborhood().len();
    for j in 1..=depth as i64 {
        for x in region.expand(j).points() {
            if kernel.successors(&Site::new(x, n - j))?.count as usize != full {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// `phi_N` at a single site.
pub fn phi_estimate(backbone: &BackboneField, env: &EnvironmentWindow, site: Site, depth: u64) -> Result<f64> {
    let region = BoxRegion::centered(env.geometry().dim(), site.x, 0);
    Ok(phi_field(backbone, env, site.n, region, depth)?.phi[0])
}

/// The field of the environment-free kernel, identically 1.
pub fn uniform_phi_field(n: i64, region: BoxRegion, depth: u64) -> DensityField {
    DensityField::constant(n, region, depth, 1.0)
}

/// `phi_N(site)` for every `N` in `0..=max_depth`, by pulling back the
/// hitting probability `v_j(y) = P^{(y, n-j)}(X_n = x)` one slice at a
/// time: `phi_j = sum_y v_j(y)`.
pub fn phi_profile(backbone: &BackboneField, env: &EnvironmentWindow, site: Site, max_depth: u64) -> Result<Vec<f64>> {
    let d = env.geometry().dim();
    check_backward_cone(backbone, site.n, &BoxRegion::centered(d, site.x, 0), max_depth)?;
    let kernel = QuenchedKernel::new(env, backbone)?;
    let offsets = kernel.neighborhood().offsets().to_vec();
    let mut out = Vec::with_capacity(max_depth as usize + 1);
    out.push(1.0);
    let mut region = BoxRegion::centered(d, site.x, 0);
    let mut v = vec![1.0];
    for j in 1..=max_depth {
        let t = site.n - j as i64;
        let next_region = region.expand(1);
        let mut next = vec![0.0; next_region.len()];
        for (i, slot) in next.iter_mut().enumerate() {
            let y = next_region.point_at(i);
            let s = kernel.successors(&Site::new(y, t))?;
            let mut acc = 0.0;
            let mut mask = s.mask;
            while mask != 0 {
                let k = mask.trailing_zeros() as usize;
                mask &= mask - 1;
                if let Some(idx) = region.index_of(&(y + offsets[k])) {
                    acc += v[idx];
                }
            }
            *slot = acc / s.count as f64;
        }
        region = next_region;
        v = next;
        out.push(stats::sum(v.iter().copied()));
    }
    Ok(out)
}

/// Cesàro mean `(1/n) sum_{N=0}^{n-1} phi_N(site)`.
pub fn cesaro_phi(backbone: &BackboneField, env: &EnvironmentWindow, site: Site, max_depth: u64) -> Result<f64> {
    if max_depth == 0 {
        return Err(Error::invalid("Cesàro mean needs at least one term"));
    }
    let profile = phi_profile(backbone, env, site, max_depth - 1)?;
    Ok(stats::sum(profile.iter().copied()) / max_depth as f64)
}

/// Checks `phi_{N+k}(x, n) = sum_y P^{(y, n-k)}(X_n = x) phi_N(y, n-k)` on
/// every site of `region`; returns the largest absolute difference.
pub fn check_harmonicity(
    backbone: &BackboneField,
    env: &EnvironmentWindow,
    n: i64,
    region: BoxRegion,
    depth: u64,
    k: u64,
) -> Result<f64> {
    let deep = phi_field(backbone, env, n, region, depth + k)?;
    let lower = phi_field(backbone, env, n - k as i64, region.expand(k as i64), depth)?;
    let init = SpatialPmf { time: lower.time, anchor: Site::new(Point::ORIGIN, lower.time), region: lower.region, mass: lower.phi };
    let pushed = push_into(&QuenchedKernel::new(env, backbone)?, &init, k, region)?;
    Ok(deep.phi.iter().zip(&pushed.mass).map(|(a, b)| libm::fabs(a - b)).fold(0.0, f64::max))
}

/// `Delta_o(M)`: the cube of side `M` holding `center`, spanning
/// `center - floor(M/2) ..= center + M - floor(M/2) - 1` on each axis.
pub fn centered_cube(d: usize, center: Point, m: u64) -> BoxRegion {
    let mut lo = center;
    for i in 0..d {
        lo.0[i] -= (m / 2) as i64;
    }
    BoxRegion::cube(d, lo, m as i64)
}

/// Deviation of the box average of `phi` from 1.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConcentrationReport {
    pub m: u64,
    pub mean: f64,
    pub deviation: f64,
    pub region: BoxRegion,
    pub depth: u64,
}

/// `|mean of phi over Delta_o(M) - 1|`, with the cube centred on the
/// field's own centre.
pub fn concentration_statistic(field: &DensityField, m: u64) -> Result<ConcentrationReport> {
    if m == 0 {
        return Err(Error::invalid("box side must be positive"));
    }
    let d = field.region.d;
    let mut center = Point::ORIGIN;
    for i in 0..d {
        center.0[i] = field.region.lo.0[i] + (field.region.hi.0[i] - field.region.lo.0[i] + 1) / 2;
    }
    let region = centered_cube(d, center, m);
    let total = field
        .sum_over(&region)
        .ok_or_else(|| Error::structural(format!("box of side {m} exceeds the density region")))?;
    let mean = total / region.len() as f64;
    Ok(ConcentrationReport { m, mean, deviation: libm::fabs(mean - 1.0), region, depth: field.depth })
}
