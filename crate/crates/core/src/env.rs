//! Bernoulli space-time environments and their backbone fields.
//!
//! States are stored bit-packed, one row of `2L + 1` bits along the first
//! spatial axis per (time, remaining coordinates). The backbone recursion
//! runs word-parallel on those rows.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{LatticeGeometry, Neighborhood, Point, Site};
use crate::seed::{self, open_threshold};
use crate::stats::{wilson_interval, Z95};

/// Where the states of a window came from.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Provenance {
    /// i.i.d. Bernoulli(`p`) states derived from `seed` per site.
    Bernoulli { p: f64, seed: u64 },
    /// States supplied explicitly.
    Explicit,
}

#[derive(Clone, Debug, PartialEq)]
struct PackedField {
    geometry: LatticeGeometry,
    words_per_row: usize,
    words: Vec<u64>,
}

impl PackedField {
    fn zeroed(geometry: LatticeGeometry, slices: usize) -> Result<Self> {
        let words_per_row = geometry.width().div_ceil(64);
        let total = slices
            .checked_mul(geometry.rows_per_slice())
            .and_then(|v| v.checked_mul(words_per_row))
            .ok_or(Error::Capacity { sites: geometry.site_count() as u128 })?;
        let mut words = Vec::new();
        words
            .try_reserve_exact(total)
            .map_err(|_| Error::Capacity { sites: geometry.site_count() as u128 })?;
        words.resize(total, 0);
        Ok(PackedField { geometry, words_per_row, words })
    }

    fn slice_words(&self) -> usize {
        self.geometry.rows_per_slice() * self.words_per_row
    }

    #[inline]
    fn row(&self, slice: usize, row: usize) -> &[u64] {
        let start = (slice * self.geometry.rows_per_slice() + row) * self.words_per_row;
        &self.words[start..start + self.words_per_row]
    }

    #[inline]
    fn row_mut(&mut self, slice: usize, row: usize) -> &mut [u64] {
        let start = (slice * self.geometry.rows_per_slice() + row) * self.words_per_row;
        &mut self.words[start..start + self.words_per_row]
    }

    /// Bit at a site known to be inside the window; `slice` counts from
    /// `t_min`.
    #[inline]
    fn get(&self, slice: usize, x: &Point) -> bool {
        let g = &self.geometry;
        let col = g.col_of(x);
        let idx = (slice * g.rows_per_slice() + g.row_of(x)) * self.words_per_row + col / 64;
        (self.words[idx] >> (col % 64)) & 1 == 1
    }

    fn last_word_mask(&self) -> u64 {
        let rem = self.geometry.width() % 64;
        if rem == 0 {
            u64::MAX
        } else {
            (1u64 << rem) - 1
        }
    }
}

/// A finite block of Bernoulli site states (1 = open).
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentWindow {
    provenance: Provenance,
    field: PackedField,
}

/// Generates i.i.d. Bernoulli(`p`) states on `geometry`.
///
/// Each site's state depends only on `(seed, x, n)`, so regenerating from
/// the same inputs reproduces the window bit for bit.
pub fn generate_environment(geometry: LatticeGeometry, p: f64, seed: u64) -> Result<EnvironmentWindow> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("p out of [0,1]"));
    }
    let mut field = PackedField::zeroed(geometry, geometry.slices())?;
    let threshold = open_threshold(p);
    let rows = geometry.rows_per_slice();
    let mask = field.last_word_mask();
    let width = geometry.width();
    let half = geometry.half_width();
    let d = geometry.dim();
    for slice in 0..geometry.slices() {
        let n = geometry.t_min() + slice as i64;
        for row in 0..rows {
            let words = field.row_mut(slice, row);
            match threshold {
                None => {
                    words.fill(u64::MAX);
                    *words.last_mut().unwrap() &= mask;
                }
                Some(0) => {}
                Some(t) => {
                    let rest = geometry.row_point(row);
                    let key = seed::row_key(seed, n, &rest.0[1..d]);
                    for col in 0..width {
                        let u = seed::site_bits(key, col as i64 - half);
                        if u < t {
                            words[col / 64] |= 1 << (col % 64);
                        }
                    }
                }
            }
        }
    }
    Ok(EnvironmentWindow { provenance: Provenance::Bernoulli { p, seed }, field })
}

impl EnvironmentWindow {
    /// A window whose states are given by `open`.
    pub fn from_fn(geometry: LatticeGeometry, mut open: impl FnMut(&Site) -> bool) -> Result<Self> {
        let mut field = PackedField::zeroed(geometry, geometry.slices())?;
        for (slice, n) in (geometry.t_min()..=geometry.t_max()).enumerate() {
            for x in geometry.spatial_box().points() {
                if open(&Site::new(x, n)) {
                    let col = geometry.col_of(&x);
                    let row = geometry.row_of(&x);
                    field.row_mut(slice, row)[col / 64] |= 1 << (col % 64);
                }
            }
        }
        Ok(EnvironmentWindow { provenance: Provenance::Explicit, field })
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.field.geometry
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// State of a site; errors outside the window.
    pub fn is_open(&self, s: &Site) -> Result<bool> {
        let g = self.geometry();
        if !g.contains(s) {
            return Err(Error::OutOfRange(*s));
        }
        Ok(self.field.get((s.n - g.t_min()) as usize, &s.x))
    }

    pub fn open_count(&self) -> u64 {
        self.field.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// States packed contiguously in site order (time slowest, first axis
    /// fastest), eight per byte, least significant bit first.
    pub fn to_packed_bytes(&self) -> Vec<u8> {
        let g = self.geometry();
        let mut out = vec![0u8; g.site_count().div_ceil(8)];
        let width = g.width();
        let mut k = 0usize;
        for slice in 0..g.slices() {
            for row in 0..g.rows_per_slice() {
                let words = self.field.row(slice, row);
                for col in 0..width {
                    if (words[col / 64] >> (col % 64)) & 1 == 1 {
                        out[k / 8] |= 1 << (k % 8);
                    }
                    k += 1;
                }
            }
        }
        out
    }

    /// Inverse of [`to_packed_bytes`](Self::to_packed_bytes).
    pub fn from_packed_bytes(geometry: LatticeGeometry, provenance: Provenance, bytes: &[u8]) -> Result<Self> {
        let need = geometry.site_count().div_ceil(8);
        if bytes.len() != need {
            return Err(Error::invalid(alloc::format!(
                "expected {need} packed bytes, found {}",
                bytes.len()
            )));
        }
        let mut field = PackedField::zeroed(geometry, geometry.slices())?;
        let width = geometry.width();
        let mut k = 0usize;
        for slice in 0..geometry.slices() {
            for row in 0..geometry.rows_per_slice() {
                let words = field.row_mut(slice, row);
                for col in 0..width {
                    if (bytes[k / 8] >> (k % 8)) & 1 == 1 {
                        words[col / 64] |= 1 << (col % 64);
                    }
                    k += 1;
                }
            }
        }
        Ok(EnvironmentWindow { provenance, field })
    }
}

/// Horizon-truncated backbone indicator: `xi(x, n) = 1` iff an open directed
/// path runs from `(x, n)` to time `horizon` inside the window.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneField {
    horizon: i64,
    margin: i64,
    field: PackedField,
}

/// Backward recursion `xi(., H) = bits(., H)`,
/// `xi(x, n) = bits(x, n) & OR_{||y - x|| <= 1} xi(y, n + 1)`.
pub fn compute_backbone(env: &EnvironmentWindow, horizon: i64) -> Result<BackboneField> {
    let g = *env.geometry();
    if horizon < g.t_min() || horizon > g.t_max() {
        return Err(Error::TimeOutOfRange { time: horizon, lo: g.t_min(), hi: g.t_max() });
    }
    let slices = (horizon - g.t_min() + 1) as usize;
    let mut field = PackedField::zeroed(g, slices)?;
    let sw = field.slice_words();
    let top = slices - 1;
    field.words[top * sw..(top + 1) * sw].copy_from_slice(&env.field.words[top * sw..(top + 1) * sw]);

    let wpr = field.words_per_row;
    let rows = g.rows_per_slice();
    let mask = field.last_word_mask();
    let row_offsets = row_neighbor_offsets(&g);
    let mut union = vec![0u64; wpr];
    for slice in (0..top).rev() {
        let (lower, upper) = field.words.split_at_mut((slice + 1) * sw);
        let next = &upper[..sw];
        let cur = &mut lower[slice * sw..];
        for row in 0..rows {
            union.fill(0);
            let rp = g.row_point(row);
            for off in &row_offsets {
                let q = rp + *off;
                if !g.contains_point(&q) {
                    continue;
                }
                let r2 = g.row_of(&q);
                for (u, w) in union.iter_mut().zip(&next[r2 * wpr..(r2 + 1) * wpr]) {
                    *u |= *w;
                }
            }
            let bits = &env.field.words[(slice * rows + row) * wpr..(slice * rows + row + 1) * wpr];
            let out = &mut cur[row * wpr..(row + 1) * wpr];
            for j in 0..wpr {
                let u = union[j];
                let left = (u << 1) | if j > 0 { union[j - 1] >> 63 } else { 0 };
                let right = (u >> 1) | if j + 1 < wpr { union[j + 1] << 63 } else { 0 };
                out[j] = bits[j] & (u | left | right);
            }
            out[wpr - 1] &= mask;
        }
    }
    Ok(BackboneField { horizon, margin: 0, field })
}

/// Offsets over axes 2..d with sup-norm at most one (first axis zero).
fn row_neighbor_offsets(g: &LatticeGeometry) -> Vec<Point> {
    if g.dim() == 1 {
        return vec![Point::ORIGIN];
    }
    Neighborhood::new(g.dim() - 1)
        .offsets()
        .iter()
        .map(|z| {
            let mut c = [0; crate::MAX_DIM];
            c[1..g.dim()].copy_from_slice(&z.0[..g.dim() - 1]);
            Point(c)
        })
        .collect()
}

const ORACLE_MAX_SLICE_SITES: usize = 20;
const ORACLE_MAX_SLICES: usize = 8;

/// Exhaustive path enumeration oracle for [`compute_backbone`].
///
/// For every site a depth-first search tries explicit open directed paths to
/// the horizon. Exponential; refuses windows above 20 sites per slice or 8
/// slices.
pub fn brute_force_backbone(env: &EnvironmentWindow, horizon: i64) -> Result<BackboneField> {
    let g = *env.geometry();
    if g.slice_sites() > ORACLE_MAX_SLICE_SITES || g.slices() > ORACLE_MAX_SLICES {
        return Err(Error::OracleTooLarge(alloc::format!(
            "{} sites per slice, {} slices",
            g.slice_sites(),
            g.slices()
        )));
    }
    if horizon < g.t_min() || horizon > g.t_max() {
        return Err(Error::TimeOutOfRange { time: horizon, lo: g.t_min(), hi: g.t_max() });
    }
    let nb = Neighborhood::new(g.dim());
    fn reaches(env: &EnvironmentWindow, nb: &Neighborhood, s: Site, horizon: i64) -> bool {
        if !env.is_open(&s).unwrap_or(false) {
            return false;
        }
        if s.n == horizon {
            return true;
        }
        nb.offsets().iter().any(|z| {
            let next = s.shifted(*z, 1);
            env.geometry().contains(&next) && reaches(env, nb, next, horizon)
        })
    }
    let slices = (horizon - g.t_min() + 1) as usize;
    let mut field = PackedField::zeroed(g, slices)?;
    for n in g.t_min()..=horizon {
        for x in g.spatial_box().points() {
            if reaches(env, &nb, Site::new(x, n), horizon) {
                let slice = (n - g.t_min()) as usize;
                let col = g.col_of(&x);
                field.row_mut(slice, g.row_of(&x))[col / 64] |= 1 << (col % 64);
            }
        }
    }
    Ok(BackboneField { horizon, margin: 0, field })
}

impl BackboneField {
    pub fn geometry(&self) -> &LatticeGeometry {
        &self.field.geometry
    }

    pub fn horizon(&self) -> i64 {
        self.horizon
    }

    pub fn safety_margin(&self) -> i64 {
        self.margin
    }

    /// Restricts kernel evaluation to times at least `margin` below the
    /// horizon.
    pub fn with_safety_margin(mut self, margin: i64) -> Self {
        self.margin = margin.max(0);
        self
    }

    /// Last time `n` from which a step `n -> n + 1` may be taken.
    pub fn last_step_time(&self) -> i64 {
        self.horizon - self.margin - 1
    }

    pub fn xi(&self, s: &Site) -> Result<bool> {
        let g = self.geometry();
        if s.n > self.horizon || !g.contains(s) {
            return Err(Error::OutOfRange(*s));
        }
        Ok(self.field.get((s.n - g.t_min()) as usize, &s.x))
    }

    /// Unchecked read for sites known to be in range.
    #[inline]
    pub(crate) fn xi_unchecked(&self, s: &Site) -> bool {
        self.field.get((s.n - self.geometry().t_min()) as usize, &s.x)
    }

    pub fn backbone_count(&self) -> u64 {
        self.field.words.iter().map(|w| w.count_ones() as u64).sum()
    }
}

/// The window seen through the space-time shift `sigma_(y, m)`:
/// `view(x, n) = base(x + y, n + m)`.
#[derive(Clone, Copy, Debug)]
pub struct EnvironmentView<'a> {
    env: &'a EnvironmentWindow,
    backbone: Option<&'a BackboneField>,
    offset: Site,
}

/// View of `env` shifted by `(y, m)`.
pub fn shift_view<'a>(env: &'a EnvironmentWindow, y: Point, m: i64) -> EnvironmentView<'a> {
    EnvironmentView { env, backbone: None, offset: Site::new(y, m) }
}

impl<'a> EnvironmentView<'a> {
    /// Unshifted view carrying the backbone as well.
    pub fn new(env: &'a EnvironmentWindow, backbone: &'a BackboneField) -> Self {
        EnvironmentView { env, backbone: Some(backbone), offset: Site::origin() }
    }

    pub fn with_backbone(mut self, backbone: &'a BackboneField) -> Self {
        self.backbone = Some(backbone);
        self
    }

    pub fn env(&self) -> &'a EnvironmentWindow {
        self.env
    }

    pub fn backbone(&self) -> Option<&'a BackboneField> {
        self.backbone
    }

    /// The shift `(y, m)` as a site of the base window.
    pub fn offset(&self) -> Site {
        self.offset
    }

    /// Composes shifts: `sigma_(y,m) o sigma_(offset)`.
    pub fn shift(&self, y: Point, m: i64) -> Self {
        EnvironmentView { offset: self.offset.shifted(y, m), ..*self }
    }

    pub fn to_base(&self, s: &Site) -> Site {
        s.shifted(self.offset.x, self.offset.n)
    }

    pub fn is_open(&self, s: &Site) -> Result<bool> {
        self.env.is_open(&self.to_base(s))
    }

    pub fn xi(&self, s: &Site) -> Result<bool> {
        match self.backbone {
            Some(bb) => bb.xi(&self.to_base(s)),
            None => Err(Error::invalid("view carries no backbone field")),
        }
    }
}

/// One row of a survival scan.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SurvivalRow {
    pub p: f64,
    pub survived: u64,
    pub replicas: u64,
    pub fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Window used for the survival event of the origin up to `horizon`.
pub fn survival_geometry(d: usize, horizon: i64) -> Result<LatticeGeometry> {
    LatticeGeometry::new(d, horizon.max(1), 0, horizon.max(0))
}

/// Whether `(o, 0)` is joined to time `horizon` in the replica environment
/// with seed `env_seed`. The same seed is used across `p`, which couples the
/// environments monotonically.
pub fn origin_survives(d: usize, p: f64, horizon: i64, env_seed: u64) -> Result<bool> {
    let env = generate_environment(survival_geometry(d, horizon)?, p, env_seed)?;
    let bb = compute_backbone(&env, horizon)?;
    bb.xi(&Site::origin())
}

/// Seed of replica `r` in a survival scan.
pub fn survival_replica_seed(master: u64, r: u64) -> u64 {
    seed::derive_seed(master, r, seed::stream::SURVIVAL)
}

/// Empirical survival fraction of the origin for each `p` with 95% Wilson
/// intervals. `outcomes[r][i]` is replica `r`'s survival at `p_values[i]`.
pub fn survival_table(p_values: &[f64], outcomes: &[Vec<bool>]) -> Vec<SurvivalRow> {
    p_values
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let survived = outcomes.iter().filter(|o| o[i]).count() as u64;
            let replicas = outcomes.len() as u64;
            let (ci_low, ci_high) = wilson_interval(survived, replicas, Z95);
            SurvivalRow {
                p,
                survived,
                replicas,
                fraction: if replicas == 0 { 0.0 } else { survived as f64 / replicas as f64 },
                ci_low,
                ci_high,
            }
        })
        .collect()
}

/// Sequential survival scan over `p_values`.
pub fn survival_scan(d: usize, p_values: &[f64], horizon: i64, replicas: u64, seed: u64) -> Result<Vec<SurvivalRow>> {
    if replicas < 1 {
        return Err(Error::invalid("replicas must be at least 1"));
    }
    let mut outcomes = Vec::with_capacity(replicas as usize);
    for r in 0..replicas {
        let s = survival_replica_seed(seed, r);
        let row = p_values
            .iter()
            .map(|&p| origin_survives(d, p, horizon, s))
            .collect::<Result<Vec<_>>>()?;
        outcomes.push(row);
    }
    Ok(survival_table(p_values, &outcomes))
}

/// Smallest scanned `p` whose survival interval lies above `lower_bound`.
pub fn working_point(rows: &[SurvivalRow], lower_bound: f64) -> Option<f64> {
    rows.iter()
        .filter(|r| r.ci_low > lower_bound)
        .map(|r| r.p)
        .min_by(|a, b| a.partial_cmp(b).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom1(l: i64, t0: i64, t1: i64) -> LatticeGeometry {
        LatticeGeometry::new(1, l, t0, t1).unwrap()
    }

    #[test]
    fn degenerate_probabilities() {
        let g = LatticeGeometry::new(2, 3, -2, 4).unwrap();
        let full = generate_environment(g, 1.0, 9).unwrap();
        assert_eq!(full.open_count(), g.site_count() as u64);
        let empty = generate_environment(g, 0.0, 9).unwrap();
        assert_eq!(empty.open_count(), 0);
        assert!(generate_environment(g, 1.5, 9).is_err());
    }

    #[test]
    fn open_fraction_within_binomial_interval() {
        let g = geom1(500, 0, 199);
        let env = generate_environment(g, 0.5, 2024).unwrap();
        let n = g.site_count() as u64;
        let k = env.open_count();
        let (lo, hi) = wilson_interval(k, n, crate::stats::Z999);
        assert!(lo <= 0.5 && 0.5 <= hi, "{k}/{n} outside 99.9% interval");
    }

    #[test]
    fn generation_matches_per_site_derivation() {
        let g = LatticeGeometry::new(2, 4, -1, 3).unwrap();
        let env = generate_environment(g, 0.37, 77).unwrap();
        let t = open_threshold(0.37).unwrap();
        for s in g.sites() {
            let u = seed::site_uniform(77, s.x.coords(2), s.n);
            assert_eq!(env.is_open(&s).unwrap(), u < t);
        }
    }

    #[test]
    fn p_one_backbone_is_full() {
        let g = geom1(70, 0, 9);
        let env = generate_environment(g, 1.0, 1).unwrap();
        let bb = compute_backbone(&env, 9).unwrap();
        assert!(g.sites().all(|s| bb.xi(&s).unwrap()));
    }

    #[test]
    fn single_open_column() {
        let g = geom1(4, 0, 5);
        let env = EnvironmentWindow::from_fn(g, |s| s.x.0[0] == 2).unwrap();
        let bb = compute_backbone(&env, 5).unwrap();
        let oracle = brute_force_backbone(&env, 5).unwrap();
        assert_eq!(bb, oracle);
        for s in g.sites() {
            assert_eq!(bb.xi(&s).unwrap(), s.x.0[0] == 2);
        }
    }

    #[test]
    fn oracle_refuses_large_windows() {
        let env = generate_environment(geom1(10, 0, 3), 0.5, 1).unwrap();
        assert!(matches!(brute_force_backbone(&env, 3), Err(Error::OracleTooLarge(_))));
        let env = generate_environment(geom1(2, 0, 9), 0.5, 1).unwrap();
        assert!(matches!(brute_force_backbone(&env, 3), Err(Error::OracleTooLarge(_))));
    }

    #[test]
    fn horizon_out_of_range() {
        let env = generate_environment(geom1(3, 0, 5), 0.5, 1).unwrap();
        assert!(compute_backbone(&env, 6).is_err());
        assert!(compute_backbone(&env, -1).is_err());
    }

    #[test]
    fn wide_rows_cross_word_boundaries() {
        // 2L+1 = 131 spans three words; compare with the oracle rule directly.
        let g = geom1(65, 0, 6);
        let env = generate_environment(g, 0.6, 5).unwrap();
        let bb = compute_backbone(&env, 6).unwrap();
        for s in g.sites() {
            let expect = if s.n == 6 {
                env.is_open(&s).unwrap()
            } else {
                env.is_open(&s).unwrap()
                    && (-1..=1).any(|dz| {
                        let y = Site::new(Point::x(s.x.0[0] + dz), s.n + 1);
                        g.contains(&y) && bb.xi(&y).unwrap()
                    })
            };
            assert_eq!(bb.xi(&s).unwrap(), expect, "at {s}");
        }
    }

    #[test]
    fn two_dimensional_backbone_matches_oracle() {
        let g = LatticeGeometry::new(2, 1, 0, 4).unwrap();
        for seed in 0..40 {
            let env = generate_environment(g, 0.55, seed).unwrap();
            assert_eq!(compute_backbone(&env, 4).unwrap(), brute_force_backbone(&env, 4).unwrap());
        }
    }

    #[test]
    fn packed_bytes_roundtrip() {
        let g = LatticeGeometry::new(2, 3, -1, 2).unwrap();
        let env = generate_environment(g, 0.3, 11).unwrap();
        let bytes = env.to_packed_bytes();
        let back = EnvironmentWindow::from_packed_bytes(g, env.provenance(), &bytes).unwrap();
        assert_eq!(env, back);
    }

    #[test]
    fn view_shifts_compose() {
        let g = geom1(6, 0, 6);
        let env = generate_environment(g, 0.5, 3).unwrap();
        let v = shift_view(&env, Point::x(1), 0).shift(Point::x(-1), 0);
        for s in g.sites() {
            assert_eq!(v.is_open(&s).unwrap(), env.is_open(&s).unwrap());
        }
        let v = shift_view(&env, Point::x(2), 1);
        assert_eq!(
            v.is_open(&Site::new(Point::x(-1), 2)).unwrap(),
            env.is_open(&Site::new(Point::x(1), 3)).unwrap()
        );
        assert!(matches!(v.is_open(&Site::new(Point::x(5), 0)), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn survival_extremes() {
        let rows = survival_scan(1, &[0.0, 1.0], 20, 5, 1).unwrap();
        assert_eq!(rows[0].fraction, 0.0);
        assert_eq!(rows[1].fraction, 1.0);
    }
}
