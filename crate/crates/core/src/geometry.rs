//! Space-time lattice `Z^d x Z` restricted to finite windows.

use core::fmt;
use core::ops::{Add, Neg, Sub};

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 4;

/// A spatial lattice point. Coordinates beyond the active dimension are zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Point(pub [i64; MAX_DIM]);

impl Point {
    pub const ORIGIN: Point = Point([0; MAX_DIM]);

    pub fn new(coords: &[i64]) -> Self {
        assert!(coords.len() <= MAX_DIM, "at most {MAX_DIM} coordinates");
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Point(c)
    }

    /// One-dimensional point.
    pub fn x(x: i64) -> Self {
        Point::new(&[x])
    }

    /// Canonical unit vector `e_j` (zero-based axis).
    pub fn unit(axis: usize) -> Self {
        let mut c = [0; MAX_DIM];
        c[axis] = 1;
        Point(c)
    }

    pub fn coords(&self, d: usize) -> &[i64] {
        &self.0[..d]
    }

    /// Sup-norm.
    pub fn norm(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn dist(&self, other: &Point) -> i64 {
        (*self - *other).norm()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        let mut c = self.0;
        for (a, b) in c.iter_mut().zip(rhs.0) {
            *a += b;
        }
        Point(c)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        self + (-rhs)
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point(self.0.map(|c| -c))
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let used = self.0.iter().rposition(|&c| c != 0).map_or(1, |i| i + 1);
        f.debug_list().entries(&self.0[..used]).finish()
    }
}

/// A space-time site `(x, n)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Site {
    pub x: Point,
    pub n: i64,
}

impl Site {
    pub fn new(x: Point, n: i64) -> Self {
        Site { x, n }
    }

    pub const fn origin() -> Self {
        Site { x: Point::ORIGIN, n: 0 }
    }

    /// The site shifted by the space-time offset `(y, m)`.
    pub fn shifted(&self, y: Point, m: i64) -> Site {
        Site { x: self.x + y, n: self.n + m }
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:?}, {})", self.x, self.n)
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Upper bound on the number of stored sites. Keeps every derived byte
/// count well inside `isize::MAX` on 64-bit targets.
const MAX_SITES: u128 = 1 << 40;

/// A finite window `{x : ||x|| <= L} x [t_min, t_max]` of `Z^d x Z`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LatticeGeometry {
    d: usize,
    half_width: i64,
    t_min: i64,
    t_max: i64,
}

impl LatticeGeometry {
    pub fn new(d: usize, half_width: i64, t_min: i64, t_max: i64) -> Result<Self> {
        if d == 0 || d > MAX_DIM {
            return Err(Error::invalid(alloc::format!("dimension {d} not in 1..={MAX_DIM}")));
        }
        if half_width < 1 {
            return Err(Error::invalid("half_width must be at least 1"));
        }
        if t_min > t_max {
            return Err(Error::invalid("t_min > t_max"));
        }
        let g = LatticeGeometry { d, half_width, t_min, t_max };
        let sites = g.site_count_u128();
        if sites > MAX_SITES {
            return Err(Error::Capacity { sites });
        }
        Ok(g)
    }

    fn site_count_u128(&self) -> u128 {
        let w = self.width() as u128;
        let slices = (self.t_max as i128 - self.t_min as i128 + 1) as u128;
        let mut s = slices;
        for _ in 0..self.d {
            s = s.saturating_mul(w);
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn half_width(&self) -> i64 {
        self.half_width
    }

    pub fn t_min(&self) -> i64 {
        self.t_min
    }

    pub fn t_max(&self) -> i64 {
        self.t_max
    }

    /// Sites per spatial axis, `2L + 1`.
    pub fn width(&self) -> usize {
        (2 * self.half_width + 1) as usize
    }

    pub fn slices(&self) -> usize {
        (self.t_max - self.t_min + 1) as usize
    }

    /// Spatial sites in one time slice.
    pub fn slice_sites(&self) -> usize {
        self.width().pow(self.d as u32)
    }

    pub fn site_count(&self) -> usize {
        self.slice_sites() * self.slices()
    }

    /// Number of rows per slice; a row runs along the first axis.
    pub fn rows_per_slice(&self) -> usize {
        self.width().pow(self.d as u32 - 1)
    }

    pub fn contains_point(&self, x: &Point) -> bool {
        x.0[..self.d].iter().all(|c| c.abs() <= self.half_width)
            && x.0[self.d..].iter().all(|&c| c == 0)
    }

    pub fn contains(&self, s: &Site) -> bool {
        s.n >= self.t_min && s.n <= self.t_max && self.contains_point(&s.x)
    }

    /// Row index of `x` within its slice (axes 2..d, row-major, last axis
    /// slowest). Caller guarantees `x` is in range.
    pub(crate) fn row_of(&self, x: &Point) -> usize {
        let w = self.width();
        let mut r = 0usize;
        for axis in (1..self.d).rev() {
            r = r * w + (x.0[axis] + self.half_width) as usize;
        }
        r
    }

    /// Column (bit position) of `x` along the first axis.
    pub(crate) fn col_of(&self, x: &Point) -> usize {
        (x.0[0] + self.half_width) as usize
    }

    /// Spatial coordinates (axes 2..d) of a row; the first axis is zero.
    pub(crate) fn row_point(&self, mut row: usize) -> Point {
        let w = self.width();
        let mut c = [0; MAX_DIM];
        for slot in c.iter_mut().take(self.d).skip(1) {
            *slot = (row % w) as i64 - self.half_width;
            row /= w;
        }
        Point(c)
    }

    /// The whole spatial extent as a box.
    pub fn spatial_box(&self) -> BoxRegion {
        BoxRegion::centered(self.d, Point::ORIGIN, self.half_width)
    }

    /// Sites in row-major order: time slowest, then last axis, first axis
    /// fastest.
    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        let b = self.spatial_box();
        (self.t_min..=self.t_max).flat_map(move |n| (0..b.len()).map(move |i| Site::new(b.point_at(i), n)))
    }
}

/// An axis-aligned box `lo <= x <= hi` (inclusive) in `Z^d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoxRegion {
    pub d: usize,
    pub lo: Point,
    pub hi: Point,
}

impl BoxRegion {
    pub fn new(d: usize, lo: Point, hi: Point) -> Self {
        debug_assert!((0..d).all(|i| lo.0[i] <= hi.0[i]));
        BoxRegion { d, lo, hi }
    }

    /// `{x : ||x - center|| <= radius}`.
    pub fn centered(d: usize, center: Point, radius: i64) -> Self {
        let mut lo = center;
        let mut hi = center;
        for i in 0..d {
            lo.0[i] -= radius;
            hi.0[i] += radius;
        }
        BoxRegion { d, lo, hi }
    }

    /// A cube of `side` sites per axis whose first corner is `lo`.
    pub fn cube(d: usize, lo: Point, side: i64) -> Self {
        let mut hi = lo;
        for i in 0..d {
            hi.0[i] += side - 1;
        }
        BoxRegion { d, lo, hi }
    }

    pub fn extent(&self, axis: usize) -> usize {
        (self.hi.0[axis] - self.lo.0[axis] + 1) as usize
    }

    pub fn len(&self) -> usize {
        (0..self.d).map(|i| self.extent(i)).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, x: &Point) -> bool {
        (0..self.d).all(|i| x.0[i] >= self.lo.0[i] && x.0[i] <= self.hi.0[i])
    }

    pub fn contains_box(&self, other: &BoxRegion) -> bool {
        self.contains(&other.lo) && self.contains(&other.hi)
    }

    /// Linear index with the first axis fastest.
    pub fn index_of(&self, x: &Point) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        let mut idx = 0usize;
        for i in (0..self.d).rev() {
            idx = idx * self.extent(i) + (x.0[i] - self.lo.0[i]) as usize;
        }
        Some(idx)
    }

    pub fn point_at(&self, mut idx: usize) -> Point {
        let mut c = [0; MAX_DIM];
        for (i, slot) in c.iter_mut().enumerate().take(self.d) {
            let e = self.extent(i);
            *slot = self.lo.0[i] + (idx % e) as i64;
            idx /= e;
        }
        Point(c)
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |i| self.point_at(i))
    }

    pub fn expand(&self, k: i64) -> BoxRegion {
        let mut b = *self;
        for i in 0..self.d {
            b.lo.0[i] -= k;
            b.hi.0[i] += k;
        }
        b
    }

    /// Shrinks by `k` per side; `None` once the box would be empty.
    pub fn shrink(&self, k: i64) -> Option<BoxRegion> {
        let mut b = *self;
        for i in 0..self.d {
            b.lo.0[i] += k;
            b.hi.0[i] -= k;
            if b.lo.0[i] > b.hi.0[i] {
                return None;
            }
        }
        Some(b)
    }

    pub fn translate(&self, y: Point) -> BoxRegion {
        BoxRegion { d: self.d, lo: self.lo + y, hi: self.hi + y }
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &BoxRegion) -> BoxRegion {
        let mut b = *self;
        for i in 0..self.d {
            b.lo.0[i] = b.lo.0[i].min(other.lo.0[i]);
            b.hi.0[i] = b.hi.0[i].max(other.hi.0[i]);
        }
        b
    }

    pub fn intersect(&self, other: &BoxRegion) -> Option<BoxRegion> {
        let mut b = *self;
        for i in 0..self.d {
            b.lo.0[i] = b.lo.0[i].max(other.lo.0[i]);
            b.hi.0[i] = b.hi.0[i].min(other.hi.0[i]);
            if b.lo.0[i] > b.hi.0[i] {
                return None;
            }
        }
        Some(b)
    }

    /// Largest sup-norm of a point in the box.
    pub fn max_norm(&self) -> i64 {
        (0..self.d).map(|i| self.lo.0[i].abs().max(self.hi.0[i].abs())).max().unwrap_or(0)
    }
}

/// The `3^d` displacements `z` with `||z|| <= 1`, ordered so that index
/// `sum_i (z_i + 1) 3^i` addresses displacement `z`.
#[derive(Clone, Debug)]
pub struct Neighborhood {
    d: usize,
    offsets: Vec<Point>,
}

impl Neighborhood {
    pub fn new(d: usize) -> Self {
        let n = 3usize.pow(d as u32);
        let offsets = (0..n)
            .map(|mut k| {
                let mut c = [0; MAX_DIM];
                for slot in c.iter_mut().take(d) {
                    *slot = (k % 3) as i64 - 1;
                    k /= 3;
                }
                Point(c)
            })
            .collect();
        Neighborhood { d, offsets }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn offsets(&self) -> &[Point] {
        &self.offsets
    }

    pub fn index_of(&self, z: &Point) -> Option<usize> {
        if z.norm() > 1 || z.0[self.d..].iter().any(|&c| c != 0) {
            return None;
        }
        let mut idx = 0usize;
        for i in (0..self.d).rev() {
            idx = idx * 3 + (z.0[i] + 1) as usize;
        }
        Some(idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_index_roundtrip() {
        let b = BoxRegion::new(2, Point::new(&[-2, 3]), Point::new(&[1, 5]));
        assert_eq!(b.len(), 12);
        for i in 0..b.len() {
            assert_eq!(b.index_of(&b.point_at(i)), Some(i));
        }
        assert_eq!(b.index_of(&Point::new(&[2, 3])), None);
    }

    #[test]
    fn neighborhood_indexing() {
        let nb = Neighborhood::new(2);
        assert_eq!(nb.len(), 9);
        for (i, z) in nb.offsets().iter().enumerate() {
            assert_eq!(nb.index_of(z), Some(i));
        }
        assert_eq!(nb.index_of(&Point::new(&[2, 0])), None);
    }

    #[test]
    fn geometry_rejects_bad_shapes() {
        assert!(LatticeGeometry::new(0, 3, 0, 1).is_err());
        assert!(LatticeGeometry::new(1, 0, 0, 1).is_err());
        assert!(LatticeGeometry::new(1, 3, 2, 1).is_err());
        assert!(matches!(
            LatticeGeometry::new(3, 1 << 20, 0, 1 << 20),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn row_point_inverts_row_of() {
        let g = LatticeGeometry::new(3, 2, 0, 0).unwrap();
        for r in 0..g.rows_per_slice() {
            assert_eq!(g.row_of(&g.row_point(r)), r);
        }
    }
}
