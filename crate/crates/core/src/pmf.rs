//! Probability mass functions on a time slice.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{BoxRegion, Point, Site};
use crate::stats;

/// Mass per lattice site at a fixed time, stored on a box.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpatialPmf {
    pub time: i64,
    /// Start site of the law (or reference site for intermediates).
    pub anchor: Site,
    pub region: BoxRegion,
    pub mass: Vec<f64>,
}

impl SpatialPmf {
    pub fn zeros(time: i64, anchor: Site, region: BoxRegion) -> Self {
        SpatialPmf { time, anchor, region, mass: vec![0.0; region.len()] }
    }

    pub fn point_mass(d: usize, at: Site) -> Self {
        SpatialPmf { time: at.n, anchor: at, region: BoxRegion::centered(d, at.x, 0), mass: vec![1.0] }
    }

    pub fn dim(&self) -> usize {
        self.region.d
    }

    /// Mass at `x`; zero off the stored box.
    pub fn get(&self, x: &Point) -> f64 {
        self.region.index_of(x).map_or(0.0, |i| self.mass[i])
    }

    pub fn total(&self) -> f64 {
        stats::sum(self.mass.iter().copied())
    }

    pub fn iter(&self) -> impl Iterator<Item = (Point, f64)> + '_ {
        self.mass.iter().enumerate().map(move |(i, &m)| (self.region.point_at(i), m))
    }

    /// Smallest box holding all nonzero mass, if any.
    pub fn support(&self) -> Option<BoxRegion> {
        let mut out: Option<BoxRegion> = None;
        for (x, m) in self.iter() {
            if m != 0.0 {
                let b = BoxRegion::centered(self.dim(), x, 0);
                out = Some(out.map_or(b, |o| o.union(&b)));
            }
        }
        out
    }

    /// Mass of the sites of `b`.
    pub fn mass_in(&self, b: &BoxRegion) -> f64 {
        match self.region.intersect(b) {
            Some(i) => stats::sum(i.points().map(|x| self.get(&x))),
            None => 0.0,
        }
    }

    /// Same masses moved by `y`.
    pub fn translate(&self, y: Point) -> SpatialPmf {
        SpatialPmf {
            time: self.time,
            anchor: self.anchor.shifted(y, 0),
            region: self.region.translate(y),
            mass: self.mass.clone(),
        }
    }

    /// Copy re-stored on a larger box.
    pub fn embed(&self, region: BoxRegion) -> Result<SpatialPmf> {
        if !region.contains_box(&self.region) {
            return Err(Error::structural("embedding box does not contain the pmf box"));
        }
        let mut out = SpatialPmf::zeros(self.time, self.anchor, region);
        for (x, m) in self.iter() {
            out.mass[region.index_of(&x).unwrap()] = m;
        }
        Ok(out)
    }

    /// Mean position per axis.
    pub fn mean_position(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| stats::sum(self.iter().map(|(x, m)| m * x.0[i] as f64)))
            .collect()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.mass.iter().all(|&m| m >= 0.0)
    }
}

/// Mean of replica laws with per-site standard errors.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AveragedLaw {
    pub pmf: SpatialPmf,
    pub replicas: u64,
    /// Standard error per site of `pmf.region`.
    pub stderr: Vec<f64>,
}

impl AveragedLaw {
    pub fn stderr_at(&self, x: &Point) -> f64 {
        self.pmf.region.index_of(x).map_or(0.0, |i| self.stderr[i])
    }

    pub fn get(&self, x: &Point) -> f64 {
        self.pmf.get(x)
    }
}

/// Welford accumulator over replica pmfs on a fixed box. Adding replicas
/// in a fixed order gives bit-identical results.
#[derive(Clone, Debug)]
pub struct LawAccumulator {
    time: i64,
    anchor: Site,
    region: BoxRegion,
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl LawAccumulator {
    pub fn new(time: i64, anchor: Site, region: BoxRegion) -> Self {
        LawAccumulator { time, anchor, region, count: 0, mean: vec![0.0; region.len()], m2: vec![0.0; region.len()] }
    }

    pub fn add(&mut self, law: &SpatialPmf) -> Result<()> {
        if law.time != self.time {
            return Err(Error::SliceMismatch(law.time, self.time));
        }
        if !self.region.contains_box(&law.region) {
            return Err(Error::structural("replica law exceeds accumulator box"));
        }
        self.count += 1;
        let k = self.count as f64;
        for (i, x) in self.region.points().enumerate() {
            let v = law.get(&x);
            let delta = v - self.mean[i];
            self.mean[i] += delta / k;
            self.m2[i] += delta * (v - self.mean[i]);
        }
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(self) -> AveragedLaw {
        let r = self.count as f64;
        let stderr = self
            .m2
            .iter()
            .map(|&m2| if self.count > 1 { libm::sqrt((m2 / (r - 1.0)).max(0.0) / r) } else { 0.0 })
            .collect();
        AveragedLaw {
            pmf: SpatialPmf { time: self.time, anchor: self.anchor, region: self.region, mass: self.mean },
            replicas: self.count,
            stderr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulator_mean_and_stderr() {
        let region = BoxRegion::centered(1, Point::ORIGIN, 1);
        let mut acc = LawAccumulator::new(1, Site::origin(), region);
        let a = SpatialPmf { time: 1, anchor: Site::origin(), region, mass: vec![1.0, 0.0, 0.0] };
        let b = SpatialPmf { time: 1, anchor: Site::origin(), region, mass: vec![0.0, 0.0, 1.0] };
        acc.add(&a).unwrap();
        acc.add(&b).unwrap();
        let law = acc.finish();
        assert_eq!(law.pmf.mass, vec![0.5, 0.0, 0.5]);
        assert!((law.stderr[0] - 0.5).abs() < 1e-15);
        assert_eq!(law.stderr[1], 0.0);
        assert!((law.pmf.total() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn accumulator_rejects_wrong_slice() {
        let region = BoxRegion::centered(1, Point::ORIGIN, 1);
        let mut acc = LawAccumulator::new(1, Site::origin(), region);
        let p = SpatialPmf::point_mass(1, Site::new(Point::ORIGIN, 2));
        assert!(matches!(acc.add(&p), Err(Error::SliceMismatch(2, 1))));
    }

    #[test]
    fn mass_in_box() {
        let region = BoxRegion::centered(1, Point::ORIGIN, 2);
        let p = SpatialPmf { time: 0, anchor: Site::origin(), region, mass: vec![0.1, 0.2, 0.3, 0.2, 0.2] };
        let b = BoxRegion::cube(1, Point::x(1), 5);
        assert!((p.mass_in(&b) - 0.4).abs() < 1e-15);
        assert_eq!(p.support(), Some(region));
    }
}
