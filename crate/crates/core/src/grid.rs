//! Dyadic lattice geometry.
//!
//! A [`GridSet`] is a finite subset of `2^{-m} Z^d`, stored as integer lattice
//! coordinates: the point `p` stands for `2^{-m} p`. Plain sets live in
//! `[0, 2^m)^d`; sumsets carry a larger `extent` so that `A + A` stays exact.
//! Cubes are half-open, so every lattice point lies in exactly one cube per
//! level.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer lattice coordinates of a point.
pub type Point = Vec<i64>;

/// Largest admissible `d * m`, so that packed keys of plain sets fit in 64 bits.
pub const MAX_PACKED_BITS: u32 = 62;

/// Norm used for neighbourhoods and slabs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    #[default]
    Euclidean,
    Max,
}

/// The half-open cube `2^{-level} (coords + [0,1)^d)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicCube {
    pub level: u32,
    pub coords: Vec<i64>,
}

impl DyadicCube {
    pub fn new(level: u32, coords: Vec<i64>) -> Result<Self> {
        if level > MAX_PACKED_BITS {
            return Err(Error::LevelOutOfRange {
                level,
                max: MAX_PACKED_BITS,
            });
        }
        let side = 1i64 << level;
        if coords.is_empty() || coords.iter().any(|&c| c < 0 || c >= side) {
            return Err(Error::InvalidPoint {
                point: coords,
                reason: format!("cube coordinates must lie in [0, 2^{level})"),
            });
        }
        Ok(Self { level, coords })
    }

    /// `[0,1)^d`.
    pub fn unit(dim: usize) -> Self {
        Self {
            level: 0,
            coords: vec![0; dim],
        }
    }

    /// The level-`level` cube containing the lattice point `p` of a `2^{-scale_exp}`-set.
    pub fn containing(p: &[i64], scale_exp: u32, level: u32) -> Self {
        Self {
            level,
            coords: prefix(p, scale_exp - level),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn side(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    pub fn contains(&self, p: &[i64], scale_exp: u32) -> bool {
        scale_exp >= self.level && prefix(p, scale_exp - self.level) == self.coords
    }

    /// The cube corresponding to `inner` (a cube of `[0,1)^d`) under the
    /// homothety taking `[0,1)^d` onto `self`.
    pub fn compose(&self, inner: &DyadicCube) -> DyadicCube {
        let coords = self
            .coords
            .iter()
            .zip(&inner.coords)
            .map(|(&o, &i)| (o << inner.level) + i)
            .collect();
        DyadicCube {
            level: self.level + inner.level,
            coords,
        }
    }

    /// Lower corner in real coordinates.
    pub fn corner(&self) -> Vec<f64> {
        let side = self.side();
        self.coords.iter().map(|&c| c as f64 * side).collect()
    }
}

impl fmt::Display for DyadicCube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D_{}{:?}", self.level, self.coords)
    }
}

/// Coordinates shifted right by `shift` bits (the cube index `shift` levels up).
#[inline]
pub fn prefix(p: &[i64], shift: u32) -> Point {
    p.iter().map(|&c| c >> shift).collect()
}

/// Branching numbers `(R_s)` of an `(L, S)`-uniform set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniformProfile {
    #[serde(rename = "L")]
    pub block: u32,
    #[serde(rename = "S")]
    pub scales: u32,
    pub branching: Vec<u64>,
}

impl UniformProfile {
    /// `prod_s R_s`, the cardinality of any set with this profile.
    pub fn cardinality(&self) -> u128 {
        self.branching.iter().map(|&r| r as u128).product()
    }
}

/// First place where uniformity breaks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub scale: u32,
    pub cube: DyadicCube,
    pub expected: u64,
    pub found: u64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "scale {}: cube {} has {} children, expected {}",
            self.scale, self.cube, self.found, self.expected
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Uniformity {
    Uniform(UniformProfile),
    NotUniform(Violation),
}

impl Uniformity {
    pub fn profile(&self) -> Option<&UniformProfile> {
        match self {
            Uniformity::Uniform(p) => Some(p),
            Uniformity::NotUniform(_) => None,
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, Uniformity::Uniform(_))
    }
}

/// A finite subset of the lattice `2^{-m} Z^d`, kept sorted and deduplicated.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GridSetRepr", into = "GridSetRepr")]
pub struct GridSet {
    dim: usize,
    scale_exp: u32,
    extent: i64,
    points: Vec<Point>,
}

#[derive(Serialize, Deserialize)]
struct GridSetRepr {
    d: usize,
    m: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    extent: Option<i64>,
    points: Vec<Point>,
}

impl TryFrom<GridSetRepr> for GridSet {
    type Error = Error;

    fn try_from(r: GridSetRepr) -> Result<Self> {
        match r.extent {
            Some(extent) => GridSet::with_extent(r.d, r.m, extent, r.points),
            None => GridSet::new(r.d, r.m, r.points),
        }
    }
}

impl From<GridSet> for GridSetRepr {
    fn from(s: GridSet) -> Self {
        let extent = s.is_extended().then_some(s.extent);
        GridSetRepr {
            d: s.dim,
            m: s.scale_exp,
            extent,
            points: s.points,
        }
    }
}

fn check_shape(dim: usize, scale_exp: u32) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be at least 1".into()));
    }
    if dim as u64 * scale_exp as u64 > MAX_PACKED_BITS as u64 {
        return Err(Error::InvalidParameter(format!(
            "d * m = {} exceeds {MAX_PACKED_BITS}",
            dim as u64 * scale_exp as u64
        )));
    }
    Ok(())
}

impl GridSet {
    /// A `2^{-m}`-set: every coordinate in `[0, 2^m)`.
    pub fn new(dim: usize, scale_exp: u32, points: impl IntoIterator<Item = Point>) -> Result<Self> {
        check_shape(dim, scale_exp)?;
        Self::with_extent(dim, scale_exp, 1i64 << scale_exp, points)
    }

    /// A lattice set whose coordinates lie in `[0, extent)`; used for sumsets.
    pub fn with_extent(
        dim: usize,
        scale_exp: u32,
        extent: i64,
        points: impl IntoIterator<Item = Point>,
    ) -> Result<Self> {
        check_shape(dim, scale_exp)?;
        if extent < (1i64 << scale_exp) {
            return Err(Error::InvalidParameter(format!(
                "extent {extent} smaller than 2^{scale_exp}"
            )));
        }
        let mut points: Vec<Point> = points.into_iter().collect();
        for p in &points {
            if p.len() != dim {
                return Err(Error::InvalidPoint {
                    point: p.clone(),
                    reason: format!("expected {dim} coordinates"),
                });
            }
            if p.iter().any(|&c| c < 0 || c >= extent) {
                return Err(Error::InvalidPoint {
                    point: p.clone(),
                    reason: format!("coordinates must lie in [0, {extent})"),
                });
            }
        }
        points.sort_unstable();
        points.dedup();
        Ok(Self {
            dim,
            scale_exp,
            extent,
            points,
        })
    }

    pub(crate) fn from_sorted_unchecked(dim: usize, scale_exp: u32, extent: i64, points: Vec<Point>) -> Self {
        debug_assert!(points.windows(2).all(|w| w[0] < w[1]));
        Self {
            dim,
            scale_exp,
            extent,
            points,
        }
    }

    /// Every point of `2^{-m} Z^d ∩ [0,1)^d`.
    pub fn full(dim: usize, scale_exp: u32) -> Result<Self> {
        check_shape(dim, scale_exp)?;
        let side = 1i64 << scale_exp;
        let mut points = Vec::new();
        for_each_in_box(&vec![0; dim], &vec![side - 1; dim], |p| points.push(p.to_vec()));
        Ok(Self::from_sorted_unchecked(dim, scale_exp, side, points))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale_exp(&self) -> u32 {
        self.scale_exp
    }

    pub fn extent(&self) -> i64 {
        self.extent
    }

    /// True for sumsets whose coordinates may leave `[0, 2^m)`.
    pub fn is_extended(&self) -> bool {
        self.extent != 1i64 << self.scale_exp
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, p: &[i64]) -> bool {
        self.points.binary_search_by(|q| q.as_slice().cmp(p)).is_ok()
    }

    pub fn is_subset_of(&self, other: &GridSet) -> bool {
        self.dim == other.dim
            && self.scale_exp == other.scale_exp
            && self.points.iter().all(|p| other.contains(p))
    }

    /// Real coordinates `2^{-m} p`.
    pub fn real_point(&self, p: &[i64]) -> Vec<f64> {
        let h = (-(self.scale_exp as f64)).exp2();
        p.iter().map(|&c| c as f64 * h).collect()
    }

    /// Points kept by `keep`; same shape.
    pub fn filter(&self, mut keep: impl FnMut(&[i64]) -> bool) -> GridSet {
        let points = self.points.iter().filter(|p| keep(p)).cloned().collect();
        Self::from_sorted_unchecked(self.dim, self.scale_exp, self.extent, points)
    }

    fn check_level(&self, level: u32) -> Result<()> {
        if level > self.scale_exp {
            return Err(Error::LevelOutOfRange {
                level,
                max: self.scale_exp,
            });
        }
        Ok(())
    }

    /// Distinct level-`level` cube indices meeting the set, i.e. `D_level(A)`.
    pub fn cubes(&self, level: u32) -> Result<BTreeSet<Point>> {
        self.check_level(level)?;
        let shift = self.scale_exp - level;
        Ok(self.points.iter().map(|p| prefix(p, shift)).collect())
    }

    /// `|A|_{2^{-k}}`: the number of level-`k` cubes meeting the set.
    pub fn covering_count(&self, level: u32) -> Result<usize> {
        if self.is_empty() {
            return Err(Error::EmptySet);
        }
        Ok(self.cubes(level)?.len())
    }

    fn scale_count(&self, block: u32) -> Result<u32> {
        if block == 0 || self.scale_exp % block != 0 {
            return Err(Error::NotDivisible {
                block,
                scale_exp: self.scale_exp,
            });
        }
        Ok(self.scale_exp / block)
    }

    /// Number of level-`(level + step)` children of each level-`level` cube, in cube order.
    pub fn child_counts(&self, level: u32, step: u32) -> Result<BTreeMap<Point, u64>> {
        self.check_level(level + step)?;
        let children = self.cubes(level + step)?;
        let mut counts = BTreeMap::new();
        for c in children {
            *counts.entry(prefix(&c, step)).or_insert(0u64) += 1;
        }
        Ok(counts)
    }

    /// Checks `(L, S)`-uniformity with `S = m / L`, reporting the first violation.
    pub fn uniformity(&self, block: u32) -> Result<Uniformity> {
        let scales = self.scale_count(block)?;
        if self.is_empty() {
            return Err(Error::EmptySet);
        }
        let mut branching = Vec::with_capacity(scales as usize);
        for s in 0..scales {
            let counts = self.child_counts(s * block, block)?;
            let mut it = counts.iter();
            let (_, &expected) = it.next().expect("nonempty set has a cube at every level");
            for (cube, &found) in it {
                if found != expected {
                    return Ok(Uniformity::NotUniform(Violation {
                        scale: s,
                        cube: DyadicCube {
                            level: s * block,
                            coords: cube.clone(),
                        },
                        expected,
                        found,
                    }));
                }
            }
            branching.push(expected);
        }
        Ok(Uniformity::Uniform(UniformProfile {
            block,
            scales,
            branching,
        }))
    }

    /// `A^I`: the part of the set inside `cube`, blown up to `[0,1)^d`.
    pub fn renormalize(&self, cube: &DyadicCube) -> Result<GridSet> {
        if cube.dim() != self.dim {
            return Err(Error::DimensionMismatch(cube.dim(), self.dim));
        }
        self.check_level(cube.level)?;
        let shift = self.scale_exp - cube.level;
        let points: Vec<Point> = self
            .points
            .iter()
            .filter(|p| cube.contains(p, self.scale_exp))
            .map(|p| {
                p.iter()
                    .zip(&cube.coords)
                    .map(|(&c, &o)| c - (o << shift))
                    .collect()
            })
            .collect();
        if points.is_empty() {
            return Err(Error::EmptyIntersection);
        }
        // Subtracting a common offset preserves lexicographic order.
        Ok(Self::from_sorted_unchecked(self.dim, shift, 1i64 << shift, points))
    }

    /// The `2^{-level}`-set of cube corners whose cube meets the set.
    pub fn truncate(&self, level: u32) -> Result<GridSet> {
        let points = self.cubes(level)?.into_iter().collect();
        Ok(Self::from_sorted_unchecked(self.dim, level, 1i64 << level, points))
    }

    /// `A^I_L`: the renormalized set inside `cube`, seen at resolution `2^{-block}`.
    pub fn children_set(&self, cube: &DyadicCube, block: u32) -> Result<GridSet> {
        self.renormalize(cube)?.truncate(block)
    }

    /// `|A^{(r)}|_{2^{-level}}`, counting level-`level` cubes of `[0,1)^d` that
    /// meet the closed `r`-neighbourhood of the set. Exact: `r` is decomposed
    /// into a dyadic rational and all comparisons are done in integers.
    pub fn neighborhood_count(&self, radius: f64, level: u32, norm: Norm) -> Result<usize> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidParameter(format!("radius must be positive, got {radius}")));
        }
        if level > MAX_PACKED_BITS {
            return Err(Error::LevelOutOfRange {
                level,
                max: MAX_PACKED_BITS,
            });
        }
        let (mant, exp) = dyadic_parts(radius)?;
        let fine = self.scale_exp.max(level).max(exp);
        if fine > 100 {
            return Err(Error::InvalidParameter(format!("radius {radius} too fine")));
        }
        let r = (mant as i128) << (fine - exp);
        let width = 1i128 << (fine - level);
        let up = fine - self.scale_exp;
        let side = 1i128 << level;

        let mut hit: BTreeSet<Point> = BTreeSet::new();
        let mut lo = vec![0i64; self.dim];
        let mut hi = vec![0i64; self.dim];
        for p in &self.points {
            let x: Vec<i128> = p.iter().map(|&c| (c as i128) << up).collect();
            for i in 0..self.dim {
                lo[i] = (x[i] - r).div_euclid(width).max(0) as i64;
                hi[i] = (x[i] + r).div_euclid(width).min(side - 1) as i64;
            }
            if lo.iter().zip(&hi).any(|(l, h)| l > h) {
                continue;
            }
            for_each_in_box(&lo, &hi, |c| {
                if !hit.contains(c) && cube_meets_ball(c, width, &x, r, norm) {
                    hit.insert(c.to_vec());
                }
            });
        }
        Ok(hit.len())
    }
}

/// Does the half-open cube `width * (c + [0,1)^d)` meet the closed ball `B(x, r)`?
fn cube_meets_ball(c: &[i64], width: i128, x: &[i128], r: i128, norm: Norm) -> bool {
    let mut sq = 0i128;
    let mut sup = 0i128;
    let mut all_attained = true;
    let mut sup_ok = true;
    for (&ci, &xi) in c.iter().zip(x) {
        let lo = ci as i128 * width;
        let hi = lo + width;
        let (gap, attained) = if xi < lo {
            (lo - xi, true)
        } else if xi >= hi {
            (xi - hi, false)
        } else {
            (0, true)
        };
        all_attained &= attained;
        sq += gap * gap;
        sup = sup.max(gap);
        sup_ok &= gap < r || (gap == r && attained);
    }
    match norm {
        Norm::Euclidean => sq < r * r || (sq == r * r && all_attained),
        Norm::Max => sup <= r && sup_ok,
    }
}

/// Writes a positive finite float as `mant * 2^{-exp}` with `exp >= 0`.
pub(crate) fn dyadic_parts(x: f64) -> Result<(u64, u32)> {
    let mut exp = 0u32;
    let mut v = x;
    while v.fract() != 0.0 {
        v *= 2.0;
        exp += 1;
        if exp > 100 {
            return Err(Error::InvalidParameter(format!("{x} is not a usable dyadic rational")));
        }
    }
    if v > u64::MAX as f64 / 4.0 {
        return Err(Error::InvalidParameter(format!("{x} is too large")));
    }
    Ok((v as u64, exp))
}

/// Calls `f` on every integer point of the box `[lo, hi]` in lexicographic order.
pub fn for_each_in_box(lo: &[i64], hi: &[i64], mut f: impl FnMut(&[i64])) {
    let dim = lo.len();
    if lo.iter().zip(hi).any(|(l, h)| l > h) {
        return;
    }
    let mut cur = lo.to_vec();
    loop {
        f(&cur);
        let mut i = dim;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if cur[i] < hi[i] {
                cur[i] += 1;
                break;
            }
            cur[i] = lo[i];
        }
    }
}

/// Mixed-radix packing of nonnegative lattice points into `u128` keys; key
/// order is lexicographic point order.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Packer {
    dim: usize,
    radix: u128,
}

impl Packer {
    /// Packs points with coordinates in `[0, extent)`.
    pub(crate) fn new(dim: usize, extent: i64) -> Result<Self> {
        let radix = extent.max(1) as u128;
        let bits = 128 - radix.leading_zeros();
        if bits as usize * dim > 127 {
            return Err(Error::Overflow(format!(
                "cannot pack {dim} coordinates below {extent} into 128 bits"
            )));
        }
        Ok(Self { dim, radix })
    }

    #[cfg(test)]
    pub(crate) fn pack(&self, p: &[i64]) -> u128 {
        p.iter().fold(0u128, |acc, &c| acc * self.radix + c as u128)
    }

    #[inline]
    pub(crate) fn pack_sum(&self, p: &[i64], q: &[i64]) -> u128 {
        p.iter()
            .zip(q)
            .fold(0u128, |acc, (&a, &b)| acc * self.radix + (a + b) as u128)
    }

    pub(crate) fn unpack(&self, mut key: u128) -> Point {
        let mut p = vec![0i64; self.dim];
        for c in p.iter_mut().rev() {
            *c = (key % self.radix) as i64;
            key /= self.radix;
        }
        p
    }
}
