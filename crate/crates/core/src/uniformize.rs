//! Uniform subsets: dyadic pigeonholing on branching counts (optionally jointly
//! with per-scale value functions), centering by translation, and branching
//! collapse. Every result carries its size guarantee as an exact rational.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_traits::{One, Pow};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry;
use crate::grid::{prefix, GridSet, Point, UniformProfile, Uniformity};
use crate::measures::{rational_serde, Rational};

/// A function of 2^{-L}-sets taking values in `[0, bound)`.
pub trait ValueFunction: Sync {
    fn name(&self) -> &str;
    fn bound(&self) -> u32;
    fn evaluate(&self, children: &GridSet) -> u32;
}

/// Always 0.
pub struct ConstantValue;

impl ValueFunction for ConstantValue {
    fn name(&self) -> &str {
        "constant"
    }
    fn bound(&self) -> u32 {
        1
    }
    fn evaluate(&self, _: &GridSet) -> u32 {
        0
    }
}

/// Parity of the number of children.
pub struct ParityValue;

impl ValueFunction for ParityValue {
    fn name(&self) -> &str {
        "parity"
    }
    fn bound(&self) -> u32 {
        2
    }
    fn evaluate(&self, children: &GridSet) -> u32 {
        (children.len() % 2) as u32
    }
}

/// `floor(log2 |children|)`, in `[0, dL]`.
pub struct CountBandValue {
    pub dim: usize,
    pub block: u32,
}

impl ValueFunction for CountBandValue {
    fn name(&self) -> &str {
        "count-band"
    }
    fn bound(&self) -> u32 {
        self.dim as u32 * self.block + 1
    }
    fn evaluate(&self, children: &GridSet) -> u32 {
        children.len().max(1).ilog2()
    }
}

/// The certified `D_L` dimension of the child set, in `[0, d]`.
pub struct DimensionValue {
    pub dim: usize,
}

impl ValueFunction for DimensionValue {
    fn name(&self) -> &str {
        "dimension"
    }
    fn bound(&self) -> u32 {
        self.dim as u32 + 1
    }
    fn evaluate(&self, children: &GridSet) -> u32 {
        geometry::min_dimension(children, children.scale_exp())
            .map(|(j, _)| j as u32)
            .unwrap_or(self.dim as u32)
    }
}

/// A uniform subset with its exact size accounting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformizationResult {
    pub subset: GridSet,
    pub profile: UniformProfile,
    #[serde(with = "rational_serde")]
    pub size_ratio: Rational,
    #[serde(with = "rational_serde")]
    pub guarantee: Rational,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_scale_values: Option<Vec<u32>>,
}

impl UniformizationResult {
    pub fn meets_guarantee(&self) -> bool {
        self.size_ratio >= self.guarantee
    }
}

fn int(n: u64) -> BigInt {
    BigInt::from(n)
}

fn ratio(num: usize, den: usize) -> Rational {
    Rational::new(int(num as u64), int(den as u64))
}

/// `c^{-S}` as an exact rational.
fn inverse_power(c: u64, scales: u32) -> Rational {
    Rational::new(BigInt::one(), Pow::pow(int(c), scales))
}

fn scales_of(a: &GridSet, block: u32) -> Result<u32> {
    if block == 0 || a.scale_exp() % block != 0 {
        return Err(Error::NotDivisible {
            block,
            scale_exp: a.scale_exp(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(a.scale_exp() / block)
}

/// Band `j` of a child count `c` in `[1, 2^{dL}]`: `[2^j, 2^{j+1})`, the top band closed.
fn band(count: usize, dim: usize, block: u32) -> u32 {
    let top = (dim as u32 * block).saturating_sub(1);
    (count.max(1).ilog2()).min(top)
}

/// Children (level-`(s+1)L` cube indices) of each level-`sL` cube, both sorted.
fn children_by_node(points: &[Point], m: u32, block: u32, s: u32) -> BTreeMap<Point, Vec<Point>> {
    let child_shift = m - (s + 1) * block;
    let mut map: BTreeMap<Point, BTreeSet<Point>> = BTreeMap::new();
    for p in points {
        let child = prefix(p, child_shift);
        let node = prefix(&child, block);
        map.entry(node).or_default().insert(child);
    }
    map.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect()
}

/// The child set of `node` as a 2^{-L}-set.
fn local_set(dim: usize, block: u32, node: &[i64], children: &[Point]) -> GridSet {
    let pts = children
        .iter()
        .map(|c| c.iter().zip(node).map(|(&x, &o)| x - (o << block)).collect())
        .collect();
    GridSet::from_sorted_unchecked(dim, block, 1i64 << block, pts)
}

/// Bottom-up pigeonholing on `(band, value)`; `fns[s]` is applied at scale `s`.
fn pigeonhole(a: &GridSet, block: u32, fns: Option<&[&dyn ValueFunction]>) -> Result<UniformizationResult> {
    let scales = scales_of(a, block)?;
    let dim = a.dim();
    let m = a.scale_exp();
    let bound = match fns {
        None => 1,
        Some(fs) => {
            if fs.len() != scales as usize {
                return Err(Error::InvalidParameter(format!(
                    "expected {scales} value functions, got {}",
                    fs.len()
                )));
            }
            let v = fs[0].bound();
            if v == 0 || fs.iter().any(|f| f.bound() != v) {
                return Err(Error::InvalidParameter("value functions must share a positive bound".into()));
            }
            v
        }
    };

    let mut points: Vec<Point> = a.points().to_vec();
    let mut branching = vec![0u64; scales as usize];
    let mut values = vec![0u32; scales as usize];
    for s in (0..scales).rev() {
        let nodes = children_by_node(&points, m, block, s);
        let mut band_min: BTreeMap<u32, usize> = BTreeMap::new();
        for kids in nodes.values() {
            let b = band(kids.len(), dim, block);
            let e = band_min.entry(b).or_insert(kids.len());
            *e = (*e).min(kids.len());
        }
        // Classes keyed by (band, value); each member keeps its `band_min` least children.
        let mut classes: BTreeMap<(u32, u32), Vec<(&Point, &[Point])>> = BTreeMap::new();
        for (node, kids) in &nodes {
            let b = band(kids.len(), dim, block);
            let kept = &kids[..band_min[&b]];
            let v = match fns {
                None => 0,
                Some(fs) => {
                    let f = fs[s as usize];
                    let code = f.evaluate(&local_set(dim, block, node, kept));
                    if code >= bound {
                        return Err(Error::ValueOutOfRange {
                            name: f.name().to_string(),
                            code,
                            bound,
                        });
                    }
                    code
                }
            };
            classes.entry((b, v)).or_default().push((node, kept));
        }
        // Largest class by retained children; BTreeMap order breaks ties towards smaller codes.
        let mut best: Option<(&(u32, u32), usize)> = None;
        for (key, members) in &classes {
            let kept = members.len() * band_min[&key.0];
            if best.map_or(true, |(_, b)| kept > b) {
                best = Some((key, kept));
            }
        }
        let (key, _) = best.expect("a nonempty set has a class");
        let survivors: BTreeSet<&Point> = classes[key].iter().flat_map(|(_, kids)| kids.iter()).collect();
        let child_shift = m - (s + 1) * block;
        points.retain(|p| survivors.contains(&prefix(p, child_shift)));
        branching[s as usize] = band_min[&key.0] as u64;
        values[s as usize] = key.1;
    }

    let subset = GridSet::from_sorted_unchecked(dim, m, a.extent(), points);
    let guarantee = inverse_power(2 * block as u64 * bound as u64 * dim as u64, scales);
    Ok(UniformizationResult {
        size_ratio: ratio(subset.len(), a.len()),
        subset,
        profile: UniformProfile {
            block,
            scales,
            branching,
        },
        guarantee,
        per_scale_values: fns.map(|_| values),
    })
}

/// An `(L, S)`-uniform subset with `|A'| >= (2Ld)^{-S} |A|`.
pub fn uniform_subset(a: &GridSet, block: u32) -> Result<UniformizationResult> {
    pigeonhole(a, block, None)
}

/// A uniform subset on which each `F_s` is constant across the child sets of
/// level-`sL` cubes, with `|A'| >= (2LVd)^{-S} |A|`.
pub fn uniform_subset_general(a: &GridSet, block: u32, fns: &[&dyn ValueFunction]) -> Result<UniformizationResult> {
    pigeonhole(a, block, Some(fns))
}

/// [`uniform_subset_general`] with `F_s = D_L` at every scale; the values are
/// the per-scale dimensions.
pub fn uniform_subset_subspace(a: &GridSet, block: u32) -> Result<UniformizationResult> {
    let scales = scales_of(a, block)?;
    let f = DimensionValue { dim: a.dim() };
    let fns: Vec<&dyn ValueFunction> = (0..scales).map(|_| &f as &dyn ValueFunction).collect();
    pigeonhole(a, block, Some(&fns))
}

/// A centred subset and the translation that centres it. The translation is
/// stored in units of `2^{-m}/3` per coordinate, in `[-2^m, 2^m)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenteringResult {
    pub subset: GridSet,
    pub shift_units: Vec<i64>,
    #[serde(with = "rational_serde")]
    pub size_ratio: Rational,
    #[serde(with = "rational_serde")]
    pub guarantee: Rational,
}

impl CenteringResult {
    pub fn meets_guarantee(&self) -> bool {
        self.size_ratio >= self.guarantee
    }

    /// The translation `y` as exact rationals.
    pub fn shift(&self) -> Vec<Rational> {
        let den = int(3) * Pow::pow(int(2), self.subset.scale_exp());
        self.shift_units
            .iter()
            .map(|&t| Rational::new(BigInt::from(t), den.clone()))
            .collect()
    }
}

/// Is `u / (3 2^m)` in the middle third of its level-`Ls` cube for every `s < S`?
fn centred_coordinate(u: i64, m: u32, block: u32, scales: u32) -> bool {
    (0..scales).all(|s| {
        let unit = 1i64 << (m - s * block);
        let r = u.rem_euclid(3 * unit);
        unit <= r && r < 2 * unit
    })
}

/// Exact middle-third predicate for every point of `a + y` and every scale.
pub fn verify_centering(a: &GridSet, shift_units: &[i64], block: u32) -> Result<bool> {
    let scales = scales_of(a, block)?;
    if shift_units.len() != a.dim() {
        return Err(Error::DimensionMismatch(shift_units.len(), a.dim()));
    }
    let m = a.scale_exp();
    Ok(a.points().iter().all(|p| {
        p.iter()
            .zip(shift_units)
            .all(|(&c, &t)| centred_coordinate(3 * c + t, m, block, scales))
    }))
}

/// Maximal runs `[lo, hi]` of centred values `u` in `[0, 3 2^m)`.
fn centred_runs(m: u32, block: u32, scales: u32) -> Vec<(i64, i64)> {
    let mut runs = Vec::new();
    let mut start: Option<i64> = None;
    let end = 3i64 << m;
    for u in 0..end {
        let ok = centred_coordinate(u, m, block, scales);
        match (ok, start) {
            (true, None) => start = Some(u),
            (false, Some(a)) => {
                runs.push((a, u - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(a) = start {
        runs.push((a, end - 1));
    }
    runs
}

/// Translates `A` (inside `[1/3, 2/3)^d`) by some `y in [-1/3, 1/3)^d` chosen
/// coordinate by coordinate to keep the most points whose translates sit in the
/// middle third of their level-`Ls` cube at every scale.
pub fn center_by_translation(a: &GridSet, block: u32) -> Result<CenteringResult> {
    let scales = scales_of(a, block)?;
    let m = a.scale_exp();
    let side = 1i64 << m;
    for p in a.points() {
        if p.iter().any(|&c| 3 * c < side || 3 * c >= 2 * side) {
            return Err(Error::OutsideMiddleThird(p.clone()));
        }
    }
    let runs = centred_runs(m, block, scales);
    if runs.is_empty() {
        return Err(Error::CenteringInfeasible { block, scales });
    }
    let mut kept: Vec<Point> = a.points().to_vec();
    let mut shift = Vec::with_capacity(a.dim());
    for i in 0..a.dim() {
        // diff[t + 2^m] counts points with 3 c + t centred, for t in [-2^m, 2^m).
        let mut diff = vec![0i64; (2 * side + 1) as usize];
        for p in &kept {
            let c = 3 * p[i];
            for &(lo, hi) in &runs {
                let t0 = (lo - c).max(-side);
                let t1 = (hi - c).min(side - 1);
                if t0 <= t1 {
                    diff[(t0 + side) as usize] += 1;
                    diff[(t1 + side + 1) as usize] -= 1;
                }
            }
        }
        let mut best = (0i64, -side);
        let mut acc = 0i64;
        for (idx, dv) in diff.iter().take((2 * side) as usize).enumerate() {
            acc += dv;
            let t = idx as i64 - side;
            // Prefer more points, then the smallest |t|, then the smaller t.
            if acc > best.0 || (acc == best.0 && acc > 0 && t.abs() < best.1.abs()) {
                best = (acc, t);
            }
        }
        let t = best.1;
        kept.retain(|p| centred_coordinate(3 * p[i] + t, m, block, scales));
        shift.push(t);
    }
    let subset = GridSet::from_sorted_unchecked(a.dim(), m, a.extent(), kept);
    Ok(CenteringResult {
        size_ratio: ratio(subset.len(), a.len()),
        subset,
        shift_units: shift,
        guarantee: inverse_power(9u64.pow(a.dim() as u32), scales),
    })
}

/// Keeps, inside every level-`sL` cube with `s` in `collapse`, only the
/// lexicographically least child subtree.
pub fn collapse_branching(a: &GridSet, block: u32, collapse: &BTreeSet<u32>) -> Result<UniformizationResult> {
    let scales = scales_of(a, block)?;
    let profile = match a.uniformity(block)? {
        Uniformity::Uniform(p) => p,
        Uniformity::NotUniform(v) => return Err(Error::NotUniform(v)),
    };
    if let Some(&s) = collapse.iter().find(|&&s| s >= scales) {
        return Err(Error::InvalidParameter(format!("scale {s} outside [0, {scales})")));
    }
    let m = a.scale_exp();
    let mut points = a.points().to_vec();
    for &s in collapse {
        let nodes = children_by_node(&points, m, block, s);
        let least: BTreeSet<&Point> = nodes.values().map(|kids| &kids[0]).collect();
        let shift = m - (s + 1) * block;
        points.retain(|p| least.contains(&prefix(p, shift)));
    }
    let mut branching = profile.branching.clone();
    let mut removed = int(1);
    for &s in collapse {
        removed *= int(branching[s as usize]);
        branching[s as usize] = 1;
    }
    let subset = GridSet::from_sorted_unchecked(a.dim(), m, a.extent(), points);
    Ok(UniformizationResult {
        size_ratio: ratio(subset.len(), a.len()),
        subset,
        profile: UniformProfile {
            block,
            scales,
            branching,
        },
        guarantee: Rational::new(BigInt::one(), removed),
        per_scale_values: None,
    })
}

/// The three collapse clauses, checked exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollapseClauses {
    /// Uniform with `R'_s = 1` on the collapsed scales and `R_s` elsewhere.
    pub uniform: bool,
    /// `|A'| >= prod_{s in collapse} R_s^{-1} |A|`.
    pub size: bool,
    /// Off the collapsed scales, child sets of surviving cubes are unchanged.
    pub local_sets_preserved: bool,
}

impl CollapseClauses {
    pub fn all(&self) -> bool {
        self.uniform && self.size && self.local_sets_preserved
    }
}

pub fn verify_collapse(
    original: &GridSet,
    result: &UniformizationResult,
    collapse: &BTreeSet<u32>,
) -> Result<CollapseClauses> {
    let block = result.profile.block;
    let scales = scales_of(original, block)?;
    let before = match original.uniformity(block)? {
        Uniformity::Uniform(p) => p,
        Uniformity::NotUniform(v) => return Err(Error::NotUniform(v)),
    };
    let uniform = match result.subset.uniformity(block)? {
        Uniformity::Uniform(p) => (0..scales as usize).all(|s| {
            let expect = if collapse.contains(&(s as u32)) { 1 } else { before.branching[s] };
            p.branching[s] == expect
        }),
        Uniformity::NotUniform(_) => false,
    };
    let mut product = int(1);
    for &s in collapse {
        product *= int(before.branching[s as usize]);
    }
    let size = int(result.subset.len() as u64) * product >= int(original.len() as u64);
    let m = original.scale_exp();
    let mut preserved = result.subset.is_subset_of(original);
    for s in (0..scales).filter(|s| !collapse.contains(s)) {
        let new = children_by_node(result.subset.points(), m, block, s);
        let old = children_by_node(original.points(), m, block, s);
        preserved &= new.iter().all(|(node, kids)| old.get(node) == Some(kids));
    }
    Ok(CollapseClauses {
        uniform,
        size,
        local_sets_preserved: preserved,
    })
}

/// Checks the constancy of `F_s` over child sets of the level-`sL` cubes of `a`.
pub fn values_constant(a: &GridSet, block: u32, fns: &[&dyn ValueFunction]) -> Result<bool> {
    let scales = scales_of(a, block)?;
    let m = a.scale_exp();
    for s in 0..scales {
        let f = fns[s as usize];
        let codes: BTreeSet<u32> = children_by_node(a.points(), m, block, s)
            .iter()
            .map(|(node, kids)| f.evaluate(&local_set(a.dim(), block, node, kids)))
            .collect();
        if codes.len() > 1 {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set1(m: u32, pts: &[i64]) -> GridSet {
        GridSet::new(1, m, pts.iter().map(|&p| vec![p])).unwrap()
    }

    #[test]
    fn uniform_input_is_kept() {
        let full = GridSet::full(2, 4).unwrap();
        let r = uniform_subset(&full, 2).unwrap();
        assert_eq!(r.subset, full);
        assert_eq!(r.size_ratio, Rational::one());
        let single = set1(6, &[37]);
        let r = uniform_subset(&single, 3).unwrap();
        assert_eq!(r.profile.branching, vec![1, 1]);
        assert_eq!(r.subset, single);
    }

    #[test]
    fn banding_meets_bound() {
        // Counts 3 and 1 at the top are in different bands; the heavier one wins.
        let a = set1(4, &[0, 1, 2, 4, 8]);
        let r = uniform_subset(&a, 2).unwrap();
        assert!(r.subset.uniformity(2).unwrap().is_uniform());
        assert!(r.meets_guarantee());
        assert_eq!(r.guarantee, ratio(1, 16));
    }

    #[test]
    fn general_with_parity_is_constant() {
        let a = set1(6, &[0, 1, 2, 9, 10, 17, 33, 34, 35, 36, 50, 63]);
        let p = ParityValue;
        let fns: Vec<&dyn ValueFunction> = vec![&p, &p, &p];
        let r = uniform_subset_general(&a, 2, &fns).unwrap();
        assert!(values_constant(&r.subset, 2, &fns).unwrap());
        assert!(r.meets_guarantee());
        assert_eq!(r.guarantee, ratio(1, 512));
    }

    #[test]
    fn constant_function_matches_plain() {
        let a = set1(6, &[0, 1, 2, 9, 10, 17, 33, 34, 35, 36, 50, 63]);
        let c = ConstantValue;
        let fns: Vec<&dyn ValueFunction> = vec![&c, &c, &c];
        let g = uniform_subset_general(&a, 2, &fns).unwrap();
        let p = uniform_subset(&a, 2).unwrap();
        assert_eq!(g.subset, p.subset);
        assert_eq!(g.guarantee, p.guarantee);
    }

    #[test]
    fn subspace_examples() {
        let line = GridSet::new(2, 6, (0..64).map(|i| vec![i, 21])).unwrap();
        let r = uniform_subset_subspace(&line, 2).unwrap();
        assert!(r.per_scale_values.unwrap().iter().all(|&j| j <= 1));
        let full = GridSet::full(2, 6).unwrap();
        let r = uniform_subset_subspace(&full, 3).unwrap();
        assert_eq!(r.per_scale_values.unwrap(), vec![2, 2]);
        let single = GridSet::new(2, 6, vec![vec![5, 5]]).unwrap();
        assert_eq!(uniform_subset_subspace(&single, 2).unwrap().per_scale_values.unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn centering_examples() {
        // 1/2 in [1/3,2/3) at m=4: point 8.
        let single = set1(4, &[8]);
        let r = center_by_translation(&single, 2).unwrap();
        assert_eq!(r.subset, single);
        assert!(verify_centering(&r.subset, &r.shift_units, 2).unwrap());

        let middle: Vec<i64> = (0..16).filter(|&p| 3 * p >= 16 && 3 * p < 32).collect();
        let a = set1(4, &middle);
        let r = center_by_translation(&a, 2).unwrap();
        assert!(!r.subset.is_empty());
        assert!(r.meets_guarantee());
        assert!(verify_centering(&r.subset, &r.shift_units, 2).unwrap());
        assert!(r.shift().iter().all(|y| *y >= ratio(0, 1) - ratio(1, 3) && *y < ratio(1, 3)));

        assert!(matches!(center_by_translation(&set1(4, &[1]), 2), Err(Error::OutsideMiddleThird(_))));
        assert!(matches!(
            center_by_translation(&set1(4, &[8]), 1),
            Err(Error::CenteringInfeasible { block: 1, scales: 4 })
        ));
    }

    #[test]
    fn collapse_examples() {
        let full = GridSet::full(1, 4).unwrap();
        let none = collapse_branching(&full, 2, &BTreeSet::new()).unwrap();
        assert_eq!(none.subset, full);
        let top: BTreeSet<u32> = [0].into();
        let r = collapse_branching(&full, 2, &top).unwrap();
        assert_eq!(r.profile.branching, vec![1, 4]);
        assert_eq!(r.subset.len(), 4);
        assert!(verify_collapse(&full, &r, &top).unwrap().all());
        let all: BTreeSet<u32> = [0, 1].into();
        assert_eq!(collapse_branching(&full, 2, &all).unwrap().subset.len(), 1);
        assert!(matches!(
            collapse_branching(&set1(4, &[0, 1, 4]), 2, &top),
            Err(Error::NotUniform(_))
        ));
    }

    fn arb_set(dim: usize, m: u32) -> impl Strategy<Value = GridSet> {
        let side = 1i64 << m;
        proptest::collection::vec(proptest::collection::vec(0..side, dim), 1..80)
            .prop_map(move |pts| GridSet::new(dim, m, pts).unwrap())
    }

    proptest! {
        #[test]
        fn plain_guarantees(a in arb_set(2, 6), block in prop::sample::select(vec![1u32, 2, 3])) {
            let r = uniform_subset(&a, block).unwrap();
            prop_assert!(r.subset.is_subset_of(&a));
            let u = r.subset.uniformity(block).unwrap();
            prop_assert_eq!(u.profile(), Some(&r.profile));
            prop_assert!(r.meets_guarantee());
            // Idempotent on its own output.
            prop_assert_eq!(uniform_subset(&r.subset, block).unwrap().subset, r.subset);
        }

        #[test]
        fn general_guarantees(a in arb_set(1, 6)) {
            let p = ParityValue;
            let c = CountBandValue { dim: 1, block: 2 };
            let fns: Vec<&dyn ValueFunction> = vec![&p, &c, &p];
            let bad = uniform_subset_general(&a, 2, &fns);
            prop_assert!(bad.is_err());
            let fns: Vec<&dyn ValueFunction> = vec![&p, &p, &p];
            let r = uniform_subset_general(&a, 2, &fns).unwrap();
            prop_assert!(r.subset.is_subset_of(&a));
            prop_assert!(r.subset.uniformity(2).unwrap().is_uniform());
            prop_assert!(values_constant(&r.subset, 2, &fns).unwrap());
            prop_assert!(r.meets_guarantee());
        }

        #[test]
        fn subspace_guarantees(a in arb_set(2, 6)) {
            let r = uniform_subset_subspace(&a, 2).unwrap();
            let f = DimensionValue { dim: 2 };
            let fns: Vec<&dyn ValueFunction> = vec![&f, &f, &f];
            prop_assert!(values_constant(&r.subset, 2, &fns).unwrap());
            prop_assert!(r.meets_guarantee());
        }

        #[test]
        fn centering_guarantees(pts in proptest::collection::vec(proptest::collection::vec(22i64..43, 2), 1..60)) {
            let a = GridSet::new(2, 6, pts).unwrap();
            let r = center_by_translation(&a, 2).unwrap();
            prop_assert!(r.subset.is_subset_of(&a));
            prop_assert!(verify_centering(&r.subset, &r.shift_units, 2).unwrap());
            prop_assert!(r.meets_guarantee());
        }

        #[test]
        fn collapse_guarantees(a in arb_set(2, 6), mask in 0u32..8) {
            let u = uniform_subset(&a, 2).unwrap().subset;
            let scales: BTreeSet<u32> = (0..3).filter(|s| mask >> s & 1 == 1).collect();
            let r = collapse_branching(&u, 2, &scales).unwrap();
            prop_assert!(verify_collapse(&u, &r, &scales).unwrap().all());
            prop_assert!(r.meets_guarantee());
        }
    }
}
