//! Sumsets, additive energy, energy at a scale, and Plünnecke–Ruzsa checks.

use std::collections::{BTreeMap, HashMap, HashSet};

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::grid::{GridSet, Packer, Point};
use crate::measures::GridMeasure;

/// `A + B`, with coordinates in `[0, extent_A + extent_B - 1)`.
pub fn sumset(a: &GridSet, b: &GridSet) -> Result<GridSet> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    if a.scale_exp() != b.scale_exp() {
        return Err(Error::ScaleMismatch(a.scale_exp(), b.scale_exp()));
    }
    let extent = a
        .extent()
        .checked_add(b.extent() - 1)
        .ok_or_else(|| Error::Overflow("sumset extent".into()))?;
    let packer = Packer::new(a.dim(), extent)?;
    let mut keys: HashSet<u128> = HashSet::with_capacity(a.len() + b.len());
    for p in a.points() {
        for q in b.points() {
            keys.insert(packer.pack_sum(p, q));
        }
    }
    let mut keys: Vec<u128> = keys.into_iter().collect();
    keys.sort_unstable();
    let points = keys.into_iter().map(|k| packer.unpack(k)).collect();
    Ok(GridSet::from_sorted_unchecked(a.dim(), a.scale_exp(), extent, points))
}

/// `kA = A + ... + A` (`k` summands).
pub fn iterated_sumset(a: &GridSet, k: u32) -> Result<GridSet> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let extent = (a.extent() as i128 - 1) * k as i128 + 1;
    if extent > i64::MAX as i128 {
        return Err(Error::Overflow(format!("{k}-fold sumset extent")));
    }
    Packer::new(a.dim(), extent as i64)?;
    let mut acc = a.clone();
    for _ in 1..k {
        acc = sumset(&acc, a)?;
    }
    Ok(acc)
}

/// How the representation function is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyPath {
    #[default]
    Auto,
    Sparse,
    Dense,
}

/// `E(X, X)` with its normalizations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyResult {
    #[serde(with = "u128_string")]
    pub quadruples: u128,
    pub normalized: f64,
    /// `E = 2^{-sigma* m} |X|^3`.
    pub sigma_star: f64,
}

mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Representation counts `r(s) = #{(x, y) in X^2 : x + y = s}` by hashing.
pub fn representation_sparse(x: &GridSet) -> Result<Vec<(Point, u64)>> {
    let extent = x
        .extent()
        .checked_mul(2)
        .ok_or_else(|| Error::Overflow("representation extent".into()))?;
    let packer = Packer::new(x.dim(), extent)?;
    let mut r: HashMap<u128, u64> = HashMap::with_capacity(x.len() * 2);
    for p in x.points() {
        for q in x.points() {
            *r.entry(packer.pack_sum(p, q)).or_insert(0) += 1;
        }
    }
    let mut out: Vec<(u128, u64)> = r.into_iter().collect();
    out.sort_unstable();
    Ok(out.into_iter().map(|(k, c)| (packer.unpack(k), c)).collect())
}

/// Representation counts via a dense FFT; errors if the box is too large or
/// rounding is not trustworthy.
pub fn representation_dense(x: &GridSet) -> Result<Vec<(Point, u64)>> {
    let refs: Vec<&[i64]> = x.points().iter().map(|p| p.as_slice()).collect();
    fft::representation_counts(x.dim(), &refs, &refs, fft::DENSE_CAP)
}

fn energy_from_counts(x: &GridSet, counts: &[(Point, u64)]) -> EnergyResult {
    let quadruples: u128 = counts.iter().map(|(_, r)| (*r as u128) * (*r as u128)).sum();
    let n = x.len() as f64;
    let normalized = quadruples as f64 / (n * n * n);
    let sigma_star = if x.scale_exp() == 0 {
        0.0
    } else {
        (-normalized.log2() / x.scale_exp() as f64).max(0.0)
    };
    EnergyResult {
        quadruples,
        normalized,
        sigma_star,
    }
}

/// Exact additive energy `sum_s r(s)^2`.
pub fn additive_energy(x: &GridSet) -> Result<EnergyResult> {
    additive_energy_with(x, EnergyPath::Auto)
}

pub fn additive_energy_with(x: &GridSet, path: EnergyPath) -> Result<EnergyResult> {
    if x.is_empty() {
        return Err(Error::EmptySet);
    }
    let counts = match path {
        EnergyPath::Sparse => representation_sparse(x)?,
        EnergyPath::Dense => representation_dense(x)?,
        EnergyPath::Auto => {
            let refs: Vec<&[i64]> = x.points().iter().map(|p| p.as_slice()).collect();
            let pairs = x.len() as f64 * x.len() as f64;
            match fft::padded_volume(x.dim(), &refs, &refs) {
                Some(v) if v <= fft::DENSE_CAP && (v as f64) * 16.0 < pairs => {
                    representation_dense(x).or_else(|_| representation_sparse(x))?
                }
                _ => representation_sparse(x)?,
            }
        }
    };
    Ok(energy_from_counts(x, &counts))
}

/// Additive energy at scale `r` together with the discretized convolution norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleEnergy {
    pub radius: f64,
    /// `(mu^2 x nu^2){ |x1 + y1 - x2 - y2| <= r }`.
    pub energy: f64,
    /// Discretization level `m'` with `r = 2^{-m'}`.
    pub level: i32,
    /// `|mu^{(m')} * nu^{(m')}|_2^2`.
    pub convolution_norm_sq: f64,
    pub ratio: f64,
    pub window: (f64, f64),
    pub within_window: bool,
}

/// Ratio window `[(ceil(4 sqrt d) + 2)^{-d}, 36^d]` for `E_r / |mu^{(m')} * nu^{(m')}|_2^2`.
pub fn scale_energy_window(d: usize) -> (f64, f64) {
    let side = (4.0 * (d as f64).sqrt()).ceil() + 2.0;
    (side.powi(-(d as i32)), 36f64.powi(d as i32))
}

/// Difference measure `a -> sum_{x1 - x2 = a} mu(x1) mu(x2)`, in lattice units.
fn difference_measure(mu: &GridMeasure<f64>) -> BTreeMap<Point, f64> {
    let mut out: BTreeMap<Point, f64> = BTreeMap::new();
    for (p, a) in mu.atoms() {
        for (q, b) in mu.atoms() {
            let key: Point = p.iter().zip(q).map(|(x, y)| x - y).collect();
            *out.entry(key).or_insert(0.0) += a * b;
        }
    }
    out
}

/// `mu^{(j)}(x) = mu(x + 2^{-j}[-1/2, 1/2)^d)` on the `2^{-j}` lattice.
fn discretize(mu: &GridMeasure<f64>, level: i32) -> BTreeMap<Point, f64> {
    let shift = mu.scale_exp() as i32 - level;
    let mut out: BTreeMap<Point, f64> = BTreeMap::new();
    for (p, w) in mu.atoms() {
        let key: Point = if shift == 0 {
            p.clone()
        } else {
            let half = 1i64 << (shift - 1);
            p.iter().map(|&c| (c + half) >> shift).collect()
        };
        *out.entry(key).or_insert(0.0) += w;
    }
    out
}

/// `E_r(mu, nu)` for `r = 2^{-j}` with `j <= m`, compared with the discretized convolution norm.
pub fn scale_energy(mu: &GridMeasure<f64>, nu: &GridMeasure<f64>, radius: f64) -> Result<ScaleEnergy> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch(mu.dim(), nu.dim()));
    }
    if mu.scale_exp() != nu.scale_exp() {
        return Err(Error::ScaleMismatch(mu.scale_exp(), nu.scale_exp()));
    }
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::EmptySet);
    }
    let m = mu.scale_exp() as i32;
    let level = -radius.log2();
    if !(radius > 0.0) || level.fract() != 0.0 || level > m as f64 || level < -(62 - m) as f64 {
        return Err(Error::InvalidParameter(format!(
            "radius must be a power of two in [2^-{m}, 2^{}], got {radius}",
            62 - m
        )));
    }
    let level = level as i32;
    let d = mu.dim();

    // Work in units 2^{-m}: |a + b|^2 <= R^2 with R = r 2^m.
    let r_units = 1i128 << (m - level);
    let r_sq = r_units * r_units;
    let dmu = difference_measure(mu);
    let dnu = difference_measure(nu);
    let mut energy = 0.0;
    for (a, wa) in &dmu {
        for (b, wb) in &dnu {
            let sq: i128 = a.iter().zip(b).map(|(x, y)| ((x + y) as i128).pow(2)).sum();
            if sq <= r_sq {
                energy += wa * wb;
            }
        }
    }

    let md = discretize(mu, level);
    let nd = discretize(nu, level);
    let mut conv: BTreeMap<Point, f64> = BTreeMap::new();
    for (p, a) in &md {
        for (q, b) in &nd {
            let key: Point = p.iter().zip(q).map(|(x, y)| x + y).collect();
            *conv.entry(key).or_insert(0.0) += a * b;
        }
    }
    let convolution_norm_sq: f64 = conv.values().map(|w| w * w).sum();
    let ratio = energy / convolution_norm_sq;
    let window = scale_energy_window(d);
    Ok(ScaleEnergy {
        radius,
        energy,
        level,
        convolution_norm_sq,
        ratio,
        window,
        within_window: ratio >= window.0 * (1.0 - 1e-12) && ratio <= window.1 * (1.0 + 1e-12),
    })
}

/// Outcome of a Plünnecke–Ruzsa check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrReport {
    pub size: usize,
    pub doubling_size: usize,
    /// `K = |A + A| / |A|`.
    pub doubling: f64,
    /// `(j, |jA|, log2(K^j |A| / |jA|))` for `j = 2..=k`.
    pub iterated: Vec<(u32, usize, f64)>,
}

/// Verifies `|jA| <= K^j |A|` for `2 <= j <= k` in exact integer arithmetic.
pub fn pr_check(a: &GridSet, k: u32) -> Result<PrReport> {
    if k < 2 {
        return Err(Error::InvalidParameter("k must be at least 2".into()));
    }
    if a.is_empty() {
        return Err(Error::EmptySet);
    }
    let n = a.len();
    let mut acc = sumset(a, a)?;
    let doubling_size = acc.len();
    let doubling = doubling_size as f64 / n as f64;
    let mut iterated = Vec::new();
    for j in 2..=k {
        if j > 2 {
            acc = sumset(&acc, a)?;
        }
        // |jA| * |A|^{j-1} <= |A+A|^j
        let lhs = BigUint::from(acc.len()) * BigUint::from(n).pow(j - 1);
        let rhs = BigUint::from(doubling_size).pow(j);
        if lhs > rhs {
            return Err(Error::PlunneckeViolation {
                k: j,
                base: n,
                doubling: doubling_size,
                iterated: acc.len(),
            });
        }
        let slack = j as f64 * doubling.log2() + (n as f64).log2() - (acc.len() as f64).log2();
        iterated.push((j, acc.len(), slack));
    }
    Ok(PrReport {
        size: n,
        doubling_size,
        doubling,
        iterated,
    })
}

/// Smallest `sigma` with `|A + A| <= 2^{sigma m} |A|`.
pub fn small_doubling_certificate(a: &GridSet) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::EmptySet);
    }
    if a.scale_exp() == 0 {
        return Ok(0.0);
    }
    let s = sumset(a, a)?;
    Ok((s.len() as f64 / a.len() as f64).log2() / a.scale_exp() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{GridMeasure, Rational};
    use proptest::prelude::*;

    fn ap(n: i64, m: u32) -> GridSet {
        GridSet::new(1, m, (0..n).map(|i| vec![i])).unwrap()
    }

    fn brute_energy(x: &GridSet) -> u128 {
        let mut count = 0u128;
        for a in x.points() {
            for b in x.points() {
                for c in x.points() {
                    let d: Vec<i64> = a.iter().zip(b).zip(c).map(|((a, b), c)| a + b - c).collect();
                    if x.contains(&d) {
                        count += 1;
                    }
                }
            }
        }
        count
    }

    #[test]
    fn sumset_examples() {
        let zero = GridSet::new(1, 2, vec![vec![0]]).unwrap();
        assert_eq!(sumset(&zero, &zero).unwrap().points(), &[vec![0]]);
        let s = sumset(&ap(4, 2), &ap(4, 2)).unwrap();
        assert_eq!(s.len(), 7);
        assert_eq!(s.points().last().unwrap(), &vec![6]);
        assert!(s.is_extended());
        assert_eq!(iterated_sumset(&ap(4, 3), 3).unwrap().len(), 10);
        assert_eq!(iterated_sumset(&ap(4, 3), 1).unwrap(), ap(4, 3));
        let diag = GridSet::new(2, 3, (0..8).map(|i| vec![i, i])).unwrap();
        assert!(iterated_sumset(&diag, 3).unwrap().points().iter().all(|p| p[0] == p[1]));
    }

    #[test]
    fn product_sumset_is_product() {
        let a = GridSet::new(1, 3, vec![vec![0], vec![3], vec![5]]).unwrap();
        let b = GridSet::new(1, 3, vec![vec![1], vec![2], vec![7]]).unwrap();
        let prod = GridSet::new(
            2,
            3,
            a.points().iter().flat_map(|x| b.points().iter().map(move |y| vec![x[0], y[0]])),
        )
        .unwrap();
        let aa = sumset(&a, &a).unwrap();
        let bb = sumset(&b, &b).unwrap();
        assert_eq!(sumset(&prod, &prod).unwrap().len(), aa.len() * bb.len());
    }

    #[test]
    fn energy_examples() {
        let single = GridSet::new(2, 3, vec![vec![1, 2]]).unwrap();
        assert_eq!(additive_energy(&single).unwrap().quadruples, 1);
        assert_eq!(additive_energy(&ap(4, 2)).unwrap().quadruples, 44);
        assert_eq!(additive_energy(&ap(2, 1)).unwrap().quadruples, 6);
        let e = additive_energy(&ap(4, 2)).unwrap();
        let json = serde_json::to_string(&e).unwrap();
        assert!(json.starts_with(r#"{"quadruples":"44","#), "{json}");
    }

    #[test]
    fn full_ap_closed_form() {
        // E([N]) = (2N^3 + N) / 3.
        for m in 1..=6u32 {
            let n = 1u128 << m;
            let e = additive_energy(&GridSet::full(1, m).unwrap()).unwrap();
            assert_eq!(e.quadruples, (2 * n * n * n + n) / 3);
        }
    }

    #[test]
    fn scale_energy_examples() {
        let delta = GridMeasure::<f64>::new(2, 4, vec![(vec![0, 0], 1.0)]).unwrap();
        for r in [1.0 / 16.0, 0.25, 1.0] {
            let e = scale_energy(&delta, &delta, r).unwrap();
            assert_eq!(e.energy, 1.0);
            assert!(e.within_window);
        }
        let mu = GridMeasure::<f64>::new(1, 4, vec![(vec![0], 0.5), (vec![15], 0.5)]).unwrap();
        let e = scale_energy(&mu, &mu, 4.0).unwrap();
        assert!((e.energy - 1.0).abs() < 1e-15);
        assert!(scale_energy(&mu, &mu, 0.3).is_err());
        assert!(scale_energy(&mu, &mu, 1.0 / 32.0).is_err());
    }

    #[test]
    fn pr_examples() {
        for n in [2i64, 5, 16] {
            let rep = pr_check(&ap(n, 4), 3).unwrap();
            assert_eq!(rep.doubling_size as i64, 2 * n - 1);
            assert_eq!(rep.iterated[1].1 as i64, 3 * n - 2);
        }
        let line = GridSet::new(2, 4, (0..5).map(|i| vec![2 * i, i])).unwrap();
        assert_eq!(pr_check(&line, 4).unwrap().iterated, pr_check(&ap(5, 4), 4).unwrap().iterated);
    }

    #[test]
    fn doubling_examples() {
        let m = 6;
        let full = GridSet::full(1, m).unwrap();
        let expect = ((2f64.powi(m as i32 + 1) - 1.0) / 2f64.powi(m as i32)).log2() / m as f64;
        assert!((small_doubling_certificate(&full).unwrap() - expect).abs() < 1e-15);
        assert_eq!(small_doubling_certificate(&GridSet::new(1, 6, vec![vec![9]]).unwrap()).unwrap(), 0.0);
    }

    fn arb_set(dim: usize, m: u32, max: usize) -> impl Strategy<Value = GridSet> {
        let side = 1i64 << m;
        proptest::collection::vec(proptest::collection::vec(0..side, dim), 1..max)
            .prop_map(move |pts| GridSet::new(dim, m, pts).unwrap())
    }

    proptest! {
        #[test]
        fn energy_paths_agree(x in arb_set(2, 4, 40)) {
            let sparse = additive_energy_with(&x, EnergyPath::Sparse).unwrap();
            let dense = additive_energy_with(&x, EnergyPath::Dense).unwrap();
            prop_assert_eq!(sparse.quadruples, dense.quadruples);
            prop_assert_eq!(sparse.quadruples, brute_energy(&x));
            let c = GridMeasure::<Rational>::counting(&x);
            let norm = c.convolve(&c).unwrap().l2_norm_sq();
            prop_assert_eq!(norm, Rational::from_integer(sparse.quadruples.into()));
        }

        #[test]
        fn energy_bounds(x in arb_set(3, 3, 30)) {
            let e = additive_energy(&x).unwrap().quadruples;
            let n = x.len() as u128;
            prop_assert!(n * n <= e && e <= n * n * n);
        }

        #[test]
        fn energy_invariances(x in arb_set(2, 3, 20), t in proptest::collection::vec(0i64..8, 2)) {
            let shifted = GridSet::new(2, 4, x.points().iter().map(|p| vec![p[0] + t[0], p[1] + t[1]])).unwrap();
            let swapped = GridSet::new(2, 3, x.points().iter().map(|p| vec![p[1], p[0]])).unwrap();
            let e = additive_energy(&x).unwrap().quadruples;
            prop_assert_eq!(e, additive_energy(&shifted).unwrap().quadruples);
            prop_assert_eq!(e, additive_energy(&swapped).unwrap().quadruples);
        }

        #[test]
        fn sumset_size_bounds(a in arb_set(2, 3, 12), b in arb_set(2, 3, 12)) {
            let s = sumset(&a, &b).unwrap().len();
            prop_assert!(a.len().max(b.len()) <= s && s <= a.len() * b.len());
        }

        #[test]
        fn plunnecke_holds(a in arb_set(2, 3, 16)) {
            prop_assert!(pr_check(&a, 4).is_ok());
        }

        #[test]
        fn scale_energy_window_holds(
            pa in proptest::collection::vec((proptest::collection::vec(0i64..16, 2), 1u32..8), 1..10),
            pb in proptest::collection::vec((proptest::collection::vec(0i64..16, 2), 1u32..8), 1..10),
            j in 0i32..=4,
        ) {
            let mu = GridMeasure::<f64>::new(2, 4, pa.into_iter().map(|(p, w)| (p, w as f64))).unwrap().normalize().unwrap();
            let nu = GridMeasure::<f64>::new(2, 4, pb.into_iter().map(|(p, w)| (p, w as f64))).unwrap().normalize().unwrap();
            let e = scale_energy(&mu, &nu, (-(j as f64)).exp2()).unwrap();
            prop_assert!(e.within_window, "{:?}", e);
        }
    }
}
