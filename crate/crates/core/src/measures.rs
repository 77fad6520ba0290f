//! Finite measures on the dyadic lattice: L^q norms, convolution, dyadic
//! entropy, renormalized local measures, concentration and saturation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, One, ToPrimitive, Zero};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::fft;
use crate::geometry::{self, AffineFlat};
use crate::grid::{prefix, DyadicCube, GridSet, Norm, Packer, Point, MAX_PACKED_BITS};

/// Exact rational weights.
pub type Rational = BigRational;

/// Scalar type of a [`GridMeasure`]: exact rationals or floats.
pub trait Weight:
    Num + Clone + PartialOrd + ToPrimitive + FromPrimitive + fmt::Debug + Send + Sync + 'static
{
    const EXACT: bool;

    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("counts are representable")
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn to_json(&self) -> (Value, Value);

    fn from_json(num: &Value, den: &Value) -> Result<Self>;
}

fn json_big(v: &Value) -> Result<BigInt> {
    let parsed = match v {
        Value::Number(n) if n.is_i64() || n.is_u64() => n.to_string().parse::<BigInt>().ok(),
        Value::String(s) => s.parse::<BigInt>().ok(),
        _ => None,
    };
    parsed.ok_or_else(|| Error::InvalidParameter(format!("expected an integer weight, got {v}")))
}

fn json_f64(v: &Value) -> Result<f64> {
    let parsed = match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.parse::<f64>().ok(),
        _ => None,
    };
    parsed
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::InvalidParameter(format!("expected a numeric weight, got {v}")))
}

impl Weight for f64 {
    const EXACT: bool = false;

    fn to_json(&self) -> (Value, Value) {
        (Value::String(format!("{self:.16e}")), Value::from(1))
    }

    fn from_json(num: &Value, den: &Value) -> Result<Self> {
        Ok(json_f64(num)? / json_f64(den)?)
    }
}

impl Weight for Rational {
    const EXACT: bool = true;

    fn to_json(&self) -> (Value, Value) {
        let num = self.numer();
        let den = self.denom();
        let enc = |b: &BigInt| match b.to_i64() {
            Some(x) if x.unsigned_abs() < (1u64 << 53) => Value::from(x),
            _ => Value::String(b.to_string()),
        };
        (enc(num), enc(den))
    }

    fn from_json(num: &Value, den: &Value) -> Result<Self> {
        let n = match num {
            Value::String(s) if s.contains(['.', 'e', 'E']) => {
                let x = json_f64(num)?;
                Rational::from_float(x).ok_or_else(|| Error::InvalidParameter(format!("bad weight {s}")))?
            }
            _ => Rational::from_integer(json_big(num)?),
        };
        let d = json_big(den)?;
        if d.is_zero() {
            return Err(Error::InvalidParameter("zero denominator".into()));
        }
        Ok(n / Rational::from_integer(d))
    }
}

/// Which convolution kernel to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvPath {
    #[default]
    Auto,
    Direct,
    Dense,
}

/// Nonnegative masses on a lattice set. `normalized` records total mass one.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMeasure<W: Weight = f64> {
    dim: usize,
    scale_exp: u32,
    extent: i64,
    atoms: BTreeMap<Point, W>,
    normalized: bool,
}

const NORMALIZATION_TOL: f64 = 1e-9;

impl<W: Weight> GridMeasure<W> {
    /// Builds a measure from `(point, weight)` pairs; repeated points add up.
    pub fn new(dim: usize, scale_exp: u32, atoms: impl IntoIterator<Item = (Point, W)>) -> Result<Self> {
        Self::with_extent(dim, scale_exp, 1i64 << scale_exp.min(MAX_PACKED_BITS), atoms)
    }

    pub fn with_extent(
        dim: usize,
        scale_exp: u32,
        extent: i64,
        atoms: impl IntoIterator<Item = (Point, W)>,
    ) -> Result<Self> {
        let mut map: BTreeMap<Point, W> = BTreeMap::new();
        for (p, w) in atoms {
            if !(w > W::zero()) {
                return Err(Error::InvalidParameter(format!("weight at {p:?} must be positive")));
            }
            match map.get_mut(&p) {
                Some(acc) => *acc = acc.clone() + w,
                None => {
                    map.insert(p, w);
                }
            }
        }
        GridSet::with_extent(dim, scale_exp, extent, map.keys().cloned())?;
        let mut mu = Self {
            dim,
            scale_exp,
            extent,
            atoms: map,
            normalized: false,
        };
        mu.normalized = mu.mass_is_one();
        Ok(mu)
    }

    fn mass_is_one(&self) -> bool {
        if self.atoms.is_empty() {
            return false;
        }
        let mass = self.mass();
        if W::EXACT {
            mass == W::one()
        } else {
            (mass.to_f64_lossy() - 1.0).abs() <= NORMALIZATION_TOL
        }
    }

    /// Weight one on every point of `A`.
    pub fn counting(a: &GridSet) -> Self {
        let atoms = a.points().iter().map(|p| (p.clone(), W::one())).collect();
        let mut mu = Self {
            dim: a.dim(),
            scale_exp: a.scale_exp(),
            extent: a.extent(),
            atoms,
            normalized: false,
        };
        mu.normalized = mu.mass_is_one();
        mu
    }

    /// Normalized counting measure on `A`.
    pub fn uniform(a: &GridSet) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::EmptySet);
        }
        Self::counting(a).normalize()
    }

    pub fn normalize(&self) -> Result<Self> {
        if self.atoms.is_empty() {
            return Err(Error::ZeroMass);
        }
        let mass = self.mass();
        let atoms = self
            .atoms
            .iter()
            .map(|(p, w)| (p.clone(), w.clone() / mass.clone()))
            .collect();
        Ok(Self {
            atoms,
            normalized: true,
            ..self.clone_shape()
        })
    }

    fn clone_shape(&self) -> Self {
        Self {
            dim: self.dim,
            scale_exp: self.scale_exp,
            extent: self.extent,
            atoms: BTreeMap::new(),
            normalized: false,
        }
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

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn atoms(&self) -> &BTreeMap<Point, W> {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn get(&self, p: &[i64]) -> Option<&W> {
        self.atoms.get(p)
    }

    pub fn support(&self) -> GridSet {
        GridSet::from_sorted_unchecked(self.dim, self.scale_exp, self.extent, self.atoms.keys().cloned().collect())
    }

    /// Total mass, summed in atom order.
    pub fn mass(&self) -> W {
        self.atoms.values().fold(W::zero(), |acc, w| acc + w.clone())
    }

    /// `mu|_A`, keeping the original weights.
    pub fn restrict(&self, a: &GridSet) -> Self {
        let atoms = self
            .atoms
            .iter()
            .filter(|(p, _)| a.contains(p))
            .map(|(p, w)| (p.clone(), w.clone()))
            .collect();
        let mut mu = Self {
            atoms,
            ..self.clone_shape()
        };
        mu.normalized = mu.mass_is_one();
        mu
    }

    /// Same weights, converted to floats.
    pub fn to_float(&self) -> GridMeasure<f64> {
        GridMeasure {
            dim: self.dim,
            scale_exp: self.scale_exp,
            extent: self.extent,
            atoms: self.atoms.iter().map(|(p, w)| (p.clone(), w.to_f64_lossy())).collect(),
            normalized: self.normalized,
        }
    }

    /// `sum_x mu(x)^2`, exact in the rational backend.
    pub fn l2_norm_sq(&self) -> W {
        self.atoms
            .values()
            .fold(W::zero(), |acc, w| acc + w.clone() * w.clone())
    }

    /// `(sum_x mu(x)^q)^{1/q}`; `q = 1` gives the total mass.
    pub fn lq_norm(&self, q: f64) -> Result<f64> {
        if !(q >= 1.0) || !q.is_finite() {
            return Err(Error::InvalidParameter(format!("q must be a finite real >= 1, got {q}")));
        }
        if self.atoms.is_empty() {
            return Err(Error::EmptySet);
        }
        if q == 1.0 {
            return Ok(self.mass().to_f64_lossy());
        }
        if q == 2.0 {
            return Ok(self.l2_norm_sq().to_f64_lossy().sqrt());
        }
        // Scale by the largest atom to avoid underflow for large q.
        let w: Vec<f64> = self.atoms.values().map(|w| w.to_f64_lossy()).collect();
        let top = w.iter().cloned().fold(0.0f64, f64::max);
        let s: f64 = w.iter().map(|x| (x / top).powf(q)).sum();
        Ok(top * s.powf(1.0 / q))
    }

    fn check_compatible<V: Weight>(&self, other: &GridMeasure<V>) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(self.dim, other.dim));
        }
        if self.scale_exp != other.scale_exp {
            return Err(Error::ScaleMismatch(self.scale_exp, other.scale_exp));
        }
        Ok(())
    }

    /// `(mu * nu)(z) = sum_{x+y=z} mu(x) nu(y)` by hash-map accumulation.
    pub fn convolve_direct(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let extent = self
            .extent
            .checked_add(other.extent - 1)
            .ok_or_else(|| Error::Overflow("convolution extent".into()))?;
        let packer = Packer::new(self.dim, extent)?;
        let mut acc: HashMap<u128, W> = HashMap::with_capacity(self.len() * other.len().min(64));
        for (p, a) in &self.atoms {
            for (q, b) in &other.atoms {
                let key = packer.pack_sum(p, q);
                let term = a.clone() * b.clone();
                match acc.get_mut(&key) {
                    Some(v) => *v = v.clone() + term,
                    None => {
                        acc.insert(key, term);
                    }
                }
            }
        }
        let atoms = acc.into_iter().map(|(k, w)| (packer.unpack(k), w)).collect();
        let mut out = Self {
            dim: self.dim,
            scale_exp: self.scale_exp,
            extent,
            atoms,
            normalized: false,
        };
        out.normalized = out.mass_is_one();
        Ok(out)
    }

    /// Masses `mu(I)` of the level-`level` cubes, keyed by cube index.
    pub fn cube_masses(&self, level: u32) -> Result<BTreeMap<Point, W>> {
        if level > self.scale_exp {
            return Err(Error::LevelOutOfRange {
                level,
                max: self.scale_exp,
            });
        }
        let shift = self.scale_exp - level;
        let mut out: BTreeMap<Point, W> = BTreeMap::new();
        for (p, w) in &self.atoms {
            let c = prefix(p, shift);
            match out.get_mut(&c) {
                Some(acc) => *acc = acc.clone() + w.clone(),
                None => {
                    out.insert(c, w.clone());
                }
            }
        }
        Ok(out)
    }

    /// Normalized dyadic entropy `(1/k) H(mu, D_k)` in bits.
    pub fn entropy(&self, level: u32) -> Result<f64> {
        if !self.normalized {
            return Err(Error::NotNormalized);
        }
        if level == 0 || level > self.scale_exp {
            return Err(Error::LevelOutOfRange {
                level,
                max: self.scale_exp,
            });
        }
        let masses = self.cube_masses(level)?;
        Ok(shannon(masses.values().map(|w| w.to_f64_lossy())) / level as f64)
    }

    /// `mu^{x,k}`: the normalized restriction of `mu` to the level-`k` cube of
    /// the lattice point `x`, rescaled onto `[0,1)^d`.
    pub fn local_measure(&self, x: &[i64], level: u32) -> Result<Self> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch(x.len(), self.dim));
        }
        if level > self.scale_exp {
            return Err(Error::LevelOutOfRange {
                level,
                max: self.scale_exp,
            });
        }
        self.local_measure_at(&DyadicCube::containing(x, self.scale_exp, level))
    }

    /// `mu^I` for a cube `I`.
    pub fn local_measure_at(&self, cube: &DyadicCube) -> Result<Self> {
        if cube.dim() != self.dim {
            return Err(Error::DimensionMismatch(cube.dim(), self.dim));
        }
        if cube.level > self.scale_exp {
            return Err(Error::LevelOutOfRange {
                level: cube.level,
                max: self.scale_exp,
            });
        }
        let shift = self.scale_exp - cube.level;
        let inside: Vec<(Point, W)> = self
            .atoms
            .iter()
            .filter(|(p, _)| cube.contains(p, self.scale_exp))
            .map(|(p, w)| {
                let q = p.iter().zip(&cube.coords).map(|(&c, &o)| c - (o << shift)).collect();
                (q, w.clone())
            })
            .collect();
        local_from_parts(self.dim, shift, inside)
    }

    /// Computes both sides of `H_{LS}(mu) = (1/S) sum_s E_{I in D_{sL}} H_L(mu^I)`.
    pub fn entropy_decomposition(&self, block: u32) -> Result<EntropyProfile> {
        if !self.normalized {
            return Err(Error::NotNormalized);
        }
        if block == 0 || self.scale_exp % block != 0 || self.scale_exp == 0 {
            return Err(Error::NotDivisible {
                block,
                scale_exp: self.scale_exp,
            });
        }
        let scales = self.scale_exp / block;
        let total = self.entropy(self.scale_exp)?;

        let mut locals = Vec::with_capacity(scales as usize);
        for s in 0..scales {
            let level = s * block;
            let shift = self.scale_exp - level;
            // Group atoms by their level-sL cube; BTreeMap keeps the reduction order fixed.
            let mut groups: BTreeMap<Point, Vec<(Point, W)>> = BTreeMap::new();
            for (p, w) in &self.atoms {
                let c = prefix(p, shift);
                let local: Point = p.iter().zip(&c).map(|(&x, &o)| x - (o << shift)).collect();
                groups.entry(c).or_default().push((local, w.clone()));
            }
            let mut cubes = Vec::with_capacity(groups.len());
            let mut mean = 0.0;
            for (c, parts) in groups {
                let mass = parts.iter().fold(W::zero(), |acc, (_, w)| acc + w.clone());
                let local = local_from_parts(self.dim, shift, parts)?;
                let h = local.entropy(block)?;
                let m = mass.to_f64_lossy();
                mean += m * h;
                cubes.push(LocalEntropy {
                    cube: DyadicCube { level, coords: c },
                    mass: m,
                    entropy: h,
                });
            }
            locals.push(ScaleEntropy { scale: s, mean, cubes });
        }
        let averaged = locals.iter().map(|l| l.mean).sum::<f64>() / scales as f64;
        Ok(EntropyProfile {
            block,
            scales,
            total,
            averaged,
            locals,
        })
    }

    /// Searches translates `x + V` over the atoms and the barycentre for one
    /// whose open `eps`-neighbourhood carries mass at least `(1 - eps)` of the total.
    pub fn is_concentrated(&self, v: &AffineFlat, eps: f64, norm: Norm) -> Result<Concentration> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidParameter(format!("eps must lie in (0,1), got {eps}")));
        }
        if v.ambient_dim() != self.dim {
            return Err(Error::DimensionMismatch(v.ambient_dim(), self.dim));
        }
        if self.atoms.is_empty() {
            return Err(Error::EmptySet);
        }
        let h = (-(self.scale_exp as f64)).exp2();
        let pts: Vec<(Vec<f64>, f64)> = self
            .atoms
            .iter()
            .map(|(p, w)| (p.iter().map(|&c| c as f64 * h).collect(), w.to_f64_lossy()))
            .collect();
        let total: f64 = pts.iter().map(|(_, w)| w).sum();
        let mut bary = vec![0.0; self.dim];
        for (x, w) in &pts {
            for (b, xi) in bary.iter_mut().zip(x) {
                *b += w * xi / total;
            }
        }
        let linear = v.linear();
        let mut best: Option<(Vec<f64>, f64)> = None;
        let candidates = pts.iter().map(|(x, _)| x.clone()).chain(std::iter::once(bary));
        for x in candidates {
            let shifted = AffineFlat {
                offset: x.clone(),
                ..linear.clone()
            };
            let inside: f64 = pts
                .iter()
                .filter(|(z, _)| geometry::distance_to_flat(z, &shifted, norm) < eps)
                .map(|(_, w)| w)
                .sum();
            if best.as_ref().map_or(true, |(_, m)| inside > *m) {
                best = Some((x, inside));
            }
        }
        let (witness, inside) = best.expect("at least one candidate");
        let fraction = inside / total;
        Ok(Concentration {
            concentrated: fraction >= 1.0 - eps - 1e-12,
            witness,
            fraction,
            witness_restricted: true,
        })
    }

    /// `(V, L)`-saturation: `H_L(mu) >= H_L(pi_{V^perp} mu) + dim V - C/L`.
    pub fn is_saturated(&self, v: &AffineFlat, block: u32, constant: f64) -> Result<Saturation> {
        if v.ambient_dim() != self.dim {
            return Err(Error::DimensionMismatch(v.ambient_dim(), self.dim));
        }
        let h_mu = self.entropy(block)?;
        let complement = geometry::orthonormal_complement(&v.frame, self.dim);
        let h = (-(self.scale_exp as f64)).exp2();
        let scale = (block as f64).exp2();
        let mut bins: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
        for (p, w) in &self.atoms {
            let x: Vec<f64> = p.iter().map(|&c| c as f64 * h).collect();
            let key: Vec<i64> = complement
                .iter()
                .map(|e| (geometry::dot(e, &x) * scale).floor() as i64)
                .collect();
            *bins.entry(key).or_insert(0.0) += w.to_f64_lossy();
        }
        let h_proj = shannon(bins.values().cloned()) / block as f64;
        let deficit = h_mu - (h_proj + v.dim_k() as f64 - constant / block as f64);
        Ok(Saturation {
            saturated: deficit >= -1e-12,
            deficit,
            entropy: h_mu,
            projected_entropy: h_proj,
            constant,
        })
    }
}

impl GridMeasure<f64> {
    /// Convolution through a dense FFT on the bounding box.
    pub fn convolve_dense(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let extent = self.extent + other.extent - 1;
        let a: Vec<(&[i64], f64)> = self.atoms.iter().map(|(p, w)| (p.as_slice(), *w)).collect();
        let b: Vec<(&[i64], f64)> = other.atoms.iter().map(|(p, w)| (p.as_slice(), *w)).collect();
        let out = fft::sparse_convolve(self.dim, &a, &b, fft::DENSE_CAP)?;
        let atoms = out.into_iter().collect();
        let mut mu = Self {
            dim: self.dim,
            scale_exp: self.scale_exp,
            extent,
            atoms,
            normalized: false,
        };
        mu.normalized = mu.mass_is_one();
        Ok(mu)
    }

    /// Dense path when the padded box fits the cap and the inputs are not tiny; direct otherwise.
    pub fn convolve(&self, other: &Self, path: ConvPath) -> Result<Self> {
        match path {
            ConvPath::Direct => self.convolve_direct(other),
            ConvPath::Dense => self.convolve_dense(other),
            ConvPath::Auto => {
                let pairs = self.len() as f64 * other.len() as f64;
                let a: Vec<&[i64]> = self.atoms.keys().map(|p| p.as_slice()).collect();
                let b: Vec<&[i64]> = other.atoms.keys().map(|p| p.as_slice()).collect();
                let vol = fft::padded_volume(self.dim, &a, &b);
                if vol.is_some_and(|v| v <= fft::DENSE_CAP && (v as f64) * 8.0 < pairs) {
                    self.convolve_dense(other)
                } else {
                    self.convolve_direct(other)
                }
            }
        }
    }
}

impl GridMeasure<Rational> {
    pub fn convolve(&self, other: &Self) -> Result<Self> {
        self.convolve_direct(other)
    }
}

fn local_from_parts<W: Weight>(dim: usize, scale_exp: u32, parts: Vec<(Point, W)>) -> Result<GridMeasure<W>> {
    if parts.is_empty() {
        return Err(Error::ZeroMass);
    }
    let mass = parts.iter().fold(W::zero(), |acc, (_, w)| acc + w.clone());
    if !(mass > W::zero()) {
        return Err(Error::ZeroMass);
    }
    let atoms = parts.into_iter().map(|(p, w)| (p, w / mass.clone())).collect();
    Ok(GridMeasure {
        dim,
        scale_exp,
        extent: 1i64 << scale_exp,
        atoms,
        normalized: true,
    })
}

/// `-sum p log2 p` over the given probabilities, in iteration order.
pub fn shannon(probs: impl IntoIterator<Item = f64>) -> f64 {
    probs
        .into_iter()
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.log2())
        .sum::<f64>()
        .max(0.0)
}

/// Both sides of the local-to-global entropy identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyProfile {
    #[serde(rename = "L")]
    pub block: u32,
    #[serde(rename = "S")]
    pub scales: u32,
    /// `H_{LS}(mu)`.
    pub total: f64,
    /// `(1/S) sum_s sum_I mu(I) H_L(mu^I)`.
    pub averaged: f64,
    pub locals: Vec<ScaleEntropy>,
}

impl EntropyProfile {
    pub fn discrepancy(&self) -> f64 {
        (self.total - self.averaged).abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleEntropy {
    pub scale: u32,
    pub mean: f64,
    pub cubes: Vec<LocalEntropy>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalEntropy {
    pub cube: DyadicCube,
    pub mass: f64,
    pub entropy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Concentration {
    pub concentrated: bool,
    pub witness: Vec<f64>,
    /// Fraction of the mass within `eps` of `witness + V`.
    pub fraction: f64,
    /// The translate was searched over atoms and barycentre only.
    pub witness_restricted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Saturation {
    pub saturated: bool,
    /// `H_L(mu) - H_L(pi mu) - dim V + C/L`; nonnegative iff saturated.
    pub deficit: f64,
    pub entropy: f64,
    pub projected_entropy: f64,
    pub constant: f64,
}

#[derive(Serialize, Deserialize)]
struct MeasureRepr {
    d: usize,
    m: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    extent: Option<i64>,
    atoms: Vec<(Point, Value, Value)>,
}

impl<W: Weight> Serialize for GridMeasure<W> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let extended = self.extent != 1i64 << self.scale_exp;
        MeasureRepr {
            d: self.dim,
            m: self.scale_exp,
            extent: extended.then_some(self.extent),
            atoms: self
                .atoms
                .iter()
                .map(|(p, w)| {
                    let (n, d) = w.to_json();
                    (p.clone(), n, d)
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de, W: Weight> Deserialize<'de> for GridMeasure<W> {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let r = MeasureRepr::deserialize(de)?;
        if r.d == 0 || r.d as u64 * r.m as u64 > MAX_PACKED_BITS as u64 {
            return Err(D::Error::custom(format!("unsupported shape d = {}, m = {}", r.d, r.m)));
        }
        let atoms = r
            .atoms
            .iter()
            .map(|(p, n, d)| W::from_json(n, d).map(|w| (p.clone(), w)))
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        let extent = r.extent.unwrap_or(1i64 << r.m);
        GridMeasure::with_extent(r.d, r.m, extent, atoms).map_err(D::Error::custom)
    }
}

/// Exact rational from a ratio of counts.
pub fn ratio(num: u64, den: u64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

/// Serializes a [`Rational`] as `"num/den"` (or `"num"` for integers).
pub mod rational_serde {
    use super::Rational;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&r.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let text = String::deserialize(d)?;
        text.trim().parse::<Rational>().map_err(D::Error::custom)
    }
}

impl<W: Weight> GridMeasure<W> {
    /// Rational copy of the weights; floats convert to their exact binary value.
    pub fn to_rational(&self) -> GridMeasure<Rational> {
        GridMeasure {
            dim: self.dim,
            scale_exp: self.scale_exp,
            extent: self.extent,
            atoms: self
                .atoms
                .iter()
                .map(|(p, w)| {
                    let r = w
                        .to_f64()
                        .and_then(Rational::from_float)
                        .unwrap_or_else(Rational::zero);
                    (p.clone(), r)
                })
                .collect(),
            normalized: self.normalized,
        }
    }
}

impl GridMeasure<Rational> {
    pub fn is_probability(&self) -> bool {
        self.mass() == Rational::one()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m1(m: u32, atoms: &[(i64, f64)]) -> GridMeasure<f64> {
        GridMeasure::new(1, m, atoms.iter().map(|&(p, w)| (vec![p], w))).unwrap()
    }

    #[test]
    fn lq_norm_examples() {
        let u = GridMeasure::<f64>::uniform(&GridSet::new(1, 2, (0..4).map(|i| vec![i])).unwrap()).unwrap();
        assert!((u.lq_norm(2.0).unwrap() - 0.5).abs() < 1e-15);
        let delta = m1(3, &[(5, 1.0)]);
        for q in [1.0, 1.5, 2.0, 3.0] {
            assert!((delta.lq_norm(q).unwrap() - 1.0).abs() < 1e-15);
        }
        let mu = m1(2, &[(0, 0.5), (1, 0.25), (2, 0.25)]);
        assert!((mu.lq_norm(2.0).unwrap() - 0.612_372_435_695_794_5).abs() < 1e-12);
        assert!(mu.lq_norm(0.5).is_err());
    }

    #[test]
    fn convolution_examples() {
        let delta = m1(2, &[(0, 1.0)]);
        let mu = m1(2, &[(1, 0.25), (3, 0.75)]);
        assert_eq!(delta.convolve_direct(&mu).unwrap().atoms(), mu.atoms());

        let half = GridMeasure::<Rational>::new(1, 1, vec![(vec![0], ratio(1, 2)), (vec![1], ratio(1, 2))]).unwrap();
        let sq = half.convolve(&half).unwrap();
        let expect: Vec<Rational> = vec![ratio(1, 4), ratio(1, 2), ratio(1, 4)];
        assert_eq!(sq.atoms().values().cloned().collect::<Vec<_>>(), expect);
        assert_eq!(sq.extent(), 3);
        assert!(sq.is_probability());
    }

    #[test]
    fn counting_convolution_norm_is_energy() {
        // X = [4]: sum_s r(s)^2 = 44.
        let x = GridSet::new(1, 2, (0..4).map(|i| vec![i])).unwrap();
        let c = GridMeasure::<Rational>::counting(&x);
        assert_eq!(c.convolve(&c).unwrap().l2_norm_sq(), Rational::from_integer(44.into()));
    }

    #[test]
    fn dense_matches_direct() {
        let mu = GridMeasure::<f64>::new(
            2,
            3,
            vec![(vec![0, 1], 0.5), (vec![7, 2], 0.25), (vec![3, 3], 0.25)],
        )
        .unwrap();
        let nu = GridMeasure::<f64>::new(2, 3, vec![(vec![1, 1], 0.125), (vec![6, 0], 0.875)]).unwrap();
        let a = mu.convolve_direct(&nu).unwrap();
        let b = mu.convolve_dense(&nu).unwrap();
        assert_eq!(a.atoms().len(), b.atoms().len());
        for ((p, x), (q, y)) in a.atoms().iter().zip(b.atoms()) {
            assert_eq!(p, q);
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(m1(3, &[(2, 1.0)]).entropy(3).unwrap(), 0.0);
        let full = GridMeasure::<f64>::uniform(&GridSet::full(2, 3).unwrap()).unwrap();
        assert!((full.entropy(3).unwrap() - 2.0).abs() < 1e-12);
        let two = m1(2, &[(0, 0.5), (2, 0.5)]);
        assert!((two.entropy(1).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(m1(2, &[(0, 0.5)]).entropy(1), Err(Error::NotNormalized));
    }

    #[test]
    fn local_measure_examples() {
        let mu = m1(3, &[(1, 0.5), (5, 0.25), (6, 0.25)]);
        assert_eq!(mu.local_measure(&[5], 0).unwrap(), mu);
        // The right half carries 1/2; atoms 5/8 and 6/8 map to 1/4 and 2/4.
        let right = mu.local_measure(&[5], 1).unwrap();
        assert_eq!(right.scale_exp(), 2);
        assert_eq!(right.atoms().iter().map(|(p, w)| (p[0], *w)).collect::<Vec<_>>(), vec![(1, 0.5), (2, 0.5)]);
        let full = GridMeasure::<f64>::uniform(&GridSet::full(2, 4).unwrap()).unwrap();
        let local = full.local_measure(&[9, 3], 2).unwrap();
        assert_eq!(local.support(), GridSet::full(2, 2).unwrap());
        assert!(matches!(mu.local_measure_at(&DyadicCube::new(2, vec![1]).unwrap()), Err(Error::ZeroMass)));
    }

    #[test]
    fn entropy_decomposition_trivial_cases() {
        let delta = m1(4, &[(7, 1.0)]);
        let e = delta.entropy_decomposition(2).unwrap();
        assert_eq!((e.total, e.averaged), (0.0, 0.0));
        let full = GridMeasure::<f64>::uniform(&GridSet::full(2, 4).unwrap()).unwrap();
        let e = full.entropy_decomposition(2).unwrap();
        assert!((e.total - 2.0).abs() < 1e-12 && (e.averaged - 2.0).abs() < 1e-12);
        assert!(matches!(full.entropy_decomposition(3), Err(Error::NotDivisible { .. })));
    }

    #[test]
    fn concentration_examples() {
        let line = AffineFlat::axis(2, &[0]);
        let on_line = GridMeasure::<f64>::uniform(&GridSet::new(2, 4, (0..16).map(|i| vec![i, 3])).unwrap()).unwrap();
        assert!(on_line.is_concentrated(&line, 0.01, Norm::Euclidean).unwrap().concentrated);

        let full = GridMeasure::<f64>::uniform(&GridSet::full(2, 4).unwrap()).unwrap();
        let c = full.is_concentrated(&line, 1.0 / 16.0, Norm::Euclidean).unwrap();
        assert!(!c.concentrated);
        assert!(c.witness_restricted);

        let point = AffineFlat::point(vec![0.0, 0.0]);
        let atom = m1(2, &[(1, 1.0)]);
        assert!(atom.is_concentrated(&AffineFlat::point(vec![0.0]), 0.3, Norm::Max).unwrap().concentrated);
        assert!(full.is_concentrated(&point, 0.5, Norm::Max).is_ok());
    }

    #[test]
    fn saturation_examples() {
        let full = GridMeasure::<f64>::uniform(&GridSet::full(2, 4).unwrap()).unwrap();
        let line = AffineFlat::axis(2, &[0]);
        assert!(full.is_saturated(&line, 4, 1.0).unwrap().saturated);

        let atom = GridMeasure::<f64>::new(2, 4, vec![(vec![3, 3], 1.0)]).unwrap();
        let s = atom.is_saturated(&line, 4, 2.0).unwrap();
        assert!(!s.saturated && s.deficit < 0.0);

        let on_line = GridMeasure::<f64>::uniform(&GridSet::new(2, 4, (0..16).map(|i| vec![i, 5])).unwrap()).unwrap();
        assert!(on_line.is_saturated(&line, 4, 2.0).unwrap().saturated);
    }

    #[test]
    fn json_round_trip() {
        let mu = GridMeasure::<Rational>::new(1, 2, vec![(vec![0], ratio(1, 3)), (vec![3], ratio(2, 3))]).unwrap();
        let s = serde_json::to_string(&mu).unwrap();
        assert_eq!(s, r#"{"d":1,"m":2,"atoms":[[[0],1,3],[[3],2,3]]}"#);
        let back: GridMeasure<Rational> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, mu);
        assert!(back.is_normalized());

        let f = mu.to_float();
        let s = serde_json::to_string(&f).unwrap();
        assert!(s.contains("\"3.3333333333333331e-1\""), "{s}");
        let back: GridMeasure<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
        assert!(serde_json::from_str::<GridMeasure<f64>>(r#"{"d":1,"m":2,"atoms":[[[0],-1,3]]}"#).is_err());
    }

    fn arb_measure(dim: usize, m: u32) -> impl Strategy<Value = GridMeasure<f64>> {
        let side = 1i64 << m;
        proptest::collection::vec((proptest::collection::vec(0..side, dim), 1u32..64), 1..24).prop_map(
            move |atoms| {
                GridMeasure::new(dim, m, atoms.into_iter().map(|(p, w)| (p, w as f64)))
                    .unwrap()
                    .normalize()
                    .unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn young_bound(mu in arb_measure(2, 4), nu in arb_measure(2, 4)) {
            let conv = mu.convolve(&nu, ConvPath::Auto).unwrap();
            for q in [1.5, 2.0, 3.0] {
                prop_assert!(conv.lq_norm(q).unwrap() <= mu.lq_norm(q).unwrap() + 1e-9);
            }
        }

        #[test]
        fn norms_decrease_in_q(mu in arb_measure(1, 6)) {
            let qs = [1.0, 1.5, 2.0, 3.0, 5.0];
            for w in qs.windows(2) {
                prop_assert!(mu.lq_norm(w[0]).unwrap() + 1e-12 >= mu.lq_norm(w[1]).unwrap());
            }
        }

        #[test]
        fn entropy_identity(mu in arb_measure(2, 6), block in prop::sample::select(vec![1u32, 2, 3, 6])) {
            let e = mu.entropy_decomposition(block).unwrap();
            prop_assert!(e.discrepancy() <= 1e-9);
            prop_assert!(e.total >= 0.0 && e.total <= 2.0 + 1e-12);
        }

        #[test]
        fn dense_and_direct_agree(mu in arb_measure(2, 3), nu in arb_measure(2, 3)) {
            let a = mu.convolve_direct(&nu).unwrap();
            let b = mu.convolve_dense(&nu).unwrap();
            prop_assert_eq!(a.atoms().len(), b.atoms().len());
            for ((p, x), (q, y)) in a.atoms().iter().zip(b.atoms()) {
                prop_assert_eq!(p, q);
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((a.mass() - 1.0).abs() < 1e-12);
        }
    }
}
