//! Deterministic corpus of structured sets and measures with known ground truth.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)`.

use std::collections::BTreeSet;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, AffineFlat};
use crate::grid::{for_each_in_box, GridSet, Norm, Point, MAX_PACKED_BITS};
use crate::measures::{GridMeasure, Rational};

/// Which binary digits (1-based, most significant first) must vanish.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DigitMask {
    Odd,
    Even,
    Positions(Vec<u32>),
}

impl DigitMask {
    fn zero_bits(&self, m: u32) -> Result<i64> {
        let positions: Vec<u32> = match self {
            DigitMask::Odd => (1..=m).step_by(2).collect(),
            DigitMask::Even => (2..=m).step_by(2).collect(),
            DigitMask::Positions(p) => p.clone(),
        };
        let mut bits = 0i64;
        for j in positions {
            if j == 0 || j > m {
                return Err(Error::InvalidParameter(format!("digit position {j} outside 1..={m}")));
            }
            bits |= 1i64 << (m - j);
        }
        Ok(bits)
    }
}

/// A corpus family with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CorpusSpec {
    Full {
        d: usize,
        m: u32,
    },
    Singleton {
        d: usize,
        m: u32,
        #[serde(default)]
        point: Option<Point>,
    },
    /// `{start + i step : i < n}` in `d = 1`.
    Ap {
        m: u32,
        n: u64,
        #[serde(default)]
        start: i64,
        #[serde(default = "one")]
        step: i64,
    },
    /// `{base + sum a_i v_i : 0 <= a_i < lengths[i]}`.
    Gap {
        d: usize,
        m: u32,
        #[serde(default)]
        base: Option<Point>,
        generators: Vec<Point>,
        lengths: Vec<u64>,
    },
    /// Lattice points within `sqrt(d) 2^{-m}` of a `k`-flat; the frame defaults
    /// to the first `k` coordinate axes.
    Flat {
        d: usize,
        m: u32,
        k: usize,
        #[serde(default)]
        frame: Option<Vec<Vec<f64>>>,
        offset: Vec<f64>,
    },
    CantorDyadic {
        d: usize,
        m: u32,
        mask: DigitMask,
    },
    /// Cartesian product; all factors share `m`.
    Product {
        factors: Vec<CorpusSpec>,
    },
    /// `n` distinct points drawn uniformly.
    Random {
        d: usize,
        m: u32,
        n: usize,
        seed: u64,
    },
    /// Union of parallel `k`-flats, one per offset.
    PlaneUnion {
        d: usize,
        m: u32,
        k: usize,
        #[serde(default)]
        frame: Option<Vec<Vec<f64>>>,
        offsets: Vec<Vec<f64>>,
    },
}

fn one() -> i64 {
    1
}

fn check_shape(d: usize, m: u32) -> Result<()> {
    if d == 0 || m == 0 || d as u64 * m as u64 > MAX_PACKED_BITS as u64 {
        return Err(Error::InvalidParameter(format!("need d >= 1, m >= 1 and d m <= {MAX_PACKED_BITS}")));
    }
    Ok(())
}

fn axis_frame(d: usize, k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Lattice points within `sqrt(d) 2^{-m}` of the flat.
fn flat_points(d: usize, m: u32, flat: &AffineFlat) -> Vec<Point> {
    let h = (-(m as f64)).exp2();
    let side = 1i64 << m;
    let radius = (d as f64).sqrt() * h * (1.0 + 1e-9);
    let k = flat.dim_k();
    // Re-anchor at the foot of the cube centre so parameters stay within sqrt(d)/2.
    let centre = vec![0.5; d];
    let anchor = flat.project(&centre);
    let reach = (d as f64).sqrt() / 2.0 + h;
    let steps = (reach / h).ceil() as i64;
    let pad = ((d as f64).sqrt() + (k as f64).sqrt() / 2.0).ceil() as i64 + 1;
    let mut found = BTreeSet::new();
    for_each_in_box(&vec![-steps; k], &vec![steps; k], |t| {
        let x: Vec<f64> = (0..d)
            .map(|i| anchor[i] + (0..k).map(|j| flat.frame[j][i] * t[j] as f64 * h).sum::<f64>())
            .collect();
        let cell: Vec<i64> = x.iter().map(|&c| (c / h).floor() as i64).collect();
        let lo: Vec<i64> = cell.iter().map(|&c| (c - pad).max(0)).collect();
        let hi: Vec<i64> = cell.iter().map(|&c| (c + pad).min(side - 1)).collect();
        if lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return;
        }
        for_each_in_box(&lo, &hi, |p| {
            if found.contains(p) {
                return;
            }
            let z: Vec<f64> = p.iter().map(|&c| c as f64 * h).collect();
            if geometry::distance_to_flat(&z, flat, Norm::Euclidean) <= radius {
                found.insert(p.to_vec());
            }
        });
    });
    found.into_iter().collect()
}

fn make_flat(d: usize, k: usize, frame: &Option<Vec<Vec<f64>>>, offset: &[f64]) -> Result<AffineFlat> {
    if k > d || offset.len() != d {
        return Err(Error::InvalidParameter(format!("need k <= d = {d} and a {d}-dimensional offset")));
    }
    let frame = frame.clone().unwrap_or_else(|| axis_frame(d, k));
    if frame.len() != k {
        return Err(Error::InvalidParameter(format!("frame has {} vectors, expected {k}", frame.len())));
    }
    AffineFlat::new(frame, offset.to_vec())
}

impl CorpusSpec {
    pub fn family(&self) -> &'static str {
        match self {
            CorpusSpec::Full { .. } => "full",
            CorpusSpec::Singleton { .. } => "singleton",
            CorpusSpec::Ap { .. } => "ap",
            CorpusSpec::Gap { .. } => "gap",
            CorpusSpec::Flat { .. } => "flat",
            CorpusSpec::CantorDyadic { .. } => "cantor_dyadic",
            CorpusSpec::Product { .. } => "product",
            CorpusSpec::Random { .. } => "random",
            CorpusSpec::PlaneUnion { .. } => "plane_union",
        }
    }
}

/// Builds the set described by `spec`.
pub fn generate(spec: &CorpusSpec) -> Result<GridSet> {
    match spec {
        CorpusSpec::Full { d, m } => {
            check_shape(*d, *m)?;
            GridSet::full(*d, *m)
        }
        CorpusSpec::Singleton { d, m, point } => {
            check_shape(*d, *m)?;
            let p = point.clone().unwrap_or_else(|| vec![0; *d]);
            GridSet::new(*d, *m, vec![p])
        }
        CorpusSpec::Ap { m, n, start, step } => {
            check_shape(1, *m)?;
            if *n == 0 {
                return Err(Error::InvalidParameter("ap needs n >= 1".into()));
            }
            GridSet::new(1, *m, (0..*n as i64).map(|i| vec![start + i * step]))
        }
        CorpusSpec::Gap {
            d,
            m,
            base,
            generators,
            lengths,
        } => {
            check_shape(*d, *m)?;
            if generators.len() != lengths.len() || generators.iter().any(|g| g.len() != *d) || lengths.contains(&0) {
                return Err(Error::InvalidParameter("gap needs one positive length per d-dimensional generator".into()));
            }
            let base = base.clone().unwrap_or_else(|| vec![0; *d]);
            let hi: Vec<i64> = lengths.iter().map(|&l| l as i64 - 1).collect();
            let mut pts = Vec::new();
            for_each_in_box(&vec![0; lengths.len()], &hi, |a| {
                let p: Point = (0..*d)
                    .map(|i| base[i] + a.iter().zip(generators).map(|(&c, g)| c * g[i]).sum::<i64>())
                    .collect();
                pts.push(p);
            });
            GridSet::new(*d, *m, pts)
        }
        CorpusSpec::Flat { d, m, k, frame, offset } => {
            check_shape(*d, *m)?;
            let flat = make_flat(*d, *k, frame, offset)?;
            GridSet::new(*d, *m, flat_points(*d, *m, &flat))
        }
        CorpusSpec::CantorDyadic { d, m, mask } => {
            check_shape(*d, *m)?;
            let zero = mask.zero_bits(*m)?;
            let digits: Vec<i64> = (0..1i64 << m).filter(|x| x & zero == 0).collect();
            let n = digits.len() as i64;
            let mut pts = Vec::new();
            for_each_in_box(&vec![0; *d], &vec![n - 1; *d], |idx| {
                pts.push(idx.iter().map(|&i| digits[i as usize]).collect());
            });
            GridSet::new(*d, *m, pts)
        }
        CorpusSpec::Product { factors } => {
            let sets: Vec<GridSet> = factors.iter().map(generate).collect::<Result<_>>()?;
            let Some(first) = sets.first() else {
                return Err(Error::InvalidParameter("product needs at least one factor".into()));
            };
            let m = first.scale_exp();
            if let Some(s) = sets.iter().find(|s| s.scale_exp() != m) {
                return Err(Error::ScaleMismatch(s.scale_exp(), m));
            }
            let d: usize = sets.iter().map(|s| s.dim()).sum();
            check_shape(d, m)?;
            let hi: Vec<i64> = sets.iter().map(|s| s.len() as i64 - 1).collect();
            let mut pts = Vec::new();
            for_each_in_box(&vec![0; sets.len()], &hi, |idx| {
                pts.push(
                    idx.iter()
                        .zip(&sets)
                        .flat_map(|(&i, s)| s.points()[i as usize].iter().copied())
                        .collect(),
                );
            });
            GridSet::new(d, m, pts)
        }
        CorpusSpec::Random { d, m, n, seed } => {
            check_shape(*d, *m)?;
            let total = 1u64 << (*d as u32 * m);
            if *n as u64 > total {
                return Err(Error::InvalidParameter(format!("cannot draw {n} of {total} points")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut chosen = BTreeSet::new();
            while chosen.len() < *n {
                chosen.insert(rng.random_range(0..total));
            }
            let mask = (1u64 << m) - 1;
            let pts = chosen.into_iter().map(|code| {
                (0..*d)
                    .map(|i| ((code >> ((*d - 1 - i) as u32 * m)) & mask) as i64)
                    .collect()
            });
            GridSet::new(*d, *m, pts)
        }
        CorpusSpec::PlaneUnion { d, m, k, frame, offsets } => {
            check_shape(*d, *m)?;
            let mut pts = BTreeSet::new();
            for offset in offsets {
                let flat = make_flat(*d, *k, frame, offset)?;
                pts.extend(flat_points(*d, *m, &flat));
            }
            GridSet::new(*d, *m, pts)
        }
    }
}

/// How atoms are weighted before normalization.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum WeightRule {
    Uniform,
    /// Weight `2^{-j}` per atom with `j` drawn uniformly from `0..=max_exp`.
    DyadicWeights {
        seed: u64,
        #[serde(default = "default_max_exp")]
        max_exp: u32,
    },
}

fn default_max_exp() -> u32 {
    4
}

/// A probability measure on `generate(spec)`, normalized exactly.
pub fn generate_measure(spec: &CorpusSpec, rule: &WeightRule) -> Result<GridMeasure<Rational>> {
    let set = generate(spec)?;
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let weights: Vec<Rational> = match rule {
        WeightRule::Uniform => vec![Rational::one(); set.len()],
        WeightRule::DyadicWeights { seed, max_exp } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..set.len())
                .map(|_| {
                    let j = rng.random_range(0..=*max_exp);
                    Rational::new(BigInt::one(), BigInt::one() << j)
                })
                .collect()
        }
    };
    let total = weights.iter().fold(Rational::zero(), |acc, w| acc + w);
    let atoms = set.points().iter().cloned().zip(weights.into_iter().map(|w| w / &total));
    GridMeasure::new(set.dim(), set.scale_exp(), atoms)
}

/// Facts a family is known to satisfy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Exact cardinality when it has a closed form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    /// Dimension of the underlying flat.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    /// `|A+A| <= doubling_bound |A|`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doubling_bound: Option<f64>,
    /// `(k, rho)` for which the set is porous between `2^{-m}` and 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub porous: Option<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub name: String,
    pub spec: CorpusSpec,
    pub truth: GroundTruth,
}

fn entry(name: &str, spec: CorpusSpec, truth: GroundTruth) -> CorpusEntry {
    CorpusEntry {
        name: name.to_string(),
        spec,
        truth,
    }
}

/// Offset of an axis flat whose normal coordinates sit at lattice row
/// `1 + 8j`, so its three-row thickening stays inside one level-`(m-3)` cube.
fn row_offset(d: usize, k: usize, m: u32, j: i64) -> Vec<f64> {
    let h = (-(m as f64)).exp2();
    (0..d).map(|i| if i < k { 0.0 } else { (1 + 8 * j) as f64 * h }).collect()
}

/// The standard corpus.
pub fn corpus() -> Vec<CorpusEntry> {
    let flat = |d: usize, k: usize, m: u32, j: i64| CorpusSpec::Flat {
        d,
        m,
        k,
        frame: None,
        offset: row_offset(d, k, m, j),
    };
    let thick = |d: usize, k: usize| 3usize.pow((d - k) as u32);
    vec![
        entry("full-1d", CorpusSpec::Full { d: 1, m: 6 }, GroundTruth {
            size: Some(64),
            dimension: Some(1),
            doubling_bound: Some(2.0),
            porous: None,
        }),
        entry("full-2d", CorpusSpec::Full { d: 2, m: 4 }, GroundTruth {
            size: Some(256),
            dimension: Some(2),
            doubling_bound: Some(4.0),
            porous: None,
        }),
        entry("full-3d", CorpusSpec::Full { d: 3, m: 3 }, GroundTruth {
            size: Some(512),
            dimension: Some(3),
            doubling_bound: Some(8.0),
            porous: None,
        }),
        entry(
            "singleton-2d",
            CorpusSpec::Singleton {
                d: 2,
                m: 6,
                point: Some(vec![17, 40]),
            },
            GroundTruth {
                size: Some(1),
                dimension: Some(0),
                doubling_bound: Some(1.0),
                porous: Some((1, 0.25)),
            },
        ),
        entry(
            "ap-100",
            CorpusSpec::Ap {
                m: 8,
                n: 100,
                start: 3,
                step: 2,
            },
            GroundTruth {
                size: Some(100),
                dimension: None,
                doubling_bound: Some(2.0),
                porous: None,
            },
        ),
        entry(
            "gap-2d",
            CorpusSpec::Gap {
                d: 2,
                m: 6,
                base: Some(vec![2, 2]),
                generators: vec![vec![1, 0], vec![0, 3]],
                lengths: vec![10, 5],
            },
            GroundTruth {
                size: Some(50),
                dimension: None,
                doubling_bound: Some(4.0),
                porous: None,
            },
        ),
        entry("flat-2d-k0", flat(2, 0, 6, 2), GroundTruth {
            size: Some(thick(2, 0)),
            dimension: Some(0),
            doubling_bound: Some(25.0 / 9.0),
            porous: None,
        }),
        entry("flat-2d-k1", flat(2, 1, 6, 3), GroundTruth {
            size: Some(64 * thick(2, 1)),
            dimension: Some(1),
            doubling_bound: Some(2.0 * 5.0 / 3.0),
            porous: None,
        }),
        entry("flat-3d-k1", flat(3, 1, 5, 1), GroundTruth {
            size: Some(32 * thick(3, 1)),
            dimension: Some(1),
            doubling_bound: Some(2.0 * 25.0 / 9.0),
            porous: None,
        }),
        entry("flat-3d-k2", flat(3, 2, 4, 1), GroundTruth {
            size: Some(256 * thick(3, 2)),
            dimension: Some(2),
            doubling_bound: Some(4.0 * 5.0 / 3.0),
            porous: None,
        }),
        entry(
            "cantor-1d",
            CorpusSpec::CantorDyadic {
                d: 1,
                m: 8,
                mask: DigitMask::Odd,
            },
            GroundTruth {
                size: Some(16),
                dimension: None,
                doubling_bound: Some(81.0 / 16.0),
                porous: Some((1, 1.0 / 16.0)),
            },
        ),
        entry(
            "cantor-2d",
            CorpusSpec::CantorDyadic {
                d: 2,
                m: 6,
                mask: DigitMask::Odd,
            },
            GroundTruth {
                size: Some(64),
                dimension: None,
                doubling_bound: Some(729.0 / 64.0),
                porous: None,
            },
        ),
        entry(
            "line-x-cantor",
            CorpusSpec::Product {
                factors: vec![
                    CorpusSpec::Full { d: 1, m: 6 },
                    CorpusSpec::CantorDyadic {
                        d: 1,
                        m: 6,
                        mask: DigitMask::Odd,
                    },
                ],
            },
            GroundTruth {
                size: Some(64 * 8),
                dimension: None,
                doubling_bound: Some(2.0 * 27.0 / 8.0),
                porous: None,
            },
        ),
        entry(
            "random-2d",
            CorpusSpec::Random {
                d: 2,
                m: 6,
                n: 50,
                seed: 7,
            },
            GroundTruth {
                size: Some(50),
                ..GroundTruth::default()
            },
        ),
        entry(
            "random-3d",
            CorpusSpec::Random {
                d: 3,
                m: 4,
                n: 40,
                seed: 11,
            },
            GroundTruth {
                size: Some(40),
                ..GroundTruth::default()
            },
        ),
        entry(
            "two-lines",
            CorpusSpec::PlaneUnion {
                d: 2,
                m: 6,
                k: 1,
                frame: None,
                offsets: vec![row_offset(2, 1, 6, 0), row_offset(2, 1, 6, 6)],
            },
            GroundTruth {
                size: Some(2 * 64 * 3),
                dimension: Some(1),
                doubling_bound: None,
                porous: None,
            },
        ),
    ]
}
