//! Affine flats, slab fitting, projections, Grassmannian nets and porosity.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::grid::{for_each_in_box, GridSet, Norm};

/// Hard cap on the number of subspaces in a net.
pub const NET_BUDGET: usize = 1 << 14;

/// A `k`-dimensional affine plane `offset + span(frame)` in `R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlatRepr", into = "FlatRepr")]
pub struct AffineFlat {
    pub frame: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FlatRepr {
    k: usize,
    frame: Vec<Vec<f64>>,
    offset: Vec<f64>,
}

impl TryFrom<FlatRepr> for AffineFlat {
    type Error = Error;

    fn try_from(r: FlatRepr) -> Result<Self> {
        if r.k != r.frame.len() {
            return Err(Error::InvalidParameter(format!(
                "flat declares k = {} but has {} frame vectors",
                r.k,
                r.frame.len()
            )));
        }
        AffineFlat::new(r.frame, r.offset)
    }
}

impl From<AffineFlat> for FlatRepr {
    fn from(f: AffineFlat) -> Self {
        FlatRepr {
            k: f.frame.len(),
            frame: f.frame,
            offset: f.offset,
        }
    }
}

impl AffineFlat {
    /// Validates that `frame` is orthonormal in `R^{offset.len()}`.
    pub fn new(frame: Vec<Vec<f64>>, offset: Vec<f64>) -> Result<Self> {
        let d = offset.len();
        if d == 0 || frame.len() > d || frame.iter().any(|v| v.len() != d) {
            return Err(Error::InvalidParameter("frame vectors must match the ambient dimension".into()));
        }
        for (i, u) in frame.iter().enumerate() {
            for (j, v) in frame.iter().enumerate().skip(i) {
                let target = if i == j { 1.0 } else { 0.0 };
                if (dot(u, v) - target).abs() > 1e-9 {
                    return Err(Error::InvalidParameter("frame is not orthonormal".into()));
                }
            }
        }
        Ok(Self { frame, offset })
    }

    /// The coordinate subspace spanned by `axes`, through the origin.
    pub fn axis(d: usize, axes: &[usize]) -> Self {
        let frame = axes.iter().map(|&a| unit(d, a)).collect();
        Self {
            frame,
            offset: vec![0.0; d],
        }
    }

    pub fn point(offset: Vec<f64>) -> Self {
        Self { frame: Vec::new(), offset }
    }

    pub fn ambient_dim(&self) -> usize {
        self.offset.len()
    }

    pub fn dim_k(&self) -> usize {
        self.frame.len()
    }

    /// The direction space, as a flat through the origin.
    pub fn linear(&self) -> Self {
        Self {
            frame: self.frame.clone(),
            offset: vec![0.0; self.ambient_dim()],
        }
    }

    /// Coordinates of `x` in the frame (offset ignored).
    pub fn coordinates(&self, x: &[f64]) -> Vec<f64> {
        self.frame.iter().map(|e| dot(e, x)).collect()
    }

    /// Orthogonal projection of `x` onto the flat.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let w: Vec<f64> = x.iter().zip(&self.offset).map(|(a, b)| a - b).collect();
        let mut out = self.offset.clone();
        for e in &self.frame {
            let c = dot(e, &w);
            for (o, ei) in out.iter_mut().zip(e) {
                *o += c * ei;
            }
        }
        out
    }

    /// Largest deviation of `frame * frame^T` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for (i, u) in self.frame.iter().enumerate() {
            for (j, v) in self.frame.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((dot(u, v) - target).abs());
            }
        }
        err
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(d: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[i] = 1.0;
    e
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Gram-Schmidt against `basis`; `None` if `v` is (numerically) in its span.
fn orthogonalize(v: &[f64], basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let mut w = v.to_vec();
    // Two passes keep the frame orthonormal to roughly machine precision.
    for _ in 0..2 {
        for e in basis {
            let c = dot(e, &w);
            for (wi, ei) in w.iter_mut().zip(e) {
                *wi -= c * ei;
            }
        }
    }
    let n = norm2(&w);
    (n > 1e-9).then(|| w.into_iter().map(|x| x / n).collect())
}

/// Orthonormal basis of `span(frame)^perp`, completed from the standard basis in order.
pub fn orthonormal_complement(frame: &[Vec<f64>], d: usize) -> Vec<Vec<f64>> {
    let mut all: Vec<Vec<f64>> = frame.to_vec();
    let mut out = Vec::with_capacity(d - frame.len().min(d));
    for i in 0..d {
        if all.len() == d {
            break;
        }
        if let Some(e) = orthogonalize(&unit(d, i), &all) {
            all.push(e.clone());
            out.push(e);
        }
    }
    out
}

/// Distance from `z` to the flat in the given norm.
pub fn distance_to_flat(z: &[f64], flat: &AffineFlat, norm: Norm) -> f64 {
    let w: Vec<f64> = z.iter().zip(&flat.offset).map(|(a, b)| a - b).collect();
    match norm {
        Norm::Euclidean => {
            let mut r = w.clone();
            for e in &flat.frame {
                let c = dot(e, &w);
                for (ri, ei) in r.iter_mut().zip(e) {
                    *ri -= c * ei;
                }
            }
            norm2(&r)
        }
        Norm::Max => sup_distance(&w, &flat.frame),
    }
}

/// `min_t |w - F t|_inf` by enumerating vertices of the epigraph LP in `(t, s)`.
fn sup_distance(w: &[f64], frame: &[Vec<f64>]) -> f64 {
    let d = w.len();
    let k = frame.len();
    if k == 0 {
        return w.iter().fold(0.0, |m, x| m.max(x.abs()));
    }
    if k >= d {
        return 0.0;
    }
    // Constraint rows: sign * (w_i - (F t)_i) <= s.
    let rows: Vec<(usize, f64)> = (0..d).flat_map(|i| [(i, 1.0), (i, -1.0)]).collect();
    let n = k + 1;
    let mut best = f64::INFINITY;
    let mut pick: Vec<usize> = (0..n).collect();
    loop {
        // Active rows as equalities: sign * (F t)_i + s = sign * w_i.
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut b = DVector::<f64>::zeros(n);
        for (r, &ri) in pick.iter().enumerate() {
            let (i, sg) = rows[ri];
            for j in 0..k {
                a[(r, j)] = sg * frame[j][i];
            }
            a[(r, k)] = 1.0;
            b[r] = sg * w[i];
        }
        if let Some(sol) = a.lu().solve(&b) {
            let s = sol[k];
            let feasible = (0..d).all(|i| {
                let ft: f64 = (0..k).map(|j| frame[j][i] * sol[j]).sum();
                (w[i] - ft).abs() <= s + 1e-12
            });
            if feasible && s.is_finite() {
                best = best.min(s.max(0.0));
            }
        }
        if !next_combination(&mut pick, rows.len()) {
            break;
        }
    }
    best
}

/// Advances `pick` to the next `pick.len()`-subset of `0..n` in lexicographic order.
pub(crate) fn next_combination(pick: &mut [usize], n: usize) -> bool {
    let k = pick.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if pick[i] < n - k + i {
            pick[i] += 1;
            for j in i + 1..k {
                pick[j] = pick[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k > n {
        return Vec::new();
    }
    let mut pick: Vec<usize> = (0..k).collect();
    let mut out = vec![pick.clone()];
    if k == 0 {
        return out;
    }
    while next_combination(&mut pick, n) {
        out.push(pick.clone());
    }
    out
}

/// Euclidean distance from the closed box `[lo, hi]` to the flat, by projected
/// coordinate descent on the convex quadratic `|P_perp(x - offset)|^2`.
pub fn box_flat_distance(lo: &[f64], hi: &[f64], flat: &AffineFlat) -> f64 {
    let d = lo.len();
    let normal = orthonormal_complement(&flat.frame, d);
    if normal.is_empty() {
        return 0.0;
    }
    // Q = N^T N restricted to the normal directions.
    let mut q = vec![vec![0.0; d]; d];
    for e in &normal {
        for i in 0..d {
            for j in 0..d {
                q[i][j] += e[i] * e[j];
            }
        }
    }
    let mut x: Vec<f64> = flat
        .project(&lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect::<Vec<_>>())
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(&v, (&a, &b))| v.clamp(a, b))
        .collect();
    for _ in 0..500 {
        let mut moved: f64 = 0.0;
        for i in 0..d {
            if q[i][i] <= 1e-15 {
                continue;
            }
            let g: f64 = (0..d).map(|j| q[i][j] * (x[j] - flat.offset[j])).sum();
            let target = (x[i] - g / q[i][i]).clamp(lo[i], hi[i]);
            moved = moved.max((target - x[i]).abs());
            x[i] = target;
        }
        if moved < 1e-15 {
            break;
        }
    }
    distance_to_flat(&x, flat, Norm::Euclidean)
}

/// A flat together with the largest Euclidean distance of the fitted points to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatFit {
    pub flat: AffineFlat,
    pub slack: f64,
    pub certified: bool,
}

fn real_points(a: &GridSet) -> Vec<Vec<f64>> {
    a.points().iter().map(|p| a.real_point(p)).collect()
}

fn max_distance(points: &[Vec<f64>], flat: &AffineFlat) -> f64 {
    points
        .iter()
        .map(|x| distance_to_flat(x, flat, Norm::Euclidean))
        .fold(0.0, f64::max)
}

/// Principal directions of the cloud, largest variance first, with a fixed sign.
fn principal_frame(points: &[Vec<f64>], centroid: &[f64], k: usize) -> Vec<Vec<f64>> {
    let d = centroid.len();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for x in points {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (x[i] - centroid[i]) * (x[j] - centroid[j]);
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let v: Vec<f64> = eig.eigenvectors.column(i).iter().cloned().collect();
        if let Some(mut u) = orthogonalize(&v, &frame) {
            if let Some(first) = u.iter().find(|c| c.abs() > 1e-12) {
                if *first < 0.0 {
                    u.iter_mut().for_each(|c| *c = -*c);
                }
            }
            frame.push(u);
        }
    }
    // Degenerate spectra: complete from the standard basis.
    let mut i = 0;
    while frame.len() < k && i < d {
        if let Some(u) = orthogonalize(&unit(d, i), &frame) {
            frame.push(u);
        }
        i += 1;
    }
    frame
}

/// Offset in the normal space at the midpoint of the cloud's normal coordinates.
fn box_centred_offset(points: &[Vec<f64>], centroid: &[f64], frame: &[Vec<f64>]) -> Vec<f64> {
    let d = centroid.len();
    let normal = orthonormal_complement(frame, d);
    let mut offset = centroid.to_vec();
    for e in &normal {
        let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            let c: f64 = x.iter().zip(centroid).zip(e).map(|((a, b), ei)| (a - b) * ei).sum();
            (lo.min(c), hi.max(c))
        });
        let mid = 0.5 * (lo + hi);
        for (o, ei) in offset.iter_mut().zip(e) {
            *o += mid * ei;
        }
    }
    offset
}

/// Fits a `k`-flat to the points of `A`: principal components plus every
/// coordinate `k`-plane, each at the centroid and at the normal-box midpoint;
/// the candidate with the least slack wins (earliest on ties).
pub fn fit_flat(a: &GridSet, k: usize) -> Result<FlatFit> {
    let d = a.dim();
    if k > d {
        return Err(Error::InvalidParameter(format!("flat dimension {k} exceeds {d}")));
    }
    if a.is_empty() {
        return Err(Error::EmptySet);
    }
    let points = real_points(a);
    let n = points.len() as f64;
    let mut centroid = vec![0.0; d];
    for x in &points {
        for (c, xi) in centroid.iter_mut().zip(x) {
            *c += xi / n;
        }
    }
    if k == d {
        return Ok(FlatFit {
            flat: AffineFlat {
                frame: (0..d).map(|i| unit(d, i)).collect(),
                offset: centroid,
            },
            slack: 0.0,
            certified: true,
        });
    }
    let mut frames = vec![principal_frame(&points, &centroid, k)];
    frames.extend(combinations(d, k).into_iter().map(|axes| AffineFlat::axis(d, &axes).frame));

    let mut best: Option<FlatFit> = None;
    for frame in frames {
        let boxed = box_centred_offset(&points, &centroid, &frame);
        for offset in [centroid.clone(), boxed] {
            let flat = AffineFlat {
                frame: frame.clone(),
                offset,
            };
            let slack = max_distance(&points, &flat);
            if best.as_ref().map_or(true, |b| slack < b.slack) {
                best = Some(FlatFit {
                    flat,
                    slack,
                    certified: true,
                });
            }
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// The `D_L` threshold `(sqrt(d) + 1) 2^{-L}`.
pub fn slab_threshold(d: usize, block: u32) -> f64 {
    ((d as f64).sqrt() + 1.0) * (-(block as f64)).exp2()
}

/// Smallest `j` whose fitted `j`-flat has slack at most `(sqrt(d)+1) 2^{-L}`.
/// A certified upper bound on `D_L(A)`.
pub fn min_dimension(a: &GridSet, block: u32) -> Result<(usize, FlatFit)> {
    if a.scale_exp() != block {
        return Err(Error::ScaleMismatch(a.scale_exp(), block));
    }
    let threshold = slab_threshold(a.dim(), block);
    for j in 0..a.dim() {
        let fit = fit_flat(a, j)?;
        if fit.slack <= threshold {
            return Ok((j, fit));
        }
    }
    Ok((a.dim(), fit_flat(a, a.dim())?))
}

/// Covering number at scale `2^{-k}` of the projection of `A` onto `span(V.frame)`,
/// measured in the frame's coordinates.
pub fn projection_covering(a: &GridSet, v: &AffineFlat, level: u32) -> Result<usize> {
    if v.ambient_dim() != a.dim() {
        return Err(Error::DimensionMismatch(v.ambient_dim(), a.dim()));
    }
    if a.is_empty() {
        return Err(Error::EmptySet);
    }
    let scale = (level as f64).exp2();
    let cells: BTreeSet<Vec<i64>> = a
        .points()
        .iter()
        .map(|p| {
            let x = a.real_point(p);
            v.frame.iter().map(|e| (dot(e, &x) * scale).floor() as i64).collect()
        })
        .collect();
    Ok(cells.len())
}

/// Unit directions covering the hemisphere of `S^{d-1}` at angular spacing about `pi / net_res`.
fn direction_net(d: usize, net_res: usize) -> Vec<Vec<f64>> {
    let res = net_res.max(1);
    match d {
        1 => vec![vec![1.0]],
        2 => (0..res)
            .map(|i| {
                let t = std::f64::consts::PI * i as f64 / res as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        3 => {
            // Fibonacci lattice on the upper hemisphere.
            let n = ((2.0 * (res * res) as f64 / std::f64::consts::PI).ceil() as usize).clamp(4, NET_BUDGET);
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|i| {
                    let z = 1.0 - (i as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * i as f64;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        }
        _ => {
            // Hyperspherical angles; the last one over [0, pi), the rest over [0, pi/2].
            let steps = (res / 2).max(2);
            let mut out = Vec::new();
            let mut idx = vec![0usize; d - 1];
            'outer: loop {
                let mut v = vec![1.0; d];
                for (a, &i) in idx.iter().enumerate() {
                    let last = a == d - 2;
                    let t = if last {
                        std::f64::consts::PI * i as f64 / steps as f64
                    } else {
                        std::f64::consts::FRAC_PI_2 * i as f64 / steps as f64
                    };
                    for c in v.iter_mut().skip(a + 1) {
                        *c *= t.sin();
                    }
                    v[a] *= t.cos();
                }
                out.push(v);
                if out.len() >= NET_BUDGET {
                    break;
                }
                for a in (0..d - 1).rev() {
                    let top = if a == d - 2 { steps - 1 } else { steps };
                    if idx[a] < top {
                        idx[a] += 1;
                        continue 'outer;
                    }
                    idx[a] = 0;
                }
                break;
            }
            out
        }
    }
}

/// A deterministic net of `j`-dimensional linear subspaces of `R^d`; the
/// coordinate subspaces come first, in lexicographic order of their axes.
pub fn subspace_net(d: usize, j: usize, net_res: usize) -> Vec<AffineFlat> {
    let mut net: Vec<AffineFlat> = combinations(d, j).into_iter().map(|axes| AffineFlat::axis(d, &axes)).collect();
    if j == 0 || j == d {
        return net;
    }
    let origin = vec![0.0; d];
    if j == 1 || j == d - 1 {
        for u in direction_net(d, net_res) {
            let frame = if j == 1 { vec![u] } else { orthonormal_complement(&[u], d) };
            net.push(AffineFlat {
                frame,
                offset: origin.clone(),
            });
            if net.len() >= NET_BUDGET {
                break;
            }
        }
        return net;
    }
    // Intermediate dimensions: tilt one axis of each coordinate subspace towards one outside it.
    let res = net_res.max(1);
    'outer: for axes in combinations(d, j) {
        for &a in &axes {
            for b in (0..d).filter(|b| !axes.contains(b)) {
                for i in 1..res {
                    let t = std::f64::consts::PI * i as f64 / res as f64;
                    let frame = axes
                        .iter()
                        .map(|&c| {
                            let mut e = unit(d, c);
                            if c == a {
                                e[a] = t.cos();
                                e[b] = t.sin();
                            }
                            e
                        })
                        .collect();
                    net.push(AffineFlat {
                        frame,
                        offset: origin.clone(),
                    });
                    if net.len() >= NET_BUDGET {
                        break 'outer;
                    }
                }
            }
        }
    }
    net
}

/// Result of the Grassmannian infimum search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrassmannInf {
    pub value: usize,
    pub minimizer: AffineFlat,
    /// Minimum over the coordinate subspaces alone.
    pub axis_value: usize,
    pub net_size: usize,
}

/// Minimum of [`projection_covering`] over a net of `(d - codim)`-dimensional subspaces.
pub fn grassmannian_inf_covering(a: &GridSet, codim: usize, level: u32, net_res: usize) -> Result<GrassmannInf> {
    let d = a.dim();
    if codim > d {
        return Err(Error::InvalidParameter(format!("codimension {codim} exceeds {d}")));
    }
    if a.is_empty() {
        return Err(Error::EmptySet);
    }
    let j = d - codim;
    let net = subspace_net(d, j, net_res);
    let axis_count = combinations(d, j).len();
    let values: Vec<usize> = net
        .par_iter()
        .map(|v| projection_covering(a, v, level))
        .collect::<Result<_>>()?;
    let (best, &value) = values
        .iter()
        .enumerate()
        .min_by(|(i, x), (k, y)| x.cmp(y).then(i.cmp(k)))
        .expect("net is nonempty");
    let axis_value = *values[..axis_count].iter().min().expect("axis subspaces exist");
    Ok(GrassmannInf {
        value,
        minimizer: net[best].clone(),
        axis_value,
        net_size: net.len(),
    })
}

/// A ball on a flat with no admissible hole.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PorosityCounterexample {
    pub flat: AffineFlat,
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PorosityReport {
    pub porous: bool,
    pub counterexample: Option<PorosityCounterexample>,
    pub k: usize,
    pub rho: f64,
    pub eta: f64,
    pub net_res: usize,
    pub flats_checked: usize,
    /// False when holes were searched on a grid rather than exactly.
    pub exact: bool,
}

/// Tests `(k, rho)`-porosity between scales `eta` and 1 over a net of `k`-flats
/// through the points of `X`, centres on the `2^{-m}` lattice along each flat,
/// and dyadic radii in `[eta, 1]`. Points of `X` are thickened to closed balls
/// of radius `2^{-m-1}`.
pub fn porosity_check(x: &GridSet, k: usize, rho: f64, eta: f64, net_res: usize) -> Result<PorosityReport> {
    let d = x.dim();
    if k == 0 || k > d {
        return Err(Error::InvalidParameter(format!("k must lie in [1, {d}], got {k}")));
    }
    if !(rho > 0.0 && rho < 1.0) || !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidParameter("rho and eta must lie in (0,1)".into()));
    }
    let mut report = PorosityReport {
        porous: true,
        counterexample: None,
        k,
        rho,
        eta,
        net_res,
        flats_checked: 0,
        exact: k == 1,
    };
    if x.is_empty() {
        return Ok(report);
    }
    let cell = (-(x.scale_exp() as f64)).exp2();
    let thick = 0.5 * cell;
    let points = real_points(x);
    let mut radii = Vec::new();
    let mut r = 1.0;
    while r >= eta {
        radii.push(r);
        r *= 0.5;
    }
    radii.reverse();

    let directions = subspace_net(d, k, net_res);
    for v in &directions {
        // Flats through each point; parallel flats sharing the same slice are skipped.
        let mut seen: BTreeSet<Vec<i64>> = BTreeSet::new();
        let normal = orthonormal_complement(&v.frame, d);
        for z in &points {
            let key: Vec<i64> = normal.iter().map(|e| (dot(e, z) / 1e-9).round() as i64).collect();
            if !seen.insert(key) {
                continue;
            }
            let flat = AffineFlat {
                frame: v.frame.clone(),
                offset: z.clone(),
            };
            report.flats_checked += 1;
            // Slices of thickened points in flat coordinates: (centre, radius).
            let slices: Vec<(Vec<f64>, f64)> = points
                .iter()
                .filter_map(|p| {
                    let dist = distance_to_flat(p, &flat, Norm::Euclidean);
                    (dist <= thick).then(|| {
                        let w: Vec<f64> = p.iter().zip(z).map(|(a, b)| a - b).collect();
                        (flat.coordinates(&w), (thick * thick - dist * dist).max(0.0).sqrt())
                    })
                })
                .collect();
            if let Some(bad) = first_unporous(&slices, k, rho, &radii, cell) {
                let (t, radius) = bad;
                let mut center = z.clone();
                for (e, ti) in flat.frame.iter().zip(&t) {
                    for (c, ei) in center.iter_mut().zip(e) {
                        *c += ti * ei;
                    }
                }
                report.porous = false;
                report.counterexample = Some(PorosityCounterexample { flat, center, radius });
                return Ok(report);
            }
        }
    }
    Ok(report)
}

/// First `(centre, radius)` in flat coordinates whose ball has no hole.
fn first_unporous(slices: &[(Vec<f64>, f64)], k: usize, rho: f64, radii: &[f64], cell: f64) -> Option<(Vec<f64>, f64)> {
    let mut lo = vec![f64::INFINITY; k];
    let mut hi = vec![f64::NEG_INFINITY; k];
    for (c, w) in slices {
        for i in 0..k {
            lo[i] = lo[i].min(c[i] - w);
            hi[i] = hi[i].max(c[i] + w);
        }
    }
    for &r in radii {
        // Only centres whose ball reaches the slices can fail.
        let from: Vec<i64> = lo.iter().map(|l| ((l - r) / cell).floor() as i64).collect();
        let to: Vec<i64> = hi.iter().map(|h| ((h + r) / cell).ceil() as i64).collect();
        let mut found = None;
        for_each_in_box(&from, &to, |j| {
            if found.is_some() {
                return;
            }
            let centre: Vec<f64> = j.iter().map(|&ji| ji as f64 * cell).collect();
            let has_hole = if k == 1 {
                interval_hole(slices, centre[0], r, rho)
            } else {
                grid_hole(slices, &centre, r, rho, cell)
            };
            if !has_hole {
                found = Some((centre, r));
            }
        });
        if found.is_some() {
            return found;
        }
    }
    None
}

/// Is there `y` in `[c - r, c + r]` with `(y - rho r, y + rho r)` missing every closed slice?
fn interval_hole(slices: &[(Vec<f64>, f64)], c: f64, r: f64, rho: f64) -> bool {
    let gap = rho * r;
    let (lo, hi) = (c - r - gap, c + r + gap);
    let mut blocks: Vec<(f64, f64)> = slices
        .iter()
        .map(|(t, w)| (t[0] - w, t[0] + w))
        .filter(|&(a, b)| b >= lo && a <= hi)
        .collect();
    blocks.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Walk the complement; a gap (g0, g1) admits centres y in [g0 + gap, g1 - gap].
    let mut g0 = f64::NEG_INFINITY;
    for (a, b) in blocks.into_iter().chain(std::iter::once((f64::INFINITY, f64::INFINITY))) {
        let g1 = a;
        let y_lo = (g0 + gap).max(c - r);
        let y_hi = (g1 - gap).min(c + r);
        if y_lo <= y_hi {
            return true;
        }
        g0 = g0.max(b);
    }
    false
}

/// Grid search for a hole centre on the `cell / 2` lattice inside the ball.
fn grid_hole(slices: &[(Vec<f64>, f64)], c: &[f64], r: f64, rho: f64, cell: f64) -> bool {
    let step = 0.5 * cell;
    let n = (r / step).floor() as i64;
    let from = vec![-n; c.len()];
    let to = vec![n; c.len()];
    let mut ok = false;
    for_each_in_box(&from, &to, |off| {
        if ok {
            return;
        }
        let y: Vec<f64> = c.iter().zip(off).map(|(ci, &o)| ci + o as f64 * step).collect();
        let dy: f64 = off.iter().map(|&o| (o as f64 * step).powi(2)).sum::<f64>().sqrt();
        if dy > r {
            return;
        }
        ok = slices.iter().all(|(t, w)| {
            let dist: f64 = t.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            dist >= rho * r + w
        });
    });
    ok
}

/// `k - c_d rho^k / log2(1/rho) + slack / L`.
pub fn porous_covering_bound(k: usize, rho: f64, block: u32, c_d: f64, slack: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) || block == 0 {
        return Err(Error::InvalidParameter("need rho in (0,1) and L >= 1".into()));
    }
    Ok(k as f64 - c_d * rho.powi(k as i32) / (1.0 / rho).log2() + slack / block as f64)
}

#[cfg(test)]
pub(crate) mod oracle {
    use super::*;

    /// Best line slack in `d = 2` over angles `pi i / steps`, each at the normal-box midpoint.
    pub fn best_line_slack(a: &GridSet, steps: usize) -> f64 {
        let points = real_points(a);
        (0..steps)
            .map(|i| {
                let t = std::f64::consts::PI * i as f64 / steps as f64;
                let (s, c) = t.sin_cos();
                let normal = [-s, c];
                let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                    let v = dot(&normal, x);
                    (lo.min(v), hi.max(v))
                });
                0.5 * (hi - lo)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ORTHO_TOL: f64 = 1e-12;

    fn set2(m: u32, pts: &[(i64, i64)]) -> GridSet {
        GridSet::new(2, m, pts.iter().map(|&(a, b)| vec![a, b])).unwrap()
    }

    #[test]
    fn fit_flat_examples() {
        let line = set2(3, &[(0, 2), (3, 2), (7, 2)]);
        assert!(fit_flat(&line, 1).unwrap().slack < 1e-12);
        let two = set2(3, &[(1, 5), (6, 0)]);
        assert!(fit_flat(&two, 1).unwrap().slack < 1e-12);
        let full = GridSet::full(2, 3).unwrap();
        let fit = fit_flat(&full, 1).unwrap();
        assert!(fit.slack > 0.25);
        assert!(fit.slack + 1e-12 >= oracle::best_line_slack(&full, 512));
        assert_eq!(fit_flat(&full, 2).unwrap().slack, 0.0);
        assert!(fit.flat.orthonormality_error() < ORTHO_TOL);
    }

    #[test]
    fn min_dimension_examples() {
        assert_eq!(min_dimension(&set2(4, &[(3, 9)]), 4).unwrap().0, 0);
        let diag = GridSet::new(2, 4, (0..16).map(|i| vec![i, i])).unwrap();
        assert!(min_dimension(&diag, 4).unwrap().0 <= 1);
        let full = GridSet::full(2, 4).unwrap();
        assert_eq!(min_dimension(&full, 4).unwrap().0, 2);
        // Oracle: no line at resolution pi/256 fits within the threshold either.
        assert!(oracle::best_line_slack(&full, 256) > slab_threshold(2, 4));
        assert!(matches!(min_dimension(&full, 3), Err(Error::ScaleMismatch(4, 3))));
    }

    #[test]
    fn projection_examples() {
        let a = GridSet::new(2, 4, vec![vec![1, 3], vec![9, 3], vec![9, 12], vec![15, 0]]).unwrap();
        let whole = AffineFlat::axis(2, &[0, 1]);
        for k in 0..=4 {
            assert_eq!(projection_covering(&a, &whole, k).unwrap(), a.covering_count(k).unwrap());
        }
        let x_axis = set2(4, &[(0, 0), (5, 0), (11, 0)]);
        assert_eq!(projection_covering(&x_axis, &AffineFlat::axis(2, &[1]), 4).unwrap(), 1);
        let full = GridSet::full(2, 4).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let diag = AffineFlat::new(vec![vec![s, s]], vec![0.0, 0.0]).unwrap();
        let n = projection_covering(&full, &diag, 4).unwrap();
        assert!((16..=2 * 16 * 2).contains(&n), "{n}");
    }

    #[test]
    fn grassmannian_examples() {
        let full = GridSet::full(2, 3).unwrap();
        assert_eq!(grassmannian_inf_covering(&full, 0, 3, 8).unwrap().value, 64);
        let x_axis = set2(4, &[(0, 2), (5, 2), (11, 2), (15, 2)]);
        let g = grassmannian_inf_covering(&x_axis, 1, 4, 16).unwrap();
        assert_eq!(g.value, 1);
        assert!(g.minimizer.frame[0][0].abs() < 1e-12);
        // Cantor x full: projecting onto the Cantor axis drops the full factor.
        let cantor = [0i64, 1, 4, 5];
        let prod = GridSet::new(2, 4, cantor.iter().flat_map(|&c| (0..16).map(move |y| vec![c, y]))).unwrap();
        let g = grassmannian_inf_covering(&prod, 1, 4, 16).unwrap();
        assert_eq!(g.value, 4);
        assert_eq!(g.axis_value, 4);
    }

    #[test]
    fn net_contents() {
        assert_eq!(subspace_net(3, 3, 8).len(), 1);
        let lines = subspace_net(3, 1, 8);
        assert_eq!(lines[..3], [AffineFlat::axis(3, &[0]), AffineFlat::axis(3, &[1]), AffineFlat::axis(3, &[2])]);
        for f in subspace_net(3, 2, 8).iter().chain(&lines).chain(&subspace_net(4, 2, 4)) {
            assert!(f.orthonormality_error() < 1e-12);
        }
    }

    #[test]
    fn sup_distance_matches_brute_force() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let diag = AffineFlat::new(vec![vec![s, s]], vec![0.0, 0.0]).unwrap();
        // Point (1, 0): best t gives (1/2, 1/2), sup-distance 1/2.
        assert!((distance_to_flat(&[1.0, 0.0], &diag, Norm::Max) - 0.5).abs() < 1e-12);
        assert!((distance_to_flat(&[1.0, 0.0], &diag, Norm::Euclidean) - s).abs() < 1e-12);
        let plane = AffineFlat::axis(3, &[0, 1]);
        assert!((distance_to_flat(&[0.3, -2.0, 0.25], &plane, Norm::Max) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn box_distance() {
        let line = AffineFlat::new(vec![vec![1.0, 0.0]], vec![0.0, 1.0]).unwrap();
        assert!((box_flat_distance(&[0.0, 0.0], &[1.0, 0.5], &line) - 0.5).abs() < 1e-12);
        assert_eq!(box_flat_distance(&[0.0, 0.0], &[1.0, 2.0], &line), 0.0);
    }

    #[test]
    fn porosity_examples() {
        let empty = GridSet::new(1, 4, Vec::<Vec<i64>>::new()).unwrap();
        assert!(porosity_check(&empty, 1, 0.5, 1.0 / 16.0, 8).unwrap().porous);

        let full = GridSet::full(1, 6).unwrap();
        let rep = porosity_check(&full, 1, 0.5, 1.0 / 16.0, 8).unwrap();
        assert!(!rep.porous && rep.counterexample.is_some());

        // Base-4 digits in {0,1}.
        let cantor: Vec<Vec<i64>> = (0..64i64)
            .filter(|p| (0..3).all(|j| (p >> (2 * j + 1)) & 1 == 0))
            .map(|p| vec![p])
            .collect();
        let cantor = GridSet::new(1, 6, cantor).unwrap();
        let rep = porosity_check(&cantor, 1, 1.0 / 16.0, 1.0 / 64.0, 8).unwrap();
        assert!(rep.porous, "{rep:?}");
        assert!(rep.exact);

        let full2 = GridSet::full(2, 3).unwrap();
        assert!(!porosity_check(&full2, 2, 0.5, 0.5, 4).unwrap().porous);
    }

    #[test]
    fn covering_bound_examples() {
        assert_eq!(porous_covering_bound(2, 0.3, 4, 0.0, 2.0).unwrap(), 2.5);
        assert!((porous_covering_bound(1, 0.5, 1 << 20, 1.0, 0.0).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn flat_json() {
        let f = AffineFlat::axis(2, &[1]);
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"k":1,"frame":[[0.0,1.0]],"offset":[0.0,0.0]}"#);
        assert_eq!(serde_json::from_str::<AffineFlat>(&s).unwrap(), f);
        assert!(serde_json::from_str::<AffineFlat>(r#"{"k":2,"frame":[[0.0,1.0]],"offset":[0.0,0.0]}"#).is_err());
    }

    fn arb_set(dim: usize, m: u32) -> impl Strategy<Value = GridSet> {
        let side = 1i64 << m;
        proptest::collection::vec(proptest::collection::vec(0..side, dim), 1..40)
            .prop_map(move |pts| GridSet::new(dim, m, pts).unwrap())
    }

    proptest! {
        #[test]
        fn full_dimension_fit_is_exact(a in arb_set(3, 3)) {
            prop_assert_eq!(fit_flat(&a, 3).unwrap().slack, 0.0);
        }

        #[test]
        fn min_dimension_monotone_in_1d(a in arb_set(1, 4), b in arb_set(1, 4)) {
            let union = GridSet::new(1, 4, a.points().iter().chain(b.points()).cloned()).unwrap();
            prop_assert!(min_dimension(&a, 4).unwrap().0 <= min_dimension(&union, 4).unwrap().0);
        }

        #[test]
        fn line_fit_is_an_upper_bound(a in arb_set(2, 4)) {
            let fit = fit_flat(&a, 1).unwrap();
            prop_assert!(fit.slack + 1e-9 >= oracle::best_line_slack(&a, 1024) - 1e-2);
        }

        #[test]
        fn projection_does_not_inflate(a in arb_set(2, 4), theta in 0.0f64..std::f64::consts::PI, k in 0u32..=4) {
            let v = AffineFlat::new(vec![vec![theta.cos(), theta.sin()]], vec![0.0, 0.0]).unwrap();
            prop_assert!(projection_covering(&a, &v, k).unwrap() <= 9 * a.covering_count(k).unwrap());
        }

        #[test]
        fn grassmann_below_axes(a in arb_set(3, 3), codim in 0usize..=3) {
            let g = grassmannian_inf_covering(&a, codim, 3, 4).unwrap();
            for axes in combinations(3, 3 - codim) {
                prop_assert!(g.value <= projection_covering(&a, &AffineFlat::axis(3, &axes), 3).unwrap());
            }
        }

        #[test]
        fn porosity_failure_is_monotone(a in arb_set(1, 5), b in arb_set(1, 5)) {
            let union = GridSet::new(1, 5, a.points().iter().chain(b.points()).cloned()).unwrap();
            if !porosity_check(&a, 1, 0.25, 1.0 / 8.0, 4).unwrap().porous {
                prop_assert!(!porosity_check(&union, 1, 0.25, 1.0 / 8.0, 4).unwrap().porous);
            }
        }
    }
}
