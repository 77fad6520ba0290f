//! Dense FFT convolution of sparse lattice data.
//!
//! Points are shifted to the origin and flattened with strides wide enough that
//! the 1-D cyclic convolution never wraps, so a single 1-D transform computes
//! the d-dimensional linear convolution.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::Point;

/// Largest padded transform length used by the dense paths.
pub const DENSE_CAP: usize = 1 << 24;

/// Rounded values must sit this close to an integer to be trusted.
const ROUNDING_TOL: f64 = 0.25;

struct Layout {
    lo_a: Vec<i64>,
    lo_b: Vec<i64>,
    dims: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

fn bounds<'a>(dim: usize, pts: impl Iterator<Item = &'a [i64]>) -> Option<(Vec<i64>, Vec<i64>)> {
    let mut lo = vec![i64::MAX; dim];
    let mut hi = vec![i64::MIN; dim];
    let mut any = false;
    for p in pts {
        any = true;
        for i in 0..dim {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    any.then_some((lo, hi))
}

fn layout(dim: usize, a: &[&[i64]], b: &[&[i64]]) -> Option<Layout> {
    let (lo_a, hi_a) = bounds(dim, a.iter().copied())?;
    let (lo_b, hi_b) = bounds(dim, b.iter().copied())?;
    let mut dims = Vec::with_capacity(dim);
    let mut total: usize = 1;
    for i in 0..dim {
        let n = usize::try_from((hi_a[i] - lo_a[i]) + (hi_b[i] - lo_b[i]) + 1).ok()?;
        dims.push(n);
        total = total.checked_mul(n)?;
    }
    let mut strides = vec![1usize; dim];
    for i in (0..dim.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    Some(Layout {
        lo_a,
        lo_b,
        dims,
        strides,
        len: total.checked_next_power_of_two()?,
    })
}

impl Layout {
    fn index(&self, p: &[i64], lo: &[i64]) -> usize {
        p.iter()
            .zip(lo)
            .zip(&self.strides)
            .map(|((&c, &l), &s)| (c - l) as usize * s)
            .sum()
    }

    fn point(&self, mut idx: usize) -> Point {
        let mut p = vec![0i64; self.dims.len()];
        for i in 0..self.dims.len() {
            p[i] = (idx / self.strides[i]) as i64 + self.lo_a[i] + self.lo_b[i];
            idx %= self.strides[i];
        }
        p
    }
}

/// Padded transform length for convolving point clouds `a` and `b`, if representable.
pub fn padded_volume(dim: usize, a: &[&[i64]], b: &[&[i64]]) -> Option<usize> {
    layout(dim, a, b).map(|l| l.len)
}

fn cyclic(len: usize, inputs: [Vec<Complex<f64>>; 2]) -> Vec<Complex<f64>> {
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let [mut x, mut y] = inputs;
    fwd.process(&mut x);
    fwd.process(&mut y);
    let scale = 1.0 / len as f64;
    for (u, v) in x.iter_mut().zip(&y) {
        *u = *u * *v * scale;
    }
    inv.process(&mut x);
    x
}

fn scatter<'a>(lay: &Layout, pts: impl Iterator<Item = (&'a [i64], f64)>, lo: &[i64]) -> Vec<Complex<f64>> {
    let mut buf = vec![Complex::new(0.0, 0.0); lay.len];
    for (p, w) in pts {
        buf[lay.index(p, lo)].re += w;
    }
    buf
}

fn checked_layout(dim: usize, a: &[&[i64]], b: &[&[i64]], cap: usize) -> Result<Layout> {
    let lay = layout(dim, a, b).ok_or(Error::EmptySet)?;
    if lay.len > cap {
        return Err(Error::SizeCap(format!("padded FFT length {} exceeds {cap}", lay.len)));
    }
    Ok(lay)
}

/// Representation counts `r(s) = #{(x, y) in a x b : x + y = s}` for every `s`
/// with `r(s) > 0`, in lexicographic order.
pub fn representation_counts(dim: usize, a: &[&[i64]], b: &[&[i64]], cap: usize) -> Result<Vec<(Point, u64)>> {
    let lay = checked_layout(dim, a, b, cap)?;
    let out = cyclic(
        lay.len,
        [
            scatter(&lay, a.iter().map(|p| (*p, 1.0)), &lay.lo_a),
            scatter(&lay, b.iter().map(|p| (*p, 1.0)), &lay.lo_b),
        ],
    );
    let mut counts = Vec::new();
    for (idx, z) in out.iter().enumerate() {
        let r = z.re.round();
        if (z.re - r).abs() >= ROUNDING_TOL {
            return Err(Error::Overflow(format!("FFT rounding error {} at index {idx}", (z.re - r).abs())));
        }
        if r >= 1.0 {
            counts.push((lay.point(idx), r as u64));
        }
    }
    Ok(counts)
}

/// Weighted convolution of sparse clouds; the support comes from the exact
/// representation counts so FFT noise never creates atoms.
pub fn sparse_convolve(
    dim: usize,
    a: &[(&[i64], f64)],
    b: &[(&[i64], f64)],
    cap: usize,
) -> Result<Vec<(Point, f64)>> {
    let pa: Vec<&[i64]> = a.iter().map(|(p, _)| *p).collect();
    let pb: Vec<&[i64]> = b.iter().map(|(p, _)| *p).collect();
    let lay = checked_layout(dim, &pa, &pb, cap)?;
    let support = representation_counts(dim, &pa, &pb, cap)?;
    let out = cyclic(
        lay.len,
        [
            scatter(&lay, a.iter().copied(), &lay.lo_a),
            scatter(&lay, b.iter().copied(), &lay.lo_b),
        ],
    );
    let lo: Vec<i64> = lay.lo_a.iter().zip(&lay.lo_b).map(|(x, y)| x + y).collect();
    Ok(support
        .into_iter()
        .map(|(p, _)| {
            let w = out[lay.index(&p, &lo)].re.max(f64::MIN_POSITIVE);
            (p, w)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_representation() {
        let a: Vec<Vec<i64>> = (0..4).map(|i| vec![i + 3]).collect();
        let refs: Vec<&[i64]> = a.iter().map(|p| p.as_slice()).collect();
        let r = representation_counts(1, &refs, &refs, DENSE_CAP).unwrap();
        let got: Vec<(i64, u64)> = r.iter().map(|(p, c)| (p[0], *c)).collect();
        assert_eq!(got, vec![(6, 1), (7, 2), (8, 3), (9, 4), (10, 3), (11, 2), (12, 1)]);
    }

    #[test]
    fn two_dimensional_no_wrap() {
        let a = [vec![0, 5], vec![2, 0]];
        let b = [vec![1, 1], vec![0, 7]];
        let ra: Vec<&[i64]> = a.iter().map(|p| p.as_slice()).collect();
        let rb: Vec<&[i64]> = b.iter().map(|p| p.as_slice()).collect();
        let r = representation_counts(2, &ra, &rb, DENSE_CAP).unwrap();
        let pts: Vec<Point> = r.into_iter().map(|(p, _)| p).collect();
        assert_eq!(pts, vec![vec![0, 12], vec![1, 6], vec![2, 7], vec![3, 1]]);
    }

    #[test]
    fn cap_is_enforced() {
        let a = [vec![0, 0], vec![4095, 4095]];
        let ra: Vec<&[i64]> = a.iter().map(|p| p.as_slice()).collect();
        assert!(matches!(representation_counts(2, &ra, &ra, DENSE_CAP), Err(Error::SizeCap(_))));
    }
}
