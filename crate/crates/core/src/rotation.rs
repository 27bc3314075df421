//! Bicubic rotation of square filters as a fixed sparse linear map.
//!
//! Coordinates are `(x, y) = (col, row)` offsets from the array center. A
//! rotation by `theta` maps an offset `q` to `R(theta) q` with
//! `R(theta) = [[cos, -sin], [sin, cos]]`; the rotated array samples the
//! source at `R(-theta) q`. [`Tensor::rot90`] follows the same convention.

use crate::error::{config_err, shape_err, Result};
use crate::tensor::Tensor;

/// Keys cubic convolution parameter.
pub const CUBIC_A: f64 = -0.5;

/// Source coordinates this close to an integer are snapped onto the grid so
/// that quarter turns are exact permutations.
const SNAP: f64 = 1e-9;

/// Cubic convolution kernel with `a = -0.5`.
#[inline]
pub fn cubic_kernel(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// The (up to) four taps along one axis for a fractional source coordinate.
/// Zero-weight taps are omitted.
pub(crate) fn cubic_taps(coord: f64) -> ([(isize, f64); 4], usize) {
    let snapped = coord.round();
    let mut taps = [(0isize, 0.0f64); 4];
    if (coord - snapped).abs() <= SNAP {
        taps[0] = (snapped as isize, 1.0);
        return (taps, 1);
    }
    let base = coord.floor();
    let t = coord - base;
    let base = base as isize;
    let weights = [
        cubic_kernel(t + 1.0),
        cubic_kernel(t),
        cubic_kernel(1.0 - t),
        cubic_kernel(2.0 - t),
    ];
    let mut count = 0;
    for (k, w) in weights.into_iter().enumerate() {
        if w != 0.0 {
            taps[count] = (base - 1 + k as isize, w);
            count += 1;
        }
    }
    (taps, count)
}

/// Source location sampled by the destination offset `(dx, dy)` under a
/// rotation by `angle`.
#[inline]
pub(crate) fn source_offset(dx: f64, dy: f64, cos: f64, sin: f64) -> (f64, f64) {
    (dx * cos + dy * sin, -dx * sin + dy * cos)
}

pub(crate) fn exact_trig(angle: f64) -> (f64, f64) {
    // Quarter turns get exact trig values.
    let quarter = angle / std::f64::consts::FRAC_PI_2;
    let k = quarter.round();
    if (quarter - k).abs() < 1e-12 {
        match (k as i64).rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        (angle.cos(), angle.sin())
    }
}

/// One weight of the sparse map: `out[output] += weight * in[input]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub output: usize,
    pub input: usize,
    pub weight: f64,
}

/// Precomputed bicubic rotation of an `n × n` filter by a fixed angle,
/// restricted to the inscribed disc.
#[derive(Debug, Clone)]
pub struct RotationOperator {
    size: usize,
    angle: f64,
    entries: Vec<Entry>,
    mask: Vec<bool>,
}

/// Inscribed disc of radius `(n-1)/2` about the center pixel.
pub fn disc_mask(n: usize) -> Vec<bool> {
    let c = (n as f64 - 1.0) / 2.0;
    let r2 = c * c;
    (0..n * n)
        .map(|idx| {
            let dy = (idx / n) as f64 - c;
            let dx = (idx % n) as f64 - c;
            dx * dx + dy * dy <= r2 + 1e-9
        })
        .collect()
}

impl RotationOperator {
    pub fn new(n: usize, angle: f64) -> Result<Self> {
        if n < 3 || n.is_multiple_of(2) {
            return Err(config_err!("rotation operator needs odd n >= 3, got {}", n));
        }
        let c = (n as f64 - 1.0) / 2.0;
        let mask = disc_mask(n);
        let (cos, sin) = exact_trig(angle);
        let mut entries = Vec::new();
        for out in 0..n * n {
            if !mask[out] {
                continue;
            }
            let dy = (out / n) as f64 - c;
            let dx = (out % n) as f64 - c;
            let (sx, sy) = source_offset(dx, dy, cos, sin);
            let (xt, nx) = cubic_taps(sx + c);
            let (yt, ny) = cubic_taps(sy + c);
            for &(row, wy) in &yt[..ny] {
                if row < 0 || row >= n as isize {
                    continue;
                }
                for &(col, wx) in &xt[..nx] {
                    if col < 0 || col >= n as isize {
                        continue;
                    }
                    entries.push(Entry {
                        output: out,
                        input: row as usize * n + col as usize,
                        weight: wy * wx,
                    });
                }
            }
        }
        Ok(RotationOperator {
            size: n,
            angle,
            entries,
            mask,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    fn check(&self, f: &Tensor) -> Result<()> {
        let (r, c) = f.dims2()?;
        if r != self.size || c != self.size {
            return Err(shape_err!(
                "filter is {}x{}, operator expects {}x{}",
                r,
                c,
                self.size,
                self.size
            ));
        }
        Ok(())
    }

    pub fn apply_slice(&self, f: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for e in &self.entries {
            out[e.output] += e.weight * f[e.input];
        }
    }

    pub fn adjoint_slice(&self, g: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for e in &self.entries {
            out[e.input] += e.weight * g[e.output];
        }
    }

    /// Adds `R^T g` into `acc`.
    pub fn adjoint_accumulate(&self, g: &[f64], acc: &mut [f64]) {
        for e in &self.entries {
            acc[e.input] += e.weight * g[e.output];
        }
    }
}

pub fn make_rotation_operator(n: usize, angle: f64) -> Result<RotationOperator> {
    RotationOperator::new(n, angle)
}

pub fn rotate_filter(op: &RotationOperator, f: &Tensor) -> Result<Tensor> {
    op.check(f)?;
    let mut out = Tensor::zeros(&[op.size, op.size]);
    op.apply_slice(f.data(), out.data_mut());
    Ok(out)
}

pub fn rotate_adjoint(op: &RotationOperator, g: &Tensor) -> Result<Tensor> {
    op.check(g)?;
    let mut out = Tensor::zeros(&[op.size, op.size]);
    op.adjoint_slice(g.data(), out.data_mut());
    Ok(out)
}

/// Evenly spaced angles `k · 2π / count` for `k = 0..count`.
pub fn orientation_angles(count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| 2.0 * std::f64::consts::PI * k as f64 / count as f64)
        .collect()
}

/// Samples `image` at fractional `(x, y)` with bicubic weights; taps that
/// fall outside the image are clamped to the border.
pub fn bicubic_sample(image: &Tensor, x: f64, y: f64) -> f64 {
    let (h, w) = (image.rows() as isize, image.cols() as isize);
    let (xt, nx) = cubic_taps(x);
    let (yt, ny) = cubic_taps(y);
    let mut acc = 0.0;
    for &(row, wy) in &yt[..ny] {
        let r = row.clamp(0, h - 1) as usize;
        for &(col, wx) in &xt[..nx] {
            let c = col.clamp(0, w - 1) as usize;
            acc += wy * wx * image.at(r, c);
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn masked(f: &Tensor) -> Tensor {
        let m = disc_mask(f.rows());
        let mut out = f.clone();
        for (v, &keep) in out.data_mut().iter_mut().zip(&m) {
            if !keep {
                *v = 0.0;
            }
        }
        out
    }

    // Catmull-Rom blend written out in its polynomial form; equal to cubic
    // convolution with a = -0.5.
    fn blend(p0: f64, p1: f64, p2: f64, p3: f64, t: f64) -> f64 {
        p1 + 0.5
            * t
            * (p2 - p0 + t * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + t * (3.0 * (p1 - p2) + p3 - p0)))
    }

    fn oracle_rotate(f: &Tensor, angle: f64) -> Tensor {
        let n = f.rows();
        let c = (n as f64 - 1.0) / 2.0;
        let get = |r: isize, col: isize| -> f64 {
            if r < 0 || col < 0 || r >= n as isize || col >= n as isize {
                0.0
            } else {
                f.at(r as usize, col as usize)
            }
        };
        let mask = disc_mask(n);
        Tensor::from_fn(n, n, |i, j| {
            if !mask[i * n + j] {
                return 0.0;
            }
            let (dx, dy) = (j as f64 - c, i as f64 - c);
            let sx = c + dx * angle.cos() + dy * angle.sin();
            let sy = c - dx * angle.sin() + dy * angle.cos();
            let (x0, y0) = (sx.floor() as isize, sy.floor() as isize);
            let (tx, ty) = (sx - sx.floor(), sy - sy.floor());
            let rows: Vec<f64> = (-1..=2)
                .map(|k| {
                    let r = y0 + k;
                    blend(get(r, x0 - 1), get(r, x0), get(r, x0 + 1), get(r, x0 + 2), tx)
                })
                .collect();
            blend(rows[0], rows[1], rows[2], rows[3], ty)
        })
    }

    #[test]
    fn kernel_partition_of_unity() {
        for k in 0..100 {
            let t = k as f64 / 100.0;
            let s = cubic_kernel(t + 1.0) + cubic_kernel(t) + cubic_kernel(1.0 - t) + cubic_kernel(2.0 - t);
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn even_size_rejected() {
        assert!(matches!(RotationOperator::new(4, 0.3), Err(crate::Error::Config(_))));
        assert!(RotationOperator::new(1, 0.0).is_err());
    }

    #[test]
    fn zero_angle_is_disc_identity() {
        let op = RotationOperator::new(9, 0.0).unwrap();
        let mask = disc_mask(9);
        for e in op.entries() {
            assert_eq!(e.input, e.output);
            assert_eq!(e.weight, 1.0);
        }
        assert_eq!(op.entries().len(), mask.iter().filter(|&&m| m).count());
    }

    #[test]
    fn quarter_turn_is_permutation() {
        let op = RotationOperator::new(5, PI / 2.0).unwrap();
        let mut seen_in = std::collections::HashSet::new();
        for e in op.entries() {
            assert_eq!(e.weight, 1.0);
            assert!(seen_in.insert(e.input));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random(5, &mut rng);
        let rotated = rotate_filter(&op, &f).unwrap();
        assert_eq!(rotated, masked(&f).rot90());
    }

    #[test]
    fn interior_rows_sum_to_one() {
        let n = 35;
        let op = RotationOperator::new(n, 2.0 * PI / 32.0).unwrap();
        let c = (n as f64 - 1.0) / 2.0;
        let mut sums = vec![0.0; n * n];
        for e in op.entries() {
            sums[e.output] += e.weight;
        }
        let (cos, sin) = ((2.0 * PI / 32.0).cos(), (2.0 * PI / 32.0).sin());
        let mut checked = 0;
        for out in 0..n * n {
            if !op.mask()[out] {
                assert_eq!(sums[out], 0.0);
                continue;
            }
            let (dx, dy) = ((out % n) as f64 - c, (out / n) as f64 - c);
            let (sx, sy) = source_offset(dx, dy, cos, sin);
            let inside = |v: f64| v + c - 1.0 >= 0.0 && v + c + 2.0 <= (n - 1) as f64;
            if inside(sx) && inside(sy) {
                assert!((sums[out] - 1.0).abs() <= 1e-12, "row {} sums {}", out, sums[out]);
                checked += 1;
            }
        }
        assert!(checked > 600);
    }

    #[test]
    fn constant_filter_stays_constant_on_disc() {
        let op = RotationOperator::new(15, 0.7).unwrap();
        let f = Tensor::filled(&[15, 15], 2.5);
        let out = rotate_filter(&op, &f).unwrap();
        let c = 7.0;
        for i in 0..15 {
            for j in 0..15 {
                let (dx, dy) = (j as f64 - c, i as f64 - c);
                let r = (dx * dx + dy * dy).sqrt();
                if !op.mask()[i * 15 + j] {
                    assert_eq!(out.at(i, j), 0.0);
                } else if r + 2.0 * std::f64::consts::SQRT_2 < c {
                    assert!((out.at(i, j) - 2.5).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn four_quarter_turns_restore_disc() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random(9, &mut rng);
        let op = RotationOperator::new(9, PI / 2.0).unwrap();
        let mut g = f.clone();
        for _ in 0..4 {
            g = rotate_filter(&op, &g).unwrap();
        }
        let want = masked(&f);
        for (a, b) in g.data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn matches_independent_resampler() {
        let n = 15;
        let c = 7.0;
        // oriented edge: smooth step across a tilted line
        let f = Tensor::from_fn(n, n, |i, j| ((j as f64 - c) * 0.8 + (i as f64 - c) * 0.3).tanh());
        let angle = 2.0 * PI / 32.0;
        let op = RotationOperator::new(n, angle).unwrap();
        let got = rotate_filter(&op, &f).unwrap();
        let want = oracle_rotate(&f, angle);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [5, 9, 35] {
            for _ in 0..5 {
                let angle = rng.gen_range(0.0..2.0 * PI);
                let op = RotationOperator::new(n, angle).unwrap();
                let f = random(n, &mut rng);
                let g = random(n, &mut rng);
                let lhs = rotate_filter(&op, &f).unwrap().dot(&g);
                let rhs = f.dot(&rotate_adjoint(&op, &g).unwrap());
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_at_zero_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = random(9, &mut rng);
        let op = RotationOperator::new(9, 0.0).unwrap();
        assert_eq!(rotate_adjoint(&op, &g).unwrap(), masked(&g));
    }

    #[test]
    fn adjoint_of_quarter_turn_is_inverse_turn() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random(9, &mut rng);
        let op = RotationOperator::new(9, PI / 2.0).unwrap();
        let back = RotationOperator::new(9, -PI / 2.0).unwrap();
        assert_eq!(
            rotate_adjoint(&op, &g).unwrap(),
            rotate_filter(&back, &g).unwrap()
        );
    }

    #[test]
    fn size_mismatch_is_shape_error() {
        let op = RotationOperator::new(5, 0.1).unwrap();
        let f = Tensor::zeros(&[7, 7]);
        assert!(matches!(rotate_filter(&op, &f), Err(crate::Error::Shape(_))));
        assert!(matches!(rotate_adjoint(&op, &f), Err(crate::Error::Shape(_))));
    }
}
