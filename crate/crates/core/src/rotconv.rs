//! Rotatable convolution with weight tying and orientation max-pooling.
//!
//! Each rotation group owns one canonical `n × n` filter and one bias. The
//! `R` rotated copies are always derived from the canonical weights through
//! [`RotationOperator`]s and are never stored as parameters.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};
use crate::rotation::{orientation_angles, RotationOperator};
use crate::tensor::{Fft2Plan, Spectrum, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// `M` groups of `R` tied rotated copies on the inscribed disc.
    Rotatable,
    /// Plain square filters, one orientation, no mask.
    Standard,
}

impl Arch {
    pub fn code(self) -> u32 {
        match self {
            Arch::Rotatable => 0,
            Arch::Standard => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Arch> {
        match code {
            0 => Some(Arch::Rotatable),
            1 => Some(Arch::Standard),
            _ => None,
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::Rotatable => "rotatable",
            Arch::Standard => "standard",
        })
    }
}

/// Canonical filters and biases of a rotatable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub arch: Arch,
    pub groups: usize,
    pub orientations: usize,
    pub size: usize,
    /// `groups × size × size`, row-major.
    pub canonical: Vec<f64>,
    pub biases: Vec<f64>,
}

impl FilterBank {
    pub fn zeros(arch: Arch, groups: usize, orientations: usize, size: usize) -> Result<Self> {
        validate_dims(arch, groups, orientations, size)?;
        Ok(FilterBank {
            arch,
            groups,
            orientations,
            size,
            canonical: vec![0.0; groups * size * size],
            biases: vec![0.0; groups],
        })
    }

    pub fn from_parts(
        arch: Arch,
        orientations: usize,
        size: usize,
        canonical: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<Self> {
        let groups = biases.len();
        validate_dims(arch, groups, orientations, size)?;
        if canonical.len() != groups * size * size {
            return Err(shape_err!(
                "{} canonical values for {} groups of {}x{}",
                canonical.len(),
                groups,
                size,
                size
            ));
        }
        if !canonical.iter().chain(&biases).all(|v| v.is_finite()) {
            return Err(config_err!("filter bank contains non-finite values"));
        }
        Ok(FilterBank {
            arch,
            groups,
            orientations,
            size,
            canonical,
            biases,
        })
    }

    pub fn filter_len(&self) -> usize {
        self.size * self.size
    }

    pub fn canonical_filter(&self, group: usize) -> &[f64] {
        let len = self.filter_len();
        &self.canonical[group * len..(group + 1) * len]
    }

    pub fn canonical_tensor(&self, group: usize) -> Tensor {
        Tensor::from_vec(&[self.size, self.size], self.canonical_filter(group).to_vec())
            .expect("filter dims")
    }

    /// Orientation count actually applied when `r_eval` rotations are
    /// requested.
    pub fn effective_orientations(&self, r_eval: usize) -> usize {
        match self.arch {
            Arch::Rotatable => r_eval,
            Arch::Standard => 1,
        }
    }
}

fn validate_dims(arch: Arch, groups: usize, orientations: usize, size: usize) -> Result<()> {
    if groups == 0 {
        return Err(config_err!("filter bank needs at least one group"));
    }
    if orientations == 0 {
        return Err(config_err!("orientation count must be positive"));
    }
    match arch {
        Arch::Rotatable if size < 3 || size.is_multiple_of(2) => {
            Err(config_err!("rotatable filters need odd size >= 3, got {}", size))
        }
        Arch::Standard if size == 0 => Err(config_err!("filter size must be positive")),
        Arch::Standard if orientations != 1 => Err(config_err!(
            "standard filters have a single orientation, got R = {}",
            orientations
        )),
        _ => Ok(()),
    }
}

/// The set of linear maps turning a canonical filter into its copies.
#[derive(Debug, Clone)]
pub enum Orientations {
    Unrotated { size: usize },
    Rotated(Vec<RotationOperator>),
}

impl Orientations {
    pub fn for_bank(bank: &FilterBank, r_eval: usize) -> Result<Self> {
        if r_eval == 0 {
            return Err(config_err!("R_eval must be positive"));
        }
        match bank.arch {
            Arch::Standard => Ok(Orientations::Unrotated { size: bank.size }),
            Arch::Rotatable => orientation_angles(r_eval)
                .into_iter()
                .map(|a| RotationOperator::new(bank.size, a))
                .collect::<Result<Vec<_>>>()
                .map(Orientations::Rotated),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Orientations::Unrotated { .. } => 1,
            Orientations::Rotated(ops) => ops.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn apply(&self, k: usize, f: &[f64], out: &mut [f64]) {
        match self {
            Orientations::Unrotated { .. } => out.copy_from_slice(f),
            Orientations::Rotated(ops) => ops[k].apply_slice(f, out),
        }
    }

    pub fn adjoint_accumulate(&self, k: usize, g: &[f64], acc: &mut [f64]) {
        match self {
            Orientations::Unrotated { .. } => {
                acc.iter_mut().zip(g).for_each(|(a, v)| *a += v);
            }
            Orientations::Rotated(ops) => ops[k].adjoint_accumulate(g, acc),
        }
    }
}

/// Winning orientation index per (image, group, row, col).
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationCache {
    pub groups: usize,
    pub orientations: usize,
    pub out_rows: usize,
    pub out_cols: usize,
    pub winners: Vec<Vec<u16>>,
}

/// Rotated copies of every group's canonical filter for one orientation set.
#[derive(Debug, Clone)]
pub struct RotatedBank {
    pub groups: usize,
    pub orientations: usize,
    pub size: usize,
    filters: Vec<f64>,
}

impl RotatedBank {
    pub fn materialize(bank: &FilterBank, orientations: &Orientations) -> Self {
        let len = bank.filter_len();
        let count = orientations.len();
        let mut filters = vec![0.0; bank.groups * count * len];
        for g in 0..bank.groups {
            for k in 0..count {
                let off = (g * count + k) * len;
                orientations.apply(k, bank.canonical_filter(g), &mut filters[off..off + len]);
            }
        }
        RotatedBank {
            groups: bank.groups,
            orientations: count,
            size: bank.size,
            filters,
        }
    }

    pub fn filter(&self, group: usize, k: usize) -> &[f64] {
        let len = self.size * self.size;
        let off = (group * self.orientations + k) * len;
        &self.filters[off..off + len]
    }

    pub fn filter_tensor(&self, group: usize, k: usize) -> Tensor {
        Tensor::from_vec(&[self.size, self.size], self.filter(group, k).to_vec())
            .expect("filter dims")
    }
}

/// Spectra of all rotated filters zero-padded to one image size.
#[derive(Debug, Clone)]
pub struct SpectralBank {
    pub plan: Fft2Plan,
    spectra: Vec<Spectrum>,
    orientations: usize,
}

impl SpectralBank {
    pub fn new(rotated: &RotatedBank, rows: usize, cols: usize) -> Self {
        let plan = Fft2Plan::new(rows, cols);
        let n = rotated.size;
        let spectra = (0..rotated.groups * rotated.orientations)
            .into_par_iter()
            .map(|idx| {
                let (g, k) = (idx / rotated.orientations, idx % rotated.orientations);
                plan.forward_padded(rotated.filter(g, k), n, n)
            })
            .collect();
        SpectralBank {
            plan,
            spectra,
            orientations: rotated.orientations,
        }
    }

    pub fn spectrum(&self, group: usize, k: usize) -> &Spectrum {
        &self.spectra[group * self.orientations + k]
    }
}

/// Responses closer than this (relative) count as ties; FFT rounding must not
/// decide between orientations whose filters coincide.
const TIE_EPS: f64 = 1e-12;

#[inline]
fn beats(value: f64, best: f64) -> bool {
    best == f64::NEG_INFINITY || value > best + TIE_EPS * (1.0 + best.abs())
}

/// Orientation-pooled response of one image.
#[derive(Debug, Clone)]
pub struct GroupResponse {
    /// `groups × out_rows × out_cols`
    pub groupmax: Tensor,
    pub winners: Vec<u16>,
}

/// A filter bank prepared for a fixed orientation count.
#[derive(Debug, Clone)]
pub struct RotConv {
    pub orientations: Orientations,
    pub rotated: RotatedBank,
    pub biases: Vec<f64>,
    pub size: usize,
}

impl RotConv {
    pub fn new(bank: &FilterBank, r_eval: usize) -> Result<Self> {
        let orientations = Orientations::for_bank(bank, r_eval)?;
        Ok(Self::with_orientations(bank, orientations))
    }

    /// Re-derives the rotated copies from `bank` while reusing operators.
    pub fn with_orientations(bank: &FilterBank, orientations: Orientations) -> Self {
        let rotated = RotatedBank::materialize(bank, &orientations);
        RotConv {
            orientations,
            rotated,
            biases: bank.biases.clone(),
            size: bank.size,
        }
    }

    pub fn groups(&self) -> usize {
        self.rotated.groups
    }

    pub fn orientation_count(&self) -> usize {
        self.rotated.orientations
    }

    pub fn spectral(&self, rows: usize, cols: usize) -> SpectralBank {
        SpectralBank::new(&self.rotated, rows, cols)
    }

    fn check_image(&self, image: &Tensor) -> Result<(usize, usize)> {
        let (h, w) = image.dims2()?;
        if h < self.size || w < self.size {
            return Err(shape_err!(
                "image {}x{} smaller than filter {}x{}",
                h,
                w,
                self.size,
                self.size
            ));
        }
        Ok((h, w))
    }

    /// Forward pass for one image given its spectrum.
    pub fn respond(&self, image_spec: &Spectrum, spectral: &SpectralBank) -> GroupResponse {
        let (h, w) = spectral.plan.dims();
        let (oh, ow) = (h - self.size + 1, w - self.size + 1);
        let groups = self.groups();
        let count = self.orientation_count();
        let mut groupmax = Tensor::filled(&[groups, oh, ow], f64::NEG_INFINITY);
        let mut winners = vec![0u16; groups * oh * ow];
        let x = &image_spec.values;
        for g in 0..groups {
            let best = groupmax.plane_mut(g);
            let win = &mut winners[g * oh * ow..(g + 1) * oh * ow];
            let mut k = 0;
            while k < count {
                // Two real correlations share one complex inverse transform.
                let ka = &spectral.spectrum(g, k).values;
                let buf: Vec<Complex64> = if k + 1 < count {
                    let kb = &spectral.spectrum(g, k + 1).values;
                    x.iter()
                        .zip(ka)
                        .zip(kb)
                        .map(|((x, a), b)| x * a.conj() + Complex64::i() * (x * b.conj()))
                        .collect()
                } else {
                    x.iter().zip(ka).map(|(x, a)| x * a.conj()).collect()
                };
                let full = spectral.plan.inverse_complex(buf);
                for r in 0..oh {
                    for c in 0..ow {
                        let z = full[r * w + c];
                        let idx = r * ow + c;
                        if beats(z.re, best[idx]) {
                            best[idx] = z.re;
                            win[idx] = k as u16;
                        }
                        if k + 1 < count && beats(z.im, best[idx]) {
                            best[idx] = z.im;
                            win[idx] = (k + 1) as u16;
                        }
                    }
                }
                k += 2;
            }
            let b = self.biases[g];
            best.iter_mut().for_each(|v| *v += b);
        }
        GroupResponse { groupmax, winners }
    }

    pub fn forward(&self, images: &[Tensor]) -> Result<(Vec<Tensor>, OrientationCache)> {
        let first = images
            .first()
            .ok_or_else(|| shape_err!("empty image batch"))?;
        let (h, w) = self.check_image(first)?;
        for im in images {
            if im.dims2()? != (h, w) {
                return Err(shape_err!("images in a batch must share one size"));
            }
        }
        let spectral = self.spectral(h, w);
        let responses: Vec<GroupResponse> = images
            .par_iter()
            .map(|im| {
                let spec = spectral.plan.forward_padded(im.data(), h, w);
                self.respond(&spec, &spectral)
            })
            .collect();
        let mut maps = Vec::with_capacity(images.len());
        let mut winners = Vec::with_capacity(images.len());
        for r in responses {
            maps.push(r.groupmax);
            winners.push(r.winners);
        }
        let cache = OrientationCache {
            groups: self.groups(),
            orientations: self.orientation_count(),
            out_rows: h - self.size + 1,
            out_cols: w - self.size + 1,
            winners,
        };
        Ok((maps, cache))
    }

    /// Gradients of the canonical filters and biases for one image.
    ///
    /// Each output position routes its gradient to the orientation that won
    /// the forward max; per-orientation correlation gradients are mapped back
    /// through the adjoint rotation.
    pub fn backward_one(
        &self,
        grad_out: &Tensor,
        winners: &[u16],
        image: &Tensor,
    ) -> (Vec<f64>, Vec<f64>) {
        let n = self.size;
        let len = n * n;
        let groups = self.groups();
        let count = self.orientation_count();
        let (oh, ow) = (grad_out.shape()[1], grad_out.shape()[2]);
        let w = image.cols();
        let img = image.data();
        let mut grad_canonical = vec![0.0; groups * len];
        let mut grad_biases = vec![0.0; groups];
        let mut per_angle = vec![0.0; count * len];
        let mut touched = vec![false; count];
        for g in 0..groups {
            per_angle.iter_mut().for_each(|v| *v = 0.0);
            touched.iter_mut().for_each(|t| *t = false);
            let grad = grad_out.plane(g);
            let win = &winners[g * oh * ow..(g + 1) * oh * ow];
            let mut bias = 0.0;
            for r in 0..oh {
                for c in 0..ow {
                    let gv = grad[r * ow + c];
                    bias += gv;
                    if gv == 0.0 {
                        continue;
                    }
                    let k = win[r * ow + c] as usize;
                    touched[k] = true;
                    let acc = &mut per_angle[k * len..(k + 1) * len];
                    for u in 0..n {
                        let src = &img[(r + u) * w + c..(r + u) * w + c + n];
                        let dst = &mut acc[u * n..(u + 1) * n];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += gv * s);
                    }
                }
            }
            grad_biases[g] = bias;
            let dst = &mut grad_canonical[g * len..(g + 1) * len];
            for k in (0..count).filter(|&k| touched[k]) {
                self.orientations
                    .adjoint_accumulate(k, &per_angle[k * len..(k + 1) * len], dst);
            }
        }
        (grad_canonical, grad_biases)
    }

    pub fn backward(
        &self,
        grad_out: &[Tensor],
        cache: &OrientationCache,
        images: &[Tensor],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_cache(grad_out, cache, images)?;
        let parts: Vec<(Vec<f64>, Vec<f64>)> = grad_out
            .par_iter()
            .zip(&cache.winners)
            .zip(images)
            .map(|((g, win), im)| self.backward_one(g, win, im))
            .collect();
        // fixed-order reduction
        let len = self.size * self.size;
        let mut gc = vec![0.0; self.groups() * len];
        let mut gb = vec![0.0; self.groups()];
        for (c, b) in parts {
            gc.iter_mut().zip(&c).for_each(|(a, v)| *a += v);
            gb.iter_mut().zip(&b).for_each(|(a, v)| *a += v);
        }
        Ok((gc, gb))
    }

    fn check_cache(
        &self,
        grad_out: &[Tensor],
        cache: &OrientationCache,
        images: &[Tensor],
    ) -> Result<()> {
        let state = |m: String| Err(Error::State(m));
        if cache.groups != self.groups() || cache.orientations != self.orientation_count() {
            return state(format!(
                "cache built for {} groups x {} orientations, layer has {} x {}",
                cache.groups,
                cache.orientations,
                self.groups(),
                self.orientation_count()
            ));
        }
        if grad_out.len() != cache.winners.len() || images.len() != cache.winners.len() {
            return state(format!(
                "batch sizes disagree: grad {}, cache {}, images {}",
                grad_out.len(),
                cache.winners.len(),
                images.len()
            ));
        }
        let want = [cache.groups, cache.out_rows, cache.out_cols];
        for (g, im) in grad_out.iter().zip(images) {
            if g.shape() != want {
                return state(format!("gradient shape {:?}, cache expects {:?}", g.shape(), want));
            }
            let (h, w) = im.dims2()?;
            if h + 1 != cache.out_rows + self.size || w + 1 != cache.out_cols + self.size {
                return state(format!("image {}x{} does not match cached activation map", h, w));
            }
        }
        Ok(())
    }
}

/// Orientation-pooled responses `max_alpha (image ⋆ rotate(h_i, alpha) + b_i)`.
pub fn rotconv_forward(
    images: &[Tensor],
    bank: &FilterBank,
    r_eval: usize,
) -> Result<(Vec<Tensor>, OrientationCache)> {
    RotConv::new(bank, r_eval)?.forward(images)
}

/// Gradients of the canonical filters (`groups × n × n`) and biases.
pub fn rotconv_backward(
    grad_out: &[Tensor],
    cache: &OrientationCache,
    images: &[Tensor],
    bank: &FilterBank,
) -> Result<(Vec<f64>, Vec<f64>)> {
    RotConv::new(bank, cache.orientations)?.backward(grad_out, cache, images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_differences, max_relative_error};
    use crate::tensor::{xcorr2_valid, CorrMethod};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_bank(arch: Arch, m: usize, r: usize, n: usize, seed: u64) -> FilterBank {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let canonical = (0..m * n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let biases = (0..m).map(|_| rng.gen_range(-0.1..0.1)).collect();
        FilterBank::from_parts(arch, r, n, canonical, biases).unwrap()
    }

    fn random_image(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(h, w, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn single_orientation_is_plain_correlation() {
        let bank = random_bank(Arch::Standard, 1, 1, 5, 1);
        let img = random_image(16, 13, 2);
        let (maps, cache) = rotconv_forward(std::slice::from_ref(&img), &bank, 1).unwrap();
        let want = xcorr2_valid(&img, &bank.canonical_tensor(0), CorrMethod::Direct).unwrap();
        assert_eq!(maps[0].shape(), &[1, 12, 9]);
        for (a, b) in maps[0].data().iter().zip(want.data()) {
            assert!((a - (b + bank.biases[0])).abs() < 1e-10);
        }
        assert!(cache.winners[0].iter().all(|&k| k == 0));
    }

    #[test]
    fn groupmax_matches_exhaustive_scan() {
        let bank = random_bank(Arch::Rotatable, 2, 6, 7, 3);
        let img = random_image(20, 18, 4);
        let (maps, cache) = rotconv_forward(std::slice::from_ref(&img), &bank, 6).unwrap();
        let ops = Orientations::for_bank(&bank, 6).unwrap();
        let rb = RotatedBank::materialize(&bank, &ops);
        for g in 0..2 {
            let resp: Vec<Tensor> = (0..6)
                .map(|k| xcorr2_valid(&img, &rb.filter_tensor(g, k), CorrMethod::Direct).unwrap())
                .collect();
            for p in 0..resp[0].len() {
                let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
                for (k, r) in resp.iter().enumerate() {
                    if r.data()[p] > best + 1e-12 {
                        best = r.data()[p];
                        arg = k;
                    }
                }
                assert!((maps[0].plane(g)[p] - best - bank.biases[g]).abs() < 1e-10);
                assert_eq!(cache.winners[0][g * resp[0].len() + p] as usize, arg);
            }
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        // An isotropic filter responds identically at every quarter turn.
        let n = 5;
        let mut bank = FilterBank::zeros(Arch::Rotatable, 1, 4, n).unwrap();
        bank.canonical[2 * n + 2] = 1.0;
        let img = random_image(9, 9, 5);
        let (_, cache) = rotconv_forward(&[img], &bank, 4).unwrap();
        assert!(cache.winners[0].iter().all(|&k| k == 0));
    }

    #[test]
    fn small_image_rejected() {
        let bank = random_bank(Arch::Rotatable, 1, 4, 9, 1);
        let img = Tensor::zeros(&[8, 20]);
        assert!(matches!(
            rotconv_forward(&[img], &bank, 4),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_gradient_gives_zero() {
        let bank = random_bank(Arch::Rotatable, 2, 8, 9, 6);
        let imgs = vec![random_image(20, 20, 7)];
        let (maps, cache) = rotconv_forward(&imgs, &bank, 8).unwrap();
        let zeros: Vec<Tensor> = maps.iter().map(|m| Tensor::zeros(m.shape())).collect();
        let (gc, gb) = rotconv_backward(&zeros, &cache, &imgs, &bank).unwrap();
        assert!(gc.iter().chain(&gb).all(|&v| v == 0.0));
    }

    #[test]
    fn bias_gradient_is_plain_sum() {
        let bank = random_bank(Arch::Rotatable, 3, 4, 5, 8);
        let imgs = vec![random_image(12, 12, 9), random_image(12, 12, 10)];
        let (maps, cache) = rotconv_forward(&imgs, &bank, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let grads: Vec<Tensor> = maps
            .iter()
            .map(|m| m.map(|_| rng.gen_range(-1.0..1.0)))
            .collect();
        let (_, gb) = rotconv_backward(&grads, &cache, &imgs, &bank).unwrap();
        for g in 0..3 {
            let want: f64 = grads.iter().map(|t| t.plane(g).iter().sum::<f64>()).sum();
            assert!((gb[g] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_cache_is_state_error() {
        let bank = random_bank(Arch::Rotatable, 2, 4, 5, 12);
        let imgs = vec![random_image(12, 12, 13)];
        let (maps, cache) = rotconv_forward(&imgs, &bank, 4).unwrap();
        let other = random_bank(Arch::Rotatable, 3, 4, 5, 14);
        assert!(matches!(
            rotconv_backward(&maps, &cache, &imgs, &other),
            Err(Error::State(_))
        ));
        let two = vec![imgs[0].clone(), imgs[0].clone()];
        assert!(matches!(
            rotconv_backward(&maps, &cache, &two, &bank),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn canonical_gradient_matches_finite_differences() {
        let (m, r, n) = (2, 8, 9);
        let bank = random_bank(Arch::Rotatable, m, r, n, 15);
        let imgs = vec![random_image(24, 24, 16)];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (maps, cache) = rotconv_forward(&imgs, &bank, r).unwrap();
        let weights: Vec<Tensor> = maps
            .iter()
            .map(|t| t.map(|_| rng.gen_range(-1.0..1.0)))
            .collect();
        let objective = |b: &FilterBank| -> f64 {
            let (maps, _) = rotconv_forward(&imgs, b, r).unwrap();
            maps.iter().zip(&weights).map(|(a, w)| a.dot(w)).sum()
        };
        let (gc, gb) = rotconv_backward(&weights, &cache, &imgs, &bank).unwrap();
        let mut probe = bank.clone();
        let fd = central_differences(&bank.canonical, 1e-6, |x| {
            probe.canonical.copy_from_slice(x);
            objective(&probe)
        });
        let worst = max_relative_error(&gc, &fd);
        assert!(worst <= 1e-5, "worst relative error {worst}");
        let fd = central_differences(&bank.biases, 1e-6, |x| {
            probe.canonical.copy_from_slice(&bank.canonical);
            probe.biases.copy_from_slice(x);
            objective(&probe)
        });
        assert!(max_relative_error(&gb, &fd) <= 1e-5);
    }

    #[test]
    fn rotated_copies_follow_canonical_updates() {
        let mut bank = random_bank(Arch::Rotatable, 2, 8, 9, 18);
        let layer = RotConv::new(&bank, 8).unwrap();
        for step in 0..3 {
            bank.canonical.iter_mut().for_each(|v| *v *= 0.9 + step as f64 * 0.01);
            let fresh = RotConv::with_orientations(&bank, layer.orientations.clone());
            for g in 0..2 {
                for k in 0..8 {
                    let mut want = vec![0.0; 81];
                    layer.orientations.apply(k, bank.canonical_filter(g), &mut want);
                    assert_eq!(fresh.rotated.filter(g, k), want.as_slice());
                }
            }
        }
    }
}
