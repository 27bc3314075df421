//! Texture descriptors: local statistics of pooled group activations and
//! cross power spectral density statistics across orientations.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::net::{relu, spatial_max_pool, PoolGrid};
use crate::rotconv::{FilterBank, RotConv, SpectralBank};
use crate::tensor::{fft2, Spectrum, Tensor};

pub const DEFAULT_R_EVAL: usize = 21;
pub const DEFAULT_GRID: PoolGrid = PoolGrid { rows: 4, cols: 4 };

/// `[local mean, std, max, min, global mean, std, max, min]`, each block
/// holding one value per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub groups: usize,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn local(&self) -> &[f64] {
        &self.values[..4 * self.groups]
    }

    pub fn global(&self) -> &[f64] {
        &self.values[4 * self.groups..]
    }

    pub fn select(&self, block: Block) -> Vec<f64> {
        match block {
            Block::Local => self.local().to_vec(),
            Block::Global => self.global().to_vec(),
            Block::Both => self.values.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Local,
    Global,
    #[default]
    Both,
}

impl std::str::FromStr for Block {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(Block::Local),
            "global" => Ok(Block::Global),
            "both" => Ok(Block::Both),
            _ => Err(config_err!("unknown descriptor block '{}'", s)),
        }
    }
}

/// Appends `[mean; std; max; min]` blocks, one entry per row of `rows`.
fn push_stats(rows: &[Vec<f64>], out: &mut Vec<f64>) {
    let stats: Vec<[f64; 4]> = rows
        .iter()
        .map(|v| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            [mean, var.sqrt(), max, min]
        })
        .collect();
    for s in 0..4 {
        out.extend(stats.iter().map(|st| st[s]));
    }
}

fn spectral_cpsd(x: &Spectrum, y: &Spectrum) -> f64 {
    x.values.iter().zip(&y.values).map(|(a, b)| (a * b).norm()).sum()
}

/// Total cross power spectral density `Σ |F(x) · F(y)|`, with `y` zero-padded
/// at the top-left to the size of `x`.
pub fn cpsd(x: &Tensor, y: &Tensor) -> Result<f64> {
    let (h, w) = x.dims2()?;
    let (yh, yw) = y.dims2()?;
    if yh > h || yw > w {
        return Err(shape_err!("cpsd: {}x{} does not fit in {}x{}", yh, yw, h, w));
    }
    let padded = if (yh, yw) == (h, w) {
        y.clone()
    } else {
        Tensor::from_fn(h, w, |r, c| if r < yh && c < yw { y.at(r, c) } else { 0.0 })
    };
    Ok(spectral_cpsd(&fft2(x)?, &fft2(&padded)?))
}

/// Descriptor extraction with the rotated filters and their spectra cached
/// per image size.
pub struct FeatureExtractor {
    conv: RotConv,
    grid: PoolGrid,
    size: usize,
    spectra: BTreeMap<(usize, usize), SpectralBank>,
}

impl FeatureExtractor {
    pub fn new(bank: &FilterBank, r_eval: usize, grid: PoolGrid) -> Result<Self> {
        if r_eval == 0 {
            return Err(config_err!("R_eval must be at least 1"));
        }
        Ok(FeatureExtractor {
            conv: RotConv::new(bank, r_eval)?,
            grid,
            size: bank.size,
            spectra: BTreeMap::new(),
        })
    }

    pub fn groups(&self) -> usize {
        self.conv.groups()
    }

    pub fn dim(&self) -> usize {
        8 * self.groups()
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        if h < self.size || w < self.size {
            return Err(shape_err!(
                "image {}x{} smaller than the {}x{} filters",
                h,
                w,
                self.size,
                self.size
            ));
        }
        let (oh, ow) = (h - self.size + 1, w - self.size + 1);
        if self.grid.rows == 0 || self.grid.cols == 0 || self.grid.rows > oh || self.grid.cols > ow {
            return Err(config_err!(
                "pool grid {} does not fit the {}x{} response map",
                self.grid,
                oh,
                ow
            ));
        }
        Ok(())
    }

    /// Builds the filter spectra for every image size in `images`.
    pub fn prepare(&mut self, images: &[Tensor]) -> Result<()> {
        for img in images {
            let (h, w) = img.dims2()?;
            self.check(h, w)?;
            if !self.spectra.contains_key(&(h, w)) {
                let sb = self.conv.spectral(h, w);
                self.spectra.insert((h, w), sb);
            }
        }
        Ok(())
    }

    fn compute(&self, image: &Tensor, spectral: &SpectralBank) -> Result<FeatureVector> {
        let (h, w) = image.dims2()?;
        let spec = spectral.plan.forward_padded(image.data(), h, w);
        let resp = self.conv.respond(&spec, spectral);
        let (pooled, _) = spatial_max_pool(&relu(&resp.groupmax), self.grid)?;
        let groups = self.groups();
        let mut values = Vec::with_capacity(8 * groups);
        let local: Vec<Vec<f64>> = (0..groups).map(|g| pooled.plane(g).to_vec()).collect();
        push_stats(&local, &mut values);
        let global: Vec<Vec<f64>> = (0..groups)
            .map(|g| {
                (0..self.conv.orientation_count())
                    .map(|k| spectral_cpsd(&spec, spectral.spectrum(g, k)))
                    .collect()
            })
            .collect();
        push_stats(&global, &mut values);
        Ok(FeatureVector { groups, values })
    }

    pub fn extract(&mut self, image: &Tensor) -> Result<FeatureVector> {
        self.prepare(std::slice::from_ref(image))?;
        let (h, w) = image.dims2()?;
        self.compute(image, &self.spectra[&(h, w)])
    }

    /// Parallel over images; output order follows the input.
    pub fn extract_batch(&mut self, images: &[Tensor]) -> Result<Vec<FeatureVector>> {
        self.prepare(images)?;
        images
            .par_iter()
            .map(|img| self.compute(img, &self.spectra[&(img.rows(), img.cols())]))
            .collect()
    }
}

pub fn extract_features(
    image: &Tensor,
    bank: &FilterBank,
    r_eval: usize,
    grid: PoolGrid,
) -> Result<FeatureVector> {
    FeatureExtractor::new(bank, r_eval, grid)?.extract(image)
}

pub fn local_descriptors(
    image: &Tensor,
    bank: &FilterBank,
    r_eval: usize,
    grid: PoolGrid,
) -> Result<Vec<f64>> {
    Ok(extract_features(image, bank, r_eval, grid)?.local().to_vec())
}

pub fn global_descriptors(image: &Tensor, bank: &FilterBank, r_eval: usize) -> Result<Vec<f64>> {
    let grid = PoolGrid::new(1, 1);
    Ok(extract_features(image, bank, r_eval, grid)?.global().to_vec())
}

pub fn extract_batch(
    images: &[Tensor],
    bank: &FilterBank,
    r_eval: usize,
    grid: PoolGrid,
) -> Result<Vec<FeatureVector>> {
    FeatureExtractor::new(bank, r_eval, grid)?.extract_batch(images)
}

/// `Σ|a - b| / Σ|a|`.
pub fn relative_l1(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    let den: f64 = a.iter().map(|x| x.abs()).sum();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{disc_mask, make_rotation_operator, rotate_filter};
    use crate::rotconv::Arch;
    use crate::tensor::{xcorr2_valid, CorrMethod};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_bank(groups: usize, n: usize, seed: u64) -> FilterBank {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let canonical = (0..groups * n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let biases = (0..groups).map(|_| rng.gen_range(-0.2..0.2)).collect();
        FilterBank::from_parts(Arch::Rotatable, 8, n, canonical, biases).unwrap()
    }

    fn random_image(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(h, w, |_, _| rng.gen_range(0.0..1.0))
    }

    fn disc_image(n: usize, seed: u64) -> Tensor {
        let mask = disc_mask(n);
        let img = random_image(n, n, seed);
        Tensor::from_vec(&[n, n], img.data().iter().zip(&mask).map(|(a, &m)| if m { *a } else { 0.0 }).collect())
            .unwrap()
    }

    /// Direct O(N^4) evaluation of the spectral sum.
    fn dft_cpsd(x: &Tensor, y: &Tensor) -> f64 {
        let (h, w) = (x.rows(), x.cols());
        let dft = |t: &Tensor, u: usize, v: usize| {
            let (mut re, mut im) = (0.0, 0.0);
            for r in 0..t.rows() {
                for c in 0..t.cols() {
                    let a = -2.0 * PI * ((u * r) as f64 / h as f64 + (v * c) as f64 / w as f64);
                    re += t.at(r, c) * a.cos();
                    im += t.at(r, c) * a.sin();
                }
            }
            (re * re + im * im).sqrt()
        };
        let mut s = 0.0;
        for u in 0..h {
            for v in 0..w {
                s += dft(x, u, v) * dft(y, u, v);
            }
        }
        s
    }

    #[test]
    fn cpsd_trivial_cases() {
        let x = random_image(8, 8, 1);
        assert_eq!(cpsd(&x, &Tensor::zeros(&[3, 3])).unwrap(), 0.0);
        let mut imp = Tensor::zeros(&[6, 6]);
        imp.set(0, 0, 1.0);
        assert!((cpsd(&imp, &imp).unwrap() - 36.0).abs() < 1e-12);
        assert!(cpsd(&Tensor::zeros(&[3, 3]), &x).is_err());
    }

    #[test]
    fn cpsd_matches_direct_dft() {
        let x = random_image(32, 32, 2);
        let y = random_image(7, 7, 3);
        let fast = cpsd(&x, &y).unwrap();
        let mut padded = Tensor::zeros(&[32, 32]);
        for r in 0..7 {
            for c in 0..7 {
                padded.set(r, c, y.at(r, c));
            }
        }
        let slow = dft_cpsd(&x, &padded);
        assert!((fast - slow).abs() / slow < 1e-10);
    }

    #[test]
    fn cpsd_power_and_symmetry() {
        let x = random_image(16, 12, 4);
        let y = random_image(16, 12, 5);
        let power: f64 = fft2(&x).unwrap().values.iter().map(|z| z.norm_sqr()).sum();
        assert!((cpsd(&x, &x).unwrap() - power).abs() / power < 1e-10);
        let (a, b) = (cpsd(&x, &y).unwrap(), cpsd(&y, &x).unwrap());
        assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn layout_and_invariants() {
        let bank = random_bank(3, 7, 6);
        let f = extract_features(&random_image(30, 30, 7), &bank, 8, PoolGrid::new(3, 3)).unwrap();
        assert_eq!(f.values.len(), 24);
        let m = 3;
        for g in 0..m {
            let (mean, max, min) = (f.values[g], f.values[2 * m + g], f.values[3 * m + g]);
            assert!(max >= mean && mean >= min);
        }
        assert!(f.global().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn sixteen_groups_give_128_values() {
        let bank = FilterBank::zeros(Arch::Rotatable, 16, 4, 5).unwrap();
        let f = extract_features(&random_image(12, 12, 0), &bank, 4, PoolGrid::new(2, 2)).unwrap();
        assert_eq!(f.values.len(), 128);
    }

    #[test]
    fn zero_image_zero_bank() {
        let bank = FilterBank::zeros(Arch::Rotatable, 2, 4, 5).unwrap();
        let f = extract_features(&Tensor::zeros(&[16, 16]), &bank, 4, PoolGrid::new(2, 2)).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_window_has_no_spread() {
        let bank = random_bank(2, 5, 8);
        let f = extract_features(&random_image(20, 20, 9), &bank, 4, PoolGrid::new(1, 1)).unwrap();
        for g in 0..2 {
            assert_eq!(f.values[g], f.values[4 + g]);
            assert_eq!(f.values[g], f.values[6 + g]);
            assert_eq!(f.values[2 + g], 0.0);
        }
    }

    #[test]
    fn local_stats_match_brute_force() {
        let bank = random_bank(2, 5, 10);
        let img = random_image(21, 19, 11);
        let r = 6;
        let local = local_descriptors(&img, &bank, r, PoolGrid::new(2, 2)).unwrap();
        for g in 0..2 {
            let filter = bank.canonical_tensor(g);
            let maps: Vec<Tensor> = (0..r)
                .map(|k| {
                    let rot = rotate_filter(&make_rotation_operator(5, 2.0 * PI * k as f64 / r as f64).unwrap(), &filter).unwrap();
                    xcorr2_valid(&img, &rot, CorrMethod::Direct).unwrap()
                })
                .collect();
            let (oh, ow) = (17, 15);
            let act = |i: usize, j: usize| {
                let m = maps.iter().map(|t| t.at(i, j)).fold(f64::NEG_INFINITY, f64::max);
                (m + bank.biases[g]).max(0.0)
            };
            let mut cells = Vec::new();
            for (r0, c0) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let (wr, wc) = (oh / 2, ow / 2);
                let mut best = f64::NEG_INFINITY;
                for i in r0 * wr..(r0 + 1) * wr {
                    for j in c0 * wc..(c0 + 1) * wc {
                        best = best.max(act(i, j));
                    }
                }
                cells.push(best);
            }
            let mean = cells.iter().sum::<f64>() / 4.0;
            let std = (cells.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
            let max = cells.iter().copied().fold(f64::MIN, f64::max);
            let min = cells.iter().copied().fold(f64::MAX, f64::min);
            for (got, want) in [local[g], local[2 + g], local[4 + g], local[6 + g]].iter().zip([mean, std, max, min]) {
                assert!((got - want).abs() < 1e-10, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn single_orientation_global_block() {
        let bank = random_bank(2, 5, 12);
        let img = random_image(16, 16, 13);
        let g = global_descriptors(&img, &bank, 1).unwrap();
        for k in 0..2 {
            let masked = rotate_filter(&make_rotation_operator(5, 0.0).unwrap(), &bank.canonical_tensor(k)).unwrap();
            let s0 = cpsd(&img, &masked).unwrap();
            assert!((g[k] - s0).abs() < 1e-9 * s0);
            assert_eq!(g[2 + k], 0.0);
            assert_eq!(g[k], g[4 + k]);
            assert_eq!(g[k], g[6 + k]);
        }
    }

    #[test]
    fn isotropic_filter_has_flat_spectrum_statistics() {
        let n = 35;
        let c = (n as f64 - 1.0) / 2.0;
        let canonical: Vec<f64> = (0..n * n)
            .map(|i| {
                let (r, col) = ((i / n) as f64 - c, (i % n) as f64 - c);
                (-(r * r + col * col) / 50.0).exp()
            })
            .collect();
        let bank = FilterBank::from_parts(Arch::Rotatable, 8, n, canonical, vec![0.0]).unwrap();
        let img = random_image(48, 48, 14);
        let g = global_descriptors(&img, &bank, 12).unwrap();
        // Bicubic resampling of a sampled Gaussian is isotropic only up to
        // interpolation error.
        assert!(g[1] <= 2e-5 * g[0], "std {} mean {}", g[1], g[0]);
        let g4 = global_descriptors(&img, &bank, 4).unwrap();
        assert!(g4[1] <= 1e-12 * g4[0]);
    }

    #[test]
    fn quarter_turn_invariance() {
        let bank = random_bank(3, 7, 15);
        let img = disc_image(33, 16);
        let a = extract_features(&img, &bank, 8, PoolGrid::new(1, 1)).unwrap();
        let b = extract_features(&img.rot90(), &bank, 8, PoolGrid::new(1, 1)).unwrap();
        assert!(relative_l1(&a.values, &b.values) < 1e-6);
        for (x, y) in a.global().iter().zip(b.global()) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-300));
        }
    }

    #[test]
    fn batch_matches_single() {
        let bank = random_bank(2, 5, 17);
        let imgs: Vec<Tensor> = (0..4).map(|i| random_image(14 + i, 16, 20 + i as u64)).collect();
        let batch = extract_batch(&imgs, &bank, 4, PoolGrid::new(2, 2)).unwrap();
        for (img, f) in imgs.iter().zip(&batch) {
            assert_eq!(&extract_features(img, &bank, 4, PoolGrid::new(2, 2)).unwrap(), f);
        }
    }

    #[test]
    fn oversized_grid_rejected() {
        let bank = random_bank(1, 5, 0);
        let err = extract_features(&random_image(8, 8, 0), &bank, 4, PoolGrid::new(5, 5));
        assert!(matches!(err, Err(crate::Error::Config(_))));
    }

    #[test]
    fn block_parsing() {
        assert_eq!("global".parse::<Block>().unwrap(), Block::Global);
        assert!("all".parse::<Block>().is_err());
    }
}
