//! Dataset ingestion (manifest + binary PGM) and synthetic oriented textures.
//!
//! A problem directory holds `train.txt`, `test.txt` and an `images/`
//! subdirectory. Each manifest starts with the sample count followed by one
//! `filename label` pair per line. Outex archives ship Sun-raster images;
//! convert them once, e.g. `for f in *.ras; do convert "$f" "${f%.ras}.pgm"; done`.
//! A manifest entry whose file is missing resolves to the `.pgm` sibling.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub names: Vec<String>,
    pub class_count: usize,
}

impl DatasetSplit {
    pub fn new(
        images: Vec<Tensor>,
        labels: Vec<usize>,
        names: Vec<String>,
        class_count: usize,
    ) -> Result<Self> {
        if images.len() != labels.len() || images.len() != names.len() {
            return Err(Error::Input(format!(
                "split has {} images, {} labels, {} names",
                images.len(),
                labels.len(),
                names.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Input(format!(
                "label {} outside [0, {})",
                bad, class_count
            )));
        }
        Ok(DatasetSplit {
            images,
            labels,
            names,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> DatasetSplit {
        DatasetSplit {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            names: indices.iter().map(|&i| self.names[i].clone()).collect(),
            class_count: self.class_count,
        }
    }

    /// The first `per_class` samples of every class, in split order.
    pub fn take_per_class(&self, per_class: usize) -> DatasetSplit {
        let mut seen = vec![0usize; self.class_count];
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let l = self.labels[i];
                seen[l] += 1;
                seen[l] <= per_class
            })
            .collect();
        self.subset(&idx)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// SHA-256 over names, labels and pixel values.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.class_count as u64).to_le_bytes());
        for ((img, &label), name) in self.images.iter().zip(&self.labels).zip(&self.names) {
            h.update(name.as_bytes());
            h.update([0u8]);
            h.update((label as u64).to_le_bytes());
            for &d in img.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in img.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

fn decode_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Decodes a binary (P5) PGM with `maxval <= 255` into values in `[0, 1]`.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(decode_err(path, "missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(decode_err(path, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(decode_err(path, "expected a number in the header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| decode_err(path, "header number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(decode_err(path, "zero image dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(decode_err(path, format!("unsupported maxval {}", maxval)));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(decode_err(path, "truncated header")),
    }
    let need = width * height;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(decode_err(
            path,
            format!("truncated payload: {} of {} bytes", payload.len(), need),
        ));
    }
    let scale = maxval as f64;
    let data = payload[..need]
        .iter()
        .map(|&b| (b as f64 / scale).min(1.0))
        .collect();
    Tensor::from_vec(&[height, width], data)
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    decode_pgm(&bytes, path)
}

/// 8-bit P5 encoding of values in `[0, 1]` (clamped, rounded).
pub fn encode_pgm(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = image.dims2()?;
    let mut out = format!("P5\n{} {}\n255\n", w, h).into_bytes();
    out.extend(
        image
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(image)?).map_err(|e| Error::io(path, e))
}

/// Parses a manifest into `(filename, label)` pairs.
pub fn read_manifest(path: &Path) -> Result<Vec<(String, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let malformed = |line: usize, content: &str| Error::MalformedLine {
        file: path.to_path_buf(),
        line,
        content: content.to_string(),
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let (first_no, first) = lines
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| malformed(1, ""))?;
    let declared: usize = first
        .trim()
        .parse()
        .map_err(|_| malformed(first_no, first))?;
    let mut entries = Vec::new();
    for (no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(name), Some(label), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(malformed(no, line));
        };
        let label: usize = label.parse().map_err(|_| malformed(no, line))?;
        entries.push((name.to_string(), label));
    }
    if entries.len() != declared {
        return Err(Error::CountMismatch {
            file: path.to_path_buf(),
            declared,
            found: entries.len(),
        });
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[(String, usize)]) -> Result<()> {
    let mut text = format!("{}\n", entries.len());
    for (name, label) in entries {
        text.push_str(&format!("{} {}\n", name, label));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn resolve_image(images_dir: &Path, name: &str) -> PathBuf {
    let direct = images_dir.join(name);
    if direct.exists() {
        return direct;
    }
    let pgm = direct.with_extension("pgm");
    if pgm.exists() {
        pgm
    } else {
        direct
    }
}

fn load_split(dir: &Path, manifest: &str, class_count: Option<usize>) -> Result<DatasetSplit> {
    let path = dir.join(manifest);
    let entries = read_manifest(&path)?;
    let images_dir = dir.join("images");
    let images = entries
        .par_iter()
        .map(|(name, _)| load_pgm(resolve_image(&images_dir, name)))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = entries.iter().map(|(_, l)| *l).collect();
    let classes = match class_count {
        Some(c) => c,
        None => labels.iter().max().map_or(0, |m| m + 1),
    };
    let mut present = vec![false; classes];
    for &l in &labels {
        if l >= classes {
            return Err(Error::NonDenseLabels {
                file: path.clone(),
                classes,
                missing: vec![l],
            });
        }
        present[l] = true;
    }
    if class_count.is_none() {
        let missing: Vec<usize> = (0..classes).filter(|&c| !present[c]).collect();
        if !missing.is_empty() {
            return Err(Error::NonDenseLabels {
                file: path,
                classes,
                missing,
            });
        }
    }
    let names = entries.into_iter().map(|(n, _)| n).collect();
    DatasetSplit::new(images, labels, names, classes)
}

/// Loads `train.txt` / `test.txt`; the class count comes from the training
/// labels, which must cover `[0, C-1]` densely.
pub fn load_problem(dir: impl AsRef<Path>) -> Result<(DatasetSplit, DatasetSplit)> {
    let dir = dir.as_ref();
    let train = load_split(dir, "train.txt", None)?;
    let test = load_split(dir, "test.txt", Some(train.class_count))?;
    Ok((train, test))
}

/// Writes both splits as PGM images plus manifests.
pub fn write_problem(dir: impl AsRef<Path>, train: &DatasetSplit, test: &DatasetSplit) -> Result<()> {
    let dir = dir.as_ref();
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    for (split, manifest) in [(train, "train.txt"), (test, "test.txt")] {
        for (img, name) in split.images.iter().zip(&split.names) {
            write_pgm(images.join(name), img)?;
        }
        let entries: Vec<(String, usize)> = split
            .names
            .iter()
            .cloned()
            .zip(split.labels.iter().cloned())
            .collect();
        write_manifest(&dir.join(manifest), &entries)?;
    }
    Ok(())
}

/// One sinusoidal grating of a synthetic texture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthComponent {
    /// Cycles per pixel, in `(0, 0.5]`.
    pub frequency: f64,
    pub weight: f64,
    /// Direction offset added to the texture orientation (radians).
    #[serde(default)]
    pub angle_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub components: Vec<SynthComponent>,
    pub orientation: f64,
    pub size: usize,
    pub noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(config_err!("synthetic image size must be positive"));
        }
        for c in &self.components {
            if !(c.frequency > 0.0 && c.frequency <= 0.5) {
                return Err(config_err!(
                    "frequency {} outside (0, 0.5] cycles/pixel",
                    c.frequency
                ));
            }
        }
        if self.noise < 0.0 || !self.noise.is_finite() {
            return Err(config_err!("noise level must be a finite non-negative value"));
        }
        Ok(())
    }
}

/// `I(p) = 0.5 + sum_w a_w 0.4 cos(2 pi f_w <p - c, u(theta + phi_w)>) + noise`,
/// clamped to `[0, 1]`, with `p = (col, row)` and `u(t) = (cos t, sin t)`.
pub fn synth_texture(spec: &SynthSpec) -> Result<Tensor> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let c = (spec.size as f64 - 1.0) / 2.0;
    let dirs: Vec<(f64, f64, f64, f64)> = spec
        .components
        .iter()
        .map(|comp| {
            let t = spec.orientation + comp.angle_offset;
            (comp.frequency, comp.weight, t.cos(), t.sin())
        })
        .collect();
    let tau = 2.0 * std::f64::consts::PI;
    Ok(Tensor::from_fn(spec.size, spec.size, |r, col| {
        let (x, y) = (col as f64 - c, r as f64 - c);
        let mut v = 0.5;
        for &(f, a, ux, uy) in &dirs {
            v += a * 0.4 * (tau * f * (x * ux + y * uy)).cos();
        }
        if spec.noise > 0.0 {
            v += normal.sample(&mut rng);
        }
        v.clamp(0.0, 1.0)
    }))
}

/// A synthetic classification problem: train at one orientation, test at
/// uniformly random orientations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProblem {
    pub classes: Vec<Vec<SynthComponent>>,
    pub size: usize,
    pub noise: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    #[serde(default)]
    pub train_orientation: f64,
    pub seed: u64,
}

impl Default for SynthProblem {
    fn default() -> Self {
        let mut classes = Vec::new();
        for f in [1.0 / 4.0, 1.0 / 6.0, 1.0 / 9.0] {
            classes.push(vec![SynthComponent {
                frequency: f,
                weight: 1.0,
                angle_offset: 0.0,
            }]);
            classes.push(vec![
                SynthComponent {
                    frequency: f,
                    weight: 0.5,
                    angle_offset: 0.0,
                },
                SynthComponent {
                    frequency: f,
                    weight: 0.5,
                    angle_offset: std::f64::consts::FRAC_PI_2,
                },
            ]);
        }
        SynthProblem {
            classes,
            size: 64,
            noise: 0.05,
            train_per_class: 10,
            test_per_class: 50,
            train_orientation: 0.0,
            seed: 0,
        }
    }
}

impl SynthProblem {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn generate(&self) -> Result<(DatasetSplit, DatasetSplit)> {
        if self.classes.len() < 2 {
            return Err(config_err!("synthetic problem needs at least 2 classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut make = |count: usize, random_angle: bool, tag: &str| -> Result<DatasetSplit> {
            let mut specs = Vec::new();
            let mut labels = Vec::new();
            let mut names = Vec::new();
            for (label, comps) in self.classes.iter().enumerate() {
                for i in 0..count {
                    let orientation = if random_angle {
                        rng.gen_range(0.0..2.0 * std::f64::consts::PI)
                    } else {
                        self.train_orientation
                    };
                    specs.push(SynthSpec {
                        components: comps.clone(),
                        orientation,
                        size: self.size,
                        noise: self.noise,
                        seed: rng.gen(),
                    });
                    labels.push(label);
                    names.push(format!("{}_{:02}_{:04}.pgm", tag, label, i));
                }
            }
            let images = specs
                .par_iter()
                .map(synth_texture)
                .collect::<Result<Vec<_>>>()?;
            DatasetSplit::new(images, labels, names, self.classes.len())
        };
        let train = make(self.train_per_class, false, "train")?;
        let test = make(self.test_per_class, true, "test")?;
        Ok((train, test))
    }

    /// Extra images at the training orientation, drawn from an independent
    /// stream, for model selection.
    pub fn generate_validation(&self, per_class: usize) -> Result<DatasetSplit> {
        let other = SynthProblem {
            seed: self.seed ^ 0x7a11_da7e,
            train_per_class: per_class,
            test_per_class: 0,
            ..self.clone()
        };
        let (mut val, _) = other.generate()?;
        val.names.iter_mut().for_each(|n| *n = n.replacen("train", "val", 1));
        Ok(val)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pgm(w: usize, h: usize, maxval: usize, payload: &[u8]) -> Vec<u8> {
        let mut v = format!("P5\n# comment line\n{} {}\n{}\n", w, h, maxval).into_bytes();
        v.extend_from_slice(payload);
        v
    }

    #[test]
    fn decodes_scaled_pixels() {
        let t = decode_pgm(&pgm(2, 2, 255, &[0, 255, 128, 64]), Path::new("x")).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.data()[0], 0.0);
        assert_eq!(t.data()[1], 1.0);
        assert!((t.data()[2] - 0.50196).abs() < 1e-5);
        assert!((t.data()[3] - 0.25098).abs() < 1e-5);
    }

    #[test]
    fn decode_errors() {
        let p = Path::new("bad.pgm");
        assert!(matches!(decode_pgm(b"P6\n1 1\n255\n\0", p), Err(Error::Decode { .. })));
        assert!(matches!(decode_pgm(&pgm(2, 2, 255, &[1, 2, 3]), p), Err(Error::Decode { .. })));
        assert!(matches!(decode_pgm(&pgm(1, 1, 65535, &[0, 0]), p), Err(Error::Decode { .. })));
    }

    #[test]
    fn pgm_roundtrip_is_exact_for_quantized_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Tensor::from_fn(7, 5, |_, _| rng.gen_range(0..=255u8) as f64 / 255.0);
        let back = decode_pgm(&encode_pgm(&img).unwrap(), Path::new("m")).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn axis_aligned_grating() {
        let spec = SynthSpec {
            components: vec![SynthComponent {
                frequency: 0.125,
                weight: 1.0,
                angle_offset: 0.0,
            }],
            orientation: 0.0,
            size: 32,
            noise: 0.0,
            seed: 3,
        };
        let img = synth_texture(&spec).unwrap();
        for r in 1..32 {
            for c in 0..32 {
                assert!((img.at(r, c) - img.at(0, c)).abs() < 1e-12);
            }
        }
        for c in 0..24 {
            assert!((img.at(0, c) - img.at(0, c + 8)).abs() < 1e-12);
        }
        assert!((img.at(0, 4) - img.at(0, 5)).abs() > 1e-3);
    }

    #[test]
    fn half_turn_gives_same_texture() {
        let spec = SynthProblem {
            noise: 0.0,
            ..SynthProblem::default()
        };
        let base = SynthSpec {
            components: spec.classes[3].clone(),
            orientation: 0.4,
            size: 33,
            noise: 0.0,
            seed: 0,
        };
        let flipped = SynthSpec {
            orientation: 0.4 + std::f64::consts::PI,
            ..base.clone()
        };
        let a = synth_texture(&base).unwrap();
        let b = synth_texture(&flipped).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn synth_is_deterministic_and_validated() {
        let spec = SynthSpec {
            components: vec![SynthComponent {
                frequency: 0.2,
                weight: 1.0,
                angle_offset: 0.0,
            }],
            orientation: 1.0,
            size: 16,
            noise: 0.05,
            seed: 9,
        };
        assert_eq!(synth_texture(&spec).unwrap(), synth_texture(&spec).unwrap());
        let bad = SynthSpec {
            components: vec![SynthComponent {
                frequency: 0.6,
                weight: 1.0,
                angle_offset: 0.0,
            }],
            ..spec
        };
        assert!(matches!(synth_texture(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn analytic_rotation_equivariance() {
        // texture at theta sampled at p equals texture at 0 sampled at R(-theta) p
        let theta = std::f64::consts::FRAC_PI_2;
        let comps = SynthProblem::default().classes[1].clone();
        let mk = |o| SynthSpec {
            components: comps.clone(),
            orientation: o,
            size: 21,
            noise: 0.0,
            seed: 0,
        };
        let rotated = synth_texture(&mk(theta)).unwrap();
        let base = synth_texture(&mk(0.0)).unwrap();
        let expect = base.rot90();
        for (a, b) in rotated.data().iter().zip(expect.data()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn default_problem_shape() {
        let p = SynthProblem {
            test_per_class: 3,
            ..SynthProblem::default()
        };
        let (train, test) = p.generate().unwrap();
        assert_eq!(train.len(), 60);
        assert_eq!(test.len(), 18);
        assert_eq!(train.class_count, 6);
        assert_eq!(train.class_counts(), vec![10; 6]);
        assert!(train.images.iter().all(|t| t.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }
}
