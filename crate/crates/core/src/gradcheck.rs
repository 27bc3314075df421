//! Central finite-difference checks of the analytic network gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::net::{self, Gradients, Mode, NetworkParams, PoolGrid};
use crate::rotconv::{Arch, FilterBank};
use crate::tensor::Tensor;

/// Components whose magnitude is below this fraction of the largest gradient
/// component are compared against that floor instead of their own size.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// Per-component relative error
/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR · max_j max(|a_j|, |n_j|))`.
pub fn relative_errors(analytic: &[f64], numeric: &[f64]) -> Vec<f64> {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (RELATIVE_FLOOR * scale).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .collect()
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    relative_errors(analytic, numeric)
        .into_iter()
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x` with step `eps` for every coordinate.
pub fn central_differences(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let plus = f(&probe);
            probe[i] = orig - eps;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub groups: usize,
    pub orientations: usize,
    pub size: usize,
    pub classes: usize,
    pub image_size: usize,
    pub batch: usize,
    pub grid: PoolGrid,
    pub eps: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Negative control: scales the analytic canonical gradient.
    pub corrupt_backward: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            groups: 2,
            orientations: 8,
            size: 9,
            classes: 3,
            image_size: 24,
            batch: 3,
            grid: PoolGrid::new(2, 2),
            eps: 1e-5,
            tolerance: 1e-4,
            seed: 0,
            corrupt_backward: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub parameters: usize,
    pub passed: bool,
}

/// A random network and labelled batch for gradient checking.
pub fn random_instance(cfg: &GradCheckConfig) -> Result<(NetworkParams, Vec<Tensor>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bank = FilterBank::zeros(Arch::Rotatable, cfg.groups, cfg.orientations, cfg.size)?;
    let mut params = NetworkParams::init(bank, cfg.classes, cfg.grid, 0.3, &mut rng)?;
    let small = Normal::new(0.0, 0.1).expect("valid std");
    params.bank.biases.iter_mut().for_each(|b| *b = small.sample(&mut rng));
    params.fc_biases.iter_mut().for_each(|b| *b = small.sample(&mut rng));
    let images = (0..cfg.batch)
        .map(|_| Tensor::from_fn(cfg.image_size, cfg.image_size, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    let labels = (0..cfg.batch).map(|i| i % cfg.classes).collect();
    Ok((params, images, labels))
}

fn loss_at(params: &NetworkParams, images: &[Tensor], labels: &[usize]) -> f64 {
    let (out, _) = net::forward::<ChaCha8Rng>(params, images, Some(labels), Mode::Eval)
        .expect("forward on a valid instance");
    out.loss.expect("labels given")
}

/// Compares the analytic gradient of every parameter with central differences.
pub fn run(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let (params, images, labels) = random_instance(cfg)?;
    let (_, cache) = net::forward::<ChaCha8Rng>(&params, &images, Some(&labels), Mode::Eval)?;
    let mut grads: Gradients = net::backward(&cache, &params)?;
    if cfg.corrupt_backward {
        grads.canonical.iter_mut().for_each(|g| *g *= 1.01);
    }
    let analytic = grads.to_flat();
    let flat = params.to_flat();
    let mut probe = params.clone();
    let numeric = central_differences(&flat, cfg.eps, |x| {
        probe.set_flat(x);
        loss_at(&probe, &images, &labels)
    });
    let errs = relative_errors(&analytic, &numeric);
    let (worst_index, max_err) = errs
        .iter()
        .enumerate()
        .fold((0, 0.0), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    Ok(GradCheckReport {
        max_relative_error: max_err,
        worst_index,
        parameters: analytic.len(),
        passed: max_err <= cfg.tolerance,
    })
}
