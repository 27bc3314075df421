//! The shallow network: rotatable convolution, group dropout, ReLU, spatial
//! max-pooling, average pooling, a fully connected layer and softmax loss.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};
use crate::rotconv::{Arch, FilterBank, OrientationCache, RotConv};
use crate::tensor::Tensor;

/// Non-overlapping spatial max-pool layout: `rows × cols` windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolGrid {
    pub rows: usize,
    pub cols: usize,
}

impl PoolGrid {
    pub const fn new(rows: usize, cols: usize) -> Self {
        PoolGrid { rows, cols }
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }
}

impl std::fmt::Display for PoolGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl std::str::FromStr for PoolGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| config_err!("grid must look like 2x2, got {:?}", s))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| config_err!("bad grid dimension {:?}", v))
        };
        let grid = PoolGrid::new(parse(r)?, parse(c)?);
        if grid.rows == 0 || grid.cols == 0 {
            return Err(config_err!("grid dimensions must be positive"));
        }
        Ok(grid)
    }
}

/// Scalar input standardization fitted on the training images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization { mean: 0.0, std: 1.0 }
    }
}

impl Normalization {
    pub fn fit(images: &[Tensor]) -> Self {
        let count: usize = images.iter().map(|t| t.len()).sum();
        if count == 0 {
            return Self::default();
        }
        let mean = images.iter().map(|t| t.sum()).sum::<f64>() / count as f64;
        let var = images
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / count as f64;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Normalization { mean, std }
    }

    pub fn apply(&self, image: &Tensor) -> Tensor {
        image.map(|v| (v - self.mean) / self.std)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub bank: FilterBank,
    pub classes: usize,
    /// `classes × groups`, row-major.
    pub fc_weights: Vec<f64>,
    pub fc_biases: Vec<f64>,
    pub grid: PoolGrid,
    pub normalization: Normalization,
}

impl NetworkParams {
    /// Filters and fully connected weights drawn from `N(0, std²)`, biases 0.
    pub fn init<R: Rng>(
        bank: FilterBank,
        classes: usize,
        grid: PoolGrid,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(config_err!("need at least 2 classes, got {}", classes));
        }
        let normal = Normal::new(0.0, std).map_err(|e| config_err!("init std: {}", e))?;
        let mut bank = bank;
        bank.canonical.iter_mut().for_each(|v| *v = normal.sample(rng));
        bank.biases.iter_mut().for_each(|v| *v = 0.0);
        let fc_weights = (0..classes * bank.groups).map(|_| normal.sample(rng)).collect();
        Ok(NetworkParams {
            fc_weights,
            fc_biases: vec![0.0; classes],
            bank,
            classes,
            grid,
            normalization: Normalization::default(),
        })
    }

    pub fn groups(&self) -> usize {
        self.bank.groups
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(config_err!("need at least 2 classes"));
        }
        if self.fc_weights.len() != self.classes * self.groups()
            || self.fc_biases.len() != self.classes
        {
            return Err(shape_err!(
                "fully connected layer does not match {} classes x {} groups",
                self.classes,
                self.groups()
            ));
        }
        let finite = self
            .fc_weights
            .iter()
            .chain(&self.fc_biases)
            .chain(&self.bank.canonical)
            .chain(&self.bank.biases)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Input("network parameters are not finite".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.bank.canonical.len() + self.bank.biases.len() + self.fc_weights.len() + self.fc_biases.len()
    }

    /// All parameters in the order canonical, biases, fc weights, fc biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.bank.canonical);
        v.extend_from_slice(&self.bank.biases);
        v.extend_from_slice(&self.fc_weights);
        v.extend_from_slice(&self.fc_biases);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let (a, rest) = flat.split_at(self.bank.canonical.len());
        let (b, rest) = rest.split_at(self.bank.biases.len());
        let (c, d) = rest.split_at(self.fc_weights.len());
        self.bank.canonical.copy_from_slice(a);
        self.bank.biases.copy_from_slice(b);
        self.fc_weights.copy_from_slice(c);
        self.fc_biases.copy_from_slice(d);
    }
}

/// Gradients with the same layout as [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub canonical: Vec<f64>,
    pub biases: Vec<f64>,
    pub fc_weights: Vec<f64>,
    pub fc_biases: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Gradients {
            canonical: vec![0.0; params.bank.canonical.len()],
            biases: vec![0.0; params.bank.biases.len()],
            fc_weights: vec![0.0; params.fc_weights.len()],
            fc_biases: vec![0.0; params.fc_biases.len()],
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.canonical.clone();
        v.extend_from_slice(&self.biases);
        v.extend_from_slice(&self.fc_weights);
        v.extend_from_slice(&self.fc_biases);
        v
    }

    fn add(&mut self, other: &Gradients) {
        let pairs = [
            (&mut self.canonical, &other.canonical),
            (&mut self.biases, &other.biases),
            (&mut self.fc_weights, &other.fc_weights),
            (&mut self.fc_biases, &other.fc_biases),
        ];
        for (a, b) in pairs {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Passes `grad` where the forward input was strictly positive.
pub fn relu_backward(x: &Tensor, grad: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

fn dims3(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        &[m, h, w] => Ok((m, h, w)),
        s => Err(shape_err!("expected a 3-D tensor, got {:?}", s)),
    }
}

/// Max over non-overlapping top-left anchored windows; returns the pooled map
/// and, per output cell, the flat in-plane index of the winning position.
pub fn spatial_max_pool(x: &Tensor, grid: PoolGrid) -> Result<(Tensor, Vec<usize>)> {
    let (m, h, w) = dims3(x)?;
    if grid.rows == 0 || grid.cols == 0 || grid.rows > h || grid.cols > w {
        return Err(config_err!("pool grid {} does not fit a {}x{} map", grid, h, w));
    }
    let (wr, wc) = (h / grid.rows, w / grid.cols);
    let mut out = Tensor::zeros(&[m, grid.rows, grid.cols]);
    let mut arg = Vec::with_capacity(m * grid.cells());
    for g in 0..m {
        let plane = x.plane(g);
        for gr in 0..grid.rows {
            for gc in 0..grid.cols {
                let mut best = f64::NEG_INFINITY;
                let mut at = 0;
                for r in gr * wr..(gr + 1) * wr {
                    for c in gc * wc..(gc + 1) * wc {
                        let v = plane[r * w + c];
                        if v > best {
                            best = v;
                            at = r * w + c;
                        }
                    }
                }
                out.plane_mut(g)[gr * grid.cols + gc] = best;
                arg.push(at);
            }
        }
    }
    Ok((out, arg))
}

pub fn spatial_max_pool_backward(grad: &Tensor, arg: &[usize], input_shape: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(input_shape);
    let cells = grad.len() / input_shape[0];
    for (i, (&g, &pos)) in grad.data().iter().zip(arg).enumerate() {
        out.plane_mut(i / cells)[pos] += g;
    }
    out
}

pub fn global_avg_pool(x: &Tensor) -> Result<Vec<f64>> {
    let (m, h, w) = dims3(x)?;
    let n = (h * w) as f64;
    Ok((0..m).map(|g| x.plane(g).iter().sum::<f64>() / n).collect())
}

pub fn global_avg_pool_backward(grad: &[f64], input_shape: &[usize]) -> Tensor {
    let cells = input_shape[1] * input_shape[2];
    let mut out = Tensor::zeros(input_shape);
    for (g, &v) in grad.iter().enumerate() {
        out.plane_mut(g).iter_mut().for_each(|x| *x = v / cells as f64);
    }
    out
}

/// `scores = weights · v + biases` with `weights` stored `classes × dim`.
pub fn fully_connected(v: &[f64], weights: &[f64], biases: &[f64]) -> Result<Vec<f64>> {
    let classes = biases.len();
    if classes == 0 || weights.len() != classes * v.len() {
        return Err(shape_err!(
            "fully connected weights {} do not match {} classes x {} inputs",
            weights.len(),
            classes,
            v.len()
        ));
    }
    Ok(weights
        .chunks_exact(v.len())
        .zip(biases)
        .map(|(row, b)| row.iter().zip(v).map(|(w, x)| w * x).sum::<f64>() + b)
        .collect())
}

/// Returns `(d_weights, d_biases, d_input)`.
pub fn fully_connected_backward(
    v: &[f64],
    weights: &[f64],
    grad: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dim = v.len();
    let mut dw = vec![0.0; weights.len()];
    let mut dv = vec![0.0; dim];
    for (c, &g) in grad.iter().enumerate() {
        let row = &weights[c * dim..(c + 1) * dim];
        for j in 0..dim {
            dw[c * dim + j] = g * v[j];
            dv[j] += g * row[j];
        }
    }
    (dw, grad.to_vec(), dv)
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Negative log-likelihood and its gradient `softmax(s) - onehot(label)`.
pub fn softmax_log_loss(scores: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= scores.len() {
        return Err(Error::Input(format!(
            "label {} out of range for {} classes",
            label,
            scores.len()
        )));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_total = scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    let loss = log_total - (scores[label] - max);
    let mut grad = softmax(scores);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Per-group dropout keep factors: `0` or `1/(1-rate)` in train mode, `1` in
/// eval mode.
pub fn dropout_mask<R: Rng>(groups: usize, rate: f64, rng: &mut R, mode: DropoutMode) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(config_err!("dropout rate must be in [0, 1), got {}", rate));
    }
    if mode == DropoutMode::Eval || rate == 0.0 {
        return Ok(vec![1.0; groups]);
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..groups)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect())
}

/// Zeroes whole group maps of an `M × h × w` activation tensor.
pub fn dropout_groups<R: Rng>(
    x: &Tensor,
    rate: f64,
    rng: &mut R,
    mode: DropoutMode,
) -> Result<(Tensor, Vec<f64>)> {
    let (m, _, _) = dims3(x)?;
    let mask = dropout_mask(m, rate, rng, mode)?;
    Ok((apply_group_scale(x, &mask), mask))
}

fn apply_group_scale(x: &Tensor, mask: &[f64]) -> Tensor {
    let mut out = x.clone();
    for (g, &s) in mask.iter().enumerate() {
        if s != 1.0 {
            out.plane_mut(g).iter_mut().for_each(|v| *v *= s);
        }
    }
    out
}

/// How a forward pass treats dropout.
pub enum Mode<'a, R: Rng> {
    Train { dropout: f64, rng: &'a mut R },
    Eval,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub orientation: OrientationCache,
    pub masks: Vec<Vec<f64>>,
    /// Group maps after dropout, before ReLU.
    pub pre_relu: Vec<Tensor>,
    pub pool_arg: Vec<Vec<usize>>,
    pub pooled_shape: [usize; 3],
    pub features: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub scores: Vec<Vec<f64>>,
    /// Mean loss over the batch, when labels were given.
    pub loss: Option<f64>,
}

impl ForwardOutput {
    pub fn predictions(&self) -> Vec<usize> {
        self.scores.iter().map(|s| argmax(s)).collect()
    }
}

/// Index of the largest value; lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Network with its prepared rotation layer and the cache of the last
/// forward call.
#[derive(Debug, Clone)]
pub struct Network {
    params: NetworkParams,
    layer: RotConv,
    cache: Option<ForwardCache>,
}

impl Network {
    pub fn new(params: NetworkParams) -> Result<Self> {
        params.validate()?;
        let layer = RotConv::new(&params.bank, params.bank.orientations)?;
        Ok(Network {
            params,
            layer,
            cache: None,
        })
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn into_params(self) -> NetworkParams {
        self.params
    }

    pub fn layer(&self) -> &RotConv {
        &self.layer
    }

    /// Mutates the parameters and re-derives every rotated filter from the
    /// updated canonical weights.
    pub fn update(&mut self, f: impl FnOnce(&mut NetworkParams)) {
        f(&mut self.params);
        self.layer = RotConv::with_orientations(&self.params.bank, self.layer.orientations.clone());
        self.cache = None;
    }

    pub fn forward<R: Rng>(
        &mut self,
        images: &[Tensor],
        labels: Option<&[usize]>,
        mode: Mode<'_, R>,
    ) -> Result<ForwardOutput> {
        let (out, cache) = forward_with(&self.layer, &self.params, images, labels, mode)?;
        self.cache = Some(cache);
        Ok(out)
    }

    pub fn backward(&mut self) -> Result<Gradients> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a preceding forward".into()))?;
        backward_with(&self.layer, &cache, &self.params)
    }

    pub fn predict(&self, images: &[Tensor]) -> Result<ForwardOutput> {
        let (out, _) = forward_with::<rand::rngs::ThreadRng>(
            &self.layer,
            &self.params,
            images,
            None,
            Mode::Eval,
        )?;
        Ok(out)
    }
}

pub fn forward<R: Rng>(
    params: &NetworkParams,
    images: &[Tensor],
    labels: Option<&[usize]>,
    mode: Mode<'_, R>,
) -> Result<(ForwardOutput, ForwardCache)> {
    params.validate()?;
    let layer = RotConv::new(&params.bank, params.bank.orientations)?;
    forward_with(&layer, params, images, labels, mode)
}

pub fn backward(cache: &ForwardCache, params: &NetworkParams) -> Result<Gradients> {
    let layer = RotConv::new(&params.bank, cache.orientation.orientations)?;
    backward_with(&layer, cache, params)
}

pub(crate) fn forward_with<R: Rng>(
    layer: &RotConv,
    params: &NetworkParams,
    images: &[Tensor],
    labels: Option<&[usize]>,
    mode: Mode<'_, R>,
) -> Result<(ForwardOutput, ForwardCache)> {
    if let Some(l) = labels {
        if l.len() != images.len() {
            return Err(shape_err!("{} labels for {} images", l.len(), images.len()));
        }
    }
    let groups = params.groups();
    // Masks are drawn sequentially so results do not depend on threading.
    let masks: Vec<Vec<f64>> = match mode {
        Mode::Train { dropout, rng } => (0..images.len())
            .map(|_| dropout_mask(groups, dropout, rng, DropoutMode::Train))
            .collect::<Result<_>>()?,
        Mode::Eval => vec![vec![1.0; groups]; images.len()],
    };
    let (maps, orientation) = layer.forward(images)?;

    struct Item {
        pre_relu: Tensor,
        arg: Vec<usize>,
        features: Vec<f64>,
        scores: Vec<f64>,
        shape: [usize; 3],
    }
    let items: Vec<Item> = maps
        .into_par_iter()
        .zip(masks.par_iter())
        .map(|(map, mask)| -> Result<Item> {
            let pre_relu = apply_group_scale(&map, mask);
            let act = relu(&pre_relu);
            let (pooled, arg) = spatial_max_pool(&act, params.grid)?;
            let features = global_avg_pool(&pooled)?;
            let scores = fully_connected(&features, &params.fc_weights, &params.fc_biases)?;
            let s = pooled.shape();
            Ok(Item {
                pre_relu,
                arg,
                features,
                scores,
                shape: [s[0], s[1], s[2]],
            })
        })
        .collect::<Result<_>>()?;

    let mut loss = None;
    let mut probs = Vec::with_capacity(items.len());
    if let Some(labels) = labels {
        let mut total = 0.0;
        for (item, &label) in items.iter().zip(labels) {
            let (l, _) = softmax_log_loss(&item.scores, label)?;
            total += l;
        }
        loss = Some(total / items.len() as f64);
    }
    for item in &items {
        probs.push(softmax(&item.scores));
    }
    let pooled_shape = items.first().map(|i| i.shape).unwrap_or([groups, 0, 0]);
    let mut cache = ForwardCache {
        images: images.to_vec(),
        labels: labels.map(|l| l.to_vec()).unwrap_or_default(),
        orientation,
        masks,
        pre_relu: Vec::with_capacity(items.len()),
        pool_arg: Vec::with_capacity(items.len()),
        pooled_shape,
        features: Vec::with_capacity(items.len()),
        probs,
    };
    let mut scores = Vec::with_capacity(items.len());
    for item in items {
        cache.pre_relu.push(item.pre_relu);
        cache.pool_arg.push(item.arg);
        cache.features.push(item.features);
        scores.push(item.scores);
    }
    Ok((ForwardOutput { scores, loss }, cache))
}

pub(crate) fn backward_with(
    layer: &RotConv,
    cache: &ForwardCache,
    params: &NetworkParams,
) -> Result<Gradients> {
    let batch = cache.images.len();
    if cache.labels.len() != batch {
        return Err(Error::State("backward needs a forward pass with labels".into()));
    }
    if cache.orientation.groups != params.groups() || cache.pooled_shape[0] != params.groups() {
        return Err(Error::State("forward cache does not match the parameters".into()));
    }
    let scale = 1.0 / batch as f64;
    let parts: Vec<Gradients> = (0..batch)
        .into_par_iter()
        .map(|b| {
            let mut dscore = cache.probs[b].clone();
            dscore[cache.labels[b]] -= 1.0;
            dscore.iter_mut().for_each(|v| *v *= scale);
            let (dw, db, dv) = fully_connected_backward(&cache.features[b], &params.fc_weights, &dscore);
            let dpooled = global_avg_pool_backward(&dv, &cache.pooled_shape);
            let pre = &cache.pre_relu[b];
            let dact = spatial_max_pool_backward(&dpooled, &cache.pool_arg[b], pre.shape());
            let dpre = relu_backward(pre, &dact);
            let dmap = apply_group_scale(&dpre, &cache.masks[b]);
            let (canonical, biases) =
                layer.backward_one(&dmap, &cache.orientation.winners[b], &cache.images[b]);
            Gradients {
                canonical,
                biases,
                fc_weights: dw,
                fc_biases: db,
            }
        })
        .collect();
    let mut total = Gradients::zeros_like(params);
    for p in &parts {
        total.add(p);
    }
    Ok(total)
}

/// Filter bank with the default initialization for an architecture.
pub fn init_params<R: Rng>(
    arch: Arch,
    groups: usize,
    orientations: usize,
    size: usize,
    classes: usize,
    grid: PoolGrid,
    rng: &mut R,
) -> Result<NetworkParams> {
    let bank = FilterBank::zeros(arch, groups, orientations, size)?;
    NetworkParams::init(bank, classes, grid, 0.01, rng)
}
