//! Convolutional classifier with hand-written backpropagation.
//!
//! Layout: per-mel-bin input batch norm, then blocks of
//! `conv 3x3 (pad 1) -> batch norm -> ReLU -> average pool`, an optional
//! spectral layer (a convolution spanning the whole remaining mel axis,
//! then batch norm and ReLU), global average pooling over what is left of
//! the time-frequency grid, and an affine head that emits raw logits.
//! Softmax is applied by the techniques, not here.

pub mod layers;
pub mod optim;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::norm::{self, Layout, NormCache, RunningStats};
use crate::rng;
use crate::tensor::Matrix;
use layers::Shape4;

pub use optim::{adam_step, AdamConfig, LrSchedule, OptimizerState};

const TAG_INIT: u64 = 0x1917;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("input has {got} values, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("parameters do not match the architecture")]
    ParamMismatch,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("epoch {epoch} outside schedule 1..={total}")]
    EpochOutOfRange { epoch: usize, total: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub channels: usize,
    /// Average-pool window as (mel, time).
    pub pool: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    pub n_mels: usize,
    pub n_frames: usize,
    pub blocks: Vec<BlockSpec>,
    /// Channels of the full-height spectral layer, if any.
    #[serde(default)]
    pub spectral: Option<usize>,
    pub n_outputs: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Arch {
    pub fn new(n_mels: usize, n_frames: usize, widths: &[usize], n_outputs: usize) -> Self {
        Arch {
            n_mels,
            n_frames,
            blocks: widths.iter().map(|&channels| BlockSpec { channels, pool: [2, 2] }).collect(),
            spectral: None,
            n_outputs,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    /// Two blocks plus the spectral layer, used for the synthetic experiments.
    pub fn desk(n_mels: usize, n_frames: usize, n_outputs: usize) -> Self {
        Arch { spectral: Some(32), ..Self::new(n_mels, n_frames, &[8, 16], n_outputs) }
    }

    /// Two narrow blocks; small enough for finite-difference checks.
    pub fn tiny(n_mels: usize, n_frames: usize, n_outputs: usize) -> Self {
        let mut a = Self::new(n_mels, n_frames, &[3, 4], n_outputs);
        a.blocks[1].pool = [1, 1];
        a.spectral = Some(3);
        a
    }

    /// Grid size entering each block, plus the final grid.
    pub fn grids(&self) -> Result<Vec<(usize, usize)>, ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::InvalidArch(m.into()));
        if self.n_mels == 0 || self.n_frames == 0 {
            return bad("empty input grid");
        }
        if self.n_outputs < 2 {
            return bad("need at least two outputs");
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("bn_eps must be positive and bn_momentum in [0, 1]");
        }
        let mut grid = (self.n_mels, self.n_frames);
        let mut out = vec![grid];
        for (i, b) in self.blocks.iter().enumerate() {
            if b.channels == 0 || b.pool[0] == 0 || b.pool[1] == 0 {
                return Err(ClassifierError::InvalidArch(format!("block {i}: zero channels or pool")));
            }
            grid = (grid.0 / b.pool[0], grid.1 / b.pool[1]);
            if grid.0 == 0 || grid.1 == 0 {
                return Err(ClassifierError::InvalidArch(format!("block {i}: pooling empties the grid")));
            }
            out.push(grid);
        }
        if self.spectral == Some(0) {
            return bad("spectral layer needs channels");
        }
        Ok(out)
    }

    pub fn input_len(&self) -> usize {
        self.n_mels * self.n_frames
    }

    fn channels(&self, block: usize) -> usize {
        if block == 0 {
            1
        } else {
            self.blocks[block - 1].channels
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.spectral.unwrap_or(self.channels(self.blocks.len()))
    }

    /// Mel rows left after the conv blocks.
    fn final_height(&self) -> usize {
        self.blocks.iter().fold(self.n_mels, |h, b| h / b.pool[0])
    }

    pub fn n_params(&self) -> usize {
        let mut n = 2 * self.n_mels;
        for (i, b) in self.blocks.iter().enumerate() {
            n += b.channels * self.channels(i) * 9 + 2 * b.channels;
        }
        if let Some(c) = self.spectral {
            n += c * self.channels(self.blocks.len()) * self.final_height() + 2 * c;
        }
        n + self.n_outputs * (self.embedding_dim() + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named parameter tensors in a fixed order: input norm affine, then per
/// block conv kernel and norm affine, then the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Arch,
    pub tensors: Vec<Tensor>,
}

fn layout_names(arch: &Arch) -> Vec<(String, Vec<usize>)> {
    let mut v = vec![("input_bn.gamma".into(), vec![arch.n_mels]), ("input_bn.beta".into(), vec![arch.n_mels])];
    for (i, b) in arch.blocks.iter().enumerate() {
        v.push((format!("block{i}.conv.weight"), vec![b.channels, arch.channels(i), 3, 3]));
        v.push((format!("block{i}.bn.gamma"), vec![b.channels]));
        v.push((format!("block{i}.bn.beta"), vec![b.channels]));
    }
    if let Some(c) = arch.spectral {
        let c_in = arch.channels(arch.blocks.len());
        v.push(("spectral.weight".into(), vec![c, c_in, arch.final_height(), 1]));
        v.push(("spectral.bn.gamma".into(), vec![c]));
        v.push(("spectral.bn.beta".into(), vec![c]));
    }
    v.push(("head.weight".into(), vec![arch.n_outputs, arch.embedding_dim()]));
    v.push(("head.bias".into(), vec![arch.n_outputs]));
    v
}

/// Fan-in scaled uniform initialization; norm affines start as identity.
pub fn init_params(arch: &Arch, seed: u64) -> Result<ModelParams, ClassifierError> {
    arch.grids()?;
    let tensors = layout_names(arch)
        .into_iter()
        .enumerate()
        .map(|(i, (name, shape))| {
            let len: usize = shape.iter().product();
            let mut r = rng::keyed(seed, &[TAG_INIT, i as u64]);
            let data = if name.ends_with("gamma") {
                vec![1.0; len]
            } else if name.ends_with("beta") || name.ends_with("bias") {
                vec![0.0; len]
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let bound =
                    if name.starts_with("head") { 1.0 / (fan_in as f64).sqrt() } else { (6.0 / fan_in as f64).sqrt() };
                (0..len).map(|_| r.random_range(-bound..bound)).collect()
            };
            Tensor { name, shape, data }
        })
        .collect();
    Ok(ModelParams { arch: arch.clone(), tensors })
}

impl ModelParams {
    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    /// Checks tensor names and shapes against the architecture.
    pub fn check(&self) -> Result<(), ClassifierError> {
        self.arch.grids()?;
        let expected = layout_names(&self.arch);
        let ok = expected.len() == self.tensors.len()
            && expected
                .iter()
                .zip(&self.tensors)
                .all(|((n, s), t)| *n == t.name && *s == t.shape && t.data.len() == s.iter().product::<usize>());
        if ok {
            Ok(())
        } else {
            Err(ClassifierError::ParamMismatch)
        }
    }

    fn block(&self, i: usize) -> (&[f64], &[f64], &[f64]) {
        let b = 2 + 3 * i;
        (&self.tensors[b].data, &self.tensors[b + 1].data, &self.tensors[b + 2].data)
    }

    fn spectral_index(&self) -> usize {
        2 + 3 * self.arch.blocks.len()
    }

    fn head_index(&self) -> usize {
        self.spectral_index() + if self.arch.spectral.is_some() { 3 } else { 0 }
    }

    fn head(&self) -> (&[f64], &[f64]) {
        let h = self.head_index();
        (&self.tensors[h].data, &self.tensors[h + 1].data)
    }
}

/// Per-parameter gradients, aligned with `ModelParams::tensors`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients { tensors: params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect() }
    }

    pub fn norm(&self) -> f64 {
        self.tensors.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Running batch-norm statistics, kept apart from the trained parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnStats {
    pub input: RunningStats,
    pub blocks: Vec<RunningStats>,
    #[serde(default)]
    pub spectral: Option<RunningStats>,
}

impl BnStats {
    pub fn new(arch: &Arch) -> Self {
        BnStats {
            input: RunningStats::new(arch.n_mels),
            blocks: arch.blocks.iter().map(|b| RunningStats::new(b.channels)).collect(),
            spectral: arch.spectral.map(RunningStats::new),
        }
    }
}

struct BlockCache {
    input: Vec<f64>,
    in_shape: Shape4,
    norm: NormCache,
    act: Vec<f64>,
}

/// Activations saved by a train-mode forward pass.
pub struct ForwardCache {
    batch: usize,
    input_norm: NormCache,
    blocks: Vec<BlockCache>,
    spectral: Option<BlockCache>,
    pooled: Matrix,
}

impl ForwardCache {
    /// Globally pooled embeddings `[batch][channels]` fed to the head.
    pub fn embeddings(&self) -> &Matrix {
        &self.pooled
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub params: ModelParams,
    pub stats: BnStats,
}

impl Model {
    pub fn new(arch: &Arch, seed: u64) -> Result<Self, ClassifierError> {
        Ok(Model { params: init_params(arch, seed)?, stats: BnStats::new(arch) })
    }

    pub fn arch(&self) -> &Arch {
        &self.params.arch
    }

    /// Parameter and running-statistics shapes agree with the architecture.
    pub fn check(&self) -> Result<(), ClassifierError> {
        self.params.check()?;
        let arch = self.arch();
        let groups = |s: &RunningStats| (s.mean.len() == s.var.len()).then_some(s.mean.len());
        let ok = groups(&self.stats.input) == Some(arch.n_mels)
            && self.stats.blocks.len() == arch.blocks.len()
            && self.stats.blocks.iter().zip(&arch.blocks).all(|(s, b)| groups(s) == Some(b.channels))
            && self.stats.spectral.as_ref().and_then(groups) == arch.spectral;
        if ok {
            Ok(())
        } else {
            Err(ClassifierError::ParamMismatch)
        }
    }

    fn check_input(&self, x: &[f64], batch: usize) -> Result<(), ClassifierError> {
        let expected = batch * self.arch().input_len();
        if x.len() != expected || batch == 0 {
            return Err(ClassifierError::ShapeMismatch { expected, got: x.len() });
        }
        Ok(())
    }

    /// Eval-mode logits `[batch][n_outputs]` for `x` laid out as
    /// `[batch][mel][frame]`. Rows are independent of each other.
    pub fn forward_eval(&self, x: &[f64], batch: usize) -> Result<Matrix, ClassifierError> {
        self.check_input(x, batch)?;
        self.check()?;
        Ok(self.forward_impl(x, batch, false).0)
    }

    /// Train-mode forward pass using batch statistics; folds them into the
    /// running statistics and returns what `backward` needs.
    pub fn forward_train(&mut self, x: &[f64], batch: usize) -> Result<(Matrix, ForwardCache), ClassifierError> {
        self.check_input(x, batch)?;
        self.check()?;
        let (logits, cache) = self.forward_impl(x, batch, true);
        let cache = cache.expect("train mode keeps a cache");
        let m = self.params.arch.bn_momentum;
        self.stats.input.update(&cache.input_norm.mean, &cache.input_norm.var, m);
        for (s, b) in self.stats.blocks.iter_mut().zip(&cache.blocks) {
            s.update(&b.norm.mean, &b.norm.var, m);
        }
        if let (Some(s), Some(b)) = (&mut self.stats.spectral, &cache.spectral) {
            s.update(&b.norm.mean, &b.norm.var, m);
        }
        Ok((logits, cache))
    }

    fn forward_impl(&self, x: &[f64], batch: usize, train: bool) -> (Matrix, Option<ForwardCache>) {
        let p = &self.params;
        let arch = &p.arch;
        let eps = arch.bn_eps;
        let in_layout = Layout { batch, groups: arch.n_mels, inner: arch.n_frames };
        let (gamma, beta) = (&p.tensors[0].data, &p.tensors[1].data);
        let (mut h, input_norm) = if train {
            let (y, c) = norm::forward_train(x, in_layout, gamma, beta, eps);
            (y, Some(c))
        } else {
            (norm::forward_eval(x, in_layout, gamma, beta, &self.stats.input, eps), None)
        };
        let mut shape = Shape4 { n: batch, c: 1, h: arch.n_mels, w: arch.n_frames };
        let mut caches = Vec::new();
        for (i, spec) in arch.blocks.iter().enumerate() {
            let (w, g, b) = p.block(i);
            let mut y = layers::conv3x3_forward(&h, shape, w, spec.channels);
            let layout = Layout { batch, groups: spec.channels, inner: shape.plane() };
            let norm_cache = if train {
                let (z, c) = norm::forward_train(&y, layout, g, b, eps);
                y = z;
                Some(c)
            } else {
                y = norm::forward_eval(&y, layout, g, b, &self.stats.blocks[i], eps);
                None
            };
            layers::relu_inplace(&mut y);
            let conv_shape = Shape4 { c: spec.channels, ..shape };
            let (pooled, next) = layers::avg_pool_forward(&y, conv_shape, spec.pool[0], spec.pool[1]);
            if let Some(norm) = norm_cache {
                caches.push(BlockCache { input: core::mem::take(&mut h), in_shape: shape, norm, act: y });
            }
            h = pooled;
            shape = next;
        }
        let mut spectral_cache = None;
        if let Some(c) = arch.spectral {
            let si = p.spectral_index();
            let (w, g, b) = (&p.tensors[si].data, &p.tensors[si + 1].data, &p.tensors[si + 2].data);
            let mut y = layers::full_height_forward(&h, shape, w, c);
            let layout = Layout { batch, groups: c, inner: shape.w };
            let norm_cache = if train {
                let (z, nc) = norm::forward_train(&y, layout, g, b, eps);
                y = z;
                Some(nc)
            } else {
                let stats = self.stats.spectral.as_ref().expect("stats match arch");
                y = norm::forward_eval(&y, layout, g, b, stats, eps);
                None
            };
            layers::relu_inplace(&mut y);
            let out_shape = Shape4 { n: batch, c, h: 1, w: shape.w };
            if let Some(norm) = norm_cache {
                spectral_cache = Some(BlockCache { input: h, in_shape: shape, norm, act: y.clone() });
            }
            h = y;
            shape = out_shape;
        }
        let plane = shape.plane() as f64;
        let pooled = Matrix::from_vec(
            batch,
            shape.c,
            h.chunks_exact(shape.plane()).map(|c| c.iter().sum::<f64>() / plane).collect(),
        );
        let (w, bias) = p.head();
        let k = arch.n_outputs;
        let mut logits = Matrix::zeros(batch, k);
        for n in 0..batch {
            let z = pooled.row(n);
            for (j, out) in logits.row_mut(n).iter_mut().enumerate() {
                *out = bias[j] + w[j * shape.c..(j + 1) * shape.c].iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let cache = input_norm.map(|input_norm| ForwardCache {
            batch,
            input_norm,
            blocks: caches,
            spectral: spectral_cache,
            pooled,
        });
        (logits, cache)
    }

    /// Gradients of a scalar loss given its gradient with respect to the
    /// logits of the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Matrix) -> Result<Gradients, ClassifierError> {
        let p = &self.params;
        let arch = &p.arch;
        if dlogits.rows != cache.batch || dlogits.cols != arch.n_outputs {
            return Err(ClassifierError::ShapeMismatch {
                expected: cache.batch * arch.n_outputs,
                got: dlogits.data.len(),
            });
        }
        if !dlogits.data.iter().all(|v| v.is_finite()) {
            return Err(ClassifierError::NonFiniteGradient);
        }
        let mut grads = Gradients::zeros_like(p);
        let nb = arch.blocks.len();
        let c = arch.embedding_dim();
        let (w, _) = p.head();
        let mut dz = Matrix::zeros(cache.batch, c);
        {
            let (gw, rest) = grads.tensors[p.head_index()..].split_at_mut(1);
            let (gw, gb) = (&mut gw[0], &mut rest[0]);
            for n in 0..cache.batch {
                let z = cache.pooled.row(n);
                let dl = dlogits.row(n);
                let dzr = dz.row_mut(n);
                for (j, &d) in dl.iter().enumerate() {
                    gb[j] += d;
                    for ci in 0..c {
                        gw[j * c + ci] += d * z[ci];
                        dzr[ci] += d * w[j * c + ci];
                    }
                }
            }
        }
        let grids = arch.grids()?;
        let (fh, fw) = grids[nb];
        let plane = if arch.spectral.is_some() { fw } else { fh * fw };
        let mut dh: Vec<f64> = dz.data.iter().flat_map(|&d| core::iter::repeat_n(d / plane as f64, plane)).collect();
        if let (Some(c), Some(sc)) = (arch.spectral, &cache.spectral) {
            let si = p.spectral_index();
            layers::relu_backward_inplace(&mut dh, &sc.act);
            let (dy, dgamma, dbeta) = norm::backward(&dh, &sc.norm, &p.tensors[si + 1].data);
            let (dx, dw) = layers::full_height_backward(&sc.input, sc.in_shape, &p.tensors[si].data, c, &dy);
            grads.tensors[si] = dw;
            grads.tensors[si + 1] = dgamma;
            grads.tensors[si + 2] = dbeta;
            dh = dx;
        }
        for i in (0..nb).rev() {
            let spec = &arch.blocks[i];
            let bc = &cache.blocks[i];
            let conv_shape = Shape4 { c: spec.channels, ..bc.in_shape };
            let mut dact = layers::avg_pool_backward(&dh, conv_shape, spec.pool[0], spec.pool[1]);
            layers::relu_backward_inplace(&mut dact, &bc.act);
            let (wt, gamma, _) = p.block(i);
            let (dy, dgamma, dbeta) = norm::backward(&dact, &bc.norm, gamma);
            let (dx, dw) = layers::conv3x3_backward(&bc.input, bc.in_shape, wt, spec.channels, &dy);
            grads.tensors[2 + 3 * i] = dw;
            grads.tensors[3 + 3 * i] = dgamma;
            grads.tensors[4 + 3 * i] = dbeta;
            dh = dx;
        }
        let (_, dgamma, dbeta) = norm::backward(&dh, &cache.input_norm, &p.tensors[0].data);
        grads.tensors[0] = dgamma;
        grads.tensors[1] = dbeta;
        Ok(grads)
    }
}

/// Where finite differences disagree most with the analytic gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub tensor: String,
    pub index: usize,
}

/// Compares every analytic gradient of `loss(logits)` (train-mode forward)
/// against a central finite difference with step `eps`. `loss` returns the
/// value and its gradient with respect to the logits.
pub fn grad_check(
    model: &Model,
    x: &[f64],
    batch: usize,
    loss: impl Fn(&Matrix) -> (f64, Matrix),
    eps: f64,
) -> Result<GradCheck, ClassifierError> {
    let mut m = model.clone();
    let (logits, cache) = m.forward_train(x, batch)?;
    let (_, dl) = loss(&logits);
    let grads = m.backward(&cache, &dl)?;
    let mut worst = GradCheck { max_rel_error: 0.0, tensor: String::new(), index: 0 };
    let mut probe = model.clone();
    for (ti, g) in grads.tensors.iter().enumerate() {
        for (j, &analytic) in g.iter().enumerate() {
            let orig = probe.params.tensors[ti].data[j];
            let mut eval = |v: f64| -> Result<f64, ClassifierError> {
                probe.params.tensors[ti].data[j] = v;
                let (lg, _) = probe.forward_train(x, batch)?;
                Ok(loss(&lg).0)
            };
            let numeric = (eval(orig + eps)? - eval(orig - eps)?) / (2.0 * eps);
            probe.params.tensors[ti].data[j] = orig;
            let diff = (analytic - numeric).abs();
            let rel = if diff == 0.0 { 0.0 } else { diff / analytic.abs().max(numeric.abs()).max(1e-6) };
            if rel > worst.max_rel_error {
                worst = GradCheck { max_rel_error: rel, tensor: probe.params.tensors[ti].name.clone(), index: j };
            }
        }
    }
    Ok(worst)
}
