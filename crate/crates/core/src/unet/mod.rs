//! The segmentation network: a U-Net with zero-padded 3×3 convolutions,
//! batch normalization, nearest-neighbour upsampling and a softmax head.

mod store;

pub use store::{
    load_params, read_params, save_params, write_params, ModelHeader, ParamStore, MODEL_MAGIC, MODEL_VERSION,
};

use crate::error::{Error, Result};
use crate::tensor::{
    batchnorm_backward, batchnorm_forward, batchnorm_infer, concat_channels, conv2d_backward, conv2d_forward,
    maxpool2_backward, maxpool2_forward, relu_backward, relu_forward, softmax_channels, split_channels,
    upsample2_backward, upsample2_forward, BatchNormCache, BatchNormState, ConvFilter, Mode, PoolIndices, Scalar,
    Shape, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_filters: usize,
    /// Number of max-pool stages.
    pub depth: usize,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_weight_decay() -> f64 {
    0.001
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            in_channels: 36,
            num_classes: 3,
            base_filters: 32,
            depth: 4,
            weight_decay: default_weight_decay(),
            seed: 0,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.num_classes == 0 {
            return Err(Error::Invalid("in_channels and num_classes must be >= 1".into()));
        }
        if self.base_filters == 0 {
            return Err(Error::Invalid("base_filters must be >= 1".into()));
        }
        if self.depth == 0 || self.depth > 16 {
            return Err(Error::Invalid(format!("depth must be in 1..=16, got {}", self.depth)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Invalid(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }

    /// Filters at resolution level `level` (0 = full resolution).
    pub fn filters(&self, level: usize) -> usize {
        self.base_filters << level
    }

    /// Tile height and width must be multiples of this.
    pub fn tile_multiple(&self) -> usize {
        1 << self.depth
    }

    /// Exact half-width, in input pixels, of the region an output pixel depends on.
    ///
    /// Found by pulling the dependency interval of a single output pixel back
    /// through every layer, for each alignment of that pixel on the pooling lattice.
    pub fn receptive_radius(&self) -> usize {
        let d = self.depth as i64;
        (0..1i64 << d)
            .map(|x| {
                let (lo, hi) = dependency_hull(d, (x, x));
                (x - lo).max(hi - x) as usize
            })
            .max()
            .unwrap_or(0)
    }

    /// Smallest valid overlap for tiled inference: the receptive radius rounded
    /// up to a multiple of `2^depth` so tile origins stay on the pooling lattice.
    pub fn min_overlap(&self) -> usize {
        let m = self.tile_multiple();
        self.receptive_radius().div_ceil(m) * m
    }

    pub fn check_input(&self, shape: Shape) -> Result<()> {
        if shape.c != self.in_channels {
            return Err(Error::shape(
                "unet_forward",
                format!(
                    "input has {} channels but the model expects in_channels = {}",
                    shape.c, self.in_channels
                ),
            ));
        }
        let m = self.tile_multiple();
        if !shape.h.is_multiple_of(m) || !shape.w.is_multiple_of(m) || shape.h == 0 || shape.w == 0 {
            return Err(Error::shape(
                "unet_forward",
                format!(
                    "input is {}x{} but height and width must be positive multiples of {m} (2^depth)",
                    shape.h, shape.w
                ),
            ));
        }
        Ok(())
    }
}

/// Input-pixel hull feeding the level-0 decoder output interval `out`.
fn dependency_hull(depth: i64, out: (i64, i64)) -> (i64, i64) {
    // encoder output interval at `level` (pre-pool) back to input pixels
    fn encoder(level: i64, (lo, hi): (i64, i64)) -> (i64, i64) {
        let (lo, hi) = (lo - 2, hi + 2);
        if level == 0 {
            (lo, hi)
        } else {
            encoder(level - 1, (2 * lo, 2 * hi + 1))
        }
    }
    // decoder output interval at `level` back to input pixels
    fn decoder(depth: i64, level: i64, (lo, hi): (i64, i64)) -> (i64, i64) {
        let (lo, hi) = (lo - 2, hi + 2);
        if level == depth {
            return encoder(level - 1, (2 * lo, 2 * hi + 1));
        }
        let skip = encoder(level, (lo, hi));
        let up = decoder(depth, level + 1, (lo.div_euclid(2), hi.div_euclid(2)));
        (skip.0.min(up.0), skip.1.max(up.1))
    }
    decoder(depth, 0, out)
}

/// Convolution followed by batch normalization and ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock<T: Scalar = f32> {
    pub conv: ConvFilter<T>,
    pub bn: BatchNormState<T>,
}

struct BlockCache<T: Scalar> {
    input: Tensor<T>,
    bn: BatchNormCache<T>,
    normalized: Tensor<T>,
}

impl<T: Scalar> ConvBlock<T> {
    fn new(in_channels: usize, out_channels: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(ConvBlock {
            conv: he_uniform(out_channels, in_channels, 3, rng)?,
            bn: BatchNormState::new(out_channels),
        })
    }

    fn forward_train(&mut self, input: Tensor<T>) -> Result<(Tensor<T>, BlockCache<T>)> {
        let z = conv2d_forward(&input, &self.conv)?;
        let (normalized, cache) = batchnorm_forward(&z, &mut self.bn, Mode::Train)?;
        let out = relu_forward(&normalized);
        let bn = cache.expect("train mode returns a cache");
        Ok((out, BlockCache { input, bn, normalized }))
    }

    fn forward_infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let z = conv2d_forward(input, &self.conv)?;
        Ok(relu_forward(&batchnorm_infer(&z, &self.bn)?))
    }

    /// Returns the input gradient; parameter gradients are appended to `grads`
    /// as weight, bias, gamma, beta.
    fn backward(&self, cache: &BlockCache<T>, upstream: &Tensor<T>, grads: &mut Vec<Tensor<T>>) -> Result<Tensor<T>> {
        let d_norm = relu_backward(&cache.normalized, upstream)?;
        let bn = batchnorm_backward(&cache.bn, &self.bn, &d_norm)?;
        let conv = conv2d_backward(&cache.input, &self.conv, &bn.input)?;
        grads.extend([conv.weight, conv.bias, bn.gamma, bn.beta]);
        Ok(conv.input)
    }
}

fn he_uniform<T: Scalar>(
    out_channels: usize,
    in_channels: usize,
    kernel: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ConvFilter<T>> {
    let fan_in = (in_channels * kernel * kernel) as f64;
    let limit = (6.0 / fan_in).sqrt();
    let shape = Shape::new(out_channels, in_channels, kernel, kernel);
    let weights = (0..shape.len())
        .map(|_| T::from_f64(rng.random_range(-limit..limit)))
        .collect();
    ConvFilter::new(
        Tensor::from_vec(shape, weights)?,
        Tensor::vector(vec![T::ZERO; out_channels]),
    )
}

/// U-Net weights and batch-norm state.
///
/// Blocks are stored in forward order: two per encoder level (0 first), two
/// for the bottleneck, two per decoder level (deepest first), then the 1×1
/// head. [`UNet::param_names`] and [`UNet::params`] follow the same order.
#[derive(Clone, Debug, PartialEq)]
pub struct UNet<T: Scalar = f32> {
    config: UNetConfig,
    blocks: Vec<ConvBlock<T>>,
    head: ConvFilter<T>,
}

/// Activations kept by a train-mode forward pass for [`UNet::backward`].
pub struct ForwardCache<T: Scalar = f32> {
    blocks: Vec<BlockCache<T>>,
    pools: Vec<PoolIndices>,
    up_channels: Vec<usize>,
    head_input: Tensor<T>,
}

impl<T: Scalar> UNet<T> {
    /// Fresh model with He-uniform weights drawn from `config.seed`, zero
    /// biases, unit gamma and zero beta.
    pub fn build(config: &UNetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.depth;
        let mut blocks = Vec::with_capacity(4 * d + 2);
        let mut prev = config.in_channels;
        for level in 0..=d {
            let f = config.filters(level);
            blocks.push(ConvBlock::new(prev, f, &mut rng)?);
            blocks.push(ConvBlock::new(f, f, &mut rng)?);
            prev = f;
        }
        for level in (0..d).rev() {
            let f = config.filters(level);
            blocks.push(ConvBlock::new(prev + f, f, &mut rng)?);
            blocks.push(ConvBlock::new(f, f, &mut rng)?);
            prev = f;
        }
        let head = he_uniform(config.num_classes, prev, 1, &mut rng)?;
        Ok(UNet {
            config: config.clone(),
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[ConvBlock<T>] {
        &self.blocks
    }

    pub fn head(&self) -> &ConvFilter<T> {
        &self.head
    }

    /// Number of learnable scalars: convolution weights and biases plus
    /// batch-norm gamma and beta. Running statistics are not counted.
    pub fn param_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.conv.param_count() + b.bn.param_count())
            .sum::<usize>()
            + self.head.param_count()
    }

    fn block_name(&self, i: usize) -> String {
        let d = self.config.depth;
        let (stage, sub) = (i / 2, if i.is_multiple_of(2) { "a" } else { "b" });
        if stage < d {
            format!("enc{stage}.{sub}")
        } else if stage == d {
            format!("mid.{sub}")
        } else {
            format!("dec{}.{sub}", 2 * d - stage)
        }
    }

    /// Names of the learnable tensors, in [`UNet::params`] order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(4 * self.blocks.len() + 2);
        for i in 0..self.blocks.len() {
            let b = self.block_name(i);
            for p in ["conv.weight", "conv.bias", "bn.gamma", "bn.beta"] {
                names.push(format!("{b}.{p}"));
            }
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::with_capacity(4 * self.blocks.len() + 2);
        for b in &self.blocks {
            out.extend([&b.conv.weight, &b.conv.bias, &b.bn.gamma, &b.bn.beta]);
        }
        out.extend([&self.head.weight, &self.head.bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::with_capacity(4 * self.blocks.len() + 2);
        for b in &mut self.blocks {
            out.extend([&mut b.conv.weight, &mut b.conv.bias, &mut b.bn.gamma, &mut b.bn.beta]);
        }
        out.extend([&mut self.head.weight, &mut self.head.bias]);
        out
    }

    /// Whether each entry of [`UNet::params`] is a convolution weight (the
    /// tensors weight decay applies to).
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(4 * self.blocks.len() + 2);
        for _ in &self.blocks {
            out.extend([true, false, false, false]);
        }
        out.extend([true, false]);
        out
    }

    /// All convolution filters, blocks first then the head.
    pub fn filters(&self) -> Vec<&ConvFilter<T>> {
        let mut out: Vec<_> = self.blocks.iter().map(|b| &b.conv).collect();
        out.push(&self.head);
        out
    }

    pub fn cast<U: Scalar>(&self) -> UNet<U> {
        UNet {
            config: self.config.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| ConvBlock {
                    conv: b.conv.cast(),
                    bn: b.bn.cast(),
                })
                .collect(),
            head: self.head.cast(),
        }
    }

    /// Class probabilities `(n, num_classes, h, w)`.
    ///
    /// Train mode normalizes with batch statistics, updates the running
    /// statistics and returns the cache needed by [`UNet::backward`].
    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Option<ForwardCache<T>>)> {
        match mode {
            Mode::Infer => Ok((self.predict(input)?, None)),
            Mode::Train => {
                let (probs, cache) = self.forward_train(input)?;
                Ok((probs, Some(cache)))
            }
        }
    }

    /// Infer-mode forward pass using the running batch-norm statistics.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.config.check_input(input.shape())?;
        let d = self.config.depth;
        let mut skips = Vec::with_capacity(d);
        let mut x = input.clone();
        for level in 0..d {
            x = self.blocks[2 * level].forward_infer(&x)?;
            x = self.blocks[2 * level + 1].forward_infer(&x)?;
            let (pooled, _) = maxpool2_forward(&x)?;
            skips.push(x);
            x = pooled;
        }
        x = self.blocks[2 * d].forward_infer(&x)?;
        x = self.blocks[2 * d + 1].forward_infer(&x)?;
        for j in 0..d {
            let skip = skips.pop().expect("one skip per level");
            x = concat_channels(&upsample2_forward(&x), &skip)?;
            x = self.blocks[2 * d + 2 + 2 * j].forward_infer(&x)?;
            x = self.blocks[2 * d + 3 + 2 * j].forward_infer(&x)?;
        }
        Ok(softmax_channels(&conv2d_forward(&x, &self.head)?))
    }

    fn forward_train(&mut self, input: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.config.check_input(input.shape())?;
        let d = self.config.depth;
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut pools = Vec::with_capacity(d);
        let mut skips = Vec::with_capacity(d);
        let mut up_channels = Vec::with_capacity(d);
        let mut x = input.clone();
        for level in 0..d {
            for i in [2 * level, 2 * level + 1] {
                let (y, c) = self.blocks[i].forward_train(x)?;
                caches.push(c);
                x = y;
            }
            let (pooled, idx) = maxpool2_forward(&x)?;
            pools.push(idx);
            skips.push(x);
            x = pooled;
        }
        for i in [2 * d, 2 * d + 1] {
            let (y, c) = self.blocks[i].forward_train(x)?;
            caches.push(c);
            x = y;
        }
        for j in 0..d {
            let skip = skips.pop().expect("one skip per level");
            up_channels.push(x.shape().c);
            x = concat_channels(&upsample2_forward(&x), &skip)?;
            for i in [2 * d + 2 + 2 * j, 2 * d + 3 + 2 * j] {
                let (y, c) = self.blocks[i].forward_train(x)?;
                caches.push(c);
                x = y;
            }
        }
        let probs = softmax_channels(&conv2d_forward(&x, &self.head)?);
        Ok((
            probs,
            ForwardCache {
                blocks: caches,
                pools,
                up_channels,
                head_input: x,
            },
        ))
    }

    /// Parameter gradients, in [`UNet::params`] order, given the gradient of
    /// the loss with respect to the head's logits (the pre-softmax output).
    pub fn backward(&self, cache: &ForwardCache<T>, d_logits: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let d = self.config.depth;
        let nb = self.blocks.len();
        // collected back to front, four per block, then reversed per block
        let mut per_block: Vec<Vec<Tensor<T>>> = (0..nb).map(|_| Vec::new()).collect();

        let head = conv2d_backward(&cache.head_input, &self.head, d_logits)?;
        let mut dx = head.input;
        let mut skip_grads: Vec<Option<Tensor<T>>> = (0..d).map(|_| None).collect();
        for j in (0..d).rev() {
            for i in [2 * d + 3 + 2 * j, 2 * d + 2 + 2 * j] {
                dx = self.blocks[i].backward(&cache.blocks[i], &dx, &mut per_block[i])?;
            }
            let (d_up, d_skip) = split_channels(&dx, cache.up_channels[j])?;
            skip_grads[d - 1 - j] = Some(d_skip);
            dx = upsample2_backward(&d_up)?;
        }
        for i in [2 * d + 1, 2 * d] {
            dx = self.blocks[i].backward(&cache.blocks[i], &dx, &mut per_block[i])?;
        }
        for level in (0..d).rev() {
            dx = maxpool2_backward(&cache.pools[level], &dx)?;
            let skip = skip_grads[level].take().expect("skip gradient recorded");
            for (a, &b) in dx.data_mut().iter_mut().zip(skip.data()) {
                *a = T::from_f64(a.to_f64() + b.to_f64());
            }
            for i in [2 * level + 1, 2 * level] {
                dx = self.blocks[i].backward(&cache.blocks[i], &dx, &mut per_block[i])?;
            }
        }

        let mut grads = Vec::with_capacity(4 * nb + 2);
        for g in per_block {
            grads.extend(g);
        }
        grads.push(head.weight);
        grads.push(head.bias);
        Ok(grads)
    }

    /// Snapshot of every tensor needed to rebuild the model, including
    /// batch-norm running statistics.
    pub fn to_store(&self) -> ParamStore {
        let mut store = ParamStore::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let name = self.block_name(i);
            store.push(format!("{name}.conv.weight"), b.conv.weight.cast());
            store.push(format!("{name}.conv.bias"), b.conv.bias.cast());
            store.push(format!("{name}.bn.gamma"), b.bn.gamma.cast());
            store.push(format!("{name}.bn.beta"), b.bn.beta.cast());
            store.push(format!("{name}.bn.running_mean"), stat_tensor(&b.bn.running_mean));
            store.push(format!("{name}.bn.running_var"), stat_tensor(&b.bn.running_var));
            store.push(format!("{name}.bn.tracked"), store::encode_u64(b.bn.tracked));
        }
        store.push("head.weight".into(), self.head.weight.cast());
        store.push("head.bias".into(), self.head.bias.cast());
        store
    }

    /// Rebuilds a model from `config` and a store written by [`UNet::to_store`].
    pub fn from_store(config: &UNetConfig, store: &ParamStore) -> Result<Self> {
        let mut model = UNet::<T>::build(config)?;
        for i in 0..model.blocks.len() {
            let name = model.block_name(i);
            let b = &mut model.blocks[i];
            load_into(store, &format!("{name}.conv.weight"), &mut b.conv.weight)?;
            load_into(store, &format!("{name}.conv.bias"), &mut b.conv.bias)?;
            load_into(store, &format!("{name}.bn.gamma"), &mut b.bn.gamma)?;
            load_into(store, &format!("{name}.bn.beta"), &mut b.bn.beta)?;
            load_stats(store, &format!("{name}.bn.running_mean"), &mut b.bn.running_mean)?;
            load_stats(store, &format!("{name}.bn.running_var"), &mut b.bn.running_var)?;
            b.bn.tracked = store::decode_u64(store.require(&format!("{name}.bn.tracked"))?)?;
        }
        load_into(store, "head.weight", &mut model.head.weight)?;
        load_into(store, "head.bias", &mut model.head.bias)?;
        let expected = model.to_store();
        if expected.len() != store.len() {
            return Err(Error::Invalid(format!(
                "parameter file has {} tensors, model needs {}",
                store.len(),
                expected.len()
            )));
        }
        Ok(model)
    }

    /// Marks every batch-norm layer as tracked without changing its running
    /// statistics, so infer mode can run on a fresh model (statistics are
    /// then the initial mean 0 / variance 1).
    pub fn assume_tracked(&mut self) {
        for b in &mut self.blocks {
            b.bn.tracked = b.bn.tracked.max(1);
        }
    }
}

fn stat_tensor<T: Scalar>(v: &[T]) -> Tensor {
    Tensor::vector(v.iter().map(|&x| x.to_f64() as f32).collect())
}

fn load_into<T: Scalar>(store: &ParamStore, name: &str, dst: &mut Tensor<T>) -> Result<()> {
    let src = store.require(name)?;
    if src.shape() != dst.shape() {
        return Err(Error::shape(
            "load_params",
            format!("tensor {name} is {} but the model needs {}", src.shape(), dst.shape()),
        ));
    }
    *dst = src.cast();
    Ok(())
}

fn load_stats<T: Scalar>(store: &ParamStore, name: &str, dst: &mut [T]) -> Result<()> {
    let src = store.require(name)?;
    if src.len() != dst.len() {
        return Err(Error::shape(
            "load_params",
            format!("{name} has {} values, the model needs {}", src.len(), dst.len()),
        ));
    }
    for (d, &s) in dst.iter_mut().zip(src.data()) {
        *d = T::from_f64(s as f64);
    }
    Ok(())
}
