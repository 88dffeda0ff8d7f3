//! Adam optimization with a step-decayed learning rate, class-balanced batch
//! sampling and ensemble training on random subsets of the sample tiles.

mod dataset;

pub use dataset::{extract_patches, Sample, TrainingSet, CLASS_NAMES, NUM_CLASSES};

use std::io::Write;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{l2_penalty, masked_cross_entropy, Mode, Scalar, Tensor};
use crate::unet::{UNet, UNetConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub decay_interval: u64,
    /// Multiplier applied at every decay boundary.
    pub decay_factor: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub ensemble_size: usize,
    /// Fraction of the sample tiles each ensemble member trains on.
    pub subset_fraction: f64,
    pub seed: u64,
    /// Record the loss every this many steps (the last step is always recorded).
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 100_000,
            batch_size: 25,
            initial_lr: 0.001,
            decay_interval: 25_000,
            decay_factor: 0.4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.001,
            ensemble_size: 10,
            subset_fraction: 0.8,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size as f64),
            ("initial_lr", self.initial_lr),
            ("decay_interval", self.decay_interval as f64),
            ("adam_eps", self.adam_eps),
            ("ensemble_size", self.ensemble_size as f64),
            ("log_every", self.log_every as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Invalid(format!(
                "decay_factor must be in (0, 1], got {}",
                self.decay_factor
            )));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Invalid(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Invalid(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return Err(Error::Invalid(format!(
                "subset_fraction must be in (0, 1], got {}",
                self.subset_fraction
            )));
        }
        Ok(())
    }
}

/// `initial_lr · decay_factor^⌊step / decay_interval⌋`.
pub fn lr_schedule(step: u64, config: &TrainConfig) -> f64 {
    let k = step / config.decay_interval.max(1);
    config.initial_lr * config.decay_factor.powi(k.min(i32::MAX as u64) as i32)
}

/// Adam moment estimates, one `f64` buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    names: Vec<String>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// Zeroed moments for tensors of the given names and sizes.
    pub fn new(beta1: f64, beta2: f64, eps: f64, tensors: &[(String, usize)]) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            names: tensors.iter().map(|(n, _)| n.clone()).collect(),
            m: tensors.iter().map(|&(_, len)| vec![0.0; len]).collect(),
            v: tensors.iter().map(|&(_, len)| vec![0.0; len]).collect(),
        }
    }

    pub fn from_config(config: &TrainConfig, tensors: &[(String, usize)]) -> Self {
        Adam::new(config.adam_beta1, config.adam_beta2, config.adam_eps, tensors)
    }

    /// One bias-corrected Adam update with learning rate `lr`.
    ///
    /// Nothing is modified if any gradient is non-finite.
    pub fn update<T: Scalar>(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "optimizer tracks {} tensors, got {} params and {} gradients",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("tensor {} size changed", self.names[i]),
                ));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite {
                    what: format!("gradient of {}", self.names[i]),
                });
            }
        }
        self.step += 1;
        let t = self.step.min(i32::MAX as u64) as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gj = gj.to_f64();
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w = T::from_f64(w.to_f64() - lr * m_hat / (v_hat.sqrt() + self.eps));
            }
        }
        Ok(())
    }
}

/// Round-robin class-balanced tile sampler.
///
/// Classes are visited in the order irrigated, unirrigated, uncultivated; the
/// cursor carries over between batches so long-run class frequencies are
/// exactly balanced.
#[derive(Clone, Debug)]
pub struct BalancedSampler {
    pools: [Vec<usize>; NUM_CLASSES],
    next_class: usize,
}

impl BalancedSampler {
    pub fn new(dataset: &TrainingSet) -> Result<Self> {
        let mut pools: [Vec<usize>; NUM_CLASSES] = Default::default();
        for (i, s) in dataset.samples().enumerate() {
            if let Some(k) = s.dominant_class() {
                pools[k].push(i);
            }
        }
        let missing: Vec<&str> = (0..NUM_CLASSES)
            .filter(|&k| pools[k].is_empty())
            .map(|k| CLASS_NAMES[k])
            .collect();
        if !missing.is_empty() {
            return Err(Error::EmptyClass(missing.join(", ")));
        }
        Ok(BalancedSampler { pools, next_class: 0 })
    }

    /// Indices of `batch_size` tiles into the dataset.
    pub fn next_batch<R: Rng>(&mut self, batch_size: usize, rng: &mut R) -> Vec<usize> {
        (0..batch_size)
            .map(|_| {
                let pool = &self.pools[self.next_class];
                self.next_class = (self.next_class + 1) % NUM_CLASSES;
                pool[rng.random_range(0..pool.len())]
            })
            .collect()
    }
}

/// One row of the loss trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossRecord {
    pub step: u64,
    pub lr: f64,
    /// Cross-entropy plus the weight-decay term.
    pub loss: f64,
    pub irrigated: u64,
    pub unirrigated: u64,
    pub uncultivated: u64,
}

pub fn write_loss_csv<W: Write>(w: W, trace: &[LossRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in trace {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("<loss trace>", e))
}

fn sampler_rng(model_seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(model_seed);
    // stream 0 is the weight initializer
    rng.set_stream(1);
    rng
}

/// Trains one model from scratch; `model_seed` replaces `model_config.seed`
/// and also seeds the batch sampler.
pub fn train_model(
    dataset: &TrainingSet,
    model_config: &UNetConfig,
    config: &TrainConfig,
    model_seed: u64,
) -> Result<(UNet, Vec<LossRecord>)> {
    config.validate()?;
    let mut mc = model_config.clone();
    mc.seed = model_seed;
    mc.weight_decay = config.weight_decay;
    let mut model = UNet::<f32>::build(&mc)?;
    if config.total_steps == 0 {
        return Ok((model, Vec::new()));
    }
    dataset.check_compatible(&mc)?;
    let mut sampler = BalancedSampler::new(dataset)?;
    let mut rng = sampler_rng(model_seed);
    let names = model.param_names();
    let sizes: Vec<(String, usize)> = names
        .iter()
        .cloned()
        .zip(model.params().iter().map(|t| t.len()))
        .collect();
    let mut adam = Adam::from_config(config, &sizes);
    let decay = model.decay_mask();
    let mut trace = Vec::new();

    for step in 0..config.total_steps {
        let lr = lr_schedule(step, config);
        let idx = sampler.next_batch(config.batch_size, &mut rng);
        let (x, labels, counts) = dataset.batch(&idx)?;
        let (probs, cache) = model.forward(&x, Mode::Train)?;
        let cache = cache.expect("train mode returns a cache");
        let (ce, d_logits) = masked_cross_entropy(&probs, &labels, None)?;
        let (penalty, decay_grads) = l2_penalty(&model.filters(), config.weight_decay)?;
        let loss = ce + penalty;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: format!("training loss at step {step}"),
            });
        }
        let mut grads = model.backward(&cache, &d_logits)?;
        let mut decay_grads = decay_grads.into_iter();
        for (g, &decays) in grads.iter_mut().zip(&decay) {
            if decays {
                let dg = decay_grads.next().expect("one decay gradient per filter");
                for (a, &b) in g.data_mut().iter_mut().zip(dg.data()) {
                    *a += b;
                }
            }
        }
        adam.update(&mut model.params_mut(), &grads, lr)?;

        if step % config.log_every == 0 || step + 1 == config.total_steps {
            log::debug!("seed {model_seed} step {step} lr {lr:.3e} loss {loss:.5}");
            trace.push(LossRecord {
                step,
                lr,
                loss,
                irrigated: counts[0],
                unirrigated: counts[1],
                uncultivated: counts[2],
            });
        }
    }
    Ok((model, trace))
}

/// Sorted tile indices for ensemble member `member` (1-based).
pub fn member_subset(dataset: &TrainingSet, config: &TrainConfig, member: u64) -> Vec<usize> {
    let n = dataset.len();
    let take = ((config.subset_fraction * n as f64).round() as usize).clamp(1.min(n), n);
    if take == n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(member));
    let mut idx = sample_indices(&mut rng, n, take).into_vec();
    idx.sort_unstable();
    idx
}

type Trained = (UNet, Vec<LossRecord>);

/// Trains `ensemble_size` models; member `k` (1-based) uses seed `seed + k`
/// for its tile subset, weights and batch order.
///
/// Members run on separate threads when `parallel` is set; results do not
/// depend on scheduling.
pub fn train_ensemble(
    dataset: &TrainingSet,
    model_config: &UNetConfig,
    config: &TrainConfig,
    parallel: bool,
) -> Result<Vec<(UNet, Vec<LossRecord>)>> {
    config.validate()?;
    let members: Vec<u64> = (1..=config.ensemble_size as u64).collect();
    let run = |k: u64| -> Result<(UNet, Vec<LossRecord>)> {
        let subset = dataset.subset(&member_subset(dataset, config, k));
        BalancedSampler::new(&subset)?;
        log::info!("training ensemble member {k} on {} tiles", subset.len());
        train_model(&subset, model_config, config, config.seed.wrapping_add(k))
    };
    if !parallel || members.len() == 1 {
        return members.into_iter().map(run).collect();
    }
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(members.len());
    let mut results: Vec<Option<Result<Trained>>> = (0..members.len()).map(|_| None).collect();
    for chunk in members.chunks(workers) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|&k| (k, s.spawn(move || run(k)))).collect();
            for (k, h) in handles {
                let r = h
                    .join()
                    .unwrap_or_else(|_| Err(Error::Invalid(format!("ensemble member {k} panicked"))));
                results[(k - 1) as usize] = Some(r);
            }
        });
    }
    results.into_iter().map(|r| r.expect("every member ran")).collect()
}
