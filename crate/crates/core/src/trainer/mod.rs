//! Adam training loop with deterministic shuffling, checkpoints and the
//! penalty-weight sweep.

mod checkpoint;
mod sweep;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{ModelDims, ModelParams, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::losses::{
    tier_loss_and_gradients, LossBreakdown, Objective, PairRef, PenaltyAveraging, TierConfig,
};
use crate::numerics::{Scalar, Tensor};
use crate::synth_data::SyntheticSample;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use sweep::{default_grid, sweep, SweepCell, SweepResult};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 penalty added to the gradient; zero disables it.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_p: f64,
    pub lambda_t: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds both the initialization and the per-epoch shuffle.
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    /// Save a checkpoint every this many epochs; zero saves only the last.
    pub checkpoint_every: usize,
    pub averaging: PenaltyAveraging,
    pub cls_in_penalty: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let tier = TierConfig::default();
        Self {
            lambda_p: tier.lambda_p,
            lambda_t: tier.lambda_t,
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            dataset: None,
            checkpoint_every: 0,
            averaging: tier.averaging,
            cls_in_penalty: tier.cls_in_penalty,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(a.epsilon > 0.0 && a.weight_decay >= 0.0) {
            return Err(Error::Config(
                "Adam epsilon must be positive and decay non-negative".into(),
            ));
        }
        self.tier().validate()
    }

    pub fn tier(&self) -> TierConfig {
        TierConfig {
            lambda_p: self.lambda_p,
            lambda_t: self.lambda_t,
            averaging: self.averaging,
            cls_in_penalty: self.cls_in_penalty,
        }
    }

    /// The optimized objective: contrastive loss plus weighted penalties.
    pub fn objective(&self) -> Objective {
        Objective::Tier(self.tier())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F> {
    pub config: AdamConfig,
    /// Updates applied so far.
    pub step: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(config: AdamConfig, params: &ModelParams<F>) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape().to_vec()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, params: &mut ModelParams<F>, grads: &[Tensor<F>], lr: f64) {
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let bias1 = F::lit(1.0 - c.beta1.powf(self.step as f64));
        let bias2 = F::lit(1.0 - c.beta2.powf(self.step as f64));
        let (lr, eps, wd) = (F::lit(lr), F::lit(c.epsilon), F::lit(c.weight_decay));
        let one = F::one();
        for (i, p) in params.tensors_mut().into_iter().enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, (w, &g)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                let g = if c.weight_decay > 0.0 { g + wd * *w } else { g };
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    /// Global optimizer step, starting at 1.
    pub step: u64,
    pub batch: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Step-weighted mean of each component.
    pub mean: LossBreakdown,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<F> {
    pub config: TrainConfig,
    pub params: ModelParams<F>,
    pub optimizer: Adam<F>,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl<F: Scalar> Checkpoint<F> {
    /// Freshly initialized parameters and optimizer state.
    pub fn initial(config: TrainConfig, dims: ModelDims) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(config.seed, dims)?;
        let optimizer = Adam::new(config.adam, &params);
        Ok(Self {
            config,
            params,
            optimizer,
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn ensure_dims(&self, dims: &ModelDims) -> Result<()> {
        if self.params.dims != *dims {
            return Err(Error::Config(format!(
                "checkpoint dims {:?} do not match {:?}",
                self.params.dims, dims
            )));
        }
        Ok(())
    }
}

/// Sample order of `epoch`, fixed by `(seed, epoch)`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Streams below 2^32 are left to parameter initialization.
    rng.set_stream((1 << 32) | epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Batches of one epoch; a trailing batch of one sample is dropped because
/// the contrastive loss needs at least two pairs.
pub fn epoch_batches(seed: u64, epoch: usize, n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    epoch_order(seed, epoch, n)
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

fn check_gradients<F: Scalar>(grads: &[Tensor<F>]) -> Result<()> {
    match grads.iter().position(|g| !g.is_finite()) {
        Some(i) => Err(Error::NonFinite {
            node: i,
            name: format!("gradient of {}", PARAM_NAMES[i]),
        }),
        None => Ok(()),
    }
}

/// Runs one epoch, updating `ckpt` in place and returning its steps.
pub fn train_epoch<F: Scalar>(
    ckpt: &mut Checkpoint<F>,
    samples: &[SyntheticSample],
    objective: Objective,
) -> Result<Vec<StepRecord>> {
    let epoch = ckpt.epoch;
    let cfg = ckpt.config.clone();
    let mut records = Vec::new();
    for (b, batch) in epoch_batches(cfg.seed, epoch, samples.len(), cfg.batch_size)
        .iter()
        .enumerate()
    {
        let pairs: Vec<PairRef<'_>> = batch.iter().map(|&i| samples[i].pair()).collect();
        let (loss, grads) = tier_loss_and_gradients(&ckpt.params, &pairs, objective)
            .map_err(|e| at_step(e, epoch, b))?;
        check_gradients(&grads).map_err(|e| at_step(e, epoch, b))?;
        ckpt.optimizer
            .update(&mut ckpt.params, &grads, cfg.learning_rate);
        records.push(StepRecord {
            epoch,
            step: ckpt.optimizer.step,
            batch: b,
            loss,
        });
    }
    if records.is_empty() {
        return Err(Error::Config(format!(
            "{} training samples cannot form a batch",
            samples.len()
        )));
    }
    ckpt.history.push(EpochRecord {
        epoch,
        steps: records.len(),
        mean: mean_breakdown(&records),
    });
    ckpt.epoch += 1;
    Ok(records)
}

fn at_step(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::NonFinite { node, name } => Error::NonFinite {
            node,
            name: format!("{name} at epoch {epoch} batch {batch}"),
        },
        other => other,
    }
}

fn mean_breakdown(records: &[StepRecord]) -> LossBreakdown {
    let n = records.len() as f64;
    let sum = |f: fn(&LossBreakdown) -> f64| records.iter().map(|r| f(&r.loss)).sum::<f64>() / n;
    LossBreakdown {
        clip_loss: sum(|l| l.clip_loss),
        patch_penalty: sum(|l| l.patch_penalty),
        token_penalty: sum(|l| l.token_penalty),
        total: sum(|l| l.total),
    }
}

/// Trains until `ckpt.config.epochs` epochs are complete, calling
/// `on_epoch` after each one.
pub fn train_until<F: Scalar>(
    ckpt: &mut Checkpoint<F>,
    samples: &[SyntheticSample],
    objective: Objective,
    mut on_epoch: impl FnMut(&Checkpoint<F>, &[StepRecord]) -> Result<()>,
) -> Result<Vec<StepRecord>> {
    let mut all = Vec::new();
    while ckpt.epoch < ckpt.config.epochs {
        let steps = train_epoch(ckpt, samples, objective)?;
        on_epoch(ckpt, &steps)?;
        all.extend(steps);
    }
    Ok(all)
}

/// Initializes from `config` and trains for `config.epochs` epochs.
pub fn train<F: Scalar>(
    config: TrainConfig,
    dims: ModelDims,
    samples: &[SyntheticSample],
) -> Result<(Checkpoint<F>, Vec<StepRecord>)> {
    let mut ckpt = Checkpoint::initial(config, dims)?;
    let objective = ckpt.config.objective();
    let steps = train_until(&mut ckpt, samples, objective, |_, _| Ok(()))?;
    Ok((ckpt, steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth_data::{Dataset, Split, SplitCounts, SynthConfig};

    fn samples(n: usize) -> Vec<SyntheticSample> {
        let counts = SplitCounts {
            train: n,
            val: 0,
            test: 0,
        };
        Dataset::generate(3, counts, SynthConfig::default())
            .unwrap()
            .split(Split::Train)
            .to_vec()
    }

    fn config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            seed: 11,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn one_epoch_of_64_is_two_steps() {
        let data = samples(64);
        let (ckpt, steps) = train::<f64>(config(1), ModelDims::default(), &data).unwrap();
        assert_eq!(steps.len(), 2);
        assert_eq!(ckpt.optimizer.step, 2);
        assert_eq!(ckpt.history.len(), 1);
    }

    #[test]
    fn trailing_singleton_batch_is_dropped() {
        assert_eq!(epoch_batches(0, 0, 65, 32).len(), 2);
        assert_eq!(epoch_batches(0, 0, 66, 32).len(), 3);
    }

    #[test]
    fn shuffle_is_a_permutation_that_varies_by_epoch() {
        let a = epoch_order(4, 0, 100);
        let b = epoch_order(4, 1, 100);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(a, b);
        assert_eq!(a, epoch_order(4, 0, 100));
    }

    #[test]
    fn loss_identity_at_every_step() {
        let data = samples(96);
        let (_, steps) = train::<f64>(config(2), ModelDims::default(), &data).unwrap();
        for s in steps {
            let l = s.loss;
            let expect = l.clip_loss + 0.2 * l.patch_penalty + 0.1 * l.token_penalty;
            assert!((l.total - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn regularizer_changes_the_trajectory() {
        let data = samples(64);
        let reg = train::<f64>(config(1), ModelDims::default(), &data)
            .unwrap()
            .0;
        let cfg = TrainConfig {
            lambda_p: 0.0,
            lambda_t: 0.0,
            ..config(1)
        };
        let plain = train::<f64>(cfg, ModelDims::default(), &data).unwrap().0;
        assert_ne!(reg.params, plain.params);
    }

    #[test]
    fn training_is_deterministic() {
        let data = samples(64);
        let a = train::<f64>(config(2), ModelDims::default(), &data).unwrap();
        let b = train::<f64>(config(2), ModelDims::default(), &data).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            TrainConfig {
                batch_size: 1,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                lambda_p: -0.1,
                ..TrainConfig::default()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn diverging_learning_rate_aborts_with_a_named_tensor() {
        let data = samples(64);
        let cfg = TrainConfig {
            learning_rate: 1e300,
            epochs: 3,
            ..config(3)
        };
        match train::<f64>(cfg, ModelDims::default(), &data) {
            Err(Error::NonFinite { name, .. }) => assert!(name.contains("epoch"), "{name}"),
            Err(Error::DegenerateVector { .. }) => {}
            other => panic!("expected a numerical error, got {:?}", other.map(|_| ())),
        }
    }
}
