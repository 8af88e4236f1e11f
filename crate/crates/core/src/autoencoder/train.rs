use std::collections::BTreeMap;
use std::f64::consts::PI;

use log::{debug, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{encoder_forward, step_forward_backward, Sample};
use super::{Model, ModelConfig, Params, NUM_CODEBOOKS};
use crate::checkpoint::{Checkpoint, RngState};
use crate::corpus::{ExampleKind, TrainingSampler, WordFrequencyList};
use crate::error::{Error, Result};
use crate::symbols::BoundedWord;
use crate::triplet::Triplet;
use crate::vq::Codebook;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn code(self) -> u8 {
        match self {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(OptimizerKind::Sgd),
            1 => Some(OptimizerKind::Adam),
            _ => None,
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.98;
const ADAM_EPS: f64 = 1e-6;

/// First and second moment estimates (Adam only).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first: Params,
    pub second: Params,
}

impl OptimizerState {
    pub fn new(params: &Params) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    fn apply(&mut self, kind: OptimizerKind, params: &mut Params, grads: &Params, lr: f64, step: usize) {
        match kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors.iter_mut().zip(&grads.tensors) {
                    p.scaled_add(-lr, g);
                }
            }
            OptimizerKind::Adam => {
                let t = (step + 1) as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for i in 0..params.tensors.len() {
                    let g = &grads.tensors[i];
                    let m = &mut self.first.tensors[i];
                    let v = &mut self.second.tensors[i];
                    let p = &mut params.tensors[i];
                    ndarray::Zip::from(p)
                        .and(m)
                        .and(v)
                        .and(g)
                        .for_each(|p, m, v, &g| {
                            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                        });
                }
            }
        }
    }
}

/// Linear warmup followed by cosine decay from `learning_rate` to
/// `final_learning_rate` at the last step.
pub fn learning_rate(cfg: &ModelConfig, step: usize) -> f64 {
    if step < cfg.warmup_steps {
        return cfg.learning_rate * (step + 1) as f64 / cfg.warmup_steps as f64;
    }
    let span = cfg.steps.saturating_sub(cfg.warmup_steps).max(1);
    let progress = ((step - cfg.warmup_steps) as f64 / span as f64).min(1.0);
    cfg.final_learning_rate
        + 0.5 * (cfg.learning_rate - cfg.final_learning_rate) * (1.0 + (PI * progress).cos())
}

/// `ema ← decay·ema + (1 − decay)·live`, elementwise.
pub fn ema_parameters(live: &Params, ema: &mut Params, decay: f64) {
    for (e, l) in ema.tensors.iter_mut().zip(&live.tensors) {
        ndarray::Zip::from(e)
            .and(l)
            .for_each(|e, &l| *e = decay * *e + (1.0 - decay) * l);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub loss: f64,
    pub reconstruction: f64,
    pub commitment: f64,
    pub learning_rate: f64,
    pub resets: usize,
    /// Entropy (nats) of each channel's EMA usage counts.
    pub usage_entropy: [f64; NUM_CODEBOOKS],
}

/// Owns the full training state; serializable at any step boundary.
pub struct Trainer {
    config: ModelConfig,
    params: Params,
    ema_params: Params,
    codebooks: [Codebook; NUM_CODEBOOKS],
    usage: BTreeMap<Triplet, u64>,
    step: usize,
    optimizer: OptimizerState,
    rng: ChaCha8Rng,
    sampler: TrainingSampler,
    pending: Option<Sample>,
    total_resets: u64,
}

fn trainable(list: &WordFrequencyList, cfg: &ModelConfig) -> Result<WordFrequencyList> {
    let mut list = list.clone();
    let before = list.len();
    list.retain(|w| w.len() + 2 <= cfg.max_len);
    if list.len() < before {
        warn!(
            "dropped {} words longer than {} symbols",
            before - list.len(),
            cfg.max_len
        );
    }
    if list.is_empty() {
        return Err(Error::InvalidArgument("no trainable words in the frequency list".into()));
    }
    Ok(list)
}

impl Trainer {
    pub fn new(list: &WordFrequencyList, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let list = trainable(list, &config)?;
        let sampler = TrainingSampler::new(&list)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Params::init(&config, &mut rng);

        // Seed each codebook with encoder outputs of randomly drawn words.
        let k = config.codebook_size;
        let words: Vec<BoundedWord> = (0..k)
            .map(|_| {
                let i = sampler.draw_index(&mut rng);
                BoundedWord::word(&list.entries()[i].0).expect("non-empty word")
            })
            .collect();
        let refs: Vec<&BoundedWord> = words.iter().collect();
        let pass = encoder_forward(&params, &config, &refs);
        let codebooks = pass.latents.map(|l| {
            Codebook::new(l, config.codebook_decay, config.reset_threshold)
                .expect("encoder outputs are finite")
        });

        Ok(Self {
            optimizer: OptimizerState::new(&params),
            ema_params: params.clone(),
            params,
            codebooks,
            usage: BTreeMap::new(),
            step: 0,
            rng,
            sampler,
            pending: None,
            total_resets: 0,
            config,
        })
    }

    /// Resumes from a checkpoint. The frequency list must be the one the
    /// checkpoint was trained on.
    pub fn resume(checkpoint: Checkpoint, list: &WordFrequencyList) -> Result<Self> {
        let list = trainable(list, &checkpoint.config)?;
        let sampler = TrainingSampler::new(&list)?;
        Ok(Self {
            rng: checkpoint.rng.restore(),
            config: checkpoint.config,
            params: checkpoint.params,
            ema_params: checkpoint.ema_params,
            codebooks: checkpoint.codebooks,
            usage: checkpoint.usage,
            step: checkpoint.step,
            optimizer: checkpoint.optimizer,
            sampler,
            pending: checkpoint.pending,
            total_resets: checkpoint.total_resets,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Changes the step budget of a resumed run. The learning-rate schedule
    /// follows the new total.
    pub fn set_total_steps(&mut self, steps: usize) -> Result<()> {
        if steps < self.step {
            return Err(Error::InvalidArgument(format!(
                "step budget {steps} is below the {} steps already taken",
                self.step
            )));
        }
        self.config.steps = steps;
        Ok(())
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn codebooks(&self) -> &[Codebook; NUM_CODEBOOKS] {
        &self.codebooks
    }

    pub fn usage(&self) -> &BTreeMap<Triplet, u64> {
        &self.usage
    }

    pub fn total_resets(&self) -> u64 {
        self.total_resets
    }

    fn next_batch(&mut self) -> Vec<Sample> {
        let b = self.config.batch_size;
        let mut batch = Vec::with_capacity(b);
        if let Some(s) = self.pending.take() {
            batch.push(s);
        }
        while batch.len() < b {
            let ex = self.sampler.draw(&mut self.rng);
            let weight = ex.loss_weight;
            match ex.kind {
                ExampleKind::Whole(word) => batch.push(Sample { word, weight }),
                ExampleKind::Split(left, right) => {
                    batch.push(Sample { word: left, weight });
                    let right = Sample {
                        word: right,
                        weight,
                    };
                    if batch.len() < b {
                        batch.push(right);
                    } else {
                        self.pending = Some(right);
                    }
                }
            }
        }
        batch
    }

    /// One optimisation step.
    pub fn step(&mut self) -> Result<StepReport> {
        let batch = self.next_batch();
        let out = step_forward_backward(&self.params, &self.config, &self.codebooks, &batch)?;
        if !out.loss.is_finite() || !out.grads.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                loss: out.loss,
            });
        }
        let lr = learning_rate(&self.config, self.step);
        self.optimizer
            .apply(self.config.optimizer, &mut self.params, &out.grads, lr, self.step);

        let mut resets = 0;
        for c in 0..NUM_CODEBOOKS {
            let assigned: Vec<usize> = out.assignments.iter().map(|a| a[c]).collect();
            self.codebooks[c].ema_update(out.latents[c].view(), &assigned)?;
            resets += self.codebooks[c]
                .reset_dead_codes(out.latents[c].view(), &mut self.rng)?
                .reset
                .len();
        }
        self.total_resets += resets as u64;
        ema_parameters(&self.params, &mut self.ema_params, self.config.weight_ema_decay);
        for a in &out.assignments {
            let t = Triplet(a.map(|k| k as u16));
            *self.usage.entry(t).or_insert(0) += 1;
        }
        let report = StepReport {
            step: self.step,
            loss: out.loss,
            reconstruction: out.reconstruction,
            commitment: out.commitment,
            learning_rate: lr,
            resets,
            usage_entropy: std::array::from_fn(|c| self.codebooks[c].usage_entropy()),
        };
        self.step += 1;
        if !self.params.is_finite() {
            return Err(Error::Divergence {
                step: report.step,
                loss: f64::NAN,
            });
        }
        debug!("step {} loss {:.4}", report.step, report.loss);
        Ok(report)
    }

    /// Runs until the configured step count, reporting every step.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepReport)) -> Result<()> {
        while self.step < self.config.steps {
            let report = self.step()?;
            on_step(&report);
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            params: self.params.clone(),
            ema_params: self.ema_params.clone(),
            codebooks: self.codebooks.clone(),
            usage: self.usage.clone(),
            step: self.step,
            optimizer: self.optimizer.clone(),
            rng: RngState::capture(&self.rng),
            pending: self.pending.clone(),
            total_resets: self.total_resets,
        }
    }

    /// Inference model built from the EMA parameter copy.
    pub fn model(&self) -> Result<Model> {
        Model::new(
            self.config.clone(),
            self.ema_params.clone(),
            self.codebooks.clone(),
        )
    }
}
