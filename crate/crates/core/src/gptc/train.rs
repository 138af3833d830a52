use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backward::{loss_and_grad, LossOptions, Sample};
use super::{Matrix, ModelError, ModelParams, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecayKind {
    /// `lr = base · decay^(epoch − warmup)` after warm-up.
    #[default]
    Multiplicative,
    /// Half-cosine from `base` to zero over the post-warm-up epochs.
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Epochs of linear per-step warm-up from 0 to `base_lr`.
    pub warmup_epochs: usize,
    pub decay: f64,
    pub decay_kind: DecayKind,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    /// Stop once an epoch's mean training loss falls below this.
    pub target_loss: Option<f64>,
    pub dropout: bool,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            epochs: 10,
            batch_size: 8,
            base_lr: 6.25e-5,
            warmup_epochs: 1,
            decay: 0.98,
            decay_kind: DecayKind::Multiplicative,
            weight_decay: 0.01,
            clip_norm: 1.0,
            max_steps: None,
            target_loss: None,
            dropout: true,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    /// Learning rate at the start of an epoch (0-based), after warm-up.
    pub fn epoch_lr(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            return self.base_lr * epoch as f64 / self.warmup_epochs as f64;
        }
        let k = (epoch - self.warmup_epochs) as f64;
        match self.decay_kind {
            DecayKind::Multiplicative => self.base_lr * self.decay.powf(k),
            DecayKind::Cosine => {
                let span = self.epochs.saturating_sub(self.warmup_epochs).max(1) as f64;
                self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * (k / span).min(1.0)).cos())
            }
        }
    }

    /// Learning rate for step `step` of `steps_per_epoch` within `epoch`.
    pub fn step_lr(&self, epoch: usize, step: usize, steps_per_epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            let done = epoch * steps_per_epoch + step + 1;
            return self.base_lr * done as f64 / (self.warmup_epochs * steps_per_epoch).max(1) as f64;
        }
        self.epoch_lr(epoch)
    }
}

/// Adam with decoupled weight decay. Decay skips biases and layer-norm
/// parameters.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: ModelParams<T>,
    v: ModelParams<T>,
    t: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &ModelParams<T>, weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let grads = grads.tensors();
        let mut ms = self.m.tensors_mut();
        let mut vs = self.v.tensors_mut();
        for (i, (name, p)) in params.tensors_mut().into_iter().enumerate() {
            let decays = !(name.ends_with(".g") || name.ends_with(".b") || name.contains(".b_") || name == "out_bias");
            let wd = if decays { self.weight_decay } else { 0.0 };
            update(p, grads[i].1, &mut ms[i].1, &mut vs[i].1, (b1, b2, c1, c2, self.eps), lr, wd);
        }
    }
}

fn update<T: Scalar>(
    p: &mut Matrix<T>,
    g: &Matrix<T>,
    m: &mut Matrix<T>,
    v: &mut Matrix<T>,
    (b1, b2, c1, c2, eps): (f64, f64, f64, f64, f64),
    lr: f64,
    wd: f64,
) {
    let (b1, b2) = (T::lit(b1), T::lit(b2));
    let (one, c1, c2, eps, lr, wd) = (T::one(), T::lit(c1), T::lit(c2), T::lit(eps), T::lit(lr), T::lit(wd));
    for i in 0..p.data.len() {
        let gi = g.data[i];
        m.data[i] = b1 * m.data[i] + (one - b1) * gi;
        v.data[i] = b2 * v.data[i] + (one - b2) * gi * gi;
        let mhat = m.data[i] / c1;
        let vhat = v.data[i] / c2;
        p.data[i] = p.data[i] - lr * (mhat / (vhat.sqrt() + eps) + wd * p.data[i]);
    }
}

/// Teacher for the experimental soft-target distillation loss.
#[derive(Debug, Clone, Copy)]
pub struct Teacher<'a, T> {
    pub params: &'a ModelParams<T>,
    /// Weight of the teacher distribution in the target mix.
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    /// Training loss of every optimizer step, in order.
    pub history: Vec<f64>,
    /// Mean training loss of every completed epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    /// Set when training stopped on a non-finite loss; `params` then holds
    /// the last finite state.
    pub aborted: Option<String>,
}

/// Draws batches for one epoch. Samples are grouped by language; each step
/// picks a language uniformly among those with samples left and takes up to
/// `batch_size` of them.
fn epoch_batches<R: Rng>(data: &[Sample], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, s) in data.iter().enumerate() {
        groups.entry(s.lang).or_default().push(i);
    }
    let mut queues: Vec<Vec<usize>> = groups.into_values().collect();
    for q in &mut queues {
        q.shuffle(rng);
    }
    let mut batches = Vec::new();
    loop {
        let live: Vec<usize> = (0..queues.len()).filter(|&i| !queues[i].is_empty()).collect();
        if live.is_empty() {
            break;
        }
        let pick = live[rng.random_range(0..live.len())];
        let q = &mut queues[pick];
        let take = batch_size.min(q.len());
        batches.push(q.split_off(q.len() - take));
    }
    batches
}

fn global_norm<T: Scalar>(grads: &ModelParams<T>) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.data.iter())
        .map(|x| {
            let v = x.to_f64().unwrap_or(f64::NAN);
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

fn scale_grads<T: Scalar>(grads: &mut ModelParams<T>, factor: f64) {
    let f = T::lit(factor);
    for (_, t) in grads.tensors_mut() {
        t.data.iter_mut().for_each(|x| *x = *x * f);
    }
}

/// Trains with AdamW, linear warm-up and per-epoch decay. Multilingual data
/// is batched one language per step. A non-finite loss aborts training and
/// returns the parameters from before that step.
pub fn train<T: Scalar>(
    params: ModelParams<T>,
    data: &[Sample],
    schedule: &TrainSchedule,
    teacher: Option<Teacher<'_, T>>,
) -> Result<TrainOutcome<T>, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut params = params;
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut opt = AdamW::new(&params, schedule.weight_decay);
    let opts = LossOptions {
        dropout: schedule.dropout,
        teacher: teacher.map(|t| (t.params, t.weight)),
    };
    let mut outcome = TrainOutcome {
        params: params.clone(),
        history: Vec::new(),
        epoch_losses: Vec::new(),
        steps: 0,
        aborted: None,
    };
    let max_steps = schedule.max_steps.unwrap_or(usize::MAX);
    'epochs: for epoch in 0..schedule.epochs {
        let batches = epoch_batches(data, schedule.batch_size.max(1), &mut rng);
        let per_epoch = batches.len();
        let mut epoch_total = 0.0;
        for (step, batch_idx) in batches.iter().enumerate() {
            if outcome.steps >= max_steps {
                break 'epochs;
            }
            let batch: Vec<Sample> = batch_idx.iter().map(|&i| data[i].clone()).collect();
            let (loss, mut grads) = loss_and_grad(&params, &batch, &opts, &mut rng)?;
            if !loss.is_finite() {
                outcome.aborted = Some(format!("non-finite loss at step {}", outcome.steps));
                log::warn!("training diverged at step {}; keeping last finite parameters", outcome.steps);
                break 'epochs;
            }
            if schedule.clip_norm > 0.0 {
                let norm = global_norm(&grads);
                if norm > schedule.clip_norm {
                    scale_grads(&mut grads, schedule.clip_norm / norm);
                }
            }
            let lr = schedule.step_lr(epoch, step, per_epoch);
            let previous = params.clone();
            opt.step(&mut params, &grads, lr);
            if !params.all_finite() {
                params = previous;
                outcome.aborted = Some(format!("non-finite parameters after step {}", outcome.steps));
                break 'epochs;
            }
            outcome.history.push(loss);
            outcome.steps += 1;
            epoch_total += loss;
        }
        let mean = epoch_total / per_epoch.max(1) as f64;
        outcome.epoch_losses.push(mean);
        log::debug!("epoch {epoch}: mean loss {mean:.4}");
        if schedule.target_loss.is_some_and(|target| mean < target) {
            break;
        }
    }
    outcome.params = params;
    Ok(outcome)
}
