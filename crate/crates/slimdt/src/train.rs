//! Optimization loop: masked action MSE, Adam with decoupled weight decay,
//! linear warmup, and global gradient-norm clipping.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_batch, Dataset, DatasetStats, WindowBatch};
use crate::error::{Error, Result};
use crate::model::{Model, ParamStore};
use crate::numerics::Tape;
use crate::rollout::{batch_evaluate, Env, EvalStats};
use crate::seeds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub seed: u64,
    /// Evaluate every this many steps (0 disables mid-training eval).
    pub eval_every: u64,
    /// Episodes per mid-training evaluation.
    pub eval_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            lr: 1e-4,
            weight_decay: 1e-4,
            grad_clip: 0.25,
            warmup_steps: 10_000,
            total_steps: 5_000,
            seed: 0,
            eval_every: 0,
            eval_episodes: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!("train.lr {} must be >= 0", self.lr)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("train.weight_decay must be >= 0".into()));
        }
        if self.grad_clip <= 0.0 {
            return Err(Error::Config("train.grad_clip must be > 0".into()));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("train.total_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// lr(step) = base_lr * min(1, (step+1) / warmup_steps), constant after
/// warmup. Step 0 trains at base_lr / warmup_steps.
pub fn lr_at(cfg: &TrainConfig, step: u64) -> f64 {
    if cfg.warmup_steps == 0 {
        return cfg.lr;
    }
    cfg.lr * ((step + 1) as f64 / cfg.warmup_steps as f64).min(1.0)
}

// ── optimizer ───────────────────────────────────────────────────────

/// Adam with bias correction and decoupled weight decay; the decay is
/// scaled by the scheduled learning rate, so lr = 0 leaves parameters
/// bitwise untouched.
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(params: &ParamStore) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, lr: f64, weight_decay: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.data.len() {
                let g = p.grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p.data[j] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + weight_decay * p.data[j]);
            }
        }
    }
}

/// Scales gradients so the global L2 norm is at most `max_norm`; returns
/// (pre-clip, post-clip) norms.
pub fn clip_grad_norm(params: &mut ParamStore, max_norm: f64) -> (f64, f64) {
    let norm = params.grad_l2_norm();
    if norm > max_norm {
        params.scale_grads(max_norm / norm);
        (norm, params.grad_l2_norm())
    } else {
        (norm, norm)
    }
}

// ── logging ─────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub grad_norm_clipped: f64,
    pub lr: f64,
    pub eval_return_mean: Option<f64>,
    pub eval_return_stderr: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    /// CSV columns: step, loss, grad_norm, lr, eval_return_mean,
    /// eval_return_stderr. The grad norm column is the pre-clip norm.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,grad_norm,lr,eval_return_mean,eval_return_stderr\n");
        for r in &self.rows {
            let _ = write!(out, "{},{},{},{}", r.step, r.loss, r.grad_norm, r.lr);
            match (r.eval_return_mean, r.eval_return_stderr) {
                (Some(m), Some(s)) => {
                    let _ = writeln!(out, ",{m},{s}");
                }
                (Some(m), None) => {
                    let _ = writeln!(out, ",{m},");
                }
                _ => out.push_str(",,\n"),
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

// ── training steps ──────────────────────────────────────────────────

#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
    pub grad_norm_clipped: f64,
    pub lr: f64,
}

fn summarize(name: &str, data: &[f64]) -> String {
    if data.is_empty() {
        return format!("{name}: empty");
    }
    let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for &v in data {
        lo = lo.min(v);
        hi = hi.max(v);
        sum += v;
    }
    format!("{name}: min {lo} max {hi} mean {}", sum / data.len() as f64)
}

/// One optimization step: forward, masked MSE, backward, global clip,
/// AdamW update with the warmup-scheduled rate. A non-finite loss aborts
/// with a diagnostic dump of the batch statistics.
pub fn train_step(
    model: &mut Model,
    opt: &mut AdamW,
    batch: &WindowBatch,
    cfg: &TrainConfig,
    step: u64,
) -> Result<StepStats> {
    let mut tape = Tape::new(seeds::derive(cfg.seed, step));
    let fwd = model.forward(&mut tape, batch, true);
    let loss_id = model.action_loss(&mut tape, &fwd, batch);
    let loss = tape.scalar(loss_id);
    if !loss.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss {loss} at step {step}; {}; {}; {}",
            summarize("states", &batch.states),
            summarize("actions", &batch.actions),
            summarize("rtg", &batch.rtg),
        )));
    }
    model.params.zero_grads();
    tape.backward(loss_id);
    model.accumulate_grads(&tape, &fwd);
    let (grad_norm, grad_norm_clipped) = clip_grad_norm(&mut model.params, cfg.grad_clip);
    let lr = lr_at(cfg, step);
    opt.step(&mut model.params, lr, cfg.weight_decay);
    Ok(StepStats {
        loss,
        grad_norm,
        grad_norm_clipped,
        lr,
    })
}

/// Mid-training evaluation settings.
pub struct EvalHook<'a> {
    pub env_factory: &'a dyn Fn(u64) -> Box<dyn Env>,
    pub target_rtg: f64,
    pub base_seed: u64,
}

/// Full training loop over a dataset; evaluation (when hooked) runs every
/// `eval_every` steps with read-only parameters.
pub fn train(
    model: &mut Model,
    dataset: &Dataset,
    stats: &DatasetStats,
    cfg: &TrainConfig,
    eval: Option<&EvalHook>,
) -> Result<TrainLog> {
    cfg.validate()?;
    assert!(!dataset.is_empty(), "cannot train on an empty dataset");
    let mut opt = AdamW::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, 0x5A5A));
    let mut log = TrainLog::default();
    for step in 0..cfg.total_steps {
        let batch = sample_batch(dataset, stats, model.cfg.context_k, cfg.batch_size, &mut rng);
        let s = train_step(model, &mut opt, &batch, cfg, step)?;
        let mut row = LogRow {
            step,
            loss: s.loss,
            grad_norm: s.grad_norm,
            grad_norm_clipped: s.grad_norm_clipped,
            lr: s.lr,
            eval_return_mean: None,
            eval_return_stderr: None,
        };
        if let Some(hook) = eval {
            if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 {
                let es = evaluate(
                    model,
                    hook.env_factory,
                    cfg.eval_episodes,
                    hook.target_rtg,
                    stats,
                    seeds::derive(hook.base_seed, step),
                )?;
                row.eval_return_mean = es.mean;
                row.eval_return_stderr = es.stderr;
            }
        }
        log.rows.push(row);
    }
    Ok(log)
}

/// Return statistics of the current policy over independent rollouts.
pub fn evaluate(
    model: &Model,
    env_factory: &dyn Fn(u64) -> Box<dyn Env>,
    n_episodes: usize,
    target_rtg: f64,
    stats: &DatasetStats,
    base_seed: u64,
) -> Result<EvalStats> {
    batch_evaluate(model, env_factory, n_episodes, target_rtg, stats, base_seed)
}
