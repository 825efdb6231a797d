//! Inference engine: context-window management, expected return-to-go
//! initialization, and per-step subtraction of observed rewards.
//!
//! The expected return starts at a user-chosen target and is decremented by
//! each observed reward; it may go negative when the policy outperforms the
//! target and is fed to the model unclamped. The bookkeeping identity
//! `rtg_hat(t) = target - sum(rewards[..t])` is asserted at every step.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{DatasetStats, WindowBatch};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::Tape;
use crate::seeds;

/// Environment surface the rollout loop drives.
pub trait Env {
    /// Starts a new episode and returns the initial state.
    fn reset(&mut self) -> Vec<f64>;
    /// Applies an action; returns (next state, reward, done).
    fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64, bool);
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn max_steps(&self) -> usize;
}

/// Per-step record kept for offline inspection.
#[derive(Clone, Debug)]
pub struct TraceRow {
    pub t: usize,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    /// Expected return-to-go *before* taking this step's action.
    pub rtg_hat: f64,
}

#[derive(Clone, Debug)]
pub struct Episode {
    /// Sum of environment rewards (independent of the target return).
    pub episode_return: f64,
    pub length: usize,
    pub trace: Vec<TraceRow>,
}

/// Builds the inference window for the current step: the last `<= k` steps
/// right-aligned, the current step carrying a zero action placeholder that
/// is masked out of attention.
fn inference_window(
    history: &[TraceRow],
    current_state: &[f64],
    current_rtg_hat: f64,
    k: usize,
    stats: &DatasetStats,
    d_s: usize,
    d_a: usize,
) -> WindowBatch {
    let t = history.len();
    let mut batch = WindowBatch {
        batch: 1,
        k,
        d_s,
        d_a,
        rtg: vec![0.0; k],
        states: vec![0.0; k * d_s],
        actions: vec![0.0; k * d_a],
        timesteps: vec![0; k],
        pad_mask: vec![false; k],
        action_mask: vec![false; k],
        target_actions: vec![0.0; k * d_a],
    };
    for slot in 0..k {
        let offset = k - 1 - slot;
        if offset > t {
            continue;
        }
        let step = t - offset;
        batch.pad_mask[slot] = true;
        batch.timesteps[slot] = step;
        if step == t {
            batch.rtg[slot] = current_rtg_hat / stats.rtg_scale;
            stats.normalize_state_into(
                current_state,
                &mut batch.states[slot * d_s..(slot + 1) * d_s],
            );
            // current action unknown: zero placeholder, masked
            batch.action_mask[slot] = false;
        } else {
            let row = &history[step];
            batch.rtg[slot] = row.rtg_hat / stats.rtg_scale;
            stats.normalize_state_into(&row.state, &mut batch.states[slot * d_s..(slot + 1) * d_s]);
            batch.actions[slot * d_a..(slot + 1) * d_a].copy_from_slice(&row.action);
            batch.action_mask[slot] = true;
        }
    }
    batch
}

/// Runs one episode, conditioning on `target_rtg` and decrementing it by
/// observed rewards.
pub fn run_episode(
    model: &Model,
    env: &mut dyn Env,
    target_rtg: f64,
    stats: &DatasetStats,
) -> Result<Episode> {
    let cfg = &model.cfg;
    assert_eq!(env.state_dim(), cfg.d_s, "env state dim != model");
    assert_eq!(env.action_dim(), cfg.d_a, "env action dim != model");
    assert!(target_rtg.is_finite(), "target return must be finite");
    let k = cfg.context_k;

    let mut state = env.reset();
    let mut history: Vec<TraceRow> = Vec::new();
    let mut reward_sum = 0.0;

    for t in 0..env.max_steps() {
        let rtg_hat = target_rtg - reward_sum;
        // bookkeeping identity, recomputed from the recorded rewards in the
        // same summation order
        let replayed: f64 = history.iter().map(|r| r.reward).fold(0.0, |a, r| a + r);
        assert_eq!(
            rtg_hat,
            target_rtg - replayed,
            "rtg bookkeeping diverged at step {t}"
        );

        let batch = inference_window(&history, &state, rtg_hat, k, stats, cfg.d_s, cfg.d_a);
        let mut tape = Tape::new(0);
        let fwd = model.forward(&mut tape, &batch, false);
        let preds = tape.data(fwd.preds);
        let action = preds[(k - 1) * cfg.d_a..k * cfg.d_a].to_vec();
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::numerical(format!(
                "non-finite action {action:?} at step {t} (target {target_rtg}, rtg_hat {rtg_hat}); \
                 trace length {}",
                history.len()
            )));
        }

        let (next_state, reward, done) = env.step(&action);
        reward_sum += reward;
        history.push(TraceRow {
            t,
            state: std::mem::replace(&mut state, next_state),
            action,
            reward,
            rtg_hat,
        });
        if done {
            break;
        }
    }

    Ok(Episode {
        episode_return: reward_sum,
        length: history.len(),
        trace: history,
    })
}

/// Aggregate statistics over independent episodes. With one episode the
/// spread is undefined and reported as absent; with none, everything is.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalStats {
    pub n: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub stderr: Option<f64>,
    pub returns: Vec<f64>,
}

impl EvalStats {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len();
        let mean = (n > 0).then(|| returns.iter().sum::<f64>() / n as f64);
        let std = (n > 1).then(|| {
            let m = mean.unwrap();
            (returns.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        let stderr = std.map(|s| s / (n as f64).sqrt());
        EvalStats {
            n,
            mean,
            std,
            stderr,
            returns,
        }
    }
}

/// Runs `n_episodes` independent episodes with per-episode environments
/// seeded from `base_seed`.
pub fn batch_evaluate(
    model: &Model,
    env_factory: &dyn Fn(u64) -> Box<dyn Env>,
    n_episodes: usize,
    target_rtg: f64,
    stats: &DatasetStats,
    base_seed: u64,
) -> Result<EvalStats> {
    let mut returns = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        let mut env = env_factory(seeds::derive(base_seed, i as u64));
        let ep = run_episode(model, env.as_mut(), target_rtg, stats)?;
        returns.push(ep.episode_return);
    }
    Ok(EvalStats::from_returns(returns))
}

/// Writes one episode trace as CSV: step, reward, expected return, action
/// components.
pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[TraceRow], d_a: usize) -> Result<()> {
    let mut out = String::from("t,reward,rtg_hat");
    for d in 0..d_a {
        let _ = write!(out, ",a{d}");
    }
    out.push('\n');
    for row in trace {
        let _ = write!(out, "{},{},{}", row.t, row.reward, row.rtg_hat);
        for d in 0..d_a {
            let _ = write!(out, ",{}", row.action[d]);
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
