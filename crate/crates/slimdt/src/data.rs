//! Offline trajectory datasets: episodes with return-to-go suffix sums,
//! fixed-length context windows, normalization statistics, and the "SDT1"
//! binary format.
//!
//! Byte layout of the dataset file (all little-endian, documented in
//! `docs/formats.md`):
//!
//! ```text
//! magic  b"SDT1"
//! u32    version (= 1)
//! u32    state dim d_s
//! u32    action dim d_a
//! u64    trajectory count
//! per trajectory:
//!   u64  length T
//!   f64  states  [T * d_s]
//!   f64  actions [T * d_a]
//!   f64  rewards [T]
//! ```
//!
//! Returns-to-go are exact suffix sums of the stored rewards, recomputed on
//! load, so a save/load round trip is bitwise identical.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"SDT1";
pub const DATASET_VERSION: u32 = 1;

/// Smallest allowed per-dimension standard deviation after clamping.
pub const STD_FLOOR: f64 = 1e-6;

// ── trajectories ────────────────────────────────────────────────────

/// One episode: states, actions, rewards of a shared length `T >= 1`, plus
/// the derived return-to-go suffix sums.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<f64>,  // T * d_s, row-major
    pub actions: Vec<f64>, // T * d_a
    pub rewards: Vec<f64>, // T
    pub rtg: Vec<f64>,     // T, derived
    pub d_s: usize,
    pub d_a: usize,
}

impl Trajectory {
    pub fn new(states: Vec<f64>, actions: Vec<f64>, rewards: Vec<f64>, d_s: usize, d_a: usize) -> Self {
        let t = rewards.len();
        assert!(t >= 1, "trajectory must have at least one step");
        assert_eq!(states.len(), t * d_s, "states length mismatch");
        assert_eq!(actions.len(), t * d_a, "actions length mismatch");
        let rtg = compute_rtg(&rewards);
        Trajectory {
            states,
            actions,
            rewards,
            rtg,
            d_s,
            d_a,
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        false // length >= 1 by construction
    }

    /// Total episode return.
    pub fn episode_return(&self) -> f64 {
        self.rtg[0]
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.d_s..(t + 1) * self.d_s]
    }

    pub fn action(&self, t: usize) -> &[f64] {
        &self.actions[t * self.d_a..(t + 1) * self.d_a]
    }
}

/// Exact suffix sums: rtg[t] = rewards[t] + rewards[t+1] + ... + rewards[T-1].
pub fn compute_rtg(rewards: &[f64]) -> Vec<f64> {
    assert!(!rewards.is_empty(), "compute_rtg: empty reward sequence");
    let mut rtg = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc += rewards[t];
        rtg[t] = acc;
    }
    rtg
}

/// A collection of trajectories with shared dimensions.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    pub d_s: usize,
    pub d_a: usize,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(d_s: usize, d_a: usize) -> Self {
        Dataset {
            d_s,
            d_a,
            trajectories: Vec::new(),
        }
    }

    pub fn push(&mut self, traj: Trajectory) {
        assert_eq!(traj.d_s, self.d_s, "state dim mismatch");
        assert_eq!(traj.d_a, self.d_a, "action dim mismatch");
        self.trajectories.push(traj);
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Total number of (trajectory, timestep) pairs.
    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn returns(&self) -> Vec<f64> {
        self.trajectories.iter().map(Trajectory::episode_return).collect()
    }

    /// Return at the given percentile (0..=100) over episode returns,
    /// linear interpolation between order statistics.
    pub fn return_percentile(&self, pct: f64) -> f64 {
        let mut rets = self.returns();
        assert!(!rets.is_empty(), "return_percentile: empty dataset");
        rets.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = (pct / 100.0).clamp(0.0, 1.0) * (rets.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        rets[lo] * (1.0 - frac) + rets[hi] * frac
    }
}

// ── normalization statistics ────────────────────────────────────────

/// Per-dimension state statistics and the return scale applied to RTG
/// inputs. Standard deviations are clamped to `STD_FLOOR`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetStats {
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub rtg_scale: f64,
}

impl DatasetStats {
    /// Identity statistics (zero mean, unit std, unit return scale).
    pub fn identity(d_s: usize) -> Self {
        DatasetStats {
            state_mean: vec![0.0; d_s],
            state_std: vec![1.0; d_s],
            rtg_scale: 1.0,
        }
    }

    pub fn normalize_state_into(&self, state: &[f64], out: &mut [f64]) {
        for (i, &s) in state.iter().enumerate() {
            out[i] = (s - self.state_mean[i]) / self.state_std[i];
        }
    }

    pub fn denormalize_state(&self, norm: &[f64]) -> Vec<f64> {
        norm.iter()
            .enumerate()
            .map(|(i, &v)| v * self.state_std[i] + self.state_mean[i])
            .collect()
    }
}

/// Two-pass mean/std over every state in the dataset; the return scale is
/// the maximum |rtg| (1.0 for an all-zero-reward dataset so it stays
/// positive).
pub fn fit_stats(dataset: &Dataset) -> DatasetStats {
    assert!(!dataset.is_empty(), "fit_stats: empty dataset");
    let d_s = dataset.d_s;
    let n = dataset.total_steps() as f64;
    let mut mean = vec![0.0; d_s];
    for traj in &dataset.trajectories {
        for t in 0..traj.len() {
            for (m, &s) in mean.iter_mut().zip(traj.state(t)) {
                *m += s;
            }
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = vec![0.0; d_s];
    for traj in &dataset.trajectories {
        for t in 0..traj.len() {
            for (v, (&s, &m)) in var.iter_mut().zip(traj.state(t).iter().zip(mean.iter())) {
                *v += (s - m) * (s - m);
            }
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
    let mut rtg_scale: f64 = 0.0;
    for traj in &dataset.trajectories {
        for &r in &traj.rtg {
            rtg_scale = rtg_scale.max(r.abs());
        }
    }
    if rtg_scale == 0.0 {
        rtg_scale = 1.0;
    }
    DatasetStats {
        state_mean: mean,
        state_std: std,
        rtg_scale,
    }
}

// ── context windows ─────────────────────────────────────────────────

/// One fixed-length context window ending at a specific episode timestep.
/// Valid positions are contiguous and right-aligned; padding occupies the
/// left prefix only.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub k: usize,
    pub d_s: usize,
    pub d_a: usize,
    pub rtg: Vec<f64>,       // k, already divided by rtg_scale
    pub states: Vec<f64>,    // k * d_s, raw (normalize at batch time)
    pub actions: Vec<f64>,   // k * d_a
    pub timesteps: Vec<usize>, // k, absolute episode steps (0 at padding)
    pub pad_mask: Vec<bool>, // k, true = valid
}

/// Windows ending at timesteps 0, stride, 2*stride, ... of the episode.
/// Positions before the episode start are zero-filled with `pad_mask`
/// false; rtg entries are the raw suffix sums divided by `rtg_scale`.
pub fn make_windows(traj: &Trajectory, k: usize, stride: usize, rtg_scale: f64) -> Vec<Window> {
    assert!(k >= 1, "make_windows: k must be >= 1");
    assert!(stride >= 1, "make_windows: stride must be >= 1");
    (0..traj.len())
        .step_by(stride)
        .map(|end| window_ending_at(traj, end, k, rtg_scale))
        .collect()
}

/// The window covering episode steps `end-k+1 ..= end` (left-padded when
/// the range starts before 0).
pub fn window_ending_at(traj: &Trajectory, end: usize, k: usize, rtg_scale: f64) -> Window {
    assert!(end < traj.len(), "window_ending_at: end {end} out of range");
    let (d_s, d_a) = (traj.d_s, traj.d_a);
    let mut w = Window {
        k,
        d_s,
        d_a,
        rtg: vec![0.0; k],
        states: vec![0.0; k * d_s],
        actions: vec![0.0; k * d_a],
        timesteps: vec![0; k],
        pad_mask: vec![false; k],
    };
    for slot in 0..k {
        let offset = k - 1 - slot;
        if offset > end {
            continue; // left padding
        }
        let t = end - offset;
        w.rtg[slot] = traj.rtg[t] / rtg_scale;
        w.states[slot * d_s..(slot + 1) * d_s].copy_from_slice(traj.state(t));
        w.actions[slot * d_a..(slot + 1) * d_a].copy_from_slice(traj.action(t));
        w.timesteps[slot] = t;
        w.pad_mask[slot] = true;
    }
    w
}

/// A batch of windows in planar layout, ready to bind onto a tape.
///
/// `action_mask` marks action tokens that are valid *as inputs*; during
/// training it equals `pad_mask`, at inference the final step's action is
/// unknown and masked out.
#[derive(Clone, Debug)]
pub struct WindowBatch {
    pub batch: usize,
    pub k: usize,
    pub d_s: usize,
    pub d_a: usize,
    pub rtg: Vec<f64>,            // B * k
    pub states: Vec<f64>,         // B * k * d_s
    pub actions: Vec<f64>,        // B * k * d_a
    pub timesteps: Vec<usize>,    // B * k
    pub pad_mask: Vec<bool>,      // B * k
    pub action_mask: Vec<bool>,   // B * k
    pub target_actions: Vec<f64>, // B * k * d_a
}

impl WindowBatch {
    pub fn from_windows(windows: &[Window]) -> Self {
        assert!(!windows.is_empty(), "from_windows: no windows");
        let (k, d_s, d_a) = (windows[0].k, windows[0].d_s, windows[0].d_a);
        let b = windows.len();
        let mut out = WindowBatch {
            batch: b,
            k,
            d_s,
            d_a,
            rtg: Vec::with_capacity(b * k),
            states: Vec::with_capacity(b * k * d_s),
            actions: Vec::with_capacity(b * k * d_a),
            timesteps: Vec::with_capacity(b * k),
            pad_mask: Vec::with_capacity(b * k),
            action_mask: Vec::with_capacity(b * k),
            target_actions: Vec::with_capacity(b * k * d_a),
        };
        for w in windows {
            assert_eq!((w.k, w.d_s, w.d_a), (k, d_s, d_a), "window shape mismatch");
            out.rtg.extend_from_slice(&w.rtg);
            out.states.extend_from_slice(&w.states);
            out.actions.extend_from_slice(&w.actions);
            out.timesteps.extend_from_slice(&w.timesteps);
            out.pad_mask.extend_from_slice(&w.pad_mask);
            out.action_mask.extend_from_slice(&w.pad_mask);
            out.target_actions.extend_from_slice(&w.actions);
        }
        out
    }

    /// Number of valid positions across the batch.
    pub fn valid_positions(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }
}

/// In-place (s - mean) / std over every window position.
pub fn normalize_states(batch: &mut WindowBatch, stats: &DatasetStats) {
    assert_eq!(stats.state_mean.len(), batch.d_s, "stats dim mismatch");
    let d_s = batch.d_s;
    for pos in 0..batch.batch * batch.k {
        for i in 0..d_s {
            let v = &mut batch.states[pos * d_s + i];
            *v = (*v - stats.state_mean[i]) / stats.state_std[i];
        }
    }
}

/// Samples a training batch: window end-points are drawn uniformly over all
/// (trajectory, timestep) pairs, states are normalized, rtg is scaled.
pub fn sample_batch(
    dataset: &Dataset,
    stats: &DatasetStats,
    k: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> WindowBatch {
    assert!(!dataset.is_empty(), "sample_batch: empty dataset");
    let total = dataset.total_steps();
    let mut windows = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let mut pick = rng.gen_range(0..total);
        let mut traj_idx = 0;
        for (i, traj) in dataset.trajectories.iter().enumerate() {
            if pick < traj.len() {
                traj_idx = i;
                break;
            }
            pick -= traj.len();
        }
        windows.push(window_ending_at(
            &dataset.trajectories[traj_idx],
            pick,
            k,
            stats.rtg_scale,
        ));
    }
    let mut batch = WindowBatch::from_windows(&windows);
    normalize_states(&mut batch, stats);
    batch
}

// ── binary serialization ────────────────────────────────────────────

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(
                self.pos,
                format!(
                    "truncated file: need {n} bytes for {what}, {} remain",
                    self.buf.len() - self.pos
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n * 8, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn encode_dataset(dataset: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(dataset.d_s as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.d_a as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    for traj in &dataset.trajectories {
        out.extend_from_slice(&(traj.len() as u64).to_le_bytes());
        for &v in traj.states.iter().chain(&traj.actions).chain(&traj.rewards) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_dataset(buf: &[u8]) -> Result<Dataset> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != DATASET_MAGIC {
        return Err(Error::format(
            0,
            format!("bad magic {magic:?}, expected {DATASET_MAGIC:?}"),
        ));
    }
    let version_at = r.pos;
    let version = r.u32("version")?;
    if version != DATASET_VERSION {
        return Err(Error::format(
            version_at,
            format!("unsupported version {version}, expected {DATASET_VERSION}"),
        ));
    }
    let d_s = r.u32("state dim")? as usize;
    let d_a = r.u32("action dim")? as usize;
    let n_traj = r.u64("trajectory count")? as usize;
    let mut dataset = Dataset::new(d_s, d_a);
    for i in 0..n_traj {
        let len_at = r.pos;
        let t = r.u64("trajectory length")? as usize;
        if t == 0 {
            return Err(Error::format(
                len_at,
                format!("trajectory {i} has zero length"),
            ));
        }
        let states = r.f64_vec(t * d_s, "states")?;
        let actions = r.f64_vec(t * d_a, "actions")?;
        let rewards = r.f64_vec(t, "rewards")?;
        dataset.push(Trajectory::new(states, actions, rewards, d_s, d_a));
    }
    if r.pos != buf.len() {
        return Err(Error::format(
            r.pos,
            format!("{} trailing bytes after last trajectory", buf.len() - r.pos),
        ));
    }
    Ok(dataset)
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    fs::write(path, encode_dataset(dataset))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let buf = fs::read(path)?;
    decode_dataset(&buf)
}
