//! Desk-scale environments and offline dataset generators.
//!
//! `LinearPointEnv` is a point mass on a line: accelerate toward a goal,
//! pay |position - goal| per step. `SpikeRewardEnv` shares the dynamics but
//! adds a one-time bonus when the mass first crosses a threshold — the
//! bonus is observable only through the reward channel, never the state,
//! which is the information asymmetry the sequence-to-sequence injectors
//! are built for. A per-episode `armed` latch makes it possible to generate
//! contrast pairs: identical states and actions, different rewards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::rollout::Env;
use crate::seeds;

pub const GOAL: f64 = 1.0;
pub const POS_BOUND: f64 = 1.5;
pub const VEL_BOUND: f64 = 1.0;
pub const ACCEL: f64 = 0.1;
pub const HORIZON: usize = 50;
pub const SPIKE_THRESHOLD: f64 = 0.5;
pub const SPIKE_BONUS: f64 = 10.0;

/// Start positions are drawn from this range on reset. Kept narrow so
/// episode returns concentrate; the mass always starts below the spike
/// threshold.
pub const START_RANGE: (f64, f64) = (-1.0, -0.5);

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    LinearPoint,
    SpikeReward,
}

impl EnvId {
    pub fn name(self) -> &'static str {
        match self {
            EnvId::LinearPoint => "linear_point",
            EnvId::SpikeReward => "spike_reward",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear_point" => Some(EnvId::LinearPoint),
            "spike_reward" => Some(EnvId::SpikeReward),
            _ => None,
        }
    }

    pub fn state_dim(self) -> usize {
        2
    }

    pub fn action_dim(self) -> usize {
        1
    }

    /// Evaluation-time environment (spike bonus armed).
    pub fn make(self, seed: u64) -> Box<dyn Env> {
        match self {
            EnvId::LinearPoint => Box::new(LinearPointEnv::new(seed)),
            EnvId::SpikeReward => Box::new(SpikeRewardEnv::new(seed, true)),
        }
    }
}

/// Point mass: state (position, velocity), action = acceleration command in
/// [-1, 1], reward = -|position - goal| per step over a 50-step horizon.
/// Dynamics: position += velocity, then velocity += 0.1 * action, both
/// clamped.
pub struct LinearPointEnv {
    pos: f64,
    vel: f64,
    steps: usize,
    rng: ChaCha8Rng,
}

impl LinearPointEnv {
    pub fn new(seed: u64) -> Self {
        LinearPointEnv {
            pos: 0.0,
            vel: 0.0,
            steps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn advance(pos: &mut f64, vel: &mut f64, action: f64) {
        let a = action.clamp(-1.0, 1.0);
        *pos = (*pos + *vel).clamp(-POS_BOUND, POS_BOUND);
        *vel = (*vel + ACCEL * a).clamp(-VEL_BOUND, VEL_BOUND);
    }
}

impl Env for LinearPointEnv {
    fn reset(&mut self) -> Vec<f64> {
        self.pos = self.rng.gen_range(START_RANGE.0..START_RANGE.1);
        self.vel = 0.0;
        self.steps = 0;
        vec![self.pos, self.vel]
    }

    fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64, bool) {
        Self::advance(&mut self.pos, &mut self.vel, action[0]);
        self.steps += 1;
        let reward = -(self.pos - GOAL).abs();
        (vec![self.pos, self.vel], reward, self.steps >= HORIZON)
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn max_steps(&self) -> usize {
        HORIZON
    }
}

/// Same dynamics, plus a one-time bonus the first time the position crosses
/// `SPIKE_THRESHOLD` from below — if the episode's hidden `armed` latch is
/// set. The latch never appears in the state.
pub struct SpikeRewardEnv {
    inner: LinearPointEnv,
    armed: bool,
    fired: bool,
}

impl SpikeRewardEnv {
    pub fn new(seed: u64, armed: bool) -> Self {
        SpikeRewardEnv {
            inner: LinearPointEnv::new(seed),
            armed,
            fired: false,
        }
    }
}

impl Env for SpikeRewardEnv {
    fn reset(&mut self) -> Vec<f64> {
        self.fired = false;
        self.inner.reset()
    }

    fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64, bool) {
        let before = self.inner.pos;
        let (state, mut reward, done) = self.inner.step(action);
        let after = self.inner.pos;
        if self.armed && !self.fired && before < SPIKE_THRESHOLD && after >= SPIKE_THRESHOLD {
            reward += SPIKE_BONUS;
            self.fired = true;
        }
        (state, reward, done)
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn max_steps(&self) -> usize {
        HORIZON
    }
}

// ── scripted controllers ────────────────────────────────────────────

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// Proportional-derivative drive to the goal.
    Expert,
    /// Expert with Gaussian action noise.
    Medium,
    /// Uniform random actions.
    Random,
}

const PD_KP: f64 = 2.0;
const PD_KD: f64 = 5.0;

pub fn controller_action(
    kind: ControllerKind,
    state: &[f64],
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    match kind {
        ControllerKind::Expert => (PD_KP * (GOAL - state[0]) - PD_KD * state[1]).clamp(-1.0, 1.0),
        ControllerKind::Medium => {
            let base = PD_KP * (GOAL - state[0]) - PD_KD * state[1];
            let noise: f64 = rng.sample::<f64, _>(StandardNormal) * noise_sigma;
            (base + noise).clamp(-1.0, 1.0)
        }
        ControllerKind::Random => rng.gen_range(-1.0..1.0),
    }
}

/// Rolls one episode of a scripted controller; controllers see only the
/// state, so reward structure can never leak into the action sequence.
pub fn rollout_controller(
    env: &mut dyn Env,
    kind: ControllerKind,
    noise_sigma: f64,
    controller_seed: u64,
) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(controller_seed);
    let (d_s, d_a) = (env.state_dim(), env.action_dim());
    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut state = env.reset();
    for _ in 0..env.max_steps() {
        let a = controller_action(kind, &state, noise_sigma, &mut rng);
        let (next, reward, done) = env.step(&[a]);
        states.extend_from_slice(&state);
        actions.push(a);
        rewards.push(reward);
        state = next;
        if done {
            break;
        }
    }
    Trajectory::new(states, actions, rewards, d_s, d_a)
}

// ── dataset generation ──────────────────────────────────────────────

/// Recipe for an offline dataset: a policy mix over one environment.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub env: EnvId,
    pub n_trajectories: usize,
    pub expert_fraction: f64,
    pub medium_fraction: f64,
    pub random_fraction: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        // guarantees return spread for conditioning without expert
        // saturation
        DatasetSpec {
            env: EnvId::LinearPoint,
            n_trajectories: 300,
            expert_fraction: 0.1,
            medium_fraction: 0.6,
            random_fraction: 0.3,
            noise_sigma: 0.3,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let sum = self.expert_fraction + self.medium_fraction + self.random_fraction;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "data fractions must sum to 1, got {sum}"
            )));
        }
        if [self.expert_fraction, self.medium_fraction, self.random_fraction]
            .iter()
            .any(|f| *f < 0.0)
        {
            return Err(Error::Config("data fractions must be non-negative".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("data.noise_sigma must be >= 0".into()));
        }
        Ok(())
    }

    fn controller_for(&self, index: usize) -> ControllerKind {
        let n = self.n_trajectories as f64;
        let n_expert = (self.expert_fraction * n).round() as usize;
        let n_medium = (self.medium_fraction * n).round() as usize;
        if index < n_expert {
            ControllerKind::Expert
        } else if index < n_expert + n_medium {
            ControllerKind::Medium
        } else {
            ControllerKind::Random
        }
    }
}

/// Provenance of one generated trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrajMeta {
    pub controller: ControllerKind,
    pub bonus_armed: bool,
}

fn make_env(id: EnvId, seed: u64, armed: bool) -> Box<dyn Env> {
    match id {
        EnvId::LinearPoint => Box::new(LinearPointEnv::new(seed)),
        EnvId::SpikeReward => Box::new(SpikeRewardEnv::new(seed, armed)),
    }
}

/// Generates the dataset along with per-trajectory provenance labels.
///
/// For the spike environment, trajectories 0 and 1 form a guaranteed
/// contrast pair: same expert controller and start, bonus armed vs
/// disarmed, so their states and actions agree while rewards differ.
pub fn generate_dataset_labeled(spec: &DatasetSpec) -> Result<(Dataset, Vec<TrajMeta>)> {
    spec.validate()?;
    let mut dataset = Dataset::new(spec.env.state_dim(), spec.env.action_dim());
    let mut metas = Vec::with_capacity(spec.n_trajectories);
    let contrast_pair = spec.env == EnvId::SpikeReward && spec.n_trajectories >= 2;
    for i in 0..spec.n_trajectories {
        let (controller, env_seed, ctrl_seed, armed) = if contrast_pair && i < 2 {
            // shared seeds, differing latch
            (
                ControllerKind::Expert,
                seeds::derive(spec.seed, u64::MAX),
                seeds::derive(spec.seed, u64::MAX - 1),
                i == 0,
            )
        } else {
            let armed = seeds::derive(spec.seed, 1_000_000 + i as u64) % 2 == 0;
            (
                spec.controller_for(i),
                seeds::derive(spec.seed, i as u64),
                seeds::derive(spec.seed, 500_000 + i as u64),
                armed,
            )
        };
        let mut env = make_env(spec.env, env_seed, armed);
        let traj = rollout_controller(env.as_mut(), controller, spec.noise_sigma, ctrl_seed);
        dataset.push(traj);
        metas.push(TrajMeta {
            controller,
            bonus_armed: armed,
        });
    }
    if contrast_pair {
        let a = &dataset.trajectories[0];
        let b = &dataset.trajectories[1];
        assert_eq!(a.states, b.states, "contrast pair must share states");
        assert_eq!(a.actions, b.actions, "contrast pair must share actions");
        assert_ne!(a.rewards, b.rewards, "contrast pair must differ in rewards");
    }
    Ok((dataset, metas))
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    generate_dataset_labeled(spec).map(|(d, _)| d)
}

/// Mean return of the expert-labeled trajectories.
pub fn expert_mean_return(dataset: &Dataset, metas: &[TrajMeta]) -> f64 {
    let rets: Vec<f64> = dataset
        .trajectories
        .iter()
        .zip(metas)
        .filter(|(_, m)| m.controller == ControllerKind::Expert)
        .map(|(t, _)| t.episode_return())
        .collect();
    assert!(!rets.is_empty(), "no expert trajectories in dataset");
    rets.iter().sum::<f64>() / rets.len() as f64
}

// ── dataset report ──────────────────────────────────────────────────

pub const REPORT_BINS: usize = 10;

/// Return histogram, return-to-go range, and episode-length summary.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetReport {
    pub n_trajectories: usize,
    pub return_min: Option<f64>,
    pub return_max: Option<f64>,
    pub return_mean: Option<f64>,
    /// (bin lower edge, bin upper edge, count). Empty for empty datasets.
    pub histogram: Vec<(f64, f64, usize)>,
    pub rtg_min: Option<f64>,
    pub rtg_max: Option<f64>,
    pub len_min: Option<usize>,
    pub len_max: Option<usize>,
}

pub fn dataset_report(dataset: &Dataset) -> DatasetReport {
    if dataset.is_empty() {
        return DatasetReport {
            n_trajectories: 0,
            return_min: None,
            return_max: None,
            return_mean: None,
            histogram: Vec::new(),
            rtg_min: None,
            rtg_max: None,
            len_min: None,
            len_max: None,
        };
    }
    let returns = dataset.returns();
    let rmin = returns.iter().cloned().fold(f64::INFINITY, f64::min);
    let rmax = returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let width = ((rmax - rmin) / REPORT_BINS as f64).max(f64::MIN_POSITIVE);
    let mut histogram: Vec<(f64, f64, usize)> = (0..REPORT_BINS)
        .map(|i| (rmin + i as f64 * width, rmin + (i + 1) as f64 * width, 0))
        .collect();
    for &r in &returns {
        let bin = (((r - rmin) / width) as usize).min(REPORT_BINS - 1);
        histogram[bin].2 += 1;
    }
    let mut rtg_min = f64::INFINITY;
    let mut rtg_max = f64::NEG_INFINITY;
    for traj in &dataset.trajectories {
        for &r in &traj.rtg {
            rtg_min = rtg_min.min(r);
            rtg_max = rtg_max.max(r);
        }
    }
    DatasetReport {
        n_trajectories: dataset.len(),
        return_min: Some(rmin),
        return_max: Some(rmax),
        return_mean: Some(mean),
        histogram,
        rtg_min: Some(rtg_min),
        rtg_max: Some(rtg_max),
        len_min: dataset.trajectories.iter().map(Trajectory::len).min(),
        len_max: dataset.trajectories.iter().map(Trajectory::len).max(),
    }
}

impl std::fmt::Display for DatasetReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "trajectories: {}", self.n_trajectories)?;
        if let (Some(lo), Some(hi), Some(mean)) = (self.return_min, self.return_max, self.return_mean)
        {
            writeln!(f, "returns: min {lo:.3}  mean {mean:.3}  max {hi:.3}")?;
        }
        if let (Some(lo), Some(hi)) = (self.rtg_min, self.rtg_max) {
            writeln!(f, "rtg range: [{lo:.3}, {hi:.3}]")?;
        }
        if let (Some(lo), Some(hi)) = (self.len_min, self.len_max) {
            writeln!(f, "episode length: {lo}..{hi}")?;
        }
        for (lo, hi, count) in &self.histogram {
            writeln!(f, "  [{lo:9.3}, {hi:9.3})  {count}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn controller_quality_ordering_holds() {
        // rollout oracle: run each controller directly and compare returns
        let mean_return = |kind: ControllerKind| -> f64 {
            let mut total = 0.0;
            for i in 0..20u64 {
                let mut env = LinearPointEnv::new(i);
                let traj = rollout_controller(&mut env, kind, 0.3, 1000 + i);
                total += traj.episode_return();
            }
            total / 20.0
        };
        let expert = mean_return(ControllerKind::Expert);
        let medium = mean_return(ControllerKind::Medium);
        let random = mean_return(ControllerKind::Random);
        assert!(
            expert > medium && medium > random,
            "expected expert {expert} > medium {medium} > random {random}"
        );
        assert!(expert > -20.0, "expert should track the goal, got {expert}");
    }

    #[test]
    fn generation_is_bitwise_deterministic() {
        let spec = DatasetSpec {
            n_trajectories: 12,
            ..Default::default()
        };
        let a = generate_dataset(&spec).unwrap();
        let b = generate_dataset(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_spec_yields_empty_dataset() {
        let spec = DatasetSpec {
            n_trajectories: 0,
            ..Default::default()
        };
        let ds = generate_dataset(&spec).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn fraction_validation_rejects_bad_mixes() {
        let spec = DatasetSpec {
            expert_fraction: 0.5,
            medium_fraction: 0.5,
            random_fraction: 0.5,
            ..Default::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn spike_dataset_contains_a_contrast_pair() {
        let spec = DatasetSpec {
            env: EnvId::SpikeReward,
            n_trajectories: 8,
            ..Default::default()
        };
        let (ds, metas) = generate_dataset_labeled(&spec).unwrap();
        assert_eq!(ds.trajectories[0].states, ds.trajectories[1].states);
        assert_eq!(ds.trajectories[0].actions, ds.trajectories[1].actions);
        assert_ne!(ds.trajectories[0].rewards, ds.trajectories[1].rewards);
        assert!(metas[0].bonus_armed && !metas[1].bonus_armed);
        // the armed twin collected exactly one extra bonus
        let diff = ds.trajectories[0].episode_return() - ds.trajectories[1].episode_return();
        assert!((diff - SPIKE_BONUS).abs() < 1e-9);
    }

    #[test]
    fn replaying_a_trace_reproduces_rewards_exactly() {
        let spec = DatasetSpec {
            env: EnvId::SpikeReward,
            n_trajectories: 5,
            ..Default::default()
        };
        let (ds, metas) = generate_dataset_labeled(&spec).unwrap();
        for (i, traj) in ds.trajectories.iter().enumerate() {
            // re-drive the same env with the recorded actions
            let env_seed = if i < 2 {
                seeds::derive(spec.seed, u64::MAX)
            } else {
                seeds::derive(spec.seed, i as u64)
            };
            let mut env = make_env(spec.env, env_seed, metas[i].bonus_armed);
            let mut state = env.reset();
            for t in 0..traj.len() {
                assert_eq!(state.as_slice(), traj.state(t), "traj {i} step {t}");
                let (next, reward, _) = env.step(traj.action(t));
                assert_eq!(reward, traj.rewards[t], "traj {i} step {t}");
                state = next;
            }
        }
    }

    #[test]
    fn report_conserves_counts_and_tracks_rtg_extremes() {
        let spec = DatasetSpec {
            n_trajectories: 30,
            ..Default::default()
        };
        let ds = generate_dataset(&spec).unwrap();
        let report = dataset_report(&ds);
        let total: usize = report.histogram.iter().map(|(_, _, c)| c).sum();
        assert_eq!(total, 30);
        // oracle: direct scan over suffix sums
        let mut max_rtg = f64::NEG_INFINITY;
        for traj in &ds.trajectories {
            for &r in &crate::data::compute_rtg(&traj.rewards) {
                max_rtg = max_rtg.max(r);
            }
        }
        assert_eq!(report.rtg_max, Some(max_rtg));
    }

    #[test]
    fn empty_dataset_has_an_empty_report() {
        let report = dataset_report(&Dataset::new(2, 1));
        assert_eq!(report.n_trajectories, 0);
        assert!(report.histogram.is_empty());
        assert_eq!(report.return_mean, None);
    }

    #[test]
    fn mix_quotas_follow_the_fractions() {
        let spec = DatasetSpec {
            n_trajectories: 10,
            ..Default::default()
        };
        let (_, metas) = generate_dataset_labeled(&spec).unwrap();
        let count = |k: ControllerKind| metas.iter().filter(|m| m.controller == k).count();
        assert_eq!(count(ControllerKind::Expert), 1);
        assert_eq!(count(ControllerKind::Medium), 6);
        assert_eq!(count(ControllerKind::Random), 3);
    }
}
