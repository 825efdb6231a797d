//! Declarative run configuration: one TOML file drives dataset generation,
//! training, evaluation, benchmarking, and ablation sweeps.
//!
//! Unknown keys are rejected at parse time; every command echoes the fully
//! resolved configuration into its output directory so results are
//! reproducible from artifacts alone.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::envs::{DatasetSpec, EnvId};
use crate::error::{Error, Result};
use crate::inject::InjectorKind;
use crate::model::{ModelConfig, Variant};
use crate::train::TrainConfig;

/// Environment variable that, when set, prefixes every run's output
/// directory.
pub const OUT_ROOT_ENV: &str = "SLIMDT_OUT_ROOT";

/// Reference per-task evaluation targets for the classical control suites;
/// used when a config names one of these tasks instead of giving explicit
/// targets.
pub const TASK_TARGET_RTGS: [(&str, f64); 6] = [
    ("hopper", 7200.0),
    ("halfcheetah", 12000.0),
    ("walker2d", 5000.0),
    ("pen", 10000.0),
    ("hammer", 30000.0),
    ("door", 6000.0),
];

pub fn task_target_rtg(task: &str) -> Option<f64> {
    TASK_TARGET_RTGS
        .iter()
        .find(|(name, _)| *name == task)
        .map(|(_, v)| *v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub env: EnvId,
    pub n_trajectories: usize,
    pub expert_fraction: f64,
    pub medium_fraction: f64,
    pub random_fraction: f64,
    pub noise_sigma: f64,
    /// Generation seed; defaults to the run seed.
    pub seed: Option<u64>,
    /// Dataset file, relative to the output directory unless absolute.
    pub path: String,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DatasetSpec::default();
        DataSection {
            env: d.env,
            n_trajectories: d.n_trajectories,
            expert_fraction: d.expert_fraction,
            medium_fraction: d.medium_fraction,
            random_fraction: d.random_fraction,
            noise_sigma: d.noise_sigma,
            seed: None,
            path: "dataset.sdt".into(),
        }
    }
}

impl DataSection {
    pub fn spec(&self, run_seed: u64) -> DatasetSpec {
        DatasetSpec {
            env: self.env,
            n_trajectories: self.n_trajectories,
            expert_fraction: self.expert_fraction,
            medium_fraction: self.medium_fraction,
            random_fraction: self.random_fraction,
            noise_sigma: self.noise_sigma,
            seed: self.seed.unwrap_or(run_seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Variant,
    pub injector: InjectorKind,
    pub injector_causal_mask: bool,
    pub rtg_embed_dim: Option<usize>,
    pub injector_residual: bool,
    pub injector_dropout: bool,
    pub share_state_embed: bool,
    pub post_inject_after_final_ln: bool,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context_k: usize,
    pub embed_dim: usize,
    pub dropout: f64,
    pub action_tanh: bool,
    pub max_timestep: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            variant: m.variant,
            injector: m.injector,
            injector_causal_mask: m.injector_causal_mask,
            rtg_embed_dim: m.rtg_embed_dim,
            injector_residual: m.injector_residual,
            injector_dropout: m.injector_dropout,
            share_state_embed: m.share_state_embed,
            post_inject_after_final_ln: m.post_inject_after_final_ln,
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            context_k: m.context_k,
            embed_dim: m.embed_dim,
            dropout: m.dropout,
            action_tanh: m.action_tanh,
            max_timestep: m.max_timestep,
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self, d_s: usize, d_a: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            injector: self.injector,
            injector_causal_mask: self.injector_causal_mask,
            rtg_embed_dim: self.rtg_embed_dim,
            injector_residual: self.injector_residual,
            injector_dropout: self.injector_dropout,
            share_state_embed: self.share_state_embed,
            post_inject_after_final_ln: self.post_inject_after_final_ln,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            context_k: self.context_k,
            embed_dim: self.embed_dim,
            dropout: self.dropout,
            action_tanh: self.action_tanh,
            max_timestep: self.max_timestep,
            d_s,
            d_a,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Explicit evaluation targets; empty means: use the named task's
    /// reference target, else the dataset's 90th-percentile return.
    pub target_rtgs: Vec<f64>,
    pub task: Option<String>,
    pub n_episodes: usize,
    pub seeds: Vec<u64>,
    /// Additionally export one episode trace per (seed, target).
    pub write_traces: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            target_rtgs: Vec::new(),
            task: None,
            n_episodes: 100,
            seeds: vec![0, 1, 2, 3, 4],
            write_traces: false,
        }
    }
}

impl EvalSection {
    /// Resolution order: explicit targets, then the task table, then the
    /// dataset's 90th-percentile return.
    pub fn resolve_targets(&self, dataset: Option<&Dataset>) -> Result<Vec<f64>> {
        if !self.target_rtgs.is_empty() {
            return Ok(self.target_rtgs.clone());
        }
        if let Some(task) = &self.task {
            if let Some(v) = task_target_rtg(task) {
                return Ok(vec![v]);
            }
            return Err(Error::Config(format!(
                "eval.task {task:?} has no reference target; known tasks: {}",
                TASK_TARGET_RTGS
                    .iter()
                    .map(|(n, _)| *n)
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        match dataset {
            Some(ds) if !ds.is_empty() => Ok(vec![ds.return_percentile(90.0)]),
            _ => Err(Error::Config(
                "eval.target_rtgs is empty and no dataset is available to derive one".into(),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub variants: Vec<Variant>,
    pub injectors: Vec<InjectorKind>,
    pub causal_masks: Vec<bool>,
    /// Return-embedding widths swept for the concat injector.
    pub concat_dims: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Training length per cell (defaults to train.total_steps).
    pub total_steps: Option<u64>,
    /// Episodes per cell evaluation (defaults to eval.n_episodes).
    pub n_episodes: Option<usize>,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            variants: vec![Variant::Dt, Variant::SlimPre, Variant::SlimPost],
            injectors: vec![
                InjectorKind::Concat,
                InjectorKind::Adaln,
                InjectorKind::CrossAttnQToKv,
                InjectorKind::CrossAttnKToQv,
            ],
            causal_masks: vec![false, true],
            concat_dims: vec![32, 64, 128],
            seeds: vec![0],
            total_steps: None,
            n_episodes: None,
        }
    }
}

/// One ablation grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub variant: Variant,
    pub injector: InjectorKind,
    pub causal_mask: bool,
    pub rtg_embed_dim: Option<usize>,
    pub seed: u64,
}

impl AblationCell {
    /// Stable file-name id, e.g. `slim_pre-concat-d64-s0`.
    pub fn id(&self) -> String {
        if self.variant == Variant::Dt {
            return format!("dt-s{}", self.seed);
        }
        let mut id = format!("{}-{}", self.variant.name(), self.injector.name());
        if let Some(d) = self.rtg_embed_dim {
            id.push_str(&format!("-d{d}"));
        }
        if self.injector.is_cross_attention() {
            id.push_str(if self.causal_mask { "-mask" } else { "-nomask" });
        }
        id.push_str(&format!("-s{}", self.seed));
        id
    }
}

/// Expands the grid: variants x injector kinds x causal masks (cross
/// kinds) x concat widths (concat) x seeds. The plain-decoder baseline
/// contributes one cell per seed.
pub fn enumerate_cells(ablate: &AblateSection) -> Vec<AblationCell> {
    let mut cells = Vec::new();
    for &variant in &ablate.variants {
        if variant == Variant::Dt {
            for &seed in &ablate.seeds {
                cells.push(AblationCell {
                    variant,
                    injector: InjectorKind::Concat,
                    causal_mask: false,
                    rtg_embed_dim: None,
                    seed,
                });
            }
            continue;
        }
        for &injector in &ablate.injectors {
            let dim_choices: Vec<Option<usize>> = if injector == InjectorKind::Concat {
                ablate.concat_dims.iter().map(|&d| Some(d)).collect()
            } else {
                vec![None]
            };
            let mask_choices: Vec<bool> = if injector.is_cross_attention() {
                ablate.causal_masks.clone()
            } else {
                vec![false]
            };
            for &dim in &dim_choices {
                for &mask in &mask_choices {
                    for &seed in &ablate.seeds {
                        cells.push(AblationCell {
                            variant,
                            injector,
                            causal_mask: mask,
                            rtg_embed_dim: dim,
                            seed,
                        });
                    }
                }
            }
        }
    }
    cells
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: String,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub ablate: AblateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: "runs/default".into(),
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.out_dir.is_empty() {
            return Err(Error::Config("out_dir must not be empty".into()));
        }
        if self.model.n_layers == 0 {
            return Err(Error::Config("model.n_layers must be >= 1".into()));
        }
        let env = self.data.env;
        self.model
            .to_model_config(env.state_dim(), env.action_dim())
            .validate()?;
        self.train.validate()?;
        self.data.spec(self.seed).validate()?;
        if self.eval.seeds.is_empty() {
            return Err(Error::Config("eval.seeds must not be empty".into()));
        }
        if self.ablate.seeds.is_empty() {
            return Err(Error::Config("ablate.seeds must not be empty".into()));
        }
        if self.ablate.variants.is_empty() {
            return Err(Error::Config("ablate.variants must not be empty".into()));
        }
        Ok(())
    }

    /// Output directory, honoring the `SLIMDT_OUT_ROOT` override.
    pub fn resolved_out_dir(&self) -> PathBuf {
        match env::var(OUT_ROOT_ENV) {
            Ok(root) if !root.is_empty() => Path::new(&root).join(&self.out_dir),
            _ => PathBuf::from(&self.out_dir),
        }
    }

    /// Dataset file path, relative paths anchored at the output directory.
    pub fn dataset_path(&self) -> PathBuf {
        let p = Path::new(&self.data.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.resolved_out_dir().join(p)
        }
    }

    /// Training configuration with the run seed resolved in.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if t.seed == 0 {
            t.seed = self.seed;
        }
        t
    }

    pub fn model_config(&self) -> ModelConfig {
        let env = self.data.env;
        self.model.to_model_config(env.state_dim(), env.action_dim())
    }

    /// Serializes the fully resolved configuration (defaults included).
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Writes `config_echo.toml` into the run directory.
    pub fn write_echo(&self) -> Result<PathBuf> {
        let dir = self.resolved_out_dir();
        fs::create_dir_all(&dir)?;
        let path = dir.join("config_echo.toml");
        fs::write(&path, self.to_toml())?;
        Ok(path)
    }
}

pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig =
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_run_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    parse_run_config(&text)
}
