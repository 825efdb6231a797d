//! Causal decoder models over trajectory windows.
//!
//! Three sequence layouts share one GPT-style decoder:
//!
//! * `Dt` — three tokens per step (return', state', action'); actions are
//!   predicted from the state-token outputs, so the decoder sequence has
//!   length 3k;
//! * `SlimPre` — the return is fused into the state representation by a
//!   condition injector *before* the decoder, which then sees only
//!   (state', action') pairs: length 2k;
//! * `SlimPost` — the decoder runs on plain (state', action') embeddings
//!   and the injector modulates its state-position outputs just before the
//!   action head;
//! * `SlimPrePost` — both, with separate injector parameters.

mod checkpoint;
mod decoder;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::WindowBatch;
use crate::error::{Error, Result};
use crate::inject::{self, BoundInjector, InjectorKind, InjectorSettings};
use crate::numerics::{Scope, Tape, TensorId};

pub const LN_EPS: f64 = 1e-5;

/// Weight init scale for linear maps and embedding tables.
const INIT_STD: f64 = 0.02;

// ── configuration ───────────────────────────────────────────────────

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Dt,
    SlimPre,
    SlimPost,
    SlimPrePost,
}

pub const ALL_VARIANTS: [Variant; 4] = [
    Variant::Dt,
    Variant::SlimPre,
    Variant::SlimPost,
    Variant::SlimPrePost,
];

impl Variant {
    pub fn tokens_per_step(self) -> usize {
        match self {
            Variant::Dt => 3,
            _ => 2,
        }
    }

    pub fn uses_pre_injector(self) -> bool {
        matches!(self, Variant::SlimPre | Variant::SlimPrePost)
    }

    pub fn uses_post_injector(self) -> bool {
        matches!(self, Variant::SlimPost | Variant::SlimPrePost)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dt => "dt",
            Variant::SlimPre => "slim_pre",
            Variant::SlimPost => "slim_post",
            Variant::SlimPrePost => "slim_pre_post",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ALL_VARIANTS.iter().copied().find(|v| v.name() == s)
    }
}

/// Full architecture description; every hyperparameter a forward pass
/// depends on lives here (and is echoed into checkpoints).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub injector: InjectorKind,
    /// Restrict the injector's cross-attention to preceding steps.
    pub injector_causal_mask: bool,
    /// Width the scalar return is embedded to for the concat injector;
    /// defaults to half the hidden size.
    pub rtg_embed_dim: Option<usize>,
    /// Adds the state input back onto the cross-attention output.
    pub injector_residual: bool,
    /// Applies dropout to the injector output while training.
    pub injector_dropout: bool,
    /// Reuse the model state embedding for the injector's state input
    /// (pre-decoder adaln/cross-attention); false gives the injector its
    /// own encoder parameters.
    pub share_state_embed: bool,
    /// Post-decoder injection reads decoder outputs after the final layer
    /// norm (false: before it).
    pub post_inject_after_final_ln: bool,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context_k: usize,
    pub embed_dim: usize,
    pub dropout: f64,
    /// Squash action predictions with tanh for bounded action spaces.
    pub action_tanh: bool,
    /// Capacity of the learned absolute-timestep table.
    pub max_timestep: usize,
    pub d_s: usize,
    pub d_a: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::SlimPre,
            injector: InjectorKind::Concat,
            injector_causal_mask: false,
            rtg_embed_dim: None,
            injector_residual: false,
            injector_dropout: false,
            share_state_embed: true,
            post_inject_after_final_ln: true,
            n_layers: 3,
            n_heads: 1,
            context_k: 20,
            embed_dim: 128,
            dropout: 0.1,
            action_tanh: false,
            max_timestep: 512,
            d_s: 2,
            d_a: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.context_k == 0 {
            return fail("model.context_k must be >= 1".into());
        }
        if self.embed_dim == 0 {
            return fail("model.embed_dim must be >= 1".into());
        }
        if self.n_heads == 0 {
            return fail("model.n_heads must be >= 1".into());
        }
        if self.embed_dim % self.n_heads != 0 {
            return fail(format!(
                "model.embed_dim {} must be divisible by n_heads {}",
                self.embed_dim, self.n_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("model.dropout {} must be in [0, 1)", self.dropout));
        }
        if self.d_s == 0 || self.d_a == 0 {
            return fail("model.d_s and model.d_a must be >= 1".into());
        }
        if self.max_timestep == 0 {
            return fail("model.max_timestep must be >= 1".into());
        }
        if let Some(r) = self.rtg_embed_dim {
            if r == 0 {
                return fail("model.rtg_embed_dim must be >= 1".into());
            }
        }
        if self.injector_causal_mask && !self.injector.is_cross_attention() {
            return fail(format!(
                "model.injector_causal_mask applies to cross-attention injectors, not {:?}",
                self.injector
            ));
        }
        if self.injector_residual && !self.injector.is_cross_attention() {
            return fail(format!(
                "model.injector_residual applies to cross-attention injectors, not {:?}",
                self.injector
            ));
        }
        Ok(())
    }

    /// Decoder sequence length for this variant's assembly.
    pub fn seq_len(&self) -> usize {
        self.variant.tokens_per_step() * self.context_k
    }

    pub fn resolved_rtg_embed_dim(&self) -> usize {
        self.rtg_embed_dim
            .unwrap_or_else(|| inject::default_rtg_embed_dim(self.embed_dim))
    }

    pub fn injector_settings(&self) -> InjectorSettings {
        InjectorSettings {
            kind: self.injector,
            rtg_embed_dim: self.resolved_rtg_embed_dim(),
            causal_mask: self.injector_causal_mask,
            residual: self.injector_residual,
            dropout: self.injector_dropout,
        }
    }

    /// Whether the model owns a state embedding (as opposed to the concat
    /// injector's joint encoder or an unshared injector-side encoder).
    fn has_model_state_embed(&self) -> bool {
        match self.variant {
            Variant::Dt | Variant::SlimPost => true,
            Variant::SlimPre | Variant::SlimPrePost => match self.injector {
                InjectorKind::Concat => false,
                _ => self.share_state_embed,
            },
        }
    }

    /// Pre-decoder injector's state-side input width.
    fn pre_inject_d_in(&self) -> usize {
        match self.injector {
            InjectorKind::Concat => self.d_s,
            _ => self.embed_dim,
        }
    }
}

// ── parameters ──────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Named parameter registry; iteration order is construction order, which
/// is deterministic for a given config.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        let name = name.into();
        assert_eq!(data.len(), shape.iter().product::<usize>());
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        self.index.insert(name.clone(), self.params.len());
        let n = data.len();
        self.params.push(Param {
            name,
            shape,
            data,
            grad: vec![0.0; n],
        });
    }

    pub fn index_of(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get(&self, name: &str) -> &Param {
        &self.params[self.index_of(name)]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param {
        let i = self.index_of(name);
        &mut self.params[i]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn by_index(&self, i: usize) -> &Param {
        &self.params[i]
    }

    /// Mutable view of one parameter's values, by construction index.
    pub fn data_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.params[i].data
    }

    /// Total scalar parameter count.
    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn grad_l2_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, s: f64) {
        for p in &mut self.params {
            for g in &mut p.grad {
                *g *= s;
            }
        }
    }
}

struct ParamBuilder {
    store: ParamStore,
    rng: ChaCha8Rng,
}

impl ParamBuilder {
    fn normal(&mut self, name: &str, shape: &[usize]) {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| self.rng.sample::<f64, _>(StandardNormal) * INIT_STD)
            .collect();
        self.store.add(name, shape.to_vec(), data);
    }

    fn zeros(&mut self, name: &str, shape: &[usize]) {
        let n: usize = shape.iter().product();
        self.store.add(name, shape.to_vec(), vec![0.0; n]);
    }

    fn ones(&mut self, name: &str, shape: &[usize]) {
        let n: usize = shape.iter().product();
        self.store.add(name, shape.to_vec(), vec![1.0; n]);
    }

    fn linear(&mut self, prefix: &str, d_in: usize, d_out: usize) {
        self.normal(&format!("{prefix}.w"), &[d_in, d_out]);
        self.zeros(&format!("{prefix}.b"), &[d_out]);
    }
}

fn injector_param_specs(builder: &mut ParamBuilder, cfg: &ModelConfig, prefix: &str, d_in: usize) {
    let h = cfg.embed_dim;
    match cfg.injector {
        InjectorKind::Concat => {
            let r = cfg.resolved_rtg_embed_dim();
            builder.linear(&format!("{prefix}.er"), 1, r);
            builder.linear(&format!("{prefix}.enc"), r + d_in, h);
        }
        InjectorKind::Adaln => {
            builder.linear(&format!("{prefix}.er"), 1, h);
            // identity modulation at init: zero weights, bias gives
            // gamma = 1, beta = 0
            builder.zeros(&format!("{prefix}.mod.w"), &[h, 2 * h]);
            let mut b = vec![0.0; 2 * h];
            b[..h].fill(1.0);
            builder.store.add(format!("{prefix}.mod.b"), vec![2 * h], b);
        }
        _ => {
            builder.linear(&format!("{prefix}.er"), 1, h);
            builder.linear(&format!("{prefix}.wq"), h, h);
            builder.linear(&format!("{prefix}.wk"), h, h);
            builder.linear(&format!("{prefix}.wv"), h, h);
            builder.linear(&format!("{prefix}.wo"), h, h);
        }
    }
}

fn build_params(cfg: &ModelConfig, seed: u64) -> ParamStore {
    let h = cfg.embed_dim;
    let mut b = ParamBuilder {
        store: ParamStore::default(),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    if cfg.variant == Variant::Dt {
        b.linear("embed_rtg", 1, h);
    }
    if cfg.has_model_state_embed() {
        b.linear("embed_state", cfg.d_s, h);
    }
    b.linear("embed_action", cfg.d_a, h);
    b.normal("embed_timestep.table", &[cfg.max_timestep, h]);
    for layer in 0..cfg.n_layers {
        let p = format!("layer{layer}");
        b.ones(&format!("{p}.ln1.g"), &[h]);
        b.zeros(&format!("{p}.ln1.b"), &[h]);
        b.linear(&format!("{p}.attn.wq"), h, h);
        b.linear(&format!("{p}.attn.wk"), h, h);
        b.linear(&format!("{p}.attn.wv"), h, h);
        b.linear(&format!("{p}.attn.wo"), h, h);
        b.ones(&format!("{p}.ln2.g"), &[h]);
        b.zeros(&format!("{p}.ln2.b"), &[h]);
        b.linear(&format!("{p}.mlp.w1"), h, 4 * h);
        b.linear(&format!("{p}.mlp.w2"), 4 * h, h);
    }
    b.ones("ln_f.g", &[h]);
    b.zeros("ln_f.b", &[h]);
    if cfg.variant.uses_pre_injector() {
        if !cfg.share_state_embed && cfg.injector != InjectorKind::Concat {
            b.linear("inject_pre.es", cfg.d_s, h);
        }
        injector_param_specs(&mut b, cfg, "inject_pre", cfg.pre_inject_d_in());
    }
    if cfg.variant.uses_post_injector() {
        injector_param_specs(&mut b, cfg, "inject_post", h);
    }
    b.linear("head", h, cfg.d_a);
    b.store
}

// ── forward machinery ───────────────────────────────────────────────

/// Binds store parameters onto a tape (once each) and remembers the
/// pairing so gradients can be pulled back after backward.
pub(crate) struct Binder<'a> {
    store: &'a ParamStore,
    bound: Vec<Option<TensorId>>,
}

impl<'a> Binder<'a> {
    fn new(store: &'a ParamStore) -> Self {
        Binder {
            bound: vec![None; store.len()],
            store,
        }
    }

    pub(crate) fn get(&mut self, tape: &mut Tape, name: &str) -> TensorId {
        let idx = self.store.index_of(name);
        if let Some(id) = self.bound[idx] {
            return id;
        }
        let p = self.store.by_index(idx);
        let id = tape.leaf(p.data.clone(), &p.shape, true);
        self.bound[idx] = Some(id);
        id
    }

    fn into_bindings(self) -> Vec<(usize, TensorId)> {
        self.bound
            .into_iter()
            .enumerate()
            .filter_map(|(i, id)| id.map(|id| (i, id)))
            .collect()
    }
}

/// Result of one forward pass: per-window action predictions plus the
/// parameter-to-leaf pairing for gradient extraction.
pub struct Forward {
    /// [B, k, d_a] predictions read at the state slots.
    pub preds: TensorId,
    pub bindings: Vec<(usize, TensorId)>,
    pub seq_len: usize,
}

/// Decoder token layout for a variant: tokens per step and the in-sequence
/// offset of the state slot whose output feeds the action head.
pub fn token_layout(variant: Variant) -> (usize, usize) {
    match variant {
        Variant::Dt => (3, 1), // (return', state', action')
        _ => (2, 0),           // (state', action')
    }
}

/// Positions whose decoder outputs feed the action head.
pub fn action_read_positions(variant: Variant, k: usize) -> Vec<usize> {
    let (tps, state_slot) = token_layout(variant);
    (0..k).map(|t| t * tps + state_slot).collect()
}

/// Decoder-level validity per token: state/return tokens follow the pad
/// mask, action tokens follow the action mask (which inference uses to
/// blank the final, not-yet-taken action).
pub fn build_token_mask(variant: Variant, batch: &WindowBatch) -> Vec<bool> {
    let (tps, _) = token_layout(variant);
    let (b, k) = (batch.batch, batch.k);
    let mut mask = vec![false; b * tps * k];
    for bi in 0..b {
        for t in 0..k {
            let valid = batch.pad_mask[bi * k + t];
            let action_valid = batch.action_mask[bi * k + t];
            let base = bi * tps * k + t * tps;
            match variant {
                Variant::Dt => {
                    mask[base] = valid;
                    mask[base + 1] = valid;
                    mask[base + 2] = action_valid;
                }
                _ => {
                    mask[base] = valid;
                    mask[base + 1] = action_valid;
                }
            }
        }
    }
    mask
}

pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Builds a model with seeded random parameters. Construction is
    /// deterministic: the same config and seed give identical parameters.
    pub fn new(cfg: ModelConfig, seed: u64) -> Self {
        cfg.validate().expect("invalid model config");
        let params = build_params(&cfg, seed);
        Model { cfg, params }
    }

    pub fn param_count(&self) -> usize {
        self.params.n_scalars()
    }

    fn bind_injector(
        &self,
        tape: &mut Tape,
        bind: &mut Binder,
        prefix: &str,
    ) -> BoundInjector {
        let g = |tape: &mut Tape, bind: &mut Binder, n: String| bind.get(tape, &n);
        match self.cfg.injector {
            InjectorKind::Concat => BoundInjector::Concat(inject::ConcatParams {
                er_w: g(tape, bind, format!("{prefix}.er.w")),
                er_b: g(tape, bind, format!("{prefix}.er.b")),
                enc_w: g(tape, bind, format!("{prefix}.enc.w")),
                enc_b: g(tape, bind, format!("{prefix}.enc.b")),
            }),
            InjectorKind::Adaln => BoundInjector::Adaln(inject::AdalnParams {
                er_w: g(tape, bind, format!("{prefix}.er.w")),
                er_b: g(tape, bind, format!("{prefix}.er.b")),
                mod_w: g(tape, bind, format!("{prefix}.mod.w")),
                mod_b: g(tape, bind, format!("{prefix}.mod.b")),
            }),
            _ => BoundInjector::CrossAttn(inject::CrossAttnParams {
                er_w: g(tape, bind, format!("{prefix}.er.w")),
                er_b: g(tape, bind, format!("{prefix}.er.b")),
                wq: g(tape, bind, format!("{prefix}.wq.w")),
                bq: g(tape, bind, format!("{prefix}.wq.b")),
                wk: g(tape, bind, format!("{prefix}.wk.w")),
                bk: g(tape, bind, format!("{prefix}.wk.b")),
                wv: g(tape, bind, format!("{prefix}.wv.w")),
                bv: g(tape, bind, format!("{prefix}.wv.b")),
                wo: g(tape, bind, format!("{prefix}.wo.w")),
                bo: g(tape, bind, format!("{prefix}.wo.b")),
            }),
        }
    }

    /// Runs the variant-appropriate forward pass over a window batch.
    pub fn forward(&self, tape: &mut Tape, batch: &WindowBatch, training: bool) -> Forward {
        let cfg = &self.cfg;
        assert_eq!(batch.d_s, cfg.d_s, "batch state dim {} != model {}", batch.d_s, cfg.d_s);
        assert_eq!(batch.d_a, cfg.d_a, "batch action dim {} != model {}", batch.d_a, cfg.d_a);
        assert_eq!(batch.k, cfg.context_k, "batch k {} != model k {}", batch.k, cfg.context_k);
        for &t in &batch.timesteps {
            assert!(
                t < cfg.max_timestep,
                "timestep {t} exceeds the table capacity {}",
                cfg.max_timestep
            );
        }
        let (b, k) = (batch.batch, batch.k);
        let mut bind = Binder::new(&self.params);

        let rtg3 = tape.constant(batch.rtg.clone(), &[b, k, 1]);
        let states = tape.constant(batch.states.clone(), &[b, k, cfg.d_s]);
        let actions = tape.constant(batch.actions.clone(), &[b, k, cfg.d_a]);

        tape.set_scope(Scope::Embed);
        let table = bind.get(tape, "embed_timestep.table");
        let time = tape.embedding_lookup(table, &batch.timesteps, &[b, k]);
        let aw = bind.get(tape, "embed_action.w");
        let ab = bind.get(tape, "embed_action.b");
        let a_lin = tape.linear(actions, aw, ab);
        let a_tok = tape.add(a_lin, time);
        tape.set_scope(Scope::Other);

        let settings = cfg.injector_settings();
        let tokens = match cfg.variant {
            Variant::Dt => {
                tape.set_scope(Scope::Embed);
                let rw = bind.get(tape, "embed_rtg.w");
                let rb = bind.get(tape, "embed_rtg.b");
                let r_lin = tape.linear(rtg3, rw, rb);
                let r_tok = tape.add(r_lin, time);
                let sw = bind.get(tape, "embed_state.w");
                let sb = bind.get(tape, "embed_state.b");
                let s_lin = tape.linear(states, sw, sb);
                let s_tok = tape.add(s_lin, time);
                tape.set_scope(Scope::Other);
                tape.interleave(&[r_tok, s_tok, a_tok])
            }
            Variant::SlimPost => {
                tape.set_scope(Scope::Embed);
                let sw = bind.get(tape, "embed_state.w");
                let sb = bind.get(tape, "embed_state.b");
                let s_lin = tape.linear(states, sw, sb);
                let s_tok = tape.add(s_lin, time);
                tape.set_scope(Scope::Other);
                tape.interleave(&[s_tok, a_tok])
            }
            Variant::SlimPre | Variant::SlimPrePost => {
                let s_side = match cfg.injector {
                    InjectorKind::Concat => states,
                    _ => {
                        if cfg.share_state_embed {
                            tape.set_scope(Scope::Embed);
                            let sw = bind.get(tape, "embed_state.w");
                            let sb = bind.get(tape, "embed_state.b");
                            let out = tape.linear(states, sw, sb);
                            tape.set_scope(Scope::Other);
                            out
                        } else {
                            tape.set_scope(Scope::InjectLinear);
                            let sw = bind.get(tape, "inject_pre.es.w");
                            let sb = bind.get(tape, "inject_pre.es.b");
                            let out = tape.linear(states, sw, sb);
                            tape.set_scope(Scope::Other);
                            out
                        }
                    }
                };
                let bound = self.bind_injector(tape, &mut bind, "inject_pre");
                let injected = inject::forward(
                    tape,
                    &bound,
                    &settings,
                    rtg3,
                    s_side,
                    &batch.pad_mask,
                    cfg.n_heads,
                    LN_EPS,
                    cfg.dropout,
                    training,
                );
                let s_tok = tape.add(injected, time);
                tape.interleave(&[s_tok, a_tok])
            }
        };

        let tokens = tape.dropout(tokens, cfg.dropout, training);
        let token_mask = build_token_mask(cfg.variant, batch);
        let seq_len = cfg.variant.tokens_per_step() * k;
        let attn_mask = inject::attention_mask(&token_mask, b, seq_len, true);
        let dec = decoder::forward(tape, &mut bind, cfg, tokens, &attn_mask, training);

        let read = action_read_positions(cfg.variant, k);
        let source = if cfg.variant.uses_post_injector() && !cfg.post_inject_after_final_ln {
            dec.hidden
        } else {
            dec.normed
        };
        let mut state_out = tape.gather_seq(source, &read);

        if cfg.variant.uses_post_injector() {
            let bound = self.bind_injector(tape, &mut bind, "inject_post");
            state_out = inject::forward(
                tape,
                &bound,
                &settings,
                rtg3,
                state_out,
                &batch.pad_mask,
                cfg.n_heads,
                LN_EPS,
                cfg.dropout,
                training,
            );
        }

        tape.set_scope(Scope::Head);
        let hw = bind.get(tape, "head.w");
        let hb = bind.get(tape, "head.b");
        let mut preds = tape.linear(state_out, hw, hb);
        tape.set_scope(Scope::Other);
        if cfg.action_tanh {
            preds = tape.tanh(preds);
        }
        Forward {
            preds,
            bindings: bind.into_bindings(),
            seq_len,
        }
    }

    /// Mean squared error over valid positions and action dimensions;
    /// exactly zero for a fully padded batch.
    pub fn action_loss(&self, tape: &mut Tape, fwd: &Forward, batch: &WindowBatch) -> TensorId {
        let (b, k, d_a) = (batch.batch, batch.k, batch.d_a);
        let targets = tape.constant(batch.target_actions.clone(), &[b, k, d_a]);
        let mut weights = vec![0.0; b * k * d_a];
        for pos in 0..b * k {
            if batch.pad_mask[pos] {
                weights[pos * d_a..(pos + 1) * d_a].fill(1.0);
            }
        }
        tape.mse_weighted(fwd.preds, targets, &weights)
    }

    /// Adds the tape's parameter gradients into the store's accumulators.
    pub fn accumulate_grads(&mut self, tape: &Tape, fwd: &Forward) {
        for &(idx, id) in &fwd.bindings {
            let g = tape
                .grad(id)
                .expect("accumulate_grads requires a completed backward pass");
            let p = &mut self.params.params[idx];
            for (pg, &gv) in p.grad.iter_mut().zip(g.iter()) {
                *pg += gv;
            }
        }
    }

    /// Runs just the decoder stack on raw token embeddings (every position
    /// valid), returning the post-final-norm outputs. The probe used by the
    /// causality checks.
    pub fn decoder_outputs_for_tokens(
        &self,
        tokens: &[f64],
        b: usize,
        l: usize,
        training: bool,
    ) -> Vec<f64> {
        let h = self.cfg.embed_dim;
        assert_eq!(tokens.len(), b * l * h, "token buffer shape mismatch");
        let mut tape = Tape::new(0);
        let mut bind = Binder::new(&self.params);
        let toks = tape.constant(tokens.to_vec(), &[b, l, h]);
        let token_mask = vec![true; b * l];
        let attn_mask = inject::attention_mask(&token_mask, b, l, true);
        let out = decoder::forward(&mut tape, &mut bind, &self.cfg, toks, &attn_mask, training);
        tape.data(out.normed).to_vec()
    }
}
