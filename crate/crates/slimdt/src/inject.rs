//! Condition injectors: fuse the return-to-go sequence into state
//! representations so the decoder never sees a separate return token.
//!
//! Two families:
//!
//! * point-to-point — [`inject_concat`] and [`inject_adaln`] touch only the
//!   same-timestep return, so position t of the output depends on nothing
//!   but rtg[t] and state[t];
//! * sequence-to-sequence — [`inject_cross_attn`] lets every window
//!   position's return modulate every state position (optionally restricted
//!   to preceding steps by a causal mask), which is what lets reward-channel
//!   events reach states that do not encode them.
//!
//! Four cross-attention wirings are selectable. Only the two that put the
//! state sequence into V train well in practice; the other two are kept for
//! the ablation harness.

use serde::{Deserialize, Serialize};

use crate::numerics::{Scope, Tape, TensorId};

/// Which injector fuses returns into states.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectorKind {
    /// Embed the return, concatenate with the state, re-encode linearly.
    Concat,
    /// Layer norm with return-conditioned scale and shift.
    Adaln,
    /// Q from returns; K, V from states.
    CrossAttnQToKv,
    /// K from returns; Q, V from states.
    CrossAttnKToQv,
    /// K, V from returns; Q from states (textbook assignment; does not
    /// converge as a return injector, kept for ablations).
    CrossAttnKvToQ,
    /// Q, V from returns; K from states (does not converge, kept for
    /// ablations).
    CrossAttnQvToK,
}

pub const ALL_KINDS: [InjectorKind; 6] = [
    InjectorKind::Concat,
    InjectorKind::Adaln,
    InjectorKind::CrossAttnQToKv,
    InjectorKind::CrossAttnKToQv,
    InjectorKind::CrossAttnKvToQ,
    InjectorKind::CrossAttnQvToK,
];

/// Input side feeding an attention projection.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Side {
    Rtg,
    State,
}

impl InjectorKind {
    pub fn is_cross_attention(self) -> bool {
        matches!(
            self,
            InjectorKind::CrossAttnQToKv
                | InjectorKind::CrossAttnKToQv
                | InjectorKind::CrossAttnKvToQ
                | InjectorKind::CrossAttnQvToK
        )
    }

    /// Point-to-point kinds touch only the same-timestep return.
    pub fn is_point_to_point(self) -> bool {
        !self.is_cross_attention()
    }

    /// (Q, K, V) sources for cross-attention kinds.
    pub fn sources(self) -> (Side, Side, Side) {
        match self {
            InjectorKind::CrossAttnQToKv => (Side::Rtg, Side::State, Side::State),
            InjectorKind::CrossAttnKToQv => (Side::State, Side::Rtg, Side::State),
            InjectorKind::CrossAttnKvToQ => (Side::State, Side::Rtg, Side::Rtg),
            InjectorKind::CrossAttnQvToK => (Side::Rtg, Side::State, Side::Rtg),
            _ => panic!("sources: {self:?} is not a cross-attention kind"),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InjectorKind::Concat => "concat",
            InjectorKind::Adaln => "adaln",
            InjectorKind::CrossAttnQToKv => "cross_attn_q_to_kv",
            InjectorKind::CrossAttnKToQv => "cross_attn_k_to_qv",
            InjectorKind::CrossAttnKvToQ => "cross_attn_kv_to_q",
            InjectorKind::CrossAttnQvToK => "cross_attn_qv_to_k",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ALL_KINDS.iter().copied().find(|k| k.name() == s)
    }
}

/// Best concat width in the dimension sweep: half the hidden size.
pub fn default_rtg_embed_dim(embed_dim: usize) -> usize {
    (embed_dim / 2).max(1)
}

// ── bound parameters ────────────────────────────────────────────────

/// Tape handles for one injector's parameters, bound for one forward pass.
pub struct ConcatParams {
    pub er_w: TensorId, // [1, rtg_embed_dim]
    pub er_b: TensorId,
    pub enc_w: TensorId, // [rtg_embed_dim + d_in, h]
    pub enc_b: TensorId,
}

pub struct AdalnParams {
    pub er_w: TensorId, // [1, h]
    pub er_b: TensorId,
    pub mod_w: TensorId, // [h, 2h]: columns 0..h produce gamma, h..2h beta
    pub mod_b: TensorId,
}

pub struct CrossAttnParams {
    pub er_w: TensorId, // [1, h]
    pub er_b: TensorId,
    pub wq: TensorId,
    pub bq: TensorId,
    pub wk: TensorId,
    pub bk: TensorId,
    pub wv: TensorId,
    pub bv: TensorId,
    pub wo: TensorId,
    pub bo: TensorId,
}

pub enum BoundInjector {
    Concat(ConcatParams),
    Adaln(AdalnParams),
    CrossAttn(CrossAttnParams),
}

// ── forward passes ──────────────────────────────────────────────────

/// s'_t = Enc(concat(Er(rtg_t), s_t)); strictly per-timestep.
///
/// `s_side` may be raw states (pre-decoder placement) or decoder outputs
/// (post-decoder placement); the encoder width adapts.
pub fn inject_concat(
    tape: &mut Tape,
    p: &ConcatParams,
    rtg3: TensorId,
    s_side: TensorId,
) -> TensorId {
    tape.set_scope(Scope::InjectLinear);
    let er = tape.linear(rtg3, p.er_w, p.er_b);
    let cat = tape.concat_last(er, s_side);
    let out = tape.linear(cat, p.enc_w, p.enc_b);
    tape.set_scope(Scope::Other);
    out
}

/// s'_t = gamma(Er(rtg_t)) * layer_norm(s_t) + beta(Er(rtg_t)).
///
/// The modulation map is a single linear layer; initialized to zero weights
/// with a bias producing gamma = 1, beta = 0 it reduces to a plain layer
/// norm of the state input.
pub fn inject_adaln(
    tape: &mut Tape,
    p: &AdalnParams,
    rtg3: TensorId,
    s_emb: TensorId,
    eps: f64,
) -> TensorId {
    let h = *tape.shape(s_emb).last().unwrap();
    tape.set_scope(Scope::InjectLinear);
    let z = tape.linear(rtg3, p.er_w, p.er_b);
    let gamma_beta = tape.linear(z, p.mod_w, p.mod_b);
    tape.set_scope(Scope::Other);
    let gamma = tape.slice_last(gamma_beta, 0, h);
    let beta = tape.slice_last(gamma_beta, h, h);
    let normed = tape.layer_norm(s_emb, eps);
    let scaled = tape.mul(normed, gamma);
    tape.add(scaled, beta)
}

/// Single attention pass between the return and state sequences, with the
/// kind choosing which side feeds Q, K, and V, followed by a learned output
/// projection.
///
/// `pad_mask` (length B*k, true = valid) always masks padded key positions;
/// `causal` additionally restricts position t to keys at positions <= t.
/// A fully masked score row yields a zero attention output for that
/// position.
pub fn inject_cross_attn(
    tape: &mut Tape,
    p: &CrossAttnParams,
    kind: InjectorKind,
    rtg3: TensorId,
    s_emb: TensorId,
    pad_mask: &[bool],
    causal: bool,
    n_heads: usize,
) -> TensorId {
    let shape = tape.shape(s_emb).to_vec();
    let (b, k, h) = (shape[0], shape[1], shape[2]);
    assert_eq!(h % n_heads, 0, "embed dim {h} not divisible by {n_heads} heads");
    assert_eq!(pad_mask.len(), b * k, "pad mask length mismatch");
    let dh = h / n_heads;

    tape.set_scope(Scope::InjectLinear);
    let er = tape.linear(rtg3, p.er_w, p.er_b);
    let pick = |side: Side| match side {
        Side::Rtg => er,
        Side::State => s_emb,
    };
    let (q_src, k_src, v_src) = kind.sources();
    let q = tape.linear(pick(q_src), p.wq, p.bq);
    let key = tape.linear(pick(k_src), p.wk, p.bk);
    let v = tape.linear(pick(v_src), p.wv, p.bv);
    tape.set_scope(Scope::Other);

    let mask = attention_mask(pad_mask, b, k, causal);
    let mut head_outs = Vec::with_capacity(n_heads);
    for head in 0..n_heads {
        let qh = tape.slice_last(q, head * dh, dh);
        let kh = tape.slice_last(key, head * dh, dh);
        let vh = tape.slice_last(v, head * dh, dh);
        tape.set_scope(Scope::InjectScore);
        let scores = tape.bmm(qh, kh, true);
        tape.set_scope(Scope::Other);
        let scaled = tape.mul_scalar(scores, 1.0 / (dh as f64).sqrt());
        let probs = tape.softmax_rows(scaled, Some(&mask));
        tape.set_scope(Scope::InjectMix);
        let mixed = tape.bmm(probs, vh, false);
        tape.set_scope(Scope::Other);
        head_outs.push(mixed);
    }
    let merged = head_outs
        .into_iter()
        .reduce(|a, b| tape.concat_last(a, b))
        .unwrap();
    tape.set_scope(Scope::InjectLinear);
    let out = tape.linear(merged, p.wo, p.bo);
    tape.set_scope(Scope::Other);
    out
}

/// Key-side validity mask: entry (b, i, j) allows attention from position i
/// to position j when j is a valid (unpadded) step and, under the causal
/// flag, j <= i.
pub fn attention_mask(pad_mask: &[bool], b: usize, k: usize, causal: bool) -> Vec<bool> {
    let mut mask = vec![false; b * k * k];
    for bi in 0..b {
        for i in 0..k {
            for j in 0..k {
                mask[(bi * k + i) * k + j] = pad_mask[bi * k + j] && (!causal || j <= i);
            }
        }
    }
    mask
}

/// Runtime injector settings resolved from the model configuration.
#[derive(Clone, Copy, Debug)]
pub struct InjectorSettings {
    pub kind: InjectorKind,
    pub rtg_embed_dim: usize,
    pub causal_mask: bool,
    /// Adds s_emb to the attention output (cross-attention kinds only).
    pub residual: bool,
    /// Applies dropout to the injector output while training.
    pub dropout: bool,
}

/// Dispatches on the bound kind and applies the optional residual and
/// dropout wrappers.
#[allow(clippy::too_many_arguments)]
pub fn forward(
    tape: &mut Tape,
    bound: &BoundInjector,
    settings: &InjectorSettings,
    rtg3: TensorId,
    s_side: TensorId,
    pad_mask: &[bool],
    n_heads: usize,
    eps: f64,
    dropout_p: f64,
    training: bool,
) -> TensorId {
    let mut out = match bound {
        BoundInjector::Concat(p) => inject_concat(tape, p, rtg3, s_side),
        BoundInjector::Adaln(p) => inject_adaln(tape, p, rtg3, s_side, eps),
        BoundInjector::CrossAttn(p) => inject_cross_attn(
            tape,
            p,
            settings.kind,
            rtg3,
            s_side,
            pad_mask,
            settings.causal_mask,
            n_heads,
        ),
    };
    if settings.residual {
        assert!(
            settings.kind.is_cross_attention(),
            "residual injector wiring applies to cross-attention kinds only"
        );
        out = tape.add(out, s_side);
    }
    if settings.dropout {
        out = tape.dropout(out, dropout_p, training);
    }
    out
}

// ── cost accounting ─────────────────────────────────────────────────

/// Exact multiply-add counts for one injector invocation on a length-k
/// window (per sample). `score_mix_macs` is the quadratic-in-k term:
/// cross-attention contributes exactly 2*k^2*(h/heads)*heads = 2*k^2*h,
/// point-to-point kinds contribute none.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlopEntry {
    pub linear_macs: u64,
    pub score_mix_macs: u64,
}

impl FlopEntry {
    pub const ZERO: FlopEntry = FlopEntry {
        linear_macs: 0,
        score_mix_macs: 0,
    };

    pub fn total(&self) -> u64 {
        self.linear_macs + self.score_mix_macs
    }
}

/// `d_in` is the width of the state-side input (state dim before the
/// decoder, hidden dim after).
pub fn injector_flops(
    kind: InjectorKind,
    k: usize,
    h: usize,
    d_in: usize,
    rtg_embed_dim: usize,
) -> FlopEntry {
    let (k, h, d_in, r) = (k as u64, h as u64, d_in as u64, rtg_embed_dim as u64);
    match kind {
        InjectorKind::Concat => FlopEntry {
            linear_macs: k * r + k * (r + d_in) * h,
            score_mix_macs: 0,
        },
        InjectorKind::Adaln => FlopEntry {
            linear_macs: k * h + k * h * 2 * h,
            score_mix_macs: 0,
        },
        _ => FlopEntry {
            linear_macs: k * h + 4 * k * h * h,
            score_mix_macs: 2 * k * k * h,
        },
    }
}
