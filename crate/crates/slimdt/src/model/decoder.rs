//! Pre-LN causal decoder stack: n layers of masked self-attention and a
//! ReLU MLP with 4x hidden width, residual connections, and a final layer
//! norm.

use super::{Binder, ModelConfig, LN_EPS};
use crate::numerics::{Scope, Tape, TensorId};

pub(crate) struct DecoderOut {
    /// After the final layer norm.
    pub normed: TensorId,
    /// Before the final layer norm (post-decoder injection can read this).
    pub hidden: TensorId,
}

fn layer_norm_affine(
    tape: &mut Tape,
    bind: &mut Binder,
    prefix: &str,
    x: TensorId,
) -> TensorId {
    let normed = tape.layer_norm(x, LN_EPS);
    let g = bind.get(tape, &format!("{prefix}.g"));
    let b = bind.get(tape, &format!("{prefix}.b"));
    let scaled = tape.mul(normed, g);
    tape.add(scaled, b)
}

/// `attn_mask` has one bool per (batch, query, key) triple and already
/// combines causal order with token validity.
pub(crate) fn forward(
    tape: &mut Tape,
    bind: &mut Binder,
    cfg: &ModelConfig,
    tokens: TensorId,
    attn_mask: &[bool],
    training: bool,
) -> DecoderOut {
    let h = cfg.embed_dim;
    let dh = h / cfg.n_heads;
    let mut x = tokens;

    for layer in 0..cfg.n_layers {
        let p = format!("layer{layer}");

        let a_in = layer_norm_affine(tape, bind, &format!("{p}.ln1"), x);
        tape.set_scope(Scope::AttnProj);
        let wq = bind.get(tape, &format!("{p}.attn.wq.w"));
        let bq = bind.get(tape, &format!("{p}.attn.wq.b"));
        let wk = bind.get(tape, &format!("{p}.attn.wk.w"));
        let bk = bind.get(tape, &format!("{p}.attn.wk.b"));
        let wv = bind.get(tape, &format!("{p}.attn.wv.w"));
        let bv = bind.get(tape, &format!("{p}.attn.wv.b"));
        let q = tape.linear(a_in, wq, bq);
        let k = tape.linear(a_in, wk, bk);
        let v = tape.linear(a_in, wv, bv);
        tape.set_scope(Scope::Other);

        let mut heads = Vec::with_capacity(cfg.n_heads);
        for head in 0..cfg.n_heads {
            let qh = tape.slice_last(q, head * dh, dh);
            let kh = tape.slice_last(k, head * dh, dh);
            let vh = tape.slice_last(v, head * dh, dh);
            tape.set_scope(Scope::AttnScore);
            let scores = tape.bmm(qh, kh, true);
            tape.set_scope(Scope::Other);
            let scaled = tape.mul_scalar(scores, 1.0 / (dh as f64).sqrt());
            let probs = tape.softmax_rows(scaled, Some(attn_mask));
            let probs = tape.dropout(probs, cfg.dropout, training);
            tape.set_scope(Scope::AttnMix);
            let mixed = tape.bmm(probs, vh, false);
            tape.set_scope(Scope::Other);
            heads.push(mixed);
        }
        let merged = heads
            .into_iter()
            .reduce(|a, b| tape.concat_last(a, b))
            .unwrap();
        tape.set_scope(Scope::AttnProj);
        let wo = bind.get(tape, &format!("{p}.attn.wo.w"));
        let bo = bind.get(tape, &format!("{p}.attn.wo.b"));
        let attn_out = tape.linear(merged, wo, bo);
        tape.set_scope(Scope::Other);
        let attn_out = tape.dropout(attn_out, cfg.dropout, training);
        x = tape.add(x, attn_out);

        let m_in = layer_norm_affine(tape, bind, &format!("{p}.ln2"), x);
        tape.set_scope(Scope::Mlp);
        let w1 = bind.get(tape, &format!("{p}.mlp.w1.w"));
        let b1 = bind.get(tape, &format!("{p}.mlp.w1.b"));
        let w2 = bind.get(tape, &format!("{p}.mlp.w2.w"));
        let b2 = bind.get(tape, &format!("{p}.mlp.w2.b"));
        let hidden = tape.linear(m_in, w1, b1);
        tape.set_scope(Scope::Other);
        let act = tape.relu(hidden);
        tape.set_scope(Scope::Mlp);
        let mlp_out = tape.linear(act, w2, b2);
        tape.set_scope(Scope::Other);
        let mlp_out = tape.dropout(mlp_out, cfg.dropout, training);
        x = tape.add(x, mlp_out);
    }

    let normed = layer_norm_affine(tape, bind, "ln_f", x);
    DecoderOut { normed, hidden: x }
}
