//! Exact multiply-add accounting across variants and context lengths,
//! with the instrumented counter cross-checking the analytic one.
//!
//! The headline comparison: three tokens per step cost (3k)^2 in attention
//! score and mix terms per layer, two tokens cost (2k)^2 — a 4/9 ratio at
//! any width, depth, or context length. One cross-attention injector pass
//! adds k^2 back, giving 5/9 per decoder layer.

use slimdt::bench::{count_flops, instrument_flops, ratio_eq};
use slimdt::inject::InjectorKind;
use slimdt::model::{ModelConfig, Variant};

fn main() {
    let base = ModelConfig {
        n_layers: 3,
        n_heads: 1,
        embed_dim: 128,
        dropout: 0.1,
        max_timestep: 64,
        d_s: 2,
        d_a: 1,
        ..Default::default()
    };

    println!(
        "{:<14} {:>3} {:>4} {:>12} {:>12} {:>12} {:>13}",
        "variant", "k", "L", "attn score", "attn mix", "injector k^2", "total MACs"
    );
    for &k in &[5usize, 10, 20, 40] {
        for (variant, injector) in [
            (Variant::Dt, InjectorKind::Concat),
            (Variant::SlimPre, InjectorKind::Concat),
            (Variant::SlimPre, InjectorKind::CrossAttnKToQv),
        ] {
            let mut cfg = base.clone();
            cfg.variant = variant;
            cfg.injector = injector;
            cfg.context_k = k;
            cfg.max_timestep = cfg.max_timestep.max(k);
            let analytic = count_flops(&cfg);
            let measured = instrument_flops(&cfg);
            assert_eq!(analytic.total, measured.total, "counter drift");
            let label = if injector == InjectorKind::CrossAttnKToQv {
                format!("{}+xattn", variant.name())
            } else {
                variant.name().to_string()
            };
            println!(
                "{label:<14} {k:>3} {:>4} {:>12} {:>12} {:>12} {:>13}",
                analytic.seq_len,
                analytic.attn_score,
                analytic.attn_mix,
                analytic.injector_score_mix,
                analytic.total
            );
        }
    }

    let dt = count_flops(&ModelConfig {
        variant: Variant::Dt,
        ..base.clone()
    });
    let slim = count_flops(&ModelConfig {
        variant: Variant::SlimPre,
        ..base.clone()
    });
    println!(
        "\ndecoder score+mix ratio slim/dt: {}/{} — exactly 4/9: {}",
        slim.decoder_score_mix(),
        dt.decoder_score_mix(),
        ratio_eq(slim.decoder_score_mix(), dt.decoder_score_mix(), 4, 9)
    );

    let dt1 = count_flops(&ModelConfig {
        variant: Variant::Dt,
        n_layers: 1,
        ..base.clone()
    });
    let slim1 = count_flops(&ModelConfig {
        variant: Variant::SlimPre,
        injector: InjectorKind::CrossAttnKToQv,
        n_layers: 1,
        ..base
    });
    println!(
        "with one cross-attention injector per decoder layer: {}/{} — exactly 5/9: {}",
        slim1.quadratic_macs(),
        dt1.quadratic_macs(),
        ratio_eq(slim1.quadratic_macs(), dt1.quadratic_macs(), 5, 9)
    );
}
