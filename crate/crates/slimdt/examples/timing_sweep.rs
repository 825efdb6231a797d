//! Wall-clock forward-pass medians per context length: the two-token
//! layout against the three-token baseline.

use slimdt::bench::time_forward;
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
    let variants = [
        (Variant::Dt, InjectorKind::Concat),
        (Variant::SlimPre, InjectorKind::Concat),
    ];
    let ks = [5usize, 10, 20, 40];
    println!("timing {} reps per cell, interleaved...", 50);
    let report = time_forward(&base, &variants, &ks, 50);

    println!(
        "{:<10} {:>3} {:>12} {:>12} {:>12}",
        "variant", "k", "p10 (ms)", "median (ms)", "p90 (ms)"
    );
    for row in &report.rows {
        println!(
            "{:<10} {:>3} {:>12.3} {:>12.3} {:>12.3}",
            row.variant.name(),
            row.k,
            row.p10_ns as f64 / 1e6,
            row.median_ns as f64 / 1e6,
            row.p90_ns as f64 / 1e6,
        );
    }
    println!();
    for &k in &ks {
        if let Some(speedup) = report.speedup_over_dt(Variant::SlimPre, k) {
            println!(
                "k={k:>2}: slim is {speedup:.2}x faster (attention-term bound: 9/4 = 2.25)"
            );
        }
    }
}
