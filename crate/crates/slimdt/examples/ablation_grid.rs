//! A miniature ablation sweep run directly through the library: a few
//! (variant, injector) cells trained briefly on the same dataset and
//! evaluated at the same target. The `slimdt ablate` subcommand runs the
//! full configurable grid with resume support.

use slimdt::config::{enumerate_cells, AblateSection, AblationCell};
use slimdt::data::fit_stats;
use slimdt::envs::{generate_dataset_labeled, DatasetSpec, EnvId};
use slimdt::inject::InjectorKind;
use slimdt::model::{Model, ModelConfig, Variant};
use slimdt::train::{evaluate, train, TrainConfig};

fn main() {
    let (dataset, _) = generate_dataset_labeled(&DatasetSpec {
        n_trajectories: 80,
        ..Default::default()
    })
    .unwrap();
    let stats = fit_stats(&dataset);
    let target = dataset.return_percentile(90.0);

    let grid = AblateSection {
        variants: vec![Variant::Dt, Variant::SlimPre, Variant::SlimPost],
        injectors: vec![InjectorKind::Concat, InjectorKind::Adaln],
        concat_dims: vec![16],
        causal_masks: vec![false],
        seeds: vec![0],
        ..Default::default()
    };
    let cells = enumerate_cells(&grid);
    println!("{} cells, 600 training steps each\n", cells.len());
    println!("{:<28} {:>12} {:>8}", "cell", "mean_return", "stderr");

    for cell in &cells {
        let AblationCell {
            variant,
            injector,
            causal_mask,
            rtg_embed_dim,
            seed,
        } = *cell;
        let cfg = ModelConfig {
            variant,
            injector,
            injector_causal_mask: causal_mask,
            rtg_embed_dim,
            n_layers: 1,
            n_heads: 1,
            context_k: 4,
            embed_dim: 16,
            dropout: 0.0,
            max_timestep: 64,
            d_s: 2,
            d_a: 1,
            ..Default::default()
        };
        let tcfg = TrainConfig {
            batch_size: 16,
            lr: 2e-3,
            warmup_steps: 50,
            total_steps: 600,
            seed,
            ..Default::default()
        };
        let mut model = Model::new(cfg, seed);
        train(&mut model, &dataset, &stats, &tcfg, None).unwrap();
        let factory = |s: u64| EnvId::LinearPoint.make(s);
        let es = evaluate(&model, &factory, 30, target, &stats, seed).unwrap();
        println!(
            "{:<28} {:>12.3} {:>8.3}",
            cell.id(),
            es.mean.unwrap(),
            es.stderr.unwrap()
        );
    }
}
