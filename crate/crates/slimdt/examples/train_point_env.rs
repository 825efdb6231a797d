//! Train the slim two-token model on the point-mass task and evaluate it
//! against the expert controller's mean return. Takes about a minute.

use slimdt::data::fit_stats;
use slimdt::envs::{expert_mean_return, generate_dataset_labeled, DatasetSpec, EnvId};
use slimdt::inject::InjectorKind;
use slimdt::model::{Model, ModelConfig, Variant};
use slimdt::train::{evaluate, train, TrainConfig};

fn main() {
    let (dataset, metas) = generate_dataset_labeled(&DatasetSpec::default()).unwrap();
    let stats = fit_stats(&dataset);
    let expert = expert_mean_return(&dataset, &metas);
    let target = dataset.return_percentile(90.0);

    let model_cfg = ModelConfig {
        variant: Variant::SlimPre,
        injector: InjectorKind::Concat,
        n_layers: 2,
        n_heads: 1,
        context_k: 6,
        embed_dim: 32,
        dropout: 0.0,
        max_timestep: 64,
        d_s: 2,
        d_a: 1,
        ..Default::default()
    };
    let train_cfg = TrainConfig {
        batch_size: 32,
        lr: 1e-3,
        warmup_steps: 100,
        total_steps: 3000,
        ..Default::default()
    };

    let mut model = Model::new(model_cfg, 0);
    println!("{} parameters", model.param_count());
    let log = train(&mut model, &dataset, &stats, &train_cfg, None).unwrap();
    for step in [0usize, 99, 499, 999, 1999, 2999] {
        let row = &log.rows[step];
        println!("step {:>5}  loss {:.5}  lr {:.2e}", row.step, row.loss, row.lr);
    }

    let factory = |seed: u64| EnvId::LinearPoint.make(seed);
    let es = evaluate(&model, &factory, 100, target, &stats, 1).unwrap();
    println!(
        "eval at target {target:.3}: mean return {:.3} +- {:.3} over {} episodes \
         (expert mean {expert:.3})",
        es.mean.unwrap(),
        es.stderr.unwrap(),
        es.n
    );
}
