//! Roll one episode and print the expected-return bookkeeping: the target
//! return is decremented by each observed reward, exactly.

use slimdt::data::DatasetStats;
use slimdt::envs::EnvId;
use slimdt::inject::InjectorKind;
use slimdt::model::{Model, ModelConfig, Variant};
use slimdt::rollout::{run_episode, write_trace_csv};

fn main() {
    // an untrained model still exercises the full inference loop
    let model = Model::new(
        ModelConfig {
            variant: Variant::SlimPre,
            injector: InjectorKind::Concat,
            n_layers: 1,
            n_heads: 1,
            context_k: 5,
            embed_dim: 16,
            dropout: 0.0,
            max_timestep: 64,
            d_s: 2,
            d_a: 1,
            ..Default::default()
        },
        7,
    );
    let stats = DatasetStats {
        state_mean: vec![0.0, 0.0],
        state_std: vec![1.0, 1.0],
        rtg_scale: 50.0,
    };
    let target = -20.0;
    let mut env = EnvId::LinearPoint.make(3);
    let ep = run_episode(&model, env.as_mut(), target, &stats).unwrap();

    println!("target return {target}, achieved {:.3} in {} steps", ep.episode_return, ep.length);
    println!("  t   reward     rtg_hat   (rtg_hat == target - sum of prior rewards)");
    let mut running = 0.0;
    for row in ep.trace.iter().take(10) {
        assert_eq!(row.rtg_hat, target - running);
        println!("{:>3}  {:>8.4}  {:>9.4}", row.t, row.reward, row.rtg_hat);
        running += row.reward;
    }
    println!("... ({} more steps)", ep.trace.len().saturating_sub(10));

    let dir = std::env::temp_dir().join("slimdt_examples");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("trace.csv");
    write_trace_csv(&path, &ep.trace, model.cfg.d_a).unwrap();
    println!("full trace written to {}", path.display());
}
