//! Config-driven command pipeline behind the `slimdt` binary: dataset
//! generation, training, evaluation, benchmarking, and ablation sweeps.
//!
//! Exit codes: 0 success, 2 config error, 3 numerical failure, 4 I/O or
//! file-format error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::bench::{
    count_flops, instrument_flops, ratio_eq, time_forward, write_flops_csv, write_timing_csv,
};
use crate::config::{enumerate_cells, load_run_config, AblationCell, RunConfig};
use crate::data::{fit_stats, load_dataset, save_dataset, DatasetStats};
use crate::envs::{dataset_report, generate_dataset, EnvId};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, Model, Variant};
use crate::rollout::{run_episode, write_trace_csv};
use crate::train::{evaluate, train, EvalHook};
use crate::{rollout, seeds};

#[derive(Parser)]
#[command(
    name = "slimdt",
    about = "Return-conditioned sequence modeling lab: datasets, training, \
             evaluation, FLOP/timing benchmarks, and ablation sweeps",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an offline dataset from scripted controllers.
    Datagen {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train a model on the configured dataset and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint over seeded rollouts.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path (default: <out_dir>/checkpoint.sdtc).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Exact FLOP accounting and wall-clock timing across variants.
    Bench {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train and evaluate the full injector/variant ablation grid.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Parses argv and runs; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Datagen { config } => cmd_datagen(&config),
        Command::Train { config } => cmd_train(&config),
        Command::Eval { config, checkpoint } => cmd_eval(&config, checkpoint.as_deref()),
        Command::Bench { config } => cmd_bench(&config),
        Command::Ablate { config } => cmd_ablate(&config),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn env_factory(env: EnvId) -> impl Fn(u64) -> Box<dyn rollout::Env> {
    move |seed| env.make(seed)
}

pub fn cmd_datagen(config_path: &Path) -> Result<()> {
    let cfg = load_run_config(config_path)?;
    cfg.write_echo()?;
    let spec = cfg.data.spec(cfg.seed);
    let dataset = generate_dataset(&spec)?;
    let path = cfg.dataset_path();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    save_dataset(&path, &dataset)?;
    let report = dataset_report(&dataset);
    fs::write(
        cfg.resolved_out_dir().join("dataset_report.txt"),
        report.to_string(),
    )?;
    println!(
        "wrote {} trajectories to {}",
        dataset.len(),
        path.display()
    );
    print!("{report}");
    Ok(())
}

fn load_dataset_or_hint(cfg: &RunConfig) -> Result<crate::data::Dataset> {
    let path = cfg.dataset_path();
    if !path.exists() {
        return Err(Error::Config(format!(
            "dataset {} does not exist; run `slimdt datagen` first",
            path.display()
        )));
    }
    load_dataset(&path)
}

pub fn cmd_train(config_path: &Path) -> Result<()> {
    let cfg = load_run_config(config_path)?;
    cfg.write_echo()?;
    let out_dir = cfg.resolved_out_dir();
    let dataset = load_dataset_or_hint(&cfg)?;
    if dataset.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let stats = fit_stats(&dataset);
    let model_cfg = cfg.model_config();
    let train_cfg = cfg.train_config();
    let mut model = Model::new(model_cfg, cfg.seed);

    let target = cfg.eval.resolve_targets(Some(&dataset))?[0];
    let factory = env_factory(cfg.data.env);
    let hook = EvalHook {
        env_factory: &factory,
        target_rtg: target,
        base_seed: seeds::derive(cfg.seed, 0xE7A1),
    };
    let log = train(&mut model, &dataset, &stats, &train_cfg, Some(&hook))?;
    log.write_csv(out_dir.join("train_log.csv"))?;
    let ckpt = out_dir.join("checkpoint.sdtc");
    save_checkpoint(&ckpt, &model, &stats)?;
    let last = log.rows.last().expect("at least one step");
    println!(
        "trained {} steps (final loss {:.6}); checkpoint at {}",
        train_cfg.total_steps,
        last.loss,
        ckpt.display()
    );
    Ok(())
}

fn list_checkpoints(dir: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    if let Ok(entries) = fs::read_dir(dir) {
        for entry in entries.flatten() {
            let p = entry.path();
            if p.extension().is_some_and(|e| e == "sdtc") {
                found.push(p);
            }
        }
    }
    found.sort();
    found
}

pub fn cmd_eval(config_path: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let cfg = load_run_config(config_path)?;
    cfg.write_echo()?;
    let out_dir = cfg.resolved_out_dir();
    let ckpt_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_dir.join("checkpoint.sdtc"));
    if !ckpt_path.exists() {
        let available = list_checkpoints(&out_dir);
        let listing = if available.is_empty() {
            "none found; run `slimdt train` first".to_string()
        } else {
            available
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(", ")
        };
        return Err(Error::Config(format!(
            "checkpoint {} does not exist; available checkpoints: {listing}",
            ckpt_path.display()
        )));
    }
    let (model, stats) = load_checkpoint(&ckpt_path)?;
    let dataset = cfg.dataset_path().exists().then(|| load_dataset_or_hint(&cfg)).transpose()?;
    let targets = cfg.eval.resolve_targets(dataset.as_ref())?;
    let factory = env_factory(cfg.data.env);

    let results_path = out_dir.join("eval_results.csv");
    let mut rows = String::new();
    if !results_path.exists() {
        rows.push_str("seed,target_rtg,n_episodes,mean_return,std_return,stderr_return\n");
    }
    for &target in &targets {
        for &seed in &cfg.eval.seeds {
            let es = evaluate(
                &model,
                &factory,
                cfg.eval.n_episodes,
                target,
                &stats,
                seed,
            )?;
            let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            let _ = writeln!(
                rows,
                "{seed},{target},{},{},{},{}",
                es.n,
                fmt(es.mean),
                fmt(es.std),
                fmt(es.stderr)
            );
            println!(
                "seed {seed} target {target:.3}: mean {} stderr {} over {} episodes",
                fmt(es.mean),
                fmt(es.stderr),
                es.n
            );
            if cfg.eval.write_traces {
                let traces = out_dir.join("traces");
                fs::create_dir_all(&traces)?;
                let mut env = cfg.data.env.make(seeds::derive(seed, 0));
                let ep = run_episode(&model, env.as_mut(), target, &stats)?;
                write_trace_csv(
                    traces.join(format!("trace_s{seed}_t{target}.csv")),
                    &ep.trace,
                    model.cfg.d_a,
                )?;
            }
        }
    }
    append_to(&results_path, &rows)?;
    Ok(())
}

fn append_to(path: &Path, text: &str) -> Result<()> {
    use std::io::Write;
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Context lengths swept by `bench`.
pub const BENCH_K_SWEEP: [usize; 4] = [5, 10, 20, 40];
pub const BENCH_TIMING_REPS: usize = 100;

pub fn cmd_bench(config_path: &Path) -> Result<()> {
    let cfg = load_run_config(config_path)?;
    cfg.write_echo()?;
    let out_dir = cfg.resolved_out_dir();
    let base = cfg.model_config();
    let variants = [
        (Variant::Dt, cfg.model.injector),
        (Variant::SlimPre, cfg.model.injector),
        (Variant::SlimPost, cfg.model.injector),
    ];

    let mut reports = Vec::new();
    for &(variant, injector) in &variants {
        for &k in &BENCH_K_SWEEP {
            let mut c = base.clone();
            c.variant = variant;
            c.injector = injector;
            c.context_k = k;
            c.max_timestep = c.max_timestep.max(k);
            let analytic = count_flops(&c);
            let measured = instrument_flops(&c);
            if analytic.total != measured.total
                || analytic.decoder_score_mix() != measured.decoder_score_mix()
                || analytic.injector_score_mix != measured.injector_score_mix
            {
                return Err(Error::Numerical(format!(
                    "instrumented counts diverge from analytic for {} {} k={k}",
                    variant.name(),
                    injector.name()
                )));
            }
            reports.push(measured);
        }
    }
    write_flops_csv(out_dir.join("flops.csv"), &reports)?;

    // quadratic-term ratios at matched k
    for &k in &BENCH_K_SWEEP {
        let dt = reports
            .iter()
            .find(|r| r.variant == Variant::Dt && r.k == k)
            .unwrap();
        let slim = reports
            .iter()
            .find(|r| r.variant == Variant::SlimPre && r.k == k)
            .unwrap();
        let exact_49 = ratio_eq(slim.decoder_score_mix(), dt.decoder_score_mix(), 4, 9);
        println!(
            "k={k}: decoder score+mix slim/dt = {}/{} (exactly 4/9: {exact_49})",
            slim.decoder_score_mix(),
            dt.decoder_score_mix()
        );
    }

    let timing = time_forward(&base, &variants, &BENCH_K_SWEEP, BENCH_TIMING_REPS);
    write_timing_csv(out_dir.join("timing.csv"), &timing)?;
    for &k in &BENCH_K_SWEEP {
        if let Some(speedup) = timing.speedup_over_dt(Variant::SlimPre, k) {
            println!("k={k}: measured dt/slim_pre median ratio {speedup:.3}");
        }
    }
    if let Some(s20) = timing.speedup_over_dt(Variant::SlimPre, 20) {
        println!(
            "k=20 slim_pre is {} than dt ({}x)",
            if s20 > 1.0 { "faster" } else { "slower" },
            s20
        );
    }
    Ok(())
}

fn ablation_csv_header() -> &'static str {
    "cell,variant,injector,causal_mask,rtg_embed_dim,seed,target_rtg,n_episodes,\
     mean_return,stderr_return"
}

fn ablation_row(cell: &AblationCell, target: f64, n: usize, mean: f64, stderr: f64) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        cell.id(),
        cell.variant.name(),
        if cell.variant == Variant::Dt {
            "".to_string()
        } else {
            cell.injector.name().to_string()
        },
        cell.causal_mask,
        cell.rtg_embed_dim.map_or(String::new(), |d| d.to_string()),
        cell.seed,
        target,
        n,
        mean,
        stderr
    )
}

/// Trains and evaluates one grid cell.
fn run_cell(
    cfg: &RunConfig,
    cell: &AblationCell,
    dataset: &crate::data::Dataset,
    stats: &DatasetStats,
    target: f64,
) -> Result<String> {
    let mut model_cfg = cfg.model_config();
    model_cfg.variant = cell.variant;
    model_cfg.injector = cell.injector;
    model_cfg.injector_causal_mask = cell.causal_mask;
    model_cfg.rtg_embed_dim = cell.rtg_embed_dim;
    model_cfg.validate()?;
    let mut train_cfg = cfg.train_config();
    train_cfg.seed = cell.seed;
    train_cfg.eval_every = 0;
    if let Some(steps) = cfg.ablate.total_steps {
        train_cfg.total_steps = steps;
    }
    let mut model = Model::new(model_cfg, cell.seed);
    train(&mut model, dataset, stats, &train_cfg, None)?;
    let n_episodes = cfg.ablate.n_episodes.unwrap_or(cfg.eval.n_episodes);
    let factory = env_factory(cfg.data.env);
    let es = evaluate(&model, &factory, n_episodes, target, stats, cell.seed)?;
    Ok(ablation_row(
        cell,
        target,
        es.n,
        es.mean.unwrap_or(f64::NAN),
        es.stderr.unwrap_or(0.0),
    ))
}

pub fn cmd_ablate(config_path: &Path) -> Result<()> {
    let cfg = load_run_config(config_path)?;
    cfg.write_echo()?;
    let out_dir = cfg.resolved_out_dir();
    let cells_dir = out_dir.join("ablate").join("cells");
    fs::create_dir_all(&cells_dir)?;
    let dataset = load_dataset_or_hint(&cfg)?;
    if dataset.is_empty() {
        return Err(Error::Config("cannot ablate on an empty dataset".into()));
    }
    let stats = fit_stats(&dataset);
    let target = cfg.eval.resolve_targets(Some(&dataset))?[0];

    let results_path = out_dir.join("ablation.csv");
    if !results_path.exists() {
        fs::write(&results_path, format!("{}\n", ablation_csv_header()))?;
    }
    let cells = enumerate_cells(&cfg.ablate);
    let total = cells.len();
    for (i, cell) in cells.iter().enumerate() {
        let cell_path = cells_dir.join(format!("{}.csv", cell.id()));
        if cell_path.exists() {
            println!("[{}/{total}] {} already done, skipping", i + 1, cell.id());
            continue;
        }
        println!("[{}/{total}] training {}", i + 1, cell.id());
        let row = run_cell(&cfg, cell, &dataset, &stats, target)?;
        // the per-cell file marks completion; the aggregate is append-only
        fs::write(&cell_path, format!("{}\n{row}\n", ablation_csv_header()))?;
        append_to(&results_path, &format!("{row}\n"))?;
    }
    println!("ablation grid complete: {total} cells in {}", results_path.display());
    Ok(())
}
