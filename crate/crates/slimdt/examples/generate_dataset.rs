//! Generate the default mixed-quality offline dataset, print its report,
//! and round-trip it through the binary format.

use slimdt::data::{fit_stats, load_dataset, save_dataset};
use slimdt::envs::{dataset_report, expert_mean_return, generate_dataset_labeled, DatasetSpec};

fn main() {
    let spec = DatasetSpec::default();
    let (dataset, metas) = generate_dataset_labeled(&spec).unwrap();
    println!("{}", dataset_report(&dataset));
    println!(
        "expert-controller mean return: {:.3}",
        expert_mean_return(&dataset, &metas)
    );
    println!(
        "90th / 10th percentile returns: {:.3} / {:.3}",
        dataset.return_percentile(90.0),
        dataset.return_percentile(10.0)
    );
    let stats = fit_stats(&dataset);
    println!(
        "state mean {:?}  state std {:?}  rtg scale {:.3}",
        stats.state_mean, stats.state_std, stats.rtg_scale
    );

    let dir = std::env::temp_dir().join("slimdt_examples");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("mixed.sdt");
    save_dataset(&path, &dataset).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back, dataset);
    println!(
        "round-tripped {} trajectories through {}",
        back.len(),
        path.display()
    );
}
