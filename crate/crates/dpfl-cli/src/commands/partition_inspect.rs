//! `dpfl partition-inspect`: show per-client sizes and class mixtures for a
//! config's Dirichlet partition.

use std::path::Path;

use crate::config::ExperimentConfig;
use crate::CliError;

pub fn cmd_partition_inspect(config_path: &Path, overrides: &[String]) -> Result<(), CliError> {
    let config = ExperimentConfig::load(config_path, overrides)?;
    let world = config.resolve()?;
    let target = &world.pair.target;
    let classes = target.num_classes();

    let mut global = vec![0usize; classes];
    for &label in target.labels() {
        global[label] += 1;
    }

    println!(
        "partition of {} samples across {} clients (alpha = {})",
        target.len(),
        world.partition.num_clients(),
        config.federation.alpha
    );
    println!("client  size  class counts");
    let mut worst_deviation: f64 = 0.0;
    for (client, indices) in world.partition.assignments().iter().enumerate() {
        let mut counts = vec![0usize; classes];
        for &index in indices {
            counts[target.labels()[index]] += 1;
        }
        for (class, &count) in counts.iter().enumerate() {
            let local = count as f64 / indices.len() as f64;
            let overall = global[class] as f64 / target.len() as f64;
            worst_deviation = worst_deviation.max((local - overall).abs());
        }
        let rendered: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
        println!("{client:>6}  {:>4}  [{}]", indices.len(), rendered.join(", "));
    }
    println!("max |client class proportion - global|: {worst_deviation:.4}");
    Ok(())
}
