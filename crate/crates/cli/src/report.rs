//! Aggregates trajectory CSVs into mean and standard deviation per checkpoint.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Deserialize)]
struct Row {
    budget: usize,
    running_best_fitness: f64,
    seed: u64,
    method: String,
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    method: &'a str,
    budget: usize,
    mean: f64,
    std: f64,
    n: usize,
}

fn find_trajectories(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.path());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            find_trajectories(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "trajectory.csv") {
            out.push(path);
        }
    }
    Ok(())
}

/// Sample standard deviation; zero for a single value.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn run(run_dir: &Path) -> Result<(), CliError> {
    if !run_dir.is_dir() {
        return Err(CliError::Usage(format!(
            "{} is not a directory",
            run_dir.display()
        )));
    }
    let mut files = Vec::new();
    find_trajectories(run_dir, &mut files).map_err(CliError::runtime)?;
    // (method, budget) -> seed -> value; a repeated seed keeps its last value
    let mut groups: BTreeMap<(String, usize), BTreeMap<u64, f64>> = BTreeMap::new();
    for file in &files {
        let mut reader = csv::Reader::from_path(file).map_err(CliError::runtime)?;
        for (line, record) in reader.deserialize::<Row>().enumerate() {
            match record {
                Ok(row) if row.running_best_fitness.is_finite() => {
                    groups
                        .entry((row.method, row.budget))
                        .or_default()
                        .insert(row.seed, row.running_best_fitness);
                }
                Ok(_) => eprintln!(
                    "warning: {} row {}: non-finite fitness, skipped",
                    file.display(),
                    line + 2
                ),
                Err(e) => eprintln!("warning: {} row {}: {e}, skipped", file.display(), line + 2),
            }
        }
    }
    if groups.is_empty() {
        return Err(CliError::Usage(format!(
            "no trajectory rows under {}",
            run_dir.display()
        )));
    }

    let path = run_dir.join("summary.csv");
    let mut csv = csv::Writer::from_path(&path).map_err(CliError::runtime)?;
    let mut table = format!(
        "{:<10} {:>8} {:>14} {:>12} {:>4}\n",
        "method", "budget", "mean", "std", "n"
    );
    for ((method, budget), by_seed) in &groups {
        let values: Vec<f64> = by_seed.values().copied().collect();
        let (mean, std) = mean_std(&values);
        csv.serialize(SummaryRow {
            method,
            budget: *budget,
            mean,
            std,
            n: values.len(),
        })
        .map_err(CliError::runtime)?;
        let _ = writeln!(
            table,
            "{method:<10} {budget:>8} {mean:>14.6} {std:>12.6} {:>4}",
            values.len()
        );
    }
    csv.flush().map_err(CliError::runtime)?;
    fs::write(run_dir.join("summary.txt"), &table).map_err(CliError::runtime)?;
    print!("{table}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn std_of_single_value_is_zero() {
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
    }
}
