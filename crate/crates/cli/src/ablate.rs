//! Ablation sweeps: built-in arm matrices executed over a seed list, with
//! per-seed dataset sharing (paired comparison), a worker pool capped by
//! `ISE_LAB_THREADS`, and mean/std aggregation of final-epoch metrics.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ise_core::config::{echo, resolve, ResolvedConfig};
use ise_core::synth::{generate, LabeledDataset};
use ise_core::trainer::{run, RunRecord, TrainResult};

use crate::ops::{ensure_dir, load_settings, write_file};
use crate::{CommonArgs, Failure};

/// One matrix row: an arm name and the config keys it overrides.
struct Arm {
    name: String,
    overrides: Vec<(&'static str, String)>,
}

fn arm(name: impl Into<String>, overrides: &[(&'static str, &str)]) -> Arm {
    Arm {
        name: name.into(),
        overrides: overrides
            .iter()
            .map(|(k, v)| (*k, v.to_string()))
            .collect(),
    }
}

/// The built-in arm matrices.
///
/// `table1` isolates the method's components: bare baseline, interpolation
/// only, pair loss on actual samples only, both with a constant degree, and
/// the full method. `table2` sweeps the degree schedule kind, `table3`
/// direction policy x base degree, `table4` the neighbor count.
fn matrix(name: &str) -> Result<Vec<Arm>, Failure> {
    match name {
        "table1" => Ok(vec![
            arm("no1_baseline", &[("mode", "BASELINE"), ("loss.beta", "0")]),
            arm("no2_pli", &[("mode", "ISE"), ("loss.beta", "0")]),
            arm(
                "no3_lp_actual",
                &[("mode", "BASELINE"), ("loss.lp_variant", "ACTUAL")],
            ),
            arm(
                "no4_constant_pli_lp",
                &[("mode", "ISE"), ("pli.schedule", "CONSTANT")],
            ),
            arm(
                "no5_full",
                &[("mode", "ISE"), ("pli.schedule", "LOGARITHM")],
            ),
        ]),
        "table2" => Ok(["CONSTANT", "LINEAR", "SQUARE", "LOGARITHM"]
            .iter()
            .map(|kind| {
                Arm {
                    name: format!("schedule_{}", kind.to_lowercase()),
                    overrides: vec![("mode", "ISE".into()), ("pli.schedule", kind.to_string())],
                }
            })
            .collect()),
        "table3" => {
            let mut arms = Vec::new();
            for direction in ["NEAREST", "RANDOM", "FARTHEST"] {
                for lambda0 in ["0.1", "0.5", "1.0", "2.0"] {
                    arms.push(Arm {
                        name: format!("{}_{}", direction.to_lowercase(), lambda0),
                        overrides: vec![
                            ("mode", "ISE".into()),
                            ("pli.direction", direction.into()),
                            ("pli.lambda0", lambda0.into()),
                        ],
                    });
                }
            }
            Ok(arms)
        }
        "table4" => Ok(["1", "3", "5", "10"]
            .iter()
            .map(|k| Arm {
                name: format!("k{k}"),
                overrides: vec![("mode", "ISE".into()), ("pli.k", k.to_string())],
            })
            .collect()),
        other => Err(Failure::config(format!(
            "unknown matrix {other:?} (expected table1, table2, table3, or table4)"
        ))),
    }
}

/// Parses "0-9", "1,3,7", or mixtures of both.
fn parse_seeds(expr: &str) -> Result<Vec<u64>, Failure> {
    let mut seeds = Vec::new();
    for part in expr.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        if let Some((lo, hi)) = part.split_once('-') {
            let lo: u64 = lo
                .trim()
                .parse()
                .map_err(|_| Failure::config(format!("bad seed range start {lo:?}")))?;
            let hi: u64 = hi
                .trim()
                .parse()
                .map_err(|_| Failure::config(format!("bad seed range end {hi:?}")))?;
            if hi < lo {
                return Err(Failure::config(format!("empty seed range {part:?}")));
            }
            seeds.extend(lo..=hi);
        } else {
            seeds.push(
                part.parse()
                    .map_err(|_| Failure::config(format!("bad seed {part:?}")))?,
            );
        }
    }
    if seeds.is_empty() {
        return Err(Failure::config("seed list is empty"));
    }
    seeds.sort_unstable();
    seeds.dedup();
    Ok(seeds)
}

/// Worker count: `ISE_LAB_THREADS` if set, else available parallelism,
/// never more than the task count.
fn worker_count(tasks: usize) -> Result<usize, Failure> {
    let cap = match std::env::var("ISE_LAB_THREADS") {
        Ok(v) => {
            let n: usize = v.parse().map_err(|_| {
                Failure::config(format!("ISE_LAB_THREADS must be a positive integer, got {v:?}"))
            })?;
            if n == 0 {
                return Err(Failure::config("ISE_LAB_THREADS must be >= 1"));
            }
            n
        }
        Err(_) => std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1),
    };
    Ok(cap.max(1).min(tasks.max(1)))
}

struct Task {
    arm_idx: usize,
    seed: u64,
    config: ResolvedConfig,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

const SUMMARY_METRICS: [&str; 8] = [
    "fowlkes_mallows",
    "adjusted_rand",
    "adjusted_mutual_info",
    "v_measure",
    "map",
    "cmc1",
    "cmc5",
    "cmc10",
];

fn metric_values(record: &RunRecord) -> [f64; 8] {
    [
        record.quality.fowlkes_mallows,
        record.quality.adjusted_rand,
        record.quality.adjusted_mutual_info,
        record.quality.v_measure,
        record.retrieval.map,
        record.retrieval.cmc[0],
        record.retrieval.cmc[1],
        record.retrieval.cmc[2],
    ]
}

pub fn cmd_ablate(
    common: &CommonArgs,
    out: &Path,
    matrix_name: &str,
    seeds_expr: &str,
) -> Result<(), Failure> {
    if common.seed.is_some() {
        return Err(Failure::config(
            "ablate sweeps the --seeds list; --seed is for single runs",
        ));
    }
    let seeds = parse_seeds(seeds_expr)?;
    let arms = matrix(matrix_name)?;
    let base_settings = load_settings(common)?;
    // Fail early on an invalid base before any arm starts.
    resolve(&base_settings)?;
    ensure_dir(out)?;

    // Resolve every (arm, seed) config up front; arms never touch scenario
    // keys, so each seed's dataset is generated once and shared (paired
    // comparison across arms).
    let mut tasks = Vec::with_capacity(arms.len() * seeds.len());
    for (arm_idx, a) in arms.iter().enumerate() {
        for &seed in &seeds {
            let mut settings = base_settings.clone();
            for (k, v) in &a.overrides {
                settings.set(k, v);
            }
            settings.set("seed", seed);
            tasks.push(Task {
                arm_idx,
                seed,
                config: resolve(&settings)?,
            });
        }
    }
    let mut datasets: BTreeMap<u64, LabeledDataset> = BTreeMap::new();
    for task in &tasks {
        if !datasets.contains_key(&task.seed) {
            datasets.insert(task.seed, generate(&task.config.scenario)?);
        }
    }

    // Fixed-size worker pool over the task list; every task is internally
    // deterministic, so scheduling order cannot affect results.
    let workers = worker_count(tasks.len())?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<TrainResult, String>>>> =
        Mutex::new((0..tasks.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= tasks.len() {
                    break;
                }
                let task = &tasks[i];
                let outcome = run(&datasets[&task.seed], &task.config.train)
                    .map_err(|e| e.to_string());
                results.lock().unwrap()[i] = Some(outcome);
            });
        }
    });
    let results = results.into_inner().unwrap();

    // Per-arm CSVs: all seeds' epoch rows, prefixed with the seed column.
    let mut failures = Vec::new();
    let mut summary_rows = Vec::new();
    for (arm_idx, a) in arms.iter().enumerate() {
        let mut csv = format!("seed,{}\n", RunRecord::CSV_HEADER);
        let mut finals: Vec<[f64; 8]> = Vec::new();
        for (task, outcome) in tasks.iter().zip(&results) {
            if task.arm_idx != arm_idx {
                continue;
            }
            match outcome.as_ref().expect("worker pool covered every task") {
                Ok(result) => {
                    for r in &result.records {
                        csv.push_str(&format!("{},{}\n", task.seed, r.csv_row()));
                    }
                    if let Some(last) = result.records.last() {
                        finals.push(metric_values(last));
                    }
                }
                Err(msg) => {
                    failures.push(format!("arm {} seed {}: {msg}", a.name, task.seed));
                }
            }
        }
        write_file(&out.join(format!("arm_{}.csv", a.name)), &csv)?;

        if !finals.is_empty() {
            let mut row = format!("{},{}", a.name, finals.len());
            for m in 0..SUMMARY_METRICS.len() {
                let values: Vec<f64> = finals.iter().map(|f| f[m]).collect();
                let (mean, std) = mean_std(&values);
                row.push_str(&format!(",{mean:?},{std:?}"));
            }
            summary_rows.push(row);
        }
    }

    let mut summary = String::from("arm,seeds");
    for m in SUMMARY_METRICS {
        summary.push_str(&format!(",{m}_mean,{m}_std"));
    }
    summary.push('\n');
    for row in &summary_rows {
        summary.push_str(row);
        summary.push('\n');
    }
    write_file(&out.join("ablation_summary.csv"), &summary)?;

    // The manifest reconstructs the sweep: base config, arm overrides, seeds.
    let base_echo = echo(&resolve(&base_settings)?);
    let manifest = serde_json::json!({
        "matrix": matrix_name,
        "seeds": seeds,
        "arms": arms
            .iter()
            .map(|a| {
                let overrides: serde_json::Map<String, serde_json::Value> = a
                    .overrides
                    .iter()
                    .map(|(k, v)| (k.to_string(), serde_json::Value::from(v.clone())))
                    .collect();
                (a.name.clone(), serde_json::Value::Object(overrides))
            })
            .collect::<serde_json::Map<String, serde_json::Value>>(),
        "base_config": base_echo.lines().collect::<Vec<&str>>(),
        "files": {
            "summary": "ablation_summary.csv",
            "arm_csv_pattern": "arm_<name>.csv",
        },
    });
    write_file(&out.join("manifest.json"), &format!("{:#}\n", manifest))?;

    if !common.quiet {
        println!(
            "ablate {matrix_name}: {} arms x {} seeds -> {}",
            arms.len(),
            seeds.len(),
            out.join("ablation_summary.csv").display()
        );
        for row in &summary_rows {
            let mut fields = row.split(',');
            let name = fields.next().unwrap_or("?");
            let n = fields.next().unwrap_or("0");
            // map_mean sits after 4 cluster metrics (mean,std each).
            let map_mean = row.split(',').nth(2 + 8).unwrap_or("?");
            println!("  {name}: {n} seeds, mean final mAP {map_mean}");
        }
    }

    if failures.is_empty() {
        Ok(())
    } else {
        for f in &failures {
            log::error!("{f}");
        }
        Err(Failure::runtime(format!(
            "{} of {} arm runs failed: {}",
            failures.len(),
            tasks.len(),
            failures.join("; ")
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ise_core::config::Settings;

    #[test]
    fn seed_expressions() {
        assert_eq!(parse_seeds("0-3").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_seeds("5").unwrap(), vec![5]);
        assert_eq!(parse_seeds("1,3,2").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_seeds("0-2,7").unwrap(), vec![0, 1, 2, 7]);
        assert!(parse_seeds("").is_err());
        assert!(parse_seeds("9-3").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn matrices_have_expected_arm_counts() {
        assert_eq!(matrix("table1").unwrap().len(), 5);
        assert_eq!(matrix("table2").unwrap().len(), 4);
        assert_eq!(matrix("table3").unwrap().len(), 12);
        assert_eq!(matrix("table4").unwrap().len(), 4);
        assert!(matrix("table9").is_err());
    }

    #[test]
    fn arm_overrides_resolve_against_defaults() {
        for name in ["table1", "table2", "table3", "table4"] {
            for a in matrix(name).unwrap() {
                let mut settings = Settings::new();
                for (k, v) in &a.overrides {
                    settings.set(k, v);
                }
                resolve(&settings).unwrap_or_else(|e| {
                    panic!("arm {} of {name} does not resolve: {e}", a.name)
                });
            }
        }
    }

    #[test]
    fn mean_std_basics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-12);
        assert!((s - 1.0).abs() < 1e-12);
        let (m1, s1) = mean_std(&[4.0]);
        assert_eq!((m1, s1), (4.0, 0.0));
    }
}
