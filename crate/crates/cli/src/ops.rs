//! Single-run, evaluation, and generation commands plus the shared
//! config-loading and output-writing plumbing.

use std::fs;
use std::path::Path;

use ise_core::cluster::{dbscan, NOISE};
use ise_core::config::{echo, resolve, ResolvedConfig, Settings};
use ise_core::metrics::{cluster_quality, evaluate_retrieval};
use ise_core::synth::{generate, LabeledDataset, Split};
use ise_core::trainer::{run, RunRecord, TrainResult};

use crate::{CommonArgs, Failure};

/// Raw settings from file, `--set` overrides, and `--seed`, in that
/// precedence order (later wins).
pub fn load_settings(common: &CommonArgs) -> Result<Settings, Failure> {
    let mut settings = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                Failure::config(format!("cannot read config {}: {e}", path.display()))
            })?;
            Settings::parse(&text)?
        }
        None => Settings::new(),
    };
    for pair in &common.set {
        settings.set_pair(pair)?;
    }
    if let Some(seed) = common.seed {
        settings.set("seed", seed);
    }
    Ok(settings)
}

/// Fully-resolved config (defaults filled in, everything validated).
pub fn load_config(common: &CommonArgs) -> Result<ResolvedConfig, Failure> {
    Ok(resolve(&load_settings(common)?)?)
}

pub fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_file(path: &Path, content: &str) -> Result<(), Failure> {
    fs::write(path, content)
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut csv = String::from(RunRecord::CSV_HEADER);
    csv.push('\n');
    for r in records {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    csv
}

fn record_json(r: &RunRecord) -> serde_json::Value {
    serde_json::json!({
        "epoch": r.epoch,
        "n_clusters": r.n_clusters,
        "n_noise": r.n_noise,
        "l_se": r.l_se,
        "l_lp": r.l_lp,
        "fowlkes_mallows": r.quality.fowlkes_mallows,
        "adjusted_rand": r.quality.adjusted_rand,
        "adjusted_mutual_info": r.quality.adjusted_mutual_info,
        "v_measure": r.quality.v_measure,
        "map": r.retrieval.map,
        "cmc1": r.retrieval.cmc[0],
        "cmc5": r.retrieval.cmc[1],
        "cmc10": r.retrieval.cmc[2],
        "lambda": r.lambda_end,
    })
}

/// Trains under `config` on its freshly generated scenario and writes the
/// four run outputs into `out`.
pub fn cmd_run(common: &CommonArgs, out: &Path) -> Result<(), Failure> {
    let config = load_config(common)?;
    ensure_dir(out)?;
    let dataset = generate(&config.scenario)?;
    let result = run(&dataset, &config.train)?;
    write_run_outputs(out, &config, &dataset, &result)?;
    let last = result
        .records
        .last()
        .ok_or_else(|| Failure::runtime("training produced no epochs"))?;
    if !common.quiet {
        println!(
            "run: {} epochs, final mAP {:.4}, ARI {:.4} -> {}",
            result.records.len(),
            last.retrieval.map,
            last.quality.adjusted_rand,
            out.join("run.csv").display()
        );
    }
    Ok(())
}

/// Writes run.csv, summary.json, config.txt, and final_embeddings.txt.
pub fn write_run_outputs(
    out: &Path,
    config: &ResolvedConfig,
    dataset: &LabeledDataset,
    result: &TrainResult,
) -> Result<(), Failure> {
    write_file(&out.join("run.csv"), &records_to_csv(&result.records))?;
    write_file(&out.join("config.txt"), &echo(config))?;

    let trained = LabeledDataset {
        embeddings: result.embeddings.clone(),
        true_ids: dataset.true_ids.clone(),
        split: dataset.split.clone(),
    };
    write_file(&out.join("final_embeddings.txt"), &trained.dump())?;

    let last = result
        .records
        .last()
        .ok_or_else(|| Failure::runtime("training produced no epochs"))?;
    let summary = serde_json::json!({
        "mode": config.train.mode.to_string(),
        "seed": config.train.seed,
        "epochs": result.records.len(),
        "dataset": {
            "samples": dataset.len(),
            "dimension": dataset.dim(),
            "identities": config.scenario.n_identities,
        },
        "final": record_json(last),
        "files": {
            "csv": "run.csv",
            "config": "config.txt",
            "embeddings": "final_embeddings.txt",
        },
    });
    write_file(
        &out.join("summary.json"),
        &format!("{:#}\n", summary),
    )
}

/// Scores a dataset dump: DBSCAN + cluster quality against the stored ids,
/// and retrieval over QUERY/GALLERY rows when queries exist.
pub fn cmd_eval(common: &CommonArgs, input: &Path) -> Result<(), Failure> {
    let config = load_config(common)?;
    let text = fs::read_to_string(input)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", input.display())))?;
    let dataset = LabeledDataset::load(&text)?;
    dataset.validate()?;

    let eps = config.train.cluster.eps;
    let min_points = config.train.cluster.min_points;
    let state = dbscan(&dataset.embeddings, eps, min_points)?;
    let quality = cluster_quality(&state.labels, &dataset.true_ids)?;
    let n_noise = state.labels.iter().filter(|&&l| l == NOISE).count();

    let mut report = serde_json::json!({
        "cluster": {
            "eps": eps,
            "min_points": min_points,
            "n_clusters": state.n_clusters,
            "n_noise": n_noise,
            "fowlkes_mallows": quality.fowlkes_mallows,
            "adjusted_rand": quality.adjusted_rand,
            "adjusted_mutual_info": quality.adjusted_mutual_info,
            "v_measure": quality.v_measure,
        },
    });

    let query_idx = dataset.indices_of(Split::Query);
    let gallery_idx = dataset.indices_of(Split::Gallery);
    if !query_idx.is_empty() && !gallery_idx.is_empty() {
        let mut q_emb = Vec::with_capacity(query_idx.len());
        let mut q_ids = Vec::with_capacity(query_idx.len());
        for &i in &query_idx {
            q_emb.push(dataset.embeddings.row(i)?);
            q_ids.push(dataset.true_ids[i]);
        }
        let mut g_emb = Vec::with_capacity(gallery_idx.len());
        let mut g_ids = Vec::with_capacity(gallery_idx.len());
        for &i in &gallery_idx {
            g_emb.push(dataset.embeddings.row(i)?);
            g_ids.push(dataset.true_ids[i]);
        }
        let scores = evaluate_retrieval(&q_emb, &g_emb, &q_ids, &g_ids)?;
        report["retrieval"] = serde_json::json!({
            "map": scores.map,
            "cmc1": scores.cmc[0],
            "cmc5": scores.cmc[1],
            "cmc10": scores.cmc[2],
        });
    }

    println!("{:#}", report);
    Ok(())
}

/// Generates the configured scenario and writes `dataset.txt`.
pub fn cmd_gen(common: &CommonArgs, out: &Path) -> Result<(), Failure> {
    let config = load_config(common)?;
    ensure_dir(out)?;
    let dataset = generate(&config.scenario)?;
    let path = out.join("dataset.txt");
    write_file(&path, &dataset.dump())?;
    if !common.quiet {
        println!(
            "gen: {} samples, {} identities, d={} -> {}",
            dataset.len(),
            config.scenario.n_identities,
            dataset.dim(),
            path.display()
        );
    }
    Ok(())
}
