//! Subcommand implementations. Every command writes only under the
//! configured output directory and prints the path of its primary artifact.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use toor_core::data::{
    build_mismatch_split, dump_csv, gauss6_4_spec, generate_mixture, load_csv, Example, Role,
    Splits,
};
use toor_core::error::{Error, Result};
use toor_core::metrics::{auroc, precision_recall, score_histogram};
use toor_core::net::{load_checkpoint, ModelBundle, NetworkConfig};
use toor_core::rng::{stream, Stream};
use toor_core::scoring::{read_pool_dump, Tag};
use toor_core::trainer::{evaluate, predict, run, Method, TrainReport};

use crate::config::ExperimentConfig;

/// The dataset a config describes: either the built-in benchmark or an
/// external CSV.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(usize, Vec<Example>)> {
    match &cfg.data_csv {
        Some(path) => load_csv(path),
        None => {
            let spec = gauss6_4_spec(cfg.data_seed);
            let data = generate_mixture(&spec)?;
            Ok((spec.dim, data))
        }
    }
}

fn network_config(cfg: &ExperimentConfig, dim: usize, classes: usize) -> NetworkConfig {
    NetworkConfig {
        input_dim: dim,
        feature_dim: cfg.feature_dim,
        extractor_hidden: cfg.hidden.clone(),
        classes,
        disc_hidden: cfg.disc_hidden,
        dropout: cfg.dropout,
        leaky_slope: cfg.leaky_slope,
        noise_sigma: cfg.noise_sigma,
    }
}

fn build_splits(
    cfg: &ExperimentConfig,
    dataset: &[Example],
    zeta: f64,
    seed: u64,
) -> Result<Splits> {
    let mut split = cfg.split.clone();
    split.zeta = zeta;
    split.seed = seed;
    build_mismatch_split(dataset, &split)
}

pub fn run_dir(out: &Path, method: Method, zeta: f64, seed: u64) -> PathBuf {
    out.join(format!("{}_zeta{}_seed{}", method.as_str(), zeta, seed))
}

/// One training run into its run directory; returns the report.
pub fn run_one(
    cfg: &ExperimentConfig,
    dataset: &[Example],
    dim: usize,
    method: Method,
    zeta: f64,
    seed: u64,
) -> Result<(PathBuf, TrainReport)> {
    let splits = build_splits(cfg, dataset, zeta, seed)?;
    let net = network_config(cfg, dim, splits.classes);
    let mut train = cfg.train.clone();
    train.seed = seed;
    let dir = run_dir(&cfg.out, method, zeta, seed);
    let report = run(method, &net, &train, &splits, Some(&dir))?;
    Ok((dir, report))
}

pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let (dim, dataset) = load_dataset(cfg)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let path = cfg.out.join("dataset.csv");
    dump_csv(&dataset, dim, &path)?;
    Ok(path)
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let (dim, dataset) = load_dataset(cfg)?;
    let seed = cfg.seeds[0];
    let (dir, _) = run_one(cfg, &dataset, dim, cfg.method, cfg.split.zeta, seed)?;
    Ok(dir)
}

pub fn cmd_evaluate(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<PathBuf> {
    let (dim, dataset) = load_dataset(cfg)?;
    let seed = cfg.seeds[0];
    let splits = build_splits(cfg, &dataset, cfg.split.zeta, seed)?;
    let net = network_config(cfg, dim, splits.classes);
    let mut bundle = ModelBundle::new(
        &net,
        cfg.train.lr,
        cfg.train.disc_lr,
        &mut stream(seed, Stream::InitExtractor),
        &mut stream(seed, Stream::InitClassifier),
        &mut stream(seed, Stream::InitDiscriminator),
    )?;
    load_checkpoint(&mut bundle, checkpoint)?;

    let accuracy = evaluate(&bundle, &splits.test)?;
    let inputs: Vec<Vec<f64>> = splits.test.iter().map(|(x, _)| x.clone()).collect();
    let predictions = predict(&bundle, &inputs)?;

    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let pred_path = cfg.out.join("predictions.csv");
    {
        let file = File::create(&pred_path).map_err(|e| Error::io(&pred_path, e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e: std::io::Error| Error::io(&pred_path, e);
        writeln!(w, "index,truth,prediction").map_err(io_err)?;
        for (i, ((_, truth), pred)) in splits.test.iter().zip(&predictions).enumerate() {
            writeln!(w, "{i},{truth},{pred}").map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
    }
    let eval_path = cfg.out.join("eval.json");
    let body = serde_json::json!({
        "accuracy": accuracy,
        "n_test": splits.test.len(),
        "predictions": pred_path.display().to_string(),
    });
    write_json(&eval_path, &body)?;
    Ok(eval_path)
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let (dim, dataset) = load_dataset(cfg)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;

    struct Cell {
        method: Method,
        zeta: f64,
        accuracies: Vec<f64>,
        failures: usize,
    }
    let mut cells: Vec<Cell> = Vec::new();
    for &method in &cfg.sweep_methods {
        for &zeta in &cfg.sweep_zetas {
            let mut cell = Cell {
                method,
                zeta,
                accuracies: Vec::new(),
                failures: 0,
            };
            for &seed in &cfg.seeds {
                match run_one(cfg, &dataset, dim, method, zeta, seed) {
                    Ok((_, report)) => cell.accuracies.push(report.final_accuracy),
                    Err(err) => {
                        // Record the failure inside the run directory and
                        // keep aggregating over the completed runs.
                        cell.failures += 1;
                        let dir = run_dir(&cfg.out, method, zeta, seed);
                        let _ = std::fs::create_dir_all(&dir);
                        let _ = std::fs::write(dir.join("error.txt"), format!("{err}\n"));
                    }
                }
            }
            cells.push(cell);
        }
    }

    let agg_path = cfg.out.join("aggregate.csv");
    let file = File::create(&agg_path).map_err(|e| Error::io(&agg_path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(&agg_path, e);
    writeln!(w, "method,zeta,n_runs,n_failed,mean_accuracy,std_accuracy").map_err(io_err)?;
    for cell in &cells {
        let n = cell.accuracies.len();
        let (mean, std) = if n == 0 {
            (f64::NAN, f64::NAN)
        } else {
            let mean = cell.accuracies.iter().sum::<f64>() / n as f64;
            let var = cell
                .accuracies
                .iter()
                .map(|a| (a - mean) * (a - mean))
                .sum::<f64>()
                / n as f64;
            (mean, var.sqrt())
        };
        writeln!(
            w,
            "{},{},{},{},{},{}",
            cell.method.as_str(),
            cell.zeta,
            n,
            cell.failures,
            mean,
            std
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(agg_path)
}

pub fn cmd_metrics(out: &Path, pool_path: &Path) -> Result<PathBuf> {
    let rows = read_pool_dump(pool_path)?;
    if rows.is_empty() {
        return Err(Error::Usage(format!(
            "pool dump {} has no rows",
            pool_path.display()
        )));
    }
    let predicted: Vec<bool> = rows.iter().map(|r| r.tag == Tag::Id).collect();
    let truth_id: Vec<bool> = rows.iter().map(|r| !r.truth.is_ood()).collect();
    let (precision, recall) = precision_recall(&predicted, &truth_id);

    let id_scores: Vec<f64> = rows
        .iter()
        .filter(|r| !r.truth.is_ood())
        .map(|r| r.score)
        .collect();
    let ood_scores: Vec<f64> = rows
        .iter()
        .filter(|r| r.truth.is_ood())
        .map(|r| r.score)
        .collect();
    let far_scores: Vec<f64> = rows
        .iter()
        .filter(|r| r.truth == Role::FarOod)
        .map(|r| r.score)
        .collect();
    let auroc_all = auroc(&id_scores, &ood_scores);
    let auroc_far = auroc(&id_scores, &far_scores);

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let hist_path = out.join("histogram.csv");
    {
        let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
        let table = score_histogram(&scores, &truth_id, 50);
        let file = File::create(&hist_path).map_err(|e| Error::io(&hist_path, e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e: std::io::Error| Error::io(&hist_path, e);
        writeln!(w, "bin_left,id_count,ood_count").map_err(io_err)?;
        for (left, id, ood) in table {
            writeln!(w, "{left},{id},{ood}").map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
    }

    let det_path = out.join("detection.json");
    let body = serde_json::json!({
        "n_examples": rows.len(),
        "n_true_id": id_scores.len(),
        "n_true_ood": ood_scores.len(),
        "precision": precision,
        "recall": recall,
        "auroc": auroc_all,
        "auroc_far_only": auroc_far,
        "histogram": hist_path.display().to_string(),
    });
    write_json(&det_path, &body)?;
    Ok(det_path)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| Error::Config(format!("failed to serialize {}: {e}", path.display())))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}
