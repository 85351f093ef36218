//! Subcommand implementations. Each one writes its files through an
//! [`Outputs`] guard, so a failure leaves nothing half-written behind.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use mta_core::attribution::{read_attributions, write_attributions, AttributionRecord, Attributions};
use mta_core::autodiff::{grad_check_routed, CheckNodes, Graph, NodeId};
use mta_core::baselines::{baseline_attributions, Baseline};
use mta_core::budget::{budget_sweep, sweep_table, SweepConfig};
use mta_core::data::{
    build_journeys, channel_frequencies, generate_synthetic, ingest_log, read_journeys, select_random_channels,
    split, write_journeys, Journey, JourneyStats, SplitManifest, Touchpoint, VocabMap,
};
use mta_core::eval::MetricReport;
use mta_core::model::{
    attribute_all, build_forward, load_checkpoint, save_checkpoint, Batch, ForwardOptions, Hyperparams, ModelParams,
};
use mta_core::segment::segment_users;
use mta_core::train::{grid_points, grid_search, train as fit, TrainingReport};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::Outputs;
use crate::SplitName;

const JOURNEYS_FILE: &str = "journeys.jsonl";
const VOCAB_FILE: &str = "vocab.json";
const SPLIT_FILE: &str = "split.json";
const CHECKPOINT_FILE: &str = "model.ckpt";
/// Chunk size for eval-mode forward passes; results do not depend on it.
const EVAL_BATCH: usize = 256;

fn out_dir(config: &RunConfig, out: Option<PathBuf>, command: &str) -> Result<PathBuf> {
    match (out, &config.output_dir) {
        (Some(p), _) => Ok(p),
        (None, Some(root)) => Ok(root.join(command)),
        (None, None) => bail!("no --out given and the config sets no output_dir"),
    }
}

struct Dataset {
    journeys: Vec<Journey>,
    vocab: VocabMap,
    split: SplitManifest,
}

impl Dataset {
    fn load(dir: &Path) -> Result<Self> {
        let journeys = read_journeys(&dir.join(JOURNEYS_FILE))?;
        let vocab: VocabMap = mta_core::data::read_json(&dir.join(VOCAB_FILE))?;
        let split: SplitManifest = mta_core::data::read_json(&dir.join(SPLIT_FILE))?;
        Ok(Dataset { journeys, vocab, split })
    }

    fn parts(&self) -> Result<(Vec<Journey>, Vec<Journey>, Vec<Journey>)> {
        Ok(self.split.resolve(&self.journeys)?)
    }

    fn partition(&self, name: SplitName) -> Result<Vec<Journey>> {
        let (train, validation, test) = self.parts()?;
        let part = match name {
            SplitName::Train => train,
            SplitName::Validation => validation,
            SplitName::Test => test,
            SplitName::All => self.journeys.clone(),
        };
        ensure!(!part.is_empty(), "the {name:?} partition is empty");
        Ok(part)
    }
}

fn write_dataset(outputs: &mut Outputs, dir: &Path, journeys: &[Journey], vocab: &VocabMap, config: &RunConfig) -> Result<()> {
    let fractions = config.data.split_fractions;
    let seed = config.data.split_seed;
    let ids: Vec<String> = journeys.iter().map(|j| j.id.clone()).collect();
    let (train, validation, test) = split(&ids, fractions, seed)?;
    outputs.file(&dir.join(JOURNEYS_FILE))?;
    write_journeys(&dir.join(JOURNEYS_FILE), journeys)?;
    outputs.json(&dir.join(VOCAB_FILE), vocab)?;
    outputs.json(
        &dir.join(SPLIT_FILE),
        &SplitManifest {
            seed,
            fractions,
            train,
            validation,
            test,
        },
    )?;
    Ok(())
}

fn conversion_rate(journeys: &[Journey]) -> f64 {
    journeys.iter().filter(|j| j.converted).count() as f64 / journeys.len().max(1) as f64
}

pub fn synth(config_path: Option<&Path>, out: Option<PathBuf>) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let dir = out_dir(&config, out, "synth")?;
    let (journeys, truth) = generate_synthetic(&config.synthetic)?;
    let vocab = config.synthetic.vocab();
    let mut outputs = Outputs::new();
    outputs.dir(&dir)?;
    write_dataset(&mut outputs, &dir, &journeys, &vocab, &config)?;
    outputs.json(&dir.join("ground_truth.json"), &truth)?;
    outputs.commit();
    println!(
        "synth: {} journeys, conversion rate {:.4}, written to {}",
        journeys.len(),
        conversion_rate(&journeys),
        dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct IngestSummary {
    impressions: usize,
    malformed_rows: usize,
    channels: Vec<String>,
    /// Impression counts of every channel in the log, most frequent first.
    channel_frequencies: Vec<(String, usize)>,
    journeys: JourneyStats,
    conversion_rate: f64,
    vocab_hash: String,
}

pub fn ingest(config_path: Option<&Path>, log: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let dir = out_dir(&config, out, "ingest")?;
    let Some(log) = log.or_else(|| config.data.log.clone()) else {
        bail!("no --log given and the config sets no data.log");
    };
    let report = ingest_log(&log, &config.data.columns)?;
    ensure!(!report.impressions.is_empty(), "{} has no valid impressions", log.display());
    let channels = match &config.data.channels {
        Some(c) => c.clone(),
        None => select_random_channels(&report.impressions, config.data.num_channels, config.data.channel_seed),
    };
    let (raw, stats) = build_journeys(&report.impressions, &channels, config.data.max_len)?;
    ensure!(!raw.is_empty(), "no journeys survive channel selection and the length cap");
    let vocab = VocabMap::build(&raw, &channels, config.data.vocab_size)?;
    let journeys = vocab.encode(&raw)?;

    let mut outputs = Outputs::new();
    outputs.dir(&dir)?;
    write_dataset(&mut outputs, &dir, &journeys, &vocab, &config)?;
    let summary = IngestSummary {
        impressions: report.impressions.len(),
        malformed_rows: report.malformed,
        channels,
        channel_frequencies: channel_frequencies(&report.impressions),
        journeys: stats.clone(),
        conversion_rate: conversion_rate(&journeys),
        vocab_hash: vocab.hash(),
    };
    outputs.json(&dir.join("ingest_report.json"), &summary)?;
    outputs.commit();
    println!(
        "ingest: {} impressions ({} malformed rows skipped), {} journeys kept, {} dropped off-channel, {} too long",
        summary.impressions, summary.malformed_rows, stats.emitted, stats.dropped_off_channel, stats.dropped_too_long
    );
    Ok(())
}

pub fn train(config_path: Option<&Path>, data: &Path, out: Option<PathBuf>) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let dir = out_dir(&config, out, "train")?;
    let dataset = Dataset::load(data)?;
    let (train_set, validation_set, _) = dataset.parts()?;
    let base = config.model.hyperparams(
        dataset.vocab.num_channels(),
        dataset.vocab.cardinalities(),
        config.data.max_len,
    );
    base.validate()?;

    let (params, report) = match &config.train.grid {
        Some(grid) => {
            let points = grid_points(grid, &base, &config.train)?;
            log::info!("grid search over {} points", points.len());
            let r = grid_search(&train_set, &validation_set, &points, &config.train)?;
            let point = &r.leaderboard[r.best].point;
            let report = TrainingReport {
                hyperparams: point.hyperparams.clone(),
                learning_rate: point.learning_rate,
                batch_size: point.batch_size,
                epochs: config.train.epochs,
                seed: config.train.seed,
                chosen_epoch: r.history.best_epoch,
                history: r.history,
                leaderboard: Some(r.leaderboard),
            };
            (r.params, report)
        }
        None => {
            let (params, history) = fit(&train_set, &validation_set, &base, &config.train)?;
            let report = TrainingReport {
                hyperparams: base,
                learning_rate: config.train.learning_rate,
                batch_size: config.train.batch_size,
                epochs: config.train.epochs,
                seed: config.train.seed,
                chosen_epoch: history.best_epoch,
                history,
                leaderboard: None,
            };
            (params, report)
        }
    };

    let mut outputs = Outputs::new();
    outputs.dir(&dir)?;
    let ckpt = outputs.file(&dir.join(CHECKPOINT_FILE))?;
    save_checkpoint(&ckpt, &params, &dataset.vocab.hash())?;
    outputs.json(&dir.join("training_report.json"), &report)?;
    let header = [
        "epoch",
        "train_objective",
        "validation_objective",
        "validation_channel",
        "validation_click",
        "validation_conversion",
        "validation_auc",
    ];
    let rows: Vec<Vec<String>> = report
        .history
        .epochs
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                e.train.objective.to_string(),
                e.validation.objective.to_string(),
                e.validation.channel.to_string(),
                e.validation.click.to_string(),
                e.validation.conversion.to_string(),
                e.validation_auc.map(|a| a.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    outputs.csv(&dir.join("training_history.csv"), &header, &rows)?;
    outputs.commit();
    let best = report.history.best();
    println!(
        "train: kept epoch {} of {}, validation objective {:.6}, validation AUC {}",
        report.chosen_epoch,
        report.history.epochs.len(),
        best.validation.objective,
        best.validation_auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into())
    );
    Ok(())
}

fn load_model(model_dir: &Path, dataset: &Dataset) -> Result<ModelParams> {
    let path = model_dir.join(CHECKPOINT_FILE);
    let (params, header) = load_checkpoint(&path)?;
    let hash = dataset.vocab.hash();
    ensure!(
        header.vocab_hash == hash,
        "checkpoint {} was trained on a different vocabulary ({} vs {})",
        path.display(),
        header.vocab_hash,
        hash
    );
    Ok(params)
}

pub fn eval(config_path: Option<&Path>, model: &Path, data: &Path, split: SplitName, out: Option<PathBuf>) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let dir = out_dir(&config, out, "eval")?;
    let dataset = Dataset::load(data)?;
    let params = load_model(model, &dataset)?;
    let journeys = dataset.partition(split)?;
    let results = attribute_all(&params, &journeys, EVAL_BATCH)?;
    let report = MetricReport::compute(&journeys, &results)?;

    let mut outputs = Outputs::new();
    outputs.dir(&dir)?;
    outputs.json(&dir.join("metrics.json"), &report)?;
    let rows: Vec<Vec<String>> = report.rows().into_iter().map(|(k, v)| vec![k.to_string(), v]).collect();
    outputs.csv(&dir.join("metrics.csv"), &["metric", "value"], &rows)?;
    outputs.commit();
    for (k, v) in report.rows() {
        println!("{k:>20}  {v}");
    }
    Ok(())
}

pub fn attribute(
    config_path: Option<&Path>,
    model: Option<&Path>,
    baseline: Option<&str>,
    data: &Path,
    split: SplitName,
    out: Option<PathBuf>,
) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let path = match out {
        Some(p) => p,
        None => out_dir(&config, None, "attribute")?.join("attribution.jsonl"),
    };
    let dataset = Dataset::load(data)?;
    let journeys = dataset.partition(split)?;
    let attributions = match (baseline, model) {
        (Some(name), _) => {
            let baseline: Baseline = name.parse()?;
            let (fit_set, _, _) = dataset.parts()?;
            baseline_attributions(baseline, &fit_set, &journeys, dataset.vocab.num_channels())?
        }
        (None, Some(model)) => {
            let params = load_model(model, &dataset)?;
            let results = attribute_all(&params, &journeys, EVAL_BATCH)?;
            let records = journeys
                .iter()
                .zip(&results)
                .map(|(j, r)| AttributionRecord::from_result(j, r))
                .collect();
            Attributions::new("model", records)?
        }
        (None, None) => bail!("either --model or --baseline is required"),
    };

    let mut outputs = Outputs::new();
    let p = outputs.file(&path)?;
    write_attributions(&p, &attributions)?;
    outputs.commit();
    let mass = attributions.channel_mass(&journeys, dataset.vocab.num_channels())?;
    println!("attribute: {} journeys, credit per channel:", journeys.len());
    for (name, m) in dataset.vocab.channels.iter().zip(mass) {
        println!("{name:>20}  {m:.4}");
    }
    Ok(())
}

pub struct BudgetFlags {
    pub fractions: Option<Vec<f64>>,
    pub cost_scale: Option<f64>,
    pub value: Option<f64>,
    pub uncapped: bool,
}

#[derive(Serialize)]
struct BudgetFile<'a> {
    source: &'a str,
    channels: &'a [String],
    reports: Vec<mta_core::budget::BudgetReport>,
}

pub fn budget(
    config_path: Option<&Path>,
    attrib: &Path,
    data: &Path,
    split: SplitName,
    flags: BudgetFlags,
    out: Option<PathBuf>,
) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let dir = out_dir(&config, out, "budget")?;
    let dataset = Dataset::load(data)?;
    let journeys = dataset.partition(split)?;
    let attributions = read_attributions(attrib)?;
    let sweep = SweepConfig {
        fractions: flags.fractions.unwrap_or(config.budget.fractions),
        cost_scale: flags.cost_scale.unwrap_or(config.budget.cost_scale),
        value: flags.value.unwrap_or(config.budget.value),
        uncapped: flags.uncapped,
    };
    ensure!(
        sweep.cost_scale > 0.0 && sweep.cost_scale.is_finite(),
        "cost scale {} must be positive",
        sweep.cost_scale
    );
    let reports = budget_sweep(&journeys, &attributions, dataset.vocab.num_channels(), &sweep)?;
    let (header, rows) = sweep_table(&reports);

    let mut outputs = Outputs::new();
    outputs.dir(&dir)?;
    outputs.json(
        &dir.join("budget_report.json"),
        &BudgetFile {
            source: &attributions.source,
            channels: &dataset.vocab.channels,
            reports,
        },
    )?;
    outputs.csv(&dir.join("budget_sweep.csv"), &header, &rows)?;
    outputs.commit();
    println!("{}", header.join("\t"));
    for r in rows {
        println!("{}", r.join("\t"));
    }
    Ok(())
}

pub fn segment(
    config_path: Option<&Path>,
    attrib: &Path,
    data: &Path,
    split: SplitName,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let dir = out_dir(&config, out, "segment")?;
    let dataset = Dataset::load(data)?;
    let journeys = dataset.partition(split)?;
    let attributions = read_attributions(attrib)?;
    let seed = seed.unwrap_or(config.segment.seed);
    let report = segment_users(&journeys, &attributions, &dataset.vocab.channels, seed)
        .with_context(|| format!("segmenting with attributions from {}", attrib.display()))?;

    let mut outputs = Outputs::new();
    outputs.dir(&dir)?;
    outputs.json(&dir.join("segments.json"), &report)?;
    let users: Vec<Vec<String>> = report
        .users
        .iter()
        .map(|u| vec![u.user_id.clone(), u.mean_return.to_string(), u.group.to_string()])
        .collect();
    outputs.csv(&dir.join("user_groups.csv"), &["user_id", "mean_return", "group"], &users)?;
    let affinity: Vec<Vec<String>> = report
        .affinity
        .iter()
        .map(|r| {
            let s = &r.stats;
            vec![
                r.group.to_string(),
                r.channel.clone(),
                s.count.to_string(),
                s.whisker_low.to_string(),
                s.q1.to_string(),
                s.median.to_string(),
                s.q3.to_string(),
                s.whisker_high.to_string(),
                s.outliers.len().to_string(),
            ]
        })
        .collect();
    outputs.csv(
        &dir.join("affinity.csv"),
        &[
            "group",
            "channel",
            "count",
            "whisker_low",
            "q1",
            "median",
            "q3",
            "whisker_high",
            "outliers",
        ],
        &affinity,
    )?;
    outputs.commit();
    println!("segment: {} users, {} excluded", report.users.len(), report.excluded_users.len());
    for (i, g) in mta_core::segment::ReturnGroup::ALL.iter().enumerate() {
        println!(
            "{:>8}  centroid {:.6}  share {:.3}",
            g.to_string(),
            report.centroids[i], report.group_shares[i]
        );
    }
    Ok(())
}

fn gradcheck_journeys() -> Vec<Journey> {
    let journey = |id: &str, steps: &[(usize, bool, [usize; 2])], converted: bool| Journey {
        id: id.into(),
        user_id: id.into(),
        touchpoints: steps
            .iter()
            .enumerate()
            .map(|(t, &(channel, click, cov))| Touchpoint {
                covariates: cov.to_vec(),
                channel,
                click,
                cost: 1.0,
                timestamp: t as i64,
            })
            .collect(),
        converted,
    };
    vec![
        journey("a", &[(0, false, [1, 2]), (2, true, [3, 0]), (1, false, [2, 1])], true),
        journey("b", &[(1, true, [0, 2]), (1, false, [1, 1])], false),
    ]
}

pub fn gradcheck(step: f64, tolerance: f64, seed: u64) -> Result<()> {
    let hyper = Hyperparams {
        embedding_size: 2,
        hidden_size: 4,
        representation_size: 3,
        mlp_hidden_size: 3,
        dropout: 0.0,
        lambda: 5.0,
        beta: 5.0,
        ..Hyperparams::new(3, vec![4, 3])
    };
    let params = ModelParams::init(&hyper, seed)?;
    let journeys = gradcheck_journeys();
    let refs: Vec<&Journey> = journeys.iter().collect();
    let batch = Batch::new(&refs, &params)?;
    // The reversal means no single scalar has the training gradient: the
    // channel head descends the training loss, everything else the min-max
    // objective.
    let report = grad_check_routed(
        |g: &mut Graph, ids: &[NodeId]| {
            let nodes = build_forward(g, &params, ids, &batch, &ForwardOptions::eval())?;
            Ok(CheckNodes {
                backprop: nodes.objective,
                targets: vec![nodes.objective, nodes.minmax_objective],
            })
        },
        &params.tensors,
        step,
        |i| usize::from(!params.layout.is_channel_head(i)),
    )?;
    println!(
        "gradcheck: {} entries, max relative error {:.3e} (tolerance {:.0e})",
        report.entries_checked, report.max_rel_error, tolerance
    );
    ensure!(
        report.max_rel_error < tolerance,
        "max relative error {:.3e} at {:?} is not below {tolerance:e}",
        report.max_rel_error,
        report.worst
    );
    Ok(())
}
