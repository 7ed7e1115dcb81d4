use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::json;

use netlat::domain::{bin_speed_label, HopBinning, SpeedLabel};
use netlat::eval::{self, CiMethod, ClassificationReport};
use netlat::features::{self, FeatureMatrix, SvmFeatureOptions, TimeEncoding};
use netlat::ingest::{self, Dataset};
use netlat::markov::{self, PredictionRule, StationaryOptions, TransitionMatrix};
use netlat::mlp::{self, MlpConfig, MlpModel};
use netlat::split::train_test_split;
use netlat::svm::{self, KernelKind, KernelSpec, MulticlassSvm, SvmConfig, TuneGrid};
use netlat::synth::{self, DelaySampler, RttGenModel};
use netlat::{Execution, HopState};

mod config;

/// Latency toolkit: traceroute Markov models, RTT regression and speed-label classification.
#[derive(Parser, Debug)]
#[command(name = "netlat", version)]
struct Cli {
    /// key=value file supplying defaults for any flag (keys are long flag names)
    #[arg(long, global = true, env = "NETLAT_CONFIG")]
    config: Option<PathBuf>,

    /// Run data-parallel loops on one thread
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Join RTT records with proxy locations and compute path distances
    Ingest(IngestArgs),
    /// Hop-state Markov chains over traceroutes
    #[command(subcommand)]
    Markov(MarkovCmd),
    /// Neural-network RTT regression
    #[command(subcommand)]
    Mlp(MlpCmd),
    /// SVM speed-label classification
    #[command(subcommand)]
    Svm(SvmCmd),
    /// Synthetic datasets in the ingest schemas
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Plot data as CSV
    #[command(subcommand)]
    Plot(PlotCmd),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// RTT CSV
    #[arg(long)]
    rtt: PathBuf,
    /// Proxy location CSV
    #[arg(long)]
    proxies: PathBuf,
    /// Merged CSV output
    #[arg(long)]
    out: PathBuf,
    /// Write rejected rows (line, reason) here
    #[arg(long)]
    rejects: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BinningArgs {
    /// Hop delay (ms) at or above which a hop is a spike
    #[arg(long, default_value_t = 15.0)]
    spike_threshold: f64,
}

impl BinningArgs {
    fn binning(&self) -> Result<HopBinning> {
        Ok(HopBinning::default().with_spike_threshold(self.spike_threshold)?)
    }
}

#[derive(Args, Debug)]
struct RouteSplitArgs {
    /// Traceroute CSV
    #[arg(long)]
    traceroutes: PathBuf,
    /// Fraction of routes used to estimate the matrix
    #[arg(long, default_value_t = 0.2)]
    train_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    binning: BinningArgs,
}

#[derive(Subcommand, Debug)]
enum MarkovCmd {
    /// Estimate a transition matrix from the training routes (CSV, 4x4)
    Fit {
        #[command(flatten)]
        split: RouteSplitArgs,
        /// Matrix CSV output (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stationary distribution as CSV `low,avg,high,spike`
    Stationary {
        /// Matrix CSV path, or `gpn_paper` / `nongpn_paper`
        #[arg(long)]
        matrix: String,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 10_000)]
        max_iter: usize,
    },
    /// Spike confusion counts (JSON) on the held-out routes
    Eval {
        #[command(flatten)]
        split: RouteSplitArgs,
        /// `argmax` or `threshold:<tau>`
        #[arg(long, default_value = "threshold:0.5")]
        rule: String,
        /// Use this matrix (path or name) instead of fitting one
        #[arg(long)]
        matrix: Option<String>,
    },
}

#[derive(Args, Debug)]
struct MlpDataArgs {
    /// Merged CSV
    #[arg(long)]
    data: PathBuf,
    /// Add a sine time-of-day column
    #[arg(long)]
    time_sin: bool,
}

#[derive(Subcommand, Debug)]
enum MlpCmd {
    /// Train and write the model JSON plus per-epoch loss history
    Train {
        #[command(flatten)]
        data: MlpDataArgs,
        #[arg(long, default_value_t = 1000)]
        epochs: usize,
        #[arg(long, default_value_t = 0.7)]
        train_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Hidden layer sizes
        #[arg(long, value_delimiter = ',', default_value = "128,128")]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.001)]
        learning_rate: f64,
        /// Feed raw (unstandardized) inputs
        #[arg(long)]
        no_scale: bool,
        /// Model JSON output
        #[arg(long)]
        model: PathBuf,
        /// Loss history CSV `epoch,loss`
        #[arg(long)]
        history_out: Option<PathBuf>,
    },
    /// Mean absolute error on the model's held-out rows
    Eval {
        #[command(flatten)]
        data: MlpDataArgs,
        #[arg(long)]
        model: PathBuf,
        /// Evaluate every row instead of the held-out split
        #[arg(long)]
        all_rows: bool,
        /// Predicted-vs-true CSV `true_ms,predicted_ms`
        #[arg(long)]
        plot_out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct SvmDataArgs {
    /// Merged CSV
    #[arg(long)]
    data: PathBuf,
    /// Drop the IP and proxy code columns
    #[arg(long)]
    no_categorical: bool,
    /// Add a sine time-of-day column
    #[arg(long)]
    time_sin: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SvmDataArgs {
    fn load(&self) -> Result<FeatureMatrix> {
        let ds = load_dataset(&self.data)?;
        let opts = SvmFeatureOptions {
            time: TimeEncoding { include_sine: self.time_sin },
            categorical: !self.no_categorical,
        };
        Ok(features::assemble_svm_features(&ds, opts)?)
    }
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// Number of seeded train/test splits (split k uses seed + k - 1)
    #[arg(long, default_value_t = 5)]
    splits: usize,
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KernelArg {
    Linear,
    Polynomial,
    Radial,
    Sigmoid,
}

#[derive(Args, Debug)]
struct SolverArgs {
    /// Radial kernel, gamma 1/32, cost 256
    #[arg(long)]
    paper_best: bool,
    /// Best-config JSON written by `svm tune`
    #[arg(long, conflicts_with = "paper_best")]
    best_config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "radial")]
    kernel: KernelArg,
    #[arg(long, default_value = "1")]
    cost: String,
    #[arg(long, default_value = "1/32")]
    gamma: String,
    #[arg(long, default_value_t = 3)]
    degree: u32,
    #[arg(long, default_value = "0")]
    coef0: String,
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
    #[arg(long, default_value_t = 10_000_000)]
    max_iter: usize,
    #[arg(long, default_value_t = 40)]
    cache_mb: usize,
    /// Feed raw (unstandardized) features
    #[arg(long)]
    no_scale: bool,
}

impl SolverArgs {
    fn config(&self, seed: u64) -> Result<SvmConfig> {
        let base = SvmConfig {
            tolerance: self.tolerance,
            max_iter: self.max_iter,
            cache_mb: self.cache_mb,
            scale: !self.no_scale,
            seed,
            ..Default::default()
        };
        let config = if self.paper_best {
            SvmConfig { seed, ..SvmConfig::published_best() }
        } else if let Some(path) = &self.best_config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            SvmConfig { seed, ..serde_json::from_str(&text).context("parsing best config")? }
        } else {
            let gamma = parse_number(&self.gamma)?;
            let coef0 = parse_number(&self.coef0)?;
            let kernel = match self.kernel {
                KernelArg::Linear => KernelSpec::Linear,
                KernelArg::Polynomial => KernelSpec::Polynomial { degree: self.degree, gamma, coef0 },
                KernelArg::Radial => KernelSpec::Rbf { gamma },
                KernelArg::Sigmoid => KernelSpec::Sigmoid { gamma, coef0 },
            };
            SvmConfig { kernel, cost: parse_number(&self.cost)?, ..base }
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand, Debug)]
enum SvmCmd {
    /// Grid search by stratified k-fold cross-validation
    Tune {
        #[command(flatten)]
        data: SvmDataArgs,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, value_delimiter = ',', default_value = "linear,polynomial,radial,sigmoid")]
        kernels: Vec<String>,
        /// Costs (numbers or fractions such as 1/32); default 2^-5..2^10
        #[arg(long, value_delimiter = ',')]
        costs: Vec<String>,
        /// Gammas; default 2^-5..2^2
        #[arg(long, value_delimiter = ',')]
        gammas: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        degrees: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1,2,3,4")]
        coef0s: Vec<String>,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        #[arg(long, default_value_t = 40)]
        cache_mb: usize,
        /// Tuning table CSV `kernel,cost,gamma,degree,coef0,mean_cv_accuracy`
        #[arg(long)]
        grid_out: Option<PathBuf>,
        /// Best config JSON (also printed to stdout)
        #[arg(long)]
        best_out: Option<PathBuf>,
    },
    /// Train one model per split
    Train {
        #[command(flatten)]
        data: SvmDataArgs,
        #[command(flatten)]
        splits: SplitArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Model JSON; with several splits, `-<k>` is inserted before the extension
        #[arg(long)]
        model: PathBuf,
    },
    /// Classification report (JSON line) per split
    Eval {
        #[command(flatten)]
        data: SvmDataArgs,
        #[command(flatten)]
        splits: SplitArgs,
        /// Model JSON as given to `svm train`
        #[arg(long)]
        model: PathBuf,
        /// Confusion matrix CSV per split (rows are predictions)
        #[arg(long)]
        confusion_out: Option<PathBuf>,
        /// Wilson score interval instead of the exact binomial interval
        #[arg(long)]
        wilson: bool,
        /// Also print a human-readable summary to stderr
        #[arg(long)]
        summary: bool,
    },
}

#[derive(Subcommand, Debug)]
enum SynthCmd {
    /// Traceroutes generated from a hop-state Markov chain
    Markov {
        /// Matrix CSV path, or `gpn_paper` / `nongpn_paper`
        #[arg(long, default_value = "gpn_paper")]
        matrix: String,
        #[arg(short = 'n', long = "routes", default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 13)]
        mean_len: usize,
        /// Delay ranges per state: `gpn` or `non-gpn` (default follows the matrix name)
        #[arg(long)]
        sampler: Option<String>,
        #[command(flatten)]
        binning: BinningArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Traceroute CSV output (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// RTT records plus the proxy table they reference
    Rtt {
        #[arg(short = 'n', long = "rows", default_value_t = 15_158)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10.0)]
        base_ms: f64,
        #[arg(long, default_value_t = 0.02)]
        km_coeff: f64,
        #[arg(long, default_value_t = 10.0)]
        diurnal_amp: f64,
        /// Gaussian noise sigma (ms)
        #[arg(long, default_value_t = 10.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0.5)]
        two_proxy_prob: f64,
        /// RTT CSV output
        #[arg(long)]
        out: PathBuf,
        /// Proxy CSV output
        #[arg(long)]
        proxies_out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum PlotCmd {
    /// Cyclical time-of-day encoding over one day: `seconds,time_cos,time_sin`
    TimeEncoding {
        #[arg(long, default_value_t = 900)]
        step: i64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Histogram of speed labels of a merged CSV: `ordinal,label,count`
    SpeedLabels {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A number or a fraction `a/b`.
fn parse_number(s: &str) -> Result<f64> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => a.trim().parse::<f64>()? / b.trim().parse::<f64>()?,
        None => s.parse::<f64>().with_context(|| format!("not a number: {s:?}"))?,
    };
    if !v.is_finite() {
        bail!("not a finite number: {s:?}");
    }
    Ok(v)
}

fn parse_numbers(v: &[String]) -> Result<Vec<f64>> {
    v.iter().map(|s| parse_number(s)).collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let parsed = ingest::read_merged_csv(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    if parsed.report.rejected_count() > 0 {
        eprintln!("warning: {} malformed rows skipped in {}", parsed.report.rejected_count(), path.display());
    }
    Ok(Dataset { records: parsed.records, provenance: Default::default() })
}

fn load_matrix(spec: &str) -> Result<TransitionMatrix> {
    if let Some(m) = synth::named_matrix(spec) {
        return Ok(m);
    }
    TransitionMatrix::read_csv(open(Path::new(spec))?).with_context(|| format!("reading matrix {spec}"))
}

/// `model.json` → `model-3.json` for split 3 of several.
fn split_path(base: &Path, k: usize, splits: usize) -> PathBuf {
    if splits == 1 {
        return base.to_path_buf();
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}-{k}.{}", ext.to_string_lossy()),
        None => format!("{stem}-{k}"),
    };
    base.with_file_name(name)
}

fn run_ingest(a: IngestArgs) -> Result<()> {
    let rtt = ingest::parse_rtt_csv(open(&a.rtt)?).with_context(|| format!("reading {}", a.rtt.display()))?;
    let (proxies, proxy_report) =
        ingest::parse_proxy_csv(open(&a.proxies)?).with_context(|| format!("reading {}", a.proxies.display()))?;
    let ds = ingest::merge(&rtt.records, &proxies);
    let mut out = create(&a.out)?;
    ingest::write_merged_csv(&ds, &mut out)?;
    out.flush()?;
    if let Some(path) = &a.rejects {
        let mut report = rtt.report.clone();
        report.rejected.extend(ds.provenance.merge_rejects.iter().cloned());
        report.write_csv(create(path)?)?;
    }
    let summary = json!({
        "rows_in": rtt.report.rows_read,
        "rows_out": ds.records.len(),
        "rejected": rtt.report.rejected_count() + ds.provenance.merge_rejects.len(),
        "proxies": proxies.len(),
        "proxy_rows_rejected": proxy_report.rejected_count(),
        "duplicate_proxies": proxy_report.duplicate_warnings,
    });
    println!("{summary}");
    Ok(())
}

type Routes = Vec<Vec<HopState>>;

fn route_split(a: &RouteSplitArgs) -> Result<(Routes, Routes)> {
    let parsed = ingest::parse_traceroute_csv(open(&a.traceroutes)?)
        .with_context(|| format!("reading {}", a.traceroutes.display()))?;
    if parsed.report.rejected_count() > 0 {
        eprintln!("warning: {} malformed traceroutes skipped", parsed.report.rejected_count());
    }
    let seqs = markov::to_state_sequences(&parsed.records, &a.binning.binning()?)?;
    let (train, test) = train_test_split(seqs.len(), a.train_frac, a.seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| seqs[i].clone()).collect::<Vec<_>>();
    Ok((pick(&train), pick(&test)))
}

fn run_markov(cmd: MarkovCmd, exec: Execution) -> Result<()> {
    match cmd {
        MarkovCmd::Fit { split, out } => {
            let (train, _) = route_split(&split)?;
            let m = markov::estimate_transitions_with(&train, exec)?;
            let mut w = output(out.as_deref())?;
            m.write_csv(&mut w)?;
            w.flush()?;
        }
        MarkovCmd::Stationary { matrix, tol, max_iter } => {
            let m = load_matrix(&matrix)?;
            let pi = markov::stationary_distribution(&m, StationaryOptions { tol, max_iter })?;
            println!("low,avg,high,spike");
            println!("{:.6},{:.6},{:.6},{:.6}", pi[0], pi[1], pi[2], pi[3]);
        }
        MarkovCmd::Eval { split, rule, matrix } => {
            let rule: PredictionRule = rule.parse()?;
            let (train, test) = route_split(&split)?;
            let m = match matrix {
                Some(spec) => load_matrix(&spec)?,
                None => markov::estimate_transitions_with(&train, exec)?,
            };
            println!("{}", markov::evaluate_spikes_with(&m, &test, rule, exec).to_json());
        }
    }
    Ok(())
}

fn run_mlp(cmd: MlpCmd, exec: Execution) -> Result<()> {
    match cmd {
        MlpCmd::Train { data, epochs, train_frac, seed, hidden, batch_size, learning_rate, no_scale, model, history_out } => {
            let ds = load_dataset(&data.data)?;
            let fm = features::assemble_nn_features(&ds, TimeEncoding { include_sine: data.time_sin })?;
            let config = MlpConfig {
                hidden_sizes: hidden,
                epochs,
                batch_size,
                learning_rate,
                train_fraction: train_frac,
                seed,
                standardize: !no_scale,
                exec,
            };
            let out = mlp::train(&fm, &config)?;
            let mut w = create(&model)?;
            writeln!(w, "{}", out.model.to_json())?;
            w.flush()?;
            if let Some(path) = history_out {
                let mut w = create(&path)?;
                writeln!(w, "epoch,loss")?;
                for (e, l) in out.history.iter().enumerate() {
                    writeln!(w, "{},{l:.6}", e + 1)?;
                }
                w.flush()?;
            }
            let summary = json!({
                "epochs": epochs,
                "final_loss": out.history.last(),
                "train_rows": out.train_rows.len(),
                "test_rows": out.test_rows.len(),
            });
            println!("{summary}");
        }
        MlpCmd::Eval { data, model, all_rows, plot_out } => {
            let text = std::fs::read_to_string(&model).with_context(|| format!("reading {}", model.display()))?;
            let model = MlpModel::from_json(&text)?;
            let ds = load_dataset(&data.data)?;
            let enc = TimeEncoding { include_sine: model.columns.iter().any(|c| c == "time_sin") || data.time_sin };
            let fm = features::assemble_nn_features(&ds, enc)?;
            if fm.columns() != model.columns.as_slice() {
                bail!("model columns {:?} do not match data columns {:?}", model.columns, fm.columns());
            }
            let rows = match (&model.split, all_rows) {
                (Some(s), false) => train_test_split(fm.n_rows(), s.train_fraction, s.seed)?.1,
                _ => (0..fm.n_rows()).collect(),
            };
            let ev = mlp::evaluate(&model, &fm.select_rows(&rows))?;
            if let Some(path) = plot_out {
                ev.write_pairs_csv(create(&path)?)?;
            }
            println!("{}", json!({ "mae_ms": ev.mae_ms, "rows": rows.len() }));
        }
    }
    Ok(())
}

fn labels_of(fm: &FeatureMatrix) -> &[SpeedLabel] {
    fm.label_target().expect("SVM features carry labels")
}

fn run_svm(cmd: SvmCmd, exec: Execution) -> Result<()> {
    match cmd {
        SvmCmd::Tune { data, folds, kernels, costs, gammas, degrees, coef0s, tolerance, cache_mb, grid_out, best_out } => {
            let fm = data.load()?;
            let full = TuneGrid::published();
            let grid = TuneGrid {
                kernels: kernels.iter().map(|k| k.parse::<KernelKind>()).collect::<Result<_, _>>()?,
                costs: if costs.is_empty() { full.costs } else { parse_numbers(&costs)? },
                gammas: if gammas.is_empty() { full.gammas } else { parse_numbers(&gammas)? },
                degrees,
                coef0s: parse_numbers(&coef0s)?,
            };
            let base = SvmConfig { tolerance, cache_mb, seed: data.seed, exec, ..Default::default() };
            let res = svm::tune(&fm, &grid, folds, data.seed, &base)?;
            if let Some(path) = grid_out {
                res.write_table_csv(create(&path)?)?;
            }
            let best = serde_json::to_string(&res.best)?;
            if let Some(path) = best_out {
                let mut w = create(&path)?;
                writeln!(w, "{best}")?;
                w.flush()?;
            }
            println!("{}", json!({ "best": res.best, "mean_cv_accuracy": res.best_accuracy, "cells": res.table.len() }));
        }
        SvmCmd::Train { data, splits, solver, model } => {
            let fm = data.load()?;
            let config = SvmConfig { exec, ..solver.config(data.seed)? };
            for (k, (train, _)) in svm::model_splits(fm.n_rows(), splits.splits, splits.train_frac, data.seed)?.iter().enumerate() {
                let trained = svm::train_multiclass(&fm.select_rows(train), &config)?;
                let path = split_path(&model, k + 1, splits.splits);
                let mut w = create(&path)?;
                writeln!(w, "{}", trained.to_json())?;
                w.flush()?;
                for warning in &trained.warnings {
                    eprintln!("warning: split {}: {warning}", k + 1);
                }
                let line = json!({
                    "split": k + 1,
                    "model": path.display().to_string(),
                    "machines": trained.machines.len(),
                    "train_rows": train.len(),
                });
                println!("{line}");
            }
        }
        SvmCmd::Eval { data, splits, model, confusion_out, wilson, summary } => {
            let fm = data.load()?;
            let method = if wilson { CiMethod::Wilson } else { CiMethod::ClopperPearson };
            for (k, (_, test)) in svm::model_splits(fm.n_rows(), splits.splits, splits.train_frac, data.seed)?.iter().enumerate() {
                let path = split_path(&model, k + 1, splits.splits);
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                let trained = MulticlassSvm::from_json(&text)?;
                let test_m = fm.select_rows(test);
                if test_m.columns() != trained.columns.as_slice() {
                    bail!("model columns {:?} do not match data columns {:?}", trained.columns, test_m.columns());
                }
                let pred = svm::predict_all(&trained, &test_m, exec)?;
                let cm = eval::confusion(&pred, labels_of(&test_m), &SpeedLabel::ALL)?;
                if let Some(base) = &confusion_out {
                    cm.write_csv(create(&split_path(base, k + 1, splits.splits))?)?;
                }
                let report = ClassificationReport::from_confusion(&cm, method)?;
                if summary {
                    eprintln!("split {}\n{}", k + 1, report.summary());
                }
                println!("{}", report.to_json());
            }
        }
    }
    Ok(())
}

fn run_synth(cmd: SynthCmd, exec: Execution) -> Result<()> {
    match cmd {
        SynthCmd::Markov { matrix, n, mean_len, sampler, binning, seed, out } => {
            let m = load_matrix(&matrix)?;
            let sampler = match sampler.as_deref() {
                Some("gpn") => DelaySampler::gpn(),
                Some("non-gpn") | Some("nongpn") => DelaySampler::non_gpn(),
                Some(other) => bail!("unknown sampler {other:?}; use gpn or non-gpn"),
                None if matrix.starts_with("non") => DelaySampler::non_gpn(),
                None => DelaySampler::gpn(),
            };
            let seqs = synth::gen_state_sequences_with(&m, n, mean_len, seed, exec)?;
            let routes = synth::states_to_delays(&seqs, &sampler, &binning.binning()?, seed)?;
            let mut w = output(out.as_deref())?;
            ingest::write_traceroute_csv(&routes, &mut w)?;
            w.flush()?;
        }
        SynthCmd::Rtt { n, seed, base_ms, km_coeff, diurnal_amp, sigma, two_proxy_prob, out, proxies_out } => {
            let model = RttGenModel {
                base_ms,
                km_coeff,
                diurnal_amp,
                noise_sigma: sigma,
                two_proxy_prob,
                seed,
                ..Default::default()
            };
            let s = synth::gen_rtt_dataset(&model, n)?;
            let mut w = create(&out)?;
            ingest::write_rtt_csv(&s.rtt_records, &mut w)?;
            w.flush()?;
            let mut w = create(&proxies_out)?;
            ingest::write_proxy_csv(&s.proxies, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn run_plot(cmd: PlotCmd) -> Result<()> {
    match cmd {
        PlotCmd::TimeEncoding { step, out } => {
            if step <= 0 {
                bail!("step must be positive");
            }
            let mut w = output(out.as_deref())?;
            writeln!(w, "seconds,time_cos,time_sin")?;
            for t in (0..=features::SECONDS_IN_DAY).step_by(step as usize) {
                // -6e-17 prints as 0.000000
                let tidy = |v: f64| (v * 1e6).round() / 1e6 + 0.0;
                let (c, s) = (tidy(features::encode_time_of_day(t)), tidy(features::encode_time_of_day_sin(t)));
                writeln!(w, "{t},{c:.6},{s:.6}")?;
            }
            w.flush()?;
        }
        PlotCmd::SpeedLabels { data, out } => {
            let ds = load_dataset(&data)?;
            let mut counts = [0usize; 7];
            for r in &ds.records {
                counts[bin_speed_label(r.rtt.gpn_rtt)?.ordinal() as usize - 1] += 1;
            }
            let mut w = output(out.as_deref())?;
            writeln!(w, "ordinal,label,count")?;
            for (label, c) in SpeedLabel::ALL.iter().zip(counts) {
                writeln!(w, "{},{},{c}", label.ordinal(), label.name())?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn parse_cli() -> Result<Cli, clap::Error> {
    let argv: Vec<String> = std::env::args().collect();
    let cmd = Cli::command();
    // first pass: every flag optional, config path and subcommand only
    let Ok(matches) = config::relaxed(cmd.clone()).try_get_matches_from(&argv) else {
        return Cli::try_parse_from(argv);
    };
    let Some(path) = matches.get_one::<PathBuf>("config") else {
        return Cli::try_parse_from(argv);
    };
    let usage = |e: anyhow::Error| Cli::command().error(clap::error::ErrorKind::InvalidValue, format!("{e:#}"));
    let pairs = config::parse_file(path).map_err(usage)?;
    let extra = config::overrides(&cmd, &matches, &pairs).map_err(usage)?;
    Cli::try_parse_from(argv.into_iter().chain(extra))
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };
    match cli.command {
        Command::Ingest(a) => run_ingest(a),
        Command::Markov(c) => run_markov(c, exec),
        Command::Mlp(c) => run_mlp(c, exec),
        Command::Svm(c) => run_svm(c, exec),
        Command::Synth(c) => run_synth(c, exec),
        Command::Plot(c) => run_plot(c),
    }
}

fn main() -> ExitCode {
    let cli = match parse_cli() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
