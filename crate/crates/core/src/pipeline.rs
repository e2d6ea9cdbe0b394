//! Pipeline stages behind the CLI subcommands. Each stage is a pure function
//! of the config; outputs are written in a fixed order so reruns are
//! byte-identical regardless of thread count.
//!
//! Layout under the output directory:
//! `traces/`, `data/`, `head/`, `eval/`, `ablation/` and `run_manifest.json`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::generate_trace;
use crate::compute::ComputeModel;
use crate::config::{ExperimentConfig, Scenario};
use crate::dataset::Dataset;
use crate::engine::{run_episode, EngineConfig, EngineContext, EpisodeResult, Mode, Protocol, Verifier};
use crate::error::{Error, Result};
use crate::head::{self, auc, evaluate, tau_to_logit, EpochStats, HeadParams, TrainConfig};
use crate::labeler::{self, TraceSpec};
use crate::metrics::{CsvRow, MetricsSummary, CSV_HEADER};
use crate::oracle::Oracle;
use crate::rng::{self, stream};

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Output locations below a run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn traces(&self) -> PathBuf {
        self.root.join("traces")
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn head(&self) -> PathBuf {
        self.root.join("head")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn ablation(&self) -> PathBuf {
        self.root.join("ablation")
    }
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

struct LineWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LineWriter {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path,
        })
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}").map_err(|e| Error::io(&self.path, e))
    }

    fn json<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let text = serde_json::to_string(value)?;
        self.line(&text)
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub calibrated_p_match: f64,
}

pub fn write_manifest(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    mkdir(out)?;
    let m = RunManifest {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        calibrated_p_match: cfg.oracle.resolved()?.p_match,
    };
    write_json(&out.join(MANIFEST_FILE), &m)?;
    Ok(m)
}

// ---------------------------------------------------------------- trace

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub config_hash: String,
    pub episodes: usize,
    pub rounds_mean: f64,
    pub mismatches: usize,
    pub critical: usize,
    pub critical_fraction: f64,
    pub p_match: f64,
}

pub fn trace_spec(cfg: &ExperimentConfig) -> TraceSpec {
    TraceSpec {
        k: cfg.engine.k,
        max_tokens: cfg.engine.max_tokens,
        prompt_len: cfg.engine.prompt_len,
    }
}

pub fn cmd_trace(cfg: &ExperimentConfig, out: &Path) -> Result<TraceReport> {
    cfg.validate()?;
    write_manifest(cfg, out)?;
    let layout = Layout::new(out);
    let oracle = Oracle::new(&cfg.oracle)?;
    let seed = rng::derive_seed(cfg.seed, &[stream::TRACE]);
    let episodes = labeler::collect_traces(cfg.trace.n_episodes, &trace_spec(cfg), &oracle, seed)?;
    let hash = cfg.hash();
    labeler::write_traces(&layout.traces(), &episodes, Some(&hash))?;
    let mismatches: usize = episodes.iter().map(|e| e.mismatches.len()).sum();
    let critical: usize = episodes
        .iter()
        .flat_map(|e| &e.mismatches)
        .filter(|m| m.label == 1)
        .count();
    let report = TraceReport {
        config_hash: hash,
        episodes: episodes.len(),
        rounds_mean: episodes.iter().map(|e| e.rounds as f64).sum::<f64>() / episodes.len() as f64,
        mismatches,
        critical,
        critical_fraction: if mismatches == 0 { 0.0 } else { critical as f64 / mismatches as f64 },
        p_match: oracle.config().p_match,
    };
    write_json(&layout.traces().join("stats.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- relabel

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QBucket {
    pub q_lo: f64,
    pub q_hi: f64,
    pub rows: usize,
    pub positive_rate: f64,
    pub base_positive_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabelReport {
    pub config_hash: String,
    pub rows: usize,
    pub cols: usize,
    pub positives: usize,
    pub negatives: usize,
    pub positive_rate: f64,
    pub base_positive_rate: f64,
    pub csi_samples: usize,
    pub q_buckets: Vec<QBucket>,
    pub dataset_sha256: String,
}

const Q_BUCKETS: usize = 5;

fn q_buckets(instances: &[labeler::RelabeledInstance]) -> Vec<QBucket> {
    (0..Q_BUCKETS)
        .map(|b| {
            let lo = b as f64 / Q_BUCKETS as f64;
            let hi = (b + 1) as f64 / Q_BUCKETS as f64;
            let inside: Vec<_> = instances
                .iter()
                .filter(|i| i.q >= lo && (i.q < hi || (b + 1 == Q_BUCKETS && i.q <= hi)))
                .collect();
            let n = inside.len().max(1) as f64;
            QBucket {
                q_lo: lo,
                q_hi: hi,
                rows: inside.len(),
                positive_rate: inside.iter().filter(|i| i.label == 1).count() as f64 / n,
                base_positive_rate: inside.iter().filter(|i| i.base_label == 1).count() as f64 / n,
            }
        })
        .collect()
}

pub fn cmd_relabel(cfg: &ExperimentConfig, out: &Path) -> Result<RelabelReport> {
    cfg.validate()?;
    write_manifest(cfg, out)?;
    let layout = Layout::new(out);
    let episodes = labeler::read_traces(&layout.traces())?;
    if episodes.iter().all(|e| e.mismatches.is_empty()) {
        return Err(Error::Dataset("trace set contains no mismatches".into()));
    }
    let seed = rng::derive_seed(cfg.seed, &[stream::RELABEL]);
    let instances = labeler::relabel_all(&episodes, &cfg.labeler, &cfg.channel.bounds, seed)?;
    let cols = head::input_dim(cfg.oracle.d_h_draft, cfg.oracle.d_h_target);
    let dataset = labeler::instances_to_dataset(&instances, cols)?;
    mkdir(&layout.data())?;
    let bin = layout.data().join("dataset.bin");
    dataset.write(&bin)?;
    let positives = dataset.positives();
    let report = RelabelReport {
        config_hash: cfg.hash(),
        rows: dataset.len(),
        cols,
        positives,
        negatives: dataset.len() - positives,
        positive_rate: dataset.positive_rate(),
        base_positive_rate: instances.iter().filter(|i| i.base_label == 1).count() as f64 / instances.len() as f64,
        csi_samples: cfg.labeler.csi_samples,
        q_buckets: q_buckets(&instances),
        dataset_sha256: sha256_file(&bin)?,
    };
    write_json(&layout.data().join("dataset.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- train

/// Metadata sidecar of a params file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMeta {
    pub config_hash: String,
    pub d_in: usize,
    pub d_j: usize,
    pub dropout: f64,
    /// False for the ablation head, which sees zeroed CSI features.
    pub use_csi: bool,
    pub pos_weight: f64,
    pub train_rows: usize,
    pub holdout_rows: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub holdout_loss: f64,
    pub holdout_accuracy: f64,
    pub holdout_auc: Option<f64>,
    pub curve: Vec<EpochStats>,
    pub train_config: TrainConfig,
    pub params_sha256: String,
    pub warnings: Vec<String>,
}

/// Trains on a seeded 80% split and scores the remaining 20%.
pub fn fit_head(data: &Dataset, cfg: &ExperimentConfig, use_csi: bool, label: u64) -> Result<(HeadParams, HeadMeta)> {
    if data.len() < 2 {
        return Err(Error::Dataset(format!("dataset has {} rows, need at least 2", data.len())));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng::rng_for(cfg.seed, &[stream::SPLIT, label]));
    let n_hold = (data.len() / 5).max(1);
    let holdout = data.subset(&order[..n_hold]);
    let train_set = data.subset(&order[n_hold..]);

    let mut tc = cfg.train.clone();
    tc.seed = rng::derive_seed(cfg.seed, &[stream::TRAIN, label, cfg.train.seed]);
    let trained = head::train(&train_set, &tc)?;
    let mut warnings = Vec::new();
    if tc.lr == 0.0 {
        warnings.push("learning rate is 0; parameters stay at their initialization".to_string());
    }
    let params = trained.params.quantized();
    let (holdout_loss, holdout_accuracy) = evaluate(&params, &holdout, trained.pos_weight)?;
    let scores: Vec<f64> = (0..holdout.len())
        .map(|i| params.forward(holdout.row(i)).map(|o| o.logit))
        .collect::<Result<_>>()?;
    let last = trained.curve.last().copied().expect("epochs >= 1");
    let meta = HeadMeta {
        config_hash: cfg.hash(),
        d_in: params.d_in,
        d_j: params.d_j,
        dropout: tc.dropout,
        use_csi,
        pos_weight: trained.pos_weight,
        train_rows: train_set.len(),
        holdout_rows: holdout.len(),
        initial_loss: trained.initial_loss,
        final_loss: last.loss,
        train_accuracy: last.accuracy,
        holdout_loss,
        holdout_accuracy,
        holdout_auc: auc(&scores, &holdout.labels),
        curve: trained.curve,
        train_config: tc,
        params_sha256: String::new(),
        warnings,
    };
    Ok((params, meta))
}

fn save_head(params: &HeadParams, mut meta: HeadMeta, bin: &Path) -> Result<HeadMeta> {
    params.write(bin)?;
    meta.params_sha256 = sha256_file(bin)?;
    write_json(&bin.with_extension("json"), &meta)?;
    Ok(meta)
}

/// Loads a params file and its sidecar.
pub fn load_head(bin: &Path) -> Result<(HeadParams, HeadMeta)> {
    let mut params = HeadParams::read(bin)?;
    let meta: HeadMeta = read_json(&bin.with_extension("json"))?;
    params.dropout = meta.dropout;
    Ok((params, meta))
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<HeadMeta> {
    cfg.validate()?;
    write_manifest(cfg, out)?;
    let layout = Layout::new(out);
    let data = Dataset::read(&layout.data().join("dataset.bin"))?;
    let (params, meta) = fit_head(&data, cfg, true, 0)?;
    mkdir(&layout.head())?;
    save_head(&params, meta, &layout.head().join("head.bin"))
}

// ---------------------------------------------------------------- eval

/// Resolved simulation inputs shared across grid points.
pub struct Simulator {
    pub oracle: Oracle,
    pub wire: crate::wire::WireConfig,
    pub compute: ComputeModel,
    pub cfg: ExperimentConfig,
}

impl Simulator {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            oracle: Oracle::new(&cfg.oracle)?,
            wire: cfg.wire,
            compute: cfg.compute.resolve()?,
            cfg: cfg.clone(),
        })
    }

    pub fn context<'a>(&'a self, head: Option<Verifier<'a>>) -> EngineContext<'a> {
        EngineContext {
            oracle: &self.oracle,
            wire: &self.wire,
            compute: &self.compute,
            bounds: self.cfg.channel.bounds,
            head,
        }
    }

    /// Runs `episodes` episodes of one grid point. Episode `e` uses seed
    /// `derive_seed(seed, [stream_label, e])` in every mode, so points are paired.
    #[allow(clippy::too_many_arguments)]
    pub fn run_point(
        &self,
        head: Option<Verifier<'_>>,
        mode: Mode,
        k: usize,
        tau: f64,
        scenario: &Scenario,
        episodes: usize,
        stream_label: u64,
    ) -> Result<Vec<EpisodeResult>> {
        let engine = EngineConfig {
            mode,
            k,
            tau,
            ..self.cfg.engine.clone()
        };
        let trace = generate_trace(&scenario.channel(), 0, 1)?;
        let ctx = self.context(head);
        (0..episodes)
            .into_par_iter()
            .map(|e| {
                let seed = rng::derive_seed(self.cfg.seed, &[stream_label, e as u64]);
                run_episode(&engine, &ctx, &trace, e, seed)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
struct EpisodeLine<'a> {
    config_hash: &'a str,
    scenario: &'a str,
    mode: Mode,
    k: usize,
    tau: f64,
    episode: usize,
    seed: u64,
    rounds: usize,
    aal: f64,
    accepted_tokens: usize,
    committed_tokens: usize,
    accepted_critical: usize,
    correct: bool,
    latency_s: f64,
    uplink_bits: u64,
    downlink_bits: u64,
}

#[derive(Debug, Clone, Serialize)]
struct RoundLine<'a> {
    config_hash: &'a str,
    scenario: &'a str,
    mode: Mode,
    k: usize,
    tau: f64,
    episode: usize,
    round: usize,
    start: u64,
    m: usize,
    rejected_at: Option<usize>,
    accepted: usize,
    committed: usize,
    accepted_critical: usize,
    protocol: Protocol,
    rtt_s: f64,
    uplink_bits: u64,
    downlink_bits: u64,
    comm_s: f64,
    draft_s: f64,
    verify_s: f64,
    head_s: f64,
    latency_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub scenario: String,
    pub mode: Mode,
    pub k: usize,
    pub tau: f64,
    pub summary: MetricsSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig4Series {
    pub mode: Mode,
    pub k: Vec<usize>,
    pub latency_s: Vec<f64>,
    pub aal: Vec<f64>,
    pub rounds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig4Panel {
    pub scenario: String,
    pub rate_bps: f64,
    pub rtt_s: f64,
    pub series: Vec<Fig4Series>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub tau: f64,
    pub tau_logit: f64,
    pub points: Vec<PointSummary>,
    pub tau_sweep: Vec<PointSummary>,
}

fn needs_head(cfg: &ExperimentConfig) -> bool {
    // The tau sweep always runs a learned mode.
    cfg.sweep.modes.iter().any(|m| m.uses_head()) || !cfg.sweep.taus.is_empty()
}

pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path) -> Result<EvalReport> {
    let sim = Simulator::new(cfg)?;
    write_manifest(cfg, out)?;
    let layout = Layout::new(out);
    let head_bin = layout.head().join("head.bin");
    let loaded = if needs_head(cfg) {
        if !head_bin.exists() {
            return Err(Error::Config(format!(
                "learned modes need trained head params at {}",
                head_bin.display()
            )));
        }
        Some(load_head(&head_bin)?)
    } else {
        None
    };
    let verifier = loaded.as_ref().map(|(p, m)| Verifier {
        params: p,
        use_csi: m.use_csi,
    });
    let hash = cfg.hash();
    let dir = layout.eval();
    mkdir(&dir)?;
    let mut csv = LineWriter::create(dir.join("metrics.csv"))?;
    csv.line(CSV_HEADER)?;
    let mut episodes_out = LineWriter::create(dir.join("episodes.jsonl"))?;
    let mut rounds_out = LineWriter::create(dir.join("rounds.jsonl"))?;
    let s = &cfg.sweep;
    let mut points = Vec::new();
    let mut panels = Vec::new();

    let mut emit = |scenario: &Scenario, mode: Mode, k: usize, tau: f64, results: &[EpisodeResult]| -> Result<PointSummary> {
        for r in results {
            episodes_out.json(&EpisodeLine {
                config_hash: &hash,
                scenario: &scenario.name,
                mode,
                k,
                tau,
                episode: r.episode,
                seed: r.seed,
                rounds: r.n_rounds(),
                aal: r.aal(),
                accepted_tokens: r.accepted_tokens,
                committed_tokens: r.tokens.len(),
                accepted_critical: r.accepted_critical,
                correct: r.correct,
                latency_s: r.latency_s,
                uplink_bits: r.uplink_bits,
                downlink_bits: r.downlink_bits,
            })?;
        }
        for r in results.iter().take(s.round_log_episodes) {
            for o in &r.rounds {
                rounds_out.json(&RoundLine {
                    config_hash: &hash,
                    scenario: &scenario.name,
                    mode,
                    k,
                    tau,
                    episode: r.episode,
                    round: o.round,
                    start: o.start,
                    m: o.m,
                    rejected_at: o.rejected_at,
                    accepted: o.accepted,
                    committed: o.committed.len(),
                    accepted_critical: o.accepted_critical,
                    protocol: o.protocol,
                    rtt_s: o.rtt_s,
                    uplink_bits: o.comm.uplink_bits,
                    downlink_bits: o.comm.downlink_bits,
                    comm_s: o.comm.total_s,
                    draft_s: o.compute.draft_s,
                    verify_s: o.compute.verify_s,
                    head_s: o.compute.head_s,
                    latency_s: o.latency_s,
                })?;
            }
        }
        Ok(PointSummary {
            scenario: scenario.name.clone(),
            mode,
            k,
            tau,
            summary: MetricsSummary::from_results(results)?,
        })
    };

    for scenario in &s.scenarios {
        let mut series = Vec::new();
        for &mode in &s.modes {
            let mut fs = Fig4Series {
                mode,
                k: Vec::new(),
                latency_s: Vec::new(),
                aal: Vec::new(),
                rounds: Vec::new(),
            };
            for &k in &s.ks {
                let results = sim.run_point(verifier, mode, k, s.tau, scenario, s.episodes, stream::EVAL)?;
                let point = emit(scenario, mode, k, s.tau, &results)?;
                csv.line(&CsvRow::new(mode.as_str(), k, s.tau, scenario.rate_bps, scenario.rtt_s, &point.summary).to_csv())?;
                fs.k.push(k);
                fs.latency_s.push(point.summary.latency_mean_s);
                fs.aal.push(point.summary.aal);
                fs.rounds.push(point.summary.rounds_mean);
                points.push(point);
            }
            series.push(fs);
        }
        panels.push(Fig4Panel {
            scenario: scenario.name.clone(),
            rate_bps: scenario.rate_bps,
            rtt_s: scenario.rtt_s,
            series,
        });
    }

    let mut tau_csv = LineWriter::create(dir.join("tau_sweep.csv"))?;
    tau_csv.line(&format!("{CSV_HEADER},tau_logit"))?;
    let scenario = &s.scenarios[s.tau_sweep_scenario];
    let mut tau_sweep = Vec::new();
    for &tau in &s.taus {
        let results = sim.run_point(verifier, Mode::WisvFh, s.tau_sweep_k, tau, scenario, s.episodes, stream::EVAL)?;
        let summary = MetricsSummary::from_results(&results)?;
        let row = CsvRow::new(Mode::WisvFh.as_str(), s.tau_sweep_k, tau, scenario.rate_bps, scenario.rtt_s, &summary);
        tau_csv.line(&format!("{},{}", row.to_csv(), tau_to_logit(tau)))?;
        tau_sweep.push(PointSummary {
            scenario: scenario.name.clone(),
            mode: Mode::WisvFh,
            k: s.tau_sweep_k,
            tau,
            summary,
        });
    }
    csv.finish()?;
    episodes_out.finish()?;
    rounds_out.finish()?;
    tau_csv.finish()?;

    #[derive(Serialize)]
    struct Fig4<'a> {
        config_hash: &'a str,
        tau: f64,
        tau_logit: f64,
        panels: &'a [Fig4Panel],
    }
    write_json(
        &dir.join("fig4.json"),
        &Fig4 {
            config_hash: &hash,
            tau: s.tau,
            tau_logit: tau_to_logit(s.tau),
            panels: &panels,
        },
    )?;
    let report = EvalReport {
        config_hash: hash.clone(),
        tau: s.tau,
        tau_logit: tau_to_logit(s.tau),
        points,
        tau_sweep,
    };
    write_json(&dir.join("summary.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- ablation

/// Paired AAL difference (CSI-aware minus no-CSI) over identical episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDiff {
    pub scenario: String,
    pub episodes: usize,
    pub mean_diff: f64,
    pub std_err: f64,
    /// `mean_diff / std_err`; infinite when every pair differs identically.
    pub z: f64,
    pub csi_aware: MetricsSummary,
    pub no_csi: MetricsSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config_hash: String,
    pub tau: f64,
    pub k: usize,
    pub no_csi_head: HeadMeta,
    pub scenarios: Vec<PairedDiff>,
}

pub fn paired_diff(a: &[EpisodeResult], b: &[EpisodeResult]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x.aal() - y.aal()).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

pub fn cmd_ablate(cfg: &ExperimentConfig, out: &Path) -> Result<AblationReport> {
    let sim = Simulator::new(cfg)?;
    write_manifest(cfg, out)?;
    let layout = Layout::new(out);
    let (aware, _) = load_head(&layout.head().join("head.bin"))?;
    let episodes = labeler::read_traces(&layout.traces())?;
    let base = labeler::base_dataset(&episodes, cfg.oracle.d_h_draft, cfg.oracle.d_h_target)?;
    let (blind, meta) = fit_head(&base, cfg, false, 1)?;
    let dir = layout.ablation();
    mkdir(&dir)?;
    let meta = save_head(&blind, meta, &dir.join("head_nocsi.bin"))?;

    let a = &cfg.ablation;
    let variants = [
        ("csi_aware", Verifier { params: &aware, use_csi: true }),
        ("no_csi", Verifier { params: &blind, use_csi: false }),
    ];
    let mut csv = LineWriter::create(dir.join("ablation.csv"))?;
    csv.line(&format!("variant,scenario,{CSV_HEADER}"))?;
    let mut scenarios = Vec::new();
    for scenario in &a.scenarios {
        let mut runs = Vec::new();
        for (name, v) in &variants {
            let results = sim.run_point(Some(*v), Mode::WisvFh, a.k, a.tau, scenario, a.episodes, stream::ABLATION)?;
            let summary = MetricsSummary::from_results(&results)?;
            let row = CsvRow::new(Mode::WisvFh.as_str(), a.k, a.tau, scenario.rate_bps, scenario.rtt_s, &summary);
            csv.line(&format!("{name},{},{}", scenario.name, row.to_csv()))?;
            runs.push((results, summary));
        }
        let (mean_diff, std_err) = paired_diff(&runs[0].0, &runs[1].0);
        let z = if std_err > 0.0 {
            mean_diff / std_err
        } else if mean_diff == 0.0 {
            0.0
        } else {
            mean_diff.signum() * f64::INFINITY
        };
        let no_csi = runs.pop().expect("two variants").1;
        let csi_aware = runs.pop().expect("two variants").1;
        scenarios.push(PairedDiff {
            scenario: scenario.name.clone(),
            episodes: a.episodes,
            mean_diff,
            std_err,
            z,
            csi_aware,
            no_csi,
        });
    }
    csv.finish()?;
    let report = AblationReport {
        config_hash: cfg.hash(),
        tau: a.tau,
        k: a.k,
        no_csi_head: meta,
        scenarios,
    };
    write_json(&dir.join("ablation.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllReport {
    pub trace: TraceReport,
    pub relabel: RelabelReport,
    pub train: HeadMeta,
    pub eval_points: usize,
    pub ablation: AblationReport,
}

pub fn cmd_all(cfg: &ExperimentConfig, out: &Path) -> Result<AllReport> {
    let trace = cmd_trace(cfg, out)?;
    let relabel = cmd_relabel(cfg, out)?;
    let train = cmd_train(cfg, out)?;
    let eval = cmd_eval(cfg, out)?;
    let ablation = cmd_ablate(cfg, out)?;
    Ok(AllReport {
        trace,
        relabel,
        train,
        eval_points: eval.points.len(),
        ablation,
    })
}
