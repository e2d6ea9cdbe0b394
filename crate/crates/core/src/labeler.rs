//! Training-set construction for the decision head.
//!
//! Stage 1 runs greedy decoding against the oracle and records each rejected
//! mismatch with its hidden states and criticality as the base label `b_t`.
//! Stage 2 relaxes those labels per sampled channel state: smoothed importance
//! `b~`, a CSI-dependent threshold `lambda(q)` and the soft policy
//! `pi = b * sigmoid((b~ - lambda) / rho)`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{generate_trace, ChannelConfig, CsiFeatures, CsiState, NormalizationBounds, Param, RateScale};
use crate::dataset::Dataset;
use crate::engine::localize;
use crate::error::{Error, Result};
use crate::head::{input_dim, sigmoid};
use crate::oracle::Oracle;
use crate::rng::{self, SimRng};

/// One rejected mismatch from a greedy decoding trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchRecord {
    pub episode: usize,
    /// Index within the episode's mismatch sequence.
    pub index: usize,
    pub round: usize,
    /// Absolute token position.
    pub position: u64,
    pub draft_token: u32,
    pub target_token: u32,
    /// Base label: 1 if the mismatch is critical.
    pub label: u8,
    pub h_draft: Vec<f64>,
    pub h_target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: usize,
    pub seed: u64,
    pub rounds: usize,
    pub mismatches: Vec<MismatchRecord>,
}

impl Episode {
    pub fn labels(&self) -> Vec<u8> {
        self.mismatches.iter().map(|m| m.label).collect()
    }
}

/// Episode line of `episodes.jsonl`; the mismatches go to `mismatches.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EpisodeLine {
    id: usize,
    seed: u64,
    rounds: usize,
    positions: Vec<u64>,
    labels: Vec<u8>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    config_hash: Option<String>,
}

/// Parameters of a trace-collection run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSpec {
    pub k: usize,
    pub max_tokens: usize,
    pub prompt_len: u64,
}

fn trace_episode(oracle: &Oracle, spec: &TraceSpec, id: usize, seed: u64) -> Episode {
    let mut mismatches = Vec::new();
    let mut produced = 0usize;
    let mut round = 0usize;
    while produced < spec.max_tokens {
        let mut rng = rng::rng_for(seed, &[rng::stream::ROUND, round as u64]);
        let start = spec.prompt_len + produced as u64;
        let block = oracle.draft(start, spec.k, &mut rng);
        let view = oracle.verify_view(&block, &mut rng);
        match localize(&block.tokens, &view.argmax).first() {
            Some(&j) => {
                mismatches.push(MismatchRecord {
                    episode: id,
                    index: mismatches.len(),
                    round,
                    position: start + j as u64,
                    draft_token: block.tokens[j],
                    target_token: view.argmax[j],
                    label: u8::from(view.critical[j] == Some(true)),
                    h_draft: block.hiddens[j].clone(),
                    h_target: view.hiddens[j].clone(),
                });
                produced += j + 1;
            }
            None => produced += spec.k + 1,
        }
        round += 1;
    }
    Episode {
        id,
        seed,
        rounds: round,
        mismatches,
    }
}

/// Runs `n_episodes` greedy decoding episodes and records the rejected
/// mismatch of every round. Episode `e` uses seed `derive_seed(seed, [TRACE, e])`.
pub fn collect_traces(n_episodes: usize, spec: &TraceSpec, oracle: &Oracle, seed: u64) -> Result<Vec<Episode>> {
    if n_episodes == 0 || spec.k == 0 || spec.max_tokens == 0 {
        return Err(Error::InvalidArgument(
            "trace collection needs n_episodes, k and max_tokens >= 1".into(),
        ));
    }
    Ok((0..n_episodes)
        .into_par_iter()
        .map(|e| trace_episode(oracle, spec, e, rng::derive_seed(seed, &[rng::stream::TRACE, e as u64])))
        .collect())
}

/// `b~_t = max_{k: b_k = 1} alpha^|t-k|`, or 0 when no position is important.
pub fn smooth(b: &[u8], alpha: f64) -> Vec<f64> {
    let ones: Vec<usize> = (0..b.len()).filter(|&k| b[k] == 1).collect();
    (0..b.len())
        .map(|t| {
            ones.iter()
                .map(|&k| alpha.powi(t.abs_diff(k) as i32))
                .fold(0.0, f64::max)
        })
        .collect()
}

/// `sum (b_t - a_t) * b~_t`.
pub fn budget_objective(b: &[u8], b_smooth: &[f64], a: &[u8]) -> f64 {
    b.iter()
        .zip(b_smooth)
        .zip(a)
        .map(|((&bt, &s), &at)| (f64::from(bt) - f64::from(at)) * s)
        .sum()
}

/// Minimizes the budget objective subject to `sum a <= budget` and `a <= b` by
/// repairing the important positions with the largest `b~` (lowest index on ties).
pub fn solve_budget_exact(b: &[u8], b_smooth: &[f64], budget: usize) -> Result<(Vec<u8>, f64)> {
    if b.len() != b_smooth.len() {
        return Err(Error::DimensionMismatch {
            what: "smoothed importance",
            expected: b.len(),
            got: b_smooth.len(),
        });
    }
    let mut important: Vec<usize> = (0..b.len()).filter(|&t| b[t] == 1).collect();
    important.sort_by(|&x, &y| b_smooth[y].total_cmp(&b_smooth[x]).then(x.cmp(&y)));
    let mut a = vec![0u8; b.len()];
    for &t in important.iter().take(budget) {
        a[t] = 1;
    }
    let obj = budget_objective(b, b_smooth, &a);
    Ok((a, obj))
}

/// `pi_t = b_t * sigmoid((b~_t - lambda) / rho)`.
pub fn soft_policy(b_t: u8, b_smooth_t: f64, lambda: f64, rho: f64) -> f64 {
    if b_t == 0 {
        0.0
    } else {
        sigmoid((b_smooth_t - lambda) / rho)
    }
}

/// `lambda = lambda_hi - (lambda_hi - lambda_lo) * q`.
pub fn lambda_of_csi(q: f64, lambda_hi: f64, lambda_lo: f64) -> f64 {
    lambda_lo * q + lambda_hi * (1.0 - q)
}

/// `B = max(b_min, round(q * n_important))`.
pub fn budget_of_csi(q: f64, n_important: usize, b_min: usize) -> usize {
    ((q * n_important as f64).round() as usize).max(b_min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelPolicy {
    /// Bernoulli draws from the soft policy.
    Soft,
    /// Deterministic budgeted repair with `B = budget_of_csi(q, ...)`.
    Budget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelerConfig {
    pub alpha: f64,
    pub rho: f64,
    pub lambda_hi: f64,
    pub lambda_lo: f64,
    pub b_min: usize,
    /// CSI realizations sampled per episode.
    pub csi_samples: usize,
    pub policy: LabelPolicy,
    /// Regime the relabeling CSI is drawn from.
    pub channel: ChannelConfig,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            rho: 0.1,
            lambda_hi: 0.8,
            lambda_lo: 0.2,
            b_min: 0,
            csi_samples: 4,
            policy: LabelPolicy::Soft,
            channel: ChannelConfig {
                regime: "sampled".into(),
                rate_up_bps: Param::Range([15e6, 600e6]),
                rate_down_bps: Param::Range([15e6, 600e6]),
                per_up: Param::Fixed(0.0),
                per_down: Param::Fixed(0.0),
                rtt_s: Param::Range([0.005, 0.05]),
                rate_scale: RateScale::Log,
                switch_prob: 0.0,
                alt: None,
            },
        }
    }
}

impl LabelerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha={} outside (0,1)", self.alpha)));
        }
        if !(self.rho > 0.0) {
            return Err(Error::Config("rho must be positive".into()));
        }
        if !(0.0 <= self.lambda_lo && self.lambda_lo <= self.lambda_hi) {
            return Err(Error::Config("need 0 <= lambda_lo <= lambda_hi".into()));
        }
        if self.csi_samples == 0 {
            return Err(Error::Config("csi_samples must be at least 1".into()));
        }
        self.channel.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabeledInstance {
    pub features: Vec<f64>,
    pub label: u8,
    pub base_label: u8,
    pub episode: usize,
    pub mismatch: usize,
    pub csi_sample: usize,
    pub q: f64,
}

/// Labels every mismatch of `episode` once per CSI sample.
pub fn relabel(
    episode: &Episode,
    csi_samples: &[CsiState],
    cfg: &LabelerConfig,
    bounds: &NormalizationBounds,
    rng: &mut SimRng,
) -> Vec<RelabeledInstance> {
    let b = episode.labels();
    let b_smooth = smooth(&b, cfg.alpha);
    let n_important = b.iter().filter(|&&x| x == 1).count();
    let mut out = Vec::with_capacity(b.len() * csi_samples.len());
    for (s, csi) in csi_samples.iter().enumerate() {
        let q = csi.quality(bounds);
        let features = csi.features(bounds);
        let actions: Vec<u8> = match cfg.policy {
            LabelPolicy::Soft => {
                let lambda = lambda_of_csi(q, cfg.lambda_hi, cfg.lambda_lo);
                b.iter()
                    .zip(&b_smooth)
                    .map(|(&bt, &st)| u8::from(rng.random::<f64>() < soft_policy(bt, st, lambda, cfg.rho)))
                    .collect()
            }
            LabelPolicy::Budget => {
                let budget = budget_of_csi(q, n_important, cfg.b_min);
                solve_budget_exact(&b, &b_smooth, budget).expect("lengths agree").0
            }
        };
        for (m, a) in episode.mismatches.iter().zip(actions) {
            out.push(RelabeledInstance {
                features: concat(m, &features),
                label: a,
                base_label: m.label,
                episode: episode.id,
                mismatch: m.index,
                csi_sample: s,
                q,
            });
        }
    }
    out
}

fn concat(m: &MismatchRecord, csi: &CsiFeatures) -> Vec<f64> {
    let mut z = Vec::with_capacity(m.h_draft.len() + m.h_target.len() + csi.0.len());
    z.extend_from_slice(&m.h_draft);
    z.extend_from_slice(&m.h_target);
    z.extend_from_slice(csi.as_slice());
    z
}

/// CSI realizations for one episode, drawn from the labeler's channel regime.
pub fn sample_csi(cfg: &LabelerConfig, seed: u64, episode: usize) -> Result<Vec<CsiState>> {
    let s = rng::derive_seed(seed, &[rng::stream::RELABEL, episode as u64, 0]);
    Ok(generate_trace(&cfg.channel, s, cfg.csi_samples)?.states)
}

/// Relabels every episode; output order follows episode order.
pub fn relabel_all(
    episodes: &[Episode],
    cfg: &LabelerConfig,
    bounds: &NormalizationBounds,
    seed: u64,
) -> Result<Vec<RelabeledInstance>> {
    cfg.validate()?;
    let per_episode: Vec<Vec<RelabeledInstance>> = episodes
        .par_iter()
        .map(|ep| {
            let csi = sample_csi(cfg, seed, ep.id)?;
            let mut rng = rng::rng_for(seed, &[rng::stream::RELABEL, ep.id as u64, 1]);
            Ok(relabel(ep, &csi, cfg, bounds, &mut rng))
        })
        .collect::<Result<_>>()?;
    Ok(per_episode.into_iter().flatten().collect())
}

pub fn instances_to_dataset(instances: &[RelabeledInstance], cols: usize) -> Result<Dataset> {
    let mut d = Dataset::new(cols);
    for inst in instances {
        d.push(&inst.features, f64::from(inst.label))?;
    }
    Ok(d)
}

/// One row per mismatch with its base label and zeroed CSI features.
pub fn base_dataset(episodes: &[Episode], d_h_draft: usize, d_h_target: usize) -> Result<Dataset> {
    let mut d = Dataset::new(input_dim(d_h_draft, d_h_target));
    for m in episodes.iter().flat_map(|e| &e.mismatches) {
        d.push(&concat(m, &CsiFeatures::ZERO), f64::from(m.label))?;
    }
    Ok(d)
}

/// Writes `episodes.jsonl` and `mismatches.jsonl` into `dir`.
pub fn write_traces(dir: &Path, episodes: &[Episode], config_hash: Option<&str>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ep_path = dir.join("episodes.jsonl");
    let mm_path = dir.join("mismatches.jsonl");
    let mut ep_out = BufWriter::new(File::create(&ep_path).map_err(|e| Error::io(&ep_path, e))?);
    let mut mm_out = BufWriter::new(File::create(&mm_path).map_err(|e| Error::io(&mm_path, e))?);
    for ep in episodes {
        let line = EpisodeLine {
            id: ep.id,
            seed: ep.seed,
            rounds: ep.rounds,
            positions: ep.mismatches.iter().map(|m| m.position).collect(),
            labels: ep.labels(),
            config_hash: config_hash.map(str::to_string),
        };
        writeln!(ep_out, "{}", serde_json::to_string(&line)?).map_err(|e| Error::io(&ep_path, e))?;
        for m in &ep.mismatches {
            writeln!(mm_out, "{}", serde_json::to_string(m)?).map_err(|e| Error::io(&mm_path, e))?;
        }
    }
    ep_out.flush().map_err(|e| Error::io(&ep_path, e))?;
    mm_out.flush().map_err(|e| Error::io(&mm_path, e))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

/// Reads traces written by [`write_traces`], checking that both files agree.
pub fn read_traces(dir: &Path) -> Result<Vec<Episode>> {
    let ep_path = dir.join("episodes.jsonl");
    let lines: Vec<EpisodeLine> = read_jsonl(&ep_path)?;
    let records: Vec<MismatchRecord> = read_jsonl(&dir.join("mismatches.jsonl"))?;
    let mut episodes: Vec<Episode> = lines
        .iter()
        .map(|l| Episode {
            id: l.id,
            seed: l.seed,
            rounds: l.rounds,
            mismatches: Vec::with_capacity(l.positions.len()),
        })
        .collect();
    let index: std::collections::HashMap<usize, usize> =
        episodes.iter().enumerate().map(|(i, e)| (e.id, i)).collect();
    for r in records {
        let at = *index.get(&r.episode).ok_or_else(|| Error::Format {
            path: dir.join("mismatches.jsonl"),
            reason: format!("mismatch refers to unknown episode {}", r.episode),
        })?;
        episodes[at].mismatches.push(r);
    }
    for (ep, line) in episodes.iter().zip(&lines) {
        let positions: Vec<u64> = ep.mismatches.iter().map(|m| m.position).collect();
        if positions != line.positions || ep.labels() != line.labels {
            return Err(Error::Format {
                path: ep_path.clone(),
                reason: format!("episode {} disagrees with its mismatch records", ep.id),
            });
        }
    }
    Ok(episodes)
}
