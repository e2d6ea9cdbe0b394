//! Aggregates episodes into AAL, round count, end-to-end latency, throughput
//! and the accuracy proxy.
//!
//! Throughput is accepted draft tokens `sum A_r` over wall-clock time, pooled
//! across episodes. With per-episode means this reproduces the
//! `AAL x Rounds / Latency` identity that Table-1-style reports satisfy.

use serde::{Deserialize, Serialize};

use crate::engine::EpisodeResult;
use crate::error::{Error, Result};

fn nonempty(results: &[EpisodeResult]) -> Result<()> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no episodes to aggregate".into()));
    }
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Per-episode mean accepted length, then mean over episodes.
pub fn aal(results: &[EpisodeResult]) -> Result<f64> {
    nonempty(results)?;
    if results.iter().any(|r| r.rounds.is_empty()) {
        return Err(Error::InvalidArgument("episode with zero rounds".into()));
    }
    Ok(mean(results.iter().map(EpisodeResult::aal)).0)
}

pub fn round_count(results: &[EpisodeResult]) -> Result<f64> {
    nonempty(results)?;
    Ok(mean(results.iter().map(|r| r.rounds.len() as f64)).0)
}

pub fn e2e_latency(results: &[EpisodeResult]) -> Result<f64> {
    nonempty(results)?;
    Ok(mean(results.iter().map(|r| r.latency_s)).0)
}

/// Total accepted tokens over total latency.
pub fn throughput(results: &[EpisodeResult]) -> Result<f64> {
    nonempty(results)?;
    let tokens: usize = results.iter().map(|r| r.accepted_tokens).sum();
    let latency: f64 = results.iter().map(|r| r.latency_s).sum();
    if !(latency > 0.0) {
        return Err(Error::InvalidArgument("total latency is zero".into()));
    }
    Ok(tokens as f64 / latency)
}

/// Throughput implied by reported per-episode means.
pub fn throughput_from_means(aal: f64, rounds: f64, latency_s: f64) -> Result<f64> {
    if !(latency_s > 0.0) {
        return Err(Error::InvalidArgument("latency must be positive".into()));
    }
    Ok(aal * rounds / latency_s)
}

/// Fraction of episodes that accepted no critical mismatch.
pub fn accuracy_proxy(results: &[EpisodeResult]) -> Result<f64> {
    nonempty(results)?;
    Ok(results.iter().filter(|r| r.correct).count() as f64 / results.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub episodes: usize,
    pub aal: f64,
    pub aal_std: f64,
    pub rounds_mean: f64,
    pub rounds_std: f64,
    pub latency_mean_s: f64,
    pub latency_std_s: f64,
    pub throughput: f64,
    pub accuracy_proxy: f64,
    pub accepted_tokens: usize,
    pub committed_tokens: usize,
    pub total_latency_s: f64,
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    pub draft_mean_s: f64,
    pub comm_mean_s: f64,
    pub verify_mean_s: f64,
    pub head_mean_s: f64,
}

impl MetricsSummary {
    pub fn from_results(results: &[EpisodeResult]) -> Result<Self> {
        let (aal_m, aal_std) = {
            aal(results)?;
            mean(results.iter().map(EpisodeResult::aal))
        };
        let (rounds_mean, rounds_std) = mean(results.iter().map(|r| r.rounds.len() as f64));
        let (latency_mean_s, latency_std_s) = mean(results.iter().map(|r| r.latency_s));
        Ok(Self {
            episodes: results.len(),
            aal: aal_m,
            aal_std,
            rounds_mean,
            rounds_std,
            latency_mean_s,
            latency_std_s,
            throughput: throughput(results)?,
            accuracy_proxy: accuracy_proxy(results)?,
            accepted_tokens: results.iter().map(|r| r.accepted_tokens).sum(),
            committed_tokens: results.iter().map(|r| r.tokens.len()).sum(),
            total_latency_s: results.iter().map(|r| r.latency_s).sum(),
            uplink_bits: results.iter().map(|r| r.uplink_bits).sum(),
            downlink_bits: results.iter().map(|r| r.downlink_bits).sum(),
            draft_mean_s: mean(results.iter().map(|r| r.draft_s)).0,
            comm_mean_s: mean(results.iter().map(|r| r.comm_s)).0,
            verify_mean_s: mean(results.iter().map(|r| r.verify_s)).0,
            head_mean_s: mean(results.iter().map(|r| r.head_s)).0,
        })
    }
}

pub const CSV_HEADER: &str =
    "mode,k,tau,rate_bps,rtt_s,aal,rounds,latency_s,throughput,accuracy_proxy,uplink_bits,downlink_bits";

/// One metrics CSV row; bit totals are means per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub mode: String,
    pub k: usize,
    pub tau: f64,
    pub rate_bps: f64,
    pub rtt_s: f64,
    pub aal: f64,
    pub rounds: f64,
    pub latency_s: f64,
    pub throughput: f64,
    pub accuracy_proxy: f64,
    pub uplink_bits: f64,
    pub downlink_bits: f64,
}

impl CsvRow {
    pub fn new(mode: &str, k: usize, tau: f64, rate_bps: f64, rtt_s: f64, s: &MetricsSummary) -> Self {
        let n = s.episodes as f64;
        Self {
            mode: mode.to_string(),
            k,
            tau,
            rate_bps,
            rtt_s,
            aal: s.aal,
            rounds: s.rounds_mean,
            latency_s: s.latency_mean_s,
            throughput: s.throughput,
            accuracy_proxy: s.accuracy_proxy,
            uplink_bits: s.uplink_bits as f64 / n,
            downlink_bits: s.downlink_bits as f64 / n,
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.mode,
            self.k,
            self.tau,
            self.rate_bps,
            self.rtt_s,
            self.aal,
            self.rounds,
            self.latency_s,
            self.throughput,
            self.accuracy_proxy,
            self.uplink_bits,
            self.downlink_bits
        )
    }
}
