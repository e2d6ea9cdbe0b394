//! Round-by-round decoding state machine: greedy speculative decoding,
//! speculative sampling, and learned verification over FH / SH / adaptive
//! uplink protocols.
//!
//! Each round draws from its own generator `rng_for(seed, [ROUND, r])`, so the
//! draft block of round `r` is identical across modes and thresholds.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelTrace, CsiFeatures, CsiState, NormalizationBounds};
use crate::compute::{round_latency, ComputeModel, ComputeTimes};
use crate::error::{Error, Result};
use crate::head::{assemble_into, decide_prob, Decision, HeadParams};
use crate::oracle::{sample_categorical, DraftBlock, Oracle, TargetView};
use crate::rng::{self, SimRng};
use crate::wire::{self, LatencyBreakdown, WireConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SdGreedy,
    SdReject,
    WisvFh,
    WisvSh,
    WisvAdaptive,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::SdGreedy,
        Mode::SdReject,
        Mode::WisvFh,
        Mode::WisvSh,
        Mode::WisvAdaptive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::SdGreedy => "sd_greedy",
            Mode::SdReject => "sd_reject",
            Mode::WisvFh => "wisv_fh",
            Mode::WisvSh => "wisv_sh",
            Mode::WisvAdaptive => "wisv_adaptive",
        }
    }

    pub fn uses_head(self) -> bool {
        matches!(self, Mode::WisvFh | Mode::WisvSh | Mode::WisvAdaptive)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

/// Uplink protocol used in a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Token IDs and all drafter hiddens in one message.
    Fh,
    /// Token IDs, then requested hiddens after localization.
    Sh,
    /// Token IDs only.
    Tokens,
    /// Token IDs and full-vocabulary drafter probabilities.
    Probabilities,
}

/// FH iff the measured RTT strictly exceeds the cutoff.
pub fn select_protocol(rtt_s: f64, cutoff_s: f64) -> Protocol {
    if rtt_s > cutoff_s {
        Protocol::Fh
    } else {
        Protocol::Sh
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub mode: Mode,
    /// Speculation window `K`.
    pub k: usize,
    pub tau: f64,
    /// Generation stops once this many tokens are committed.
    pub max_tokens: usize,
    pub prompt_len: u64,
    /// RTT above which the adaptive mode uses FH.
    pub adaptive_cutoff_s: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::WisvFh,
            k: 10,
            tau: 0.5,
            max_tokens: 256,
            prompt_len: 128,
            adaptive_cutoff_s: 0.01,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.max_tokens == 0 {
            return Err(Error::Config("k and max_tokens must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau={} outside (0,1)", self.tau)));
        }
        if !(self.adaptive_cutoff_s > 0.0) {
            return Err(Error::Config("adaptive_cutoff_s must be positive".into()));
        }
        Ok(())
    }
}

/// Trained head plus whether it sees CSI features (the ablation head sees zeros).
#[derive(Debug, Clone, Copy)]
pub struct Verifier<'a> {
    pub params: &'a HeadParams,
    pub use_csi: bool,
}

/// Immutable inputs shared by every episode of a run.
#[derive(Debug, Clone, Copy)]
pub struct EngineContext<'a> {
    pub oracle: &'a Oracle,
    pub wire: &'a WireConfig,
    pub compute: &'a ComputeModel,
    pub bounds: NormalizationBounds,
    pub head: Option<Verifier<'a>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round: usize,
    pub k: usize,
    /// Committed prefix length `L_r` before the round.
    pub start: u64,
    /// Window-relative mismatch indices `S_r`, ascending.
    pub mismatches: Vec<usize>,
    pub m: usize,
    /// Window-relative rejection index, if any.
    pub rejected_at: Option<usize>,
    /// `A_r`.
    pub accepted: usize,
    pub committed: Vec<u32>,
    pub accepted_critical: usize,
    pub head_evals: usize,
    pub protocol: Protocol,
    pub rtt_s: f64,
    pub comm: LatencyBreakdown,
    pub compute: ComputeTimes,
    pub latency_s: f64,
    /// Speculative sampling only: the residual was all zero and `p_T` was used.
    pub residual_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: usize,
    pub seed: u64,
    pub rounds: Vec<RoundOutcome>,
    pub tokens: Vec<u32>,
    pub accepted_tokens: usize,
    pub accepted_critical: usize,
    pub correct: bool,
    pub latency_s: f64,
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    pub draft_s: f64,
    pub comm_s: f64,
    pub verify_s: f64,
    pub head_s: f64,
}

impl EpisodeResult {
    pub fn n_rounds(&self) -> usize {
        self.rounds.len()
    }

    /// Per-episode mean accepted length.
    pub fn aal(&self) -> f64 {
        self.accepted_tokens as f64 / self.rounds.len().max(1) as f64
    }

    fn from_rounds(episode: usize, seed: u64, rounds: Vec<RoundOutcome>) -> Self {
        let mut r = EpisodeResult {
            episode,
            seed,
            tokens: Vec::new(),
            accepted_tokens: 0,
            accepted_critical: 0,
            correct: true,
            latency_s: 0.0,
            uplink_bits: 0,
            downlink_bits: 0,
            draft_s: 0.0,
            comm_s: 0.0,
            verify_s: 0.0,
            head_s: 0.0,
            rounds: Vec::new(),
        };
        for o in &rounds {
            r.tokens.extend_from_slice(&o.committed);
            r.accepted_tokens += o.accepted;
            r.accepted_critical += o.accepted_critical;
            r.latency_s += o.latency_s;
            r.uplink_bits += o.comm.uplink_bits;
            r.downlink_bits += o.comm.downlink_bits;
            r.draft_s += o.compute.draft_s;
            r.comm_s += o.comm.total_s;
            r.verify_s += o.compute.verify_s;
            r.head_s += o.compute.head_s;
        }
        r.correct = r.accepted_critical == 0;
        r.rounds = rounds;
        r
    }
}

/// Ascending indices where the draft differs from the target argmax.
pub fn localize(draft: &[u32], target: &[u32]) -> Vec<usize> {
    draft
        .iter()
        .zip(target)
        .enumerate()
        .filter(|(_, (d, t))| d != t)
        .map(|(i, _)| i)
        .collect()
}

fn check_view(block: &DraftBlock, view: &TargetView) -> Result<()> {
    let k = block.len();
    if k == 0 {
        return Err(Error::InvalidArgument("empty draft block".into()));
    }
    for (what, expected, got) in [
        ("draft hiddens", k, block.hiddens.len()),
        ("target argmax", k + 1, view.argmax.len()),
        ("target hiddens", k, view.hiddens.len()),
        ("criticality flags", k, view.critical.len()),
    ] {
        if expected != got {
            return Err(Error::DimensionMismatch { what, expected, got });
        }
    }
    Ok(())
}

/// Commits drafts before `rejected_at` plus the corrected token, or all drafts
/// plus the bonus argmax. Returns `(A_r, committed, accepted critical count)`.
fn commit(block: &DraftBlock, view: &TargetView, mismatches: &[usize], rejected_at: Option<usize>) -> (usize, Vec<u32>, usize) {
    let k = block.len();
    let accepted = rejected_at.unwrap_or(k);
    let mut committed = block.tokens[..accepted].to_vec();
    committed.push(view.argmax[accepted]);
    let critical = mismatches
        .iter()
        .take_while(|&&i| i < accepted)
        .filter(|&&i| view.critical[i] == Some(true))
        .count();
    (accepted, committed, critical)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    ctx: &EngineContext<'_>,
    round: usize,
    start: u64,
    k: usize,
    mismatches: Vec<usize>,
    rejected_at: Option<usize>,
    accepted: usize,
    committed: Vec<u32>,
    accepted_critical: usize,
    head_evals: usize,
    protocol: Protocol,
    comm: LatencyBreakdown,
    csi: &CsiState,
) -> Result<RoundOutcome> {
    let compute = ctx.compute.round_times(start, k as u64, head_evals as u64)?;
    Ok(RoundOutcome {
        round,
        k,
        start,
        m: mismatches.len(),
        mismatches,
        rejected_at,
        accepted,
        committed,
        accepted_critical,
        head_evals,
        protocol,
        rtt_s: csi.rtt,
        latency_s: round_latency(&compute, &comm),
        comm,
        compute,
        residual_fallback: false,
    })
}

/// Greedy verification: reject at the first mismatch, token IDs on the uplink.
pub fn sd_greedy_round(
    ctx: &EngineContext<'_>,
    round: usize,
    start: u64,
    block: &DraftBlock,
    view: &TargetView,
    csi: &CsiState,
) -> Result<RoundOutcome> {
    check_view(block, view)?;
    let k = block.len();
    let mismatches = localize(&block.tokens, &view.argmax);
    let rejected_at = mismatches.first().copied();
    let (accepted, committed, critical) = commit(block, view, &mismatches, rejected_at);
    let comm = wire::comm_latency_tokens(ctx.wire, k as u64, csi)?;
    finish(ctx, round, start, k, mismatches, rejected_at, accepted, committed, critical, 0, Protocol::Tokens, comm, csi)
}

/// Learned verification: the head scores every mismatch and the earliest one
/// with `p >= tau` is rejected.
#[allow(clippy::too_many_arguments)]
pub fn wisv_round(
    ctx: &EngineContext<'_>,
    round: usize,
    start: u64,
    block: &DraftBlock,
    view: &TargetView,
    verifier: &Verifier<'_>,
    tau: f64,
    csi: &CsiState,
    protocol: Protocol,
) -> Result<RoundOutcome> {
    check_view(block, view)?;
    let k = block.len();
    let mismatches = localize(&block.tokens, &view.argmax);
    let dims = (ctx.oracle.config().d_h_draft, ctx.oracle.config().d_h_target);
    let csi_features = if verifier.use_csi {
        csi.features(&ctx.bounds)
    } else {
        CsiFeatures::ZERO
    };
    let mut z = Vec::with_capacity(verifier.params.d_in);
    let mut rejected_at = None;
    for &i in &mismatches {
        assemble_into(&mut z, &block.hiddens[i], &view.hiddens[i], &csi_features, dims)?;
        let p = verifier.params.forward(&z)?.prob;
        if rejected_at.is_none() && decide_prob(p, tau) == Decision::Reject {
            rejected_at = Some(i);
        }
    }
    let (accepted, committed, critical) = commit(block, view, &mismatches, rejected_at);
    let m = mismatches.len() as u64;
    let (protocol, comm) = match protocol {
        Protocol::Fh => (Protocol::Fh, wire::comm_latency_fh(ctx.wire, k as u64, csi)?),
        Protocol::Sh if m == 0 => (Protocol::Tokens, wire::comm_latency_tokens(ctx.wire, k as u64, csi)?),
        Protocol::Sh => (Protocol::Sh, wire::comm_latency_sh(ctx.wire, k as u64, m, csi)?),
        other => {
            return Err(Error::InvalidArgument(format!(
                "learned verification runs over FH or SH, not {other:?}"
            )))
        }
    };
    let evals = mismatches.len();
    finish(ctx, round, start, k, mismatches, rejected_at, accepted, committed, critical, evals, protocol, comm, csi)
}

/// Result of verifying one drafted token by speculative sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleOutcome {
    /// Token emitted at this position: the draft if accepted, else a residual draw.
    pub token: usize,
    pub accepted: bool,
    pub fallback: bool,
}

/// Draws a draft token from `p_draft` and verifies it against `p_target`.
pub fn speculative_sample(p_draft: &[f64], p_target: &[f64], rng: &mut SimRng) -> SampleOutcome {
    let y = sample_categorical(p_draft, rng);
    let ratio = if p_draft[y] > 0.0 { p_target[y] / p_draft[y] } else { 0.0 };
    if rng.random::<f64>() < ratio.min(1.0) {
        return SampleOutcome {
            token: y,
            accepted: true,
            fallback: false,
        };
    }
    let residual: Vec<f64> = p_target
        .iter()
        .zip(p_draft)
        .map(|(t, d)| (t - d).max(0.0))
        .collect();
    if residual.iter().sum::<f64>() > 0.0 {
        SampleOutcome {
            token: sample_categorical(&residual, rng),
            accepted: false,
            fallback: false,
        }
    } else {
        SampleOutcome {
            token: sample_categorical(p_target, rng),
            accepted: false,
            fallback: true,
        }
    }
}

/// Speculative sampling over the synthetic vocabulary, billed for the full
/// vocabulary on the uplink.
pub fn sd_reject_round(
    ctx: &EngineContext<'_>,
    round: usize,
    start: u64,
    k: usize,
    csi: &CsiState,
    rng: &mut SimRng,
) -> Result<RoundOutcome> {
    let mut committed = Vec::with_capacity(k + 1);
    let mut rejected_at = None;
    let mut fallback = false;
    for i in 0..k {
        let (p_draft, p_target) = ctx.oracle.distributions(rng);
        let s = speculative_sample(&p_draft, &p_target, rng);
        committed.push(s.token as u32);
        if !s.accepted {
            rejected_at = Some(i);
            fallback = s.fallback;
            break;
        }
    }
    if rejected_at.is_none() {
        let (_, p_target) = ctx.oracle.distributions(rng);
        committed.push(sample_categorical(&p_target, rng) as u32);
    }
    let accepted = rejected_at.unwrap_or(k);
    let comm = wire::comm_latency_reject(ctx.wire, k as u64, csi)?;
    let mismatches = rejected_at.into_iter().collect();
    let mut out = finish(ctx, round, start, k, mismatches, rejected_at, accepted, committed, 0, 0, Protocol::Probabilities, comm, csi)?;
    out.residual_fallback = fallback;
    Ok(out)
}

/// Runs one episode until at least `max_tokens` tokens are committed.
pub fn run_episode(
    cfg: &EngineConfig,
    ctx: &EngineContext<'_>,
    trace: &ChannelTrace,
    episode: usize,
    seed: u64,
) -> Result<EpisodeResult> {
    cfg.validate()?;
    if trace.is_empty() {
        return Err(Error::InvalidArgument("empty channel trace".into()));
    }
    let verifier = match (cfg.mode.uses_head(), ctx.head) {
        (true, None) => {
            return Err(Error::Config(format!("mode {} needs a trained head", cfg.mode)));
        }
        (_, v) => v,
    };
    if let Some(v) = verifier.filter(|_| cfg.mode.uses_head()) {
        let expected = crate::head::input_dim(ctx.oracle.config().d_h_draft, ctx.oracle.config().d_h_target);
        if v.params.d_in != expected {
            return Err(Error::DimensionMismatch {
                what: "head input width",
                expected,
                got: v.params.d_in,
            });
        }
    }
    let mut rounds = Vec::new();
    let mut produced = 0usize;
    while produced < cfg.max_tokens {
        let r = rounds.len();
        let mut rng = rng::rng_for(seed, &[rng::stream::ROUND, r as u64]);
        let csi = trace.at(r);
        let start = cfg.prompt_len + produced as u64;
        let outcome = match cfg.mode {
            Mode::SdReject => sd_reject_round(ctx, r, start, cfg.k, csi, &mut rng)?,
            mode => {
                let block = ctx.oracle.draft(start, cfg.k, &mut rng);
                let view = ctx.oracle.verify_view(&block, &mut rng);
                let v = verifier.as_ref();
                match mode {
                    Mode::SdGreedy => sd_greedy_round(ctx, r, start, &block, &view, csi)?,
                    Mode::WisvFh => wisv_round(ctx, r, start, &block, &view, v.unwrap(), cfg.tau, csi, Protocol::Fh)?,
                    Mode::WisvSh => wisv_round(ctx, r, start, &block, &view, v.unwrap(), cfg.tau, csi, Protocol::Sh)?,
                    _ => {
                        let proto = select_protocol(csi.rtt, cfg.adaptive_cutoff_s);
                        wisv_round(ctx, r, start, &block, &view, v.unwrap(), cfg.tau, csi, proto)?
                    }
                }
            }
        };
        produced += outcome.committed.len();
        rounds.push(outcome);
    }
    Ok(EpisodeResult::from_rounds(episode, seed, rounds))
}
