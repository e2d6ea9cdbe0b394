//! FLOPs-based execution-time model for drafting, target verification and the
//! decision head.

use serde::{Deserialize, Serialize};

use crate::channel::CSI_FEATURE_DIM;
use crate::error::{Error, Result};
use crate::wire::LatencyBreakdown;

/// Decoder-only transformer shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub layers: u64,
    pub hidden: u64,
    pub ffn: u64,
    pub vocab: u64,
}

impl ModelDims {
    pub const LLAMA_3_2_1B: ModelDims = ModelDims {
        layers: 16,
        hidden: 2048,
        ffn: 8192,
        vocab: 128_256,
    };
    pub const LLAMA_3_1_8B: ModelDims = ModelDims {
        layers: 32,
        hidden: 4096,
        ffn: 14_336,
        vocab: 128_256,
    };
    pub const QWEN_2_5_0_5B: ModelDims = ModelDims {
        layers: 24,
        hidden: 896,
        ffn: 4864,
        vocab: 151_936,
    };
    pub const QWEN_2_5_7B: ModelDims = ModelDims {
        layers: 28,
        hidden: 3584,
        ffn: 18_944,
        vocab: 152_064,
    };

    fn validate(&self, which: &str) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.ffn == 0 || self.vocab == 0 {
            return Err(Error::Config(format!("{which} model dims must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareProfile {
    /// Peak throughput in FLOPs/second.
    pub peak_flops: f64,
    /// Effective utilization in (0, 1].
    pub utilization: f64,
}

impl HardwareProfile {
    pub const EMBEDDED: HardwareProfile = HardwareProfile {
        peak_flops: 10e12,
        utilization: 0.30,
    };
    pub const DATACENTER: HardwareProfile = HardwareProfile {
        peak_flops: 150e12,
        utilization: 0.40,
    };

    pub fn effective_flops(&self) -> f64 {
        self.utilization * self.peak_flops
    }

    fn validate(&self, which: &str) -> Result<()> {
        if !(self.peak_flops > 0.0 && self.utilization > 0.0 && self.utilization <= 1.0) {
            return Err(Error::Config(format!(
                "{which} hardware needs peak_flops > 0 and utilization in (0,1]: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-token cost constants: projections, MLP, attention over the cache, LM head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlopsConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl Default for FlopsConstants {
    fn default() -> Self {
        Self {
            c1: 8.0,
            c2: 6.0,
            c3: 4.0,
            c4: 2.0,
        }
    }
}

impl FlopsConstants {
    fn validate(&self) -> Result<()> {
        if [self.c1, self.c2, self.c3, self.c4].iter().any(|c| !(*c > 0.0)) {
            return Err(Error::Config(format!("flops constants must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// FLOPs to generate one token at context length `ctx_len`.
pub fn per_token_flops(dims: &ModelDims, consts: &FlopsConstants, ctx_len: u64) -> f64 {
    let n = dims.layers as f64;
    let d = dims.hidden as f64;
    let ff = dims.ffn as f64;
    let v = dims.vocab as f64;
    n * (consts.c1 * d * d + consts.c2 * d * ff + consts.c3 * ctx_len as f64 * d) + consts.c4 * d * v
}

/// `sum_{i<k} per_token_flops(prefix + i)`, evaluated in closed form.
fn block_flops(dims: &ModelDims, consts: &FlopsConstants, prefix: u64, k: u64) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("block length must be at least 1".into()));
    }
    let kf = k as f64;
    let ctx_sum = kf * prefix as f64 + kf * (kf - 1.0) / 2.0;
    let fixed = per_token_flops(dims, consts, 0);
    Ok(kf * fixed + dims.layers as f64 * consts.c3 * dims.hidden as f64 * ctx_sum)
}

pub fn draft_round_flops(dims: &ModelDims, consts: &FlopsConstants, prefix: u64, k: u64) -> Result<f64> {
    block_flops(dims, consts, prefix, k)
}

/// Target verification of a `k`-token block; the logits head is part of the per-token cost.
pub fn verify_round_flops(dims: &ModelDims, consts: &FlopsConstants, prefix: u64, k: u64) -> Result<f64> {
    block_flops(dims, consts, prefix, k)
}

/// Two-layer MLP head over `m` positions.
pub fn head_flops(d_in: u64, d_j: u64, m: u64) -> f64 {
    let d_in = d_in as f64;
    let d_j = d_j as f64;
    m as f64 * (2.0 * d_in * d_j + d_j + 2.0 * d_j + 1.0)
}

pub fn exec_time(flops: f64, hw: &HardwareProfile) -> f64 {
    flops / hw.effective_flops()
}

/// Compute-side times of one round.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ComputeTimes {
    pub draft_s: f64,
    pub verify_s: f64,
    pub head_s: f64,
}

/// `T_D + T_comm + T_T + T_J`.
pub fn round_latency(times: &ComputeTimes, comm: &LatencyBreakdown) -> f64 {
    times.draft_s + comm.total_s + times.verify_s + times.head_s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComputeConfig {
    /// `llama-1b-8b` or `qwen-0.5b-7b`.
    pub preset: String,
    pub drafter: Option<ModelDims>,
    pub target: Option<ModelDims>,
    pub drafter_hw: HardwareProfile,
    pub target_hw: HardwareProfile,
    pub constants: FlopsConstants,
    /// Decision-head hidden width as billed in `T_J`.
    pub head_hidden: u64,
}

impl Default for ComputeConfig {
    fn default() -> Self {
        Self {
            preset: "llama-1b-8b".into(),
            drafter: None,
            target: None,
            drafter_hw: HardwareProfile::EMBEDDED,
            target_hw: HardwareProfile::DATACENTER,
            constants: FlopsConstants::default(),
            head_hidden: 256,
        }
    }
}

pub fn preset(name: &str) -> Result<(ModelDims, ModelDims)> {
    match name {
        "llama-1b-8b" => Ok((ModelDims::LLAMA_3_2_1B, ModelDims::LLAMA_3_1_8B)),
        "qwen-0.5b-7b" => Ok((ModelDims::QWEN_2_5_0_5B, ModelDims::QWEN_2_5_7B)),
        other => Err(Error::Config(format!(
            "unknown model preset {other:?} (expected llama-1b-8b or qwen-0.5b-7b)"
        ))),
    }
}

/// Resolved, validated compute model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComputeModel {
    pub drafter: ModelDims,
    pub target: ModelDims,
    pub drafter_hw: HardwareProfile,
    pub target_hw: HardwareProfile,
    pub constants: FlopsConstants,
    pub head_in: u64,
    pub head_hidden: u64,
}

impl ComputeConfig {
    pub fn resolve(&self) -> Result<ComputeModel> {
        let (d, t) = preset(&self.preset)?;
        let drafter = self.drafter.unwrap_or(d);
        let target = self.target.unwrap_or(t);
        drafter.validate("drafter")?;
        target.validate("target")?;
        self.drafter_hw.validate("drafter")?;
        self.target_hw.validate("target")?;
        self.constants.validate()?;
        if self.head_hidden == 0 {
            return Err(Error::Config("head_hidden must be positive".into()));
        }
        Ok(ComputeModel {
            drafter,
            target,
            drafter_hw: self.drafter_hw,
            target_hw: self.target_hw,
            constants: self.constants,
            head_in: drafter.hidden + target.hidden + CSI_FEATURE_DIM as u64,
            head_hidden: self.head_hidden,
        })
    }
}

impl ComputeModel {
    /// Compute times for a round drafting `k` tokens after `prefix` committed
    /// tokens and running the head on `m` positions.
    pub fn round_times(&self, prefix: u64, k: u64, m: u64) -> Result<ComputeTimes> {
        let draft = draft_round_flops(&self.drafter, &self.constants, prefix, k)?;
        let verify = verify_round_flops(&self.target, &self.constants, prefix, k)?;
        let head = head_flops(self.head_in, self.head_hidden, m);
        Ok(ComputeTimes {
            draft_s: exec_time(draft, &self.drafter_hw),
            verify_s: exec_time(verify, &self.target_hw),
            head_s: exec_time(head, &self.target_hw),
        })
    }
}
