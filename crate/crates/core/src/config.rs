//! Experiment configuration: one TOML document with named sections.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{ChannelConfig, NormalizationBounds};
use crate::compute::ComputeConfig;
use crate::engine::{EngineConfig, Mode};
use crate::error::{Error, Result};
use crate::head::TrainConfig;
use crate::labeler::LabelerConfig;
use crate::oracle::OracleConfig;
use crate::wire::WireConfig;

/// A fixed symmetric link used as an evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub rate_bps: f64,
    pub rtt_s: f64,
    #[serde(default)]
    pub per: f64,
}

impl Scenario {
    pub fn new(name: &str, rate_bps: f64, rtt_s: f64) -> Self {
        Self {
            name: name.into(),
            rate_bps,
            rtt_s,
            per: 0.0,
        }
    }

    pub fn channel(&self) -> ChannelConfig {
        let mut c = ChannelConfig::fixed(self.rate_bps, self.rtt_s);
        c.per_up = self.per.into();
        c.per_down = self.per.into();
        c
    }
}

fn default_scenarios() -> Vec<Scenario> {
    vec![
        Scenario::new("500M-50ms", 500e6, 0.05),
        Scenario::new("20M-50ms", 20e6, 0.05),
        Scenario::new("500M-5ms", 500e6, 0.005),
        Scenario::new("20M-5ms", 20e6, 0.005),
    ]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub bounds: NormalizationBounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceSection {
    pub n_episodes: usize,
}

impl Default for TraceSection {
    fn default() -> Self {
        Self { n_episodes: 400 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub ks: Vec<usize>,
    pub modes: Vec<Mode>,
    pub scenarios: Vec<Scenario>,
    pub episodes: usize,
    /// Threshold for the learned modes in the main grid.
    pub tau: f64,
    /// Threshold grid of the tau sweep, ascending.
    pub taus: Vec<f64>,
    pub tau_sweep_k: usize,
    /// Index into `scenarios` for the tau sweep.
    pub tau_sweep_scenario: usize,
    /// Episodes per grid point whose rounds go to `rounds.jsonl`.
    pub round_log_episodes: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            ks: vec![10, 16, 24, 32, 64],
            modes: vec![Mode::SdGreedy, Mode::SdReject, Mode::WisvFh, Mode::WisvSh],
            scenarios: default_scenarios(),
            episodes: 200,
            tau: 0.5,
            taus: vec![1e-300, 0.1, 0.3, 0.5, 0.7, 0.9],
            tau_sweep_k: 10,
            tau_sweep_scenario: 0,
            round_log_episodes: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub episodes: usize,
    pub tau: f64,
    pub k: usize,
    pub scenarios: Vec<Scenario>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            episodes: 500,
            tau: 0.5,
            k: 10,
            scenarios: vec![
                Scenario::new("poor-20M-50ms", 20e6, 0.05),
                Scenario::new("mid-100M-20ms", 100e6, 0.02),
                Scenario::new("best-900M-5ms", 900e6, 0.005),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub channel: ChannelSection,
    pub wire: WireConfig,
    pub compute: ComputeConfig,
    pub oracle: OracleConfig,
    pub train: TrainConfig,
    pub labeler: LabelerConfig,
    pub engine: EngineConfig,
    pub trace: TraceSection,
    pub sweep: SweepSection,
    pub ablation: AblationSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            channel: ChannelSection::default(),
            wire: WireConfig::default(),
            compute: ComputeConfig::default(),
            oracle: OracleConfig::default(),
            train: TrainConfig::default(),
            labeler: LabelerConfig::default(),
            engine: EngineConfig::default(),
            trace: TraceSection::default(),
            sweep: SweepSection::default(),
            ablation: AblationSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.bounds.validate()?;
        self.wire.validate()?;
        self.compute.resolve()?;
        self.oracle.resolved()?;
        self.train.validate()?;
        self.labeler.validate()?;
        self.engine.validate()?;
        let s = &self.sweep;
        if s.ks.is_empty() || s.modes.is_empty() || s.scenarios.is_empty() || s.taus.is_empty() {
            return Err(Error::Config("sweep grids must be nonempty".into()));
        }
        if s.ks.contains(&0) || s.tau_sweep_k == 0 || self.ablation.k == 0 {
            return Err(Error::Config("window sizes must be at least 1".into()));
        }
        if s.episodes == 0 || self.trace.n_episodes == 0 || self.ablation.episodes == 0 {
            return Err(Error::Config("episode counts must be at least 1".into()));
        }
        if s.tau_sweep_scenario >= s.scenarios.len() {
            return Err(Error::Config("tau_sweep_scenario out of range".into()));
        }
        let in_unit = |t: f64| t > 0.0 && t < 1.0;
        if !s.taus.iter().all(|&t| in_unit(t)) || !in_unit(s.tau) || !in_unit(self.ablation.tau) {
            return Err(Error::Config("thresholds must lie in (0,1)".into()));
        }
        if s.taus.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("taus must be strictly ascending".into()));
        }
        for sc in s.scenarios.iter().chain(&self.ablation.scenarios) {
            sc.channel().validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, with the output directory blanked
    /// so relocating outputs does not change provenance.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output.dir = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
