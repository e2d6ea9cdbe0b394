//! Synthetic drafter/target pair.
//!
//! Each draft position independently matches the target argmax with
//! probability `p_match`. A mismatch is critical with probability `p_crit`.
//! Hidden vectors follow a linear-Gaussian model `h = sep * u * v + noise`,
//! with `v` a fixed unit direction per side (derived from the oracle seed)
//! and `u` the criticality latent, so critical mismatches are linearly
//! separable from benign ones at a margin set by `sep / noise`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Per-position probability the draft token equals the target argmax.
    pub p_match: f64,
    /// When set, `p_match` is replaced by the value whose greedy AAL at window
    /// `calibration_k` equals this target.
    pub target_aal: Option<f64>,
    pub calibration_k: u64,
    /// Probability that a mismatch is critical.
    pub p_crit: f64,
    /// Feature separation between critical and benign mismatches.
    pub sep: f64,
    /// Per-element Gaussian noise standard deviation.
    pub noise: f64,
    pub d_h_draft: usize,
    pub d_h_target: usize,
    /// Token-id space for greedy modes.
    pub vocab_size: u32,
    /// Small vocabulary for distribution-level (rejection sampling) statistics.
    pub vocab_syn: usize,
    /// Weight of the independent component in the drafter distribution.
    pub mixing: f64,
    /// Dirichlet concentration of the synthetic distributions.
    pub concentration: f64,
    /// Seeds the fixed hidden-state directions.
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            p_match: 0.9,
            target_aal: None,
            calibration_k: 10,
            p_crit: 0.3,
            sep: 4.0,
            noise: 1.0,
            d_h_draft: 16,
            d_h_target: 16,
            vocab_size: 128_256,
            vocab_syn: 64,
            mixing: 0.15,
            concentration: 0.5,
            seed: 0x5eed,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::Config(msg)) };
        check(
            self.p_match > 0.0 && self.p_match <= 1.0,
            format!("p_match={} outside (0,1]", self.p_match),
        )?;
        check((0.0..=1.0).contains(&self.p_crit), format!("p_crit={} outside [0,1]", self.p_crit))?;
        check(self.sep >= 0.0, format!("sep={} is negative", self.sep))?;
        check(self.noise > 0.0, format!("noise={} must be positive", self.noise))?;
        check(
            self.d_h_draft > 0 && self.d_h_target > 0,
            "hidden dims must be positive".into(),
        )?;
        check(self.vocab_size >= 2, "vocab_size must be at least 2".into())?;
        check(self.vocab_syn >= 2, "vocab_syn must be at least 2".into())?;
        check((0.0..=1.0).contains(&self.mixing), format!("mixing={} outside [0,1]", self.mixing))?;
        check(self.concentration > 0.0, "concentration must be positive".into())
    }

    /// Applies `target_aal` calibration, if requested, and validates.
    pub fn resolved(&self) -> Result<OracleConfig> {
        let mut cfg = self.clone();
        if let Some(aal) = self.target_aal {
            cfg.p_match = calibrate_p_match(aal, self.calibration_k)?;
            cfg.target_aal = None;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Ground truth for one draft position. Never read by verification policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Latent {
    pub matches: bool,
    pub critical: bool,
}

/// Drafter output for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftBlock {
    /// Absolute position of the first drafted token.
    pub start: u64,
    pub tokens: Vec<u32>,
    pub hiddens: Vec<Vec<f64>>,
    pub(crate) latent: Vec<Latent>,
}

impl DraftBlock {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Target forward-pass result for a draft block.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetView {
    /// Argmax tokens for the `k` drafted positions plus the next one.
    pub argmax: Vec<u32>,
    pub hiddens: Vec<Vec<f64>>,
    /// Criticality at mismatch positions, `None` where the draft matched.
    pub critical: Vec<Option<bool>>,
}

/// Oracle with its fixed hidden-state directions.
#[derive(Debug, Clone)]
pub struct Oracle {
    config: OracleConfig,
    dir_draft: Vec<f64>,
    dir_target: Vec<f64>,
}

fn unit_direction(rng: &mut SimRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

impl Oracle {
    pub fn new(config: &OracleConfig) -> Result<Self> {
        let config = config.resolved()?;
        let mut dir_rng = rng::rng_for(config.seed, &[rng::stream::ORACLE_DIRECTIONS]);
        let dir_draft = unit_direction(&mut dir_rng, config.d_h_draft);
        let dir_target = unit_direction(&mut dir_rng, config.d_h_target);
        Ok(Self {
            config,
            dir_draft,
            dir_target,
        })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn directions(&self) -> (&[f64], &[f64]) {
        (&self.dir_draft, &self.dir_target)
    }

    fn hidden(&self, direction: &[f64], critical: bool, rng: &mut SimRng) -> Vec<f64> {
        let shift = if critical { self.config.sep } else { 0.0 };
        direction
            .iter()
            .map(|v| shift * v + self.config.noise * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn token(&self, rng: &mut SimRng) -> u32 {
        rng.random_range(0..self.config.vocab_size)
    }

    pub fn draft(&self, start: u64, k: usize, rng: &mut SimRng) -> DraftBlock {
        let mut tokens = Vec::with_capacity(k);
        let mut hiddens = Vec::with_capacity(k);
        let mut latent = Vec::with_capacity(k);
        for _ in 0..k {
            let matches = rng.random::<f64>() < self.config.p_match;
            let critical = !matches && rng.random::<f64>() < self.config.p_crit;
            tokens.push(self.token(rng));
            hiddens.push(self.hidden(&self.dir_draft, critical, rng));
            latent.push(Latent { matches, critical });
        }
        DraftBlock {
            start,
            tokens,
            hiddens,
            latent,
        }
    }

    pub fn verify_view(&self, block: &DraftBlock, rng: &mut SimRng) -> TargetView {
        let k = block.len();
        let mut argmax = Vec::with_capacity(k + 1);
        let mut hiddens = Vec::with_capacity(k);
        let mut critical = Vec::with_capacity(k);
        let vocab = self.config.vocab_size;
        for (tok, lat) in block.tokens.iter().zip(&block.latent) {
            if lat.matches {
                argmax.push(*tok);
                critical.push(None);
            } else {
                let offset = rng.random_range(1..vocab);
                argmax.push(((u64::from(*tok) + u64::from(offset)) % u64::from(vocab)) as u32);
                critical.push(Some(lat.critical));
            }
            hiddens.push(self.hidden(&self.dir_target, lat.critical, rng));
        }
        argmax.push(self.token(rng));
        TargetView {
            argmax,
            hiddens,
            critical,
        }
    }

    /// Draft and target next-token distributions over the synthetic vocabulary.
    /// The drafter mixes the target with an independent draw, so the expected
    /// per-token acceptance probability falls as `mixing` grows.
    pub fn distributions(&self, rng: &mut SimRng) -> (Vec<f64>, Vec<f64>) {
        let p_target = self.dirichlet(rng);
        let other = self.dirichlet(rng);
        let w = self.config.mixing;
        let p_draft: Vec<f64> = p_target
            .iter()
            .zip(&other)
            .map(|(t, o)| (1.0 - w) * t + w * o)
            .collect();
        (p_draft, p_target)
    }

    fn dirichlet(&self, rng: &mut SimRng) -> Vec<f64> {
        let gamma = Gamma::new(self.config.concentration, 1.0).expect("validated concentration");
        loop {
            let draws: Vec<f64> = (0..self.config.vocab_syn).map(|_| gamma.sample(rng)).collect();
            let total: f64 = draws.iter().sum();
            if total > 0.0 && total.is_finite() {
                return draws.into_iter().map(|g| g / total).collect();
            }
        }
    }
}

/// Expected greedy accepted length `sum_{i=1..k} a^i` for i.i.d. matches.
pub fn expected_greedy_aal(p_match: f64, k: u64) -> f64 {
    (1..=k).map(|i| p_match.powi(i as i32)).sum()
}

/// Per-position match probability whose expected greedy AAL at window `k`
/// equals `target_aal`, found by bisection.
pub fn calibrate_p_match(target_aal: f64, k: u64) -> Result<f64> {
    if !(target_aal > 0.0) || !target_aal.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "target AAL must be positive, got {target_aal}"
        )));
    }
    if target_aal >= k as f64 {
        return Err(Error::Infeasible(format!(
            "AAL {target_aal} is unreachable with a window of {k}"
        )));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_greedy_aal(mid, k) < target_aal {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Draws an index from a categorical distribution by inverse CDF.
pub fn sample_categorical(probs: &[f64], rng: &mut SimRng) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}
