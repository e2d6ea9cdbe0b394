//! Per-round link state (CSI), its scalar quality summary, the head's CSI
//! feature vector, and seeded channel-trace generation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Number of CSI features fed to the decision head.
pub const CSI_FEATURE_DIM: usize = 5;

/// Link condition for one interaction round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsiState {
    /// Uplink rate in bits/second.
    pub r_up: f64,
    /// Downlink rate in bits/second.
    pub r_down: f64,
    pub per_up: f64,
    pub per_down: f64,
    /// Round-trip time in seconds.
    pub rtt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

impl CsiState {
    pub fn new(r_up: f64, r_down: f64, per_up: f64, per_down: f64, rtt: f64) -> Result<Self> {
        let state = Self {
            r_up,
            r_down,
            per_up,
            per_down,
            rtt,
        };
        state.validate()?;
        Ok(state)
    }

    /// Symmetric link with equal rates and no packet loss.
    pub fn symmetric(rate_bps: f64, rtt: f64) -> Result<Self> {
        Self::new(rate_bps, rate_bps, 0.0, 0.0, rtt)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.r_up, self.r_down, self.per_up, self.per_down, self.rtt]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("csi state"));
        }
        if self.r_up <= 0.0 || self.r_down <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "link rates must be positive (up={}, down={})",
                self.r_up, self.r_down
            )));
        }
        for (name, per) in [("per_up", self.per_up), ("per_down", self.per_down)] {
            if !(0.0..1.0).contains(&per) {
                return Err(Error::InvalidArgument(format!("{name}={per} outside [0,1)")));
            }
        }
        if self.rtt < 0.0 {
            return Err(Error::InvalidArgument(format!("rtt={} is negative", self.rtt)));
        }
        Ok(())
    }

    /// Expected goodput `R * (1 - PER)` in the given direction.
    pub fn effective_rate(&self, direction: Direction) -> f64 {
        match direction {
            Direction::Up => self.r_up * (1.0 - self.per_up),
            Direction::Down => self.r_down * (1.0 - self.per_down),
        }
    }

    /// Channel quality in [0,1]: log-interpolated effective uplink rate.
    pub fn quality(&self, bounds: &NormalizationBounds) -> f64 {
        log_normalize(self.effective_rate(Direction::Up), bounds)
    }

    pub fn features(&self, bounds: &NormalizationBounds) -> CsiFeatures {
        CsiFeatures([
            log_normalize(self.r_up, bounds),
            log_normalize(self.r_down, bounds),
            self.per_up.clamp(0.0, 1.0),
            self.per_down.clamp(0.0, 1.0),
            (self.rtt / bounds.rtt_max).clamp(0.0, 1.0),
        ])
    }
}

pub fn effective_rate(state: &CsiState, direction: Direction) -> f64 {
    state.effective_rate(direction)
}

pub fn quality(state: &CsiState, bounds: &NormalizationBounds) -> f64 {
    state.quality(bounds)
}

pub fn features(state: &CsiState, bounds: &NormalizationBounds) -> CsiFeatures {
    state.features(bounds)
}

fn log_normalize(rate: f64, bounds: &NormalizationBounds) -> f64 {
    let lo = bounds.r_min.ln();
    let hi = bounds.r_max.ln();
    ((rate.ln() - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Normalization range for the CSI features and the quality scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationBounds {
    pub r_min: f64,
    pub r_max: f64,
    pub rtt_max: f64,
}

impl Default for NormalizationBounds {
    fn default() -> Self {
        Self {
            r_min: 10e6,
            r_max: 1e9,
            rtt_max: 0.1,
        }
    }
}

impl NormalizationBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0 && self.r_min < self.r_max && self.rtt_max > 0.0) {
            return Err(Error::Config(format!(
                "normalization bounds need 0 < r_min < r_max and rtt_max > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// `[log r_up, log r_down, per_up, per_down, rtt]`, each normalized into [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CsiFeatures(pub [f64; CSI_FEATURE_DIM]);

impl CsiFeatures {
    pub const ZERO: CsiFeatures = CsiFeatures([0.0; CSI_FEATURE_DIM]);

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// A channel config value: either fixed or a `[lo, hi]` uniform range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Fixed(f64),
    Range([f64; 2]),
}

impl Param {
    fn fixed(self, name: &str) -> Result<f64> {
        match self {
            Param::Fixed(v) => Ok(v),
            Param::Range(_) => Err(Error::Config(format!(
                "{name} must be a single value outside the sampled regime"
            ))),
        }
    }

    fn sample(self, rng: &mut SimRng, log_scale: bool) -> f64 {
        match self {
            Param::Fixed(v) => v,
            Param::Range([lo, hi]) if lo == hi => lo,
            Param::Range([lo, hi]) if log_scale => rng.random_range(lo.ln()..hi.ln()).exp(),
            Param::Range([lo, hi]) => rng.random_range(lo..hi),
        }
    }

    fn check_range(self, name: &str) -> Result<()> {
        if let Param::Range([lo, hi]) = self {
            if !(lo <= hi) {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}] is inverted")));
            }
        }
        Ok(())
    }
}

impl From<f64> for Param {
    fn from(v: f64) -> Self {
        Param::Fixed(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateScale {
    Linear,
    Log,
}

/// One fixed link state, used for the alternate state of the two-state regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub rate_up_bps: f64,
    pub rate_down_bps: f64,
    #[serde(default)]
    pub per_up: f64,
    #[serde(default)]
    pub per_down: f64,
    pub rtt_s: f64,
}

impl LinkSpec {
    pub fn to_state(&self) -> Result<CsiState> {
        CsiState::new(
            self.rate_up_bps,
            self.rate_down_bps,
            self.per_up,
            self.per_down,
            self.rtt_s,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Static,
    TwoState,
    Sampled,
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Regime::Static),
            "two-state" => Ok(Regime::TwoState),
            "sampled" => Ok(Regime::Sampled),
            other => Err(Error::Config(format!(
                "unknown channel regime {other:?} (expected static, two-state or sampled)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// `static`, `two-state` or `sampled`; validated at trace generation.
    pub regime: String,
    pub rate_up_bps: Param,
    pub rate_down_bps: Param,
    #[serde(default = "zero_param")]
    pub per_up: Param,
    #[serde(default = "zero_param")]
    pub per_down: Param,
    pub rtt_s: Param,
    /// Sampled regime only: draw rates uniformly in linear or log space.
    #[serde(default = "default_rate_scale")]
    pub rate_scale: RateScale,
    /// Two-state regime only: per-round probability of switching state.
    #[serde(default)]
    pub switch_prob: f64,
    /// Two-state regime only: the second state.
    #[serde(default)]
    pub alt: Option<LinkSpec>,
}

fn zero_param() -> Param {
    Param::Fixed(0.0)
}

fn default_rate_scale() -> RateScale {
    RateScale::Linear
}

impl ChannelConfig {
    pub fn fixed(rate_bps: f64, rtt_s: f64) -> Self {
        Self {
            regime: "static".into(),
            rate_up_bps: rate_bps.into(),
            rate_down_bps: rate_bps.into(),
            per_up: 0.0.into(),
            per_down: 0.0.into(),
            rtt_s: rtt_s.into(),
            rate_scale: RateScale::Linear,
            switch_prob: 0.0,
            alt: None,
        }
    }

    pub fn regime(&self) -> Result<Regime> {
        self.regime.parse()
    }

    fn primary_state(&self) -> Result<CsiState> {
        CsiState::new(
            self.rate_up_bps.fixed("rate_up_bps")?,
            self.rate_down_bps.fixed("rate_down_bps")?,
            self.per_up.fixed("per_up")?,
            self.per_down.fixed("per_down")?,
            self.rtt_s.fixed("rtt_s")?,
        )
    }

    pub fn validate(&self) -> Result<()> {
        match self.regime()? {
            Regime::Static => {
                self.primary_state()?;
            }
            Regime::TwoState => {
                self.primary_state()?;
                self.alt
                    .ok_or_else(|| Error::Config("two-state regime needs an [alt] state".into()))?
                    .to_state()?;
                if !(0.0..=1.0).contains(&self.switch_prob) {
                    return Err(Error::Config(format!(
                        "switch_prob={} outside [0,1]",
                        self.switch_prob
                    )));
                }
            }
            Regime::Sampled => {
                for (name, p) in self.params() {
                    p.check_range(name)?;
                }
                let lows = |p: Param| match p {
                    Param::Fixed(v) => v,
                    Param::Range([lo, _]) => lo,
                };
                let highs = |p: Param| match p {
                    Param::Fixed(v) => v,
                    Param::Range([_, hi]) => hi,
                };
                // Both corners of the box must be valid states; ranges are convex.
                CsiState::new(
                    lows(self.rate_up_bps),
                    lows(self.rate_down_bps),
                    lows(self.per_up),
                    lows(self.per_down),
                    lows(self.rtt_s),
                )?;
                let hi = CsiState {
                    r_up: highs(self.rate_up_bps),
                    r_down: highs(self.rate_down_bps),
                    per_up: highs(self.per_up),
                    per_down: highs(self.per_down),
                    rtt: highs(self.rtt_s),
                };
                hi.validate()?;
            }
        }
        Ok(())
    }

    fn params(&self) -> [(&'static str, Param); 5] {
        [
            ("rate_up_bps", self.rate_up_bps),
            ("rate_down_bps", self.rate_down_bps),
            ("per_up", self.per_up),
            ("per_down", self.per_down),
            ("rtt_s", self.rtt_s),
        ]
    }

    fn sample_state(&self, rng: &mut SimRng) -> Result<CsiState> {
        let log = self.rate_scale == RateScale::Log;
        CsiState::new(
            self.rate_up_bps.sample(rng, log),
            self.rate_down_bps.sample(rng, log),
            self.per_up.sample(rng, false),
            self.per_down.sample(rng, false),
            self.rtt_s.sample(rng, false),
        )
    }
}

/// Per-round CSI sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTrace {
    pub states: Vec<CsiState>,
    pub seed: u64,
    pub regime: Regime,
}

impl ChannelTrace {
    /// State for round `round` (0-based); wraps around past the end of the trace.
    pub fn at(&self, round: usize) -> &CsiState {
        &self.states[round % self.states.len()]
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

pub fn generate_trace(config: &ChannelConfig, seed: u64, rounds: usize) -> Result<ChannelTrace> {
    if rounds == 0 {
        return Err(Error::InvalidArgument("channel trace needs at least one round".into()));
    }
    config.validate()?;
    let regime = config.regime()?;
    let mut rng = crate::rng::rng_for(seed, &[crate::rng::stream::CHANNEL]);
    let states = match regime {
        Regime::Static => vec![config.primary_state()?; rounds],
        Regime::TwoState => {
            let pair = [config.primary_state()?, config.alt.expect("validated").to_state()?];
            let mut current = 0usize;
            let mut states = Vec::with_capacity(rounds);
            for _ in 0..rounds {
                states.push(pair[current]);
                if rng.random::<f64>() < config.switch_prob {
                    current ^= 1;
                }
            }
            states
        }
        Regime::Sampled => (0..rounds)
            .map(|_| config.sample_state(&mut rng))
            .collect::<Result<_>>()?,
    };
    Ok(ChannelTrace {
        states,
        seed,
        regime,
    })
}
