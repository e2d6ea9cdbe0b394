//! Payload sizes and communication latency for the message exchanges of
//! full-hidden upload (FH), selective-hidden upload (SH), token-only greedy
//! verification and the full-distribution rejection-sampling baseline.
//!
//! Every serialization term is `bits / (R * (1 - PER))` in its direction;
//! the round-level overhead is one RTT per request/response exchange.

use serde::{Deserialize, Serialize};

use crate::channel::{CsiState, Direction};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WireConfig {
    pub vocab_size: u64,
    /// Drafter hidden dimension as billed on the uplink.
    pub d_h: u64,
    /// Bits per hidden element.
    pub b_h: u64,
    /// Bits per position index.
    pub b_pos: u64,
    /// Bits per probability entry (rejection baseline only).
    pub b_prob: u64,
    pub hdr_up: u64,
    pub hdr_down: u64,
}

impl Default for WireConfig {
    fn default() -> Self {
        Self {
            vocab_size: 128_256,
            d_h: 2048,
            b_h: 16,
            b_pos: 16,
            b_prob: 16,
            hdr_up: 320,
            hdr_down: 320,
        }
    }
}

impl WireConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config(format!(
                "vocab_size must be at least 2, got {}",
                self.vocab_size
            )));
        }
        if self.d_h == 0 || self.b_h == 0 {
            return Err(Error::Config("d_h and b_h must be positive".into()));
        }
        Ok(())
    }

    /// `ceil(log2 |V|)`.
    pub fn b_id(&self) -> u64 {
        u64::from(64 - (self.vocab_size.max(2) - 1).leading_zeros())
    }

    pub fn hidden_bits(&self) -> u64 {
        self.d_h * self.b_h
    }

    pub fn feedback_bits(&self) -> u64 {
        self.hdr_down + self.b_pos + self.b_id()
    }

    /// Token IDs only: the greedy-verification uplink and SH's first message.
    pub fn token_uplink_bits(&self, k: u64) -> u64 {
        self.hdr_up + k * self.b_id()
    }

    pub fn fh_uplink_bits(&self, k: u64) -> Result<u64> {
        check_window(k)?;
        Ok(self.hdr_up + k * self.b_id() + k * self.hidden_bits())
    }

    pub fn sh_bits(&self, k: u64, m: u64) -> Result<ShBits> {
        if m > k {
            return Err(Error::InvalidArgument(format!(
                "requested {m} hidden states from a window of {k}"
            )));
        }
        Ok(ShBits {
            u1: self.token_uplink_bits(k),
            req: self.hdr_down + m * self.b_pos,
            u2: self.hdr_up + m * self.hidden_bits(),
        })
    }

    pub fn reject_uplink_bits(&self, k: u64) -> u64 {
        self.hdr_up + k * self.b_id() + k * self.vocab_size * self.b_prob
    }
}

fn check_window(k: u64) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("speculation window must be non-empty".into()));
    }
    Ok(())
}

/// Payloads of the three SH messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShBits {
    /// Token IDs uplink.
    pub u1: u64,
    /// Downlink hidden-state request.
    pub req: u64,
    /// Requested hidden states uplink.
    pub u2: u64,
}

/// Communication latency of one round, split by term.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub uplink_s: f64,
    pub downlink_s: f64,
    pub rtt_s: f64,
    pub total_s: f64,
    pub uplink_bits: u64,
    pub downlink_bits: u64,
}

impl LatencyBreakdown {
    /// Serializes each message separately at the round's effective rates and
    /// adds `exchanges` RTTs.
    pub fn from_messages(uplink: &[u64], downlink: &[u64], exchanges: u32, csi: &CsiState) -> Self {
        let up_rate = csi.effective_rate(Direction::Up);
        let down_rate = csi.effective_rate(Direction::Down);
        let uplink_s: f64 = uplink.iter().map(|&b| b as f64 / up_rate).sum();
        let downlink_s: f64 = downlink.iter().map(|&b| b as f64 / down_rate).sum();
        let rtt_s = f64::from(exchanges) * csi.rtt;
        Self {
            uplink_s,
            downlink_s,
            rtt_s,
            total_s: uplink_s + downlink_s + rtt_s,
            uplink_bits: uplink.iter().sum(),
            downlink_bits: downlink.iter().sum(),
        }
    }
}

pub fn hidden_bits(cfg: &WireConfig) -> u64 {
    cfg.hidden_bits()
}

pub fn feedback_bits(cfg: &WireConfig) -> u64 {
    cfg.feedback_bits()
}

pub fn fh_uplink_bits(cfg: &WireConfig, k: u64) -> Result<u64> {
    cfg.fh_uplink_bits(k)
}

pub fn sh_bits(cfg: &WireConfig, k: u64, m: u64) -> Result<ShBits> {
    cfg.sh_bits(k, m)
}

pub fn reject_uplink_bits(cfg: &WireConfig, k: u64) -> u64 {
    cfg.reject_uplink_bits(k)
}

pub fn comm_latency_fh(cfg: &WireConfig, k: u64, csi: &CsiState) -> Result<LatencyBreakdown> {
    let up = cfg.fh_uplink_bits(k)?;
    Ok(LatencyBreakdown::from_messages(&[up], &[cfg.feedback_bits()], 1, csi))
}

pub fn comm_latency_sh(cfg: &WireConfig, k: u64, m: u64, csi: &CsiState) -> Result<LatencyBreakdown> {
    check_window(k)?;
    let b = cfg.sh_bits(k, m)?;
    Ok(LatencyBreakdown::from_messages(
        &[b.u1, b.u2],
        &[b.req, cfg.feedback_bits()],
        2,
        csi,
    ))
}

/// Single exchange carrying token IDs only, answered by the feedback message.
pub fn comm_latency_tokens(cfg: &WireConfig, k: u64, csi: &CsiState) -> Result<LatencyBreakdown> {
    check_window(k)?;
    Ok(LatencyBreakdown::from_messages(
        &[cfg.token_uplink_bits(k)],
        &[cfg.feedback_bits()],
        1,
        csi,
    ))
}

pub fn comm_latency_reject(cfg: &WireConfig, k: u64, csi: &CsiState) -> Result<LatencyBreakdown> {
    check_window(k)?;
    Ok(LatencyBreakdown::from_messages(
        &[cfg.reject_uplink_bits(k)],
        &[cfg.feedback_bits()],
        1,
        csi,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit() -> WireConfig {
        WireConfig {
            vocab_size: 2,
            d_h: 1,
            b_h: 1,
            b_pos: 0,
            b_prob: 0,
            hdr_up: 0,
            hdr_down: 0,
        }
    }

    #[test]
    fn token_id_width() {
        assert_eq!(WireConfig::default().b_id(), 17);
        let mut c = unit();
        for (v, bits) in [(2, 1), (3, 2), (4, 2), (5, 3), (64, 6), (65, 7), (131_072, 17), (131_073, 18)] {
            c.vocab_size = v;
            assert_eq!(c.b_id(), bits, "vocab {v}");
        }
    }

    #[test]
    fn hidden_and_feedback_payloads() {
        assert_eq!(WireConfig::default().hidden_bits(), 32_768);
        assert_eq!(unit().hidden_bits(), 1);
        assert_eq!(WireConfig { d_h: 896, ..Default::default() }.hidden_bits(), 14_336);

        assert_eq!(WireConfig { hdr_down: 0, ..Default::default() }.feedback_bits(), 33);
        assert_eq!(unit().feedback_bits(), 1);
        assert_eq!(WireConfig::default().feedback_bits(), 353);
    }

    #[test]
    fn fh_uplink() {
        let c = WireConfig::default();
        assert_eq!(c.fh_uplink_bits(10).unwrap(), 328_170);
        assert_eq!(unit().fh_uplink_bits(1).unwrap(), 2);
        assert_eq!(
            c.fh_uplink_bits(64).unwrap() - c.fh_uplink_bits(32).unwrap(),
            32 * (17 + 32_768)
        );
        assert!(c.fh_uplink_bits(0).is_err());
    }

    #[test]
    fn sh_payloads() {
        let c = WireConfig::default();
        let b = c.sh_bits(10, 0).unwrap();
        assert_eq!((b.u1, b.req, b.u2), (320 + 170, 320, 320));
        assert_eq!(c.sh_bits(10, 2).unwrap().u2, 65_856);
        let full = c.sh_bits(10, 10).unwrap();
        assert_eq!(full.u2, 10 * c.hidden_bits() + c.hdr_up);
        assert!(c.sh_bits(3, 4).is_err());
    }

    #[test]
    fn reject_payload() {
        let c = WireConfig {
            vocab_size: 64,
            ..Default::default()
        };
        assert_eq!(c.reject_uplink_bits(1), 320 + 6 + 1024);
        let big = WireConfig::default().reject_uplink_bits(10);
        assert_eq!(big, 320 + 170 + 10 * 128_256 * 16);
        assert!(big as f64 > 60.0 * WireConfig::default().fh_uplink_bits(10).unwrap() as f64);
        let c = WireConfig { b_prob: 0, ..Default::default() };
        assert_eq!(c.reject_uplink_bits(10), c.token_uplink_bits(10));
    }

    #[test]
    fn fh_latency_hand_value() {
        let csi = CsiState::symmetric(500e6, 0.05).unwrap();
        let l = comm_latency_fh(&WireConfig::default(), 10, &csi).unwrap();
        assert_relative_eq!(l.uplink_s, 328_170.0 / 500e6, max_relative = 1e-12);
        assert_relative_eq!(l.downlink_s, 353.0 / 500e6, max_relative = 1e-12);
        assert_eq!(l.rtt_s, 0.05);
        assert_relative_eq!(l.total_s, 0.05 + 6.5634e-4 + 7.06e-7, max_relative = 1e-9);
        assert_eq!(l.total_s, l.uplink_s + l.downlink_s + l.rtt_s);
    }

    #[test]
    fn fh_latency_limits() {
        let c = WireConfig::default();
        let fast = CsiState::symmetric(1e30, 0.0).unwrap();
        assert!(comm_latency_fh(&c, 10, &fast).unwrap().total_s < 1e-20);
        let clean = CsiState::new(20e6, 20e6, 0.0, 0.0, 0.0).unwrap();
        let lossy = CsiState::new(20e6, 20e6, 0.5, 0.0, 0.0).unwrap();
        let a = comm_latency_fh(&c, 10, &clean).unwrap().uplink_s;
        let b = comm_latency_fh(&c, 10, &lossy).unwrap().uplink_s;
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-15);
    }

    #[test]
    fn sh_latency() {
        let c = WireConfig::default();
        let csi0 = CsiState::symmetric(20e6, 0.0).unwrap();
        let fh = comm_latency_fh(&c, 10, &csi0).unwrap();
        let sh = comm_latency_sh(&c, 10, 0, &csi0).unwrap();
        // m = 0: SH drops the hidden payload but pays one extra header each way.
        let expected = fh.total_s - 10.0 * c.hidden_bits() as f64 / 20e6
            + c.hdr_up as f64 / 20e6
            + c.hdr_down as f64 / 20e6;
        assert_relative_eq!(sh.total_s, expected, max_relative = 1e-12);

        let csi = CsiState::symmetric(20e6, 0.05).unwrap();
        assert_relative_eq!(comm_latency_sh(&c, 10, 3, &csi).unwrap().rtt_s, 0.1, max_relative = 1e-15);

        let one = comm_latency_sh(&c, 10, 1, &csi).unwrap();
        let u2_term = (320.0 + 32_768.0) / 20e6;
        assert_relative_eq!(u2_term, 1.6544e-3, max_relative = 1e-9);
        assert_relative_eq!(one.uplink_s, (320.0 + 170.0) / 20e6 + u2_term, max_relative = 1e-12);
        assert!(comm_latency_sh(&c, 2, 3, &csi).is_err());
    }

    proptest! {
        #[test]
        fn sh_uplink_never_exceeds_fh_plus_header(k in 1u64..128, m_frac in 0.0..=1.0f64, d_h in 1u64..4096) {
            let c = WireConfig { d_h, ..Default::default() };
            let m = ((k as f64) * m_frac).floor() as u64;
            let sh = c.sh_bits(k, m).unwrap();
            let fh = c.fh_uplink_bits(k).unwrap();
            prop_assert!(sh.u1 + sh.u2 <= fh + c.hdr_up);
            prop_assert_eq!(sh.u1 + sh.u2 == fh + c.hdr_up, m == k);
        }

        #[test]
        fn latency_linear_in_bits(bits in 1u64..10_000_000, rate in 1e6..1e9f64, per in 0.0..0.9f64) {
            let csi = CsiState::new(rate, rate, per, 0.0, 0.0).unwrap();
            let one = LatencyBreakdown::from_messages(&[bits], &[], 0, &csi);
            let two = LatencyBreakdown::from_messages(&[2 * bits], &[], 0, &csi);
            prop_assert!((two.uplink_s - 2.0 * one.uplink_s).abs() <= 1e-12 * two.uplink_s);
            prop_assert!(one.total_s > 0.0);
        }
    }
}
