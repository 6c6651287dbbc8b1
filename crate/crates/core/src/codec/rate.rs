//! Bandwidth-compression-ratio accounting, `R = k / n`.
//!
//! `n` counts image reals (`3·w·h`) and `k` counts complex channel symbols. Each
//! pyramid scale is encoded to `C` channels at half its spatial size and transmitted
//! as its own complex vector of `ceil(C·(s_i/2)² / 2)` symbols.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positive rational number, e.g. a requested compression ratio `1/6`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::invalid(format!("ratio {num}/{den} must be positive")));
        }
        Ok(Ratio { num, den })
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Ratio {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot parse ratio `{s}` (expected `a/b`)"));
        match s.split_once('/') {
            Some((a, b)) => Ratio::new(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
            None => Ratio::new(s.parse().map_err(|_| bad())?, 1),
        }
    }
}

impl TryFrom<String> for Ratio {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Ratio> for String {
    fn from(r: Ratio) -> String {
        r.to_string()
    }
}

/// Derived channel width and symbol counts for one requested ratio.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RateConfig {
    pub requested: Ratio,
    /// Image reals, `3·w·h`.
    pub n: usize,
    /// Encoder output channels `C`.
    pub channels: usize,
    /// Complex symbols per image, summed over scales.
    pub k: usize,
    /// Encoded spatial size per scale, `s_i / 2`.
    pub encoded_sizes: Vec<usize>,
}

impl RateConfig {
    pub fn achieved(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    /// Complex symbols per image for each scale.
    pub fn symbols_per_scale(&self) -> Vec<usize> {
        self.encoded_sizes.iter().map(|&s| (self.channels * s * s).div_ceil(2)).collect()
    }

    /// Change in achieved ratio caused by one extra channel.
    pub fn channel_quantum(&self) -> f64 {
        let area: usize = self.encoded_sizes.iter().map(|s| s * s).sum();
        area as f64 / (2.0 * self.n as f64)
    }
}

/// `C = round(2·R·n / Σ_i (s_i/2)²)`; errors when that rounds to zero.
pub fn channels_for_ratio(requested: Ratio, image_size: usize, pyramid_sizes: &[usize]) -> Result<RateConfig> {
    if pyramid_sizes.is_empty() || pyramid_sizes.iter().any(|&s| s < 2 || s % 2 != 0) {
        return Err(Error::invalid(format!("pyramid sizes {pyramid_sizes:?} must be even and at least 2")));
    }
    let n = 3 * image_size * image_size;
    let encoded_sizes: Vec<usize> = pyramid_sizes.iter().map(|s| s / 2).collect();
    let area: usize = encoded_sizes.iter().map(|s| s * s).sum();
    let channels = (2.0 * requested.value() * n as f64 / area as f64).round() as usize;
    if channels == 0 {
        return Err(Error::invalid(format!(
            "compression ratio {requested} is below the minimum representable ratio \
             {area}/(2·{n}) = {:.6}",
            area as f64 / (2.0 * n as f64)
        )));
    }
    let mut rate = RateConfig { requested, n, channels, k: 0, encoded_sizes };
    rate.k = rate.symbols_per_scale().iter().sum();
    Ok(rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIZES: [usize; 5] = [32, 16, 8, 4, 2];

    #[test]
    fn toy_geometry_one_sixth() {
        let r = channels_for_ratio(Ratio::new(1, 6).unwrap(), 128, &SIZES).unwrap();
        assert_eq!(r.n, 49152);
        assert_eq!(r.channels, 48);
        assert_eq!(r.k, 8184);
        assert!((r.achieved() - 0.16650390625).abs() < 1e-12);
    }

    #[test]
    fn toy_geometry_one_twelfth() {
        let r = channels_for_ratio(Ratio::new(1, 12).unwrap(), 128, &SIZES).unwrap();
        assert_eq!((r.channels, r.k), (24, 4092));
    }

    #[test]
    fn tiny_ratio_reports_minimum() {
        let err = channels_for_ratio(Ratio::new(1, 10_000).unwrap(), 128, &SIZES).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("341/(2·49152)"), "{msg}");
    }

    #[test]
    fn parses_fractions() {
        assert_eq!("1/6".parse::<Ratio>().unwrap(), Ratio { num: 1, den: 6 });
        assert!("0/3".parse::<Ratio>().is_err());
        assert!("x".parse::<Ratio>().is_err());
    }
}
