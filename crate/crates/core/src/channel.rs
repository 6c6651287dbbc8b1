//! Complex-baseband channel simulation: real/complex mapping, transmit-power
//! normalization, AWGN and block Rayleigh fading with optional zero-forcing equalization.
//!
//! Noise power `σ²` is the total variance per complex sample; each of the real and
//! imaginary components carries `σ²/2`. With average transmit power `P`,
//! `SNR(dB) = 10·log10(P/σ²)`.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Gains with magnitude below this are treated as an outage by [`equalize`].
pub const MIN_EQUALIZABLE_GAIN: f64 = 1e-12;

/// A length-`k` complex baseband vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSignal {
    samples: Vec<Complex64>,
    /// Set when the source real vector had odd length and a trailing zero was appended.
    padded: bool,
}

impl ComplexSignal {
    pub fn new(samples: Vec<Complex64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Channel("complex signal needs at least one sample".into()));
        }
        if samples.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Channel("complex signal has non-finite samples".into()));
        }
        Ok(ComplexSignal { samples, padded: false })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(re, im)| Complex64::new(re, im)).collect())
    }

    pub fn k(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn is_padded(&self) -> bool {
        self.padded
    }

    /// `z*z`, the total energy.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Average per-sample power `(1/k)·Σ|z_i|²`.
    pub fn average_power(&self) -> f64 {
        self.energy() / self.k() as f64
    }

    fn with_samples(&self, samples: Vec<Complex64>) -> Self {
        ComplexSignal { samples, padded: self.padded }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Awgn,
    Rayleigh,
}

impl std::fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::Rayleigh => "rayleigh",
        })
    }
}

impl std::str::FromStr for ChannelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "awgn" => Ok(ChannelKind::Awgn),
            "rayleigh" => Ok(ChannelKind::Rayleigh),
            other => Err(Error::Config(format!("unknown channel kind `{other}`"))),
        }
    }
}

/// How the receiver handles a fading gain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReceiverMode {
    /// Divide by the (perfectly known) gain.
    #[default]
    Equalize,
    /// Pass `g·z + ω` through; the decoder must absorb the fading.
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    pub power: f64,
    pub noise_power: f64,
    pub receiver: ReceiverMode,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn new(kind: ChannelKind, power: f64, noise_power: f64, seed: u64) -> Result<Self> {
        if !(power > 0.0 && power.is_finite()) {
            return Err(Error::Channel(format!("transmit power must be positive, got {power}")));
        }
        if !(noise_power >= 0.0 && noise_power.is_finite()) {
            return Err(Error::Channel(format!("noise power must be non-negative, got {noise_power}")));
        }
        Ok(ChannelConfig { kind, power, noise_power, receiver: ReceiverMode::Equalize, seed })
    }

    pub fn from_snr_db(kind: ChannelKind, power: f64, snr_db: f64, seed: u64) -> Result<Self> {
        Self::new(kind, power, noise_power_for_snr(power, snr_db), seed)
    }

    /// Noiseless configuration (`σ² = 0`).
    pub fn noiseless(kind: ChannelKind, power: f64) -> Result<Self> {
        Self::new(kind, power, 0.0, 0)
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.power / self.noise_power).log10()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_receiver(mut self, receiver: ReceiverMode) -> Self {
        self.receiver = receiver;
        self
    }
}

/// `σ² = P / 10^(snr/10)`.
pub fn noise_power_for_snr(power: f64, snr_db: f64) -> f64 {
    power / 10f64.powf(snr_db / 10.0)
}

/// Pair consecutive reals into complex samples; odd lengths get one trailing zero.
pub fn to_complex(features: &Tensor) -> ComplexSignal {
    let d = features.data();
    let padded = d.len() % 2 == 1;
    let samples = d.chunks(2).map(|c| Complex64::new(c[0], c.get(1).copied().unwrap_or(0.0))).collect();
    ComplexSignal { samples, padded }
}

/// Inverse of [`to_complex`]: unpair and drop the padding, then reshape.
pub fn from_complex(signal: &ComplexSignal, shape: &[usize]) -> Result<Tensor> {
    let mut reals: Vec<f64> = signal.samples.iter().flat_map(|c| [c.re, c.im]).collect();
    if signal.padded {
        reals.pop();
    }
    Tensor::new(shape, reals)
}

/// `z = sqrt(k·P) · z̃ / sqrt(z̃*z̃)`, so that the average per-sample power is exactly `P`.
pub fn power_normalize(z_tilde: &ComplexSignal, power: f64) -> Result<ComplexSignal> {
    let energy = z_tilde.energy();
    if energy <= 0.0 {
        return Err(Error::Channel("cannot power-normalize an all-zero signal".into()));
    }
    if !(power > 0.0) {
        return Err(Error::Channel(format!("transmit power must be positive, got {power}")));
    }
    let scale = (z_tilde.k() as f64 * power).sqrt() / energy.sqrt();
    Ok(z_tilde.with_samples(z_tilde.samples.iter().map(|c| c * scale).collect()))
}

fn noise_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gain_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// `k` i.i.d. circularly symmetric complex Gaussian samples of total variance `σ²`.
pub fn complex_gaussian(k: usize, variance: f64, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let sd = (variance / 2.0).sqrt();
    (0..k)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(sd * re, sd * im)
        })
        .collect()
}

/// Block-fading gain with `E[|g|²] = 1`.
pub fn draw_gain(seed: u64) -> Complex64 {
    complex_gaussian(1, 1.0, &mut gain_rng(seed))[0]
}

/// `ẑ = z + ω`.
pub fn awgn(z: &ComplexSignal, noise_power: f64, seed: u64) -> Result<ComplexSignal> {
    faded(z, Complex64::new(1.0, 0.0), noise_power, seed)
}

/// `ẑ = g·z + ω` with `g` drawn once for the whole block.
pub fn rayleigh(z: &ComplexSignal, noise_power: f64, seed: u64) -> Result<(ComplexSignal, Complex64)> {
    let g = draw_gain(seed);
    Ok((faded(z, g, noise_power, seed)?, g))
}

/// `ẑ = g·z + ω` for a caller-chosen gain; the noise stream matches [`rayleigh`].
pub fn faded(z: &ComplexSignal, gain: Complex64, noise_power: f64, seed: u64) -> Result<ComplexSignal> {
    if !(noise_power >= 0.0) {
        return Err(Error::Channel(format!("noise power must be non-negative, got {noise_power}")));
    }
    if noise_power == 0.0 {
        return Ok(z.with_samples(z.samples.iter().map(|&c| gain * c).collect()));
    }
    let noise = complex_gaussian(z.k(), noise_power, &mut noise_rng(seed));
    Ok(z.with_samples(z.samples.iter().zip(noise).map(|(&c, w)| gain * c + w).collect()))
}

/// Zero-forcing equalization with perfect channel knowledge: `ẑ / g`.
pub fn equalize(z_hat: &ComplexSignal, gain: Complex64) -> Result<ComplexSignal> {
    if gain.norm() < MIN_EQUALIZABLE_GAIN {
        return Err(Error::Channel(format!("deep fade: |g| = {:e} is below {MIN_EQUALIZABLE_GAIN:e}", gain.norm())));
    }
    Ok(z_hat.with_samples(z_hat.samples.iter().map(|&c| c / gain).collect()))
}

/// Result of pushing one block through a configured channel.
#[derive(Clone, Debug)]
pub struct Transmission {
    pub received: ComplexSignal,
    /// Gain applied by the channel (1 for AWGN).
    pub gain: Complex64,
    /// Linear map from transmitted to received samples, noise aside.
    pub effective_gain: Complex64,
}

/// Apply the configured channel (and receiver) to one block. `seed` overrides `config.seed`.
pub fn transmit(z: &ComplexSignal, config: &ChannelConfig, seed: u64) -> Result<Transmission> {
    let one = Complex64::new(1.0, 0.0);
    match config.kind {
        ChannelKind::Awgn => {
            Ok(Transmission { received: awgn(z, config.noise_power, seed)?, gain: one, effective_gain: one })
        }
        ChannelKind::Rayleigh => {
            let (y, g) = rayleigh(z, config.noise_power, seed)?;
            match config.receiver {
                ReceiverMode::Equalize => Ok(Transmission { received: equalize(&y, g)?, gain: g, effective_gain: one }),
                ReceiverMode::Raw => Ok(Transmission { received: y, gain: g, effective_gain: g }),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sig(pairs: &[(f64, f64)]) -> ComplexSignal {
        ComplexSignal::from_pairs(pairs).unwrap()
    }

    #[test]
    fn pairs_consecutive_reals() {
        let t = Tensor::new(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let z = to_complex(&t);
        assert_eq!(z.k(), 2);
        assert_eq!(z.samples(), &[Complex64::new(1.0, 2.0), Complex64::new(3.0, 4.0)]);
        assert_eq!(from_complex(&z, &[4]).unwrap(), t);
    }

    #[test]
    fn odd_length_pads_one_zero() {
        let t = Tensor::new(&[5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let z = to_complex(&t);
        assert_eq!(z.k(), 3);
        assert!(z.is_padded());
        assert_eq!(z.samples()[2], Complex64::new(5.0, 0.0));
        assert_eq!(from_complex(&z, &[5]).unwrap(), t);
    }

    #[test]
    fn normalize_reference_cases() {
        let z = sig(&[(1.0, 0.0), (0.0, 1.0)]);
        assert_eq!(power_normalize(&z, 1.0).unwrap(), z);
        let z = sig(&[(2.0, 0.0)]);
        assert_eq!(power_normalize(&z, 1.0).unwrap().samples(), &[Complex64::new(1.0, 0.0)]);
        assert!(matches!(power_normalize(&sig(&[(0.0, 0.0), (0.0, 0.0)]), 1.0), Err(Error::Channel(_))));
    }

    #[test]
    fn zero_noise_is_identity() {
        let z = sig(&[(0.3, -1.0), (2.0, 0.5)]);
        assert_eq!(awgn(&z, 0.0, 9).unwrap(), z);
        let y = faded(&z, Complex64::new(1.0, 0.0), 0.0, 1).unwrap();
        assert_eq!(y, z);
    }

    #[test]
    fn quarter_turn_gain_rotates() {
        let z = sig(&[(1.0, 0.0), (0.0, 2.0)]);
        let y = faded(&z, Complex64::new(0.0, 1.0), 0.0, 3).unwrap();
        assert_eq!(y.samples(), &[Complex64::new(0.0, 1.0), Complex64::new(-2.0, 0.0)]);
        let noisy = faded(&z, Complex64::new(0.0, 1.0), 0.01, 3).unwrap();
        let noise = awgn(&sig(&[(0.0, 0.0), (0.0, 0.0)]), 0.01, 3).unwrap();
        for ((a, b), w) in noisy.samples().iter().zip(y.samples()).zip(noise.samples()) {
            assert!((a - b - w).norm() < 1e-15);
        }
    }

    #[test]
    fn snr_definition() {
        let c = ChannelConfig::from_snr_db(ChannelKind::Awgn, 1.0, 10.0, 0).unwrap();
        assert!((c.noise_power - 0.1).abs() < 1e-15);
        assert!((c.snr_db() - 10.0).abs() < 1e-12);
        assert!(ChannelConfig::new(ChannelKind::Awgn, 0.0, 1.0, 0).is_err());
        assert!(ChannelConfig::new(ChannelKind::Awgn, 1.0, -1.0, 0).is_err());
    }

    #[test]
    fn equalize_cases() {
        let z = sig(&[(0.5, 0.25), (-1.0, 3.0)]);
        assert_eq!(equalize(&z, Complex64::new(1.0, 0.0)).unwrap(), z);
        let (y, g) = rayleigh(&z, 0.0, 17).unwrap();
        let back = equalize(&y, g).unwrap();
        for (a, b) in back.samples().iter().zip(z.samples()) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(equalize(&z, Complex64::new(1e-13, 0.0)).is_err());
    }

    #[test]
    fn seeded_determinism() {
        let z = sig(&[(1.0, 2.0); 16]);
        assert_eq!(awgn(&z, 0.5, 11).unwrap(), awgn(&z, 0.5, 11).unwrap());
        assert_ne!(awgn(&z, 0.5, 11).unwrap(), awgn(&z, 0.5, 12).unwrap());
        assert_eq!(rayleigh(&z, 0.5, 4).unwrap().1, rayleigh(&z, 0.5, 4).unwrap().1);
    }

    #[test]
    fn equalized_residual_variance_scales_with_fade() {
        // Residual of equalize(g z + ω, g) - z is ω/g, per-sample variance σ²/|g|².
        let k = 200_000;
        let z = sig(&vec![(0.7, -0.2); k]);
        let s2 = 0.3;
        for seed in [1u64, 2, 3] {
            let (y, g) = rayleigh(&z, s2, seed).unwrap();
            let r = equalize(&y, g).unwrap();
            let var: f64 = r.samples().iter().zip(z.samples()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / k as f64;
            let want = s2 / g.norm_sqr();
            assert!((var / want - 1.0).abs() < 0.02, "seed {seed}: {var} vs {want}");
        }
    }

    proptest! {
        #[test]
        fn round_trip_identity(v in prop::collection::vec(-10.0f64..10.0, 1..64)) {
            let n = v.len();
            let t = Tensor::new(&[n], v).unwrap();
            prop_assert_eq!(from_complex(&to_complex(&t), &[n]).unwrap(), t);
        }

        #[test]
        fn normalization_is_scale_invariant(
            v in prop::collection::vec(-5.0f64..5.0, 2..64),
            c in 0.01f64..100.0,
            p in 0.1f64..10.0,
        ) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let n = v.len();
            let t = Tensor::new(&[n], v).unwrap();
            let a = power_normalize(&to_complex(&t), p).unwrap();
            let b = power_normalize(&to_complex(&t.scale(c)), p).unwrap();
            prop_assert!((a.average_power() / p - 1.0).abs() < 1e-12);
            for (x, y) in a.samples().iter().zip(b.samples()) {
                prop_assert!((x - y).norm() < 1e-9 * (1.0 + x.norm()));
            }
        }
    }
}
