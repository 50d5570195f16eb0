//! Probe noise synthesis.
//!
//! Noise is expressed as rotation-angle-equivalent noise at the balanced
//! detector. The white floor is the shot noise of the detected probe scaled
//! by the detected-quadrature variance (1 for a coherent probe) plus an
//! excess atomic contribution. Technical 1/f noise is synthesized in the
//! frequency domain around a configurable center frequency, so that it
//! shows up at low frequencies after demodulation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::config::{TechnicalNoiseConfig, ValidatedConfig};
use crate::physics::{ANCHOR_DENSITY_CM3, PLANCK, SPEED_OF_LIGHT};

/// Quadrature variance after a beam-splitter loss with transmission `eta`;
/// the lost fraction is replaced by vacuum (variance 1).
pub fn loss_propagated_variance(v_in: f64, eta: f64) -> f64 {
    eta * v_in + (1.0 - eta)
}

/// Variance of the quadrature at angle `theta` from the squeezed axis.
pub fn quadrature_variance(theta: f64, v_squeeze: f64, v_antisqueeze: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    v_squeeze * c * c + v_antisqueeze * s * s
}

/// Shot-noise-limited polarization rotation ASD, rad/√Hz, for a probe of
/// `power_mw` at `wavelength_nm`.
pub fn shot_noise_asd_from_power(power_mw: f64, wavelength_nm: f64) -> f64 {
    let flux = photon_flux(power_mw, wavelength_nm);
    1.0 / (2.0 * flux.sqrt())
}

/// Photons per second.
pub fn photon_flux(power_mw: f64, wavelength_nm: f64) -> f64 {
    power_mw * 1e-3 * wavelength_nm * 1e-9 / (PLANCK * SPEED_OF_LIGHT)
}

/// Excess atomic noise variance relative to shot noise,
/// `c·(n/n_anchor)^p`.
pub fn excess_atomic_noise_variance(density_cm3: f64, noise: &TechnicalNoiseConfig) -> f64 {
    noise.excess_coefficient * (density_cm3 / ANCHOR_DENSITY_CM3).powf(noise.excess_exponent)
}

/// Coefficient that makes the excess variance equal `target` at
/// `density_cm3` for exponent `exponent`.
pub fn calibrate_excess_coefficient(target: f64, density_cm3: f64, exponent: f64) -> f64 {
    target / (density_cm3 / ANCHOR_DENSITY_CM3).powf(exponent)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// Coherent shot-noise ASD, rad/√Hz.
    pub shot_asd: f64,
    pub squeeze_variance_factor: f64,
    /// Hz; zero disables the 1/f component.
    pub flicker_corner: f64,
    /// 1/f asymptote evaluated at the corner offset, rad/√Hz.
    pub flicker_asd_at_corner: f64,
    /// Frequency the 1/f component is centered on, Hz (0 = baseband).
    pub flicker_center: f64,
    pub excess_variance_factor: f64,
}

impl NoiseModel {
    pub fn coherent(shot_asd: f64) -> Self {
        NoiseModel {
            shot_asd,
            squeeze_variance_factor: 1.0,
            flicker_corner: 0.0,
            flicker_asd_at_corner: 0.0,
            flicker_center: 0.0,
            excess_variance_factor: 0.0,
        }
    }

    /// Probe noise of a validated configuration; `squeezed` selects the
    /// squeezed (as configured) or coherent probe state.
    pub fn from_config(cfg: &ValidatedConfig, squeezed: bool) -> Self {
        let d = cfg.derived();
        let c = cfg.config();
        NoiseModel {
            shot_asd: d.shot_asd,
            squeeze_variance_factor: if squeezed { d.squeeze_variance } else { 1.0 },
            flicker_corner: c.noise.flicker_corner_hz,
            flicker_asd_at_corner: c.noise.flicker_level * d.shot_asd,
            flicker_center: c.pump.mod_freq_hz,
            excess_variance_factor: d.excess_variance,
        }
    }

    /// One-sided white-floor PSD, rad²/Hz.
    pub fn white_psd(&self) -> f64 {
        self.shot_asd.powi(2) * (self.squeeze_variance_factor + self.excess_variance_factor)
    }

    /// One-sided PSD of the 1/f component at `offset` Hz from its center:
    /// 1/f below the corner, 1/f³ above it.
    pub fn flicker_psd(&self, offset: f64) -> f64 {
        let offset = offset.abs();
        if self.flicker_corner <= 0.0 || self.flicker_asd_at_corner <= 0.0 || offset == 0.0 {
            return 0.0;
        }
        let x = offset / self.flicker_corner;
        self.flicker_asd_at_corner.powi(2) / x / (1.0 + x * x)
    }
}

/// Per-component variances of a synthesized series, rad².
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBreakdown {
    /// Coherent shot noise in the sampled bandwidth (the 0 dB reference).
    pub shot: f64,
    /// Shot noise after squeezing (equals `shot` for a coherent probe).
    pub quantum: f64,
    pub excess: f64,
    pub flicker: f64,
}

impl NoiseBreakdown {
    /// `(name, variance, dB relative to shot)` rows.
    pub fn rows(&self) -> Vec<(&'static str, f64, f64)> {
        let rel = |v: f64| {
            if v > 0.0 {
                10.0 * (v / self.shot).log10()
            } else {
                f64::NEG_INFINITY
            }
        };
        vec![
            ("shot", self.shot, 0.0),
            ("quantum", self.quantum, rel(self.quantum)),
            ("excess", self.excess, rel(self.excess)),
            ("flicker", self.flicker, rel(self.flicker)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSeries {
    pub sample_rate: f64,
    pub samples: Vec<f64>,
    pub seed: u64,
    pub breakdown: NoiseBreakdown,
}

/// Derives an independent stream seed from a root seed and a label:
/// SplitMix64 finalizer applied to `root + FNV-1a(label)`.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = root.wrapping_add(h).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generates `length` samples of probe noise at `sample_rate`.
///
/// The white component draws from a stream seeded by `derive_seed(seed,
/// "white")`, so two models that differ only in their white level produce
/// proportional white series for the same seed.
pub fn synthesize_probe_noise(model: &NoiseModel, length: usize, sample_rate: f64, seed: u64) -> NoiseSeries {
    assert!(length >= 2, "noise series needs at least two samples");
    let white_sigma = (model.white_psd() * sample_rate / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "white"));
    let mut samples: Vec<f64> = (0..length)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            white_sigma * z
        })
        .collect();

    let mut flicker_variance = 0.0;
    if model.flicker_corner > 0.0 && model.flicker_asd_at_corner > 0.0 {
        let (flicker, variance) = synthesize_shaped(
            |f| model.flicker_psd(f - model.flicker_center),
            length,
            sample_rate,
            derive_seed(seed, "flicker"),
        );
        flicker_variance = variance;
        for (s, f) in samples.iter_mut().zip(flicker) {
            *s += f;
        }
    }

    let band = model.shot_asd.powi(2) * sample_rate / 2.0;
    NoiseSeries {
        sample_rate,
        samples,
        seed,
        breakdown: NoiseBreakdown {
            shot: band,
            quantum: band * model.squeeze_variance_factor,
            excess: band * model.excess_variance_factor,
            flicker: flicker_variance,
        },
    }
}

/// Gaussian series with one-sided PSD `psd(f)`, built from random Fourier
/// coefficients. Returns the series and its specified variance.
fn synthesize_shaped(psd: impl Fn(f64) -> f64, length: usize, sample_rate: f64, seed: u64) -> (Vec<f64>, f64) {
    let n = length;
    let df = sample_rate / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spectrum = vec![Complex::new(0.0, 0.0); n];
    let mut variance = 0.0;
    for k in 1..n.div_ceil(2) {
        let p = psd(k as f64 * df);
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        if p <= 0.0 {
            continue;
        }
        variance += p * df;
        let sigma = (p * sample_rate * n as f64 / 2.0).sqrt() / std::f64::consts::SQRT_2;
        spectrum[k] = Complex::new(sigma * a, sigma * b);
        spectrum[n - k] = spectrum[k].conj();
    }
    let fft = FftPlanner::new().plan_fft_inverse(n);
    fft.process(&mut spectrum);
    let scale = 1.0 / n as f64;
    (spectrum.into_iter().map(|c| c.re * scale).collect(), variance)
}
