//! Software detection electronics: balanced-detector output, lock-in
//! demodulation and spectrum analysis.

pub mod lockin;
pub mod spectrum;

use std::f64::consts::PI;

use num_complex::Complex;
use thiserror::Error;

use crate::noise::NoiseSeries;

pub use lockin::{auto_phase, lockin_demodulate, LockinOutput};
pub use spectrum::{noise_floor_estimate, psd_estimate, sa_trace, FloorEstimate, Spectrum, SpectrumScale, Window};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("series length mismatch: signal {signal}, noise {noise}")]
    LengthMismatch { signal: usize, noise: usize },
    #[error("sample-rate mismatch: {a} Hz vs {b} Hz")]
    RateMismatch { a: f64, b: f64 },
    #[error("reference {freq} Hz is at or above Nyquist ({nyquist} Hz)")]
    AboveNyquist { freq: f64, nyquist: f64 },
    #[error("lock-in filter order must be 1..=4, got {0}")]
    BadOrder(u32),
    #[error("lock-in time constant must be > 0, got {0}")]
    BadTimeConstant(f64),
    #[error("insufficient data: need {required} samples, have {available}")]
    InsufficientData { required: usize, available: usize },
    #[error("sweep has no zero crossing of the in-phase output")]
    NoZeroCrossing,
    #[error("only {have} bins outside the carrier exclusion, need at least {need}")]
    TooFewBins { have: usize, need: usize },
    #[error("analyzer span [{lo}, {hi}] Hz exceeds Nyquist ({nyquist} Hz)")]
    SpanBeyondNyquist { lo: f64, hi: f64, nyquist: f64 },
    #[error("series contains non-finite samples")]
    NonFinite,
}

/// Where a detector record came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

/// Balanced photodetector output, V.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSeries {
    pub sample_rate: f64,
    /// Absolute time of the first sample, s; the lock-in reference is
    /// referred to it.
    pub start_time: f64,
    pub samples: Vec<f64>,
    pub provenance: Provenance,
}

/// `v(t) = gain·(φ(t) + n(t))`.
pub fn assemble_detector_output(
    signal: &[f64],
    signal_rate: f64,
    start_time: f64,
    noise: &NoiseSeries,
    gain: f64,
    provenance: Provenance,
) -> Result<DetectorSeries, DspError> {
    if signal.len() != noise.samples.len() {
        return Err(DspError::LengthMismatch { signal: signal.len(), noise: noise.samples.len() });
    }
    if signal_rate != noise.sample_rate {
        return Err(DspError::RateMismatch { a: signal_rate, b: noise.sample_rate });
    }
    let samples: Vec<f64> = signal.iter().zip(&noise.samples).map(|(s, n)| gain * (s + n)).collect();
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(DspError::NonFinite);
    }
    Ok(DetectorSeries { sample_rate: signal_rate, start_time, samples, provenance })
}

/// Complex amplitude `a` of the tone at `freq_hz`, such that the series
/// contains `Re(a·e^{iωt})` with t counted from the first sample. The mean
/// is removed and the projection runs over the largest whole number of
/// periods.
pub fn tone_phasor(samples: &[f64], sample_rate: f64, freq_hz: f64) -> Complex<f64> {
    let per_period = sample_rate / freq_hz;
    let periods = (samples.len() as f64 / per_period).floor().max(1.0);
    let n = ((periods * per_period).round() as usize).clamp(1, samples.len());
    let data = &samples[..n];
    let mean = data.iter().sum::<f64>() / n as f64;
    let step = freq_hz / sample_rate;
    let acc: Complex<f64> = data
        .iter()
        .enumerate()
        .map(|(i, &v)| Complex::from_polar(v - mean, -2.0 * PI * (i as f64 * step).fract()))
        .sum();
    2.0 * acc / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{synthesize_probe_noise, NoiseModel};
    use approx::assert_relative_eq;

    fn noise(len: usize, fs: f64, asd: f64, seed: u64) -> NoiseSeries {
        synthesize_probe_noise(&NoiseModel::coherent(asd), len, fs, seed)
    }

    #[test]
    fn zero_noise_gives_scaled_signal_and_vice_versa() {
        let fs = 1e3;
        let signal: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let mut quiet = noise(100, fs, 1.0, 1);
        quiet.samples.iter_mut().for_each(|v| *v = 0.0);
        let d = assemble_detector_output(&signal, fs, 0.0, &quiet, 3.0, Provenance::default()).unwrap();
        assert!(d.samples.iter().zip(&signal).all(|(v, s)| *v == 3.0 * s));

        let n = noise(100, fs, 1.0, 2);
        let d = assemble_detector_output(&[0.0; 100], fs, 0.0, &n, 2.0, Provenance::default()).unwrap();
        assert!(d.samples.iter().zip(&n.samples).all(|(v, s)| *v == 2.0 * s));
    }

    #[test]
    fn mismatches_are_rejected() {
        let n = noise(10, 1e3, 1.0, 1);
        assert!(matches!(
            assemble_detector_output(&[0.0; 9], 1e3, 0.0, &n, 1.0, Provenance::default()),
            Err(DspError::LengthMismatch { .. })
        ));
        assert!(matches!(
            assemble_detector_output(&[0.0; 10], 2e3, 0.0, &n, 1.0, Provenance::default()),
            Err(DspError::RateMismatch { .. })
        ));
    }

    #[test]
    fn independent_variances_add() {
        let fs = 1e4;
        let a = noise(1_000_000, fs, 1e-2, 5);
        let b = noise(1_000_000, fs, 2e-2, 6);
        let d = assemble_detector_output(&a.samples, fs, 0.0, &b, 1.0, Provenance::default()).unwrap();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        assert_relative_eq!(var(&d.samples), var(&a.samples) + var(&b.samples), max_relative = 0.01);
    }

    #[test]
    fn tone_phasor_recovers_amplitude_and_phase() {
        let fs = 1e4;
        let x: Vec<f64> = (0..10_000).map(|i| 0.3 + 1.7 * (2.0 * PI * 123.0 * i as f64 / fs + 0.4).cos()).collect();
        let a = tone_phasor(&x, fs, 123.0);
        assert_relative_eq!(a.norm(), 1.7, max_relative = 1e-3);
        assert_relative_eq!(a.arg(), 0.4, epsilon = 1e-3);
    }
}
