//! Welch power spectral density and a swept-analyzer emulation built on it.

use std::f64::consts::PI;

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::FftPlanner;

use super::DspError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            // Periodic Hann, so overlapping segments tile exactly.
            Window::Hann => (0..len).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos()).collect(),
            Window::Rectangular => vec![1.0; len],
        }
    }

    /// Equivalent noise bandwidth in bins.
    pub fn enbw_bins(self) -> f64 {
        match self {
            Window::Hann => 1.5,
            Window::Rectangular => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectrumScale {
    /// One-sided PSD, units²/Hz.
    Psd,
    /// One-sided ASD, units/√Hz.
    Asd,
    /// Power in the resolution bandwidth, dB relative to `reference` units².
    PowerDb { reference: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub values: Vec<f64>,
    pub scale: SpectrumScale,
    /// Bin spacing, Hz.
    pub rbw: f64,
    pub vbw: Option<f64>,
    pub averages: usize,
    pub window: Window,
}

impl Spectrum {
    pub fn bin_width(&self) -> f64 {
        self.rbw
    }

    /// Square root of a PSD.
    pub fn to_asd(&self) -> Spectrum {
        assert_eq!(self.scale, SpectrumScale::Psd, "to_asd needs a PSD");
        Spectrum { values: self.values.iter().map(|v| v.sqrt()).collect(), scale: SpectrumScale::Asd, ..self.clone() }
    }

    /// Integrated power in a window of `halfwidth` bins around `freq`.
    pub fn band_power(&self, freq: f64, halfwidth: usize) -> f64 {
        assert_eq!(self.scale, SpectrumScale::Psd, "band_power needs a PSD");
        let k = (freq / self.rbw).round() as usize;
        let lo = k.saturating_sub(halfwidth);
        let hi = (k + halfwidth).min(self.values.len() - 1);
        self.values[lo..=hi].iter().sum::<f64>() * self.rbw
    }

    /// Total power (integral over all bins).
    pub fn total_power(&self) -> f64 {
        assert_eq!(self.scale, SpectrumScale::Psd, "total_power needs a PSD");
        self.values.iter().sum::<f64>() * self.rbw
    }
}

/// Samples needed for `averages` half-overlapped segments at the given
/// segment bandwidth.
pub fn required_length(sample_rate: f64, segment_bandwidth: f64, averages: usize) -> usize {
    let len = segment_length(sample_rate, segment_bandwidth);
    len + averages.saturating_sub(1) * (len / 2)
}

fn segment_length(sample_rate: f64, segment_bandwidth: f64) -> usize {
    ((sample_rate / segment_bandwidth).round() as usize).max(2)
}

/// One-sided Welch PSD with 50 % overlap over exactly `averages` segments of
/// length `round(fs / segment_bandwidth)`. The mean of the analyzed span is
/// removed first.
pub fn psd_estimate(
    series: &[f64],
    sample_rate: f64,
    segment_bandwidth: f64,
    averages: usize,
    window: Window,
) -> Result<Spectrum, DspError> {
    let averages = averages.max(1);
    let len = segment_length(sample_rate, segment_bandwidth);
    let hop = len / 2;
    let required = required_length(sample_rate, segment_bandwidth, averages);
    if series.len() < required {
        return Err(DspError::InsufficientData { required, available: series.len() });
    }
    let data = &series[..required];
    if data.iter().any(|v| !v.is_finite()) {
        return Err(DspError::NonFinite);
    }
    let mean = data.iter().sum::<f64>() / required as f64;
    let w = window.coefficients(len);
    let w_power: f64 = w.iter().map(|v| v * v).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(len);
    let bins = len / 2 + 1;

    let periodograms: Vec<Vec<f64>> = (0..averages)
        .into_par_iter()
        .map(|s| {
            let seg = &data[s * hop..s * hop + len];
            let mut buf: Vec<Complex<f64>> =
                seg.iter().zip(&w).map(|(v, wi)| Complex::new((v - mean) * wi, 0.0)).collect();
            fft.process(&mut buf);
            buf[..bins].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect();

    let mut acc = vec![0.0; bins];
    for p in &periodograms {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    let norm = 1.0 / (sample_rate * w_power * averages as f64);
    let values: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let edge = k == 0 || (len % 2 == 0 && k == len / 2);
            v * norm * if edge { 1.0 } else { 2.0 }
        })
        .collect();
    let df = sample_rate / len as f64;
    Ok(Spectrum {
        freqs: (0..bins).map(|k| k as f64 * df).collect(),
        values,
        scale: SpectrumScale::Psd,
        rbw: df,
        vbw: None,
        averages,
        window,
    })
}

/// Analyzer display: power within each resolution bandwidth, in dB relative
/// to 1 V², over `center ± span/2`. Video averaging is emulated by averaging
/// `round(rbw / vbw)` periodograms.
pub fn sa_trace(
    series: &[f64],
    sample_rate: f64,
    rbw: f64,
    vbw: f64,
    center: f64,
    span: f64,
) -> Result<Spectrum, DspError> {
    let (lo, hi) = (center - span / 2.0, center + span / 2.0);
    if lo < 0.0 || hi >= sample_rate / 2.0 {
        return Err(DspError::SpanBeyondNyquist { lo, hi, nyquist: sample_rate / 2.0 });
    }
    let averages = ((rbw / vbw).round() as usize).max(1);
    let psd = psd_estimate(series, sample_rate, rbw, averages, Window::Hann)?;
    let enbw_hz = Window::Hann.enbw_bins() * psd.rbw;
    let reference = 1.0;
    let (freqs, values) = psd
        .freqs
        .iter()
        .zip(&psd.values)
        .filter(|(f, _)| **f >= lo && **f <= hi)
        .map(|(f, p)| (*f, 10.0 * (p * enbw_hz / reference).log10()))
        .unzip();
    Ok(Spectrum {
        freqs,
        values,
        scale: SpectrumScale::PowerDb { reference },
        rbw: psd.rbw,
        vbw: Some(vbw),
        averages,
        window: Window::Hann,
    })
}

/// Robust floor of a spectrum away from a carrier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorEstimate {
    /// Median of the retained bins, in the spectrum's units.
    pub floor: f64,
    /// Normal-consistent MAD of the retained bins.
    pub spread: f64,
    /// Standard error of the median.
    pub std_error: f64,
    pub bins: usize,
}

pub const MIN_FLOOR_BINS: usize = 10;

/// Median over the bins farther than `exclusion` Hz from `carrier`.
pub fn noise_floor_estimate(spec: &Spectrum, carrier: f64, exclusion: f64) -> Result<FloorEstimate, DspError> {
    let mut vals: Vec<f64> = spec
        .freqs
        .iter()
        .zip(&spec.values)
        .filter(|(f, _)| (**f - carrier).abs() > exclusion)
        .map(|(_, v)| *v)
        .collect();
    if vals.len() < MIN_FLOOR_BINS {
        return Err(DspError::TooFewBins { have: vals.len(), need: MIN_FLOOR_BINS });
    }
    let floor = median(&mut vals);
    let mut dev: Vec<f64> = vals.iter().map(|v| (v - floor).abs()).collect();
    let spread = 1.4826 * median(&mut dev);
    let bins = vals.len();
    Ok(FloorEstimate { floor, spread, std_error: 1.2533 * spread / (bins as f64).sqrt(), bins })
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{synthesize_probe_noise, NoiseModel};
    use approx::assert_relative_eq;

    fn white(len: usize, fs: f64, asd: f64, seed: u64) -> Vec<f64> {
        synthesize_probe_noise(&NoiseModel::coherent(asd), len, fs, seed).samples
    }

    #[test]
    fn parseval_holds() {
        let fs = 1e4;
        let x = white(200_000, fs, 1e-3, 4);
        for window in [Window::Hann, Window::Rectangular] {
            let spec = psd_estimate(&x, fs, 10.0, 300, window).unwrap();
            let n = required_length(fs, 10.0, 300);
            let m = x[..n].iter().sum::<f64>() / n as f64;
            let var = x[..n].iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
            assert_relative_eq!(spec.total_power(), var, max_relative = 0.01);
        }
    }

    #[test]
    fn tone_power_is_recovered() {
        let fs = 1e4;
        let x: Vec<f64> = (0..50_000).map(|i| 0.5 * (2.0 * PI * 1234.5 * i as f64 / fs).sin()).collect();
        let spec = psd_estimate(&x, fs, 10.0, 20, Window::Hann).unwrap();
        assert_relative_eq!(spec.band_power(1234.5, 4), 0.125, max_relative = 1e-3);
    }

    #[test]
    fn white_floor_is_independent_of_rbw() {
        let fs = 1e5;
        let asd = 1e-4;
        let x = white(2_000_000, fs, asd, 8);
        let floors: Vec<f64> = [100.0, 1000.0]
            .iter()
            .map(|&bw| {
                let spec = psd_estimate(&x, fs, bw, 200, Window::Hann).unwrap();
                let mean = spec.values[1..].iter().sum::<f64>() / (spec.values.len() - 1) as f64;
                10.0 * mean.log10()
            })
            .collect();
        assert!((floors[0] - floors[1]).abs() < 0.1, "{floors:?}");
        assert!((floors[0] - 10.0 * (asd * asd).log10()).abs() < 0.1);
    }

    #[test]
    fn flicker_slope_is_minus_one() {
        let fs = 1e4;
        let model = NoiseModel {
            shot_asd: 1e-9,
            flicker_corner: 2000.0,
            flicker_asd_at_corner: 1e-3,
            flicker_center: 0.0,
            ..NoiseModel::coherent(1e-9)
        };
        let x = synthesize_probe_noise(&model, 1_000_000, fs, 21).samples;
        let spec = psd_estimate(&x, fs, 2.0, 200, Window::Hann).unwrap();
        let pts: Vec<(f64, f64)> = spec
            .freqs
            .iter()
            .zip(&spec.values)
            .filter(|(f, _)| **f >= 10.0 && **f <= 200.0)
            .map(|(f, v)| (f.log10(), v.log10()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + 1.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn sa_trace_reports_power_per_rbw() {
        let fs = 1e5;
        let asd = 1e-3;
        let x = white(required_length(fs, 1000.0, 100), fs, asd, 2);
        let tr = sa_trace(&x, fs, 1000.0, 10.0, 20_000.0, 10_000.0).unwrap();
        assert_eq!(tr.averages, 100);
        assert_eq!(tr.vbw, Some(10.0));
        assert!(tr.freqs.first().unwrap() >= &15_000.0 && tr.freqs.last().unwrap() <= &25_000.0);
        let est = noise_floor_estimate(&tr, 20_000.0, 500.0).unwrap();
        let expected = 10.0 * (asd * asd * 1.5 * 1000.0).log10();
        assert!((est.floor - expected).abs() < 0.1, "{} vs {expected}", est.floor);
    }

    #[test]
    fn doubling_probe_power_lifts_carrier_6db_and_floor_3db() {
        let (fs, f0, rbw) = (1e5, 20_000.0, 1000.0);
        let len = required_length(fs, rbw, 50);
        let rad_noise = white(len, fs, 1e-3, 9);
        let trace = |power: f64| {
            // Gain ∝ P on a fixed rotation; shot noise in rad ∝ 1/√P.
            let x: Vec<f64> = rad_noise
                .iter()
                .enumerate()
                .map(|(i, n)| power * (1.0 * (2.0 * PI * f0 * i as f64 / fs).cos() + n / power.sqrt()))
                .collect();
            let tr = sa_trace(&x, fs, rbw, 20.0, f0, 30_000.0).unwrap();
            let peak = tr.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (peak, noise_floor_estimate(&tr, f0, 2_500.0).unwrap().floor)
        };
        let (p1, n1) = trace(1.0);
        let (p2, n2) = trace(2.0);
        let (six, three) = (20.0 * 2f64.log10(), 10.0 * 2f64.log10());
        assert!((p2 - p1 - six).abs() < 0.01, "carrier moved {}", p2 - p1);
        assert!((n2 - n1 - three).abs() < 0.01, "floor moved {}", n2 - n1);
    }

    #[test]
    fn sa_span_must_fit_below_nyquist() {
        let x = vec![0.0; 10_000];
        assert!(matches!(sa_trace(&x, 1e4, 100.0, 100.0, 4000.0, 3000.0), Err(DspError::SpanBeyondNyquist { .. })));
    }

    #[test]
    fn floor_ignores_carrier_bins() {
        let spec = Spectrum {
            freqs: (0..101).map(|i| i as f64).collect(),
            values: (0..101).map(|i| if i == 50 { 40.0 } else { -100.0 }).collect(),
            scale: SpectrumScale::PowerDb { reference: 1.0 },
            rbw: 1.0,
            vbw: Some(1.0),
            averages: 1,
            window: Window::Hann,
        };
        let est = noise_floor_estimate(&spec, 50.0, 2.0).unwrap();
        assert_eq!(est.floor, -100.0);
        assert_eq!(est.spread, 0.0);
        assert!(matches!(noise_floor_estimate(&spec, 50.0, 49.0), Err(DspError::TooFewBins { .. })));
    }

    #[test]
    fn short_input_is_rejected() {
        let err = psd_estimate(&[0.0; 100], 1e3, 10.0, 4, Window::Hann).unwrap_err();
        assert_eq!(err, DspError::InsufficientData { required: 250, available: 100 });
    }
}
