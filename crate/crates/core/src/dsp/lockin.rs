//! Dual-phase lock-in amplifier.
//!
//! Outputs report tone amplitude, not RMS: an input `A·cos(2πf t + φ₀)`
//! settles to `X = A·cos(φ₀ − phase)`, `Y = A·sin(φ₀ − phase)`.

use std::f64::consts::PI;

use num_complex::Complex;

use super::{DetectorSeries, DspError};

#[derive(Debug, Clone, PartialEq)]
pub struct LockinOutput {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub sample_rate: f64,
    pub ref_freq: f64,
    pub phase: f64,
    pub time_constant: f64,
    pub filter_order: u32,
}

impl LockinOutput {
    /// Output samples affected by the filter start-up: ten time constants
    /// per pole.
    pub fn settle_samples(&self) -> usize {
        (10.0 * self.time_constant * f64::from(self.filter_order) * self.sample_rate).ceil() as usize
    }

    /// Same outputs as if demodulated with `phase + delta`.
    pub fn rotated(&self, delta: f64) -> LockinOutput {
        let rot = Complex::from_polar(1.0, -delta);
        let (x, y) = self
            .x
            .iter()
            .zip(&self.y)
            .map(|(&x, &y)| {
                let z = Complex::new(x, y) * rot;
                (z.re, z.im)
            })
            .unzip();
        LockinOutput { x, y, phase: self.phase + delta, ..self.clone() }
    }

    /// Drops the first `n` samples.
    pub fn skip(&self, n: usize) -> LockinOutput {
        let n = n.min(self.x.len());
        LockinOutput { x: self.x[n..].to_vec(), y: self.y[n..].to_vec(), ..self.clone() }
    }

    /// Boxcar average over blocks of `factor` samples.
    pub fn decimate(&self, factor: usize) -> LockinOutput {
        let factor = factor.max(1);
        let avg =
            |v: &[f64]| -> Vec<f64> { v.chunks_exact(factor).map(|c| c.iter().sum::<f64>() / factor as f64).collect() };
        LockinOutput { x: avg(&self.x), y: avg(&self.y), sample_rate: self.sample_rate / factor as f64, ..self.clone() }
    }

    /// Mean of (X, Y) over the last `n` samples.
    pub fn tail_mean(&self, n: usize) -> Complex<f64> {
        let n = n.clamp(1, self.x.len());
        let start = self.x.len() - n;
        let sx: f64 = self.x[start..].iter().sum();
        let sy: f64 = self.y[start..].iter().sum();
        Complex::new(sx, sy) / n as f64
    }
}

/// Demodulates `series` at `ref_freq` with a cascade of `order` single-pole
/// low-pass stages of time constant `time_constant`. Each stage starts from
/// the first mixer sample.
pub fn lockin_demodulate(
    series: &DetectorSeries,
    ref_freq: f64,
    phase: f64,
    time_constant: f64,
    order: u32,
) -> Result<LockinOutput, DspError> {
    let fs = series.sample_rate;
    if ref_freq >= fs / 2.0 {
        return Err(DspError::AboveNyquist { freq: ref_freq, nyquist: fs / 2.0 });
    }
    if !(1..=4).contains(&order) {
        return Err(DspError::BadOrder(order));
    }
    if time_constant <= 0.0 {
        return Err(DspError::BadTimeConstant(time_constant));
    }
    let n = series.samples.len();
    let alpha = 1.0 - (-1.0 / (fs * time_constant)).exp();
    let step = ref_freq / fs;
    let base = (ref_freq * series.start_time).fract();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut state = [Complex::new(0.0, 0.0); 4];
    for (i, &v) in series.samples.iter().enumerate() {
        let cycles = base + (i as f64 * step).fract();
        let mixed = Complex::from_polar(2.0 * v, -(2.0 * PI * cycles + phase));
        if i == 0 {
            state = [mixed; 4];
        }
        let mut input = mixed;
        for s in state.iter_mut().take(order as usize) {
            *s += alpha * (input - *s);
            input = *s;
        }
        x.push(input.re);
        y.push(input.im);
    }
    Ok(LockinOutput { x, y, sample_rate: fs, ref_freq, phase, time_constant, filter_order: order })
}

/// Magnitude response of the lock-in low-pass at `f` Hz (continuous-time).
pub fn lowpass_magnitude(f: f64, time_constant: f64, order: u32) -> f64 {
    (1.0 + (2.0 * PI * f * time_constant).powi(2)).powf(-f64::from(order) / 2.0)
}

/// Phase that maximizes the in-phase slope through a resonance, given the
/// outputs `(x, y)` of a field sweep demodulated at some phase `p0`. The
/// returned value is relative to `p0`, so demodulating at `p0 + result`
/// (or rotating by `result`) gives the steepest X.
///
/// The resonance center is taken where |dZ/dB| is largest; the optimum is
/// the argument of dZ/dB there, which is exact rather than grid-limited.
pub fn auto_phase(b: &[f64], x: &[f64], y: &[f64]) -> Result<f64, DspError> {
    let n = b.len();
    if n < 3 || x.len() != n || y.len() != n {
        return Err(DspError::InsufficientData { required: 3, available: n.min(x.len()).min(y.len()) });
    }
    let z: Vec<Complex<f64>> = x.iter().zip(y).map(|(&a, &b)| Complex::new(a, b)).collect();
    let (center, slope) = (1..n - 1)
        .map(|i| (i, (z[i + 1] - z[i - 1]) / (b[i + 1] - b[i - 1])))
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .expect("n >= 3");
    let phase = slope.arg();
    let rot = Complex::from_polar(1.0, -phase);
    let projected: Vec<f64> = z.iter().map(|v| (v * rot).re).collect();
    if zero_crossing_near(&projected, center).is_none() {
        return Err(DspError::NoZeroCrossing);
    }
    Ok(phase)
}

/// Index `i` of the sign change between `v[i]` and `v[i+1]` closest to
/// `center`.
pub fn zero_crossing_near(v: &[f64], center: usize) -> Option<usize> {
    let crosses = |i: usize| (v[i] <= 0.0 && v[i + 1] > 0.0) || (v[i] >= 0.0 && v[i + 1] < 0.0);
    let n = v.len();
    if n < 2 {
        return None;
    }
    let center = center.min(n - 2);
    for d in 0..n {
        if center >= d && crosses(center - d) {
            return Some(center - d);
        }
        if center + d < n - 1 && crosses(center + d) {
            return Some(center + d);
        }
        if center < d && center + d >= n - 1 {
            break;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{tone_phasor, Provenance};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tone(fs: f64, f: f64, amp: f64, phi0: f64, n: usize) -> DetectorSeries {
        DetectorSeries {
            sample_rate: fs,
            start_time: 0.0,
            samples: (0..n).map(|i| amp * (2.0 * PI * f * i as f64 / fs + phi0).cos()).collect(),
            provenance: Provenance::default(),
        }
    }

    #[test]
    fn calibration_tone_in_phase_and_quadrature() {
        let (fs, f, tau) = (1.0e6, 50.0e3, 1.0e-3);
        let n = (12.0 * tau * fs) as usize;
        let out = lockin_demodulate(&tone(fs, f, 0.7, 0.0, n), f, 0.0, tau, 1).unwrap();
        let z = out.tail_mean(1000);
        assert_relative_eq!(z.re, 0.7, max_relative = 1e-3);
        assert!(z.im.abs() < 0.7e-3);

        let out = lockin_demodulate(&tone(fs, f, 0.7, PI / 2.0, n), f, 0.0, tau, 1).unwrap();
        let z = out.tail_mean(1000);
        assert!(z.re.abs() < 0.7e-3);
        assert_relative_eq!(z.im, 0.7, max_relative = 1e-3);

        let out = lockin_demodulate(&tone(fs, f, 0.7, 1.1, n), f, 0.3, tau, 1).unwrap();
        let z = out.tail_mean(1000);
        assert_relative_eq!(z.norm(), 0.7, max_relative = 1e-3);
        assert_relative_eq!(z.arg(), 0.8, epsilon = 1e-3);
    }

    #[test]
    fn offset_tone_follows_pole_response() {
        let (fs, f, tau) = (1.0e6, 50.0e3, 300e-6);
        for order in 1..=4 {
            for delta in [100.0, 531.0, 1500.0] {
                let n = (0.1 * fs) as usize;
                let out = lockin_demodulate(&tone(fs, f + delta, 1.0, 0.0, n), f, 0.0, tau, order).unwrap();
                let settled = out.skip(out.settle_samples());
                let measured = tone_phasor(&settled.x, fs, delta).norm();
                let expected = lowpass_magnitude(delta, tau, order);
                assert_relative_eq!(measured, expected, max_relative = 0.01);
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let s = tone(1e3, 10.0, 1.0, 0.0, 10);
        assert!(matches!(lockin_demodulate(&s, 600.0, 0.0, 1.0, 1), Err(DspError::AboveNyquist { .. })));
        assert!(matches!(lockin_demodulate(&s, 10.0, 0.0, 1.0, 5), Err(DspError::BadOrder(5))));
        assert!(matches!(lockin_demodulate(&s, 10.0, 0.0, 0.0, 1), Err(DspError::BadTimeConstant(_))));
    }

    #[test]
    fn decimation_and_rotation() {
        let out = LockinOutput {
            x: vec![1.0, 3.0, 5.0, 7.0, 9.0],
            y: vec![0.0; 5],
            sample_rate: 10.0,
            ref_freq: 1.0,
            phase: 0.0,
            time_constant: 1.0,
            filter_order: 1,
        };
        let d = out.decimate(2);
        assert_eq!(d.x, vec![2.0, 6.0]);
        assert_eq!(d.sample_rate, 5.0);
        let r = out.rotated(PI / 2.0);
        assert_relative_eq!(r.y[1], -3.0, epsilon = 1e-12);
        assert!(r.x[1].abs() < 1e-12);
    }

    fn lorentzian_sweep(rotation: f64, dispersive_only: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let b: Vec<f64> = (-100..=100).map(|i| i as f64 * 0.01).collect();
        let rot = Complex::from_polar(1.0, rotation);
        let (x, y) = b
            .iter()
            .map(|&d| {
                let z = if dispersive_only {
                    Complex::new(d / (0.04 + d * d), 0.0)
                } else {
                    Complex::new(d, 0.2) / (0.04 + d * d)
                };
                let z = z * rot;
                (z.re, z.im)
            })
            .unzip();
        (b, x, y)
    }

    #[test]
    fn auto_phase_aligns_dispersive_signal() {
        let (b, x, y) = lorentzian_sweep(0.0, true);
        let p = auto_phase(&b, &x, &y).unwrap();
        assert!(p.sin().abs() < 1e-3, "phase {p}");
        let (b, x, y) = lorentzian_sweep(0.0, false);
        let p = auto_phase(&b, &x, &y).unwrap();
        assert!(p.sin().abs() < 1e-3, "phase {p}");
    }

    #[test]
    fn auto_phase_is_equivariant() {
        for phi0 in [0.3, -1.2, 2.5] {
            let (b, x, y) = lorentzian_sweep(phi0, false);
            let p = auto_phase(&b, &x, &y).unwrap();
            let diff = (p - phi0).rem_euclid(PI);
            assert!(diff < 1e-3 || PI - diff < 1e-3, "phi0 {phi0}: {p}");
        }
    }

    #[test]
    fn auto_phase_requires_crossing() {
        let b: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let x: Vec<f64> = b.iter().map(|v| 1.0 + v * v).collect();
        let y = vec![0.0; 20];
        assert_eq!(auto_phase(&b, &x, &y), Err(DspError::NoZeroCrossing));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn lockin_is_linear_and_phase_rotation_commutes(
            a in 0.1f64..10.0, p in -3.0f64..3.0, dp in -3.0f64..3.0, seed in 0u64..1000
        ) {
            let fs = 1e5;
            let mut s = tone(fs, 7e3, 1.0, 0.2, 5000);
            let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            for v in s.samples.iter_mut() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *v += ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
            }
            let base = lockin_demodulate(&s, 7e3, p, 1e-3, 2).unwrap();
            let scaled_in = DetectorSeries { samples: s.samples.iter().map(|v| a * v).collect(), ..s.clone() };
            let scaled = lockin_demodulate(&scaled_in, 7e3, p, 1e-3, 2).unwrap();
            for i in (0..5000).step_by(97) {
                prop_assert!((scaled.x[i] - a * base.x[i]).abs() <= 1e-12 * a.max(1.0) * (1.0 + base.x[i].abs()));
            }
            let direct = lockin_demodulate(&s, 7e3, p + dp, 1e-3, 2).unwrap();
            let rotated = base.rotated(dp);
            for i in (0..5000).step_by(97) {
                prop_assert!((direct.x[i] - rotated.x[i]).abs() < 1e-10);
                prop_assert!((direct.y[i] - rotated.y[i]).abs() < 1e-10);
            }
        }
    }
}
