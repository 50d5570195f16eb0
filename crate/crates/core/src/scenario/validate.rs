//! Self-validation report. Never fails: every problem, including an invalid
//! configuration, becomes a failing check.

use std::f64::consts::PI;

use num_complex::Complex;

use super::{Outcome, ScenarioKind, Table};
use crate::config::{validate_config, ExperimentConfig, ValidatedConfig};
use crate::dsp::{
    lockin_demodulate, psd_estimate, spectrum::required_length, tone_phasor, DetectorSeries, Provenance, Window,
};
use crate::noise::{loss_propagated_variance, synthesize_probe_noise, NoiseModel};
use crate::physics::{db_to_variance, variance_to_db};
use crate::spin::{integrate_unchecked, rwa_steady_state, BlochModel, Sampling, SpinState};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub measured: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn within(name: &'static str, measured: f64, expected: f64, tolerance: f64) -> Self {
        Check { name, measured, expected, tolerance, passed: (measured - expected).abs() <= tolerance }
    }
}

pub fn validate(cfg: &ExperimentConfig) -> Outcome {
    let mut out = Outcome::new(ScenarioKind::Validate, cfg);
    let mut checks = vec![loss_arithmetic()];
    match validate_config(cfg) {
        Ok(v) => {
            checks.push(Check::within("config_valid", 1.0, 1.0, 0.0));
            checks.extend(integrator_vs_rwa(&v));
            checks.extend(lockin_calibration(&v));
            checks.push(psd_parseval(&v));
            checks.push(lockin_rolloff(&v));
            checks.push(noise_determinism(&v));
        }
        Err(e) => {
            checks.push(Check::within("config_valid", 0.0, 1.0, 0.0));
            out.put("config_issues", e.issues().len() as f64);
        }
    }
    out.passed = checks.iter().all(|c| c.passed);
    let failed = checks.iter().filter(|c| !c.passed).count();
    out.put("checks", checks.len() as f64);
    out.put("failed", failed as f64);
    let mut t = out.table_meta(
        Table::new("validate.tsv", &["passed", "measured", "expected", "tolerance"]).labelled("check"),
        "per check",
    );
    for c in &checks {
        out.summary.push((format!("{}_measured", c.name), c.measured));
        t.push_labelled(c.name, vec![f64::from(u8::from(c.passed)), c.measured, c.expected, c.tolerance]);
    }
    out.tables.push(t);
    out
}

fn loss_arithmetic() -> Check {
    let v = loss_propagated_variance(db_to_variance(-1.9), 0.90);
    Check::within("loss_arithmetic_db", variance_to_db(v).unwrap_or(f64::NAN), -1.67, 0.01)
}

/// Co-rotating response of the configured integrator at the operating point
/// against the rotating-wave closed form: relative amplitude and phase.
fn integrator_vs_rwa(v: &ValidatedConfig) -> [Check; 2] {
    let c = v.config();
    let mut model = BlochModel::from_config(v);
    model.field.injection = None;
    let fs = c.detection.sample_rate_hz;
    let periods = 200.0;
    let records = (periods * fs / c.pump.mod_freq_hz).round() as usize;
    let sampling = Sampling::steady_state(&model, fs, c.detection.integrator_substeps as usize, records);
    let (amp_err, phase_err) = match integrate_unchecked(&model, SpinState::ZERO, sampling) {
        Ok(traj) => {
            let numeric = traj.corotating_phasor(c.pump.mod_freq_hz);
            let delta = v.derived().mod_omega - v.derived().larmor_omega;
            let rwa = rwa_steady_state(delta, model.relaxation, model.pump.fundamental_amplitude());
            let lag = model.pump.fundamental().arg() - numeric.arg();
            (
                (numeric.norm() - rwa.amplitude).abs() / rwa.amplitude,
                ((lag - rwa.phase + PI).rem_euclid(2.0 * PI) - PI).abs(),
            )
        }
        Err(_) => (f64::INFINITY, f64::INFINITY),
    };
    [
        Check {
            name: "integrator_rwa_amplitude",
            measured: amp_err,
            expected: 0.0,
            tolerance: 0.02,
            passed: amp_err <= 0.02,
        },
        Check {
            name: "integrator_rwa_phase_rad",
            measured: phase_err,
            expected: 0.0,
            tolerance: 0.02,
            passed: phase_err <= 0.02,
        },
    ]
}

fn tone_series(fs: f64, f: f64, amp: f64, phi0: f64, n: usize) -> DetectorSeries {
    let step = f / fs;
    DetectorSeries {
        sample_rate: fs,
        start_time: 0.0,
        samples: (0..n).map(|i| amp * (2.0 * PI * (i as f64 * step).fract() + phi0).cos()).collect(),
        provenance: Provenance::default(),
    }
}

/// A unit tone at the reference with a known phase must read back within
/// 0.1 % in amplitude and 1 mrad in phase.
fn lockin_calibration(v: &ValidatedConfig) -> [Check; 2] {
    let c = v.config();
    let det = &c.detection;
    let fs = det.sample_rate_hz;
    let tau = det.lockin_time_constant_s;
    let n = ((10.0 * f64::from(det.lockin_filter_order) + 4.0) * tau * fs).ceil() as usize;
    let phi0 = 0.5;
    let z = lockin_demodulate(
        &tone_series(fs, c.pump.mod_freq_hz, 1.0, phi0, n),
        c.pump.mod_freq_hz,
        0.0,
        tau,
        det.lockin_filter_order,
    )
    .map(|o| o.tail_mean((2.0 * tau * fs) as usize))
    .unwrap_or(Complex::new(f64::NAN, f64::NAN));
    [Check::within("lockin_amplitude", z.norm(), 1.0, 1e-3), Check::within("lockin_phase_rad", z.arg(), phi0, 1e-3)]
}

/// Integrated one-sided PSD against the sample variance.
fn psd_parseval(v: &ValidatedConfig) -> Check {
    let fs = v.config().detection.sample_rate_hz;
    let bw = v.config().detection.sa_rbw_hz;
    let len = required_length(fs, bw, 64);
    let noise = synthesize_probe_noise(&NoiseModel::coherent(v.derived().shot_asd), len, fs, 1);
    let x = &noise.samples;
    let mean = x.iter().sum::<f64>() / len as f64;
    let var = x.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / len as f64;
    let ratio = psd_estimate(x, fs, bw, 64, Window::Hann).map(|s| s.total_power() / var).unwrap_or(f64::NAN);
    Check::within("psd_parseval_ratio", ratio, 1.0, 0.01)
}

/// Locates the lock-in −3 dB point from offset tones and compares it with
/// the analog corner of the configured filter cascade.
fn lockin_rolloff(v: &ValidatedConfig) -> Check {
    let det = &v.config().detection;
    let (tau, order) = (det.lockin_time_constant_s, det.lockin_filter_order);
    let fs = 200.0 / tau;
    let f_ref = fs / 8.0;
    let expected = (2f64.powf(1.0 / f64::from(order)) - 1.0).sqrt() / (2.0 * PI * tau);
    let measure = |delta: f64| -> f64 {
        let settle = (10.0 * f64::from(order) * tau * fs).ceil() as usize;
        let n = settle + (((20.0 / delta) * fs).ceil() as usize);
        match lockin_demodulate(&tone_series(fs, f_ref + delta, 1.0, 0.0, n), f_ref, 0.0, tau, order) {
            Ok(o) => tone_phasor(&o.x[settle..], fs, delta).norm(),
            Err(_) => f64::NAN,
        }
    };
    let target = std::f64::consts::FRAC_1_SQRT_2;
    let (mut lo, mut hi) = (0.5 * expected, 2.0 * expected);
    let (mut m_lo, mut m_hi) = (measure(lo), measure(hi));
    if !(m_lo > target && m_hi < target) {
        return Check::within("lockin_corner_hz", f64::NAN, expected, 0.05 * expected);
    }
    for _ in 0..12 {
        let mid = (lo * hi).sqrt();
        let m = measure(mid);
        if m > target {
            (lo, m_lo) = (mid, m);
        } else {
            (hi, m_hi) = (mid, m);
        }
    }
    let t = (m_lo - target) / (m_lo - m_hi);
    let corner = lo + t * (hi - lo);
    Check::within("lockin_corner_hz", corner, expected, 0.05 * expected)
}

fn noise_determinism(v: &ValidatedConfig) -> Check {
    let model = NoiseModel::from_config(v, true);
    let a = synthesize_probe_noise(&model, 4096, v.config().detection.sample_rate_hz, 42);
    let b = synthesize_probe_noise(&model, 4096, v.config().detection.sample_rate_hz, 42);
    let same = a.samples.iter().zip(&b.samples).all(|(x, y)| x.to_bits() == y.to_bits());
    Check::within("noise_determinism", f64::from(u8::from(same)), 1.0, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        let out = validate(&ExperimentConfig::paper_default());
        let t = out.table("validate.tsv").unwrap();
        for (label, row) in t.labels.iter().zip(&t.rows) {
            assert_eq!(row[0], 1.0, "{label} failed: {row:?}");
        }
        assert!(out.passed);
    }

    #[test]
    fn coarse_integrator_is_caught() {
        let mut cfg = ExperimentConfig::paper_default();
        cfg.detection.integrator_substeps = 1;
        let out = validate(&cfg);
        assert!(!out.passed);
        assert!(out.metric("integrator_rwa_amplitude_measured").unwrap() > 0.02);
    }

    #[test]
    fn invalid_config_is_reported_not_thrown() {
        let mut cfg = ExperimentConfig::paper_default();
        cfg.pump.duty = 0.0;
        let out = validate(&cfg);
        assert!(!out.passed);
        assert_eq!(out.metric("config_issues"), Some(1.0));
    }
}
