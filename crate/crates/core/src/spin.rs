//! Ground-state spin dynamics under Larmor precession, relaxation and
//! stroboscopic optical pumping.
//!
//! The spin is a classical orientation vector with the pump along x̂, the
//! bias field along ẑ and the probe reading Sy:
//!
//! ```text
//! dS/dt = Ω_L(t) ẑ × S − Γ S + R(t) x̂
//! ```
//!
//! integrated with fixed-step RK4. [`rwa_steady_state`] gives the closed-form
//! co-rotating response used to check the integrator.

use std::f64::consts::PI;

use num_complex::Complex;
use thiserror::Error;

use crate::config::{PumpConfig, ValidatedConfig, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpinState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl SpinState {
    pub const ZERO: SpinState = SpinState { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        SpinState { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    fn axpy(&self, a: f64, k: &SpinState) -> SpinState {
        SpinState { x: self.x + a * k.x, y: self.y + a * k.y, z: self.z + a * k.z }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinTrajectory {
    /// Spacing between stored samples, s.
    pub dt: f64,
    pub start_time: f64,
    pub samples: Vec<SpinState>,
}

impl SpinTrajectory {
    pub fn time(&self, index: usize) -> f64 {
        self.start_time + index as f64 * self.dt
    }

    pub fn sy(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.y).collect()
    }

    /// Complex amplitude of the e^{+iωt} component of the transverse
    /// coherence Sx + iSy, averaged over the largest whole number of periods.
    pub fn corotating_phasor(&self, freq_hz: f64) -> Complex<f64> {
        let n = whole_period_len(self.samples.len(), self.dt, freq_hz);
        let mut acc = Complex::new(0.0, 0.0);
        for (i, s) in self.samples[..n].iter().enumerate() {
            let ph = -2.0 * PI * (freq_hz * self.time(i)).fract();
            acc += Complex::new(s.x, s.y) * Complex::from_polar(1.0, ph);
        }
        acc / n as f64
    }

    /// Complex amplitude `a` of the Sy fundamental, Sy ≈ Re(a·e^{iωt}).
    pub fn sy_fundamental(&self, freq_hz: f64) -> Complex<f64> {
        let n = whole_period_len(self.samples.len(), self.dt, freq_hz);
        let mut acc = Complex::new(0.0, 0.0);
        for (i, s) in self.samples[..n].iter().enumerate() {
            let ph = -2.0 * PI * (freq_hz * self.time(i)).fract();
            acc += Complex::from_polar(s.y, ph);
        }
        2.0 * acc / n as f64
    }
}

fn whole_period_len(len: usize, dt: f64, freq_hz: f64) -> usize {
    let per_period = 1.0 / (freq_hz * dt);
    let periods = (len as f64 / per_period).floor();
    if periods < 1.0 {
        len
    } else {
        ((periods * per_period).round() as usize).min(len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RwaSolution {
    pub amplitude: f64,
    /// Lag of the response behind the drive fundamental, rad.
    pub phase: f64,
    /// Ω_m − Ω_L, rad/s.
    pub detuning: f64,
}

/// Rotating-wave steady state of the transverse coherence driven by a pump
/// fundamental of amplitude `r1` at detuning `delta`.
pub fn rwa_steady_state(delta: f64, gamma: f64, r1: f64) -> RwaSolution {
    RwaSolution { amplitude: 0.5 * r1 / gamma.hypot(delta), phase: delta.atan2(gamma), detuning: delta }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PumpShape {
    Square { duty: f64 },
    Sine,
    Constant,
}

/// Time-dependent optical pumping rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpDrive {
    pub peak_rate: f64,
    pub freq_hz: f64,
    pub shape: PumpShape,
}

impl PumpDrive {
    pub fn from_config(pump: &PumpConfig, peak_rate: f64) -> Self {
        let shape = match pump.waveform {
            Waveform::Square => PumpShape::Square { duty: pump.duty },
            Waveform::Sine => PumpShape::Sine,
        };
        PumpDrive { peak_rate, freq_hz: pump.mod_freq_hz, shape }
    }

    #[inline]
    pub fn rate(&self, t: f64) -> f64 {
        match self.shape {
            PumpShape::Square { duty } => {
                if (t * self.freq_hz).rem_euclid(1.0) < duty {
                    self.peak_rate
                } else {
                    0.0
                }
            }
            PumpShape::Sine => 0.5 * self.peak_rate * (1.0 + (2.0 * PI * self.freq_hz * t).cos()),
            PumpShape::Constant => self.peak_rate,
        }
    }

    /// Mean rate over `[t − width/2, t + width/2]`. The integrator samples
    /// the pump through this so square-wave edges falling on a stage time
    /// are split evenly instead of being assigned to one side.
    #[inline]
    pub fn rate_averaged(&self, t: f64, width: f64) -> f64 {
        match self.shape {
            PumpShape::Square { duty } if width > 0.0 => {
                let on_time = |x: f64| x.floor() * duty + x.rem_euclid(1.0).min(duty);
                let half = 0.5 * width * self.freq_hz;
                let u = t * self.freq_hz;
                self.peak_rate * (on_time(u + half) - on_time(u - half)) / (2.0 * half)
            }
            _ => self.rate(t),
        }
    }

    /// Complex Fourier coefficient of e^{+iωt} in the rate waveform. The
    /// fundamental amplitude R1 is twice its modulus.
    pub fn fundamental(&self) -> Complex<f64> {
        match self.shape {
            PumpShape::Square { duty } => {
                let theta = 2.0 * PI * duty;
                self.peak_rate * (Complex::new(1.0, 0.0) - Complex::from_polar(1.0, -theta))
                    / Complex::new(0.0, 2.0 * PI)
            }
            PumpShape::Sine => Complex::new(0.25 * self.peak_rate, 0.0),
            PumpShape::Constant => Complex::new(0.0, 0.0),
        }
    }

    pub fn fundamental_amplitude(&self) -> f64 {
        2.0 * self.fundamental().norm()
    }
}

/// Pump rate of a configured pump at time `t`, s⁻¹.
pub fn pump_rate_waveform(t: f64, pump: &PumpConfig) -> f64 {
    PumpDrive::from_config(pump, pump.peak_rate).rate(t)
}

/// Bias field plus an optional sinusoidal calibration tone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldDrive {
    pub bias_gauss: f64,
    /// 2πγ, rad/(s·G).
    pub gyro: f64,
    /// `(amplitude G, frequency Hz)`.
    pub injection: Option<(f64, f64)>,
}

impl FieldDrive {
    #[inline]
    pub fn larmor_omega(&self, t: f64) -> f64 {
        let b = match self.injection {
            Some((amp, f)) => self.bias_gauss + amp * (2.0 * PI * f * t).sin(),
            None => self.bias_gauss,
        };
        self.gyro * b
    }

    /// Largest |Ω_L|/2π reached, Hz.
    pub fn max_larmor_hz(&self) -> f64 {
        let amp = self.injection.map_or(0.0, |(a, _)| a.abs());
        self.gyro * (self.bias_gauss.abs() + amp) / (2.0 * PI)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochModel {
    /// Γ, s⁻¹.
    pub relaxation: f64,
    pub field: FieldDrive,
    pub pump: PumpDrive,
}

impl BlochModel {
    pub fn from_config(cfg: &ValidatedConfig) -> Self {
        let c = cfg.config();
        let d = cfg.derived();
        let injection = match (c.field.injection_freq_hz, c.field.injection_amplitude_gauss) {
            (Some(f), a) if a > 0.0 => Some((a, f)),
            _ => None,
        };
        BlochModel {
            relaxation: c.cell.relaxation_rate,
            field: FieldDrive { bias_gauss: c.field.bias_gauss, gyro: d.gyro_omega_per_gauss, injection },
            pump: PumpDrive::from_config(&c.pump, d.pump_rate),
        }
    }

    pub fn with_bias(mut self, bias_gauss: f64) -> Self {
        self.field.bias_gauss = bias_gauss;
        self
    }

    /// Largest step satisfying the 20-steps-per-period rule, s.
    pub fn max_step(&self) -> f64 {
        1.0 / (20.0 * self.pump.freq_hz.max(self.field.max_larmor_hz()))
    }

    /// Time after which the free transient has decayed by e⁻¹⁰, s.
    pub fn transient_time(&self) -> f64 {
        10.0 / self.relaxation
    }

    #[inline]
    fn derivative(&self, t: f64, s: &SpinState, pump_window: f64) -> SpinState {
        let w = self.field.larmor_omega(t);
        let g = self.relaxation;
        SpinState { x: -w * s.y - g * s.x + self.pump.rate_averaged(t, pump_window), y: w * s.x - g * s.y, z: -g * s.z }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpinError {
    #[error("integration step {dt:e} s exceeds the limit {max:e} s (20 steps per fastest period)")]
    StepTooLarge { dt: f64, max: f64 },
    #[error("duration {duration:e} s is shorter than the transient window {required:e} s")]
    DurationTooShort { duration: f64, required: f64 },
    #[error("spin state became non-finite at step {step}")]
    NonFinite { step: usize },
}

/// Which integration steps end up in the trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    pub dt: f64,
    /// Store every n-th step.
    pub record_every: usize,
    /// Steps integrated before the first stored sample.
    pub skip: usize,
    pub records: usize,
}

impl Sampling {
    /// Detector-rate sampling after the model's transient window.
    pub fn steady_state(model: &BlochModel, sample_rate: f64, substeps: usize, records: usize) -> Self {
        let dt = 1.0 / (sample_rate * substeps as f64);
        let skip_samples = (model.transient_time() * sample_rate).ceil() as usize;
        Sampling { dt, record_every: substeps, skip: skip_samples * substeps, records }
    }
}

/// Integrates `model` from `initial`, enforcing the step-size rule.
pub fn integrate(model: &BlochModel, initial: SpinState, sampling: Sampling) -> Result<SpinTrajectory, SpinError> {
    let max = model.max_step();
    if sampling.dt > max * (1.0 + 1e-9) {
        return Err(SpinError::StepTooLarge { dt: sampling.dt, max });
    }
    integrate_unchecked(model, initial, sampling)
}

/// [`integrate`] without the step-size precondition; used by the
/// self-validation suite to measure what a too-coarse step does.
pub(crate) fn integrate_unchecked(
    model: &BlochModel,
    initial: SpinState,
    sampling: Sampling,
) -> Result<SpinTrajectory, SpinError> {
    let Sampling { dt, record_every, skip, records } = sampling;
    let record_every = record_every.max(1);
    let mut samples = Vec::with_capacity(records);
    let mut s = initial;
    let last = skip + records.saturating_sub(1) * record_every;
    let half = 0.5 * dt;
    for step in 0..=last {
        if step >= skip && (step - skip) % record_every == 0 {
            samples.push(s);
        }
        if step == last {
            break;
        }
        let t = step as f64 * dt;
        let k1 = model.derivative(t, &s, half);
        let k2 = model.derivative(t + half, &s.axpy(half, &k1), half);
        let k3 = model.derivative(t + half, &s.axpy(half, &k2), half);
        let k4 = model.derivative(t + dt, &s.axpy(dt, &k3), half);
        s = SpinState {
            x: s.x + dt / 6.0 * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x),
            y: s.y + dt / 6.0 * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y),
            z: s.z + dt / 6.0 * (k1.z + 2.0 * k2.z + 2.0 * k3.z + k4.z),
        };
        if !s.is_finite() {
            return Err(SpinError::NonFinite { step: step + 1 });
        }
    }
    Ok(SpinTrajectory { dt: dt * record_every as f64, start_time: skip as f64 * dt, samples })
}

/// Integrates a configured experiment from rest for `duration` seconds with
/// step `dt`, storing every step. With `discard_transient` only the samples
/// after 10/Γ are kept.
pub fn integrate_spin(
    cfg: &ValidatedConfig,
    duration: f64,
    dt: f64,
    discard_transient: bool,
) -> Result<SpinTrajectory, SpinError> {
    let model = BlochModel::from_config(cfg);
    let total = (duration / dt).round() as usize;
    let skip = if discard_transient {
        let required = model.transient_time();
        if duration < required {
            return Err(SpinError::DurationTooShort { duration, required });
        }
        (required / dt).ceil() as usize
    } else {
        0
    };
    let sampling = Sampling { dt, record_every: 1, skip, records: total - skip + 1 };
    integrate(&model, SpinState::ZERO, sampling)
}

/// Steady-state rotation under continuous pumping at the configured rate,
/// rad: κ·R·Ω_L/(Γ² + Ω_L²).
pub fn static_rotation_curve(b_grid: &[f64], cfg: &ValidatedConfig) -> Vec<f64> {
    let d = cfg.derived();
    let gamma = cfg.config().cell.relaxation_rate;
    b_grid
        .iter()
        .map(|&b| {
            let w = d.gyro_omega_per_gauss * b;
            d.coupling * d.pump_rate * w / (gamma * gamma + w * w)
        })
        .collect()
}

/// Probe rotation angle φ(t) = κ·Sy(t), rad.
pub fn rotation_timeseries(traj: &SpinTrajectory, coupling: f64) -> Vec<f64> {
    traj.samples.iter().map(|s| coupling * s.y).collect()
}
