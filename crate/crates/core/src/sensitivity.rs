//! From detector records to magnetic sensitivity: operating-point
//! calibration, frequency response and noise-equivalent field.

use num_complex::Complex;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::ValidatedConfig;
use crate::dsp::{
    self, assemble_detector_output,
    lockin::zero_crossing_near,
    lockin_demodulate, psd_estimate,
    spectrum::{median, required_length},
    DetectorSeries, DspError, LockinOutput, Provenance, Spectrum, Window,
};
use crate::noise::{derive_seed, synthesize_probe_noise, NoiseModel};
use crate::physics::PICOTESLA_PER_GAUSS;
use crate::spin::{integrate, BlochModel, Sampling, SpinError, SpinState, SpinTrajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Spin(#[from] SpinError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("response fit failed: {0}")]
    Fit(String),
    #[error("response is not linear in the injection amplitude: {deviation:.4} relative deviation")]
    NonLinear { deviation: f64 },
    #[error("{0}")]
    Numeric(String),
}

/// Steady-state lock-in output for one bias.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub bias_gauss: f64,
    pub x: f64,
    pub y: f64,
}

/// Noise-free lock-in outputs across a bias grid, demodulated at `phase`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSweep {
    pub phase: f64,
    pub points: Vec<SweepPoint>,
}

impl FieldSweep {
    pub fn bias(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.bias_gauss).collect()
    }

    pub fn x(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.x).collect()
    }

    pub fn y(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.y).collect()
    }

    /// Same sweep as if demodulated at `phase`.
    pub fn at_phase(&self, phase: f64) -> FieldSweep {
        let rot = Complex::from_polar(1.0, -(phase - self.phase));
        FieldSweep {
            phase,
            points: self
                .points
                .iter()
                .map(|p| {
                    let z = Complex::new(p.x, p.y) * rot;
                    SweepPoint { bias_gauss: p.bias_gauss, x: z.re, y: z.im }
                })
                .collect(),
        }
    }
}

/// Runs the spin model at the configured operating point (or `model`) for
/// `records` detector samples after the transient and returns the noise-free
/// rotation signal in volts together with its start time.
pub fn simulate_signal(cfg: &ValidatedConfig, model: &BlochModel, records: usize) -> Result<(Vec<f64>, f64), SimError> {
    let traj = simulate_trajectory(cfg, model, records)?;
    let scale = cfg.derived().coupling * cfg.derived().volts_per_rad;
    Ok((traj.samples.iter().map(|s| scale * s.y).collect(), traj.start_time))
}

pub fn simulate_trajectory(
    cfg: &ValidatedConfig,
    model: &BlochModel,
    records: usize,
) -> Result<SpinTrajectory, SimError> {
    let d = &cfg.config().detection;
    let sampling = Sampling::steady_state(model, d.sample_rate_hz, d.integrator_substeps as usize, records);
    Ok(integrate(model, SpinState::ZERO, sampling)?)
}

fn demodulate(cfg: &ValidatedConfig, series: &DetectorSeries, phase: f64) -> Result<LockinOutput, SimError> {
    let d = &cfg.config().detection;
    Ok(lockin_demodulate(
        series,
        cfg.config().pump.mod_freq_hz,
        phase,
        d.lockin_time_constant_s,
        d.lockin_filter_order,
    )?)
}

fn noiseless(cfg: &ValidatedConfig, samples: Vec<f64>, start_time: f64) -> DetectorSeries {
    DetectorSeries {
        sample_rate: cfg.config().detection.sample_rate_hz,
        start_time,
        samples,
        provenance: Provenance { config_hash: cfg.hash(), seed: cfg.config().detection.rng_seed },
    }
}

/// Lock-in settling window plus two time constants of averaging, in
/// detector samples.
fn sweep_records(cfg: &ValidatedConfig) -> (usize, usize) {
    let d = &cfg.config().detection;
    let tau_samples = d.lockin_time_constant_s * d.sample_rate_hz;
    let settle = (10.0 * f64::from(d.lockin_filter_order) * tau_samples).ceil() as usize;
    let average = (2.0 * tau_samples).ceil() as usize;
    (settle + average, average)
}

/// Steady lock-in (X, Y) at each bias in `b_grid`, demodulated at `phase`.
/// Points run in parallel; results keep grid order.
pub fn field_sweep(cfg: &ValidatedConfig, b_grid: &[f64], phase: f64) -> Result<FieldSweep, SimError> {
    let base = BlochModel::from_config(cfg);
    let (records, average) = sweep_records(cfg);
    let points = b_grid
        .par_iter()
        .map(|&b| {
            let mut model = base.with_bias(b);
            model.field.injection = None;
            let (signal, start) = simulate_signal(cfg, &model, records)?;
            let out = demodulate(cfg, &noiseless(cfg, signal, start), phase)?;
            let z = out.tail_mean(average);
            Ok(SweepPoint { bias_gauss: b, x: z.re, y: z.im })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(FieldSweep { phase, points })
}

/// Uniform grid of `points` values over `center ± halfwidth`.
pub fn linear_grid(center: f64, halfwidth: f64, points: usize) -> Vec<f64> {
    let n = points.max(2);
    (0..n).map(|i| center - halfwidth + 2.0 * halfwidth * i as f64 / (n - 1) as f64).collect()
}

/// Operating point from a fine sweep around the configured bias.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    /// Lock-in phase used for everything downstream, rad.
    pub phase: f64,
    /// Bias where the in-phase output crosses zero, G.
    pub crossing_gauss: f64,
    /// dX/dB at the crossing, V/G.
    pub slope_v_per_gauss: f64,
    /// The sweep rotated to `phase`.
    pub sweep: FieldSweep,
}

/// Zero crossing of X nearest `near` and the three-point central slope
/// there.
pub fn crossing_and_slope(sweep: &FieldSweep, near: f64) -> Result<(f64, f64), SimError> {
    let b = sweep.bias();
    let x = sweep.x();
    let center = b
        .iter()
        .enumerate()
        .min_by(|p, q| (p.1 - near).abs().total_cmp(&(q.1 - near).abs()))
        .map(|(i, _)| i)
        .ok_or(DspError::NoZeroCrossing)?;
    let i = zero_crossing_near(&x, center).ok_or(DspError::NoZeroCrossing)?;
    let crossing = b[i] - x[i] * (b[i + 1] - b[i]) / (x[i + 1] - x[i]);
    let k = if (crossing - b[i]).abs() <= (b[i + 1] - crossing).abs() { i } else { i + 1 };
    let k = k.clamp(1, b.len() - 2);
    let slope = (x[k + 1] - x[k - 1]) / (b[k + 1] - b[k - 1]);
    Ok((crossing, slope))
}

/// Sweeps the discrimination window, picks the lock-in phase (automatic or
/// configured) and measures the slope at the zero crossing.
pub fn calibrate_operating_point(cfg: &ValidatedConfig) -> Result<OperatingPoint, SimError> {
    let c = cfg.config();
    let grid = linear_grid(c.field.bias_gauss, c.run.discrimination_halfwidth_gauss, c.run.discrimination_points);
    let raw = field_sweep(cfg, &grid, c.detection.lockin_phase_rad)?;
    let phase =
        if c.detection.auto_phase { raw.phase + dsp::auto_phase(&raw.bias(), &raw.x(), &raw.y())? } else { raw.phase };
    let sweep = raw.at_phase(phase);
    let (crossing_gauss, slope_v_per_gauss) = crossing_and_slope(&sweep, c.field.bias_gauss)?;
    Ok(OperatingPoint { phase, crossing_gauss, slope_v_per_gauss, sweep })
}

/// `|H(f)|⁻² = a + b·f² + c·f⁴`, i.e. two real poles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPoleFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// DC response, V/G.
    pub dc_gain: f64,
    /// Pole closest to the lock-in filter corner, Hz.
    pub lockin_pole_hz: f64,
    pub other_pole_hz: f64,
}

impl TwoPoleFit {
    pub fn magnitude(&self, f: f64) -> f64 {
        let u = f * f;
        (self.a + self.b * u + self.c * u * u).powf(-0.5)
    }
}

/// Relative-error least squares fit of the two-pole model to measured
/// magnitudes. `expected_lockin_hz` picks which pole is reported as the
/// lock-in pole.
pub fn fit_two_pole(freqs: &[f64], magnitude: &[f64], expected_lockin_hz: f64) -> Result<TwoPoleFit, SimError> {
    if freqs.len() < 3 {
        return Err(SimError::Fit(format!("need at least 3 frequencies, got {}", freqs.len())));
    }
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for (&f, &m) in freqs.iter().zip(magnitude) {
        let y = m.powi(-2);
        let u = f * f;
        let row = [1.0 / y, u / y, u * u / y];
        for r in 0..3 {
            for c in 0..3 {
                ata[r][c] += row[r] * row[c];
            }
            atb[r] += row[r];
        }
    }
    let [a, b, c] = solve3(ata, atb).ok_or_else(|| SimError::Fit("singular normal equations".into()))?;
    if a <= 0.0 {
        return Err(SimError::Fit(format!("non-positive DC term {a:e}")));
    }
    let (s, p) = (b / a, c / a);
    let disc = s * s - 4.0 * p;
    if disc < 0.0 || p <= 0.0 || s <= 0.0 {
        return Err(SimError::Fit(format!("poles are not real and positive (b/a = {s:e}, c/a = {p:e})")));
    }
    let q1 = 0.5 * (s + disc.sqrt());
    let q2 = p / q1;
    let (f1, f2) = (q1.sqrt().recip(), q2.sqrt().recip());
    let (lockin, other) =
        if (f1 - expected_lockin_hz).abs() <= (f2 - expected_lockin_hz).abs() { (f1, f2) } else { (f2, f1) };
    Ok(TwoPoleFit { a, b, c, dc_gain: a.powf(-0.5), lockin_pole_hz: lockin, other_pole_hz: other })
}

fn solve3(mut m: [[f64; 3]; 3], mut v: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < f64::MIN_POSITIVE {
            return None;
        }
        m.swap(col, piv);
        v.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let k = m[r][col] / m[col][col];
                for c in col..3 {
                    m[r][c] -= k * m[col][c];
                }
                v[r] -= k * v[col];
            }
        }
    }
    Some([v[0] / m[0][0], v[1] / m[1][1], v[2] / m[2][2]])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSpectrum {
    pub freqs: Vec<f64>,
    /// In-phase response to an injected field tone, V/G.
    pub magnitude: Vec<f64>,
    pub fit: TwoPoleFit,
    /// Relative change of the lowest-frequency response when the injection
    /// amplitude is halved.
    pub linearity_deviation: f64,
}

impl ResponseSpectrum {
    /// Log-log interpolation of the measured response; `None` outside the
    /// measured range.
    pub fn interpolate(&self, f: f64) -> Option<f64> {
        let (first, last) = (*self.freqs.first()?, *self.freqs.last()?);
        if f < first || f > last {
            return None;
        }
        let j = self.freqs.partition_point(|&g| g < f);
        if j == 0 {
            return Some(self.magnitude[0]);
        }
        let (f0, f1) = (self.freqs[j - 1], self.freqs[j]);
        let (m0, m1) = (self.magnitude[j - 1], self.magnitude[j]);
        let t = (f / f0).ln() / (f1 / f0).ln();
        Some((m0.ln() + t * (m1 / m0).ln()).exp())
    }
}

/// In-phase response at one injection frequency, V/G.
fn tone_response(cfg: &ValidatedConfig, phase: f64, freq: f64, amplitude: f64) -> Result<f64, SimError> {
    let c = cfg.config();
    let fs = c.detection.sample_rate_hz;
    let mut model = BlochModel::from_config(cfg);
    model.field.injection = Some((amplitude, freq));
    let (settle, _) = sweep_records(cfg);
    let periods = (freq * 0.02).ceil().max(2.0);
    let measure = (periods * fs / freq).round() as usize;
    let (signal, start) = simulate_signal(cfg, &model, settle + measure)?;
    let out = demodulate(cfg, &noiseless(cfg, signal, start), phase)?;
    Ok(dsp::tone_phasor(&out.x[settle..], fs, freq).norm() / amplitude)
}

/// Measures the response across `freqs` at the configured bias, fits the
/// two-pole surrogate and checks linearity at the lowest frequency.
pub fn response_spectrum(cfg: &ValidatedConfig, phase: f64, freqs: &[f64]) -> Result<ResponseSpectrum, SimError> {
    let c = cfg.config();
    let amplitude = c.field.injection_amplitude_gauss;
    if amplitude <= 0.0 {
        return Err(SimError::Numeric("field.injection_amplitude_gauss must be > 0 to measure the response".into()));
    }
    let mut freqs = freqs.to_vec();
    freqs.sort_by(f64::total_cmp);
    let magnitude =
        freqs.par_iter().map(|&f| tone_response(cfg, phase, f, amplitude)).collect::<Result<Vec<_>, SimError>>()?;
    let half = tone_response(cfg, phase, freqs[0], 0.5 * amplitude)?;
    let linearity_deviation = (half / magnitude[0] - 1.0).abs();
    if linearity_deviation > 0.02 {
        return Err(SimError::NonLinear { deviation: linearity_deviation });
    }
    let corner = (2.0 * std::f64::consts::PI * c.detection.lockin_time_constant_s).recip();
    let fit = fit_two_pole(&freqs, &magnitude, corner)?;
    Ok(ResponseSpectrum { freqs, magnitude, fit, linearity_deviation })
}

/// Lock-in X noise for both probe states from one shared spin trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRun {
    /// ASD of X, V/√Hz.
    pub coherent: Spectrum,
    pub squeezed: Spectrum,
    pub seed: u64,
}

/// Decimated in-phase output of a full detector record.
fn x_record(cfg: &ValidatedConfig, series: &DetectorSeries, phase: f64) -> Result<LockinOutput, SimError> {
    let out = demodulate(cfg, series, phase)?;
    let settle = out.settle_samples();
    Ok(out.skip(settle).decimate(cfg.config().detection.lockin_decimation as usize))
}

/// Largest number of half-overlapped segments that fit in `len` samples.
pub fn max_averages(len: usize, sample_rate: f64, segment_bandwidth: f64) -> usize {
    let seg = required_length(sample_rate, segment_bandwidth, 1);
    if len < seg {
        return 0;
    }
    (len - seg) / (seg / 2).max(1) + 1
}

/// Runs the operating point for the configured noise duration with coherent
/// and squeezed probe noise drawn from the same seed.
pub fn noise_run(cfg: &ValidatedConfig, phase: f64, seed: u64) -> Result<NoiseRun, SimError> {
    let c = cfg.config();
    let fs = c.detection.sample_rate_hz;
    let records = (c.run.noise_duration_s * fs).round() as usize;
    let mut model = BlochModel::from_config(cfg);
    model.field.injection = None;
    let traj = simulate_trajectory(cfg, &model, records)?;
    let phi: Vec<f64> = traj.samples.iter().map(|s| cfg.derived().coupling * s.y).collect();
    let start_time = traj.start_time;
    drop(traj);
    let noise_seed = derive_seed(seed, "probe");
    let spectra = [false, true]
        .iter()
        .map(|&squeezed| {
            let noise = synthesize_probe_noise(&NoiseModel::from_config(cfg, squeezed), records, fs, noise_seed);
            let series = assemble_detector_output(
                &phi,
                fs,
                start_time,
                &noise,
                cfg.derived().volts_per_rad,
                Provenance { config_hash: cfg.hash(), seed },
            )?;
            let x = x_record(cfg, &series, phase)?;
            let bw = c.run.noise_segment_bandwidth_hz;
            let averages = max_averages(x.x.len(), x.sample_rate, bw);
            if averages == 0 {
                return Err(SimError::Dsp(DspError::InsufficientData {
                    required: required_length(x.sample_rate, bw, 1),
                    available: x.x.len(),
                }));
            }
            Ok(psd_estimate(&x.x, x.sample_rate, bw, averages, Window::Hann)?.to_asd())
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let [coherent, squeezed]: [Spectrum; 2] = spectra.try_into().expect("two spectra");
    Ok(NoiseRun { coherent, squeezed, seed })
}

/// Noise-equivalent field, G/√Hz, on the noise grid within the measured
/// response range.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivitySpectrum {
    pub freqs: Vec<f64>,
    pub values: Vec<f64>,
}

impl SensitivitySpectrum {
    /// Median over `[lo, hi]`, pT/√Hz.
    pub fn plateau_pt(&self, band: [f64; 2]) -> Result<f64, SimError> {
        let mut vals: Vec<f64> = self
            .freqs
            .iter()
            .zip(&self.values)
            .filter(|(f, _)| **f >= band[0] && **f <= band[1])
            .map(|(_, v)| *v * PICOTESLA_PER_GAUSS)
            .collect();
        if vals.is_empty() {
            return Err(SimError::Numeric(format!("no sensitivity bins in {band:?} Hz")));
        }
        Ok(median(&mut vals))
    }
}

/// δB(f) = σ_X(f) / |response(f)|.
pub fn sensitivity_spectrum(noise_asd: &Spectrum, response: &ResponseSpectrum) -> SensitivitySpectrum {
    let (freqs, values) = noise_asd
        .freqs
        .iter()
        .zip(&noise_asd.values)
        .filter_map(|(&f, &v)| response.interpolate(f).map(|r| (f, v / r)))
        .unzip();
    SensitivitySpectrum { freqs, values }
}

/// Percentage improvement for a squeezed/coherent sensitivity ratio.
pub fn improvement_percent(ratio: f64) -> f64 {
    100.0 * (1.0 - ratio)
}
