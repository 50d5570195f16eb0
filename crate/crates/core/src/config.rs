//! Experiment configuration: schema, presets, validation and `key=value` overrides.
//!
//! Everything in an [`ExperimentConfig`] is in the units named by its field
//! suffix (gauss, Hz, seconds, mW, °C). [`validate_config`] checks every
//! invariant at once and attaches the derived quantities the simulation
//! needs, including the one-time Hz → rad/s conversion.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::noise;
use crate::physics::{self, ANCHOR_DENSITY_CM3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    /// Longitudinal bias field, G.
    pub bias_gauss: f64,
    /// Gyromagnetic ratio, Hz/G.
    pub gamma_hz_per_gauss: f64,
    /// Amplitude of the AC calibration tone added to the bias, G. Also the
    /// default amplitude used when measuring the response spectrum.
    pub injection_amplitude_gauss: f64,
    /// Frequency of the calibration tone, Hz. When absent the bias is static.
    pub injection_freq_hz: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Waveform {
    Square,
    Sine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpConfig {
    /// Optical pumping rate while the pump is on, s⁻¹.
    pub peak_rate: f64,
    pub mod_freq_hz: f64,
    pub duty: f64,
    pub waveform: Waveform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Probe power entering the magnetometer cell, mW.
    pub power_mw: f64,
    pub wavelength_nm: f64,
    /// Rotation per unit spin polarization at the anchor density, rad.
    pub coupling_kappa: f64,
    /// Balanced-detector output per radian of rotation per mW of detected
    /// probe power, V/(rad·mW).
    pub detector_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub temperature_c: f64,
    pub length_mm: f64,
    pub density_override_cm3: Option<f64>,
    /// Probe power fraction lost in the cell at the anchor density.
    pub absorption_fraction: f64,
    /// Pump optical depth between the window and the beam crossing at the
    /// anchor density.
    pub pump_optical_depth: f64,
    /// Total transverse spin relaxation rate Γ, s⁻¹.
    pub relaxation_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SqueezeConfig {
    /// Squeezed-quadrature variance before the cell, dB relative to vacuum.
    pub squeezing_db: f64,
    pub antisqueezing_db: f64,
    /// Detected quadrature relative to the squeezed one, rad.
    pub quadrature_angle_rad: f64,
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    pub sample_rate_hz: f64,
    /// RK4 steps per detector sample.
    pub integrator_substeps: u32,
    pub lockin_time_constant_s: f64,
    pub lockin_filter_order: u32,
    pub lockin_phase_rad: f64,
    /// Replace `lockin_phase_rad` by the slope-maximizing phase from a
    /// discrimination sweep.
    pub auto_phase: bool,
    /// Boxcar decimation applied to lock-in outputs before spectral analysis.
    pub lockin_decimation: u32,
    pub sa_rbw_hz: f64,
    pub sa_vbw_hz: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TechnicalNoiseConfig {
    /// Offset from the carrier below which 1/f technical noise dominates, Hz.
    pub flicker_corner_hz: f64,
    /// 1/f asymptote at the corner, as a multiple of the coherent shot-noise ASD.
    pub flicker_level: f64,
    /// Excess atomic noise variance at the anchor density, relative to shot noise.
    pub excess_coefficient: f64,
    pub excess_exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub dc_sweep_span_gauss: f64,
    pub dc_sweep_points: usize,
    /// Full width of the symmetric lock-in sweep, G.
    pub lockin_sweep_span_gauss: f64,
    pub lockin_sweep_points: usize,
    /// Half-width of the fine sweep around the resonance used for the slope.
    pub discrimination_halfwidth_gauss: f64,
    pub discrimination_points: usize,
    pub sa_span_hz: f64,
    pub sa_carrier_exclusion_hz: f64,
    pub noise_duration_s: f64,
    pub noise_segment_bandwidth_hz: f64,
    pub plateau_band_hz: [f64; 2],
    pub response_freqs_hz: Vec<f64>,
    pub temp_grid_c: Vec<f64>,
    /// Temperature the scan normalizes to; distinct from the density anchor.
    pub temp_normalization_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub field: FieldConfig,
    pub pump: PumpConfig,
    pub probe: ProbeConfig,
    pub cell: CellConfig,
    pub squeeze: SqueezeConfig,
    pub detection: DetectionConfig,
    pub noise: TechnicalNoiseConfig,
    pub run: RunSettings,
}

/// Pump rate and relaxation rate of the shipped scenario, s⁻¹.
const DEFAULT_RELAXATION: f64 = 2.0 * std::f64::consts::PI * 7_250.0;
const DEFAULT_PEAK_RATE: f64 = 2.0e4;

/// Coupling calibrated once so the coherent plateau lands at 250 pT/√Hz.
pub const CALIBRATED_KAPPA: f64 = 1.342_4e-4;

/// Excess-noise coefficient: the excess variance reaches 5× shot noise at
/// the 70 °C density with a quadratic law, which closes the squeezed/coherent
/// floor gap to below 0.1 dB there.
/// See [`noise::calibrate_excess_coefficient`].
pub const CALIBRATED_EXCESS_COEFFICIENT: f64 = 0.029_956_443_4;

/// Pump optical depth at the anchor density; with the probe absorption it
/// puts the response maximum at 55 °C.
pub const CALIBRATED_PUMP_OPTICAL_DEPTH: f64 = 0.159_776_55;

impl ExperimentConfig {
    pub fn paper_default() -> Self {
        ExperimentConfig {
            field: FieldConfig {
                bias_gauss: 0.8,
                gamma_hz_per_gauss: physics::GAMMA_OPERATING_PAIR,
                injection_amplitude_gauss: 2.0e-4,
                injection_freq_hz: None,
            },
            pump: PumpConfig {
                peak_rate: DEFAULT_PEAK_RATE,
                mod_freq_hz: 580_000.0,
                duty: 0.5,
                waveform: Waveform::Square,
            },
            probe: ProbeConfig {
                power_mw: 6.5,
                wavelength_nm: 795.0,
                coupling_kappa: CALIBRATED_KAPPA,
                detector_gain: 1.0e3,
            },
            cell: CellConfig {
                temperature_c: physics::ANCHOR_TEMPERATURE_C,
                length_mm: 75.0,
                density_override_cm3: None,
                absorption_fraction: 0.10,
                pump_optical_depth: CALIBRATED_PUMP_OPTICAL_DEPTH,
                relaxation_rate: DEFAULT_RELAXATION,
            },
            squeeze: SqueezeConfig {
                squeezing_db: -1.9,
                antisqueezing_db: 8.0,
                quadrature_angle_rad: 0.0,
                enabled: true,
            },
            detection: DetectionConfig {
                sample_rate_hz: 2.9e6,
                integrator_substeps: 5,
                lockin_time_constant_s: 300e-6,
                lockin_filter_order: 1,
                lockin_phase_rad: 0.0,
                auto_phase: true,
                lockin_decimation: 100,
                sa_rbw_hz: 1000.0,
                sa_vbw_hz: 1.0,
                rng_seed: 20_221_115,
            },
            noise: TechnicalNoiseConfig {
                flicker_corner_hz: 100.0,
                flicker_level: 1.0,
                excess_coefficient: CALIBRATED_EXCESS_COEFFICIENT,
                excess_exponent: 2.0,
            },
            run: RunSettings {
                dc_sweep_span_gauss: 0.1,
                dc_sweep_points: 401,
                lockin_sweep_span_gauss: 2.0,
                lockin_sweep_points: 1601,
                discrimination_halfwidth_gauss: 0.03,
                discrimination_points: 121,
                sa_span_hz: 50_000.0,
                sa_carrier_exclusion_hz: 3_000.0,
                noise_duration_s: 2.0,
                noise_segment_bandwidth_hz: 5.0,
                plateau_band_hz: [200.0, 500.0],
                response_freqs_hz: vec![
                    20.0, 35.0, 60.0, 100.0, 150.0, 200.0, 300.0, 400.0, 531.0, 700.0, 1000.0, 1500.0, 2000.0, 3000.0,
                    5000.0,
                ],
                temp_grid_c: vec![40.0, 45.0, 50.0, 55.0, 60.0, 65.0, 70.0],
                temp_normalization_c: 40.8,
            },
        }
    }

    /// Default scenario with the textbook ⁸⁷Rb gyromagnetic ratio; the bias is
    /// moved so the Larmor frequency still matches the 580 kHz modulation.
    pub fn textbook_gamma() -> Self {
        let mut cfg = Self::paper_default();
        cfg.field.gamma_hz_per_gauss = physics::GAMMA_RB87_F2;
        cfg.field.bias_gauss = physics::resonant_field(cfg.pump.mod_freq_hz, physics::GAMMA_RB87_F2);
        cfg
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "paper-default" => Ok(Self::paper_default()),
            "textbook-gamma" => Ok(Self::textbook_gamma()),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex_digest(self.to_toml_string().as_bytes())
    }

    /// Sets `section.key` to `value`. The value is parsed as a TOML literal,
    /// falling back to a bare string. Unknown paths are rejected.
    pub fn with_override(&self, assignment: &str) -> Result<Self, ConfigError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Override(format!("expected key=value, got `{assignment}`")))?;
        let key = key.trim();
        let raw = raw.trim();
        let mut root = toml::Value::try_from(self).map_err(|e| ConfigError::Override(e.to_string()))?;
        let parts: Vec<&str> = key.split('.').collect();
        if parts.len() != 2 {
            return Err(ConfigError::Override(format!("override key must be `section.field`, got `{key}`")));
        }
        let section = root
            .get_mut(parts[0])
            .and_then(|v| v.as_table_mut())
            .ok_or_else(|| ConfigError::Override(format!("unknown config section `{}`", parts[0])))?;
        let mut parsed = parse_toml_literal(raw);
        if let (Some(toml::Value::Float(_)), toml::Value::Integer(i)) = (section.get(parts[1]), &parsed) {
            parsed = toml::Value::Float(*i as f64);
        }
        section.insert(parts[1].to_string(), parsed);
        root.try_into::<ExperimentConfig>().map_err(|e| ConfigError::Override(format!("`{key}`: {e}")))
    }
}

fn parse_toml_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub path: &'static str,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid configuration:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ConfigIssue>),
    #[error("unknown preset `{0}` (available: paper-default, textbook-gamma)")]
    UnknownPreset(String),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config override error: {0}")]
    Override(String),
    #[error("config io error: {0}")]
    Io(String),
}

impl ConfigError {
    pub fn issues(&self) -> &[ConfigIssue] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

/// Quantities computed once from a valid configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Derived {
    /// Larmor frequency magnitude at the bias field, Hz.
    pub larmor_hz: f64,
    /// Signed Larmor angular frequency, rad/s.
    pub larmor_omega: f64,
    pub mod_omega: f64,
    /// 2πγ, rad/(s·G).
    pub gyro_omega_per_gauss: f64,
    pub density_cm3: f64,
    /// Density relative to the anchor density.
    pub density_ratio: f64,
    pub probe_transmission: f64,
    /// Pumping rate reaching the beam crossing, s⁻¹.
    pub pump_rate: f64,
    /// Rotation per unit polarization at the operating density, rad.
    pub coupling: f64,
    pub detected_power_mw: f64,
    /// Shot-noise rotation ASD at the detected power, rad/√Hz.
    pub shot_asd: f64,
    /// Detector output per radian, V/rad.
    pub volts_per_rad: f64,
    /// Detected-quadrature variance after the cell (1 for a coherent probe).
    pub squeeze_variance: f64,
    pub excess_variance: f64,
    pub integration_step_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig {
    config: ExperimentConfig,
    derived: Derived,
}

impl ValidatedConfig {
    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn derived(&self) -> &Derived {
        &self.derived
    }

    pub fn hash(&self) -> String {
        self.config.hash()
    }
}

/// Checks every invariant and attaches [`Derived`]. Issues are collected
/// across all sections; nothing is accepted partially.
pub fn validate_config(cfg: &ExperimentConfig) -> Result<ValidatedConfig, ConfigError> {
    let mut issues = Vec::new();
    let mut check = |ok: bool, path: &'static str, message: String| {
        if !ok {
            issues.push(ConfigIssue { path, message });
        }
    };

    let f = &cfg.field;
    check(f.bias_gauss.is_finite(), "field.bias_gauss", "must be finite".into());
    check(f.gamma_hz_per_gauss > 0.0, "field.gamma_hz_per_gauss", format!("must be > 0, got {}", f.gamma_hz_per_gauss));
    check(
        f.injection_amplitude_gauss >= 0.0,
        "field.injection_amplitude_gauss",
        format!("must be >= 0, got {}", f.injection_amplitude_gauss),
    );
    if let Some(freq) = f.injection_freq_hz {
        check(freq > 0.0, "field.injection_freq_hz", format!("must be > 0 when given, got {freq}"));
    }

    let p = &cfg.pump;
    check(p.duty > 0.0 && p.duty < 1.0, "pump.duty", format!("must lie in (0, 1), got {}", p.duty));
    check(p.mod_freq_hz > 0.0, "pump.mod_freq_hz", format!("must be > 0, got {}", p.mod_freq_hz));
    check(p.peak_rate >= 0.0, "pump.peak_rate", format!("must be >= 0, got {}", p.peak_rate));

    let pr = &cfg.probe;
    check(pr.power_mw > 0.0, "probe.power_mw", format!("must be > 0, got {}", pr.power_mw));
    check(pr.wavelength_nm > 0.0, "probe.wavelength_nm", format!("must be > 0, got {}", pr.wavelength_nm));
    check(pr.coupling_kappa > 0.0, "probe.coupling_kappa", format!("must be > 0, got {}", pr.coupling_kappa));
    check(pr.detector_gain > 0.0, "probe.detector_gain", format!("must be > 0, got {}", pr.detector_gain));

    let c = &cfg.cell;
    check(
        (0.0..1.0).contains(&c.absorption_fraction),
        "cell.absorption_fraction",
        format!("must lie in [0, 1), got {}", c.absorption_fraction),
    );
    check(c.relaxation_rate > 0.0, "cell.relaxation_rate", format!("must be > 0, got {}", c.relaxation_rate));
    check(c.length_mm > 0.0, "cell.length_mm", format!("must be > 0, got {}", c.length_mm));
    check(
        c.pump_optical_depth >= 0.0,
        "cell.pump_optical_depth",
        format!("must be >= 0, got {}", c.pump_optical_depth),
    );
    let density = match c.density_override_cm3 {
        Some(n) => {
            check(n > 0.0, "cell.density_override_cm3", format!("must be > 0, got {n}"));
            Some(n)
        }
        None => match physics::rb_number_density(c.temperature_c) {
            Ok(n) => Some(n),
            Err(e) => {
                check(false, "cell.temperature_c", e.to_string());
                None
            }
        },
    };

    let s = &cfg.squeeze;
    check(s.squeezing_db <= 0.0, "squeeze.squeezing_db", format!("must be <= 0, got {}", s.squeezing_db));
    check(s.antisqueezing_db >= 0.0, "squeeze.antisqueezing_db", format!("must be >= 0, got {}", s.antisqueezing_db));
    let v_sq = physics::db_to_variance(s.squeezing_db);
    let v_anti = physics::db_to_variance(s.antisqueezing_db);
    check(
        v_sq * v_anti >= 1.0 - 1e-12,
        "squeeze.antisqueezing_db",
        format!("variance product {} violates the minimum-uncertainty bound", v_sq * v_anti),
    );

    let d = &cfg.detection;
    check(
        d.sample_rate_hz > 4.0 * p.mod_freq_hz,
        "detection.sample_rate_hz",
        format!("must exceed 4 × pump.mod_freq_hz = {} Hz, got {}", 4.0 * p.mod_freq_hz, d.sample_rate_hz),
    );
    check(d.integrator_substeps >= 1, "detection.integrator_substeps", "must be >= 1".into());
    check(
        d.lockin_time_constant_s > 0.0,
        "detection.lockin_time_constant_s",
        format!("must be > 0, got {}", d.lockin_time_constant_s),
    );
    check(
        (1..=4).contains(&d.lockin_filter_order),
        "detection.lockin_filter_order",
        format!("must be 1..=4, got {}", d.lockin_filter_order),
    );
    check(d.lockin_decimation >= 1, "detection.lockin_decimation", "must be >= 1".into());
    check(d.sa_vbw_hz > 0.0, "detection.sa_vbw_hz", format!("must be > 0, got {}", d.sa_vbw_hz));
    check(
        d.sa_rbw_hz >= d.sa_vbw_hz,
        "detection.sa_rbw_hz",
        format!("must be >= sa_vbw_hz ({}), got {}", d.sa_vbw_hz, d.sa_rbw_hz),
    );

    let n = &cfg.noise;
    check(n.flicker_corner_hz >= 0.0, "noise.flicker_corner_hz", "must be >= 0".into());
    check(n.flicker_level >= 0.0, "noise.flicker_level", "must be >= 0".into());
    check(n.excess_coefficient >= 0.0, "noise.excess_coefficient", "must be >= 0".into());
    check(n.excess_exponent >= 1.0, "noise.excess_exponent", format!("must be >= 1, got {}", n.excess_exponent));

    let r = &cfg.run;
    check(r.dc_sweep_span_gauss > 0.0, "run.dc_sweep_span_gauss", "must be > 0".into());
    check(r.dc_sweep_points >= 3, "run.dc_sweep_points", "must be >= 3".into());
    check(r.lockin_sweep_span_gauss > 0.0, "run.lockin_sweep_span_gauss", "must be > 0".into());
    check(r.lockin_sweep_points >= 3, "run.lockin_sweep_points", "must be >= 3".into());
    check(r.discrimination_halfwidth_gauss > 0.0, "run.discrimination_halfwidth_gauss", "must be > 0".into());
    check(r.discrimination_points >= 3, "run.discrimination_points", "must be >= 3".into());
    check(r.sa_span_hz > 0.0, "run.sa_span_hz", "must be > 0".into());
    check(r.sa_carrier_exclusion_hz >= 0.0, "run.sa_carrier_exclusion_hz", "must be >= 0".into());
    check(r.noise_duration_s > 0.0, "run.noise_duration_s", "must be > 0".into());
    check(r.noise_segment_bandwidth_hz > 0.0, "run.noise_segment_bandwidth_hz", "must be > 0".into());
    check(
        r.plateau_band_hz[0] > 0.0 && r.plateau_band_hz[0] < r.plateau_band_hz[1],
        "run.plateau_band_hz",
        format!("must be an increasing positive pair, got {:?}", r.plateau_band_hz),
    );
    check(
        !r.response_freqs_hz.is_empty() && r.response_freqs_hz.iter().all(|&f| f > 0.0),
        "run.response_freqs_hz",
        "must be a non-empty list of positive frequencies".into(),
    );
    check(!r.temp_grid_c.is_empty(), "run.temp_grid_c", "must not be empty".into());

    let (Some(density), true) = (density, issues.is_empty()) else {
        return Err(ConfigError::Invalid(issues));
    };

    let density_ratio = density / ANCHOR_DENSITY_CM3;
    let probe_transmission = cell_transmission(c.absorption_fraction, density_ratio);
    let pump_rate = p.peak_rate * (-c.pump_optical_depth * (density_ratio - 1.0)).exp();
    let detected_power_mw = pr.power_mw * probe_transmission;
    let shot_asd = noise::shot_noise_asd_from_power(detected_power_mw, pr.wavelength_nm);
    let squeeze_variance = if s.enabled {
        let v_theta = noise::quadrature_variance(s.quadrature_angle_rad, v_sq, v_anti);
        noise::loss_propagated_variance(v_theta, probe_transmission)
    } else {
        1.0
    };
    let excess_variance = noise::excess_atomic_noise_variance(density, &cfg.noise);

    let derived = Derived {
        larmor_hz: physics::larmor_frequency(f.bias_gauss, f.gamma_hz_per_gauss),
        larmor_omega: physics::larmor_angular(f.bias_gauss, f.gamma_hz_per_gauss),
        mod_omega: physics::hz_to_rad(p.mod_freq_hz),
        gyro_omega_per_gauss: physics::hz_to_rad(f.gamma_hz_per_gauss),
        density_cm3: density,
        density_ratio,
        probe_transmission,
        pump_rate,
        coupling: pr.coupling_kappa * density_ratio,
        detected_power_mw,
        shot_asd,
        volts_per_rad: pr.detector_gain * detected_power_mw,
        squeeze_variance,
        excess_variance,
        integration_step_s: 1.0 / (d.sample_rate_hz * f64::from(d.integrator_substeps)),
    };
    Ok(ValidatedConfig { config: cfg.clone(), derived })
}

/// Probe transmission at a density `ratio` times the anchor density, given
/// the absorbed fraction at the anchor (Beer–Lambert scaling).
pub fn cell_transmission(absorption_at_anchor: f64, ratio: f64) -> f64 {
    let od = -(1.0 - absorption_at_anchor).ln();
    (-od * ratio).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn issue_paths(cfg: &ExperimentConfig) -> Vec<&'static str> {
        validate_config(cfg).unwrap_err().issues().iter().map(|i| i.path).collect()
    }

    #[test]
    fn default_scenario_is_valid() {
        let v = validate_config(&ExperimentConfig::paper_default()).unwrap();
        let d = v.derived();
        assert_relative_eq!(d.larmor_hz, 580_000.0, max_relative = 1e-12);
        assert_eq!(d.density_cm3, 5.5e10);
        assert_relative_eq!(d.probe_transmission, 0.9, max_relative = 1e-12);
        assert_relative_eq!(d.pump_rate, DEFAULT_PEAK_RATE, max_relative = 1e-12);
        assert_relative_eq!(d.squeeze_variance, 0.9 * 10f64.powf(-0.19) + 0.1, max_relative = 1e-12);
        assert!(d.excess_variance < 0.05);
    }

    #[test]
    fn textbook_preset_stays_on_resonance() {
        let v = validate_config(&ExperimentConfig::textbook_gamma()).unwrap();
        assert_relative_eq!(v.derived().larmor_hz, 580_000.0, max_relative = 1e-12);
    }

    #[test]
    fn duty_out_of_range_names_field() {
        let mut cfg = ExperimentConfig::paper_default();
        cfg.pump.duty = 1.2;
        assert_eq!(issue_paths(&cfg), vec!["pump.duty"]);
    }

    #[test]
    fn nyquist_margin_enforced() {
        let mut cfg = ExperimentConfig::paper_default();
        cfg.detection.sample_rate_hz = 1.0e6;
        let err = validate_config(&cfg).unwrap_err();
        assert_eq!(err.issues().len(), 1);
        assert_eq!(err.issues()[0].path, "detection.sample_rate_hz");
        assert!(err.issues()[0].message.contains("2320000"));
    }

    #[test]
    fn every_single_field_violation_is_rejected() {
        type Mutation = (&'static str, fn(&mut ExperimentConfig));
        let cases: &[Mutation] = &[
            ("field.gamma_hz_per_gauss", |c| c.field.gamma_hz_per_gauss = 0.0),
            ("field.injection_amplitude_gauss", |c| c.field.injection_amplitude_gauss = -1e-4),
            ("field.injection_freq_hz", |c| c.field.injection_freq_hz = Some(0.0)),
            ("pump.duty", |c| c.pump.duty = 0.0),
            ("pump.mod_freq_hz", |c| c.pump.mod_freq_hz = -1.0),
            ("pump.peak_rate", |c| c.pump.peak_rate = -1.0),
            ("probe.power_mw", |c| c.probe.power_mw = 0.0),
            ("probe.wavelength_nm", |c| c.probe.wavelength_nm = 0.0),
            ("probe.coupling_kappa", |c| c.probe.coupling_kappa = 0.0),
            ("cell.absorption_fraction", |c| c.cell.absorption_fraction = 1.0),
            ("cell.relaxation_rate", |c| c.cell.relaxation_rate = 0.0),
            ("cell.temperature_c", |c| c.cell.temperature_c = 150.0),
            ("squeeze.squeezing_db", |c| c.squeeze.squeezing_db = 0.5),
            ("squeeze.antisqueezing_db", |c| c.squeeze.antisqueezing_db = 1.0),
            ("detection.lockin_time_constant_s", |c| c.detection.lockin_time_constant_s = 0.0),
            ("detection.lockin_filter_order", |c| c.detection.lockin_filter_order = 5),
            ("detection.sa_rbw_hz", |c| c.detection.sa_rbw_hz = 0.5),
        ];
        for (path, mutate) in cases {
            let mut cfg = ExperimentConfig::paper_default();
            mutate(&mut cfg);
            let paths = issue_paths(&cfg);
            assert!(paths.contains(path), "{path}: got {paths:?}");
        }
    }

    #[test]
    fn toml_round_trip_is_exact() {
        let mut cfg = ExperimentConfig::paper_default();
        cfg.cell.density_override_cm3 = Some(1.234_567_890_123_456_7e11);
        cfg.field.injection_freq_hz = Some(std::f64::consts::PI);
        let text = cfg.to_toml_string();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml_string(), text);
    }

    #[test]
    fn overrides_apply_and_reject_unknown_paths() {
        let cfg = ExperimentConfig::paper_default();
        let o = cfg.with_override("pump.duty=0.25").unwrap();
        assert_eq!(o.pump.duty, 0.25);
        let o = cfg.with_override("detection.sample_rate_hz=3000000").unwrap();
        assert_eq!(o.detection.sample_rate_hz, 3.0e6);
        let o = cfg.with_override("pump.waveform=sine").unwrap();
        assert_eq!(o.pump.waveform, Waveform::Sine);
        let o = cfg.with_override("cell.density_override_cm3=1e11").unwrap();
        assert_eq!(o.cell.density_override_cm3, Some(1e11));
        let o = cfg.with_override("run.temp_grid_c=[40.8, 55]").unwrap();
        assert_eq!(o.run.temp_grid_c, vec![40.8, 55.0]);
        assert!(cfg.with_override("pump.dutty=0.5").is_err());
        assert!(cfg.with_override("nosuch.key=1").is_err());
        assert!(cfg.with_override("pump.duty").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::paper_default();
        let b = a.with_override("detection.rng_seed=1").unwrap();
        assert_eq!(a.hash(), ExperimentConfig::paper_default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
