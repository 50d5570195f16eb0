//! End-to-end runs: each scenario turns a configuration into summary
//! metrics and data tables, and [`write_outcome`] persists them with a
//! manifest.

pub mod output;
mod temp_scan;
mod validate;

use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{validate_config, ConfigError, ExperimentConfig, ValidatedConfig};
use crate::dsp::{assemble_detector_output, noise_floor_estimate, sa_trace, spectrum::required_length, Provenance};
use crate::noise::{derive_seed, synthesize_probe_noise, NoiseModel};
use crate::sensitivity::{
    calibrate_operating_point, crossing_and_slope, field_sweep, improvement_percent, linear_grid, noise_run,
    response_spectrum, sensitivity_spectrum, simulate_trajectory, FieldSweep, SimError,
};
use crate::spin::{integrate, static_rotation_curve, BlochModel, PumpDrive, PumpShape, Sampling, SpinState};

pub use output::{FileRecord, Manifest, Table, MANIFEST_NAME};
pub use temp_scan::temp_scan;
pub use validate::validate;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    DcSweep,
    LockinSweep,
    SaCompare,
    Sensitivity,
    TempScan,
    Validate,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::DcSweep,
        ScenarioKind::LockinSweep,
        ScenarioKind::SaCompare,
        ScenarioKind::Sensitivity,
        ScenarioKind::TempScan,
        ScenarioKind::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::DcSweep => "dc-sweep",
            ScenarioKind::LockinSweep => "lockin-sweep",
            ScenarioKind::SaCompare => "sa-compare",
            ScenarioKind::Sensitivity => "sensitivity",
            ScenarioKind::TempScan => "temp-scan",
            ScenarioKind::Validate => "validate",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("self-validation failed: {}", .0.join(", "))]
    ValidationFailed(Vec<String>),
}

impl ScenarioError {
    /// Process exit code for this failure category.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Config(ConfigError::Io(_)) => 4,
            ScenarioError::Config(_) => 2,
            ScenarioError::Sim(_) | ScenarioError::ValidationFailed(_) => 3,
            ScenarioError::Io { .. } => 4,
        }
    }
}

/// Everything a scenario produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub scenario: ScenarioKind,
    pub config_hash: String,
    pub root_seed: u64,
    pub seeds: Vec<(String, u64)>,
    pub summary: Vec<(String, f64)>,
    pub tables: Vec<Table>,
    /// False only when a validation scenario has failing checks.
    pub passed: bool,
    pub config_toml: String,
}

impl Outcome {
    fn new(scenario: ScenarioKind, cfg: &ExperimentConfig) -> Self {
        Outcome {
            scenario,
            config_hash: cfg.hash(),
            root_seed: cfg.detection.rng_seed,
            seeds: Vec::new(),
            summary: Vec::new(),
            tables: Vec::new(),
            passed: true,
            config_toml: cfg.to_toml_string(),
        }
    }

    pub fn metric(&self, key: &str) -> Option<f64> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn table(&self, file_name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.file_name == file_name)
    }

    fn put(&mut self, key: &str, value: f64) {
        self.summary.push((key.to_string(), value));
    }

    fn table_meta(&self, t: Table, units: &str) -> Table {
        t.meta("scenario", self.scenario.name()).meta("config_hash", &self.config_hash).meta("units", units)
    }
}

/// Runs `kind` on `cfg`.
pub fn run(kind: ScenarioKind, cfg: &ExperimentConfig) -> Result<Outcome, ScenarioError> {
    if kind == ScenarioKind::Validate {
        return Ok(validate(cfg));
    }
    let v = validate_config(cfg)?;
    let seed = cfg.detection.rng_seed;
    match kind {
        ScenarioKind::DcSweep => dc_sweep(&v),
        ScenarioKind::LockinSweep => lockin_sweep(&v),
        ScenarioKind::SaCompare => sa_compare(&v, seed),
        ScenarioKind::Sensitivity => sensitivity_scenario(&v, seed),
        ScenarioKind::TempScan => temp_scan(&v, seed),
        ScenarioKind::Validate => unreachable!(),
    }
}

/// Static rotation with continuous pumping across a symmetric bias grid.
pub fn dc_sweep(v: &ValidatedConfig) -> Result<Outcome, ScenarioError> {
    let c = v.config();
    let d = v.derived();
    let mut out = Outcome::new(ScenarioKind::DcSweep, c);
    let grid = linear_grid(0.0, 0.5 * c.run.dc_sweep_span_gauss, c.run.dc_sweep_points);
    let mut base = BlochModel::from_config(v);
    base.pump = PumpDrive { peak_rate: d.pump_rate, freq_hz: c.pump.mod_freq_hz, shape: PumpShape::Constant };
    base.field.injection = None;
    let fs = c.detection.sample_rate_hz;
    let substeps = c.detection.integrator_substeps as usize;
    let numeric = grid
        .par_iter()
        .map(|&b| {
            let m = base.with_bias(b);
            let mut sampling = Sampling::steady_state(&m, fs, substeps, 1);
            sampling.skip *= 2;
            let traj = integrate(&m, SpinState::ZERO, sampling).map_err(SimError::from)?;
            Ok(d.coupling * traj.samples[0].y)
        })
        .collect::<Result<Vec<f64>, SimError>>()?;
    let closed = static_rotation_curve(&grid, v);

    let i_max = argmax(&numeric);
    let i_min = argmax(&numeric.iter().map(|v| -v).collect::<Vec<_>>());
    let peak = numeric[i_max].abs().max(numeric[i_min].abs());
    let n = grid.len();
    let odd_residual = (0..n).map(|i| (numeric[i] + numeric[n - 1 - i]).abs()).fold(0.0, f64::max) / peak;
    let closed_dev = numeric.iter().zip(&closed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / peak;

    out.put("extremum_max_gauss", grid[i_max]);
    out.put("extremum_min_gauss", grid[i_min]);
    out.put("expected_extremum_gauss", c.cell.relaxation_rate / d.gyro_omega_per_gauss);
    out.put("grid_step_gauss", grid[1] - grid[0]);
    out.put("peak_rotation_rad", peak);
    out.put("odd_residual", odd_residual);
    out.put("closed_form_max_deviation", closed_dev);

    let mut t = out.table_meta(
        Table::new("dc_sweep.tsv", &["bias_gauss", "rotation_rad", "rotation_closed_form_rad", "detector_v"]),
        "G, rad, rad, V",
    );
    for i in 0..n {
        t.push(vec![grid[i], numeric[i], closed[i], numeric[i] * d.volts_per_rad]);
    }
    out.tables.push(t);
    Ok(out)
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0)
}

fn subset(sweep: &FieldSweep, keep: impl Fn(f64) -> bool) -> FieldSweep {
    FieldSweep { phase: sweep.phase, points: sweep.points.iter().filter(|p| keep(p.bias_gauss)).cloned().collect() }
}

/// Wide lock-in sweep through both the positive and negative resonance.
pub fn lockin_sweep(v: &ValidatedConfig) -> Result<Outcome, ScenarioError> {
    let c = v.config();
    let mut out = Outcome::new(ScenarioKind::LockinSweep, c);
    let grid = linear_grid(0.0, 0.5 * c.run.lockin_sweep_span_gauss, c.run.lockin_sweep_points);
    let raw = field_sweep(v, &grid, c.detection.lockin_phase_rad)?;
    let phase = if c.detection.auto_phase {
        let pos = subset(&raw, |b| b > 0.0);
        raw.phase + crate::dsp::auto_phase(&pos.bias(), &pos.x(), &pos.y()).map_err(SimError::from)?
    } else {
        raw.phase
    };
    let sweep = raw.at_phase(phase);

    let crossing = |half: FieldSweep| -> Result<(f64, f64), SimError> {
        let r: Vec<f64> = half.points.iter().map(|p| p.x.hypot(p.y)).collect();
        let peak = half.points[argmax(&r)].bias_gauss;
        crossing_and_slope(&half, peak)
    };
    let (pos_b, pos_slope) = crossing(subset(&sweep, |b| b > 0.0))?;
    let (neg_b, neg_slope) = crossing(subset(&sweep, |b| b < 0.0))?;

    out.put("lockin_phase_rad", phase);
    out.put("crossing_positive_gauss", pos_b);
    out.put("crossing_negative_gauss", neg_b);
    out.put("slope_positive_v_per_gauss", pos_slope);
    out.put("slope_negative_v_per_gauss", neg_slope);
    out.put("expected_resonance_gauss", c.pump.mod_freq_hz / c.field.gamma_hz_per_gauss);
    out.put("grid_step_gauss", grid[1] - grid[0]);

    let mut t = out.table_meta(
        Table::new("lockin_sweep.tsv", &["bias_gauss", "x_v", "y_v", "r_v"]).meta("lockin_phase_rad", phase),
        "G, V, V, V",
    );
    for p in &sweep.points {
        t.push(vec![p.bias_gauss, p.x, p.y, p.x.hypot(p.y)]);
    }
    out.tables.push(t);
    Ok(out)
}

/// Analyzer traces of the detector output around the modulation frequency
/// for a coherent and a squeezed probe sharing one noise seed.
pub fn sa_compare(v: &ValidatedConfig, seed: u64) -> Result<Outcome, ScenarioError> {
    let c = v.config();
    let d = v.derived();
    let mut out = Outcome::new(ScenarioKind::SaCompare, c);
    let det = &c.detection;
    let fs = det.sample_rate_hz;
    let averages = ((det.sa_rbw_hz / det.sa_vbw_hz).round() as usize).max(1);
    let len = required_length(fs, det.sa_rbw_hz, averages);
    let mut model = BlochModel::from_config(v);
    model.field.injection = None;
    let traj = simulate_trajectory(v, &model, len)?;
    let phi: Vec<f64> = traj.samples.iter().map(|s| d.coupling * s.y).collect();
    let noise_seed = derive_seed(seed, "sa-compare");
    out.seeds.push(("noise".into(), noise_seed));

    let f_m = c.pump.mod_freq_hz;
    let mut floors = Vec::new();
    for (label, squeezed) in [("coherent", false), ("squeezed", true)] {
        let model = NoiseModel::from_config(v, squeezed);
        let noise = synthesize_probe_noise(&model, len, fs, noise_seed);
        let series = assemble_detector_output(
            &phi,
            fs,
            traj.start_time,
            &noise,
            d.volts_per_rad,
            Provenance { config_hash: v.hash(), seed: noise_seed },
        )
        .map_err(SimError::from)?;
        let trace = sa_trace(&series.samples, fs, det.sa_rbw_hz, det.sa_vbw_hz, f_m, c.run.sa_span_hz)
            .map_err(SimError::from)?;
        let floor = noise_floor_estimate(&trace, f_m, c.run.sa_carrier_exclusion_hz).map_err(SimError::from)?;
        out.put(&format!("floor_{label}_db"), floor.floor);
        out.put(&format!("floor_{label}_spread_db"), floor.spread);
        out.put(&format!("floor_{label}_std_error_db"), floor.std_error);
        out.put(&format!("carrier_{label}_db"), trace.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        for (name, _, db) in noise.breakdown.rows() {
            if db.is_finite() {
                out.put(&format!("noise_{label}_{name}_db"), db);
            }
        }
        let mut t =
            out.table_meta(Table::new(&format!("sa_{label}.tsv"), &["freq_hz", "power_db"]), "Hz, dB re 1 V^2 in RBW");
        t = t
            .meta("rbw_hz", trace.rbw)
            .meta("vbw_hz", det.sa_vbw_hz)
            .meta("averages", trace.averages)
            .meta("reference", "1 V^2")
            .meta("probe", label);
        for (f, p) in trace.freqs.iter().zip(&trace.values) {
            t.push(vec![*f, *p]);
        }
        out.tables.push(t);
        floors.push(floor.floor);
    }
    let coherent = NoiseModel::from_config(v, false).white_psd();
    let squeezed = NoiseModel::from_config(v, true).white_psd();
    out.put("floor_gap_db", floors[1] - floors[0]);
    out.put("expected_floor_gap_db", 10.0 * (squeezed / coherent).log10());
    out.put("rbw_hz", det.sa_rbw_hz);
    out.put("vbw_hz", det.sa_vbw_hz);
    out.put("averages", averages as f64);
    Ok(out)
}

/// Magnetic sensitivity spectra for both probe states.
pub fn sensitivity_scenario(v: &ValidatedConfig, seed: u64) -> Result<Outcome, ScenarioError> {
    let c = v.config();
    let mut out = Outcome::new(ScenarioKind::Sensitivity, c);
    let op = calibrate_operating_point(v)?;
    let response = response_spectrum(v, op.phase, &c.run.response_freqs_hz)?;
    let noise = noise_run(v, op.phase, seed)?;
    out.seeds.push(("probe".into(), derive_seed(seed, "probe")));
    let coherent = sensitivity_spectrum(&noise.coherent, &response);
    let squeezed = sensitivity_spectrum(&noise.squeezed, &response);
    let band = c.run.plateau_band_hz;
    let pc = coherent.plateau_pt(band)?;
    let ps = squeezed.plateau_pt(band)?;

    out.put("lockin_phase_rad", op.phase);
    out.put("crossing_gauss", op.crossing_gauss);
    out.put("slope_v_per_gauss", op.slope_v_per_gauss);
    out.put("response_dc_v_per_gauss", response.fit.dc_gain);
    out.put("lockin_pole_hz", response.fit.lockin_pole_hz);
    out.put("spin_pole_hz", response.fit.other_pole_hz);
    out.put("linearity_deviation", response.linearity_deviation);
    out.put("plateau_coherent_pt", pc);
    out.put("plateau_squeezed_pt", ps);
    out.put("plateau_ratio", ps / pc);
    out.put("improvement_percent", improvement_percent(ps / pc));
    out.put("plateau_band_low_hz", band[0]);
    out.put("plateau_band_high_hz", band[1]);

    let mut t = out
        .table_meta(Table::new("discrimination.tsv", &["bias_gauss", "x_v", "y_v"]), "G, V, V")
        .meta("lockin_phase_rad", op.phase);
    for p in &op.sweep.points {
        t.push(vec![p.bias_gauss, p.x, p.y]);
    }
    out.tables.push(t);

    let mut t = out
        .table_meta(
            Table::new("response.tsv", &["freq_hz", "response_v_per_gauss", "two_pole_fit_v_per_gauss"]),
            "Hz, V/G, V/G",
        )
        .meta("injection_amplitude_gauss", c.field.injection_amplitude_gauss);
    for (f, m) in response.freqs.iter().zip(&response.magnitude) {
        t.push(vec![*f, *m, response.fit.magnitude(*f)]);
    }
    out.tables.push(t);

    let mut t = out
        .table_meta(
            Table::new("noise_asd.tsv", &["freq_hz", "coherent_v_rthz", "squeezed_v_rthz"]),
            "Hz, V/rtHz, V/rtHz",
        )
        .meta("rbw_hz", noise.coherent.rbw)
        .meta("averages", noise.coherent.averages);
    for i in 0..noise.coherent.freqs.len() {
        t.push(vec![noise.coherent.freqs[i], noise.coherent.values[i], noise.squeezed.values[i]]);
    }
    out.tables.push(t);

    let mut t = out.table_meta(
        Table::new("sensitivity.tsv", &["freq_hz", "coherent_pt_rthz", "squeezed_pt_rthz"]),
        "Hz, pT/rtHz, pT/rtHz",
    );
    for i in 0..coherent.freqs.len() {
        t.push(vec![
            coherent.freqs[i],
            coherent.values[i] * crate::physics::PICOTESLA_PER_GAUSS,
            squeezed.values[i] * crate::physics::PICOTESLA_PER_GAUSS,
        ]);
    }
    out.tables.push(t);

    out.tables.push(trajectory_table(v, &out)?);
    Ok(out)
}

/// First millisecond of the steady-state spin trajectory at the operating
/// point.
fn trajectory_table(v: &ValidatedConfig, out: &Outcome) -> Result<Table, SimError> {
    let mut model = BlochModel::from_config(v);
    model.field.injection = None;
    let records = (1e-3 * v.config().detection.sample_rate_hz).round() as usize;
    let traj = simulate_trajectory(v, &model, records)?;
    let mut t = out.table_meta(Table::new("trajectory.tsv", &["t_s", "sx", "sy", "sz"]), "s, 1, 1, 1");
    for (i, s) in traj.samples.iter().enumerate() {
        t.push(vec![traj.time(i), s.x, s.y, s.z]);
    }
    Ok(t)
}

/// Writes the outcome's tables and resolved configuration into `dir`, then
/// the manifest. On any failure the files written so far are removed.
pub fn write_outcome(outcome: &Outcome, dir: &Path, wall_clock_s: Option<f64>) -> Result<Manifest, ScenarioError> {
    let io = |path: &Path, source: std::io::Error| ScenarioError::Io { path: path.display().to_string(), source };
    let mut writer = output::ArtifactWriter::create(dir).map_err(|e| io(dir, e))?;
    let result = (|| {
        writer.write("config.toml", &outcome.config_toml).map_err(|e| io(&dir.join("config.toml"), e))?;
        for t in &outcome.tables {
            writer.write(&t.file_name, &t.render()).map_err(|e| io(&dir.join(&t.file_name), e))?;
        }
        let manifest = manifest_for(outcome, writer.records().to_vec(), wall_clock_s);
        writer
            .write(MANIFEST_NAME, &output::render_manifest(&manifest))
            .map_err(|e| io(&dir.join(MANIFEST_NAME), e))?;
        Ok(manifest)
    })();
    if result.is_err() {
        writer.discard();
    }
    result
}

fn manifest_for(outcome: &Outcome, files: Vec<FileRecord>, wall_clock_s: Option<f64>) -> Manifest {
    let mut seeds = toml::Table::new();
    seeds.insert("root".into(), toml::Value::Integer(outcome.root_seed as i64));
    for (k, s) in &outcome.seeds {
        // Stream seeds use all 64 bits, beyond TOML's signed integers.
        seeds.insert(k.clone(), toml::Value::String(format!("{s:016x}")));
    }
    let mut summary = toml::Table::new();
    for (k, v) in &outcome.summary {
        summary.insert(k.clone(), toml::Value::Float(*v));
    }
    Manifest {
        tool: "amor".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        scenario: outcome.scenario.name().into(),
        config_hash: outcome.config_hash.clone(),
        root_seed: outcome.root_seed,
        passed: outcome.passed,
        wall_clock_s,
        seeds,
        summary,
        files,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    #[test]
    fn scenario_names_round_trip() {
        for k in ScenarioKind::ALL {
            assert_eq!(ScenarioKind::from_name(k.name()), Some(k));
        }
        assert_eq!(ScenarioKind::from_name("nope"), None);
    }

    #[test]
    fn invalid_config_maps_to_usage_code() {
        let mut cfg = ExperimentConfig::paper_default();
        cfg.pump.duty = 1.5;
        let err = run(ScenarioKind::DcSweep, &cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn dc_sweep_is_odd_with_extrema_at_half_width() {
        let mut cfg = ExperimentConfig::paper_default();
        cfg.run.dc_sweep_points = 81;
        let out = run(ScenarioKind::DcSweep, &cfg).unwrap();
        let step = out.metric("grid_step_gauss").unwrap();
        let expected = out.metric("expected_extremum_gauss").unwrap();
        assert!((out.metric("extremum_max_gauss").unwrap() - expected).abs() <= step);
        assert!((out.metric("extremum_min_gauss").unwrap() + expected).abs() <= step);
        assert!(out.metric("odd_residual").unwrap() < 1e-12);
        assert!(out.metric("closed_form_max_deviation").unwrap() < 1e-3);
    }

    #[test]
    fn write_outcome_records_every_file() {
        let mut cfg = ExperimentConfig::paper_default();
        cfg.run.dc_sweep_points = 11;
        let out = run(ScenarioKind::DcSweep, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = write_outcome(&out, dir.path(), None).unwrap();
        let names: Vec<&str> = m.files.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["config.toml", "dc_sweep.tsv"]);
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_NAME)).unwrap();
        assert!(text.contains(&out.config_hash));
        assert!(!text.contains("wall_clock"));
        let written = std::fs::read(dir.path().join("dc_sweep.tsv")).unwrap();
        assert_eq!(m.files[1].sha256, output::sha256_hex(&written));
    }

    #[test]
    fn failed_write_leaves_nothing_behind() {
        let mut cfg = ExperimentConfig::paper_default();
        cfg.run.dc_sweep_points = 5;
        let mut out = run(ScenarioKind::DcSweep, &cfg).unwrap();
        out.tables.push(Table::new("missing/sub/dir.tsv", &["a"]));
        let dir = tempfile::tempdir().unwrap();
        let err = write_outcome(&out, dir.path(), None).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
