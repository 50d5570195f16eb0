//! Cell-temperature scan: carrier amplitude, analyzer floors and SNR.

use rayon::prelude::*;

use super::{Outcome, ScenarioError, ScenarioKind, Table};
use crate::config::{validate_config, ValidatedConfig};
use crate::dsp::{
    assemble_detector_output, noise_floor_estimate, sa_trace, spectrum::required_length, tone_phasor, Provenance,
    Window,
};
use crate::noise::{derive_seed, synthesize_probe_noise, NoiseModel};
use crate::sensitivity::{simulate_trajectory, SimError};
use crate::spin::BlochModel;

#[derive(Debug, Clone, PartialEq)]
struct Row {
    temperature_c: f64,
    density_cm3: f64,
    transmission: f64,
    pump_rate: f64,
    signal_v: f64,
    floor_coherent_db: f64,
    floor_squeezed_db: f64,
    snr_coherent: f64,
    snr_squeezed: f64,
}

/// Scans the cell temperature over the configured grid plus the
/// normalization temperature. The spin response is linear in the pump rate,
/// so one unit-rate trajectory is rescaled at every temperature; the probe
/// noise is synthesized afresh for each point.
pub fn temp_scan(v: &ValidatedConfig, seed: u64) -> Result<Outcome, ScenarioError> {
    let c = v.config();
    let mut out = Outcome::new(ScenarioKind::TempScan, c);
    let det = &c.detection;
    let fs = det.sample_rate_hz;
    let f_m = c.pump.mod_freq_hz;
    let norm_t = c.run.temp_normalization_c;

    let mut temps = c.run.temp_grid_c.clone();
    if !temps.iter().any(|t| (t - norm_t).abs() < 1e-9) {
        temps.push(norm_t);
    }
    temps.sort_by(f64::total_cmp);

    let averages = ((det.sa_rbw_hz / det.sa_vbw_hz).round() as usize).max(1);
    let len = required_length(fs, det.sa_rbw_hz, averages);
    let mut unit = BlochModel::from_config(v);
    unit.pump.peak_rate = 1.0;
    unit.field.injection = None;
    let traj = simulate_trajectory(v, &unit, len)?;
    let unit_sy: Vec<f64> = traj.samples.iter().map(|s| s.y).collect();
    let start_time = traj.start_time;
    drop(traj);
    let noise_seed = derive_seed(seed, "temp-scan");
    out.seeds.push(("noise".into(), noise_seed));
    let enbw_hz = Window::Hann.enbw_bins() * fs / (fs / det.sa_rbw_hz).round();

    let rows = temps
        .par_iter()
        .map(|&t| -> Result<Row, ScenarioError> {
            let mut cfg = c.clone();
            cfg.cell.temperature_c = t;
            cfg.cell.density_override_cm3 = None;
            let vt = validate_config(&cfg)?;
            let d = vt.derived();
            let phi: Vec<f64> = unit_sy.iter().map(|s| d.coupling * d.pump_rate * s).collect();
            let signal_v = d.volts_per_rad * tone_phasor(&phi, fs, f_m).norm();
            let mut floors = [0.0; 2];
            for (k, squeezed) in [false, true].into_iter().enumerate() {
                let noise = synthesize_probe_noise(&NoiseModel::from_config(&vt, squeezed), len, fs, noise_seed);
                let series = assemble_detector_output(
                    &phi,
                    fs,
                    start_time,
                    &noise,
                    d.volts_per_rad,
                    Provenance { config_hash: vt.hash(), seed: noise_seed },
                )
                .map_err(SimError::from)?;
                let trace = sa_trace(&series.samples, fs, det.sa_rbw_hz, det.sa_vbw_hz, f_m, c.run.sa_span_hz)
                    .map_err(SimError::from)?;
                floors[k] =
                    noise_floor_estimate(&trace, f_m, c.run.sa_carrier_exclusion_hz).map_err(SimError::from)?.floor;
            }
            let asd = |db: f64| (10f64.powf(db / 10.0) / enbw_hz).sqrt();
            Ok(Row {
                temperature_c: t,
                density_cm3: d.density_cm3,
                transmission: d.probe_transmission,
                pump_rate: d.pump_rate,
                signal_v,
                floor_coherent_db: floors[0],
                floor_squeezed_db: floors[1],
                snr_coherent: signal_v / asd(floors[0]),
                snr_squeezed: signal_v / asd(floors[1]),
            })
        })
        .collect::<Result<Vec<Row>, ScenarioError>>()?;

    let norm_row = rows.iter().find(|r| (r.temperature_c - norm_t).abs() < 1e-9).expect("normalization point inserted");
    let signal_norm: Vec<f64> = rows.iter().map(|r| r.signal_v / norm_row.signal_v).collect();
    let snr_ref = norm_row.snr_coherent;
    let temps_out: Vec<f64> = rows.iter().map(|r| r.temperature_c).collect();
    let peak = |vals: &[f64]| -> (f64, f64) {
        let i = super::argmax(vals);
        let refined = if i > 0 && i + 1 < vals.len() {
            parabola_vertex(&temps_out[i - 1..=i + 1], &vals[i - 1..=i + 1]).unwrap_or(temps_out[i])
        } else {
            temps_out[i]
        };
        (temps_out[i], refined)
    };
    let (sig_peak, sig_refined) = peak(&signal_norm);
    let (snr_sq_peak, snr_sq_refined) = peak(&rows.iter().map(|r| r.snr_squeezed).collect::<Vec<_>>());
    let (snr_coh_peak, _) = peak(&rows.iter().map(|r| r.snr_coherent).collect::<Vec<_>>());
    let gaps: Vec<f64> = rows.iter().map(|r| r.floor_squeezed_db - r.floor_coherent_db).collect();
    let max_gap = gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    out.put("signal_peak_c", sig_peak);
    out.put("signal_peak_refined_c", sig_refined);
    out.put("snr_squeezed_peak_c", snr_sq_peak);
    out.put("snr_squeezed_peak_refined_c", snr_sq_refined);
    out.put("snr_coherent_peak_c", snr_coh_peak);
    out.put("max_floor_gap_db", max_gap);
    out.put("squeezed_below_coherent_everywhere", if max_gap < 0.0 { 1.0 } else { 0.0 });
    out.put("normalization_c", norm_t);

    let mut t = out
        .table_meta(
            Table::new(
                "temp_scan.tsv",
                &[
                    "temperature_c",
                    "density_cm3",
                    "probe_transmission",
                    "pump_rate_s",
                    "signal_v",
                    "signal_norm",
                    "floor_coherent_db",
                    "floor_squeezed_db",
                    "snr_coherent_rthz",
                    "snr_squeezed_rthz",
                    "snr_coherent_norm",
                    "snr_squeezed_norm",
                ],
            ),
            "C, cm^-3, 1, 1/s, V, 1, dB re 1 V^2 in RBW, dB re 1 V^2 in RBW, rtHz, rtHz, 1, 1",
        )
        .meta("rbw_hz", det.sa_rbw_hz)
        .meta("vbw_hz", det.sa_vbw_hz)
        .meta("averages", averages)
        .meta("reference", "1 V^2")
        .meta("normalization_c", norm_t);
    for (r, n) in rows.iter().zip(&signal_norm) {
        t.push(vec![
            r.temperature_c,
            r.density_cm3,
            r.transmission,
            r.pump_rate,
            r.signal_v,
            *n,
            r.floor_coherent_db,
            r.floor_squeezed_db,
            r.snr_coherent,
            r.snr_squeezed,
            r.snr_coherent / snr_ref,
            r.snr_squeezed / snr_ref,
        ]);
    }
    out.tables.push(t);
    Ok(out)
}

/// Abscissa of the vertex of the parabola through three points.
fn parabola_vertex(x: &[f64], y: &[f64]) -> Option<f64> {
    let (x0, x1, x2) = (x[0], x[1], x[2]);
    let (y0, y1, y2) = (y[0], y[1], y[2]);
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let curvature = (d12 - d01) / (x2 - x0);
    if curvature >= 0.0 {
        return None;
    }
    Some(0.5 * (x0 + x1) - d01 / (2.0 * curvature))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn vertex_of_known_parabola() {
        let f = |x: f64| -2.0 * (x - 53.0).powi(2) + 7.0;
        let x = [45.0, 50.0, 55.0];
        let y = x.map(f);
        assert_relative_eq!(parabola_vertex(&x, &y).unwrap(), 53.0, epsilon = 1e-9);
        assert!(parabola_vertex(&[0.0, 1.0, 2.0], &[0.0, 1.0, 4.0]).is_none());
    }
}
