//! Physical constants and elementary conversions shared by the rest of the crate.
//!
//! Frequencies cross this module boundary in Hz; anything that feeds the
//! equations of motion is converted to rad/s exactly once, in
//! [`crate::config::validate_config`].

use std::f64::consts::PI;

use thiserror::Error;

/// Planck constant, J·s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// One torr in pascal.
pub const TORR_PA: f64 = 133.322_368_421;

/// Gyromagnetic ratio implied by the 580 kHz / 800 mG operating pair, Hz/G.
pub const GAMMA_OPERATING_PAIR: f64 = 725_000.0;
/// Textbook ⁸⁷Rb F=2 ground-state gyromagnetic ratio, Hz/G.
pub const GAMMA_RB87_F2: f64 = 699_580.0;

/// Temperature at which the cell density is anchored, °C.
pub const ANCHOR_TEMPERATURE_C: f64 = 40.3;
/// Rb number density at [`ANCHOR_TEMPERATURE_C`], cm⁻³.
pub const ANCHOR_DENSITY_CM3: f64 = 5.5e10;

/// Validity range of [`rb_number_density`], °C.
pub const DENSITY_RANGE_C: (f64, f64) = (20.0, 120.0);

pub const GAUSS_PER_TESLA: f64 = 1.0e4;
pub const PICOTESLA_PER_GAUSS: f64 = 1.0e8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("temperature {0} °C outside the vapor-density model range [20, 120] °C")]
    Temperature(f64),
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
}

/// Larmor frequency in Hz for a field in gauss. The sign of `bz` (precession
/// direction) is not part of the result; see [`larmor_angular`].
pub fn larmor_frequency(bz_gauss: f64, gamma_hz_per_gauss: f64) -> f64 {
    gamma_hz_per_gauss * bz_gauss.abs()
}

/// Signed Larmor angular frequency, rad/s.
pub fn larmor_angular(bz_gauss: f64, gamma_hz_per_gauss: f64) -> f64 {
    2.0 * PI * gamma_hz_per_gauss * bz_gauss
}

/// Field at which the Larmor frequency equals `freq_hz`.
pub fn resonant_field(freq_hz: f64, gamma_hz_per_gauss: f64) -> f64 {
    freq_hz / gamma_hz_per_gauss
}

/// Uncalibrated saturated-vapor density of liquid Rb, cm⁻³.
///
/// Uses the liquid-phase vapor-pressure fit over the whole range so the law
/// stays smooth across the 39.3 °C melting point.
fn rb_vapor_density_raw(temp_c: f64) -> f64 {
    let t = temp_c + 273.15;
    let log10_p_torr = 15.882_53 - 4529.635 / t + 0.000_586_63 * t - 2.991_38 * t.log10();
    let pressure_pa = 10f64.powf(log10_p_torr) * TORR_PA;
    pressure_pa / (BOLTZMANN * t) * 1.0e-6
}

/// Rb number density in cm⁻³, rescaled so the anchor temperature maps onto
/// the anchor density exactly.
pub fn rb_number_density(temp_c: f64) -> Result<f64, DomainError> {
    let (lo, hi) = DENSITY_RANGE_C;
    if !(lo..=hi).contains(&temp_c) {
        return Err(DomainError::Temperature(temp_c));
    }
    if temp_c == ANCHOR_TEMPERATURE_C {
        return Ok(ANCHOR_DENSITY_CM3);
    }
    let scale = ANCHOR_DENSITY_CM3 / rb_vapor_density_raw(ANCHOR_TEMPERATURE_C);
    Ok(scale * rb_vapor_density_raw(temp_c))
}

pub fn db_to_variance(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn variance_to_db(variance: f64) -> Result<f64, DomainError> {
    if variance <= 0.0 || variance.is_nan() {
        return Err(DomainError::NonPositiveVariance(variance));
    }
    Ok(10.0 * variance.log10())
}

pub fn hz_to_rad(freq_hz: f64) -> f64 {
    2.0 * PI * freq_hz
}

pub fn gauss_to_tesla(b: f64) -> f64 {
    b / GAUSS_PER_TESLA
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn larmor_matches_operating_pair() {
        assert_relative_eq!(larmor_frequency(0.800, 725_000.0), 580_000.0, max_relative = 1e-12);
        assert_eq!(larmor_frequency(0.0, 123.0), 0.0);
        assert_relative_eq!(larmor_frequency(0.5, 699_580.0), 349_790.0, max_relative = 1e-12);
        assert_relative_eq!(larmor_frequency(-0.8, 725_000.0), 580_000.0, max_relative = 1e-12);
        assert!(larmor_angular(-0.8, 725_000.0) < 0.0);
    }

    #[test]
    fn density_anchor_and_golden_values() {
        assert_eq!(rb_number_density(40.3).unwrap(), 5.5e10);
        // Golden value of the calibrated liquid-phase law, frozen from an
        // independent evaluation of the same vapor-pressure fit.
        let n55 = rb_number_density(55.0).unwrap();
        assert_relative_eq!(n55, 2.074_398_744_6e11, max_relative = 1e-8);
        assert!(matches!(rb_number_density(19.9), Err(DomainError::Temperature(_))));
        assert!(rb_number_density(121.0).is_err());
    }

    #[test]
    fn density_strictly_increasing() {
        let mut prev = rb_number_density(20.0).unwrap();
        let mut t: f64 = 20.0;
        while t < 120.0 {
            t += 0.25;
            let n = rb_number_density(t.min(120.0)).unwrap();
            assert!(n > prev, "not increasing at {t}");
            prev = n;
        }
    }

    #[test]
    fn db_variance_examples() {
        assert_relative_eq!(db_to_variance(-1.9), 0.645_654_229, max_relative = 1e-8);
        assert_eq!(db_to_variance(0.0), 1.0);
        assert_relative_eq!(variance_to_db(0.6811).unwrap(), -1.667_891, epsilon = 1e-5);
        assert!(variance_to_db(0.0).is_err());
        assert!(variance_to_db(-1.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn db_round_trip(db in -40.0f64..40.0) {
            let back = variance_to_db(db_to_variance(db)).unwrap();
            proptest::prop_assert!((back - db).abs() <= 1e-12 * db.abs().max(1.0));
        }

        #[test]
        fn larmor_is_linear(b in 1e-6f64..10.0, a in 1e-3f64..100.0) {
            let lhs = larmor_frequency(a * b, GAMMA_OPERATING_PAIR);
            let rhs = a * larmor_frequency(b, GAMMA_OPERATING_PAIR);
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs);
        }
    }
}
