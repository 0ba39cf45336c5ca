//! Closed-form equilibrium analysis: the Newton-oscillator frequency, the
//! kinetic-vs-collapse balance, and the equilibrium rate/width for the atomic
//! and nuclear cutoff choices.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};

/// Cutoff mode of the equilibrium analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumMode {
    /// density coarse-grained over atomic scales: the rate is the ordinary
    /// Newton-oscillator frequency of the mean density
    Atomic,
    /// nuclear resolution: the rate is the Newton-oscillator frequency of
    /// nuclear-density matter
    Nuclear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceRates {
    /// hbar / (M dx^2) [1/s]
    pub kinetic_rate: f64,
    /// M omega^2 dx^2 / hbar [1/s]
    pub collapse_rate: f64,
    /// sqrt(kinetic * collapse); algebraically equal to omega
    pub geometric_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub omega_g: f64,
    pub omega_g_nucl: f64,
    pub equilibrium_rate: f64,
    pub equilibrium_time: f64,
    pub localization_width: f64,
    pub mode: EquilibriumMode,
    pub mass: f64,
    pub density: f64,
    pub nucleus_density: f64,
}

/// Newton-oscillator frequency omega = sqrt(4 pi G rho / 3) of a probe inside
/// a homogeneous ball of density rho.
pub fn newton_frequency(density: f64, consts: &PhysicalConstants) -> Result<f64> {
    consts.validate()?;
    if !(density > 0.0 && density.is_finite()) {
        return Err(Error::NonPositiveDensity(density));
    }
    Ok((4.0 * PI * consts.newton_g * density / 3.0).sqrt())
}

/// The two competing rates at width dx and their geometric mean.
pub fn balance_check(
    mass: f64,
    width: f64,
    omega: f64,
    consts: &PhysicalConstants,
) -> Result<BalanceRates> {
    consts.validate()?;
    if !(mass > 0.0 && width > 0.0 && omega > 0.0) {
        return Err(Error::InvalidParameter(
            "balance check needs strictly positive mass, width, and frequency".into(),
        ));
    }
    let kinetic = consts.hbar / (mass * width * width);
    let collapse = mass * omega * omega * width * width / consts.hbar;
    Ok(BalanceRates {
        kinetic_rate: kinetic,
        collapse_rate: collapse,
        geometric_mean: (kinetic * collapse).sqrt(),
    })
}

/// Balance width sqrt(hbar / (M omega)) at which the two rates meet.
pub fn balance_width(mass: f64, omega: f64, consts: &PhysicalConstants) -> f64 {
    (consts.hbar / (mass * omega)).sqrt()
}

/// Closed-form equilibrium prediction for a free object of mass `mass` made
/// of matter with mean density `density` and nuclear density
/// `nucleus_density`.  The rate is mass- and size-independent; the width is
/// not.
pub fn equilibrium_report(
    mass: f64,
    density: f64,
    nucleus_density: f64,
    mode: EquilibriumMode,
    consts: &PhysicalConstants,
) -> Result<EquilibriumReport> {
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::InvalidParameter(format!("mass must be positive, got {mass}")));
    }
    let omega_g = newton_frequency(density, consts)?;
    let omega_g_nucl = newton_frequency(nucleus_density, consts)?;
    let omega = match mode {
        EquilibriumMode::Atomic => omega_g,
        EquilibriumMode::Nuclear => omega_g_nucl,
    };
    Ok(EquilibriumReport {
        omega_g,
        omega_g_nucl,
        equilibrium_rate: omega,
        equilibrium_time: 1.0 / omega,
        localization_width: balance_width(mass, omega, consts),
        mode,
        mass,
        density,
        nucleus_density,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn consts() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    #[test]
    fn ordinary_matter_frequency_scale() {
        let w = newton_frequency(1000.0, &consts()).unwrap();
        assert_relative_eq!(w, 5.29e-4, max_relative = 0.005);
        assert!(w > 1e-4 && w < 1e-2);
    }

    #[test]
    fn nuclear_matter_frequency_scale() {
        let w = newton_frequency(1e15, &consts()).unwrap();
        assert!(w > 1e2 && w < 1e4, "omega_nucl = {w}");
        assert_relative_eq!(w, 5.29e2, max_relative = 0.005);
    }

    #[test]
    fn frequency_scales_with_sqrt_density() {
        let c = consts();
        let w1 = newton_frequency(1000.0, &c).unwrap();
        let w4 = newton_frequency(4000.0, &c).unwrap();
        assert_relative_eq!(w4, 2.0 * w1, max_relative = 1e-14);
    }

    #[test]
    fn rejects_non_positive_density() {
        assert!(matches!(newton_frequency(0.0, &consts()), Err(Error::NonPositiveDensity(_))));
        assert!(matches!(newton_frequency(-1.0, &consts()), Err(Error::NonPositiveDensity(_))));
    }

    #[test]
    fn balance_point_equalizes_rates() {
        let c = consts();
        let (m, omega) = (1e-3, 529.0);
        let dx = balance_width(m, omega, &c);
        let b = balance_check(m, dx, omega, &c).unwrap();
        assert_relative_eq!(b.kinetic_rate, omega, max_relative = 1e-12);
        assert_relative_eq!(b.collapse_rate, omega, max_relative = 1e-12);
    }

    #[test]
    fn width_halves_when_mass_quadruples() {
        let c = consts();
        let w1 = balance_width(1.0, 1.0, &c);
        let w4 = balance_width(4.0, 1.0, &c);
        assert_relative_eq!(w1, 2.0 * w4, max_relative = 1e-14);
    }

    #[test]
    fn report_scales_for_paper_defaults() {
        let c = consts();
        let atomic = equilibrium_report(1e-3, 1000.0, 1e15, EquilibriumMode::Atomic, &c).unwrap();
        // of the order of one hour
        assert!(atomic.equilibrium_time > 0.1 * 3600.0 && atomic.equilibrium_time < 10.0 * 3600.0);
        let nuclear = equilibrium_report(1e-3, 1000.0, 1e15, EquilibriumMode::Nuclear, &c).unwrap();
        // of the order of one millisecond
        assert!(nuclear.equilibrium_time > 0.1e-3 && nuclear.equilibrium_time < 10e-3);
        // rate ratio sqrt(rho_nucl / rho) = 1e6
        assert_relative_eq!(
            nuclear.equilibrium_rate / atomic.equilibrium_rate,
            1e6,
            max_relative = 1e-12
        );
        // width example: ~1.4e-17 m in nuclear mode at 1 g
        assert_relative_eq!(nuclear.localization_width, 1.4e-17, max_relative = 0.02);
    }

    #[test]
    fn rate_is_mass_and_size_independent() {
        let c = consts();
        let rates: Vec<f64> = [1e-6, 1e-3, 1.0, 1e3]
            .iter()
            .map(|&m| {
                equilibrium_report(m, 1000.0, 1e15, EquilibriumMode::Nuclear, &c)
                    .unwrap()
                    .equilibrium_rate
            })
            .collect();
        for r in &rates[1..] {
            assert_eq!(*r, rates[0]);
        }
    }

    #[test]
    fn rate_is_hbar_independent_but_width_is_not() {
        let c = consts();
        let scaled = c.with_hbar_scaled(4.0);
        let a = equilibrium_report(1.0, 1000.0, 1e15, EquilibriumMode::Nuclear, &c).unwrap();
        let b = equilibrium_report(1.0, 1000.0, 1e15, EquilibriumMode::Nuclear, &scaled).unwrap();
        assert_eq!(a.equilibrium_rate, b.equilibrium_rate);
        assert_relative_eq!(b.localization_width, 2.0 * a.localization_width, max_relative = 1e-14);
    }

    proptest! {
        #[test]
        fn geometric_mean_identity(
            logm in -6.0f64..3.0,
            logdx in -18.0f64..-3.0,
            logw in -4.0f64..3.0,
        ) {
            let c = consts();
            let (m, dx, w) = (10f64.powf(logm), 10f64.powf(logdx), 10f64.powf(logw));
            let b = balance_check(m, dx, w, &c).unwrap();
            prop_assert!((b.geometric_mean - w).abs() <= 1e-12 * w);
        }
    }
}
