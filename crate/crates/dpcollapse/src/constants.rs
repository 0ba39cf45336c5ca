use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants entering the energy functional and the rate law.
///
/// Defaults are SI values; they are overridable only through explicit
/// configuration (scaled desk-top test universes rescale `newton_g`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicalConstants {
    /// Newton constant G [m^3 kg^-1 s^-2].
    pub newton_g: f64,
    /// Reduced Planck constant [J s].
    pub hbar: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants { newton_g: 6.674e-11, hbar: 1.0546e-34 }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_g > 0.0 && self.newton_g.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "newton_g must be strictly positive and finite, got {}",
                self.newton_g
            )));
        }
        if !(self.hbar > 0.0 && self.hbar.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "hbar must be strictly positive and finite, got {}",
                self.hbar
            )));
        }
        Ok(())
    }

    /// Copy with a rescaled Newton constant.
    pub fn with_g_scaled(&self, factor: f64) -> Self {
        PhysicalConstants { newton_g: self.newton_g * factor, ..*self }
    }

    /// Copy with a rescaled Planck constant.
    pub fn with_hbar_scaled(&self, factor: f64) -> Self {
        PhysicalConstants { hbar: self.hbar * factor, ..*self }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_positive() {
        let c = PhysicalConstants::default();
        c.validate().unwrap();
        assert_eq!(c.newton_g, 6.674e-11);
        assert_eq!(c.hbar, 1.0546e-34);
    }

    #[test]
    fn rejects_non_positive() {
        let c = PhysicalConstants { newton_g: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = PhysicalConstants { hbar: -1.0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
