//! Catness and collapse rates.
//!
//! The catness of a superposition of two mass densities is
//! l_G^2 = 2U(f,f') - U(f,f) - U(f',f'); it equals the (sign-flipped)
//! Coulomb-form self-energy of f - f', hence is non-negative.  The collapse
//! rate is l_G^2 / hbar by definition; the lifetime is its inverse.  This
//! module adopts that rate as the coherence-decay rate literally (factor-of-2
//! conventions differ across the literature).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::density::{self, GranularBall, GridSpec, MassDistribution, VoxelGrid};
use crate::error::{Error, Result};
use crate::potential::{
    self, displaced_pair_energy_granular, displaced_pair_energy_smeared, grid_catness_energies,
    EnergyMethod, EnergyResult, GridOptions,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatnessResult {
    /// l_G^2 [J].
    pub catness: f64,
    /// U(f,f') [J].
    pub mutual_energy: f64,
    /// U(f,f) [J].
    pub self_energy_f: f64,
    /// U(f',f') [J].
    pub self_energy_fp: f64,
    /// l_G^2 / hbar [1/s].
    pub rate: f64,
    /// hbar / l_G^2 [s]; infinite at zero catness.
    pub lifetime: f64,
    pub method: EnergyMethod,
    pub estimated_relative_error: f64,
    /// true when a small negative catness within the numerical tolerance was
    /// clamped to zero
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveAxis {
    Displacement,
    SmearLength,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    /// displacement [m] or smear length [m] depending on the curve axis
    pub x: f64,
    pub catness: f64,
    pub rate: f64,
    pub method: EnergyMethod,
    pub estimated_relative_error: f64,
}

/// A rate-vs-displacement or rate-vs-smearing curve with its quadratic fit
/// rate = kappa * dx^2 (fitted over the smallest displacement decade; for
/// smearing curves kappa is the granular s = 0 coefficient).
#[derive(Debug, Clone, PartialEq)]
pub struct RateCurve {
    pub axis: CurveAxis,
    pub points: Vec<RatePoint>,
    /// kappa [1/(s m^2)]
    pub kappa: f64,
    /// kappa * hbar / (M omega^2), the dimensionless coefficient of the
    /// quadratic rate law (~1 for a homogeneous ball)
    pub kappa_normalized: f64,
    /// max relative deviation of the fitted window from kappa * dx^2
    pub fit_residual: f64,
    /// saturation value l_G^2(dx -> infinity)/hbar when available [1/s]
    pub saturation_rate: Option<f64>,
}

fn assemble(
    mutual: EnergyResult,
    self_f: EnergyResult,
    self_fp: EnergyResult,
    consts: &PhysicalConstants,
) -> Result<CatnessResult> {
    let lg2 = 2.0 * mutual.value - self_f.value - self_fp.value;
    let scale = 2.0 * mutual.value.abs() + self_f.value.abs() + self_fp.value.abs();
    let err = mutual
        .estimated_relative_error
        .max(self_f.estimated_relative_error)
        .max(self_fp.estimated_relative_error);
    // Positivity is a theorem of the Coulomb form; tolerate round-off only.
    let tol = scale * err.max(1e-12);
    let (catness, clamped) = if lg2 < 0.0 {
        if -lg2 <= tol {
            (0.0, true)
        } else {
            return Err(Error::NumericalInconsistency(format!(
                "catness {lg2} is negative beyond the numerical tolerance {tol}"
            )));
        }
    } else {
        (lg2, false)
    };
    let rate = catness / consts.hbar;
    Ok(CatnessResult {
        catness,
        mutual_energy: mutual.value,
        self_energy_f: self_f.value,
        self_energy_fp: self_fp.value,
        rate,
        lifetime: if rate > 0.0 { 1.0 / rate } else { f64::INFINITY },
        method: mutual.method,
        estimated_relative_error: err,
        clamped,
    })
}

/// True when `b` is a rigid translate of `a`, returning the offset.
fn translation_offset(a: &MassDistribution, b: &MassDistribution) -> Option<[f64; 3]> {
    match (a, b) {
        (MassDistribution::UniformBall(x), MassDistribution::UniformBall(y)) => {
            if (x.radius - y.radius).abs() <= 1e-12 * x.radius
                && (x.density - y.density).abs() <= 1e-12 * x.density
            {
                Some([
                    y.center[0] - x.center[0],
                    y.center[1] - x.center[1],
                    y.center[2] - x.center[2],
                ])
            } else {
                None
            }
        }
        (MassDistribution::GranularBall(x), MassDistribution::GranularBall(y)) => {
            granular_offset(x, y)
        }
        (MassDistribution::SmearedGranular(x), MassDistribution::SmearedGranular(y)) => {
            if (x.smear_length - y.smear_length).abs() <= 1e-12 * x.smear_length {
                granular_offset(&x.base, &y.base)
            } else {
                None
            }
        }
        _ => None,
    }
}

fn granular_offset(x: &GranularBall, y: &GranularBall) -> Option<[f64; 3]> {
    let close = |p: f64, q: f64, s: f64| (p - q).abs() <= 1e-12 * s;
    if !(close(x.radius, y.radius, x.radius)
        && close(x.nucleus_radius, y.nucleus_radius, x.nucleus_radius)
        && close(x.nucleus_density, y.nucleus_density, x.nucleus_density)
        && close(x.lattice_spacing, y.lattice_spacing, x.lattice_spacing))
    {
        return None;
    }
    let off = [
        y.center[0] - x.center[0],
        y.center[1] - x.center[1],
        y.center[2] - x.center[2],
    ];
    for ax in 0..3 {
        let lat = y.lattice_origin[ax] - x.lattice_origin[ax];
        if (lat - off[ax]).abs() > 1e-12 * (x.radius + off[ax].abs()) {
            return None;
        }
    }
    Some(off)
}

/// The catness l_G^2(f,f') and the derived rate/lifetime.
pub fn catness(
    f: &MassDistribution,
    fp: &MassDistribution,
    consts: &PhysicalConstants,
    opts: &GridOptions,
) -> Result<CatnessResult> {
    consts.validate()?;
    if matches!(f, MassDistribution::PointSet(_)) || matches!(fp, MassDistribution::PointSet(_)) {
        return Err(Error::SingularSelfEnergy);
    }
    // translated pairs share a self-energy and have exact routes
    if let Some(off) = translation_offset(f, fp) {
        return catness_translated(f, off, consts, opts);
    }
    match (f, fp) {
        (MassDistribution::UniformBall(a), MassDistribution::UniformBall(b)) => {
            let mutual = potential::mutual_energy_uniform_balls(a, b, consts).or_else(|e| match e {
                Error::UnsupportedGeometry(_) => grid_mutual(f, fp, consts, opts),
                other => Err(other),
            })?;
            let sf = potential::self_energy(f, consts, opts)?;
            let sfp = potential::self_energy(fp, consts, opts)?;
            assemble(mutual, sf, sfp, consts)
        }
        _ => {
            let (gf, gfp) = common_grids(f, fp, opts)?;
            let [uff, uffp, ufpfp] = grid_catness_energies(&gf, &gfp, consts, opts)?;
            assemble(uffp, uff, ufpfp, consts)
        }
    }
}

/// Catness of f against its own rigid translate, using
/// l_G^2 = 2 [U(f, T f) - U(f, f)].
fn catness_translated(
    f: &MassDistribution,
    offset: [f64; 3],
    consts: &PhysicalConstants,
    opts: &GridOptions,
) -> Result<CatnessResult> {
    match f {
        MassDistribution::UniformBall(a) => {
            let d = (offset[0] * offset[0] + offset[1] * offset[1] + offset[2] * offset[2]).sqrt();
            let m = a.mass();
            let lg2 = 2.0 * consts.newton_g * m * m / a.radius
                * potential::ball_displaced_catness_factor(d / a.radius);
            let sf = potential::self_energy(f, consts, opts)?;
            let rate = lg2 / consts.hbar;
            Ok(CatnessResult {
                catness: lg2,
                mutual_energy: sf.value + lg2 / 2.0,
                self_energy_f: sf.value,
                self_energy_fp: sf.value,
                rate,
                lifetime: if rate > 0.0 { 1.0 / rate } else { f64::INFINITY },
                method: EnergyMethod::Analytic,
                estimated_relative_error: 1e-14,
                clamped: false,
            })
        }
        MassDistribution::GranularBall(g) => {
            let mutual = displaced_pair_energy_granular(g, offset, consts)?;
            let sf = displaced_pair_energy_granular(g, [0.0; 3], consts)?;
            assemble(mutual, sf, sf, consts)
        }
        MassDistribution::SmearedGranular(sg) => {
            let mutual = displaced_pair_energy_smeared(sg, offset, consts)?;
            let sf = displaced_pair_energy_smeared(sg, [0.0; 3], consts)?;
            assemble(mutual, sf, sf, consts)
        }
        _ => {
            let fp = f.translate(offset);
            let (gf, gfp) = common_grids(f, &fp, opts)?;
            let [uff, uffp, ufpfp] = grid_catness_energies(&gf, &gfp, consts, opts)?;
            assemble(uffp, uff, ufpfp, consts)
        }
    }
}

fn grid_mutual(
    f: &MassDistribution,
    fp: &MassDistribution,
    consts: &PhysicalConstants,
    opts: &GridOptions,
) -> Result<EnergyResult> {
    let (gf, gfp) = common_grids(f, fp, opts)?;
    potential::mutual_energy_grid(&gf, &gfp, EnergyMethod::Fft, consts, opts)
}

/// Rasterize both distributions on one shared grid layout so their sampling
/// errors correlate and mostly cancel in the catness difference.
fn common_grids(
    f: &MassDistribution,
    fp: &MassDistribution,
    opts: &GridOptions,
) -> Result<(VoxelGrid, VoxelGrid)> {
    let bb = f.support().merge(&fp.support());
    let longest = (0..3).map(|i| bb.max[i] - bb.min[i]).fold(0.0f64, f64::max);
    let h = longest / opts.resolution as f64;
    let spec = GridSpec::covering(&bb, h, 2.0 * h);
    let gf = match f {
        MassDistribution::VoxelGrid(v) => v.clone(),
        other => density::rasterize(other, &spec, opts.supersample)?,
    };
    let gfp = match fp {
        MassDistribution::VoxelGrid(v) => v.clone(),
        other => density::rasterize(other, &spec, opts.supersample)?,
    };
    Ok((gf, gfp))
}

/// catness(f, translate(f, dx)) with the shared-self-energy shortcut.
pub fn rate_displaced(
    f: &MassDistribution,
    dx: [f64; 3],
    consts: &PhysicalConstants,
    opts: &GridOptions,
) -> Result<CatnessResult> {
    consts.validate()?;
    if matches!(f, MassDistribution::PointSet(_)) {
        return Err(Error::SingularSelfEnergy);
    }
    catness_translated(f, dx, consts, opts)
}

/// Small-displacement granular rate: every nucleus contributes like a single
/// ball of nuclear density, cross-nucleus terms dropped (they stay below 1%
/// of the total for non-overlapping lattices; see the additivity tests).
pub fn rate_granular_small_disp(
    g: &GranularBall,
    dx: [f64; 3],
    consts: &PhysicalConstants,
) -> Result<CatnessResult> {
    consts.validate()?;
    let d = (dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]).sqrt();
    if d > g.nucleus_radius / 10.0 {
        return Err(Error::ValidityDomain(format!(
            "|dx| = {d} exceeds nucleus_radius/10 = {}",
            g.nucleus_radius / 10.0
        )));
    }
    let n = g.nucleus_count() as f64;
    let m = g.nucleus_mass();
    let rn = g.nucleus_radius;
    // per-nucleus exact ball catness, summed over the lattice
    let w0 = potential::ball_pair_overlap_factor(0.0);
    let wd = potential::ball_pair_overlap_factor(d / rn);
    let per_nucleus = 2.0 * consts.newton_g * m * m / rn * (w0 - wd);
    let lg2 = n * per_nucleus;
    let self_f = -consts.newton_g * n * potential::BALL_SELF_COEFF * m * m / rn;
    let rate = lg2 / consts.hbar;
    // dropped cross-nucleus quadratic terms scale like (r_n / a)^3
    let err = (g.nucleus_radius / g.lattice_spacing).powi(3);
    Ok(CatnessResult {
        catness: lg2,
        mutual_energy: self_f + lg2 / 2.0,
        self_energy_f: self_f,
        self_energy_fp: self_f,
        rate,
        lifetime: if rate > 0.0 { 1.0 / rate } else { f64::INFINITY },
        method: EnergyMethod::Analytic,
        estimated_relative_error: err,
        clamped: false,
    })
}

/// Rate at fixed small displacement for a family of smearing lengths;
/// monotone non-increasing in s.
pub fn rate_vs_smearing(
    base: &GranularBall,
    s_values: &[f64],
    dx: [f64; 3],
    consts: &PhysicalConstants,
    opts: &GridOptions,
) -> Result<RateCurve> {
    consts.validate()?;
    let d = (dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]).sqrt();
    let rn = base.nucleus_radius;
    for &s in s_values {
        let bound = if s > 0.0 { rn.min(s) / 10.0 } else { rn / 10.0 };
        if d > bound {
            return Err(Error::ValidityDomain(format!(
                "|dx| = {d} exceeds min(r_n, s)/10 = {bound} at s = {s}"
            )));
        }
    }
    let family = density::smearing_sweep(base, s_values)?;
    let results: Vec<Result<CatnessResult>> = family
        .par_iter()
        .map(|dist| rate_displaced(dist, dx, consts, opts))
        .collect();
    let mut points = Vec::with_capacity(results.len());
    for (s, r) in s_values.iter().zip(results) {
        let r = r?;
        points.push(RatePoint {
            x: *s,
            catness: r.catness,
            rate: r.rate,
            method: r.method,
            estimated_relative_error: r.estimated_relative_error,
        });
    }
    let kappa = points.first().map(|p| p.rate / (d * d)).unwrap_or(0.0);
    let omega2_nucl = 4.0 * std::f64::consts::PI * consts.newton_g * base.nucleus_density / 3.0;
    let kappa_normalized = kappa * consts.hbar / (base.total_mass() * omega2_nucl);
    Ok(RateCurve {
        axis: CurveAxis::SmearLength,
        points,
        kappa,
        kappa_normalized,
        fit_residual: 0.0,
        saturation_rate: None,
    })
}

/// Direction-resolved rate curve over ascending displacement magnitudes,
/// exact at every point, with the quadratic fit over the smallest decade and
/// the far-separation saturation value.
pub fn full_rate_curve(
    f: &MassDistribution,
    direction: [f64; 3],
    magnitudes: &[f64],
    consts: &PhysicalConstants,
    opts: &GridOptions,
) -> Result<RateCurve> {
    consts.validate()?;
    if magnitudes.is_empty() {
        return Err(Error::InvalidParameter("displacement list must not be empty".into()));
    }
    if magnitudes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("displacements must be strictly ascending".into()));
    }
    if magnitudes[0] <= 0.0 {
        return Err(Error::InvalidParameter("displacements must be strictly positive".into()));
    }
    let norm =
        (direction[0] * direction[0] + direction[1] * direction[1] + direction[2] * direction[2])
            .sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidParameter("direction must be non-zero".into()));
    }
    let unit = [direction[0] / norm, direction[1] / norm, direction[2] / norm];
    let results: Vec<Result<CatnessResult>> = magnitudes
        .par_iter()
        .map(|&m| rate_displaced(f, [unit[0] * m, unit[1] * m, unit[2] * m], consts, opts))
        .collect();
    let mut points = Vec::with_capacity(results.len());
    for (m, r) in magnitudes.iter().zip(results) {
        let r = r?;
        points.push(RatePoint {
            x: *m,
            catness: r.catness,
            rate: r.rate,
            method: r.method,
            estimated_relative_error: r.estimated_relative_error,
        });
    }
    let (kappa, residual) = fit_quadratic_decade(&points);
    let saturation = potential::self_energy(f, consts, opts)
        .ok()
        .map(|u| -2.0 * u.value / consts.hbar);
    let kappa_normalized = normalized_kappa(f, kappa, consts);
    Ok(RateCurve {
        axis: CurveAxis::Displacement,
        points,
        kappa,
        kappa_normalized,
        fit_residual: residual,
        saturation_rate: saturation,
    })
}

/// Least-squares fit of rate = kappa x^2 through the origin over the smallest
/// decade of x present, plus the worst relative deviation inside that window.
pub fn fit_quadratic_decade(points: &[RatePoint]) -> (f64, f64) {
    let x0 = points[0].x;
    let window: Vec<&RatePoint> = points.iter().filter(|p| p.x <= 10.0 * x0).collect();
    let mut num = 0.0;
    let mut den = 0.0;
    for p in &window {
        num += p.rate * p.x * p.x;
        den += p.x.powi(4);
    }
    let kappa = if den > 0.0 { num / den } else { 0.0 };
    let mut residual = 0.0f64;
    for p in &window {
        if p.rate > 0.0 {
            residual = residual.max((p.rate - kappa * p.x * p.x).abs() / p.rate);
        }
    }
    (kappa, residual)
}

/// kappa hbar / (M omega^2) with the structure-appropriate reference
/// frequency: the mean-density Newton frequency for smooth models, the
/// nuclear one for granular models.
pub fn normalized_kappa(f: &MassDistribution, kappa: f64, consts: &PhysicalConstants) -> f64 {
    let mass = f.total_mass();
    let rho_ref = match f {
        MassDistribution::UniformBall(b) => b.density,
        MassDistribution::GranularBall(g) => g.nucleus_density,
        MassDistribution::SmearedGranular(s) => s.base.nucleus_density,
        MassDistribution::VoxelGrid(v) => {
            // mass-weighted mean density
            let m = v.total_mass();
            if m > 0.0 {
                v.data().iter().map(|r| r * r).sum::<f64>() * v.cell_volume() / m
            } else {
                return 0.0;
            }
        }
        MassDistribution::PointSet(_) => return f64::INFINITY,
    };
    let omega2 = 4.0 * std::f64::consts::PI * consts.newton_g * rho_ref / 3.0;
    kappa * consts.hbar / (mass * omega2)
}

/// Quadratic rate coefficient of a model, fitted over displacements in
/// [L/1000, L/100] of its smallest structure scale L.
pub fn quadratic_coefficient(
    f: &MassDistribution,
    consts: &PhysicalConstants,
    opts: &GridOptions,
) -> Result<(f64, f64, f64)> {
    let scale = match f {
        MassDistribution::UniformBall(b) => b.radius,
        MassDistribution::GranularBall(g) => g.nucleus_radius,
        MassDistribution::SmearedGranular(s) => {
            (s.base.nucleus_radius.powi(2) + s.smear_length.powi(2)).sqrt()
        }
        MassDistribution::VoxelGrid(v) => v.cell_size() * 4.0,
        MassDistribution::PointSet(_) => return Err(Error::SingularSelfEnergy),
    };
    let magnitudes: Vec<f64> = (0..6).map(|i| scale / 1000.0 * 10.0f64.powf(i as f64 / 5.0)).collect();
    let curve = full_rate_curve(f, [1.0, 0.0, 0.0], &magnitudes, consts, opts)?;
    Ok((curve.kappa, curve.kappa_normalized, curve.fit_residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{PointMass, PointSet, UniformBall};
    use crate::potential::BALL_SELF_COEFF;
    use approx::assert_relative_eq;

    fn consts() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    fn ball() -> MassDistribution {
        MassDistribution::UniformBall(UniformBall::from_mass([0.0; 3], 1.0, 5.0).unwrap())
    }

    #[test]
    fn zero_displacement_gives_zero_rate() {
        let r = rate_displaced(&ball(), [0.0; 3], &consts(), &GridOptions::default()).unwrap();
        assert_eq!(r.catness, 0.0);
        assert_eq!(r.rate, 0.0);
        assert!(r.lifetime.is_infinite());
    }

    #[test]
    fn far_separation_saturates() {
        let c = consts();
        let d = 100.0;
        let r = rate_displaced(&ball(), [d, 0.0, 0.0], &c, &GridOptions::default()).unwrap();
        // l_G^2 -> (12/5) G M^2 / R - 2 G M^2 / d
        let want = 2.0 * BALL_SELF_COEFF * c.newton_g * 25.0 / 1.0 - 2.0 * c.newton_g * 25.0 / d;
        assert_relative_eq!(r.catness, want, max_relative = 1e-12);
    }

    #[test]
    fn point_sets_are_singular() {
        let p = MassDistribution::PointSet(
            PointSet::new(vec![PointMass { position: [0.0; 3], mass: 1.0 }]).unwrap(),
        );
        assert!(matches!(
            catness(&p, &p.translate([1.0, 0.0, 0.0]), &consts(), &GridOptions::default()),
            Err(Error::SingularSelfEnergy)
        ));
    }

    #[test]
    fn rate_is_catness_over_hbar_exactly() {
        let c = consts();
        let r = rate_displaced(&ball(), [0.01, 0.0, 0.0], &c, &GridOptions::default()).unwrap();
        assert_eq!(r.rate, r.catness / c.hbar);
        assert_eq!(r.rate * r.lifetime, 1.0);
    }

    #[test]
    fn catness_is_symmetric_for_analytic_pair() {
        let c = consts();
        let f = ball();
        let fp = f.translate([0.3, 0.0, 0.0]);
        let a = catness(&f, &fp, &c, &GridOptions::default()).unwrap();
        let b = catness(&fp, &f, &c, &GridOptions::default()).unwrap();
        assert_eq!(a.catness, b.catness);
    }

    #[test]
    fn quadratic_law_for_uniform_ball() {
        // rate(dx)/dx^2 constant within 1% over [R/1000, R/100], and the
        // normalized coefficient is 1 at leading order
        let c = consts();
        let f = ball();
        let mags: Vec<f64> = (0..8).map(|i| 1e-3 * 10.0f64.powf(i as f64 / 7.0)).collect();
        let curve =
            full_rate_curve(&f, [1.0, 0.0, 0.0], &mags, &c, &GridOptions::default()).unwrap();
        assert!(curve.fit_residual < 0.01, "residual {}", curve.fit_residual);
        assert_relative_eq!(curve.kappa_normalized, 1.0, max_relative = 0.01);
    }

    #[test]
    fn spec_scale_rate_example() {
        // M = 1 kg, rho = 1000 kg/m^3, |dx| = 1e-10 m: rate ~ 2.7e7 / s
        let c = consts();
        let radius = (3.0 / (4.0 * std::f64::consts::PI * 1000.0)).powf(1.0 / 3.0);
        let b = UniformBall::from_mass([0.0; 3], radius, 1.0).unwrap();
        let f = MassDistribution::UniformBall(b);
        let r = rate_displaced(&f, [1e-10, 0.0, 0.0], &c, &GridOptions::default()).unwrap();
        let omega2 = 4.0 * std::f64::consts::PI * c.newton_g * 1000.0 / 3.0;
        let formula = 1.0 * omega2 * 1e-20 / c.hbar;
        assert_relative_eq!(r.rate, formula, max_relative = 0.01);
        assert!(r.rate > 2.0e7 && r.rate < 3.5e7, "rate {}", r.rate);
    }

    fn lattice(n_side: f64) -> GranularBall {
        // ~n_side lattice spacings of radius, nuclei well separated
        let a = 0.2;
        let rn = 0.01;
        GranularBall::new([0.0; 3], a * n_side, rn, 1e6, a, None).unwrap()
    }

    #[test]
    fn granular_small_disp_matches_single_ball_sum() {
        let c = consts();
        let g = lattice(2.2);
        let n = g.nucleus_count() as f64;
        let dx = [g.nucleus_radius / 20.0, 0.0, 0.0];
        let approx_law = rate_granular_small_disp(&g, dx, &c).unwrap();
        // single nucleus of the same density
        let single = MassDistribution::UniformBall(
            UniformBall::from_density([0.0; 3], g.nucleus_radius, g.nucleus_density).unwrap(),
        );
        let one = rate_displaced(&single, dx, &c, &GridOptions::default()).unwrap();
        assert_relative_eq!(approx_law.rate, n * one.rate, max_relative = 1e-12);
        // full catness including cross terms agrees within 1%
        let full = rate_displaced(
            &MassDistribution::GranularBall(g.clone()),
            dx,
            &c,
            &GridOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(full.rate, approx_law.rate, max_relative = 0.01);
    }

    #[test]
    fn granular_validity_domain_enforced() {
        let g = lattice(2.2);
        let too_far = [g.nucleus_radius, 0.0, 0.0];
        assert!(matches!(
            rate_granular_small_disp(&g, too_far, &consts()),
            Err(Error::ValidityDomain(_))
        ));
    }

    #[test]
    fn granular_vs_homogeneous_enhancement() {
        // rate ratio ~ rho_nucl / rho_mean at equal small displacement
        let c = consts();
        let g = lattice(3.1);
        let rho_mean = g.mean_density();
        let mass = g.total_mass();
        let dx = [g.nucleus_radius / 20.0, 0.0, 0.0];
        let granular = rate_displaced(
            &MassDistribution::GranularBall(g.clone()),
            dx,
            &c,
            &GridOptions::default(),
        )
        .unwrap();
        let homog = rate_displaced(
            &MassDistribution::UniformBall(UniformBall::from_mass([0.0; 3], g.radius, mass).unwrap()),
            dx,
            &c,
            &GridOptions::default(),
        )
        .unwrap();
        let want = g.nucleus_density / rho_mean;
        assert_relative_eq!(granular.rate / homog.rate, want, max_relative = 0.1);
    }

    #[test]
    fn smearing_curve_is_monotone_with_consistent_endpoints() {
        let c = consts();
        let g = lattice(2.2);
        let a = g.lattice_spacing;
        let dx = [g.nucleus_radius / 15.0, 0.0, 0.0];
        let s_values = [0.0, 0.5 * a, a, 2.0 * a, 4.0 * a];
        let curve = rate_vs_smearing(&g, &s_values, dx, &c, &GridOptions::default()).unwrap();
        for w in curve.points.windows(2) {
            assert!(
                w[1].rate <= w[0].rate * (1.0 + 1e-9),
                "rates must be non-increasing: {} then {}",
                w[0].rate,
                w[1].rate
            );
        }
        // s = 0 endpoint matches the granular small-displacement law
        let law = rate_granular_small_disp(&g, dx, &c).unwrap();
        assert_relative_eq!(curve.points[0].rate, law.rate, max_relative = 0.01);
        // intermediate rates strictly between the endpoints
        let first = curve.points[0].rate;
        let last = curve.points.last().unwrap().rate;
        for p in &curve.points[1..curve.points.len() - 1] {
            assert!(p.rate < first && p.rate > last);
        }
    }

    #[test]
    fn smearing_validity_domain() {
        let g = lattice(2.2);
        let dx = [g.nucleus_radius / 15.0, 0.0, 0.0];
        // s smaller than 10*dx trips the domain check
        let s_values = [0.0, g.nucleus_radius / 2.0];
        assert!(matches!(
            rate_vs_smearing(&g, &s_values, dx, &consts(), &GridOptions::default()),
            Err(Error::ValidityDomain(_))
        ));
    }

    #[test]
    fn saturation_onset_beyond_quadratic_domain() {
        // at dx = 5 r_n the rate falls below the extrapolated quadratic law
        let c = consts();
        let g = lattice(2.2);
        let rn = g.nucleus_radius;
        let quad = rate_granular_small_disp(&g, [rn / 20.0, 0.0, 0.0], &c).unwrap();
        let kappa = quad.rate / (rn / 20.0).powi(2);
        let far = rate_displaced(
            &MassDistribution::GranularBall(g),
            [5.0 * rn, 0.0, 0.0],
            &c,
            &GridOptions::default(),
        )
        .unwrap();
        assert!(far.rate < kappa * (5.0 * rn).powi(2));
    }

    #[test]
    fn full_curve_reports_saturation() {
        let c = consts();
        let f = ball();
        let mags: Vec<f64> = vec![0.001, 0.002, 0.005, 0.01, 1.0, 10.0, 100.0];
        let curve =
            full_rate_curve(&f, [1.0, 0.0, 0.0], &mags, &c, &GridOptions::default()).unwrap();
        let sat = curve.saturation_rate.unwrap();
        let want = 2.0 * BALL_SELF_COEFF * c.newton_g * 25.0 / c.hbar;
        assert_relative_eq!(sat, want, max_relative = 1e-12);
        // last point approaches saturation from below
        let last = curve.points.last().unwrap().rate;
        assert!(last < sat && last > 0.9 * sat);
    }
}
