//! Mass-density models and their transforms.
//!
//! Everything downstream consumes a [`MassDistribution`]: point sets (singular,
//! only useful to exhibit the divergence), homogeneous balls, granular balls
//! (nuclei on a cubic lattice), voxel grids, and Gaussian-smeared granular
//! models standing in for delocalized condensed matter.  All types are
//! immutable after construction; transforms return new values.

use std::f64::consts::PI;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FOUR_THIRDS_PI: f64 = 4.0 * PI / 3.0;

/// Default nucleus radius [m] (1e-12 cm).
pub const DEFAULT_NUCLEUS_RADIUS: f64 = 1e-14;
/// Default nucleus density [kg/m^3] (1e12 x ordinary condensed matter).
pub const DEFAULT_NUCLEUS_DENSITY: f64 = 1e15;

/// Relative tolerance for mass conservation across transforms.
pub const MASS_TOLERANCE: f64 = 1e-3;

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Axis-aligned bounding box of a distribution's support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn around(center: [f64; 3], half_extent: f64) -> Self {
        Aabb {
            min: [center[0] - half_extent, center[1] - half_extent, center[2] - half_extent],
            max: [center[0] + half_extent, center[1] + half_extent, center[2] + half_extent],
        }
    }

    pub fn merge(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: [
                self.min[0].min(other.min[0]),
                self.min[1].min(other.min[1]),
                self.min[2].min(other.min[2]),
            ],
            max: [
                self.max[0].max(other.max[0]),
                self.max[1].max(other.max[1]),
                self.max[2].max(other.max[2]),
            ],
        }
    }

    pub fn grown(&self, margin: f64) -> Aabb {
        Aabb {
            min: [self.min[0] - margin, self.min[1] - margin, self.min[2] - margin],
            max: [self.max[0] + margin, self.max[1] + margin, self.max[2] + margin],
        }
    }

    pub fn contains(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.min[i] && self.max[i] >= other.max[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMass {
    pub position: [f64; 3],
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub points: Vec<PointMass>,
}

impl PointSet {
    pub fn new(points: Vec<PointMass>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("point set must not be empty".into()));
        }
        for p in &points {
            if !(p.mass > 0.0 && p.mass.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "point masses must be positive and finite, got {}",
                    p.mass
                )));
            }
        }
        Ok(PointSet { points })
    }

    pub fn total_mass(&self) -> f64 {
        self.points.iter().map(|p| p.mass).sum()
    }
}

/// Homogeneous ball; the mass is derived from the density so that
/// `mass == density * (4pi/3) R^3` holds by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformBall {
    pub center: [f64; 3],
    pub radius: f64,
    pub density: f64,
}

impl UniformBall {
    pub fn from_density(center: [f64; 3], radius: f64, density: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("ball radius must be positive, got {radius}")));
        }
        if !(density > 0.0 && density.is_finite()) {
            return Err(Error::NonPositiveDensity(density));
        }
        Ok(UniformBall { center, radius, density })
    }

    pub fn from_mass(center: [f64; 3], radius: f64, mass: f64) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidParameter(format!("ball mass must be positive, got {mass}")));
        }
        let volume = FOUR_THIRDS_PI * radius.powi(3);
        Self::from_density(center, radius, mass / volume)
    }

    pub fn mass(&self) -> f64 {
        self.density * FOUR_THIRDS_PI * self.radius.powi(3)
    }
}

/// Nuclei of radius `nucleus_radius` on a simple cubic lattice, clipped so
/// every nucleus lies fully inside the macroscopic ball.
#[derive(Debug, Clone, PartialEq)]
pub struct GranularBall {
    pub center: [f64; 3],
    pub radius: f64,
    pub nucleus_radius: f64,
    pub nucleus_density: f64,
    pub lattice_spacing: f64,
    pub lattice_origin: [f64; 3],
}

impl GranularBall {
    pub fn new(
        center: [f64; 3],
        radius: f64,
        nucleus_radius: f64,
        nucleus_density: f64,
        lattice_spacing: f64,
        lattice_origin: Option<[f64; 3]>,
    ) -> Result<Self> {
        if !(radius > 0.0 && nucleus_radius > 0.0 && lattice_spacing > 0.0) {
            return Err(Error::InvalidParameter(
                "granular ball lengths must be strictly positive".into(),
            ));
        }
        if !(nucleus_density > 0.0 && nucleus_density.is_finite()) {
            return Err(Error::NonPositiveDensity(nucleus_density));
        }
        // Non-overlap invariant.
        if lattice_spacing < 2.0 * nucleus_radius {
            return Err(Error::InvalidParameter(format!(
                "lattice spacing {lattice_spacing} must be at least twice the nucleus radius {nucleus_radius}"
            )));
        }
        if radius < nucleus_radius {
            return Err(Error::InvalidParameter(
                "macroscopic radius must not be smaller than the nucleus radius".into(),
            ));
        }
        let g = GranularBall {
            center,
            radius,
            nucleus_radius,
            nucleus_density,
            lattice_spacing,
            lattice_origin: lattice_origin.unwrap_or(center),
        };
        if g.nucleus_count() == 0 {
            return Err(Error::InvalidParameter(
                "lattice clipped to the ball contains no nuclei".into(),
            ));
        }
        Ok(g)
    }

    pub fn nucleus_mass(&self) -> f64 {
        self.nucleus_density * FOUR_THIRDS_PI * self.nucleus_radius.powi(3)
    }

    /// Lattice nodes whose nucleus lies fully inside the ball, in a fixed
    /// (z, y, x) scan order.
    pub fn nucleus_centers(&self) -> Vec<[f64; 3]> {
        self.lattice_nodes().into_iter().map(|(_, p)| p).collect()
    }

    /// Integer lattice indices plus positions, same order as `nucleus_centers`.
    pub fn lattice_nodes(&self) -> Vec<([i64; 3], [f64; 3])> {
        let a = self.lattice_spacing;
        let rmax = self.radius - self.nucleus_radius;
        let mut out = Vec::new();
        // index range around the ball center, relative to the lattice origin
        let lo = |c: f64, o: f64| (((c - rmax) - o) / a).ceil() as i64;
        let hi = |c: f64, o: f64| (((c + rmax) - o) / a).floor() as i64;
        let (ix0, ix1) = (lo(self.center[0], self.lattice_origin[0]), hi(self.center[0], self.lattice_origin[0]));
        let (iy0, iy1) = (lo(self.center[1], self.lattice_origin[1]), hi(self.center[1], self.lattice_origin[1]));
        let (iz0, iz1) = (lo(self.center[2], self.lattice_origin[2]), hi(self.center[2], self.lattice_origin[2]));
        for kz in iz0..=iz1 {
            for ky in iy0..=iy1 {
                for kx in ix0..=ix1 {
                    let p = [
                        self.lattice_origin[0] + a * kx as f64,
                        self.lattice_origin[1] + a * ky as f64,
                        self.lattice_origin[2] + a * kz as f64,
                    ];
                    if norm3(sub3(p, self.center)) <= rmax {
                        out.push(([kx, ky, kz], p));
                    }
                }
            }
        }
        out
    }

    pub fn nucleus_count(&self) -> usize {
        self.lattice_nodes().len()
    }

    pub fn total_mass(&self) -> f64 {
        self.nucleus_count() as f64 * self.nucleus_mass()
    }

    /// Mean density over the macroscopic ball volume.
    pub fn mean_density(&self) -> f64 {
        self.total_mass() / (FOUR_THIRDS_PI * self.radius.powi(3))
    }
}

/// Granular ball convolved with an isotropic Gaussian of standard deviation
/// `smear_length`; the model used for delocalized (superfluid) sources.
#[derive(Debug, Clone, PartialEq)]
pub struct SmearedGranular {
    pub base: GranularBall,
    pub smear_length: f64,
}

impl SmearedGranular {
    pub fn new(base: GranularBall, smear_length: f64) -> Result<Self> {
        if !(smear_length > 0.0 && smear_length.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "smear length must be strictly positive, got {smear_length}"
            )));
        }
        Ok(SmearedGranular { base, smear_length })
    }
}

/// Regular grid of cell densities, x-fastest storage.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    origin: [f64; 3],
    cell_size: f64,
    dims: [usize; 3],
    data: Vec<f64>,
}

/// Grid geometry used to request rasterizations and coarse-grainings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub origin: [f64; 3],
    pub cell_size: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    /// Smallest grid of cell size `h` covering `aabb` grown by `margin`.
    pub fn covering(aabb: &Aabb, cell_size: f64, margin: f64) -> GridSpec {
        let lo = [aabb.min[0] - margin, aabb.min[1] - margin, aabb.min[2] - margin];
        let hi = [aabb.max[0] + margin, aabb.max[1] + margin, aabb.max[2] + margin];
        let dims = [
            ((hi[0] - lo[0]) / cell_size).ceil().max(1.0) as usize,
            ((hi[1] - lo[1]) / cell_size).ceil().max(1.0) as usize,
            ((hi[2] - lo[2]) / cell_size).ceil().max(1.0) as usize,
        ];
        GridSpec { origin: lo, cell_size, dims }
    }

    pub fn aabb(&self) -> Aabb {
        Aabb {
            min: self.origin,
            max: [
                self.origin[0] + self.cell_size * self.dims[0] as f64,
                self.origin[1] + self.cell_size * self.dims[1] as f64,
                self.origin[2] + self.cell_size * self.dims[2] as f64,
            ],
        }
    }

    pub fn cell_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }
}

impl VoxelGrid {
    pub fn new(origin: [f64; 3], cell_size: f64, dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::InvalidParameter(format!("cell size must be positive, got {cell_size}")));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter("grid dimensions must be non-zero".into()));
        }
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::InvalidParameter(format!(
                "grid data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "grid densities must be finite and non-negative".into(),
            ));
        }
        Ok(VoxelGrid { origin, cell_size, dims, data })
    }

    pub fn zeros(spec: &GridSpec) -> Self {
        VoxelGrid {
            origin: spec.origin,
            cell_size: spec.cell_size,
            dims: spec.dims,
            data: vec![0.0; spec.cell_count()],
        }
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec { origin: self.origin, cell_size: self.cell_size, dims: self.dims }
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(i, j, k)]
    }

    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.cell_size,
            self.origin[1] + (j as f64 + 0.5) * self.cell_size,
            self.origin[2] + (k as f64 + 0.5) * self.cell_size,
        ]
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_size.powi(3)
    }

    pub fn total_mass(&self) -> f64 {
        let v = self.cell_volume();
        self.data.iter().sum::<f64>() * v
    }

    /// Density of the cell containing `r`, zero outside the grid.
    pub fn density_at(&self, r: [f64; 3]) -> f64 {
        let mut idx = [0usize; 3];
        for ax in 0..3 {
            let u = (r[ax] - self.origin[ax]) / self.cell_size;
            if u < 0.0 || u >= self.dims[ax] as f64 {
                return 0.0;
            }
            idx[ax] = u as usize;
        }
        self.value(idx[0], idx[1], idx[2])
    }

    /// Integer-cell offset of `other`'s origin relative to ours, if the two
    /// grids share a cell size and commensurate origins.
    pub fn commensurate_offset(&self, other: &VoxelGrid) -> Option<[i64; 3]> {
        let rel = (self.cell_size - other.cell_size).abs() / self.cell_size;
        if rel > 1e-9 {
            return None;
        }
        let mut off = [0i64; 3];
        for ax in 0..3 {
            let cells = (other.origin[ax] - self.origin[ax]) / self.cell_size;
            let n = cells.round();
            if (cells - n).abs() > 1e-6 {
                return None;
            }
            off[ax] = n as i64;
        }
        Some(off)
    }

    /// Translate by an arbitrary displacement.  The integer-cell part becomes
    /// an exact origin shift (keeping grids commensurate); the fractional part
    /// is a separable linear interpolation with a one-cell expansion, which
    /// conserves mass exactly.
    pub fn translated(&self, dx: [f64; 3]) -> VoxelGrid {
        let h = self.cell_size;
        let mut origin = self.origin;
        let mut frac = [0.0f64; 3];
        for ax in 0..3 {
            let cells = dx[ax] / h;
            let whole = cells.floor();
            let f = cells - whole;
            if f.abs() < 1e-12 || (1.0 - f).abs() < 1e-12 {
                origin[ax] += h * cells.round();
                frac[ax] = 0.0;
            } else {
                origin[ax] += h * whole;
                frac[ax] = f;
            }
        }
        let mut dims = self.dims;
        let mut data = self.data.clone();
        for ax in 0..3 {
            if frac[ax] == 0.0 {
                continue;
            }
            let (new_dims, new_data) = shift_axis(&data, dims, ax, frac[ax]);
            dims = new_dims;
            data = new_data;
        }
        VoxelGrid { origin, cell_size: h, dims, data }
    }

    /// Write the flat binary (little-endian f64, x-fastest) plus the text
    /// sidecar holding one header line: `nx ny nz ox oy oz cell_size`.
    pub fn write_files(&self, data_path: &Path, sidecar_path: &Path) -> Result<()> {
        let mut sidecar = BufWriter::new(std::fs::File::create(sidecar_path)?);
        writeln!(
            sidecar,
            "{} {} {} {:e} {:e} {:e} {:e}",
            self.dims[0], self.dims[1], self.dims[2], self.origin[0], self.origin[1], self.origin[2], self.cell_size
        )?;
        sidecar.flush()?;
        let mut out = BufWriter::new(std::fs::File::create(data_path)?);
        for v in &self.data {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_files(data_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let header = std::fs::read_to_string(sidecar_path)?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(Error::ConfigParse(format!(
                "voxel sidecar must hold 7 fields (nx ny nz ox oy oz cell_size), got {}",
                fields.len()
            )));
        }
        let dims = [
            fields[0].parse::<usize>().map_err(|e| Error::ConfigParse(format!("bad dimension: {e}")))?,
            fields[1].parse::<usize>().map_err(|e| Error::ConfigParse(format!("bad dimension: {e}")))?,
            fields[2].parse::<usize>().map_err(|e| Error::ConfigParse(format!("bad dimension: {e}")))?,
        ];
        let mut rest = [0.0f64; 4];
        for (i, f) in fields[3..].iter().enumerate() {
            rest[i] = f.parse::<f64>().map_err(|e| Error::ConfigParse(format!("bad float: {e}")))?;
        }
        let mut raw = Vec::new();
        std::fs::File::open(data_path)?.read_to_end(&mut raw)?;
        let expect = dims[0] * dims[1] * dims[2] * 8;
        if raw.len() != expect {
            return Err(Error::ConfigParse(format!(
                "voxel data file holds {} bytes, expected {expect}",
                raw.len()
            )));
        }
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect();
        VoxelGrid::new([rest[0], rest[1], rest[2]], rest[3], dims, data)
    }
}

/// 1-D fractional shift by `f` in (0,1): grows the axis by one cell and
/// linearly redistributes, so the cell sum is preserved exactly.
fn shift_axis(data: &[f64], dims: [usize; 3], axis: usize, f: f64) -> ([usize; 3], Vec<f64>) {
    let mut new_dims = dims;
    new_dims[axis] += 1;
    let mut out = vec![0.0f64; new_dims[0] * new_dims[1] * new_dims[2]];
    let idx_old = |i: usize, j: usize, k: usize| i + dims[0] * (j + dims[1] * k);
    let idx_new = |i: usize, j: usize, k: usize| i + new_dims[0] * (j + new_dims[1] * k);
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let v = data[idx_old(i, j, k)];
                if v == 0.0 {
                    continue;
                }
                let (mut ti, mut tj, mut tk) = (i, j, k);
                match axis {
                    0 => ti = i,
                    1 => tj = j,
                    _ => tk = k,
                }
                out[idx_new(ti, tj, tk)] += v * (1.0 - f);
                match axis {
                    0 => ti += 1,
                    1 => tj += 1,
                    _ => tk += 1,
                }
                out[idx_new(ti, tj, tk)] += v * f;
            }
        }
    }
    (new_dims, out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum MassDistribution {
    PointSet(PointSet),
    UniformBall(UniformBall),
    GranularBall(GranularBall),
    VoxelGrid(VoxelGrid),
    SmearedGranular(SmearedGranular),
}

impl MassDistribution {
    pub fn total_mass(&self) -> f64 {
        match self {
            MassDistribution::PointSet(p) => p.total_mass(),
            MassDistribution::UniformBall(b) => b.mass(),
            MassDistribution::GranularBall(g) => g.total_mass(),
            MassDistribution::VoxelGrid(v) => v.total_mass(),
            MassDistribution::SmearedGranular(s) => s.base.total_mass(),
        }
    }

    /// Pointwise density f(r).  Point sets are distributional and reject
    /// evaluation.
    pub fn evaluate_density(&self, r: [f64; 3]) -> Result<f64> {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("evaluation position must be finite".into()));
        }
        match self {
            MassDistribution::PointSet(_) => Err(Error::PointSetNotEvaluable),
            MassDistribution::UniformBall(b) => {
                Ok(if norm3(sub3(r, b.center)) <= b.radius { b.density } else { 0.0 })
            }
            MassDistribution::GranularBall(g) => Ok(granular_density(g, r)),
            MassDistribution::VoxelGrid(v) => Ok(v.density_at(r)),
            MassDistribution::SmearedGranular(s) => Ok(smeared_granular_density(s, r)),
        }
    }

    /// Rigid translation; total mass is unchanged (exactly for analytic
    /// variants, exactly for grids by construction of `translated`).
    pub fn translate(&self, dx: [f64; 3]) -> MassDistribution {
        match self {
            MassDistribution::PointSet(p) => MassDistribution::PointSet(PointSet {
                points: p
                    .points
                    .iter()
                    .map(|pm| PointMass { position: add3(pm.position, dx), mass: pm.mass })
                    .collect(),
            }),
            MassDistribution::UniformBall(b) => {
                MassDistribution::UniformBall(UniformBall { center: add3(b.center, dx), ..*b })
            }
            MassDistribution::GranularBall(g) => MassDistribution::GranularBall(GranularBall {
                center: add3(g.center, dx),
                lattice_origin: add3(g.lattice_origin, dx),
                ..g.clone()
            }),
            MassDistribution::VoxelGrid(v) => MassDistribution::VoxelGrid(v.translated(dx)),
            MassDistribution::SmearedGranular(s) => {
                MassDistribution::SmearedGranular(SmearedGranular {
                    base: GranularBall {
                        center: add3(s.base.center, dx),
                        lattice_origin: add3(s.base.lattice_origin, dx),
                        ..s.base.clone()
                    },
                    smear_length: s.smear_length,
                })
            }
        }
    }

    /// Bounding box of the support.  Gaussian-smeared models are truncated at
    /// eight smear lengths, where the tail mass is negligible.
    pub fn support(&self) -> Aabb {
        match self {
            MassDistribution::PointSet(p) => {
                let mut bb = Aabb::around(p.points[0].position, 0.0);
                for pm in &p.points[1..] {
                    bb = bb.merge(&Aabb::around(pm.position, 0.0));
                }
                bb
            }
            MassDistribution::UniformBall(b) => Aabb::around(b.center, b.radius),
            MassDistribution::GranularBall(g) => Aabb::around(g.center, g.radius),
            MassDistribution::VoxelGrid(v) => v.spec().aabb(),
            MassDistribution::SmearedGranular(s) => {
                Aabb::around(s.base.center, s.base.radius + 8.0 * s.smear_length)
            }
        }
    }
}

fn granular_density(g: &GranularBall, r: [f64; 3]) -> f64 {
    // Nuclei never overlap (a >= 2 r_n), so only the nearest lattice node can
    // contain r; rounding per axis finds it.
    let a = g.lattice_spacing;
    let mut node = [0.0f64; 3];
    for ax in 0..3 {
        let idx = ((r[ax] - g.lattice_origin[ax]) / a).round();
        node[ax] = g.lattice_origin[ax] + a * idx;
    }
    if norm3(sub3(node, g.center)) <= g.radius - g.nucleus_radius
        && norm3(sub3(r, node)) <= g.nucleus_radius
    {
        g.nucleus_density
    } else {
        0.0
    }
}

fn smeared_granular_density(s: &SmearedGranular, r: [f64; 3]) -> f64 {
    let m = s.base.nucleus_mass();
    let reach = s.base.nucleus_radius + 8.0 * s.smear_length;
    let mut rho = 0.0;
    for c in s.base.nucleus_centers() {
        let d = norm3(sub3(r, c));
        if d <= reach {
            rho += m * smeared_ball_profile(d, s.base.nucleus_radius, s.smear_length);
        }
    }
    rho
}

/// Density at radius `r` of a unit-mass homogeneous ball of radius `a`
/// convolved with a normalized isotropic Gaussian of standard deviation `s`.
pub fn smeared_ball_profile(r: f64, a: f64, s: f64) -> f64 {
    let v = FOUR_THIRDS_PI * a.powi(3);
    if s <= 0.0 {
        return if r <= a { 1.0 / v } else { 0.0 };
    }
    let sq2 = std::f64::consts::SQRT_2;
    if r < 1e-8 * (a + s) {
        let x = a / (sq2 * s);
        let occ = erf(x) - (2.0 / PI.sqrt()) * x * (-x * x).exp();
        return occ / v;
    }
    let em = (-((a - r) * (a - r)) / (2.0 * s * s)).exp();
    let ep = (-((a + r) * (a + r)) / (2.0 * s * s)).exp();
    let occ = 0.5 * (erf((a - r) / (sq2 * s)) + erf((a + r) / (sq2 * s)))
        - s / (r * (2.0 * PI).sqrt()) * (em - ep);
    (occ / v).max(0.0)
}

/// Normalized isotropic 3-D Gaussian evaluated at squared radius `r2`.
pub fn gaussian3(r2: f64, sigma: f64) -> f64 {
    let norm = (2.0 * PI * sigma * sigma).powf(1.5);
    (-r2 / (2.0 * sigma * sigma)).exp() / norm
}

/// Volume of the intersection of two spheres of radii `r1`, `r2` at center
/// distance `d` (standard lens formula).
pub fn sphere_overlap_volume(r1: f64, r2: f64, d: f64) -> f64 {
    if d >= r1 + r2 {
        return 0.0;
    }
    let rmin = r1.min(r2);
    if d <= (r1 - r2).abs() {
        return FOUR_THIRDS_PI * rmin.powi(3);
    }
    let sum = r1 + r2;
    PI * (sum - d).powi(2) * (d * d + 2.0 * d * sum - 3.0 * (r1 - r2) * (r1 - r2)) / (12.0 * d)
}

/// Error function, Abramowitz-Stegun 7.1.26 refined by one Newton step is not
/// enough for our tolerances; use the max-accuracy rational approximation
/// (W. J. Cody style, ~1e-15 absolute).
pub fn erf(x: f64) -> f64 {
    // Relation erf(x) = 1 - erfc(x); implement erfc on [0, inf) by regions.
    if x < 0.0 {
        return -erf(-x);
    }
    if x == 0.0 {
        return 0.0;
    }
    if x < 0.5 {
        // Taylor/continued series converges fast here.
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        for n in 1..30 {
            term *= -x2 / n as f64;
            let add = term / (2 * n + 1) as f64;
            sum += add;
            if add.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        return 2.0 / PI.sqrt() * sum;
    }
    1.0 - erfc_large(x)
}

fn erfc_large(x: f64) -> f64 {
    // Continued-fraction evaluation of erfc for x >= 0.5 (Lentz algorithm).
    let x2 = x * x;
    let mut b = x2 + 0.5;
    let mut c = 1e308;
    let mut d = 1.0 / b;
    let mut h = d;
    let mut n = 1.0f64;
    loop {
        let an = n * (n - 0.5);
        b += 2.0;
        d = 1.0 / (b - an * d);
        c = b - an / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
        n += 1.0;
        if n > 300.0 {
            break;
        }
    }
    let pref = x / PI.sqrt() * (-x2).exp();
    pref * h
}

/// Smoothing kernels available for the cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmearKernel {
    HardSphere,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffMode {
    Nuclear,
    Atomic,
    Custom,
}

/// Spatial resolution rule applied before rate evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffPolicy {
    pub resolution_length: f64,
    pub kernel: SmearKernel,
    pub mode: CutoffMode,
}

impl CutoffPolicy {
    pub fn nuclear() -> Self {
        CutoffPolicy { resolution_length: 1e-14, kernel: SmearKernel::Gaussian, mode: CutoffMode::Nuclear }
    }

    pub fn atomic() -> Self {
        CutoffPolicy { resolution_length: 1e-10, kernel: SmearKernel::Gaussian, mode: CutoffMode::Atomic }
    }

    pub fn custom(resolution_length: f64, kernel: SmearKernel) -> Result<Self> {
        if !(resolution_length > 0.0 && resolution_length.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "resolution length must be strictly positive, got {resolution_length}"
            )));
        }
        Ok(CutoffPolicy { resolution_length, kernel, mode: CutoffMode::Custom })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.resolution_length > 0.0 && self.resolution_length.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "resolution length must be strictly positive, got {}",
                self.resolution_length
            )));
        }
        Ok(())
    }
}

/// Coarse-grain `dist` to a voxel grid with the policy's kernel of width
/// sigma.  Preconditions: `h <= sigma/2` and the grid covers the support plus
/// a three-sigma margin.
pub fn coarse_grain(
    dist: &MassDistribution,
    policy: &CutoffPolicy,
    spec: &GridSpec,
) -> Result<VoxelGrid> {
    policy.validate()?;
    let sigma = policy.resolution_length;
    if spec.cell_size > sigma / 2.0 {
        return Err(Error::GridTooCoarse { cell_size: spec.cell_size, resolution_length: sigma });
    }
    let needed = dist.support().grown(3.0 * sigma);
    if !spec.aabb().contains(&needed) {
        return Err(Error::SupportNotCovered(format!(
            "need [{:?}..{:?}], grid spans [{:?}..{:?}]",
            needed.min,
            needed.max,
            spec.aabb().min,
            spec.aabb().max
        )));
    }
    match dist {
        MassDistribution::PointSet(p) => Ok(smear_points(p, policy, spec)),
        MassDistribution::UniformBall(b) => Ok(smear_ball(b, policy, spec)),
        MassDistribution::GranularBall(g) => Ok(smear_granular(g, 0.0, policy, spec)),
        MassDistribution::SmearedGranular(s) => Ok(smear_granular(&s.base, s.smear_length, policy, spec)),
        MassDistribution::VoxelGrid(v) => smear_voxels(v, policy, spec),
    }
}

fn cell_centers_par<F: Fn([f64; 3]) -> f64 + Sync>(spec: &GridSpec, f: F) -> VoxelGrid {
    let mut grid = VoxelGrid::zeros(spec);
    let [nx, ny, _] = spec.dims;
    let h = spec.cell_size;
    let origin = spec.origin;
    grid.data
        .par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(k, slab)| {
            let z = origin[2] + (k as f64 + 0.5) * h;
            for j in 0..ny {
                let y = origin[1] + (j as f64 + 0.5) * h;
                for i in 0..nx {
                    let x = origin[0] + (i as f64 + 0.5) * h;
                    slab[i + nx * j] = f([x, y, z]);
                }
            }
        });
    grid
}

fn smear_points(p: &PointSet, policy: &CutoffPolicy, spec: &GridSpec) -> VoxelGrid {
    let sigma = policy.resolution_length;
    match policy.kernel {
        SmearKernel::Gaussian => cell_centers_par(spec, |r| {
            let mut rho = 0.0;
            for pm in &p.points {
                let d = sub3(r, pm.position);
                let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                if r2 <= (8.0 * sigma) * (8.0 * sigma) {
                    rho += pm.mass * gaussian3(r2, sigma);
                }
            }
            rho
        }),
        SmearKernel::HardSphere => {
            // Sharp edge: supersample cell occupancy finely enough for the
            // 0.1% mass budget at h = sigma/2.
            let inner = 1.0 / (FOUR_THIRDS_PI * sigma.powi(3));
            supersampled(spec, 16, |r| {
                let mut rho = 0.0;
                for pm in &p.points {
                    if norm3(sub3(r, pm.position)) <= sigma {
                        rho += pm.mass * inner;
                    }
                }
                rho
            })
        }
    }
}

fn smear_ball(b: &UniformBall, policy: &CutoffPolicy, spec: &GridSpec) -> VoxelGrid {
    let sigma = policy.resolution_length;
    let mass = b.mass();
    match policy.kernel {
        SmearKernel::Gaussian => cell_centers_par(spec, |r| {
            mass * smeared_ball_profile(norm3(sub3(r, b.center)), b.radius, sigma)
        }),
        SmearKernel::HardSphere => {
            let vk = FOUR_THIRDS_PI * sigma.powi(3);
            cell_centers_par(spec, |r| {
                b.density * sphere_overlap_volume(b.radius, sigma, norm3(sub3(r, b.center))) / vk
            })
        }
    }
}

fn smear_granular(g: &GranularBall, pre_smear: f64, policy: &CutoffPolicy, spec: &GridSpec) -> VoxelGrid {
    let sigma = policy.resolution_length;
    let m = g.nucleus_mass();
    let centers = g.nucleus_centers();
    match policy.kernel {
        SmearKernel::Gaussian => {
            // Gaussian on Gaussian composes in quadrature.
            let s_eff = (sigma * sigma + pre_smear * pre_smear).sqrt();
            let reach = g.nucleus_radius + 8.0 * s_eff;
            cell_centers_par(spec, |r| {
                let mut rho = 0.0;
                for c in &centers {
                    let d = norm3(sub3(r, *c));
                    if d <= reach {
                        rho += m * smeared_ball_profile(d, g.nucleus_radius, s_eff);
                    }
                }
                rho
            })
        }
        SmearKernel::HardSphere => {
            if pre_smear > 0.0 {
                // Mixed kernels: sample the pre-smeared density, then apply the
                // hard-sphere kernel discretely.
                let sampled = smear_granular(
                    g,
                    0.0,
                    &CutoffPolicy {
                        resolution_length: pre_smear,
                        kernel: SmearKernel::Gaussian,
                        mode: CutoffMode::Custom,
                    },
                    spec,
                );
                return convolve_hard_sphere(&sampled, sigma);
            }
            let vk = FOUR_THIRDS_PI * sigma.powi(3);
            let reach = g.nucleus_radius + sigma;
            cell_centers_par(spec, |r| {
                let mut rho = 0.0;
                for c in &centers {
                    let d = norm3(sub3(r, *c));
                    if d <= reach {
                        rho += m * sphere_overlap_volume(g.nucleus_radius, sigma, d)
                            / (vk * FOUR_THIRDS_PI * g.nucleus_radius.powi(3));
                    }
                }
                rho
            })
        }
    }
}

fn smear_voxels(v: &VoxelGrid, policy: &CutoffPolicy, spec: &GridSpec) -> Result<VoxelGrid> {
    let rel = (v.cell_size() - spec.cell_size).abs() / spec.cell_size;
    if rel > 1e-9 {
        return Err(Error::IncompatibleGrids(format!(
            "voxel input cell size {} differs from requested {}",
            v.cell_size(),
            spec.cell_size
        )));
    }
    let mut embedded = VoxelGrid::zeros(spec);
    let h = spec.cell_size;
    // nearest-cell embedding of the source grid into the requested spec
    let off = [
        ((v.origin()[0] - spec.origin[0]) / h).round() as i64,
        ((v.origin()[1] - spec.origin[1]) / h).round() as i64,
        ((v.origin()[2] - spec.origin[2]) / h).round() as i64,
    ];
    for ax in 0..3 {
        let shift = (v.origin()[ax] - spec.origin[ax]) / h - off[ax] as f64;
        if shift.abs() > 1e-6 {
            return Err(Error::IncompatibleGrids(
                "voxel input origin is not commensurate with the requested grid".into(),
            ));
        }
    }
    let [snx, sny, snz] = v.dims();
    for k in 0..snz {
        for j in 0..sny {
            for i in 0..snx {
                let (ti, tj, tk) = (i as i64 + off[0], j as i64 + off[1], k as i64 + off[2]);
                if ti < 0
                    || tj < 0
                    || tk < 0
                    || ti >= spec.dims[0] as i64
                    || tj >= spec.dims[1] as i64
                    || tk >= spec.dims[2] as i64
                {
                    if v.value(i, j, k) != 0.0 {
                        return Err(Error::SupportNotCovered(
                            "voxel input mass falls outside the requested grid".into(),
                        ));
                    }
                    continue;
                }
                let idx = embedded.index(ti as usize, tj as usize, tk as usize);
                embedded.data[idx] = v.value(i, j, k);
            }
        }
    }
    match policy.kernel {
        SmearKernel::Gaussian => Ok(convolve_gaussian(&embedded, policy.resolution_length)),
        SmearKernel::HardSphere => Ok(convolve_hard_sphere(&embedded, policy.resolution_length)),
    }
}

/// Separable discrete Gaussian convolution; the 1-D kernel is normalized, so
/// the cell sum (hence the mass) is conserved exactly.
fn convolve_gaussian(grid: &VoxelGrid, sigma: f64) -> VoxelGrid {
    let h = grid.cell_size();
    let half = ((6.0 * sigma) / h).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * half + 1) as usize);
    for t in -half..=half {
        let x = t as f64 * h;
        kernel.push((-x * x / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for v in &mut kernel {
        *v /= sum;
    }
    let mut dims = grid.dims();
    let mut data = grid.data().to_vec();
    for ax in 0..3 {
        let (nd, nv) = convolve_axis(&data, dims, ax, &kernel, half);
        dims = nd;
        data = nv;
    }
    // the convolution does not change the geometry; padding stayed inside
    VoxelGrid { origin: grid.origin(), cell_size: h, dims, data }
}

fn convolve_axis(
    data: &[f64],
    dims: [usize; 3],
    axis: usize,
    kernel: &[f64],
    half: i64,
) -> ([usize; 3], Vec<f64>) {
    let mut out = vec![0.0f64; data.len()];
    let idx = |i: usize, j: usize, k: usize| i + dims[0] * (j + dims[1] * k);
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let v = data[idx(i, j, k)];
                if v == 0.0 {
                    continue;
                }
                let pos = [i as i64, j as i64, k as i64];
                for (t, w) in kernel.iter().enumerate() {
                    let mut p = pos;
                    p[axis] += t as i64 - half;
                    if p[axis] < 0 || p[axis] >= dims[axis] as i64 {
                        continue;
                    }
                    out[idx(p[0] as usize, p[1] as usize, p[2] as usize)] += v * w;
                }
            }
        }
    }
    (dims, out)
}

/// Discrete hard-sphere kernel with supersampled boundary weights.
fn convolve_hard_sphere(grid: &VoxelGrid, sigma: f64) -> VoxelGrid {
    let h = grid.cell_size();
    let half = (sigma / h).ceil() as i64 + 1;
    let sub = 4usize;
    let mut offsets = Vec::new();
    let mut weights = Vec::new();
    for dz in -half..=half {
        for dy in -half..=half {
            for dx in -half..=half {
                let mut inside = 0usize;
                for sz in 0..sub {
                    for sy in 0..sub {
                        for sx in 0..sub {
                            let x = (dx as f64 + (sx as f64 + 0.5) / sub as f64 - 0.5) * h;
                            let y = (dy as f64 + (sy as f64 + 0.5) / sub as f64 - 0.5) * h;
                            let z = (dz as f64 + (sz as f64 + 0.5) / sub as f64 - 0.5) * h;
                            if x * x + y * y + z * z <= sigma * sigma {
                                inside += 1;
                            }
                        }
                    }
                }
                if inside > 0 {
                    offsets.push([dx, dy, dz]);
                    weights.push(inside as f64);
                }
            }
        }
    }
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    let dims = grid.dims();
    let idx = |i: usize, j: usize, k: usize| i + dims[0] * (j + dims[1] * k);
    let mut out = vec![0.0f64; grid.data().len()];
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let v = grid.data()[idx(i, j, k)];
                if v == 0.0 {
                    continue;
                }
                for (o, w) in offsets.iter().zip(&weights) {
                    let (ti, tj, tk) = (i as i64 + o[0], j as i64 + o[1], k as i64 + o[2]);
                    if ti < 0
                        || tj < 0
                        || tk < 0
                        || ti >= dims[0] as i64
                        || tj >= dims[1] as i64
                        || tk >= dims[2] as i64
                    {
                        continue;
                    }
                    out[idx(ti as usize, tj as usize, tk as usize)] += v * w;
                }
            }
        }
    }
    VoxelGrid { origin: grid.origin(), cell_size: h, dims, data: out }
}

fn supersampled<F: Fn([f64; 3]) -> f64 + Sync>(spec: &GridSpec, sub: usize, f: F) -> VoxelGrid {
    let mut grid = VoxelGrid::zeros(spec);
    let [nx, ny, _] = spec.dims;
    let h = spec.cell_size;
    let origin = spec.origin;
    let w = 1.0 / (sub * sub * sub) as f64;
    grid.data
        .par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(k, slab)| {
            for j in 0..ny {
                for i in 0..nx {
                    let mut acc = 0.0;
                    for sz in 0..sub {
                        let z = origin[2] + (k as f64 + (sz as f64 + 0.5) / sub as f64) * h;
                        for sy in 0..sub {
                            let y = origin[1] + (j as f64 + (sy as f64 + 0.5) / sub as f64) * h;
                            for sx in 0..sub {
                                let x = origin[0] + (i as f64 + (sx as f64 + 0.5) / sub as f64) * h;
                                acc += f([x, y, z]);
                            }
                        }
                    }
                    slab[i + nx * j] = acc * w;
                }
            }
        });
    grid
}

/// Sample a distribution onto a grid without any smoothing, supersampling each
/// cell `sub`^3 times (point sets deposit into their containing cell).
pub fn rasterize(dist: &MassDistribution, spec: &GridSpec, sub: usize) -> Result<VoxelGrid> {
    let sub = sub.max(1);
    match dist {
        MassDistribution::PointSet(p) => {
            let mut grid = VoxelGrid::zeros(spec);
            let h = spec.cell_size;
            let vol = grid.cell_volume();
            for pm in &p.points {
                let mut idx = [0usize; 3];
                for ax in 0..3 {
                    let u = (pm.position[ax] - spec.origin[ax]) / h;
                    if u < 0.0 || u >= spec.dims[ax] as f64 {
                        return Err(Error::SupportNotCovered(
                            "point mass falls outside the requested grid".into(),
                        ));
                    }
                    idx[ax] = u as usize;
                }
                let i = grid.index(idx[0], idx[1], idx[2]);
                grid.data[i] += pm.mass / vol;
            }
            Ok(grid)
        }
        MassDistribution::UniformBall(b) => Ok(supersampled(spec, sub, |r| {
            if norm3(sub3(r, b.center)) <= b.radius {
                b.density
            } else {
                0.0
            }
        })),
        MassDistribution::GranularBall(g) => Ok(rasterize_granular(g, spec, sub)),
        MassDistribution::SmearedGranular(s) => {
            let m = s.base.nucleus_mass();
            let centers = s.base.nucleus_centers();
            let reach = s.base.nucleus_radius + 8.0 * s.smear_length;
            Ok(cell_centers_par(spec, |r| {
                let mut rho = 0.0;
                for c in &centers {
                    let d = norm3(sub3(r, *c));
                    if d <= reach {
                        rho += m * smeared_ball_profile(d, s.base.nucleus_radius, s.smear_length);
                    }
                }
                rho
            }))
        }
        MassDistribution::VoxelGrid(v) => Ok(supersampled(spec, sub, |r| v.density_at(r))),
    }
}

fn rasterize_granular(g: &GranularBall, spec: &GridSpec, sub: usize) -> VoxelGrid {
    // Scatter per nucleus: each touches only a handful of cells.
    let mut grid = VoxelGrid::zeros(spec);
    let h = spec.cell_size;
    let rn = g.nucleus_radius;
    let w = 1.0 / (sub * sub * sub) as f64;
    for c in g.nucleus_centers() {
        let lo = [
            (((c[0] - rn) - spec.origin[0]) / h).floor().max(0.0) as usize,
            (((c[1] - rn) - spec.origin[1]) / h).floor().max(0.0) as usize,
            (((c[2] - rn) - spec.origin[2]) / h).floor().max(0.0) as usize,
        ];
        let hi = [
            ((((c[0] + rn) - spec.origin[0]) / h).ceil() as usize).min(spec.dims[0]),
            ((((c[1] + rn) - spec.origin[1]) / h).ceil() as usize).min(spec.dims[1]),
            ((((c[2] + rn) - spec.origin[2]) / h).ceil() as usize).min(spec.dims[2]),
        ];
        for k in lo[2]..hi[2] {
            for j in lo[1]..hi[1] {
                for i in lo[0]..hi[0] {
                    let mut inside = 0usize;
                    for sz in 0..sub {
                        let z = spec.origin[2] + (k as f64 + (sz as f64 + 0.5) / sub as f64) * h;
                        for sy in 0..sub {
                            let y = spec.origin[1] + (j as f64 + (sy as f64 + 0.5) / sub as f64) * h;
                            for sx in 0..sub {
                                let x = spec.origin[0] + (i as f64 + (sx as f64 + 0.5) / sub as f64) * h;
                                let d = sub3([x, y, z], c);
                                if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= rn * rn {
                                    inside += 1;
                                }
                            }
                        }
                    }
                    if inside > 0 {
                        let idx = grid.index(i, j, k);
                        grid.data[idx] += g.nucleus_density * inside as f64 * w;
                    }
                }
            }
        }
    }
    grid
}

/// Family of models interpolating between nuclear granularity (s = 0) and the
/// homogeneous ball (s >> lattice spacing).
pub fn smearing_sweep(base: &GranularBall, s_values: &[f64]) -> Result<Vec<MassDistribution>> {
    if s_values.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter("smear lengths must be sorted ascending".into()));
    }
    if s_values.iter().any(|s| *s < 0.0 || !s.is_finite()) {
        return Err(Error::InvalidParameter("smear lengths must be finite and non-negative".into()));
    }
    s_values
        .iter()
        .map(|&s| {
            if s == 0.0 {
                Ok(MassDistribution::GranularBall(base.clone()))
            } else {
                Ok(MassDistribution::SmearedGranular(SmearedGranular::new(base.clone(), s)?))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn test_ball() -> UniformBall {
        UniformBall::from_density([0.0; 3], 1.0, 1000.0).unwrap()
    }

    fn small_lattice() -> GranularBall {
        // 2x2x2 nuclei: lattice origin offset by a/2 so 8 nodes fit in the ball
        GranularBall::new([0.0; 3], 1.0, 0.1, 5e4, 0.8, Some([-0.4, -0.4, -0.4])).unwrap()
    }

    #[test]
    fn ball_mass_consistent_with_density() {
        let b = test_ball();
        assert_relative_eq!(b.mass(), 1000.0 * FOUR_THIRDS_PI, max_relative = 1e-15);
        let b2 = UniformBall::from_mass([0.0; 3], 1.0, b.mass()).unwrap();
        assert_relative_eq!(b2.density, 1000.0, max_relative = 1e-12);
    }

    #[test]
    fn ball_density_inside_and_outside() {
        let d = MassDistribution::UniformBall(test_ball());
        assert_eq!(d.evaluate_density([0.0; 3]).unwrap(), 1000.0);
        assert_eq!(d.evaluate_density([2.0, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn point_set_rejects_evaluation() {
        let p = PointSet::new(vec![PointMass { position: [0.0; 3], mass: 1.0 }]).unwrap();
        let d = MassDistribution::PointSet(p);
        assert!(matches!(d.evaluate_density([0.0; 3]), Err(Error::PointSetNotEvaluable)));
    }

    #[test]
    fn granular_vacuum_between_nuclei() {
        let g = small_lattice();
        let d = MassDistribution::GranularBall(g.clone());
        // midway between two adjacent nuclei along x
        let c = g.nucleus_centers();
        let mid = [(c[0][0] + c[1][0]) / 2.0, c[0][1], c[0][2]];
        assert_eq!(d.evaluate_density(mid).unwrap(), 0.0);
        // inside a nucleus
        assert_eq!(d.evaluate_density(c[0]).unwrap(), 5e4);
    }

    #[test]
    fn granular_rejects_overlapping_nuclei() {
        assert!(GranularBall::new([0.0; 3], 1.0, 0.3, 1.0, 0.5, None).is_err());
    }

    #[test]
    fn granular_lattice_count_and_mass() {
        let g = small_lattice();
        assert_eq!(g.nucleus_count(), 8);
        assert_relative_eq!(
            g.total_mass(),
            8.0 * 5e4 * FOUR_THIRDS_PI * 0.1f64.powi(3),
            max_relative = 1e-12
        );
    }

    #[test]
    fn translate_identity_and_shift() {
        let d = MassDistribution::UniformBall(test_ball());
        assert_eq!(d.translate([0.0; 3]), d);
        let t = d.translate([0.5, 0.0, 0.0]);
        match t {
            MassDistribution::UniformBall(b) => assert_eq!(b.center, [0.5, 0.0, 0.0]),
            _ => panic!("translation must preserve the variant"),
        }
        assert_relative_eq!(
            t.evaluate_density([0.5, 0.0, 0.0]).unwrap(),
            d.evaluate_density([0.0; 3]).unwrap()
        );
    }

    #[test]
    fn voxel_translate_conserves_mass_and_interpolates() {
        let spec = GridSpec { origin: [0.0; 3], cell_size: 0.5, dims: [8, 8, 8] };
        let ball = UniformBall::from_density([2.0, 2.0, 2.0], 1.0, 10.0).unwrap();
        let g = rasterize(&MassDistribution::UniformBall(ball), &spec, 4).unwrap();
        let m0 = g.total_mass();
        let t = g.translated([0.77, -0.31, 0.5]);
        assert_relative_eq!(t.total_mass(), m0, max_relative = 1e-12);
        // integer-cell translation is an exact origin shift
        let t2 = g.translated([0.5, 0.0, 0.0]);
        assert_eq!(t2.dims(), g.dims());
        assert_eq!(t2.origin()[0], g.origin()[0] + 0.5);
        assert_eq!(t2.data(), g.data());
    }

    #[test]
    fn smeared_ball_profile_normalizes() {
        // radial quadrature of the profile must integrate to one
        let (a, s) = (1.0, 0.35);
        let mut total = 0.0;
        let n = 4000;
        let rmax = a + 10.0 * s;
        for i in 0..n {
            let r = (i as f64 + 0.5) / n as f64 * rmax;
            total += 4.0 * PI * r * r * smeared_ball_profile(r, a, s) * (rmax / n as f64);
        }
        assert_relative_eq!(total, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn erf_matches_known_values() {
        assert_relative_eq!(erf(0.5), 0.5204998778130465, max_relative = 1e-13);
        assert_relative_eq!(erf(1.0), 0.8427007929497149, max_relative = 1e-13);
        assert_relative_eq!(erf(2.0), 0.9953222650189527, max_relative = 1e-13);
        assert_relative_eq!(erf(-1.0), -0.8427007929497149, max_relative = 1e-13);
    }

    #[test]
    fn coarse_grain_point_becomes_sigma_ball() {
        let p = PointSet::new(vec![PointMass { position: [0.0; 3], mass: 2.0 }]).unwrap();
        let dist = MassDistribution::PointSet(p);
        let policy = CutoffPolicy::custom(0.5, SmearKernel::HardSphere).unwrap();
        let spec = GridSpec::covering(&dist.support(), 0.2, 2.0);
        let g = coarse_grain(&dist, &policy, &spec).unwrap();
        assert_relative_eq!(g.total_mass(), 2.0, max_relative = MASS_TOLERANCE);
        // interior cell density equals the sigma-ball density
        let expect = 2.0 / (FOUR_THIRDS_PI * 0.5f64.powi(3));
        assert_relative_eq!(g.density_at([0.0; 3]), expect, max_relative = 0.05);
        // far cell is empty
        assert_eq!(g.density_at([1.5, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn coarse_grain_ball_interior_unchanged() {
        let dist = MassDistribution::UniformBall(test_ball());
        let policy = CutoffPolicy::custom(0.05, SmearKernel::Gaussian).unwrap();
        let spec = GridSpec::covering(&dist.support(), 0.025, 0.2);
        let g = coarse_grain(&dist, &policy, &spec).unwrap();
        assert_relative_eq!(g.total_mass(), dist.total_mass(), max_relative = MASS_TOLERANCE);
        assert_relative_eq!(g.density_at([0.0; 3]), 1000.0, max_relative = 0.01);
        assert_relative_eq!(g.density_at([0.3, 0.2, -0.1]), 1000.0, max_relative = 0.01);
    }

    #[test]
    fn coarse_grain_rejects_bad_grids() {
        let dist = MassDistribution::UniformBall(test_ball());
        let policy = CutoffPolicy::custom(0.05, SmearKernel::Gaussian).unwrap();
        let coarse = GridSpec::covering(&dist.support(), 0.2, 0.2);
        assert!(matches!(
            coarse_grain(&dist, &policy, &coarse),
            Err(Error::GridTooCoarse { .. })
        ));
        let tight = GridSpec { origin: [-1.0; 3], cell_size: 0.025, dims: [40, 40, 40] };
        assert!(matches!(
            coarse_grain(&dist, &policy, &tight),
            Err(Error::SupportNotCovered(_))
        ));
    }

    /// Independent oracle: direct Riemann-sum convolution of the raw granular
    /// density with the Gaussian kernel, no closed-form profiles involved.
    fn convolution_oracle(g: &GranularBall, s: f64, at: [f64; 3]) -> f64 {
        let fine = 0.02 * g.nucleus_radius.max(s / 25.0);
        let reach = 6.0 * s + g.nucleus_radius;
        let n = (2.0 * reach / fine).ceil() as i64;
        let mut acc = 0.0;
        for kz in 0..n {
            let z = at[2] - reach + (kz as f64 + 0.5) * fine;
            for ky in 0..n {
                let y = at[1] - reach + (ky as f64 + 0.5) * fine;
                for kx in 0..n {
                    let x = at[0] - reach + (kx as f64 + 0.5) * fine;
                    let rho = granular_density(g, [x, y, z]);
                    if rho > 0.0 {
                        let d = sub3(at, [x, y, z]);
                        acc += rho * gaussian3(d[0] * d[0] + d[1] * d[1] + d[2] * d[2], s);
                    }
                }
            }
        }
        acc * fine.powi(3)
    }

    #[test]
    fn smeared_density_matches_convolution_oracle() {
        let g = small_lattice();
        let s = g.nucleus_radius; // s = r_n: broadened peaks
        let sm = SmearedGranular::new(g.clone(), s).unwrap();
        let at = g.nucleus_centers()[0];
        let got = smeared_granular_density(&sm, at);
        let want = convolution_oracle(&g, s, at);
        assert_relative_eq!(got, want, max_relative = 0.02);
        assert!(got < g.nucleus_density, "smearing must lower the peak density");
    }

    #[test]
    fn smearing_sweep_endpoints() {
        let g = small_lattice();
        let fam = smearing_sweep(&g, &[0.0, 0.1, 0.8]).unwrap();
        assert_eq!(fam.len(), 3);
        assert!(matches!(&fam[0], MassDistribution::GranularBall(b) if *b == g));
        assert!(matches!(&fam[1], MassDistribution::SmearedGranular(_)));
        assert!(smearing_sweep(&g, &[0.5, 0.1]).is_err());
    }

    #[test]
    fn heavy_smearing_approaches_homogeneous() {
        // s >> a: peak/mean density ratio near one inside the lattice region
        let g = small_lattice();
        let s = 10.0 * g.lattice_spacing;
        let sm = SmearedGranular::new(g.clone(), s).unwrap();
        let peak = smeared_granular_density(&sm, g.nucleus_centers()[0]);
        let mid = smeared_granular_density(&sm, [0.0; 3]);
        assert!((peak / mid - 1.0).abs() < 0.05, "peak/mid = {}", peak / mid);
    }

    #[test]
    fn voxel_io_roundtrip() {
        let spec = GridSpec { origin: [-1.0, 0.5, 2.0], cell_size: 0.25, dims: [4, 3, 2] };
        let mut g = VoxelGrid::zeros(&spec);
        for (i, v) in g.data_mut().iter_mut().enumerate() {
            *v = i as f64 * 0.1;
        }
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("grid.bin");
        let sidecar = dir.path().join("grid.txt");
        g.write_files(&data, &sidecar).unwrap();
        let back = VoxelGrid::read_files(&data, &sidecar).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn hard_sphere_smear_of_ball_conserves_mass() {
        let dist = MassDistribution::UniformBall(test_ball());
        let policy = CutoffPolicy::custom(0.1, SmearKernel::HardSphere).unwrap();
        let spec = GridSpec::covering(&dist.support(), 0.05, 0.4);
        let g = coarse_grain(&dist, &policy, &spec).unwrap();
        assert_relative_eq!(g.total_mass(), dist.total_mass(), max_relative = MASS_TOLERANCE);
    }

    proptest! {
        #[test]
        fn translation_composes_for_balls(
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
            bx in -1.0f64..1.0, by in -1.0f64..1.0, bz in -1.0f64..1.0,
        ) {
            let d = MassDistribution::UniformBall(test_ball());
            let two = d.translate([ax, ay, az]).translate([bx, by, bz]);
            let one = d.translate([ax + bx, ay + by, az + bz]);
            match (two, one) {
                (MassDistribution::UniformBall(p), MassDistribution::UniformBall(q)) => {
                    for i in 0..3 {
                        prop_assert!((p.center[i] - q.center[i]).abs() < 1e-12);
                    }
                }
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn voxel_translation_conserves_mass(
            dx in -2.0f64..2.0, dy in -2.0f64..2.0, dz in -2.0f64..2.0,
        ) {
            let spec = GridSpec { origin: [0.0; 3], cell_size: 0.5, dims: [6, 6, 6] };
            let ball = UniformBall::from_density([1.5, 1.5, 1.5], 1.0, 7.0).unwrap();
            let g = rasterize(&MassDistribution::UniformBall(ball), &spec, 2).unwrap();
            let t = g.translated([dx, dy, dz]);
            prop_assert!((t.total_mass() - g.total_mass()).abs() / g.total_mass() < 1e-9);
            prop_assert!(t.data().iter().all(|v| *v >= 0.0));
        }
    }
}
