//! The Newtonian mutual-energy functional U(f,f') = -G integral of
//! f(r)f'(s)/|r-s|, evaluated by closed forms where geometry allows, by a
//! direct cell-pair sum, or by FFT convolution with a tabulated 1/|r| kernel.
//!
//! Sign convention: U is negative for non-negative densities; all "W" helpers
//! below are the positive double integral without the -G prefactor.

use std::collections::HashMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::constants::PhysicalConstants;
use crate::density::{
    GranularBall, GridSpec, MassDistribution, PointSet, SmearedGranular, UniformBall, VoxelGrid,
    erf, rasterize,
};
use crate::error::{Error, Result};
use crate::fft::{Fft3, good_fft_size};

/// Mean inverse distance between two uniform points in the unit cube,
/// i.e. the double integral of 1/|r-s| over the unit cube against itself.
/// Determined once by the Monte-Carlo / quadrature oracle (see
/// `validate::oracles::mc_unit_cube_inverse_distance`, which re-checks it);
/// replaces the singular same-cell term in the grid sums.
pub const UNIT_CUBE_SELF_COEFF: f64 = 1.8823126444;

/// Self-energy factor of a homogeneous ball: W = (6/5) M^2 / R.
pub const BALL_SELF_COEFF: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyMethod {
    Analytic,
    Direct,
    Fft,
}

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyResult {
    /// U [J]; non-positive for non-negative densities.
    pub value: f64,
    pub method: EnergyMethod,
    pub estimated_relative_error: f64,
    pub grid_resolution: Option<[usize; 3]>,
}

impl EnergyResult {
    fn analytic(value: f64, err: f64) -> Self {
        EnergyResult { value, method: EnergyMethod::Analytic, estimated_relative_error: err, grid_resolution: None }
    }
}

/// Tunables for the grid-based paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    /// Cap on the Direct path's cell-pair count.
    pub pair_budget: u128,
    /// Cells along the longest axis when an analytic model is auto-gridded.
    pub resolution: usize,
    /// Supersampling factor used when rasterizing sharp-edged models.
    pub supersample: usize,
    /// Two-resolution comparison for `estimated_relative_error`.
    pub estimate_error: bool,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions { pair_budget: 2_000_000_000, resolution: 64, supersample: 4, estimate_error: true }
    }
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Overlap factor for two equal homogeneous balls of radius R at center
/// distance x*R: W = (M_a M_b / R) * factor(x).  Piecewise polynomial inside
/// x < 2, shell-theorem 1/x outside; continuous and once differentiable at
/// x = 2.
pub fn ball_pair_overlap_factor(x: f64) -> f64 {
    if x >= 2.0 {
        1.0 / x
    } else {
        (192.0 - 80.0 * x * x + 30.0 * x * x * x - x.powi(5)) / 160.0
    }
}

/// Cancellation-free difference factor(0) - factor(x) for the displaced-ball
/// catness; the naive subtraction loses all precision once x^2 drops below
/// the f64 epsilon.
pub fn ball_displaced_catness_factor(x: f64) -> f64 {
    if x >= 2.0 {
        BALL_SELF_COEFF - 1.0 / x
    } else {
        x * x * (80.0 - 30.0 * x + x * x * x) / 160.0
    }
}

/// U for two point sets; exact.  U(A,A) diverges and is reported as the
/// typed singularity.
pub fn mutual_energy_points(
    a: &PointSet,
    b: &PointSet,
    consts: &PhysicalConstants,
) -> Result<EnergyResult> {
    consts.validate()?;
    if a.points == b.points {
        return Err(Error::SingularSelfEnergy);
    }
    let mut w = 0.0;
    for pa in &a.points {
        for pb in &b.points {
            let d = norm3([
                pa.position[0] - pb.position[0],
                pa.position[1] - pb.position[1],
                pa.position[2] - pb.position[2],
            ]);
            if d == 0.0 {
                return Err(Error::CoincidentPoints);
            }
            w += pa.mass * pb.mass / d;
        }
    }
    Ok(EnergyResult::analytic(-consts.newton_g * w, 0.0))
}

/// U for two homogeneous balls.  Exact shell-theorem value for separated
/// balls of any radii; closed-form overlap polynomial for equal radii;
/// overlapping unequal radii have no closed form here and report
/// `UnsupportedGeometry` (callers fall back to the FFT path).
pub fn mutual_energy_uniform_balls(
    a: &UniformBall,
    b: &UniformBall,
    consts: &PhysicalConstants,
) -> Result<EnergyResult> {
    consts.validate()?;
    let d = norm3([
        a.center[0] - b.center[0],
        a.center[1] - b.center[1],
        a.center[2] - b.center[2],
    ]);
    let (ma, mb) = (a.mass(), b.mass());
    if d >= a.radius + b.radius {
        return Ok(EnergyResult::analytic(-consts.newton_g * ma * mb / d, 0.0));
    }
    if (a.radius - b.radius).abs() > 1e-12 * a.radius.max(b.radius) {
        return Err(Error::UnsupportedGeometry(format!(
            "overlapping balls with unequal radii {} and {}",
            a.radius, b.radius
        )));
    }
    let r = a.radius;
    let w = ma * mb / r * ball_pair_overlap_factor(d / r);
    Ok(EnergyResult::analytic(-consts.newton_g * w, 1e-15))
}

/// Spherical pair kernel: the positive double integral W(d) for two
/// unit-mass homogeneous balls of the same radius, optionally convolved with
/// an isotropic Gaussian of standard deviation `smear`.
///
/// Routes: hard balls use the overlap polynomial; heavily smeared pairs use
/// the Gaussian-equivalent erf form with the ball radius folded into an
/// effective width; the remaining band is a spectral quadrature.
#[derive(Debug, Clone, Copy)]
pub struct SpherePairKernel {
    pub radius: f64,
    pub smear: f64,
}

impl SpherePairKernel {
    pub fn new(radius: f64, smear: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("kernel radius must be positive, got {radius}")));
        }
        if !(smear >= 0.0 && smear.is_finite()) {
            return Err(Error::InvalidParameter(format!("smear must be non-negative, got {smear}")));
        }
        Ok(SpherePairKernel { radius, smear })
    }

    /// Relative accuracy of `energy_factor` on the active route.
    pub fn relative_error(&self) -> f64 {
        if self.smear == 0.0 {
            1e-15
        } else {
            1e-4
        }
    }

    pub fn energy_factor(&self, d: f64) -> f64 {
        let a = self.radius;
        let s = self.smear;
        if s == 0.0 {
            return if d >= 2.0 * a { 1.0 / d } else { ball_pair_overlap_factor(d / a) / a };
        }
        // beyond overlap + tails the pair is point-like
        if d >= 2.0 * a + 12.0 * s {
            return 1.0 / d;
        }
        if s >= 8.0 * a {
            // ball form factor folded into an effective Gaussian width
            let s_eff = (s * s + a * a / 5.0).sqrt();
            return gaussian_pair_factor(d, s_eff);
        }
        self.spectral_quadrature(d)
    }

    /// W(d) = (2/(pi a)) * int_0^inf B(v)^2 exp(-v^2 (s/a)^2) sinc(v d/a) dv
    /// with B the normalized ball form factor.
    fn spectral_quadrature(&self, d: f64) -> f64 {
        let a = self.radius;
        let sa = self.smear / a;
        let da = d / a;
        let v_max = if sa > 0.019 { (5.7 / sa).min(300.0).max(20.0) } else { 300.0 };
        // panels resolve the slowest of: the form-factor oscillation, the
        // sinc oscillation, and the Gaussian damping scale
        let width = (PI / 4.0) / da.max(1.0).max(sa);
        let panels = (v_max / width).ceil() as usize;
        let mut total = 0.0;
        for p in 0..panels {
            let lo = p as f64 * width;
            let hi = (lo + width).min(v_max);
            let c = 0.5 * (lo + hi);
            let h = 0.5 * (hi - lo);
            for (x, w) in GL16 {
                let v = c + h * x;
                let b = ball_form_factor(v);
                let damp = (-(v * sa) * (v * sa)).exp();
                let sinc = if v * da < 1e-8 { 1.0 } else { (v * da).sin() / (v * da) };
                total += w * h * b * b * damp * sinc;
            }
        }
        2.0 / (PI * a) * total
    }
}

/// Mutual-energy factor for two unit-mass Gaussians of standard deviation s:
/// erf(d/(2s))/d, with the analytic d -> 0 limit.
pub fn gaussian_pair_factor(d: f64, s: f64) -> f64 {
    if d < 1e-10 * s {
        1.0 / (s * PI.sqrt())
    } else {
        erf(d / (2.0 * s)) / d
    }
}

/// Normalized form factor of a unit ball: 3 (sin v - v cos v) / v^3.
fn ball_form_factor(v: f64) -> f64 {
    if v.abs() < 1e-2 {
        let v2 = v * v;
        1.0 - v2 / 10.0 + v2 * v2 / 280.0
    } else {
        3.0 * (v.sin() - v * v.cos()) / (v * v * v)
    }
}

/// 16-point Gauss-Legendre nodes and weights on [-1, 1].
const GL16: [(f64, f64); 16] = [
    (-0.9894009349916499, 0.027152459411754095),
    (-0.9445750230732326, 0.06225352393864789),
    (-0.8656312023878318, 0.09515851168249278),
    (-0.7554044083550030, 0.12462897125553387),
    (-0.6178762444026438, 0.14959598881657673),
    (-0.4580167776572274, 0.16915651939500254),
    (-0.2816035507792589, 0.18260341504492358),
    (-0.0950125098376374, 0.18945061045506850),
    (0.0950125098376374, 0.18945061045506850),
    (0.2816035507792589, 0.18260341504492358),
    (0.4580167776572274, 0.16915651939500254),
    (0.6178762444026438, 0.14959598881657673),
    (0.7554044083550030, 0.12462897125553387),
    (0.8656312023878318, 0.09515851168249278),
    (0.9445750230732326, 0.06225352393864789),
    (0.9894009349916499, 0.027152459411754095),
];

/// U(f, T f) for a granular ball and a rigidly displaced copy, assembled from
/// exact per-nucleus-pair factors.  `offset = 0` gives the self-energy.
pub fn displaced_pair_energy_granular(
    g: &GranularBall,
    offset: [f64; 3],
    consts: &PhysicalConstants,
) -> Result<EnergyResult> {
    let kernel = SpherePairKernel::new(g.nucleus_radius, 0.0)?;
    lattice_pair_energy(g, offset, &kernel, consts)
}

/// Same for the Gaussian-smeared granular model.
pub fn displaced_pair_energy_smeared(
    sg: &SmearedGranular,
    offset: [f64; 3],
    consts: &PhysicalConstants,
) -> Result<EnergyResult> {
    let kernel = SpherePairKernel::new(sg.base.nucleus_radius, sg.smear_length)?;
    lattice_pair_energy(&sg.base, offset, &kernel, consts)
}

fn lattice_pair_energy(
    g: &GranularBall,
    offset: [f64; 3],
    kernel: &SpherePairKernel,
    consts: &PhysicalConstants,
) -> Result<EnergyResult> {
    consts.validate()?;
    let mults = lattice_pair_multiplicities(g)?;
    let a = g.lattice_spacing;
    // distances, canonicalized so symmetric lattice offsets dedup bitwise
    let mut key_of = Vec::with_capacity(mults.len());
    let mut unique: HashMap<u64, f64> = HashMap::new();
    for (delta, _) in &mults {
        let mut comps = [
            a * delta[0] as f64 - offset[0],
            a * delta[1] as f64 - offset[1],
            a * delta[2] as f64 - offset[2],
        ];
        for c in &mut comps {
            *c = *c * *c;
        }
        comps.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let d = (comps[0] + comps[1] + comps[2]).sqrt();
        let key = d.to_bits();
        unique.entry(key).or_insert(d);
        key_of.push(key);
    }
    let mut keys: Vec<u64> = unique.keys().copied().collect();
    keys.sort_unstable();
    let factors: Vec<f64> = keys.par_iter().map(|k| kernel.energy_factor(unique[k])).collect();
    let table: HashMap<u64, f64> = keys.into_iter().zip(factors).collect();
    let mut w = 0.0;
    for ((_, mult), key) in mults.iter().zip(&key_of) {
        w += *mult as f64 * table[key];
    }
    let m = g.nucleus_mass();
    Ok(EnergyResult::analytic(-consts.newton_g * m * m * w, kernel.relative_error()))
}

/// Ordered-pair multiplicities of integer lattice displacements between
/// occupied nodes (the zero displacement counts the nuclei themselves).
fn lattice_pair_multiplicities(g: &GranularBall) -> Result<Vec<([i64; 3], u64)>> {
    let nodes = g.lattice_nodes();
    let n = nodes.len();
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for (idx, _) in &nodes {
        for ax in 0..3 {
            lo[ax] = lo[ax].min(idx[ax]);
            hi[ax] = hi[ax].max(idx[ax]);
        }
    }
    let dims = [
        (hi[0] - lo[0] + 1) as usize,
        (hi[1] - lo[1] + 1) as usize,
        (hi[2] - lo[2] + 1) as usize,
    ];
    if n <= 1500 {
        // direct double loop
        let mut map: HashMap<[i64; 3], u64> = HashMap::new();
        for (ia, _) in &nodes {
            for (ib, _) in &nodes {
                let delta = [ia[0] - ib[0], ia[1] - ib[1], ia[2] - ib[2]];
                *map.entry(delta).or_insert(0) += 1;
            }
        }
        let mut out: Vec<([i64; 3], u64)> = map.into_iter().collect();
        out.sort_unstable();
        return Ok(out);
    }
    // FFT autocorrelation of the occupancy indicator
    let padded = [
        good_fft_size(2 * dims[0]),
        good_fft_size(2 * dims[1]),
        good_fft_size(2 * dims[2]),
    ];
    let fft = Fft3::new(padded);
    let mut occ = vec![Complex64::default(); fft.len()];
    for (idx, _) in &nodes {
        let (i, j, k) = (
            (idx[0] - lo[0]) as usize,
            (idx[1] - lo[1]) as usize,
            (idx[2] - lo[2]) as usize,
        );
        occ[i + padded[0] * (j + padded[1] * k)] = Complex64::new(1.0, 0.0);
    }
    fft.forward(&mut occ);
    occ.par_iter_mut().for_each(|v| *v = Complex64::new(v.norm_sqr(), 0.0));
    fft.inverse(&mut occ);
    let mut out = Vec::new();
    for dz in -(dims[2] as i64 - 1)..dims[2] as i64 {
        for dy in -(dims[1] as i64 - 1)..dims[1] as i64 {
            for dx in -(dims[0] as i64 - 1)..dims[0] as i64 {
                let wrap = |d: i64, p: usize| ((d % p as i64) + p as i64) as usize % p;
                let i = wrap(dx, padded[0]);
                let j = wrap(dy, padded[1]);
                let k = wrap(dz, padded[2]);
                let count = occ[i + padded[0] * (j + padded[1] * k)].re.round();
                if count >= 0.5 {
                    out.push(([dx, dy, dz], count as u64));
                }
            }
        }
    }
    let total: u64 = out.iter().map(|(_, c)| c).sum();
    if total != (n as u64) * (n as u64) {
        return Err(Error::NumericalInconsistency(format!(
            "lattice autocorrelation mass {total} differs from n^2 = {}",
            (n as u64) * (n as u64)
        )));
    }
    Ok(out)
}

/// U(f,f) for any finite-self-energy model.
pub fn self_energy(
    dist: &MassDistribution,
    consts: &PhysicalConstants,
    opts: &GridOptions,
) -> Result<EnergyResult> {
    match dist {
        MassDistribution::PointSet(_) => Err(Error::SingularSelfEnergy),
        MassDistribution::UniformBall(b) => {
            consts.validate()?;
            let m = b.mass();
            Ok(EnergyResult::analytic(-consts.newton_g * BALL_SELF_COEFF * m * m / b.radius, 1e-15))
        }
        MassDistribution::GranularBall(g) => displaced_pair_energy_granular(g, [0.0; 3], consts),
        MassDistribution::SmearedGranular(s) => displaced_pair_energy_smeared(s, [0.0; 3], consts),
        MassDistribution::VoxelGrid(v) => mutual_energy_grid(v, v, EnergyMethod::Fft, consts, opts),
    }
}

struct CommonGrid {
    spec: GridSpec,
    /// cell masses of f and g on the union grid
    mf: Vec<f64>,
    mg: Vec<f64>,
}

fn embed_common(f: &VoxelGrid, g: &VoxelGrid) -> Result<CommonGrid> {
    let rel = (f.cell_size() - g.cell_size()).abs() / f.cell_size();
    if rel > 1e-9 {
        return Err(Error::IncompatibleGrids(format!(
            "cell sizes differ: {} vs {}",
            f.cell_size(),
            g.cell_size()
        )));
    }
    let off = f
        .commensurate_offset(g)
        .ok_or_else(|| Error::IncompatibleGrids("origins are not commensurate".into()))?;
    let h = f.cell_size();
    let mut lo = [0i64; 3];
    let mut hi = [0i64; 3];
    for ax in 0..3 {
        lo[ax] = 0.min(off[ax]);
        hi[ax] = (f.dims()[ax] as i64).max(off[ax] + g.dims()[ax] as i64);
    }
    let dims = [
        (hi[0] - lo[0]) as usize,
        (hi[1] - lo[1]) as usize,
        (hi[2] - lo[2]) as usize,
    ];
    let origin = [
        f.origin()[0] + h * lo[0] as f64,
        f.origin()[1] + h * lo[1] as f64,
        f.origin()[2] + h * lo[2] as f64,
    ];
    let spec = GridSpec { origin, cell_size: h, dims };
    let vol = h * h * h;
    let place = |src: &VoxelGrid, base: [i64; 3]| -> Vec<f64> {
        let mut out = vec![0.0f64; dims[0] * dims[1] * dims[2]];
        let [snx, sny, snz] = src.dims();
        for k in 0..snz {
            for j in 0..sny {
                for i in 0..snx {
                    let v = src.value(i, j, k);
                    if v != 0.0 {
                        let (ti, tj, tk) = (
                            (i as i64 + base[0] - lo[0]) as usize,
                            (j as i64 + base[1] - lo[1]) as usize,
                            (k as i64 + base[2] - lo[2]) as usize,
                        );
                        out[ti + dims[0] * (tj + dims[1] * tk)] = v * vol;
                    }
                }
            }
        }
        out
    };
    let mf = place(f, [0, 0, 0]);
    let mg = place(g, off);
    Ok(CommonGrid { spec, mf, mg })
}

/// U between two voxel grids.  `Direct` is the O(N^2) cell-pair sum; `Fft`
/// convolves with the tabulated kernel.  Both replace the singular same-cell
/// term with the uniform-cube constant, so they agree by construction up to
/// transform round-off.
pub fn mutual_energy_grid(
    f: &VoxelGrid,
    g: &VoxelGrid,
    method: EnergyMethod,
    consts: &PhysicalConstants,
    opts: &GridOptions,
) -> Result<EnergyResult> {
    consts.validate()?;
    let value = match method {
        EnergyMethod::Direct => direct_energy(f, g, consts, opts)?,
        EnergyMethod::Fft => fft_energy(f, g, consts)?,
        EnergyMethod::Analytic => {
            return Err(Error::UnsupportedGeometry(
                "no analytic route for raw voxel grids".into(),
            ))
        }
    };
    let mut err = 0.0;
    if opts.estimate_error {
        let fc = downsample2(f);
        let coarse = if std::ptr::eq(f, g) {
            match method {
                EnergyMethod::Direct => direct_energy(&fc, &fc, consts, opts)?,
                _ => fft_energy(&fc, &fc, consts)?,
            }
        } else {
            let gc = downsample2(g);
            match method {
                EnergyMethod::Direct => direct_energy(&fc, &gc, consts, opts)?,
                _ => fft_energy(&fc, &gc, consts)?,
            }
        };
        if value != 0.0 {
            err = ((value - coarse) / value).abs();
        }
    }
    Ok(EnergyResult {
        value,
        method,
        estimated_relative_error: err,
        grid_resolution: Some(f.dims()),
    })
}

/// Block-average onto a grid with doubled cell size (zero-padding odd edges).
pub fn downsample2(v: &VoxelGrid) -> VoxelGrid {
    let [nx, ny, nz] = v.dims();
    let dims = [nx.div_ceil(2), ny.div_ceil(2), nz.div_ceil(2)];
    let spec = GridSpec { origin: v.origin(), cell_size: 2.0 * v.cell_size(), dims };
    let mut out = VoxelGrid::zeros(&spec);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = out.index(i / 2, j / 2, k / 2);
                out.data_mut()[idx] += v.value(i, j, k) / 8.0;
            }
        }
    }
    out
}

fn direct_energy(f: &VoxelGrid, g: &VoxelGrid, consts: &PhysicalConstants, opts: &GridOptions) -> Result<f64> {
    let rel = (f.cell_size() - g.cell_size()).abs() / f.cell_size();
    if rel > 1e-9 {
        return Err(Error::IncompatibleGrids(format!(
            "cell sizes differ: {} vs {}",
            f.cell_size(),
            g.cell_size()
        )));
    }
    let h = f.cell_size();
    let vol = h * h * h;
    let collect = |v: &VoxelGrid| -> Vec<([f64; 3], f64)> {
        let [nx, ny, nz] = v.dims();
        let mut out = Vec::new();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let rho = v.value(i, j, k);
                    if rho != 0.0 {
                        out.push((v.cell_center(i, j, k), rho * vol));
                    }
                }
            }
        }
        out
    };
    let fa = collect(f);
    let ga = collect(g);
    let pairs = fa.len() as u128 * ga.len() as u128;
    if pairs > opts.pair_budget {
        return Err(Error::ResourceLimit { pairs, budget: opts.pair_budget });
    }
    let self_coeff = UNIT_CUBE_SELF_COEFF / h;
    let tol = 1e-9 * h;
    // fixed chunking so the reduction order is independent of thread count
    let chunk = 64usize;
    let partials: Vec<f64> = fa
        .par_chunks(chunk)
        .map(|block| {
            let mut acc = 0.0;
            for (ra, ma) in block {
                for (rb, mb) in &ga {
                    let d = norm3([ra[0] - rb[0], ra[1] - rb[1], ra[2] - rb[2]]);
                    acc += if d < tol { ma * mb * self_coeff } else { ma * mb / d };
                }
            }
            acc
        })
        .collect();
    let w: f64 = partials.iter().sum();
    Ok(-consts.newton_g * w)
}

struct FftWorkspace {
    fft: Fft3,
    padded: [usize; 3],
    kernel_hat: Vec<Complex64>,
    union: CommonGrid,
}

fn fft_workspace(f: &VoxelGrid, g: &VoxelGrid) -> Result<FftWorkspace> {
    let union = embed_common(f, g)?;
    let n = union.spec.dims;
    let padded = [good_fft_size(2 * n[0]), good_fft_size(2 * n[1]), good_fft_size(2 * n[2])];
    let fft = Fft3::new(padded);
    let h = union.spec.cell_size;
    let mut kernel = vec![Complex64::default(); fft.len()];
    let self_coeff = UNIT_CUBE_SELF_COEFF / h;
    kernel
        .par_chunks_mut(padded[0] * padded[1])
        .enumerate()
        .for_each(|(k, slab)| {
            let dz = if k <= padded[2] / 2 { k as i64 } else { k as i64 - padded[2] as i64 };
            for j in 0..padded[1] {
                let dy = if j <= padded[1] / 2 { j as i64 } else { j as i64 - padded[1] as i64 };
                for i in 0..padded[0] {
                    let dx = if i <= padded[0] / 2 { i as i64 } else { i as i64 - padded[0] as i64 };
                    let val = if dx == 0 && dy == 0 && dz == 0 {
                        self_coeff
                    } else {
                        let r = h
                            * (((dx * dx + dy * dy + dz * dz) as f64).sqrt());
                        1.0 / r
                    };
                    slab[i + padded[0] * j] = Complex64::new(val, 0.0);
                }
            }
        });
    fft.forward(&mut kernel);
    Ok(FftWorkspace { fft, padded, kernel_hat: kernel, union })
}

fn pad_masses(ws: &FftWorkspace, masses: &[f64]) -> Vec<Complex64> {
    let n = ws.union.spec.dims;
    let mut out = vec![Complex64::default(); ws.fft.len()];
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                let v = masses[i + n[0] * (j + n[1] * k)];
                if v != 0.0 {
                    out[i + ws.padded[0] * (j + ws.padded[1] * k)] = Complex64::new(v, 0.0);
                }
            }
        }
    }
    out
}

/// Parseval contraction sum_q Re(F conj(G)) * K / P^3, chunked for a
/// deterministic, accurate reduction.
fn contract(ws: &FftWorkspace, fa: &[Complex64], ga: &[Complex64]) -> f64 {
    let partials: Vec<f64> = fa
        .par_chunks(4096)
        .zip(ga.par_chunks(4096))
        .zip(ws.kernel_hat.par_chunks(4096))
        .map(|((a, b), k)| {
            let mut acc = 0.0;
            for ((x, y), kk) in a.iter().zip(b).zip(k) {
                acc += (x * y.conj()).re * kk.re;
            }
            acc
        })
        .collect();
    partials.iter().sum::<f64>() / ws.fft.len() as f64
}

fn fft_energy(f: &VoxelGrid, g: &VoxelGrid, consts: &PhysicalConstants) -> Result<f64> {
    let ws = fft_workspace(f, g)?;
    let mut fa = pad_masses(&ws, &ws.union.mf);
    ws.fft.forward(&mut fa);
    let same = std::ptr::eq(f, g) || ws.union.mf == ws.union.mg;
    let w = if same {
        contract(&ws, &fa, &fa)
    } else {
        let mut ga = pad_masses(&ws, &ws.union.mg);
        ws.fft.forward(&mut ga);
        contract(&ws, &fa, &ga)
    };
    Ok(-consts.newton_g * w)
}

/// The three catness energies of a pair of grids computed on one shared
/// kernel: (U(f,f), U(f,g), U(g,g)).
pub fn grid_catness_energies(
    f: &VoxelGrid,
    g: &VoxelGrid,
    consts: &PhysicalConstants,
    opts: &GridOptions,
) -> Result<[EnergyResult; 3]> {
    consts.validate()?;
    let compute = |f: &VoxelGrid, g: &VoxelGrid| -> Result<[f64; 3]> {
        let ws = fft_workspace(f, g)?;
        let mut fa = pad_masses(&ws, &ws.union.mf);
        ws.fft.forward(&mut fa);
        let mut ga = pad_masses(&ws, &ws.union.mg);
        ws.fft.forward(&mut ga);
        Ok([
            -consts.newton_g * contract(&ws, &fa, &fa),
            -consts.newton_g * contract(&ws, &fa, &ga),
            -consts.newton_g * contract(&ws, &ga, &ga),
        ])
    };
    let fine = compute(f, g)?;
    let mut errs = [0.0f64; 3];
    if opts.estimate_error {
        let coarse = compute(&downsample2(f), &downsample2(g))?;
        for i in 0..3 {
            if fine[i] != 0.0 {
                errs[i] = ((fine[i] - coarse[i]) / fine[i]).abs();
            }
        }
    }
    Ok([
        EnergyResult { value: fine[0], method: EnergyMethod::Fft, estimated_relative_error: errs[0], grid_resolution: Some(f.dims()) },
        EnergyResult { value: fine[1], method: EnergyMethod::Fft, estimated_relative_error: errs[1], grid_resolution: Some(f.dims()) },
        EnergyResult { value: fine[2], method: EnergyMethod::Fft, estimated_relative_error: errs[2], grid_resolution: Some(f.dims()) },
    ])
}

/// Real-space potential phi(c) = sum_c' m(c') k(c - c') of a grid, itself on
/// the grid (units kg/m; the Newtonian potential is -G phi).
pub fn potential_grid(v: &VoxelGrid, _consts: &PhysicalConstants) -> Result<VoxelGrid> {
    let ws = fft_workspace(v, v)?;
    let mut fa = pad_masses(&ws, &ws.union.mf);
    ws.fft.forward(&mut fa);
    fa.par_iter_mut().zip(ws.kernel_hat.par_iter()).for_each(|(a, k)| *a *= k.re);
    ws.fft.inverse(&mut fa);
    let n = ws.union.spec.dims;
    let mut out = VoxelGrid::zeros(&ws.union.spec);
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                let idx = out.index(i, j, k);
                out.data_mut()[idx] = fa[i + ws.padded[0] * (j + ws.padded[1] * k)].re;
            }
        }
    }
    Ok(out)
}

fn trilinear(phi: &VoxelGrid, r: [f64; 3]) -> f64 {
    let h = phi.cell_size();
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for ax in 0..3 {
        let u = (r[ax] - phi.origin()[ax]) / h - 0.5;
        let fl = u.floor();
        let i = fl.max(0.0) as usize;
        base[ax] = i.min(phi.dims()[ax].saturating_sub(2));
        frac[ax] = (u - base[ax] as f64).clamp(0.0, 1.0);
    }
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 0 { 1.0 - frac[0] } else { frac[0] })
                    * (if dy == 0 { 1.0 - frac[1] } else { frac[1] })
                    * (if dz == 0 { 1.0 - frac[2] } else { frac[2] });
                acc += w * phi.value(base[0] + dx, base[1] + dy, base[2] + dz);
            }
        }
    }
    acc
}

/// Radial acceleration samples inside a homogeneous ball, from central
/// differences of the FFT grid potential.  Harmonic interior expected:
/// g(r) = -omega_G^2 r with omega_G^2 = 4 pi G rho / 3.
pub fn internal_field_profile(
    ball: &UniformBall,
    radii: &[f64],
    consts: &PhysicalConstants,
    opts: &GridOptions,
    allow_exterior: bool,
) -> Result<Vec<(f64, f64)>> {
    consts.validate()?;
    for &r in radii {
        if !allow_exterior && r.abs() >= ball.radius {
            return Err(Error::SampleOutsideBall { radius: r, ball_radius: ball.radius });
        }
    }
    let max_r = radii.iter().fold(ball.radius, |m, r| m.max(r.abs()));
    let h = 2.0 * ball.radius / opts.resolution as f64;
    let spec = GridSpec::covering(
        &crate::density::Aabb::around(ball.center, max_r + 4.0 * h),
        h,
        0.0,
    );
    let grid = rasterize(&MassDistribution::UniformBall(*ball), &spec, opts.supersample)?;
    let phi = potential_grid(&grid, consts)?;
    let g = consts.newton_g;
    Ok(radii
        .iter()
        .map(|&r| {
            let xp = [ball.center[0] + r + h, ball.center[1], ball.center[2]];
            let xm = [ball.center[0] + r - h, ball.center[1], ball.center[2]];
            (r, g * (trilinear(&phi, xp) - trilinear(&phi, xm)) / (2.0 * h))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{PointMass, FOUR_THIRDS_PI};
    use approx::assert_relative_eq;

    fn consts() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    fn unit_points(positions: &[[f64; 3]]) -> PointSet {
        PointSet::new(positions.iter().map(|&p| PointMass { position: p, mass: 1.0 }).collect())
            .unwrap()
    }

    #[test]
    fn two_unit_masses_one_meter_apart() {
        let a = unit_points(&[[0.0; 3]]);
        let b = unit_points(&[[1.0, 0.0, 0.0]]);
        let u = mutual_energy_points(&a, &b, &consts()).unwrap();
        assert_relative_eq!(u.value, -consts().newton_g, max_relative = 1e-15);
        assert_eq!(u.estimated_relative_error, 0.0);
    }

    #[test]
    fn point_self_energy_is_singular() {
        let a = unit_points(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        assert!(matches!(
            mutual_energy_points(&a, &a.clone(), &consts()),
            Err(Error::SingularSelfEnergy)
        ));
    }

    #[test]
    fn coincident_cross_points_rejected() {
        let a = unit_points(&[[0.0; 3]]);
        let b = unit_points(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        assert!(matches!(mutual_energy_points(&a, &b, &consts()), Err(Error::CoincidentPoints)));
    }

    #[test]
    fn line_of_three_cross_sum() {
        let a = unit_points(&[[0.0; 3]]);
        let b = unit_points(&[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let u = mutual_energy_points(&a, &b, &consts()).unwrap();
        assert_relative_eq!(u.value, -consts().newton_g * 1.5, max_relative = 1e-15);
    }

    fn ball_at(x: f64) -> UniformBall {
        UniformBall::from_mass([x, 0.0, 0.0], 1.0, 5.0).unwrap()
    }

    #[test]
    fn shell_theorem_at_touching_and_beyond() {
        let c = consts();
        let (a, b) = (ball_at(0.0), ball_at(2.0));
        let u = mutual_energy_uniform_balls(&a, &b, &c).unwrap();
        assert_relative_eq!(u.value, -c.newton_g * 25.0 / 2.0, max_relative = 1e-12);
        let b4 = ball_at(4.0);
        let u4 = mutual_energy_uniform_balls(&a, &b4, &c).unwrap();
        assert_relative_eq!(u4.value, -c.newton_g * 25.0 / 4.0, max_relative = 1e-15);
    }

    #[test]
    fn coincident_balls_give_self_energy_factor() {
        let c = consts();
        let a = ball_at(0.0);
        let u = mutual_energy_uniform_balls(&a, &a.clone(), &c).unwrap();
        assert_relative_eq!(u.value, -c.newton_g * BALL_SELF_COEFF * 25.0, max_relative = 1e-14);
    }

    #[test]
    fn overlapping_unequal_radii_unsupported() {
        let a = UniformBall::from_mass([0.0; 3], 1.0, 1.0).unwrap();
        let b = UniformBall::from_mass([0.5, 0.0, 0.0], 0.5, 1.0).unwrap();
        assert!(matches!(
            mutual_energy_uniform_balls(&a, &b, &consts()),
            Err(Error::UnsupportedGeometry(_))
        ));
    }

    #[test]
    fn overlap_factor_continuity_at_touching() {
        let eps = 1e-9;
        let inner = ball_pair_overlap_factor(2.0 - eps);
        let outer = ball_pair_overlap_factor(2.0 + eps);
        assert_relative_eq!(inner, outer, epsilon = 1e-8);
        // derivative continuity
        let d_in = (ball_pair_overlap_factor(2.0 - eps) - ball_pair_overlap_factor(2.0 - 2.0 * eps)) / eps;
        let d_out = (ball_pair_overlap_factor(2.0 + 2.0 * eps) - ball_pair_overlap_factor(2.0 + eps)) / eps;
        assert_relative_eq!(d_in, d_out, epsilon = 1e-6);
    }

    #[test]
    fn ball_self_energy_scales_bilinearly() {
        let c = consts();
        let b = UniformBall::from_mass([0.0; 3], 2.0, 3.0).unwrap();
        let u1 = self_energy(&MassDistribution::UniformBall(b), &c, &GridOptions::default()).unwrap();
        let scaled = UniformBall::from_mass([0.0; 3], 2.0, 6.0).unwrap();
        let u2 = self_energy(&MassDistribution::UniformBall(scaled), &c, &GridOptions::default()).unwrap();
        assert_relative_eq!(u2.value, 4.0 * u1.value, max_relative = 1e-13);
    }

    #[test]
    fn granular_two_nuclei_decomposition() {
        let c = consts();
        // two nuclei at +-a/2 on the x axis: choose lattice so exactly two fit
        let a = 0.5;
        let rn = 0.1;
        let g = GranularBall::new([0.0; 3], 0.36, rn, 1e4, a, Some([-0.25, 0.0, 0.0])).unwrap();
        assert_eq!(g.nucleus_count(), 2);
        let m = g.nucleus_mass();
        let want = 2.0 * (-c.newton_g * BALL_SELF_COEFF * m * m / rn)
            + 2.0 * (-c.newton_g * m * m / a);
        let got = self_energy(&MassDistribution::GranularBall(g), &c, &GridOptions::default()).unwrap();
        assert_relative_eq!(got.value, want, max_relative = 1e-12);
    }

    #[test]
    fn spectral_kernel_matches_hard_ball_limit() {
        // s -> 0 quadrature vs closed-form overlap polynomial
        let k = SpherePairKernel::new(1.0, 0.02).unwrap();
        for d in [0.0, 0.5, 1.0, 1.7] {
            let got = k.energy_factor(d);
            let want = ball_pair_overlap_factor(d / 1.0);
            assert_relative_eq!(got, want, max_relative = 2e-3);
        }
    }

    #[test]
    fn spectral_kernel_matches_gaussian_limit() {
        // tiny ball: pure Gaussian pair expected, quadrature route
        let k = SpherePairKernel::new(0.2, 0.7).unwrap();
        for d in [0.0, 0.5, 1.0, 2.0] {
            let got = k.energy_factor(d);
            let want = gaussian_pair_factor(d, (0.7f64 * 0.7 + 0.2 * 0.2 / 5.0).sqrt());
            assert_relative_eq!(got, want, max_relative = 5e-3);
        }
    }

    #[test]
    fn spectral_routes_are_continuous() {
        // at the route switch the quadrature and the erf form must agree
        let k = SpherePairKernel::new(1.0, 8.0).unwrap();
        let s_eff = (8.0f64 * 8.0 + 1.0 / 5.0).sqrt();
        for d in [0.0, 2.0, 6.0, 20.0] {
            let quad = k.spectral_quadrature(d);
            let erf_form = gaussian_pair_factor(d, s_eff);
            assert_relative_eq!(quad, erf_form, max_relative = 2e-4);
        }
    }

    fn gridded_ball(n: usize) -> VoxelGrid {
        let ball = UniformBall::from_mass([0.0; 3], 1.0, 5.0).unwrap();
        let spec = GridSpec {
            origin: [-1.0 - 2.0 / n as f64; 3],
            cell_size: (2.0 + 4.0 / n as f64) / n as f64,
            dims: [n; 3],
        };
        rasterize(&MassDistribution::UniformBall(ball), &spec, 4).unwrap()
    }

    #[test]
    fn grid_self_energy_converges_to_closed_form() {
        let c = consts();
        let want = -c.newton_g * BALL_SELF_COEFF * 25.0;
        let mut errs = Vec::new();
        for n in [16usize, 32, 64] {
            let g = gridded_ball(n);
            let opts = GridOptions { estimate_error: false, ..Default::default() };
            let u = mutual_energy_grid(&g, &g, EnergyMethod::Fft, &c, &opts).unwrap();
            errs.push(((u.value - want) / want).abs());
        }
        assert!(errs[2] < 0.02, "64^3 error {} must be below 2%", errs[2]);
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "errors {errs:?} must decrease");
    }

    #[test]
    fn direct_and_fft_agree() {
        let c = consts();
        let g = gridded_ball(20);
        let opts = GridOptions { estimate_error: false, ..Default::default() };
        let ud = mutual_energy_grid(&g, &g, EnergyMethod::Direct, &c, &opts).unwrap();
        let uf = mutual_energy_grid(&g, &g, EnergyMethod::Fft, &c, &opts).unwrap();
        assert_relative_eq!(ud.value, uf.value, max_relative = 1e-10);
    }

    #[test]
    fn grid_pair_at_distance_matches_shell_theorem() {
        let c = consts();
        let ball = UniformBall::from_mass([0.0; 3], 1.0, 5.0).unwrap();
        let n = 32;
        let h = 2.2 / n as f64;
        let spec = GridSpec { origin: [-1.1; 3], cell_size: h, dims: [n; 3] };
        let f = rasterize(&MassDistribution::UniformBall(ball), &spec, 4).unwrap();
        // commensurate shift by an integer number of cells, ~4R away
        let cells = (4.0 / h).round();
        let g = f.translated([cells * h, 0.0, 0.0]);
        let opts = GridOptions { estimate_error: false, ..Default::default() };
        let u = mutual_energy_grid(&f, &g, EnergyMethod::Fft, &c, &opts).unwrap();
        let want = -c.newton_g * 25.0 / (cells * h);
        assert_relative_eq!(u.value, want, max_relative = 0.01);
    }

    #[test]
    fn grid_energy_is_symmetric_and_translation_invariant() {
        let c = consts();
        let g = gridded_ball(16);
        let shifted = g.translated([3.0 * g.cell_size(), -2.0 * g.cell_size(), g.cell_size()]);
        let opts = GridOptions { estimate_error: false, ..Default::default() };
        let uab = mutual_energy_grid(&g, &shifted, EnergyMethod::Fft, &c, &opts).unwrap();
        let uba = mutual_energy_grid(&shifted, &g, EnergyMethod::Fft, &c, &opts).unwrap();
        assert_relative_eq!(uab.value, uba.value, max_relative = 1e-12);
        // translating both leaves U unchanged
        let d = [5.0 * g.cell_size(), 0.0, 0.0];
        let u2 = mutual_energy_grid(&g.translated(d), &shifted.translated(d), EnergyMethod::Fft, &c, &opts)
            .unwrap();
        assert_relative_eq!(u2.value, uab.value, max_relative = 1e-12);
    }

    #[test]
    fn direct_bilinearity() {
        let c = consts();
        let g = gridded_ball(12);
        let mut scaled = g.clone();
        for v in scaled.data_mut() {
            *v *= 3.0;
        }
        let opts = GridOptions { estimate_error: false, ..Default::default() };
        let u = mutual_energy_grid(&g, &g, EnergyMethod::Direct, &c, &opts).unwrap();
        let us = mutual_energy_grid(&scaled, &g, EnergyMethod::Direct, &c, &opts).unwrap();
        assert_relative_eq!(us.value, 3.0 * u.value, max_relative = 1e-12);
    }

    #[test]
    fn pair_budget_enforced() {
        let c = consts();
        let g = gridded_ball(16);
        let opts = GridOptions { pair_budget: 10, ..Default::default() };
        assert!(matches!(
            mutual_energy_grid(&g, &g, EnergyMethod::Direct, &c, &opts),
            Err(Error::ResourceLimit { .. })
        ));
    }

    #[test]
    fn incompatible_grids_rejected() {
        let c = consts();
        let g = gridded_ball(16);
        let spec = GridSpec { origin: [0.0; 3], cell_size: 0.3, dims: [4, 4, 4] };
        let other = VoxelGrid::zeros(&spec);
        let opts = GridOptions::default();
        assert!(matches!(
            mutual_energy_grid(&g, &other, EnergyMethod::Fft, &c, &opts),
            Err(Error::IncompatibleGrids(_))
        ));
    }

    #[test]
    fn internal_field_is_harmonic() {
        let c = consts();
        let rho = 1000.0;
        let ball = UniformBall::from_density([0.0; 3], 1.0, rho).unwrap();
        let omega2 = 4.0 * PI * c.newton_g * rho / 3.0;
        let samples = internal_field_profile(&ball, &[0.0, 0.5], &c, &GridOptions::default(), false)
            .unwrap();
        assert!(samples[0].1.abs() <= 0.02 * omega2 * 0.5, "field at the center must vanish");
        let want = -omega2 * 0.5;
        assert_relative_eq!(samples[1].1, want, max_relative = 0.02);
    }

    #[test]
    fn exterior_field_matches_shell_theorem_in_validation_mode() {
        let c = consts();
        let ball = UniformBall::from_density([0.0; 3], 1.0, 1000.0).unwrap();
        let r = 1.1;
        assert!(matches!(
            internal_field_profile(&ball, &[r], &c, &GridOptions::default(), false),
            Err(Error::SampleOutsideBall { .. })
        ));
        let samples =
            internal_field_profile(&ball, &[r], &c, &GridOptions::default(), true).unwrap();
        let want = -c.newton_g * ball.mass() / (r * r);
        assert_relative_eq!(samples[0].1, want, max_relative = 0.02);
    }

    #[test]
    fn cube_coefficient_consistent_with_equal_volume_scale() {
        // sanity bound: between the inscribed-ball and the circumscribed-ball
        // self-energy coefficients
        assert!(UNIT_CUBE_SELF_COEFF > 1.2 && UNIT_CUBE_SELF_COEFF < 2.4);
        let _ = FOUR_THIRDS_PI;
    }
}
