//! Batch front-end: parse a scenario config, dispatch to the compute
//! modules, and emit CSV/text artifacts plus a reproducibility manifest.
//!
//! Exit-code contract (see `Error::exit_code`): 0 success, 2 config error,
//! 3 numerical error, 4 io error.

use std::path::{Path, PathBuf};

use crate::cavendish::{self, CavendishScenario};
use crate::collapse::{self, CurveAxis};
use crate::config::{
    CavendishBlock, CurveBlock, CurveKind, DynamicsBlock, DynamicsMode, EquilibriumBlock,
    LambdaSource, RateBlock, ScenarioConfig,
};
use crate::constants::PhysicalConstants;
use crate::density::MassDistribution;
use crate::dynamics::{
    self, CollapseModelParams, GaussianMoments, GridEvolveOptions, GridState,
};
use crate::equilibrium::{self, EquilibriumMode};
use crate::error::{Error, Result};
use crate::potential::GridOptions;
use crate::report::{fmt_f64, write_csv, write_text_report, RunManifest};
use crate::validate;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Rate,
    Curve,
    Equilibrium,
    Dynamics,
    Cavendish,
    Validate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Rate => "rate",
            Command::Curve => "curve",
            Command::Equilibrium => "equilibrium",
            Command::Dynamics => "dynamics",
            Command::Cavendish => "cavendish",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config_path: PathBuf,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub overrides: Vec<(String, String)>,
    /// validate-only: subset of criteria to run
    pub criteria: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub artifacts: Vec<PathBuf>,
    /// Some(all_passed) for the validate command
    pub validation_passed: Option<bool>,
}

/// Execute one command against a config file, writing artifacts and the run
/// manifest into the output directory.
pub fn run(command: Command, opts: &RunOptions) -> Result<RunSummary> {
    let config_text = std::fs::read_to_string(&opts.config_path)?;
    let raw: serde_json::Value =
        serde_json::from_str(&config_text).map_err(|e| Error::ConfigParse(e.to_string()))?;
    let patched = crate::config::apply_overrides(raw, &opts.overrides)?;
    let cfg = ScenarioConfig::from_value(patched)?;
    let consts = cfg.constants();
    consts.validate()?;
    let seed = opts.seed.or(cfg.seed).unwrap_or(0);
    if let Some(n) = opts.threads {
        // a pool may already exist (tests, repeated runs); results do not
        // depend on the thread count
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out_dir = opts
        .out_dir
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir)?;
    let base_dir = opts
        .config_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    let mut manifest = RunManifest::new(
        command.name(),
        &config_text,
        consts,
        seed,
        opts.threads.unwrap_or(0),
    );
    manifest.overrides = opts.overrides.iter().map(|(k, v)| format!("{k}={v}")).collect();

    let mut artifacts: Vec<PathBuf> = Vec::new();
    let mut validation_passed = None;
    match command {
        Command::Rate => {
            let block = cfg
                .rate
                .as_ref()
                .ok_or_else(|| Error::ConfigParse("config has no `rate` block".into()))?;
            artifacts.extend(run_rate(block, &cfg, &base_dir, &out_dir, &consts)?);
        }
        Command::Curve => {
            let block = cfg
                .curve
                .as_ref()
                .ok_or_else(|| Error::ConfigParse("config has no `curve` block".into()))?;
            artifacts.extend(run_curve(block, &cfg, &base_dir, &out_dir, &consts)?);
        }
        Command::Equilibrium => {
            let block = cfg
                .equilibrium
                .as_ref()
                .ok_or_else(|| Error::ConfigParse("config has no `equilibrium` block".into()))?;
            artifacts.extend(run_equilibrium(block, &out_dir, &consts)?);
        }
        Command::Dynamics => {
            let block = cfg
                .dynamics
                .as_ref()
                .ok_or_else(|| Error::ConfigParse("config has no `dynamics` block".into()))?;
            artifacts.extend(run_dynamics(block, &cfg, &base_dir, &out_dir, seed, &consts)?);
        }
        Command::Cavendish => {
            let block = cfg
                .cavendish
                .as_ref()
                .ok_or_else(|| Error::ConfigParse("config has no `cavendish` block".into()))?;
            artifacts.extend(run_cavendish(block, &cfg, &base_dir, &out_dir, &consts)?);
        }
        Command::Validate => {
            let ids: Vec<usize> = if !opts.criteria.is_empty() {
                opts.criteria.clone()
            } else {
                cfg.validate.as_ref().map(|v| v.criteria.clone()).unwrap_or_default()
            };
            let results = validate::run_criteria(&ids, seed, Some(&out_dir))?;
            for r in &results {
                println!("{}", r.line());
            }
            let rows: Vec<Vec<String>> = results
                .iter()
                .map(|r| {
                    vec![
                        r.id.to_string(),
                        r.name.to_string(),
                        if r.passed { "pass" } else { "FAIL" }.to_string(),
                        r.details.clone(),
                    ]
                })
                .collect();
            let table = out_dir.join("validation.csv");
            write_csv(&table, &["criterion", "name", "status", "details"], &rows, &[])?;
            artifacts.push(table);
            for r in &results {
                artifacts.extend(r.artifacts.iter().cloned());
            }
            validation_passed = Some(results.iter().all(|r| r.passed));
        }
    }

    manifest.artifacts = artifacts
        .iter()
        .map(|p| {
            p.file_name()
                .map(|n| n.to_string_lossy().to_string())
                .unwrap_or_else(|| p.display().to_string())
        })
        .collect();
    let manifest_path = manifest.write(&out_dir)?;
    artifacts.push(manifest_path);
    Ok(RunSummary { out_dir, artifacts, validation_passed })
}

fn grid_opts() -> GridOptions {
    GridOptions::default()
}

fn run_rate(
    block: &RateBlock,
    cfg: &ScenarioConfig,
    base_dir: &Path,
    out_dir: &Path,
    consts: &PhysicalConstants,
) -> Result<Vec<PathBuf>> {
    let dist = cfg.resolve_density(&block.density, base_dir)?;
    let r = collapse::rate_displaced(&dist, block.displacement, consts, &grid_opts())?;
    let (kappa, kappa_norm, residual) = collapse::quadratic_coefficient(&dist, consts, &grid_opts())?;
    let csv = out_dir.join("rate.csv");
    let d = (block.displacement.iter().map(|x| x * x).sum::<f64>()).sqrt();
    write_csv(
        &csv,
        &[
            "dx_m",
            "catness_J",
            "rate_per_s",
            "lifetime_s",
            "method",
            "est_rel_err",
            "kappa_per_s_m2",
            "kappa_normalized",
        ],
        &[vec![
            fmt_f64(d),
            fmt_f64(r.catness),
            fmt_f64(r.rate),
            fmt_f64(r.lifetime),
            format!("{:?}", r.method),
            fmt_f64(r.estimated_relative_error),
            fmt_f64(kappa),
            fmt_f64(kappa_norm),
        ]],
        &[format!("quadratic fit residual {}", fmt_f64(residual))],
    )?;
    let txt = out_dir.join("rate.txt");
    write_text_report(
        &txt,
        "collapse rate",
        &[
            ("displacement_m".into(), fmt_f64(d)),
            ("catness_J [Eq. 4]".into(), fmt_f64(r.catness)),
            ("mutual_energy_J [Eq. 5]".into(), fmt_f64(r.mutual_energy)),
            ("rate_per_s [Eq. 6]".into(), fmt_f64(r.rate)),
            ("lifetime_s [Eq. 6]".into(), fmt_f64(r.lifetime)),
            ("kappa_per_s_m2 [Eq. 9]".into(), fmt_f64(kappa)),
            ("kappa_hbar_over_M_omega2 [Eq. 9]".into(), fmt_f64(kappa_norm)),
        ],
    )?;
    Ok(vec![csv, txt])
}

fn run_curve(
    block: &CurveBlock,
    cfg: &ScenarioConfig,
    base_dir: &Path,
    out_dir: &Path,
    consts: &PhysicalConstants,
) -> Result<Vec<PathBuf>> {
    let dist = cfg.resolve_density(&block.density, base_dir)?;
    let curve = match block.kind {
        CurveKind::Displacement => {
            let sweep = block
                .displacements
                .as_ref()
                .ok_or_else(|| Error::ConfigParse("displacement curve needs `displacements`".into()))?;
            collapse::full_rate_curve(&dist, block.direction, &sweep.log_points()?, consts, &grid_opts())?
        }
        CurveKind::Smearing => {
            let s_values = block
                .smear_lengths
                .as_ref()
                .ok_or_else(|| Error::ConfigParse("smearing curve needs `smear_lengths`".into()))?;
            let d = block
                .displacement
                .ok_or_else(|| Error::ConfigParse("smearing curve needs `displacement`".into()))?;
            let base = match &dist {
                MassDistribution::GranularBall(g) => g.clone(),
                MassDistribution::SmearedGranular(s) => s.base.clone(),
                _ => {
                    return Err(Error::ConfigParse(
                        "smearing curves need a granular density model".into(),
                    ))
                }
            };
            collapse::rate_vs_smearing(&base, s_values, [d, 0.0, 0.0], consts, &grid_opts())?
        }
    };
    let xname = match curve.axis {
        CurveAxis::Displacement => "dx_m",
        CurveAxis::SmearLength => "s_m",
    };
    let rows: Vec<Vec<String>> = curve
        .points
        .iter()
        .map(|p| {
            vec![
                fmt_f64(p.x),
                fmt_f64(p.catness),
                fmt_f64(p.rate),
                format!("{:?}", p.method),
                fmt_f64(p.estimated_relative_error),
            ]
        })
        .collect();
    let mut footer = vec![
        format!("kappa_per_s_m2 [Eq. 9] {}", fmt_f64(curve.kappa)),
        format!("kappa_normalized [Eq. 9] {}", fmt_f64(curve.kappa_normalized)),
        format!("fit_residual {}", fmt_f64(curve.fit_residual)),
    ];
    if let Some(sat) = curve.saturation_rate {
        footer.push(format!("saturation_rate_per_s [Eq. 6] {}", fmt_f64(sat)));
    }
    let csv = out_dir.join(match curve.axis {
        CurveAxis::Displacement => "rate_curve.csv",
        CurveAxis::SmearLength => "smearing_curve.csv",
    });
    write_csv(&csv, &[xname, "catness_J", "rate_per_s", "method", "est_rel_err"], &rows, &footer)?;
    Ok(vec![csv])
}

fn run_equilibrium(
    block: &EquilibriumBlock,
    out_dir: &Path,
    consts: &PhysicalConstants,
) -> Result<Vec<PathBuf>> {
    let rep = equilibrium::equilibrium_report(
        block.mass,
        block.density,
        block.nucleus_density,
        block.mode,
        consts,
    )?;
    let rate_tag = match rep.mode {
        EquilibriumMode::Atomic => "[Eq. 12]",
        EquilibriumMode::Nuclear => "[Eq. 13]",
    };
    let txt = out_dir.join("equilibrium.txt");
    write_text_report(
        &txt,
        "equilibrium collapse regime",
        &[
            ("mode".into(), format!("{:?}", rep.mode).to_lowercase()),
            ("mass_kg".into(), fmt_f64(rep.mass)),
            ("density_kg_m3".into(), fmt_f64(rep.density)),
            ("nucleus_density_kg_m3".into(), fmt_f64(rep.nucleus_density)),
            ("omega_g_per_s [Appendix]".into(), fmt_f64(rep.omega_g)),
            ("omega_g_nucl_per_s [Appendix]".into(), fmt_f64(rep.omega_g_nucl)),
            (format!("equilibrium_rate_per_s {rate_tag}"), fmt_f64(rep.equilibrium_rate)),
            (format!("equilibrium_time_s {rate_tag}"), fmt_f64(rep.equilibrium_time)),
            ("localization_width_m [Eq. 11]".into(), fmt_f64(rep.localization_width)),
        ],
    )?;
    let csv = out_dir.join("equilibrium.csv");
    write_csv(
        &csv,
        &[
            "mode",
            "mass_kg",
            "density_kg_m3",
            "nucleus_density_kg_m3",
            "omega_g_per_s",
            "omega_g_nucl_per_s",
            "equilibrium_rate_per_s",
            "equilibrium_time_s",
            "localization_width_m",
        ],
        &[vec![
            format!("{:?}", rep.mode).to_lowercase(),
            fmt_f64(rep.mass),
            fmt_f64(rep.density),
            fmt_f64(rep.nucleus_density),
            fmt_f64(rep.omega_g),
            fmt_f64(rep.omega_g_nucl),
            fmt_f64(rep.equilibrium_rate),
            fmt_f64(rep.equilibrium_time),
            fmt_f64(rep.localization_width),
        ]],
        &[],
    )?;
    Ok(vec![txt, csv])
}

fn resolve_lambda(
    source: &LambdaSource,
    cfg: &ScenarioConfig,
    base_dir: &Path,
    consts: &PhysicalConstants,
) -> Result<f64> {
    match source {
        LambdaSource::Value(v) => {
            if *v < 0.0 {
                return Err(Error::ConfigParse("lambda must be non-negative".into()));
            }
            Ok(*v)
        }
        LambdaSource::FromDensity(name) => {
            let dist = cfg.resolve_density(name, base_dir)?;
            let (kappa, _, _) = collapse::quadratic_coefficient(&dist, consts, &grid_opts())?;
            Ok(kappa)
        }
    }
}

fn run_dynamics(
    block: &DynamicsBlock,
    cfg: &ScenarioConfig,
    base_dir: &Path,
    out_dir: &Path,
    seed: u64,
    consts: &PhysicalConstants,
) -> Result<Vec<PathBuf>> {
    let need = |name: &str, v: Option<f64>| {
        v.ok_or_else(|| Error::ConfigParse(format!("dynamics block needs `{name}`")))
    };
    match block.mode {
        DynamicsMode::Moments => {
            let lambda = resolve_lambda(
                block.lambda.as_ref().ok_or_else(|| Error::ConfigParse("dynamics needs `lambda`".into()))?,
                cfg,
                base_dir,
                consts,
            )?;
            let params = CollapseModelParams {
                lambda,
                mass: need("mass", block.mass)?,
                seed,
                dt: need("dt", block.dt)?,
            };
            let var0 = need("initial_var_x", block.initial_var_x)?;
            let traj = dynamics::evolve_moments(
                &params,
                &GaussianMoments::pure_packet(var0, consts),
                need("duration", block.duration)?,
                consts,
            )?;
            let stride = block.record_stride.unwrap_or(1).max(1);
            let rows: Vec<Vec<String>> = traj
                .times
                .iter()
                .zip(&traj.moments)
                .step_by(stride)
                .map(|(t, m)| {
                    vec![fmt_f64(*t), fmt_f64(m.var_x), fmt_f64(m.var_p), fmt_f64(m.cov)]
                })
                .collect();
            let csv = out_dir.join("moments.csv");
            write_csv(&csv, &["t_s", "var_x_m2", "var_p_kg2m2_s2", "cov_J_s"], &rows, &[])?;
            Ok(vec![csv])
        }
        DynamicsMode::Grid => {
            let lambda = resolve_lambda(
                block.lambda.as_ref().ok_or_else(|| Error::ConfigParse("dynamics needs `lambda`".into()))?,
                cfg,
                base_dir,
                consts,
            )?;
            let params = CollapseModelParams {
                lambda,
                mass: need("mass", block.mass)?,
                seed,
                dt: need("dt", block.dt)?,
            };
            let n = block.grid_points.unwrap_or(512);
            let half = need("domain_half_width", block.domain_half_width)?;
            let sigma = need("packet_sigma", block.packet_sigma)?;
            let sep = block.cat_separation.unwrap_or(0.0);
            let dx = 2.0 * half / n as f64;
            let state = if sep > 0.0 {
                GridState::two_packet_cat(n, -half, dx, (-sep / 2.0, sep / 2.0), sigma, consts)?
            } else {
                GridState::gaussian_packet(n, -half, dx, 0.0, sigma, 0.0, consts)?
            };
            let opts = GridEvolveOptions {
                realizations: block.realizations.unwrap_or(100),
                record_stride: block.record_stride.unwrap_or(10),
                coherence_probes: if sep > 0.0 { Some((-sep / 2.0, sep / 2.0)) } else { None },
                recenter: false,
            };
            let stats = dynamics::evolve_grid_stochastic(
                &params,
                &state,
                need("duration", block.duration)?,
                &opts,
                consts,
            )?;
            let mut outputs = Vec::new();
            let rows: Vec<Vec<String>> = stats
                .times
                .iter()
                .zip(&stats.mean_var_x)
                .map(|(t, v)| vec![fmt_f64(*t), fmt_f64(*v)])
                .collect();
            let ens = out_dir.join("ensemble.csv");
            write_csv(
                &ens,
                &["t_s", "mean_var_x_m2"],
                &rows,
                &[format!("max_norm_deviation {}", fmt_f64(stats.max_norm_deviation))],
            )?;
            outputs.push(ens);
            if !stats.coherence.is_empty() {
                let rows: Vec<Vec<String>> = stats
                    .times
                    .iter()
                    .zip(&stats.coherence)
                    .map(|(t, c)| vec![fmt_f64(*t), fmt_f64(*c)])
                    .collect();
                let (rate, residual) =
                    dynamics::fit_exponential_decay(&stats.times, &stats.coherence, 0.2);
                let coh = out_dir.join("coherence.csv");
                write_csv(
                    &coh,
                    &["t_s", "coherence"],
                    &rows,
                    &[
                        format!("fitted_decay_rate_per_s [Eq. 6] {}", fmt_f64(rate)),
                        format!("fit_residual {}", fmt_f64(residual)),
                    ],
                )?;
                outputs.push(coh);
                let rows: Vec<Vec<String>> = stats
                    .left_fraction_final
                    .iter()
                    .enumerate()
                    .map(|(i, f)| vec![i.to_string(), fmt_f64(*f)])
                    .collect();
                let br = out_dir.join("branches.csv");
                write_csv(&br, &["realization", "left_mass_fraction"], &rows, &[])?;
                outputs.push(br);
            }
            Ok(outputs)
        }
        DynamicsMode::ScaledUniverse => {
            let spec = block
                .scaled
                .clone()
                .ok_or_else(|| Error::ConfigParse("scaled_universe mode needs `scaled`".into()))?;
            let run = dynamics::scaled_universe_run(&spec, consts)?;
            let rows: Vec<Vec<String>> = run
                .cases
                .iter()
                .map(|c| {
                    vec![
                        fmt_f64(c.hbar_factor),
                        fmt_f64(c.omega),
                        fmt_f64(c.lambda),
                        fmt_f64(c.balance_var),
                        fmt_f64(c.stationary_var_ode),
                        fmt_f64(c.stationary_var_sim_wide),
                        fmt_f64(c.stationary_var_sim_narrow),
                        fmt_f64(c.relaxation_rate_sim),
                        fmt_f64(c.relaxation_rate_ode),
                    ]
                })
                .collect();
            let csv = out_dir.join("scaled_universe.csv");
            write_csv(
                &csv,
                &[
                    "hbar_factor",
                    "omega_per_s",
                    "lambda_per_s_m2",
                    "balance_var_m2",
                    "stationary_var_ode_m2",
                    "stationary_var_sim_wide_m2",
                    "stationary_var_sim_narrow_m2",
                    "relaxation_rate_sim_per_s",
                    "relaxation_rate_ode_per_s",
                ],
                &rows,
                &[
                    format!("width_factor_vs_balance [Eq. 11] {}", fmt_f64(run.width_factor)),
                    format!("rate_factor_vs_omega [Eq. 12] {}", fmt_f64(run.rate_factor)),
                ],
            )?;
            Ok(vec![csv])
        }
    }
}

fn run_cavendish(
    block: &CavendishBlock,
    cfg: &ScenarioConfig,
    base_dir: &Path,
    out_dir: &Path,
    consts: &PhysicalConstants,
) -> Result<Vec<PathBuf>> {
    let dist = cfg.resolve_density(&block.source, base_dir)?;
    let support = dist.support();
    let source_position = [
        (support.min[0] + support.max[0]) / 2.0,
        (support.min[1] + support.max[1]) / 2.0,
        (support.min[2] + support.max[2]) / 2.0,
    ];
    let mut taus = block.emergence_times.clone();
    let mut beta_note = "emergence times: explicit".to_string();
    if let Some(from) = &block.emergence_from {
        let rep = equilibrium::equilibrium_report(
            from.mass,
            from.density,
            from.nucleus_density,
            from.mode,
            consts,
        )?;
        let tau = from.beta * rep.equilibrium_time;
        beta_note = format!(
            "emergence time mapping: tau_em = beta * tau_G_eq with beta = {}, tau_G_eq = {} s ({:?} mode)",
            fmt_f64(from.beta),
            fmt_f64(rep.equilibrium_time),
            from.mode
        );
        taus.push(tau);
    }
    if taus.is_empty() {
        return Err(Error::ConfigParse(
            "cavendish block needs `emergence_times` or `emergence_from`".into(),
        ));
    }
    taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let base = CavendishScenario {
        pendulum: block.pendulum,
        source_mass: dist.total_mass(),
        source_position,
        trajectory: block.trajectory,
        emergence_time: 0.0,
        t_end: block.t_end,
        dt: block.dt,
        output_stride: block.output_stride,
        displacement_floor: block.displacement_floor,
    };
    let mut outputs = Vec::new();
    let mut summary_rows = Vec::new();
    for (i, &tau) in taus.iter().enumerate() {
        let scenario = CavendishScenario { emergence_time: tau, ..base.clone() };
        let rec = cavendish::simulate_pendulum(&scenario, consts)?;
        let rows: Vec<Vec<String>> = rec
            .times
            .iter()
            .zip(&rec.displacement)
            .zip(&rec.force)
            .zip(&rec.source_state)
            .map(|(((t, x), f), g)| vec![fmt_f64(*t), fmt_f64(*x), fmt_f64(*f), fmt_f64(*g)])
            .collect();
        let path = out_dir.join(format!("response_{i}.csv"));
        write_csv(
            &path,
            &["t_s", "displacement_m", "force_N", "g_eff_fraction"],
            &rows,
            &[
                format!("emergence_time_s {}", fmt_f64(tau)),
                "lag model: first-order relaxation of the effective source field at the probe".into(),
                beta_note.clone(),
            ],
        )?;
        outputs.push(path);
        summary_rows.push(vec![
            fmt_f64(tau),
            fmt_f64(rec.max_response_diff),
            fmt_f64(rec.lag_estimate),
            (rec.lag_estimate > block.time_resolution_floor).to_string(),
        ]);
    }
    let summary = out_dir.join("detectability.csv");
    write_csv(
        &summary,
        &["tau_em_s", "max_response_diff_m", "lag_estimate_s", "detectable"],
        &summary_rows,
        &[
            format!("time_resolution_floor_s {}", fmt_f64(block.time_resolution_floor)),
            beta_note.clone(),
        ],
    )?;
    outputs.push(summary.clone());
    let txt = out_dir.join("detectability.txt");
    let mut lines = vec![
        ("lag model".to_string(),
         "first-order relaxation of the effective source field at the probe".to_string()),
        ("tau_em mapping".to_string(), beta_note),
        ("time_resolution_floor_s".to_string(), fmt_f64(block.time_resolution_floor)),
    ];
    for row in &summary_rows {
        lines.push((
            format!("tau_em = {} s", row[0]),
            format!("lag {} s, max diff {} m, detectable: {}", row[2], row[1], row[3]),
        ));
    }
    write_text_report(&txt, "delayed-gravity detectability", &lines)?;
    outputs.push(txt);
    Ok(outputs)
}
