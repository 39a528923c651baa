//! The five subcommands.

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use crossdiff_core::diagnostics::{
    check_apriori_bounds, complementarity_residual, m_sweep_study, ordering_check, overlap_measure, pair_distance,
    patch_deviation, support_interval, tau_refinement_study, TAIL_DELTAS,
};
use crossdiff_core::energy::{equilibrium, equilibrium_residual, pressure_finite_m, Exponent, ModelParams};
use crossdiff_core::interp::trajectory_velocity;
use crossdiff_core::jko::{run_trajectory_observed, Trajectory};
use crossdiff_core::measure::{DensityPair, MASS_TOLERANCE};
use serde_json::{json, Value};

use crate::config::{ConfigError, Format, RunSpec, Setup};
use crate::output::{
    csv_bytes, csv_num, finite, open_in, verify_digests, BoundEntry, Check, DiagnosticsFile, Manifest, NoClaim,
    RunDir, Status, StepDiagnostics, StepSummary, MANIFEST_NAME, SCHEMA_VERSION, TRAJECTORY_HEADER,
};
use crate::plot::{LinePlot, Series};

/// Per-step increase of `F + G` tolerated as rounding.
pub const ENERGY_TOL: f64 = 1e-8;
/// `sup_k W₂(ρᵏ, ρ⁰)` below which a run counts as at rest.
pub const REST_TOL: f64 = 1e-6;
/// Complementarity residual expected of an `m = ∞` step.
pub const COMPLEMENTARITY_TOL: f64 = 1e-6;
/// Pointwise residual expected of a computed equilibrium.
pub const EQUILIBRIUM_TOL: f64 = 1e-8;

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Io(io::Error),
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) | CliError::Solver(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "configuration error: {e}"),
            CliError::Io(e) => write!(f, "I/O error: {e}"),
            CliError::Solver(e) => write!(f, "solver error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

/// Core errors after validation are solver failures, except the ones that
/// can only come from the data.
fn core_error(key: &str, e: crossdiff_core::Error) -> CliError {
    use crossdiff_core::Error as E;
    match e {
        E::InvalidParams(_) | E::Infeasible(_) | E::MassMismatch { .. } | E::InvalidGrid(_) | E::InvalidDensity(_) => {
            CliError::Config(ConfigError {
                key: key.into(),
                message: e.to_string(),
            })
        }
        other => CliError::Solver(other.to_string()),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Options {
    pub quiet: bool,
}

impl Options {
    fn progress(&self, msg: impl FnOnce() -> String) {
        if !self.quiet {
            eprintln!("{}", msg());
        }
    }
}

/// What a command left on disk.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self.manifest.status {
            Status::Passed => 0,
            Status::HardCheckFailed => 1,
            Status::SolverFailed => 3,
        }
    }
}

/// `--out` wins over `outputs.directory`.
pub fn output_dir(spec: &RunSpec, cli: Option<&Path>) -> Result<PathBuf, CliError> {
    match (cli, &spec.outputs.directory) {
        (Some(p), _) => Ok(p.to_path_buf()),
        (None, Some(d)) => Ok(PathBuf::from(d)),
        (None, None) => Err(ConfigError {
            key: "outputs.directory".into(),
            message: "no output directory: set outputs.directory or pass --out".into(),
        }
        .into()),
    }
}

fn spec_value(spec: &RunSpec) -> Value {
    serde_json::to_value(spec).expect("RunSpec serializes")
}

fn wants(spec: &RunSpec, f: Format) -> bool {
    spec.outputs.formats.contains(&f)
}

/// Horizontal arrangement of the two species.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Arrangement {
    SecondLeft,
    FirstLeft,
    Mixed,
}

fn swapped(pair: &DensityPair) -> DensityPair {
    DensityPair::new(pair.second().clone(), pair.first().clone()).expect("same grid")
}

fn arrangement(pair: &DensityPair, eps: f64) -> Arrangement {
    let a = ordering_check(pair, eps);
    if a.gap.is_none() {
        return Arrangement::Mixed;
    }
    if a.ordered {
        Arrangement::SecondLeft
    } else if ordering_check(&swapped(pair), eps).ordered {
        Arrangement::FirstLeft
    } else {
        Arrangement::Mixed
    }
}

/// The arrangement the drifts favour: the species pushed harder to the left
/// (larger mean slope of `Φᵢ`) sits on the left.
fn drift_arrangement(params: &ModelParams, setup: &Setup) -> Arrangement {
    let (l, r) = (setup.grid.left(), setup.grid.right());
    let slope = |i: usize| (params.potentials[i].value(r) - params.potentials[i].value(l)) / (r - l);
    let (s1, s2) = (slope(0), slope(1));
    if (s1 - s2).abs() <= 1e-12 * s1.abs().max(s2.abs()).max(1.0) {
        Arrangement::Mixed
    } else if s2 > s1 {
        Arrangement::SecondLeft
    } else {
        Arrangement::FirstLeft
    }
}

fn no_claim(setup: &Setup) -> Option<NoClaim> {
    let eps = setup.solver.support_floor;
    let init = arrangement(&setup.initial, eps);
    let drift = drift_arrangement(&setup.params, setup);
    let reversed = matches!(
        (init, drift),
        (Arrangement::SecondLeft, Arrangement::FirstLeft) | (Arrangement::FirstLeft, Arrangement::SecondLeft)
    );
    reversed.then(|| NoClaim {
        continuum_interpretation: "no_claim".into(),
        reason: "the initial ordering of the species is reversed relative to the ordering favoured by their drifts; \
                 the discrete run is reported as is, but no convergence or segregation statement for the continuum \
                 system is attached to it"
            .into(),
    })
}

struct RunData {
    diagnostics: Vec<StepDiagnostics>,
    velocities: Vec<[Vec<Option<f64>>; 2]>,
}

fn collect(traj: &Trajectory, eps: f64) -> Result<RunData, CliError> {
    let incompressible = traj.params.exponent.is_incompressible();
    let energies = traj.energies();
    let n = traj.grid().n_cells();
    let mut diagnostics = Vec::new();
    let mut velocities = Vec::new();
    for (k, pair) in traj.pairs.iter().enumerate() {
        let e = energies[k];
        let rec = k.checked_sub(1).map(|j| &traj.records[j]);
        diagnostics.push(StepDiagnostics {
            step: k,
            time: traj.time(k),
            f: if e.feasible { finite(e.internal) } else { None },
            g: finite(e.potential),
            total_energy: finite(e.total),
            w2sq_1: rec.and_then(|r| finite(r.w2_sq[0])),
            w2sq_2: rec.and_then(|r| finite(r.w2_sq[1])),
            optimality_residual: rec.and_then(|r| finite(r.optimality_residual)),
            overlap: finite(overlap_measure(pair, eps)),
            ordering_gap: ordering_check(pair, eps).gap.and_then(finite),
            complementarity_residual: (incompressible && k > 0)
                .then(|| complementarity_residual(pair, &traj.pressures[k]))
                .and_then(finite),
            patch_deviation_1: finite(patch_deviation(pair.first(), eps)),
            patch_deviation_2: finite(patch_deviation(pair.second(), eps)),
        });
        let v = if k == 0 {
            [vec![None; n], vec![None; n]]
        } else {
            let vel = |i| trajectory_velocity(traj, k - 1, i, eps).map(|v| v.values().to_vec());
            [vel(0).map_err(|e| core_error("", e))?, vel(1).map_err(|e| core_error("", e))?]
        };
        velocities.push(v);
    }
    Ok(RunData {
        diagnostics,
        velocities,
    })
}

fn trajectory_csv(traj: &Trajectory, velocities: &[[Vec<Option<f64>>; 2]]) -> io::Result<Vec<u8>> {
    let g = traj.grid();
    let mut rows = Vec::with_capacity(traj.pairs.len() * 2 * g.n_cells());
    for (k, pair) in traj.pairs.iter().enumerate() {
        let time = format!("{}", traj.time(k));
        for i in 0..2 {
            let rho = pair.species(i);
            for j in 0..g.n_cells() {
                rows.push(vec![
                    k.to_string(),
                    time.clone(),
                    (i + 1).to_string(),
                    j.to_string(),
                    format!("{}", g.center(j)),
                    format!("{}", rho.value(j)),
                    csv_num(velocities[k][i][j]),
                    format!("{}", traj.pressures[k].value(j)),
                ]);
            }
        }
    }
    csv_bytes(&TRAJECTORY_HEADER, &rows)
}

fn snapshot_steps(n: usize) -> Vec<usize> {
    let mut s = vec![0, n / 2, n];
    s.dedup();
    s
}

fn run_plots(run: &mut RunDir, spec: &RunSpec, traj: &Trajectory, eps: f64) -> io::Result<()> {
    let g = traj.grid();
    let xs = g.centers();
    let toggles = &spec.outputs.plots;
    let snaps = snapshot_steps(traj.n_steps());
    if toggles.densities {
        let mut p = LinePlot::new("Density snapshots", "x", "density");
        for &k in &snaps {
            for i in 0..2 {
                let pts = xs.iter().copied().zip(traj.pairs[k].species(i).values().iter().copied()).collect();
                let s = Series::new(format!("rho{} t={}", i + 1, traj.time(k)), pts);
                p.add(if i == 1 { s.dashed() } else { s });
            }
        }
        run.write("plots/densities.svg", p.to_svg().as_bytes())?;
    }
    if toggles.energy {
        let mut p = LinePlot::new("Energy decay", "t", "F + G");
        let pts = traj.energies().iter().enumerate().map(|(k, e)| (traj.time(k), e.total)).collect();
        p.add(Series::new("F + G", pts));
        run.write("plots/energy.svg", p.to_svg().as_bytes())?;
    }
    if toggles.supports {
        let mut p = LinePlot::new("Support intervals", "t", "x");
        for i in 0..2 {
            let track = |f: &dyn Fn(&crossdiff_core::diagnostics::SupportInterval) -> f64| {
                traj.pairs
                    .iter()
                    .enumerate()
                    .map(|(k, pair)| {
                        let s = support_interval(pair.species(i), eps);
                        (traj.time(k), if s.empty { f64::NAN } else { f(&s) })
                    })
                    .collect::<Vec<_>>()
            };
            let lo = Series::new(format!("inf supp rho{}", i + 1), track(&|s| s.inf_support));
            let hi = Series::new(format!("sup supp rho{}", i + 1), track(&|s| s.sup_support));
            if i == 1 {
                p.add(lo.dashed()).add(hi.dashed());
            } else {
                p.add(lo).add(hi);
            }
        }
        run.write("plots/supports.svg", p.to_svg().as_bytes())?;
    }
    if toggles.pressure {
        let mut p = LinePlot::new("Pressure profiles", "x", "p");
        for &k in &snaps {
            let pts = xs.iter().copied().zip(traj.pressures[k].values().iter().copied()).collect();
            p.add(Series::new(format!("t={}", traj.time(k)), pts));
        }
        run.write("plots/pressure.svg", p.to_svg().as_bytes())?;
    }
    Ok(())
}

fn bound_entries(traj: &Trajectory) -> Vec<BoundEntry> {
    check_apriori_bounds(traj)
        .into_iter()
        .map(|b| BoundEntry {
            name: b.name,
            lhs: finite(b.lhs),
            rhs: finite(b.rhs),
            tolerance: finite(b.tolerance),
            satisfied: b.satisfied,
            margin: finite(b.margin),
        })
        .collect()
}

/// Mass drift of every step and species relative to step 0.
fn mass_drift(masses: &[[f64; 2]]) -> (f64, f64) {
    let m0 = masses[0];
    let drift = masses
        .iter()
        .flat_map(|m| (0..2).map(move |i| (m[i] - m0[i]).abs()))
        .fold(0.0, f64::max);
    (drift, MASS_TOLERANCE * m0[0].max(m0[1]).max(1.0))
}

fn energy_increase(totals: &[Option<f64>]) -> f64 {
    totals
        .windows(2)
        .map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => b - a,
            _ => f64::INFINITY,
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn run_checks(setup: &Setup, traj: &Trajectory, diag: &[StepDiagnostics], bounds: &[BoundEntry]) -> Vec<Check> {
    let eps = setup.solver.support_floor;
    let h = setup.grid.h();
    let mut checks = Vec::new();
    let masses: Vec<[f64; 2]> = traj.pairs.iter().map(|p| p.masses()).collect();
    let (drift, tol) = mass_drift(&masses);
    checks.push(Check::at_most("mass conservation", drift, tol));
    let totals: Vec<Option<f64>> = diag.iter().map(|d| d.total_energy).collect();
    if totals.len() > 1 {
        checks.push(Check::at_most("energy monotonicity", energy_increase(&totals), ENERGY_TOL));
    }
    for b in bounds {
        let mut c = Check::hard(&format!("bound {}", b.name), b.satisfied);
        c.value = b.margin;
        checks.push(c.with_detail("margin = rhs - lhs"));
    }
    let overlap0 = overlap_measure(&traj.pairs[0], eps);
    if overlap0 <= 2.0 * h {
        let worst = diag.iter().filter_map(|d| d.overlap).fold(0.0, f64::max);
        checks.push(Check::at_most("segregation", worst, 2.0 * h).soften());
    }
    let init = arrangement(&traj.pairs[0], eps);
    if init != Arrangement::Mixed {
        let kept = traj.pairs.iter().all(|p| {
            let s2 = support_interval(p.second(), eps);
            let s1 = support_interval(p.first(), eps);
            s1.empty
                || s2.empty
                || match init {
                    Arrangement::SecondLeft => ordering_check(p, eps).ordered,
                    _ => ordering_check(&swapped(p), eps).ordered,
                }
        });
        checks.push(Check::soft("ordering", kept));
    }
    if traj.params.exponent.is_incompressible() {
        let worst = diag.iter().filter_map(|d| d.complementarity_residual).fold(0.0, f64::max);
        checks.push(Check::at_most("complementarity", worst, COMPLEMENTARITY_TOL).soften());
    }
    let worst_res = diag.iter().filter_map(|d| d.optimality_residual).fold(0.0, f64::max);
    checks.push(Check::at_most("optimality residual", worst_res, setup.solver.inner_tol).soften());
    checks
}

/// `run`: trajectory, diagnostics, plots and manifest.
pub fn cmd_run(spec: &RunSpec, out: &Path, opts: Options) -> Result<Outcome, CliError> {
    let setup = spec.build()?;
    let mut run = RunDir::open(out)?;
    let mut manifest = Manifest::new("run", spec_value(spec));
    manifest.no_claim = no_claim(&setup);
    let n_steps = setup.params.n_steps();
    let traj = run_trajectory_observed(&setup.initial, &setup.params, &setup.solver, &mut |k, step| {
        opts.progress(|| {
            format!(
                "step {}/{n_steps}: residual {:.2e}, {} inner iterations",
                k + 1,
                step.optimality_residual,
                step.inner_iterations
            )
        })
    });
    let traj = match traj {
        Ok(t) => t,
        Err(e) => {
            manifest.status = Status::SolverFailed;
            manifest.error = Some(e.to_string());
            manifest.close();
            run.finish(&mut manifest)?;
            return Ok(Outcome {
                dir: out.to_path_buf(),
                manifest,
            });
        }
    };
    let eps = setup.solver.support_floor;
    let data = collect(&traj, eps)?;
    let bounds = bound_entries(&traj);
    let checks = run_checks(&setup, &traj, &data.diagnostics, &bounds);

    if wants(spec, Format::Csv) {
        run.write("trajectory.csv", &trajectory_csv(&traj, &data.velocities)?)?;
    }
    if wants(spec, Format::Json) {
        let file = DiagnosticsFile {
            schema_version: SCHEMA_VERSION,
            steps: data.diagnostics.clone(),
            bounds: bounds.clone(),
            checks: checks.clone(),
        };
        run.write_json("diagnostics.json", &file)?;
    }
    run_plots(&mut run, spec, &traj, eps)?;

    let displacement = traj
        .pairs
        .iter()
        .map(|p| pair_distance(p, &traj.pairs[0]))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| core_error("", e))?
        .into_iter()
        .fold(0.0, f64::max);
    let masses: Vec<[f64; 2]> = traj.pairs.iter().map(|p| p.masses()).collect();
    manifest.summary = json!({
        "n_steps": traj.n_steps(),
        "h": setup.grid.h(),
        "tau": traj.tau(),
        "max_mass_drift": mass_drift(&masses).0,
        "initial_energy": finite(traj.initial_energy.total),
        "final_energy": data.diagnostics.last().and_then(|d| d.total_energy),
        "max_displacement": displacement,
        "at_rest": displacement <= REST_TOL,
    });
    manifest.steps = traj
        .pairs
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let d = &data.diagnostics[k];
            StepSummary {
                step: k,
                time: traj.time(k),
                masses: p.masses(),
                total_energy: d.total_energy,
                w2sq: [d.w2sq_1, d.w2sq_2],
                optimality_residual: d.optimality_residual,
                inner_iterations: k.checked_sub(1).map_or(0, |j| traj.records[j].inner_iterations),
            }
        })
        .collect();
    manifest.checks = checks;
    manifest.close();
    run.finish(&mut manifest)?;
    Ok(Outcome {
        dir: out.to_path_buf(),
        manifest,
    })
}

/// `equilibrium`: the stationary pair of the model's masses, its constants
/// and the pointwise residual of the equilibrium relation.
pub fn cmd_equilibrium(spec: &RunSpec, out: &Path, _opts: Options) -> Result<Outcome, CliError> {
    let setup = spec.build()?;
    let m = setup.params.exponent.finite().ok_or_else(|| ConfigError {
        key: "model.m".into(),
        message: "the equilibrium command requires finite m".into(),
    })?;
    let mut run = RunDir::open(out)?;
    let mut manifest = Manifest::new("equilibrium", spec_value(spec));
    let eq = match equilibrium(&setup.params, &setup.grid) {
        Ok(eq) => eq,
        Err(e) => {
            manifest.status = Status::SolverFailed;
            manifest.error = Some(e.to_string());
            manifest.close();
            run.finish(&mut manifest)?;
            return Ok(Outcome {
                dir: out.to_path_buf(),
                manifest,
            });
        }
    };
    let residual = equilibrium_residual(&eq, &setup.params).map_err(|e| core_error("model.m", e))?;
    let pressure = pressure_finite_m(&eq.pair, m).map_err(|e| core_error("model.m", e))?;
    let g = setup.grid;
    let rows: Vec<Vec<String>> = (0..g.n_cells())
        .map(|j| {
            vec![
                j.to_string(),
                format!("{}", g.center(j)),
                format!("{}", eq.pair.first().value(j)),
                format!("{}", eq.pair.second().value(j)),
                format!("{}", pressure.value(j)),
                format!("{}", residual[j]),
            ]
        })
        .collect();
    run.write(
        "equilibrium.csv",
        &csv_bytes(&["cell_index", "x_center", "rho1", "rho2", "pressure", "residual"], &rows)?,
    )?;
    if spec.outputs.plots.densities {
        let xs = g.centers();
        let mut p = LinePlot::new("Equilibrium", "x", "density");
        for i in 0..2 {
            let pts = xs.iter().copied().zip(eq.pair.species(i).values().iter().copied()).collect();
            p.add(Series::new(format!("rho{}", i + 1), pts));
        }
        run.write("plots/equilibrium.svg", p.to_svg().as_bytes())?;
    }
    let max_res = residual.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    let masses = eq.pair.masses();
    let drift = (0..2).map(|i| (masses[i] - setup.params.masses[i]).abs()).fold(0.0, f64::max);
    manifest.summary = json!({
        "constants": [eq.c1.and_then(finite), eq.c2.and_then(finite)],
        "degenerate": eq.degenerate,
        "multi_component": eq.multi_component,
        "max_residual": max_res,
        "masses": masses,
    });
    manifest.checks = vec![
        Check::at_most("equilibrium residual", max_res, EQUILIBRIUM_TOL),
        Check::at_most("mass", drift, MASS_TOLERANCE * setup.params.masses[0].max(setup.params.masses[1]).max(1.0)),
        Check::soft("single component supports", !eq.multi_component),
    ];
    manifest.close();
    run.finish(&mut manifest)?;
    Ok(Outcome {
        dir: out.to_path_buf(),
        manifest,
    })
}

fn m_label(e: Exponent) -> String {
    match e {
        Exponent::Finite(m) => format!("{m}"),
        Exponent::Incompressible => "infinity".into(),
    }
}

/// `sweep-m`: the incompressible-limit table.
pub fn cmd_sweep_m(spec: &RunSpec, out: &Path, _opts: Options) -> Result<Outcome, CliError> {
    let setup = spec.build()?;
    let sweep = spec.studies.m_sweep.as_ref().ok_or_else(|| ConfigError {
        key: "studies.m_sweep".into(),
        message: "sweep-m needs studies.m_sweep".into(),
    })?;
    let list: Vec<Exponent> = sweep.m_list.iter().map(|m| m.0).collect();
    let mut run = RunDir::open(out)?;
    let mut manifest = Manifest::new("sweep-m", spec_value(spec));
    let table = match m_sweep_study(&setup.initial, &setup.params, &list, &setup.solver) {
        Ok(t) => t,
        Err(e) => match core_error("studies.m_sweep", e) {
            CliError::Solver(msg) => {
                manifest.status = Status::SolverFailed;
                manifest.error = Some(msg);
                manifest.close();
                run.finish(&mut manifest)?;
                return Ok(Outcome {
                    dir: out.to_path_buf(),
                    manifest,
                });
            }
            other => return Err(other),
        },
    };
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                m_label(r.exponent),
                csv_num(Some(r.tails[0])),
                csv_num(Some(r.tails[1])),
                csv_num(r.distance_to_limit),
                csv_num(r.pressure_gap),
            ]
        })
        .collect();
    let header = [
        "m".to_string(),
        format!("tail_delta_{}", TAIL_DELTAS[0]),
        format!("tail_delta_{}", TAIL_DELTAS[1]),
        "distance_to_limit".to_string(),
        "pressure_gap".to_string(),
    ];
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    run.write("m_sweep.csv", &csv_bytes(&header, &rows)?)?;

    let mut finite_rows: Vec<_> = table.rows.iter().filter(|r| r.exponent.finite().is_some()).collect();
    finite_rows.sort_by(|a, b| a.exponent.finite().partial_cmp(&b.exponent.finite()).unwrap());
    let dists: Vec<f64> = finite_rows.iter().filter_map(|r| r.distance_to_limit).collect();
    let decreasing = dists.windows(2).all(|w| w[1] < w[0]);
    let worst_comp = table.complementarity.iter().copied().fold(0.0, f64::max);
    manifest.summary = json!({
        "rows": table.rows.len(),
        "limit_complementarity": table.complementarity,
    });
    manifest.checks = vec![
        Check::soft("distance to limit decreasing in m", decreasing),
        Check::at_most("complementarity", worst_comp, COMPLEMENTARITY_TOL).soften(),
    ];
    manifest.close();
    run.finish(&mut manifest)?;
    Ok(Outcome {
        dir: out.to_path_buf(),
        manifest,
    })
}

/// `refine-tau`: the Cauchy table over `τ, τ/2, …`.
pub fn cmd_refine_tau(spec: &RunSpec, out: &Path, _opts: Options) -> Result<Outcome, CliError> {
    let setup = spec.build()?;
    let levels = spec.studies.tau_refinement.as_ref().ok_or_else(|| ConfigError {
        key: "studies.tau_refinement".into(),
        message: "refine-tau needs studies.tau_refinement".into(),
    })?;
    let mut run = RunDir::open(out)?;
    let mut manifest = Manifest::new("refine-tau", spec_value(spec));
    let table = match tau_refinement_study(&setup.initial, &setup.params, levels.levels, &setup.solver) {
        Ok(t) => t,
        Err(e) => match core_error("studies.tau_refinement", e) {
            CliError::Solver(msg) => {
                manifest.status = Status::SolverFailed;
                manifest.error = Some(msg);
                manifest.close();
                run.finish(&mut manifest)?;
                return Ok(Outcome {
                    dir: out.to_path_buf(),
                    manifest,
                });
            }
            other => return Err(other),
        },
    };
    let rows: Vec<Vec<String>> = table
        .levels
        .iter()
        .enumerate()
        .map(|(l, lv)| {
            let contraction = l.checked_sub(1).and_then(|p| table.contraction.get(p).copied());
            vec![
                l.to_string(),
                format!("{}", lv.tau),
                csv_num(lv.sup_distance_to_next),
                csv_num(contraction),
            ]
        })
        .collect();
    run.write(
        "refine_tau.csv",
        &csv_bytes(&["level", "tau", "sup_distance_to_next", "contraction"], &rows)?,
    )?;
    manifest.summary = json!({
        "levels": table.levels.len(),
        "contraction": table.contraction,
    });
    manifest.checks = vec![Check::soft("strictly decreasing", table.strictly_decreasing)];
    manifest.close();
    run.finish(&mut manifest)?;
    Ok(Outcome {
        dir: out.to_path_buf(),
        manifest,
    })
}

/// Result of `check`.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub checks: Vec<Check>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || !c.hard)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}

/// Per-(step, species) masses read back from `trajectory.csv`.
fn csv_masses(dir: &Path, h: f64) -> Result<Vec<[f64; 2]>, CliError> {
    let mut rd = csv::Reader::from_reader(open_in(dir, "trajectory.csv")?);
    let header = rd.headers().map_err(|e| CliError::Io(io::Error::other(e)))?.clone();
    if header.iter().collect::<Vec<_>>() != TRAJECTORY_HEADER {
        return Err(CliError::Io(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("trajectory.csv header is {:?}", header.iter().collect::<Vec<_>>()),
        )));
    }
    let bad = |what: &str| CliError::Io(io::Error::new(io::ErrorKind::InvalidData, format!("trajectory.csv: bad {what}")));
    let mut masses: Vec<[f64; 2]> = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| CliError::Io(io::Error::other(e)))?;
        let step: usize = rec[0].parse().map_err(|_| bad("step"))?;
        let species: usize = rec[2].parse().map_err(|_| bad("species"))?;
        let density: f64 = rec[5].parse().map_err(|_| bad("density"))?;
        if !(1..=2).contains(&species) {
            return Err(bad("species"));
        }
        if masses.len() <= step {
            masses.resize(step + 1, [0.0; 2]);
        }
        masses[step][species - 1] += h * density;
    }
    if masses.is_empty() {
        return Err(bad("row count"));
    }
    Ok(masses)
}

/// `check`: re-validates a run directory.
pub fn cmd_check(dir: &Path, _opts: Options) -> Result<CheckReport, CliError> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let manifest = Manifest::read(&manifest_path)
        .map_err(|e| CliError::Io(io::Error::new(e.kind(), format!("{}: {e}", manifest_path.display()))))?;
    let _lock = RunDir::open(dir)?;
    let mut checks = verify_digests(dir, &manifest);
    let spec: RunSpec = serde_json::from_value(manifest.spec.clone())
        .map_err(|e| ConfigError {
            key: "spec".into(),
            message: e.to_string(),
        })?;
    let setup = spec.build()?;
    checks.push(Check::hard("spec re-validates", true));
    checks.push(
        Check::hard("recorded status", manifest.status == Status::Passed)
            .with_detail(format!("{:?}", manifest.status)),
    );
    let listed = |name: &str| manifest.files.iter().any(|f| f.path == name);
    if manifest.command == "run" {
        if listed("trajectory.csv") {
            let masses = csv_masses(dir, setup.grid.h())?;
            let (drift, tol) = mass_drift(&masses);
            checks.push(Check::at_most("mass conservation (trajectory.csv)", drift, tol));
            checks.push(Check::hard(
                "step count (trajectory.csv)",
                masses.len() == setup.params.n_steps() + 1,
            ));
        }
        if listed("diagnostics.json") {
            let text = std::fs::read(dir.join("diagnostics.json"))?;
            let diag: DiagnosticsFile = serde_json::from_slice(&text)
                .map_err(|e| CliError::Io(io::Error::new(io::ErrorKind::InvalidData, e)))?;
            let totals: Vec<Option<f64>> = diag.steps.iter().map(|d| d.total_energy).collect();
            if totals.len() > 1 {
                checks.push(Check::at_most(
                    "energy monotonicity (diagnostics.json)",
                    energy_increase(&totals),
                    ENERGY_TOL,
                ));
            }
            let failed: Vec<&str> = diag.bounds.iter().filter(|b| !b.satisfied).map(|b| b.name.as_str()).collect();
            checks.push(Check::hard("bounds (diagnostics.json)", failed.is_empty()).with_detail(failed.join(", ")));
        }
    }
    Ok(CheckReport { checks })
}
