//! `cbflab`: solve, simulate and analyse CLF-CBF safety filters from the
//! command line.

mod output;
mod svg;
mod validate;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use cbflab_core::equilibria::{find_equilibria, interior_certificate, EquilibriumKind, EquilibriumReport, SearchGrid};
use cbflab_core::modified::{estimate_roa, RoaConfig};
use cbflab_core::sampling::{Grid, SearchBox};
use cbflab_core::scenarios::{self, ring, Scenario, BUILTIN};
use cbflab_core::sim::{batch, ControllerMode, IntegratorConfig, TerminalFlag, Trajectory};
use cbflab_core::{solve, ControlSystem, Error, State, Weight};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::output::{config_hash, num, p_tag, scenario_hash, write_manifest, write_trajectory_csv, RunManifest};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_SCENARIO: u8 = 2;
pub const EXIT_INCONSISTENCY: u8 = 3;
pub const EXIT_SAFETY: u8 = 4;
pub const EXIT_UNRESOLVED: u8 = 5;
pub const EXIT_VALIDATION: u8 = 6;
pub const EXIT_ROA: u8 = 7;

const SEED_ENV: &str = "CBFLAB_SEED";

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::usage(format!("{}: {e}", path.display()))
    }

    fn csv(path: &Path, e: csv::Error) -> Self {
        Self::io(path, e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::UnknownScenario(_)
            | Error::MalformedDocument(_)
            | Error::CertificateSanity(_)
            | Error::NominalRejected { .. } => EXIT_SCENARIO,
            Error::InternalInconsistency(_) | Error::Infeasible(_) | Error::NumericDomain(_) | Error::Indeterminate(_) => {
                EXIT_INCONSISTENCY
            }
            Error::EstimateUnavailable(_) => EXIT_ROA,
            Error::Config(_) | Error::Precondition(_) | Error::BoundUnavailable(_) => EXIT_USAGE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cbflab", version, about = "CLF-CBF quadratic program safety filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the QP at one state.
    Solve(SolveArgs),
    /// Integrate the closed loop and write CSV tables and phase portraits.
    Simulate(SimulateArgs),
    /// Locate closed-loop equilibria.
    Equilibria(EquilibriaArgs),
    /// Cross-check the closed-form solver against the enumeration oracle.
    Validate(ValidateArgs),
    /// Estimate the region of attraction of the modified controller.
    Roa(RoaArgs),
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Built-in scenario name or path to a scenario document.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value = "1", value_parser = parse_weight)]
    p: f64,
    /// State, comma separated.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_coords)]
    x: Coords,
    #[arg(long, default_value = "original", value_parser = parse_mode)]
    mode: ControllerMode,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value = "original", value_parser = parse_mode)]
    mode: ControllerMode,
    /// Comma-separated weights; defaults to the scenario's list.
    #[arg(long, value_parser = parse_weights)]
    p: Option<Weights>,
    /// `ring:K:r=R` or `x1,x2;x1,x2`; repeatable. Defaults to the scenario's starts.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_starts)]
    starts: Vec<StartSpec>,
    #[arg(long, default_value_t = IntegratorConfig::default().step)]
    step: f64,
    #[arg(long, default_value_t = IntegratorConfig::default().horizon)]
    horizon: f64,
    #[arg(long, default_value = "cbflab-out")]
    out: PathBuf,
    /// Skip the equilibrium search used for portrait markers.
    #[arg(long)]
    no_markers: bool,
}

#[derive(Debug, Args)]
struct EquilibriaArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long, value_parser = parse_weights)]
    p: Option<Weights>,
    #[arg(long, default_value = "original", value_parser = parse_mode)]
    mode: ControllerMode,
    /// Search box as `lo:hi` per axis, comma separated.
    #[arg(long = "box", allow_hyphen_values = true, value_parser = parse_box)]
    bounds: Option<SearchBox>,
    /// Grid points per axis.
    #[arg(long)]
    grid: Option<usize>,
    /// Directory for `equilibria.csv`, `certificate.csv` and the manifest;
    /// the table goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Defaults to every built-in scenario.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, value_parser = parse_weights)]
    p: Option<Weights>,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct RoaArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value = "1", value_parser = parse_weight)]
    p: f64,
    /// Accepted samples per tested level.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    json: bool,
}

/// Comma-separated coordinates.
#[derive(Debug, Clone, PartialEq)]
struct Coords(Vec<f64>);

/// Comma-separated QP weights.
#[derive(Debug, Clone, PartialEq)]
struct Weights(Vec<f64>);

#[derive(Debug, Clone, PartialEq, Serialize)]
enum StartSpec {
    Ring { count: usize, radius: f64 },
    Points(Vec<Vec<f64>>),
}

impl StartSpec {
    fn states(&self) -> Vec<State> {
        match self {
            StartSpec::Ring { count, radius } => ring(*count, *radius),
            StartSpec::Points(ps) => ps.iter().map(|p| State::from_column_slice(p)).collect(),
        }
    }
}

fn parse_vector(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| {
            let v = v.trim();
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| format!("`{v}` is not a finite number"))
        })
        .collect()
}

fn parse_weight(s: &str) -> Result<f64, String> {
    let p = s.trim().parse::<f64>().map_err(|e| format!("`{s}`: {e}"))?;
    Weight::new(p).map(f64::from).map_err(|e| e.to_string())
}

fn parse_weights(s: &str) -> Result<Weights, String> {
    s.split(',').map(parse_weight).collect::<Result<_, _>>().map(Weights)
}

fn parse_coords(s: &str) -> Result<Coords, String> {
    parse_vector(s).map(Coords)
}

fn parse_mode(s: &str) -> Result<ControllerMode, String> {
    ControllerMode::from_str(s).map_err(|e| e.to_string())
}

fn parse_starts(s: &str) -> Result<StartSpec, String> {
    if let Some(rest) = s.strip_prefix("ring:") {
        let (count, radius) = rest
            .split_once(':')
            .ok_or_else(|| format!("expected ring:K:r=R, got `{s}`"))?;
        let count: usize = count.parse().map_err(|_| format!("bad ring count `{count}`"))?;
        let radius: f64 = radius
            .strip_prefix("r=")
            .unwrap_or(radius)
            .parse()
            .map_err(|_| format!("bad ring radius in `{s}`"))?;
        if count == 0 || !(radius.is_finite() && radius >= 0.0) {
            return Err(format!("ring needs a positive count and a non-negative radius, got `{s}`"));
        }
        return Ok(StartSpec::Ring { count, radius });
    }
    s.split(';').map(parse_vector).collect::<Result<_, _>>().map(StartSpec::Points)
}

fn parse_box(s: &str) -> Result<SearchBox, String> {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for axis in s.split(',') {
        let (a, b) = axis.split_once(':').ok_or_else(|| format!("expected lo:hi, got `{axis}`"))?;
        lo.push(a.trim().parse::<f64>().map_err(|e| format!("`{a}`: {e}"))?);
        hi.push(b.trim().parse::<f64>().map_err(|e| format!("`{b}`: {e}"))?);
    }
    SearchBox::new(lo, hi).map_err(|e| e.to_string())
}

/// `CBFLAB_SEED` wins over `--seed`.
fn resolve_seed(flag: Option<u64>) -> Result<u64, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(flag.unwrap_or(0)),
    }
}

fn load_scenario(name: &str) -> Result<Scenario, Failure> {
    scenarios::load(name).map_err(|e| Failure {
        code: EXIT_SCENARIO,
        message: e.to_string(),
    })
}

fn weights(s: &Scenario, p: &Option<Weights>) -> Vec<f64> {
    p.as_ref().map(|w| w.0.clone()).unwrap_or_else(|| s.p_defaults.clone())
}

fn w(p: f64) -> Weight {
    Weight::new(p).expect("weights validated while parsing")
}

fn system_for(s: &Scenario, mode: ControllerMode) -> Result<ControlSystem, Failure> {
    Ok(match mode {
        ControllerMode::Original => s.system.clone(),
        ControllerMode::Modified => s.transformed_system().map_err(|e| Failure {
            code: EXIT_SCENARIO,
            message: e.to_string(),
        })?,
    })
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect()
}

fn mode_label(mode: ControllerMode) -> &'static str {
    match mode {
        ControllerMode::Original => "original",
        ControllerMode::Modified => "modified",
    }
}

/// Short form for console lines; tables keep full precision.
fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v
        .iter()
        .map(|&x| {
            if x != 0.0 && x.abs() < 1e-4 {
                format!("{x:.3e}")
            } else {
                num((x * 1e9).round() / 1e9)
            }
        })
        .collect();
    format!("[{}]", parts.join(", "))
}

fn check_dim(s: &Scenario, x: &[f64], what: &str) -> Result<(), Failure> {
    if x.len() != s.state_dim() {
        return Err(Failure::usage(format!(
            "{what} has {} coordinates, scenario `{}` has {}",
            x.len(),
            s.name,
            s.state_dim()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct SolveReport<'a> {
    scenario: &'a str,
    p: f64,
    x: &'a [f64],
    region: String,
    u_star: Vec<f64>,
    delta: f64,
    lambda1: f64,
    lambda2: f64,
    clf_residual: f64,
    cbf_residual: f64,
}

fn cmd_solve(args: &SolveArgs) -> Result<(), Failure> {
    let s = load_scenario(&args.scenario)?;
    let x = &args.x.0;
    check_dim(&s, x, "--x")?;
    let system = system_for(&s, args.mode)?;
    let lie = system.lie_data(&State::from_column_slice(x))?;
    let sol = solve(&lie, w(args.p))?;
    let report = SolveReport {
        scenario: &s.name,
        p: args.p,
        x,
        region: sol.region.label().to_string(),
        u_star: sol.u_star.iter().map(|v| v + 0.0).collect(),
        delta: sol.delta,
        lambda1: sol.lambda1,
        lambda2: sol.lambda2,
        clf_residual: sol.clf_residual(),
        cbf_residual: sol.cbf_residual(),
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        println!("scenario      {}", report.scenario);
        println!("p             {}", report.p);
        println!("x             {}", fmt_vec(report.x));
        println!("region        {}", report.region);
        println!("u*            {}", fmt_vec(&report.u_star));
        println!("delta         {}", report.delta);
        println!("lambda1       {}", report.lambda1);
        println!("lambda2       {}", report.lambda2);
        println!("clf_residual  {}", report.clf_residual);
        println!("cbf_residual  {}", report.cbf_residual);
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulateConfig<'a> {
    scenario: &'a str,
    mode: &'a str,
    p: &'a [f64],
    starts: Vec<Vec<f64>>,
    integrator: &'a IntegratorConfig,
    markers: bool,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let s = load_scenario(&args.scenario)?;
    let ps = weights(&s, &args.p);
    let starts: Vec<State> = if args.starts.is_empty() {
        s.starts.clone()
    } else {
        args.starts.iter().flat_map(StartSpec::states).collect()
    };
    for x in &starts {
        check_dim(&s, x.as_slice(), "start")?;
    }
    let cfg = IntegratorConfig {
        step: args.step,
        horizon: args.horizon,
        ..IntegratorConfig::default()
    };
    cfg.validate()?;
    let lp = s.closed_loop(args.mode).map_err(|e| Failure {
        code: EXIT_SCENARIO,
        message: e.to_string(),
    })?;
    let system = system_for(&s, args.mode)?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::io(&args.out, e))?;

    let (n, m) = (s.state_dim(), s.system.model.input_dim());
    let stem = format!("{}_{}", file_stem(&s.name), mode_label(args.mode));
    let mut outputs = Vec::new();
    let mut notes = Vec::new();
    let (mut anomalies, mut truncated) = (0, 0);

    for &p in &ps {
        let runs: Vec<Trajectory> = batch(&lp, w(p), &starts, &cfg)
            .into_iter()
            .collect::<Result<_, _>>()?;
        for (k, t) in runs.iter().enumerate() {
            let name = format!("{stem}_{}_start{k:02}.csv", p_tag(p));
            let path = args.out.join(&name);
            write_trajectory_csv(&path, t, n, m)?;
            outputs.push(name);

            let x0 = fmt_vec(starts[k].as_slice());
            let fate = match (&t.terminal, &t.error) {
                (TerminalFlag::SafetyAnomaly, _) => {
                    anomalies += 1;
                    let note = format!("p={p} start {x0}: safety anomaly, min h {:e}", t.min_h());
                    notes.push(note.clone());
                    note
                }
                (_, Some(e)) => {
                    truncated += 1;
                    let note = format!("p={p} start {x0}: stopped after {} samples: {e}", t.len());
                    notes.push(note.clone());
                    note
                }
                (TerminalFlag::ConvergedTo(x), None) => format!("p={p} start {x0}: converged to {}", fmt_vec(x)),
                (TerminalFlag::Horizon, None) => format!(
                    "p={p} start {x0}: reached the horizon at {}",
                    fmt_vec(t.last_state().map(|x| x.as_slice()).unwrap_or(&[]))
                ),
            };
            println!("{fate}");
        }

        if n >= 2 {
            let markers: Vec<EquilibriumReport> = if args.no_markers || n != 2 {
                Vec::new()
            } else {
                match find_equilibria(&system, w(p), &s.search_grid()) {
                    Ok(r) => r.roots,
                    Err(e) => {
                        notes.push(format!("p={p}: equilibrium markers skipped: {e}"));
                        Vec::new()
                    }
                }
            };
            let portrait = svg::Portrait {
                title: format!("{} ({}) p = {p}", s.name, mode_label(args.mode)),
                bounds: &s.bounds,
                cbf: &s.certs().cbf,
                trajectories: &runs,
                equilibria: &markers,
            };
            let name = format!("{stem}_{}.svg", p_tag(p));
            let path = args.out.join(&name);
            fs::write(&path, portrait.render()).map_err(|e| Failure::io(&path, e))?;
            outputs.push(name);
        }
    }

    let config = SimulateConfig {
        scenario: &s.name,
        mode: mode_label(args.mode),
        p: &ps,
        starts: starts.iter().map(|x| x.iter().copied().collect()).collect(),
        integrator: &cfg,
        markers: !args.no_markers,
    };
    let manifest = RunManifest {
        command: "simulate".into(),
        scenario: s.name.clone(),
        scenario_sha256: scenario_hash(&args.scenario),
        mode: Some(mode_label(args.mode).into()),
        p: ps.clone(),
        seed: None,
        config_sha256: config_hash(&config),
        outputs,
        notes,
        tool_version: env!("CARGO_PKG_VERSION").into(),
    };
    write_manifest(&args.out, &manifest)?;

    if anomalies > 0 {
        return Err(Failure {
            code: EXIT_SAFETY,
            message: format!("{anomalies} trajectories left the safe set"),
        });
    }
    if truncated > 0 {
        return Err(Failure {
            code: EXIT_INCONSISTENCY,
            message: format!("{truncated} trajectories stopped on a controller failure"),
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct EquilibriaConfig<'a> {
    scenario: &'a str,
    mode: &'a str,
    p: &'a [f64],
    lower: &'a [f64],
    upper: &'a [f64],
    grid: usize,
}

fn cmd_equilibria(args: &EquilibriaArgs) -> Result<(), Failure> {
    let s = load_scenario(&args.scenario)?;
    let ps = weights(&s, &args.p);
    let bounds = args.bounds.clone().unwrap_or_else(|| s.bounds.clone());
    if bounds.dim() != s.state_dim() {
        return Err(Failure::usage(format!("--box has {} axes, scenario has {}", bounds.dim(), s.state_dim())));
    }
    let points = args.grid.unwrap_or(s.grid_points);
    let grid = Grid::uniform(bounds.clone(), points).map_err(|e| Failure::usage(e.to_string()))?;
    let search = SearchGrid::new(grid);
    let system = system_for(&s, args.mode)?;
    let n = s.state_dim();

    let mut table = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["p".to_string(), "kind".into()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend(["residual", "h", "region"].map(String::from));
    table.write_record(&header).expect("in-memory csv");
    let mut certs = csv::Writer::from_writer(Vec::new());
    certs
        .write_record([
            "p",
            "interior_certificate",
            "interior_with_origin",
            "boundary",
            "unresolved",
            "outside_safe_set",
        ])
        .expect("in-memory csv");

    let mut unresolved = 0;
    for &p in &ps {
        let r = find_equilibria(&system, w(p), &search)?;
        let cert = interior_certificate(&system, w(p), &search)?;
        for e in r.roots.iter().chain(&r.anomalies) {
            let mut row = vec![p.to_string(), e.kind.label().to_string()];
            row.extend(e.location.iter().copied().map(num));
            row.extend([num(e.residual_norm), num(e.h), e.region.label().to_string()]);
            table.write_record(&row).expect("in-memory csv");
        }
        let interior = r.count(EquilibriumKind::Interior) + r.count(EquilibriumKind::Origin);
        let boundary = r.count(EquilibriumKind::Boundary1) + r.count(EquilibriumKind::Boundary2);
        certs
            .write_record([
                p.to_string(),
                cert.holds.to_string(),
                interior.to_string(),
                boundary.to_string(),
                r.unresolved.len().to_string(),
                r.anomalies.len().to_string(),
            ])
            .expect("in-memory csv");
        eprintln!(
            "p={p}: {interior} interior equilibria counting the origin, {boundary} on the boundary, \
             interior certificate {}, {} unresolved seeds",
            cert.holds,
            r.unresolved.len()
        );
        for x in &r.unresolved {
            eprintln!("  unresolved seed near {}", fmt_vec(x.as_slice()));
        }
        unresolved += r.unresolved.len();
    }

    let table = table.into_inner().expect("in-memory csv");
    let certs = certs.into_inner().expect("in-memory csv");
    match &args.out {
        None => {
            let mut out = io::stdout().lock();
            match out.write_all(&table).and_then(|_| out.flush()) {
                // a closed pipe just means the reader has seen enough
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => {
                    return Err(Failure::io(Path::new("<stdout>"), e))
                }
                _ => {}
            }
        }
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
            for (name, bytes) in [("equilibria.csv", &table), ("certificate.csv", &certs)] {
                let path = dir.join(name);
                fs::write(&path, bytes).map_err(|e| Failure::io(&path, e))?;
            }
            let config = EquilibriaConfig {
                scenario: &s.name,
                mode: mode_label(args.mode),
                p: &ps,
                lower: bounds.lower(),
                upper: bounds.upper(),
                grid: points,
            };
            let manifest = RunManifest {
                command: "equilibria".into(),
                scenario: s.name.clone(),
                scenario_sha256: scenario_hash(&args.scenario),
                mode: Some(mode_label(args.mode).into()),
                p: ps.clone(),
                seed: None,
                config_sha256: config_hash(&config),
                outputs: vec!["equilibria.csv".into(), "certificate.csv".into()],
                notes: Vec::new(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
            };
            write_manifest(dir, &manifest)?;
        }
    }

    if unresolved > 0 {
        return Err(Failure {
            code: EXIT_UNRESOLVED,
            message: format!("{unresolved} grid seeds did not refine to a root"),
        });
    }
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<(), Failure> {
    let seed = resolve_seed(args.seed)?;
    let names: Vec<String> = match &args.scenario {
        Some(name) => vec![name.clone()],
        None => BUILTIN.iter().map(|s| s.to_string()).collect(),
    };
    if args.samples == 0 {
        eprintln!("warning: --samples 0 draws no states; validation passes vacuously");
        return Ok(());
    }
    let mut breaches = Vec::new();
    for name in &names {
        let s = load_scenario(name)?;
        let states = s.sampling(args.samples, seed).draw();
        for p in weights(&s, &args.p) {
            let c = validate::cross_check(&s.system, w(p), &states);
            let verdict = if c.passed() { "pass" } else { "FAIL" };
            println!(
                "{} p={p} samples={} max|du|={:.3e} max|ddelta|={:.3e} max_kkt={:.3e} {verdict}",
                s.name, c.samples, c.max.input, c.max.slack, c.max.kkt
            );
            if let Some((x, e)) = &c.failure {
                breaches.push(format!("{} p={p}: solver failed at {}: {e}", s.name, fmt_vec(x.as_slice())));
            } else if !c.passed() {
                if let Some((x, d)) = &c.worst {
                    breaches.push(format!(
                        "{} p={p}: worst state {} (|du|={:e}, |ddelta|={:e}, kkt={:e})",
                        s.name,
                        fmt_vec(x.as_slice()),
                        d.input,
                        d.slack,
                        d.kkt
                    ));
                }
            }
        }
    }
    if breaches.is_empty() {
        return Ok(());
    }
    Err(Failure {
        code: EXIT_VALIDATION,
        message: breaches.join("\n"),
    })
}

#[derive(Serialize)]
struct RoaReport<'a> {
    scenario: &'a str,
    p: f64,
    seed: u64,
    eta: f64,
    radius: Option<f64>,
    inscribed_radius: Option<f64>,
    samples: usize,
    levels_tested: usize,
}

fn cmd_roa(args: &RoaArgs) -> Result<(), Failure> {
    let seed = resolve_seed(args.seed)?;
    let s = load_scenario(&args.scenario)?;
    let system = system_for(&s, ControllerMode::Modified)?;
    let cfg = RoaConfig {
        samples: args.samples,
        ..RoaConfig::new(s.bounds.clone(), seed)
    };
    let est = estimate_roa(&system, w(args.p), &cfg).map_err(|e| Failure {
        code: EXIT_ROA,
        message: e.to_string(),
    })?;
    // radius of the largest ball inside {V ≤ η}
    let inscribed = s.certs().clf.quadratic().filter(|q| q.is_pure_form()).and_then(|q| {
        let top = q.q.clone().symmetric_eigen().eigenvalues.max();
        (top > 0.0).then(|| (est.eta / top).sqrt())
    });
    let report = RoaReport {
        scenario: &s.name,
        p: args.p,
        seed,
        eta: est.eta,
        radius: est.sampled_radius,
        inscribed_radius: inscribed,
        samples: est.sample_count,
        levels_tested: est.levels_tested,
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        println!("scenario          {}", report.scenario);
        println!("p                 {}", report.p);
        println!("seed              {}", report.seed);
        println!("eta               {}", report.eta);
        match (report.radius, report.inscribed_radius) {
            (Some(r), _) => println!("radius            {r}"),
            (None, Some(r)) => println!("inscribed radius  {r}"),
            (None, None) => println!("radius            n/a"),
        }
        println!("samples           {} over {} levels", report.samples, report.levels_tested);
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Equilibria(a) => cmd_equilibria(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Roa(a) => cmd_roa(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn start_specs() {
        assert_eq!(parse_starts("ring:16:r=6").unwrap(), StartSpec::Ring { count: 16, radius: 6.0 });
        assert_eq!(parse_starts("ring:4:2.5").unwrap(), StartSpec::Ring { count: 4, radius: 2.5 });
        assert_eq!(
            parse_starts("0,0;-1,2").unwrap(),
            StartSpec::Points(vec![vec![0.0, 0.0], vec![-1.0, 2.0]])
        );
        assert!(parse_starts("ring:0:r=1").is_err());
        assert!(parse_starts("ring:3").is_err());
        assert!(parse_starts("1,x").is_err());
        assert_eq!(parse_starts("ring:16:r=6").unwrap().states().len(), 16);
    }

    #[test]
    fn weights_must_be_positive() {
        assert_eq!(parse_weights("0.1,1,10").unwrap(), Weights(vec![0.1, 1.0, 10.0]));
        assert!(parse_weights("1,0").is_err());
        assert!(parse_weights("nan").is_err());
    }

    #[test]
    fn boxes() {
        let b = parse_box("-8:8,-2:3").unwrap();
        assert_eq!(b.lower(), &[-8.0, -2.0]);
        assert!(parse_box("1:0").is_err());
        assert!(parse_box("1").is_err());
    }

    #[test]
    fn error_codes() {
        assert_eq!(Failure::from(Error::UnknownScenario("x".into())).code, EXIT_SCENARIO);
        assert_eq!(Failure::from(Error::InternalInconsistency("x".into())).code, EXIT_INCONSISTENCY);
        assert_eq!(Failure::from(Error::EstimateUnavailable("x".into())).code, EXIT_ROA);
        assert_eq!(Failure::from(Error::Config("x".into())).code, EXIT_USAGE);
    }

    #[test]
    fn stems() {
        assert_eq!(file_stem("example5-noobstacle"), "example5-noobstacle");
        assert_eq!(file_stem("my scenario/1"), "my-scenario-1");
    }
}
