//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::bench::{self, Cell, Inversion, SpectralRun};
use crate::config::{parse_config, RunConfig};
use crate::control::ControlProblem;
use crate::error::Error;
use crate::forward::{self, FieldSeries};
use crate::io;
use crate::mesh::Mesh;
use crate::spectral::ModeBasis;
use crate::volterra::{solve_volterra, TimeSeriesField};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_ACCEPTANCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "coupled-source", version, about = "Source reconstruction for coupled heat systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (INI-style); built-in 1D benchmark when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for independent cells.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Gaussian measurement noise at this SNR in dB (off by default).
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub noise_snr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scope {
    #[value(name = "1d")]
    OneD,
    #[value(name = "2d")]
    TwoD,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the forward system for the configured source.
    Forward,
    /// Write synthetic observations of the configured source.
    Synth,
    /// Recover the source by adjoint-based descent.
    Invert,
    /// Recover the source through null controls and Volterra solves.
    Spectral,
    /// Solve penalized null-control problems for the first mode.
    Control,
    /// Check the Volterra solver against its closed-form case.
    VolterraTest,
    /// Sweep the penalty and compare with the reference table.
    SweepK {
        /// Decades `a..b` or a comma list.
        #[arg(default_value = "1e2..1e6")]
        range: String,
    },
    /// Run the observation-regime grids.
    BenchFigures {
        #[arg(long, value_enum, default_value = "all")]
        only: Scope,
    },
}

/// Failure with its exit status.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Solver(String),
    Acceptance(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Solver(_) => EXIT_SOLVER,
            Failure::Acceptance(_) => EXIT_ACCEPTANCE,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Solver(m) => write!(f, "solver failure: {m}"),
            Failure::Acceptance(m) => write!(f, "acceptance check failed: {m}"),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn config_failure(e: Error) -> Failure {
    Failure::Config(e.to_string())
}

fn solver_failure(e: Error) -> Failure {
    match e {
        Error::Config { .. } | Error::Expression(_) => Failure::Config(e.to_string()),
        other => Failure::Solver(other.to_string()),
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("{f}");
            f.code()
        }
    }
}

pub fn load_config(cli: &Cli) -> Outcome<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            parse_config(&text).map_err(config_failure)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Outcome<()> {
    if cli.threads == 0 {
        return Err(Failure::Config("--threads must be at least 1".into()));
    }
    if let Some(snr) = cli.noise_snr {
        if !snr.is_finite() {
            return Err(Failure::Config(format!("--noise-snr must be finite, got {snr}")));
        }
    }
    let cfg = load_config(cli)?;
    fs::create_dir_all(&cli.out).map_err(|e| Failure::Config(format!("{}: {e}", cli.out.display())))?;
    match &cli.command {
        Command::Forward => forward_cmd(&cfg, &cli.out),
        Command::Synth => synth_cmd(&cfg, &cli.out, cli.noise_snr),
        Command::Invert => invert_cmd(&cfg, &cli.out, cli.noise_snr),
        Command::Spectral => spectral_cmd(&cfg, &cli.out, cli.noise_snr),
        Command::Control => control_cmd(&cfg, &cli.out),
        Command::VolterraTest => volterra_cmd(&cli.out),
        Command::SweepK { range } => sweep_cmd(&cfg, &cli.out, range, cli.threads, cli.noise_snr),
        Command::BenchFigures { only } => figures_cmd(&cli.out, *only, cli.threads, cli.noise_snr, cfg.seed),
    }
}

fn mesh_of(cfg: &RunConfig) -> Outcome<Mesh> {
    cfg.mesh().map_err(config_failure)
}

fn write_mesh(out: &Path, cfg: &RunConfig, mesh: &Mesh) -> Outcome<()> {
    let mask = cfg.mask(mesh).map_err(config_failure)?;
    io::write_mesh_nodes(&out.join("mesh_nodes.csv"), mesh, Some(&mask)).map_err(solver_failure)?;
    io::write_mesh_elements(&out.join("mesh_elements.csv"), mesh).map_err(solver_failure)
}

fn forward_cmd(cfg: &RunConfig, out: &Path) -> Outcome<()> {
    let mesh = mesh_of(cfg)?;
    let grid = cfg.grid().map_err(config_failure)?;
    let sigma = cfg.sigma(&grid).map_err(config_failure)?;
    let q = cfg.coupling_matrix(&mesh);
    let f = cfg.source_fields(&mesh);
    let y = forward::solve_forward(&mesh, &q, cfg.domain.nu, &sigma, &f, grid).map_err(solver_failure)?;
    write_mesh(out, cfg, &mesh)?;
    io::write_trajectory(&out.join("trajectory.csv"), &y).map_err(solver_failure)?;
    io::write_snapshot(&out.join("snapshot.csv"), &mesh, &y, grid.n_steps()).map_err(solver_failure)?;
    println!("forward: {} nodes, {} steps, max |y| = {:.6e}", mesh.node_count(), grid.n_steps(), y.max_abs());
    Ok(())
}

const OBSERVATIONS: &str = "observations.csv";

/// Observed components on the observation nodes, `t,node_id,comp,value`.
fn write_observations(path: &Path, obs: &FieldSeries, flags: &[bool], observed: &[usize]) -> Outcome<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| solver_failure(e.into()))?;
    let mut rows = vec![vec!["t".to_string(), "node_id".into(), "comp".into(), "value".into()]];
    for m in 0..obs.n_times() {
        for &c in observed {
            for (i, v) in obs.comp(m, c).iter().enumerate().filter(|(i, _)| flags[*i]) {
                rows.push(vec![format!("{}", obs.grid().time(m)), i.to_string(), (c + 1).to_string(), format!("{v}")]);
            }
        }
    }
    for r in rows {
        w.write_record(&r).map_err(|e| solver_failure(e.into()))?;
    }
    w.flush().map_err(|e| solver_failure(e.into()))
}

fn read_observations(path: &Path, like: &FieldSeries) -> Outcome<FieldSeries> {
    let (head, rows) = io::read_table(path).map_err(config_failure)?;
    if head != ["t", "node_id", "comp", "value"] {
        return Err(Failure::Config(format!("{}: unexpected header {head:?}", path.display())));
    }
    let mut obs = FieldSeries::zeros(like.n_comp(), like.n_nodes(), *like.grid());
    let dt = like.grid().dt();
    for (line, r) in rows.iter().enumerate() {
        let bad = || Failure::Config(format!("{}: malformed row {}", path.display(), line + 2));
        let t: f64 = r[0].parse().map_err(|_| bad())?;
        let i: usize = r[1].parse().map_err(|_| bad())?;
        let c: usize = r[2].parse().map_err(|_| bad())?;
        let v: f64 = r[3].parse().map_err(|_| bad())?;
        let m = (t / dt).round() as usize;
        if c == 0 || c > obs.n_comp() || i >= obs.n_nodes() || m >= obs.n_times() || (m as f64 * dt - t).abs() > 1e-9 {
            return Err(Failure::Config(format!("{}: row {} does not fit the configuration", path.display(), line + 2)));
        }
        obs.comp_mut(m, c - 1)[i] = v;
    }
    Ok(obs)
}

/// Nodal source, `x[,y],f1..fn`.
fn write_source(path: &Path, mesh: &Mesh, f: &[Vec<f64>]) -> Outcome<()> {
    let io_err = |e: csv::Error| solver_failure(e.into());
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    let mut head: Vec<String> = ["x", "y"][..mesh.dim()].iter().map(|s| s.to_string()).collect();
    head.extend((1..=f.len()).map(|c| format!("f{c}")));
    w.write_record(&head).map_err(io_err)?;
    for i in 0..mesh.node_count() {
        let p = mesh.node(i);
        let mut row: Vec<String> = p[..mesh.dim()].iter().map(|v| format!("{v}")).collect();
        row.extend(f.iter().map(|fc| format!("{}", fc[i])));
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(|e| solver_failure(e.into()))
}

fn synth_cmd(cfg: &RunConfig, out: &Path, noise: Option<f64>) -> Outcome<()> {
    let (problem, truth, obs) = bench::synthesize(cfg, noise).map_err(solver_failure)?;
    let c = problem.config();
    write_mesh(out, cfg, &c.mesh)?;
    write_observations(&out.join(OBSERVATIONS), &obs, &c.mask.node_flags, &c.observed)?;
    write_source(&out.join("source_true.csv"), &c.mesh, &truth)?;
    println!("synth: observations of components {:?} on {} nodes", c.observed.iter().map(|x| x + 1).collect::<Vec<_>>(), c.mask.flagged_nodes().len());
    Ok(())
}

fn write_inversion(dir: &Path, mesh: &Mesh, inv: &Inversion, k: f64) -> Outcome<()> {
    fs::create_dir_all(dir).map_err(|e| solver_failure(e.into()))?;
    io::write_trace(&dir.join("trace.csv"), &inv.result.trace).map_err(solver_failure)?;
    io::write_final_field(&dir.join("final_field.csv"), mesh, &inv.truth, &inv.result.source).map_err(solver_failure)?;
    let mut w = csv::Writer::from_path(dir.join("summary.csv")).map_err(|e| solver_failure(e.into()))?;
    let n = inv.per_component.len();
    let mut head = vec!["k".to_string(), "rel_err".into()];
    head.extend((1..=n).map(|c| format!("rel_err_f{c}")));
    head.extend(["best_iter".into(), "iterations".into(), "diverged".into(), "monotone_fraction".into()]);
    let mut row = vec![format!("{k}"), format!("{}", inv.rel_err)];
    row.extend(inv.per_component.iter().map(|e| e.map(|v| format!("{v}")).unwrap_or_default()));
    row.extend([
        inv.result.best_iter.to_string(),
        inv.result.trace.rows.len().saturating_sub(1).to_string(),
        inv.result.diverged.to_string(),
        format!("{}", inv.result.trace.monotone_fraction()),
    ]);
    let r = w.write_record(&head).and_then(|_| w.write_record(&row)).map_err(|e| solver_failure(e.into()));
    r?;
    w.flush().map_err(|e| solver_failure(e.into()))
}

fn invert_cmd(cfg: &RunConfig, out: &Path, noise: Option<f64>) -> Outcome<()> {
    let (problem, truth, synthetic) = bench::synthesize(cfg, noise).map_err(solver_failure)?;
    let path = out.join(OBSERVATIONS);
    let obs = if path.exists() {
        log::info!("using observations from {}", path.display());
        read_observations(&path, &synthetic)?
    } else {
        synthetic
    };
    let inv = bench::invert_with(&problem, truth, &obs).map_err(solver_failure)?;
    write_inversion(out, &problem.config().mesh, &inv, cfg.optimizer.k)?;
    println!("invert: k = {:e}, rel_err = {:.4}, best iterate {}", cfg.optimizer.k, inv.rel_err, inv.result.best_iter);
    Ok(())
}

fn spectral_cmd(cfg: &RunConfig, out: &Path, noise: Option<f64>) -> Outcome<()> {
    let mesh = mesh_of(cfg)?;
    if bench::spectral_coupling(cfg, &mesh).is_none() {
        return Err(Failure::Config("the spectral path needs constant coupling or a 2x2 coupling with only q21 set".into()));
    }
    cfg.mask(&mesh).map_err(config_failure)?;
    let SpectralRun { truth: source, result, modes: rows, .. } = bench::spectral(cfg, noise).map_err(solver_failure)?;
    io::write_mode_report(&out.join("mode_report.csv"), &rows).map_err(solver_failure)?;
    io::write_reconstruction(&out.join("reconstruction.csv"), &result.estimates).map_err(solver_failure)?;
    io::write_final_field(&out.join("final_field.csv"), &mesh, &source, &result.source).map_err(solver_failure)?;
    let reports: Vec<(String, _)> = result
        .control_reports
        .iter()
        .enumerate()
        .map(|(i, r)| (format!("mode{}", i + 1), r.clone()))
        .collect();
    io::write_control_reports(&out.join("control_report.csv"), &reports).map_err(solver_failure)?;
    let mut w = csv::Writer::from_path(out.join("path_checks.csv")).map_err(|e| solver_failure(e.into()))?;
    let mut rows = vec![vec!["k".to_string(), "tau".into(), "local".into(), "global".into(), "tol_ctrl".into()]];
    rows.extend(result.checks.iter().map(|c| vec![c.k.to_string(), format!("{}", c.tau), format!("{}", c.local), format!("{}", c.global), format!("{}", c.tol_ctrl)]));
    for r in rows {
        w.write_record(&r).map_err(|e| solver_failure(e.into()))?;
    }
    w.flush().map_err(|e| solver_failure(e.into()))?;
    let rel = result.rel_error.map_or("n/a".to_string(), |e| format!("{e:.4}"));
    println!(
        "spectral: {} modes, coverage {:.2}, rel_err {rel}, residual correction {}",
        result.modes.len(),
        result.coverage,
        if result.refinement.applied { "applied" } else { "not applied" }
    );
    Ok(())
}

fn control_cmd(cfg: &RunConfig, out: &Path) -> Outcome<()> {
    let mesh = mesh_of(cfg)?;
    let grid = cfg.grid().map_err(config_failure)?;
    let mask = cfg.mask(&mesh).map_err(config_failure)?;
    let qt = cfg.coupling_matrix(&mesh).transpose();
    let problem = ControlProblem::new(&mesh, &qt, cfg.domain.nu, grid, &mask).map_err(config_failure)?;
    let first: Vec<usize> = vec![1; mesh.dim()];
    let basis = ModeBasis::laplace(&mesh, &first, cfg.domain.nu).map_err(solver_failure)?;
    let psi0: Vec<f64> = (0..cfg.n_comp()).flat_map(|_| basis.phi.iter().copied()).collect();
    let mut ladder = vec![1e-2, 1e-4];
    if !ladder.contains(&cfg.spectral.epsilon) {
        ladder.push(cfg.spectral.epsilon);
    }
    let mut reports = Vec::new();
    let mut last = None;
    for &eps in &ladder {
        let (u, _, report) = problem.solve_cg(&psi0, eps).map_err(solver_failure)?;
        reports.push((format!("epsilon={eps:e}"), report));
        if eps == cfg.spectral.epsilon {
            last = Some(u);
        }
    }
    if let Some(u) = &last {
        io::write_control(&out.join("control.csv"), u).map_err(solver_failure)?;
    }
    io::write_control_reports(&out.join("control_report.csv"), &reports).map_err(solver_failure)?;
    for (label, r) in &reports {
        println!("control {label}: terminal residual {:.4e}, cost {:.4e}, {} CG iterations", r.terminal_residual, r.control_cost, r.cg_iterations);
    }
    Ok(())
}

/// σ ≡ 1 and constant data `c` on `(0, τ)` have the solution `c·sinh(t − τ)`.
pub fn volterra_oracle_errors(steps: &[usize]) -> crate::Result<Vec<(usize, f64)>> {
    let (tau, c) = (1.0, 1.0);
    steps
        .iter()
        .map(|&n| {
            let g = forward::TimeGrid::new(tau, n)?;
            let one = forward::SigmaProfile::constant(&g, 1.0);
            let eta = TimeSeriesField::from_fn(g, 1, |_, _| c);
            let th = solve_volterra(&eta, &one)?;
            let err = (0..g.n_times())
                .map(|m| (th.at(m)[0] - c * (g.time(m) - tau).sinh()).abs())
                .fold(0.0, f64::max);
            Ok((n, err))
        })
        .collect()
}

fn volterra_cmd(out: &Path) -> Outcome<()> {
    let errs = volterra_oracle_errors(&[250, 500, 1000]).map_err(solver_failure)?;
    let mut rows = vec![(0.0, 0.0); 0];
    let mut w = csv::Writer::from_path(out.join("volterra.csv")).map_err(|e| solver_failure(e.into()))?;
    w.write_record(["steps", "dt", "max_err", "ratio"]).map_err(|e| solver_failure(e.into()))?;
    for (i, &(n, e)) in errs.iter().enumerate() {
        let ratio = if i > 0 { errs[i - 1].1 / e } else { f64::NAN };
        rows.push((e, ratio));
        w.write_record([n.to_string(), format!("{}", 1.0 / n as f64), format!("{e}"), format!("{ratio}")])
            .map_err(|e| solver_failure(e.into()))?;
    }
    w.flush().map_err(|e| solver_failure(e.into()))?;
    let (fine, ratio) = rows[rows.len() - 1];
    println!("volterra-test: max error {fine:.3e} at dt = 1e-3, refinement ratio {ratio:.2}");
    if fine <= 1e-3 && ratio >= 1.8 {
        Ok(())
    } else {
        Err(Failure::Acceptance(format!("error {fine:.3e} (need <= 1e-3), ratio {ratio:.2} (need >= 1.8)")))
    }
}

/// `a..b` as powers of ten, or a comma list.
pub fn parse_k_range(s: &str) -> Outcome<Vec<f64>> {
    let bad = || Failure::Config(format!("penalty range '{s}' must be 'a..b' (decades) or a comma list"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (f64, f64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if !(a > 0.0 && b >= a) {
            return Err(bad());
        }
        let (la, lb) = (a.log10().round() as i32, b.log10().round() as i32);
        return Ok((la..=lb).map(|e| 10f64.powi(e)).collect());
    }
    let ks: Vec<f64> = s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect::<Outcome<_>>()?;
    if ks.is_empty() || ks.iter().any(|k| !(*k > 0.0)) {
        return Err(bad());
    }
    Ok(ks)
}

/// Reference-table checks: monotone through 1e5, bands of 8 points, 1e6 not better.
pub fn sweep_checks(rows: &[(f64, f64)]) -> Vec<(String, bool)> {
    let find = |k: f64| rows.iter().find(|r| (r.0 / k - 1.0).abs() < 1e-9).map(|r| r.1);
    let mut out = Vec::new();
    let up_to: Vec<f64> = [1e2, 1e3, 1e4, 1e5].iter().filter_map(|&k| find(k)).collect();
    out.push(("monotone decrease through 1e5".into(), up_to.len() == 4 && up_to.windows(2).all(|w| w[1] < w[0])));
    for (k, r) in bench::SWEEP_REFERENCE {
        let ok = find(k).is_some_and(|e| (e - r).abs() <= 0.08);
        out.push((format!("k={k:e} within 8 points of {:.1}%", 100.0 * r), ok));
    }
    out.push(("1e6 not better than 1e5".into(), matches!((find(1e5), find(1e6)), (Some(a), Some(b)) if b >= a)));
    out
}

fn sweep_cmd(cfg: &RunConfig, out: &Path, range: &str, threads: usize, noise: Option<f64>) -> Outcome<()> {
    let ks = parse_k_range(range)?;
    let configs = bench::sweep_configs(cfg, &ks);
    let mesh = mesh_of(cfg)?;
    let results = bench::parallel_map(&configs, threads, |c| bench::invert(c, noise));
    let mut rows = Vec::new();
    for (c, r) in configs.iter().zip(results) {
        let inv = r.map_err(solver_failure)?;
        write_inversion(&out.join(format!("k_{:e}", c.optimizer.k)), &mesh, &inv, c.optimizer.k)?;
        println!("sweep-k: k = {:e}, rel_err = {:.4}", c.optimizer.k, inv.rel_err);
        rows.push((c.optimizer.k, inv.rel_err));
    }
    io::write_sweep(&out.join("sweep.csv"), &rows).map_err(solver_failure)?;
    write_checks(&out.join("sweep_checks.csv"), &sweep_checks(&rows))
}

fn write_checks(path: &Path, checks: &[(String, bool)]) -> Outcome<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| solver_failure(e.into()))?;
    w.write_record(["check", "pass"]).map_err(|e| solver_failure(e.into()))?;
    for (name, ok) in checks {
        println!("{} {name}", if *ok { "PASS" } else { "FAIL" });
        w.write_record([name.as_str(), if *ok { "true" } else { "false" }]).map_err(|e| solver_failure(e.into()))?;
    }
    w.flush().map_err(|e| solver_failure(e.into()))?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Acceptance(failed.join("; ")))
    }
}

/// Trend checks over a figure grid: per (figure, source, observation) group,
/// whether observing both components beats every single-component regime, and
/// how accurate the both-component cells are.
pub fn figure_checks(cells: &[Cell], errors: &[f64]) -> Vec<(String, bool)> {
    struct Group {
        dim: usize,
        figure: &'static str,
        both: Option<(f64, f64)>,
        singles: Vec<f64>,
    }
    let mut groups: Vec<((&str, &str, &str), Group)> = Vec::new();
    for (c, &e) in cells.iter().zip(errors) {
        let key = (c.figure, c.source, c.observation);
        let pos = match groups.iter().position(|g| g.0 == key) {
            Some(p) => p,
            None => {
                groups.push((key, Group { dim: c.config.domain.dim, figure: c.figure, both: None, singles: Vec::new() }));
                groups.len() - 1
            }
        };
        let g = &mut groups[pos].1;
        if c.regime == "both" {
            g.both = Some((e, c.reference[0]));
        } else {
            g.singles.push(e);
        }
    }
    let wins = |g: &Group| g.both.is_some_and(|(b, _)| !g.singles.is_empty() && g.singles.iter().all(|&s| b < s));
    let mut out = Vec::new();
    for fig in ["cubic", "linear"] {
        let of: Vec<&Group> = groups.iter().map(|g| &g.1).filter(|g| g.dim == 1 && g.figure == fig).collect();
        if !of.is_empty() {
            let w = of.iter().filter(|g| wins(g)).count();
            out.push((format!("1D {fig}: both components win in {w} of {}", of.len()), 4 * w >= 3 * of.len()));
        }
    }
    let one: Vec<&Group> = groups.iter().map(|g| &g.1).filter(|g| g.dim == 1).collect();
    if !one.is_empty() {
        // only where the reference error is itself small
        let ok = one.iter().filter_map(|g| g.both).filter(|b| b.1 <= 0.126).all(|b| b.0 <= 0.15);
        out.push(("1D both-component errors <= 15% where reference <= 12.6%".into(), ok));
    }
    let two: Vec<&Group> = groups.iter().map(|g| &g.1).filter(|g| g.dim == 2).collect();
    if !two.is_empty() {
        let w = two.iter().filter(|g| wins(g)).count();
        out.push((format!("2D: both components win in {w} of {}", two.len()), 3 * w >= 2 * two.len()));
        let ok = two.iter().filter_map(|g| g.both).all(|b| b.0 <= 0.25);
        out.push(("2D both-component errors <= 25%".into(), ok));
    }
    out
}

fn figures_cmd(out: &Path, only: Scope, threads: usize, noise: Option<f64>, seed: u64) -> Outcome<()> {
    let mut cells = Vec::new();
    if only != Scope::TwoD {
        cells.extend(bench::figure_cells_1d());
    }
    if only != Scope::OneD {
        cells.extend(bench::figure_cells_2d());
    }
    for c in &mut cells {
        c.config.seed = seed;
    }
    let results = bench::parallel_map(&cells, threads, |c| bench::invert(&c.config, noise));
    let mut w = csv::Writer::from_path(out.join("figures.csv")).map_err(|e| solver_failure(e.into()))?;
    let head = ["figure", "source", "observation", "regime", "rel_err", "rel_err_f1", "rel_err_f2", "reference", "reference_f1", "reference_f2", "diverged"];
    w.write_record(head).map_err(|e| solver_failure(e.into()))?;
    let mut errors = Vec::new();
    for (c, r) in cells.iter().zip(results) {
        let inv = r.map_err(solver_failure)?;
        let mesh = mesh_of(&c.config)?;
        write_inversion(&out.join(c.label()), &mesh, &inv, c.config.optimizer.k)?;
        let per = |i: usize| inv.per_component.get(i).copied().flatten().map(|v| format!("{v}")).unwrap_or_default();
        let (joint, r1, r2) = match c.reference.len() {
            1 => (format!("{}", c.reference[0]), String::new(), String::new()),
            _ => (String::new(), format!("{}", c.reference[0]), format!("{}", c.reference[1])),
        };
        w.write_record([c.figure.to_string(), c.source.into(), c.observation.into(), c.regime.into(), format!("{}", inv.rel_err), per(0), per(1), joint, r1, r2, inv.result.diverged.to_string()])
            .map_err(|e| solver_failure(e.into()))?;
        println!("bench-figures: {} rel_err = {:.4}", c.label(), inv.rel_err);
        errors.push(inv.rel_err);
    }
    w.flush().map_err(|e| solver_failure(e.into()))?;
    write_checks(&out.join("figure_checks.csv"), &figure_checks(&cells, &errors))
}
