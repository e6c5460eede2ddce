//! Benchmark settings: the regularization sweep and the observation-regime
//! grids in 1D and 2D, plus a small work-sharing runner.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::{DomainConfig, Expr, RunConfig};
use crate::error::Result;
use crate::error::Error;
use crate::forward::FieldSeries;
use crate::io::ModeRow;
use crate::mesh::{Mesh, ObsBox};
use crate::optimize::{self, add_observation_noise, descend, DescentResult, InverseProblem};
use crate::reconstruct::{ConstQProblem, PipelineResult, VariableQProblem};
use crate::spectral::{self, ModeBasis};

/// Published sweep `(k, relative error)`.
pub const SWEEP_REFERENCE: [(f64, f64); 5] = [(1e2, 0.676), (1e3, 0.519), (1e4, 0.272), (1e5, 0.126), (1e6, 0.145)];

pub const SINE_1D: &str = "sin(2*pi*x)";
pub const HAT: &str = "8*(x-0.1) on (0.1,0.35); 8*(0.6-x) on (0.35,0.6); 0 else";
/// The hat shifted right by 0.3.
pub const HAT_SHIFTED: &str = "8*(x-0.4) on (0.4,0.65); 8*(0.9-x) on (0.65,0.9); 0 else";
pub const SINE_2D: &str = "sin(2*pi*x)*sin(2*pi*y)";

/// Maps `f` over `items` on up to `threads` workers; output order follows input.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().expect("every slot is filled")).collect()
}

/// Outcome of one descent run against a known source.
#[derive(Debug, Clone)]
pub struct Inversion {
    pub truth: Vec<Vec<f64>>,
    pub result: DescentResult,
    pub rel_err: f64,
    pub per_component: Vec<Option<f64>>,
}

/// Synthetic observations of the configured source, with optional noise.
pub fn synthesize(cfg: &RunConfig, noise_snr_db: Option<f64>) -> Result<(InverseProblem, Vec<Vec<f64>>, FieldSeries)> {
    let problem = InverseProblem::new(cfg.inverse_problem()?)?;
    let truth = cfg.source_fields(&problem.config().mesh);
    let mut obs = problem.forward(&truth)?;
    if let Some(snr) = noise_snr_db {
        let c = problem.config();
        add_observation_noise(&mut obs, &c.mask, &c.observed, snr, cfg.seed)?;
    }
    Ok((problem, truth, obs))
}

/// Descent from zero on the given observations.
pub fn invert_with(problem: &InverseProblem, truth: Vec<Vec<f64>>, obs: &FieldSeries) -> Result<Inversion> {
    let nn = problem.config().mesh.node_count();
    let zero = vec![vec![0.0; nn]; truth.len()];
    let result = descend(problem, obs, &zero, Some(&truth))?;
    let rel_err = optimize::relative_error(problem.mass(), &result.source, &truth)?;
    let per_component = optimize::relative_error_by_component(problem.mass(), &result.source, &truth)?;
    Ok(Inversion { truth, result, rel_err, per_component })
}

pub fn invert(cfg: &RunConfig, noise_snr_db: Option<f64>) -> Result<Inversion> {
    let (problem, truth, obs) = synthesize(cfg, noise_snr_db)?;
    invert_with(&problem, truth, &obs)
}

/// One configuration per penalty value.
pub fn sweep_configs(base: &RunConfig, ks: &[f64]) -> Vec<RunConfig> {
    ks.iter()
        .map(|&k| {
            let mut c = base.clone();
            c.optimizer.k = k;
            c
        })
        .collect()
}

/// Couplings the spectral path handles.
#[derive(Debug, Clone, PartialEq)]
pub enum SpectralCoupling {
    /// Row-major constant matrix.
    Constant(Vec<f64>),
    /// Nodal `q` of the lower 2x2 coupling `[[0, 0], [q, 0]]`.
    LowerVariable(Vec<f64>),
}

pub fn spectral_coupling(cfg: &RunConfig, mesh: &Mesh) -> Option<SpectralCoupling> {
    if let Some(q) = cfg.constant_coupling() {
        return Some(SpectralCoupling::Constant(q));
    }
    let e = &cfg.coupling.entries;
    if cfg.coupling.n != 2 || e.keys().any(|&k| k != (1, 0)) {
        return None;
    }
    e.get(&(1, 0)).map(|q| SpectralCoupling::LowerVariable(q.nodal(mesh)))
}

/// Spectral reconstruction of the configured source with its mode table.
#[derive(Debug, Clone)]
pub struct SpectralRun {
    pub mesh: Mesh,
    pub truth: Vec<Vec<f64>>,
    pub result: PipelineResult,
    pub modes: Vec<ModeRow>,
}

pub fn spectral(cfg: &RunConfig, noise_snr_db: Option<f64>) -> Result<SpectralRun> {
    let mesh = cfg.mesh()?;
    let grid = cfg.grid()?;
    let sigma = cfg.sigma(&grid)?;
    let mask = cfg.mask(&mesh)?;
    let truth = cfg.source_fields(&mesh);
    let settings = cfg.spectral_settings(noise_snr_db);
    let t = grid.t_final();
    let mut modes = Vec::new();
    let result = match spectral_coupling(cfg, &mesh) {
        Some(SpectralCoupling::Constant(q)) => {
            let problem = ConstQProblem { mesh: &mesh, q: q.clone(), nu: cfg.domain.nu, sigma: sigma.clone(), grid, mask, source: truth.clone() };
            let result = problem.run(&settings)?;
            for m in spectral::mode_list(mesh.dim(), settings.k_max) {
                let b = ModeBasis::laplace(&mesh, &m, cfg.domain.nu)?;
                let a = spectral::coeff_aq(&q, cfg.n_comp(), b.lambda, &sigma, t)?;
                let k = m.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("-");
                modes.push(ModeRow { k, lambda: b.lambda, ik: None, alpha: None, a, b: None });
            }
            result
        }
        Some(SpectralCoupling::LowerVariable(q)) => {
            if cfg.domain.nu != 1.0 {
                log::warn!("the variable-coupling path uses unit diffusion; nu = {} is ignored", cfg.domain.nu);
            }
            let problem = VariableQProblem { mesh: &mesh, q: q.clone(), sigma: sigma.clone(), grid, mask, source: truth.clone() };
            let result = problem.run(&settings)?;
            for k in 1..=settings.k_max {
                let b = ModeBasis::riesz(&mesh, &q, k)?;
                let (a, bl) = spectral::coeff_al_bl(b.ik, k, &sigma, t)?;
                modes.push(ModeRow { k: k.to_string(), lambda: b.lambda, ik: Some(b.ik), alpha: Some(b.alpha), a: vec![a], b: Some(bl) });
            }
            result
        }
        None => {
            return Err(Error::InvalidArgument(
                "the spectral path needs constant coupling or a 2x2 coupling with only q21 set".into(),
            ))
        }
    };
    Ok(SpectralRun { mesh, truth, result, modes })
}

/// One benchmark cell with the reference errors it is compared to.
#[derive(Debug, Clone)]
pub struct Cell {
    pub figure: &'static str,
    pub source: &'static str,
    pub observation: &'static str,
    /// `both`, `first` or `second`.
    pub regime: &'static str,
    pub config: RunConfig,
    /// Published joint error (1D) or per-component errors (2D).
    pub reference: Vec<f64>,
}

impl Cell {
    pub fn label(&self) -> String {
        format!("{}_{}_{}_{}", self.figure, self.source, self.observation, self.regime)
    }
}

fn regime_components(regime: &str) -> Vec<usize> {
    match regime {
        "first" => vec![0],
        "second" => vec![1],
        _ => vec![0, 1],
    }
}

fn with_coupling(mut c: RunConfig, entries: &[((usize, usize), &str)]) -> RunConfig {
    c.coupling.entries.clear();
    for &(ij, e) in entries {
        c.coupling.entries.insert(ij, Expr::parse(e).expect("benchmark expressions are valid"));
    }
    c
}

fn with_source(mut c: RunConfig, f1: &str, f2: &str) -> RunConfig {
    c.source.clear();
    c.source.insert(0, Expr::parse(f1).expect("benchmark expressions are valid"));
    c.source.insert(1, Expr::parse(f2).expect("benchmark expressions are valid"));
    c
}

/// The 1D grid: two couplings, two sources, two observation sets, three regimes.
pub fn figure_cells_1d() -> Vec<Cell> {
    let cubic = [((1, 0), "-x^3 + 4*x^2 - 3*x + 1")];
    let linear = [((0, 1), "4*x - 2"), ((1, 0), "-4*x + 2")];
    let o1 = vec![ObsBox::interval(0.5, 0.9)];
    let o2 = vec![ObsBox::interval(0.2, 0.4), ObsBox::interval(0.6, 0.8)];
    // joint errors for (both, first, second)
    let reference: [(&str, &[((usize, usize), &str)], &str, &str, [f64; 3]); 8] = [
        ("cubic", &cubic, "F1", "O1", [0.117, 0.713, 0.423]),
        ("cubic", &cubic, "F2", "O1", [0.025, 0.707, 0.283]),
        ("cubic", &cubic, "F1", "O2", [0.025, 0.707, 0.283]),
        ("cubic", &cubic, "F2", "O2", [0.038, 0.707, 0.358]),
        ("linear", &linear, "F1", "O1", [0.126, 0.573, 0.408]),
        ("linear", &linear, "F2", "O1", [0.096, 0.346, 0.588]),
        ("linear", &linear, "F1", "O2", [0.027, 0.214, 0.214]),
        ("linear", &linear, "F2", "O2", [0.037, 0.344, 0.344]),
    ];
    let mut cells = Vec::new();
    for (figure, coupling, source, obs, refs) in reference {
        for (r, regime) in ["both", "first", "second"].into_iter().enumerate() {
            let mut c = with_coupling(RunConfig::base(), coupling);
            c = match source {
                "F1" => with_source(c, SINE_1D, &format!("-{SINE_1D}")),
                _ => with_source(c, HAT, HAT_SHIFTED),
            };
            c.observation.boxes = if obs == "O1" { o1.clone() } else { o2.clone() };
            c.observation.observed = regime_components(regime);
            cells.push(Cell { figure, source, observation: obs, regime, config: c, reference: vec![refs[r]] });
        }
    }
    cells
}

/// 2D base: unit square, 40x40 cells (3200 triangles), sine-product source.
pub fn base_2d() -> RunConfig {
    let mut c = RunConfig::base();
    c.domain = DomainConfig { dim: 2, lower: [0.0; 2], upper: [1.0, 1.0], elements: [40, 40], nu: 0.1 };
    with_source(c, SINE_2D, &format!("-{SINE_2D}"))
}

/// The 2D grid with per-component reference errors `(f1, f2)`.
pub fn figure_cells_2d() -> Vec<Cell> {
    let upper = [((0, 0), "1"), ((0, 1), "4"), ((1, 1), "1")];
    let swap = [((0, 1), "4"), ((1, 0), "2")];
    let o3 = vec![ObsBox::rect((0.3, 0.5), (0.2, 0.8))];
    let o4 = vec![ObsBox::rect((0.2, 0.4), (0.2, 0.8)), ObsBox::rect((0.6, 0.8), (0.2, 0.8))];
    let o5 = vec![ObsBox::rect((0.5, 0.9), (0.1, 0.9))];
    let o6 = vec![ObsBox::rect((0.2, 0.4), (0.3, 0.7)), ObsBox::rect((0.6, 0.8), (0.3, 0.7))];
    let reference: [(&str, &[((usize, usize), &str)], &str, &Vec<ObsBox>, &str, [f64; 2]); 10] = [
        ("upper", &upper, "O3", &o3, "both", [0.069, 0.144]),
        ("upper", &upper, "O3", &o3, "second", [0.432, 0.144]),
        ("upper", &upper, "O4", &o4, "both", [0.041, 0.077]),
        ("upper", &upper, "O4", &o4, "second", [0.636, 0.077]),
        ("swap", &swap, "O5", &o5, "both", [0.177, 0.143]),
        ("swap", &swap, "O5", &o5, "first", [0.204, 0.279]),
        ("swap", &swap, "O5", &o5, "second", [0.361, 0.220]),
        ("swap", &swap, "O6", &o6, "both", [0.081, 0.062]),
        ("swap", &swap, "O6", &o6, "first", [0.090, 0.116]),
        ("swap", &swap, "O6", &o6, "second", [0.365, 0.258]),
    ];
    reference
        .into_iter()
        .map(|(figure, coupling, obs, boxes, regime, refs)| {
            let mut c = with_coupling(base_2d(), coupling);
            c.observation.boxes = boxes.clone();
            c.observation.observed = regime_components(regime);
            Cell { figure, source: "F3", observation: obs, regime, config: c, reference: refs.to_vec() }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<usize> = (0..17).collect();
        assert_eq!(parallel_map(&items, 4, |x| x * x), items.iter().map(|x| x * x).collect::<Vec<_>>());
        assert_eq!(parallel_map(&items, 1, |x| x + 1)[16], 17);
        assert!(parallel_map(&[] as &[usize], 3, |x| *x).is_empty());
    }

    #[test]
    fn cell_grids() {
        let one = figure_cells_1d();
        assert_eq!(one.len(), 24);
        let hat = Expr::parse(HAT_SHIFTED).unwrap();
        assert!((hat.eval(0.65, 0.0) - 2.0).abs() < 1e-12 && hat.eval(0.3, 0.0) == 0.0);
        let mesh = one[0].config.mesh().unwrap();
        let q = one[0].config.coupling_matrix(&mesh);
        assert!((q.value(1, 0, 0) - 1.0).abs() < 1e-12);
        let two = figure_cells_2d();
        assert_eq!(two.len(), 10);
        assert!(two.iter().all(|c| c.config.mesh().unwrap().element_count() == 3200));
        assert_eq!(two[4].config.constant_coupling(), Some(vec![0.0, 4.0, 2.0, 0.0]));
    }

    #[test]
    fn noise_changes_only_with_the_seed() {
        let mut c = RunConfig::benchmark_1d();
        c.domain.elements = [20, 0];
        c.time.steps = 10;
        c.optimizer.iters = 3;
        let a = invert(&c, Some(20.0)).unwrap();
        let b = invert(&c, Some(20.0)).unwrap();
        assert_eq!(a.result.source, b.result.source);
        c.seed = 1;
        let d = invert(&c, Some(20.0)).unwrap();
        assert_ne!(a.result.source, d.result.source);
    }
}
