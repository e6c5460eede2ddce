//! Least-squares source identification by steepest descent with an exact
//! discrete adjoint, plus the error metrics shared with the spectral path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::fem::{self, CsrMatrix};
use crate::forward::{self, CouplingMatrix, FieldSeries, ParabolicSolver, SigmaProfile, TimeGrid};
use crate::mesh::{Mesh, SubdomainMask};

/// Stop when the gradient norm falls below this.
pub const GRAD_TOL: f64 = 1e-8;
/// Descent stops with a flag once `J` exceeds this multiple of the best value.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
/// Smallest admissible denominator of the stability ratio.
pub const STABILITY_MIN_DENOM: f64 = 1e-14;

fn check_pair(mass: &CsrMatrix, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    if a.len() != b.len() || a.iter().chain(b).any(|f| f.len() != mass.nrows()) {
        return Err(Error::DimensionMismatch("fields differ in component count or mesh size".into()));
    }
    Ok(())
}

/// `‖F_rec − F_true‖ / ‖F_true‖` over all components jointly, mass weighted.
pub fn relative_error(mass: &CsrMatrix, rec: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    check_pair(mass, rec, truth)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (r, t) in rec.iter().zip(truth) {
        let d: Vec<f64> = r.iter().zip(t).map(|(a, b)| a - b).collect();
        num += mass.inner(&d, &d);
        den += mass.inner(t, t);
    }
    if den <= 0.0 {
        return Err(Error::Undefined("relative error against a zero reference field".into()));
    }
    Ok((num.max(0.0) / den).sqrt())
}

/// Per-component relative errors; `None` where the reference component vanishes.
pub fn relative_error_by_component(mass: &CsrMatrix, rec: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Vec<Option<f64>>> {
    check_pair(mass, rec, truth)?;
    Ok(rec
        .iter()
        .zip(truth)
        .map(|(r, t)| relative_error(mass, &[r.clone()], &[t.clone()]).ok())
        .collect())
}

/// Everything the descent needs besides the data.
#[derive(Debug, Clone)]
pub struct InverseProblemConfig {
    pub mesh: Mesh,
    pub q: CouplingMatrix,
    pub nu: f64,
    pub sigma: SigmaProfile,
    pub grid: TimeGrid,
    pub mask: SubdomainMask,
    /// Zero-based indices of the measured components.
    pub observed: Vec<usize>,
    pub penalty_k: f64,
    pub step_size: f64,
    pub max_iters: usize,
}

impl InverseProblemConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.q.size();
        if !(self.penalty_k > 0.0) || !self.penalty_k.is_finite() {
            return invalid(format!("penalty must be positive, got {}", self.penalty_k));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return invalid(format!("step size must be positive, got {}", self.step_size));
        }
        if self.observed.is_empty() {
            return invalid("at least one component must be observed");
        }
        if let Some(&c) = self.observed.iter().find(|&&c| c >= n) {
            return invalid(format!("observed component {} outside 1..={n}", c + 1));
        }
        if self.mask.is_empty() {
            return invalid("observation domain is empty");
        }
        if self.mask.node_flags.len() != self.mesh.node_count() {
            return Err(Error::DimensionMismatch("mask does not match the mesh".into()));
        }
        if !self.sigma.matches(&self.grid) {
            return Err(Error::DimensionMismatch("sigma profile does not match the time grid".into()));
        }
        Ok(())
    }
}

/// Factorized operators of one configuration.
#[derive(Debug, Clone)]
pub struct InverseProblem {
    cfg: InverseProblemConfig,
    solver: ParabolicSolver,
    mass_o: CsrMatrix,
    /// `∫ σ² dt` by the trapezoid rule.
    sigma_sq: f64,
}

/// Value of the functional with its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub total: f64,
    pub regularization: f64,
    pub misfit: f64,
}

impl InverseProblem {
    pub fn new(cfg: InverseProblemConfig) -> Result<Self> {
        cfg.validate()?;
        let solver = ParabolicSolver::new(&cfg.mesh, &cfg.q, cfg.nu, cfg.grid.dt())?;
        let mass_o = fem::assemble_masked_mass(&cfg.mesh, &cfg.mask.element_flags)?;
        let w = cfg.grid.trapezoid_weights();
        let sigma_sq = (0..cfg.grid.n_times()).map(|m| w[m] * cfg.sigma.at(m).powi(2)).sum();
        Ok(InverseProblem { cfg, solver, mass_o, sigma_sq })
    }

    pub fn config(&self) -> &InverseProblemConfig {
        &self.cfg
    }

    pub fn mass(&self) -> &CsrMatrix {
        self.solver.mass()
    }

    pub fn mass_o(&self) -> &CsrMatrix {
        &self.mass_o
    }

    /// State generated by `f`.
    pub fn forward(&self, f: &[Vec<f64>]) -> Result<FieldSeries> {
        forward::forward_with(&self.solver, &self.cfg.sigma, f, self.cfg.grid)
    }

    fn check_obs(&self, obs: &FieldSeries) -> Result<()> {
        let n = self.cfg.q.size();
        if obs.n_comp() != n || obs.n_nodes() != self.cfg.mesh.node_count() || !obs.grid().same_as(&self.cfg.grid) {
            return Err(Error::DimensionMismatch("observations do not match the configuration".into()));
        }
        Ok(())
    }

    fn regularization(&self, f: &[Vec<f64>]) -> f64 {
        0.5 * self.sigma_sq * f.iter().map(|c| self.mass().inner(c, c)).sum::<f64>()
    }

    /// Residual `y − y_obs` of component `c` at step `m`.
    fn residual(y: &FieldSeries, obs: &FieldSeries, m: usize, c: usize) -> Vec<f64> {
        y.comp(m, c).iter().zip(obs.comp(m, c)).map(|(a, b)| a - b).collect()
    }

    /// `(k/2) Σ_i Σ_{m≥1} dt (|r^m|²_O + |(r^m − r^{m−1})/dt|²_O)` over the observed components.
    fn misfit(&self, y: &FieldSeries, obs: &FieldSeries) -> f64 {
        let dt = self.cfg.grid.dt();
        let mut s = 0.0;
        for &c in &self.cfg.observed {
            let mut prev = Self::residual(y, obs, 0, c);
            for m in 1..self.cfg.grid.n_times() {
                let r = Self::residual(y, obs, m, c);
                let d: Vec<f64> = r.iter().zip(&prev).map(|(a, b)| (a - b) / dt).collect();
                s += dt * (self.mass_o.inner(&r, &r) + self.mass_o.inner(&d, &d));
                prev = r;
            }
        }
        0.5 * self.cfg.penalty_k * s
    }

    pub fn objective(&self, f: &[Vec<f64>], obs: &FieldSeries) -> Result<Objective> {
        self.check_obs(obs)?;
        let y = self.forward(f)?;
        Ok(self.objective_for(f, &y, obs))
    }

    fn objective_for(&self, f: &[Vec<f64>], y: &FieldSeries, obs: &FieldSeries) -> Objective {
        let regularization = self.regularization(f);
        let misfit = self.misfit(y, obs);
        Objective { total: regularization + misfit, regularization, misfit }
    }

    /// Objective and its exact gradient with respect to the nodal values of `f`.
    pub fn gradient(&self, f: &[Vec<f64>], obs: &FieldSeries) -> Result<(Objective, Vec<Vec<f64>>)> {
        self.check_obs(obs)?;
        let y = self.forward(f)?;
        let value = self.objective_for(f, &y, obs);
        let (n, nn) = (self.cfg.q.size(), self.cfg.mesh.node_count());
        let grid = self.cfg.grid;
        let (dt, last) = (grid.dt(), grid.n_steps());
        let k = self.cfg.penalty_k;
        // D r^m for m = 1..=N, per observed component
        let mut res = vec![Vec::new(); n];
        let mut diff = vec![Vec::new(); n];
        for &c in &self.cfg.observed {
            res[c] = (0..=last).map(|m| Self::residual(&y, obs, m, c)).collect::<Vec<_>>();
            diff[c] = (0..=last)
                .map(|m| {
                    if m == 0 {
                        vec![0.0; nn]
                    } else {
                        res[c][m].iter().zip(&res[c][m - 1]).map(|(a, b)| (a - b) / dt).collect()
                    }
                })
                .collect::<Vec<_>>();
        }
        let mut lam_next = vec![0.0; n * nn];
        let mut acc = vec![0.0; n * nn];
        for m in (1..=last).rev() {
            // ∂J/∂Y^m = k (dt M_O r^m + M_O (D r^m − D r^{m+1}))
            let mut g = vec![0.0; n * nn];
            for &c in &self.cfg.observed {
                let mut v: Vec<f64> = res[c][m].iter().map(|r| dt * r).collect();
                for (i, x) in v.iter_mut().enumerate() {
                    *x += diff[c][m][i] - if m < last { diff[c][m + 1][i] } else { 0.0 };
                }
                let mv = self.mass_o.matvec(&v);
                for (gi, x) in g[c * nn..(c + 1) * nn].iter_mut().zip(&mv) {
                    *gi = k * x;
                }
            }
            let lam = self.solver.step(&lam_next, Some(&g), true);
            let s = dt * self.cfg.sigma.at(m);
            acc.iter_mut().zip(&lam).for_each(|(a, l)| *a += s * l);
            lam_next = lam;
        }
        let macc = self.solver.apply_mass(&acc);
        let grad = (0..n)
            .map(|c| {
                let mf = self.mass().matvec(&f[c]);
                mf.iter()
                    .zip(&macc[c * nn..(c + 1) * nn])
                    .map(|(a, b)| self.sigma_sq * a + b)
                    .collect()
            })
            .collect();
        Ok((value, grad))
    }
}

/// One row of the descent history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub j: f64,
    pub grad_norm: f64,
    pub rel_err: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DescentTrace {
    pub rows: Vec<TraceRow>,
    /// Accepted steps that increased `J`.
    pub increases: usize,
}

impl DescentTrace {
    /// Fraction of steps after which `J` did not grow.
    pub fn monotone_fraction(&self) -> f64 {
        let steps = self.rows.len().saturating_sub(1);
        if steps == 0 {
            return 1.0;
        }
        1.0 - self.increases as f64 / steps as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentResult {
    /// Iterate with the smallest `J`.
    pub source: Vec<Vec<f64>>,
    pub best_iter: usize,
    pub best_j: f64,
    pub trace: DescentTrace,
    pub converged: bool,
    pub diverged: bool,
}

/// Fixed-step steepest descent `F ← F − step ∇J` from `f0`; stops after
/// `max_iters`, when `‖∇J‖ < GRAD_TOL`, or when `J` grows past
/// `DIVERGENCE_FACTOR` times the best value. `truth` only feeds the trace.
pub fn descend(problem: &InverseProblem, obs: &FieldSeries, f0: &[Vec<f64>], truth: Option<&[Vec<f64>]>) -> Result<DescentResult> {
    let cfg = problem.config();
    let n = cfg.q.size();
    if f0.len() != n || f0.iter().any(|c| c.len() != cfg.mesh.node_count()) {
        return Err(Error::DimensionMismatch("initial guess does not match the configuration".into()));
    }
    let mut f = f0.to_vec();
    let mut best = (f.clone(), 0usize, f64::INFINITY);
    let mut trace = DescentTrace::default();
    let mut converged = false;
    let mut diverged = false;
    let mut last_j = f64::INFINITY;
    for it in 0..=cfg.max_iters {
        let (value, grad) = problem.gradient(&f, obs)?;
        let j = value.total;
        let gn = grad.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        let rel_err = truth.and_then(|t| relative_error(problem.mass(), &f, t).ok());
        trace.rows.push(TraceRow { iter: it, j, grad_norm: gn, rel_err });
        if !j.is_finite() {
            diverged = true;
            break;
        }
        if it > 0 && j > last_j {
            trace.increases += 1;
            log::debug!("objective rose at iteration {it}: {last_j:.6e} -> {j:.6e}");
        }
        last_j = j;
        if j < best.2 {
            best = (f.clone(), it, j);
        }
        if j > DIVERGENCE_FACTOR * best.2 {
            diverged = true;
            log::warn!("descent diverged at iteration {it} (J = {j:.3e}, best {:.3e})", best.2);
            break;
        }
        if gn < GRAD_TOL {
            converged = true;
            break;
        }
        if it == cfg.max_iters {
            break;
        }
        for (fc, gc) in f.iter_mut().zip(&grad) {
            fc.iter_mut().zip(gc).for_each(|(x, g)| *x -= cfg.step_size * g);
        }
    }
    if trace.increases > 0 {
        log::info!("objective increased on {} of {} steps", trace.increases, trace.rows.len().saturating_sub(1));
    }
    Ok(DescentResult { source: best.0, best_iter: best.1, best_j: best.2, trace, converged, diverged })
}

/// Adds seeded Gaussian noise to the observed components on the observation
/// nodes, with standard deviation `rms · 10^{−snr/20}` per component.
pub fn add_observation_noise(obs: &mut FieldSeries, mask: &SubdomainMask, observed: &[usize], snr_db: f64, seed: u64) -> Result<()> {
    if !snr_db.is_finite() {
        return invalid(format!("noise level undefined for SNR {snr_db} dB"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &c in observed {
        if c >= obs.n_comp() {
            return invalid(format!("observed component {} outside the series", c + 1));
        }
        let (mut s, mut count) = (0.0, 0usize);
        for m in 0..obs.n_times() {
            for (v, _) in obs.comp(m, c).iter().zip(&mask.node_flags).filter(|(_, &f)| f) {
                s += v * v;
                count += 1;
            }
        }
        let sd = (s / count.max(1) as f64).sqrt() * 10f64.powf(-snr_db / 20.0);
        if sd == 0.0 {
            continue;
        }
        let normal = Normal::new(0.0, sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for m in 0..obs.n_times() {
            for (v, _) in obs.comp_mut(m, c).iter_mut().zip(&mask.node_flags).filter(|(_, &f)| f) {
                *v += normal.sample(&mut rng);
            }
        }
    }
    Ok(())
}

/// `‖F − F̃‖ / ‖∂t y_n − ∂t ỹ_n‖_{L²(0,T;L²(O))}` with backward differences
/// on the last component.
pub fn stability_ratio(problem: &InverseProblem, f: &[Vec<f64>], f_tilde: &[Vec<f64>]) -> Result<f64> {
    check_pair(problem.mass(), f, f_tilde)?;
    let diff: Vec<Vec<f64>> = f.iter().zip(f_tilde).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect();
    let num = diff.iter().map(|c| problem.mass().inner(c, c)).sum::<f64>().max(0.0).sqrt();
    // the map is linear, so one solve with the difference suffices
    let y = problem.forward(&diff)?;
    let c = y.n_comp() - 1;
    let dt = y.grid().dt();
    let mut den = 0.0;
    for m in 1..y.n_times() {
        let d: Vec<f64> = y.comp(m, c).iter().zip(y.comp(m - 1, c)).map(|(a, b)| (a - b) / dt).collect();
        den += dt * problem.mass_o().inner(&d, &d);
    }
    let den = den.max(0.0).sqrt();
    if den < STABILITY_MIN_DENOM {
        return Err(Error::Undefined(format!("stability ratio denominator {den:.3e} is degenerate")));
    }
    Ok(num / den)
}
