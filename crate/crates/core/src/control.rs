//! Penalized HUM null controls for the backward adjoint system
//! `−∂tΨ − νΔΨ + QᵗΨ = 1_O B U`, `Ψ(τ) = Ψ⁰`, with `B` selecting the last
//! component. The target is `Ψ(0) = 0`; the penalty `1/(2ε)‖Ψ(0)‖²` relaxes it.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::fem::{self, CsrMatrix};
use crate::forward::{stack_fields, CouplingMatrix, ParabolicSolver, TimeGrid};
use crate::mesh::{Mesh, SubdomainMask};
use crate::volterra::TimeSeriesField;

pub const CG_MAX_ITERS: usize = 500;
pub const CG_REL_TOL: f64 = 1e-8;
pub const DEFAULT_EPSILON: f64 = 1e-6;
/// Terminal residual above which a report is marked incomplete.
pub const INCOMPLETE_RESIDUAL: f64 = 0.05;

/// Last-component control on the flagged nodes, one nodal vector per
/// backward step `m = 0..N−1` (the step that produces `Ψ(t_m)`).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlFunction {
    grid: TimeGrid,
    n_comp: usize,
    n_nodes: usize,
    support: Vec<bool>,
    values: Vec<f64>,
    /// The control is extended by zero on `(τ, T)`.
    pub zero_extended: bool,
}

impl ControlFunction {
    pub fn zeros(grid: TimeGrid, n_comp: usize, support: Vec<bool>) -> Self {
        let n_nodes = support.len();
        ControlFunction {
            grid,
            n_comp,
            n_nodes,
            support,
            values: vec![0.0; grid.n_steps() * n_nodes],
            zero_extended: true,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_comp(&self) -> usize {
        self.n_comp
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }

    pub fn step(&self, m: usize) -> &[f64] {
        &self.values[m * self.n_nodes..(m + 1) * self.n_nodes]
    }

    /// Writes step `m`, zeroing values outside the support.
    pub fn set_step(&mut self, m: usize, v: &[f64]) {
        let nn = self.n_nodes;
        for i in 0..nn {
            self.values[m * nn + i] = if self.support[i] { v[i] } else { 0.0 };
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut c = self.clone();
        c.values.iter_mut().for_each(|v| *v *= s);
        c
    }

    /// Samples on the grid times for the Volterra stage: step `m` sits at
    /// `t_m` and the final time repeats the last step.
    pub fn as_time_series(&self) -> TimeSeriesField {
        let n = self.grid.n_steps();
        let nn = self.n_nodes;
        let mut v = Vec::with_capacity((n + 1) * nn);
        for m in 0..n {
            v.extend_from_slice(self.step(m));
        }
        if n > 0 {
            v.extend_from_slice(self.step(n - 1));
        } else {
            v.extend(std::iter::repeat(0.0).take(nn));
        }
        TimeSeriesField::from_values(self.grid, nn, v).expect("consistent layout")
    }

    /// `(Σ_m dt u_mᵀ M_O u_m)^{1/2}`.
    pub fn cost(&self, mass_o: &CsrMatrix) -> f64 {
        let dt = self.grid.dt();
        (0..self.grid.n_steps())
            .map(|m| dt * mass_o.inner(self.step(m), self.step(m)))
            .sum::<f64>()
            .max(0.0)
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlReport {
    pub epsilon: f64,
    pub tau: f64,
    /// `‖Ψ(0)‖/‖Ψ⁰‖` in `L²(Ω)ⁿ`.
    pub terminal_residual: f64,
    pub control_cost: f64,
    pub cg_iterations: usize,
    pub converged: bool,
    pub hypothesis_flags: Vec<String>,
    pub incomplete: bool,
}

/// Factorized adjoint operator, observation mass and horizon grid.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    solver: ParabolicSolver,
    mass_o: CsrMatrix,
    support: Vec<bool>,
    grid: TimeGrid,
    flags: Vec<String>,
}

impl ControlProblem {
    /// `qt` is the coupling of the adjoint system (already transposed).
    pub fn new(mesh: &Mesh, qt: &CouplingMatrix, nu: f64, grid: TimeGrid, mask: &SubdomainMask) -> Result<Self> {
        if mask.node_flags.len() != mesh.node_count() || mask.element_flags.len() != mesh.element_count() {
            return Err(Error::DimensionMismatch("mask does not match the mesh".into()));
        }
        let support: Vec<bool> = (0..mesh.node_count())
            .map(|i| mask.node_flags[i] && !mesh.is_boundary(i))
            .collect();
        if !support.iter().any(|&f| f) || !mask.element_flags.iter().any(|&f| f) {
            return invalid("control region contains no interior nodes or elements");
        }
        let solver = ParabolicSolver::new(mesh, qt, nu, grid.dt())?;
        let mass_o = fem::assemble_masked_mass(mesh, &mask.element_flags)?;
        let flags = controllability_flags(qt, &support);
        for f in &flags {
            log::warn!("control hypothesis: {f}");
        }
        Ok(ControlProblem {
            solver,
            mass_o,
            support,
            grid,
            flags,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn mass_o(&self) -> &CsrMatrix {
        &self.mass_o
    }

    pub fn solver(&self) -> &ParabolicSolver {
        &self.solver
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }

    pub fn hypothesis_flags(&self) -> &[String] {
        &self.flags
    }

    fn dim(&self) -> usize {
        self.solver.n_comp() * self.solver.n_nodes()
    }

    fn last_offset(&self) -> usize {
        (self.solver.n_comp() - 1) * self.solver.n_nodes()
    }

    /// Uncontrolled backward evolution of `psi0` down to `t = 0` over `n` steps.
    fn free_terminal(&self, psi0: &[f64], n: usize) -> Vec<f64> {
        let mut v = psi0.to_vec();
        for _ in 0..n {
            v = self.solver.step(&v, None, false);
        }
        v
    }

    /// State at `t = 0` produced by the control alone (zero datum).
    fn control_to_state(&self, u: &ControlFunction) -> Vec<f64> {
        let n = u.grid.n_steps();
        let (nn, off, dt) = (self.solver.n_nodes(), self.last_offset(), self.grid.dt());
        let mut v = vec![0.0; self.dim()];
        for m in (0..n).rev() {
            let mut load = vec![0.0; self.dim()];
            let mu = self.mass_o.matvec(u.step(m));
            for i in 0..nn {
                load[off + i] = dt * mu[i];
            }
            v = self.solver.step(&v, Some(&load), false);
        }
        v
    }

    /// Adjoint of [`Self::control_to_state`] for the control inner product and
    /// the plain Euclidean inner product on states: the forward companion
    /// `r₀ = A⁻ᵀ v`, `r_m = A⁻ᵀ M r_{m−1}`, read on the last component.
    fn state_to_control(&self, v: &[f64], n: usize) -> ControlFunction {
        let (nn, off) = (self.solver.n_nodes(), self.last_offset());
        let mut u = ControlFunction::zeros(self.grid.prefix(n).expect("n within grid"), self.solver.n_comp(), self.support.clone());
        let mut r = v.to_vec();
        self.solver.solve(&mut r, true);
        for m in 0..n {
            if m > 0 {
                let mut next = self.solver.apply_mass(&r);
                self.solver.solve(&mut next, true);
                r = next;
            }
            u.set_step(m, &r[off..off + nn]);
        }
        u
    }

    fn norm_m(&self, v: &[f64]) -> f64 {
        let mv = self.solver.apply_mass(v);
        fem::dot(v, &mv).max(0.0).sqrt()
    }

    fn report(&self, psi0: &[f64], e: &[f64], u: &ControlFunction, epsilon: f64, iters: usize, converged: bool) -> ControlReport {
        let p = self.norm_m(psi0);
        let terminal_residual = if p > 0.0 { self.norm_m(e) / p } else { 0.0 };
        ControlReport {
            epsilon,
            tau: u.grid.t_final(),
            terminal_residual,
            control_cost: u.cost(&self.mass_o),
            cg_iterations: iters,
            converged,
            hypothesis_flags: self.flags.clone(),
            incomplete: terminal_residual > INCOMPLETE_RESIDUAL || !converged,
        }
    }

    /// Conjugate gradient on `(εI + L^♯ M L) u = −L^♯ M z` in the control
    /// inner product, where `L` maps controls to `Ψ(0)` and `z` is the free
    /// evolution of the datum. Returns the control, `Ψ(0)` and the report.
    pub fn solve_cg(&self, psi0: &[f64], epsilon: f64) -> Result<(ControlFunction, Vec<f64>, ControlReport)> {
        self.check_datum(psi0, epsilon)?;
        let n = self.grid.n_steps();
        let z = self.free_terminal(psi0, n);
        let mut u = ControlFunction::zeros(self.grid, self.solver.n_comp(), self.support.clone());
        if psi0.iter().all(|&v| v == 0.0) {
            let rep = self.report(psi0, &z, &u, epsilon, 0, true);
            return Ok((u, z, rep));
        }
        let dt = self.grid.dt();
        let inner = |a: &ControlFunction, b: &ControlFunction| -> f64 {
            (0..n).map(|m| dt * self.mass_o.inner(a.step(m), b.step(m))).sum()
        };
        let apply_h = |x: &ControlFunction| -> ControlFunction {
            let lx = self.control_to_state(x);
            let back = self.state_to_control(&self.solver.apply_mass(&lx), n);
            let mut out = back;
            for (o, xv) in out.values.iter_mut().zip(&x.values) {
                *o += epsilon * xv;
            }
            out
        };
        let b = self.state_to_control(&self.solver.apply_mass(&z), n).scaled(-1.0);
        let b_norm = inner(&b, &b).sqrt();
        let mut r = b.clone();
        let mut p = r.clone();
        let mut rr = inner(&r, &r);
        let mut iters = 0;
        let mut converged = rr.sqrt() <= CG_REL_TOL * b_norm;
        while !converged && iters < CG_MAX_ITERS {
            let hp = apply_h(&p);
            let alpha = rr / inner(&p, &hp);
            for (x, pv) in u.values.iter_mut().zip(&p.values) {
                *x += alpha * pv;
            }
            for (x, hv) in r.values.iter_mut().zip(&hp.values) {
                *x -= alpha * hv;
            }
            let rr_new = inner(&r, &r);
            iters += 1;
            converged = rr_new.sqrt() <= CG_REL_TOL * b_norm;
            let beta = rr_new / rr;
            rr = rr_new;
            for (pv, rv) in p.values.iter_mut().zip(&r.values) {
                *pv = rv + beta * *pv;
            }
        }
        let lu = self.control_to_state(&u);
        let e: Vec<f64> = z.iter().zip(&lu).map(|(a, b)| a + b).collect();
        let rep = self.report(psi0, &e, &u, epsilon, iters, converged);
        if !converged {
            log::warn!(
                "control CG stopped after {iters} iterations (relative residual {:.3e}, terminal residual {:.3e})",
                rr.sqrt() / b_norm,
                rep.terminal_residual
            );
        }
        Ok((u, e, rep))
    }

    fn check_datum(&self, psi0: &[f64], epsilon: f64) -> Result<()> {
        if !(epsilon > 0.0) {
            return invalid(format!("penalty epsilon must be positive, got {epsilon}"));
        }
        if psi0.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "datum has {} values for a state of size {}",
                psi0.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Penalized controls for every horizon `t_1, …, t_N` of the grid from
    /// one dense Gramian accumulated step by step. Entry `j` holds the
    /// horizon `t_{j+1}`.
    pub fn solve_all_horizons(&self, psi0: &[f64], epsilon: f64) -> Result<Vec<HorizonControl>> {
        Ok(self.solve_all_horizons_multi(&[psi0.to_vec()], epsilon)?.remove(0))
    }

    /// [`Self::solve_all_horizons`] for several data sharing one factorization
    /// per horizon; the result is indexed `[datum][horizon]`.
    pub fn solve_all_horizons_multi(&self, data: &[Vec<f64>], epsilon: f64) -> Result<Vec<Vec<HorizonControl>>> {
        for d in data {
            self.check_datum(d, epsilon)?;
        }
        let (nn, off, dt, d) = (self.solver.n_nodes(), self.last_offset(), self.grid.dt(), self.dim());
        let nodes: Vec<usize> = (0..nn).filter(|&i| self.support[i]).collect();
        let k = nodes.len();
        let mut mo = DMatrix::zeros(k, k);
        for (a, &i) in nodes.iter().enumerate() {
            for (b, &j) in nodes.iter().enumerate() {
                mo[(a, b)] = self.mass_o.get(i, j);
            }
        }
        let mut mdense = DMatrix::zeros(d, d);
        for c in 0..self.solver.n_comp() {
            for (i, j, v) in self.solver.mass().triplets() {
                mdense[(c * nn + i, c * nn + j)] = v;
            }
        }
        // C_m = (A⁻¹M)^m A⁻¹ E_n restricted to the support columns
        let mut cols = DMatrix::zeros(d, k);
        for (a, &i) in nodes.iter().enumerate() {
            let mut v = vec![0.0; d];
            v[off + i] = 1.0;
            self.solver.solve(&mut v, false);
            cols.set_column(a, &DVector::from_vec(v));
        }
        let nd = data.len();
        let mut gram = DMatrix::zeros(d, d);
        let mut history: Vec<DMatrix<f64>> = Vec::with_capacity(self.grid.n_steps());
        let mut z: Vec<Vec<f64>> = data.to_vec();
        let mut out: Vec<Vec<HorizonControl>> = vec![Vec::with_capacity(self.grid.n_steps()); nd];
        for n in 1..=self.grid.n_steps() {
            gram += (&cols * &mo * cols.transpose()) * dt;
            history.push(cols.clone());
            for zi in z.iter_mut() {
                *zi = self.solver.step(zi, None, false);
            }
            let grid = self.grid.prefix(n)?;
            let mut sys = &gram * &mdense;
            for i in 0..d {
                sys[(i, i)] += epsilon;
            }
            let lu = sys.lu();
            let mut rhs = DMatrix::zeros(d, nd);
            for (c, zi) in z.iter().enumerate() {
                for i in 0..d {
                    rhs[(i, c)] = epsilon * zi[i];
                }
            }
            let e = lu.solve(&rhs).ok_or(Error::SingularPivot { row: 0, pivot: 0.0 })?;
            let me = &mdense * &e;
            let mut controls: Vec<ControlFunction> =
                (0..nd).map(|_| ControlFunction::zeros(grid, self.solver.n_comp(), self.support.clone())).collect();
            for (m, c) in history.iter().enumerate() {
                let um = c.transpose() * &me;
                for (di, u) in controls.iter_mut().enumerate() {
                    let mut full = vec![0.0; nn];
                    for (a, &i) in nodes.iter().enumerate() {
                        full[i] = -um[(a, di)] / epsilon;
                    }
                    u.set_step(m, &full);
                }
            }
            for (di, u) in controls.into_iter().enumerate() {
                let ev: Vec<f64> = e.column(di).iter().copied().collect();
                let report = self.report(&data[di], &ev, &u, epsilon, 0, true);
                out[di].push(HorizonControl {
                    control: u,
                    terminal_state: ev,
                    report,
                });
            }
            if n < self.grid.n_steps() {
                let mut next = DMatrix::zeros(d, k);
                for a in 0..k {
                    let mut v = self.solver.apply_mass(cols.column(a).as_slice());
                    self.solver.solve(&mut v, false);
                    next.set_column(a, &DVector::from_vec(v));
                }
                cols = next;
            }
        }
        Ok(out)
    }
}

/// Control for one horizon with the state it leaves at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonControl {
    pub control: ControlFunction,
    pub terminal_state: Vec<f64>,
    pub report: ControlReport,
}

/// Flags couplings that leave a component unreached by the last one: the
/// adjoint entry `(i, i+1)` must be bounded below by a positive constant on O.
pub fn controllability_flags(qt: &CouplingMatrix, support: &[bool]) -> Vec<String> {
    let n = qt.size();
    let nodes: Vec<usize> = (0..support.len()).filter(|&i| support[i]).collect();
    let mut out = Vec::new();
    for i in 0..n.saturating_sub(1) {
        let vals: Vec<f64> = nodes.iter().map(|&k| qt.value(i, i + 1, k)).collect();
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let max_abs = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if max_abs < 1e-14 {
            out.push(format!(
                "coupling q{}{} vanishes on the control region; component {} is not driven by the control",
                i + 2,
                i + 1,
                i + 1
            ));
        } else if min <= 0.0 {
            out.push(format!(
                "coupling q{}{} is not bounded below by a positive constant on the control region",
                i + 2,
                i + 1
            ));
        }
    }
    out
}

/// Penalized HUM for `−∂tΨ − νΔΨ + QᵗΨ = 1_O B U`, `Ψ(τ) = Ψ⁰`, by
/// conjugate gradients. `grid` covers `[0, τ]`.
pub fn solve_null_control(
    mesh: &Mesh,
    qt: &CouplingMatrix,
    nu: f64,
    psi0: &[Vec<f64>],
    grid: TimeGrid,
    mask: &SubdomainMask,
    epsilon: f64,
) -> Result<(ControlFunction, ControlReport)> {
    let problem = ControlProblem::new(mesh, qt, nu, grid, mask)?;
    let datum = stack_fields(psi0, mesh.node_count())?;
    let (u, _, rep) = problem.solve_cg(&datum, epsilon)?;
    Ok((u, rep))
}

/// Adjoint coupling `[[0, q], [0, 0]]` of the lower-triangular operator
/// `−∂xx + [[0, 0], [q, 0]]`.
pub fn variable_adjoint_coupling(q: &[f64]) -> CouplingMatrix {
    let mut qt = CouplingMatrix::zeros(2);
    qt.set(0, 1, crate::forward::CouplingEntry::Field(q.to_vec()));
    qt
}

/// Two-component variable-coupling case with unit diffusion.
pub fn solve_null_control_2x2_variable(
    mesh: &Mesh,
    q: &[f64],
    psi0: &[Vec<f64>],
    grid: TimeGrid,
    mask: &SubdomainMask,
    epsilon: f64,
) -> Result<(ControlFunction, ControlReport)> {
    if psi0.len() != 2 {
        return Err(Error::DimensionMismatch(format!("{} datum components, expected 2", psi0.len())));
    }
    solve_null_control(mesh, &variable_adjoint_coupling(q), 1.0, psi0, grid, mask, epsilon)
}

/// `QᵗBU` for a constant `Qᵗ` (row-major): component `i` is `Qᵗ[i][n] u_n`.
pub fn transport_control(u: &ControlFunction, qt: &CouplingMatrix) -> Result<Vec<ControlFunction>> {
    let Some(c) = qt.constants() else {
        return invalid("control transport needs a constant coupling matrix");
    };
    let n = qt.size();
    if n != u.n_comp {
        return Err(Error::DimensionMismatch(format!(
            "{n}x{n} coupling for a {}-component control",
            u.n_comp
        )));
    }
    Ok((0..n).map(|i| u.scaled(c[i * n + n - 1])).collect())
}

/// True when `QᵗBU` is again a last-component control, i.e. column `n` of
/// `Qᵗ` is a multiple of `e_n`.
pub fn transport_is_last_component(qt: &CouplingMatrix) -> Option<f64> {
    let c = qt.constants()?;
    let n = qt.size();
    ((0..n - 1).all(|i| c[i * n + n - 1] == 0.0)).then(|| c[n * n - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_interval_mesh, mask_from_boxes, ObsBox};
    use crate::spectral::laplace_eigenpair;
    use std::f64::consts::PI;

    fn desk_1d(nu: f64) -> (Mesh, SubdomainMask, Vec<f64>, TimeGrid) {
        let mesh = build_interval_mesh(0.0, 1.0, 30).unwrap();
        let mask = mask_from_boxes(&mesh, &[ObsBox::interval(0.3, 0.7)]).unwrap();
        let (_, phi) = laplace_eigenpair(&mesh, &[1], nu).unwrap();
        (mesh, mask, phi, TimeGrid::new(0.25, 25).unwrap())
    }

    #[test]
    fn zero_datum_gives_zero_control() {
        let (mesh, mask, _, g) = desk_1d(1.0);
        let (u, rep) = solve_null_control(&mesh, &CouplingMatrix::zeros(1), 1.0, &[vec![0.0; 31]], g, &mask, 1e-6).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
        assert_eq!(rep.terminal_residual, 0.0);
    }

    #[test]
    fn scalar_desk_problem_and_epsilon_ladder() {
        let (mesh, mask, phi, g) = desk_1d(1.0);
        let q = CouplingMatrix::zeros(1);
        let mut last = f64::INFINITY;
        for eps in [1e-2, 1e-4, 1e-6] {
            let (u, rep) = solve_null_control(&mesh, &q, 1.0, &[phi.clone()], g, &mask, eps).unwrap();
            assert!(rep.terminal_residual < last, "{eps}: {}", rep.terminal_residual);
            last = rep.terminal_residual;
            for m in 0..g.n_steps() {
                for i in 0..31 {
                    if !mask.node_flags[i] {
                        assert_eq!(u.step(m)[i], 0.0);
                    }
                }
            }
        }
        assert!(last < 0.02, "{last}");
    }

    #[test]
    fn dense_horizons_match_cg() {
        let (mesh, mask, phi, g) = desk_1d(0.5);
        let q = CouplingMatrix::zeros(1);
        let p = ControlProblem::new(&mesh, &q, 0.5, g, &mask).unwrap();
        let all = p.solve_all_horizons(&phi, 1e-4).unwrap();
        let (u, _, rep) = p.solve_cg(&phi, 1e-4).unwrap();
        let (ud, repd) = (&all.last().unwrap().control, &all.last().unwrap().report);
        assert!((rep.terminal_residual - repd.terminal_residual).abs() < 1e-6 * (1.0 + rep.terminal_residual));
        let diff: f64 = u.values().iter().zip(ud.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = u.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(diff < 1e-5 * scale, "{diff} vs {scale}");
        // shorter horizons cost more
        let short = p.grid().prefix(5).unwrap();
        let ps = ControlProblem::new(&mesh, &q, 0.5, short, &mask).unwrap();
        let (_, _, rs) = ps.solve_cg(&phi, 1e-4).unwrap();
        assert!((rs.terminal_residual - all[4].report.terminal_residual).abs() < 1e-6);
        assert!(all[4].report.control_cost > repd.control_cost);
    }

    #[test]
    fn variable_pair_controls_through_coupling() {
        let mesh = build_interval_mesh(0.0, PI, 60).unwrap();
        let mask = mask_from_boxes(&mesh, &[ObsBox::interval(1.0, 2.2)]).unwrap();
        let g = TimeGrid::new(0.3, 30).unwrap();
        let ones = vec![1.0; mesh.node_count()];
        let basis = crate::spectral::ModeBasis::riesz(&mesh, &ones, 1).unwrap();
        let d1 = basis.dual(1);
        let d2 = basis.dual(2);
        let psi0 = vec![
            d1[0].iter().zip(&d2[0]).map(|(a, b)| a + b).collect::<Vec<_>>(),
            d1[1].iter().zip(&d2[1]).map(|(a, b)| a + b).collect::<Vec<_>>(),
        ];
        let (_, rep) = solve_null_control_2x2_variable(&mesh, &ones, &psi0, g, &mask, 1e-6).unwrap();
        assert!(rep.terminal_residual < 0.05, "{}", rep.terminal_residual);
        assert!(rep.hypothesis_flags.is_empty());
        let zeros = vec![0.0; mesh.node_count()];
        let (_, rep0) = solve_null_control_2x2_variable(&mesh, &zeros, &psi0, g, &mask, 1e-6).unwrap();
        assert!(!rep0.hypothesis_flags.is_empty());
        assert!(rep0.incomplete);
    }

    #[test]
    fn transport_matches_matrix_product() {
        let g = TimeGrid::new(0.1, 4).unwrap();
        let mut u = ControlFunction::zeros(g, 2, vec![false, true, true, false]);
        for m in 0..4 {
            u.set_step(m, &[9.0, m as f64, 1.0 + m as f64, 9.0]);
        }
        let qt = CouplingMatrix::constant(2, &[1.5, -2.0, 0.0, 3.0]).unwrap();
        let out = transport_control(&u, &qt).unwrap();
        for m in 0..4 {
            for i in 0..4 {
                // (QᵗBU)_c = Σ_j Qᵗ[c][j] (BU)_j with BU = (0, u)
                let bu = [0.0, u.step(m)[i]];
                for c in 0..2 {
                    let direct = qt.value(c, 0, 0) * bu[0] + qt.value(c, 1, 0) * bu[1];
                    assert_eq!(out[c].step(m)[i], direct);
                }
            }
        }
        let id = CouplingMatrix::constant(2, &[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(transport_control(&u, &id).unwrap()[1], u);
        assert!(transport_control(&u, &CouplingMatrix::zeros(2)).unwrap().iter().all(|c| c.values().iter().all(|&v| v == 0.0)));
        assert_eq!(transport_is_last_component(&id), Some(1.0));
        assert_eq!(transport_is_last_component(&qt), None);
        assert!(transport_control(&u, &variable_adjoint_coupling(&[1.0; 4])).is_err());
    }
}
