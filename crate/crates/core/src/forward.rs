//! Implicit-Euler time stepping of the coupled heat system
//! `∂t Y − ν ΔY + Q Y = σ(t) F`, its homogeneous kernel, the backward
//! (adjoint) system and the Duhamel convolution.
//!
//! Multi-component states are stored component-major: entry `c * nodes + i`.

use crate::error::{invalid, Error, Result};
use crate::fem::{self, BandedLu, CsrMatrix};
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_final: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize) -> Result<Self> {
        if !(t_final > 0.0) || !t_final.is_finite() {
            return invalid(format!("final time must be positive, got {t_final}"));
        }
        if n_steps == 0 {
            return invalid("time grid needs at least one step");
        }
        Ok(TimeGrid { t_final, n_steps })
    }

    /// Grid with step `dt` and `n_steps` steps.
    pub fn from_step(dt: f64, n_steps: usize) -> Result<Self> {
        TimeGrid::new(dt * n_steps as f64, n_steps)
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_times(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    pub fn time(&self, m: usize) -> f64 {
        if m == self.n_steps {
            self.t_final
        } else {
            m as f64 * self.dt()
        }
    }

    /// Prefix grid ending at step `m` (same dt).
    pub fn prefix(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.n_steps {
            return invalid(format!("prefix length {m} outside 1..={}", self.n_steps));
        }
        Ok(TimeGrid {
            t_final: self.time(m),
            n_steps: m,
        })
    }

    /// Index of the grid time closest to `t`, provided it is within 1e-9 dt.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let r = t / self.dt();
        let m = r.round();
        if (r - m).abs() > 1e-9 || m < 0.0 || m as usize > self.n_steps {
            return invalid(format!("time {t} is not on the grid (dt = {})", self.dt()));
        }
        Ok(m as usize)
    }

    /// Composite trapezoid weights (including dt).
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        trapezoid_weights(self.n_steps, self.dt())
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.n_steps == other.n_steps
            && (self.t_final - other.t_final).abs() <= 1e-12 * self.t_final
    }
}

pub(crate) fn trapezoid_weights(n_steps: usize, dt: f64) -> Vec<f64> {
    let mut w = vec![dt; n_steps + 1];
    w[0] = 0.5 * dt;
    w[n_steps] = 0.5 * dt;
    if n_steps == 0 {
        w[0] = 0.0;
    }
    w
}

/// Sampled time profile with its derivative on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaProfile {
    samples: Vec<f64>,
    derivative: Vec<f64>,
    dt: f64,
}

impl SigmaProfile {
    pub fn from_samples(grid: &TimeGrid, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != grid.n_times() {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for {} grid times",
                samples.len(),
                grid.n_times()
            )));
        }
        let derivative = finite_difference(&samples, grid.dt());
        Ok(SigmaProfile {
            samples,
            derivative,
            dt: grid.dt(),
        })
    }

    pub fn from_fn(grid: &TimeGrid, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Self {
        let samples = (0..grid.n_times()).map(|m| f(grid.time(m))).collect();
        let derivative = (0..grid.n_times()).map(|m| df(grid.time(m))).collect();
        SigmaProfile {
            samples,
            derivative,
            dt: grid.dt(),
        }
    }

    pub fn constant(grid: &TimeGrid, c: f64) -> Self {
        SigmaProfile::from_fn(grid, |_| c, |_| 0.0)
    }

    /// `1 + ½cos(4πt/(T−t0))` before `T − t0`, then `3/2`.
    pub fn oscillating(grid: &TimeGrid, t0: f64) -> Result<Self> {
        let t = grid.t_final();
        if !(t0 >= 0.0 && t0 < t) {
            return invalid(format!("plateau length t0 = {t0} must lie in [0, T)"));
        }
        let period = t - t0;
        let w = 4.0 * std::f64::consts::PI / period;
        Ok(SigmaProfile::from_fn(
            grid,
            |s| if s < period { 1.0 + 0.5 * (w * s).cos() } else { 1.5 },
            |s| if s < period { -0.5 * w * (w * s).sin() } else { 0.0 },
        ))
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn derivative(&self) -> &[f64] {
        &self.derivative
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn sigma0(&self) -> f64 {
        self.samples[0]
    }

    pub fn sigma_t(&self) -> f64 {
        *self.samples.last().unwrap()
    }

    pub fn at(&self, m: usize) -> f64 {
        self.samples[m]
    }

    /// Linear interpolation, clamped to the sampled range.
    pub fn value(&self, t: f64) -> f64 {
        interpolate(&self.samples, self.dt, t)
    }

    pub fn derivative_value(&self, t: f64) -> f64 {
        interpolate(&self.derivative, self.dt, t)
    }

    /// Fails when σ vanishes at the final sample.
    pub fn require_terminal(&self) -> Result<f64> {
        let s = self.sigma_t();
        if s.abs() < 1e-14 {
            return Err(Error::SigmaTerminalZero);
        }
        Ok(s)
    }

    pub fn matches(&self, grid: &TimeGrid) -> bool {
        self.samples.len() == grid.n_times() && (self.dt - grid.dt()).abs() <= 1e-12 * self.dt
    }

    /// Profile restricted to the first `m` steps.
    pub fn prefix(&self, m: usize) -> SigmaProfile {
        SigmaProfile {
            samples: self.samples[..=m].to_vec(),
            derivative: self.derivative[..=m].to_vec(),
            dt: self.dt,
        }
    }
}

fn finite_difference(v: &[f64], dt: f64) -> Vec<f64> {
    let n = v.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|m| {
            if m == 0 {
                (v[1] - v[0]) / dt
            } else if m == n - 1 {
                (v[n - 1] - v[n - 2]) / dt
            } else {
                (v[m + 1] - v[m - 1]) / (2.0 * dt)
            }
        })
        .collect()
}

pub(crate) fn interpolate(v: &[f64], dt: f64, t: f64) -> f64 {
    let r = (t / dt).max(0.0);
    let i = r.floor() as usize;
    if i + 1 >= v.len() {
        return *v.last().unwrap();
    }
    let f = r - i as f64;
    v[i] * (1.0 - f) + v[i + 1] * f
}

#[derive(Debug, Clone, PartialEq)]
pub enum CouplingEntry {
    Constant(f64),
    Field(Vec<f64>),
}

impl CouplingEntry {
    fn at(&self, node: usize) -> f64 {
        match self {
            CouplingEntry::Constant(c) => *c,
            CouplingEntry::Field(v) => v[node],
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            CouplingEntry::Constant(c) => *c == 0.0,
            CouplingEntry::Field(v) => v.iter().all(|&x| x == 0.0),
        }
    }
}

/// Square coupling matrix whose entries are constants or nodal fields.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    n: usize,
    entries: Vec<CouplingEntry>,
}

impl CouplingMatrix {
    pub fn zeros(n: usize) -> Self {
        CouplingMatrix {
            n,
            entries: vec![CouplingEntry::Constant(0.0); n * n],
        }
    }

    /// Row-major constant matrix.
    pub fn constant(n: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {n}x{n} coupling",
                values.len()
            )));
        }
        Ok(CouplingMatrix {
            n,
            entries: values.iter().map(|&v| CouplingEntry::Constant(v)).collect(),
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> &CouplingEntry {
        &self.entries[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, e: CouplingEntry) {
        self.entries[i * self.n + j] = e;
    }

    pub fn value(&self, i: usize, j: usize, node: usize) -> f64 {
        self.entry(i, j).at(node)
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut t = CouplingMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                t.set(j, i, self.entry(i, j).clone());
            }
        }
        t
    }

    /// Row-major constants, or `None` if any entry is a field.
    pub fn constants(&self) -> Option<Vec<f64>> {
        self.entries
            .iter()
            .map(|e| match e {
                CouplingEntry::Constant(c) => Some(*c),
                CouplingEntry::Field(_) => None,
            })
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(CouplingEntry::is_zero)
    }

    fn check_mesh(&self, nodes: usize) -> Result<()> {
        for e in &self.entries {
            if let CouplingEntry::Field(v) = e {
                if v.len() != nodes {
                    return Err(Error::DimensionMismatch(format!(
                        "coupling field has {} values for {nodes} nodes",
                        v.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Nodal values of an `n`-component field at every grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSeries {
    n_comp: usize,
    n_nodes: usize,
    grid: TimeGrid,
    data: Vec<f64>,
}

impl FieldSeries {
    pub fn zeros(n_comp: usize, n_nodes: usize, grid: TimeGrid) -> Self {
        FieldSeries {
            n_comp,
            n_nodes,
            grid,
            data: vec![0.0; grid.n_times() * n_comp * n_nodes],
        }
    }

    pub fn n_comp(&self) -> usize {
        self.n_comp
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_times(&self) -> usize {
        self.grid.n_times()
    }

    /// All components at time index `m` (component-major).
    pub fn state(&self, m: usize) -> &[f64] {
        let s = self.n_comp * self.n_nodes;
        &self.data[m * s..(m + 1) * s]
    }

    pub fn state_mut(&mut self, m: usize) -> &mut [f64] {
        let s = self.n_comp * self.n_nodes;
        &mut self.data[m * s..(m + 1) * s]
    }

    pub fn comp(&self, m: usize, c: usize) -> &[f64] {
        &self.state(m)[c * self.n_nodes..(c + 1) * self.n_nodes]
    }

    pub fn comp_mut(&mut self, m: usize, c: usize) -> &mut [f64] {
        let n = self.n_nodes;
        &mut self.state_mut(m)[c * n..(c + 1) * n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `L²(0,T;L²)` norm with trapezoid in time and the given mass matrix in space.
    pub fn l2_norm(&self, mass: &CsrMatrix) -> f64 {
        let w = self.grid.trapezoid_weights();
        let mut s = 0.0;
        for (m, wm) in w.iter().enumerate() {
            for c in 0..self.n_comp {
                let v = self.comp(m, c);
                s += wm * mass.inner(v, v);
            }
        }
        s.sqrt()
    }

    pub fn difference(&self, other: &FieldSeries) -> Result<FieldSeries> {
        if self.data.len() != other.data.len() || !self.grid.same_as(&other.grid) {
            return Err(Error::DimensionMismatch("field series shapes differ".into()));
        }
        let mut d = self.clone();
        d.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a -= b);
        Ok(d)
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }
}

/// Factorized implicit-Euler operator `M + dt ν S + dt M_Q` for the block
/// system, stored node-interleaved so the band stays narrow.
#[derive(Debug, Clone)]
pub struct ParabolicSolver {
    n_comp: usize,
    n_nodes: usize,
    dt: f64,
    mass: CsrMatrix,
    fixed: Vec<bool>,
    lu: BandedLu,
}

impl ParabolicSolver {
    pub fn new(mesh: &Mesh, q: &CouplingMatrix, nu: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return invalid(format!("time step must be positive, got {dt}"));
        }
        let nn = mesh.node_count();
        q.check_mesh(nn)?;
        let n = q.size();
        if n == 0 {
            return invalid("coupling must have at least one component");
        }
        let mass = fem::assemble_mass(mesh);
        let stiff = fem::assemble_stiffness(mesh, nu)?;
        let base = mass.combine(1.0, &stiff, dt);
        let mut t = Vec::new();
        for c in 0..n {
            for (i, j, v) in base.triplets() {
                t.push((i * n + c, j * n + c, v));
            }
            for d in 0..n {
                let block = match q.entry(c, d) {
                    CouplingEntry::Constant(0.0) => continue,
                    CouplingEntry::Constant(v) => mass.scaled(*v),
                    CouplingEntry::Field(f) => fem::assemble_weighted_mass(mesh, f)?,
                };
                for (i, j, v) in block.triplets() {
                    t.push((i * n + c, j * n + d, dt * v));
                }
            }
        }
        let full = CsrMatrix::from_triplets(nn * n, nn * n, &t);
        let fixed: Vec<bool> = (0..nn * n).map(|k| mesh.is_boundary(k / n)).collect();
        let lu = BandedLu::factor(&fem::apply_dirichlet(&full, &fixed))?;
        Ok(ParabolicSolver {
            n_comp: n,
            n_nodes: nn,
            dt,
            mass,
            fixed: mesh.boundary_flags().to_vec(),
            lu,
        })
    }

    pub fn n_comp(&self) -> usize {
        self.n_comp
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn boundary(&self) -> &[bool] {
        &self.fixed
    }

    /// Block-diagonal mass applied to a component-major state.
    pub fn apply_mass(&self, x: &[f64]) -> Vec<f64> {
        let nn = self.n_nodes;
        let mut y = vec![0.0; x.len()];
        for c in 0..self.n_comp {
            self.mass
                .matvec_into(&x[c * nn..(c + 1) * nn], &mut y[c * nn..(c + 1) * nn]);
        }
        y
    }

    /// Solves `A x = rhs` (or `Aᵀ x = rhs`) with Dirichlet rows zeroed; `rhs`
    /// is component-major and overwritten with the solution.
    pub fn solve(&self, rhs: &mut [f64], transposed: bool) {
        let (n, nn) = (self.n_comp, self.n_nodes);
        let mut v = vec![0.0; n * nn];
        for c in 0..n {
            for i in 0..nn {
                v[i * n + c] = if self.fixed[i] { 0.0 } else { rhs[c * nn + i] };
            }
        }
        if transposed {
            self.lu.solve_transpose_in_place(&mut v);
        } else {
            self.lu.solve_in_place(&mut v);
        }
        for c in 0..n {
            for i in 0..nn {
                rhs[c * nn + i] = v[i * n + c];
            }
        }
    }

    /// One step: `A x = M prev + load`.
    pub fn step(&self, prev: &[f64], load: Option<&[f64]>, transposed: bool) -> Vec<f64> {
        let mut rhs = self.apply_mass(prev);
        if let Some(l) = load {
            rhs.iter_mut().zip(l).for_each(|(r, v)| *r += v);
        }
        self.solve(&mut rhs, transposed);
        rhs
    }

    /// Marches forward from `initial`; `load(m)` is added when computing step `m`.
    pub fn march_forward<L>(&self, initial: &[f64], grid: TimeGrid, mut load: L) -> Result<FieldSeries>
    where
        L: FnMut(usize) -> Option<Vec<f64>>,
    {
        self.check_grid(&grid)?;
        let mut out = FieldSeries::zeros(self.n_comp, self.n_nodes, grid);
        out.state_mut(0).copy_from_slice(initial);
        for m in 1..grid.n_times() {
            let l = load(m);
            let next = self.step(out.state(m - 1), l.as_deref(), false);
            check_finite(&next, m)?;
            out.state_mut(m).copy_from_slice(&next);
        }
        Ok(out)
    }

    /// Marches backward from `terminal` at the last grid time; `load(m)` is
    /// added when computing step `m`. `transposed` selects `Aᵀ`.
    pub fn march_backward<L>(
        &self,
        terminal: &[f64],
        grid: TimeGrid,
        transposed: bool,
        mut load: L,
    ) -> Result<FieldSeries>
    where
        L: FnMut(usize) -> Option<Vec<f64>>,
    {
        self.check_grid(&grid)?;
        let mut out = FieldSeries::zeros(self.n_comp, self.n_nodes, grid);
        let last = grid.n_steps();
        out.state_mut(last).copy_from_slice(terminal);
        for m in (0..last).rev() {
            let l = load(m);
            let next = self.step(out.state(m + 1), l.as_deref(), transposed);
            check_finite(&next, m)?;
            out.state_mut(m).copy_from_slice(&next);
        }
        Ok(out)
    }

    fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if (grid.dt() - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::DimensionMismatch(format!(
                "grid step {} differs from factorized step {}",
                grid.dt(),
                self.dt
            )));
        }
        Ok(())
    }
}

fn check_finite(v: &[f64], step: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { step })
    }
}

/// Flattens `n` nodal fields into one component-major vector.
pub fn stack_fields(fields: &[Vec<f64>], n_nodes: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(fields.len() * n_nodes);
    for f in fields {
        if f.len() != n_nodes {
            return Err(Error::DimensionMismatch(format!(
                "field has {} values for {n_nodes} nodes",
                f.len()
            )));
        }
        out.extend_from_slice(f);
    }
    Ok(out)
}

fn check_components(q: &CouplingMatrix, fields: &[Vec<f64>]) -> Result<()> {
    if fields.len() != q.size() {
        return Err(Error::DimensionMismatch(format!(
            "{} fields for a {}-component system",
            fields.len(),
            q.size()
        )));
    }
    Ok(())
}

pub fn solve_forward(
    mesh: &Mesh,
    q: &CouplingMatrix,
    nu: f64,
    sigma: &SigmaProfile,
    f: &[Vec<f64>],
    grid: TimeGrid,
) -> Result<FieldSeries> {
    let solver = ParabolicSolver::new(mesh, q, nu, grid.dt())?;
    forward_with(&solver, sigma, f, grid)
}

/// Forward solve reusing a factorized operator.
pub fn forward_with(
    solver: &ParabolicSolver,
    sigma: &SigmaProfile,
    f: &[Vec<f64>],
    grid: TimeGrid,
) -> Result<FieldSeries> {
    if f.len() != solver.n_comp() {
        return Err(Error::DimensionMismatch(format!(
            "{} source fields for a {}-component system",
            f.len(),
            solver.n_comp()
        )));
    }
    if !sigma.matches(&grid) {
        return Err(Error::DimensionMismatch("sigma profile does not match the time grid".into()));
    }
    let mf = solver.apply_mass(&stack_fields(f, solver.n_nodes())?);
    let dt = grid.dt();
    let zero = vec![0.0; mf.len()];
    solver.march_forward(&zero, grid, |m| {
        let s = dt * sigma.at(m);
        Some(mf.iter().map(|v| s * v).collect())
    })
}

/// Homogeneous solution with initial datum `sigma0 * F`.
pub fn solve_duhamel_kernel(
    mesh: &Mesh,
    q: &CouplingMatrix,
    nu: f64,
    f: &[Vec<f64>],
    sigma0: f64,
    grid: TimeGrid,
) -> Result<FieldSeries> {
    check_components(q, f)?;
    let solver = ParabolicSolver::new(mesh, q, nu, grid.dt())?;
    let mut init = stack_fields(f, mesh.node_count())?;
    init.iter_mut().for_each(|v| *v *= sigma0);
    for c in 0..q.size() {
        fem::zero_fixed(&mut init[c * mesh.node_count()..(c + 1) * mesh.node_count()], mesh.boundary_flags());
    }
    solver.march_forward(&init, grid, |_| None)
}

/// Backward Euler for `−∂tΨ − νΔΨ + QᵗΨ = rhs`, `Ψ(τ) = terminal`, where `qt`
/// is the (already transposed) coupling and `τ` the final grid time.
pub fn solve_backward(
    mesh: &Mesh,
    qt: &CouplingMatrix,
    nu: f64,
    rhs: &FieldSeries,
    terminal: &[Vec<f64>],
    grid: TimeGrid,
) -> Result<FieldSeries> {
    check_components(qt, terminal)?;
    if !rhs.grid().same_as(&grid) || rhs.n_comp() != qt.size() || rhs.n_nodes() != mesh.node_count() {
        return Err(Error::DimensionMismatch("backward right-hand side does not match".into()));
    }
    let solver = ParabolicSolver::new(mesh, qt, nu, grid.dt())?;
    let term = stack_fields(terminal, mesh.node_count())?;
    let dt = grid.dt();
    solver.march_backward(&term, grid, false, |m| {
        let mut l = solver.apply_mass(rhs.state(m));
        l.iter_mut().for_each(|v| *v *= dt);
        Some(l)
    })
}

/// `Y(t) = ∫₀ᵗ σ(s) W(t−s) ds` by the trapezoid rule on the grid.
pub fn duhamel_compose(w: &FieldSeries, sigma: &SigmaProfile) -> Result<FieldSeries> {
    if !sigma.matches(w.grid()) {
        return Err(Error::DimensionMismatch("sigma profile does not match the series grid".into()));
    }
    let dt = w.grid().dt();
    let mut out = FieldSeries::zeros(w.n_comp(), w.n_nodes(), *w.grid());
    let len = w.n_comp() * w.n_nodes();
    for m in 1..w.n_times() {
        let mut acc = vec![0.0; len];
        for j in 0..=m {
            let wt = if j == 0 || j == m { 0.5 * dt } else { dt } * sigma.at(j);
            if wt == 0.0 {
                continue;
            }
            for (a, v) in acc.iter_mut().zip(w.state(m - j)) {
                *a += wt * v;
            }
        }
        out.state_mut(m).copy_from_slice(&acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_interval_mesh;
    use std::f64::consts::PI;

    fn sine(mesh: &Mesh, k: f64) -> Vec<f64> {
        mesh.nodes()
            .iter()
            .map(|p| (2.0 / PI).sqrt() * (k * p[0]).sin())
            .collect()
    }

    #[test]
    fn grid_basics() {
        let g = TimeGrid::new(0.5, 50).unwrap();
        assert!((g.dt() * 50.0 - 0.5).abs() < 1e-14);
        assert_eq!(g.index_of(0.25).unwrap(), 25);
        assert!(g.index_of(0.255).is_err());
        assert!(TimeGrid::new(0.0, 3).is_err());
        let w = g.trapezoid_weights();
        assert!((w.iter().sum::<f64>() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn oscillating_profile_endpoints() {
        let g = TimeGrid::new(0.5, 50).unwrap();
        let s = SigmaProfile::oscillating(&g, 0.05).unwrap();
        assert!((s.sigma0() - 1.5).abs() < 1e-14);
        assert!((s.sigma_t() - 1.5).abs() < 1e-14);
        assert!((s.at(10) - (1.0 + 0.5 * (4.0 * PI * 0.1 / 0.45).cos())).abs() < 1e-14);
        let z = SigmaProfile::constant(&g, 0.0);
        assert!(z.require_terminal().is_err());
    }

    #[test]
    fn zero_source_gives_zero_state() {
        let m = build_interval_mesh(0.0, 1.0, 20).unwrap();
        let g = TimeGrid::new(0.1, 10).unwrap();
        let q = CouplingMatrix::constant(2, &[0.0, 1.0, -1.0, 0.5]).unwrap();
        let y = solve_forward(&m, &q, 0.1, &SigmaProfile::constant(&g, 1.0), &[vec![0.0; 21], vec![0.0; 21]], g).unwrap();
        assert_eq!(y.max_abs(), 0.0);
    }

    #[test]
    fn single_mode_matches_scalar_ode() {
        let m = build_interval_mesh(0.0, PI, 200).unwrap();
        let g = TimeGrid::new(1.0, 400).unwrap();
        let phi = sine(&m, 1.0);
        let y = solve_forward(&m, &CouplingMatrix::zeros(1), 1.0, &SigmaProfile::constant(&g, 1.0), &[phi.clone()], g).unwrap();
        for &mi in &[100usize, 400] {
            let t = g.time(mi);
            let err = y.comp(mi, 0).iter().zip(&phi).map(|(a, p)| (a - (1.0 - (-t).exp()) * p).abs()).fold(0.0, f64::max);
            assert!(err < 5e-3, "t = {t}: {err}");
        }
        let w = solve_duhamel_kernel(&m, &CouplingMatrix::zeros(1), 1.0, &[phi.clone()], 1.0, g).unwrap();
        let err = w.comp(400, 0).iter().zip(&phi).map(|(a, p)| (a - (-1.0f64).exp() * p).abs()).fold(0.0, f64::max);
        assert!(err < 5e-3);
        let mass = fem::assemble_mass(&m);
        let norms: Vec<f64> = (0..=400).map(|k| mass.inner(w.comp(k, 0), w.comp(k, 0))).collect();
        assert!(norms.windows(2).all(|p| p[1] <= p[0]));
        let z = solve_duhamel_kernel(&m, &CouplingMatrix::zeros(1), 1.0, &[phi], 0.0, g).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn backward_mode_decay() {
        let m = build_interval_mesh(0.0, PI, 200).unwrap();
        let g = TimeGrid::new(0.5, 200).unwrap();
        let phi = sine(&m, 1.0);
        let rhs = FieldSeries::zeros(1, m.node_count(), g);
        let p = solve_backward(&m, &CouplingMatrix::zeros(1), 1.0, &rhs, &[phi.clone()], g).unwrap();
        let err = p.comp(0, 0).iter().zip(&phi).map(|(a, v)| (a - (-0.5f64).exp() * v).abs()).fold(0.0, f64::max);
        assert!(err < 5e-3);
        let z = solve_backward(&m, &CouplingMatrix::zeros(1), 1.0, &rhs, &[vec![0.0; m.node_count()]], g).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn discrete_duality_is_exact() {
        // (W⁰, MΨ⁰) = (Wᴺ, MΨᴺ) + dt Σ (W^{m+1}, M g^m)
        let m = build_interval_mesh(0.0, 1.0, 30).unwrap();
        let g = TimeGrid::new(0.2, 20).unwrap();
        let nn = m.node_count();
        let q = CouplingMatrix::constant(2, &[0.3, 0.0, 2.0, -0.5]).unwrap();
        let f: Vec<Vec<f64>> = (0..2).map(|c| m.nodes().iter().map(|p| (PI * p[0] * (c + 1) as f64).sin()).collect()).collect();
        let w = solve_duhamel_kernel(&m, &q, 0.1, &f, 1.0, g).unwrap();
        let mut rhs = FieldSeries::zeros(2, nn, g);
        for k in 0..g.n_times() {
            for c in 0..2 {
                for (i, v) in rhs.comp_mut(k, c).iter_mut().enumerate() {
                    *v = ((i * (c + 2) + k) as f64).sin();
                }
            }
        }
        let term: Vec<Vec<f64>> = (0..2).map(|c| m.nodes().iter().map(|p| p[0] * (1.0 - p[0]) * (c as f64 + 1.0)).collect()).collect();
        let psi = solve_backward(&m, &q.transpose(), 0.1, &rhs, &term, g).unwrap();
        let mass = fem::assemble_mass(&m);
        let pair = |a: &[f64], b: &[f64]| (0..2).map(|c| mass.inner(&a[c * nn..(c + 1) * nn], &b[c * nn..(c + 1) * nn])).sum::<f64>();
        let lhs = pair(w.state(0), psi.state(0));
        let mut r = pair(w.state(20), psi.state(20));
        for k in 0..20 {
            r += g.dt() * pair(w.state(k + 1), rhs.state(k));
        }
        assert!((lhs - r).abs() < 1e-12 * lhs.abs().max(1.0), "{lhs} vs {r}");
    }

    #[test]
    fn duhamel_compose_constant_kernel() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let mut w = FieldSeries::zeros(1, 3, g);
        for k in 0..11 {
            w.comp_mut(k, 0).copy_from_slice(&[1.0, 2.0, -1.0]);
        }
        let y = duhamel_compose(&w, &SigmaProfile::constant(&g, 1.0)).unwrap();
        for k in 0..11 {
            let t = g.time(k);
            assert!((y.comp(k, 0)[1] - 2.0 * t).abs() < 1e-13);
        }
        let z = duhamel_compose(&FieldSeries::zeros(1, 3, g), &SigmaProfile::constant(&g, 1.0)).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }
}
