//! The memory operator `(Kv)(t) = ∫₀ᵗ σ(s) v(t−s) ds`, its adjoint for the
//! `H¹`-in-time pairing, and the second-kind Volterra solver whose output
//! `θ` satisfies `K*θ = η` with `θ(τ) = 0`.

use crate::error::{invalid, Error, Result};
use crate::fem::CsrMatrix;
use crate::forward::{trapezoid_weights, SigmaProfile, TimeGrid};

/// Smallest `|σ(0)|` accepted by the second-kind solver.
pub const SIGMA0_MIN: f64 = 1e-12;

/// Scalar nodal field sampled on a time grid over `[0, τ]`, with an optional
/// time derivative stored on the same samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesField {
    grid: TimeGrid,
    n_nodes: usize,
    values: Vec<f64>,
    deriv: Option<Vec<f64>>,
}

impl TimeSeriesField {
    pub fn zeros(grid: TimeGrid, n_nodes: usize) -> Self {
        TimeSeriesField {
            grid,
            n_nodes,
            values: vec![0.0; grid.n_times() * n_nodes],
            deriv: None,
        }
    }

    /// Builds from time-major values (`n_times * n_nodes`).
    pub fn from_values(grid: TimeGrid, n_nodes: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_times() * n_nodes {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} times x {n_nodes} nodes",
                values.len(),
                grid.n_times()
            )));
        }
        Ok(TimeSeriesField {
            grid,
            n_nodes,
            values,
            deriv: None,
        })
    }

    /// Samples `f(t, node)`.
    pub fn from_fn(grid: TimeGrid, n_nodes: usize, f: impl Fn(f64, usize) -> f64) -> Self {
        let values = (0..grid.n_times())
            .flat_map(|m| {
                let t = grid.time(m);
                (0..n_nodes).map(move |i| (t, i))
            })
            .map(|(t, i)| f(t, i))
            .collect();
        TimeSeriesField {
            grid,
            n_nodes,
            values,
            deriv: None,
        }
    }

    /// Attaches an explicit time derivative (same layout as the values).
    pub fn with_derivative(mut self, deriv: Vec<f64>) -> Result<Self> {
        if deriv.len() != self.values.len() {
            return Err(Error::DimensionMismatch("derivative length differs from values".into()));
        }
        self.deriv = Some(deriv);
        Ok(self)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn tau(&self) -> f64 {
        self.grid.t_final()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_times(&self) -> usize {
        self.grid.n_times()
    }

    pub fn at(&self, m: usize) -> &[f64] {
        &self.values[m * self.n_nodes..(m + 1) * self.n_nodes]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn has_derivative(&self) -> bool {
        self.deriv.is_some()
    }

    /// Stored derivative, or second-order finite differences when none is stored.
    pub fn derivative(&self) -> Vec<f64> {
        if let Some(d) = &self.deriv {
            return d.clone();
        }
        let (nt, nn, dt) = (self.n_times(), self.n_nodes, self.grid.dt());
        let mut d = vec![0.0; self.values.len()];
        if nt < 2 {
            return d;
        }
        let v = |m: usize, i: usize| self.values[m * nn + i];
        for m in 0..nt {
            for i in 0..nn {
                d[m * nn + i] = if nt == 2 {
                    (v(1, i) - v(0, i)) / dt
                } else if m == 0 {
                    (-3.0 * v(0, i) + 4.0 * v(1, i) - v(2, i)) / (2.0 * dt)
                } else if m == nt - 1 {
                    (3.0 * v(m, i) - 4.0 * v(m - 1, i) + v(m - 2, i)) / (2.0 * dt)
                } else {
                    (v(m + 1, i) - v(m - 1, i)) / (2.0 * dt)
                };
            }
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

fn check_sigma(sigma: &SigmaProfile, grid: &TimeGrid) -> Result<()> {
    if (sigma.dt() - grid.dt()).abs() > 1e-12 * grid.dt() || sigma.n_steps() < grid.n_steps() {
        return Err(Error::DimensionMismatch(format!(
            "sigma profile (dt {}, {} steps) does not cover the field grid (dt {}, {} steps)",
            sigma.dt(),
            sigma.n_steps(),
            grid.dt(),
            grid.n_steps()
        )));
    }
    Ok(())
}

/// Trapezoidal `Kv`; the result also carries `(Kv)' = σ(0)v + ∫₀ᵗ σ'(t−r)v(r)dr`.
pub fn apply_k(v: &TimeSeriesField, sigma: &SigmaProfile) -> Result<TimeSeriesField> {
    check_sigma(sigma, &v.grid)?;
    let (nt, nn, dt) = (v.n_times(), v.n_nodes, v.grid.dt());
    let ds = sigma.derivative();
    let mut out = vec![0.0; nt * nn];
    let mut der = vec![0.0; nt * nn];
    for m in 0..nt {
        let w = trapezoid_weights(m, dt);
        let o = &mut out[m * nn..(m + 1) * nn];
        let d = &mut der[m * nn..(m + 1) * nn];
        for (j, wj) in w.iter().enumerate() {
            // r = t_m − t_j carries σ(t_j) in the value and σ'(t_j) in the derivative
            let vr = v.at(m - j);
            let (a, b) = (wj * sigma.at(j), wj * ds[j]);
            for i in 0..nn {
                o[i] += a * vr[i];
                d[i] += b * vr[i];
            }
        }
        let vm = v.at(m);
        for i in 0..nn {
            d[i] += sigma.sigma0() * vm[i];
        }
    }
    TimeSeriesField::from_values(v.grid, nn, out)?.with_derivative(der)
}

/// `(K*θ)(t) = σ(0)θ'(t) + ∫ₜ^τ (σ(s−t)θ(s) + σ'(s−t)θ'(s)) ds`.
pub fn apply_kstar(theta: &TimeSeriesField, sigma: &SigmaProfile) -> Result<TimeSeriesField> {
    check_sigma(sigma, &theta.grid)?;
    let last = theta.at(theta.n_times() - 1);
    let scale = theta.max_abs().max(1.0);
    if last.iter().any(|v| v.abs() > 1e-9 * scale) {
        return invalid("the adjoint memory operator requires θ(τ) = 0");
    }
    let (nt, nn, dt) = (theta.n_times(), theta.n_nodes, theta.grid.dt());
    let d = theta.derivative();
    let ds = sigma.derivative();
    let mut out = vec![0.0; nt * nn];
    for m in 0..nt {
        let w = trapezoid_weights(nt - 1 - m, dt);
        let o = &mut out[m * nn..(m + 1) * nn];
        for i in 0..nn {
            o[i] = sigma.sigma0() * d[m * nn + i];
        }
        for (r, wr) in w.iter().enumerate() {
            let j = m + r;
            let (a, b) = (wr * sigma.at(r), wr * ds[r]);
            let th = theta.at(j);
            let dj = &d[j * nn..(j + 1) * nn];
            for i in 0..nn {
                o[i] += a * th[i] + b * dj[i];
            }
        }
    }
    TimeSeriesField::from_values(theta.grid, nn, out)
}

/// Backward marching for `σ(0)θ' + ∫ₜ^τ (σ(s−t)θ(s) + σ'(s−t)θ'(s)) ds = η`,
/// `θ(τ) = 0`. The derivative is the unknown per step; `θ` follows by the
/// trapezoid rule and the memory integral is trapezoidal, so the scheme is
/// second order for smooth data.
pub fn solve_volterra(eta: &TimeSeriesField, sigma: &SigmaProfile) -> Result<TimeSeriesField> {
    check_sigma(sigma, &eta.grid)?;
    let s0 = sigma.sigma0();
    if s0.abs() < SIGMA0_MIN {
        return Err(Error::FirstKindVolterra(s0.abs()));
    }
    let (nt, nn, dt) = (eta.n_times(), eta.n_nodes, eta.grid.dt());
    let n = nt - 1;
    let ds = sigma.derivative();
    let mut th = vec![0.0; nt * nn];
    let mut d = vec![0.0; nt * nn];
    for i in 0..nn {
        d[n * nn + i] = eta.at(n)[i] / s0;
    }
    let coef = s0 + 0.5 * dt * ds[0] - 0.25 * dt * dt * s0;
    if coef.abs() < SIGMA0_MIN {
        return Err(Error::FirstKindVolterra(coef.abs()));
    }
    for m in (0..n).rev() {
        // memory over j > m with trapezoid weights on [t_m, τ]
        let w = trapezoid_weights(n - m, dt);
        let mut rest = vec![0.0; nn];
        for (r, wr) in w.iter().enumerate().skip(1) {
            let j = m + r;
            let (a, b) = (wr * sigma.at(r), wr * ds[r]);
            for i in 0..nn {
                rest[i] += a * th[j * nn + i] + b * d[j * nn + i];
            }
        }
        let half = 0.5 * dt;
        for i in 0..nn {
            let carried = th[(m + 1) * nn + i] - half * d[(m + 1) * nn + i];
            let r = rest[i] + half * s0 * carried;
            let dm = (eta.at(m)[i] - r) / coef;
            d[m * nn + i] = dm;
            th[m * nn + i] = carried - half * dm;
        }
    }
    if th.iter().chain(&d).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: 0 });
    }
    TimeSeriesField::from_values(eta.grid, nn, th)?.with_derivative(d)
}

/// Step-indexed scheme paired with backward Euler states. Sample `m` of `eta`
/// (for `m < n`) drives step `m + 1`; the final sample is ignored. The result
/// `θ⁰..θⁿ` (with `θⁿ = 0`) satisfies, for `i = 1..=n`,
/// `η_{i−1} = dt Σ_{m≥i} σ_{m−i+1} θ^m + σ₁ Dθ^i + Σ_{m>i} (σ_{m−i+1} − σ_{m−i}) Dθ^m`
/// with `Dθ^m = (θ^m − θ^{m−1})/dt`. Against `Y^m = dt Σ_{i≤m} σ_{m−i+1} w^i`
/// this makes [`step_h1_pairing`] equal `dt Σ_i (w^i, η_{i−1})` exactly.
pub fn solve_volterra_steps(eta: &TimeSeriesField, sigma: &SigmaProfile) -> Result<TimeSeriesField> {
    check_sigma(sigma, &eta.grid)?;
    let (nt, nn, dt) = (eta.n_times(), eta.n_nodes, eta.grid.dt());
    let n = nt - 1;
    let mut th = vec![0.0; nt * nn];
    if n == 0 {
        return TimeSeriesField::from_values(eta.grid, nn, th);
    }
    let s1 = sigma.at(1);
    if s1.abs() < SIGMA0_MIN {
        return Err(Error::FirstKindVolterra(s1.abs()));
    }
    // Dθ^m, filled from the top down
    let mut d = vec![0.0; nt * nn];
    for i in (1..=n).rev() {
        let mut rest = vec![0.0; nn];
        for m in i..=n {
            let a = dt * sigma.at(m - i + 1);
            for r in 0..nn {
                rest[r] += a * th[m * nn + r];
            }
        }
        for m in i + 1..=n {
            let b = sigma.at(m - i + 1) - sigma.at(m - i);
            for r in 0..nn {
                rest[r] += b * d[m * nn + r];
            }
        }
        let e = eta.at(i - 1);
        for r in 0..nn {
            let dm = (e[r] - rest[r]) / s1;
            d[i * nn + r] = dm;
            th[(i - 1) * nn + r] = th[i * nn + r] - dt * dm;
        }
    }
    if th.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: 0 });
    }
    TimeSeriesField::from_values(eta.grid, nn, th)
}

/// `dt Σ_{m=1}^{n} [(a^m, b^m) + (Da^m, Db^m)]` with backward differences,
/// the pairing matched to [`solve_volterra_steps`].
pub fn step_h1_pairing(a: &TimeSeriesField, b: &TimeSeriesField, mass: Option<&CsrMatrix>) -> Result<f64> {
    check_pair(a, b)?;
    let dt = a.grid.dt();
    let diff = |f: &TimeSeriesField, m: usize| -> Vec<f64> {
        f.at(m).iter().zip(f.at(m - 1)).map(|(x, y)| (x - y) / dt).collect()
    };
    let mut s = 0.0;
    for m in 1..a.n_times() {
        let (da, db) = (diff(a, m), diff(b, m));
        s += dt * (weighted(mass, a.at(m), b.at(m)) + weighted(mass, &da, &db));
    }
    Ok(s)
}

fn weighted(mass: Option<&CsrMatrix>, a: &[f64], b: &[f64]) -> f64 {
    match mass {
        Some(m) => m.inner(a, b),
        None => a.iter().zip(b).map(|(x, y)| x * y).sum(),
    }
}

/// `∫ (a, b)` in time by the trapezoid rule; the spatial inner product is
/// `mass` (plain nodal sum when `None`).
pub fn l2_pairing(a: &TimeSeriesField, b: &TimeSeriesField, mass: Option<&CsrMatrix>) -> Result<f64> {
    check_pair(a, b)?;
    let w = a.grid.trapezoid_weights();
    Ok((0..a.n_times()).map(|m| w[m] * weighted(mass, a.at(m), b.at(m))).sum())
}

/// `H¹(0,τ)` pairing: `∫ (a, b) + ∫ (a', b')`.
pub fn h1_pairing(a: &TimeSeriesField, b: &TimeSeriesField, mass: Option<&CsrMatrix>) -> Result<f64> {
    check_pair(a, b)?;
    let w = a.grid.trapezoid_weights();
    let (da, db) = (a.derivative(), b.derivative());
    let nn = a.n_nodes;
    let mut s = 0.0;
    for m in 0..a.n_times() {
        let r = m * nn..(m + 1) * nn;
        s += w[m] * (weighted(mass, a.at(m), b.at(m)) + weighted(mass, &da[r.clone()], &db[r]));
    }
    Ok(s)
}

fn check_pair(a: &TimeSeriesField, b: &TimeSeriesField) -> Result<()> {
    if !a.grid.same_as(&b.grid) || a.n_nodes != b.n_nodes {
        return Err(Error::DimensionMismatch("time series fields live on different grids".into()));
    }
    Ok(())
}

/// Empirical stability constant `‖θ‖_{H¹}/‖η‖_{L²}`; 0 when `η` vanishes.
pub fn stability_constant(theta: &TimeSeriesField, eta: &TimeSeriesField, mass: Option<&CsrMatrix>) -> Result<f64> {
    let num = h1_pairing(theta, theta, mass)?.max(0.0).sqrt();
    let den = l2_pairing(eta, eta, mass)?.max(0.0).sqrt();
    Ok(if den > 0.0 { num / den } else { 0.0 })
}
