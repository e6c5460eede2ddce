//! Analytic Dirichlet eigenpairs, the biorthogonal families of the 2x2
//! lower-triangular operator on `(0, π)`, and the per-mode ODE coefficients
//! that appear on the left of the reconstruction identities.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::fem::{self, CsrMatrix};
use crate::forward::SigmaProfile;
use crate::mesh::Mesh;

/// Coefficients with magnitude below this violate the non-degeneracy hypothesis.
pub const HYPOTHESIS_TOL: f64 = 1e-10;
/// Coefficients below this (but above [`HYPOTHESIS_TOL`]) trigger a warning.
pub const HYPOTHESIS_WARN: f64 = 1e-6;

/// Eigenvalue of `−νΔ` (Dirichlet) for `modes` (one index in 1D, two in 2D)
/// and the normalized eigenfunction sampled at the mesh nodes.
pub fn laplace_eigenpair(mesh: &Mesh, modes: &[usize], nu: f64) -> Result<(f64, Vec<f64>)> {
    if modes.len() != mesh.dim() || modes.iter().any(|&k| k == 0) {
        return invalid(format!(
            "mode index {modes:?} invalid for a {}D mesh (indices start at 1)",
            mesh.dim()
        ));
    }
    let pi = std::f64::consts::PI;
    let (lo, hi) = (mesh.lower(), mesh.upper());
    let mut lambda = 0.0;
    let mut norm = 1.0;
    for d in 0..mesh.dim() {
        let l = hi[d] - lo[d];
        lambda += (modes[d] as f64 * pi / l).powi(2);
        norm *= (2.0 / l).sqrt();
    }
    let phi = mesh
        .nodes()
        .iter()
        .map(|p| {
            let mut v = norm;
            for d in 0..mesh.dim() {
                let l = hi[d] - lo[d];
                v *= (modes[d] as f64 * pi * (p[d] - lo[d]) / l).sin();
            }
            v
        })
        .collect();
    Ok((nu * lambda, phi))
}

/// Mode indices in the order used by reports: `1..=k_max` in 1D, the
/// `k_max x k_max` tensor grid (row-major) in 2D.
pub fn mode_list(dim: usize, k_max: usize) -> Vec<Vec<usize>> {
    match dim {
        1 => (1..=k_max).map(|k| vec![k]).collect(),
        _ => (1..=k_max)
            .flat_map(|a| (1..=k_max).map(move |b| vec![a, b]))
            .collect(),
    }
}

fn require_zero_pi(mesh: &Mesh) -> Result<()> {
    let pi = std::f64::consts::PI;
    if mesh.dim() != 1 || mesh.lower()[0].abs() > 1e-12 || (mesh.upper()[0] - pi).abs() > 1e-12 {
        return invalid("the variable-coupling basis is defined on the interval (0, π) only");
    }
    Ok(())
}

/// Trapezoid rule on the nodal values of a 1D mesh.
pub fn trapezoid_1d(mesh: &Mesh, f: &[f64]) -> f64 {
    let nodes = mesh.nodes();
    (1..nodes.len())
        .map(|i| 0.5 * (nodes[i][0] - nodes[i - 1][0]) * (f[i] + f[i - 1]))
        .sum()
}

fn check_field(mesh: &Mesh, q: &[f64]) -> Result<()> {
    if q.len() != mesh.node_count() {
        return Err(Error::DimensionMismatch(format!(
            "field has {} values for {} nodes",
            q.len(),
            mesh.node_count()
        )));
    }
    Ok(())
}

/// `∫₀^π q φ_k² dx` by the trapezoid rule. This weighted norm (not `∫ q φ_k`)
/// is the value that makes the second basis function vanish at `π` and keeps
/// the two families biorthogonal.
pub fn compute_ik(mesh: &Mesh, q: &[f64], k: usize) -> Result<f64> {
    require_zero_pi(mesh)?;
    check_field(mesh, q)?;
    let (_, phi) = laplace_eigenpair(mesh, &[k], 1.0)?;
    let g: Vec<f64> = q.iter().zip(&phi).map(|(a, p)| a * p * p).collect();
    Ok(trapezoid_1d(mesh, &g))
}

/// Second basis function `ψ_k` and the constant `α_k` that makes it
/// orthogonal to `φ_k` under the trapezoid inner product.
pub fn compute_psi_alpha(mesh: &Mesh, q: &[f64], k: usize) -> Result<(Vec<f64>, f64)> {
    require_zero_pi(mesh)?;
    check_field(mesh, q)?;
    let ik = compute_ik(mesh, q, k)?;
    let (_, phi) = laplace_eigenpair(mesh, &[k], 1.0)?;
    let kf = k as f64;
    let x: Vec<f64> = mesh.nodes().iter().map(|p| p[0]).collect();
    let g: Vec<f64> = (0..x.len()).map(|i| (ik - q[i]) * phi[i]).collect();
    // ∫₀ˣ sin(k(x−ζ)) g(ζ) dζ = sin(kx) C(x) − cos(kx) S(x)
    let (mut c, mut s) = (0.0, 0.0);
    let mut r = vec![0.0; x.len()];
    for i in 1..x.len() {
        let h = x[i] - x[i - 1];
        c += 0.5 * h * ((kf * x[i]).cos() * g[i] + (kf * x[i - 1]).cos() * g[i - 1]);
        s += 0.5 * h * ((kf * x[i]).sin() * g[i] + (kf * x[i - 1]).sin() * g[i - 1]);
        r[i] = ((kf * x[i]).sin() * c - (kf * x[i]).cos() * s) / kf;
    }
    let rphi: Vec<f64> = r.iter().zip(&phi).map(|(a, b)| a * b).collect();
    let pp: Vec<f64> = phi.iter().map(|p| p * p).collect();
    let alpha = trapezoid_1d(mesh, &rphi) / trapezoid_1d(mesh, &pp);
    let psi = (0..x.len()).map(|i| alpha * phi[i] - r[i]).collect();
    Ok((psi, alpha))
}

/// Per-mode data of the basis used for reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeBasis {
    pub modes: Vec<usize>,
    pub lambda: f64,
    pub phi: Vec<f64>,
    pub psi: Option<Vec<f64>>,
    pub alpha: f64,
    pub ik: f64,
}

impl ModeBasis {
    pub fn laplace(mesh: &Mesh, modes: &[usize], nu: f64) -> Result<Self> {
        let (lambda, phi) = laplace_eigenpair(mesh, modes, nu)?;
        Ok(ModeBasis {
            modes: modes.to_vec(),
            lambda,
            phi,
            psi: None,
            alpha: 0.0,
            ik: 0.0,
        })
    }

    /// Mode `k` of the 2x2 variable-coupling family on `(0, π)` (unit diffusion).
    pub fn riesz(mesh: &Mesh, q: &[f64], k: usize) -> Result<Self> {
        let (lambda, phi) = laplace_eigenpair(mesh, &[k], 1.0)?;
        let (psi, alpha) = compute_psi_alpha(mesh, q, k)?;
        Ok(ModeBasis {
            modes: vec![k],
            lambda,
            phi,
            psi: Some(psi),
            alpha,
            ik: compute_ik(mesh, q, k)?,
        })
    }

    fn psi(&self) -> &[f64] {
        self.psi.as_deref().unwrap_or(&[])
    }

    /// Primal family member `i ∈ {1, 2}`: `(0, φ)` or `(φ, ψ)`.
    pub fn primal(&self, i: usize) -> [Vec<f64>; 2] {
        let zero = vec![0.0; self.phi.len()];
        match i {
            1 => [zero, self.phi.clone()],
            _ => [self.phi.clone(), self.psi().to_vec()],
        }
    }

    /// Dual family member `i ∈ {1, 2}`: `(ψ, φ)` or `(φ, 0)`.
    pub fn dual(&self, i: usize) -> [Vec<f64>; 2] {
        let zero = vec![0.0; self.phi.len()];
        match i {
            1 => [self.psi().to_vec(), self.phi.clone()],
            _ => [self.phi.clone(), zero],
        }
    }
}

/// Matrix of pairings `(Φ_{i,k}, Φ*_{j,l})` over the truncated families, with
/// rows/columns ordered `(k, i)`.
pub fn biorthogonality_matrix(mesh: &Mesh, basis: &[ModeBasis]) -> DMatrix<f64> {
    let n = 2 * basis.len();
    let mut g = DMatrix::zeros(n, n);
    for (a, bk) in basis.iter().enumerate() {
        for (b, bl) in basis.iter().enumerate() {
            for i in 0..2 {
                for j in 0..2 {
                    let p = bk.primal(i + 1);
                    let d = bl.dual(j + 1);
                    let v: f64 = (0..2)
                        .map(|c| {
                            let f: Vec<f64> = p[c].iter().zip(&d[c]).map(|(x, y)| x * y).collect();
                            trapezoid_1d(mesh, &f)
                        })
                        .sum();
                    g[(2 * a + i, 2 * b + j)] = v;
                }
            }
        }
    }
    g
}

/// Relative weak residuals of the four eigen-relations of mode `basis`:
/// `(L−k²)Φ₁`, `(L−k²)Φ₂ − I_kΦ₁`, `(L*−k²)Φ*₂`, `(L*−k²)Φ*₁ − I_kΦ*₂`,
/// evaluated with the P1 stiffness, mass and weighted-mass matrices at
/// interior nodes.
pub fn weak_residuals(mesh: &Mesh, q: &[f64], basis: &ModeBasis) -> Result<[f64; 4]> {
    let s = fem::assemble_stiffness(mesh, 1.0)?;
    let m = fem::assemble_mass(mesh);
    let w = fem::assemble_weighted_mass(mesh, q)?;
    let k2 = basis.lambda;
    let ik = basis.ik;
    let interior: Vec<bool> = mesh.boundary_flags().iter().map(|b| !b).collect();
    let apply = |a: &CsrMatrix, v: &[f64]| a.matvec(v);
    // operator row blocks for L = −Δ + [[0,0],[q,0]] and L* = −Δ + [[0,q],[0,0]]
    let l_op = |v: &[Vec<f64>; 2], adjoint: bool| -> [Vec<f64>; 2] {
        let mut r0 = apply(&s, &v[0]);
        let mut r1 = apply(&s, &v[1]);
        let m0 = apply(&m, &v[0]);
        let m1 = apply(&m, &v[1]);
        for i in 0..r0.len() {
            r0[i] -= k2 * m0[i];
            r1[i] -= k2 * m1[i];
        }
        if adjoint {
            let c = apply(&w, &v[1]);
            r0.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
        } else {
            let c = apply(&w, &v[0]);
            r1.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
        }
        [r0, r1]
    };
    let norm = |r: &[Vec<f64>; 2]| -> f64 {
        r.iter()
            .map(|c| c.iter().zip(&interior).filter(|(_, &f)| f).map(|(v, _)| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    };
    let scale = norm(&[apply(&s, &basis.phi), vec![0.0; basis.phi.len()]]).max(f64::MIN_POSITIVE);
    let sub = |mut r: [Vec<f64>; 2], v: &[Vec<f64>; 2]| -> [Vec<f64>; 2] {
        for c in 0..2 {
            let mv = apply(&m, &v[c]);
            r[c].iter_mut().zip(&mv).for_each(|(a, b)| *a -= ik * b);
        }
        r
    };
    let r1 = l_op(&basis.primal(1), false);
    let r2 = sub(l_op(&basis.primal(2), false), &basis.primal(1));
    let r3 = l_op(&basis.dual(2), true);
    let r4 = sub(l_op(&basis.dual(1), true), &basis.dual(2));
    Ok([norm(&r1) / scale, norm(&r2) / scale, norm(&r3) / scale, norm(&r4) / scale])
}

fn generator(q: &[f64], n: usize, lambda: f64) -> DMatrix<f64> {
    let mut a = DMatrix::from_row_slice(n, n, q);
    for i in 0..n {
        a[(i, i)] += lambda;
    }
    a
}

fn strictly_triangular(q: &[f64], n: usize) -> bool {
    let lower = (0..n).all(|i| (i..n).all(|j| q[i * n + j] == 0.0));
    let upper = (0..n).all(|i| (0..=i).all(|j| q[i * n + j] == 0.0));
    lower || upper
}

/// `exp(−(λI + Q) t)` for a constant row-major `Q`. Strictly triangular
/// (nilpotent) couplings use the terminating series.
pub fn fundamental_matrix(q: &[f64], n: usize, lambda: f64, t: f64) -> DMatrix<f64> {
    assert_eq!(q.len(), n * n);
    if strictly_triangular(q, n) {
        let qm = DMatrix::from_row_slice(n, n, q) * (-t);
        let mut term = DMatrix::identity(n, n);
        let mut sum = term.clone();
        for j in 1..n {
            term = &term * &qm / j as f64;
            sum += &term;
        }
        sum * (-lambda * t).exp()
    } else {
        (generator(q, n, lambda) * (-t)).exp()
    }
}

/// Sub-intervals `[s_{j−1}, s_j]` of `[0, t]` aligned with the σ samples.
fn sample_intervals(sigma: &SigmaProfile, t: f64) -> Vec<(f64, f64)> {
    let dt = sigma.dt();
    let mut out = Vec::new();
    let mut a = 0.0;
    let mut j = 1;
    while a < t * (1.0 - 1e-14) {
        let b = (j as f64 * dt).min(t);
        if b > a {
            out.push((a, b));
        }
        a = b;
        j += 1;
    }
    out
}

/// `(e^{Ah}, ∫₀ʰ e^{A(h−u)} du, ∫₀ʰ e^{A(h−u)} u du)` from one exponential of
/// the block matrix `[[A, I, 0], [0, 0, I], [0, 0, 0]] h`.
fn interval_propagators(a: &DMatrix<f64>, h: f64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut c = DMatrix::zeros(3 * n, 3 * n);
    c.view_mut((0, 0), (n, n)).copy_from(&(a * h));
    for i in 0..n {
        c[(i, n + i)] = h;
        c[(n + i, 2 * n + i)] = h;
    }
    let e = c.exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, n)).into_owned(),
        e.view((0, 2 * n), (n, n)).into_owned(),
    )
}

/// `M(t) = ∫₀ᵗ exp(−(λI+Q)(t−s)) σ(s) ds`, integrated exactly against the
/// piecewise-linear interpolant of the σ samples.
pub fn compute_m(q: &[f64], n: usize, lambda: f64, sigma: &SigmaProfile, t: f64) -> Result<DMatrix<f64>> {
    let t_max = sigma.dt() * sigma.n_steps() as f64;
    if t < 0.0 || t > t_max * (1.0 + 1e-12) {
        return invalid(format!("time {t} outside the profile range [0, {t_max}]"));
    }
    let gen = -generator(q, n, lambda);
    let mut acc = DMatrix::zeros(n, n);
    let mut cache: Option<(f64, (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>))> = None;
    for (a, b) in sample_intervals(sigma, t) {
        let h = b - a;
        if cache.as_ref().map(|c| (c.0 - h).abs() > 1e-15 * h).unwrap_or(true) {
            cache = Some((h, interval_propagators(&gen, h)));
        }
        let (e, p0, p1) = &cache.as_ref().unwrap().1;
        let (sa, sb) = (sigma.value(a), sigma.value(b));
        acc = e * acc + p0 * sa + p1 * ((sb - sa) / h);
    }
    Ok(acc)
}

/// `a_j = 1 − (λ/σ(t)) Σ_i m_ij(t)` for every component `j`.
pub fn coeff_aq(q: &[f64], n: usize, lambda: f64, sigma: &SigmaProfile, t: f64) -> Result<Vec<f64>> {
    let m_steps = (t / sigma.dt()).round() as usize;
    let st = sigma.value(t);
    if st.abs() < 1e-14 || (m_steps == sigma.n_steps() && sigma.require_terminal().is_err()) {
        return Err(Error::SigmaTerminalZero);
    }
    let m = compute_m(q, n, lambda, sigma, t)?;
    let a: Vec<f64> = (0..n)
        .map(|j| 1.0 - lambda / st * (0..n).map(|i| m[(i, j)]).sum::<f64>())
        .collect();
    for (j, v) in a.iter().enumerate() {
        if v.abs() < HYPOTHESIS_TOL {
            log::warn!("coefficient a[{j}] = {v:.3e} violates the non-degeneracy hypothesis");
        } else if v.abs() < HYPOTHESIS_WARN {
            log::warn!("coefficient a[{j}] = {v:.3e} is close to degenerate");
        }
    }
    Ok(a)
}

/// Indices of coefficients that violate the non-degeneracy hypothesis.
pub fn hypothesis_violations(a: &[f64]) -> Vec<usize> {
    (0..a.len()).filter(|&j| a[j].abs() < HYPOTHESIS_TOL).collect()
}

/// `∫₀ʰ v^p e^{−μv} dv` for `p = 0, 1, 2`, with a series near `μh = 0`.
fn decay_moments(mu: f64, h: f64) -> [f64; 3] {
    let x = mu * h;
    if x.abs() < 0.5 {
        let mut out = [0.0; 3];
        for (p, o) in out.iter_mut().enumerate() {
            let mut term = 1.0;
            let mut sum = 0.0;
            for k in 0..30 {
                sum += term / (k + p + 1) as f64;
                term *= -x / (k + 1) as f64;
            }
            *o = h.powi(p as i32 + 1) * sum;
        }
        out
    } else {
        let e = (-x).exp();
        [
            (1.0 - e) / mu,
            (1.0 - e * (1.0 + x)) / (mu * mu),
            (2.0 - e * (2.0 + 2.0 * x + x * x)) / (mu * mu * mu),
        ]
    }
}

/// `g₀ = ∫₀ᵗ e^{−μ(t−s)}σ(s)ds` and the iterated integral
/// `g₁ = ∫₀ᵗ e^{−μ(t−s)}(∫₀ˢ e^{−μ(s−r)}σ(r)dr)ds`, both exact for the
/// piecewise-linear interpolant of σ.
fn exp_moments(mu: f64, sigma: &SigmaProfile, t: f64) -> (f64, f64) {
    let (mut g0, mut g1) = (0.0, 0.0);
    // inner = ∫₀ᵃ e^{−μ(a−r)}σ(r)dr at the left end of the current interval
    let mut inner = 0.0;
    for (a, b) in sample_intervals(sigma, t) {
        let h = b - a;
        let (sa, sb) = (sigma.value(a), sigma.value(b));
        let slope = (sb - sa) / h;
        let [k0, k1, k2] = decay_moments(mu, h);
        // J_p = ∫₀ʰ u^p e^{−μ(h−u)} du
        let j0 = k0;
        let j1 = h * k0 - k1;
        let j2 = h * h * k0 - 2.0 * h * k1 + k2;
        let e_end = (-mu * (t - b)).exp();
        let local = sa * j0 + slope * j1;
        // outer contribution over [a, b]: the carried inner term plus the
        // part of the inner integral accumulated inside the interval
        g1 += e_end * ((-mu * h).exp() * inner * h + sa * (h * j0 - j1) + slope * (h * j1 - j2));
        g0 += e_end * local;
        inner = (-mu * h).exp() * inner + local;
    }
    (g0, g1)
}

/// Kernel form `∫₀ᵗ (t−s) e^{−μ(t−s)} σ(s) ds`, evaluated through the
/// fundamental matrix of the 2x2 Jordan block; cross-checks the iterated
/// integral.
pub fn kernel_moment(mu: f64, sigma: &SigmaProfile, t: f64) -> f64 {
    match compute_m(&[0.0, 0.0, 1.0, 0.0], 2, mu, sigma, t) {
        Ok(m) => -m[(1, 0)],
        Err(_) => f64::NAN,
    }
}

/// `(a, b)` of the variable-coupling identity for mode `k` at time `t`:
/// `a = σ(t) − k² g₀`, `b = −I_k (g₀ − k² g₁)` with
/// `g₀ = ∫ e^{−k²(t−s)}σ` and `g₁` the iterated integral.
pub fn coeff_al_bl(ik: f64, k: usize, sigma: &SigmaProfile, t: f64) -> Result<(f64, f64)> {
    let st = sigma.value(t);
    if st.abs() < 1e-14 {
        return Err(Error::SigmaTerminalZero);
    }
    let k2 = (k * k) as f64;
    let (g0, g1) = exp_moments(k2, sigma, t);
    let a = st - k2 * g0;
    if a.abs() < HYPOTHESIS_TOL {
        log::warn!("mode {k}: a = {a:.3e} violates the non-degeneracy hypothesis");
    }
    Ok((a, -ik * (g0 - k2 * g1)))
}

/// Closed-form mode amplitudes `(α_k(t), β_k(t))` of the 2x2 variable system.
pub fn mode_ode_2x2(
    ik: f64,
    k: usize,
    sigma: &SigmaProfile,
    f1_phi: f64,
    f1_psi: f64,
    f2_phi: f64,
    t: f64,
) -> (f64, f64) {
    if t == 0.0 {
        return (0.0, 0.0);
    }
    let (g0, g1) = exp_moments((k * k) as f64, sigma, t);
    let beta = f1_phi * g0;
    let alpha = (f1_psi + f2_phi) * g0 - ik * f1_phi * g1;
    (alpha, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::TimeGrid;
    use crate::mesh::{build_interval_mesh, build_rect_mesh};
    use std::f64::consts::PI;

    #[test]
    fn eigenpairs() {
        let m = build_interval_mesh(0.0, PI, 4).unwrap();
        let (l, phi) = laplace_eigenpair(&m, &[1], 1.0).unwrap();
        assert!((l - 1.0).abs() < 1e-14);
        assert!((phi[2] - (2.0 / PI).sqrt()).abs() < 1e-14);
        let m = build_interval_mesh(0.0, 1.0, 10).unwrap();
        let (l, phi) = laplace_eigenpair(&m, &[1], 1.0).unwrap();
        assert!((l - PI * PI).abs() < 1e-12);
        assert!((phi[3] - 2f64.sqrt() * (0.3 * PI).sin()).abs() < 1e-14);
        let m = build_rect_mesh(4, 4, (1.0, 1.0)).unwrap();
        let (l, phi) = laplace_eigenpair(&m, &[1, 1], 0.1).unwrap();
        assert!((l - 0.2 * PI * PI).abs() < 1e-12);
        assert!((phi[12] - 2.0).abs() < 1e-12);
        assert!(laplace_eigenpair(&m, &[0, 1], 1.0).is_err());
        assert!(laplace_eigenpair(&m, &[1], 1.0).is_err());
    }

    #[test]
    fn ik_and_psi_trivial_cases() {
        let m = build_interval_mesh(0.0, PI, 400).unwrap();
        let n = m.node_count();
        assert_eq!(compute_ik(&m, &vec![0.0; n], 1).unwrap(), 0.0);
        for k in 1..4 {
            assert!((compute_ik(&m, &vec![1.0; n], k).unwrap() - 1.0).abs() < 1e-12);
        }
        let (psi, alpha) = compute_psi_alpha(&m, &vec![0.0; n], 3).unwrap();
        assert_eq!(alpha, 0.0);
        assert!(psi.iter().all(|v| *v == 0.0));
        let off = build_interval_mesh(0.0, 1.0, 10).unwrap();
        assert!(compute_ik(&off, &[0.0; 11], 1).is_err());
    }

    #[test]
    fn psi_is_orthogonal_to_phi_and_vanishes_at_pi() {
        let m = build_interval_mesh(0.0, PI, 2000).unwrap();
        let q: Vec<f64> = m.nodes().iter().map(|p| 2.0 + p[0].cos()).collect();
        for k in [1usize, 2, 5] {
            let b = ModeBasis::riesz(&m, &q, k).unwrap();
            let f: Vec<f64> = b.phi.iter().zip(b.psi.as_ref().unwrap()).map(|(a, c)| a * c).collect();
            assert!(trapezoid_1d(&m, &f).abs() < 1e-12);
            assert!(b.psi.as_ref().unwrap().last().unwrap().abs() < 1e-5);
        }
    }

    #[test]
    fn nilpotent_fundamental_matrix() {
        let q = [0.0, 0.0, 3.0, 0.0];
        let e = fundamental_matrix(&q, 2, 2.0, 0.4);
        let d = (-0.8f64).exp();
        assert!((e[(1, 0)] + 3.0 * 0.4 * d).abs() < 1e-14);
        assert!((e[(0, 0)] - d).abs() < 1e-14);
        let full = [0.5, 1.0, -2.0, 0.3];
        let a = fundamental_matrix(&full, 2, 1.0, 0.3);
        let b = fundamental_matrix(&full, 2, 1.0, 0.2);
        let c = fundamental_matrix(&full, 2, 1.0, 0.5);
        assert!((a * b - c).abs().max() < 1e-12);
        let z = fundamental_matrix(&[0.0; 4], 2, 1.5, 1.0);
        assert!((z[(0, 0)] - (-1.5f64).exp()).abs() < 1e-14 && z[(0, 1)] == 0.0);
    }

    #[test]
    fn m_matrix_and_a_coefficients() {
        let g = TimeGrid::new(0.5, 50).unwrap();
        let one = SigmaProfile::constant(&g, 1.0);
        let lam = 3.0;
        let m = compute_m(&[0.0; 4], 2, lam, &one, 0.5).unwrap();
        let exact = (1.0 - (-lam * 0.5f64).exp()) / lam;
        assert!((m[(0, 0)] - exact).abs() < 1e-6 && m[(0, 1)] == 0.0);
        let zero = compute_m(&[0.0; 4], 2, lam, &SigmaProfile::constant(&g, 0.0), 0.5).unwrap();
        assert_eq!(zero.abs().max(), 0.0);
        let a = coeff_aq(&[0.0], 1, lam, &one, 0.5).unwrap();
        assert!((a[0] - (-lam * 0.5f64).exp()).abs() < 1e-6);
        // large λ keeps a finite and close to the quadrature-free value
        let a = coeff_aq(&[0.0], 1, 200.0, &one, 0.5).unwrap();
        assert!((a[0] - (-100.0f64).exp()).abs() < 1e-3);
        assert!(coeff_aq(&[0.0], 1, lam, &SigmaProfile::constant(&g, 0.0), 0.5).is_err());
        assert_eq!(hypothesis_violations(&[1.0, 1e-12]), vec![1]);
    }

    #[test]
    fn variable_coefficients_and_kernel_equivalence() {
        let g = TimeGrid::new(0.5, 50).unwrap();
        let one = SigmaProfile::constant(&g, 1.0);
        let (a, b) = coeff_al_bl(0.7, 2, &one, 0.5).unwrap();
        assert!((a - (-2.0f64).exp()).abs() < 1e-5);
        let (_, b0) = coeff_al_bl(0.0, 2, &one, 0.5).unwrap();
        assert_eq!(b0, 0.0);
        let osc = SigmaProfile::oscillating(&g, 0.05).unwrap();
        for k in 1..5 {
            let mu = (k * k) as f64;
            let (_, g1) = exp_moments(mu, &osc, 0.5);
            assert!((g1 - kernel_moment(mu, &osc, 0.5)).abs() < 1e-10, "k = {k} {g1} {}", kernel_moment(mu, &osc, 0.5));
        }
        assert!(b.is_finite());
        assert_eq!(mode_ode_2x2(1.0, 1, &one, 0.0, 0.0, 0.0, 0.3), (0.0, 0.0));
        let (al, _) = mode_ode_2x2(0.0, 1, &one, 5.0, 1.0, 2.0, 0.3);
        let (al2, _) = mode_ode_2x2(0.0, 1, &one, -3.0, 2.0, 1.0, 0.3);
        assert!((al - al2).abs() < 1e-14);
    }
}
