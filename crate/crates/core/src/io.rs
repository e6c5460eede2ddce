//! CSV artifacts. Floats use the shortest round-trip representation so equal
//! runs give byte-identical files; absent values are empty cells.

use std::fs::File;
use std::path::Path;

use crate::control::{ControlFunction, ControlReport};
use crate::error::{Error, Result};
use crate::forward::FieldSeries;
use crate::mesh::{Mesh, SubdomainMask};
use crate::optimize::DescentTrace;
use crate::reconstruct::CoefficientEstimate;

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn coords(mesh: &Mesh, i: usize) -> Vec<String> {
    let p = mesh.node(i);
    (0..mesh.dim()).map(|d| num(p[d])).collect()
}

fn coord_header(mesh: &Mesh) -> Vec<String> {
    ["x", "y"][..mesh.dim()].iter().map(|s| s.to_string()).collect()
}

fn check_nodes(mesh: &Mesh, n: usize) -> Result<()> {
    if n != mesh.node_count() {
        return Err(Error::DimensionMismatch(format!("{n} nodal values for {} nodes", mesh.node_count())));
    }
    Ok(())
}

/// `id,x[,y],is_boundary,in_obs`.
pub fn write_mesh_nodes(path: &Path, mesh: &Mesh, mask: Option<&SubdomainMask>) -> Result<()> {
    let mut w = writer(path)?;
    let mut head = vec!["id".to_string()];
    head.extend(coord_header(mesh));
    head.extend(["is_boundary".into(), "in_obs".into()]);
    w.write_record(&head)?;
    for i in 0..mesh.node_count() {
        let mut row = vec![i.to_string()];
        row.extend(coords(mesh, i));
        row.push(u8::from(mesh.is_boundary(i)).to_string());
        row.push(u8::from(mask.is_some_and(|m| m.node_flags[i])).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `id,n0,n1[,n2]`.
pub fn write_mesh_elements(path: &Path, mesh: &Mesh) -> Result<()> {
    let mut w = writer(path)?;
    let mut head = vec!["id", "n0", "n1"];
    if mesh.dim() == 2 {
        head.push("n2");
    }
    w.write_record(&head)?;
    for (e, nodes) in mesh.elements().enumerate() {
        let mut row = vec![e.to_string()];
        row.extend(nodes.iter().map(|n| n.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `t,node_id,comp,value` with components numbered from 1.
pub fn write_trajectory(path: &Path, series: &FieldSeries) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "node_id", "comp", "value"])?;
    for m in 0..series.n_times() {
        let t = num(series.grid().time(m));
        for c in 0..series.n_comp() {
            for (i, v) in series.comp(m, c).iter().enumerate() {
                w.write_record([t.as_str(), &i.to_string(), &(c + 1).to_string(), &num(*v)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `x[,y],y1..yn` at step `m`.
pub fn write_snapshot(path: &Path, mesh: &Mesh, series: &FieldSeries, m: usize) -> Result<()> {
    check_nodes(mesh, series.n_nodes())?;
    if m >= series.n_times() {
        return Err(Error::InvalidArgument(format!("snapshot step {m} beyond the grid")));
    }
    let mut w = writer(path)?;
    let mut head = coord_header(mesh);
    head.extend((1..=series.n_comp()).map(|c| format!("y{c}")));
    w.write_record(&head)?;
    for i in 0..mesh.node_count() {
        let mut row = coords(mesh, i);
        row.extend((0..series.n_comp()).map(|c| num(series.comp(m, c)[i])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row of the spectral audit.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeRow {
    /// Mode label, indices joined by `-` in 2D.
    pub k: String,
    pub lambda: f64,
    pub ik: Option<f64>,
    pub alpha: Option<f64>,
    pub a: Vec<f64>,
    pub b: Option<f64>,
}

/// `k,lambda,I_k,alpha_k,a1..an,b`.
pub fn write_mode_report(path: &Path, rows: &[ModeRow]) -> Result<()> {
    let n = rows.iter().map(|r| r.a.len()).max().unwrap_or(0);
    let mut w = writer(path)?;
    let mut head: Vec<String> = ["k", "lambda", "I_k", "alpha_k"].iter().map(|s| s.to_string()).collect();
    head.extend((1..=n).map(|j| format!("a{j}")));
    head.push("b".into());
    w.write_record(&head)?;
    for r in rows {
        let mut row = vec![r.k.clone(), num(r.lambda), opt(r.ik), opt(r.alpha)];
        row.extend((0..n).map(|j| opt(r.a.get(j).copied())));
        row.push(opt(r.b));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `t,node_id,u_n` on the control support.
pub fn write_control(path: &Path, u: &ControlFunction) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "node_id", "u_n"])?;
    for m in 0..u.grid().n_steps() {
        let t = num(u.grid().time(m));
        for (i, v) in u.step(m).iter().enumerate().filter(|(i, _)| u.support()[*i]) {
            w.write_record([t.as_str(), &i.to_string(), &num(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per control solve.
pub fn write_control_reports(path: &Path, reports: &[(String, ControlReport)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["label", "tau", "epsilon", "terminal_residual", "control_cost", "cg_iterations", "converged", "incomplete", "flags"])?;
    for (label, r) in reports {
        w.write_record([
            label.clone(),
            num(r.tau),
            num(r.epsilon),
            num(r.terminal_residual),
            num(r.control_cost),
            r.cg_iterations.to_string(),
            r.converged.to_string(),
            r.incomplete.to_string(),
            r.hypothesis_flags.join("; "),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `k,tau,combined,C1,C2,C3,cond,f1_k..fn_k`.
pub fn write_reconstruction(path: &Path, estimates: &[CoefficientEstimate]) -> Result<()> {
    let n = estimates.iter().map(|e| e.coeffs.len()).max().unwrap_or(0);
    let mut w = writer(path)?;
    let mut head: Vec<String> = ["k", "tau", "combined", "C1", "C2", "C3", "cond"].iter().map(|s| s.to_string()).collect();
    head.extend((1..=n).map(|j| format!("f{j}_k")));
    w.write_record(&head)?;
    for e in estimates {
        let mut row = vec![e.k.to_string(), num(e.tau), num(e.combined), num(e.c1), num(e.c2), num(e.c3), num(e.cond)];
        row.extend((0..n).map(|j| opt(e.coeffs.get(j).copied())));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `x[,y],f1_true,f1_rec,...`.
pub fn write_final_field(path: &Path, mesh: &Mesh, truth: &[Vec<f64>], rec: &[Vec<f64>]) -> Result<()> {
    if truth.len() != rec.len() {
        return Err(Error::DimensionMismatch("true and reconstructed sources differ in components".into()));
    }
    for f in truth.iter().chain(rec) {
        check_nodes(mesh, f.len())?;
    }
    let mut w = writer(path)?;
    let mut head = coord_header(mesh);
    for c in 1..=truth.len() {
        head.push(format!("f{c}_true"));
        head.push(format!("f{c}_rec"));
    }
    w.write_record(&head)?;
    for i in 0..mesh.node_count() {
        let mut row = coords(mesh, i);
        for (t, r) in truth.iter().zip(rec) {
            row.push(num(t[i]));
            row.push(num(r[i]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `iter,J,gradnorm,rel_err`.
pub fn write_trace(path: &Path, trace: &DescentTrace) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["iter", "J", "gradnorm", "rel_err"])?;
    for r in &trace.rows {
        w.write_record([r.iter.to_string(), num(r.j), num(r.grad_norm), opt(r.rel_err)])?;
    }
    w.flush()?;
    Ok(())
}

/// `k,rel_err`.
pub fn write_sweep(path: &Path, rows: &[(f64, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["k", "rel_err"])?;
    for (k, e) in rows {
        w.write_record([num(*k), num(*e)])?;
    }
    w.flush()?;
    Ok(())
}

/// Header and rows of a CSV file, for checks and the Python smoke test.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let head = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|x| x.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok((head, rows))
}
