//! INI-style run configuration with expression-valued fields.
//!
//! ```text
//! seed = 7
//! [domain]
//! dim = 1
//! bounds = (0, 1)
//! elements = 100
//! nu = 0.1
//! [coupling]
//! n = 2
//! q12 = 4*x - 2
//! [source]
//! f1 = 8*(x-0.1) on (0.1,0.35); 8*(0.6-x) on (0.35,0.6); 0 else
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::forward::{CouplingEntry, CouplingMatrix, SigmaProfile, TimeGrid};
use crate::mesh::{build_interval_mesh, build_rect_mesh, mask_from_boxes, Mesh, ObsBox, SubdomainMask};
use crate::optimize::InverseProblemConfig;
use crate::reconstruct::SpectralSettings;

/// Region of one piecewise branch: x-range, plus a y-range in 2D.
type Region = Vec<(f64, f64)>;

#[derive(Debug, Clone)]
struct Branch {
    body: meval::Expr,
    region: Option<Region>,
}

/// Piecewise arithmetic expression over `x` and `y`.
///
/// Branches are `expr on (a,b)` or `expr on (a,b)x(c,d)` (closed ranges,
/// first match wins) and an optional final `expr else`; points matched by
/// no branch evaluate to 0.
#[derive(Debug, Clone)]
pub struct Expr {
    text: String,
    branches: Vec<Branch>,
    fallback: Option<meval::Expr>,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.text == other.text
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

fn normalize(text: &str) -> String {
    text.replace(['−', '–'], "-").replace('·', "*").replace('×', "x")
}

fn compile(body: &str) -> Result<meval::Expr> {
    let e: meval::Expr = body
        .trim()
        .parse()
        .map_err(|e: meval::Error| Error::Expression(format!("'{}': {e}", body.trim())))?;
    // reject unknown names now rather than at evaluation time
    let ctx = eval_context(0.0, 0.0);
    e.eval_with_context(ctx)
        .map_err(|err| Error::Expression(format!("'{}': {err}", body.trim())))?;
    Ok(e)
}

fn eval_context(x: f64, y: f64) -> meval::Context<'static> {
    let mut ctx = meval::Context::new();
    ctx.var("x", x).var("y", y);
    ctx
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let s = s.trim();
    let inner = s
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| Error::Expression(format!("range '{s}' must look like (a,b)")))?;
    let mut parts = inner.split(',');
    let (a, b) = match (parts.next(), parts.next(), parts.next()) {
        (Some(a), Some(b), None) => (a, b),
        _ => return Err(Error::Expression(format!("range '{s}' must have two endpoints"))),
    };
    let num = |t: &str| -> Result<f64> {
        let v = compile(t)?
            .eval_with_context(eval_context(0.0, 0.0))
            .map_err(|e| Error::Expression(e.to_string()))?;
        Ok(v)
    };
    let (a, b) = (num(a)?, num(b)?);
    if !(a < b) {
        return Err(Error::Expression(format!("range '{s}' is empty")));
    }
    Ok((a, b))
}

/// `(a,b)` or `(a,b)x(c,d)`.
fn parse_region(s: &str) -> Result<Region> {
    let s = s.trim();
    match s.find(")x(").or_else(|| s.find(") x (")) {
        Some(i) => {
            let (l, r) = s.split_at(i + 1);
            let r = r.trim_start().trim_start_matches('x');
            Ok(vec![parse_range(l)?, parse_range(r)?])
        }
        None => Ok(vec![parse_range(s)?]),
    }
}

impl Expr {
    pub fn parse(text: &str) -> Result<Self> {
        let text = normalize(text.trim());
        if text.is_empty() {
            return Err(Error::Expression("empty expression".into()));
        }
        let parts: Vec<&str> = text.split(';').map(str::trim).collect();
        let mut branches = Vec::new();
        let mut fallback = None;
        for (i, part) in parts.iter().enumerate() {
            if fallback.is_some() {
                return Err(Error::Expression("'else' branch must come last".into()));
            }
            if let Some(body) = part.strip_suffix("else") {
                fallback = Some(compile(body)?);
            } else if let Some(pos) = part.find(" on ") {
                let (body, region) = part.split_at(pos);
                branches.push(Branch { body: compile(body)?, region: Some(parse_region(&region[4..])?) });
            } else if parts.len() == 1 {
                branches.push(Branch { body: compile(part)?, region: None });
            } else {
                return Err(Error::Expression(format!(
                    "piece {} of '{text}' needs 'on (a,b)' or a trailing 'else'",
                    i + 1
                )));
            }
        }
        Ok(Expr { text, branches, fallback })
    }

    pub fn constant(v: f64) -> Self {
        Expr::parse(&format!("{v}")).expect("a float literal is a valid expression")
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Value when the expression does not depend on position.
    pub fn as_constant(&self) -> Option<f64> {
        if self.branches.len() != 1 || self.branches[0].region.is_some() || self.fallback.is_some() {
            return None;
        }
        let b = &self.branches[0].body;
        let a = b.eval_with_context(eval_context(0.123, 0.456)).ok()?;
        let c = b.eval_with_context(eval_context(0.789, 0.321)).ok()?;
        (a == c && !self.text.contains('x') && !self.text.contains('y')).then_some(a)
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let ctx = eval_context(x, y);
        let p = [x, y];
        for b in &self.branches {
            let hit = b
                .region
                .as_ref()
                .is_none_or(|r| r.iter().enumerate().all(|(d, &(lo, hi))| p[d] >= lo && p[d] <= hi));
            if hit {
                return b.body.eval_with_context(&ctx).unwrap_or(f64::NAN);
            }
        }
        self.fallback
            .as_ref()
            .map_or(0.0, |e| e.eval_with_context(&ctx).unwrap_or(f64::NAN))
    }

    /// Nodal interpolant on `mesh`.
    pub fn nodal(&self, mesh: &Mesh) -> Vec<f64> {
        mesh.nodes().iter().map(|p| self.eval(p[0], p[1])).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaKind {
    /// `1 + cos(4πt/(T−t0))/2` up to `T − t0`, then 3/2.
    Oscillating,
    /// σ ≡ 1.
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainConfig {
    pub dim: usize,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub elements: [usize; 2],
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeConfig {
    pub t_final: f64,
    pub steps: usize,
    pub sigma: SigmaKind,
    pub t0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingConfig {
    pub n: usize,
    /// Zero-based `(row, col)` to entry; absent entries are 0.
    pub entries: BTreeMap<(usize, usize), Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationConfig {
    pub boxes: Vec<ObsBox>,
    /// Zero-based observed components.
    pub observed: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub k: f64,
    pub step: f64,
    pub iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralConfig {
    pub k_max: usize,
    pub horizons: Vec<f64>,
    pub epsilon: f64,
    pub residual_correction: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub time: TimeConfig,
    pub coupling: CouplingConfig,
    /// Zero-based component to true source; absent components are 0.
    pub source: BTreeMap<usize, Expr>,
    pub observation: ObservationConfig,
    pub optimizer: OptimizerConfig,
    pub spectral: SpectralConfig,
    pub seed: u64,
}

impl RunConfig {
    /// Section defaults: the 1D benchmark setting with no coupling and no source.
    pub fn base() -> Self {
        RunConfig {
            domain: DomainConfig { dim: 1, lower: [0.0, 0.0], upper: [1.0, 0.0], elements: [100, 0], nu: 0.1 },
            time: TimeConfig { t_final: 0.5, steps: 50, sigma: SigmaKind::Oscillating, t0: 0.05 },
            coupling: CouplingConfig { n: 2, entries: BTreeMap::new() },
            source: BTreeMap::new(),
            observation: ObservationConfig { boxes: vec![ObsBox::interval(0.5, 0.9)], observed: vec![0, 1] },
            optimizer: OptimizerConfig { k: 1e5, step: 1e-4, iters: 2000 },
            spectral: SpectralConfig {
                k_max: 8,
                horizons: vec![0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5],
                epsilon: crate::control::DEFAULT_EPSILON,
                residual_correction: true,
            },
            seed: 0,
        }
    }

    /// Benchmark defaults: linear antisymmetric coupling and `(sin 2πx, −sin 2πx)`.
    pub fn benchmark_1d() -> Self {
        let mut c = Self::base();
        c.coupling.entries.insert((0, 1), Expr::parse("4*x - 2").unwrap());
        c.coupling.entries.insert((1, 0), Expr::parse("-4*x + 2").unwrap());
        c.source.insert(0, Expr::parse("sin(2*pi*x)").unwrap());
        c.source.insert(1, Expr::parse("-sin(2*pi*x)").unwrap());
        c
    }

    pub fn n_comp(&self) -> usize {
        self.coupling.n
    }

    pub fn mesh(&self) -> Result<Mesh> {
        let d = &self.domain;
        if d.dim == 1 {
            build_interval_mesh(d.lower[0], d.upper[0], d.elements[0])
        } else {
            build_rect_mesh(d.elements[0], d.elements[1], (d.upper[0], d.upper[1]))
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.time.t_final, self.time.steps)
    }

    pub fn sigma(&self, grid: &TimeGrid) -> Result<SigmaProfile> {
        match self.time.sigma {
            SigmaKind::Oscillating => SigmaProfile::oscillating(grid, self.time.t0),
            SigmaKind::Constant => Ok(SigmaProfile::constant(grid, 1.0)),
        }
    }

    pub fn coupling_matrix(&self, mesh: &Mesh) -> CouplingMatrix {
        let mut q = CouplingMatrix::zeros(self.coupling.n);
        for (&(i, j), e) in &self.coupling.entries {
            let entry = match e.as_constant() {
                Some(c) => CouplingEntry::Constant(c),
                None => CouplingEntry::Field(e.nodal(mesh)),
            };
            q.set(i, j, entry);
        }
        q
    }

    /// Row-major values when every entry is constant.
    pub fn constant_coupling(&self) -> Option<Vec<f64>> {
        let n = self.coupling.n;
        let mut v = vec![0.0; n * n];
        for (&(i, j), e) in &self.coupling.entries {
            v[i * n + j] = e.as_constant()?;
        }
        Some(v)
    }

    pub fn source_fields(&self, mesh: &Mesh) -> Vec<Vec<f64>> {
        (0..self.coupling.n)
            .map(|c| self.source.get(&c).map_or_else(|| vec![0.0; mesh.node_count()], |e| e.nodal(mesh)))
            .collect()
    }

    pub fn mask(&self, mesh: &Mesh) -> Result<SubdomainMask> {
        mask_from_boxes(mesh, &self.observation.boxes)
    }

    pub fn inverse_problem(&self) -> Result<InverseProblemConfig> {
        let mesh = self.mesh()?;
        let grid = self.grid()?;
        Ok(InverseProblemConfig {
            q: self.coupling_matrix(&mesh),
            nu: self.domain.nu,
            sigma: self.sigma(&grid)?,
            grid,
            mask: self.mask(&mesh)?,
            observed: self.observation.observed.clone(),
            penalty_k: self.optimizer.k,
            step_size: self.optimizer.step,
            max_iters: self.optimizer.iters,
            mesh,
        })
    }

    pub fn spectral_settings(&self, noise_snr_db: Option<f64>) -> SpectralSettings {
        SpectralSettings {
            k_max: self.spectral.k_max,
            horizons: self.spectral.horizons.clone(),
            epsilon: self.spectral.epsilon,
            noise_snr_db,
            seed: self.seed,
            residual_correction: self.spectral.residual_correction,
        }
    }

    /// Text that `parse_config` maps back to `self`.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        let d = &self.domain;
        let _ = writeln!(s, "seed = {}\n\n[domain]\ndim = {}", self.seed, d.dim);
        if d.dim == 1 {
            let _ = writeln!(s, "bounds = ({}, {})\nelements = {}", d.lower[0], d.upper[0], d.elements[0]);
        } else {
            let _ = writeln!(
                s,
                "bounds = ({}, {})x({}, {})\nelements = {}x{}",
                d.lower[0], d.upper[0], d.lower[1], d.upper[1], d.elements[0], d.elements[1]
            );
        }
        let _ = writeln!(s, "nu = {}\n", d.nu);
        let t = &self.time;
        let kind = match t.sigma {
            SigmaKind::Oscillating => "oscillating",
            SigmaKind::Constant => "constant",
        };
        let _ = writeln!(s, "[time]\nT = {}\nsteps = {}\nsigma = {kind}\nt0 = {}\n", t.t_final, t.steps, t.t0);
        let _ = writeln!(s, "[coupling]\nn = {}", self.coupling.n);
        for (&(i, j), e) in &self.coupling.entries {
            let _ = writeln!(s, "q{}{} = {e}", i + 1, j + 1);
        }
        let _ = writeln!(s, "\n[source]");
        for (&c, e) in &self.source {
            let _ = writeln!(s, "f{} = {e}", c + 1);
        }
        let boxes: Vec<String> = self
            .observation
            .boxes
            .iter()
            .map(|b| {
                if d.dim == 1 {
                    format!("({}, {})", b.lo[0], b.hi[0])
                } else {
                    format!("({}, {})x({}, {})", b.lo[0], b.hi[0], b.lo[1], b.hi[1])
                }
            })
            .collect();
        let comps: Vec<String> = self.observation.observed.iter().map(|c| (c + 1).to_string()).collect();
        let _ = writeln!(s, "\n[observation]\nboxes = {}\nobserved_components = {}", boxes.join("; "), comps.join(", "));
        let o = &self.optimizer;
        let _ = writeln!(s, "\n[optimizer]\nk = {}\nstep = {}\niters = {}", o.k, o.step, o.iters);
        let sp = &self.spectral;
        let hs: Vec<String> = sp.horizons.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(
            s,
            "\n[spectral]\nk_max = {}\nhorizons = {}\nepsilon = {}\nresidual_correction = {}",
            sp.k_max,
            hs.join(", "),
            sp.epsilon,
            sp.residual_correction
        );
        s
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::benchmark_1d()
    }
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Config { line, message: message.into() }
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| err(line, format!("'{key}' expects a number, got '{v}'")))
}

fn float(line: usize, key: &str, v: &str) -> Result<f64> {
    let x: f64 = num(line, key, v)?;
    if !x.is_finite() {
        return Err(err(line, format!("'{key}' must be finite")));
    }
    Ok(x)
}

fn float_list(line: usize, key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').filter(|t| !t.trim().is_empty()).map(|t| float(line, key, t)).collect()
}

/// `q12` style one-based index pair, or `f1` style single index.
fn indices(key: &str, prefix: char) -> Option<Vec<usize>> {
    let rest = key.strip_prefix(prefix)?;
    if rest.is_empty() || !rest.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    Some(rest.chars().map(|c| c.to_digit(10).unwrap() as usize).collect())
}

/// Parses the configuration text. Unset sections and keys keep the values
/// of [`RunConfig::base`].
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::base();
    let mut section = String::new();
    // line of each key, for later cross-checks
    let mut at: BTreeMap<String, usize> = BTreeMap::new();
    let mut coupling_lines = Vec::new();
    let mut source_lines = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(line, "unterminated section header"))?
                .trim()
                .to_ascii_lowercase();
            if !["domain", "time", "coupling", "source", "observation", "optimizer", "spectral"].contains(&name.as_str()) {
                return Err(err(line, format!("unknown section [{name}]")));
            }
            section = name;
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected 'key = value', got '{content}'")))?;
        let (key, value) = (key.trim(), value.trim());
        at.insert(format!("{section}.{key}"), line);
        let unknown = || err(line, format!("unknown key '{key}' in [{section}]"));
        let expr = |v: &str| Expr::parse(v).map_err(|e| err(line, e.to_string()));
        match section.as_str() {
            "" => match key {
                "seed" => cfg.seed = num(line, key, value)?,
                _ => return Err(unknown()),
            },
            "domain" => match key {
                "dim" => {
                    cfg.domain.dim = num(line, key, value)?;
                    if !(1..=2).contains(&cfg.domain.dim) {
                        return Err(err(line, "dim must be 1 or 2"));
                    }
                }
                "bounds" => {
                    let r = parse_region(value).map_err(|e| err(line, e.to_string()))?;
                    cfg.domain.lower = [r[0].0, r.get(1).map_or(0.0, |p| p.0)];
                    cfg.domain.upper = [r[0].1, r.get(1).map_or(0.0, |p| p.1)];
                }
                "elements" => {
                    let parts: Vec<&str> = value.split('x').collect();
                    if parts.len() > 2 {
                        return Err(err(line, "elements must be N or NxM"));
                    }
                    cfg.domain.elements = [num(line, key, parts[0])?, parts.get(1).map_or(Ok(0), |p| num(line, key, p))?];
                }
                "nu" => cfg.domain.nu = float(line, key, value)?,
                _ => return Err(unknown()),
            },
            "time" => match key {
                "T" | "t_final" => cfg.time.t_final = float(line, key, value)?,
                "steps" => cfg.time.steps = num(line, key, value)?,
                "sigma" | "sigma_kind" => {
                    cfg.time.sigma = match value {
                        "oscillating" => SigmaKind::Oscillating,
                        "constant" => SigmaKind::Constant,
                        _ => return Err(err(line, format!("sigma must be 'oscillating' or 'constant', got '{value}'"))),
                    }
                }
                "t0" => cfg.time.t0 = float(line, key, value)?,
                _ => return Err(unknown()),
            },
            "coupling" => {
                if key == "n" {
                    cfg.coupling.n = num(line, key, value)?;
                } else if let Some(ix) = indices(key, 'q').filter(|ix| ix.len() == 2) {
                    coupling_lines.push((line, ix[0], ix[1], expr(value)?));
                } else {
                    return Err(unknown());
                }
            }
            "source" => match indices(key, 'f').filter(|ix| ix.len() == 1) {
                Some(ix) => source_lines.push((line, ix[0], expr(value)?)),
                None => return Err(unknown()),
            },
            "observation" => match key {
                "boxes" => {
                    cfg.observation.boxes = value
                        .split(';')
                        .filter(|b| !b.trim().is_empty())
                        .map(|b| {
                            let r = parse_region(b).map_err(|e| err(line, e.to_string()))?;
                            Ok(match r.len() {
                                1 => ObsBox::interval(r[0].0, r[0].1),
                                _ => ObsBox::rect(r[0], r[1]),
                            })
                        })
                        .collect::<Result<_>>()?;
                }
                "observed_components" => {
                    cfg.observation.observed = value
                        .split(',')
                        .map(|t| {
                            let c: usize = num(line, key, t)?;
                            c.checked_sub(1).ok_or_else(|| err(line, "components are numbered from 1"))
                        })
                        .collect::<Result<_>>()?;
                }
                _ => return Err(unknown()),
            },
            "optimizer" => match key {
                "k" => cfg.optimizer.k = float(line, key, value)?,
                "step" => cfg.optimizer.step = float(line, key, value)?,
                "iters" => cfg.optimizer.iters = num(line, key, value)?,
                _ => return Err(unknown()),
            },
            "spectral" => match key {
                "k_max" | "K_max" => cfg.spectral.k_max = num(line, key, value)?,
                "horizons" => cfg.spectral.horizons = float_list(line, key, value)?,
                "epsilon" => cfg.spectral.epsilon = float(line, key, value)?,
                "residual_correction" => {
                    cfg.spectral.residual_correction = value
                        .parse()
                        .map_err(|_| err(line, format!("residual_correction must be true or false, got '{value}'")))?
                }
                _ => return Err(unknown()),
            },
            _ => unreachable!("section names are checked on entry"),
        }
    }
    let line_of = |k: &str| at.get(k).copied().unwrap_or(0);
    let n = cfg.coupling.n;
    if n == 0 || n > 9 {
        return Err(err(line_of("coupling.n"), format!("n must be between 1 and 9, got {n}")));
    }
    for (line, i, j, e) in coupling_lines {
        if i == 0 || j == 0 || i > n || j > n {
            return Err(err(line, format!("coupling entry q{i}{j} outside a {n}x{n} matrix")));
        }
        cfg.coupling.entries.insert((i - 1, j - 1), e);
    }
    for (line, c, e) in source_lines {
        if c == 0 || c > n {
            return Err(err(line, format!("source component f{c} outside 1..={n}")));
        }
        cfg.source.insert(c - 1, e);
    }
    let d = &cfg.domain;
    let bounds_line = line_of("domain.bounds");
    if d.dim == 1 {
        if d.elements[0] == 0 || d.elements[1] != 0 {
            return Err(err(line_of("domain.elements"), "1D domain needs a single positive element count"));
        }
        if d.upper[1] != 0.0 || d.lower[1] != 0.0 {
            return Err(err(bounds_line, "1D domain takes bounds (a, b)"));
        }
    } else {
        if d.elements[0] == 0 || d.elements[1] == 0 {
            return Err(err(line_of("domain.elements"), "2D domain needs elements NxM"));
        }
        if d.lower != [0.0, 0.0] || !(d.upper[0] > 0.0 && d.upper[1] > 0.0) {
            return Err(err(bounds_line, "2D domain takes bounds (0, a)x(0, b)"));
        }
    }
    if !(d.lower[0] < d.upper[0]) {
        return Err(err(bounds_line, "domain bounds are empty"));
    }
    let boxes_line = line_of("observation.boxes");
    for b in &cfg.observation.boxes {
        let two = b.lo[1] != 0.0 || b.hi[1] != 0.0;
        if (d.dim == 2) != two {
            return Err(err(boxes_line, format!("observation boxes must be {}D", d.dim)));
        }
    }
    if cfg.observation.boxes.is_empty() {
        return Err(err(boxes_line, "at least one observation box is needed"));
    }
    let obs_line = line_of("observation.observed_components");
    if cfg.observation.observed.is_empty() {
        return Err(err(obs_line, "no observed components"));
    }
    if let Some(c) = cfg.observation.observed.iter().find(|&&c| c >= n) {
        return Err(err(obs_line, format!("observed component {} outside 1..={n}", c + 1)));
    }
    if cfg.time.steps == 0 || !(cfg.time.t_final > 0.0) {
        return Err(err(line_of("time.steps").max(line_of("time.T")), "time grid needs T > 0 and steps >= 1"));
    }
    if !(cfg.domain.nu > 0.0) {
        return Err(err(line_of("domain.nu"), "nu must be positive"));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hat_function_from_piecewise_text() {
        let e = Expr::parse("8*(x−0.1) on (0.1,0.35); 8*(0.6−x) on (0.35,0.6); 0 else").unwrap();
        for (x, v) in [(0.0, 0.0), (0.1, 0.0), (0.2, 0.8), (0.35, 2.0), (0.5, 0.8), (0.6, 0.0), (0.9, 0.0)] {
            assert!((e.eval(x, 0.0) - v).abs() < 1e-12, "x={x}");
        }
        let shifted = Expr::parse("8*((x-0.3)-0.1) on (0.4,0.65); 8*(0.6-(x-0.3)) on (0.65,0.9); 0 else").unwrap();
        assert!((shifted.eval(0.65, 0.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cubic_coupling_and_constants() {
        let e = Expr::parse("−x^3+4*x^2−3*x+1").unwrap();
        assert_eq!(e.eval(0.0, 0.0), 1.0);
        assert!((e.eval(2.0, 0.0) - 3.0).abs() < 1e-12);
        assert_eq!(Expr::parse("4").unwrap().as_constant(), Some(4.0));
        assert_eq!(Expr::parse("2*pi").unwrap().as_constant(), Some(2.0 * std::f64::consts::PI));
        assert_eq!(e.as_constant(), None);
        let two = Expr::parse("sin(2*pi*x)*sin(2*pi*y)").unwrap();
        assert!((two.eval(0.25, 0.25) - 1.0).abs() < 1e-12);
        let boxed = Expr::parse("1 on (0,0.5)x(0,0.5); 2 else").unwrap();
        assert_eq!((boxed.eval(0.2, 0.2), boxed.eval(0.2, 0.7)), (1.0, 2.0));
    }

    #[test]
    fn malformed_expressions_are_rejected() {
        for bad in ["2*", "foo(x)", "z + 1", "1 on (0.5,0.1)", "1 else; 2 on (0,1)", "1; 2", ""] {
            assert!(Expr::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn empty_text_and_empty_coupling() {
        let c = parse_config("").unwrap();
        assert_eq!(c, RunConfig::base());
        let c = parse_config("[coupling]\n").unwrap();
        assert!(c.coupling_matrix(&c.mesh().unwrap()).is_zero());
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::benchmark_1d();
        c.source.insert(0, Expr::parse("8*(x-0.1) on (0.1,0.35); 8*(0.6-x) on (0.35,0.6); 0 else").unwrap());
        c.seed = 42;
        c.optimizer.k = 1e3;
        c.time.sigma = SigmaKind::Constant;
        assert_eq!(parse_config(&c.emit()).unwrap(), c);
        let mut d = RunConfig::base();
        d.domain = DomainConfig { dim: 2, lower: [0.0; 2], upper: [1.0, 1.0], elements: [40, 40], nu: 0.1 };
        d.observation = ObservationConfig {
            boxes: vec![ObsBox::rect((0.2, 0.4), (0.3, 0.7)), ObsBox::rect((0.6, 0.8), (0.3, 0.7))],
            observed: vec![1],
        };
        d.coupling.entries.insert((0, 1), Expr::constant(4.0));
        d.spectral.residual_correction = false;
        assert_eq!(parse_config(&d.emit()).unwrap(), d);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("[domain]\ndim = 1\nfoo = 2\n", 3),
            ("\n[bogus]\n", 2),
            ("[coupling]\nn = 2\nq13 = 1\n", 3),
            ("[source]\nf1 = sin(\n", 2),
            ("[domain]\ndim = 2\nelements = 4x4\nbounds = (0,1)\n", 4),
            ("[observation]\nobserved_components = 3\n", 2),
            ("[time]\nsteps = many\n", 2),
            ("seed 4\n", 1),
        ];
        for (text, want) in cases {
            match parse_config(text) {
                Err(Error::Config { line, .. }) => assert_eq!(line, want, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn builds_domain_objects() {
        let c = RunConfig::benchmark_1d();
        let mesh = c.mesh().unwrap();
        assert_eq!(mesh.node_count(), 101);
        let q = c.coupling_matrix(&mesh);
        assert!((q.value(0, 1, 100) - 2.0).abs() < 1e-12 && (q.value(1, 0, 0) - 2.0).abs() < 1e-12);
        let f = c.source_fields(&mesh);
        assert!((f[0][25] - 1.0).abs() < 1e-12 && (f[1][25] + 1.0).abs() < 1e-12);
        let inv = c.inverse_problem().unwrap();
        assert_eq!((inv.penalty_k, inv.step_size, inv.max_iters), (1e5, 1e-4, 2000));
        assert_eq!(c.constant_coupling(), None);
        assert_eq!(RunConfig::base().constant_coupling(), Some(vec![0.0; 4]));
    }
}
