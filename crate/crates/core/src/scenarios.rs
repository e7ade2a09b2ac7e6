//! Ready-to-run `(Space, WeightPair)` instances: weighted graphs, Gaussian
//! lattices, pixel domains and the Boltzmann velocity grid.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::constants::Constraint;
use crate::error::{Error, Result};
use crate::geometry::Lattice;
use crate::space::{Relation, Space};
use crate::weights::WeightPair;

pub const MAX_POINTS: usize = 100_000;

/// A generated instance plus the side condition its test functions obey.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub space: Space,
    pub weights: WeightPair,
    pub constraint: Constraint,
    pub lattice: Option<Lattice>,
    pub diagnostics: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl Scenario {
    /// Attach nested Euclidean scales of the given radii (largest first).
    pub fn with_scales(mut self, radii: &[f64]) -> Result<Self> {
        let lattice = self
            .lattice
            .as_ref()
            .ok_or_else(|| Error::Parameter("scales need a lattice scenario".into()))?;
        let scales = radii.iter().map(|&r| lattice.euclidean_relation(r)).collect();
        self.space = self.space.with_scales(scales)?;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphPreset {
    Complete,
    Path,
    Cycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    #[serde(default)]
    pub preset: Option<GraphPreset>,
    #[serde(default)]
    pub size: Option<usize>,
    /// Undirected edge list, used when no preset is given.
    #[serde(default)]
    pub edges: Vec<(usize, usize)>,
    #[serde(default)]
    pub points: Option<usize>,
    #[serde(default)]
    pub root: usize,
    #[serde(default)]
    pub decay_rate: f64,
    /// Overrides the default `X_0 = {root}`.
    #[serde(default)]
    pub x0: Option<Vec<usize>>,
}

impl GraphConfig {
    pub fn adjacency(&self) -> Result<Vec<Vec<usize>>> {
        if let Some(preset) = self.preset {
            let n = self
                .size
                .ok_or_else(|| Error::Config("graph preset needs `size`".into()))?;
            return Ok(preset_adjacency(preset, n));
        }
        let n = self
            .points
            .or_else(|| self.edges.iter().map(|&(a, b)| a.max(b) + 1).max())
            .ok_or_else(|| Error::Config("graph needs a preset or edges".into()))?;
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            if a >= n || b >= n {
                return Err(Error::Config(format!("edge ({a}, {b}) out of range")));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        Ok(adj)
    }
}

pub fn preset_adjacency(preset: GraphPreset, n: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|i| match preset {
            GraphPreset::Complete => (0..n).filter(|&j| j != i).collect(),
            GraphPreset::Path => [i.checked_sub(1), (i + 1 < n).then_some(i + 1)]
                .into_iter()
                .flatten()
                .collect(),
            GraphPreset::Cycle if n > 2 => vec![(i + n - 1) % n, (i + 1) % n],
            GraphPreset::Cycle => (0..n).filter(|&j| j != i).collect(),
        })
        .collect()
}

fn bfs(adj: &[Vec<usize>], start: usize, dist: &mut [Option<usize>]) {
    let mut queue = VecDeque::from([start]);
    dist[start] = Some(0);
    while let Some(x) = queue.pop_front() {
        let d = dist[x].unwrap_or(0);
        for &y in &adj[x] {
            if dist[y].is_none() {
                dist[y] = Some(d + 1);
                queue.push_back(y);
            }
        }
    }
}

/// Counting measure, `U = edges ∪ diagonal`,
/// `W = W_+ = exp(-decay_rate * dist(·, root))`, `X_0 = {root}`.
///
/// Vertices unreachable from the root are measured from the smallest vertex
/// of their own component, and a warning is recorded.
pub fn make_graph_scenario(
    adjacency: &[Vec<usize>],
    root: usize,
    decay_rate: f64,
    x0: Option<Vec<usize>>,
) -> Result<Scenario> {
    let n = adjacency.len();
    if root >= n {
        return Err(Error::Parameter(format!("root {root} out of range")));
    }
    if !(decay_rate >= 0.0 && decay_rate.is_finite()) {
        return Err(Error::Parameter(format!("decay rate {decay_rate} must be >= 0")));
    }
    let mut forward: Vec<Vec<usize>> = (0..n).map(|x| vec![x]).collect();
    for (x, nb) in adjacency.iter().enumerate() {
        for &y in nb {
            if y >= n {
                return Err(Error::Parameter(format!("edge ({x}, {y}) out of range")));
            }
            forward[x].push(y);
            forward[y].push(x);
        }
    }
    let unit = Relation::from_forward(forward)?;
    let valence = (0..n).map(|x| unit.out(x).len() - 1).max().unwrap_or(0);
    let space = Space::new(vec![1.0; n], unit, vec![])?;

    let mut dist = vec![None; n];
    bfs(adjacency, root, &mut dist);
    let mut warnings = Vec::new();
    let mut components = 1.0;
    while let Some(start) = dist.iter().position(Option::is_none) {
        if warnings.is_empty() {
            warnings.push("graph is disconnected; expect an unbounded constant".into());
        }
        components += 1.0;
        bfs(adjacency, start, &mut dist);
    }
    let w: Vec<f64> = dist
        .iter()
        .map(|d| (-decay_rate * d.unwrap_or(0) as f64).exp())
        .collect();
    let weights = WeightPair::equal(w, x0.unwrap_or_else(|| vec![root]))?;
    let diagnostics = BTreeMap::from([
        ("max_valence".to_string(), valence as f64),
        ("components".to_string(), components),
    ]);
    Ok(Scenario {
        name: "graph".into(),
        space,
        weights,
        constraint: Constraint::X0Mean,
        lattice: None,
        diagnostics,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Decaying weights, mean zero on `X_0`.
    #[default]
    Neumann,
    /// Growing weights, `f = 0` on the window boundary.
    Dirichlet,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatticeMode {
    /// Raw weights everywhere.
    #[default]
    Plain,
    /// Raw weights outside `R + 1`, exponential core `A e^{-3 lambda (|x|-R-1)}` inside.
    Core,
    /// Core inside, ball-averaged `W_+` outside.
    Bigcor,
}

fn default_half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub dim: usize,
    pub extent: f64,
    pub spacing: f64,
    pub s_exp: f64,
    pub eps: f64,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub mode: LatticeMode,
    /// `R`: the core is `|x| <= R + 1`.
    #[serde(default = "default_half")]
    pub core_radius: f64,
    #[serde(default = "default_half")]
    pub x0_radius: f64,
    /// Decay rate of the core; defaults to `1.05 lambda0`.
    #[serde(default)]
    pub weight_lambda: Option<f64>,
    /// Subsolution constant; defaults to the smallest value of
    /// `σ(σ|∇V|² - ΔV)` over the window outside `R`.
    #[serde(default)]
    pub rho: Option<f64>,
    /// Defaults to `rho / 2`.
    #[serde(default)]
    pub eta: Option<f64>,
    /// Exponent `σ` in the ball average of `W^σ`.
    #[serde(default = "default_half")]
    pub power: f64,
}

impl LatticeConfig {
    pub fn gaussian(dim: usize, extent: f64, spacing: f64, s_exp: f64, eps: f64) -> Self {
        Self {
            dim,
            extent,
            spacing,
            s_exp,
            eps,
            variant: Variant::Neumann,
            mode: LatticeMode::Plain,
            core_radius: 0.5,
            x0_radius: 0.5,
            weight_lambda: None,
            rho: None,
            eta: None,
            power: 0.5,
        }
    }
}

fn check_cap(dim: usize, extent: f64, spacing: f64) -> Result<()> {
    if !(spacing > 0.0 && extent > 0.0) {
        return Err(Error::Config("extent and spacing must be positive".into()));
    }
    let side = 2.0 * (extent / spacing).round() + 1.0;
    if side.powi(dim as i32) > MAX_POINTS as f64 {
        return Err(Error::Config(format!(
            "lattice would have {} points, cap is {MAX_POINTS}",
            side.powi(dim as i32)
        )));
    }
    Ok(())
}

/// Fraction of points whose unit ball is cut by the window.
fn clipping_fraction(lattice: &Lattice, unit: &Relation) -> f64 {
    let full = lattice.offsets_within(1.0).len();
    let clipped = (0..lattice.len()).filter(|&i| unit.out(i).len() < full).count();
    clipped as f64 / lattice.len().max(1) as f64
}

/// Grid on `[-L, L]^d`, cell measure `h^d`, `U = {|x - y| <= 1}` and weights
/// `W = exp(∓|x|^s)`, `W_+ = exp(eps s |x|^{s-1}) W`.
pub fn make_lattice_scenario(cfg: &LatticeConfig) -> Result<Scenario> {
    if !(cfg.s_exp >= 1.0) {
        return Err(Error::Parameter(format!("s_exp = {} must be >= 1", cfg.s_exp)));
    }
    if !(0.0..1.0).contains(&cfg.eps) {
        return Err(Error::Parameter(format!("eps = {} must lie in [0, 1)", cfg.eps)));
    }
    check_cap(cfg.dim, cfg.extent, cfg.spacing)?;
    if cfg.variant == Variant::Dirichlet && cfg.mode != LatticeMode::Plain {
        return Err(Error::Parameter("core modes apply to the neumann variant only".into()));
    }
    let lattice = Lattice::cube(cfg.dim, cfg.extent, cfg.spacing)?;
    let unit = lattice.euclidean_relation(1.0);
    let n = lattice.len();
    let mu = vec![lattice.cell_measure(); n];
    let space = Space::new(mu, unit.clone(), vec![])?;
    let norms: Vec<f64> = (0..n).map(|i| lattice.norm(i)).collect();
    let sign = match cfg.variant {
        Variant::Neumann => -1.0,
        Variant::Dirichlet => 1.0,
    };
    let raw_w: Vec<f64> = norms.iter().map(|r| (sign * r.powf(cfg.s_exp)).exp()).collect();
    let gain = |r: f64| (cfg.eps * cfg.s_exp * r.powf(cfg.s_exp - 1.0)).exp();
    let mut w = raw_w.clone();
    let mut wp: Vec<f64> = raw_w.iter().zip(&norms).map(|(v, r)| v * gain(*r)).collect();

    let mut diagnostics = BTreeMap::from([("clipping_fraction".to_string(), clipping_fraction(&lattice, &unit))]);
    let mut warnings = Vec::new();

    if cfg.mode != LatticeMode::Plain {
        let edge = cfg.core_radius + 1.0;
        let inside: Vec<usize> = (0..n).filter(|&i| norms[i] <= edge + 1e-12).collect();
        if inside.is_empty() {
            return Err(Error::Parameter("core contains no lattice points".into()));
        }
        let big_a = inside.iter().map(|&i| raw_w[i]).fold(0.0, f64::max);
        let small_a = inside.iter().map(|&i| raw_w[i]).fold(f64::INFINITY, f64::min);
        let lambda = match cfg.weight_lambda {
            Some(l) => l,
            None => 1.05 * space.fit_growth_constant(3)?.lambda0,
        };
        diagnostics.insert("core_max".into(), big_a);
        diagnostics.insert("core_min".into(), small_a);
        diagnostics.insert("weight_lambda".into(), lambda);
        if cfg.mode == LatticeMode::Bigcor {
            let sigma = cfg.power;
            if !(sigma > 0.0 && sigma < 1.0) {
                return Err(Error::Parameter(format!("power = {sigma} must lie in (0, 1)")));
            }
            let d = cfg.dim as f64;
            let s = cfg.s_exp;
            let rho = match cfg.rho {
                Some(r) => r,
                None => norms
                    .iter()
                    .filter(|&&r| r > cfg.core_radius)
                    .map(|&r| {
                        let grad2 = s * s * r.powf(2.0 * s - 2.0);
                        let lap = s * (s + d - 2.0) * r.powf(s - 2.0);
                        sigma * (sigma * grad2 - lap)
                    })
                    .fold(f64::INFINITY, f64::min),
            };
            if !(rho > 0.0) {
                return Err(Error::Parameter(format!(
                    "rho = {rho} must be positive; enlarge the core radius"
                )));
            }
            let eta = cfg.eta.unwrap_or(0.5 * rho);
            let factor = (2.0 * (d + 2.0) + eta) / (2.0 * (d + 2.0) + rho);
            let mut clamped = 0usize;
            for i in 0..n {
                if norms[i] <= edge + 1e-12 {
                    continue;
                }
                let ball = unit.out(i);
                let avg = ball.iter().map(|&j| raw_w[j].powf(sigma)).sum::<f64>() / ball.len() as f64;
                let candidate = (factor * avg).powf(1.0 / sigma);
                if candidate < raw_w[i] {
                    clamped += 1;
                }
                wp[i] = candidate.max(raw_w[i]);
            }
            diagnostics.insert("rho".into(), rho);
            diagnostics.insert("eta".into(), eta);
            diagnostics.insert("bigcor_clamped".into(), clamped as f64);
            if clamped > 0 {
                warnings.push(format!("{clamped} window-clipped points had W_+ raised to W"));
            }
        }
        for &i in &inside {
            let v = big_a * (-3.0 * lambda * (norms[i] - edge)).exp();
            w[i] = v;
            wp[i] = v;
        }
        // Jump between the inner value A and the raw weight at the core edge.
        let rim = inside
            .iter()
            .copied()
            .max_by(|&a, &b| norms[a].total_cmp(&norms[b]))
            .expect("core is nonempty");
        diagnostics.insert("branch_ratio".into(), big_a / raw_w[rim]);
    }

    let (x0, constraint) = match cfg.variant {
        Variant::Neumann => {
            let x0: Vec<usize> = (0..n).filter(|&i| norms[i] <= cfg.x0_radius + 1e-12).collect();
            (x0, Constraint::X0Mean)
        }
        Variant::Dirichlet => {
            let shell = (0..n).filter(|&i| !lattice.is_interior(i)).collect();
            (Vec::new(), Constraint::Vanish(shell))
        }
    };
    let weights = WeightPair::new(w, wp, x0)?;
    Ok(Scenario {
        name: "lattice".into(),
        space,
        weights,
        constraint,
        lattice: Some(lattice),
        diagnostics,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainShape {
    /// Two unit squares joined by a corridor.
    #[default]
    Dumbbell,
    /// Two unit squares with no corridor.
    Separated,
    Square,
}

fn default_pixel() -> f64 {
    0.05
}
fn default_corridor() -> f64 {
    0.3
}
fn default_gap() -> f64 {
    1.0
}
fn default_side() -> f64 {
    2.0
}
fn default_threshold() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    #[serde(default)]
    pub shape: DomainShape,
    #[serde(default = "default_pixel")]
    pub pixel: f64,
    #[serde(default = "default_corridor")]
    pub corridor_width: f64,
    #[serde(default = "default_gap")]
    pub gap: f64,
    #[serde(default = "default_side")]
    pub side: f64,
    #[serde(default = "default_threshold")]
    pub c_threshold: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            shape: DomainShape::Dumbbell,
            pixel: default_pixel(),
            corridor_width: default_corridor(),
            gap: default_gap(),
            side: default_side(),
            c_threshold: default_threshold(),
        }
    }
}

/// Boolean pixel grid; pixel `(i, j)` has centre `((i + ½) h, (j + ½) h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMask {
    pub width: usize,
    pub height: usize,
    pub pixel: f64,
    pub cells: Vec<bool>,
}

impl PixelMask {
    pub fn from_predicate<F: Fn(f64, f64) -> bool>(width: f64, height: f64, pixel: f64, inside: F) -> Result<Self> {
        if !(pixel > 0.0) {
            return Err(Error::Config("pixel size must be positive".into()));
        }
        let nx = (width / pixel).round() as usize;
        let ny = (height / pixel).round() as usize;
        if nx * ny > MAX_POINTS {
            return Err(Error::Config(format!("{} pixels exceed the cap", nx * ny)));
        }
        let mut cells = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                cells.push(inside((i as f64 + 0.5) * pixel, (j as f64 + 0.5) * pixel));
            }
        }
        Ok(Self {
            width: nx,
            height: ny,
            pixel,
            cells,
        })
    }

    pub fn from_config(cfg: &DomainConfig) -> Result<Self> {
        match cfg.shape {
            DomainShape::Square => Self::from_predicate(cfg.side, cfg.side, cfg.pixel, |_, _| true),
            DomainShape::Dumbbell | DomainShape::Separated => {
                let gap = cfg.gap;
                let half = if cfg.shape == DomainShape::Dumbbell {
                    0.5 * cfg.corridor_width
                } else {
                    -1.0
                };
                Self::from_predicate(2.0 + gap, 1.0, cfg.pixel, move |x, y| {
                    x < 1.0 || x > 1.0 + gap || (y - 0.5).abs() < half
                })
            }
        }
    }

    fn is_set(&self, i: i64, j: i64) -> bool {
        i >= 0
            && j >= 0
            && (i as usize) < self.width
            && (j as usize) < self.height
            && self.cells[j as usize * self.width + i as usize]
    }
}

/// Output of the `O_n` recursion on a pixel domain.
#[derive(Debug, Clone)]
pub struct DomainScenario {
    pub scenario: Scenario,
    /// `V(x) = min{n : x in O_n}` per pixel of the space.
    pub levels: Vec<Option<usize>>,
    pub covered: bool,
    /// First `n` with `Omega ⊆ O_n`.
    pub n_star: Option<usize>,
    /// Step at which no outside pixel had positive overlap.
    pub stalled_at: Option<usize>,
    pub o1: Vec<usize>,
}

/// Pixels of `Omega` with `U = {|x - y| < 1}`, seeded by the largest
/// inscribed disk of radius at most 1/2 and grown by
/// `O_n = {y : m(B_y ∩ O_{n-1}) > c/n}`. Weights `(e^{-V}, e^{-V})`,
/// `X_0 = O_1`.
pub fn make_domain_scenario(mask: &PixelMask, c_threshold: f64) -> Result<DomainScenario> {
    if !(c_threshold > 0.0) {
        return Err(Error::Parameter("c_threshold must be positive".into()));
    }
    let h = mask.pixel;
    let sites: Vec<[i32; 3]> = (0..mask.height)
        .flat_map(|j| (0..mask.width).map(move |i| (i, j)))
        .filter(|&(i, j)| mask.cells[j * mask.width + i])
        .map(|(i, j)| [i as i32, j as i32, 0])
        .collect();
    if sites.is_empty() {
        return Err(Error::Domain("pixel mask is empty".into()));
    }
    let lattice = Lattice::from_sites(2, h, sites);
    let n = lattice.len();
    let unit = lattice.euclidean_relation(1.0 - 1e-6);
    let cell = h * h;
    let space = Space::new(vec![cell; n], unit.clone(), vec![])?;

    // clearance of each pixel centre from the complement, capped at 1/2
    let reach = (0.5 / h).ceil() as i64 + 1;
    let clearance: Vec<f64> = crate::par::map_range(n, |k| {
        let s = lattice.site(k);
        let (ci, cj) = (s[0] as i64, s[1] as i64);
        let mut best = 0.5_f64;
        for dj in -reach..=reach {
            for di in -reach..=reach {
                if mask.is_set(ci + di, cj + dj) {
                    continue;
                }
                let gx = ((di.abs() as f64) - 0.5).max(0.0) * h;
                let gy = ((dj.abs() as f64) - 0.5).max(0.0) * h;
                best = best.min((gx * gx + gy * gy).sqrt());
            }
        }
        best
    });
    let centre = (0..n).fold(0, |b, k| if clearance[k] > clearance[b] { k } else { b });
    let radius = clearance[centre];
    let o1: Vec<usize> = (0..n)
        .filter(|&k| lattice.distance(k, centre) < radius - 1e-12 || k == centre)
        .collect();

    let mut level: Vec<Option<usize>> = vec![None; n];
    o1.iter().for_each(|&k| level[k] = Some(1));
    let mut member = vec![false; n];
    o1.iter().for_each(|&k| member[k] = true);
    let mut step = 1;
    let mut stalled_at = None;
    let mut n_star = None;
    if member.iter().all(|&m| m) {
        n_star = Some(1);
    }
    while n_star.is_none() && stalled_at.is_none() {
        step += 1;
        let overlap: Vec<usize> = crate::par::map_range(n, |y| {
            unit.out(y).iter().filter(|&&z| member[z]).count()
        });
        let next: Vec<bool> = overlap
            .iter()
            .map(|&c| c as f64 * cell > c_threshold / step as f64)
            .collect();
        if step == 2 && o1.iter().any(|&k| !next[k]) {
            return Err(Error::Parameter(format!(
                "c_threshold = {c_threshold} too large: O_1 is not inside O_2"
            )));
        }
        let positive_outside = (0..n).any(|y| !member[y] && overlap[y] > 0);
        for y in 0..n {
            if next[y] && !member[y] {
                member[y] = true;
                level[y] = Some(step);
            }
        }
        if member.iter().all(|&m| m) {
            n_star = Some(step);
        } else if !positive_outside {
            stalled_at = Some(step);
        }
    }

    let covered = n_star.is_some();
    let fallback = step + 1;
    let w: Vec<f64> = level
        .iter()
        .map(|l| (-(l.unwrap_or(fallback) as f64)).exp())
        .collect();
    let weights = WeightPair::equal(w, o1.clone())?;
    let mut warnings = Vec::new();
    if !covered {
        warnings.push(format!(
            "O_n recursion stalled at step {step}; {} pixels uncovered",
            level.iter().filter(|l| l.is_none()).count()
        ));
    }
    let diagnostics = BTreeMap::from([
        ("pixels".to_string(), n as f64),
        ("o1_radius".to_string(), radius),
        ("o1_pixels".to_string(), o1.len() as f64),
        ("steps".to_string(), step as f64),
        ("covered".to_string(), if covered { 1.0 } else { 0.0 }),
    ]);
    Ok(DomainScenario {
        scenario: Scenario {
            name: "domain".into(),
            space,
            weights,
            constraint: Constraint::X0Mean,
            lattice: Some(lattice),
            diagnostics,
            warnings,
        },
        levels: level,
        covered,
        n_star,
        stalled_at,
        o1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoltzmannConfig {
    pub dim: usize,
    pub extent: f64,
    pub spacing: f64,
    #[serde(default)]
    pub alpha: f64,
}

/// `d(v, v')^2 = |v - v'|^2 + ¼(|v|^2 - |v'|^2)^2`.
pub fn boltzmann_distance(v: &[f64], w: &[f64]) -> f64 {
    let diff: f64 = v.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum();
    let nv: f64 = v.iter().map(|a| a * a).sum();
    let nw: f64 = w.iter().map(|a| a * a).sum();
    (diff + 0.25 * (nv - nw) * (nv - nw)).sqrt()
}

/// `<v> = sqrt(1 + |v|^2)`.
pub fn japanese_bracket(v: &[f64]) -> f64 {
    (1.0 + v.iter().map(|a| a * a).sum::<f64>()).sqrt()
}

/// Velocity grid `|v| <= L` restricted to the component of the origin under
/// `d(v, v') <= 1`.
///
/// Left weight `W_+ = <v>^α e^{-|v|^2}`. The right side
/// `sum_{d <= 1} |Δf|^2 <v>^{α+1} e^{-|v|^2}` is matched by
/// `W = κ mu(B_v) <v>^{α+1} e^{-|v|^2}` with the largest `κ` keeping
/// `W <= W_+`; an inequality with constant `C` for the pair gives constant
/// `C κ` for the unnormalized form.
pub fn make_boltzmann_scenario(cfg: &BoltzmannConfig) -> Result<Scenario> {
    if !(1..=3).contains(&cfg.dim) {
        return Err(Error::Parameter(format!("dimension {} not in 1..=3", cfg.dim)));
    }
    check_cap(cfg.dim, cfg.extent, cfg.spacing)?;
    let half = (cfg.extent / cfg.spacing).round() as i32;
    let extent = cfg.extent;
    let window = Lattice::from_filter(cfg.dim, cfg.spacing, half, |v| {
        v.iter().map(|a| a * a).sum::<f64>().sqrt() <= extent + 1e-12
    })?;
    let metric = |l: &Lattice| {
        let coords: Vec<Vec<f64>> = (0..l.len()).map(|i| l.coords(i)).collect();
        l.relation_within(1.0, move |i, j| boltzmann_distance(&coords[i], &coords[j]) <= 1.0 + 1e-12)
    };
    let full = metric(&window);
    let labels = full.components();
    let origin = window
        .index_of(&[0, 0, 0])
        .ok_or_else(|| Error::Domain("origin not on the grid".into()))?;
    let keep: Vec<usize> = (0..window.len()).filter(|&i| labels[i] == labels[origin]).collect();
    let dropped = window.len() - keep.len();
    let lattice = window.restrict(&keep);
    let unit = metric(&lattice);
    let n = lattice.len();
    let space = Space::new(vec![lattice.cell_measure(); n], unit, vec![])?;

    let profile: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v = lattice.coords(i);
            let g = (-v.iter().map(|a| a * a).sum::<f64>()).exp();
            let b = japanese_bracket(&v);
            (b.powf(cfg.alpha) * g, b.powf(cfg.alpha + 1.0) * g)
        })
        .collect();
    let wp: Vec<f64> = profile.iter().map(|p| p.0).collect();
    let shape: Vec<f64> = (0..n).map(|i| space.ball_mass(i) * profile[i].1).collect();
    let kappa = (0..n).map(|i| wp[i] / shape[i]).fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = shape.iter().zip(&wp).map(|(s, b)| (kappa * s).min(*b)).collect();
    let weights = WeightPair::new(w, wp, vec![origin_index(&lattice)?])?;
    let mut warnings = Vec::new();
    if dropped > 0 {
        warnings.push(format!("{dropped} grid points outside the origin's component dropped"));
    }
    let diagnostics = BTreeMap::from([
        ("kappa".to_string(), kappa),
        ("dropped".to_string(), dropped as f64),
        ("points".to_string(), n as f64),
    ]);
    Ok(Scenario {
        name: "boltzmann".into(),
        space,
        weights,
        constraint: Constraint::WplusMean,
        lattice: Some(lattice),
        diagnostics,
        warnings,
    })
}

fn origin_index(lattice: &Lattice) -> Result<usize> {
    lattice
        .index_of(&[0, 0, 0])
        .ok_or_else(|| Error::Domain("origin not on the grid".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScenarioConfig {
    Graph(GraphConfig),
    Lattice(LatticeConfig),
    Domain(DomainConfig),
    Boltzmann(BoltzmannConfig),
}

pub fn build_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    match cfg {
        ScenarioConfig::Graph(g) => make_graph_scenario(&g.adjacency()?, g.root, g.decay_rate, g.x0.clone()),
        ScenarioConfig::Lattice(l) => make_lattice_scenario(l),
        ScenarioConfig::Domain(d) => {
            let out = make_domain_scenario(&PixelMask::from_config(d)?, d.c_threshold)?;
            let mut sc = out.scenario;
            if let Some(n) = out.n_star {
                sc.diagnostics.insert("n_star".into(), n as f64);
            }
            if let Some(n) = out.stalled_at {
                sc.diagnostics.insert("stalled_at".into(), n as f64);
            }
            Ok(sc)
        }
        ScenarioConfig::Boltzmann(b) => make_boltzmann_scenario(b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::best_constant_p2;
    use crate::weights::{search_admissibility, SearchGrid};

    #[test]
    fn complete_graph_scenario() {
        let sc = make_graph_scenario(&preset_adjacency(GraphPreset::Complete, 5), 0, 0.0, Some((0..5).collect())).unwrap();
        let c = best_constant_p2(&sc.space, &sc.weights, &sc.constraint).unwrap();
        assert!((c.constant.unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(sc.diagnostics["max_valence"], 4.0);
    }

    #[test]
    fn decaying_path_is_searchable() {
        let sc = make_graph_scenario(&preset_adjacency(GraphPreset::Path, 21), 0, 4f64.ln(), None).unwrap();
        let g = sc.space.fit_growth_constant(4).unwrap();
        let out = search_admissibility(&sc.space, &sc.weights, &SearchGrid::default_for(&g), &g).unwrap();
        assert!(out.certificate().is_some());
    }

    #[test]
    fn disjoint_triangles_unbounded() {
        let adj = vec![vec![1, 2], vec![0, 2], vec![0, 1], vec![4, 5], vec![3, 5], vec![3, 4]];
        let sc = make_graph_scenario(&adj, 0, 0.0, Some((0..6).collect())).unwrap();
        assert_eq!(sc.warnings.len(), 1);
        let c = best_constant_p2(&sc.space, &sc.weights, &sc.constraint).unwrap();
        assert!(c.constant.is_none());
    }

    #[test]
    fn lattice_eps_zero_has_equal_weights() {
        let sc = make_lattice_scenario(&LatticeConfig::gaussian(1, 3.0, 0.25, 2.0, 0.0)).unwrap();
        assert_eq!(sc.weights.w(), sc.weights.w_plus());
        assert_eq!(sc.space.len(), 25);
        assert_eq!(sc.weights.x0().len(), 5);
    }

    #[test]
    fn lattice_cap_is_enforced() {
        let cfg = LatticeConfig::gaussian(3, 10.0, 0.1, 2.0, 0.5);
        assert!(matches!(make_lattice_scenario(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn bigcor_weights() {
        let mut cfg = LatticeConfig::gaussian(1, 6.0, 0.25, 2.0, 0.5);
        cfg.mode = LatticeMode::Bigcor;
        cfg.core_radius = 1.0;
        let sc = make_lattice_scenario(&cfg).unwrap();
        let lattice = sc.lattice.as_ref().unwrap();
        for i in 0..sc.space.len() {
            let r = lattice.norm(i);
            assert!(sc.weights.w()[i] <= sc.weights.w_plus()[i]);
            if r > 2.0 + 1e-9 {
                assert_eq!(sc.weights.w()[i], (-r * r).exp());
            }
        }
        assert!(sc.diagnostics["rho"] > 0.0);
    }

    #[test]
    fn dirichlet_vanishes_on_shell() {
        let mut cfg = LatticeConfig::gaussian(1, 3.0, 0.25, 1.0, 0.5);
        cfg.variant = Variant::Dirichlet;
        let sc = make_lattice_scenario(&cfg).unwrap();
        assert_eq!(sc.constraint, Constraint::Vanish(vec![0, 24]));
        let c = best_constant_p2(&sc.space, &sc.weights, &sc.constraint).unwrap();
        assert!(c.is_bounded());
    }

    #[test]
    fn boltzmann_metric() {
        assert_eq!(boltzmann_distance(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        let a = [0.3, -1.2];
        let b = [1.1, 0.4];
        assert_eq!(boltzmann_distance(&a, &b), boltzmann_distance(&b, &a));
        assert!((boltzmann_distance(&[2.0, 0.0], &[0.0, 0.0]).powi(2) - 8.0).abs() < 1e-14);
    }

    #[test]
    fn boltzmann_scenario_shape() {
        let sc = make_boltzmann_scenario(&BoltzmannConfig {
            dim: 2,
            extent: 2.0,
            spacing: 0.25,
            alpha: 0.0,
        })
        .unwrap();
        assert!(sc.space.unit().is_symmetric());
        let kappa = sc.diagnostics["kappa"];
        assert!(kappa > 0.0);
        for i in 0..sc.space.len() {
            assert!(sc.weights.w()[i] <= sc.weights.w_plus()[i]);
        }
    }

    #[test]
    fn square_domain_is_covered() {
        let cfg = DomainConfig {
            shape: DomainShape::Square,
            pixel: 0.1,
            ..DomainConfig::default()
        };
        let out = make_domain_scenario(&PixelMask::from_config(&cfg).unwrap(), 0.1).unwrap();
        assert!(out.covered);
        let n_star = out.n_star.unwrap();
        assert!(n_star <= 5);
        // nested levels, e^{-V} bounded below by e^{-n_star}
        assert!(out.levels.iter().all(|l| l.unwrap() <= n_star));
        let w = out.scenario.weights.w();
        assert!(w.iter().all(|&v| v >= (-(n_star as f64)).exp()));
    }

    #[test]
    fn separated_domain_stalls() {
        let cfg = DomainConfig {
            shape: DomainShape::Separated,
            pixel: 0.1,
            gap: 1.2,
            ..DomainConfig::default()
        };
        let out = make_domain_scenario(&PixelMask::from_config(&cfg).unwrap(), 0.1).unwrap();
        assert!(!out.covered);
        assert!(out.stalled_at.is_some());
        let c = best_constant_p2(&out.scenario.space, &out.scenario.weights, &out.scenario.constraint).unwrap();
        assert!(c.constant.is_none());
    }

    #[test]
    fn oversized_threshold_is_rejected() {
        let cfg = DomainConfig {
            shape: DomainShape::Square,
            pixel: 0.1,
            ..DomainConfig::default()
        };
        let mask = PixelMask::from_config(&cfg).unwrap();
        assert!(make_domain_scenario(&mask, 5.0).is_err());
    }
}
