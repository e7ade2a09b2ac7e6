//! Weight pairs and admissibility certificates.
//!
//! A pair `(W, W_+)` with exceptional set `X_0` is admissible with
//! parameters `(lambda, epsilon, s)` when, for every `(x, y)` in `U` with
//! `x` outside `X_0`,
//!
//! ```text
//! W_+(x)^s * epsilon * mu(B_y) <= sum_{z in B*_x, W(z) >= lambda W_+(x)} W(z)^s mu(z)
//! ```
//!
//! and `X_0` satisfies `X_0 x X_0 ⊆ U` together with
//! `W_+(x) mu(B_y) <= C W(y) mu(X_0)` for `x, y` in `X_0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Lattice;
use crate::space::{geometric_grid, GrowthFit, Space};
use crate::{leq_slack, par};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightPair {
    w: Vec<f64>,
    w_plus: Vec<f64>,
    x0: Vec<usize>,
}

impl WeightPair {
    pub fn new(w: Vec<f64>, w_plus: Vec<f64>, mut x0: Vec<usize>) -> Result<Self> {
        if w.len() != w_plus.len() {
            return Err(Error::Domain(format!(
                "W has {} entries, W_+ has {}",
                w.len(),
                w_plus.len()
            )));
        }
        for (i, (&a, &b)) in w.iter().zip(&w_plus).enumerate() {
            if !(a.is_finite() && b.is_finite() && a >= 0.0 && b >= 0.0) {
                return Err(Error::Domain(format!("weights at point {i} must be finite and >= 0")));
            }
            if !leq_slack(a, b) {
                return Err(Error::Domain(format!("W_+({i}) = {b} < W({i}) = {a}")));
            }
        }
        x0.sort_unstable();
        x0.dedup();
        if let Some(&bad) = x0.iter().find(|&&i| i >= w.len()) {
            return Err(Error::Domain(format!("exceptional point {bad} out of range")));
        }
        Ok(Self { w, w_plus, x0 })
    }

    /// `W = W_+`.
    pub fn equal(w: Vec<f64>, x0: Vec<usize>) -> Result<Self> {
        Self::new(w.clone(), w, x0)
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn w_plus(&self) -> &[f64] {
        &self.w_plus
    }

    pub fn x0(&self) -> &[usize] {
        &self.x0
    }

    pub fn x0_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        for &i in &self.x0 {
            mask[i] = true;
        }
        mask
    }

    pub fn with_x0(mut self, mut x0: Vec<usize>) -> Self {
        x0.sort_unstable();
        x0.dedup();
        self.x0 = x0;
        self
    }

    pub(crate) fn check_len(&self, space: &Space) -> Result<()> {
        if self.len() != space.len() {
            return Err(Error::Domain(format!(
                "weights have {} entries, space has {} points",
                self.len(),
                space.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityParams {
    pub lambda: f64,
    pub epsilon: f64,
    pub s: f64,
}

impl AdmissibilityParams {
    fn validate(&self) -> Result<()> {
        if !(self.lambda > 1.0) {
            return Err(Error::Parameter(format!("lambda = {} must be > 1", self.lambda)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Parameter(format!("epsilon = {} must be > 0", self.epsilon)));
        }
        if !(0.0..1.0).contains(&self.s) {
            return Err(Error::Parameter(format!("s = {} must lie in [0, 1)", self.s)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    /// The main ball condition fails at `(point, partner)`.
    Connect,
    /// `(point, partner)` in `X_0 x X_0` is missing from `U`.
    X0Diameter,
    /// `W(partner) = 0` makes the `X_0` constant infinite.
    X0Constant,
    /// `lambda` does not exceed the growth constant.
    LambdaBelowGrowth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub point: Option<usize>,
    pub partner: Option<usize>,
    /// Left side minus right side of the failed inequality.
    pub deficit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityCertificate {
    pub lambda: f64,
    pub epsilon: f64,
    pub s: f64,
    /// Smallest `C` with `W_+(x) mu(B_y) <= C W(y) mu(X_0)` on `X_0`; `None`
    /// when `X_0` is empty or the constant is infinite.
    pub x0_constant: Option<f64>,
    pub lambda0: f64,
    pub passed: bool,
    pub violations: Vec<Violation>,
}

impl AdmissibilityCertificate {
    pub fn params(&self) -> AdmissibilityParams {
        AdmissibilityParams {
            lambda: self.lambda,
            epsilon: self.epsilon,
            s: self.s,
        }
    }
}

/// `sum_{z in B*_x, W(z) >= lambda W_+(x)} W(z)^s mu(z)`.
fn thresholded_mass(space: &Space, weights: &WeightPair, x: usize, lambda: f64, s: f64) -> f64 {
    let bar = lambda * weights.w_plus[x];
    space
        .dual_ball(x)
        .iter()
        .filter(|&&z| weights.w[z] >= bar)
        .map(|&z| weights.w[z].powf(s) * space.mu(z))
        .sum()
}

fn max_neighbour_ball(space: &Space, x: usize) -> f64 {
    space
        .ball(x)
        .iter()
        .map(|&y| space.ball_mass(y))
        .fold(0.0, f64::max)
}

/// Diameter and compatibility conditions on `X_0`.
fn check_exceptional_set(space: &Space, weights: &WeightPair) -> (Option<f64>, Vec<Violation>) {
    let x0 = weights.x0();
    if x0.is_empty() {
        return (None, Vec::new());
    }
    let mass = space.mass_of(x0);
    let mut violations = Vec::new();
    let mut c = 0.0_f64;
    for &x in x0 {
        for &y in x0 {
            if !space.unit().contains(x, y) {
                violations.push(Violation {
                    kind: ViolationKind::X0Diameter,
                    point: Some(x),
                    partner: Some(y),
                    deficit: 1.0,
                });
            }
            let num = weights.w_plus[x] * space.ball_mass(y);
            let den = weights.w[y] * mass;
            if num == 0.0 {
                continue;
            }
            if den == 0.0 {
                violations.push(Violation {
                    kind: ViolationKind::X0Constant,
                    point: Some(x),
                    partner: Some(y),
                    deficit: f64::MAX,
                });
                continue;
            }
            c = c.max(num / den);
        }
    }
    let infinite = violations.iter().any(|v| v.kind == ViolationKind::X0Constant);
    (if infinite { None } else { Some(c) }, violations)
}

fn growth_violation(lambda: f64, growth: &GrowthFit) -> Option<Violation> {
    (lambda <= growth.lambda0).then_some(Violation {
        kind: ViolationKind::LambdaBelowGrowth,
        point: None,
        partner: None,
        deficit: growth.lambda0 - lambda,
    })
}

fn finish(
    params: AdmissibilityParams,
    growth: &GrowthFit,
    x0_constant: Option<f64>,
    mut violations: Vec<Violation>,
) -> AdmissibilityCertificate {
    violations.extend(growth_violation(params.lambda, growth));
    AdmissibilityCertificate {
        lambda: params.lambda,
        epsilon: params.epsilon,
        s: params.s,
        x0_constant,
        lambda0: growth.lambda0,
        passed: violations.is_empty(),
        violations,
    }
}

/// Check the admissibility inequality for every `(x, y)` in `U` with `x`
/// outside `X_0`, plus the `X_0` conditions and `lambda > lambda0`.
pub fn check_admissibility(
    space: &Space,
    weights: &WeightPair,
    params: AdmissibilityParams,
    growth: &GrowthFit,
) -> Result<AdmissibilityCertificate> {
    params.validate()?;
    weights.check_len(space)?;
    let in_x0 = weights.x0_mask();
    let per_point = par::map_range(space.len(), |x| {
        if in_x0[x] {
            return Vec::new();
        }
        let rhs = thresholded_mass(space, weights, x, params.lambda, params.s);
        let scale = weights.w_plus[x].powf(params.s) * params.epsilon;
        space
            .ball(x)
            .iter()
            .filter_map(|&y| {
                let lhs = scale * space.ball_mass(y);
                (!leq_slack(lhs, rhs)).then_some(Violation {
                    kind: ViolationKind::Connect,
                    point: Some(x),
                    partner: Some(y),
                    deficit: lhs - rhs,
                })
            })
            .collect()
    });
    let (x0_constant, mut violations) = check_exceptional_set(space, weights);
    violations.splice(0..0, per_point.into_iter().flatten());
    Ok(finish(params, growth, x0_constant, violations))
}

/// The cleaner sufficient condition
/// `(lambda W_+(x))^s (mu(B*_x) + epsilon mu(B_y)) <= sum_{z in B*_x} W(z)^s mu(z)`.
///
/// A pass is cross-checked against [`check_admissibility`] with the same
/// parameters.
pub fn check_admissibility_alt(
    space: &Space,
    weights: &WeightPair,
    params: AdmissibilityParams,
    growth: &GrowthFit,
) -> Result<AdmissibilityCertificate> {
    params.validate()?;
    if params.s <= 0.0 {
        return Err(Error::Parameter(
            "the alternative condition needs s in (0, 1)".into(),
        ));
    }
    weights.check_len(space)?;
    let in_x0 = weights.x0_mask();
    let per_point = par::map_range(space.len(), |x| {
        if in_x0[x] {
            return Vec::new();
        }
        let rhs: f64 = space
            .dual_ball(x)
            .iter()
            .map(|&z| weights.w[z].powf(params.s) * space.mu(z))
            .sum();
        let scale = (params.lambda * weights.w_plus[x]).powf(params.s);
        space
            .ball(x)
            .iter()
            .filter_map(|&y| {
                let lhs =
                    scale * (space.dual_ball_mass(x) + params.epsilon * space.ball_mass(y));
                (!leq_slack(lhs, rhs)).then_some(Violation {
                    kind: ViolationKind::Connect,
                    point: Some(x),
                    partner: Some(y),
                    deficit: lhs - rhs,
                })
            })
            .collect()
    });
    let (x0_constant, mut violations) = check_exceptional_set(space, weights);
    violations.splice(0..0, per_point.into_iter().flatten());
    let cert = finish(params, growth, x0_constant, violations);
    if cert.passed && !check_admissibility(space, weights, params, growth)?.passed {
        return Err(Error::Inconsistency(
            "alternative condition passed but the main condition failed".into(),
        ));
    }
    Ok(cert)
}

/// Parameter grids for [`search_admissibility`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub s: Vec<f64>,
    pub lambda: Vec<f64>,
    pub epsilon: Vec<f64>,
}

impl SearchGrid {
    /// `s in {0, 0.1, …, 0.9}`, `lambda` geometric on `(lambda0, 64 lambda0]`,
    /// `epsilon` geometric on `[1e-6, 1]`.
    pub fn default_for(growth: &GrowthFit) -> Self {
        let l0 = growth.lambda0.max(1.0);
        let steps = 24;
        Self {
            s: (0..10).map(|k| k as f64 / 10.0).collect(),
            lambda: (1..=steps)
                .map(|k| l0 * 64f64.powf(k as f64 / steps as f64))
                .collect(),
            epsilon: geometric_grid(1e-6, 1.0, 25),
        }
    }
}

/// Worst violation at one infeasible grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFailure {
    pub s: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub worst: Violation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum SearchOutcome {
    Feasible { certificate: AdmissibilityCertificate },
    Infeasible { failures: Vec<GridFailure> },
}

impl SearchOutcome {
    pub fn certificate(&self) -> Option<&AdmissibilityCertificate> {
        match self {
            Self::Feasible { certificate } => Some(certificate),
            Self::Infeasible { .. } => None,
        }
    }
}

/// Per-point data for a fixed `(s, lambda)`: the largest admissible
/// `epsilon` at `x` is `mass / scale`.
struct PointMargin {
    point: usize,
    mass: f64,
    scale: f64,
}

/// Grid search for the passing certificate with the largest `lambda`
/// (ties: larger `epsilon`, then smaller `s`).
pub fn search_admissibility(
    space: &Space,
    weights: &WeightPair,
    grid: &SearchGrid,
    growth: &GrowthFit,
) -> Result<SearchOutcome> {
    if grid.s.is_empty() || grid.lambda.is_empty() || grid.epsilon.is_empty() {
        return Err(Error::Parameter("search grids must be nonempty".into()));
    }
    weights.check_len(space)?;
    let in_x0 = weights.x0_mask();
    let (_, x0_violations) = check_exceptional_set(space, weights);
    let combos: Vec<(f64, f64)> = grid
        .s
        .iter()
        .flat_map(|&s| grid.lambda.iter().map(move |&l| (s, l)))
        .collect();

    let mut eps_sorted = grid.epsilon.clone();
    eps_sorted.sort_by(f64::total_cmp);

    let evaluated = par::map_slice(&combos, |&(s, lambda)| {
        let margins: Vec<PointMargin> = (0..space.len())
            .filter(|&x| !in_x0[x])
            .map(|x| PointMargin {
                point: x,
                mass: thresholded_mass(space, weights, x, lambda, s),
                scale: weights.w_plus[x].powf(s) * max_neighbour_ball(space, x),
            })
            .collect();
        let eps_star = margins
            .iter()
            .map(|m| if m.scale == 0.0 { f64::INFINITY } else { m.mass / m.scale })
            .fold(f64::INFINITY, f64::min);
        (s, lambda, eps_star, margins)
    });

    let valid_params = |s: f64, lambda: f64, eps: f64| {
        lambda > 1.0 && (0.0..1.0).contains(&s) && eps > 0.0 && lambda > growth.lambda0
    };

    let mut candidates: Vec<AdmissibilityParams> = Vec::new();
    if x0_violations.is_empty() {
        for (s, lambda, eps_star, _) in &evaluated {
            if let Some(&eps) = eps_sorted
                .iter()
                .rev()
                .find(|&&e| e <= eps_star * (1.0 + 1e-12) && valid_params(*s, *lambda, e))
            {
                candidates.push(AdmissibilityParams {
                    lambda: *lambda,
                    epsilon: eps,
                    s: *s,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.lambda
            .total_cmp(&a.lambda)
            .then(b.epsilon.total_cmp(&a.epsilon))
            .then(a.s.total_cmp(&b.s))
    });
    for params in candidates {
        let cert = check_admissibility(space, weights, params, growth)?;
        if cert.passed {
            return Ok(SearchOutcome::Feasible { certificate: cert });
        }
    }

    let mut failures = Vec::new();
    for (s, lambda, _, margins) in &evaluated {
        for &eps in &grid.epsilon {
            let worst = if let Some(v) = x0_violations.first() {
                v.clone()
            } else if let Some(v) = growth_violation(*lambda, growth) {
                v
            } else if !valid_params(*s, *lambda, eps) {
                Violation {
                    kind: ViolationKind::Connect,
                    point: None,
                    partner: None,
                    deficit: f64::MAX,
                }
            } else {
                let Some((m, deficit)) = margins
                    .iter()
                    .map(|m| (m, eps * m.scale - m.mass))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                else {
                    continue;
                };
                if leq_slack(eps * m.scale, m.mass) {
                    continue;
                }
                Violation {
                    kind: ViolationKind::Connect,
                    point: Some(m.point),
                    partner: None,
                    deficit,
                }
            };
            failures.push(GridFailure {
                s: *s,
                lambda: *lambda,
                epsilon: eps,
                worst,
            });
        }
    }
    Ok(SearchOutcome::Infeasible { failures })
}

/// Central finite-difference evaluation of `s |grad V|^2 - Laplacian V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferentialReport {
    /// Points with `|x| > R` where the expression falls below `rho`.
    pub violations: Vec<usize>,
    /// Points with `|x| > R` excluded because a stencil neighbour is missing.
    pub boundary: Vec<usize>,
    /// Expression value at every interior point (`None` on the boundary).
    pub values: Vec<Option<f64>>,
}

pub fn check_differential_condition(
    lattice: &Lattice,
    potential: &[f64],
    s: f64,
    rho: f64,
    radius: f64,
) -> Result<DifferentialReport> {
    if potential.len() != lattice.len() {
        return Err(Error::Domain("potential length does not match lattice".into()));
    }
    if let Some(i) = potential.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("potential is not finite at point {i}")));
    }
    let h = lattice.spacing();
    let values: Vec<Option<f64>> = par::map_range(lattice.len(), |i| {
        if !lattice.is_interior(i) {
            return None;
        }
        let mut grad_sq = 0.0;
        let mut lap = 0.0;
        for axis in 0..lattice.dim() {
            let up = potential[lattice.step(i, axis, 1)?];
            let down = potential[lattice.step(i, axis, -1)?];
            let g = (up - down) / (2.0 * h);
            grad_sq += g * g;
            lap += (up - 2.0 * potential[i] + down) / (h * h);
        }
        Some(s * grad_sq - lap)
    });
    let mut violations = Vec::new();
    let mut boundary = Vec::new();
    for (i, v) in values.iter().enumerate() {
        if lattice.norm(i) <= radius {
            continue;
        }
        match v {
            None => boundary.push(i),
            Some(v) if *v < rho => violations.push(i),
            Some(_) => {}
        }
    }
    Ok(DifferentialReport {
        violations,
        boundary,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanValueReport {
    /// `None` where the ball leaves the lattice.
    pub passed: Vec<Option<bool>>,
    /// Ball average divided by the centre value.
    pub ratios: Vec<Option<f64>>,
    /// `ratio - (1 + rho t^2 / (2 (d + 2)))`.
    pub margins: Vec<Option<f64>>,
    pub skipped: Vec<usize>,
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, five points.
const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Ball average of a lattice function, `None` if the ball leaves the lattice.
fn ball_average(lattice: &Lattice, values: &[f64], i: usize, t: f64) -> Option<f64> {
    if lattice.dim() == 1 {
        ball_average_1d(lattice, values, i, t)
    } else {
        ball_average_nd(lattice, values, i, t)
    }
}

/// One dimension: piecewise-cubic Lagrange interpolant integrated exactly by
/// five-point Gauss–Legendre on each cell piece.
fn ball_average_1d(lattice: &Lattice, values: &[f64], i: usize, t: f64) -> Option<f64> {
    let h = lattice.spacing();
    let k0 = lattice.site(i)[0];
    let centre = k0 as f64 * h;
    let (a, b) = (centre - t, centre + t);
    let first = (a / h).floor() as i32;
    let last = ((b / h).ceil() as i32).max(first + 1);
    let value_at = |k: i32| lattice.index_of(&[k, 0, 0]).map(|j| values[j]);
    // cubic stencil of cell [k, k+1] uses k-1..=k+2
    for k in (first - 1)..=(last + 1) {
        value_at(k)?;
    }
    let mut total = 0.0;
    for k in first..last {
        let lo = (k as f64 * h).max(a);
        let hi = ((k + 1) as f64 * h).min(b);
        if hi <= lo {
            continue;
        }
        let f = [
            value_at(k - 1)?,
            value_at(k)?,
            value_at(k + 1)?,
            value_at(k + 2)?,
        ];
        let interp = |x: f64| {
            let u = x / h - k as f64; // node offsets -1, 0, 1, 2
            let l0 = -u * (u - 1.0) * (u - 2.0) / 6.0;
            let l1 = (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0;
            let l2 = -(u + 1.0) * u * (u - 2.0) / 2.0;
            let l3 = (u + 1.0) * u * (u - 1.0) / 6.0;
            f[0] * l0 + f[1] * l1 + f[2] * l2 + f[3] * l3
        };
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        total += half * GL5.iter().map(|(x, w)| w * interp(mid + half * x)).sum::<f64>();
    }
    Some(total / (2.0 * t))
}

/// `d >= 2`: midpoint sampling on a sub-grid of `h / 8`, multilinear
/// interpolation, normalized by the same quadrature applied to `1`.
fn ball_average_nd(lattice: &Lattice, values: &[f64], i: usize, t: f64) -> Option<f64> {
    const SUB: i32 = 8;
    let d = lattice.dim();
    let h = lattice.spacing();
    let centre = lattice.coords(i);
    let q = h / SUB as f64;
    let reach = (t / q).ceil() as i32;
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut idx = vec![-reach; d];
    loop {
        let offset: Vec<f64> = idx.iter().map(|&k| (k as f64 + 0.5) * q).collect();
        let r2: f64 = offset.iter().map(|v| v * v).sum();
        if r2 < t * t {
            let point: Vec<f64> = centre.iter().zip(&offset).map(|(c, o)| c + o).collect();
            sum += multilinear(lattice, values, &point)?;
            count += 1;
        }
        // odometer over [-reach, reach)
        let mut axis = 0;
        loop {
            if axis == d {
                return (count > 0).then(|| sum / count as f64);
            }
            idx[axis] += 1;
            if idx[axis] < reach {
                break;
            }
            idx[axis] = -reach;
            axis += 1;
        }
    }
}

fn multilinear(lattice: &Lattice, values: &[f64], point: &[f64]) -> Option<f64> {
    let d = lattice.dim();
    let h = lattice.spacing();
    let base: Vec<i32> = point.iter().map(|p| (p / h).floor() as i32).collect();
    let frac: Vec<f64> = point
        .iter()
        .zip(&base)
        .map(|(p, &b)| p / h - b as f64)
        .collect();
    let mut acc = 0.0;
    for corner in 0..(1usize << d) {
        let mut site = [0i32; 3];
        let mut weight = 1.0;
        for a in 0..d {
            let bit = ((corner >> a) & 1) as i32;
            site[a] = base[a] + bit;
            weight *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if weight == 0.0 {
            continue;
        }
        acc += weight * values[lattice.index_of(&site)?];
    }
    Some(acc)
}

/// Check `avg_{B^t_x} F >= (1 + rho t^2 / (2 (d + 2))) F(x)` at every point.
pub fn check_mean_value_bound(
    lattice: &Lattice,
    values: &[f64],
    rho: f64,
    t: f64,
) -> Result<MeanValueReport> {
    if values.len() != lattice.len() {
        return Err(Error::Domain("function length does not match lattice".into()));
    }
    if !(t > 0.0) {
        return Err(Error::Parameter(format!("radius t = {t} must be > 0")));
    }
    if let Some(i) = values.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::Domain(format!("F must be nonnegative, fails at point {i}")));
    }
    let gain = 1.0 + rho * t * t / (2.0 * (lattice.dim() as f64 + 2.0));
    type Point = Option<(bool, Option<f64>, Option<f64>)>;
    let results: Vec<Point> =
        par::map_range(lattice.len(), |i| {
            let avg = ball_average(lattice, values, i, t)?;
            let target = gain * values[i];
            let pass = leq_slack(target, avg);
            if values[i] > 0.0 {
                let ratio = avg / values[i];
                Some((pass, Some(ratio), Some(ratio - gain)))
            } else {
                Some((pass, None, None))
            }
        });
    let mut report = MeanValueReport {
        passed: Vec::with_capacity(values.len()),
        ratios: Vec::with_capacity(values.len()),
        margins: Vec::with_capacity(values.len()),
        skipped: Vec::new(),
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Some((p, ratio, margin)) => {
                report.passed.push(Some(p));
                report.ratios.push(ratio);
                report.margins.push(margin);
            }
            None => {
                report.passed.push(None);
                report.ratios.push(None);
                report.margins.push(None);
                report.skipped.push(i);
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparabilityReport {
    /// `sup_y (sum_{x in B*_y} W(x) mu(x) / mu(B_x)) / W_+(y)`; infinite when
    /// `W_+(y) = 0` with a nonzero numerator.
    pub sup_ratio: f64,
    pub argmax: usize,
    pub infinite_points: Vec<usize>,
}

pub fn check_comparability(space: &Space, weights: &WeightPair) -> Result<ComparabilityReport> {
    weights.check_len(space)?;
    let ratios = par::map_range(space.len(), |y| {
        let num: f64 = space
            .dual_ball(y)
            .iter()
            .map(|&x| weights.w[x] * space.mu(x) / space.ball_mass(x))
            .sum();
        if weights.w_plus[y] > 0.0 {
            num / weights.w_plus[y]
        } else if num > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    });
    let (argmax, sup_ratio) = ratios
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, r)| if r > best.1 { (i, r) } else { best });
    let infinite_points = ratios
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_infinite())
        .map(|(i, _)| i)
        .collect();
    Ok(ComparabilityReport {
        sup_ratio,
        argmax,
        infinite_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Relation;

    fn complete(n: usize) -> Space {
        Space::new(vec![1.0; n], Relation::from_predicate(n, |_, _| true), vec![]).unwrap()
    }

    fn path(n: usize) -> Space {
        Space::new(
            vec![1.0; n],
            Relation::from_predicate(n, |x, y| x.abs_diff(y) <= 1),
            vec![],
        )
        .unwrap()
    }

    fn params(lambda: f64, epsilon: f64, s: f64) -> AdmissibilityParams {
        AdmissibilityParams { lambda, epsilon, s }
    }

    #[test]
    fn w_plus_below_w_is_rejected() {
        assert!(WeightPair::new(vec![1.0, 2.0], vec![1.0, 1.0], vec![]).is_err());
    }

    #[test]
    fn complete_graph_vacuous_certificate() {
        let s = complete(5);
        let w = WeightPair::equal(vec![1.0; 5], (0..5).collect()).unwrap();
        let g = s.fit_growth_constant(4).unwrap();
        let cert = check_admissibility(&s, &w, params(2.0, 0.5, 0.3), &g).unwrap();
        assert!(cert.passed);
        assert_eq!(cert.x0_constant, Some(1.0));
    }

    #[test]
    fn constant_weights_fail_far_from_x0() {
        let s = path(30);
        let w = WeightPair::equal(vec![1.0; 30], vec![0]).unwrap();
        let g = s.fit_growth_constant(8).unwrap();
        let cert = check_admissibility(&s, &w, params(g.lambda0 * 1.5, 0.1, 0.0), &g).unwrap();
        assert!(!cert.passed);
        let failing: Vec<usize> = cert.violations.iter().filter_map(|v| v.point).collect();
        assert!(failing.contains(&29));
        assert!(!failing.contains(&0));
    }

    #[test]
    fn parameter_validation() {
        let s = path(4);
        let w = WeightPair::equal(vec![1.0; 4], vec![]).unwrap();
        let g = s.fit_growth_constant(3).unwrap();
        assert!(check_admissibility(&s, &w, params(1.0, 0.1, 0.0), &g).is_err());
        assert!(check_admissibility(&s, &w, params(2.0, 0.0, 0.0), &g).is_err());
        assert!(check_admissibility(&s, &w, params(2.0, 0.1, 1.0), &g).is_err());
        assert!(check_admissibility_alt(&s, &w, params(2.0, 0.1, 0.0), &g).is_err());
    }

    #[test]
    fn lambda_below_growth_is_flagged() {
        let s = path(9);
        let w: Vec<f64> = (0..9).map(|i| 4f64.powi(-i)).collect();
        let w = WeightPair::equal(w, vec![0]).unwrap();
        let g = s.fit_growth_constant(8).unwrap();
        let lam = (1.0 + g.lambda0) / 2.0;
        let cert = check_admissibility(&s, &w, params(lam, 0.01, 0.0), &g).unwrap();
        assert!(!cert.passed);
        assert!(cert
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::LambdaBelowGrowth));
        assert!(cert.violations.iter().all(|v| v.kind != ViolationKind::Connect));
    }

    #[test]
    fn decaying_path_is_searchable_and_reproducible() {
        let n = 21;
        let s = path(n);
        let w: Vec<f64> = (0..n).map(|i| (-(4f64.ln()) * i as f64).exp()).collect();
        let w = WeightPair::equal(w, vec![0]).unwrap();
        let g = s.fit_growth_constant(n).unwrap();
        let out = search_admissibility(&s, &w, &SearchGrid::default_for(&g), &g).unwrap();
        let cert = out.certificate().expect("feasible").clone();
        assert!(cert.lambda > g.lambda0 && cert.lambda <= 4.0 * (1.0 + 1e-12));
        let again = check_admissibility(&s, &w, cert.params(), &g).unwrap();
        assert!(again.passed && again.violations.is_empty());
    }

    #[test]
    fn search_infeasible_for_constant_weights() {
        let s = path(12);
        let w = WeightPair::equal(vec![1.0; 12], vec![]).unwrap();
        let g = s.fit_growth_constant(6).unwrap();
        match search_admissibility(&s, &w, &SearchGrid::default_for(&g), &g).unwrap() {
            SearchOutcome::Infeasible { failures } => {
                let grid = SearchGrid::default_for(&g);
                assert_eq!(
                    failures.len(),
                    grid.s.len() * grid.lambda.len() * grid.epsilon.len()
                );
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn search_complete_graph_takes_largest_lambda() {
        let s = complete(4);
        let w = WeightPair::equal(vec![1.0; 4], (0..4).collect()).unwrap();
        let g = s.fit_growth_constant(3).unwrap();
        let grid = SearchGrid::default_for(&g);
        let cert = search_admissibility(&s, &w, &grid, &g)
            .unwrap()
            .certificate()
            .cloned()
            .unwrap();
        assert_eq!(cert.lambda, *grid.lambda.last().unwrap());
        assert_eq!(cert.epsilon, 1.0);
        assert_eq!(cert.s, 0.0);
    }

    #[test]
    fn alt_pass_implies_main_pass() {
        let n = 15;
        let s = path(n);
        let w: Vec<f64> = (0..n).map(|i| 8f64.powi(-(i as i32))).collect();
        let w = WeightPair::equal(w, vec![0]).unwrap();
        let g = s.fit_growth_constant(n).unwrap();
        let p = params(g.lambda0 * 1.01, 0.05, 0.5);
        let alt = check_admissibility_alt(&s, &w, p, &g).unwrap();
        assert!(alt.passed, "{:?}", alt.violations);
        assert!(check_admissibility(&s, &w, p, &g).unwrap().passed);
    }

    #[test]
    fn alt_fails_on_zero_neighbourhood() {
        let s = path(5);
        let w = WeightPair::new(vec![0.0, 0.0, 0.0, 0.0, 0.0], vec![1.0; 5], vec![]).unwrap();
        let g = s.fit_growth_constant(4).unwrap();
        let alt = check_admissibility_alt(&s, &w, params(2.0, 0.1, 0.5), &g).unwrap();
        assert!(!alt.passed);
    }

    #[test]
    fn differential_condition_quadratic_potential() {
        for d in [1usize, 2] {
            let h = 0.25;
            let lat = Lattice::cube(d, 4.0, h).unwrap();
            let v: Vec<f64> = (0..lat.len()).map(|i| lat.norm(i).powi(2)).collect();
            let (s, rho, r) = (0.5, 1.0, 0.0);
            let rep = check_differential_condition(&lat, &v, s, rho, r).unwrap();
            let threshold = ((rho + 2.0 * d as f64) / (4.0 * s)).sqrt();
            for i in 0..lat.len() {
                if !lat.is_interior(i) || lat.norm(i) <= r {
                    continue;
                }
                let expect = lat.norm(i) < threshold - 1e-9;
                assert_eq!(rep.violations.contains(&i), expect, "point {i}");
                let value = rep.values[i].unwrap();
                assert!((value - (4.0 * s * lat.norm(i).powi(2) - 2.0 * d as f64)).abs() < 1e-9);
            }
            assert!(!rep.boundary.is_empty());
        }
    }

    #[test]
    fn differential_condition_degenerate_potentials() {
        let lat = Lattice::cube(1, 10.0, 0.1).unwrap();
        let zero = vec![0.0; lat.len()];
        let rep = check_differential_condition(&lat, &zero, 0.5, 0.1, 0.0).unwrap();
        let interior = (0..lat.len()).filter(|&i| lat.is_interior(i) && lat.norm(i) > 0.0).count();
        assert_eq!(rep.violations.len(), interior);

        // log(1 + x^2): the expression decays to zero, violations persist for large R
        let v: Vec<f64> = (0..lat.len()).map(|i| (1.0 + lat.norm(i).powi(2)).ln()).collect();
        for r in [2.0, 5.0, 8.0] {
            let rep = check_differential_condition(&lat, &v, 0.5, 0.05, r).unwrap();
            assert!(!rep.violations.is_empty());
        }
    }

    #[test]
    fn mean_value_constant_is_equality() {
        let lat = Lattice::cube(2, 2.0, 0.1).unwrap();
        let f = vec![3.0; lat.len()];
        let rep = check_mean_value_bound(&lat, &f, 0.0, 0.7).unwrap();
        let checked: Vec<_> = rep.passed.iter().flatten().collect();
        assert!(!checked.is_empty());
        assert!(checked.iter().all(|p| **p));
        assert!(!rep.skipped.is_empty());
    }

    #[test]
    fn mean_value_cosh_matches_series_oracle() {
        let lat = Lattice::cube(1, 3.0, 0.01).unwrap();
        for rho in [0.5f64, 1.0, 2.0] {
            let k = rho.sqrt();
            let f: Vec<f64> = (0..lat.len()).map(|i| (k * lat.coords(i)[0]).cosh()).collect();
            for t in [0.05, 0.3, 1.0] {
                let rep = check_mean_value_bound(&lat, &f, rho, t).unwrap();
                // exact ball average of cosh(k x) over [x-t, x+t] is cosh(kx) sinh(kt)/(kt)
                let exact = (k * t).sinh() / (k * t);
                for (i, r) in rep.ratios.iter().enumerate() {
                    if let Some(r) = r {
                        assert!((r - exact).abs() < 1e-9, "i={i} r={r} exact={exact}");
                        assert_eq!(rep.passed[i], Some(true));
                    }
                }
            }
        }
    }

    #[test]
    fn mean_value_fails_at_strict_maximum() {
        let lat = Lattice::cube(1, 3.0, 0.01).unwrap();
        let f: Vec<f64> = (0..lat.len()).map(|i| 2.0 - lat.coords(i)[0].powi(2)).collect();
        let rep = check_mean_value_bound(&lat, &f.iter().map(|v| v.max(0.0)).collect::<Vec<_>>(), 1.0, 0.5)
            .unwrap();
        let centre = lat.index_of(&[0, 0, 0]).unwrap();
        assert_eq!(rep.passed[centre], Some(false));
    }

    #[test]
    fn comparability_cases() {
        let s = complete(6);
        let w = WeightPair::equal(vec![1.0; 6], vec![]).unwrap();
        let rep = check_comparability(&s, &w).unwrap();
        assert!((rep.sup_ratio - 1.0).abs() < 1e-15);

        // spike in W, W_+ flat except where it must dominate W
        let p = path(9);
        let mut w = vec![1.0; 9];
        w[4] = 1e6;
        let mut wp = vec![1.0; 9];
        wp[4] = 1e6;
        let rep = check_comparability(&p, &WeightPair::new(w, wp, vec![]).unwrap()).unwrap();
        // oracle: neighbour 3 sees 1/2 + 1e6/3 + 1/3 (ball sizes 3, 3, 3)
        let expected = 1.0 / 3.0 + 1e6 / 3.0 + 1.0 / 3.0;
        assert!((rep.sup_ratio - expected).abs() < 1e-6);
        assert!(rep.argmax == 3 || rep.argmax == 5);

        let zero_plus = WeightPair::new(vec![0.0; 9], vec![0.0; 9], vec![]).unwrap();
        let mut w2 = vec![0.0; 9];
        w2[3] = 1.0;
        let mut wp2 = vec![0.0; 9];
        wp2[3] = 1.0;
        let pair2 = WeightPair::new(w2, wp2, vec![]).unwrap();
        let rep2 = check_comparability(&p, &pair2).unwrap();
        assert!(rep2.sup_ratio.is_infinite());
        assert!(rep2.infinite_points.contains(&2));
        assert_eq!(check_comparability(&p, &zero_plus).unwrap().sup_ratio, 0.0);
    }
}
