//! Poincaré sides, the `psi`-weighted fractional seminorm, the Orlicz
//! functional and the sequence lemma behind the log-Sobolev bound.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{geometric_grid, Space};
use crate::weights::WeightPair;
use crate::{leq_slack, par};

/// Arguments of the inner logarithm are clamped here before powering.
const LOG_ARG_CLAMP: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsiKind {
    /// `psi(x) = log^alpha(e + x)`, `psi~ = psi`.
    LogPower,
    /// `psi(x) = exp(c log^alpha(e + x))`,
    /// `psi~(x) = exp(c log^{alpha/(1-alpha)}(e + x))`.
    ExpLogPower,
    /// `psi = psi~ = c`. Only for degenerate tests.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiPair {
    pub kind: PsiKind,
    pub alpha: f64,
    pub c: f64,
    /// Sampled `max psi(xy) / (psi(x) + psi~(y))`.
    pub slow_growth_constant: f64,
}

fn log_e_plus(x: f64) -> f64 {
    (std::f64::consts::E + x).min(LOG_ARG_CLAMP).ln()
}

impl PsiPair {
    pub fn psi(&self, x: f64) -> f64 {
        match self.kind {
            PsiKind::LogPower => log_e_plus(x).powf(self.alpha),
            PsiKind::ExpLogPower => (self.c * log_e_plus(x).powf(self.alpha)).exp(),
            PsiKind::Constant => self.c,
        }
    }

    pub fn psi_tilde(&self, x: f64) -> f64 {
        match self.kind {
            PsiKind::LogPower => self.psi(x),
            PsiKind::ExpLogPower => {
                (self.c * log_e_plus(x).powf(self.alpha / (1.0 - self.alpha))).exp()
            }
            PsiKind::Constant => self.c,
        }
    }

    fn tilde_is_bounded(&self) -> bool {
        match self.kind {
            PsiKind::LogPower => self.alpha == 0.0,
            PsiKind::ExpLogPower => self.alpha == 0.0 || self.c == 0.0,
            PsiKind::Constant => true,
        }
    }
}

/// Build a `(psi, psi~)` pair and measure its slow-growth constant on a
/// log-spaced grid over `[0, 1e8]^2`.
pub fn make_psi_pair(kind: PsiKind, alpha: f64, c: f64) -> Result<PsiPair> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Parameter(format!("alpha = {alpha} must be >= 0")));
    }
    match kind {
        PsiKind::ExpLogPower if alpha >= 1.0 => {
            return Err(Error::Parameter(format!(
                "exp-log-power needs alpha in [0, 1), got {alpha}"
            )))
        }
        PsiKind::ExpLogPower if !(c >= 0.0) => {
            return Err(Error::Parameter(format!("c = {c} must be >= 0")))
        }
        PsiKind::Constant if !(c > 0.0) => {
            return Err(Error::Parameter(format!("constant psi needs c > 0, got {c}")))
        }
        _ => {}
    }
    let mut pair = PsiPair {
        kind,
        alpha,
        c,
        slow_growth_constant: 0.0,
    };
    let mut grid = vec![0.0];
    grid.extend(geometric_grid(1e-8, 1e8, 161));
    pair.slow_growth_constant = grid
        .iter()
        .flat_map(|&x| grid.iter().map(move |&y| (x, y)))
        .map(|(x, y)| pair.psi(x * y) / (pair.psi(x) + pair.psi_tilde(y)))
        .fold(0.0, f64::max);
    Ok(pair)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanZeroMode {
    Raw,
    /// `sum_{X_0} f mu = 0`.
    X0Centered,
    /// `sum f W_+ mu = 0`.
    WplusCentered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionOnSpace {
    pub values: Vec<f64>,
    pub mode: MeanZeroMode,
}

impl FunctionOnSpace {
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            values,
            mode: MeanZeroMode::Raw,
        }
    }
}

/// Subtract the mean selected by `mode`.
pub fn project_mean_zero(
    values: &[f64],
    space: &Space,
    weights: &WeightPair,
    mode: MeanZeroMode,
) -> Result<FunctionOnSpace> {
    weights.check_len(space)?;
    if values.len() != space.len() {
        return Err(Error::Domain("function length does not match space".into()));
    }
    let shift = match mode {
        MeanZeroMode::Raw => 0.0,
        MeanZeroMode::X0Centered => {
            let mass = space.mass_of(weights.x0());
            if !(mass > 0.0) {
                return Err(Error::Domain("X_0 has zero measure".into()));
            }
            weights.x0().iter().map(|&i| values[i] * space.mu(i)).sum::<f64>() / mass
        }
        MeanZeroMode::WplusCentered => {
            let mass: f64 = (0..space.len()).map(|i| weights.w_plus()[i] * space.mu(i)).sum();
            if !(mass > 0.0) {
                return Err(Error::Domain("W_+ has zero total mass".into()));
            }
            (0..space.len())
                .map(|i| values[i] * weights.w_plus()[i] * space.mu(i))
                .sum::<f64>()
                / mass
        }
    };
    Ok(FunctionOnSpace {
        values: values.iter().map(|v| v - shift).collect(),
        mode,
    })
}

/// Left and right sides of the two-weight Poincaré inequality:
///
/// ```text
/// lhs = sum_x |f(x)|^p W_+(x) mu(x)
/// rhs = sum_x [ (1/mu(B_x)) sum_{y in B_x} |f(x) - f(y)|^p mu(y) ] W(x) mu(x)
/// ```
pub fn poincare_sides(space: &Space, weights: &WeightPair, f: &[f64], p: f64) -> Result<(f64, f64)> {
    weights.check_len(space)?;
    if f.len() != space.len() {
        return Err(Error::Domain("function length does not match space".into()));
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Parameter(format!("p = {p} must lie in [1, inf)")));
    }
    let (w, wp) = (weights.w(), weights.w_plus());
    let lhs = par::sum_range(space.len(), |x| f[x].abs().powf(p) * wp[x] * space.mu(x));
    let rhs = par::sum_range(space.len(), |x| {
        if w[x] == 0.0 {
            return 0.0;
        }
        let inner: f64 = space
            .ball(x)
            .iter()
            .map(|&y| (f[x] - f[y]).abs().powf(p) * space.mu(y))
            .sum();
        inner / space.ball_mass(x) * w[x] * space.mu(x)
    });
    Ok((lhs, rhs))
}

/// `K_{p,psi}(x, y) = psi(VOL*^{-1/p}) / VOL* + 1 / mu(U_0(x))`.
pub fn kernel_psi(space: &Space, psi: &PsiPair, x: usize, y: usize, p: f64) -> Result<f64> {
    let vol = space.vol_star(x, y)?;
    Ok(psi.psi(vol.powf(-1.0 / p)) / vol + 1.0 / space.scale_ball_mass(0, x))
}

/// `||f||_{p,psi}^p = sum_x sum_{y in U_0(x)} |f(x)-f(y)|^p K(x,y) mu(y) W(x) mu(x)`.
pub fn seminorm_psi(
    space: &Space,
    weights: &WeightPair,
    psi: &PsiPair,
    f: &[f64],
    p: f64,
) -> Result<f64> {
    weights.check_len(space)?;
    if !space.has_scales() {
        return Err(Error::Domain("seminorm needs a scale family".into()));
    }
    if f.len() != space.len() {
        return Err(Error::Domain("function length does not match space".into()));
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Parameter(format!("p = {p} must lie in [1, inf)")));
    }
    let u0 = &space.scales()[0];
    let w = weights.w();
    let terms = par::map_range(space.len(), |x| -> Result<f64> {
        if w[x] == 0.0 {
            return Ok(0.0);
        }
        let mut inner = 0.0;
        for &y in u0.out(x) {
            let diff = (f[x] - f[y]).abs();
            if diff == 0.0 {
                continue;
            }
            inner += diff.powf(p) * kernel_psi(space, psi, x, y, p)? * space.mu(y);
        }
        Ok(inner * w[x] * space.mu(x))
    });
    terms.into_iter().sum()
}

/// Normalized magnitudes `|f(y)| / ||f||_{p,psi}` with the weight factors
/// needed by [`orlicz_functional`].
struct OrliczProfile {
    scaled: Vec<f64>,
    mass: Vec<f64>,
}

impl OrliczProfile {
    fn new(space: &Space, weights: &WeightPair, psi: &PsiPair, f: &[f64], p: f64) -> Result<Self> {
        let norm_p = seminorm_psi(space, weights, psi, f, p)?;
        let zero = f.iter().all(|v| *v == 0.0);
        if !(norm_p > 0.0) && !zero {
            return Err(Error::Degenerate(
                "seminorm vanishes on a nonzero function".into(),
            ));
        }
        let norm = if zero { 1.0 } else { norm_p.powf(1.0 / p) };
        Ok(Self {
            scaled: f.iter().map(|v| v.abs() / norm).collect(),
            mass: (0..space.len())
                .map(|y| weights.w()[y] * space.mu(y))
                .collect(),
        })
    }

    fn eval(&self, psi: &PsiPair, p: f64, c: f64) -> f64 {
        self.scaled
            .iter()
            .zip(&self.mass)
            .map(|(&a, &m)| {
                if a == 0.0 || m == 0.0 {
                    0.0
                } else {
                    let t = c * a;
                    psi.psi(t) * t.powf(p) * m
                }
            })
            .sum()
    }
}

/// `sum_y psi(c|f(y)|/||f||) (c|f(y)|/||f||)^p W(y) mu(y)` with
/// `||f|| = ||f||_{p,psi}`.
pub fn orlicz_functional(
    space: &Space,
    weights: &WeightPair,
    psi: &PsiPair,
    f: &[f64],
    p: f64,
    c: f64,
) -> Result<f64> {
    Ok(OrliczProfile::new(space, weights, psi, f, p)?.eval(psi, p, c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogSobolevConstant {
    /// Largest `c` (to relative tolerance `1e-6`) keeping every member's
    /// functional at most 1.
    pub c_star: f64,
    /// Largest functional value over the family at `c_star`.
    pub max_functional: f64,
    pub worst_member: usize,
    pub bisection_steps: usize,
}

/// Bisection for the largest `c` with `orlicz_functional <= 1` uniformly over
/// `family`.
pub fn find_logsob_constant(
    space: &Space,
    weights: &WeightPair,
    psi: &PsiPair,
    family: &[Vec<f64>],
    p: f64,
) -> Result<LogSobolevConstant> {
    const C_MIN: f64 = 1e-12;
    const REL_TOL: f64 = 1e-6;
    if family.is_empty() {
        return Err(Error::Parameter("function family is empty".into()));
    }
    for (i, f) in family.iter().enumerate() {
        if f.iter().all(|v| *v == f[0]) {
            return Err(Error::Parameter(format!("family member {i} is constant")));
        }
    }
    let profiles = par::map_slice(family, |f| OrliczProfile::new(space, weights, psi, f, p))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let worst = |c: f64| -> (usize, f64) {
        par::map_slice(&profiles, |pr| pr.eval(psi, p, c))
            .into_iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, v)| if v > b.1 { (i, v) } else { b })
    };
    if worst(C_MIN).1 > 1.0 {
        return Err(Error::Infeasible(format!(
            "functional exceeds 1 already at c = {C_MIN}"
        )));
    }
    let mut lo = C_MIN;
    let mut hi = 1.0;
    while worst(hi).1 <= 1.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Infeasible("functional stays below 1 for all c".into()));
        }
    }
    let mut steps = 0;
    while hi - lo > REL_TOL * lo {
        let mid = 0.5 * (lo + hi);
        if worst(mid).1 <= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        steps += 1;
    }
    let (worst_member, max_functional) = worst(lo);
    Ok(LogSobolevConstant {
        c_star: lo,
        max_functional,
        worst_member,
        bisection_steps: steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolevWeightDiagnostics {
    /// Smallest `K1` with
    /// `W_+(x) >= K1^{-1} W(x) [psi(mu(U_0^*(x))^{-1/p}) + psi~(W(x)^{-1/p})]`.
    pub k1: f64,
    /// Smallest `K2` with `W(x) <= K2 * avg_{U_j^*(x)} W` for every scale.
    pub k2: f64,
    pub k1_argmax: usize,
    pub k2_argmax: (usize, usize),
    /// Points where `W(x) = 0` and `psi~` is unbounded.
    pub flagged: Vec<usize>,
}

pub fn check_sobolev_weight_conditions(
    space: &Space,
    weights: &WeightPair,
    psi: &PsiPair,
    p: f64,
) -> Result<SobolevWeightDiagnostics> {
    weights.check_len(space)?;
    if !space.has_scales() {
        return Err(Error::Domain("weight conditions need a scale family".into()));
    }
    let (w, wp) = (weights.w(), weights.w_plus());
    let mut flagged = Vec::new();
    let mut k1 = 0.0_f64;
    let mut k1_argmax = 0;
    for x in 0..space.len() {
        if w[x] == 0.0 {
            if !psi.tilde_is_bounded() {
                flagged.push(x);
            }
            continue;
        }
        let bracket = psi.psi(space.scale_dual_mass(0, x).powf(-1.0 / p))
            + psi.psi_tilde(w[x].powf(-1.0 / p));
        let need = w[x] * bracket;
        let ratio = if wp[x] > 0.0 { need / wp[x] } else { f64::INFINITY };
        if ratio > k1 {
            k1 = ratio;
            k1_argmax = x;
        }
    }
    let mut k2 = 0.0_f64;
    let mut k2_argmax = (0, 0);
    for (j, scale) in space.scales().iter().enumerate() {
        for x in 0..space.len() {
            if w[x] == 0.0 {
                continue;
            }
            let region = scale.inn(x);
            let avg = region.iter().map(|&y| w[y] * space.mu(y)).sum::<f64>()
                / space.scale_dual_mass(j, x);
            let ratio = if avg > 0.0 { w[x] / avg } else { f64::INFINITY };
            if ratio > k2 {
                k2 = ratio;
                k2_argmax = (x, j);
            }
        }
    }
    Ok(SobolevWeightDiagnostics {
        k1,
        k2,
        k1_argmax,
        k2_argmax,
        flagged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceBound {
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

/// Evaluate both sides of
///
/// ```text
/// psi(|L|) u(|L|) <= psi(|a_0|/(1-θ)) u(|L|)
///                    + sup_{k>=1} avg_{j in G_k} psi(|a_k|/(1-θ)) u(|a_j - L|/θ)
/// ```
///
/// with `G_k = {k-1}` when `pairs` is `None`. The finite sequence is read as
/// `a_0, …, a_{n-1}` followed by the constant tail `L`; pairs may only
/// reference indices `k <= n`, and for `k > n` the tail uses `G_k = {k-1}`.
pub fn sequence_bound_check(
    seq: &[Complex64],
    limit: Complex64,
    psi: &PsiPair,
    u: &dyn Fn(f64) -> f64,
    theta: f64,
    pairs: Option<&[(usize, usize)]>,
) -> Result<SequenceBound> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Parameter(format!("theta = {theta} must lie in (0, 1)")));
    }
    if seq.is_empty() {
        return Err(Error::Parameter("sequence is empty".into()));
    }
    let n = seq.len();
    let a = |k: usize| if k < n { seq[k] } else { limit };
    let l_abs = limit.norm();
    let outer = |k: usize| psi.psi(a(k).norm() / (1.0 - theta));
    let inner = |j: usize| u((a(j) - limit).norm() / theta);

    let mut groups: Vec<Vec<usize>> = (0..=n).map(|k| if k > 0 { vec![k - 1] } else { vec![] }).collect();
    if let Some(pairs) = pairs {
        groups.iter_mut().for_each(Vec::clear);
        for &(k, j) in pairs {
            if !(k > j) || k > n {
                return Err(Error::Parameter(format!(
                    "pair ({k}, {j}) must satisfy n >= k > j >= 0"
                )));
            }
            groups[k].push(j);
        }
        for (k, g) in groups.iter_mut().enumerate().skip(1) {
            g.sort_unstable();
            g.dedup();
            if g.binary_search(&(k - 1)).is_err() {
                return Err(Error::Parameter(format!("pair ({k}, {}) is missing", k - 1)));
            }
        }
    }

    let lhs = psi.psi(l_abs) * u(l_abs);
    let first = psi.psi(a(0).norm() / (1.0 - theta)) * u(l_abs);
    let mut sup = outer(n + 1) * u(0.0);
    for (k, g) in groups.iter().enumerate().skip(1) {
        let avg = g.iter().map(|&j| outer(k) * inner(j)).sum::<f64>() / g.len() as f64;
        sup = sup.max(avg);
    }
    let rhs = first + sup;
    Ok(SequenceBound {
        lhs,
        rhs,
        passed: leq_slack(lhs, rhs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Relation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn complete(n: usize) -> Space {
        Space::new(vec![1.0; n], Relation::from_predicate(n, |_, _| true), vec![]).unwrap()
    }

    fn two_scale_k3() -> Space {
        let full: Vec<(usize, usize)> =
            (0..3).flat_map(|x| (0..3).map(move |y| (x, y))).collect();
        let diag: Vec<(usize, usize)> = (0..3).map(|x| (x, x)).collect();
        Space::from_pairs(vec![1.0; 3], &full, &[full.clone(), diag]).unwrap()
    }

    #[test]
    fn centering_kills_constants() {
        let s = complete(4);
        let w = WeightPair::new(vec![1.0; 4], vec![1.0, 2.0, 3.0, 4.0], vec![0, 1]).unwrap();
        for mode in [MeanZeroMode::X0Centered, MeanZeroMode::WplusCentered] {
            let f = project_mean_zero(&[2.5; 4], &s, &w, mode).unwrap();
            assert!(f.values.iter().all(|v| v.abs() < 1e-15));
        }
        let f = project_mean_zero(&[1.0, 5.0, -2.0, 7.0], &s, &w, MeanZeroMode::X0Centered).unwrap();
        assert!((f.values[0] + f.values[1]).abs() < 1e-15);
        let empty = WeightPair::equal(vec![1.0; 4], vec![]).unwrap();
        assert!(project_mean_zero(&[1.0; 4], &s, &empty, MeanZeroMode::X0Centered).is_err());
    }

    #[test]
    fn wplus_centering_within_factor_two_to_the_p_of_best_shift() {
        let s = complete(6);
        let wp = vec![0.05, 0.1, 0.15, 0.2, 0.2, 0.3];
        let w = WeightPair::new(vec![0.01; 6], wp.clone(), vec![]).unwrap();
        let f = vec![3.0, -1.0, 0.5, 7.0, 2.0, -4.0];
        let p = 3.0;
        let centred = project_mean_zero(&f, &s, &w, MeanZeroMode::WplusCentered).unwrap();
        let energy = |g: &[f64]| g.iter().zip(&wp).map(|(v, m)| v.abs().powf(p) * m).sum::<f64>();
        let best = (-4000..=7000)
            .map(|k| {
                let c = k as f64 / 1000.0;
                energy(&f.iter().map(|v| v - c).collect::<Vec<_>>())
            })
            .fold(f64::INFINITY, f64::min);
        assert!(energy(&centred.values) <= 2f64.powf(p) * best);
    }

    #[test]
    fn poincare_two_point_space() {
        let s = complete(2);
        let w = WeightPair::equal(vec![1.0; 2], vec![]).unwrap();
        let t = 1.7;
        let (lhs, rhs) = poincare_sides(&s, &w, &[t, -t], 2.0).unwrap();
        assert!((lhs - 2.0 * t * t).abs() < 1e-12);
        assert!((rhs - 4.0 * t * t).abs() < 1e-12);
    }

    #[test]
    fn poincare_constant_has_zero_energy() {
        let s = complete(5);
        let w = WeightPair::equal(vec![2.0; 5], vec![]).unwrap();
        let (_, rhs) = poincare_sides(&s, &w, &[3.0; 5], 1.5).unwrap();
        assert_eq!(rhs, 0.0);
    }

    #[test]
    fn poincare_complete_graph_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 2..12 {
            let s = complete(n);
            let w = WeightPair::equal(vec![1.0; n], vec![]).unwrap();
            let mut f: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mean = f.iter().sum::<f64>() / n as f64;
            f.iter_mut().for_each(|v| *v -= mean);
            let (lhs, rhs) = poincare_sides(&s, &w, &f, 2.0).unwrap();
            assert!((rhs - 2.0 * lhs).abs() < 1e-12 * rhs.max(1.0));
        }
    }

    #[test]
    fn seminorm_matches_double_loop_oracle() {
        let s = two_scale_k3();
        let w = WeightPair::equal(vec![1.0, 2.0, 0.5], vec![]).unwrap();
        let psi = make_psi_pair(PsiKind::LogPower, 0.5, 0.0).unwrap();
        let f: [f64; 3] = [1.0, 0.0, -1.0];
        for p in [1.0, 2.0, 3.0] {
            // all points mu = 1, U_0 = everything, U_1 = diagonal:
            // VOL*(x,y) = 1 for every pair, mu(U_0(x)) = 3
            let k = psi.psi(1.0) / 1.0 + 1.0 / 3.0;
            let mut oracle = 0.0;
            for x in 0..3 {
                for y in 0..3 {
                    oracle += (f[x] - f[y]).abs().powf(p) * k * w.w()[x];
                }
            }
            let got = seminorm_psi(&s, &w, &psi, &f, p).unwrap();
            assert!((got - oracle).abs() < 1e-12 * oracle, "p={p}");
        }
    }

    #[test]
    fn seminorm_constant_psi_kernel() {
        let s = two_scale_k3();
        let psi = make_psi_pair(PsiKind::Constant, 0.0, 2.5).unwrap();
        let k = kernel_psi(&s, &psi, 0, 2, 2.0).unwrap();
        assert!((k - (2.5 / s.vol_star(0, 2).unwrap() + 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn orlicz_trivial_psi_closed_form() {
        let s = two_scale_k3();
        let w = WeightPair::equal(vec![1.0, 2.0, 0.5], vec![]).unwrap();
        let psi = make_psi_pair(PsiKind::Constant, 0.0, 1.0).unwrap();
        let f = [0.3, -1.2, 0.9];
        let p = 2.0;
        let norm_p = seminorm_psi(&s, &w, &psi, &f, p).unwrap();
        let mass: f64 = f.iter().zip(w.w()).map(|(v, m)| v.abs().powf(p) * m).sum();
        for c in [0.1, 1.0, 3.0] {
            let got = orlicz_functional(&s, &w, &psi, &f, p, c).unwrap();
            assert!((got - c.powf(p) * mass / norm_p).abs() < 1e-12);
        }
        // closed-form constant
        let res = find_logsob_constant(&s, &w, &psi, &[f.to_vec()], p).unwrap();
        let expected = (norm_p / mass).powf(1.0 / p);
        assert!((res.c_star - expected).abs() <= 1e-6 * expected);
        // scale invariance
        let scaled: Vec<f64> = f.iter().map(|v| v * 17.0).collect();
        let res2 = find_logsob_constant(&s, &w, &psi, &[scaled], p).unwrap();
        assert!((res2.c_star - res.c_star).abs() <= 1e-6 * expected);
    }

    #[test]
    fn orlicz_monotone_in_c() {
        let s = two_scale_k3();
        let w = WeightPair::equal(vec![1.0; 3], vec![]).unwrap();
        let psi = make_psi_pair(PsiKind::LogPower, 0.5, 0.0).unwrap();
        let f = [0.3, -1.2, 0.9];
        let mut prev = 0.0;
        for k in 1..50 {
            let v = orlicz_functional(&s, &w, &psi, &f, 2.0, k as f64 * 0.1).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn orlicz_rejects_degenerate_seminorm() {
        // single scale = diagonal: U_0(x) = {x}, so every difference vanishes
        let diag: Vec<(usize, usize)> = (0..3).map(|x| (x, x)).collect();
        let s = Space::from_pairs(vec![1.0; 3], &diag, std::slice::from_ref(&diag)).unwrap();
        let w = WeightPair::equal(vec![1.0; 3], vec![]).unwrap();
        let psi = make_psi_pair(PsiKind::LogPower, 0.5, 0.0).unwrap();
        assert!(matches!(
            orlicz_functional(&s, &w, &psi, &[1.0, 0.0, 0.0], 2.0, 1.0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn psi_pairs() {
        let lp = make_psi_pair(PsiKind::LogPower, 0.7, 0.0).unwrap();
        assert!((lp.psi(0.0) - 1.0).abs() < 1e-15);
        assert!(lp.slow_growth_constant <= 2f64.powf(0.7) + 1e-9);
        let el = make_psi_pair(PsiKind::ExpLogPower, 0.25, 0.3).unwrap();
        let x: f64 = 1234.5;
        let expected = (0.3 * (std::f64::consts::E + x).ln().powf(0.25 / 0.75)).exp();
        assert!((el.psi_tilde(x) - expected).abs() < 1e-12 * expected);
        assert!(make_psi_pair(PsiKind::ExpLogPower, 1.0, 0.3).is_err());
        assert!(make_psi_pair(PsiKind::LogPower, -0.1, 0.0).is_err());
        // clamp keeps huge arguments finite
        assert!(lp.psi(f64::MAX).is_finite());
    }

    #[test]
    fn sobolev_conditions_trivial_cases() {
        let s = two_scale_k3();
        let psi = make_psi_pair(PsiKind::LogPower, 0.5, 0.0).unwrap();
        let w: Vec<f64> = vec![0.4, 0.4, 0.4];
        let one = Space::from_pairs(
            vec![1.0; 3],
            &s.unit().pairs(),
            &[s.unit().pairs()],
        )
        .unwrap();
        let wp: Vec<f64> = (0..3)
            .map(|x| {
                w[x] * (psi.psi(one.scale_dual_mass(0, x).powf(-0.5))
                    + psi.psi_tilde(w[x].powf(-0.5)))
            })
            .collect();
        let pair = WeightPair::new(w, wp, vec![]).unwrap();
        let d = check_sobolev_weight_conditions(&one, &pair, &psi, 2.0).unwrap();
        assert!((d.k1 - 1.0).abs() < 1e-12);
        assert!((d.k2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sequence_constant_and_singleton_groups() {
        let psi = make_psi_pair(PsiKind::LogPower, 0.5, 0.0).unwrap();
        let u = |t: f64| t * t;
        let l = Complex64::new(0.7, -1.1);
        let seq = vec![l; 6];
        let b = sequence_bound_check(&seq, l, &psi, &u, 0.5, None).unwrap();
        assert!(b.passed);
        assert!(b.rhs >= psi.psi(l.norm() / 0.5) * u(l.norm()));

        let seq: Vec<Complex64> = (0..8).map(|k| l + Complex64::new(2.0, 1.0) * 0.6f64.powi(k)).collect();
        let plain = sequence_bound_check(&seq, l, &psi, &u, 0.5, None).unwrap();
        let chain: Vec<(usize, usize)> = (1..=seq.len()).map(|k| (k, k - 1)).collect();
        let refined = sequence_bound_check(&seq, l, &psi, &u, 0.5, Some(&chain)).unwrap();
        assert_eq!(plain, refined);
        // missing chain pair is rejected
        assert!(sequence_bound_check(&seq, l, &psi, &u, 0.5, Some(&chain[1..])).is_err());
        assert!(sequence_bound_check(&seq, l, &psi, &u, 1.0, None).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn complex() -> impl Strategy<Value = Complex64> {
            (-5.0f64..5.0, -5.0f64..5.0).prop_map(|(a, b)| Complex64::new(a, b))
        }

        proptest! {
            #[test]
            fn rhs_is_shift_invariant_lhs_is_not(
                f in proptest::collection::vec(-3.0f64..3.0, 6),
                shift in 0.5f64..4.0,
            ) {
                let s = Space::new(vec![1.0; 6], Relation::from_predicate(6, |x, y| x.abs_diff(y) <= 1), vec![]).unwrap();
                let w = WeightPair::new(vec![1.0, 0.5, 0.25, 0.5, 1.0, 2.0], vec![2.0; 6], vec![]).unwrap();
                let g: Vec<f64> = f.iter().map(|v| v + shift).collect();
                let (l1, r1) = poincare_sides(&s, &w, &f, 2.0).unwrap();
                let (l2, r2) = poincare_sides(&s, &w, &g, 2.0).unwrap();
                prop_assert!((r1 - r2).abs() <= 1e-9 * r1.max(1.0));
                let mean = f.iter().sum::<f64>() / 6.0;
                // lhs changes unless the shift is exactly compensated
                prop_assume!((mean + shift / 2.0).abs() > 1e-3);
                prop_assert!((l1 - l2).abs() > 1e-12);
            }

            #[test]
            fn seminorm_dominates_plain_rhs(f in proptest::collection::vec(-3.0f64..3.0, 5), p in 1.0f64..3.0) {
                let rel = Relation::from_predicate(5, |x, y| x.abs_diff(y) <= 1);
                let half = Relation::diagonal(5);
                let s = Space::new(vec![0.5, 1.0, 1.5, 1.0, 0.5], rel.clone(), vec![rel, half]).unwrap();
                let w = WeightPair::equal(vec![1.0, 2.0, 3.0, 2.0, 1.0], vec![]).unwrap();
                let psi = make_psi_pair(PsiKind::LogPower, 0.5, 0.0).unwrap();
                let (_, rhs) = poincare_sides(&s, &w, &f, p).unwrap();
                let semi = seminorm_psi(&s, &w, &psi, &f, p).unwrap();
                prop_assert!(rhs <= semi * (1.0 + 1e-12));
            }

            #[test]
            fn sequence_lemma_never_fails(
                limit in complex(),
                start in complex(),
                noise in proptest::collection::vec(complex(), 1..20),
                ratio in 0.05f64..0.95,
                p in prop_oneof![Just(1.0f64), Just(2.0f64)],
                extra in proptest::collection::vec((1usize..20, 0usize..20), 0..15),
            ) {
                let psi = make_psi_pair(PsiKind::LogPower, 0.5, 0.0).unwrap();
                let u = move |t: f64| t.powf(p);
                let seq: Vec<Complex64> = noise
                    .iter()
                    .enumerate()
                    .map(|(k, z)| limit + (start + z * 0.3) * ratio.powi(k as i32))
                    .collect();
                let n = seq.len();
                let mut pairs: Vec<(usize, usize)> = (1..=n).map(|k| (k, k - 1)).collect();
                pairs.extend(extra.into_iter().filter(|&(k, j)| k <= n && j < k));
                let plain = sequence_bound_check(&seq, limit, &psi, &u, 0.5, None).unwrap();
                let refined = sequence_bound_check(&seq, limit, &psi, &u, 0.5, Some(&pairs)).unwrap();
                prop_assert!(plain.passed, "{:?}", plain);
                prop_assert!(refined.passed, "{:?}", refined);
            }
        }
    }
}
