//! Poincaré constants: exact at `p = 2`, ascent lower bounds at general `p`,
//! and the constructive upper bound built from the transition kernel.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{GrowthFit, Space};
use crate::weights::{AdmissibilityCertificate, WeightPair};
use crate::{leq_slack, par};

/// Eigenvalue ratio below which the energy form counts as singular.
pub const SINGULAR_RATIO: f64 = 1e-10;

/// Linear side condition defining the admissible test functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    None,
    /// `sum_{X_0} f mu = 0`.
    X0Mean,
    /// `sum f W_+ mu = 0`.
    WplusMean,
    /// `f = 0` on the listed points.
    Vanish(Vec<usize>),
}

impl Constraint {
    /// Normal vector of a single linear constraint.
    fn normal(&self, space: &Space, weights: &WeightPair) -> Result<Option<Vec<f64>>> {
        Ok(match self {
            Self::None | Self::Vanish(_) => None,
            Self::X0Mean => {
                if weights.x0().is_empty() {
                    return Err(Error::Domain("X_0 is empty".into()));
                }
                let mut c = vec![0.0; space.len()];
                for &x in weights.x0() {
                    c[x] = space.mu(x);
                }
                Some(c)
            }
            Self::WplusMean => Some(
                (0..space.len())
                    .map(|x| weights.w_plus()[x] * space.mu(x))
                    .collect(),
            ),
        })
    }

    fn vanish_mask(&self, n: usize) -> Result<Vec<bool>> {
        let mut mask = vec![false; n];
        if let Self::Vanish(set) = self {
            for &i in set {
                *mask
                    .get_mut(i)
                    .ok_or_else(|| Error::Domain(format!("vanishing point {i} out of range")))? = true;
            }
        }
        Ok(mask)
    }

    /// Euclidean projection of `f` onto the constraint subspace.
    pub fn project(&self, space: &Space, weights: &WeightPair, f: &mut [f64]) -> Result<()> {
        if let Some(c) = self.normal(space, weights)? {
            let cc: f64 = c.iter().map(|v| v * v).sum();
            if !(cc > 0.0) {
                return Err(Error::Domain("constraint has zero mass".into()));
            }
            let t = c.iter().zip(f.iter()).map(|(a, b)| a * b).sum::<f64>() / cc;
            f.iter_mut().zip(&c).for_each(|(v, a)| *v -= t * a);
        }
        for (v, m) in f.iter_mut().zip(self.vanish_mask(space.len())?) {
            if m {
                *v = 0.0;
            }
        }
        Ok(())
    }
}

/// Lhs weights `W_+ mu` and rhs pair coefficients `W(x) mu(x) mu(y) / mu(B_x)`.
struct Forms {
    diag: Vec<f64>,
    pairs: Vec<(usize, usize, f64)>,
}

impl Forms {
    fn new(space: &Space, weights: &WeightPair) -> Result<Self> {
        weights.check_len(space)?;
        let diag = (0..space.len())
            .map(|x| weights.w_plus()[x] * space.mu(x))
            .collect();
        let mut pairs = Vec::new();
        for x in 0..space.len() {
            let w = weights.w()[x];
            if w == 0.0 {
                continue;
            }
            let scale = w * space.mu(x) / space.ball_mass(x);
            for &y in space.ball(x) {
                if y != x {
                    pairs.push((x, y, scale * space.mu(y)));
                }
            }
        }
        Ok(Self { diag, pairs })
    }

    fn sides(&self, f: &[f64], p: f64) -> (f64, f64) {
        let lhs = f.iter().zip(&self.diag).map(|(v, a)| abs_pow(*v, p) * a).sum();
        let rhs = self
            .pairs
            .iter()
            .map(|&(x, y, c)| c * abs_pow(f[x] - f[y], p))
            .sum();
        (lhs, rhs)
    }

    fn ratio_gradient(&self, f: &[f64], p: f64, lhs: f64, rhs: f64) -> Vec<f64> {
        let q = lhs / rhs;
        let dpow = |d: f64| p * abs_pow(d, p - 1.0) * sign(d);
        let mut g: Vec<f64> = f.iter().zip(&self.diag).map(|(v, a)| dpow(*v) * a).collect();
        for &(x, y, c) in &self.pairs {
            let t = q * c * dpow(f[x] - f[y]);
            g[x] -= t;
            g[y] += t;
        }
        g.iter_mut().for_each(|v| *v /= rhs);
        g
    }
}

fn abs_pow(v: f64, p: f64) -> f64 {
    if p == 2.0 {
        v * v
    } else if p == 1.0 {
        v.abs()
    } else {
        v.abs().powf(p)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Optimal `p = 2` constant: `sup lhs/rhs` over the constraint subspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestConstant {
    /// `None` when the energy form is singular on the subspace.
    pub constant: Option<f64>,
    pub witness: Vec<f64>,
    pub eigen_min: f64,
    pub eigen_max: f64,
}

impl BestConstant {
    pub fn is_bounded(&self) -> bool {
        self.constant.is_some()
    }
}

/// Top generalized eigenvalue of (lhs form, rhs form) restricted to the
/// constraint subspace.
///
/// With `D = W_+ mu` and `g = D^{1/2} f` the problem becomes the smallest
/// eigenvalue of `D^{-1/2} R D^{-1/2}` on the subspace. A single mean
/// constraint is eliminated with a Householder reflection.
pub fn best_constant_p2(
    space: &Space,
    weights: &WeightPair,
    constraint: &Constraint,
) -> Result<BestConstant> {
    let forms = Forms::new(space, weights)?;
    if forms.diag.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::Degenerate("W_+ must be positive for the p = 2 solver".into()));
    }
    let vanish = constraint.vanish_mask(space.len())?;
    let free: Vec<usize> = (0..space.len()).filter(|&i| !vanish[i]).collect();
    let n = free.len();
    if n == 0 {
        return Err(Error::Domain("no free points".into()));
    }
    let mut slot = vec![usize::MAX; space.len()];
    free.iter().enumerate().for_each(|(k, &i)| slot[i] = k);
    let inv_sqrt: Vec<f64> = free.iter().map(|&i| forms.diag[i].powf(-0.5)).collect();

    let mut r = DMatrix::<f64>::zeros(n, n);
    for &(x, y, c) in &forms.pairs {
        let (a, b) = (slot[x], slot[y]);
        if a != usize::MAX {
            r[(a, a)] += c * inv_sqrt[a] * inv_sqrt[a];
        }
        if b != usize::MAX {
            r[(b, b)] += c * inv_sqrt[b] * inv_sqrt[b];
        }
        if a != usize::MAX && b != usize::MAX {
            let off = c * inv_sqrt[a] * inv_sqrt[b];
            r[(a, b)] -= off;
            r[(b, a)] -= off;
        }
    }

    let reflector = match constraint.normal(space, weights)? {
        Some(c) => {
            let chat: Vec<f64> = free.iter().zip(&inv_sqrt).map(|(&i, s)| c[i] * s).collect();
            let len = norm2(&chat);
            if !(len > 0.0) {
                return Err(Error::Domain("constraint has zero mass".into()));
            }
            let mut v = DVector::from_iterator(n, chat.iter().map(|x| x / len));
            v[0] += if v[0] >= 0.0 { 1.0 } else { -1.0 };
            let vv = v.dot(&v);
            let rv = &r * &v;
            let mut rh = r.clone();
            rh.ger(-2.0 / vv, &rv, &v, 1.0);
            let vrh = v.transpose() * &rh;
            rh.ger(-2.0 / vv, &v, &vrh.transpose(), 1.0);
            r = rh.view((1, 1), (n - 1, n - 1)).into_owned();
            Some((v, vv))
        }
        None => None,
    };
    if r.nrows() == 0 {
        return Err(Error::Domain("constraint subspace is trivial".into()));
    }
    let eig = SymmetricEigen::new(r);
    let (imin, emin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |b, (i, &v)| if v < b.1 { (i, v) } else { b });
    let emax = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let u = eig.eigenvectors.column(imin).into_owned();
    let g = match reflector {
        Some((v, vv)) => {
            let mut full = DVector::zeros(n);
            full.rows_mut(1, n - 1).copy_from(&u);
            let t = 2.0 * v.dot(&full) / vv;
            full - v * t
        }
        None => u,
    };
    let mut witness = vec![0.0; space.len()];
    for (k, &i) in free.iter().enumerate() {
        witness[i] = g[k] * inv_sqrt[k];
    }
    let bounded = emin > SINGULAR_RATIO * emax.abs().max(f64::MIN_POSITIVE);
    Ok(BestConstant {
        constant: bounded.then(|| 1.0 / emin),
        witness,
        eigen_min: emin,
        eigen_max: emax,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub value: f64,
    pub witness: Vec<f64>,
    /// Starts with a nondegenerate energy.
    pub live_starts: usize,
}

/// Projected normalized-gradient ascent on `lhs/rhs` from `restarts` random
/// starts. A start stops once 200 iterations gain less than `1e-10` relative.
pub fn lower_bound_constant(
    space: &Space,
    weights: &WeightPair,
    p: f64,
    constraint: &Constraint,
    restarts: usize,
    seed: u64,
) -> Result<LowerBound> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Parameter(format!("p = {p} must lie in [1, inf)")));
    }
    if restarts == 0 {
        return Err(Error::Parameter("need at least one restart".into()));
    }
    let forms = Forms::new(space, weights)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = Vec::with_capacity(restarts);
    for _ in 0..restarts {
        let mut f: Vec<f64> = (0..space.len()).map(|_| rng.sample(StandardNormal)).collect();
        constraint.project(space, weights, &mut f)?;
        starts.push(f);
    }
    let runs = par::map_slice(&starts, |f0| -> Result<Option<(f64, Vec<f64>)>> {
        ascend(&forms, space, weights, constraint, f0.clone(), p)
    });
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut live = 0;
    for run in runs {
        if let Some((q, f)) = run? {
            live += 1;
            if best.as_ref().is_none_or(|b| q > b.0) {
                best = Some((q, f));
            }
        }
    }
    let (value, witness) =
        best.ok_or_else(|| Error::Degenerate("every start has zero energy".into()))?;
    Ok(LowerBound {
        value,
        witness,
        live_starts: live,
    })
}

fn ascend(
    forms: &Forms,
    space: &Space,
    weights: &WeightPair,
    constraint: &Constraint,
    mut f: Vec<f64>,
    p: f64,
) -> Result<Option<(f64, Vec<f64>)>> {
    const MAX_ITERS: usize = 20_000;
    const STALL_WINDOW: usize = 200;
    const STALL_GAIN: f64 = 1e-10;
    // Steps are taken in the metric of the left side, `sum D f^2` with
    // `D = W_+ mu`, which removes most of the conditioning of the weights.
    let metric: Vec<f64> = forms
        .diag
        .iter()
        .map(|&d| if d > 0.0 { d } else { 1.0 })
        .collect();
    let dnorm = |v: &[f64]| v.iter().zip(&metric).map(|(a, d)| a * a * d).sum::<f64>().sqrt();
    let normalize = |f: &mut Vec<f64>| {
        let n = dnorm(f);
        if n > 0.0 {
            f.iter_mut().for_each(|v| *v /= n);
        }
    };
    normalize(&mut f);
    let (mut lhs, mut rhs) = forms.sides(&f, p);
    if !(rhs > 0.0) {
        return Ok(None);
    }
    let mut step = 0.1;
    let mut checkpoint = lhs / rhs;
    for it in 1..=MAX_ITERS {
        let mut g = forms.ratio_gradient(&f, p, lhs, rhs);
        constraint.project(space, weights, &mut g)?;
        g.iter_mut().zip(&metric).for_each(|(v, d)| *v /= d);
        constraint.project(space, weights, &mut g)?;
        let gn = dnorm(&g);
        if !(gn > 0.0) {
            break;
        }
        let q = lhs / rhs;
        let mut moved = false;
        while step > 1e-15 {
            let mut cand: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + step * b / gn).collect();
            normalize(&mut cand);
            let (l2, r2) = forms.sides(&cand, p);
            if r2 > 0.0 && l2 / r2 > q {
                f = cand;
                lhs = l2;
                rhs = r2;
                step = (step * 2.0).min(1.0);
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
        if it % STALL_WINDOW == 0 {
            let q = lhs / rhs;
            if q - checkpoint <= STALL_GAIN * q {
                break;
            }
            checkpoint = q;
        }
    }
    Ok(Some((lhs / rhs, f)))
}

/// Transition kernel on `E = {(x, y) : x not in X_0, y in B*_x, W(y) >= lambda W_+(x)}`
/// with `P(x, y) = W(y)^s / sum_{z in E_x} W(z)^s mu(z)`, plus the pair
/// set `Pi = supp P ∪ X_0 x X_0` on which `S_1` acts.
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    certificate: AdmissibilityCertificate,
    mu: Vec<f64>,
    in_x0: Vec<bool>,
    /// `(y, P(x, y))` per `x`.
    rows: Vec<Vec<(usize, f64)>>,
    /// CSR offsets of `Pi` by first coordinate.
    pair_start: Vec<usize>,
    pair_target: Vec<usize>,
    /// `P(x, y) mu(y)` on `supp P`, `mu(y) / mu(X_0)` on `X_0 x X_0`.
    pair_coef: Vec<f64>,
    laws: KernelLaws,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelLaws {
    /// `max_x |sum_y P(x,y) mu(y) - [x not in X_0]|`.
    pub max_row_deviation: f64,
    /// `max P(x,y) eps mu(B_y) (W_+(x)/W(y))^s`; at most 1 when the
    /// elementwise bound holds.
    pub max_linfty_ratio: f64,
    pub support_respected: bool,
}

impl KernelLaws {
    pub fn hold(&self, row_tol: f64) -> bool {
        self.max_row_deviation < row_tol && leq_slack(self.max_linfty_ratio, 1.0) && self.support_respected
    }
}

pub fn build_transition_kernel(
    space: &Space,
    weights: &WeightPair,
    certificate: &AdmissibilityCertificate,
) -> Result<TransitionKernel> {
    weights.check_len(space)?;
    if !certificate.passed {
        return Err(Error::Parameter("certificate did not pass".into()));
    }
    let (lambda, eps, s) = (certificate.lambda, certificate.epsilon, certificate.s);
    let (w, wp) = (weights.w(), weights.w_plus());
    let in_x0 = weights.x0_mask();
    let n = space.len();
    let rows = par::map_range(n, |x| -> Result<Vec<(usize, f64)>> {
        if in_x0[x] {
            return Ok(Vec::new());
        }
        let bar = lambda * wp[x];
        let support: Vec<usize> = space
            .dual_ball(x)
            .iter()
            .copied()
            .filter(|&z| w[z] >= bar && w[z] > 0.0)
            .collect();
        let mass: f64 = support.iter().map(|&z| w[z].powf(s) * space.mu(z)).sum();
        if support.is_empty() || !(mass > 0.0) {
            return Err(Error::Inconsistency(format!(
                "empty kernel row at {x} despite a passing certificate"
            )));
        }
        Ok(support.into_iter().map(|y| (y, w[y].powf(s) / mass)).collect())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let x0_mass = space.mass_of(weights.x0());
    let mut pair_start = Vec::with_capacity(n + 1);
    let mut pair_target = Vec::new();
    let mut pair_coef = Vec::new();
    for x in 0..n {
        pair_start.push(pair_target.len());
        if in_x0[x] {
            for &y in weights.x0() {
                pair_target.push(y);
                pair_coef.push(space.mu(y) / x0_mass);
            }
        } else {
            for &(y, pxy) in &rows[x] {
                pair_target.push(y);
                pair_coef.push(pxy * space.mu(y));
            }
        }
    }
    pair_start.push(pair_target.len());

    let mut laws = KernelLaws {
        max_row_deviation: 0.0,
        max_linfty_ratio: 0.0,
        support_respected: true,
    };
    for x in 0..n {
        let sum: f64 = rows[x].iter().map(|&(y, v)| v * space.mu(y)).sum();
        let target = if in_x0[x] { 0.0 } else { 1.0 };
        laws.max_row_deviation = laws.max_row_deviation.max((sum - target).abs());
        for &(y, v) in &rows[x] {
            laws.support_respected &= w[y] >= lambda * wp[x] && space.unit().contains(y, x);
            let ratio = v * eps * space.ball_mass(y) * (wp[x] / w[y]).powf(s);
            laws.max_linfty_ratio = laws.max_linfty_ratio.max(ratio);
        }
    }

    Ok(TransitionKernel {
        certificate: certificate.clone(),
        mu: space.measure().to_vec(),
        in_x0,
        rows,
        pair_start,
        pair_target,
        pair_coef,
        laws,
    })
}

impl TransitionKernel {
    pub fn certificate(&self) -> &AdmissibilityCertificate {
        &self.certificate
    }

    pub fn laws(&self) -> KernelLaws {
        self.laws
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn row(&self, x: usize) -> &[(usize, f64)] {
        &self.rows[x]
    }

    pub fn in_x0(&self, x: usize) -> bool {
        self.in_x0[x]
    }

    /// Number of pairs in `Pi`.
    pub fn pair_count(&self) -> usize {
        self.pair_target.len()
    }

    /// Pairs of `Pi` in storage order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.len())
            .flat_map(|x| {
                self.pair_target[self.pair_start[x]..self.pair_start[x + 1]]
                    .iter()
                    .map(move |&y| (x, y))
            })
            .collect()
    }

    /// Evaluate `g` on every pair of `Pi`.
    pub fn pair_function<F: Fn(usize, usize) -> f64>(&self, g: F) -> Vec<f64> {
        self.pairs().into_iter().map(|(x, y)| g(x, y)).collect()
    }

    /// `T f(x) = sum_y P(x,y) f(y) mu(y)`.
    pub fn apply_t(&self, f: &[f64]) -> Vec<f64> {
        par::map_range(self.len(), |x| {
            self.rows[x].iter().map(|&(y, v)| v * f[y] * self.mu[y]).sum()
        })
    }

    /// `S_1 g(x) = sum_y P(x,y) g(x,y) mu(y) + chi_{X_0}(x) avg_{X_0} g(x, ·)`.
    pub fn apply_s1(&self, g: &[f64]) -> Vec<f64> {
        par::map_range(self.len(), |x| {
            (self.pair_start[x]..self.pair_start[x + 1])
                .map(|k| self.pair_coef[k] * g[k])
                .sum()
        })
    }

    /// `S_n g = S_1 g + T S_{n-1} g`, returning `S_1 g, …, S_n g`.
    pub fn apply_sn(&self, g: &[f64], n: usize) -> Vec<Vec<f64>> {
        let s1 = self.apply_s1(g);
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
        for k in 0..n {
            let next = if k == 0 {
                s1.clone()
            } else {
                self.apply_t(&out[k - 1])
                    .into_iter()
                    .zip(&s1)
                    .map(|(a, b)| a + b)
                    .collect()
            };
            out.push(next);
        }
        out
    }

    /// Dense `sum_{k >= 0} T^k`, exact because `T` is nilpotent on a finite
    /// space. Returns the matrix and the nilpotency index.
    fn resolvent(&self) -> Result<(DMatrix<f64>, usize)> {
        let n = self.len();
        let mut t = DMatrix::<f64>::zeros(n, n);
        for x in 0..n {
            for &(y, v) in &self.rows[x] {
                t[(x, y)] += v * self.mu[y];
            }
        }
        let mut power = DMatrix::<f64>::identity(n, n);
        let mut total = power.clone();
        for k in 1..=n + 1 {
            power = &t * &power;
            if power.iter().all(|v| *v == 0.0) {
                return Ok((total, k));
            }
            total += &power;
        }
        Err(Error::Inconsistency("transition operator is not nilpotent".into()))
    }
}

/// `delta` for the Lyapunov function: midpoint of the feasible interval
/// `1 - delta(p-1) >= s`, `lambda^{1 - delta(p-1)} > lambda0`.
pub fn choose_delta(certificate: &AdmissibilityCertificate, p: f64, growth: &GrowthFit) -> Result<f64> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Parameter(format!("p = {p} must lie in [1, inf)")));
    }
    if !(certificate.lambda > growth.lambda0) {
        return Err(Error::Infeasible(format!(
            "lambda = {} does not exceed lambda0 = {}",
            certificate.lambda, growth.lambda0
        )));
    }
    let s = certificate.s;
    if p == 1.0 {
        return Ok(0.5 * (1.0 - s));
    }
    let growth_room = 1.0 - growth.lambda0.max(1.0).ln() / certificate.lambda.ln();
    let delta_max = ((1.0 - s) / (p - 1.0)).min(growth_room / (p - 1.0));
    Ok(0.5 * delta_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainOptions {
    pub p: f64,
    pub n_max: usize,
    pub validation_samples: usize,
    pub seed: u64,
    pub power_iters: usize,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self {
            p: 2.0,
            n_max: 50,
            validation_samples: 200,
            seed: 0,
            power_iters: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub p: f64,
    pub delta: f64,
    /// `1 - delta (p - 1)`.
    pub s_prime: f64,
    /// `lhs(f) <= c_upper rhs(f)` for `f` with zero mean on `X_0`.
    pub c_upper: f64,
    /// Lower estimate of the operator norm behind `c_upper`.
    pub c_upper_floor: f64,
    pub nilpotency_index: usize,
    pub steps_checked: usize,
    /// `max_n max_x |S_n F - (W_+^{-delta} - T^n W_+^{-delta})| / max W_+^{-delta}`.
    pub identity_error: f64,
    /// `max_n max_x (S_n F - W_+^{-delta}) / W_+^{-delta}`; nonpositive.
    pub lyapunov_excess: f64,
    /// `min F(x,y) / ((1 - lambda^{-delta}) W_+(x)^{-delta})` over `E`.
    pub lyapunov_floor_ratio: f64,
    /// `min (S_n Delta_f - |f - T^n f|)` over samples, `n` and points.
    pub delta_chain_margin: f64,
    /// Largest `n` with `sup |T^n f| >= 1e-14` over the samples.
    pub vanishing_steps: usize,
    pub validation_max_ratio: f64,
    pub validation_violations: usize,
}

/// Run the constructive proof chain on a certified kernel: Lyapunov function,
/// the `S_n` identities, and the operator-norm bound `c_upper`.
pub fn run_constructive_chain(
    space: &Space,
    weights: &WeightPair,
    kernel: &TransitionKernel,
    growth: &GrowthFit,
    opts: &ChainOptions,
) -> Result<ChainReport> {
    let p = opts.p;
    let delta = choose_delta(kernel.certificate(), p, growth)?;
    let lambda = kernel.certificate().lambda;
    let (w, wp) = (weights.w(), weights.w_plus());
    if wp.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Degenerate("W_+ must be positive for the chain".into()));
    }
    let n = space.len();
    let h: Vec<f64> = wp.iter().map(|v| v.powf(-delta)).collect();
    let h_max = h.iter().cloned().fold(0.0, f64::max);
    let f_lyap = kernel.pair_function(|x, y| {
        if kernel.in_x0(x) {
            h[x]
        } else {
            h[x] - h[y]
        }
    });

    let mut floor_ratio = f64::INFINITY;
    for x in 0..n {
        for &(y, _) in kernel.row(x) {
            floor_ratio = floor_ratio.min((h[x] - h[y]) / ((1.0 - lambda.powf(-delta)) * h[x]));
        }
    }

    let steps = opts.n_max.max(1);
    let sn_f = kernel.apply_sn(&f_lyap, steps);
    let mut th = h.clone();
    let mut identity_error = 0.0_f64;
    let mut excess = f64::NEG_INFINITY;
    for snf in &sn_f {
        th = kernel.apply_t(&th);
        for x in 0..n {
            identity_error = identity_error.max((snf[x] - (h[x] - th[x])).abs() / h_max);
            excess = excess.max((snf[x] - h[x]) / h[x]);
        }
    }
    if !leq_slack(excess.max(0.0), 0.0) && excess > 1e-12 {
        return Err(Error::Inconsistency(format!(
            "Lyapunov inequality violated by relative {excess:e}"
        )));
    }

    let (resolvent, nilpotency_index) = kernel.resolvent()?;
    let pairs = kernel.pairs();
    let nu: Vec<f64> = pairs
        .iter()
        .map(|&(x, y)| w[y] * space.mu(y) * space.mu(x) / space.ball_mass(y))
        .collect();
    let mut b = DMatrix::<f64>::zeros(n, pairs.len());
    let mut unbounded = false;
    for (j, &(x, _)) in pairs.iter().enumerate() {
        let coef = kernel.pair_coef[j];
        if coef == 0.0 {
            continue;
        }
        if !(nu[j] > 0.0) {
            unbounded = true;
            continue;
        }
        let col_scale = coef * nu[j].powf(-1.0 / p);
        for i in 0..n {
            let g = resolvent[(i, x)];
            if g != 0.0 {
                b[(i, j)] = (wp[i] * space.mu(i)).powf(1.0 / p) * g * col_scale;
            }
        }
    }
    let (c_upper, c_upper_floor) = if unbounded {
        (f64::INFINITY, f64::INFINITY)
    } else {
        let norm = pnorm_power_iteration(&b, p, opts.power_iters)?;
        (norm.value.powf(p), norm.lower.powf(p))
    };

    let forms = Forms::new(space, weights)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut samples = Vec::with_capacity(opts.validation_samples);
    for _ in 0..opts.validation_samples {
        let mut f: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        if !weights.x0().is_empty() {
            let mass = space.mass_of(weights.x0());
            let mean = weights.x0().iter().map(|&i| f[i] * space.mu(i)).sum::<f64>() / mass;
            f.iter_mut().for_each(|v| *v -= mean);
        }
        samples.push(f);
    }
    let per_sample = par::map_slice(&samples, |f| {
        let (lhs, rhs) = forms.sides(f, p);
        let ratio = if rhs > 0.0 { lhs / rhs } else { f64::INFINITY };
        let delta_f = kernel.pair_function(|x, y| (f[x] - f[y]).abs());
        let sn = kernel.apply_sn(&delta_f, steps);
        let mut tf = f.clone();
        let mut margin = f64::INFINITY;
        let mut vanish = 0;
        for (k, snd) in sn.iter().enumerate() {
            tf = kernel.apply_t(&tf);
            if tf.iter().any(|v| v.abs() >= 1e-14) {
                vanish = k + 1;
            }
            for x in 0..n {
                margin = margin.min(snd[x] - (f[x] - tf[x]).abs());
            }
        }
        (ratio, leq_slack(lhs, c_upper * rhs), margin, vanish)
    });
    let mut report = ChainReport {
        p,
        delta,
        s_prime: 1.0 - delta * (p - 1.0),
        c_upper,
        c_upper_floor,
        nilpotency_index,
        steps_checked: steps,
        identity_error,
        lyapunov_excess: excess,
        lyapunov_floor_ratio: floor_ratio,
        delta_chain_margin: f64::INFINITY,
        vanishing_steps: 0,
        validation_max_ratio: 0.0,
        validation_violations: 0,
    };
    for (ratio, ok, margin, vanish) in per_sample {
        report.validation_max_ratio = report.validation_max_ratio.max(ratio);
        report.validation_violations += usize::from(!ok);
        report.delta_chain_margin = report.delta_chain_margin.min(margin);
        report.vanishing_steps = report.vanishing_steps.max(vanish);
    }
    Ok(report)
}

/// Bounds on the `p`-operator norm of a nonnegative matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnormBound {
    /// Best certified upper bound.
    pub value: f64,
    /// Best attained `||B v||_p / ||v||_p`.
    pub lower: f64,
    /// Upper bound after each iterate; nonincreasing.
    pub sequence: Vec<f64>,
    pub iterations: usize,
}

/// Nonlinear power iteration `v -> (B^T (B v)^{p-1})^{1/(p-1)}` from the
/// all-ones vector. A positive `v` with `S v <= C^{p/(p-1)} v` certifies
/// `||B||_{p->p} <= C`. For `p = 1` the exact maximum column sum is returned.
pub fn pnorm_power_iteration(b: &DMatrix<f64>, p: f64, iters: usize) -> Result<PnormBound> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Parameter(format!("p = {p} must lie in [1, inf)")));
    }
    if b.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Parameter("matrix must be finite and nonnegative".into()));
    }
    if p == 1.0 {
        let value = b
            .column_iter()
            .map(|c| c.sum())
            .fold(0.0, f64::max);
        return Ok(PnormBound {
            value,
            lower: value,
            sequence: vec![value],
            iterations: 0,
        });
    }
    let rows: Vec<usize> = (0..b.nrows()).filter(|&i| b.row(i).iter().any(|v| *v > 0.0)).collect();
    let cols: Vec<usize> = (0..b.ncols()).filter(|&j| b.column(j).iter().any(|v| *v > 0.0)).collect();
    if rows.is_empty() {
        return Ok(PnormBound {
            value: 0.0,
            lower: 0.0,
            sequence: vec![0.0],
            iterations: 0,
        });
    }
    let m = b.select_rows(&rows).select_columns(&cols);
    let mt = m.transpose();
    let q = 1.0 / (p - 1.0);
    let pnorm = |v: &DVector<f64>| v.iter().map(|x| x.powf(p)).sum::<f64>().powf(1.0 / p);

    let mut v = DVector::from_element(m.ncols(), 1.0);
    let mut best_upper = f64::INFINITY;
    let mut best_lower = 0.0_f64;
    let mut sequence = Vec::new();
    let mut iterations = 0;
    for _ in 0..iters.max(1) {
        iterations += 1;
        let bv = &m * &v;
        best_lower = best_lower.max(pnorm(&bv) / pnorm(&v));
        let pow = bv.map(|x| x.powf(p - 1.0));
        let next = (&mt * pow).map(|x| x.powf(q));
        let ratio = next
            .iter()
            .zip(v.iter())
            .map(|(a, b)| a / b)
            .fold(0.0, f64::max);
        let upper = ratio.powf((p - 1.0) / p);
        if !upper.is_finite() || !(upper > 0.0) {
            return Err(Error::Degenerate("power iteration left the finite range".into()));
        }
        best_upper = best_upper.min(upper);
        sequence.push(best_upper);
        let scale = next.max();
        v = next / scale;
        if best_upper - best_lower <= 1e-14 * best_upper {
            break;
        }
    }
    Ok(PnormBound {
        value: best_upper,
        lower: best_lower,
        sequence,
        iterations,
    })
}

/// Aggregate of the three constant estimates for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantReport {
    pub p: f64,
    pub exact_p2: Option<BestConstant>,
    pub lower_bound: Option<LowerBound>,
    pub constructive_upper: Option<ChainReport>,
}

impl ConstantReport {
    /// `lower <= exact <= upper` wherever defined, up to relative `tol`.
    pub fn is_ordered(&self, tol: f64) -> bool {
        let exact = self.exact_p2.as_ref().and_then(|b| b.constant);
        let lower = self.lower_bound.as_ref().map(|l| l.value);
        let upper = self.constructive_upper.as_ref().map(|c| c.c_upper);
        let le = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => a <= b * (1.0 + tol),
            _ => true,
        };
        le(lower, exact) && le(exact, upper) && le(lower, upper)
    }
}
