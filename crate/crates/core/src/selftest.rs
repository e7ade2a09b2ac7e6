//! The acceptance suite as library code: ten criteria, each with its own
//! oracle, assembled into a single [`RunReport`].
//!
//! Every criterion draws its randomness from a ChaCha8 stream seeded by
//! `seed + id`, so reports are reproducible and independent of the order in
//! which criteria run.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::constants::{
    best_constant_p2, build_transition_kernel, pnorm_power_iteration, run_constructive_chain,
    ChainOptions,
};
use crate::error::{Error, Result};
use crate::functionals::{
    check_sobolev_weight_conditions, find_logsob_constant, make_psi_pair, poincare_sides,
    sequence_bound_check, PsiKind,
};
use crate::geometry::Lattice;
use crate::par;
use crate::report::{emit_report, Format, Metric, RunReport};
use crate::scenarios::{
    boltzmann_distance, japanese_bracket, make_boltzmann_scenario, make_domain_scenario,
    make_graph_scenario, make_lattice_scenario, preset_adjacency, BoltzmannConfig, DomainConfig,
    DomainShape, GraphPreset, LatticeConfig, LatticeMode, PixelMask, Scenario,
};
use crate::space::GrowthFit;
use crate::weights::{check_mean_value_bound, search_admissibility, SearchGrid};

pub const CRITERIA: [usize; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

/// Hops used for every growth fit in the suite.
pub const GROWTH_STEPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelftestOptions {
    pub seed: u64,
    /// Multiplies every tolerance.
    pub tolerance_scale: f64,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            tolerance_scale: 1.0,
        }
    }
}

impl SelftestOptions {
    fn tol(&self, t: f64) -> f64 {
        t * self.tolerance_scale
    }

    fn rng(&self, id: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(id as u64))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub metrics: Vec<(String, Metric)>,
}

impl Outcome {
    fn new(id: usize, name: &'static str) -> Self {
        Self {
            id,
            name,
            passed: true,
            detail: String::new(),
            metrics: Vec::new(),
        }
    }

    fn metric(&mut self, name: &str, value: f64, tolerance: f64) {
        self.metrics.push((name.into(), Metric::new(value, tolerance)));
    }

    fn count(&mut self, name: &str, value: usize) {
        self.metrics.push((name.into(), Metric::exact(value as f64)));
    }

    fn require(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.passed = false;
            if !self.detail.is_empty() {
                self.detail.push_str("; ");
            }
            self.detail.push_str(&what());
        }
    }

    /// `section` key used in the report.
    pub fn section(&self) -> String {
        format!("c{:02}_{}", self.id, self.name)
    }
}

pub fn criterion_name(id: usize) -> &'static str {
    match id {
        1 => "complete_graph",
        2 => "kernel_laws",
        3 => "pnorm_iteration",
        4 => "poincare_end_to_end",
        5 => "mean_value",
        6 => "domain_connectivity",
        7 => "logsob_end_to_end",
        8 => "sequence_lemmas",
        9 => "boltzmann",
        10 => "determinism",
        _ => "unknown",
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// The one-dimensional Gaussian lattice used by criteria 2, 4 and 7.
pub fn gaussian_core_scenario() -> Result<Scenario> {
    let mut cfg = LatticeConfig::gaussian(1, 8.0, 0.25, 2.0, 0.5);
    cfg.mode = LatticeMode::Core;
    make_lattice_scenario(&cfg)
}

/// Growth fit plus grid search; `None` when no grid point passes.
pub fn certify(sc: &Scenario) -> Result<(GrowthFit, Option<crate::AdmissibilityCertificate>)> {
    let growth = sc.space.fit_growth_constant(GROWTH_STEPS)?;
    let outcome = search_admissibility(
        &sc.space,
        &sc.weights,
        &SearchGrid::default_for(&growth),
        &growth,
    )?;
    Ok((growth, outcome.certificate().cloned()))
}

pub fn run_criterion(id: usize, opts: &SelftestOptions) -> Outcome {
    let name = criterion_name(id);
    let result = match id {
        1 => complete_graph(opts),
        2 => kernel_laws(opts),
        3 => pnorm_iteration(opts),
        4 => poincare_end_to_end(opts),
        5 => mean_value(opts),
        6 => domain_connectivity(opts),
        7 => logsob_end_to_end(opts),
        8 => sequence_lemmas(opts),
        9 => boltzmann(opts),
        10 => determinism(opts),
        _ => Err(Error::Parameter(format!("no criterion {id}"))),
    };
    result.unwrap_or_else(|e| {
        let mut out = Outcome::new(id, name);
        out.require(false, || format!("error: {e}"));
        out
    })
}

pub fn run_selftest(opts: &SelftestOptions, ids: &[usize]) -> RunReport {
    let mut report = RunReport::new("selftest", opts.seed);
    report.config = serde_json::json!({
        "criteria": ids,
        "seed": opts.seed,
        "tolerance_scale": opts.tolerance_scale,
    });
    for &id in ids {
        record(&mut report, &run_criterion(id, opts));
    }
    report.exit_code = if report.passed { 0 } else { 1 };
    report
}

pub fn record(report: &mut RunReport, out: &Outcome) {
    let section = out.section();
    for (name, m) in &out.metrics {
        report.metric(&section, name, *m);
    }
    let detail = if out.passed { "ok".to_string() } else { out.detail.clone() };
    report.check(&section, out.passed, detail);
    if !out.passed {
        report.violations.push(format!("{section}: {}", out.detail));
    }
}

fn complete_graph(opts: &SelftestOptions) -> Result<Outcome> {
    let mut out = Outcome::new(1, criterion_name(1));
    let mut rng = opts.rng(1);
    let tol = opts.tol(1e-9);
    let (mut err_exact, mut err_oracle, mut err_identity) = (0.0_f64, 0.0_f64, 0.0_f64);
    for n in 2..=30 {
        let sc = make_graph_scenario(&preset_adjacency(GraphPreset::Complete, n), 0, 0.0, Some((0..n).collect()))?;
        let c = best_constant_p2(&sc.space, &sc.weights, &sc.constraint)?
            .constant
            .ok_or_else(|| Error::Inconsistency(format!("K_{n} reported unbounded")))?;

        // Dirichlet form 2I - (2/n)J restricted to the zero-sum subspace,
        // spanned by the Helmert basis.
        let nf = n as f64;
        let form = DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 } else { 0.0 } - 2.0 / nf);
        let basis = DMatrix::from_fn(n, n - 1, |i, k| {
            let k1 = (k + 1) as f64;
            let scale = (k1 * (k1 + 1.0)).sqrt();
            match i.cmp(&(k + 1)) {
                std::cmp::Ordering::Less => 1.0 / scale,
                std::cmp::Ordering::Equal => -k1 / scale,
                std::cmp::Ordering::Greater => 0.0,
            }
        });
        let reduced = basis.transpose() * form * &basis;
        let lam_min = SymmetricEigen::new(reduced).eigenvalues.min();
        let oracle = 1.0 / lam_min;

        let mut f = normal_vec(&mut rng, n);
        let mean = f.iter().sum::<f64>() / nf;
        f.iter_mut().for_each(|v| *v -= mean);
        let (lhs, rhs) = poincare_sides(&sc.space, &sc.weights, &f, 2.0)?;

        err_exact = err_exact.max((c - 0.5).abs());
        err_oracle = err_oracle.max((c - oracle).abs());
        err_identity = err_identity.max((rhs - 2.0 * lhs).abs() / lhs.max(f64::MIN_POSITIVE));
    }
    out.metric("max_error_vs_half", err_exact, tol);
    out.metric("max_error_vs_eigen_oracle", err_oracle, tol);
    out.metric("max_identity_error", err_identity, tol);
    out.require(err_exact <= tol, || format!("|C - 1/2| = {err_exact:e}"));
    out.require(err_oracle <= tol, || format!("|C - oracle| = {err_oracle:e}"));
    out.require(err_identity <= tol, || format!("rhs - 2 lhs relative error {err_identity:e}"));
    Ok(out)
}

/// Scenarios shipped with the tool that are exercised by criterion 2.
pub fn bundled_scenarios() -> Result<Vec<Scenario>> {
    let mut bigcor = LatticeConfig::gaussian(1, 8.0, 0.25, 2.0, 0.5);
    bigcor.mode = LatticeMode::Bigcor;
    bigcor.core_radius = 1.5;
    Ok(vec![
        make_graph_scenario(&preset_adjacency(GraphPreset::Complete, 5), 0, 0.0, Some((0..5).collect()))?,
        make_graph_scenario(&preset_adjacency(GraphPreset::Path, 21), 0, 4f64.ln(), None)?,
        gaussian_core_scenario()?,
        make_lattice_scenario(&bigcor)?,
        make_domain_scenario(&PixelMask::from_config(&DomainConfig::default())?, 0.1)?.scenario,
    ])
}

fn kernel_laws(opts: &SelftestOptions) -> Result<Outcome> {
    let mut out = Outcome::new(2, criterion_name(2));
    let tol = opts.tol(1e-12);
    let mut certified = 0;
    let (mut row_dev, mut linfty) = (0.0_f64, 0.0_f64);
    for sc in bundled_scenarios()? {
        let (_, cert) = certify(&sc)?;
        let Some(cert) = cert else { continue };
        certified += 1;
        let laws = build_transition_kernel(&sc.space, &sc.weights, &cert)?.laws();
        row_dev = row_dev.max(laws.max_row_deviation);
        linfty = linfty.max(laws.max_linfty_ratio);
        out.require(laws.support_respected, || format!("{}: kernel leaves its support", sc.name));
        out.require(laws.max_row_deviation < tol, || {
            format!("{}: row sum deviation {:e}", sc.name, laws.max_row_deviation)
        });
        out.require(laws.max_linfty_ratio <= 1.0 + tol, || {
            format!("{}: elementwise ratio {:e} exceeds 1", sc.name, laws.max_linfty_ratio)
        });
    }
    out.count("certified_scenarios", certified);
    out.metric("max_row_deviation", row_dev, tol);
    out.metric("max_linfty_ratio", linfty, tol);
    out.require(certified > 0, || "no bundled scenario was certified".into());
    Ok(out)
}

fn lp_norm(v: &[f64], p: f64) -> f64 {
    v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

fn ratio_at(b: &DMatrix<f64>, v: &[f64], p: f64) -> f64 {
    let bv: Vec<f64> = (0..b.nrows())
        .map(|i| (0..b.ncols()).map(|j| b[(i, j)] * v[j]).sum())
        .collect();
    let nv = lp_norm(v, p);
    if nv > 0.0 {
        lp_norm(&bv, p) / nv
    } else {
        0.0
    }
}

/// Brute-force `max ||Bv||_p / ||v||_p` over the nonnegative orthant:
/// random sampling followed by adaptive hill climbing.
fn sphere_sampling_norm(b: &DMatrix<f64>, p: f64, rng: &mut ChaCha8Rng) -> f64 {
    let n = b.ncols();
    let mut best_v = vec![1.0; n];
    let mut best = ratio_at(b, &best_v, p);
    for _ in 0..20_000 {
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let r = ratio_at(b, &v, p);
        if r > best {
            best = r;
            best_v = v;
        }
    }
    let mut step = 0.1;
    while step > 1e-9 {
        let scale = lp_norm(&best_v, p);
        let trial: Vec<f64> = best_v
            .iter()
            .map(|x| (x / scale + step * rng.sample::<f64, _>(StandardNormal)).max(0.0))
            .collect();
        let r = ratio_at(b, &trial, p);
        if r > best {
            best = r;
            best_v = trial;
            step *= 1.5;
        } else {
            step *= 0.97;
        }
    }
    best
}

fn pnorm_iteration(opts: &SelftestOptions) -> Result<Outcome> {
    let mut out = Outcome::new(3, criterion_name(3));
    let mut rng = opts.rng(3);
    let (tol_sample, tol_rank, tol_svd) = (opts.tol(1e-3), opts.tol(1e-9), opts.tol(1e-8));
    for p in [1.5, 2.0, 3.0] {
        let q = p / (p - 1.0);
        let (mut err_sample, mut err_rank, mut err_svd) = (0.0_f64, 0.0_f64, 0.0_f64);
        let mut below_sample = 0;
        for _ in 0..100 {
            let b = DMatrix::from_fn(4, 4, |_, _| {
                if rng.random::<f64>() < 0.2 {
                    0.0
                } else {
                    rng.random::<f64>()
                }
            });
            let it = pnorm_power_iteration(&b, p, 20_000)?.value;
            let brute = sphere_sampling_norm(&b, p, &mut rng);
            err_sample = err_sample.max((it - brute).abs() / it.max(f64::MIN_POSITIVE));
            if it < brute * (1.0 - 1e-12) {
                below_sample += 1;
            }
            if p == 2.0 {
                let sigma = b.clone().singular_values().max();
                err_svd = err_svd.max((it - sigma).abs() / sigma);
            }

            let u: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            let v: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            let rank_one = DMatrix::from_fn(4, 4, |i, j| u[i] * v[j]);
            let exact = lp_norm(&u, p) * lp_norm(&v, q);
            let got = pnorm_power_iteration(&rank_one, p, 20_000)?.value;
            err_rank = err_rank.max((got - exact).abs() / exact);
        }
        let tag = format!("p{}", p.to_string().replace('.', "_"));
        out.metric(&format!("{tag}_max_rel_error_vs_sampling"), err_sample, tol_sample);
        out.metric(&format!("{tag}_max_rel_error_rank_one"), err_rank, tol_rank);
        out.count(&format!("{tag}_below_sampled_maximum"), below_sample);
        out.require(err_sample <= tol_sample, || format!("p = {p}: sampling gap {err_sample:e}"));
        out.require(err_rank <= tol_rank, || format!("p = {p}: rank-one error {err_rank:e}"));
        out.require(below_sample == 0, || format!("p = {p}: {below_sample} bounds below a sampled ratio"));
        if p == 2.0 {
            out.metric("p2_max_rel_error_vs_svd", err_svd, tol_svd);
            out.require(err_svd <= tol_svd, || format!("spectral norm error {err_svd:e}"));
        }
    }
    Ok(out)
}

fn poincare_end_to_end(opts: &SelftestOptions) -> Result<Outcome> {
    let mut out = Outcome::new(4, criterion_name(4));
    let mut rng = opts.rng(4);
    let slack = opts.tol(1e-10);
    let sc = gaussian_core_scenario()?;
    let (growth, cert) = certify(&sc)?;
    out.metric("lambda0", growth.lambda0, 0.0);
    let Some(cert) = cert else {
        out.require(false, || "admissibility search found no certificate".into());
        return Ok(out);
    };
    out.metric("lambda", cert.lambda, 0.0);
    out.metric("epsilon", cert.epsilon, 0.0);
    out.metric("s", cert.s, 0.0);
    out.require(cert.lambda > growth.lambda0, || {
        format!("lambda {} not above lambda0 {}", cert.lambda, growth.lambda0)
    });

    let exact = best_constant_p2(&sc.space, &sc.weights, &sc.constraint)?;
    let Some(c) = exact.constant else {
        out.require(false, || "exact constant unbounded".into());
        return Ok(out);
    };
    out.metric("exact_p2", c, 1e-9);

    let mut violations = 0;
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let mut f = normal_vec(&mut rng, sc.space.len());
        sc.constraint.project(&sc.space, &sc.weights, &mut f)?;
        let (lhs, rhs) = poincare_sides(&sc.space, &sc.weights, &f, 2.0)?;
        worst = worst.max(lhs / (c * rhs));
        if lhs > c * rhs * (1.0 + slack) {
            violations += 1;
        }
    }
    out.count("sample_violations", violations);
    out.metric("max_sample_ratio", worst, slack);
    out.require(violations == 0, || format!("{violations} sampled functions violate the inequality"));

    let kernel = build_transition_kernel(&sc.space, &sc.weights, &cert)?;
    let chain = run_constructive_chain(
        &sc.space,
        &sc.weights,
        &kernel,
        &growth,
        &ChainOptions {
            seed: opts.seed.wrapping_add(4),
            ..ChainOptions::default()
        },
    )?;
    let tol_chain = opts.tol(1e-10);
    out.metric("c_upper", chain.c_upper, 1e-14);
    out.metric("delta", chain.delta, 0.0);
    out.count("steps_checked", chain.steps_checked);
    out.count("nilpotency_index", chain.nilpotency_index);
    out.metric("identity_error", chain.identity_error, tol_chain);
    out.metric("lyapunov_excess", chain.lyapunov_excess, tol_chain);
    out.metric("delta_chain_margin", chain.delta_chain_margin, tol_chain);
    out.count("validation_violations", chain.validation_violations);
    out.require(chain.c_upper >= c * (1.0 - 1e-9), || {
        format!("C_upper {} below exact {c}", chain.c_upper)
    });
    out.require(chain.identity_error <= tol_chain, || {
        format!("S_n F identity error {:e}", chain.identity_error)
    });
    out.require(chain.lyapunov_excess <= tol_chain, || {
        format!("Lyapunov excess {:e}", chain.lyapunov_excess)
    });
    out.require(chain.delta_chain_margin >= -tol_chain, || {
        format!("S_n Delta_f margin {:e}", chain.delta_chain_margin)
    });
    out.require(chain.validation_violations == 0, || {
        format!("{} validation functions exceed C_upper", chain.validation_violations)
    });
    Ok(out)
}

fn mean_value(opts: &SelftestOptions) -> Result<Outcome> {
    let mut out = Outcome::new(5, criterion_name(5));
    let tol = opts.tol(1e-10);
    let lattice = Lattice::cube(1, 3.0, 0.01)?;
    let mut worst = f64::INFINITY;
    let mut evaluated = 0;
    for rho in [0.5_f64, 1.0, 2.0] {
        let values: Vec<f64> = (0..lattice.len())
            .map(|i| (rho.sqrt() * lattice.coords(i)[0]).cosh())
            .collect();
        for k in 1..=10 {
            let t = k as f64 / 10.0;
            let rep = check_mean_value_bound(&lattice, &values, rho, t)?;
            for m in rep.margins.iter().flatten() {
                worst = worst.min(*m);
                evaluated += 1;
            }
        }
    }
    out.count("evaluated_points", evaluated);
    out.metric("min_margin", worst, tol);
    out.require(evaluated > 0, || "no interior point evaluated".into());
    out.require(worst >= -tol, || format!("mean-value margin {worst:e}"));
    Ok(out)
}

fn domain_connectivity(opts: &SelftestOptions) -> Result<Outcome> {
    let mut out = Outcome::new(6, criterion_name(6));
    let _ = opts;
    let dumbbell_cfg = DomainConfig::default();
    let dumbbell = make_domain_scenario(&PixelMask::from_config(&dumbbell_cfg)?, dumbbell_cfg.c_threshold)?;
    out.count("dumbbell_pixels", dumbbell.scenario.space.len());
    out.require(dumbbell.covered, || "dumbbell not covered".into());
    match dumbbell.n_star {
        Some(n) => out.count("dumbbell_n_star", n),
        None => out.require(false, || "dumbbell has no terminal index".into()),
    }
    let c = best_constant_p2(&dumbbell.scenario.space, &dumbbell.scenario.weights, &dumbbell.scenario.constraint)?;
    match c.constant {
        Some(c) => out.metric("dumbbell_constant", c, 1e-9),
        None => out.require(false, || "dumbbell constant unbounded".into()),
    }

    let separated_cfg = DomainConfig {
        shape: DomainShape::Separated,
        gap: 1.2,
        ..DomainConfig::default()
    };
    let separated = make_domain_scenario(&PixelMask::from_config(&separated_cfg)?, separated_cfg.c_threshold)?;
    out.require(!separated.covered, || "separated domain reported covered".into());
    match separated.stalled_at {
        Some(n) => out.count("separated_stalled_at", n),
        None => out.require(false, || "separated domain did not stall".into()),
    }
    let c = best_constant_p2(&separated.scenario.space, &separated.scenario.weights, &separated.scenario.constraint)?;
    out.metric("separated_constant", c.constant.unwrap_or(f64::INFINITY), 0.0);
    out.require(c.constant.is_none(), || "separated constant reported finite".into());
    Ok(out)
}

fn logsob_end_to_end(opts: &SelftestOptions) -> Result<Outcome> {
    let mut out = Outcome::new(7, criterion_name(7));
    let mut rng = opts.rng(7);
    let sc = gaussian_core_scenario()?.with_scales(&[1.0, 0.5])?;
    let psi = make_psi_pair(PsiKind::LogPower, 0.5, 0.0)?;
    let diag = check_sobolev_weight_conditions(&sc.space, &sc.weights, &psi, 2.0)?;
    out.metric("k1", diag.k1, 0.0);
    out.metric("k2", diag.k2, 0.0);
    out.require(diag.k1.is_finite() && diag.k2.is_finite(), || {
        format!("weight conditions K1 = {}, K2 = {}", diag.k1, diag.k2)
    });
    let family = (0..100)
        .map(|_| {
            let mut f = normal_vec(&mut rng, sc.space.len());
            sc.constraint.project(&sc.space, &sc.weights, &mut f)?;
            Ok(f)
        })
        .collect::<Result<Vec<_>>>()?;
    let found = find_logsob_constant(&sc.space, &sc.weights, &psi, &family, 2.0)?;
    let floor = 1.0 - opts.tol(1e-2);
    out.metric("c_star", found.c_star, 1e-6);
    out.metric("max_functional", found.max_functional, 1.0 - floor);
    out.require(found.c_star > 0.0, || "c* is not positive".into());
    out.require(found.max_functional >= floor && found.max_functional <= 1.0, || {
        format!("final functional {} outside [{floor}, 1]", found.max_functional)
    });
    Ok(out)
}

/// A random convergent complex sequence: a finite head followed by its limit.
fn random_sequence(rng: &mut ChaCha8Rng) -> (Vec<Complex64>, Complex64) {
    let n = rng.random_range(1..=30);
    let magnitude = 10f64.powf(rng.random_range(-3.0..3.0));
    let limit = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * magnitude;
    let rate: f64 = rng.random_range(0.05..0.95);
    let seq = (0..n)
        .map(|k| {
            let z = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            limit + z * magnitude * rate.powi(k)
        })
        .collect();
    (seq, limit)
}

fn sequence_lemmas(opts: &SelftestOptions) -> Result<Outcome> {
    let mut out = Outcome::new(8, criterion_name(8));
    let mut rng = opts.rng(8);
    let psi = make_psi_pair(PsiKind::LogPower, 0.5, 0.0)?;
    for p in [1.0_f64, 2.0] {
        let u = move |t: f64| t.powf(p);
        let (mut plain, mut refined) = (0, 0);
        let mut worst = 0.0_f64;
        for _ in 0..10_000 {
            let (seq, limit) = random_sequence(&mut rng);
            let r = sequence_bound_check(&seq, limit, &psi, &u, 0.5, None)?;
            worst = worst.max(r.lhs / r.rhs);
            plain += usize::from(!r.passed);
        }
        for _ in 0..10_000 {
            let (seq, limit) = random_sequence(&mut rng);
            let n = seq.len();
            let mut pairs = Vec::new();
            for k in 1..=n {
                pairs.push((k, k - 1));
                for j in 0..k - 1 {
                    if rng.random::<f64>() < 0.3 {
                        pairs.push((k, j));
                    }
                }
            }
            let r = sequence_bound_check(&seq, limit, &psi, &u, 0.5, Some(&pairs))?;
            worst = worst.max(r.lhs / r.rhs);
            refined += usize::from(!r.passed);
        }
        let tag = format!("p{p}");
        out.count(&format!("{tag}_plain_violations"), plain);
        out.count(&format!("{tag}_refined_violations"), refined);
        out.metric(&format!("{tag}_max_lhs_over_rhs"), worst, crate::REL_SLACK);
        out.require(plain == 0 && refined == 0, || {
            format!("p = {p}: {plain} plain and {refined} refined violations")
        });
    }
    Ok(out)
}

fn boltzmann(opts: &SelftestOptions) -> Result<Outcome> {
    let mut out = Outcome::new(9, criterion_name(9));
    let mut rng = opts.rng(9);
    let slack = opts.tol(1e-10);
    let alpha = 0.0;
    let sc = make_boltzmann_scenario(&BoltzmannConfig {
        dim: 2,
        extent: 4.0,
        spacing: 0.25,
        alpha,
    })?;
    let lattice = sc.lattice.as_ref().expect("boltzmann scenarios carry a lattice");
    let kappa = sc.diagnostics["kappa"];
    let exact = best_constant_p2(&sc.space, &sc.weights, &sc.constraint)?;
    let Some(c_pair) = exact.constant else {
        out.require(false, || "pair constant unbounded".into());
        return Ok(out);
    };
    let c6 = c_pair * kappa;
    out.count("points", sc.space.len());
    out.metric("kappa", kappa, 0.0);
    out.metric("pair_constant", c_pair, 1e-9);
    out.metric("constant", c6, 1e-9);
    out.require(c6.is_finite() && c6 > 0.0, || format!("constant {c6} not finite"));

    // Both sides written out from the velocity coordinates alone.
    let n = lattice.len();
    let m = lattice.cell_measure();
    let coords: Vec<Vec<f64>> = (0..n).map(|i| lattice.coords(i)).collect();
    let gauss = |v: &[f64]| (-v.iter().map(|a| a * a).sum::<f64>()).exp();
    let left: Vec<f64> = coords.iter().map(|v| japanese_bracket(v).powf(alpha) * gauss(v) * m).collect();
    let right: Vec<f64> = coords.iter().map(|v| japanese_bracket(v).powf(alpha + 1.0) * gauss(v) * m * m).collect();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| boltzmann_distance(&coords[i], &coords[j]) <= 1.0 + 1e-12)
        .collect();
    let mut violations = 0;
    let mut worst = 0.0_f64;
    for _ in 0..200 {
        let mut f = normal_vec(&mut rng, n);
        let shift = f.iter().zip(&left).map(|(a, b)| a * b).sum::<f64>() / left.iter().sum::<f64>();
        f.iter_mut().for_each(|v| *v -= shift);
        let lhs: f64 = f.iter().zip(&left).map(|(a, b)| a * a * b).sum();
        let rhs: f64 = pairs.iter().map(|&(i, j)| (f[i] - f[j]).powi(2) * right[i]).sum();
        worst = worst.max(lhs / (c6 * rhs));
        if lhs > c6 * rhs * (1.0 + slack) {
            violations += 1;
        }
    }
    out.count("sample_violations", violations);
    out.metric("max_sample_ratio", worst, slack);
    out.require(violations == 0, || format!("{violations} sampled functions violate the inequality"));
    Ok(out)
}

/// Criteria replayed by the in-process determinism check.
const REPLAYED: [usize; 4] = [1, 3, 5, 8];

fn determinism(opts: &SelftestOptions) -> Result<Outcome> {
    let mut out = Outcome::new(10, criterion_name(10));
    let was_parallel = par::is_parallel();
    par::set_enabled(true);
    let first = emit_report(&run_selftest(opts, &REPLAYED), Format::Json)?;
    let second = emit_report(&run_selftest(opts, &REPLAYED), Format::Json)?;
    par::set_enabled(false);
    let sequential = emit_report(&run_selftest(opts, &REPLAYED), Format::Json)?;
    par::set_enabled(was_parallel);
    out.count("report_bytes", first.len());
    out.require(first == second, || "repeated runs differ".into());
    out.require(first == sequential, || "parallel and sequential runs differ".into());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcome_sections_are_named() {
        let out = Outcome::new(3, criterion_name(3));
        assert_eq!(out.section(), "c03_pnorm_iteration");
    }

    #[test]
    fn failures_reach_the_report() {
        let mut out = Outcome::new(1, "x");
        out.require(false, || "first".into());
        out.require(false, || "second".into());
        let mut r = RunReport::new("selftest", 0);
        record(&mut r, &out);
        assert!(!r.passed);
        assert_eq!(r.violations, vec!["c01_x: first; second".to_string()]);
    }

    #[test]
    fn unknown_criterion_fails() {
        assert!(!run_criterion(11, &SelftestOptions::default()).passed);
    }
}
