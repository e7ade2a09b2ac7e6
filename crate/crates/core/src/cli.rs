//! Batch front end. Every subcommand loads a TOML config, runs one pipeline
//! and writes a [`RunReport`].
//!
//! Exit codes: 0 when every check passed, 1 when a verified inequality was
//! violated or a constant is unbounded, 2 for invalid input or infeasible
//! hypotheses.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::RunConfig;
use crate::constants::{
    best_constant_p2, build_transition_kernel, lower_bound_constant, run_constructive_chain,
    ChainOptions, ChainReport, ConstantReport,
};
use crate::error::{Error, Result};
use crate::functionals::{
    check_sobolev_weight_conditions, find_logsob_constant, make_psi_pair, poincare_sides,
};
use crate::par;
use crate::report::{emit_report, Format, Metric, RunReport};
use crate::scenarios::{build_scenario, Scenario};
use crate::selftest::{run_selftest, SelftestOptions, CRITERIA};
use crate::space::{GrowthFit, Relation};
use crate::weights::{
    check_admissibility, search_admissibility, AdmissibilityCertificate, AdmissibilityParams,
    SearchGrid, SearchOutcome,
};

#[derive(Debug, Parser)]
#[command(name = "poincare-lab", version, about = "Two-weight Poincaré and log-Sobolev laboratory")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Report destination; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "json")]
    pub format: Format,
    /// Seed for every random stream; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Multiplies every validation tolerance.
    #[arg(long, global = true, default_value_t = 1.0)]
    pub tolerance_scale: f64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the growth constant and certify the weight pair.
    CheckAdmissibility,
    /// Exact (p = 2), lower and constructive upper constants.
    EstimateConstant,
    /// Sample test functions against the best available constant.
    VerifyPoincare,
    /// Weight conditions and the largest log-Sobolev constant over a family.
    VerifyLogsob,
    /// Build the scenario and export it.
    Scenario,
    /// Run the acceptance criteria.
    Selftest {
        /// Comma-separated criterion numbers; all when absent.
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::CheckAdmissibility => "check-admissibility",
            Self::EstimateConstant => "estimate-constant",
            Self::VerifyPoincare => "verify-poincare",
            Self::VerifyLogsob => "verify-logsob",
            Self::Scenario => "scenario",
            Self::Selftest { .. } => "selftest",
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Inconsistency(_) => 1,
        _ => 2,
    }
}

/// Parse `argv`, run the subcommand and return the process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(t) = cli.threads {
        par::init_threads(t.max(1));
    }
    let report = match execute(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            let mut r = RunReport::new(cli.command.name(), cli.seed.unwrap_or(0));
            r.passed = false;
            r.exit_code = exit_code_for(&e);
            r.violations.push(e.to_string());
            r
        }
    };
    if let Err(e) = write_report(&cli, &report) {
        eprintln!("error: {e}");
        return 2;
    }
    report.exit_code
}

fn write_report(cli: &Cli, report: &RunReport) -> Result<()> {
    let bytes = emit_report(report, cli.format)?;
    match &cli.out {
        Some(path) => std::fs::write(path, bytes)?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<RunReport> {
    if let Command::Selftest { only } = &cli.command {
        let ids: Vec<usize> = if only.is_empty() { CRITERIA.to_vec() } else { only.clone() };
        let opts = SelftestOptions {
            seed: cli.seed.unwrap_or(0),
            tolerance_scale: cli.tolerance_scale,
        };
        return Ok(run_selftest(&opts, &ids));
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{} needs --config", cli.command.name())))?;
    let cfg = RunConfig::load(path)?;
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let mut ctx = Context {
        cfg,
        seed,
        scale: cli.tolerance_scale,
        report: RunReport::new(cli.command.name(), seed),
    };
    ctx.report.config = serde_json::to_value(&ctx.cfg)?;
    let sc = build_scenario(&ctx.cfg.scenario)?;
    ctx.describe(&sc);
    match cli.command {
        Command::CheckAdmissibility => ctx.check_admissibility(&sc)?,
        Command::EstimateConstant => ctx.estimate_constant(&sc)?,
        Command::VerifyPoincare => ctx.verify_poincare(&sc)?,
        Command::VerifyLogsob => ctx.verify_logsob(sc)?,
        Command::Scenario => ctx.export(&sc)?,
        Command::Selftest { .. } => unreachable!(),
    }
    let mut report = ctx.report;
    if report.exit_code == 0 && !report.passed {
        report.exit_code = 1;
    }
    Ok(report)
}

struct Context {
    cfg: RunConfig,
    seed: u64,
    scale: f64,
    report: RunReport,
}

impl Context {
    fn describe(&mut self, sc: &Scenario) {
        let r = &mut self.report;
        r.metric("scenario", "points", Metric::exact(sc.space.len() as f64));
        r.metric("scenario", "pairs", Metric::exact(sc.space.unit().pair_count() as f64));
        r.metric("scenario", "total_mass", Metric::exact(sc.space.total_mass()));
        r.metric("scenario", "x0_points", Metric::exact(sc.weights.x0().len() as f64));
        for (k, v) in &sc.diagnostics {
            r.metric("scenario", k, Metric::exact(*v));
        }
        r.warnings.extend(sc.warnings.iter().cloned());
    }

    fn growth(&mut self, sc: &Scenario) -> Result<GrowthFit> {
        let g = sc.space.fit_growth_constant(self.cfg.admissibility.growth_steps)?;
        let r = &mut self.report;
        r.metric("growth", "c", Metric::exact(g.c));
        r.metric("growth", "lambda0", Metric::exact(g.lambda0));
        r.metric("growth", "envelope", Metric::exact(g.envelope));
        r.metric("growth", "max_n_tested", Metric::exact(g.max_n_tested as f64));
        Ok(g)
    }

    /// Certificate from the fixed parameters when all are given, otherwise
    /// from the grid search. Reports the failure and returns `None` when the
    /// hypotheses do not hold.
    fn certificate(&mut self, sc: &Scenario, growth: &GrowthFit) -> Result<Option<AdmissibilityCertificate>> {
        let a = &self.cfg.admissibility;
        let cert = match (a.lambda, a.epsilon, a.s) {
            (Some(lambda), Some(epsilon), Some(s)) => {
                let params = AdmissibilityParams { lambda, epsilon, s };
                let cert = check_admissibility(&sc.space, &sc.weights, params, growth)?;
                for v in cert.violations.iter().take(20) {
                    self.report.violations.push(format!("{v:?}"));
                }
                cert.passed.then_some(cert)
            }
            _ => match search_admissibility(&sc.space, &sc.weights, &SearchGrid::default_for(growth), growth)? {
                SearchOutcome::Feasible { certificate } => Some(certificate),
                SearchOutcome::Infeasible { failures } => {
                    for f in failures.iter().take(20) {
                        self.report.violations.push(format!(
                            "s = {}, lambda = {}, epsilon = {}: {:?}",
                            f.s, f.lambda, f.epsilon, f.worst
                        ));
                    }
                    None
                }
            },
        };
        if let Some(c) = &cert {
            let r = &mut self.report;
            r.metric("certificate", "lambda", Metric::exact(c.lambda));
            r.metric("certificate", "epsilon", Metric::exact(c.epsilon));
            r.metric("certificate", "s", Metric::exact(c.s));
            r.metric("certificate", "lambda0", Metric::exact(c.lambda0));
            r.metric(
                "certificate",
                "x0_constant",
                Metric::exact(c.x0_constant.unwrap_or(f64::INFINITY)),
            );
        }
        Ok(cert)
    }

    fn check_admissibility(&mut self, sc: &Scenario) -> Result<()> {
        let growth = self.growth(sc)?;
        let cert = self.certificate(sc, &growth)?;
        self.report.check("admissibility", cert.is_some(), if cert.is_some() { "certified" } else { "no parameters pass" });
        if cert.is_none() {
            self.report.exit_code = 2;
            eprintln!("infeasible: no admissibility certificate for this weight pair");
        }
        Ok(())
    }

    fn exact(&mut self, sc: &Scenario) -> Result<Option<f64>> {
        let best = best_constant_p2(&sc.space, &sc.weights, &sc.constraint)?;
        let r = &mut self.report;
        r.metric("constant", "eigen_min", Metric::exact(best.eigen_min));
        r.metric("constant", "eigen_max", Metric::exact(best.eigen_max));
        r.metric(
            "constant",
            "exact_p2",
            Metric::new(best.constant.unwrap_or(f64::INFINITY), 1e-9 * self.scale),
        );
        r.data.insert("witness".into(), serde_json::to_value(&best.witness)?);
        r.check("bounded", best.constant.is_some(), match best.constant {
            Some(_) => "finite".to_string(),
            None => "constant is unbounded".to_string(),
        });
        Ok(best.constant)
    }

    fn chain(&mut self, sc: &Scenario, p: f64) -> Result<Option<ChainReport>> {
        let growth = self.growth(sc)?;
        let Some(cert) = self.certificate(sc, &growth)? else {
            self.report.warnings.push("no admissibility certificate, constructive bound skipped".into());
            return Ok(None);
        };
        let kernel = build_transition_kernel(&sc.space, &sc.weights, &cert)?;
        let laws = kernel.laws();
        let c = &self.cfg.constant;
        let chain = run_constructive_chain(
            &sc.space,
            &sc.weights,
            &kernel,
            &growth,
            &ChainOptions {
                p,
                n_max: c.n_max,
                validation_samples: c.validation_samples,
                seed: self.seed,
                ..ChainOptions::default()
            },
        )?;
        let tol = 1e-10 * self.scale;
        let r = &mut self.report;
        r.metric("kernel", "max_row_deviation", Metric::new(laws.max_row_deviation, 1e-12 * self.scale));
        r.metric("kernel", "max_linfty_ratio", Metric::new(laws.max_linfty_ratio, crate::REL_SLACK));
        r.check("kernel_laws", laws.hold(1e-12 * self.scale), format!("{laws:?}"));
        r.metric("chain", "delta", Metric::exact(chain.delta));
        r.metric("chain", "c_upper", Metric::new(chain.c_upper, 1e-14));
        r.metric("chain", "c_upper_floor", Metric::exact(chain.c_upper_floor));
        r.metric("chain", "nilpotency_index", Metric::exact(chain.nilpotency_index as f64));
        r.metric("chain", "steps_checked", Metric::exact(chain.steps_checked as f64));
        r.metric("chain", "identity_error", Metric::new(chain.identity_error, tol));
        r.metric("chain", "lyapunov_excess", Metric::new(chain.lyapunov_excess, tol));
        r.metric("chain", "delta_chain_margin", Metric::new(chain.delta_chain_margin, tol));
        r.metric("chain", "validation_max_ratio", Metric::exact(chain.validation_max_ratio));
        r.metric("chain", "validation_violations", Metric::exact(chain.validation_violations as f64));
        let ok = chain.identity_error <= tol
            && chain.lyapunov_excess <= tol
            && chain.delta_chain_margin >= -tol
            && chain.validation_violations == 0;
        r.check("chain", ok, format!(
            "identity {:e}, lyapunov {:e}, margin {:e}, {} validation violations",
            chain.identity_error, chain.lyapunov_excess, chain.delta_chain_margin, chain.validation_violations
        ));
        Ok(Some(chain))
    }

    fn estimate_constant(&mut self, sc: &Scenario) -> Result<()> {
        let p = self.cfg.constant.p;
        let exact = if p == 2.0 { Some(best_constant_p2(&sc.space, &sc.weights, &sc.constraint)?) } else { None };
        if p == 2.0 {
            self.exact(sc)?;
        }
        let lower = lower_bound_constant(&sc.space, &sc.weights, p, &sc.constraint, self.cfg.constant.restarts, self.seed)?;
        self.report.metric("constant", "lower_bound", Metric::exact(lower.value));
        self.report.metric("constant", "lower_bound_live_starts", Metric::exact(lower.live_starts as f64));
        let upper = if self.cfg.constant.chain { self.chain(sc, p)? } else { None };
        let summary = ConstantReport {
            p,
            exact_p2: exact,
            lower_bound: Some(lower),
            constructive_upper: upper,
        };
        let tol = 1e-9 * self.scale;
        self.report.check("ordered", summary.is_ordered(tol), "lower <= exact <= upper");
        Ok(())
    }

    fn verify_poincare(&mut self, sc: &Scenario) -> Result<()> {
        let p = self.cfg.constant.p;
        let constant = if p == 2.0 {
            self.exact(sc)?
        } else {
            let chain = self
                .chain(sc, p)?
                .ok_or_else(|| Error::Infeasible("p != 2 needs an admissibility certificate".into()))?;
            Some(chain.c_upper)
        };
        self.report.metric("poincare", "constant", Metric::new(constant.unwrap_or(f64::INFINITY), 1e-9 * self.scale));
        let Some(c) = constant else {
            return Ok(());
        };
        let slack = self.cfg.poincare.slack * self.scale;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (mut violations, mut worst) = (0usize, 0.0_f64);
        for _ in 0..self.cfg.poincare.samples {
            let mut f: Vec<f64> = (0..sc.space.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            sc.constraint.project(&sc.space, &sc.weights, &mut f)?;
            let (lhs, rhs) = poincare_sides(&sc.space, &sc.weights, &f, p)?;
            if rhs > 0.0 {
                worst = worst.max(lhs / (c * rhs));
            }
            if lhs > c * rhs * (1.0 + slack) {
                violations += 1;
            }
        }
        let r = &mut self.report;
        r.metric("poincare", "samples", Metric::exact(self.cfg.poincare.samples as f64));
        r.metric("poincare", "violations", Metric::exact(violations as f64));
        r.metric("poincare", "max_ratio", Metric::new(worst, slack));
        r.check("poincare", violations == 0, format!("{violations} sampled functions violate lhs <= C rhs"));
        Ok(())
    }

    fn verify_logsob(&mut self, sc: Scenario) -> Result<()> {
        let l = self.cfg.logsob.clone();
        let sc = if sc.lattice.is_some() {
            sc.with_scales(&l.scale_radii)?
        } else {
            let n = sc.space.len();
            let scales = vec![sc.space.unit().clone(), Relation::diagonal(n)];
            let space = sc.space.clone().with_scales(scales)?;
            Scenario { space, ..sc }
        };
        let psi = make_psi_pair(l.psi, l.alpha, l.c)?;
        let diag = check_sobolev_weight_conditions(&sc.space, &sc.weights, &psi, l.p)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let family = (0..l.family)
            .map(|_| {
                let mut f: Vec<f64> = (0..sc.space.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
                sc.constraint.project(&sc.space, &sc.weights, &mut f)?;
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?;
        let found = find_logsob_constant(&sc.space, &sc.weights, &psi, &family, l.p)?;
        let r = &mut self.report;
        r.metric("logsob", "slow_growth_constant", Metric::exact(psi.slow_growth_constant));
        r.metric("logsob", "k1", Metric::exact(diag.k1));
        r.metric("logsob", "k2", Metric::exact(diag.k2));
        r.metric("logsob", "flagged_points", Metric::exact(diag.flagged.len() as f64));
        r.metric("logsob", "c_star", Metric::new(found.c_star, 1e-6));
        r.metric("logsob", "max_functional", Metric::new(found.max_functional, 1e-6));
        r.metric("logsob", "bisection_steps", Metric::exact(found.bisection_steps as f64));
        let finite = diag.k1.is_finite() && diag.k2.is_finite() && diag.flagged.is_empty();
        r.check("weight_conditions", finite, format!("K1 = {}, K2 = {}", diag.k1, diag.k2));
        r.check("logsob", found.c_star > 0.0 && found.max_functional <= 1.0, format!("c* = {}", found.c_star));
        Ok(())
    }

    fn export(&mut self, sc: &Scenario) -> Result<()> {
        self.growth(sc)?;
        let w = sc.weights.w();
        let wp = sc.weights.w_plus();
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        let r = &mut self.report;
        r.metric("weights", "w_min", Metric::exact(min(w)));
        r.metric("weights", "w_max", Metric::exact(max(w)));
        r.metric("weights", "w_plus_min", Metric::exact(min(wp)));
        r.metric("weights", "w_plus_max", Metric::exact(max(wp)));
        let ordered = w.iter().zip(wp).all(|(a, b)| a <= b);
        r.check("w_le_w_plus", ordered, "W <= W_+ pointwise");
        r.data.insert("space".into(), serde_json::to_value(sc.space.to_doc())?);
        r.data.insert(
            "weights".into(),
            serde_json::json!({ "w": w, "w_plus": wp, "x0": sc.weights.x0() }),
        );
        if let Some(l) = &sc.lattice {
            let coords: Vec<Vec<f64>> = (0..l.len()).map(|i| l.coords(i)).collect();
            r.data.insert("coordinates".into(), serde_json::to_value(coords)?);
        }
        Ok(())
    }
}
