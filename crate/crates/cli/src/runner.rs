//! Executes one configured experiment and assembles its artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use baryprox::checks::{run_checks, CheckReport, Scope, DEFAULT_SEED};
use baryprox::flows::{integrate_flow, rate_agreement, FlowConfig, FlowKind, FlowStatus};
use baryprox::landscape::{f_bar, riemannian_hessian, LandscapePoint};
use baryprox::ppa::{run_ppa, PpaConfig, PpaStatus};
use baryprox::prox::{prox, resolvent_residual, ProxConfig};
use baryprox::simplex::{HybridPoint, LogitVector, SimplexPoint};
use baryprox::DVector;

use crate::config::{
    locate, problem_rng, ExperimentConfig, Method, MethodParams, SharedFamily, TraceFormat,
};
use crate::error::CliError;
use crate::output::{indexed, write_artifacts, Cell, RunSummary, Table};

/// Command-line overrides; each takes precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub format: Option<TraceFormat>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub trace_path: PathBuf,
    pub summary_path: PathBuf,
    /// Per-property lines for `checks`, empty otherwise.
    pub report_lines: Vec<String>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.summary.exit_code
    }
}

pub fn run_config_file(path: &Path, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let src = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("run")
        .to_string();
    run_config_str(&src, base, &stem, opts)
}

/// `base` anchors relative `output.dir`; `default_stem` names the
/// artifacts when `output.name` is absent.
pub fn run_config_str(
    src: &str,
    base: &Path,
    default_stem: &str,
    opts: &RunOptions,
) -> Result<RunOutcome, CliError> {
    let cfg = ExperimentConfig::parse(src)?;
    let dir = match (&opts.out_dir, &cfg.output.dir) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => base.join(d),
        (None, None) => base.to_path_buf(),
    };
    execute(cfg, src, &dir, default_stem, opts)
}

/// `checks` subcommand; artifacts land in `opts.out_dir` when given.
pub fn run_checks_command(scope: Scope, opts: &RunOptions) -> Result<(Vec<String>, i32), CliError> {
    let cfg = ExperimentConfig {
        method: Method::Checks,
        seed: opts.seed,
        problem: None,
        initial: Default::default(),
        params: MethodParams {
            scope: Some(scope.name().to_string()),
            ..Default::default()
        },
        output: Default::default(),
    };
    match &opts.out_dir {
        Some(dir) => {
            let stem = format!("checks_{scope}");
            let outcome = execute(cfg, "", dir, &stem, opts)?;
            Ok((outcome.report_lines.clone(), outcome.exit_code()))
        }
        None => {
            let produced = checks_result(run_checks(scope, opts.seed.unwrap_or(DEFAULT_SEED)));
            Ok((produced.report_lines, produced.exit_code))
        }
    }
}

fn execute(
    cfg: ExperimentConfig,
    src: &str,
    dir: &Path,
    default_stem: &str,
    opts: &RunOptions,
) -> Result<RunOutcome, CliError> {
    let seed = opts.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let format = opts.format.or(cfg.output.format).unwrap_or_default();
    let stem = cfg
        .output
        .name
        .clone()
        .unwrap_or_else(|| default_stem.to_string());

    let mut produced = match (&cfg.method, &cfg.problem) {
        (Method::Checks, _) => {
            let scope = match &cfg.params.scope {
                Some(s) => s.parse::<Scope>()?,
                None => Scope::All,
            };
            checks_result(run_checks(scope, seed))
        }
        (method, Some(problem)) => {
            let fam = problem.build(&mut problem_rng(seed))?;
            let (x, q) = initial_point(&cfg, src, fam.as_ref())?;
            match method {
                Method::ProxEval => prox_eval(&cfg, fam, &x, &q)?,
                Method::Ppa => ppa(&cfg, fam, &x, &q)?,
                Method::FlowMinMax => flow(&cfg, fam, &x, &q, FlowKind::MinMax)?,
                Method::FlowMinMin => flow(&cfg, fam, &x, &q, FlowKind::MinMin)?,
                Method::Landscape => landscape(fam, &x, &q)?,
                Method::Checks => unreachable!(),
            }
        }
        (_, None) => unreachable!("validated at parse time"),
    };

    let mut summary = RunSummary {
        method: cfg.method,
        status: produced.status,
        exit_code: produced.exit_code,
        seed,
        iterations: produced.iterations,
        final_x: produced.final_x,
        final_q: produced.final_q,
        scalars: produced
            .scalars
            .into_iter()
            .filter(|(_, v)| v.is_finite())
            .collect(),
        labels: std::mem::take(&mut produced.labels),
        message: produced.message,
        trace_file: String::new(),
        trace_columns: Vec::new(),
        config: cfg,
    };
    let written = write_artifacts(dir, &stem, format, &produced.table, &mut summary)?;
    Ok(RunOutcome {
        summary,
        trace_path: written.trace,
        summary_path: written.summary,
        report_lines: produced.report_lines,
    })
}

struct Produced {
    status: String,
    exit_code: i32,
    iterations: Option<u64>,
    final_x: Vec<f64>,
    final_q: Vec<f64>,
    scalars: BTreeMap<String, f64>,
    labels: BTreeMap<String, String>,
    message: Option<String>,
    table: Table,
    report_lines: Vec<String>,
}

impl Produced {
    fn new(status: &str, exit_code: i32, table: Table) -> Self {
        Self {
            status: status.into(),
            exit_code,
            iterations: None,
            final_x: Vec::new(),
            final_q: Vec::new(),
            scalars: BTreeMap::new(),
            labels: BTreeMap::new(),
            message: None,
            table,
            report_lines: Vec::new(),
        }
    }

    fn scalar(&mut self, key: &str, v: f64) {
        self.scalars.insert(key.into(), v);
    }
}

fn initial_point(
    cfg: &ExperimentConfig,
    src: &str,
    fam: &dyn baryprox::objectives::ObjectiveFamily,
) -> Result<(DVector<f64>, SimplexPoint), CliError> {
    let (m, s) = (fam.dim(), fam.num_losses());
    let init = &cfg.initial;
    let mismatch = |key: &str, expected: usize, found: usize| {
        CliError::config(
            locate(src, "initial", key),
            format!("initial.{key} has length {found}, the problem needs {expected}"),
        )
    };
    let x = match &init.x {
        Some(v) if v.len() != m => return Err(mismatch("x", m, v.len())),
        Some(v) => DVector::from_vec(v.clone()),
        None => DVector::zeros(m),
    };
    let q = match (&init.q, &init.xi_bar) {
        (Some(q), _) if q.len() != s => return Err(mismatch("q", s, q.len())),
        (Some(q), _) => SimplexPoint::from_probabilities(q).map_err(|e| {
            CliError::config(locate(src, "initial", "q"), format!("initial.q: {e}"))
        })?,
        (None, Some(xi)) if xi.len() + 1 != s => return Err(mismatch("xi_bar", s - 1, xi.len())),
        (None, Some(xi)) => LogitVector::new(DVector::from_vec(xi.clone()))
            .map_err(|e| {
                CliError::config(
                    locate(src, "initial", "xi_bar"),
                    format!("initial.xi_bar: {e}"),
                )
            })?
            .to_simplex(),
        (None, None) => SimplexPoint::uniform(s)?,
    };
    Ok((x, q))
}

fn prox_config(cfg: &ExperimentConfig) -> ProxConfig {
    let d = ProxConfig::default();
    let p = &cfg.params;
    ProxConfig {
        lambda: p.lambda.unwrap_or(d.lambda),
        inner_tol: p.inner_tol.unwrap_or(d.inner_tol),
        inner_max_iter: p.inner_max_iter.unwrap_or(d.inner_max_iter),
    }
}

fn state_columns(first: &str, m: usize, s: usize, extra: &[&str]) -> Vec<String> {
    std::iter::once(first.to_string())
        .chain(indexed("x", m))
        .chain(indexed("q", s))
        .chain(std::iter::once("F".to_string()))
        .chain(extra.iter().map(|e| e.to_string()))
        .collect()
}

fn state_row(index: Cell, x: &DVector<f64>, q: &DVector<f64>, f: f64, extra: &[f64]) -> Vec<Cell> {
    std::iter::once(index)
        .chain(x.iter().map(|v| Cell::num(*v)))
        .chain(q.iter().map(|v| Cell::num(*v)))
        .chain(std::iter::once(Cell::num(f)))
        .chain(extra.iter().map(|v| Cell::num(*v)))
        .collect()
}

fn objective(fam: &SharedFamily, x: &DVector<f64>, q: &DVector<f64>) -> f64 {
    q.dot(&fam.values(x))
}

const PROX_EXTRA: [&str; 3] = ["residual_x", "residual_q", "inner_iters"];

fn prox_eval(
    cfg: &ExperimentConfig,
    fam: SharedFamily,
    x: &DVector<f64>,
    q: &SimplexPoint,
) -> Result<Produced, CliError> {
    let pc = prox_config(cfg);
    let (m, s) = (fam.dim(), fam.num_losses());
    let mut table = Table::new(state_columns("k", m, s, &PROX_EXTRA));
    let qp = q.probabilities();
    table.push(state_row(
        Cell::Int(0),
        x,
        &qp,
        objective(&fam, x, &qp),
        &[0.0, 0.0, 0.0],
    ));

    match prox(fam.as_ref(), x, q, &pc) {
        Ok(r) => {
            let q1 = r.q_prime.probabilities();
            let f1 = objective(&fam, &r.x_prime, &q1);
            let extra = [r.residual.x, r.residual.q, r.inner_iters as f64];
            table.push(state_row(Cell::Int(1), &r.x_prime, &q1, f1, &extra));
            let mut out = Produced::new("evaluated", 0, table);
            out.iterations = Some(r.inner_iters as u64);
            out.scalar("F", f1);
            out.scalar("residual_x", r.residual.x);
            out.scalar("residual_q", r.residual.q);
            out.scalar(
                "resolvent_residual",
                resolvent_residual(fam.as_ref(), x, q, &r, &pc)?,
            );
            out.final_x = r.x_prime.iter().copied().collect();
            out.final_q = q1.iter().copied().collect();
            Ok(out)
        }
        Err(baryprox::Error::NonConvergence(nc)) => {
            let xb = DVector::from_vec(nc.x.clone());
            let qb = DVector::from_vec(nc.q.clone());
            let fb = objective(&fam, &xb, &qb);
            let extra = [nc.residual_x, nc.residual_q, nc.iterations as f64];
            table.push(state_row(Cell::Int(1), &xb, &qb, fb, &extra));
            let mut out = Produced::new("inner_failure", 2, table);
            out.message = Some(baryprox::Error::NonConvergence(nc.clone()).to_string());
            out.iterations = Some(nc.iterations as u64);
            out.scalar("residual_x", nc.residual_x);
            out.scalar("residual_q", nc.residual_q);
            out.final_x = nc.x;
            out.final_q = nc.q;
            Ok(out)
        }
        Err(e) => Err(e.into()),
    }
}

const PPA_EXTRA: [&str; 3] = ["barygrad_norm", "loss_spread", "step_bregman"];

fn ppa(
    cfg: &ExperimentConfig,
    fam: SharedFamily,
    x: &DVector<f64>,
    q: &SimplexPoint,
) -> Result<Produced, CliError> {
    let d = PpaConfig::default();
    let p = &cfg.params;
    let pc = PpaConfig {
        prox: prox_config(cfg),
        max_outer_iter: p.max_outer_iter.unwrap_or(d.max_outer_iter),
        stop_tol: p.stop_tol.unwrap_or(d.stop_tol),
        record_every: p.record_every.unwrap_or(d.record_every),
    };
    let trace = run_ppa(fam.as_ref(), &HybridPoint::new(x.clone(), q.clone()), &pc)?;
    let (m, s) = (fam.dim(), fam.num_losses());
    let mut table = Table::new(state_columns("k", m, s, &PPA_EXTRA));
    for r in &trace.records {
        let extra = [r.barygrad_norm, r.loss_spread, r.step_bregman];
        table.push(state_row(
            Cell::Int(r.k as u64),
            &r.x,
            &r.q.probabilities(),
            r.objective,
            &extra,
        ));
    }
    let code = match trace.status {
        PpaStatus::Converged => 0,
        PpaStatus::MaxIter | PpaStatus::InnerFailure(_) => 2,
    };
    let mut out = Produced::new(trace.status.label(), code, table);
    out.message = match &trace.status {
        PpaStatus::InnerFailure(msg) => Some(msg.clone()),
        PpaStatus::MaxIter if trace.no_fixed_point_suspected() => Some(format!(
            "no convergence after {} iterations; weights drift toward a vertex, no interior fixed point suspected",
            trace.iterations
        )),
        PpaStatus::MaxIter => Some(format!("no convergence after {} iterations", trace.iterations)),
        PpaStatus::Converged => None,
    };
    out.iterations = Some(trace.iterations as u64);
    out.final_x = trace.final_point.x.iter().copied().collect();
    out.final_q = trace
        .final_point
        .q
        .probabilities()
        .iter()
        .copied()
        .collect();
    out.scalar("F", trace.final_objective);
    out.scalar("barygrad_norm", trace.final_barygrad_norm);
    out.scalar("loss_spread", trace.final_loss_spread);
    out.labels.insert(
        "no_fixed_point_suspected".into(),
        trace.no_fixed_point_suspected().to_string(),
    );
    if let Some(v) = trace.vertex_drift {
        out.scalar("initial_max_weight", v.initial_max_weight);
        out.scalar("final_max_weight", v.final_max_weight);
        out.labels
            .insert("vertex_drift_monotone".into(), v.monotone.to_string());
    }
    Ok(out)
}

const FLOW_EXTRA: [&str; 3] = ["dF_dt", "entropy", "entropy_rate"];

/// Absolute and relative tolerances of the finite-difference rate audit.
const RATE_ABS_TOL: f64 = 1e-5;
const RATE_REL_TOL: f64 = 1e-3;

fn flow(
    cfg: &ExperimentConfig,
    fam: SharedFamily,
    x: &DVector<f64>,
    q: &SimplexPoint,
    kind: FlowKind,
) -> Result<Produced, CliError> {
    let d = FlowConfig::new(kind);
    let p = &cfg.params;
    let fc = FlowConfig {
        kind,
        t_end: p.t_end.unwrap_or(d.t_end),
        dt: p.dt.unwrap_or(d.dt),
        record_every: p.record_every.unwrap_or(d.record_every),
    };
    let init = LandscapePoint::new(x.clone(), LogitVector::from_simplex(q));
    let trace = integrate_flow(fam.as_ref(), &init, &fc)?;
    let (m, s) = (fam.dim(), fam.num_losses());
    let mut table = Table::new(state_columns("t", m, s, &FLOW_EXTRA));
    for r in &trace.records {
        let extra = [r.df_dt, r.entropy, r.entropy_rate];
        table.push(state_row(
            Cell::num(r.t),
            &r.x,
            &r.q.probabilities(),
            r.objective,
            &extra,
        ));
    }
    let code = match trace.status {
        FlowStatus::Completed => 0,
        FlowStatus::Diverged => 2,
    };
    let mut out = Produced::new(trace.status.label(), code, table);
    if trace.status == FlowStatus::Diverged {
        out.message = Some(format!(
            "reduced logits left the bounded region at t = {}",
            trace.final_t
        ));
    }
    out.iterations = Some(trace.steps as u64);
    let fp = &trace.final_point;
    out.final_x = fp.x.iter().copied().collect();
    out.final_q = fp
        .xi_bar
        .to_simplex()
        .probabilities()
        .iter()
        .copied()
        .collect();
    out.scalar("final_t", trace.final_t);
    if let Ok(f) = f_bar(fam.as_ref(), fp) {
        out.scalar("F", f);
    }
    let agree = rate_agreement(&trace, RATE_ABS_TOL, RATE_REL_TOL);
    out.scalar("df_dt_max_fd_error", agree.df_dt_max_error);
    out.scalar("entropy_rate_max_fd_error", agree.entropy_rate_max_error);
    out.labels
        .insert("rate_agreement".into(), agree.passed().to_string());
    Ok(out)
}

fn landscape(fam: SharedFamily, x: &DVector<f64>, q: &SimplexPoint) -> Result<Produced, CliError> {
    let p = LandscapePoint::new(x.clone(), LogitVector::from_simplex(q));
    let rep = riemannian_hessian(fam.as_ref(), &p)?;
    let (m, s) = (fam.dim(), fam.num_losses());
    let n = rep.eigenvalues.len();
    let mut fixed = vec![
        "grad_norm",
        "n_positive",
        "n_negative",
        "n_zero",
        "schur_n_negative",
    ];
    let eig_names: Vec<String> = indexed("eig", n).collect();
    fixed.extend(eig_names.iter().map(String::as_str));
    let mut table = Table::new(state_columns("k", m, s, &fixed));
    let qp = q.probabilities();
    let f = f_bar(fam.as_ref(), &p)?;
    let mut extra = vec![
        rep.grad_norm,
        rep.inertia.positive as f64,
        rep.inertia.negative as f64,
        rep.inertia.zero as f64,
        rep.b2_inertia.negative as f64,
    ];
    extra.extend(rep.eigenvalues.iter().copied());
    table.push(state_row(Cell::Int(0), x, &qp, f, &extra));

    let mut out = Produced::new("evaluated", 0, table);
    out.final_x = x.iter().copied().collect();
    out.final_q = qp.iter().copied().collect();
    out.scalar("F", f);
    out.scalar("grad_norm", rep.grad_norm);
    out.scalar("eig_threshold", rep.eig_threshold);
    out.labels
        .insert("classification".into(), rep.classification.label().into());
    out.labels.insert(
        "inertia".into(),
        format!(
            "({}, {}, {})",
            rep.inertia.positive, rep.inertia.negative, rep.inertia.zero
        ),
    );
    Ok(out)
}

pub const CHECK_COLUMNS: [&str; 6] = ["module", "name", "passed", "worst", "threshold", "samples"];

fn checks_result(report: CheckReport) -> Produced {
    let mut table = Table::new(CHECK_COLUMNS.iter().map(|c| c.to_string()).collect());
    for o in &report.outcomes {
        table.push(vec![
            Cell::Text(o.module.into()),
            Cell::Text(o.name.into()),
            Cell::Text(o.passed.to_string()),
            Cell::num(o.worst),
            Cell::num(o.threshold),
            Cell::Int(o.samples as u64),
        ]);
    }
    let passed = report.all_passed();
    let mut out = Produced::new(
        if passed { "passed" } else { "failed" },
        if passed { 0 } else { 2 },
        table,
    );
    out.report_lines = report.outcomes.iter().map(|o| o.to_string()).collect();
    let failed = report.failures().count();
    out.scalar("properties", report.outcomes.len() as f64);
    out.scalar("failed", failed as f64);
    if failed > 0 {
        out.message = Some(format!(
            "{failed} of {} properties failed",
            report.outcomes.len()
        ));
    }
    out
}
