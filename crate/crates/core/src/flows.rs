//! Barygradient min-max and min-min flows.
//!
//! In full logits the flows read `x' = -J_l(x)^T q`, `xi' = +-l(x) + gamma 1`
//! with `q = sigma(xi)`. The shift `gamma` only moves `xi` along `1` and leaves
//! `q` unchanged, so trajectories are integrated in the chart `xi_S = 0`,
//! which selects `gamma = -+l_S(x)` and gives `xi_bar' = +-l_bar(x)`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::landscape::{reduced_losses, LandscapePoint};
use crate::linalg::symmetric_pinv;
use crate::objectives::{check_x, ObjectiveFamily};
use crate::simplex::{covariance, negentropy, HybridPoint, LogitVector, SimplexPoint};

/// Integration stops once `max |xi_bar|` exceeds this bound.
pub const DIVERGENCE_BOUND: f64 = 700.0;
/// Eigenvalues of `Cov(q)` below this magnitude are treated as zero.
pub const PINV_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowKind {
    MinMax,
    MinMin,
}

impl FlowKind {
    /// `+1` for min-max (ascent in `q`), `-1` for min-min.
    pub fn sign(&self) -> f64 {
        match self {
            FlowKind::MinMax => 1.0,
            FlowKind::MinMin => -1.0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            FlowKind::MinMax => "min_max",
            FlowKind::MinMin => "min_min",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub kind: FlowKind,
    pub t_end: f64,
    /// Fixed RK4 step.
    pub dt: f64,
    pub record_every: usize,
}

impl FlowConfig {
    pub fn new(kind: FlowKind) -> Self {
        Self {
            kind,
            t_end: 50.0,
            dt: 0.01,
            record_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive and finite, got {}",
                self.dt
            )));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "t_end must be positive and finite, got {}",
                self.t_end
            )));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidArgument("record_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub t: f64,
    pub x: DVector<f64>,
    pub xi_bar: LogitVector,
    pub q: SimplexPoint,
    /// `F = q^T l(x)`.
    pub objective: f64,
    pub df_dt: f64,
    /// Negative entropy `h(q) = sum_s q_s log q_s`.
    pub entropy: f64,
    pub entropy_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowStatus {
    Completed,
    Diverged,
}

impl FlowStatus {
    pub fn label(&self) -> &'static str {
        match self {
            FlowStatus::Completed => "completed",
            FlowStatus::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrace {
    pub kind: FlowKind,
    pub records: Vec<FlowRecord>,
    pub status: FlowStatus,
    pub steps: usize,
    pub final_t: f64,
    pub final_point: LandscapePoint,
}

fn check_inputs(fam: &dyn ObjectiveFamily, x: &DVector<f64>, xi_bar: &LogitVector) -> Result<()> {
    check_x(fam, x)?;
    if xi_bar.simplex_dim() != fam.num_losses() {
        return Err(Error::dims(
            "reduced logits",
            fam.num_losses() - 1,
            xi_bar.as_vector().len(),
        ));
    }
    Ok(())
}

fn field(
    fam: &dyn ObjectiveFamily,
    x: &DVector<f64>,
    xi_bar: &DVector<f64>,
    sign: f64,
) -> (DVector<f64>, DVector<f64>) {
    let q = LogitVector::new(xi_bar.clone())
        .map(|v| v.to_simplex().probabilities())
        .unwrap_or_else(|_| DVector::from_element(xi_bar.len() + 1, f64::NAN));
    let dx = -(fam.jacobian(x).transpose() * q);
    let dxi = reduced_losses(&fam.values(x)) * sign;
    (dx, dxi)
}

/// `(dx, dxi_bar) = (-J_l(x)^T sigma(xi), +-l_bar(x))`.
pub fn flow_vector_field(
    fam: &dyn ObjectiveFamily,
    x: &DVector<f64>,
    xi_bar: &LogitVector,
    kind: FlowKind,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_inputs(fam, x, xi_bar)?;
    Ok(field(fam, x, xi_bar.as_vector(), kind.sign()))
}

/// `Var_{s~q}(l_s) = l^T Diag(q) l - (q^T l)^2`.
pub fn loss_variance(q: &SimplexPoint, l: &DVector<f64>) -> f64 {
    let p = q.probabilities();
    let mean = p.dot(l);
    l.iter().zip(p.iter()).map(|(v, w)| w * v * v).sum::<f64>() - mean * mean
}

/// `+-Var_q(l) - |J_l^T q|^2`.
pub fn df_dt_analytic(
    fam: &dyn ObjectiveFamily,
    x: &DVector<f64>,
    xi_bar: &LogitVector,
    kind: FlowKind,
) -> Result<f64> {
    check_inputs(fam, x, xi_bar)?;
    let q = xi_bar.to_simplex();
    let l = fam.values(x);
    let g = fam.jacobian(x).transpose() * q.probabilities();
    Ok(kind.sign() * loss_variance(&q, &l) - g.norm_squared())
}

/// `+-xi^T Cov(q) l(x)` with `xi = (xi_bar, 0)`.
pub fn entropy_rate_analytic(
    fam: &dyn ObjectiveFamily,
    x: &DVector<f64>,
    xi_bar: &LogitVector,
    kind: FlowKind,
) -> Result<f64> {
    check_inputs(fam, x, xi_bar)?;
    let q = xi_bar.to_simplex();
    let cov_l = covariance(&q) * fam.values(x);
    Ok(kind.sign() * xi_bar.full_logits().dot(&cov_l))
}

/// Max-norm gap between `Cov(q) xi'` for the chart field lifted to full
/// logits and for `+-Cov^+ Cov l + (gamma +- 1^T l / S) 1` with
/// `gamma = -+l_S`.
pub fn pseudo_riemannian_residual(
    fam: &dyn ObjectiveFamily,
    x: &DVector<f64>,
    xi_bar: &LogitVector,
    kind: FlowKind,
) -> Result<f64> {
    check_inputs(fam, x, xi_bar)?;
    let sign = kind.sign();
    let q = xi_bar.to_simplex();
    let s = q.len();
    let l = fam.values(x);
    let cov = covariance(&q);
    let l_last = l[s - 1];

    let lifted = l.add_scalar(-l_last) * sign;

    let grad_tilde = &cov * &l;
    let gamma = -sign * l_last;
    let rewritten = (symmetric_pinv(&cov, PINV_CUTOFF) * grad_tilde * sign)
        .add_scalar(gamma + sign * l.sum() / s as f64);

    Ok((&cov * (lifted - rewritten)).amax())
}

fn rk4_step(
    f: &dyn Fn(&DVector<f64>, &DVector<f64>) -> (DVector<f64>, DVector<f64>),
    x: &DVector<f64>,
    y: &DVector<f64>,
    h: f64,
) -> (DVector<f64>, DVector<f64>) {
    let (k1x, k1y) = f(x, y);
    let (k2x, k2y) = f(&(x + &k1x * (h / 2.0)), &(y + &k1y * (h / 2.0)));
    let (k3x, k3y) = f(&(x + &k2x * (h / 2.0)), &(y + &k2y * (h / 2.0)));
    let (k4x, k4y) = f(&(x + &k3x * h), &(y + &k3y * h));
    (
        x + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0),
        y + (k1y + k2y * 2.0 + k3y * 2.0 + k4y) * (h / 6.0),
    )
}

fn step_count(t_end: f64, dt: f64) -> usize {
    ((t_end / dt) - 1e-9).ceil().max(1.0) as usize
}

fn record(
    fam: &dyn ObjectiveFamily,
    t: f64,
    x: &DVector<f64>,
    xi_bar: &LogitVector,
    kind: FlowKind,
) -> Result<FlowRecord> {
    let q = xi_bar.to_simplex();
    Ok(FlowRecord {
        t,
        x: x.clone(),
        xi_bar: xi_bar.clone(),
        objective: q.probabilities().dot(&fam.values(x)),
        df_dt: df_dt_analytic(fam, x, xi_bar, kind)?,
        entropy: negentropy(&q).0,
        entropy_rate: entropy_rate_analytic(fam, x, xi_bar, kind)?,
        q,
    })
}

/// Classical RK4 in the `(x, xi_bar)` chart. Steps are `dt` except for a
/// shortened last step landing on `t_end`.
pub fn integrate_flow(
    fam: &dyn ObjectiveFamily,
    init: &LandscapePoint,
    cfg: &FlowConfig,
) -> Result<FlowTrace> {
    cfg.validate()?;
    check_inputs(fam, &init.x, &init.xi_bar)?;
    let sign = cfg.kind.sign();
    let f = |x: &DVector<f64>, y: &DVector<f64>| field(fam, x, y, sign);
    let n = step_count(cfg.t_end, cfg.dt);

    let mut x = init.x.clone();
    let mut xi = init.xi_bar.clone();
    let mut t = 0.0;
    let mut records = vec![record(fam, t, &x, &xi, cfg.kind)?];
    let mut status = FlowStatus::Completed;
    let mut steps = 0;

    for k in 1..=n {
        let h = if k == n {
            cfg.t_end - cfg.dt * (n - 1) as f64
        } else {
            cfg.dt
        };
        let (nx, ny) = rk4_step(&f, &x, xi.as_vector(), h);
        let finite = nx.iter().chain(ny.iter()).all(|v| v.is_finite());
        if !finite {
            status = FlowStatus::Diverged;
            break;
        }
        x = nx;
        xi = LogitVector::new(ny)?;
        t = if k == n { cfg.t_end } else { cfg.dt * k as f64 };
        steps = k;
        let escaped = xi.as_vector().amax() > DIVERGENCE_BOUND;
        if escaped || !fam.values(&x).iter().all(|v| v.is_finite()) {
            status = FlowStatus::Diverged;
        }
        if k % cfg.record_every == 0 || k == n || status == FlowStatus::Diverged {
            records.push(record(fam, t, &x, &xi, cfg.kind)?);
        }
        if status == FlowStatus::Diverged {
            break;
        }
    }

    Ok(FlowTrace {
        kind: cfg.kind,
        records,
        status,
        steps,
        final_t: t,
        final_point: LandscapePoint::new(x, xi),
    })
}

/// Worst excess of `|finite difference - analytic|` over
/// `max(abs_tol, rel_tol |analytic|)` along a trace, for `dF/dt` and `dh/dt`.
/// Derivatives use the fourth-order central stencil on records `k-2..=k+2`;
/// a nonpositive excess means every interior record agrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateAgreement {
    pub df_dt_excess: f64,
    pub entropy_rate_excess: f64,
    pub df_dt_max_error: f64,
    pub entropy_rate_max_error: f64,
    pub checked: usize,
}

impl RateAgreement {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.df_dt_excess <= 0.0 && self.entropy_rate_excess <= 0.0
    }
}

fn stencil(v: [f64; 5], h: f64) -> f64 {
    (v[0] - 8.0 * v[1] + 8.0 * v[3] - v[4]) / (12.0 * h)
}

pub fn rate_agreement(trace: &FlowTrace, abs_tol: f64, rel_tol: f64) -> RateAgreement {
    let mut out = RateAgreement {
        df_dt_excess: f64::NEG_INFINITY,
        entropy_rate_excess: f64::NEG_INFINITY,
        df_dt_max_error: 0.0,
        entropy_rate_max_error: 0.0,
        checked: 0,
    };
    for w in trace.records.windows(5) {
        let h = w[1].t - w[0].t;
        let uniform = w
            .windows(2)
            .all(|p| ((p[1].t - p[0].t) - h).abs() <= 1e-9 * h);
        if !uniform {
            continue;
        }
        let mid = &w[2];
        let fd_f = stencil(std::array::from_fn(|i| w[i].objective), h);
        let fd_h = stencil(std::array::from_fn(|i| w[i].entropy), h);
        let ef = (fd_f - mid.df_dt).abs();
        let eh = (fd_h - mid.entropy_rate).abs();
        out.df_dt_max_error = out.df_dt_max_error.max(ef);
        out.entropy_rate_max_error = out.entropy_rate_max_error.max(eh);
        out.df_dt_excess = out
            .df_dt_excess
            .max(ef - abs_tol.max(rel_tol * mid.df_dt.abs()));
        out.entropy_rate_excess = out
            .entropy_rate_excess
            .max(eh - abs_tol.max(rel_tol * mid.entropy_rate.abs()));
        out.checked += 1;
    }
    out
}

/// Choice of the logit shift `gamma` in the full-logit system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gauge {
    /// `gamma = 0`.
    Zero,
    /// `gamma = -+l_S(x)`, which keeps `xi_S` constant.
    Pinned,
}

/// RK4 on `(x, xi)` with `xi` in `R^S` and the chosen gauge. Returns
/// `(t, (x, sigma(xi)))` at every `record_every`-th step and at the end.
pub fn integrate_full_logits(
    fam: &dyn ObjectiveFamily,
    init_x: &DVector<f64>,
    init_xi: &DVector<f64>,
    kind: FlowKind,
    gauge: Gauge,
    t_end: f64,
    dt: f64,
    record_every: usize,
) -> Result<Vec<(f64, HybridPoint)>> {
    FlowConfig {
        kind,
        t_end,
        dt,
        record_every,
    }
    .validate()?;
    check_x(fam, init_x)?;
    if init_xi.len() != fam.num_losses() {
        return Err(Error::dims("full logits", fam.num_losses(), init_xi.len()));
    }
    let sign = kind.sign();
    let s = init_xi.len();
    let f = |x: &DVector<f64>, xi: &DVector<f64>| {
        let q = SimplexPoint::from_log_weights(xi.clone())
            .map(|p| p.probabilities())
            .unwrap_or_else(|_| DVector::from_element(s, f64::NAN));
        let l = fam.values(x);
        let gamma = match gauge {
            Gauge::Zero => 0.0,
            Gauge::Pinned => -sign * l[s - 1],
        };
        (
            -(fam.jacobian(x).transpose() * q),
            (l * sign).add_scalar(gamma),
        )
    };
    let point = |x: &DVector<f64>, xi: &DVector<f64>| -> Result<HybridPoint> {
        Ok(HybridPoint::new(
            x.clone(),
            SimplexPoint::from_log_weights(xi.clone())?,
        ))
    };

    let n = step_count(t_end, dt);
    let mut x = init_x.clone();
    let mut xi = init_xi.clone();
    let mut out = vec![(0.0, point(&x, &xi)?)];
    for k in 1..=n {
        let h = if k == n {
            t_end - dt * (n - 1) as f64
        } else {
            dt
        };
        (x, xi) = rk4_step(&f, &x, &xi, h);
        if k % record_every == 0 || k == n {
            let t = if k == n { t_end } else { dt * k as f64 };
            out.push((t, point(&x, &xi)?));
        }
    }
    Ok(out)
}
