//! Generalized proximal point algorithm: `(x^{k+1}, q^{k+1}) = prox(x^k, q^k)`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::objectives::{barygradient, ObjectiveFamily};
use crate::prox::{prox, ProxConfig};
use crate::simplex::{hybrid_bregman, HybridPoint, SimplexPoint};

/// Certificate thresholds on `|J^T q|` and `max l - min l` required before a
/// small step is reported as convergence.
pub const FIXED_POINT_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpaConfig {
    pub prox: ProxConfig,
    pub max_outer_iter: usize,
    /// Threshold on `D_f` between consecutive iterates.
    pub stop_tol: f64,
    pub record_every: usize,
}

impl Default for PpaConfig {
    fn default() -> Self {
        Self {
            prox: ProxConfig::default(),
            max_outer_iter: 5000,
            stop_tol: 1e-12,
            record_every: 1,
        }
    }
}

impl PpaConfig {
    pub fn validate(&self) -> Result<()> {
        self.prox.validate()?;
        if !(self.stop_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "stop_tol must be positive, got {}",
                self.stop_tol
            )));
        }
        if self.max_outer_iter == 0 || self.record_every == 0 {
            return Err(Error::InvalidArgument(
                "max_outer_iter and record_every must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// State `k` of the iteration together with the step it takes.
#[derive(Debug, Clone, PartialEq)]
pub struct PpaRecord {
    pub k: usize,
    pub x: DVector<f64>,
    pub q: SimplexPoint,
    /// `F(x, q) = q^T l(x)`.
    pub objective: f64,
    pub barygrad_norm: f64,
    pub loss_spread: f64,
    /// `D_f((x^{k+1}, q^{k+1}), (x^k, q^k))`, i.e. the prox displacement at `k`.
    pub step_bregman: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PpaStatus {
    Converged,
    MaxIter,
    InnerFailure(String),
}

impl PpaStatus {
    pub fn label(&self) -> &'static str {
        match self {
            PpaStatus::Converged => "converged",
            PpaStatus::MaxIter => "max_iter",
            PpaStatus::InnerFailure(_) => "inner_failure",
        }
    }
}

/// Evidence that the iterates run toward a simplex vertex because no
/// interior fixed point exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexDrift {
    pub initial_max_weight: f64,
    pub final_max_weight: f64,
    /// Whether `max_s q_s` was nondecreasing over the recorded iterates.
    pub monotone: bool,
    pub final_loss_spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpaTrace {
    pub records: Vec<PpaRecord>,
    pub status: PpaStatus,
    /// Number of prox applications performed.
    pub iterations: usize,
    pub final_point: HybridPoint,
    pub final_objective: f64,
    pub final_barygrad_norm: f64,
    pub final_loss_spread: f64,
    pub vertex_drift: Option<VertexDrift>,
}

impl PpaTrace {
    /// Recorded iterates followed by the final point.
    pub fn iterates(&self) -> Vec<HybridPoint> {
        let mut pts: Vec<HybridPoint> = self
            .records
            .iter()
            .map(|r| HybridPoint::new(r.x.clone(), r.q.clone()))
            .collect();
        pts.push(self.final_point.clone());
        pts
    }

    pub fn no_fixed_point_suspected(&self) -> bool {
        self.vertex_drift.is_some()
    }
}

struct Snapshot {
    objective: f64,
    barygrad_norm: f64,
    loss_spread: f64,
}

fn snapshot(fam: &dyn ObjectiveFamily, p: &HybridPoint) -> Result<Snapshot> {
    let l = fam.values(&p.x);
    Ok(Snapshot {
        objective: p.q.probabilities().dot(&l),
        barygrad_norm: barygradient(fam, &p.x, &p.q)?.norm(),
        loss_spread: l.max() - l.min(),
    })
}

pub fn run_ppa(fam: &dyn ObjectiveFamily, init: &HybridPoint, cfg: &PpaConfig) -> Result<PpaTrace> {
    cfg.validate()?;
    let mut current = init.clone();
    let mut snap = snapshot(fam, &current)?;
    let mut records = Vec::new();
    let mut status = PpaStatus::MaxIter;
    let mut iterations = 0;

    for k in 0..cfg.max_outer_iter {
        let next = match prox(fam, &current.x, &current.q, &cfg.prox) {
            Ok(res) => res.point(),
            Err(e) => {
                status = PpaStatus::InnerFailure(e.to_string());
                break;
            }
        };
        iterations += 1;
        let step = hybrid_bregman(&next, &current)?;
        let next_snap = snapshot(fam, &next)?;
        let certified =
            next_snap.barygrad_norm <= FIXED_POINT_TOL && next_snap.loss_spread <= FIXED_POINT_TOL;
        let done = step <= cfg.stop_tol && certified;
        if k % cfg.record_every == 0 || done || k + 1 == cfg.max_outer_iter {
            records.push(PpaRecord {
                k,
                x: current.x.clone(),
                q: current.q.clone(),
                objective: snap.objective,
                barygrad_norm: snap.barygrad_norm,
                loss_spread: snap.loss_spread,
                step_bregman: step,
            });
        }
        current = next;
        snap = next_snap;
        if done {
            status = PpaStatus::Converged;
            break;
        }
    }

    let vertex_drift = (status == PpaStatus::MaxIter && snap.loss_spread > FIXED_POINT_TOL)
        .then(|| {
            let weights: Vec<f64> = records
                .iter()
                .map(|r| r.q.max_weight())
                .chain(std::iter::once(current.q.max_weight()))
                .collect();
            let monotone = weights.windows(2).all(|w| w[1] >= w[0] - 1e-15);
            VertexDrift {
                initial_max_weight: init.q.max_weight(),
                final_max_weight: current.q.max_weight(),
                monotone,
                final_loss_spread: snap.loss_spread,
            }
        })
        .filter(|d| d.final_max_weight > d.initial_max_weight);

    Ok(PpaTrace {
        records,
        status,
        iterations,
        final_point: current,
        final_objective: snap.objective,
        final_barygrad_norm: snap.barygrad_norm,
        final_loss_spread: snap.loss_spread,
        vertex_drift,
    })
}

/// `D_f(anchor, iterate_k)` over the recorded iterates and the final point.
pub fn fejer_diagnostic(trace: &PpaTrace, anchor: &HybridPoint) -> Result<Vec<f64>> {
    trace
        .iterates()
        .iter()
        .map(|p| hybrid_bregman(anchor, p))
        .collect()
}
