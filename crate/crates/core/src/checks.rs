//! Seeded property suites over every module.
//!
//! Each property reports its worst measured violation next to the threshold
//! it is held to. Suites are deterministic for a given seed.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flows::{
    self, df_dt_analytic, entropy_rate_analytic, flow_vector_field, integrate_flow,
    integrate_full_logits, loss_variance, pseudo_riemannian_residual, FlowConfig, FlowKind, Gauge,
};
use crate::landscape::{
    self, critical_value_scan, euclidean_hessian, f_bar, fix_equals_critical_check, grad_f_bar,
    reduced_losses, riemannian_hessian, riemannian_logit_block, tensor_mode2, LandscapePoint,
};
use crate::linalg;
use crate::objectives::{
    barygradient, finite_diff_check, outer_product, outer_sum, rank_one_factor_check,
    ConstantFamily, ObjectiveFamily, QuadraticFamily,
};
use crate::ppa::{fejer_diagnostic, run_ppa, PpaConfig, PpaStatus, FIXED_POINT_TOL};
use crate::prox::{
    self, firmness_gap, fixed_point_residual, monotone_operator_a, prox, resolvent_residual,
    reweight, saddle_values, ProxConfig,
};
use crate::sampling::{
    planted_quadratic, random_hybrid, random_quadratic, random_simplex, random_softplus, random_x,
};
use crate::simplex::{
    christoffel, christoffel_first_kind, concat, covariance, fisher_information, grad_negentropy,
    hybrid_bregman, inverse_grad_negentropy, kl, negentropy, softargmax, HybridPoint, LogitVector,
    SimplexPoint,
};

pub const DEFAULT_SEED: u64 = 0x5eed_2024;

/// Central difference step used by every derivative oracle here.
const FD_H: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    All,
    SimplexGeometry,
    Objectives,
    ProxCore,
    Ppa,
    Landscape,
    Flows,
}

impl Scope {
    pub const MODULES: [Scope; 6] = [
        Scope::SimplexGeometry,
        Scope::Objectives,
        Scope::ProxCore,
        Scope::Ppa,
        Scope::Landscape,
        Scope::Flows,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scope::All => "all",
            Scope::SimplexGeometry => "simplex_geometry",
            Scope::Objectives => "objectives",
            Scope::ProxCore => "prox_core",
            Scope::Ppa => "ppa",
            Scope::Landscape => "landscape",
            Scope::Flows => "flows",
        }
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        std::iter::once(Scope::All)
            .chain(Scope::MODULES)
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown check scope `{s}`; expected one of all, simplex_geometry, objectives, prox_core, ppa, landscape, flows"
                ))
            })
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `worst` is a violation measure; the property passes when `worst <= threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyOutcome {
    pub module: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub worst: f64,
    pub threshold: f64,
    pub samples: usize,
}

impl PropertyOutcome {
    pub fn new(
        module: &'static str,
        name: &'static str,
        worst: f64,
        threshold: f64,
        samples: usize,
    ) -> Self {
        Self {
            module,
            name,
            passed: worst <= threshold,
            worst,
            threshold,
            samples,
        }
    }

    fn errored(module: &'static str, name: &'static str, threshold: f64, samples: usize) -> Self {
        Self {
            module,
            name,
            passed: false,
            worst: f64::INFINITY,
            threshold,
            samples,
        }
    }
}

impl fmt::Display for PropertyOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}::{} worst={:.3e} threshold={:.1e} samples={}",
            if self.passed { "PASS" } else { "FAIL" },
            self.module,
            self.name,
            self.worst,
            self.threshold,
            self.samples
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckReport {
    pub outcomes: Vec<PropertyOutcome>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyOutcome> {
        self.outcomes.iter().filter(|o| !o.passed)
    }
}

pub fn run_checks(scope: Scope, seed: u64) -> CheckReport {
    let modules: Vec<Scope> = match scope {
        Scope::All => Scope::MODULES.to_vec(),
        one => vec![one],
    };
    let mut outcomes = Vec::new();
    for (i, m) in modules.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1)),
        );
        outcomes.extend(match m {
            Scope::SimplexGeometry => simplex_geometry(&mut rng),
            Scope::Objectives => objectives(&mut rng),
            Scope::ProxCore => prox_core(&mut rng),
            Scope::Ppa => ppa(&mut rng),
            Scope::Landscape => landscape(&mut rng),
            Scope::Flows => flows(&mut rng),
            Scope::All => unreachable!(),
        });
    }
    CheckReport { outcomes }
}

/// Tracks the worst violation over samples; any error fails the property.
struct Worst {
    value: f64,
    samples: usize,
    failed: bool,
}

impl Worst {
    fn new() -> Self {
        Self {
            value: 0.0,
            samples: 0,
            failed: false,
        }
    }

    fn push(&mut self, v: Result<f64>) {
        self.samples += 1;
        match v {
            Ok(v) if v.is_nan() => self.failed = true,
            Ok(v) => self.value = self.value.max(v),
            Err(_) => self.failed = true,
        }
    }

    fn outcome(self, module: &'static str, name: &'static str, threshold: f64) -> PropertyOutcome {
        if self.failed {
            PropertyOutcome::errored(module, name, threshold, self.samples)
        } else {
            PropertyOutcome::new(module, name, self.value, threshold, self.samples)
        }
    }
}

fn fd_gradient(f: &dyn Fn(&DVector<f64>) -> f64, p: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(p.len(), |i, _| {
        let mut a = p.clone();
        let mut b = p.clone();
        a[i] += FD_H;
        b[i] -= FD_H;
        (f(&a) - f(&b)) / (2.0 * FD_H)
    })
}

/// Columns are central differences of `f` along each coordinate.
fn fd_jacobian(f: &dyn Fn(&DVector<f64>) -> DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = (0..p.len())
        .map(|i| {
            let mut a = p.clone();
            let mut b = p.clone();
            a[i] += FD_H;
            b[i] -= FD_H;
            (f(&a) - f(&b)) / (2.0 * FD_H)
        })
        .collect();
    DMatrix::from_columns(&cols)
}

fn rel_error(approx: f64, exact: f64, scale: f64) -> f64 {
    (approx - exact).abs() / (1.0 + scale)
}

fn random_logits<R: Rng + ?Sized>(rng: &mut R, s: usize, scale: f64) -> LogitVector {
    LogitVector::new(random_x(rng, s - 1, scale)).expect("finite")
}

fn random_landscape_point<R: Rng + ?Sized>(rng: &mut R, m: usize, s: usize) -> LandscapePoint {
    LandscapePoint::new(random_x(rng, m, 2.0), random_logits(rng, s, 1.5))
}

/// Families exercised by the derivative oracles: two quadratics and one
/// softplus family.
pub fn oracle_families<R: Rng + ?Sized>(rng: &mut R) -> Vec<Box<dyn ObjectiveFamily>> {
    vec![
        Box::new(random_quadratic(rng, 2, 3, false)),
        Box::new(random_quadratic(rng, 3, 4, true)),
        Box::new(random_softplus(rng, 3, 3)),
    ]
}

// ---------------------------------------------------------------- simplex

const GEOM: &str = "simplex_geometry";

fn simplex_geometry(rng: &mut ChaCha8Rng) -> Vec<PropertyOutcome> {
    let mut out = Vec::new();

    let mut w = Worst::new();
    for _ in 0..100 {
        let s = rng.random_range(2..=8);
        let xi = random_x(rng, s, 5.0);
        let c = rng.random_range(-50.0..50.0);
        w.push(softargmax(&xi).and_then(|a| {
            let b = softargmax(&xi.add_scalar(c))?;
            Ok((a.probabilities() - b.probabilities()).amax())
        }));
    }
    out.push(w.outcome(GEOM, "softargmax_shift_invariance", 1e-14));

    let mut w = Worst::new();
    for _ in 0..100 {
        let s = rng.random_range(2..=8);
        let q = random_simplex(rng, s, 4.0);
        w.push(
            inverse_grad_negentropy(&grad_negentropy(&q))
                .map(|b| (b.probabilities() - q.probabilities()).amax()),
        );
    }
    out.push(w.outcome(GEOM, "mirror_map_round_trip", 1e-12));

    let mut w = Worst::new();
    for _ in 0..100 {
        let s = rng.random_range(2..=8);
        let a = random_simplex(rng, s, 3.0);
        let b = random_simplex(rng, s, 3.0);
        w.push(kl(&a, &b).map(|v| -v));
        w.push(kl(&a, &a));
        w.push(kl(&a, &b).map(|v| if v > 0.0 || a == b { 0.0 } else { 1.0 }));
    }
    out.push(w.outcome(GEOM, "kl_nonnegative_zero_iff_equal", 1e-15));

    let mut w = Worst::new();
    let f = |p: &HybridPoint| 0.5 * p.x.norm_squared() + negentropy(&p.q).0;
    for _ in 0..100 {
        let (m, s) = (rng.random_range(1..=5), rng.random_range(2..=6));
        let u = random_hybrid(rng, m, s);
        let v = random_hybrid(rng, m, s);
        let generic = f(&u) - f(&v) - v.mirror_gradient().dot(&(u.stacked() - v.stacked()));
        w.push(hybrid_bregman(&u, &v).map(|d| (d - generic).abs()));
    }
    out.push(w.outcome(GEOM, "hybrid_bregman_matches_generic", 1e-10));

    let mut pos = Worst::new();
    let mut fd = Worst::new();
    let mut inv = Worst::new();
    for s in 2..=8 {
        for _ in 0..8 {
            let xi = random_logits(rng, s, 2.0);
            let fim = fisher_information(&xi);
            let min_eig = linalg::symmetric_eigenvalues(&fim.matrix).min();
            pos.push(Ok(if min_eig > 0.0 { 0.0 } else { -min_eig + 1.0 }));
            let n = s - 1;
            inv.push(Ok(
                (&fim.matrix * &fim.inverse - DMatrix::identity(n, n)).amax()
            ));
            // grad psi = sigma_bar, differenced once.
            let grad_psi =
                |v: &DVector<f64>| LogitVector::new(v.clone()).expect("finite").sigma_bar();
            let hess = fd_jacobian(&grad_psi, xi.as_vector());
            fd.push(Ok((hess - &fim.matrix).amax()));
        }
    }
    out.push(pos.outcome(GEOM, "fisher_positive_definite", 0.0));
    out.push(fd.outcome(GEOM, "fisher_matches_log_partition_hessian", 1e-6));
    out.push(inv.outcome(GEOM, "fisher_closed_form_inverse", 1e-10));

    out.push(christoffel_first_kind_fd(rng, GEOM));
    out.push(christoffel_potential(
        rng,
        GEOM,
        "christoffel_potential_correction_vanishes",
    ));
    out
}

/// First-kind symbols against `(1/2) d_k I_ij` by central differences.
fn christoffel_first_kind_fd(rng: &mut ChaCha8Rng, module: &'static str) -> PropertyOutcome {
    let mut w = Worst::new();
    for s in 2..=6 {
        for _ in 0..10 {
            let xi = random_logits(rng, s, 1.5);
            let n = s - 1;
            let first = christoffel_first_kind(&xi);
            let fim_at = |v: &DVector<f64>| {
                fisher_information(&LogitVector::new(v.clone()).expect("finite")).matrix
            };
            let mut worst: f64 = 0.0;
            for k in 0..n {
                let mut a = xi.as_vector().clone();
                let mut b = a.clone();
                a[k] += FD_H;
                b[k] -= FD_H;
                let d = (fim_at(&a) - fim_at(&b)) / (2.0 * FD_H);
                for i in 0..n {
                    for j in 0..n {
                        let exact = first.get(i, j, k);
                        worst = worst.max(rel_error(0.5 * d[(i, j)], exact, exact.abs()));
                    }
                }
            }
            w.push(Ok(worst));
        }
    }
    w.outcome(module, "christoffel_first_kind_matches_fd", 1e-5)
}

/// `max_ij |sum_k Gamma^k_ij sigma_bar_k|`.
fn christoffel_potential(
    rng: &mut ChaCha8Rng,
    module: &'static str,
    name: &'static str,
) -> PropertyOutcome {
    let mut w = Worst::new();
    for s in 2..=8 {
        for _ in 0..6 {
            let xi = random_logits(rng, s, 1.5);
            w.push(Ok(christoffel(&xi).contract(&xi.sigma_bar()).amax()));
        }
    }
    w.outcome(module, name, 1e-10)
}

// ------------------------------------------------------------- objectives

const OBJ: &str = "objectives";

fn objectives(rng: &mut ChaCha8Rng) -> Vec<PropertyOutcome> {
    let mut out = Vec::new();

    let mut fams = oracle_families(rng);
    let a: std::sync::Arc<dyn ObjectiveFamily> =
        std::sync::Arc::new(random_quadratic(rng, 2, 2, true));
    let b: std::sync::Arc<dyn ObjectiveFamily> = std::sync::Arc::new(random_softplus(rng, 2, 3));
    fams.push(Box::new(outer_sum(a, b).expect("same dimension")));
    let mut flagged = 0usize;
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for fam in &fams {
        let pts: Vec<DVector<f64>> = (0..20).map(|_| random_x(rng, fam.dim(), 2.0)).collect();
        let rep = finite_diff_check(fam.as_ref(), &pts);
        flagged += rep.any_flagged() as usize;
        worst = worst.max(rep.max_jacobian_deviation());
        n += pts.len();
    }
    let mut o = PropertyOutcome::new(OBJ, "jacobian_matches_fd", worst, 1e-6, n);
    o.passed &= flagged == 0;
    out.push(o);

    let mut w = Worst::new();
    for _ in 0..100 {
        let fam = random_quadratic(rng, 3, 4, false);
        let x = random_x(rng, 3, 2.0);
        let q = random_simplex(rng, 4, 2.0);
        let r = random_simplex(rng, 4, 2.0);
        let alpha: f64 = rng.random_range(0.0..=1.0);
        let mix = q.probabilities() * alpha + r.probabilities() * (1.0 - alpha);
        w.push((|| {
            let mixed = SimplexPoint::from_probabilities(mix.as_slice())?;
            let lhs = barygradient(&fam, &x, &mixed)?;
            let rhs =
                barygradient(&fam, &x, &q)? * alpha + barygradient(&fam, &x, &r)? * (1.0 - alpha);
            Ok((lhs - rhs).amax())
        })());
    }
    out.push(w.outcome(OBJ, "barygradient_linear_in_q", 1e-12));

    let mut w = Worst::new();
    for _ in 0..50 {
        let (s1, s2) = (rng.random_range(2..=4), rng.random_range(2..=4));
        let f1: std::sync::Arc<dyn ObjectiveFamily> =
            std::sync::Arc::new(random_quadratic(rng, 2, s1, false));
        let f2: std::sync::Arc<dyn ObjectiveFamily> =
            std::sync::Arc::new(random_softplus(rng, 2, s2));
        let q1 = random_simplex(rng, s1, 2.0);
        let q2 = random_simplex(rng, s2, 2.0);
        let x = random_x(rng, 2, 2.0);
        let sum = outer_sum(f1.clone(), f2.clone()).expect("same dimension");
        let joint = outer_product(&q1, &q2).probabilities().dot(&sum.values(&x));
        let split = q1.probabilities().dot(&f1.values(&x)) + q2.probabilities().dot(&f2.values(&x));
        w.push(Ok((joint - split).abs()));
    }
    out.push(w.outcome(OBJ, "tensorization_index_maps_consistent", 1e-10));
    out
}

// ---------------------------------------------------------------- prox

const PROX: &str = "prox_core";

/// Worst BFNE violation `max(0, -(rhs - lhs))` of an arbitrary operator.
pub fn bfne_property(
    op: &dyn Fn(&HybridPoint) -> Result<HybridPoint>,
    pairs: &[(HybridPoint, HybridPoint)],
    tol: f64,
) -> PropertyOutcome {
    let mut w = Worst::new();
    for (u, v) in pairs {
        w.push((|| Ok(-firmness_gap(&op(u)?, &op(v)?, u, v).gap))());
    }
    w.outcome(PROX, "bfne_gap_nonnegative", tol)
}

fn prox_core(rng: &mut ChaCha8Rng) -> Vec<PropertyOutcome> {
    let mut out = Vec::new();
    let lambdas = [0.1, 0.5, 2.0];

    let mut stat = Worst::new();
    let mut closed = Worst::new();
    let mut resolvent = Worst::new();
    let mut duality = Worst::new();
    for i in 0..60 {
        let (m, s) = (rng.random_range(1..=4), rng.random_range(2..=5));
        let fam = random_quadratic(rng, m, s, i % 2 == 0);
        let p = random_hybrid(rng, m, s);
        let cfg = ProxConfig::with_lambda(lambdas[i % 3]);
        match prox(&fam, &p.x, &p.q, &cfg) {
            Ok(res) => {
                stat.push(Ok(res.residual.max()));
                closed.push((|| {
                    let q = reweight(&p.q, cfg.lambda, &fam.values(&res.x_prime))?;
                    Ok((q.probabilities() - res.q_prime.probabilities()).amax())
                })());
                resolvent.push(resolvent_residual(&fam, &p.x, &p.q, &res, &cfg));
                duality.push(
                    saddle_values(&fam, &p.x, &p.q, &res, &cfg)
                        .map(|v| (v.min_max - v.max_min).abs()),
                );
            }
            Err(e) => {
                stat.push(Err(e));
            }
        }
    }
    let inner_tol = ProxConfig::default().inner_tol;
    out.push(stat.outcome(PROX, "stationarity_within_inner_tol", inner_tol));
    out.push(closed.outcome(PROX, "closed_form_weights", 1e-10));
    out.push(resolvent.outcome(PROX, "f_resolvent_identity", 10.0 * inner_tol));
    out.push(duality.outcome(PROX, "strong_duality", 1e-6));

    let mut pairs = Vec::new();
    let mut bfne = Worst::new();
    for inst in 0..6 {
        let (m, s) = (rng.random_range(1..=4), rng.random_range(2..=5));
        let fam = random_quadratic(rng, m, s, true);
        for j in 0..36 {
            let u = random_hybrid(rng, m, s);
            let v = random_hybrid(rng, m, s);
            let cfg = ProxConfig::with_lambda(lambdas[(inst + j) % 3]);
            bfne.push(prox::bfne_gap(&fam, &u, &v, &cfg).map(|g| -g.gap));
            if inst == 0 {
                pairs.push((u, v));
            }
        }
    }
    out.push(bfne.outcome(PROX, "bfne_gap_nonnegative", 1e-7));

    let mut w = Worst::new();
    for _ in 0..200 {
        let (m, s) = (rng.random_range(1..=4), rng.random_range(2..=5));
        let fam = random_quadratic(rng, m, s, false);
        let u = random_hybrid(rng, m, s);
        let v = random_hybrid(rng, m, s);
        w.push((|| {
            let (ux, uq) = monotone_operator_a(&fam, &u.x, &u.q)?;
            let (vx, vq) = monotone_operator_a(&fam, &v.x, &v.q)?;
            let d = (&u.x - &v.x).dot(&(ux - vx))
                + (u.q.probabilities() - v.q.probabilities()).dot(&(uq - vq));
            Ok(-d)
        })());
    }
    out.push(w.outcome(PROX, "operator_a_monotone", 1e-10));

    let mut w = Worst::new();
    for i in 0..10 {
        let (s1, s2) = (rng.random_range(2..=3), rng.random_range(2..=3));
        let m = rng.random_range(1..=3);
        let f1: std::sync::Arc<dyn ObjectiveFamily> =
            std::sync::Arc::new(random_quadratic(rng, m, s1, true));
        let f2: std::sync::Arc<dyn ObjectiveFamily> =
            std::sync::Arc::new(random_quadratic(rng, m, s2, i % 2 == 0));
        let fam = outer_sum(f1, f2).expect("same dimension");
        let q = outer_product(&random_simplex(rng, s1, 1.5), &random_simplex(rng, s2, 1.5));
        let x = random_x(rng, m, 2.0);
        w.push((|| {
            let res = prox(&fam, &x, &q, &ProxConfig::with_lambda(lambdas[i % 3]))?;
            let check = rank_one_factor_check(&res.q_prime, s1, s2, 1e-6)?;
            Ok(if check.is_rank_one { 0.0 } else { 1.0 })
        })());
    }
    out.push(w.outcome(PROX, "tensorized_closure_rank_one", 0.0));

    let mut w = Worst::new();
    let c = ConstantFamily::new(2, DVector::from_vec(vec![0.0, 4f64.ln()])).expect("valid");
    let x = DVector::from_vec(vec![0.3, -1.2]);
    w.push((|| {
        let res = prox(
            &c,
            &x,
            &SimplexPoint::uniform(2)?,
            &ProxConfig::with_lambda(1.0),
        )?;
        Ok((&res.x_prime - &x)
            .amax()
            .max((res.q_prime.prob(0) - 0.2).abs())
            .max((res.q_prime.prob(1) - 0.8).abs()))
    })());
    out.push(w.outcome(PROX, "constant_family_closed_form", 1e-12));
    out
}

// ------------------------------------------------------------------ ppa

const PPA: &str = "ppa";
/// `D_f` step threshold for suites that compare PPA limits at the 1e-6 level.
/// A step of `D_f` bounds the distance to the limit only through the
/// contraction rate, so the default `1e-12` is too loose here.
const PPA_STOP_TOL: f64 = 1e-18;

fn ppa(rng: &mut ChaCha8Rng) -> Vec<PropertyOutcome> {
    let mut out = Vec::new();
    let mut fejer = Worst::new();
    let mut cert = Worst::new();
    let mut level = Worst::new();
    let mut instances: Vec<(QuadraticFamily, HybridPoint)> = vec![(
        QuadraticFamily::symmetric_pair(),
        HybridPoint::new(
            DVector::from_element(1, 0.0),
            SimplexPoint::uniform(2).expect("valid"),
        ),
    )];
    for _ in 0..4 {
        let m = rng.random_range(2..=4);
        let s = rng.random_range(2..=m + 1);
        instances.push(planted_quadratic(rng, m, s));
    }
    let cfg = PpaConfig {
        prox: ProxConfig::with_lambda(1.0),
        stop_tol: PPA_STOP_TOL,
        ..PpaConfig::default()
    };
    for (fam, star) in &instances {
        let init = random_hybrid(rng, fam.dim(), fam.num_losses());
        match run_ppa(fam, &init, &cfg) {
            Ok(trace) => {
                fejer.push(
                    fejer_diagnostic(&trace, star)
                        .map(|d| d.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)),
                );
                if trace.status == PpaStatus::Converged {
                    cert.push(Ok(trace.final_barygrad_norm.max(trace.final_loss_spread)));
                    let l = fam.values(&trace.final_point.x);
                    level.push(Ok(l
                        .iter()
                        .map(|v| (v - trace.final_objective).abs())
                        .fold(0.0, f64::max)));
                } else {
                    cert.push(Err(Error::InvalidArgument(format!(
                        "status {}",
                        trace.status.label()
                    ))));
                }
            }
            Err(e) => fejer.push(Err(e)),
        }
    }
    out.push(fejer.outcome(PPA, "fejer_monotone_to_fixed_point", 1e-10));
    out.push(cert.outcome(PPA, "converged_certificate", FIXED_POINT_TOL));
    out.push(level.outcome(PPA, "objective_equals_common_loss", 1e-6));

    let mut w = Worst::new();
    let c = ConstantFamily::new(1, DVector::from_vec(vec![0.0, 1.0])).expect("valid");
    let init = HybridPoint::new(
        DVector::from_element(1, 0.5),
        SimplexPoint::uniform(2).expect("valid"),
    );
    w.push(run_ppa(&c, &init, &PpaConfig::default()).map(|t| {
        if t.status == PpaStatus::MaxIter && t.no_fixed_point_suspected() {
            0.0
        } else {
            1.0
        }
    }));
    out.push(w.outcome(PPA, "no_fixed_point_reported", 0.0));
    out
}

// ------------------------------------------------------------ landscape

const LAND: &str = "landscape";

fn landscape(rng: &mut ChaCha8Rng) -> Vec<PropertyOutcome> {
    let mut out = Vec::new();
    let fams = oracle_families(rng);

    let mut grad = Worst::new();
    let mut hess = Worst::new();
    let mut sym = Worst::new();
    let mut corr = Worst::new();
    let mut blocks = Worst::new();
    let mut contraction = Worst::new();
    for fam in &fams {
        let (m, s) = (fam.dim(), fam.num_losses());
        for _ in 0..20 {
            let p = random_landscape_point(rng, m, s);
            let value = |v: &DVector<f64>| {
                f_bar(
                    fam.as_ref(),
                    &LandscapePoint::from_stacked(m, v).expect("len"),
                )
                .expect("valid")
            };
            let gradient = |v: &DVector<f64>| {
                grad_f_bar(
                    fam.as_ref(),
                    &LandscapePoint::from_stacked(m, v).expect("len"),
                )
                .expect("valid")
            };
            let z = p.stacked();
            let g = gradient(&z);
            grad.push(Ok((fd_gradient(&value, &z) - &g).amax() / (1.0 + g.amax())));
            let e = match euclidean_hessian(fam.as_ref(), &p) {
                Ok(e) => e,
                Err(err) => {
                    hess.push(Err(err));
                    continue;
                }
            };
            hess.push(Ok(
                (fd_jacobian(&gradient, &z) - &e).amax() / (1.0 + e.amax())
            ));
            sym.push(Ok((&e - e.transpose()).amax()));
            let r = riemannian_hessian(fam.as_ref(), &p);
            let corr_m = landscape::christoffel_correction(fam.as_ref(), &p);
            match (r, corr_m) {
                (Ok(r), Ok(c)) => {
                    let n = s - 1;
                    let diff = &e - &r.riemannian;
                    let outside = diff
                        .view((0, 0), (m, m + n))
                        .amax()
                        .max(diff.view((m, 0), (n, m)).amax());
                    blocks.push(Ok(outside));
                    corr.push(Ok((diff.view((m, m), (n, n)) - c).amax()));
                }
                (Err(err), _) | (_, Err(err)) => corr.push(Err(err)),
            }
            let sb = p.xi_bar.sigma_bar();
            let lb = reduced_losses(&fam.values(&p.x));
            let lhs = tensor_mode2(&sb, &lb) * fisher_information(&p.xi_bar).matrix;
            contraction.push(Ok((lhs - riemannian_logit_block(&sb, &lb) * 2.0).amax()));
        }
    }
    out.push(grad.outcome(LAND, "gradient_matches_fd", 1e-6));
    out.push(hess.outcome(LAND, "euclidean_hessian_matches_fd", 1e-5));
    out.push(sym.outcome(LAND, "euclidean_hessian_symmetric", 1e-12));
    out.push(blocks.outcome(LAND, "riemannian_agrees_off_logit_block", 0.0));
    out.push(corr.outcome(
        LAND,
        "riemannian_difference_is_christoffel_correction",
        1e-10,
    ));
    out.push(contraction.outcome(LAND, "tensor_contraction_is_twice_h", 1e-10));
    out.push(christoffel_potential(
        rng,
        LAND,
        "potential_metric_correction_vanishes",
    ));

    let mut w = Worst::new();
    for _ in 0..30 {
        let (m, s) = (rng.random_range(1..=4), rng.random_range(2..=5));
        let fam = random_quadratic(rng, m, s, true);
        let p = random_landscape_point(rng, m, s);
        w.push(riemannian_hessian(&fam, &p).map(|r| {
            let sum = r.b1_inertia + r.b2_inertia;
            if sum == r.inertia {
                0.0
            } else {
                1.0
            }
        }));
    }
    out.push(w.outcome(LAND, "sylvester_inertia_consistency", 0.0));

    let mut w = Worst::new();
    let cfg = ProxConfig::default();
    for i in 0..50 {
        let (m, s) = (rng.random_range(1..=3), rng.random_range(2..=4));
        let fam = random_quadratic(rng, m, s, true);
        let p = random_landscape_point(rng, m, s);
        w.push(
            fix_equals_critical_check(&fam, &p, &cfg, 1e-6).map(|ok| if ok { 0.0 } else { 1.0 }),
        );
        if i < 5 {
            let (fam, star) = planted_quadratic(rng, m.max(s - 1), s);
            let p = LandscapePoint::from_hybrid(&star);
            w.push(
                fix_equals_critical_check(&fam, &p, &cfg, 1e-6)
                    .map(|ok| if ok { 0.0 } else { 1.0 }),
            );
        }
    }
    out.push(w.outcome(LAND, "fixed_points_are_critical_points", 0.0));

    let mut values = Worst::new();
    let mut unique_x = Worst::new();
    let ppa_cfg = PpaConfig {
        prox: ProxConfig::with_lambda(1.0),
        stop_tol: PPA_STOP_TOL,
        ..PpaConfig::default()
    };
    for _ in 0..3 {
        let m = rng.random_range(2..=3);
        let s = rng.random_range(2..=m + 1);
        let (fam, _) = planted_quadratic(rng, m, s);
        let mut pts = Vec::new();
        for _ in 0..2 {
            let init = random_hybrid(rng, m, s);
            match run_ppa(&fam, &init, &ppa_cfg) {
                Ok(t) if t.status == PpaStatus::Converged => {
                    pts.push(LandscapePoint::from_hybrid(&t.final_point))
                }
                Ok(t) => values.push(Err(Error::InvalidArgument(t.status.label().into()))),
                Err(e) => values.push(Err(e)),
            }
        }
        if pts.len() == 2 {
            values.push(critical_value_scan(&fam, &pts, 1e-5).map(|r| {
                if r.critical.len() == 2 {
                    r.spread.unwrap_or(0.0)
                } else {
                    f64::INFINITY
                }
            }));
            unique_x.push(Ok((&pts[0].x - &pts[1].x).amax()));
        }
    }
    out.push(values.outcome(LAND, "critical_values_identical", 1e-6));
    out.push(unique_x.outcome(LAND, "strictly_convex_critical_x_unique", 1e-5));

    let mut w = Worst::new();
    let fam = QuadraticFamily::symmetric_pair();
    let origin = LandscapePoint::new(DVector::zeros(1), LogitVector::zeros(2));
    w.push(riemannian_hessian(&fam, &origin).map(|r| {
        if r.classification == landscape::Classification::Saddle {
            0.0
        } else {
            1.0
        }
    }));
    out.push(w.outcome(LAND, "symmetric_critical_point_is_saddle", 0.0));
    out
}

// ---------------------------------------------------------------- flows

const FLOW: &str = "flows";

fn flows(rng: &mut ChaCha8Rng) -> Vec<PropertyOutcome> {
    let mut out = Vec::new();
    let sym = QuadraticFamily::symmetric_pair();
    let start = LandscapePoint::new(
        DVector::from_element(1, 2.0),
        LogitVector::from_simplex(&SimplexPoint::from_probabilities(&[0.3, 0.7]).expect("valid")),
    );

    let mut mono = Worst::new();
    let mut rates = Worst::new();
    let mut entropy = Worst::new();
    let mut traces = Vec::new();
    for kind in [FlowKind::MinMin, FlowKind::MinMax] {
        traces.push(integrate_flow(
            &sym,
            &start,
            &FlowConfig {
                t_end: 10.0,
                ..FlowConfig::new(kind)
            },
        ));
    }
    for _ in 0..2 {
        let fam = random_quadratic(rng, 2, 3, true);
        let init = random_landscape_point(rng, 2, 3);
        for kind in [FlowKind::MinMin, FlowKind::MinMax] {
            traces.push(integrate_flow(
                &fam,
                &init,
                &FlowConfig {
                    t_end: 5.0,
                    ..FlowConfig::new(kind)
                },
            ));
        }
    }
    for trace in traces {
        match trace {
            Ok(t) => {
                if t.kind == FlowKind::MinMin {
                    mono.push(Ok(t
                        .records
                        .windows(2)
                        .map(|w| w[1].objective - w[0].objective)
                        .fold(0.0, f64::max)));
                }
                let agree = flows::rate_agreement(&t, 1e-5, 1e-3);
                rates.push(Ok(if agree.checked == 0 {
                    f64::INFINITY
                } else {
                    agree.df_dt_excess.max(0.0)
                }));
                entropy.push(Ok(if agree.checked == 0 {
                    f64::INFINITY
                } else {
                    agree.entropy_rate_excess.max(0.0)
                }));
            }
            Err(e) => rates.push(Err(e)),
        }
    }
    out.push(mono.outcome(FLOW, "min_min_objective_nonincreasing", 1e-8));
    out.push(rates.outcome(FLOW, "df_dt_matches_trace", 0.0));
    out.push(entropy.outcome(FLOW, "entropy_rate_matches_trace", 0.0));

    let mut w = Worst::new();
    for _ in 0..100 {
        let s = rng.random_range(2..=8);
        let q = random_simplex(rng, s, 2.0);
        let l = random_x(rng, s, 3.0);
        w.push(Ok(
            (loss_variance(&q, &l) - l.dot(&(covariance(&q) * &l))).abs()
        ));
    }
    out.push(w.outcome(FLOW, "variance_identity", 1e-10));

    let mut w = Worst::new();
    let xi0 = DVector::from_vec(vec![0.3f64.ln(), 0.7f64.ln()]);
    let x0 = DVector::from_element(1, 2.0);
    w.push((|| {
        let a = integrate_full_logits(
            &sym,
            &x0,
            &xi0,
            FlowKind::MinMin,
            Gauge::Zero,
            10.0,
            0.01,
            1,
        )?;
        let b = integrate_full_logits(
            &sym,
            &x0,
            &xi0,
            FlowKind::MinMin,
            Gauge::Pinned,
            10.0,
            0.01,
            1,
        )?;
        Ok(a.iter()
            .zip(b.iter())
            .map(|((_, p), (_, r))| (p.q.probabilities() - r.q.probabilities()).amax())
            .fold(0.0, f64::max))
    })());
    out.push(w.outcome(FLOW, "gauge_invariance", 1e-8));

    let mut w = Worst::new();
    let cfg = ProxConfig::default();
    for i in 0..20 {
        let m = rng.random_range(1..=3);
        let s = rng.random_range(2..=m + 1);
        let (fam, star) = planted_quadratic(rng, m, s);
        let p = if i % 2 == 0 {
            star
        } else {
            random_hybrid(rng, m, s)
        };
        let xi = LogitVector::from_simplex(&p.q);
        w.push((|| {
            let fp = fixed_point_residual(&fam, &p.x, &p.q, &cfg)?;
            let fixed = fp.barygrad_norm <= 1e-8 && fp.loss_spread <= 1e-8;
            let mut agree = true;
            for kind in [FlowKind::MinMax, FlowKind::MinMin] {
                let (dx, dxi) = flow_vector_field(&fam, &p.x, &xi, kind)?;
                let still = dx.amax().max(dxi.amax()) <= 1e-8;
                agree &= still == fixed;
            }
            Ok(if agree { 0.0 } else { 1.0 })
        })());
    }
    out.push(w.outcome(FLOW, "equilibria_are_fixed_points", 0.0));

    let mut interior = Worst::new();
    let mut vertex = Worst::new();
    for _ in 0..50 {
        let (m, s) = (rng.random_range(1..=3), rng.random_range(2..=6));
        let fam = random_quadratic(rng, m, s, false);
        let x = random_x(rng, m, 2.0);
        let xi = random_logits(rng, s, 2.0);
        let mut near = vec![0.0; s];
        near[rng.random_range(0..s)] = 6.0 * 10f64.ln();
        let near = LogitVector::from_simplex(
            &SimplexPoint::from_log_weights(DVector::from_vec(near)).expect("finite"),
        );
        for kind in [FlowKind::MinMax, FlowKind::MinMin] {
            interior.push(pseudo_riemannian_residual(&fam, &x, &xi, kind));
            vertex.push(pseudo_riemannian_residual(&fam, &x, &near, kind));
        }
    }
    out.push(interior.outcome(FLOW, "pseudo_riemannian_rewriting", 1e-8));
    out.push(vertex.outcome(FLOW, "pseudo_riemannian_near_vertex", 1e-6));

    let mut w = Worst::new();
    for fam in oracle_families(rng) {
        let (m, s) = (fam.dim(), fam.num_losses());
        for _ in 0..10 {
            let p = random_landscape_point(rng, m, s);
            for kind in [FlowKind::MinMax, FlowKind::MinMin] {
                w.push(analytic_rate_fd_error(fam.as_ref(), &p, kind));
            }
        }
    }
    out.push(w.outcome(FLOW, "analytic_rates_match_directional_fd", 1e-5));
    out
}

/// Relative error of `df_dt_analytic` and `entropy_rate_analytic` against
/// central differences of `F` and `h` along the flow field at `p`.
pub fn analytic_rate_fd_error(
    fam: &dyn ObjectiveFamily,
    p: &LandscapePoint,
    kind: FlowKind,
) -> Result<f64> {
    let (dx, dxi) = flow_vector_field(fam, &p.x, &p.xi_bar, kind)?;
    let m = fam.dim();
    let v = concat(&dx, &dxi);
    let z = p.stacked();
    let along = |t: f64| -> Result<(f64, f64)> {
        let q = LandscapePoint::from_stacked(m, &(&z + &v * t))?;
        let w = q.xi_bar.to_simplex();
        Ok((f_bar(fam, &q)?, negentropy(&w).0))
    };
    let (fp, hp) = along(FD_H)?;
    let (fm, hm) = along(-FD_H)?;
    let fd_f = (fp - fm) / (2.0 * FD_H);
    let fd_h = (hp - hm) / (2.0 * FD_H);
    let af = df_dt_analytic(fam, &p.x, &p.xi_bar, kind)?;
    let ah = entropy_rate_analytic(fam, &p.x, &p.xi_bar, kind)?;
    Ok(rel_error(fd_f, af, af.abs()).max(rel_error(fd_h, ah, ah.abs())))
}
