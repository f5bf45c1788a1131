//! Experiment configuration, read from TOML.
//!
//! ```toml
//! method = "ppa"
//! seed = 7
//!
//! [problem]
//! kind = "symmetric_quadratic"
//!
//! [initial]
//! x = [2.0]
//! q = [0.3, 0.7]
//!
//! [params]
//! lambda = 0.5
//!
//! [output]
//! name = "sym_ppa"
//! format = "csv"
//! ```

use std::path::PathBuf;
use std::sync::Arc;

use baryprox::objectives::{
    outer_sum, ConstantFamily, ObjectiveFamily, QuadraticFamily, QuadraticLoss,
};
use baryprox::sampling::random_quadratic;
use baryprox::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ProxEval,
    Ppa,
    FlowMinMax,
    FlowMinMin,
    Landscape,
    Checks,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::ProxEval => "prox_eval",
            Method::Ppa => "ppa",
            Method::FlowMinMax => "flow_min_max",
            Method::FlowMinMin => "flow_min_min",
            Method::Landscape => "landscape",
            Method::Checks => "checks",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticLossConfig {
    /// Rows of the symmetric PSD matrix `A`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(default)]
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Problem {
    /// `l_s(x) = x^T A_s x / 2 + b_s^T x + c_s`.
    Quadratic { losses: Vec<QuadraticLossConfig> },
    /// `l_s = values[s]` on `R^dim`.
    Constant { dim: usize, values: Vec<f64> },
    /// `l = ((x - 1)^2 / 2, (x + 1)^2 / 2)` on `R`.
    SymmetricQuadratic,
    /// Random convex quadratics drawn from the run seed.
    RandomQuadratic {
        dim: usize,
        losses: usize,
        #[serde(default)]
        strict: bool,
    },
    /// `first (+) second`, flattened row-major.
    Tensorized {
        first: Box<Problem>,
        second: Box<Problem>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    /// Defaults to zeros.
    pub x: Option<Vec<f64>>,
    /// Weights on the simplex; defaults to uniform. Exclusive with `xi_bar`.
    pub q: Option<Vec<f64>>,
    /// Reduced logits `log(q_s / q_S)`, length `S - 1`.
    pub xi_bar: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MethodParams {
    pub lambda: Option<f64>,
    pub inner_tol: Option<f64>,
    pub inner_max_iter: Option<usize>,
    pub max_outer_iter: Option<usize>,
    pub stop_tol: Option<f64>,
    pub record_every: Option<usize>,
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
    /// Check scope for `method = "checks"`.
    pub scope: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputOptions {
    /// Relative paths resolve against the config file's directory.
    pub dir: Option<PathBuf>,
    /// File stem; defaults to the config file stem.
    pub name: Option<String>,
    pub format: Option<TraceFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seed: Option<u64>,
    /// Required by every method except `checks`.
    pub problem: Option<Problem>,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub params: MethodParams,
    #[serde(default)]
    pub output: OutputOptions,
}

/// Line (1-based) of `key = ...` inside `[section]`, or at top level when
/// `section` is empty.
pub fn locate(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in src.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            current = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        let name = t.split('=').next().map(str::trim);
        if current == section && t.contains('=') && name == Some(key) {
            return Some(i + 1);
        }
    }
    None
}

fn line_of_span(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    pub fn parse(src: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(src).map_err(|e| {
            let line = e.span().map(|s| line_of_span(src, s.start));
            CliError::config(line, e.message().trim().to_string())
        })?;
        cfg.validate(src)?;
        Ok(cfg)
    }

    fn validate(&self, src: &str) -> Result<(), CliError> {
        if self.problem.is_none() && self.method != Method::Checks {
            return Err(CliError::config(
                locate(src, "", "method"),
                format!("method `{}` needs a [problem] table", self.method.name()),
            ));
        }
        let p = &self.params;
        let bad = |key: &str, msg: String| {
            CliError::config(locate(src, "params", key), format!("params.{key} {msg}"))
        };
        let positive = [
            ("lambda", p.lambda),
            ("inner_tol", p.inner_tol),
            ("stop_tol", p.stop_tol),
            ("t_end", p.t_end),
            ("dt", p.dt),
        ];
        for (key, v) in positive {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(bad(key, format!("must be positive and finite, got {v}")));
                }
            }
        }
        let counts = [
            ("inner_max_iter", p.inner_max_iter),
            ("max_outer_iter", p.max_outer_iter),
            ("record_every", p.record_every),
        ];
        for (key, v) in counts {
            if v == Some(0) {
                return Err(bad(key, "must be >= 1".into()));
            }
        }
        if let Some(scope) = &p.scope {
            scope
                .parse::<baryprox::checks::Scope>()
                .map_err(|e| bad("scope", e.to_string()))?;
        }
        if self.initial.q.is_some() && self.initial.xi_bar.is_some() {
            return Err(CliError::config(
                locate(src, "initial", "xi_bar"),
                "initial.q and initial.xi_bar are mutually exclusive".into(),
            ));
        }
        Ok(())
    }
}

pub type SharedFamily = Arc<dyn ObjectiveFamily>;

impl Problem {
    /// Builds the family; `rng` feeds random kinds in declaration order.
    pub fn build(&self, rng: &mut ChaCha8Rng) -> Result<SharedFamily, CliError> {
        let domain = |e: baryprox::Error| CliError::Domain(e);
        Ok(match self {
            Problem::Quadratic { losses } => {
                let losses = losses
                    .iter()
                    .enumerate()
                    .map(|(i, l)| {
                        let m = l.b.len();
                        if l.a.len() != m || l.a.iter().any(|r| r.len() != m) {
                            return Err(CliError::config(
                                None,
                                format!("problem.losses[{i}].a must be {m}x{m} to match b"),
                            ));
                        }
                        Ok(QuadraticLoss {
                            a: DMatrix::from_fn(m, m, |r, c| l.a[r][c]),
                            b: DVector::from_vec(l.b.clone()),
                            c: l.c,
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Arc::new(QuadraticFamily::new(losses).map_err(domain)?)
            }
            Problem::Constant { dim, values } => Arc::new(
                ConstantFamily::new(*dim, DVector::from_vec(values.clone())).map_err(domain)?,
            ),
            Problem::SymmetricQuadratic => Arc::new(QuadraticFamily::symmetric_pair()),
            Problem::RandomQuadratic {
                dim,
                losses,
                strict,
            } => {
                if *dim == 0 || *losses < 2 {
                    return Err(CliError::config(
                        None,
                        "random_quadratic needs dim >= 1 and losses >= 2".into(),
                    ));
                }
                Arc::new(random_quadratic(rng, *dim, *losses, *strict))
            }
            Problem::Tensorized { first, second } => {
                let a = first.build(rng)?;
                let b = second.build(rng)?;
                Arc::new(outer_sum(a, b).map_err(domain)?)
            }
        })
    }
}

pub fn problem_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
