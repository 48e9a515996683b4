//! Concave program over stationary occupancy measures and policy extraction.
//!
//! maximize   f(sum_{s,a} r^1(s,a) d(s,a), ..., sum_{s,a} r^K(s,a) d(s,a))
//! subject to sum_a d(s',a) = sum_{s,a} P(s'|s,a) d(s,a)   for all s'
//!            sum_{s,a} d(s,a) = 1,  d >= 0
//!
//! Solved by projected gradient ascent with backtracking. The projection onto
//! the feasible polytope is Dykstra's alternating projection between the
//! affine constraint set and the nonnegative orthant.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{MdpError, OccupancyMeasure, TabularMdp, TabularPolicy};
use crate::objectives::{ObjectiveError, ObjectiveFunction, ObjectiveKind};

/// States whose marginal mass is at or below this get a uniform policy row.
pub const MARGINAL_FLOOR: f64 = 1e-12;

const ASCENT_SLACK: f64 = 1e-10;
const MIN_STEP: f64 = 1e-6;
/// Soft-min temperatures used as a continuation path for max-min objectives.
const SOFTMIN_TEMPERATURES: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("projection onto the occupancy polytope did not converge in {iterations} iterations (violation {violation:e})")]
    InfeasibleProjection { iterations: usize, violation: f64 },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop once an accepted step improves the objective by less than this.
    pub tolerance: f64,
    pub projection_tolerance: f64,
    pub projection_max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            max_iters: 5000,
            tolerance: 1e-8,
            projection_tolerance: 1e-9,
            projection_max_iters: 10_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let positive = [
            ("step_size", self.step_size),
            ("tolerance", self.tolerance),
            ("projection_tolerance", self.projection_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SolverError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iters == 0 || self.projection_max_iters == 0 {
            return Err(SolverError::InvalidConfig("iteration caps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancySolution {
    pub measure: OccupancyMeasure,
    pub objective: f64,
    pub avg_rewards: Vec<f64>,
    pub iterations: usize,
    /// `false` when the iteration cap was hit while the objective was still
    /// improving by more than the tolerance.
    pub converged: bool,
    /// Program value at the start and after every accepted step. Max-min
    /// runs concatenate the values of their soft-min stages.
    pub trace: Vec<f64>,
}

/// Equality constraints of the occupancy polytope with a precomputed
/// least-squares projector onto their solution set.
#[derive(Debug, Clone)]
pub struct FeasibleSet {
    n_states: usize,
    n_actions: usize,
    rows: usize,
    /// constraint matrix, `rows x n` row-major
    a: Vec<f64>,
    b: Vec<f64>,
    /// `A^T (A A^T)^+`, `n x rows` row-major
    correction: Vec<f64>,
}

impl FeasibleSet {
    pub fn new(mdp: &TabularMdp) -> Self {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let n = ns * na;
        // flow rows for s' = 1..S (the row for s' = 0 is implied by the
        // others plus the mass constraint), then the mass row
        let rows = ns;
        let mut a = vec![0.0; rows * n];
        for target in 1..ns {
            let row = &mut a[(target - 1) * n..target * n];
            for s in 0..ns {
                for act in 0..na {
                    let idx = s * na + act;
                    let own = if s == target { 1.0 } else { 0.0 };
                    row[idx] = own - mdp.p(s, act, target);
                }
            }
        }
        a[(rows - 1) * n..].iter_mut().for_each(|x| *x = 1.0);
        let mut b = vec![0.0; rows];
        b[rows - 1] = 1.0;

        let a_mat = DMatrix::from_row_slice(rows, n, &a);
        let gram = &a_mat * a_mat.transpose();
        // rank deficiency is possible (e.g. absorbing structure); the
        // pseudo-inverse keeps the projector well defined
        let gram_pinv = gram
            .clone()
            .pseudo_inverse(1e-12 * gram.amax().max(1.0))
            .expect("pseudo-inverse with nonnegative epsilon");
        let correction = a_mat.transpose() * gram_pinv;
        let mut corr = vec![0.0; n * rows];
        for i in 0..n {
            for j in 0..rows {
                corr[i * rows + j] = correction[(i, j)];
            }
        }
        Self {
            n_states: ns,
            n_actions: na,
            rows,
            a,
            b,
            correction: corr,
        }
    }

    pub fn dim(&self) -> usize {
        self.n_states * self.n_actions
    }

    fn residual(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for (j, r) in out.iter_mut().enumerate() {
            let row = &self.a[j * n..(j + 1) * n];
            *r = row.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() - self.b[j];
        }
    }

    /// Largest violation of the equality constraints.
    pub fn equality_violation(&self, x: &[f64]) -> f64 {
        let mut r = vec![0.0; self.rows];
        self.residual(x, &mut r);
        r.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn project_affine(&self, x: &[f64], residual: &mut [f64], out: &mut [f64]) {
        self.residual(x, residual);
        for (i, (o, v)) in out.iter_mut().zip(x).enumerate() {
            let corr = &self.correction[i * self.rows..(i + 1) * self.rows];
            *o = v - corr.iter().zip(residual.iter()).map(|(c, r)| c * r).sum::<f64>();
        }
    }

    /// Euclidean projection of `raw` onto the occupancy polytope.
    pub fn project(&self, raw: &[f64], tolerance: f64, max_iters: usize) -> Result<Vec<f64>, SolverError> {
        let n = self.dim();
        if raw.len() != n {
            return Err(MdpError::DimensionMismatch(format!(
                "raw table has {} entries, expected {n}",
                raw.len()
            ))
            .into());
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::InvalidConfig("projection input is not finite".into()));
        }
        let mut x = raw.to_vec();
        let mut y = vec![0.0; n];
        let mut q = vec![0.0; n];
        let mut residual = vec![0.0; self.rows];
        let mut violation = f64::INFINITY;
        for _ in 0..max_iters {
            // the affine step needs no Dykstra correction: its increments lie
            // in the row space of the constraints and are annihilated by the
            // next affine projection
            self.project_affine(&x, &mut residual, &mut y);
            let mut change: f64 = 0.0;
            // clipping y moves every equality residual by at most this much
            let mut negative_mass = 0.0;
            for i in 0..n {
                let v = y[i] + q[i];
                let z = v.max(0.0);
                q[i] = v - z;
                change = change.max((z - x[i]).abs());
                x[i] = z;
                negative_mass += (-y[i]).max(0.0);
            }
            violation = negative_mass;
            if negative_mass <= tolerance && change <= tolerance {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
                return Ok(y);
            }
        }
        Err(SolverError::InfeasibleProjection {
            iterations: max_iters,
            violation,
        })
    }
}

/// Projects an arbitrary finite table onto the feasible occupancy measures
/// of `mdp`.
pub fn project_feasible(
    raw: &[f64],
    mdp: &TabularMdp,
    config: &SolverConfig,
) -> Result<OccupancyMeasure, SolverError> {
    config.validate()?;
    let set = FeasibleSet::new(mdp);
    let d = set.project(raw, config.projection_tolerance, config.projection_max_iters)?;
    Ok(OccupancyMeasure::new(mdp.n_states(), mdp.n_actions(), d)?)
}

/// The smooth surrogate actually ascended. Max-min is handled through a
/// soft-min continuation because monotone subgradient steps stall at ties.
enum Surrogate<'a> {
    Exact(&'a ObjectiveFunction),
    SoftMin(f64),
}

impl Surrogate<'_> {
    fn value(&self, x: &[f64]) -> Result<f64, ObjectiveError> {
        match self {
            Surrogate::Exact(f) => f.evaluate(x),
            Surrogate::SoftMin(mu) => {
                let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
                let s: f64 = x.iter().map(|v| (-(v - lo) / mu).exp()).sum();
                Ok(lo - mu * s.ln())
            }
        }
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
        match self {
            Surrogate::Exact(f) => f.gradient(x),
            Surrogate::SoftMin(mu) => {
                let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
                let w: Vec<f64> = x.iter().map(|v| (-(v - lo) / mu).exp()).collect();
                let s: f64 = w.iter().sum();
                Ok(w.into_iter().map(|v| v / s).collect())
            }
        }
    }
}

struct Program<'a> {
    set: FeasibleSet,
    mdp: &'a TabularMdp,
    config: SolverConfig,
}

struct AscentResult {
    d: Vec<f64>,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

impl Program<'_> {
    fn lambda(&self, d: &[f64]) -> Vec<f64> {
        (0..self.mdp.n_agents())
            .map(|k| {
                self.mdp
                    .agent_rewards(k)
                    .iter()
                    .zip(d)
                    .map(|(r, x)| r * x)
                    .sum()
            })
            .collect()
    }

    fn project(&self, raw: &[f64]) -> Result<Vec<f64>, SolverError> {
        self.set.project(raw, self.config.projection_tolerance, self.config.projection_max_iters)
    }

    fn ascend(&self, surrogate: &Surrogate, start: Vec<f64>) -> Result<AscentResult, SolverError> {
        let n = start.len();
        let mut d = start;
        let mut value = surrogate.value(&self.lambda(&d))?;
        let mut trace = vec![value];
        let mut step = self.config.step_size;
        let mut grad = vec![0.0; n];
        let mut trial = vec![0.0; n];
        for iteration in 1..=self.config.max_iters {
            let outer = surrogate.gradient(&self.lambda(&d))?;
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (k, w) in outer.iter().enumerate() {
                for (g, r) in grad.iter_mut().zip(self.mdp.agent_rewards(k)) {
                    *g += w * r;
                }
            }
            loop {
                for i in 0..n {
                    trial[i] = d[i] + step * grad[i];
                }
                let candidate = self.project(&trial)?;
                let candidate_value = surrogate.value(&self.lambda(&candidate))?;
                if candidate_value >= value - ASCENT_SLACK {
                    let improvement = candidate_value - value;
                    d = candidate;
                    value = candidate_value;
                    trace.push(value);
                    if improvement < self.config.tolerance {
                        return Ok(AscentResult {
                            d,
                            iterations: iteration,
                            converged: true,
                            trace,
                        });
                    }
                    break;
                }
                step *= 0.5;
                if step < MIN_STEP {
                    // no ascent at the finest step: stationary at this resolution
                    return Ok(AscentResult {
                        d,
                        iterations: iteration,
                        converged: true,
                        trace,
                    });
                }
            }
        }
        Ok(AscentResult {
            d,
            iterations: self.config.max_iters,
            converged: false,
            trace,
        })
    }
}

/// Maximizes `f` over the occupancy measures of `mdp`.
pub fn solve_occupancy(
    mdp: &TabularMdp,
    f: &ObjectiveFunction,
    config: &SolverConfig,
) -> Result<OccupancySolution, SolverError> {
    config.validate()?;
    let program = Program {
        set: FeasibleSet::new(mdp),
        mdp,
        config: *config,
    };
    let n = mdp.n_states() * mdp.n_actions();
    let mut d = program.project(&vec![1.0 / n as f64; n])?;

    let mut iterations = 0;
    let mut converged = true;
    let mut trace = Vec::new();
    if matches!(f.kind(), ObjectiveKind::MaxMin) {
        for mu in SOFTMIN_TEMPERATURES {
            let stage = program.ascend(&Surrogate::SoftMin(mu), d)?;
            iterations += stage.iterations;
            converged &= stage.converged;
            trace.extend(stage.trace);
            d = stage.d;
        }
    } else {
        let run = program.ascend(&Surrogate::Exact(f), d)?;
        iterations = run.iterations;
        converged = run.converged;
        trace = run.trace;
        d = run.d;
    }

    let avg_rewards = program.lambda(&d);
    let objective = f.evaluate(&avg_rewards)?;
    Ok(OccupancySolution {
        measure: OccupancyMeasure::new(mdp.n_states(), mdp.n_actions(), d)?,
        objective,
        avg_rewards,
        iterations,
        converged,
        trace,
    })
}

/// `pi(a|s) = d(s,a) / sum_a d(s,a)`, uniform where the state marginal is
/// negligible.
pub fn extract_policy(d: &OccupancyMeasure) -> TabularPolicy {
    let na = d.n_actions();
    let mut probs = Vec::with_capacity(d.n_states() * na);
    for row in d.as_slice().chunks(na) {
        let clipped: Vec<f64> = row.iter().map(|v| v.max(0.0)).collect();
        let marginal: f64 = clipped.iter().sum();
        if marginal > MARGINAL_FLOOR {
            probs.extend(clipped.iter().map(|v| v / marginal));
        } else {
            probs.extend(std::iter::repeat_n(1.0 / na as f64, na));
        }
    }
    TabularPolicy::new(d.n_states(), na, probs).expect("rows are normalized by construction")
}
