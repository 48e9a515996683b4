//! Concave scalarizations of the per-agent average reward vector.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_EPSILON_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("invalid objective parameter: {0}")]
    InvalidParameter(String),
}

/// User-supplied concave objective with its (sub)gradient.
pub trait CustomObjective: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone)]
pub enum ObjectiveKind {
    /// `sum_k (x_k^(1-alpha) - 1) / (1 - alpha)`, `alpha > 0`, `alpha != 1`.
    AlphaFair { alpha: f64 },
    /// `sum_k ln x_k`
    ProportionalFair,
    /// `sum_k w_k ln x_k` with positive weights summing to one.
    WeightedProportionalFair { weights: Vec<f64> },
    /// `min_k x_k`
    MaxMin,
    /// Negative population variance of the components.
    NegVariance,
    /// `x_1`; single agent only.
    Identity,
    Custom(Arc<dyn CustomObjective>),
}

#[derive(Debug, Clone)]
pub struct ObjectiveFunction {
    kind: ObjectiveKind,
    lipschitz: Option<f64>,
    epsilon_floor: f64,
}

impl ObjectiveFunction {
    fn from_kind(kind: ObjectiveKind) -> Self {
        Self {
            kind,
            lipschitz: None,
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
        }
    }

    /// `alpha == 1` is the proportional-fair limit and is built as such.
    pub fn alpha_fair(alpha: f64) -> Result<Self, ObjectiveError> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(ObjectiveError::InvalidParameter(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if alpha == 1.0 {
            return Ok(Self::proportional_fair());
        }
        Ok(Self::from_kind(ObjectiveKind::AlphaFair { alpha }))
    }

    pub fn proportional_fair() -> Self {
        Self::from_kind(ObjectiveKind::ProportionalFair)
    }

    pub fn weighted_proportional_fair(weights: Vec<f64>) -> Result<Self, ObjectiveError> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|w| !(*w > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(ObjectiveError::InvalidParameter(format!(
                "weights must be positive and sum to 1 (sum = {total})"
            )));
        }
        Ok(Self::from_kind(ObjectiveKind::WeightedProportionalFair { weights }))
    }

    pub fn max_min() -> Self {
        Self::from_kind(ObjectiveKind::MaxMin)
    }

    pub fn neg_variance() -> Self {
        Self::from_kind(ObjectiveKind::NegVariance)
    }

    pub fn identity() -> Self {
        Self::from_kind(ObjectiveKind::Identity)
    }

    pub fn custom(objective: Arc<dyn CustomObjective>) -> Self {
        Self::from_kind(ObjectiveKind::Custom(objective))
    }

    pub fn with_lipschitz(mut self, lipschitz: f64) -> Result<Self, ObjectiveError> {
        if !(lipschitz > 0.0) {
            return Err(ObjectiveError::InvalidParameter(format!(
                "Lipschitz constant must be positive, got {lipschitz}"
            )));
        }
        self.lipschitz = Some(lipschitz);
        Ok(self)
    }

    pub fn with_epsilon_floor(mut self, floor: f64) -> Result<Self, ObjectiveError> {
        if !(floor > 0.0) {
            return Err(ObjectiveError::InvalidParameter(format!(
                "epsilon floor must be positive, got {floor}"
            )));
        }
        self.epsilon_floor = floor;
        Ok(self)
    }

    pub fn kind(&self) -> &ObjectiveKind {
        &self.kind
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn epsilon_floor(&self) -> f64 {
        self.epsilon_floor
    }

    /// Short stable name, used in logs and reports.
    pub fn name(&self) -> String {
        match &self.kind {
            ObjectiveKind::AlphaFair { alpha } => format!("alpha_fair({alpha})"),
            ObjectiveKind::ProportionalFair => "proportional_fair".into(),
            ObjectiveKind::WeightedProportionalFair { .. } => "weighted_proportional_fair".into(),
            ObjectiveKind::MaxMin => "max_min".into(),
            ObjectiveKind::NegVariance => "neg_variance".into(),
            ObjectiveKind::Identity => "identity".into(),
            ObjectiveKind::Custom(c) => c.name().to_string(),
        }
    }

    /// Whether increasing any single component never decreases the value.
    pub fn is_monotone(&self) -> bool {
        matches!(
            self.kind,
            ObjectiveKind::AlphaFair { .. }
                | ObjectiveKind::ProportionalFair
                | ObjectiveKind::WeightedProportionalFair { .. }
                | ObjectiveKind::MaxMin
                | ObjectiveKind::Identity
        )
    }

    fn check(&self, x: &[f64]) -> Result<(), ObjectiveError> {
        if x.is_empty() {
            return Err(ObjectiveError::DomainError("empty reward vector".into()));
        }
        if x.iter().any(|v| v.is_nan()) {
            return Err(ObjectiveError::DomainError("NaN component".into()));
        }
        match &self.kind {
            ObjectiveKind::WeightedProportionalFair { weights } if weights.len() != x.len() => {
                Err(ObjectiveError::DomainError(format!(
                    "{} weights for {} agents",
                    weights.len(),
                    x.len()
                )))
            }
            ObjectiveKind::Identity if x.len() != 1 => Err(ObjectiveError::DomainError(format!(
                "identity objective needs exactly one agent, got {}",
                x.len()
            ))),
            _ => Ok(()),
        }
    }

    fn lift(&self, v: f64) -> f64 {
        v.max(self.epsilon_floor)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64, ObjectiveError> {
        self.check(x)?;
        Ok(match &self.kind {
            ObjectiveKind::AlphaFair { alpha } => {
                let e = 1.0 - alpha;
                x.iter().map(|&v| (self.lift(v).powf(e) - 1.0) / e).sum()
            }
            ObjectiveKind::ProportionalFair => x.iter().map(|&v| self.lift(v).ln()).sum(),
            ObjectiveKind::WeightedProportionalFair { weights } => weights
                .iter()
                .zip(x)
                .map(|(w, &v)| w * self.lift(v).ln())
                .sum(),
            ObjectiveKind::MaxMin => x.iter().copied().fold(f64::INFINITY, f64::min),
            ObjectiveKind::NegVariance => {
                let n = x.len() as f64;
                let mean = x.iter().sum::<f64>() / n;
                -x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
            }
            ObjectiveKind::Identity => x[0],
            ObjectiveKind::Custom(c) => c.value(x),
        })
    }

    /// Gradient, or for `MaxMin` the subgradient selecting the lowest-index
    /// minimizer.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
        self.check(x)?;
        Ok(match &self.kind {
            ObjectiveKind::AlphaFair { alpha } => {
                x.iter().map(|&v| self.lift(v).powf(-alpha)).collect()
            }
            ObjectiveKind::ProportionalFair => x.iter().map(|&v| 1.0 / self.lift(v)).collect(),
            ObjectiveKind::WeightedProportionalFair { weights } => weights
                .iter()
                .zip(x)
                .map(|(w, &v)| w / self.lift(v))
                .collect(),
            ObjectiveKind::MaxMin => {
                let mut arg = 0;
                for (i, v) in x.iter().enumerate() {
                    if *v < x[arg] {
                        arg = i;
                    }
                }
                let mut g = vec![0.0; x.len()];
                g[arg] = 1.0;
                g
            }
            ObjectiveKind::NegVariance => {
                let n = x.len() as f64;
                let mean = x.iter().sum::<f64>() / n;
                x.iter().map(|v| -2.0 * (v - mean) / n).collect()
            }
            ObjectiveKind::Identity => vec![1.0],
            ObjectiveKind::Custom(c) => c.gradient(x),
        })
    }
}

/// Objective selection as it appears in experiment configs:
/// a string `kind` plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    AlphaFair {
        alpha: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lipschitz: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epsilon_floor: Option<f64>,
    },
    ProportionalFair {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lipschitz: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epsilon_floor: Option<f64>,
    },
    WeightedProportionalFair {
        weights: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lipschitz: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epsilon_floor: Option<f64>,
    },
    MaxMin {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lipschitz: Option<f64>,
    },
    NegVariance {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lipschitz: Option<f64>,
    },
    Identity {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lipschitz: Option<f64>,
    },
}

impl ObjectiveSpec {
    pub fn build(&self) -> Result<ObjectiveFunction, ObjectiveError> {
        let (f, lipschitz, floor) = match self {
            ObjectiveSpec::AlphaFair {
                alpha,
                lipschitz,
                epsilon_floor,
            } => (ObjectiveFunction::alpha_fair(*alpha)?, lipschitz, epsilon_floor),
            ObjectiveSpec::ProportionalFair {
                lipschitz,
                epsilon_floor,
            } => (ObjectiveFunction::proportional_fair(), lipschitz, epsilon_floor),
            ObjectiveSpec::WeightedProportionalFair {
                weights,
                lipschitz,
                epsilon_floor,
            } => (
                ObjectiveFunction::weighted_proportional_fair(weights.clone())?,
                lipschitz,
                epsilon_floor,
            ),
            ObjectiveSpec::MaxMin { lipschitz } => (ObjectiveFunction::max_min(), lipschitz, &None),
            ObjectiveSpec::NegVariance { lipschitz } => {
                (ObjectiveFunction::neg_variance(), lipschitz, &None)
            }
            ObjectiveSpec::Identity { lipschitz } => (ObjectiveFunction::identity(), lipschitz, &None),
        };
        let f = match lipschitz {
            Some(l) => f.with_lipschitz(*l)?,
            None => f,
        };
        match floor {
            Some(e) => f.with_epsilon_floor(*e),
            None => Ok(f),
        }
    }

    /// Number of agents the objective is tied to, if any.
    pub fn required_agents(&self) -> Option<usize> {
        match self {
            ObjectiveSpec::WeightedProportionalFair { weights, .. } => Some(weights.len()),
            ObjectiveSpec::Identity { .. } => Some(1),
            _ => None,
        }
    }
}
