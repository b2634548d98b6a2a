use serde::{Deserialize, Serialize};

use super::weights::{adaptive_eta, predefined_eta, proximal_log_weight, BaseWeight, Eta, ProxTarget};
use crate::error::{Error, Result};

/// How each stage picks its step size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ScheduleSpec {
    /// Explicit `lambda_1, lambda_2, ...`; `lambda_0 = 1` is implicit.
    Predefined { lambdas: Vec<f64> },
    /// `lambda_k = 1 - k / stages` for `k = 1..stages`, then `refine` stages at 0.
    Linear {
        stages: usize,
        #[serde(default)]
        refine: usize,
    },
    /// The same step size in every stage.
    Constant { eta: Eta, stages: usize },
    /// Largest step inside a KL trust region of radius `eps`.
    Adaptive { eps: f64, stages: usize },
}

impl ScheduleSpec {
    pub fn stages(&self) -> usize {
        match self {
            ScheduleSpec::Predefined { lambdas } => lambdas.len(),
            ScheduleSpec::Linear { stages, refine } => stages + refine,
            ScheduleSpec::Constant { stages, .. } | ScheduleSpec::Adaptive { stages, .. } => *stages,
        }
    }

    /// The lambda list of a predefined or linear schedule.
    pub fn lambdas(&self) -> Option<Vec<f64>> {
        match self {
            ScheduleSpec::Predefined { lambdas } => Some(lambdas.clone()),
            ScheduleSpec::Linear { stages, refine } => Some(
                (1..=*stages)
                    .map(|k| 1.0 - k as f64 / *stages as f64)
                    .chain(std::iter::repeat_n(0.0, *refine))
                    .collect(),
            ),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ScheduleSpec::Adaptive { eps, .. } if !(*eps > 0.0) => {
                Err(Error::Config(format!("trust radius must be positive, got {eps}")))
            }
            ScheduleSpec::Constant {
                eta: Eta::Finite(e), ..
            } if !(*e > 0.0) => Err(Error::Config(format!("step size must be positive, got {e}"))),
            _ => {
                if let Some(l) = self.lambdas() {
                    let mut prev = 1.0;
                    for &next in &l {
                        predefined_eta(prev, next)?;
                        prev = next;
                    }
                }
                Ok(())
            }
        }
    }
}

/// Stage counter with the step-size and interpolation histories. Every entry
/// satisfies `lambda_k = lambda_{k-1} / (eta_k + 1)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SchedulerState {
    pub k: usize,
    pub lambda_history: Vec<f64>,
    pub eta_history: Vec<Eta>,
    pub variant: ProxTarget,
    #[serde(skip)]
    pub spec: ScheduleSpec,
}

impl SchedulerState {
    pub fn new(spec: ScheduleSpec, variant: ProxTarget) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            k: 0,
            lambda_history: vec![1.0],
            eta_history: Vec::new(),
            variant,
            spec,
        })
    }

    pub fn lambda(&self) -> f64 {
        *self.lambda_history.last().expect("lambda_0 is always present")
    }

    pub fn eta(&self) -> Option<Eta> {
        self.eta_history.last().copied()
    }

    pub fn finished(&self) -> bool {
        self.k >= self.spec.stages()
    }

    /// Step size for the next stage. Adaptive schedules read the stage's
    /// unregularized log weights.
    pub fn propose(&self, base: &[BaseWeight]) -> Result<Eta> {
        match &self.spec {
            ScheduleSpec::Adaptive { eps, .. } => {
                let totals: Vec<f64> = base.iter().map(|b| b.total()).collect();
                adaptive_eta(&totals, *eps)
            }
            ScheduleSpec::Constant { eta, .. } => Ok(*eta),
            spec => {
                let lambdas = spec.lambdas().expect("list schedule");
                let next = *lambdas
                    .get(self.k)
                    .ok_or_else(|| Error::Config("schedule has no more stages".into()))?;
                predefined_eta(self.lambda(), next)
            }
        }
    }

    /// Records `eta` as stage `k + 1`.
    pub fn advance(&mut self, eta: Eta) {
        let next = self.lambda() * eta.lambda_factor();
        self.eta_history.push(eta);
        self.lambda_history.push(next);
        self.k += 1;
    }

    /// Proximal log weights for the current stage.
    pub fn log_weights(&self, base: &[BaseWeight]) -> Vec<f64> {
        let eta = self.eta().unwrap_or(Eta::Infinite);
        base.iter()
            .map(|&b| proximal_log_weight(b, self.variant, eta, self.lambda()))
            .collect()
    }
}
