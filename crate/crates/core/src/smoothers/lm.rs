use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    /// λ went up on too many successive iterations.
    LambdaIncreased,
    SmallReduction,
    /// The member's forward run failed; it is frozen.
    Failed,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::MaxIterations => "max_iterations",
            StopReason::LambdaIncreased => "lambda_increased",
            StopReason::SmallReduction => "small_reduction",
            StopReason::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSettings {
    pub max_iterations: usize,
    /// Relative reduction below which an accepted step ends the run.
    pub min_relative_reduction: f64,
    pub factor: f64,
    /// Stop after this many successive λ increases; `None` never stops on
    /// increases.
    pub max_consecutive_increases: Option<usize>,
}

impl Default for LmSettings {
    fn default() -> Self {
        LmSettings {
            max_iterations: 25,
            min_relative_reduction: 0.005,
            factor: 4.0,
            max_consecutive_increases: Some(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmState {
    pub lambda: f64,
    pub iteration: usize,
    pub consecutive_increases: usize,
    /// Objective of the currently accepted iterate.
    pub current: f64,
    pub history: Vec<f64>,
    pub stopped: Option<StopReason>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOutcome {
    pub accepted: bool,
    pub stop: Option<StopReason>,
}

impl LmState {
    pub fn new(lambda: f64, initial: f64) -> Self {
        LmState {
            lambda,
            iteration: 0,
            consecutive_increases: 0,
            current: initial,
            history: vec![initial],
            stopped: None,
        }
    }

    pub fn is_running(&self) -> bool {
        self.stopped.is_none()
    }
}

/// Accepts on improvement (λ ÷ 4), rejects otherwise (λ × 4) and decides
/// whether to stop. A non-finite candidate counts as worsening.
pub fn lm_step_control(state: &mut LmState, candidate: f64, settings: &LmSettings) -> LmOutcome {
    state.iteration += 1;
    let mut stop = None;
    let accepted = candidate.is_finite() && candidate < state.current;
    if accepted {
        let reduction = (state.current - candidate) / state.current.abs().max(f64::MIN_POSITIVE);
        state.current = candidate;
        state.lambda /= settings.factor;
        state.consecutive_increases = 0;
        if reduction < settings.min_relative_reduction {
            stop = Some(StopReason::SmallReduction);
        }
    } else {
        state.lambda *= settings.factor;
        state.consecutive_increases += 1;
        if settings
            .max_consecutive_increases
            .is_some_and(|k| state.consecutive_increases >= k)
        {
            stop = Some(StopReason::LambdaIncreased);
        }
    }
    state.history.push(state.current);
    if stop.is_none() && state.iteration >= settings.max_iterations {
        stop = Some(StopReason::MaxIterations);
    }
    state.stopped = stop;
    LmOutcome { accepted, stop }
}
