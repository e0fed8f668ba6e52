//! Variable-structure stochastic learning automaton with the linear
//! reward-penalty (L_R-P) update scheme.
//!
//! A [`ProbabilityVector`] is the action-selection distribution of one
//! automaton. Step sizes for rewards and penalties are either fixed (the
//! stationary harness) or computed from traffic indices and hop counts via
//! [`compute_alpha`] and [`compute_beta`].

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance on the simplex sum.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Drift beyond which entries are divided by their exact sum.
const RENORMALIZE_THRESHOLD: f64 = 1e-12;

/// Lower bound applied to `damping_f` when `exp` blows up.
pub const DAMPING_FLOOR: f64 = -1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutomatonError {
    #[error("automaton needs at least one action")]
    NoActions,
    #[error("action {index} out of range for {len} actions")]
    ActionOutOfRange { index: usize, len: usize },
    #[error("step size {0} outside [0, 1]")]
    StepOutOfRange(f64),
    #[error("invalid weights: {0}")]
    InvalidWeights(&'static str),
    #[error("invalid automaton config: {0}")]
    InvalidConfig(String),
}

/// Result of a penalty update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyOutcome {
    Applied,
    /// A single-action vector has no alternative to shift probability to.
    SingleActionNoop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityVector {
    entries: Vec<f64>,
}

impl ProbabilityVector {
    /// Equal probabilities over `r` actions.
    pub fn uniform(r: usize) -> Result<Self, AutomatonError> {
        if r == 0 {
            return Err(AutomatonError::NoActions);
        }
        let mut pv = Self {
            entries: vec![1.0 / r as f64; r],
        };
        pv.renormalize();
        Ok(pv)
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self, AutomatonError> {
        if weights.is_empty() {
            return Err(AutomatonError::NoActions);
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(AutomatonError::InvalidWeights("negative or non-finite weight"));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(AutomatonError::InvalidWeights("weights sum to zero"));
        }
        let mut pv = Self {
            entries: weights.into_iter().map(|w| w / sum).collect(),
        };
        pv.renormalize();
        Ok(pv)
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().sum()
    }

    /// Index of the largest entry (lowest index on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.entries.iter().enumerate() {
            if *p > self.entries[best] {
                best = i;
            }
        }
        best
    }

    /// Samples an action. Consumes exactly one uniform draw.
    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.pick(u, |_| true).unwrap_or(0)
    }

    /// Samples among the actions accepted by `allowed`, renormalizing over
    /// them. Consumes exactly one uniform draw even when nothing is allowed.
    /// If every allowed action has zero probability the choice is uniform
    /// over the allowed set.
    pub fn select_among<R, F>(&self, allowed: F, rng: &mut R) -> Option<usize>
    where
        R: Rng + ?Sized,
        F: Fn(usize) -> bool,
    {
        let u: f64 = rng.random();
        self.pick(u, allowed)
    }

    fn pick<F: Fn(usize) -> bool>(&self, u: f64, allowed: F) -> Option<usize> {
        let total: f64 = (0..self.len())
            .filter(|&i| allowed(i))
            .map(|i| self.entries[i])
            .sum();
        if total <= 0.0 {
            let live: Vec<usize> = (0..self.len()).filter(|&i| allowed(i)).collect();
            if live.is_empty() {
                return None;
            }
            let k = ((u * live.len() as f64) as usize).min(live.len() - 1);
            return Some(live[k]);
        }
        let target = u * total;
        let mut acc = 0.0;
        let mut last = None;
        for i in 0..self.len() {
            if !allowed(i) || self.entries[i] <= 0.0 {
                continue;
            }
            acc += self.entries[i];
            last = Some(i);
            if target < acc {
                return Some(i);
            }
        }
        // u * total can round up to the final cumulative sum
        last
    }

    /// Reward action `i` with step `alpha`:
    /// `p_i += alpha (1 - p_i)`, `p_j *= 1 - alpha` for `j != i`.
    pub fn reward(&mut self, i: usize, alpha: f64) -> Result<(), AutomatonError> {
        self.check(i, alpha)?;
        for (j, p) in self.entries.iter_mut().enumerate() {
            if j == i {
                *p += alpha * (1.0 - *p);
            } else {
                *p *= 1.0 - alpha;
            }
        }
        self.renormalize();
        Ok(())
    }

    /// Penalize action `i` with step `beta`:
    /// `p_i *= 1 - beta`, `p_j = beta / (r - 1) + (1 - beta) p_j` for `j != i`.
    pub fn penalize(&mut self, i: usize, beta: f64) -> Result<PenaltyOutcome, AutomatonError> {
        self.check(i, beta)?;
        let r = self.len();
        if r == 1 {
            return Ok(PenaltyOutcome::SingleActionNoop);
        }
        let share = beta / (r - 1) as f64;
        for (j, p) in self.entries.iter_mut().enumerate() {
            if j == i {
                *p *= 1.0 - beta;
            } else {
                *p = share + (1.0 - beta) * *p;
            }
        }
        self.renormalize();
        Ok(PenaltyOutcome::Applied)
    }

    fn check(&self, i: usize, step: f64) -> Result<(), AutomatonError> {
        if i >= self.len() {
            return Err(AutomatonError::ActionOutOfRange {
                index: i,
                len: self.len(),
            });
        }
        if !(0.0..=1.0).contains(&step) {
            return Err(AutomatonError::StepOutOfRange(step));
        }
        Ok(())
    }

    fn renormalize(&mut self) {
        for p in &mut self.entries {
            *p = p.clamp(0.0, 1.0);
        }
        let sum = self.sum();
        if (sum - 1.0).abs() > RENORMALIZE_THRESHOLD && sum > 0.0 {
            for p in &mut self.entries {
                *p /= sum;
            }
        }
    }
}

/// Constants of the dynamic reward/penalty step computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutomatonConfig {
    /// Base reward offset.
    pub alpha1: f64,
    /// Base penalty offset.
    pub alpha2: f64,
    /// Traffic-index scale.
    pub delta: f64,
    /// Hop damping factor used by [`damping_f`].
    pub gamma: f64,
    /// Squared-deviation scale used by [`deviation_h`].
    pub eta: f64,
    /// Max-hop modulation used by [`log_modulation_g`].
    pub xi: f64,
    pub c1: f64,
    pub c2: f64,
    pub clamp_min: f64,
    pub clamp_max: f64,
}

impl Default for AutomatonConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.05,
            alpha2: 0.05,
            delta: 1.0,
            gamma: 0.1,
            eta: 1.0,
            xi: 1.0,
            c1: 0.0,
            c2: 0.0,
            clamp_min: 0.01,
            clamp_max: 0.9,
        }
    }
}

impl AutomatonConfig {
    pub fn validate(&self) -> Result<(), AutomatonError> {
        let fields = [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("delta", self.delta),
            ("gamma", self.gamma),
            ("eta", self.eta),
            ("xi", self.xi),
            ("c1", self.c1),
            ("c2", self.c2),
            ("clamp_min", self.clamp_min),
            ("clamp_max", self.clamp_max),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(AutomatonError::InvalidConfig(format!("{name} is not finite")));
        }
        if !(self.clamp_min > 0.0 && self.clamp_min <= self.clamp_max && self.clamp_max <= 1.0) {
            return Err(AutomatonError::InvalidConfig(format!(
                "clamp bounds must satisfy 0 < clamp_min <= clamp_max <= 1 (got {}, {})",
                self.clamp_min, self.clamp_max
            )));
        }
        Ok(())
    }

    fn clamp(&self, raw: f64) -> f64 {
        raw.clamp(self.clamp_min, self.clamp_max)
    }
}

/// `max_hop - e^(gamma * num_hop)`, floored at [`DAMPING_FLOOR`].
pub fn damping_f(max_hop: f64, num_hop: f64, gamma: f64) -> f64 {
    let v = max_hop - (gamma * num_hop).exp();
    if v.is_nan() || v < DAMPING_FLOOR {
        DAMPING_FLOOR
    } else {
        v
    }
}

/// `xi * ln(max_hop + 1)`.
pub fn log_modulation_g(max_hop: f64, xi: f64) -> f64 {
    xi * (max_hop + 1.0).ln()
}

/// `eta * (avg_ti - ti)^2`.
pub fn deviation_h(avg_ti: f64, ti: f64, eta: f64) -> f64 {
    let d = avg_ti - ti;
    eta * d * d
}

/// A clamped reward or penalty step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSize {
    pub value: f64,
    /// The ratio's denominator was zero (cold start); `value` is `clamp_max`.
    pub zero_denominator: bool,
}

impl StepSize {
    fn finish(numerator: f64, denominator: f64, offset: f64, cfg: &AutomatonConfig) -> Self {
        if denominator == 0.0 {
            return Self {
                value: cfg.clamp_max,
                zero_denominator: true,
            };
        }
        let raw = offset + numerator / denominator;
        if raw.is_nan() {
            return Self {
                value: cfg.clamp_max,
                zero_denominator: true,
            };
        }
        Self {
            value: cfg.clamp(raw),
            zero_denominator: false,
        }
    }
}

/// Reward step for a parent with traffic index `ti` at `num_hop` hops.
pub fn compute_alpha(
    ti: f64,
    num_hop: f64,
    max_hop: f64,
    max_ti: f64,
    cfg: &AutomatonConfig,
) -> StepSize {
    let num = cfg.delta * ti + damping_f(max_hop, num_hop, cfg.gamma);
    let den = cfg.delta * max_ti + log_modulation_g(max_hop, cfg.xi);
    StepSize::finish(num, den, cfg.alpha1 + cfg.c1, cfg)
}

/// Penalty step for a parent with traffic index `ti` against the set's
/// average `avg_ti`.
pub fn compute_beta(
    avg_ti: f64,
    ti: f64,
    num_hop: f64,
    max_hop: f64,
    cfg: &AutomatonConfig,
) -> StepSize {
    let num = cfg.delta * deviation_h(avg_ti, ti, cfg.eta) + num_hop;
    let den = cfg.delta * avg_ti + log_modulation_g(max_hop, cfg.xi);
    StepSize::finish(num, den, cfg.alpha2 + cfg.c2, cfg)
}

/// Environment with a fixed reward probability per action.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryEnvironment {
    reward_probs: Vec<f64>,
}

impl StationaryEnvironment {
    pub fn new(reward_probs: Vec<f64>) -> Result<Self, AutomatonError> {
        if reward_probs.is_empty() {
            return Err(AutomatonError::NoActions);
        }
        if reward_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(AutomatonError::InvalidWeights("reward probability outside [0, 1]"));
        }
        Ok(Self { reward_probs })
    }

    pub fn reward_probs(&self) -> &[f64] {
        &self.reward_probs
    }

    pub fn actions(&self) -> usize {
        self.reward_probs.len()
    }

    /// The action with the highest reward probability (lowest index on ties).
    pub fn optimal_action(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.reward_probs.iter().enumerate() {
            if *p > self.reward_probs[best] {
                best = i;
            }
        }
        best
    }

    /// Draws the response to `action`: `true` means reward.
    pub fn respond<R: Rng + ?Sized>(&self, action: usize, rng: &mut R) -> bool {
        let u: f64 = rng.random();
        u < self.reward_probs[action]
    }
}

#[derive(Debug, Clone)]
pub struct StationaryTrial {
    pub terminal: ProbabilityVector,
    /// Argmax action after every iteration.
    pub argmax_trace: Vec<usize>,
}

/// Runs the select / respond / update loop against a stationary
/// environment with constant steps. Zero iterations return the uniform
/// vector untouched.
pub fn run_stationary_trial<R: Rng + ?Sized>(
    env: &StationaryEnvironment,
    alpha: f64,
    beta: f64,
    iterations: usize,
    rng: &mut R,
) -> Result<StationaryTrial, AutomatonError> {
    for step in [alpha, beta] {
        if !(0.0..=1.0).contains(&step) {
            return Err(AutomatonError::StepOutOfRange(step));
        }
    }
    let mut pv = ProbabilityVector::uniform(env.actions())?;
    let mut argmax_trace = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let action = pv.select(rng);
        if env.respond(action, rng) {
            pv.reward(action, alpha)?;
        } else {
            pv.penalize(action, beta)?;
        }
        argmax_trace.push(pv.argmax());
    }
    Ok(StationaryTrial {
        terminal: pv,
        argmax_trace,
    })
}
