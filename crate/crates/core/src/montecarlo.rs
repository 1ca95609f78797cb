//! Random coordinate-step minimizer over the five extrinsic angles.
//!
//! Each iteration picks one angle and a direction at random, steps it by the
//! current `Δ`, and keeps the move only if the cost strictly decreases. After
//! at least `warmup` iterations at the current `Δ`, an acceptance ratio below
//! the threshold shrinks `Δ` by `decay` and restarts the counters. The run
//! ends when `Δ` drops to `delta_min` or below.
//!
//! Randomness comes from ChaCha8 seeded with `seed_from_u64(seed)`. Every
//! iteration consumes exactly two 64-bit outputs: the first selects the angle
//! as `(x * 5) >> 64`, the top bit of the second selects the sign (set means
//! subtract).

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::ExtrinsicAngles;

pub const DEFAULT_DELTA0: f64 = 0.001;
pub const DEFAULT_DECAY: f64 = 0.75;
pub const DEFAULT_ACCEPTANCE_THRESHOLD: f64 = 0.2;
pub const DEFAULT_DELTA_MIN: f64 = 1e-6;
/// Iterations at a given `Δ` before the acceptance ratio is consulted.
pub const DEFAULT_WARMUP: u64 = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonteCarloError {
    #[error("cost function returned {value} at iteration {iteration}")]
    NonFiniteCost { iteration: u64, value: f64 },
    #[error("invalid Monte Carlo configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloConfig {
    pub delta0: f64,
    pub decay: f64,
    pub acceptance_threshold: f64,
    pub delta_min: f64,
    pub seed: u64,
    pub warmup: u64,
    /// Hard cap on iterations; `None` runs until `Δ` is exhausted.
    pub max_iterations: Option<u64>,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            delta0: DEFAULT_DELTA0,
            decay: DEFAULT_DECAY,
            acceptance_threshold: DEFAULT_ACCEPTANCE_THRESHOLD,
            delta_min: DEFAULT_DELTA_MIN,
            seed: 0,
            warmup: DEFAULT_WARMUP,
            max_iterations: None,
        }
    }
}

impl MonteCarloConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<(), MonteCarloError> {
        let bad = |msg: String| Err(MonteCarloError::InvalidConfig(msg));
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad(format!("decay must be in (0, 1), got {}", self.decay));
        }
        if !(self.acceptance_threshold > 0.0 && self.acceptance_threshold < 1.0) {
            return bad(format!(
                "acceptance threshold must be in (0, 1), got {}",
                self.acceptance_threshold
            ));
        }
        if !(self.delta_min > 0.0 && self.delta_min < self.delta0 && self.delta0.is_finite()) {
            return bad(format!(
                "need 0 < delta_min < delta0, got delta_min={} delta0={}",
                self.delta_min, self.delta0
            ));
        }
        if self.warmup == 0 {
            return bad("warmup must be at least one iteration".into());
        }
        Ok(())
    }

    /// Number of distinct `Δ` values visited when every level ends by decay:
    /// `⌈ln(delta_min / delta0) / ln(decay)⌉`.
    pub fn level_count(&self) -> u32 {
        ((self.delta_min / self.delta0).ln() / self.decay.ln()).ceil() as u32
    }
}

/// Maps an angle vector to a nonnegative scalar. Implementations must be
/// deterministic.
pub trait CostFunction {
    fn cost(&self, angles: &ExtrinsicAngles) -> f64;
}

impl<F> CostFunction for F
where
    F: Fn(&ExtrinsicAngles) -> f64,
{
    fn cost(&self, angles: &ExtrinsicAngles) -> f64 {
        self(angles)
    }
}

/// An accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptedMove {
    pub iteration: u64,
    /// Index into [`Trace::levels`].
    pub level: u32,
    pub coordinate: u8,
    /// `+1` or `-1`.
    pub sign: i8,
    pub angles: [f64; 5],
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub delta: f64,
    pub iterations: u64,
    pub accepted: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    DeltaExhausted,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub initial_cost: f64,
    pub accepted: Vec<AcceptedMove>,
    pub levels: Vec<Level>,
    pub iterations: u64,
    pub termination: Termination,
}

impl Trace {
    /// Costs of the starting point followed by every accepted move.
    pub fn accepted_costs(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.initial_cost).chain(self.accepted.iter().map(|m| m.cost))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeOutcome {
    pub angles: ExtrinsicAngles,
    pub cost: f64,
    pub trace: Trace,
}

/// Runs the minimizer from `initial`. Only the five angles move; the
/// baseline is carried through untouched.
pub fn minimize<C: CostFunction + ?Sized>(
    initial: &ExtrinsicAngles,
    cost: &C,
    config: &MonteCarloConfig,
) -> Result<MinimizeOutcome, MonteCarloError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut current = *initial;
    let mut current_cost = cost.cost(&current);
    if !current_cost.is_finite() {
        return Err(MonteCarloError::NonFiniteCost {
            iteration: 0,
            value: current_cost,
        });
    }
    let mut trace = Trace {
        initial_cost: current_cost,
        accepted: Vec::new(),
        levels: Vec::new(),
        iterations: 0,
        termination: Termination::DeltaExhausted,
    };

    let mut delta = config.delta0;
    let mut level = Level {
        delta,
        iterations: 0,
        accepted: 0,
    };

    loop {
        if config.max_iterations.is_some_and(|m| trace.iterations >= m) {
            trace.termination = Termination::IterationLimit;
            break;
        }
        let coordinate = ((u128::from(rng.next_u64()) * 5) >> 64) as usize;
        let subtract = rng.next_u64() >> 63 == 1;
        let sign: i8 = if subtract { -1 } else { 1 };

        let mut angles = current.angles();
        angles[coordinate] += f64::from(sign) * delta;
        let candidate = current.with_angles(angles);
        let c = cost.cost(&candidate);
        trace.iterations += 1;
        level.iterations += 1;
        if !c.is_finite() {
            return Err(MonteCarloError::NonFiniteCost {
                iteration: trace.iterations,
                value: c,
            });
        }
        if c < current_cost {
            current = candidate;
            current_cost = c;
            level.accepted += 1;
            trace.accepted.push(AcceptedMove {
                iteration: trace.iterations,
                level: trace.levels.len() as u32,
                coordinate: coordinate as u8,
                sign,
                angles,
                cost: c,
            });
        }

        if level.iterations >= config.warmup
            && (level.accepted as f64) < config.acceptance_threshold * level.iterations as f64
        {
            trace.levels.push(level);
            delta *= config.decay;
            if delta <= config.delta_min {
                break;
            }
            level = Level {
                delta,
                iterations: 0,
                accepted: 0,
            };
        }
    }
    if trace.termination == Termination::IterationLimit && level.iterations > 0 {
        trace.levels.push(level);
    }

    Ok(MinimizeOutcome {
        angles: current,
        cost: current_cost,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn target() -> ExtrinsicAngles {
        ExtrinsicAngles::new(0.3, -0.05, 0.02, 0.04, -0.1, 4.0).unwrap()
    }

    fn bowl(t: ExtrinsicAngles) -> impl Fn(&ExtrinsicAngles) -> f64 {
        move |a: &ExtrinsicAngles| {
            a.angles()
                .iter()
                .zip(t.angles())
                .map(|(x, y)| (x - y).powi(2))
                .sum()
        }
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        let t = target();
        let start = t.with_angles(t.angles().map(|a| a + 0.01));
        let config = MonteCarloConfig::default().with_seed(11);
        let out = minimize(&start, &bowl(t), &config).unwrap();
        for (x, y) in out.angles.angles().iter().zip(t.angles()) {
            assert!((x - y).abs() < 5.0 * config.delta_min, "{x} vs {y}");
        }
        assert_eq!(out.angles.baseline, t.baseline);
        assert_eq!(out.trace.termination, Termination::DeltaExhausted);
    }

    #[test]
    fn stays_at_minimum() {
        let t = target();
        let out = minimize(&t, &bowl(t), &MonteCarloConfig::default()).unwrap();
        assert!(out.cost <= 0.0);
        assert!(out.trace.accepted.is_empty());
        assert_eq!(out.angles, t);
    }

    #[test]
    fn level_schedule_matches_arithmetic() {
        let config = MonteCarloConfig::default();
        // ln(1e-3) / ln(0.75) = 24.01..., so 25 levels: 1e-3 * 0.75^k, k = 0..=24.
        assert_eq!(config.level_count(), 25);
        let t = target();
        let out = minimize(&t, &bowl(t), &config).unwrap();
        assert_eq!(out.trace.levels.len() as u32, config.level_count());
        for (k, l) in out.trace.levels.iter().enumerate() {
            let want = config.delta0 * config.decay.powi(k as i32);
            assert!((l.delta - want).abs() <= 1e-15 * want);
            assert!(l.delta > config.delta_min);
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let t = target();
        let start = t.with_angles(t.angles().map(|a| a - 0.004));
        let config = MonteCarloConfig::default().with_seed(99);
        let a = minimize(&start, &bowl(t), &config).unwrap();
        let b = minimize(&start, &bowl(t), &config).unwrap();
        assert_eq!(a, b);
        let c = minimize(&start, &bowl(t), &config.with_seed(100)).unwrap();
        assert_ne!(a.trace.accepted, c.trace.accepted);
    }

    #[test]
    fn accepted_costs_strictly_decrease() {
        let t = target();
        let start = t.with_angles(t.angles().map(|a| a + 0.02));
        let out = minimize(&start, &bowl(t), &MonteCarloConfig::default().with_seed(5)).unwrap();
        let costs: Vec<f64> = out.trace.accepted_costs().collect();
        assert!(costs.len() > 1);
        assert!(costs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn flat_cost_rejects_equal_moves() {
        let t = target();
        let out = minimize(&t, &|_: &ExtrinsicAngles| 1.0, &MonteCarloConfig::default()).unwrap();
        assert!(out.trace.accepted.is_empty());
        assert_eq!(out.angles, t);
    }

    #[test]
    fn non_finite_cost_is_an_error() {
        let t = target();
        let err = minimize(&t, &|a: &ExtrinsicAngles| {
            if *a == t { 1.0 } else { f64::NAN }
        }, &MonteCarloConfig::default())
        .unwrap_err();
        assert!(matches!(err, MonteCarloError::NonFiniteCost { iteration: 1, .. }));
        let err = minimize(&t, &|_: &ExtrinsicAngles| f64::INFINITY, &MonteCarloConfig::default())
            .unwrap_err();
        assert!(matches!(err, MonteCarloError::NonFiniteCost { iteration: 0, .. }));
    }

    #[test]
    fn invalid_configs() {
        let base = MonteCarloConfig::default();
        for c in [
            MonteCarloConfig { decay: 1.0, ..base },
            MonteCarloConfig { decay: 0.0, ..base },
            MonteCarloConfig { acceptance_threshold: 1.5, ..base },
            MonteCarloConfig { delta_min: 0.01, ..base },
            MonteCarloConfig { delta_min: 0.0, ..base },
            MonteCarloConfig { warmup: 0, ..base },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn iteration_cap() {
        let t = target();
        let start = t.with_angles(t.angles().map(|a| a + 0.5));
        let config = MonteCarloConfig {
            max_iterations: Some(100),
            ..Default::default()
        };
        let out = minimize(&start, &bowl(t), &config).unwrap();
        assert_eq!(out.trace.iterations, 100);
        assert_eq!(out.trace.termination, Termination::IterationLimit);
    }
}
