//! Target-gated rewards.
//!
//! A reward is a pair of scorers, one applied when the prompt has the target
//! feature and one when it does not. Scorers see only `(prompt, completion)`;
//! the gate value is consumed by [`RewardSpec::gated`] and never forwarded.

use std::fmt;

use crate::taskgen::{Prompt, SyntheticTask};

/// Completion length of the synthetic tasks.
pub const COMPLETION_LEN: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("completion must have at least two digits, got {0}")]
    TooShort(usize),
}

/// Number of strictly increasing consecutive pairs.
pub fn inc_pairs(y: &[u8]) -> Result<usize, RewardError> {
    if y.is_empty() {
        return Err(RewardError::TooShort(0));
    }
    Ok(y.windows(2).filter(|w| w[1] > w[0]).count())
}

/// Number of strictly decreasing consecutive pairs.
pub fn dec_pairs(y: &[u8]) -> Result<usize, RewardError> {
    if y.is_empty() {
        return Err(RewardError::TooShort(0));
    }
    Ok(y.windows(2).filter(|w| w[1] < w[0]).count())
}

fn pair_fraction(count: usize, len: usize) -> Result<f64, RewardError> {
    if len < 2 {
        return Err(RewardError::TooShort(len));
    }
    Ok(count as f64 / (len - 1) as f64)
}

/// `inc(y)/(|y|-1)` when the task's target is present in `x`, else
/// `dec(y)/(|y|-1)`.
pub fn synthetic_reward(task: SyntheticTask, x: &Prompt, y: &[u8]) -> Result<f64, RewardError> {
    if task.target(x) {
        pair_fraction(inc_pairs(y)?, y.len())
    } else {
        pair_fraction(dec_pairs(y)?, y.len())
    }
}

/// A scorer of `(prompt, completion)` pairs with output nominally in `[0, 1]`.
pub trait Scorer<X: ?Sized, Y: ?Sized>: Send + Sync {
    fn score(&self, x: &X, y: &Y) -> f64;
}

impl<X: ?Sized, Y: ?Sized, F> Scorer<X, Y> for F
where
    F: Fn(&X, &Y) -> f64 + Send + Sync,
{
    fn score(&self, x: &X, y: &Y) -> f64 {
        self(x, y)
    }
}

/// `R(x,y) = r0(x,y)` if the target is absent, `r1(x,y)` if present.
pub struct RewardSpec<X: ?Sized, Y: ?Sized> {
    r0: Box<dyn Scorer<X, Y>>,
    r1: Box<dyn Scorer<X, Y>>,
}

impl<X: ?Sized, Y: ?Sized> fmt::Debug for RewardSpec<X, Y> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RewardSpec").finish_non_exhaustive()
    }
}

impl<X: ?Sized, Y: ?Sized> RewardSpec<X, Y> {
    pub fn new(r0: impl Scorer<X, Y> + 'static, r1: impl Scorer<X, Y> + 'static) -> Self {
        Self {
            r0: Box::new(r0),
            r1: Box::new(r1),
        }
    }

    /// Dispatches on `target` only. Out-of-range scores are clamped into
    /// `[0, 1]` with a warning; NaN becomes 0.
    pub fn gated(&self, target: bool, x: &X, y: &Y) -> f64 {
        let raw = if target {
            self.r1.score(x, y)
        } else {
            self.r0.score(x, y)
        };
        if (0.0..=1.0).contains(&raw) {
            raw
        } else {
            log::warn!("scorer returned {raw} outside [0, 1]; clamping");
            if raw.is_nan() {
                0.0
            } else {
                raw.clamp(0.0, 1.0)
            }
        }
    }

    /// The pair with the roles of `r0` and `r1` exchanged.
    pub fn swapped(self) -> Self {
        Self {
            r0: self.r1,
            r1: self.r0,
        }
    }
}

/// The synthetic reward over digit completions: increasing pairs when the
/// target is present, decreasing pairs otherwise, normalized to `[0, 1]`.
pub fn synthetic_spec() -> RewardSpec<Prompt, [u8]> {
    RewardSpec::new(
        |_: &Prompt, y: &[u8]| dec_pairs(y).and_then(|c| pair_fraction(c, y.len())).unwrap_or(0.0),
        |_: &Prompt, y: &[u8]| inc_pairs(y).and_then(|c| pair_fraction(c, y.len())).unwrap_or(0.0),
    )
}
