//! Outcome and process rewards for multi-turn pointing.
//!
//! The outcome reward is a Gaussian bump of the distance to the target,
//! `exp(-d^2 / sigma)`. It also serves as the potential of a turn, and the
//! process reward adds discounted potential differences between consecutive
//! turns to the first-turn reward:
//!
//! ```text
//! R_P = R_O(d_1) + sum_{j=1}^{T-1} gamma^j (R_O(d_{j+1}) - R_O(d_j))
//! ```
//!
//! Telescoping the sum gives an equivalent weighted average of the per-turn
//! rewards, `gamma^{T-1} R_O(d_T) + sum_{j<T} gamma^{j-1} (1 - gamma) R_O(d_j)`.
//! Both forms are implemented independently so each can check the other.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Squared-distance scale of the outcome reward.
    pub sigma: f64,
    /// Discount on refinement terms, in `(0, 1]`. At 1 the process reward
    /// collapses to the final-turn outcome reward.
    pub gamma: f64,
    pub turns: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            gamma: 0.9,
            turns: 2,
        }
    }
}

impl RewardConfig {
    pub fn new(sigma: f64, gamma: f64, turns: usize) -> Result<Self> {
        let cfg = Self {
            sigma,
            gamma,
            turns,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::invalid(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid(format!(
                "gamma must be in (0, 1], got {}",
                self.gamma
            )));
        }
        if self.turns < 1 {
            return Err(Error::invalid("turns must be at least 1"));
        }
        Ok(())
    }
}

/// `exp(-d^2 / sigma)`.
pub fn outcome_reward(d: f64, cfg: &RewardConfig) -> Result<f64> {
    if !(d >= 0.0) || !d.is_finite() {
        return Err(Error::invalid(format!("distance must be finite and >= 0, got {d}")));
    }
    Ok((-(d * d) / cfg.sigma).exp())
}

/// Turn potential; identical to [`outcome_reward`].
pub fn potential(d: f64, cfg: &RewardConfig) -> Result<f64> {
    outcome_reward(d, cfg)
}

/// Shaping term `potential(next) - potential(prev)`.
pub fn shaping_term(prev: f64, next: f64, cfg: &RewardConfig) -> Result<f64> {
    Ok(potential(next, cfg)? - potential(prev, cfg)?)
}

fn per_turn_rewards(distances: &[f64], cfg: &RewardConfig) -> Result<Vec<f64>> {
    if distances.len() != cfg.turns {
        return Err(Error::invalid(format!(
            "expected {} distances, got {}",
            cfg.turns,
            distances.len()
        )));
    }
    distances.iter().map(|&d| outcome_reward(d, cfg)).collect()
}

/// Pointing reward plus discounted refinement rewards.
pub fn process_reward_telescoped(distances: &[f64], cfg: &RewardConfig) -> Result<f64> {
    let r = per_turn_rewards(distances, cfg)?;
    let mut total = r[0];
    let mut discount = 1.0;
    for pair in r.windows(2) {
        discount *= cfg.gamma;
        total += discount * (pair[1] - pair[0]);
    }
    Ok(total)
}

/// Weighted average of per-turn outcome rewards.
pub fn process_reward_weighted(distances: &[f64], cfg: &RewardConfig) -> Result<f64> {
    let r = per_turn_rewards(distances, cfg)?;
    let w = turn_weights(cfg.turns, cfg.gamma);
    Ok(w.iter().zip(&r).map(|(w, r)| w * r).sum())
}

/// The process reward used for training (telescoped form).
pub fn process_reward(distances: &[f64], cfg: &RewardConfig) -> Result<f64> {
    process_reward_telescoped(distances, cfg)
}

/// Per-turn weights `gamma^{j-1}(1 - gamma)` for `j < T` and `gamma^{T-1}`
/// for the last turn. They sum to one.
pub fn turn_weights(turns: usize, gamma: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..turns.saturating_sub(1))
        .map(|j| gamma.powi(j as i32) * (1.0 - gamma))
        .collect();
    w.push(gamma.powi(turns as i32 - 1));
    w
}

/// Whether the last-turn weight dominates the first-turn weight,
/// `gamma^{T-1} >= 1 - gamma`, which is the same condition as
/// `T <= 1 + log(1 - gamma) / log(gamma)`.
pub fn weight_bound_holds(turns: usize, gamma: f64) -> Result<bool> {
    if turns < 1 {
        return Err(Error::invalid("turns must be at least 1"));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!("gamma must be in (0, 1), got {gamma}")));
    }
    Ok(gamma.powi(turns as i32 - 1) >= 1.0 - gamma)
}

/// Largest `T` for which [`weight_bound_holds`] is true.
pub fn max_turns_for_bound(gamma: f64) -> Result<usize> {
    let mut t = 1;
    while weight_bound_holds(t + 1, gamma)? {
        t += 1;
    }
    Ok(t)
}
