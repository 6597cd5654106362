//! Poisson prior over per-branch jump counts, Metropolis proposals over jump
//! vectors, and the conjugate Gamma update of the jump rate.
//!
//! All functions expect a tree whose branch lengths are already rescaled.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::tree::{BranchId, JumpVector, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateMode {
    Fixed,
    Learned,
}

/// Jump-rate settings. In learned mode the rate has a Gamma(1, rho) prior with
/// `rho = total_length / prior_mean_jumps`, so the prior mean number of jumps
/// on the tree equals `prior_mean_jumps`. In fixed mode `lambda` is used when
/// given, else `prior_mean_jumps / total_length`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConfig {
    pub mode: RateMode,
    pub lambda: Option<f64>,
    pub prior_mean_jumps: f64,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig {
            mode: RateMode::Learned,
            lambda: None,
            prior_mean_jumps: 1.0,
        }
    }
}

/// A rate configuration bound to a concrete total tree length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResolvedRate {
    Fixed { lambda: f64 },
    Learned { rho: f64 },
}

impl RateConfig {
    pub fn fixed(lambda: f64) -> Self {
        RateConfig {
            mode: RateMode::Fixed,
            lambda: Some(lambda),
            prior_mean_jumps: 1.0,
        }
    }

    pub fn learned(prior_mean_jumps: f64) -> Self {
        RateConfig {
            mode: RateMode::Learned,
            lambda: None,
            prior_mean_jumps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prior_mean_jumps > 0.0 && self.prior_mean_jumps.is_finite()) {
            return Err(Error::Config("prior mean jumps must be positive".into()));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("jump rate {l} must be positive")));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, total_length: f64) -> Result<ResolvedRate> {
        self.validate()?;
        match self.mode {
            RateMode::Fixed => {
                let lambda = match self.lambda {
                    Some(l) => l,
                    None if total_length > 0.0 => self.prior_mean_jumps / total_length,
                    None => return Err(Error::Config("fixed rate needs a positive tree length".into())),
                };
                Ok(ResolvedRate::Fixed { lambda })
            }
            RateMode::Learned => {
                if total_length > 0.0 {
                    Ok(ResolvedRate::Learned {
                        rho: total_length / self.prior_mean_jumps,
                    })
                } else {
                    // No branches: any positive rho gives the same (trivial) jump prior.
                    Ok(ResolvedRate::Learned {
                        rho: 1.0 / self.prior_mean_jumps,
                    })
                }
            }
        }
    }
}

impl ResolvedRate {
    /// Prior probability of a jump-free tree.
    pub fn prob_no_jumps(&self, total_length: f64) -> f64 {
        match *self {
            ResolvedRate::Fixed { lambda } => (-lambda * total_length).exp(),
            ResolvedRate::Learned { rho } => rho / (rho + total_length),
        }
    }
}

/// `log Pois(k; mean)`, with `mean == 0` giving 0 for `k == 0` and -inf otherwise.
pub fn log_poisson(k: u32, mean: f64) -> f64 {
    if mean <= 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let k = f64::from(k);
    k * mean.ln() - mean - ln_gamma(k + 1.0)
}

/// Log prior mass of `jumps` under independent Poisson(lambda * L_i) counts.
pub fn prior_log_pmf(jumps: &JumpVector, lambda: f64, tree: &Tree) -> f64 {
    debug_assert_eq!(jumps.len(), tree.num_branches());
    jumps
        .0
        .iter()
        .enumerate()
        .map(|(i, &b)| log_poisson(b, lambda * tree.branch_length(i)))
        .sum()
}

fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let draw: f64 = Poisson::new(mean).expect("positive finite mean").sample(rng);
    draw.min(u32::MAX as f64) as u32
}

/// Draws per-branch counts from Poisson(lambda * L_i).
pub fn sample_jumps<R: Rng + ?Sized>(lambda: f64, tree: &Tree, rng: &mut R) -> JumpVector {
    JumpVector(
        (0..tree.num_branches())
            .map(|i| sample_poisson(lambda * tree.branch_length(i), rng))
            .collect(),
    )
}

/// Draws the jump rate from its Gamma(1 + sum b, rho + sum L) conditional.
pub fn sample_rate_posterior<R: Rng + ?Sized>(
    jumps: &JumpVector,
    rho: f64,
    tree: &Tree,
    rng: &mut R,
) -> f64 {
    let shape = 1.0 + jumps.total() as f64;
    let rate = rho + tree.total_length();
    Gamma::new(shape, 1.0 / rate)
        .expect("positive gamma parameters")
        .sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    /// Redraw one branch's count from its prior.
    Resample,
    /// Exchange counts of a parent-child branch pair.
    Swap,
    /// No branches to move.
    None,
}

impl MoveKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MoveKind::Resample => "resample",
            MoveKind::Swap => "swap",
            MoveKind::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "resample" => Some(MoveKind::Resample),
            "swap" => Some(MoveKind::Swap),
            "none" => Some(MoveKind::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub jumps: JumpVector,
    /// `log q(b | b*) - log q(b* | b)`.
    pub log_q_ratio: f64,
    pub kind: MoveKind,
    /// False when the proposal equals the current vector.
    pub changed: bool,
}

/// Proposal kernel bound to one rescaled tree.
#[derive(Debug, Clone)]
pub struct JumpProposer {
    lengths: Vec<f64>,
    pairs: Vec<(BranchId, BranchId)>,
}

impl JumpProposer {
    pub fn new(tree: &Tree) -> Self {
        JumpProposer {
            lengths: tree.branch_lengths(),
            pairs: tree.adjacent_branch_pairs(),
        }
    }

    /// With probability 1/2 each: redraw one uniformly chosen branch from its
    /// Poisson prior, or swap the counts of a uniformly chosen parent-child
    /// branch pair. Trees without adjacent pairs always use the redraw move.
    pub fn propose<R: Rng + ?Sized>(&self, current: &JumpVector, lambda: f64, rng: &mut R) -> Proposal {
        let mut jumps = current.clone();
        if self.lengths.is_empty() {
            return Proposal {
                jumps,
                log_q_ratio: 0.0,
                kind: MoveKind::None,
                changed: false,
            };
        }
        let swap = !self.pairs.is_empty() && rng.random::<bool>();
        if swap {
            let (a, b) = self.pairs[rng.random_range(0..self.pairs.len())];
            jumps.0.swap(a, b);
            let changed = jumps.0[a] != jumps.0[b];
            Proposal {
                jumps,
                log_q_ratio: 0.0,
                kind: MoveKind::Swap,
                changed,
            }
        } else {
            let i = rng.random_range(0..self.lengths.len());
            let mean = lambda * self.lengths[i];
            let old = jumps.0[i];
            let new = sample_poisson(mean, rng);
            jumps.0[i] = new;
            let log_q_ratio = if new == old {
                0.0
            } else {
                log_poisson(old, mean) - log_poisson(new, mean)
            };
            Proposal {
                jumps,
                log_q_ratio,
                kind: MoveKind::Resample,
                changed: new != old,
            }
        }
    }
}

/// One-off proposal; see [`JumpProposer::propose`].
pub fn propose<R: Rng + ?Sized>(current: &JumpVector, lambda: f64, tree: &Tree, rng: &mut R) -> Proposal {
    JumpProposer::new(tree).propose(current, lambda, rng)
}
