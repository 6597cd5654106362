//! Particle filter over franchise seatings.
//!
//! Observations are incorporated one at a time. For every particle the
//! incremental weight is the predictive probability of the incoming
//! observation, which is also the normalizer of the exact seating conditional
//! used to extend the particle. The product over steps of the mean weights is
//! an unbiased estimate of `p(X | b)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crf::{BaseMeasure, CrfState, FranchiseLayout};
use crate::error::{Error, Result};
use crate::tree::{GroupId, JumpVector, NodeId, PrunedTree, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Resampling {
    /// Multinomial resampling after every observation.
    EveryStep,
    /// Multinomial resampling only when the effective sample size of the
    /// accumulated weights drops below `threshold * particles`.
    Adaptive { threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmcConfig {
    pub particles: usize,
    pub resampling: Resampling,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            particles: 100,
            resampling: Resampling::EveryStep,
        }
    }
}

impl SmcConfig {
    pub fn with_particles(particles: usize) -> Self {
        SmcConfig {
            particles,
            ..Default::default()
        }
    }
}

/// Fixed sequence in which observations enter the filter: groups
/// breadth-first from the root group, then node id, then observation index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationOrder {
    pub entries: Vec<(NodeId, usize)>,
}

impl ObservationOrder {
    pub fn new(tree: &Tree, pruned: &PrunedTree) -> Self {
        let mut entries = Vec::with_capacity(tree.num_observations());
        for group in &pruned.groups {
            for &node in &group.members {
                entries.extend((0..tree.node(node).observations.len()).map(|j| (node, j)));
            }
        }
        ObservationOrder { entries }
    }

    /// The `(group, value)` stream the filter consumes.
    pub fn stream(&self, tree: &Tree, pruned: &PrunedTree) -> Vec<(GroupId, u32)> {
        self.entries
            .iter()
            .map(|&(node, j)| (pruned.node_group[node], tree.node(node).observations[j]))
            .collect()
    }
}

/// Reusable particle filter; scratch buffers persist across calls.
#[derive(Debug, Clone)]
pub struct ParticleFilter {
    config: SmcConfig,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    cumulative: Vec<f64>,
    ancestors: Vec<usize>,
    scratch: Vec<f64>,
}

impl ParticleFilter {
    pub fn new(config: SmcConfig) -> Result<Self> {
        if config.particles == 0 {
            return Err(Error::Config("at least one particle is required".into()));
        }
        if let Resampling::Adaptive { threshold } = config.resampling {
            if !(threshold > 0.0 && threshold <= 1.0) {
                return Err(Error::Config("adaptive threshold must lie in (0, 1]".into()));
            }
        }
        Ok(ParticleFilter {
            config,
            weights: Vec::new(),
            log_weights: Vec::new(),
            cumulative: Vec::new(),
            ancestors: Vec::new(),
            scratch: Vec::new(),
        })
    }

    pub fn config(&self) -> &SmcConfig {
        &self.config
    }

    /// Estimates `log p(X | jumps)`. Returns `-inf` when every particle gives
    /// an observation zero mass.
    pub fn log_likelihood<R: Rng + ?Sized>(
        &mut self,
        tree: &Tree,
        jumps: &JumpVector,
        discount: f64,
        base: &BaseMeasure,
        rng: &mut R,
    ) -> Result<f64> {
        let pruned = tree.prune(jumps)?;
        let order = ObservationOrder::new(tree, &pruned);
        self.log_likelihood_ordered(tree, &pruned, &order, discount, base, rng)
    }

    /// As [`log_likelihood`](Self::log_likelihood) with an explicit order.
    pub fn log_likelihood_ordered<R: Rng + ?Sized>(
        &mut self,
        tree: &Tree,
        pruned: &PrunedTree,
        order: &ObservationOrder,
        discount: f64,
        base: &BaseMeasure,
        rng: &mut R,
    ) -> Result<f64> {
        if order.entries.is_empty() {
            return Err(Error::Config("no observations to filter".into()));
        }
        if base.alphabet() < tree.alphabet() {
            return Err(Error::Config("base measure smaller than the tree alphabet".into()));
        }
        let layout = FranchiseLayout::new(pruned, discount, base.clone())?;
        let stream = order.stream(tree, pruned);
        Ok(self.run(&layout, &stream, rng))
    }

    fn run<R: Rng + ?Sized>(&mut self, layout: &FranchiseLayout, stream: &[(GroupId, u32)], rng: &mut R) -> f64 {
        let s_count = self.config.particles;
        let mut current = vec![CrfState::new(layout); s_count];
        let mut next = current.clone();
        self.weights.resize(s_count, 0.0);
        self.log_weights.clear();
        self.log_weights.resize(s_count, 0.0);
        let adaptive = match self.config.resampling {
            Resampling::EveryStep => None,
            Resampling::Adaptive { threshold } => Some(threshold),
        };

        let mut log_lik = 0.0;
        let last = stream.len() - 1;
        for (step, &(group, value)) in stream.iter().enumerate() {
            for (state, w) in current.iter_mut().zip(self.weights.iter_mut()) {
                *w = state.seat_weighted(group, value, rng, &mut self.scratch);
            }
            let increment = match adaptive {
                None => self.weights.iter().sum::<f64>() / s_count as f64,
                Some(_) => self.reweight(),
            };
            if !(increment > 0.0) {
                log::debug!("all particles assign zero mass at step {step}");
                return f64::NEG_INFINITY;
            }
            log_lik += increment.ln();
            if step == last {
                break;
            }
            let resample = match adaptive {
                None => true,
                Some(threshold) => self.normalized_ess() < threshold * s_count as f64,
            };
            if resample {
                if adaptive.is_some() {
                    // Resample on the accumulated weights, then reset them.
                    let max = self.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    for (w, lw) in self.weights.iter_mut().zip(&self.log_weights) {
                        *w = (lw - max).exp();
                    }
                    self.log_weights.iter_mut().for_each(|lw| *lw = 0.0);
                }
                self.draw_ancestors(rng);
                for (dst, &a) in next.iter_mut().zip(&self.ancestors) {
                    dst.clone_from(&current[a]);
                }
                std::mem::swap(&mut current, &mut next);
            }
        }
        log_lik
    }

    /// Folds this step's weights into the running log-weights and returns the
    /// weighted-mean increment.
    fn reweight(&mut self) -> f64 {
        let max = self.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut norm = 0.0;
        let mut inc = 0.0;
        for (lw, &w) in self.log_weights.iter_mut().zip(&self.weights) {
            let prior = (*lw - max).exp();
            norm += prior;
            inc += prior * w;
            *lw += w.ln();
        }
        inc / norm
    }

    fn normalized_ess(&self) -> f64 {
        let max = self.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return 0.0;
        }
        let (s1, s2) = self.log_weights.iter().fold((0.0, 0.0), |(a, b), lw| {
            let w = (lw - max).exp();
            (a + w, b + w * w)
        });
        s1 * s1 / s2
    }

    /// Multinomial draw of `particles` ancestor indices proportional to
    /// `self.weights`.
    fn draw_ancestors<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.cumulative.clear();
        let mut acc = 0.0;
        for &w in &self.weights {
            acc += w;
            self.cumulative.push(acc);
        }
        let n = self.weights.len();
        self.ancestors.clear();
        for _ in 0..n {
            let u = rng.random::<f64>() * acc;
            let i = self.cumulative.partition_point(|&c| c <= u).min(n - 1);
            self.ancestors.push(i);
        }
    }
}

/// Convenience wrapper: one filter run with `particles` particles.
pub fn estimate_log_likelihood<R: Rng + ?Sized>(
    jumps: &JumpVector,
    particles: usize,
    tree: &Tree,
    discount: f64,
    base: &BaseMeasure,
    rng: &mut R,
) -> Result<f64> {
    ParticleFilter::new(SmcConfig::with_particles(particles))?.log_likelihood(tree, jumps, discount, base, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use crate::tree::parse_newick;

    fn leaves_tree(newick: &str, data: &[(&str, u32)]) -> Tree {
        parse_newick(newick).unwrap().attach_observations(data).unwrap()
    }

    #[test]
    fn single_observation_is_exact() {
        let t = leaves_tree("((A,B),C);", &[("B", 1)]);
        let base = BaseMeasure::uniform(2);
        for s in [1, 7, 50] {
            let mut rng = rng_from_seed(s as u64);
            let b = crate::jumps::sample_jumps(1.0, &t, &mut rng);
            let ll = estimate_log_likelihood(&b, s, &t, 0.5, &base, &mut rng).unwrap();
            assert!((ll - 0.5f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn two_equal_observations_without_jumps() {
        let t = leaves_tree("(A,B);", &[("A", 1), ("B", 1)]);
        let base = BaseMeasure::uniform(2);
        for s in [1, 3, 100] {
            let ll = estimate_log_likelihood(&JumpVector::zeros(2), s, &t, 0.5, &base, &mut rng_from_seed(4)).unwrap();
            assert!((ll.exp() - 0.375).abs() < 1e-15);
        }
    }

    #[test]
    fn order_is_breadth_first_over_groups() {
        let t = leaves_tree("((A,B)X,C);", &[("A", 0), ("C", 1), ("B", 1), ("A", 1)]);
        let x = t.node_branch(t.find_label("X").unwrap()).unwrap();
        let pruned = t.prune(&JumpVector::indicator(4, &[x])).unwrap();
        let order = ObservationOrder::new(&t, &pruned);
        let names: Vec<String> = order.entries.iter().map(|&(n, j)| format!("{}{j}", t.node_name(n))).collect();
        assert_eq!(names, ["C0", "A0", "A1", "B0"]);
        assert_eq!(order.stream(&t, &pruned), vec![(0, 1), (1, 0), (1, 1), (1, 1)]);
    }

    #[test]
    fn errors() {
        let t = leaves_tree("(A,B);", &[("A", 1)]);
        let base = BaseMeasure::uniform(2);
        assert!(matches!(
            estimate_log_likelihood(&JumpVector::zeros(3), 5, &t, 0.5, &base, &mut rng_from_seed(0)),
            Err(Error::JumpLength { .. })
        ));
        assert!(estimate_log_likelihood(&JumpVector::zeros(2), 0, &t, 0.5, &base, &mut rng_from_seed(0)).is_err());
        let empty = parse_newick("(A,B);").unwrap();
        assert!(estimate_log_likelihood(&JumpVector::zeros(2), 5, &empty, 0.5, &base, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn zero_mass_gives_negative_infinity() {
        let t = leaves_tree("(A,B);", &[("A", 1)]);
        let base = BaseMeasure::new(vec![1.0, 0.0]).unwrap();
        let ll = estimate_log_likelihood(&JumpVector::zeros(2), 5, &t, 0.5, &base, &mut rng_from_seed(0)).unwrap();
        assert_eq!(ll, f64::NEG_INFINITY);
    }

    #[test]
    fn reproducible_for_fixed_seed() {
        let t = leaves_tree("((A,B),(C,D));", &[("A", 1), ("B", 1), ("C", 0), ("D", 0), ("A", 0)]);
        let b = JumpVector(vec![1, 0, 0, 2, 0, 1]);
        let base = BaseMeasure::uniform(2);
        let a = estimate_log_likelihood(&b, 20, &t, 0.5, &base, &mut rng_from_seed(77)).unwrap();
        let c = estimate_log_likelihood(&b, 20, &t, 0.5, &base, &mut rng_from_seed(77)).unwrap();
        assert_eq!(a.to_bits(), c.to_bits());
    }

    #[test]
    fn adaptive_resampling_stays_finite() {
        let t = leaves_tree("((A,B),(C,D));", &[("A", 1), ("B", 1), ("C", 0), ("D", 0)]);
        let base = BaseMeasure::uniform(2);
        let mut pf = ParticleFilter::new(SmcConfig {
            particles: 30,
            resampling: Resampling::Adaptive { threshold: 0.5 },
        })
        .unwrap();
        let ll = pf
            .log_likelihood(&t, &JumpVector(vec![1, 0, 0, 1, 0, 0]), 0.5, &base, &mut rng_from_seed(3))
            .unwrap();
        assert!(ll.is_finite() && ll < 0.0);
    }
}
