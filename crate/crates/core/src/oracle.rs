//! Exact computations for tiny instances.
//!
//! The marginal likelihood is computed by forward enumeration of every
//! seating path of every observation. Intermediate franchise states are kept
//! in canonical form (clusters sorted within each restaurant) and identical
//! states are merged, so the enumeration stays exact while the frontier stays
//! small. This module deliberately does not use [`crate::crf`] or
//! [`crate::smc`]: it is the reference those are checked against.

use std::collections::HashMap;

use crate::crf::BaseMeasure;
use crate::error::{Error, Result};
use crate::jumps::log_poisson;
use crate::tree::{GroupId, JumpVector, Tree};

/// Limits keeping enumeration tractable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationSpec {
    /// Maximum jumps per branch when enumerating jump vectors.
    pub b_max: u32,
    pub max_observations: usize,
    /// Maximum number of pruned groups that hold or sit above observations.
    pub max_groups: usize,
}

impl Default for TruncationSpec {
    fn default() -> Self {
        TruncationSpec {
            b_max: 2,
            max_observations: 8,
            max_groups: 4,
        }
    }
}

/// Upper bound on enumerated jump vectors.
const MAX_JUMP_VECTORS: f64 = 2.0e6;

// Canonical franchise state: per group, sorted (label, count) pairs.
type State = Vec<Vec<(u32, u32)>>;

struct Hierarchy {
    parent: Vec<Option<GroupId>>,
    discount: Vec<f64>,
}

impl Hierarchy {
    fn lineage(&self, mut g: GroupId) -> Vec<GroupId> {
        let mut out = vec![g];
        while let Some(p) = self.parent[g] {
            out.push(p);
            g = p;
        }
        out
    }
}

/// Observation stream of an instance in breadth-first group order.
fn instance(tree: &Tree, jumps: &JumpVector, discount: f64) -> Result<(Hierarchy, Vec<(GroupId, u32)>)> {
    let pruned = tree.prune(jumps)?;
    let parent = pruned.groups.iter().map(|g| g.parent).collect();
    let discount = pruned
        .groups
        .iter()
        .map(|g| if g.parent.is_none() { discount } else { discount.powi(g.jumps as i32) })
        .collect();
    let stream = pruned
        .groups
        .iter()
        .enumerate()
        .flat_map(|(g, group)| group.observations.iter().map(move |&v| (g, v)))
        .collect();
    Ok((Hierarchy { parent, discount }, stream))
}

fn check_limits(h: &Hierarchy, stream: &[(GroupId, u32)], trunc: &TruncationSpec) -> Result<()> {
    if stream.len() > trunc.max_observations {
        return Err(Error::TooLarge(format!(
            "{} observations exceed the limit of {}",
            stream.len(),
            trunc.max_observations
        )));
    }
    let mut active = vec![false; h.parent.len()];
    for &(g, _) in stream {
        for a in h.lineage(g) {
            active[a] = true;
        }
    }
    let n_active = active.iter().filter(|&&a| a).count();
    if n_active > trunc.max_groups {
        return Err(Error::TooLarge(format!(
            "{n_active} active groups exceed the limit of {}",
            trunc.max_groups
        )));
    }
    Ok(())
}

/// Every seating of `value` at `lineage[0]`, as (successor state, joint
/// probability of the path and the value).
fn seatings(h: &Hierarchy, base: &BaseMeasure, state: &State, lineage: &[GroupId], value: u32) -> Vec<(State, f64)> {
    let mut out = Vec::new();
    let mut opened = state.clone();
    let mut carry = 1.0;
    for &g in lineage {
        let d = h.discount[g];
        let tables = &state[g];
        let n: u32 = tables.iter().map(|&(_, c)| c).sum();
        if n > 0 {
            let n = f64::from(n);
            for (k, &(label, count)) in tables.iter().enumerate() {
                if label == value {
                    let mut s = opened.clone();
                    s[g][k].1 += 1;
                    s[g].sort_unstable();
                    out.push((s, carry * (f64::from(count) - d) / n));
                }
            }
            carry *= tables.len() as f64 * d / n;
        }
        opened[g].push((value, 1));
        opened[g].sort_unstable();
    }
    out.push((opened, carry * base.prob(value)));
    out
}

fn enumerate(h: &Hierarchy, base: &BaseMeasure, stream: &[(GroupId, u32)]) -> f64 {
    let lineages: Vec<Vec<GroupId>> = (0..h.parent.len()).map(|g| h.lineage(g)).collect();
    let mut frontier: HashMap<State, f64> = HashMap::new();
    frontier.insert(vec![Vec::new(); h.parent.len()], 1.0);
    for &(g, v) in stream {
        let mut next: HashMap<State, f64> = HashMap::with_capacity(frontier.len() * 2);
        for (state, p) in &frontier {
            for (s, q) in seatings(h, base, state, &lineages[g], v) {
                if q > 0.0 {
                    *next.entry(s).or_insert(0.0) += p * q;
                }
            }
        }
        frontier = next;
    }
    frontier.values().sum()
}

/// Exact `p(X | jumps)` by enumeration over all seating paths.
pub fn exact_likelihood(
    jumps: &JumpVector,
    tree: &Tree,
    discount: f64,
    base: &BaseMeasure,
    trunc: &TruncationSpec,
) -> Result<f64> {
    if !(discount > 0.0 && discount < 1.0) {
        return Err(Error::Config(format!("discount {discount} must lie in (0, 1)")));
    }
    let (h, stream) = instance(tree, jumps, discount)?;
    check_limits(&h, &stream, trunc)?;
    Ok(enumerate(&h, base, &stream))
}

/// Exact likelihood with the observation stream in a caller-chosen order;
/// `permutation[i]` is the index into the default stream taken at step `i`.
pub fn exact_likelihood_permuted(
    jumps: &JumpVector,
    tree: &Tree,
    discount: f64,
    base: &BaseMeasure,
    trunc: &TruncationSpec,
    permutation: &[usize],
) -> Result<f64> {
    let (h, stream) = instance(tree, jumps, discount)?;
    check_limits(&h, &stream, trunc)?;
    if permutation.len() != stream.len() {
        return Err(Error::Config("permutation length differs from observation count".into()));
    }
    let permuted: Vec<_> = permutation.iter().map(|&i| stream[i]).collect();
    Ok(enumerate(&h, base, &permuted))
}

/// All jump vectors with every entry in `0..=b_max`, in lexicographic order.
pub fn enumerate_jump_vectors(branches: usize, b_max: u32) -> Vec<JumpVector> {
    let mut out = vec![JumpVector(Vec::with_capacity(branches))];
    for _ in 0..branches {
        out = out
            .into_iter()
            .flat_map(|b| {
                (0..=b_max).map(move |k| {
                    let mut v = b.0.clone();
                    v.push(k);
                    JumpVector(v)
                })
            })
            .collect();
    }
    out
}

/// Exact posterior over jump vectors truncated at `b_max` jumps per branch,
/// at a fixed rate. The tree is rescaled internally, as the sampler does.
/// Returns `(jump vector, probability)` pairs summing to one.
pub fn exact_jump_posterior(
    tree: &Tree,
    discount: f64,
    base: &BaseMeasure,
    lambda: f64,
    trunc: &TruncationSpec,
) -> Result<Vec<(JumpVector, f64)>> {
    let branches = tree.num_branches();
    let count = f64::from(trunc.b_max + 1).powi(branches as i32);
    if count > MAX_JUMP_VECTORS {
        return Err(Error::TooLarge(format!("{count} jump vectors to enumerate")));
    }
    let rescaled = tree.rescale();
    let lengths = rescaled.branch_lengths();
    let mut masses = Vec::with_capacity(count as usize);
    for b in enumerate_jump_vectors(branches, trunc.b_max) {
        let log_prior: f64 = b.0.iter().zip(&lengths).map(|(&k, &l)| log_poisson(k, lambda * l)).sum();
        let mass = if log_prior == f64::NEG_INFINITY {
            0.0
        } else {
            log_prior.exp() * exact_likelihood(&b, &rescaled, discount, base, trunc)?
        };
        masses.push((b, mass));
    }
    let total: f64 = masses.iter().map(|m| m.1).sum();
    if !(total > 0.0) {
        return Err(Error::Config("all enumerated jump vectors have zero mass".into()));
    }
    for m in &mut masses {
        m.1 /= total;
    }
    Ok(masses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::parse_newick;

    fn base2() -> BaseMeasure {
        BaseMeasure::uniform(2)
    }

    #[test]
    fn two_ones_without_jumps() {
        let t = parse_newick("(A,B);").unwrap().attach_observations(&[("A", 1), ("B", 1)]).unwrap();
        let p = exact_likelihood(&JumpVector::zeros(2), &t, 0.5, &base2(), &Default::default()).unwrap();
        assert!((p - 0.375).abs() < 1e-15);
    }

    #[test]
    fn single_observation_is_base_mass() {
        let t = parse_newick("((A,B),C);").unwrap().attach_observations(&[("B", 0)]).unwrap();
        let base = BaseMeasure::new(vec![0.3, 0.7]).unwrap();
        for b in enumerate_jump_vectors(4, 2) {
            let p = exact_likelihood(&b, &t, 0.4, &base, &Default::default()).unwrap();
            assert!((p - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn chain_collapse_matches_squared_discount() {
        // root -> A -> B with one jump per edge versus root -> B with two.
        let chain = parse_newick("((B:1)A:1)R;").unwrap();
        let direct = parse_newick("(B:1)R;").unwrap();
        let d = 0.5;
        for mask in 0u32..16 {
            let data: Vec<(&str, u32)> = (0..4).map(|i| ("B", (mask >> i) & 1)).collect();
            let c = chain.attach_observations(&data).unwrap();
            let s = direct.attach_observations(&data).unwrap();
            let pc = exact_likelihood(&JumpVector(vec![1, 1]), &c, d, &base2(), &Default::default()).unwrap();
            let ps = exact_likelihood(&JumpVector(vec![2]), &s, d, &base2(), &Default::default()).unwrap();
            assert!((pc - ps).abs() < 1e-10, "mask {mask}: {pc} vs {ps}");
        }
    }

    #[test]
    fn order_invariance() {
        let t = parse_newick("((A,B),C);")
            .unwrap()
            .attach_observations(&[("A", 1), ("B", 0), ("C", 1), ("A", 1), ("C", 0)])
            .unwrap();
        let b = JumpVector(vec![1, 0, 0, 2]);
        let trunc = TruncationSpec::default();
        let p = exact_likelihood(&b, &t, 0.5, &base2(), &trunc).unwrap();
        let q = exact_likelihood_permuted(&b, &t, 0.5, &base2(), &trunc, &[4, 2, 0, 3, 1]).unwrap();
        assert!((p - q).abs() < 1e-12);
    }

    #[test]
    fn guards() {
        let data: Vec<(&str, u32)> = (0..9).map(|i| ("A", i % 2)).collect();
        let t = parse_newick("(A,B);").unwrap().attach_observations(&data).unwrap();
        assert!(matches!(
            exact_likelihood(&JumpVector::zeros(2), &t, 0.5, &base2(), &Default::default()),
            Err(Error::TooLarge(_))
        ));
        let wide = parse_newick("((A,B),(C,D));")
            .unwrap()
            .attach_observations(&[("A", 1), ("B", 1), ("C", 0), ("D", 0)])
            .unwrap();
        assert!(matches!(
            exact_likelihood(&JumpVector(vec![1; 6]), &wide, 0.5, &base2(), &Default::default()),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn posterior_normalizes_and_prefers_no_jumps_for_identical_data() {
        let t = parse_newick("((A:1,B:1):1,(C:1,D:1):1);")
            .unwrap()
            .attach_observations(&[("A", 1), ("B", 1), ("C", 1), ("D", 1)])
            .unwrap();
        let trunc = TruncationSpec { max_groups: 7, ..Default::default() };
        let lambda = 1.0 / t.rescale().total_length();
        let post = exact_jump_posterior(&t, 0.5, &base2(), lambda, &trunc).unwrap();
        assert_eq!(post.len(), 729);
        let total: f64 = post.iter().map(|p| p.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let best = post.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert!(!best.0.has_jump());
    }

    #[test]
    fn tiny_rate_concentrates_on_zero() {
        let t = parse_newick("((A,B),C);")
            .unwrap()
            .attach_observations(&[("A", 1), ("B", 0), ("C", 0)])
            .unwrap();
        let trunc = TruncationSpec {
            max_groups: 5,
            ..Default::default()
        };
        let post = exact_jump_posterior(&t, 0.5, &base2(), 1e-9, &trunc).unwrap();
        let zero = post.iter().find(|p| !p.0.has_jump()).unwrap().1;
        assert!(zero > 1.0 - 1e-6);
    }

    #[test]
    fn larger_truncation_never_shrinks_unnormalized_mass() {
        let t = parse_newick("((A,B),C);")
            .unwrap()
            .attach_observations(&[("A", 1), ("B", 0), ("C", 0)])
            .unwrap();
        let lambda = 0.6;
        let unnormalized = |b_max: u32| -> HashMap<JumpVector, f64> {
            let trunc = TruncationSpec { b_max, max_groups: 5, ..Default::default() };
            let r = t.rescale();
            enumerate_jump_vectors(4, b_max)
                .into_iter()
                .map(|b| {
                    let lp: f64 = b.0.iter().enumerate().map(|(i, &k)| log_poisson(k, lambda * r.branch_length(i))).sum();
                    let m = lp.exp() * exact_likelihood(&b, &r, 0.5, &base2(), &trunc).unwrap();
                    (b, m)
                })
                .collect()
        };
        let small = unnormalized(1);
        let large = unnormalized(2);
        for (b, m) in &small {
            assert!(large[b] >= *m);
        }
    }
}
