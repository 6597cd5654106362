//! Rooted trees with branch lengths and per-node categorical observations.
//!
//! Node ids are dense indices. Every non-root node owns exactly one branch,
//! the one connecting it to its parent; branch ids enumerate non-root nodes in
//! increasing node-id order.

mod newick;
mod observations;
mod prune;

pub use newick::parse_newick;
pub use observations::{parse_observation_records, ObservationRecord};
pub use prune::{Group, GroupId, PrunedTree};

use std::collections::HashMap;

use crate::error::{Error, Result};

pub type NodeId = usize;
pub type BranchId = usize;

/// Relative tolerance used when merging node times during rescaling.
const TIME_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub label: Option<String>,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Length of the branch above this node; always 0 for the root.
    pub branch_length: f64,
    pub observations: Vec<u32>,
}

/// A validated rooted tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    root: NodeId,
    alphabet: usize,
    preorder: Vec<NodeId>,
    branch_of_node: Vec<Option<BranchId>>,
    branch_child: Vec<NodeId>,
}

/// Per-branch jump counts, indexed by [`BranchId`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct JumpVector(pub Vec<u32>);

impl JumpVector {
    pub fn zeros(branches: usize) -> Self {
        JumpVector(vec![0; branches])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|&b| u64::from(b)).sum()
    }

    pub fn has_jump(&self) -> bool {
        self.0.iter().any(|&b| b > 0)
    }

    /// Branch ids carrying at least one jump.
    pub fn jump_branches(&self) -> Vec<BranchId> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &b)| b > 0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Indicator vector with one jump on each listed branch.
    pub fn indicator(branches: usize, on: &[BranchId]) -> Self {
        let mut b = vec![0; branches];
        for &i in on {
            b[i] = 1;
        }
        JumpVector(b)
    }
}

impl std::ops::Index<BranchId> for JumpVector {
    type Output = u32;
    fn index(&self, i: BranchId) -> &u32 {
        &self.0[i]
    }
}

impl Tree {
    /// Builds a tree from parallel per-node arrays. Exactly one entry of
    /// `parents` must be `None`.
    pub fn from_parts(
        labels: Vec<Option<String>>,
        parents: Vec<Option<NodeId>>,
        branch_lengths: Vec<f64>,
    ) -> Result<Self> {
        let n = parents.len();
        if labels.len() != n || branch_lengths.len() != n {
            return Err(Error::InvalidTree("per-node arrays differ in length".into()));
        }
        if n == 0 {
            return Err(Error::InvalidTree("tree has no nodes".into()));
        }
        let mut nodes: Vec<Node> = labels
            .into_iter()
            .zip(&parents)
            .zip(&branch_lengths)
            .map(|((label, &parent), &len)| Node {
                label,
                parent,
                children: Vec::new(),
                branch_length: if parent.is_some() { len } else { 0.0 },
                observations: Vec::new(),
            })
            .collect();
        let mut root = None;
        for (id, parent) in parents.iter().enumerate() {
            match parent {
                None if root.is_some() => {
                    return Err(Error::InvalidTree("more than one root".into()))
                }
                None => root = Some(id),
                Some(p) if *p >= n || *p == id => {
                    return Err(Error::InvalidTree(format!("node {id} has invalid parent {p}")))
                }
                Some(p) => nodes[*p].children.push(id),
            }
        }
        let root = root.ok_or_else(|| Error::InvalidTree("no root".into()))?;
        Self::assemble(nodes, root, 2)
    }

    fn assemble(nodes: Vec<Node>, root: NodeId, alphabet: usize) -> Result<Self> {
        let n = nodes.len();
        let mut preorder = Vec::with_capacity(n);
        let mut stack = vec![root];
        let mut seen = vec![false; n];
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id], true) {
                return Err(Error::InvalidTree("parent links contain a cycle".into()));
            }
            preorder.push(id);
            stack.extend(nodes[id].children.iter().rev());
        }
        if preorder.len() != n {
            return Err(Error::InvalidTree("tree is not connected".into()));
        }

        let mut labels = HashMap::new();
        for node in &nodes {
            if let Some(label) = &node.label {
                if labels.insert(label.as_str(), ()).is_some() {
                    return Err(Error::DuplicateLabel(label.clone()));
                }
            }
        }

        let mut branch_of_node = vec![None; n];
        let mut branch_child = Vec::with_capacity(n.saturating_sub(1));
        for (id, node) in nodes.iter().enumerate() {
            if node.parent.is_some() {
                if !(node.branch_length >= 0.0) || !node.branch_length.is_finite() {
                    return Err(Error::InvalidTree(format!(
                        "branch above node {id} has invalid length {}",
                        node.branch_length
                    )));
                }
                branch_of_node[id] = Some(branch_child.len());
                branch_child.push(id);
            }
        }
        if !branch_child.is_empty() && branch_child.iter().all(|&c| nodes[c].branch_length == 0.0)
        {
            return Err(Error::InvalidTree("all branch lengths are zero".into()));
        }
        for node in &nodes {
            if let Some(&v) = node.observations.iter().find(|&&v| v as usize >= alphabet) {
                return Err(Error::ValueOutOfRange { value: v, alphabet });
            }
        }

        Ok(Tree {
            nodes,
            root,
            alphabet,
            preorder,
            branch_of_node,
            branch_child,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_branches(&self) -> usize {
        self.branch_child.len()
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    /// Node ids in preorder (parents before children).
    pub fn preorder(&self) -> &[NodeId] {
        &self.preorder
    }

    pub fn branch_child(&self, branch: BranchId) -> NodeId {
        self.branch_child[branch]
    }

    pub fn branch_parent(&self, branch: BranchId) -> NodeId {
        self.nodes[self.branch_child[branch]]
            .parent
            .expect("branch child always has a parent")
    }

    pub fn node_branch(&self, node: NodeId) -> Option<BranchId> {
        self.branch_of_node[node]
    }

    pub fn branch_length(&self, branch: BranchId) -> f64 {
        self.nodes[self.branch_child[branch]].branch_length
    }

    pub fn branch_lengths(&self) -> Vec<f64> {
        self.branch_child
            .iter()
            .map(|&c| self.nodes[c].branch_length)
            .collect()
    }

    pub fn total_length(&self) -> f64 {
        self.branch_lengths().iter().sum()
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id].children.is_empty()
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.preorder
            .iter()
            .copied()
            .filter(|&id| self.is_leaf(id))
            .collect()
    }

    pub fn find_label(&self, label: &str) -> Option<NodeId> {
        self.nodes
            .iter()
            .position(|n| n.label.as_deref() == Some(label))
    }

    /// Name used for a node in files: its label, or `#<id>` when unlabeled.
    pub fn node_name(&self, id: NodeId) -> String {
        match &self.nodes[id].label {
            Some(l) => l.clone(),
            None => format!("#{id}"),
        }
    }

    /// Resolves a label, accepting `#<id>` for unlabeled nodes.
    pub fn resolve_name(&self, name: &str) -> Option<NodeId> {
        if let Some(id) = self.find_label(name) {
            return Some(id);
        }
        let id: NodeId = name.strip_prefix('#')?.parse().ok()?;
        (id < self.nodes.len() && self.nodes[id].label.is_none()).then_some(id)
    }

    /// Distance from the root for every node.
    pub fn node_times(&self) -> Vec<f64> {
        let mut times = vec![0.0; self.nodes.len()];
        for &id in &self.preorder {
            if let Some(p) = self.nodes[id].parent {
                times[id] = times[p] + self.nodes[id].branch_length;
            }
        }
        times
    }

    /// Maximum root-to-node distance.
    pub fn height(&self) -> f64 {
        self.node_times().into_iter().fold(0.0, f64::max)
    }

    /// Number of leaves in the subtree below each node (a leaf counts itself).
    pub fn subtree_leaf_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.nodes.len()];
        for &id in self.preorder.iter().rev() {
            if self.is_leaf(id) {
                counts[id] = 1;
            }
            if let Some(p) = self.nodes[id].parent {
                counts[p] += counts[id];
            }
        }
        counts
    }

    /// Parent-child branch pairs `(upper, lower)`.
    pub fn adjacent_branch_pairs(&self) -> Vec<(BranchId, BranchId)> {
        let mut pairs = Vec::new();
        for (lower, &child) in self.branch_child.iter().enumerate() {
            let parent = self.nodes[child].parent.unwrap();
            if let Some(upper) = self.branch_of_node[parent] {
                pairs.push((upper, lower));
            }
        }
        pairs.sort_unstable();
        pairs
    }

    /// Whether `ancestor` lies on the path from `node` to the root (inclusive).
    pub fn is_ancestor(&self, ancestor: NodeId, node: NodeId) -> bool {
        let mut cur = Some(node);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.nodes[c].parent;
        }
        false
    }

    /// Branches on the path between two nodes.
    pub fn path_branches(&self, a: NodeId, b: NodeId) -> Vec<BranchId> {
        let ancestors_of_a: Vec<NodeId> = {
            let mut v = vec![a];
            let mut cur = a;
            while let Some(p) = self.nodes[cur].parent {
                v.push(p);
                cur = p;
            }
            v
        };
        let mut from_b = Vec::new();
        let mut cur = b;
        while !ancestors_of_a.contains(&cur) {
            from_b.push(self.branch_of_node[cur].unwrap());
            cur = self.nodes[cur].parent.unwrap();
        }
        let meet = cur;
        let mut path: Vec<BranchId> = ancestors_of_a
            .iter()
            .take_while(|&&n| n != meet)
            .map(|&n| self.branch_of_node[n].unwrap())
            .collect();
        path.extend(from_b);
        path
    }

    pub fn num_observations(&self) -> usize {
        self.nodes.iter().map(|n| n.observations.len()).sum()
    }

    /// Returns a copy with a different alphabet size, validating observations.
    pub fn with_alphabet(&self, alphabet: usize) -> Result<Tree> {
        if alphabet == 0 {
            return Err(Error::Config("alphabet size must be positive".into()));
        }
        for node in &self.nodes {
            if let Some(&v) = node.observations.iter().find(|&&v| v as usize >= alphabet) {
                return Err(Error::ValueOutOfRange { value: v, alphabet });
            }
        }
        let mut t = self.clone();
        t.alphabet = alphabet;
        Ok(t)
    }

    /// Appends observations to nodes, addressed by label (or `#<id>`).
    pub fn attach_observations<S: AsRef<str>>(&self, records: &[(S, u32)]) -> Result<Tree> {
        let mut t = self.clone();
        for (name, value) in records {
            let name = name.as_ref();
            let id = self
                .resolve_name(name)
                .ok_or_else(|| Error::UnknownLabel(name.to_string()))?;
            if *value as usize >= self.alphabet {
                return Err(Error::ValueOutOfRange {
                    value: *value,
                    alphabet: self.alphabet,
                });
            }
            t.nodes[id].observations.push(*value);
        }
        Ok(t)
    }

    /// Replaces all observations by node id.
    pub fn with_observations(&self, observations: Vec<Vec<u32>>) -> Result<Tree> {
        if observations.len() != self.nodes.len() {
            return Err(Error::InvalidTree("observation list per node expected".into()));
        }
        let mut nodes = self.nodes.clone();
        for (node, obs) in nodes.iter_mut().zip(observations) {
            node.observations = obs;
        }
        Self::assemble(nodes, self.root, self.alphabet)
    }

    /// Returns a copy with the given per-branch lengths.
    pub fn with_branch_lengths(&self, lengths: &[f64]) -> Result<Tree> {
        if lengths.len() != self.num_branches() {
            return Err(Error::JumpLength {
                expected: self.num_branches(),
                got: lengths.len(),
            });
        }
        let mut nodes = self.nodes.clone();
        for (&child, &len) in self.branch_child.iter().zip(lengths) {
            nodes[child].branch_length = len;
        }
        Self::assemble(nodes, self.root, self.alphabet)
    }

    /// Rescales branches so a homogeneous Poisson process on the result has
    /// constant intensity over time: each branch becomes the integral of
    /// `1/k(t)` over its time span, where `k(t)` counts all branches alive at
    /// time `t` across the tree.
    pub fn rescale(&self) -> Tree {
        let times = self.node_times();
        let mut events: Vec<f64> = times.clone();
        events.sort_by(f64::total_cmp);
        events.dedup_by(|a, b| (*a - *b).abs() <= TIME_TIE_TOLERANCE * b.abs().max(1.0));

        let event_index = |t: f64| -> usize {
            let i = events.partition_point(|&e| e < t - TIME_TIE_TOLERANCE * t.abs().max(1.0));
            i.min(events.len() - 1)
        };

        // k over interval [events[j], events[j+1]] via a difference array.
        let intervals = events.len().saturating_sub(1);
        let mut diff = vec![0i64; intervals + 1];
        let spans: Vec<(usize, usize)> = self
            .branch_child
            .iter()
            .map(|&c| {
                let p = self.nodes[c].parent.unwrap();
                (event_index(times[p]), event_index(times[c]))
            })
            .collect();
        for &(lo, hi) in &spans {
            if hi > lo {
                diff[lo] += 1;
                diff[hi] -= 1;
            }
        }
        // Prefix sums of dt/k over intervals.
        let mut cumulative = vec![0.0; events.len()];
        let mut k = 0i64;
        for j in 0..intervals {
            k += diff[j];
            let dt = events[j + 1] - events[j];
            let step = if k > 0 { dt / k as f64 } else { 0.0 };
            cumulative[j + 1] = cumulative[j] + step;
        }
        let mut t = self.clone();
        for (&child, &(lo, hi)) in self.branch_child.iter().zip(&spans) {
            t.nodes[child].branch_length = if hi > lo {
                cumulative[hi] - cumulative[lo]
            } else {
                0.0
            };
        }
        t
    }

    /// Scales branch lengths so their mean is one (their sum equals the
    /// branch count).
    pub fn normalize_branches(&self) -> Tree {
        let total = self.total_length();
        let b = self.num_branches();
        if b == 0 || total <= 0.0 {
            return self.clone();
        }
        let factor = b as f64 / total;
        let mut t = self.clone();
        for &c in &self.branch_child {
            t.nodes[c].branch_length *= factor;
        }
        t
    }

    /// Serializes the topology, labels and branch lengths as Newick.
    pub fn to_newick(&self) -> String {
        newick::write_newick(self)
    }

    pub fn prune(&self, jumps: &JumpVector) -> Result<PrunedTree> {
        PrunedTree::new(self, jumps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_leaf_ultrametric() -> Tree {
        parse_newick("((A:1,B:1):1,(C:1,D:1):1);").unwrap()
    }

    #[test]
    fn rescale_balanced_four_leaf() {
        let t = four_leaf_ultrametric().rescale();
        for b in 0..t.num_branches() {
            let child = t.branch_child(b);
            let expected = if t.is_leaf(child) { 0.25 } else { 0.5 };
            assert!((t.branch_length(b) - expected).abs() < 1e-12);
        }
        assert!((t.total_length() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rescale_single_branch_is_identity() {
        let t = parse_newick("(A:7);").unwrap();
        let r = t.rescale();
        assert_eq!(r.branch_lengths(), vec![7.0]);
        assert_eq!(r.rescale(), r);
    }

    #[test]
    fn rescale_unbalanced_hand_computed() {
        // Times: root 0, X 1, A 3, B 2, C 4.
        // Intervals: [0,1] k=2, [1,2] k=3, [2,3] k=2, [3,4] k=1.
        let t = parse_newick("((A:2,B:1)X:1,C:4);").unwrap().rescale();
        let len = |name: &str| t.branch_length(t.node_branch(t.find_label(name).unwrap()).unwrap());
        assert!((len("X") - 0.5).abs() < 1e-12);
        assert!((len("B") - 1.0 / 3.0).abs() < 1e-12);
        assert!((len("A") - (1.0 / 3.0 + 0.5)).abs() < 1e-12);
        assert!((len("C") - (0.5 + 1.0 / 3.0 + 0.5 + 1.0)).abs() < 1e-12);
        assert!((t.total_length() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_length_branch_rescales_to_zero() {
        let t = parse_newick("((A:0,B:1):1,C:2);").unwrap().rescale();
        let a = t.node_branch(t.find_label("A").unwrap()).unwrap();
        assert_eq!(t.branch_length(a), 0.0);
    }

    #[test]
    fn attach_observations_cases() {
        let t = parse_newick("((A:1,B:1):1,C:2);").unwrap();
        let t1 = t.attach_observations(&[("A", 1), ("B", 0), ("C", 1)]).unwrap();
        for l in ["A", "B", "C"] {
            assert_eq!(t1.node(t1.find_label(l).unwrap()).observations.len(), 1);
        }
        let t2 = t.attach_observations(&[("A", 1), ("A", 0)]).unwrap();
        assert_eq!(t2.node(t2.find_label("A").unwrap()).observations, vec![1, 0]);
        assert!(matches!(
            t.attach_observations(&[("Z", 1)]),
            Err(Error::UnknownLabel(l)) if l == "Z"
        ));
        assert!(matches!(
            t.attach_observations(&[("A", 2)]),
            Err(Error::ValueOutOfRange { value: 2, .. })
        ));
    }

    #[test]
    fn unlabeled_nodes_addressable_by_id() {
        let t = parse_newick("((A,B),C);").unwrap();
        let internal = t.nodes().iter().position(|n| n.label.is_none() && n.parent.is_some()).unwrap();
        let name = t.node_name(internal);
        assert_eq!(t.resolve_name(&name), Some(internal));
        assert!(t.attach_observations(&[(name.as_str(), 1)]).is_ok());
    }

    #[test]
    fn from_parts_rejects_bad_structure() {
        let err = Tree::from_parts(vec![None, None], vec![None, None], vec![0.0, 1.0]);
        assert!(matches!(err, Err(Error::InvalidTree(_))));
        let cyc = Tree::from_parts(
            vec![None, None, None],
            vec![None, Some(2), Some(1)],
            vec![0.0, 1.0, 1.0],
        );
        assert!(matches!(cyc, Err(Error::InvalidTree(_))));
        let neg = Tree::from_parts(vec![None, None], vec![None, Some(0)], vec![0.0, -1.0]);
        assert!(matches!(neg, Err(Error::InvalidTree(_))));
    }

    #[test]
    fn path_branches_through_root() {
        let t = four_leaf_ultrametric();
        let a = t.find_label("A").unwrap();
        let c = t.find_label("C").unwrap();
        assert_eq!(t.path_branches(a, c).len(), 4);
        assert_eq!(t.path_branches(a, a).len(), 0);
        assert_eq!(t.path_branches(t.root(), a).len(), 2);
    }

    #[test]
    fn adjacent_pairs_of_balanced_tree() {
        let t = four_leaf_ultrametric();
        assert_eq!(t.adjacent_branch_pairs().len(), 4);
    }
}
