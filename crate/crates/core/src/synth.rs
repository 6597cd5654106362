//! Synthetic experiment instances and detection scoring.
//!
//! Two data schemes are supported. In the two-group scheme a leaf takes 1
//! with probability `0.5 + p/2` when its root path crosses an even number of
//! jump branches and `0.5 - p/2` otherwise, so the total variation across any
//! jump is `p`. In the nested scheme the number `k` of jump branches on the
//! root path selects `0.5 + (k - 1.5) p`.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{BranchId, JumpVector, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum BranchLengthLaw {
    Exponential { rate: f64 },
    Constant { length: f64 },
}

impl Default for BranchLengthLaw {
    fn default() -> Self {
        BranchLengthLaw::Exponential { rate: 1.0 }
    }
}

impl BranchLengthLaw {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            BranchLengthLaw::Exponential { rate } => Exp::new(rate).expect("positive rate").sample(rng),
            BranchLengthLaw::Constant { length } => length,
        }
    }
}

/// Uniform rooted binary topology with Exponential(1) branch lengths and
/// leaves labelled `t1..tn`.
pub fn random_binary_tree<R: Rng + ?Sized>(leaves: usize, rng: &mut R) -> Tree {
    random_binary_tree_with(leaves, BranchLengthLaw::default(), rng)
}

/// Rémy's insertion: each new leaf splits a uniformly chosen edge, the edge
/// above the root included.
pub fn random_binary_tree_with<R: Rng + ?Sized>(leaves: usize, law: BranchLengthLaw, rng: &mut R) -> Tree {
    assert!(leaves >= 2, "a binary tree needs at least two leaves");
    // Scratch structure: parent and children per node, node 0 is the first leaf.
    let mut parent: Vec<Option<usize>> = vec![None];
    let mut children: Vec<Vec<usize>> = vec![Vec::new()];
    let mut leaf_label: Vec<Option<usize>> = vec![Some(1)];
    let mut root = 0;
    for next_leaf in 2..=leaves {
        let target = rng.random_range(0..parent.len());
        let internal = parent.len();
        let leaf = internal + 1;
        parent.push(parent[target]);
        children.push(Vec::new());
        leaf_label.push(None);
        parent.push(Some(internal));
        children.push(Vec::new());
        leaf_label.push(Some(next_leaf));
        match parent[target] {
            Some(p) => {
                let slot = children[p].iter().position(|&c| c == target).unwrap();
                children[p][slot] = internal;
            }
            None => root = internal,
        }
        parent[target] = Some(internal);
        children[internal] = if rng.random_bool(0.5) { vec![target, leaf] } else { vec![leaf, target] };
    }
    let lengths: Vec<f64> = parent.iter().map(|p| if p.is_some() { law.sample(rng) } else { 0.0 }).collect();
    build_preorder(root, &parent, &children, &leaf_label, &lengths)
}

/// Kingman coalescent: with `k` lineages the waiting time is
/// Exponential(k(k-1)/2) and a uniformly chosen pair merges. The result is
/// ultrametric with leaves labelled `t1..tn`.
pub fn random_coalescent_tree<R: Rng + ?Sized>(leaves: usize, rng: &mut R) -> Tree {
    assert!(leaves >= 2, "a binary tree needs at least two leaves");
    let mut parent: Vec<Option<usize>> = vec![None; leaves];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); leaves];
    let mut leaf_label: Vec<Option<usize>> = (1..=leaves).map(Some).collect();
    let mut time = vec![0.0; leaves];
    let mut active: Vec<usize> = (0..leaves).collect();
    let mut now = 0.0;
    while active.len() > 1 {
        let k = active.len() as f64;
        now += Exp::new(k * (k - 1.0) / 2.0).expect("positive rate").sample(rng);
        let i = rng.random_range(0..active.len());
        let a = active.swap_remove(i);
        let j = rng.random_range(0..active.len());
        let b = active.swap_remove(j);
        let node = parent.len();
        parent.push(None);
        children.push(vec![a, b]);
        leaf_label.push(None);
        time.push(now);
        parent[a] = Some(node);
        parent[b] = Some(node);
        active.push(node);
    }
    let root = active[0];
    let lengths: Vec<f64> = (0..parent.len())
        .map(|v| parent[v].map_or(0.0, |p| time[p] - time[v]))
        .collect();
    build_preorder(root, &parent, &children, &leaf_label, &lengths)
}

/// Renumbers scratch nodes in preorder and builds the tree.
fn build_preorder(
    root: usize,
    parent: &[Option<usize>],
    children: &[Vec<usize>],
    leaf_label: &[Option<usize>],
    lengths: &[f64],
) -> Tree {
    let n = parent.len();
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![root];
    while let Some(v) = stack.pop() {
        order.push(v);
        stack.extend(children[v].iter().rev());
    }
    let mut new_id = vec![0; n];
    for (i, &v) in order.iter().enumerate() {
        new_id[v] = i;
    }
    let labels = order.iter().map(|&v| leaf_label[v].map(|k| format!("t{k}"))).collect();
    let parents = order.iter().map(|&v| parent[v].map(|p| new_id[p])).collect();
    let lengths = order.iter().map(|&v| lengths[v]).collect();
    Tree::from_parts(labels, parents, lengths).expect("generated tree is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    TwoGroup,
    Nested,
}

impl Scheme {
    /// Largest admissible total variation.
    pub fn max_tv(&self) -> f64 {
        match self {
            Scheme::TwoGroup => 1.0,
            Scheme::Nested => 1.0 / 3.0,
        }
    }

    /// Success probability for a node with `level` jumps on its root path.
    pub fn success_probability(&self, p: f64, level: usize) -> f64 {
        match self {
            Scheme::TwoGroup => {
                if level.is_multiple_of(2) {
                    0.5 + p / 2.0
                } else {
                    0.5 - p / 2.0
                }
            }
            Scheme::Nested => 0.5 + (level.min(3) as f64 - 1.5) * p,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "two-group" => Some(Scheme::TwoGroup),
            "nested" => Some(Scheme::Nested),
            _ => None,
        }
    }

    pub fn validate(&self, p: f64) -> Result<()> {
        if !(0.0..=self.max_tv()).contains(&p) {
            return Err(Error::Config(format!(
                "total variation {p} outside [0, {}] for this scheme",
                self.max_tv()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub leaves: usize,
    /// Admissible range of the leaf fraction below a jump branch.
    pub window: (f64, f64),
    pub jumps: usize,
    pub tv: f64,
    pub scheme: Scheme,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub branch_lengths: BranchLengthLaw,
}

impl ExperimentSpec {
    pub fn two_group(leaves: usize, tv: f64, replications: usize, seed: u64) -> Self {
        ExperimentSpec {
            leaves,
            window: (0.1, 0.5),
            jumps: 1,
            tv,
            scheme: Scheme::TwoGroup,
            replications,
            seed,
            branch_lengths: BranchLengthLaw::default(),
        }
    }

    pub fn nested(leaves: usize, tv: f64, replications: usize, seed: u64) -> Self {
        ExperimentSpec {
            jumps: 3,
            scheme: Scheme::Nested,
            ..Self::two_group(leaves, tv, replications, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.leaves < 2 {
            return Err(Error::Config("at least two leaves are required".into()));
        }
        let (lo, hi) = self.window;
        if !(lo > 0.0 && lo < hi && hi <= 1.0) {
            return Err(Error::Config(format!("invalid leaf-fraction window ({lo}, {hi})")));
        }
        if self.jumps == 0 {
            return Err(Error::Config("at least one jump branch is required".into()));
        }
        self.scheme.validate(self.tv)
    }

    /// Builds replication `rep` from its own generator stream.
    pub fn instance(&self, rep: usize) -> Result<Instance> {
        self.validate()?;
        let mut rng = crate::rng_from_seed(self.seed);
        rng.set_stream(rep as u64);
        let tree = random_binary_tree_with(self.leaves, self.branch_lengths, &mut rng);
        let nested = self.scheme == Scheme::Nested;
        let jump_branches = place_jumps(&tree, self.window, self.jumps, nested, &mut rng)?;
        let data = simulate_dataset(&tree, &jump_branches, self.tv, self.scheme, &mut rng)?;
        let tree = tree.with_observations(data.observations.clone())?;
        Ok(Instance {
            tree,
            jump_branches,
            data,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// Tree with the simulated observations attached.
    pub tree: Tree,
    pub jump_branches: Vec<BranchId>,
    pub data: Dataset,
}

/// Chooses jump branches by the leaf fraction of the subtree below them.
///
/// Without nesting, `count` distinct branches are drawn uniformly among those
/// whose fraction lies in `window`. With nesting the window is ignored and
/// the chain of `count` nested branches closest (in squared error) to the
/// fractions `(count + 1 - k) / (count + 1)` is returned, top branch first.
pub fn place_jumps<R: Rng + ?Sized>(
    tree: &Tree,
    window: (f64, f64),
    count: usize,
    nested: bool,
    rng: &mut R,
) -> Result<Vec<BranchId>> {
    let leaf_counts = tree.subtree_leaf_counts();
    let total = tree.leaves().len() as f64;
    let fraction = |b: BranchId| leaf_counts[tree.branch_child(b)] as f64 / total;
    let branches = tree.num_branches();
    if nested {
        return nested_chain(tree, count, &fraction);
    }
    let (lo, hi) = window;
    let eligible: Vec<BranchId> = (0..branches)
        .filter(|&b| (lo..=hi).contains(&fraction(b)))
        .collect();
    if eligible.len() < count {
        return Err(Error::Config(format!(
            "only {} branches have a leaf fraction in [{lo}, {hi}], {count} needed",
            eligible.len()
        )));
    }
    let mut chosen: Vec<BranchId> = eligible.choose_multiple(rng, count).copied().collect();
    chosen.sort_unstable();
    Ok(chosen)
}

fn nested_chain(tree: &Tree, count: usize, fraction: &dyn Fn(BranchId) -> f64) -> Result<Vec<BranchId>> {
    let branches = tree.num_branches();
    if count == 0 {
        return Ok(Vec::new());
    }
    let target = |k: usize| (count - k) as f64 / (count + 1) as f64;
    // below[b]: branches strictly inside the subtree under b.
    let below: Vec<Vec<BranchId>> = (0..branches)
        .map(|b| {
            let top = tree.branch_child(b);
            (0..branches)
                .filter(|&c| c != b && tree.is_ancestor(top, tree.branch_child(c)))
                .collect()
        })
        .collect();
    // cost[k][b]: best squared error placing targets k.. with b taking target k.
    let mut cost = vec![vec![f64::INFINITY; branches]; count];
    let mut next = vec![vec![None; branches]; count];
    for k in (0..count).rev() {
        for b in 0..branches {
            let own = (fraction(b) - target(k)).powi(2);
            if k + 1 == count {
                cost[k][b] = own;
                continue;
            }
            let mut best: Option<(f64, BranchId)> = None;
            for &c in &below[b] {
                let v = cost[k + 1][c];
                if v.is_finite() && best.is_none_or(|(bv, _)| v < bv) {
                    best = Some((v, c));
                }
            }
            if let Some((v, c)) = best {
                cost[k][b] = own + v;
                next[k][b] = Some(c);
            }
        }
    }
    let mut start: Option<(f64, BranchId)> = None;
    for (b, &v) in cost[0].iter().enumerate() {
        if v.is_finite() && start.is_none_or(|(bv, _)| v < bv) {
            start = Some((v, b));
        }
    }
    let Some((_, mut b)) = start else {
        return Err(Error::Config(format!("no chain of {count} nested branches exists")));
    };
    let mut chain = vec![b];
    for step in &next[..count - 1] {
        b = step[b].expect("finite cost has a successor");
        chain.push(b);
    }
    Ok(chain)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    /// Observations per node; only leaves carry one.
    pub observations: Vec<Vec<u32>>,
    /// Number of jump branches on each node's root path.
    pub levels: Vec<usize>,
    /// Success probability per node.
    pub probabilities: Vec<f64>,
    /// Empirical total variation across each jump branch, between the leaf
    /// observations of the groups directly above and below it. NaN when
    /// either group has no leaves.
    pub emp_tv: Vec<f64>,
}

impl Dataset {
    /// `(label, value)` records for every observation.
    pub fn records(&self, tree: &Tree) -> Vec<(String, u32)> {
        let mut out = Vec::new();
        for (node, obs) in self.observations.iter().enumerate() {
            for &x in obs {
                out.push((tree.node_name(node), x));
            }
        }
        out
    }

    /// Distinct success probabilities in increasing order.
    pub fn group_probabilities(&self) -> Vec<f64> {
        let mut ps = self.probabilities.clone();
        ps.sort_by(f64::total_cmp);
        ps.dedup();
        ps
    }
}

/// One Bernoulli observation per leaf.
pub fn simulate_dataset<R: Rng + ?Sized>(
    tree: &Tree,
    jump_branches: &[BranchId],
    p: f64,
    scheme: Scheme,
    rng: &mut R,
) -> Result<Dataset> {
    scheme.validate(p)?;
    let branches = tree.num_branches();
    if let Some(&b) = jump_branches.iter().find(|&&b| b >= branches) {
        return Err(Error::Config(format!("branch {b} does not exist")));
    }
    let mut is_jump = vec![false; branches];
    for &b in jump_branches {
        is_jump[b] = true;
    }
    let n = tree.num_nodes();
    let mut levels = vec![0usize; n];
    for &v in tree.preorder() {
        if let Some(parent) = tree.node(v).parent {
            let b = tree.node_branch(v).unwrap();
            levels[v] = levels[parent] + usize::from(is_jump[b]);
        }
    }
    let probabilities: Vec<f64> = levels.iter().map(|&k| scheme.success_probability(p, k)).collect();
    let mut observations = vec![Vec::new(); n];
    for v in tree.leaves() {
        observations[v].push(u32::from(rng.random_bool(probabilities[v].clamp(0.0, 1.0))));
    }

    let indicator = JumpVector::indicator(branches, jump_branches);
    let pruned = tree.prune(&indicator)?;
    let mut ones = vec![0usize; pruned.num_groups()];
    let mut sizes = vec![0usize; pruned.num_groups()];
    for v in tree.leaves() {
        let g = pruned.node_group[v];
        sizes[g] += 1;
        ones[g] += observations[v][0] as usize;
    }
    let emp_tv = jump_branches
        .iter()
        .map(|&b| {
            let child = tree.branch_child(b);
            let above = pruned.node_group[tree.branch_parent(b)];
            let below = pruned.node_group[child];
            if sizes[above] == 0 || sizes[below] == 0 {
                f64::NAN
            } else {
                (ones[above] as f64 / sizes[above] as f64 - ones[below] as f64 / sizes[below] as f64).abs()
            }
        })
        .collect();
    Ok(Dataset {
        observations,
        levels,
        probabilities,
        emp_tv,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roc {
    /// `(false positive rate, true positive rate)` from the strictest
    /// threshold down, starting at the origin.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl Roc {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (f, t) in &self.points {
            out.push_str(&format!("{f},{t}\n"));
        }
        out
    }
}

/// Threshold sweep over the distinct scores; tied scores enter together so
/// the trapezoidal area averages over their orderings.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Result<Roc> {
    if scores.len() != truth.len() {
        return Err(Error::Config(format!(
            "{} scores for {} truth labels",
            scores.len(),
            truth.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Config("scores contain NaN".into()));
    }
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Config("truth needs at least one positive and one negative".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (px, py) = *points.last().unwrap();
        let x = fp as f64 / neg as f64;
        let y = tp as f64 / pos as f64;
        auc += (x - px) * (y + py) / 2.0;
        points.push((x, y));
    }
    Ok(Roc { points, auc })
}

/// Whether the estimated jump set equals the true one.
pub fn target_identified(estimated: &[BranchId], truth: &[BranchId]) -> bool {
    let mut a = estimated.to_vec();
    let mut b = truth.to_vec();
    a.sort_unstable();
    a.dedup();
    b.sort_unstable();
    b.dedup();
    a == b
}

/// Truth indicator per branch.
pub fn truth_vector(branches: usize, jump_branches: &[BranchId]) -> Vec<bool> {
    let mut t = vec![false; branches];
    for &b in jump_branches {
        t[b] = true;
    }
    t
}

/// One row of a replication table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationResult {
    pub replication: usize,
    pub tv: f64,
    pub emp_tv: f64,
    pub target_identified: bool,
    pub log10_k: f64,
    pub auc: f64,
}

pub fn replication_csv(rows: &[ReplicationResult]) -> String {
    let mut out = String::from("replication,tv,emp_tv,target_identified,log10_k,auc\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.replication, r.tv, r.emp_tv, r.target_identified, r.log10_k, r.auc
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use proptest::prelude::*;

    #[test]
    fn tree_sizes() {
        let mut rng = rng_from_seed(1);
        let t = random_binary_tree(2, &mut rng);
        assert_eq!((t.num_nodes(), t.num_branches()), (3, 2));
        let t = random_binary_tree(100, &mut rng);
        assert_eq!(t.num_branches(), 198);
        assert_eq!(t.leaves().len(), 100);
        assert_eq!(t.num_nodes() - t.leaves().len(), 99);
        for v in 0..t.num_nodes() {
            assert!(t.node(v).children.is_empty() || t.node(v).children.len() == 2);
        }
        assert!(t.find_label("t1").is_some() && t.find_label("t100").is_some());
        assert!(t.branch_lengths().iter().all(|&l| l > 0.0));
    }

    #[test]
    fn coalescent_tree_is_ultrametric() {
        let mut rng = rng_from_seed(8);
        let t = random_coalescent_tree(60, &mut rng);
        assert_eq!(t.num_branches(), 118);
        let times = t.node_times();
        let h = t.height();
        for v in t.leaves() {
            assert!((times[v] - h).abs() < 1e-9);
        }
        // Rescaled total length equals the height on an ultrametric tree.
        assert!((t.rescale().total_length() - h).abs() < 1e-9);
    }

    #[test]
    fn tree_is_deterministic() {
        let a = random_binary_tree(50, &mut rng_from_seed(9));
        let b = random_binary_tree(50, &mut rng_from_seed(9));
        assert_eq!(a.to_newick(), b.to_newick());
        let c = random_binary_tree(50, &mut rng_from_seed(10));
        assert_ne!(a.to_newick(), c.to_newick());
    }

    #[test]
    fn remy_topologies_are_uniform() {
        // Four leaves: 15 labelled rooted binary shapes, up to child order.
        use std::collections::HashMap;
        fn canon(t: &Tree, v: usize) -> String {
            if t.is_leaf(v) {
                return t.node_name(v);
            }
            let mut parts: Vec<String> = t.node(v).children.iter().map(|&c| canon(t, c)).collect();
            parts.sort();
            format!("({})", parts.join(","))
        }
        let mut rng = rng_from_seed(4);
        let mut counts: HashMap<String, usize> = HashMap::new();
        let reps = 30_000;
        for _ in 0..reps {
            let t = random_binary_tree(4, &mut rng);
            *counts.entry(canon(&t, t.root())).or_default() += 1;
        }
        assert_eq!(counts.len(), 15);
        let expected = reps as f64 / 15.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 14 degrees of freedom, 0.999 quantile is 36.1.
        assert!(chi2 < 36.1, "chi2 {chi2}");
    }

    #[test]
    fn window_placement() {
        let mut rng = rng_from_seed(2);
        let t = random_binary_tree(100, &mut rng);
        let counts = t.subtree_leaf_counts();
        for _ in 0..20 {
            let b = place_jumps(&t, (0.1, 0.5), 1, false, &mut rng).unwrap();
            let k = counts[t.branch_child(b[0])];
            assert!((10..=50).contains(&k));
        }
    }

    #[test]
    fn window_without_candidates() {
        let t = crate::tree::parse_newick("((A,B),(C,D));").unwrap();
        let mut rng = rng_from_seed(0);
        assert!(place_jumps(&t, (0.99, 1.0), 1, false, &mut rng).is_err());
    }

    #[test]
    fn nested_placement() {
        let mut rng = rng_from_seed(3);
        let t = random_binary_tree(200, &mut rng);
        let chain = place_jumps(&t, (0.1, 0.5), 3, true, &mut rng).unwrap();
        assert_eq!(chain.len(), 3);
        let counts = t.subtree_leaf_counts();
        let frac: Vec<f64> = chain.iter().map(|&b| counts[t.branch_child(b)] as f64 / 200.0).collect();
        for w in chain.windows(2) {
            assert!(t.is_ancestor(t.branch_child(w[0]), t.branch_child(w[1])));
            assert_ne!(w[0], w[1]);
        }
        // Brute force over all nested triples.
        let targets = [0.75, 0.5, 0.25];
        let err = |c: &[f64]| c.iter().zip(targets).map(|(f, t)| (f - t).powi(2)).sum::<f64>();
        let b = t.num_branches();
        let f = |x: usize| counts[t.branch_child(x)] as f64 / 200.0;
        let inside = |a: usize, c: usize| a != c && t.is_ancestor(t.branch_child(a), t.branch_child(c));
        let mut best = f64::INFINITY;
        for x in 0..b {
            for y in (0..b).filter(|&y| inside(x, y)) {
                for z in (0..b).filter(|&z| inside(y, z)) {
                    best = best.min(err(&[f(x), f(y), f(z)]));
                }
            }
        }
        assert!((err(&frac) - best).abs() < 1e-12);
    }

    #[test]
    fn success_probabilities() {
        let two: Vec<f64> = (0..2).map(|k| Scheme::TwoGroup.success_probability(0.8, k)).collect();
        assert!((two[0] - 0.9).abs() < 1e-12 && (two[1] - 0.1).abs() < 1e-12);
        let nested: Vec<f64> = (0..4).map(|k| Scheme::Nested.success_probability(0.25, k)).collect();
        for (a, b) in nested.iter().zip([0.125, 0.375, 0.625, 0.875]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(Scheme::Nested.validate(0.9).is_err());
        assert!(Scheme::TwoGroup.validate(1.2).is_err());
        assert!(Scheme::TwoGroup.validate(0.8).is_ok());
    }

    #[test]
    fn zero_tv_gives_identical_groups() {
        let spec = ExperimentSpec::two_group(400, 0.0, 1, 5);
        let inst = spec.instance(0).unwrap();
        assert_eq!(inst.data.group_probabilities(), vec![0.5]);
        assert!(inst.data.emp_tv[0] < 0.2);
    }

    #[test]
    fn instances_are_reproducible_and_distinct() {
        let spec = ExperimentSpec::two_group(30, 0.8, 2, 21);
        let a = spec.instance(0).unwrap();
        let b = spec.instance(0).unwrap();
        assert_eq!(a.tree, b.tree);
        assert_eq!(a.jump_branches, b.jump_branches);
        let c = spec.instance(1).unwrap();
        assert_ne!(a.tree.to_newick(), c.tree.to_newick());
        assert_eq!(a.tree.num_observations(), 30);
    }

    #[test]
    fn emp_tv_tracks_tv() {
        // Jump branches with at least 50 leaves on each side.
        let mut hits = 0;
        let mut total = 0;
        for rep in 0..60 {
            let spec = ExperimentSpec {
                window: (0.25, 0.75),
                ..ExperimentSpec::two_group(200, 0.6, 60, 77)
            };
            let inst = spec.instance(rep).unwrap();
            total += 1;
            if (inst.data.emp_tv[0] - 0.6).abs() < 0.1 {
                hits += 1;
            }
        }
        assert!(hits as f64 >= 0.95 * total as f64, "{hits}/{total}");
    }

    #[test]
    fn roc_examples() {
        let truth = [true, false, true, false];
        let r = roc_auc(&[0.9, 0.1, 0.8, 0.2], &truth).unwrap();
        assert_eq!(r.auc, 1.0);
        let r = roc_auc(&[0.3; 4], &truth).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!(r.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        let r = roc_auc(&[0.1, 0.9, 0.2, 0.8], &truth).unwrap();
        assert_eq!(r.auc, 0.0);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(roc_auc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn identification_helper() {
        assert!(target_identified(&[3], &[3]));
        assert!(!target_identified(&[3, 4], &[3]));
        assert!(!target_identified(&[], &[3]));
        assert!(target_identified(&[4, 3], &[3, 4]));
    }

    #[test]
    fn replication_table() {
        let csv = replication_csv(&[ReplicationResult {
            replication: 0,
            tv: 0.8,
            emp_tv: 0.75,
            target_identified: true,
            log10_k: f64::INFINITY,
            auc: 1.0,
        }]);
        assert_eq!(csv, "replication,tv,emp_tv,target_identified,log10_k,auc\n0,0.8,0.75,true,inf,1\n");
    }

    fn brute_auc(scores: &[f64], truth: &[bool]) -> f64 {
        let mut s = 0.0;
        let mut pairs = 0.0;
        for (i, &ti) in truth.iter().enumerate() {
            for (j, &tj) in truth.iter().enumerate() {
                if ti && !tj {
                    pairs += 1.0;
                    s += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        s / pairs
    }

    proptest! {
        #[test]
        fn auc_equals_pair_statistic(
            data in prop::collection::vec((0u8..5, any::<bool>()), 2..40)
        ) {
            let scores: Vec<f64> = data.iter().map(|&(s, _)| f64::from(s)).collect();
            let truth: Vec<bool> = data.iter().map(|&(_, t)| t).collect();
            prop_assume!(truth.iter().any(|&t| t) && truth.iter().any(|&t| !t));
            let r = roc_auc(&scores, &truth).unwrap();
            prop_assert!((r.auc - brute_auc(&scores, &truth)).abs() < 1e-12);
        }

        #[test]
        fn simulated_groups_match_pruning(seed in any::<u64>(), nested in any::<bool>()) {
            let spec = if nested {
                ExperimentSpec::nested(40, 0.2, 1, seed)
            } else {
                ExperimentSpec::two_group(40, 0.6, 1, seed)
            };
            let inst = spec.instance(0).unwrap();
            let t = &inst.tree;
            let pruned = t.prune(&JumpVector::indicator(t.num_branches(), &inst.jump_branches)).unwrap();
            for i in 0..t.num_nodes() {
                for j in 0..t.num_nodes() {
                    if pruned.node_group[i] == pruned.node_group[j] {
                        prop_assert_eq!(inst.data.levels[i], inst.data.levels[j]);
                        prop_assert_eq!(inst.data.probabilities[i], inst.data.probabilities[j]);
                    }
                }
            }
            // Levels differ across every jump branch.
            for &b in &inst.jump_branches {
                prop_assert_eq!(
                    inst.data.levels[t.branch_child(b)],
                    inst.data.levels[t.branch_parent(b)] + 1
                );
            }
            prop_assert_eq!(pruned.num_groups(), inst.jump_branches.len() + 1);
        }
    }
}
