//! Contraction of a tree by its zero-jump branches.

use super::{BranchId, JumpVector, NodeId, Tree};
use crate::error::{Error, Result};

pub type GroupId = usize;

/// A set of original nodes that share one distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    /// Member node ids, ascending.
    pub members: Vec<NodeId>,
    /// Uppermost member.
    pub top: NodeId,
    pub parent: Option<GroupId>,
    /// Jump count on the branch above `top`; 0 for the root group.
    pub jumps: u32,
    /// Branch above `top`; `None` for the root group.
    pub edge: Option<BranchId>,
    pub depth: usize,
    /// Member observations concatenated in member order.
    pub observations: Vec<u32>,
}

/// Pruned tree. Groups are numbered breadth-first from the root group (id 0),
/// ties broken by the preorder position of each group's top node.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedTree {
    pub groups: Vec<Group>,
    pub node_group: Vec<GroupId>,
}

impl PrunedTree {
    pub fn new(tree: &Tree, jumps: &JumpVector) -> Result<Self> {
        if jumps.len() != tree.num_branches() {
            return Err(Error::JumpLength {
                expected: tree.num_branches(),
                got: jumps.len(),
            });
        }
        let n = tree.num_nodes();
        let mut provisional = vec![usize::MAX; n];
        // (top node, parent provisional group, preorder rank of top)
        let mut tops: Vec<(NodeId, Option<usize>, usize)> = Vec::new();
        let mut depth: Vec<usize> = Vec::new();
        for (rank, &id) in tree.preorder().iter().enumerate() {
            let node = tree.node(id);
            let starts_group = match tree.node_branch(id) {
                None => true,
                Some(b) => jumps[b] > 0,
            };
            if starts_group {
                let parent = node.parent.map(|p| provisional[p]);
                provisional[id] = tops.len();
                depth.push(parent.map_or(0, |g| depth[g] + 1));
                tops.push((id, parent, rank));
            } else {
                provisional[id] = provisional[node.parent.unwrap()];
            }
        }

        let mut order: Vec<usize> = (0..tops.len()).collect();
        order.sort_by_key(|&g| (depth[g], tops[g].2));
        let mut renumber = vec![0; tops.len()];
        for (new, &old) in order.iter().enumerate() {
            renumber[old] = new;
        }

        let mut groups: Vec<Group> = order
            .iter()
            .map(|&old| {
                let (top, parent, _) = tops[old];
                let edge = tree.node_branch(top);
                Group {
                    members: Vec::new(),
                    top,
                    parent: parent.map(|p| renumber[p]),
                    jumps: edge.map_or(0, |b| jumps[b]),
                    edge,
                    depth: depth[old],
                    observations: Vec::new(),
                }
            })
            .collect();
        let node_group: Vec<GroupId> = provisional.iter().map(|&g| renumber[g]).collect();
        for id in 0..n {
            let g = &mut groups[node_group[id]];
            g.members.push(id);
            g.observations.extend_from_slice(&tree.node(id).observations);
        }
        Ok(PrunedTree { groups, node_group })
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Ancestor chain of a group, starting with the group itself.
    pub fn lineage(&self, group: GroupId) -> Vec<GroupId> {
        let mut out = vec![group];
        let mut cur = group;
        while let Some(p) = self.groups[cur].parent {
            out.push(p);
            cur = p;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::parse_newick;

    fn figure_tree() -> Tree {
        parse_newick("((G1,G2)G6,(G3,(G4,G5)G8)G7)G0;").unwrap()
    }

    fn branch_above(t: &Tree, label: &str) -> BranchId {
        t.node_branch(t.find_label(label).unwrap()).unwrap()
    }

    fn group_labels(t: &Tree, p: &PrunedTree) -> Vec<Vec<String>> {
        p.groups
            .iter()
            .map(|g| {
                let mut v: Vec<String> = g.members.iter().map(|&m| t.node_name(m)).collect();
                v.sort();
                v
            })
            .collect()
    }

    #[test]
    fn no_jumps_single_group() {
        let t = figure_tree();
        let p = t.prune(&JumpVector::zeros(t.num_branches())).unwrap();
        assert_eq!(p.num_groups(), 1);
        assert_eq!(p.groups[0].members.len(), 9);
        assert_eq!(p.groups[0].parent, None);
    }

    #[test]
    fn figure_example_three_groups() {
        let t = figure_tree();
        let mut b = JumpVector::zeros(t.num_branches());
        b.0[branch_above(&t, "G6")] = 2;
        b.0[branch_above(&t, "G8")] = 1;
        let p = t.prune(&b).unwrap();
        assert_eq!(
            group_labels(&t, &p),
            vec![
                vec!["G0", "G3", "G7"],
                vec!["G1", "G2", "G6"],
                vec!["G4", "G5", "G8"],
            ]
        );
        assert_eq!(p.groups[1].jumps, 2);
        assert_eq!(p.groups[2].jumps, 1);
        assert_eq!(p.groups[1].parent, Some(0));
        assert_eq!(p.groups[2].parent, Some(0));
    }

    #[test]
    fn jump_everywhere_separates_all() {
        let t = figure_tree();
        let p = t.prune(&JumpVector(vec![1; t.num_branches()])).unwrap();
        assert_eq!(p.num_groups(), t.num_nodes());
        for g in &p.groups[1..] {
            assert!(g.jumps >= 1);
            assert_eq!(g.depth, p.groups[g.parent.unwrap()].depth + 1);
        }
    }

    #[test]
    fn length_mismatch() {
        let t = figure_tree();
        assert!(matches!(
            t.prune(&JumpVector::zeros(3)),
            Err(Error::JumpLength { expected: 8, got: 3 })
        ));
    }

    #[test]
    fn observations_pooled_in_member_order() {
        let t = parse_newick("((A,B)X,C);")
            .unwrap()
            .attach_observations(&[("B", 1), ("A", 0), ("C", 1), ("A", 1)])
            .unwrap();
        let mut b = JumpVector::zeros(t.num_branches());
        b.0[branch_above(&t, "C")] = 1;
        let p = t.prune(&b).unwrap();
        assert_eq!(p.groups[0].observations, vec![0, 1, 1]);
        assert_eq!(p.groups[1].observations, vec![1]);
        assert_eq!(p.lineage(1), vec![1, 0]);
    }
}
