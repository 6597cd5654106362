//! Shared fixtures for the benchmarks.

use jumptree::synth::ExperimentSpec;
use jumptree::{JumpVector, Tree};

/// A simulated two-group instance with its true jump vector, rescaled as the
/// sampler sees it.
pub fn two_group_instance(leaves: usize, seed: u64) -> (Tree, JumpVector) {
    let inst = ExperimentSpec::two_group(leaves, 0.8, 1, seed)
        .instance(0)
        .expect("valid experiment");
    let tree = inst.tree.rescale();
    let jumps = JumpVector::indicator(tree.num_branches(), &inst.jump_branches);
    (tree, jumps)
}
