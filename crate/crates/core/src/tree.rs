//! Scenario-tree index structure.
//!
//! A horizon-`N`, branching-`d` tree enumerates every sequence of discrete
//! decisions over the planning horizon. Nodes are numbered breadth-first
//! from the root (id 0), children of each node are ordered by decision
//! index, and leaves are exactly the depth-`N` nodes. The tree is immutable
//! after construction; all downstream modules index state by node id.

use crate::error::{Error, Result};

/// Immutable scenario tree over a finite horizon.
#[derive(Debug, Clone)]
pub struct ScenarioTree {
    horizon: usize,
    branching: usize,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    decision: Vec<Option<usize>>,
}

impl ScenarioTree {
    /// Build the complete tree for `horizon` steps and `branching` decisions
    /// per step. Nodes are numbered breadth-first, so for branching 2 the
    /// root 0 has children 1 and 2, node 1 has children 3 and 4, and so on.
    pub fn build(horizon: usize, branching: usize) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::Config(format!(
                "scenario tree horizon must be >= 1, got {horizon}"
            )));
        }
        if branching < 2 {
            return Err(Error::Config(format!(
                "scenario tree branching must be >= 2, got {branching}"
            )));
        }

        // node_count = (d^(N+1) - 1) / (d - 1)
        let mut node_count = 0usize;
        let mut level = 1usize;
        for _ in 0..=horizon {
            node_count += level;
            level *= branching;
        }

        let mut parent = vec![None; node_count];
        let mut children = vec![Vec::new(); node_count];
        let mut depth = vec![0usize; node_count];
        let mut decision = vec![None; node_count];

        let mut next = 1usize;
        for id in 0..node_count {
            if depth[id] == horizon {
                continue;
            }
            let mut kids = Vec::with_capacity(branching);
            for j in 0..branching {
                parent[next] = Some(id);
                depth[next] = depth[id] + 1;
                decision[next] = Some(j);
                kids.push(next);
                next += 1;
                let _ = j;
            }
            children[id] = kids;
        }
        debug_assert_eq!(next, node_count);

        Ok(Self {
            horizon,
            branching,
            parent,
            children,
            depth,
            decision,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    /// Total number of nodes, root included.
    pub fn node_count(&self) -> usize {
        self.parent.len()
    }

    /// Number of non-leaf nodes. Breadth-first numbering makes these exactly
    /// the ids `0..non_leaf_count()`.
    pub fn non_leaf_count(&self) -> usize {
        self.node_count() - self.leaf_count()
    }

    pub fn leaf_count(&self) -> usize {
        self.branching.pow(self.horizon as u32)
    }

    /// Parent of `node`; `None` at the root.
    pub fn parent_of(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    /// Children of `node` ordered by decision index; empty at leaves.
    pub fn children_of(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn depth_of(&self, node: usize) -> usize {
        self.depth[node]
    }

    /// Decision index in `0..branching` that produced `node`; `None` at the
    /// root.
    pub fn decision_of(&self, node: usize) -> Option<usize> {
        self.decision[node]
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.depth[node] == self.horizon
    }

    /// Node ids of all leaves, in increasing id order.
    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(move |&n| self.is_leaf(n))
    }

    /// All nodes except the root.
    pub fn non_root(&self) -> impl Iterator<Item = usize> {
        1..self.node_count()
    }

    /// All non-leaf nodes.
    pub fn non_leaves(&self) -> impl Iterator<Item = usize> {
        0..self.non_leaf_count()
    }

    /// Root-to-leaf node sequences, one per leaf, each of length
    /// `horizon + 1`, ordered by leaf id.
    pub fn paths(&self) -> Vec<Vec<usize>> {
        self.leaves()
            .map(|leaf| {
                let mut path = Vec::with_capacity(self.horizon + 1);
                let mut node = leaf;
                path.push(node);
                while let Some(p) = self.parent_of(node) {
                    path.push(p);
                    node = p;
                }
                path.reverse();
                path
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_tree_matches_two_leaf_layout() {
        let t = ScenarioTree::build(1, 2).unwrap();
        assert_eq!(t.node_count(), 3);
        assert_eq!(t.leaves().collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(t.parent_of(1), Some(0));
        assert_eq!(t.parent_of(2), Some(0));
        assert_eq!(t.parent_of(0), None);
        assert_eq!(t.decision_of(1), Some(0));
        assert_eq!(t.decision_of(2), Some(1));
    }

    #[test]
    fn node_counts_follow_geometric_sum() {
        // 2^(6+1) - 1 and (3^3 - 1) / 2.
        let t = ScenarioTree::build(6, 2).unwrap();
        assert_eq!(t.node_count(), 127);
        assert_eq!(t.leaf_count(), 64);
        assert_eq!(t.non_leaf_count(), 63);

        let t = ScenarioTree::build(2, 3).unwrap();
        assert_eq!(t.node_count(), 13);
        assert_eq!(t.leaf_count(), 9);
    }

    #[test]
    fn rejects_degenerate_parameters() {
        assert!(ScenarioTree::build(0, 2).is_err());
        assert!(ScenarioTree::build(3, 1).is_err());
        assert!(ScenarioTree::build(0, 0).is_err());
    }

    #[test]
    fn paths_enumerate_breadth_first_ids() {
        let t = ScenarioTree::build(1, 2).unwrap();
        assert_eq!(t.paths(), vec![vec![0, 1], vec![0, 2]]);

        let t = ScenarioTree::build(2, 2).unwrap();
        assert_eq!(
            t.paths(),
            vec![vec![0, 1, 3], vec![0, 1, 4], vec![0, 2, 5], vec![0, 2, 6]]
        );

        let t = ScenarioTree::build(6, 2).unwrap();
        let paths = t.paths();
        assert_eq!(paths.len(), 64);
        assert!(paths.iter().all(|p| p.len() == 7));
    }

    #[test]
    fn structural_invariants_hold_for_small_trees() {
        for (h, b) in [(1, 2), (2, 2), (3, 2), (4, 2), (2, 3), (3, 3)] {
            let t = ScenarioTree::build(h, b).unwrap();
            let mut seen = vec![false; t.node_count()];
            seen[0] = true;
            for node in 0..t.node_count() {
                if t.is_leaf(node) {
                    assert!(t.children_of(node).is_empty());
                    assert_eq!(t.depth_of(node), h);
                    continue;
                }
                let kids = t.children_of(node);
                assert_eq!(kids.len(), b);
                for (j, &c) in kids.iter().enumerate() {
                    assert_eq!(t.parent_of(c), Some(node));
                    assert_eq!(t.depth_of(c), t.depth_of(node) + 1);
                    assert_eq!(t.decision_of(c), Some(j));
                    assert!(!seen[c], "node {c} reached twice");
                    seen[c] = true;
                }
            }
            assert!(seen.iter().all(|&s| s), "children union + root covers all nodes");

            for path in t.paths() {
                for (k, &node) in path.iter().enumerate() {
                    assert_eq!(t.depth_of(node), k);
                }
            }

            // Non-leaves occupy a contiguous id prefix.
            for node in 0..t.non_leaf_count() {
                assert!(!t.is_leaf(node));
            }
            for node in t.non_leaf_count()..t.node_count() {
                assert!(t.is_leaf(node));
            }
        }
    }
}
