use serde::{Deserialize, Serialize};

/// A regression tree stored as flat parallel arrays indexed by node id.
/// Node 0 is the root. A node is a leaf when its `left` entry is -1; leaf
/// values already include the learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub default_left: Vec<bool>,
    pub left: Vec<i32>,
    pub right: Vec<i32>,
    pub value: Vec<f64>,
    /// Loss reduction of the split, 0 at leaves.
    pub gain: Vec<f64>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        let mut t = Self::empty();
        t.push_leaf(value);
        t
    }

    pub(crate) fn empty() -> Self {
        Self {
            feature: Vec::new(),
            threshold: Vec::new(),
            default_left: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            value: Vec::new(),
            gain: Vec::new(),
        }
    }

    pub(crate) fn push_leaf(&mut self, value: f64) -> usize {
        self.feature.push(-1);
        self.threshold.push(0.0);
        self.default_left.push(false);
        self.left.push(-1);
        self.right.push(-1);
        self.value.push(value);
        self.gain.push(0.0);
        self.len() - 1
    }

    /// Turns leaf `node` into a split; children must be pushed afterwards.
    pub(crate) fn set_split(
        &mut self,
        node: usize,
        feature: usize,
        threshold: f64,
        default_left: bool,
        gain: f64,
        children: (usize, usize),
    ) {
        self.feature[node] = feature as i32;
        self.threshold[node] = threshold;
        self.default_left[node] = default_left;
        self.left[node] = children.0 as i32;
        self.right[node] = children.1 as i32;
        self.value[node] = 0.0;
        self.gain[node] = gain;
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.left[node] < 0
    }

    /// Leaf reached by `x`. NaN follows the node's default direction;
    /// otherwise `x < threshold` goes left.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        self.leaf_index_by(|f| x[f])
    }

    /// As [`Tree::leaf_index`] with feature values supplied by `value_of`.
    pub fn leaf_index_by(&self, value_of: impl Fn(usize) -> f64) -> usize {
        let mut node = 0;
        while !self.is_leaf(node) {
            let v = value_of(self.feature[node] as usize);
            let go_left = if v.is_nan() {
                self.default_left[node]
            } else {
                v < self.threshold[node]
            };
            node = if go_left { self.left[node] } else { self.right[node] } as usize;
        }
        node
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.value[self.leaf_index(x)]
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, node: usize) -> usize {
            if t.is_leaf(node) {
                0
            } else {
                1 + walk(t, t.left[node] as usize).max(walk(t, t.right[node] as usize))
            }
        }
        if self.is_empty() {
            0
        } else {
            walk(self, 0)
        }
    }

    /// Structural sanity: every internal node has two in-range children and
    /// every node except the root has exactly one parent.
    pub fn is_well_formed(&self) -> bool {
        let n = self.len();
        let lens = [
            self.feature.len(),
            self.threshold.len(),
            self.default_left.len(),
            self.left.len(),
            self.right.len(),
            self.gain.len(),
        ];
        if n == 0 || lens.iter().any(|&l| l != n) {
            return false;
        }
        let mut parents = vec![0usize; n];
        for node in 0..n {
            let (l, r) = (self.left[node], self.right[node]);
            if (l < 0) != (r < 0) {
                return false;
            }
            if l >= 0 {
                if l as usize >= n || r as usize >= n || self.feature[node] < 0 {
                    return false;
                }
                parents[l as usize] += 1;
                parents[r as usize] += 1;
            }
        }
        parents[0] == 0 && parents[1..].iter().all(|&p| p == 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stump(default_left: bool) -> Tree {
        let mut t = Tree::leaf(0.0);
        let l = t.push_leaf(-1.0);
        let r = t.push_leaf(2.0);
        t.set_split(0, 1, 0.5, default_left, 3.0, (l, r));
        t
    }

    #[test]
    fn routing() {
        let t = stump(true);
        assert!(t.is_well_formed());
        assert_eq!(t.predict(&[9.0, 0.2]), -1.0);
        assert_eq!(t.predict(&[9.0, 0.5]), 2.0);
        assert_eq!(t.predict(&[9.0, f64::NAN]), -1.0);
        assert_eq!(stump(false).predict(&[0.0, f64::NAN]), 2.0);
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn malformed_detected() {
        let mut t = stump(true);
        t.right[0] = -1;
        assert!(!t.is_well_formed());
    }
}
