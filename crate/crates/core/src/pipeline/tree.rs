//! CART classification tree with Gini impurity and midpoint thresholds.

#[derive(Debug, Clone)]
enum TreeNode {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

#[derive(Debug, Clone)]
pub struct TreeModel {
    root: TreeNode,
}

fn gini(pos: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a [f64],
    y: &'a [f64],
    width: usize,
    max_depth: usize,
    min_leaf: usize,
}

impl Builder<'_> {
    fn build(&self, rows: &mut [usize], depth: usize) -> TreeNode {
        let n = rows.len();
        let pos: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let leaf = TreeNode::Leaf(if n == 0 { 0.5 } else { pos / n as f64 });
        if depth >= self.max_depth || n < 2 * self.min_leaf || pos == 0.0 || pos == n as f64 {
            return leaf;
        }
        let parent = gini(pos, n as f64);
        // (gain, feature, threshold); strict improvement keeps the lowest
        // feature index and then the lowest threshold on ties
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = rows.to_vec();
        for f in 0..self.width {
            sorted.sort_by(|&a, &b| {
                self.x[a * self.width + f]
                    .total_cmp(&self.x[b * self.width + f])
                    .then(a.cmp(&b))
            });
            let mut left_pos = 0.0;
            for i in 0..n - 1 {
                left_pos += self.y[sorted[i]];
                let lo = self.x[sorted[i] * self.width + f];
                let hi = self.x[sorted[i + 1] * self.width + f];
                let n_left = i + 1;
                if lo == hi || n_left < self.min_leaf || n - n_left < self.min_leaf {
                    continue;
                }
                let (nl, nr) = (n_left as f64, (n - n_left) as f64);
                let child = (nl * gini(left_pos, nl) + nr * gini(pos - left_pos, nr)) / n as f64;
                let gain = parent - child;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g + 1e-12) {
                    best = Some((gain, f, (lo + hi) / 2.0));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return leaf;
        };
        let (mut left, mut right): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.x[r * self.width + feature] <= threshold);
        TreeNode::Split {
            feature,
            threshold,
            left: Box::new(self.build(&mut left, depth + 1)),
            right: Box::new(self.build(&mut right, depth + 1)),
        }
    }
}

impl TreeModel {
    pub fn fit(x: &[f64], y: &[f64], width: usize, max_depth: usize, min_leaf: usize) -> Self {
        let builder = Builder {
            x,
            y,
            width,
            max_depth,
            min_leaf: min_leaf.max(1),
        };
        let mut rows: Vec<usize> = (0..y.len()).collect();
        TreeModel {
            root: builder.build(&mut rows, 0),
        }
    }

    /// Positive-class fraction of the leaf `row` falls into.
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf(v) => return *v,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn d(n: &TreeNode) -> usize {
            match n {
                TreeNode::Leaf(_) => 0,
                TreeNode::Split { left, right, .. } => 1 + d(left).max(d(right)),
            }
        }
        d(&self.root)
    }
}
