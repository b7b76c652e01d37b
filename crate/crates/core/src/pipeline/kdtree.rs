//! Two-dimensional KD-tree over (lat, lon) points in plain degree space.

/// Static KD-tree. Queries return the index of the nearest point by
/// Euclidean distance; among equally near points the lowest index wins.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<[f64; 2]>,
    nodes: Vec<Node>,
    root: Option<usize>,
}

#[derive(Clone, Debug)]
struct Node {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

impl KdTree {
    pub fn new(points: &[(f64, f64)]) -> Self {
        let points: Vec<[f64; 2]> = points.iter().map(|&(a, b)| [a, b]).collect();
        let mut idx: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build(&points, &mut idx, 0, &mut nodes);
        Self { points, nodes, root }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point index, or `None` for an empty tree.
    pub fn nearest(&self, q: (f64, f64)) -> Option<usize> {
        let q = [q.0, q.1];
        let mut best = (f64::INFINITY, usize::MAX);
        if let Some(r) = self.root {
            self.search(r, &q, &mut best);
        }
        (best.1 != usize::MAX).then_some(best.1)
    }

    fn search(&self, n: usize, q: &[f64; 2], best: &mut (f64, usize)) {
        let node = &self.nodes[n];
        let p = &self.points[node.point];
        let d = dist2(p, q);
        if d < best.0 || (d == best.0 && node.point < best.1) {
            *best = (d, node.point);
        }
        let diff = q[node.axis] - p[node.axis];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(c) = near {
            self.search(c, q, best);
        }
        // Equal distance across the plane can still hide a lower index.
        if diff * diff <= best.0 {
            if let Some(c) = far {
                self.search(c, q, best);
            }
        }
    }
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    d0 * d0 + d1 * d1
}

fn build(points: &[[f64; 2]], idx: &mut [usize], depth: usize, nodes: &mut Vec<Node>) -> Option<usize> {
    if idx.is_empty() {
        return None;
    }
    let axis = depth % 2;
    idx.sort_by(|&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    let mid = idx.len() / 2;
    let slot = nodes.len();
    nodes.push(Node {
        point: idx[mid],
        axis,
        left: None,
        right: None,
    });
    let (lo, hi) = idx.split_at_mut(mid);
    let left = build(points, lo, depth + 1, nodes);
    let right = build(points, &mut hi[1..], depth + 1, nodes);
    nodes[slot].left = left;
    nodes[slot].right = right;
    Some(slot)
}

/// Maps every model point to its nearest forcing point.
pub fn kdtree_map(model_points: &[(f64, f64)], forcing_points: &[(f64, f64)]) -> Vec<usize> {
    let tree = KdTree::new(forcing_points);
    model_points
        .iter()
        .map(|&q| tree.nearest(q).expect("forcing point set is non-empty"))
        .collect()
}
