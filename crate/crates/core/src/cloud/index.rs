//! Ball tree over the Korányi metric.
//!
//! Pruning uses the triangle inequality with a small relative slack, and
//! every candidate is compared individually with the same argument order as
//! a linear scan, so query results coincide exactly with brute force.

use crate::hgroup::{dist, HPoint};

const LEAF: usize = 16;

#[derive(Debug, Clone)]
struct Node {
    pivot: usize,
    radius: f64,
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Default)]
pub struct BallTree {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

#[inline]
fn slack(a: f64, b: f64, c: f64) -> f64 {
    1e-9 * (a.abs() + b.abs() + c.abs()) + 1e-300
}

impl BallTree {
    pub fn build(points: &[HPoint]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            let len = order.len();
            build_rec(points, &mut order, 0, len, &mut nodes);
        }
        BallTree { nodes, order }
    }

    /// Indices within distance `r` (closed ball), in increasing order.
    pub fn ball(&self, points: &[HPoint], center: &HPoint, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.visit_ball(points, center, r, &mut |i, _| out.push(i));
        out.sort_unstable();
        out
    }

    /// Calls `f(index, distance)` for every point with `d(point, center) <= r`, in tree order.
    pub fn visit_ball(&self, points: &[HPoint], center: &HPoint, r: f64, f: &mut impl FnMut(usize, f64)) {
        if self.nodes.is_empty() || r.is_nan() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            let dp = dist(&points[node.pivot], center);
            if dp - node.radius > r + slack(dp, node.radius, r) {
                continue;
            }
            match node.children {
                Some((a, b)) => {
                    stack.push(b);
                    stack.push(a);
                }
                None => {
                    for &i in &self.order[node.start..node.end] {
                        let d = dist(&points[i], center);
                        if d <= r {
                            f(i, d);
                        }
                    }
                }
            }
        }
    }

    /// Nearest accepted point within `max_r`; ties go to the lower index.
    pub fn nearest_filtered(
        &self,
        points: &[HPoint],
        center: &HPoint,
        max_r: f64,
        accept: impl Fn(usize) -> bool,
    ) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        let mut bound = max_r;
        let mut stack = vec![(0usize, dist(&points[self.nodes[0].pivot], center))];
        while let Some((ni, dp)) = stack.pop() {
            let node = &self.nodes[ni];
            if dp - node.radius > bound + slack(dp, node.radius, bound) {
                continue;
            }
            match node.children {
                Some((a, b)) => {
                    let da = dist(&points[self.nodes[a].pivot], center);
                    let db = dist(&points[self.nodes[b].pivot], center);
                    // visit the closer child first
                    if da <= db {
                        stack.push((b, db));
                        stack.push((a, da));
                    } else {
                        stack.push((a, da));
                        stack.push((b, db));
                    }
                }
                None => {
                    for &i in &self.order[node.start..node.end] {
                        let d = dist(&points[i], center);
                        if d > bound || !accept(i) {
                            continue;
                        }
                        let better = match best {
                            None => true,
                            Some((bi, bd)) => d < bd || (d == bd && i < bi),
                        };
                        if better {
                            best = Some((i, d));
                            bound = d;
                        }
                    }
                }
            }
        }
        best
    }

    /// Largest distance from `center` to any point.
    pub fn farthest(&self, points: &[HPoint], center: &HPoint) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            let dp = dist(&points[node.pivot], center);
            if let Some((_, bd)) = best {
                if dp + node.radius + slack(dp, node.radius, bd) < bd {
                    continue;
                }
            }
            match node.children {
                Some((a, b)) => {
                    stack.push(b);
                    stack.push(a);
                }
                None => {
                    for &i in &self.order[node.start..node.end] {
                        let d = dist(&points[i], center);
                        let better = match best {
                            None => true,
                            Some((bi, bd)) => d > bd || (d == bd && i < bi),
                        };
                        if better {
                            best = Some((i, d));
                        }
                    }
                }
            }
        }
        best
    }
}

fn build_rec(points: &[HPoint], order: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let slice = &mut order[start..end];
    let pivot = *slice.iter().min().unwrap();
    let radius = slice
        .iter()
        .map(|&i| dist(&points[i], &points[pivot]))
        .fold(0.0, f64::max);
    let id = nodes.len();
    nodes.push(Node {
        pivot,
        radius,
        start,
        end,
        children: None,
    });
    if end - start <= LEAF || radius == 0.0 {
        return id;
    }
    // split around two far-apart anchors
    let a = far_from(points, slice, pivot);
    let b = far_from(points, slice, a);
    let mut keyed: Vec<(f64, usize)> = slice
        .iter()
        .map(|&i| (dist(&points[i], &points[a]) - dist(&points[i], &points[b]), i))
        .collect();
    keyed.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    for (s, (_, i)) in slice.iter_mut().zip(&keyed) {
        *s = *i;
    }
    let mid = start + (end - start) / 2;
    let left = build_rec(points, order, start, mid, nodes);
    let right = build_rec(points, order, mid, end, nodes);
    nodes[id].children = Some((left, right));
    id
}

fn far_from(points: &[HPoint], idx: &[usize], from: usize) -> usize {
    let mut best = from;
    let mut bd = -1.0;
    for &i in idx {
        let d = dist(&points[i], &points[from]);
        if d > bd || (d == bd && i < best) {
            bd = d;
            best = i;
        }
    }
    best
}

/// Exact diameter of a point subset, with pruning around an anchor.
pub fn exact_diameter(points: &[HPoint], idx: &[usize]) -> f64 {
    if idx.len() < 2 {
        return 0.0;
    }
    let anchor = idx[0];
    let a = far_from(points, idx, anchor);
    let b = far_from(points, idx, a);
    let mut best = dist(&points[a], &points[b]);
    let mut byd: Vec<(f64, usize)> = idx.iter().map(|&i| (dist(&points[i], &points[a]), i)).collect();
    byd.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    for (ia, &(da, i)) in byd.iter().enumerate() {
        if da + byd[0].0 <= best {
            break;
        }
        for &(db, j) in &byd[..ia] {
            if da + db <= best {
                break;
            }
            let d = dist(&points[i], &points[j]);
            if d > best {
                best = d;
            }
        }
    }
    best
}
