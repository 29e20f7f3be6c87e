//! Barnes-Hut quadtree over a 2-D layout.

use crate::scalar::Scalar;

const MAX_DEPTH: usize = 32;
const NO_CHILD: usize = usize::MAX;

#[derive(Debug, Clone)]
struct Node<T> {
    cx: T,
    cy: T,
    half: T,
    com: [T; 2],
    count: usize,
    first_child: usize,
    // leaf contents; more than one point only for coincident points at MAX_DEPTH
    points: Vec<usize>,
}

impl<T: Scalar> Node<T> {
    fn new(cx: T, cy: T, half: T) -> Self {
        Node {
            cx,
            cy,
            half,
            com: [T::zero(); 2],
            count: 0,
            first_child: NO_CHILD,
            points: Vec::new(),
        }
    }

    fn quadrant(&self, p: [T; 2]) -> usize {
        (usize::from(p[0] >= self.cx)) | (usize::from(p[1] >= self.cy) << 1)
    }

    fn contains(&self, p: [T; 2]) -> bool {
        (p[0] - self.cx).abs() <= self.half && (p[1] - self.cy).abs() <= self.half
    }
}

#[derive(Debug, Clone)]
pub struct QuadTree<T> {
    nodes: Vec<Node<T>>,
    pos: Vec<[T; 2]>,
}

/// Repulsion summary for one point: `Σ w` and `Σ w² (y_i − y_j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Repulsion<T> {
    pub z: T,
    pub force: [T; 2],
}

impl<T: Scalar> QuadTree<T> {
    /// Builds the tree by inserting points in index order.
    pub fn build(layout: &[T]) -> Self {
        let pos: Vec<[T; 2]> = layout.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let (mut lo, mut hi) = ([T::infinity(); 2], [T::neg_infinity(); 2]);
        for p in &pos {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let two = T::of(2.0);
        let (cx, cy) = ((lo[0] + hi[0]) / two, (lo[1] + hi[1]) / two);
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let half = (span / two) * T::of(1.0 + 1e-5) + T::of(1e-5);

        let mut tree = QuadTree {
            nodes: vec![Node::new(cx, cy, half)],
            pos,
        };
        for i in 0..tree.pos.len() {
            tree.insert(i);
        }
        for node in &mut tree.nodes {
            if node.count > 0 {
                let c = T::of_usize(node.count);
                node.com = [node.com[0] / c, node.com[1] / c];
            }
        }
        tree
    }

    fn insert(&mut self, i: usize) {
        let p = self.pos[i];
        let mut idx = 0;
        let mut depth = 0;
        loop {
            {
                let node = &mut self.nodes[idx];
                node.com[0] += p[0];
                node.com[1] += p[1];
                node.count += 1;
            }
            if self.nodes[idx].first_child == NO_CHILD {
                if self.nodes[idx].points.is_empty() || depth >= MAX_DEPTH {
                    self.nodes[idx].points.push(i);
                    return;
                }
                self.subdivide(idx);
                // push the resident point down one level
                let resident = self.nodes[idx].points.pop().expect("leaf had a point");
                let rp = self.pos[resident];
                let child = self.nodes[idx].first_child + self.nodes[idx].quadrant(rp);
                let c = &mut self.nodes[child];
                c.com[0] += rp[0];
                c.com[1] += rp[1];
                c.count += 1;
                c.points.push(resident);
            }
            idx = self.nodes[idx].first_child + self.nodes[idx].quadrant(p);
            depth += 1;
        }
    }

    fn subdivide(&mut self, idx: usize) {
        let (cx, cy, half) = (self.nodes[idx].cx, self.nodes[idx].cy, self.nodes[idx].half);
        let q = half / T::of(2.0);
        let first = self.nodes.len();
        for k in 0..4 {
            let ox = if k & 1 == 1 { q } else { -q };
            let oy = if k & 2 == 2 { q } else { -q };
            self.nodes.push(Node::new(cx + ox, cy + oy, q));
        }
        self.nodes[idx].first_child = first;
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    /// Approximate repulsion on point `i`. A cell is summarized by its centre of
    /// mass when `cell_size / distance < theta` and it does not contain `y_i`.
    pub fn repulsion(&self, i: usize, theta: T) -> Repulsion<T> {
        let yi = self.pos[i];
        let mut z = T::zero();
        let mut force = [T::zero(); 2];
        let mut stack = vec![0usize];
        while let Some(idx) = stack.pop() {
            let node = &self.nodes[idx];
            if node.count == 0 {
                continue;
            }
            if node.first_child == NO_CHILD {
                for &j in &node.points {
                    if j == i {
                        continue;
                    }
                    let (dx, dy) = (yi[0] - self.pos[j][0], yi[1] - self.pos[j][1]);
                    let w = T::one() / (T::one() + dx * dx + dy * dy);
                    z += w;
                    force[0] += w * w * dx;
                    force[1] += w * w * dy;
                }
                continue;
            }
            let (dx, dy) = (yi[0] - node.com[0], yi[1] - node.com[1]);
            let d2 = dx * dx + dy * dy;
            let size = node.half * T::of(2.0);
            if !node.contains(yi) && size * size < theta * theta * d2 {
                let c = T::of_usize(node.count);
                let w = T::one() / (T::one() + d2);
                z += c * w;
                force[0] += c * w * w * dx;
                force[1] += c * w * w * dy;
            } else {
                // reversed so children are visited in quadrant order
                for k in (0..4).rev() {
                    stack.push(node.first_child + k);
                }
            }
        }
        Repulsion { z, force }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(layout: &[f64], i: usize) -> Repulsion<f64> {
        let n = layout.len() / 2;
        let mut r = Repulsion { z: 0.0, force: [0.0; 2] };
        for j in 0..n {
            if j == i {
                continue;
            }
            let dx = layout[2 * i] - layout[2 * j];
            let dy = layout[2 * i + 1] - layout[2 * j + 1];
            let w = 1.0 / (1.0 + dx * dx + dy * dy);
            r.z += w;
            r.force[0] += w * w * dx;
            r.force[1] += w * w * dy;
        }
        r
    }

    #[test]
    fn theta_zero_is_exact() {
        let layout: Vec<f64> = (0..80).map(|k| ((k * 37 % 23) as f64 - 11.0) * 0.7).collect();
        let tree = QuadTree::build(&layout);
        for i in 0..40 {
            let a = tree.repulsion(i, 0.0);
            let b = brute(&layout, i);
            assert!((a.z - b.z).abs() < 1e-12);
            assert!((a.force[0] - b.force[0]).abs() < 1e-12);
            assert!((a.force[1] - b.force[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn coincident_points_terminate() {
        let layout = vec![0.5f64; 20];
        let tree = QuadTree::build(&layout);
        let r = tree.repulsion(3, 0.5);
        assert!((r.z - 9.0).abs() < 1e-12);
        assert_eq!(r.force, [0.0, 0.0]);
    }
}
