//! CART regression/classification trees over presorted feature orders.
//!
//! Both criteria reduce to weighted variance of a real target: Gini impurity
//! of a 0/1 target equals twice its weighted variance, so the split search is
//! shared and only the impurity scale and leaf values differ.
//!
//! Thresholds are midpoints between consecutive distinct values; a row goes
//! left when `x[feature] <= threshold`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::seeds::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Criterion {
    Gini,
    Mse,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeParams {
    pub criterion: Criterion,
    pub max_depth: Option<usize>,
    /// Features examined per split before falling back to the rest.
    pub max_features: usize,
}

/// Per-feature row orders, ascending by value, built once per dataset.
pub(crate) struct Presorted {
    orders: Vec<Vec<u32>>,
}

impl Presorted {
    pub fn new(x: &Matrix) -> Self {
        let orders = (0..x.cols())
            .map(|j| {
                let mut idx: Vec<u32> = (0..x.rows() as u32).collect();
                idx.sort_by(|&a, &b| x.get(a as usize, j).total_cmp(&x.get(b as usize, j)));
                idx
            })
            .collect();
        Presorted { orders }
    }
}

pub(crate) struct TreeFit {
    pub tree: Tree,
    /// Weighted impurity decrease per feature, divided by the root weight.
    pub importance: Vec<f64>,
}

#[derive(Clone, Copy, Default)]
struct Stats {
    w: f64,
    s: f64,
    q: f64,
}

impl Stats {
    fn add(&mut self, w: f64, t: f64) {
        self.w += w;
        self.s += w * t;
        self.q += w * t * t;
    }

    /// Weighted sum of squared deviations from the weighted mean.
    fn sse(&self) -> f64 {
        if self.w <= 0.0 {
            0.0
        } else {
            (self.q - self.s * self.s / self.w).max(0.0)
        }
    }
}

struct Best {
    feature: usize,
    threshold: f64,
    proxy: f64,
}

/// Grows one tree on rows with positive weight.
///
/// `leaf_value` maps the rows of a finished leaf to its output.
pub(crate) fn build_tree(
    x: &Matrix,
    presorted: &Presorted,
    target: &[f64],
    weights: &[f64],
    params: TreeParams,
    rng: &mut Rng,
    leaf_value: &mut dyn FnMut(&[u32]) -> f64,
) -> TreeFit {
    let d = x.cols();
    let mut orders: Vec<Vec<u32>> = presorted
        .orders
        .iter()
        .map(|o| o.iter().copied().filter(|&r| weights[r as usize] > 0.0).collect())
        .collect();
    let n_active = orders[0].len();
    let scale = match params.criterion {
        Criterion::Gini => 2.0,
        Criterion::Mse => 1.0,
    };
    let mut importance = vec![0.0; d];
    let mut nodes: Vec<Node> = vec![Node::Leaf { value: 0.0 }];
    let mut goes_left = vec![false; x.rows()];
    let mut scratch: Vec<u32> = Vec::with_capacity(n_active);
    let mut features: Vec<usize> = (0..d).collect();

    let mut root = Stats::default();
    for &r in &orders[0] {
        root.add(weights[r as usize], target[r as usize]);
    }
    let root_w = root.w;

    // (node index, lo, hi, depth)
    let mut stack = vec![(0usize, 0usize, n_active, 0usize)];
    while let Some((node, lo, hi, depth)) = stack.pop() {
        let mut parent = Stats::default();
        for &r in &orders[0][lo..hi] {
            parent.add(weights[r as usize], target[r as usize]);
        }
        let parent_sse = parent.sse();
        let depth_ok = params.max_depth.is_none_or(|m| depth < m);
        let best = if depth_ok && hi - lo >= 2 && parent_sse > 1e-12 * parent.w.max(1.0) {
            find_split(x, &orders, lo, hi, target, weights, parent, params, rng, &mut features)
        } else {
            None
        };
        let Some(best) = best else {
            nodes[node] = Node::Leaf {
                value: leaf_value(&orders[0][lo..hi]),
            };
            continue;
        };

        let mut left = Stats::default();
        let mut n_left = 0;
        for &r in &orders[0][lo..hi] {
            let l = x.get(r as usize, best.feature) <= best.threshold;
            goes_left[r as usize] = l;
            if l {
                left.add(weights[r as usize], target[r as usize]);
                n_left += 1;
            }
        }
        let right = Stats {
            w: parent.w - left.w,
            s: parent.s - left.s,
            q: parent.q - left.q,
        };
        let decrease = (parent_sse - left.sse() - right.sse()).max(0.0);
        importance[best.feature] += scale * decrease / root_w;

        for order in orders.iter_mut() {
            scratch.clear();
            let seg = &mut order[lo..hi];
            let mut k = 0;
            for i in 0..seg.len() {
                let r = seg[i];
                if goes_left[r as usize] {
                    seg[k] = r;
                    k += 1;
                } else {
                    scratch.push(r);
                }
            }
            seg[k..].copy_from_slice(&scratch);
        }

        let l_idx = nodes.len();
        nodes.push(Node::Leaf { value: 0.0 });
        nodes.push(Node::Leaf { value: 0.0 });
        nodes[node] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l_idx,
            right: l_idx + 1,
        };
        stack.push((l_idx + 1, lo + n_left, hi, depth + 1));
        stack.push((l_idx, lo, lo + n_left, depth + 1));
    }

    TreeFit {
        tree: Tree { nodes },
        importance,
    }
}

#[allow(clippy::too_many_arguments)]
fn find_split(
    x: &Matrix,
    orders: &[Vec<u32>],
    lo: usize,
    hi: usize,
    target: &[f64],
    weights: &[f64],
    parent: Stats,
    params: TreeParams,
    rng: &mut Rng,
    features: &mut [usize],
) -> Option<Best> {
    let d = features.len();
    if params.max_features < d {
        features.shuffle(rng);
    }
    let mut best: Option<Best> = None;
    for (visited, &f) in features.iter().enumerate() {
        // keep drawing features past the quota until some split is valid
        if visited >= params.max_features && best.is_some() {
            break;
        }
        let seg = &orders[f][lo..hi];
        let mut left = Stats::default();
        for k in 0..seg.len() - 1 {
            let r = seg[k] as usize;
            left.add(weights[r], target[r]);
            let v = x.get(r, f);
            let next = x.get(seg[k + 1] as usize, f);
            if next <= v {
                continue;
            }
            let rw = parent.w - left.w;
            let rs = parent.s - left.s;
            // maximizing s_l^2/w_l + s_r^2/w_r minimizes child impurity
            let proxy = left.s * left.s / left.w + rs * rs / rw;
            if best.as_ref().is_none_or(|b| proxy > b.proxy) {
                let mut threshold = 0.5 * (v + next);
                if threshold >= next {
                    threshold = v;
                }
                best = Some(Best {
                    feature: f,
                    threshold,
                    proxy,
                });
            }
        }
    }
    best
}
