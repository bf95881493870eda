//! Colored rooted trees (N-trees), canonical enumeration, and the
//! combinatorial functionals σ (symmetry) and γ (density).
//!
//! A tree carries one color per node, drawn from `1..=N`. Children are kept
//! as a multiset: two trees that differ only by a permutation of children
//! are the same tree, and the canonical encoding (depth-first serialization
//! with children sorted lexicographically) makes that identification a
//! plain byte comparison.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Default enumeration guard on the tree order.
pub const MAX_ORDER: u32 = 6;
/// Default enumeration guard on the number of colors.
pub const MAX_COLORS: u32 = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("tree order {got} exceeds the enumeration guard (max {max})")]
    OrderGuard { got: u32, max: u32 },
    #[error("{got} colors exceed the enumeration guard (max {max})")]
    ColorGuard { got: u32, max: u32 },
    #[error("order and color count must both be at least 1")]
    Degenerate,
}

/// Species/component index, `1..=N`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Color(u32);

impl Color {
    pub fn new(index: u32) -> Color {
        assert!(index >= 1, "colors are numbered from 1");
        Color(index)
    }

    /// One-based index as written in the method displays.
    pub fn index(self) -> u32 {
        self.0
    }

    /// Zero-based index for array access.
    pub fn idx0(self) -> usize {
        (self.0 - 1) as usize
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Shorthand constructor.
pub fn color(index: u32) -> Color {
    Color::new(index)
}

/// A colored rooted tree in canonical form.
#[derive(Clone, Debug)]
pub struct ColoredTree {
    color: Color,
    children: Vec<ColoredTree>,
    order: u32,
    encoding: Vec<u32>,
}

impl PartialEq for ColoredTree {
    fn eq(&self, other: &Self) -> bool {
        self.encoding == other.encoding
    }
}
impl Eq for ColoredTree {}

impl PartialOrd for ColoredTree {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for ColoredTree {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.encoding.cmp(&other.encoding)
    }
}

impl std::hash::Hash for ColoredTree {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.encoding.hash(state);
    }
}

impl ColoredTree {
    /// The single-node tree `•^[ν]`.
    pub fn leaf(color: Color) -> ColoredTree {
        ColoredTree {
            color,
            children: Vec::new(),
            order: 1,
            encoding: vec![1, color.index()],
        }
    }

    /// `[τ₁,..,τ_k]^[ν]`; children are re-sorted into canonical order.
    pub fn node(color: Color, mut children: Vec<ColoredTree>) -> ColoredTree {
        children.sort_by(|a, b| a.encoding.cmp(&b.encoding));
        let order = 1 + children.iter().map(|c| c.order).sum::<u32>();
        let mut encoding = Vec::with_capacity(2 * order as usize);
        encoding.push(order);
        encoding.push(color.index());
        for c in &children {
            encoding.extend_from_slice(&c.encoding);
        }
        ColoredTree { color, children, order, encoding }
    }

    pub fn root_color(&self) -> Color {
        self.color
    }

    /// Number of nodes |τ|.
    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn children(&self) -> &[ColoredTree] {
        &self.children
    }

    /// Depth-first canonical serialization: `order, color`, then the
    /// encodings of the children in lexicographic order.
    pub fn encoding(&self) -> &[u32] {
        &self.encoding
    }

    /// Run-length grouping `[τ₁^{m₁},..,τ_r^{m_r}]` of the sorted children.
    pub fn grouped_children(&self) -> Vec<(&ColoredTree, u32)> {
        let mut groups: Vec<(&ColoredTree, u32)> = Vec::new();
        for child in &self.children {
            match groups.last_mut() {
                Some((repr, count)) if *repr == child => *count += 1,
                _ => groups.push((child, 1)),
            }
        }
        groups
    }

    /// Symmetry σ(τ): the order of the automorphism group. Each group of
    /// `m` identical children contributes `m!` times one σ factor per copy.
    /// Depends on the coloring: distinct colors break child symmetry.
    pub fn symmetry(&self) -> u64 {
        let mut sigma = 1u64;
        for (child, m) in self.grouped_children() {
            sigma *= factorial(m);
            sigma *= child.symmetry().pow(m);
        }
        sigma
    }

    /// Density γ(τ) = |τ| · ∏ γ(τᵢ). Ignores colors entirely.
    pub fn density(&self) -> u64 {
        let mut gamma = self.order as u64;
        for child in &self.children {
            gamma *= child.density();
        }
        gamma
    }

    /// Number of *ordered* trees (children sequences instead of multisets)
    /// that canonicalize to this tree. The displayed tree families range
    /// over full color index tuples, so they count each canonical tree with
    /// exactly this multiplicity.
    pub fn ordered_count(&self) -> u64 {
        let k: u32 = self.grouped_children().iter().map(|(_, m)| m).sum();
        let mut count = factorial(k);
        for (child, m) in self.grouped_children() {
            count /= factorial(m);
            count *= child.ordered_count().pow(m);
        }
        count
    }

    /// Largest color index appearing anywhere in the tree.
    pub fn max_color(&self) -> u32 {
        self.children
            .iter()
            .map(ColoredTree::max_color)
            .max()
            .unwrap_or(1)
            .max(self.color.index())
    }

    /// All `s^|τ|` assignments of stage labels `0..s` to the nodes.
    pub fn labelings(&self, stages: usize) -> Labelings {
        Labelings::new(self, stages)
    }

    /// Nodes in depth-first preorder with parent links; the root is node 0.
    fn flatten(&self) -> Vec<FlatNode> {
        fn walk(tree: &ColoredTree, parent: Option<usize>, out: &mut Vec<FlatNode>) {
            let me = out.len();
            out.push(FlatNode { color: tree.color, parent });
            for child in &tree.children {
                walk(child, Some(me), out);
            }
        }
        let mut nodes = Vec::with_capacity(self.order as usize);
        walk(self, None, &mut nodes);
        nodes
    }
}

impl fmt::Display for ColoredTree {
    /// Bracket form, e.g. `[•^[1],•^[2]]^[3]`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.children.is_empty() {
            return write!(f, "•^[{}]", self.color);
        }
        write!(f, "[")?;
        for (i, child) in self.children.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{child}")?;
        }
        write!(f, "]^[{}]", self.color)
    }
}

fn factorial(n: u32) -> u64 {
    (1..=n as u64).product()
}

#[derive(Clone, Copy, Debug)]
struct FlatNode {
    color: Color,
    parent: Option<usize>,
}

/// One assignment of stage labels to the nodes of a tree.
#[derive(Clone, Debug)]
pub struct LabeledTree {
    nodes: Arc<Vec<FlatNode>>,
    labels: Vec<usize>,
}

/// A colored edge `e_{jk}^[ν]`: stage labels of the parent and child ends,
/// colored by the child's node color.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Edge {
    pub parent_label: usize,
    pub child_label: usize,
    pub color: Color,
}

impl LabeledTree {
    /// Label on the distinguished root node.
    pub fn root_label(&self) -> usize {
        self.labels[0]
    }

    pub fn root_color(&self) -> Color {
        self.nodes[0].color
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// The edge set E(τ) with labels filled in.
    pub fn edges(&self) -> Vec<Edge> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, node)| {
                node.parent.map(|p| Edge {
                    parent_label: self.labels[p],
                    child_label: self.labels[i],
                    color: node.color,
                })
            })
            .collect()
    }
}

/// Iterator over all label assignments, in mixed-radix counter order.
pub struct Labelings {
    nodes: Arc<Vec<FlatNode>>,
    stages: usize,
    counter: Option<Vec<usize>>,
}

impl Labelings {
    fn new(tree: &ColoredTree, stages: usize) -> Labelings {
        let nodes = Arc::new(tree.flatten());
        let counter = if stages == 0 { None } else { Some(vec![0; nodes.len()]) };
        Labelings { nodes, stages, counter }
    }
}

impl Iterator for Labelings {
    type Item = LabeledTree;

    fn next(&mut self) -> Option<LabeledTree> {
        let current = self.counter.as_ref()?.clone();
        let item = LabeledTree { nodes: Arc::clone(&self.nodes), labels: current };
        // Advance the counter; drop it once every digit has wrapped.
        let counter = self.counter.as_mut().unwrap();
        let mut done = true;
        for digit in counter.iter_mut() {
            *digit += 1;
            if *digit < self.stages {
                done = false;
                break;
            }
            *digit = 0;
        }
        if done {
            self.counter = None;
        }
        Some(item)
    }
}

/// All canonical N-trees up to a given order, grouped by order.
#[derive(Clone, Debug)]
pub struct NTreeSet {
    max_order: u32,
    colors: u32,
    by_order: Vec<Vec<ColoredTree>>,
}

impl NTreeSet {
    pub fn max_order(&self) -> u32 {
        self.max_order
    }

    pub fn colors(&self) -> u32 {
        self.colors
    }

    /// Trees of order exactly `q` in canonical (encoding) order.
    pub fn of_order(&self, q: u32) -> &[ColoredTree] {
        &self.by_order[(q - 1) as usize]
    }

    /// All trees, lowest order first.
    pub fn iter(&self) -> impl Iterator<Item = &ColoredTree> {
        self.by_order.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.by_order.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Enumerates all canonical colored rooted trees of order ≤ `q` with colors
/// `1..=n`, with the default desk-scale guards.
pub fn enumerate(q: u32, n: u32) -> Result<NTreeSet, TreeError> {
    enumerate_with_limits(q, n, MAX_ORDER, MAX_COLORS)
}

/// [`enumerate`] with caller-chosen guard limits.
pub fn enumerate_with_limits(
    q: u32,
    n: u32,
    max_order: u32,
    max_colors: u32,
) -> Result<NTreeSet, TreeError> {
    if q < 1 || n < 1 {
        return Err(TreeError::Degenerate);
    }
    if q > max_order {
        return Err(TreeError::OrderGuard { got: q, max: max_order });
    }
    if n > max_colors {
        return Err(TreeError::ColorGuard { got: n, max: max_colors });
    }

    let mut by_order: Vec<Vec<ColoredTree>> = Vec::with_capacity(q as usize);
    by_order.push((1..=n).map(|c| ColoredTree::leaf(color(c))).collect());

    for k in 2..=q {
        // A tree of order k is a colored root over a multiset of smaller
        // trees with total order k-1. Candidates are drawn in non-decreasing
        // canonical order so each multiset appears exactly once.
        let candidates: Vec<&ColoredTree> = by_order.iter().flatten().collect();
        let mut level: Vec<ColoredTree> = Vec::new();
        let mut stack: Vec<ColoredTree> = Vec::new();
        for c in 1..=n {
            collect_multisets(&candidates, 0, k - 1, color(c), &mut stack, &mut level);
        }
        level.sort();
        by_order.push(level);
    }

    Ok(NTreeSet { max_order: q, colors: n, by_order })
}

fn collect_multisets(
    candidates: &[&ColoredTree],
    start: usize,
    remaining: u32,
    root: Color,
    stack: &mut Vec<ColoredTree>,
    out: &mut Vec<ColoredTree>,
) {
    if remaining == 0 {
        out.push(ColoredTree::node(root, stack.clone()));
        return;
    }
    for (i, cand) in candidates.iter().enumerate().skip(start) {
        if cand.order() > remaining {
            continue;
        }
        stack.push((*cand).clone());
        collect_multisets(candidates, i, remaining - cand.order(), root, stack, out);
        stack.pop();
    }
}

/// σ/γ table for a whole set, memoized by encoding. Handy for NB-series
/// sums where the same subtrees recur.
pub fn functional_table(set: &NTreeSet) -> HashMap<Vec<u32>, (u64, u64)> {
    set.iter()
        .map(|t| (t.encoding().to_vec(), (t.symmetry(), t.density())))
        .collect()
}
