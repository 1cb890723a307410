//! The enumeration tree of all `h`-subsets of `{0, …, n−1}`.
//!
//! A node fixes an ordered set `s1` of observations in the subset and a set
//! `s0` of observations excluded from it. The `l`-th child of a node adds the
//! `l`-th candidate to `s1` and excludes the `l − 1` candidates before it, so
//! every `h`-subset is reached by exactly one leaf, whatever candidate order a
//! visitor chooses at each node.

/// A node of the subset tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeState {
    s1: Vec<usize>,
    s0: Vec<usize>,
}

impl NodeState {
    pub fn root() -> Self {
        Self { s1: Vec::new(), s0: Vec::new() }
    }

    /// Builds a node from explicit index sets.
    ///
    /// Returns `None` if the sets overlap or are infeasible for `(n, h)`.
    pub fn new(s1: Vec<usize>, s0: Vec<usize>, n: usize, h: usize) -> Option<Self> {
        let mut mark = vec![0u8; n];
        for &k in s1.iter().chain(&s0) {
            if k >= n || mark[k] != 0 {
                return None;
            }
            mark[k] = 1;
        }
        let node = Self { s1, s0 };
        node.is_feasible(n, h).then_some(node)
    }

    /// Observations fixed in, in the order they were added.
    pub fn s1(&self) -> &[usize] {
        &self.s1
    }

    /// Observations fixed out.
    pub fn s0(&self) -> &[usize] {
        &self.s0
    }

    pub fn depth(&self) -> usize {
        self.s1.len()
    }

    pub fn is_leaf(&self, h: usize) -> bool {
        self.s1.len() == h
    }

    pub fn is_feasible(&self, n: usize, h: usize) -> bool {
        self.s1.len() <= h && n >= self.s0.len() + h
    }

    /// Observations neither fixed in nor out, ascending.
    pub fn free(&self, n: usize) -> Vec<usize> {
        let mut fixed = vec![false; n];
        for &k in self.s1.iter().chain(&self.s0) {
            fixed[k] = true;
        }
        (0..n).filter(|&k| !fixed[k]).collect()
    }

    /// Number of children, `n − |s0| − h + 1`, or 0 at a leaf.
    pub fn child_count(&self, n: usize, h: usize) -> usize {
        if self.depth() >= h || n + 1 < self.s0.len() + h {
            0
        } else {
            n + 1 - self.s0.len() - h
        }
    }

    fn child(&self, candidates: &[usize], l: usize) -> Self {
        let mut s1 = Vec::with_capacity(self.s1.len() + 1);
        s1.extend_from_slice(&self.s1);
        s1.push(candidates[l]);
        let mut s0 = Vec::with_capacity(self.s0.len() + l);
        s0.extend_from_slice(&self.s0);
        s0.extend_from_slice(&candidates[..l]);
        Self { s1, s0 }
    }
}

/// Children of `node` in natural candidate order.
pub fn children(node: &NodeState, n: usize, h: usize) -> Vec<NodeState> {
    children_in_order(node, &node.free(n), n, h)
}

/// Children of `node` for a given order of its free candidates.
pub fn children_in_order(node: &NodeState, candidates: &[usize], n: usize, h: usize) -> Vec<NodeState> {
    (0..node.child_count(n, h)).map(|l| node.child(candidates, l)).collect()
}

/// Binomial coefficient, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc · (n − i) / (i + 1) stays integral at every step.
        let num = (n - i) as u128;
        let den = (i + 1) as u128;
        let g = gcd(acc, den);
        let (a, dn) = (acc / g, den / g);
        let num = num / dn;
        acc = match a.checked_mul(num) {
            Some(v) => v,
            None => return u128::MAX,
        };
    }
    acc
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Number of leaves below `node`: `C(n − |s0| − |s1|, h − |s1|)`.
pub fn leaves_below(node: &NodeState, n: usize, h: usize) -> u128 {
    leaves_below_capped(node, n, h, u128::MAX)
}

/// As [`leaves_below`], saturating at `cap`.
pub fn leaves_below_capped(node: &NodeState, n: usize, h: usize, cap: u128) -> u128 {
    if !node.is_feasible(n, h) {
        return 0;
    }
    let free = n - node.s0.len() - node.s1.len();
    binomial(free, h - node.s1.len()).min(cap)
}

/// Order in which a node's free candidates become children.
#[derive(Debug, Clone, PartialEq)]
pub struct ChildOrder {
    order: Vec<usize>,
    scores: Vec<f64>,
}

impl ChildOrder {
    /// Sorts `candidates` by descending score, ties by ascending index.
    pub fn descending(candidates: &[usize], scores: &[f64]) -> Self {
        Self::sorted(candidates, scores, true)
    }

    /// Sorts `candidates` by ascending score, ties by ascending index.
    pub fn ascending(candidates: &[usize], scores: &[f64]) -> Self {
        Self::sorted(candidates, scores, false)
    }

    fn sorted(candidates: &[usize], scores: &[f64], desc: bool) -> Self {
        assert_eq!(candidates.len(), scores.len());
        let mut pairs: Vec<(usize, f64)> = candidates.iter().copied().zip(scores.iter().copied()).collect();
        pairs.sort_by(|a, b| {
            let by_score = if desc { b.1.total_cmp(&a.1) } else { a.1.total_cmp(&b.1) };
            by_score.then(a.0.cmp(&b.0))
        });
        Self { order: pairs.iter().map(|p| p.0).collect(), scores: pairs.iter().map(|p| p.1).collect() }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    fn is_permutation_of(&self, candidates: &[usize]) -> bool {
        let mut a = self.order.clone();
        a.sort_unstable();
        a == candidates
    }
}

/// What to do with a visited node.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Prune,
    Descend,
    Order(ChildOrder),
}

/// Callbacks driving [`dfs`].
///
/// Each node carries a payload derived from its parent's, so per-node state
/// (such as a least-squares fit) lives on the traversal stack.
pub trait Visitor {
    type Payload;

    fn visit(&mut self, node: &NodeState, payload: &Self::Payload) -> Decision;

    /// Payload of `child`, obtained from `parent` by adding observation `added`.
    fn derive(&mut self, parent: &Self::Payload, child: &NodeState, added: usize) -> Self::Payload;
}

impl<F> Visitor for F
where
    F: FnMut(&NodeState) -> Decision,
{
    type Payload = ();

    fn visit(&mut self, node: &NodeState, _: &()) -> Decision {
        self(node)
    }

    fn derive(&mut self, _: &(), _: &NodeState, _: usize) {}
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TraversalStats {
    pub nodes_visited: u64,
    pub pruned_subtrees: u64,
    pub leaves_reached: u64,
}

struct Frame<P> {
    node: NodeState,
    payload: P,
    candidates: Vec<usize>,
    next: usize,
    count: usize,
}

/// Depth-first traversal from `root`.
pub fn dfs<V: Visitor>(
    root: NodeState,
    root_payload: V::Payload,
    n: usize,
    h: usize,
    visitor: &mut V,
) -> TraversalStats {
    let mut stats = TraversalStats::default();
    let mut stack: Vec<Frame<V::Payload>> = Vec::with_capacity(h + 1);

    let mut pending = Some((root, root_payload));
    loop {
        if let Some((node, payload)) = pending.take() {
            stats.nodes_visited += 1;
            let leaf = node.is_leaf(h);
            if leaf {
                stats.leaves_reached += 1;
            }
            let decision = visitor.visit(&node, &payload);
            if !leaf {
                let candidates = match decision {
                    Decision::Prune => {
                        stats.pruned_subtrees += 1;
                        None
                    }
                    Decision::Descend => Some(node.free(n)),
                    Decision::Order(order) => {
                        let free = node.free(n);
                        assert!(order.is_permutation_of(&free), "child order is not a permutation of the free set");
                        Some(order.order)
                    }
                };
                if let Some(candidates) = candidates {
                    let count = node.child_count(n, h);
                    stack.push(Frame { node, payload, candidates, next: 0, count });
                }
            }
        }

        let Some(top) = stack.last_mut() else { break };
        if top.next == top.count {
            stack.pop();
            continue;
        }
        let l = top.next;
        top.next += 1;
        let child = top.node.child(&top.candidates, l);
        let added = top.candidates[l];
        let payload = visitor.derive(&top.payload, &child, added);
        pending = Some((child, payload));
    }
    stats
}
