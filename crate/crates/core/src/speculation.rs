//! Draft-token tree construction and selection.
//!
//! Given a pattern anchor in a suffix tree, a speculation tree is grown
//! greedily: at each step the frontier node with the highest estimated
//! acceptance probability is added, where a node's probability is the product
//! of empirical child-frequency ratios along the path from the anchor. The
//! tree's score (the sum of those probabilities, anchor included) estimates
//! the tokens emitted if it is verified, and drives both candidate selection
//! across the two trees and the score-threshold fallback policy.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{EngineConfig, FrontierMode};
use crate::corpus::TokenId;
use crate::suffix_tree::{NodeRef, PatternMatch, SuffixTree, TreeRole};

/// One node of a speculation tree. Index 0 is the anchor sentinel; draft
/// nodes follow in greedy-add order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpecNode {
    pub token: TokenId,
    /// Index of the parent within the tree; `None` for the anchor sentinel.
    pub parent: Option<usize>,
    /// Estimated probability this node's token is accepted (1 at the anchor,
    /// non-increasing along every path).
    #[serde(rename = "d")]
    pub d_value: f64,
    /// Occurrence count copied from the suffix tree.
    pub count: u64,
}

/// A scored draft-token tree rooted at a matched pattern node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeculationTree {
    pub source: TreeRole,
    pub pattern_len: usize,
    /// Sum of `d` over all nodes, sentinel included; at least 1.
    pub score: f64,
    pub nodes: Vec<SpecNode>,
}

impl SpeculationTree {
    /// Number of draft tokens (every node except the anchor sentinel).
    pub fn draft_count(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Indices of the children of node `idx`.
    pub fn children_of(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.parent == Some(idx))
            .map(|(i, _)| i)
    }

    /// Debug serialization: `{source, pattern_len, score, nodes:[...]}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("speculation trees serialize")
    }
}

/// Empirical probability of `node`'s token among its siblings:
/// `count(node) / sum of counts over its parent's children`.
///
/// Returns `None` for the root, which has no siblings.
pub fn child_prob(tree: &SuffixTree, node: NodeRef) -> Option<f64> {
    let parent = tree.parent(node)?;
    let total = tree.child_count_sum(parent);
    Some(tree.count(node) as f64 / total as f64)
}

/// Estimated acceptance probability of `node` relative to `anchor`: 1 for
/// the anchor itself, otherwise the product of [`child_prob`] along the
/// anchor-to-node path. Returns `None` if `node` is not under `anchor`.
pub fn d_value(tree: &SuffixTree, anchor: NodeRef, node: NodeRef) -> Option<f64> {
    let mut chain = Vec::new();
    let mut cur = node;
    while cur != anchor {
        chain.push(cur);
        cur = tree.parent(cur)?;
    }
    let mut d = 1.0;
    for n in chain.into_iter().rev() {
        d *= child_prob(tree, n).expect("path nodes are below the root");
    }
    Some(d)
}

/// Node budget for a pattern of length `p`: `floor(alpha * p)`, at least 1.
pub fn adaptive_max_spec(p: usize, alpha: f64) -> usize {
    ((alpha * p as f64).floor() as usize).max(1)
}

struct FrontierEntry {
    d: f64,
    count: u64,
    token: TokenId,
    parent_idx: usize,
    node: NodeRef,
}

impl FrontierEntry {
    /// Tie-break order: higher d, then higher count, then lower token id,
    /// then earlier parent index. Total because (parent, token) is unique.
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.d
            .total_cmp(&other.d)
            .then(self.count.cmp(&other.count))
            .then(other.token.cmp(&self.token))
            .then(other.parent_idx.cmp(&self.parent_idx))
    }
}

impl PartialEq for FrontierEntry {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}
impl Eq for FrontierEntry {}
impl PartialOrd for FrontierEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.key_cmp(other))
    }
}
impl Ord for FrontierEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

/// Greedily expands a speculation tree from `anchor` until it holds
/// `max_spec` nodes (sentinel included) or the frontier empties.
///
/// Panics if `max_spec` is zero.
pub fn expand_speculation_tree(
    tree: &SuffixTree,
    anchor: &PatternMatch,
    max_spec: usize,
) -> SpeculationTree {
    expand_with_mode(tree, anchor, max_spec, FrontierMode::AllNodes)
}

/// [`expand_speculation_tree`] with an explicit frontier mode.
pub fn expand_with_mode(
    tree: &SuffixTree,
    anchor: &PatternMatch,
    max_spec: usize,
    mode: FrontierMode,
) -> SpeculationTree {
    assert!(max_spec >= 1, "max_spec must be at least 1");
    let mut nodes = vec![SpecNode {
        token: tree.token(anchor.node).unwrap_or(0),
        parent: None,
        d_value: 1.0,
        count: tree.count(anchor.node),
    }];
    match mode {
        FrontierMode::AllNodes => expand_all_nodes(tree, anchor.node, max_spec, &mut nodes),
        FrontierMode::LeavesOnly => expand_leaves_only(tree, anchor.node, max_spec, &mut nodes),
    }
    let score = nodes.iter().map(|n| n.d_value).sum();
    SpeculationTree {
        source: tree.role(),
        pattern_len: anchor.pattern_len,
        score,
        nodes,
    }
}

fn push_children(
    tree: &SuffixTree,
    node: NodeRef,
    parent_idx: usize,
    parent_d: f64,
    heap: &mut BinaryHeap<FrontierEntry>,
) {
    let total = tree.child_count_sum(node);
    if total == 0 {
        return;
    }
    for (token, child) in tree.children(node) {
        let count = tree.count(child);
        heap.push(FrontierEntry {
            d: parent_d * (count as f64 / total as f64),
            count,
            token,
            parent_idx,
            node: child,
        });
    }
}

fn expand_all_nodes(tree: &SuffixTree, anchor: NodeRef, max_spec: usize, nodes: &mut Vec<SpecNode>) {
    // Every frontier entry is keyed by a unique (parent, token), so the heap
    // is exactly the frontier: children of nodes in the tree not yet added.
    let mut heap = BinaryHeap::new();
    push_children(tree, anchor, 0, 1.0, &mut heap);
    while nodes.len() < max_spec {
        let Some(top) = heap.pop() else { break };
        let idx = nodes.len();
        nodes.push(SpecNode {
            token: top.token,
            parent: Some(top.parent_idx),
            d_value: top.d,
            count: top.count,
        });
        push_children(tree, top.node, idx, top.d, &mut heap);
    }
}

fn expand_leaves_only(
    tree: &SuffixTree,
    anchor: NodeRef,
    max_spec: usize,
    nodes: &mut Vec<SpecNode>,
) {
    // Literal children-of-leaves frontier: eligibility changes as nodes gain
    // in-tree children, so recompute the argmax each step.
    let mut suffix_refs = vec![anchor];
    let mut has_child_in_tree = vec![false];
    while nodes.len() < max_spec {
        let mut best: Option<FrontierEntry> = None;
        for (idx, &node_ref) in suffix_refs.iter().enumerate() {
            if has_child_in_tree[idx] {
                continue;
            }
            let total = tree.child_count_sum(node_ref);
            if total == 0 {
                continue;
            }
            for (token, child) in tree.children(node_ref) {
                let count = tree.count(child);
                let entry = FrontierEntry {
                    d: nodes[idx].d_value * (count as f64 / total as f64),
                    count,
                    token,
                    parent_idx: idx,
                    node: child,
                };
                if best
                    .as_ref()
                    .map_or(true, |b| entry.key_cmp(b) == Ordering::Greater)
                {
                    best = Some(entry);
                }
            }
        }
        let Some(top) = best else { break };
        nodes.push(SpecNode {
            token: top.token,
            parent: Some(top.parent_idx),
            d_value: top.d,
            count: top.count,
        });
        suffix_refs.push(top.node);
        has_child_in_tree[top.parent_idx] = true;
        has_child_in_tree.push(false);
    }
}

fn source_rank(role: TreeRole) -> u8 {
    match role {
        TreeRole::Global => 0,
        TreeRole::PerRequest => 1,
    }
}

/// True when `cand` beats `best` under the candidate ordering: higher score,
/// then longer pattern, then per-request over global.
fn improves(cand: &SpeculationTree, best: Option<&SpeculationTree>) -> bool {
    let Some(best) = best else { return true };
    cand.score
        .total_cmp(&best.score)
        .then(cand.pattern_len.cmp(&best.pattern_len))
        .then(source_rank(cand.source).cmp(&source_rank(best.source)))
        == Ordering::Greater
}

/// Builds candidates over both trees and every pattern length up to the
/// configured maximum, returning the best-scoring speculation tree, or
/// `None` when every pattern misses (or the context is empty).
pub fn generate_candidate_tree(
    global: Option<&SuffixTree>,
    per_request: Option<&SuffixTree>,
    context: &[TokenId],
    cfg: &EngineConfig,
) -> Option<SpeculationTree> {
    let mut best: Option<SpeculationTree> = None;
    let sources = [
        (global, cfg.use_global),
        (per_request, cfg.use_per_request),
    ];
    for (tree, enabled) in sources {
        let Some(tree) = tree else { continue };
        if !enabled {
            continue;
        }
        let p_max = cfg
            .max_pattern_len
            .min(context.len())
            .min(tree.depth_cap());
        for p in 1..=p_max {
            let Some(anchor) = tree.match_pattern(context, p) else {
                continue;
            };
            let cand = expand_with_mode(tree, &anchor, cfg.max_spec_budget(p), cfg.frontier);
            if improves(&cand, best.as_ref()) {
                best = Some(cand);
            }
        }
    }
    best
}

/// How a decoding step obtains its draft tokens.
#[derive(Debug, Clone, PartialEq)]
pub enum SpeculationDecision {
    /// Use the suffix speculation tree (its score exceeded tau).
    Suffix(SpeculationTree),
    /// Delegate to the configured fallback speculator.
    Fallback,
    /// No drafts this step: vanilla decoding.
    None,
}

/// Applies the score-threshold policy: a candidate is used only when its
/// score strictly exceeds `tau`; otherwise (including on a miss) the step
/// falls back when a fallback is available and goes vanilla when not.
pub fn decide(
    candidate: Option<SpeculationTree>,
    tau: f64,
    fallback_available: bool,
) -> SpeculationDecision {
    match candidate {
        Some(tree) if tree.score > tau => SpeculationDecision::Suffix(tree),
        _ if fallback_available => SpeculationDecision::Fallback,
        _ => SpeculationDecision::None,
    }
}

/// A pluggable draft-chain speculator used when suffix speculation is not
/// confident enough. `oracle` carries the remaining ground-truth tokens the
/// simulator verifies against; real deployments would ignore it.
pub trait FallbackSpeculator: Send {
    fn propose(&mut self, context: &[TokenId], oracle: &[TokenId]) -> Vec<TokenId>;
}

/// Fallback that never proposes anything; each fallback step emits just the
/// bonus token.
pub struct NullFallback;

impl FallbackSpeculator for NullFallback {
    fn propose(&mut self, _context: &[TokenId], _oracle: &[TokenId]) -> Vec<TokenId> {
        Vec::new()
    }
}

/// Stand-in for an external model-based speculator with tunable quality.
///
/// Proposes a chain of `chain_len` tokens per step. The number of leading
/// tokens copied from the oracle is drawn so its mean equals `mean_accept`
/// (a two-point distribution on the surrounding integers); the rest of the
/// chain is deliberately corrupted so verification stops there.
pub struct SyntheticFallback {
    chain_len: usize,
    mean_accept: f64,
    rng: ChaCha8Rng,
}

impl SyntheticFallback {
    pub fn new(chain_len: usize, mean_accept: f64, rng: ChaCha8Rng) -> Self {
        Self {
            chain_len,
            mean_accept: mean_accept.clamp(0.0, chain_len as f64),
            rng,
        }
    }
}

impl FallbackSpeculator for SyntheticFallback {
    fn propose(&mut self, _context: &[TokenId], oracle: &[TokenId]) -> Vec<TokenId> {
        if oracle.is_empty() || self.chain_len == 0 {
            return Vec::new();
        }
        let base = self.mean_accept.floor();
        let frac = self.mean_accept - base;
        let mut take = base as usize;
        if frac > 0.0 && self.rng.gen_bool(frac) {
            take += 1;
        }
        take = take.min(self.chain_len).min(oracle.len());
        let mut chain = Vec::with_capacity(self.chain_len);
        chain.extend_from_slice(&oracle[..take]);
        for i in take..self.chain_len {
            // A token guaranteed to differ from the ground truth at this
            // position, so acceptance ends exactly at `take`.
            let wrong = oracle
                .get(i)
                .map(|&t| t.wrapping_add(1))
                .unwrap_or(TokenId::MAX);
            chain.push(wrong);
        }
        chain
    }
}
