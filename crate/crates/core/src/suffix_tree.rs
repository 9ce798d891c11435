//! Occurrence-counted, depth-capped suffix tries over token sequences.
//!
//! Every suffix of an inserted sequence is walked from the root up to
//! `depth_cap` tokens deep, incrementing a counter at each node, so a node's
//! count equals the number of (sequence, offset) occurrences of its root path
//! across everything currently retained. Two roles exist: a `Global` tree over
//! prior outputs (bulk inserts, optional LRU eviction) and a `PerRequest` tree
//! over the ongoing request (token-by-token online extension).
//!
//! There is no edge compression and there are no suffix links: pattern lookups
//! and speculation walks are all bounded by the depth cap, so a plain counted
//! trie keeps insert/lookup at O(depth_cap) per token with exact counts.
//!
//! Writers require exclusive access; any number of readers may run
//! concurrently between writes. The type itself carries no locks.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, TokenSequence};
use crate::error::{Error, Result};

/// Which side of the two-tree design a tree serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeRole {
    Global,
    PerRequest,
}

/// Opaque handle to a tree node. Invalidated by any mutation of the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeRef(u32);

/// Result of walking a pattern from the root: the node spelling the last
/// `pattern_len` context tokens.
#[derive(Debug, Clone, Copy)]
pub struct PatternMatch {
    pub node: NodeRef,
    pub pattern_len: usize,
}

#[derive(Debug, Clone)]
struct TreeNode {
    token: TokenId,
    count: u64,
    parent: u32,
    children: HashMap<TokenId, u32>,
}

/// Documented per-node size estimate: the node struct itself plus an
/// amortized share of its parent's child-map storage. `estimated_bytes` in
/// [`TreeStats`] is exactly `node_count` times this constant.
pub const ESTIMATED_BYTES_PER_NODE: usize =
    std::mem::size_of::<TreeNode>() + 2 * std::mem::size_of::<(TokenId, u32)>();

/// Size and memory summary of a tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TreeStats {
    pub node_count: usize,
    pub token_count: u64,
    pub estimated_bytes: u64,
}

/// A depth-capped suffix trie with per-node occurrence counts.
#[derive(Debug, Clone)]
pub struct SuffixTree {
    nodes: Vec<TreeNode>,
    free: Vec<u32>,
    role: TreeRole,
    depth_cap: usize,
    node_count: usize,
    token_count: u64,
    /// Completed sequences in insertion order, oldest first. Retained so that
    /// eviction can decrement-replay exact contributions and so the tree can
    /// be snapshotted as a replay log.
    log: VecDeque<TokenSequence>,
    /// Tokens received through `extend_online` that have not been finalized
    /// into `log` yet.
    online_buf: Vec<TokenId>,
    /// `online_active[j]` spells the last `j + 1` tokens of `online_buf`.
    online_active: Vec<NodeRef>,
}

const ROOT: u32 = 0;

impl SuffixTree {
    /// Creates an empty tree. The root counts as one node.
    pub fn new(depth_cap: usize, role: TreeRole) -> Result<Self> {
        if depth_cap == 0 {
            return Err(Error::ZeroDepthCap);
        }
        Ok(Self {
            nodes: vec![TreeNode {
                token: 0,
                count: 0,
                parent: ROOT,
                children: HashMap::new(),
            }],
            free: Vec::new(),
            role,
            depth_cap,
            node_count: 1,
            token_count: 0,
            log: VecDeque::new(),
            online_buf: Vec::new(),
            online_active: Vec::new(),
        })
    }

    pub fn role(&self) -> TreeRole {
        self.role
    }

    pub fn depth_cap(&self) -> usize {
        self.depth_cap
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn token_count(&self) -> u64 {
        self.token_count
    }

    pub fn root(&self) -> NodeRef {
        NodeRef(ROOT)
    }

    pub fn is_root(&self, node: NodeRef) -> bool {
        node.0 == ROOT
    }

    /// Occurrence count of the subsequence spelled by the root path to `node`.
    pub fn count(&self, node: NodeRef) -> u64 {
        self.nodes[node.0 as usize].count
    }

    /// Token labelling `node`, or `None` for the root.
    pub fn token(&self, node: NodeRef) -> Option<TokenId> {
        if self.is_root(node) {
            None
        } else {
            Some(self.nodes[node.0 as usize].token)
        }
    }

    pub fn parent(&self, node: NodeRef) -> Option<NodeRef> {
        if self.is_root(node) {
            None
        } else {
            Some(NodeRef(self.nodes[node.0 as usize].parent))
        }
    }

    pub fn child(&self, node: NodeRef, token: TokenId) -> Option<NodeRef> {
        self.nodes[node.0 as usize]
            .children
            .get(&token)
            .map(|&i| NodeRef(i))
    }

    /// Children of `node` in unspecified order.
    pub fn children(&self, node: NodeRef) -> impl Iterator<Item = (TokenId, NodeRef)> + '_ {
        self.nodes[node.0 as usize]
            .children
            .iter()
            .map(|(&t, &i)| (t, NodeRef(i)))
    }

    /// Children of `node` sorted by token id, for order-sensitive callers.
    pub fn sorted_children(&self, node: NodeRef) -> Vec<(TokenId, NodeRef)> {
        let mut out: Vec<_> = self.children(node).collect();
        out.sort_unstable_by_key(|&(t, _)| t);
        out
    }

    /// Sum of child counts under `node` (the continuation mass through it).
    pub fn child_count_sum(&self, node: NodeRef) -> u64 {
        self.nodes[node.0 as usize]
            .children
            .values()
            .map(|&i| self.nodes[i as usize].count)
            .sum()
    }

    fn alloc(&mut self, token: TokenId, parent: u32) -> u32 {
        self.node_count += 1;
        if let Some(idx) = self.free.pop() {
            self.nodes[idx as usize] = TreeNode {
                token,
                count: 0,
                parent,
                children: HashMap::new(),
            };
            idx
        } else {
            self.nodes.push(TreeNode {
                token,
                count: 0,
                parent,
                children: HashMap::new(),
            });
            (self.nodes.len() - 1) as u32
        }
    }

    fn child_or_create(&mut self, node: u32, token: TokenId) -> u32 {
        if let Some(&idx) = self.nodes[node as usize].children.get(&token) {
            return idx;
        }
        let idx = self.alloc(token, node);
        self.nodes[node as usize].children.insert(token, idx);
        idx
    }

    /// Inserts every depth-capped suffix of `seq`, incrementing counts along
    /// each walked path, and retains the sequence for eviction/snapshot.
    pub fn insert_sequence(&mut self, seq: &TokenSequence) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::EmptySequence);
        }
        self.finalize_online();
        let tokens = &seq.tokens;
        for start in 0..tokens.len() {
            let end = (start + self.depth_cap).min(tokens.len());
            let mut cur = ROOT;
            for &tok in &tokens[start..end] {
                cur = self.child_or_create(cur, tok);
                self.nodes[cur as usize].count += 1;
            }
        }
        self.token_count += tokens.len() as u64;
        self.log.push_back(seq.clone());
        Ok(())
    }

    /// Appends one token to the ongoing per-request sequence, updating the
    /// tree so it equals a from-scratch build over the sequence so far.
    ///
    /// Returns the number of nodes visited, which is at most `depth_cap`.
    pub fn extend_online(&mut self, token: TokenId) -> Result<usize> {
        if self.role != TreeRole::PerRequest {
            return Err(Error::NotPerRequest);
        }
        let keep = self.online_active.len().min(self.depth_cap - 1);
        let mut next_active = Vec::with_capacity(keep + 1);
        let first = self.child_or_create(ROOT, token);
        self.nodes[first as usize].count += 1;
        next_active.push(NodeRef(first));
        for j in 0..keep {
            let parent = self.online_active[j].0;
            let idx = self.child_or_create(parent, token);
            self.nodes[idx as usize].count += 1;
            next_active.push(NodeRef(idx));
        }
        let visits = next_active.len();
        self.online_active = next_active;
        self.online_buf.push(token);
        self.token_count += 1;
        Ok(visits)
    }

    fn finalize_online(&mut self) {
        if !self.online_buf.is_empty() {
            let tokens = std::mem::take(&mut self.online_buf);
            self.online_active.clear();
            self.log.push_back(TokenSequence::new(tokens, "online"));
        }
    }

    /// Walks the last `p` tokens of `context` from the root. Returns `None`
    /// when any step lacks a child, or when `p` is zero, exceeds the context
    /// length, or exceeds the depth cap.
    pub fn match_pattern(&self, context: &[TokenId], p: usize) -> Option<PatternMatch> {
        if p == 0 || p > context.len() || p > self.depth_cap {
            return None;
        }
        let mut cur = ROOT;
        for &tok in &context[context.len() - p..] {
            cur = *self.nodes[cur as usize].children.get(&tok)?;
        }
        Some(PatternMatch {
            node: NodeRef(cur),
            pattern_len: p,
        })
    }

    /// Removes the oldest retained sequence's entire contribution, as if it
    /// had never been inserted. Nodes whose counts reach zero are deleted.
    pub fn evict_oldest(&mut self) -> Result<()> {
        let seq = match self.log.pop_front() {
            Some(seq) => seq,
            None if !self.online_buf.is_empty() => {
                let tokens = std::mem::take(&mut self.online_buf);
                self.online_active.clear();
                TokenSequence::new(tokens, "online")
            }
            None => return Err(Error::EmptyTree),
        };
        self.decrement_replay(&seq.tokens);
        self.token_count -= seq.tokens.len() as u64;
        Ok(())
    }

    fn decrement_replay(&mut self, tokens: &[TokenId]) {
        let mut path: Vec<(u32, u32)> = Vec::with_capacity(self.depth_cap);
        for start in 0..tokens.len() {
            let end = (start + self.depth_cap).min(tokens.len());
            path.clear();
            let mut cur = ROOT;
            for &tok in &tokens[start..end] {
                let next = *self.nodes[cur as usize]
                    .children
                    .get(&tok)
                    .expect("evicted sequence must be present in the tree");
                path.push((cur, next));
                cur = next;
            }
            for &(_, node) in &path {
                self.nodes[node as usize].count -= 1;
            }
            // Deepest first, so a dying node's children are already gone.
            for &(parent, node) in path.iter().rev() {
                if self.nodes[node as usize].count == 0 {
                    debug_assert!(self.nodes[node as usize].children.is_empty());
                    let tok = self.nodes[node as usize].token;
                    self.nodes[parent as usize].children.remove(&tok);
                    self.free.push(node);
                    self.node_count -= 1;
                }
            }
        }
    }

    pub fn stats(&self) -> TreeStats {
        TreeStats {
            node_count: self.node_count,
            token_count: self.token_count,
            estimated_bytes: self.node_count as u64 * ESTIMATED_BYTES_PER_NODE as u64,
        }
    }

    /// Number of retained sequences available for eviction, counting any
    /// unfinalized online sequence.
    pub fn retained_sequences(&self) -> usize {
        self.log.len() + usize::from(!self.online_buf.is_empty())
    }

    /// The retained sequences in insertion order; replaying them through
    /// `insert_sequence` into a fresh tree reproduces this tree exactly.
    pub fn replay_log(&self) -> Vec<TokenSequence> {
        let mut out: Vec<TokenSequence> = self.log.iter().cloned().collect();
        if !self.online_buf.is_empty() {
            out.push(TokenSequence::new(self.online_buf.clone(), "online"));
        }
        out
    }

    /// Writes the replay log as a JSONL snapshot.
    pub fn write_snapshot(&self, path: &std::path::Path) -> Result<()> {
        crate::corpus::save_corpus(path, &self.replay_log(), crate::corpus::CorpusFormat::Jsonl)
    }

    /// Rebuilds a tree bit-exactly by replaying a snapshot written by
    /// [`SuffixTree::write_snapshot`].
    pub fn from_snapshot(path: &std::path::Path, depth_cap: usize, role: TreeRole) -> Result<Self> {
        let loaded = crate::corpus::load_corpus(path, crate::corpus::CorpusFormat::Jsonl)?;
        let mut tree = Self::new(depth_cap, role)?;
        for seq in &loaded.sequences {
            tree.insert_sequence(seq)?;
        }
        Ok(tree)
    }

    /// Visits every non-root node in depth-first, token-sorted order with its
    /// full root path and count. Intended for diagnostics and tests.
    pub fn walk(&self, mut f: impl FnMut(&[TokenId], u64)) {
        let mut path: Vec<TokenId> = Vec::new();
        let mut stack: Vec<(u32, usize)> = self
            .sorted_children(self.root())
            .into_iter()
            .rev()
            .map(|(_, n)| (n.0, 1))
            .collect();
        while let Some((node, depth)) = stack.pop() {
            path.truncate(depth - 1);
            path.push(self.nodes[node as usize].token);
            f(&path, self.nodes[node as usize].count);
            let mut kids: Vec<_> = self.nodes[node as usize]
                .children
                .values()
                .copied()
                .collect();
            kids.sort_unstable_by_key(|&i| std::cmp::Reverse(self.nodes[i as usize].token));
            for k in kids {
                stack.push((k, depth + 1));
            }
        }
    }

    /// Map from every stored subsequence to its count. Diagnostic helper;
    /// cost is proportional to total path length over all nodes.
    pub fn path_counts(&self) -> BTreeMap<Vec<TokenId>, u64> {
        let mut out = BTreeMap::new();
        self.walk(|path, count| {
            out.insert(path.to_vec(), count);
        });
        out
    }
}
