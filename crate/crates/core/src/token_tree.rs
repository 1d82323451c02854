//! Weighted prefix trees of retrieved continuations.
//!
//! Continuations are merged by shared prefix; each node's weight is the
//! number of continuations passing through it. Trees over the node cap keep
//! the heaviest nodes, and nodes are stored in breadth-first order so a
//! parent always precedes its children.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Token};

/// Index of the synthetic root in [`TokenTree::nodes`].
pub const ROOT: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TreeNode {
    pub token: Token,
    /// Parent index; the root points at itself.
    pub parent: u32,
    pub weight: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenTree {
    nodes: Vec<TreeNode>,
}

impl Default for TokenTree {
    fn default() -> Self {
        TokenTree {
            nodes: vec![TreeNode {
                token: 0,
                parent: ROOT as u32,
                weight: 0,
            }],
        }
    }
}

struct Trie {
    token: Vec<Token>,
    parent: Vec<u32>,
    weight: Vec<u32>,
    depth: Vec<u32>,
    children: Vec<Vec<u32>>,
}

impl Trie {
    fn new() -> Self {
        Trie {
            token: vec![0],
            parent: vec![0],
            weight: vec![0],
            depth: vec![0],
            children: vec![Vec::new()],
        }
    }

    fn insert(&mut self, seq: &[Token]) {
        if seq.is_empty() {
            return;
        }
        let mut cur = 0usize;
        self.weight[0] = self.weight[0].saturating_add(1);
        for &t in seq {
            let found = self.children[cur]
                .iter()
                .copied()
                .find(|&c| self.token[c as usize] == t);
            cur = match found {
                Some(c) => c as usize,
                None => {
                    let id = self.token.len();
                    self.token.push(t);
                    self.parent.push(cur as u32);
                    self.weight.push(0);
                    self.depth.push(self.depth[cur] + 1);
                    self.children.push(Vec::new());
                    self.children[cur].push(id as u32);
                    id
                }
            };
            self.weight[cur] = self.weight[cur].saturating_add(1);
        }
    }
}

/// Candidate ordering for pruning: heavier first, then shallower, then
/// smaller token, then the earlier-kept parent.
#[derive(PartialEq, Eq)]
struct Candidate {
    weight: u32,
    depth: u32,
    token: Token,
    parent_rank: u32,
    node: u32,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.weight
            .cmp(&other.weight)
            .then_with(|| other.depth.cmp(&self.depth))
            .then_with(|| other.token.cmp(&self.token))
            .then_with(|| other.parent_rank.cmp(&self.parent_rank))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Merges continuations into a prefix tree holding at most `cap` non-root
/// nodes.
///
/// Pruning keeps the `cap` best nodes by (weight desc, depth asc, token asc,
/// parent rank asc); since a node never outweighs its parent, the kept set is
/// closed under taking parents. The result is reindexed breadth-first with
/// siblings ordered by weight desc, then token asc.
pub fn build_tree<I, S>(continuations: I, cap: usize) -> TokenTree
where
    I: IntoIterator<Item = S>,
    S: AsRef<[Token]>,
{
    let mut trie = Trie::new();
    for c in continuations {
        trie.insert(c.as_ref());
    }

    let mut kept = vec![false; trie.token.len()];
    kept[0] = true;
    let mut heap = BinaryHeap::new();
    let push_children = |heap: &mut BinaryHeap<Candidate>, node: usize, rank: u32| {
        for &c in &trie.children[node] {
            heap.push(Candidate {
                weight: trie.weight[c as usize],
                depth: trie.depth[c as usize],
                token: trie.token[c as usize],
                parent_rank: rank,
                node: c,
            });
        }
    };
    push_children(&mut heap, 0, 0);
    let mut rank = 0;
    while rank < cap {
        let Some(best) = heap.pop() else { break };
        rank += 1;
        kept[best.node as usize] = true;
        push_children(&mut heap, best.node as usize, rank as u32);
    }

    let mut nodes = vec![TreeNode {
        token: 0,
        parent: ROOT as u32,
        weight: 0,
    }];
    let mut queue = std::collections::VecDeque::from([(0usize, 0u32)]);
    while let Some((old, new)) = queue.pop_front() {
        let mut kids: Vec<u32> = trie.children[old]
            .iter()
            .copied()
            .filter(|&c| kept[c as usize])
            .collect();
        kids.sort_unstable_by_key(|&c| (Reverse(trie.weight[c as usize]), trie.token[c as usize]));
        for c in kids {
            let id = nodes.len() as u32;
            nodes.push(TreeNode {
                token: trie.token[c as usize],
                parent: new,
                weight: trie.weight[c as usize],
            });
            queue.push_back((c as usize, id));
        }
    }
    TokenTree::from_nodes_unchecked(nodes)
}

impl TokenTree {
    fn from_nodes_unchecked(mut nodes: Vec<TreeNode>) -> Self {
        let root_weight = nodes[1..]
            .iter()
            .filter(|n| n.parent as usize == ROOT)
            .fold(0u32, |acc, n| acc.saturating_add(n.weight));
        nodes[ROOT].weight = root_weight;
        TokenTree { nodes }
    }

    /// Builds a tree from its non-root nodes. Parent index 0 is the root and
    /// index `i >= 1` refers to `nodes[i - 1]`. The root weight is the sum of
    /// its children's weights.
    pub fn from_children(nodes: &[TreeNode]) -> Result<Self> {
        let mut all = Vec::with_capacity(nodes.len() + 1);
        all.push(TreeNode {
            token: 0,
            parent: ROOT as u32,
            weight: 0,
        });
        all.extend_from_slice(nodes);
        let tree = Self::from_nodes_unchecked(all);
        tree.validate()?;
        Ok(tree)
    }

    /// Checks topological order, weight monotonicity and distinct sibling
    /// tokens.
    pub fn validate(&self) -> Result<()> {
        let mut siblings: Vec<(u32, Token)> = Vec::with_capacity(self.size());
        for (i, n) in self.nodes.iter().enumerate().skip(1) {
            let p = n.parent as usize;
            if p >= i {
                return Err(Error::Format(format!(
                    "node {i} has parent {p} not before it"
                )));
            }
            if n.weight > self.nodes[p].weight {
                return Err(Error::Format(format!("node {i} outweighs its parent")));
            }
            siblings.push((n.parent, n.token));
        }
        siblings.sort_unstable();
        if siblings.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Format("siblings share a token".into()));
        }
        Ok(())
    }

    /// All nodes including the root at index 0.
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    /// Number of non-root nodes.
    pub fn size(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn children(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .skip(node + 1)
            .filter(move |(_, n)| n.parent as usize == node)
            .map(|(i, _)| i)
    }

    /// Depth of `node`; the root has depth 0.
    pub fn depth(&self, mut node: usize) -> usize {
        let mut d = 0;
        while node != ROOT {
            node = self.nodes[node].parent as usize;
            d += 1;
        }
        d
    }

    pub fn max_depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        for i in 1..self.nodes.len() {
            depth[i] = depth[self.nodes[i].parent as usize] + 1;
        }
        depth.into_iter().max().unwrap_or(0)
    }

    /// Greedy replay verification: follow the child matching each next
    /// ground-truth token until none does.
    pub fn accepted_length(&self, ground_truth: &[Token]) -> usize {
        let mut cur = ROOT;
        let mut accepted = 0;
        for &t in ground_truth {
            match self.children(cur).find(|&c| self.nodes[c].token == t) {
                Some(c) => {
                    cur = c;
                    accepted += 1;
                }
                None => break,
            }
        }
        accepted
    }

    pub fn flatten(&self) -> DraftSequence {
        let tokens = self.nodes[1..].iter().map(|n| n.token).collect();
        let parents: Vec<Option<usize>> = self.nodes[1..]
            .iter()
            .map(|n| (n.parent as usize).checked_sub(1))
            .collect();
        let mask = AttentionMask::from_parents(&parents);
        DraftSequence {
            tokens,
            parents,
            mask,
        }
    }

    /// Encoded blob length: a u16 count plus 10 bytes per node.
    pub fn encoded_len(&self) -> usize {
        2 + 10 * self.size()
    }

    /// Appends the blob encoding: u16 node count, then per non-root node
    /// u32 token, u16 parent (0 = root), u32 weight, all little-endian.
    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<()> {
        let count = u16::try_from(self.size())
            .map_err(|_| Error::Argument(format!("tree of {} nodes exceeds u16", self.size())))?;
        out.reserve(self.encoded_len());
        out.extend_from_slice(&count.to_le_bytes());
        for n in &self.nodes[1..] {
            out.extend_from_slice(&n.token.to_le_bytes());
            out.extend_from_slice(&(n.parent as u16).to_le_bytes());
            out.extend_from_slice(&n.weight.to_le_bytes());
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.encode_into(&mut out)?;
        Ok(out)
    }

    pub fn decode(blob: &[u8]) -> Result<Self> {
        let mut r = crate::suffix_store::Reader {
            bytes: blob,
            pos: 0,
        };
        let count = r.u16()? as usize;
        if r.remaining() != 10 * count {
            return Err(Error::Format(format!(
                "blob holds {} bytes for {count} nodes",
                r.remaining()
            )));
        }
        let mut nodes = Vec::with_capacity(count);
        for _ in 0..count {
            let token = r.u32()?;
            let parent = u32::from(r.u16()?);
            let weight = r.u32()?;
            nodes.push(TreeNode {
                token,
                parent,
                weight,
            });
        }
        Self::from_children(&nodes)
    }
}

/// Square ancestor mask: `get(i, j)` is set iff node `j` is node `i` or one
/// of its ancestors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    size: usize,
    words: usize,
    bits: Vec<u64>,
}

impl AttentionMask {
    pub fn from_parents(parents: &[Option<usize>]) -> Self {
        let size = parents.len();
        let words = size.div_ceil(64);
        let mut bits = vec![0u64; size * words];
        for i in 0..size {
            if let Some(p) = parents[i] {
                assert!(p < i, "parents must precede children");
                let (dst, src) = bits.split_at_mut(i * words);
                dst[p * words..(p + 1) * words]
                    .iter()
                    .zip(&mut src[..words])
                    .for_each(|(s, d)| *d |= *s);
            }
            bits[i * words + i / 64] |= 1 << (i % 64);
        }
        AttentionMask { size, words, bits }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.words + col / 64] >> (col % 64) & 1 == 1
    }

    pub fn row(&self, row: usize) -> Vec<bool> {
        (0..self.size).map(|c| self.get(row, c)).collect()
    }

    pub fn row_count(&self, row: usize) -> usize {
        self.bits[row * self.words..(row + 1) * self.words]
            .iter()
            .map(|w| w.count_ones() as usize)
            .sum()
    }

    /// Recovers parent indices: the nearest set column before the diagonal.
    pub fn parents(&self) -> Vec<Option<usize>> {
        (0..self.size)
            .map(|i| (0..i).rev().find(|&j| self.get(i, j)))
            .collect()
    }
}

/// A token tree flattened for parallel verification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DraftSequence {
    pub tokens: Vec<Token>,
    /// Index of each token's parent in `tokens`; `None` for children of the
    /// root.
    pub parents: Vec<Option<usize>>,
    pub mask: AttentionMask,
}

/// Wire form of a draft for external verifiers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftMessage {
    pub tokens: Vec<Token>,
    pub parents: Vec<Option<usize>>,
}

impl From<&DraftSequence> for DraftMessage {
    fn from(d: &DraftSequence) -> Self {
        DraftMessage {
            tokens: d.tokens.clone(),
            parents: d.parents.clone(),
        }
    }
}
