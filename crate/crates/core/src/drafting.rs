//! Draft generation (retrieval or drafter model), kinematic grouping and the
//! sequence-wise draft tree.
//!
//! A slice of 7 tokens splits into three groups: position (X, Y, Z), rotation
//! (rX, rY, rZ) and gripper (G). Tree levels are groups, not tokens. Nodes at a
//! level are deduplicated by token content and remember which drafts (ranks)
//! produced them. Non-gripper levels may be stitched together across ranks;
//! along one chain, every gripper node and its parent and child must come from
//! one common rank.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actions::{ActionSlice, Quantizer, Token, DOF};
use crate::models::{DrafterModel, VerifierModel};
use crate::retrieval::Collection;
use crate::{Error, Result};

/// Largest supported number of drafts per tree (ranks live in a `u64` mask).
pub const MAX_DRAFTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupKind {
    Position,
    Rotation,
    Gripper,
}

impl GroupKind {
    pub fn len(self) -> usize {
        match self {
            GroupKind::Position | GroupKind::Rotation => 3,
            GroupKind::Gripper => 1,
        }
    }

    /// Group starting at `offset` within a slice, if `offset` is a group boundary.
    pub fn starting_at(offset: usize) -> Option<GroupKind> {
        match offset {
            0 => Some(GroupKind::Position),
            3 => Some(GroupKind::Rotation),
            6 => Some(GroupKind::Gripper),
            _ => None,
        }
    }
}

/// Where a draft came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Rank(usize),
    Drafter,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceGroup {
    pub kind: GroupKind,
    pub tokens: Vec<Token>,
    pub source: Source,
    /// Lookahead slice the group belongs to, relative to the slice being emitted.
    pub slice_index: usize,
}

/// One candidate continuation, already split into groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Draft {
    pub groups: Vec<SequenceGroup>,
    /// Retrieval score; `None` for drafter output.
    pub score: Option<f64>,
}

impl Draft {
    pub fn tokens(&self) -> Vec<Token> {
        self.groups.iter().flat_map(|g| g.tokens.iter().copied()).collect()
    }

    pub fn token_count(&self) -> usize {
        self.groups.iter().map(|g| g.tokens.len()).sum()
    }
}

/// Longest prefix of `len` tokens starting at in-slice `offset` that ends on
/// a group boundary.
pub fn group_aligned_len(offset: usize, len: usize) -> usize {
    let mut pos = offset % DOF;
    let mut total = 0;
    loop {
        let step = GroupKind::starting_at(pos).map_or(1, GroupKind::len);
        if total + step > len {
            return total;
        }
        total += step;
        pos = (pos + step) % DOF;
    }
}

/// Split a token run that starts at in-slice `offset` into groups.
pub fn split_groups(tokens: &[Token], offset: usize, source: Source) -> Result<Vec<SequenceGroup>> {
    let mut pos = offset;
    if GroupKind::starting_at(pos % DOF).is_none() {
        return Err(Error::invalid(alloc::format!("offset {offset} is not a group boundary")));
    }
    let mut groups = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let kind = GroupKind::starting_at(pos % DOF).expect("aligned");
        let end = i + kind.len();
        if end > tokens.len() {
            return Err(Error::invalid("draft does not end on a group boundary"));
        }
        groups.push(SequenceGroup { kind, tokens: tokens[i..end].to_vec(), source, slice_index: pos / DOF });
        i = end;
        pos += kind.len();
    }
    Ok(groups)
}

/// Top-`k_top` retrieval drafts for the slice being emitted. Each hit's 3-step
/// lookahead is quantized into 21 tokens, of which the first `offset` (tokens
/// already emitted for the current slice) are dropped.
pub fn retrieve_drafts(
    collection: &Collection,
    query: &[f64],
    k_top: usize,
    quantizer: &Quantizer,
    offset: usize,
) -> Result<Vec<Draft>> {
    if k_top == 0 || k_top > MAX_DRAFTS {
        return Err(Error::invalid(alloc::format!("k_top must be in [1, {MAX_DRAFTS}]")));
    }
    let hits = collection.search(query, k_top)?;
    hits.iter()
        .enumerate()
        .map(|(rank, hit)| {
            let mut tokens = Vec::with_capacity(DOF * hit.payload.next_actions.len());
            for a in &hit.payload.next_actions {
                tokens.extend_from_slice(&quantizer.tokens(&ActionSlice(*a))?);
            }
            let groups = split_groups(&tokens[offset..], offset, Source::Rank(rank))?;
            Ok(Draft { groups, score: Some(hit.score) })
        })
        .collect()
}

/// Run the drafter for `len` tokens (trimmed to a group boundary) and group them.
pub fn drafter_generate<D: DrafterModel>(
    drafter: &mut D,
    obs: &D::Obs,
    pending: &[Token],
    len: usize,
) -> Result<Draft> {
    if len == 0 {
        return Err(Error::invalid("draft length must be at least 1"));
    }
    let len = group_aligned_len(pending.len(), len);
    let tokens = drafter.draft(obs, pending, len)?;
    if tokens.len() != len {
        return Err(Error::invalid("drafter returned the wrong number of tokens"));
    }
    Ok(Draft { groups: split_groups(&tokens, pending.len(), Source::Drafter)?, score: None })
}

/// Toy drafter: with probability `p` a token equals the verifier's greedy
/// choice given the tokens drafted so far, otherwise a uniformly drawn
/// different bin.
#[derive(Debug, Clone)]
pub struct NoisyDrafter<V> {
    verifier: V,
    p: f64,
    bins: u32,
    rng: ChaCha8Rng,
}

impl<V> NoisyDrafter<V> {
    pub fn new(verifier: V, p: f64, bins: u32, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid("drafter accuracy must be in [0, 1]"));
        }
        if bins < 2 {
            return Err(Error::invalid("need at least 2 bins"));
        }
        Ok(Self { verifier, p, bins, rng: ChaCha8Rng::seed_from_u64(seed) })
    }
}

impl<V: VerifierModel> DrafterModel for NoisyDrafter<V> {
    type Obs = V::Obs;

    fn draft(&mut self, obs: &V::Obs, pending: &[Token], len: usize) -> Result<Vec<Token>> {
        let mut out: Vec<Token> = Vec::with_capacity(len);
        for _ in 0..len {
            let greedy = self.verifier.greedy(obs, pending, &out)?[out.len()];
            let hit = self.p >= 1.0 || self.rng.random::<f64>() < self.p;
            let token = if hit {
                greedy
            } else {
                let other = self.rng.random_range(0..self.bins - 1) as Token;
                if other >= greedy {
                    other + 1
                } else {
                    other
                }
            };
            out.push(token);
        }
        Ok(out)
    }
}

/// A deduplicated group candidate at one tree level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub kind: GroupKind,
    pub tokens: Vec<Token>,
    /// Bit `r` set iff draft rank `r` has this group at this level.
    pub ranks: u64,
    pub best_rank: usize,
}

/// Sequence-wise draft tree. The root is the current verified context.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftTree {
    levels: Vec<Vec<TreeNode>>,
    constrained: Vec<bool>,
}

/// One root-to-leaf path: a node index per level.
pub type Chain = Vec<usize>;

impl DraftTree {
    pub fn levels(&self) -> &[Vec<TreeNode>] {
        &self.levels
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn node(&self, level: usize, idx: usize) -> &TreeNode {
        &self.levels[level][idx]
    }

    pub fn node_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    /// Whether `b` at `level + 1` may follow `a` at `level`.
    pub fn linked(&self, level: usize, a: usize, b: usize) -> bool {
        let (na, nb) = (&self.levels[level][a], &self.levels[level + 1][b]);
        if na.kind == GroupKind::Gripper || nb.kind == GroupKind::Gripper {
            na.ranks & nb.ranks != 0
        } else {
            true
        }
    }

    /// Concatenated tokens of a chain (or a chain prefix).
    pub fn chain_tokens(&self, chain: &[usize]) -> Vec<Token> {
        chain.iter().enumerate().flat_map(|(l, &i)| self.levels[l][i].tokens.iter().copied()).collect()
    }

    pub fn chain_groups<'a>(&'a self, chain: &'a [usize]) -> impl Iterator<Item = &'a TreeNode> + 'a {
        chain.iter().enumerate().map(move |(l, &i)| &self.levels[l][i])
    }

    /// Whether a full chain satisfies gripper isolation: one rank shared by
    /// every gripper node and its neighbors.
    pub fn is_valid_chain(&self, chain: &[usize]) -> bool {
        chain.len() == self.depth() && self.chain_mask(chain) != 0
    }

    fn chain_mask(&self, chain: &[usize]) -> u64 {
        chain
            .iter()
            .enumerate()
            .filter(|(l, _)| self.constrained[*l])
            .fold(u64::MAX, |m, (l, &i)| m & self.levels[l][i].ranks)
    }

    /// Depth-first enumeration, children in best-rank order, at most `cap` chains.
    pub fn enumerate_chains(&self, cap: usize) -> Vec<Chain> {
        let mut out = Vec::new();
        if self.levels.is_empty() || cap == 0 {
            return out;
        }
        let mut path = Vec::with_capacity(self.depth());
        self.dfs(&mut path, u64::MAX, cap, &mut out);
        out
    }

    fn dfs(&self, path: &mut Vec<usize>, mask: u64, cap: usize, out: &mut Vec<Chain>) {
        let level = path.len();
        if level == self.depth() {
            out.push(path.clone());
            return;
        }
        for (i, node) in self.levels[level].iter().enumerate() {
            if out.len() >= cap {
                return;
            }
            let m = if self.constrained[level] { mask & node.ranks } else { mask };
            if m == 0 {
                continue;
            }
            path.push(i);
            self.dfs(path, m, cap, out);
            path.pop();
        }
    }
}

/// Merge drafts into a tree. Draft `r` in the list has rank `r`.
pub fn build_sequence_tree(drafts: &[Draft]) -> Result<DraftTree> {
    let Some(first) = drafts.first() else {
        return Err(Error::invalid("cannot build a tree from zero drafts"));
    };
    if drafts.len() > MAX_DRAFTS {
        return Err(Error::invalid(alloc::format!("at most {MAX_DRAFTS} drafts per tree")));
    }
    let kinds: Vec<GroupKind> = first.groups.iter().map(|g| g.kind).collect();
    if drafts.iter().any(|d| d.groups.iter().map(|g| g.kind).ne(kinds.iter().copied())) {
        return Err(Error::invalid("drafts have different group layouts"));
    }
    let mut levels: Vec<Vec<TreeNode>> = kinds.iter().map(|_| Vec::new()).collect();
    for (rank, draft) in drafts.iter().enumerate() {
        for (level, group) in draft.groups.iter().enumerate() {
            let nodes = &mut levels[level];
            if let Some(node) = nodes.iter_mut().find(|n| n.tokens == group.tokens) {
                node.ranks |= 1 << rank;
            } else {
                nodes.push(TreeNode { kind: group.kind, tokens: group.tokens.clone(), ranks: 1 << rank, best_rank: rank });
            }
        }
    }
    let constrained = (0..kinds.len())
        .map(|l| {
            kinds[l] == GroupKind::Gripper
                || (l > 0 && kinds[l - 1] == GroupKind::Gripper)
                || kinds.get(l + 1) == Some(&GroupKind::Gripper)
        })
        .collect();
    Ok(DraftTree { levels, constrained })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn draft(tokens: &[Token], rank: usize) -> Draft {
        Draft { groups: split_groups(tokens, 0, Source::Rank(rank)).unwrap(), score: None }
    }

    #[test]
    fn aligned_lengths() {
        assert_eq!(group_aligned_len(0, 7), 7);
        assert_eq!(group_aligned_len(3, 7), 7);
        assert_eq!(group_aligned_len(6, 7), 7);
        assert_eq!(group_aligned_len(0, 5), 3);
        assert_eq!(group_aligned_len(0, 2), 0);
        assert_eq!(group_aligned_len(0, 21), 21);
    }

    #[test]
    fn split_layout() {
        let toks: Vec<Token> = (0..21).collect();
        let g = split_groups(&toks, 0, Source::Rank(0)).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[2].kind, GroupKind::Gripper);
        assert_eq!(g[2].tokens, [6]);
        assert_eq!(g[8].slice_index, 2);
        let g = split_groups(&toks[3..], 3, Source::Drafter).unwrap();
        assert_eq!(g[0].kind, GroupKind::Rotation);
        assert!(split_groups(&toks[..5], 0, Source::Drafter).is_err());
        assert!(split_groups(&toks, 2, Source::Drafter).is_err());
    }

    #[test]
    fn single_draft_is_single_chain() {
        let toks: Vec<Token> = (0..21).collect();
        let tree = build_sequence_tree(&[draft(&toks, 0)]).unwrap();
        assert_eq!(tree.depth(), 9);
        let chains = tree.enumerate_chains(64);
        assert_eq!(chains, vec![vec![0; 9]]);
        assert_eq!(tree.chain_tokens(&chains[0]), toks);
    }

    #[test]
    fn shared_positions_dedup() {
        let a: Vec<Token> = (0..21).collect();
        let mut b = a.clone();
        for s in 0..3 {
            b[7 * s + 3] += 100;
            b[7 * s + 6] += 100;
        }
        let tree = build_sequence_tree(&[draft(&a, 0), draft(&b, 1)]).unwrap();
        for s in 0..3 {
            assert_eq!(tree.levels()[3 * s].len(), 1);
            assert_eq!(tree.levels()[3 * s + 2].len(), 2);
        }
        // Gripper isolation forces rot and grip of each slice to agree on a rank,
        // and since grip levels bind their neighbors the whole chain is one rank.
        let chains = tree.enumerate_chains(64);
        assert_eq!(chains.len(), 2);
    }

    #[test]
    fn dfs_prefers_best_rank_and_respects_cap() {
        let a: Vec<Token> = (0..21).collect();
        let b: Vec<Token> = (100..121).collect();
        let tree = build_sequence_tree(&[draft(&a, 0), draft(&b, 1)]).unwrap();
        let chains = tree.enumerate_chains(64);
        assert_eq!(tree.chain_tokens(&chains[0]), a);
        assert_eq!(tree.enumerate_chains(1).len(), 1);
        assert!(chains.iter().all(|c| tree.is_valid_chain(c)));
    }
}
