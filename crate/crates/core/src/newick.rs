//! Rooted binary phylogenies: Newick parsing/writing, indexing, subtrees and
//! rerooting.
//!
//! Labeling scheme (all indices 0-based):
//!
//! * Internal nodes are `0..n-1` in pre-order; the root is node `0`.
//! * Tips are nodes `n-1..2n-1`; tip ordinal `k` (order of first appearance
//!   in the Newick text) is node `n-1+k`.
//! * Branches are `0..2n-2`, numbered in pre-order by their child node, so
//!   the root's left branch is always branch `0`.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};

/// Indexed rooted binary tree with branch lengths.
#[derive(Debug, Clone)]
pub struct Phylogeny {
    n_tips: usize,
    parent: Vec<usize>,
    child: Vec<usize>,
    length: Vec<f64>,
    parent_branch: Vec<Option<usize>>,
    child_branches: Vec<Option<[usize; 2]>>,
    tip_names: Vec<String>,
    tip_lookup: HashMap<String, usize>,
    postorder: Vec<usize>,
}

/// A set of branch indices of one particular tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BranchSet {
    mask: Vec<bool>,
}

impl BranchSet {
    pub fn empty(n_branches: usize) -> Self {
        BranchSet { mask: vec![false; n_branches] }
    }

    pub fn all(n_branches: usize) -> Self {
        BranchSet { mask: vec![true; n_branches] }
    }

    pub fn from_indices<I>(n_branches: usize, indices: I) -> Result<Self>
    where
        I: IntoIterator<Item = usize>,
    {
        let mut mask = vec![false; n_branches];
        for b in indices {
            if b >= n_branches {
                return Err(Error::BranchOutOfRange { index: b, count: n_branches });
            }
            mask[b] = true;
        }
        Ok(BranchSet { mask })
    }

    pub fn from_mask(mask: Vec<bool>) -> Self {
        BranchSet { mask }
    }

    /// Number of branches of the tree this set belongs to.
    pub fn capacity(&self) -> usize {
        self.mask.len()
    }

    #[inline]
    pub fn contains(&self, b: usize) -> bool {
        self.mask.get(b).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&x| x).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&x| x)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &x)| x).map(|(b, _)| b)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn intersection(&self, other: &BranchSet) -> BranchSet {
        let mask = self.mask.iter().zip(&other.mask).map(|(&a, &b)| a && b).collect();
        BranchSet { mask }
    }

    pub fn union(&self, other: &BranchSet) -> BranchSet {
        let mask = self.mask.iter().zip(&other.mask).map(|(&a, &b)| a || b).collect();
        BranchSet { mask }
    }

    pub fn is_disjoint(&self, other: &BranchSet) -> bool {
        self.intersection(other).is_empty()
    }

    /// True when every descendant branch of a member is also a member.
    pub fn is_downward_closed(&self, phylo: &Phylogeny) -> bool {
        self.iter().all(|b| match phylo.child_branches(phylo.child_node(b)) {
            Some([l, r]) => self.contains(l) && self.contains(r),
            None => true,
        })
    }
}

/// Unindexed tree used while parsing, generating and rerooting.
#[derive(Debug, Clone, Default)]
struct ArenaNode {
    name: Option<String>,
    length: Option<f64>,
    children: Vec<usize>,
    // Branches of some source tree that the edge above this node stands for.
    origin: Vec<usize>,
}

impl Phylogeny {
    pub fn n_tips(&self) -> usize {
        self.n_tips
    }

    pub fn n_branches(&self) -> usize {
        self.parent.len()
    }

    pub fn n_nodes(&self) -> usize {
        2 * self.n_tips - 1
    }

    pub fn root(&self) -> usize {
        0
    }

    /// The two branches leaving the root, left then right.
    pub fn root_branches(&self) -> [usize; 2] {
        self.child_branches[0].expect("root is internal")
    }

    pub fn parent_node(&self, b: usize) -> usize {
        self.parent[b]
    }

    pub fn child_node(&self, b: usize) -> usize {
        self.child[b]
    }

    pub fn length(&self, b: usize) -> f64 {
        self.length[b]
    }

    pub fn lengths(&self) -> &[f64] {
        &self.length
    }

    pub fn tree_length(&self) -> f64 {
        self.length.iter().sum()
    }

    pub fn is_tip(&self, node: usize) -> bool {
        node + 1 >= self.n_tips
    }

    /// Tip ordinal of a tip node.
    pub fn tip_index(&self, node: usize) -> Option<usize> {
        self.is_tip(node).then(|| node + 1 - self.n_tips)
    }

    pub fn tip_node(&self, tip: usize) -> usize {
        self.n_tips - 1 + tip
    }

    pub fn tip_names(&self) -> &[String] {
        &self.tip_names
    }

    pub fn find_tip(&self, name: &str) -> Option<usize> {
        self.tip_lookup.get(name).copied()
    }

    pub fn parent_branch(&self, node: usize) -> Option<usize> {
        self.parent_branch[node]
    }

    /// Child branches of an internal node, `None` for tips.
    pub fn child_branches(&self, node: usize) -> Option<[usize; 2]> {
        self.child_branches[node]
    }

    pub fn is_terminal_branch(&self, b: usize) -> bool {
        self.is_tip(self.child[b])
    }

    pub fn terminal_branches(&self) -> BranchSet {
        BranchSet::from_mask((0..self.n_branches()).map(|b| self.is_terminal_branch(b)).collect())
    }

    pub fn internal_branches(&self) -> BranchSet {
        BranchSet::from_mask((0..self.n_branches()).map(|b| !self.is_terminal_branch(b)).collect())
    }

    /// Branch order with children before parents, ending with the two root
    /// branches.
    pub fn postorder(&self) -> &[usize] {
        &self.postorder
    }

    /// Branches of the subtree below `b`, including `b` itself.
    pub fn subtree_branches(&self, b: usize) -> Result<BranchSet> {
        self.check_branch(b)?;
        let mut mask = vec![false; self.n_branches()];
        let mut stack = vec![b];
        while let Some(x) = stack.pop() {
            mask[x] = true;
            if let Some([l, r]) = self.child_branches[self.child[x]] {
                stack.push(l);
                stack.push(r);
            }
        }
        Ok(BranchSet::from_mask(mask))
    }

    /// Names of the tips below branch `b`.
    pub fn tips_below(&self, b: usize) -> Result<Vec<&str>> {
        let set = self.subtree_branches(b)?;
        Ok(set
            .iter()
            .filter_map(|x| self.tip_index(self.child[x]))
            .map(|k| self.tip_names[k].as_str())
            .collect())
    }

    pub fn check_branch(&self, b: usize) -> Result<()> {
        if b >= self.n_branches() {
            return Err(Error::BranchOutOfRange { index: b, count: self.n_branches() });
        }
        Ok(())
    }

    /// Same topology with new branch lengths.
    pub fn with_lengths(&self, lengths: Vec<f64>) -> Result<Phylogeny> {
        if lengths.len() != self.n_branches() {
            return Err(Error::InvalidArgument(format!(
                "expected {} branch lengths, got {}",
                self.n_branches(),
                lengths.len()
            )));
        }
        if let Some(&bad) = lengths.iter().find(|&&t| !(t >= 0.0) || !t.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid branch length {bad}")));
        }
        let mut out = self.clone();
        out.length = lengths;
        Ok(out)
    }

    /// Reroot on branch `b`, placing the new root `fraction` of the way from
    /// its parent end. The old root is suppressed and its two branches merge.
    ///
    /// Returns the new tree and, for each of its branches, the branches of
    /// `self` it corresponds to.
    pub fn reroot(&self, b: usize, fraction: f64) -> Result<(Phylogeny, Vec<Vec<usize>>)> {
        self.check_branch(b)?;
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidArgument(format!("reroot fraction {fraction} not in [0,1]")));
        }
        // Undirected edge list with the root's two edges fused.
        let [r1, r2] = self.root_branches();
        let mut edges: Vec<(usize, usize, f64, Vec<usize>)> = Vec::with_capacity(self.n_branches());
        for x in 0..self.n_branches() {
            if x == r1 || x == r2 {
                continue;
            }
            edges.push((self.parent[x], self.child[x], self.length[x], vec![x]));
        }
        edges.push((
            self.child[r1],
            self.child[r2],
            self.length[r1] + self.length[r2],
            vec![r1, r2],
        ));
        let target = edges.iter().position(|e| e.3.contains(&b)).expect("branch is on some edge");

        let n_nodes = self.n_nodes();
        let new_root = n_nodes;
        let mut adj: Vec<Vec<(usize, f64, Vec<usize>)>> = vec![Vec::new(); n_nodes + 1];
        for (i, (u, v, len, origin)) in edges.iter().enumerate() {
            if i == target {
                adj[new_root].push((*u, fraction * len, origin.clone()));
                adj[new_root].push((*v, (1.0 - fraction) * len, origin.clone()));
                adj[*u].push((new_root, fraction * len, origin.clone()));
                adj[*v].push((new_root, (1.0 - fraction) * len, origin.clone()));
            } else {
                adj[*u].push((*v, *len, origin.clone()));
                adj[*v].push((*u, *len, origin.clone()));
            }
        }

        let mut arena: Vec<ArenaNode> = Vec::with_capacity(n_nodes);
        arena.push(ArenaNode::default());
        // (graph node, graph parent, arena id)
        let mut stack = vec![(new_root, usize::MAX, 0usize)];
        while let Some((g, from, id)) = stack.pop() {
            if let Some(k) = (g < n_nodes).then(|| self.tip_index(g)).flatten() {
                arena[id].name = Some(self.tip_names[k].clone());
            }
            let mut kids = Vec::new();
            for (nb, len, origin) in &adj[g] {
                if *nb == from {
                    continue;
                }
                let cid = arena.len();
                arena.push(ArenaNode {
                    name: None,
                    length: Some(*len),
                    children: Vec::new(),
                    origin: origin.clone(),
                });
                kids.push(cid);
                stack.push((*nb, g, cid));
            }
            arena[id].children = kids;
        }
        index_arena(&arena, 0)
    }

    /// Newick text for this tree. Lengths use the shortest exact decimal
    /// representation, so parsing the output reproduces the tree exactly.
    pub fn to_newick(&self) -> String {
        enum Step {
            Open(usize),
            Close(usize),
            Comma,
        }
        let mut out = String::new();
        let mut stack = vec![Step::Open(self.root())];
        while let Some(step) = stack.pop() {
            match step {
                Step::Open(node) => match self.child_branches[node] {
                    Some([l, r]) => {
                        out.push('(');
                        stack.push(Step::Close(node));
                        stack.push(Step::Open(self.child[r]));
                        stack.push(Step::Comma);
                        stack.push(Step::Open(self.child[l]));
                    }
                    None => {
                        let k = self.tip_index(node).expect("leaf is a tip");
                        out.push_str(&quote_label(&self.tip_names[k]));
                        self.push_length(&mut out, node);
                    }
                },
                Step::Close(node) => {
                    out.push(')');
                    self.push_length(&mut out, node);
                }
                Step::Comma => out.push(','),
            }
        }
        out.push(';');
        out
    }

    fn push_length(&self, out: &mut String, node: usize) {
        if let Some(b) = self.parent_branch[node] {
            let _ = write!(out, ":{}", self.length[b]);
        }
    }
}

/// Parse a single rooted, strictly bifurcating Newick tree.
pub fn parse_newick(text: &str) -> Result<Phylogeny> {
    let (arena, root) = Parser::new(text).parse()?;
    index_arena(&arena, root).map(|(p, _)| p)
}

pub fn write_newick(phylo: &Phylogeny) -> String {
    phylo.to_newick()
}

/// Convenience wrapper around [`Phylogeny::subtree_branches`].
pub fn subtree_branches(phylo: &Phylogeny, b: usize) -> Result<BranchSet> {
    phylo.subtree_branches(b)
}

/// Random Yule-shaped tree with exponential branch lengths of the given
/// mean. Tips are named `t1..tn`.
pub fn random_tree<R: Rng + ?Sized>(n_tips: usize, mean_length: f64, rng: &mut R) -> Result<Phylogeny> {
    if n_tips < 2 {
        return Err(Error::TooFewTips(n_tips));
    }
    let mut arena = vec![ArenaNode::default()];
    let mut tips = vec![0usize];
    while tips.len() < n_tips {
        let pick = rng.random_range(0..tips.len());
        let node = tips.swap_remove(pick);
        for _ in 0..2 {
            let id = arena.len();
            arena.push(ArenaNode::default());
            arena[node].children.push(id);
            tips.push(id);
        }
    }
    let mut count = 0;
    for node in arena.iter_mut().skip(1) {
        let u: f64 = rng.random();
        node.length = Some(-mean_length * (1.0 - u).ln());
    }
    // Names follow the final left-to-right order, not creation order.
    let order = preorder_ids(&arena, 0);
    for id in order {
        if arena[id].children.is_empty() {
            count += 1;
            arena[id].name = Some(format!("t{count}"));
        }
    }
    index_arena(&arena, 0).map(|(p, _)| p)
}

fn preorder_ids(arena: &[ArenaNode], root: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(arena.len());
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        out.push(id);
        stack.extend(arena[id].children.iter().rev());
    }
    out
}

fn index_arena(arena: &[ArenaNode], root: usize) -> Result<(Phylogeny, Vec<Vec<usize>>)> {
    let order = preorder_ids(arena, root);
    let mut n_tips = 0;
    for &id in &order {
        match arena[id].children.len() {
            0 => n_tips += 1,
            2 => {}
            k => return Err(Error::Multifurcation { children: k }),
        }
    }
    if n_tips < 2 {
        return Err(Error::TooFewTips(n_tips));
    }
    if arena[root].length.is_some() {
        log::warn!("ignoring length on the root edge");
    }

    let n_nodes = 2 * n_tips - 1;
    let n_branches = n_nodes - 1;
    let mut label = vec![usize::MAX; arena.len()];
    let mut next_internal = 0;
    let mut next_tip = 0;
    let mut tip_names = Vec::with_capacity(n_tips);
    let mut tip_lookup = HashMap::with_capacity(n_tips);
    for &id in &order {
        if arena[id].children.is_empty() {
            let name = arena[id]
                .name
                .clone()
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::NewickSyntax { pos: 0, msg: "tip without a name".into() })?;
            if tip_lookup.insert(name.clone(), next_tip).is_some() {
                return Err(Error::DuplicateTip(name));
            }
            tip_names.push(name);
            label[id] = n_tips - 1 + next_tip;
            next_tip += 1;
        } else {
            label[id] = next_internal;
            next_internal += 1;
        }
    }

    let mut parent = vec![0; n_branches];
    let mut child = vec![0; n_branches];
    let mut length = vec![0.0; n_branches];
    let mut origins = vec![Vec::new(); n_branches];
    let mut parent_branch = vec![None; n_nodes];
    let mut child_branches = vec![None; n_nodes];
    let mut branch_of = vec![usize::MAX; arena.len()];
    let mut next_branch = 0;
    for &id in &order {
        if id == root {
            continue;
        }
        branch_of[id] = next_branch;
        next_branch += 1;
    }
    for &id in &order {
        let node = &arena[id];
        if id != root {
            let b = branch_of[id];
            let len = node.length.ok_or_else(|| Error::NewickSyntax {
                pos: 0,
                msg: "missing branch length".into(),
            })?;
            if !(len >= 0.0) || !len.is_finite() {
                return Err(Error::InvalidArgument(format!("invalid branch length {len}")));
            }
            child[b] = label[id];
            length[b] = len;
            origins[b] = node.origin.clone();
            parent_branch[label[id]] = Some(b);
        }
        if let [l, r] = node.children[..] {
            let (bl, br) = (branch_of[l], branch_of[r]);
            parent[bl] = label[id];
            parent[br] = label[id];
            child_branches[label[id]] = Some([bl, br]);
        }
    }

    // Node post-order; each internal node emits its two child branches.
    let mut postorder = Vec::with_capacity(n_branches);
    let mut stack = vec![(0usize, false)];
    while let Some((node, expanded)) = stack.pop() {
        let Some([l, r]) = child_branches[node] else { continue };
        if expanded {
            postorder.push(l);
            postorder.push(r);
        } else {
            stack.push((node, true));
            stack.push((child[r], false));
            stack.push((child[l], false));
        }
    }

    Ok((
        Phylogeny {
            n_tips,
            parent,
            child,
            length,
            parent_branch,
            child_branches,
            tip_names,
            tip_lookup,
            postorder,
        },
        origins,
    ))
}

fn quote_label(name: &str) -> String {
    let plain = !name.is_empty()
        && name.chars().all(|c| !c.is_whitespace() && !"()[]':;,".contains(c));
    if plain {
        name.to_string()
    } else {
        format!("'{}'", name.replace('\'', "''"))
    }
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser { text: text.as_bytes(), pos: 0 }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::NewickSyntax { pos: self.pos, msg: msg.into() })
    }

    fn skip_ws(&mut self) -> Result<()> {
        loop {
            match self.text.get(self.pos) {
                Some(c) if c.is_ascii_whitespace() => self.pos += 1,
                Some(b'[') => {
                    match self.text[self.pos..].iter().position(|&c| c == b']') {
                        Some(off) => self.pos += off + 1,
                        None => return self.err("unterminated comment"),
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn peek(&mut self) -> Result<Option<u8>> {
        self.skip_ws()?;
        Ok(self.text.get(self.pos).copied())
    }

    fn parse(mut self) -> Result<(Vec<ArenaNode>, usize)> {
        let mut arena: Vec<ArenaNode> = Vec::new();
        // Children collected so far for each open parenthesis.
        let mut open: Vec<Vec<usize>> = Vec::new();
        let mut current: Option<usize>;

        loop {
            // A node starts here: either a group or a leaf label.
            match self.peek()? {
                Some(b'(') => {
                    self.pos += 1;
                    open.push(Vec::new());
                    continue;
                }
                Some(b')' | b',' | b';' | b':') | None => {
                    return self.err("expected a tip name or '('");
                }
                Some(_) => {
                    let name = self.label()?;
                    let length = self.length()?;
                    arena.push(ArenaNode { name: Some(name), length, ..Default::default() });
                    current = Some(arena.len() - 1);
                }
            }
            // Close as many groups as the text closes.
            loop {
                match self.peek()? {
                    Some(b',') => {
                        self.pos += 1;
                        match open.last_mut() {
                            Some(group) => group.push(current.take().expect("node just parsed")),
                            None => return self.err("',' outside parentheses"),
                        }
                        break;
                    }
                    Some(b')') => {
                        self.pos += 1;
                        let Some(mut group) = open.pop() else {
                            return self.err("unbalanced ')'");
                        };
                        group.push(current.take().expect("node just parsed"));
                        let name = match self.peek()? {
                            Some(c) if !b"(),:;".contains(&c) => Some(self.label()?),
                            _ => None,
                        };
                        let length = self.length()?;
                        arena.push(ArenaNode { name, length, children: group, origin: Vec::new() });
                        current = Some(arena.len() - 1);
                    }
                    Some(b';') => {
                        self.pos += 1;
                        if !open.is_empty() {
                            return self.err("unbalanced '(' before ';'");
                        }
                        if self.peek()?.is_some() {
                            return self.err("trailing text after ';'");
                        }
                        let root = current.expect("node just parsed");
                        return Ok((arena, root));
                    }
                    None => return self.err("unexpected end of input (missing ';' or ')')"),
                    Some(_) => return self.err("expected ',', ')' or ';'"),
                }
            }
        }
    }

    fn label(&mut self) -> Result<String> {
        self.skip_ws()?;
        if self.text.get(self.pos) == Some(&b'\'') {
            self.pos += 1;
            let mut out = Vec::new();
            loop {
                match self.text.get(self.pos) {
                    Some(b'\'') if self.text.get(self.pos + 1) == Some(&b'\'') => {
                        out.push(b'\'');
                        self.pos += 2;
                    }
                    Some(b'\'') => {
                        self.pos += 1;
                        break;
                    }
                    Some(&c) => {
                        out.push(c);
                        self.pos += 1;
                    }
                    None => return self.err("unterminated quoted label"),
                }
            }
            return String::from_utf8(out).or_else(|_| self.err("label is not UTF-8"));
        }
        let start = self.pos;
        while let Some(&c) = self.text.get(self.pos) {
            if c.is_ascii_whitespace() || b"()[]':;,".contains(&c) {
                break;
            }
            self.pos += 1;
        }
        std::str::from_utf8(&self.text[start..self.pos])
            .map(str::to_string)
            .or_else(|_| self.err("label is not UTF-8"))
    }

    fn length(&mut self) -> Result<Option<f64>> {
        if self.peek()? != Some(b':') {
            return Ok(None);
        }
        self.pos += 1;
        self.skip_ws()?;
        let start = self.pos;
        while let Some(&c) = self.text.get(self.pos) {
            if c.is_ascii_digit() || b"+-.eE".contains(&c) {
                self.pos += 1;
            } else {
                break;
            }
        }
        let raw = std::str::from_utf8(&self.text[start..self.pos]).unwrap_or("");
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok(Some(v)),
            Ok(v) => self.err(format!("invalid branch length {v}")),
            Err(_) => self.err(format!("malformed branch length `{raw}`")),
        }
    }
}
