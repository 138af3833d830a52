//! Completion tries built from beam hypotheses.
//!
//! Node scores are probabilities: the exponential of the cumulative
//! log-probability of the path to the node. A child's score divided by its
//! parent's is therefore the conditional probability of that edge, and the
//! early-stop test `child < R·parent` reads as "conditional probability below
//! R".

mod cache;
mod postprocess;

pub use cache::{cache_key, SuggestionCache, CACHE_CAPACITY, CACHE_KEY_CHARS};
pub use postprocess::{postprocess, postprocess_continuation, LineState, Span, Suggestion};

use serde::{Deserialize, Serialize};

use crate::decoder::Hypothesis;
use crate::vocab::{SubtokenVocabulary, VocabError, END_OF_TOKEN};

pub const DEFAULT_ALPHA: f64 = 0.8;
pub const DEFAULT_KAPPA: f64 = 10.0;

/// `α / (1 + e^(−L/κ))`.
pub fn early_stop_ratio(root_position: f64, alpha: f64, kappa: f64) -> f64 {
    alpha / (1.0 + (-root_position / kappa).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrieNode {
    pub subtoken: String,
    pub score: f64,
    /// Indices into the arena, sorted by subtoken.
    pub children: Vec<usize>,
}

/// Arena trie; node 0 is the root with an empty subtoken and score 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionTrie {
    nodes: Vec<TrieNode>,
    /// Character offset of the query point within its line.
    pub root_position: usize,
}

impl CompletionTrie {
    pub fn empty(root_position: usize) -> Self {
        CompletionTrie {
            nodes: vec![TrieNode {
                subtoken: String::new(),
                score: 1.0,
                children: Vec::new(),
            }],
            root_position,
        }
    }

    /// Merges subtoken paths by common prefix. Each node keeps the highest
    /// prefix probability among the hypotheses passing through it.
    pub fn build(hypotheses: &[Hypothesis], vocab: &SubtokenVocabulary, root_position: usize) -> Result<Self, VocabError> {
        let mut trie = CompletionTrie::empty(root_position);
        for hyp in hypotheses {
            let images = vocab.images(&hyp.ids)?;
            let mut node = 0;
            let mut cumulative = 0.0;
            for (image, lp) in images.into_iter().zip(&hyp.step_log_probs) {
                cumulative += lp;
                node = trie.child_or_insert(node, image, cumulative.exp());
            }
        }
        Ok(trie)
    }

    /// Builds from explicit subtoken paths and per-edge conditional
    /// probabilities.
    pub fn from_paths<S: AsRef<str>>(paths: &[(Vec<S>, Vec<f64>)], root_position: usize) -> Self {
        let mut trie = CompletionTrie::empty(root_position);
        for (subtokens, probs) in paths {
            let mut node = 0;
            let mut score = 1.0;
            for (s, p) in subtokens.iter().zip(probs) {
                score *= p;
                node = trie.child_or_insert(node, s.as_ref().to_string(), score);
            }
        }
        trie
    }

    fn child_or_insert(&mut self, parent: usize, subtoken: String, score: f64) -> usize {
        let children = &self.nodes[parent].children;
        match children.binary_search_by(|&c| self.nodes[c].subtoken.as_str().cmp(&subtoken)) {
            Ok(pos) => {
                let c = children[pos];
                let node = &mut self.nodes[c];
                node.score = node.score.max(score);
                c
            }
            Err(pos) => {
                let c = self.nodes.len();
                self.nodes.push(TrieNode {
                    subtoken,
                    score,
                    children: Vec::new(),
                });
                self.nodes[parent].children.insert(pos, c);
                c
            }
        }
    }

    pub fn node(&self, index: usize) -> &TrieNode {
        &self.nodes[index]
    }

    pub fn root(&self) -> &TrieNode {
        &self.nodes[0]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes[0].children.is_empty()
    }

    pub fn ratio(&self, alpha: f64, kappa: f64) -> f64 {
        early_stop_ratio(self.root_position as f64, alpha, kappa)
    }

    /// Node indices visited by greedy traversal, root excluded.
    pub fn greedy_path(&self, alpha: f64, kappa: f64) -> Vec<usize> {
        let r = self.ratio(alpha, kappa);
        let mut path = Vec::new();
        let mut node = 0;
        loop {
            let parent = &self.nodes[node];
            // Children are sorted by subtoken, so the first maximum wins ties.
            let best = parent
                .children
                .iter()
                .copied()
                .reduce(|a, b| if self.nodes[b].score > self.nodes[a].score { b } else { a });
            match best {
                Some(b) if self.nodes[b].score >= r * parent.score => {
                    path.push(b);
                    node = b;
                }
                _ => return path,
            }
        }
    }

    /// Greedy walk from the root, stopping when no child keeps at least `R`
    /// of its parent's score.
    pub fn traverse_greedy(&self, alpha: f64, kappa: f64) -> Vec<String> {
        self.greedy_path(alpha, kappa)
            .into_iter()
            .map(|i| self.nodes[i].subtoken.clone())
            .collect()
    }

    /// Re-roots the trie past one typed character, or `None` on a miss.
    ///
    /// End-of-token markers are zero-width and skipped. Whitespace is always
    /// a miss since spacing is not part of the subtoken images. Scores are
    /// rescaled so the new root has score 1; score ratios, and with them the
    /// traversal, are preserved.
    pub fn prune_on_keystroke(&self, typed: char) -> Option<CompletionTrie> {
        if typed.is_whitespace() {
            return None;
        }
        let mut matched = false;
        let mut survivors = Vec::new();
        let mut pending: Vec<Edge> = self.nodes[0].children.iter().map(|&c| Edge::fresh(self, c, 0)).collect();
        while let Some(edge) = pending.pop() {
            let rest = edge.rest.trim_start_matches(END_OF_TOKEN);
            if rest.is_empty() {
                pending.extend(self.nodes[edge.node].children.iter().map(|&c| Edge::fresh(self, c, edge.node)));
                continue;
            }
            if rest.starts_with(typed) {
                matched = true;
                let rest = rest[typed.len_utf8()..].to_string();
                if rest.is_empty() {
                    survivors.extend(self.nodes[edge.node].children.iter().map(|&c| Edge::fresh(self, c, edge.node)));
                } else {
                    survivors.push(Edge { rest, ..edge });
                }
            }
        }
        if !matched {
            return None;
        }
        let base = survivors
            .iter()
            .map(|e| self.nodes[e.parent].score)
            .fold(f64::MIN, f64::max);
        // Consuming a leaf leaves an empty trie, which is still a hit.
        let mut out = CompletionTrie::empty(self.root_position);
        for edge in &survivors {
            let c = out.child_or_insert(0, edge.rest.clone(), self.nodes[edge.node].score / base);
            self.copy_subtree(edge.node, &mut out, c, base);
        }
        Some(out)
    }

    fn copy_subtree(&self, from: usize, out: &mut CompletionTrie, to: usize, scale: f64) {
        for &c in &self.nodes[from].children {
            let node = &self.nodes[c];
            let copy = out.child_or_insert(to, node.subtoken.clone(), node.score / scale);
            self.copy_subtree(c, out, copy, scale);
        }
    }

    /// Wire form: nested `(subtoken, score, children)` records in depth-first
    /// order with children sorted by subtoken.
    pub fn to_wire(&self) -> WireTrie {
        WireTrie {
            root_position: self.root_position,
            root: self.wire_node(0),
        }
    }

    fn wire_node(&self, index: usize) -> WireNode {
        let node = &self.nodes[index];
        WireNode {
            subtoken: node.subtoken.clone(),
            score: node.score,
            children: node.children.iter().map(|&c| self.wire_node(c)).collect(),
        }
    }

    pub fn from_wire(wire: &WireTrie) -> Self {
        let mut trie = CompletionTrie::empty(wire.root_position);
        trie.nodes[0].score = wire.root.score;
        fn add(trie: &mut CompletionTrie, parent: usize, node: &WireNode) {
            for child in &node.children {
                let c = trie.child_or_insert(parent, child.subtoken.clone(), child.score);
                add(trie, c, child);
            }
        }
        add(&mut trie, 0, &wire.root);
        trie
    }
}

struct Edge {
    node: usize,
    parent: usize,
    rest: String,
}

impl Edge {
    fn fresh(trie: &CompletionTrie, node: usize, parent: usize) -> Self {
        Edge {
            node,
            parent,
            rest: trie.nodes[node].subtoken.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireNode {
    pub subtoken: String,
    pub score: f64,
    pub children: Vec<WireNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTrie {
    pub root_position: usize,
    pub root: WireNode,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chain(subtokens: &[&str], probs: &[f64]) -> CompletionTrie {
        CompletionTrie::from_paths(&[(subtokens.to_vec(), probs.to_vec())], 0)
    }

    #[test]
    fn ratio_values() {
        assert_eq!(early_stop_ratio(0.0, 0.8, 10.0), 0.4);
        assert!((early_stop_ratio(10.0, 0.8, 10.0) - 0.8 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((early_stop_ratio(10.0, 0.8, 10.0) - 0.5849).abs() < 1e-4);
        assert!((early_stop_ratio(1e6, 0.8, 10.0) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn shared_prefixes_merge() {
        let trie = CompletionTrie::from_paths(&[(vec!["foo(", "bar)"], vec![0.9, 0.5]), (vec!["foo(", "baz)"], vec![0.9, 0.4])], 0);
        assert_eq!(trie.root().children.len(), 1);
        let foo = trie.node(trie.root().children[0]);
        assert_eq!(foo.subtoken, "foo(");
        assert_eq!(foo.children.len(), 2);
    }

    #[test]
    fn chain_stops_on_low_conditional() {
        let mut trie = chain(&["a", "b", "c"], &[0.9, 0.9, 0.2]);
        assert_eq!(trie.traverse_greedy(0.8, 10.0), vec!["a", "b"]);
        trie.root_position = 5;
        assert!(trie.traverse_greedy(1.0, 1e-9).is_empty());
    }

    #[test]
    fn ties_break_lexicographically() {
        let trie = CompletionTrie::from_paths(&[(vec!["b"], vec![0.5]), (vec!["a"], vec![0.5])], 0);
        assert_eq!(trie.traverse_greedy(0.8, 10.0), vec!["a"]);
    }

    #[test]
    fn prune_splits_subtokens() {
        let trie = CompletionTrie::from_paths(&[(vec!["foo(", "x"], vec![0.9, 0.8])], 0);
        let pruned = trie.prune_on_keystroke('f').unwrap();
        assert_eq!(pruned.traverse_greedy(0.8, 10.0), vec!["oo(", "x"]);
        assert!(trie.prune_on_keystroke('z').is_none());
        let mut t = trie.clone();
        for c in "foo(".chars() {
            t = t.prune_on_keystroke(c).unwrap();
        }
        assert_eq!(t.traverse_greedy(0.8, 10.0), vec!["x"]);
        assert!((t.node(t.root().children[0]).score - 0.8).abs() < 1e-12);
    }

    #[test]
    fn markers_are_zero_width() {
        let trie = CompletionTrie::from_paths(&[(vec!["foo\u{2581}", "(\u{2581}"], vec![0.9, 0.9])], 0);
        let mut t = trie;
        for c in "foo".chars() {
            t = t.prune_on_keystroke(c).unwrap();
        }
        assert!(t.prune_on_keystroke(' ').is_none());
        let t = t.prune_on_keystroke('(').unwrap();
        assert_eq!(t.traverse_greedy(0.8, 10.0), vec!["\u{2581}"]);
        let fresh = CompletionTrie::from_paths(&[(vec!["fo", "o\u{2581}"], vec![0.9, 0.9])], 0);
        assert!(fresh.prune_on_keystroke('o').is_none());
        assert_eq!(fresh.prune_on_keystroke('f').unwrap().traverse_greedy(0.8, 10.0), vec!["o", "o\u{2581}"]);
    }

    #[test]
    fn wire_roundtrip() {
        let trie = CompletionTrie::from_paths(&[(vec!["foo(", "bar)"], vec![0.9, 0.5]), (vec!["foo(", "baz)"], vec![0.9, 0.4])], 7);
        let json = serde_json::to_string(&trie.to_wire()).unwrap();
        assert!(json.starts_with(r#"{"root_position":7,"root":{"subtoken":"","score":1.0,"children":[{"subtoken":"foo(""#));
        let back: WireTrie = serde_json::from_str(&json).unwrap();
        assert_eq!(CompletionTrie::from_wire(&back), trie);
    }

    fn arb_paths_from(alphabet: Vec<&'static str>) -> impl Strategy<Value = Vec<(Vec<String>, Vec<f64>)>> {
        let step = (prop::sample::select(alphabet), 0.01f64..=1.0);
        prop::collection::vec(prop::collection::vec(step, 1..6), 1..6).prop_map(|paths| {
            paths
                .into_iter()
                .map(|p| p.into_iter().map(|(s, q)| (s.to_string(), q)).unzip())
                .collect()
        })
    }

    fn arb_paths() -> impl Strategy<Value = Vec<(Vec<String>, Vec<f64>)>> {
        arb_paths_from(vec!["a", "b", "ab", "c\u{2581}", "("])
    }

    proptest! {
        #[test]
        fn scores_never_increase_down_the_trie(paths in arb_paths(), pos in 0usize..80) {
            let trie = CompletionTrie::from_paths(&paths, pos);
            for i in 0..trie.num_nodes() {
                let n = trie.node(i);
                for &c in &n.children {
                    prop_assert!(trie.node(c).score <= n.score);
                }
            }
        }

        #[test]
        fn lower_alpha_never_shortens(paths in arb_paths(), pos in 0usize..80, a in 0.05f64..1.0, b in 0.05f64..1.0) {
            let trie = CompletionTrie::from_paths(&paths, pos);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(trie.traverse_greedy(lo, 10.0).len() >= trie.traverse_greedy(hi, 10.0).len());
        }

        // Holds when the typed text has a single segmentation; with sibling
        // images like `a` and `ab` the pruned trie re-ranks both readings.
        #[test]
        fn pruning_along_the_greedy_path_is_coherent(paths in arb_paths_from(vec!["ab", "d", "c\u{2581}", "("]), pos in 0usize..80) {
            let trie = CompletionTrie::from_paths(&paths, pos);
            let greedy = trie.traverse_greedy(0.5, 10.0);
            let text: String = greedy.concat();
            if let Some(first) = text.chars().find(|&c| c != END_OF_TOKEN) {
                let pruned = trie.prune_on_keystroke(first).unwrap();
                let rest: String = pruned.traverse_greedy(0.5, 10.0).concat();
                let expected: String = text.trim_start_matches(END_OF_TOKEN)[first.len_utf8()..].to_string();
                prop_assert_eq!(rest.trim_start_matches(END_OF_TOKEN), expected.trim_start_matches(END_OF_TOKEN));
            }
        }
    }
}
