//! Seeded toy treebank generator.
//!
//! Trees come from a small hand-written PCFG over S, SBAR, NP, VP, PP and
//! ADJP. Open-class words are built from syllable stems plus a suffix that
//! depends on the tag, so word shape carries part of the category signal.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::treebank::Tree;

pub const MIN_WORDS: usize = 5;
pub const MAX_WORDS: usize = 40;

const VOCAB_SEED: u64 = 0x5eed_cafe;
const STEMS_PER_CLASS: usize = 24;
const MAX_DEPTH: usize = 6;

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr", "pl",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

const DT: &[&str] = &["the", "a", "this", "that", "every", "some"];
const PRP: &[&str] = &["they", "we", "she", "he", "it"];
const IN: &[&str] = &["on", "in", "with", "under", "near", "from"];
const COMP: &[&str] = &["that", "because", "if", "while"];
const CC: &[&str] = &["and", "or", "but"];
const MD: &[&str] = &["can", "will", "should", "might"];

struct Lexicon {
    nouns: Vec<String>,
    verbs: Vec<String>,
    adjs: Vec<String>,
}

fn stem(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(1..=2);
    let mut s = String::new();
    for _ in 0..syllables {
        s.push_str(ONSETS.choose(rng).expect("non-empty"));
        s.push_str(VOWELS.choose(rng).expect("non-empty"));
    }
    s.push_str(["n", "r", "m", "t", "k"].choose(rng).expect("non-empty"));
    s
}

impl Lexicon {
    fn new() -> Lexicon {
        let mut rng = ChaCha8Rng::seed_from_u64(VOCAB_SEED);
        let mut take = |n| (0..n).map(|_| stem(&mut rng)).collect::<Vec<_>>();
        Lexicon {
            nouns: take(STEMS_PER_CLASS),
            verbs: take(STEMS_PER_CLASS),
            adjs: take(STEMS_PER_CLASS),
        }
    }
}

struct Gen<'a> {
    rng: ChaCha8Rng,
    lex: &'a Lexicon,
}

impl Gen<'_> {
    fn pick(&mut self, words: &[&str]) -> String {
        words.choose(&mut self.rng).expect("non-empty").to_string()
    }

    fn pick_owned(&mut self, words: &[String]) -> String {
        words.choose(&mut self.rng).expect("non-empty").clone()
    }

    fn p(&mut self, prob: f64) -> bool {
        self.rng.gen_bool(prob)
    }

    fn noun(&mut self) -> Tree {
        let stem = self.pick_owned(&self.lex.nouns);
        if self.p(0.35) {
            Tree::leaf(format!("{stem}ions"), "NNS")
        } else {
            Tree::leaf(format!("{stem}ion"), "NN")
        }
    }

    fn adj(&mut self) -> Tree {
        let stem = self.pick_owned(&self.lex.adjs);
        let suffix = if self.p(0.5) { "ous" } else { "ful" };
        Tree::leaf(format!("{stem}{suffix}"), "JJ")
    }

    fn verb(&mut self, tag: &str) -> Tree {
        let stem = self.pick_owned(&self.lex.verbs);
        let word = match tag {
            "VBD" => format!("{stem}ed"),
            "VBZ" => format!("{stem}izes"),
            _ => format!("{stem}ize"),
        };
        Tree::leaf(word, tag)
    }

    fn adjp(&mut self) -> Tree {
        if self.p(0.5) {
            let adv = format!("{}ly", self.pick_owned(&self.lex.adjs));
            let adj = self.adj();
            Tree::node("ADJP", vec![Tree::leaf(adv, "RB"), adj])
        } else {
            let a = self.adj();
            let cc = Tree::leaf(self.pick(CC), "CC");
            let b = self.adj();
            Tree::node("ADJP", vec![a, cc, b])
        }
    }

    fn np(&mut self, depth: usize) -> Tree {
        let deep = depth >= MAX_DEPTH;
        let r: f64 = self.rng.gen();
        if r < 0.12 {
            let w = self.pick(PRP);
            return Tree::node("NP", vec![Tree::leaf(w, "PRP")]);
        }
        if !deep && r < 0.32 {
            let head = self.np(depth + 1);
            let pp = self.pp(depth + 1);
            return Tree::node("NP", vec![head, pp]);
        }
        if !deep && r < 0.36 {
            let head = self.np(depth + 1);
            let sbar = self.sbar(depth + 1);
            return Tree::node("NP", vec![head, sbar]);
        }
        let mut kids = vec![Tree::leaf(self.pick(DT), "DT")];
        let m: f64 = self.rng.gen();
        if m < 0.2 {
            kids.push(self.adjp());
        } else if m < 0.5 {
            kids.push(self.adj());
        }
        if self.p(0.15) {
            let stem = self.pick_owned(&self.lex.nouns);
            kids.push(Tree::leaf(format!("{stem}ion"), "NN"));
        }
        kids.push(self.noun());
        Tree::node("NP", kids)
    }

    fn pp(&mut self, depth: usize) -> Tree {
        let prep = Tree::leaf(self.pick(IN), "IN");
        let obj = self.np(depth + 1);
        Tree::node("PP", vec![prep, obj])
    }

    fn sbar(&mut self, depth: usize) -> Tree {
        let comp = Tree::leaf(self.pick(COMP), "IN");
        let s = if self.p(0.15) {
            // subjectless clause; with a bare verb this is a two-level unary chain
            Tree::node("S", vec![self.vp(depth + 2)])
        } else {
            self.s(depth + 1)
        };
        Tree::node("SBAR", vec![comp, s])
    }

    fn vp(&mut self, depth: usize) -> Tree {
        let deep = depth >= MAX_DEPTH;
        let tag = if self.p(0.5) { "VBD" } else { "VBZ" };
        let r: f64 = self.rng.gen();
        if r < 0.15 {
            return Tree::node("VP", vec![self.verb(tag)]);
        }
        if r < 0.25 {
            let md = Tree::leaf(self.pick(MD), "MD");
            let v = self.verb("VB");
            let obj = self.np(depth + 2);
            return Tree::node("VP", vec![md, Tree::node("VP", vec![v, obj])]);
        }
        if !deep && r < 0.35 {
            let v = self.verb(tag);
            let sbar = self.sbar(depth + 1);
            return Tree::node("VP", vec![v, sbar]);
        }
        let v = self.verb(tag);
        let obj = self.np(depth + 1);
        let mut kids = vec![v, obj];
        if !deep && self.p(0.35) {
            kids.push(self.pp(depth + 1));
        }
        Tree::node("VP", kids)
    }

    fn s(&mut self, depth: usize) -> Tree {
        let deep = depth >= MAX_DEPTH;
        if !deep && self.p(0.08) {
            let a = self.s(depth + 1);
            let cc = Tree::leaf(self.pick(CC), "CC");
            let b = self.s(depth + 1);
            return Tree::node("S", vec![a, cc, b]);
        }
        let subj = self.np(depth + 1);
        let vp = self.vp(depth + 1);
        Tree::node("S", vec![subj, vp])
    }
}

/// `n` trees of 5 to 40 words each; the same seed always yields the same
/// corpus. Unary chains are at most two deep (`S -> VP -> VBD`).
pub fn synth_treebank(seed: u64, n: usize) -> Vec<Tree> {
    let lex = Lexicon::new();
    let mut gen = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        lex: &lex,
    };
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let t = gen.s(0);
        let len = t.num_words();
        if (MIN_WORDS..=MAX_WORDS).contains(&len) {
            out.push(t);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::extract_hierarchies;
    use crate::transition::{oracle, replay, Grammar};
    use crate::treebank::{binarize, unbinarize, HeadRules};

    #[test]
    fn same_seed_same_corpus() {
        assert_eq!(synth_treebank(42, 30), synth_treebank(42, 30));
        assert_ne!(synth_treebank(42, 30), synth_treebank(43, 30));
    }

    #[test]
    fn lengths_and_invariants() {
        for t in synth_treebank(1, 200) {
            t.validate().unwrap();
            assert!((MIN_WORDS..=MAX_WORDS).contains(&t.num_words()));
        }
    }

    #[test]
    fn oracle_round_trip() {
        let trees = synth_treebank(9, 100);
        let heads = HeadRules::default();
        let bins: Vec<_> = trees.iter().map(|t| binarize(t, &heads)).collect();
        let g = Grammar::from_bintrees(&bins);
        for (t, b) in trees.iter().zip(&bins) {
            let actions = oracle(b, &g).unwrap();
            let state = replay(t.num_words(), &actions, &g).unwrap();
            let s = crate::sentence::Sentence::from_tree(t);
            assert_eq!(&unbinarize(&state.to_bintree(&s, &g).unwrap()).unwrap(), t);
        }
    }

    #[test]
    fn has_deep_hierarchies() {
        let deepest = synth_treebank(2, 100)
            .iter()
            .flat_map(extract_hierarchies)
            .map(|h| h.start.labels.len().max(h.end.labels.len()))
            .max()
            .unwrap();
        assert!(deepest >= 4, "deepest hierarchy {deepest}");
    }

    #[test]
    fn words_carry_suffixes() {
        let trees = synth_treebank(4, 50);
        for (w, pos) in trees.iter().flat_map(|t| t.tagged_words()) {
            match pos.as_str() {
                "NN" => assert!(w.ends_with("ion")),
                "NNS" => assert!(w.ends_with("ions")),
                "VBD" => assert!(w.ends_with("ed")),
                "JJ" => assert!(w.ends_with("ous") || w.ends_with("ful")),
                _ => {}
            }
        }
    }
}
