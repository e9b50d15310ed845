//! Penn-style bracketed treebanks: reading, canonical writing, head-rule
//! driven left-factored binarization and its inverse.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// Suffix that marks the intermediate nodes introduced by binarization.
pub const TEMP_SUFFIX: char = '*';

/// POS assigned to bare tokens that appear next to bracketed siblings.
pub const BARE_TOKEN_POS: &str = "XX";

const TRACE_POS: &str = "-NONE-";

/// Deepest bracket nesting accepted by [`read_ptb`].
pub const MAX_DEPTH: usize = 512;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreebankError {
    #[error("{line}:{column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("malformed tree: {0}")]
    Structure(String),
    #[error("bad head rule on line {line}: {message}")]
    HeadRule { line: usize, message: String },
}

pub fn is_temporary(label: &str) -> bool {
    label.ends_with(TEMP_SUFFIX)
}

/// Strips functional tags and co-indexation (`NP-SBJ-1` -> `NP`, `NP=2` -> `NP`).
/// Labels that begin with `-` (`-LRB-`, `-NONE-`) are left alone.
pub fn normalize_label(label: &str) -> &str {
    if label.starts_with('-') {
        return label;
    }
    match label
        .char_indices()
        .skip(1)
        .find(|&(_, c)| c == '-' || c == '=')
    {
        Some((idx, _)) => &label[..idx],
        None => label,
    }
}

/// An unbinarized constituency tree over POS-tagged words.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Tree {
    Node { label: String, children: Vec<Tree> },
    Leaf { word: String, pos: String },
}

impl Tree {
    pub fn node(label: impl Into<String>, children: Vec<Tree>) -> Tree {
        Tree::Node {
            label: label.into(),
            children,
        }
    }

    pub fn leaf(word: impl Into<String>, pos: impl Into<String>) -> Tree {
        Tree::Leaf {
            word: word.into(),
            pos: pos.into(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Tree::Leaf { .. })
    }

    /// Constituent label, or POS tag for a leaf.
    pub fn label(&self) -> &str {
        match self {
            Tree::Node { label, .. } => label,
            Tree::Leaf { pos, .. } => pos,
        }
    }

    /// `(word, pos)` pairs in sentence order.
    pub fn tagged_words(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<(String, String)>) {
        match self {
            Tree::Leaf { word, pos } => out.push((word.clone(), pos.clone())),
            Tree::Node { children, .. } => children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    pub fn words(&self) -> Vec<String> {
        self.tagged_words().into_iter().map(|(w, _)| w).collect()
    }

    pub fn num_words(&self) -> usize {
        match self {
            Tree::Leaf { .. } => 1,
            Tree::Node { children, .. } => children.iter().map(Tree::num_words).sum(),
        }
    }

    /// All internal nodes as `(label, start, end)` with half-open word spans, in
    /// pre-order (outer constituents before inner ones).
    pub fn constituents(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        self.collect_spans(0, &mut out);
        out
    }

    fn collect_spans(&self, start: usize, out: &mut Vec<(String, usize, usize)>) -> usize {
        match self {
            Tree::Leaf { .. } => start + 1,
            Tree::Node { label, children } => {
                let slot = out.len();
                out.push((label.clone(), start, start));
                let mut end = start;
                for child in children {
                    end = child.collect_spans(end, out);
                }
                out[slot].2 = end;
                end
            }
        }
    }

    /// Checks the structural invariants: internal nodes have children, leaves
    /// carry a non-empty word and POS.
    pub fn validate(&self) -> Result<(), TreebankError> {
        match self {
            Tree::Leaf { word, pos } => {
                if word.is_empty() || pos.is_empty() {
                    return Err(TreebankError::Structure(
                        "leaf with empty word or POS".into(),
                    ));
                }
                Ok(())
            }
            Tree::Node { label, children } => {
                if label.is_empty() {
                    return Err(TreebankError::Structure(
                        "internal node without label".into(),
                    ));
                }
                if children.is_empty() {
                    return Err(TreebankError::Structure(format!(
                        "node {label} has no children"
                    )));
                }
                children.iter().try_for_each(Tree::validate)
            }
        }
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tree::Leaf { word, pos } => write!(f, "({pos} {word})"),
            Tree::Node { label, children } => {
                write!(f, "({label}")?;
                for child in children {
                    write!(f, " {child}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Serializes trees one per line in canonical bracketed form.
pub fn write_ptb(trees: &[Tree]) -> String {
    let mut out = String::new();
    for tree in trees {
        out.push_str(&tree.to_string());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Open,
    Close,
    Atom(String),
}

#[derive(Debug, Clone, Copy)]
struct Pos {
    line: usize,
    column: usize,
}

fn tokenize(text: &str) -> Vec<(Token, Pos)> {
    let mut tokens = Vec::new();
    for (line_idx, line) in text.lines().enumerate() {
        if line.trim_start().starts_with('#') {
            continue;
        }
        let mut atom_start: Option<(usize, Pos)> = None;
        for (col_idx, (byte, ch)) in line.char_indices().enumerate() {
            let pos = Pos {
                line: line_idx + 1,
                column: col_idx + 1,
            };
            if ch == '(' || ch == ')' || ch.is_whitespace() {
                if let Some((start, p)) = atom_start.take() {
                    tokens.push((Token::Atom(line[start..byte].to_string()), p));
                }
                match ch {
                    '(' => tokens.push((Token::Open, pos)),
                    ')' => tokens.push((Token::Close, pos)),
                    _ => {}
                }
            } else if atom_start.is_none() {
                atom_start = Some((byte, pos));
            }
        }
        if let Some((start, p)) = atom_start {
            tokens.push((Token::Atom(line[start..].to_string()), p));
        }
    }
    tokens
}

#[derive(Debug)]
enum Raw {
    Bracket {
        label: Option<String>,
        children: Vec<Raw>,
        pos: Pos,
    },
    Atom(String, Pos),
}

fn parse_error(pos: Pos, message: impl Into<String>) -> TreebankError {
    TreebankError::Parse {
        line: pos.line,
        column: pos.column,
        message: message.into(),
    }
}

struct RawParser {
    tokens: Vec<(Token, Pos)>,
    at: usize,
}

impl RawParser {
    fn label(&mut self) -> Option<String> {
        match self.tokens.get(self.at) {
            Some((Token::Atom(a), _)) => {
                self.at += 1;
                Some(a.clone())
            }
            _ => None,
        }
    }

    // Called with `self.at` just past an opening bracket at `open`.
    fn bracket(&mut self, open: Pos) -> Result<Raw, TreebankError> {
        let mut stack: Vec<(Option<String>, Vec<Raw>, Pos)> = Vec::new();
        let mut current = (self.label(), Vec::new(), open);
        loop {
            let Some((tok, pos)) = self.tokens.get(self.at).cloned() else {
                return Err(parse_error(current.2, "unbalanced brackets: missing ')'"));
            };
            self.at += 1;
            match tok {
                Token::Atom(a) => current.1.push(Raw::Atom(a, pos)),
                Token::Open => {
                    if stack.len() + 1 >= MAX_DEPTH {
                        return Err(parse_error(
                            pos,
                            format!("brackets nested deeper than {MAX_DEPTH}"),
                        ));
                    }
                    let label = self.label();
                    stack.push(std::mem::replace(&mut current, (label, Vec::new(), pos)));
                }
                Token::Close => {
                    let done = Raw::Bracket {
                        label: current.0.take(),
                        children: std::mem::take(&mut current.1),
                        pos: current.2,
                    };
                    match stack.pop() {
                        Some(parent) => {
                            current = parent;
                            current.1.push(done);
                        }
                        None => return Ok(done),
                    }
                }
            }
        }
    }
}

/// Converts a raw bracket into a tree. `Ok(None)` means the subtree held only
/// traces.
fn convert(raw: Raw) -> Result<Option<Tree>, TreebankError> {
    let (label, children, pos) = match raw {
        Raw::Atom(_, pos) => return Err(parse_error(pos, "bare token at top level")),
        Raw::Bracket {
            label,
            children,
            pos,
        } => (label, children, pos),
    };
    let Some(label) = label else {
        return Err(parse_error(pos, "bracket without a label"));
    };
    if children.is_empty() {
        return Err(parse_error(
            pos,
            format!("constituent {label} has no children"),
        ));
    }
    if children.len() == 1 {
        if let Raw::Atom(word, _) = &children[0] {
            if label == TRACE_POS {
                return Ok(None);
            }
            return Ok(Some(Tree::leaf(word.clone(), label)));
        }
    }
    let mut kept = Vec::with_capacity(children.len());
    for child in children {
        match child {
            Raw::Atom(word, _) => kept.push(Tree::leaf(word, BARE_TOKEN_POS)),
            bracket => {
                if let Some(t) = convert(bracket)? {
                    kept.push(t)
                }
            }
        }
    }
    if kept.is_empty() {
        return Ok(None);
    }
    Ok(Some(Tree::node(normalize_label(&label), kept)))
}

/// Reads every tree in `text`. Comment lines starting with `#` are ignored, an
/// unlabeled outer wrapper `( ... )` around a single tree is removed, and
/// trees that become empty once traces are deleted are skipped.
pub fn read_ptb(text: &str) -> Result<Vec<Tree>, TreebankError> {
    let mut parser = RawParser {
        tokens: tokenize(text),
        at: 0,
    };
    let mut trees = Vec::new();
    while let Some((tok, pos)) = parser.tokens.get(parser.at).cloned() {
        parser.at += 1;
        let raw = match tok {
            Token::Open => parser.bracket(pos)?,
            Token::Close => return Err(parse_error(pos, "unbalanced brackets: unexpected ')'")),
            Token::Atom(a) => {
                return Err(parse_error(
                    pos,
                    format!("unexpected token {a:?} outside brackets"),
                ))
            }
        };
        let raw = match raw {
            Raw::Bracket {
                label: None,
                mut children,
                pos,
            } => {
                if children.len() != 1 {
                    return Err(parse_error(
                        pos,
                        format!(
                            "unlabeled bracket must wrap exactly one tree, found {}",
                            children.len()
                        ),
                    ));
                }
                children.pop().expect("one child")
            }
            other => other,
        };
        match convert(raw)? {
            Some(tree) => trees.push(tree),
            None => log::warn!(
                "skipping tree at line {} (empty after trace removal)",
                pos.line
            ),
        }
    }
    Ok(trees)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct HeadRule {
    from: Side,
    priority: Vec<String>,
}

/// Head-finding table. Each line is `LABEL left|right [CAT ...]`: scan the
/// children from the given side for the first one whose label is listed,
/// falling back to the first child from that side. `*` sets the default.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadRules {
    rules: HashMap<String, HeadRule>,
    fallback: Side,
}

const DEFAULT_HEAD_RULES: &str = "\
VP left
PP left
SBAR left
WHPP left
PRT left
CONJP left
* right
";

impl Default for HeadRules {
    fn default() -> Self {
        HeadRules::parse(DEFAULT_HEAD_RULES).expect("built-in head rules parse")
    }
}

impl HeadRules {
    pub fn parse(text: &str) -> Result<HeadRules, TreebankError> {
        let mut rules = HashMap::new();
        let mut fallback = Side::Right;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let label = fields.next().expect("non-empty line");
            let from = match fields.next() {
                Some("left") => Side::Left,
                Some("right") => Side::Right,
                other => {
                    return Err(TreebankError::HeadRule {
                        line: idx + 1,
                        message: format!("expected left|right, found {other:?}"),
                    })
                }
            };
            if label == "*" {
                fallback = from;
                continue;
            }
            let priority = fields.map(str::to_string).collect();
            rules.insert(label.to_string(), HeadRule { from, priority });
        }
        Ok(HeadRules { rules, fallback })
    }

    /// Index of the head among `children` (given by their labels / POS tags).
    pub fn head_index(&self, label: &str, children: &[&str]) -> usize {
        assert!(!children.is_empty());
        let (from, priority) = match self.rules.get(label) {
            Some(rule) => (rule.from, rule.priority.as_slice()),
            None => (self.fallback, &[][..]),
        };
        let order: Vec<usize> = match from {
            Side::Left => (0..children.len()).collect(),
            Side::Right => (0..children.len()).rev().collect(),
        };
        priority
            .iter()
            .find_map(|cat| order.iter().copied().find(|&i| children[i] == cat))
            .unwrap_or(order[0])
    }
}

/// A tree whose internal nodes have one or two children.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BinTree {
    Leaf {
        word: String,
        pos: String,
    },
    Unary {
        label: String,
        child: Box<BinTree>,
    },
    Binary {
        label: String,
        head: Side,
        left: Box<BinTree>,
        right: Box<BinTree>,
    },
}

impl BinTree {
    pub fn label(&self) -> &str {
        match self {
            BinTree::Leaf { pos, .. } => pos,
            BinTree::Unary { label, .. } | BinTree::Binary { label, .. } => label,
        }
    }
}

impl fmt::Display for BinTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinTree::Leaf { word, pos } => write!(f, "({pos} {word})"),
            BinTree::Unary { label, child } => write!(f, "({label} {child})"),
            BinTree::Binary {
                label,
                head,
                left,
                right,
            } => {
                let mark = if *head == Side::Left { "L" } else { "R" };
                write!(f, "({label}^{mark} {left} {right})")
            }
        }
    }
}

/// Left-factored binarization: `(X c1 .. ck)` with k > 2 becomes a
/// left-branching chain of `X*` nodes, `(X (X* (X* c1 c2) c3) .. ck)`.
pub fn binarize(tree: &Tree, heads: &HeadRules) -> BinTree {
    match tree {
        Tree::Leaf { word, pos } => BinTree::Leaf {
            word: word.clone(),
            pos: pos.clone(),
        },
        Tree::Node { label, children } => {
            if children.len() == 1 {
                return BinTree::Unary {
                    label: label.clone(),
                    child: Box::new(binarize(&children[0], heads)),
                };
            }
            let child_labels: Vec<&str> = children.iter().map(Tree::label).collect();
            let head = heads.head_index(label, &child_labels);
            let temp = format!("{label}{TEMP_SUFFIX}");
            let mut acc = binarize(&children[0], heads);
            for (m, child) in children.iter().enumerate().skip(1) {
                let node_label = if m + 1 == children.len() {
                    label.clone()
                } else {
                    temp.clone()
                };
                acc = BinTree::Binary {
                    label: node_label,
                    head: if head == m { Side::Right } else { Side::Left },
                    left: Box::new(acc),
                    right: Box::new(binarize(child, heads)),
                };
            }
            acc
        }
    }
}

/// Removes every temporary node, attaching its children to the parent.
pub fn unbinarize(tree: &BinTree) -> Result<Tree, TreebankError> {
    if is_temporary(tree.label()) && !matches!(tree, BinTree::Leaf { .. }) {
        return Err(TreebankError::Structure(format!(
            "temporary node {} at the root",
            tree.label()
        )));
    }
    let mut out = expand(tree);
    debug_assert_eq!(out.len(), 1);
    Ok(out.pop().expect("root expands to one tree"))
}

fn expand(tree: &BinTree) -> Vec<Tree> {
    match tree {
        BinTree::Leaf { word, pos } => vec![Tree::leaf(word.clone(), pos.clone())],
        BinTree::Unary { label, child } => {
            let kids = expand(child);
            if is_temporary(label) {
                kids
            } else {
                vec![Tree::node(label.clone(), kids)]
            }
        }
        BinTree::Binary {
            label, left, right, ..
        } => {
            let mut kids = expand(left);
            kids.extend(expand(right));
            if is_temporary(label) {
                kids
            } else {
                vec![Tree::node(label.clone(), kids)]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tagged_example() -> Tree {
        Tree::node(
            "S",
            vec![
                Tree::node("NP", vec![Tree::leaf("They", "PRP")]),
                Tree::node(
                    "VP",
                    vec![
                        Tree::leaf("like", "VBP"),
                        Tree::node("NP", vec![Tree::leaf("apples", "NNS")]),
                    ],
                ),
            ],
        )
    }

    #[test]
    fn reads_tagged_sentence() {
        let trees = read_ptb("(S (NP (PRP They)) (VP (VBP like) (NP (NNS apples))))").unwrap();
        assert_eq!(trees, vec![tagged_example()]);
        assert_eq!(trees[0].words(), vec!["They", "like", "apples"]);
    }

    #[test]
    fn reads_untagged_sentence() {
        let trees = read_ptb("(S (NP They) (VP like (NP apples)))").unwrap();
        assert_eq!(trees[0].words(), vec!["They", "like", "apples"]);
    }

    #[test]
    fn empty_bracket_is_an_error() {
        assert!(matches!(read_ptb("( )"), Err(TreebankError::Parse { .. })));
    }

    #[test]
    fn strips_functional_tags() {
        let trees = read_ptb("(NP-SBJ (DT The) (NN dog))").unwrap();
        assert_eq!(trees[0].label(), "NP");
        assert_eq!(normalize_label("NP-SBJ-1"), "NP");
        assert_eq!(normalize_label("NP=2"), "NP");
        assert_eq!(normalize_label("-LRB-"), "-LRB-");
    }

    #[test]
    fn removes_traces_and_wrapper() {
        let text = "# comment\n( (S (NP-SBJ (-NONE- *T*-1)) (VP (VBD ran))) )\n((X (-NONE- *)))";
        let trees = read_ptb(text).unwrap();
        assert_eq!(trees.len(), 1);
        assert_eq!(trees[0].to_string(), "(S (VP (VBD ran)))");
    }

    #[test]
    fn reports_line_and_column() {
        match read_ptb("(S (NP (DT a))\n  (VP (VB b)))\n)") {
            Err(TreebankError::Parse { line, column, .. }) => assert_eq!((line, column), (3, 1)),
            other => panic!("expected parse error, got {other:?}"),
        }
        match read_ptb("(S (NP (DT a)") {
            Err(TreebankError::Parse { line, column, .. }) => assert_eq!((line, column), (1, 4)),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn multi_line_and_multiple_trees() {
        let text = "(S\n  (NP (DT a))\n  (VP (VB b)))\n(NP (NN c))\n";
        let trees = read_ptb(text).unwrap();
        assert_eq!(trees.len(), 2);
        assert_eq!(
            write_ptb(&trees),
            "(S (NP (DT a)) (VP (VB b)))\n(NP (NN c))\n"
        );
    }

    #[test]
    fn binarize_two_children_unchanged_shape() {
        let heads = HeadRules::default();
        let b = binarize(&tagged_example(), &heads);
        match &b {
            BinTree::Binary { label, head, .. } => {
                assert_eq!(label, "S");
                assert_eq!(*head, Side::Right);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn left_factoring() {
        let t = Tree::node(
            "NP",
            vec![
                Tree::leaf("a", "DT"),
                Tree::leaf("b", "JJ"),
                Tree::leaf("c", "NN"),
            ],
        );
        let b = binarize(&t, &HeadRules::default());
        assert_eq!(b.to_string(), "(NP^R (NP*^L (DT a) (JJ b)) (NN c))");
        assert_eq!(unbinarize(&b).unwrap(), t);
    }

    #[test]
    fn head_rules_priority() {
        let rules = HeadRules::parse("VP left VB VBD\n* left\n").unwrap();
        assert_eq!(rules.head_index("VP", &["ADVP", "VBD", "NP"]), 1);
        assert_eq!(rules.head_index("VP", &["ADVP", "NP"]), 0);
        assert_eq!(rules.head_index("NP", &["DT", "NN"]), 0);
        assert!(HeadRules::parse("VP sideways").is_err());
    }

    #[test]
    fn depth_three_chain_flattens() {
        let leaf = |w: &str| {
            Box::new(BinTree::Leaf {
                word: w.into(),
                pos: "NN".into(),
            })
        };
        let bin = |l: &str, a, b| {
            Box::new(BinTree::Binary {
                label: l.into(),
                head: Side::Left,
                left: a,
                right: b,
            })
        };
        let b = bin(
            "NP",
            bin("NP*", bin("NP*", leaf("a"), leaf("b")), leaf("c")),
            leaf("d"),
        );
        let t = unbinarize(&b).unwrap();
        match t {
            Tree::Node { label, children } => {
                assert_eq!(label, "NP");
                assert_eq!(children.len(), 4);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn single_leaf_identity() {
        let t = Tree::leaf("w", "NN");
        assert_eq!(unbinarize(&binarize(&t, &HeadRules::default())).unwrap(), t);
    }

    #[test]
    fn temporary_root_rejected() {
        let b = BinTree::Unary {
            label: "NP*".into(),
            child: Box::new(BinTree::Leaf {
                word: "a".into(),
                pos: "DT".into(),
            }),
        };
        assert!(matches!(unbinarize(&b), Err(TreebankError::Structure(_))));
    }

    #[test]
    fn nesting_depth_is_capped() {
        let nest = |depth: usize| format!("{}(NN x){}", "(X ".repeat(depth), ")".repeat(depth));
        assert_eq!(read_ptb(&nest(MAX_DEPTH - 2)).unwrap().len(), 1);
        assert!(matches!(
            read_ptb(&nest(100_000)),
            Err(TreebankError::Parse { .. })
        ));
    }

    fn arb_tree() -> impl Strategy<Value = Tree> {
        let leaf = (
            "[a-z]{1,4}",
            prop::sample::select(vec!["DT", "NN", "VB", "JJ", "IN"]),
        )
            .prop_map(|(w, p)| Tree::leaf(w, p));
        leaf.prop_recursive(6, 50, 5, |inner| {
            (
                prop::sample::select(vec!["S", "NP", "VP", "PP", "ADJP", "SBAR"]),
                prop::collection::vec(inner, 1..5),
            )
                .prop_map(|(l, c)| Tree::node(l, c))
        })
    }

    proptest! {
        #[test]
        fn binarize_round_trip(t in arb_tree()) {
            let b = binarize(&t, &HeadRules::default());
            prop_assert_eq!(unbinarize(&b).unwrap(), t);
        }

        #[test]
        fn write_read_round_trip(ts in prop::collection::vec(arb_tree(), 1..4)) {
            prop_assert_eq!(read_ptb(&write_ptb(&ts)).unwrap(), ts);
        }
    }
}
