//! Feature templates over parser states: the 57 baseline templates and the 8
//! lookahead templates.

use std::sync::OnceLock;

use crate::hierarchy::{buffer_lookahead, stack_lookahead, HierarchyType, WordHierarchies};
use crate::sentence::Sentence;
use crate::transition::{Grammar, Node, ParserState};

/// Atom rendered for a stack/buffer position that does not exist.
pub const NONE: &str = "#NONE#";

pub const BASELINE_TEMPLATES: [&str; 57] = [
    // unigram
    "s0tc",
    "s0wc",
    "s1tc",
    "s1wc",
    "s2tc",
    "s2wc",
    "s3tc",
    "s3wc",
    "q0wt",
    "q1wt",
    "q2wt",
    "q3wt",
    "s0lwc",
    "s0rwc",
    "s0uwc",
    "s1lwc",
    "s1rwc",
    "s1uwc",
    // bigram
    "s0ws1w",
    "s0ws1c",
    "s0cs1w",
    "s0cs1c",
    "s0wq0w",
    "s0wq0t",
    "s0cq0w",
    "s0cq0t",
    "q0wq1w",
    "q0wq1t",
    "q0tq1w",
    "q0tq1t",
    "s1wq0w",
    "s1wq0t",
    "s1cq0w",
    "s1cq0t",
    // trigram
    "s0cs1cs2c",
    "s0ws1cs2c",
    "s0cs1ws2c",
    "s0cs1cs2w",
    "s0cs1cq0t",
    "s0ws1cq0t",
    "s0cs1wq0t",
    "s0cs1cq0w",
    // extended
    "s0llwc",
    "s0lrwc",
    "s0luwc",
    "s0rlwc",
    "s0rrwc",
    "s0ruwc",
    "s0ulwc",
    "s0urwc",
    "s0uuwc",
    "s1llwc",
    "s1lrwc",
    "s1luwc",
    "s1rlwc",
    "s1rrwc",
    "s1ruwc",
];

pub const LOOKAHEAD_TEMPLATES: [&str; 8] = [
    "s0cgs", "s0cge", "s1cgs", "s1cge", "q0cgs", "q0cge", "q1cgs", "q1cge",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Attr {
    Word,
    Tag,
    Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Left,
    Right,
    Unary,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Source {
    Stack { depth: usize, path: Vec<Step> },
    Buffer(usize),
}

#[derive(Debug, Clone)]
struct Template {
    name: &'static str,
    atoms: Vec<(Source, Attr)>,
}

/// Splits a template name such as `s0llwc` or `s0cs1wq0t` into
/// `(item, attributes)` groups.
fn compile(name: &'static str) -> Template {
    let bytes = name.as_bytes();
    let mut atoms = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let kind = bytes[i];
        let idx = (bytes[i + 1] - b'0') as usize;
        i += 2;
        let mut path = Vec::new();
        while i < bytes.len() && matches!(bytes[i], b'l' | b'r' | b'u') {
            path.push(match bytes[i] {
                b'l' => Step::Left,
                b'r' => Step::Right,
                _ => Step::Unary,
            });
            i += 1;
        }
        let source = match kind {
            b's' => Source::Stack { depth: idx, path },
            b'q' => Source::Buffer(idx),
            _ => unreachable!("template {name}"),
        };
        while i < bytes.len() && matches!(bytes[i], b'w' | b't' | b'c') {
            let attr = match bytes[i] {
                b'w' => Attr::Word,
                b't' => Attr::Tag,
                _ => Attr::Label,
            };
            atoms.push((source.clone(), attr));
            i += 1;
        }
    }
    Template { name, atoms }
}

fn templates() -> &'static [Template] {
    static CACHE: OnceLock<Vec<Template>> = OnceLock::new();
    CACHE.get_or_init(|| BASELINE_TEMPLATES.iter().map(|n| compile(n)).collect())
}

/// The feature strings fired by one parser state.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureVector {
    pub keys: Vec<String>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn extend(&mut self, other: FeatureVector) {
        self.keys.extend(other.keys);
    }
}

fn navigate<'a>(mut node: &'a Node, path: &[Step]) -> Option<&'a Node> {
    for step in path {
        node = match step {
            Step::Left => node.left()?,
            Step::Right => node.right()?,
            Step::Unary => node.unary_child()?,
        };
    }
    Some(node)
}

fn node_atom<'a>(node: &Node, attr: Attr, sentence: &'a Sentence, grammar: &'a Grammar) -> &'a str {
    match attr {
        Attr::Word => &sentence.words[node.head],
        Attr::Tag => &sentence.tags[node.head],
        Attr::Label => match node.label {
            Some(l) => grammar.name(l),
            None => &sentence.tags[node.head],
        },
    }
}

pub fn extract_baseline(
    state: &ParserState,
    sentence: &Sentence,
    grammar: &Grammar,
) -> FeatureVector {
    let mut stack: [Option<&Node>; 4] = [None; 4];
    for (d, slot) in stack.iter_mut().enumerate() {
        *slot = state.stack_item(d).map(|n| n.as_ref());
    }
    let mut keys = Vec::with_capacity(BASELINE_TEMPLATES.len());
    for tpl in templates() {
        let mut key = String::with_capacity(32);
        key.push_str(tpl.name);
        key.push('=');
        for (i, (source, attr)) in tpl.atoms.iter().enumerate() {
            if i > 0 {
                key.push('|');
            }
            let atom = match source {
                Source::Stack { depth, path } => stack[*depth]
                    .and_then(|n| navigate(n, path))
                    .map_or(NONE, |n| node_atom(n, *attr, sentence, grammar)),
                Source::Buffer(offset) => {
                    let i = state.buffer_front + offset;
                    if i < sentence.len() {
                        match attr {
                            Attr::Word => &sentence.words[i],
                            _ => &sentence.tags[i],
                        }
                    } else {
                        NONE
                    }
                }
            };
            key.push_str(atom);
        }
        keys.push(key);
    }
    FeatureVector { keys }
}

pub fn extract_lookahead(state: &ParserState, pred: &[WordHierarchies]) -> FeatureVector {
    let s0 = state.stack_item(0).map(|n| n.as_ref());
    let s1 = state.stack_item(1).map(|n| n.as_ref());
    let q0 = state.buffer_front;
    let values = [
        stack_lookahead(s0, pred, HierarchyType::Start),
        stack_lookahead(s0, pred, HierarchyType::End),
        stack_lookahead(s1, pred, HierarchyType::Start),
        stack_lookahead(s1, pred, HierarchyType::End),
        buffer_lookahead(q0, pred, HierarchyType::Start),
        buffer_lookahead(q0, pred, HierarchyType::End),
        buffer_lookahead(q0 + 1, pred, HierarchyType::Start),
        buffer_lookahead(q0 + 1, pred, HierarchyType::End),
    ];
    FeatureVector {
        keys: LOOKAHEAD_TEMPLATES
            .iter()
            .zip(values)
            .map(|(name, v)| format!("{name}={}", v.as_atom()))
            .collect(),
    }
}

/// Baseline features, plus lookahead features when predictions are supplied.
pub fn extract(
    state: &ParserState,
    sentence: &Sentence,
    grammar: &Grammar,
    pred: Option<&[WordHierarchies]>,
) -> FeatureVector {
    let mut fv = extract_baseline(state, sentence, grammar);
    if let Some(pred) = pred {
        fv.extend(extract_lookahead(state, pred));
    }
    fv
}
