//! Per-word constituent hierarchies: the constituents a word starts (s-type)
//! and ends (e-type), outermost first.

use std::fmt;

use thiserror::Error;

use crate::eval::PrfCounts;
use crate::transition::Node;
use crate::treebank::Tree;

/// Deepest hierarchy kept or accepted from a file.
pub const MAX_HIERARCHY_DEPTH: usize = 32;

/// Atom for a present item whose hierarchy is empty or fully consumed.
pub const NULL_VALUE: &str = "NULL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HierarchyType {
    Start,
    End,
}

impl HierarchyType {
    pub fn tag(self) -> char {
        match self {
            HierarchyType::Start => 's',
            HierarchyType::End => 'e',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConstituentHierarchy {
    pub htype: HierarchyType,
    /// Top-down: outermost constituent first. Empty means the word starts
    /// (ends) nothing.
    pub labels: Vec<String>,
}

impl ConstituentHierarchy {
    pub fn new(htype: HierarchyType, labels: Vec<String>) -> Self {
        ConstituentHierarchy { htype, labels }
    }

    pub fn empty(htype: HierarchyType) -> Self {
        ConstituentHierarchy::new(htype, Vec::new())
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.labels.len()
    }

    /// Label `consumed` levels up from the innermost one.
    pub fn level_from_bottom(&self, consumed: usize) -> Option<&str> {
        let n = self.labels.len();
        if consumed < n {
            Some(&self.labels[n - 1 - consumed])
        } else {
            None
        }
    }

    /// `S>NP`, or `-` when empty.
    pub fn encode(&self) -> String {
        if self.labels.is_empty() {
            "-".to_string()
        } else {
            self.labels.join(">")
        }
    }
}

impl fmt::Display for ConstituentHierarchy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.htype.tag(), self.encode())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WordHierarchies {
    pub start: ConstituentHierarchy,
    pub end: ConstituentHierarchy,
}

impl WordHierarchies {
    pub fn get(&self, htype: HierarchyType) -> &ConstituentHierarchy {
        match htype {
            HierarchyType::Start => &self.start,
            HierarchyType::End => &self.end,
        }
    }
}

/// s-type and e-type hierarchies for every word of an unbinarized tree.
pub fn extract_hierarchies(tree: &Tree) -> Vec<WordHierarchies> {
    let n = tree.num_words();
    let mut out: Vec<WordHierarchies> = (0..n)
        .map(|_| WordHierarchies {
            start: ConstituentHierarchy::empty(HierarchyType::Start),
            end: ConstituentHierarchy::empty(HierarchyType::End),
        })
        .collect();
    // pre-order, so outer constituents are pushed before inner ones
    for (label, start, end) in tree.constituents() {
        out[start].start.labels.push(label.clone());
        out[end - 1].end.labels.push(label);
    }
    for w in &mut out {
        for h in [&mut w.start, &mut w.end] {
            let extra = h.labels.len().saturating_sub(MAX_HIERARCHY_DEPTH);
            h.labels.drain(..extra);
        }
    }
    out
}

/// Next unconsumed hierarchy level of a parser item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookahead<'a> {
    /// No such stack/buffer item.
    Absent,
    /// Item present, hierarchy empty or exhausted.
    Null,
    Label(&'a str),
}

impl Lookahead<'_> {
    pub fn as_atom(&self) -> &str {
        match self {
            Lookahead::Absent => crate::features::NONE,
            Lookahead::Null => NULL_VALUE,
            Lookahead::Label(l) => l,
        }
    }
}

fn level(h: &ConstituentHierarchy, consumed: usize) -> Lookahead<'_> {
    h.level_from_bottom(consumed)
        .map_or(Lookahead::Null, Lookahead::Label)
}

/// Lookahead value of a stack item: for s-type, the predicted hierarchy of its
/// first word, skipping the levels already built inside the item that start at
/// that word; symmetric for e-type with the last word.
pub fn stack_lookahead<'a>(
    node: Option<&Node>,
    pred: &'a [WordHierarchies],
    htype: HierarchyType,
) -> Lookahead<'a> {
    let Some(node) = node else {
        return Lookahead::Absent;
    };
    match htype {
        HierarchyType::Start => level(&pred[node.start].start, node.starts_built as usize),
        HierarchyType::End => level(&pred[node.end - 1].end, node.ends_built as usize),
    }
}

/// Lookahead value of a buffer word (nothing built yet).
pub fn buffer_lookahead(
    index: usize,
    pred: &[WordHierarchies],
    htype: HierarchyType,
) -> Lookahead<'_> {
    match pred.get(index) {
        None => Lookahead::Absent,
        Some(w) => level(w.get(htype), 0),
    }
}

/// Positions are aligned from the innermost level upwards; a predicted label
/// counts only if gold has the same label at the same bottom-up index.
pub fn hierarchy_counts(pred: &ConstituentHierarchy, gold: &ConstituentHierarchy) -> PrfCounts {
    let matched = pred
        .labels
        .iter()
        .rev()
        .zip(gold.labels.iter().rev())
        .filter(|(p, g)| p == g)
        .count();
    PrfCounts {
        matched,
        predicted: pred.labels.len(),
        gold: gold.labels.len(),
    }
}

pub fn hierarchy_f1(pred: &ConstituentHierarchy, gold: &ConstituentHierarchy) -> (f64, f64, f64) {
    hierarchy_counts(pred, gold).prf()
}

/// Corpus-level counts for one hierarchy type, summed over all words.
pub fn corpus_counts(
    pred: &[Vec<WordHierarchies>],
    gold: &[Vec<WordHierarchies>],
    htype: HierarchyType,
) -> PrfCounts {
    pred.iter()
        .zip(gold)
        .flat_map(|(p, g)| p.iter().zip(g))
        .map(|(p, g)| hierarchy_counts(p.get(htype), g.get(htype)))
        .sum()
}

/// One sentence of the hierarchy file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedSentence {
    pub words: Vec<String>,
    pub hierarchies: Vec<WordHierarchies>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HierarchyFileError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

fn parse_field(
    field: &str,
    htype: HierarchyType,
    line: usize,
) -> Result<ConstituentHierarchy, HierarchyFileError> {
    let err = |message: String| HierarchyFileError::Format { line, message };
    let tag = htype.tag();
    let body = field
        .strip_prefix(tag)
        .and_then(|f| f.strip_prefix(':'))
        .ok_or_else(|| {
            err(format!(
                "expected field starting with `{tag}:`, found {field:?}"
            ))
        })?;
    if body == "-" {
        return Ok(ConstituentHierarchy::empty(htype));
    }
    let labels: Vec<String> = body.split('>').map(str::to_string).collect();
    if labels.iter().any(|l| l.is_empty() || l == "-") {
        return Err(err(format!("empty label in {field:?}")));
    }
    if labels.len() > MAX_HIERARCHY_DEPTH {
        return Err(err(format!(
            "hierarchy depth {} exceeds {MAX_HIERARCHY_DEPTH}",
            labels.len()
        )));
    }
    Ok(ConstituentHierarchy::new(htype, labels))
}

/// Parses `word TAB s:A>B TAB e:-` lines, blank lines separating sentences.
/// Lines starting with `#` that contain no tab are comments.
pub fn read_hierarchy_file(text: &str) -> Result<Vec<AnnotatedSentence>, HierarchyFileError> {
    let mut out = Vec::new();
    let mut current = AnnotatedSentence {
        words: Vec::new(),
        hierarchies: Vec::new(),
    };
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            if !current.words.is_empty() {
                out.push(std::mem::replace(
                    &mut current,
                    AnnotatedSentence {
                        words: Vec::new(),
                        hierarchies: Vec::new(),
                    },
                ));
            }
            continue;
        }
        if line.starts_with('#') && !line.contains('\t') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(HierarchyFileError::Format {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        if fields[0].is_empty() {
            return Err(HierarchyFileError::Format {
                line: line_no,
                message: "empty word".into(),
            });
        }
        current.words.push(fields[0].to_string());
        current.hierarchies.push(WordHierarchies {
            start: parse_field(fields[1], HierarchyType::Start, line_no)?,
            end: parse_field(fields[2], HierarchyType::End, line_no)?,
        });
    }
    if !current.words.is_empty() {
        out.push(current);
    }
    Ok(out)
}

pub fn write_hierarchy_file(sentences: &[AnnotatedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for (w, h) in s.words.iter().zip(&s.hierarchies) {
            out.push_str(&format!("{w}\t{}\t{}\n", h.start, h.end));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::sentence::Sentence;
    use crate::transition::{oracle, Action, Grammar, ParserState};
    use crate::treebank::{binarize, HeadRules};
    use std::sync::Arc;

    pub(crate) fn students_tree() -> Tree {
        crate::treebank::read_ptb(
            "(S (NP (DT The) (ADJP (JJ past) (CC and) (JJ present)) (NNS students)) \
             (VP (VBP like) (NP (NP (DT this) (NN book)) (PP (IN on) (NP (DT the) (NN table))))))",
        )
        .unwrap()
        .remove(0)
    }

    fn h(htype: HierarchyType, s: &str) -> ConstituentHierarchy {
        if s.is_empty() {
            ConstituentHierarchy::empty(htype)
        } else {
            ConstituentHierarchy::new(htype, s.split('>').map(String::from).collect())
        }
    }

    #[test]
    fn students_sentence_extraction() {
        let hs = extract_hierarchies(&students_tree());
        assert_eq!(hs[0].start.encode(), "S>NP");
        assert_eq!(hs[0].end.encode(), "-");
        assert_eq!(hs[10].end.encode(), "S>VP>NP>PP>NP");
        // "and" sits strictly inside every covering constituent
        assert!(hs[2].start.is_empty() && hs[2].end.is_empty());
    }

    #[test]
    fn counts_match_constituents() {
        let t = students_tree();
        let hs = extract_hierarchies(&t);
        let n = t.constituents().len();
        assert_eq!(hs.iter().map(|w| w.start.depth()).sum::<usize>(), n);
        assert_eq!(hs.iter().map(|w| w.end.depth()).sum::<usize>(), n);
    }

    #[test]
    fn worked_f1_example() {
        let (p, r, f) = hierarchy_f1(
            &h(HierarchyType::Start, "S>S>VP>NP"),
            &h(HierarchyType::Start, "S>NP>NP"),
        );
        assert_eq!(p, 0.5);
        assert_eq!(r, 2.0 / 3.0);
        assert!((f - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn bottom_up_alignment() {
        let (p, r, f) = hierarchy_f1(
            &h(HierarchyType::Start, "NP"),
            &h(HierarchyType::Start, "S>NP"),
        );
        assert_eq!((p, r), (1.0, 0.5));
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            hierarchy_f1(&h(HierarchyType::End, ""), &h(HierarchyType::End, "")),
            (1.0, 1.0, 1.0)
        );
        assert_eq!(
            hierarchy_f1(&h(HierarchyType::End, ""), &h(HierarchyType::End, "NP")),
            (0.0, 0.0, 0.0)
        );
        let same = h(HierarchyType::End, "S>VP>NP");
        assert_eq!(hierarchy_f1(&same, &same), (1.0, 1.0, 1.0));
    }

    #[test]
    fn lookahead_on_worked_states() {
        let t = students_tree();
        let gold = extract_hierarchies(&t);
        let b = binarize(&t, &HeadRules::default());
        let g = Grammar::from_bintrees([&b]);
        let actions = oracle(&b, &g).unwrap();

        // (a): "The" and "past" shifted
        let mut state = Arc::new(ParserState::initial(t.num_words()));
        for &a in &actions[..2] {
            state = Arc::new(state.apply(a, &g, 0.0).unwrap());
        }
        let s1 = state.stack_item(1).map(|n| n.as_ref());
        assert_eq!(
            stack_lookahead(s1, &gold, HierarchyType::Start),
            Lookahead::Label("NP")
        );
        assert_eq!(
            stack_lookahead(s1, &gold, HierarchyType::End),
            Lookahead::Null
        );
        let s0 = state.top().map(|n| n.as_ref());
        assert_eq!(
            stack_lookahead(s0, &gold, HierarchyType::Start),
            Lookahead::Label("ADJP")
        );
        assert_eq!(
            buffer_lookahead(3, &gold, HierarchyType::End),
            Lookahead::Label("ADJP")
        );

        // (b): the subject NP is complete
        for &a in &actions[2..] {
            state = Arc::new(state.apply(a, &g, 0.0).unwrap());
            let top = state.top().unwrap();
            if top.start == 0 && top.end == 5 && !top.temporary {
                break;
            }
        }
        let np = state.top().map(|n| n.as_ref());
        assert_eq!(
            stack_lookahead(np, &gold, HierarchyType::Start),
            Lookahead::Label("S")
        );
        assert_eq!(
            stack_lookahead(np, &gold, HierarchyType::End),
            Lookahead::Null
        );
        assert_eq!(
            stack_lookahead(None, &gold, HierarchyType::Start),
            Lookahead::Absent
        );
        assert_eq!(
            buffer_lookahead(11, &gold, HierarchyType::Start),
            Lookahead::Absent
        );
    }

    /// Replaying the oracle with gold hierarchies, every constituent built is
    /// exactly the next level predicted for its boundary words.
    pub(crate) fn assert_gold_replay_consistent(t: &Tree) {
        let gold = extract_hierarchies(t);
        let b = binarize(t, &HeadRules::default());
        let g = Grammar::from_bintrees([&b]);
        let mut state = Arc::new(ParserState::initial(t.num_words()));
        for a in oracle(&b, &g).unwrap() {
            match a {
                Action::Unary(l) => {
                    let child = state.top().map(|n| n.as_ref());
                    let want = Lookahead::Label(g.name(l));
                    assert_eq!(stack_lookahead(child, &gold, HierarchyType::Start), want);
                    assert_eq!(stack_lookahead(child, &gold, HierarchyType::End), want);
                }
                Action::ReduceL(l) | Action::ReduceR(l) if !g.is_temp(l) => {
                    let want = Lookahead::Label(g.name(l));
                    let left = state.stack_item(1).map(|n| n.as_ref());
                    let right = state.top().map(|n| n.as_ref());
                    assert_eq!(stack_lookahead(left, &gold, HierarchyType::Start), want);
                    assert_eq!(stack_lookahead(right, &gold, HierarchyType::End), want);
                }
                _ => {}
            }
            state = Arc::new(state.apply(a, &g, 0.0).unwrap());
        }
        let root = state.top().unwrap();
        let s = Sentence::from_tree(t);
        assert_eq!(
            stack_lookahead(Some(root), &gold, HierarchyType::Start),
            Lookahead::Null,
            "{}",
            s.to_tagged_line()
        );
    }

    #[test]
    fn gold_replay_consumes_hierarchies() {
        assert_gold_replay_consistent(&students_tree());
    }

    #[test]
    fn file_round_trip() {
        let t = students_tree();
        let s = AnnotatedSentence {
            words: t.words(),
            hierarchies: extract_hierarchies(&t),
        };
        let text = write_hierarchy_file(&[s.clone(), s.clone()]);
        assert!(text.starts_with("The\ts:S>NP\te:-\n"));
        assert_eq!(
            read_hierarchy_file(&text).unwrap(),
            vec![s.clone(), s.clone()]
        );
        let commented = format!("# provenance test\n{text}");
        assert_eq!(read_hierarchy_file(&commented).unwrap().len(), 2);
        let hash_word = read_hierarchy_file("#\ts:-\te:NP\n").unwrap();
        assert_eq!(hash_word[0].words, vec!["#"]);
    }

    #[test]
    fn file_errors() {
        assert!(read_hierarchy_file("w\ts:NP\n").is_err());
        assert!(read_hierarchy_file("w\te:NP\ts:-\n").is_err());
        assert!(read_hierarchy_file("w\ts:NP>>S\te:-\n").is_err());
        let deep = vec!["NP"; MAX_HIERARCHY_DEPTH + 1].join(">");
        assert!(read_hierarchy_file(&format!("w\ts:{deep}\te:-\n")).is_err());
    }
}
