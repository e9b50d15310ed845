//! The shift-reduce transition system: persistent parser states, legal
//! actions, action application and the static gold oracle.

use std::fmt;
use std::sync::Arc;

use indexmap::IndexSet;
use thiserror::Error;

use crate::sentence::Sentence;
use crate::treebank::{is_temporary, BinTree, Side, Tree, TreebankError};

pub type LabelId = u32;

/// Longest run of consecutive UNARY actions allowed over one span.
pub const MAX_UNARY_RUN: u8 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransitionError {
    #[error("illegal action {action} in state {state}")]
    Illegal { action: String, state: String },
    #[error("label {0:?} is not part of the grammar")]
    UnknownLabel(String),
    #[error("cannot parse action {0:?}")]
    BadAction(String),
    #[error("derivation did not end in a completed single-item state")]
    Incomplete,
    #[error(transparent)]
    Tree(#[from] TreebankError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Shift,
    ReduceL(LabelId),
    ReduceR(LabelId),
    Unary(LabelId),
    Finish,
    Idle,
}

impl Action {
    /// Dense index used to key per-action weight blocks.
    pub fn index(self) -> u32 {
        match self {
            Action::Shift => 0,
            Action::Finish => 1,
            Action::Idle => 2,
            Action::ReduceL(l) => 3 + 3 * l,
            Action::ReduceR(l) => 4 + 3 * l,
            Action::Unary(l) => 5 + 3 * l,
        }
    }

    pub fn from_index(index: u32) -> Action {
        match index {
            0 => Action::Shift,
            1 => Action::Finish,
            2 => Action::Idle,
            i => {
                let l = (i - 3) / 3;
                match (i - 3) % 3 {
                    0 => Action::ReduceL(l),
                    1 => Action::ReduceR(l),
                    _ => Action::Unary(l),
                }
            }
        }
    }
}

/// Constituent label inventory plus the labels usable by REDUCE and UNARY.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Grammar {
    labels: IndexSet<String>,
    temp: Vec<bool>,
    reduce: Vec<LabelId>,
    unary: Vec<LabelId>,
}

impl Grammar {
    pub fn from_bintrees<'a>(trees: impl IntoIterator<Item = &'a BinTree>) -> Grammar {
        let mut g = Grammar::default();
        for t in trees {
            g.collect(t);
        }
        g.reduce.sort_unstable();
        g.unary.sort_unstable();
        g
    }

    fn collect(&mut self, tree: &BinTree) {
        match tree {
            BinTree::Leaf { .. } => {}
            BinTree::Unary { label, child } => {
                let id = self.intern(label);
                if !self.unary.contains(&id) {
                    self.unary.push(id);
                }
                self.collect(child);
            }
            BinTree::Binary {
                label, left, right, ..
            } => {
                let id = self.intern(label);
                if !self.reduce.contains(&id) {
                    self.reduce.push(id);
                }
                self.collect(left);
                self.collect(right);
            }
        }
    }

    /// Builds a grammar from explicit label lists (model loading).
    pub fn from_parts(
        labels: Vec<String>,
        reduce: &[String],
        unary: &[String],
    ) -> Result<Grammar, TransitionError> {
        let mut g = Grammar::default();
        for l in labels {
            g.intern(&l);
        }
        for l in reduce {
            let id = g
                .id(l)
                .ok_or_else(|| TransitionError::UnknownLabel(l.clone()))?;
            g.reduce.push(id);
        }
        for l in unary {
            let id = g
                .id(l)
                .ok_or_else(|| TransitionError::UnknownLabel(l.clone()))?;
            if g.temp[id as usize] {
                return Err(TransitionError::UnknownLabel(l.clone()));
            }
            g.unary.push(id);
        }
        g.reduce.sort_unstable();
        g.reduce.dedup();
        g.unary.sort_unstable();
        g.unary.dedup();
        Ok(g)
    }

    pub fn intern(&mut self, label: &str) -> LabelId {
        if let Some(id) = self.labels.get_index_of(label) {
            return id as LabelId;
        }
        self.labels.insert(label.to_string());
        self.temp.push(is_temporary(label));
        (self.labels.len() - 1) as LabelId
    }

    pub fn id(&self, label: &str) -> Option<LabelId> {
        self.labels.get_index_of(label).map(|i| i as LabelId)
    }

    pub fn name(&self, id: LabelId) -> &str {
        &self.labels[id as usize]
    }

    pub fn is_temp(&self, id: LabelId) -> bool {
        self.temp[id as usize]
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(String::as_str)
    }

    pub fn reduce_labels(&self) -> &[LabelId] {
        &self.reduce
    }

    pub fn unary_labels(&self) -> &[LabelId] {
        &self.unary
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn action_name(&self, action: Action) -> String {
        match action {
            Action::Shift => "SHIFT".into(),
            Action::Finish => "FINISH".into(),
            Action::Idle => "IDLE".into(),
            Action::ReduceL(l) => format!("REDUCE-L-{}", self.name(l)),
            Action::ReduceR(l) => format!("REDUCE-R-{}", self.name(l)),
            Action::Unary(l) => format!("UNARY-{}", self.name(l)),
        }
    }

    pub fn parse_action(&self, text: &str) -> Result<Action, TransitionError> {
        let label = |name: &str| {
            self.id(name)
                .ok_or_else(|| TransitionError::UnknownLabel(name.to_string()))
        };
        match text {
            "SHIFT" => Ok(Action::Shift),
            "FINISH" => Ok(Action::Finish),
            "IDLE" => Ok(Action::Idle),
            _ => {
                if let Some(l) = text.strip_prefix("REDUCE-L-") {
                    Ok(Action::ReduceL(label(l)?))
                } else if let Some(l) = text.strip_prefix("REDUCE-R-") {
                    Ok(Action::ReduceR(label(l)?))
                } else if let Some(l) = text.strip_prefix("UNARY-") {
                    Ok(Action::Unary(label(l)?))
                } else {
                    Err(TransitionError::BadAction(text.to_string()))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Leaf,
    Unary(Arc<Node>),
    Binary {
        left: Arc<Node>,
        right: Arc<Node>,
        head: Side,
    },
}

/// A (partial) binarized tree fragment on the stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    /// `None` for a shifted word.
    pub label: Option<LabelId>,
    pub kind: NodeKind,
    pub start: usize,
    pub end: usize,
    /// Sentence index of the lexical head.
    pub head: usize,
    /// Non-temporary constituents in this fragment that start at `start`.
    pub starts_built: u8,
    /// Non-temporary constituents in this fragment that end at `end - 1`.
    pub ends_built: u8,
    /// Consecutive unary nodes on top of this fragment.
    pub unary_run: u8,
    pub temporary: bool,
}

impl Node {
    pub fn left(&self) -> Option<&Arc<Node>> {
        match &self.kind {
            NodeKind::Binary { left, .. } => Some(left),
            _ => None,
        }
    }

    pub fn right(&self) -> Option<&Arc<Node>> {
        match &self.kind {
            NodeKind::Binary { right, .. } => Some(right),
            _ => None,
        }
    }

    pub fn unary_child(&self) -> Option<&Arc<Node>> {
        match &self.kind {
            NodeKind::Unary(c) => Some(c),
            _ => None,
        }
    }

    pub fn to_bintree(&self, sentence: &Sentence, grammar: &Grammar) -> BinTree {
        match &self.kind {
            NodeKind::Leaf => BinTree::Leaf {
                word: sentence.words[self.start].clone(),
                pos: sentence.tags[self.start].clone(),
            },
            NodeKind::Unary(child) => BinTree::Unary {
                label: grammar
                    .name(self.label.expect("unary has label"))
                    .to_string(),
                child: Box::new(child.to_bintree(sentence, grammar)),
            },
            NodeKind::Binary { left, right, head } => BinTree::Binary {
                label: grammar
                    .name(self.label.expect("binary has label"))
                    .to_string(),
                head: *head,
                left: Box::new(left.to_bintree(sentence, grammar)),
                right: Box::new(right.to_bintree(sentence, grammar)),
            },
        }
    }
}

#[derive(Debug)]
struct StackCell {
    node: Arc<Node>,
    below: Option<Arc<StackCell>>,
}

/// `[stack, buffer front, completion mark, action count]` plus the running
/// score and a link to the predecessor state.
#[derive(Debug, Clone)]
pub struct ParserState {
    stack: Option<Arc<StackCell>>,
    stack_len: usize,
    sentence_len: usize,
    pub buffer_front: usize,
    pub completed: bool,
    pub action_count: usize,
    pub score: f64,
    prev: Option<Arc<ParserState>>,
    last_action: Option<Action>,
}

impl ParserState {
    pub fn initial(sentence_len: usize) -> ParserState {
        ParserState {
            stack: None,
            stack_len: 0,
            sentence_len,
            buffer_front: 0,
            completed: false,
            action_count: 0,
            score: 0.0,
            prev: None,
            last_action: None,
        }
    }

    pub fn sentence_len(&self) -> usize {
        self.sentence_len
    }

    pub fn stack_len(&self) -> usize {
        self.stack_len
    }

    /// `i`-th stack item counted from the top (`s0` is 0).
    pub fn stack_item(&self, i: usize) -> Option<&Arc<Node>> {
        let mut cell = self.stack.as_ref()?;
        for _ in 0..i {
            cell = cell.below.as_ref()?;
        }
        Some(&cell.node)
    }

    pub fn top(&self) -> Option<&Arc<Node>> {
        self.stack_item(0)
    }

    pub fn prev(&self) -> Option<&Arc<ParserState>> {
        self.prev.as_ref()
    }

    pub fn last_action(&self) -> Option<Action> {
        self.last_action
    }

    /// Action budget: every derivation finishes within `4n` actions.
    pub fn max_actions(&self) -> usize {
        4 * self.sentence_len
    }

    /// Fewest SHIFT/REDUCE/FINISH actions still needed to complete.
    fn min_remaining(&self) -> usize {
        if self.completed {
            return 0;
        }
        let rest = self.sentence_len - self.buffer_front;
        let items = self.stack_len + rest;
        rest + items.saturating_sub(1) + 1
    }

    fn can_unary(&self) -> bool {
        match self.top() {
            Some(top) => {
                !self.completed
                    && top.unary_run < MAX_UNARY_RUN
                    && self.action_count + 1 + self.min_remaining() <= self.max_actions()
            }
            None => false,
        }
    }

    fn can_reduce_with(&self, grammar: &Grammar, label: LabelId) -> bool {
        !self.completed
            && self.stack_len >= 2
            && !(grammar.is_temp(label)
                && self.stack_len == 2
                && self.buffer_front == self.sentence_len)
    }

    fn can_finish(&self) -> bool {
        !self.completed
            && self.buffer_front == self.sentence_len
            && self.stack_len == 1
            && !self.top().is_some_and(|t| t.temporary)
    }

    pub fn is_legal(&self, action: Action, grammar: &Grammar) -> bool {
        match action {
            Action::Shift => !self.completed && self.buffer_front < self.sentence_len,
            Action::ReduceL(l) | Action::ReduceR(l) => {
                grammar.reduce.binary_search(&l).is_ok() && self.can_reduce_with(grammar, l)
            }
            Action::Unary(l) => grammar.unary.binary_search(&l).is_ok() && self.can_unary(),
            Action::Finish => self.can_finish(),
            Action::Idle => self.completed,
        }
    }

    pub fn legal_actions(&self, grammar: &Grammar) -> Vec<Action> {
        if self.completed {
            return vec![Action::Idle];
        }
        let mut out = Vec::new();
        if self.buffer_front < self.sentence_len {
            out.push(Action::Shift);
        }
        for &l in &grammar.reduce {
            if self.can_reduce_with(grammar, l) {
                out.push(Action::ReduceL(l));
                out.push(Action::ReduceR(l));
            }
        }
        if self.can_unary() {
            out.extend(grammar.unary.iter().map(|&l| Action::Unary(l)));
        }
        if self.can_finish() {
            out.push(Action::Finish);
        }
        out
    }

    /// Successor state; `delta` is added to the running score.
    pub fn apply(
        self: &Arc<Self>,
        action: Action,
        grammar: &Grammar,
        delta: f64,
    ) -> Result<ParserState, TransitionError> {
        if !self.is_legal(action, grammar) {
            return Err(TransitionError::Illegal {
                action: grammar.action_name(action),
                state: self.summary(),
            });
        }
        let mut next = ParserState {
            stack: self.stack.clone(),
            stack_len: self.stack_len,
            sentence_len: self.sentence_len,
            buffer_front: self.buffer_front,
            completed: self.completed,
            action_count: self.action_count + 1,
            score: self.score + delta,
            prev: Some(Arc::clone(self)),
            last_action: Some(action),
        };
        match action {
            Action::Shift => {
                let i = self.buffer_front;
                let node = Node {
                    label: None,
                    kind: NodeKind::Leaf,
                    start: i,
                    end: i + 1,
                    head: i,
                    starts_built: 0,
                    ends_built: 0,
                    unary_run: 0,
                    temporary: false,
                };
                next.push(node);
                next.buffer_front += 1;
            }
            Action::ReduceL(l) | Action::ReduceR(l) => {
                let right = next.pop();
                let left = next.pop();
                let side = if matches!(action, Action::ReduceL(_)) {
                    Side::Left
                } else {
                    Side::Right
                };
                let temporary = grammar.is_temp(l);
                let built = u8::from(!temporary);
                let node = Node {
                    label: Some(l),
                    start: left.start,
                    end: right.end,
                    head: if side == Side::Left {
                        left.head
                    } else {
                        right.head
                    },
                    starts_built: left.starts_built.saturating_add(built),
                    ends_built: right.ends_built.saturating_add(built),
                    unary_run: 0,
                    temporary,
                    kind: NodeKind::Binary {
                        left,
                        right,
                        head: side,
                    },
                };
                next.push(node);
            }
            Action::Unary(l) => {
                let child = next.pop();
                let temporary = grammar.is_temp(l);
                let built = u8::from(!temporary);
                let node = Node {
                    label: Some(l),
                    start: child.start,
                    end: child.end,
                    head: child.head,
                    starts_built: child.starts_built.saturating_add(built),
                    ends_built: child.ends_built.saturating_add(built),
                    unary_run: child.unary_run + 1,
                    temporary,
                    kind: NodeKind::Unary(child),
                };
                next.push(node);
            }
            Action::Finish => next.completed = true,
            Action::Idle => {}
        }
        Ok(next)
    }

    fn push(&mut self, node: Node) {
        self.stack = Some(Arc::new(StackCell {
            node: Arc::new(node),
            below: self.stack.take(),
        }));
        self.stack_len += 1;
    }

    fn pop(&mut self) -> Arc<Node> {
        let cell = self.stack.take().expect("pop from non-empty stack");
        self.stack = cell.below.clone();
        self.stack_len -= 1;
        Arc::clone(&cell.node)
    }

    /// Actions applied from the initial state, oldest first.
    pub fn actions(&self) -> Vec<Action> {
        let mut out = Vec::with_capacity(self.action_count);
        let mut cur = Some(self);
        while let Some(s) = cur {
            if let Some(a) = s.last_action {
                out.push(a);
            }
            cur = s.prev.as_deref();
        }
        out.reverse();
        out
    }

    /// States along the derivation, initial state first, `self` last.
    pub fn history(self: &Arc<Self>) -> Vec<Arc<ParserState>> {
        let mut out = vec![Arc::clone(self)];
        while let Some(p) = out.last().and_then(|s| s.prev.clone()) {
            out.push(p);
        }
        out.reverse();
        out
    }

    pub fn to_bintree(
        &self,
        sentence: &Sentence,
        grammar: &Grammar,
    ) -> Result<BinTree, TransitionError> {
        if !self.completed || self.stack_len != 1 {
            return Err(TransitionError::Incomplete);
        }
        Ok(self.top().expect("one item").to_bintree(sentence, grammar))
    }

    pub fn to_tree(&self, sentence: &Sentence, grammar: &Grammar) -> Result<Tree, TransitionError> {
        Ok(crate::treebank::unbinarize(
            &self.to_bintree(sentence, grammar)?,
        )?)
    }

    fn summary(&self) -> String {
        format!(
            "[stack={}, front={}, completed={}, actions={}]",
            self.stack_len, self.buffer_front, self.completed, self.action_count
        )
    }
}

/// Gold action sequence for a binarized tree: post-order SHIFT / UNARY /
/// REDUCE, then FINISH.
pub fn oracle(tree: &BinTree, grammar: &Grammar) -> Result<Vec<Action>, TransitionError> {
    let mut out = Vec::new();
    emit(tree, grammar, &mut out)?;
    out.push(Action::Finish);
    Ok(out)
}

fn emit(tree: &BinTree, grammar: &Grammar, out: &mut Vec<Action>) -> Result<(), TransitionError> {
    let id = |l: &str| {
        grammar
            .id(l)
            .ok_or_else(|| TransitionError::UnknownLabel(l.to_string()))
    };
    match tree {
        BinTree::Leaf { .. } => out.push(Action::Shift),
        BinTree::Unary { label, child } => {
            emit(child, grammar, out)?;
            out.push(Action::Unary(id(label)?));
        }
        BinTree::Binary {
            label,
            head,
            left,
            right,
        } => {
            emit(left, grammar, out)?;
            emit(right, grammar, out)?;
            let l = id(label)?;
            out.push(match head {
                Side::Left => Action::ReduceL(l),
                Side::Right => Action::ReduceR(l),
            });
        }
    }
    Ok(())
}

/// Applies `actions` from the initial state, returning the final state.
pub fn replay(
    sentence_len: usize,
    actions: &[Action],
    grammar: &Grammar,
) -> Result<Arc<ParserState>, TransitionError> {
    let mut state = Arc::new(ParserState::initial(sentence_len));
    for &a in actions {
        state = Arc::new(state.apply(a, grammar, 0.0)?);
    }
    Ok(state)
}

pub struct ActionsDisplay<'a>(pub &'a [Action], pub &'a Grammar);

impl fmt::Display for ActionsDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(&self.1.action_name(*a))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::{binarize, unbinarize, HeadRules};

    fn they_like_apples() -> Tree {
        Tree::node(
            "S",
            vec![
                Tree::leaf("They", "PRP"),
                Tree::node(
                    "VP",
                    vec![Tree::leaf("like", "VBP"), Tree::leaf("apples", "NNS")],
                ),
            ],
        )
    }

    fn toy_grammar() -> Grammar {
        Grammar::from_parts(
            vec!["S".into(), "VP".into(), "NP".into(), "NP*".into()],
            &["S".into(), "VP".into(), "NP".into(), "NP*".into()],
            &["NP".into(), "S".into()],
        )
        .unwrap()
    }

    #[test]
    fn initial_state_only_shifts() {
        let g = toy_grammar();
        let s = ParserState::initial(3);
        assert_eq!(s.legal_actions(&g), vec![Action::Shift]);
    }

    #[test]
    fn completed_state_only_idles() {
        let g = toy_grammar();
        let s = replay(1, &[Action::Shift, Action::Finish], &g).unwrap();
        assert_eq!(s.legal_actions(&g), vec![Action::Idle]);
        let idle = Arc::new(s.apply(Action::Idle, &g, 0.0).unwrap());
        assert_eq!(idle.action_count, 3);
        assert_eq!(idle.stack_len(), 1);
        assert_eq!(idle.buffer_front, 1);
        assert!(idle.completed);
    }

    #[test]
    fn single_item_exhausted_buffer() {
        let g = toy_grammar();
        let s = replay(1, &[Action::Shift], &g).unwrap();
        let mut expected: Vec<Action> =
            g.unary_labels().iter().map(|&l| Action::Unary(l)).collect();
        expected.push(Action::Finish);
        assert_eq!(s.legal_actions(&g), expected);
    }

    #[test]
    fn shift_moves_front_and_grows_stack() {
        let g = toy_grammar();
        let s = Arc::new(ParserState::initial(2));
        let t = s.apply(Action::Shift, &g, 0.0).unwrap();
        assert_eq!((t.buffer_front, t.stack_len(), t.action_count), (1, 1, 1));
        // the input state is untouched
        assert_eq!((s.buffer_front, s.stack_len(), s.action_count), (0, 0, 0));
    }

    #[test]
    fn illegal_action_is_rejected() {
        let g = toy_grammar();
        let s = Arc::new(ParserState::initial(2));
        assert!(matches!(
            s.apply(Action::Finish, &g, 0.0),
            Err(TransitionError::Illegal { .. })
        ));
        assert!(s.apply(Action::ReduceL(0), &g, 0.0).is_err());
    }

    #[test]
    fn worked_example_derivation() {
        let t = they_like_apples();
        let b = binarize(&t, &HeadRules::default());
        let g = Grammar::from_bintrees([&b]);
        let actions = oracle(&b, &g).unwrap();
        assert_eq!(
            ActionsDisplay(&actions, &g).to_string(),
            "SHIFT SHIFT SHIFT REDUCE-L-VP REDUCE-R-S FINISH"
        );
        let state = replay(3, &actions, &g).unwrap();
        let sentence = Sentence::from_tree(&t);
        assert_eq!(state.to_tree(&sentence, &g).unwrap(), t);
        let top = state.top().unwrap();
        assert_eq!(top.head, 1, "S is headed by the verb through the VP");
    }

    #[test]
    fn single_word_oracle() {
        let t = Tree::node("NP", vec![Tree::leaf("w", "NN")]);
        let b = binarize(&t, &HeadRules::default());
        let g = Grammar::from_bintrees([&b]);
        let actions = oracle(&b, &g).unwrap();
        assert_eq!(
            ActionsDisplay(&actions, &g).to_string(),
            "SHIFT UNARY-NP FINISH"
        );
    }

    #[test]
    fn unary_cap() {
        let g = toy_grammar();
        let np = g.id("NP").unwrap();
        let s = replay(
            2,
            &[Action::Shift, Action::Unary(np), Action::Unary(np)],
            &g,
        )
        .unwrap();
        assert!(!s
            .legal_actions(&g)
            .iter()
            .any(|a| matches!(a, Action::Unary(_))));
    }

    #[test]
    fn temporary_root_cannot_finish() {
        let g = toy_grammar();
        let tmp = g.id("NP*").unwrap();
        let s = replay(2, &[Action::Shift, Action::Shift], &g).unwrap();
        assert!(!s.is_legal(Action::ReduceL(tmp), &g));
        let s = replay(3, &[Action::Shift, Action::Shift, Action::ReduceL(tmp)], &g).unwrap();
        assert!(s.top().unwrap().temporary);
    }

    #[test]
    fn action_text_round_trip() {
        let g = toy_grammar();
        for name in [
            "SHIFT",
            "FINISH",
            "IDLE",
            "REDUCE-L-NP*",
            "REDUCE-R-S",
            "UNARY-NP",
        ] {
            let a = g.parse_action(name).unwrap();
            assert_eq!(g.action_name(a), name);
            assert_eq!(Action::from_index(a.index()), a);
        }
        assert!(g.parse_action("REDUCE-X-NP").is_err());
        assert!(g.parse_action("UNARY-QP").is_err());
    }

    #[test]
    fn legal_actions_agree_with_is_legal() {
        let g = toy_grammar();
        let all: Vec<Action> = (0..(3 + 3 * g.num_labels() as u32))
            .map(Action::from_index)
            .collect();
        let mut frontier = vec![Arc::new(ParserState::initial(3))];
        for _ in 0..12 {
            let mut next = Vec::new();
            for s in &frontier {
                let legal = s.legal_actions(&g);
                for &a in &all {
                    assert_eq!(
                        legal.contains(&a),
                        s.is_legal(a, &g),
                        "{}",
                        g.action_name(a)
                    );
                }
                for &a in legal.iter().take(4) {
                    next.push(Arc::new(s.apply(a, &g, 0.0).unwrap()));
                }
            }
            frontier = next;
        }
    }

    #[test]
    fn derivation_reconstructs_unbinarized_tree() {
        let t = Tree::node(
            "S",
            vec![
                Tree::node(
                    "NP",
                    vec![
                        Tree::leaf("a", "DT"),
                        Tree::leaf("b", "JJ"),
                        Tree::leaf("c", "NN"),
                    ],
                ),
                Tree::node("VP", vec![Tree::node("S", vec![Tree::leaf("d", "VB")])]),
            ],
        );
        let b = binarize(&t, &HeadRules::default());
        let g = Grammar::from_bintrees([&b]);
        let actions = oracle(&b, &g).unwrap();
        let state = replay(4, &actions, &g).unwrap();
        let sentence = Sentence::from_tree(&t);
        assert_eq!(state.to_bintree(&sentence, &g).unwrap(), b);
        assert_eq!(unbinarize(&b).unwrap(), t);
        assert_eq!(state.actions(), actions);
        assert_eq!(state.history().len(), actions.len() + 1);
    }
}
