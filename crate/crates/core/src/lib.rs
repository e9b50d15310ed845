//! Shift-reduce constituent parsing with beam search, averaged-perceptron
//! training and lookahead features drawn from per-word constituent
//! hierarchies.

pub mod treebank;

pub use treebank::{
    binarize, read_ptb, unbinarize, write_ptb, BinTree, HeadRules, Side, Tree, TreebankError,
};
pub mod sentence;
pub mod transition;

pub use sentence::Sentence;
pub use transition::{oracle, replay, Action, Grammar, ParserState};
pub mod decoder;
pub mod eval;
pub mod features;
pub mod hierarchy;
pub mod model;
pub mod synth;

pub use decoder::{beam_parse, train, TrainOptions};
pub use hierarchy::{extract_hierarchies, ConstituentHierarchy, HierarchyType, WordHierarchies};
pub use model::LinearModel;
pub use synth::synth_treebank;
