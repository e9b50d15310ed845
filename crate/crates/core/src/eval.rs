//! Labelled bracketing precision / recall / F1 and error breakdowns.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::treebank::Tree;

/// Wrapper labels never scored.
pub const IGNORED_ROOT_LABELS: [&str; 2] = ["TOP", "ROOT"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("sentence {index}: predicted and gold words differ")]
    LeafMismatch { index: usize },
    #[error("{pred} predicted trees but {gold} gold trees")]
    CountMismatch { pred: usize, gold: usize },
}

/// Matched / predicted / gold counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PrfCounts {
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl PrfCounts {
    /// `(precision, recall, f1)`. Nothing predicted against nothing gold is a
    /// vacuous perfect match; an empty side against a non-empty one scores 0.
    pub fn prf(&self) -> (f64, f64, f64) {
        if self.predicted == 0 && self.gold == 0 {
            return (1.0, 1.0, 1.0);
        }
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let p = ratio(self.matched, self.predicted);
        let r = ratio(self.matched, self.gold);
        let f = if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        };
        (p, r, f)
    }

    pub fn f1(&self) -> f64 {
        self.prf().2
    }
}

impl std::ops::AddAssign for PrfCounts {
    fn add_assign(&mut self, o: PrfCounts) {
        self.matched += o.matched;
        self.predicted += o.predicted;
        self.gold += o.gold;
    }
}

impl std::iter::Sum for PrfCounts {
    fn sum<I: Iterator<Item = PrfCounts>>(iter: I) -> PrfCounts {
        let mut acc = PrfCounts::default();
        for c in iter {
            acc += c;
        }
        acc
    }
}

type Bracket = (String, usize, usize);

/// Scored constituents: every internal node except wrapper roots.
pub fn brackets(tree: &Tree) -> Vec<Bracket> {
    tree.constituents()
        .into_iter()
        .filter(|(l, _, _)| !IGNORED_ROOT_LABELS.contains(&l.as_str()))
        .collect()
}

fn multiset(bs: Vec<Bracket>) -> HashMap<Bracket, usize> {
    let mut m = HashMap::new();
    for b in bs {
        *m.entry(b).or_insert(0) += 1;
    }
    m
}

/// Per-bracket `(key, matched, predicted, gold)` for one sentence pair.
fn matched_brackets(pred: &Tree, gold: &Tree) -> Vec<(Bracket, usize, usize, usize)> {
    let p = multiset(brackets(pred));
    let g = multiset(brackets(gold));
    let mut keys: Vec<&Bracket> = p.keys().chain(g.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|k| {
            let pc = p.get(k).copied().unwrap_or(0);
            let gc = g.get(k).copied().unwrap_or(0);
            (k.clone(), pc.min(gc), pc, gc)
        })
        .collect()
}

fn check_pairs(pred: &[Tree], gold: &[Tree]) -> Result<(), EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::CountMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.words() != g.words() {
            return Err(EvalError::LeafMismatch { index: i });
        }
    }
    Ok(())
}

pub fn sentence_counts(pred: &Tree, gold: &Tree) -> PrfCounts {
    matched_brackets(pred, gold)
        .into_iter()
        .map(|(_, m, p, g)| PrfCounts {
            matched: m,
            predicted: p,
            gold: g,
        })
        .sum()
}

/// Corpus-level counts, micro-averaged over all sentences.
pub fn bracket_counts(pred: &[Tree], gold: &[Tree]) -> Result<PrfCounts, EvalError> {
    check_pairs(pred, gold)?;
    Ok(pred
        .iter()
        .zip(gold)
        .map(|(p, g)| sentence_counts(p, g))
        .sum())
}

/// `(LP, LR, F1)`.
pub fn bracket_f1(pred: &[Tree], gold: &[Tree]) -> Result<(f64, f64, f64), EvalError> {
    Ok(bracket_counts(pred, gold)?.prf())
}

/// Length bin of a sentence: lengths in `[0, 10)` go to bin 10, `[10, 20)` to
/// bin 20, and so on.
pub fn length_bin(len: usize) -> usize {
    (len / 10 + 1) * 10
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Breakdown {
    pub overall: PrfCounts,
    pub by_label: BTreeMap<String, PrfCounts>,
    pub by_span_length: BTreeMap<usize, PrfCounts>,
    pub by_sentence_bin: BTreeMap<usize, PrfCounts>,
}

pub fn breakdown(pred: &[Tree], gold: &[Tree]) -> Result<Breakdown, EvalError> {
    check_pairs(pred, gold)?;
    let mut out = Breakdown::default();
    for (p, g) in pred.iter().zip(gold) {
        let mut sentence = PrfCounts::default();
        for ((label, start, end), m, pc, gc) in matched_brackets(p, g) {
            let c = PrfCounts {
                matched: m,
                predicted: pc,
                gold: gc,
            };
            *out.by_label.entry(label).or_default() += c;
            *out.by_span_length.entry(end - start).or_default() += c;
            sentence += c;
        }
        *out.by_sentence_bin
            .entry(length_bin(g.num_words()))
            .or_default() += sentence;
        out.overall += sentence;
    }
    Ok(out)
}

fn row(out: &mut String, table: &str, key: &str, c: &PrfCounts) {
    let (p, r, f) = c.prf();
    let _ = writeln!(
        out,
        "{table}\t{key}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}",
        c.matched, c.predicted, c.gold, p, r, f
    );
}

impl Breakdown {
    /// One row per label / span length / sentence bin, tab separated.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("table\tkey\tmatched\tpredicted\tgold\tprecision\trecall\tf1\n");
        row(&mut out, "overall", "all", &self.overall);
        for (k, c) in &self.by_label {
            row(&mut out, "label", k, c);
        }
        for (k, c) in &self.by_span_length {
            row(&mut out, "span_length", &k.to_string(), c);
        }
        for (k, c) in &self.by_sentence_bin {
            row(&mut out, "sentence_bin", &k.to_string(), c);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# labelled brackets; preterminals and {} wrappers are not scored",
            IGNORED_ROOT_LABELS.join("/")
        );
        let (p, r, f) = self.overall.prf();
        let _ = writeln!(
            out,
            "LP {:.2}  LR {:.2}  F1 {:.2}",
            100.0 * p,
            100.0 * r,
            100.0 * f
        );
        let mut section = |title: &str, rows: Vec<(String, PrfCounts)>| {
            let _ = writeln!(out, "\n{title}");
            let _ = writeln!(
                out,
                "{:>12} {:>8} {:>8} {:>8} {:>7}",
                "", "matched", "pred", "gold", "F1"
            );
            for (k, c) in rows {
                let _ = writeln!(
                    out,
                    "{:>12} {:>8} {:>8} {:>8} {:>7.2}",
                    k,
                    c.matched,
                    c.predicted,
                    c.gold,
                    100.0 * c.f1()
                );
            }
        };
        section(
            "by label",
            self.by_label.iter().map(|(k, c)| (k.clone(), *c)).collect(),
        );
        section(
            "by span length",
            self.by_span_length
                .iter()
                .map(|(k, c)| (k.to_string(), *c))
                .collect(),
        );
        section(
            "by sentence length bin",
            self.by_sentence_bin
                .iter()
                .map(|(k, c)| (k.to_string(), *c))
                .collect(),
        );
        out
    }
}
