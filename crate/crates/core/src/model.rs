//! Sparse linear model over (feature, action) pairs with lazily averaged
//! perceptron updates, and its on-disk text and binary forms.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::features::FeatureVector;
use crate::transition::{Action, Grammar, TransitionError};

const TEXT_MAGIC: &str = "conparse-parser-model";
const BINARY_MAGIC: &[u8; 4] = b"CPPM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("binary model: {0}")]
    Binary(String),
    #[error("unsupported model version {found} (expected {MODEL_VERSION})")]
    Version { found: u32 },
    #[error(transparent)]
    Grammar(#[from] TransitionError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    action: u32,
    weight: f64,
    /// Sum of this weight over all snapshots before `last`.
    total: f64,
    /// Update number at which `weight` last changed.
    last: u64,
}

/// Weights keyed by feature string, one small block of per-action entries per
/// feature.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub grammar: Grammar,
    pub use_lookahead: bool,
    /// Hash of the hierarchy predictor whose outputs the lookahead features
    /// were trained on.
    pub predictor_hash: Option<String>,
    weights: HashMap<String, Vec<Entry>>,
    updates: u64,
}

impl LinearModel {
    pub fn new(grammar: Grammar, use_lookahead: bool) -> LinearModel {
        LinearModel {
            grammar,
            use_lookahead,
            predictor_hash: None,
            weights: HashMap::new(),
            updates: 0,
        }
    }

    pub fn num_actions(&self) -> usize {
        3 + 3 * self.grammar.num_labels()
    }

    pub fn update_count(&self) -> u64 {
        self.updates
    }

    pub fn num_entries(&self) -> usize {
        self.weights.values().map(Vec::len).sum()
    }

    pub fn weight(&self, feature: &str, action: Action) -> f64 {
        let a = action.index();
        self.weights
            .get(feature)
            .and_then(|es| es.iter().find(|e| e.action == a))
            .map_or(0.0, |e| e.weight)
    }

    pub fn set_weight(&mut self, feature: &str, action: Action, weight: f64) {
        let a = action.index();
        let block = self.weights.entry(feature.to_string()).or_default();
        match block.iter_mut().find(|e| e.action == a) {
            Some(e) => e.weight = weight,
            None => block.push(Entry {
                action: a,
                weight,
                total: 0.0,
                last: 0,
            }),
        }
    }

    /// Adds every feature's weight block into `scores` (indexed by
    /// [`Action::index`]).
    pub fn score_all(&self, features: &FeatureVector, scores: &mut [f64]) {
        for key in &features.keys {
            if let Some(block) = self.weights.get(key.as_str()) {
                for e in block {
                    scores[e.action as usize] += e.weight;
                }
            }
        }
    }

    pub fn score_action(&self, features: &FeatureVector, action: Action) -> f64 {
        features.keys.iter().map(|k| self.weight(k, action)).sum()
    }

    /// One perceptron step: +1 for each (feature, action) on the gold side, -1
    /// on the predicted side.
    pub fn perceptron_update(
        &mut self,
        gold: &[(FeatureVector, Action)],
        predicted: &[(FeatureVector, Action)],
    ) {
        let mut delta: BTreeMap<(&str, u32), f64> = BTreeMap::new();
        for (fv, a) in gold {
            for k in &fv.keys {
                *delta.entry((k.as_str(), a.index())).or_default() += 1.0;
            }
        }
        for (fv, a) in predicted {
            for k in &fv.keys {
                *delta.entry((k.as_str(), a.index())).or_default() -= 1.0;
            }
        }
        self.updates += 1;
        let now = self.updates;
        for ((key, action), d) in delta {
            if d == 0.0 {
                continue;
            }
            let block = self.weights.entry(key.to_string()).or_default();
            let entry = match block.iter_mut().position(|e| e.action == action) {
                Some(i) => &mut block[i],
                None => {
                    block.push(Entry {
                        action,
                        weight: 0.0,
                        total: 0.0,
                        last: now,
                    });
                    block.last_mut().expect("just pushed")
                }
            };
            entry.total += entry.weight * (now - entry.last) as f64;
            entry.weight += d;
            entry.last = now;
        }
    }

    /// An update with no feature changes. Called for correctly parsed
    /// sentences so the average runs over training instances.
    pub fn tick(&mut self) {
        self.updates += 1;
    }

    fn averaged_weight(&self, e: &Entry) -> f64 {
        if self.updates == 0 {
            return e.weight;
        }
        (e.total + e.weight * (self.updates - e.last + 1) as f64) / self.updates as f64
    }

    /// Average of the weight vectors after each update so far.
    pub fn averaged_weight_of(&self, feature: &str, action: Action) -> f64 {
        let a = action.index();
        self.weights
            .get(feature)
            .and_then(|es| es.iter().find(|e| e.action == a))
            .map_or(0.0, |e| self.averaged_weight(e))
    }

    /// A scoring copy whose weights are the averaged weights.
    pub fn averaged(&self) -> LinearModel {
        let weights = self
            .weights
            .iter()
            .map(|(k, es)| {
                let block = es
                    .iter()
                    .map(|e| Entry {
                        action: e.action,
                        weight: self.averaged_weight(e),
                        total: 0.0,
                        last: 0,
                    })
                    .collect();
                (k.clone(), block)
            })
            .collect();
        LinearModel {
            grammar: self.grammar.clone(),
            use_lookahead: self.use_lookahead,
            predictor_hash: self.predictor_hash.clone(),
            weights,
            updates: 0,
        }
    }

    /// `(feature, action, weight, averaged weight)` sorted by feature then action.
    fn records(&self) -> Vec<(&str, u32, f64, f64)> {
        let mut out: Vec<_> = self
            .weights
            .iter()
            .flat_map(|(k, es)| {
                es.iter()
                    .map(move |e| (k.as_str(), e.action, e.weight, self.averaged_weight(e)))
            })
            .collect();
        out.sort_by(|a, b| a.0.cmp(b.0).then(a.1.cmp(&b.1)));
        out
    }

    fn restore(&mut self, feature: String, action: u32, weight: f64, averaged: f64) {
        let c = self.updates;
        // chosen so that averaged_weight() reproduces `averaged`
        let (total, last) = if c == 0 {
            (0.0, 0)
        } else {
            (averaged * c as f64 - weight, c)
        };
        self.weights.entry(feature).or_default().push(Entry {
            action,
            weight,
            total,
            last,
        });
    }

    fn header_lines(&self) -> Vec<String> {
        let labels: Vec<&str> = self.grammar.labels().collect();
        let names = |ids: &[u32]| {
            ids.iter()
                .map(|&l| self.grammar.name(l))
                .collect::<Vec<_>>()
                .join(" ")
        };
        vec![
            format!("{TEXT_MAGIC} {MODEL_VERSION}"),
            format!("lookahead {}", self.use_lookahead),
            format!(
                "predictor {}",
                self.predictor_hash.as_deref().unwrap_or("-")
            ),
            format!("updates {}", self.updates),
            format!("labels {}", labels.join(" ")),
            format!("reduce {}", names(self.grammar.reduce_labels())),
            format!("unary {}", names(self.grammar.unary_labels())),
        ]
    }

    pub fn to_text(&self) -> String {
        let records = self.records();
        let mut out = self.header_lines().join("\n");
        out.push_str(&format!("\nrecords {}\n", records.len()));
        for (k, a, w, avg) in records {
            let action = self.grammar.action_name(Action::from_index(a));
            out.push_str(&format!("{k}\t{action}\t{w}\t{avg}\n"));
        }
        out
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        let header = self.header_lines()[1..].join("\n");
        put_str(&mut out, &header);
        let records = self.records();
        out.extend_from_slice(&(records.len() as u64).to_le_bytes());
        for (k, a, w, avg) in records {
            put_str(&mut out, k);
            out.extend_from_slice(&a.to_le_bytes());
            out.extend_from_slice(&w.to_le_bytes());
            out.extend_from_slice(&avg.to_le_bytes());
        }
        out
    }

    /// Reads either form, detected from the leading magic bytes.
    pub fn from_bytes(bytes: &[u8]) -> Result<LinearModel, ModelError> {
        if bytes.starts_with(BINARY_MAGIC) {
            Self::from_binary(bytes)
        } else {
            let text = std::str::from_utf8(bytes).map_err(|e| ModelError::Format {
                line: 0,
                message: format!("not UTF-8: {e}"),
            })?;
            Self::from_text(text)
        }
    }

    pub fn from_text(text: &str) -> Result<LinearModel, ModelError> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or(ModelError::Format {
            line: 1,
            message: "empty model file".into(),
        })?;
        let version = first
            .strip_prefix(TEXT_MAGIC)
            .map(str::trim)
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or(ModelError::Format {
                line: 1,
                message: format!("expected `{TEXT_MAGIC} <version>`"),
            })?;
        if version != MODEL_VERSION {
            return Err(ModelError::Version { found: version });
        }
        let mut header = Vec::new();
        for _ in 0..6 {
            let (i, l) = lines.next().ok_or(ModelError::Format {
                line: 0,
                message: "truncated header".into(),
            })?;
            header.push((i + 1, l));
        }
        let mut model = parse_header(&header)?;
        let (i, count_line) = lines.next().ok_or(ModelError::Format {
            line: 0,
            message: "missing record count".into(),
        })?;
        let count: usize = count_line
            .strip_prefix("records ")
            .and_then(|c| c.parse().ok())
            .ok_or(ModelError::Format {
                line: i + 1,
                message: "expected `records <n>`".into(),
            })?;
        let mut seen = 0;
        for (i, line) in lines {
            let err = |message: String| ModelError::Format {
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(err(format!("expected 4 fields, found {}", fields.len())));
            }
            let action = model
                .grammar
                .parse_action(fields[1])
                .map_err(|e| err(e.to_string()))?;
            let w = parse_finite(fields[2])
                .ok_or_else(|| err(format!("bad weight {:?}", fields[2])))?;
            let avg = parse_finite(fields[3])
                .ok_or_else(|| err(format!("bad weight {:?}", fields[3])))?;
            model.restore(fields[0].to_string(), action.index(), w, avg);
            seen += 1;
        }
        if seen != count {
            return Err(ModelError::Format {
                line: 0,
                message: format!("expected {count} records, found {seen}"),
            });
        }
        Ok(model)
    }

    fn from_binary(bytes: &[u8]) -> Result<LinearModel, ModelError> {
        let mut r = Reader {
            bytes,
            at: BINARY_MAGIC.len(),
        };
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(ModelError::Version { found: version });
        }
        let header = r.string()?;
        let lines: Vec<(usize, &str)> = header
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 2, l))
            .collect();
        if lines.len() != 6 {
            return Err(ModelError::Binary("header must have 6 lines".into()));
        }
        let mut model = parse_header(&lines)?;
        let count = r.u64()?;
        let num_actions = model.num_actions() as u32;
        for _ in 0..count {
            let key = r.string()?;
            let action = r.u32()?;
            let w = r.f64()?;
            let avg = r.f64()?;
            if action >= num_actions {
                return Err(ModelError::Binary(format!(
                    "action index {action} out of range"
                )));
            }
            if matches!(Action::from_index(action), Action::Unary(l) if model.grammar.is_temp(l)) {
                return Err(ModelError::Binary(
                    "unary action over a temporary label".into(),
                ));
            }
            model.restore(key, action, w, avg);
        }
        if r.at != bytes.len() {
            return Err(ModelError::Binary("trailing bytes".into()));
        }
        Ok(model)
    }
}

fn parse_finite(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_header(lines: &[(usize, &str)]) -> Result<LinearModel, ModelError> {
    let field = |idx: usize, key: &str| -> Result<&str, ModelError> {
        let (line, text) = lines[idx];
        text.strip_prefix(key)
            .and_then(|rest| {
                if rest.is_empty() {
                    Some(rest)
                } else {
                    rest.strip_prefix(' ')
                }
            })
            .ok_or(ModelError::Format {
                line,
                message: format!("expected `{key} ...`"),
            })
    };
    let use_lookahead = match field(0, "lookahead")? {
        "true" => true,
        "false" => false,
        other => {
            return Err(ModelError::Format {
                line: lines[0].0,
                message: format!("bad lookahead flag {other:?}"),
            })
        }
    };
    let predictor_hash = match field(1, "predictor")? {
        "-" => None,
        h => Some(h.to_string()),
    };
    let updates: u64 = field(2, "updates")?
        .parse()
        .map_err(|_| ModelError::Format {
            line: lines[2].0,
            message: "bad update count".into(),
        })?;
    let split = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    let labels = split(field(3, "labels")?);
    let mut dedup = labels.clone();
    dedup.sort();
    dedup.dedup();
    if dedup.len() != labels.len() || labels.len() > 1_000_000 {
        return Err(ModelError::Format {
            line: lines[3].0,
            message: "duplicate labels".into(),
        });
    }
    let grammar = Grammar::from_parts(
        labels,
        &split(field(4, "reduce")?),
        &split(field(5, "unary")?),
    )?;
    let mut model = LinearModel::new(grammar, use_lookahead);
    model.predictor_hash = predictor_hash;
    model.updates = updates;
    Ok(model)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ModelError> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ModelError::Binary("unexpected end of data".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        let v = f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ModelError::Binary("non-finite weight".into()))
        }
    }

    fn string(&mut self) -> Result<String, ModelError> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| ModelError::Binary("string is not UTF-8".into()))
    }
}
