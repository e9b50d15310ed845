//! Constituent-hierarchy predictor: character attention input layer,
//! windowed BiLSTM encoder and one attention decoder per hierarchy type.
//!
//! The s-type and e-type models are fully separate networks that share only
//! the vocabularies.

use std::collections::HashMap;
use std::fmt::Write as _;

use conparse_core::hierarchy::{
    corpus_counts, AnnotatedSentence, ConstituentHierarchy, HierarchyType, WordHierarchies,
    NULL_VALUE,
};
use indexmap::{IndexMap, IndexSet};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tensor::{
    sgd_momentum_step, Grads, Graph, Param, ParamId, ParamKind, ParamStore, TensorError, Var,
};

pub const UNK: &str = "<UNK>";
pub const PAD: &str = "<PAD>";
const MAGIC: &[u8; 4] = b"CPHP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("model file version {found} is not supported (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, PredictorError>;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_hidden: usize,
    pub hidden: usize,
    pub attention_dim: usize,
    pub win: usize,
    pub char_win: usize,
    pub layers: usize,
    pub max_depth: usize,
    pub epochs: usize,
    pub seed: u64,
    pub eta: f64,
    pub mu: f64,
    pub lambda: f64,
    pub unk_cutoff: usize,
    pub unk_prob: f64,
    pub use_chars: bool,
    /// Gradient norm clip per sentence; 0 disables.
    pub clip: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            word_dim: 50,
            char_dim: 30,
            char_hidden: 60,
            hidden: 100,
            attention_dim: 100,
            win: 2,
            char_win: 2,
            layers: 2,
            max_depth: 32,
            epochs: 20,
            seed: 1,
            eta: 0.01,
            mu: 0.9,
            lambda: 1e-6,
            unk_cutoff: 1,
            unk_prob: 0.5,
            use_chars: true,
            clip: 5.0,
        }
    }
}

impl PredictorConfig {
    pub const KEYS: &'static [&'static str] = &[
        "word_dim",
        "char_dim",
        "char_hidden",
        "hidden",
        "attention_dim",
        "win",
        "char_win",
        "layers",
        "max_depth",
        "epochs",
        "seed",
        "eta",
        "mu",
        "lambda",
        "unk_cutoff",
        "unk_prob",
        "use_chars",
        "clip",
    ];

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| PredictorError::Config(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "word_dim" => self.word_dim = num(key, value)?,
            "char_dim" => self.char_dim = num(key, value)?,
            "char_hidden" => self.char_hidden = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "attention_dim" => self.attention_dim = num(key, value)?,
            "win" => self.win = num(key, value)?,
            "char_win" => self.char_win = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "max_depth" => self.max_depth = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "eta" => self.eta = num(key, value)?,
            "mu" => self.mu = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "unk_cutoff" => self.unk_cutoff = num(key, value)?,
            "unk_prob" => self.unk_prob = num(key, value)?,
            "use_chars" => self.use_chars = num(key, value)?,
            "clip" => self.clip = num(key, value)?,
            _ => return Err(PredictorError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
            ("char_hidden", self.char_hidden),
            ("hidden", self.hidden),
            ("attention_dim", self.attention_dim),
            ("max_depth", self.max_depth),
            ("epochs", self.epochs),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(PredictorError::Config(format!("{k} must be positive")));
            }
        }
        if !(1..=3).contains(&self.layers) {
            return Err(PredictorError::Config(format!(
                "layers must be 1, 2 or 3 (got {})",
                self.layers
            )));
        }
        let rates = [
            ("eta", self.eta),
            ("mu", self.mu),
            ("lambda", self.lambda),
            ("clip", self.clip),
        ];
        for (k, v) in rates {
            if !v.is_finite() || v < 0.0 {
                return Err(PredictorError::Config(format!(
                    "{k} must be a finite non-negative number"
                )));
            }
        }
        if self.eta == 0.0 {
            return Err(PredictorError::Config("eta must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.unk_prob) {
            return Err(PredictorError::Config("unk_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let v = match *key {
                "word_dim" => self.word_dim.to_string(),
                "char_dim" => self.char_dim.to_string(),
                "char_hidden" => self.char_hidden.to_string(),
                "hidden" => self.hidden.to_string(),
                "attention_dim" => self.attention_dim.to_string(),
                "win" => self.win.to_string(),
                "char_win" => self.char_win.to_string(),
                "layers" => self.layers.to_string(),
                "max_depth" => self.max_depth.to_string(),
                "epochs" => self.epochs.to_string(),
                "seed" => self.seed.to_string(),
                "eta" => self.eta.to_string(),
                "mu" => self.mu.to_string(),
                "lambda" => self.lambda.to_string(),
                "unk_cutoff" => self.unk_cutoff.to_string(),
                "unk_prob" => self.unk_prob.to_string(),
                "use_chars" => self.use_chars.to_string(),
                _ => self.clip.to_string(),
            };
            let _ = writeln!(out, "{key}={v}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<PredictorConfig> {
        let mut c = PredictorConfig::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| {
                PredictorError::Config(format!("expected key=value, got {line:?}"))
            })?;
            c.set(k.trim(), v.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    fn input_dim(&self) -> usize {
        self.word_dim + if self.use_chars { self.char_hidden } else { 0 }
    }
}

/// Words (with training counts) and characters. Index 0 is UNK in both;
/// index 1 of the character table is the window pad.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocab {
    words: IndexMap<String, usize>,
    chars: IndexSet<String>,
}

impl Vocab {
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a [String]>) -> Vocab {
        let mut words = IndexMap::new();
        let mut chars = IndexSet::new();
        words.insert(UNK.to_string(), 0);
        chars.insert(UNK.to_string());
        chars.insert(PAD.to_string());
        for s in sentences {
            for w in s {
                *words.entry(w.clone()).or_insert(0) += 1;
                for ch in w.chars() {
                    chars.insert(ch.to_string());
                }
            }
        }
        Vocab { words, chars }
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn word_id(&self, w: &str) -> usize {
        self.words.get_index_of(w).unwrap_or(0)
    }

    pub fn word_count(&self, w: &str) -> usize {
        self.words.get(w).copied().unwrap_or(0)
    }

    fn char_ids(&self, w: &str) -> Vec<usize> {
        let ids: Vec<usize> = w
            .chars()
            .map(|c| self.chars.get_index_of(c.to_string().as_str()).unwrap_or(0))
            .collect();
        if ids.is_empty() {
            vec![1]
        } else {
            ids
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Lstm {
    wx: ParamId,
    wh: ParamId,
    peep_i: ParamId,
    peep_o: ParamId,
    b: ParamId,
    hidden: usize,
}

impl Lstm {
    fn register(store: &mut ParamStore, name: &str, input: usize, hidden: usize) -> Lstm {
        Lstm {
            wx: store.add(format!("{name}.wx"), 3 * hidden, input, ParamKind::Weight),
            wh: store.add(format!("{name}.wh"), 3 * hidden, hidden, ParamKind::Weight),
            peep_i: store.add(format!("{name}.peep_i"), hidden, 1, ParamKind::Weight),
            peep_o: store.add(format!("{name}.peep_o"), hidden, 1, ParamKind::Weight),
            b: store.add(format!("{name}.b"), 3 * hidden, 1, ParamKind::Bias),
            hidden,
        }
    }
}

/// Per-graph copies of an LSTM's vector parameters.
struct LstmVars {
    lstm: Lstm,
    peep_i: Var,
    peep_o: Var,
    b: Var,
}

impl LstmVars {
    fn new(g: &mut Graph, lstm: Lstm) -> Result<LstmVars> {
        Ok(LstmVars {
            lstm,
            peep_i: g.param(lstm.peep_i)?,
            peep_o: g.param(lstm.peep_o)?,
            b: g.param(lstm.b)?,
        })
    }

    /// One step of the coupled-gate peephole cell given `W_x x` already
    /// computed. A missing previous state stands for the zero vector.
    fn step(&self, g: &mut Graph, xproj: Var, prev: Option<(Var, Var)>) -> Result<(Var, Var)> {
        let h = self.lstm.hidden;
        let pre = match prev {
            Some((hp, _)) => {
                let r = g.matvec(self.lstm.wh, hp)?;
                g.add(&[xproj, r, self.b])?
            }
            None => g.add(&[xproj, self.b])?,
        };
        let mut ipre = g.slice(pre, 0, h)?;
        if let Some((_, cp)) = prev {
            let peep = g.mul(self.peep_i, cp)?;
            ipre = g.add(&[ipre, peep])?;
        }
        let i = g.sigmoid(ipre)?;
        let cand_pre = g.slice(pre, h, h)?;
        let cand = g.tanh(cand_pre)?;
        let written = g.mul(i, cand)?;
        let c = match prev {
            Some((_, cp)) => {
                let f = g.one_minus(i)?;
                let kept = g.mul(f, cp)?;
                g.add(&[kept, written])?
            }
            None => written,
        };
        let opre = g.slice(pre, 2 * h, h)?;
        let peep = g.mul(self.peep_o, c)?;
        let opre = g.add(&[opre, peep])?;
        let o = g.sigmoid(opre)?;
        let tc = g.tanh(c)?;
        let hn = g.mul(o, tc)?;
        Ok((hn, c))
    }

    fn run(&self, g: &mut Graph, xs: &[Var], reverse: bool) -> Result<Vec<Var>> {
        let mut out = vec![None; xs.len()];
        let mut state = None;
        let order: Vec<usize> = if reverse {
            (0..xs.len()).rev().collect()
        } else {
            (0..xs.len()).collect()
        };
        for i in order {
            let xp = g.matvec(self.lstm.wx, xs[i])?;
            let (h, c) = self.step(g, xp, state)?;
            out[i] = Some(h);
            state = Some((h, c));
        }
        Ok(out
            .into_iter()
            .map(|h| h.expect("every position visited"))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct CharNet {
    emb: ParamId,
    w: ParamId,
    b: ParamId,
    att_word: ParamId,
    att_char: ParamId,
    att_b: ParamId,
    att_v: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct Net {
    word_emb: ParamId,
    chars: Option<CharNet>,
    pads: Option<(ParamId, ParamId)>,
    encoder: Vec<[Lstm; 2]>,
    decoder: Lstm,
    att_key: ParamId,
    att_query: ParamId,
    att_b: ParamId,
    att_v: ParamId,
    out: ParamId,
}

impl Net {
    fn register(
        store: &mut ParamStore,
        cfg: &PredictorConfig,
        vocab: &Vocab,
        labels: usize,
    ) -> Net {
        let word_emb = store.add(
            "word_emb",
            vocab.num_words(),
            cfg.word_dim,
            ParamKind::Embedding,
        );
        let chars = cfg.use_chars.then(|| {
            let window = (2 * cfg.char_win + 1) * cfg.char_dim;
            CharNet {
                emb: store.add(
                    "char_emb",
                    vocab.num_chars(),
                    cfg.char_dim,
                    ParamKind::Embedding,
                ),
                w: store.add("char.w", cfg.char_hidden, window, ParamKind::Weight),
                b: store.add("char.b", cfg.char_hidden, 1, ParamKind::Bias),
                att_word: store.add(
                    "char_att.word",
                    cfg.char_hidden,
                    cfg.word_dim,
                    ParamKind::Weight,
                ),
                att_char: store.add(
                    "char_att.char",
                    cfg.char_hidden,
                    cfg.char_hidden,
                    ParamKind::Weight,
                ),
                att_b: store.add("char_att.b", cfg.char_hidden, 1, ParamKind::Bias),
                att_v: store.add("char_att.v", 1, cfg.char_hidden, ParamKind::Weight),
            }
        });
        let x = cfg.input_dim();
        let pads = (cfg.win > 0).then(|| {
            (
                store.add("pad.left", x, 1, ParamKind::Embedding),
                store.add("pad.right", x, 1, ParamKind::Embedding),
            )
        });
        let mut input = (2 * cfg.win + 1) * x;
        let mut encoder = Vec::new();
        for layer in 0..cfg.layers {
            encoder.push([
                Lstm::register(store, &format!("enc{layer}.fw"), input, cfg.hidden),
                Lstm::register(store, &format!("enc{layer}.bw"), input, cfg.hidden),
            ]);
            input = 2 * cfg.hidden;
        }
        let h2 = 2 * cfg.hidden;
        Net {
            word_emb,
            chars,
            pads,
            encoder,
            decoder: Lstm::register(store, "dec", 2 * h2, cfg.hidden),
            att_key: store.add("att.key", cfg.attention_dim, h2, ParamKind::Weight),
            att_query: store.add(
                "att.query",
                cfg.attention_dim,
                cfg.hidden,
                ParamKind::Weight,
            ),
            att_b: store.add("att.b", cfg.attention_dim, 1, ParamKind::Bias),
            att_v: store.add("att.v", 1, cfg.attention_dim, ParamKind::Weight),
            out: store.add("out", labels, cfg.hidden, ParamKind::Weight),
        }
    }
}

/// A sentence mapped to vocabulary ids.
#[derive(Debug, Clone)]
struct Encoded {
    words: Vec<usize>,
    chars: Vec<Vec<usize>>,
}

/// Per-word attention weights from a forward pass.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub char_alpha: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
    /// `[word][step]` attention over encoder states.
    pub beta: Vec<Vec<Vec<f64>>>,
}

/// One of the two type-specific networks.
#[derive(Debug, Clone, PartialEq)]
pub struct RoleModel {
    pub htype: HierarchyType,
    pub labels: IndexSet<String>,
    pub params: ParamStore,
    net: Net,
}

impl RoleModel {
    fn new(
        htype: HierarchyType,
        labels: IndexSet<String>,
        cfg: &PredictorConfig,
        vocab: &Vocab,
    ) -> RoleModel {
        let mut params = ParamStore::new();
        let net = Net::register(&mut params, cfg, vocab, labels.len());
        RoleModel {
            htype,
            labels,
            params,
            net,
        }
    }

    fn word_input(
        &self,
        g: &mut Graph,
        cfg: &PredictorConfig,
        word: usize,
        chars: &[usize],
        trace: Option<&mut Trace>,
    ) -> Result<Var> {
        let xw = g.lookup(self.net.word_emb, word)?;
        let Some(cn) = self.net.chars else {
            if let Some(t) = trace {
                t.inputs.push(g.value(xw).to_vec());
            }
            return Ok(xw);
        };
        let cb = g.param(cn.b)?;
        let ab = g.param(cn.att_b)?;
        let wq = g.matvec(cn.att_word, xw)?;
        let w = cfg.char_win as isize;
        let mut composed = Vec::with_capacity(chars.len());
        let mut scores = Vec::with_capacity(chars.len());
        for j in 0..chars.len() as isize {
            let mut window = Vec::with_capacity(2 * cfg.char_win + 1);
            for d in -w..=w {
                let k = j + d;
                let id = if k < 0 || k >= chars.len() as isize {
                    1
                } else {
                    chars[k as usize]
                };
                window.push(g.lookup(cn.emb, id)?);
            }
            let window = g.concat(&window)?;
            let pre = g.matvec(cn.w, window)?;
            let pre = g.add(&[pre, cb])?;
            let cj = g.tanh(pre)?;
            let kc = g.matvec(cn.att_char, cj)?;
            let a = g.add(&[wq, kc, ab])?;
            let a = g.tanh(a)?;
            scores.push(g.matvec(cn.att_v, a)?);
            composed.push(cj);
        }
        let scores = g.concat(&scores)?;
        let alpha = g.softmax(scores)?;
        let catt = g.weighted_sum(alpha, &composed)?;
        let x = g.concat(&[xw, catt])?;
        if let Some(t) = trace {
            t.char_alpha.push(g.value(alpha).to_vec());
            t.inputs.push(g.value(x).to_vec());
        }
        Ok(x)
    }

    fn encode(
        &self,
        g: &mut Graph,
        cfg: &PredictorConfig,
        sent: &Encoded,
        mut trace: Option<&mut Trace>,
    ) -> Result<Vec<Var>> {
        let mut xs = Vec::with_capacity(sent.words.len());
        for (w, cs) in sent.words.iter().zip(&sent.chars) {
            xs.push(self.word_input(g, cfg, *w, cs, trace.as_deref_mut())?);
        }
        let mut layer_in = match self.net.pads {
            None => xs,
            Some((l, r)) => {
                let (lp, rp) = (g.param(l)?, g.param(r)?);
                let n = xs.len() as isize;
                let w = cfg.win as isize;
                let mut windowed = Vec::with_capacity(xs.len());
                for i in 0..n {
                    let parts: Vec<Var> = (i - w..=i + w)
                        .map(|k| match k {
                            k if k < 0 => lp,
                            k if k >= n => rp,
                            k => xs[k as usize],
                        })
                        .collect();
                    windowed.push(g.concat(&parts)?);
                }
                windowed
            }
        };
        for [fw, bw] in &self.net.encoder {
            let f = LstmVars::new(g, *fw)?.run(g, &layer_in, false)?;
            let b = LstmVars::new(g, *bw)?.run(g, &layer_in, true)?;
            layer_in = f
                .into_iter()
                .zip(b)
                .map(|(f, b)| g.concat(&[f, b]))
                .collect::<std::result::Result<_, _>>()?;
        }
        if let Some(t) = trace {
            t.hidden = layer_in.iter().map(|h| g.value(*h).to_vec()).collect();
        }
        Ok(layer_in)
    }

    /// Runs the decoder for word `i`. With `targets` the step count is fixed
    /// and the summed cross-entropy is returned; without, decoding is greedy
    /// until NULL or `max_depth` labels.
    fn decode_word(
        &self,
        g: &mut Graph,
        cfg: &PredictorConfig,
        ctx: &DecoderContext,
        i: usize,
        targets: Option<&[usize]>,
        mut beta_trace: Option<&mut Vec<Vec<f64>>>,
    ) -> Result<DecodeOutcome> {
        let mut state: Option<(Var, Var)> = None;
        let mut losses = Vec::new();
        let mut labels = Vec::new();
        let mut capped = false;
        let steps = targets.map_or(cfg.max_depth + 1, <[usize]>::len);
        for j in 0..steps {
            let mut scores = Vec::with_capacity(ctx.hs.len());
            let q = match state {
                Some((s, _)) => Some(g.matvec(self.net.att_query, s)?),
                None => None,
            };
            for &key in &ctx.keys {
                let a = match q {
                    Some(q) => g.add(&[q, key, ctx.att_b])?,
                    None => g.add(&[key, ctx.att_b])?,
                };
                let a = g.tanh(a)?;
                scores.push(g.matvec(self.net.att_v, a)?);
            }
            let scores = g.concat(&scores)?;
            let beta = g.softmax(scores)?;
            if let Some(t) = beta_trace.as_deref_mut() {
                t.push(g.value(beta).to_vec());
            }
            let c = g.weighted_sum(beta, &ctx.hs)?;
            let input = g.concat(&[c, ctx.hs[i]])?;
            let xp = g.matvec(self.net.decoder.wx, input)?;
            let next = ctx.decoder.step(g, xp, state)?;
            state = Some(next);
            let logits = g.matvec(self.net.out, next.0)?;
            match targets {
                Some(t) => losses.push(g.softmax_xent(logits, t[j])?),
                None => {
                    let best = argmax(g.value(logits));
                    if best == 0 {
                        break;
                    }
                    if labels.len() == cfg.max_depth {
                        capped = true;
                        break;
                    }
                    labels.push(best);
                }
            }
        }
        Ok(DecodeOutcome {
            losses,
            labels,
            capped,
        })
    }

    fn context(&self, g: &mut Graph, hs: Vec<Var>) -> Result<DecoderContext> {
        let keys = hs
            .iter()
            .map(|h| g.matvec(self.net.att_key, *h))
            .collect::<std::result::Result<_, _>>()?;
        Ok(DecoderContext {
            keys,
            hs,
            att_b: g.param(self.net.att_b)?,
            decoder: LstmVars::new(g, self.net.decoder)?,
        })
    }

    /// Gold label ids bottom-up followed by NULL.
    fn targets(&self, h: &ConstituentHierarchy, max_depth: usize) -> Result<Vec<usize>> {
        let mut t = Vec::with_capacity(h.labels.len() + 1);
        for l in h.labels.iter().rev().take(max_depth) {
            let id = self.labels.get_index_of(l.as_str()).ok_or_else(|| {
                PredictorError::Usage(format!(
                    "label {l} not in the {} label set",
                    self.htype.tag()
                ))
            })?;
            t.push(id);
        }
        t.push(0);
        Ok(t)
    }

    /// Summed cross-entropy of the gold hierarchies under teacher forcing.
    fn loss<'g>(
        &self,
        g: &mut Graph<'g>,
        cfg: &PredictorConfig,
        sent: &Encoded,
        gold: &[WordHierarchies],
    ) -> Result<Var> {
        let hs = self.encode(g, cfg, sent, None)?;
        let ctx = self.context(g, hs)?;
        let mut all = Vec::new();
        for (i, wh) in gold.iter().enumerate() {
            let targets = self.targets(wh.get(self.htype), cfg.max_depth)?;
            all.extend(
                self.decode_word(g, cfg, &ctx, i, Some(&targets), None)?
                    .losses,
            );
        }
        Ok(g.add(&all)?)
    }

    fn predict(
        &self,
        cfg: &PredictorConfig,
        sent: &Encoded,
        trace: Option<&mut Trace>,
    ) -> Result<(Vec<ConstituentHierarchy>, usize)> {
        let mut g = Graph::new(&self.params);
        let mut trace = trace;
        let hs = self.encode(&mut g, cfg, sent, trace.as_deref_mut())?;
        let ctx = self.context(&mut g, hs)?;
        let mut out = Vec::with_capacity(sent.words.len());
        let mut capped = 0;
        for i in 0..sent.words.len() {
            let beta = trace.as_deref_mut().map(|t| {
                t.beta.push(Vec::new());
                t.beta.last_mut().expect("just pushed")
            });
            let d = self.decode_word(&mut g, cfg, &ctx, i, None, beta)?;
            capped += usize::from(d.capped);
            let labels = d
                .labels
                .iter()
                .rev()
                .map(|&l| self.labels.get_index(l).expect("label id in range").clone())
                .collect();
            out.push(ConstituentHierarchy::new(self.htype, labels));
        }
        Ok((out, capped))
    }
}

struct DecoderContext {
    hs: Vec<Var>,
    keys: Vec<Var>,
    att_b: Var,
    decoder: LstmVars,
}

struct DecodeOutcome {
    losses: Vec<Var>,
    labels: Vec<usize>,
    capped: bool,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Hierarchy predictions for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub hierarchies: Vec<WordHierarchies>,
    /// Words whose decoding stopped at `max_depth` without emitting NULL.
    pub depth_cap_hits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub config: PredictorConfig,
    pub vocab: Vocab,
    pub start: RoleModel,
    pub end: RoleModel,
}

fn label_set<'a>(data: impl Iterator<Item = &'a ConstituentHierarchy>) -> IndexSet<String> {
    let mut seen: Vec<String> = data.flat_map(|h| h.labels.iter().cloned()).collect();
    seen.sort();
    seen.dedup();
    let mut labels = IndexSet::new();
    labels.insert(NULL_VALUE.to_string());
    labels.extend(seen.into_iter().filter(|l| l != NULL_VALUE));
    labels
}

impl Predictor {
    /// Fresh model with vocabularies and label sets from `data`, parameters
    /// initialized from the configured seed.
    pub fn new(config: PredictorConfig, data: &[AnnotatedSentence]) -> Result<Predictor> {
        config.validate()?;
        if data.is_empty() {
            return Err(PredictorError::Usage("no training sentences".into()));
        }
        let vocab = Vocab::build(data.iter().map(|s| s.words.as_slice()));
        let all = || data.iter().flat_map(|s| s.hierarchies.iter());
        let mut start = RoleModel::new(
            HierarchyType::Start,
            label_set(all().map(|h| &h.start)),
            &config,
            &vocab,
        );
        let mut end = RoleModel::new(
            HierarchyType::End,
            label_set(all().map(|h| &h.end)),
            &config,
            &vocab,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        start.params.initialize(&mut rng);
        rng.set_stream(2);
        end.params.initialize(&mut rng);
        Ok(Predictor {
            config,
            vocab,
            start,
            end,
        })
    }

    pub fn role(&self, htype: HierarchyType) -> &RoleModel {
        match htype {
            HierarchyType::Start => &self.start,
            HierarchyType::End => &self.end,
        }
    }

    fn encode_words(&self, words: &[String], unk: Option<&mut ChaCha8Rng>) -> Encoded {
        let mut ids: Vec<usize> = words.iter().map(|w| self.vocab.word_id(w)).collect();
        if let Some(rng) = unk {
            for (id, w) in ids.iter_mut().zip(words) {
                if self.vocab.word_count(w) <= self.config.unk_cutoff
                    && rng.gen_bool(self.config.unk_prob)
                {
                    *id = 0;
                }
            }
        }
        Encoded {
            words: ids,
            chars: words.iter().map(|w| self.vocab.char_ids(w)).collect(),
        }
    }

    pub fn predict(&self, words: &[String]) -> Result<Prediction> {
        Ok(self.predict_traced(words, false)?.0)
    }

    /// Prediction plus per-role attention traces (start, end) when `trace`.
    pub fn predict_traced(
        &self,
        words: &[String],
        trace: bool,
    ) -> Result<(Prediction, Option<(Trace, Trace)>)> {
        if words.is_empty() {
            return Ok((
                Prediction {
                    hierarchies: Vec::new(),
                    depth_cap_hits: 0,
                },
                None,
            ));
        }
        let enc = self.encode_words(words, None);
        let mut ts = trace.then(|| (Trace::default(), Trace::default()));
        let (s, cs) = self
            .start
            .predict(&self.config, &enc, ts.as_mut().map(|t| &mut t.0))?;
        let (e, ce) = self
            .end
            .predict(&self.config, &enc, ts.as_mut().map(|t| &mut t.1))?;
        let hierarchies = s
            .into_iter()
            .zip(e)
            .map(|(start, end)| WordHierarchies { start, end })
            .collect();
        Ok((
            Prediction {
                hierarchies,
                depth_cap_hits: cs + ce,
            },
            ts,
        ))
    }

    /// Sentence-parallel prediction; output order follows input order.
    pub fn predict_all(&self, sentences: &[Vec<String>]) -> Result<Vec<Prediction>> {
        sentences.par_iter().map(|s| self.predict(s)).collect()
    }

    /// Teacher-forced loss of one role on one sentence with its gradient
    /// added to `grads`.
    fn role_loss_grad(
        &self,
        htype: HierarchyType,
        sent: &Encoded,
        gold: &[WordHierarchies],
        grads: &mut Grads,
    ) -> Result<f64> {
        let role = self.role(htype);
        let mut g = Graph::new(&role.params);
        let loss = role.loss(&mut g, &self.config, sent, gold)?;
        g.backward(loss, grads)?;
        Ok(g.value(loss)[0])
    }

    fn role_loss(
        &self,
        htype: HierarchyType,
        sent: &Encoded,
        gold: &[WordHierarchies],
    ) -> Result<f64> {
        let role = self.role(htype);
        let mut g = Graph::new(&role.params);
        let loss = role.loss(&mut g, &self.config, sent, gold)?;
        Ok(g.value(loss)[0])
    }

    /// Summed teacher-forced cross-entropy of both roles (no regularizer).
    pub fn loss(&self, sentence: &AnnotatedSentence) -> Result<f64> {
        let enc = self.encode_words(&sentence.words, None);
        Ok(
            self.role_loss(HierarchyType::Start, &enc, &sentence.hierarchies)?
                + self.role_loss(HierarchyType::End, &enc, &sentence.hierarchies)?,
        )
    }

    /// Per-step teacher-forced distributions of one role.
    pub fn step_distributions(
        &self,
        htype: HierarchyType,
        sentence: &AnnotatedSentence,
    ) -> Result<Vec<Vec<f64>>> {
        let enc = self.encode_words(&sentence.words, None);
        let role = self.role(htype);
        let mut g = Graph::new(&role.params);
        let hs = role.encode(&mut g, &self.config, &enc, None)?;
        let ctx = role.context(&mut g, hs)?;
        let mut out = Vec::new();
        for (i, wh) in sentence.hierarchies.iter().enumerate() {
            let targets = role.targets(wh.get(htype), self.config.max_depth)?;
            let d = role.decode_word(&mut g, &self.config, &ctx, i, Some(&targets), None)?;
            out.extend(
                d.losses
                    .iter()
                    .map(|l| g.probs(*l).expect("loss node").to_vec()),
            );
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_str(&mut out, &self.config.to_text());
        put_u32(&mut out, self.vocab.words.len() as u32);
        for (w, c) in &self.vocab.words {
            put_str(&mut out, w);
            put_u64(&mut out, *c as u64);
        }
        put_u32(&mut out, self.vocab.chars.len() as u32);
        for c in &self.vocab.chars {
            put_str(&mut out, c);
        }
        for role in [&self.start, &self.end] {
            out.push(role.htype.tag() as u8);
            put_u32(&mut out, role.labels.len() as u32);
            for l in &role.labels {
                put_str(&mut out, l);
            }
            put_u32(&mut out, role.params.len() as u32);
            for p in role.params.iter() {
                put_str(&mut out, &p.name);
                put_u32(&mut out, p.rows as u32);
                put_u32(&mut out, p.cols as u32);
                out.push(p.kind.tag());
                for v in &p.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Predictor> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(PredictorError::Format(
                "not a predictor model (bad magic)".into(),
            ));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(PredictorError::Version { found: version });
        }
        let config = PredictorConfig::from_text(&r.string()?)?;
        let nw = r.count(12)?;
        let mut words = IndexMap::with_capacity(nw);
        for _ in 0..nw {
            let w = r.string()?;
            let c = r.u64()? as usize;
            if words.insert(w, c).is_some() {
                return Err(PredictorError::Format(
                    "duplicate word in vocabulary".into(),
                ));
            }
        }
        let nc = r.count(4)?;
        let mut chars = IndexSet::with_capacity(nc);
        for _ in 0..nc {
            if !chars.insert(r.string()?) {
                return Err(PredictorError::Format(
                    "duplicate character in vocabulary".into(),
                ));
            }
        }
        if words.get_index_of(UNK) != Some(0)
            || chars.get_index_of(UNK) != Some(0)
            || chars.get_index_of(PAD) != Some(1)
        {
            return Err(PredictorError::Format(
                "vocabulary lacks reserved entries".into(),
            ));
        }
        let vocab = Vocab { words, chars };
        let start = read_role(&mut r, HierarchyType::Start, &config, &vocab)?;
        let end = read_role(&mut r, HierarchyType::End, &config, &vocab)?;
        if r.pos != bytes.len() {
            return Err(PredictorError::Format("trailing bytes".into()));
        }
        Ok(Predictor {
            config,
            vocab,
            start,
            end,
        })
    }

    /// SHA-256 of the serialized model, hex encoded.
    pub fn hash(&self) -> String {
        hash_bytes(&self.to_bytes())
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn read_role(
    r: &mut Reader,
    htype: HierarchyType,
    cfg: &PredictorConfig,
    vocab: &Vocab,
) -> Result<RoleModel> {
    let tag = r.take(1)?[0];
    if tag != htype.tag() as u8 {
        return Err(PredictorError::Format(format!(
            "expected {} model, found tag {tag}",
            htype.tag()
        )));
    }
    let nl = r.count(4)?;
    let mut labels = IndexSet::with_capacity(nl);
    for _ in 0..nl {
        labels.insert(r.string()?);
    }
    if labels.get_index_of(NULL_VALUE) != Some(0) || labels.len() != nl {
        return Err(PredictorError::Format(
            "label set must start with NULL and be unique".into(),
        ));
    }
    let mut role = RoleModel::new(htype, labels, cfg, vocab);
    let np = r.count(9)?;
    if np != role.params.len() {
        return Err(PredictorError::Format(format!(
            "{np} parameters, architecture needs {}",
            role.params.len()
        )));
    }
    for i in 0..np {
        let name = r.string()?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let kind = ParamKind::from_tag(r.take(1)?[0])
            .ok_or_else(|| PredictorError::Format("bad parameter kind".into()))?;
        let p: &mut Param = role.params.get_mut(ParamId(i));
        if p.name != name || p.rows != rows || p.cols != cols || p.kind != kind {
            return Err(PredictorError::Format(format!(
                "parameter {name} {rows}x{cols} does not match {} {}x{}",
                p.name, p.rows, p.cols
            )));
        }
        let raw = r.take(rows * cols * 8)?;
        for (v, chunk) in p.data.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            if !v.is_finite() {
                return Err(PredictorError::Format(format!(
                    "non-finite value in {name}"
                )));
            }
        }
    }
    Ok(role)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| PredictorError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    /// Element count, rejected if the remaining input cannot hold that many
    /// elements of at least `min_size` bytes.
    fn count(&mut self, min_size: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_size) > self.bytes.len() - self.pos {
            return Err(PredictorError::Format(format!(
                "count {n} exceeds remaining input"
            )));
        }
        Ok(n)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| PredictorError::Format("invalid UTF-8".into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Summed cross-entropy over both roles and all training sentences.
    pub loss: f64,
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Micro-averaged hierarchy F1 over both types.
pub fn hierarchy_f1(pred: &[Vec<WordHierarchies>], gold: &[Vec<WordHierarchies>]) -> f64 {
    let mut c = corpus_counts(pred, gold, HierarchyType::Start);
    c += corpus_counts(pred, gold, HierarchyType::End);
    c.f1()
}

/// Fraction of words whose predicted s-type and e-type hierarchies both
/// equal the gold ones.
pub fn exact_match(pred: &[Vec<WordHierarchies>], gold: &[Vec<WordHierarchies>]) -> f64 {
    let mut total = 0usize;
    let mut good = 0usize;
    for (p, g) in pred.iter().zip(gold) {
        for (p, g) in p.iter().zip(g) {
            total += 1;
            good += usize::from(p == g);
        }
    }
    if total == 0 {
        1.0
    } else {
        good as f64 / total as f64
    }
}

fn sgd_role(role: &mut RoleModel, grads: &mut Grads, velocity: &mut Grads, cfg: &PredictorConfig) {
    if cfg.clip > 0.0 {
        let n = grads.norm();
        if n > cfg.clip {
            grads.scale(cfg.clip / n);
        }
    }
    sgd_momentum_step(
        &mut role.params,
        grads,
        velocity,
        cfg.eta,
        cfg.mu,
        cfg.lambda,
    );
}

/// Callback invoked after each epoch; returning `true` stops training.
pub type EpochHook<'a> = dyn FnMut(&Predictor, &EpochLog) -> bool + 'a;

/// Trains both type models with per-sentence momentum SGD. When `dev` is
/// given, the parameters of the epoch with the best dev hierarchy F1 are
/// returned; otherwise those of the last epoch.
pub fn train_predictor(
    train: &[AnnotatedSentence],
    dev: Option<&[AnnotatedSentence]>,
    config: &PredictorConfig,
    mut hook: Option<&mut EpochHook<'_>>,
) -> Result<(Predictor, TrainReport)> {
    let mut model = Predictor::new(config.clone(), train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(3);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grads = [
        model.start.params.zeros_like(),
        model.end.params.zeros_like(),
    ];
    let mut velocity = grads.clone();
    let mut report = TrainReport::default();
    let mut best: Option<(f64, Predictor)> = None;
    let dev_gold: Option<Vec<Vec<WordHierarchies>>> =
        dev.map(|d| d.iter().map(|s| s.hierarchies.clone()).collect());
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let sent = &train[i];
            if sent.words.is_empty() {
                continue;
            }
            let enc = model.encode_words(&sent.words, Some(&mut rng));
            let [gs, ge] = &mut grads;
            gs.clear();
            ge.clear();
            let (ls, le) = rayon::join(
                || model.role_loss_grad(HierarchyType::Start, &enc, &sent.hierarchies, gs),
                || model.role_loss_grad(HierarchyType::End, &enc, &sent.hierarchies, ge),
            );
            total += ls? + le?;
            let [vs, ve] = &mut velocity;
            sgd_role(&mut model.start, gs, vs, config);
            sgd_role(&mut model.end, ge, ve, config);
        }
        let dev_f1 = match (dev, &dev_gold) {
            (Some(d), Some(gold)) => {
                let words: Vec<Vec<String>> = d.iter().map(|s| s.words.clone()).collect();
                let pred: Vec<Vec<WordHierarchies>> = model
                    .predict_all(&words)?
                    .into_iter()
                    .map(|p| p.hierarchies)
                    .collect();
                Some(hierarchy_f1(&pred, gold))
            }
            _ => None,
        };
        let log_entry = EpochLog {
            epoch,
            loss: total,
            dev_f1,
        };
        log::info!(
            "predictor epoch {epoch}: loss {total:.4}, dev F1 {}",
            dev_f1.map_or("-".into(), |f| format!("{f:.4}"))
        );
        if let Some(f) = dev_f1 {
            if best.as_ref().is_none_or(|(b, _)| f > *b) {
                best = Some((f, model.clone()));
                report.best_epoch = epoch;
            }
        } else {
            report.best_epoch = epoch;
        }
        report.epochs.push(log_entry.clone());
        if let Some(h) = hook.as_deref_mut() {
            if h(&model, &log_entry) {
                break;
            }
        }
    }
    Ok((best.map_or(model, |(_, m)| m), report))
}

/// Predicts every sentence with a model trained on the other folds; fold of
/// sentence `i` is `i % folds`. Folds train in parallel.
pub fn jackknife(
    data: &[AnnotatedSentence],
    folds: usize,
    config: &PredictorConfig,
) -> Result<Vec<Prediction>> {
    if folds < 2 {
        return Err(PredictorError::Usage(
            "jackknifing needs at least 2 folds".into(),
        ));
    }
    if data.len() < folds {
        return Err(PredictorError::Usage(format!(
            "{} sentences cannot be split into {folds} folds",
            data.len()
        )));
    }
    let per_fold: Vec<Vec<(usize, Prediction)>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<AnnotatedSentence> = data
                .iter()
                .enumerate()
                .filter(|(i, _)| i % folds != f)
                .map(|(_, s)| s.clone())
                .collect();
            let (model, _) = train_predictor(&train, None, config, None)?;
            log::info!("jackknife fold {f} trained on {} sentences", train.len());
            data.iter()
                .enumerate()
                .filter(|(i, _)| i % folds == f)
                .map(|(i, s)| Ok((i, model.predict(&s.words)?)))
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<Option<Prediction>> = vec![None; data.len()];
    for (i, p) in per_fold.into_iter().flatten() {
        out[i] = Some(p);
    }
    Ok(out
        .into_iter()
        .map(|p| p.expect("folds partition the data"))
        .collect())
}

/// Result of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

/// `|a - n| / max(|a|, |n|, 1e-4)`; the floor keeps round-off on
/// near-zero gradients from dominating.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Checks every scalar of every parameter of both type models on one
/// sentence using central differences with step `h`.
pub fn gradient_check(
    model: &Predictor,
    sentence: &AnnotatedSentence,
    h: f64,
) -> Result<GradCheck> {
    let enc = model.encode_words(&sentence.words, None);
    let mut report = GradCheck {
        checked: 0,
        max_rel_error: 0.0,
        worst: String::new(),
    };
    for htype in [HierarchyType::Start, HierarchyType::End] {
        let mut grads = model.role(htype).params.zeros_like();
        model.role_loss_grad(htype, &enc, &sentence.hierarchies, &mut grads)?;
        let mut probe = model.clone();
        let n = model.role(htype).params.len();
        for pi in 0..n {
            let len = model.role(htype).params.get(ParamId(pi)).data.len();
            for k in 0..len {
                let orig = model.role(htype).params.get(ParamId(pi)).data[k];
                let mut at = |x: f64| -> Result<f64> {
                    role_mut(&mut probe, htype).params.get_mut(ParamId(pi)).data[k] = x;
                    probe.role_loss(htype, &enc, &sentence.hierarchies)
                };
                let numeric = (at(orig + h)? - at(orig - h)?) / (2.0 * h);
                at(orig)?;
                let rel = relative_error(grads.data[pi][k], numeric);
                report.checked += 1;
                if rel > report.max_rel_error {
                    report.max_rel_error = rel;
                    report.worst = format!(
                        "{}:{}[{k}] analytic {} numeric {numeric}",
                        htype.tag(),
                        model.role(htype).params.get(ParamId(pi)).name,
                        grads.data[pi][k]
                    );
                }
            }
        }
    }
    Ok(report)
}

fn role_mut(p: &mut Predictor, htype: HierarchyType) -> &mut RoleModel {
    match htype {
        HierarchyType::Start => &mut p.start,
        HierarchyType::End => &mut p.end,
    }
}

/// Parameter count per role, for logging.
pub fn parameter_summary(model: &Predictor) -> HashMap<char, usize> {
    [&model.start, &model.end]
        .iter()
        .map(|r| (r.htype.tag(), r.params.num_values()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use conparse_core::hierarchy::extract_hierarchies;
    use conparse_core::treebank::read_ptb;

    fn annotate(ptb: &str) -> Vec<AnnotatedSentence> {
        read_ptb(ptb)
            .unwrap()
            .iter()
            .map(|t| AnnotatedSentence {
                words: t.words(),
                hierarchies: extract_hierarchies(t),
            })
            .collect()
    }

    fn tiny() -> PredictorConfig {
        PredictorConfig {
            word_dim: 4,
            char_dim: 3,
            char_hidden: 4,
            hidden: 4,
            attention_dim: 3,
            win: 1,
            char_win: 1,
            ..Default::default()
        }
    }

    fn toy() -> Vec<AnnotatedSentence> {
        annotate("(S (NP (PRP They)) (VP (VBP like) (NP (NNS apples))))\n(S (NP (DT the) (NN cat)) (VP (VBD sat)))")
    }

    #[test]
    fn input_dim_matches_table_sizes() {
        let p = Predictor::new(PredictorConfig::default(), &toy()).unwrap();
        let (_, t) = p.predict_traced(&toy()[0].words, true).unwrap();
        let (ts, _) = t.unwrap();
        assert!(ts.inputs.iter().all(|x| x.len() == 110));
        assert!(ts.hidden.iter().all(|h| h.len() == 200));
    }

    #[test]
    fn one_character_word_has_full_attention() {
        let data = annotate("(S (NP (DT a) (NN b)) (VP (VB c)))");
        let p = Predictor::new(tiny(), &data).unwrap();
        let (_, t) = p.predict_traced(&data[0].words, true).unwrap();
        let (ts, _) = t.unwrap();
        for a in ts.char_alpha {
            assert_eq!(a, vec![1.0]);
        }
    }

    #[test]
    fn identical_words_identical_inputs() {
        let data = annotate("(S (NP (DT the) (NN dog)) (VP (VBD saw) (NP (DT the) (NN dog))))");
        let p = Predictor::new(tiny(), &data).unwrap();
        let (_, t) = p.predict_traced(&data[0].words, true).unwrap();
        let (ts, _) = t.unwrap();
        assert_eq!(ts.inputs[0], ts.inputs[3]);
        assert_eq!(ts.inputs[1], ts.inputs[4]);
    }

    #[test]
    fn attention_weights_sum_to_one() {
        let p = Predictor::new(tiny(), &toy()).unwrap();
        let (_, t) = p.predict_traced(&toy()[0].words, true).unwrap();
        let (ts, te) = t.unwrap();
        for b in ts.beta.iter().chain(&te.beta).flatten() {
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_parameters_give_zero_hidden_states() {
        let mut p = Predictor::new(tiny(), &toy()).unwrap();
        for param in p.start.params.iter_mut() {
            param.data.fill(0.0);
        }
        let (_, t) = p.predict_traced(&toy()[0].words, true).unwrap();
        let (ts, _) = t.unwrap();
        assert!(ts.hidden.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn single_word_sentence() {
        let data = annotate("(NP (NN word))");
        let p = Predictor::new(tiny(), &data).unwrap();
        let out = p.predict(&data[0].words).unwrap();
        assert_eq!(out.hierarchies.len(), 1);
    }

    #[test]
    fn reversal_swaps_directions() {
        let cfg = PredictorConfig {
            win: 0,
            layers: 1,
            use_chars: false,
            ..tiny()
        };
        let data = toy();
        let mut p = Predictor::new(cfg, &data).unwrap();
        let names = ["wx", "wh", "peep_i", "peep_o", "b"];
        for n in names {
            let fw = p.start.params.find(&format!("enc0.fw.{n}")).unwrap();
            let bw = p.start.params.find(&format!("enc0.bw.{n}")).unwrap();
            let d = p.start.params.get(fw).data.clone();
            p.start.params.get_mut(bw).data = d;
        }
        let words = &data[0].words;
        let rev: Vec<String> = words.iter().rev().cloned().collect();
        let (_, a) = p.predict_traced(words, true).unwrap();
        let (_, b) = p.predict_traced(&rev, true).unwrap();
        let (ha, hb) = (a.unwrap().0.hidden, b.unwrap().0.hidden);
        let n = words.len();
        let h = 4;
        for i in 0..n {
            assert_eq!(ha[i][..h], hb[n - 1 - i][h..]);
            assert_eq!(ha[i][h..], hb[n - 1 - i][..h]);
        }
    }

    #[test]
    fn distributions_are_normalized() {
        let p = Predictor::new(tiny(), &toy()).unwrap();
        for d in p.step_distributions(HierarchyType::End, &toy()[0]).unwrap() {
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn initial_loss_near_uniform() {
        let data = toy();
        let p = Predictor::new(tiny(), &data).unwrap();
        let mut expected = 0.0;
        for s in &data {
            for wh in &s.hierarchies {
                expected += (wh.start.depth() + 1) as f64 * (p.start.labels.len() as f64).ln();
                expected += (wh.end.depth() + 1) as f64 * (p.end.labels.len() as f64).ln();
            }
        }
        let actual: f64 = data.iter().map(|s| p.loss(s).unwrap()).sum();
        assert!(
            (actual - expected).abs() / expected < 0.05,
            "{actual} vs {expected}"
        );
    }

    #[test]
    fn full_graph_gradient_check() {
        let data = annotate("(S (NP (PRP We)) (VP (VBP see) (NP (NNS it))))");
        let mut p = Predictor::new(tiny(), &data).unwrap();
        // push values away from zero so every path carries gradient
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for role in [&mut p.start, &mut p.end] {
            for param in role.params.iter_mut() {
                param
                    .data
                    .iter_mut()
                    .for_each(|v| *v = rng.gen_range(-0.5..0.5));
            }
        }
        let r = gradient_check(&p, &data[0], 1e-5).unwrap();
        assert!(r.checked > 500);
        assert!(r.max_rel_error < 1e-4, "{}", r.worst);
    }

    #[test]
    fn single_sentence_loss_goes_to_zero() {
        let data = annotate("(S (NP (PRP They)) (VP (VBP like) (NP (NNS apples))))");
        let cfg = PredictorConfig {
            epochs: 200,
            lambda: 0.0,
            eta: 0.05,
            unk_prob: 0.0,
            hidden: 16,
            attention_dim: 8,
            word_dim: 8,
            ..tiny()
        };
        let (p, report) = train_predictor(&data, None, &cfg, None).unwrap();
        let first = report.epochs[0].loss;
        let last = report.epochs.last().unwrap().loss;
        assert!(last < 0.05 * first, "{first} -> {last}");
        assert!(p.loss(&data[0]).unwrap() < 0.1);
        assert_eq!(
            p.predict(&data[0].words).unwrap().hierarchies,
            data[0].hierarchies
        );
    }

    #[test]
    fn model_file_round_trip() {
        let p = Predictor::new(tiny(), &toy()).unwrap();
        let bytes = p.to_bytes();
        let q = Predictor::from_bytes(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.hash(), q.hash());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            Predictor::from_bytes(&bad),
            Err(PredictorError::Version { found: 9 })
        ));
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(Predictor::from_bytes(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn config_round_trip_and_validation() {
        let c = tiny();
        assert_eq!(PredictorConfig::from_text(&c.to_text()).unwrap(), c);
        let mut bad = c.clone();
        bad.layers = 4;
        assert!(bad.validate().is_err());
        assert!(PredictorConfig::from_text("bogus=1").is_err());
        assert!(PredictorConfig::from_text("hidden=-3").is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = PredictorConfig {
            epochs: 3,
            ..tiny()
        };
        let (a, _) = train_predictor(&toy(), None, &cfg, None).unwrap();
        let (b, _) = train_predictor(&toy(), None, &cfg, None).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn jackknife_covers_every_sentence_once() {
        let data = annotate(
            "(S (NP (PRP They)) (VP (VBP like) (NP (NNS apples))))\n(S (NP (DT the) (NN cat)) (VP (VBD sat)))\n(S (NP (PRP we)) (VP (VBD ran)))",
        );
        let cfg = PredictorConfig {
            epochs: 2,
            ..tiny()
        };
        let preds = jackknife(&data, 2, &cfg).unwrap();
        assert_eq!(preds.len(), 3);
        for (p, s) in preds.iter().zip(&data) {
            assert_eq!(p.hierarchies.len(), s.words.len());
        }
        assert!(jackknife(&data, 1, &cfg).is_err());
        assert!(jackknife(&data, 4, &cfg).is_err());
    }

    #[test]
    fn empty_treebank_is_an_error() {
        assert!(matches!(
            train_predictor(&[], None, &tiny(), None),
            Err(PredictorError::Usage(_))
        ));
    }
}
