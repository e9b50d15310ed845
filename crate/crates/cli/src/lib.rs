//! Command-line pipeline: hierarchy extraction, predictor training,
//! jackknifing, parser training, parsing, evaluation and reports.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use conparse_core::decoder::{self, parse_all, DevSet, TrainOptions};
use conparse_core::eval::breakdown;
use conparse_core::hierarchy::{
    corpus_counts, extract_hierarchies, read_hierarchy_file, write_hierarchy_file,
    AnnotatedSentence, HierarchyType, WordHierarchies,
};
use conparse_core::sentence::read_tagged;
use conparse_core::treebank::{read_ptb, write_ptb, HeadRules, Tree};
use conparse_core::{synth_treebank, LinearModel, Sentence};
use conparse_predictor::predictor::{
    hash_bytes, jackknife, train_predictor, Prediction, Predictor,
};

use config::{load_config_file, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "conparse",
    version,
    about = "Shift-reduce constituent parser with constituent-hierarchy lookahead"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Configuration file (key=value lines, `include path` allowed).
    #[arg(long, short = 'c', global = true)]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set parser.beam=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write gold s-type/e-type hierarchies of a treebank.
    ExtractHierarchies {
        treebank: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Train the hierarchy predictor (treebank or hierarchy file input).
    TrainPredictor {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        /// Per-epoch loss / dev F1 table.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Predict hierarchies for a treebank, tagged text or hierarchy file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// Stats sidecar (per-type F1 when gold is available, depth-cap hits).
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Assign hierarchies to training data with k-fold cross prediction.
    Jackknife {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train the shift-reduce parser.
    TrainParser {
        #[arg(long)]
        train: PathBuf,
        /// Predicted hierarchies for the training sentences (jackknifed).
        #[arg(long)]
        hierarchies: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        dev_hierarchies: Option<PathBuf>,
        /// Predictor model whose hash is recorded in the parser model.
        #[arg(long)]
        predictor_model: Option<PathBuf>,
        /// Baseline features only.
        #[arg(long)]
        no_lookahead: bool,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        binary: bool,
        #[arg(short, long)]
        output: PathBuf,
        /// Per-epoch statistics table.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Parse a treebank or tagged text (`word_POS` tokens, one sentence per line).
    Parse {
        #[arg(long)]
        model: PathBuf,
        input: PathBuf,
        /// Precomputed hierarchy predictions for the input.
        #[arg(long)]
        hierarchies: Option<PathBuf>,
        /// Predictor model to run on the input.
        #[arg(long)]
        predictor: Option<PathBuf>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Labelled bracket precision/recall/F1.
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Machine-readable table (one row per label / length bin).
        #[arg(long)]
        tsv: Option<PathBuf>,
    },
    /// Full report directory: text summary plus TSV tables.
    Report {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold_hierarchies: Option<PathBuf>,
        #[arg(long)]
        pred_hierarchies: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Generate a synthetic treebank.
    Synth {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(short = 'n', long, default_value_t = 100)]
        count: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn settings(global: &GlobalArgs) -> Result<Settings> {
    let mut s = Settings::default();
    if let Some(path) = &global.config {
        for (k, v) in load_config_file(path)? {
            s.set(&k, &v)?;
        }
    }
    for pair in &global.set {
        s.set_pair(pair)?;
    }
    Ok(s)
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut s = settings(&cli.global)?;
    match cli.command {
        Command::ExtractHierarchies { treebank, output } => {
            let trees = load_trees(&treebank)?;
            emit(output.as_deref(), &write_hierarchy_file(&annotate(&trees)))
        }
        Command::TrainPredictor {
            train,
            dev,
            output,
            log,
        } => {
            s.validate()?;
            let train = load_annotated(&train)?;
            let dev = dev.as_deref().map(load_annotated).transpose()?;
            let (model, report) = train_predictor(&train, dev.as_deref(), &s.predictor, None)?;
            write_bytes(&output, &model.to_bytes())?;
            if let Some(path) = log {
                let mut t = String::from("epoch\tloss\tdev_f1\n");
                for e in &report.epochs {
                    let dev = e.dev_f1.map_or("-".into(), |f| format!("{f:.6}"));
                    let _ = writeln!(t, "{}\t{:.6}\t{dev}", e.epoch, e.loss);
                }
                let _ = writeln!(t, "# best epoch {}", report.best_epoch);
                write_bytes(&path, t.as_bytes())?;
            }
            Ok(())
        }
        Command::Predict {
            model,
            input,
            output,
            workers,
            stats,
        } => {
            if let Some(w) = workers {
                s.workers = w;
            }
            let predictor = load_predictor(&model)?;
            let (words, gold) = load_words_with_gold(&input)?;
            let preds = with_workers(s.workers, || predictor.predict_all(&words))?;
            let mut text = format!("# provenance predictor {}\n", predictor.hash());
            text.push_str(&write_hierarchy_file(&to_annotated(&words, &preds)));
            emit(output.as_deref(), &text)?;
            if let Some(path) = stats {
                write_bytes(&path, stats_text(&preds, gold.as_deref()).as_bytes())?;
            }
            Ok(())
        }
        Command::Jackknife {
            train,
            folds,
            output,
        } => {
            if let Some(f) = folds {
                s.folds = f;
            }
            s.validate()?;
            let data = load_annotated(&train)?;
            let preds = jackknife(&data, s.folds, &s.predictor)?;
            let words: Vec<Vec<String>> = data.iter().map(|d| d.words.clone()).collect();
            let provenance =
                hash_bytes(format!("folds={}\n{}", s.folds, s.predictor.to_text()).as_bytes());
            let mut text = format!("# provenance jackknife {provenance}\n");
            text.push_str(&write_hierarchy_file(&to_annotated(&words, &preds)));
            write_bytes(&output, text.as_bytes())
        }
        Command::TrainParser {
            train,
            hierarchies,
            dev,
            dev_hierarchies,
            predictor_model,
            no_lookahead,
            beam,
            epochs,
            binary,
            output,
            log,
        } => {
            if no_lookahead {
                s.parser.lookahead = false;
            }
            if let Some(b) = beam {
                s.parser.beam = b;
            }
            if let Some(e) = epochs {
                s.parser.epochs = e;
            }
            if binary {
                s.parser.binary = true;
            }
            s.validate()?;
            let heads = head_rules(&s)?;
            let trees = load_trees(&train)?;
            let (preds, provenance) = match (&hierarchies, s.parser.lookahead) {
                (Some(p), true) => {
                    let (h, prov) = load_hierarchies_for(p, &tree_words(&trees))?;
                    (Some(h), prov)
                }
                (None, true) => {
                    bail!("lookahead features need --hierarchies (or pass --no-lookahead)")
                }
                (_, false) => (None, None),
            };
            let dev_trees = dev.as_deref().map(load_trees).transpose()?;
            let dev_preds = match (&dev_trees, &dev_hierarchies, s.parser.lookahead) {
                (Some(t), Some(p), true) => Some(load_hierarchies_for(p, &tree_words(t))?.0),
                (Some(_), None, true) => {
                    bail!("--dev with lookahead features needs --dev-hierarchies")
                }
                _ => None,
            };
            let opts = TrainOptions {
                epochs: s.parser.epochs,
                beam: s.parser.beam,
                seed: s.parser.seed,
                shuffle: true,
                early_update: s.parser.early_update,
                use_lookahead: s.parser.lookahead,
                eval_train: true,
                stop_at_train_f1: s.parser.stop_at_train_f1,
            };
            let dev_set = dev_trees.as_deref().map(|t| DevSet {
                trees: t,
                preds: dev_preds.as_deref(),
            });
            let (mut model, stats) = with_workers(s.workers, || {
                decoder::train(&trees, preds.as_deref(), &heads, &opts, dev_set)
            })?;
            model.predictor_hash = match predictor_model {
                Some(p) => Some(hash_bytes(&read_bytes(&p)?)),
                None => provenance,
            };
            let bytes = if s.parser.binary {
                model.to_binary()
            } else {
                model.to_text().into_bytes()
            };
            write_bytes(&output, &bytes)?;
            if let Some(path) = log {
                let mut t = String::from("epoch\tupdates\tearly_updates\ttrain_f1\tdev_f1\n");
                for e in &stats {
                    let f = |c: Option<conparse_core::eval::PrfCounts>| {
                        c.map_or("-".into(), |c| format!("{:.6}", c.f1()))
                    };
                    let _ = writeln!(
                        t,
                        "{}\t{}\t{}\t{}\t{}",
                        e.epoch,
                        e.updates,
                        e.early_updates,
                        f(e.train),
                        f(e.dev)
                    );
                }
                write_bytes(&path, t.as_bytes())?;
            }
            Ok(())
        }
        Command::Parse {
            model,
            input,
            hierarchies,
            predictor,
            beam,
            workers,
            output,
        } => {
            if let Some(b) = beam {
                s.parser.beam = b;
            }
            if let Some(w) = workers {
                s.workers = w;
            }
            s.validate()?;
            let model = LinearModel::from_bytes(&read_bytes(&model)?)
                .with_context(|| format!("loading parser model {}", model.display()))?
                .averaged();
            let sentences = load_sentences(&input)?;
            let words: Vec<Vec<String>> = sentences.iter().map(|s| s.words.clone()).collect();
            let preds = if !model.use_lookahead {
                None
            } else if let Some(p) = &hierarchies {
                Some(load_hierarchies_for(p, &words)?.0)
            } else if let Some(p) = &predictor {
                let bytes = read_bytes(p)?;
                let hash = hash_bytes(&bytes);
                if model.predictor_hash.as_deref().is_some_and(|h| h != hash) {
                    log::warn!(
                        "predictor {} differs from the one recorded in the parser model",
                        p.display()
                    );
                }
                let pred = Predictor::from_bytes(&bytes)
                    .with_context(|| format!("loading predictor {}", p.display()))?;
                let out = with_workers(s.workers, || pred.predict_all(&words))?;
                Some(out.into_iter().map(|p| p.hierarchies).collect())
            } else {
                bail!("the parser model uses lookahead features; pass --hierarchies or --predictor")
            };
            let parses = with_workers(s.workers, || {
                parse_all(&sentences, preds.as_deref(), &model, s.parser.beam)
            })?;
            let trees: Vec<Tree> = parses.into_iter().map(|p| p.tree).collect();
            emit(output.as_deref(), &write_ptb(&trees))
        }
        Command::Evaluate { gold, pred, tsv } => {
            let b = breakdown(&load_trees(&pred)?, &load_trees(&gold)?)?;
            print!("{}", b.to_text());
            if let Some(path) = tsv {
                write_bytes(&path, b.to_tsv().as_bytes())?;
            }
            Ok(())
        }
        Command::Report {
            gold,
            pred,
            gold_hierarchies,
            pred_hierarchies,
            output,
        } => {
            let b = breakdown(&load_trees(&pred)?, &load_trees(&gold)?)?;
            fs::create_dir_all(&output)
                .with_context(|| format!("creating {}", output.display()))?;
            let mut text = b.to_text();
            if let (Some(g), Some(p)) = (&gold_hierarchies, &pred_hierarchies) {
                let g = load_annotated(g)?;
                let words: Vec<Vec<String>> = g.iter().map(|s| s.words.clone()).collect();
                let (p, _) = load_hierarchies_for(p, &words)?;
                let g: Vec<Vec<WordHierarchies>> = g.into_iter().map(|s| s.hierarchies).collect();
                let mut tsv =
                    String::from("type\tmatched\tpredicted\tgold\tprecision\trecall\tf1\n");
                text.push_str("\nconstituent hierarchies\n");
                for h in [HierarchyType::Start, HierarchyType::End] {
                    let c = corpus_counts(&p, &g, h);
                    let (pr, rc, f) = c.prf();
                    let _ = writeln!(
                        text,
                        "  {}-type  P {:.2}  R {:.2}  F1 {:.2}",
                        h.tag(),
                        100.0 * pr,
                        100.0 * rc,
                        100.0 * f
                    );
                    let _ = writeln!(
                        tsv,
                        "{}\t{}\t{}\t{}\t{pr:.4}\t{rc:.4}\t{f:.4}",
                        h.tag(),
                        c.matched,
                        c.predicted,
                        c.gold
                    );
                }
                write_bytes(&output.join("hierarchies.tsv"), tsv.as_bytes())?;
            }
            write_bytes(&output.join("report.txt"), text.as_bytes())?;
            write_bytes(&output.join("brackets.tsv"), b.to_tsv().as_bytes())
        }
        Command::Synth {
            seed,
            count,
            output,
        } => {
            ensure!(count >= 1, "need at least one tree");
            emit(output.as_deref(), &write_ptb(&synth_treebank(seed, count)))
        }
    }
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            log::warn!("cannot build a {workers}-thread pool ({e}); using the global pool");
            f()
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_bytes(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn head_rules(s: &Settings) -> Result<HeadRules> {
    match &s.parser.head_rules {
        Some(p) => Ok(HeadRules::parse(&read_text(p)?)
            .with_context(|| format!("head rules {}", p.display()))?),
        None => Ok(HeadRules::default()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InputKind {
    Treebank,
    Hierarchies,
    Tagged,
}

fn sniff(text: &str) -> InputKind {
    let first = text
        .lines()
        .map(str::trim_start)
        .find(|l| !l.is_empty() && !(l.starts_with('#') && !l.contains('\t')));
    match first {
        Some(l) if l.starts_with('(') => InputKind::Treebank,
        Some(l) if l.contains('\t') => InputKind::Hierarchies,
        _ => InputKind::Tagged,
    }
}

fn load_trees(path: &Path) -> Result<Vec<Tree>> {
    read_ptb(&read_text(path)?).with_context(|| format!("parsing treebank {}", path.display()))
}

fn annotate(trees: &[Tree]) -> Vec<AnnotatedSentence> {
    trees
        .iter()
        .map(|t| AnnotatedSentence {
            words: t.words(),
            hierarchies: extract_hierarchies(t),
        })
        .collect()
}

fn tree_words(trees: &[Tree]) -> Vec<Vec<String>> {
    trees.iter().map(Tree::words).collect()
}

/// Gold hierarchies from a treebank or a hierarchy file.
fn load_annotated(path: &Path) -> Result<Vec<AnnotatedSentence>> {
    let text = read_text(path)?;
    match sniff(&text) {
        InputKind::Treebank => {
            Ok(annotate(&read_ptb(&text).with_context(|| {
                format!("parsing treebank {}", path.display())
            })?))
        }
        InputKind::Hierarchies => Ok(read_hierarchy_file(&text)
            .with_context(|| format!("parsing hierarchy file {}", path.display()))?),
        InputKind::Tagged => bail!(
            "{}: expected a treebank or a hierarchy file",
            path.display()
        ),
    }
}

/// Sentences to parse: from a treebank (gold tags) or tagged text.
fn load_sentences(path: &Path) -> Result<Vec<Sentence>> {
    let text = read_text(path)?;
    match sniff(&text) {
        InputKind::Treebank => Ok(read_ptb(&text)
            .with_context(|| format!("parsing treebank {}", path.display()))?
            .iter()
            .map(Sentence::from_tree)
            .collect()),
        InputKind::Tagged => Ok(read_tagged(&text)
            .with_context(|| format!("parsing tagged text {}", path.display()))?),
        InputKind::Hierarchies => bail!(
            "{}: a hierarchy file has no POS tags to parse with",
            path.display()
        ),
    }
}

type Gold = Vec<Vec<WordHierarchies>>;

/// Words of any supported input, with gold hierarchies when the input has them.
fn load_words_with_gold(
    path: &Path,
) -> Result<(Vec<Vec<String>>, Option<Gold>)> {
    let text = read_text(path)?;
    if sniff(&text) == InputKind::Tagged {
        let s = read_tagged(&text)
            .with_context(|| format!("parsing tagged text {}", path.display()))?;
        return Ok((s.into_iter().map(|s| s.words).collect(), None));
    }
    let a = load_annotated(path)?;
    let words = a.iter().map(|s| s.words.clone()).collect();
    Ok((words, Some(a.into_iter().map(|s| s.hierarchies).collect())))
}

/// Reads predictions and checks they line up with `words`. Returns the
/// provenance comment if the file has one.
fn load_hierarchies_for(
    path: &Path,
    words: &[Vec<String>],
) -> Result<(Vec<Vec<WordHierarchies>>, Option<String>)> {
    let text = read_text(path)?;
    let provenance = text
        .lines()
        .take_while(|l| l.starts_with('#') && !l.contains('\t'))
        .find_map(|l| l.strip_prefix("# provenance "))
        .map(str::to_string);
    let sents = read_hierarchy_file(&text)
        .with_context(|| format!("parsing hierarchy file {}", path.display()))?;
    ensure!(
        sents.len() == words.len(),
        "{}: {} sentences, expected {}",
        path.display(),
        sents.len(),
        words.len()
    );
    for (i, (s, w)) in sents.iter().zip(words).enumerate() {
        ensure!(
            &s.words == w,
            "{}: sentence {} has different words than the input",
            path.display(),
            i + 1
        );
    }
    Ok((
        sents.into_iter().map(|s| s.hierarchies).collect(),
        provenance,
    ))
}

fn load_predictor(path: &Path) -> Result<Predictor> {
    Predictor::from_bytes(&read_bytes(path)?)
        .with_context(|| format!("loading predictor {}", path.display()))
}

fn to_annotated(words: &[Vec<String>], preds: &[Prediction]) -> Vec<AnnotatedSentence> {
    words
        .iter()
        .zip(preds)
        .map(|(w, p)| AnnotatedSentence {
            words: w.clone(),
            hierarchies: p.hierarchies.clone(),
        })
        .collect()
}

fn stats_text(preds: &[Prediction], gold: Option<&[Vec<WordHierarchies>]>) -> String {
    let mut out = String::new();
    let words: usize = preds.iter().map(|p| p.hierarchies.len()).sum();
    let _ = writeln!(out, "sentences\t{}", preds.len());
    let _ = writeln!(out, "words\t{words}");
    let _ = writeln!(
        out,
        "depth_cap_hits\t{}",
        preds.iter().map(|p| p.depth_cap_hits).sum::<usize>()
    );
    if let Some(g) = gold {
        let p: Vec<Vec<WordHierarchies>> = preds.iter().map(|p| p.hierarchies.clone()).collect();
        for h in [HierarchyType::Start, HierarchyType::End] {
            let (pr, rc, f) = corpus_counts(&p, g, h).prf();
            let _ = writeln!(out, "{}_precision\t{pr:.6}", h.tag());
            let _ = writeln!(out, "{}_recall\t{rc:.6}", h.tag());
            let _ = writeln!(out, "{}_f1\t{f:.6}", h.tag());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sniffing() {
        assert_eq!(sniff("\n(S (NN a))"), InputKind::Treebank);
        assert_eq!(
            sniff("# provenance x\na\ts:-\te:-\n"),
            InputKind::Hierarchies
        );
        assert_eq!(sniff("a_DT b_NN\n"), InputKind::Tagged);
    }

    #[test]
    fn stats_without_gold() {
        let t = stats_text(&[], None);
        assert!(t.contains("depth_cap_hits\t0"));
        assert!(!t.contains("f1"));
    }
}
