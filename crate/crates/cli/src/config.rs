//! Flat `key = value` configuration with `include other.conf` lines.

use std::path::{Path, PathBuf};

use conparse_predictor::predictor::PredictorConfig;
use thiserror::Error;

const MAX_INCLUDE_DEPTH: usize = 16;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}:{line}: {message}")]
    Syntax {
        origin: String,
        line: usize,
        message: String,
    },
    #[error("{origin}: cannot read: {source}")]
    Io {
        origin: String,
        source: std::io::Error,
    },
    #[error("{origin}: include cycle")]
    Cycle { origin: String },
    #[error("includes nested deeper than {MAX_INCLUDE_DEPTH}")]
    TooDeep,
    #[error("{key}: {message}")]
    Value { key: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Entry {
    Set {
        key: String,
        value: String,
        line: usize,
    },
    Include {
        path: String,
        line: usize,
    },
}

/// Parses one file's text without following includes.
pub fn parse_config_text(text: &str, origin: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |message: String| ConfigError::Syntax {
            origin: origin.to_string(),
            line: i + 1,
            message,
        };
        if let Some((k, v)) = line.split_once('=') {
            let key = k.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(syntax(format!("bad key {key:?}")));
            }
            out.push(Entry::Set {
                key: key.to_string(),
                value: v.trim().to_string(),
                line: i + 1,
            });
        } else if let Some(rest) = line.strip_prefix("include") {
            let path = rest.trim();
            if path.is_empty() || !rest.starts_with(char::is_whitespace) {
                return Err(syntax("include needs a path".into()));
            }
            out.push(Entry::Include {
                path: path.to_string(),
                line: i + 1,
            });
        } else {
            return Err(syntax(format!(
                "expected key=value or include, got {line:?}"
            )));
        }
    }
    Ok(out)
}

/// Reads a config file and its includes depth-first; returns `(key, value)`
/// pairs in the order they take effect. Include paths are relative to the
/// including file.
pub fn load_config_file(path: &Path) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    let mut stack = Vec::new();
    load_into(path, &mut stack, &mut out)?;
    Ok(out)
}

fn load_into(
    path: &Path,
    stack: &mut Vec<PathBuf>,
    out: &mut Vec<(String, String)>,
) -> Result<(), ConfigError> {
    let origin = path.display().to_string();
    if stack.len() >= MAX_INCLUDE_DEPTH {
        return Err(ConfigError::TooDeep);
    }
    let canonical = path.canonicalize().map_err(|source| ConfigError::Io {
        origin: origin.clone(),
        source,
    })?;
    if stack.contains(&canonical) {
        return Err(ConfigError::Cycle { origin });
    }
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        origin: origin.clone(),
        source,
    })?;
    stack.push(canonical);
    let base = path.parent().unwrap_or(Path::new("."));
    for entry in parse_config_text(&text, &origin)? {
        match entry {
            Entry::Set { key, value, .. } => out.push((key, value)),
            Entry::Include { path: inc, .. } => load_into(&base.join(inc), stack, out)?,
        }
    }
    stack.pop();
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParserSettings {
    pub beam: usize,
    pub epochs: usize,
    pub seed: u64,
    pub early_update: bool,
    pub lookahead: bool,
    pub stop_at_train_f1: Option<f64>,
    pub binary: bool,
    pub head_rules: Option<PathBuf>,
}

impl Default for ParserSettings {
    fn default() -> Self {
        ParserSettings {
            beam: conparse_core::decoder::DEFAULT_BEAM,
            epochs: 20,
            seed: 1,
            early_update: true,
            lookahead: true,
            stop_at_train_f1: None,
            binary: false,
            head_rules: None,
        }
    }
}

/// Every tunable of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub predictor: PredictorConfig,
    pub parser: ParserSettings,
    pub folds: usize,
    /// 0 lets the thread pool decide.
    pub workers: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            predictor: PredictorConfig::default(),
            parser: ParserSettings::default(),
            folds: 10,
            workers: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Value {
        key: key.to_string(),
        message: format!("cannot parse {value:?}"),
    })
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if let Some(k) = key.strip_prefix("predictor.") {
            return self
                .predictor
                .set(k, value)
                .map_err(|e| ConfigError::Value {
                    key: key.to_string(),
                    message: e.to_string(),
                });
        }
        let p = &mut self.parser;
        match key {
            "parser.beam" => p.beam = parse(key, value)?,
            "parser.epochs" => p.epochs = parse(key, value)?,
            "parser.seed" => p.seed = parse(key, value)?,
            "parser.early_update" => p.early_update = parse(key, value)?,
            "parser.lookahead" => p.lookahead = parse(key, value)?,
            "parser.stop_at_train_f1" => p.stop_at_train_f1 = Some(parse(key, value)?),
            "parser.binary" => p.binary = parse(key, value)?,
            "parser.head_rules" => p.head_rules = Some(PathBuf::from(value)),
            "jackknife.folds" => self.folds = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            _ => {
                return Err(ConfigError::Value {
                    key: key.to_string(),
                    message: "unknown setting".into(),
                })
            }
        }
        Ok(())
    }

    /// Applies a `KEY=VALUE` override from the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair.split_once('=').ok_or_else(|| ConfigError::Value {
            key: pair.to_string(),
            message: "expected KEY=VALUE".into(),
        })?;
        self.set(k.trim(), v.trim())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.predictor.validate().map_err(|e| ConfigError::Value {
            key: "predictor".into(),
            message: e.to_string(),
        })?;
        let bad = |key: &str, message: &str| ConfigError::Value {
            key: key.into(),
            message: message.into(),
        };
        if self.parser.beam == 0 {
            return Err(bad("parser.beam", "must be at least 1"));
        }
        if self.parser.epochs == 0 {
            return Err(bad("parser.epochs", "must be at least 1"));
        }
        if self.folds < 2 {
            return Err(bad("jackknife.folds", "must be at least 2"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn parses_sets_comments_and_includes() {
        let e = parse_config_text("# top\nparser.beam = 8  # wide\n\ninclude base.conf\n", "x")
            .unwrap();
        assert_eq!(
            e,
            vec![
                Entry::Set {
                    key: "parser.beam".into(),
                    value: "8".into(),
                    line: 2
                },
                Entry::Include {
                    path: "base.conf".into(),
                    line: 4
                },
            ]
        );
        assert!(parse_config_text("just words\n", "x").is_err());
        assert!(parse_config_text("include\n", "x").is_err());
        assert!(parse_config_text("= 3\n", "x").is_err());
    }

    #[test]
    fn includes_resolve_relative_and_later_wins() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(
            dir.path().join("sub/base.conf"),
            "parser.beam=4\nworkers=2\n",
        )
        .unwrap();
        fs::write(
            dir.path().join("main.conf"),
            "include sub/base.conf\nparser.beam=8\n",
        )
        .unwrap();
        let pairs = load_config_file(&dir.path().join("main.conf")).unwrap();
        let mut s = Settings::default();
        for (k, v) in &pairs {
            s.set(k, v).unwrap();
        }
        assert_eq!(s.parser.beam, 8);
        assert_eq!(s.workers, 2);
    }

    #[test]
    fn include_cycle_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.conf"), "include b.conf\n").unwrap();
        fs::write(dir.path().join("b.conf"), "include a.conf\n").unwrap();
        assert!(matches!(
            load_config_file(&dir.path().join("a.conf")),
            Err(ConfigError::Cycle { .. })
        ));
    }

    #[test]
    fn unknown_and_invalid_settings() {
        let mut s = Settings::default();
        assert!(s.set("parser.bogus", "1").is_err());
        assert!(s.set("parser.beam", "wide").is_err());
        assert!(s.set("predictor.hidden", "12").is_ok());
        assert_eq!(s.predictor.hidden, 12);
        assert!(s.set_pair("workers").is_err());
        s.set("jackknife.folds", "1").unwrap();
        assert!(s.validate().is_err());
    }

    #[test]
    fn defaults() {
        let s = Settings::default();
        assert_eq!(s.parser.beam, 16);
        assert_eq!(s.predictor.hidden, 100);
        assert_eq!(s.predictor.word_dim, 50);
        s.validate().unwrap();
    }
}
