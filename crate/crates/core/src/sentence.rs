use thiserror::Error;

use crate::treebank::Tree;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SentenceError {
    #[error("line {line}: token {token:?} is not of the form word_POS")]
    BadToken { line: usize, token: String },
}

/// A POS-tagged sentence, the parser's input.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Sentence {
    pub words: Vec<String>,
    pub tags: Vec<String>,
}

impl Sentence {
    pub fn new(words: Vec<String>, tags: Vec<String>) -> Sentence {
        assert_eq!(words.len(), tags.len());
        Sentence { words, tags }
    }

    pub fn from_tree(tree: &Tree) -> Sentence {
        let (words, tags) = tree.tagged_words().into_iter().unzip();
        Sentence { words, tags }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// `word_POS` tokens separated by single spaces.
    pub fn to_tagged_line(&self) -> String {
        self.words
            .iter()
            .zip(&self.tags)
            .map(|(w, t)| format!("{w}_{t}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Reads one sentence per non-blank line, tokens written `word_POS` (split at
/// the last underscore, so words may themselves contain `_`).
pub fn read_tagged(text: &str) -> Result<Vec<Sentence>, SentenceError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut sentence = Sentence::default();
        for token in line.split_whitespace() {
            match token.rsplit_once('_') {
                Some((w, t)) if !w.is_empty() && !t.is_empty() => {
                    sentence.words.push(w.to_string());
                    sentence.tags.push(t.to_string());
                }
                _ => {
                    return Err(SentenceError::BadToken {
                        line: idx + 1,
                        token: token.to_string(),
                    })
                }
            }
        }
        out.push(sentence);
    }
    Ok(out)
}

pub fn write_tagged(sentences: &[Sentence]) -> String {
    sentences
        .iter()
        .map(|s| s.to_tagged_line() + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_at_last_underscore() {
        let s = read_tagged("They_PRP like_VBP snake_case_NN\n\nok_UH\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].words, vec!["They", "like", "snake_case"]);
        assert_eq!(s[0].tags, vec!["PRP", "VBP", "NN"]);
        assert_eq!(write_tagged(&s), "They_PRP like_VBP snake_case_NN\nok_UH\n");
    }

    #[test]
    fn rejects_untagged_tokens() {
        assert_eq!(
            read_tagged("a_DT dog\n"),
            Err(SentenceError::BadToken {
                line: 1,
                token: "dog".into()
            })
        );
        assert!(read_tagged("_NN").is_err());
        assert!(read_tagged("word_").is_err());
    }
}
