#![no_main]
use std::sync::OnceLock;

use conparse_core::hierarchy::{extract_hierarchies, AnnotatedSentence};
use conparse_core::synth_treebank;
use conparse_predictor::predictor::{Predictor, PredictorConfig};
use libfuzzer_sys::fuzz_target;

fn predictor() -> &'static Predictor {
    static P: OnceLock<Predictor> = OnceLock::new();
    P.get_or_init(|| {
        let data: Vec<AnnotatedSentence> = synth_treebank(1, 10)
            .iter()
            .map(|t| AnnotatedSentence {
                words: t.words(),
                hierarchies: extract_hierarchies(t),
            })
            .collect();
        let cfg = PredictorConfig {
            word_dim: 4,
            char_dim: 3,
            char_hidden: 4,
            hidden: 4,
            attention_dim: 3,
            max_depth: 6,
            ..Default::default()
        };
        Predictor::new(cfg, &data).expect("predictor")
    })
}

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let words: Vec<String> = text.split_whitespace().take(64).map(String::from).collect();
    if let Ok(p) = predictor().predict(&words) {
        assert_eq!(p.hierarchies.len(), words.len());
    }
});
