#![no_main]
use std::sync::OnceLock;

use conparse_core::decoder::{beam_parse, train, TrainOptions};
use conparse_core::sentence::read_tagged;
use conparse_core::treebank::HeadRules;
use conparse_core::{synth_treebank, LinearModel};
use libfuzzer_sys::fuzz_target;

fn model() -> &'static LinearModel {
    static M: OnceLock<LinearModel> = OnceLock::new();
    M.get_or_init(|| {
        let opts = TrainOptions {
            epochs: 1,
            use_lookahead: false,
            eval_train: false,
            ..Default::default()
        };
        let (m, _) = train(
            &synth_treebank(1, 20),
            None,
            &HeadRules::default(),
            &opts,
            None,
        )
        .expect("train");
        m.averaged()
    })
}

fuzz_target!(|data: &[u8]| {
    let Some((&beam, rest)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else {
        return;
    };
    let Ok(sents) = read_tagged(text) else { return };
    for s in sents.iter().filter(|s| s.len() <= 64) {
        if let Ok(p) = beam_parse(s, None, model(), 1 + beam as usize % 8) {
            let m = p.action_count();
            assert!(2 * s.len() <= m && m <= 4 * s.len());
            assert_eq!(p.tree.num_words(), s.len());
        }
    }
});
