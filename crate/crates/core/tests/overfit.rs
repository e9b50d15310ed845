use conparse_core::decoder::{train, TrainOptions};
use conparse_core::{synth_treebank, HeadRules};

#[test]
fn fifty_sentences_reach_training_f1() {
    let trees = synth_treebank(2024, 50);
    let opts = TrainOptions {
        epochs: 30,
        beam: 16,
        use_lookahead: false,
        stop_at_train_f1: Some(0.99),
        ..Default::default()
    };
    let (_, stats) = train(&trees, None, &HeadRules::default(), &opts, None).unwrap();
    let last = stats.last().unwrap();
    let f1 = last.train.unwrap().f1();
    assert!(f1 >= 0.99, "train F1 {f1:.4} after {} epochs", stats.len());
}
