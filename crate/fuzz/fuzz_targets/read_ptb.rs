#![no_main]
use conparse_core::treebank::{binarize, read_ptb, unbinarize, write_ptb, HeadRules};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(trees) = read_ptb(text) else { return };
    // whatever reads must write back and read again to the same trees
    let again = read_ptb(&write_ptb(&trees)).expect("written treebank reads back");
    assert_eq!(again, trees);
    let heads = HeadRules::default();
    for t in &trees {
        assert_eq!(&unbinarize(&binarize(t, &heads)).expect("unbinarize"), t);
    }
});
