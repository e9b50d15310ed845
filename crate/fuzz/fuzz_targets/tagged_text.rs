#![no_main]
use conparse_core::sentence::{read_tagged, write_tagged};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(sents) = read_tagged(text) {
        assert_eq!(
            read_tagged(&write_tagged(&sents)).expect("round trip"),
            sents
        );
    }
});
