#![no_main]
use conparse_core::hierarchy::{read_hierarchy_file, write_hierarchy_file};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(sents) = read_hierarchy_file(text) {
        let again = read_hierarchy_file(&write_hierarchy_file(&sents)).expect("round trip");
        assert_eq!(again, sents);
    }
});
