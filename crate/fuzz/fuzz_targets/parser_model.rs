#![no_main]
use conparse_core::LinearModel;
use libfuzzer_sys::fuzz_target;

// text and binary formats share one entry point
fuzz_target!(|data: &[u8]| {
    if let Ok(m) = LinearModel::from_bytes(data) {
        let again = LinearModel::from_bytes(&m.to_binary()).expect("binary round trip");
        assert_eq!(again.num_entries(), m.num_entries());
        let _ = LinearModel::from_bytes(m.to_text().as_bytes()).expect("text round trip");
    }
});
