#![no_main]
use conparse::config::{parse_config_text, Entry, Settings};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(entries) = parse_config_text(text, "fuzz") else {
        return;
    };
    let mut s = Settings::default();
    for e in entries {
        if let Entry::Set { key, value, .. } = e {
            let _ = s.set(&key, &value);
        }
    }
    let _ = s.validate();
});
