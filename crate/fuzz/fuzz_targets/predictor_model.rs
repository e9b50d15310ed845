#![no_main]
use conparse_predictor::predictor::Predictor;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = Predictor::from_bytes(data) {
        let bytes = p.to_bytes();
        let again = Predictor::from_bytes(&bytes).expect("round trip");
        assert_eq!(again.to_bytes(), bytes);
    }
});
