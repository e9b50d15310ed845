#![no_main]
use conparse_core::transition::ActionsDisplay;
use conparse_core::Grammar;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let labels: Vec<String> = ["S", "NP", "NP*", "VP"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let g = Grammar::from_parts(labels.clone(), &labels, &labels[..2]).expect("grammar");
    if let Ok(a) = g.parse_action(text) {
        let shown = ActionsDisplay(&[a], &g).to_string();
        assert_eq!(g.parse_action(&shown).expect("display parses"), a);
    }
});
