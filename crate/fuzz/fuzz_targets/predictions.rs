#![no_main]
use libfuzzer_sys::fuzz_target;
use pita_core::formats::{parse_predictions, write_predictions};

const VOCAB: usize = 64;

fuzz_target!(|data: &[u8]| {
    if let Ok(preds) = parse_predictions(data, VOCAB) {
        for p in &preds {
            assert!(p.amounts.iter().all(|&(i, g)| i < VOCAB && g > 0.0 && g.is_finite()));
        }
        let again = parse_predictions(&write_predictions(&preds), VOCAB).expect("written predictions reparse");
        assert_eq!(preds, again);
    }
});
