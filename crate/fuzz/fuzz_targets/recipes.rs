#![no_main]
use libfuzzer_sys::fuzz_target;
use pita_core::formats::{parse_recipes, write_recipes};

const VOCAB: usize = 64;

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = parse_recipes(data, VOCAB) {
        for r in &records {
            let v = r.amounts(VOCAB, 1000.0).expect("parsed record has valid amounts");
            assert!((v.total() - 1000.0).abs() <= 1e-6 * 1000.0);
        }
        let again = parse_recipes(&write_recipes(&records), VOCAB).expect("written recipes reparse");
        assert_eq!(records, again);
    }
});
