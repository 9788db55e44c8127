#![no_main]
use libfuzzer_sys::fuzz_target;
use pita_core::formats::{parse_vocabulary, write_vocabulary};

fuzz_target!(|data: &[u8]| {
    if let Ok(vocab) = parse_vocabulary(data) {
        let again = parse_vocabulary(&write_vocabulary(&vocab)).expect("canonical vocabulary reparses");
        assert_eq!(vocab, again);
    }
});
