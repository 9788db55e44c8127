#![no_main]
use libfuzzer_sys::fuzz_target;
use pita_core::formats::{parse_verdicts, write_verdicts};
use pita_core::recipe::Vocabulary;

fuzz_target!(|data: &[u8]| {
    let names = ["flour", "butter", "margarine", "sugar", "honey", "salt"];
    let vocab = Vocabulary::new(names.iter().map(|s| s.to_string()).collect()).unwrap();
    if let Ok(verdicts) = parse_verdicts(data, &vocab) {
        let again = parse_verdicts(&write_verdicts(&verdicts, &vocab), &vocab).expect("written verdicts reparse");
        assert_eq!(verdicts, again);
    }
});
