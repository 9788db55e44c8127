#![no_main]
use libfuzzer_sys::fuzz_target;
use pita_core::nn::{parse_checkpoint, write_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = parse_checkpoint(data) {
        let bytes = write_checkpoint(&model);
        let again = parse_checkpoint(&bytes).expect("written checkpoint reparses");
        assert_eq!(write_checkpoint(&again), bytes);
    }
});
