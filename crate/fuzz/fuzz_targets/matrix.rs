#![no_main]
use libfuzzer_sys::fuzz_target;
use pita_core::formats::{parse_matrix, write_matrix};

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = parse_matrix(data) {
        assert!(m.iter().all(|v| v.is_finite()));
        let bytes = write_matrix(&m);
        assert_eq!(parse_matrix(&bytes).expect("written matrix reparses"), m);
    }
});
