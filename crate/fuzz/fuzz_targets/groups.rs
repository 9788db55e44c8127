#![no_main]
use libfuzzer_sys::fuzz_target;
use pita_core::formats::{parse_groups, write_groups};
use pita_core::groups::Partition;

const SIZE: usize = 16;

fuzz_target!(|data: &[u8]| {
    if let Ok(groups) = parse_groups(data, SIZE) {
        Partition::from_groups(groups.clone(), SIZE).expect("parsed groups form a partition");
        assert_eq!(parse_groups(&write_groups(&groups), SIZE).unwrap(), groups);
    }
});
