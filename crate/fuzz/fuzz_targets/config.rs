#![no_main]
use libfuzzer_sys::fuzz_target;
use pita_core::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = RunConfig::parse(data) {
        let again = RunConfig::parse(cfg.to_json().as_bytes()).expect("echoed config reparses");
        assert_eq!(cfg, again);
    }
});
