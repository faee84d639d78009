#![no_main]
use gpcouple::config::{parse_config, write_config};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = parse_config(text) {
        // An accepted config must survive its own serialization.
        let again = write_config(&cfg).expect("write accepted config");
        assert_eq!(parse_config(&again).expect("reparse"), cfg);
    }
});
