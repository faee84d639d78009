#![no_main]
use gpcouple::design::Design;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(d) = Design::from_csv(text) {
        let csv = d.to_csv();
        let back = Design::from_csv(&csv).expect("reparse written csv");
        assert_eq!(back.to_csv(), csv);
    }
});
