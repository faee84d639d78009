#![no_main]
use gpcouple::report::{compare_text, Tolerances};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // Two reports separated by the first NUL byte.
    let (a, b) = text.split_once('\0').unwrap_or((text, text));
    let tol = Tolerances::default();
    let _ = compare_text(a, b, &tol);
    if let Ok(c) = compare_text(a, a, &tol) {
        assert!(c.is_identical() || c.failures == 0);
    }
});
