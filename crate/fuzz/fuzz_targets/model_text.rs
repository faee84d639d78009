#![no_main]
use gpcouple::model_io::{read_model, write_model};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = read_model(text) {
        let written = write_model(&model);
        let back = read_model(&written).expect("reread written model");
        assert_eq!(write_model(&back), written);
    }
});
