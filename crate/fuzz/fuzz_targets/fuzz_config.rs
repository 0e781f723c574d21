#![no_main]

use libfuzzer_sys::fuzz_target;
use pilotnet::config::{parse_config, Overrides, Settings};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(file) = parse_config(text) else {
        return;
    };
    // Anything the parser accepts must resolve without panicking, and a
    // resolved configuration must render one stable canonical form.
    if let Ok(settings) = Settings::resolve(Some(&file), &Overrides::default()) {
        assert_eq!(settings.canonical_string(), settings.canonical_string());
    }
});
