#![no_main]

use libfuzzer_sys::fuzz_target;
use pilotnet::config::parse_f64_list;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(values) = parse_f64_list(text) else {
        return;
    };
    assert!(!values.is_empty());
    assert!(values.iter().all(|v| v.is_finite()));
    // Accepted lists survive a render and reparse unchanged.
    let rendered = values
        .iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(",");
    assert_eq!(parse_f64_list(&rendered).unwrap(), values);
});
