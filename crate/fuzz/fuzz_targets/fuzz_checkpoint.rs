#![no_main]

use libfuzzer_sys::fuzz_target;
use pilotnet::checkpoint::{decode, encode};

fuzz_target!(|data: &[u8]| {
    let Ok(checkpoint) = decode(data) else {
        return;
    };
    // Accepted bytes must rebuild into a model and re-encode bit for bit.
    let seed = checkpoint.seed;
    if let Ok(model) = checkpoint.into_model() {
        assert_eq!(encode(&model, seed).as_slice(), data);
    }
});
