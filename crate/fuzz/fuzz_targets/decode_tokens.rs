#![no_main]

use libfuzzer_sys::fuzz_target;
use vecspot::io::tokens::{tokens_from_binary, tokens_from_json, tokens_to_binary};
use vecspot::io::Strictness;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = tokens_from_binary(data) {
        assert_eq!(tokens_to_binary(&t), data);
    }
    let _ = tokens_from_json(data, Strictness::Strict);
});
