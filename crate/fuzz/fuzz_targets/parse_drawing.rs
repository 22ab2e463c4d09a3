#![no_main]

use libfuzzer_sys::fuzz_target;
use vecspot::io::drawing::{parse_drawing, serialize_drawing};
use vecspot::io::Strictness;

fuzz_target!(|data: &[u8]| {
    for mode in [Strictness::Strict, Strictness::Lenient] {
        if let Ok(d) = parse_drawing(data, mode) {
            // Anything accepted must survive a round trip unchanged.
            let bytes = serialize_drawing(&d).expect("serialize");
            let back = parse_drawing(&bytes, Strictness::Strict).expect("reparse");
            assert_eq!(back, d);
        }
    }
});
