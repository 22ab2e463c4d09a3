#![no_main]

use libfuzzer_sys::fuzz_target;
use vecspot::io::panoptic::{parse_panoptic, serialize_panoptic};
use vecspot::io::Strictness;

fuzz_target!(|data: &[u8]| {
    if let Ok(r) = parse_panoptic(data, Strictness::Strict) {
        let _ = r.symbols();
        let bytes = serialize_panoptic(&r).expect("serialize");
        assert_eq!(parse_panoptic(&bytes, Strictness::Strict).expect("reparse"), r);
    }
});
