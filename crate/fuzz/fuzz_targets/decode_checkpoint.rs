#![no_main]

use libfuzzer_sys::fuzz_target;
use vecspot::io::checkpoint::{decode, encode};

// Input layout: u16 little-endian manifest length, manifest, blob.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let n = u16::from_le_bytes([data[0], data[1]]) as usize;
    let rest = &data[2..];
    if n > rest.len() {
        return;
    }
    let (manifest, blob) = rest.split_at(n);
    if let Ok(ckpt) = decode(manifest, blob) {
        let (m, b) = encode(&ckpt, "weights.bin").expect("encode");
        assert_eq!(b, blob);
        let back = decode(&m, &b).expect("decode");
        assert_eq!(back.tensors.len(), ckpt.tensors.len());
    }
});
