//! Replays the checked-in fuzz corpus through the same checks the fuzz
//! targets run, so the seeds stay valid as the formats evolve.

use std::fs;
use std::path::PathBuf;

use vecspot::config::RunConfig;
use vecspot::io::checkpoint::{decode, encode};
use vecspot::io::drawing::{parse_drawing, serialize_drawing};
use vecspot::io::panoptic::{parse_panoptic, serialize_panoptic};
use vecspot::io::prediction::{parse_predictions, serialize_predictions};
use vecspot::io::tokens::{tokens_from_binary, tokens_from_json, tokens_to_binary};
use vecspot::io::Strictness;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn drawing_seeds_parse_and_round_trip() {
    for (name, bytes) in seeds("parse_drawing") {
        let d = parse_drawing(&bytes, Strictness::Strict).unwrap_or_else(|e| panic!("{name}: {e}"));
        let back = parse_drawing(&serialize_drawing(&d).unwrap(), Strictness::Strict).unwrap();
        assert_eq!(back, d, "{name}");
    }
}

#[test]
fn prediction_seeds_parse_and_round_trip() {
    for (name, bytes) in seeds("parse_predictions") {
        let doc = parse_predictions(&bytes, Strictness::Strict).unwrap_or_else(|e| panic!("{name}: {e}"));
        let back = parse_predictions(&serialize_predictions(&doc).unwrap(), Strictness::Strict).unwrap();
        assert_eq!(back, doc, "{name}");
    }
}

#[test]
fn panoptic_seeds_parse_and_round_trip() {
    for (name, bytes) in seeds("parse_panoptic") {
        let r = parse_panoptic(&bytes, Strictness::Strict).unwrap_or_else(|e| panic!("{name}: {e}"));
        let back = parse_panoptic(&serialize_panoptic(&r).unwrap(), Strictness::Strict).unwrap();
        assert_eq!(back, r, "{name}");
    }
}

#[test]
fn checkpoint_seeds_decode_and_reencode() {
    for (name, data) in seeds("decode_checkpoint") {
        let n = u16::from_le_bytes([data[0], data[1]]) as usize;
        let (manifest, blob) = data[2..].split_at(n);
        let ckpt = decode(manifest, blob).unwrap_or_else(|e| panic!("{name}: {e}"));
        let (m, b) = encode(&ckpt, "weights.bin").unwrap();
        assert_eq!(b, blob, "{name}");
        assert_eq!(decode(&m, &b).unwrap(), ckpt, "{name}");
    }
}

#[test]
fn token_seeds_decode() {
    for (name, bytes) in seeds("decode_tokens") {
        if name.ends_with(".bin") {
            let t = tokens_from_binary(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(tokens_to_binary(&t), bytes, "{name}");
        } else {
            tokens_from_json(&bytes, Strictness::Strict).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
}

#[test]
fn run_config_seeds_parse() {
    for (name, bytes) in seeds("parse_run_config") {
        RunConfig::parse(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn truncated_seeds_are_rejected_without_panicking() {
    for target in ["parse_drawing", "parse_predictions", "parse_panoptic", "parse_run_config"] {
        for (_, bytes) in seeds(target) {
            for cut in [1, bytes.len() / 2, bytes.len().saturating_sub(2)] {
                let b = &bytes[..cut.min(bytes.len())];
                let _ = parse_drawing(b, Strictness::Lenient);
                let _ = parse_predictions(b, Strictness::Lenient);
                let _ = parse_panoptic(b, Strictness::Lenient);
                let _ = RunConfig::parse(b);
            }
        }
    }
    for (_, bytes) in seeds("decode_tokens") {
        for cut in 0..bytes.len().min(200) {
            assert!(tokens_from_binary(&bytes[..cut]).is_err() || cut == bytes.len());
        }
    }
}
