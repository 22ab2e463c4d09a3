#![no_main]

use libfuzzer_sys::fuzz_target;
use vecspot::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = RunConfig::parse(data) {
        cfg.validate().expect("parse validates");
    }
});
