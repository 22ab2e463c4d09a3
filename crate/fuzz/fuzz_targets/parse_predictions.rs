#![no_main]

use libfuzzer_sys::fuzz_target;
use vecspot::bfr::{assemble_panoptic, refine};
use vecspot::io::prediction::parse_predictions;
use vecspot::io::Strictness;

fuzz_target!(|data: &[u8]| {
    let Ok(doc) = parse_predictions(data, Strictness::Lenient) else { return };
    let Some(classes) = doc.class_table() else { return };
    if classes.check().is_err() {
        return;
    }
    if let Ok(p) = doc.resolve(None, classes.count()) {
        let refined = refine(&p.semantic, &p.proposals, classes.count());
        let assignment = assemble_panoptic(&refined, &classes);
        assert_eq!(assignment.entries.len(), p.ids.len());
    }
});
