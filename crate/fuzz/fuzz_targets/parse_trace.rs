#![no_main]

use libfuzzer_sys::fuzz_target;
use uhash::ingest;

fuzz_target!(|data: &[u8]| {
    if let Ok(set) = ingest::parse(data) {
        // canonical rendering must parse back to the same traces
        let text = ingest::render(set.width, &set.traces).expect("render parsed set");
        assert_eq!(ingest::parse_str(&text).expect("reparse"), set);
    }
});
