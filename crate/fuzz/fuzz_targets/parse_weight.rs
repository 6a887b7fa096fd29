#![no_main]

use libfuzzer_sys::fuzz_target;
use uhash::Weight;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(w) = s.parse::<Weight>() {
        assert_eq!(w.to_string().parse::<Weight>().unwrap(), w);
    }
});
