#![no_main]

use libfuzzer_sys::fuzz_target;
use uhash::BitHash;

fuzz_target!(|data: &[u8]| {
    let Some((&w, rest)) = data.split_first() else { return };
    let width = (w as usize + 1) * 8 % 1032;
    let Ok(s) = std::str::from_utf8(rest) else { return };
    if let Ok(h) = BitHash::from_hex(width, s) {
        assert_eq!(h.to_hex(), s.to_ascii_lowercase());
    }
});
