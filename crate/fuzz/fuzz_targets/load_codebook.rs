#![no_main]

use libfuzzer_sys::fuzz_target;
use uhash::Codebook;

fuzz_target!(|data: &[u8]| {
    if let Ok(book) = Codebook::from_bytes(data) {
        assert_eq!(book.to_bytes().expect("re-encode"), data);
        for i in 0..book.len().min(64) {
            let mask = book.decode_mask(i).expect("validated rank");
            assert_eq!(mask.ones_count(), book.k_bs());
        }
    }
});
