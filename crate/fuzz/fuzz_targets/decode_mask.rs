#![no_main]

use libfuzzer_sys::fuzz_target;
use uhash::bitpack::BitReader;
use uhash::combinatorics::{rank_lex, MaskDecoder};

fuzz_target!(|data: &[u8]| {
    if data.len() < 4 {
        return;
    }
    let d = 1 + u16::from_le_bytes([data[0], data[1]]) as usize % 512;
    let k = u16::from_le_bytes([data[2], data[3]]) as usize % (d + 1);
    let Ok(dec) = MaskDecoder::new(d, k) else { return };
    let region = &data[4..];
    let reader = BitReader::new(region);
    if let Ok(mask) = dec.decode_at(&reader, 0) {
        assert_eq!(mask.ones_count(), k);
        let rank = rank_lex(&mask);
        assert_eq!(rank.value(), &reader.read_biguint(0, dec.width()).unwrap());
    }
});
