//! The searchable database: one final hash and one compressed uncertainty
//! mask per clip.
//!
//! # File layout
//!
//! All integers are little-endian.
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 8    | magic `UHCBOOK\0`                       |
//! | 8      | 2    | format version (1)                      |
//! | 10     | 2    | reserved, zero                          |
//! | 12     | 4    | hash width `d`                          |
//! | 16     | 4    | uncertain bits per entry `k_bs`         |
//! | 20     | 4    | blend factor numerator                  |
//! | 24     | 4    | blend factor denominator                |
//! | 28     | 8    | entry count `n`                         |
//! | 36     | 4    | compressed mask width `d_u`             |
//! | 40     | 4    | reserved, zero                          |
//!
//! The header is followed by the hash region (`n` hashes of `d / 8` bytes,
//! bit 0 in the MSB of the first byte), the mask region (`n` ranks of `d_u`
//! bits each, packed MSB-first without per-entry padding, the last byte
//! zero-padded), and the metadata region: per entry a `u32` length and UTF-8
//! clip id, a `u32` label count, then each label as `u32` length and UTF-8.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::bitpack::{BitReader, BitWriter};
use crate::bits::{check_width, words_for, BitHash, BitMask};
use crate::combinatorics::{compressed_width, CompressedMask, MaskDecoder};
use crate::error::{Error, Result};
use crate::uncertainty::{ClipTrace, UncertaintyScores};
use crate::weight::Weight;

pub const MAGIC: [u8; 8] = *b"UHCBOOK\0";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 44;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodebookHeader {
    pub d: usize,
    pub k_bs: usize,
    pub theta: Weight,
    pub n: usize,
    pub d_u: usize,
}

impl CodebookHeader {
    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..8].copy_from_slice(&MAGIC);
        b[8..10].copy_from_slice(&VERSION.to_le_bytes());
        b[12..16].copy_from_slice(&(self.d as u32).to_le_bytes());
        b[16..20].copy_from_slice(&(self.k_bs as u32).to_le_bytes());
        b[20..24].copy_from_slice(&self.theta.num().to_le_bytes());
        b[24..28].copy_from_slice(&self.theta.den().to_le_bytes());
        b[28..36].copy_from_slice(&(self.n as u64).to_le_bytes());
        b[36..40].copy_from_slice(&(self.d_u as u32).to_le_bytes());
        b
    }

    fn decode(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_LEN {
            return Err(Error::format("truncated header"));
        }
        if b[0..8] != MAGIC {
            return Err(Error::format("bad magic"));
        }
        let u16_at = |o: usize| u16::from_le_bytes([b[o], b[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let version = u16_at(8);
        if version != VERSION {
            return Err(Error::format(format!("unsupported version {}", version)));
        }
        if u16_at(10) != 0 || u32_at(40) != 0 {
            return Err(Error::format("reserved header fields must be zero"));
        }
        let d = u32_at(12) as usize;
        check_width(d).map_err(|e| Error::format(e.to_string()))?;
        let k_bs = u32_at(16) as usize;
        if k_bs > d {
            return Err(Error::format(format!("k_bs {} exceeds d {}", k_bs, d)));
        }
        let theta = Weight::new(u32_at(20), u32_at(24)).map_err(|e| Error::format(e.to_string()))?;
        if theta.num() != u32_at(20) || theta.den() != u32_at(24) {
            return Err(Error::format("blend factor is not in lowest terms"));
        }
        let n = usize::try_from(u64::from_le_bytes(b[28..36].try_into().unwrap()))
            .map_err(|_| Error::format("entry count overflows"))?;
        let d_u = u32_at(36) as usize;
        if d_u != compressed_width(d, k_bs) {
            return Err(Error::format(format!(
                "d_u {} inconsistent with d = {}, k_bs = {} (expected {})",
                d_u,
                d,
                k_bs,
                compressed_width(d, k_bs)
            )));
        }
        Ok(Self {
            d,
            k_bs,
            theta,
            n,
            d_u,
        })
    }
}

/// One decoded view of a codebook row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodebookEntry {
    pub clip_id: String,
    pub labels: Vec<String>,
    pub hash: BitHash,
    pub mask_rank: CompressedMask,
}

/// Storage cost of the two payload regions, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RedundancyReport {
    pub hash_bits: u64,
    pub mask_bits: u64,
}

impl RedundancyReport {
    /// Whether the mask region is strictly smaller than the hash region.
    pub fn within_limit(&self) -> bool {
        self.mask_bits < self.hash_bits
    }

    pub fn margin_bits(&self) -> i64 {
        self.hash_bits as i64 - self.mask_bits as i64
    }
}

#[derive(Debug, Clone)]
pub struct Codebook {
    header: CodebookHeader,
    hashes: Vec<u64>,
    masks: BitWriter,
    clip_ids: Vec<String>,
    labels: Vec<Vec<String>>,
    by_id: HashMap<String, usize>,
    decoder: OnceLock<MaskDecoder>,
}

impl PartialEq for Codebook {
    fn eq(&self, other: &Self) -> bool {
        self.header == other.header
            && self.hashes == other.hashes
            && self.masks == other.masks
            && self.clip_ids == other.clip_ids
            && self.labels == other.labels
    }
}

impl Eq for Codebook {}

/// Appends entries one at a time; see [`Codebook::build`] for the trace path.
#[derive(Debug)]
pub struct CodebookBuilder {
    book: Codebook,
}

impl CodebookBuilder {
    pub fn new(d: usize, k_bs: usize, theta: Weight) -> Result<Self> {
        check_width(d)?;
        if k_bs > d {
            return Err(Error::KExceedsWidth { k: k_bs, d });
        }
        Ok(Self {
            book: Codebook {
                header: CodebookHeader {
                    d,
                    k_bs,
                    theta,
                    n: 0,
                    d_u: compressed_width(d, k_bs),
                },
                hashes: Vec::new(),
                masks: BitWriter::new(),
                clip_ids: Vec::new(),
                labels: Vec::new(),
                by_id: HashMap::new(),
                decoder: OnceLock::new(),
            },
        })
    }

    pub fn with_capacity(d: usize, k_bs: usize, theta: Weight, n: usize) -> Result<Self> {
        let mut b = Self::new(d, k_bs, theta)?;
        b.book.hashes.reserve(n * words_for(d));
        b.book.clip_ids.reserve(n);
        b.book.labels.reserve(n);
        Ok(b)
    }

    /// Adds one entry; `mask` must have exactly `k_bs` ones.
    pub fn push(
        &mut self,
        clip_id: impl Into<String>,
        labels: Vec<String>,
        hash: &BitHash,
        mask: &BitMask,
    ) -> Result<()> {
        let h = &mut self.book.header;
        hash.check_same_width(h.d)?;
        if mask.width() != h.d {
            return Err(Error::WidthMismatch {
                left: h.d,
                right: mask.width(),
            });
        }
        let compressed = CompressedMask::encode(mask, h.k_bs)?;
        self.push_compressed(clip_id, labels, hash, &compressed)
    }

    fn push_compressed(
        &mut self,
        clip_id: impl Into<String>,
        labels: Vec<String>,
        hash: &BitHash,
        mask: &CompressedMask,
    ) -> Result<()> {
        let clip_id = clip_id.into();
        if self.book.by_id.contains_key(&clip_id) {
            return Err(Error::DuplicateClipId(clip_id));
        }
        let book = &mut self.book;
        book.by_id.insert(clip_id.clone(), book.header.n);
        book.hashes.extend_from_slice(hash.words());
        mask.write(&mut book.masks);
        book.clip_ids.push(clip_id);
        book.labels.push(labels);
        book.header.n += 1;
        Ok(())
    }

    pub fn finish(self) -> Codebook {
        self.book
    }
}

impl Codebook {
    /// Builds a codebook from clip traces, preserving input order.
    ///
    /// Each entry stores the final primary hash and the rank of the mask
    /// flagging its `k_bs` most uncertain bits under blend factor `theta`.
    /// Per-trace scoring runs on the current rayon pool.
    pub fn build(d: usize, traces: &[ClipTrace], theta: Weight, k_bs: usize) -> Result<Self> {
        let mut builder = CodebookBuilder::with_capacity(d, k_bs, theta, traces.len())?;
        for t in traces {
            if t.width() != d {
                return Err(Error::WidthMismatch {
                    left: d,
                    right: t.width(),
                });
            }
        }
        let masks: Vec<BitMask> = traces
            .par_iter()
            .map(|t| UncertaintyScores::compute(t, theta).mask(k_bs))
            .collect::<Result<_>>()?;
        for (t, m) in traces.iter().zip(&masks) {
            builder.push(t.clip_id(), t.labels().to_vec(), t.final_hash(), m)?;
        }
        Ok(builder.finish())
    }

    pub fn header(&self) -> &CodebookHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.header.n
    }

    pub fn is_empty(&self) -> bool {
        self.header.n == 0
    }

    pub fn width(&self) -> usize {
        self.header.d
    }

    pub fn k_bs(&self) -> usize {
        self.header.k_bs
    }

    /// Storage words of entry `i`'s hash.
    #[inline]
    pub fn hash_words(&self, i: usize) -> &[u64] {
        let w = words_for(self.header.d);
        &self.hashes[i * w..(i + 1) * w]
    }

    pub fn hash(&self, i: usize) -> BitHash {
        BitHash::from_words(self.header.d, self.hash_words(i).to_vec()).expect("stored hashes are valid")
    }

    pub fn clip_id(&self, i: usize) -> &str {
        &self.clip_ids[i]
    }

    pub fn labels(&self, i: usize) -> &[String] {
        &self.labels[i]
    }

    pub fn index_of(&self, clip_id: &str) -> Option<usize> {
        self.by_id.get(clip_id).copied()
    }

    pub fn decoder(&self) -> &MaskDecoder {
        self.decoder.get_or_init(|| {
            MaskDecoder::new(self.header.d, self.header.k_bs).expect("header validated")
        })
    }

    /// Restores the uncertainty mask of entry `i` from its stored rank.
    pub fn decode_mask(&self, i: usize) -> Result<BitMask> {
        self.decoder()
            .decode_at(&BitReader::new(self.masks.as_bytes()), i * self.header.d_u)
    }

    pub fn compressed_mask(&self, i: usize) -> Result<CompressedMask> {
        CompressedMask::read(
            &BitReader::new(self.masks.as_bytes()),
            i * self.header.d_u,
            self.header.d,
            self.header.k_bs,
        )
    }

    pub fn entry(&self, i: usize) -> Result<CodebookEntry> {
        Ok(CodebookEntry {
            clip_id: self.clip_ids[i].clone(),
            labels: self.labels[i].clone(),
            hash: self.hash(i),
            mask_rank: self.compressed_mask(i)?,
        })
    }

    pub fn redundancy(&self) -> RedundancyReport {
        RedundancyReport {
            hash_bits: (self.header.d * self.header.n) as u64,
            mask_bits: self.masks.bit_len() as u64,
        }
    }

    fn check_redundancy(&self) -> Result<()> {
        let h = &self.header;
        let r = self.redundancy();
        if r.mask_bits != (h.n * h.d_u) as u64 {
            return Err(Error::Invariant(format!(
                "mask region holds {} bits, expected {}",
                r.mask_bits,
                h.n * h.d_u
            )));
        }
        if h.k_bs > 0 && h.k_bs < h.d && h.n > 0 && !r.within_limit() {
            return Err(Error::Invariant(format!(
                "mask region of {} bits is not below {} hash bits",
                r.mask_bits, r.hash_bits
            )));
        }
        Ok(())
    }

    /// Serializes to the versioned binary format.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check_redundancy()?;
        let h = &self.header;
        let mut out = Vec::with_capacity(HEADER_LEN + h.n * (h.d / 8) + self.masks.as_bytes().len());
        out.extend_from_slice(&h.encode());
        for i in 0..h.n {
            for (j, w) in self.hash_words(i).iter().enumerate() {
                let bytes = w.to_be_bytes();
                let take = (h.d / 8 - j * 8).min(8);
                out.extend_from_slice(&bytes[..take]);
            }
        }
        out.extend_from_slice(self.masks.as_bytes());
        for (id, labels) in self.clip_ids.iter().zip(&self.labels) {
            put_str(&mut out, id);
            out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
            for l in labels {
                put_str(&mut out, l);
            }
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes()?)?;
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = fs::File::create(path)?;
        self.write_to(io::BufWriter::new(f))
    }

    /// Parses and fully validates a serialized codebook.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = CodebookHeader::decode(bytes)?;
        let CodebookHeader { d, k_bs, n, d_u, .. } = header;
        let mut cur = Cursor {
            bytes,
            pos: HEADER_LEN,
        };

        let hash_len = n
            .checked_mul(d / 8)
            .ok_or_else(|| Error::format("hash region size overflows"))?;
        let hash_bytes = cur.take(hash_len)?;
        let mask_bits = n
            .checked_mul(d_u)
            .ok_or_else(|| Error::format("mask region size overflows"))?;
        let mask_bytes = cur.take(mask_bits.div_ceil(8))?;
        let masks = BitWriter::from_bytes(mask_bytes.to_vec(), mask_bits)?;

        let mut builder = CodebookBuilder::with_capacity(d, k_bs, header.theta, 0)?;
        builder.book.hashes.reserve(n * words_for(d));
        for chunk in hash_bytes.chunks_exact(d / 8) {
            let h = BitHash::from_be_bytes(d, chunk)?;
            builder.book.hashes.extend_from_slice(h.words());
        }
        let decoder = MaskDecoder::new(d, k_bs)?;
        let reader = BitReader::new(masks.as_bytes());
        for i in 0..n {
            decoder.check_at(&reader, i * d_u)?;
        }

        let book = &mut builder.book;
        book.masks = masks;
        for i in 0..n {
            let id = cur.string()?;
            let count = cur.u32()? as usize;
            if count > cur.remaining() / 4 {
                return Err(Error::format("label count exceeds remaining bytes"));
            }
            let mut labels = Vec::with_capacity(count);
            for _ in 0..count {
                labels.push(cur.string()?);
            }
            if book.by_id.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateClipId(id));
            }
            book.clip_ids.push(id);
            book.labels.push(labels);
        }
        if cur.remaining() != 0 {
            return Err(Error::format("trailing bytes after metadata"));
        }
        book.header.n = n;
        let _ = book.decoder.set(decoder);
        Ok(builder.book)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if len > self.remaining() {
            return Err(Error::format("truncated payload"));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::format("metadata is not UTF-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::{binomial, rank_lex};
    use num_bigint::BigUint;

    fn constant_trace(id: &str, d: usize) -> ClipTrace {
        let h = BitHash::from_hex(d, &"5a".repeat(d / 8)).unwrap();
        ClipTrace::new(id, vec!["a".into()], vec![h.clone(); 3], vec![h; 3]).unwrap()
    }

    #[test]
    fn empty_build() {
        let cb = Codebook::build(64, &[], Weight::ONE, 8).unwrap();
        assert_eq!(cb.len(), 0);
        let back = Codebook::from_bytes(&cb.to_bytes().unwrap()).unwrap();
        assert_eq!(back, cb);
    }

    #[test]
    fn constant_trace_masks_first_positions() {
        let d = 32;
        let cb = Codebook::build(d, &[constant_trace("x", d)], Weight::new(1, 2).unwrap(), 2).unwrap();
        let m = cb.decode_mask(0).unwrap();
        assert_eq!(m.positions().collect::<Vec<_>>(), vec![0, 1]);
        // ones first is the lexicographically last pattern under 0 < 1
        let last = binomial(d, 2).unwrap() - 1u32;
        assert_eq!(cb.compressed_mask(0).unwrap().rank().value(), &last);
        assert_eq!(rank_lex(&m).value(), &last);
    }

    #[test]
    fn build_rejects_bad_input() {
        let a = constant_trace("x", 32);
        let b = constant_trace("x", 32);
        assert!(matches!(
            Codebook::build(32, &[a.clone(), b], Weight::ONE, 2),
            Err(Error::DuplicateClipId(_))
        ));
        assert!(matches!(
            Codebook::build(64, &[a.clone()], Weight::ONE, 2),
            Err(Error::WidthMismatch { .. })
        ));
        assert!(Codebook::build(32, &[a], Weight::ONE, 33).is_err());
    }

    #[test]
    fn zero_k_masks_are_empty() {
        let traces: Vec<_> = (0..4).map(|i| constant_trace(&format!("c{}", i), 64)).collect();
        let cb = Codebook::build(64, &traces, Weight::ONE, 0).unwrap();
        assert_eq!(cb.header().d_u, 0);
        for i in 0..4 {
            assert_eq!(cb.decode_mask(i).unwrap().ones_count(), 0);
        }
        let back = Codebook::from_bytes(&cb.to_bytes().unwrap()).unwrap();
        assert_eq!(back, cb);
    }

    fn sample(d: usize, k: usize) -> Codebook {
        let mut b = CodebookBuilder::new(d, k, Weight::new(1, 4).unwrap()).unwrap();
        for i in 0..5usize {
            let mut h = BitHash::zeros(d).unwrap();
            h.set(i, true);
            let mask = BitMask::from_positions(d, (i..i + k).map(|p| p % d)).unwrap();
            b.push(format!("clip{}", i), vec![format!("L{}", i % 2), "x".into()], &h, &mask)
                .unwrap();
        }
        b.finish()
    }

    #[test]
    fn save_load_round_trip() {
        let cb = sample(96, 12);
        let bytes = cb.to_bytes().unwrap();
        assert_eq!(&bytes[0..8], b"UHCBOOK\0");
        let back = Codebook::from_bytes(&bytes).unwrap();
        assert_eq!(back, cb);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        for i in 0..5 {
            assert_eq!(back.entry(i).unwrap(), cb.entry(i).unwrap());
            assert_eq!(back.decode_mask(i).unwrap(), cb.decode_mask(i).unwrap());
        }
        assert_eq!(back.index_of("clip3"), Some(3));
    }

    #[test]
    fn load_rejects_corruption() {
        let bytes = sample(64, 8).to_bytes().unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Codebook::from_bytes(&bad).is_err());

        let mut bad = bytes.clone();
        bad[8] = 2;
        assert!(Codebook::from_bytes(&bad).is_err());

        // d_u inconsistent with (d, k_bs)
        let mut bad = bytes.clone();
        bad[36] += 1;
        let err = Codebook::from_bytes(&bad).unwrap_err().to_string();
        assert!(err.contains("d_u"), "{}", err);

        for cut in [10, HEADER_LEN + 3, bytes.len() - 1] {
            assert!(Codebook::from_bytes(&bytes[..cut]).is_err());
        }

        let mut bad = bytes.clone();
        bad.push(0);
        assert!(Codebook::from_bytes(&bad).is_err());

        // theta scaled to a non-reduced fraction
        let mut bad = bytes.clone();
        let (num, den) = (u32::from_le_bytes(bad[20..24].try_into().unwrap()), u32::from_le_bytes(bad[24..28].try_into().unwrap()));
        bad[20..24].copy_from_slice(&(num * 2).to_le_bytes());
        bad[24..28].copy_from_slice(&(den * 2).to_le_bytes());
        assert!(Codebook::from_bytes(&bad).is_err());
    }

    #[test]
    fn load_rejects_rank_out_of_range() {
        // d = 8, k = 3: C(8, 3) = 56 < 2^6, so an all-ones rank field is invalid
        let cb = {
            let mut b = CodebookBuilder::new(8, 3, Weight::ONE).unwrap();
            b.push("a", vec![], &BitHash::zeros(8).unwrap(), &BitMask::from_positions(8, [0, 1, 2]).unwrap())
                .unwrap();
            b.finish()
        };
        let mut bytes = cb.to_bytes().unwrap();
        let mask_at = HEADER_LEN + 1;
        bytes[mask_at] = 0b1111_1100;
        let err = Codebook::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("rank out of range"), "{}", err);
    }

    #[test]
    fn mask_region_is_contiguous() {
        let cb = sample(64, 8);
        let d_u = cb.header().d_u;
        assert_eq!(cb.redundancy().mask_bits, (5 * d_u) as u64);
        let bytes = cb.to_bytes().unwrap();
        let meta_at = HEADER_LEN + 5 * 8 + (5 * d_u).div_ceil(8);
        assert_eq!(&bytes[meta_at..meta_at + 4], &5u32.to_le_bytes());
        assert_eq!(&bytes[meta_at + 4..meta_at + 9], b"clip0");
        assert!(cb.redundancy().within_limit());
    }

    #[test]
    fn compressed_mask_matches_rank() {
        let cb = sample(32, 4);
        for i in 0..5 {
            let r = cb.compressed_mask(i).unwrap();
            assert_eq!(r.decode(), cb.decode_mask(i).unwrap());
            assert!(r.rank().value() < &binomial(32, 4).unwrap());
            assert!(r.rank().value() >= &BigUint::from(0u8));
        }
    }
}
