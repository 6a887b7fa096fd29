//! Hash-trace files and a synthetic trace generator.
//!
//! # Trace format
//!
//! UTF-8 text, one record per line. The first non-blank, non-comment line is
//! the header `UHTRACE v1 d=<width>`. Lines starting with `#` are comments.
//! Each record has five `|`-separated fields:
//!
//! ```text
//! <clip_id> | <label>;<label>... | <T> | <T primary hashes> | <T secondary hashes>
//! ```
//!
//! Hashes are whitespace-separated lowercase hex strings of `d / 4` digits.
//! The label field may be empty. Clip ids may not contain whitespace or `|`.
//! Surrounding whitespace in every field is ignored; [`render`] emits the
//! canonical spacing shown above.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bits::{check_width, BitHash};
use crate::error::{Error, Result};
use crate::uncertainty::ClipTrace;

pub const HEADER_TAG: &str = "UHTRACE";
pub const FORMAT_VERSION: &str = "v1";

fn header_line(d: usize) -> String {
    format!("{} {} d={}", HEADER_TAG, FORMAT_VERSION, d)
}

fn parse_header(line: &str, lineno: usize) -> Result<usize> {
    let mut parts = line.split_whitespace();
    let (tag, version, width) = (parts.next(), parts.next(), parts.next());
    if tag != Some(HEADER_TAG) || parts.next().is_some() {
        return Err(Error::parse(lineno, "expected header `UHTRACE v1 d=<width>`"));
    }
    if version != Some(FORMAT_VERSION) {
        return Err(Error::parse(lineno, format!("unsupported trace version {:?}", version.unwrap_or(""))));
    }
    let d = width
        .and_then(|w| w.strip_prefix("d="))
        .and_then(|w| w.parse::<usize>().ok())
        .ok_or_else(|| Error::parse(lineno, "header must declare d=<width>"))?;
    check_width(d).map_err(|e| Error::parse(lineno, e.to_string()))?;
    Ok(d)
}

fn valid_clip_id(id: &str) -> bool {
    !id.is_empty() && !id.chars().any(|c| c.is_whitespace() || c == '|')
}

fn valid_label(l: &str) -> bool {
    !l.is_empty() && !l.chars().any(|c| c.is_whitespace() || c == '|' || c == ';')
}

fn parse_record(line: &str, lineno: usize, d: usize) -> Result<ClipTrace> {
    let err = |m: String| Error::parse(lineno, m);
    let fields: Vec<&str> = line.split('|').map(str::trim).collect();
    if fields.len() != 5 {
        return Err(err(format!("expected 5 `|`-separated fields, found {}", fields.len())));
    }
    let clip_id = fields[0];
    if !valid_clip_id(clip_id) {
        return Err(err(format!("invalid clip id {:?}", clip_id)));
    }
    let labels: Vec<String> = if fields[1].is_empty() {
        Vec::new()
    } else {
        fields[1].split(';').map(|l| l.trim().to_string()).collect()
    };
    if let Some(bad) = labels.iter().find(|l| !valid_label(l)) {
        return Err(err(format!("invalid label {:?}", bad)));
    }
    let t: usize = fields[2]
        .parse()
        .map_err(|_| err(format!("invalid timestep count {:?}", fields[2])))?;
    if t == 0 {
        return Err(err("timestep count must be at least 1".into()));
    }
    let hashes = |field: &str, which: &str| -> Result<Vec<BitHash>> {
        let parts: Vec<&str> = field.split_whitespace().collect();
        if parts.len() != t {
            return Err(err(format!("expected {} {} hashes, found {}", t, which, parts.len())));
        }
        parts
            .iter()
            .map(|h| BitHash::from_hex(d, h).map_err(|e| err(format!("{} hash: {}", which, e))))
            .collect()
    };
    let primary = hashes(fields[3], "primary")?;
    let secondary = hashes(fields[4], "secondary")?;
    ClipTrace::new(clip_id, labels, primary, secondary).map_err(|e| err(e.to_string()))
}

/// Streams clip traces from a trace file, one record at a time.
pub struct TraceReader<R> {
    input: R,
    width: usize,
    line: usize,
    seen: HashSet<String>,
    buf: String,
}

impl<R: BufRead> TraceReader<R> {
    /// Reads up to and including the header line.
    pub fn new(mut input: R) -> Result<Self> {
        let mut buf = String::new();
        let mut line = 0;
        loop {
            buf.clear();
            if input.read_line(&mut buf)? == 0 {
                return Err(Error::parse(line + 1, "missing header"));
            }
            line += 1;
            let s = buf.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let width = parse_header(s, line)?;
            return Ok(Self {
                input,
                width,
                line,
                seen: HashSet::new(),
                buf,
            });
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn next_record(&mut self) -> Result<Option<ClipTrace>> {
        loop {
            self.buf.clear();
            if self.input.read_line(&mut self.buf)? == 0 {
                return Ok(None);
            }
            self.line += 1;
            let s = self.buf.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let trace = parse_record(s, self.line, self.width)?;
            if !self.seen.insert(trace.clip_id().to_string()) {
                return Err(Error::parse(
                    self.line,
                    format!("duplicate clip id `{}`", trace.clip_id()),
                ));
            }
            return Ok(Some(trace));
        }
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<ClipTrace>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_record().transpose()
    }
}

/// A parsed trace file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceSet {
    pub width: usize,
    pub traces: Vec<ClipTrace>,
}

pub fn parse<R: BufRead>(input: R) -> Result<TraceSet> {
    let reader = TraceReader::new(input)?;
    let width = reader.width();
    let traces = reader.collect::<Result<Vec<_>>>()?;
    Ok(TraceSet { width, traces })
}

pub fn parse_str(s: &str) -> Result<TraceSet> {
    parse(s.as_bytes())
}

pub fn read_file(path: impl AsRef<std::path::Path>) -> Result<TraceSet> {
    let f = std::fs::File::open(path)?;
    parse(io::BufReader::new(f))
}

fn render_record(out: &mut String, t: &ClipTrace) {
    let join = |hs: &[BitHash]| hs.iter().map(BitHash::to_hex).collect::<Vec<_>>().join(" ");
    let _ = writeln!(
        out,
        "{} | {} | {} | {} | {}",
        t.clip_id(),
        t.labels().join(";"),
        t.len(),
        join(t.primary()),
        join(t.secondary())
    );
}

/// Canonical text form of a trace set.
pub fn render(width: usize, traces: &[ClipTrace]) -> Result<String> {
    check_width(width)?;
    let mut out = header_line(width);
    out.push('\n');
    for t in traces {
        if t.width() != width {
            return Err(Error::WidthMismatch {
                left: width,
                right: t.width(),
            });
        }
        render_record(&mut out, t);
    }
    Ok(out)
}

pub fn write<W: Write>(mut w: W, width: usize, traces: &[ClipTrace]) -> Result<()> {
    w.write_all(render(width, traces)?.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Parameters of the synthetic trace generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub class_count: usize,
    /// Database clips per class.
    pub clips_per_class: usize,
    /// Query clips per class.
    pub queries_per_class: usize,
    pub d: usize,
    /// Timesteps per clip.
    pub t: usize,
    /// Expected Hamming distance between two class centroids, at most `d / 2`.
    pub centroid_distance: f64,
    /// Per-bit flip probability from centroid to a clip's final hash.
    pub clip_noise: f64,
    /// Unstable positions per clip, shared by all clips of a class.
    pub unstable_bit_count: usize,
    /// Per-timestep flip probability of an unstable bit in the primary trace.
    pub instability_rate: f64,
    /// Per-timestep disagreement probability of an unstable bit in the secondary trace.
    pub secondary_lag: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            class_count: 10,
            clips_per_class: 40,
            queries_per_class: 10,
            d: 128,
            t: 24,
            centroid_distance: 16.0,
            clip_noise: 0.1,
            unstable_bit_count: 16,
            instability_rate: 0.5,
            secondary_lag: 0.4,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        check_width(self.d)?;
        let bad = |m: String| Err(Error::InvalidParams(m));
        for (name, p) in [
            ("clip_noise", self.clip_noise),
            ("instability_rate", self.instability_rate),
            ("secondary_lag", self.secondary_lag),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{} = {} is not a probability", name, p));
            }
        }
        if !(0.0..=self.d as f64 / 2.0).contains(&self.centroid_distance) {
            return bad(format!("centroid_distance must lie in [0, {}]", self.d / 2));
        }
        if self.unstable_bit_count > self.d {
            return bad("unstable_bit_count exceeds d".into());
        }
        if self.t == 0 || self.class_count == 0 {
            return bad("t and class_count must be positive".into());
        }
        Ok(())
    }

    /// Probability of flipping a base bit so that two independently flipped
    /// copies differ in `centroid_distance` bits on average.
    fn centroid_flip(&self) -> f64 {
        let r = 2.0 * self.centroid_distance / self.d as f64;
        (1.0 - (1.0 - r).max(0.0).sqrt()) / 2.0
    }
}

/// Draw primitives over a ChaCha8 stream.
struct Draws(ChaCha8Rng);

impl Draws {
    fn bit(&mut self) -> bool {
        self.0.next_u64() >> 63 == 1
    }

    fn bernoulli(&mut self, p: f64) -> bool {
        ((self.0.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64) < p
    }

    fn below(&mut self, n: usize) -> usize {
        ((self.0.next_u64() as u128 * n as u128) >> 64) as usize
    }

    fn flipped(&mut self, base: &BitHash, p: f64) -> BitHash {
        let mut h = base.clone();
        for i in 0..h.width() {
            if self.bernoulli(p) {
                h.flip(i);
            }
        }
        h
    }

    /// `k` distinct positions of `0..n` by partial Fisher-Yates, sorted.
    fn subset(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            idx.swap(i, j);
        }
        let mut out = idx[..k].to_vec();
        out.sort_unstable();
        out
    }
}

/// Synthetic database and query traces plus their planted unstable bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthOutput {
    pub database: Vec<ClipTrace>,
    pub queries: Vec<ClipTrace>,
    /// Unstable positions of each class, ascending.
    pub unstable: Vec<Vec<usize>>,
}

impl SynthOutput {
    /// Planted unstable positions of a generated clip.
    pub fn planted_for(&self, trace: &ClipTrace) -> &[usize] {
        let class: usize = trace.labels()[0]
            .strip_prefix("class")
            .and_then(|c| c.parse().ok())
            .expect("generated label");
        &self.unstable[class]
    }
}

/// Generates labeled traces.
///
/// The stream is `ChaCha8Rng::seed_from_u64(seed)` read through `next_u64`.
/// A fair bit is the top bit of one word; a Bernoulli(p) draw is
/// `(w >> 11) * 2^-53 < p`; a uniform index below `n` is `(w * n) >> 64`
/// in 128-bit arithmetic. Draws happen in this order:
///
/// 1. a base hash, one fair bit per position;
/// 2. per class: the centroid, flipping each base bit with probability
///    `q = (1 - sqrt(1 - 2 c / d)) / 2` for centroid distance `c`, then the
///    class's unstable positions by partial Fisher-Yates;
/// 3. per class, the database clips, then per class, the query clips. For
///    each clip: the final hash (each centroid bit flipped with probability
///    `clip_noise`), then primary timesteps `1..T-1` and secondary timesteps
///    `1..=T`, each drawing one Bernoulli per unstable position in ascending
///    order (`instability_rate` for primary, `secondary_lag` for secondary)
///    and flipping the final hash where it fires. Primary timestep `T` is the
///    final hash.
///
/// Database clips are named `cNN-dMMM`, queries `cNN-qMMM`, and every clip
/// carries the single label `class<N>`.
pub fn synthesize(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = Draws(ChaCha8Rng::seed_from_u64(cfg.seed));
    let d = cfg.d;

    let base_bits: Vec<bool> = (0..d).map(|_| rng.bit()).collect();
    let base = BitHash::from_bits(&base_bits)?;
    let q = cfg.centroid_flip();
    let mut centroids = Vec::with_capacity(cfg.class_count);
    let mut unstable = Vec::with_capacity(cfg.class_count);
    for _ in 0..cfg.class_count {
        centroids.push(rng.flipped(&base, q));
        unstable.push(rng.subset(d, cfg.unstable_bit_count));
    }

    let clip = |rng: &mut Draws, class: usize, id: String| -> Result<ClipTrace> {
        let fin = rng.flipped(&centroids[class], cfg.clip_noise);
        let walk = |rate: f64, rng: &mut Draws| {
            let mut h = fin.clone();
            for &pos in &unstable[class] {
                if rng.bernoulli(rate) {
                    h.flip(pos);
                }
            }
            h
        };
        let mut primary: Vec<BitHash> = (1..cfg.t).map(|_| walk(cfg.instability_rate, rng)).collect();
        primary.push(fin.clone());
        let secondary: Vec<BitHash> = (0..cfg.t).map(|_| walk(cfg.secondary_lag, rng)).collect();
        ClipTrace::new(id, vec![format!("class{}", class)], primary, secondary)
    };

    let mut database = Vec::with_capacity(cfg.class_count * cfg.clips_per_class);
    for c in 0..cfg.class_count {
        for j in 0..cfg.clips_per_class {
            database.push(clip(&mut rng, c, format!("c{:02}-d{:03}", c, j))?);
        }
    }
    let mut queries = Vec::with_capacity(cfg.class_count * cfg.queries_per_class);
    for c in 0..cfg.class_count {
        for j in 0..cfg.queries_per_class {
            queries.push(clip(&mut rng, c, format!("c{:02}-q{:03}", c, j))?);
        }
    }
    Ok(SynthOutput {
        database,
        queries,
        unstable,
    })
}
