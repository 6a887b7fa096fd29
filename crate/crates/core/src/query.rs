//! Top-K search under raw and uncertainty-discounted Hamming distance.
//!
//! The discounted distance of a query `q` to entry `r` with mask `m` is
//! `H - gamma * M`, where `H = popcount(q ^ r)` and `M` counts the conflicts
//! that fall on flagged bits. Because `m` has exactly `k_bs` ones,
//! `H - gamma * min(H, k_bs) <= Delta <= H`.
//!
//! Filtered search first keeps the `K'` entries with the smallest `H` (a
//! partial selection over the whole codebook), then decodes masks and ranks
//! only those. With safety expansion on, a pool whose K-th best distance is
//! still within reach of some excluded entry's lower bound is widened, in one
//! linear pass, to every entry that could reach it. The result is then
//! identical to exhaustive search.

use std::cmp::Ordering;
use std::fmt;
use std::num::NonZeroUsize;
use std::time::{Duration, Instant};

use lru::LruCache;

use crate::bits::{xor_masked_popcount, xor_popcount, BitHash, BitMask};
use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::weight::Weight;

/// An exact non-negative rational distance `units / per_unit`.
#[derive(Clone, Copy)]
pub struct Distance {
    units: u64,
    per_unit: u32,
}

impl Distance {
    pub fn from_raw(h: u32) -> Self {
        Self {
            units: h as u64,
            per_unit: 1,
        }
    }

    /// `h - gamma * masked`.
    pub fn discounted(h: u32, masked: u32, gamma: Weight) -> Self {
        debug_assert!(masked <= h);
        let den = gamma.den() as u64;
        Self {
            units: h as u64 * den - gamma.num() as u64 * masked as u64,
            per_unit: gamma.den(),
        }
    }

    pub fn numerator(self) -> u64 {
        self.units
    }

    pub fn denominator(self) -> u32 {
        self.per_unit
    }

    pub fn to_f64(self) -> f64 {
        self.units as f64 / self.per_unit as f64
    }
}

impl Ord for Distance {
    fn cmp(&self, other: &Self) -> Ordering {
        if self.per_unit == other.per_unit {
            return self.units.cmp(&other.units);
        }
        (self.units as u128 * other.per_unit as u128).cmp(&(other.units as u128 * self.per_unit as u128))
    }
}

impl PartialOrd for Distance {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Distance {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Distance {}

impl fmt::Debug for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.units, self.per_unit)
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.units % self.per_unit as u64 == 0 {
            write!(f, "{}", self.units / self.per_unit as u64)
        } else {
            write!(f, "{}", self.to_f64())
        }
    }
}

/// Conflicting bits between `q` and `r`.
pub fn raw_distance(q: &BitHash, r: &BitHash) -> Result<u32> {
    q.check_same_width(r.width())?;
    Ok(xor_popcount(q.words(), r.words()))
}

/// Conflicting bits, with those under `mask` counted `1 - gamma` each.
pub fn modulated_distance(q: &BitHash, r: &BitHash, mask: &BitMask, gamma: Weight) -> Result<Distance> {
    q.check_same_width(r.width())?;
    q.check_same_width(mask.width())?;
    let h = xor_popcount(q.words(), r.words());
    let m = xor_masked_popcount(q.words(), r.words(), mask.words());
    Ok(Distance::discounted(h, m, gamma))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    /// Decode every mask and rank all entries.
    Exact,
    /// Raw-distance prefilter to a pool of `K'`, then rank the pool.
    Filtered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryParams {
    pub gamma: Weight,
    pub k: usize,
    /// Initial pool size; `None` means `max(4 K, 64)`.
    pub k_prime: Option<usize>,
    pub mode: SearchMode,
    pub safety_expansion: bool,
}

impl QueryParams {
    pub fn new(gamma: Weight, k: usize) -> Self {
        Self {
            gamma,
            k,
            k_prime: None,
            mode: SearchMode::Filtered,
            safety_expansion: true,
        }
    }

    pub fn exact(mut self) -> Self {
        self.mode = SearchMode::Exact;
        self
    }

    pub fn with_pool(mut self, k_prime: usize) -> Self {
        self.k_prime = Some(k_prime);
        self
    }

    pub fn without_expansion(mut self) -> Self {
        self.safety_expansion = false;
        self
    }

    /// Pool size before any expansion, capped at `n`.
    pub fn initial_pool(&self, n: usize) -> usize {
        self.k_prime.unwrap_or((4 * self.k).max(64)).min(n)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(kp) = self.k_prime {
            if kp < self.k {
                return Err(Error::InvalidParams(format!("K' = {} is smaller than K = {}", kp, self.k)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hit {
    pub index: usize,
    pub delta: Distance,
    pub raw: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueryStats {
    /// Masks unranked for this query (cache hits excluded).
    pub decodes: usize,
    /// Final candidate pool size; equals `N` in exact mode.
    pub pool: usize,
    pub expansions: usize,
    pub stage1: Duration,
    pub stage2: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryResult {
    /// Query timestep when produced from a trace, 1-based.
    pub timestep: Option<usize>,
    /// Ascending by distance, ties by entry index.
    pub hits: Vec<Hit>,
    pub stats: QueryStats,
}

impl QueryResult {
    pub fn indices(&self) -> Vec<usize> {
        self.hits.iter().map(|h| h.index).collect()
    }
}

fn hit_order(a: &Hit, b: &Hit) -> Ordering {
    a.delta.cmp(&b.delta).then(a.index.cmp(&b.index))
}

/// Keeps the `k` best hits in order.
fn take_top(mut hits: Vec<Hit>, k: usize) -> Vec<Hit> {
    if k == 0 {
        return Vec::new();
    }
    if hits.len() > k {
        hits.select_nth_unstable_by(k - 1, hit_order);
        hits.truncate(k);
    }
    hits.sort_unstable_by(hit_order);
    hits
}

/// Lowest discounted distance any entry at raw distance `h` can reach.
fn lower_bound(h: u32, k_bs: usize, gamma: Weight) -> Distance {
    Distance::discounted(h, h.min(k_bs as u32), gamma)
}

/// Largest raw distance whose lower bound does not exceed `kth`. The bound
/// is non-decreasing in `h`, so every entry beyond it is out of reach.
fn max_reachable(kth: Distance, d: usize, k_bs: usize, gamma: Weight) -> u32 {
    (0..=d as u32)
        .take_while(|&h| lower_bound(h, k_bs, gamma) <= kth)
        .last()
        .unwrap_or(0)
}

/// Query state over one codebook, holding an LRU cache of decoded masks.
///
/// Caching never changes results; it only avoids re-unranking masks that
/// recur across queries in the same session.
pub struct QuerySession<'a> {
    book: &'a Codebook,
    cache: LruCache<usize, BitMask>,
}

impl<'a> QuerySession<'a> {
    pub fn new(book: &'a Codebook, capacity: usize) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).unwrap();
        Self {
            book,
            cache: LruCache::new(cap),
        }
    }

    /// Session sized for the default pool of `params`.
    pub fn for_params(book: &'a Codebook, params: &QueryParams) -> Self {
        Self::new(book, params.initial_pool(book.len()))
    }

    pub fn codebook(&self) -> &'a Codebook {
        self.book
    }

    fn mask(&mut self, i: usize, decodes: &mut usize) -> Result<&BitMask> {
        if !self.cache.contains(&i) {
            let m = self.book.decode_mask(i)?;
            *decodes += 1;
            self.cache.put(i, m);
        }
        Ok(self.cache.get(&i).expect("just inserted"))
    }

    fn check_query(&self, q: &BitHash) -> Result<()> {
        q.check_same_width(self.book.width())
    }

    pub fn search(&mut self, q: &BitHash, params: &QueryParams) -> Result<QueryResult> {
        self.search_excluding(q, params, None)
    }

    /// Like [`search`](Self::search), never returning entry `exclude`.
    pub fn search_excluding(
        &mut self,
        q: &BitHash,
        params: &QueryParams,
        exclude: Option<usize>,
    ) -> Result<QueryResult> {
        params.validate()?;
        self.check_query(q)?;
        match params.mode {
            SearchMode::Exact => self.exact(q, params, exclude),
            SearchMode::Filtered => self.filtered(q, params, exclude),
        }
    }

    fn exact(&mut self, q: &BitHash, params: &QueryParams, exclude: Option<usize>) -> Result<QueryResult> {
        let start = Instant::now();
        let book = self.book;
        let qw = q.words();
        let mut hits = Vec::with_capacity(book.len());
        let mut decodes = 0;
        for i in 0..book.len() {
            if Some(i) == exclude {
                continue;
            }
            let m = book.decode_mask(i)?;
            decodes += 1;
            let r = book.hash_words(i);
            let h = xor_popcount(qw, r);
            let masked = xor_masked_popcount(qw, r, m.words());
            hits.push(Hit {
                index: i,
                delta: Distance::discounted(h, masked, params.gamma),
                raw: h,
            });
        }
        let pool = hits.len();
        Ok(QueryResult {
            timestep: None,
            hits: take_top(hits, params.k),
            stats: QueryStats {
                decodes,
                pool,
                expansions: 0,
                stage1: Duration::ZERO,
                stage2: start.elapsed(),
            },
        })
    }

    fn filtered(&mut self, q: &BitHash, params: &QueryParams, exclude: Option<usize>) -> Result<QueryResult> {
        let book = self.book;
        let t1 = Instant::now();
        let qw = q.words();
        // (raw distance, index) packed so that integer order is the stage-1 order
        let mut keys: Vec<u64> = Vec::with_capacity(book.len());
        for i in 0..book.len() {
            if Some(i) == exclude {
                continue;
            }
            let h = xor_popcount(qw, book.hash_words(i)) as u64;
            keys.push(h << 32 | i as u64);
        }
        let n = keys.len();
        let mut pool = params.initial_pool(n).max(params.k.min(n));
        if pool < n {
            keys.select_nth_unstable(pool);
        }
        let mut stats = QueryStats::default();
        let mut stage1 = t1.elapsed();

        let s2 = Instant::now();
        self.reserve_cache(pool);
        let mut hits = Vec::with_capacity(pool);
        self.score(qw, &keys[..pool], params.gamma, &mut hits, &mut stats.decodes)?;
        let mut top = take_top(hits, params.k);
        let mut stage2 = s2.elapsed();

        if params.safety_expansion && pool < n && top.len() == params.k {
            let kth = top[params.k - 1].delta;
            let reach = max_reachable(kth, book.width(), book.k_bs(), params.gamma);
            // keys[pool] is the smallest key outside the pool
            if (keys[pool] >> 32) as u32 <= reach {
                let s1 = Instant::now();
                let mut end = pool;
                for i in pool..n {
                    if (keys[i] >> 32) as u32 <= reach {
                        keys.swap(i, end);
                        end += 1;
                    }
                }
                stage1 += s1.elapsed();
                let s2 = Instant::now();
                self.reserve_cache(end);
                let mut more = top;
                self.score(qw, &keys[pool..end], params.gamma, &mut more, &mut stats.decodes)?;
                top = take_top(more, params.k);
                stage2 += s2.elapsed();
                pool = end;
                stats.expansions = 1;
            }
        }
        stats.pool = pool;
        stats.stage1 = stage1;
        stats.stage2 = stage2;
        Ok(QueryResult {
            timestep: None,
            hits: top,
            stats,
        })
    }

    /// Grows the cache to hold a whole pool; it never shrinks.
    fn reserve_cache(&mut self, pool: usize) {
        if pool > self.cache.cap().get() {
            self.cache.resize(NonZeroUsize::new(pool).unwrap());
        }
    }

    /// Decodes masks for `keys` and appends their hits.
    fn score(
        &mut self,
        qw: &[u64],
        keys: &[u64],
        gamma: Weight,
        hits: &mut Vec<Hit>,
        decodes: &mut usize,
    ) -> Result<()> {
        let book = self.book;
        hits.reserve(keys.len());
        for &key in keys {
            let i = (key & 0xffff_ffff) as usize;
            let h = (key >> 32) as u32;
            let m = self.mask(i, decodes)?;
            let masked = xor_masked_popcount(qw, book.hash_words(i), m.words());
            hits.push(Hit {
                index: i,
                delta: Distance::discounted(h, masked, gamma),
                raw: h,
            });
        }
        Ok(())
    }
}

/// Exhaustive search; decodes all `N` masks.
pub fn topk_exact(q: &BitHash, book: &Codebook, params: &QueryParams) -> Result<QueryResult> {
    QuerySession::new(book, 1).search(q, &params.exact())
}

/// Two-stage search; see the module docs.
pub fn topk_filtered(q: &BitHash, book: &Codebook, params: &QueryParams) -> Result<QueryResult> {
    let mut p = *params;
    p.mode = SearchMode::Filtered;
    QuerySession::for_params(book, &p).search(q, &p)
}

/// Ranking by raw Hamming distance alone, never touching the masks.
pub fn topk_raw(q: &BitHash, book: &Codebook, k: usize, exclude: Option<usize>) -> Result<QueryResult> {
    q.check_same_width(book.width())?;
    let start = Instant::now();
    let qw = q.words();
    let mut keys: Vec<u64> = Vec::with_capacity(book.len());
    for i in 0..book.len() {
        if Some(i) == exclude {
            continue;
        }
        keys.push((xor_popcount(qw, book.hash_words(i)) as u64) << 32 | i as u64);
    }
    let k = k.min(keys.len());
    if k > 0 && k < keys.len() {
        keys.select_nth_unstable(k - 1);
    }
    keys.truncate(k);
    keys.sort_unstable();
    let hits = keys
        .into_iter()
        .map(|key| {
            let h = (key >> 32) as u32;
            Hit {
                index: (key & 0xffff_ffff) as usize,
                delta: Distance::from_raw(h),
                raw: h,
            }
        })
        .collect();
    Ok(QueryResult {
        timestep: None,
        hits,
        stats: QueryStats {
            stage1: start.elapsed(),
            ..QueryStats::default()
        },
    })
}

/// Timestep `ceil(level * T)` for an observation level in `(0, 1]`.
pub fn observation_timestep(level: Weight, len: usize) -> usize {
    let t = (level.num() as u64 * len as u64).div_ceil(level.den() as u64) as usize;
    t.max(1)
}

/// `{ceil(T / 3), ceil(2T / 3), T}`.
pub fn thirds_schedule(len: usize) -> Vec<usize> {
    [Weight::new(1, 3), Weight::new(2, 3), Ok(Weight::ONE)]
        .into_iter()
        .map(|w| observation_timestep(w.unwrap(), len))
        .collect()
}

/// One result per scheduled 1-based timestep, querying with `hashes[t - 1]`.
pub fn stream_query(
    hashes: &[BitHash],
    book: &Codebook,
    params: &QueryParams,
    schedule: &[usize],
) -> Result<Vec<QueryResult>> {
    let mut session = QuerySession::for_params(book, params);
    stream_in_session(&mut session, hashes, params, schedule, None)
}

pub(crate) fn stream_in_session(
    session: &mut QuerySession<'_>,
    hashes: &[BitHash],
    params: &QueryParams,
    schedule: &[usize],
    exclude: Option<usize>,
) -> Result<Vec<QueryResult>> {
    for &t in schedule {
        if t == 0 || t > hashes.len() {
            return Err(Error::ScheduleOutOfRange { t, len: hashes.len() });
        }
    }
    schedule
        .iter()
        .map(|&t| {
            let mut r = session.search_excluding(&hashes[t - 1], params, exclude)?;
            r.timestep = Some(t);
            Ok(r)
        })
        .collect()
}
