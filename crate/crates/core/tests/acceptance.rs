//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uhash::combinatorics::{binomial, compressed_width, log2_big, rank_lex, saving_lower_bound, unrank, CombinationRank};
use uhash::eval::{evaluate, evaluate_plain, EvalProtocol};
use uhash::ingest::{synthesize, SynthConfig};
use uhash::query::{
    modulated_distance, stream_query, thirds_schedule, topk_exact, topk_filtered, topk_raw, QueryParams,
    QuerySession,
};
use uhash::{BitHash, BitMask, Codebook, CodebookBuilder, Weight};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err(format!($($arg)*));
        }
    };
}

// Tolerances and sizes, pinned.
const BOUND_GUARD: f64 = 1.0 / (1u64 << 20) as f64;
const BIG_ROUND_TRIPS: usize = 10_000;
const ORACLE_TUPLES: usize = 100_000;
const FILTER_INSTANCES: usize = 1_000;
const BENEFIT_MARGIN: f64 = 0.01;
const BENEFIT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const BENCH_N: usize = 1_000_000;
const BENCH_QUERIES: usize = 25;
const LATENCY_RATIO: f64 = 2.0;

fn random_hash(rng: &mut ChaCha8Rng, d: usize) -> BitHash {
    let bits: Vec<bool> = (0..d).map(|_| rng.random()).collect();
    BitHash::from_bits(&bits).unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, d: usize, k: usize) -> BitMask {
    let mut idx: Vec<usize> = (0..d).collect();
    for i in 0..k {
        let j = rng.random_range(i..d);
        idx.swap(i, j);
    }
    BitMask::from_positions(d, idx[..k].iter().copied()).unwrap()
}

fn random_book(rng: &mut ChaCha8Rng, hashes: &[BitHash], d: usize, k: usize) -> Codebook {
    let mut b = CodebookBuilder::with_capacity(d, k, Weight::ONE, hashes.len()).unwrap();
    for (i, h) in hashes.iter().enumerate() {
        b.push(format!("e{}", i), vec![], h, &random_mask(rng, d, k)).unwrap();
    }
    b.finish()
}

fn table_widths() -> Outcome {
    let table: [(usize, [(usize, usize); 4]); 4] = [
        (96, [(12, 50), (24, 75), (36, 89), (48, 93)]),
        (128, [(16, 67), (32, 101), (48, 119), (64, 125)]),
        (192, [(24, 101), (48, 152), (72, 180), (96, 188)]),
        (256, [(32, 136), (64, 204), (96, 241), (128, 252)]),
    ];
    for (d, row) in table {
        for (k, expected) in row {
            let got = compressed_width(d, k);
            ensure!(got == expected, "({}, {}) -> {}, expected {}", d, k, got, expected);
        }
    }
    Ok("16 of 16 cells exact".into())
}

fn saving_bound() -> Outcome {
    let mut tightest = f64::INFINITY;
    for d in (2..=256).step_by(2) {
        let lhs = d as f64 - log2_big(&binomial(d, d / 2).unwrap());
        let rhs = saving_lower_bound(d);
        ensure!(lhs > rhs + BOUND_GUARD, "d = {}: {} <= {}", d, lhs, rhs + BOUND_GUARD);
        tightest = tightest.min(lhs - rhs);
    }
    Ok(format!("128 even widths, smallest gap {:.3e}", tightest))
}

fn rank_bijection() -> Outcome {
    let mut checked = 0usize;
    for d in 1..=16usize {
        let mut seen = vec![Vec::new(); d + 1];
        for x in 0u32..(1 << d) {
            let positions = (0..d).filter(|&i| x >> (d - 1 - i) & 1 == 1);
            let mask = BitMask::from_positions(d, positions).unwrap();
            let rank = rank_lex(&mask);
            ensure!(unrank(&rank) == mask, "d = {}: round trip failed for {:b}", d, x);
            seen[mask.ones_count()].push(rank.value().clone());
            checked += 1;
        }
        for (k, ranks) in seen.iter_mut().enumerate() {
            ranks.sort();
            let total = binomial(d, k).unwrap();
            ensure!(
                ranks.len() as u64 == u64::try_from(&total).unwrap()
                    && ranks.iter().enumerate().all(|(i, r)| *r == (i as u64).into()),
                "d = {}, k = {}: ranks do not cover 0..C",
                d,
                k
            );
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc3);
    for _ in 0..BIG_ROUND_TRIPS {
        let mask = random_mask(&mut rng, 256, 128);
        let rank = rank_lex(&mask);
        ensure!(unrank(&rank) == mask, "d = 256 round trip failed");
        let back = CombinationRank::new(rank.value().clone(), 256, 128).unwrap();
        ensure!(rank_lex(&unrank(&back)) == back, "d = 256 rank round trip failed");
    }
    Ok(format!("{} exhaustive masks, {} random at d = 256", checked, BIG_ROUND_TRIPS))
}

fn distance_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc4);
    for i in 0..ORACLE_TUPLES {
        let d = if i % 2 == 0 { 32 } else { 128 };
        let q = random_hash(&mut rng, d);
        let r = random_hash(&mut rng, d);
        let k = rng.random_range(0..=d);
        let mask = random_mask(&mut rng, d, k);
        let den = rng.random_range(1..=1000u32);
        let gamma = Weight::new(rng.random_range(0..=den), den).unwrap();
        let got = modulated_distance(&q, &r, &mask, gamma).unwrap();
        // Σ conflicts * (1 - γ F_i), scaled by γ's denominator
        let (gn, gd) = (gamma.num() as u128, gamma.den() as u128);
        let naive: u128 = (0..d)
            .filter(|&j| q.get(j) != r.get(j))
            .map(|j| if mask.get(j) { gd - gn } else { gd })
            .sum();
        ensure!(
            got.numerator() as u128 * gd == naive * got.denominator() as u128,
            "tuple {}: {} vs {}/{}",
            i,
            got,
            naive,
            gd
        );
    }
    Ok(format!("{} tuples at d in {{32, 128}}", ORACLE_TUPLES))
}

fn reduction() -> Outcome {
    let out = synthesize(&SynthConfig::default()).unwrap();
    let protocol = EvalProtocol {
        ks: vec![1, 5, 10, 50],
        ..EvalProtocol::default()
    };
    let book = Codebook::build(128, &out.database, Weight::new(1, 2).unwrap(), 16).unwrap();
    let plain = evaluate_plain(&book, &out.queries, &protocol).unwrap();
    for mode in [QueryParams::new(Weight::ZERO, 10), QueryParams::new(Weight::ZERO, 10).exact()] {
        let zero = evaluate(&book, &out.queries, &protocol, &mode).unwrap();
        ensure!(zero.queries == plain.queries, "gamma = 0 rankings differ ({:?})", mode.mode);
        ensure!(zero.rows == plain.rows, "gamma = 0 mAP differs");
    }
    let flat = Codebook::build(128, &out.database, Weight::new(1, 2).unwrap(), 0).unwrap();
    let flat_plain = evaluate_plain(&flat, &out.queries, &protocol).unwrap();
    let masked = evaluate(&flat, &out.queries, &protocol, &QueryParams::new(Weight::ONE, 10)).unwrap();
    ensure!(masked.queries == flat_plain.queries, "k_bs = 0 rankings differ");
    ensure!(masked.rows.iter().zip(&flat_plain.rows).all(|(a, b)| a.map == b.map), "k_bs = 0 mAP differs");
    Ok(format!(
        "{} queries x {} levels x {} K values identical",
        plain.queries.len(),
        protocol.levels.len(),
        protocol.ks.len()
    ))
}

fn filtered_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc6);
    let (n, d, k, pool) = (500, 64, 10, 50);
    let mut expanded = 0;
    for inst in 0..FILTER_INSTANCES {
        let hashes: Vec<BitHash> = if inst % 2 == 0 {
            (0..n).map(|_| random_hash(&mut rng, d)).collect()
        } else {
            // clustered hashes produce many raw-distance ties
            let centers: Vec<BitHash> = (0..4).map(|_| random_hash(&mut rng, d)).collect();
            (0..n)
                .map(|_| {
                    let mut h = centers[rng.random_range(0..4)].clone();
                    for _ in 0..rng.random_range(0..6) {
                        h.flip(rng.random_range(0..d));
                    }
                    h
                })
                .collect()
        };
        let k_bs = rng.random_range(0..=d / 2);
        let book = random_book(&mut rng, &hashes, d, k_bs);
        let gamma = Weight::new(rng.random_range(0..=4), 4).unwrap();
        let q = if inst % 4 == 1 {
            hashes[rng.random_range(0..n)].clone()
        } else {
            random_hash(&mut rng, d)
        };
        let params = QueryParams::new(gamma, k).with_pool(pool);
        let f = topk_filtered(&q, &book, &params).unwrap();
        let e = topk_exact(&q, &book, &params).unwrap();
        ensure!(f.hits == e.hits, "instance {}: filtered differs from exact", inst);
        if f.stats.expansions > 0 {
            expanded += 1;
        }
    }
    Ok(format!("{} instances equal, {} needed expansion", FILTER_INSTANCES, expanded))
}

fn uncertainty_benefit() -> Outcome {
    let protocol = EvalProtocol::default();
    let full = Weight::ONE;
    let mut gain = 0.0;
    let mut base = 0.0;
    for seed in BENEFIT_SEEDS {
        let cfg = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        ensure!(
            (cfg.class_count, cfg.clips_per_class, cfg.queries_per_class, cfg.d, cfg.t, cfg.unstable_bit_count)
                == (10, 40, 10, 128, 24, 16)
                && cfg.instability_rate == 0.5
                && cfg.secondary_lag == 0.4,
            "fixture drifted from the frozen configuration"
        );
        let out = synthesize(&cfg).unwrap();
        let book = Codebook::build(128, &out.database, Weight::ZERO, 16).unwrap();
        let with = evaluate(&book, &out.queries, &protocol, &QueryParams::new(Weight::new(3, 4).unwrap(), 10)).unwrap();
        let without = evaluate(&book, &out.queries, &protocol, &QueryParams::new(Weight::ZERO, 10)).unwrap();
        let (a, b) = (with.map(10, full).unwrap(), without.map(10, full).unwrap());
        gain += (a - b) / BENEFIT_SEEDS.len() as f64;
        base += b / BENEFIT_SEEDS.len() as f64;
    }
    ensure!(gain > BENEFIT_MARGIN, "mean gain {:.4} <= {}", gain, BENEFIT_MARGIN);
    Ok(format!("mAP@10 {:.4} -> {:.4} (+{:.2} pp)", base, base + gain, gain * 100.0))
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

fn speed_conservation() -> Outcome {
    let (d, k_bs) = (128, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc8);
    let hashes: Vec<BitHash> = (0..BENCH_N).map(|_| random_hash(&mut rng, d)).collect();
    let book = random_book(&mut rng, &hashes, d, k_bs);
    drop(hashes);
    let gamma = Weight::new(3, 4).unwrap();
    let params = QueryParams::new(gamma, 10);
    let initial = params.initial_pool(book.len());
    let queries: Vec<BitHash> = (0..BENCH_QUERIES).map(|_| random_hash(&mut rng, d)).collect();

    let mut raw_t = Vec::new();
    let mut filt_t = Vec::new();
    let mut heur_t = Vec::new();
    let mut max_pool = 0;
    for q in &queries {
        let t = Instant::now();
        let raw = topk_raw(q, &book, params.k, None).unwrap();
        raw_t.push(t.elapsed());

        let mut session = QuerySession::for_params(&book, &params);
        let t = Instant::now();
        let r = session.search(q, &params).unwrap();
        filt_t.push(t.elapsed());
        ensure!(r.stats.decodes <= r.stats.pool, "{} decodes for a pool of {}", r.stats.decodes, r.stats.pool);
        max_pool = max_pool.max(r.stats.pool);

        let fixed = params.without_expansion();
        let mut session = QuerySession::for_params(&book, &fixed);
        let t = Instant::now();
        let h = session.search(q, &fixed).unwrap();
        heur_t.push(t.elapsed());
        ensure!(h.stats.decodes <= initial, "{} decodes > K' = {}", h.stats.decodes, initial);
        ensure!(raw.hits.len() == r.hits.len(), "short result");
    }
    let (raw, filt, heur) = (median(raw_t), median(filt_t), median(heur_t));
    let ratio = filt.as_secs_f64() / raw.as_secs_f64();
    let detail = format!(
        "raw {:.2?}, filtered {:.2?} (x{:.2}, pool <= {}), fixed K' {:.2?}",
        raw, filt, ratio, max_pool, heur
    );
    ensure!(ratio <= LATENCY_RATIO, "{}", detail);
    Ok(detail)
}

fn redundancy_limit() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc9);
    let mut built = 0;
    for d in [8usize, 16, 64, 96, 128, 256, 512, 1024] {
        for k in [1, d / 4, d / 2, d - 1] {
            for n in [1usize, 7, 200] {
                let hashes: Vec<BitHash> = (0..n).map(|_| random_hash(&mut rng, d)).collect();
                let book = random_book(&mut rng, &hashes, d, k);
                let rep = book.redundancy();
                ensure!(rep.mask_bits < (d * n) as u64, "d = {}, k = {}, n = {}: {} bits", d, k, n, rep.mask_bits);
                book.save(dir.path().join("c.uhc")).map_err(|e| e.to_string())?;
                built += 1;
            }
        }
    }
    Ok(format!("{} codebooks saved below d*N mask bits", built))
}

fn observation_levels() -> Outcome {
    let out = synthesize(&SynthConfig::default()).unwrap();
    let book = Codebook::build(128, &out.database, Weight::ZERO, 16).unwrap();
    let schedule = thirds_schedule(24);
    ensure!(schedule == [8, 16, 24], "schedule {:?}", schedule);
    let params = QueryParams::new(Weight::new(3, 4).unwrap(), 10);
    let results = stream_query(out.queries[0].secondary(), &book, &params, &schedule).unwrap();
    let steps: Vec<_> = results.iter().map(|r| r.timestep).collect();
    ensure!(steps == [Some(8), Some(16), Some(24)], "timesteps {:?}", steps);
    let report = evaluate(&book, &out.queries, &EvalProtocol::default(), &params).unwrap();
    let levels: Vec<String> = report.rows.iter().map(|r| r.level.to_string()).collect();
    ensure!(levels == ["1/3", "2/3", "1"], "columns {:?}", levels);
    let maps: Vec<String> = report.rows.iter().map(|r| format!("{:.3}", r.map)).collect();
    Ok(format!("columns 1/3, 2/3, 1: mAP@10 {}", maps.join(" / ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("compressed widths match the reference table", table_widths),
        ("balanced-mask saving exceeds its lower bound", saving_bound),
        ("rank/unrank is a bijection", rank_bijection),
        ("modulated distance matches per-bit oracle", distance_oracle),
        ("gamma = 0 and k_bs = 0 reduce to plain Hamming", reduction),
        ("filtered search equals exact search", filtered_exactness),
        ("uncertainty discounting improves mAP@10", uncertainty_benefit),
        ("filtered search conserves speed", speed_conservation),
        ("mask region stays below d*N bits", redundancy_limit),
        ("three observation-level columns", observation_levels),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {}", msg))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {} ({}; {:.2}s)", i + 1, name, detail, secs),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {} ({}; {:.2}s)", i + 1, name, why, secs);
            }
        }
    }
    println!("acceptance: {} passed, {} failed", criteria.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
