//! mAP@K evaluation over observation levels and hyperparameter sweeps.

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::query::{observation_timestep, stream_in_session, topk_raw, QueryParams, QueryResult, QuerySession};
use crate::uncertainty::ClipTrace;
use crate::weight::Weight;

/// AP over the first `k` ranked flags, normalized by `min(k, total_relevant)`.
pub fn average_precision_at_k(flags: &[bool], total_relevant: usize, k: usize) -> f64 {
    let norm = k.min(total_relevant);
    if norm == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &f) in flags.iter().take(k).enumerate() {
        if f {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / norm as f64
}

/// Evaluation settings shared by every run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalProtocol {
    pub ks: Vec<usize>,
    pub levels: Vec<Weight>,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            ks: vec![10],
            levels: vec![
                Weight::new(1, 3).unwrap(),
                Weight::new(2, 3).unwrap(),
                Weight::ONE,
            ],
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::InvalidParams("K values must be non-empty and positive".into()));
        }
        if self.levels.is_empty() || self.levels.iter().any(|l| l.is_zero()) {
            return Err(Error::InvalidParams("observation levels must lie in (0, 1]".into()));
        }
        Ok(())
    }

    fn max_k(&self) -> usize {
        self.ks.iter().copied().max().unwrap_or(0)
    }
}

/// One line of the report.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub gamma: Weight,
    pub theta: Weight,
    pub k_bs: usize,
    pub k: usize,
    pub level: Weight,
    pub map: f64,
    pub query_count: usize,
}

/// Per-query detail, indexed like [`EvalProtocol::levels`] and [`EvalProtocol::ks`].
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub clip_id: String,
    /// Ranked codebook indices per observation level.
    pub rankings: Vec<Vec<usize>>,
    /// `ap[level][k]`.
    pub ap: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub queries: Vec<QueryOutcome>,
    /// Queries skipped for having no labels.
    pub unlabeled: usize,
}

impl EvalReport {
    /// mAP for `(k, level)`, if that cell was evaluated.
    pub fn map(&self, k: usize, level: Weight) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.k == k && r.level == level)
            .map(|r| r.map)
    }
}

/// Database indices relevant to `query`, excluding its own entry.
fn relevant_set(book: &Codebook, query: &ClipTrace, own: Option<usize>) -> HashSet<usize> {
    (0..book.len())
        .filter(|&i| Some(i) != own)
        .filter(|&i| book.labels(i).iter().any(|l| query.labels().contains(l)))
        .collect()
}

fn outcome(
    book: &Codebook,
    query: &ClipTrace,
    protocol: &EvalProtocol,
    own: Option<usize>,
    results: Vec<QueryResult>,
) -> QueryOutcome {
    let relevant = relevant_set(book, query, own);
    let rankings: Vec<Vec<usize>> = results.iter().map(QueryResult::indices).collect();
    let ap = rankings
        .iter()
        .map(|ranked| {
            let flags: Vec<bool> = ranked.iter().map(|i| relevant.contains(i)).collect();
            protocol
                .ks
                .iter()
                .map(|&k| average_precision_at_k(&flags, relevant.len(), k))
                .collect()
        })
        .collect();
    QueryOutcome {
        clip_id: query.clip_id().to_string(),
        rankings,
        ap,
    }
}

fn schedule(protocol: &EvalProtocol, query: &ClipTrace) -> Vec<usize> {
    protocol
        .levels
        .iter()
        .map(|&l| observation_timestep(l, query.len()))
        .collect()
}

fn labeled(queries: &[ClipTrace]) -> (Vec<&ClipTrace>, usize) {
    let kept: Vec<&ClipTrace> = queries.iter().filter(|q| !q.labels().is_empty()).collect();
    let skipped = queries.len() - kept.len();
    (kept, skipped)
}

fn check_widths(book: &Codebook, queries: &[&ClipTrace]) -> Result<()> {
    for q in queries {
        if q.width() != book.width() {
            return Err(Error::WidthMismatch {
                left: book.width(),
                right: q.width(),
            });
        }
    }
    Ok(())
}

fn summarize(
    book: &Codebook,
    protocol: &EvalProtocol,
    gamma: Weight,
    queries: Vec<QueryOutcome>,
    unlabeled: usize,
) -> EvalReport {
    let header = book.header();
    let mut rows = Vec::with_capacity(protocol.ks.len() * protocol.levels.len());
    for (ki, &k) in protocol.ks.iter().enumerate() {
        for (li, &level) in protocol.levels.iter().enumerate() {
            let sum: f64 = queries.iter().map(|q| q.ap[li][ki]).sum();
            rows.push(EvalRow {
                gamma,
                theta: header.theta,
                k_bs: header.k_bs,
                k,
                level,
                map: sum / queries.len() as f64,
                query_count: queries.len(),
            });
        }
    }
    EvalReport {
        rows,
        queries,
        unlabeled,
    }
}

/// Streams every labeled query's secondary trace through the codebook.
///
/// Each query is issued at `ceil(level * T)` for every observation level,
/// never matching the database entry with its own clip id. Searches return
/// the top `max(ks)` entries; `params.k` is ignored.
pub fn evaluate(
    book: &Codebook,
    queries: &[ClipTrace],
    protocol: &EvalProtocol,
    params: &QueryParams,
) -> Result<EvalReport> {
    protocol.validate()?;
    let (kept, unlabeled) = labeled(queries);
    if kept.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    check_widths(book, &kept)?;
    let params = QueryParams {
        k: protocol.max_k(),
        ..*params
    };
    params.validate()?;
    let outcomes = kept
        .par_iter()
        .map_init(
            || QuerySession::for_params(book, &params),
            |session, q| {
                let own = book.index_of(q.clip_id());
                let results = stream_in_session(session, q.secondary(), &params, &schedule(protocol, q), own)?;
                Ok(outcome(book, q, protocol, own, results))
            },
        )
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(book, protocol, params.gamma, outcomes, unlabeled))
}

/// [`evaluate`] ranking by plain Hamming distance, ignoring stored masks.
pub fn evaluate_plain(book: &Codebook, queries: &[ClipTrace], protocol: &EvalProtocol) -> Result<EvalReport> {
    protocol.validate()?;
    let (kept, unlabeled) = labeled(queries);
    if kept.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    check_widths(book, &kept)?;
    let k = protocol.max_k();
    let outcomes = kept
        .par_iter()
        .map(|q| {
            let own = book.index_of(q.clip_id());
            let results = schedule(protocol, q)
                .into_iter()
                .map(|t| topk_raw(&q.secondary()[t - 1], book, k, own))
                .collect::<Result<Vec<_>>>()?;
            Ok(outcome(book, q, protocol, own, results))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(book, protocol, Weight::ZERO, outcomes, unlabeled))
}

/// Axes of a hyperparameter sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepGrid {
    pub gammas: Vec<Weight>,
    pub thetas: Vec<Weight>,
    pub k_bs: Vec<usize>,
}

fn quarters() -> Vec<Weight> {
    (0..=4).map(|n| Weight::new(n, 4).unwrap()).collect()
}

impl SweepGrid {
    /// Quarter steps for γ and θ over the given bit-skepticism axis.
    pub fn with_k_bs(k_bs: Vec<usize>) -> Self {
        Self {
            gammas: quarters(),
            thetas: quarters(),
            k_bs,
        }
    }

    pub fn len(&self) -> usize {
        self.gammas.len() * self.thetas.len() * self.k_bs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Best cell and grid mean for one `(K, level)` column.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub k: usize,
    pub level: Weight,
    pub best: EvalRow,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    /// θ outermost, then k_bs, then γ.
    pub rows: Vec<EvalRow>,
    pub summaries: Vec<SweepSummary>,
    pub unlabeled: usize,
}

/// Evaluates every grid cell, building one codebook per `(θ, k_bs)`.
pub fn sweep(
    d: usize,
    database: &[ClipTrace],
    queries: &[ClipTrace],
    protocol: &EvalProtocol,
    grid: &SweepGrid,
    params: &QueryParams,
) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(Error::InvalidParams("sweep grid is empty".into()));
    }
    let mut rows = Vec::with_capacity(grid.len() * protocol.ks.len() * protocol.levels.len());
    let mut unlabeled = 0;
    for &theta in &grid.thetas {
        for &k_bs in &grid.k_bs {
            let book = Codebook::build(d, database, theta, k_bs)?;
            for &gamma in &grid.gammas {
                let report = evaluate(&book, queries, protocol, &QueryParams { gamma, ..*params })?;
                unlabeled = report.unlabeled;
                rows.extend(report.rows);
            }
        }
    }
    let mut summaries = Vec::new();
    for &k in &protocol.ks {
        for &level in &protocol.levels {
            let column: Vec<&EvalRow> = rows.iter().filter(|r| r.k == k && r.level == level).collect();
            let mut best = column[0];
            for r in &column[1..] {
                if r.map > best.map {
                    best = r;
                }
            }
            let mean = column.iter().map(|r| r.map).sum::<f64>() / column.len() as f64;
            summaries.push(SweepSummary {
                k,
                level,
                best: best.clone(),
                mean,
            });
        }
    }
    Ok(SweepReport {
        rows,
        summaries,
        unlabeled,
    })
}

pub const COLUMNS: [&str; 7] = ["gamma", "theta", "k_bs", "K", "observation_level", "mAP", "query_count"];

fn cells(r: &EvalRow) -> [String; 7] {
    [
        r.gamma.to_string(),
        r.theta.to_string(),
        r.k_bs.to_string(),
        r.k.to_string(),
        r.level.to_string(),
        format!("{:.6}", r.map),
        r.query_count.to_string(),
    ]
}

pub fn render_csv(rows: &[EvalRow]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&cells(r).join(","));
        out.push('\n');
    }
    out
}

/// Aligned, right-justified table.
pub fn render_text(rows: &[EvalRow]) -> String {
    let body: Vec<[String; 7]> = rows.iter().map(cells).collect();
    let mut widths = COLUMNS.map(str::len);
    for r in &body {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |cols: &[&str]| {
        let parts: Vec<String> = cols
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{:>w$}", c, w = w))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&COLUMNS);
    for r in &body {
        line(&r.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitHash;
    use crate::ingest::{synthesize, SynthConfig};
    use proptest::prelude::*;

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision_at_k(&[true; 5], 9, 5), 1.0);
        assert_eq!(average_precision_at_k(&[false; 5], 9, 5), 0.0);
        let ap = average_precision_at_k(&[true, false, true], 2, 3);
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(average_precision_at_k(&[true, true], 0, 2), 0.0);
        // fewer relevant than K still allows a perfect score
        assert_eq!(average_precision_at_k(&[true, true, false], 2, 3), 1.0);
    }

    proptest! {
        #[test]
        fn ap_in_unit_interval(flags in prop::collection::vec(any::<bool>(), 0..40), extra in 0usize..10, k in 1usize..40) {
            let rel = flags.iter().filter(|&&f| f).count() + extra;
            let ap = average_precision_at_k(&flags, rel, k);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ap));
        }
    }

    fn fixture() -> (Vec<ClipTrace>, Vec<ClipTrace>) {
        let out = synthesize(&SynthConfig {
            class_count: 4,
            clips_per_class: 10,
            queries_per_class: 3,
            d: 64,
            t: 12,
            centroid_distance: 16.0,
            unstable_bit_count: 8,
            ..SynthConfig::default()
        })
        .unwrap();
        (out.database, out.queries)
    }

    #[test]
    fn self_match_is_excluded() {
        let (db, _) = fixture();
        let book = Codebook::build(64, &db, Weight::ZERO, 8).unwrap();
        let p = QueryParams::new(Weight::ONE, 5);
        let r = evaluate(&book, &db, &EvalProtocol::default(), &p).unwrap();
        for (q, o) in db.iter().zip(&r.queries) {
            let own = book.index_of(q.clip_id()).unwrap();
            assert!(o.rankings.iter().all(|rank| !rank.contains(&own)));
        }
    }

    #[test]
    fn planted_duplicates_give_perfect_map_at_one() {
        let d = 32;
        let mut db = Vec::new();
        for c in 0..20u32 {
            let h = BitHash::from_words(d, vec![(c as u64 * 0x9e37_79b9) << 32]).unwrap();
            for suffix in ["a", "b"] {
                db.push(
                    ClipTrace::new(format!("{}{}", c, suffix), vec![format!("l{}", c)], vec![h.clone()], vec![h.clone()])
                        .unwrap(),
                );
            }
        }
        let book = Codebook::build(d, &db, Weight::ONE, 4).unwrap();
        let protocol = EvalProtocol {
            ks: vec![1],
            levels: vec![Weight::ONE],
        };
        let r = evaluate(&book, &db, &protocol, &QueryParams::new(Weight::ONE, 1)).unwrap();
        assert_eq!(r.rows[0].map, 1.0);
        assert_eq!(r.rows[0].query_count, 40);
    }

    #[test]
    fn unlabeled_queries_are_counted() {
        let (db, queries) = fixture();
        let book = Codebook::build(64, &db, Weight::ZERO, 8).unwrap();
        let mut qs = queries.clone();
        let q = &queries[0];
        qs.push(ClipTrace::new("nolabel", vec![], q.primary().to_vec(), q.secondary().to_vec()).unwrap());
        let r = evaluate(&book, &qs, &EvalProtocol::default(), &QueryParams::new(Weight::ONE, 10)).unwrap();
        assert_eq!(r.unlabeled, 1);
        assert_eq!(r.rows[0].query_count, queries.len());
        let only = &qs[qs.len() - 1..];
        assert!(matches!(
            evaluate(&book, only, &EvalProtocol::default(), &QueryParams::new(Weight::ONE, 10)),
            Err(Error::EmptyQuerySet)
        ));
    }

    #[test]
    fn gamma_zero_matches_plain() {
        let (db, queries) = fixture();
        let book = Codebook::build(64, &db, Weight::new(1, 2).unwrap(), 8).unwrap();
        let protocol = EvalProtocol {
            ks: vec![1, 5, 10],
            ..EvalProtocol::default()
        };
        let a = evaluate(&book, &queries, &protocol, &QueryParams::new(Weight::ZERO, 10)).unwrap();
        let b = evaluate_plain(&book, &queries, &protocol).unwrap();
        assert_eq!(a.queries, b.queries);
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn map_is_query_order_invariant() {
        let (db, queries) = fixture();
        let book = Codebook::build(64, &db, Weight::ZERO, 8).unwrap();
        let p = QueryParams::new(Weight::new(3, 4).unwrap(), 10);
        let a = evaluate(&book, &queries, &EvalProtocol::default(), &p).unwrap();
        let mut rev = queries.clone();
        rev.reverse();
        let b = evaluate(&book, &rev, &EvalProtocol::default(), &p).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert!((x.map - y.map).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_sweep_equals_evaluate() {
        let (db, queries) = fixture();
        let theta = Weight::new(1, 4).unwrap();
        let gamma = Weight::new(3, 4).unwrap();
        let protocol = EvalProtocol::default();
        let params = QueryParams::new(gamma, 10);
        let grid = SweepGrid {
            gammas: vec![gamma],
            thetas: vec![theta],
            k_bs: vec![8],
        };
        let s = sweep(64, &db, &queries, &protocol, &grid, &params).unwrap();
        let book = Codebook::build(64, &db, theta, 8).unwrap();
        let e = evaluate(&book, &queries, &protocol, &params).unwrap();
        assert_eq!(s.rows, e.rows);
    }

    #[test]
    fn sweep_is_deterministic_and_contains_baseline() {
        let (db, queries) = fixture();
        let protocol = EvalProtocol::default();
        let params = QueryParams::new(Weight::ZERO, 10);
        let grid = SweepGrid {
            gammas: vec![Weight::ZERO, Weight::ONE],
            thetas: vec![Weight::ZERO, Weight::ONE],
            k_bs: vec![4, 8],
        };
        let a = sweep(64, &db, &queries, &protocol, &grid, &params).unwrap();
        let b = sweep(64, &db, &queries, &protocol, &grid, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), grid.len() * 3);
        let book = Codebook::build(64, &db, Weight::ZERO, 4).unwrap();
        let plain = evaluate_plain(&book, &queries, &protocol).unwrap();
        for r in a.rows.iter().filter(|r| r.gamma.is_zero()) {
            assert_eq!(Some(r.map), plain.map(r.k, r.level));
        }
        assert_eq!(a.summaries.len(), 3);
    }

    #[test]
    fn reports_render() {
        let row = EvalRow {
            gamma: Weight::new(3, 4).unwrap(),
            theta: Weight::ZERO,
            k_bs: 16,
            k: 10,
            level: Weight::new(1, 3).unwrap(),
            map: 0.5,
            query_count: 7,
        };
        let csv = render_csv(std::slice::from_ref(&row));
        assert_eq!(
            csv,
            "gamma,theta,k_bs,K,observation_level,mAP,query_count\n0.75,0,16,10,1/3,0.500000,7\n"
        );
        let text = render_text(&[row]);
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().contains("0.500000"));
    }
}
