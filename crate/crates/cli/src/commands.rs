use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uhash::eval::{self, EvalProtocol, EvalRow, SweepGrid};
use uhash::ingest::{self, SynthConfig, TraceSet};
use uhash::query::{observation_timestep, topk_raw, QueryParams, QuerySession, SearchMode};
use uhash::{BitHash, BitMask, Codebook, CodebookBuilder, Error, Weight};

use crate::report::{pairs, Table};
use crate::{BenchArgs, BuildArgs, Context, EvalArgs, Format, QueryArgs, SweepArgs, SynthArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io { path: PathBuf, source: io::Error },
    Input { path: Option<PathBuf>, source: Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => 1,
            CliError::Input {
                source: Error::Io(_), ..
            } => 1,
            CliError::Input {
                source: Error::Invariant(_),
                ..
            } => 3,
            CliError::Input { .. } => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{}", m),
            CliError::Io { path, source } => write!(f, "{}: {}", path.display(), source),
            CliError::Input { path: Some(p), source } => write!(f, "{}: {}", p.display(), source),
            CliError::Input { path: None, source } => write!(f, "{}", source),
        }
    }
}

impl From<Error> for CliError {
    fn from(source: Error) -> Self {
        CliError::Input { path: None, source }
    }
}

type CliResult = Result<(), CliError>;

/// Attaches `path` to an engine error, routing I/O failures to [`CliError::Io`].
fn at(path: &Path) -> impl Fn(Error) -> CliError + '_ {
    move |e| match e {
        Error::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        source => CliError::Input {
            path: Some(path.to_path_buf()),
            source,
        },
    }
}

fn read_traces(path: &Path) -> Result<TraceSet, CliError> {
    let f = File::open(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ingest::parse(BufReader::new(f)).map_err(at(path))
}

fn load_codebook(path: &Path) -> Result<Codebook, CliError> {
    Codebook::load(path).map_err(at(path))
}

fn write_traces(path: &Path, width: usize, traces: &[uhash::ClipTrace]) -> CliResult {
    let f = File::create(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ingest::write(BufWriter::new(f), width, traces).map_err(at(path))
}

fn note(ctx: &Context, what: &str, start: Instant) {
    if ctx.verbose {
        eprintln!("{} in {:.2?}", what, start.elapsed());
    }
}

pub fn build(a: &BuildArgs, ctx: &Context) -> CliResult {
    let start = Instant::now();
    let set = read_traces(&a.traces)?;
    note(ctx, "parsed traces", start);
    if a.k_bs == 0 {
        eprintln!("warning: k_bs = 0 flags no bits; every query reduces to plain Hamming ranking");
    }
    let start = Instant::now();
    let book = Codebook::build(set.width, &set.traces, a.theta, a.k_bs).map_err(at(&a.traces))?;
    note(ctx, "built codebook", start);
    book.save(&a.out).map_err(at(&a.out))?;
    let bytes = std::fs::metadata(&a.out)
        .map_err(|source| CliError::Io {
            path: a.out.clone(),
            source,
        })?
        .len();

    let h = book.header();
    let r = book.redundancy();
    let below = if h.n == 0 {
        "n/a"
    } else if r.within_limit() {
        "yes"
    } else {
        "no"
    };
    let items = [
        ("entries", h.n.to_string()),
        ("d", h.d.to_string()),
        ("k_bs", h.k_bs.to_string()),
        ("theta", h.theta.to_string()),
        ("d_u", h.d_u.to_string()),
        ("file_bytes", bytes.to_string()),
        ("hash_bits", r.hash_bits.to_string()),
        ("mask_bits", r.mask_bits.to_string()),
        ("margin_bits", r.margin_bits().to_string()),
    ];
    match a.format {
        Format::Text => {
            print!("{}", pairs(&items, Format::Text));
            println!("mask region < dN bits: {}", below);
        }
        Format::Csv => {
            let mut all = items.to_vec();
            all.push(("mask_region_below_dn", below.to_string()));
            print!("{}", pairs(&all, Format::Csv));
        }
    }
    Ok(())
}

pub fn query(a: &QueryArgs, ctx: &Context) -> CliResult {
    let book = load_codebook(&a.codebook)?;
    let set = read_traces(&a.traces)?;
    if set.width != book.width() {
        return Err(at(&a.traces)(Error::WidthMismatch {
            left: book.width(),
            right: set.width,
        }));
    }
    let selected: Vec<&uhash::ClipTrace> = if a.clips.is_empty() {
        set.traces.iter().collect()
    } else {
        a.clips
            .iter()
            .map(|id| {
                set.traces
                    .iter()
                    .find(|t| t.clip_id() == id)
                    .ok_or_else(|| at(&a.traces)(Error::InvalidParams(format!("no clip `{}` in trace file", id))))
            })
            .collect::<Result<_, _>>()?
    };
    let params = a.search.params(a.k);
    let mut session = QuerySession::for_params(&book, &params);
    let mut table = Table::new(&["query", "timestep", "rank", "clip_id", "delta", "raw"]);
    let start = Instant::now();
    let mut decodes = 0;
    for q in selected {
        let schedule: Vec<usize> = if a.at.is_empty() {
            a.levels.iter().map(|&l| observation_timestep(l, q.len())).collect()
        } else {
            a.at.clone()
        };
        let exclude = if a.exclude_self { book.index_of(q.clip_id()) } else { None };
        for t in schedule {
            if t == 0 || t > q.len() {
                return Err(Error::ScheduleOutOfRange { t, len: q.len() }.into());
            }
            let r = session.search_excluding(&q.secondary()[t - 1], &params, exclude)?;
            decodes += r.stats.decodes;
            for (rank, hit) in r.hits.iter().enumerate() {
                table.push(vec![
                    q.clip_id().to_string(),
                    t.to_string(),
                    (rank + 1).to_string(),
                    book.clip_id(hit.index).to_string(),
                    hit.delta.to_string(),
                    hit.raw.to_string(),
                ]);
            }
        }
    }
    note(ctx, &format!("queries ({} mask decodes)", decodes), start);
    print!("{}", table.render(a.format));
    Ok(())
}

fn print_rows(rows: &[EvalRow], format: Format) {
    match format {
        Format::Text => print!("{}", eval::render_text(rows)),
        Format::Csv => print!("{}", eval::render_csv(rows)),
    }
}

fn report_unlabeled(n: usize) {
    if n > 0 {
        eprintln!("note: skipped {} unlabeled queries", n);
    }
}

pub fn eval(a: &EvalArgs, ctx: &Context) -> CliResult {
    let book = load_codebook(&a.codebook)?;
    let set = read_traces(&a.queries)?;
    let protocol = EvalProtocol {
        ks: a.ks.clone(),
        levels: a.levels.clone(),
    };
    let start = Instant::now();
    let report = if a.plain {
        eval::evaluate_plain(&book, &set.traces, &protocol)?
    } else {
        let k = a.ks.iter().copied().max().unwrap_or(1);
        eval::evaluate(&book, &set.traces, &protocol, &a.search.params(k))?
    };
    note(ctx, "evaluated", start);
    report_unlabeled(report.unlabeled);
    print_rows(&report.rows, a.format);
    Ok(())
}

pub fn sweep(a: &SweepArgs, ctx: &Context) -> CliResult {
    let db = read_traces(&a.database)?;
    let queries = read_traces(&a.queries)?;
    let protocol = EvalProtocol {
        ks: a.ks.clone(),
        levels: a.levels.clone(),
    };
    let grid = SweepGrid {
        gammas: a.gammas.clone(),
        thetas: a.thetas.clone(),
        k_bs: a.k_bs.clone(),
    };
    let mut params = QueryParams::new(Weight::ZERO, a.ks.iter().copied().max().unwrap_or(1));
    params.k_prime = a.k_prime;
    params.safety_expansion = !a.no_expansion;
    if a.exact {
        params.mode = SearchMode::Exact;
    }
    let start = Instant::now();
    let report = eval::sweep(db.width, &db.traces, &queries.traces, &protocol, &grid, &params)?;
    note(ctx, &format!("swept {} combinations", grid.len()), start);
    report_unlabeled(report.unlabeled);
    print_rows(&report.rows, a.format);

    let mut summary = Table::new(&[
        "K",
        "observation_level",
        "best_gamma",
        "best_theta",
        "best_k_bs",
        "best_mAP",
        "mean_mAP",
    ]);
    for s in &report.summaries {
        summary.push(vec![
            s.k.to_string(),
            s.level.to_string(),
            s.best.gamma.to_string(),
            s.best.theta.to_string(),
            s.best.k_bs.to_string(),
            format!("{:.6}", s.best.map),
            format!("{:.6}", s.mean),
        ]);
    }
    println!();
    print!("{}", summary.render(a.format));
    Ok(())
}

pub fn synth(a: &SynthArgs, ctx: &Context) -> CliResult {
    let base = SynthConfig::default();
    let cfg = SynthConfig {
        class_count: a.classes.unwrap_or(base.class_count),
        clips_per_class: a.clips_per_class.unwrap_or(base.clips_per_class),
        queries_per_class: a.queries_per_class.unwrap_or(base.queries_per_class),
        d: a.d.unwrap_or(base.d),
        t: a.t.unwrap_or(base.t),
        centroid_distance: a.centroid_distance.unwrap_or(base.centroid_distance),
        clip_noise: a.clip_noise.unwrap_or(base.clip_noise),
        unstable_bit_count: a.unstable_bits.unwrap_or(base.unstable_bit_count),
        instability_rate: a.instability_rate.unwrap_or(base.instability_rate),
        secondary_lag: a.secondary_lag.unwrap_or(base.secondary_lag),
        seed: a.seed.unwrap_or(base.seed),
    };
    let start = Instant::now();
    let out = ingest::synthesize(&cfg)?;
    note(ctx, "synthesized", start);
    write_traces(&a.database, cfg.d, &out.database)?;
    write_traces(&a.queries, cfg.d, &out.queries)?;
    println!("{} database clips -> {}", out.database.len(), a.database.display());
    println!("{} query clips -> {}", out.queries.len(), a.queries.display());
    Ok(())
}

fn random_hash(rng: &mut ChaCha8Rng, d: usize) -> BitHash {
    let bits: Vec<bool> = (0..d).map(|_| rng.random()).collect();
    BitHash::from_bits(&bits).expect("valid width")
}

fn random_codebook(rng: &mut ChaCha8Rng, n: usize, d: usize, k_bs: usize) -> Result<Codebook, CliError> {
    let mut b = CodebookBuilder::with_capacity(d, k_bs, Weight::ONE, n)?;
    let mut idx: Vec<usize> = (0..d).collect();
    for i in 0..n {
        for j in 0..k_bs {
            let r = rng.random_range(j..d);
            idx.swap(j, r);
        }
        let mask = BitMask::from_positions(d, idx[..k_bs].iter().copied())?;
        b.push(format!("r{}", i), Vec::new(), &random_hash(rng, d), &mask)?;
    }
    Ok(b.finish())
}

fn ms(d: Duration) -> String {
    format!("{:.3}", d.as_secs_f64() * 1e3)
}

pub fn bench(a: &BenchArgs, ctx: &Context) -> CliResult {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let start = Instant::now();
    let book = match (&a.codebook, a.random) {
        (Some(path), _) => load_codebook(path)?,
        (None, Some(n)) => random_codebook(&mut rng, n, a.d, a.k_bs)?,
        (None, None) => unreachable!("clap requires a source"),
    };
    note(ctx, "prepared codebook", start);
    if a.queries == 0 {
        return Err(CliError::Usage("--queries must be positive".into()));
    }
    let params = a.search.params(a.k);
    params.validate()?;
    let queries: Vec<BitHash> = (0..a.queries).map(|_| random_hash(&mut rng, book.width())).collect();

    let start = Instant::now();
    for q in &queries {
        topk_raw(q, &book, a.k, None)?;
    }
    let raw = start.elapsed();

    let mut session = QuerySession::for_params(&book, &params);
    let (mut stage1, mut stage2) = (Duration::ZERO, Duration::ZERO);
    let (mut decodes, mut max_decodes, mut pools, mut max_pool, mut expanded) = (0, 0, 0, 0, 0);
    let start = Instant::now();
    for q in &queries {
        let r = session.search(q, &params)?;
        let s = r.stats;
        if s.decodes > s.pool {
            return Err(Error::Invariant(format!("{} decodes for a pool of {}", s.decodes, s.pool)).into());
        }
        if params.mode == SearchMode::Exact && s.decodes != book.len() {
            return Err(Error::Invariant(format!("exact search decoded {} of {}", s.decodes, book.len())).into());
        }
        stage1 += s.stage1;
        stage2 += s.stage2;
        decodes += s.decodes;
        max_decodes = max_decodes.max(s.decodes);
        pools += s.pool;
        max_pool = max_pool.max(s.pool);
        expanded += (s.expansions > 0) as usize;
    }
    let total = start.elapsed();

    let n = a.queries as f64;
    let staged = (stage1 + stage2).as_secs_f64().max(f64::MIN_POSITIVE);
    let mode = match params.mode {
        SearchMode::Exact => "exact".to_string(),
        SearchMode::Filtered => format!(
            "filtered (K' = {}, expansion {})",
            params.initial_pool(book.len()),
            if params.safety_expansion { "on" } else { "off" }
        ),
    };
    let items = [
        ("mode", mode),
        ("entries", book.len().to_string()),
        ("d", book.width().to_string()),
        ("k_bs", book.k_bs().to_string()),
        ("gamma", params.gamma.to_string()),
        ("k", a.k.to_string()),
        ("queries", a.queries.to_string()),
        ("queries_per_s", format!("{:.1}", n / total.as_secs_f64())),
        ("mean_latency_ms", ms(total / a.queries as u32)),
        ("raw_scan_latency_ms", ms(raw / a.queries as u32)),
        ("stage1_ms", ms(stage1)),
        ("stage2_ms", ms(stage2)),
        ("stage2_share", format!("{:.3}", stage2.as_secs_f64() / staged)),
        ("mean_decodes", format!("{:.1}", decodes as f64 / n)),
        ("max_decodes", max_decodes.to_string()),
        ("mean_pool", format!("{:.1}", pools as f64 / n)),
        ("max_pool", max_pool.to_string()),
        ("expanded_queries", expanded.to_string()),
    ];
    print!("{}", pairs(&items, a.format));
    Ok(())
}
