//! The ten acceptance criteria. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ccseg_cli::config::{IndexSource, ResolvedSource, RunConfig};
use ccseg_cli::pipeline::run_pipeline;
use ccseg_core::cdx::{line_key, parse_index_line};
use ccseg_core::features::{merge_top_k, FeatureKind, MergedFeatureTable, Tabulation};
use ccseg_core::lastmod::{detect_anomalies, parse_http_date, year_of, AnomalyThresholds, BUCKET_SECONDS};
use ccseg_core::stats::{correlation_matrix, fisher_ci, proxy_eval, rank_segments, spearman_omit, CorrelationMatrix};
use ccseg_core::synth::{self, LmProfile, Perturbation, SynthArchive, SynthSpec};
use ccseg_core::zipnum::lookup;
use ccseg_core::{canonicalize, Subset, UrlKey};
use ccseg_testkit::oracle;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn c1_surt() -> Verdict {
    let got = canonicalize("https://www.w3.org/TR/xml/").map(UrlKey::into_string);
    verdict(got.as_deref() == Ok("org,w3)/tr/xml"), format!("canonicalize -> {got:?}"))
}

fn c2_posix() -> Verdict {
    let got = parse_http_date("Sun, 24 Apr 2005 04:29:37 GMT");
    verdict(matches!(got, Ok(1_114_316_977)), format!("parse_http_date -> {got:?}"))
}

fn random_column(rng: &mut ChaCha8Rng, n: usize) -> Vec<Option<f64>> {
    let levels = rng.random_range(2..=n.max(3));
    (0..n)
        .map(|_| match rng.random_range(0..20) {
            0 | 1 => None,
            2 => Some(f64::NAN),
            _ => Some(rng.random_range(0..levels) as f64),
        })
        .collect()
}

fn c3_spearman() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut compared, mut undefined, mut worst) = (0, 0, 0.0f64);
    let mut disagreements = 0;
    for _ in 0..2000 {
        let n = rng.random_range(5..=101);
        let x = random_column(&mut rng, n);
        let mut y = random_column(&mut rng, n);
        // Some pairs share structure, so strong correlations occur too.
        if rng.random_bool(0.3) {
            for (a, b) in x.iter().zip(y.iter_mut()) {
                if let (Some(a), Some(_)) = (a, &b) {
                    *b = Some(a * 2.0 + rng.random_range(0..3) as f64);
                }
            }
        }
        match (spearman_omit(&x, &y), oracle::spearman(&x, &y)) {
            (Ok(c), Some((rho, n_used))) => {
                compared += 1;
                worst = worst.max((c.rho - rho).abs());
                if c.n_used != n_used {
                    disagreements += 1;
                }
            }
            (Err(_), None) => undefined += 1,
            _ => disagreements += 1,
        }
    }
    verdict(
        compared >= 1000 && worst <= 1e-12 && disagreements == 0,
        format!("{compared} pairs compared, {undefined} undefined in both, max |diff| {worst:.2e}, {disagreements} disagreements"),
    )
}

fn c4_fisher() -> Verdict {
    let (mut cells, mut worst, mut bad) = (0, 0.0f64, 0);
    for &alpha in &[0.01, 0.05, 0.1] {
        for i in -99..=99 {
            let rho = i as f64 / 100.0;
            for &n in &[4usize, 5, 10, 30, 100, 103, 1000, 10_000] {
                let ci = fisher_ci(rho, n, alpha).expect("valid cell");
                let (lo, hi) = oracle::fisher_interval(rho, n, alpha);
                worst = worst.max((ci.lo - lo).abs()).max((ci.hi - hi).abs());
                cells += 1;
                if ci.degenerate || !(ci.lo <= rho && rho <= ci.hi) {
                    bad += 1;
                }
            }
        }
    }
    let degenerate_ok = [1.0, -1.0].iter().all(|&r| {
        matches!(fisher_ci(r, 50, 0.05), Ok(c) if c.degenerate && c.lo == r && c.hi == r)
    });
    verdict(
        worst <= 1e-12 && bad == 0 && degenerate_ok,
        format!("{cells} grid cells, max |diff| {worst:.2e}, |rho|=1 degenerate: {degenerate_ok}"),
    )
}

fn c5_zipnum() -> Verdict {
    let spec = SynthSpec {
        seed: 5,
        n_segments: 10,
        entries_per_segment: 1000,
        diagnostics_share: 0.0,
        duplicate_share: 0.0,
        block_size: 30,
        n_shards: 3,
        ..Default::default()
    };
    let archive = synth::generate(&spec).expect("synthetic archive");
    let master = archive.master().expect("master");
    let shards = archive.memory_shards();
    let mut oracle_map: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for l in &archive.lines {
        oracle_map.entry(line_key(l)).or_default().push(l);
    }
    let bound = (master.len() as f64).log2().ceil() as usize + 1;
    let (mut wrong, mut over_blocks, mut over_cmp, mut max_cmp) = (0, 0, 0, 0);
    for (&key, want) in &oracle_map {
        let got = lookup(&UrlKey::from_raw(key), &master, &shards).expect("lookup");
        let lines: Vec<String> = got.entries.iter().map(|e| e.to_line()).collect();
        if lines != *want {
            wrong += 1;
        }
        if got.stats.blocks_read != 1 {
            over_blocks += 1;
        }
        max_cmp = max_cmp.max(got.stats.master_comparisons);
        if got.stats.master_comparisons > bound {
            over_cmp += 1;
        }
    }
    // Absent keys: neighbours of present keys plus keys outside the range.
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let present: Vec<&str> = oracle_map.keys().copied().collect();
    let mut absent: HashSet<String> = ["!", "~~~~"].iter().map(|s| s.to_string()).collect();
    while absent.len() < 1000 {
        let base = present[rng.random_range(0..present.len())];
        let k = match rng.random_range(0..3) {
            0 => format!("{base}0"),
            1 => format!("{}", &base[..base.len() - 1]),
            _ => format!("{base}/x{}", rng.random_range(0..1000)),
        };
        if !oracle_map.contains_key(k.as_str()) {
            absent.insert(k);
        }
    }
    for k in &absent {
        let got = lookup(&UrlKey::from_raw(k.clone()), &master, &shards).expect("lookup");
        if !got.entries.is_empty() {
            wrong += 1;
        }
        if got.stats.blocks_read > 1 {
            over_blocks += 1;
        }
        max_cmp = max_cmp.max(got.stats.master_comparisons);
        if got.stats.master_comparisons > bound {
            over_cmp += 1;
        }
    }
    let entries = archive.lines.len();
    verdict(
        entries == 10_000 && master.len() > 0 && wrong == 0 && over_blocks == 0 && over_cmp == 0,
        format!(
            "{entries} entries, {} master lines, {} present + {} absent keys, {wrong} wrong, {over_blocks} over one block, max comparisons {max_cmp} (bound {bound})",
            master.len(),
            oracle_map.len(),
            absent.len()
        ),
    )
}

fn random_matrix(rng: &mut ChaCha8Rng, segments: usize) -> CorrelationMatrix {
    let n = segments + 1;
    let mut labels = vec!["whole".to_string()];
    labels.extend((0..segments).map(|i| format!("seg{i:02}")));
    let mut rho = vec![1.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let v = rng.random_range(-1.0..1.0);
            rho[i * n + j] = v;
            rho[j * n + i] = v;
        }
    }
    CorrelationMatrix::from_cells("random", labels, rho, vec![50; n * n]).expect("matrix")
}

fn c6_self_prediction() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut scores = Vec::new();
    for _ in 0..200 {
        let m = random_matrix(&mut rng, 100);
        scores.push(proxy_eval(&m, &m, 1).expect("proxy").scores[0]);
    }
    // Matrices from real feature tables as well.
    for seed in 0..5 {
        let spec = SynthSpec { seed, n_segments: 100, entries_per_segment: 300, ..Default::default() };
        let table = tabulate(&spec, FeatureKind::MimePair);
        let m = correlation_matrix(&table).expect("matrix");
        // Only a unique maximum gives 99.5; tied tops share the midrank.
        let sv = m.segment_vs_whole();
        let max = sv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if sv.iter().filter(|&&v| v == max).count() == 1 {
            scores.push(proxy_eval(&m, &m, 1).expect("proxy").scores[0]);
        }
    }
    let bad = scores.iter().filter(|&&s| s != 99.5).count();
    verdict(bad == 0, format!("{} matrices with 100 segments, {bad} not scoring 99.5", scores.len()))
}

/// Feature table straight from generated entries (no index round trip).
fn tabulate(spec: &SynthSpec, kind: FeatureKind) -> MergedFeatureTable {
    let entries = synth::generate_entries(spec).expect("entries");
    let mut tab = Tabulation::new(kind);
    for e in entries.iter().filter(|e| e.segment.subset == Subset::Warc) {
        tab.add(&e.entry, e.segment).expect("tabulate");
    }
    merge_top_k(&tab, 100).expect("table")
}

fn c7_ranking_recovery() -> Verdict {
    let divergence = 0.35;
    let (mut hits, mut min_gap) = (0, f64::INFINITY);
    let mut misses = Vec::new();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7_000 + seed);
        let mut ids: Vec<usize> = (0..100).collect();
        ids.shuffle(&mut rng);
        let perturbed: Vec<Perturbation> = ids[..5].iter().map(|&segment| Perturbation { segment, divergence }).collect();
        let spec = SynthSpec { seed, n_segments: 100, entries_per_segment: 1000, perturbed, ..Default::default() };
        let (_, truth) = synth::ground_truth(&spec);
        let clean = truth.iter().filter(|t| t.divergence == 0.0).map(|t| t.oracle_rho).fold(f64::INFINITY, f64::min);
        let bad = truth.iter().filter(|t| t.divergence > 0.0).map(|t| t.oracle_rho).fold(f64::NEG_INFINITY, f64::max);
        min_gap = min_gap.min(clean - bad);
        let ranking = rank_segments(&correlation_matrix(&tabulate(&spec, FeatureKind::MimePair)).expect("matrix"));
        let order = ranking.segments();
        let bottom: HashSet<usize> = order[order.len() - 10..].iter().copied().collect();
        if ids[..5].iter().all(|s| bottom.contains(s)) {
            hits += 1;
        } else {
            misses.push(seed);
        }
    }
    verdict(
        hits >= 99 && min_gap > 0.05,
        format!("{hits}/100 seeds with all 5 perturbed in the bottom 10 (divergence {divergence}, min oracle gap {min_gap:.3}, misses {misses:?})"),
    )
}

fn top_bucket_per_year(values: &[i64]) -> HashMap<i64, u64> {
    let mut buckets: HashMap<i64, u64> = HashMap::new();
    for v in values {
        *buckets.entry(v.div_euclid(BUCKET_SECONDS)).or_default() += 1;
    }
    let mut top: HashMap<i64, u64> = HashMap::new();
    for (id, n) in buckets {
        let y = year_of(id * BUCKET_SECONDS);
        let t = top.entry(y).or_default();
        *t = (*t).max(n);
    }
    top
}

fn c8_anomaly() -> Verdict {
    let profile = LmProfile::default();
    let spec = SynthSpec::default();
    let (crawl, span) = (spec.crawl_start, spec.crawl_seconds);
    let t = AnomalyThresholds::default();
    let (mut found, mut extra) = (0, 0);
    for seed in 0..100u64 {
        let mut values = profile.sample_values(seed, 200_000, crawl, span);
        let mut rng = ChaCha8Rng::seed_from_u64(8_000 + seed);
        let year = rng.random_range(2000..=2017);
        let start = ccseg_core::calendar::days_from_civil(year, 1, 1) * 86_400;
        let end = ccseg_core::calendar::days_from_civil(year + 1, 1, 1) * 86_400;
        let value = rng.random_range(start..end);
        let top = top_bucket_per_year(&values);
        let adjacent = top.get(&(year - 1)).copied().unwrap_or(0).max(top.get(&(year + 1)).copied().unwrap_or(0)).max(1);
        values.extend(std::iter::repeat_n(value, (50 * adjacent) as usize));
        values.shuffle(&mut rng);
        let reports = detect_anomalies(values, t);
        if reports.iter().any(|r| r.dominant_value == value) {
            found += 1;
        }
        extra += reports.iter().filter(|r| r.dominant_value != value).count();
    }
    let false_pos: usize =
        (0..20u64).map(|seed| detect_anomalies(profile.sample_values(90_000 + seed, 200_000, crawl, span), t).len()).sum();
    verdict(
        found == 100 && extra == 0 && false_pos == 0,
        format!("injected value found in {found}/100 seeds, {extra} other reports, {false_pos} reports on 20 clean seeds"),
    )
}

const W3_301: &str = r#"org,w3)/tr/xml 20210613173657 {"url": "https://www.w3.org/TR/XML/", "mime": "text/html", "mime-detected": "text/html", "status": "301", "digest": "LQRWZ7SMYYGCL55UJSVAS3BY64YNZ4DQ", "length": "743", "offset": "27241472", "filename": "crawl-data/CC-MAIN-2021-25/segments/1623487610196.46/crawldiagnostics/CC-MAIN-20210613161945-20210613191945-00275.warc.gz", "redirect": "https://www.w3.org/TR/xml/"}"#;
const W3_200: &str = r#"org,w3)/tr/xml 20210613173657 {"url": "https://www.w3.org/TR/xml/", "mime": "text/html", "mime-detected": "application/xhtml+xml", "status": "200", "digest": "AOMNGHUQLUKLHHWBNUL7MOVXKIUX522W", "length": "55091", "offset": "968583998", "filename": "crawl-data/CC-MAIN-2021-25/segments/1623487610196.46/warc/CC-MAIN-20210613161945-20210613191945-00371.warc.gz", "charset": "UTF-8", "languages": "eng"}"#;
const TABLE_ROWS: &str = "label\twhole\tseg71\tseg72\tseg73\n\
                          text/plain application/mbox\t37711\t435\t364\t397\n\
                          application/octet-stream application/x-tika-msoffice\t37414\t354\tnan\t2\n";

fn c9_parsing() -> Verdict {
    let entries_ok = [W3_301, W3_200].iter().all(|l| parse_index_line(l).map(|e| e.to_line()).as_deref() == Ok(*l));
    let table = MergedFeatureTable::from_tsv("mime_pair", TABLE_ROWS);
    let cells_ok = table.as_ref().is_ok_and(|t| {
        t.whole[0] == 37711
            && [t.cell(0, 0), t.cell(0, 1), t.cell(0, 2)] == [Some(435), Some(364), Some(397)]
            && t.cell(1, 1).is_none()
            && t.to_tsv() == TABLE_ROWS
    });
    verdict(entries_ok && cells_ok, format!("index entries round-trip: {entries_ok}, table cells round-trip: {cells_ok}"))
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).expect("read dir") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).expect("read"));
            }
        }
    }
    out
}

fn c10_determinism() -> Verdict {
    let tmp = tempfile::tempdir().expect("tempdir");
    let spec = SynthSpec { seed: 10, n_segments: 100, entries_per_segment: 300, ..Default::default() };
    let dir = synth::generate(&spec).and_then(|a| a.write(tmp.path())).expect("synthetic archive");
    assert_eq!(dir, SynthArchive::index_dir(tmp.path(), &spec.archive_id));
    let src = ResolvedSource {
        archive_id: spec.archive_id.clone(),
        source: IndexSource::Local { dir },
        cache_dir: tmp.path().join("cache"),
    };
    let mut runs = Vec::new();
    for (name, parallelism) in [("run1", 1), ("run2", 1), ("run8", 8)] {
        let mut cfg = RunConfig::new(src.clone(), tmp.path().join(name));
        cfg.lastmod = Some(tmp.path().join(synth::LASTMOD_NAME));
        cfg.features.push(FeatureKind::LmhYear);
        let outcome = run_pipeline(&cfg, parallelism).expect("pipeline");
        if let Some(e) = outcome.error {
            return verdict(false, format!("{name} failed: {e}"));
        }
        runs.push(files_under(&tmp.path().join(name)));
    }
    let same = runs[0] == runs[1] && runs[0] == runs[2];
    let differing: Vec<&PathBuf> = runs[0].iter().filter(|(k, v)| runs[2].get(*k) != Some(v)).map(|(k, _)| k).collect();
    verdict(
        same && runs[0].len() >= 20,
        format!("{} artifacts; identical across two runs and parallelism 1 vs 8: {same} {differing:?}", runs[0].len()),
    )
}

fn main() {
    type Criterion = (u32, &'static str, Duration, fn() -> Verdict);
    let criteria: [Criterion; 10] = [
        (1, "SURT fixture", Duration::from_secs(1), c1_surt),
        (2, "POSIX fixture", Duration::from_secs(1), c2_posix),
        (3, "Spearman oracle", Duration::from_secs(30), c3_spearman),
        (4, "Fisher interval", Duration::from_secs(5), c4_fisher),
        (5, "ZipNum lookup", Duration::from_secs(60), c5_zipnum),
        (6, "Proxy self-prediction", Duration::from_secs(1), c6_self_prediction),
        (7, "Segment-ranking recovery", Duration::from_secs(300), c7_ranking_recovery),
        (8, "Anomaly detection", Duration::from_secs(120), c8_anomaly),
        (9, "Parsing fixtures", Duration::from_secs(1), c9_parsing),
        (10, "End-to-end determinism", Duration::from_secs(300), c10_determinism),
    ];
    let mut failed = 0;
    for (n, name, limit, check) in criteria {
        let start = Instant::now();
        let v = check();
        let took = start.elapsed();
        let pass = v.pass && took <= limit;
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {n} ({name}): {} [{:.2}s, limit {}s]",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
