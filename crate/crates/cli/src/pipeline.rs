//! The full run: index scan, feature tables, correlations, rankings, proxy
//! heatmap, Last-Modified tables and URI metrics, plus a summary and a
//! manifest recording per-stage status.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;

use ccseg_core::features::{merge_top_k, FeatureKind, MergedFeatureTable, Tabulation};
use ccseg_core::fetch::file_sha256;
use ccseg_core::lastmod::{
    self, anomaly_tsv, detect_anomalies, period_tsv, tabulate_period, AnomalyReport, Granularity, LastModRecord,
    ParseStats,
};
use ccseg_core::stats::{
    correlation_matrix, describe, heatmap_tsv, proxy_eval, rank_segments, ranking_table, CorrelationMatrix,
    Description, SegmentRanking,
};
use ccseg_core::tsv;
use ccseg_core::urimetrics::{self, aggregate_by_year, year_means_tsv, UriMetrics};
use serde::Serialize;

use crate::artifact::{ArtifactDir, Header, WrittenFile};
use crate::config::{ConfigRecord, RunConfig};
use crate::error::{CliError, CliResult};
use crate::index::{open_index, pool, scan, ScanCounts};

/// How many offsets the offsets table lists.
pub const OFFSET_ROWS: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Skipped(String),
    Failed(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct Stage {
    pub name: &'static str,
    #[serde(flatten)]
    pub status: StageStatus,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeatureSummary {
    pub feature: &'static str,
    pub labels: usize,
    pub segments: usize,
    pub missing_cells: usize,
    /// Best `top_n` segments by correlation with the whole archive.
    pub selected: Vec<usize>,
    /// Worst `top_n`, worst last.
    pub bottom: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnomalySummary {
    pub year: i64,
    pub dominant_value: i64,
    pub dominant_date: String,
    pub bucket_count: u64,
    pub dominant_share: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Summary {
    pub index: Option<ScanCounts>,
    pub features: Vec<FeatureSummary>,
    pub lastmod: Option<ParseStats>,
    pub anomalies: Vec<AnomalySummary>,
    pub outlier_domains: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    config: ConfigRecord<'a>,
    inputs: BTreeMap<&'static str, String>,
    stages: &'a [Stage],
    artifacts: Vec<WrittenFile>,
}

/// What a run produced; `error` is the first stage failure.
pub struct Outcome {
    pub stages: Vec<Stage>,
    pub summary: Summary,
    pub error: Option<CliError>,
}

struct Run {
    out: ArtifactDir,
    stages: Vec<Stage>,
    error: Option<CliError>,
    inputs: BTreeMap<&'static str, String>,
    summary: Summary,
}

impl Run {
    fn record<T>(&mut self, name: &'static str, result: CliResult<T>) -> Option<T> {
        match result {
            Ok(v) => {
                self.stages.push(Stage { name, status: StageStatus::Ok });
                Some(v)
            }
            Err(e) => {
                log::error!("stage {name} failed: {e}");
                self.stages.push(Stage { name, status: StageStatus::Failed(e.to_string()) });
                self.error.get_or_insert(e);
                None
            }
        }
    }

    fn skip(&mut self, name: &'static str, why: &str) {
        self.stages.push(Stage { name, status: StageStatus::Skipped(why.to_string()) });
    }
}

fn index_kinds(cfg: &RunConfig) -> Vec<FeatureKind> {
    cfg.features.iter().copied().filter(|&k| k != FeatureKind::LmhYear).collect()
}

fn read_lastmod(cfg: &RunConfig) -> CliResult<(Vec<LastModRecord>, ParseStats, String)> {
    let path = cfg.lastmod.as_ref().expect("lastmod path");
    let file = File::open(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let (records, stats) = lastmod::read_extraction(BufReader::new(file), &cfg.window)?;
    Ok((records, stats, file_sha256(path)?))
}

fn lastmod_tables(out: &mut ArtifactDir, records: &[LastModRecord], cfg: &RunConfig) -> CliResult<Vec<AnomalyReport>> {
    let values = || records.iter().map(|r| r.lm_posix);
    for (name, g) in [("year", Granularity::Year), ("month", Granularity::Month), ("day", Granularity::Day)] {
        out.tsv(&format!("lastmod/{name}.tsv"), &period_tsv(&tabulate_period(values(), g)))?;
    }
    out.tsv("lastmod/offsets.tsv", &lastmod::offsets(records).to_tsv(OFFSET_ROWS))?;
    let reports = detect_anomalies(values(), cfg.thresholds);
    out.tsv("lastmod/anomalies.tsv", &anomaly_tsv(&reports))?;
    Ok(reports)
}

fn uri_tables(out: &mut ArtifactDir, records: &[LastModRecord], cfg: &RunConfig) -> CliResult<Vec<String>> {
    let mut rows: Vec<(i64, UriMetrics)> = Vec::with_capacity(records.len());
    let mut bad = 0u64;
    for r in records {
        match urimetrics::measure(&r.url_ref) {
            Ok(m) => rows.push((lastmod::year_of(r.lm_posix), m)),
            Err(_) => bad += 1,
        }
    }
    if bad > 0 {
        log::warn!("{bad} URIs could not be measured");
    }
    out.tsv("urimetrics/years.tsv", &year_means_tsv(&aggregate_by_year(rows.iter().map(|(y, m)| (*y, m)))))?;
    let outliers = cfg.outliers.outlier_domains(rows.iter().map(|(_, m)| m));
    let kept = rows.iter().filter(|(_, m)| outliers.binary_search(&m.domain).is_err()).map(|(y, m)| (*y, m));
    let mut body = format!("# outlier_domains={}\n", outliers.len());
    body.push_str(&year_means_tsv(&aggregate_by_year(kept)));
    out.tsv("urimetrics/years_filtered.tsv", &body)?;
    Ok(outliers)
}

fn describe_tsv(matrices: &[(FeatureKind, CorrelationMatrix)]) -> String {
    let mut out = String::from(Description::TSV_HEADER);
    out.push('\n');
    for (kind, m) in matrices {
        let rhos: Vec<f64> = m.segment_vs_whole().into_iter().filter(|r| !r.is_nan()).collect();
        match describe(&rhos) {
            Ok(d) => out.push_str(&d.tsv_row(kind.short_name())),
            Err(_) => out.push_str(&format!("{}\t{}\t{m}\t{m}\t{m}\t{m}", kind.short_name(), rhos.len(), m = tsv::MISSING)),
        }
        out.push('\n');
    }
    out
}

fn bottom(r: &SegmentRanking, n: usize) -> Vec<usize> {
    let s = r.segments();
    s[s.len().saturating_sub(n)..].to_vec()
}

/// Runs every stage it can. Stages whose inputs failed are skipped; the
/// manifest is written either way.
pub fn run_pipeline(cfg: &RunConfig, parallelism: usize) -> CliResult<Outcome> {
    cfg.validate()?;
    let src = &cfg.resolved();
    let header = Header::new(&cfg.archive_id, "pipeline", cfg.digest());
    let out = ArtifactDir::create(&cfg.output_dir, header)?;
    let mut run = Run { out, stages: Vec::new(), error: None, inputs: BTreeMap::new(), summary: Summary::default() };
    let pool = pool(parallelism.max(1))?;

    // Index scan.
    let kinds = index_kinds(cfg);
    let mut tabs: Vec<Tabulation> = Vec::new();
    if kinds.is_empty() {
        run.skip("index", "no index features selected");
    } else {
        let scanned = open_index(src).and_then(|o| Ok((o.master_sha256.clone(), scan(&o.index, &kinds, &pool)?)));
        if let Some((sha, s)) = run.record("index", scanned) {
            run.inputs.insert("cluster.idx", sha);
            run.summary.index = Some(s.counts);
            tabs = s.tabulations;
        }
    }

    // Last-Modified tables.
    let mut records = None;
    if cfg.lastmod.is_some() {
        let res = read_lastmod(cfg).and_then(|(records, stats, sha)| {
            let reports = lastmod_tables(&mut run.out, &records, cfg)?;
            Ok((records, stats, sha, reports))
        });
        if let Some((recs, stats, sha, reports)) = run.record("lastmod", res) {
            run.inputs.insert("lastmod", sha);
            run.summary.lastmod = Some(stats);
            run.summary.anomalies = reports
                .iter()
                .map(|r| AnomalySummary {
                    year: r.year,
                    dominant_value: r.dominant_value,
                    dominant_date: lastmod::format_http_date(r.dominant_value),
                    bucket_count: r.bucket_count,
                    dominant_share: r.dominant_share,
                })
                .collect();
            if cfg.features.contains(&FeatureKind::LmhYear) {
                tabs.push(lastmod::year_tabulation(&recs));
            }
            records = Some(recs);
        }
    } else {
        run.skip("lastmod", "no extraction file");
    }

    // Feature tables, in the configured order.
    tabs.sort_by_key(|t| cfg.features.iter().position(|&k| k == t.kind()));
    let mut tables: Vec<(FeatureKind, MergedFeatureTable)> = Vec::new();
    if tabs.is_empty() {
        run.skip("features", "nothing tabulated");
    } else {
        let res = tabs.iter().try_fold(Vec::new(), |mut acc, t| {
            let table = merge_top_k(t, cfg.top_k)?;
            run.out.tsv(&format!("features/{}.tsv", t.kind().as_str()), &table.to_tsv())?;
            acc.push((t.kind(), table));
            CliResult::Ok(acc)
        });
        tables = run.record("features", res).unwrap_or_default();
    }

    // Correlations and rankings.
    let mut matrices: Vec<(FeatureKind, CorrelationMatrix)> = Vec::new();
    if tables.is_empty() {
        run.skip("correlation", "no feature tables");
        run.skip("ranking", "no feature tables");
    } else {
        let res = tables.iter().try_fold(Vec::new(), |mut acc, (kind, table)| {
            let m = correlation_matrix(table)?;
            run.out.tsv(&format!("correlation/{}.rho.tsv", kind.as_str()), &m.to_tsv())?;
            run.out.tsv(&format!("correlation/{}.n_used.tsv", kind.as_str()), &m.n_used_tsv())?;
            acc.push((*kind, m));
            CliResult::Ok(acc)
        });
        matrices = run.record("correlation", res).unwrap_or_default();
        let res = matrices.iter().try_fold(Vec::new(), |mut acc, (kind, m)| {
            let r = rank_segments(m);
            run.out.tsv(&format!("ranking/{}.tsv", kind.as_str()), &r.to_tsv())?;
            acc.push((*kind, r));
            CliResult::Ok(acc)
        });
        if let Some(rankings) = run.record("ranking", res) {
            let cols: Vec<(&str, &SegmentRanking)> = rankings.iter().map(|(k, r)| (k.short_name(), r)).collect();
            let rows = rankings.iter().map(|(_, r)| r.entries.len()).max().unwrap_or(0);
            let res = run.out.tsv("rankings.tsv", &ranking_table(&cols, rows));
            run.record("ranking_table", res);
            for (kind, table) in &tables {
                let Some((_, r)) = rankings.iter().find(|(k, _)| k == kind) else { continue };
                run.summary.features.push(FeatureSummary {
                    feature: kind.as_str(),
                    labels: table.rows(),
                    segments: table.segment_ids.len(),
                    missing_cells: table.missing_cells(),
                    selected: r.top(cfg.top_n),
                    bottom: bottom(r, cfg.top_n),
                });
            }
        }
    }

    // Proxy heatmap over every basis/target pair and descriptive rows.
    if matrices.is_empty() {
        run.skip("proxy", "no correlation matrices");
    } else {
        let mut rows = Vec::new();
        for (_, target) in &matrices {
            for (_, basis) in &matrices {
                let n = cfg.max_n.min(target.segment_ids().len());
                match proxy_eval(basis, target, n) {
                    Ok(h) => rows.push(h),
                    Err(e) => log::warn!("proxy {} -> {}: {e}", basis.property, target.property),
                }
            }
        }
        let res = run.out.tsv("proxy_heatmap.tsv", &heatmap_tsv(&rows));
        run.record("proxy", res);
        let res = run.out.tsv("describe.tsv", &describe_tsv(&matrices));
        run.record("describe", res);
    }

    // URI metrics.
    match &records {
        Some(recs) => {
            let res = uri_tables(&mut run.out, recs, cfg);
            if let Some(d) = run.record("urimetrics", res) {
                run.summary.outlier_domains = d;
            }
        }
        None => run.skip("urimetrics", "no Last-Modified records"),
    }

    let res = run.out.json("summary.json", &run.summary);
    run.record("summary", res);
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config: cfg.record(),
        inputs: run.inputs.clone(),
        stages: &run.stages,
        artifacts: run.out.written(),
    };
    run.out.json("manifest.json", &manifest)?;
    Ok(Outcome { stages: run.stages, summary: run.summary, error: run.error })
}
