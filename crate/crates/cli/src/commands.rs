//! One function per subcommand.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ccseg_core::features::{merge_top_k, FeatureKind, MergedFeatureTable};
use ccseg_core::fetch::clear_cache;
use ccseg_core::lastmod::{
    self, anomaly_tsv, detect_anomalies, period_tsv, tabulate_period, AnomalyThresholds, CredibilityWindow,
    Granularity, LastModRecord, ParseStats,
};
use ccseg_core::stats::{correlation_matrix, heatmap_tsv, proxy_eval, rank_segments, CorrelationMatrix};
use ccseg_core::synth::{self, SynthSpec};
use ccseg_core::urimetrics::{self, aggregate_by_year, year_means_tsv, OutlierFilter};
use ccseg_core::zipnum::Straddle;
use ccseg_core::{canonicalize, tsv, UrlKey};
use serde_json::json;

use crate::artifact::{emit, read_text, Header, UNKNOWN_ARCHIVE};
use crate::config::{config_digest, ENV_BASE_URL, parse_features, FileConfig, RunConfig, SourceArgs};
use crate::error::{CliError, CliResult};
use crate::index::{default_parallelism, open_index, pool, scan};
use crate::pipeline::run_pipeline;
use crate::{
    CacheCommand, Command, CorrelateArgs, LastmodCommand, LmInput, LookupArgs, PipelineArgs, ProxyArgs, RankArgs,
    SourceOpts, SynthArgs, TabulateArgs, UriArgs,
};

pub fn dispatch(cmd: Command, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    match cmd {
        Command::Surt { uris } => surt(&uris, stdin, stdout, stderr),
        Command::Lookup(a) => lookup(&a, stdout, stderr),
        Command::Tabulate(a) => tabulate(&a, stdout),
        Command::Correlate(a) => correlate(&a, stdout),
        Command::Rank(a) => rank(&a, stdout),
        Command::ProxyEval(a) => proxy(&a, stdout),
        Command::Lastmod { command } => lastmod_cmd(command, stdout),
        Command::Urimetrics(a) => uri_metrics(&a, stdout),
        Command::Synth(a) => synth_cmd(&a, stdout),
        Command::Cache { command: CacheCommand::Clear { source } } => cache_clear(&source, stdout),
        Command::Pipeline(a) => pipeline(&a, stdout),
    }
}

impl SourceOpts {
    fn args(&self) -> SourceArgs {
        SourceArgs {
            config: self.config.clone(),
            archive: self.archive.clone(),
            base_url: self.base_url.clone().or_else(|| {
                // The environment only stands in for a missing flag.
                let env = std::env::var(ENV_BASE_URL).ok().filter(|v| !v.is_empty());
                if self.index_dir.is_none() { env } else { None }
            }),
            index_dir: self.index_dir.clone(),
            cache_dir: self.cache_dir.clone(),
        }
    }
}

fn surt(uris: &[String], stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    let mut failed = 0usize;
    let mut one = |uri: &str, stdout: &mut dyn Write| -> CliResult<()> {
        match canonicalize(uri) {
            Ok(k) => writeln!(stdout, "{k}")?,
            Err(e) => {
                writeln!(stderr, "{uri}: {e}")?;
                failed += 1;
            }
        }
        Ok(())
    };
    if uris.is_empty() {
        for line in stdin.lines() {
            let line = line?;
            let uri = line.trim();
            if !uri.is_empty() {
                one(uri, stdout)?;
            }
        }
    } else {
        for u in uris {
            one(u, stdout)?;
        }
    }
    match failed {
        0 => Ok(()),
        n => Err(CliError::usage(format!("{n} URI(s) could not be converted"))),
    }
}

fn lookup(a: &LookupArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    let args = a.source.args();
    let src = args.resolve(&args.file()?)?;
    let key = if a.key {
        UrlKey::from_raw(a.uri.clone())
    } else {
        canonicalize(&a.uri).map_err(|e| CliError::usage(format!("{}: {e}", a.uri)))?
    };
    let opened = open_index(&src)?;
    let straddle = if a.single_block { Straddle::Forward } else { Straddle::Both };
    let found = opened.index.lookup_with(&key, straddle)?;
    if a.count_ops {
        let s = found.stats;
        writeln!(
            stderr,
            "master_lines={} master_comparisons={} boundary_checks={} block_comparisons={} blocks_read={}",
            opened.index.master().len(),
            s.master_comparisons,
            s.boundary_checks,
            s.block_comparisons,
            s.blocks_read
        )?;
    }
    if found.entries.is_empty() {
        return Err(CliError::NotFound(key.into_string()));
    }
    for e in &found.entries {
        writeln!(stdout, "{}", e.to_line())?;
    }
    Ok(())
}

/// Archive id for headers of commands that need no index.
fn archive_of(flag: Option<&str>, file: &FileConfig) -> String {
    flag.map(str::to_string).or_else(|| file.archive.clone()).unwrap_or_else(|| UNKNOWN_ARCHIVE.into())
}

fn tabulate(a: &TabulateArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let kind: FeatureKind = a.feature.parse()?;
    let args = a.source.args();
    let file = args.file()?;
    let (archive, tab) = if kind == FeatureKind::LmhYear {
        let path = a.lastmod.as_ref().ok_or_else(|| CliError::usage("lmh_year needs --lastmod"))?;
        let (records, _) = read_records(path, &CredibilityWindow::default())?;
        (archive_of(a.source.archive.as_deref(), &file), lastmod::year_tabulation(&records))
    } else {
        let src = args.resolve(&file)?;
        let opened = open_index(&src)?;
        let pool = pool(a.parallelism.unwrap_or_else(default_parallelism).max(1))?;
        let mut s = scan(&opened.index, &[kind], &pool)?;
        (src.archive_id, s.tabulations.remove(0))
    };
    let table = merge_top_k(&tab, a.top_k)?;
    let header = Header::new(archive, "tabulate", config_digest(&json!({"feature": kind.as_str(), "top_k": a.top_k})));
    emit(a.out.as_deref(), stdout, &header.tsv(&table.to_tsv()))
}

/// File name up to the first dot: `nl1.rho.tsv` gives `nl1`.
fn stem(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("property");
    name.split('.').next().unwrap_or(name).to_string()
}

/// Header for an artifact derived from another: same archive, the input's
/// config digest combined with this command's options.
fn derived_header(input: &str, command: &str, options: serde_json::Value) -> Header {
    let up = Header::parse(input);
    let archive = up.as_ref().map_or(UNKNOWN_ARCHIVE.to_string(), |h| h.archive.clone());
    let upstream = up.map(|h| h.config);
    Header::new(archive, command, config_digest(&json!({"input": upstream, "options": options})))
}

fn correlate(a: &CorrelateArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let text = read_text(&a.table)?;
    let name = stem(&a.table);
    let table = MergedFeatureTable::from_tsv(&name, &text)?;
    let m = correlation_matrix(&table)?;
    let header = derived_header(&text, "correlate", json!({}));
    match &a.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            emit(Some(&dir.join(format!("{name}.rho.tsv"))), stdout, &header.tsv(&m.to_tsv()))?;
            emit(Some(&dir.join(format!("{name}.n_used.tsv"))), stdout, &header.tsv(&m.n_used_tsv()))
        }
        None => emit(None, stdout, &header.tsv(&m.to_tsv())),
    }
}

fn n_used_beside(rho: &Path) -> PathBuf {
    let name = rho.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let base = name.strip_suffix(".rho.tsv").unwrap_or(name);
    rho.with_file_name(format!("{base}.n_used.tsv"))
}

fn load_matrix(rho: &Path, n_used: Option<&Path>) -> CliResult<(String, CorrelationMatrix)> {
    let rho_text = read_text(rho)?;
    let n_text = read_text(&n_used.map_or_else(|| n_used_beside(rho), Path::to_path_buf))?;
    let m = CorrelationMatrix::from_tsv(&stem(rho), &rho_text, &n_text)?;
    Ok((rho_text, m))
}

fn rank(a: &RankArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let (text, m) = load_matrix(&a.rho, a.n_used.as_deref())?;
    let mut r = rank_segments(&m);
    if let Some(n) = a.top_n {
        r.entries.truncate(n);
    }
    let header = derived_header(&text, "rank", json!({"top_n": a.top_n}));
    emit(a.out.as_deref(), stdout, &header.tsv(&r.to_tsv()))
}

fn proxy(a: &ProxyArgs, stdout: &mut dyn Write) -> CliResult<()> {
    if a.max_n == 0 {
        return Err(CliError::usage("max-n must be positive"));
    }
    let loaded: Vec<(String, CorrelationMatrix)> =
        a.matrices.iter().map(|p| load_matrix(p, None)).collect::<CliResult<_>>()?;
    let mut rows = Vec::new();
    for (_, target) in &loaded {
        for (_, basis) in &loaded {
            rows.push(proxy_eval(basis, target, a.max_n.min(target.segment_ids().len()))?);
        }
    }
    let header = derived_header(&loaded[0].0, "proxy-eval", json!({"max_n": a.max_n, "inputs": loaded.len()}));
    emit(a.out.as_deref(), stdout, &header.tsv(&heatmap_tsv(&rows)))
}

fn read_records(path: &Path, window: &CredibilityWindow) -> CliResult<(Vec<LastModRecord>, ParseStats)> {
    let f = File::open(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    Ok(lastmod::read_extraction(BufReader::new(f), window)?)
}

fn stats_comment(s: &ParseStats) -> String {
    format!(
        "# total={} accepted={} unusable={} incredible={} absent={}\n",
        s.total, s.accepted, s.rejected_unusable, s.rejected_incredible, s.absent
    )
}

fn lastmod_cmd(cmd: LastmodCommand, stdout: &mut dyn Write) -> CliResult<()> {
    let window = CredibilityWindow::default();
    let (input, name, options, body): (LmInput, &str, serde_json::Value, Box<dyn Fn(&[LastModRecord]) -> CliResult<String>>) =
        match cmd {
            LastmodCommand::Extract(input) => (
                input,
                "lastmod-extract",
                json!({}),
                Box::new(|records: &[LastModRecord]| {
                    let mut out = String::from("urlkey\tcrawl_posix\tlm_posix\toffset\tsegment\turl\n");
                    for r in records {
                        let seg = r.segment.map_or(tsv::MISSING.to_string(), |s| s.segment_id.to_string());
                        out.push_str(&format!(
                            "{}\t{}\t{}\t{}\t{seg}\t{}\n",
                            r.urlkey,
                            r.crawl_posix,
                            r.lm_posix,
                            r.offset(),
                            r.url_ref
                        ));
                    }
                    Ok(out)
                }),
            ),
            LastmodCommand::Tabulate { input, granularity } => {
                let g: Granularity = granularity.parse().map_err(CliError::Usage)?;
                (
                    input,
                    "lastmod-tabulate",
                    json!({"granularity": granularity}),
                    Box::new(move |records: &[LastModRecord]| {
                        Ok(period_tsv(&tabulate_period(records.iter().map(|r| r.lm_posix), g)))
                    }),
                )
            }
            LastmodCommand::Offsets { input, top } => (
                input,
                "lastmod-offsets",
                json!({"top": top}),
                Box::new(move |records: &[LastModRecord]| Ok(lastmod::offsets(records).to_tsv(top))),
            ),
            LastmodCommand::Anomaly { input, ratio, share } => {
                let t = AnomalyThresholds { ratio, share };
                if !(share > 0.0 && share <= 1.0) || ratio <= 0.0 {
                    return Err(CliError::usage("anomaly thresholds out of range"));
                }
                (
                    input,
                    "lastmod-anomaly",
                    json!({"thresholds": t}),
                    Box::new(move |records: &[LastModRecord]| {
                        Ok(anomaly_tsv(&detect_anomalies(records.iter().map(|r| r.lm_posix), t)))
                    }),
                )
            }
        };
    let (records, stats) = read_records(&input.file, &window)?;
    let header = Header::new(
        archive_of(input.archive.as_deref(), &FileConfig::default()),
        name,
        config_digest(&json!({"window": window, "options": options})),
    );
    let text = header.tsv(&(stats_comment(&stats) + &body(&records)?));
    emit(input.out.as_deref(), stdout, &text)
}

fn uri_metrics(a: &UriArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let window = CredibilityWindow::default();
    let (records, _) = read_records(&a.input.file, &window)?;
    let mut rows = Vec::with_capacity(records.len());
    let mut bad = 0u64;
    for r in &records {
        match urimetrics::measure(&r.url_ref) {
            Ok(m) => rows.push((lastmod::year_of(r.lm_posix), m)),
            Err(_) => bad += 1,
        }
    }
    let filter = OutlierFilter { min_samples: a.min_samples, min_mean_query: a.min_mean_query };
    let outliers = if a.filter_outliers { filter.outlier_domains(rows.iter().map(|(_, m)| m)) } else { Vec::new() };
    let kept = rows.iter().filter(|(_, m)| outliers.binary_search(&m.domain).is_err()).map(|(y, m)| (*y, m));
    let mut body = format!("# unmeasurable={bad} outlier_domains={}\n", outliers.join(","));
    body.push_str(&year_means_tsv(&aggregate_by_year(kept)));
    let options = json!({"window": window, "filter": a.filter_outliers.then_some(filter)});
    let header = Header::new(archive_of(a.input.archive.as_deref(), &FileConfig::default()), "urimetrics", config_digest(&options));
    emit(a.input.out.as_deref(), stdout, &header.tsv(&body))
}

fn load_spec(path: &Path) -> CliResult<SynthSpec> {
    let text = read_text(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display()))),
        _ => serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display()))),
    }
}

fn synth_cmd(a: &SynthArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let mut spec = match &a.spec {
        Some(p) => load_spec(p)?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let archive = synth::generate(&spec)?;
    let dir = archive.write(&a.out)?;
    let m = &archive.manifest;
    writeln!(
        stdout,
        "archive={} entries={} index_lines={} master_lines={} index_dir={}",
        m.archive_id,
        m.entries,
        m.index_lines,
        m.master_lines,
        dir.display()
    )?;
    Ok(())
}

fn cache_clear(source: &SourceOpts, stdout: &mut dyn Write) -> CliResult<()> {
    let args = source.args();
    let file = args.file()?;
    let dir = match args.cache_dir.clone().or(file.cache_dir.clone()) {
        Some(d) => d,
        None => crate::config::default_cache_dir(),
    };
    let archive = args.archive.clone().or(file.archive);
    let removed = clear_cache(&dir, archive.as_deref())?;
    let what = archive.map_or(dir.display().to_string(), |a| format!("{} ({a})", dir.display()));
    writeln!(stdout, "{} {what}", if removed { "cleared" } else { "nothing cached in" })?;
    Ok(())
}

/// Builds the run configuration: flags over environment over file.
pub fn pipeline_config(a: &PipelineArgs) -> CliResult<RunConfig> {
    let args = a.source.args();
    let file = args.file()?;
    let src = args.resolve(&file)?;
    let mut cfg = RunConfig::new(src, a.out.clone());
    cfg.apply_file(&file)?;
    if !a.features.is_empty() {
        cfg.features = parse_features(&a.features)?;
    }
    cfg.lastmod = a.lastmod.clone();
    if a.features.is_empty() && file.features.is_none() && cfg.lastmod.is_some() {
        cfg.features.push(FeatureKind::LmhYear);
    }
    cfg.top_k = a.top_k.unwrap_or(cfg.top_k);
    cfg.top_n = a.top_n.unwrap_or(cfg.top_n);
    cfg.max_n = a.max_n.unwrap_or(cfg.max_n);
    cfg.thresholds.ratio = a.anomaly_ratio.unwrap_or(cfg.thresholds.ratio);
    cfg.thresholds.share = a.anomaly_share.unwrap_or(cfg.thresholds.share);
    cfg.validate()?;
    Ok(cfg)
}

fn pipeline(a: &PipelineArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = pipeline_config(a)?;
    let outcome = run_pipeline(&cfg, a.parallelism.unwrap_or_else(default_parallelism))?;
    for f in &outcome.summary.features {
        let sel: Vec<String> = f.selected.iter().map(usize::to_string).collect();
        writeln!(stdout, "{}\tselected\t{}", f.feature, sel.join(","))?;
    }
    for s in &outcome.stages {
        if let crate::pipeline::StageStatus::Failed(e) = &s.status {
            writeln!(stdout, "{}\tfailed\t{e}", s.name)?;
        }
    }
    match outcome.error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
