//! Opening an index, local or remote, and scanning all of its shards.

use std::collections::BTreeMap;

use ccseg_core::cdx::parse_index_line;
use ccseg_core::features::{FeatureKind, Tabulation};
use ccseg_core::fetch::{file_sha256, ArchiveLocator, FetchConfig, Fetcher, MASTER_INDEX_NAME};
use ccseg_core::zipnum::{LocalShards, MasterIndex, ShardAccess, ZipNumIndex};
use ccseg_core::Subset;
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::Serialize;

use crate::config::{IndexSource, ResolvedSource};
use crate::error::{CliError, CliResult};

pub type DynIndex = ZipNumIndex<Box<dyn ShardAccess>>;

pub struct OpenIndex {
    pub index: DynIndex,
    /// SHA-256 of the master index bytes.
    pub master_sha256: String,
}

pub fn open_index(src: &ResolvedSource) -> CliResult<OpenIndex> {
    match &src.source {
        IndexSource::Local { dir } => {
            let path = dir.join(MASTER_INDEX_NAME);
            let master = MasterIndex::open(&path)?;
            let master_sha256 = file_sha256(&path)?;
            let access: Box<dyn ShardAccess> = Box::new(LocalShards::new(dir));
            Ok(OpenIndex { index: ZipNumIndex::new(master, access), master_sha256 })
        }
        IndexSource::Remote { base_url } => {
            let locator = ArchiveLocator::new(base_url.clone(), src.archive_id.clone())?;
            let fetcher = Fetcher::new(FetchConfig::default());
            let path = fetcher.fetch_master(&locator, &src.cache_dir, None)?;
            let master = MasterIndex::open(&path)?;
            let master_sha256 = file_sha256(&path)?;
            let access: Box<dyn ShardAccess> =
                Box::new(ccseg_core::fetch::RemoteShards::new(fetcher, locator, Some(src.cache_dir.clone())));
            Ok(OpenIndex { index: ZipNumIndex::new(master, access), master_sha256 })
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ScanCounts {
    pub lines: u64,
    /// Lines per subset; only warc lines are tabulated.
    pub by_subset: BTreeMap<&'static str, u64>,
}

pub struct Scan {
    pub tabulations: Vec<Tabulation>,
    pub counts: ScanCounts,
}

fn scan_shard(index: &DynIndex, shard: &str, kinds: &[FeatureKind]) -> CliResult<Scan> {
    let mut tabs: Vec<Tabulation> = kinds.iter().map(|&k| Tabulation::new(k)).collect();
    let mut counts = ScanCounts::default();
    for line in index.shard_lines(shard)? {
        let entry = parse_index_line(&line).map_err(|e| CliError::Integrity(format!("{shard}: {e}")))?;
        let seg = entry.segment().map_err(|e| CliError::Integrity(format!("{shard}: {e}")))?;
        counts.lines += 1;
        *counts.by_subset.entry(seg.subset.as_str()).or_default() += 1;
        if seg.subset != Subset::Warc {
            continue;
        }
        for t in &mut tabs {
            t.add(&entry, seg)?;
        }
    }
    Ok(Scan { tabulations: tabs, counts })
}

/// Tabulates every index-derived feature in `kinds` over all shards, one
/// shard per work unit. Shard results are merged in shard-name order.
pub fn scan(index: &DynIndex, kinds: &[FeatureKind], pool: &ThreadPool) -> CliResult<Scan> {
    if kinds.contains(&FeatureKind::LmhYear) {
        return Err(CliError::usage("lmh_year is not tabulated from the index"));
    }
    let shards: Vec<String> = index.master().shard_names().into_iter().map(str::to_string).collect();
    let parts: Vec<CliResult<Scan>> = pool.install(|| shards.par_iter().map(|s| scan_shard(index, s, kinds)).collect());
    let mut tabulations: Vec<Tabulation> = kinds.iter().map(|&k| Tabulation::new(k)).collect();
    let mut counts = ScanCounts::default();
    for part in parts {
        let part = part?;
        tabulations = tabulations.into_iter().zip(part.tabulations).map(|(a, b)| a.merge(b)).collect();
        counts.lines += part.counts.lines;
        for (k, v) in part.counts.by_subset {
            *counts.by_subset.entry(k).or_default() += v;
        }
    }
    Ok(Scan { tabulations, counts })
}

pub fn pool(parallelism: usize) -> CliResult<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))
}

pub fn default_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
