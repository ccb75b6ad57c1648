//! Two-level ZipNum lookup.
//!
//! The master index is held in memory and binary-searched for the last block
//! whose first key is `<=` the wanted key. That block is fetched as one gzip
//! member, decompressed, and binary-searched again for the first matching
//! line; matches are then collected by linear extension.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use thiserror::Error;

use crate::cdx::{self, line_key, CdxError, IndexEntry, MasterIndexLine};
use crate::fetch::FetchError;
use crate::surt::UrlKey;

#[derive(Debug, Error)]
pub enum AccessError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Remote(#[from] FetchError),
    #[error("no such shard {0:?}")]
    UnknownShard(String),
    #[error("short read: wanted {wanted} bytes, got {got}")]
    Short { wanted: u64, got: u64 },
}

#[derive(Debug, Error)]
pub enum ZipNumError {
    #[error("master index is empty")]
    EmptyMaster,
    #[error("master index out of order at line {0}")]
    UnsortedMaster(usize),
    #[error("master index line {line}: {source}")]
    MasterLine { line: usize, source: CdxError },
    #[error("bytes {offset}+{length} of {shard} are not one gzip member: {reason}")]
    BadGzipMember { shard: String, offset: u64, length: u64, reason: String },
    #[error("range {offset}+{length} of {shard} unavailable: {source}")]
    RangeUnavailable { shard: String, offset: u64, length: u64, source: AccessError },
    #[error(transparent)]
    Index(#[from] CdxError),
    #[error("reading master index: {0}")]
    Io(#[from] io::Error),
}

impl ZipNumError {
    /// True when the failure came from the network rather than the data.
    pub fn is_network(&self) -> bool {
        matches!(self, ZipNumError::RangeUnavailable { source: AccessError::Remote(_), .. })
    }
}

/// Where one compressed block lives.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockHandle {
    pub shard_name: String,
    pub offset: u64,
    pub length: u64,
}

impl From<&MasterIndexLine> for BlockHandle {
    fn from(line: &MasterIndexLine) -> Self {
        Self {
            shard_name: line.shard_name.clone(),
            offset: line.block_offset,
            length: line.block_length,
        }
    }
}

/// Random access to byte ranges of shard files, local or remote.
/// Implementations must tolerate concurrent calls.
pub trait ShardAccess: Send + Sync {
    fn read_range(&self, shard: &str, offset: u64, length: u64) -> Result<Vec<u8>, AccessError>;
}

impl<T: ShardAccess + ?Sized> ShardAccess for &T {
    fn read_range(&self, shard: &str, offset: u64, length: u64) -> Result<Vec<u8>, AccessError> {
        (**self).read_range(shard, offset, length)
    }
}

impl<T: ShardAccess + ?Sized> ShardAccess for Box<T> {
    fn read_range(&self, shard: &str, offset: u64, length: u64) -> Result<Vec<u8>, AccessError> {
        (**self).read_range(shard, offset, length)
    }
}

/// Shards stored as files in one directory.
#[derive(Debug, Clone)]
pub struct LocalShards {
    dir: PathBuf,
}

impl LocalShards {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl ShardAccess for LocalShards {
    fn read_range(&self, shard: &str, offset: u64, length: u64) -> Result<Vec<u8>, AccessError> {
        if shard.contains(['/', '\\']) || shard.starts_with('.') {
            return Err(AccessError::UnknownShard(shard.to_string()));
        }
        let mut file = File::open(self.dir.join(shard))?;
        file.seek(SeekFrom::Start(offset))?;
        let mut buf = Vec::with_capacity(length as usize);
        file.take(length).read_to_end(&mut buf)?;
        if buf.len() as u64 != length {
            return Err(AccessError::Short { wanted: length, got: buf.len() as u64 });
        }
        Ok(buf)
    }
}

/// Shards held in memory, keyed by shard name.
#[derive(Debug, Clone, Default)]
pub struct MemoryShards {
    shards: HashMap<String, Vec<u8>>,
}

impl MemoryShards {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.shards.insert(name.into(), bytes);
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.shards.get(name).map(Vec::as_slice)
    }
}

impl ShardAccess for MemoryShards {
    fn read_range(&self, shard: &str, offset: u64, length: u64) -> Result<Vec<u8>, AccessError> {
        let bytes = self.shards.get(shard).ok_or_else(|| AccessError::UnknownShard(shard.to_string()))?;
        let start = (offset as usize).min(bytes.len());
        let end = (offset.saturating_add(length) as usize).min(bytes.len());
        if (end - start) as u64 != length {
            return Err(AccessError::Short { wanted: length, got: (end - start) as u64 });
        }
        Ok(bytes[start..end].to_vec())
    }
}

/// The in-memory `cluster.idx`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MasterIndex {
    lines: Vec<MasterIndexLine>,
}

impl MasterIndex {
    /// Fails when keys are out of order.
    pub fn new(lines: Vec<MasterIndexLine>) -> Result<Self, ZipNumError> {
        if let Some(i) = cdx::first_unsorted(lines.iter().map(|l| l.first_urlkey.as_str())) {
            return Err(ZipNumError::UnsortedMaster(i + 1));
        }
        Ok(Self { lines })
    }

    pub fn read(reader: impl BufRead) -> Result<Self, ZipNumError> {
        let mut lines = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = cdx::parse_master_line(&line)
                .map_err(|source| ZipNumError::MasterLine { line: i + 1, source })?;
            lines.push(parsed);
        }
        Self::new(lines)
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, ZipNumError> {
        Self::read(io::BufReader::new(File::open(path)?))
    }

    pub fn lines(&self) -> &[MasterIndexLine] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Shard names in first-appearance order.
    pub fn shard_names(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for line in &self.lines {
            if !seen.contains(&line.shard_name.as_str()) {
                seen.push(line.shard_name.as_str());
            }
        }
        seen
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockLocation {
    /// The key sorts before the first block.
    NotBefore,
    Found { line: usize, handle: BlockHandle },
}

/// Operation counters for one lookup.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LookupStats {
    /// Key comparisons made by the master-index binary search.
    pub master_comparisons: usize,
    /// Checks of neighbouring master lines for runs that cross a block boundary.
    pub boundary_checks: usize,
    /// Key comparisons made inside decompressed blocks.
    pub block_comparisons: usize,
    pub blocks_read: usize,
}

pub fn locate_block(master: &[MasterIndexLine], key: &UrlKey) -> Result<BlockLocation, ZipNumError> {
    locate_block_counted(master, key, &mut 0)
}

/// [`locate_block`] that adds its comparison count to `comparisons`.
pub fn locate_block_counted(
    master: &[MasterIndexLine],
    key: &UrlKey,
    comparisons: &mut usize,
) -> Result<BlockLocation, ZipNumError> {
    if master.is_empty() {
        return Err(ZipNumError::EmptyMaster);
    }
    // Invariant: lines[..lo] are <= key, lines[hi..] are > key.
    let (mut lo, mut hi) = (0, master.len());
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        *comparisons += 1;
        if master[mid].first_urlkey <= *key {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    Ok(match lo {
        0 => BlockLocation::NotBefore,
        n => BlockLocation::Found { line: n - 1, handle: BlockHandle::from(&master[n - 1]) },
    })
}

/// Fetches one block and splits it into lines.
pub fn read_block(handle: &BlockHandle, access: &dyn ShardAccess) -> Result<Vec<String>, ZipNumError> {
    let bytes = access
        .read_range(&handle.shard_name, handle.offset, handle.length)
        .map_err(|source| ZipNumError::RangeUnavailable {
            shard: handle.shard_name.clone(),
            offset: handle.offset,
            length: handle.length,
            source,
        })?;
    let bad = |reason: String| ZipNumError::BadGzipMember {
        shard: handle.shard_name.clone(),
        offset: handle.offset,
        length: handle.length,
        reason,
    };
    let mut text = String::new();
    GzDecoder::new(bytes.as_slice())
        .read_to_string(&mut text)
        .map_err(|e| bad(e.to_string()))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// All entries for `key`, in file order.
#[derive(Debug, Clone, Default)]
pub struct Lookup {
    pub entries: Vec<IndexEntry>,
    pub stats: LookupStats,
}

/// How far [`lookup_with`] looks past the located block for a run of equal
/// keys that crosses a block boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Straddle {
    /// Follow a run into later blocks when the next master line starts
    /// with the key. One block per lookup unless the run really continues.
    #[default]
    Forward,
    /// Also read the preceding block when the located block starts with the
    /// key, since that block may end with the same key. Costs a second read
    /// for keys that begin a block.
    Both,
}

pub fn lookup(key: &UrlKey, master: &MasterIndex, access: &dyn ShardAccess) -> Result<Lookup, ZipNumError> {
    lookup_with(key, master, access, Straddle::Forward)
}

pub fn lookup_with(
    key: &UrlKey,
    master: &MasterIndex,
    access: &dyn ShardAccess,
    straddle: Straddle,
) -> Result<Lookup, ZipNumError> {
    let lines = master.lines();
    let mut stats = LookupStats::default();
    let mut line = match locate_block_counted(lines, key, &mut stats.master_comparisons)? {
        BlockLocation::NotBefore => return Ok(Lookup { entries: Vec::new(), stats }),
        BlockLocation::Found { line, .. } => line,
    };

    // Several blocks may start with the key; begin at the earliest of them.
    if lines[line].first_urlkey == *key {
        while line > 0 {
            stats.boundary_checks += 1;
            if lines[line - 1].first_urlkey != *key {
                break;
            }
            line -= 1;
        }
    }

    let mut entries = Vec::new();
    if straddle == Straddle::Both && line > 0 && lines[line].first_urlkey == *key {
        let block = read_block(&BlockHandle::from(&lines[line - 1]), access)?;
        stats.blocks_read += 1;
        let start = partition_point_counted(&block, |l| line_key(l) < key.as_str(), &mut stats.block_comparisons);
        for l in &block[start..] {
            if line_key(l) == key.as_str() {
                entries.push(cdx::parse_index_line(l)?);
            }
        }
    }
    loop {
        let block = read_block(&BlockHandle::from(&lines[line]), access)?;
        stats.blocks_read += 1;
        let start = partition_point_counted(&block, |l| line_key(l) < key.as_str(), &mut stats.block_comparisons);
        let mut end = start;
        while end < block.len() && line_key(&block[end]) == key.as_str() {
            entries.push(cdx::parse_index_line(&block[end])?);
            end += 1;
        }
        let run_reaches_end = end == block.len() && end > start;
        if run_reaches_end && line + 1 < lines.len() {
            stats.boundary_checks += 1;
            if lines[line + 1].first_urlkey == *key {
                line += 1;
                continue;
            }
        }
        break;
    }
    Ok(Lookup { entries, stats })
}

fn partition_point_counted<T>(items: &[T], mut pred: impl FnMut(&T) -> bool, comparisons: &mut usize) -> usize {
    let (mut lo, mut hi) = (0, items.len());
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        *comparisons += 1;
        if pred(&items[mid]) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// A master index paired with its shard storage.
pub struct ZipNumIndex<A> {
    master: MasterIndex,
    access: A,
}

impl<A: ShardAccess> ZipNumIndex<A> {
    pub fn new(master: MasterIndex, access: A) -> Self {
        Self { master, access }
    }

    pub fn master(&self) -> &MasterIndex {
        &self.master
    }

    pub fn access(&self) -> &A {
        &self.access
    }

    pub fn lookup(&self, key: &UrlKey) -> Result<Lookup, ZipNumError> {
        lookup(key, &self.master, &self.access)
    }

    pub fn lookup_with(&self, key: &UrlKey, straddle: Straddle) -> Result<Lookup, ZipNumError> {
        lookup_with(key, &self.master, &self.access, straddle)
    }

    /// Decompresses every block of one shard, in master order.
    pub fn shard_lines(&self, shard: &str) -> Result<Vec<String>, ZipNumError> {
        let mut out = Vec::new();
        for line in self.master.lines().iter().filter(|l| l.shard_name == shard) {
            out.extend(read_block(&BlockHandle::from(line), &self.access)?);
        }
        Ok(out)
    }
}
