//! HTTP range retrieval of index files with retry, a connection cap and an
//! on-disk cache.
//!
//! Objects are addressed as
//! `<base>/cc-index/collections/<archive>/indexes/<name>`. Index files never
//! change once published, so cached copies are kept until removed by hand.

use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::zipnum::{AccessError, ShardAccess};

pub const DEFAULT_BASE_URL: &str = "https://data.commoncrawl.org";
pub const MASTER_INDEX_NAME: &str = "cluster.idx";

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("HTTP status {0}")]
    HttpStatus(u16),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("body truncated: wanted {wanted} bytes, got {got}")]
    Truncated { wanted: u64, got: u64 },
    #[error("gave up after {attempts} attempts; last error: {last}")]
    TooManyRetries { attempts: u32, last: Box<FetchError> },
    #[error("checksum mismatch: expected {expected}, got {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("archive id {0:?} is not of the form CC-MAIN-YYYY-WW")]
    InvalidArchiveId(String),
    #[error("range length must be positive")]
    EmptyRange,
    #[error("cache I/O: {0}")]
    Io(#[from] io::Error),
}

impl FetchError {
    /// Whether another attempt could succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            FetchError::HttpStatus(code) => matches!(code, 408 | 429 | 500 | 502 | 503 | 504),
            FetchError::Timeout(_) | FetchError::Transport(_) | FetchError::Truncated { .. } => true,
            _ => false,
        }
    }
}

/// Names one archive on one server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchiveLocator {
    base_url: String,
    archive_id: String,
    index_path: Option<String>,
}

/// Checks `CC-MAIN-YYYY-WW` with week 1..=53.
pub fn is_archive_id(id: &str) -> bool {
    let Some(rest) = id.strip_prefix("CC-MAIN-") else {
        return false;
    };
    let bytes = rest.as_bytes();
    if bytes.len() != 7 || bytes[4] != b'-' {
        return false;
    }
    let digits = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
    let (year, week) = (&rest[..4], &rest[5..]);
    digits(year) && digits(week) && week.parse::<u32>().is_ok_and(|w| (1..=53).contains(&w))
}

impl ArchiveLocator {
    pub fn new(base_url: impl Into<String>, archive_id: impl Into<String>) -> Result<Self, FetchError> {
        let archive_id = archive_id.into();
        if !is_archive_id(&archive_id) {
            return Err(FetchError::InvalidArchiveId(archive_id));
        }
        let base_url = base_url.into().trim_end_matches('/').to_string();
        Ok(Self { base_url, archive_id, index_path: None })
    }

    /// Replaces the default `cc-index/collections/<archive>/indexes` path.
    pub fn with_index_path(mut self, path: impl Into<String>) -> Self {
        self.index_path = Some(path.into().trim_matches('/').to_string());
        self
    }

    pub fn archive_id(&self) -> &str {
        &self.archive_id
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn object_url(&self, name: &str) -> String {
        match &self.index_path {
            Some(p) if p.is_empty() => format!("{}/{}", self.base_url, name),
            Some(p) => format!("{}/{}/{}", self.base_url, p, name),
            None => format!("{}/cc-index/collections/{}/indexes/{}", self.base_url, self.archive_id, name),
        }
    }
}

/// Bounded exponential backoff with multiplicative jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    /// Fractional jitter; 0.2 spreads each delay over ±20%.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(60),
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based), before jitter.
    pub fn nominal_delay(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.saturating_sub(1));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    pub fn delay<R: Rng + ?Sized>(&self, retry: u32, rng: &mut R) -> Duration {
        let nominal = self.nominal_delay(retry).as_secs_f64();
        let spread = if self.jitter > 0.0 { rng.random_range(-self.jitter..=self.jitter) } else { 0.0 };
        Duration::from_secs_f64(nominal * (1.0 + spread))
    }
}

#[derive(Debug, Clone)]
pub struct FetchConfig {
    pub retry: RetryPolicy,
    /// Upper bound on requests in flight across all threads.
    pub max_connections: usize,
    pub timeout: Duration,
}

impl Default for FetchConfig {
    fn default() -> Self {
        Self { retry: RetryPolicy::default(), max_connections: 4, timeout: Duration::from_secs(120) }
    }
}

/// Counting semaphore for the connection cap.
struct Gate {
    max: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(max: usize) -> Self {
        Self { max: max.max(1), in_use: Mutex::new(0), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_use.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_use.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Blocking HTTP client shared by all index downloads.
pub struct Fetcher {
    agent: ureq::Agent,
    config: FetchConfig,
    gate: Gate,
    requests: AtomicU64,
}

impl Fetcher {
    pub fn new(config: FetchConfig) -> Self {
        let agent_config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .max_idle_connections_per_host(config.max_connections.max(1))
            .build();
        Self {
            agent: ureq::Agent::new_with_config(agent_config),
            gate: Gate::new(config.max_connections),
            config,
            requests: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &FetchConfig {
        &self.config
    }

    /// Number of HTTP requests issued so far, retries included.
    pub fn requests_made(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn with_retries<T>(&self, mut attempt: impl FnMut() -> Result<T, FetchError>) -> Result<T, FetchError> {
        let policy = self.config.retry;
        let attempts = policy.max_attempts.max(1);
        let mut n = 1;
        loop {
            let result = {
                let _permit = self.gate.acquire();
                self.requests.fetch_add(1, Ordering::Relaxed);
                attempt()
            };
            match result {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() && n < attempts => {
                    let delay = policy.delay(n, &mut rand::rng());
                    log::warn!("attempt {n}/{attempts} failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    n += 1;
                }
                Err(e) if e.is_transient() => {
                    return Err(FetchError::TooManyRetries { attempts: n, last: Box::new(e) })
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Exactly `length` bytes of `name` starting at `offset`.
    pub fn fetch_range(
        &self,
        locator: &ArchiveLocator,
        name: &str,
        offset: u64,
        length: u64,
    ) -> Result<Vec<u8>, FetchError> {
        if length == 0 {
            return Err(FetchError::EmptyRange);
        }
        let url = locator.object_url(name);
        let range = format!("bytes={}-{}", offset, offset + length - 1);
        self.with_retries(|| {
            let mut resp = self.agent.get(&url).header("Range", &range).call().map_err(map_ureq)?;
            let status = resp.status().as_u16();
            if status != 206 {
                return Err(FetchError::HttpStatus(status));
            }
            let body = resp
                .body_mut()
                .with_config()
                .limit(length + 1)
                .read_to_vec()
                .map_err(map_ureq)?;
            if body.len() as u64 != length {
                return Err(FetchError::Truncated { wanted: length, got: body.len() as u64 });
            }
            Ok(body)
        })
    }

    /// Downloads `name` in full to `dest` unless it is already there.
    /// The file only appears at `dest` once complete (and verified when
    /// `sha256` is given).
    pub fn fetch_object(
        &self,
        locator: &ArchiveLocator,
        name: &str,
        dest: &Path,
        sha256: Option<&str>,
    ) -> Result<PathBuf, FetchError> {
        if dest.is_file() {
            match sha256 {
                None => return Ok(dest.to_path_buf()),
                Some(expected) if file_sha256(dest)?.eq_ignore_ascii_case(expected) => {
                    return Ok(dest.to_path_buf())
                }
                Some(_) => {
                    log::warn!("cached {} fails its checksum; downloading again", dest.display());
                    fs::remove_file(dest)?;
                }
            }
        }
        let dir = dest.parent().unwrap_or(Path::new("."));
        fs::create_dir_all(dir)?;
        let url = locator.object_url(name);
        let tmp = temp_path(dest);
        let result = self.with_retries(|| {
            let outcome = self.download_to(&url, &tmp);
            if outcome.is_err() {
                let _ = fs::remove_file(&tmp);
            }
            outcome
        });
        if let Err(e) = result {
            let _ = fs::remove_file(&tmp);
            return Err(e);
        }
        if let Some(expected) = sha256 {
            let actual = file_sha256(&tmp)?;
            if !actual.eq_ignore_ascii_case(expected) {
                let _ = fs::remove_file(&tmp);
                return Err(FetchError::ChecksumMismatch { expected: expected.to_string(), actual });
            }
        }
        fs::rename(&tmp, dest)?;
        Ok(dest.to_path_buf())
    }

    fn download_to(&self, url: &str, tmp: &Path) -> Result<(), FetchError> {
        let resp = self.agent.get(url).call().map_err(map_ureq)?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(FetchError::HttpStatus(status));
        }
        let expected_len = resp
            .headers()
            .get("content-length")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok());
        let mut reader = resp.into_body().into_reader();
        let mut file = File::create(tmp)?;
        let written = copy_transport(&mut reader, &mut file)?;
        file.sync_all()?;
        if let Some(want) = expected_len {
            if written != want {
                return Err(FetchError::Truncated { wanted: want, got: written });
            }
        }
        Ok(())
    }

    /// The master index for `locator`, cached under
    /// `<cache_dir>/<archive>/cluster.idx`.
    pub fn fetch_master(
        &self,
        locator: &ArchiveLocator,
        cache_dir: &Path,
        sha256: Option<&str>,
    ) -> Result<PathBuf, FetchError> {
        let dest = cache_dir.join(locator.archive_id()).join(MASTER_INDEX_NAME);
        self.fetch_object(locator, MASTER_INDEX_NAME, &dest, sha256)
    }
}

/// Copies the body, reporting read failures as transport errors and write
/// failures as local I/O errors.
fn copy_transport(reader: &mut impl Read, out: &mut impl Write) -> Result<u64, FetchError> {
    let mut buf = vec![0u8; 64 * 1024];
    let mut total = 0u64;
    loop {
        let n = match reader.read(&mut buf) {
            Ok(0) => return Ok(total),
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) if e.kind() == io::ErrorKind::TimedOut => return Err(FetchError::Timeout(e.to_string())),
            Err(e) => return Err(FetchError::Transport(e.to_string())),
        };
        out.write_all(&buf[..n])?;
        total += n as u64;
    }
}

fn temp_path(dest: &Path) -> PathBuf {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let name = dest.file_name().and_then(|n| n.to_str()).unwrap_or("download");
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    dest.with_file_name(format!(".{name}.{}.{n}.part", std::process::id()))
}

fn map_ureq(e: ureq::Error) -> FetchError {
    match e {
        ureq::Error::StatusCode(code) => FetchError::HttpStatus(code),
        ureq::Error::Timeout(t) => FetchError::Timeout(t.to_string()),
        ureq::Error::Io(io) if io.kind() == io::ErrorKind::TimedOut => FetchError::Timeout(io.to_string()),
        other => FetchError::Transport(other.to_string()),
    }
}

pub fn file_sha256(path: &Path) -> Result<String, io::Error> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Writes `bytes` to `dest` through a temporary file and a rename.
pub fn write_atomic(dest: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(dir) = dest.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = temp_path(dest);
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, dest)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Shard access over HTTP range requests, optionally caching each block
/// under `<cache>/<archive>/ranges/`.
pub struct RemoteShards {
    fetcher: Fetcher,
    locator: ArchiveLocator,
    cache_dir: Option<PathBuf>,
}

impl RemoteShards {
    pub fn new(fetcher: Fetcher, locator: ArchiveLocator, cache_dir: Option<PathBuf>) -> Self {
        Self { fetcher, locator, cache_dir }
    }

    pub fn fetcher(&self) -> &Fetcher {
        &self.fetcher
    }

    fn cache_path(&self, shard: &str, offset: u64, length: u64) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|dir| {
            dir.join(self.locator.archive_id())
                .join("ranges")
                .join(format!("{shard}.{offset}.{length}"))
        })
    }
}

impl ShardAccess for RemoteShards {
    fn read_range(&self, shard: &str, offset: u64, length: u64) -> Result<Vec<u8>, AccessError> {
        let cached = self.cache_path(shard, offset, length);
        if let Some(path) = &cached {
            if let Ok(bytes) = fs::read(path) {
                if bytes.len() as u64 == length {
                    return Ok(bytes);
                }
            }
        }
        let bytes = self.fetcher.fetch_range(&self.locator, shard, offset, length)?;
        if let Some(path) = &cached {
            write_atomic(path, &bytes)?;
        }
        Ok(bytes)
    }
}

/// Removes cached files for one archive, or the whole cache when `archive`
/// is `None`. Returns whether anything was removed.
pub fn clear_cache(cache_dir: &Path, archive: Option<&str>) -> io::Result<bool> {
    let target = match archive {
        Some(id) => cache_dir.join(id),
        None => cache_dir.to_path_buf(),
    };
    match fs::remove_dir_all(&target) {
        Ok(()) => Ok(true),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(false),
        Err(e) => Err(e),
    }
}
