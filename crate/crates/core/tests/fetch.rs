use std::collections::HashMap;
use std::fs;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use ccseg_core::fetch::{
    clear_cache, file_sha256, ArchiveLocator, FetchConfig, FetchError, Fetcher, RemoteShards, RetryPolicy,
};
use ccseg_core::zipnum::ShardAccess;
use ccseg_testkit::{Fault, Server};

const ARCHIVE: &str = "CC-MAIN-2019-35";

fn path(name: &str) -> String {
    format!("/cc-index/collections/{ARCHIVE}/indexes/{name}")
}

fn body(n: usize) -> Vec<u8> {
    (0..n).map(|i| (i * 7 % 251) as u8).collect()
}

fn server(objects: &[(&str, Vec<u8>)]) -> Server {
    let map: HashMap<String, Vec<u8>> = objects.iter().map(|(n, b)| (path(n), b.clone())).collect();
    Server::with_objects(map)
}

fn quick() -> FetchConfig {
    FetchConfig {
        retry: RetryPolicy {
            max_attempts: 4,
            base_delay: Duration::from_millis(5),
            max_delay: Duration::from_millis(20),
            jitter: 0.2,
        },
        max_connections: 4,
        timeout: Duration::from_secs(10),
    }
}

fn locator(s: &Server) -> ArchiveLocator {
    ArchiveLocator::new(s.url(), ARCHIVE).unwrap()
}

#[test]
fn first_ten_bytes() {
    let data = body(1000);
    let s = server(&[("cdx-00000.gz", data.clone())]);
    let f = Fetcher::new(quick());
    let got = f.fetch_range(&locator(&s), "cdx-00000.gz", 0, 10).unwrap();
    assert_eq!(got, data[..10]);
    assert_eq!(s.log()[0].1.as_deref(), Some("bytes=0-9"));
    let mid = f.fetch_range(&locator(&s), "cdx-00000.gz", 990, 10).unwrap();
    assert_eq!(mid, data[990..]);
}

#[test]
fn retries_after_two_503s() {
    let s = server(&[("cdx-00000.gz", body(100))]);
    s.push_faults(&path("cdx-00000.gz"), [Fault::Status(503), Fault::Status(503)]);
    let f = Fetcher::new(quick());
    let got = f.fetch_range(&locator(&s), "cdx-00000.gz", 5, 20).unwrap();
    assert_eq!(got, body(100)[5..25]);
    assert_eq!(s.requests(), 3);
    assert_eq!(f.requests_made(), 3);
}

#[test]
fn gives_up_after_max_attempts() {
    let s = server(&[("cdx-00000.gz", body(100))]);
    s.push_faults(&path("cdx-00000.gz"), [Fault::Status(503); 10]);
    let f = Fetcher::new(quick());
    let err = f.fetch_range(&locator(&s), "cdx-00000.gz", 0, 10).unwrap_err();
    assert!(matches!(err, FetchError::TooManyRetries { attempts: 4, .. }), "{err}");
    assert_eq!(s.requests(), 4);
}

#[test]
fn out_of_range_is_416_without_retry() {
    let s = server(&[("cdx-00000.gz", body(100))]);
    let f = Fetcher::new(quick());
    let err = f.fetch_range(&locator(&s), "cdx-00000.gz", 100, 10).unwrap_err();
    assert!(matches!(err, FetchError::HttpStatus(416)), "{err}");
    assert_eq!(s.requests(), 1);
    let err = f.fetch_range(&locator(&s), "missing.gz", 0, 10).unwrap_err();
    assert!(matches!(err, FetchError::HttpStatus(404)), "{err}");
}

#[test]
fn short_range_body_is_retried() {
    let s = server(&[("cdx-00000.gz", body(100))]);
    s.push_faults(&path("cdx-00000.gz"), [Fault::Truncate(3)]);
    let f = Fetcher::new(quick());
    assert_eq!(f.fetch_range(&locator(&s), "cdx-00000.gz", 0, 50).unwrap(), body(100)[..50]);
    assert_eq!(s.requests(), 2);
}

#[test]
fn master_cache_cold_then_warm() {
    let master = b"com,a)/ 20190817000000\tcdx-00000.gz\t0\t100\t1\n".to_vec();
    let s = server(&[("cluster.idx", master.clone())]);
    let dir = tempfile::tempdir().unwrap();
    let f = Fetcher::new(quick());
    let p = f.fetch_master(&locator(&s), dir.path(), None).unwrap();
    assert_eq!(fs::read(&p).unwrap(), master);
    assert_eq!(s.requests(), 1);
    assert_eq!(s.log()[0].1, None);
    let again = f.fetch_master(&locator(&s), dir.path(), None).unwrap();
    assert_eq!(again, p);
    assert_eq!(s.requests(), 1);

    assert!(clear_cache(dir.path(), Some(ARCHIVE)).unwrap());
    f.fetch_master(&locator(&s), dir.path(), None).unwrap();
    assert_eq!(s.requests(), 2);
}

#[test]
fn interrupted_download_leaves_no_partial_file() {
    let data = body(50_000);
    let s = server(&[("cluster.idx", data.clone())]);
    s.push_faults(&path("cluster.idx"), [Fault::Truncate(1000)]);
    let dir = tempfile::tempdir().unwrap();
    let f = Fetcher::new(quick());
    let p = f.fetch_master(&locator(&s), dir.path(), None).unwrap();
    assert_eq!(fs::read(&p).unwrap(), data);
    assert_eq!(s.requests(), 2);
    let leftovers: Vec<_> = fs::read_dir(p.parent().unwrap())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "cluster.idx")
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn failed_download_removes_partial_file() {
    let s = server(&[("cluster.idx", body(50_000))]);
    s.push_faults(&path("cluster.idx"), [Fault::Truncate(1000); 4]);
    let dir = tempfile::tempdir().unwrap();
    let f = Fetcher::new(quick());
    assert!(f.fetch_master(&locator(&s), dir.path(), None).is_err());
    let archive_dir = dir.path().join(ARCHIVE);
    let left = fs::read_dir(&archive_dir).map(|d| d.count()).unwrap_or(0);
    assert_eq!(left, 0);
}

#[test]
fn checksum_mismatch_is_reported_and_nothing_cached() {
    let data = body(500);
    let s = server(&[("cluster.idx", data.clone())]);
    let dir = tempfile::tempdir().unwrap();
    let f = Fetcher::new(quick());
    let wrong = "0".repeat(64);
    let err = f.fetch_master(&locator(&s), dir.path(), Some(&wrong)).unwrap_err();
    assert!(matches!(err, FetchError::ChecksumMismatch { .. }), "{err}");
    assert!(!dir.path().join(ARCHIVE).join("cluster.idx").exists());

    let tmp = dir.path().join("x");
    fs::write(&tmp, &data).unwrap();
    let right = file_sha256(&tmp).unwrap();
    let p = f.fetch_master(&locator(&s), dir.path(), Some(&right)).unwrap();
    assert_eq!(fs::read(p).unwrap(), data);
}

#[test]
fn corrupted_cache_is_refetched() {
    let data = body(500);
    let s = server(&[("cluster.idx", data.clone())]);
    let dir = tempfile::tempdir().unwrap();
    let f = Fetcher::new(quick());
    let p = f.fetch_master(&locator(&s), dir.path(), None).unwrap();
    let sha = file_sha256(&p).unwrap();
    fs::write(&p, b"garbage").unwrap();
    f.fetch_master(&locator(&s), dir.path(), Some(&sha)).unwrap();
    assert_eq!(fs::read(&p).unwrap(), data);
    assert_eq!(s.requests(), 2);
}

#[test]
fn connection_cap_holds() {
    let s = server(&[("cdx-00000.gz", body(4096))]);
    s.set_delay(Duration::from_millis(40));
    let f = Arc::new(Fetcher::new(quick()));
    let loc = locator(&s);
    let handles: Vec<_> = (0..16)
        .map(|i| {
            let (f, loc) = (Arc::clone(&f), loc.clone());
            thread::spawn(move || f.fetch_range(&loc, "cdx-00000.gz", i * 100, 100).unwrap())
        })
        .collect();
    for (i, h) in handles.into_iter().enumerate() {
        assert_eq!(h.join().unwrap(), body(4096)[i * 100..i * 100 + 100]);
    }
    assert_eq!(s.requests(), 16);
    assert!(s.peak_concurrency() <= 4, "peak {}", s.peak_concurrency());
    assert!(s.peak_concurrency() >= 2, "requests never overlapped");
}

#[test]
fn remote_shards_cache_ranges() {
    let s = server(&[("cdx-00001.gz", body(300))]);
    let dir = tempfile::tempdir().unwrap();
    let shards = RemoteShards::new(Fetcher::new(quick()), locator(&s), Some(dir.path().to_path_buf()));
    assert_eq!(shards.read_range("cdx-00001.gz", 10, 20).unwrap(), body(300)[10..30]);
    assert_eq!(shards.read_range("cdx-00001.gz", 10, 20).unwrap(), body(300)[10..30]);
    assert_eq!(s.requests(), 1);
    let uncached = RemoteShards::new(Fetcher::new(quick()), locator(&s), None);
    uncached.read_range("cdx-00001.gz", 10, 20).unwrap();
    uncached.read_range("cdx-00001.gz", 10, 20).unwrap();
    assert_eq!(s.requests(), 3);
}

#[test]
fn custom_index_path() {
    let mut map = HashMap::new();
    map.insert("/idx/cluster.idx".to_string(), b"abc".to_vec());
    let s = Server::with_objects(map);
    let loc = ArchiveLocator::new(s.url(), ARCHIVE).unwrap().with_index_path("/idx/");
    let f = Fetcher::new(quick());
    assert_eq!(f.fetch_range(&loc, "cluster.idx", 1, 2).unwrap(), b"bc");
}
