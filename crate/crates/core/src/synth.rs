//! Seeded synthetic archives with known ground truth.
//!
//! Every segment draws its mime pairs and first languages from a Zipf-like
//! base distribution. A perturbed segment mixes that distribution with its
//! own reversal, `(1 - d) p + d rev(p)`, so its rank order diverges from the
//! whole by an amount set by `d`. Boosted segments get more entries and so
//! track the whole more closely. Output uses the same ZipNum layout and
//! extraction-file format the rest of the crate reads.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use flate2::{Compression, GzBuilder};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::LogNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::calendar::{days_from_civil, Timestamp14, SECS_PER_DAY};
use crate::cdx::{IndexEntry, MasterIndexLine, SegmentRef, Subset};
use crate::features::FeatureKey;
use crate::fetch::MASTER_INDEX_NAME;
use crate::lastmod::{self, format_http_date};
use crate::stats::spearman_omit;
use crate::surt::canonicalize;
use crate::zipnum::{MasterIndex, MemoryShards, ZipNumError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Index(#[from] ZipNumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub segment: usize,
    /// Weight of the reversed distribution, in (0, 1].
    pub divergence: f64,
}

/// A block of identical Last-Modified values added on top of the profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Injection {
    pub lm_posix: i64,
    pub count: u64,
}

/// How Last-Modified headers are drawn for successful retrievals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmProfile {
    /// Share of entries carrying a header at all.
    pub presence: f64,
    /// Share of headers generated at crawl time (plus a small offset).
    pub jit_share: f64,
    /// Offsets from crawl time for generated-at-crawl headers, with weights.
    pub jit_offsets: Vec<(i64, f64)>,
    /// Historical headers: years from here up to the crawl, each year
    /// `growth` times as common as the one before.
    pub first_year: i64,
    pub growth: f64,
    /// Shares of headers that cannot be parsed or are not credible.
    pub unusable: f64,
    pub incredible: f64,
}

impl Default for LmProfile {
    fn default() -> Self {
        Self {
            presence: 0.17,
            jit_share: 0.6,
            jit_offsets: vec![
                (0, 0.75),
                (-1, 0.10),
                (-2, 0.03),
                (-3, 0.02),
                (-14_400, 0.03),
                (-18_000, 0.02),
                (-3_600, 0.02),
                (3_600, 0.02),
                (7_200, 0.01),
            ],
            first_year: 1995,
            growth: 1.35,
            unusable: 0.0001,
            incredible: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub archive_id: String,
    pub n_segments: usize,
    pub entries_per_segment: usize,
    /// Distinct mime pairs in the base distribution.
    pub n_labels: usize,
    pub zipf_exponent: f64,
    pub n_languages: usize,
    pub perturbed: Vec<Perturbation>,
    pub boosted: Vec<usize>,
    pub boost_factor: usize,
    /// Extra crawldiagnostics entries, as a share of the successful ones.
    pub diagnostics_share: f64,
    /// Chance that an entry recaptures an earlier URL of its segment.
    pub duplicate_share: f64,
    pub block_size: usize,
    pub n_shards: usize,
    pub crawl_start: i64,
    pub crawl_seconds: i64,
    pub lastmod: LmProfile,
    pub anomalies: Vec<Injection>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            archive_id: "CC-MAIN-2019-35".into(),
            n_segments: 100,
            entries_per_segment: 1000,
            n_labels: 150,
            zipf_exponent: 1.1,
            n_languages: 60,
            perturbed: Vec::new(),
            boosted: Vec::new(),
            boost_factor: 10,
            diagnostics_share: 0.05,
            duplicate_share: 0.0,
            block_size: 30,
            n_shards: 3,
            crawl_start: days_from_civil(2019, 8, 17) * SECS_PER_DAY,
            crawl_seconds: 10 * SECS_PER_DAY,
            lastmod: LmProfile::default(),
            anomalies: Vec::new(),
        }
    }
}

fn share(name: &str, v: f64) -> Result<(), SynthError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(SynthError::InvalidSpec(format!("{name} = {v} is not in [0, 1]")))
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_segments == 0 || self.n_segments > 100 {
            return bad(format!("n_segments = {} (1..=100)", self.n_segments));
        }
        if self.entries_per_segment == 0 || self.n_labels < 3 || self.n_languages == 0 {
            return bad("entries_per_segment, n_languages must be positive and n_labels at least 3".into());
        }
        if !(self.zipf_exponent > 0.0) || !(self.lastmod.growth > 0.0) {
            return bad("zipf_exponent and growth must be positive".into());
        }
        if self.block_size == 0 || self.n_shards == 0 || self.boost_factor == 0 || self.crawl_seconds <= 0 {
            return bad("block_size, n_shards, boost_factor and crawl_seconds must be positive".into());
        }
        if !crate::fetch::is_archive_id(&self.archive_id) {
            return bad(format!("archive id {:?}", self.archive_id));
        }
        for p in &self.perturbed {
            if p.segment >= self.n_segments {
                return bad(format!("perturbed segment {} out of range", p.segment));
            }
            if !(p.divergence > 0.0 && p.divergence <= 1.0) {
                return bad(format!("divergence {} not in (0, 1]", p.divergence));
            }
        }
        if self.boosted.iter().any(|&b| b >= self.n_segments) {
            return bad("boosted segment out of range".into());
        }
        let mut ids: Vec<usize> = self.perturbed.iter().map(|p| p.segment).chain(self.boosted.iter().copied()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("a segment is listed twice among perturbed and boosted".into());
        }
        share("diagnostics_share", self.diagnostics_share)?;
        share("duplicate_share", self.duplicate_share)?;
        let lm = &self.lastmod;
        for (n, v) in [("presence", lm.presence), ("jit_share", lm.jit_share), ("unusable", lm.unusable), ("incredible", lm.incredible)] {
            share(n, v)?;
        }
        if lm.unusable + lm.incredible > 1.0 {
            return bad("unusable + incredible exceed 1".into());
        }
        if lm.jit_offsets.is_empty() || lm.jit_offsets.iter().any(|&(_, w)| !(w >= 0.0)) || lm.jit_offsets.iter().all(|&(_, w)| w == 0.0) {
            return bad("jit_offsets need non-negative weights, not all zero".into());
        }
        if lm.first_year > self.crawl_year() {
            return bad("first_year is after the crawl".into());
        }
        Ok(())
    }

    pub fn crawl_year(&self) -> i64 {
        lastmod::year_of(self.crawl_start)
    }

    pub fn divergence_of(&self, segment: usize) -> f64 {
        self.perturbed.iter().find(|p| p.segment == segment).map_or(0.0, |p| p.divergence)
    }

    pub fn entries_of(&self, segment: usize) -> usize {
        if self.boosted.contains(&segment) {
            self.entries_per_segment * self.boost_factor
        } else {
            self.entries_per_segment
        }
    }
}

/// Zipf weights `1 / i^s`, normalized.
pub fn base_distribution(n: usize, exponent: f64) -> Vec<f64> {
    let w: Vec<f64> = (1..=n).map(|i| (i as f64).powf(-exponent)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// `(1 - d) p + d rev(p)`.
pub fn mix_with_reversal(p: &[f64], divergence: f64) -> Vec<f64> {
    p.iter().zip(p.iter().rev()).map(|(a, b)| (1.0 - divergence) * a + divergence * b).collect()
}

/// The mime pairs behind label `i` of the base distribution.
pub fn mime_pair(i: usize) -> (Option<String>, Option<String>) {
    match i {
        0 => (Some("text/html".into()), Some("text/html".into())),
        1 => (Some("text/html".into()), Some("application/xhtml+xml".into())),
        2 => (None, Some("text/html".into())),
        i => {
            let mime = format!("application/x-synth-{i:03}");
            let detected = if i % 3 == 0 { "application/octet-stream".to_string() } else { mime.clone() };
            (Some(mime), Some(detected))
        }
    }
}

/// Row label of mime pair `i` as a tabulation prints it.
pub fn mime_label(i: usize) -> String {
    let (mime, detected) = mime_pair(i);
    let mime_text = mime.unwrap_or_else(|| crate::cdx::UNKNOWN_MIME.to_string());
    let detected = match detected {
        None => crate::features::Detected::Absent,
        Some(d) if d == mime_text => crate::features::Detected::Ditto,
        Some(d) => crate::features::Detected::Type(d),
    };
    FeatureKey::MimePair { mime: mime_text, detected }.label()
}

pub fn language_code(i: usize) -> String {
    const COMMON: [&str; 10] = ["eng", "deu", "rus", "fra", "jpn", "spa", "zho", "ita", "nld", "pol"];
    match COMMON.get(i) {
        Some(c) => c.to_string(),
        None => {
            let a = b'a' + (i / 26 % 26) as u8;
            let b = b'a' + (i % 26) as u8;
            format!("x{}{}", a as char, b as char)
        }
    }
}

/// An index entry with its segment and the Last-Modified header text, if
/// any, that the extraction file will carry for it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthEntry {
    pub entry: IndexEntry,
    pub segment: SegmentRef,
    pub header: Option<String>,
}

/// One drawn Last-Modified header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LmDraw {
    Absent,
    /// Header text and the value it should parse to, when credible.
    Header { text: String, credible: Option<i64> },
}

const HOSTS: [&str; 12] = ["example", "sample", "corpus", "archive", "library", "news", "shop", "blog", "forum", "wiki", "docs", "media"];
const TLDS: [&str; 8] = ["com", "org", "net", "de", "ru", "jp", "co.uk", "xn--p1ai"];
const WORDS: [&str; 16] = [
    "index", "about", "news", "article", "product", "category", "tag", "page", "search", "view", "item", "post", "list", "user", "help", "static",
];

impl LmProfile {
    fn year_weights(&self, crawl_year: i64) -> Vec<f64> {
        (self.first_year..=crawl_year).map(|y| self.growth.powi((y - self.first_year) as i32)).collect()
    }

    /// A credible historical value before the crawl.
    pub fn historical(&self, rng: &mut ChaCha8Rng, years: &WeightedIndex<f64>, crawl: i64) -> i64 {
        let year = self.first_year + years.sample(rng) as i64;
        let start = days_from_civil(year, 1, 1) * SECS_PER_DAY;
        let end = (days_from_civil(year + 1, 1, 1) * SECS_PER_DAY).min(crawl);
        if end <= start {
            return crawl;
        }
        rng.random_range(start..end).max(lastmod::CREDIBLE_FLOOR)
    }

    /// Credible values only, for exercising anomaly detection directly.
    pub fn sample_values(&self, seed: u64, n: usize, crawl_start: i64, crawl_seconds: i64) -> Vec<i64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let years = WeightedIndex::new(self.year_weights(lastmod::year_of(crawl_start))).expect("year weights");
        let offsets = WeightedIndex::new(self.jit_offsets.iter().map(|&(_, w)| w)).expect("offset weights");
        (0..n)
            .map(|_| {
                let crawl = crawl_start + rng.random_range(0..crawl_seconds);
                if rng.random::<f64>() < self.jit_share {
                    crawl + self.jit_offsets[offsets.sample(&mut rng)].0
                } else {
                    self.historical(&mut rng, &years, crawl)
                }
            })
            .collect()
    }
}

struct LmSampler<'a> {
    profile: &'a LmProfile,
    years: WeightedIndex<f64>,
    offsets: WeightedIndex<f64>,
}

impl<'a> LmSampler<'a> {
    fn new(profile: &'a LmProfile, crawl_year: i64) -> Self {
        Self {
            profile,
            years: WeightedIndex::new(profile.year_weights(crawl_year)).expect("validated year weights"),
            offsets: WeightedIndex::new(profile.jit_offsets.iter().map(|&(_, w)| w)).expect("validated offsets"),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, crawl: i64) -> LmDraw {
        let p = self.profile;
        if rng.random::<f64>() >= p.presence {
            return LmDraw::Absent;
        }
        let u = rng.random::<f64>();
        if u < p.unusable {
            const JUNK: [&str; 4] = ["0", "yesterday", "Sun, 32 Foo 2005 99:99:99 GMT", "-1"];
            return LmDraw::Header { text: JUNK[rng.random_range(0..JUNK.len())].into(), credible: None };
        }
        if u < p.unusable + p.incredible {
            let lm = if rng.random::<bool>() {
                rng.random_range(0..lastmod::CREDIBLE_FLOOR)
            } else {
                crawl + lastmod::FUTURE_SLACK + rng.random_range(1..400 * SECS_PER_DAY)
            };
            return LmDraw::Header { text: format_http_date(lm), credible: None };
        }
        let lm = if rng.random::<f64>() < p.jit_share {
            crawl + p.jit_offsets[self.offsets.sample(rng)].0
        } else {
            p.historical(rng, &self.years, crawl)
        };
        LmDraw::Header { text: render_header(lm, rng.random::<f64>()), credible: Some(lm) }
    }
}

/// Writes `lm` in one of the accepted header styles; `u` picks the style.
fn render_header(lm: i64, u: f64) -> String {
    let imf = format_http_date(lm);
    if u < 0.90 {
        return imf;
    }
    let c = crate::calendar::CivilTime::from_posix(lm);
    const DAYS: [&str; 7] = ["Sunday", "Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday"];
    const MONTHS: [&str; 12] = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"];
    let mon = MONTHS[c.month as usize - 1];
    // Two-digit years only round-trip inside 1970..=2069.
    if u < 0.94 && (1970..=2069).contains(&c.year) {
        format!(
            "{}, {:02}-{mon}-{:02} {:02}:{:02}:{:02} GMT",
            DAYS[c.weekday() as usize],
            c.day,
            c.year.rem_euclid(100),
            c.hour,
            c.minute,
            c.second
        )
    } else if u < 0.94 {
        imf
    } else if u < 0.97 {
        format!(
            "{} {mon} {:>2} {:02}:{:02}:{:02} {}",
            &DAYS[c.weekday() as usize][..3],
            c.day,
            c.hour,
            c.minute,
            c.second,
            c.year
        )
    } else if u < 0.99 {
        imf.trim_end_matches(" GMT").to_string()
    } else {
        imf.replace(" GMT", " +0000")
    }
}

fn base32_digest(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[u8; 32] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ234567";
    (0..32).map(|_| ALPHABET[rng.random_range(0..32)] as char).collect()
}

fn segment_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    languages: Vec<f64>,
    lm: LmSampler<'a>,
}

impl Generator<'_> {
    fn segment(&self, seg: usize) -> Vec<SynthEntry> {
        let spec = self.spec;
        let mut rng = segment_rng(spec.seed, seg as u64 + 1);
        let d = spec.divergence_of(seg);
        let base = base_distribution(spec.n_labels, spec.zipf_exponent);
        let mimes = WeightedIndex::new(mix_with_reversal(&base, d)).expect("mime weights");
        let langs = WeightedIndex::new(mix_with_reversal(&self.languages, d)).expect("language weights");
        let lengths = LogNormal::new(8.5 + 1.5 * d, 1.2).expect("length distribution");
        let prefix = 1_566_027_000_000u64 + seg as u64 * 1_371;
        let dir = format!("crawl-data/{}/segments/{prefix}.{seg:02}", spec.archive_id);
        let file_ts = Timestamp14::from_posix(spec.crawl_start).expect("crawl start in range");

        let n_ok = spec.entries_of(seg);
        let n_diag = (n_ok as f64 * spec.diagnostics_share).round() as usize;
        let mut out = Vec::with_capacity(n_ok + n_diag);
        let mut urls: Vec<String> = Vec::new();
        for i in 0..n_ok + n_diag {
            let ok = i < n_ok;
            let url = if !urls.is_empty() && rng.random::<f64>() < spec.duplicate_share {
                urls[rng.random_range(0..urls.len())].clone()
            } else {
                let host = format!(
                    "{}{}{}.{}",
                    if rng.random::<f64>() < 0.5 { "www." } else { "" },
                    HOSTS[rng.random_range(0..HOSTS.len())],
                    rng.random_range(0..40),
                    TLDS[rng.random_range(0..TLDS.len())]
                );
                let depth = rng.random_range(0..4);
                let mut path = String::new();
                for _ in 0..depth {
                    path.push('/');
                    path.push_str(WORDS[rng.random_range(0..WORDS.len())]);
                }
                path.push_str(&format!("/p{seg:02}{i:06}"));
                if rng.random::<f64>() < 0.1 {
                    path.push_str("/caf%C3%A9");
                }
                let query = if rng.random::<f64>() < 0.25 {
                    let len = rng.random_range(1..40);
                    format!("?q={}", "x".repeat(len))
                } else {
                    String::new()
                };
                let scheme = if rng.random::<f64>() < 0.7 { "https" } else { "http" };
                let u = format!("{scheme}://{host}{path}{query}");
                urls.push(u.clone());
                u
            };
            let crawl = spec.crawl_start + rng.random_range(0..spec.crawl_seconds);
            let timestamp = Timestamp14::from_posix(crawl).expect("crawl time in range");
            let (subset, status, mime, detected, redirect) = if ok {
                let (m, det) = mime_pair(mimes.sample(&mut rng));
                (Subset::Warc, 200, m, det, None)
            } else {
                match rng.random_range(0..3) {
                    0 => (Subset::CrawlDiagnostics, 404, Some("text/html".to_string()), Some("text/html".to_string()), None),
                    s => (
                        Subset::CrawlDiagnostics,
                        if s == 1 { 301 } else { 302 },
                        Some("text/html".to_string()),
                        Some("text/html".to_string()),
                        Some(format!("{url}/")),
                    ),
                }
            };
            let html = mime.as_deref() == Some("text/html") || detected.as_deref() == Some("text/html");
            let languages = (ok && rng.random::<f64>() < if html { 0.95 } else { 0.2 }).then(|| {
                let n = rng.random_range(1..=3);
                let mut v: Vec<String> = Vec::with_capacity(n);
                while v.len() < n {
                    let code = language_code(langs.sample(&mut rng));
                    if !v.contains(&code) {
                        v.push(code);
                    }
                }
                v
            });
            let length = (lengths.sample(&mut rng) as u64).max(1);
            let file = rng.random_range(0..800);
            let entry = IndexEntry {
                urlkey: canonicalize(&url).expect("generated URLs are absolute"),
                timestamp,
                url,
                mime,
                mime_detected: detected,
                status,
                digest: base32_digest(&mut rng),
                length,
                offset: rng.random_range(0..1_200_000_000),
                filename: format!("{dir}/{}/{}-{file_ts}-{file:05}.warc.gz", subset.as_str(), spec.archive_id),
                charset: (ok && html).then(|| "UTF-8".to_string()),
                languages,
                redirect,
                extras: Vec::new(),
            };
            let header = if ok {
                match self.lm.draw(&mut rng, crawl) {
                    LmDraw::Absent => None,
                    LmDraw::Header { text, .. } => Some(text),
                }
            } else {
                None
            };
            out.push(SynthEntry { entry, segment: SegmentRef { segment_id: seg as u8, subset }, header });
        }
        out
    }
}

/// All entries of the archive, segment by segment (not sorted). Injected
/// anomalies are applied.
pub fn generate_entries(spec: &SynthSpec) -> Result<Vec<SynthEntry>, SynthError> {
    spec.validate()?;
    let gen = Generator {
        spec,
        languages: base_distribution(spec.n_languages, 1.3),
        lm: LmSampler::new(&spec.lastmod, spec.crawl_year()),
    };
    let per_segment: Vec<Vec<SynthEntry>> = (0..spec.n_segments).into_par_iter().map(|s| gen.segment(s)).collect();
    let mut entries: Vec<SynthEntry> = per_segment.into_iter().flatten().collect();
    inject(spec, &mut entries)?;
    Ok(entries)
}

/// Gives `count` successful entries the injected value, preferring entries
/// that had no header, in a seeded order.
fn inject(spec: &SynthSpec, entries: &mut [SynthEntry]) -> Result<(), SynthError> {
    if spec.anomalies.is_empty() {
        return Ok(());
    }
    let mut rng = segment_rng(spec.seed, 0);
    let mut free: Vec<usize> = (0..entries.len())
        .filter(|&i| entries[i].segment.subset == Subset::Warc && entries[i].header.is_none())
        .collect();
    for inj in &spec.anomalies {
        for _ in 0..inj.count {
            if free.is_empty() {
                return Err(SynthError::InvalidSpec(format!("not enough entries to inject {} copies", inj.count)));
            }
            let i = free.swap_remove(rng.random_range(0..free.len()));
            entries[i].header = Some(format_http_date(inj.lm_posix));
        }
    }
    Ok(())
}

/// Splits sorted lines into gzip-member blocks spread over `n_shards`
/// shard files. Returns the `cluster.idx` text and the shard files.
pub fn build_zipnum(lines: &[String], block_size: usize, n_shards: usize) -> Result<(String, Vec<(String, Vec<u8>)>), SynthError> {
    if block_size == 0 || n_shards == 0 {
        return Err(SynthError::InvalidSpec("block_size and n_shards must be positive".into()));
    }
    let blocks: Vec<&[String]> = lines.chunks(block_size).collect();
    let per_shard = blocks.len().div_ceil(n_shards).max(1);
    let mut master = String::new();
    let mut shards = Vec::with_capacity(n_shards);
    let mut seq = 0;
    for (s, shard_blocks) in blocks.chunks(per_shard).enumerate() {
        let name = format!("cdx-{s:05}.gz");
        let mut bytes = Vec::new();
        for block in shard_blocks {
            let mut enc = GzBuilder::new().mtime(0).write(Vec::new(), Compression::default());
            for line in *block {
                enc.write_all(line.as_bytes())?;
                enc.write_all(b"\n")?;
            }
            let member = enc.finish()?;
            seq += 1;
            let mut head = block[0].splitn(3, ' ');
            let (key, ts) = (head.next().unwrap_or_default(), head.next().unwrap_or_default());
            master.push_str(&format!("{key} {ts}\t{name}\t{}\t{}\t{seq}\n", bytes.len(), member.len()));
            bytes.extend_from_slice(&member);
        }
        shards.push((name, bytes));
    }
    // Shards past the data are still written, empty, so the count is fixed.
    while shards.len() < n_shards {
        shards.push((format!("cdx-{:05}.gz", shards.len()), Vec::new()));
    }
    Ok((master, shards))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentTruth {
    pub segment: usize,
    pub entries: usize,
    pub divergence: f64,
    pub boosted: bool,
    /// Rank correlation of the segment's true mime distribution with the
    /// whole archive's.
    pub oracle_rho: f64,
    pub distribution: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileInfo {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct LmCounts {
    pub headers: u64,
    pub injected: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub archive_id: String,
    pub spec: SynthSpec,
    pub entries: usize,
    pub warc_entries: usize,
    pub index_lines: usize,
    pub master_lines: usize,
    pub labels: Vec<String>,
    pub base_distribution: Vec<f64>,
    pub whole_distribution: Vec<f64>,
    pub segments: Vec<SegmentTruth>,
    pub planted_worst: Vec<usize>,
    pub planted_best: Vec<usize>,
    /// Smallest oracle rho of an unperturbed segment minus the largest of a
    /// perturbed one; `None` without perturbed segments.
    pub oracle_rho_gap: Option<f64>,
    pub anomalies: Vec<Injection>,
    pub lastmod: LmCounts,
    pub files: Vec<FileInfo>,
}

/// The true per-segment and whole-archive mime distributions with each
/// segment's oracle rank correlation.
pub fn ground_truth(spec: &SynthSpec) -> (Vec<f64>, Vec<SegmentTruth>) {
    let base = base_distribution(spec.n_labels, spec.zipf_exponent);
    let mut whole = vec![0.0; base.len()];
    let mut segs = Vec::with_capacity(spec.n_segments);
    let total: usize = (0..spec.n_segments).map(|s| spec.entries_of(s)).sum();
    for s in 0..spec.n_segments {
        let dist = mix_with_reversal(&base, spec.divergence_of(s));
        let w = spec.entries_of(s) as f64 / total as f64;
        for (acc, p) in whole.iter_mut().zip(&dist) {
            *acc += w * p;
        }
        segs.push(SegmentTruth {
            segment: s,
            entries: spec.entries_of(s),
            divergence: spec.divergence_of(s),
            boosted: spec.boosted.contains(&s),
            oracle_rho: f64::NAN,
            distribution: dist,
        });
    }
    let whole_col: Vec<Option<f64>> = whole.iter().copied().map(Some).collect();
    for seg in &mut segs {
        let col: Vec<Option<f64>> = seg.distribution.iter().copied().map(Some).collect();
        seg.oracle_rho = spearman_omit(&col, &whole_col).map_or(f64::NAN, |c| c.rho);
    }
    (whole, segs)
}

/// A generated archive held in memory.
#[derive(Debug, Clone)]
pub struct SynthArchive {
    /// Primary-index lines in sort order.
    pub lines: Vec<String>,
    pub master_text: String,
    pub shards: Vec<(String, Vec<u8>)>,
    /// Extraction file: `urlkey, timestamp, header, url, filename`.
    pub lastmod_text: String,
    pub manifest: Manifest,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn generate(spec: &SynthSpec) -> Result<SynthArchive, SynthError> {
    let entries = generate_entries(spec)?;
    let mut rows: Vec<(String, usize)> = entries.iter().enumerate().map(|(i, e)| (e.entry.to_line(), i)).collect();
    rows.par_sort_unstable();
    let lines: Vec<String> = rows.iter().map(|(l, _)| l.clone()).collect();
    let (master_text, shards) = build_zipnum(&lines, spec.block_size, spec.n_shards)?;

    let mut lastmod_text = String::new();
    let mut lm = LmCounts::default();
    for (_, i) in &rows {
        let e = &entries[*i];
        if e.segment.subset != Subset::Warc {
            continue;
        }
        if e.header.is_some() {
            lm.headers += 1;
        }
        lastmod_text.push_str(&lastmod::extraction_line(
            e.entry.urlkey.as_str(),
            &e.entry.timestamp,
            e.header.as_deref().unwrap_or(""),
            &e.entry.url,
            Some(&e.entry.filename),
        ));
        lastmod_text.push('\n');
    }
    lm.injected = spec.anomalies.iter().map(|a| a.count).sum();

    let (whole, segments) = ground_truth(spec);
    let worst: Vec<usize> = {
        let mut v: Vec<usize> = spec.perturbed.iter().map(|p| p.segment).collect();
        v.sort_unstable();
        v
    };
    let mut best = spec.boosted.clone();
    best.sort_unstable();
    let gap = (!worst.is_empty()).then(|| {
        let clean = segments.iter().filter(|s| s.divergence == 0.0).map(|s| s.oracle_rho).fold(f64::INFINITY, f64::min);
        let bad = segments.iter().filter(|s| s.divergence > 0.0).map(|s| s.oracle_rho).fold(f64::NEG_INFINITY, f64::max);
        clean - bad
    });
    let mut files: Vec<FileInfo> = shards
        .iter()
        .map(|(name, b)| FileInfo { name: name.clone(), bytes: b.len() as u64, sha256: sha256_hex(b) })
        .collect();
    files.push(FileInfo { name: MASTER_INDEX_NAME.into(), bytes: master_text.len() as u64, sha256: sha256_hex(master_text.as_bytes()) });
    files.push(FileInfo { name: LASTMOD_NAME.into(), bytes: lastmod_text.len() as u64, sha256: sha256_hex(lastmod_text.as_bytes()) });

    let manifest = Manifest {
        archive_id: spec.archive_id.clone(),
        spec: spec.clone(),
        entries: entries.len(),
        warc_entries: entries.iter().filter(|e| e.segment.subset == Subset::Warc).count(),
        index_lines: lines.len(),
        master_lines: master_text.lines().count(),
        labels: (0..spec.n_labels).map(mime_label).collect(),
        base_distribution: base_distribution(spec.n_labels, spec.zipf_exponent),
        whole_distribution: whole,
        segments,
        planted_worst: worst,
        planted_best: best,
        oracle_rho_gap: gap,
        anomalies: spec.anomalies.clone(),
        lastmod: lm,
        files,
    };
    Ok(SynthArchive { lines, master_text, shards, lastmod_text, manifest })
}

/// Name of the extraction file written next to the index.
pub const LASTMOD_NAME: &str = "lastmod.tsv";
pub const MANIFEST_NAME: &str = "manifest.json";

impl SynthArchive {
    pub fn master(&self) -> Result<MasterIndex, SynthError> {
        Ok(MasterIndex::read(self.master_text.as_bytes())?)
    }

    pub fn memory_shards(&self) -> MemoryShards {
        let mut m = MemoryShards::new();
        for (name, bytes) in &self.shards {
            m.insert(name.clone(), bytes.clone());
        }
        m
    }

    pub fn master_lines(&self) -> Result<Vec<MasterIndexLine>, SynthError> {
        Ok(self.master()?.lines().to_vec())
    }

    /// Directory holding the index files inside an output root, laid out as
    /// on the public server.
    pub fn index_dir(root: &Path, archive_id: &str) -> PathBuf {
        root.join("cc-index").join("collections").join(archive_id).join("indexes")
    }

    /// Writes the index, the extraction file and the manifest under `root`.
    pub fn write(&self, root: &Path) -> Result<PathBuf, SynthError> {
        let dir = Self::index_dir(root, &self.manifest.archive_id);
        fs::create_dir_all(&dir)?;
        for (name, bytes) in &self.shards {
            fs::write(dir.join(name), bytes)?;
        }
        fs::write(dir.join(MASTER_INDEX_NAME), &self.master_text)?;
        fs::write(root.join(LASTMOD_NAME), &self.lastmod_text)?;
        let json = serde_json::to_string_pretty(&self.manifest).map_err(io::Error::other)?;
        fs::write(root.join(MANIFEST_NAME), json + "\n")?;
        Ok(dir)
    }
}

/// Label frequencies per segment from the generated entries (successful
/// retrievals only), for checking the sampler against the spec.
pub fn empirical_mime_counts(entries: &[SynthEntry], n_labels: usize) -> BTreeMap<usize, Vec<u64>> {
    let index: std::collections::HashMap<String, usize> = (0..n_labels).map(|i| (mime_label(i), i)).collect();
    let mut out: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    for e in entries.iter().filter(|e| e.segment.subset == Subset::Warc) {
        let label = FeatureKey::mime_pair(&e.entry).label();
        let row = out.entry(usize::from(e.segment.segment_id)).or_insert_with(|| vec![0; n_labels]);
        if let Some(&i) = index.get(&label) {
            row[i] += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            n_segments: 5,
            entries_per_segment: 60,
            perturbed: vec![Perturbation { segment: 3, divergence: 0.5 }],
            ..SynthSpec::default()
        }
    }

    #[test]
    fn deterministic_output() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.lines, b.lines);
        assert_eq!(a.shards, b.shards);
        assert_eq!(a.master_text, b.master_text);
        assert_eq!(a.lastmod_text, b.lastmod_text);
        let c = generate(&SynthSpec { seed: 2, ..small() }).unwrap();
        assert_ne!(a.manifest.files[0].sha256, c.manifest.files[0].sha256);
    }

    #[test]
    fn lines_sorted_and_parse() {
        let a = generate(&small()).unwrap();
        assert!(a.lines.windows(2).all(|w| w[0] <= w[1]));
        for l in &a.lines {
            let e = crate::cdx::parse_index_line(l).unwrap();
            assert_eq!(e.to_line(), *l);
            e.segment().unwrap();
        }
        assert_eq!(a.master().unwrap().len(), a.lines.len().div_ceil(30));
    }

    #[test]
    fn headers_render_to_the_same_instant() {
        for (i, lm) in [784_111_777i64, 1_114_316_977, 1_566_000_000, 946_684_800].into_iter().enumerate() {
            for u in [0.5, 0.92, 0.95, 0.98, 0.995] {
                let text = render_header(lm, u);
                assert_eq!(lastmod::parse_http_date(&text).unwrap(), lm, "{i} {text}");
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        for spec in [
            SynthSpec { n_segments: 0, ..small() },
            SynthSpec { perturbed: vec![Perturbation { segment: 9, divergence: 0.5 }], ..small() },
            SynthSpec { perturbed: vec![Perturbation { segment: 1, divergence: 0.0 }], ..small() },
            SynthSpec { boosted: vec![3], ..small() },
            SynthSpec { archive_id: "CC-MAIN-19".into(), ..small() },
            SynthSpec { block_size: 0, ..small() },
        ] {
            assert!(matches!(spec.validate(), Err(SynthError::InvalidSpec(_))), "{spec:?}");
        }
    }

    #[test]
    fn manifest_lists_planted_segments() {
        let spec = SynthSpec {
            perturbed: (0..5).map(|s| Perturbation { segment: s * 7, divergence: 0.4 }).collect(),
            boosted: vec![50],
            n_segments: 60,
            entries_per_segment: 20,
            ..SynthSpec::default()
        };
        let a = generate(&spec).unwrap();
        assert_eq!(a.manifest.planted_worst, vec![0, 7, 14, 21, 28]);
        assert_eq!(a.manifest.planted_best, vec![50]);
        assert!(a.manifest.oracle_rho_gap.unwrap() > 0.05);
    }

    #[test]
    fn injections_appear_in_extraction() {
        let spec = SynthSpec { anomalies: vec![Injection { lm_posix: 1_114_316_977, count: 25 }], ..small() };
        let a = generate(&spec).unwrap();
        let n = a.lastmod_text.lines().filter(|l| l.contains("Sun, 24 Apr 2005 04:29:37 GMT")).count();
        assert!(n >= 25);
    }
}
