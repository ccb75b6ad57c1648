//! Primary-index and master-index line formats.
//!
//! A primary-index line is `urlkey SP timestamp SP {json}`; the JSON object
//! carries the retrieval metadata with every value written as a string. A
//! master-index (`cluster.idx`) line names the first urlkey of one compressed
//! block together with the shard file, byte offset and byte length of that
//! block.

use std::fmt;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::calendar::Timestamp14;
use crate::surt::UrlKey;

/// Longest line accepted by the parsers, in bytes.
pub const MAX_LINE_BYTES: usize = 1 << 20;

/// Number of primary-index shards in a full archive.
pub const SHARD_COUNT: u32 = 300;

/// Number of segments an archive's data files are partitioned into.
pub const SEGMENT_COUNT: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CdxError {
    #[error("malformed index line: {0}")]
    MalformedLine(String),
    #[error("bad timestamp {0:?}")]
    BadTimestamp(String),
    #[error("invalid value for {field}: {value:?}")]
    InvalidField { field: &'static str, value: String },
    #[error("line of {0} bytes exceeds the 1 MiB limit")]
    LineTooLong(usize),
    #[error("no segments/<id>.<nn>/ component in {0:?}")]
    NoSegmentPath(String),
    #[error("unknown archive subset {0:?}")]
    UnknownSubset(String),
}

/// One primary-index line.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub urlkey: UrlKey,
    pub timestamp: Timestamp14,
    pub url: String,
    /// Declared media type; `None` when the index line has no `mime` key.
    pub mime: Option<String>,
    pub mime_detected: Option<String>,
    pub status: u16,
    pub digest: String,
    pub length: u64,
    pub offset: u64,
    pub filename: String,
    pub charset: Option<String>,
    pub languages: Option<Vec<String>>,
    pub redirect: Option<String>,
    /// Keys not listed above, in source order.
    pub extras: Vec<(String, Value)>,
}

/// Literal used in tabulations for a missing `mime` key.
pub const UNKNOWN_MIME: &str = "unk";

const KNOWN_KEYS: [&str; 11] = [
    "url",
    "mime",
    "mime-detected",
    "status",
    "digest",
    "length",
    "offset",
    "filename",
    "charset",
    "languages",
    "redirect",
];

impl IndexEntry {
    pub fn mime(&self) -> &str {
        self.mime.as_deref().unwrap_or(UNKNOWN_MIME)
    }

    pub fn segment(&self) -> Result<SegmentRef, CdxError> {
        segment_of(&self.filename)
    }

    /// Renders the entry back into index-line form.
    pub fn to_line(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for IndexEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {{", self.urlkey, self.timestamp)?;
        let mut first = true;
        let mut field = |f: &mut fmt::Formatter<'_>, key: &str, value: &Value| -> fmt::Result {
            if !first {
                f.write_str(", ")?;
            }
            first = false;
            write!(f, "{}: {}", Value::from(key), value)
        };
        let s = |v: &str| Value::String(v.to_string());
        field(f, "url", &s(&self.url))?;
        if let Some(m) = &self.mime {
            field(f, "mime", &s(m))?;
        }
        if let Some(m) = &self.mime_detected {
            field(f, "mime-detected", &s(m))?;
        }
        field(f, "status", &s(&self.status.to_string()))?;
        field(f, "digest", &s(&self.digest))?;
        field(f, "length", &s(&self.length.to_string()))?;
        field(f, "offset", &s(&self.offset.to_string()))?;
        field(f, "filename", &s(&self.filename))?;
        if let Some(c) = &self.charset {
            field(f, "charset", &s(c))?;
        }
        if let Some(langs) = &self.languages {
            field(f, "languages", &s(&langs.join(",")))?;
        }
        if let Some(r) = &self.redirect {
            field(f, "redirect", &s(r))?;
        }
        for (k, v) in &self.extras {
            field(f, k, v)?;
        }
        f.write_str("}")
    }
}

/// Returns the urlkey field of a primary or master line without parsing the rest.
pub fn line_key(line: &str) -> &str {
    let end = line.find([' ', '\t']).unwrap_or(line.len());
    &line[..end]
}

fn text_field(map: &Map<String, Value>, key: &'static str) -> Result<Option<String>, CdxError> {
    match map.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(Value::Number(n)) => Ok(Some(n.to_string())),
        Some(other) => Err(CdxError::InvalidField { field: key, value: other.to_string() }),
    }
}

fn required(map: &Map<String, Value>, key: &'static str) -> Result<String, CdxError> {
    text_field(map, key)?.ok_or_else(|| CdxError::MalformedLine(format!("missing {key:?}")))
}

fn number<T: std::str::FromStr>(field: &'static str, value: &str) -> Result<T, CdxError> {
    if value.is_empty() || !value.bytes().all(|b| b.is_ascii_digit()) {
        return Err(CdxError::InvalidField { field, value: value.to_string() });
    }
    value.parse().map_err(|_| CdxError::InvalidField { field, value: value.to_string() })
}

fn is_base32_digest(s: &str) -> bool {
    s.len() == 32 && s.bytes().all(|b| matches!(b, b'A'..=b'Z' | b'2'..=b'7'))
}

pub fn parse_index_line(line: &str) -> Result<IndexEntry, CdxError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    if line.len() > MAX_LINE_BYTES {
        return Err(CdxError::LineTooLong(line.len()));
    }
    let mut parts = line.splitn(3, ' ');
    let (Some(key), Some(ts), Some(json)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(CdxError::MalformedLine("expected urlkey, timestamp and metadata".into()));
    };
    if key.is_empty() {
        return Err(CdxError::MalformedLine("empty urlkey".into()));
    }
    let timestamp = Timestamp14::parse(ts).map_err(|_| CdxError::BadTimestamp(ts.to_string()))?;
    let map: Map<String, Value> = serde_json::from_str(json)
        .map_err(|e| CdxError::MalformedLine(format!("metadata record: {e}")))?;

    let status_text = required(&map, "status")?;
    if status_text.len() != 3 {
        return Err(CdxError::InvalidField { field: "status", value: status_text });
    }
    let status = number("status", &status_text)?;
    let digest = required(&map, "digest")?;
    if !is_base32_digest(&digest) {
        return Err(CdxError::InvalidField { field: "digest", value: digest });
    }
    let length: u64 = number("length", &required(&map, "length")?)?;
    if length == 0 {
        return Err(CdxError::InvalidField { field: "length", value: "0".into() });
    }
    let offset = number("offset", &required(&map, "offset")?)?;
    let languages = match text_field(&map, "languages")? {
        None => None,
        Some(text) => {
            let langs: Vec<String> = text.split(',').map(str::to_string).collect();
            if langs.len() > 3 || langs.iter().any(|l| l.is_empty()) {
                return Err(CdxError::InvalidField { field: "languages", value: text });
            }
            Some(langs)
        }
    };
    let extras = map
        .iter()
        .filter(|(k, _)| !KNOWN_KEYS.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();

    Ok(IndexEntry {
        urlkey: UrlKey::from_raw(key),
        timestamp,
        url: required(&map, "url")?,
        mime: text_field(&map, "mime")?,
        mime_detected: text_field(&map, "mime-detected")?,
        status,
        digest,
        length,
        offset,
        filename: required(&map, "filename")?,
        charset: text_field(&map, "charset")?,
        languages,
        redirect: text_field(&map, "redirect")?,
        extras,
    })
}

/// One `cluster.idx` line: the first key of a compressed block and where
/// that block lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MasterIndexLine {
    pub first_urlkey: UrlKey,
    /// Absent in the abbreviated four-field form.
    pub timestamp: Option<Timestamp14>,
    pub shard_name: String,
    pub block_offset: u64,
    pub block_length: u64,
    /// Trailing block sequence number some generators append.
    pub block_seq: Option<u64>,
}

/// Checks `cdx-NNNNN.gz` with `NNNNN` below [`SHARD_COUNT`].
pub fn is_shard_name(name: &str) -> bool {
    name.strip_prefix("cdx-")
        .and_then(|r| r.strip_suffix(".gz"))
        .filter(|n| n.len() == 5 && n.bytes().all(|b| b.is_ascii_digit()))
        .and_then(|n| n.parse::<u32>().ok())
        .is_some_and(|n| n < SHARD_COUNT)
}

pub fn parse_master_line(line: &str) -> Result<MasterIndexLine, CdxError> {
    let line = line.trim_end_matches(['\n', '\r']);
    if line.len() > MAX_LINE_BYTES {
        return Err(CdxError::LineTooLong(line.len()));
    }
    let fields: Vec<&str> = line.split([' ', '\t']).filter(|f| !f.is_empty()).collect();
    let has_ts = fields.len() >= 2 && !is_shard_name(fields[1]);
    let rest = if has_ts { fields.get(2..) } else { fields.get(1..) }.unwrap_or(&[]);
    if !(3..=4).contains(&rest.len()) {
        return Err(CdxError::MalformedLine(format!("expected 4 to 6 fields, got {}", fields.len())));
    }
    let timestamp = if has_ts {
        Some(Timestamp14::parse(fields[1]).map_err(|_| CdxError::BadTimestamp(fields[1].to_string()))?)
    } else {
        None
    };
    if !is_shard_name(rest[0]) {
        return Err(CdxError::InvalidField { field: "shard_name", value: rest[0].to_string() });
    }
    let block_length: u64 = number("block_length", rest[2])?;
    if block_length == 0 {
        return Err(CdxError::MalformedLine("block length 0".into()));
    }
    Ok(MasterIndexLine {
        first_urlkey: UrlKey::from_raw(fields[0]),
        timestamp,
        shard_name: rest[0].to_string(),
        block_offset: number("block_offset", rest[1])?,
        block_length,
        block_seq: rest.get(3).map(|s| number("block_seq", s)).transpose()?,
    })
}

impl fmt::Display for MasterIndexLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.first_urlkey)?;
        if let Some(ts) = &self.timestamp {
            write!(f, " {ts}")?;
        }
        write!(f, " {} {} {}", self.shard_name, self.block_offset, self.block_length)?;
        if let Some(seq) = self.block_seq {
            write!(f, " {seq}")?;
        }
        Ok(())
    }
}

/// Index of the first key that sorts before its predecessor, if any.
pub fn first_unsorted<'a, I>(keys: I) -> Option<usize>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut prev: Option<&str> = None;
    for (i, key) in keys.into_iter().enumerate() {
        if prev.is_some_and(|p| p > key) {
            return Some(i);
        }
        prev = Some(key);
    }
    None
}

/// Which archive component a record was written to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Warc,
    CrawlDiagnostics,
    RobotsTxt,
}

impl Subset {
    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Warc => "warc",
            Subset::CrawlDiagnostics => "crawldiagnostics",
            Subset::RobotsTxt => "robotstxt",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct SegmentRef {
    pub segment_id: u8,
    pub subset: Subset,
}

/// Reads the segment number and subset out of a record filename such as
/// `crawl-data/CC-MAIN-2021-25/segments/1623487610196.46/warc/...`.
pub fn segment_of(filename: &str) -> Result<SegmentRef, CdxError> {
    let no_segment = || CdxError::NoSegmentPath(filename.to_string());
    let parts: Vec<&str> = filename.split('/').collect();
    let at = parts.iter().position(|p| *p == "segments").ok_or_else(no_segment)?;
    let seg_dir = parts.get(at + 1).ok_or_else(no_segment)?;
    let suffix = seg_dir.rsplit_once('.').map(|(_, s)| s).ok_or_else(no_segment)?;
    if suffix.len() != 2 || !suffix.bytes().all(|b| b.is_ascii_digit()) {
        return Err(no_segment());
    }
    let segment_id: u8 = suffix.parse().map_err(|_| no_segment())?;
    let subset = match parts.get(at + 2).copied() {
        Some("warc") => Subset::Warc,
        Some("crawldiagnostics") => Subset::CrawlDiagnostics,
        Some("robotstxt") => Subset::RobotsTxt,
        Some(other) => return Err(CdxError::UnknownSubset(other.to_string())),
        None => return Err(no_segment()),
    };
    Ok(SegmentRef { segment_id, subset })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const W3_301: &str = r#"org,w3)/tr/xml 20210613173657 {"url": "https://www.w3.org/TR/XML/", "mime": "text/html", "mime-detected": "text/html", "status": "301", "digest": "LQRWZ7SMYYGCL55UJSVAS3BY64YNZ4DQ", "length": "743", "offset": "27241472", "filename": "crawl-data/CC-MAIN-2021-25/segments/1623487610196.46/crawldiagnostics/CC-MAIN-20210613161945-20210613191945-00275.warc.gz", "redirect": "https://www.w3.org/TR/xml/"}"#;
    pub(crate) const W3_200: &str = r#"org,w3)/tr/xml 20210613173657 {"url": "https://www.w3.org/TR/xml/", "mime": "text/html", "mime-detected": "application/xhtml+xml", "status": "200", "digest": "AOMNGHUQLUKLHHWBNUL7MOVXKIUX522W", "length": "55091", "offset": "968583998", "filename": "crawl-data/CC-MAIN-2021-25/segments/1623487610196.46/warc/CC-MAIN-20210613161945-20210613191945-00371.warc.gz", "charset": "UTF-8", "languages": "eng"}"#;

    #[test]
    fn redirect_entry() {
        let e = parse_index_line(W3_301).unwrap();
        assert_eq!(e.status, 301);
        assert_eq!(e.length, 743);
        assert_eq!(e.offset, 27_241_472);
        assert!(e.filename.contains("crawldiagnostics"));
        assert_eq!(e.redirect.as_deref(), Some("https://www.w3.org/TR/xml/"));
        assert_eq!(e.segment().unwrap(), SegmentRef { segment_id: 46, subset: Subset::CrawlDiagnostics });
    }

    #[test]
    fn html_entry() {
        let e = parse_index_line(W3_200).unwrap();
        assert_eq!(e.mime(), "text/html");
        assert_eq!(e.mime_detected.as_deref(), Some("application/xhtml+xml"));
        assert_eq!(e.length, 55_091);
        assert_eq!(e.charset.as_deref(), Some("UTF-8"));
        assert_eq!(e.languages, Some(vec!["eng".to_string()]));
        assert_eq!(e.segment().unwrap(), SegmentRef { segment_id: 46, subset: Subset::Warc });
    }

    #[test]
    fn round_trip_fixtures() {
        for line in [W3_301, W3_200] {
            assert_eq!(parse_index_line(line).unwrap().to_line(), line);
        }
    }

    #[test]
    fn minimal_entry_and_missing_mime() {
        let line = r#"com,example)/ 20230921101010 {"url": "http://example.com/", "status": "200", "digest": "AAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAA", "length": "10", "offset": "0", "filename": "crawl-data/CC-MAIN-2023-40/segments/1695233505362.07/warc/x.warc.gz"}"#;
        let e = parse_index_line(line).unwrap();
        assert_eq!(e.mime, None);
        assert_eq!(e.mime(), "unk");
        assert!(e.mime_detected.is_none() && e.charset.is_none() && e.languages.is_none());
        assert!(e.redirect.is_none() && e.extras.is_empty());
        assert_eq!(e.to_line(), line);
    }

    #[test]
    fn extras_are_kept() {
        let line = r#"com,example)/ 20230921101010 {"url": "http://example.com/", "mime": "text/html", "status": "200", "digest": "AAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAA", "length": "10", "offset": "0", "filename": "f", "truncated": "length"}"#;
        let e = parse_index_line(line).unwrap();
        assert_eq!(e.extras, vec![("truncated".to_string(), Value::from("length"))]);
        assert_eq!(e.to_line(), line);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(parse_index_line("org,w3)/tr/xml"), Err(CdxError::MalformedLine(_))));
        assert!(matches!(
            parse_index_line(&W3_200.replace("20210613173657", "20211313173657")),
            Err(CdxError::BadTimestamp(_))
        ));
        assert!(matches!(
            parse_index_line(&W3_200.replace(r#""length": "55091""#, r#""length": "0""#)),
            Err(CdxError::InvalidField { field: "length", .. })
        ));
        assert!(matches!(
            parse_index_line(&W3_200.replace(r#""eng""#, r#""eng,fra,deu,ita""#)),
            Err(CdxError::InvalidField { field: "languages", .. })
        ));
        assert!(parse_index_line(&W3_200.replace('}', "")).is_err());
        let long = format!("a 20210613173657 {{\"url\": \"{}\"}}", "x".repeat(MAX_LINE_BYTES));
        assert!(matches!(parse_index_line(&long), Err(CdxError::LineTooLong(_))));
    }

    #[test]
    fn master_line_forms() {
        let m = parse_master_line("org,w3)/tr/tr.xml 20210613171127 cdx-00253.gz 557238519 185309").unwrap();
        assert_eq!(m.shard_name, "cdx-00253.gz");
        assert_eq!(m.block_offset, 557_238_519);
        assert_eq!(m.block_length, 185_309);
        assert_eq!(m.to_string(), "org,w3)/tr/tr.xml 20210613171127 cdx-00253.gz 557238519 185309");

        let abbreviated = parse_master_line("org,w3)/tr/tr.xml cdx-00253.gz 557238519 185309").unwrap();
        assert!(abbreviated.timestamp.is_none());

        let tabs = parse_master_line("a)/ 20210613171127\tcdx-00000.gz\t0\t188224\t1").unwrap();
        assert_eq!(tabs.block_seq, Some(1));
        assert_eq!(tabs.to_string(), "a)/ 20210613171127 cdx-00000.gz 0 188224 1");
    }

    #[test]
    fn master_line_rejects() {
        assert!(parse_master_line("a)/ 20210613171127 cdx-00253.gz 5 0").is_err());
        assert!(parse_master_line("a)/ 20210613171127 cdx-00300.gz 5 10").is_err());
        assert!(parse_master_line("a)/ 20210613171127 cdx-00253.gz 5").is_err());
        assert!(parse_master_line("a)/ 20210613171127 cdx-00253.gz x 10").is_err());
    }

    #[test]
    fn sortedness() {
        assert_eq!(first_unsorted(["a)", "a)/x", "b)"]), None);
        assert_eq!(first_unsorted(["a)", "a)", "b)"]), None);
        assert_eq!(first_unsorted(["b)", "a)"]), Some(1));
    }

    #[test]
    fn segment_paths() {
        let f = "crawl-data/CC-MAIN-2021-25/segments/1623487610196.46/warc/CC-MAIN-20210613161945-20210613191945-00371.warc.gz";
        assert_eq!(segment_of(f).unwrap(), SegmentRef { segment_id: 46, subset: Subset::Warc });
        let r = f.replace("/warc/", "/robotstxt/");
        assert_eq!(segment_of(&r).unwrap().subset, Subset::RobotsTxt);
        assert!(matches!(segment_of("no/segments/here.gz"), Err(CdxError::NoSegmentPath(_))));
        assert!(matches!(segment_of("x/segments/1.5/warc/y"), Err(CdxError::NoSegmentPath(_))));
        assert!(matches!(segment_of("x/segments/1.05/wat/y"), Err(CdxError::UnknownSubset(_))));
    }

    #[test]
    fn line_key_splits_on_first_separator() {
        assert_eq!(line_key(W3_200), "org,w3)/tr/xml");
        assert_eq!(line_key("a)\tb"), "a)");
    }
}
