//! Last-Modified headers: lenient date parsing, the credibility window,
//! period tables, crawl-time offsets and single-value anomalies.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;

use serde::Serialize;
use thiserror::Error;

use crate::calendar::{CivilTime, Timestamp14};
use crate::cdx::{segment_of, SegmentRef, Subset};
use crate::features::{FeatureKind, Tabulation};
use crate::tsv;

#[derive(Debug, Error)]
pub enum LastModError {
    #[error("unusable Last-Modified value {0:?}")]
    Unusable(String),
    #[error("Last-Modified {lm} is not credible for a crawl at {crawl}")]
    Incredible { lm: i64, crawl: i64 },
    #[error("bad crawl timestamp {0:?}")]
    BadTimestamp(String),
    #[error("extraction line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const MONTHS: [&str; 12] = ["jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec"];
const MONTH_NAMES: [&str; 12] = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"];
const WEEKDAYS: [&str; 7] = ["sunday", "monday", "tuesday", "wednesday", "thursday", "friday", "saturday"];
const DAY_NAMES: [&str; 7] = ["Sun", "Mon", "Tue", "Wed", "Thu", "Fri", "Sat"];

fn month_of(token: &str) -> Option<u32> {
    let t = token.to_ascii_lowercase();
    let t = t.strip_suffix('.').unwrap_or(&t);
    if t.len() < 3 {
        return None;
    }
    MONTHS.iter().position(|m| t.starts_with(m)).filter(|_| t.chars().all(|c| c.is_ascii_alphabetic())).map(|i| i as u32 + 1)
}

fn is_weekday(token: &str) -> bool {
    let t = token.to_ascii_lowercase();
    t.len() >= 3 && WEEKDAYS.iter().any(|d| d.starts_with(&t))
}

/// Offset east of UTC in seconds for a zone token, `None` when it is not one.
fn zone_offset(token: &str) -> Option<i64> {
    let upper = token.to_ascii_uppercase();
    match upper.as_str() {
        "GMT" | "UTC" | "UT" | "Z" => return Some(0),
        "EST" => return Some(-5 * 3600),
        "EDT" => return Some(-4 * 3600),
        "CST" => return Some(-6 * 3600),
        "CDT" => return Some(-5 * 3600),
        "MST" => return Some(-7 * 3600),
        "MDT" => return Some(-6 * 3600),
        "PST" => return Some(-8 * 3600),
        "PDT" => return Some(-7 * 3600),
        _ => {}
    }
    // GMT+0200 and friends.
    let rest = ["GMT", "UTC"].iter().find_map(|p| upper.strip_prefix(p)).unwrap_or(&upper);
    let (sign, digits) = match rest.as_bytes().first()? {
        b'+' => (1, &rest[1..]),
        b'-' => (-1, &rest[1..]),
        _ => return None,
    };
    let digits: String = digits.chars().filter(|&c| c != ':').collect();
    if digits.len() != 4 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let (h, m): (i64, i64) = (digits[..2].parse().ok()?, digits[2..].parse().ok()?);
    if h > 14 || m > 59 {
        return None;
    }
    Some(sign * (h * 3600 + m * 60))
}

fn parse_clock(token: &str) -> Option<(u32, u32, u32)> {
    let mut parts = token.split(':');
    let mut next = || -> Option<u32> {
        let p = parts.next()?;
        (!p.is_empty() && p.len() <= 2 && p.bytes().all(|b| b.is_ascii_digit())).then(|| p.parse().ok())?
    };
    let (h, m, s) = (next()?, next()?, next()?);
    parts.next().is_none().then_some((h, m, s))
}

/// Parses an HTTP date to POSIX seconds.
///
/// Accepts the IMF-fixdate, RFC 850 and asctime forms, and tolerates a
/// missing or misplaced `GMT`, numeric `+hhmm` zones, the common North
/// American zone abbreviations and single-digit days. A date with no zone
/// is taken as UTC. Weekday names are skipped, not checked.
pub fn parse_http_date(s: &str) -> Result<i64, LastModError> {
    let unusable = || LastModError::Unusable(s.to_string());
    let (mut month, mut clock, mut zone) = (None, None, None);
    let mut numbers: Vec<&str> = Vec::new();
    for token in s.split(|c: char| c.is_ascii_whitespace() || c == ',').filter(|t| !t.is_empty()) {
        // The RFC 850 date is one dash-joined token: 06-Nov-94.
        let parts: Vec<&str> = if token.contains('-') && token.chars().next().is_some_and(|c| c.is_ascii_digit()) {
            token.split('-').collect()
        } else {
            vec![token]
        };
        for t in parts {
            if t.bytes().all(|b| b.is_ascii_digit()) && !t.is_empty() {
                numbers.push(t);
            } else if let Some(m) = month_of(t) {
                if month.replace(m).is_some() {
                    return Err(unusable());
                }
            } else if let Some(c) = parse_clock(t) {
                if clock.replace(c).is_some() {
                    return Err(unusable());
                }
            } else if let Some(z) = zone_offset(t) {
                // Repeated GMT is harmless; two different zones are not.
                if zone.is_some_and(|old| old != z) {
                    return Err(unusable());
                }
                zone = Some(z);
            } else if !is_weekday(t) {
                return Err(unusable());
            }
        }
    }
    let (month, (hour, minute, second)) = (month.ok_or_else(unusable)?, clock.ok_or_else(unusable)?);
    let [a, b] = numbers[..] else {
        return Err(unusable());
    };
    // Day comes before year in every accepted form, unless only one of
    // them has four digits.
    let (day, year) = if a.len() == 4 && b.len() <= 2 { (b, a) } else { (a, b) };
    if day.len() > 2 {
        return Err(unusable());
    }
    let year: i64 = match year.len() {
        4 => year.parse().map_err(|_| unusable())?,
        2 => {
            let y: i64 = year.parse().map_err(|_| unusable())?;
            if y >= 70 {
                1900 + y
            } else {
                2000 + y
            }
        }
        _ => return Err(unusable()),
    };
    let day: u32 = day.parse().map_err(|_| unusable())?;
    let civil = CivilTime::new(year, month, day, hour, minute, second).ok_or_else(unusable)?;
    Ok(civil.to_posix() - zone.unwrap_or(0))
}

/// IMF-fixdate form, e.g. `Sun, 24 Apr 2005 04:29:37 GMT`.
pub fn format_http_date(posix: i64) -> String {
    let c = CivilTime::from_posix(posix);
    format!(
        "{}, {:02} {} {:04} {:02}:{:02}:{:02} GMT",
        DAY_NAMES[c.weekday() as usize],
        c.day,
        MONTH_NAMES[c.month as usize - 1],
        c.year,
        c.hour,
        c.minute,
        c.second
    )
}

/// 1990-01-01T00:00:00Z.
pub const CREDIBLE_FLOOR: i64 = 631_152_000;
/// How far past the crawl a value may lie: 25 hours.
pub const FUTURE_SLACK: i64 = 90_000;

/// Closed interval of believable Last-Modified values, relative to the
/// crawl time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CredibilityWindow {
    pub floor: i64,
    pub future_slack: i64,
}

impl Default for CredibilityWindow {
    fn default() -> Self {
        Self { floor: CREDIBLE_FLOOR, future_slack: FUTURE_SLACK }
    }
}

impl CredibilityWindow {
    pub fn accepts(&self, lm: i64, crawl: i64) -> bool {
        lm >= self.floor && lm <= crawl.saturating_add(self.future_slack)
    }

    pub fn check(&self, lm: i64, crawl: i64) -> Result<i64, LastModError> {
        if self.accepts(lm, crawl) {
            Ok(lm)
        } else {
            Err(LastModError::Incredible { lm, crawl })
        }
    }
}

/// [`CredibilityWindow::check`] with the default window.
pub fn credibility_filter(lm: i64, crawl: i64) -> Result<i64, LastModError> {
    CredibilityWindow::default().check(lm, crawl)
}

pub fn crawl_posix_of(timestamp: &str) -> Result<i64, LastModError> {
    Timestamp14::parse(timestamp)
        .map(|t| t.to_posix())
        .map_err(|_| LastModError::BadTimestamp(timestamp.to_string()))
}

/// An accepted Last-Modified value with its crawl context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LastModRecord {
    pub lm_posix: i64,
    pub crawl_posix: i64,
    pub segment: Option<SegmentRef>,
    pub urlkey: String,
    pub url_ref: String,
    pub raw_header: String,
}

impl LastModRecord {
    pub fn offset(&self) -> i64 {
        self.lm_posix - self.crawl_posix
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ParseStats {
    pub total: u64,
    pub accepted: u64,
    pub rejected_unusable: u64,
    pub rejected_incredible: u64,
    /// Lines with an empty header field.
    pub absent: u64,
}

impl ParseStats {
    pub fn merge(&mut self, other: &ParseStats) {
        self.total += other.total;
        self.accepted += other.accepted;
        self.rejected_unusable += other.rejected_unusable;
        self.rejected_incredible += other.rejected_incredible;
        self.absent += other.absent;
    }
}

/// Reads an extraction file: tab-separated `urlkey, timestamp14, header,
/// url`, with an optional fifth column holding the WARC filename. Unusable
/// and incredible headers are counted and dropped; a structurally broken
/// line is an error.
pub fn read_extraction<R: BufRead>(
    input: R,
    window: &CredibilityWindow,
) -> Result<(Vec<LastModRecord>, ParseStats), LastModError> {
    let mut records = Vec::new();
    let mut stats = ParseStats::default();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| LastModError::Parse { line: lineno, reason };
        let fields: Vec<&str> = line.split('\t').collect();
        if !(4..=5).contains(&fields.len()) {
            return Err(bad(format!("expected 4 or 5 fields, found {}", fields.len())));
        }
        let crawl = crawl_posix_of(fields[1]).map_err(|e| bad(e.to_string()))?;
        let segment = match fields.get(4) {
            Some(f) if !f.is_empty() => Some(segment_of(f).map_err(|e| bad(e.to_string()))?),
            _ => None,
        };
        stats.total += 1;
        let header = fields[2].trim();
        if header.is_empty() {
            stats.absent += 1;
            continue;
        }
        let lm = match parse_http_date(header) {
            Ok(lm) => lm,
            Err(_) => {
                stats.rejected_unusable += 1;
                continue;
            }
        };
        if !window.accepts(lm, crawl) {
            stats.rejected_incredible += 1;
            continue;
        }
        stats.accepted += 1;
        records.push(LastModRecord {
            lm_posix: lm,
            crawl_posix: crawl,
            segment,
            urlkey: fields[0].to_string(),
            url_ref: fields[3].to_string(),
            raw_header: header.to_string(),
        });
    }
    Ok((records, stats))
}

/// One extraction line for a record, the inverse of [`read_extraction`].
pub fn extraction_line(urlkey: &str, timestamp: &Timestamp14, header: &str, url: &str, filename: Option<&str>) -> String {
    let mut line = format!("{urlkey}\t{timestamp}\t{}\t{}", tsv::clean_cell(header), tsv::clean_cell(url));
    if let Some(f) = filename {
        line.push('\t');
        line.push_str(f);
    }
    line
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Year,
    Month,
    Day,
}

impl std::str::FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "year" => Ok(Self::Year),
            "month" => Ok(Self::Month),
            "day" => Ok(Self::Day),
            other => Err(format!("unknown granularity {other:?} (year, month or day)")),
        }
    }
}

/// UTC calendar period of an instant: `2005`, `2005-04` or `2005-04-24`.
pub fn period_label(posix: i64, granularity: Granularity) -> String {
    let c = CivilTime::from_posix(posix);
    match granularity {
        Granularity::Year => format!("{:04}", c.year),
        Granularity::Month => format!("{:04}-{:02}", c.year, c.month),
        Granularity::Day => format!("{:04}-{:02}-{:02}", c.year, c.month, c.day),
    }
}

pub fn year_of(posix: i64) -> i64 {
    CivilTime::from_posix(posix).year
}

/// Counts per period in chronological order; empty periods are omitted.
pub fn tabulate_period(values: impl IntoIterator<Item = i64>, granularity: Granularity) -> Vec<(String, u64)> {
    let mut counts: BTreeMap<(i64, u32, u32), u64> = BTreeMap::new();
    for v in values {
        let c = CivilTime::from_posix(v);
        let key = match granularity {
            Granularity::Year => (c.year, 0, 0),
            Granularity::Month => (c.year, c.month, 0),
            Granularity::Day => (c.year, c.month, c.day),
        };
        *counts.entry(key).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|((y, m, d), n)| {
            let label = match granularity {
                Granularity::Year => format!("{y:04}"),
                Granularity::Month => format!("{y:04}-{m:02}"),
                Granularity::Day => format!("{y:04}-{m:02}-{d:02}"),
            };
            (label, n)
        })
        .collect()
}

pub fn period_tsv(rows: &[(String, u64)]) -> String {
    let mut out = String::from("period\tcount\n");
    for (p, n) in rows {
        let _ = writeln!(out, "{p}\t{n}");
    }
    out
}

/// Per-segment year counts for the Last-Modified property. Records without
/// a segment, or from outside the warc subset, are skipped.
pub fn year_tabulation(records: &[LastModRecord]) -> Tabulation {
    let mut tab = Tabulation::new(FeatureKind::LmhYear);
    for r in records {
        match r.segment {
            Some(seg) if seg.subset == Subset::Warc => {
                tab.add_year(seg.segment_id, year_of(r.lm_posix)).expect("year tabulation");
            }
            _ => tab.skipped += 1,
        }
    }
    tab
}

/// Exact offsets `lm - crawl`, most frequent first (ties by offset).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffsetHistogram {
    pub total: u64,
    pub counts: Vec<(i64, u64)>,
}

pub fn offsets<'a>(records: impl IntoIterator<Item = &'a LastModRecord>) -> OffsetHistogram {
    let mut map: HashMap<i64, u64> = HashMap::new();
    let mut total = 0;
    for r in records {
        *map.entry(r.offset()).or_default() += 1;
        total += 1;
    }
    let mut counts: Vec<(i64, u64)> = map.into_iter().collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    OffsetHistogram { total, counts }
}

impl OffsetHistogram {
    pub fn top(&self, n: usize) -> &[(i64, u64)] {
        &self.counts[..n.min(self.counts.len())]
    }

    /// Share of all offsets covered by the `n` most frequent.
    pub fn coverage(&self, n: usize) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.top(n).iter().map(|&(_, c)| c).sum::<u64>() as f64 / self.total as f64
    }

    pub fn share_of(&self, offset: i64) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.counts.iter().find(|&&(o, _)| o == offset).map_or(0, |&(_, c)| c) as f64 / self.total as f64
    }

    pub fn to_tsv(&self, n: usize) -> String {
        let mut out = format!("# total={} top{n}_coverage={}\noffset\tcount\tshare\n", self.total, tsv::fmt_f64(self.coverage(n)));
        for &(o, c) in self.top(n) {
            let _ = writeln!(out, "{o}\t{c}\t{}", tsv::fmt_f64(c as f64 / self.total as f64));
        }
        out
    }
}

/// Width of an anomaly bucket in seconds.
pub const BUCKET_SECONDS: i64 = 10_000;
/// Ranks per year compared across years.
pub const TOP_RANKS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnomalyThresholds {
    pub ratio: f64,
    pub share: f64,
}

impl Default for AnomalyThresholds {
    fn default() -> Self {
        Self { ratio: 10.0, share: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "year", rename_all = "snake_case")]
pub enum ComparedWith {
    /// Same-ranked bucket of another year.
    Year(i64),
    /// Next-ranked bucket of the same year.
    RunnerUp,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub against: ComparedWith,
    pub count: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnomalyReport {
    pub bucket_id: i64,
    pub year: i64,
    /// 1-based rank of the bucket within its year.
    pub rank: usize,
    pub bucket_count: u64,
    pub dominant_value: i64,
    pub dominant_count: u64,
    pub dominant_share: f64,
    pub comparisons: Vec<Comparison>,
}

#[derive(Default)]
struct Bucket {
    count: u64,
    values: HashMap<i64, u64>,
}

impl Bucket {
    /// Most frequent exact value, smaller value first on ties.
    fn dominant(&self) -> (i64, u64) {
        self.values
            .iter()
            .map(|(&v, &n)| (v, n))
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .unwrap_or((0, 0))
    }
}

/// Buckets values into 10000-second intervals, ranks the buckets within each
/// year, and flags a bucket whose count exceeds `ratio` times the
/// same-ranked bucket of each neighbouring year (the next-ranked bucket of
/// its own year when no neighbour has that rank) and whose most common
/// exact value holds at least `share` of it.
pub fn detect_anomalies(values: impl IntoIterator<Item = i64>, thresholds: AnomalyThresholds) -> Vec<AnomalyReport> {
    let mut buckets: HashMap<i64, Bucket> = HashMap::new();
    for v in values {
        let b = buckets.entry(v.div_euclid(BUCKET_SECONDS)).or_default();
        b.count += 1;
        *b.values.entry(v).or_default() += 1;
    }
    let mut by_year: BTreeMap<i64, Vec<(i64, u64)>> = BTreeMap::new();
    for (&id, b) in &buckets {
        by_year.entry(year_of(id * BUCKET_SECONDS)).or_default().push((id, b.count));
    }
    for ranked in by_year.values_mut() {
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    }

    let mut reports = Vec::new();
    for (&year, ranked) in &by_year {
        for (rank, &(id, count)) in ranked.iter().take(TOP_RANKS).enumerate() {
            let mut comparisons: Vec<Comparison> = [year - 1, year + 1]
                .iter()
                .filter_map(|y| {
                    let &(_, other) = by_year.get(y)?.get(rank)?;
                    Some(Comparison { against: ComparedWith::Year(*y), count: other, ratio: count as f64 / other as f64 })
                })
                .collect();
            if comparisons.is_empty() {
                if let Some(&(_, other)) = ranked.get(rank + 1) {
                    comparisons.push(Comparison { against: ComparedWith::RunnerUp, count: other, ratio: count as f64 / other as f64 });
                }
            }
            if comparisons.is_empty() || comparisons.iter().any(|c| count as f64 <= thresholds.ratio * c.count as f64) {
                continue;
            }
            let (value, n) = buckets[&id].dominant();
            let share = n as f64 / count as f64;
            if share < thresholds.share {
                continue;
            }
            reports.push(AnomalyReport {
                bucket_id: id,
                year,
                rank: rank + 1,
                bucket_count: count,
                dominant_value: value,
                dominant_count: n,
                dominant_share: share,
                comparisons,
            });
        }
    }
    reports.sort_by_key(|r| r.bucket_id);
    reports
}

pub fn anomaly_tsv(reports: &[AnomalyReport]) -> String {
    let mut out = String::from("bucket\tyear\trank\tcount\tdominant_value\tdominant_date\tdominant_share\tcomparisons\n");
    for r in reports {
        let comps: Vec<String> = r
            .comparisons
            .iter()
            .map(|c| match c.against {
                ComparedWith::Year(y) => format!("{y}:{}x", tsv::fmt_f64(c.ratio)),
                ComparedWith::RunnerUp => format!("runner-up:{}x", tsv::fmt_f64(c.ratio)),
            })
            .collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.bucket_id,
            r.year,
            r.rank,
            r.bucket_count,
            r.dominant_value,
            format_http_date(r.dominant_value),
            tsv::fmt_f64(r.dominant_share),
            comps.join(",")
        );
    }
    out
}

/// Drops every record with exactly this Last-Modified value.
pub fn remove_value(records: Vec<LastModRecord>, lm_posix: i64) -> (Vec<LastModRecord>, usize) {
    let before = records.len();
    let kept: Vec<LastModRecord> = records.into_iter().filter(|r| r.lm_posix != lm_posix).collect();
    let removed = before - kept.len();
    (kept, removed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_forms() {
        assert_eq!(parse_http_date("Sun, 24 Apr 2005 04:29:37 GMT").unwrap(), 1_114_316_977);
        assert_eq!(parse_http_date("Sunday, 06-Nov-94 08:49:37 GMT").unwrap(), 784_111_777);
        assert_eq!(parse_http_date("Sun Nov  6 08:49:37 1994").unwrap(), 784_111_777);
        assert_eq!(parse_http_date("Sun, 06 Nov 1994 08:49:37 GMT").unwrap(), 784_111_777);
    }

    #[test]
    fn lenient_forms() {
        let want = 1_114_316_977;
        for s in [
            "Sun, 24 Apr 2005 04:29:37",
            "GMT Sun, 24 Apr 2005 04:29:37",
            "Sun, 24 Apr 2005 GMT 04:29:37",
            "Sun,24 Apr 2005 04:29:37 GMT",
            "sun, 24 apr 2005 04:29:37 gmt",
            "Sun, 24 Apr 2005 06:29:37 +0200",
            "Sun, 23 Apr 2005 23:29:37 -0500",
            "Sun, 24 Apr 2005 06:29:37 GMT+02:00",
            "Sun, 24 Apr 2005 04:29:37 UTC",
            "24 Apr 2005 04:29:37 GMT",
            "Sun, 24 April 2005 04:29:37 GMT",
        ] {
            assert_eq!(parse_http_date(s).unwrap(), want, "{s}");
        }
        assert_eq!(parse_http_date("Thu, 1 Jan 2004 00:00:00 GMT").unwrap(), 1_072_915_200);
        assert_eq!(parse_http_date("Thu, 01-Jan-04 00:00:00 GMT").unwrap(), 1_072_915_200);
    }

    #[test]
    fn unusable_values() {
        for s in [
            "not a date",
            "",
            "Sun, 31 Feb 2005 04:29:37 GMT",
            "Sun, 24 Apr 2005 25:29:37 GMT",
            "Sun, 24 Apr 2005",
            "Sun, 24 Apr 205 04:29:37 GMT",
            "Sun, 24 Apr Mar 2005 04:29:37 GMT",
            "1114316977",
            "Sun, 24 Apr 2005 04:29:37 +0200 -0300",
        ] {
            assert!(matches!(parse_http_date(s), Err(LastModError::Unusable(_))), "{s}");
        }
    }

    #[test]
    fn format_round_trip() {
        assert_eq!(format_http_date(1_114_316_977), "Sun, 24 Apr 2005 04:29:37 GMT");
        assert_eq!(format_http_date(784_111_777), "Sun, 06 Nov 1994 08:49:37 GMT");
        for t in [0, 631_152_000, 951_782_400, 1_623_605_817] {
            assert_eq!(parse_http_date(&format_http_date(t)).unwrap(), t);
        }
    }

    #[test]
    fn credibility_window_edges() {
        let crawl = 1_623_605_817;
        assert!(credibility_filter(0, crawl).is_err());
        assert!(credibility_filter(CREDIBLE_FLOOR - 1, crawl).is_err());
        assert!(credibility_filter(CREDIBLE_FLOOR, crawl).is_ok());
        assert!(credibility_filter(crawl + 7200, crawl).is_ok());
        assert!(credibility_filter(crawl + FUTURE_SLACK, crawl).is_ok());
        assert!(credibility_filter(crawl + FUTURE_SLACK + 1, crawl).is_err());
        assert!(credibility_filter(crawl + 10 * 86_400, crawl).is_err());
    }

    #[test]
    fn crawl_times() {
        assert_eq!(crawl_posix_of("20210613173657").unwrap(), 1_623_605_817);
        assert_eq!(crawl_posix_of("19700101000000").unwrap(), 0);
        assert!(crawl_posix_of("20231399000000").is_err());
    }

    #[test]
    fn day_table_fixture() {
        let base = parse_http_date("Fri, 22 Apr 2005 00:00:00 GMT").unwrap();
        let counts = [362u64, 215, 365_113, 1167, 554];
        let mut values = Vec::new();
        for (d, &n) in counts.iter().enumerate() {
            values.extend((0..n).map(|i| base + d as i64 * 86_400 + (i as i64 % 86_400)));
        }
        let rows = tabulate_period(values.iter().copied(), Granularity::Day);
        let want: Vec<(String, u64)> =
            (22..=26).zip(counts).map(|(d, n)| (format!("2005-04-{d}"), n)).collect();
        assert_eq!(rows, want);
        assert_eq!(tabulate_period(values.iter().copied(), Granularity::Month), vec![("2005-04".to_string(), 367_411)]);
        assert!(tabulate_period(std::iter::empty(), Granularity::Year).is_empty());
    }

    #[test]
    fn offsets_and_removal() {
        let rec = |lm, crawl| LastModRecord {
            lm_posix: lm,
            crawl_posix: crawl,
            segment: None,
            urlkey: String::new(),
            url_ref: String::new(),
            raw_header: String::new(),
        };
        let records = vec![rec(100, 100), rec(100 - 14_400, 100), rec(5, 5), rec(1_114_316_977, 1_114_316_999)];
        let h = offsets(&records);
        assert_eq!(h.counts[0], (0, 2));
        assert_eq!(h.share_of(-14_400), 0.25);
        assert_eq!(h.coverage(2), 0.75);
        let (kept, removed) = remove_value(records, 1_114_316_977);
        assert_eq!((kept.len(), removed), (3, 1));
        let (kept, removed) = remove_value(kept, 1_114_316_977);
        assert_eq!((kept.len(), removed), (3, 0));
    }

    #[test]
    fn extraction_counts() {
        let text = "org,a)/\t20210613173657\tSun, 24 Apr 2005 04:29:37 GMT\thttp://a.org/\n\
                    org,b)/\t20210613173657\t\thttp://b.org/\n\
                    org,c)/\t20210613173657\tyesterday\thttp://c.org/\n\
                    org,d)/\t20210613173657\tThu, 01 Jan 1970 00:00:00 GMT\thttp://d.org/\t\
                    crawl-data/CC-MAIN-2021-25/segments/1623487610196.46/warc/x.warc.gz\n";
        let (records, stats) = read_extraction(text.as_bytes(), &CredibilityWindow::default()).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].lm_posix, 1_114_316_977);
        assert_eq!(
            stats,
            ParseStats { total: 4, accepted: 1, rejected_unusable: 1, rejected_incredible: 1, absent: 1 }
        );
        assert!(read_extraction("a\tb\n".as_bytes(), &CredibilityWindow::default()).is_err());
    }

    #[test]
    fn spike_is_flagged_with_its_value() {
        let mut values = Vec::new();
        for year in 2003..=2007 {
            let start = parse_http_date(&format!("Wed, 01 Jan {year} 00:00:00 GMT")).unwrap();
            values.extend((0..5000).map(|i| start + i * 6151));
        }
        assert!(detect_anomalies(values.iter().copied(), AnomalyThresholds::default()).is_empty());
        values.extend(std::iter::repeat(1_114_316_977).take(2000));
        let reports = detect_anomalies(values.iter().copied(), AnomalyThresholds::default());
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].dominant_value, 1_114_316_977);
        assert_eq!(reports[0].bucket_id, 111_431);
        assert_eq!(reports[0].year, 2005);
        assert_eq!(reports[0].comparisons.len(), 2);
    }
}
