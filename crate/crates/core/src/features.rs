//! Per-segment tabulation of index properties and the merged top-k table.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::cdx::{IndexEntry, SegmentRef, Subset, UNKNOWN_MIME};
use crate::tsv;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("entry from the {0} subset; only successful retrievals (warc) are tabulated")]
    WrongSubset(Subset),
    #[error("percentile of an empty set")]
    EmptyInput,
    #[error("top_k must be at least 1")]
    ZeroTopK,
    #[error("unknown feature kind {0:?}")]
    UnknownKind(String),
    #[error("{kind} tabulation cannot take {what}")]
    KindMismatch { kind: FeatureKind, what: &'static str },
    #[error("malformed table at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    MimePair,
    LanguageFirst,
    LengthPercentile,
    LmhYear,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [Self::MimePair, Self::LanguageFirst, Self::LengthPercentile, Self::LmhYear];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MimePair => "mime_pair",
            Self::LanguageFirst => "language_first",
            Self::LengthPercentile => "length_percentile",
            Self::LmhYear => "lmh_year",
        }
    }

    /// Short name used in file names and heatmap labels.
    pub fn short_name(self) -> &'static str {
        match self {
            Self::MimePair => "mime",
            Self::LanguageFirst => "nl1",
            Self::LengthPercentile => "len",
            Self::LmhYear => "lmh",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s || k.short_name() == s)
            .ok_or_else(|| FeatureError::UnknownKind(s.to_string()))
    }
}

pub const DEFAULT_TOP_K: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    pub top_k: usize,
}

impl FeatureSpec {
    pub fn new(kind: FeatureKind, top_k: usize) -> Result<Self, FeatureError> {
        if top_k == 0 {
            return Err(FeatureError::ZeroTopK);
        }
        Ok(Self { kind, top_k })
    }

    pub fn with_default_k(kind: FeatureKind) -> Self {
        Self { kind, top_k: DEFAULT_TOP_K }
    }
}

/// Second half of a mime pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Detected {
    /// Same as the declared mime.
    Ditto,
    Absent,
    Type(String),
}

/// Label text for [`Detected::Ditto`].
pub const DITTO: &str = "ditto";

impl fmt::Display for Detected {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Detected::Ditto => f.write_str(DITTO),
            Detected::Absent => f.write_str(UNKNOWN_MIME),
            // Keep a literal "ditto" or "unk" from reading as the markers.
            Detected::Type(t) if t == DITTO || t == UNKNOWN_MIME => write!(f, "'{t}'"),
            Detected::Type(t) => f.write_str(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureKey {
    MimePair { mime: String, detected: Detected },
    Language(String),
    Length(u64),
    Year(i64),
}

impl FeatureKey {
    pub fn mime_pair(entry: &IndexEntry) -> Self {
        let mime = entry.mime().to_string();
        let detected = match &entry.mime_detected {
            None => Detected::Absent,
            Some(d) if *d == mime => Detected::Ditto,
            Some(d) => Detected::Type(d.clone()),
        };
        FeatureKey::MimePair { mime, detected }
    }

    /// The row label: mime pairs are written `mime detected`.
    pub fn label(&self) -> String {
        match self {
            FeatureKey::MimePair { mime, detected } => format!("{} {detected}", tsv::clean_cell(mime)),
            FeatureKey::Language(l) => tsv::clean_cell(l),
            FeatureKey::Length(n) => n.to_string(),
            FeatureKey::Year(y) => y.to_string(),
        }
    }
}

pub type Counts = HashMap<FeatureKey, u64>;

/// Raw counts for one property, kept per segment. Merging two tallies is
/// associative and commutative, so shards can be tabulated independently.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tabulation {
    kind: Option<FeatureKind>,
    segments: BTreeMap<u8, Counts>,
    /// Entries that carried nothing to count (no languages, say).
    pub skipped: u64,
}

impl Tabulation {
    pub fn new(kind: FeatureKind) -> Self {
        Self { kind: Some(kind), ..Self::default() }
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind.unwrap_or(FeatureKind::MimePair)
    }

    /// Counts one index entry from the given segment.
    pub fn add(&mut self, entry: &IndexEntry, seg: SegmentRef) -> Result<(), FeatureError> {
        if seg.subset != Subset::Warc {
            return Err(FeatureError::WrongSubset(seg.subset));
        }
        let key = match self.kind() {
            FeatureKind::MimePair => FeatureKey::mime_pair(entry),
            FeatureKind::LanguageFirst => match entry.languages.as_ref().and_then(|l| l.first()) {
                Some(l) => FeatureKey::Language(l.clone()),
                None => {
                    self.skipped += 1;
                    return Ok(());
                }
            },
            FeatureKind::LengthPercentile => FeatureKey::Length(entry.length),
            kind @ FeatureKind::LmhYear => {
                return Err(FeatureError::KindMismatch { kind, what: "index entries" });
            }
        };
        self.bump(seg.segment_id, key, 1);
        Ok(())
    }

    /// Counts one credible Last-Modified year.
    pub fn add_year(&mut self, segment: u8, year: i64) -> Result<(), FeatureError> {
        match self.kind() {
            FeatureKind::LmhYear => {
                self.bump(segment, FeatureKey::Year(year), 1);
                Ok(())
            }
            kind => Err(FeatureError::KindMismatch { kind, what: "Last-Modified years" }),
        }
    }

    fn bump(&mut self, segment: u8, key: FeatureKey, by: u64) {
        *self.segments.entry(segment).or_default().entry(key).or_default() += by;
    }

    pub fn merge(mut self, other: Tabulation) -> Tabulation {
        if self.kind.is_none() {
            self.kind = other.kind;
        }
        self.skipped += other.skipped;
        for (seg, counts) in other.segments {
            for (key, n) in counts {
                self.bump(seg, key, n);
            }
        }
        self
    }

    pub fn segment_ids(&self) -> Vec<usize> {
        self.segments.keys().map(|&s| usize::from(s)).collect()
    }

    pub fn segment(&self, id: u8) -> Option<&Counts> {
        self.segments.get(&id)
    }

    /// Whole-archive counts: the union of all segments.
    pub fn whole(&self) -> Counts {
        let mut whole = Counts::new();
        for counts in self.segments.values() {
            for (k, &n) in counts {
                *whole.entry(k.clone()).or_default() += n;
            }
        }
        whole
    }

    pub fn total(&self) -> u64 {
        self.segments.values().flat_map(|c| c.values()).sum()
    }
}

/// Tabulates a stream of entries with their segments.
pub fn tabulate<'a, I>(entries: I, kind: FeatureKind) -> Result<Tabulation, FeatureError>
where
    I: IntoIterator<Item = (&'a IndexEntry, SegmentRef)>,
{
    let mut tab = Tabulation::new(kind);
    for (entry, seg) in entries {
        tab.add(entry, seg)?;
    }
    Ok(tab)
}

/// Nearest-rank percentiles 1..=100 of a multiset given as value counts:
/// entry `p - 1` is the `ceil(p * N / 100)`-th smallest value.
pub fn percentile_vector(histogram: &BTreeMap<u64, u64>) -> Result<Vec<u64>, FeatureError> {
    let total: u64 = histogram.values().sum();
    if total == 0 {
        return Err(FeatureError::EmptyInput);
    }
    let mut out = Vec::with_capacity(100);
    let mut iter = histogram.iter();
    let (mut value, mut seen) = match iter.next() {
        Some((&v, &n)) => (v, n),
        None => return Err(FeatureError::EmptyInput),
    };
    for p in 1..=100u64 {
        let rank = (p * total).div_ceil(100).max(1);
        while seen < rank {
            let (&v, &n) = iter.next().expect("rank never exceeds the total");
            value = v;
            seen += n;
        }
        out.push(value);
    }
    Ok(out)
}

/// [`percentile_vector`] over a plain list of values.
pub fn percentiles_of(values: &[u64]) -> Result<Vec<u64>, FeatureError> {
    let mut hist = BTreeMap::new();
    for &v in values {
        *hist.entry(v).or_insert(0) += 1;
    }
    percentile_vector(&hist)
}

fn length_histogram(counts: &Counts) -> BTreeMap<u64, u64> {
    counts
        .iter()
        .filter_map(|(k, &n)| match k {
            FeatureKey::Length(len) => Some((*len, n)),
            _ => None,
        })
        .collect()
}

/// Top-k labels by whole-archive count with each segment's count beside
/// them. A label that never occurs in a segment has a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergedFeatureTable {
    pub feature: String,
    pub labels: Vec<String>,
    pub whole: Vec<u64>,
    pub segment_ids: Vec<usize>,
    /// Row-major, `labels.len() * segment_ids.len()`.
    cells: Vec<Option<u64>>,
}

impl MergedFeatureTable {
    pub fn new(
        feature: impl Into<String>,
        labels: Vec<String>,
        whole: Vec<u64>,
        segment_ids: Vec<usize>,
        cells: Vec<Option<u64>>,
    ) -> Result<Self, FeatureError> {
        if whole.len() != labels.len() || cells.len() != labels.len() * segment_ids.len() {
            return Err(FeatureError::Parse { line: 0, reason: "table dimensions disagree".into() });
        }
        Ok(Self { feature: feature.into(), labels, whole, segment_ids, cells })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<u64> {
        self.cells[row * self.segment_ids.len() + col]
    }

    /// Column index of a segment id.
    pub fn column_of(&self, segment: usize) -> Option<usize> {
        self.segment_ids.iter().position(|&s| s == segment)
    }

    pub fn missing_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }

    /// The whole column then each segment column, as correlation input.
    pub fn columns(&self) -> Vec<Vec<Option<f64>>> {
        let mut cols = vec![self.whole.iter().map(|&n| Some(n as f64)).collect::<Vec<_>>()];
        for c in 0..self.segment_ids.len() {
            cols.push((0..self.rows()).map(|r| self.cell(r, c).map(|n| n as f64)).collect());
        }
        cols
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("label\twhole");
        for id in &self.segment_ids {
            out.push_str(&format!("\tseg{id:02}"));
        }
        out.push('\n');
        for r in 0..self.rows() {
            out.push_str(&self.labels[r]);
            out.push('\t');
            out.push_str(&self.whole[r].to_string());
            for c in 0..self.segment_ids.len() {
                out.push('\t');
                out.push_str(&tsv::fmt_opt_u64(self.cell(r, c)));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(feature: &str, text: &str) -> Result<Self, FeatureError> {
        let mut lines = tsv::data_lines(text);
        let (_, header) = lines.next().ok_or(FeatureError::Parse { line: 1, reason: "empty table".into() })?;
        let mut head = header.split('\t');
        if head.next() != Some("label") || head.next() != Some("whole") {
            return Err(FeatureError::Parse { line: 1, reason: "header must start with label, whole".into() });
        }
        let segment_ids = head
            .map(|h| {
                h.strip_prefix("seg")
                    .and_then(|n| n.parse().ok())
                    .ok_or_else(|| FeatureError::Parse { line: 1, reason: format!("bad column {h:?}") })
            })
            .collect::<Result<Vec<usize>, _>>()?;
        let (mut labels, mut whole, mut cells) = (vec![], vec![], vec![]);
        for (lineno, line) in lines {
            let bad = |reason: String| FeatureError::Parse { line: lineno, reason };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != segment_ids.len() + 2 {
                return Err(bad(format!("expected {} fields, found {}", segment_ids.len() + 2, fields.len())));
            }
            labels.push(fields[0].to_string());
            whole.push(fields[1].parse().map_err(|_| bad(format!("bad whole count {:?}", fields[1])))?);
            for f in &fields[2..] {
                cells.push(match *f {
                    tsv::MISSING => None,
                    f => Some(f.parse().map_err(|_| bad(format!("bad count {f:?}")))?),
                });
            }
        }
        Self::new(feature, labels, whole, segment_ids, cells)
    }
}

/// Builds the merged table. Categorical properties keep the `top_k`
/// labels by whole count (ties by label); the length property becomes one
/// row per percentile, whole and segments each holding their own
/// percentile values.
pub fn merge_top_k(tab: &Tabulation, top_k: usize) -> Result<MergedFeatureTable, FeatureError> {
    if top_k == 0 {
        return Err(FeatureError::ZeroTopK);
    }
    let kind = tab.kind();
    let segment_ids = tab.segment_ids();
    if kind == FeatureKind::LengthPercentile {
        return percentile_table(tab, segment_ids);
    }
    let mut rows: Vec<(String, FeatureKey, u64)> =
        tab.whole().into_iter().map(|(k, n)| (k.label(), k, n)).collect();
    rows.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(&b.0)).then_with(|| a.1.cmp(&b.1)));
    rows.truncate(top_k);
    let mut cells = Vec::with_capacity(rows.len() * segment_ids.len());
    for (_, key, _) in &rows {
        for &id in &segment_ids {
            let n = tab.segment(id as u8).and_then(|c| c.get(key)).copied();
            cells.push(n.filter(|&n| n > 0));
        }
    }
    let (labels, whole) = rows.into_iter().map(|(l, _, n)| (l, n)).unzip();
    MergedFeatureTable::new(kind.short_name(), labels, whole, segment_ids, cells)
}

fn percentile_table(tab: &Tabulation, segment_ids: Vec<usize>) -> Result<MergedFeatureTable, FeatureError> {
    let whole = percentile_vector(&length_histogram(&tab.whole()))?;
    let per_segment: Vec<Option<Vec<u64>>> = segment_ids
        .iter()
        .map(|&id| tab.segment(id as u8).and_then(|c| percentile_vector(&length_histogram(c)).ok()))
        .collect();
    let mut cells = Vec::with_capacity(100 * segment_ids.len());
    for p in 0..100 {
        for v in &per_segment {
            cells.push(v.as_ref().map(|v| v[p]));
        }
    }
    let labels = (1..=100).map(|p| format!("p{p:03}")).collect();
    MergedFeatureTable::new(FeatureKind::LengthPercentile.short_name(), labels, whole, segment_ids, cells)
}
