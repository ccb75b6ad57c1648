//! Component lengths and encoding measures of URIs, and their per-year means.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::tsv;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UriError {
    #[error("not an absolute URI: {0:?}")]
    NotAbsolute(String),
}

/// Lengths are in characters and exclude delimiters: the scheme has no
/// `:` or `//`, the query no `?`. `total_len` is the whole string once any
/// fragment is removed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UriMetrics {
    pub total_len: usize,
    pub scheme_len: usize,
    pub netloc_len: usize,
    pub path_len: usize,
    pub query_len: usize,
    /// Some host label is punycode (`xn--`).
    pub idna: bool,
    /// Valid `%HH` triplets in the path; `None` for an empty path.
    pub path_pct: Option<usize>,
    /// Same for the query; `None` for an empty query.
    pub query_pct: Option<usize>,
    /// `%` signs in path or query not followed by two hex digits.
    pub stray_pct: usize,
    /// Lowercased host without userinfo or port, for grouping.
    pub domain: String,
}

struct Parts<'a> {
    scheme: &'a str,
    netloc: &'a str,
    path: &'a str,
    query: &'a str,
}

fn split(uri: &str) -> Option<Parts<'_>> {
    let colon = uri.find(':')?;
    let scheme = &uri[..colon];
    let mut chars = scheme.chars();
    if !chars.next().is_some_and(|c| c.is_ascii_alphabetic())
        || !chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'))
    {
        return None;
    }
    let rest = &uri[colon + 1..];
    let (netloc, rest) = match rest.strip_prefix("//") {
        Some(r) => {
            let end = r.find(['/', '?']).unwrap_or(r.len());
            (&r[..end], &r[end..])
        }
        None => ("", rest),
    };
    let (path, query) = match rest.split_once('?') {
        Some((p, q)) => (p, q),
        None => (rest, ""),
    };
    Some(Parts { scheme, netloc, path, query })
}

fn pct_counts(s: &str) -> (usize, usize) {
    let b = s.as_bytes();
    let (mut valid, mut stray) = (0, 0);
    let mut i = 0;
    while i < b.len() {
        if b[i] == b'%' {
            if i + 2 < b.len() && b[i + 1].is_ascii_hexdigit() && b[i + 2].is_ascii_hexdigit() {
                valid += 1;
                i += 3;
                continue;
            }
            stray += 1;
        }
        i += 1;
    }
    (valid, stray)
}

fn host_of(netloc: &str) -> &str {
    let host = netloc.rsplit_once('@').map_or(netloc, |(_, h)| h);
    if host.starts_with('[') {
        return host.find(']').map_or(host, |i| &host[..=i]);
    }
    host.split_once(':').map_or(host, |(h, _)| h)
}

pub fn measure(uri: &str) -> Result<UriMetrics, UriError> {
    let uri = uri.split_once('#').map_or(uri, |(u, _)| u);
    let parts = split(uri).ok_or_else(|| UriError::NotAbsolute(uri.to_string()))?;
    let host = host_of(parts.netloc);
    let idna = host.split('.').any(|l| l.get(..4).is_some_and(|p| p.eq_ignore_ascii_case("xn--")));
    let (path_valid, path_stray) = pct_counts(parts.path);
    let (query_valid, query_stray) = pct_counts(parts.query);
    Ok(UriMetrics {
        total_len: uri.chars().count(),
        scheme_len: parts.scheme.chars().count(),
        netloc_len: parts.netloc.chars().count(),
        path_len: parts.path.chars().count(),
        query_len: parts.query.chars().count(),
        idna,
        path_pct: (!parts.path.is_empty()).then_some(path_valid),
        query_pct: (!parts.query.is_empty()).then_some(query_valid),
        stray_pct: path_stray + query_stray,
        domain: host.to_lowercase(),
    })
}

/// Years before this are too thin to report.
pub const FIRST_YEAR: i64 = 2000;

/// Means of each measure over one year's URIs. The percent-encoding means
/// are over the URIs that have a path (query) at all.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YearMeans {
    pub year: i64,
    pub n: u64,
    pub total: f64,
    pub scheme: f64,
    pub netloc: f64,
    pub path: f64,
    pub query: f64,
    pub idna: f64,
    pub path_pct: Option<f64>,
    pub query_pct: Option<f64>,
    pub stray_pct: u64,
}

#[derive(Default)]
struct Sums {
    n: u64,
    total: u64,
    scheme: u64,
    netloc: u64,
    path: u64,
    query: u64,
    idna: u64,
    path_pct: (u64, u64),
    query_pct: (u64, u64),
    stray: u64,
}

/// Per-year means of URI measures, skipping years before [`FIRST_YEAR`].
pub fn aggregate_by_year<'a>(rows: impl IntoIterator<Item = (i64, &'a UriMetrics)>) -> Vec<YearMeans> {
    let mut years: BTreeMap<i64, Sums> = BTreeMap::new();
    for (year, m) in rows {
        if year < FIRST_YEAR {
            continue;
        }
        let s = years.entry(year).or_default();
        s.n += 1;
        s.total += m.total_len as u64;
        s.scheme += m.scheme_len as u64;
        s.netloc += m.netloc_len as u64;
        s.path += m.path_len as u64;
        s.query += m.query_len as u64;
        s.idna += u64::from(m.idna);
        if let Some(p) = m.path_pct {
            s.path_pct.0 += p as u64;
            s.path_pct.1 += 1;
        }
        if let Some(q) = m.query_pct {
            s.query_pct.0 += q as u64;
            s.query_pct.1 += 1;
        }
        s.stray += m.stray_pct as u64;
    }
    years
        .into_iter()
        .map(|(year, s)| {
            let n = s.n as f64;
            let ratio = |(sum, count): (u64, u64)| (count > 0).then(|| sum as f64 / count as f64);
            YearMeans {
                year,
                n: s.n,
                total: s.total as f64 / n,
                scheme: s.scheme as f64 / n,
                netloc: s.netloc as f64 / n,
                path: s.path as f64 / n,
                query: s.query as f64 / n,
                idna: s.idna as f64 / n,
                path_pct: ratio(s.path_pct),
                query_pct: ratio(s.query_pct),
                stray_pct: s.stray,
            }
        })
        .collect()
}

pub fn year_means_tsv(rows: &[YearMeans]) -> String {
    let mut out = String::from("year\tn\ttotal\tscheme\tnetloc\tpath\tquery\tidna\tpath_pct\tquery_pct\tstray_pct\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.year,
            r.n,
            tsv::fmt_f64(r.total),
            tsv::fmt_f64(r.scheme),
            tsv::fmt_f64(r.netloc),
            tsv::fmt_f64(r.path),
            tsv::fmt_f64(r.query),
            tsv::fmt_f64(r.idna),
            tsv::fmt_opt_f64(r.path_pct),
            tsv::fmt_opt_f64(r.query_pct),
            r.stray_pct
        );
    }
    out
}

/// Thresholds for dropping domains whose long queries swamp a year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutlierFilter {
    /// More than this many URIs with a query...
    pub min_samples: usize,
    /// ...whose mean query length is above this.
    pub min_mean_query: f64,
}

impl Default for OutlierFilter {
    fn default() -> Self {
        Self { min_samples: 100, min_mean_query: 100.0 }
    }
}

impl OutlierFilter {
    /// Domains to drop: those with more than `min_samples` query-bearing
    /// URIs whose mean query length exceeds `min_mean_query`. Sorted.
    pub fn outlier_domains<'a>(&self, metrics: impl IntoIterator<Item = &'a UriMetrics>) -> Vec<String> {
        let mut groups: HashMap<&str, (usize, usize)> = HashMap::new();
        for m in metrics {
            if m.query_len > 0 {
                let g = groups.entry(m.domain.as_str()).or_default();
                g.0 += 1;
                g.1 += m.query_len;
            }
        }
        let mut out: Vec<String> = groups
            .into_iter()
            .filter(|&(_, (n, sum))| n > self.min_samples && sum as f64 / n as f64 > self.min_mean_query)
            .map(|(d, _)| d.to_string())
            .collect();
        out.sort();
        out
    }
}
