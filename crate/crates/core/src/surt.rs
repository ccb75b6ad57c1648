//! Sort-friendly URI reordering.
//!
//! Turns an absolute `http(s)` URI into the `urlkey` used as the sort key of
//! every line in the primary and master indexes:
//!
//! 1. drop the `http://` / `https://` prefix,
//! 2. lowercase `A-Z` everywhere (query included),
//! 3. drop a leading `www.` label,
//! 4. reverse the dot-separated host labels, join them with `,` and close the
//!    authority with `)`,
//! 5. drop trailing slashes from the path.
//!
//! Userinfo and fragments are discarded; an explicit port stays attached to
//! the host, before the `)`. Non-ASCII hosts pass through untouched.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SurtError {
    #[error("URI has no http:// or https:// scheme: {0:?}")]
    MissingScheme(String),
    #[error("URI has an empty authority: {0:?}")]
    EmptyAuthority(String),
}

/// A canonicalized URI, ordered by raw byte value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UrlKey(String);

impl UrlKey {
    /// Wraps text already in urlkey form (e.g. read back from an index file).
    /// No canonicalization is applied.
    pub fn from_raw(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }

    /// The reversed-host part, up to and including `)`.
    pub fn authority(&self) -> &str {
        match self.0.find(')') {
            Some(i) => &self.0[..=i],
            None => &self.0,
        }
    }
}

impl fmt::Display for UrlKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for UrlKey {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl FromStr for UrlKey {
    type Err = SurtError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        canonicalize(s)
    }
}

fn strip_scheme(uri: &str) -> Option<&str> {
    ["https://", "http://"].iter().find_map(|scheme| {
        uri.get(..scheme.len())
            .filter(|head| head.eq_ignore_ascii_case(scheme))
            .map(|_| &uri[scheme.len()..])
    })
}

pub fn canonicalize(uri: &str) -> Result<UrlKey, SurtError> {
    let trimmed = uri.trim();
    let rest = strip_scheme(trimmed).ok_or_else(|| SurtError::MissingScheme(uri.to_string()))?;
    let rest = rest.to_ascii_lowercase();
    let rest = match rest.find('#') {
        Some(i) => &rest[..i],
        None => &rest[..],
    };

    let auth_end = rest.find(['/', '?']).unwrap_or(rest.len());
    let (authority, tail) = rest.split_at(auth_end);
    let hostport = match authority.rfind('@') {
        Some(i) => &authority[i + 1..],
        None => authority,
    };
    let (host, port) = split_port(hostport);
    let host = host.strip_suffix('.').unwrap_or(host);
    let host = match host.strip_prefix("www.") {
        Some(h) if !h.is_empty() => h,
        _ => host,
    };
    if host.is_empty() {
        return Err(SurtError::EmptyAuthority(uri.to_string()));
    }

    let (path, query) = match tail.find('?') {
        Some(i) => tail.split_at(i),
        None => (tail, ""),
    };
    let path = path.trim_end_matches('/');

    let mut key = String::with_capacity(rest.len() + 1);
    if host.starts_with('[') {
        key.push_str(host);
    } else {
        for (i, label) in host.rsplit('.').enumerate() {
            if i > 0 {
                key.push(',');
            }
            key.push_str(label);
        }
    }
    if let Some(port) = port {
        key.push(':');
        key.push_str(port);
    }
    key.push(')');
    key.push_str(path);
    key.push_str(query);
    Ok(UrlKey(key))
}

fn split_port(hostport: &str) -> (&str, Option<&str>) {
    // Bracketed IPv6 literals carry their own colons.
    let search_from = hostport.rfind(']').unwrap_or(0);
    match hostport[search_from..].rfind(':') {
        Some(i) => {
            let i = search_from + i;
            let port = &hostport[i + 1..];
            (&hostport[..i], (!port.is_empty()).then_some(port))
        }
        None => (hostport, None),
    }
}
