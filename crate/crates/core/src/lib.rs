//! Index-only analytics for Common Crawl archives.
//!
//! The crate covers the whole path from a URI to archive-level statistics:
//!
//! - [`surt`] turns URIs into the urlkeys the index is sorted on,
//! - [`cdx`] parses primary- and master-index lines,
//! - [`zipnum`] performs the two-level block lookup,
//! - [`fetch`] retrieves index bytes over HTTP with caching and retries,
//! - [`features`] tabulates per-segment feature counts,
//! - [`stats`] ranks segments by rank correlation with the whole archive and
//!   evaluates one property as a proxy for another,
//! - [`lastmod`] parses and analyses Last-Modified values,
//! - [`urimetrics`] measures URI component lengths,
//! - [`synth`] generates synthetic archives with known ground truth.

pub mod calendar;
pub mod cdx;
pub mod features;
pub mod fetch;
pub mod lastmod;
pub mod stats;
pub mod surt;
pub mod synth;
pub mod tsv;
pub mod urimetrics;
pub mod zipnum;

pub use calendar::Timestamp14;
pub use cdx::{IndexEntry, MasterIndexLine, SegmentRef, Subset};
pub use surt::{canonicalize, UrlKey};
