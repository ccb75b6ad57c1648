//! Small helpers shared by the tab-separated artifact formats.

/// Spelling of a missing cell.
pub const MISSING: &str = "nan";

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        MISSING.to_string()
    } else {
        format!("{v}")
    }
}

pub fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), fmt_f64)
}

pub fn fmt_opt_u64(v: Option<u64>) -> String {
    v.map_or_else(|| MISSING.to_string(), |n| n.to_string())
}

/// Lines that carry data: blank lines and `#` comments are skipped.
pub fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

/// Replaces characters that would break the column structure.
pub fn clean_cell(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}
