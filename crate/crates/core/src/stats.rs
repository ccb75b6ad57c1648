//! Rank correlation and the statistics built on it.
//!
//! Missing cells are omitted pair by pair: a correlation between two columns
//! uses every row where both columns have a value. Tied values get the mean
//! of the ranks they span.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::features::MergedFeatureTable;
use crate::tsv;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("columns differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("only {0} complete pairs; at least {1} are needed")]
    TooFewPairs(usize, usize),
    #[error("a column is constant over the retained pairs; rank correlation is undefined")]
    ConstantInput,
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("correlation {0} is outside [-1, 1]")]
    InvalidRho(f64),
    #[error("alpha {0} is outside (0, 1)")]
    InvalidAlpha(f64),
    #[error("matrices are labelled differently")]
    LabelMismatch,
    #[error("population is empty")]
    EmptyPopulation,
    #[error("malformed matrix text at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Average (1-based) ranks; ties share the mean of the ranks they occupy.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // Positions i..j hold one tie group; their ranks are i+1 ..= j.
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// A correlation together with the number of pairs it was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub rho: f64,
    pub n_used: usize,
}

/// Smallest number of complete pairs [`spearman_omit`] accepts.
pub const MIN_PAIRS: usize = 3;

/// Spearman's rho over the rows where both `x` and `y` are present.
pub fn spearman_omit(x: &[Option<f64>], y: &[Option<f64>]) -> Result<Correlation, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter_map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) if !a.is_nan() && !b.is_nan() => Some((*a, *b)),
            _ => None,
        })
        .unzip();
    if xs.len() < MIN_PAIRS {
        return Err(StatsError::TooFewPairs(xs.len(), MIN_PAIRS));
    }
    let rho = pearson(&average_ranks(&xs), &average_ranks(&ys)).ok_or(StatsError::ConstantInput)?;
    Ok(Correlation { rho, n_used: xs.len() })
}

/// Symmetric matrix of pairwise rank correlations. Row and column 0 are the
/// whole archive; the rest are segments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    /// Name of the property the matrix was computed from.
    pub property: String,
    pub labels: Vec<String>,
    rho: Vec<f64>,
    n_used: Vec<usize>,
}

/// Label of the whole-archive row and column.
pub const WHOLE_LABEL: &str = "whole";

pub fn segment_label(id: usize) -> String {
    format!("seg{id:02}")
}

/// Inverse of [`segment_label`].
pub fn parse_segment_label(label: &str) -> Option<usize> {
    label.strip_prefix("seg").and_then(|n| n.parse().ok())
}

impl CorrelationMatrix {
    /// Builds a matrix from its cells; the diagonal is forced to exactly 1.
    pub fn from_cells(
        property: impl Into<String>,
        labels: Vec<String>,
        mut rho: Vec<f64>,
        n_used: Vec<usize>,
    ) -> Result<Self, StatsError> {
        let n = labels.len();
        if rho.len() != n * n || n_used.len() != n * n {
            return Err(StatsError::LengthMismatch(rho.len(), n * n));
        }
        for i in 0..n {
            rho[i * n + i] = 1.0;
            for j in 0..i {
                let v = rho[i * n + j];
                if !v.is_nan() && !(-1.0..=1.0).contains(&v) {
                    return Err(StatsError::InvalidRho(v));
                }
                if v.total_cmp(&rho[j * n + i]).is_ne() || n_used[i * n + j] != n_used[j * n + i] {
                    return Err(StatsError::Parse { line: i + 2, reason: "matrix is not symmetric".into() });
                }
            }
        }
        Ok(Self { property: property.into(), labels, rho, n_used })
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn rho(&self, i: usize, j: usize) -> f64 {
        self.rho[i * self.size() + j]
    }

    pub fn n_used(&self, i: usize, j: usize) -> usize {
        self.n_used[i * self.size() + j]
    }

    /// Segment ids of rows 1.., read from their labels.
    pub fn segment_ids(&self) -> Vec<usize> {
        self.labels[1..]
            .iter()
            .enumerate()
            .map(|(i, l)| parse_segment_label(l).unwrap_or(i))
            .collect()
    }

    /// Each segment's correlation with the whole, in row order.
    pub fn segment_vs_whole(&self) -> Vec<f64> {
        (1..self.size()).map(|i| self.rho(i, 0)).collect()
    }

    /// Tab-separated rho matrix with the label row and column first.
    pub fn to_tsv(&self) -> String {
        self.render(|i, j| tsv::fmt_f64(self.rho(i, j)))
    }

    /// Same layout as [`Self::to_tsv`], holding pair counts.
    pub fn n_used_tsv(&self) -> String {
        self.render(|i, j| self.n_used(i, j).to_string())
    }

    fn render(&self, cell: impl Fn(usize, usize) -> String) -> String {
        let mut out = String::new();
        for l in &self.labels {
            out.push('\t');
            out.push_str(l);
        }
        out.push('\n');
        for i in 0..self.size() {
            out.push_str(&self.labels[i]);
            for j in 0..self.size() {
                out.push('\t');
                out.push_str(&cell(i, j));
            }
            out.push('\n');
        }
        out
    }

    /// Reads back the output of [`Self::to_tsv`] and [`Self::n_used_tsv`].
    pub fn from_tsv(property: &str, rho_text: &str, n_used_text: &str) -> Result<Self, StatsError> {
        let (labels, rho) = parse_square(rho_text, |s| match s {
            tsv::MISSING => Some(f64::NAN),
            s => s.parse::<f64>().ok(),
        })?;
        let (labels2, n_used) = parse_square(n_used_text, |s| s.parse::<usize>().ok())?;
        if labels != labels2 {
            return Err(StatsError::LabelMismatch);
        }
        Self::from_cells(property, labels, rho, n_used)
    }
}

fn parse_square<T>(text: &str, parse: impl Fn(&str) -> Option<T>) -> Result<(Vec<String>, Vec<T>), StatsError> {
    let mut lines = tsv::data_lines(text);
    let (_, header) = lines.next().ok_or(StatsError::Parse { line: 1, reason: "empty".into() })?;
    let labels: Vec<String> = header.split('\t').skip(1).map(str::to_string).collect();
    let mut cells = Vec::with_capacity(labels.len() * labels.len());
    let mut rows = 0;
    for (lineno, line) in lines {
        let mut fields = line.split('\t');
        let label = fields.next().unwrap_or_default();
        if labels.get(rows).map(String::as_str) != Some(label) {
            return Err(StatsError::Parse { line: lineno, reason: format!("unexpected row label {label:?}") });
        }
        let before = cells.len();
        for f in fields {
            cells.push(parse(f).ok_or_else(|| StatsError::Parse { line: lineno, reason: format!("bad cell {f:?}") })?);
        }
        if cells.len() - before != labels.len() {
            return Err(StatsError::Parse { line: lineno, reason: "wrong number of cells".into() });
        }
        rows += 1;
    }
    if rows != labels.len() {
        return Err(StatsError::Parse { line: rows + 1, reason: "matrix is not square".into() });
    }
    Ok((labels, cells))
}

/// Correlates every pair of columns of a merged table (whole first).
pub fn correlation_matrix(table: &MergedFeatureTable) -> Result<CorrelationMatrix, StatsError> {
    if table.labels.len() < MIN_PAIRS {
        return Err(StatsError::TooFew { needed: MIN_PAIRS, got: table.labels.len() });
    }
    let mut labels = vec![WHOLE_LABEL.to_string()];
    labels.extend(table.segment_ids.iter().map(|&id| segment_label(id)));
    correlate_columns(&table.feature, labels, &table.columns())
}

/// Pairwise [`spearman_omit`] over arbitrary columns. A pair with too few
/// complete rows or a constant column gets a `nan` cell rather than failing
/// the whole matrix.
pub fn correlate_columns(
    property: &str,
    labels: Vec<String>,
    columns: &[Vec<Option<f64>>],
) -> Result<CorrelationMatrix, StatsError> {
    let n = columns.len();
    if labels.len() != n {
        return Err(StatsError::LengthMismatch(labels.len(), n));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let cells: Vec<Correlation> = pairs
        .par_iter()
        .map(|&(i, j)| match spearman_omit(&columns[i], &columns[j]) {
            Err(StatsError::TooFewPairs(..) | StatsError::ConstantInput) => {
                let n_used = columns[i].iter().zip(&columns[j]).filter(|(a, b)| present(a) && present(b)).count();
                log::warn!("no correlation between columns {i} and {j} ({n_used} pairs)");
                Ok(Correlation { rho: f64::NAN, n_used })
            }
            other => other,
        })
        .collect::<Result<_, _>>()?;
    let mut rho = vec![1.0; n * n];
    let mut n_used = vec![0; n * n];
    for i in 0..n {
        n_used[i * n + i] = columns[i].iter().filter(|c| present(c)).count();
    }
    for (&(i, j), c) in pairs.iter().zip(&cells) {
        rho[i * n + j] = c.rho;
        rho[j * n + i] = c.rho;
        n_used[i * n + j] = c.n_used;
        n_used[j * n + i] = c.n_used;
    }
    CorrelationMatrix::from_cells(property, labels, rho, n_used)
}

fn present(v: &Option<f64>) -> bool {
    v.is_some_and(|v| !v.is_nan())
}

/// Summary statistics with the unbiased (n - 1) variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Description {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub variance: f64,
}

pub fn describe(values: &[f64]) -> Result<Description, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooFew { needed: 2, got: values.len() });
    }
    // Welford's update.
    let (mut mean, mut m2) = (0.0, 0.0);
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (k, &v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (v - mean);
        min = min.min(v);
        max = max.max(v);
    }
    Ok(Description { n: values.len(), min, max, mean, variance: m2 / (values.len() - 1) as f64 })
}

impl Description {
    pub const TSV_HEADER: &'static str = "archive\tN\tmin\tmax\tmean\tvariance";

    /// One row in the rounded layout used for reporting
    /// (three decimals, four for the variance).
    pub fn tsv_row(&self, label: &str) -> String {
        format!(
            "{label}\t{}\t{:.3}\t{:.3}\t{:.3}\t{:.4}",
            self.n, self.min, self.max, self.mean, self.variance
        )
    }
}

/// Standard normal quantile by Wichura's AS 241 (PPND16), good to about
/// 1e-16 relative error.
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608_0,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083_0e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061_0e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561_0e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_90,
        5.769_497_221_460_691_405_50,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        2.417_807_251_774_506_117_70e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_40e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_40,
        6.897_673_349_851_000_045_50e-1,
        1.481_039_764_274_800_745_90e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946_00e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_20,
        5.463_784_911_164_114_369_90,
        1.784_826_539_917_291_335_80,
        2.965_605_718_285_048_912_30e-1,
        2.653_218_952_657_612_309_30e-2,
        1.242_660_947_388_078_438_60e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_90e-1,
        1.369_298_809_227_358_053_10e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591_00e-4,
        1.846_318_317_510_054_681_80e-5,
        1.421_511_758_316_445_888_70e-7,
        2.044_263_103_389_939_785_64e-15,
    ];
    fn poly(c: &[f64; 8], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    /// Set when |rho| = 1 and the interval collapses to the point.
    pub degenerate: bool,
}

/// Confidence interval for a correlation through the atanh transform,
/// with standard error `1 / sqrt(n - 3)`.
pub fn fisher_ci(rho: f64, n_used: usize, alpha: f64) -> Result<ConfidenceInterval, StatsError> {
    if n_used < 4 {
        return Err(StatsError::TooFewPairs(n_used, 4));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidAlpha(alpha));
    }
    if rho.is_nan() || rho.abs() > 1.0 {
        return Err(StatsError::InvalidRho(rho));
    }
    if rho.abs() == 1.0 {
        log::debug!("correlation {rho} has no atanh interval; returning the point");
        return Ok(ConfidenceInterval { lo: rho, hi: rho, degenerate: true });
    }
    let z = normal_quantile(1.0 - alpha / 2.0);
    let se = 1.0 / ((n_used - 3) as f64).sqrt();
    let centre = rho.atanh();
    Ok(ConfidenceInterval { lo: (centre - z * se).tanh(), hi: (centre + z * se).tanh(), degenerate: false })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedSegment {
    pub segment: usize,
    pub rho: f64,
    pub n_used: usize,
    pub ci: Option<ConfidenceInterval>,
}

/// Segments ordered best to worst by correlation with the whole.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentRanking {
    pub property: String,
    pub entries: Vec<RankedSegment>,
}

/// Orders segments by descending correlation with the whole archive,
/// lower segment id first on ties, each with a 95% interval.
pub fn rank_segments(matrix: &CorrelationMatrix) -> SegmentRanking {
    let mut entries: Vec<RankedSegment> = matrix
        .segment_ids()
        .into_iter()
        .enumerate()
        .map(|(row, segment)| {
            let (rho, n_used) = (matrix.rho(row + 1, 0), matrix.n_used(row + 1, 0));
            RankedSegment { segment, rho, n_used, ci: fisher_ci(rho, n_used, 0.05).ok() }
        })
        .collect();
    // Undefined correlations sort last.
    let key = |r: f64| if r.is_nan() { f64::NEG_INFINITY } else { r };
    entries.sort_by(|a, b| key(b.rho).total_cmp(&key(a.rho)).then(a.segment.cmp(&b.segment)));
    SegmentRanking { property: matrix.property.clone(), entries }
}

impl SegmentRanking {
    pub fn segments(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.segment).collect()
    }

    pub fn top(&self, n: usize) -> Vec<usize> {
        self.entries.iter().take(n).map(|e| e.segment).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("rank\tsegment\trho\tci_lo\tci_hi\tn_used\n");
        for (i, e) in self.entries.iter().enumerate() {
            let (lo, hi) = e.ci.map_or((None, None), |c| (Some(c.lo), Some(c.hi)));
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                i + 1,
                e.segment,
                tsv::fmt_f64(e.rho),
                tsv::fmt_opt_f64(lo),
                tsv::fmt_opt_f64(hi),
                e.n_used
            );
        }
        out
    }
}

/// Side-by-side rank tables: one column of segment ids per ranking.
pub fn ranking_table(columns: &[(&str, &SegmentRanking)], rows: usize) -> String {
    let mut out = String::from("rank");
    for (name, _) in columns {
        out.push('\t');
        out.push_str(name);
    }
    out.push('\n');
    for r in 0..rows {
        let _ = write!(out, "{}", r + 1);
        for (_, ranking) in columns {
            out.push('\t');
            match ranking.entries.get(r) {
                Some(e) => out.push_str(&e.segment.to_string()),
                None => out.push_str(tsv::MISSING),
            }
        }
        out.push('\n');
    }
    out
}

/// Midrank percentile of `x` within `population`:
/// `100 * (below + 0.5 * equal) / len`.
pub fn percentile_score(x: f64, population: &[f64]) -> Result<f64, StatsError> {
    if population.is_empty() {
        return Err(StatsError::EmptyPopulation);
    }
    let (mut below, mut equal) = (0usize, 0usize);
    for &v in population {
        match v.partial_cmp(&x) {
            Some(Ordering::Less) => below += 1,
            Some(Ordering::Equal) => equal += 1,
            _ => {}
        }
    }
    Ok(100.0 * (below as f64 + 0.5 * equal as f64) / population.len() as f64)
}

/// How well the top segments of one property stand in for the whole
/// archive on another.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProxyHeatmap {
    pub basis: String,
    pub target: String,
    /// Entry `k` scores the best `k + 1` basis segments.
    pub scores: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
}

/// For each N in 1..=max_n: average the target segment-vs-whole correlation
/// over the N best basis segments and score it against all target segments.
pub fn proxy_eval(basis: &CorrelationMatrix, target: &CorrelationMatrix, max_n: usize) -> Result<ProxyHeatmap, StatsError> {
    if basis.labels != target.labels {
        return Err(StatsError::LabelMismatch);
    }
    let population = target.segment_vs_whole();
    if max_n == 0 || max_n > population.len() {
        return Err(StatsError::TooFew { needed: max_n.max(1), got: population.len() });
    }
    let order = rank_segments(basis).segments();
    let row_of: std::collections::HashMap<usize, usize> =
        target.segment_ids().into_iter().enumerate().map(|(row, id)| (id, row)).collect();
    let mut scores = Vec::with_capacity(max_n);
    let mut sum = 0.0;
    for (k, seg) in order.iter().take(max_n).enumerate() {
        sum += population[row_of[seg]];
        scores.push(percentile_score(sum / (k + 1) as f64, &population)?);
    }
    let (mean, std_dev) = mean_sd(&scores);
    Ok(ProxyHeatmap { basis: basis.property.clone(), target: target.property.clone(), scores, mean, std_dev })
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Tab-separated heatmap rows, plus per-basis mean and deviation over all
/// of that basis' cells.
pub fn heatmap_tsv(rows: &[ProxyHeatmap]) -> String {
    let width = rows.iter().map(|r| r.scores.len()).max().unwrap_or(0);
    let mut out = String::from("target\tbasis");
    for n in 1..=width {
        let _ = write!(out, "\tN{n}");
    }
    out.push_str("\tmean\tsd\tbasis_mean\tbasis_sd\n");
    for row in rows {
        let basis_cells: Vec<f64> =
            rows.iter().filter(|r| r.basis == row.basis).flat_map(|r| r.scores.iter().copied()).collect();
        let (bm, bsd) = mean_sd(&basis_cells);
        let _ = write!(out, "{}\t{}", row.target, row.basis);
        for n in 0..width {
            out.push('\t');
            out.push_str(&tsv::fmt_opt_f64(row.scores.get(n).copied()));
        }
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}",
            tsv::fmt_f64(row.mean),
            tsv::fmt_f64(row.std_dev),
            tsv::fmt_f64(bm),
            tsv::fmt_f64(bsd)
        );
    }
    out
}
