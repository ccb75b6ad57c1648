//! Run configuration: flags, environment, and an optional TOML file.

use std::fs;
use std::path::{Path, PathBuf};

use ccseg_core::features::{FeatureKind, DEFAULT_TOP_K};
use ccseg_core::fetch::{is_archive_id, DEFAULT_BASE_URL};
use ccseg_core::lastmod::{AnomalyThresholds, CredibilityWindow};
use ccseg_core::urimetrics::OutlierFilter;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const ENV_BASE_URL: &str = "CCSEG_BASE_URL";
pub const ENV_CACHE_DIR: &str = "CCSEG_CACHE_DIR";

/// Keys accepted in a `--config` TOML file. Flags and environment win.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub archive: Option<String>,
    pub base_url: Option<String>,
    pub index_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub features: Option<Vec<String>>,
    pub top_k: Option<usize>,
    pub top_n: Option<usize>,
    pub max_n: Option<usize>,
    pub anomaly_ratio: Option<f64>,
    pub anomaly_share: Option<f64>,
    pub credible_floor: Option<i64>,
    pub future_slack: Option<i64>,
    pub outlier_min_samples: Option<usize>,
    pub outlier_min_mean_query: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IndexSource {
    Remote { base_url: String },
    /// Directory holding `cluster.idx` and the shards.
    Local { dir: PathBuf },
}

/// Where the index lives, after flags, environment and file are combined.
#[derive(Debug, Clone, Default)]
pub struct SourceArgs {
    pub config: Option<PathBuf>,
    pub archive: Option<String>,
    /// From `--base-url` or the environment.
    pub base_url: Option<String>,
    pub index_dir: Option<PathBuf>,
    /// From `--cache-dir` or the environment.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ResolvedSource {
    pub archive_id: String,
    pub source: IndexSource,
    pub cache_dir: PathBuf,
}

pub fn default_cache_dir() -> PathBuf {
    if let Some(x) = std::env::var_os("XDG_CACHE_HOME").filter(|v| !v.is_empty()) {
        return PathBuf::from(x).join("ccseg");
    }
    match std::env::var_os("HOME").filter(|v| !v.is_empty()) {
        Some(h) => PathBuf::from(h).join(".cache").join("ccseg"),
        None => PathBuf::from(".ccseg-cache"),
    }
}

/// Accepts the directory with `cluster.idx` itself, or an output root of
/// `synth` holding `cc-index/collections/<archive>/indexes`. Returns the
/// index directory and the archive id when the path names it.
pub fn locate_index_dir(dir: &Path) -> CliResult<(PathBuf, Option<String>)> {
    let id_of = |p: &Path| {
        p.parent()
            .and_then(|c| c.file_name())
            .and_then(|n| n.to_str())
            .filter(|n| is_archive_id(n))
            .map(str::to_string)
    };
    if dir.join("cluster.idx").is_file() {
        return Ok((dir.to_path_buf(), id_of(dir)));
    }
    let collections = dir.join("cc-index").join("collections");
    if let Ok(rd) = fs::read_dir(&collections) {
        let mut ids: Vec<String> = rd
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| is_archive_id(n))
            .collect();
        ids.sort();
        if ids.len() == 1 {
            let d = collections.join(&ids[0]).join("indexes");
            if d.join("cluster.idx").is_file() {
                return Ok((d, Some(ids.remove(0))));
            }
        }
    }
    Err(CliError::usage(format!("{}: no cluster.idx found", dir.display())))
}

impl SourceArgs {
    pub fn file(&self) -> CliResult<FileConfig> {
        match &self.config {
            Some(p) => FileConfig::load(p),
            None => Ok(FileConfig::default()),
        }
    }

    pub fn resolve(&self, file: &FileConfig) -> CliResult<ResolvedSource> {
        let source = match (&self.base_url, &self.index_dir) {
            (Some(_), Some(_)) => return Err(CliError::usage("give either a base URL or an index directory, not both")),
            (Some(url), None) => IndexSource::Remote { base_url: url.clone() },
            (None, Some(dir)) => IndexSource::Local { dir: dir.clone() },
            (None, None) => match (&file.base_url, &file.index_dir) {
                (Some(_), Some(_)) => {
                    return Err(CliError::usage("config sets both base_url and index_dir"));
                }
                (None, Some(dir)) => IndexSource::Local { dir: dir.clone() },
                (url, None) => IndexSource::Remote { base_url: url.clone().unwrap_or_else(|| DEFAULT_BASE_URL.into()) },
            },
        };
        let (source, inferred) = match source {
            IndexSource::Local { dir } => {
                let (dir, id) = locate_index_dir(&dir)?;
                (IndexSource::Local { dir }, id)
            }
            remote => (remote, None),
        };
        let archive_id = self
            .archive
            .clone()
            .or_else(|| file.archive.clone())
            .or(inferred)
            .ok_or_else(|| CliError::usage("no archive id (use --archive)"))?;
        if !is_archive_id(&archive_id) {
            return Err(CliError::usage(format!("archive id {archive_id:?} is not of the form CC-MAIN-YYYY-WW")));
        }
        let cache_dir = self.cache_dir.clone().or_else(|| file.cache_dir.clone()).unwrap_or_else(default_cache_dir);
        Ok(ResolvedSource { archive_id, source, cache_dir })
    }
}

/// Everything a pipeline run depends on.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub archive_id: String,
    pub source: IndexSource,
    pub cache_dir: PathBuf,
    pub features: Vec<FeatureKind>,
    pub top_k: usize,
    pub top_n: usize,
    /// Widest proxy set in the heatmap.
    pub max_n: usize,
    pub output_dir: PathBuf,
    /// Extraction file with Last-Modified headers, if any.
    pub lastmod: Option<PathBuf>,
    pub thresholds: AnomalyThresholds,
    pub window: CredibilityWindow,
    pub outliers: OutlierFilter,
}

/// The part of [`RunConfig`] that can change results. Paths and the
/// parallelism degree are left out so artifacts do not depend on them.
#[derive(Debug, Serialize)]
pub struct ConfigRecord<'a> {
    pub archive_id: &'a str,
    pub features: Vec<&'static str>,
    pub top_k: usize,
    pub top_n: usize,
    pub max_n: usize,
    pub lastmod: bool,
    pub thresholds: AnomalyThresholds,
    pub window: CredibilityWindow,
    pub outliers: OutlierFilter,
}

impl RunConfig {
    pub fn new(source: ResolvedSource, output_dir: PathBuf) -> Self {
        Self {
            archive_id: source.archive_id,
            source: source.source,
            cache_dir: source.cache_dir,
            features: vec![FeatureKind::MimePair, FeatureKind::LanguageFirst, FeatureKind::LengthPercentile],
            top_k: DEFAULT_TOP_K,
            top_n: 10,
            max_n: 10,
            output_dir,
            lastmod: None,
            thresholds: AnomalyThresholds::default(),
            window: CredibilityWindow::default(),
            outliers: OutlierFilter::default(),
        }
    }

    /// Fills in whatever the file sets.
    pub fn apply_file(&mut self, file: &FileConfig) -> CliResult<()> {
        if let Some(f) = &file.features {
            self.features = parse_features(f)?;
        }
        self.top_k = file.top_k.unwrap_or(self.top_k);
        self.top_n = file.top_n.unwrap_or(self.top_n);
        self.max_n = file.max_n.unwrap_or(self.max_n);
        self.thresholds.ratio = file.anomaly_ratio.unwrap_or(self.thresholds.ratio);
        self.thresholds.share = file.anomaly_share.unwrap_or(self.thresholds.share);
        self.window.floor = file.credible_floor.unwrap_or(self.window.floor);
        self.window.future_slack = file.future_slack.unwrap_or(self.window.future_slack);
        self.outliers.min_samples = file.outlier_min_samples.unwrap_or(self.outliers.min_samples);
        self.outliers.min_mean_query = file.outlier_min_mean_query.unwrap_or(self.outliers.min_mean_query);
        Ok(())
    }

    pub fn resolved(&self) -> ResolvedSource {
        ResolvedSource { archive_id: self.archive_id.clone(), source: self.source.clone(), cache_dir: self.cache_dir.clone() }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.features.is_empty() {
            return Err(CliError::usage("no features selected"));
        }
        if self.features.contains(&FeatureKind::LmhYear) && self.lastmod.is_none() {
            return Err(CliError::usage("the lmh_year feature needs --lastmod"));
        }
        if self.top_k == 0 || self.top_n == 0 || self.max_n == 0 {
            return Err(CliError::usage("top-k, top-n and max-n must be positive"));
        }
        if !(self.thresholds.share > 0.0 && self.thresholds.share <= 1.0) || self.thresholds.ratio <= 0.0 {
            return Err(CliError::usage("anomaly thresholds out of range"));
        }
        Ok(())
    }

    pub fn record(&self) -> ConfigRecord<'_> {
        ConfigRecord {
            archive_id: &self.archive_id,
            features: self.features.iter().map(|k| k.as_str()).collect(),
            top_k: self.top_k,
            top_n: self.top_n,
            max_n: self.max_n,
            lastmod: self.lastmod.is_some(),
            thresholds: self.thresholds,
            window: self.window,
            outliers: self.outliers,
        }
    }

    pub fn digest(&self) -> String {
        config_digest(&self.record())
    }
}

/// First 16 hex digits of the SHA-256 of the JSON form.
pub fn config_digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&json))[..16].to_string()
}

pub fn parse_features(names: &[String]) -> CliResult<Vec<FeatureKind>> {
    let mut out = Vec::new();
    for n in names.iter().flat_map(|s| s.split(',')).map(str::trim).filter(|s| !s.is_empty()) {
        let k: FeatureKind = n.parse().map_err(|e: ccseg_core::features::FeatureError| CliError::usage(e.to_string()))?;
        if !out.contains(&k) {
            out.push(k);
        }
    }
    Ok(out)
}
