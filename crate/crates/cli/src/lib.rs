//! The `ccseg` command line: argument parsing and one function per
//! subcommand. `main.rs` only calls [`run`].

pub mod artifact;
pub mod commands;
pub mod config;
pub mod error;
pub mod index;
pub mod pipeline;

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::ENV_CACHE_DIR;

#[derive(Debug, Parser)]
#[command(name = "ccseg", version, about = "Index-only analytics for Common Crawl archives")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Where the index is and where to cache it.
#[derive(Debug, Clone, Default, Args)]
pub struct SourceOpts {
    /// TOML file with defaults (base_url, index_dir, cache_dir, archive, ...).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Archive id, e.g. CC-MAIN-2019-35.
    #[arg(long)]
    pub archive: Option<String>,
    /// Server holding the archive [env: CCSEG_BASE_URL, ignored when
    /// --index-dir is given].
    #[arg(long, conflicts_with = "index_dir")]
    pub base_url: Option<String>,
    /// Local directory with cluster.idx and the shards (or a synth output root).
    #[arg(long)]
    pub index_dir: Option<PathBuf>,
    #[arg(long, env = ENV_CACHE_DIR)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert URIs to urlkeys; reads standard input when none are given.
    Surt { uris: Vec<String> },
    /// Print the index entries for a URI.
    Lookup(LookupArgs),
    /// Per-segment feature table for one property.
    Tabulate(TabulateArgs),
    /// Correlation matrix of a feature table.
    Correlate(CorrelateArgs),
    /// Rank segments by correlation with the whole archive.
    Rank(RankArgs),
    /// Percentile scores of the best segments of one property on another.
    ProxyEval(ProxyArgs),
    /// Last-Modified analyses of an extraction file.
    Lastmod {
        #[command(subcommand)]
        command: LastmodCommand,
    },
    /// Per-year means of URI component lengths.
    Urimetrics(UriArgs),
    /// Generate a synthetic archive with known ground truth.
    Synth(SynthArgs),
    /// Manage the download cache.
    Cache {
        #[command(subcommand)]
        command: CacheCommand,
    },
    /// Run everything and write an artifact directory.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct LookupArgs {
    pub uri: String,
    /// Treat the argument as a urlkey instead of a URI.
    #[arg(long)]
    pub key: bool,
    /// Read only the located block (and any later blocks the run continues
    /// into). By default the preceding block is also read when the located
    /// block starts with the key, since it may end with the same key.
    #[arg(long)]
    pub single_block: bool,
    /// Print comparison and block counters to standard error.
    #[arg(long)]
    pub count_ops: bool,
    #[command(flatten)]
    pub source: SourceOpts,
}

#[derive(Debug, Args)]
pub struct TabulateArgs {
    /// mime_pair, language_first, length_percentile or lmh_year.
    #[arg(long)]
    pub feature: String,
    #[arg(long, default_value_t = ccseg_core::features::DEFAULT_TOP_K)]
    pub top_k: usize,
    /// Extraction file, needed for lmh_year.
    #[arg(long)]
    pub lastmod: Option<PathBuf>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub source: SourceOpts,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Feature table written by `tabulate`.
    pub table: PathBuf,
    /// Directory for `<feature>.rho.tsv` and `<feature>.n_used.tsv`;
    /// without it the rho matrix goes to standard output.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// Matrix written by `correlate` (`<feature>.rho.tsv`); the
    /// `.n_used.tsv` file beside it is read too.
    pub rho: PathBuf,
    #[arg(long)]
    pub n_used: Option<PathBuf>,
    /// Only print the best N segments.
    #[arg(long)]
    pub top_n: Option<usize>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProxyArgs {
    /// `.rho.tsv` matrices; each serves as basis and as target.
    #[arg(required = true)]
    pub matrices: Vec<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub max_n: usize,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LmInput {
    /// Extraction file: urlkey, timestamp14, header, url[, filename].
    pub file: PathBuf,
    #[arg(long)]
    pub archive: Option<String>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum LastmodCommand {
    /// Parse and filter headers; one normalized record per accepted line.
    Extract(LmInput),
    /// Counts per year, month or day.
    Tabulate {
        #[command(flatten)]
        input: LmInput,
        #[arg(long, default_value = "year")]
        granularity: String,
    },
    /// Most frequent Last-Modified minus crawl-time offsets.
    Offsets {
        #[command(flatten)]
        input: LmInput,
        #[arg(long, default_value_t = pipeline::OFFSET_ROWS)]
        top: usize,
    },
    /// Buckets dominated by one exact value.
    Anomaly {
        #[command(flatten)]
        input: LmInput,
        #[arg(long, default_value_t = 10.0)]
        ratio: f64,
        #[arg(long, default_value_t = 0.9)]
        share: f64,
    },
}

#[derive(Debug, Args)]
pub struct UriArgs {
    #[command(flatten)]
    pub input: LmInput,
    /// Drop domains whose many long queries swamp a year.
    #[arg(long)]
    pub filter_outliers: bool,
    #[arg(long, default_value_t = 100)]
    pub min_samples: usize,
    #[arg(long, default_value_t = 100.0)]
    pub min_mean_query: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Spec as JSON or TOML (by extension); defaults otherwise.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum CacheCommand {
    /// Remove cached files for one archive, or all of them.
    Clear {
        #[command(flatten)]
        source: SourceOpts,
    },
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(short, long)]
    pub out: PathBuf,
    /// Features to analyse; repeat or separate with commas.
    #[arg(long = "feature")]
    pub features: Vec<String>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Widest proxy set in the heatmap.
    #[arg(long)]
    pub max_n: Option<usize>,
    #[arg(long)]
    pub lastmod: Option<PathBuf>,
    #[arg(long)]
    pub anomaly_ratio: Option<f64>,
    #[arg(long)]
    pub anomaly_share: Option<f64>,
    /// Worker threads; defaults to the number of processors.
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[command(flatten)]
    pub source: SourceOpts,
}

/// Parses `args` and runs the command. Returns the exit code.
pub fn run<I, T>(args: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() { write!(stderr, "{}", e.render()) } else { write!(stdout, "{}", e.render()) };
            return code;
        }
    };
    match commands::dispatch(cli.command, stdin, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "ccseg: {e}");
            e.exit_code()
        }
    }
}
