use ccseg_core::cdx::{parse_index_line, Subset};
use ccseg_core::features::{merge_top_k, tabulate, FeatureKind};
use ccseg_core::stats::{correlation_matrix, rank_segments};
use ccseg_core::synth::{empirical_mime_counts, generate, generate_entries, ground_truth, Perturbation, SynthSpec};
use ccseg_core::zipnum::{LocalShards, MasterIndex, ZipNumIndex};

#[test]
fn label_frequencies_within_three_sigma() {
    let spec = SynthSpec {
        n_segments: 4,
        entries_per_segment: 20_000,
        n_labels: 30,
        perturbed: vec![Perturbation { segment: 2, divergence: 0.5 }],
        ..SynthSpec::default()
    };
    let entries = generate_entries(&spec).unwrap();
    let counts = empirical_mime_counts(&entries, spec.n_labels);
    let (_, truth) = ground_truth(&spec);
    let mut outside = 0;
    let mut cells = 0;
    for seg in &truth {
        let row = &counts[&seg.segment];
        let n: u64 = row.iter().sum();
        assert_eq!(n as usize, spec.entries_of(seg.segment));
        for (&c, &p) in row.iter().zip(&seg.distribution) {
            let (mean, sd) = (n as f64 * p, (n as f64 * p * (1.0 - p)).sqrt());
            cells += 1;
            if (c as f64 - mean).abs() > 3.0 * sd {
                outside += 1;
            }
        }
    }
    // 3 sigma holds for about 99.7% of cells; allow a couple of strays.
    assert!(outside <= 2, "{outside} of {cells} cells outside 3 sigma");
}

#[test]
fn index_files_reproduce_the_lines() {
    let spec = SynthSpec { n_segments: 6, entries_per_segment: 500, duplicate_share: 0.2, ..SynthSpec::default() };
    let a = generate(&spec).unwrap();
    assert!(a.lines.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(a.manifest.index_lines, a.lines.len());
    let root = tempfile::tempdir().unwrap();
    let dir = a.write(root.path()).unwrap();
    let index = ZipNumIndex::new(MasterIndex::open(dir.join("cluster.idx")).unwrap(), LocalShards::new(&dir));
    let shards: Vec<String> = index.master().shard_names().iter().map(|s| s.to_string()).collect();
    assert_eq!(shards.len(), spec.n_shards);
    let mut all = Vec::new();
    for s in &shards {
        all.extend(index.shard_lines(s).unwrap());
    }
    assert_eq!(all, a.lines);
    for l in &a.lines {
        parse_index_line(l).unwrap();
    }
    for f in &a.manifest.files {
        let path = if f.name == "lastmod.tsv" { root.path().join(&f.name) } else { dir.join(&f.name) };
        assert_eq!(ccseg_core::fetch::file_sha256(&path).unwrap(), f.sha256, "{}", f.name);
    }
    let diag = a.lines.iter().filter(|l| l.contains("/crawldiagnostics/")).count();
    assert_eq!(a.manifest.entries - a.manifest.warc_entries, diag);
    assert!(a.manifest.entries > a.manifest.warc_entries);
}

#[test]
fn same_seed_same_archive() {
    let spec = SynthSpec { n_segments: 8, entries_per_segment: 300, ..SynthSpec::default() };
    let a = generate(&spec).unwrap();
    let b = generate(&spec).unwrap();
    assert_eq!(a.lines, b.lines);
    assert_eq!(a.master_text, b.master_text);
    assert_eq!(a.shards, b.shards);
    assert_eq!(a.lastmod_text, b.lastmod_text);
    let c = generate(&SynthSpec { seed: 2, ..spec }).unwrap();
    assert_ne!(a.lines, c.lines);
}

#[test]
fn planted_segments_rank_last() {
    let spec = SynthSpec {
        n_segments: 30,
        entries_per_segment: 2000,
        n_labels: 60,
        perturbed: vec![Perturbation { segment: 4, divergence: 0.6 }, Perturbation { segment: 17, divergence: 0.6 }],
        ..SynthSpec::default()
    };
    let a = generate(&spec).unwrap();
    assert!(a.manifest.oracle_rho_gap.unwrap() > 0.05);
    assert_eq!(a.manifest.planted_worst, vec![4, 17]);
    let entries = generate_entries(&spec).unwrap();
    let warc = entries.iter().filter(|e| e.segment.subset == Subset::Warc).map(|e| (&e.entry, e.segment));
    let table = merge_top_k(&tabulate(warc, FeatureKind::MimePair).unwrap(), 100).unwrap();
    let ranking = rank_segments(&correlation_matrix(&table).unwrap()).segments();
    let mut last_two = ranking[ranking.len() - 2..].to_vec();
    last_two.sort_unstable();
    assert_eq!(last_two, vec![4, 17]);
}

#[test]
fn invalid_specs_rejected() {
    for spec in [
        SynthSpec { n_segments: 0, ..SynthSpec::default() },
        SynthSpec { duplicate_share: 1.5, ..SynthSpec::default() },
        SynthSpec { perturbed: vec![Perturbation { segment: 200, divergence: 0.5 }], ..SynthSpec::default() },
        SynthSpec { block_size: 0, ..SynthSpec::default() },
    ] {
        assert!(spec.validate().is_err(), "{spec:?}");
    }
}
