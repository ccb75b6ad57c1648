use ccseg_core::cdx::{parse_index_line, parse_master_line, SegmentRef, Subset};
use ccseg_core::features::MergedFeatureTable;
use ccseg_core::surt::{canonicalize, SurtError};
use proptest::prelude::*;

const W3_301: &str = r#"org,w3)/tr/xml 20210613173657 {"url": "https://www.w3.org/TR/XML/", "mime": "text/html", "mime-detected": "text/html", "status": "301", "digest": "LQRWZ7SMYYGCL55UJSVAS3BY64YNZ4DQ", "length": "743", "offset": "27241472", "filename": "crawl-data/CC-MAIN-2021-25/segments/1623487610196.46/crawldiagnostics/CC-MAIN-20210613161945-20210613191945-00275.warc.gz", "redirect": "https://www.w3.org/TR/xml/"}"#;
const W3_200: &str = r#"org,w3)/tr/xml 20210613173657 {"url": "https://www.w3.org/TR/xml/", "mime": "text/html", "mime-detected": "application/xhtml+xml", "status": "200", "digest": "AOMNGHUQLUKLHHWBNUL7MOVXKIUX522W", "length": "55091", "offset": "968583998", "filename": "crawl-data/CC-MAIN-2021-25/segments/1623487610196.46/warc/CC-MAIN-20210613161945-20210613191945-00371.warc.gz", "charset": "UTF-8", "languages": "eng"}"#;

#[test]
fn w3_key() {
    assert_eq!(canonicalize("https://www.w3.org/TR/xml/").unwrap().as_str(), "org,w3)/tr/xml");
    assert_eq!(canonicalize("https://www.w3.org/TR/XML/").unwrap().as_str(), "org,w3)/tr/xml");
    assert!(matches!(canonicalize("notaurl"), Err(SurtError::MissingScheme(_))));
}

#[test]
fn w3_entries_round_trip() {
    for line in [W3_301, W3_200] {
        let e = parse_index_line(line).unwrap();
        assert_eq!(e.urlkey, canonicalize(&e.url).unwrap());
        assert_eq!(e.to_line(), line);
    }
    let a = parse_index_line(W3_301).unwrap();
    let b = parse_index_line(W3_200).unwrap();
    assert_eq!(a.segment().unwrap(), SegmentRef { segment_id: 46, subset: Subset::CrawlDiagnostics });
    assert_eq!(b.segment().unwrap(), SegmentRef { segment_id: 46, subset: Subset::Warc });
}

#[test]
fn w3_master_line() {
    let m = parse_master_line("org,w3)/tr/tr.xml 20210613171127 cdx-00253.gz 557238519 185309").unwrap();
    assert_eq!((m.shard_name.as_str(), m.block_offset, m.block_length), ("cdx-00253.gz", 557_238_519, 185_309));
}

#[test]
fn merged_table_cells_round_trip() {
    let text = "label\twhole\tseg71\tseg72\tseg73\n\
                text/plain application/mbox\t37711\t435\t364\t397\n\
                application/octet-stream application/x-tika-msoffice\t37414\t354\tnan\t2\n";
    let t = MergedFeatureTable::from_tsv("mime_pair", text).unwrap();
    assert_eq!(t.whole[0], 37711);
    assert_eq!([t.cell(0, 0), t.cell(0, 1), t.cell(0, 2)], [Some(435), Some(364), Some(397)]);
    assert_eq!(t.cell(1, 1), None);
    assert_eq!(t.missing_cells(), 1);
    assert_eq!(t.to_tsv(), text);
}

fn host() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-zA-Z0-9-]{1,8}", 1..5).prop_map(|l| l.join("."))
}

proptest! {
    #[test]
    fn surt_invariants(
        https in any::<bool>(),
        www in any::<bool>(),
        h in host(),
        path in prop::collection::vec("[a-zA-Z0-9._~-]{0,6}", 0..4),
        slashes in 0usize..3,
        query in prop::option::of("[a-z0-9=&]{0,8}"),
    ) {
        let uri = format!(
            "{}://{}{}/{}{}{}",
            if https { "https" } else { "http" },
            if www { "www." } else { "" },
            h,
            path.join("/"),
            "/".repeat(slashes),
            query.as_deref().map(|q| format!("?{q}")).unwrap_or_default(),
        );
        let key = canonicalize(&uri).unwrap();
        let k = key.as_str();
        let upper = canonicalize(&uri.to_uppercase()).unwrap();
        // Idempotent up to the scheme, case-free and slash-free before the query.
        prop_assert_eq!(upper.as_str(), k);
        prop_assert!(!k.bytes().any(|b| b.is_ascii_uppercase()));
        let before_query = k.split('?').next().unwrap();
        prop_assert!(!before_query.ends_with('/') || before_query.ends_with(")"));
        prop_assert_eq!(k.matches(')').count(), 1);
        let flip = if https { uri.replacen("https", "http", 1) } else { uri.replacen("http", "https", 1) };
        let flipped = canonicalize(&flip).unwrap();
        prop_assert_eq!(flipped.as_str(), k);
        // Reversed labels: the first label of the key is the last of the host.
        let last = h.rsplit('.').next().unwrap().to_lowercase();
        prop_assert!(k.starts_with(&last));
    }
}
