use std::collections::HashSet;
use std::path::PathBuf;

use crseval::ingest::{
    build_situation_pool, load_dialog_corpus, load_pool_file, load_response_set, write_pool_file,
};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn ten_dialog_corpus_counts() {
    let corpus = load_dialog_corpus(fixture("corpus10.jsonl")).unwrap();
    // Counted with `awk '{print gsub(/"speaker"/,"&")}' corpus10.jsonl`.
    let expected = [9, 5, 3, 8, 2, 3, 5, 5, 8, 4];
    let counts: Vec<usize> = corpus.dialogs.iter().map(|d| d.utterances.len()).collect();
    assert_eq!(counts, expected);
    for d in &corpus.dialogs {
        for (i, u) in d.utterances.iter().enumerate() {
            assert_eq!(u.index, i);
        }
    }
}

#[test]
fn pool_fixture_validates_independently() {
    let corpus = load_dialog_corpus(fixture("corpus10.jsonl")).unwrap();
    let responses = load_response_set(fixture("responses12.jsonl")).unwrap();
    let pool = build_situation_pool(&corpus, &responses, 7, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pool.json");
    write_pool_file(&pool, &path).unwrap();

    // Checked on the raw JSON, without going through the typed model.
    let raw: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    let items = raw.as_array().unwrap();
    assert_eq!(items.len(), 12);
    let mut ids = HashSet::new();
    let mut dialogs = HashSet::new();
    for s in items {
        assert!(ids.insert(s["situation_id"].as_str().unwrap().to_owned()));
        dialogs.insert(s["source_dialog_id"].as_str().unwrap().to_owned());
        let utts = s["utterances"].as_array().unwrap();
        assert_eq!(utts[0]["index"], 0);
        assert_eq!(utts.last().unwrap()["speaker"], "SEEKER");
        assert_eq!(s["responses"].as_object().unwrap().len(), 3);
    }
    assert_eq!(dialogs.len(), 5);

    assert_eq!(load_pool_file(&path).unwrap(), pool);
}

#[test]
fn pool_building_is_pure() {
    let corpus = load_dialog_corpus(fixture("corpus10.jsonl")).unwrap();
    let responses = load_response_set(fixture("responses12.jsonl")).unwrap();
    let a = serde_json::to_string(&build_situation_pool(&corpus, &responses, 3, None).unwrap()).unwrap();
    let b = serde_json::to_string(&build_situation_pool(&corpus, &responses, 3, None).unwrap()).unwrap();
    assert_eq!(a, b);
    let c = serde_json::to_string(&build_situation_pool(&corpus, &responses, 99, None).unwrap()).unwrap();
    assert_eq!(a, c, "seed only matters when sub-sampling");
}
