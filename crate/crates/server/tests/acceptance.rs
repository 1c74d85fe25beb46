//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines are always printed; exits non-zero on any failure.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use common::{write_pool, Api, Participant, ServerProcess, TestServer};
use crseval::analysis::{compute_stats, filter_records, icc_oneway, AnalysisOptions};
use crseval::ingest::scan_item_markup;
use crseval::rng::{session_seed, Rng};
use crseval::session::attention_instruction;
use crseval::synth::{self, Judge};
use crseval::tables::{export_csv, TableKind};
use crseval::{
    parse_export, ExportDocument, FileStore, RecordStore, SessionEngine, SessionRecord, Speaker, Study,
};
use crseval_server::view::{CompletionResponse, CreateSessionResponse, NextStep};

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(limit: Duration, started: Instant) -> Result<Duration, String> {
    let took = started.elapsed();
    ensure!(took < limit, "took {took:?}, limit {limit:?}");
    Ok(took)
}

fn default_study_fidelity() -> Outcome {
    let started = Instant::now();
    let study = Study::default();
    let (srv, store) = TestServer::with_memory_store(study.clone(), synth::random_pool(40, 3, 1));
    let api = Api::new(&srv.base);
    let created: CreateSessionResponse = api.post_ok("/api/session", &json!({ "worker_id": "fidelity" }));
    ensure!(!created.instructions_text.is_empty(), "empty instructions");
    let id = created.session_id;

    let instruction = attention_instruction(&study.scale, study.attention_required_rating);
    let mut step: NextStep = api.post_ok(&format!("/api/session/{id}/ack-instructions"), &Value::Null);
    let mut pages = 0;
    let mut attention_pages = 0;
    let mut situations = BTreeSet::new();
    while let NextStep::Task { page } = step {
        pages += 1;
        ensure!(page.task_count == 10, "task_count {}", page.task_count);
        ensure!(page.responses.len() == 3, "page {} shows {} responses", page.task_index, page.responses.len());
        let labels = &page.scale.labels;
        ensure!(
            page.scale.points == 5
                && labels.first().map(String::as_str) == Some("Entirely meaningless")
                && labels.last().map(String::as_str) == Some("Perfectly meaningful"),
            "scale {:?}",
            page.scale
        );
        let attention = page.responses.iter().filter(|r| r.text == instruction).count();
        attention_pages += usize::from(attention > 0);
        situations.insert(page.situation_id.clone());
        let ratings: serde_json::Map<String, Value> = page
            .responses
            .iter()
            .map(|r| {
                let v = if r.text == instruction { study.attention_required_rating } else { 4 };
                (r.slot.to_string(), Value::from(v))
            })
            .collect();
        step = api.post_ok(
            &format!("/api/session/{id}/task/{}", page.task_index),
            &json!({ "ratings": ratings, "timings": { "events_ms": [900, 900, 900, 900] } }),
        );
    }
    ensure!(matches!(step, NextStep::Questionnaire(_)), "ended with {step:?}");
    ensure!(pages == 10 && situations.len() == 10, "{pages} pages, {} distinct situations", situations.len());
    ensure!(attention_pages == 1, "{attention_pages} attention checks");
    let answers = synth::questionnaire_answers(&study, &mut Rng::new(0));
    let done: CompletionResponse =
        api.post_ok(&format!("/api/session/{id}/questionnaire"), &json!({ "answers": answers }));
    ensure!(done.hit_code.len() == 8, "hit code {:?}", done.hit_code);
    let records = store.records_for_study(&study.study_id).map_err(|e| e.to_string())?;
    ensure!(
        records.len() == 1 && records[0].reliability.attention_passed,
        "stored record missing or failed attention"
    );
    let took = within(Duration::from_secs(5), started)?;
    Ok(format!("10 pages x 3 responses, 1 attention check, 5-point scale ({took:.0?})"))
}

fn chi_square_p(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

fn within_three_sigma(counts: &[u64]) -> Result<(), String> {
    let n: u64 = counts.iter().sum();
    let p = 1.0 / counts.len() as f64;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        let dev = (c as f64 - n as f64 * p).abs();
        ensure!(dev <= 3.0 * sigma, "bin {i}: {c} deviates {dev:.1} > 3 sigma ({:.1})", 3.0 * sigma);
    }
    Ok(())
}

fn randomization_uniformity() -> Outcome {
    let started = Instant::now();
    let study = Study::default();
    let pool = synth::random_pool(60, 3, 2);
    let engine = SessionEngine::new(&study, &pool);
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut orders = [0u64; 6];
    let mut attention = [0u64; 10];
    for i in 0..6000 {
        let seed = session_seed(study.rng_seed, &format!("worker-{i}"));
        let s = engine.create_session("w", seed).map_err(|e| e.to_string())?;
        let order = &s.tasks[0].display_order;
        let idx = perms.iter().position(|p| p[..] == order[..]).ok_or("not a permutation")?;
        orders[idx] += 1;
        let checks = s.attention_task_indices();
        ensure!(checks.len() == 1, "{} attention checks", checks.len());
        attention[checks[0]] += 1;
    }
    within_three_sigma(&orders)?;
    within_three_sigma(&attention)?;
    let (p_orders, p_attention) = (chi_square_p(&orders), chi_square_p(&attention));
    ensure!(p_orders > 0.001, "display orders chi-square p = {p_orders}");
    ensure!(p_attention > 0.001, "attention index chi-square p = {p_attention}");
    let took = within(Duration::from_secs(30), started)?;
    Ok(format!(
        "orders {orders:?} p={p_orders:.3}; attention {attention:?} p={p_attention:.3} ({took:.0?})"
    ))
}

fn records(study: &Study, pool_seed: u64, workers: impl IntoIterator<Item = (String, Judge)>) -> Vec<SessionRecord> {
    let pool = synth::random_pool(40, 3, pool_seed);
    let engine = SessionEngine::new(study, &pool);
    workers
        .into_iter()
        .enumerate()
        .map(|(i, (w, judge))| {
            let s = synth::complete_session(&engine, &format!("s{i}-{w}"), &w, 100 + i as u64, judge, 0).unwrap();
            engine.finish(&s).unwrap()
        })
        .collect()
}

fn discard_policy() -> Outcome {
    let study = Study::default();
    let honest: Vec<(String, Judge)> = (0..12).map(|i| (format!("w{i}"), Judge::default())).collect();
    let extreme = |attentive| Judge {
        attentive,
        fixed_rating: Some(5),
        ..Judge::default()
    };
    // The injected worker fails once and passes once; both records must go.
    let injected = vec![("bad".to_owned(), extreme(false)), ("bad".to_owned(), extreme(true))];

    let base = ExportDocument::new(study.clone(), records(&study, 3, honest.clone()));
    let dirty = ExportDocument::new(study.clone(), records(&study, 3, honest.into_iter().chain(injected)));
    let opts = AnalysisOptions::default();
    let (a, b) = (compute_stats(&base, &opts), compute_stats(&dirty, &opts));
    ensure!(a.systems == b.systems, "per-system summaries changed");
    ensure!(a.icc == b.icc, "icc changed: {:?} vs {:?}", a.icc, b.icc);
    ensure!(a.questionnaire == b.questionnaire && a.demographics == b.demographics, "tallies changed");

    let partition = filter_records(&dirty, &opts);
    let discarded: Vec<_> = partition.discarded.iter().map(|r| r.worker_id.as_str()).collect();
    ensure!(discarded == ["bad", "bad"], "discarded {discarded:?}");
    ensure!(partition.kept.iter().all(|r| r.worker_id != "bad"), "injected worker kept");
    Ok(format!("{} systems unchanged, 2/2 injected records discarded", a.systems.len()))
}

fn icc_oracle(m: &[Vec<f64>]) -> f64 {
    let n = m.len() as f64;
    let k = m[0].len() as f64;
    let grand = m.iter().flatten().sum::<f64>() / (n * k);
    let means: Vec<f64> = m.iter().map(|r| r.iter().sum::<f64>() / k).collect();
    let ssb = k * means.iter().map(|mi| (mi - grand).powi(2)).sum::<f64>();
    let ssw: f64 = m
        .iter()
        .zip(&means)
        .map(|(r, mi)| r.iter().map(|x| (x - mi).powi(2)).sum::<f64>())
        .sum();
    let msb = ssb / (n - 1.0);
    let msw = ssw / (n * (k - 1.0));
    (msb - msw) / (msb + (k - 1.0) * msw)
}

fn icc_equivalence() -> Outcome {
    let started = Instant::now();
    let mut rng = Rng::new(2024);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let rows = 2 + rng.below(9);
        let k = 2 + rng.below(9);
        let m: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..k).map(|_| 1.0 + rng.below(4_000_001) as f64 / 1_000_000.0).collect())
            .collect();
        let got = icc_oneway(&m).map_err(|e| format!("trial {trial}: {e}"))?;
        let diff = (got - icc_oracle(&m)).abs();
        ensure!(diff <= 1e-12, "trial {trial} ({rows}x{k}): diff {diff:e}");
        worst = worst.max(diff);
    }
    let perfect = icc_oneway(&[vec![1.0, 1.0, 1.0], vec![5.0, 5.0, 5.0]]).map_err(|e| e.to_string())?;
    ensure!(perfect == 1.0, "zero within-variance gave {perfect}");
    let took = within(Duration::from_secs(5), started)?;
    Ok(format!("100 matrices, max |diff| {worst:e}; zero-MSW case = 1.0 ({took:.0?})"))
}

fn situation_validity() -> Outcome {
    let started = Instant::now();
    let pool = synth::random_pool(1000, 3, 5);
    ensure!(pool.len() == 1000, "pool has {}", pool.len());
    let mut spans = 0;
    for s in pool.situations() {
        let first = s.utterances.first().ok_or("empty situation")?;
        ensure!(first.index == 0, "{} starts at {}", s.situation_id, first.index);
        ensure!(
            s.utterances.last().map(|u| u.speaker) == Some(Speaker::Seeker),
            "{} does not end with the seeker",
            s.situation_id
        );
        let texts = s.utterances.iter().map(|u| u.text.as_str()).chain(s.responses.values().map(String::as_str));
        for text in texts {
            let found = scan_item_markup(text).map_err(|e| format!("{}: {e}", s.situation_id))?;
            let mut rebuilt = String::new();
            let mut prev = 0;
            for span in &found {
                ensure!(text[span.start..span.end] == span.title, "span mismatch in {text:?}");
                rebuilt.push_str(&text[prev..span.start - 1]);
                rebuilt.push('"');
                rebuilt.push_str(&span.title);
                rebuilt.push('"');
                prev = span.end + 1;
            }
            rebuilt.push_str(&text[prev..]);
            ensure!(rebuilt == text, "round trip failed for {text:?}");
            spans += found.len();
        }
    }
    let took = within(Duration::from_secs(5), started)?;
    Ok(format!("1000 situations, {spans} title spans round-tripped ({took:.0?})"))
}

fn durability() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pool = write_pool(dir.path(), 40, 6);
    let store_path = dir.path().join("records.log");
    let study = Study::default();

    let server = ServerProcess::spawn(&pool, &store_path);
    let api = Api::new(&server.base);
    let mut codes = BTreeSet::new();
    for i in 0..50 {
        let mut p = Participant {
            api: &api,
            study: &study,
            attentive: true,
            rng: Rng::new(i),
        };
        codes.insert(p.complete(&format!("durable-{i}")).1);
    }
    server.kill();

    let server = ServerProcess::spawn(&pool, &store_path);
    let api = Api::new(&server.base);
    for i in 0..50 {
        let (status, _) = api.post("/api/session", &json!({ "worker_id": format!("durable-{i}") }));
        ensure!(status == 409, "durable-{i} unknown after restart ({status})");
    }
    server.kill();

    let store = FileStore::open(&store_path).map_err(|e| e.to_string())?;
    let json = store.export_study(&study.study_id).map_err(|e| e.to_string())?.to_json();
    let doc = parse_export(&json).map_err(|e| e.to_string())?;
    let stored: BTreeSet<_> = doc.records.iter().map(|r| r.hit_code.clone()).collect();
    ensure!(doc.records.len() == 50, "{} records after restart", doc.records.len());
    ensure!(stored == codes, "hit codes differ");
    ensure!(
        doc.records.iter().all(|r| r.violations(&study.scale).is_empty()),
        "corrupt record"
    );
    Ok("50/50 records survive SIGKILL and restart; export parses".into())
}

/// Counts non-attention ratings of kept workers straight from the JSON text.
fn brute_force_rows(json: &str, required: u8) -> usize {
    let doc: Value = serde_json::from_str(json).unwrap();
    let records = doc["records"].as_array().unwrap();
    let failed: BTreeSet<&str> = records
        .iter()
        .filter(|r| {
            r["tasks"]
                .as_array()
                .unwrap()
                .iter()
                .any(|t| t["is_attention"] == true && t["attention_rating"] != required)
        })
        .map(|r| r["worker_id"].as_str().unwrap())
        .collect();
    records
        .iter()
        .filter(|r| !failed.contains(r["worker_id"].as_str().unwrap()))
        .flat_map(|r| r["tasks"].as_array().unwrap())
        .map(|t| t["ratings"].as_object().unwrap().len())
        .sum()
}

fn export_round_trip() -> Outcome {
    let study = Study::default();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = FileStore::open(dir.path().join("records.log")).map_err(|e| e.to_string())?;
    store.put_study(&study).map_err(|e| e.to_string())?;
    let workers = (0..20).map(|i| {
        let judge = Judge {
            attentive: i % 6 != 5,
            ..Judge::default()
        };
        (format!("w{i}"), judge)
    });
    for r in records(&study, 8, workers) {
        store.put_record(r).map_err(|e| e.to_string())?;
    }
    let exported = store.export_study(&study.study_id).map_err(|e| e.to_string())?;
    let json = exported.to_json();
    let parsed = parse_export(&json).map_err(|e| e.to_string())?;
    ensure!(parsed == exported, "parsed document differs");
    ensure!(parsed.to_json() == json, "re-export not byte-identical");

    let opts = AnalysisOptions::default();
    let stats = compute_stats(&parsed, &opts);
    let kept = filter_records(&parsed, &opts).kept;
    let out = dir.path().join("tables");
    export_csv(&out, TableKind::All, &kept, &stats, &study.scale).map_err(|e| e.to_string())?;
    let rows = csv::Reader::from_path(out.join("ratings.csv"))
        .map_err(|e| e.to_string())?
        .records()
        .count();
    let expected = brute_force_rows(&json, study.attention_required_rating);
    ensure!(rows == expected, "csv has {rows} rows, brute force counts {expected}");
    let by_system: BTreeMap<_, _> = stats.systems.iter().map(|(k, v)| (k.clone(), v.n)).collect();
    ensure!(by_system.values().sum::<usize>() == expected, "summary n {by_system:?}");
    Ok(format!(
        "20 sessions, {} kept workers, {rows} CSV rows = brute-force count",
        stats.workers.kept
    ))
}

fn main() {
    let criteria: [(&str, Check); 7] = [
        ("default-study fidelity (API)", default_study_fidelity),
        ("randomization uniformity", randomization_uniformity),
        ("discard policy", discard_policy),
        ("ICC oracle equivalence", icc_equivalence),
        ("situation validity", situation_validity),
        ("durability", durability),
        ("export/analysis round trip", export_round_trip),
    ];
    // Keep panic output out of the report; failures are reported below.
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
