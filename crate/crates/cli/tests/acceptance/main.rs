//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails. Pass criterion numbers as arguments to
//! run a subset.

mod bandwidth;
mod cluster;
mod fidelity;
mod lifecycle;
mod topologies;
mod topology;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use serde_json::{json, Value};
use sonoma_core::api::ResultsResponse;
use sonoma_core::vo::format::gunzip;
use sonoma_core::ErrorCode;

use cluster::{Cluster, Options, USER};

pub type Outcome = Result<String, String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn code_of(r: &sonoma_core::Result<Value>) -> Option<ErrorCode> {
    r.as_ref().err().map(|e| e.code)
}

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: &[Criterion] = &[
    (1, "full-mesh decomposition", topology::criterion_1),
    (2, "topology fidelity", topology::criterion_2),
    (3, "bandwidth estimation", bandwidth::criterion_3),
    (4, "privilege enforcement", criterion_4),
    (5, "reservation exclusivity", lifecycle::criterion_5),
    (6, "async lifecycle and callback robustness", lifecycle::criterion_6),
    (7, "output formats", criterion_7),
    (8, "sim oracle equivalence", fidelity::criterion_8),
    (9, "durability", criterion_9),
];

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for &(n, name, f) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{secs:.1} s] {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.1} s] {why}");
            }
        }
    }
    topology::release();
    if failed > 0 {
        std::process::exit(1);
    }
}

const ASYNC_OPS: [&str; 9] = [
    "longPing",
    "parallelPing",
    "ensemblePing",
    "longTraceroute",
    "parallelTraceroute",
    "ensembleTraceroute",
    "longChirp",
    "longTrain",
    "topology",
];

/// GUEST: every async operation refused, every sync one allowed, and the
/// eleventh request in a minute over quota.
fn criterion_4() -> Outcome {
    let c = Cluster::start(topologies::line(), Options::default());
    let api = c.client();
    let catalog = api.call_value("describe", &json!({})).map_err(|e| e.to_string())?;
    let mut listed: Vec<&str> = catalog["operations"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|o| o["mode"] == "ASYNC")
        .map(|o| o["name"].as_str().unwrap())
        .collect();
    listed.sort();
    let mut expected = ASYNC_OPS.to_vec();
    expected.sort();
    ensure(listed == expected, || format!("catalog lists async operations {listed:?}"))?;

    let g1 = c.session("guest");
    let all_params = |s: &str| {
        json!({
            "sessionId": s, "sourceNode": "A", "target": "C", "targets": ["B", "C"], "sources": ["A"],
            "nodeList": ["A", "B", "C"], "srcNode": "A", "dstNode": "B", "dstNodes": ["C"],
            "nPackets": 10, "sizeBytes": 500, "initialGapUs": 1000.0, "gapRatio": 0.9
        })
    };
    for op in ASYNC_OPS {
        let r = api.call_value(op, &all_params(g1.as_str()));
        ensure(code_of(&r) == Some(ErrorCode::AsyncForbidden), || format!("{op} as guest gave {r:?}"))?;
    }

    let g2 = c.session("guest");
    let s = g2.as_str();
    let mut sync_ok = Vec::new();
    let mut call = |op: &str, body: Value| -> Result<Value, String> {
        let r = api.call_value(op, &body).map_err(|e| format!("{op} as guest: {e}"))?;
        sync_ok.push(op.to_owned());
        Ok(r)
    };
    call("getNodeList", json!({"sessionId": s, "filter": "ALL"}))?;
    let ping = call("shortPing", json!({"sessionId": s, "sourceNode": "A", "target": "C", "count": 2, "intervalSec": 0.2}))?;
    call("shortTraceroute", json!({"sessionId": s, "sourceNode": "A", "target": "C"}))?;
    call(
        "shortChirp",
        json!({"sessionId": s, "srcNode": "A", "dstNode": "B", "nPackets": 10, "sizeBytes": 500, "initialGapUs": 1000.0, "gapRatio": 0.9}),
    )?;
    call("shortTrain", json!({"sessionId": s, "srcNode": "A", "dstNodes": ["C"], "nPackets": 10, "sizeBytes": 1500}))?;
    call("getAvailableBandwidth", json!({"sessionId": s, "srcNode": "A", "dstNode": "C"}))?;
    let pid = ping["processId"].clone();
    call("getProcessInfo", json!({"sessionId": s, "processId": pid}))?;
    call("getResults", json!({"sessionId": s, "processId": pid}))?;
    call("getData", json!({"sessionId": s, "processId": pid}))?;
    call("killProcess", json!({"sessionId": s, "processId": pid}))?;
    let eleventh = api.call_value("getNodeList", &json!({"sessionId": s}));
    ensure(code_of(&eleventh) == Some(ErrorCode::Quota), || format!("11th guest request gave {eleventh:?}"))?;

    let g3 = c.session("guest");
    api.call_value("closeSession", &json!({"sessionId": g3})).map_err(|e| format!("closeSession as guest: {e}"))?;
    api.call_value("getVersion", &json!({})).map_err(|e| format!("getVersion: {e}"))?;
    Ok(format!(
        "9/9 async refused with ASYNC_FORBIDDEN; {} sync operations plus closeSession and getVersion allowed; 11th request QUOTA",
        sync_ok.len()
    ))
}

/// Field multiset of a CSV document: (column, value) per non-empty cell.
fn csv_fields(bytes: &[u8]) -> Result<Vec<(String, String)>, String> {
    let mut r = csv::Reader::from_reader(bytes);
    let headers = r.headers().map_err(|e| e.to_string())?.clone();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        for (h, v) in headers.iter().zip(rec.iter()) {
            if !v.is_empty() {
                out.push((h.to_owned(), v.to_owned()));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Field multiset of an XML document: (element, text) per leaf below a row.
fn xml_fields(bytes: &[u8]) -> Result<Vec<(String, String)>, String> {
    use quick_xml::events::Event;
    let mut reader = quick_xml::Reader::from_reader(bytes);
    let mut buf = Vec::new();
    let mut stack: Vec<String> = Vec::new();
    let mut out = Vec::new();
    loop {
        match reader.read_event_into(&mut buf).map_err(|e| e.to_string())? {
            Event::Start(e) => stack.push(String::from_utf8_lossy(e.name().as_ref()).into_owned()),
            Event::End(_) => {
                stack.pop();
            }
            Event::Text(t) if stack.len() == 3 => {
                let text = t.unescape().map_err(|e| e.to_string())?.into_owned();
                out.push((stack[2].clone(), text));
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    out.sort();
    Ok(out)
}

fn criterion_7() -> Outcome {
    let c = Cluster::start(topologies::line(), Options::default());
    let api = c.client();
    let s = c.session(USER);
    let ping = api
        .call_value("shortPing", &json!({"sessionId": s, "sourceNode": "A", "target": "C", "count": 5, "intervalSec": 0.2}))
        .map_err(|e| e.to_string())?;
    let pid = &ping["processId"];
    let fetch = |format: &str, zip: bool| -> Result<Vec<u8>, String> {
        let v = api
            .call_value("getResults", &json!({"sessionId": s, "processId": pid, "format": format, "zip": zip}))
            .map_err(|e| e.to_string())?;
        let r: ResultsResponse = serde_json::from_value(v).map_err(|e| e.to_string())?;
        ensure(r.zipped == zip, || "zip flag not honoured".into())?;
        r.payload_bytes().map_err(|e| e.to_string())
    };
    let csv_plain = fetch("CSV", false)?;
    let xml_plain = fetch("XML", false)?;
    let csv_zip = gunzip(&fetch("CSV", true)?).map_err(|e| e.to_string())?;
    let xml_zip = gunzip(&fetch("XML", true)?).map_err(|e| e.to_string())?;
    ensure(csv_zip == csv_plain, || "gunzip(gzip-CSV) differs from CSV".into())?;
    ensure(xml_zip == xml_plain, || "gunzip(gzip-XML) differs from XML".into())?;
    let (cf, xf) = (csv_fields(&csv_plain)?, xml_fields(&xml_plain)?);
    ensure(!cf.is_empty(), || "empty CSV".into())?;
    ensure(cf == xf, || format!("field multisets differ:\n{cf:?}\n{xf:?}"))?;
    Ok(format!("4 encodings decode; gunzip byte-identical; {} fields match between CSV and XML", cf.len()))
}

fn criterion_9() -> Outcome {
    const N: usize = 25;
    let mut c = Cluster::start(topologies::line(), Options::default());
    let s = c.session(USER);
    let mut pids = Vec::new();
    for i in 0..N {
        let target = ["B", "C"][i % 2];
        let r = c
            .client()
            .call_value("shortPing", &json!({"sessionId": s, "sourceNode": "A", "target": target, "count": 1}))
            .map_err(|e| e.to_string())?;
        pids.push(r["processId"].clone());
    }
    let dump = |c: &Cluster| -> BTreeMap<String, String> {
        pids.iter()
            .map(|p| {
                let body = json!({"sessionId": s, "processId": p, "layer": "RAW"});
                let text = reqwest::blocking::Client::new()
                    .post(format!("{}/admin/vo/retrieve", c.ml.url))
                    .json(&body)
                    .send()
                    .unwrap()
                    .text()
                    .unwrap();
                (p.as_str().unwrap().to_owned(), text)
            })
            .collect()
    };
    let before = dump(&c);
    let groups: usize = before
        .values()
        .map(|t| serde_json::from_str::<Value>(t).unwrap()["groups"].as_array().map_or(0, Vec::len))
        .sum();
    ensure(groups == N, || format!("{groups} records acknowledged, expected {N}"))?;
    c.restart_ml();
    let after = dump(&c);
    ensure(before == after, || "records differ after SIGKILL and restart".into())?;
    Ok(format!("{N} acknowledged records byte-identical after SIGKILL of mld and restart"))
}
