//! Full-mesh topology discovery through the `sonoma` binary on an eight
//! node mesh. Criteria 1 and 2 share one run.

use std::collections::BTreeSet;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use sonoma_core::api::Accounting;
use sonoma_core::rows::TracerouteRow;
use sonoma_core::topology::{mean_stdev, EdgeRow};

use crate::cluster::{Cluster, Options, PASSWORD, USER};
use crate::{ensure, topologies, Outcome};

const NODES: usize = 8;
const PAIRS: usize = NODES * (NODES - 1);
const DEADLINE: Duration = Duration::from_secs(30);

struct Run {
    cluster: Cluster,
    elapsed: Duration,
    stdout: String,
    edges: Vec<EdgeRow>,
    routes: Vec<TracerouteRow>,
}

static RUN: Mutex<Option<Result<Run, String>>> = Mutex::new(None);

/// Stops the shared cluster.
pub fn release() {
    RUN.lock().unwrap_or_else(|e| e.into_inner()).take();
}

fn with_run(f: impl FnOnce(&Run) -> Outcome) -> Outcome {
    let mut slot = RUN.lock().unwrap_or_else(|e| e.into_inner());
    match slot.get_or_insert_with(start) {
        Ok(run) => f(run),
        Err(e) => Err(e.clone()),
    }
}

fn start() -> Result<Run, String> {
    let cluster = Cluster::start(topologies::mesh8(8), Options::default());
    let out = cluster.dir.path().join("edges.csv");
    let ids: Vec<String> = (0..NODES).map(|i| format!("m{i}")).collect();
    let t = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_sonoma"))
        .env("SONOMA_ML_URL", &cluster.ml.url)
        .env("SONOMA_USER", USER)
        .env("SONOMA_CREDENTIAL", PASSWORD)
        .arg("topology")
        .args(&ids)
        .arg("--out")
        .arg(&out)
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
    ensure(o.status.success(), || {
        format!("sonoma topology exited {:?}: {}", o.status, String::from_utf8_lossy(&o.stderr))
    })?;
    let read = |p: &std::path::Path| -> Result<Vec<u8>, String> { std::fs::read(p).map_err(|e| format!("{p:?}: {e}")) };
    let edges_csv = read(&out)?;
    let routes_csv = read(&sonoma_cli::commands::routes_path(&out))?;
    let edges = csv::Reader::from_reader(&edges_csv[..])
        .deserialize()
        .collect::<Result<Vec<EdgeRow>, _>>()
        .map_err(|e| e.to_string())?;
    let routes = csv::Reader::from_reader(&routes_csv[..])
        .deserialize()
        .collect::<Result<Vec<TracerouteRow>, _>>()
        .map_err(|e| e.to_string())?;
    Ok(Run { cluster, elapsed, stdout, edges, routes })
}

fn summary_value<'a>(stdout: &'a str, key: &str) -> Option<&'a str> {
    stdout.lines().find_map(|l| l.strip_prefix(key)?.strip_prefix(": "))
}

/// N nodes yield exactly N(N-1) routes and agent tasks, within the deadline.
pub fn criterion_1() -> Outcome {
    with_run(check_1)
}

fn check_1(run: &Run) -> Outcome {
    ensure(summary_value(&run.stdout, "routes") == Some(&PAIRS.to_string()), || {
        format!("summary does not report {PAIRS} routes:\n{}", run.stdout)
    })?;
    let acct: Accounting = reqwest::blocking::get(format!("{}/admin/accounting", run.cluster.ml.url))
        .and_then(|r| r.json())
        .map_err(|e| e.to_string())?;
    let dispatched: u64 = acct.agents.iter().map(|a| a.tasks_dispatched).sum();
    ensure(dispatched == PAIRS as u64, || format!("{dispatched} agent tasks dispatched, expected {PAIRS}"))?;
    let pairs: BTreeSet<(&str, &str)> = run.routes.iter().map(|r| (r.source.as_str(), r.target.as_str())).collect();
    ensure(pairs.len() == PAIRS, || format!("{} distinct routes in raw data, expected {PAIRS}", pairs.len()))?;
    ensure(run.elapsed < DEADLINE, || format!("took {:?}", run.elapsed))?;
    Ok(format!("{PAIRS} routes from {dispatched} agent tasks in {:.1} s", run.elapsed.as_secs_f64()))
}

/// Edge set equals the union of consecutive pairs over the oracle routes,
/// and the printed route length statistics match them to three decimals.
pub fn criterion_2() -> Outcome {
    let outcome = with_run(check_2);
    release();
    outcome
}

fn check_2(run: &Run) -> Outcome {
    let topo = &run.cluster.topo;
    let addrs: Vec<String> = topo.nodes().iter().map(|n| n.ip_address.clone()).collect();
    let mut want = BTreeSet::new();
    let mut lengths = Vec::new();
    for a in &addrs {
        for b in &addrs {
            if a == b {
                continue;
            }
            let route = topo.compute_route(a, b).map_err(|e| e.to_string())?;
            lengths.push(route.hop_count() as f64);
            for w in route.0.windows(2) {
                want.insert((run.cluster.address(&w[0]), run.cluster.address(&w[1])));
            }
        }
    }
    let got: BTreeSet<(String, String)> = run.edges.iter().map(|e| (e.from.clone(), e.to.clone())).collect();
    ensure(got == want, || {
        let missing: Vec<_> = want.difference(&got).collect();
        let extra: Vec<_> = got.difference(&want).collect();
        format!("edge sets differ; missing {missing:?}, extra {extra:?}")
    })?;
    let (mean, stdev) = mean_stdev(&lengths);
    let (mean, stdev) = (format!("{mean:.3}"), format!("{stdev:.3}"));
    ensure(summary_value(&run.stdout, "route length mean") == Some(mean.as_str()), || {
        format!("mean route length: oracle {mean}, printed\n{}", run.stdout)
    })?;
    ensure(summary_value(&run.stdout, "route length stdev") == Some(stdev.as_str()), || {
        format!("route length stdev: oracle {stdev}, printed\n{}", run.stdout)
    })?;
    Ok(format!("{} directed edges equal the oracle; route length {mean} +/- {stdev} hops", got.len()))
}
