//! Available bandwidth estimation against simulated ground truth.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sonoma_core::api::{BandwidthRequest, BandwidthResponse};
use sonoma_core::model::Layer;
use sonoma_core::simnet::ground_truth_available_bandwidth;
use sonoma_core::vo::VoStore;

use crate::cluster::{Cluster, Options, USER};
use crate::{ensure, topologies, Outcome};

const PATHS: usize = 10;
const REQUIRED: usize = 9;
const TOLERANCE: f64 = 0.10;
const DEADLINE: Duration = Duration::from_secs(60);

pub fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let started = Instant::now();
    let mut within = 0;
    let mut report = Vec::new();
    for _ in 0..PATHS {
        let topo = topologies::bottleneck_path(&mut rng);
        let n = topo.nodes().len();
        let (src, dst) = (topo.nodes()[0].node_id.clone(), topo.nodes()[n - 1].node_id.clone());
        let truth = ground_truth_available_bandwidth(&topo, &topo.nodes()[0].ip_address, &topo.nodes()[n - 1].ip_address)
            .map_err(|e| e.to_string())?;
        let c = Cluster::start(topo, Options::default());
        let session = c.session(USER);
        let r: Result<BandwidthResponse, _> = c.client().call(
            "getAvailableBandwidth",
            &BandwidthRequest { session_id: session.clone(), src_node: src, dst_node: dst },
        );
        let Ok(r) = r else {
            report.push(format!("{truth:.1}/failed"));
            continue;
        };
        let err = (r.bandwidth_mbps - truth).abs() / truth;
        if err <= TOLERANCE {
            within += 1;
        }
        report.push(format!("{truth:.1}/{:.1}", r.bandwidth_mbps));
        let vo = VoStore::open(c.vo_dir()).map_err(|e| e.to_string())?;
        let raw = vo.retrieve(&session, &r.process_id_of_raw_data, Layer::Raw);
        ensure(raw.len() == 2 && raw.iter().all(|g| !g.rows.is_empty()), || {
            format!("raw data of {} has {} non-empty groups, expected 2", r.process_id_of_raw_data.as_str(), raw.len())
        })?;
    }
    let elapsed = started.elapsed();
    ensure(within >= REQUIRED, || format!("{within}/{PATHS} within 10% (truth/estimate Mbps: {})", report.join(" ")))?;
    ensure(elapsed < DEADLINE, || format!("took {elapsed:?}"))?;
    Ok(format!("{within}/{PATHS} within 10%, raw data stored (truth/estimate Mbps: {})", report.join(" ")))
}
