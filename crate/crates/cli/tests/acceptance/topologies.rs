use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sonoma_core::simnet::{SimLink, SimNode, SimTopology};

pub fn node(id: &str, ip: &str, line_rate: f64) -> SimNode {
    SimNode { node_id: id.into(), ip_address: ip.into(), line_rate_mbps: line_rate }
}

pub fn duplex(a: &str, b: &str, delay_ms: f64, cap: f64, cross: f64) -> [SimLink; 2] {
    let l = |from: &str, to: &str| SimLink {
        from: from.into(),
        to: to.into(),
        delay_ms,
        capacity_mbps: cap,
        cross_traffic_mbps: cross,
        loss: 0.0,
    };
    [l(a, b), l(b, a)]
}

/// A - B - C with a 10 Mbps B - C bottleneck.
pub fn line() -> SimTopology {
    let mut links = Vec::new();
    links.extend(duplex("A", "B", 1.0, 100.0, 0.0));
    links.extend(duplex("B", "C", 2.0, 10.0, 0.0));
    SimTopology::new(
        vec![node("A", "10.0.0.1", 100.0), node("B", "10.0.0.2", 100.0), node("C", "10.0.0.3", 100.0)],
        links,
    )
    .unwrap()
}

/// Eight nodes: a random spanning tree plus four chords.
pub fn mesh8(seed: u64) -> SimTopology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<String> = (0..8).map(|i| format!("m{i}")).collect();
    let nodes = ids.iter().enumerate().map(|(i, id)| node(id, &format!("10.8.0.{}", i + 1), 100.0)).collect();
    let mut pairs: Vec<(usize, usize)> = (1..8).map(|i| (rng.gen_range(0..i), i)).collect();
    while pairs.len() < 11 {
        let (a, b) = (rng.gen_range(0..8), rng.gen_range(0..8));
        if a != b && !pairs.contains(&(a, b)) && !pairs.contains(&(b, a)) {
            pairs.push((a, b));
        }
    }
    let mut links = Vec::new();
    for (a, b) in pairs {
        links.extend(duplex(&ids[a], &ids[b], rng.gen_range(0.5..15.0), 100.0, 0.0));
    }
    SimTopology::new(nodes, links).unwrap()
}

/// A path of 3 to 5 nodes whose tightest link has an available bandwidth
/// in [5, 80] Mbps; every other link has at least 1.5 times as much.
pub fn bottleneck_path(rng: &mut ChaCha8Rng) -> SimTopology {
    let n = rng.gen_range(3..6);
    let ids: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
    let nodes = ids.iter().enumerate().map(|(i, id)| node(id, &format!("10.5.0.{}", i + 1), 100.0)).collect();
    let tight = rng.gen_range(0..n - 1);
    let avail = rng.gen_range(5.0..80.0);
    let mut links = Vec::new();
    for i in 0..n - 1 {
        let (cap, cross) = if i == tight {
            let cap: f64 = rng.gen_range(avail..100.0_f64.max(avail + 1.0));
            (cap, cap - avail)
        } else {
            let free = rng.gen_range(1.5 * avail..1000.0);
            let cross = rng.gen_range(0.0..0.5 * free);
            (free + cross, cross)
        };
        links.extend(duplex(&ids[i], &ids[i + 1], rng.gen_range(0.5..10.0), cap, cross));
    }
    SimTopology::new(nodes, links).unwrap()
}
