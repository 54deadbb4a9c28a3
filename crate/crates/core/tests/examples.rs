//! Every example runs and shows the behaviour it advertises.

#[allow(dead_code)]
#[path = "../examples/ablation.rs"]
mod ablation;
#[allow(dead_code)]
#[path = "../examples/bandwidth_sweep.rs"]
mod bandwidth_sweep;
#[allow(dead_code)]
#[path = "../examples/codecs.rs"]
mod codecs;
#[allow(dead_code)]
#[path = "../examples/gossip.rs"]
mod gossip;
#[allow(dead_code)]
#[path = "../examples/overlap.rs"]
mod overlap;
#[allow(dead_code)]
#[path = "../examples/straggler.rs"]
mod straggler;
#[allow(dead_code)]
#[path = "../examples/tcp_parity.rs"]
mod tcp_parity;

#[test]
fn collectives_example() {
    let (exact, approx) = collectives::run().unwrap();
    assert_eq!(exact[0], 6.0);
    for (a, b) in exact.iter().zip(&approx) {
        assert!((a - b).abs() < 0.1, "{a} vs {b}");
    }
}

#[test]
fn codecs_example() {
    let rows = codecs::run().unwrap();
    let bytes: Vec<usize> = rows.iter().map(|r| r.1).collect();
    assert_eq!(bytes, [4000, 1008, 1008, 129]);
    assert_eq!(rows[0].2, 0.0);
    assert!(rows[1].2 <= 2.0 / 255.0);
}

#[test]
fn gossip_example() {
    let spread = gossip::run(30).unwrap();
    assert!(spread[30] < 1e-2 * spread[0]);
}

#[test]
fn overlap_example() {
    let (serial, overlapped) = overlap::run().unwrap();
    assert!(overlapped < serial);
}

#[test]
fn straggler_example() {
    let rows = straggler::run().unwrap();
    assert!(rows[1].1 < rows[0].1, "{rows:?}");
}

#[test]
fn bandwidth_sweep_example() {
    let rows = bandwidth_sweep::run().unwrap();
    assert_eq!(rows.len(), 6);
    let time = |alg: &str, bw: f64| {
        rows.iter()
            .find(|r| r.algorithm == alg && r.bandwidth == bw)
            .and_then(|r| r.epoch_virtual_time)
            .unwrap()
    };
    assert!(time("qsgd8", 1e8) < time("allreduce", 1e8));
}

#[test]
fn tcp_parity_example() {
    assert!(tcp_parity::run().unwrap());
}

#[test]
fn ablation_example() {
    let rows = ablation::run().unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.same_params));
}
