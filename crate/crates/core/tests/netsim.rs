use primer_core::netsim::{EventQueue, Network, NetworkConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn empirical_drop_rate_matches_configuration() {
    let cfg = NetworkConfig { delay_min: 0.0, delay_max: 0.05, drop_prob: 0.2, seed: 11 };
    let mut net = Network::<u8>::new(cfg, 2).unwrap();
    let sent = 10_000;
    let delivered: usize = (0..sent).map(|k| net.broadcast(0, &0, k as f64 * 1e-3).len()).sum();
    let rate = 1.0 - delivered as f64 / sent as f64;
    assert!((rate - 0.2).abs() <= 0.02, "drop rate {rate}");
}

#[test]
fn delivery_order_matches_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut q = EventQueue::new();
    let mut oracle = Vec::new();
    for i in 0..500 {
        // coarse times so that ties are frequent
        let t = rng.gen_range(0..40) as f64 * 0.25;
        q.push(t, 0.0, 0, 1, i);
        oracle.push((t, i));
    }
    oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut got = Vec::new();
    for until in [1.0, 2.5, 2.5, 7.0, 100.0] {
        for d in q.advance(until) {
            assert!(d.deliver_at <= until);
            got.push((d.deliver_at, d.message));
        }
    }
    assert_eq!(got, oracle);
}

#[test]
fn delays_stay_within_bounds() {
    let cfg = NetworkConfig { delay_min: 0.01, delay_max: 0.05, drop_prob: 0.0, seed: 13 };
    let mut net = Network::<usize>::new(cfg, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut now = 0.0;
    for k in 0..300 {
        now += rng.gen_range(0.0..0.02);
        for d in net.advance(now) {
            assert!(d.deliver_at >= d.sent_at + 0.01 - 1e-12);
            assert!(d.deliver_at <= d.sent_at + 0.05 + 1e-12);
            assert!(d.recipient != d.sender);
        }
        net.broadcast(k % 4, &k, now);
    }
}

#[test]
fn identical_seed_gives_identical_trace() {
    let run = || {
        let cfg = NetworkConfig { delay_min: 0.0, delay_max: 0.05, drop_prob: 0.1, seed: 15 };
        let mut net = Network::<u32>::new(cfg, 3).unwrap();
        net.enable_trace();
        for k in 0..200u32 {
            let now = k as f64 * 0.01;
            net.advance(now);
            net.broadcast((k % 3) as usize, &k, now);
        }
        net.advance(10.0);
        let mut buf = Vec::new();
        net.write_trace(&mut buf).unwrap();
        buf
    };
    let (a, b) = (run(), run());
    assert!(!a.is_empty());
    assert_eq!(a, b);
}
