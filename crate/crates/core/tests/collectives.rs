use sdp4bit_core::collectives::{
    all_gather, all_gather_raw, exact_reduce_scatter, naive_tlqhs_reduce, pad_to, reduce_scatter,
    ring_reduce_scatter, two_level_reduce_scatter, unshard, ClusterTopology, ReduceConfig,
};
use sdp4bit_core::costmodel::{comm_bits_per_param, ByteLedger};
use sdp4bit_core::quant::{quantize, Bits};
use sdp4bit_core::rng::{fill_gaussian, fill_spiky, SeededRng};
use sdp4bit_core::FlatTensor;

fn spiky_grads(seed: u64, p: usize, d: usize) -> Vec<FlatTensor> {
    let root = SeededRng::new(seed);
    (0..p)
        .map(|r| fill_spiky(&mut root.derive(r as u64), d, 0.01, 50.0))
        .collect()
}

fn gaussian_grads(seed: u64, p: usize, d: usize) -> Vec<FlatTensor> {
    let root = SeededRng::new(seed);
    (0..p)
        .map(|r| fill_gaussian(&mut root.derive(r as u64), d, 0.0, 1.0))
        .collect()
}

fn error(a: &[FlatTensor], b: &[FlatTensor]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.distance(y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn exact_mean_small_example() {
    let topo = ClusterTopology::new(4, 2).unwrap();
    let grads: Vec<FlatTensor> = (0..4)
        .map(|r| FlatTensor::new((1..=4).map(|i| (4 * r + i) as f32).collect()).unwrap())
        .collect();
    let shards = exact_reduce_scatter(&topo, &grads).unwrap();
    let got: Vec<f32> = shards.iter().map(|s| s[0]).collect();
    assert_eq!(got, vec![7.0, 8.0, 9.0, 10.0]);
}

#[test]
fn exact_single_worker_and_zeros() {
    let topo = ClusterTopology::new(1, 1).unwrap();
    let g = fill_gaussian(&mut SeededRng::new(1), 64, 0.0, 1.0);
    assert_eq!(
        exact_reduce_scatter(&topo, std::slice::from_ref(&g)).unwrap(),
        vec![g]
    );

    let topo = ClusterTopology::new(8, 4).unwrap();
    let zeros = vec![FlatTensor::zeros(64); 8];
    for s in exact_reduce_scatter(&topo, &zeros).unwrap() {
        assert!(s.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn rejects_mismatched_inputs() {
    let topo = ClusterTopology::new(4, 2).unwrap();
    let mut grads = gaussian_grads(1, 4, 16);
    grads[2] = FlatTensor::zeros(12);
    assert!(exact_reduce_scatter(&topo, &grads).is_err());
    assert!(exact_reduce_scatter(&topo, &gaussian_grads(1, 3, 16)).is_err());
    let mut ledger = ByteLedger::new();
    // 16 is not a multiple of P * G = 4 * 8
    assert!(two_level_reduce_scatter(
        &topo,
        &gaussian_grads(1, 4, 16),
        &ReduceConfig::ulq(8),
        &mut ledger
    )
    .is_err());
}

#[test]
fn lossless_modes_are_bit_exact() {
    for (p, n, d) in [
        (16, 4, 4096),
        (8, 2, 1024),
        (4, 4, 256),
        (6, 1, 600),
        (1, 1, 64),
    ] {
        let topo = ClusterTopology::new(p, n).unwrap();
        for seed in 0..3 {
            let grads = spiky_grads(seed, p, d);
            let exact = exact_reduce_scatter(&topo, &grads).unwrap();
            let mut ledger = ByteLedger::new();
            let ring =
                ring_reduce_scatter(&topo, &grads, &ReduceConfig::ring(None, 1), &mut ledger)
                    .unwrap();
            let two = two_level_reduce_scatter(
                &topo,
                &grads,
                &ReduceConfig::lossless_two_level(),
                &mut ledger,
            )
            .unwrap();
            assert_eq!(ring, exact, "ring p={p} n={n}");
            assert_eq!(two, exact, "two-level p={p} n={n}");
        }
    }
}

#[test]
fn permutation_invariance_is_bit_exact() {
    let topo = ClusterTopology::new(8, 4).unwrap();
    let grads = spiky_grads(3, 8, 512);
    let exact = exact_reduce_scatter(&topo, &grads).unwrap();
    let mut shuffled = grads.clone();
    shuffled.reverse();
    shuffled.swap(1, 5);
    assert_eq!(exact_reduce_scatter(&topo, &shuffled).unwrap(), exact);
}

#[test]
fn lossless_with_hadamard_within_tolerance() {
    let topo = ClusterTopology::new(16, 4).unwrap();
    let mut cfg = ReduceConfig::lossless_two_level();
    cfg.hadamard = Some(sdp4bit_core::hadamard::HadamardConfig::default());
    for seed in 0..5 {
        let grads = spiky_grads(seed, 16, 2048);
        let exact = exact_reduce_scatter(&topo, &grads).unwrap();
        let mut ledger = ByteLedger::new();
        let pruned = two_level_reduce_scatter(&topo, &grads, &cfg, &mut ledger).unwrap();
        let naive = naive_tlqhs_reduce(&topo, &grads, &cfg, &mut ledger).unwrap();
        for ((a, b), c) in pruned.iter().zip(&exact).zip(&naive) {
            for i in 0..a.len() {
                assert!((a[i] - b[i]).abs() < 1e-4);
                assert!((c[i] - b[i]).abs() < 1e-4);
            }
        }
    }
}

#[test]
fn pruned_matches_naive_with_quantizers() {
    let topo = ClusterTopology::new(16, 4).unwrap();
    let cfg = ReduceConfig::tlq_hs(128, 32).unwrap();
    for seed in 0..10 {
        let grads = spiky_grads(100 + seed, 16, 4096);
        let mut l1 = ByteLedger::new();
        let mut l2 = ByteLedger::new();
        let pruned = two_level_reduce_scatter(&topo, &grads, &cfg, &mut l1).unwrap();
        let naive = naive_tlqhs_reduce(&topo, &grads, &cfg, &mut l2).unwrap();
        assert_eq!(l1, l2);
        let worst = pruned
            .iter()
            .zip(&naive)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0f32, f32::max);
        assert!(worst < 1e-4, "seed {seed}: {worst}");
    }
}

#[test]
fn naive_without_hadamard_is_two_level() {
    let topo = ClusterTopology::new(8, 4).unwrap();
    let grads = spiky_grads(4, 8, 2048);
    let cfg = ReduceConfig::tlq(128);
    let a = two_level_reduce_scatter(&topo, &grads, &cfg, &mut ByteLedger::new()).unwrap();
    let b = naive_tlqhs_reduce(&topo, &grads, &cfg, &mut ByteLedger::new()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn shard_routing_by_tags() {
    // Worker r contributes r + 1 to every element; element i of the padded
    // vector carries its own index as a second, exactly representable term.
    let topo = ClusterTopology::new(8, 2).unwrap();
    let d = 64;
    let grads: Vec<FlatTensor> = (0..8)
        .map(|r| FlatTensor::new((0..d).map(|i| (1024 * i + r + 1) as f32).collect()).unwrap())
        .collect();
    let shards = two_level_reduce_scatter(
        &topo,
        &grads,
        &ReduceConfig::lossless_two_level(),
        &mut ByteLedger::new(),
    )
    .unwrap();
    let s = d / 8;
    for (p, shard) in shards.iter().enumerate() {
        for (j, &v) in shard.iter().enumerate() {
            let i = p * s + j;
            assert_eq!(v, (1024 * i) as f32 + 4.5, "rank {p} element {j}");
        }
    }
}

#[test]
fn ring_quantization_adds_error() {
    let topo = ClusterTopology::new(8, 8).unwrap();
    let grads = gaussian_grads(9, 8, 1024);
    let exact = exact_reduce_scatter(&topo, &grads).unwrap();
    let ring = ring_reduce_scatter(
        &topo,
        &grads,
        &ReduceConfig::ring(Some(Bits::Four), 128),
        &mut ByteLedger::new(),
    )
    .unwrap();
    assert!(error(&ring, &exact) > 0.0);
}

#[test]
fn ring_error_grows_with_workers() {
    let d = 4096;
    let trials = 30;
    let mut medians = Vec::new();
    for p in [4usize, 16] {
        let topo = ClusterTopology::new(p, p).unwrap();
        let cfg = ReduceConfig::ring(Some(Bits::Four), 128);
        let errs: Vec<f64> = (0..trials)
            .map(|t| {
                let grads = gaussian_grads(1000 + t, p, d);
                let exact = exact_reduce_scatter(&topo, &grads).unwrap();
                let ring =
                    ring_reduce_scatter(&topo, &grads, &cfg, &mut ByteLedger::new()).unwrap();
                error(&ring, &exact)
            })
            .collect();
        medians.push(median(errs));
    }
    assert!(medians[1] > medians[0], "{medians:?}");
}

#[test]
fn spiky_error_ordering() {
    let topo = ClusterTopology::new(16, 4).unwrap();
    let configs = [
        ReduceConfig::tlq_hs(128, 32).unwrap(),
        ReduceConfig::tlq(128),
        ReduceConfig::ulq(128),
    ];
    let mut errs = vec![Vec::new(); 3];
    for t in 0..20 {
        let grads = spiky_grads(5000 + t, 16, 2048);
        let exact = exact_reduce_scatter(&topo, &grads).unwrap();
        for (e, cfg) in errs.iter_mut().zip(&configs) {
            let out = reduce_scatter(&topo, &grads, cfg, &mut ByteLedger::new()).unwrap();
            e.push(error(&out, &exact));
        }
    }
    let m: Vec<f64> = errs.into_iter().map(median).collect();
    assert!(m[0] < m[1] && m[1] < m[2], "{m:?}");
}

#[test]
fn two_level_ledger_matches_bits_per_param() {
    let topo = ClusterTopology::new(8, 4).unwrap();
    let grads = gaussian_grads(2, 8, 8 * 256);
    let cfg = ReduceConfig::tlq_hs(128, 32).unwrap();
    let mut ledger = ByteLedger::new();
    two_level_reduce_scatter(&topo, &grads, &cfg, &mut ledger).unwrap();
    assert_eq!(
        ledger.inter_bits_per_elem(),
        Some(comm_bits_per_param(Bits::Four, 128, 32).unwrap())
    );
    assert_eq!(
        ledger.intra_bits_per_elem(),
        Some(comm_bits_per_param(Bits::Eight, 128, 32).unwrap())
    );
    // Each worker sends (N-1)/N of its gradient intra-node and the reduced
    // (M-1)/M of its 1/N share inter-node (s = 256, M = 2).
    assert_eq!(ledger.intra_elems, 8 * 3 * 512);
    assert_eq!(ledger.inter_elems, 8 * 256);

    let mut base = ByteLedger::new();
    two_level_reduce_scatter(
        &topo,
        &grads,
        &ReduceConfig::lossless_two_level(),
        &mut base,
    )
    .unwrap();
    assert_eq!(base.inter_elems, ledger.inter_elems);
    assert_eq!(
        base.inter_bytes as f64 / ledger.inter_bytes as f64,
        32.0 / 4.25
    );
}

#[test]
fn all_gather_replicates() {
    let topo = ClusterTopology::new(8, 4).unwrap();
    let root = SeededRng::new(12);
    let chunks: Vec<_> = (0..8)
        .map(|r| {
            quantize(
                &fill_gaussian(&mut root.derive(r), 4096, 0.0, 0.01),
                Bits::Four,
                2048,
            )
            .unwrap()
        })
        .collect();
    let mut ledger = ByteLedger::new();
    let out = all_gather(&topo, &chunks, 32, &mut ledger).unwrap();
    assert_eq!(out.len(), 8);
    assert!(out.iter().all(|o| o == &out[0]));
    assert_eq!(out[0].len(), 8 * 4096);
    assert_eq!(ledger.inter_bits_per_elem(), Some(4.015625));

    let zero_chunks: Vec<_> = (0..8)
        .map(|_| quantize(&[0.0; 16], Bits::Four, 8).unwrap())
        .collect();
    let out = all_gather(&topo, &zero_chunks, 32, &mut ByteLedger::new()).unwrap();
    assert!(out.iter().all(|o| o.iter().all(|&v| v == 0.0)));

    let single = ClusterTopology::new(1, 1).unwrap();
    let mut l = ByteLedger::new();
    let out = all_gather(&single, &chunks[..1], 32, &mut l).unwrap();
    assert_eq!(out[0], sdp4bit_core::quant::dequantize(&chunks[0]).unwrap());
    assert_eq!(l, ByteLedger::new());
}

#[test]
fn raw_gather_and_padding() {
    let topo = ClusterTopology::new(4, 2).unwrap();
    let shards: Vec<FlatTensor> = (0..4)
        .map(|r| FlatTensor::new(vec![r as f32; 3]).unwrap())
        .collect();
    let mut ledger = ByteLedger::new();
    let out = all_gather_raw(&topo, &shards, 16, &mut ledger).unwrap();
    assert_eq!(
        out[3].as_slice(),
        &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0]
    );
    assert_eq!(ledger.intra_bits_per_elem(), Some(16.0));

    let x = FlatTensor::new(vec![1.0; 10]).unwrap();
    let padded = pad_to(&x, 8);
    assert_eq!(padded.len(), 16);
    assert_eq!(unshard(&[padded], 10), x);
}
