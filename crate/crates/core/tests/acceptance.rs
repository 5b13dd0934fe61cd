//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use sparse_sync::codec::{decode, encode, HashUniverse, IndexWidth, WireFormat};
use sparse_sync::costmodel::{
    analytic_profile, bp_coefficient, hc_coefficient, profile_sparsity, select_scheme, t_allreduce_dense,
    t_bp, t_hc, CostInputs, SchemeChoice,
};
use sparse_sync::hashing::{
    bench_hashing, hierarchical_hash, imbalance_pull, imbalance_push, load_balance_bound, mix64,
    BenchGrid, HashConfig, HashFamily,
};
use sparse_sync::schemes::{run_agsparse, run_scheme, Communication, SchemeConfig, SyncOptions, SCHEME_NAMES};
use sparse_sync::simnet::SimNet;
use sparse_sync::tensor::{aggregate, SparseTensor};
use sparse_sync::workload::{generate, OverlapModel, WorkloadSpec};
use sparse_sync::Error;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Dense f64 sum of all inputs restricted to covered positions.
fn dense_oracle(inputs: &[SparseTensor]) -> (Vec<u64>, Vec<f64>) {
    let m = inputs[0].universe() as usize;
    let mut sum = vec![0f64; m];
    let mut covered = vec![false; m];
    for t in inputs {
        for (i, v) in t.iter() {
            sum[i as usize] += v as f64;
            covered[i as usize] = true;
        }
    }
    let idx: Vec<u64> = (0..m as u64).filter(|&i| covered[i as usize]).collect();
    let vals = idx.iter().map(|&i| sum[i as usize]).collect();
    (idx, vals)
}

fn matches_oracle(result: &SparseTensor, oracle: &(Vec<u64>, Vec<f64>)) -> bool {
    let r = result.sorted();
    r.indices() == oracle.0.as_slice()
        && r.values().iter().zip(&oracle.1).all(|(&a, &b)| a as f64 == b)
}

fn criterion_1() -> Outcome {
    let mut variants: Vec<(String, SchemeConfig)> = SCHEME_NAMES
        .iter()
        .map(|&name| (name.to_string(), SchemeConfig::preset(name).unwrap()))
        .collect();
    for (label, comm) in [("agsparse-p2p", Communication::PointToPoint), ("agsparse-rd", Communication::Hierarchy)] {
        let mut cfg = SchemeConfig::preset("agsparse").unwrap();
        cfg.communication = comm;
        variants.push((label.to_string(), cfg));
    }
    let mut grid = Vec::new();
    for n in [2usize, 4, 8, 16] {
        for m in [10_000u64, 1_000_000] {
            for d in [0.001, 0.01, 0.1] {
                for omega in [0.0, 0.5, 1.0] {
                    for seed in 0..20u64 {
                        grid.push((n, m, d, omega, seed));
                    }
                }
            }
        }
    }
    // Each case yields Some(scheme runs) or None when the workload is infeasible.
    let results: Vec<Result<Option<usize>, String>> = grid
        .par_iter()
        .map(|&(n, m, d, omega, seed)| {
            let spec = WorkloadSpec {
                m,
                n,
                d,
                omega,
                hot_fraction: 0.125,
                hot_mass: 0.6,
                seed: mix64(seed ^ ((n as u64) << 32) ^ m ^ (d * 1e4) as u64 ^ ((omega * 10.0) as u64 * 7)),
                overlap: OverlapModel::SharedCore,
            };
            let inputs = match generate(&spec) {
                Ok(t) => t,
                Err(Error::InfeasibleSpec(_)) => return Ok(None),
                Err(e) => return Err(format!("generate {spec:?}: {e}")),
            };
            let oracle = dense_oracle(&inputs);
            let opts = SyncOptions {
                hash_seed: spec.seed,
                ..SyncOptions::default()
            };
            for (name, cfg) in &variants {
                let case = format!("{name} n={n} M={m} d={d} omega={omega} seed={seed}");
                let out = run_scheme(cfg, &inputs, SimNet::new(n, 1.0).unwrap(), &opts)
                    .map_err(|e| format!("{case}: {e}"))?;
                ensure(out.results.iter().all(|r| matches_oracle(r, &oracle)), || {
                    format!("{case}: result differs from oracle")
                })?;
            }
            Ok(Some(variants.len()))
        })
        .collect();
    let (mut runs, mut cases, mut skipped) = (0usize, 0usize, 0usize);
    for r in results {
        match r? {
            Some(k) => {
                runs += k;
                cases += 1;
            }
            None => skipped += 1,
        }
    }
    Ok(format!(
        "{runs} scheme runs over {cases} workloads all equal the dense oracle ({skipped} infeasible specs skipped)"
    ))
}

fn random_tensor(rng: &mut ChaCha8Rng, m: u64, nnz: usize) -> SparseTensor {
    let idx: Vec<u64> = rand::seq::index::sample(rng, m as usize, nnz)
        .into_iter()
        .map(|i| i as u64)
        .collect();
    let vals = (0..nnz).map(|_| rng.gen_range(1..=16) as f32).collect();
    SparseTensor::new(m, idx, vals).unwrap()
}

fn criterion_2() -> Outcome {
    let (m, n, k) = (1_000_000u64, 16usize, 3usize);
    let nnz = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..1000 {
        let t = random_tensor(&mut rng, m, nnz);
        let family = HashFamily::derived(rng.gen(), rng.gen(), n, k).unwrap();
        let expected: BTreeSet<u64> = t.indices().iter().copied().collect();
        let mut first = None;
        for lanes in [1, 4, 8] {
            let config = HashConfig::sized(nnz, n, 2.0, 0.1, lanes);
            let parts = hierarchical_hash(&t, &family, config).map_err(|e| format!("trial {trial}: {e}"))?;
            let union: BTreeSet<u64> = parts.union_indices().into_iter().collect();
            ensure(union == expected && parts.total() == nnz, || {
                format!("trial {trial} lanes {lanes}: index union differs from input")
            })?;
            let rebuilt = aggregate(parts.parts()).unwrap();
            ensure(rebuilt == t, || format!("trial {trial} lanes {lanes}: values changed"))?;
            match &first {
                None => first = Some(parts),
                Some(p) => ensure(p == &parts, || format!("trial {trial}: lanes {lanes} changed the partition"))?,
            }
        }
    }
    Ok("1000 trials x lanes {1,4,8}: no index lost, partitions lane-invariant".into())
}

fn criterion_3() -> Outcome {
    let (m, n, d) = (10_000_000u64, 16usize, 0.01);
    let (mut worst_push, mut worst_pull) = (0f64, 0f64);
    let (mut within_push, mut within_pull) = (0, 0);
    for trial in 0..100u64 {
        let spec = WorkloadSpec {
            m,
            n,
            d,
            omega: 0.5,
            hot_fraction: 0.125,
            hot_mass: 0.6,
            seed: 3_000 + trial,
            overlap: OverlapModel::SharedCore,
        };
        let inputs = generate(&spec).map_err(|e| e.to_string())?;
        let opts = SyncOptions {
            hash_seed: mix64(trial),
            ..SyncOptions::default()
        };
        let families = opts.families(n).unwrap();
        let parts: Vec<_> = inputs
            .iter()
            .zip(&families)
            .map(|(t, f)| hierarchical_hash(t, f, HashConfig::default_for(t.nnz(), n)))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let servers: Vec<SparseTensor> = (0..n)
            .map(|j| aggregate(parts.iter().map(|p| &p.parts()[j])).unwrap())
            .collect();
        let push = imbalance_push(&parts).unwrap();
        let pull = imbalance_pull(&servers).unwrap();
        let union: usize = servers.iter().map(|s| s.nnz()).sum();
        worst_push = worst_push.max(push);
        worst_pull = worst_pull.max(pull);
        ensure(push < 1.1 && pull < 1.1, || {
            format!("trial {trial}: push {push:.4}, pull {pull:.4} reach 1.1")
        })?;
        if push <= load_balance_bound(n, spec.nnz() as f64, 3.0) {
            within_push += 1;
        }
        if pull <= load_balance_bound(n, union as f64, 3.0) {
            within_pull += 1;
        }
    }
    ensure(within_push >= 95 && within_pull >= 95, || {
        format!("within 1 + 3 sqrt(n ln n / balls): push {within_push}/100, pull {within_pull}/100")
    })?;
    Ok(format!(
        "max push {worst_push:.4}, max pull {worst_pull:.4} (< 1.1 in 100/100); within bound push {within_push}/100, pull {within_pull}/100"
    ))
}

fn criterion_4() -> Outcome {
    let mut checked = 0;
    for m in [15u64, 1_000, 1_000_000] {
        for n in 2..=64usize {
            let family = HashFamily::derived(mix64(n as u64 ^ m), 1, n, 1).unwrap();
            let universes = HashUniverse::build_all(m, &family);
            let total: u64 = universes.iter().map(|u| u.len() as u64).sum();
            ensure(total == m, || format!("n={n} M={m}: universes hold {total} bits"))?;
            // Independent membership check: each index sits only in its own server's universe.
            let mut owner = vec![usize::MAX; m as usize];
            for u in universes.iter() {
                for &i in u.indices() {
                    ensure(owner[i as usize] == usize::MAX, || format!("index {i} in two universes"))?;
                    owner[i as usize] = u.server();
                }
            }
            ensure(
                (0..m).all(|i| owner[i as usize] == family.partition_of(i)),
                || format!("n={n} M={m}: universe disagrees with h0"),
            )?;
            checked += 1;
        }
    }
    // Three servers over 15 gradients; server 0's universe holds 5 and 7 second and third.
    let universe = HashUniverse::from_sorted(0, vec![1, 5, 7, 12, 14]).unwrap();
    let t = SparseTensor::new(15, vec![5, 7], vec![0.5, -2.0]).unwrap();
    let msg = encode(&t, WireFormat::HashBitmap, Some(&universe)).map_err(|e| e.to_string())?;
    let word = u64::from_le_bytes(msg.payload[..8].try_into().unwrap());
    let ones: Vec<u32> = (0..64).filter(|b| word >> b & 1 == 1).map(|b| b + 1).collect();
    ensure(ones == [2, 3], || format!("bit positions {ones:?}, expected [2, 3]"))?;
    let back = decode(&msg, Some(&universe)).map_err(|e| e.to_string())?;
    ensure(back.indices() == [5, 7], || format!("decoded {:?}", back.indices()))?;
    Ok(format!("sum |I_i| == M for {checked} (n, M) pairs; worked example sets bits 2,3 and decodes 5,7"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..1000 {
        let m = rng.gen_range(1..=200_000u64);
        let nnz = rng.gen_range(0..=(m as usize).min(2_000));
        let idx: Vec<u64> = rand::seq::index::sample(&mut rng, m as usize, nnz)
            .into_iter()
            .map(|i| i as u64)
            .collect();
        let vals: Vec<f32> = (0..nnz)
            .map(|_| {
                let v: f32 = rng.gen_range(0.001..1000.0);
                if rng.gen() { v } else { -v }
            })
            .collect();
        let reference: BTreeMap<u64, u32> = idx.iter().zip(&vals).map(|(&i, v)| (i, v.to_bits())).collect();
        let t = SparseTensor::new(m, idx, vals).unwrap();
        let same = |r: &SparseTensor| {
            r.iter().map(|(i, v)| (i, v.to_bits())).collect::<BTreeMap<_, _>>() == reference && r.nnz() == reference.len()
        };
        let width = if m <= u32::MAX as u64 && rng.gen() { IndexWidth::U32 } else { IndexWidth::U64 };
        let block = [1usize, 7, 64, 256][rng.gen_range(0..4)];
        for fmt in [WireFormat::Coo(width), WireFormat::Bitmap, WireFormat::TensorBlock(block)] {
            let msg = encode(&t, fmt, None).map_err(|e| format!("trial {trial} {fmt:?}: {e}"))?;
            let back = decode(&msg, None).map_err(|e| format!("trial {trial} {fmt:?}: {e}"))?;
            ensure(same(&back) && back == t, || format!("trial {trial}: {fmt:?} round trip differs"))?;
        }
        // Hash bitmap carries one server's share; all shares together rebuild the tensor.
        let n = rng.gen_range(1..=8);
        let family = HashFamily::derived(rng.gen(), 0, n, 1).unwrap();
        let universes = HashUniverse::build_all(m, &family);
        let mut rebuilt: BTreeMap<u64, u32> = BTreeMap::new();
        for u in universes.iter() {
            let own: Vec<(u64, f32)> = t.iter().filter(|&(i, _)| family.partition_of(i) == u.server()).collect();
            let share = SparseTensor::new(m, own.iter().map(|p| p.0).collect(), own.iter().map(|p| p.1).collect()).unwrap();
            let msg = encode(&share, WireFormat::HashBitmap, Some(u)).map_err(|e| e.to_string())?;
            ensure(msg.index_bits == u.len() as u64, || "hash bitmap length".into())?;
            let back = decode(&msg, Some(u)).map_err(|e| e.to_string())?;
            ensure(back == share, || format!("trial {trial}: hash bitmap share differs"))?;
            rebuilt.extend(back.iter().map(|(i, v)| (i, v.to_bits())));
        }
        ensure(rebuilt == reference, || format!("trial {trial}: hash bitmap shares do not rebuild input"))?;
    }
    Ok("1000 random tensors round-trip exactly through COO, bitmap, tensor block and hash bitmap".into())
}

/// Densification under independent overlap: each index of one tensor
/// appears in another with probability `q`.
fn independent_gamma(q: f64, k: u64) -> f64 {
    if q == 0.0 {
        k as f64
    } else {
        (1.0 - (1.0 - q).powi(k as i32)) / q
    }
}

fn criterion_6() -> Outcome {
    let n = 16;
    let full = analytic_profile(0.01, n, |_| 1.0);
    let none = analytic_profile(0.01, n, |k| k as f64);
    let hc_full = hc_coefficient(&full, n).unwrap() / 2.0;
    let bp_full = bp_coefficient(n, 1.0) / 2.0;
    let hc_none = hc_coefficient(&none, n).unwrap() / 2.0;
    let bp_none = bp_coefficient(n, 16.0) / 2.0;
    // Exact rationals: 4, 30/16, 15, 255/16.
    ensure(hc_full == 4.0 && bp_full == 30.0 / 16.0, || format!("full overlap: {hc_full} vs {bp_full}"))?;
    ensure(hc_none == 15.0 && bp_none == 255.0 / 16.0, || format!("no overlap: {hc_none} vs {bp_none}"))?;
    ensure(select_scheme(&full, n).unwrap() == SchemeChoice::BalancedParallelism, || "full overlap picks HC".into())?;
    ensure(select_scheme(&none, n).unwrap() == SchemeChoice::HierarchicalCentralization, || "no overlap picks BP".into())?;

    // Analytic sweep: the choice switches once, from HC to BP, below q = 0.05.
    let mut switch = None;
    for step in 0..=1000 {
        let q = step as f64 / 1000.0;
        let choice = select_scheme(&analytic_profile(0.01, n, |k| independent_gamma(q, k)), n).unwrap();
        match (choice, switch) {
            (SchemeChoice::BalancedParallelism, None) => switch = Some(q),
            (SchemeChoice::HierarchicalCentralization, Some(s)) => {
                return Err(format!("selector returns to HC at q={q} after switching at {s}"))
            }
            _ => {}
        }
    }
    let switch = switch.ok_or("never selects BP")?;
    ensure(switch > 0.0 && switch <= 0.05, || format!("switch point {switch}"))?;

    // Measured profiles of generated workloads whose pairs overlap by q on average.
    let mut measured = Vec::new();
    for q in [0.05, 0.1, 0.3, 0.6, 1.0] {
        let spec = WorkloadSpec {
            m: 1_000_000,
            n,
            d: 0.01,
            omega: q,
            seed: 6,
            overlap: OverlapModel::RandomPool,
            ..WorkloadSpec::default()
        };
        let profile = profile_sparsity(&[generate(&spec).unwrap()]).unwrap();
        let choice = select_scheme(&profile, n).unwrap();
        ensure(choice == SchemeChoice::BalancedParallelism, || format!("overlap {q}: {choice:?}"))?;
        measured.push(format!("{q}"));
    }
    let disjoint = WorkloadSpec {
        m: 1_000_000,
        n,
        d: 0.01,
        omega: 0.0,
        seed: 6,
        ..WorkloadSpec::default()
    };
    let choice = select_scheme(&profile_sparsity(&[generate(&disjoint).unwrap()]).unwrap(), n).unwrap();
    ensure(choice == SchemeChoice::HierarchicalCentralization, || format!("disjoint workload: {choice:?}"))?;

    Ok(format!(
        "coefficients 4 vs 1.875 and 15 vs 15.9375; HC only below overlap {switch}; BP on measured overlaps {}",
        measured.join(", ")
    ))
}

fn criterion_7() -> Outcome {
    let b_bits = 32_000.0;
    let mut worst = 0f64;
    for n in [4usize, 8, 16] {
        for omega in [0.2, 0.5, 0.9] {
            let spec = WorkloadSpec {
                m: 1_000_000,
                n,
                d: 0.01,
                omega,
                hot_fraction: 0.125,
                hot_mass: 0.6,
                seed: 70 + n as u64,
                overlap: OverlapModel::SharedCore,
            };
            let inputs = generate(&spec).unwrap();
            let profile = profile_sparsity(std::slice::from_ref(&inputs)).unwrap();
            let c = CostInputs::from_profile(n, spec.m as f64, b_bits / 32.0, profile);
            let opts = SyncOptions::default();
            for (name, model) in [("balanced-parallelism", t_bp(&c)), ("sparcml", t_hc(&c))] {
                let model = model.unwrap();
                let cfg = SchemeConfig::preset(name).unwrap();
                let out = run_scheme(&cfg, &inputs, SimNet::new(n, b_bits).unwrap(), &opts).unwrap();
                // Closed forms count an index word per value word.
                let simulated = 2.0 * out.traffic.value_time();
                let rel = (simulated - model).abs() / model;
                worst = worst.max(rel);
                ensure(rel <= 0.10, || {
                    format!("{name} n={n} omega={omega}: simulated {simulated:.3} vs model {model:.3}")
                })?;
            }
        }
    }
    Ok(format!("value-payload times within {:.2}% of the closed forms", worst * 100.0))
}

fn criterion_8() -> Outcome {
    let preset = |n| WorkloadSpec {
        m: 1_000_000,
        n,
        d: 0.05,
        omega: 0.5,
        hot_fraction: 0.125,
        hot_mass: 0.6,
        seed: 8,
        overlap: OverlapModel::SharedCore,
    };
    let b_bits = 32_000.0;
    let inputs = generate(&preset(16)).unwrap();
    let opts = SyncOptions::default();
    let time = |name: &str, inputs: &[SparseTensor]| {
        let cfg = SchemeConfig::preset(name).unwrap();
        let n = inputs.len();
        run_scheme(&cfg, inputs, SimNet::new(n, b_bits).unwrap(), &opts).unwrap().traffic.simulated_time
    };
    let bp = time("balanced-parallelism", &inputs);
    let omni = time("omnireduce", &inputs);
    let ag = time("agsparse", &inputs);
    ensure(bp < omni && omni < ag, || format!("BP {bp:.1}, OmniReduce-like {omni:.1}, AGsparse {ag:.1}"))?;

    let mut normalized = Vec::new();
    for n in [4usize, 8, 16, 32] {
        let inputs = generate(&preset(n)).unwrap();
        let out = run_agsparse(&inputs, SimNet::new(n, b_bits).unwrap(), Communication::Ring, WireFormat::COO).unwrap();
        let c = CostInputs::from_profile(n, 1e6, b_bits / 32.0, analytic_profile(0.05, n, |_| 1.0));
        normalized.push(out.traffic.simulated_time / t_allreduce_dense(&c));
    }
    ensure(normalized.windows(2).all(|w| w[0] < w[1]), || format!("AGsparse / AllReduce {normalized:?}"))?;
    Ok(format!(
        "BP {bp:.1} < OmniReduce-like {omni:.1} < AGsparse {ag:.1}; AGsparse/AllReduce over n=4..32: {}",
        normalized.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
    ))
}

fn criterion_9() -> Outcome {
    let spec = WorkloadSpec::default();
    let tensors = generate(&spec).unwrap();
    let grid = BenchGrid {
        partitions: spec.n,
        ks: vec![1, 2, 3],
        r1_multipliers: vec![1.0, 2.0],
        ..BenchGrid::default()
    };
    let cells = bench_hashing(&tensors, &grid).unwrap();
    ensure(cells.iter().all(|c| c.lost == 0 && c.overflow.is_none()), || "loss or overflow in a cell".into())?;
    let frac = |mult: f64, k: usize| {
        cells.iter().find(|c| c.r1_multiplier == mult && c.k == k).unwrap().serial_fraction
    };
    for mult in [1.0, 2.0] {
        ensure(frac(mult, 1) > frac(mult, 2) && frac(mult, 2) > frac(mult, 3), || {
            format!("r1={mult}|I|: k=1..3 fractions {} {} {}", frac(mult, 1), frac(mult, 2), frac(mult, 3))
        })?;
    }
    for k in 1..=3 {
        ensure(frac(2.0, k) < frac(1.0, k), || format!("k={k}: r1 doubling does not help"))?;
    }
    Ok(format!(
        "serial fraction r1=|I|: {:.4} > {:.4} > {:.4}; r1=2|I|: {:.4} > {:.4} > {:.4}; zero loss",
        frac(1.0, 1),
        frac(1.0, 2),
        frac(1.0, 3),
        frac(2.0, 1),
        frac(2.0, 2),
        frac(2.0, 3)
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("oracle equivalence", criterion_1),
        ("no information loss", criterion_2),
        ("load balance", criterion_3),
        ("hash bitmap size", criterion_4),
        ("codec round trips", criterion_5),
        ("cost model extremes", criterion_6),
        ("simulator vs cost model", criterion_7),
        ("scheme orderings", criterion_8),
        ("hash bench trends", criterion_9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.iter().any(|f| *f == id || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
