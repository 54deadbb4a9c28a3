//! One line per acceptance criterion. Runs without the libtest harness so
//! the report is always printed; exits non-zero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{bits, logistic_grad, logistic_loss, logistic_workload, on_cluster, random_vectors, sequential_sum};
use nalgebra::DMatrix;
use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relaxcomm::algorithms::{Allreduce, AlgorithmSpec};
use relaxcomm::codec::{Codec, Residual, Rounding};
use relaxcomm::collectives::{partition_range, Communicator, Mode, Topology, TopologyKind};
use relaxcomm::engine::{Engine, EngineOptions, EventKind, LayerCost, Pass, Schedule, TimelineEvent};
use relaxcomm::harness::{generate, partition, replica_spread, BatchSchedule, DataKind, Dataset, Model, ModelSpec};
use relaxcomm::runner::{run_experiment, sweep, Axis, ExperimentConfig};
use relaxcomm::transport::{Backend, ClusterLayout, NetworkProfile, SimCluster, Transport};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: f64, detail: String) -> Outcome {
    let secs = elapsed.as_secs_f64();
    check(secs < limit, format!("{detail}; {secs:.2} s of {limit} s"))
}

// 1. Every rank of c_fp_s holds the rank-ordered sequential sum, bitwise.
fn primitive_oracle() -> Outcome {
    let start = Instant::now();
    let mut cases = 0;
    for n in [1usize, 2, 3, 8] {
        for len in [1usize, 7, 100_000] {
            for hierarchical in [false, true] {
                let inputs = random_vectors(n, len, (n * 1000 + len) as u64);
                let want = bits(&sequential_sum(&inputs));
                let nodes = if hierarchical { n.min(2) } else { 1 };
                let out = on_cluster(n, nodes, |c| {
                    let c = c.with_hierarchical(hierarchical);
                    let mut x = inputs[c.rank()].clone();
                    c.c_fp_s(0, &mut x)?;
                    Ok(x)
                });
                if let Some(rank) = out.iter().position(|x| bits(x) != want) {
                    return Err(format!("n={n} len={len} hierarchical={hierarchical} rank {rank} differs"));
                }
                cases += 1;
            }
        }
    }
    within(start.elapsed(), 5.0, format!("{cases} cases bitwise equal"))
}

// 2. Identity codec: compressed primitives equal their full-precision forms.
fn identity_collapse() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..100 {
        let n = rng.random_range(1..=8usize);
        let nodes = rng.random_range(1..=n);
        let len = rng.random_range(1..200usize);
        let hierarchical = rng.random_bool(0.5);
        let round = rng.random_range(0..1000u64);
        let kind = match rng.random_range(0..3) {
            0 => TopologyKind::Ring,
            1 => TopologyKind::Full,
            _ => TopologyKind::Random { seed: rng.random() },
        };
        let topo = Topology::new(kind, n).unwrap();
        let inputs = random_vectors(n, len, rng.random());
        let out = on_cluster(n, nodes, |c| {
            let c = c.with_hierarchical(hierarchical);
            let codec = Codec::identity();
            let mut q = codec.quantizer(c.rank());
            let mut state = c.error_state(len);
            let (mut full, mut low) = (inputs[c.rank()].clone(), inputs[c.rank()].clone());
            c.c_fp_s(0, &mut full)?;
            c.c_lp_s(1, &mut low, &mut q, Some(&mut state))?;
            let (mut dfull, mut dlow) = (inputs[c.rank()].clone(), inputs[c.rank()].clone());
            c.d_fp_s(2, &mut dfull, &topo, round, Mode::Average)?;
            c.d_lp_s(3, &mut dlow, &topo, round, &mut q, Mode::Average)?;
            let clean = state.delta().is_zero() && state.epsilon().is_zero();
            Ok(bits(&full) == bits(&low) && bits(&dfull) == bits(&dlow) && clean)
        });
        if !out.iter().all(|&ok| ok) {
            return Err(format!("trial {trial}: n={n} nodes={nodes} hierarchical={hierarchical} {kind:?}"));
        }
    }
    Ok("100 trials bitwise equal, flat and hierarchical".into())
}

fn half_ulp(v: f32) -> f64 {
    let a = v.abs();
    (f32::from_bits(a.to_bits() + 1) as f64 - a as f64) / 2.0
}

fn roundtrip(q: &mut relaxcomm::codec::Quantizer, x: &[f32]) -> Vec<f32> {
    let payload = q.encode(x).unwrap();
    q.codec().decode(&payload, x.len()).unwrap()
}

// 3. Codec error bound, unbiased stochastic rounding, onebit scale.
fn codec_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut nearest = Codec::uniform8(Rounding::Nearest).quantizer(0);
    let mut stochastic = Codec::uniform8(Rounding::Stochastic { seed: 3 }).quantizer(0);
    let (mut worst, mut worst_nearest) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let len = rng.random_range(1..64usize);
        let scale = 10f32.powi(rng.random_range(-3..4));
        let x: Vec<f32> = (0..len).map(|_| rng.random_range(-scale..scale)).collect();
        let (lo, hi) = x.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let bound = (hi as f64 - lo as f64) / 255.0;
        // Nearest rounding is off by at most half a level, plus half an ulp
        // because the exact level value is rarely an f32.
        for (q, half, worst) in [(&mut nearest, true, &mut worst_nearest), (&mut stochastic, false, &mut worst)] {
            for (a, b) in x.iter().zip(roundtrip(q, &x)) {
                let err = (*a as f64 - b as f64).abs();
                let limit = if half { bound / 2.0 + half_ulp(b) } else { bound };
                if err > limit {
                    return Err(format!("{:?} error {err} above {limit}", q.codec().rounding));
                }
                if bound > 0.0 {
                    *worst = worst.max(err / bound);
                }
            }
        }
    }

    let draws = 100_000;
    let x = [0.0f32, 0.123_456, 0.5, 0.777_7, 1.0];
    let mut worst_z = 0.0f64;
    for (k, &v) in x.iter().enumerate().take(4).skip(1) {
        let errors: Vec<f64> = (0..draws).map(|_| roundtrip(&mut stochastic, &x)[k] as f64 - v as f64).collect();
        let mean = errors.iter().sum::<f64>() / draws as f64;
        let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let z = mean.abs() / (var / draws as f64).sqrt();
        if z > 3.0 {
            return Err(format!("stochastic rounding of {v} biased: {z:.2} standard errors"));
        }
        worst_z = worst_z.max(z);
    }

    let mut onebit = Codec::onebit().quantizer(0);
    let mut worst_rel = 0.0f64;
    for _ in 0..1000 {
        let len = rng.random_range(1..300usize);
        let x: Vec<f32> = (0..len).map(|_| rng.random_range(-5.0f32..5.0)).collect();
        let mean = x.iter().map(|v| v.abs() as f64).sum::<f64>() / len as f64;
        let decoded = roundtrip(&mut onebit, &x);
        let scale = decoded[0].abs() as f64;
        let rel = (scale - mean).abs() / mean;
        if rel > 1e-7 || decoded.iter().any(|d| d.abs() as f64 != scale) {
            return Err(format!("onebit scale {scale} vs mean |x| {mean}"));
        }
        worst_rel = worst_rel.max(rel);
    }
    Ok(format!(
        "max error {worst_nearest:.3} (nearest) and {worst:.3} (stochastic) of the level span, bias {worst_z:.2} SE, onebit scale rel err {worst_rel:.1e}"
    ))
}

/// Exact value of a finite f32 as a multiple of 2^-149.
fn exact(v: f32) -> BigInt {
    let b = v.to_bits();
    let exp = ((b >> 23) & 0xff) as usize;
    let frac = (b & 0x7f_ffff) as i64;
    let (mant, shift) = if exp == 0 { (frac, 0) } else { (frac | 0x80_0000, exp - 1) };
    let m = BigInt::from(if b >> 31 == 1 { -mant } else { mant });
    m << shift
}

fn residual_holds(input: &[f32], sent: &[f32], r: &Residual) -> bool {
    (0..input.len()).all(|k| exact(sent[k]) + exact(r.hi()[k]) + exact(r.lo()[k]) == exact(input[k]))
}

// 4. After every compressed round: decode(sent) + delta' == x + delta,
//    and the same at partition owners, exactly.
fn ec_identity() -> Outcome {
    let (n, len, steps) = (4usize, 37usize, 200u64);
    for codec in [Codec::onebit(), Codec::uniform8(Rounding::Stochastic { seed: 4 })] {
        let per_step = on_cluster(n, 1, |c| {
            let mut rng = ChaCha8Rng::seed_from_u64(40 + c.rank() as u64);
            let mut q = codec.quantizer(c.rank());
            let mut state = c.error_state(len);
            let mut log = Vec::new();
            for step in 0..steps {
                let x: Vec<f32> = (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                let (d_old, e_old) = (state.delta().clone(), state.epsilon().clone());
                let mut y = x.clone();
                let trace = c.c_lp_s_traced(step as u32, &mut y, &[len], &mut q, Some(&mut state))?;
                let worker = trace.input == d_old.compensated_input(&x)
                    && residual_holds(&trace.input, &trace.sent, state.delta());
                let owner = residual_holds(&trace.owner_input, &trace.owner_sent, state.epsilon());
                log.push((worker && owner, trace, e_old, y));
            }
            Ok(log)
        });
        for step in 0..steps as usize {
            for k in 0..n {
                let (ok, trace, e_old, _) = &per_step[k][step];
                if !ok {
                    return Err(format!("{:?} step {step} rank {k}: residual identity broken", codec.kind));
                }
                // The owner compresses the rank-ordered sum of what workers sent.
                let r = partition_range(len, n, k);
                let chunks: Vec<Vec<f32>> = per_step.iter().map(|w| w[step].1.sent[r.clone()].to_vec()).collect();
                if bits(&trace.owner_input) != bits(&e_old.compensated_input(&sequential_sum(&chunks))) {
                    return Err(format!("{:?} step {step}: owner {k} compressed the wrong sum", codec.kind));
                }
                for w in &per_step {
                    if bits(&w[step].3[r.clone()]) != bits(&trace.owner_sent) {
                        return Err(format!("{:?} step {step}: partition {k} not broadcast", codec.kind));
                    }
                }
            }
        }
    }
    Ok(format!("{steps} rounds x {n} workers exact for onebit and stochastic uniform8"))
}

/// Full-batch gradient descent in f64 on `1/2 |x - a|^2` averaged over rows.
fn quadratic_oracle(data: &Dataset, lr: f64, steps: usize) -> Vec<Vec<f64>> {
    let d = data.dim();
    let mut mean = vec![0.0f64; d];
    for i in 0..data.len() {
        for (m, &a) in mean.iter_mut().zip(data.row(i)) {
            *m += a as f64 / data.len() as f64;
        }
    }
    let mut x = vec![0.0f64; d];
    (0..steps)
        .map(|_| {
            for (xj, m) in x.iter_mut().zip(&mean) {
                *xj -= lr * (*xj - m);
            }
            x.clone()
        })
        .collect()
}

fn logistic_oracle(data: &Dataset, lr: f64, steps: usize) -> Vec<Vec<f64>> {
    let d = data.dim();
    let rows: Vec<usize> = (0..data.len()).collect();
    let (mut w, mut b) = (vec![0.0f64; d], 0.0);
    (0..steps)
        .map(|_| {
            let (gw, gb) = logistic_grad(&w, b, data.features(), data.labels(), d, &rows);
            for (wj, g) in w.iter_mut().zip(gw) {
                *wj -= lr * g;
            }
            b -= lr * gb;
            let mut p = w.clone();
            p.push(b);
            p
        })
        .collect()
}

// 5. Four-worker allreduce tracks single-worker full-batch descent.
fn trajectory_equivalence() -> Outcome {
    let start = Instant::now();
    let (n, steps, lr) = (4usize, 100usize, 0.5f32);
    let mut worst = 0.0f64;
    for spec in [ModelSpec::Quadratic { d: 10, layers: Some(3) }, ModelSpec::Logistic { d: 10 }] {
        let kind = match spec {
            ModelSpec::Quadratic { .. } => DataKind::Quadratic,
            _ => DataKind::Logistic { noise: 0.05 },
        };
        let data = generate(kind, 200, 10, 5).unwrap();
        let oracle = match spec {
            ModelSpec::Quadratic { .. } => quadratic_oracle(&data, lr as f64, steps),
            _ => logistic_oracle(&data, lr as f64, steps),
        };
        let model = Model::new(spec).unwrap();
        let shards = partition(data.len(), n).unwrap();
        let runs = on_cluster(n, 2, |c| {
            let rows: Vec<usize> = shards[c.rank()].clone().collect();
            let mut e = Engine::new(c, model.init(0), Box::new(Allreduce::new(lr)))?;
            let mut traj = Vec::new();
            for _ in 0..steps {
                e.step(&|p: &[&[f32]]| model.gradient(p, &data, &rows))?;
                traj.push(e.flat_params());
            }
            Ok(traj)
        });
        for traj in &runs {
            for (got, want) in traj.iter().zip(&oracle) {
                let diff = got.iter().zip(want).map(|(&g, w)| (g as f64 - w).powi(2)).sum::<f64>().sqrt();
                let norm = want.iter().map(|w| w * w).sum::<f64>().sqrt();
                worst = worst.max(diff / norm);
            }
        }
    }
    if worst > 1e-5 {
        return Err(format!("relative distance {worst:.2e} above 1e-5"));
    }
    within(start.elapsed(), 10.0, format!("max relative distance {worst:.2e} over {steps} steps"))
}

/// Adam on the mean of all workers' batch gradients, in f64.
fn adam_oracle(cfg: &ExperimentConfig, data: &Dataset, lr: f64, b1: f64, b2: f64, eps: f64) -> f64 {
    let d = data.dim();
    let n = cfg.cluster.n_workers;
    let shards = partition(data.len(), n).unwrap();
    let schedules: Vec<BatchSchedule> = (0..n)
        .map(|w| BatchSchedule::new(&shards, w, cfg.data.batch_size, cfg.seed).unwrap())
        .collect();
    let total = schedules[0].steps_per_epoch() * cfg.epochs;
    let mut p = vec![0.0f64; d + 1];
    let (mut m, mut v) = (vec![0.0f64; d + 1], vec![0.0f64; d + 1]);
    for k in 0..total {
        let mut g = vec![0.0f64; d + 1];
        for s in &schedules {
            let (gw, gb) = logistic_grad(&p[..d], p[d], data.features(), data.labels(), d, &s.rows(k));
            for (a, b) in g.iter_mut().zip(gw.iter().chain([&gb])) {
                *a += b / n as f64;
            }
        }
        let t = (k + 1) as i32;
        for j in 0..=d {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let mh = m[j] / (1.0 - b1.powi(t));
            let vh = v[j] / (1.0 - b2.powi(t));
            p[j] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    logistic_loss(&p[..d], p[d], data.features(), data.labels(), d)
}

fn timed_run(cfg: &ExperimentConfig) -> Result<(f64, f64), String> {
    let start = Instant::now();
    let out = run_experiment(cfg).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    if secs >= 60.0 {
        return Err(format!("{} took {secs:.1} s", cfg.algorithm.name()));
    }
    Ok((out.summary.final_loss, secs))
}

const ONEBIT: &str = "name = \"onebit_adam\"\nlr = 0.01\nwarmup_steps = 50";

fn parity(hierarchical: bool) -> Result<String, String> {
    let with = |algo: &str| {
        let mut c = logistic_workload(algo);
        c.optimizations.hierarchical = hierarchical;
        c
    };
    let (base, _) = timed_run(&with("name = \"allreduce\"\nlr = 0.5"))?;
    let mut parts = vec![format!("allreduce {base:.4}")];
    let mut slowest = 0.0f64;
    let candidates: &[&str] = if hierarchical {
        &["name = \"qsgd8\"\nlr = 0.5"]
    } else {
        &["name = \"qsgd8\"\nlr = 0.5", "name = \"decen32\"\nlr = 0.5"]
    };
    for algo in candidates {
        let cfg = with(algo);
        let (loss, secs) = timed_run(&cfg)?;
        slowest = slowest.max(secs);
        let rel = (loss - base).abs() / base;
        if rel > 0.05 {
            return Err(format!("{} loss {loss:.4} is {:.1}% from allreduce {base:.4}", cfg.algorithm.name(), rel * 100.0));
        }
        parts.push(format!("{} {loss:.4}", cfg.algorithm.name()));
    }
    let cfg = with(ONEBIT);
    let data = relaxcomm::runner::dataset(&cfg).unwrap();
    let adam = adam_oracle(&cfg, &data, 0.01, 0.9, 0.999, 1e-8);
    let (loss, secs) = timed_run(&cfg)?;
    slowest = slowest.max(secs);
    let rel = (loss - adam).abs() / adam;
    if rel > 0.10 {
        return Err(format!("onebit_adam loss {loss:.4} is {:.1}% from Adam {adam:.4}", rel * 100.0));
    }
    parts.push(format!("onebit_adam {loss:.4} vs Adam {adam:.4}"));
    Ok(format!("{}; slowest run {slowest:.1} s", parts.join(", ")))
}

// 6. Compressed and decentralized training converge like allreduce.
fn convergence_parity() -> Outcome {
    parity(false)
}

fn ring_lambda2(n: usize) -> f64 {
    let w = DMatrix::<f64>::from_fn(n, n, |i, j| {
        let d = (i + n - j) % n;
        if d <= 1 || d == n - 1 {
            1.0 / 3.0
        } else {
            0.0
        }
    });
    let mut eig: Vec<f64> = w.symmetric_eigen().eigenvalues.iter().map(|v: &f64| v.abs()).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig[1]
}

fn deviation(replicas: &[Vec<f32>]) -> f64 {
    let n = replicas.len() as f64;
    (0..replicas[0].len())
        .map(|k| {
            let mean = replicas.iter().map(|r| r[k] as f64).sum::<f64>() / n;
            replicas.iter().map(|r| (r[k] as f64 - mean).powi(2)).sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

// 7. Ring gossip contracts at the rate of the mixing matrix.
fn gossip_contraction() -> Outcome {
    let n = 8;
    let inputs = random_vectors(n, 256, 7);
    let topo = Topology::ring(n);
    let history = on_cluster(n, 1, |c| {
        let mut x = inputs[c.rank()].clone();
        let mut h = vec![x.clone()];
        for r in 0..50 {
            c.d_fp_s(0, &mut x, &topo, r, Mode::Average)?;
            h.push(x.clone());
        }
        Ok(h)
    });
    let at = |r: usize| -> Vec<Vec<f32>> { history.iter().map(|h| h[r].clone()).collect() };
    let ratio = replica_spread(&at(50)) / replica_spread(&at(0));
    let factor = (deviation(&at(50)) / deviation(&at(10))).powf(1.0 / 40.0);
    let lambda = ring_lambda2(n);
    let gap = (factor - lambda).abs() / lambda;
    check(
        ratio < 1e-3 && gap <= 0.10,
        format!("spread ratio {ratio:.2e}, factor {factor:.4} vs lambda2 {lambda:.4} ({:.1}% off)", gap * 100.0),
    )
}

struct EngineTrace {
    params: Vec<Vec<f32>>,
    timeline: Vec<TimelineEvent>,
    schedule: Schedule,
    end: f64,
}

/// Trains a 4-layer quadratic and records everything per step.
fn engine_run(
    spec: AlgorithmSpec,
    options: EngineOptions,
    network: NetworkProfile,
    costs: &[LayerCost],
    n: usize,
    nodes: usize,
    steps: u64,
) -> Vec<EngineTrace> {
    let model = Model::new(ModelSpec::Quadratic { d: 400, layers: Some(4) }).unwrap();
    let data = generate(DataKind::Quadratic, 64, 400, 8).unwrap();
    let shards = partition(data.len(), n).unwrap();
    let cluster = SimCluster::new(ClusterLayout::contiguous(n, nodes).unwrap(), network).unwrap();
    cluster
        .run(|ep| {
            let batches = BatchSchedule::new(&shards, ep.rank(), Some(4), 3)?;
            let mut e = Engine::new(Communicator::new(ep), model.init(0), spec.build()?)?
                .with_costs(costs.to_vec())?
                .with_options(options)?;
            let mut params = Vec::new();
            for k in 0..steps {
                let rows = batches.rows(k);
                e.step(&|p: &[&[f32]]| model.gradient(p, &data, &rows))?;
                params.push(e.flat_params());
            }
            Ok(EngineTrace {
                params,
                schedule: e.schedule().clone(),
                end: e.now(),
                timeline: e.take_timeline(),
            })
        })
        .unwrap()
}

fn trigger_violations(trace: &EngineTrace) -> usize {
    let profile = Schedule::per_layer(4);
    let end_of = |step: u64, layer: usize| {
        trace
            .timeline
            .iter()
            .find(|e| e.event == EventKind::ComputeEnd && e.pass == Some(Pass::Backward) && e.step == step && e.layer == Some(layer))
            .map(|e| e.virtual_time)
            .unwrap_or(f64::INFINITY)
    };
    trace
        .timeline
        .iter()
        .filter(|e| e.event == EventKind::CommStart)
        .filter(|e| {
            let plan = if e.step == 0 { &profile } else { &trace.schedule };
            e.virtual_time < end_of(e.step, plan.buckets[e.bucket.unwrap()].trigger)
        })
        .count()
}

// 8. No bucket leaves before its trigger; overlap hides communication.
fn scheduling() -> Outcome {
    let allreduce = AlgorithmSpec::Allreduce { lr: 0.1 };
    let network = NetworkProfile::uniform(1e-3, 1e12);
    let per_layer = |overlap| EngineOptions {
        overlap,
        fusion: false,
        hierarchical: false,
        bucket_capacity: 1 << 20,
    };
    let steps = 6;
    // Communication alone, per iteration.
    let free = vec![LayerCost::default(); 4];
    let comm = engine_run(allreduce, per_layer(false), network.clone(), &free, 2, 1, steps)[0].end / steps as f64;
    // Compute twice as long as communication: backward 1, forward 1/2 per layer.
    let unit = 2.0 * comm / 6.0;
    let costs = vec![
        LayerCost {
            forward: unit / 2.0,
            backward: unit,
        };
        4
    ];
    let compute = 6.0 * unit;
    let serial = engine_run(allreduce, per_layer(false), network.clone(), &costs, 2, 1, steps);
    let overlapped = engine_run(allreduce, per_layer(true), network, &costs, 2, 1, steps);
    let violations: usize = serial.iter().chain(&overlapped).map(trigger_violations).sum();
    let buckets = overlapped[0].schedule.len();
    let s = serial[0].end / steps as f64;
    let o = overlapped[0].end / steps as f64;
    let comm_share = (s - compute) / compute;
    check(
        violations == 0 && buckets == 4 && (comm_share - 0.5).abs() < 1e-6 && o <= 0.8 * s,
        format!(
            "{violations} early starts, {buckets} buckets, comm {:.0}% of compute, overlapped/serial {:.3}",
            comm_share * 100.0,
            o / s
        ),
    )
}

fn algorithms() -> Vec<AlgorithmSpec> {
    [
        "name = \"allreduce\"\nlr = 0.1",
        "name = \"qsgd8\"\nlr = 0.1",
        "name = \"onebit_adam\"\nlr = 0.01\nwarmup_steps = 3",
        "name = \"decen32\"\nlr = 0.1",
        "name = \"decen8\"\nlr = 0.1",
    ]
    .iter()
    .map(|t| toml::from_str(t).unwrap())
    .collect()
}

// 9. All overlap/fusion/hierarchical toggles leave parameters untouched.
fn transparency() -> Outcome {
    let network = NetworkProfile::uniform(1e-4, 1e9);
    let costs = vec![
        LayerCost {
            forward: 1e-3,
            backward: 2e-3,
        };
        4
    ];
    let mut compared = 0;
    for spec in algorithms() {
        let options = |b: u8| EngineOptions {
            overlap: b & 4 != 0,
            fusion: b & 2 != 0,
            hierarchical: b & 1 != 0,
            bucket_capacity: 3200,
        };
        let reference = engine_run(spec, options(0), network.clone(), &costs, 4, 2, 8);
        for b in 1..8u8 {
            if b & 1 == 1 && spec.is_lossy() && !spec.is_decentralized() {
                continue;
            }
            let run = engine_run(spec, options(b), network.clone(), &costs, 4, 2, 8);
            for (want, got) in reference.iter().zip(&run) {
                for (k, (w, g)) in want.params.iter().zip(&got.params).enumerate() {
                    if bits(w) != bits(g) {
                        return Err(format!("{} toggles {b:03b} differ at step {k}", spec.name()));
                    }
                    compared += 1;
                }
            }
        }
    }
    let lossy = parity(true)?;
    Ok(format!("{compared} per-step parameter vectors bitwise equal; hierarchical lossy parity: {lossy}"))
}

fn trend_config(algorithm: &str) -> ExperimentConfig {
    common::config(&format!(
        r#"
seed = 1
epochs = 2
[algorithm]
{algorithm}
[model]
kind = "mlp"
d = 64
hidden = 128
[data]
n_samples = 2000
batch_size = 25
[cluster]
n_workers = 8
nodes = 1
"#
    ))
}

fn epoch_time(rows: &[relaxcomm::runner::SweepRow], algorithm: &str, pick: impl Fn(&relaxcomm::runner::SweepRow) -> bool) -> f64 {
    rows.iter()
        .find(|r| r.algorithm == algorithm && pick(r))
        .and_then(|r| r.epoch_virtual_time)
        .unwrap_or(f64::NAN)
}

fn timed_sweep(axes: &[Axis]) -> Result<(Vec<relaxcomm::runner::SweepRow>, f64), String> {
    let start = Instant::now();
    let rows = sweep(&[trend_config("name = \"allreduce\"\nlr = 0.3")], axes).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    if secs >= 60.0 {
        return Err(format!("sweep took {secs:.1} s"));
    }
    Ok((rows, secs))
}

// 10. Virtual-clock trends: compression wins on slow links, gossip on high
//     latency, async with a straggler.
fn trends() -> Outcome {
    let names = |v: &[&str]| Axis::Algorithm(v.iter().map(|s| s.to_string()).collect());
    let mut notes = Vec::new();

    let (rows, secs) = timed_sweep(&[Axis::Bandwidth(vec![1e8, 1e9]), names(&["allreduce", "qsgd8"])])?;
    for bw in [1e8, 1e9] {
        let (a, q) = (epoch_time(&rows, "allreduce", |r| r.bandwidth == bw), epoch_time(&rows, "qsgd8", |r| r.bandwidth == bw));
        if !(q < a) {
            return Err(format!("qsgd8 {q:.4} s not below allreduce {a:.4} s at {bw:e} B/s"));
        }
        notes.push(format!("bw {bw:e}: qsgd8/allreduce {:.2}", q / a));
    }
    notes.push(format!("{secs:.1} s"));

    let (rows, secs) = timed_sweep(&[Axis::Latency(vec![5e-3, 2e-2]), names(&["allreduce", "decen32"])])?;
    for lat in [5e-3, 2e-2] {
        let (a, d) = (epoch_time(&rows, "allreduce", |r| r.latency == lat), epoch_time(&rows, "decen32", |r| r.latency == lat));
        if !(d < a) {
            return Err(format!("decen32 {d:.4} s not below allreduce {a:.4} s at latency {lat}"));
        }
        notes.push(format!("latency {lat}: decen32/allreduce {:.2}", d / a));
    }
    notes.push(format!("{secs:.1} s"));

    let (rows, secs) = timed_sweep(&[Axis::Straggler(vec![2.0]), names(&["allreduce", "async"])])?;
    let (a, s) = (epoch_time(&rows, "allreduce", |_| true), epoch_time(&rows, "async", |_| true));
    if !(s < a) {
        return Err(format!("async {s:.4} s not below allreduce {a:.4} s with a 2x straggler"));
    }
    notes.push(format!("2x straggler: async/allreduce {:.2}; {secs:.1} s", s / a));
    Ok(notes.join(", "))
}

// 11. Simulated and TCP backends give the same parameters.
fn transport_parity() -> Outcome {
    let mut done = Vec::new();
    for algo in ["name = \"allreduce\"\nlr = 0.3", "name = \"qsgd8\"\nlr = 0.3", "name = \"decen8\"\nlr = 0.3", ONEBIT] {
        let mut sim = trend_config(algo);
        sim.model = ModelSpec::Logistic { d: 20 };
        sim.cluster.n_workers = 4;
        sim.cluster.nodes = 2;
        sim.optimizations.hierarchical = !sim.algorithm.is_lossy();
        let mut tcp = sim.clone();
        tcp.cluster.backend = Backend::Tcp;
        let a = run_experiment(&sim).map_err(|e| e.to_string())?;
        let b = run_experiment(&tcp).map_err(|e| e.to_string())?;
        let same = a.final_params.iter().zip(&b.final_params).all(|(x, y)| bits(x) == bits(y));
        if !same {
            return Err(format!("{} differs between sim and tcp", sim.algorithm.name()));
        }
        done.push(sim.algorithm.name().to_string());
    }
    Ok(format!("n=4 bitwise equal for {}", done.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("primitive-oracle equivalence", primitive_oracle),
        ("identity-codec collapse", identity_collapse),
        ("codec bounds", codec_bounds),
        ("error-compensation residual identity", ec_identity),
        ("trajectory equivalence", trajectory_equivalence),
        ("convergence parity", convergence_parity),
        ("gossip contraction", gossip_contraction),
        ("scheduling safety and overlap", scheduling),
        ("optimization transparency", transparency),
        ("trend reproduction", trends),
        ("transport parity", transport_parity),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] {:>2}. {name}: {detail} ({secs:.2} s)", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
