//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL` line.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use blockindex::bloom::BloomFilter;
use blockindex::controller::search::search;
use blockindex::controller::{sample, Baseline, Layout, Model, SampleOptions, TrainConfig};
use blockindex::incremental::{drifting_workloads, modes, prepare, run_episodes, EpisodeConfig};
use blockindex::stats::DatasetStats;
use blockindex::tree::BuildOptions;
use blockindex::workload::*;
use blockindex::{shapes, Key, Offset, ParameterIndex, PhysicalIndex};
use common::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, pass: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn oracle_of(keys: &[Key]) -> BTreeMap<Key, Vec<Offset>> {
    let mut map: BTreeMap<Key, Vec<Offset>> = BTreeMap::new();
    for (i, &k) in keys.iter().enumerate() {
        map.entry(k).or_default().push(i as Offset);
    }
    map
}

/// Controller draws (exploration forced on) until one fits the storage budget.
fn sampled_configs(stats: &DatasetStats, m: usize, n: usize, seed: u64, keys: &[Key]) -> Vec<PhysicalIndex> {
    let model = Model::new(Layout::default(), 16, seed);
    let opts = SampleOptions { lambda: 1.0, m, ..SampleOptions::default() };
    let bo = BuildOptions { m, budget_bytes: Some(256 << 20), seed, ..BuildOptions::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < n {
        let t = sample(&model, stats, &opts, &mut rng);
        if let Ok(idx) = PhysicalIndex::from_keys(&t.config, keys, stats, &bo) {
            out.push(idx);
        }
    }
    out
}

#[test]
fn criterion_1_oracle_equivalence() {
    let start = Instant::now();
    let mut mismatches = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (d, dist) in [&Uniform64 as &dyn KeyDistribution, &LogNormal::default()].into_iter().enumerate() {
        let keys = gen_keys(dist, 100_000, 10 + d as u64);
        let stats = DatasetStats::from_keys(&keys);
        let map = oracle_of(&keys);
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        let width = sorted.len() / 100;
        for idx in sampled_configs(&stats, 64, 10, 20 + d as u64, &keys) {
            for _ in 0..10_000 {
                let k = if rng.random_bool(0.8) { *keys.choose(&mut rng).unwrap() } else { rng.random() };
                if idx.lookup(k).offsets != map.get(&k).cloned().unwrap_or_default() {
                    mismatches += 1;
                }
            }
            for _ in 0..1_000 {
                let i = rng.random_range(0..sorted.len() - width);
                let (lo, hi) = (sorted[i], sorted[i + width - 1]);
                let mut want: Vec<Offset> = map.range(lo..=hi).flat_map(|(_, o)| o.iter().copied()).collect();
                want.sort_unstable();
                if idx.range_search(lo, hi).offsets != want {
                    mismatches += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches == 0 && elapsed < Duration::from_secs(120);
    report(1, pass, &format!("mismatches {mismatches} in {elapsed:.1?}"));
    assert!(pass);
}

#[test]
fn criterion_2_update_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let keys = gen_keys(&LogNormal::default(), 20_000, 2);
    let stats = DatasetStats::from_keys(&keys);
    let mut violations = Vec::new();
    let mut content_ok = true;
    for (c, mut idx) in sampled_configs(&stats, 32, 2, 7, &keys).into_iter().enumerate() {
        let mut map = oracle_of(&keys);
        let mut next = keys.len() as Offset;
        for step in 0..10_000 {
            if rng.random_bool(0.5) {
                let k = if rng.random_bool(0.5) { rng.random() } else { *keys.choose(&mut rng).unwrap() ^ 1 };
                idx.insert(k, next);
                map.entry(k).or_default().push(next);
                next += 1;
            } else {
                let k = *keys.choose(&mut rng).unwrap();
                if idx.delete(k) != map.remove(&k).is_some() {
                    violations.push(format!("config {c} step {step}: delete disagrees"));
                }
            }
            if let Err(e) = idx.check_invariants() {
                violations.push(format!("config {c} step {step}: {e}"));
                break;
            }
        }
        let mut got = Vec::new();
        idx.subtree_pairs(blockindex::tree::ROOT, &mut got);
        got.sort_unstable();
        let mut want: Vec<(Key, Offset)> = map.iter().flat_map(|(&k, o)| o.iter().map(move |&x| (k, x))).collect();
        want.sort_unstable();
        content_ok &= got == want;
    }
    let pass = violations.is_empty() && content_ok;
    report(2, pass, &format!("content identical {content_ok}, violations {violations:?}"));
    assert!(pass);
}

#[test]
fn criterion_3_simulation_fidelity() {
    let keys = gen_keys(&Uniform64, 20_000, 3);
    let stats = DatasetStats::from_keys(&keys);
    let opts = BuildOptions { m: 64, ..BuildOptions::default() };
    let build = |pi: &ParameterIndex| PhysicalIndex::from_keys(pi, &keys, &stats, &opts).unwrap();
    let btree = shapes::is_btree_shape(&build(&shapes::btree_config(64)));
    let hash = shapes::is_single_layer_hash(&build(&shapes::hash_config()));
    let skip = shapes::is_skiplist_shape(&build(&shapes::skiplist_config(64)));
    let pass = btree && hash && skip;
    report(3, pass, &format!("btree {btree} hash {hash} skiplist {skip}"));
    assert!(pass);
}

#[test]
fn criterion_4_gradient_correctness() {
    let err = gradient_check(1e-5);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let mu: f64 = rng.random();
        let n = rng.random_range(1..200);
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut b = Baseline::new(mu);
        let mut last = 0.0;
        for &r in &rewards {
            last = b.update(r);
        }
        let want = closed_form_baseline(mu, &rewards);
        worst = worst.max((last - want).abs() / want.abs().max(1e-300));
    }
    let pass = err < 1e-4 && worst <= 1e-12;
    report(4, pass, &format!("gradient rel err {err:.2e}, baseline rel err {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_5_convergence_trend() {
    let start = Instant::now();
    let keys = gen_keys(&LogNormal::default(), 100_000, 5);
    let ops = Generator::default().generate(WorkloadSpec::W1, &keys, 5);
    let cfg = TrainConfig { rho: 1.0, batch: 16, epochs: 100, m: 64, mode: CostMode::VisitCount, ..TrainConfig::default() };
    let stats = DatasetStats::from_keys(&keys);
    let mut btree = PhysicalIndex::from_keys(&shapes::btree_config(64), &keys, &stats, &cfg.build_options()).unwrap();
    let btree_c_t = run_workload(&mut btree, &ops, CostMode::VisitCount).c_t;
    let found = search(&keys, &ops, &cfg).unwrap();
    let monotone = found.epochs.windows(2).all(|w| w[1].running_best >= w[0].running_best);
    let beats = found.best_eval.c_t <= btree_c_t;
    let elapsed = start.elapsed();
    let pass = monotone && beats && elapsed < Duration::from_secs(1800);
    report(
        5,
        pass,
        &format!(
            "running max monotone {monotone}, best c_t {} vs btree {btree_c_t}, {elapsed:.0?}",
            found.best_eval.c_t
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_rho_trade_off() {
    let keys = gen_keys(&LogNormal::default(), 20_000, 6);
    let ops = Generator { scale: 5000, ..Generator::default() }.generate(WorkloadSpec::W1, &keys, 6);
    let run = |rho: f64| {
        let cfg = TrainConfig { rho, batch: 8, epochs: 20, m: 64, seed: 6, ..TrainConfig::default() };
        search(&keys, &ops, &cfg).unwrap().best_eval
    };
    let (space, latency) = (run(0.0), run(1.0));
    let pass = space.c_s >= latency.c_s && latency.c_t <= space.c_t;
    report(
        6,
        pass,
        &format!(
            "rho=0 c_s {:.4} c_t {}; rho=1 c_s {:.4} c_t {}",
            space.c_s, space.c_t, latency.c_s, latency.c_t
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_ppo_sanity() {
    use blockindex::controller::updater::{ppo_gradient, reinforce_gradient};
    let layout = Layout::default();
    let model = Model::new(layout.clone(), 8, 7);
    let batch = toy_batch(&layout);
    let r = reinforce_gradient(&model, &batch, 0.05);
    let (p, kl_same) = ppo_gradient(&model, &model, &batch, 0.05, 0.5);
    let diff = r.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm = r.iter().map(|a| a * a).sum::<f64>().sqrt();
    let direction_err = diff / norm;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut kl_err = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..16);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let (p, q) = (normalize(&a), normalize(&b));
        let want = direct_kl(&p, &q);
        kl_err = kl_err.max((kl(&p, &q) - want).abs() / want.abs().max(1.0));
    }
    let pass = direction_err <= 1e-10 && kl_same == 0.0 && kl_err <= 1e-12;
    report(7, pass, &format!("direction err {direction_err:.2e}, KL err {kl_err:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_8_incremental_trend() {
    let start = Instant::now();
    let keys = gen_keys(&Uniform64, 20_000, 8);
    let episodes = drifting_workloads(&keys, 5, 2000, 2000, 8);
    let mut cfg = EpisodeConfig::default();
    cfg.search.m = 64;
    cfg.retune.m = 64;
    let prepared = prepare(&keys, &episodes[0], &cfg).unwrap();
    let mut last = BTreeMap::new();
    for name in ["default", "inc", "trained"] {
        let mut mode = modes().get(name).unwrap();
        let rows = run_episodes(&prepared, &episodes, mode.as_mut(), &cfg).unwrap();
        println!("  {name}: {:?}", rows.iter().map(|r| r.c_t).collect::<Vec<_>>());
        last.insert(name, rows.last().unwrap().c_t);
    }
    let elapsed = start.elapsed();
    let pass = last["inc"] <= last["default"] && last["inc"] >= last["trained"] && elapsed < Duration::from_secs(1200);
    report(
        8,
        pass,
        &format!(
            "final c_t default {} inc {} trained {}, {elapsed:.0?}",
            last["default"], last["inc"], last["trained"]
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_9_bloom_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bloom = BloomFilter::with_params(10_000, 10, 7);
    let members: Vec<Key> = (0..10_000).map(|_| rng.random()).collect();
    for &k in &members {
        bloom.insert(k);
    }
    let false_negatives = members.iter().filter(|&&k| !bloom.may_contain(k)).count();
    let set: std::collections::HashSet<Key> = members.iter().copied().collect();
    let probes = 200_000;
    let mut fp = 0;
    let mut tried = 0;
    while tried < probes {
        let k: Key = rng.random();
        if set.contains(&k) {
            continue;
        }
        tried += 1;
        fp += bloom.may_contain(k) as usize;
    }
    let fpr = fp as f64 / probes as f64;
    let theory = (1.0 - (-7.0f64 / 10.0).exp()).powi(7);
    let pass = false_negatives == 0 && fpr <= 1.5 * theory;
    report(9, pass, &format!("false negatives {false_negatives}, FPR {fpr:.5} vs theoretical {theory:.5}"));
    assert!(pass);
}

fn cli(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_blockindex"))
        .env_remove("NIS_SEED")
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

/// Every file under `dir`, by relative path.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn pipeline(dir: &Path) -> Vec<Vec<u8>> {
    let s = |p: &str| dir.join(p).display().to_string();
    let mut stdout = Vec::new();
    stdout.push(cli(&["gen-data", "--dist", "lognormal", "--n", "5000", "--seed", "3", "--out", &s("k.bin")]));
    stdout.push(cli(&["gen-workload", "--keys", &s("k.bin"), "--spec", "w4", "--scale", "2000", "--out", &s("w.jsonl")]));
    stdout.push(cli(&[
        "search", "--keys", &s("k.bin"), "--workload", &s("w.jsonl"), "--out-dir", &s("search"), "--epochs", "3",
        "--batch", "4", "--m", "64", "--updater", "ppo",
    ]));
    stdout.push(cli(&["build", "--keys", &s("k.bin"), "--config", &s("search/best.cfg"), "--m", "64"]));
    stdout.push(cli(&[
        "bench", "--keys", &s("k.bin"), "--config", &s("search/best.cfg"), "--workload", &s("w.jsonl"), "--m", "64",
    ]));
    stdout.push(cli(&[
        "gen-episodes", "--keys", &s("k.bin"), "--episodes", "2", "--inserts", "300", "--lookups", "300", "--out-dir",
        &s("eps"),
    ]));
    stdout.push(cli(&[
        "episodes", "--keys", &s("k.bin"), "--workload", &s("eps/episode-0.jsonl"), &s("eps/episode-1.jsonl"),
        "--mode", "inc", "--epochs", "2", "--batch", "4", "--m", "64",
    ]));
    stdout
}

#[test]
fn criterion_10_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out_a = pipeline(a.path());
    let out_b = pipeline(b.path());
    let (files_a, files_b) = (snapshot(a.path()), snapshot(b.path()));
    let differing: Vec<&String> = files_a.keys().filter(|k| files_a.get(*k) != files_b.get(*k)).collect();
    let pass = out_a == out_b && differing.is_empty() && files_a.len() == files_b.len();
    report(10, pass, &format!("{} files compared, differing {differing:?}", files_a.len()));
    assert!(pass);
}
