use std::collections::BTreeMap;

use blockindex::param_index::{PathPattern, Segment};
use blockindex::params::{link_levels, ValueSets};
use blockindex::stats::DatasetStats;
use blockindex::tree::BuildOptions;
use blockindex::{BlockKind, HyperParams, Key, Offset, ParameterIndex, PhysicalIndex};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_params(rng: &mut ChaCha8Rng, m: usize) -> HyperParams {
    let vs = ValueSets::default();
    let y = *vs.y.choose(rng).unwrap();
    let alpha = *vs.alpha.choose(rng).unwrap();
    HyperParams {
        kind: if rng.random_bool(0.5) { BlockKind::Ordered } else { BlockKind::Unordered },
        x: *vs.x_values(m).choose(rng).unwrap(),
        y,
        alpha,
        beta: *vs.beta.choose(rng).unwrap(),
        gamma: (0..link_levels(y)).map(|_| rng.random_range(0.0..=1.0)).collect(),
    }
}

fn random_config(rng: &mut ChaCha8Rng, m: usize) -> ParameterIndex {
    let mut pi = ParameterIndex::new();
    let depth = rng.random_range(1..=3);
    let mut pat = PathPattern::exact(&[0]);
    for d in 0..depth {
        pi.insert(pat.clone(), random_params(rng, m));
        if d == 0 && depth > 1 {
            pi.insert(pat.child(Segment::Range(0, 3)), random_params(rng, m));
        }
        pat = pat.child(Segment::Any);
    }
    pi
}

fn keys(rng: &mut ChaCha8Rng, n: usize, skewed: bool) -> Vec<Key> {
    (0..n)
        .map(|_| {
            if skewed {
                let u: f64 = rng.random();
                (u.powi(4) * 1e12) as Key
            } else {
                rng.random_range(0..1_000_000_000)
            }
        })
        .collect()
}

fn oracle_of(keys: &[Key]) -> BTreeMap<Key, Vec<Offset>> {
    let mut map: BTreeMap<Key, Vec<Offset>> = BTreeMap::new();
    for (i, &k) in keys.iter().enumerate() {
        map.entry(k).or_default().push(i as Offset);
    }
    map
}

fn oracle_range(map: &BTreeMap<Key, Vec<Offset>>, lo: Key, hi: Key) -> Vec<Offset> {
    let mut v: Vec<Offset> = map.range(lo..=hi).flat_map(|(_, o)| o.iter().copied()).collect();
    v.sort_unstable();
    v
}

#[test]
fn random_configs_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..12 {
        let m = [16, 64, 256][trial % 3];
        let ks = keys(&mut rng, 20_000, trial % 2 == 1);
        let pi = random_config(&mut rng, m);
        let opts = BuildOptions { m, seed: trial as u64, ..BuildOptions::default() };
        let stats = DatasetStats::from_keys(&ks);
        let idx = match PhysicalIndex::from_keys(&pi, &ks, &stats, &opts) {
            Ok(i) => i,
            Err(e) => panic!("trial {trial}: {e}\n{}", pi.to_text()),
        };
        idx.check_invariants().unwrap();
        let map = oracle_of(&ks);
        for _ in 0..2000 {
            let k = if rng.random_bool(0.5) {
                *ks.choose(&mut rng).unwrap()
            } else {
                rng.random_range(0..1_100_000_000_000)
            };
            let got = idx.lookup(k);
            let want = map.get(&k).cloned().unwrap_or_default();
            assert_eq!(got.offsets, want, "trial {trial} key {k}\n{}", pi.to_text());
            assert!(got.visited_blocks >= 1);
        }
        let mut sorted = ks.clone();
        sorted.sort_unstable();
        for _ in 0..200 {
            let i = rng.random_range(0..sorted.len());
            let j = (i + sorted.len() / 100).min(sorted.len() - 1);
            let (lo, hi) = (sorted[i], sorted[j]);
            assert_eq!(idx.range_search(lo, hi).offsets, oracle_range(&map, lo, hi));
        }
    }
}

#[test]
fn interleaved_updates_match_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..6 {
        let m = [16, 64][trial % 2];
        let ks = keys(&mut rng, 5_000, trial % 2 == 0);
        let pi = random_config(&mut rng, m);
        let opts = BuildOptions { m, seed: 3, ..BuildOptions::default() };
        let mut idx = PhysicalIndex::from_keys(&pi, &ks, &DatasetStats::from_keys(&ks), &opts).unwrap();
        let mut map = oracle_of(&ks);
        let mut next_off = ks.len() as Offset;
        for step in 0..5_000 {
            if rng.random_bool(0.5) {
                let k = if rng.random_bool(0.3) {
                    rng.random_range(0..2_000_000_000_000)
                } else {
                    *ks.choose(&mut rng).unwrap() + 1
                };
                idx.insert(k, next_off);
                map.entry(k).or_default().push(next_off);
                next_off += 1;
            } else {
                let k = *ks.choose(&mut rng).unwrap();
                assert_eq!(idx.delete(k), map.remove(&k).is_some());
            }
            if let Err(e) = idx.check_invariants() {
                panic!("trial {trial} step {step}: {e}");
            }
        }
        let mut pairs = Vec::new();
        idx.subtree_pairs(blockindex::tree::ROOT, &mut pairs);
        pairs.sort_unstable();
        let mut want: Vec<(Key, Offset)> =
            map.iter().flat_map(|(&k, o)| o.iter().map(move |&x| (k, x))).collect();
        want.sort_unstable();
        assert_eq!(pairs, want);
        for (&k, o) in map.iter().take(500) {
            let mut o = o.clone();
            o.sort_unstable();
            assert_eq!(idx.lookup(k).offsets, o);
        }
    }
}
