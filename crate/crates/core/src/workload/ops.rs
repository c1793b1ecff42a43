use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::key::Key;

use super::keys::KeyDistribution;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Lookup,
    Range,
    Insert,
    Delete,
}

impl OpKind {
    pub const ALL: [OpKind; 4] = [OpKind::Lookup, OpKind::Range, OpKind::Insert, OpKind::Delete];

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Lookup => "lookup",
            OpKind::Range => "range",
            OpKind::Insert => "insert",
            OpKind::Delete => "delete",
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadOp {
    pub kind: OpKind,
    pub key: Key,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<Key>,
    #[serde(default = "one")]
    pub weight: f64,
}

impl WorkloadOp {
    pub fn lookup(key: Key) -> Self {
        WorkloadOp { kind: OpKind::Lookup, key, hi: None, weight: 1.0 }
    }

    pub fn range(key: Key, hi: Key) -> Self {
        WorkloadOp { kind: OpKind::Range, key, hi: Some(hi), weight: 1.0 }
    }

    pub fn insert(key: Key) -> Self {
        WorkloadOp { kind: OpKind::Insert, key, hi: None, weight: 1.0 }
    }

    pub fn delete(key: Key) -> Self {
        WorkloadOp { kind: OpKind::Delete, key, hi: None, weight: 1.0 }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(format!("weight {} must be positive", self.weight));
        }
        match (self.kind, self.hi) {
            (OpKind::Range, Some(hi)) if hi >= self.key => Ok(()),
            (OpKind::Range, Some(hi)) => Err(format!("range hi {hi} below key {}", self.key)),
            (OpKind::Range, None) => Err("range without hi".into()),
            (_, Some(_)) => Err(format!("{} carries hi", self.kind.as_str())),
            _ => Ok(()),
        }
    }
}

/// Operation counts of one workload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Mix {
    pub lookups: usize,
    pub ranges: usize,
    pub inserts: usize,
    pub deletes: usize,
}

impl Mix {
    pub fn total(&self) -> usize {
        self.lookups + self.ranges + self.inserts + self.deletes
    }
}

/// Named workload shapes, sized at full scale and divided by a scale factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WorkloadSpec {
    /// Point lookups only.
    W1,
    /// 1% selectivity range queries.
    W2,
    /// Half lookups, half inserts.
    W3,
    /// Lookups, inserts and ranges in 2:2:1.
    W4,
    Custom(Mix),
}

impl WorkloadSpec {
    pub fn mix(self, scale: usize) -> Mix {
        let s = |n: usize| n / scale.max(1);
        match self {
            WorkloadSpec::W1 => Mix { lookups: s(10_000_000), ..Mix::default() },
            WorkloadSpec::W2 => Mix { ranges: s(1_000_000), ..Mix::default() },
            WorkloadSpec::W3 => Mix { lookups: s(5_000_000), inserts: s(5_000_000), ..Mix::default() },
            WorkloadSpec::W4 => Mix {
                lookups: s(2_000_000),
                inserts: s(2_000_000),
                ranges: s(1_000_000),
                ..Mix::default()
            },
            WorkloadSpec::Custom(m) => m,
        }
    }
}

impl FromStr for WorkloadSpec {
    type Err = Error;

    /// `w1`..`w4`, or `mix:LOOKUPS:RANGES:INSERTS:DELETES` (unscaled counts).
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "w1" => Ok(WorkloadSpec::W1),
            "w2" => Ok(WorkloadSpec::W2),
            "w3" => Ok(WorkloadSpec::W3),
            "w4" => Ok(WorkloadSpec::W4),
            other => {
                let bad = || Error::Malformed(format!("unknown workload `{s}`"));
                let rest = other.strip_prefix("mix:").ok_or_else(bad)?;
                let n: Vec<usize> = rest
                    .split(':')
                    .map(|p| p.parse().map_err(|_| bad()))
                    .collect::<Result<_>>()?;
                let [lookups, ranges, inserts, deletes] = n[..] else {
                    return Err(bad());
                };
                Ok(WorkloadSpec::Custom(Mix { lookups, ranges, inserts, deletes }))
            }
        }
    }
}

impl fmt::Display for WorkloadSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorkloadSpec::W1 => f.write_str("w1"),
            WorkloadSpec::W2 => f.write_str("w2"),
            WorkloadSpec::W3 => f.write_str("w3"),
            WorkloadSpec::W4 => f.write_str("w4"),
            WorkloadSpec::Custom(m) => {
                write!(f, "mix:{}:{}:{}:{}", m.lookups, m.ranges, m.inserts, m.deletes)
            }
        }
    }
}

pub const RANGE_SELECTIVITY: f64 = 0.01;

/// Where generated keys come from.
pub enum KeySource<'a> {
    /// Existing keys, drawn by data density.
    Data,
    /// Fresh draws from a distribution.
    Dist(&'a dyn KeyDistribution),
}

/// Workload generator over one dataset.
pub struct Generator<'a> {
    pub scale: usize,
    pub reads: KeySource<'a>,
    pub writes: KeySource<'a>,
}

impl Default for Generator<'_> {
    fn default() -> Self {
        Generator { scale: 1000, reads: KeySource::Data, writes: KeySource::Data }
    }
}

impl Generator<'_> {
    /// Ops in a seeded shuffled order. Lookups and deletes hit existing keys by
    /// density, inserts land between density-sampled neighbours, ranges cover 1% of keys by rank.
    pub fn generate(&self, spec: WorkloadSpec, keys: &[Key], seed: u64) -> Vec<WorkloadOp> {
        let mix = spec.mix(self.scale);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sorted = keys.to_vec();
        sorted.sort_unstable();
        let mut ops = Vec::with_capacity(mix.total());
        if mix.total() > 0 && sorted.is_empty() && (mix.lookups + mix.ranges + mix.deletes) > 0 {
            panic!("key-sampling workload over an empty dataset");
        }
        let draw = |src: &KeySource<'_>, rng: &mut ChaCha8Rng, n: usize, between: bool| -> Vec<Key> {
            match src {
                KeySource::Dist(d) => d.sample(n, rng),
                KeySource::Data => (0..n)
                    .map(|_| {
                        let i = rng.random_range(0..sorted.len());
                        if between && i + 1 < sorted.len() && sorted[i] < sorted[i + 1] {
                            rng.random_range(sorted[i]..sorted[i + 1])
                        } else {
                            sorted[i]
                        }
                    })
                    .collect(),
            }
        };
        ops.extend(draw(&self.reads, &mut rng, mix.lookups, false).into_iter().map(WorkloadOp::lookup));
        ops.extend(draw(&self.writes, &mut rng, mix.inserts, true).into_iter().map(WorkloadOp::insert));
        ops.extend(draw(&KeySource::Data, &mut rng, mix.deletes, false).into_iter().map(WorkloadOp::delete));
        if mix.ranges > 0 {
            let width = ((sorted.len() as f64 * RANGE_SELECTIVITY).round() as usize).max(1);
            for _ in 0..mix.ranges {
                let i = rng.random_range(0..=sorted.len() - width.min(sorted.len()));
                let j = (i + width - 1).min(sorted.len() - 1);
                ops.push(WorkloadOp::range(sorted[i], sorted[j]));
            }
        }
        ops.shuffle(&mut rng);
        ops
    }
}

/// One JSON object per line.
pub fn write_workload(path: &Path, ops: &[WorkloadOp]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for op in ops {
        serde_json::to_writer(&mut w, op).expect("workload ops serialize");
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn parse_workload(text: &str) -> Result<Vec<WorkloadOp>> {
    let mut ops = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let op: WorkloadOp = serde_json::from_str(line).map_err(|e| Error::Config {
            line: i + 1,
            msg: e.to_string(),
        })?;
        op.validate().map_err(|msg| Error::Config { line: i + 1, msg })?;
        ops.push(op);
    }
    Ok(ops)
}

pub fn read_workload(path: &Path) -> Result<Vec<WorkloadOp>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_workload(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::keys::{gen_keys, Uniform64};

    fn count(ops: &[WorkloadOp], k: OpKind) -> usize {
        ops.iter().filter(|o| o.kind == k).count()
    }

    #[test]
    fn scaled_mixes() {
        let keys = gen_keys(&Uniform64, 10_000, 1);
        let g = Generator::default();
        let w1 = g.generate(WorkloadSpec::W1, &keys, 1);
        assert_eq!((w1.len(), count(&w1, OpKind::Lookup)), (10_000, 10_000));
        let w4 = g.generate(WorkloadSpec::W4, &keys, 1);
        assert_eq!(
            [OpKind::Lookup, OpKind::Insert, OpKind::Range].map(|k| count(&w4, k)),
            [2000, 2000, 1000]
        );
        let w3 = g.generate(WorkloadSpec::W3, &keys, 1);
        assert_eq!(count(&w3, OpKind::Insert), 5000);
    }

    #[test]
    fn ranges_cover_one_percent() {
        let keys = gen_keys(&Uniform64, 20_000, 2);
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        let ops = Generator::default().generate(WorkloadSpec::W2, &keys, 3);
        assert_eq!(ops.len(), 1000);
        for op in &ops {
            let hi = op.hi.unwrap();
            let inside = sorted.partition_point(|&k| k <= hi) - sorted.partition_point(|&k| k < op.key);
            assert!((180..=220).contains(&inside), "{inside}");
        }
    }

    #[test]
    fn seeded_and_round_trips() {
        let keys = gen_keys(&Uniform64, 1_000, 2);
        let g = Generator { scale: 10_000, ..Generator::default() };
        let a = g.generate(WorkloadSpec::W4, &keys, 9);
        assert_eq!(a, g.generate(WorkloadSpec::W4, &keys, 9));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.jsonl");
        write_workload(&p, &a).unwrap();
        assert_eq!(read_workload(&p).unwrap(), a);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let text = "{\"kind\":\"lookup\",\"key\":5}\n{\"kind\":\"range\",\"key\":9,\"hi\":3}\n";
        match parse_workload(text) {
            Err(Error::Config { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert_eq!(parse_workload("{\"kind\":\"lookup\",\"key\":5}").unwrap()[0].weight, 1.0);
    }

    #[test]
    fn spec_names_round_trip() {
        for s in ["w1", "w2", "w3", "w4", "mix:1:2:3:4"] {
            assert_eq!(s.parse::<WorkloadSpec>().unwrap().to_string(), s);
        }
        assert!("w9".parse::<WorkloadSpec>().is_err());
    }
}
