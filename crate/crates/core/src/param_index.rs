use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::{BlockKind, HyperParams};
use crate::stats::DatasetStats;

/// One component of a group path pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segment {
    Exact(u32),
    /// Inclusive child-index range `a-b`.
    Range(u32, u32),
    Any,
}

impl Segment {
    fn matches(self, v: u32) -> bool {
        match self {
            Segment::Exact(x) => x == v,
            Segment::Range(a, b) => a <= v && v <= b,
            Segment::Any => true,
        }
    }

    fn specificity(self) -> u8 {
        match self {
            Segment::Exact(_) => 2,
            Segment::Range(..) => 1,
            Segment::Any => 0,
        }
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Segment::Exact(x) => write!(f, "{x}"),
            Segment::Range(a, b) => write!(f, "{a}-{b}"),
            Segment::Any => f.write_str("*"),
        }
    }
}

/// Group path pattern such as `0/2/1`, `0/*` or `0/0-63/5`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathPattern(pub Vec<Segment>);

impl PathPattern {
    pub fn exact(path: &[u32]) -> Self {
        PathPattern(path.iter().map(|&v| Segment::Exact(v)).collect())
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn matches(&self, path: &[u32]) -> bool {
        self.0.len() == path.len() && self.matches_prefix(path)
    }

    fn matches_prefix(&self, path: &[u32]) -> bool {
        path.len() <= self.0.len() && self.0.iter().zip(path).all(|(s, &v)| s.matches(v))
    }

    fn specificity(&self) -> Vec<u8> {
        self.0.iter().map(|s| s.specificity()).collect()
    }

    pub fn child(&self, seg: Segment) -> Self {
        let mut v = self.0.clone();
        v.push(seg);
        PathPattern(v)
    }
}

impl fmt::Display for PathPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_char('/')?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

impl FromStr for PathPattern {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let segs = s
            .split('/')
            .map(|p| {
                if p == "*" {
                    Ok(Segment::Any)
                } else if let Some((a, b)) = p.split_once('-') {
                    let a = a.parse().map_err(|_| format!("bad range `{p}`"))?;
                    let b = b.parse().map_err(|_| format!("bad range `{p}`"))?;
                    if a > b {
                        return Err(format!("empty range `{p}`"));
                    }
                    Ok(Segment::Range(a, b))
                } else {
                    p.parse()
                        .map(Segment::Exact)
                        .map_err(|_| format!("bad path segment `{p}`"))
                }
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if segs.first() != Some(&Segment::Exact(0)) {
            return Err("paths start at the root `0`".into());
        }
        Ok(PathPattern(segs))
    }
}

pub fn format_path(path: &[u32]) -> String {
    PathPattern::exact(path).to_string()
}

/// Hyper-parameters per group path, as produced by the controller or read from a config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterIndex {
    pub entries: Vec<(PathPattern, HyperParams)>,
    /// Statistics of the dataset the parameters were predicted for.
    pub root_stats: Option<DatasetStats>,
}

impl ParameterIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, pattern: PathPattern, params: HyperParams) {
        self.entries.push((pattern, params));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Most specific entry matching `path`; earlier entries win ties.
    pub fn get(&self, path: &[u32]) -> Option<&HyperParams> {
        let mut best: Option<(Vec<u8>, &HyperParams)> = None;
        for (pat, p) in &self.entries {
            if pat.matches(path) {
                let spec = pat.specificity();
                if best.as_ref().is_none_or(|(s, _)| spec > *s) {
                    best = Some((spec, p));
                }
            }
        }
        best.map(|(_, p)| p)
    }

    /// Whether any entry describes a child of `path`.
    pub fn has_children(&self, path: &[u32]) -> bool {
        self.entries
            .iter()
            .any(|(pat, _)| pat.depth() == path.len() + 1 && pat.matches_prefix(path))
    }

    /// Line-oriented text: `path blockType x y alpha beta gamma1,...,gammaK` (`-` when empty).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (pat, p) in &self.entries {
            let gamma = if p.gamma.is_empty() {
                "-".to_string()
            } else {
                p.gamma
                    .iter()
                    .map(|g| format!("{g}"))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let _ = writeln!(
                out,
                "{pat} {} {} {} {} {} {gamma}",
                p.kind, p.x, p.y, p.alpha, p.beta
            );
        }
        out
    }

    /// Parses the text format; `#` starts a comment. Validates against capacity `m`.
    pub fn parse(text: &str, m: usize) -> Result<Self> {
        let mut pi = ParameterIndex::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Config { line: line_no, msg };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 7 {
                return Err(err(format!("expected 7 fields, found {}", fields.len())));
            }
            let pattern: PathPattern = fields[0].parse().map_err(err)?;
            let kind: BlockKind = fields[1].parse().map_err(|e: Error| err(e.to_string()))?;
            let num = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| err(format!("bad {what} `{s}`")))
            };
            let int = |s: &str, what: &str| -> Result<usize> {
                s.parse::<usize>()
                    .map_err(|_| err(format!("bad {what} `{s}`")))
            };
            let gamma = if fields[6] == "-" {
                Vec::new()
            } else {
                fields[6]
                    .split(',')
                    .map(|g| num(g, "gamma"))
                    .collect::<Result<Vec<_>>>()?
            };
            let params = HyperParams {
                kind,
                x: int(fields[2], "x")?,
                y: int(fields[3], "y")?,
                alpha: num(fields[4], "alpha")?,
                beta: num(fields[5], "beta")?,
                gamma,
            };
            params.validate(m).map_err(|e| err(e.to_string()))?;
            pi.insert(pattern, params);
        }
        Ok(pi)
    }
}
