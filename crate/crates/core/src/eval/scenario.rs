//! Missing-view scenario enumeration.

use std::fmt;
use std::str::FromStr;

use crate::error::{contract, Error, Result};
use crate::scene::CameraRig;

/// A set of dropped views.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub id: String,
    pub dropped: Vec<usize>,
    pub names: Vec<String>,
}

impl Scenario {
    pub fn new(rig: &CameraRig, dropped: Vec<usize>) -> Self {
        let id = if dropped.is_empty() {
            "complete".to_string()
        } else {
            format!("drop_{}", dropped.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("_"))
        };
        let names = dropped.iter().map(|&d| rig.cameras[d].name.clone()).collect();
        Self { id, dropped, names }
    }

    pub fn is_complete(&self) -> bool {
        self.dropped.is_empty()
    }
}

/// Which scenarios to evaluate. Every set includes the complete scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioSet {
    Complete,
    /// Each single view dropped.
    Singles,
    /// Every combination of exactly `k` dropped views.
    K(usize),
    /// Every strict subset of the views.
    All,
}

impl FromStr for ScenarioSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complete" => Ok(Self::Complete),
            "singles" => Ok(Self::Singles),
            "all" => Ok(Self::All),
            _ => s
                .strip_prefix("k=")
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 1)
                .map(Self::K)
                .ok_or_else(|| Error::Config(format!("unknown scenario set {s:?} (complete|singles|k=<n>|all)"))),
        }
    }
}

impl fmt::Display for ScenarioSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Complete => f.write_str("complete"),
            Self::Singles => f.write_str("singles"),
            Self::K(k) => write!(f, "k={k}"),
            Self::All => f.write_str("all"),
        }
    }
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

impl ScenarioSet {
    /// Complete scenario first, then drops by increasing count.
    pub fn enumerate(&self, rig: &CameraRig) -> Result<Vec<Scenario>> {
        let n = rig.len();
        let ks: Vec<usize> = match *self {
            Self::Complete => vec![],
            Self::Singles => vec![1],
            Self::K(k) if k < n => vec![k],
            Self::K(k) => return contract(format!("cannot drop {k} of {n} views")),
            Self::All => (1..n).collect(),
        };
        let mut out = vec![Scenario::new(rig, Vec::new())];
        for k in ks {
            out.extend(combinations(n, k).into_iter().map(|d| Scenario::new(rig, d)));
        }
        Ok(out)
    }
}
