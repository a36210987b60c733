use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Labels, TabularDataset};
use crate::error::{Error, Result};

/// Disjoint train / validation / test row indices (each sorted ascending).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_idx: Vec<usize>,
    pub valid_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

/// Splits rows into `fractions.len()` partitions (2 = train/test,
/// 3 = train/valid/test), stratified by class.
///
/// With group ids the split is made over groups, each group taking the class
/// of its highest label (any-positive for binary tasks), so no group spans two
/// partitions. Regression datasets are split as a single stratum.
pub fn stratified_split(ds: &TabularDataset, fractions: &[f64], seed: u64) -> Result<SplitSpec> {
    if !(2..=3).contains(&fractions.len()) {
        return Err(Error::invalid("fractions must have 2 (train, test) or 3 (train, valid, test) entries"));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::invalid("fractions must lie in [0, 1]"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("fractions sum to {total}, expected 1")));
    }
    let partitions = fractions.iter().filter(|&&f| f > 0.0).count();

    // Units are rows, or groups of rows when group ids are present.
    let units: Vec<Vec<usize>> = match ds.group_ids() {
        Some(groups) => {
            let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, g) in groups.iter().enumerate() {
                by_group.entry(g.as_str()).or_default().push(i);
            }
            by_group.into_values().collect()
        }
        None => (0..ds.n_rows()).map(|i| vec![i]).collect(),
    };
    let unit_class = |u: &[usize]| -> usize {
        match ds.labels() {
            Labels::Class(y) => u.iter().map(|&i| y[i]).max().unwrap_or(0),
            Labels::Real(_) => 0,
        }
    };
    let mut strata: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (u, rows) in units.iter().enumerate() {
        strata.entry(unit_class(rows)).or_default().push(u);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); 3];
    for (&class, members) in &strata {
        if members.len() < partitions {
            return Err(Error::ClassTooSmall { class, count: members.len(), partitions });
        }
        let mut members = members.clone();
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        let mut start = 0usize;
        let mut cum = 0.0;
        for (p, &f) in fractions.iter().enumerate() {
            cum += f;
            let end =
                if p + 1 == fractions.len() { members.len() } else { ((n * cum).round() as usize).min(members.len()) };
            let slot = if fractions.len() == 2 && p == 1 { 2 } else { p };
            for &u in &members[start..end.max(start)] {
                parts[slot].extend_from_slice(&units[u]);
            }
            start = end.max(start);
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    let test_idx = parts.pop().unwrap();
    let valid_idx = parts.pop().unwrap();
    let train_idx = parts.pop().unwrap();
    Ok(SplitSpec { train_idx, valid_idx, test_idx, seed })
}
