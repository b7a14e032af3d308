use serde::{Deserialize, Serialize};

use super::EditInstance;
use crate::error::{usage, Result};
use crate::metrics::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub mean: f64,
    pub median: f64,
    pub count: usize,
}

/// Token-length summary per role, one row per input kind plus targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub instances: usize,
    pub effectiveness: LengthStats,
    pub generalization: LengthStats,
    pub specificity: LengthStats,
    pub targets: LengthStats,
}

pub fn length_stats(lengths: &[usize]) -> LengthStats {
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let mean = sorted.iter().sum::<usize>() as f64 / n as f64;
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    };
    LengthStats { mean, median, count: n }
}

pub fn dataset_stats(instances: &[EditInstance]) -> Result<DatasetStats> {
    if instances.is_empty() {
        return usage("cannot summarize an empty dataset");
    }
    let len = |s: &str| tokenize(s).len();
    let eff: Vec<usize> = instances.iter().map(|i| len(&i.x)).collect();
    let gen: Vec<usize> = instances.iter().flat_map(|i| i.rewrites.iter().map(|r| len(r))).collect();
    let spec: Vec<usize> = instances.iter().flat_map(|i| i.neighbors.iter().map(|n| len(&n.x_u))).collect();
    let tgt: Vec<usize> = instances.iter().map(|i| len(&i.y)).collect();
    Ok(DatasetStats {
        instances: instances.len(),
        effectiveness: length_stats(&eff),
        generalization: length_stats(&gen),
        specificity: length_stats(&spec),
        targets: length_stats(&tgt),
    })
}
