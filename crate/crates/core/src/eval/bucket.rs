//! Scenario buckets by cycle length, corridor volume and green share.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::Covariates;
use crate::sim::Direction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    Low,
    Medium,
    High,
    Total,
}

impl Level {
    pub const BUCKETS: [Level; 3] = [Level::Low, Level::Medium, Level::High];
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Low => "Low",
            Level::Medium => "Medium",
            Level::High => "High",
            Level::Total => "Total",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    CycleLength,
    TrafficVolume,
    MaxGreenPct,
}

impl Covariate {
    pub fn name(self) -> &'static str {
        match self {
            Covariate::CycleLength => "cycle_length",
            Covariate::TrafficVolume => "traffic_volume",
            Covariate::MaxGreenPct => "max_green_pct",
        }
    }

    /// Value for one travel direction; cycle length is shared.
    pub fn value(self, c: &Covariates, d: Direction) -> f64 {
        match self {
            Covariate::CycleLength => c.cycle,
            Covariate::TrafficVolume => c.volume[d.index()],
            Covariate::MaxGreenPct => c.max_green_pct[d.index()],
        }
    }
}

/// Half-open buckets `(-inf, t1)`, `[t1, t2)`, `[t2, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketSpec {
    pub covariate: Covariate,
    pub thresholds: [f64; 2],
}

impl BucketSpec {
    pub const CYCLE: BucketSpec = BucketSpec {
        covariate: Covariate::CycleLength,
        thresholds: [160.0, 200.0],
    };
    pub const VOLUME: BucketSpec = BucketSpec {
        covariate: Covariate::TrafficVolume,
        thresholds: [700.0, 900.0],
    };
    pub const GREEN: BucketSpec = BucketSpec {
        covariate: Covariate::MaxGreenPct,
        thresholds: [25.0, 50.0],
    };
    pub const ALL: [BucketSpec; 3] = [Self::CYCLE, Self::VOLUME, Self::GREEN];

    pub fn level(&self, value: f64) -> Level {
        if value < self.thresholds[0] {
            Level::Low
        } else if value < self.thresholds[1] {
            Level::Medium
        } else {
            Level::High
        }
    }

    pub fn level_of(&self, c: &Covariates, d: Direction) -> Level {
        self.level(self.covariate.value(c, d))
    }
}

/// Indices of `items` per bucket, in input order.
pub fn bucket<'a>(
    items: impl IntoIterator<Item = &'a Covariates>,
    spec: &BucketSpec,
    direction: Direction,
) -> [Vec<usize>; 3] {
    let mut out: [Vec<usize>; 3] = Default::default();
    for (i, c) in items.into_iter().enumerate() {
        let slot = match spec.level_of(c, direction) {
            Level::Low => 0,
            Level::Medium => 1,
            _ => 2,
        };
        out[slot].push(i);
    }
    out
}
