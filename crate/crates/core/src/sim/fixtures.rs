//! Hand-built plans and scenarios for tests and examples.

use super::sampler::REAL_TMC;
use super::scenario::{
    CorridorSpec, Demand, DrivingBehavior, PhaseTiming, Scenario, SideDemand, TimingPlan,
    DEFAULT_RING1, DEFAULT_RING2,
};

/// A valid default-ring plan: 55% of the cycle to the arterial group,
/// 12 s left-turn greens and 10 s cross-street lefts.
pub fn simple_plan(cycle: f64, offset: f64) -> TimingPlan {
    let (yellow, all_red) = (4.0, 2.0);
    let clearance = 2.0 * (yellow + all_red);
    let a = (0.55 * cycle).round();
    let b = cycle - a;
    let greens = [
        (1, 7.0, 12.0),
        (2, 20.0, a - clearance - 12.0),
        (3, 7.0, 10.0),
        (4, 10.0, b - clearance - 10.0),
        (5, 7.0, 12.0),
        (6, 20.0, a - clearance - 12.0),
        (7, 7.0, 10.0),
        (8, 10.0, b - clearance - 10.0),
    ];
    TimingPlan {
        cycle,
        offset,
        phases: greens
            .iter()
            .map(|&(_, min_green, max_green)| PhaseTiming {
                min_green,
                max_green,
                yellow,
                all_red,
            })
            .collect(),
        ring1: DEFAULT_RING1,
        ring2: DEFAULT_RING2,
    }
}

/// `k` intersections 400 m apart (the default corridor at `k = 8`), 180 s
/// plans with staggered offsets, real-mode ratios and `arterial` veh/h at
/// both ends.
pub fn simple_scenario(k: usize, arterial: f64) -> Scenario {
    let corridor = if k == 8 {
        CorridorSpec::default()
    } else {
        CorridorSpec::uniform(k, 400.0)
    };
    let cycle = 180.0;
    Scenario {
        corridor,
        plans: (0..k)
            .map(|i| simple_plan(cycle, (i as f64 * 25.0) % cycle))
            .collect(),
        tmc: vec![REAL_TMC; k],
        behavior: DrivingBehavior::default(),
        demand: Demand {
            eastbound: arterial,
            westbound: arterial,
            side: vec![
                SideDemand {
                    northbound: 100.0,
                    southbound: 100.0,
                };
                k
            ],
        },
        duration: 900.0,
        seed: 1,
    }
}
