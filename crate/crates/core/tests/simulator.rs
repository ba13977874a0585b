use corridor_core::sim::fixtures::{simple_plan, simple_scenario};
use corridor_core::sim::{
    aggregate_detector_counts, run_scenario, run_with_stats, signal_state, CorridorSpec, Direction,
    SamplerRanges, ScenarioSampler, SimOptions, TmcMode,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sampler(mode: TmcMode) -> ScenarioSampler {
    ScenarioSampler::new(CorridorSpec::default(), SamplerRanges::default(), mode, 1800.0).unwrap()
}

#[test]
fn sampled_runs_conserve_vehicles_and_keep_gaps() {
    let s = sampler(TmcMode::Mixed);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..8 {
        let scenario = s.sample(&mut rng).unwrap();
        let (log, stats) = run_with_stats(&scenario, &SimOptions::default()).unwrap();
        assert_eq!(log.spawned(), log.exited() + log.on_network());
        assert!(
            stats.min_gap >= scenario.behavior.min_gap - 0.1,
            "gap {} below min gap {}",
            stats.min_gap,
            scenario.behavior.min_gap
        );
        for v in &log.vehicles {
            if let (Some(entry), Some(exit)) = (v.entry, v.exit) {
                assert!(exit > entry);
                let vmax = scenario.corridor.speed_limit * v.speed_factor;
                let free_flow = scenario.corridor.corridor_length(v.direction) / vmax;
                assert!(exit - entry >= free_flow - 1e-9);
            }
        }
    }
}

#[test]
fn identical_scenarios_give_identical_logs() {
    let scenario = sampler(TmcMode::Random)
        .sample(&mut ChaCha8Rng::seed_from_u64(4))
        .unwrap();
    let mut a = Vec::new();
    let mut b = Vec::new();
    run_scenario(&scenario).unwrap().write_to(&mut a).unwrap();
    run_scenario(&scenario).unwrap().write_to(&mut b).unwrap();
    assert_eq!(a, b);
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn longer_all_red_does_not_speed_up_the_corridor() {
    let mut base_total = 0.0;
    let mut slow_total = 0.0;
    for seed in 0..20 {
        let mut base = simple_scenario(4, 500.0);
        base.seed = seed;
        base.duration = 1200.0;
        let mut slow = base.clone();
        for plan in &mut slow.plans {
            *plan = plan.with_extra_all_red(10.0);
        }
        let tt = |s| {
            let log = run_scenario(s).unwrap();
            let mut all = log.travel_times(Direction::East);
            all.extend(log.travel_times(Direction::West));
            mean(&all)
        };
        base_total += tt(&base);
        slow_total += tt(&slow);
    }
    assert!(
        slow_total >= base_total,
        "mean travel time fell from {} to {}",
        base_total / 20.0,
        slow_total / 20.0
    );
}

#[test]
fn adjacent_windows_add_up() {
    let log = run_scenario(&simple_scenario(3, 600.0)).unwrap();
    for k in 0..3 {
        for phase in 1..=8 {
            let whole = aggregate_detector_counts(&log, k, phase, 0.0, 900.0);
            let split = aggregate_detector_counts(&log, k, phase, 0.0, 412.5)
                + aggregate_detector_counts(&log, k, phase, 412.5, 900.0);
            assert_eq!(whole, split);
        }
    }
}

proptest! {
    #[test]
    fn signal_state_is_periodic(cycle in 150u32..=240, offset_frac in 0.0..1.0f64, t in 0.0..5000.0f64) {
        let cycle = f64::from(cycle);
        let plan = simple_plan(cycle, (offset_frac * cycle).floor());
        prop_assert_eq!(signal_state(&plan, t).unwrap(), signal_state(&plan, t + cycle).unwrap());
    }
}
