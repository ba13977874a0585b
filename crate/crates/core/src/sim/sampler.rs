//! Random scenario generation within the data-generation ranges.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

use super::scenario::{
    CorridorSpec, Demand, DrivingBehavior, PhaseTiming, Scenario, SideDemand, TimingPlan,
    TurningRatios, DEFAULT_RING1, DEFAULT_RING2,
};
use crate::error::{Error, Result};

/// Through-heavy turning template used in real mode.
pub const REAL_TMC: TurningRatios = [
    0.1, 0.8, 0.1, // EB
    0.1, 0.8, 0.1, // WB
    0.3, 0.4, 0.3, // NB
    0.3, 0.4, 0.3, // SB
];

const ARTERIAL_ALPHA: [f64; 3] = [1.0, 8.0, 1.0];
const SIDE_ALPHA: [f64; 3] = [1.0, 1.0, 1.0];
const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TmcMode {
    Real,
    Random,
    /// Real or random with equal probability per scenario.
    Mixed,
}

impl fmt::Display for TmcMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TmcMode::Real => "real",
            TmcMode::Random => "random",
            TmcMode::Mixed => "mixed",
        })
    }
}

impl FromStr for TmcMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(TmcMode::Real),
            "random" => Ok(TmcMode::Random),
            "mixed" => Ok(TmcMode::Mixed),
            other => Err(Error::Config(format!(
                "unknown tmc mode {other:?} (expected real, random or mixed)"
            ))),
        }
    }
}

/// Closed interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Span {
    pub min: f64,
    pub max: f64,
}

impl Span {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.min..=self.max).contains(&x)
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..=self.max)
        } else {
            self.min
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerRanges {
    /// Seconds; sampled as an integer.
    pub cycle: Span,
    pub accel: Span,
    pub decel: Span,
    pub emergency_decel: Span,
    pub min_gap: Span,
    pub sigma: Span,
    pub tau: Span,
    pub lc_strategic: Span,
    pub lc_cooperative: Span,
    pub lc_speed_gain: Span,
    pub speed_factor_mean: Span,
    pub speed_factor_stdev: Span,
    /// veh/h per arterial entry.
    pub arterial_demand: Span,
    /// veh/h per cross-street approach.
    pub side_demand: Span,
    /// Field minimum green per phase 1..8.
    pub min_green: [f64; 8],
    pub yellow: f64,
    pub all_red: f64,
}

impl Default for SamplerRanges {
    fn default() -> Self {
        Self {
            cycle: Span::new(150.0, 240.0),
            accel: Span::new(1.6, 3.6),
            decel: Span::new(3.0, 6.0),
            emergency_decel: Span::new(6.0, 12.0),
            min_gap: Span::new(1.0, 4.0),
            sigma: Span::new(0.1, 1.0),
            tau: Span::new(0.1, 3.0),
            lc_strategic: Span::new(0.1, 3.0),
            lc_cooperative: Span::new(0.1, 1.0),
            lc_speed_gain: Span::new(0.1, 3.0),
            speed_factor_mean: Span::new(1.0, 1.5),
            speed_factor_stdev: Span::new(0.1, 2.0),
            arterial_demand: Span::new(100.0, 400.0),
            side_demand: Span::new(30.0, 150.0),
            min_green: [7.0, 20.0, 7.0, 10.0, 7.0, 20.0, 7.0, 10.0],
            yellow: 4.0,
            all_red: 2.0,
        }
    }
}

impl SamplerRanges {
    fn behavior_spans(&self) -> [(&'static str, Span); 11] {
        [
            ("accel", self.accel),
            ("decel", self.decel),
            ("emergency_decel", self.emergency_decel),
            ("min_gap", self.min_gap),
            ("sigma", self.sigma),
            ("tau", self.tau),
            ("lc_strategic", self.lc_strategic),
            ("lc_cooperative", self.lc_cooperative),
            ("lc_speed_gain", self.lc_speed_gain),
            ("speed_factor_mean", self.speed_factor_mean),
            ("speed_factor_stdev", self.speed_factor_stdev),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let spans = self.behavior_spans().into_iter().chain([
            ("cycle", self.cycle),
            ("arterial_demand", self.arterial_demand),
            ("side_demand", self.side_demand),
        ]);
        for (name, span) in spans {
            if !(span.min.is_finite() && span.max.is_finite() && span.min <= span.max) {
                return Err(Error::Config(format!(
                    "ranges.{name}: [{}, {}] is not a valid interval",
                    span.min, span.max
                )));
            }
        }
        if self.cycle.min <= 0.0 || self.arterial_demand.min < 0.0 || self.side_demand.min < 0.0 {
            return Err(Error::Config("ranges: cycle and demands must be non-negative".into()));
        }
        if self.min_green.iter().any(|g| !(g.is_finite() && *g >= 0.0)) || self.min_green[1] <= 0.0 || self.min_green[5] <= 0.0 {
            return Err(Error::Config("ranges.min_green: invalid minimum green".into()));
        }
        if !(self.yellow >= 0.0 && self.all_red >= 0.0) {
            return Err(Error::Config("ranges: clearance times must be non-negative".into()));
        }
        Ok(())
    }

    /// Checks a behavior against the ranges, naming the first offender.
    pub fn check_behavior(&self, behavior: &DrivingBehavior) -> Result<()> {
        for ((name, span), value) in self.behavior_spans().into_iter().zip(behavior.all_values()) {
            if !span.contains(value) {
                return Err(Error::Config(format!(
                    "behavior.{name} = {value} outside [{}, {}]",
                    span.min, span.max
                )));
            }
        }
        Ok(())
    }
}

/// Draws complete scenarios for one corridor.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSampler {
    pub corridor: CorridorSpec,
    pub ranges: SamplerRanges,
    pub mode: TmcMode,
    pub duration: f64,
}

impl ScenarioSampler {
    pub fn new(corridor: CorridorSpec, ranges: SamplerRanges, mode: TmcMode, duration: f64) -> Result<Self> {
        corridor.validate()?;
        ranges.validate()?;
        if !(duration >= 2.0 * ranges.cycle.max) {
            return Err(Error::Config(format!(
                "duration {duration} s must cover two of the longest cycles ({} s)",
                2.0 * ranges.cycle.max
            )));
        }
        Ok(Self {
            corridor,
            ranges,
            mode,
            duration,
        })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<Scenario> {
        let k = self.corridor.intersections;
        let cycle = self.sample_cycle(rng)?;
        let plans = (0..k)
            .map(|_| self.sample_plan(rng, cycle))
            .collect::<Result<Vec<_>>>()?;
        let random_tmc = match self.mode {
            TmcMode::Real => false,
            TmcMode::Random => true,
            TmcMode::Mixed => rng.random_bool(0.5),
        };
        let tmc = (0..k)
            .map(|_| {
                if random_tmc {
                    random_ratios(rng)
                } else {
                    REAL_TMC
                }
            })
            .collect();
        let r = &self.ranges;
        let behavior = DrivingBehavior {
            accel: r.accel.sample(rng),
            decel: r.decel.sample(rng),
            emergency_decel: r.emergency_decel.sample(rng),
            min_gap: r.min_gap.sample(rng),
            sigma: r.sigma.sample(rng),
            tau: r.tau.sample(rng),
            lc_strategic: r.lc_strategic.sample(rng),
            lc_cooperative: r.lc_cooperative.sample(rng),
            lc_speed_gain: r.lc_speed_gain.sample(rng),
            speed_factor_mean: r.speed_factor_mean.sample(rng),
            speed_factor_stdev: r.speed_factor_stdev.sample(rng),
        };
        // Sampled ranges may overlap; keep the emergency limit physical.
        let behavior = DrivingBehavior {
            emergency_decel: behavior.emergency_decel.max(behavior.decel),
            ..behavior
        };
        let demand = Demand {
            eastbound: r.arterial_demand.sample(rng),
            westbound: r.arterial_demand.sample(rng),
            side: (0..k)
                .map(|_| SideDemand {
                    northbound: r.side_demand.sample(rng),
                    southbound: r.side_demand.sample(rng),
                })
                .collect(),
        };
        let scenario = Scenario {
            corridor: self.corridor.clone(),
            plans,
            tmc,
            behavior,
            demand,
            duration: self.duration,
            seed: rng.random(),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    fn clearance(&self) -> f64 {
        self.ranges.yellow + self.ranges.all_red
    }

    /// Shortest arterial and cross-street barrier groups over both rings.
    fn group_minimums(&self) -> (f64, f64) {
        let g = &self.ranges.min_green;
        let c = self.clearance();
        let a = (g[0] + g[1]).max(g[4] + g[5]) + 2.0 * c;
        let b = (g[2] + g[3]).max(g[6] + g[7]) + 2.0 * c;
        (a, b)
    }

    fn sample_cycle<R: Rng>(&self, rng: &mut R) -> Result<f64> {
        let (a, b) = self.group_minimums();
        let lo = self.ranges.cycle.min.ceil() as i64;
        let hi = self.ranges.cycle.max.floor() as i64;
        if hi < lo {
            return Err(Error::Config("ranges.cycle contains no whole second".into()));
        }
        for _ in 0..MAX_ATTEMPTS {
            let cycle = rng.random_range(lo..=hi) as f64;
            if a + b <= cycle {
                return Ok(cycle);
            }
        }
        Err(Error::Config(format!(
            "no feasible split after {MAX_ATTEMPTS} attempts: minimum greens need {} s per cycle",
            a + b
        )))
    }

    fn sample_plan<R: Rng>(&self, rng: &mut R, cycle: f64) -> Result<TimingPlan> {
        let (a_min, b_min) = self.group_minimums();
        let c = self.clearance();
        let min = &self.ranges.min_green;
        let barrier = Span::new(a_min, cycle - b_min).sample(rng);
        let mut phases = vec![
            PhaseTiming {
                min_green: 0.0,
                max_green: 0.0,
                yellow: self.ranges.yellow,
                all_red: self.ranges.all_red,
            };
            8
        ];
        // (group duration, first phase, second phase) for each ring and group.
        let groups = [
            (barrier, DEFAULT_RING1[0], DEFAULT_RING1[1]),
            (barrier, DEFAULT_RING2[0], DEFAULT_RING2[1]),
            (cycle - barrier, DEFAULT_RING1[2], DEFAULT_RING1[3]),
            (cycle - barrier, DEFAULT_RING2[2], DEFAULT_RING2[3]),
        ];
        for (total, p, q) in groups {
            let (mp, mq) = (min[usize::from(p) - 1], min[usize::from(q) - 1]);
            let green = total - 2.0 * c;
            let gp = Span::new(mp, green - mq).sample(rng);
            for (phase, m, g) in [(p, mp, gp), (q, mq, green - gp)] {
                let timing = &mut phases[usize::from(phase) - 1];
                timing.min_green = m;
                timing.max_green = g;
            }
        }
        let offset = rng.random_range(0..cycle as i64) as f64;
        let plan = TimingPlan {
            cycle,
            offset,
            phases,
            ring1: DEFAULT_RING1,
            ring2: DEFAULT_RING2,
        };
        plan.validate()?;
        Ok(plan)
    }
}

fn random_ratios<R: Rng>(rng: &mut R) -> TurningRatios {
    let arterial = Dirichlet::new(ARTERIAL_ALPHA).expect("valid concentration");
    let side = Dirichlet::new(SIDE_ALPHA).expect("valid concentration");
    let mut ratios = [0.0; 12];
    for (i, chunk) in ratios.chunks_mut(3).enumerate() {
        let draw = if i < 2 {
            arterial.sample(rng)
        } else {
            side.sample(rng)
        };
        let total: f64 = draw.iter().sum();
        chunk[0] = draw[0] / total;
        chunk[1] = draw[1] / total;
        chunk[2] = 1.0 - chunk[0] - chunk[1];
    }
    ratios
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sampler(mode: TmcMode) -> ScenarioSampler {
        ScenarioSampler::new(CorridorSpec::default(), SamplerRanges::default(), mode, 1800.0).unwrap()
    }

    #[test]
    fn cycles_stay_in_range() {
        let s = sampler(TmcMode::Real);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let sc = s.sample(&mut rng).unwrap();
            assert!((150.0..=240.0).contains(&sc.cycle()));
            for plan in &sc.plans {
                assert!(plan.offset >= 0.0 && plan.offset < plan.cycle);
                for p in &plan.phases {
                    assert!(p.max_green >= p.min_green);
                }
            }
            s.ranges.check_behavior(&sc.behavior).unwrap();
        }
    }

    #[test]
    fn same_seed_same_scenario() {
        let s = sampler(TmcMode::Mixed);
        let a = s.sample(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = s.sample(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_ratios_are_on_the_simplex() {
        let s = sampler(TmcMode::Random);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let sc = s.sample(&mut rng).unwrap();
            assert_ne!(sc.tmc[0], REAL_TMC);
            for ratios in &sc.tmc {
                for approach in ratios.chunks(3) {
                    assert!((approach.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                    assert!(approach.iter().all(|r| (0.0..=1.0).contains(r)));
                }
            }
        }
    }

    #[test]
    fn infeasible_minimum_greens_fail() {
        let ranges = SamplerRanges {
            min_green: [60.0; 8],
            ..SamplerRanges::default()
        };
        let s = ScenarioSampler::new(CorridorSpec::default(), ranges, TmcMode::Real, 1800.0).unwrap();
        let err = s.sample(&mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(err.to_string().contains("no feasible split"), "{err}");
    }

    #[test]
    fn behavior_outside_ranges_is_rejected() {
        let ranges = SamplerRanges::default();
        let mut b = DrivingBehavior::default();
        b.tau = 3.5;
        assert!(ranges.check_behavior(&b).is_err());
    }

    #[test]
    fn mode_parses() {
        assert_eq!("mixed".parse::<TmcMode>().unwrap(), TmcMode::Mixed);
        assert!("other".parse::<TmcMode>().is_err());
    }
}
