//! Scenario description: corridor geometry, signal timing, turning ratios,
//! driving behavior and demand for one simulation run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Travel direction along the arterial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    East,
    West,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::East, Direction::West];

    pub fn index(self) -> usize {
        match self {
            Direction::East => 0,
            Direction::West => 1,
        }
    }

    /// NEMA through phase serving this direction.
    pub fn through_phase(self) -> u8 {
        match self {
            Direction::East => 2,
            Direction::West => 6,
        }
    }

    pub fn approach(self) -> Approach {
        match self {
            Direction::East => Approach::Eastbound,
            Direction::West => Approach::Westbound,
        }
    }
}

/// Intersection approach, in turning-movement vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Approach {
    Eastbound,
    Westbound,
    Northbound,
    Southbound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Movement {
    Left,
    Through,
    Right,
}

impl Movement {
    pub const ALL: [Movement; 3] = [Movement::Left, Movement::Through, Movement::Right];
}

impl Approach {
    pub fn index(self) -> usize {
        match self {
            Approach::Eastbound => 0,
            Approach::Westbound => 1,
            Approach::Northbound => 2,
            Approach::Southbound => 3,
        }
    }

    /// Offset of this approach's (left, through, right) ratios in a
    /// 12-entry turning-movement vector.
    pub fn tmc_offset(self) -> usize {
        3 * self.index()
    }

    /// NEMA phase controlling `movement` from this approach. Right turns
    /// run with the through phase.
    ///
    /// Arterial: 2 = EB through, 5 = EB left, 6 = WB through, 1 = WB left.
    /// Cross street: 8 = NB through, 3 = NB left, 4 = SB through, 7 = SB left.
    pub fn phase(self, movement: Movement) -> u8 {
        match (self, movement) {
            (Approach::Eastbound, Movement::Left) => 5,
            (Approach::Eastbound, _) => 2,
            (Approach::Westbound, Movement::Left) => 1,
            (Approach::Westbound, _) => 6,
            (Approach::Northbound, Movement::Left) => 3,
            (Approach::Northbound, _) => 8,
            (Approach::Southbound, Movement::Left) => 7,
            (Approach::Southbound, _) => 4,
        }
    }

    /// Arterial direction a cross-street vehicle joins after turning, if any.
    pub fn joins(self, movement: Movement) -> Option<Direction> {
        match (self, movement) {
            (Approach::Northbound, Movement::Right) | (Approach::Southbound, Movement::Left) => {
                Some(Direction::East)
            }
            (Approach::Northbound, Movement::Left) | (Approach::Southbound, Movement::Right) => {
                Some(Direction::West)
            }
            _ => None,
        }
    }
}

/// Geometry of a corridor of `intersections` signals numbered west to east.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorridorSpec {
    pub intersections: usize,
    /// Distance from intersection `k` to `k + 1` travelling east, m.
    pub eastbound_lengths: Vec<f64>,
    /// Distance from intersection `k + 1` to `k` travelling west, m.
    pub westbound_lengths: Vec<f64>,
    /// Detector distance upstream of each stop line, m.
    pub detector_setback: f64,
    /// m/s
    pub speed_limit: f64,
    #[serde(default = "default_vehicle_length")]
    pub vehicle_length: f64,
    /// Road beyond the last stop line before vehicles leave, m.
    #[serde(default = "default_exit_length")]
    pub exit_length: f64,
}

fn default_vehicle_length() -> f64 {
    5.0
}

fn default_exit_length() -> f64 {
    100.0
}

/// Closest a clamped detector may sit to the upstream stop line, m.
const MIN_DETECTOR_CLEARANCE: f64 = 10.0;

impl Default for CorridorSpec {
    fn default() -> Self {
        let lengths = vec![420.0, 380.0, 560.0, 300.0, 480.0, 350.0, 510.0];
        Self {
            intersections: 8,
            eastbound_lengths: lengths.clone(),
            westbound_lengths: lengths,
            detector_setback: 500.0,
            speed_limit: 17.9,
            vehicle_length: default_vehicle_length(),
            exit_length: default_exit_length(),
        }
    }
}

impl CorridorSpec {
    /// A corridor with the same segment length in both directions.
    pub fn uniform(intersections: usize, length: f64) -> Self {
        let lengths = vec![length; intersections.saturating_sub(1)];
        Self {
            intersections,
            eastbound_lengths: lengths.clone(),
            westbound_lengths: lengths,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.intersections < 2 {
            return Err(Error::Config(format!(
                "corridor needs at least 2 intersections, got {}",
                self.intersections
            )));
        }
        for (name, lengths) in [
            ("eastbound_lengths", &self.eastbound_lengths),
            ("westbound_lengths", &self.westbound_lengths),
        ] {
            if lengths.len() != self.intersections - 1 {
                return Err(Error::Config(format!(
                    "{name} has {} entries, expected {}",
                    lengths.len(),
                    self.intersections - 1
                )));
            }
            if let Some(bad) = lengths
                .iter()
                .find(|&&l| !(l.is_finite() && l > 2.0 * MIN_DETECTOR_CLEARANCE))
            {
                return Err(Error::Config(format!(
                    "{name}: segment length {bad} m must exceed {} m",
                    2.0 * MIN_DETECTOR_CLEARANCE
                )));
            }
        }
        for (name, value) in [
            ("detector_setback", self.detector_setback),
            ("speed_limit", self.speed_limit),
            ("vehicle_length", self.vehicle_length),
            ("exit_length", self.exit_length),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {value}")));
            }
        }
        Ok(())
    }

    /// Segment lengths in the order a vehicle travelling `direction` meets
    /// them.
    pub fn lengths_in_travel_order(&self, direction: Direction) -> Vec<f64> {
        match direction {
            Direction::East => self.eastbound_lengths.clone(),
            Direction::West => self.westbound_lengths.iter().rev().copied().collect(),
        }
    }

    /// Intersections in the order a vehicle travelling `direction` meets them.
    pub fn travel_order(&self, direction: Direction) -> Vec<usize> {
        match direction {
            Direction::East => (0..self.intersections).collect(),
            Direction::West => (0..self.intersections).rev().collect(),
        }
    }

    /// Length of the link feeding `intersection` for `direction` traffic:
    /// the upstream segment, or the detector approach at the corridor entry.
    pub fn approach_length(&self, intersection: usize, direction: Direction) -> f64 {
        match direction {
            Direction::East if intersection == 0 => self.detector_setback,
            Direction::East => self.eastbound_lengths[intersection - 1],
            Direction::West if intersection + 1 == self.intersections => self.detector_setback,
            Direction::West => self.westbound_lengths[intersection],
        }
    }

    /// Detector setback actually used on an approach. Setbacks longer than
    /// the upstream segment are clamped to leave `MIN_DETECTOR_CLEARANCE`.
    pub fn effective_setback(&self, intersection: usize, direction: Direction) -> f64 {
        let entry = match direction {
            Direction::East => intersection == 0,
            Direction::West => intersection + 1 == self.intersections,
        };
        if entry {
            return self.detector_setback;
        }
        let available = self.approach_length(intersection, direction) - MIN_DETECTOR_CLEARANCE;
        self.detector_setback.min(available)
    }

    /// Distance between the first and last stop lines.
    pub fn corridor_length(&self, direction: Direction) -> f64 {
        self.lengths_in_travel_order(direction).iter().sum()
    }
}

/// Timing of one NEMA phase. `max_green` is the green the phase actually
/// receives under fixed-time operation; `min_green` is the field minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseTiming {
    pub min_green: f64,
    pub max_green: f64,
    pub yellow: f64,
    pub all_red: f64,
}

impl PhaseTiming {
    /// Green plus clearance.
    pub fn interval(&self) -> f64 {
        self.max_green + self.yellow + self.all_red
    }
}

/// Dual-ring, single-barrier fixed-time plan for one intersection.
///
/// Local time zero (at `offset` in corridor time) is the start of the first
/// phase of each ring. The first two phases of each ring form the arterial
/// barrier group, the last two the cross-street group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingPlan {
    pub cycle: f64,
    pub offset: f64,
    /// Indexed by NEMA phase number minus one.
    pub phases: Vec<PhaseTiming>,
    pub ring1: [u8; 4],
    pub ring2: [u8; 4],
}

pub const DEFAULT_RING1: [u8; 4] = [2, 1, 3, 4];
pub const DEFAULT_RING2: [u8; 4] = [6, 5, 7, 8];

const TIMING_TOLERANCE: f64 = 1e-6;

impl TimingPlan {
    pub fn phase(&self, phase: u8) -> &PhaseTiming {
        &self.phases[usize::from(phase) - 1]
    }

    pub fn phase_mut(&mut self, phase: u8) -> &mut PhaseTiming {
        &mut self.phases[usize::from(phase) - 1]
    }

    pub fn rings(&self) -> [[u8; 4]; 2] {
        [self.ring1, self.ring2]
    }

    /// Duration of the arterial barrier group in `ring`.
    fn group_a(&self, ring: &[u8; 4]) -> f64 {
        ring[..2].iter().map(|&p| self.phase(p).interval()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("timing plan: {msg}")));
        if !(self.cycle.is_finite() && self.cycle > 0.0) {
            return fail(format!("cycle {} must be positive", self.cycle));
        }
        if !(0.0..self.cycle).contains(&self.offset) {
            return fail(format!(
                "offset {} outside [0, {})",
                self.offset, self.cycle
            ));
        }
        if self.phases.len() != 8 {
            return fail(format!("expected 8 phases, got {}", self.phases.len()));
        }
        for (i, p) in self.phases.iter().enumerate() {
            let values = [p.min_green, p.max_green, p.yellow, p.all_red];
            if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return fail(format!("phase {} has a negative or non-finite time", i + 1));
            }
            if p.min_green > p.max_green + TIMING_TOLERANCE {
                return fail(format!(
                    "phase {}: min green {} exceeds max green {}",
                    i + 1,
                    p.min_green,
                    p.max_green
                ));
            }
        }
        for (ring, groups) in [
            (&self.ring1, [[1u8, 2], [3, 4]]),
            (&self.ring2, [[5, 6], [7, 8]]),
        ] {
            let mut a = [ring[0], ring[1]];
            let mut b = [ring[2], ring[3]];
            a.sort_unstable();
            b.sort_unstable();
            if a != groups[0] || b != groups[1] {
                return fail(format!(
                    "ring order {ring:?} must list phases {:?} then {:?}",
                    groups[0], groups[1]
                ));
            }
            let total: f64 = ring.iter().map(|&p| self.phase(p).interval()).sum();
            if (total - self.cycle).abs() > TIMING_TOLERANCE {
                return fail(format!(
                    "ring {ring:?} sums to {total} s, cycle is {} s",
                    self.cycle
                ));
            }
        }
        let (a1, a2) = (self.group_a(&self.ring1), self.group_a(&self.ring2));
        if (a1 - a2).abs() > TIMING_TOLERANCE {
            return fail(format!(
                "rings reach the barrier at different times ({a1} s vs {a2} s)"
            ));
        }
        for coordinated in [2u8, 6] {
            if self.phase(coordinated).max_green <= 0.0 {
                return fail(format!("coordinated phase {coordinated} has no green"));
            }
        }
        Ok(())
    }

    /// Adds `extra` seconds of all-red to every phase. Greens stay fixed, so
    /// the cycle grows by four clearances.
    pub fn with_extra_all_red(&self, extra: f64) -> Self {
        let mut plan = self.clone();
        for p in &mut plan.phases {
            p.all_red += extra;
        }
        plan.cycle += 4.0 * extra;
        plan
    }
}

/// Driving-behavior parameters shared by every vehicle of a run. The
/// lane-change fields are carried as features only; single-lane dynamics
/// never consult them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivingBehavior {
    pub accel: f64,
    pub decel: f64,
    pub emergency_decel: f64,
    pub min_gap: f64,
    pub sigma: f64,
    pub tau: f64,
    pub lc_strategic: f64,
    pub lc_cooperative: f64,
    pub lc_speed_gain: f64,
    pub speed_factor_mean: f64,
    pub speed_factor_stdev: f64,
}

impl Default for DrivingBehavior {
    fn default() -> Self {
        Self {
            accel: 2.6,
            decel: 4.5,
            emergency_decel: 9.0,
            min_gap: 2.5,
            sigma: 0.5,
            tau: 1.0,
            lc_strategic: 1.0,
            lc_cooperative: 1.0,
            lc_speed_gain: 1.0,
            speed_factor_mean: 1.0,
            speed_factor_stdev: 0.1,
        }
    }
}

impl DrivingBehavior {
    /// Physical sanity only; sampled behaviors additionally stay inside
    /// the sampler ranges.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("accel", self.accel),
            ("decel", self.decel),
            ("emergency_decel", self.emergency_decel),
            ("tau", self.tau),
            ("speed_factor_mean", self.speed_factor_mean),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("behavior.{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(Error::Config(format!(
                "behavior.sigma must lie in [0, 1], got {}",
                self.sigma
            )));
        }
        if !(self.min_gap.is_finite() && self.min_gap >= 0.0) {
            return Err(Error::Config("behavior.min_gap must be non-negative".into()));
        }
        if !(self.speed_factor_stdev.is_finite() && self.speed_factor_stdev >= 0.0) {
            return Err(Error::Config(
                "behavior.speed_factor_stdev must be non-negative".into(),
            ));
        }
        if self.emergency_decel < self.decel {
            return Err(Error::Config(
                "behavior.emergency_decel must be at least decel".into(),
            ));
        }
        Ok(())
    }

    /// All eleven parameters in a fixed order.
    pub fn all_values(&self) -> [f64; 11] {
        [
            self.accel,
            self.decel,
            self.emergency_decel,
            self.min_gap,
            self.sigma,
            self.tau,
            self.lc_strategic,
            self.lc_cooperative,
            self.lc_speed_gain,
            self.speed_factor_mean,
            self.speed_factor_stdev,
        ]
    }

    /// The longitudinal subset: accel, decel, min_gap, sigma, tau.
    pub fn longitudinal_values(&self) -> [f64; 5] {
        [self.accel, self.decel, self.min_gap, self.sigma, self.tau]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideDemand {
    pub northbound: f64,
    pub southbound: f64,
}

/// Arrival rates in vehicles per hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demand {
    /// Entering at the west end of the corridor.
    pub eastbound: f64,
    /// Entering at the east end of the corridor.
    pub westbound: f64,
    /// Cross-street approaches, one entry per intersection.
    pub side: Vec<SideDemand>,
}

impl Demand {
    pub fn zero(intersections: usize) -> Self {
        Self {
            eastbound: 0.0,
            westbound: 0.0,
            side: vec![
                SideDemand {
                    northbound: 0.0,
                    southbound: 0.0,
                };
                intersections
            ],
        }
    }

    pub fn arterial(&self, direction: Direction) -> f64 {
        match direction {
            Direction::East => self.eastbound,
            Direction::West => self.westbound,
        }
    }
}

/// Turning-movement ratios of one intersection: (left, through, right) for
/// the EB, WB, NB and SB approaches.
pub type TurningRatios = [f64; 12];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub corridor: CorridorSpec,
    pub plans: Vec<TimingPlan>,
    pub tmc: Vec<TurningRatios>,
    pub behavior: DrivingBehavior,
    pub demand: Demand,
    /// Seconds during which vehicles arrive.
    pub duration: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn cycle(&self) -> f64 {
        self.plans.first().map_or(0.0, |p| p.cycle)
    }

    pub fn validate(&self) -> Result<()> {
        self.corridor.validate()?;
        let k = self.corridor.intersections;
        if self.plans.len() != k {
            return Err(Error::Config(format!(
                "{} timing plans for {k} intersections",
                self.plans.len()
            )));
        }
        for (i, plan) in self.plans.iter().enumerate() {
            plan.validate()
                .map_err(|e| Error::Config(format!("intersection {i}: {e}")))?;
            if (plan.cycle - self.cycle()).abs() > TIMING_TOLERANCE {
                return Err(Error::Config(format!(
                    "intersection {i} cycle {} differs from the common cycle {}",
                    plan.cycle,
                    self.cycle()
                )));
            }
        }
        if self.tmc.len() != k {
            return Err(Error::Config(format!(
                "{} turning-ratio vectors for {k} intersections",
                self.tmc.len()
            )));
        }
        for (i, ratios) in self.tmc.iter().enumerate() {
            if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(Error::Config(format!(
                    "intersection {i}: turning ratios must lie in [0, 1]"
                )));
            }
            for approach in ratios.chunks(3) {
                let total: f64 = approach.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "intersection {i}: approach ratios {approach:?} sum to {total}"
                    )));
                }
            }
        }
        self.behavior.validate()?;
        let d = &self.demand;
        if d.side.len() != k {
            return Err(Error::Config(format!(
                "{} side-street demands for {k} intersections",
                d.side.len()
            )));
        }
        let rates = [d.eastbound, d.westbound]
            .into_iter()
            .chain(d.side.iter().flat_map(|s| [s.northbound, s.southbound]));
        for rate in rates {
            if !(rate.is_finite() && rate >= 0.0) {
                return Err(Error::Config(format!("demand {rate} must be non-negative")));
            }
        }
        if !(self.duration >= 2.0 * self.cycle()) {
            return Err(Error::Config(format!(
                "duration {} s is shorter than two cycles ({} s)",
                self.duration,
                2.0 * self.cycle()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::fixtures::{simple_plan, simple_scenario};

    #[test]
    fn phase_map_covers_all_eight_phases() {
        let mut seen = Vec::new();
        for a in [
            Approach::Eastbound,
            Approach::Westbound,
            Approach::Northbound,
            Approach::Southbound,
        ] {
            for m in [Movement::Left, Movement::Through] {
                seen.push(a.phase(m));
            }
        }
        seen.sort_unstable();
        assert_eq!(seen, vec![1, 2, 3, 4, 5, 6, 7, 8]);
    }

    #[test]
    fn short_segments_clamp_the_detector() {
        let mut c = CorridorSpec::uniform(3, 300.0);
        c.detector_setback = 500.0;
        assert_eq!(c.effective_setback(0, Direction::East), 500.0);
        assert_eq!(c.effective_setback(1, Direction::East), 290.0);
        assert_eq!(c.effective_setback(2, Direction::West), 500.0);
        assert_eq!(c.effective_setback(0, Direction::West), 290.0);
    }

    #[test]
    fn plan_validation() {
        let plan = simple_plan(180.0, 30.0);
        plan.validate().unwrap();

        let mut bad = plan.clone();
        bad.offset = 180.0;
        assert!(bad.validate().is_err());

        let mut bad = plan.clone();
        bad.phase_mut(2).max_green += 5.0;
        assert!(bad.validate().is_err(), "ring no longer sums to the cycle");

        let mut bad = plan.clone();
        bad.phase_mut(2).max_green += 5.0;
        bad.phase_mut(3).max_green -= 5.0;
        assert!(bad.validate().is_err(), "barrier misaligned between rings");

        let mut bad = plan.clone();
        bad.phase_mut(4).min_green = bad.phase(4).max_green + 1.0;
        assert!(bad.validate().is_err());

        let mut bad = plan;
        bad.ring1 = [3, 1, 2, 4];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn extra_all_red_keeps_the_plan_valid() {
        let plan = simple_plan(200.0, 0.0);
        plan.with_extra_all_red(5.0).validate().unwrap();
    }

    #[test]
    fn scenario_validation_catches_bad_ratios_and_duration() {
        let s = simple_scenario(4, 100.0);
        s.validate().unwrap();

        let mut bad = s.clone();
        bad.tmc[1][0] = 0.5;
        assert!(bad.validate().is_err());

        let mut bad = s.clone();
        bad.duration = s.cycle();
        assert!(bad.validate().is_err());

        let mut bad = s;
        bad.demand.eastbound = -1.0;
        assert!(bad.validate().is_err());
    }
}
