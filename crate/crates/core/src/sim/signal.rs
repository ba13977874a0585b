//! Fixed-time dual-ring signal controller.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::scenario::TimingPlan;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Indication {
    Green,
    Yellow,
    Red,
}

/// Set of NEMA phases, bit `p - 1` for phase `p`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const ALL: PhaseSet = PhaseSet(0xff);

    pub fn from_phases(phases: &[u8]) -> Self {
        let mut set = PhaseSet::default();
        for &p in phases {
            set.insert(p);
        }
        set
    }

    pub fn insert(&mut self, phase: u8) {
        debug_assert!((1..=8).contains(&phase));
        self.0 |= 1 << (phase - 1);
    }

    pub fn contains(self, phase: u8) -> bool {
        (1..=8).contains(&phase) && self.0 & (1 << (phase - 1)) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn phases(self) -> impl Iterator<Item = u8> {
        (1..=8).filter(move |&p| self.contains(p))
    }
}

impl fmt::Debug for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.phases()).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PhaseWindow {
    start: f64,
    green: f64,
    yellow: f64,
}

/// Precomputed phase windows for one intersection. Each ring starts its
/// first phase at local time zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTable {
    cycle: f64,
    offset: f64,
    windows: [PhaseWindow; 8],
    hold_green: bool,
}

impl SignalTable {
    pub fn new(plan: &TimingPlan) -> Result<Self> {
        plan.validate()?;
        let empty = PhaseWindow {
            start: 0.0,
            green: 0.0,
            yellow: 0.0,
        };
        let mut windows = [empty; 8];
        for ring in plan.rings() {
            let mut start = 0.0;
            for p in ring {
                let timing = plan.phase(p);
                windows[usize::from(p) - 1] = PhaseWindow {
                    start,
                    green: timing.max_green,
                    yellow: timing.yellow,
                };
                start += timing.interval();
            }
        }
        Ok(Self {
            cycle: plan.cycle,
            offset: plan.offset,
            windows,
            hold_green: false,
        })
    }

    /// Every phase green at all times.
    pub fn held_green(plan: &TimingPlan) -> Result<Self> {
        let mut table = Self::new(plan)?;
        table.hold_green = true;
        Ok(table)
    }

    pub fn cycle(&self) -> f64 {
        self.cycle
    }

    /// `(t - offset) mod cycle`, snapped to a nanosecond grid so that `t`
    /// and `t + cycle` land on the same side of every phase boundary.
    pub fn local_time(&self, t: f64) -> f64 {
        let local = ((t - self.offset).rem_euclid(self.cycle) * 1e9).round() / 1e9;
        if local >= self.cycle {
            local - self.cycle
        } else {
            local
        }
    }

    pub fn indication(&self, phase: u8, t: f64) -> Indication {
        if self.hold_green {
            return Indication::Green;
        }
        let w = &self.windows[usize::from(phase) - 1];
        let into = self.local_time(t) - w.start;
        if (0.0..w.green).contains(&into) {
            Indication::Green
        } else if (w.green..w.green + w.yellow).contains(&into) {
            Indication::Yellow
        } else {
            Indication::Red
        }
    }

    pub fn green_phases(&self, t: f64) -> PhaseSet {
        let mut set = PhaseSet::default();
        for p in 1..=8 {
            if self.indication(p, t) == Indication::Green {
                set.insert(p);
            }
        }
        set
    }
}

/// Green phases of both rings at corridor time `t`.
pub fn signal_state(plan: &TimingPlan, t: f64) -> Result<PhaseSet> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Config(format!("signal time {t} must be non-negative")));
    }
    Ok(SignalTable::new(plan)?.green_phases(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::fixtures::simple_plan;

    #[test]
    fn cycle_starts_with_coordinated_phases() {
        let plan = simple_plan(180.0, 37.0);
        assert_eq!(
            signal_state(&plan, 37.0).unwrap(),
            PhaseSet::from_phases(&[2, 6])
        );
    }

    #[test]
    fn state_is_periodic() {
        let plan = simple_plan(160.0, 12.5);
        for i in 0..800 {
            let t = i as f64 * 0.7;
            assert_eq!(
                signal_state(&plan, t).unwrap(),
                signal_state(&plan, t + plan.cycle).unwrap()
            );
        }
    }

    #[test]
    fn sweep_matches_assigned_greens() {
        let plan = simple_plan(200.0, 45.0);
        let table = SignalTable::new(&plan).unwrap();
        let dt = 0.01;
        let steps = (plan.cycle / dt).round() as usize;
        let mut green_time = [0.0; 8];
        for i in 0..steps {
            let t = plan.offset + i as f64 * dt;
            let greens = table.green_phases(t);
            let ring1 = greens.phases().filter(|p| *p <= 4).count();
            let ring2 = greens.phases().filter(|p| *p > 4).count();
            assert!(ring1 <= 1 && ring2 <= 1, "{greens:?} at {t}");
            let arterial = |p: u8| matches!(p, 1 | 2 | 5 | 6);
            let phases: Vec<u8> = greens.phases().collect();
            assert!(
                phases.iter().all(|&p| arterial(p)) || phases.iter().all(|&p| !arterial(p)),
                "barrier crossed: {greens:?} at {t}"
            );
            for p in greens.phases() {
                green_time[usize::from(p) - 1] += dt;
            }
        }
        for p in 1..=8u8 {
            let timing = plan.phase(p);
            let g = green_time[usize::from(p) - 1];
            assert!(
                g >= timing.min_green - 2.0 * dt && g <= timing.max_green + 2.0 * dt,
                "phase {p}: {g} s green"
            );
        }
    }

    #[test]
    fn malformed_plan_is_a_config_error() {
        let mut plan = simple_plan(180.0, 0.0);
        plan.cycle = 170.0;
        let err = signal_state(&plan, 0.0).unwrap_err();
        assert_eq!(err.kind(), crate::error::ErrorKind::Config);
    }

    #[test]
    fn held_green_is_always_green() {
        let table = SignalTable::held_green(&simple_plan(180.0, 0.0)).unwrap();
        assert_eq!(table.green_phases(91.0), PhaseSet::ALL);
    }
}
