//! Fixed-step single-lane corridor simulation with Krauss car following.
//!
//! Each direction is one lane measured from the upstream corridor end. A
//! boundary vehicle enters at position 0, crosses the entry detector and
//! then the stop lines in travel order. Turning vehicles leave at their turn
//! pocket, upstream of the stop line, so only through vehicles are held by
//! the signal. Cross-street vehicles that turn onto the arterial join just
//! downstream of the stop line when their phase is green.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use super::log::{DetectorEvent, LogHeader, Origin, SimulationLog, VehicleRecord, LOG_SCHEMA_VERSION};
use super::scenario::{Approach, Direction, Movement, Scenario, TurningRatios};
use super::signal::{Indication, SignalTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub timestep: f64,
    /// Extra time after arrivals stop for the network to empty.
    pub drain_limit: f64,
    /// Ignore the timing plans and keep every phase green.
    pub hold_green: bool,
    pub gridlock_cycles: usize,
    /// Cap on boundary arrivals per direction.
    pub spawn_limit: Option<usize>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            timestep: 0.5,
            drain_limit: 1800.0,
            hold_green: false,
            gridlock_cycles: 10,
            spawn_limit: None,
        }
    }
}

const SPEED_FACTOR_BOUNDS: (f64, f64) = (0.2, 2.0);
const SIDE_HEADWAY: f64 = 2.0;
const MAX_POCKET: f64 = 60.0;
/// Distance from the corridor end to the entry detector, m.
const ENTRY_LEAD: f64 = 10.0;

pub fn run_scenario(scenario: &Scenario) -> Result<SimulationLog> {
    run_scenario_with(scenario, &SimOptions::default())
}

pub fn run_scenario_with(scenario: &Scenario, options: &SimOptions) -> Result<SimulationLog> {
    run_with_stats(scenario, options).map(|(log, _)| log)
}

/// Diagnostics collected alongside the log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimStats {
    pub steps: u64,
    /// Smallest bumper-to-bumper gap between consecutive vehicles, m.
    pub min_gap: f64,
}

pub fn run_with_stats(scenario: &Scenario, options: &SimOptions) -> Result<(SimulationLog, SimStats)> {
    scenario.validate()?;
    if !(options.timestep > 0.0 && options.drain_limit >= 0.0) {
        return Err(Error::Config("timestep must be positive and drain limit non-negative".into()));
    }
    Engine::new(scenario, options)?.run()
}

/// Draws a speed factor from the truncated normal by resampling.
pub fn sample_speed_factor<R: Rng>(rng: &mut R, mean: f64, stdev: f64) -> f64 {
    let (lo, hi) = SPEED_FACTOR_BOUNDS;
    if stdev <= 0.0 {
        return mean.clamp(lo, hi);
    }
    let normal = Normal::new(mean, stdev).expect("stdev is positive");
    for _ in 0..1000 {
        let x = normal.sample(rng);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
    mean.clamp(lo, hi)
}

fn choose_movement(ratios: &TurningRatios, approach: Approach, u: f64) -> Movement {
    let o = approach.tmc_offset();
    if u < ratios[o] {
        Movement::Left
    } else if u < ratios[o] + ratios[o + 1] {
        Movement::Through
    } else {
        Movement::Right
    }
}

/// Krauss safe speed behind a leader at `gap` moving at `v_leader`.
fn safe_speed(v: f64, v_leader: f64, gap: f64, decel: f64, tau: f64) -> f64 {
    v_leader + (gap - v_leader * tau) / ((v + v_leader) / (2.0 * decel) + tau)
}

#[derive(Debug, Clone)]
struct Vehicle {
    id: usize,
    x: f64,
    v: f64,
    vmax: f64,
    /// Movement at each intersection, in travel order.
    route: Vec<Movement>,
    /// Travel-order index of the next stop line.
    next: usize,
    detected: bool,
    /// Committed to clearing the next stop line on yellow or red.
    committed: bool,
}

#[derive(Debug)]
struct Lane {
    direction: Direction,
    /// Intersection ids in travel order.
    order: Vec<usize>,
    stops: Vec<f64>,
    detectors: Vec<f64>,
    pockets: Vec<f64>,
    exit: f64,
    /// Front vehicle first.
    vehicles: Vec<Vehicle>,
    waiting: VecDeque<Vehicle>,
}

impl Lane {
    fn new(scenario: &Scenario, direction: Direction) -> Self {
        let c = &scenario.corridor;
        let order = c.travel_order(direction);
        let lengths = c.lengths_in_travel_order(direction);
        let mut stops = vec![c.detector_setback + ENTRY_LEAD];
        for l in &lengths {
            stops.push(stops.last().unwrap() + l);
        }
        let setbacks: Vec<f64> = order
            .iter()
            .map(|&k| c.effective_setback(k, direction))
            .collect();
        for (&k, &s) in order.iter().zip(&setbacks) {
            if s < c.detector_setback {
                log::debug!("{direction:?} detector at intersection {k} clamped to {s} m");
            }
        }
        let detectors = stops.iter().zip(&setbacks).map(|(s, b)| s - b).collect();
        let pockets = stops
            .iter()
            .zip(&setbacks)
            .map(|(s, b)| s - MAX_POCKET.min(0.5 * b))
            .collect();
        let exit = stops.last().unwrap() + c.exit_length;
        Self {
            direction,
            order,
            stops,
            detectors,
            pockets,
            exit,
            vehicles: Vec::new(),
            waiting: VecDeque::new(),
        }
    }

    fn position_of(&self, intersection: usize) -> usize {
        self.order
            .iter()
            .position(|&k| k == intersection)
            .expect("intersection on corridor")
    }
}

#[derive(Debug, Clone)]
struct Arrival {
    time: f64,
    source: usize,
    kind: ArrivalKind,
}

#[derive(Debug, Clone)]
enum ArrivalKind {
    Boundary {
        direction: Direction,
        speed_factor: f64,
        route: Vec<Movement>,
    },
    Side {
        intersection: usize,
        approach: Approach,
        movement: Movement,
        speed_factor: f64,
        route: Vec<Movement>,
    },
}

#[derive(Debug)]
struct SideQueue {
    intersection: usize,
    approach: Approach,
    movement: Movement,
    direction: Direction,
    /// (ready time, vehicle)
    vehicles: VecDeque<(f64, Vehicle)>,
    last_service: f64,
}

struct Engine<'s> {
    scenario: &'s Scenario,
    options: &'s SimOptions,
    signals: Vec<SignalTable>,
    lanes: [Lane; 2],
    side: Vec<SideQueue>,
    arrivals: Vec<Arrival>,
    records: Vec<VehicleRecord>,
    events: Vec<DetectorEvent>,
    rng: ChaCha8Rng,
    /// Smallest bumper-to-bumper gap seen at the end of any step.
    min_gap: f64,
}

impl<'s> Engine<'s> {
    fn new(scenario: &'s Scenario, options: &'s SimOptions) -> Result<Self> {
        let signals = scenario
            .plans
            .iter()
            .map(|p| {
                if options.hold_green {
                    SignalTable::held_green(p)
                } else {
                    SignalTable::new(p)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut side = Vec::new();
        for k in 0..scenario.corridor.intersections {
            for approach in [Approach::Northbound, Approach::Southbound] {
                for movement in [Movement::Left, Movement::Right] {
                    let direction = approach.joins(movement).expect("turns join the arterial");
                    side.push(SideQueue {
                        intersection: k,
                        approach,
                        movement,
                        direction,
                        vehicles: VecDeque::new(),
                        last_service: f64::NEG_INFINITY,
                    });
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        rng.set_stream(0);
        Ok(Self {
            scenario,
            options,
            signals,
            lanes: [
                Lane::new(scenario, Direction::East),
                Lane::new(scenario, Direction::West),
            ],
            side,
            arrivals: generate_arrivals(scenario, options),
            records: Vec::new(),
            events: Vec::new(),
            rng,
            min_gap: f64::INFINITY,
        })
    }

    fn make_vehicle(&mut self, arrival: &Arrival) -> Option<(Direction, Vehicle, Option<usize>)> {
        let c = &self.scenario.corridor;
        let (direction, origin, speed_factor, route, side_slot) = match &arrival.kind {
            ArrivalKind::Boundary {
                direction,
                speed_factor,
                route,
            } => (*direction, Origin::Boundary, *speed_factor, route.clone(), None),
            ArrivalKind::Side {
                intersection,
                approach,
                movement,
                speed_factor,
                route,
            } => {
                self.events.push(DetectorEvent {
                    intersection: *intersection,
                    phase: approach.phase(*movement),
                    time: arrival.time,
                });
                let direction = approach.joins(*movement)?;
                let slot = self.side.iter().position(|q| {
                    q.intersection == *intersection
                        && q.approach == *approach
                        && q.movement == *movement
                });
                (
                    direction,
                    Origin::Side {
                        intersection: *intersection,
                        approach: *approach,
                    },
                    *speed_factor,
                    route.clone(),
                    slot,
                )
            }
        };
        let id = self.records.len();
        self.records.push(VehicleRecord {
            id,
            direction,
            origin,
            spawn: arrival.time,
            entry: None,
            exit: None,
            left: None,
            speed_factor,
        });
        let vehicle = Vehicle {
            id,
            x: 0.0,
            v: 0.0,
            vmax: c.speed_limit * speed_factor,
            route,
            next: 0,
            detected: false,
            committed: false,
        };
        Some((direction, vehicle, side_slot))
    }

    fn on_network(&self) -> usize {
        self.lanes
            .iter()
            .map(|l| l.vehicles.len() + l.waiting.len())
            .sum::<usize>()
            + self.side.iter().map(|q| q.vehicles.len()).sum::<usize>()
    }

    fn run(mut self) -> Result<(SimulationLog, SimStats)> {
        let dt = self.options.timestep;
        let duration = self.scenario.duration;
        let hard_end = duration + self.options.drain_limit;
        let cycle = self.scenario.cycle();
        let gridlock_after = self.options.gridlock_cycles as f64 * cycle;
        let travel_to_stop = self.scenario.corridor.detector_setback / self.scenario.corridor.speed_limit;
        let arrivals = std::mem::take(&mut self.arrivals);
        let mut next_arrival = 0;
        let mut last_progress = 0.0;
        let mut step: u64 = 0;
        let t = loop {
            let t = step as f64 * dt;
            while next_arrival < arrivals.len() && arrivals[next_arrival].time <= t {
                let arrival = &arrivals[next_arrival];
                next_arrival += 1;
                if let Some((direction, vehicle, slot)) = self.make_vehicle(arrival) {
                    match slot {
                        None => self.lanes[direction.index()].waiting.push_back(vehicle),
                        Some(q) => self.side[q]
                            .vehicles
                            .push_back((arrival.time + travel_to_stop, vehicle)),
                    }
                }
            }
            let done_arriving = next_arrival == arrivals.len();
            if (done_arriving && self.on_network() == 0 && t >= duration) || t >= hard_end {
                break t;
            }
            let mut progressed = false;
            for d in 0..2 {
                progressed |= self.update_lane(d, t);
            }
            for d in 0..2 {
                progressed |= self.insert_boundary(d, t);
            }
            progressed |= self.insert_side(t);
            let occupied = self.lanes.iter().any(|l| !l.vehicles.is_empty());
            if progressed || !occupied {
                last_progress = t;
            } else if t - last_progress >= gridlock_after {
                return Err(Error::Gridlock {
                    time: t,
                    cycles: self.options.gridlock_cycles,
                    vehicles: self.on_network(),
                });
            }
            self.track_gaps();
            step += 1;
        };
        self.events.sort_by(|a, b| {
            a.time
                .total_cmp(&b.time)
                .then(a.intersection.cmp(&b.intersection))
                .then(a.phase.cmp(&b.phase))
        });
        let stats = SimStats {
            steps: step,
            min_gap: self.min_gap,
        };
        let log = SimulationLog {
            header: LogHeader {
                schema_version: LOG_SCHEMA_VERSION,
                seed: self.scenario.seed,
                intersections: self.scenario.corridor.intersections,
                cycle,
                timestep: dt,
                duration,
                end_time: t,
            },
            detector_events: self.events,
            vehicles: self.records,
        };
        Ok((log, stats))
    }

    fn track_gaps(&mut self) {
        let len = self.scenario.corridor.vehicle_length;
        for lane in &self.lanes {
            for pair in lane.vehicles.windows(2) {
                self.min_gap = self.min_gap.min(pair[0].x - len - pair[1].x);
            }
        }
    }

    /// Advances every vehicle of lane `d` by one step, front to back.
    /// Returns whether anything moved or left.
    fn update_lane(&mut self, d: usize, t: f64) -> bool {
        let b = self.scenario.behavior;
        let len = self.scenario.corridor.vehicle_length;
        let dt = self.options.timestep;
        let lane = &mut self.lanes[d];
        let k_count = lane.stops.len();
        let through_phase = lane.direction.through_phase();
        let mut leader: Option<(f64, f64)> = None;
        let mut kept = Vec::with_capacity(lane.vehicles.len());
        let mut progressed = false;
        for mut veh in std::mem::take(&mut lane.vehicles) {
            let x0 = veh.x;
            let mut v_des = (veh.v + b.accel * dt).min(veh.vmax);
            let mut cap = f64::INFINITY;
            if let Some((xl, vl)) = leader {
                let gap = xl - len - x0 - b.min_gap;
                v_des = v_des.min(safe_speed(veh.v, vl, gap, b.decel, b.tau));
                cap = cap.min(xl - len - b.min_gap);
            }
            if veh.next < k_count && veh.route[veh.next] == Movement::Through {
                let stop = lane.stops[veh.next];
                let dist = stop - x0;
                let stopping_distance = |decel: f64| veh.v * veh.v / (2.0 * decel);
                let must_stop = match self.signals[lane.order[veh.next]].indication(through_phase, t)
                {
                    Indication::Green => false,
                    _ if veh.committed => false,
                    Indication::Yellow => stopping_distance(b.decel) <= dist,
                    Indication::Red => stopping_distance(b.emergency_decel) <= dist,
                };
                if must_stop {
                    v_des = v_des.min(safe_speed(veh.v, 0.0, dist, b.decel, b.tau));
                    cap = cap.min(stop);
                } else if self.signals[lane.order[veh.next]].indication(through_phase, t)
                    != Indication::Green
                {
                    veh.committed = true;
                }
            }
            let mut v_new = v_des.max(0.0);
            if b.sigma > 0.0 {
                let u: f64 = self.rng.random();
                v_new = (v_new - b.sigma * b.accel * dt * u).max(0.0);
            }
            let x1 = (x0 + v_new * dt).min(cap).max(x0);
            veh.v = (x1 - x0) / dt;
            veh.x = x1;
            if x1 > x0 {
                progressed = true;
            }
            let at = |pos: f64| t + dt * (pos - x0) / (x1 - x0);
            let mut removed = false;
            while veh.next < k_count {
                let j = veh.next;
                if !veh.detected {
                    if x1 > lane.detectors[j] {
                        veh.detected = true;
                        self.events.push(DetectorEvent {
                            intersection: lane.order[j],
                            phase: lane.direction.approach().phase(veh.route[j]),
                            time: at(lane.detectors[j]),
                        });
                    } else {
                        break;
                    }
                }
                if veh.route[j] != Movement::Through {
                    if x1 > lane.pockets[j] {
                        self.records[veh.id].left = Some(at(lane.pockets[j]));
                        removed = true;
                    }
                    break;
                }
                if x1 <= lane.stops[j] {
                    break;
                }
                let crossed = at(lane.stops[j]);
                let record = &mut self.records[veh.id];
                if j == 0 && record.origin == Origin::Boundary {
                    record.entry = Some(crossed);
                }
                if j + 1 == k_count && record.entry.is_some() {
                    record.exit = Some(crossed);
                }
                veh.next += 1;
                veh.detected = false;
                veh.committed = false;
            }
            if !removed && veh.next == k_count && x1 > lane.exit {
                self.records[veh.id].left = Some(at(lane.exit));
                removed = true;
            }
            if removed {
                progressed = true;
            } else {
                leader = Some((veh.x, veh.v));
                kept.push(veh);
            }
        }
        lane.vehicles = kept;
        progressed
    }

    /// Inserts the head of the boundary queue at position 0 if there is room.
    fn insert_boundary(&mut self, d: usize, _t: f64) -> bool {
        let b = self.scenario.behavior;
        let len = self.scenario.corridor.vehicle_length;
        let lane = &mut self.lanes[d];
        let Some(head) = lane.waiting.front() else {
            return false;
        };
        let mut speed = head.vmax;
        if let Some(last) = lane.vehicles.last() {
            let gap = last.x - len - b.min_gap;
            if gap < 0.0 {
                return false;
            }
            speed = speed.min(safe_speed(last.v, last.v, gap, b.decel, b.tau).max(0.0));
        }
        let mut veh = lane.waiting.pop_front().expect("head exists");
        veh.x = 0.0;
        veh.v = speed;
        lane.vehicles.push(veh);
        true
    }

    /// Serves cross-street turners whose phase is green and whose merge
    /// point has room.
    fn insert_side(&mut self, t: f64) -> bool {
        let b = self.scenario.behavior;
        let len = self.scenario.corridor.vehicle_length;
        let mut progressed = false;
        for q in &mut self.side {
            let Some((ready, _)) = q.vehicles.front() else {
                continue;
            };
            if *ready > t || t - q.last_service < SIDE_HEADWAY {
                continue;
            }
            let phase = q.approach.phase(q.movement);
            if self.signals[q.intersection].indication(phase, t) != Indication::Green {
                continue;
            }
            let lane = &mut self.lanes[q.direction.index()];
            let j = lane.position_of(q.intersection);
            let x = lane.stops[j] + len + b.min_gap;
            let at = lane.vehicles.partition_point(|v| v.x > x);
            if at > 0 && lane.vehicles[at - 1].x - len - x < b.min_gap {
                continue;
            }
            if let Some(f) = lane.vehicles.get(at) {
                if x - len - f.x < b.min_gap + f.v * b.tau {
                    continue;
                }
            }
            let (_, mut veh) = q.vehicles.pop_front().expect("head exists");
            veh.x = x;
            veh.v = 0.0;
            veh.next = j + 1;
            if let Some(&det) = lane.detectors.get(j + 1) {
                veh.detected = x > det;
                if x > lane.pockets[j + 1] {
                    veh.route[j + 1] = Movement::Through;
                }
            }
            lane.vehicles.insert(at, veh);
            q.last_service = t;
            progressed = true;
        }
        progressed
    }
}

/// Poisson arrivals for every source, each from its own random stream so
/// that changing one source leaves the others untouched.
fn generate_arrivals(scenario: &Scenario, options: &SimOptions) -> Vec<Arrival> {
    let c = &scenario.corridor;
    let b = &scenario.behavior;
    let mut arrivals = Vec::new();
    let mut source = 0usize;
    let stream = |rate_per_hour: f64, limit: Option<usize>, source: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        rng.set_stream(1 + source as u64);
        let mut times = Vec::new();
        if rate_per_hour > 0.0 {
            let exp = Exp::new(rate_per_hour / 3600.0).expect("positive rate");
            let mut t = exp.sample(&mut rng);
            while t < scenario.duration && limit.is_none_or(|n| times.len() < n) {
                times.push(t);
                t += exp.sample(&mut rng);
            }
        }
        (rng, times)
    };
    for direction in Direction::BOTH {
        let (mut rng, times) = stream(scenario.demand.arterial(direction), options.spawn_limit, source);
        let order = c.travel_order(direction);
        for time in times {
            let speed_factor = sample_speed_factor(&mut rng, b.speed_factor_mean, b.speed_factor_stdev);
            let route = order
                .iter()
                .map(|&k| choose_movement(&scenario.tmc[k], direction.approach(), rng.random()))
                .collect();
            arrivals.push(Arrival {
                time,
                source,
                kind: ArrivalKind::Boundary {
                    direction,
                    speed_factor,
                    route,
                },
            });
        }
        source += 1;
    }
    for (k, demand) in scenario.demand.side.iter().enumerate() {
        for (approach, rate) in [
            (Approach::Northbound, demand.northbound),
            (Approach::Southbound, demand.southbound),
        ] {
            let (mut rng, times) = stream(rate, None, source);
            for time in times {
                let movement = choose_movement(&scenario.tmc[k], approach, rng.random());
                let speed_factor = sample_speed_factor(&mut rng, b.speed_factor_mean, b.speed_factor_stdev);
                let route = match approach.joins(movement) {
                    Some(direction) => c
                        .travel_order(direction)
                        .iter()
                        .map(|&i| choose_movement(&scenario.tmc[i], direction.approach(), rng.random()))
                        .collect(),
                    None => Vec::new(),
                };
                arrivals.push(Arrival {
                    time,
                    source,
                    kind: ArrivalKind::Side {
                        intersection: k,
                        approach,
                        movement,
                        speed_factor,
                        route,
                    },
                });
            }
            source += 1;
        }
    }
    arrivals.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.source.cmp(&b.source)));
    arrivals
}
