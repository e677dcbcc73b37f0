//! Point-queue dynamics on a 1 s tick.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{
    Intersection, LaneId, LaneKind, Network, Side, Turn, LANES_PER_INTERSECTION, NUM_PHASES, VEHICLE_FOOTPRINT_M,
};
use crate::sim::flow::{FlowProfile, FlowSpec};

pub const YELLOW_S: u32 = 5;
pub const CONTROL_STEP_S: u32 = 15;
pub const SATURATION_HEADWAY_S: u64 = 2;
pub const EPISODE_S: u64 = 3600;
/// Control steps in one episode.
pub const ROLLOUT_STEPS: usize = (EPISODE_S / CONTROL_STEP_S as u64) as usize;
/// Vehicles slower than this count as stopped.
pub const STOPPED_SPEED: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: u64,
    pub route: Vec<LaneId>,
    /// Index of `current_lane` in `route`.
    pub route_index: usize,
    pub entry_time: f64,
    pub exit_time: Option<f64>,
    pub current_lane: LaneId,
    /// Distance to the downstream end of the current lane, metres.
    pub lane_position: f64,
    pub speed: f64,
    pub cumulative_wait: f64,
    /// Route length travelled at the speed limits, seconds.
    pub theoretical_time: f64,
    pub lane_entry_time: f64,
    /// Set while the vehicle sits in a lane queue.
    pub queue_entry_time: Option<f64>,
}

impl Vehicle {
    /// A bare trip record, for metric computations.
    pub fn trip(entry_time: f64, exit_time: Option<f64>, theoretical_time: f64) -> Vehicle {
        Vehicle {
            id: 0,
            route: Vec::new(),
            route_index: 0,
            entry_time,
            exit_time,
            current_lane: LaneId(0),
            lane_position: 0.0,
            speed: 0.0,
            cumulative_wait: 0.0,
            theoretical_time,
            lane_entry_time: entry_time,
            queue_entry_time: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LaneState {
    /// Free-flowing vehicles, front first.
    pub transit: VecDeque<u64>,
    /// Stopped vehicles waiting at the stop line, head first.
    pub queue: VecDeque<u64>,
    /// Earliest clock at which the queue head may discharge.
    pub next_discharge: u64,
}

impl LaneState {
    pub fn count(&self) -> usize {
        self.transit.len() + self.queue.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignalState {
    pub current_phase: usize,
    pub time_in_phase: u32,
    /// Seconds of yellow left; 0 while green.
    pub yellow_remaining: u32,
    /// Phase that turns green once the yellow ends.
    pub next_phase: usize,
}

impl Default for SignalState {
    fn default() -> Self {
        SignalState { current_phase: 0, time_in_phase: 0, yellow_remaining: 0, next_phase: 0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntersectionStats {
    /// Vehicles that crossed the intersection during the current control step.
    pub crossed: u32,
    /// Crossings during the previous control step.
    pub crossed_last_interval: u32,
}

/// Mutable world state. All collections are ordered so traces are reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub clock: u64,
    pub vehicles: BTreeMap<u64, Vehicle>,
    pub departed: Vec<Vehicle>,
    pub lanes: Vec<LaneState>,
    pub signals: Vec<SignalState>,
    /// Vehicles generated at a saturated source, per source link.
    pub pending: Vec<VecDeque<Vehicle>>,
    pub generated: u64,
    pub stats: Vec<IntersectionStats>,
    pub rng: ChaCha8Rng,
    next_id: u64,
    /// `green[i][phase]` = incoming slots released by `phase` (right turns excluded).
    green: Vec<[[bool; LANES_PER_INTERSECTION]; NUM_PHASES]>,
}

impl SimState {
    pub fn new(network: &Network, seed: u64) -> SimState {
        let green = network.intersections.iter().map(green_masks).collect();
        SimState {
            clock: 0,
            vehicles: BTreeMap::new(),
            departed: Vec::new(),
            lanes: alloc::vec![LaneState::default(); network.lanes.len()],
            signals: alloc::vec![SignalState::default(); network.num_intersections()],
            pending: alloc::vec![VecDeque::new(); network.sources.len()],
            generated: 0,
            stats: alloc::vec![IntersectionStats::default(); network.num_intersections()],
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_id: 0,
            green,
        }
    }

    pub fn pending_count(&self) -> usize {
        self.pending.iter().map(|p| p.len()).sum()
    }

    /// Generated vehicles minus those accounted for; zero when conservation holds.
    pub fn conservation_gap(&self) -> i64 {
        self.generated as i64 - (self.vehicles.len() + self.departed.len() + self.pending_count()) as i64
    }

    pub fn lane_count(&self, lane: LaneId) -> usize {
        self.lanes[lane.0].count()
    }

    /// Vehicle count on every lane, indexed by lane id.
    pub fn lane_counts(&self) -> Vec<f64> {
        self.lanes.iter().map(|l| l.count() as f64).collect()
    }

    /// Wait of the queue-head vehicle on `lane`, seconds.
    pub fn head_wait(&self, lane: LaneId) -> f64 {
        self.lanes[lane.0]
            .queue
            .front()
            .and_then(|id| self.vehicles.get(id))
            .and_then(|v| v.queue_entry_time)
            .map(|t| self.clock as f64 - t)
            .unwrap_or(0.0)
    }

    /// Vehicles currently on `lane`, front first.
    pub fn lane_vehicles(&self, lane: LaneId) -> impl Iterator<Item = &Vehicle> + '_ {
        let l = &self.lanes[lane.0];
        l.queue.iter().chain(l.transit.iter()).filter_map(move |id| self.vehicles.get(id))
    }

    fn is_green(&self, intersection: usize, slot: usize) -> bool {
        let s = &self.signals[intersection];
        s.yellow_remaining == 0 && self.green[intersection][s.current_phase][slot]
    }

    /// Draw this tick's arrivals and release vehicles held at saturated sources.
    pub fn inject_vehicles(&mut self, network: &Network, profile: &FlowProfile) {
        let sources = network.sources.len();
        if sources == 0 {
            return;
        }
        let per_source = profile.rate(self.clock as f64) / sources as f64;
        let whole = libm::floor(per_source);
        let frac = per_source - whole;
        for k in 0..sources {
            self.release_pending(network, k);
            let draw: f64 = self.rng.gen();
            let arrivals = whole as usize + usize::from(draw < frac);
            for _ in 0..arrivals {
                let route = random_route(network, k, &mut self.rng);
                let theoretical_time = route.iter().map(|&l| network.lane(l).free_flow_time()).sum();
                let id = self.next_id;
                self.next_id += 1;
                self.generated += 1;
                let v = Vehicle {
                    id,
                    current_lane: route[0],
                    route,
                    route_index: 0,
                    entry_time: 0.0,
                    exit_time: None,
                    lane_position: 0.0,
                    speed: 0.0,
                    cumulative_wait: 0.0,
                    theoretical_time,
                    lane_entry_time: 0.0,
                    queue_entry_time: None,
                };
                self.pending[k].push_back(v);
            }
            self.release_pending(network, k);
        }
    }

    fn release_pending(&mut self, network: &Network, source: usize) {
        while let Some(front) = self.pending[source].front() {
            let lane = front.route[0];
            if self.lanes[lane.0].count() >= network.lane(lane).capacity {
                break;
            }
            let mut v = self.pending[source].pop_front().expect("front exists");
            let l = network.lane(lane);
            v.entry_time = self.clock as f64;
            v.lane_entry_time = self.clock as f64;
            v.lane_position = l.length;
            v.speed = l.speed_limit;
            self.lanes[lane.0].transit.push_back(v.id);
            self.vehicles.insert(v.id, v);
        }
    }

    /// Advance the world by one second.
    pub fn step_tick(&mut self, network: &Network) {
        let now = self.clock as f64;
        self.advance_free_flow(network, now);
        self.discharge(network, now);
        for lane in &self.lanes {
            for id in &lane.queue {
                if let Some(v) = self.vehicles.get_mut(id) {
                    v.cumulative_wait += 1.0;
                }
            }
        }
        for s in &mut self.signals {
            if s.yellow_remaining > 0 {
                s.yellow_remaining -= 1;
                if s.yellow_remaining == 0 {
                    s.current_phase = s.next_phase;
                    s.time_in_phase = 0;
                }
            } else {
                s.time_in_phase += 1;
            }
        }
        self.clock += 1;
    }

    fn advance_free_flow(&mut self, network: &Network, now: f64) {
        for (lane_idx, lane_state) in self.lanes.iter_mut().enumerate() {
            if lane_state.transit.is_empty() {
                continue;
            }
            let lane = &network.lanes[lane_idx];
            for id in &lane_state.transit {
                let v = self.vehicles.get_mut(id).expect("transit vehicle is active");
                v.lane_position -= lane.speed_limit;
            }
            while let Some(&id) = lane_state.transit.front() {
                let tail = lane_state.queue.len() as f64 * VEHICLE_FOOTPRINT_M;
                let pos = self.vehicles[&id].lane_position;
                if lane.kind == LaneKind::Sink {
                    if pos > 0.0 {
                        break;
                    }
                    lane_state.transit.pop_front();
                    let mut v = self.vehicles.remove(&id).expect("active");
                    v.lane_position = 0.0;
                    v.exit_time = Some(now + 1.0);
                    self.departed.push(v);
                } else {
                    if pos > tail {
                        break;
                    }
                    lane_state.transit.pop_front();
                    lane_state.queue.push_back(id);
                    let v = self.vehicles.get_mut(&id).expect("active");
                    v.lane_position = tail;
                    v.speed = 0.0;
                    v.queue_entry_time = Some(now + 1.0);
                }
            }
        }
    }

    fn discharge(&mut self, network: &Network, now: f64) {
        for (i, inter) in network.intersections.iter().enumerate() {
            for slot in 0..LANES_PER_INTERSECTION {
                let Some(m) = inter.movements[slot] else { continue };
                if m.turn != Turn::Right && !self.is_green(i, slot) {
                    continue;
                }
                let lane = m.in_lane;
                let ls = &self.lanes[lane.0];
                if ls.queue.is_empty() || self.clock < ls.next_discharge {
                    continue;
                }
                let head = *ls.queue.front().expect("non-empty");
                let next = {
                    let v = &self.vehicles[&head];
                    v.route[v.route_index + 1]
                };
                let next_lane = network.lane(next);
                if self.lanes[next.0].count() >= next_lane.capacity {
                    continue;
                }
                let ls = &mut self.lanes[lane.0];
                ls.queue.pop_front();
                ls.next_discharge = self.clock + SATURATION_HEADWAY_S;
                for id in &ls.queue {
                    if let Some(v) = self.vehicles.get_mut(id) {
                        v.lane_position = (v.lane_position - VEHICLE_FOOTPRINT_M).max(0.0);
                    }
                }
                self.lanes[next.0].transit.push_back(head);
                let v = self.vehicles.get_mut(&head).expect("active");
                v.route_index += 1;
                v.current_lane = next;
                v.lane_position = next_lane.length;
                v.speed = next_lane.speed_limit;
                v.lane_entry_time = now + 1.0;
                v.queue_entry_time = None;
                self.stats[i].crossed += 1;
            }
        }
    }

    /// Set each intersection's target phase; a change starts a yellow interval.
    pub fn set_phases(&mut self, actions: &[usize]) -> Result<()> {
        if actions.len() != self.signals.len() {
            return Err(Error::ActionCount { expected: self.signals.len(), got: actions.len() });
        }
        if let Some(&bad) = actions.iter().find(|&&a| a >= NUM_PHASES) {
            return Err(Error::PhaseOutOfRange(bad));
        }
        for (s, &a) in self.signals.iter_mut().zip(actions) {
            if a != s.current_phase {
                s.yellow_remaining = YELLOW_S;
                s.next_phase = a;
            }
        }
        Ok(())
    }

    /// One control step: set phases, then run `CONTROL_STEP_S` ticks with injection.
    pub fn apply_actions(&mut self, network: &Network, profile: &FlowProfile, actions: &[usize]) -> Result<()> {
        self.set_phases(actions)?;
        for s in &mut self.stats {
            s.crossed = 0;
        }
        for _ in 0..CONTROL_STEP_S {
            self.inject_vehicles(network, profile);
            self.step_tick(network);
        }
        for s in &mut self.stats {
            s.crossed_last_interval = s.crossed;
        }
        Ok(())
    }
}

fn green_masks(inter: &Intersection) -> [[bool; LANES_PER_INTERSECTION]; NUM_PHASES] {
    let mut masks = [[false; LANES_PER_INTERSECTION]; NUM_PHASES];
    for (p, phase) in inter.phases.iter().enumerate() {
        for m in &phase.movements {
            if m.turn == Turn::Right {
                continue;
            }
            if let Some(slot) = inter.incoming.iter().position(|l| *l == Some(m.in_lane)) {
                masks[p][slot] = true;
            }
        }
    }
    masks
}

/// Route from source link `source` to a uniformly chosen sink along a shortest grid path.
/// Paths that would need a U-turn are redrawn.
pub fn random_route<R: Rng>(network: &Network, source: usize, rng: &mut R) -> Vec<LaneId> {
    let src = network.sources[source];
    loop {
        let sink = network.sinks[rng.gen_range(0..network.sinks.len())];
        let (r0, c0) = network.grid_position(src.intersection);
        let (r1, c1) = network.grid_position(sink.intersection);
        let vertical = if r1 >= r0 { Side::South } else { Side::North };
        let horizontal = if c1 >= c0 { Side::East } else { Side::West };
        let nv = r0.abs_diff(r1);
        let nh = c0.abs_diff(c1);
        for _attempt in 0..8 {
            // Random interleaving of the lattice moves.
            let mut moves = Vec::with_capacity(nv + nh + 1);
            let (mut left_v, mut left_h) = (nv, nh);
            while left_v + left_h > 0 {
                let pick_v = rng.gen_range(0..left_v + left_h) < left_v;
                if pick_v {
                    moves.push(vertical);
                    left_v -= 1;
                } else {
                    moves.push(horizontal);
                    left_h -= 1;
                }
            }
            moves.push(sink.side);
            if let Some(route) = lanes_for_moves(network, src.intersection.0, src.side, &moves, sink.lane) {
                return route;
            }
        }
    }
}

fn lanes_for_moves(network: &Network, start: usize, entry_side: Side, moves: &[Side], sink_lane: LaneId) -> Option<Vec<LaneId>> {
    let mut route = Vec::with_capacity(moves.len() + 1);
    let mut at = start;
    let mut arrive = entry_side;
    for (k, &exit) in moves.iter().enumerate() {
        let turn = Turn::between(arrive, exit)?;
        route.push(network.intersections[at].incoming[Intersection::slot(arrive, turn)]?);
        if k + 1 == moves.len() {
            break;
        }
        let (dr, dc) = exit.offset();
        let (r, c) = network.grid_position(network.intersections[at].id);
        at = network.id_at((r as isize + dr) as usize, (c as isize + dc) as usize).0;
        arrive = exit.opposite();
    }
    route.push(sink_lane);
    Some(route)
}

/// A simulator instance: network, demand, and state.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub network: Arc<Network>,
    pub profile: FlowProfile,
    pub state: SimState,
    pub horizon: u64,
    pub steps_taken: usize,
}

impl Simulation {
    pub fn new(network: Arc<Network>, flow: FlowSpec, seed: u64) -> Result<Simulation> {
        Simulation::with_horizon(network, flow, seed, EPISODE_S)
    }

    pub fn with_horizon(network: Arc<Network>, flow: FlowSpec, seed: u64, horizon: u64) -> Result<Simulation> {
        let profile = FlowProfile::new(flow, horizon as f64)?;
        let state = SimState::new(&network, seed);
        Ok(Simulation { network, profile, state, horizon, steps_taken: 0 })
    }

    pub fn apply_actions(&mut self, actions: &[usize]) -> Result<()> {
        self.state.apply_actions(&self.network, &self.profile, actions)?;
        self.steps_taken += 1;
        Ok(())
    }

    pub fn done(&self) -> bool {
        self.state.clock >= self.horizon
    }

    pub fn att(&self) -> Result<f64> {
        crate::sim::metrics::compute_att(&self.state.departed, self.state.vehicles.values(), self.state.clock as f64)
    }

    pub fn adt(&self) -> Result<f64> {
        crate::sim::metrics::compute_adt(&self.state.departed, self.state.vehicles.values(), self.state.clock as f64)
    }
}
