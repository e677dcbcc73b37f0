//! Observation extraction: the 66-value per-intersection vector, the 4-value regional
//! state, and the fixed-length regional history consumed by the meta-policy.
//!
//! Per-intersection layout (lane blocks follow the fixed incoming slot order
//! N-left, N-through, N-right, E-..., S-..., W-...):
//!
//! | range  | feature        | normalizer                      |
//! |--------|----------------|---------------------------------|
//! | 0..12  | car_num        | lane capacity                   |
//! | 12..24 | queue_length   | lane length (metres queued)     |
//! | 24..36 | occupancy      | lane length (metres occupied)   |
//! | 36..48 | stop_car_num   | lane capacity                   |
//! | 48..60 | waiting_time   | 300 s, clipped                  |
//! | 60     | flow           | saturation crossings per step   |
//! | 61     | average_speed  | speed limit                     |
//! | 62     | pressure       | incoming capacity, in [-1, 1]   |
//! | 63     | delay_time     | 300 s, clipped                  |
//! | 64     | phase index    | 7                               |
//! | 65     | time in phase  | 120 s, clipped                  |

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{IntersectionId, Network, Turn, LANES_PER_INTERSECTION, NUM_PHASES, VEHICLE_FOOTPRINT_M};
use crate::sim::state::{SimState, CONTROL_STEP_S, SATURATION_HEADWAY_S, STOPPED_SPEED};

pub const OBS_DIM: usize = 66;
pub const REGION_DIM: usize = 4;
pub const HISTORY_LEN: usize = 20;
pub const WAIT_CLIP_S: f64 = 300.0;
pub const PHASE_TIME_CLIP_S: f64 = 120.0;

pub const CAR_NUM: usize = 0;
pub const QUEUE_LENGTH: usize = 12;
pub const OCCUPANCY: usize = 24;
pub const STOP_CAR_NUM: usize = 36;
pub const WAITING_TIME: usize = 48;
pub const FLOW: usize = 60;
pub const AVERAGE_SPEED: usize = 61;
pub const PRESSURE: usize = 62;
pub const DELAY_TIME: usize = 63;
pub const PHASE_INDEX: usize = 64;
pub const TIME_IN_PHASE: usize = 65;

/// Crossings one control step can carry at saturation over all twelve lanes.
pub fn flow_normalizer() -> f64 {
    LANES_PER_INTERSECTION as f64 * libm::ceil(CONTROL_STEP_S as f64 / SATURATION_HEADWAY_S as f64)
}

pub type Observation = [f64; OBS_DIM];

/// Raw per-intersection measurements shared by observations, rewards and regional states.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntersectionMeasures {
    pub present: [bool; LANES_PER_INTERSECTION],
    pub capacity: [f64; LANES_PER_INTERSECTION],
    pub length: [f64; LANES_PER_INTERSECTION],
    pub car_num: [f64; LANES_PER_INTERSECTION],
    pub queued: [f64; LANES_PER_INTERSECTION],
    pub stopped: [f64; LANES_PER_INTERSECTION],
    pub head_wait: [f64; LANES_PER_INTERSECTION],
    /// Mean speed of vehicles on incoming lanes, m/s (0 when empty).
    pub average_speed: f64,
    pub speed_limit: f64,
    /// Sum over signalized movements of in-lane minus paired out-lane vehicle counts.
    pub pressure: f64,
    /// Mean over incoming vehicles of time lost against free-flow, seconds.
    pub delay: f64,
    pub crossed_last_interval: f64,
    pub phase: usize,
    pub time_in_phase: f64,
}

impl IntersectionMeasures {
    pub fn total_capacity(&self) -> f64 {
        self.capacity.iter().sum()
    }

    pub fn lane_count(&self) -> usize {
        self.present.iter().filter(|p| **p).count()
    }

    /// Capacity-normalized stopped vehicles summed over lanes.
    pub fn stop_sum(&self) -> f64 {
        (0..LANES_PER_INTERSECTION)
            .filter(|&l| self.present[l])
            .map(|l| self.stopped[l] / self.capacity[l])
            .sum()
    }

    pub fn head_wait_sum(&self) -> f64 {
        self.head_wait.iter().sum()
    }
}

pub fn measure(network: &Network, state: &SimState, id: IntersectionId) -> IntersectionMeasures {
    let inter = network.intersection(id);
    let now = state.clock as f64;
    let mut m = IntersectionMeasures { speed_limit: network.speed_limit, ..Default::default() };
    let (mut speed_sum, mut delay_sum, mut n) = (0.0, 0.0, 0usize);
    for (slot, lane_id) in inter.incoming.iter().enumerate() {
        let Some(lane_id) = *lane_id else { continue };
        let lane = network.lane(lane_id);
        m.present[slot] = true;
        m.capacity[slot] = lane.capacity as f64;
        m.length[slot] = lane.length;
        m.car_num[slot] = state.lane_count(lane_id) as f64;
        m.queued[slot] = state.lanes[lane_id.0].queue.len() as f64;
        m.head_wait[slot] = state.head_wait(lane_id);
        for v in state.lane_vehicles(lane_id) {
            if v.speed < STOPPED_SPEED {
                m.stopped[slot] += 1.0;
            }
            speed_sum += v.speed;
            let ideal = (lane.length - v.lane_position) / lane.speed_limit;
            delay_sum += ((now - v.lane_entry_time) - ideal).max(0.0);
            n += 1;
        }
    }
    if n > 0 {
        m.average_speed = speed_sum / n as f64;
        m.delay = delay_sum / n as f64;
    }
    m.pressure = inter
        .movements
        .iter()
        .flatten()
        .filter(|mv| mv.turn != Turn::Right)
        .map(|mv| state.lane_count(mv.in_lane) as f64 - state.lane_count(mv.out_lane) as f64)
        .sum();
    m.crossed_last_interval = state.stats[id.0].crossed_last_interval as f64;
    let signal = state.signals[id.0];
    m.phase = signal.current_phase;
    m.time_in_phase = signal.time_in_phase as f64;
    m
}

/// Pack measurements into the 66-value observation.
pub fn observation_from(m: &IntersectionMeasures) -> Observation {
    let mut o = [0.0; OBS_DIM];
    for l in 0..LANES_PER_INTERSECTION {
        if !m.present[l] {
            continue;
        }
        o[CAR_NUM + l] = (m.car_num[l] / m.capacity[l]).min(1.0);
        o[QUEUE_LENGTH + l] = (m.queued[l] * VEHICLE_FOOTPRINT_M / m.length[l]).min(1.0);
        o[OCCUPANCY + l] = (m.car_num[l] * VEHICLE_FOOTPRINT_M / m.length[l]).min(1.0);
        o[STOP_CAR_NUM + l] = (m.stopped[l] / m.capacity[l]).min(1.0);
        o[WAITING_TIME + l] = (m.head_wait[l] / WAIT_CLIP_S).min(1.0);
    }
    o[FLOW] = (m.crossed_last_interval / flow_normalizer()).min(1.0);
    o[AVERAGE_SPEED] = if m.speed_limit > 0.0 { (m.average_speed / m.speed_limit).min(1.0) } else { 0.0 };
    let cap = m.total_capacity();
    o[PRESSURE] = if cap > 0.0 { (m.pressure / cap).clamp(-1.0, 1.0) } else { 0.0 };
    o[DELAY_TIME] = (m.delay / WAIT_CLIP_S).min(1.0);
    o[PHASE_INDEX] = m.phase as f64 / (NUM_PHASES - 1) as f64;
    o[TIME_IN_PHASE] = (m.time_in_phase / PHASE_TIME_CLIP_S).min(1.0);
    o
}

pub fn intersection_observation(network: &Network, state: &SimState, id: IntersectionId) -> Observation {
    observation_from(&measure(network, state, id))
}

/// Observations for every intersection, row-major (N, 66).
pub fn all_observations(network: &Network, state: &SimState) -> Vec<f64> {
    let mut out = Vec::with_capacity(network.num_intersections() * OBS_DIM);
    for inter in &network.intersections {
        out.extend_from_slice(&intersection_observation(network, state, inter.id));
    }
    out
}

/// Regional summary: stopped vehicles, head-vehicle waiting time, normalized centroid.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegionalState {
    pub stop_car_num: f64,
    pub waiting_time: f64,
    pub centroid_x: f64,
    pub centroid_y: f64,
}

impl RegionalState {
    pub fn to_array(self) -> [f64; REGION_DIM] {
        [self.stop_car_num, self.waiting_time, self.centroid_x, self.centroid_y]
    }
}

/// Per-episode running maximum used to scale regional waiting time into [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunningMax {
    pub value: f64,
}

impl RunningMax {
    pub fn scale(&mut self, x: f64) -> f64 {
        self.value = self.value.max(x);
        if self.value > 0.0 {
            x / self.value
        } else {
            0.0
        }
    }

    pub fn reset(&mut self) {
        self.value = 0.0;
    }
}

pub fn normalized_centroid(network: &Network, region: usize) -> (f64, f64) {
    let (min_x, min_y, max_x, max_y) = network.bounds();
    let (cx, cy) = network.regions.centroids[region];
    let norm = |v: f64, lo: f64, hi: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
    (norm(cx, min_x, max_x), norm(cy, min_y, max_y))
}

/// Combine member measurements into a regional state. The stop component is the mean over
/// members of their capacity-normalized stop sums; waiting time is the member sum of
/// head-vehicle waits scaled by `wait_scale`.
pub fn regional_from_measures(
    members: &[IntersectionMeasures],
    centroid: (f64, f64),
    wait_scale: &mut RunningMax,
) -> Result<RegionalState> {
    if members.is_empty() {
        return Err(Error::EmptyRegion(0));
    }
    let stop = members.iter().map(|m| m.stop_sum()).sum::<f64>() / members.len() as f64;
    let wait = members.iter().map(|m| m.head_wait_sum()).sum::<f64>();
    Ok(RegionalState { stop_car_num: stop, waiting_time: wait_scale.scale(wait), centroid_x: centroid.0, centroid_y: centroid.1 })
}

pub fn regional_state(
    network: &Network,
    state: &SimState,
    region: usize,
    wait_scale: &mut RunningMax,
) -> Result<RegionalState> {
    let members = network.regions.members.get(region).ok_or(Error::EmptyRegion(region))?;
    if members.is_empty() {
        return Err(Error::EmptyRegion(region));
    }
    let measures: Vec<IntersectionMeasures> = members.iter().map(|&id| measure(network, state, id)).collect();
    regional_from_measures(&measures, normalized_centroid(network, region), wait_scale)
}

/// Regional states for all M regions, row-major (M, 4).
pub fn regional_snapshot(network: &Network, state: &SimState, wait_scale: &mut RunningMax) -> Vec<f64> {
    let mut out = Vec::with_capacity(network.regions.count() * REGION_DIM);
    for r in 0..network.regions.count() {
        let s = regional_state(network, state, r, wait_scale).expect("partition regions are nonempty");
        out.extend_from_slice(&s.to_array());
    }
    out
}

/// Ring buffer of the last `HISTORY_LEN` regional snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionalHistory {
    regions: usize,
    snapshots: VecDeque<Vec<f64>>,
}

impl RegionalHistory {
    pub fn new(regions: usize) -> RegionalHistory {
        RegionalHistory { regions, snapshots: VecDeque::with_capacity(HISTORY_LEN) }
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn push(&mut self, snapshot: &[f64]) -> Result<()> {
        if snapshot.len() != self.regions * REGION_DIM {
            return Err(Error::RegionCount { expected: self.regions, got: snapshot.len() / REGION_DIM });
        }
        if self.snapshots.len() == HISTORY_LEN {
            self.snapshots.pop_front();
        }
        self.snapshots.push_back(snapshot.to_vec());
        Ok(())
    }

    /// Row-major (T, M, 4) view, zero-padded at the front, newest snapshot last.
    pub fn tensor(&self) -> Vec<f64> {
        let row = self.regions * REGION_DIM;
        let mut out = alloc::vec![0.0; HISTORY_LEN * row];
        let pad = HISTORY_LEN - self.snapshots.len();
        for (k, s) in self.snapshots.iter().enumerate() {
            out[(pad + k) * row..(pad + k + 1) * row].copy_from_slice(s);
        }
        out
    }

    pub fn shape(&self) -> [usize; 3] {
        [HISTORY_LEN, self.regions, REGION_DIM]
    }

    pub fn newest(&self) -> Option<&[f64]> {
        self.snapshots.back().map(|s| s.as_slice())
    }
}

/// Network-wide totals the goals are scored against.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GlobalTotals {
    /// Seconds waited so far by every queued vehicle.
    pub waiting_time: f64,
    /// Queued vehicles.
    pub queue_length: f64,
}

pub fn global_totals(state: &SimState) -> GlobalTotals {
    let now = state.clock as f64;
    let mut t = GlobalTotals::default();
    for lane in &state.lanes {
        for id in &lane.queue {
            if let Some(entered) = state.vehicles.get(id).and_then(|v| v.queue_entry_time) {
                t.waiting_time += now - entered;
            }
            t.queue_length += 1.0;
        }
    }
    t
}
