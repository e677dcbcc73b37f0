//! Static road network: lanes, movements, the eight-phase scheme, pressure and
//! the subregion partition.
//!
//! Every intersection is a four-leg node. Each side carries one incoming link of
//! three turn-dedicated lanes (left, through, right) and one outgoing link. Links
//! between neighbours are shared; sides on the grid boundary get a source link
//! (incoming) and a single-lane sink link (outgoing).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Jam spacing used to derive lane capacity.
pub const VEHICLE_FOOTPRINT_M: f64 = 7.5;
/// Number of signal phases at every intersection.
pub const NUM_PHASES: usize = 8;
/// Incoming lane slots per intersection (4 approaches x 3 turns).
pub const LANES_PER_INTERSECTION: usize = 12;
/// Maximum neighbours per intersection.
pub const MAX_NEIGHBORS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LaneId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IntersectionId(pub usize);

/// Side of an intersection, clockwise from north.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    North = 0,
    East = 1,
    South = 2,
    West = 3,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::North, Side::East, Side::South, Side::West];

    pub fn from_index(i: usize) -> Side {
        Side::ALL[i % 4]
    }

    pub fn opposite(self) -> Side {
        Side::from_index(self as usize + 2)
    }

    /// Grid offset (d_row, d_col) when leaving through this side. Row 0 is the northern edge.
    pub fn offset(self) -> (isize, isize) {
        match self {
            Side::North => (-1, 0),
            Side::East => (0, 1),
            Side::South => (1, 0),
            Side::West => (0, -1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Turn {
    Left = 0,
    Through = 1,
    Right = 2,
}

impl Turn {
    pub const ALL: [Turn; 3] = [Turn::Left, Turn::Through, Turn::Right];

    /// Side through which a vehicle arriving on `approach` leaves after this turn.
    pub fn exit_side(self, approach: Side) -> Side {
        let a = approach as usize;
        match self {
            Turn::Left => Side::from_index(a + 1),
            Turn::Through => Side::from_index(a + 2),
            Turn::Right => Side::from_index(a + 3),
        }
    }

    /// Turn taken when arriving on `approach` and leaving through `exit`; `None` for a U-turn.
    pub fn between(approach: Side, exit: Side) -> Option<Turn> {
        Turn::ALL.into_iter().find(|t| t.exit_side(approach) == exit)
    }
}

/// Role a lane plays in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LaneKind {
    /// Boundary entry link feeding an intersection.
    Source,
    /// Link between two neighbouring intersections.
    Internal,
    /// Boundary exit link; vehicles leave the network at its end.
    Sink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: LaneId,
    pub length: f64,
    pub speed_limit: f64,
    pub capacity: usize,
    /// Direction of travel along the lane.
    pub heading: Side,
    pub turn_role: Turn,
    pub kind: LaneKind,
    /// Upstream intersection, if any.
    pub from: Option<IntersectionId>,
    /// Downstream intersection, if any.
    pub to: Option<IntersectionId>,
}

impl Lane {
    pub fn free_flow_time(&self) -> f64 {
        self.length / self.speed_limit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Movement {
    pub in_lane: LaneId,
    pub out_lane: LaneId,
    pub turn: Turn,
}

/// Which (approach, turn) pairs a phase serves, independent of any intersection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhasePattern {
    pub index: usize,
    pub name: &'static str,
    pub movements: Vec<(Side, Turn)>,
}

impl PhasePattern {
    pub fn contains(&self, side: Side, turn: Turn) -> bool {
        self.movements.contains(&(side, turn))
    }
}

/// The eight standard phases. Right turns are always permitted and appear in every phase.
pub fn standard_phase_set() -> [PhasePattern; NUM_PHASES] {
    use Side::*;
    use Turn::*;
    let signalized: [(&'static str, [(Side, Turn); 2]); NUM_PHASES] = [
        ("NS-through", [(North, Through), (South, Through)]),
        ("NS-left", [(North, Left), (South, Left)]),
        ("EW-through", [(East, Through), (West, Through)]),
        ("EW-left", [(East, Left), (West, Left)]),
        ("N-through+left", [(North, Through), (North, Left)]),
        ("S-through+left", [(South, Through), (South, Left)]),
        ("E-through+left", [(East, Through), (East, Left)]),
        ("W-through+left", [(West, Through), (West, Left)]),
    ];
    core::array::from_fn(|index| {
        let (name, pair) = signalized[index];
        let mut movements: Vec<(Side, Turn)> = pair.to_vec();
        movements.extend(Side::ALL.iter().map(|&s| (s, Right)));
        PhasePattern { index, name, movements }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub index: usize,
    pub movements: Vec<Movement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub id: IntersectionId,
    pub position: (f64, f64),
    /// Fixed slots: N-left, N-through, N-right, E-..., S-..., W-...
    pub incoming: [Option<LaneId>; LANES_PER_INTERSECTION],
    /// Outgoing lanes ordered by side (N, E, S, W).
    pub outgoing: Vec<LaneId>,
    /// Movement served by each incoming slot.
    pub movements: [Option<Movement>; LANES_PER_INTERSECTION],
    pub phases: Vec<Phase>,
    /// Sorted by distance, then id.
    pub neighbors: Vec<IntersectionId>,
    /// Outgoing lanes per side, indexed by turn role (sinks repeat their single lane).
    pub exits: [Option<[LaneId; 3]>; 4],
}

impl Intersection {
    pub fn slot(side: Side, turn: Turn) -> usize {
        side as usize * 3 + turn as usize
    }

    pub fn slot_side_turn(slot: usize) -> (Side, Turn) {
        (Side::from_index(slot / 3), Turn::ALL[slot % 3])
    }

    pub fn incoming_lanes(&self) -> impl Iterator<Item = LaneId> + '_ {
        self.incoming.iter().flatten().copied()
    }
}

/// Partition of intersections into subregions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regions {
    /// Region index of each intersection.
    pub assignment: Vec<usize>,
    pub members: Vec<Vec<IntersectionId>>,
    /// Mean member position per region, metres.
    pub centroids: Vec<(f64, f64)>,
    pub grid: (usize, usize),
}

impl Regions {
    pub fn count(&self) -> usize {
        self.members.len()
    }
}

/// A boundary entry: one source link of three lanes attached to an intersection side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceLink {
    pub intersection: IntersectionId,
    pub side: Side,
    /// Lanes indexed by turn role.
    pub lanes: [LaneId; 3],
}

/// A boundary exit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkLink {
    pub intersection: IntersectionId,
    pub side: Side,
    pub lane: LaneId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub rows: usize,
    pub cols: usize,
    pub link_length: f64,
    pub speed_limit: f64,
    pub intersections: Vec<Intersection>,
    pub lanes: Vec<Lane>,
    /// Row-major N x N; `adjacency[i * n + j]` iff j is a neighbour of i.
    pub adjacency: Vec<bool>,
    pub regions: Regions,
    pub sources: Vec<SourceLink>,
    pub sinks: Vec<SinkLink>,
}

impl Network {
    pub fn num_intersections(&self) -> usize {
        self.intersections.len()
    }

    pub fn lane(&self, id: LaneId) -> &Lane {
        &self.lanes[id.0]
    }

    pub fn intersection(&self, id: IntersectionId) -> &Intersection {
        &self.intersections[id.0]
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.num_intersections() + j]
    }

    pub fn grid_position(&self, id: IntersectionId) -> (usize, usize) {
        (id.0 / self.cols, id.0 % self.cols)
    }

    pub fn id_at(&self, row: usize, col: usize) -> IntersectionId {
        IntersectionId(row * self.cols + col)
    }

    /// Neighbour index lists, in the fixed neighbour order.
    pub fn neighbor_table(&self) -> Vec<Vec<usize>> {
        self.intersections.iter().map(|i| i.neighbors.iter().map(|n| n.0).collect()).collect()
    }

    /// Bounding box (min_x, min_y, max_x, max_y) over intersection positions.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for i in &self.intersections {
            let (x, y) = i.position;
            b.0 = b.0.min(x);
            b.1 = b.1.min(y);
            b.2 = b.2.max(x);
            b.3 = b.3.max(y);
        }
        b
    }

    /// Replace the region partition with a `region_rows x region_cols` grid partition.
    pub fn with_regions(mut self, region_rows: usize, region_cols: usize) -> Result<Network> {
        self.regions = partition_regions(&self, region_rows, region_cols)?;
        Ok(self)
    }
}

/// Build a `rows x cols` grid. The result carries a single region; see [`Network::with_regions`].
pub fn build_grid_network(rows: usize, cols: usize, link_length: f64, speed_limit: f64) -> Result<Network> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidGrid(format!("rows={rows}, cols={cols}; both must be >= 1")));
    }
    if !(link_length > 0.0 && link_length.is_finite()) {
        return Err(Error::InvalidGrid(format!("link_length={link_length} must be positive")));
    }
    if !(speed_limit > 0.0 && speed_limit.is_finite()) {
        return Err(Error::InvalidGrid(format!("speed_limit={speed_limit} must be positive")));
    }
    let capacity = libm::floor(link_length / VEHICLE_FOOTPRINT_M) as usize;
    if capacity == 0 {
        return Err(Error::InvalidGrid(format!("link_length={link_length} shorter than one vehicle")));
    }
    let n = rows * cols;
    let mut lanes: Vec<Lane> = Vec::new();
    let mut new_lane = |heading: Side, turn_role: Turn, kind: LaneKind, from, to| {
        let id = LaneId(lanes.len());
        lanes.push(Lane { id, length: link_length, speed_limit, capacity, heading, turn_role, kind, from, to });
        id
    };

    let neighbor_at = |id: usize, side: Side| -> Option<usize> {
        let (r, c) = ((id / cols) as isize, (id % cols) as isize);
        let (dr, dc) = side.offset();
        let (nr, nc) = (r + dr, c + dc);
        (nr >= 0 && nc >= 0 && (nr as usize) < rows && (nc as usize) < cols).then(|| nr as usize * cols + nc as usize)
    };

    // incoming[id][side] = the three lanes arriving at `id` through `side`.
    let mut incoming: Vec<[Option<[LaneId; 3]>; 4]> = alloc::vec![[None; 4]; n];
    let mut sources = Vec::new();
    for id in 0..n {
        for side in Side::ALL {
            let heading = side.opposite();
            let from = neighbor_at(id, side);
            let kind = if from.is_some() { LaneKind::Internal } else { LaneKind::Source };
            let link = Turn::ALL.map(|t| new_lane(heading, t, kind, from.map(IntersectionId), Some(IntersectionId(id))));
            incoming[id][side as usize] = Some(link);
            if from.is_none() {
                sources.push(SourceLink { intersection: IntersectionId(id), side, lanes: link });
            }
        }
    }

    let mut exits: Vec<[Option<[LaneId; 3]>; 4]> = alloc::vec![[None; 4]; n];
    let mut sinks = Vec::new();
    for id in 0..n {
        for side in Side::ALL {
            exits[id][side as usize] = Some(match neighbor_at(id, side) {
                Some(nb) => incoming[nb][side.opposite() as usize].expect("every side has an incoming link"),
                None => {
                    let lane = new_lane(side, Turn::Through, LaneKind::Sink, Some(IntersectionId(id)), None);
                    sinks.push(SinkLink { intersection: IntersectionId(id), side, lane });
                    [lane; 3]
                }
            });
        }
    }

    let patterns = standard_phase_set();
    let mut adjacency = alloc::vec![false; n * n];
    let mut intersections = Vec::with_capacity(n);
    for id in 0..n {
        let (r, c) = (id / cols, id % cols);
        let position = (c as f64 * link_length, (rows - 1 - r) as f64 * link_length);
        let mut slots = [None; LANES_PER_INTERSECTION];
        let mut movements = [None; LANES_PER_INTERSECTION];
        for side in Side::ALL {
            if let Some(link) = incoming[id][side as usize] {
                for turn in Turn::ALL {
                    let slot = Intersection::slot(side, turn);
                    slots[slot] = Some(link[turn as usize]);
                    if let Some(out) = exits[id][turn.exit_side(side) as usize] {
                        // Paired out lane: the downstream lane carrying the same turn role.
                        movements[slot] = Some(Movement { in_lane: link[turn as usize], out_lane: out[turn as usize], turn });
                    }
                }
            }
        }
        let phases = patterns
            .iter()
            .map(|p| Phase {
                index: p.index,
                movements: p
                    .movements
                    .iter()
                    .filter_map(|&(s, t)| movements[Intersection::slot(s, t)])
                    .collect(),
            })
            .collect();
        let mut neighbors: Vec<IntersectionId> =
            Side::ALL.iter().filter_map(|&s| neighbor_at(id, s)).map(IntersectionId).collect();
        // Grid neighbours are equidistant, so this reduces to id order.
        neighbors.sort_by(|a, b| {
            let d = |o: &IntersectionId| {
                let (orow, ocol) = (o.0 / cols, o.0 % cols);
                let (dx, dy) = (ocol as f64 - c as f64, orow as f64 - r as f64);
                dx * dx + dy * dy
            };
            d(a).partial_cmp(&d(b)).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(b))
        });
        for nb in &neighbors {
            adjacency[id * n + nb.0] = true;
        }
        let outgoing = exits[id]
            .iter()
            .flatten()
            .flat_map(|link| {
                let mut v: Vec<LaneId> = link.to_vec();
                v.dedup();
                v
            })
            .collect();
        intersections.push(Intersection {
            id: IntersectionId(id),
            position,
            incoming: slots,
            outgoing,
            movements,
            phases,
            neighbors,
            exits: exits[id],
        });
    }

    let mut network = Network {
        rows,
        cols,
        link_length,
        speed_limit,
        intersections,
        lanes,
        adjacency,
        regions: Regions { assignment: Vec::new(), members: Vec::new(), centroids: Vec::new(), grid: (1, 1) },
        sources,
        sinks,
    };
    network.regions = partition_regions(&network, 1, 1)?;
    Ok(network)
}

/// Lookup of per-lane vehicle counts.
pub trait LaneCounts {
    fn count(&self, lane: LaneId) -> Option<f64>;
}

impl LaneCounts for [f64] {
    fn count(&self, lane: LaneId) -> Option<f64> {
        self.get(lane.0).copied()
    }
}

impl LaneCounts for Vec<f64> {
    fn count(&self, lane: LaneId) -> Option<f64> {
        self.get(lane.0).copied()
    }
}

impl LaneCounts for BTreeMap<LaneId, f64> {
    fn count(&self, lane: LaneId) -> Option<f64> {
        self.get(&lane).copied()
    }
}

/// Pressure of a single movement, `q_in - q_out`.
pub fn movement_pressure<Q: LaneCounts + ?Sized>(queues: &Q, m: &Movement) -> Result<f64> {
    let q_in = queues.count(m.in_lane).ok_or(Error::MissingLane(m.in_lane.0))?;
    let q_out = queues.count(m.out_lane).ok_or(Error::MissingLane(m.out_lane.0))?;
    Ok(q_in - q_out)
}

/// Sum of `q_in - q_out` over the signalized movements of `phase`. Right turns are unsignalized
/// and excluded.
pub fn phase_pressure<Q: LaneCounts + ?Sized>(queues: &Q, _intersection: &Intersection, phase: &Phase) -> Result<f64> {
    phase
        .movements
        .iter()
        .filter(|m| m.turn != Turn::Right)
        .try_fold(0.0, |acc, m| Ok(acc + movement_pressure(queues, m)?))
}

/// Assign intersections to the cells of a `region_rows x region_cols` grid laid over the
/// network's bounding box. Empty cells are dropped; regions are numbered row-major from the
/// north-west corner.
pub fn partition_regions(network: &Network, region_rows: usize, region_cols: usize) -> Result<Regions> {
    if region_rows == 0 || region_cols == 0 {
        return Err(Error::InvalidRegions(format!("{region_rows}x{region_cols}")));
    }
    let n = network.num_intersections();
    if region_rows * region_cols > n {
        return Err(Error::InvalidRegions(format!(
            "{region_rows}x{region_cols} cells exceed {n} intersections"
        )));
    }
    let (min_x, min_y, max_x, max_y) = network.bounds();
    let cell = |v: f64, lo: f64, hi: f64, k: usize| -> usize {
        if hi - lo <= 0.0 {
            return 0;
        }
        let idx = libm::floor((v - lo) / (hi - lo) * k as f64) as usize;
        idx.min(k - 1)
    };
    let mut cell_members: Vec<Vec<IntersectionId>> = alloc::vec![Vec::new(); region_rows * region_cols];
    for i in &network.intersections {
        let (x, y) = i.position;
        let cx = cell(x, min_x, max_x, region_cols);
        // Measure rows from the northern edge.
        let cy = cell(max_y - y, 0.0, max_y - min_y, region_rows);
        cell_members[cy * region_cols + cx].push(i.id);
    }
    let members: Vec<Vec<IntersectionId>> = cell_members.into_iter().filter(|m| !m.is_empty()).collect();
    let mut assignment = alloc::vec![0; n];
    let mut centroids = Vec::with_capacity(members.len());
    for (r, m) in members.iter().enumerate() {
        let (mut sx, mut sy) = (0.0, 0.0);
        for id in m {
            assignment[id.0] = r;
            sx += network.intersections[id.0].position.0;
            sy += network.intersections[id.0].position.1;
        }
        centroids.push((sx / m.len() as f64, sy / m.len() as f64));
    }
    Ok(Regions { assignment, members, centroids, grid: (region_rows, region_cols) })
}
