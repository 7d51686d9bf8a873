//! Discrete-event simulation of robots running dual-command cycles between a
//! single picking station and the storage area.
//!
//! A robot that finishes a pick either re-queues with the same shelf
//! (opportunistic task, when the shelf's item has pending requests) or must
//! store its shelf. Storage is the only decision left to a policy: the next
//! retrieval is the revealed order with the earliest deadline whose shelf is
//! stored and not already claimed by another robot.
//!
//! The engine is driven step-wise through [`Simulation::next_decision`] and
//! one of [`Simulation::apply_storage`] / [`Simulation::apply_opportunistic`],
//! which lets learners and look-ahead search share the same code path as
//! plain evaluation ([`run_episode`]).

use std::cmp::Ordering;
use std::collections::{BTreeSet, VecDeque};
use std::io;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::Order;
use crate::layout::Layout;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("zone {0} has no free cell")]
    ZoneFull(usize),
    #[error("zone {0} does not exist")]
    UnknownZone(usize),
    #[error("cell {cell} is not a free cell of zone {zone}")]
    BadCell { zone: usize, cell: usize },
    #[error("no decision is pending")]
    NoPendingDecision,
    #[error("pending decision is of a different kind")]
    WrongDecisionKind,
    #[error("a decision is pending and must be resolved first")]
    DecisionPending,
    #[error("invalid simulation configuration: {0}")]
    InvalidConfig(String),
    #[error("invariant violated at t={clock}: {what}")]
    Invariant { clock: f64, what: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub robots: usize,
    /// One shelf per item type.
    pub shelves: usize,
    /// Station visits discarded before metrics accumulate.
    pub warmup_cycles: usize,
    /// Count opportunistic visits in the headline average.
    pub count_opportunistic: bool,
    /// Re-check every invariant after each event (slow).
    pub check_invariants: bool,
    pub record_trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            robots: 5,
            shelves: 34,
            warmup_cycles: 100,
            count_opportunistic: true,
            check_invariants: false,
            record_trace: false,
        }
    }
}

/// Where a shelf currently is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShelfPlace {
    Stored(usize),
    Carried(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellSlot {
    Free,
    Occupied(usize),
    /// Promised to a shelf that is still on its way.
    Reserved(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RobotPhase {
    IdleAtStation,
    /// Parked unloaded in the storage area, waiting for work.
    Idle,
    Storing,
    Interleaving,
    Retrieving,
    Queued,
    Picking,
    AwaitingDecision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Station,
    Cell(usize),
}

/// A retrieval assignment: the order that triggered it and where its shelf sits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Retrieval {
    pub order: usize,
    pub shelf: usize,
    pub cell: usize,
    pub zone: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub id: usize,
    pub phase: RobotPhase,
    pub carrying: Option<usize>,
    pub location: Location,
    pub retrieval: Option<Retrieval>,
    pub store_cell: Option<usize>,
    /// Travel seconds accumulated since the robot last left the station.
    pub cycle_travel: f64,
    pub idle_since: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StorageRequest {
    pub robot: usize,
    pub shelf: usize,
    pub next_retrieval: Option<Retrieval>,
    /// Zones with at least one free cell.
    pub feasible: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpportunisticTask {
    pub robot: usize,
    pub shelf: usize,
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Storage(StorageRequest),
    Opportunistic(OpportunisticTask),
}

impl Decision {
    pub fn robot(&self) -> usize {
        match self {
            Decision::Storage(r) => r.robot,
            Decision::Opportunistic(o) => o.robot,
        }
    }

    pub fn shelf(&self) -> usize {
        match self {
            Decision::Storage(r) => r.shelf,
            Decision::Opportunistic(o) => o.shelf,
        }
    }
}

/// Answer of a storage policy. `cell` pins an exact free cell of `zone`;
/// otherwise the zone's free cell nearest to the station is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub zone: usize,
    pub cell: Option<usize>,
}

impl Placement {
    pub fn zone(zone: usize) -> Self {
        Self { zone, cell: None }
    }
}

/// Result of a resolved decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleOutcome {
    pub zone: Option<usize>,
    pub cell: Option<usize>,
    /// Travel seconds of the cycle this decision commits to: storage access,
    /// interleaving and retrieval legs. Zero for opportunistic tasks.
    pub travel: f64,
    pub opportunistic: bool,
}

/// One line of the optional decision trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub clock: f64,
    pub robot: usize,
    pub shelf: usize,
    pub zone: Option<usize>,
    pub travel: f64,
    pub opportunistic: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeMetrics {
    /// Headline average travel seconds per cycle (see [`SimConfig::count_opportunistic`]).
    pub avg_travel_time: f64,
    /// Average over station visits that followed a trip to the storage area.
    pub avg_travel_storage_cycles: f64,
    /// Average over every station visit, opportunistic ones included.
    pub avg_travel_all_visits: f64,
    pub total_cycles: usize,
    pub storage_cycles: usize,
    pub opportunistic_cycles: usize,
    pub total_travel: f64,
    pub fulfilled_orders: usize,
    pub storage_decisions: usize,
    pub end_clock: f64,
    pub trace: Vec<TraceRow>,
}

pub trait StoragePolicy {
    fn name(&self) -> String;
    fn select(&mut self, sim: &Simulation, request: &StorageRequest) -> Placement;
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct DeadlineKey {
    deadline: f64,
    id: usize,
}

impl Eq for DeadlineKey {}

impl Ord for DeadlineKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.deadline.total_cmp(&other.deadline).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for DeadlineKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    UnloadDone,
    LoadDone,
    ArriveStation,
    PickDone,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    robot: usize,
    kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.robot.cmp(&other.robot))
            .then(self.kind.cmp(&other.kind))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Totals {
    visits_seen: usize,
    storage_cycles: usize,
    opportunistic_cycles: usize,
    travel: f64,
    fulfilled_orders: usize,
    storage_decisions: usize,
}

/// Full warehouse state. `Clone` is the snapshot operation.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    layout: Arc<Layout>,
    cfg: SimConfig,
    clock: f64,
    orders: Arc<[Order]>,
    next_arrival: usize,
    frozen: bool,
    cells: Vec<CellSlot>,
    shelf_place: Vec<ShelfPlace>,
    claimed: Vec<Option<usize>>,
    zone_free: Vec<usize>,
    inbound: Vec<usize>,
    robots: Vec<RobotState>,
    station_queue: VecDeque<usize>,
    operator: Option<usize>,
    revealed: BTreeSet<DeadlineKey>,
    pending_by_item: Vec<BTreeSet<DeadlineKey>>,
    events: BTreeSet<Event>,
    pending: Option<Decision>,
    totals: Totals,
    trace: Vec<TraceRow>,
}

impl Simulation {
    /// Shelves are scattered uniformly at random (seeded) over the storage
    /// cells; robots start idle and unloaded at the station.
    pub fn new(layout: Arc<Layout>, orders: Arc<[Order]>, cfg: SimConfig, seed: u64) -> Result<Self, SimError> {
        let n_cells = layout.storage_cells().len();
        if cfg.robots == 0 {
            return Err(SimError::InvalidConfig("at least one robot is required".into()));
        }
        if cfg.shelves == 0 || cfg.shelves >= n_cells {
            return Err(SimError::InvalidConfig(format!(
                "shelf count {} must lie in 1..{n_cells}",
                cfg.shelves
            )));
        }
        if let Some(o) = orders.iter().find(|o| o.item >= cfg.shelves) {
            return Err(SimError::InvalidConfig(format!("order {} names unknown item {}", o.id, o.item)));
        }
        if orders.windows(2).any(|w| w[1].arrival < w[0].arrival) {
            return Err(SimError::InvalidConfig("orders must be sorted by arrival".into()));
        }
        if orders.iter().enumerate().any(|(i, o)| o.id != i) {
            return Err(SimError::InvalidConfig("order ids must equal their position".into()));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut slots: Vec<usize> = (0..n_cells).collect();
        slots.shuffle(&mut rng);

        let mut cells = vec![CellSlot::Free; n_cells];
        let mut shelf_place = Vec::with_capacity(cfg.shelves);
        for (shelf, &cell) in slots.iter().take(cfg.shelves).enumerate() {
            cells[cell] = CellSlot::Occupied(shelf);
            shelf_place.push(ShelfPlace::Stored(cell));
        }
        let zone_free = layout
            .zones()
            .iter()
            .map(|z| z.cells.iter().filter(|&&c| cells[c] == CellSlot::Free).count())
            .collect();
        let robots = (0..cfg.robots)
            .map(|id| RobotState {
                id,
                phase: RobotPhase::IdleAtStation,
                carrying: None,
                location: Location::Station,
                retrieval: None,
                store_cell: None,
                cycle_travel: 0.0,
                idle_since: 0.0,
            })
            .collect();
        let zones = layout.zone_count();
        Ok(Self {
            claimed: vec![None; cfg.shelves],
            pending_by_item: vec![BTreeSet::new(); cfg.shelves],
            layout,
            clock: 0.0,
            orders,
            next_arrival: 0,
            frozen: false,
            cells,
            shelf_place,
            zone_free,
            inbound: vec![0; zones],
            robots,
            station_queue: VecDeque::new(),
            operator: None,
            revealed: BTreeSet::new(),
            events: BTreeSet::new(),
            pending: None,
            totals: Totals::default(),
            trace: Vec::new(),
            cfg,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn layout_arc(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn robots(&self) -> &[RobotState] {
        &self.robots
    }

    pub fn shelf_place(&self, shelf: usize) -> ShelfPlace {
        self.shelf_place[shelf]
    }

    pub fn cell_slot(&self, cell: usize) -> CellSlot {
        self.cells[cell]
    }

    /// Occupied or reserved cells.
    pub fn occupied_mask(&self) -> Vec<bool> {
        self.cells.iter().map(|c| *c != CellSlot::Free).collect()
    }

    pub fn zone_free(&self) -> &[usize] {
        &self.zone_free
    }

    /// Robots currently driving unloaded toward a retrieval in each zone.
    pub fn inbound_per_zone(&self) -> &[usize] {
        &self.inbound
    }

    pub fn feasible_zones(&self) -> Vec<bool> {
        self.zone_free.iter().map(|&f| f > 0).collect()
    }

    pub fn station_queue(&self) -> impl Iterator<Item = usize> + '_ {
        self.station_queue.iter().copied()
    }

    pub fn pending_decision(&self) -> Option<&Decision> {
        self.pending.as_ref()
    }

    pub fn order(&self, id: usize) -> &Order {
        &self.orders[id]
    }

    pub fn revealed_count(&self) -> usize {
        self.revealed.len()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Stop revealing orders from the stream; only already revealed orders
    /// remain to be served. Used by look-ahead simulations.
    pub fn freeze_arrivals(&mut self) {
        self.frozen = true;
        self.cfg.record_trace = false;
        self.cfg.check_invariants = false;
    }

    pub fn snapshot(&self) -> Simulation {
        self.clone()
    }

    pub fn restore(&mut self, snapshot: &Simulation) {
        self.clone_from(snapshot);
    }

    /// Revealed, unfulfilled orders in deadline order.
    pub fn revealed_orders(&self) -> Vec<Order> {
        self.revealed.iter().map(|k| self.orders[k.id]).collect()
    }

    /// Earliest-deadline revealed order whose shelf sits in storage and is
    /// not already claimed by another robot. Orders whose shelf is on the
    /// move are left to the robot carrying it.
    pub fn next_retrieval(&self) -> Option<Retrieval> {
        self.revealed.iter().find_map(|k| {
            let shelf = self.orders[k.id].item;
            match self.shelf_place[shelf] {
                ShelfPlace::Stored(cell) if self.claimed[shelf].is_none() => Some(Retrieval {
                    order: k.id,
                    shelf,
                    cell,
                    zone: self.layout.zone_of(cell),
                }),
                _ => None,
            }
        })
    }

    /// Earliest-deadline pending order for the shelf `robot` carries.
    pub fn check_opportunistic(&self, robot: usize) -> Option<Order> {
        let shelf = self.robots[robot].carrying?;
        self.pending_by_item[shelf].first().map(|k| self.orders[k.id])
    }

    /// Runs events until a robot needs a decision. Returns `None` once every
    /// revealed order is served and no more orders will arrive.
    pub fn next_decision(&mut self) -> Result<Option<Decision>, SimError> {
        if let Some(d) = &self.pending {
            return Ok(Some(d.clone()));
        }
        loop {
            let next_event = self.events.first().map(|e| e.time);
            let next_arrival = (!self.frozen)
                .then(|| self.orders.get(self.next_arrival).map(|o| o.arrival))
                .flatten();
            match (next_arrival, next_event) {
                (None, None) => return Ok(None),
                (Some(a), e) if e.is_none_or(|e| a <= e) => {
                    self.advance_clock(a);
                    self.reveal_due_orders();
                    self.dispatch_idle();
                }
                _ => {
                    let ev = self.events.pop_first().expect("event exists");
                    self.advance_clock(ev.time);
                    self.handle(ev);
                }
            }
            if self.cfg.check_invariants {
                self.check_invariants()?;
            }
            if let Some(d) = &self.pending {
                return Ok(Some(d.clone()));
            }
        }
    }

    fn advance_clock(&mut self, t: f64) {
        debug_assert!(t >= self.clock, "clock moved backwards: {} -> {t}", self.clock);
        self.clock = t;
    }

    fn reveal_due_orders(&mut self) {
        while let Some(o) = self.orders.get(self.next_arrival) {
            if o.arrival > self.clock {
                break;
            }
            let key = DeadlineKey { deadline: o.deadline, id: o.id };
            self.revealed.insert(key);
            self.pending_by_item[o.item].insert(key);
            self.next_arrival += 1;
        }
    }

    fn schedule(&mut self, robot: usize, delay: f64, kind: EventKind) {
        self.events.insert(Event { time: self.clock + delay, robot, kind });
    }

    fn handle(&mut self, ev: Event) {
        let r = ev.robot;
        match ev.kind {
            EventKind::UnloadDone => {
                let cell = self.robots[r].store_cell.take().expect("storing robot has a target cell");
                let shelf = self.robots[r].carrying.take().expect("storing robot carries a shelf");
                self.cells[cell] = CellSlot::Occupied(shelf);
                self.shelf_place[shelf] = ShelfPlace::Stored(cell);
                self.robots[r].location = Location::Cell(cell);
                match self.robots[r].retrieval {
                    Some(ret) => {
                        self.robots[r].phase = RobotPhase::Interleaving;
                        self.inbound[ret.zone] += 1;
                        let travel = self.layout.interleave_seconds(cell, ret.cell);
                        self.robots[r].cycle_travel += travel;
                        self.schedule(r, travel + self.layout.handle_time, EventKind::LoadDone);
                    }
                    None => {
                        self.robots[r].phase = RobotPhase::Idle;
                        self.robots[r].idle_since = self.clock;
                    }
                }
                self.dispatch_idle();
            }
            EventKind::LoadDone => {
                let ret = self.robots[r].retrieval.take().expect("loading robot has a retrieval");
                self.inbound[ret.zone] -= 1;
                self.cells[ret.cell] = CellSlot::Free;
                self.zone_free[ret.zone] += 1;
                self.shelf_place[ret.shelf] = ShelfPlace::Carried(r);
                self.claimed[ret.shelf] = None;
                let robot = &mut self.robots[r];
                robot.carrying = Some(ret.shelf);
                robot.phase = RobotPhase::Retrieving;
                let travel = self.layout.station_leg_seconds(ret.cell);
                robot.cycle_travel += travel;
                self.schedule(r, travel, EventKind::ArriveStation);
            }
            EventKind::ArriveStation => {
                let travel = std::mem::take(&mut self.robots[r].cycle_travel);
                self.robots[r].location = Location::Station;
                self.robots[r].phase = RobotPhase::Queued;
                self.record_visit(travel, false);
                self.station_queue.push_back(r);
                self.try_start_pick();
            }
            EventKind::PickDone => {
                self.operator = None;
                self.robots[r].phase = RobotPhase::AwaitingDecision;
                let shelf = self.robots[r].carrying.expect("picked robot carries a shelf");
                let decision = match self.pending_by_item[shelf].first() {
                    Some(k) => Decision::Opportunistic(OpportunisticTask { robot: r, shelf, order: k.id }),
                    None => Decision::Storage(StorageRequest {
                        robot: r,
                        shelf,
                        next_retrieval: self.next_retrieval(),
                        feasible: self.feasible_zones(),
                    }),
                };
                self.pending = Some(decision);
            }
        }
    }

    fn record_visit(&mut self, travel: f64, opportunistic: bool) {
        self.totals.visits_seen += 1;
        if self.totals.visits_seen <= self.cfg.warmup_cycles {
            return;
        }
        if opportunistic {
            self.totals.opportunistic_cycles += 1;
        } else {
            self.totals.storage_cycles += 1;
        }
        self.totals.travel += travel;
    }

    fn try_start_pick(&mut self) {
        if self.operator.is_some() {
            return;
        }
        let Some(r) = self.station_queue.pop_front() else { return };
        self.operator = Some(r);
        self.robots[r].phase = RobotPhase::Picking;
        let shelf = self.robots[r].carrying.expect("queued robot carries a shelf");
        // The operator serves every pending request for the presented item.
        let batch = std::mem::take(&mut self.pending_by_item[shelf]);
        for k in &batch {
            self.revealed.remove(k);
        }
        self.totals.fulfilled_orders += batch.len();
        self.schedule(r, self.layout.pick_time, EventKind::PickDone);
    }

    fn dispatch_idle(&mut self) {
        loop {
            let idle = self
                .robots
                .iter()
                .filter(|r| matches!(r.phase, RobotPhase::Idle | RobotPhase::IdleAtStation))
                .min_by(|a, b| a.idle_since.total_cmp(&b.idle_since).then(a.id.cmp(&b.id)))
                .map(|r| r.id);
            let Some(r) = idle else { return };
            let Some(ret) = self.next_retrieval() else { return };
            self.claimed[ret.shelf] = Some(r);
            self.inbound[ret.zone] += 1;
            let travel = match self.robots[r].location {
                Location::Station => self.layout.station_unloaded_seconds(ret.cell),
                Location::Cell(c) => self.layout.interleave_seconds(c, ret.cell),
            };
            let robot = &mut self.robots[r];
            robot.retrieval = Some(ret);
            robot.phase = RobotPhase::Interleaving;
            robot.cycle_travel += travel;
            self.schedule(r, travel + self.layout.handle_time, EventKind::LoadDone);
        }
    }

    /// Commits the pending storage decision. Returns the travel of the cycle
    /// it starts (access leg plus, when a retrieval follows, interleaving and
    /// return legs).
    pub fn apply_storage(&mut self, placement: Placement) -> Result<CycleOutcome, SimError> {
        let req = match &self.pending {
            Some(Decision::Storage(req)) => req.clone(),
            Some(_) => return Err(SimError::WrongDecisionKind),
            None => return Err(SimError::NoPendingDecision),
        };
        let zone_id = placement.zone;
        let zone = self.layout.zones().get(zone_id).ok_or(SimError::UnknownZone(zone_id))?;
        if self.zone_free[zone_id] == 0 {
            return Err(SimError::ZoneFull(zone_id));
        }
        let cell = match placement.cell {
            Some(c) => {
                if c >= self.cells.len() || self.layout.zone_of(c) != zone_id || self.cells[c] != CellSlot::Free {
                    return Err(SimError::BadCell { zone: zone_id, cell: c });
                }
                c
            }
            None => {
                let occupied = self.occupied_mask();
                self.layout
                    .closest_open_location(&occupied, zone)
                    .ok_or(SimError::ZoneFull(zone_id))?
            }
        };
        self.pending = None;

        let r = req.robot;
        self.cells[cell] = CellSlot::Reserved(req.shelf);
        self.zone_free[zone_id] -= 1;
        let access = self.layout.station_leg_seconds(cell);
        let mut travel = access;
        if let Some(ret) = req.next_retrieval {
            self.claimed[ret.shelf] = Some(r);
            travel += self.layout.interleave_seconds(cell, ret.cell) + self.layout.station_leg_seconds(ret.cell);
        }
        let robot = &mut self.robots[r];
        robot.phase = RobotPhase::Storing;
        robot.store_cell = Some(cell);
        robot.retrieval = req.next_retrieval;
        robot.cycle_travel = access;
        robot.location = Location::Station;
        self.schedule(r, access + self.layout.handle_time, EventKind::UnloadDone);
        self.totals.storage_decisions += 1;

        if self.cfg.record_trace {
            self.trace.push(TraceRow {
                clock: self.clock,
                robot: r,
                shelf: req.shelf,
                zone: Some(zone_id),
                travel,
                opportunistic: false,
            });
        }
        self.try_start_pick();
        Ok(CycleOutcome { zone: Some(zone_id), cell: Some(cell), travel, opportunistic: false })
    }

    /// Sends the robot straight back into the station queue with its shelf.
    pub fn apply_opportunistic(&mut self) -> Result<CycleOutcome, SimError> {
        let task = match &self.pending {
            Some(Decision::Opportunistic(t)) => t.clone(),
            Some(_) => return Err(SimError::WrongDecisionKind),
            None => return Err(SimError::NoPendingDecision),
        };
        self.pending = None;
        self.robots[task.robot].phase = RobotPhase::Queued;
        self.robots[task.robot].cycle_travel = 0.0;
        self.record_visit(0.0, true);
        if self.cfg.record_trace {
            self.trace.push(TraceRow {
                clock: self.clock,
                robot: task.robot,
                shelf: task.shelf,
                zone: None,
                travel: 0.0,
                opportunistic: true,
            });
        }
        self.station_queue.push_back(task.robot);
        self.try_start_pick();
        Ok(CycleOutcome { zone: None, cell: None, travel: 0.0, opportunistic: true })
    }

    pub fn metrics(&self) -> EpisodeMetrics {
        let t = &self.totals;
        let all = t.storage_cycles + t.opportunistic_cycles;
        let avg = |n: usize| if n > 0 { t.travel / n as f64 } else { 0.0 };
        let total_cycles = if self.cfg.count_opportunistic { all } else { t.storage_cycles };
        EpisodeMetrics {
            avg_travel_time: avg(total_cycles),
            avg_travel_storage_cycles: avg(t.storage_cycles),
            avg_travel_all_visits: avg(all),
            total_cycles,
            storage_cycles: t.storage_cycles,
            opportunistic_cycles: t.opportunistic_cycles,
            total_travel: t.travel,
            fulfilled_orders: t.fulfilled_orders,
            storage_decisions: t.storage_decisions,
            end_clock: self.clock,
            trace: self.trace.clone(),
        }
    }

    /// Recomputes the derived bookkeeping from first principles.
    pub fn check_invariants(&self) -> Result<(), SimError> {
        let fail = |what: String| Err(SimError::Invariant { clock: self.clock, what });

        let mut seen = vec![0usize; self.cfg.shelves];
        let mut reserved = 0;
        for (c, slot) in self.cells.iter().enumerate() {
            match *slot {
                CellSlot::Occupied(s) => {
                    seen[s] += 1;
                    if self.shelf_place[s] != ShelfPlace::Stored(c) {
                        return fail(format!("cell {c} holds shelf {s} placed at {:?}", self.shelf_place[s]));
                    }
                }
                CellSlot::Reserved(s) => {
                    reserved += 1;
                    if !matches!(self.shelf_place[s], ShelfPlace::Carried(_)) {
                        return fail(format!("cell {c} reserved for shelf {s} which is not carried"));
                    }
                }
                CellSlot::Free => {}
            }
        }
        for r in &self.robots {
            if let Some(s) = r.carrying {
                seen[s] += 1;
                if self.shelf_place[s] != ShelfPlace::Carried(r.id) {
                    return fail(format!("robot {} carries shelf {s} placed at {:?}", r.id, self.shelf_place[s]));
                }
            }
        }
        if let Some(s) = seen.iter().position(|&n| n != 1) {
            return fail(format!("shelf {s} found in {} places", seen[s]));
        }

        let mut free_total = 0;
        for z in self.layout.zones() {
            let free = z.cells.iter().filter(|&&c| self.cells[c] == CellSlot::Free).count();
            if free != self.zone_free[z.id] {
                return fail(format!("zone {} free count {} != {free}", z.id, self.zone_free[z.id]));
            }
            free_total += free;
        }
        let stored = self.shelf_place.iter().filter(|p| matches!(p, ShelfPlace::Stored(_))).count();
        if free_total + stored + reserved != self.cells.len() {
            return fail(format!("{free_total} free + {stored} stored + {reserved} reserved != {}", self.cells.len()));
        }

        let mut inbound = vec![0; self.inbound.len()];
        for r in &self.robots {
            if r.phase == RobotPhase::Interleaving {
                inbound[r.retrieval.expect("interleaving robot has a retrieval").zone] += 1;
            }
        }
        if inbound != self.inbound {
            return fail(format!("inbound {:?} != recomputed {inbound:?}", self.inbound));
        }
        for (s, owner) in self.claimed.iter().enumerate() {
            if let Some(r) = owner {
                if self.robots[*r].retrieval.map(|x| x.shelf) != Some(s) {
                    return fail(format!("shelf {s} claimed by robot {r} without a matching retrieval"));
                }
            }
        }
        if self.revealed.len() != self.pending_by_item.iter().map(BTreeSet::len).sum::<usize>() {
            return fail("revealed set and per-item index disagree".into());
        }
        Ok(())
    }
}

/// Plays an order stream to completion with `policy` deciding every storage.
pub fn run_episode(
    layout: Arc<Layout>,
    orders: Arc<[Order]>,
    policy: &mut dyn StoragePolicy,
    cfg: &SimConfig,
    seed: u64,
) -> Result<EpisodeMetrics, SimError> {
    let mut sim = Simulation::new(layout, orders, cfg.clone(), seed)?;
    while let Some(decision) = sim.next_decision()? {
        match decision {
            Decision::Storage(req) => {
                let placement = policy.select(&sim, &req);
                sim.apply_storage(placement)?;
            }
            Decision::Opportunistic(_) => {
                sim.apply_opportunistic()?;
            }
        }
    }
    Ok(sim.metrics())
}

pub fn write_trace_csv<W: io::Write>(rows: &[TraceRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
