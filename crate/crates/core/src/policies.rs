//! Baseline storage policies: random, concentric class-based and shortest leg.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::layout::Layout;
use crate::sim::{Placement, Simulation, StoragePolicy, StorageRequest};

/// Per-shelf demand rates and their relative ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnoverTable {
    rates: Vec<f64>,
    /// 1.0 for the fastest mover, 0.0 for the slowest.
    ranks: Vec<f64>,
    /// Shelf ids from fastest to slowest.
    order: Vec<usize>,
}

impl TurnoverTable {
    /// Ties keep the lower shelf id ahead.
    pub fn from_rates(rates: Vec<f64>) -> Self {
        assert!(rates.iter().all(|r| r.is_finite() && *r >= 0.0), "turnover rates must be nonnegative");
        let n = rates.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| rates[b].total_cmp(&rates[a]).then(a.cmp(&b)));
        let mut ranks = vec![1.0; n];
        if n > 1 {
            for (pos, &shelf) in order.iter().enumerate() {
                ranks[shelf] = (n - 1 - pos) as f64 / (n - 1) as f64;
            }
        }
        Self { rates, ranks, order }
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn rate(&self, shelf: usize) -> f64 {
        self.rates[shelf]
    }

    pub fn rank(&self, shelf: usize) -> f64 {
        self.ranks[shelf]
    }

    pub fn fastest_first(&self) -> &[usize] {
        &self.order
    }
}

/// Every free location is equally likely.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl StoragePolicy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn select(&mut self, sim: &Simulation, _request: &StorageRequest) -> Placement {
        let free: Vec<usize> = sim
            .occupied_mask()
            .iter()
            .enumerate()
            .filter_map(|(c, &occ)| (!occ).then_some(c))
            .collect();
        let &cell = free.choose(&mut self.rng).expect("at least one free cell");
        Placement { zone: sim.layout().zone_of(cell), cell: Some(cell) }
    }
}

/// Shares of shelves and of storage zones per class, fastest class first.
pub const CLASS_SHARES: [f64; 3] = [0.2, 0.3, 0.5];

/// Concentric class-based storage: shelves are ranked by turnover into
/// classes, each class owns a band of zones at increasing distance from the
/// station, and a shelf goes to a random free cell of its band.
#[derive(Debug, Clone)]
pub struct ClassBasedPolicy {
    shelf_class: Vec<usize>,
    bands: Vec<Vec<usize>>,
    cell_band: Vec<usize>,
    rng: ChaCha8Rng,
}

/// Cumulative share boundaries over `n` elements, rounded to whole elements.
fn class_bounds(n: usize) -> Vec<usize> {
    let mut acc = 0.0;
    CLASS_SHARES
        .iter()
        .map(|share| {
            acc += share;
            (acc * n as f64).round() as usize
        })
        .collect()
}

impl ClassBasedPolicy {
    pub fn new(layout: &Layout, turnover: &TurnoverTable, seed: u64) -> Self {
        let bands = concentric_bands(layout);
        let mut cell_band = vec![0; layout.storage_cells().len()];
        for (b, cells) in bands.iter().enumerate() {
            for &c in cells {
                cell_band[c] = b;
            }
        }
        let n = turnover.len();
        let bounds = class_bounds(n);
        let mut shelf_class = vec![0; n];
        for (pos, &shelf) in turnover.fastest_first().iter().enumerate() {
            shelf_class[shelf] = bounds.iter().position(|&b| pos < b).unwrap_or(bounds.len() - 1);
        }
        Self { shelf_class, bands, cell_band, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn class_of(&self, shelf: usize) -> usize {
        self.shelf_class[shelf]
    }

    pub fn bands(&self) -> &[Vec<usize>] {
        &self.bands
    }

    pub fn band_of(&self, cell: usize) -> usize {
        self.cell_band[cell]
    }

    /// Bands to try for a class: its own first, then outward by distance,
    /// the band nearer the station winning ties.
    fn search_order(&self, class: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.bands.len()).collect();
        order.sort_by_key(|&b| (b.abs_diff(class), b));
        order
    }
}

/// Storage cells grouped in bands of whole zones. Zones are already numbered
/// by distance from the station, so band 0 holds the nearest ones. On the
/// reference layout the bands are zone 0, zones 1-2 and zones 3-5.
pub fn concentric_bands(layout: &Layout) -> Vec<Vec<usize>> {
    let mut start = 0;
    class_bounds(layout.zone_count())
        .into_iter()
        .map(|end| {
            let end = end.max(start);
            let mut cells: Vec<usize> = layout.zones()[start..end].iter().flat_map(|z| z.cells.iter().copied()).collect();
            cells.sort_unstable();
            start = end;
            cells
        })
        .collect()
}

impl StoragePolicy for ClassBasedPolicy {
    fn name(&self) -> String {
        "class".into()
    }

    fn select(&mut self, sim: &Simulation, request: &StorageRequest) -> Placement {
        let occupied = sim.occupied_mask();
        let class = self.shelf_class[request.shelf];
        for band in self.search_order(class) {
            let free: Vec<usize> = self.bands[band].iter().copied().filter(|&c| !occupied[c]).collect();
            if let Some(&cell) = free.choose(&mut self.rng) {
                return Placement { zone: sim.layout().zone_of(cell), cell: Some(cell) };
            }
        }
        unreachable!("storage requested with every cell taken")
    }
}

/// Zone whose nearest-to-station free cell minimises the access leg plus
/// the unloaded leg to the next retrieval.
#[derive(Debug, Clone, Copy, Default)]
pub struct ShortestLegPolicy;

impl ShortestLegPolicy {
    /// Leg length in grid steps.
    pub fn leg(layout: &Layout, cell: usize, retrieval_cell: Option<usize>) -> usize {
        layout.station_leg_steps(cell) + retrieval_cell.map_or(0, |r| layout.interleave_steps(cell, r))
    }

    pub fn choose(&self, sim: &Simulation, request: &StorageRequest) -> Placement {
        let layout = sim.layout();
        let occupied = sim.occupied_mask();
        let target = request.next_retrieval.map(|r| r.cell);
        let mut best: Option<(usize, usize, usize)> = None;
        for zone in layout.zones() {
            let Some(cell) = layout.closest_open_location(&occupied, zone) else { continue };
            let leg = Self::leg(layout, cell, target);
            if best.is_none_or(|(b, _, _)| leg < b) {
                best = Some((leg, zone.id, cell));
            }
        }
        let (_, zone, cell) = best.expect("at least one zone has a free cell");
        Placement { zone, cell: Some(cell) }
    }
}

impl StoragePolicy for ShortestLegPolicy {
    fn name(&self) -> String {
        "sl".into()
    }

    fn select(&mut self, sim: &Simulation, request: &StorageRequest) -> Placement {
        self.choose(sim, request)
    }
}
