//! Skewed, time-stamped order stream with deadlines.
//!
//! Every item type `i` (1-based) receives a Poisson number of requests per
//! period with mean `((i/m)^s - ((i-1)/m)^s) * n / N`. A period with `k >= 1`
//! requests for the same item yields one order carrying `group_size = k`.

use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DemandError {
    #[error("invalid demand configuration: {0}")]
    InvalidConfig(String),
    #[error("{0} outside its domain")]
    Domain(String),
    #[error("item index {0} outside 1..={1}")]
    ItemOutOfRange(usize, usize),
    #[error("order csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandConfig {
    /// Number of item types (one shelf per item).
    pub items: usize,
    /// Expected total number of requests over the horizon.
    pub orders: f64,
    /// Number of discretised arrival periods.
    pub periods: usize,
    /// ABC-curve skewness, smaller is more skewed.
    pub skewness: f64,
    /// Deadline tightness; allowances are drawn in `[1, tightness * horizon]`.
    pub tightness: f64,
    /// Horizon in seconds.
    pub horizon: f64,
    pub seed: u64,
}

impl Default for DemandConfig {
    fn default() -> Self {
        Self {
            items: 34,
            orders: 30_000.0,
            periods: 1440,
            skewness: 0.6,
            tightness: 0.4,
            horizon: 86_400.0,
            seed: 0,
        }
    }
}

impl DemandConfig {
    pub fn validate(&self) -> Result<(), DemandError> {
        let bad = |msg: String| Err(DemandError::InvalidConfig(msg));
        if self.items == 0 {
            return bad("items must be at least 1".into());
        }
        if !(self.orders.is_finite() && self.orders >= 1.0) {
            return bad(format!("orders must be at least 1, got {}", self.orders));
        }
        if self.periods == 0 {
            return bad("periods must be at least 1".into());
        }
        if !(self.skewness > 0.0 && self.skewness <= 1.0) {
            return bad(format!("skewness must lie in (0, 1], got {}", self.skewness));
        }
        if !(self.tightness > 0.0 && self.tightness <= 1.0) {
            return bad(format!("tightness must lie in (0, 1], got {}", self.tightness));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.tightness * self.horizon < 1.0 {
            return bad("tightness * horizon must be at least one second".into());
        }
        Ok(())
    }

    /// Same arrival rate and period length, shorter (or longer) horizon so that
    /// the expected total is `orders`.
    pub fn with_total_orders(&self, orders: f64) -> Self {
        let factor = orders / self.orders;
        let periods = ((self.periods as f64 * factor).round() as usize).max(1);
        let actual = periods as f64 / self.periods as f64;
        Self {
            orders: self.orders * actual,
            periods,
            horizon: self.horizon * actual,
            ..self.clone()
        }
    }

    pub fn period_length(&self) -> f64 {
        self.horizon / self.periods as f64
    }

    /// Per-period rates of all items, item `i` (1-based) at index `i - 1`.
    pub fn rates(&self) -> Vec<f64> {
        (1..=self.items).map(|i| rate_unchecked(i, self)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub id: usize,
    /// Zero-based item type, which is also the shelf id.
    pub item: usize,
    pub arrival: f64,
    pub deadline: f64,
    pub group_size: u32,
}

/// Cumulative demand share of the top fraction `x` of items.
pub fn abc_curve(x: f64, s: f64) -> Result<f64, DemandError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(DemandError::Domain(format!("fraction {x}")));
    }
    if !(s > 0.0 && s <= 1.0) {
        return Err(DemandError::Domain(format!("skewness {s}")));
    }
    Ok(x.powf(s))
}

/// Mean requests per period for the 1-based item `i`.
pub fn item_rate(i: usize, cfg: &DemandConfig) -> Result<f64, DemandError> {
    if i == 0 || i > cfg.items {
        return Err(DemandError::ItemOutOfRange(i, cfg.items));
    }
    Ok(rate_unchecked(i, cfg))
}

fn rate_unchecked(i: usize, cfg: &DemandConfig) -> f64 {
    let m = cfg.items as f64;
    let share = (i as f64 / m).powf(cfg.skewness) - ((i - 1) as f64 / m).powf(cfg.skewness);
    share * cfg.orders / cfg.periods as f64
}

/// Draws the full order stream, sorted by arrival then item.
pub fn generate_orders(cfg: &DemandConfig) -> Result<Vec<Order>, DemandError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samplers: Vec<Option<Poisson<f64>>> = cfg
        .rates()
        .into_iter()
        .map(|l| (l > 0.0).then(|| Poisson::new(l).expect("positive finite rate")))
        .collect();
    let max_allowance = cfg.tightness * cfg.horizon;
    let step = cfg.period_length();

    let mut orders = Vec::with_capacity(cfg.orders.ceil() as usize);
    for p in 0..cfg.periods {
        let arrival = p as f64 * step;
        for (item, sampler) in samplers.iter().enumerate() {
            let Some(sampler) = sampler else { continue };
            let k = sampler.sample(&mut rng) as u32;
            if k == 0 {
                continue;
            }
            let allowance = if max_allowance > 1.0 { rng.random_range(1.0..=max_allowance) } else { 1.0 };
            orders.push(Order {
                id: orders.len(),
                item,
                arrival,
                deadline: arrival + allowance,
                group_size: k,
            });
        }
    }
    Ok(orders)
}

pub fn write_orders_csv<W: io::Write>(orders: &[Order], out: W) -> Result<(), DemandError> {
    let mut w = csv::Writer::from_writer(out);
    for o in orders {
        w.serialize(o)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_orders_csv<R: io::Read>(input: R) -> Result<Vec<Order>, DemandError> {
    let mut r = csv::Reader::from_reader(input);
    let orders = r.deserialize().collect::<Result<Vec<Order>, _>>()?;
    Ok(orders)
}
