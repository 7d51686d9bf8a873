//! C ABI over the simulator: opaque handles, status codes and a per-thread
//! error message.
//!
//! Every function returns an [`RmfsStatus`]. On failure the message of the
//! last error on the calling thread is available from
//! [`rmfs_last_error_message`]. Handles returned through out-pointers are
//! owned by the caller and released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use rmfs_core::bench::{compute_gain, policy_from_spec, PolicySpec};
use rmfs_core::demand::{generate_orders, DemandConfig, Order};
use rmfs_core::layout::{build_default_layout, GridPosition, Layout};
use rmfs_core::nn::Network;
use rmfs_core::policies::TurnoverTable;
use rmfs_core::sim::{run_episode, SimConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmfsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Simulation = 4,
    Network = 5,
    Panic = 6,
}

/// Warehouse geometry.
pub struct RmfsLayout(Arc<Layout>);

/// A generated demand stream and the configuration that produced it.
pub struct RmfsOrders {
    orders: Arc<[Order]>,
    config: DemandConfig,
}

/// A trained Q-network.
pub struct RmfsNetwork(Arc<Network>);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmfsDemandConfig {
    pub items: usize,
    pub orders: f64,
    pub periods: usize,
    pub skewness: f64,
    pub tightness: f64,
    pub horizon_seconds: f64,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmfsOrder {
    pub id: usize,
    pub item: usize,
    pub arrival: f64,
    pub deadline: f64,
    pub group_size: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RmfsEpisodeMetrics {
    pub avg_travel_time: f64,
    pub avg_travel_storage_cycles: f64,
    pub avg_travel_all_visits: f64,
    pub total_cycles: usize,
    pub storage_cycles: usize,
    pub opportunistic_cycles: usize,
    pub fulfilled_orders: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(RmfsStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(RmfsStatus::NullPointer, format!("{what} is null"))
    }

    fn invalid(msg: impl ToString) -> Self {
        Failure(RmfsStatus::InvalidArgument, msg.to_string())
    }
}

/// Runs `f`, records its error message and converts panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RmfsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RmfsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RmfsStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::invalid(format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn rmfs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Default demand parameters: 34 items, 30000 orders over 1440 one-minute
/// periods, skewness 0.6, tightness 0.4.
#[no_mangle]
pub extern "C" fn rmfs_demand_config_default() -> RmfsDemandConfig {
    let d = DemandConfig::default();
    RmfsDemandConfig {
        items: d.items,
        orders: d.orders,
        periods: d.periods,
        skewness: d.skewness,
        tightness: d.tightness,
        horizon_seconds: d.horizon,
        seed: d.seed,
    }
}

/// # Safety
/// `out_layout` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmfs_layout_default(out_layout: *mut *mut RmfsLayout) -> RmfsStatus {
    guard(|| {
        let slot = out(out_layout, "out_layout")?;
        *slot = Box::into_raw(Box::new(RmfsLayout(Arc::new(build_default_layout()))));
        Ok(())
    })
}

/// # Safety
/// `layout` must be null or a handle from [`rmfs_layout_default`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rmfs_layout_free(layout: *mut RmfsLayout) {
    if !layout.is_null() {
        drop(Box::from_raw(layout));
    }
}

/// # Safety
/// `layout` must be a live layout handle; `out_count` writable.
#[no_mangle]
pub unsafe extern "C" fn rmfs_layout_storage_cells(layout: *const RmfsLayout, out_count: *mut usize) -> RmfsStatus {
    guard(|| {
        *out(out_count, "out_count")? = borrow(layout, "layout")?.0.storage_cells().len();
        Ok(())
    })
}

/// # Safety
/// `layout` must be a live layout handle; `out_count` writable.
#[no_mangle]
pub unsafe extern "C" fn rmfs_layout_zone_count(layout: *const RmfsLayout, out_count: *mut usize) -> RmfsStatus {
    guard(|| {
        *out(out_count, "out_count")? = borrow(layout, "layout")?.0.zone_count();
        Ok(())
    })
}

/// Grid distance in cells between two positions: loaded (aisles only) or
/// unloaded (Manhattan).
///
/// # Safety
/// `layout` must be a live layout handle; `out_distance` writable.
#[no_mangle]
pub unsafe extern "C" fn rmfs_layout_distance(
    layout: *const RmfsLayout,
    from_col: usize,
    from_row: usize,
    to_col: usize,
    to_row: usize,
    loaded: bool,
    out_distance: *mut f64,
) -> RmfsStatus {
    guard(|| {
        let layout = &borrow(layout, "layout")?.0;
        let a = GridPosition { col: from_col, row: from_row };
        let b = GridPosition { col: to_col, row: to_row };
        let d = if loaded { layout.loaded_distance(a, b) } else { layout.unloaded_distance(a, b) };
        *out(out_distance, "out_distance")? = d.map_err(Failure::invalid)?;
        Ok(())
    })
}

/// # Safety
/// `config` must point to a readable config; `out_orders` writable.
#[no_mangle]
pub unsafe extern "C" fn rmfs_orders_generate(
    config: *const RmfsDemandConfig,
    out_orders: *mut *mut RmfsOrders,
) -> RmfsStatus {
    guard(|| {
        let c = borrow(config, "config")?;
        let slot = out(out_orders, "out_orders")?;
        let config = DemandConfig {
            items: c.items,
            orders: c.orders,
            periods: c.periods,
            skewness: c.skewness,
            tightness: c.tightness,
            horizon: c.horizon_seconds,
            seed: c.seed,
        };
        let orders = generate_orders(&config).map_err(Failure::invalid)?;
        *slot = Box::into_raw(Box::new(RmfsOrders { orders: orders.into(), config }));
        Ok(())
    })
}

/// # Safety
/// `orders` must be a live orders handle; `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn rmfs_orders_len(orders: *const RmfsOrders, out_len: *mut usize) -> RmfsStatus {
    guard(|| {
        *out(out_len, "out_len")? = borrow(orders, "orders")?.orders.len();
        Ok(())
    })
}

/// # Safety
/// `orders` must be a live orders handle; `out_order` writable.
#[no_mangle]
pub unsafe extern "C" fn rmfs_orders_get(
    orders: *const RmfsOrders,
    index: usize,
    out_order: *mut RmfsOrder,
) -> RmfsStatus {
    guard(|| {
        let orders = &borrow(orders, "orders")?.orders;
        let o = orders
            .get(index)
            .ok_or_else(|| Failure::invalid(format!("index {index} out of range (len {})", orders.len())))?;
        *out(out_order, "out_order")? = RmfsOrder {
            id: o.id,
            item: o.item,
            arrival: o.arrival,
            deadline: o.deadline,
            group_size: o.group_size,
        };
        Ok(())
    })
}

/// # Safety
/// `orders` must be null or a handle from [`rmfs_orders_generate`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rmfs_orders_free(orders: *mut RmfsOrders) {
    if !orders.is_null() {
        drop(Box::from_raw(orders));
    }
}

/// Simulates one episode with 5 robots under the named policy
/// (`random | class | sl | agent`, optionally `+rollout:h=H`). `network` may
/// be null unless the policy is agent based.
///
/// # Safety
/// Handles must be live; `policy` a NUL-terminated string; `out_metrics` writable.
#[no_mangle]
pub unsafe extern "C" fn rmfs_episode_run(
    layout: *const RmfsLayout,
    orders: *const RmfsOrders,
    policy: *const c_char,
    network: *const RmfsNetwork,
    seed: u64,
    out_metrics: *mut RmfsEpisodeMetrics,
) -> RmfsStatus {
    guard(|| {
        let layout = &borrow(layout, "layout")?.0;
        let orders = borrow(orders, "orders")?;
        let spec: PolicySpec = string(policy, "policy")?.parse().map_err(Failure::invalid)?;
        let net = network.as_ref().map(|n| n.0.clone());
        let turnover = TurnoverTable::from_rates(orders.config.rates());
        let mut policy = policy_from_spec(&spec, layout, &turnover, seed, net.as_ref()).map_err(Failure::invalid)?;
        let sim = SimConfig { shelves: orders.config.items, ..SimConfig::default() };
        let m = run_episode(layout.clone(), orders.orders.clone(), policy.as_mut(), &sim, seed)
            .map_err(|e| Failure(RmfsStatus::Simulation, e.to_string()))?;
        *out(out_metrics, "out_metrics")? = RmfsEpisodeMetrics {
            avg_travel_time: m.avg_travel_time,
            avg_travel_storage_cycles: m.avg_travel_storage_cycles,
            avg_travel_all_visits: m.avg_travel_all_visits,
            total_cycles: m.total_cycles,
            storage_cycles: m.storage_cycles,
            opportunistic_cycles: m.opportunistic_cycles,
            fulfilled_orders: m.fulfilled_orders,
        };
        Ok(())
    })
}

/// Percentage decrease of `t_policy` relative to a positive `t_random`.
///
/// # Safety
/// `out_gain` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmfs_compute_gain(t_policy: f64, t_random: f64, out_gain: *mut f64) -> RmfsStatus {
    guard(|| {
        *out(out_gain, "out_gain")? = compute_gain(t_policy, t_random).map_err(Failure::invalid)?;
        Ok(())
    })
}

/// Loads a network from a text weights file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_network` writable.
#[no_mangle]
pub unsafe extern "C" fn rmfs_network_load(path: *const c_char, out_network: *mut *mut RmfsNetwork) -> RmfsStatus {
    guard(|| {
        let path = string(path, "path")?;
        let slot = out(out_network, "out_network")?;
        let net = Network::load(path).map_err(|e| Failure(RmfsStatus::Io, e.to_string()))?;
        *slot = Box::into_raw(Box::new(RmfsNetwork(Arc::new(net))));
        Ok(())
    })
}

/// # Safety
/// `network` must be a live handle; `out_inputs` and `out_outputs` writable.
#[no_mangle]
pub unsafe extern "C" fn rmfs_network_shape(
    network: *const RmfsNetwork,
    out_inputs: *mut usize,
    out_outputs: *mut usize,
) -> RmfsStatus {
    guard(|| {
        let net = &borrow(network, "network")?.0;
        *out(out_inputs, "out_inputs")? = net.input_size();
        *out(out_outputs, "out_outputs")? = net.output_size();
        Ok(())
    })
}

/// Forward pass. `inputs` holds `n_inputs` values and `outputs` room for
/// `n_outputs`; both counts must match the network.
///
/// # Safety
/// `inputs` must be readable for `n_inputs` doubles and `outputs` writable
/// for `n_outputs` doubles.
#[no_mangle]
pub unsafe extern "C" fn rmfs_network_forward(
    network: *const RmfsNetwork,
    inputs: *const f64,
    n_inputs: usize,
    outputs: *mut f64,
    n_outputs: usize,
) -> RmfsStatus {
    guard(|| {
        let net = &borrow(network, "network")?.0;
        if inputs.is_null() {
            return Err(Failure::null("inputs"));
        }
        if outputs.is_null() {
            return Err(Failure::null("outputs"));
        }
        if n_outputs != net.output_size() {
            return Err(Failure::invalid(format!("expected {} outputs, got {n_outputs}", net.output_size())));
        }
        let x = std::slice::from_raw_parts(inputs, n_inputs);
        let y = net.forward(x).map_err(|e| Failure(RmfsStatus::Network, e.to_string()))?;
        std::slice::from_raw_parts_mut(outputs, n_outputs).copy_from_slice(&y);
        Ok(())
    })
}

/// # Safety
/// `network` must be null or a handle from [`rmfs_network_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rmfs_network_free(network: *mut RmfsNetwork) {
    if !network.is_null() {
        drop(Box::from_raw(network));
    }
}
