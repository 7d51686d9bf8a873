#ifndef RMFS_H
#define RMFS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum RmfsStatus {
  RMFS_STATUS_OK = 0,
  RMFS_STATUS_NULL_POINTER = 1,
  RMFS_STATUS_INVALID_ARGUMENT = 2,
  RMFS_STATUS_IO = 3,
  RMFS_STATUS_SIMULATION = 4,
  RMFS_STATUS_NETWORK = 5,
  RMFS_STATUS_PANIC = 6,
} RmfsStatus;

/**
 * Warehouse geometry.
 */
typedef struct RmfsLayout RmfsLayout;

/**
 * A trained Q-network.
 */
typedef struct RmfsNetwork RmfsNetwork;

/**
 * A generated demand stream and the configuration that produced it.
 */
typedef struct RmfsOrders RmfsOrders;

typedef struct RmfsDemandConfig {
  size_t items;
  double orders;
  size_t periods;
  double skewness;
  double tightness;
  double horizon_seconds;
  uint64_t seed;
} RmfsDemandConfig;

typedef struct RmfsOrder {
  size_t id;
  size_t item;
  double arrival;
  double deadline;
  uint32_t group_size;
} RmfsOrder;

typedef struct RmfsEpisodeMetrics {
  double avg_travel_time;
  double avg_travel_storage_cycles;
  double avg_travel_all_visits;
  size_t total_cycles;
  size_t storage_cycles;
  size_t opportunistic_cycles;
  size_t fulfilled_orders;
} RmfsEpisodeMetrics;

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *rmfs_last_error_message(void);

/**
 * Default demand parameters: 34 items, 30000 orders over 1440 one-minute
 * periods, skewness 0.6, tightness 0.4.
 */
struct RmfsDemandConfig rmfs_demand_config_default(void);

/**
 * # Safety
 * `out_layout` must be writable.
 */
enum RmfsStatus rmfs_layout_default(struct RmfsLayout **out_layout);

/**
 * # Safety
 * `layout` must be null or a handle from [`rmfs_layout_default`] not yet freed.
 */
void rmfs_layout_free(struct RmfsLayout *layout);

/**
 * # Safety
 * `layout` must be a live layout handle; `out_count` writable.
 */
enum RmfsStatus rmfs_layout_storage_cells(const struct RmfsLayout *layout, size_t *out_count);

/**
 * # Safety
 * `layout` must be a live layout handle; `out_count` writable.
 */
enum RmfsStatus rmfs_layout_zone_count(const struct RmfsLayout *layout, size_t *out_count);

/**
 * Grid distance in cells between two positions: loaded (aisles only) or
 * unloaded (Manhattan).
 *
 * # Safety
 * `layout` must be a live layout handle; `out_distance` writable.
 */
enum RmfsStatus rmfs_layout_distance(const struct RmfsLayout *layout,
                                     size_t from_col,
                                     size_t from_row,
                                     size_t to_col,
                                     size_t to_row,
                                     bool loaded,
                                     double *out_distance);

/**
 * # Safety
 * `config` must point to a readable config; `out_orders` writable.
 */
enum RmfsStatus rmfs_orders_generate(const struct RmfsDemandConfig *config,
                                     struct RmfsOrders **out_orders);

/**
 * # Safety
 * `orders` must be a live orders handle; `out_len` writable.
 */
enum RmfsStatus rmfs_orders_len(const struct RmfsOrders *orders, size_t *out_len);

/**
 * # Safety
 * `orders` must be a live orders handle; `out_order` writable.
 */
enum RmfsStatus rmfs_orders_get(const struct RmfsOrders *orders,
                                size_t index,
                                struct RmfsOrder *out_order);

/**
 * # Safety
 * `orders` must be null or a handle from [`rmfs_orders_generate`] not yet freed.
 */
void rmfs_orders_free(struct RmfsOrders *orders);

/**
 * Simulates one episode with 5 robots under the named policy
 * (`random | class | sl | agent`, optionally `+rollout:h=H`). `network` may
 * be null unless the policy is agent based.
 *
 * # Safety
 * Handles must be live; `policy` a NUL-terminated string; `out_metrics` writable.
 */
enum RmfsStatus rmfs_episode_run(const struct RmfsLayout *layout,
                                 const struct RmfsOrders *orders,
                                 const char *policy,
                                 const struct RmfsNetwork *network,
                                 uint64_t seed,
                                 struct RmfsEpisodeMetrics *out_metrics);

/**
 * Percentage decrease of `t_policy` relative to a positive `t_random`.
 *
 * # Safety
 * `out_gain` must be writable.
 */
enum RmfsStatus rmfs_compute_gain(double t_policy, double t_random, double *out_gain);

/**
 * Loads a network from a text weights file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_network` writable.
 */
enum RmfsStatus rmfs_network_load(const char *path, struct RmfsNetwork **out_network);

/**
 * # Safety
 * `network` must be a live handle; `out_inputs` and `out_outputs` writable.
 */
enum RmfsStatus rmfs_network_shape(const struct RmfsNetwork *network,
                                   size_t *out_inputs,
                                   size_t *out_outputs);

/**
 * Forward pass. `inputs` holds `n_inputs` values and `outputs` room for
 * `n_outputs`; both counts must match the network.
 *
 * # Safety
 * `inputs` must be readable for `n_inputs` doubles and `outputs` writable
 * for `n_outputs` doubles.
 */
enum RmfsStatus rmfs_network_forward(const struct RmfsNetwork *network,
                                     const double *inputs,
                                     size_t n_inputs,
                                     double *outputs,
                                     size_t n_outputs);

/**
 * # Safety
 * `network` must be null or a handle from [`rmfs_network_load`] not yet freed.
 */
void rmfs_network_free(struct RmfsNetwork *network);

#endif  /* RMFS_H */
