#include <stdio.h>
#include <string.h>
#include "rmfs.h"

#define CHECK(cond) do { if (!(cond)) { fprintf(stderr, "failed: %s (line %d)\n", #cond, __LINE__); return 1; } } while (0)

int main(void) {
    RmfsLayout *layout = NULL;
    CHECK(rmfs_layout_default(&layout) == RMFS_STATUS_OK);
    size_t zones = 0;
    CHECK(rmfs_layout_zone_count(layout, &zones) == RMFS_STATUS_OK && zones == 6);

    RmfsDemandConfig cfg = rmfs_demand_config_default();
    cfg.orders = 800.0;
    cfg.periods = 40;
    cfg.horizon_seconds = 2400.0;
    cfg.seed = 9;
    RmfsOrders *orders = NULL;
    CHECK(rmfs_orders_generate(&cfg, &orders) == RMFS_STATUS_OK);

    RmfsEpisodeMetrics random_m, sl_m;
    CHECK(rmfs_episode_run(layout, orders, "random", NULL, 9, &random_m) == RMFS_STATUS_OK);
    CHECK(rmfs_episode_run(layout, orders, "sl+rollout:h=3", NULL, 9, &sl_m) == RMFS_STATUS_OK);
    double gain = 0.0;
    CHECK(rmfs_compute_gain(sl_m.avg_travel_time, random_m.avg_travel_time, &gain) == RMFS_STATUS_OK);

    CHECK(rmfs_episode_run(layout, orders, "nope", NULL, 9, &sl_m) == RMFS_STATUS_INVALID_ARGUMENT);
    const char *msg = rmfs_last_error_message();
    CHECK(msg != NULL && strstr(msg, "nope") != NULL);

    rmfs_orders_free(orders);
    rmfs_layout_free(layout);
    printf("ok %.3f\n", gain);
    return 0;
}
