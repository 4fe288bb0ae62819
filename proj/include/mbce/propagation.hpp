#ifndef MBCE_PROPAGATION_HPP
#define MBCE_PROPAGATION_HPP

#include <array>
#include <string>
#include <vector>

#include "mbce/channel.hpp"
#include "mbce/common.hpp"
#include "mbce/rng.hpp"

namespace mbce {

using Vec3 = std::array<double, 3>;
using Vec2 = std::array<double, 2>;

// Axis-aligned building box with a per-building complex reflection
// coefficient. Footprint on the ground plane, walls vertical.
struct Building {
    double xmin = 0, ymin = 0, xmax = 0, ymax = 0;
    double height = 0;
    cxd reflection_coeff{0.3, 0.0};
};

struct Scene {
    Vec2 extent_m{100.0, 100.0};
    Vec3 tx_position_m{50.0, 50.0, 20.0};
    std::vector<Building> buildings;
    double rx_height_m = 1.5;
    int max_order = 1; // reflection order used for RSS maps and datasets
    uint64_t rng_seed = 0;

    void validate() const;
};

Scene scene_from_json(const std::string& json_text);
std::string scene_to_json(const Scene& scene);

// Received power raster in dBm over the scene ground grid.
struct RssMap {
    int h_px = 0;
    int w_px = 0;
    std::vector<double> grid_dbm; // row-major [h_px, w_px], row <-> y
    Vec2 origin_m{0.0, 0.0};
    double resolution_m_per_px = 1.0;

    double& at(int row, int col) { return grid_dbm[size_t(row) * w_px + col]; }
    double at(int row, int col) const { return grid_dbm[size_t(row) * w_px + col]; }
    void minmax(double& lo, double& hi) const;
};

constexpr double kRssFloorDbm = -200.0;

struct RssCrop {
    int px = 0;                // square patch, px * px
    std::vector<double> patch; // normalized to [0, 1]
    Vec2 center_estimate_m{0.0, 0.0};
};

// LOS plus specular image-method reflections off building walls, up to
// max_order in {0, 1, 2}. Gains are free-space with reflection coefficients
// multiplied in; phases follow the carrier delay.
PathSet trace_paths(const Scene& scene, const Vec3& rx_position_m, int max_order,
                    const WaveformConfig& wf);

// Coherent field superposition, Eq.-style: (lambda^2 / 8 pi eta0) |sum E_l|^2.
double rss_at(const PathSet& paths, const WaveformConfig& wf);

RssMap compute_rss_map(const Scene& scene, const WaveformConfig& wf, double resolution_m);

RssCrop crop_rss(const RssMap& map, const Vec2& true_position_m, double gps_sigma_m,
                 double crop_m, Rng& rng);

// Linear received power at the map pixel containing a position (floor pixels
// read as 0 W).
double rss_power_at_pixel(const RssMap& map, const Vec2& position_m);

} // namespace mbce

#endif
