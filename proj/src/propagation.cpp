#include "mbce/propagation.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "mbce/parallel.hpp"

namespace mbce {

namespace {

double dist(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// One vertical wall: plane axis (0 = x-plane, 1 = y-plane) at coordinate c,
// spanning [lo, hi] along the other horizontal axis and [0, height] in z.
struct Wall {
    int axis;
    double c;
    double lo, hi;
    double height;
    int building;
    double outward; // +1 toward +axis, -1 toward -axis
};

std::vector<Wall> collect_walls(const Scene& scene) {
    std::vector<Wall> walls;
    for (size_t b = 0; b < scene.buildings.size(); ++b) {
        const Building& bx = scene.buildings[b];
        walls.push_back({0, bx.xmin, bx.ymin, bx.ymax, bx.height, int(b), -1.0});
        walls.push_back({0, bx.xmax, bx.ymin, bx.ymax, bx.height, int(b), +1.0});
        walls.push_back({1, bx.ymin, bx.xmin, bx.xmax, bx.height, int(b), -1.0});
        walls.push_back({1, bx.ymax, bx.xmin, bx.xmax, bx.height, int(b), +1.0});
    }
    return walls;
}

// Segment/AABB slab test. A path is blocked only if the overlap interval has
// positive length, so grazing contacts at reflection points do not count.
bool segment_hits_box(const Vec3& a, const Vec3& b, const Building& bx) {
    double t0 = 0.0, t1 = 1.0;
    const double lo[3] = {bx.xmin, bx.ymin, 0.0};
    const double hi[3] = {bx.xmax, bx.ymax, bx.height};
    for (int k = 0; k < 3; ++k) {
        const double d = b[k] - a[k];
        if (std::abs(d) < 1e-15) {
            if (a[k] < lo[k] || a[k] > hi[k]) return false;
            continue;
        }
        double u0 = (lo[k] - a[k]) / d;
        double u1 = (hi[k] - a[k]) / d;
        if (u0 > u1) std::swap(u0, u1);
        t0 = std::max(t0, u0);
        t1 = std::min(t1, u1);
        if (t0 > t1) return false;
    }
    return (t1 - t0) > 1e-9 && t1 > 1e-9 && t0 < 1.0 - 1e-9;
}

bool segment_blocked(const Vec3& a, const Vec3& b, const Scene& scene) {
    for (const Building& bx : scene.buildings)
        if (segment_hits_box(a, b, bx)) return true;
    return false;
}

Vec3 mirror_across_wall(const Vec3& p, const Wall& w) {
    Vec3 m = p;
    m[size_t(w.axis)] = 2.0 * w.c - p[size_t(w.axis)];
    return m;
}

// Intersection of segment (a -> b) with the wall plane; valid only when the
// crossing lies inside the wall rectangle.
bool wall_intersection(const Vec3& a, const Vec3& b, const Wall& w, Vec3& point) {
    const double da = a[size_t(w.axis)] - w.c;
    const double db = b[size_t(w.axis)] - w.c;
    if (da * db > 0.0) return false; // same side, no crossing
    const double denom = da - db;
    if (std::abs(denom) < 1e-15) return false;
    const double t = da / denom;
    if (t <= 1e-9 || t >= 1.0 - 1e-9) return false;
    for (int k = 0; k < 3; ++k) point[size_t(k)] = a[size_t(k)] + t * (b[size_t(k)] - a[size_t(k)]);
    const int other = 1 - w.axis;
    if (point[size_t(other)] < w.lo - 1e-9 || point[size_t(other)] > w.hi + 1e-9) return false;
    if (point[2] < -1e-9 || point[2] > w.height + 1e-9) return false;
    return true;
}

void angles_of(const Vec3& from, const Vec3& to, double& az, double& el) {
    const double dx = to[0] - from[0], dy = to[1] - from[1], dz = to[2] - from[2];
    az = std::atan2(dy, dx);
    el = std::atan2(dz, std::hypot(dx, dy));
}

Path make_path(const Vec3& tx, const Vec3& rx, const Vec3& first_point,
               const Vec3& last_point, double total_dist, cxd refl,
               const WaveformConfig& wf) {
    Path p;
    p.delay_s = total_dist / kSpeedOfLight;
    const double mag = wf.wavelength_m() / (4.0 * kPi * total_dist);
    const double psi = -2.0 * kPi * wf.carrier_hz * p.delay_s;
    p.gain = mag * cxd(std::cos(psi), std::sin(psi)) * refl;
    angles_of(tx, first_point, p.aod_az, p.aod_el);
    angles_of(rx, last_point, p.aoa_az, p.aoa_el);
    return p;
}

} // namespace

void Scene::validate() const {
    if (extent_m[0] <= 0.0 || extent_m[1] <= 0.0)
        throw ValidationError("scene extent must be positive");
    if (tx_position_m[0] < 0.0 || tx_position_m[0] > extent_m[0] ||
        tx_position_m[1] < 0.0 || tx_position_m[1] > extent_m[1])
        throw ValidationError("tx position outside scene extent");
    for (const Building& b : buildings) {
        if (b.xmax <= b.xmin || b.ymax <= b.ymin || b.height <= 0.0)
            throw ValidationError("degenerate building box");
        if (std::abs(b.reflection_coeff) > 1.0 + 1e-12)
            throw ValidationError("|reflection_coeff| must be <= 1");
    }
    if (max_order < 0 || max_order > 2)
        throw ValidationError("max_order must be in {0, 1, 2}");
}

PathSet trace_paths(const Scene& scene, const Vec3& rx, int max_order,
                    const WaveformConfig& wf) {
    if (rx[0] < 0.0 || rx[0] > scene.extent_m[0] || rx[1] < 0.0 || rx[1] > scene.extent_m[1])
        throw RxOutsideScene("rx at (" + std::to_string(rx[0]) + ", " + std::to_string(rx[1]) + ")");
    if (max_order < 0 || max_order > 2)
        throw ValidationError("max_order must be in {0, 1, 2}");

    const Vec3 tx = scene.tx_position_m;
    PathSet paths;

    if (!segment_blocked(tx, rx, scene)) {
        const double d = dist(tx, rx);
        if (d > 1e-9) paths.push_back(make_path(tx, rx, rx, tx, d, cxd(1.0, 0.0), wf));
    }

    if (max_order >= 1) {
        const std::vector<Wall> walls = collect_walls(scene);
        for (const Wall& w : walls) {
            // the reflecting face must see both endpoints
            if ((tx[size_t(w.axis)] - w.c) * w.outward <= 0.0) continue;
            if ((rx[size_t(w.axis)] - w.c) * w.outward <= 0.0) continue;
            const Vec3 img = mirror_across_wall(tx, w);
            Vec3 p;
            if (!wall_intersection(img, rx, w, p)) continue;
            if (segment_blocked(tx, p, scene) || segment_blocked(p, rx, scene)) continue;
            const double d = dist(img, rx);
            paths.push_back(make_path(tx, rx, p, p, d,
                                      scene.buildings[size_t(w.building)].reflection_coeff, wf));
        }
        if (max_order >= 2) {
            for (const Wall& w1 : walls) {
                if ((tx[size_t(w1.axis)] - w1.c) * w1.outward <= 0.0) continue;
                const Vec3 img1 = mirror_across_wall(tx, w1);
                for (const Wall& w2 : walls) {
                    if (w1.building == w2.building && w1.axis == w2.axis && w1.c == w2.c) continue;
                    if ((rx[size_t(w2.axis)] - w2.c) * w2.outward <= 0.0) continue;
                    const Vec3 img2 = mirror_across_wall(img1, w2);
                    Vec3 p2;
                    if (!wall_intersection(img2, rx, w2, p2)) continue;
                    Vec3 p1;
                    if (!wall_intersection(img1, p2, w1, p1)) continue;
                    if ((p2[size_t(w1.axis)] - w1.c) * w1.outward <= 0.0) continue;
                    if (segment_blocked(tx, p1, scene) || segment_blocked(p1, p2, scene) ||
                        segment_blocked(p2, rx, scene))
                        continue;
                    const double d = dist(img2, rx);
                    const cxd refl = scene.buildings[size_t(w1.building)].reflection_coeff *
                                     scene.buildings[size_t(w2.building)].reflection_coeff;
                    paths.push_back(make_path(tx, rx, p1, p2, d, refl, wf));
                }
            }
        }
    }
    return paths;
}

double rss_at(const PathSet& paths, const WaveformConfig& wf) {
    cxd field(0.0, 0.0);
    for (const Path& p : paths) field += field_from_gain(p.gain, wf.tx_power_w);
    const double lam = wf.wavelength_m();
    return lam * lam / (8.0 * kPi * kFreeSpaceImpedance) * std::norm(field);
}

RssMap compute_rss_map(const Scene& scene, const WaveformConfig& wf, double resolution_m) {
    scene.validate();
    if (resolution_m <= 0.0) throw ValidationError("resolution must be positive");
    RssMap map;
    map.resolution_m_per_px = resolution_m;
    map.w_px = int(std::lround(scene.extent_m[0] / resolution_m));
    map.h_px = int(std::lround(scene.extent_m[1] / resolution_m));
    if (map.w_px < 1 || map.h_px < 1) throw ValidationError("map smaller than one pixel");
    map.grid_dbm.assign(size_t(map.h_px) * map.w_px, kRssFloorDbm);

    parallel_for(size_t(map.h_px), [&](size_t row) {
        for (int col = 0; col < map.w_px; ++col) {
            const Vec3 rx{(double(col) + 0.5) * resolution_m, (double(row) + 0.5) * resolution_m,
                          scene.rx_height_m};
            const PathSet paths = trace_paths(scene, rx, scene.max_order, wf);
            const double p_w = rss_at(paths, wf);
            double dbm = kRssFloorDbm;
            if (p_w > 0.0) dbm = std::max(dbm_from_watts(p_w), kRssFloorDbm);
            map.at(int(row), col) = dbm;
        }
    });
    return map;
}

void RssMap::minmax(double& lo, double& hi) const {
    lo = grid_dbm[0];
    hi = grid_dbm[0];
    for (double v : grid_dbm) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
}

RssCrop crop_rss(const RssMap& map, const Vec2& true_position_m, double gps_sigma_m,
                 double crop_m, Rng& rng) {
    const double res = map.resolution_m_per_px;
    const int px = int(std::lround(crop_m / res));
    if (px < 1 || px > map.w_px || px > map.h_px)
        throw ValidationError("crop window does not fit inside the map");

    const double nx = true_position_m[0] + gps_sigma_m * rng.normal();
    const double ny = true_position_m[1] + gps_sigma_m * rng.normal();

    int ccol = int(std::floor((nx - map.origin_m[0]) / res));
    int crow = int(std::floor((ny - map.origin_m[1]) / res));
    int col0 = std::clamp(ccol - px / 2, 0, map.w_px - px);
    int row0 = std::clamp(crow - px / 2, 0, map.h_px - px);

    double lo, hi;
    map.minmax(lo, hi);
    if (!(hi > lo)) throw DegenerateRange("rss map has no dynamic range");

    RssCrop crop;
    crop.px = px;
    crop.center_estimate_m = {nx, ny};
    crop.patch.resize(size_t(px) * px);
    for (int r = 0; r < px; ++r)
        for (int c = 0; c < px; ++c)
            crop.patch[size_t(r) * px + c] = (map.at(row0 + r, col0 + c) - lo) / (hi - lo);
    return crop;
}

double rss_power_at_pixel(const RssMap& map, const Vec2& position_m) {
    const double res = map.resolution_m_per_px;
    int col = std::clamp(int(std::floor((position_m[0] - map.origin_m[0]) / res)), 0, map.w_px - 1);
    int row = std::clamp(int(std::floor((position_m[1] - map.origin_m[1]) / res)), 0, map.h_px - 1);
    const double dbm = map.at(row, col);
    if (dbm <= kRssFloorDbm) return 0.0;
    return watts_from_dbm(dbm);
}

Scene scene_from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    Scene s;
    if (j.contains("extent_m")) s.extent_m = {j["extent_m"][0], j["extent_m"][1]};
    if (j.contains("tx_position_m"))
        s.tx_position_m = {j["tx_position_m"][0], j["tx_position_m"][1], j["tx_position_m"][2]};
    if (j.contains("rx_height_m")) s.rx_height_m = j["rx_height_m"];
    if (j.contains("max_order")) s.max_order = j["max_order"];
    if (j.contains("rng_seed")) s.rng_seed = j["rng_seed"];
    if (j.contains("buildings")) {
        for (const auto& bj : j["buildings"]) {
            Building b;
            const auto& fp = bj.at("footprint");
            b.xmin = fp[0];
            b.ymin = fp[1];
            b.xmax = fp[2];
            b.ymax = fp[3];
            b.height = bj.at("height");
            if (bj.contains("reflection_coeff")) {
                const auto& rc = bj["reflection_coeff"];
                if (rc.is_array())
                    b.reflection_coeff = cxd(rc[0], rc[1]);
                else
                    b.reflection_coeff = cxd(double(rc), 0.0);
            }
            s.buildings.push_back(b);
        }
    }
    s.validate();
    return s;
}

std::string scene_to_json(const Scene& s) {
    nlohmann::json j;
    j["extent_m"] = {s.extent_m[0], s.extent_m[1]};
    j["tx_position_m"] = {s.tx_position_m[0], s.tx_position_m[1], s.tx_position_m[2]};
    j["rx_height_m"] = s.rx_height_m;
    j["max_order"] = s.max_order;
    j["rng_seed"] = s.rng_seed;
    j["buildings"] = nlohmann::json::array();
    for (const Building& b : s.buildings) {
        nlohmann::json bj;
        bj["footprint"] = {b.xmin, b.ymin, b.xmax, b.ymax};
        bj["height"] = b.height;
        bj["reflection_coeff"] = {b.reflection_coeff.real(), b.reflection_coeff.imag()};
        j["buildings"].push_back(bj);
    }
    return j.dump(2);
}

} // namespace mbce
