#ifndef MBCE_DATASET_HPP
#define MBCE_DATASET_HPP

#include <optional>
#include <string>
#include <vector>

#include "mbce/channel.hpp"
#include "mbce/propagation.hpp"
#include "mbce/tensor.hpp"

namespace mbce {

// T_c ~ 0.5 c / (v f_c).
double coherence_time(double velocity_mps, double carrier_hz);

struct TrajectoryInfo {
    double velocity_mps = 0.0;
    double step_s = 0.0;
};

struct DatasetGenConfig {
    int n_samples = 100;
    double resolution_m = 1.0 / 3.0;
    double crop_m = 4.0;
    double gps_sigma_m = 1.0;
    std::optional<TrajectoryInfo> trajectory;
    uint64_t seed = 1;
    // per-sample clock offset locked to the first arrival so taps start at 0
    bool sync_to_first_path = true;
};

struct DatasetBundle {
    int schema_version = 1;
    ArrayConfig arr;
    WaveformConfig wf;
    Scene scene;
    DatasetGenConfig gen;
    int n_samples = 0;

    double channel_scale = 1.0; // global max |h|
    double power_norm = 1.0;    // global max linear rss power (W)

    RssMap map;
    std::vector<ChannelTensor> channels;
    std::vector<ad::Tensor> crops; // [1, px, px]
    std::vector<Vec3> positions;
    std::vector<double> clock_offsets_s;
    std::vector<Vec2> crop_centers;
    std::vector<double> rss_power_w; // at the noisy-center map pixel
    int dropped_paths = 0;

    int crop_px() const { return crops.empty() ? 0 : crops.front().dim(1); }
};

// Samples receiver positions (uniform over the walkable extent, or along a
// piecewise-linear trajectory), traces paths, synthesizes channels, computes
// the RSS map once, and crops per sample.
DatasetBundle generate_dataset(const Scene& scene, const ArrayConfig& arr,
                               const WaveformConfig& wf, const DatasetGenConfig& gen);

// Directory bundle: manifest.json plus little-endian float32 blobs with
// per-blob 64-bit checksums (complex stored interleaved re/im, row-major
// [sample, d, nr, nt]).
void save_bundle(const DatasetBundle& bundle, const std::string& path);
DatasetBundle load_bundle(const std::string& path);

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ULL);

// Deterministic content hash over the bundle's blobs (regeneration check).
uint64_t bundle_content_hash(const DatasetBundle& bundle);

} // namespace mbce

#endif
