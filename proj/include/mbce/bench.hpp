#ifndef MBCE_BENCH_HPP
#define MBCE_BENCH_HPP

#include <optional>
#include <string>
#include <vector>

#include "mbce/dataset.hpp"
#include "mbce/estimators.hpp"
#include "mbce/pinn.hpp"

namespace mbce {

// Method names: ls-interp | ls-dft | ls-ofdm | somp | pinn:<checkpoint path>.
struct MethodSpec {
    std::string name;
    bool is_pinn = false;
    std::string checkpoint_path;
};
MethodSpec parse_method(const std::string& name);

struct EstimateOptions {
    int pilot_count = 4;
    double snr_db = 0.0;
    uint64_t seed = 1;
    int n_fft = 64;          // OFDM grid for ls-ofdm observations
    int somp_grid = 0;       // 0 -> 2 * Nt
    int somp_sparsity = 8;
};

struct EstimateRow {
    int sample_id;
    double nmse_db;
    double linear_ratio;
};

struct EstimateTable {
    std::string method;
    int pilot_count;
    double snr_db;
    std::vector<EstimateRow> rows;
    double aggregate_db = 0.0;  // dB of mean linear ratio
    double mean_of_db = 0.0;    // mean of per-sample dB values
};

// Runs one estimator over every bundle sample (optionally a subset).
EstimateTable run_estimate(const DatasetBundle& bundle, const std::string& method,
                           const EstimateOptions& opt,
                           const std::vector<int>* sample_subset = nullptr);

// One initial estimate for a single sample; the refinement input path.
ChannelTensor initial_estimate(const DatasetBundle& bundle, int sample_id,
                               const std::string& method, const EstimateOptions& opt);

std::string estimate_table_csv(const EstimateTable& table);

// --- sweeps -----------------------------------------------------------------

enum class SweepAxis { snr_db, pilot_count, pilot_density, horizon_l };
SweepAxis sweep_axis_from_string(const std::string& s);
std::string to_string(SweepAxis axis);

struct SweepSpec {
    SweepAxis axis = SweepAxis::snr_db;
    std::vector<double> values;
    std::vector<std::string> methods;
    std::vector<uint64_t> seeds;
    EstimateOptions base; // fixed coordinates of the non-swept axes

    void validate() const;
};

struct SweepCell {
    double axis_value;
    std::string method;
    uint64_t seed;
    double nmse_db;
    double mean_of_db;
};

struct SweepResult {
    SweepSpec spec;
    std::vector<SweepCell> cells;
};

SweepResult run_sweep(const DatasetBundle& bundle, const SweepSpec& spec);

std::string sweep_csv(const SweepResult& result);
std::string sweep_svg(const SweepResult& result);

// --- train/eval plumbing ------------------------------------------------------

struct SplitIndices {
    std::vector<int> train, val, test;
};
// Random 80/10/10 split, seeded. For multi-step horizons only samples with a
// full future window qualify.
SplitIndices split_dataset(int n_samples, int horizon, uint64_t seed);

struct HarnessTrainConfig {
    PinnConfig pinn;
    TrainHyper hyper;
    std::string initial_method = "ls-ofdm";
    std::vector<int> pilot_counts{4};
    double snr_db = 0.0;
    int n_fft = 64;
    uint64_t obs_seed = 7;
};

// h_init variants per pilot count, normalized planes + crops + rss powers.
TrainSet build_train_set(const DatasetBundle& bundle, const HarnessTrainConfig& cfg,
                         const std::vector<int>& indices);

struct TrainedModel {
    TrainResult result;
    PinnConfig pinn;
    HarnessTrainConfig cfg;
    double channel_scale;
    double power_norm;
};

TrainedModel train_on_bundle(const DatasetBundle& bundle, const HarnessTrainConfig& cfg,
                             const SplitIndices& split);

void save_trained(const TrainedModel& model, const std::string& path);

struct LoadedModel {
    NamedTensors params;
    PinnConfig pinn;
    std::string initial_method;
    int n_fft = 64;
    double kappa = 1.0;
    double channel_scale = 1.0;
    double power_norm = 1.0;
};
LoadedModel load_trained(const std::string& path);

// Per-step aggregate NMSE (dB of mean ratio) of a multi-step model over the
// given samples; entry s compares snapshot s against the channel s steps ahead.
std::vector<double> eval_steps(const DatasetBundle& bundle, const LoadedModel& model,
                               const EstimateOptions& opt, const std::vector<int>& samples);

std::string history_csv(const std::vector<HistoryRow>& history);

} // namespace mbce

#endif
