#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mbce/bench.hpp"
#include "mbce/dataset.hpp"

using namespace mbce;
namespace fs = std::filesystem;

namespace {

Scene small_scene() {
    Scene s;
    s.extent_m = {48.0, 48.0};
    s.tx_position_m = {24.0, 24.0, 12.0};
    s.max_order = 1;
    Building b;
    b.xmin = 6.0;
    b.ymin = 30.0;
    b.xmax = 18.0;
    b.ymax = 42.0;
    b.height = 15.0;
    b.reflection_coeff = cxd(0.4, 0.1);
    s.buildings.push_back(b);
    return s;
}

WaveformConfig small_wf() {
    WaveformConfig wf;
    wf.num_taps = 2;
    wf.sample_interval_s = 50e-9;
    wf.carrier_hz = 15e9;
    wf.tx_power_w = 100.0;
    return wf;
}

DatasetGenConfig small_gen(int n, uint64_t seed) {
    DatasetGenConfig g;
    g.n_samples = n;
    g.resolution_m = 1.0;
    g.crop_m = 8.0;
    g.gps_sigma_m = 1.0;
    g.seed = seed;
    return g;
}

const ArrayConfig kArr{4, 2, 2, 1}; // Nt = 8, Nr = 2

} // namespace

TEST_CASE("coherence time") {
    CHECK(coherence_time(9.722, 15e9) == doctest::Approx(1.03e-3).epsilon(0.01));
    CHECK(coherence_time(20.0, 15e9) == doctest::Approx(coherence_time(10.0, 15e9) / 2.0)
                                            .epsilon(1e-12));
    CHECK(coherence_time(27.78, 15e9) == doctest::Approx(3.6e-4).epsilon(0.01));
    CHECK_THROWS_AS(coherence_time(0.0, 15e9), NonPositiveInput);
    CHECK_THROWS_AS(coherence_time(10.0, -1.0), NonPositiveInput);
}

TEST_CASE("dataset generation is deterministic and reload is bit-faithful at f32") {
    const Scene s = small_scene();
    const WaveformConfig wf = small_wf();
    const DatasetBundle a = generate_dataset(s, kArr, wf, small_gen(20, 42));
    const DatasetBundle b = generate_dataset(s, kArr, wf, small_gen(20, 42));
    CHECK(bundle_content_hash(a) == bundle_content_hash(b));
    const DatasetBundle c = generate_dataset(s, kArr, wf, small_gen(20, 43));
    CHECK(bundle_content_hash(a) != bundle_content_hash(c));

    const std::string dir = "bundle_test_dir";
    save_bundle(a, dir);
    const DatasetBundle back = load_bundle(dir);
    CHECK(back.n_samples == a.n_samples);
    CHECK(back.channel_scale == doctest::Approx(a.channel_scale).epsilon(1e-12));
    REQUIRE(back.channels.size() == a.channels.size());
    for (size_t i = 0; i < a.channels.size(); ++i)
        for (size_t e = 0; e < a.channels[i].size(); ++e) {
            CHECK(back.channels[i].data[e].real() == double(float(a.channels[i].data[e].real())));
            CHECK(back.channels[i].data[e].imag() == double(float(a.channels[i].data[e].imag())));
        }
    CHECK(bundle_content_hash(back) == bundle_content_hash(a));
    fs::remove_all(dir);
}

TEST_CASE("bundle corruption and schema checks") {
    const DatasetBundle a =
        generate_dataset(small_scene(), kArr, small_wf(), small_gen(5, 7));
    const std::string dir = "bundle_corrupt_dir";
    save_bundle(a, dir);

    SUBCASE("truncated blob") {
        const auto p = fs::path(dir) / "channels.bin";
        fs::resize_file(p, fs::file_size(p) - 8);
        CHECK_THROWS_AS(load_bundle(dir), ChecksumMismatch);
    }
    SUBCASE("flipped byte") {
        const auto p = fs::path(dir) / "crops.bin";
        std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(10);
        f.put(char(0x7f));
        f.close();
        CHECK_THROWS_AS(load_bundle(dir), ChecksumMismatch);
    }
    SUBCASE("hand-edited manifest dims") {
        const auto p = fs::path(dir) / "manifest.json";
        std::ifstream in(p);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        const auto pos = text.find("\"num_taps\": 2");
        REQUIRE(pos != std::string::npos);
        std::string edited = text;
        edited.replace(pos, 13, "\"num_taps\": 4");
        std::ofstream out(p);
        out << edited;
        out.close();
        CHECK_THROWS_AS(load_bundle(dir), ChecksumMismatch);
    }
    SUBCASE("unsupported schema version") {
        const auto p = fs::path(dir) / "manifest.json";
        std::ifstream in(p);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        const auto pos = text.find("\"schema_version\": 1");
        REQUIRE(pos != std::string::npos);
        std::string edited = text;
        edited.replace(pos, 19, "\"schema_version\": 9");
        std::ofstream out(p);
        out << edited;
        out.close();
        CHECK_THROWS_AS(load_bundle(dir), SchemaVersionUnsupported);
    }
    fs::remove_all(dir);
}

TEST_CASE("LOS-only dataset has single-path channels at the first tap") {
    Scene s = small_scene();
    s.buildings.clear();
    s.max_order = 0;
    const WaveformConfig wf = small_wf();
    const DatasetBundle b = generate_dataset(s, kArr, wf, small_gen(4, 3));
    for (const ChannelTensor& h : b.channels) {
        // sync puts the only arrival exactly on tap 0
        double tap0 = 0.0, rest = 0.0;
        for (int r = 0; r < h.nr; ++r)
            for (int t = 0; t < h.nt; ++t) {
                tap0 += std::norm(h.at(0, r, t));
                for (int d = 1; d < h.d; ++d) rest += std::norm(h.at(d, r, t));
            }
        CHECK(tap0 > 0.0);
        CHECK(rest < 1e-20 * tap0);
    }
}

TEST_CASE("trajectory stepping enforces the coherence time") {
    Scene s = small_scene();
    const WaveformConfig wf = small_wf();
    DatasetGenConfig g = small_gen(10, 5);
    g.trajectory = TrajectoryInfo{9.722, 0.9e-3}; // below T_c ~ 1.03 ms
    CHECK_THROWS_AS(generate_dataset(s, kArr, wf, g), ValidationError);

    g.trajectory->step_s = 1.1e-3;
    const DatasetBundle b = generate_dataset(s, kArr, wf, g);
    // consecutive positions move by velocity * step
    const double step_len = 9.722 * 1.1e-3;
    for (int i = 1; i < b.n_samples; ++i) {
        const double dx = b.positions[size_t(i)][0] - b.positions[size_t(i - 1)][0];
        const double dy = b.positions[size_t(i)][1] - b.positions[size_t(i - 1)][1];
        CHECK(std::hypot(dx, dy) == doctest::Approx(step_len).epsilon(1e-9));
    }
}

TEST_CASE("split is disjoint, seeded, and 80/10/10") {
    const SplitIndices sp = split_dataset(100, 1, 9);
    CHECK(sp.train.size() == 80);
    CHECK(sp.val.size() == 10);
    CHECK(sp.test.size() == 10);
    std::vector<bool> seen(100, false);
    for (const auto* part : {&sp.train, &sp.val, &sp.test})
        for (int id : *part) {
            CHECK(!seen[size_t(id)]);
            seen[size_t(id)] = true;
        }
    const SplitIndices sp2 = split_dataset(100, 1, 9);
    CHECK(sp.train == sp2.train);

    // horizon shrinks the eligible pool
    const SplitIndices sp3 = split_dataset(100, 5, 9);
    CHECK(sp3.train.size() + sp3.val.size() + sp3.test.size() == 96);
    for (int id : sp3.train) CHECK(id + 5 <= 100);
}

TEST_CASE("run_estimate: full-grid noiseless ls-ofdm is exact") {
    const DatasetBundle b =
        generate_dataset(small_scene(), kArr, small_wf(), small_gen(6, 11));
    EstimateOptions opt;
    opt.n_fft = 16;
    opt.pilot_count = 16;
    opt.snr_db = std::numeric_limits<double>::infinity();
    const EstimateTable t = run_estimate(b, "ls-ofdm", opt);
    CHECK(t.aggregate_db <= -300.0);
    CHECK(t.rows.size() == 6);

    CHECK_THROWS_AS(run_estimate(b, "no-such-method", opt), UnknownMethod);
}

TEST_CASE("estimate csv has one row per sample plus aggregates") {
    const DatasetBundle b =
        generate_dataset(small_scene(), kArr, small_wf(), small_gen(4, 13));
    EstimateOptions opt;
    opt.pilot_count = 4;
    opt.snr_db = 10.0;
    const EstimateTable t = run_estimate(b, "ls-interp", opt);
    const std::string csv = estimate_table_csv(t);
    size_t lines = 0;
    for (char c : csv)
        if (c == '\n') ++lines;
    CHECK(lines == 1 + 4 + 2); // header + rows + aggregate + mean_of_db
}

TEST_CASE("sweep: single point gives methods x seeds rows and identical bytes") {
    const DatasetBundle b =
        generate_dataset(small_scene(), kArr, small_wf(), small_gen(5, 17));
    SweepSpec spec;
    spec.axis = SweepAxis::snr_db;
    spec.values = {0.0};
    spec.methods = {"ls-interp", "ls-dft"};
    spec.seeds = {1, 2, 3};
    spec.base.pilot_count = 4;

    const SweepResult r1 = run_sweep(b, spec);
    CHECK(r1.cells.size() == 6);
    const SweepResult r2 = run_sweep(b, spec);
    CHECK(sweep_csv(r1) == sweep_csv(r2));
    CHECK(sweep_svg(r1) == sweep_svg(r2));
    CHECK(sweep_svg(r1).find("<svg") == 0);

    SweepSpec bad = spec;
    bad.values.clear();
    CHECK_THROWS_AS(run_sweep(b, bad), ValidationError);
    bad = spec;
    bad.axis = SweepAxis::pilot_density;
    bad.values = {1.5};
    CHECK_THROWS_AS(run_sweep(b, bad), ValidationError);
}

TEST_CASE("sweep snr axis is monotone within slack") {
    const DatasetBundle b =
        generate_dataset(small_scene(), kArr, small_wf(), small_gen(40, 19));
    SweepSpec spec;
    spec.axis = SweepAxis::snr_db;
    spec.values = {-10.0, 0.0, 10.0};
    spec.methods = {"ls-interp", "ls-ofdm"};
    spec.seeds = {1, 2, 3, 4};
    spec.base.pilot_count = 4;
    spec.base.n_fft = 16;
    const SweepResult r = run_sweep(b, spec);
    for (const std::string& m : spec.methods) {
        std::vector<double> mean;
        for (double v : spec.values) {
            double acc = 0.0;
            int n = 0;
            for (const SweepCell& c : r.cells)
                if (c.method == m && c.axis_value == v) {
                    acc += c.nmse_db;
                    ++n;
                }
            mean.push_back(acc / n);
        }
        CHECK(mean[1] <= mean[0] + 0.2);
        CHECK(mean[2] <= mean[1] + 0.2);
    }
}

TEST_CASE("train_on_bundle round trip and refinement plumbing") {
    const DatasetBundle b =
        generate_dataset(small_scene(), kArr, small_wf(), small_gen(24, 21));

    HarnessTrainConfig cfg;
    cfg.pinn.base_channels = {8, 8, 16};
    cfg.pinn.latent_dim = 16;
    cfg.pinn.transformer_blocks = 1;
    cfg.pinn.num_heads = 2;
    cfg.pinn.zeta = 0.01;
    cfg.hyper.epochs = 2;
    cfg.hyper.batch_size = 8;
    cfg.hyper.seed = 3;
    cfg.pilot_counts = {2, 4};
    cfg.n_fft = 16;
    cfg.snr_db = 0.0;

    const SplitIndices split = split_dataset(b.n_samples, 1, 5);
    const TrainedModel model = train_on_bundle(b, cfg, split);
    CHECK(model.result.history.size() == 2);
    CHECK(model.result.kappa > 0.0);

    const std::string ckpt = "harness_test_ckpt.bin";
    save_trained(model, ckpt);
    const LoadedModel loaded = load_trained(ckpt);
    CHECK(loaded.pinn.nt == 8);
    CHECK(loaded.initial_method == "ls-ofdm");
    CHECK(loaded.kappa == doctest::Approx(model.result.kappa).epsilon(1e-12));

    EstimateOptions opt;
    opt.pilot_count = 4;
    opt.snr_db = 0.0;
    opt.n_fft = 16;
    const EstimateTable t = run_estimate(b, "pinn:" + ckpt, opt, &split.test);
    CHECK(t.rows.size() == split.test.size());
    for (const EstimateRow& r : t.rows) CHECK(std::isfinite(r.nmse_db));

    const std::vector<double> steps = eval_steps(b, loaded, opt, split.test);
    CHECK(steps.size() == 1);

    // dims mismatch across bundles is rejected
    const DatasetBundle other =
        generate_dataset(small_scene(), ArrayConfig{8, 2, 2, 1}, small_wf(), small_gen(4, 23));
    CHECK_THROWS_AS(run_estimate(other, "pinn:" + ckpt, opt), CheckpointShapeMismatch);
    fs::remove(ckpt);
}

TEST_CASE("multi-step training set pulls future snapshots along the trajectory") {
    Scene s = small_scene();
    const WaveformConfig wf = small_wf();
    DatasetGenConfig g = small_gen(12, 25);
    g.trajectory = TrajectoryInfo{9.722, 1.2e-3};
    const DatasetBundle b = generate_dataset(s, kArr, wf, g);

    HarnessTrainConfig cfg;
    cfg.pinn.base_channels = {8, 8, 16};
    cfg.pinn.latent_dim = 16;
    cfg.pinn.transformer_blocks = 1;
    cfg.pinn.num_heads = 2;
    cfg.pinn.multi_step = 3;
    cfg.n_fft = 16;
    cfg.pilot_counts = {4};

    std::vector<int> idx{0, 2, 5};
    HarnessTrainConfig full = cfg;
    full.pinn.d_taps = b.wf.num_taps;
    full.pinn.nr = b.arr.nr();
    full.pinn.nt = b.arr.nt();
    full.pinn.crop_px = b.crop_px();
    const TrainSet set = build_train_set(b, full, idx);
    REQUIRE(set.samples.size() == 3);
    for (size_t k = 0; k < idx.size(); ++k) {
        const TrainSample& smp = set.samples[k];
        CHECK(smp.truth.shape == std::vector<int>{3, 4, 2, 8});
        CHECK(smp.rss_power_norm.size() == 3);
        CHECK(smp.h_init_variants.size() == 1);
        // step s of the target equals the channel s samples ahead
        for (int st = 0; st < 3; ++st) {
            const ChannelTensor want = b.channels[size_t(idx[size_t(k)] + st)];
            const ChannelTensor got = channel_from_planes(smp.truth, b.channel_scale, st);
            double err = 0.0, ref = 0.0;
            for (size_t e = 0; e < want.size(); ++e) {
                err += std::norm(got.data[e] - want.data[e]);
                ref += std::norm(want.data[e]);
            }
            CHECK(err <= 1e-20 * ref);
        }
    }
}

TEST_CASE("beamspace denoising orders below plain interpolation at SNR 0") {
    Scene s = small_scene();
    const ArrayConfig arr{8, 8, 2, 2}; // Nt = 64
    WaveformConfig wf = small_wf();
    wf.num_taps = 4;
    DatasetGenConfig g = small_gen(100, 31);
    g.crop_m = 6.0;
    g.resolution_m = 0.5;
    const DatasetBundle b = generate_dataset(s, arr, wf, g);
    for (int np : {16, 32}) {
        EstimateOptions opt;
        opt.pilot_count = np;
        opt.snr_db = 0.0;
        opt.seed = 5;
        const double interp = run_estimate(b, "ls-interp", opt).aggregate_db;
        const double dft = run_estimate(b, "ls-dft", opt).aggregate_db;
        INFO("np ", np, ": interp ", interp, " dft ", dft);
        CHECK(dft <= interp);
    }
}
