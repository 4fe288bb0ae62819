#include "mbce/dataset.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mbce/parallel.hpp"
#include "mbce/rng.hpp"

namespace fs = std::filesystem;

namespace mbce {

double coherence_time(double velocity_mps, double carrier_hz) {
    if (velocity_mps <= 0.0 || carrier_hz <= 0.0)
        throw NonPositiveInput("velocity and carrier must be positive");
    return 0.5 * kSpeedOfLight / (velocity_mps * carrier_hz);
}

namespace {

bool inside_building(const Scene& scene, double x, double y) {
    for (const Building& b : scene.buildings)
        if (x >= b.xmin && x <= b.xmax && y >= b.ymin && y <= b.ymax) return true;
    return false;
}

std::vector<Vec3> sample_positions(const Scene& scene, const DatasetGenConfig& gen,
                                   const WaveformConfig& wf) {
    Rng rng = Rng::from_key(gen.seed, 0x0b5e55ed);
    std::vector<Vec3> pos;
    pos.reserve(size_t(gen.n_samples));
    const double z = scene.rx_height_m;

    // usable receiver spots are outside buildings and inside coverage
    auto usable = [&](double x, double y) {
        if (inside_building(scene, x, y)) return false;
        return !trace_paths(scene, {x, y, z}, scene.max_order, wf).empty();
    };

    if (gen.trajectory) {
        const double tc = coherence_time(gen.trajectory->velocity_mps, wf.carrier_hz);
        if (gen.trajectory->step_s < tc)
            throw ValidationError("trajectory step_s " + std::to_string(gen.trajectory->step_s) +
                                  " below coherence time " + std::to_string(tc));
        const double step_len = gen.trajectory->velocity_mps * gen.trajectory->step_s;
        double x, y;
        int seed_tries = 0;
        do {
            x = rng.uniform(0.0, scene.extent_m[0]);
            y = rng.uniform(0.0, scene.extent_m[1]);
            if (++seed_tries > 100000)
                throw SceneDegenerate("no covered start position for the trajectory");
        } while (!usable(x, y));
        double heading = rng.uniform(0.0, 2.0 * kPi);
        pos.push_back({x, y, z});
        while (int(pos.size()) < gen.n_samples) {
            double nx = x + step_len * std::cos(heading);
            double ny = y + step_len * std::sin(heading);
            int tries = 0;
            while ((nx < 0.0 || nx > scene.extent_m[0] || ny < 0.0 || ny > scene.extent_m[1] ||
                    !usable(nx, ny)) &&
                   tries < 64) {
                heading = rng.uniform(0.0, 2.0 * kPi);
                nx = x + step_len * std::cos(heading);
                ny = y + step_len * std::sin(heading);
                ++tries;
            }
            if (tries >= 64) throw SceneDegenerate("trajectory got stuck between buildings");
            x = nx;
            y = ny;
            pos.push_back({x, y, z});
        }
    } else {
        int guard = 0;
        while (int(pos.size()) < gen.n_samples) {
            const double x = rng.uniform(0.0, scene.extent_m[0]);
            const double y = rng.uniform(0.0, scene.extent_m[1]);
            if (usable(x, y)) {
                pos.push_back({x, y, z});
                guard = 0;
            } else if (++guard > 100000) {
                throw SceneDegenerate("could not place covered receivers in the scene");
            }
        }
    }
    return pos;
}

void write_f32(std::ofstream& f, const float* data, size_t n) {
    f.write(reinterpret_cast<const char*>(data), std::streamsize(n * sizeof(float)));
}

struct BlobWriter {
    std::vector<float> buf;
    void push(double v) { buf.push_back(float(v)); }
    uint64_t checksum() const { return fnv1a64(buf.data(), buf.size() * sizeof(float)); }
    void save(const fs::path& p) const {
        std::ofstream f(p, std::ios::binary);
        if (!f) throw ValidationError("cannot write blob " + p.string());
        write_f32(f, buf.data(), buf.size());
    }
};

std::vector<float> read_blob(const fs::path& p, size_t expect_count, uint64_t expect_sum) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw ValidationError("missing blob " + p.string());
    f.seekg(0, std::ios::end);
    const size_t bytes = size_t(f.tellg());
    f.seekg(0);
    if (bytes != expect_count * sizeof(float))
        throw ChecksumMismatch("blob " + p.string() + " has " + std::to_string(bytes) +
                               " bytes, manifest expects " +
                               std::to_string(expect_count * sizeof(float)));
    std::vector<float> out(expect_count);
    f.read(reinterpret_cast<char*>(out.data()), std::streamsize(bytes));
    if (!f) throw ChecksumMismatch("short read on blob " + p.string());
    if (fnv1a64(out.data(), bytes) != expect_sum)
        throw ChecksumMismatch("checksum mismatch on blob " + p.string());
    return out;
}

} // namespace

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

DatasetBundle generate_dataset(const Scene& scene, const ArrayConfig& arr,
                               const WaveformConfig& wf, const DatasetGenConfig& gen) {
    scene.validate();
    if (gen.n_samples < 1) throw ValidationError("n_samples must be >= 1");

    DatasetBundle b;
    b.arr = arr;
    b.wf = wf;
    b.scene = scene;
    b.gen = gen;
    b.n_samples = gen.n_samples;

    b.map = compute_rss_map(scene, wf, gen.resolution_m);
    b.positions = sample_positions(scene, gen, wf);

    const int n = gen.n_samples;
    b.channels.resize(size_t(n));
    b.crops.resize(size_t(n));
    b.clock_offsets_s.resize(size_t(n));
    b.crop_centers.resize(size_t(n));
    b.rss_power_w.resize(size_t(n));
    std::vector<int> dropped(size_t(n), 0);
    std::vector<int> path_counts(size_t(n), 0);

    const double ts = wf.sample_interval_s;
    const double margin = 4.0 * ts;
    const double window_hi = double(wf.num_taps - 1) * ts + margin;

    parallel_for(size_t(n), [&](size_t i) {
        PathSet paths = trace_paths(scene, b.positions[i], scene.max_order, wf);
        path_counts[i] = int(paths.size());

        double t_off = wf.clock_offset_s;
        if (gen.sync_to_first_path && !paths.empty()) {
            t_off = paths.front().delay_s;
            for (const Path& p : paths) t_off = std::min(t_off, p.delay_s);
        }
        PathSet usable;
        usable.reserve(paths.size());
        for (const Path& p : paths) {
            const double shifted = p.delay_s - t_off;
            if (shifted >= -margin && shifted <= window_hi)
                usable.push_back(p);
            else
                ++dropped[i];
        }
        WaveformConfig wfs = wf;
        wfs.clock_offset_s = t_off;
        b.clock_offsets_s[i] = t_off;
        b.channels[i] = synthesize_channel(usable, arr, wfs);

        Rng crop_rng = Rng::from_key(gen.seed, 0xc509 + i);
        const RssCrop crop =
            crop_rss(b.map, {b.positions[i][0], b.positions[i][1]}, gen.gps_sigma_m, gen.crop_m,
                     crop_rng);
        ad::Tensor ct({1, crop.px, crop.px});
        ct.data = crop.patch;
        b.crops[i] = std::move(ct);
        b.crop_centers[i] = crop.center_estimate_m;
        b.rss_power_w[i] = rss_power_at_pixel(b.map, crop.center_estimate_m);
    });

    bool any_paths = false;
    for (int c : path_counts) any_paths |= (c > 0);
    if (!any_paths) throw SceneDegenerate("no sample position has any propagation path");
    for (int d : dropped) b.dropped_paths += d;

    double cmax = 0.0;
    for (const ChannelTensor& h : b.channels)
        for (const cxd& v : h.data) cmax = std::max(cmax, std::abs(v));
    if (cmax <= 0.0) throw SceneDegenerate("all synthesized channels are zero");
    b.channel_scale = cmax;

    double pmax = 0.0;
    for (double dbm : b.map.grid_dbm)
        if (dbm > kRssFloorDbm) pmax = std::max(pmax, watts_from_dbm(dbm));
    b.power_norm = pmax > 0.0 ? pmax : 1.0;
    return b;
}

void save_bundle(const DatasetBundle& b, const std::string& path) {
    fs::create_directories(path);
    const fs::path dir(path);

    BlobWriter channels;
    for (const ChannelTensor& h : b.channels)
        for (const cxd& v : h.data) {
            channels.push(v.real());
            channels.push(v.imag());
        }
    BlobWriter rssmap;
    for (double v : b.map.grid_dbm) rssmap.push(v);
    BlobWriter crops;
    for (const ad::Tensor& c : b.crops)
        for (double v : c.data) crops.push(v);
    BlobWriter locations;
    for (int i = 0; i < b.n_samples; ++i) {
        locations.push(b.positions[size_t(i)][0]);
        locations.push(b.positions[size_t(i)][1]);
        locations.push(b.positions[size_t(i)][2]);
        locations.push(b.clock_offsets_s[size_t(i)] * 1e9); // ns, keeps f32 precision
        locations.push(b.crop_centers[size_t(i)][0]);
        locations.push(b.crop_centers[size_t(i)][1]);
    }
    BlobWriter rss_power;
    for (double v : b.rss_power_w) rss_power.push(v); // linear watts, f32-exact reload

    nlohmann::json j;
    j["schema_version"] = b.schema_version;
    j["n_samples"] = b.n_samples;
    j["arr"] = {{"nt_x", b.arr.nt_x}, {"nt_y", b.arr.nt_y}, {"nr_x", b.arr.nr_x},
                {"nr_y", b.arr.nr_y}};
    j["wf"] = {{"sample_interval_s", b.wf.sample_interval_s},
               {"clock_offset_s", b.wf.clock_offset_s},
               {"rolloff", b.wf.rolloff},
               {"num_taps", b.wf.num_taps},
               {"carrier_hz", b.wf.carrier_hz},
               {"tx_power_w", b.wf.tx_power_w}};
    j["scene"] = nlohmann::json::parse(scene_to_json(b.scene));
    j["scene_hash"] = fnv1a64(scene_to_json(b.scene).data(), scene_to_json(b.scene).size());
    j["gen"] = {{"n_samples", b.gen.n_samples},
                {"resolution_m", b.gen.resolution_m},
                {"crop_m", b.gen.crop_m},
                {"gps_sigma_m", b.gen.gps_sigma_m},
                {"seed", b.gen.seed},
                {"sync_to_first_path", b.gen.sync_to_first_path}};
    if (b.gen.trajectory)
        j["gen"]["trajectory"] = {{"velocity_mps", b.gen.trajectory->velocity_mps},
                                  {"step_s", b.gen.trajectory->step_s}};
    j["norm"] = {{"channel_scale", b.channel_scale}, {"power_norm", b.power_norm}};
    j["map"] = {{"h_px", b.map.h_px},
                {"w_px", b.map.w_px},
                {"resolution_m_per_px", b.map.resolution_m_per_px},
                {"origin_m", {b.map.origin_m[0], b.map.origin_m[1]}}};
    j["crop_px"] = b.crop_px();
    j["dropped_paths"] = b.dropped_paths;

    auto blob_entry = [&](const char* file, const BlobWriter& w) {
        return nlohmann::json{{"file", file},
                              {"count", w.buf.size()},
                              {"fnv1a64", w.checksum()}};
    };
    j["blobs"] = {{"channels", blob_entry("channels.bin", channels)},
                  {"rssmap", blob_entry("rssmap.bin", rssmap)},
                  {"crops", blob_entry("crops.bin", crops)},
                  {"locations", blob_entry("locations.bin", locations)},
                  {"rss_power", blob_entry("rss_power.bin", rss_power)}};

    channels.save(dir / "channels.bin");
    rssmap.save(dir / "rssmap.bin");
    crops.save(dir / "crops.bin");
    locations.save(dir / "locations.bin");
    rss_power.save(dir / "rss_power.bin");

    std::ofstream mf(dir / "manifest.json");
    if (!mf) throw ValidationError("cannot write manifest in " + path);
    mf << j.dump(2) << "\n";
}

DatasetBundle load_bundle(const std::string& path) {
    const fs::path dir(path);
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw ValidationError("missing manifest.json in " + path);
    nlohmann::json j = nlohmann::json::parse(mf);

    DatasetBundle b;
    b.schema_version = j.at("schema_version");
    if (b.schema_version != 1)
        throw SchemaVersionUnsupported("bundle schema " + std::to_string(b.schema_version));
    b.n_samples = j.at("n_samples");
    b.arr.nt_x = j["arr"]["nt_x"];
    b.arr.nt_y = j["arr"]["nt_y"];
    b.arr.nr_x = j["arr"]["nr_x"];
    b.arr.nr_y = j["arr"]["nr_y"];
    b.wf.sample_interval_s = j["wf"]["sample_interval_s"];
    b.wf.clock_offset_s = j["wf"]["clock_offset_s"];
    b.wf.rolloff = j["wf"]["rolloff"];
    b.wf.num_taps = j["wf"]["num_taps"];
    b.wf.carrier_hz = j["wf"]["carrier_hz"];
    b.wf.tx_power_w = j["wf"]["tx_power_w"];
    b.scene = scene_from_json(j.at("scene").dump());
    b.gen.n_samples = j["gen"]["n_samples"];
    b.gen.resolution_m = j["gen"]["resolution_m"];
    b.gen.crop_m = j["gen"]["crop_m"];
    b.gen.gps_sigma_m = j["gen"]["gps_sigma_m"];
    b.gen.seed = j["gen"]["seed"];
    b.gen.sync_to_first_path = j["gen"]["sync_to_first_path"];
    if (j["gen"].contains("trajectory"))
        b.gen.trajectory = TrajectoryInfo{j["gen"]["trajectory"]["velocity_mps"],
                                          j["gen"]["trajectory"]["step_s"]};
    b.channel_scale = j["norm"]["channel_scale"];
    b.power_norm = j["norm"]["power_norm"];
    b.dropped_paths = j.value("dropped_paths", 0);

    b.map.h_px = j["map"]["h_px"];
    b.map.w_px = j["map"]["w_px"];
    b.map.resolution_m_per_px = j["map"]["resolution_m_per_px"];
    b.map.origin_m = {j["map"]["origin_m"][0], j["map"]["origin_m"][1]};

    const int crop_px = j.at("crop_px");
    const int d = b.wf.num_taps, nr = b.arr.nr(), nt = b.arr.nt();
    const size_t n = size_t(b.n_samples);

    auto blob = [&](const char* key) {
        const auto& e = j["blobs"][key];
        return read_blob(dir / e["file"].get<std::string>(), e["count"].get<size_t>(),
                         e["fnv1a64"].get<uint64_t>());
    };

    {
        const std::vector<float> raw = blob("channels");
        const size_t per = size_t(d) * nr * nt * 2;
        if (raw.size() != per * n) throw ChecksumMismatch("channels blob size vs dims");
        b.channels.assign(n, ChannelTensor(d, nr, nt));
        for (size_t i = 0; i < n; ++i)
            for (size_t e = 0; e < per / 2; ++e)
                b.channels[i].data[e] =
                    cxd(double(raw[i * per + 2 * e]), double(raw[i * per + 2 * e + 1]));
    }
    {
        const std::vector<float> raw = blob("rssmap");
        if (raw.size() != size_t(b.map.h_px) * b.map.w_px)
            throw ChecksumMismatch("rssmap blob size vs dims");
        b.map.grid_dbm.assign(raw.begin(), raw.end());
    }
    {
        const std::vector<float> raw = blob("crops");
        const size_t per = size_t(crop_px) * crop_px;
        if (raw.size() != per * n) throw ChecksumMismatch("crops blob size vs dims");
        b.crops.assign(n, ad::Tensor({1, crop_px, crop_px}));
        for (size_t i = 0; i < n; ++i)
            for (size_t e = 0; e < per; ++e) b.crops[i].data[e] = double(raw[i * per + e]);
    }
    {
        const std::vector<float> raw = blob("locations");
        if (raw.size() != 6 * n) throw ChecksumMismatch("locations blob size vs dims");
        b.positions.resize(n);
        b.clock_offsets_s.resize(n);
        b.crop_centers.resize(n);
        for (size_t i = 0; i < n; ++i) {
            b.positions[i] = {double(raw[6 * i]), double(raw[6 * i + 1]), double(raw[6 * i + 2])};
            b.clock_offsets_s[i] = double(raw[6 * i + 3]) * 1e-9;
            b.crop_centers[i] = {double(raw[6 * i + 4]), double(raw[6 * i + 5])};
        }
    }
    {
        const std::vector<float> raw = blob("rss_power");
        if (raw.size() != n) throw ChecksumMismatch("rss_power blob size vs dims");
        b.rss_power_w.resize(n);
        for (size_t i = 0; i < n; ++i) b.rss_power_w[i] = double(raw[i]);
    }
    return b;
}

uint64_t bundle_content_hash(const DatasetBundle& b) {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_f32 = [&h](double v) {
        const float f = float(v);
        h = fnv1a64(&f, sizeof(f), h);
    };
    for (const ChannelTensor& c : b.channels)
        for (const cxd& v : c.data) {
            mix_f32(v.real());
            mix_f32(v.imag());
        }
    for (double v : b.map.grid_dbm) mix_f32(v);
    for (const ad::Tensor& c : b.crops)
        for (double v : c.data) mix_f32(v);
    for (double v : b.rss_power_w) mix_f32(v);
    return h;
}

} // namespace mbce
