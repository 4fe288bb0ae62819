#include "mbce/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "mbce/parallel.hpp"

namespace mbce {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

PilotPattern pattern_for(const std::string& method, const DatasetBundle& bundle,
                         const EstimateOptions& opt) {
    if (method == "ls-ofdm")
        return make_pilot_pattern(PilotKind::subcarrier, opt.n_fft, opt.pilot_count);
    return make_pilot_pattern(PilotKind::antenna, bundle.arr.nt(), opt.pilot_count);
}

ChannelTensor run_classical(const std::string& method, const DatasetBundle& bundle,
                            const PilotObservation& obs, const EstimateOptions& opt) {
    if (method == "ls-interp") return ls_interp(obs, bundle.arr, bundle.wf);
    if (method == "ls-dft") return ls_dft_denoise(obs, bundle.arr, bundle.wf);
    if (method == "ls-ofdm") return ls_ofdm(obs, bundle.arr, bundle.wf, opt.n_fft);
    if (method == "somp") {
        const int grid = opt.somp_grid > 0 ? opt.somp_grid : 2 * bundle.arr.nt();
        return somp(obs, bundle.arr, bundle.wf, grid, opt.somp_sparsity);
    }
    throw UnknownMethod(method);
}

} // namespace

MethodSpec parse_method(const std::string& name) {
    MethodSpec m;
    m.name = name;
    if (name.rfind("pinn:", 0) == 0) {
        m.is_pinn = true;
        m.checkpoint_path = name.substr(5);
        if (m.checkpoint_path.empty()) throw UnknownMethod("pinn: requires a checkpoint path");
        return m;
    }
    if (name != "ls-interp" && name != "ls-dft" && name != "ls-ofdm" && name != "somp")
        throw UnknownMethod(name);
    return m;
}

ChannelTensor initial_estimate(const DatasetBundle& bundle, int sample_id,
                               const std::string& method, const EstimateOptions& opt) {
    const PilotPattern pat = pattern_for(method, bundle, opt);
    Rng rng = Rng::from_key(opt.seed, uint64_t(sample_id));
    const PilotObservation obs = observe(bundle.channels[size_t(sample_id)], pat, opt.snr_db, rng);
    return run_classical(method, bundle, obs, opt);
}

EstimateTable run_estimate(const DatasetBundle& bundle, const std::string& method,
                           const EstimateOptions& opt, const std::vector<int>* sample_subset) {
    const MethodSpec spec = parse_method(method);

    std::vector<int> ids;
    if (sample_subset)
        ids = *sample_subset;
    else {
        ids.resize(size_t(bundle.n_samples));
        for (int i = 0; i < bundle.n_samples; ++i) ids[size_t(i)] = i;
    }

    EstimateTable table;
    table.method = method;
    table.pilot_count = opt.pilot_count;
    table.snr_db = opt.snr_db;
    table.rows.resize(ids.size());

    if (!spec.is_pinn) {
        parallel_for(ids.size(), [&](size_t k) {
            const int id = ids[k];
            const ChannelTensor est = initial_estimate(bundle, id, method, opt);
            const double ratio = nmse_linear(est, bundle.channels[size_t(id)]);
            table.rows[k] = {id, ratio > 0.0 ? 10.0 * std::log10(ratio) : -350.0, ratio};
        });
    } else {
        const LoadedModel model = load_trained(spec.checkpoint_path);
        if (model.pinn.d_taps != bundle.wf.num_taps || model.pinn.nr != bundle.arr.nr() ||
            model.pinn.nt != bundle.arr.nt() || model.pinn.crop_px != bundle.crop_px())
            throw CheckpointShapeMismatch("checkpoint dims do not match bundle");
        EstimateOptions init_opt = opt;
        init_opt.n_fft = model.n_fft;
        parallel_for(ids.size(), [&](size_t k) {
            const int id = ids[k];
            const ChannelTensor init =
                initial_estimate(bundle, id, model.initial_method, init_opt);
            const ad::Tensor planes = planes_from_channel(init, model.channel_scale);
            const ad::Tensor out = infer(model.params, model.pinn, planes, bundle.crops[size_t(id)]);
            const ChannelTensor refined = channel_from_planes(out, model.channel_scale, 0);
            const double ratio = nmse_linear(refined, bundle.channels[size_t(id)]);
            table.rows[k] = {id, ratio > 0.0 ? 10.0 * std::log10(ratio) : -350.0, ratio};
        });
    }

    double mean_ratio = 0.0, mean_db = 0.0;
    for (const EstimateRow& r : table.rows) {
        mean_ratio += r.linear_ratio;
        mean_db += r.nmse_db;
    }
    mean_ratio /= double(table.rows.size());
    mean_db /= double(table.rows.size());
    table.aggregate_db = mean_ratio > 0.0 ? 10.0 * std::log10(mean_ratio) : -350.0;
    table.mean_of_db = mean_db;
    return table;
}

std::string estimate_table_csv(const EstimateTable& t) {
    std::string out = "sample_id,method,pilots,snr_db,nmse_db\n";
    for (const EstimateRow& r : t.rows)
        out += std::to_string(r.sample_id) + "," + t.method + "," +
               std::to_string(t.pilot_count) + "," + fmt(t.snr_db) + "," + fmt(r.nmse_db) + "\n";
    out += "aggregate," + t.method + "," + std::to_string(t.pilot_count) + "," + fmt(t.snr_db) +
           "," + fmt(t.aggregate_db) + "\n";
    out += "mean_of_db," + t.method + "," + std::to_string(t.pilot_count) + "," + fmt(t.snr_db) +
           "," + fmt(t.mean_of_db) + "\n";
    return out;
}

// --- sweeps -----------------------------------------------------------------

SweepAxis sweep_axis_from_string(const std::string& s) {
    if (s == "snr_db" || s == "snr") return SweepAxis::snr_db;
    if (s == "pilot_count" || s == "pilots") return SweepAxis::pilot_count;
    if (s == "pilot_density" || s == "density") return SweepAxis::pilot_density;
    if (s == "horizon_L" || s == "horizon" || s == "horizon_l") return SweepAxis::horizon_l;
    throw ValidationError("unknown sweep axis: " + s);
}

std::string to_string(SweepAxis axis) {
    switch (axis) {
    case SweepAxis::snr_db: return "snr_db";
    case SweepAxis::pilot_count: return "pilot_count";
    case SweepAxis::pilot_density: return "pilot_density";
    case SweepAxis::horizon_l: return "horizon_L";
    }
    return "?";
}

void SweepSpec::validate() const {
    if (values.empty() || methods.empty() || seeds.empty())
        throw ValidationError("sweep needs non-empty values, methods, and seeds");
    if (axis == SweepAxis::pilot_density)
        for (double v : values)
            if (v <= 0.0 || v > 1.0) throw ValidationError("pilot density must be in (0, 1]");
}

SweepResult run_sweep(const DatasetBundle& bundle, const SweepSpec& spec) {
    spec.validate();
    SweepResult res;
    res.spec = spec;

    struct Cell {
        double value;
        std::string method;
        uint64_t seed;
    };
    std::vector<Cell> cells;
    for (double v : spec.values)
        for (const std::string& m : spec.methods)
            for (uint64_t s : spec.seeds) cells.push_back({v, m, s});

    res.cells.resize(cells.size());
    // estimator runs parallelize internally; keep the cell loop serial so the
    // per-cell rng derivation stays independent of scheduling
    for (size_t i = 0; i < cells.size(); ++i) {
        const Cell& c = cells[i];
        EstimateOptions opt = spec.base;
        opt.seed = Rng::from_key(c.seed, uint64_t(i) * 0x9e37ULL).next_u64();
        switch (spec.axis) {
        case SweepAxis::snr_db: opt.snr_db = c.value; break;
        case SweepAxis::pilot_count: opt.pilot_count = int(std::lround(c.value)); break;
        case SweepAxis::pilot_density:
            opt.pilot_count = std::max(1, int(std::lround(c.value * bundle.arr.nt())));
            break;
        case SweepAxis::horizon_l: break; // handled below
        }

        if (spec.axis == SweepAxis::horizon_l) {
            const MethodSpec ms = parse_method(c.method);
            if (!ms.is_pinn)
                throw ValidationError("horizon_L sweeps apply to pinn:<checkpoint> methods");
            const LoadedModel model = load_trained(ms.checkpoint_path);
            const int step = int(std::lround(c.value));
            if (step < 1 || step > model.pinn.multi_step)
                throw ValidationError("horizon value outside the model's step range");
            std::vector<int> ids;
            for (int k = 0; k + model.pinn.multi_step <= bundle.n_samples; ++k) ids.push_back(k);
            const std::vector<double> per_step = eval_steps(bundle, model, opt, ids);
            res.cells[i] = {c.value, c.method, c.seed, per_step[size_t(step - 1)],
                            per_step[size_t(step - 1)]};
        } else {
            const EstimateTable t = run_estimate(bundle, c.method, opt);
            res.cells[i] = {c.value, c.method, c.seed, t.aggregate_db, t.mean_of_db};
        }
    }
    return res;
}

std::string sweep_csv(const SweepResult& r) {
    std::string out = "axis,value,method,seed,nmse_db,nmse_mean_of_db\n";
    for (const SweepCell& c : r.cells)
        out += to_string(r.spec.axis) + "," + fmt(c.axis_value) + "," + c.method + "," +
               std::to_string(c.seed) + "," + fmt(c.nmse_db) + "," + fmt(c.mean_of_db) + "\n";
    return out;
}

namespace {
const char* kSeriesColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                               "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
}

std::string sweep_svg(const SweepResult& r) {
    // mean over seeds per (method, value)
    std::vector<std::string> methods = r.spec.methods;
    const std::vector<double>& xs = r.spec.values;
    std::vector<std::vector<double>> ys(methods.size(), std::vector<double>(xs.size(), 0.0));
    for (size_t m = 0; m < methods.size(); ++m)
        for (size_t v = 0; v < xs.size(); ++v) {
            double acc = 0.0;
            int cnt = 0;
            for (const SweepCell& c : r.cells)
                if (c.method == methods[m] && c.axis_value == xs[v]) {
                    acc += c.nmse_db;
                    ++cnt;
                }
            ys[m][v] = cnt ? acc / cnt : 0.0;
        }

    double xmin = xs.front(), xmax = xs.front(), ymin = 1e300, ymax = -1e300;
    for (double v : xs) {
        xmin = std::min(xmin, v);
        xmax = std::max(xmax, v);
    }
    for (const auto& row : ys)
        for (double v : row) {
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;
    const double W = 640, H = 420, L = 70, R = 20, T = 30, B = 50;
    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(W) + "\" height=\"" +
           fmt(H) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<line x1=\"" + fmt(L) + "\" y1=\"" + fmt(H - B) + "\" x2=\"" + fmt(W - R) +
           "\" y2=\"" + fmt(H - B) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + fmt(L) + "\" y1=\"" + fmt(T) + "\" x2=\"" + fmt(L) + "\" y2=\"" +
           fmt(H - B) + "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double yv = ymin + (ymax - ymin) * i / 4.0;
        svg += "<text x=\"" + fmt(L - 8) + "\" y=\"" + fmt(py(yv) + 4) +
               "\" font-size=\"11\" text-anchor=\"end\">" + fmt(yv) + "</text>\n";
        const double xv = xmin + (xmax - xmin) * i / 4.0;
        svg += "<text x=\"" + fmt(px(xv)) + "\" y=\"" + fmt(H - B + 18) +
               "\" font-size=\"11\" text-anchor=\"middle\">" + fmt(xv) + "</text>\n";
    }
    svg += "<text x=\"" + fmt((L + W - R) / 2) + "\" y=\"" + fmt(H - 12) +
           "\" font-size=\"12\" text-anchor=\"middle\">" + to_string(r.spec.axis) + "</text>\n";
    svg += "<text x=\"16\" y=\"" + fmt((T + H - B) / 2) +
           "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
           fmt((T + H - B) / 2) + ")\">NMSE (dB)</text>\n";

    for (size_t m = 0; m < methods.size(); ++m) {
        const char* color = kSeriesColors[m % 8];
        std::string pts;
        for (size_t v = 0; v < xs.size(); ++v)
            pts += fmt(px(xs[v])) + "," + fmt(py(ys[m][v])) + " ";
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
               "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
        const double ly = T + 14.0 * double(m);
        svg += "<line x1=\"" + fmt(W - R - 130) + "\" y1=\"" + fmt(ly) + "\" x2=\"" +
               fmt(W - R - 110) + "\" y2=\"" + fmt(ly) + "\" stroke=\"" + color +
               "\" stroke-width=\"1.5\"/>\n";
        svg += "<text x=\"" + fmt(W - R - 104) + "\" y=\"" + fmt(ly + 4) +
               "\" font-size=\"11\">" + methods[m] + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

// --- train/eval plumbing --------------------------------------------------

SplitIndices split_dataset(int n_samples, int horizon, uint64_t seed) {
    std::vector<int> ids;
    for (int i = 0; i + horizon <= n_samples; ++i) ids.push_back(i);
    Rng rng = Rng::from_key(seed, 0x5117);
    for (size_t i = ids.size(); i > 1; --i)
        std::swap(ids[i - 1], ids[size_t(rng.uniform_int(int(i)))]);
    SplitIndices s;
    const size_t n = ids.size();
    const size_t n_train = size_t(double(n) * 0.8);
    const size_t n_val = size_t(double(n) * 0.1);
    for (size_t i = 0; i < n; ++i) {
        if (i < n_train)
            s.train.push_back(ids[i]);
        else if (i < n_train + n_val)
            s.val.push_back(ids[i]);
        else
            s.test.push_back(ids[i]);
    }
    if (s.val.empty() || s.train.empty())
        throw EmptyDataset("dataset too small for an 80/10/10 split");
    return s;
}

TrainSet build_train_set(const DatasetBundle& bundle, const HarnessTrainConfig& cfg,
                         const std::vector<int>& indices) {
    const int L = cfg.pinn.multi_step;
    TrainSet set;
    set.channel_scale = bundle.channel_scale;
    set.power_norm = bundle.power_norm;
    set.tx_power_w = bundle.wf.tx_power_w;
    set.samples.resize(indices.size());

    parallel_for(indices.size(), [&](size_t k) {
        const int id = indices[k];
        TrainSample s;
        s.crop = bundle.crops[size_t(id)];

        ad::Tensor truth({L, 2 * bundle.wf.num_taps, bundle.arr.nr(), bundle.arr.nt()});
        const size_t snap = truth.data.size() / size_t(L);
        for (int st = 0; st < L; ++st) {
            const ad::Tensor planes =
                planes_from_channel(bundle.channels[size_t(id + st)], bundle.channel_scale);
            std::copy(planes.data.begin(), planes.data.end(),
                      truth.data.begin() + int64_t(size_t(st) * snap));
            s.rss_power_norm.push_back(bundle.rss_power_w[size_t(id + st)] / bundle.power_norm);
        }
        s.truth = std::move(truth);

        for (int np : cfg.pilot_counts) {
            EstimateOptions opt;
            opt.pilot_count = np;
            opt.snr_db = cfg.snr_db;
            opt.seed = cfg.obs_seed;
            opt.n_fft = cfg.n_fft;
            const ChannelTensor init = initial_estimate(bundle, id, cfg.initial_method, opt);
            s.h_init_variants.push_back(planes_from_channel(init, bundle.channel_scale));
        }
        set.samples[k] = std::move(s);
    });
    return set;
}

TrainedModel train_on_bundle(const DatasetBundle& bundle, const HarnessTrainConfig& cfg,
                             const SplitIndices& split) {
    PinnConfig pinn_cfg = cfg.pinn;
    pinn_cfg.d_taps = bundle.wf.num_taps;
    pinn_cfg.nr = bundle.arr.nr();
    pinn_cfg.nt = bundle.arr.nt();
    pinn_cfg.crop_px = bundle.crop_px();
    pinn_cfg.validate();

    HarnessTrainConfig full = cfg;
    full.pinn = pinn_cfg;
    const TrainSet train_set = build_train_set(bundle, full, split.train);
    const TrainSet val_set = build_train_set(bundle, full, split.val);

    TrainHyper hyper = cfg.hyper;
    hyper.zeta = pinn_cfg.zeta;

    TrainedModel model;
    model.result = train(train_set, val_set, pinn_cfg, hyper);
    model.pinn = pinn_cfg;
    model.cfg = full;
    model.channel_scale = bundle.channel_scale;
    model.power_norm = bundle.power_norm;
    return model;
}

void save_trained(const TrainedModel& model, const std::string& path) {
    nlohmann::json meta;
    meta["pinn"] = nlohmann::json::parse(model.pinn.to_json());
    meta["initial_method"] = model.cfg.initial_method;
    meta["n_fft"] = model.cfg.n_fft;
    meta["kappa"] = model.result.kappa;
    meta["channel_scale"] = model.channel_scale;
    meta["power_norm"] = model.power_norm;
    meta["best_epoch"] = model.result.best_epoch;
    save_checkpoint(path, model.result.params, meta.dump());
}

LoadedModel load_trained(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    nlohmann::json meta = nlohmann::json::parse(ck.metadata_json);
    LoadedModel m;
    m.pinn = PinnConfig::from_json(meta.at("pinn").dump());
    m.initial_method = meta.value("initial_method", std::string("ls-ofdm"));
    m.n_fft = meta.value("n_fft", 64);
    m.kappa = meta.value("kappa", 1.0);
    m.channel_scale = meta.value("channel_scale", 1.0);
    m.power_norm = meta.value("power_norm", 1.0);
    m.params = std::move(ck.params);

    // shape check against the config-derived parameter set
    const NamedTensors expect = init_params(m.pinn, 0);
    if (expect.size() != m.params.size())
        throw CheckpointShapeMismatch("parameter count does not match config");
    for (size_t i = 0; i < expect.size(); ++i)
        if (expect.names[i] != m.params.names[i] ||
            expect.tensors[i].shape != m.params.tensors[i].shape)
            throw CheckpointShapeMismatch("parameter " + expect.names[i] + " shape mismatch");
    return m;
}

std::vector<double> eval_steps(const DatasetBundle& bundle, const LoadedModel& model,
                               const EstimateOptions& opt, const std::vector<int>& samples) {
    const int L = model.pinn.multi_step;
    std::vector<std::vector<double>> ratios(size_t(L),
                                            std::vector<double>(samples.size(), 0.0));
    EstimateOptions init_opt = opt;
    init_opt.n_fft = model.n_fft;
    parallel_for(samples.size(), [&](size_t k) {
        const int id = samples[k];
        const ChannelTensor init = initial_estimate(bundle, id, model.initial_method, init_opt);
        const ad::Tensor planes = planes_from_channel(init, model.channel_scale);
        const ad::Tensor out = infer(model.params, model.pinn, planes, bundle.crops[size_t(id)]);
        for (int st = 0; st < L; ++st) {
            const ChannelTensor refined = channel_from_planes(out, model.channel_scale, st);
            ratios[size_t(st)][k] = nmse_linear(refined, bundle.channels[size_t(id + st)]);
        }
    });
    std::vector<double> out(static_cast<size_t>(L));
    for (int st = 0; st < L; ++st) out[size_t(st)] = nmse_db_of_mean(ratios[size_t(st)]);
    return out;
}

std::string history_csv(const std::vector<HistoryRow>& history) {
    std::string out = "epoch,train_loss,val_loss,lr,val_nmse_db\n";
    for (const HistoryRow& r : history)
        out += std::to_string(r.epoch) + "," + fmt(r.train_loss) + "," + fmt(r.val_loss) + "," +
               fmt(r.lr) + "," + fmt(r.val_nmse_db) + "\n";
    return out;
}

} // namespace mbce
