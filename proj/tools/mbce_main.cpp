// Command-line front end: dataset generation, estimator runs, refiner
// training, evaluation, and benchmark sweeps.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mbce/bench.hpp"
#include "mbce/dataset.hpp"

using namespace mbce;
namespace nj = nlohmann;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot read " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot write " + path);
    f << text;
}

struct GenSettings {
    ArrayConfig arr{8, 8, 2, 2};
    WaveformConfig wf;
    DatasetGenConfig gen;
};

GenSettings gen_settings_from_json(const std::string& text) {
    GenSettings s;
    if (text.empty()) return s;
    nj::json j = nj::json::parse(text);
    if (j.contains("arr")) {
        s.arr.nt_x = j["arr"].value("nt_x", s.arr.nt_x);
        s.arr.nt_y = j["arr"].value("nt_y", s.arr.nt_y);
        s.arr.nr_x = j["arr"].value("nr_x", s.arr.nr_x);
        s.arr.nr_y = j["arr"].value("nr_y", s.arr.nr_y);
    }
    if (j.contains("wf")) {
        auto& w = j["wf"];
        s.wf.sample_interval_s = w.value("sample_interval_s", s.wf.sample_interval_s);
        s.wf.rolloff = w.value("rolloff", s.wf.rolloff);
        s.wf.num_taps = w.value("num_taps", s.wf.num_taps);
        s.wf.carrier_hz = w.value("carrier_hz", s.wf.carrier_hz);
        if (w.contains("tx_power_dbm"))
            s.wf.tx_power_w = watts_from_dbm(w["tx_power_dbm"]);
        else
            s.wf.tx_power_w = w.value("tx_power_w", s.wf.tx_power_w);
    }
    if (j.contains("gen")) {
        auto& g = j["gen"];
        s.gen.n_samples = g.value("n_samples", s.gen.n_samples);
        s.gen.resolution_m = g.value("resolution_m", s.gen.resolution_m);
        s.gen.crop_m = g.value("crop_m", s.gen.crop_m);
        s.gen.gps_sigma_m = g.value("gps_sigma_m", s.gen.gps_sigma_m);
        s.gen.sync_to_first_path = g.value("sync_to_first_path", s.gen.sync_to_first_path);
        if (g.contains("trajectory"))
            s.gen.trajectory =
                TrajectoryInfo{g["trajectory"].at("velocity_mps"), g["trajectory"].at("step_s")};
    }
    return s;
}

std::vector<double> parse_doubles(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(std::stod(tok));
    return out;
}

std::vector<std::string> parse_strings(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(tok);
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"RSS-map-assisted MIMO channel estimation benchmark"};
    app.require_subcommand(1);

    // ------------------------------------------------------------------ gen
    auto* gen_cmd = app.add_subcommand("gen", "generate a dataset bundle from a scene");
    std::string gen_scene, gen_out, gen_config;
    uint64_t gen_seed = 1;
    int gen_samples = -1;
    gen_cmd->add_option("--scene", gen_scene, "scene JSON file")->required();
    gen_cmd->add_option("--out", gen_out, "output bundle directory")->required();
    gen_cmd->add_option("--config", gen_config, "array/waveform/generation JSON");
    gen_cmd->add_option("--seed", gen_seed, "rng seed");
    gen_cmd->add_option("--samples", gen_samples, "sample count override");

    // -------------------------------------------------------------- estimate
    auto* est_cmd = app.add_subcommand("estimate", "run one estimator over a bundle");
    std::string est_bundle, est_method = "ls-ofdm", est_out;
    EstimateOptions est_opt;
    est_cmd->add_option("--bundle", est_bundle, "bundle directory")->required();
    est_cmd->add_option("--method", est_method, "ls-interp|ls-dft|ls-ofdm|somp|pinn:<ckpt>");
    est_cmd->add_option("--pilots", est_opt.pilot_count, "pilot count");
    est_cmd->add_option("--snr-db", est_opt.snr_db, "observation SNR in dB");
    est_cmd->add_option("--seed", est_opt.seed, "observation seed");
    est_cmd->add_option("--nfft", est_opt.n_fft, "OFDM grid size");
    est_cmd->add_option("--out", est_out, "CSV output path (stdout when omitted)");

    // ----------------------------------------------------------------- train
    auto* train_cmd = app.add_subcommand("train", "train the refinement network on a bundle");
    std::string tr_bundle, tr_out = "model.ckpt", tr_config, tr_pilots = "4";
    HarnessTrainConfig tr;
    uint64_t tr_seed = 1;
    int tr_horizon = 1;
    train_cmd->add_option("--bundle", tr_bundle, "bundle directory")->required();
    train_cmd->add_option("--out", tr_out, "checkpoint output path");
    train_cmd->add_option("--config", tr_config, "training config JSON");
    train_cmd->add_option("--seed", tr_seed, "training seed");
    train_cmd->add_option("--epochs", tr.hyper.epochs, "epoch count");
    train_cmd->add_option("--zeta", tr.pinn.zeta, "physics loss weight");
    train_cmd->add_option("--pilots", tr_pilots, "comma list of pilot counts to mix");
    train_cmd->add_option("--snr-db", tr.snr_db, "observation SNR in dB");
    train_cmd->add_option("--nfft", tr.n_fft, "OFDM grid size");
    train_cmd->add_option("--method", tr.initial_method, "initial estimator");
    train_cmd->add_option("--horizon", tr_horizon, "prediction steps L");

    // ------------------------------------------------------------------ eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint against its initializer");
    std::string ev_bundle, ev_ckpt;
    EstimateOptions ev_opt;
    eval_cmd->add_option("--bundle", ev_bundle, "bundle directory")->required();
    eval_cmd->add_option("--checkpoint", ev_ckpt, "trained checkpoint")->required();
    eval_cmd->add_option("--pilots", ev_opt.pilot_count, "pilot count");
    eval_cmd->add_option("--snr-db", ev_opt.snr_db, "observation SNR in dB");
    eval_cmd->add_option("--seed", ev_opt.seed, "observation seed");

    // ----------------------------------------------------------------- sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "run a benchmark sweep to CSV + SVG");
    std::string sw_bundle, sw_axis = "snr_db", sw_values, sw_methods, sw_seeds = "1", sw_out = ".";
    SweepSpec sw_spec;
    sweep_cmd->add_option("--bundle", sw_bundle, "bundle directory")->required();
    sweep_cmd->add_option("--axis", sw_axis, "snr_db|pilot_count|pilot_density|horizon_L");
    sweep_cmd->add_option("--values", sw_values, "comma list of axis values")->required();
    sweep_cmd->add_option("--methods", sw_methods, "comma list of methods")->required();
    sweep_cmd->add_option("--seeds", sw_seeds, "comma list of seeds");
    sweep_cmd->add_option("--out", sw_out, "output directory");
    sweep_cmd->add_option("--pilots", sw_spec.base.pilot_count, "fixed pilot count");
    sweep_cmd->add_option("--snr-db", sw_spec.base.snr_db, "fixed SNR");
    sweep_cmd->add_option("--nfft", sw_spec.base.n_fft, "OFDM grid size");

    // ------------------------------------------------------------------ plot
    auto* plot_cmd = app.add_subcommand("plot", "re-render a sweep CSV as SVG");
    std::string pl_csv, pl_out = "sweep.svg";
    plot_cmd->add_option("--csv", pl_csv, "sweep CSV")->required();
    plot_cmd->add_option("--out", pl_out, "SVG output path");

    CLI11_PARSE(app, argc, argv);

    if (gen_cmd->parsed()) {
        GenSettings s = gen_settings_from_json(gen_config.empty() ? "" : read_file(gen_config));
        s.gen.seed = gen_seed;
        if (gen_samples > 0) s.gen.n_samples = gen_samples;
        const Scene scene = scene_from_json(read_file(gen_scene));
        const DatasetBundle bundle = generate_dataset(scene, s.arr, s.wf, s.gen);
        save_bundle(bundle, gen_out);
        std::cout << "bundle: " << gen_out << "\n"
                  << "samples: " << bundle.n_samples << "\n"
                  << "channel_scale: " << bundle.channel_scale << "\n"
                  << "power_norm_w: " << bundle.power_norm << "\n"
                  << "dropped_paths: " << bundle.dropped_paths << "\n"
                  << "content_hash: " << bundle_content_hash(bundle) << "\n";
        return 0;
    }

    if (est_cmd->parsed()) {
        const DatasetBundle bundle = load_bundle(est_bundle);
        const EstimateTable t = run_estimate(bundle, est_method, est_opt);
        const std::string csv = estimate_table_csv(t);
        if (est_out.empty())
            std::cout << csv;
        else
            write_file(est_out, csv);
        std::cerr << "aggregate_nmse_db: " << t.aggregate_db << "\n";
        return 0;
    }

    if (train_cmd->parsed()) {
        const DatasetBundle bundle = load_bundle(tr_bundle);
        if (!tr_config.empty()) {
            nj::json j = nj::json::parse(read_file(tr_config));
            if (j.contains("pinn")) tr.pinn = PinnConfig::from_json(j["pinn"].dump());
            if (j.contains("hyper")) {
                auto& h = j["hyper"];
                tr.hyper.batch_size = h.value("batch_size", tr.hyper.batch_size);
                tr.hyper.epochs = h.value("epochs", tr.hyper.epochs);
                tr.hyper.init_lr = h.value("init_lr", tr.hyper.init_lr);
                tr.hyper.decay_step = h.value("decay_step", tr.hyper.decay_step);
                tr.hyper.gamma = h.value("gamma", tr.hyper.gamma);
                tr.hyper.beta1 = h.value("beta1", tr.hyper.beta1);
                tr.hyper.beta2 = h.value("beta2", tr.hyper.beta2);
            }
        }
        tr.hyper.seed = tr_seed;
        tr.obs_seed = tr_seed ^ 0x9e3779b9ULL;
        tr.pinn.multi_step = tr_horizon;
        tr.pilot_counts.clear();
        for (double v : parse_doubles(tr_pilots)) tr.pilot_counts.push_back(int(v));

        const SplitIndices split = split_dataset(bundle.n_samples, tr_horizon, tr_seed);
        const TrainedModel model = train_on_bundle(bundle, tr, split);
        save_trained(model, tr_out);
        write_file(tr_out + ".history.csv", history_csv(model.result.history));
        std::cout << "checkpoint: " << tr_out << "\n"
                  << "best_epoch: " << model.result.best_epoch << "\n"
                  << "kappa: " << model.result.kappa << "\n"
                  << "val_nmse_db: "
                  << model.result.history[size_t(model.result.best_epoch)].val_nmse_db << "\n";
        return 0;
    }

    if (eval_cmd->parsed()) {
        const DatasetBundle bundle = load_bundle(ev_bundle);
        const LoadedModel model = load_trained(ev_ckpt);
        const SplitIndices split =
            split_dataset(bundle.n_samples, model.pinn.multi_step, ev_opt.seed);
        EstimateOptions opt = ev_opt;
        opt.n_fft = model.n_fft;
        const EstimateTable init = run_estimate(bundle, model.initial_method, opt, &split.test);
        const std::vector<double> steps = eval_steps(bundle, model, opt, split.test);
        std::cout << "test_samples: " << split.test.size() << "\n"
                  << "initial (" << model.initial_method << ") nmse_db: " << init.aggregate_db
                  << "\n";
        for (size_t s = 0; s < steps.size(); ++s)
            std::cout << "refined step " << s + 1 << " nmse_db: " << steps[s] << "\n";
        return 0;
    }

    if (sweep_cmd->parsed()) {
        const DatasetBundle bundle = load_bundle(sw_bundle);
        sw_spec.axis = sweep_axis_from_string(sw_axis);
        sw_spec.values = parse_doubles(sw_values);
        sw_spec.methods = parse_strings(sw_methods);
        for (double v : parse_doubles(sw_seeds)) sw_spec.seeds.push_back(uint64_t(v));
        const SweepResult res = run_sweep(bundle, sw_spec);
        const std::string base = sw_out + "/sweep_" + to_string(sw_spec.axis);
        write_file(base + ".csv", sweep_csv(res));
        write_file(base + ".svg", sweep_svg(res));
        std::cout << base + ".csv\n" << base + ".svg\n";
        return 0;
    }

    if (plot_cmd->parsed()) {
        // rebuild a sweep result from the long-format CSV
        std::ifstream f(pl_csv);
        if (!f) throw ValidationError("cannot read " + pl_csv);
        std::string line;
        std::getline(f, line); // header
        SweepResult res;
        bool axis_set = false;
        while (std::getline(f, line)) {
            std::stringstream ss(line);
            std::string axis, value, method, seed, nmse, mean;
            std::getline(ss, axis, ',');
            std::getline(ss, value, ',');
            std::getline(ss, method, ',');
            std::getline(ss, seed, ',');
            std::getline(ss, nmse, ',');
            std::getline(ss, mean, ',');
            if (!axis_set) {
                res.spec.axis = sweep_axis_from_string(axis);
                axis_set = true;
            }
            const double v = std::stod(value);
            if (std::find(res.spec.values.begin(), res.spec.values.end(), v) ==
                res.spec.values.end())
                res.spec.values.push_back(v);
            if (std::find(res.spec.methods.begin(), res.spec.methods.end(), method) ==
                res.spec.methods.end())
                res.spec.methods.push_back(method);
            res.cells.push_back(
                {v, method, uint64_t(std::stoull(seed)), std::stod(nmse), std::stod(mean)});
        }
        if (!axis_set) throw ValidationError("empty sweep CSV");
        write_file(pl_out, sweep_svg(res));
        std::cout << pl_out << "\n";
        return 0;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
