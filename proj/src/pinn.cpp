#include "mbce/pinn.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "mbce/parallel.hpp"

namespace mbce {

using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

int group_count(int channels) {
    // largest divisor of C up to 8 groups, keeping at least 2 channels per
    // group so normalization never degenerates on narrow heads
    for (int g = std::min(8, channels / 2); g >= 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

Tensor uniform_init(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(double(std::max(1, fan_in)));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

void add_conv(NamedTensors& p, const std::string& name, int co, int ci, int k, Rng& rng) {
    p.add(name + ".w", uniform_init({co, ci, k, k}, ci * k * k, rng));
    p.add(name + ".b", Tensor::zeros({co}));
}

void add_convt(NamedTensors& p, const std::string& name, int ci, int co, int k, Rng& rng) {
    p.add(name + ".w", uniform_init({ci, co, k, k}, ci * k * k, rng));
    p.add(name + ".b", Tensor::zeros({co}));
}

void add_norm(NamedTensors& p, const std::string& name, int c) {
    p.add(name + ".g", Tensor::full({c}, 1.0));
    p.add(name + ".b", Tensor::zeros({c}));
}

void add_linear(NamedTensors& p, const std::string& name, int in, int out, Rng& rng) {
    p.add(name + ".w", uniform_init({in, out}, in, rng));
    p.add(name + ".b", Tensor::zeros({out}));
}

void add_down_block(NamedTensors& p, const std::string& prefix, int ci, int co, Rng& rng) {
    add_conv(p, prefix + ".conv1", co, ci, 3, rng);
    add_norm(p, prefix + ".gn1", co);
    add_conv(p, prefix + ".conv2", co, co, 3, rng);
    add_norm(p, prefix + ".gn2", co);
    add_conv(p, prefix + ".res", co, ci, 1, rng);
    add_norm(p, prefix + ".resgn", co);
}

void add_up_block(NamedTensors& p, const std::string& prefix, int ci, int co, Rng& rng,
                  bool output_head = false) {
    add_convt(p, prefix + ".convt", ci, co, 3, rng);
    add_norm(p, prefix + ".gn1", co);
    add_conv(p, prefix + ".conv2", co, co, 3, rng);
    if (!output_head) add_norm(p, prefix + ".gn2", co);
    add_convt(p, prefix + ".res", ci, co, 1, rng);
    add_norm(p, prefix + ".resgn", co);
}

Var conv_bias(const GraphParams& p, const std::string& name, Var x, int stride, int pad) {
    return ad::add_chan_bias(ad::conv2d(x, p.at(name + ".w"), stride, pad), p.at(name + ".b"));
}

Var convt_bias(const GraphParams& p, const std::string& name, Var x, int stride, int pad,
               int out_pad) {
    return ad::add_chan_bias(ad::conv_transpose2d(x, p.at(name + ".w"), stride, pad, out_pad),
                             p.at(name + ".b"));
}

Var gn(const GraphParams& p, const std::string& name, Var x, int channels) {
    return ad::group_norm(x, p.at(name + ".g"), p.at(name + ".b"), group_count(channels));
}

Var down_block(const GraphParams& p, const std::string& prefix, Var x, int co) {
    Var m = conv_bias(p, prefix + ".conv1", x, 1, 1);
    m = ad::leaky_relu(gn(p, prefix + ".gn1", m, co), 0.2);
    m = conv_bias(p, prefix + ".conv2", m, 2, 1);
    m = ad::leaky_relu(gn(p, prefix + ".gn2", m, co), 0.2);
    Var r = conv_bias(p, prefix + ".res", x, 2, 0);
    r = gn(p, prefix + ".resgn", r, co);
    return ad::add(m, r);
}

// output_head leaves the block's second conv linear: channel planes are
// signed quantities, so the network cannot end in a rectifier
Var up_block(const GraphParams& p, const std::string& prefix, Var x, int co,
             bool output_head = false) {
    Var m = convt_bias(p, prefix + ".convt", x, 2, 1, 1);
    m = ad::relu(gn(p, prefix + ".gn1", m, co));
    m = conv_bias(p, prefix + ".conv2", m, 1, 1);
    if (!output_head) m = ad::relu(gn(p, prefix + ".gn2", m, co));
    Var r = convt_bias(p, prefix + ".res", x, 2, 0, 1);
    r = gn(p, prefix + ".resgn", r, co);
    return ad::add(m, r);
}

} // namespace

Var multi_head_attention(Var q_in, Var k_in, Var v_in, int heads, double scale_factor) {
    const int dz = q_in.tape->value(q_in).dim(1);
    const int dh = dz / heads;
    Var out{};
    for (int h = 0; h < heads; ++h) {
        Var qh = ad::slice_cols(q_in, h * dh, (h + 1) * dh);
        Var kh = ad::slice_cols(k_in, h * dh, (h + 1) * dh);
        Var vh = ad::slice_cols(v_in, h * dh, (h + 1) * dh);
        Var scores = ad::scale(ad::matmul(qh, ad::transpose2d(kh)), scale_factor);
        Var attn = ad::softmax_last(scores);
        Var oh = ad::matmul(attn, vh);
        out = (h == 0) ? oh : ad::concat(out, oh, 1);
    }
    return out;
}

void PinnConfig::validate() const {
    if (d_taps < 1 || nr < 1 || nt < 1) throw ValidationError("pinn dims must be positive");
    if (base_channels[2] != latent_dim)
        throw ValidationError("latent_dim must equal the deepest encoder width");
    if (latent_dim % num_heads != 0)
        throw HeadDivisibility("latent_dim " + std::to_string(latent_dim) + " % heads " +
                               std::to_string(num_heads) + " != 0");
    if (multi_step < 1) throw ValidationError("multi_step must be >= 1");
    if (zeta < 0.0) throw ValidationError("zeta must be >= 0");
    if (crop_px < 1) throw ValidationError("crop_px must be >= 1");
    if (transformer_blocks < 1) throw ValidationError("need at least one transformer block");
}

PinnConfig PinnConfig::desk() { return PinnConfig{}; }

PinnConfig PinnConfig::paper() {
    PinnConfig c;
    c.d_taps = 16;
    c.nr = 4;
    c.nt = 576;
    c.base_channels = {64, 128, 256};
    c.latent_dim = 256;
    c.crop_px = 30;
    return c;
}

PinnConfig PinnConfig::gradcheck() {
    PinnConfig c;
    c.d_taps = 2;
    c.nr = 2;
    c.nt = 8;
    c.base_channels = {8, 8, 16};
    c.latent_dim = 16;
    c.transformer_blocks = 1;
    c.num_heads = 2;
    c.crop_px = 6;
    return c;
}

std::string PinnConfig::to_json() const {
    nlohmann::json j;
    j["d_taps"] = d_taps;
    j["nr"] = nr;
    j["nt"] = nt;
    j["base_channels"] = base_channels;
    j["latent_dim"] = latent_dim;
    j["transformer_blocks"] = transformer_blocks;
    j["num_heads"] = num_heads;
    j["crop_px"] = crop_px;
    j["multi_step"] = multi_step;
    j["zeta"] = zeta;
    return j.dump();
}

PinnConfig PinnConfig::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    PinnConfig c;
    c.d_taps = j.value("d_taps", c.d_taps);
    c.nr = j.value("nr", c.nr);
    c.nt = j.value("nt", c.nt);
    if (j.contains("base_channels"))
        for (int i = 0; i < 3; ++i) c.base_channels[size_t(i)] = j["base_channels"][size_t(i)];
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.transformer_blocks = j.value("transformer_blocks", c.transformer_blocks);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.crop_px = j.value("crop_px", c.crop_px);
    c.multi_step = j.value("multi_step", c.multi_step);
    c.zeta = j.value("zeta", c.zeta);
    c.validate();
    return c;
}

NamedTensors init_params(const PinnConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    NamedTensors p;
    const int c1 = cfg.base_channels[0], c2 = cfg.base_channels[1], c3 = cfg.base_channels[2];
    const int dz = cfg.latent_dim;

    add_down_block(p, "enc1", cfg.in_channels(), c1, rng);
    add_down_block(p, "enc2", c1, c2, rng);
    add_down_block(p, "enc3", c2, c3, rng);

    // compact CNN over the RSS crop, widths tied to the latent dimension
    const int r1 = std::max(1, dz / 8), r2 = std::max(1, dz / 4), r3 = std::max(1, dz / 2);
    add_conv(p, "rss1", r1, 1, 3, rng);
    add_conv(p, "rss2", r2, r1, 3, rng);
    add_conv(p, "rss3", r3, r2, 3, rng);
    add_conv(p, "rss4", dz, r3, 3, rng);

    add_linear(p, "xattn.chan", c3, dz, rng);
    add_linear(p, "xattn.rss", dz, dz, rng);

    for (int b = 0; b < cfg.transformer_blocks; ++b) {
        const std::string pre = "tf" + std::to_string(b);
        add_norm(p, pre + ".ln1", dz);
        add_linear(p, pre + ".wq", dz, dz, rng);
        add_linear(p, pre + ".wk", dz, dz, rng);
        add_linear(p, pre + ".wv", dz, dz, rng);
        add_linear(p, pre + ".wo", dz, dz, rng);
        add_norm(p, pre + ".ln2", dz);
        add_linear(p, pre + ".ff1", dz, 4 * dz, rng);
        add_linear(p, pre + ".ff2", 4 * dz, dz, rng);
    }

    add_up_block(p, "dec1", c3, c2, rng);
    add_up_block(p, "dec2", 2 * c2, c1, rng);
    add_up_block(p, "dec3", 2 * c1, cfg.out_channels(), rng, true);

    // damp the output head so initial predictions start near zero
    for (const char* name : {"dec3.conv2.w", "dec3.res.w", "dec3.resgn.g"}) {
        Tensor& t = p[size_t(p.index_of(name))];
        for (double& v : t.data) v *= 0.1;
    }
    return p;
}

Var GraphParams::at(const std::string& name) const {
    const int idx = names->index_of(name);
    if (idx < 0) throw ValidationError("unknown parameter: " + name);
    return vars[size_t(idx)];
}

GraphParams bind_params(Tape& tape, const NamedTensors& params, bool requires_grad) {
    GraphParams g;
    g.tape = &tape;
    g.names = &params;
    g.vars.reserve(params.size());
    for (size_t i = 0; i < params.size(); ++i) g.vars.push_back(tape.leaf(params[i], requires_grad));
    return g;
}

EncoderOut encode_channel(const PinnConfig& cfg, const GraphParams& p, Var h_planes) {
    const Tensor& hv = p.tape->value(h_planes);
    if (hv.rank() != 3 || hv.dim(0) != cfg.in_channels() || hv.dim(1) != cfg.nr ||
        hv.dim(2) != cfg.nt)
        throw ShapeMismatch("encode_channel: input must be [2D, Nr, Nt]");
    Var x = ad::pad2d_to(h_planes, cfg.pad_h(), cfg.pad_w());
    EncoderOut out;
    out.skip1 = down_block(p, "enc1", x, cfg.base_channels[0]);
    out.skip2 = down_block(p, "enc2", out.skip1, cfg.base_channels[1]);
    out.deep = down_block(p, "enc3", out.skip2, cfg.base_channels[2]);
    return out;
}

Var encode_rss(const PinnConfig& cfg, const GraphParams& p, Var crop) {
    const Tensor& cv = p.tape->value(crop);
    if (cv.rank() != 3 || cv.dim(0) != 1 || cv.dim(1) != cfg.crop_px || cv.dim(2) != cfg.crop_px)
        throw ShapeMismatch("encode_rss: crop must be [1, px, px]");
    Var x = ad::max_pool2d(ad::relu(conv_bias(p, "rss1", crop, 1, 1)));
    x = ad::max_pool2d(ad::relu(conv_bias(p, "rss2", x, 1, 1)));
    x = ad::max_pool2d(ad::relu(conv_bias(p, "rss3", x, 1, 1)));
    x = ad::relu(conv_bias(p, "rss4", x, 1, 1));
    return ad::global_avg_pool(x);
}

Var cross_attention(const PinnConfig& cfg, const GraphParams& p, Var tokens, Var rss_vec) {
    const Tensor& tv = p.tape->value(tokens);
    if (tv.rank() != 2 || tv.dim(1) != cfg.latent_dim)
        throw ShapeMismatch("cross_attention: tokens must be [T, D_z]");
    Var xc = ad::add_row_bias(ad::matmul(tokens, p.at("xattn.chan.w")), p.at("xattn.chan.b"));
    Var rss_tok = ad::reshape(rss_vec, {1, cfg.latent_dim});
    Var xr = ad::add_row_bias(ad::matmul(rss_tok, p.at("xattn.rss.w")), p.at("xattn.rss.b"));
    // softmax(Q K^T / sqrt(D_z)) V with Q = channel tokens, K = V = RSS tokens
    Var fused = multi_head_attention(xc, xr, xr, cfg.num_heads,
                                     1.0 / std::sqrt(double(cfg.latent_dim)));
    return ad::add(tokens, fused);
}

Var transformer_latent(const PinnConfig& cfg, const GraphParams& p, Var tokens) {
    const int dz = cfg.latent_dim;
    const int dh = dz / cfg.num_heads;
    Var x = tokens;
    for (int b = 0; b < cfg.transformer_blocks; ++b) {
        const std::string pre = "tf" + std::to_string(b);
        Var a = ad::layer_norm(x, p.at(pre + ".ln1.g"), p.at(pre + ".ln1.b"));
        Var q = ad::add_row_bias(ad::matmul(a, p.at(pre + ".wq.w")), p.at(pre + ".wq.b"));
        Var k = ad::add_row_bias(ad::matmul(a, p.at(pre + ".wk.w")), p.at(pre + ".wk.b"));
        Var v = ad::add_row_bias(ad::matmul(a, p.at(pre + ".wv.w")), p.at(pre + ".wv.b"));
        Var heads = multi_head_attention(q, k, v, cfg.num_heads, 1.0 / std::sqrt(double(dh)));
        Var o = ad::add_row_bias(ad::matmul(heads, p.at(pre + ".wo.w")), p.at(pre + ".wo.b"));
        x = ad::add(x, o);
        Var f = ad::layer_norm(x, p.at(pre + ".ln2.g"), p.at(pre + ".ln2.b"));
        f = ad::relu(ad::add_row_bias(ad::matmul(f, p.at(pre + ".ff1.w")), p.at(pre + ".ff1.b")));
        f = ad::add_row_bias(ad::matmul(f, p.at(pre + ".ff2.w")), p.at(pre + ".ff2.b"));
        x = ad::add(x, f);
    }
    return x;
}

Var decode(const PinnConfig& cfg, const GraphParams& p, Var latent_feat, const EncoderOut& enc) {
    Var d1 = up_block(p, "dec1", latent_feat, cfg.base_channels[1]);
    Var d2 = up_block(p, "dec2", ad::concat(d1, enc.skip2, 0), cfg.base_channels[0]);
    Var d3 = up_block(p, "dec3", ad::concat(d2, enc.skip1, 0), cfg.out_channels(), true);
    Var out = ad::crop2d_to(d3, cfg.nr, cfg.nt);
    return ad::reshape(out, {cfg.multi_step, cfg.in_channels(), cfg.nr, cfg.nt});
}

Var pinn_forward(const PinnConfig& cfg, const GraphParams& p, Var h_planes, Var crop) {
    EncoderOut enc = encode_channel(cfg, p, h_planes);
    Var rss = encode_rss(cfg, p, crop);
    // spatial positions of the deepest feature become the token sequence
    Var tokens = ad::transpose2d(
        ad::reshape(enc.deep, {cfg.latent_dim, cfg.token_count()}));
    Var fused = cross_attention(cfg, p, tokens, rss);
    Var z = transformer_latent(cfg, p, fused);
    Var feat = ad::reshape(ad::transpose2d(z), {cfg.latent_dim, cfg.deep_h(), cfg.deep_w()});
    return decode(cfg, p, feat, enc);
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

double loss_total(const Tensor& pred, const Tensor& truth, const std::vector<double>& rss_power_w,
                  const WaveformConfig& wf, double zeta, const PhysicsCalib& calib) {
    if (!pred.same_shape(truth) || pred.rank() != 4) throw ShapeMismatch("loss_total shapes");
    const int steps = pred.dim(0);
    if (int(rss_power_w.size()) != steps) throw ShapeMismatch("rss power per snapshot required");
    const size_t snap = pred.data.size() / size_t(steps);

    double acc = 0.0;
    for (int s = 0; s < steps; ++s) {
        const double* ps = &pred.data[size_t(s) * snap];
        const double* ts = &truth.data[size_t(s) * snap];
        double num = 0.0, den = 0.0, pw = 0.0;
        for (size_t i = 0; i < snap; ++i) {
            const double d = ps[i] - ts[i];
            num += d * d;
            den += ts[i] * ts[i];
            pw += ps[i] * ps[i];
        }
        if (den <= 0.0) throw ZeroReference("truth snapshot has zero norm");
        const double p_chan_n = wf.tx_power_w * pw / calib.power_norm;
        const double p_em_n = rss_power_w[size_t(s)] / calib.power_norm;
        const double resid = p_em_n - calib.kappa * p_chan_n;
        acc += num / den + zeta * resid * resid;
    }
    return acc / double(steps);
}

Var loss_total_node(const PinnConfig& cfg, Var pred_norm, const Tensor& truth_norm,
                    const std::vector<double>& rss_power_norm, double tx_power_w,
                    double channel_scale, double power_norm, double zeta, double kappa) {
    Tape& t = *pred_norm.tape;
    const std::vector<int> pred_shape = t.value(pred_norm).shape;
    if (pred_shape != truth_norm.shape) throw ShapeMismatch("loss shapes disagree");
    const int steps = cfg.multi_step;
    const size_t snap = truth_norm.data.size() / size_t(steps);

    // per-element weights: 1 / (L * ||truth_s||^2) for the NMSE term
    Tensor w(pred_shape);
    std::vector<double> dens(size_t(steps), 0.0);
    for (int s = 0; s < steps; ++s) {
        double den = 0.0;
        for (size_t i = 0; i < snap; ++i) {
            const double v = truth_norm.data[size_t(s) * snap + i];
            den += v * v;
        }
        if (den <= 0.0) throw ZeroReference("truth snapshot has zero norm");
        dens[size_t(s)] = den;
        for (size_t i = 0; i < snap; ++i)
            w.data[size_t(s) * snap + i] = 1.0 / (double(steps) * den);
    }

    Var diff = ad::sub(pred_norm, t.constant(truth_norm));
    Var loss = ad::sum_all(ad::mul(ad::mul(diff, diff), t.constant(w)));

    if (zeta > 0.0) {
        const double ctot = tx_power_w * channel_scale * channel_scale / power_norm;
        Var pred_sq = ad::mul(pred_norm, pred_norm);
        for (int s = 0; s < steps; ++s) {
            Tensor mask = Tensor::zeros(pred_shape);
            for (size_t i = 0; i < snap; ++i) mask.data[size_t(s) * snap + i] = 1.0;
            Var p_chan_n = ad::scale(ad::sum_all(ad::mul(pred_sq, t.constant(mask))), ctot);
            Var resid = ad::sub(t.constant(Tensor::scalar(rss_power_norm[size_t(s)])),
                                ad::scale(p_chan_n, kappa));
            loss = ad::add(loss, ad::scale(ad::mul(resid, resid), zeta / double(steps)));
        }
    }
    return loss;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

void TrainHyper::validate() const {
    if (batch_size < 1 || epochs < 1) throw ValidationError("batch_size/epochs must be positive");
    if (init_lr <= 0.0 || decay_step < 1) throw ValidationError("bad lr schedule");
    if (gamma <= 0.0 || gamma > 1.0) throw ValidationError("gamma must be in (0, 1]");
    if (zeta < 0.0) throw ValidationError("zeta must be >= 0");
}

namespace {

double kappa_least_squares(const TrainSet& set, const PinnConfig& cfg) {
    // least-squares ratio between normalized field power and normalized
    // channel power of the ground truth, frozen before training
    const double cs = set.channel_scale;
    double num = 0.0, den = 0.0;
    const int steps = cfg.multi_step;
    for (const TrainSample& s : set.samples) {
        const size_t snap = s.truth.data.size() / size_t(steps);
        for (int st = 0; st < steps; ++st) {
            double pw = 0.0;
            for (size_t i = 0; i < snap; ++i) {
                const double v = s.truth.data[size_t(st) * snap + i];
                pw += v * v;
            }
            const double p_chan_n = set.tx_power_w * cs * cs * pw / set.power_norm;
            const double p_em_n = s.rss_power_norm[size_t(st)];
            num += p_em_n * p_chan_n;
            den += p_chan_n * p_chan_n;
        }
    }
    if (den <= 0.0) throw ZeroReference("cannot calibrate kappa on zero-power channels");
    return num / den;
}

struct SampleEval {
    double loss = 0.0;
    double nmse_ratio = 0.0;
};

SampleEval eval_sample(const NamedTensors& params, const PinnConfig& cfg, const TrainSet& set,
                       const TrainSample& s, size_t variant, double zeta, double kappa,
                       std::vector<Tensor>* grads) {
    Tape tape;
    GraphParams gp = bind_params(tape, params, grads != nullptr);
    Var h = tape.constant(s.h_init_variants[variant]);
    Var crop = tape.constant(s.crop);
    Var pred = pinn_forward(cfg, gp, h, crop);
    Var loss = loss_total_node(cfg, pred, s.truth, s.rss_power_norm, set.tx_power_w,
                               set.channel_scale, set.power_norm, zeta, kappa);
    SampleEval ev;
    ev.loss = tape.value(loss).data[0];

    const Tensor pv = tape.value(pred);
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < pv.data.size(); ++i) {
        const double d = pv.data[i] - s.truth.data[i];
        num += d * d;
        den += s.truth.data[i] * s.truth.data[i];
    }
    ev.nmse_ratio = num / den;

    if (grads) {
        tape.backward(loss);
        grads->clear();
        grads->reserve(params.size());
        for (Var v : gp.vars) grads->push_back(tape.grad(v));
    }
    return ev;
}

} // namespace

TrainResult train(const TrainSet& train_set, const TrainSet& val_set, const PinnConfig& cfg,
                  const TrainHyper& hyper) {
    cfg.validate();
    hyper.validate();
    if (train_set.samples.empty()) throw EmptyDataset("empty training set");

    NamedTensors params = init_params(cfg, hyper.seed);
    const double kappa = kappa_least_squares(train_set, cfg);

    const size_t n_params = params.size();
    std::vector<Tensor> adam_m(n_params), adam_v(n_params);
    for (size_t i = 0; i < n_params; ++i) {
        adam_m[i] = Tensor::zeros(params[i].shape);
        adam_v[i] = Tensor::zeros(params[i].shape);
    }

    Rng rng(hyper.seed ^ 0x5eedf00dULL);
    std::vector<size_t> order(train_set.samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainResult result;
    result.kappa = kappa;
    double best_val = std::numeric_limits<double>::infinity();
    int64_t adam_t = 0;

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        const double lr = hyper.init_lr * std::pow(hyper.gamma, double(epoch / hyper.decay_step));

        // Fisher-Yates shuffle and variant draw, fixed order for determinism
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[size_t(rng.uniform_int(int(i)))]);
        std::vector<size_t> variants(order.size());
        for (size_t i = 0; i < order.size(); ++i) {
            const size_t nv = train_set.samples[order[i]].h_init_variants.size();
            variants[i] = nv > 1 ? size_t(rng.uniform_int(int(nv))) : 0;
        }

        double train_loss = 0.0;
        for (size_t b0 = 0; b0 < order.size(); b0 += size_t(hyper.batch_size)) {
            const size_t bsz = std::min(size_t(hyper.batch_size), order.size() - b0);
            std::vector<std::vector<Tensor>> grads(bsz);
            std::vector<SampleEval> evals(bsz);
            parallel_for(bsz, [&](size_t k) {
                evals[k] = eval_sample(params, cfg, train_set, train_set.samples[order[b0 + k]],
                                       variants[b0 + k], hyper.zeta, kappa, &grads[k]);
            });
            for (size_t k = 0; k < bsz; ++k) {
                if (!std::isfinite(evals[k].loss))
                    throw NonFiniteLoss("epoch " + std::to_string(epoch) + ", sample " +
                                        std::to_string(order[b0 + k]));
                train_loss += evals[k].loss;
            }

            ++adam_t;
            const double bc1 = 1.0 - std::pow(hyper.beta1, double(adam_t));
            const double bc2 = 1.0 - std::pow(hyper.beta2, double(adam_t));
            for (size_t pi = 0; pi < n_params; ++pi) {
                Tensor& m = adam_m[pi];
                Tensor& v = adam_v[pi];
                Tensor& w = params[pi];
                for (size_t e = 0; e < w.data.size(); ++e) {
                    double g = 0.0;
                    for (size_t k = 0; k < bsz; ++k) g += grads[k][pi].data[e];
                    g /= double(bsz);
                    m.data[e] = hyper.beta1 * m.data[e] + (1.0 - hyper.beta1) * g;
                    v.data[e] = hyper.beta2 * v.data[e] + (1.0 - hyper.beta2) * g * g;
                    const double mhat = m.data[e] / bc1;
                    const double vhat = v.data[e] / bc2;
                    w.data[e] -= lr * mhat / (std::sqrt(vhat) + hyper.adam_eps);
                }
            }
        }
        train_loss /= double(order.size());

        double val_loss = train_loss;
        double val_nmse_db_v = 0.0;
        if (!val_set.samples.empty()) {
            std::vector<SampleEval> evals(val_set.samples.size());
            parallel_for(evals.size(), [&](size_t k) {
                evals[k] = eval_sample(params, cfg, val_set, val_set.samples[k], 0, hyper.zeta,
                                       kappa, nullptr);
            });
            double vl = 0.0, ratio = 0.0;
            for (const SampleEval& ev : evals) {
                vl += ev.loss;
                ratio += ev.nmse_ratio;
            }
            val_loss = vl / double(evals.size());
            val_nmse_db_v = 10.0 * std::log10(std::max(ratio / double(evals.size()), 1e-35));
        }
        if (!std::isfinite(val_loss)) throw NonFiniteLoss("validation loss at epoch " +
                                                          std::to_string(epoch));

        result.history.push_back({epoch, train_loss, val_loss, lr, val_nmse_db_v});
        if (val_loss < best_val) {
            best_val = val_loss;
            result.best_epoch = epoch;
            result.params = params;
        }
    }
    if (result.best_epoch < 0) result.params = params;
    return result;
}

Tensor infer(const NamedTensors& params, const PinnConfig& cfg, const Tensor& h_init_norm,
             const Tensor& crop) {
    Tape tape;
    GraphParams gp = bind_params(tape, params, false);
    Var h = tape.constant(h_init_norm);
    Var c = tape.constant(crop);
    Var pred = pinn_forward(cfg, gp, h, c);
    return tape.value(pred);
}

// ---------------------------------------------------------------------------
// plane packing
// ---------------------------------------------------------------------------

Tensor planes_from_channel(const ChannelTensor& h, double scale) {
    Tensor t({2 * h.d, h.nr, h.nt});
    const double inv = 1.0 / scale;
    for (int d = 0; d < h.d; ++d)
        for (int r = 0; r < h.nr; ++r)
            for (int tt = 0; tt < h.nt; ++tt) {
                const cxd v = h.at(d, r, tt);
                t.data[((size_t(2 * d) * h.nr) + r) * size_t(h.nt) + tt] = v.real() * inv;
                t.data[((size_t(2 * d + 1) * h.nr) + r) * size_t(h.nt) + tt] = v.imag() * inv;
            }
    return t;
}

ChannelTensor channel_from_planes(const Tensor& planes, double scale, int step) {
    std::vector<int> s = planes.shape;
    size_t offset = 0;
    int planes2d, nr, nt;
    if (planes.rank() == 4) {
        planes2d = planes.dim(1);
        nr = planes.dim(2);
        nt = planes.dim(3);
        if (step < 0 || step >= planes.dim(0)) throw ShapeMismatch("snapshot index out of range");
        offset = size_t(step) * size_t(planes2d) * nr * nt;
    } else if (planes.rank() == 3) {
        planes2d = planes.dim(0);
        nr = planes.dim(1);
        nt = planes.dim(2);
    } else {
        throw ShapeMismatch("planes tensor must be rank 3 or 4");
    }
    if (planes2d % 2 != 0) throw ShapeMismatch("re/im plane count must be even");
    ChannelTensor h(planes2d / 2, nr, nt);
    for (int d = 0; d < h.d; ++d)
        for (int r = 0; r < nr; ++r)
            for (int t = 0; t < nt; ++t) {
                const double re = planes.data[offset + ((size_t(2 * d) * nr) + r) * size_t(nt) + t];
                const double im =
                    planes.data[offset + ((size_t(2 * d + 1) * nr) + r) * size_t(nt) + t];
                h.at(d, r, t) = cxd(re * scale, im * scale);
            }
    return h;
}

} // namespace mbce
