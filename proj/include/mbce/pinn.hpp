#ifndef MBCE_PINN_HPP
#define MBCE_PINN_HPP

#include <array>
#include <string>
#include <vector>

#include "mbce/channel.hpp"
#include "mbce/checkpoint.hpp"
#include "mbce/rng.hpp"
#include "mbce/tape.hpp"

namespace mbce {

// Refinement network scale. The deepest encoder width doubles as the latent
// token width, so base_channels[2] must equal latent_dim.
struct PinnConfig {
    int d_taps = 4;
    int nr = 4;
    int nt = 64;
    std::array<int, 3> base_channels{16, 32, 64};
    int latent_dim = 64; // D_z
    int transformer_blocks = 2;
    int num_heads = 4;
    int crop_px = 12;
    int multi_step = 1; // L prediction heads
    double zeta = 0.01;

    int in_channels() const { return 2 * d_taps; }
    int out_channels() const { return in_channels() * multi_step; }
    // spatial dims are zero-padded to the next multiple of 8 ahead of the
    // three stride-2 stages and cropped back after the decoder
    int pad_h() const { return ((nr + 7) / 8) * 8; }
    int pad_w() const { return ((nt + 7) / 8) * 8; }
    int deep_h() const { return pad_h() / 8; }
    int deep_w() const { return pad_w() / 8; }
    int token_count() const { return deep_h() * deep_w(); }

    void validate() const;

    static PinnConfig desk();       // CI scale
    static PinnConfig paper();      // table scale (32x4x576 input)
    static PinnConfig gradcheck();  // tiny scale for finite differences

    std::string to_json() const;
    static PinnConfig from_json(const std::string& text);
};

// Seeded fan-in uniform initialization; names and creation order are fixed so
// identical seeds give identical parameter sets.
NamedTensors init_params(const PinnConfig& cfg, uint64_t seed);

// Parameters bound onto a tape as leaves.
struct GraphParams {
    ad::Tape* tape = nullptr;
    const NamedTensors* names = nullptr;
    std::vector<ad::Var> vars;
    ad::Var at(const std::string& name) const;
};
GraphParams bind_params(ad::Tape& tape, const NamedTensors& params, bool requires_grad);

struct EncoderOut {
    ad::Var deep;  // [c3, H/8, W/8]
    ad::Var skip1; // [c1, H/2, W/2]
    ad::Var skip2; // [c2, H/4, W/4]
};

// h_init as stacked re/im planes [2D, Nr, Nt].
EncoderOut encode_channel(const PinnConfig& cfg, const GraphParams& p, ad::Var h_planes);

// crop [1, px, px] -> feature vector [D_z].
ad::Var encode_rss(const PinnConfig& cfg, const GraphParams& p, ad::Var crop);

// Multi-head attention over token matrices [Tq, D] x [Tk, D]; scale_factor
// multiplies Q K^T before the softmax.
ad::Var multi_head_attention(ad::Var q_in, ad::Var k_in, ad::Var v_in, int heads,
                             double scale_factor);

// Channel tokens query the RSS tokens; multi-head softmax(Q K^T / sqrt(D_z)) V
// with the result residual-added to the channel tokens.
ad::Var cross_attention(const PinnConfig& cfg, const GraphParams& p, ad::Var tokens,
                        ad::Var rss_vec);

// Pre-norm self-attention + feed-forward blocks over the token sequence.
ad::Var transformer_latent(const PinnConfig& cfg, const GraphParams& p, ad::Var tokens);

// Mirrored upsampling blocks with skip concatenation; the final block emits
// 2D*L channels reshaped to [L, 2D, Nr, Nt].
ad::Var decode(const PinnConfig& cfg, const GraphParams& p, ad::Var latent_feat,
               const EncoderOut& enc);

// Full forward pass: [L, 2D, Nr, Nt].
ad::Var pinn_forward(const PinnConfig& cfg, const GraphParams& p, ad::Var h_planes, ad::Var crop);

// --- losses ---------------------------------------------------------------

struct PhysicsCalib {
    double kappa = 1.0;      // least-squares ratio P_em / P_chan, frozen per dataset
    double power_norm = 1.0; // dataset-global power normalization constant
};

// Mean over snapshots of NMSE + zeta * (P_em_norm - kappa * P_chan_norm)^2.
// pred/truth are [L, 2D, Nr, Nt] re/im planes in physical units;
// rss_power_w holds one received power per snapshot.
double loss_total(const ad::Tensor& pred, const ad::Tensor& truth,
                  const std::vector<double>& rss_power_w, const WaveformConfig& wf, double zeta,
                  const PhysicsCalib& calib);

// Same formula recorded on the tape. channel_scale de-normalizes network
// outputs (physical = channel_scale * normalized); rss_power_norm is already
// divided by power_norm.
ad::Var loss_total_node(const PinnConfig& cfg, ad::Var pred_norm, const ad::Tensor& truth_norm,
                        const std::vector<double>& rss_power_norm, double tx_power_w,
                        double channel_scale, double power_norm, double zeta, double kappa);

// --- training ---------------------------------------------------------------

struct TrainHyper {
    int batch_size = 32;
    int epochs = 50;
    double init_lr = 1e-3;
    int decay_step = 40;
    double gamma = 0.65;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double zeta = 0.01;
    uint64_t seed = 1;

    void validate() const;
};

struct TrainSample {
    std::vector<ad::Tensor> h_init_variants; // normalized [2D, Nr, Nt]; one is drawn per epoch
    ad::Tensor truth;                        // normalized [L, 2D, Nr, Nt]
    ad::Tensor crop;                         // [1, px, px]
    std::vector<double> rss_power_norm;      // [L], divided by power_norm
};

struct TrainSet {
    std::vector<TrainSample> samples;
    double channel_scale = 1.0; // dataset-global max |h|
    double power_norm = 1.0;    // dataset-global max rss power (W)
    double tx_power_w = 1.0;
};

struct HistoryRow {
    int epoch;
    double train_loss;
    double val_loss;
    double lr;
    double val_nmse_db;
};

struct TrainResult {
    NamedTensors params; // best-validation checkpoint
    std::vector<HistoryRow> history;
    double kappa = 1.0;
    int best_epoch = -1;
};

TrainResult train(const TrainSet& train_set, const TrainSet& val_set, const PinnConfig& cfg,
                  const TrainHyper& hyper);

// Forward-only refinement, normalized in / normalized out.
ad::Tensor infer(const NamedTensors& params, const PinnConfig& cfg, const ad::Tensor& h_init_norm,
                 const ad::Tensor& crop);

// --- plane packing -----------------------------------------------------------

// [2D, Nr, Nt] re/im planes scaled by 1/scale.
ad::Tensor planes_from_channel(const ChannelTensor& h, double scale);
// Snapshot `step` of [L, 2D, Nr, Nt] (or a [2D, Nr, Nt] tensor) times scale.
ChannelTensor channel_from_planes(const ad::Tensor& planes, double scale, int step = 0);

} // namespace mbce

#endif
