#ifndef MBCE_ESTIMATORS_HPP
#define MBCE_ESTIMATORS_HPP

#include <vector>

#include "mbce/channel.hpp"
#include "mbce/common.hpp"
#include "mbce/rng.hpp"

namespace mbce {

enum class PilotKind { antenna, subcarrier };

// Uniformly spaced pilot positions, p_i = i * spacing.
struct PilotPattern {
    PilotKind kind = PilotKind::antenna;
    int dim = 0; // Nt for antenna pilots, N_FFT for subcarrier pilots
    int count = 0;
    int spacing = 1;
    std::vector<int> indices;
};

PilotPattern make_pilot_pattern(PilotKind kind, int nt_or_nfft, int count);

// Noisy channel samples at pilot positions.
//   antenna kind:    values[(d * Nr + r) * Np + i]
//   subcarrier kind: values[(r * Nt + t) * Ns + i], frequency-domain samples
struct PilotObservation {
    PilotPattern pattern;
    int d = 0, nr = 0, nt = 0;
    std::vector<cxd> values;
    double noise_var = 0.0;
    bool noise_only_warning = false;

    cxd& ant(int di, int r, int i) { return values[(size_t(di) * nr + r) * pattern.count + i]; }
    const cxd& ant(int di, int r, int i) const {
        return values[(size_t(di) * nr + r) * pattern.count + i];
    }
    cxd& sub(int r, int t, int i) { return values[(size_t(r) * nt + t) * pattern.count + i]; }
    const cxd& sub(int r, int t, int i) const {
        return values[(size_t(r) * nt + t) * pattern.count + i];
    }
};

// Per-sample SNR referenced to mean |h|^2 over the full tensor. Pass
// snr_db = +inf to disable noise. A zero channel sets noise_only_warning and
// falls back to an absolute noise floor.
constexpr double kAbsoluteNoiseFloor = 1e-12;
PilotObservation observe(const ChannelTensor& h, const PilotPattern& pattern, double snr_db,
                         Rng& rng);

// LS at pilot antennas, then linear interpolation of magnitude and unwrapped
// phase across the transmit-antenna axis; edge values held outside the hull.
ChannelTensor ls_interp(const PilotObservation& obs, const ArrayConfig& arr,
                        const WaveformConfig& wf);

// Beamspace thresholding of the pilot subarray: unitary DFT across the pilot
// samples, zero bins below tau = 3 sqrt(sigma_n^2 Np / (2 Nt)), and
// reconstruct all Nt antennas from the kept beams (aliases resolved to the
// lowest spatial frequency).
ChannelTensor ls_dft_denoise(const PilotObservation& obs, const ArrayConfig& arr,
                             const WaveformConfig& wf);

// The pilot samples placed back on the antenna grid with zeros elsewhere;
// the comparison baseline for the beamspace denoiser.
ChannelTensor ls_zero_pad(const PilotObservation& obs, const ArrayConfig& arr);

// Frequency-domain LS per (r, t): interpolate magnitude/unwrapped phase over
// subcarriers, inverse FFT, keep the first D delay taps.
ChannelTensor ls_ofdm(const PilotObservation& obs, const ArrayConfig& arr,
                      const WaveformConfig& wf, int n_fft);

// Simultaneous OMP per delay tap over an oversampled transmit-side steering
// dictionary, joint across receive antennas. support_out, when given,
// receives the selected grid indices per tap.
ChannelTensor somp(const PilotObservation& obs, const ArrayConfig& arr, const WaveformConfig& wf,
                   int grid_size, int max_sparsity,
                   std::vector<std::vector<int>>* support_out = nullptr);

// 10 log10(||est - truth||^2 / ||truth||^2); exact recovery clamps at -350 dB.
double nmse_db(const ChannelTensor& estimate, const ChannelTensor& truth);

// Linear error ratio ||est - truth||^2 / ||truth||^2.
double nmse_linear(const ChannelTensor& estimate, const ChannelTensor& truth);

// Dataset aggregate: dB of the mean linear ratio.
double nmse_db_of_mean(const std::vector<double>& linear_ratios);

} // namespace mbce

#endif
