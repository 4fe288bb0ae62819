#ifndef MBCE_CHANNEL_HPP
#define MBCE_CHANNEL_HPP

#include <vector>

#include "mbce/common.hpp"

namespace mbce {

// Uniform rectangular arrays at both ends, half-wavelength element spacing.
struct ArrayConfig {
    int nt_x = 1;
    int nt_y = 1;
    int nr_x = 1;
    int nr_y = 1;

    int nt() const { return nt_x * nt_y; }
    int nr() const { return nr_x * nr_y; }
};

// One multipath component: complex gain, time of arrival, and the
// departure/arrival directions in the global frame (radians).
struct Path {
    cxd gain{0.0, 0.0};
    double delay_s = 0.0;
    double aoa_az = 0.0;
    double aoa_el = 0.0;
    double aod_az = 0.0;
    double aod_el = 0.0;
};

using PathSet = std::vector<Path>;

struct WaveformConfig {
    double sample_interval_s = 50e-9;
    double clock_offset_s = 0.0;
    double rolloff = 0.4;
    int num_taps = 4;
    double carrier_hz = 15e9;
    double tx_power_w = 100.0; // 50 dBm

    double wavelength_m() const { return kSpeedOfLight / carrier_hz; }
};

// Complex wideband channel, row-major [D, Nr, Nt].
struct ChannelTensor {
    int d = 0;
    int nr = 0;
    int nt = 0;
    std::vector<cxd> data;

    ChannelTensor() = default;
    ChannelTensor(int d_, int nr_, int nt_)
        : d(d_), nr(nr_), nt(nt_), data(size_t(d_) * nr_ * nt_, cxd(0.0, 0.0)) {}

    cxd& at(int di, int r, int t) { return data[(size_t(di) * nr + r) * nt + t]; }
    const cxd& at(int di, int r, int t) const { return data[(size_t(di) * nr + r) * nt + t]; }
    size_t size() const { return data.size(); }

    bool same_shape(const ChannelTensor& o) const {
        return d == o.d && nr == o.nr && nt == o.nt;
    }
};

// [a(v)]_k = e^{-j pi (k-1) v}, k = 1..n. Unit-modulus entries, unnormalized.
std::vector<cxd> steering_vector(double theta, int n);

// URA response a(cos(el)sin(az)) kron a(sin(el)), length nx*ny.
std::vector<cxd> array_response(double az, double el, int nx, int ny);

// Raised-cosine impulse response at time t for symbol interval ts.
double raised_cosine(double t, double rolloff, double ts);

// H_d = sum_l gain_l f_p(d Ts - (t_l - t_off)) a_r a_t^T, d = 0..D-1.
// Throws PathDelayOutOfRange if a shifted delay falls more than 4 Ts outside
// the tap window [0, (D-1) Ts].
ChannelTensor synthesize_channel(const PathSet& paths, const ArrayConfig& arr,
                                 const WaveformConfig& wf);

// P_T * sum_d ||H_d||_F^2.
double channel_power(const ChannelTensor& h, double tx_power_w);

// alpha = (sqrt(eta0)/2) (||E|| / sqrt(P_T)) e^{j psi}.
cxd gain_from_field(double field_mag, double tx_power_w, double phase);

// Inverse of gain_from_field: the field phasor a path gain corresponds to.
cxd field_from_gain(cxd gain, double tx_power_w);

} // namespace mbce

#endif
