#include "mbce/channel.hpp"

#include <cmath>

namespace mbce {

std::vector<cxd> steering_vector(double theta, int n) {
    std::vector<cxd> v(static_cast<size_t>(n));
    for (int k = 0; k < n; ++k) {
        const double ang = -kPi * double(k) * theta;
        v[size_t(k)] = cxd(std::cos(ang), std::sin(ang));
    }
    return v;
}

std::vector<cxd> array_response(double az, double el, int nx, int ny) {
    const double th_par = std::cos(el) * std::sin(az);
    const double th_perp = std::sin(el);
    const std::vector<cxd> ax = steering_vector(th_par, nx);
    const std::vector<cxd> ay = steering_vector(th_perp, ny);
    std::vector<cxd> out(size_t(nx) * ny);
    for (int i = 0; i < nx; ++i)
        for (int j = 0; j < ny; ++j) out[size_t(i) * ny + j] = ax[size_t(i)] * ay[size_t(j)];
    return out;
}

double raised_cosine(double t, double rolloff, double ts) {
    const double x = t / ts;
    const double sinc = (x == 0.0) ? 1.0 : std::sin(kPi * x) / (kPi * x);
    if (rolloff == 0.0) return sinc;
    const double bx = 2.0 * rolloff * x;
    const double denom = 1.0 - bx * bx;
    if (std::abs(denom) < 1e-10) {
        // |t| = ts/(2 beta): analytic limit pi/4 * sinc(1/(2 beta)).
        const double u = 1.0 / (2.0 * rolloff);
        const double s = std::sin(kPi * u) / (kPi * u);
        return kPi / 4.0 * s;
    }
    return sinc * std::cos(kPi * rolloff * x) / denom;
}

ChannelTensor synthesize_channel(const PathSet& paths, const ArrayConfig& arr,
                                 const WaveformConfig& wf) {
    const int d_taps = wf.num_taps;
    const int nr = arr.nr();
    const int nt = arr.nt();
    const double ts = wf.sample_interval_s;
    const double margin = 4.0 * ts;

    ChannelTensor h(d_taps, nr, nt);
    for (const Path& p : paths) {
        const double shifted = p.delay_s - wf.clock_offset_s;
        if (shifted < -margin || shifted > double(d_taps - 1) * ts + margin)
            throw PathDelayOutOfRange("shifted delay " + std::to_string(shifted) +
                                      " s outside tap window of " + std::to_string(d_taps) +
                                      " taps at Ts=" + std::to_string(ts));
        const std::vector<cxd> ar = array_response(p.aoa_az, p.aoa_el, arr.nr_x, arr.nr_y);
        const std::vector<cxd> at = array_response(p.aod_az, p.aod_el, arr.nt_x, arr.nt_y);
        for (int d = 0; d < d_taps; ++d) {
            const double pulse = raised_cosine(double(d) * ts - shifted, wf.rolloff, ts);
            if (pulse == 0.0) continue;
            const cxd c = p.gain * pulse;
            for (int r = 0; r < nr; ++r) {
                const cxd cr = c * ar[size_t(r)];
                cxd* row = &h.at(d, r, 0);
                for (int t = 0; t < nt; ++t) row[t] += cr * at[size_t(t)];
            }
        }
    }
    return h;
}

double channel_power(const ChannelTensor& h, double tx_power_w) {
    double acc = 0.0;
    for (const cxd& v : h.data) acc += std::norm(v);
    return tx_power_w * acc;
}

cxd gain_from_field(double field_mag, double tx_power_w, double phase) {
    if (tx_power_w <= 0.0) throw NonPositivePower("tx_power_w must be > 0");
    const double mag = 0.5 * std::sqrt(kFreeSpaceImpedance) * field_mag / std::sqrt(tx_power_w);
    return cxd(mag * std::cos(phase), mag * std::sin(phase));
}

cxd field_from_gain(cxd gain, double tx_power_w) {
    if (tx_power_w <= 0.0) throw NonPositivePower("tx_power_w must be > 0");
    return gain * (2.0 * std::sqrt(tx_power_w) / std::sqrt(kFreeSpaceImpedance));
}

} // namespace mbce
