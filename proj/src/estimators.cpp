#include "mbce/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mbce/fft.hpp"

namespace mbce {

namespace {

// Unwrap in place with a pi jump threshold; exact +/- pi differences are left
// untouched (smaller correction wins).
void unwrap_phases(std::vector<double>& ph) {
    for (size_t i = 1; i < ph.size(); ++i) {
        double delta = ph[i] - ph[i - 1];
        while (delta > kPi + 1e-12) delta -= 2.0 * kPi;
        while (delta < -kPi - 1e-12) delta += 2.0 * kPi;
        ph[i] = ph[i - 1] + delta;
    }
}

// Linear interpolation of (mag, unwrapped phase) samples onto 0..n-1 with
// constant extrapolation beyond the sample hull.
std::vector<cxd> interp_mag_phase(const std::vector<int>& pos, const std::vector<cxd>& vals,
                                  int n) {
    const size_t np = pos.size();
    std::vector<double> mag(np), ph(np);
    for (size_t i = 0; i < np; ++i) {
        mag[i] = std::abs(vals[i]);
        ph[i] = std::arg(vals[i]);
    }
    unwrap_phases(ph);

    std::vector<cxd> out(static_cast<size_t>(n));
    size_t seg = 0;
    for (int k = 0; k < n; ++k) {
        double m, p;
        if (k <= pos.front()) {
            m = mag.front();
            p = ph.front();
        } else if (k >= pos.back()) {
            m = mag.back();
            p = ph.back();
        } else {
            while (pos[seg + 1] < k) ++seg;
            const double t = double(k - pos[seg]) / double(pos[seg + 1] - pos[seg]);
            m = (1.0 - t) * mag[seg] + t * mag[seg + 1];
            p = (1.0 - t) * ph[seg] + t * ph[seg + 1];
        }
        out[size_t(k)] = cxd(m * std::cos(p), m * std::sin(p));
    }
    // keep pilot positions bit-exact LS values
    for (size_t i = 0; i < np; ++i)
        if (pos[i] >= 0 && pos[i] < n) out[size_t(pos[i])] = vals[i];
    return out;
}

void check_antenna(const PilotObservation& obs) {
    if (obs.pattern.kind != PilotKind::antenna)
        throw ShapeMismatch("estimator requires an antenna-kind observation");
}

// Hermitian positive-definite solve via Cholesky, shared by the SOMP refit.
// Throws when the Gram matrix is numerically rank deficient.
std::vector<cxd> solve_gram(std::vector<cxd> g, std::vector<cxd> rhs, int k, int ncols) {
    double max_diag = 0.0;
    for (int i = 0; i < k; ++i) max_diag = std::max(max_diag, g[size_t(i) * k + i].real());
    // L L^H = G
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j <= i; ++j) {
            cxd s = g[size_t(i) * k + j];
            for (int m = 0; m < j; ++m)
                s -= g[size_t(i) * k + m] * std::conj(g[size_t(j) * k + m]);
            if (i == j) {
                const double d = s.real();
                if (d <= 1e-10 * max_diag)
                    throw DictionaryRankDeficient("Gram pivot ratio below 1e-10");
                g[size_t(i) * k + j] = cxd(std::sqrt(d), 0.0);
            } else {
                g[size_t(i) * k + j] = s / g[size_t(j) * k + j];
            }
        }
    }
    // forward/backward substitution per column
    for (int c = 0; c < ncols; ++c) {
        for (int i = 0; i < k; ++i) {
            cxd s = rhs[size_t(i) * ncols + c];
            for (int m = 0; m < i; ++m) s -= g[size_t(i) * k + m] * rhs[size_t(m) * ncols + c];
            rhs[size_t(i) * ncols + c] = s / g[size_t(i) * k + i];
        }
        for (int i = k - 1; i >= 0; --i) {
            cxd s = rhs[size_t(i) * ncols + c];
            for (int m = i + 1; m < k; ++m)
                s -= std::conj(g[size_t(m) * k + i]) * rhs[size_t(m) * ncols + c];
            rhs[size_t(i) * ncols + c] = s / g[size_t(i) * k + i];
        }
    }
    return rhs;
}

} // namespace

PilotPattern make_pilot_pattern(PilotKind kind, int nt_or_nfft, int count) {
    if (count < 1 || count > nt_or_nfft)
        throw CountExceedsDimension("count " + std::to_string(count) + " vs dimension " +
                                    std::to_string(nt_or_nfft));
    PilotPattern p;
    p.kind = kind;
    p.dim = nt_or_nfft;
    p.count = count;
    p.spacing = std::max(1, nt_or_nfft / count);
    p.indices.resize(size_t(count));
    for (int i = 0; i < count; ++i) p.indices[size_t(i)] = i * p.spacing;
    return p;
}

PilotObservation observe(const ChannelTensor& h, const PilotPattern& pattern, double snr_db,
                         Rng& rng) {
    PilotObservation obs;
    obs.pattern = pattern;
    obs.d = h.d;
    obs.nr = h.nr;
    obs.nt = h.nt;

    double sig = 0.0;
    for (const cxd& v : h.data) sig += std::norm(v);
    sig /= double(h.size());

    const bool noiseless = std::isinf(snr_db) && snr_db > 0.0;
    if (!noiseless) {
        if (sig <= 0.0) {
            obs.noise_only_warning = true;
            obs.noise_var = kAbsoluteNoiseFloor;
        } else {
            obs.noise_var = sig * std::pow(10.0, -snr_db / 10.0);
        }
    }

    if (pattern.kind == PilotKind::antenna) {
        if (pattern.dim != h.nt) throw ShapeMismatch("pattern dim != Nt");
        obs.values.resize(size_t(h.d) * h.nr * pattern.count);
        for (int d = 0; d < h.d; ++d)
            for (int r = 0; r < h.nr; ++r)
                for (int i = 0; i < pattern.count; ++i) {
                    cxd v = h.at(d, r, pattern.indices[size_t(i)]);
                    if (obs.noise_var > 0.0) v += rng.complex_normal(obs.noise_var);
                    obs.ant(d, r, i) = v;
                }
    } else {
        const int n_fft = pattern.dim;
        if (n_fft < h.d) throw ShapeMismatch("n_fft < D");
        obs.values.resize(size_t(h.nr) * h.nt * pattern.count);
        std::vector<cxd> taps(static_cast<size_t>(n_fft));
        for (int r = 0; r < h.nr; ++r)
            for (int t = 0; t < h.nt; ++t) {
                std::fill(taps.begin(), taps.end(), cxd(0.0, 0.0));
                for (int d = 0; d < h.d; ++d) taps[size_t(d)] = h.at(d, r, t);
                const std::vector<cxd> freq = fft_forward(taps);
                for (int i = 0; i < pattern.count; ++i) {
                    cxd v = freq[size_t(pattern.indices[size_t(i)])];
                    if (obs.noise_var > 0.0) v += rng.complex_normal(obs.noise_var);
                    obs.sub(r, t, i) = v;
                }
            }
    }
    return obs;
}

ChannelTensor ls_interp(const PilotObservation& obs, const ArrayConfig& arr,
                        const WaveformConfig& wf) {
    check_antenna(obs);
    ChannelTensor out(wf.num_taps, arr.nr(), arr.nt());
    if (out.d != obs.d || out.nr != obs.nr || out.nt != obs.nt)
        throw ShapeMismatch("observation/config dims disagree");
    std::vector<cxd> vals(static_cast<size_t>(obs.pattern.count));
    for (int d = 0; d < out.d; ++d)
        for (int r = 0; r < out.nr; ++r) {
            for (int i = 0; i < obs.pattern.count; ++i) vals[size_t(i)] = obs.ant(d, r, i);
            const std::vector<cxd> row = interp_mag_phase(obs.pattern.indices, vals, out.nt);
            for (int t = 0; t < out.nt; ++t) out.at(d, r, t) = row[size_t(t)];
        }
    return out;
}

ChannelTensor ls_zero_pad(const PilotObservation& obs, const ArrayConfig& arr) {
    check_antenna(obs);
    ChannelTensor out(obs.d, arr.nr(), arr.nt());
    for (int d = 0; d < out.d; ++d)
        for (int r = 0; r < out.nr; ++r)
            for (int i = 0; i < obs.pattern.count; ++i)
                out.at(d, r, obs.pattern.indices[size_t(i)]) = obs.ant(d, r, i);
    return out;
}

ChannelTensor ls_dft_denoise(const PilotObservation& obs, const ArrayConfig& arr,
                             const WaveformConfig& wf) {
    check_antenna(obs);
    const int nt = arr.nt();
    const int np = obs.pattern.count;
    const int spacing = obs.pattern.spacing;
    const double tau = 3.0 * std::sqrt(obs.noise_var * double(np) / (2.0 * double(nt)));
    // tau is calibrated against the Nt-point beamspace of the zero-padded
    // estimate; the compact Np-point beamspace used here carries the same
    // bins scaled by sqrt(Np/Nt), so the equivalent cut is tau sqrt(Nt/Np)
    const double tau_c = tau * std::sqrt(double(nt) / double(np));

    ChannelTensor out(wf.num_taps, arr.nr(), nt);
    if (out.d != obs.d || out.nr != obs.nr) throw ShapeMismatch("observation/config dims disagree");

    std::vector<cxd> pil(static_cast<size_t>(np));
    for (int d = 0; d < out.d; ++d)
        for (int r = 0; r < out.nr; ++r) {
            for (int i = 0; i < np; ++i) pil[size_t(i)] = obs.ant(d, r, i);
            std::vector<cxd> beam = unitary_dft(pil);
            for (auto& b : beam)
                if (std::abs(b) < tau_c) b = cxd(0.0, 0.0);
            if (spacing == 1 && np == nt) {
                // full sounding: reconstruction is the plain inverse transform
                const std::vector<cxd> row = unitary_idft(beam);
                for (int t = 0; t < nt; ++t) out.at(d, r, t) = row[size_t(t)];
                continue;
            }
            // Rebuild the full aperture from the kept beams. Coarse bin k of
            // the pilot subarray maps to normalized spatial frequency
            // k / (Np * spacing) cycles per element, aliases resolved toward
            // the lowest |frequency|.
            const double scale = 1.0 / std::sqrt(double(np));
            for (int t = 0; t < nt; ++t) {
                cxd acc(0.0, 0.0);
                for (int k = 0; k < np; ++k) {
                    if (beam[size_t(k)] == cxd(0.0, 0.0)) continue;
                    const int kc = (k <= np / 2) ? k : k - np;
                    const double ang = 2.0 * kPi * double(kc) * double(t) /
                                       (double(np) * double(spacing));
                    acc += beam[size_t(k)] * cxd(std::cos(ang), std::sin(ang));
                }
                out.at(d, r, t) = acc * scale;
            }
        }
    return out;
}

ChannelTensor ls_ofdm(const PilotObservation& obs, const ArrayConfig& arr,
                      const WaveformConfig& wf, int n_fft) {
    if (obs.pattern.kind != PilotKind::subcarrier)
        throw ShapeMismatch("ls_ofdm requires a subcarrier-kind observation");
    if (obs.pattern.count < 2) throw InsufficientPilots("need at least 2 pilot subcarriers");
    if (n_fft < wf.num_taps) throw ShapeMismatch("n_fft < D");
    if (obs.pattern.dim != n_fft) throw ShapeMismatch("pattern dim != n_fft");

    ChannelTensor out(wf.num_taps, arr.nr(), arr.nt());
    if (out.nr != obs.nr || out.nt != obs.nt) throw ShapeMismatch("observation/config dims disagree");

    std::vector<cxd> vals(static_cast<size_t>(obs.pattern.count));
    for (int r = 0; r < out.nr; ++r)
        for (int t = 0; t < out.nt; ++t) {
            for (int i = 0; i < obs.pattern.count; ++i) vals[size_t(i)] = obs.sub(r, t, i);
            std::vector<cxd> freq = interp_mag_phase(obs.pattern.indices, vals, n_fft);
            const std::vector<cxd> taps = fft_inverse(std::move(freq));
            for (int d = 0; d < out.d; ++d) out.at(d, r, t) = taps[size_t(d)];
        }
    return out;
}

ChannelTensor somp(const PilotObservation& obs, const ArrayConfig& arr, const WaveformConfig& wf,
                   int grid_size, int max_sparsity,
                   std::vector<std::vector<int>>* support_out) {
    check_antenna(obs);
    if (support_out) support_out->clear();
    const int nt = arr.nt();
    const int nr = arr.nr();
    const int np = obs.pattern.count;
    if (grid_size < nt) throw ValidationError("grid_size must be >= Nt");

    // dictionary atoms at pilot rows and on the full aperture
    std::vector<cxd> dict_pil(size_t(np) * grid_size);
    std::vector<cxd> dict_full(size_t(nt) * grid_size);
    for (int g = 0; g < grid_size; ++g) {
        const double theta = -1.0 + 2.0 * double(g) / double(grid_size);
        for (int i = 0; i < np; ++i) {
            const double ang = -kPi * double(obs.pattern.indices[size_t(i)]) * theta;
            dict_pil[size_t(i) * grid_size + g] = cxd(std::cos(ang), std::sin(ang));
        }
        for (int t = 0; t < nt; ++t) {
            const double ang = -kPi * double(t) * theta;
            dict_full[size_t(t) * grid_size + g] = cxd(std::cos(ang), std::sin(ang));
        }
    }

    const double stop_resid = std::sqrt(obs.noise_var) * std::sqrt(double(np) * nr);

    ChannelTensor out(wf.num_taps, nr, nt);
    if (out.d != obs.d || out.nr != obs.nr) throw ShapeMismatch("observation/config dims disagree");

    std::vector<cxd> resid(size_t(np) * nr);
    for (int d = 0; d < out.d; ++d) {
        for (int i = 0; i < np; ++i)
            for (int r = 0; r < nr; ++r) resid[size_t(i) * nr + r] = obs.ant(d, r, i);

        std::vector<int> support;
        std::vector<cxd> coeff; // [k, nr]
        for (int it = 0; it < max_sparsity; ++it) {
            double rn = 0.0;
            for (const cxd& v : resid) rn += std::norm(v);
            if (std::sqrt(rn) <= stop_resid) break;

            // joint correlation, l1 across receive antennas
            int best = -1;
            double best_score = -1.0;
            for (int g = 0; g < grid_size; ++g) {
                if (std::find(support.begin(), support.end(), g) != support.end()) continue;
                double score = 0.0;
                for (int r = 0; r < nr; ++r) {
                    cxd c(0.0, 0.0);
                    for (int i = 0; i < np; ++i)
                        c += std::conj(dict_pil[size_t(i) * grid_size + g]) *
                             resid[size_t(i) * nr + r];
                    score += std::abs(c);
                }
                if (score > best_score + 1e-15) {
                    best_score = score;
                    best = g;
                }
            }
            if (best < 0) break;
            support.push_back(best);

            const int k = int(support.size());
            std::vector<cxd> gram(size_t(k) * k);
            std::vector<cxd> rhs(size_t(k) * nr);
            for (int a = 0; a < k; ++a) {
                for (int b = 0; b < k; ++b) {
                    cxd s(0.0, 0.0);
                    for (int i = 0; i < np; ++i)
                        s += std::conj(dict_pil[size_t(i) * grid_size + support[size_t(a)]]) *
                             dict_pil[size_t(i) * grid_size + support[size_t(b)]];
                    gram[size_t(a) * k + b] = s;
                }
                for (int r = 0; r < nr; ++r) {
                    cxd s(0.0, 0.0);
                    for (int i = 0; i < np; ++i)
                        s += std::conj(dict_pil[size_t(i) * grid_size + support[size_t(a)]]) *
                             obs.ant(d, r, i);
                    rhs[size_t(a) * nr + r] = s;
                }
            }
            coeff = solve_gram(std::move(gram), std::move(rhs), k, nr);

            for (int i = 0; i < np; ++i)
                for (int r = 0; r < nr; ++r) {
                    cxd fit(0.0, 0.0);
                    for (int a = 0; a < k; ++a)
                        fit += dict_pil[size_t(i) * grid_size + support[size_t(a)]] *
                               coeff[size_t(a) * nr + r];
                    resid[size_t(i) * nr + r] = obs.ant(d, r, i) - fit;
                }
        }

        if (support_out) support_out->push_back(support);
        for (size_t a = 0; a < support.size(); ++a)
            for (int r = 0; r < nr; ++r)
                for (int t = 0; t < nt; ++t)
                    out.at(d, r, t) += dict_full[size_t(t) * grid_size + support[a]] *
                                       coeff[a * size_t(nr) + r];
    }
    return out;
}

double nmse_linear(const ChannelTensor& estimate, const ChannelTensor& truth) {
    if (!estimate.same_shape(truth)) throw ShapeMismatch("nmse shapes disagree");
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < truth.size(); ++i) {
        num += std::norm(estimate.data[i] - truth.data[i]);
        den += std::norm(truth.data[i]);
    }
    if (den <= 0.0) throw ZeroReference("truth tensor has zero norm");
    return num / den;
}

double nmse_db(const ChannelTensor& estimate, const ChannelTensor& truth) {
    const double r = nmse_linear(estimate, truth);
    if (r <= 0.0) return -350.0;
    return std::max(10.0 * std::log10(r), -350.0);
}

double nmse_db_of_mean(const std::vector<double>& linear_ratios) {
    if (linear_ratios.empty()) throw ValidationError("empty ratio list");
    double s = 0.0;
    for (double v : linear_ratios) s += v;
    s /= double(linear_ratios.size());
    if (s <= 0.0) return -350.0;
    return std::max(10.0 * std::log10(s), -350.0);
}

} // namespace mbce
