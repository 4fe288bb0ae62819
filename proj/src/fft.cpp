#include "mbce/fft.hpp"

#include <cmath>

namespace mbce {

namespace {

bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft_radix2(std::vector<cxd>& x, bool inverse) {
    const size_t n = x.size();
    // bit-reversal permutation
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(x[i], x[j]);
    }
    // twiddles evaluated directly per index: slower than the incremental
    // recurrence but keeps round-trip error near machine epsilon
    std::vector<cxd> tw(n / 2);
    const double base = (inverse ? 2.0 : -2.0) * kPi / double(n);
    for (size_t k = 0; k < n / 2; ++k)
        tw[k] = cxd(std::cos(base * double(k)), std::sin(base * double(k)));
    for (size_t len = 2; len <= n; len <<= 1) {
        const size_t stride = n / len;
        for (size_t i = 0; i < n; i += len) {
            for (size_t k = 0; k < len / 2; ++k) {
                const cxd w = tw[k * stride];
                cxd u = x[i + k];
                cxd v = x[i + k + len / 2] * w;
                x[i + k] = u + v;
                x[i + k + len / 2] = u - v;
            }
        }
    }
}

void dft_naive(std::vector<cxd>& x, bool inverse) {
    const size_t n = x.size();
    std::vector<cxd> out(n, cxd(0.0, 0.0));
    const double sgn = inverse ? 2.0 : -2.0;
    for (size_t k = 0; k < n; ++k) {
        for (size_t m = 0; m < n; ++m) {
            const double ang = sgn * kPi * double(k) * double(m) / double(n);
            out[k] += x[m] * cxd(std::cos(ang), std::sin(ang));
        }
    }
    x = std::move(out);
}

} // namespace

void dft(std::vector<cxd>& x, bool inverse) {
    if (x.size() <= 1) return;
    if (is_pow2(x.size()))
        fft_radix2(x, inverse);
    else
        dft_naive(x, inverse);
}

std::vector<cxd> unitary_dft(const std::vector<cxd>& x) {
    std::vector<cxd> y = x;
    dft(y, false);
    const double s = 1.0 / std::sqrt(double(x.size()));
    for (auto& v : y) v *= s;
    return y;
}

std::vector<cxd> unitary_idft(const std::vector<cxd>& x) {
    std::vector<cxd> y = x;
    dft(y, true);
    const double s = 1.0 / std::sqrt(double(x.size()));
    for (auto& v : y) v *= s;
    return y;
}

} // namespace mbce
