#ifndef MBCE_FFT_HPP
#define MBCE_FFT_HPP

#include <vector>

#include "mbce/common.hpp"

namespace mbce {

// Unnormalized DFT: X[k] = sum_n x[n] e^{-j 2 pi k n / N}.
// Radix-2 in-place for power-of-two N, direct evaluation otherwise.
void dft(std::vector<cxd>& x, bool inverse);

inline std::vector<cxd> fft_forward(std::vector<cxd> x) {
    dft(x, false);
    return x;
}

// Inverse with 1/N normalization so ifft(fft(x)) == x.
inline std::vector<cxd> fft_inverse(std::vector<cxd> x) {
    dft(x, true);
    const double inv = 1.0 / double(x.size());
    for (auto& v : x) v *= inv;
    return x;
}

// Unitary DFT pair (1/sqrt(N) both ways), the F of the beamspace transform.
std::vector<cxd> unitary_dft(const std::vector<cxd>& x);
std::vector<cxd> unitary_idft(const std::vector<cxd>& x);

} // namespace mbce

#endif
