#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mbce/channel.hpp"
#include "test_util.hpp"

using namespace mbce;

TEST_CASE("steering vector basics") {
    auto v = steering_vector(0.0, 4);
    for (const cxd& e : v) CHECK(std::abs(e - cxd(1, 0)) < 1e-15);

    v = steering_vector(1.0, 2);
    CHECK(std::abs(v[0] - cxd(1, 0)) < 1e-15);
    CHECK(std::abs(v[1] - cxd(-1, 0)) < 1e-12);
}

TEST_CASE("steering vector matches element-wise exponential oracle") {
    const auto v = steering_vector(0.3, 8);
    for (int k = 0; k < 8; ++k) {
        const cxd expect = std::exp(cxd(0.0, -kPi * k * 0.3));
        CHECK(std::abs(v[size_t(k)] - expect) < 1e-12);
    }
}

TEST_CASE("steering vector entries are unit modulus and norm^2 = n") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const double theta = rng.uniform(-2.0, 2.0);
        const int n = 1 + rng.uniform_int(16);
        const auto v = steering_vector(theta, n);
        double norm2 = 0.0;
        for (const cxd& e : v) {
            CHECK(std::abs(std::abs(e) - 1.0) < 1e-14);
            norm2 += std::norm(e);
        }
        CHECK(norm2 == doctest::Approx(double(n)).epsilon(1e-14));
    }
}

TEST_CASE("array response basics and Kronecker oracle") {
    auto v = array_response(0.0, 0.0, 2, 2);
    for (const cxd& e : v) CHECK(std::abs(e - cxd(1, 0)) < 1e-15);

    v = array_response(kPi / 2, 0.0, 2, 1);
    const auto s = steering_vector(1.0, 2);
    CHECK(std::abs(v[0] - s[0]) < 1e-12);
    CHECK(std::abs(v[1] - s[1]) < 1e-12);

    // explicit 6-entry Kronecker product
    const double az = 0.4, el = 0.2;
    v = array_response(az, el, 3, 2);
    const double tpp = std::cos(el) * std::sin(az);
    const double tp = std::sin(el);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) {
            const cxd expect = std::exp(cxd(0, -kPi * i * tpp)) * std::exp(cxd(0, -kPi * j * tp));
            CHECK(std::abs(v[size_t(i * 2 + j)] - expect) < 1e-12);
        }
}

TEST_CASE("array response degenerates to a steering vector when ny = 1") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const double az = rng.uniform(-kPi, kPi);
        const double el = rng.uniform(-kPi / 2, kPi / 2);
        const int nx = 1 + rng.uniform_int(8);
        const auto a = array_response(az, el, nx, 1);
        const auto s = steering_vector(std::cos(el) * std::sin(az), nx);
        for (int i = 0; i < nx; ++i) CHECK(std::abs(a[size_t(i)] - s[size_t(i)]) < 1e-13);
    }
}

TEST_CASE("raised cosine pulse") {
    CHECK(raised_cosine(0.0, 0.4, 1.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::abs(raised_cosine(3.0, 0.4, 1.0)) < 1e-12);
    CHECK(std::abs(raised_cosine(-2.0, 0.4, 1.0)) < 1e-12);

    // the beta |t| = ts/2 singularity: analytic limit pi/4 sinc(1/(2 beta))
    const double beta = 0.4;
    const double u = 1.0 / (2.0 * beta);
    const double limit = kPi / 4.0 * std::sin(kPi * u) / (kPi * u);
    CHECK(raised_cosine(1.25, beta, 1.0) == doctest::Approx(limit).epsilon(1e-12));
    // continuity across the singular point
    CHECK(raised_cosine(1.25 + 1e-8, beta, 1.0) == doctest::Approx(limit).epsilon(1e-5));
    CHECK(raised_cosine(1.25 - 1e-8, beta, 1.0) == doctest::Approx(limit).epsilon(1e-5));

    // beta = 0 falls back to a plain sinc
    CHECK(raised_cosine(0.5, 0.0, 1.0) ==
          doctest::Approx(std::sin(kPi * 0.5) / (kPi * 0.5)).epsilon(1e-14));
}

TEST_CASE("synthesize_channel: single peak path") {
    ArrayConfig arr{2, 2, 2, 1};
    WaveformConfig wf;
    wf.num_taps = 4;
    wf.clock_offset_s = 1e-7;
    Path p;
    p.gain = cxd(1, 0);
    p.delay_s = wf.clock_offset_s;
    const ChannelTensor h = synthesize_channel({p}, arr, wf);
    for (int r = 0; r < 2; ++r)
        for (int t = 0; t < 4; ++t) CHECK(std::abs(h.at(0, r, t) - cxd(1, 0)) < 1e-12);
    for (int d = 1; d < 4; ++d)
        for (int r = 0; r < 2; ++r)
            for (int t = 0; t < 4; ++t) CHECK(std::abs(h.at(d, r, t)) < 1e-12);
}

TEST_CASE("synthesize_channel: empty path set gives zeros") {
    const ChannelTensor h = synthesize_channel({}, {2, 2, 1, 2}, {});
    for (const cxd& v : h.data) CHECK(v == cxd(0, 0));
}

TEST_CASE("synthesize_channel matches the triple-loop oracle") {
    Rng rng(42);
    ArrayConfig arr{4, 2, 2, 1};
    WaveformConfig wf;
    wf.num_taps = 4;
    PathSet paths;
    for (int i = 0; i < 3; ++i)
        paths.push_back(test::random_path(rng, 3.0 * wf.sample_interval_s));
    const ChannelTensor h = synthesize_channel(paths, arr, wf);
    const ChannelTensor ref = test::synth_oracle(paths, arr, wf);
    CHECK(test::rel_frob_err(h, ref) < 1e-10);
}

TEST_CASE("synthesize_channel rejects out-of-window delays") {
    WaveformConfig wf;
    wf.num_taps = 4;
    Path p;
    p.gain = cxd(1, 0);
    p.delay_s = 20.0 * wf.sample_interval_s; // far beyond D + margin
    CHECK_THROWS_AS(synthesize_channel({p}, {2, 1, 1, 1}, wf), PathDelayOutOfRange);
    p.delay_s = -5.0 * wf.sample_interval_s;
    CHECK_THROWS_AS(synthesize_channel({p}, {2, 1, 1, 1}, wf), PathDelayOutOfRange);
    // within the 4 Ts tail margin is allowed
    p.delay_s = -3.5 * wf.sample_interval_s;
    CHECK_NOTHROW(synthesize_channel({p}, {2, 1, 1, 1}, wf));
}

TEST_CASE("synthesize_channel is linear in the path list") {
    Rng rng(7);
    ArrayConfig arr{2, 2, 2, 2};
    WaveformConfig wf;
    wf.num_taps = 4;
    PathSet a, b, both;
    for (int i = 0; i < 2; ++i) a.push_back(test::random_path(rng, 2e-7));
    for (int i = 0; i < 3; ++i) b.push_back(test::random_path(rng, 2e-7));
    both = a;
    both.insert(both.end(), b.begin(), b.end());
    const ChannelTensor ha = synthesize_channel(a, arr, wf);
    const ChannelTensor hb = synthesize_channel(b, arr, wf);
    const ChannelTensor hab = synthesize_channel(both, arr, wf);
    for (size_t i = 0; i < hab.size(); ++i)
        CHECK(std::abs(hab.data[i] - (ha.data[i] + hb.data[i])) < 1e-12);
}

TEST_CASE("conjugating all gains conjugates the channel") {
    Rng rng(9);
    ArrayConfig arr{2, 1, 2, 1};
    WaveformConfig wf;
    wf.num_taps = 3;
    PathSet paths;
    for (int i = 0; i < 3; ++i) {
        Path p = test::random_path(rng, 1e-7);
        // zero angles so the steering factors are real and only the gain
        // carries phase
        p.aoa_az = p.aoa_el = p.aod_az = p.aod_el = 0.0;
        paths.push_back(p);
    }
    PathSet conj_paths = paths;
    for (Path& p : conj_paths) p.gain = std::conj(p.gain);
    const ChannelTensor h = synthesize_channel(paths, arr, wf);
    const ChannelTensor hc = synthesize_channel(conj_paths, arr, wf);
    for (size_t i = 0; i < h.size(); ++i) CHECK(std::abs(hc.data[i] - std::conj(h.data[i])) < 1e-12);
}

TEST_CASE("channel_power") {
    ChannelTensor zero(3, 2, 2);
    CHECK(channel_power(zero, 123.0) == 0.0);

    // single path at the pulse peak, unit-modulus outer product
    ArrayConfig arr{4, 2, 2, 2};
    WaveformConfig wf;
    wf.num_taps = 4;
    Path p;
    p.gain = cxd(0.0, 2.5); // |alpha| = 2.5
    p.delay_s = 0.0;
    const ChannelTensor h = synthesize_channel({p}, arr, wf);
    const double expect = 10.0 * 2.5 * 2.5 * arr.nr() * arr.nt();
    CHECK(channel_power(h, 10.0) == doctest::Approx(expect).epsilon(1e-12));

    // random tensor vs direct |.|^2 summation
    Rng rng(5);
    ChannelTensor r(2, 3, 4);
    double acc = 0.0;
    for (cxd& v : r.data) {
        v = cxd(rng.normal(), rng.normal());
        acc += std::norm(v);
    }
    CHECK(channel_power(r, 2.0) == doctest::Approx(2.0 * acc).epsilon(1e-12));
}

TEST_CASE("channel_power scales quadratically with a uniform gain scale") {
    Rng rng(13);
    ArrayConfig arr{2, 2, 2, 1};
    WaveformConfig wf;
    wf.num_taps = 4;
    PathSet paths;
    for (int i = 0; i < 4; ++i) paths.push_back(test::random_path(rng, 2e-7));
    PathSet scaled = paths;
    const double s = 1.7;
    for (Path& p : scaled) p.gain *= s;
    const double p1 = channel_power(synthesize_channel(paths, arr, wf), 1.0);
    const double p2 = channel_power(synthesize_channel(scaled, arr, wf), 1.0);
    CHECK(p2 == doctest::Approx(s * s * p1).epsilon(1e-12));
}

TEST_CASE("gain_from_field") {
    CHECK(std::abs(gain_from_field(0.0, 1.0, 0.7)) == 0.0);

    const cxd unit = gain_from_field(2.0 / std::sqrt(kFreeSpaceImpedance), 1.0, 0.0);
    CHECK(std::abs(unit - cxd(1, 0)) < 1e-14);

    const cxd g = gain_from_field(1.5, 4.0, kPi / 3);
    const double mag = std::sqrt(kFreeSpaceImpedance) / 2.0 * 1.5 / 2.0;
    CHECK(std::abs(g) == doctest::Approx(mag).epsilon(1e-14));
    CHECK(std::arg(g) == doctest::Approx(kPi / 3).epsilon(1e-14));

    CHECK_THROWS_AS(gain_from_field(1.0, 0.0, 0.0), NonPositivePower);

    // field_from_gain inverts gain_from_field
    const cxd back = field_from_gain(g, 4.0);
    CHECK(std::abs(back) == doctest::Approx(1.5).epsilon(1e-13));
    CHECK(std::arg(back) == doctest::Approx(kPi / 3).epsilon(1e-13));
}
