// Python bindings for the main operations: channel synthesis, propagation,
// RSS maps, and the classical estimators.

#include <pybind11/complex.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mbce/dataset.hpp"
#include "mbce/estimators.hpp"
#include "mbce/propagation.hpp"

namespace py = pybind11;
using namespace mbce;

namespace {

py::array_t<std::complex<double>> channel_to_numpy(const ChannelTensor& h) {
    py::array_t<std::complex<double>> out({h.d, h.nr, h.nt});
    auto buf = out.mutable_unchecked<3>();
    for (int d = 0; d < h.d; ++d)
        for (int r = 0; r < h.nr; ++r)
            for (int t = 0; t < h.nt; ++t) buf(d, r, t) = h.at(d, r, t);
    return out;
}

ChannelTensor channel_from_numpy(const py::array_t<std::complex<double>>& a) {
    if (a.ndim() != 3) throw ShapeMismatch("channel array must be [D, Nr, Nt]");
    ChannelTensor h(int(a.shape(0)), int(a.shape(1)), int(a.shape(2)));
    auto buf = a.unchecked<3>();
    for (int d = 0; d < h.d; ++d)
        for (int r = 0; r < h.nr; ++r)
            for (int t = 0; t < h.nt; ++t) h.at(d, r, t) = buf(d, r, t);
    return h;
}

py::array_t<double> vec_to_numpy(const std::vector<double>& v, int rows, int cols) {
    py::array_t<double> out({rows, cols});
    auto buf = out.mutable_unchecked<2>();
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) buf(r, c) = v[size_t(r) * cols + c];
    return out;
}

} // namespace

PYBIND11_MODULE(_mbce, m) {
    m.doc() = "RSS-map-assisted MIMO channel estimation core";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    py::class_<ArrayConfig>(m, "ArrayConfig")
        .def(py::init([](int nt_x, int nt_y, int nr_x, int nr_y) {
                 return ArrayConfig{nt_x, nt_y, nr_x, nr_y};
             }),
             py::arg("nt_x"), py::arg("nt_y"), py::arg("nr_x"), py::arg("nr_y"))
        .def_readwrite("nt_x", &ArrayConfig::nt_x)
        .def_readwrite("nt_y", &ArrayConfig::nt_y)
        .def_readwrite("nr_x", &ArrayConfig::nr_x)
        .def_readwrite("nr_y", &ArrayConfig::nr_y)
        .def_property_readonly("nt", &ArrayConfig::nt)
        .def_property_readonly("nr", &ArrayConfig::nr);

    py::class_<WaveformConfig>(m, "WaveformConfig")
        .def(py::init<>())
        .def_readwrite("sample_interval_s", &WaveformConfig::sample_interval_s)
        .def_readwrite("clock_offset_s", &WaveformConfig::clock_offset_s)
        .def_readwrite("rolloff", &WaveformConfig::rolloff)
        .def_readwrite("num_taps", &WaveformConfig::num_taps)
        .def_readwrite("carrier_hz", &WaveformConfig::carrier_hz)
        .def_readwrite("tx_power_w", &WaveformConfig::tx_power_w)
        .def_property_readonly("wavelength_m", &WaveformConfig::wavelength_m);

    py::class_<Path>(m, "Path")
        .def(py::init<>())
        .def_readwrite("gain", &Path::gain)
        .def_readwrite("delay_s", &Path::delay_s)
        .def_readwrite("aoa_az", &Path::aoa_az)
        .def_readwrite("aoa_el", &Path::aoa_el)
        .def_readwrite("aod_az", &Path::aod_az)
        .def_readwrite("aod_el", &Path::aod_el);

    py::class_<PilotPattern>(m, "PilotPattern")
        .def_readonly("count", &PilotPattern::count)
        .def_readonly("spacing", &PilotPattern::spacing)
        .def_readonly("indices", &PilotPattern::indices);

    py::class_<PilotObservation>(m, "PilotObservation")
        .def_readonly("noise_var", &PilotObservation::noise_var)
        .def_readonly("noise_only_warning", &PilotObservation::noise_only_warning);

    m.def("steering_vector", [](double theta, int n) {
        const auto v = steering_vector(theta, n);
        return py::array_t<std::complex<double>>(py::ssize_t(v.size()), v.data());
    });
    m.def("array_response", [](double az, double el, int nx, int ny) {
        const auto v = array_response(az, el, nx, ny);
        return py::array_t<std::complex<double>>(py::ssize_t(v.size()), v.data());
    });
    m.def("raised_cosine", &raised_cosine, py::arg("t"), py::arg("rolloff"), py::arg("ts"));

    m.def("synthesize_channel",
          [](const std::vector<Path>& paths, const ArrayConfig& arr, const WaveformConfig& wf) {
              return channel_to_numpy(synthesize_channel(paths, arr, wf));
          });
    m.def("channel_power", [](const py::array_t<std::complex<double>>& h, double tx_power_w) {
        return channel_power(channel_from_numpy(h), tx_power_w);
    });
    m.def("gain_from_field", &gain_from_field, py::arg("field_mag"), py::arg("tx_power_w"),
          py::arg("phase"));

    m.def("scene_from_json", &scene_from_json);
    py::class_<Scene>(m, "Scene").def_property_readonly("n_buildings", [](const Scene& s) {
        return s.buildings.size();
    });
    m.def("trace_paths", [](const Scene& scene, std::array<double, 3> rx, int max_order,
                            const WaveformConfig& wf) {
        return trace_paths(scene, rx, max_order, wf);
    });
    m.def("rss_at", &rss_at);
    m.def("compute_rss_map",
          [](const Scene& scene, const WaveformConfig& wf, double resolution_m) {
              const RssMap map = compute_rss_map(scene, wf, resolution_m);
              return py::make_tuple(vec_to_numpy(map.grid_dbm, map.h_px, map.w_px),
                                    map.resolution_m_per_px);
          });

    m.def("make_pilot_pattern", [](const std::string& kind, int dim, int count) {
        return make_pilot_pattern(kind == "antenna" ? PilotKind::antenna : PilotKind::subcarrier,
                                  dim, count);
    });
    m.def("observe", [](const py::array_t<std::complex<double>>& h, const PilotPattern& pat,
                        double snr_db, uint64_t seed) {
        Rng rng(seed);
        return observe(channel_from_numpy(h), pat, snr_db, rng);
    });
    m.def("ls_interp",
          [](const PilotObservation& obs, const ArrayConfig& arr, const WaveformConfig& wf) {
              return channel_to_numpy(ls_interp(obs, arr, wf));
          });
    m.def("ls_dft_denoise",
          [](const PilotObservation& obs, const ArrayConfig& arr, const WaveformConfig& wf) {
              return channel_to_numpy(ls_dft_denoise(obs, arr, wf));
          });
    m.def("ls_ofdm", [](const PilotObservation& obs, const ArrayConfig& arr,
                        const WaveformConfig& wf, int n_fft) {
        return channel_to_numpy(ls_ofdm(obs, arr, wf, n_fft));
    });
    m.def("somp", [](const PilotObservation& obs, const ArrayConfig& arr,
                     const WaveformConfig& wf, int grid_size, int max_sparsity) {
        return channel_to_numpy(somp(obs, arr, wf, grid_size, max_sparsity));
    });
    m.def("nmse_db",
          [](const py::array_t<std::complex<double>>& est,
             const py::array_t<std::complex<double>>& truth) {
              return nmse_db(channel_from_numpy(est), channel_from_numpy(truth));
          });
    m.def("coherence_time", &coherence_time, py::arg("velocity_mps"), py::arg("carrier_hz"));

    m.attr("SPEED_OF_LIGHT") = kSpeedOfLight;
    m.attr("FREE_SPACE_IMPEDANCE") = kFreeSpaceImpedance;
}
