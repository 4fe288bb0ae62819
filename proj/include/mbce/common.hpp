#ifndef MBCE_COMMON_HPP
#define MBCE_COMMON_HPP

#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace mbce {

using cxd = std::complex<double>;

constexpr double kSpeedOfLight = 299792458.0;       // m/s
constexpr double kFreeSpaceImpedance = 376.730313668; // eta_0, ohm
constexpr double kPi = 3.141592653589793238462643383279502884;

// Validation errors map to CLI exit code 2, numerical errors to 3.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define MBCE_DEFINE_ERROR(Name, Base)                                         \
    struct Name : Base {                                                      \
        explicit Name(const std::string& m) : Base(std::string(#Name ": ") + m) {} \
    }

MBCE_DEFINE_ERROR(PathDelayOutOfRange, ValidationError);
MBCE_DEFINE_ERROR(NonPositivePower, ValidationError);
MBCE_DEFINE_ERROR(RxOutsideScene, ValidationError);
MBCE_DEFINE_ERROR(DegenerateRange, NumericalError);
MBCE_DEFINE_ERROR(CountExceedsDimension, ValidationError);
MBCE_DEFINE_ERROR(InsufficientPilots, ValidationError);
MBCE_DEFINE_ERROR(DictionaryRankDeficient, NumericalError);
MBCE_DEFINE_ERROR(ZeroReference, ValidationError);
MBCE_DEFINE_ERROR(ShapeMismatch, ValidationError);
MBCE_DEFINE_ERROR(DisconnectedLoss, ValidationError);
MBCE_DEFINE_ERROR(NonDeterministicFunction, NumericalError);
MBCE_DEFINE_ERROR(HeadDivisibility, ValidationError);
MBCE_DEFINE_ERROR(EmptyDataset, ValidationError);
MBCE_DEFINE_ERROR(NonFiniteLoss, NumericalError);
MBCE_DEFINE_ERROR(SceneDegenerate, ValidationError);
MBCE_DEFINE_ERROR(NonPositiveInput, ValidationError);
MBCE_DEFINE_ERROR(UnknownMethod, ValidationError);
MBCE_DEFINE_ERROR(CheckpointShapeMismatch, ValidationError);
MBCE_DEFINE_ERROR(ChecksumMismatch, ValidationError);
MBCE_DEFINE_ERROR(SchemaVersionUnsupported, ValidationError);

#undef MBCE_DEFINE_ERROR

inline double dbm_from_watts(double p_w) {
    return 10.0 * std::log10(p_w * 1e3);
}

inline double watts_from_dbm(double p_dbm) {
    return std::pow(10.0, p_dbm / 10.0) * 1e-3;
}

} // namespace mbce

#endif
