#ifndef MBCE_CHECKPOINT_HPP
#define MBCE_CHECKPOINT_HPP

#include <string>
#include <vector>

#include "mbce/tensor.hpp"

namespace mbce {

// Ordered named tensor collection (model parameters, optimizer slots, ...).
struct NamedTensors {
    std::vector<std::string> names;
    std::vector<ad::Tensor> tensors;

    int add(const std::string& name, ad::Tensor t);
    int index_of(const std::string& name) const; // -1 when absent
    ad::Tensor& operator[](size_t i) { return tensors[i]; }
    const ad::Tensor& operator[](size_t i) const { return tensors[i]; }
    size_t size() const { return tensors.size(); }
    int64_t total_elements() const;
};

// Checkpoint file: "MBCE-CKPT-1\n", u32 manifest length, manifest JSON
// (names, shapes, element count, optional metadata), then the raw
// little-endian float64 buffer in manifest order.
void save_checkpoint(const std::string& path, const NamedTensors& params,
                     const std::string& metadata_json = "{}");

struct Checkpoint {
    NamedTensors params;
    std::string metadata_json;
};

Checkpoint load_checkpoint(const std::string& path);

} // namespace mbce

#endif
