#include "mbce/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "mbce/common.hpp"

namespace mbce {

namespace {
constexpr char kMagic[] = "MBCE-CKPT-1\n";
constexpr size_t kMagicLen = sizeof(kMagic) - 1;
} // namespace

int NamedTensors::add(const std::string& name, ad::Tensor t) {
    if (index_of(name) >= 0) throw ValidationError("duplicate parameter name: " + name);
    names.push_back(name);
    tensors.push_back(std::move(t));
    return int(tensors.size()) - 1;
}

int NamedTensors::index_of(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return int(i);
    return -1;
}

int64_t NamedTensors::total_elements() const {
    int64_t n = 0;
    for (const auto& t : tensors) n += t.numel();
    return n;
}

void save_checkpoint(const std::string& path, const NamedTensors& params,
                     const std::string& metadata_json) {
    nlohmann::json manifest;
    manifest["tensors"] = nlohmann::json::array();
    for (size_t i = 0; i < params.size(); ++i) {
        manifest["tensors"].push_back(
            {{"name", params.names[i]}, {"shape", params.tensors[i].shape}});
    }
    manifest["element_count"] = params.total_elements();
    manifest["metadata"] = nlohmann::json::parse(metadata_json);
    const std::string mtext = manifest.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open checkpoint for writing: " + path);
    f.write(kMagic, std::streamsize(kMagicLen));
    const uint32_t mlen = uint32_t(mtext.size());
    unsigned char lenbuf[4] = {uint8_t(mlen), uint8_t(mlen >> 8), uint8_t(mlen >> 16),
                               uint8_t(mlen >> 24)};
    f.write(reinterpret_cast<const char*>(lenbuf), 4);
    f.write(mtext.data(), std::streamsize(mtext.size()));
    static_assert(sizeof(double) == 8);
    for (const auto& t : params.tensors)
        f.write(reinterpret_cast<const char*>(t.data.data()),
                std::streamsize(t.data.size() * sizeof(double)));
    if (!f) throw ValidationError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open checkpoint: " + path);
    char magic[kMagicLen];
    f.read(magic, std::streamsize(kMagicLen));
    if (!f || std::memcmp(magic, kMagic, kMagicLen) != 0)
        throw SchemaVersionUnsupported("bad checkpoint magic in " + path);
    unsigned char lenbuf[4];
    f.read(reinterpret_cast<char*>(lenbuf), 4);
    const uint32_t mlen = uint32_t(lenbuf[0]) | uint32_t(lenbuf[1]) << 8 |
                          uint32_t(lenbuf[2]) << 16 | uint32_t(lenbuf[3]) << 24;
    std::string mtext(mlen, '\0');
    f.read(mtext.data(), std::streamsize(mlen));
    if (!f) throw ValidationError("truncated checkpoint manifest: " + path);
    nlohmann::json manifest = nlohmann::json::parse(mtext);

    Checkpoint ck;
    ck.metadata_json = manifest.value("metadata", nlohmann::json::object()).dump();
    for (const auto& tj : manifest.at("tensors")) {
        std::vector<int> shape = tj.at("shape").get<std::vector<int>>();
        ad::Tensor t(shape);
        f.read(reinterpret_cast<char*>(t.data.data()),
               std::streamsize(t.data.size() * sizeof(double)));
        if (!f) throw ValidationError("truncated checkpoint data: " + path);
        ck.params.add(tj.at("name").get<std::string>(), std::move(t));
    }
    if (ck.params.total_elements() != manifest.at("element_count").get<int64_t>())
        throw CheckpointShapeMismatch("manifest element count disagrees with shapes");
    return ck;
}

} // namespace mbce
