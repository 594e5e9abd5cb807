#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fgclip/tensor.hpp"

namespace fgclip {

// Versioned named-tensor container. Payloads are little-endian 32-bit floats;
// save -> load is bitwise exact at that precision. An FNV-1a checksum over
// the whole body is appended and verified before anything is parsed, so
// truncated or corrupted files are always rejected.
struct Checkpoint {
    static constexpr uint32_t kVersion = 1;

    struct NamedTensor {
        std::string name;
        std::vector<long> shape;
        std::vector<float> values;
    };

    std::string config_json;  // model configs + vocabulary + train config snapshot
    std::vector<NamedTensor> tensors;

    // AdamW state, aligned by tensor name; empty when not training.
    long opt_step = 0;
    std::vector<NamedTensor> opt_m;
    std::vector<NamedTensor> opt_v;

    std::string serialize() const;
    static Checkpoint deserialize(const std::string& bytes);

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    static NamedTensor from_tensor(const TensorPtr& t);
    const NamedTensor* find(const std::string& name) const;
};

}  // namespace fgclip
