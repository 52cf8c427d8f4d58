#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dsam/config.hpp"
#include "dsam/nn.hpp"

namespace dsam::harness {

struct NamedTensor {
    std::string name;
    Tensor value;
    bool frozen = false;
    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Config plus every parameter (frozen ones included) in store order.
struct Checkpoint {
    RunConfig config;
    std::vector<NamedTensor> tensors;

    const NamedTensor* find(const std::string& name) const;
};

Checkpoint snapshot(const RunConfig& cfg, const nn::ParameterStore& store);

/// Copies values into the store by name. Every store parameter must be present
/// with the same shape; extra checkpoint tensors (other variants) are ignored.
void restore(nn::ParameterStore& store, const Checkpoint& ckpt);

/// Layout: "DSAMCKPT", u64 manifest length, JSON manifest (config, config
/// hash, tensor table), little-endian doubles in table order.
std::string serialize(const Checkpoint& ckpt);
Checkpoint deserialize(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws BadConfig when the stored config hash does not match the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dsam::harness
