#pragma once

// Checkpoint container shared by the encoders and the trainer.
//
// Layout (all integers little-endian):
//   magic      8 bytes  "MVRCKPT\0"
//   version    uint32
//   meta       uint32 length + UTF-8 JSON object
//   groups     uint32 count, then per group: uint32 length + name, uint8 frozen
//   params     uint32 count, then per param:
//                uint32 length + path, uint32 length + group,
//                uint32 rank, rank x uint32 dims, numel x float32 values

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvrisk/core/params.hpp"

namespace mvrisk::encoders {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
    std::string path;
    std::string group;
    Shape shape;
    std::vector<float> values;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, bool> groups;
    std::vector<CheckpointTensor> tensors;

    const CheckpointTensor* find(const std::string& path) const;
};

template <typename T>
Checkpoint make_checkpoint(const ParamStore<T>& store, nlohmann::json meta);

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies every tensor of `store` from the checkpoint. Missing paths, shape
// differences or a disagreeing frozen flag raise Incompatible.
template <typename T>
void load_into(const Checkpoint& ckpt, ParamStore<T>& store);

}  // namespace mvrisk::encoders
