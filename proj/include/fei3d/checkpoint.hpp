#pragma once

#include "fei3d/nn.hpp"

#include "json.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fei3d::training {

/// Layout: magic "FEI3D\0", u16 version, u32 header length, JSON header
/// {"architecture", "meta", "blocks": [{name, rows, cols}]}, then each block as
/// raw little-endian f64 values in header order. Nothing may follow the last
/// block.
inline constexpr std::uint16_t checkpoint_version = 1;

struct CheckpointMeta {
    std::size_t epoch = 0;
    double best_val_loss = 0.0;
    std::uint64_t seed = 0;
    nlohmann::json extra = nlohmann::json::object();
};

struct NamedBlock {
    std::string name;
    Matrix value;
};

struct RawCheckpoint {
    nlohmann::json architecture;
    CheckpointMeta meta;
    std::vector<NamedBlock> blocks;
};

std::vector<std::uint8_t> encode_checkpoint(const nlohmann::json &architecture, const CheckpointMeta &meta,
                                            const nn::Trainable &model);
/// Validates magic, version, header and block sizes; errors carry the byte offset.
RawCheckpoint decode_checkpoint(const std::vector<std::uint8_t> &bytes);

/// Copies blocks into `model`, requiring identical names, order and shapes.
void load_state(nn::Trainable &model, const std::vector<NamedBlock> &blocks);

nlohmann::json describe(const nn::MlpModel &model);
nn::MlpModel mlp_from_description(const nlohmann::json &architecture);

struct LoadedMlp {
    nn::MlpModel model;
    CheckpointMeta meta;
};

void save_checkpoint(const nn::MlpModel &model, const CheckpointMeta &meta, const std::filesystem::path &path);
LoadedMlp load_checkpoint(const std::filesystem::path &path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path &path);
/// Writes to a temporary sibling and renames, so readers never see a partial file.
void write_file_bytes(const std::filesystem::path &path, const std::vector<std::uint8_t> &bytes);

}  // namespace fei3d::training
