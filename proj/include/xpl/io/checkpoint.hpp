#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xpl/model/model.hpp"
#include "xpl/nn/tensor.hpp"

namespace xpl::io {

// File layout: a text manifest terminated by the line "end", then the
// payload of little-endian float32 values of every listed parameter in
// manifest order. The content hash is SHA-256 over the manifest lines
// before "content_hash" followed by the payload bytes.
inline constexpr int kCheckpointVersion = 1;

struct ParamEntry {
  std::string name;
  model::ParamGroup group = model::ParamGroup::kBackbone;
  nn::Shape shape;
  std::size_t offset = 0;  // bytes into the payload
};

struct CheckpointInfo {
  model::BackboneConfig config;
  vrp::Problem problem = vrp::Problem::kTsp;
  model::AdapterMode adapter = model::AdapterMode::kNone;
  std::vector<model::ParamGroup> groups;
  std::string backbone_hash;  // hash of the backbone the stored groups pair with
  std::map<std::string, std::string> meta;
  std::vector<ParamEntry> params;
  std::size_t payload_bytes = 0;
  std::string content_hash;

  bool has_group(model::ParamGroup g) const;
};

// SHA-256 (hex) over the names, shapes and float32 bytes of the backbone
// group.
std::string backbone_hash(const model::PolicyModel& model);
std::string sha256_hex(std::span<const unsigned char> bytes);

// Everything for models without adapters; decoder, heads and adapters
// (the trainable part) for adapter models.
std::vector<model::ParamGroup> default_groups(const model::PolicyModel& model);

void save_checkpoint(const model::PolicyModel& model, const std::filesystem::path& path,
                     std::span<const model::ParamGroup> groups, const std::map<std::string, std::string>& meta = {});

// Verifies the hash. Throws corrupt-checkpoint on mismatch or truncation.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

// Rebuilds the stored model. A checkpoint without the backbone group needs
// `backbone`, whose backbone hash must match the declared one.
model::PolicyModel load_checkpoint(const std::filesystem::path& path, const model::PolicyModel* backbone = nullptr);

// Overwrites the stored groups of an existing model with the same
// architecture.
void load_checkpoint_into(const std::filesystem::path& path, model::PolicyModel& into);

// Raw float64 tensors (optimizer state).
void save_tensors(const std::filesystem::path& path, std::span<const nn::Tensor> tensors);
std::vector<nn::Tensor> load_tensors(const std::filesystem::path& path);

}  // namespace xpl::io
