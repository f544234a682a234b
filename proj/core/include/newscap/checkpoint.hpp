#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "newscap/decoder.hpp"
#include "newscap/nee.hpp"
#include "newscap/tensor.hpp"

namespace newscap {

// On-disk layout: 8-byte magic, u64 little-endian header length, header
// JSON (version, kind, config, extra, tensor names/shapes), then each
// tensor's values as little-endian float64 in header order.
inline constexpr int kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'N', 'E', 'W', 'S', 'C', 'A', 'P', '\0'};

struct CheckpointData {
  int format_version = kCheckpointVersion;
  std::string kind;
  nlohmann::ordered_json config;
  nlohmann::ordered_json extra;
  std::uint64_t training_step = 0;
  double validation_loss = 0.0;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const CheckpointData& data, const std::string& path);
CheckpointData load_checkpoint(const std::string& path);  // VersionError on mismatch

// ---- model <-> checkpoint ------------------------------------------------------

nlohmann::ordered_json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::ordered_json& j);

CheckpointData captioner_to_checkpoint(CaptionerModel& model, std::uint64_t training_step,
                                       double validation_loss);
CaptionerModel captioner_from_checkpoint(const CheckpointData& data);

CheckpointData table_to_checkpoint(JointEmbeddingTable& table);
JointEmbeddingTable table_from_checkpoint(const CheckpointData& data);

}  // namespace newscap
