#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "vip/attack.hpp"
#include "vip/roi.hpp"
#include "vip/vit.hpp"

namespace vip {

inline constexpr const char* kToolVersion = "0.1.0";

// Deterministic result document: insertion-ordered keys, no timestamps.
nlohmann::ordered_json attack_result_json(const ViTConfig& model_config,
                                          const AttackConfig& attack_config,
                                          const std::vector<BoundingBox>& boxes,
                                          const RoiTokenSet& roi,
                                          const AttackResult& result);

nlohmann::ordered_json run_manifest_json(const std::string& command,
                                         const nlohmann::ordered_json& inputs,
                                         const std::vector<std::string>& outputs,
                                         std::uint64_t seed, double duration_seconds);

void write_json_file(const nlohmann::ordered_json& doc, const std::string& path);

}  // namespace vip
