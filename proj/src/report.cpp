#include "vip/report.hpp"

#include <cmath>
#include <fstream>

namespace vip {

namespace {

using nlohmann::ordered_json;

ordered_json finite_or_null(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

ordered_json metrics_json(const MetricsBundle& m) {
  ordered_json j;
  j["ssim"] = m.ssim;
  j["feature_cosine_global"] = m.feature_cosine_global;
  j["feature_cosine_roi"] = finite_or_null(m.feature_cosine_roi);
  j["feature_cosine_background"] = finite_or_null(m.feature_cosine_background);
  j["roi_attention_mass_clean"] = m.roi_attention_mass_clean;
  j["roi_attention_mass_adv"] = m.roi_attention_mass_adv;
  j["rollout_roi_mass_clean"] = m.rollout_roi_mass_clean;
  j["rollout_roi_mass_adv"] = m.rollout_roi_mass_adv;
  j["diagonal_dominance_clean"] = m.diagonal_dominance_clean;
  j["diagonal_dominance_adv"] = m.diagonal_dominance_adv;
  return j;
}

}  // namespace

ordered_json attack_result_json(const ViTConfig& model_config,
                                const AttackConfig& attack_config,
                                const std::vector<BoundingBox>& boxes,
                                const RoiTokenSet& roi, const AttackResult& result) {
  ordered_json j;
  j["tool"] = "vip";
  j["version"] = kToolVersion;
  j["seed"] = attack_config.seed;

  ordered_json cfg;
  cfg["mode"] = to_string(attack_config.mode);
  cfg["l_max"] = attack_config.l_max;
  cfg["lambda_v"] = attack_config.lambda_v;
  cfg["optimizer"] = to_string(attack_config.optimizer);
  cfg["learning_rate"] = attack_config.learning_rate;
  cfg["max_iters"] = attack_config.max_iters;
  cfg["patience"] = attack_config.patience;
  cfg["check_every"] = attack_config.check_every;
  cfg["l_inf_budget"] =
      attack_config.l_inf_budget ? ordered_json(*attack_config.l_inf_budget) : nullptr;
  cfg["tau_rollout"] = attack_config.tau_rollout;
  cfg["tau_feat"] = attack_config.tau_feat;
  j["config"] = cfg;

  ordered_json model;
  model["resolution"] = model_config.resolution;
  model["patch_dim"] = model_config.patch_dim;
  model["embed_dim"] = model_config.embed_dim;
  model["num_heads"] = model_config.num_heads;
  model["num_layers"] = model_config.num_layers;
  model["mlp_hidden_dim"] = model_config.mlp_hidden_dim;
  j["model"] = model;

  ordered_json roi_j;
  ordered_json box_list = ordered_json::array();
  for (const BoundingBox& b : boxes) box_list.push_back({b.x0, b.y0, b.x1, b.y1});
  roi_j["boxes"] = box_list;
  roi_j["token_indices"] = roi.indices;
  j["roi"] = roi_j;

  ordered_json res;
  res["stop_reason"] = to_string(result.stop_reason);
  res["iterations"] = result.iterations;
  res["success"] = result.success;
  res["initial_loss"] =
      result.loss_history.empty() ? 0.0f : result.loss_history.front().total;
  res["final_loss"] = result.loss_history.empty() ? 0.0f : result.loss_history.back().total;
  float max_abs_delta = 0.0f;
  for (float v : result.delta.data()) max_abs_delta = std::max(max_abs_delta, std::fabs(v));
  res["max_abs_delta"] = max_abs_delta;
  res["attention_trace_reads"] = result.attention_trace_reads;
  ordered_json hist;
  std::vector<float> total, att, val;
  total.reserve(result.loss_history.size());
  for (const LossBreakdown& b : result.loss_history) {
    total.push_back(b.total);
    att.push_back(b.attention);
    val.push_back(b.value);
  }
  hist["total"] = total;
  hist["attention"] = att;
  hist["value"] = val;
  res["loss_history"] = hist;
  j["result"] = res;

  j["metrics"] = metrics_json(result.metrics);
  return j;
}

ordered_json run_manifest_json(const std::string& command, const ordered_json& inputs,
                               const std::vector<std::string>& outputs,
                               std::uint64_t seed, double duration_seconds) {
  ordered_json j;
  j["tool"] = "vip";
  j["version"] = kToolVersion;
  j["command"] = command;
  j["seed"] = seed;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["duration_seconds"] = duration_seconds;
  return j;
}

void write_json_file(const ordered_json& doc, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << doc.dump(2) << '\n';
  if (!os) throw IoError("write failed for " + path);
}

}  // namespace vip
