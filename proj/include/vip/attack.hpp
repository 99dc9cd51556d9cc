#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vip/metrics.hpp"
#include "vip/roi.hpp"
#include "vip/tensor.hpp"
#include "vip/vit.hpp"

namespace vip {

enum class LossMode { A, AV, V };
enum class OptimizerKind { SignGd, Adam };
enum class StopReason { Converged, Patience, MaxIters };

std::string to_string(LossMode mode);
std::string to_string(OptimizerKind opt);
std::string to_string(StopReason reason);
LossMode parse_loss_mode(const std::string& s);
OptimizerKind parse_optimizer(const std::string& s);

struct AttackConfig {
  LossMode mode = LossMode::AV;
  int l_max = 1;
  double lambda_v = 1.0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  // Interpreted on a [0,1] pixel scale; the engine applies steps of
  // learning_rate * 255 in raw pixel units.
  double learning_rate = 1e-3;
  int max_iters = 1500;
  int patience = 10;
  int check_every = 100;
  std::optional<double> l_inf_budget;  // pixel units
  double tau_rollout = 0.2;
  double tau_feat = 0.5;
  std::uint64_t seed = 0;

  void validate(int num_layers) const;
};

struct LossBreakdown {
  float total = 0.0f;
  float attention = 0.0f;
  float value = 0.0f;
};

struct AttackState {
  Tensor delta;  // pixel units, same shape as the image
  std::vector<float> adam_m, adam_v;
  int adam_t = 0;
  int iteration = 0;
  double best_loss = 0.0;
  int stall_checks = 0;
};

struct AttackResult {
  Tensor adversarial_image;  // clip(clean + delta), detached
  Tensor delta;
  std::vector<LossBreakdown> loss_history;
  StopReason stop_reason = StopReason::MaxIters;
  int iterations = 0;
  bool success = false;
  std::int64_t attention_trace_reads = 0;
  MetricsBundle metrics;  // filled by compute_metrics, not by run_attack
};

// --- Loss assembly ---------------------------------------------------------

// Sum of attention every token pays to ROI columns over heads and the first
// l_max traced layers.
Tensor loss_attention(const MhaActivations& trace, const RoiTokenSet& roi, int l_max);

// Sum of L2 norms of ROI rows of the value matrices over heads and the
// first l_max traced layers.
Tensor loss_value_norm(const MhaActivations& trace, const RoiTokenSet& roi, int l_max);

// Mode A: attention; mode V: value; mode A+V: attention + lambda_v * value.
// When breakdown is non-null the individual terms are written to it.
Tensor loss_total(const MhaActivations& trace, const RoiTokenSet& roi,
                  const AttackConfig& config, LossBreakdown* breakdown = nullptr);

// --- Optimizer steps -------------------------------------------------------

// delta <- delta - step * sign(grad), sign(0) = 0. `step` is already in
// pixel units.
void step_sign_gd(std::vector<float>& delta, const std::vector<float>& grad, float step);

struct AdamMoments {
  std::vector<float> m, v;
  int t = 0;
};

// Bias-corrected Adam on delta; `step` in pixel units.
void step_adam(std::vector<float>& delta, AdamMoments& moments,
               const std::vector<float>& grad, float step, float beta1 = 0.9f,
               float beta2 = 0.999f, float eps = 1e-8f);

// Budget clamp to [-budget, budget] (when set), then validity clamp so that
// clean + delta stays inside [0, 255].
void project_delta(std::vector<float>& delta, const std::vector<float>& clean,
                   std::optional<float> budget);

// Called after every optimizer step with the iteration (0-based) and the
// current perturbation; used by instrumented runs.
using IterationObserver = std::function<void(int iteration, const std::vector<float>& delta)>;

AttackResult run_attack(const ViTModel& model, const Tensor& clean_image,
                        const RoiTokenSet& roi, const AttackConfig& config,
                        const IterationObserver& observer = nullptr);

}  // namespace vip
