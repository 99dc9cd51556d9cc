#include "vip/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vip {

std::string to_string(LossMode mode) {
  switch (mode) {
    case LossMode::A: return "A";
    case LossMode::AV: return "A+V";
    case LossMode::V: return "V";
  }
  return "?";
}

std::string to_string(OptimizerKind opt) {
  return opt == OptimizerKind::Adam ? "adam" : "sign-gd";
}

std::string to_string(StopReason reason) {
  switch (reason) {
    case StopReason::Converged: return "converged";
    case StopReason::Patience: return "patience";
    case StopReason::MaxIters: return "max_iters";
  }
  return "?";
}

LossMode parse_loss_mode(const std::string& s) {
  if (s == "A") return LossMode::A;
  if (s == "A+V" || s == "AV") return LossMode::AV;
  if (s == "V") return LossMode::V;
  throw ContractError("unknown loss mode '" + s + "' (expected A, A+V or V)");
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sign-gd" || s == "sign_gd") return OptimizerKind::SignGd;
  throw ContractError("unknown optimizer '" + s + "' (expected adam or sign-gd)");
}

void AttackConfig::validate(int num_layers) const {
  if (l_max < 1 || l_max > num_layers) {
    throw ContractError("attack: l_max " + std::to_string(l_max) +
                        " outside [1, " + std::to_string(num_layers) + "]");
  }
  if (lambda_v < 0.0) throw ContractError("attack: lambda_v must be nonnegative");
  if (learning_rate <= 0.0) throw ContractError("attack: learning rate must be positive");
  if (max_iters < 1) throw ContractError("attack: max_iters must be at least 1");
  if (patience < 1) throw ContractError("attack: patience must be at least 1");
  if (check_every < 1) throw ContractError("attack: check_every must be at least 1");
  if (l_inf_budget && *l_inf_budget <= 0.0) {
    throw ContractError("attack: l_inf budget must be positive when set");
  }
}

Tensor loss_attention(const MhaActivations& trace, const RoiTokenSet& roi, int l_max) {
  if (l_max < 1 || l_max > trace.traced_layers()) {
    throw ContractError("loss_attention: l_max " + std::to_string(l_max) +
                        " exceeds traced depth " + std::to_string(trace.traced_layers()));
  }
  Tensor total = Tensor::scalar(0.0f);
  for (int l = 0; l < l_max; ++l) {
    for (int h = 0; h < trace.num_heads(); ++h) {
      total = add(total, sum_all(gather_columns(trace.attention(l, h), roi.indices)));
    }
  }
  return total;
}

Tensor loss_value_norm(const MhaActivations& trace, const RoiTokenSet& roi, int l_max) {
  if (l_max < 1 || l_max > trace.traced_layers()) {
    throw ContractError("loss_value_norm: l_max " + std::to_string(l_max) +
                        " exceeds traced depth " + std::to_string(trace.traced_layers()));
  }
  Tensor total = Tensor::scalar(0.0f);
  for (int l = 0; l < l_max; ++l) {
    for (int h = 0; h < trace.num_heads(); ++h) {
      total = add(total, sum_all(l2_norm_rows(gather_rows(trace.value(l, h), roi.indices))));
    }
  }
  return total;
}

Tensor loss_total(const MhaActivations& trace, const RoiTokenSet& roi,
                  const AttackConfig& config, LossBreakdown* breakdown) {
  Tensor total;
  float att = 0.0f, val = 0.0f;
  switch (config.mode) {
    case LossMode::A: {
      total = loss_attention(trace, roi, config.l_max);
      att = total.item();
      break;
    }
    case LossMode::V: {
      total = loss_value_norm(trace, roi, config.l_max);
      val = total.item();
      break;
    }
    case LossMode::AV: {
      Tensor a = loss_attention(trace, roi, config.l_max);
      Tensor v = loss_value_norm(trace, roi, config.l_max);
      total = add(a, mul_scalar(v, static_cast<float>(config.lambda_v)));
      att = a.item();
      val = v.item();
      break;
    }
  }
  if (breakdown) {
    breakdown->total = total.item();
    breakdown->attention = att;
    breakdown->value = val;
  }
  return total;
}

void step_sign_gd(std::vector<float>& delta, const std::vector<float>& grad, float step) {
  for (std::size_t i = 0; i < delta.size(); ++i) {
    if (grad[i] > 0.0f) {
      delta[i] -= step;
    } else if (grad[i] < 0.0f) {
      delta[i] += step;
    }
  }
}

void step_adam(std::vector<float>& delta, AdamMoments& moments,
               const std::vector<float>& grad, float step, float beta1, float beta2,
               float eps) {
  if (moments.m.size() != delta.size()) {
    moments.m.assign(delta.size(), 0.0f);
    moments.v.assign(delta.size(), 0.0f);
    moments.t = 0;
  }
  ++moments.t;
  const double bc1 = 1.0 - std::pow(static_cast<double>(beta1), moments.t);
  const double bc2 = 1.0 - std::pow(static_cast<double>(beta2), moments.t);
  for (std::size_t i = 0; i < delta.size(); ++i) {
    moments.m[i] = beta1 * moments.m[i] + (1.0f - beta1) * grad[i];
    moments.v[i] = beta2 * moments.v[i] + (1.0f - beta2) * grad[i] * grad[i];
    const double m_hat = moments.m[i] / bc1;
    const double v_hat = moments.v[i] / bc2;
    delta[i] -= static_cast<float>(step * m_hat / (std::sqrt(v_hat) + eps));
  }
}

void project_delta(std::vector<float>& delta, const std::vector<float>& clean,
                   std::optional<float> budget) {
  for (std::size_t i = 0; i < delta.size(); ++i) {
    float d = delta[i];
    if (budget) d = std::clamp(d, -*budget, *budget);
    d = std::clamp(d, -clean[i], 255.0f - clean[i]);
    delta[i] = d;
  }
}

namespace {

double rollout_roi(const MhaActivations& trace, const RoiTokenSet& roi, int l_max) {
  return attention_rollout(trace, l_max).roi_mass(roi);
}

double mean_roi_token_cosine(const Tensor& clean_tokens, const Tensor& adv_tokens,
                             const RoiTokenSet& roi) {
  const int d = clean_tokens.dim(1);
  const auto& cv = clean_tokens.data();
  const auto& av = adv_tokens.data();
  double sum = 0.0;
  for (int token : roi.indices) {
    const std::size_t off = static_cast<std::size_t>(token) * d;
    double dot = 0, nc = 0, na = 0;
    for (int j = 0; j < d; ++j) {
      dot += static_cast<double>(cv[off + j]) * av[off + j];
      nc += static_cast<double>(cv[off + j]) * cv[off + j];
      na += static_cast<double>(av[off + j]) * av[off + j];
    }
    sum += dot / (std::sqrt(nc) * std::sqrt(na));
  }
  return sum / roi.count();
}

}  // namespace

AttackResult run_attack(const ViTModel& model, const Tensor& clean_image,
                        const RoiTokenSet& roi, const AttackConfig& config,
                        const IterationObserver& observer) {
  config.validate(model.config.num_layers);
  if (roi.count() == 0) throw ContractError("attack requires a non-empty ROI token set");
  const Shape expected{3, model.config.resolution, model.config.resolution};
  if (clean_image.shape() != expected) {
    throw DimError("attack: image shape " + shape_str(clean_image.shape()) +
                   " does not match model input " + shape_str(expected));
  }

  AttackResult result;

  // Clean reference pass for the success predicate. The rollout reference
  // reads attention matrices, so mode V (which must never touch A) falls
  // back to the feature condition alone.
  Tensor clean_const = clean_image.detached();
  EncoderOutput clean_out = forward(model, clean_const, config.l_max);
  Tensor clean_tokens = clean_out.tokens.detached();
  double clean_rollout = 0.0;
  if (config.mode != LossMode::V) {
    clean_rollout = rollout_roi(*clean_out.trace, roi, config.l_max);
  }
  result.attention_trace_reads += clean_out.trace->attention_reads();

  AttackState state;
  state.delta = Tensor(expected, true);
  state.best_loss = std::numeric_limits<double>::infinity();

  AdamMoments adam;
  const std::optional<float> budget =
      config.l_inf_budget ? std::optional<float>(static_cast<float>(*config.l_inf_budget))
                          : std::nullopt;
  const float step = static_cast<float>(config.learning_rate * 255.0);
  constexpr double kImprovementRtol = 1e-4;
  bool improved_since_check = false;
  StopReason stop = StopReason::MaxIters;

  for (int t = 0; t < config.max_iters; ++t) {
    Tensor x_adv = clip(add(clean_const, state.delta), 0.0f, 255.0f);
    EncoderOutput out = forward(model, x_adv, config.l_max);

    LossBreakdown breakdown;
    Tensor loss = loss_total(*out.trace, roi, config, &breakdown);
    if (!std::isfinite(breakdown.total)) {
      throw Error("attack diverged: non-finite loss at iteration " + std::to_string(t));
    }
    result.loss_history.push_back(breakdown);
    state.iteration = t;

    state.delta.zero_grad();
    loss.backward();
    const std::vector<float> grad = state.delta.grad();

    auto& delta = state.delta.mutable_data();
    if (config.optimizer == OptimizerKind::SignGd) {
      step_sign_gd(delta, grad, step);
    } else {
      step_adam(delta, adam, grad, step);
    }
    project_delta(delta, clean_const.data(), budget);

    if (observer) observer(t, delta);

    if (breakdown.total < state.best_loss * (1.0 - kImprovementRtol)) {
      state.best_loss = breakdown.total;
      improved_since_check = true;
    }

    bool stop_now = false;
    if ((t + 1) % config.check_every == 0) {
      const double feat = mean_roi_token_cosine(clean_tokens, out.tokens, roi);
      bool ok = feat < config.tau_feat;
      if (ok && config.mode != LossMode::V) {
        const double adv_rollout = rollout_roi(*out.trace, roi, config.l_max);
        ok = adv_rollout < config.tau_rollout * clean_rollout;
      }
      if (ok) {
        result.success = true;
        stop = StopReason::Converged;
        stop_now = true;
      } else if (!improved_since_check) {
        if (++state.stall_checks >= config.patience) {
          stop = StopReason::Patience;
          stop_now = true;
        }
      } else {
        state.stall_checks = 0;
      }
      improved_since_check = false;
    }

    result.attention_trace_reads += out.trace->attention_reads();
    result.iterations = t + 1;
    if (stop_now) break;
  }

  result.stop_reason = stop;
  {
    // Final adversarial image from the projected delta, outside the graph.
    std::vector<float> adv(clean_const.data());
    const auto& d = state.delta.data();
    for (std::size_t i = 0; i < adv.size(); ++i) {
      adv[i] = std::clamp(adv[i] + d[i], 0.0f, 255.0f);
    }
    result.adversarial_image = Tensor(expected, std::move(adv));
  }
  result.delta = state.delta.detached();
  return result;
}

}  // namespace vip
