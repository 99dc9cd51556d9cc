#pragma once

#include <vector>

#include "vip/roi.hpp"
#include "vip/tensor.hpp"
#include "vip/vit.hpp"

namespace vip {

struct MetricsBundle {
  double ssim = 0.0;
  double feature_cosine_global = 0.0;
  double feature_cosine_roi = 0.0;
  double feature_cosine_background = 0.0;
  std::vector<double> roi_attention_mass_clean;  // per layer
  std::vector<double> roi_attention_mass_adv;
  double rollout_roi_mass_clean = 0.0;
  double rollout_roi_mass_adv = 0.0;
  std::vector<double> diagonal_dominance_clean;  // per layer
  std::vector<double> diagonal_dominance_adv;
};

// Accumulated attention rollout: R = A~_L ... A~_1 with
// A~ = normalize_rows(mean_heads(A) + I). Row-stochastic by construction.
struct RolloutMap {
  int seq_len = 0;
  std::vector<float> matrix;      // [S, S] row-major
  std::vector<float> patch_heat;  // CLS row over patch tokens: R(0, p+1)

  double roi_mass(const RoiTokenSet& roi) const;
};

enum class SsimWindow {
  NonOverlapping,  // uniform weights over a tiled window grid
  Gaussian,        // sliding 11x11 window, sigma 1.5
};

// Mean of per-window SSIM, averaged across channels. Images are [3, H, W]
// tensors on the given dynamic range. `window` only applies to the
// non-overlapping variant.
double ssim(const Tensor& x, const Tensor& y, int window = 8,
            double dynamic_range = 255.0,
            SsimWindow variant = SsimWindow::NonOverlapping);

double cosine_similarity(const std::vector<float>& u, const std::vector<float>& v);

// Fraction of layer `layer`'s total attention landing on ROI columns.
double roi_attention_mass(const MhaActivations& trace, const RoiTokenSet& roi, int layer);

RolloutMap attention_rollout(const MhaActivations& trace, int up_to_layer);

// Mean self-attention mass at one layer, averaged over heads.
double diagonal_dominance(const MhaActivations& trace, int layer);

// Elementwise mean of A over heads and batch items at one layer.
std::vector<float> averaged_attention_map(const std::vector<const MhaActivations*>& traces,
                                          int layer);

// Full bundle for a finished attack; runs fresh full-depth forwards on the
// clean and adversarial images. Rollout depth is l_max.
MetricsBundle compute_metrics(const ViTModel& model, const Tensor& clean_image,
                              const Tensor& adv_image, const RoiTokenSet& roi, int l_max);

}  // namespace vip
