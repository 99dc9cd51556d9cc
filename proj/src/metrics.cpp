#include "vip/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace vip {

double RolloutMap::roi_mass(const RoiTokenSet& roi) const {
  double mass = 0.0;
  for (int token : roi.indices) {
    mass += matrix[static_cast<std::size_t>(token)];  // row 0 (CLS), column `token`
  }
  return mass;
}

namespace {

double ssim_term(double mx, double my, double vx, double vy, double cov, double c1,
                 double c2) {
  return ((2 * mx * my + c1) * (2 * cov + c2)) /
         ((mx * mx + my * my + c1) * (vx + vy + c2));
}

}  // namespace

double ssim(const Tensor& x, const Tensor& y, int window, double dynamic_range,
            SsimWindow variant) {
  if (x.shape() != y.shape()) {
    throw DimError("ssim: shape mismatch " + shape_str(x.shape()) + " vs " +
                   shape_str(y.shape()));
  }
  if (x.rank() != 3) throw DimError("ssim: expected [C,H,W], got " + shape_str(x.shape()));
  if (window <= 0) throw ContractError("ssim: window must be positive");

  const int channels = x.dim(0), h = x.dim(1), w = x.dim(2);
  const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
  const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);
  const auto& xv = x.data();
  const auto& yv = y.data();

  double total = 0.0;
  long count = 0;

  if (variant == SsimWindow::NonOverlapping) {
    for (int c = 0; c < channels; ++c) {
      const std::size_t plane = static_cast<std::size_t>(c) * h * w;
      for (int wy = 0; wy < h; wy += window) {
        for (int wx = 0; wx < w; wx += window) {
          const int wh = std::min(window, h - wy);
          const int ww = std::min(window, w - wx);
          const int n = wh * ww;
          double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
          for (int dy = 0; dy < wh; ++dy) {
            for (int dx = 0; dx < ww; ++dx) {
              const std::size_t idx = plane + static_cast<std::size_t>(wy + dy) * w + wx + dx;
              const double a = xv[idx], b = yv[idx];
              sx += a;
              sy += b;
              sxx += a * a;
              syy += b * b;
              sxy += a * b;
            }
          }
          const double mx = sx / n, my = sy / n;
          total += ssim_term(mx, my, sxx / n - mx * mx, syy / n - my * my,
                             sxy / n - mx * my, c1, c2);
          ++count;
        }
      }
    }
    return total / count;
  }

  // Sliding 11x11 Gaussian window, sigma 1.5, evaluated where it fits.
  constexpr int kSide = 11;
  constexpr double kSigma = 1.5;
  if (h < kSide || w < kSide) {
    throw ContractError("ssim: gaussian variant needs images of at least 11x11");
  }
  double kernel[kSide][kSide];
  double kernel_sum = 0.0;
  for (int i = 0; i < kSide; ++i) {
    for (int j = 0; j < kSide; ++j) {
      const double di = i - kSide / 2, dj = j - kSide / 2;
      kernel[i][j] = std::exp(-(di * di + dj * dj) / (2 * kSigma * kSigma));
      kernel_sum += kernel[i][j];
    }
  }
  for (auto& row : kernel) {
    for (double& v : row) v /= kernel_sum;
  }

  for (int c = 0; c < channels; ++c) {
    const std::size_t plane = static_cast<std::size_t>(c) * h * w;
    for (int wy = 0; wy + kSide <= h; ++wy) {
      for (int wx = 0; wx + kSide <= w; ++wx) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int dy = 0; dy < kSide; ++dy) {
          for (int dx = 0; dx < kSide; ++dx) {
            const std::size_t idx = plane + static_cast<std::size_t>(wy + dy) * w + wx + dx;
            const double a = xv[idx], b = yv[idx], k = kernel[dy][dx];
            mx += k * a;
            my += k * b;
            sxx += k * a * a;
            syy += k * b * b;
            sxy += k * a * b;
          }
        }
        total += ssim_term(mx, my, sxx - mx * mx, syy - my * my, sxy - mx * my, c1, c2);
        ++count;
      }
    }
  }
  return total / count;
}

double cosine_similarity(const std::vector<float>& u, const std::vector<float>& v) {
  if (u.size() != v.size()) {
    throw DimError("cosine_similarity: length mismatch " + std::to_string(u.size()) +
                   " vs " + std::to_string(v.size()));
  }
  double dot = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += static_cast<double>(u[i]) * v[i];
    nu += static_cast<double>(u[i]) * u[i];
    nv += static_cast<double>(v[i]) * v[i];
  }
  if (nu == 0.0 || nv == 0.0) {
    throw ContractError("cosine_similarity undefined for zero-norm input");
  }
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

double roi_attention_mass(const MhaActivations& trace, const RoiTokenSet& roi, int layer) {
  const int s = trace.seq_len();
  const int heads = trace.num_heads();
  double mass = 0.0;
  for (int h = 0; h < heads; ++h) {
    const auto& a = trace.attention(layer, h).data();
    for (int i = 0; i < s; ++i) {
      for (int token : roi.indices) {
        mass += a[static_cast<std::size_t>(i) * s + token];
      }
    }
  }
  // Row normalization puts H*S units of attention in a layer.
  return mass / (static_cast<double>(heads) * s);
}

RolloutMap attention_rollout(const MhaActivations& trace, int up_to_layer) {
  if (up_to_layer < 1 || up_to_layer > trace.traced_layers()) {
    throw ContractError("attention_rollout: depth " + std::to_string(up_to_layer) +
                        " not traced (depth " + std::to_string(trace.traced_layers()) + ")");
  }
  const int s = trace.seq_len();
  const int heads = trace.num_heads();
  const std::size_t n = static_cast<std::size_t>(s) * s;

  std::vector<float> rollout(n, 0.0f);
  for (int i = 0; i < s; ++i) rollout[static_cast<std::size_t>(i) * s + i] = 1.0f;

  std::vector<double> augmented(n);
  std::vector<float> next(n);
  for (int l = 0; l < up_to_layer; ++l) {
    std::fill(augmented.begin(), augmented.end(), 0.0);
    for (int h = 0; h < heads; ++h) {
      const auto& a = trace.attention(l, h).data();
      for (std::size_t i = 0; i < n; ++i) augmented[i] += a[i];
    }
    for (std::size_t i = 0; i < n; ++i) augmented[i] /= heads;
    for (int i = 0; i < s; ++i) augmented[static_cast<std::size_t>(i) * s + i] += 1.0;
    for (int i = 0; i < s; ++i) {
      double row_sum = 0.0;
      for (int j = 0; j < s; ++j) row_sum += augmented[static_cast<std::size_t>(i) * s + j];
      for (int j = 0; j < s; ++j) augmented[static_cast<std::size_t>(i) * s + j] /= row_sum;
    }
    // R <- A~_l . R
    for (int i = 0; i < s; ++i) {
      for (int j = 0; j < s; ++j) {
        double acc = 0.0;
        for (int t = 0; t < s; ++t) {
          acc += augmented[static_cast<std::size_t>(i) * s + t] *
                 static_cast<double>(rollout[static_cast<std::size_t>(t) * s + j]);
        }
        next[static_cast<std::size_t>(i) * s + j] = static_cast<float>(acc);
      }
    }
    rollout.swap(next);
  }

  RolloutMap map;
  map.seq_len = s;
  map.matrix = std::move(rollout);
  map.patch_heat.resize(s - 1);
  for (int p = 0; p + 1 < s; ++p) map.patch_heat[p] = map.matrix[p + 1];
  return map;
}

double diagonal_dominance(const MhaActivations& trace, int layer) {
  const int s = trace.seq_len();
  const int heads = trace.num_heads();
  double total = 0.0;
  for (int h = 0; h < heads; ++h) {
    const auto& a = trace.attention(layer, h).data();
    double diag = 0.0;
    for (int i = 0; i < s; ++i) diag += a[static_cast<std::size_t>(i) * s + i];
    total += diag / s;
  }
  return total / heads;
}

std::vector<float> averaged_attention_map(const std::vector<const MhaActivations*>& traces,
                                          int layer) {
  if (traces.empty()) throw ContractError("averaged_attention_map: empty batch");
  const int s = traces[0]->seq_len();
  const int heads = traces[0]->num_heads();
  const std::size_t n = static_cast<std::size_t>(s) * s;
  std::vector<double> acc(n, 0.0);
  for (const MhaActivations* trace : traces) {
    if (trace->seq_len() != s) {
      throw ContractError("averaged_attention_map: inconsistent seq_len in batch");
    }
    for (int h = 0; h < heads; ++h) {
      const auto& a = trace->attention(layer, h).data();
      for (std::size_t i = 0; i < n; ++i) acc[i] += a[i];
    }
  }
  const double denom = static_cast<double>(traces.size()) * heads;
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(acc[i] / denom);
  return out;
}

namespace {

std::vector<float> token_row(const Tensor& tokens, int row) {
  const int d = tokens.dim(1);
  const auto& v = tokens.data();
  return std::vector<float>(v.begin() + static_cast<std::size_t>(row) * d,
                            v.begin() + static_cast<std::size_t>(row + 1) * d);
}

}  // namespace

MetricsBundle compute_metrics(const ViTModel& model, const Tensor& clean_image,
                              const Tensor& adv_image, const RoiTokenSet& roi, int l_max) {
  const int layers = model.config.num_layers;
  EncoderOutput clean = forward(model, clean_image, layers);
  EncoderOutput adv = forward(model, adv_image, layers);

  MetricsBundle m;
  m.ssim = ssim(clean_image, adv_image);
  m.feature_cosine_global =
      cosine_similarity(clean.pooled.data(), adv.pooled.data());

  const int s = model.config.seq_len();
  double roi_sum = 0.0, bg_sum = 0.0;
  int roi_n = 0, bg_n = 0;
  for (int token = 1; token < s; ++token) {
    const double cs = cosine_similarity(token_row(clean.tokens, token),
                                        token_row(adv.tokens, token));
    if (roi.contains(token)) {
      roi_sum += cs;
      ++roi_n;
    } else {
      bg_sum += cs;
      ++bg_n;
    }
  }
  m.feature_cosine_roi = roi_n > 0 ? roi_sum / roi_n : std::nan("");
  m.feature_cosine_background = bg_n > 0 ? bg_sum / bg_n : std::nan("");

  for (int l = 0; l < layers; ++l) {
    m.roi_attention_mass_clean.push_back(roi_attention_mass(*clean.trace, roi, l));
    m.roi_attention_mass_adv.push_back(roi_attention_mass(*adv.trace, roi, l));
    m.diagonal_dominance_clean.push_back(diagonal_dominance(*clean.trace, l));
    m.diagonal_dominance_adv.push_back(diagonal_dominance(*adv.trace, l));
  }
  m.rollout_roi_mass_clean = attention_rollout(*clean.trace, l_max).roi_mass(roi);
  m.rollout_roi_mass_adv = attention_rollout(*adv.trace, l_max).roi_mass(roi);
  return m;
}

}  // namespace vip
