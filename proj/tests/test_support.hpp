#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vip/rng.hpp"
#include "vip/tensor.hpp"
#include "vip/vit.hpp"

namespace vip::testing {

// Central-difference derivative of f at element i. The float32 inputs
// quantize the step, so the divisor is the realized spacing, and f reports
// its value in double so the difference is not limited by float rounding of
// the result.
inline double central_difference(const std::function<double(const std::vector<float>&)>& f,
                                 std::vector<float> x, std::size_t i, double step) {
  const float saved = x[i];
  const float plus = static_cast<float>(saved + step);
  const float minus = static_cast<float>(saved - step);
  x[i] = plus;
  const double f_plus = f(x);
  x[i] = minus;
  const double f_minus = f(x);
  x[i] = saved;
  return (f_plus - f_minus) / (static_cast<double>(plus) - static_cast<double>(minus));
}

// Relative error with an absolute floor for gradients too small for a
// float32 forward pass to resolve.
inline double rel_err(double got, double want, double floor = 1e-3) {
  const double denom = std::max({std::fabs(got), std::fabs(want), floor});
  return std::fabs(got - want) / denom;
}

// Checks the autodiff gradient of sum(build(x)) against central differences
// of an independent double-precision reference evaluator. Returns the worst
// relative error over all input elements.
inline double gradcheck(const std::function<Tensor(const Tensor&)>& build,
                        const std::function<double(const std::vector<float>&)>& ref_sum,
                        const std::vector<float>& x0, const Shape& shape,
                        double step = 1e-4) {
  Tensor leaf(shape, x0, true);
  Tensor loss = sum_all(build(leaf));
  loss.backward();
  const std::vector<float> analytic = leaf.grad();

  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double numeric = central_difference(ref_sum, x0, i, step);
    worst = std::max(worst, rel_err(analytic[i], numeric));
  }
  return worst;
}

inline std::vector<float> random_uniform(Rng& rng, std::size_t n, double lo = -1.0,
                                         double hi = 1.0) {
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

// The seeded desk-scale evaluation fixture shared by attack and acceptance
// tests: a 4-block encoder at resolution 64 with the committed image and a
// top-left quadrant ROI.
inline ViTConfig fixture_config() {
  ViTConfig cfg;
  cfg.resolution = 64;
  cfg.patch_dim = 16;
  cfg.embed_dim = 64;
  cfg.num_heads = 4;
  cfg.num_layers = 4;
  cfg.mlp_hidden_dim = 128;
  return cfg;
}

inline constexpr std::uint64_t kFixtureModelSeed = 7;

inline std::string fixture_image_path() {
  return std::string(VIP_TEST_DATA_DIR) + "/fixture_64.ppm";
}

inline std::string fixture_boxes_path() {
  return std::string(VIP_TEST_DATA_DIR) + "/fixture_boxes.txt";
}

// FNV-1a over raw float bytes; used for bit-exactness checks.
inline std::uint64_t checksum(const std::vector<float>& data) {
  std::uint64_t h = 1469598103934665603ull;
  const unsigned char* bytes = reinterpret_cast<const unsigned char*>(data.data());
  for (std::size_t i = 0; i < data.size() * sizeof(float); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace vip::testing
