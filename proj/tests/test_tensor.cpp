#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ref_model.hpp"
#include "test_support.hpp"
#include "vip/attack.hpp"
#include "vip/roi.hpp"
#include "vip/tensor.hpp"
#include "vip/vit.hpp"

using namespace vip;
using vip::testing::gradcheck;
using vip::testing::random_uniform;

TEST_CASE("matmul identity and small products") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor b({2, 2}, {3, 4, 5, 6});
  CHECK(matmul(eye, b).data() == std::vector<float>{3, 4, 5, 6});

  Tensor row({1, 2}, {1, 2});
  Tensor col({2, 1}, {3, 4});
  CHECK(matmul(row, col).item() == doctest::Approx(11.0f));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a({2, 3});
  Tensor b({4, 5});
  CHECK_THROWS_WITH_AS(matmul(a, b),
                       "matmul: inner dimensions differ: [2 3] vs [4 5]", DimError);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(11);
  const std::vector<float> a0 = random_uniform(rng, 9);
  const std::vector<float> b0 = random_uniform(rng, 9);
  Tensor b({3, 3}, b0);
  const testing::ref::dvec bd = testing::ref::to_double(b0);
  auto sum = [](const testing::ref::dvec& v) {
    double acc = 0;
    for (double x : v) acc += x;
    return acc;
  };
  const double worst = gradcheck(
      [&](const Tensor& a) { return matmul(a, b); },
      [&](const std::vector<float>& a) {
        return sum(testing::ref::matmul(testing::ref::to_double(a), bd, 3, 3, 3));
      },
      a0, {3, 3});
  CHECK(worst < 1e-3);

  Tensor a({3, 3}, a0);
  const testing::ref::dvec ad = testing::ref::to_double(a0);
  const double worst_b = gradcheck(
      [&](const Tensor& t) { return matmul(a, t); },
      [&](const std::vector<float>& t) {
        return sum(testing::ref::matmul(ad, testing::ref::to_double(t), 3, 3, 3));
      },
      b0, {3, 3});
  CHECK(worst_b < 1e-3);
}

TEST_CASE("softmax rows: uniform and stabilized cases") {
  Tensor x({1, 4}, {0, 0, 0, 0});
  const Tensor uniform = softmax_rows(x);
  for (float v : uniform.data()) CHECK(v == doctest::Approx(0.25));

  Tensor large({1, 2}, {1000, 1000});
  const Tensor stabilized = softmax_rows(large);
  for (float v : stabilized.data()) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("softmax rows sum to one for large magnitudes") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x({4, 6}, random_uniform(rng, 24, -1e4, 1e4));
    Tensor y = softmax_rows(x);
    for (int i = 0; i < 4; ++i) {
      double row = 0;
      for (int j = 0; j < 6; ++j) row += y.at({i, j});
      CHECK(row == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
}

TEST_CASE("softmax gradient of ROI-column sum matches finite differences") {
  Rng rng(17);
  const std::vector<float> x0 = random_uniform(rng, 16);
  const double worst = gradcheck(
      [](const Tensor& x) { return gather_columns(softmax_rows(x), {1, 3}); },
      [](const std::vector<float>& x) {
        const testing::ref::dvec y =
            testing::ref::softmax_rows(testing::ref::to_double(x), 4, 4);
        double acc = 0;
        for (int i = 0; i < 4; ++i) acc += y[i * 4 + 1] + y[i * 4 + 3];
        return acc;
      },
      x0, {4, 4});
  CHECK(worst < 1e-3);
}

TEST_CASE("elementwise suite basics") {
  Tensor x({1, 2}, {3, 4});
  CHECK(l2_norm_rows(x).item() == doctest::Approx(5.0f));

  Tensor constant({1, 4}, {7, 7, 7, 7});
  Tensor gain = Tensor::full({4}, 1.0f);
  Tensor bias({4});
  const Tensor centered = layernorm(constant, gain, bias);
  for (float v : centered.data()) {
    CHECK(v == doctest::Approx(0.0f));
  }

  CHECK(gelu(Tensor::scalar(0.0f)).item() == 0.0f);

  Tensor a({2}, {1, 2});
  Tensor b({2}, {10, 20});
  CHECK(add(a, b).data() == std::vector<float>{11, 22});
  CHECK(sub(a, b).data() == std::vector<float>{-9, -18});
  CHECK(mul(a, b).data() == std::vector<float>{10, 40});
  CHECK(mul_scalar(a, 3.0f).data() == std::vector<float>{3, 6});
}

TEST_CASE("gather_columns rejects out-of-range indices") {
  Tensor x({2, 3});
  CHECK_THROWS_AS(gather_columns(x, {0, 3}), IndexError);
  CHECK_THROWS_AS(gather_rows(x, {-1}), IndexError);
}

TEST_CASE("transpose, reshape, concat, slice round structure") {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor xt = transpose(x);
  CHECK(xt.shape() == Shape{3, 2});
  CHECK(xt.at({2, 1}) == 6);

  Tensor r = reshape(x, {3, 2});
  CHECK(r.at({2, 1}) == 6);
  CHECK_THROWS_AS(reshape(x, {4, 2}), DimError);

  Tensor top({1, 2}, {1, 2});
  Tensor bottom({2, 2}, {3, 4, 5, 6});
  Tensor stacked = concat({top, bottom}, 0);
  CHECK(stacked.shape() == Shape{3, 2});
  CHECK(stacked.at({2, 0}) == 5);

  Tensor left({2, 1}, {1, 3});
  Tensor right({2, 2}, {2, 9, 4, 9});
  Tensor wide = concat({left, right}, 1);
  CHECK(wide.shape() == Shape{2, 3});
  CHECK(wide.at({1, 1}) == 4);

  Tensor sliced = slice_rows(stacked, 1, 3);
  CHECK(sliced.data() == std::vector<float>{3, 4, 5, 6});
  CHECK_THROWS_AS(slice_rows(stacked, 2, 2), IndexError);
}

TEST_CASE("backward on linear and quadratic losses") {
  Tensor delta({4}, {1, 2, 3, 4}, true);
  sum_all(delta).backward();
  CHECK(delta.grad() == std::vector<float>{1, 1, 1, 1});

  Tensor d2({2}, {1, -2}, true);
  sum_all(mul(d2, d2)).backward();
  CHECK(d2.grad() == std::vector<float>{2, -4});
}

TEST_CASE("backward requires a scalar") {
  Tensor x({2}, {1, 2}, true);
  CHECK_THROWS_AS(x.backward(), ContractError);
  CHECK_THROWS_AS(mul_scalar(x, 2.0f).backward(), ContractError);
}

TEST_CASE("gradient accumulation is additive until reset") {
  Tensor x({3}, {1, 2, 3}, true);
  auto loss = [&] { return sum_all(mul(x, x)); };
  loss().backward();
  const std::vector<float> once = x.grad();
  loss().backward();
  for (std::size_t i = 0; i < once.size(); ++i) {
    CHECK(x.grad()[i] == doctest::Approx(2 * once[i]));
  }
  x.zero_grad();
  loss().backward();
  CHECK(x.grad() == once);
}

TEST_CASE("backward is linear in the loss scale") {
  Rng rng(23);
  const std::vector<float> x0 = random_uniform(rng, 12);
  const float alpha = 3.5f;

  Tensor x1({3, 4}, x0, true);
  sum_all(mul(softmax_rows(x1), x1)).backward();
  Tensor x2({3, 4}, x0, true);
  mul_scalar(sum_all(mul(softmax_rows(x2), x2)), alpha).backward();

  for (std::size_t i = 0; i < x0.size(); ++i) {
    CHECK(x2.grad()[i] == doctest::Approx(alpha * x1.grad()[i]).epsilon(1e-5));
  }
}

TEST_CASE("every differentiable op passes a randomized gradient check") {
  using testing::ref::dvec;
  using testing::ref::to_double;
  Rng rng(31);
  const Shape shape{3, 4};
  const std::vector<float> x0 = random_uniform(rng, 12);
  const std::vector<float> w0 = random_uniform(rng, 12);
  const std::vector<float> g0 = random_uniform(rng, 4, 0.5, 1.5);
  const std::vector<float> b0 = random_uniform(rng, 4);
  const std::vector<float> o0 = random_uniform(rng, 12);
  Tensor w({4, 3}, w0);
  Tensor gain({4}, g0);
  Tensor bias({4}, b0);
  Tensor other({3, 4}, o0);
  const dvec wd = to_double(w0), gd = to_double(g0), bd = to_double(b0), od = to_double(o0);

  auto dot_other = [&](const dvec& v) {
    double acc = 0;
    for (std::size_t i = 0; i < v.size(); ++i) acc += v[i] * od[i];
    return acc;
  };

  struct Case {
    const char* name;
    std::function<Tensor(const Tensor&)> build;
    std::function<double(const std::vector<float>&)> ref;
  };
  const std::vector<Case> cases = {
      {"matmul", [&](const Tensor& x) { return matmul(x, w); },
       [&](const std::vector<float>& x) {
         double acc = 0;
         for (double v : testing::ref::matmul(to_double(x), wd, 3, 4, 3)) acc += v;
         return acc;
       }},
      {"softmax", [&](const Tensor& x) { return mul(softmax_rows(x), other); },
       [&](const std::vector<float>& x) {
         return dot_other(testing::ref::softmax_rows(to_double(x), 3, 4));
       }},
      {"add", [&](const Tensor& x) { return mul(add(x, other), other); },
       [&](const std::vector<float>& x) {
         double acc = 0;
         for (std::size_t i = 0; i < od.size(); ++i) acc += (x[i] + od[i]) * od[i];
         return acc;
       }},
      {"sub", [&](const Tensor& x) { return mul(sub(x, other), other); },
       [&](const std::vector<float>& x) {
         double acc = 0;
         for (std::size_t i = 0; i < od.size(); ++i) acc += (x[i] - od[i]) * od[i];
         return acc;
       }},
      {"mul", [&](const Tensor& x) { return mul(mul(x, other), other); },
       [&](const std::vector<float>& x) {
         double acc = 0;
         for (std::size_t i = 0; i < od.size(); ++i) acc += x[i] * od[i] * od[i];
         return acc;
       }},
      {"mul_scalar", [&](const Tensor& x) { return mul(mul_scalar(x, -1.7f), other); },
       [&](const std::vector<float>& x) {
         double acc = 0;
         for (std::size_t i = 0; i < od.size(); ++i) {
           acc += static_cast<double>(-1.7f) * x[i] * od[i];
         }
         return acc;
       }},
      {"add_rowwise", [&](const Tensor& x) { return mul(add_rowwise(x, bias), other); },
       [&](const std::vector<float>& x) {
         double acc = 0;
         for (int i = 0; i < 3; ++i) {
           for (int j = 0; j < 4; ++j) acc += (x[i * 4 + j] + bd[j]) * od[i * 4 + j];
         }
         return acc;
       }},
      {"gelu", [&](const Tensor& x) { return mul(gelu(x), other); },
       [&](const std::vector<float>& x) {
         double acc = 0;
         for (std::size_t i = 0; i < od.size(); ++i) acc += testing::ref::gelu(x[i]) * od[i];
         return acc;
       }},
      {"layernorm", [&](const Tensor& x) { return mul(layernorm(x, gain, bias), other); },
       [&](const std::vector<float>& x) {
         return dot_other(testing::ref::layernorm(to_double(x), gd, bd, 3, 4));
       }},
      {"transpose", [&](const Tensor& x) { return matmul(transpose(x), other); },
       [&](const std::vector<float>& x) {
         dvec xt(12);
         for (int i = 0; i < 3; ++i) {
           for (int j = 0; j < 4; ++j) xt[j * 3 + i] = x[i * 4 + j];
         }
         double acc = 0;
         for (double v : testing::ref::matmul(xt, od, 4, 3, 4)) acc += v;
         return acc;
       }},
      {"reshape", [&](const Tensor& x) { return mul(reshape(x, {4, 3}), w); },
       [&](const std::vector<float>& x) {
         double acc = 0;
         for (std::size_t i = 0; i < wd.size(); ++i) acc += x[i] * wd[i];
         return acc;
       }},
      {"concat0",
       [&](const Tensor& x) { return mul(concat({x, other}, 0), concat({other, x}, 0)); },
       [&](const std::vector<float>& x) {
         double acc = 0;
         for (std::size_t i = 0; i < od.size(); ++i) acc += 2.0 * x[i] * od[i];
         return acc;
       }},
      {"concat1",
       [&](const Tensor& x) { return mul(concat({x, other}, 1), concat({other, x}, 1)); },
       [&](const std::vector<float>& x) {
         double acc = 0;
         for (std::size_t i = 0; i < od.size(); ++i) acc += 2.0 * x[i] * od[i];
         return acc;
       }},
      {"slice_rows", [&](const Tensor& x) { return slice_rows(x, 1, 3); },
       [&](const std::vector<float>& x) {
         double acc = 0;
         for (int i = 4; i < 12; ++i) acc += x[i];
         return acc;
       }},
      {"gather_rows",
       [&](const Tensor& x) {
         return gather_rows(x, {0, 2, 2});  // duplicate index
       },
       [&](const std::vector<float>& x) {
         double acc = 0;
         for (int j = 0; j < 4; ++j) acc += x[j] + 2.0 * x[2 * 4 + j];
         return acc;
       }},
      {"gather_columns", [&](const Tensor& x) { return gather_columns(x, {1, 1, 3}); },
       [&](const std::vector<float>& x) {
         double acc = 0;
         for (int i = 0; i < 3; ++i) acc += 2.0 * x[i * 4 + 1] + x[i * 4 + 3];
         return acc;
       }},
      {"l2_norm_rows", [&](const Tensor& x) { return l2_norm_rows(x); },
       [&](const std::vector<float>& x) {
         double acc = 0;
         for (int i = 0; i < 3; ++i) {
           double norm2 = 0;
           for (int j = 0; j < 4; ++j) norm2 += static_cast<double>(x[i * 4 + j]) * x[i * 4 + j];
           acc += std::sqrt(norm2);
         }
         return acc;
       }},
      {"clip", [&](const Tensor& x) { return mul(clip(x, -0.5f, 0.5f), other); },
       [&](const std::vector<float>& x) {
         double acc = 0;
         for (std::size_t i = 0; i < od.size(); ++i) {
           acc += std::clamp(static_cast<double>(x[i]), -0.5, 0.5) * od[i];
         }
         return acc;
       }},
  };
  for (const Case& c : cases) {
    INFO("op: " << std::string(c.name));
    CHECK(gradcheck(c.build, c.ref, x0, shape) < 1e-3);
  }
}

TEST_CASE("image-shaped ops pass gradient checks") {
  using testing::ref::dvec;
  Rng rng(37);
  const Shape img{3, 4, 4};
  const std::vector<float> x0 = random_uniform(rng, 48);
  const std::vector<float> scale = {1.1f, 0.9f, -1.3f};
  const std::vector<float> bias = {0.1f, -0.2f, 0.3f};
  const std::vector<float> w0 = random_uniform(rng, 24);
  Tensor weights({12, 2}, w0);
  const dvec wd = testing::ref::to_double(w0);

  // channel_affine -> patchify(2) -> matmul, mirrored in double
  auto ref = [&](const std::vector<float>& x) {
    dvec patches(4 * 12);
    for (int pr = 0; pr < 2; ++pr) {
      for (int pc = 0; pc < 2; ++pc) {
        const int patch = pr * 2 + pc;
        for (int c = 0; c < 3; ++c) {
          for (int py = 0; py < 2; ++py) {
            for (int px = 0; px < 2; ++px) {
              const double v = x[(c * 4 + pr * 2 + py) * 4 + pc * 2 + px];
              patches[patch * 12 + (c * 2 + py) * 2 + px] =
                  v * scale[c] + bias[c];
            }
          }
        }
      }
    }
    double acc = 0;
    for (double v : testing::ref::matmul(patches, wd, 4, 12, 2)) acc += v;
    return acc;
  };
  CHECK(gradcheck(
            [&](const Tensor& x) {
              return matmul(patchify(channel_affine(x, scale, bias), 2), weights);
            },
            ref, x0, img) < 1e-3);
}

TEST_CASE("graph replay determinism") {
  Rng rng(41);
  const std::vector<float> x0 = random_uniform(rng, 16);
  auto run = [&](std::vector<float>* grad_out) {
    Tensor x({4, 4}, x0, true);
    Tensor loss = sum_all(gather_columns(softmax_rows(matmul(x, x)), {0, 2}));
    loss.backward();
    *grad_out = x.grad();
    return loss.item();
  };
  std::vector<float> g1, g2;
  const float l1 = run(&g1);
  const float l2 = run(&g2);
  CHECK(l1 == l2);
  CHECK(vip::testing::checksum(g1) == vip::testing::checksum(g2));
}

TEST_CASE("clip passes gradient only inside the range") {
  Tensor x({3}, {-2.0f, 0.5f, 3.0f}, true);
  sum_all(clip(x, 0.0f, 1.0f)).backward();
  CHECK(x.grad() == std::vector<float>{0, 1, 0});
}

TEST_CASE("full attack loss gradient on a two-layer toy encoder matches finite differences") {
  ViTConfig cfg;
  cfg.resolution = 32;
  cfg.patch_dim = 16;
  cfg.embed_dim = 32;
  cfg.num_heads = 2;
  cfg.num_layers = 2;
  cfg.mlp_hidden_dim = 64;
  const ViTModel model = init_random(cfg, 3);
  const testing::ref::RefViT ref(model);

  Rng rng(43);
  std::vector<float> pixels(3 * 32 * 32);
  for (float& v : pixels) v = static_cast<float>(rng.uniform(5.0, 250.0));

  const RoiTokenSet roi = extract_roi_token_idx({BoundingBox{0, 0, 16, 16}}, cfg);
  AttackConfig attack;
  attack.mode = LossMode::AV;
  attack.l_max = 2;
  attack.lambda_v = 1.0f;

  Tensor image({3, 32, 32}, pixels, true);
  Tensor loss = loss_total(*forward(model, image, 2).trace, roi, attack);
  loss.backward();
  const std::vector<float>& analytic = image.grad();

  // Pixel step of 1e-4 on the [0,1] scale.
  const double step = 1e-4 * 255.0;
  auto ref_loss = [&](const std::vector<float>& x) {
    return ref.loss_total(testing::ref::to_double(x), roi, LossMode::AV, 2, 1.0);
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double numeric = testing::central_difference(ref_loss, pixels, i, step);
    worst = std::max(worst, testing::rel_err(analytic[i], numeric));
  }
  CHECK(worst < 1e-3);
}
