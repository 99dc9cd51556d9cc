#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ref_model.hpp"
#include "test_support.hpp"
#include "vip/attack.hpp"
#include "vip/image_io.hpp"

using namespace vip;

namespace {

MhaActivations uniform_trace(int seq_len, int layers, int heads, int d_v = 4) {
  MhaActivations trace(seq_len, heads);
  Tensor a = Tensor::full({seq_len, seq_len}, 1.0f / seq_len);
  Tensor v = Tensor::full({seq_len, d_v}, 1.0f);
  for (int l = 0; l < layers; ++l) {
    trace.push_layer();
    for (int h = 0; h < heads; ++h) trace.record_head(a, v, v, v);
  }
  return trace;
}

RoiTokenSet make_roi(std::vector<int> indices, int seq_len) {
  RoiTokenSet roi;
  roi.indices = std::move(indices);
  roi.seq_len = seq_len;
  return roi;
}

struct Fixture {
  ViTModel model;
  Tensor image;
  RoiTokenSet roi;
};

Fixture load_fixture() {
  Fixture f;
  f.model = init_random(vip::testing::fixture_config(), vip::testing::kFixtureModelSeed);
  f.image = image_to_tensor(read_ppm(vip::testing::fixture_image_path()));
  f.roi = extract_roi_token_idx(read_box_file(vip::testing::fixture_boxes_path()),
                                f.model.config);
  return f;
}

AttackConfig fixture_attack_config() {
  AttackConfig cfg;
  cfg.mode = LossMode::AV;
  cfg.l_max = 2;
  cfg.lambda_v = 1.0f;
  return cfg;
}

}  // namespace

TEST_CASE("attack defaults carry the reference hyperparameters") {
  const AttackConfig cfg;
  CHECK(cfg.mode == LossMode::AV);
  CHECK(cfg.lambda_v == 1.0);
  CHECK(cfg.learning_rate == 1e-3);
  CHECK(cfg.max_iters == 1500);
  CHECK(cfg.patience == 10);
  CHECK(cfg.check_every == 100);
  CHECK(cfg.optimizer == OptimizerKind::Adam);
  CHECK_FALSE(cfg.l_inf_budget.has_value());
}

TEST_CASE("attention loss on uniform attention equals the ROI size per layer-head") {
  const int s = 197;
  MhaActivations one = uniform_trace(s, 1, 1);
  const RoiTokenSet roi = make_roi({1, 2, 15, 16}, s);
  CHECK(loss_attention(one, roi, 1).item() == doctest::Approx(4.0).epsilon(1e-5));

  MhaActivations six = uniform_trace(s, 2, 3);
  CHECK(loss_attention(six, roi, 2).item() == doctest::Approx(24.0).epsilon(1e-5));
}

TEST_CASE("attention loss over all patch tokens is seq_len minus the CLS column") {
  const int s = 9;
  Rng rng(3);
  MhaActivations trace(s, 2);
  trace.push_layer();
  for (int h = 0; h < 2; ++h) {
    Tensor a = softmax_rows(
        Tensor({s, s}, vip::testing::random_uniform(rng, static_cast<std::size_t>(s) * s,
                                                    -2.0, 2.0)));
    Tensor v = Tensor::full({s, 3}, 0.5f);
    trace.record_head(a.detached(), v, v, v);
  }
  std::vector<int> all_patches;
  for (int j = 1; j < s; ++j) all_patches.push_back(j);
  const float loss = loss_attention(trace, make_roi(all_patches, s), 1).item();

  double direct = 0.0;
  for (int h = 0; h < 2; ++h) {
    const auto& a = trace.attention(0, h).data();
    for (int i = 0; i < s; ++i) {
      for (int j = 1; j < s; ++j) direct += a[static_cast<std::size_t>(i) * s + j];
    }
  }
  double cls_mass = 0.0;
  for (int h = 0; h < 2; ++h) {
    const auto& a = trace.attention(0, h).data();
    for (int i = 0; i < s; ++i) cls_mass += a[static_cast<std::size_t>(i) * s];
  }
  CHECK(loss == doctest::Approx(direct).epsilon(1e-5));
  CHECK(loss == doctest::Approx(2 * s - cls_mass).epsilon(1e-4));
}

TEST_CASE("value-norm loss closed forms") {
  const int s = 3;
  MhaActivations zero(s, 1);
  zero.push_layer();
  {
    Tensor a = Tensor::full({s, s}, 1.0f / s);
    Tensor v({s, 2}, {9, 9, 0, 0, 9, 9});  // ROI row 1 is zero
    zero.record_head(a, v, v, v);
  }
  CHECK(loss_value_norm(zero, make_roi({1}, s), 1).item() == 0.0f);

  MhaActivations triangle(s, 1);
  triangle.push_layer();
  {
    Tensor a = Tensor::full({s, s}, 1.0f / s);
    Tensor v({s, 2}, {9, 9, 3, 4, 9, 9});
    triangle.record_head(a, v, v, v);
  }
  CHECK(loss_value_norm(triangle, make_roi({1}, s), 1).item() == doctest::Approx(5.0f));
}

TEST_CASE("value-norm loss matches an out-of-graph recomputation from a second forward") {
  Fixture f = load_fixture();
  const int l_max = 2;
  EncoderOutput out = forward(f.model, f.image, l_max);
  const float graph_loss = loss_value_norm(*out.trace, f.roi, l_max).item();

  EncoderOutput again = forward(f.model, f.image, l_max);
  double recomputed = 0.0;
  const int hd = f.model.config.head_dim();
  for (int l = 0; l < l_max; ++l) {
    for (int h = 0; h < f.model.config.num_heads; ++h) {
      const auto& v = again.trace->value(l, h).data();
      for (int token : f.roi.indices) {
        double norm2 = 0.0;
        for (int t = 0; t < hd; ++t) {
          const double e = v[static_cast<std::size_t>(token) * hd + t];
          norm2 += e * e;
        }
        recomputed += std::sqrt(norm2);
      }
    }
  }
  CHECK(graph_loss == doctest::Approx(recomputed).epsilon(1e-5));

  // The double-precision reference encoder lands close as well.
  const vip::testing::ref::RefViT ref(f.model);
  const double ref_loss =
      ref.loss_total(vip::testing::ref::to_double(f.image.data()), f.roi, LossMode::V,
                     l_max, 0.0);
  CHECK(graph_loss == doctest::Approx(ref_loss).epsilon(1e-4));
}

TEST_CASE("loss_total composes modes as specified") {
  Fixture f = load_fixture();
  EncoderOutput out = forward(f.model, f.image, 2);

  AttackConfig cfg = fixture_attack_config();
  LossBreakdown av;
  const float total = loss_total(*out.trace, f.roi, cfg, &av).item();
  CHECK(total == av.total);
  CHECK(av.total ==
        doctest::Approx(av.attention + cfg.lambda_v * av.value).epsilon(1e-6));

  cfg.lambda_v = 0.0f;
  LossBreakdown degenerate;
  loss_total(*out.trace, f.roi, cfg, &degenerate);
  cfg.mode = LossMode::A;
  LossBreakdown pure_a;
  loss_total(*out.trace, f.roi, cfg, &pure_a);
  CHECK(degenerate.total == pure_a.total);

  cfg.mode = LossMode::V;
  LossBreakdown pure_v;
  loss_total(*out.trace, f.roi, cfg, &pure_v);
  CHECK(pure_v.attention == 0.0f);
  CHECK(pure_v.total == pure_v.value);
}

TEST_CASE("loss guards reject excessive depth") {
  MhaActivations trace = uniform_trace(5, 1, 2);
  const RoiTokenSet roi = make_roi({1}, 5);
  CHECK_THROWS_AS(loss_attention(trace, roi, 2), ContractError);
  CHECK_THROWS_AS(loss_value_norm(trace, roi, 2), ContractError);
}

TEST_CASE("sign-gd step follows the sign with sign(0) = 0") {
  std::vector<float> delta{0, 0, 0};
  step_sign_gd(delta, {2, -3, 0}, 1e-3f);
  CHECK(delta == std::vector<float>{-1e-3f, 1e-3f, 0});

  step_sign_gd(delta, {0, 0, 0}, 1e-3f);
  CHECK(delta == std::vector<float>{-1e-3f, 1e-3f, 0});
}

TEST_CASE("repeated clamped steps respect an l-inf budget") {
  Rng rng(15);
  const float budget = 0.2f * 255.0f;
  const float step = 1e-3f * 255.0f;
  std::vector<float> delta(64, 0.0f);
  std::vector<float> clean(64);
  for (float& c : clean) c = static_cast<float>(rng.uniform(0.0, 255.0));
  for (int t = 0; t < 1000; ++t) {
    std::vector<float> grad(64);
    for (float& g : grad) g = static_cast<float>(rng.uniform(-1.0, 1.0));
    step_sign_gd(delta, grad, step);
    project_delta(delta, clean, budget);
    for (std::size_t i = 0; i < delta.size(); ++i) {
      CHECK(std::fabs(delta[i]) <= budget);
      CHECK(clean[i] + delta[i] >= 0.0f);
      CHECK(clean[i] + delta[i] <= 255.0f);
    }
  }
}

TEST_CASE("adam first step has magnitude close to the step size") {
  const float step = 1e-3f;
  std::vector<float> delta{0, 0, 0};
  AdamMoments moments;
  const std::vector<float> grad{0.5f, -2.0f, 1e-12f};
  step_adam(delta, moments, grad, step);
  // m_hat = g, v_hat = g^2, update = -step * g / (|g| + eps)
  CHECK(delta[0] == doctest::Approx(-step).epsilon(1e-4));
  CHECK(delta[1] == doctest::Approx(step).epsilon(1e-4));
  CHECK(std::fabs(delta[2]) < step);  // eps dominates a vanishing gradient

  std::vector<float> still{0, 0, 0};
  AdamMoments quiet;
  for (int t = 0; t < 10; ++t) step_adam(still, quiet, {0, 0, 0}, step);
  CHECK(still == std::vector<float>{0, 0, 0});
}

TEST_CASE("attack rejects bad configurations and inputs") {
  Fixture f = load_fixture();
  AttackConfig cfg = fixture_attack_config();

  cfg.max_iters = 0;
  CHECK_THROWS_AS(run_attack(f.model, f.image, f.roi, cfg), ContractError);

  cfg = fixture_attack_config();
  cfg.l_max = 9;
  CHECK_THROWS_AS(run_attack(f.model, f.image, f.roi, cfg), ContractError);

  cfg = fixture_attack_config();
  RoiTokenSet empty;
  empty.seq_len = f.model.config.seq_len();
  CHECK_THROWS_AS(run_attack(f.model, f.image, empty, cfg), ContractError);

  Tensor wrong({3, 32, 32});
  CHECK_THROWS_AS(run_attack(f.model, wrong, f.roi, cfg), DimError);
}

TEST_CASE("a single iteration records one loss entry and stops at max_iters") {
  Fixture f = load_fixture();
  AttackConfig cfg = fixture_attack_config();
  cfg.max_iters = 1;
  const AttackResult result = run_attack(f.model, f.image, f.roi, cfg);
  CHECK(result.iterations == 1);
  CHECK(result.loss_history.size() == 1);
  CHECK(result.stop_reason == StopReason::MaxIters);
  CHECK_FALSE(result.success);
}

TEST_CASE("loss decomposition holds at every recorded iteration") {
  Fixture f = load_fixture();
  AttackConfig cfg = fixture_attack_config();
  cfg.lambda_v = 0.7f;
  cfg.max_iters = 25;
  const AttackResult result = run_attack(f.model, f.image, f.roi, cfg);
  REQUIRE(result.loss_history.size() == 25);
  for (const LossBreakdown& b : result.loss_history) {
    CHECK(b.total ==
          doctest::Approx(b.attention + cfg.lambda_v * b.value).epsilon(1e-6));
  }
  CHECK(result.loss_history.back().total < result.loss_history.front().total);
}

TEST_CASE("lambda_v zero reproduces mode A bit for bit") {
  Fixture f = load_fixture();
  AttackConfig cfg = fixture_attack_config();
  cfg.max_iters = 20;
  cfg.lambda_v = 0.0f;
  const AttackResult with_zero = run_attack(f.model, f.image, f.roi, cfg);

  cfg.mode = LossMode::A;
  const AttackResult pure_a = run_attack(f.model, f.image, f.roi, cfg);

  CHECK(vip::testing::checksum(with_zero.delta.data()) ==
        vip::testing::checksum(pure_a.delta.data()));
  for (std::size_t i = 0; i < with_zero.loss_history.size(); ++i) {
    CHECK(with_zero.loss_history[i].total == pure_a.loss_history[i].total);
  }
}

TEST_CASE("pixel validity holds with and without a budget") {
  Fixture f = load_fixture();
  AttackConfig cfg = fixture_attack_config();
  cfg.max_iters = 30;
  cfg.l_inf_budget = 20.0f;

  const auto& clean = f.image.data();
  int violations = 0;
  run_attack(f.model, f.image, f.roi, cfg,
             [&](int, const std::vector<float>& delta) {
               for (std::size_t i = 0; i < delta.size(); ++i) {
                 if (std::fabs(delta[i]) > 20.0f + 1e-6f) ++violations;
                 const float pixel = clean[i] + delta[i];
                 if (pixel < 0.0f || pixel > 255.0f) ++violations;
               }
             });
  CHECK(violations == 0);
}

TEST_CASE("mode V performs zero attention reads and still optimizes") {
  Fixture f = load_fixture();
  AttackConfig cfg = fixture_attack_config();
  cfg.mode = LossMode::V;
  cfg.max_iters = 20;
  const AttackResult v_run = run_attack(f.model, f.image, f.roi, cfg);
  CHECK(v_run.attention_trace_reads == 0);
  CHECK(v_run.loss_history.back().total < v_run.loss_history.front().total);

  cfg.mode = LossMode::AV;
  const AttackResult av_run = run_attack(f.model, f.image, f.roi, cfg);
  CHECK(av_run.attention_trace_reads > 0);
}

TEST_CASE("identical inputs give bit-identical attack results") {
  Fixture f = load_fixture();
  AttackConfig cfg = fixture_attack_config();
  cfg.max_iters = 15;
  const AttackResult a = run_attack(f.model, f.image, f.roi, cfg);
  const AttackResult b = run_attack(f.model, f.image, f.roi, cfg);
  CHECK(vip::testing::checksum(a.delta.data()) == vip::testing::checksum(b.delta.data()));
  CHECK(vip::testing::checksum(a.adversarial_image.data()) ==
        vip::testing::checksum(b.adversarial_image.data()));
  REQUIRE(a.loss_history.size() == b.loss_history.size());
  for (std::size_t i = 0; i < a.loss_history.size(); ++i) {
    CHECK(a.loss_history[i].total == b.loss_history[i].total);
  }
}

TEST_CASE("sign-gd attack trajectories are deterministic and clipped") {
  Fixture f = load_fixture();
  AttackConfig cfg = fixture_attack_config();
  cfg.optimizer = OptimizerKind::SignGd;
  cfg.max_iters = 10;
  const AttackResult a = run_attack(f.model, f.image, f.roi, cfg);
  const AttackResult b = run_attack(f.model, f.image, f.roi, cfg);
  CHECK(vip::testing::checksum(a.delta.data()) == vip::testing::checksum(b.delta.data()));
  // Every step moves by exactly 0, +step or -step before projection.
  const float step = cfg.learning_rate * 255.0f;
  int moved = 0;
  for (float v : a.delta.data()) {
    if (v != 0.0f) ++moved;
    CHECK(std::fabs(v) <= 10 * step + 1e-4f);
  }
  CHECK(moved > 0);
}

TEST_CASE("a diverging forward aborts with a diagnostic") {
  Fixture f = load_fixture();
  // Saturate one value projection so its norms overflow to infinity.
  std::fill(f.model.layers[0].wv.mutable_data().begin(),
            f.model.layers[0].wv.mutable_data().end(), 3e38f);
  f.model.finalize();
  AttackConfig cfg = fixture_attack_config();
  cfg.mode = LossMode::V;
  cfg.max_iters = 3;
  try {
    run_attack(f.model, f.image, f.roi, cfg);
    FAIL("expected the attack to abort");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("non-finite loss at iteration") != std::string::npos);
  }
}
