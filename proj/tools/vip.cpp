// Command-line front end: seeded model generation, attacks, hyperparameter
// sweeps and attention analysis.
//
// Exit codes: 0 success, 2 usage or precondition violation, 3 attack
// finished without satisfying the success predicate, 4 I/O or format error.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "vip/attack.hpp"
#include "vip/image_io.hpp"
#include "vip/metrics.hpp"
#include "vip/report.hpp"
#include "vip/roi.hpp"
#include "vip/vit.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::uint64_t resolve_seed(const CLI::App* cmd, std::uint64_t flag_value) {
  if (cmd->count("--seed") > 0) return flag_value;  // explicit flag wins
  if (const char* env = std::getenv("VIP_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw vip::ContractError(std::string("VIP_SEED is not an integer: ") + env);
    }
  }
  return flag_value;
}

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// --- gen-weights -----------------------------------------------------------

struct GenFlags {
  vip::ViTConfig config;
  std::uint64_t seed = 7;
  std::string out;
};

void run_gen_weights(const GenFlags& f) {
  f.config.validate();
  vip::ViTModel model = vip::init_random(f.config, f.seed);
  vip::save_weights(model, f.out);
  std::cout << "wrote " << f.out << " (seq_len " << f.config.seq_len() << ")\n";
}

// --- attack ----------------------------------------------------------------

struct AttackFlags {
  std::string model_path;
  std::string image_path;
  std::string boxes_path;
  std::string out_dir = ".";
  std::string mode = "A+V";
  std::string optimizer = "adam";
  vip::AttackConfig config;
  std::optional<double> linf;
};

struct LoadedInputs {
  vip::ViTModel model;
  vip::Tensor image;
  std::vector<vip::BoundingBox> boxes;  // model-space
  vip::RoiTokenSet roi;
};

LoadedInputs load_attack_inputs(const AttackFlags& f) {
  LoadedInputs in;
  in.model = vip::load_weights(f.model_path);
  const int res = in.model.config.resolution;

  vip::RawImage raw = vip::read_ppm(f.image_path);
  std::vector<vip::BoundingBox> boxes = vip::read_box_file(f.boxes_path);
  if (boxes.empty()) throw vip::ContractError("box file contains no boxes");
  if (raw.width != res || raw.height != res) {
    for (vip::BoundingBox& b : boxes) {
      b = vip::scale_box(b, raw.width, raw.height, res, res);
    }
    raw = vip::resize_bilinear(raw, res);
  }
  in.image = vip::image_to_tensor(raw);
  in.boxes = std::move(boxes);
  in.roi = vip::extract_roi_token_idx(in.boxes, in.model.config);
  return in;
}

vip::AttackConfig make_config(const AttackFlags& f, const CLI::App* cmd) {
  vip::AttackConfig cfg = f.config;
  cfg.mode = vip::parse_loss_mode(f.mode);
  cfg.optimizer = vip::parse_optimizer(f.optimizer);
  cfg.l_inf_budget = f.linf;
  cfg.seed = resolve_seed(cmd, cfg.seed);
  if (cfg.mode == vip::LossMode::V && cmd->count("--lambda-v") > 0) {
    std::cerr << "warning: --lambda-v is ignored in mode V\n";
  }
  return cfg;
}

// Per-patch heat of |delta| summed over channels, at patch granularity 1x1
// (pixel granularity).
std::vector<float> delta_heat(const vip::Tensor& delta) {
  const int h = delta.dim(1), w = delta.dim(2);
  const auto& d = delta.data();
  std::vector<float> heat(static_cast<std::size_t>(h) * w, 0.0f);
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < heat.size(); ++i) {
      heat[i] += std::fabs(d[static_cast<std::size_t>(c) * h * w + i]);
    }
  }
  return heat;
}

void write_rollout_heatmap(const vip::ViTModel& model, const vip::Tensor& image,
                           int l_max, const std::string& path) {
  vip::EncoderOutput out = vip::forward(model, image, l_max);
  vip::RolloutMap map = vip::attention_rollout(*out.trace, l_max);
  const int grid = model.config.grid();
  vip::write_ppm(vip::render_heatmap(map.patch_heat, grid, grid, model.config.resolution),
                 path);
}

int run_attack_cmd(const AttackFlags& f, const CLI::App* cmd) {
  const auto start = std::chrono::steady_clock::now();
  LoadedInputs in = load_attack_inputs(f);
  vip::AttackConfig cfg = make_config(f, cmd);

  vip::AttackResult result = vip::run_attack(in.model, in.image, in.roi, cfg);
  result.metrics =
      vip::compute_metrics(in.model, in.image, result.adversarial_image, in.roi, cfg.l_max);

  fs::create_directories(f.out_dir);
  const fs::path out(f.out_dir);
  const std::string adv_path = (out / "adversarial.ppm").string();
  const std::string delta_path = (out / "delta_heatmap.ppm").string();
  const std::string rollout_clean_path = (out / "rollout_clean.ppm").string();
  const std::string rollout_adv_path = (out / "rollout_adv.ppm").string();
  const std::string result_path = (out / "result.json").string();
  const std::string manifest_path = (out / "manifest.json").string();

  vip::write_ppm(vip::tensor_to_image(result.adversarial_image), adv_path);
  const int res = in.model.config.resolution;
  vip::write_ppm(vip::render_heatmap(delta_heat(result.delta), res, res, res), delta_path);
  write_rollout_heatmap(in.model, in.image, cfg.l_max, rollout_clean_path);
  write_rollout_heatmap(in.model, result.adversarial_image, cfg.l_max, rollout_adv_path);

  vip::write_json_file(
      vip::attack_result_json(in.model.config, cfg, in.boxes, in.roi, result), result_path);

  ordered_json inputs;
  inputs["model"] = f.model_path;
  inputs["image"] = f.image_path;
  inputs["boxes"] = f.boxes_path;
  vip::write_json_file(
      vip::run_manifest_json(
          "attack", inputs,
          {adv_path, delta_path, rollout_clean_path, rollout_adv_path, result_path,
           manifest_path},
          cfg.seed, elapsed_seconds(start)),
      manifest_path);

  std::cout << "stop_reason=" << vip::to_string(result.stop_reason)
            << " iterations=" << result.iterations
            << " final_loss=" << fmt6(result.loss_history.back().total)
            << " ssim=" << fmt6(result.metrics.ssim) << '\n';
  return result.success ? 0 : 3;
}

// --- sweep -----------------------------------------------------------------

struct SweepFlags {
  AttackFlags attack;
  std::string param;  // "lmax" | "lambda-v"
  std::vector<double> values;
  std::string out_csv = "sweep.csv";
  int jobs = 1;
};

struct SweepRow {
  double value = 0.0;
  bool failed = false;
  std::string error;
  double final_loss = 0.0;
  double roi_mass_clean = 0.0;
  double roi_mass_adv = 0.0;
  double rollout_ratio = 0.0;
  double ssim = 0.0;
  double feat_global = 0.0;
  double feat_roi = 0.0;
  double feat_background = 0.0;
  int iterations = 0;
  std::string stop_reason;
};

SweepRow run_sweep_case(const LoadedInputs& in, vip::AttackConfig cfg,
                        const std::string& param, double value) {
  SweepRow row;
  row.value = value;
  if (param == "lmax") {
    cfg.l_max = static_cast<int>(value);
  } else {
    cfg.lambda_v = static_cast<float>(value);
  }
  try {
    vip::AttackResult result = vip::run_attack(in.model, in.image, in.roi, cfg);
    const vip::MetricsBundle m =
        vip::compute_metrics(in.model, in.image, result.adversarial_image, in.roi, cfg.l_max);
    double mass_clean = 0.0, mass_adv = 0.0;
    for (int l = 0; l < cfg.l_max; ++l) {
      mass_clean += m.roi_attention_mass_clean[l];
      mass_adv += m.roi_attention_mass_adv[l];
    }
    row.final_loss = result.loss_history.back().total;
    row.roi_mass_clean = mass_clean / cfg.l_max;
    row.roi_mass_adv = mass_adv / cfg.l_max;
    row.rollout_ratio = m.rollout_roi_mass_adv / m.rollout_roi_mass_clean;
    row.ssim = m.ssim;
    row.feat_global = m.feature_cosine_global;
    row.feat_roi = m.feature_cosine_roi;
    row.feat_background = m.feature_cosine_background;
    row.iterations = result.iterations;
    row.stop_reason = vip::to_string(result.stop_reason);
  } catch (const std::exception& e) {
    row.failed = true;
    row.error = e.what();
  }
  return row;
}

int run_sweep_cmd(const SweepFlags& f, const CLI::App* attack_cmd) {
  const auto start = std::chrono::steady_clock::now();
  if (f.values.empty()) throw vip::ContractError("sweep requires at least one value");
  if (f.param != "lmax" && f.param != "lambda-v") {
    throw vip::ContractError("sweep --param must be lmax or lambda-v");
  }
  LoadedInputs in = load_attack_inputs(f.attack);
  const vip::AttackConfig base = make_config(f.attack, attack_cmd);

  std::vector<SweepRow> rows(f.values.size());
  const int jobs = std::max(1, f.jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= f.values.size()) return;
      rows[i] = run_sweep_case(in, base, f.param, f.values[i]);
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  std::ofstream csv(f.out_csv);
  if (!csv) throw vip::IoError("cannot open " + f.out_csv + " for writing");
  csv << "param,value,final_loss,roi_mass_clean,roi_mass_adv,rollout_mass_ratio,"
         "ssim,feat_cosine_global,feat_cosine_roi,feat_cosine_background,"
         "iterations,stop_reason\n";
  for (const SweepRow& r : rows) {
    csv << f.param << ',' << fmt6(r.value) << ',';
    if (r.failed) {
      csv << ",,,,,,,,0,error: " << r.error << '\n';
      continue;
    }
    csv << fmt6(r.final_loss) << ',' << fmt6(r.roi_mass_clean) << ','
        << fmt6(r.roi_mass_adv) << ',' << fmt6(r.rollout_ratio) << ',' << fmt6(r.ssim)
        << ',' << fmt6(r.feat_global) << ',' << fmt6(r.feat_roi) << ','
        << fmt6(r.feat_background) << ',' << r.iterations << ',' << r.stop_reason << '\n';
  }
  csv.close();
  if (!csv) throw vip::IoError("write failed for " + f.out_csv);

  ordered_json inputs;
  inputs["model"] = f.attack.model_path;
  inputs["image"] = f.attack.image_path;
  inputs["boxes"] = f.attack.boxes_path;
  inputs["param"] = f.param;
  inputs["values"] = f.values;
  const std::string manifest_path = f.out_csv + ".manifest.json";
  vip::write_json_file(vip::run_manifest_json("sweep", inputs, {f.out_csv, manifest_path},
                                              base.seed, elapsed_seconds(start)),
                       manifest_path);
  std::cout << "wrote " << f.out_csv << " (" << rows.size() << " rows)\n";
  return 0;
}

// --- analyze ---------------------------------------------------------------

struct AnalyzeFlags {
  std::string model_path;
  std::vector<std::string> images;
  std::vector<int> layers;  // 1-based
  std::string out_dir = ".";
  int render_res = 448;
};

int run_analyze_cmd(const AnalyzeFlags& f) {
  const auto start = std::chrono::steady_clock::now();
  if (f.images.empty()) throw vip::ContractError("analyze requires at least one image");
  vip::ViTModel model = vip::load_weights(f.model_path);
  const int layers = model.config.num_layers;
  for (int l : f.layers) {
    if (l < 1 || l > layers) {
      throw vip::ContractError("analyze: layer " + std::to_string(l) + " outside [1, " +
                               std::to_string(layers) + "]");
    }
  }

  std::vector<vip::EncoderOutput> outputs;
  outputs.reserve(f.images.size());
  for (const std::string& path : f.images) {
    vip::RawImage raw = vip::read_ppm(path);
    if (raw.width != model.config.resolution || raw.height != model.config.resolution) {
      raw = vip::resize_bilinear(raw, model.config.resolution);
    }
    outputs.push_back(vip::forward(model, vip::image_to_tensor(raw), layers));
  }
  std::vector<const vip::MhaActivations*> traces;
  for (const vip::EncoderOutput& out : outputs) traces.push_back(out.trace.get());

  fs::create_directories(f.out_dir);
  const fs::path out(f.out_dir);
  std::vector<std::string> artifacts;

  for (int layer : f.layers) {
    const std::vector<float> avg = vip::averaged_attention_map(traces, layer - 1);
    const int s = model.config.seq_len();
    const std::string path =
        (out / ("avg_attention_layer" + std::to_string(layer) + ".ppm")).string();
    vip::write_ppm(vip::render_heatmap(avg, s, s, f.render_res), path);
    artifacts.push_back(path);
  }

  const std::string csv_path = (out / "dominance.csv").string();
  std::ofstream csv(csv_path);
  if (!csv) throw vip::IoError("cannot open " + csv_path + " for writing");
  csv << "layer,diagonal_dominance\n";
  for (int l = 0; l < layers; ++l) {
    double acc = 0.0;
    for (const vip::MhaActivations* trace : traces) {
      acc += vip::diagonal_dominance(*trace, l);
    }
    csv << (l + 1) << ',' << fmt6(acc / traces.size()) << '\n';
  }
  csv.close();
  artifacts.push_back(csv_path);

  ordered_json inputs;
  inputs["model"] = f.model_path;
  inputs["images"] = f.images;
  const std::string manifest_path = (out / "analyze_manifest.json").string();
  artifacts.push_back(manifest_path);
  vip::write_json_file(
      vip::run_manifest_json("analyze", inputs, artifacts, 0, elapsed_seconds(start)),
      manifest_path);
  std::cout << "wrote " << artifacts.size() << " artifacts to " << f.out_dir << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VIP: conceal an image region from a ViT encoder by steering "
               "attention and value norms away from it"};
  app.require_subcommand(1);

  GenFlags gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-weights", "Generate a seeded random model");
  gen_cmd->add_option("--res", gen.config.resolution, "Input resolution (square)")
      ->capture_default_str();
  gen_cmd->add_option("--patch", gen.config.patch_dim, "Patch dimension")
      ->capture_default_str();
  gen_cmd->add_option("--embed", gen.config.embed_dim, "Embedding dimension")
      ->capture_default_str();
  gen_cmd->add_option("--heads", gen.config.num_heads, "Attention heads")
      ->capture_default_str();
  gen_cmd->add_option("--layers", gen.config.num_layers, "Encoder blocks")
      ->capture_default_str();
  gen_cmd->add_option("--mlp", gen.config.mlp_hidden_dim, "MLP hidden dimension")
      ->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Weight seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output VITW file")->required();

  AttackFlags atk;
  CLI::App* attack_cmd = app.add_subcommand("attack", "Optimize a concealing perturbation");
  auto add_attack_flags = [](CLI::App* cmd, AttackFlags& f) {
    cmd->add_option("--model", f.model_path, "VITW weight file")->required();
    cmd->add_option("--image", f.image_path, "Clean image (binary PPM)")->required();
    cmd->add_option("--boxes", f.boxes_path, "ROI box list file")->required();
    cmd->add_option("--mode", f.mode, "Loss mode: A, A+V or V")->capture_default_str();
    cmd->add_option("--lmax", f.config.l_max, "Number of attacked MHA blocks")
        ->capture_default_str();
    cmd->add_option("--lambda-v", f.config.lambda_v, "Weight of the value-norm term")
        ->capture_default_str();
    cmd->add_option("--optimizer", f.optimizer, "adam or sign-gd")->capture_default_str();
    cmd->add_option("--alpha", f.config.learning_rate, "Learning rate on a [0,1] scale")
        ->capture_default_str();
    cmd->add_option("--iters", f.config.max_iters, "Maximum iterations")
        ->capture_default_str();
    cmd->add_option("--patience", f.config.patience,
                    "Convergence checks without improvement before stopping")
        ->capture_default_str();
    cmd->add_option("--check-every", f.config.check_every,
                    "Iterations between convergence tests")
        ->capture_default_str();
    cmd->add_option("--linf", f.linf, "L-infinity budget in pixel units (0..255 scale)");
    cmd->add_option("--tau-rollout", f.config.tau_rollout,
                    "Success: adv rollout ROI mass < tau * clean value")
        ->capture_default_str();
    cmd->add_option("--tau-feat", f.config.tau_feat,
                    "Success: mean ROI-token feature cosine below this")
        ->capture_default_str();
    cmd->add_option("--seed", f.config.seed, "Run seed (VIP_SEED overrides default)")
        ->capture_default_str();
  };
  add_attack_flags(attack_cmd, atk);
  attack_cmd->add_option("--out-dir", atk.out_dir, "Artifact directory")
      ->capture_default_str();

  SweepFlags sweep;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Run one attack per parameter value");
  add_attack_flags(sweep_cmd, sweep.attack);
  sweep_cmd->add_option("--param", sweep.param, "Swept parameter: lmax or lambda-v")
      ->required();
  sweep_cmd->add_option("--values", sweep.values, "Values to sweep")->required();
  sweep_cmd->add_option("--out", sweep.out_csv, "Output CSV path")->capture_default_str();
  sweep_cmd->add_option("--jobs", sweep.jobs, "Parallel attacks")->capture_default_str();

  AnalyzeFlags analyze;
  CLI::App* analyze_cmd =
      app.add_subcommand("analyze", "Averaged attention maps and diagonal dominance");
  analyze_cmd->add_option("--model", analyze.model_path, "VITW weight file")->required();
  analyze_cmd->add_option("--images", analyze.images, "Input images (binary PPM)")
      ->required();
  analyze_cmd->add_option("--layer", analyze.layers, "1-based layer(s) to render");
  analyze_cmd->add_option("--out-dir", analyze.out_dir, "Artifact directory")
      ->capture_default_str();
  analyze_cmd->add_option("--render-res", analyze.render_res, "Heatmap resolution")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
    if (gen_cmd->parsed()) {
      gen.seed = resolve_seed(gen_cmd, gen.seed);
      run_gen_weights(gen);
      return 0;
    }
    if (attack_cmd->parsed()) return run_attack_cmd(atk, attack_cmd);
    if (sweep_cmd->parsed()) return run_sweep_cmd(sweep, sweep_cmd);
    if (analyze_cmd->parsed()) return run_analyze_cmd(analyze);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const vip::FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const vip::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const vip::ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const vip::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
