#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "vip/attack.hpp"
#include "vip/image_io.hpp"
#include "vip/metrics.hpp"
#include "vip/roi.hpp"
#include "vip/vit.hpp"

namespace py = pybind11;

namespace {

vip::Tensor tensor_from_array(py::array_t<float, py::array::c_style | py::array::forcecast> arr) {
  vip::Shape shape;
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) {
    shape.push_back(static_cast<int>(arr.shape(i)));
  }
  std::vector<float> data(arr.data(), arr.data() + arr.size());
  return vip::Tensor(std::move(shape), std::move(data));
}

py::array_t<float> array_from_tensor(const vip::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> arr(shape);
  std::copy(t.data().begin(), t.data().end(), arr.mutable_data());
  return arr;
}

py::array_t<float> matrix_array(const std::vector<float>& data, int rows, int cols) {
  py::array_t<float> arr({rows, cols});
  std::copy(data.begin(), data.end(), arr.mutable_data());
  return arr;
}

py::dict metrics_dict(const vip::MetricsBundle& m) {
  py::dict d;
  d["ssim"] = m.ssim;
  d["feature_cosine_global"] = m.feature_cosine_global;
  d["feature_cosine_roi"] = m.feature_cosine_roi;
  d["feature_cosine_background"] = m.feature_cosine_background;
  d["roi_attention_mass_clean"] = m.roi_attention_mass_clean;
  d["roi_attention_mass_adv"] = m.roi_attention_mass_adv;
  d["rollout_roi_mass_clean"] = m.rollout_roi_mass_clean;
  d["rollout_roi_mass_adv"] = m.rollout_roi_mass_adv;
  d["diagonal_dominance_clean"] = m.diagonal_dominance_clean;
  d["diagonal_dominance_adv"] = m.diagonal_dominance_adv;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "ViT region-concealment attack: encoder, ROI mapping, attack loop, metrics";

  py::register_exception<vip::Error>(m, "VipError", PyExc_RuntimeError);

  py::class_<vip::ViTConfig>(m, "ViTConfig")
      .def(py::init<>())
      .def_readwrite("resolution", &vip::ViTConfig::resolution)
      .def_readwrite("patch_dim", &vip::ViTConfig::patch_dim)
      .def_readwrite("embed_dim", &vip::ViTConfig::embed_dim)
      .def_readwrite("num_heads", &vip::ViTConfig::num_heads)
      .def_readwrite("num_layers", &vip::ViTConfig::num_layers)
      .def_readwrite("mlp_hidden_dim", &vip::ViTConfig::mlp_hidden_dim)
      .def_property_readonly("seq_len", &vip::ViTConfig::seq_len)
      .def("validate", &vip::ViTConfig::validate);

  py::class_<vip::ViTModel>(m, "ViTModel")
      .def_property_readonly("config", [](const vip::ViTModel& m_) { return m_.config; });

  py::class_<vip::MhaActivations, std::shared_ptr<vip::MhaActivations>>(m, "MhaActivations")
      .def_property_readonly("traced_layers", &vip::MhaActivations::traced_layers)
      .def_property_readonly("attention_reads", &vip::MhaActivations::attention_reads)
      .def("attention",
           [](const vip::MhaActivations& t, int layer, int head) {
             return array_from_tensor(t.attention(layer, head));
           })
      .def("value", [](const vip::MhaActivations& t, int layer, int head) {
        return array_from_tensor(t.value(layer, head));
      });

  py::class_<vip::EncoderOutput>(m, "EncoderOutput")
      .def_property_readonly("tokens",
                             [](const vip::EncoderOutput& o) { return array_from_tensor(o.tokens); })
      .def_property_readonly("pooled",
                             [](const vip::EncoderOutput& o) { return array_from_tensor(o.pooled); })
      .def_property_readonly("trace", [](const vip::EncoderOutput& o) { return o.trace; });

  py::class_<vip::BoundingBox>(m, "BoundingBox")
      .def(py::init([](int x0, int y0, int x1, int y1) {
             return vip::BoundingBox{x0, y0, x1, y1};
           }),
           py::arg("x0"), py::arg("y0"), py::arg("x1"), py::arg("y1"))
      .def_readwrite("x0", &vip::BoundingBox::x0)
      .def_readwrite("y0", &vip::BoundingBox::y0)
      .def_readwrite("x1", &vip::BoundingBox::x1)
      .def_readwrite("y1", &vip::BoundingBox::y1);

  py::class_<vip::RoiTokenSet>(m, "RoiTokenSet")
      .def_readonly("indices", &vip::RoiTokenSet::indices)
      .def_readonly("seq_len", &vip::RoiTokenSet::seq_len)
      .def("contains", &vip::RoiTokenSet::contains);

  py::class_<vip::AttackConfig>(m, "AttackConfig")
      .def(py::init<>())
      .def_property(
          "mode",
          [](const vip::AttackConfig& c) { return vip::to_string(c.mode); },
          [](vip::AttackConfig& c, const std::string& s) { c.mode = vip::parse_loss_mode(s); })
      .def_property(
          "optimizer",
          [](const vip::AttackConfig& c) { return vip::to_string(c.optimizer); },
          [](vip::AttackConfig& c, const std::string& s) {
            c.optimizer = vip::parse_optimizer(s);
          })
      .def_readwrite("l_max", &vip::AttackConfig::l_max)
      .def_readwrite("lambda_v", &vip::AttackConfig::lambda_v)
      .def_readwrite("learning_rate", &vip::AttackConfig::learning_rate)
      .def_readwrite("max_iters", &vip::AttackConfig::max_iters)
      .def_readwrite("patience", &vip::AttackConfig::patience)
      .def_readwrite("check_every", &vip::AttackConfig::check_every)
      .def_readwrite("l_inf_budget", &vip::AttackConfig::l_inf_budget)
      .def_readwrite("tau_rollout", &vip::AttackConfig::tau_rollout)
      .def_readwrite("tau_feat", &vip::AttackConfig::tau_feat)
      .def_readwrite("seed", &vip::AttackConfig::seed);

  py::class_<vip::AttackResult>(m, "AttackResult")
      .def_property_readonly(
          "adversarial_image",
          [](const vip::AttackResult& r) { return array_from_tensor(r.adversarial_image); })
      .def_property_readonly(
          "delta", [](const vip::AttackResult& r) { return array_from_tensor(r.delta); })
      .def_property_readonly("loss_history",
                             [](const vip::AttackResult& r) {
                               py::list out;
                               for (const vip::LossBreakdown& b : r.loss_history) {
                                 out.append(py::make_tuple(b.total, b.attention, b.value));
                               }
                               return out;
                             })
      .def_property_readonly(
          "stop_reason",
          [](const vip::AttackResult& r) { return vip::to_string(r.stop_reason); })
      .def_readonly("iterations", &vip::AttackResult::iterations)
      .def_readonly("success", &vip::AttackResult::success)
      .def_readonly("attention_trace_reads", &vip::AttackResult::attention_trace_reads)
      .def_property_readonly(
          "metrics", [](const vip::AttackResult& r) { return metrics_dict(r.metrics); });

  m.def("init_random", &vip::init_random, py::arg("config"), py::arg("seed"));
  m.def("save_weights", &vip::save_weights, py::arg("model"), py::arg("path"));
  m.def("load_weights", &vip::load_weights, py::arg("path"));

  m.def(
      "forward",
      [](const vip::ViTModel& model, py::array_t<float> image, int trace_up_to) {
        return vip::forward(model, tensor_from_array(std::move(image)), trace_up_to);
      },
      py::arg("model"), py::arg("image"), py::arg("trace_up_to"));

  m.def("extract_roi_token_idx", &vip::extract_roi_token_idx, py::arg("boxes"),
        py::arg("config"));

  m.def(
      "run_attack",
      [](const vip::ViTModel& model, py::array_t<float> image, const vip::RoiTokenSet& roi,
         const vip::AttackConfig& config, bool with_metrics) {
        vip::Tensor clean = tensor_from_array(std::move(image));
        vip::AttackResult result = vip::run_attack(model, clean, roi, config);
        if (with_metrics) {
          result.metrics = vip::compute_metrics(model, clean, result.adversarial_image, roi,
                                                config.l_max);
        }
        return result;
      },
      py::arg("model"), py::arg("image"), py::arg("roi"), py::arg("config"),
      py::arg("with_metrics") = true);

  m.def(
      "ssim",
      [](py::array_t<float> x, py::array_t<float> y, int window, double dynamic_range) {
        return vip::ssim(tensor_from_array(std::move(x)), tensor_from_array(std::move(y)),
                         window, dynamic_range);
      },
      py::arg("x"), py::arg("y"), py::arg("window") = 8, py::arg("dynamic_range") = 255.0);

  m.def("cosine_similarity", &vip::cosine_similarity, py::arg("u"), py::arg("v"));

  m.def(
      "attention_rollout",
      [](const vip::MhaActivations& trace, int up_to_layer) {
        vip::RolloutMap map = vip::attention_rollout(trace, up_to_layer);
        return matrix_array(map.matrix, map.seq_len, map.seq_len);
      },
      py::arg("trace"), py::arg("up_to_layer"));

  m.def("roi_attention_mass", &vip::roi_attention_mass, py::arg("trace"), py::arg("roi"),
        py::arg("layer"));
  m.def("diagonal_dominance", &vip::diagonal_dominance, py::arg("trace"), py::arg("layer"));

  m.def(
      "read_ppm",
      [](const std::string& path) {
        return array_from_tensor(vip::image_to_tensor(vip::read_ppm(path)));
      },
      py::arg("path"), "Read a binary PPM into a [3, H, W] float array in [0, 255]");
  m.def(
      "resize_bilinear",
      [](py::array_t<float> image, int target_resolution) {
        return array_from_tensor(image_to_tensor(
            vip::resize_bilinear(vip::tensor_to_image(tensor_from_array(std::move(image))),
                                 target_resolution)));
      },
      py::arg("image"), py::arg("target_resolution"));
  m.def(
      "scale_box",
      [](const vip::BoundingBox& box, int from_w, int from_h, int to_w, int to_h) {
        return vip::scale_box(box, from_w, from_h, to_w, to_h);
      },
      py::arg("box"), py::arg("from_w"), py::arg("from_h"), py::arg("to_w"), py::arg("to_h"));
  m.def(
      "write_ppm",
      [](py::array_t<float> image, const std::string& path) {
        vip::write_ppm(vip::tensor_to_image(tensor_from_array(std::move(image))), path);
      },
      py::arg("image"), py::arg("path"));
}
