#include "vip/vit.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "vip/rng.hpp"

namespace vip {

void ViTConfig::validate() const {
  if (resolution <= 0) throw ContractError("config: resolution must be positive");
  if (patch_dim <= 0) throw ContractError("config: patch_dim must be positive");
  if (resolution % patch_dim != 0) {
    throw ContractError("config: resolution " + std::to_string(resolution) +
                        " not divisible by patch_dim " + std::to_string(patch_dim));
  }
  if (embed_dim <= 0) throw ContractError("config: embed_dim must be positive");
  if (num_heads <= 0) throw ContractError("config: num_heads must be positive");
  if (embed_dim % num_heads != 0) {
    throw ContractError("config: embed_dim " + std::to_string(embed_dim) +
                        " not divisible by num_heads " + std::to_string(num_heads));
  }
  if (num_layers <= 0) throw ContractError("config: num_layers must be positive");
  if (mlp_hidden_dim <= 0) throw ContractError("config: mlp_hidden_dim must be positive");
  for (float s : norm_std) {
    if (s <= 0.0f) throw ContractError("config: norm_std entries must be positive");
  }
}

void ViTModel::finalize() {
  const int d = config.embed_dim;
  const int hd = config.head_dim();
  for (LayerWeights& layer : layers) {
    layer.heads.clear();
    layer.heads.reserve(config.num_heads);
    for (int h = 0; h < config.num_heads; ++h) {
      std::vector<int> cols(hd);
      std::iota(cols.begin(), cols.end(), h * hd);
      HeadWeights head;
      head.wq = gather_columns(layer.wq, cols).detached();
      head.wk = gather_columns(layer.wk, cols).detached();
      head.wv = gather_columns(layer.wv, cols).detached();
      std::vector<float> bq(hd), bk(hd), bv(hd);
      for (int j = 0; j < hd; ++j) {
        bq[j] = layer.bq.data()[h * hd + j];
        bk[j] = layer.bk.data()[h * hd + j];
        bv[j] = layer.bv.data()[h * hd + j];
      }
      head.bq = Tensor({hd}, std::move(bq));
      head.bk = Tensor({hd}, std::move(bk));
      head.bv = Tensor({hd}, std::move(bv));
      layer.heads.push_back(std::move(head));
    }
  }
  (void)d;
}

void MhaActivations::push_layer() {
  attn_.emplace_back();
  value_.emplace_back();
  query_.emplace_back();
  key_.emplace_back();
}

void MhaActivations::record_head(Tensor a, Tensor v, Tensor q, Tensor k) {
  attn_.back().push_back(std::move(a));
  value_.back().push_back(std::move(v));
  query_.back().push_back(std::move(q));
  key_.back().push_back(std::move(k));
}

void MhaActivations::check(int layer, int head) const {
  if (layer < 0 || layer >= traced_layers()) {
    throw ContractError("trace: layer " + std::to_string(layer) + " not traced (depth " +
                        std::to_string(traced_layers()) + ")");
  }
  if (head < 0 || head >= num_heads_) {
    throw IndexError("trace: head " + std::to_string(head) + " out of range");
  }
}

const Tensor& MhaActivations::attention(int layer, int head) const {
  check(layer, head);
  ++attention_reads_;
  return attn_[layer][head];
}

const Tensor& MhaActivations::value(int layer, int head) const {
  check(layer, head);
  return value_[layer][head];
}

const Tensor& MhaActivations::query(int layer, int head) const {
  check(layer, head);
  return query_[layer][head];
}

const Tensor& MhaActivations::key(int layer, int head) const {
  check(layer, head);
  return key_[layer][head];
}

EncoderOutput forward(const ViTModel& model, const Tensor& image, int trace_up_to) {
  const ViTConfig& cfg = model.config;
  cfg.validate();
  const Shape expected{3, cfg.resolution, cfg.resolution};
  if (image.shape() != expected) {
    throw DimError("forward: image shape " + shape_str(image.shape()) +
                   " does not match model input " + shape_str(expected));
  }
  if (trace_up_to < 0 || trace_up_to > cfg.num_layers) {
    throw ContractError("forward: trace_up_to " + std::to_string(trace_up_to) +
                        " exceeds num_layers " + std::to_string(cfg.num_layers));
  }

  // Pixel [0,255] -> (x/255 - mean)/std, folded into one affine.
  std::vector<float> scale(3), bias(3);
  for (int c = 0; c < 3; ++c) {
    scale[c] = 1.0f / (255.0f * cfg.norm_std[c]);
    bias[c] = -cfg.norm_mean[c] / cfg.norm_std[c];
  }
  Tensor x = channel_affine(image, scale, bias);

  Tensor tokens = add_rowwise(matmul(patchify(x, cfg.patch_dim), model.patch_proj_w),
                              model.patch_proj_b);
  Tensor seq = add(concat({model.cls_embed, tokens}, 0), model.pos_embed);

  auto trace = std::make_shared<MhaActivations>(cfg.seq_len(), cfg.num_heads);
  const float attn_scale = 1.0f / std::sqrt(static_cast<float>(cfg.head_dim()));

  for (int l = 0; l < cfg.num_layers; ++l) {
    const LayerWeights& lw = model.layers[l];
    const bool traced = l < trace_up_to;
    if (traced) trace->push_layer();

    Tensor normed = layernorm(seq, lw.ln1_gain, lw.ln1_bias);
    std::vector<Tensor> head_outs;
    head_outs.reserve(cfg.num_heads);
    for (int h = 0; h < cfg.num_heads; ++h) {
      const HeadWeights& hw = lw.heads[h];
      Tensor q = add_rowwise(matmul(normed, hw.wq), hw.bq);
      Tensor k = add_rowwise(matmul(normed, hw.wk), hw.bk);
      Tensor v = add_rowwise(matmul(normed, hw.wv), hw.bv);
      Tensor a = softmax_rows(mul_scalar(matmul(q, transpose(k)), attn_scale));
      if (traced) trace->record_head(a, v, q, k);
      head_outs.push_back(matmul(a, v));
    }
    Tensor mha = add_rowwise(matmul(concat(head_outs, 1), lw.wo), lw.bo);
    seq = add(seq, mha);

    Tensor normed2 = layernorm(seq, lw.ln2_gain, lw.ln2_bias);
    Tensor hidden = gelu(add_rowwise(matmul(normed2, lw.mlp_w1), lw.mlp_b1));
    Tensor mlp = add_rowwise(matmul(hidden, lw.mlp_w2), lw.mlp_b2);
    seq = add(seq, mlp);
  }

  EncoderOutput out;
  out.tokens = layernorm(seq, model.ln_final_gain, model.ln_final_bias);
  out.pooled = slice_rows(out.tokens, 0, 1);
  out.trace = std::move(trace);
  return out;
}

namespace {

Tensor random_matrix(Rng& rng, int rows, int cols, double stddev) {
  std::vector<float> data(static_cast<std::size_t>(rows) * cols);
  for (float& v : data) v = static_cast<float>(rng.normal(0.0, stddev));
  return Tensor({rows, cols}, std::move(data));
}

}  // namespace

ViTModel init_random(const ViTConfig& config, std::uint64_t seed) {
  config.validate();
  ViTModel model;
  model.config = config;
  Rng rng(seed);

  const int d = config.embed_dim;
  const int patch_len = 3 * config.patch_dim * config.patch_dim;
  const int m = config.mlp_hidden_dim;
  const int s = config.seq_len();

  model.patch_proj_w = random_matrix(rng, patch_len, d, 1.0 / std::sqrt(patch_len));
  model.patch_proj_b = Tensor({d});
  model.cls_embed = random_matrix(rng, 1, d, 1.0 / std::sqrt(d));
  model.pos_embed = random_matrix(rng, s, d, 1.0 / std::sqrt(d));

  model.layers.resize(config.num_layers);
  for (LayerWeights& lw : model.layers) {
    lw.ln1_gain = Tensor::full({d}, 1.0f);
    lw.ln1_bias = Tensor({d});
    lw.wq = random_matrix(rng, d, d, 1.0 / std::sqrt(d));
    lw.bq = Tensor({d});
    lw.wk = random_matrix(rng, d, d, 1.0 / std::sqrt(d));
    lw.bk = Tensor({d});
    lw.wv = random_matrix(rng, d, d, 1.0 / std::sqrt(d));
    lw.bv = Tensor({d});
    lw.wo = random_matrix(rng, d, d, 1.0 / std::sqrt(d));
    lw.bo = Tensor({d});
    lw.ln2_gain = Tensor::full({d}, 1.0f);
    lw.ln2_bias = Tensor({d});
    lw.mlp_w1 = random_matrix(rng, d, m, 1.0 / std::sqrt(d));
    lw.mlp_b1 = Tensor({m});
    lw.mlp_w2 = random_matrix(rng, m, d, 1.0 / std::sqrt(m));
    lw.mlp_b2 = Tensor({d});
  }
  model.ln_final_gain = Tensor::full({d}, 1.0f);
  model.ln_final_bias = Tensor({d});

  model.finalize();
  return model;
}

// --- VITW weight file -----------------------------------------------------
//
// Layout, all little-endian:
//   "VITW" | u32 version (=1) | 7 x u32 config
//   (resolution, patch_dim, embed_dim, num_heads, num_layers,
//    mlp_hidden_dim, reserved=0)
//   | 3 x f32 norm mean | 3 x f32 norm std
//   | tensor blobs as raw f32 row-major, in order:
//     patch_proj_w, patch_proj_b, cls_embed, pos_embed,
//     per layer: ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo,
//                ln2_gain, ln2_bias, mlp_w1, mlp_b1, mlp_w2, mlp_b2,
//     ln_final_gain, ln_final_bias.

namespace {

constexpr char kMagic[4] = {'V', 'I', 'T', 'W'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const char* field) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError(std::string("weight file truncated at ") + field);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

float get_f32(std::istream& is, const char* field) {
  const std::uint32_t bits = get_u32(is, field);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void put_tensor(std::ostream& os, const Tensor& t) {
  for (float v : t.data()) put_f32(os, v);
}

Tensor get_tensor(std::istream& is, Shape shape, const char* field) {
  std::vector<float> data(shape_numel(shape));
  for (float& v : data) {
    v = get_f32(is, field);
    if (!std::isfinite(v)) {
      throw FormatError(std::string("weight file: non-finite value in ") + field);
    }
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

void save_weights(const ViTModel& model, const std::string& path) {
  model.config.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  const ViTConfig& c = model.config;
  put_u32(os, static_cast<std::uint32_t>(c.resolution));
  put_u32(os, static_cast<std::uint32_t>(c.patch_dim));
  put_u32(os, static_cast<std::uint32_t>(c.embed_dim));
  put_u32(os, static_cast<std::uint32_t>(c.num_heads));
  put_u32(os, static_cast<std::uint32_t>(c.num_layers));
  put_u32(os, static_cast<std::uint32_t>(c.mlp_hidden_dim));
  put_u32(os, 0);  // reserved
  for (float v : c.norm_mean) put_f32(os, v);
  for (float v : c.norm_std) put_f32(os, v);

  put_tensor(os, model.patch_proj_w);
  put_tensor(os, model.patch_proj_b);
  put_tensor(os, model.cls_embed);
  put_tensor(os, model.pos_embed);
  for (const LayerWeights& lw : model.layers) {
    put_tensor(os, lw.ln1_gain);
    put_tensor(os, lw.ln1_bias);
    put_tensor(os, lw.wq);
    put_tensor(os, lw.bq);
    put_tensor(os, lw.wk);
    put_tensor(os, lw.bk);
    put_tensor(os, lw.wv);
    put_tensor(os, lw.bv);
    put_tensor(os, lw.wo);
    put_tensor(os, lw.bo);
    put_tensor(os, lw.ln2_gain);
    put_tensor(os, lw.ln2_bias);
    put_tensor(os, lw.mlp_w1);
    put_tensor(os, lw.mlp_b1);
    put_tensor(os, lw.mlp_w2);
    put_tensor(os, lw.mlp_b2);
  }
  put_tensor(os, model.ln_final_gain);
  put_tensor(os, model.ln_final_bias);
  if (!os) throw IoError("write failed for " + path);
}

ViTModel load_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);

  char magic[4];
  if (!is.read(magic, 4)) throw FormatError("weight file truncated at magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("weight file: bad magic, expected VITW");
  }
  const std::uint32_t version = get_u32(is, "version");
  if (version != kVersion) {
    throw FormatError("weight file: unsupported version " + std::to_string(version));
  }

  ViTConfig c;
  c.resolution = static_cast<int>(get_u32(is, "resolution"));
  c.patch_dim = static_cast<int>(get_u32(is, "patch_dim"));
  c.embed_dim = static_cast<int>(get_u32(is, "embed_dim"));
  c.num_heads = static_cast<int>(get_u32(is, "num_heads"));
  c.num_layers = static_cast<int>(get_u32(is, "num_layers"));
  c.mlp_hidden_dim = static_cast<int>(get_u32(is, "mlp_hidden_dim"));
  (void)get_u32(is, "reserved");
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("weight file header: ") + e.what());
  }
  for (float& v : c.norm_mean) v = get_f32(is, "norm_mean");
  for (float& v : c.norm_std) v = get_f32(is, "norm_std");

  ViTModel model;
  model.config = c;
  const int d = c.embed_dim;
  const int patch_len = 3 * c.patch_dim * c.patch_dim;
  const int m = c.mlp_hidden_dim;
  const int s = c.seq_len();

  model.patch_proj_w = get_tensor(is, {patch_len, d}, "patch_proj_w");
  model.patch_proj_b = get_tensor(is, {d}, "patch_proj_b");
  model.cls_embed = get_tensor(is, {1, d}, "cls_embed");
  model.pos_embed = get_tensor(is, {s, d}, "pos_embed");
  model.layers.resize(c.num_layers);
  for (int l = 0; l < c.num_layers; ++l) {
    LayerWeights& lw = model.layers[l];
    lw.ln1_gain = get_tensor(is, {d}, "ln1_gain");
    lw.ln1_bias = get_tensor(is, {d}, "ln1_bias");
    lw.wq = get_tensor(is, {d, d}, "wq");
    lw.bq = get_tensor(is, {d}, "bq");
    lw.wk = get_tensor(is, {d, d}, "wk");
    lw.bk = get_tensor(is, {d}, "bk");
    lw.wv = get_tensor(is, {d, d}, "wv");
    lw.bv = get_tensor(is, {d}, "bv");
    lw.wo = get_tensor(is, {d, d}, "wo");
    lw.bo = get_tensor(is, {d}, "bo");
    lw.ln2_gain = get_tensor(is, {d}, "ln2_gain");
    lw.ln2_bias = get_tensor(is, {d}, "ln2_bias");
    lw.mlp_w1 = get_tensor(is, {d, m}, "mlp_w1");
    lw.mlp_b1 = get_tensor(is, {m}, "mlp_b1");
    lw.mlp_w2 = get_tensor(is, {m, d}, "mlp_w2");
    lw.mlp_b2 = get_tensor(is, {d}, "mlp_b2");
  }
  model.ln_final_gain = get_tensor(is, {d}, "ln_final_gain");
  model.ln_final_bias = get_tensor(is, {d}, "ln_final_bias");

  // The blob section must end exactly here.
  char extra;
  if (is.read(&extra, 1)) {
    throw FormatError("weight file: trailing bytes after declared tensors");
  }

  model.finalize();
  return model;
}

}  // namespace vip
