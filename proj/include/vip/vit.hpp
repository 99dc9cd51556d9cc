#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "vip/tensor.hpp"

namespace vip {

struct ViTConfig {
  int resolution = 64;  // square input, pixels
  int patch_dim = 16;
  int embed_dim = 64;
  int num_heads = 4;
  int num_layers = 4;
  int mlp_hidden_dim = 128;
  std::array<float, 3> norm_mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> norm_std{0.5f, 0.5f, 0.5f};

  int head_dim() const { return embed_dim / num_heads; }
  int grid() const { return resolution / patch_dim; }
  int num_patches() const {
    const int area = resolution * resolution;
    const int p2 = patch_dim * patch_dim;
    return static_cast<int>((area + p2 - 1) / p2);  // ceil(H*W / patch^2)
  }
  int seq_len() const { return num_patches() + 1; }  // CLS prepended

  // Throws ContractError naming the offending field.
  void validate() const;
};

// Per-head projection slices derived from the stored full matrices.
struct HeadWeights {
  Tensor wq, bq;  // [D, d_k], [d_k]
  Tensor wk, bk;
  Tensor wv, bv;
};

struct LayerWeights {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv;  // [D, D], [D]
  Tensor wo, bo;                  // [D, D], [D]
  Tensor ln2_gain, ln2_bias;
  Tensor mlp_w1, mlp_b1;  // [D, M], [M]
  Tensor mlp_w2, mlp_b2;  // [M, D], [D]
  std::vector<HeadWeights> heads;  // derived, not serialized
};

// Immutable after construction; safe to share read-only across attacks.
struct ViTModel {
  ViTConfig config;
  Tensor patch_proj_w;  // [3*p*p, D]
  Tensor patch_proj_b;  // [D]
  Tensor cls_embed;     // [1, D]
  Tensor pos_embed;     // [S, D]
  std::vector<LayerWeights> layers;
  Tensor ln_final_gain, ln_final_bias;

  // Rebuilds per-head slices; called by init/load and after manual edits.
  void finalize();
};

// Per-layer, per-head attention and value matrices captured during forward.
// Attention accesses are counted so loss modes that must not touch A can be
// audited.
class MhaActivations {
 public:
  MhaActivations(int seq_len, int num_heads) : seq_len_(seq_len), num_heads_(num_heads) {}

  int traced_layers() const { return static_cast<int>(attn_.size()); }
  int seq_len() const { return seq_len_; }
  int num_heads() const { return num_heads_; }

  // layer and head are 0-based.
  const Tensor& attention(int layer, int head) const;
  const Tensor& value(int layer, int head) const;
  const Tensor& query(int layer, int head) const;  // graph internals, for audits
  const Tensor& key(int layer, int head) const;

  std::int64_t attention_reads() const { return attention_reads_; }

  void push_layer();
  void record_head(Tensor a, Tensor v, Tensor q, Tensor k);

 private:
  void check(int layer, int head) const;

  int seq_len_;
  int num_heads_;
  std::vector<std::vector<Tensor>> attn_, value_, query_, key_;
  mutable std::int64_t attention_reads_ = 0;
};

struct EncoderOutput {
  Tensor tokens;  // [S, D] after the final layernorm
  Tensor pooled;  // [1, D] CLS row
  std::shared_ptr<MhaActivations> trace;
};

// Runs the encoder on a [3, H, W] image tensor in [0, 255] pixel units.
// Attention and value matrices of layers 0..trace_up_to-1 are recorded and
// stay connected to the autodiff graph.
EncoderOutput forward(const ViTModel& model, const Tensor& image, int trace_up_to);

ViTModel init_random(const ViTConfig& config, std::uint64_t seed);

void save_weights(const ViTModel& model, const std::string& path);
ViTModel load_weights(const std::string& path);

}  // namespace vip
